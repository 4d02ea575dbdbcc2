//! Linear matrix inequalities: a small affine-expression builder and a
//! semidefinite backend.
//!
//! Problems are posed over scalar, symmetric and full matrix decision
//! variables. Every constraint is a symmetric affine matrix expression
//! `F(x) = F₀ + Σ xᵢ Fᵢ` required to satisfy `F(x) ⪰ m·I` or `F(x) ⪯ -m·I`
//! for a strictness margin `m ≥ 0`. The backend is the Clarabel interior
//! point solver on the positive-semidefinite triangle cone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance used to decide whether an expression is symmetric.
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalarVar(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    Symmetric,
    Full,
}

/// Handle to a matrix decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatrixVar {
    offset: usize,
    rows: usize,
    cols: usize,
    kind: MatrixKind,
}

impl MatrixVar {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn scalar_count(&self) -> usize {
        match self.kind {
            MatrixKind::Symmetric => self.rows * (self.rows + 1) / 2,
            MatrixKind::Full => self.rows * self.cols,
        }
    }
}

/// Matrix-valued affine function of the decision vector.
#[derive(Clone, Debug)]
pub struct Affine {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl Affine {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// `coeff · v` for a scalar variable `v`.
    pub fn scalar(v: ScalarVar, coeff: DMatrix<f64>) -> Self {
        let zero = DMatrix::zeros(coeff.nrows(), coeff.ncols());
        let mut terms = BTreeMap::new();
        terms.insert(v.0, coeff);
        Self { constant: zero, terms }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, v)| (*k, f(v))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `m · self`
    pub fn lmul(&self, m: &DMatrix<f64>) -> Self {
        self.map(|t| m * t)
    }

    /// `self · m`
    pub fn rmul(&self, m: &DMatrix<f64>) -> Self {
        self.map(|t| t * m)
    }

    /// `self + selfᵀ`
    pub fn sym(&self) -> Self {
        self.add(&self.transpose())
    }

    pub fn add(&self, other: &Affine) -> Self {
        assert_eq!(self.shape(), other.shape(), "affine shapes differ");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, v) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|t| *t += v)
                .or_insert_with(|| v.clone());
        }
        out
    }

    pub fn sub(&self, other: &Affine) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn add_constant(&self, m: &DMatrix<f64>) -> Self {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    /// Product of two expressions; at most one factor may depend on the
    /// decision variables.
    pub fn mul(&self, other: &Affine) -> Result<Self> {
        match (self.is_constant(), other.is_constant()) {
            (_, true) => Ok(self.rmul(&other.constant)),
            (true, false) => Ok(other.lmul(&self.constant)),
            (false, false) => Err(Error::Builder(
                "product of two decision-dependent expressions is not affine".into(),
            )),
        }
    }

    /// Block matrix of expressions.
    pub fn block(rows: &[Vec<Affine>]) -> Result<Self> {
        let constants: Vec<Vec<&DMatrix<f64>>> =
            rows.iter().map(|r| r.iter().map(|a| &a.constant).collect()).collect();
        let constant = linalg::block(&constants)?;
        let mut keys: Vec<usize> = rows
            .iter()
            .flat_map(|r| r.iter().flat_map(|a| a.terms.keys().copied()))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let mut terms = BTreeMap::new();
        for k in keys {
            let owned: Vec<Vec<DMatrix<f64>>> = rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|a| {
                            a.terms
                                .get(&k)
                                .cloned()
                                .unwrap_or_else(|| DMatrix::zeros(a.constant.nrows(), a.constant.ncols()))
                        })
                        .collect()
                })
                .collect();
            let refs: Vec<Vec<&DMatrix<f64>>> = owned.iter().map(|r| r.iter().collect()).collect();
            terms.insert(k, linalg::block(&refs)?);
        }
        Ok(Self { constant, terms })
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, v) in &self.terms {
            out += v * x[*k];
        }
        out
    }

    fn is_symmetric(&self) -> bool {
        let check = |m: &DMatrix<f64>| {
            let scale = 1.0 + linalg::max_abs(m);
            (m - m.transpose()).iter().all(|v| v.abs() <= SYMMETRY_TOL * scale)
        };
        self.constant.is_square() && check(&self.constant) && self.terms.values().all(check)
    }
}

impl From<DMatrix<f64>> for Affine {
    fn from(m: DMatrix<f64>) -> Self {
        Affine::constant(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `F(x) ⪰ margin·I`
    Psd,
    /// `F(x) ⪯ -margin·I`
    Nsd,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub expr: Affine,
    pub sense: Sense,
    pub margin: f64,
}

impl Constraint {
    /// Slack matrix that must be positive semidefinite.
    fn slack(&self, x: &[f64]) -> DMatrix<f64> {
        let f = self.expr.eval(x);
        let n = f.nrows();
        match self.sense {
            Sense::Psd => f - DMatrix::identity(n, n) * self.margin,
            Sense::Nsd => -f - DMatrix::identity(n, n) * self.margin,
        }
    }

    /// Smallest eigenvalue of the signed expression, ignoring the
    /// strictness margin.
    pub fn raw_margin(&self, x: &[f64]) -> f64 {
        let f = self.expr.eval(x);
        match self.sense {
            Sense::Psd => linalg::min_eigenvalue(&f),
            Sense::Nsd => linalg::min_eigenvalue(&(-f)),
        }
    }
}

#[derive(Clone, Debug)]
struct VarInfo {
    name: String,
    offset: usize,
    count: usize,
}

#[derive(Clone, Debug, Default)]
pub struct LmiProblem {
    vars: Vec<VarInfo>,
    n_scalars: usize,
    constraints: Vec<Constraint>,
    objective: BTreeMap<usize, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmiStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl LmiStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, LmiStatus::Optimal | LmiStatus::Feasible)
    }
}

#[derive(Clone, Debug)]
pub struct LmiSolution {
    pub status: LmiStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    /// Most negative eigenvalue over all constraint slacks (strictness
    /// margins included).
    pub margin: f64,
    pub iterations: u32,
    pub wall_time: f64,
    pub backend_status: String,
}

impl LmiSolution {
    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.values[v.0]
    }

    pub fn matrix(&self, v: &MatrixVar) -> DMatrix<f64> {
        matrix_value(v, &self.values)
    }
}

fn matrix_value(v: &MatrixVar, x: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(v.rows, v.cols);
    let mut k = v.offset;
    match v.kind {
        MatrixKind::Symmetric => {
            for j in 0..v.rows {
                for i in 0..=j {
                    m[(i, j)] = x[k];
                    m[(j, i)] = x[k];
                    k += 1;
                }
            }
        }
        MatrixKind::Full => {
            for j in 0..v.cols {
                for i in 0..v.rows {
                    m[(i, j)] = x[k];
                    k += 1;
                }
            }
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    /// Gap and feasibility tolerance handed to the interior point method.
    pub tol: f64,
    pub max_iter: u32,
    /// Margin below which an otherwise inconclusive solve is rejected.
    pub report_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 300, report_tol: 1e-7 }
    }
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn alloc(&mut self, name: &str, count: usize) -> usize {
        let offset = self.n_scalars;
        self.vars.push(VarInfo { name: name.to_string(), offset, count });
        self.n_scalars += count;
        offset
    }

    pub fn scalar(&mut self, name: &str) -> ScalarVar {
        ScalarVar(self.alloc(name, 1))
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> MatrixVar {
        let mut v = MatrixVar { offset: 0, rows: n, cols: n, kind: MatrixKind::Symmetric };
        v.offset = self.alloc(name, v.scalar_count());
        v
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> MatrixVar {
        let mut v = MatrixVar { offset: 0, rows, cols, kind: MatrixKind::Full };
        v.offset = self.alloc(name, v.scalar_count());
        v
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn var(&self, v: ScalarVar) -> Affine {
        Affine::scalar(v, DMatrix::from_element(1, 1, 1.0))
    }

    /// Expression for a matrix variable.
    pub fn mat(&self, v: &MatrixVar) -> Affine {
        let mut terms = BTreeMap::new();
        let mut k = v.offset;
        match v.kind {
            MatrixKind::Symmetric => {
                for j in 0..v.rows {
                    for i in 0..=j {
                        let mut e = DMatrix::zeros(v.rows, v.cols);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
            MatrixKind::Full => {
                for j in 0..v.cols {
                    for i in 0..v.rows {
                        let mut e = DMatrix::zeros(v.rows, v.cols);
                        e[(i, j)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
        }
        Affine { constant: DMatrix::zeros(v.rows, v.cols), terms }
    }

    /// `v · I_n`
    pub fn scaled_identity(&self, v: ScalarVar, n: usize) -> Affine {
        Affine::scalar(v, DMatrix::identity(n, n))
    }

    fn push(&mut self, name: &str, expr: Affine, sense: Sense, margin: f64) -> Result<()> {
        if !(margin >= 0.0) {
            return Err(Error::Builder(format!("constraint `{name}` has negative margin {margin}")));
        }
        if !expr.is_symmetric() {
            return Err(Error::Builder(format!("constraint `{name}` is not symmetric")));
        }
        if expr.terms.keys().any(|k| *k >= self.n_scalars) {
            return Err(Error::Builder(format!("constraint `{name}` references an unknown variable")));
        }
        let expr = Affine {
            constant: linalg::symmetrize(&expr.constant),
            terms: expr.terms.iter().map(|(k, v)| (*k, linalg::symmetrize(v))).collect(),
        };
        self.constraints.push(Constraint { name: name.to_string(), expr, sense, margin });
        Ok(())
    }

    /// `expr ⪰ margin·I`
    pub fn psd(&mut self, name: &str, expr: Affine, margin: f64) -> Result<()> {
        self.push(name, expr, Sense::Psd, margin)
    }

    /// `expr ⪯ -margin·I`
    pub fn nsd(&mut self, name: &str, expr: Affine, margin: f64) -> Result<()> {
        self.push(name, expr, Sense::Nsd, margin)
    }

    pub fn minimize(&mut self, v: ScalarVar) {
        self.objective.clear();
        self.objective.insert(v.0, 1.0);
    }

    /// Linear objective `Σ cₖ xₖ` given per scalar variable.
    pub fn minimize_linear(&mut self, coeffs: &[(ScalarVar, f64)]) {
        self.objective.clear();
        for (v, c) in coeffs {
            *self.objective.entry(v.0).or_insert(0.0) += c;
        }
    }

    /// Objective `Σ cᵢⱼ Vᵢⱼ = trace(Cᵀ V)` on a matrix variable.
    pub fn minimize_trace(&mut self, v: &MatrixVar, weight: f64) {
        self.objective.clear();
        let e = self.mat(v);
        for (k, basis) in &e.terms {
            let tr: f64 = (0..basis.nrows().min(basis.ncols())).map(|i| basis[(i, i)]).sum();
            if tr != 0.0 {
                self.objective.insert(*k, weight * tr);
            }
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|(k, c)| c * x[*k]).sum()
    }

    /// Largest absolute constant entry over all constraints.
    pub fn scale(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| linalg::max_abs(&c.expr.constant))
            .fold(0.0, f64::max)
    }

    /// Strictness margin tied to the size of the constant data.
    pub fn default_margin(&self) -> f64 {
        1e-6 * self.scale().max(1.0)
    }

    /// Minimum slack eigenvalue over all constraints at `x`.
    pub fn replay(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| linalg::min_eigenvalue(&c.slack(x)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, settings: &SolverSettings) -> Result<LmiSolution> {
        let start = Instant::now();
        let n = self.n_scalars;
        if n == 0 {
            let values = Vec::new();
            let margin = self.replay(&values);
            let status = if margin >= -settings.report_tol { LmiStatus::Optimal } else { LmiStatus::Infeasible };
            return Ok(LmiSolution {
                status,
                values,
                objective: 0.0,
                margin,
                iterations: 0,
                wall_time: start.elapsed().as_secs_f64(),
                backend_status: "trivial".into(),
            });
        }

        // Rows of A are grouped per constraint; columns per scalar variable.
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for c in &self.constraints {
            let dim = c.expr.constant.nrows();
            let sign = match c.sense {
                Sense::Psd => 1.0,
                Sense::Nsd => -1.0,
            };
            let row0 = b.len();
            let f0 = &c.expr.constant * sign - DMatrix::identity(dim, dim) * c.margin;
            b.extend(svec(&f0));
            for (k, fk) in &c.expr.terms {
                for (r, v) in svec(fk).into_iter().enumerate() {
                    if v != 0.0 {
                        columns[*k].push((row0 + r, -sign * v));
                    }
                }
            }
            if dim == 1 {
                cones.push(SupportedConeT::NonnegativeConeT(1));
            } else {
                cones.push(SupportedConeT::PSDTriangleConeT(dim));
            }
        }
        let m = b.len();
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &mut columns {
            col.sort_by_key(|(r, _)| *r);
            for (r, v) in col.iter() {
                rowval.push(*r);
                nzval.push(*v);
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for (k, c) in &self.objective {
            q[*k] = *c;
        }

        let solver_settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_gap_abs(settings.tol)
            .tol_gap_rel(settings.tol)
            .tol_feas(settings.tol)
            .build()
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, solver_settings)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let solved = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| solver.solve()));
        if let Err(payload) = solved {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            return Ok(LmiSolution {
                status: LmiStatus::NumericalFailure,
                values: vec![0.0; n],
                objective: f64::NAN,
                margin: f64::NEG_INFINITY,
                iterations: 0,
                wall_time: start.elapsed().as_secs_f64(),
                backend_status: format!("backend panic: {msg}"),
            });
        }
        let sol = &solver.solution;
        let values = sol.x.clone();
        let margin = if values.iter().all(|v| v.is_finite()) {
            self.replay(&values)
        } else {
            f64::NEG_INFINITY
        };
        let verified = margin >= -settings.report_tol;
        let status = match sol.status {
            SolverStatus::Solved if verified => LmiStatus::Optimal,
            SolverStatus::Solved | SolverStatus::AlmostSolved | SolverStatus::MaxIterations
            | SolverStatus::InsufficientProgress | SolverStatus::NumericalError
            | SolverStatus::MaxTime => {
                if verified {
                    LmiStatus::Feasible
                } else {
                    LmiStatus::NumericalFailure
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => LmiStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                return Err(Error::Unbounded)
            }
            other => return Err(Error::Solver(format!("{other:?}"))),
        };
        Ok(LmiSolution {
            status,
            objective: self.objective_value(&values),
            values,
            margin,
            iterations: sol.iterations,
            wall_time: start.elapsed().as_secs_f64(),
            backend_status: format!("{:?}", sol.status),
        })
    }

    /// Writes the problem in SDPA sparse format (`.dat-s`).
    ///
    /// The SDPA primal reads `min cᵀx` subject to `Σ xᵢ Fᵢ - F₀ ⪰ 0`; each
    /// constraint becomes one block.
    pub fn to_sdpa(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "* lfrgp LMI problem: {} variables, {} blocks", self.n_scalars, self.constraints.len());
        for v in &self.vars {
            let _ = writeln!(out, "* var {} at {}..{}", v.name, v.offset, v.offset + v.count);
        }
        let _ = writeln!(out, "{}", self.n_scalars);
        let _ = writeln!(out, "{}", self.constraints.len());
        let sizes: Vec<String> =
            self.constraints.iter().map(|c| c.expr.constant.nrows().to_string()).collect();
        let _ = writeln!(out, "{}", sizes.join(" "));
        let c: Vec<String> = (0..self.n_scalars)
            .map(|k| format!("{:e}", self.objective.get(&k).copied().unwrap_or(0.0)))
            .collect();
        let _ = writeln!(out, "{}", c.join(" "));
        for (blk, con) in self.constraints.iter().enumerate() {
            let dim = con.expr.constant.nrows();
            let sign = match con.sense {
                Sense::Psd => 1.0,
                Sense::Nsd => -1.0,
            };
            let f0 = -(&con.expr.constant * sign) + DMatrix::identity(dim, dim) * con.margin;
            write_sdpa_matrix(&mut out, 0, blk + 1, &f0);
            for (k, fk) in &con.expr.terms {
                write_sdpa_matrix(&mut out, k + 1, blk + 1, &(fk * sign));
            }
        }
        out
    }
}

fn write_sdpa_matrix(out: &mut String, mat: usize, blk: usize, m: &DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..=j {
            let v = m[(i, j)];
            if v != 0.0 {
                let _ = writeln!(out, "{mat} {blk} {} {} {v:e}", i + 1, j + 1);
            }
        }
    }
}

/// Upper triangle, column-major, off-diagonal entries scaled by √2.
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(m[(i, j)] * std::f64::consts::SQRT_2);
            }
        }
    }
    out
}

/// Smallest parameter in `[lo, hi]` at which a monotone family of LMI
/// problems is feasible, to relative precision `rel_tol`.
pub fn bisect_feasibility<F>(family: F, lo: f64, hi: f64, rel_tol: f64, settings: &SolverSettings) -> Result<f64>
where
    F: Fn(f64) -> Result<LmiProblem>,
{
    if !(lo <= hi) || !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("bisection interval [{lo}, {hi}] with rel_tol {rel_tol}")));
    }
    let feasible = |g: f64| -> Result<bool> { Ok(family(g)?.solve(settings)?.status.is_feasible()) };
    if !feasible(hi)? {
        return Err(Error::NoBracket(format!("family infeasible at upper end {hi}")));
    }
    if feasible(lo)? {
        return Ok(lo);
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > rel_tol * hi.abs().max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    #[test]
    fn minimizes_scalar_bound() {
        // min γ s.t. diag(1 - γ) ⪯ 0
        let mut p = LmiProblem::new();
        let g = p.scalar("gamma");
        let expr = Affine::identity(1).sub(&p.scaled_identity(g, 1));
        p.nsd("bound", expr, 0.0).unwrap();
        p.minimize(g);
        let sol = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(sol.status, LmiStatus::Optimal);
        assert!((sol.scalar(g) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lyapunov_feasible_for_stable_matrix() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let mut p = LmiProblem::new();
        let x = p.symmetric("X", 3);
        let xe = p.mat(&x);
        p.psd("X>0", xe.clone(), 1e-6).unwrap();
        p.nsd("lyap", xe.rmul(&a).sym(), 1e-6).unwrap();
        let sol = p.solve(&SolverSettings::default()).unwrap();
        assert!(sol.status.is_feasible());
        let xv = sol.matrix(&x);
        assert!(linalg::min_eigenvalue(&xv) > 0.0);
        assert!((sol.margin - p.replay(&sol.values)).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_infeasible_for_unstable_matrix() {
        let a = diag(&[1.0, -2.0]);
        let mut p = LmiProblem::new();
        let x = p.symmetric("X", 2);
        let xe = p.mat(&x);
        p.psd("X>0", xe.clone(), 1e-3).unwrap();
        p.nsd("lyap", xe.rmul(&a).sym(), 1e-3).unwrap();
        let sol = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(sol.status, LmiStatus::Infeasible);
    }

    #[test]
    fn rejects_products_of_variables_and_asymmetry() {
        let mut p = LmiProblem::new();
        let x = p.full("X", 2, 2);
        let y = p.symmetric("Y", 2);
        assert!(p.mat(&x).mul(&p.mat(&y)).is_err());
        assert!(p.nsd("asym", p.mat(&x), 0.0).is_err());
        assert!(p.psd("neg margin", p.mat(&y), -1.0).is_err());
    }

    #[test]
    fn full_and_symmetric_values_roundtrip() {
        let mut p = LmiProblem::new();
        let f = p.full("F", 2, 3);
        let s = p.symmetric("S", 2);
        let x: Vec<f64> = (0..p.n_scalars()).map(|i| i as f64).collect();
        let fv = p.mat(&f).eval(&x);
        assert_eq!(fv, matrix_value(&f, &x));
        let sv = matrix_value(&s, &x);
        assert_eq!(sv, sv.transpose());
    }

    #[test]
    fn bisection_on_constant_family_returns_lo() {
        let family = |_g: f64| -> Result<LmiProblem> {
            let mut p = LmiProblem::new();
            let x = p.symmetric("X", 1);
            p.psd("X>0", p.mat(&x), 0.0)?;
            Ok(p)
        };
        let g = bisect_feasibility(family, 0.5, 4.0, 1e-6, &SolverSettings::default()).unwrap();
        assert_eq!(g, 0.5);
    }

    #[test]
    fn bisection_without_bracket_errors() {
        let family = |g: f64| -> Result<LmiProblem> {
            let mut p = LmiProblem::new();
            let x = p.symmetric("X", 1);
            // X ⪰ 1 and X ⪯ g - 10: infeasible for g < 11
            p.psd("lo", p.mat(&x), 1.0)?;
            p.nsd("hi", p.mat(&x).add_constant(&DMatrix::from_element(1, 1, 10.0 - g)), 0.0)?;
            Ok(p)
        };
        assert!(matches!(
            bisect_feasibility(family, 0.0, 5.0, 1e-3, &SolverSettings::default()),
            Err(Error::NoBracket(_))
        ));
    }

    #[test]
    fn feasibility_status_is_scale_invariant() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        for scale in [1e-2, 1.0, 1e2] {
            let mut p = LmiProblem::new();
            let x = p.symmetric("X", 2);
            let xe = p.mat(&x);
            p.psd("X>0", xe.add_constant(&(-DMatrix::identity(2, 2))).scale(scale), 0.0).unwrap();
            p.nsd("lyap", xe.rmul(&a).sym().scale(scale), 0.0).unwrap();
            let sol = p.solve(&SolverSettings::default()).unwrap();
            assert!(sol.status.is_feasible(), "scale {scale}");
        }
    }

    #[test]
    fn sdpa_dump_has_header_and_entries() {
        let mut p = LmiProblem::new();
        let g = p.scalar("gamma");
        p.nsd("b", Affine::identity(2).sub(&p.scaled_identity(g, 2)), 0.0).unwrap();
        p.minimize(g);
        let text = p.to_sdpa();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('*')).collect();
        assert_eq!(lines[0], "1");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert!(lines.iter().any(|l| l.starts_with("1 1 1 1")));
    }
}
