//! Continuous-time state-space systems with named channel partitions.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::lmi::{self, Affine, LmiProblem, SolverSettings};

/// A named group of consecutive inputs or outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub width: usize,
}

impl Channel {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        Self { name: name.into(), width }
    }
}

/// `ẋ = A x + B u`, `y = C x + D u` with partitioned inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    inputs: Vec<Channel>,
    outputs: Vec<Channel>,
}

fn check_partition(side: &str, chans: &[Channel], total: usize) -> Result<()> {
    let sum: usize = chans.iter().map(|c| c.width).sum();
    if sum != total {
        return Err(Error::Dimension(format!("{side} partition covers {sum} signals, matrices have {total}")));
    }
    for (i, c) in chans.iter().enumerate() {
        if chans[..i].iter().any(|o| o.name == c.name) {
            return Err(Error::DuplicateChannel(c.name.clone()));
        }
    }
    Ok(())
}

fn range_of(chans: &[Channel], name: &str) -> Result<std::ops::Range<usize>> {
    let mut start = 0;
    for c in chans {
        if c.name == name {
            return Ok(start..start + c.width);
        }
        start += c.width;
    }
    Err(Error::UnknownChannel(name.to_string()))
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        inputs: Vec<Channel>,
        outputs: Vec<Channel>,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows and C has {} columns for {n} states",
                b.nrows(),
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        check_partition("input", &inputs, b.ncols())?;
        check_partition("output", &outputs, c.nrows())?;
        Ok(Self { a, b, c, d, inputs, outputs })
    }

    /// System with a single input channel `u` and output channel `y`.
    pub fn from_matrices(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let (m, p) = (b.ncols(), c.nrows());
        Self::new(a, b, c, d, vec![Channel::new("u", m)], vec![Channel::new("y", p)])
    }

    pub fn gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self::from_matrices(DMatrix::zeros(0, 0), DMatrix::zeros(0, m), DMatrix::zeros(p, 0), d)
            .expect("static gain dimensions are consistent")
    }

    pub fn identity(n: usize) -> Self {
        Self::gain(DMatrix::identity(n, n))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn inputs(&self) -> &[Channel] {
        &self.inputs
    }
    pub fn outputs(&self) -> &[Channel] {
        &self.outputs
    }
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn input_range(&self, name: &str) -> Result<std::ops::Range<usize>> {
        range_of(&self.inputs, name)
    }

    pub fn output_range(&self, name: &str) -> Result<std::ops::Range<usize>> {
        range_of(&self.outputs, name)
    }

    pub fn has_input(&self, name: &str) -> bool {
        self.inputs.iter().any(|c| c.name == name)
    }

    pub fn has_output(&self, name: &str) -> bool {
        self.outputs.iter().any(|c| c.name == name)
    }

    pub fn input_width(&self, name: &str) -> Result<usize> {
        Ok(self.input_range(name)?.len())
    }

    pub fn output_width(&self, name: &str) -> Result<usize> {
        Ok(self.output_range(name)?.len())
    }

    /// `B` columns of one input channel.
    pub fn b_of(&self, input: &str) -> Result<DMatrix<f64>> {
        let r = self.input_range(input)?;
        Ok(self.b.columns(r.start, r.len()).into_owned())
    }

    /// `C` rows of one output channel.
    pub fn c_of(&self, output: &str) -> Result<DMatrix<f64>> {
        let r = self.output_range(output)?;
        Ok(self.c.rows(r.start, r.len()).into_owned())
    }

    /// `D` block from one input channel to one output channel.
    pub fn d_of(&self, output: &str, input: &str) -> Result<DMatrix<f64>> {
        let ro = self.output_range(output)?;
        let ri = self.input_range(input)?;
        Ok(self.d.view((ro.start, ri.start), (ro.len(), ri.len())).into_owned())
    }

    /// Subsystem restricted to (and reordered by) the named channels.
    pub fn select(&self, inputs: &[&str], outputs: &[&str]) -> Result<Self> {
        let in_idx: Vec<usize> = inputs
            .iter()
            .map(|n| self.input_range(n))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let out_idx: Vec<usize> = outputs
            .iter()
            .map(|n| self.output_range(n))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let b = self.b.select_columns(in_idx.iter());
        let c = self.c.select_rows(out_idx.iter());
        let d = self.d.select_rows(out_idx.iter()).select_columns(in_idx.iter());
        let ins = inputs.iter().map(|n| Channel::new(*n, self.input_width(n).unwrap())).collect();
        let outs = outputs.iter().map(|n| Channel::new(*n, self.output_width(n).unwrap())).collect();
        Self::new(self.a.clone(), b, c, d, ins, outs)
    }

    pub fn with_partitions(mut self, inputs: Vec<Channel>, outputs: Vec<Channel>) -> Result<Self> {
        check_partition("input", &inputs, self.b.ncols())?;
        check_partition("output", &outputs, self.c.nrows())?;
        self.inputs = inputs;
        self.outputs = outputs;
        Ok(self)
    }

    pub fn rename_input(mut self, from: &str, to: &str) -> Result<Self> {
        let idx = self.inputs.iter().position(|c| c.name == from).ok_or_else(|| Error::UnknownChannel(from.into()))?;
        self.inputs[idx].name = to.to_string();
        check_partition("input", &self.inputs, self.b.ncols())?;
        Ok(self)
    }

    pub fn rename_output(mut self, from: &str, to: &str) -> Result<Self> {
        let idx = self.outputs.iter().position(|c| c.name == from).ok_or_else(|| Error::UnknownChannel(from.into()))?;
        self.outputs[idx].name = to.to_string();
        check_partition("output", &self.outputs, self.c.nrows())?;
        Ok(self)
    }

    /// State coordinate change `x = T x̃`.
    pub fn similarity(&self, t: &DMatrix<f64>) -> Result<Self> {
        let ti = t.clone().try_inverse().ok_or_else(|| Error::Dimension("singular state transformation".into()))?;
        Self::new(&ti * &self.a * t, &ti * &self.b, &self.c * t, self.d.clone(), self.inputs.clone(), self.outputs.clone())
    }

    /// Spectral abscissa and Hurwitz verdict.
    pub fn stability(&self) -> (bool, f64) {
        let abscissa = spectral_abscissa(&self.a);
        (abscissa < 0.0, abscissa)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.stability().0
    }

    pub fn poles(&self) -> Vec<Complex<f64>> {
        if self.n_states() == 0 {
            return Vec::new();
        }
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    /// `C (jωI - A)⁻¹ B + D`
    pub fn freq_response(&self, omega: f64) -> Result<DMatrix<Complex<f64>>> {
        let n = self.n_states();
        let d = self.d.map(|v| Complex::new(v, 0.0));
        if n == 0 {
            return Ok(d);
        }
        let mut res = self.a.map(|v| Complex::new(-v, 0.0));
        for i in 0..n {
            res[(i, i)] += Complex::new(0.0, omega);
        }
        let lu = res.lu();
        let b = self.b.map(|v| Complex::new(v, 0.0));
        let x = lu.solve(&b).ok_or(Error::SingularResolvent(omega))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularResolvent(omega));
        }
        Ok(self.c.map(|v| Complex::new(v, 0.0)) * x + d)
    }

    /// Largest singular value of the frequency response.
    pub fn gain_at(&self, omega: f64) -> Result<f64> {
        let g = self.freq_response(omega)?;
        if g.nrows() == 0 || g.ncols() == 0 {
            return Ok(0.0);
        }
        Ok(g.singular_values().max())
    }

    /// Controllability and observability Gramians of a stable system.
    pub fn gramians(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (stable, abscissa) = self.stability();
        if !stable {
            return Err(Error::Unstable(abscissa));
        }
        let wc = lyapunov(&self.a, &(&self.b * self.b.transpose()))?;
        let wo = lyapunov(&self.a.transpose(), &(self.c.transpose() * &self.c))?;
        Ok((wc, wo))
    }

    /// Balanced realization of a stable system. Gramians are regularized by
    /// a small multiple of their norm so uncontrollable or unobservable
    /// states keep a bounded transformation.
    pub fn balanced(&self) -> Result<Self> {
        self.similarity(&self.balancing_transform()?)
    }

    /// State transformation `x = T x̃` producing the balanced realization.
    pub fn balancing_transform(&self) -> Result<DMatrix<f64>> {
        let n = self.n_states();
        if n == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let (wc, wo) = self.gramians()?;
        let reg = |w: &DMatrix<f64>| {
            let s = linalg::spectral_norm(w).max(f64::MIN_POSITIVE);
            linalg::symmetrize(w) + DMatrix::identity(n, n) * (1e-10 * s)
        };
        let lc = linalg::upper_cholesky(&reg(&wc))
            .ok_or_else(|| Error::Cholesky("controllability Gramian".into()))?
            .transpose();
        let m = linalg::symmetrize(&(lc.transpose() * reg(&wo) * &lc));
        let eig = nalgebra::SymmetricEigen::new(m);
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(f64::MIN_POSITIVE).powf(-0.25)));
        Ok(lc * eig.eigenvectors * scale)
    }

    /// H∞ norm by bisection on Bounded-Real-Lemma feasibility, evaluated on
    /// a balanced realization.
    pub fn hinf_norm(&self, rel_tol: f64) -> Result<f64> {
        let (stable, abscissa) = self.stability();
        if !stable {
            return Err(Error::Unstable(abscissa));
        }
        let bal = self.balanced()?;
        let this = &bal;
        let lower = linalg::spectral_norm(&this.d);
        if this.n_states() == 0 || this.n_inputs() == 0 || this.n_outputs() == 0 {
            return Ok(lower);
        }
        // The DC gain is a valid lower bound too.
        let lower = lower.max(this.gain_at(0.0)?);
        let settings = SolverSettings { tol: 1e-9, ..SolverSettings::default() };
        let mut upper = (2.0 * lower).max(1e-6);
        let mut tries = 0;
        while !brl_problem(this, upper)?.solve(&settings)?.status.is_feasible() {
            upper *= 4.0;
            tries += 1;
            if tries > 40 {
                return Err(Error::NoBracket(format!("bounded real lemma infeasible up to {upper:e}")));
            }
        }
        let lo = (lower * (1.0 - rel_tol)).max(0.0);
        lmi::bisect_feasibility(|g| brl_problem(this, g), lo, upper, rel_tol * 0.5, &settings)
    }

    /// Peak of `σ̄(G(jω))` over a log-spaced grid on `[w_min, w_max]` plus `ω = 0`.
    pub fn peak_gain_on_grid(&self, w_min: f64, w_max: f64, points: usize) -> Result<(f64, f64)> {
        let mut best = (self.gain_at(0.0)?, 0.0);
        let (l0, l1) = (w_min.ln(), w_max.ln());
        for i in 0..points {
            let w = (l0 + (l1 - l0) * i as f64 / (points.max(2) - 1) as f64).exp();
            let g = self.gain_at(w)?;
            if g > best.0 {
                best = (g, w);
            }
        }
        Ok(best)
    }
}

/// Solution `W` of `A W + W Aᵀ + Q = 0` for Hurwitz `A` (Kronecker form).
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = nalgebra::DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let w = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Dimension("Lyapunov operator is singular".into()))?;
    Ok(linalg::symmetrize(&DMatrix::from_column_slice(n, n, w.as_slice())))
}

/// Maximum real part of the eigenvalues of `a` (−∞ when empty).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Bounded Real Lemma at level γ: `X ≻ 0` with
/// `[AᵀX+XA, XB, Cᵀ; BᵀX, -γI, Dᵀ; C, D, -γI] ≺ 0`.
pub(crate) fn brl_problem(g: &StateSpace, gamma: f64) -> Result<LmiProblem> {
    let (n, m, p) = (g.n_states(), g.n_inputs(), g.n_outputs());
    let mut lmi = LmiProblem::new();
    let x = lmi.symmetric("X", n);
    let xe = lmi.mat(&x);
    let top_left = xe.rmul(&g.a).sym();
    let xb = xe.rmul(&g.b);
    let blk = Affine::block(&[
        vec![top_left, xb.clone(), Affine::constant(g.c.transpose())],
        vec![xb.transpose(), Affine::constant(-DMatrix::identity(m, m) * gamma), Affine::constant(g.d.transpose())],
        vec![Affine::constant(g.c.clone()), Affine::constant(g.d.clone()), Affine::constant(-DMatrix::identity(p, p) * gamma)],
    ])?;
    let margin = 1e-9 * (1.0 + gamma);
    lmi.psd("X", xe, margin)?;
    lmi.nsd("brl", blk, margin)?;
    Ok(lmi)
}

/// Cascade `g2 ∘ g1`: the outputs of `g1` drive the inputs of `g2`.
pub fn series(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    if g1.n_outputs() != g2.n_inputs() {
        return Err(Error::Dimension(format!(
            "series: first system has {} outputs, second has {} inputs",
            g1.n_outputs(),
            g2.n_inputs()
        )));
    }
    let (n1, n2) = (g1.n_states(), g2.n_states());
    let z12 = DMatrix::zeros(n1, n2);
    let a = linalg::block(&[vec![&g1.a, &z12], vec![&(&g2.b * &g1.c), &g2.a]])?;
    let b = linalg::vstack(&[&g1.b, &(&g2.b * &g1.d)])?;
    let c = linalg::hstack(&[&(&g2.d * &g1.c), &g2.c])?;
    let d = &g2.d * &g1.d;
    StateSpace::new(a, b, c, d, g1.inputs.clone(), g2.outputs.clone())
}

/// Sum of two systems sharing inputs and outputs.
pub fn parallel(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    if g1.n_inputs() != g2.n_inputs() || g1.n_outputs() != g2.n_outputs() {
        return Err(Error::Dimension("parallel: input/output widths differ".into()));
    }
    let a = linalg::block_diag(&[&g1.a, &g2.a]);
    let b = linalg::vstack(&[&g1.b, &g2.b])?;
    let c = linalg::hstack(&[&g1.c, &g2.c])?;
    StateSpace::new(a, b, c, &g1.d + &g2.d, g1.inputs.clone(), g1.outputs.clone())
}

/// Block-diagonal stacking with the channels of both systems. Channel names
/// must stay unique.
pub fn append(g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    let a = linalg::block_diag(&[&g1.a, &g2.a]);
    let b = linalg::block_diag(&[&g1.b, &g2.b]);
    let c = linalg::block_diag(&[&g1.c, &g2.c]);
    let d = linalg::block_diag(&[&g1.d, &g2.d]);
    let inputs = g1.inputs.iter().chain(&g2.inputs).cloned().collect();
    let outputs = g1.outputs.iter().chain(&g2.outputs).cloned().collect();
    StateSpace::new(a, b, c, d, inputs, outputs)
}

/// Lower linear fractional transformation `plant ⋆ ctrl` closing the
/// control channel `u` with measurement channel `y`. Controller states are
/// appended after the plant states.
pub fn lft_lower(plant: &StateSpace, ctrl: &StateSpace, u: &str, y: &str) -> Result<StateSpace> {
    let u_range = plant.input_range(u)?;
    let y_range = plant.output_range(y)?;
    if ctrl.n_inputs() != y_range.len() || ctrl.n_outputs() != u_range.len() {
        return Err(Error::Dimension(format!(
            "controller is {}x{}, control channel needs {}x{}",
            ctrl.n_outputs(),
            ctrl.n_inputs(),
            u_range.len(),
            y_range.len()
        )));
    }
    let rest_in: Vec<Channel> = plant.inputs.iter().filter(|c| c.name != u).cloned().collect();
    let rest_out: Vec<Channel> = plant.outputs.iter().filter(|c| c.name != y).cloned().collect();
    let in_idx: Vec<usize> = (0..plant.n_inputs()).filter(|i| !u_range.contains(i)).collect();
    let out_idx: Vec<usize> = (0..plant.n_outputs()).filter(|i| !y_range.contains(i)).collect();

    let b1 = plant.b.select_columns(in_idx.iter());
    let b2 = plant.b.columns(u_range.start, u_range.len()).into_owned();
    let c1 = plant.c.select_rows(out_idx.iter());
    let c2 = plant.c.rows(y_range.start, y_range.len()).into_owned();
    let d11 = plant.d.select_rows(out_idx.iter()).select_columns(in_idx.iter());
    let d12 = plant.d.select_rows(out_idx.iter()).columns(u_range.start, u_range.len()).into_owned();
    let d21 = plant.d.rows(y_range.start, y_range.len()).select_columns(in_idx.iter());
    let d22 = plant.d.view((y_range.start, u_range.start), (y_range.len(), u_range.len())).into_owned();

    let (n, nk) = (plant.n_states(), ctrl.n_states());
    let nu = u_range.len();
    // (I - D_K D22) u = D_K C2 x + C_K x_K + D_K D21 w
    let loop_m = DMatrix::identity(nu, nu) - &ctrl.d * &d22;
    let sv = if nu > 0 { loop_m.singular_values() } else { nalgebra::DVector::from_element(1, 1.0) };
    let (smin, smax) = (sv.min(), sv.max());
    if nu > 0 && smin <= 1e-9 * smax.max(1.0) {
        return Err(Error::IllPosed);
    }
    let q = if nu > 0 { loop_m.try_inverse().ok_or(Error::IllPosed)? } else { DMatrix::zeros(0, 0) };
    // u = Fu [x; x_K] + Gu w
    let fu = &q * linalg::hstack(&[&(&ctrl.d * &c2), &ctrl.c])?;
    let gu = &q * &ctrl.d * &d21;
    // y = C2 x + D21 w + D22 u
    let fy = linalg::hstack(&[&c2, &DMatrix::zeros(c2.nrows(), nk)])? + &d22 * &fu;
    let gy = &d21 + &d22 * &gu;

    let a_ol = linalg::block_diag(&[&plant.a, &ctrl.a]);
    let b2_ext = linalg::vstack(&[&b2, &DMatrix::zeros(nk, nu)])?;
    let bk_ext = linalg::vstack(&[&DMatrix::zeros(n, ctrl.n_inputs()), &ctrl.b])?;
    let a = a_ol + &b2_ext * &fu + &bk_ext * &fy;
    let b = linalg::vstack(&[&b1, &DMatrix::zeros(nk, b1.ncols())])? + &b2_ext * &gu + &bk_ext * &gy;
    let c = linalg::hstack(&[&c1, &DMatrix::zeros(c1.nrows(), nk)])? + &d12 * &fu;
    let d = &d11 + &d12 * &gu;
    StateSpace::new(a, b, c, d, rest_in, rest_out)
}

/// First-order scalar blocks and static gains.
pub mod tf {
    use super::*;

    /// `k·(s + zero)/(s + pole)`; collapses to a static gain when the zero
    /// cancels the pole.
    pub fn first_order(k: f64, zero: f64, pole: f64) -> StateSpace {
        if zero == pole {
            return StateSpace::gain(DMatrix::from_element(1, 1, k));
        }
        StateSpace::from_matrices(
            DMatrix::from_element(1, 1, -pole),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, k * (zero - pole)),
            DMatrix::from_element(1, 1, k),
        )
        .expect("scalar realization")
    }

    /// `k/(τs + 1)`
    pub fn lag(k: f64, tau: f64) -> StateSpace {
        StateSpace::from_matrices(
            DMatrix::from_element(1, 1, -1.0 / tau),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, k / tau),
            DMatrix::zeros(1, 1),
        )
        .expect("scalar realization")
    }

    /// `(num1·s + num0)/(den1·s + den0)` with `den1 ≠ 0`.
    pub fn biproper(num1: f64, num0: f64, den1: f64, den0: f64) -> StateSpace {
        first_order(num1 / den1, num0 / num1, den0 / den1)
    }

    pub fn gain(m: DMatrix<f64>) -> StateSpace {
        StateSpace::gain(m)
    }

    /// `diag(g, …, g)` with `copies` repetitions of a SISO block.
    pub fn repeat(g: &StateSpace, copies: usize) -> StateSpace {
        let a = linalg::block_diag(&vec![&g.a; copies]);
        let b = linalg::block_diag(&vec![&g.b; copies]);
        let c = linalg::block_diag(&vec![&g.c; copies]);
        let d = linalg::block_diag(&vec![&g.d; copies]);
        StateSpace::from_matrices(a, b, c, d).expect("repeated realization")
    }
}

#[derive(Serialize, Deserialize)]
struct StateSpaceRepr {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    inputs: Vec<Channel>,
    outputs: Vec<Channel>,
}

impl Serialize for StateSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StateSpaceRepr {
            a: rows::to_rows(&self.a),
            b: rows::to_rows(&self.b),
            c: rows::to_rows(&self.c),
            d: rows::to_rows(&self.d),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = StateSpaceRepr::deserialize(d)?;
        let m: usize = r.inputs.iter().map(|c| c.width).sum();
        let p: usize = r.outputs.iter().map(|c| c.width).sum();
        let n = r.a.len();
        let shape = |rows_: &[Vec<f64>], nr: usize, nc: usize| -> std::result::Result<DMatrix<f64>, D::Error> {
            if rows_.is_empty() {
                return Ok(DMatrix::zeros(nr, nc));
            }
            rows::from_rows(rows_, nc).map_err(D::Error::custom)
        };
        let a = shape(&r.a, n, n)?;
        let b = shape(&r.b, n, m)?;
        let c = shape(&r.c, p, n)?;
        let dd = shape(&r.d, p, m)?;
        StateSpace::new(a, b, c, dd, r.inputs, r.outputs).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn distillation() -> StateSpace {
        let k = m(2, 2, &[87.8, -86.4, 108.2, -109.6]);
        series(&tf::repeat(&tf::lag(1.0, 75.0), 2), &tf::gain(k)).unwrap()
    }

    #[test]
    fn rejects_inconsistent_partitions() {
        let r = StateSpace::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 2),
            vec![Channel::new("u", 1)],
            vec![Channel::new("y", 1)],
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
        let r = StateSpace::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 2),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 2),
            vec![Channel::new("u", 1), Channel::new("u", 1)],
            vec![Channel::new("y", 1)],
        );
        assert!(matches!(r, Err(Error::DuplicateChannel(_))));
    }

    #[test]
    fn series_of_gains_multiplies() {
        let g = series(&tf::gain(DMatrix::identity(2, 2) * 2.0), &tf::gain(DMatrix::identity(2, 2) * 3.0)).unwrap();
        assert_eq!(g.d(), &(DMatrix::identity(2, 2) * 6.0));
        assert_eq!(g.n_states(), 0);
    }

    #[test]
    fn series_with_identity_preserves_response() {
        let g = distillation();
        let s = series(&StateSpace::identity(2), &g).unwrap();
        for w in [0.0, 0.01, 1.0] {
            assert!((s.freq_response(w).unwrap() - g.freq_response(w).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn series_of_first_order_lags() {
        // 1/(s+1) · 1/(s+2): poles {-1,-2}, DC gain 1/2
        let g1 = tf::lag(1.0, 1.0);
        let g2 = tf::lag(0.5, 0.5);
        let g = series(&g1, &g2).unwrap();
        let mut poles: Vec<f64> = g.poles().iter().map(|p| p.re).collect();
        poles.sort_by(|a, b| a.total_cmp(b));
        assert!((poles[0] + 2.0).abs() < 1e-12 && (poles[1] + 1.0).abs() < 1e-12);
        assert!((g.freq_response(0.0).unwrap()[(0, 0)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn series_dimension_mismatch() {
        assert!(series(&StateSpace::identity(2), &StateSpace::identity(3)).is_err());
    }

    #[test]
    fn static_lft_value() {
        // P = [[0,1],[1,0]] with K = 0.5 gives 0.5
        let p = StateSpace::gain(m(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .with_partitions(vec![Channel::new("w", 1), Channel::new("u", 1)], vec![Channel::new("z", 1), Channel::new("y", 1)])
            .unwrap();
        let k = StateSpace::gain(m(1, 1, &[0.5]));
        let cl = lft_lower(&p, &k, "u", "y").unwrap();
        assert!((cl.d()[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(cl.inputs(), &[Channel::new("w", 1)]);
    }

    #[test]
    fn lft_with_zero_controller_keeps_open_loop() {
        let g = distillation()
            .with_partitions(vec![Channel::new("w", 1), Channel::new("u", 1)], vec![Channel::new("z", 1), Channel::new("y", 1)])
            .unwrap();
        let k = StateSpace::from_matrices(-DMatrix::identity(1, 1), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let cl = lft_lower(&g, &k, "u", "y").unwrap();
        assert_eq!(cl.n_states(), 3);
        let open = g.select(&["w"], &["z"]).unwrap();
        assert!((cl.freq_response(0.3).unwrap() - open.freq_response(0.3).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn lft_detects_ill_posed_loop() {
        let p = StateSpace::gain(m(2, 2, &[0.0, 1.0, 1.0, 1.0]))
            .with_partitions(vec![Channel::new("w", 1), Channel::new("u", 1)], vec![Channel::new("z", 1), Channel::new("y", 1)])
            .unwrap();
        let k = StateSpace::gain(m(1, 1, &[1.0]));
        assert!(matches!(lft_lower(&p, &k, "u", "y"), Err(Error::IllPosed)));
    }

    #[test]
    fn hurwitz_checks() {
        let g = StateSpace::from_matrices(-DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1)).unwrap();
        let (ok, abscissa) = g.stability();
        assert!(ok && (abscissa + 1.0).abs() < 1e-12);
        let g = StateSpace::from_matrices(m(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1)).unwrap();
        let (ok, abscissa) = g.stability();
        assert!(!ok && abscissa.abs() < 1e-12);
    }

    #[test]
    fn frequency_responses() {
        let d = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = StateSpace::gain(d.clone());
        assert_eq!(g.freq_response(7.0).unwrap().map(|c| c.re), d);
        let g = distillation();
        let dc = g.freq_response(0.0).unwrap().map(|c| c.re);
        assert!((dc - m(2, 2, &[87.8, -86.4, 108.2, -109.6])).norm() < 1e-10);
        let g = tf::lag(1.0, 1.0);
        let v = g.freq_response(1.0).unwrap()[(0, 0)];
        let expected = Complex::new(1.0, 0.0) / Complex::new(1.0, 1.0);
        assert!((v - expected).norm() < 1e-14);
    }

    #[test]
    fn singular_resolvent_is_reported() {
        let g = StateSpace::from_matrices(m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[0.0])).unwrap();
        assert!(matches!(g.freq_response(0.0), Err(Error::SingularResolvent(_))));
    }

    #[test]
    fn hinf_norm_simple_cases() {
        let g = tf::lag(1.0, 1.0);
        assert!((g.hinf_norm(1e-6).unwrap() - 1.0).abs() < 1e-5);
        let g = StateSpace::gain(m(2, 2, &[3.0, 0.0, 0.0, 1.0]));
        assert!((g.hinf_norm(1e-6).unwrap() - 3.0).abs() < 1e-12);
        let unstable = tf::lag(1.0, -1.0);
        assert!(matches!(unstable.hinf_norm(1e-4), Err(Error::Unstable(_))));
    }

    #[test]
    fn first_order_realization_matches_transfer_function() {
        // W(s) = (s + 0.1)/(2s + 1e-5)
        let w = tf::biproper(1.0, 0.1, 2.0, 1e-5);
        assert_eq!(w.n_states(), 1);
        for omega in [0.0, 1e-3, 1.0, 50.0] {
            let s = Complex::new(0.0, omega);
            let expected = (s + 0.1) / (s * 2.0 + 1e-5);
            assert!((w.freq_response(omega).unwrap()[(0, 0)] - expected).norm() < 1e-9 * expected.norm().max(1.0));
        }
        assert_eq!(tf::first_order(2.0, 3.0, 3.0).n_states(), 0);
    }

    #[test]
    fn serde_roundtrip_keeps_empty_blocks() {
        let g = StateSpace::gain(m(2, 1, &[1.0, 2.0]));
        let text = serde_json::to_string(&g).unwrap();
        let back: StateSpace = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
        let g = distillation();
        let back: StateSpace = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
    }
}
