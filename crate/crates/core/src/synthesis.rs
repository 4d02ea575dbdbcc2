//! Robust controller synthesis for plants in feedback with sector-bounded
//! uncertainty.
//!
//! The generalized plant has inputs `p` (uncertainty), `w` (disturbance),
//! `u` (control) and outputs `q` (uncertainty), `z` (performance), `y`
//! (measurement). Analysis certifies a robust L2-gain level `γ̃` with a
//! full-block multiplier; synthesis alternates between analysis and a
//! quadratic-performance design on the plant transformed by the factorized
//! multiplier.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqc::{self, FactorForm, Factorization, MultiplierSet, MultiplierValue};
use crate::linalg::{self, rows};
use crate::lmi::{Affine, LmiProblem, LmiSolution, SolverSettings};
use crate::lti::{self, Channel, StateSpace};

/// Lower bound imposed on the Lyapunov matrix in the analysis LMI.
pub const EPS_X: f64 = 1e-8;
const PBH_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedPlant {
    pub sys: StateSpace,
    /// Names of the uncertainty input and output channels.
    pub unc_in: String,
    pub unc_out: String,
}

fn pbh_rank_ok(a: &DMatrix<f64>, other: &DMatrix<f64>, columns: bool) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let scale = 1.0 + linalg::spectral_norm(a) + linalg::spectral_norm(other);
    for lam in a.complex_eigenvalues().iter() {
        if lam.re < -PBH_TOL {
            continue;
        }
        let shifted = a.map(|v| Complex::new(v, 0.0)) - DMatrix::<Complex<f64>>::identity(n, n) * *lam;
        let o = other.map(|v| Complex::new(v, 0.0));
        let m = if columns {
            let mut m = DMatrix::zeros(n, n + o.ncols());
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            m.view_mut((0, n), (n, o.ncols())).copy_from(&o);
            m
        } else {
            let mut m = DMatrix::zeros(n + o.nrows(), n);
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            m.view_mut((n, 0), (o.nrows(), n)).copy_from(&o);
            m
        };
        let sv = m.singular_values();
        let smallest = if columns { sv.iter().take(n).cloned().fold(f64::INFINITY, f64::min) } else { sv.min() };
        if smallest <= PBH_TOL * scale {
            return false;
        }
    }
    true
}

impl GeneralizedPlant {
    pub fn new(sys: StateSpace) -> Result<Self> {
        Self::with_uncertainty_channels(sys, "p", "q")
    }

    pub fn with_uncertainty_channels(sys: StateSpace, unc_in: &str, unc_out: &str) -> Result<Self> {
        for name in [unc_in, "w", "u"] {
            sys.input_range(name)?;
        }
        for name in [unc_out, "z", "y"] {
            sys.output_range(name)?;
        }
        if linalg::max_abs(&sys.d_of("y", "u")?) != 0.0 {
            return Err(Error::InvalidParameter("the measurement must not depend directly on the control".into()));
        }
        if !pbh_rank_ok(sys.a(), &sys.b_of("u")?, true) {
            return Err(Error::InvalidParameter("(A, B_u) is not stabilizable".into()));
        }
        if !pbh_rank_ok(sys.a(), &sys.c_of("y")?, false) {
            return Err(Error::InvalidParameter("(A, C_y) is not detectable".into()));
        }
        Ok(Self { sys, unc_in: unc_in.into(), unc_out: unc_out.into() })
    }

    pub fn n_states(&self) -> usize {
        self.sys.n_states()
    }

    pub fn n_p(&self) -> usize {
        self.sys.input_width(&self.unc_in).unwrap_or(0)
    }

    pub fn n_q(&self) -> usize {
        self.sys.output_width(&self.unc_out).unwrap_or(0)
    }

    /// The plant with the uncertainty channel removed.
    pub fn nominal(&self) -> Result<StateSpace> {
        self.sys.select(&["w", "u"], &["z", "y"])
    }

    /// Closed loop on `(p, w) → (q, z)`.
    pub fn close(&self, ctrl: &StateSpace) -> Result<StateSpace> {
        let p = self.sys.select(&[&self.unc_in, "w", "u"], &[&self.unc_out, "z", "y"])?;
        lti::lft_lower(&p, ctrl, "u", "y")
    }

    /// Closed loop keeping any additional monitoring outputs.
    pub fn close_all(&self, ctrl: &StateSpace) -> Result<StateSpace> {
        lti::lft_lower(&self.sys, ctrl, "u", "y")
    }
}

/// Generalized plant for a tracking loop: the nonlinearity sits between the
/// controller output `u` and the plant input, which receives `u - φ(u)`.
/// `w = r`, `y = e = r - G v`, `z = (W_e e, W_u u)`, `q = u`. The plant
/// output is exposed as an extra channel `yp`.
pub fn tracking_plant(g: &StateSpace, we: &StateSpace, wu: &StateSpace) -> Result<GeneralizedPlant> {
    let (ny, nu) = (g.n_outputs(), g.n_inputs());
    if linalg::max_abs(g.d()) != 0.0 {
        return Err(Error::InvalidParameter("the plant must be strictly proper".into()));
    }
    if we.n_inputs() != ny || wu.n_inputs() != nu {
        return Err(Error::Dimension("weight widths do not match the plant".into()));
    }
    let (ng, ne, nw) = (g.n_states(), we.n_states(), wu.n_states());
    let (nze, nzu) = (we.n_outputs(), wu.n_outputs());
    let n = ng + ne + nw;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (ng, ng)).copy_from(g.a());
    a.view_mut((ng, 0), (ne, ng)).copy_from(&(-(we.b() * g.c())));
    a.view_mut((ng, ng), (ne, ne)).copy_from(we.a());
    a.view_mut((ng + ne, ng + ne), (nw, nw)).copy_from(wu.a());

    let mut bp = DMatrix::zeros(n, nu);
    bp.view_mut((0, 0), (ng, nu)).copy_from(&(-g.b()));
    let mut bw = DMatrix::zeros(n, ny);
    bw.view_mut((ng, 0), (ne, ny)).copy_from(we.b());
    let mut bu = DMatrix::zeros(n, nu);
    bu.view_mut((0, 0), (ng, nu)).copy_from(g.b());
    bu.view_mut((ng + ne, 0), (nw, nu)).copy_from(wu.b());

    let cq = DMatrix::zeros(nu, n);
    let mut cz = DMatrix::zeros(nze + nzu, n);
    cz.view_mut((0, 0), (nze, ng)).copy_from(&(-(we.d() * g.c())));
    cz.view_mut((0, ng), (nze, ne)).copy_from(we.c());
    cz.view_mut((nze, ng + ne), (nzu, nw)).copy_from(wu.c());
    let mut cy = DMatrix::zeros(ny, n);
    cy.view_mut((0, 0), (ny, ng)).copy_from(&(-g.c()));
    let mut cyp = DMatrix::zeros(ny, n);
    cyp.view_mut((0, 0), (ny, ng)).copy_from(g.c());

    let b = linalg::hstack(&[&bp, &bw, &bu])?;
    let c = linalg::vstack(&[&cq, &cz, &cy, &cyp])?;
    let mut d = DMatrix::zeros(nu + nze + nzu + 2 * ny, 2 * nu + ny);
    // q = u
    d.view_mut((0, nu + ny), (nu, nu)).copy_from(&DMatrix::identity(nu, nu));
    // z_e = W_e's feedthrough on r
    d.view_mut((nu, nu), (nze, ny)).copy_from(we.d());
    // z_u = W_u's feedthrough on u
    d.view_mut((nu + nze, nu + ny), (nzu, nu)).copy_from(wu.d());
    // y = r
    d.view_mut((nu + nze + nzu, nu), (ny, ny)).copy_from(&DMatrix::identity(ny, ny));
    let sys = StateSpace::new(
        a,
        b,
        c,
        d,
        vec![Channel::new("p", nu), Channel::new("w", ny), Channel::new("u", nu)],
        vec![Channel::new("q", nu), Channel::new("z", nze + nzu), Channel::new("y", ny), Channel::new("yp", ny)],
    )?;
    GeneralizedPlant::new(sys)
}

/// Plant `G` and weights `W_e`, `W_u` of the distillation-column benchmark.
pub fn distillation_column() -> (StateSpace, StateSpace, StateSpace) {
    let gain = DMatrix::from_row_slice(2, 2, &[87.8, -86.4, 108.2, -109.6]);
    let tau = 75.0;
    let g = StateSpace::from_matrices(
        DMatrix::identity(2, 2) * (-1.0 / tau),
        gain / tau,
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 2),
    )
    .expect("plant realization");
    let we = lti::tf::repeat(&lti::tf::biproper(1.0, 0.1, 2.0, 1e-5), 2);
    let wu = lti::tf::repeat(&lti::tf::biproper(1.0, 10.0, 1.0, 100.0), 2);
    (g, we, wu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub status: String,
    pub iterations: u32,
    pub wall_time: f64,
    pub margin: f64,
}

impl From<&LmiSolution> for SolverInfo {
    fn from(s: &LmiSolution) -> Self {
        Self { status: s.backend_status.clone(), iterations: s.iterations, wall_time: s.wall_time, margin: s.margin }
    }
}

/// A robust-performance certificate `(γ̃, X, P)` for a closed loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub gamma: f64,
    #[serde(with = "rows")]
    pub x: DMatrix<f64>,
    pub multiplier: MultiplierValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub certificate: Certificate,
    pub solver: SolverInfo,
}

impl AnalysisResult {
    pub fn gamma(&self) -> f64 {
        self.certificate.gamma
    }
}

/// Either a free multiplier in a set or a fixed matrix.
#[derive(Clone, Copy, Debug)]
pub enum Multiplier<'a> {
    Free(&'a MultiplierSet),
    Fixed(&'a DMatrix<f64>),
}

struct LoopBlocks {
    a: DMatrix<f64>,
    bp: DMatrix<f64>,
    bw: DMatrix<f64>,
    cq: DMatrix<f64>,
    dqp: DMatrix<f64>,
    dqw: DMatrix<f64>,
    cz: DMatrix<f64>,
    dzp: DMatrix<f64>,
    dzw: DMatrix<f64>,
}

impl LoopBlocks {
    fn new(cl: &StateSpace, unc_in: &str, unc_out: &str) -> Result<Self> {
        Ok(Self {
            a: cl.a().clone(),
            bp: cl.b_of(unc_in)?,
            bw: cl.b_of("w")?,
            cq: cl.c_of(unc_out)?,
            dqp: cl.d_of(unc_out, unc_in)?,
            dqw: cl.d_of(unc_out, "w")?,
            cz: cl.c_of("z")?,
            dzp: cl.d_of("z", unc_in)?,
            dzw: cl.d_of("z", "w")?,
        })
    }

    fn dims(&self) -> (usize, usize, usize, usize, usize) {
        (self.a.nrows(), self.bp.ncols(), self.bw.ncols(), self.cq.nrows(), self.cz.nrows())
    }

    /// `[C_q D_qp D_qw 0; 0 I 0 0]`
    fn outer(&self) -> DMatrix<f64> {
        let (n, np, nw, nq, nz) = self.dims();
        let mut m = DMatrix::zeros(nq + np, n + np + nw + nz);
        m.view_mut((0, 0), (nq, n)).copy_from(&self.cq);
        m.view_mut((0, n), (nq, np)).copy_from(&self.dqp);
        m.view_mut((0, n + np), (nq, nw)).copy_from(&self.dqw);
        m.view_mut((nq, n), (np, np)).copy_from(&DMatrix::identity(np, np));
        m
    }
}

/// Left-hand side of the analysis inequality evaluated at fixed values.
pub fn analysis_matrix(cl: &StateSpace, unc_in: &str, unc_out: &str, cert: &Certificate) -> Result<DMatrix<f64>> {
    let blk = LoopBlocks::new(cl, unc_in, unc_out)?;
    let (_, np, nw, _, nz) = blk.dims();
    let x = &cert.x;
    let g = cert.gamma;
    let xa = x * &blk.a;
    let top = &xa + xa.transpose();
    let xbp = x * &blk.bp;
    let xbw = x * &blk.bw;
    let base = linalg::block(&[
        vec![&top, &xbp, &xbw, &blk.cz.transpose()],
        vec![&xbp.transpose(), &DMatrix::zeros(np, np), &DMatrix::zeros(np, nw), &blk.dzp.transpose()],
        vec![&xbw.transpose(), &DMatrix::zeros(nw, np), &(-DMatrix::identity(nw, nw) * g), &blk.dzw.transpose()],
        vec![&blk.cz, &blk.dzp, &blk.dzw, &(-DMatrix::identity(nz, nz) * g)],
    ])?;
    let m = blk.outer();
    Ok(linalg::symmetrize(&(base + m.transpose() * &cert.multiplier.p * m)))
}

fn analysis_problem(
    cl: &StateSpace,
    unc_in: &str,
    unc_out: &str,
    multiplier: Multiplier,
    margin: f64,
) -> Result<(LmiProblem, crate::lmi::ScalarVar, crate::lmi::MatrixVar, Option<crate::lmi::MatrixVar>)> {
    let blk = LoopBlocks::new(cl, unc_in, unc_out)?;
    let (n, np, nw, nq, nz) = blk.dims();
    let mut lmi = LmiProblem::new();
    let gamma = lmi.scalar("gamma");
    let xv = lmi.symmetric("X", n);
    let x = lmi.mat(&xv);
    let (p_expr, pv) = match multiplier {
        Multiplier::Free(set) => {
            if set.n_p() != np || set.n_q() != nq {
                return Err(Error::Dimension(format!(
                    "multiplier set is for {}x{} channels, loop has {nq}x{np}",
                    set.n_q(),
                    set.n_p()
                )));
            }
            let pv = lmi.symmetric("P", nq + np);
            let pe = lmi.mat(&pv);
            set.constrain(&mut lmi, &pe)?;
            (pe, Some(pv))
        }
        Multiplier::Fixed(p) => {
            if p.shape() != (nq + np, nq + np) {
                return Err(Error::Dimension("fixed multiplier has the wrong size".into()));
            }
            (Affine::constant(p.clone()), None)
        }
    };
    let xa = x.rmul(&blk.a).sym();
    let xbp = x.rmul(&blk.bp);
    let xbw = x.rmul(&blk.bw);
    let c = |m: &DMatrix<f64>| Affine::constant(m.clone());
    let z = |r: usize, k: usize| Affine::zeros(r, k);
    let base = Affine::block(&[
        vec![xa, xbp.clone(), xbw.clone(), c(&blk.cz.transpose())],
        vec![xbp.transpose(), z(np, np), z(np, nw), c(&blk.dzp.transpose())],
        vec![xbw.transpose(), z(nw, np), lmi.scaled_identity(gamma, nw).scale(-1.0), c(&blk.dzw.transpose())],
        vec![c(&blk.cz), c(&blk.dzp), c(&blk.dzw), lmi.scaled_identity(gamma, nz).scale(-1.0)],
    ])?;
    let m = blk.outer();
    let expr = base.add(&p_expr.rmul(&m).lmul(&m.transpose()));
    lmi.psd("X", x, EPS_X)?;
    lmi.nsd("analysis", expr, margin)?;
    lmi.minimize(gamma);
    Ok((lmi, gamma, xv, pv))
}

fn solver_settings() -> SolverSettings {
    SolverSettings { tol: 1e-9, max_iter: 500, ..SolverSettings::default() }
}

fn check_solution(sol: &LmiSolution) -> Result<()> {
    use crate::lmi::LmiStatus::*;
    match sol.status {
        Optimal | Feasible => Ok(()),
        Infeasible => Err(Error::Infeasible),
        NumericalFailure => Err(Error::Solver(format!(
            "{} after {} iterations (margin {:e})",
            sol.backend_status, sol.iterations, sol.margin
        ))),
    }
}

type AnalysisSolution = (LmiSolution, crate::lmi::ScalarVar, crate::lmi::MatrixVar, Option<crate::lmi::MatrixVar>);

/// Fallback for a failed level minimization: pure feasibility problems with
/// the level capped, bisected on the cap.
fn bisect_analysis(cl: &StateSpace, unc_in: &str, unc_out: &str, multiplier: Multiplier, hint: f64) -> Result<AnalysisSolution> {
    let capped = |cap: f64| -> Result<AnalysisSolution> {
        let (mut lmi, gamma, xv, pv) = analysis_problem(cl, unc_in, unc_out, multiplier, 1e-9)?;
        let bound = lmi.var(gamma).add_constant(&DMatrix::from_element(1, 1, -cap));
        lmi.nsd("level cap", bound, 0.0)?;
        lmi.minimize_linear(&[]);
        Ok((lmi.solve(&solver_settings())?, gamma, xv, pv))
    };
    let mut hi = if hint.is_finite() && hint > 0.0 { 2.0 * hint } else { 1.0 };
    let mut best = None;
    for _ in 0..12 {
        let attempt = capped(hi)?;
        if attempt.0.status.is_feasible() {
            best = Some(attempt);
            break;
        }
        hi *= 10.0;
    }
    let mut best = best.ok_or_else(|| Error::Solver("no feasible level found by bisection".into()))?;
    let mut lo = 0.0;
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        let attempt = capped(mid)?;
        if attempt.0.status.is_feasible() {
            hi = mid;
            best = attempt;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Minimal certified robust performance level of a closed loop on
/// `(p, w) → (q, z)`.
pub fn robust_analysis(cl: &StateSpace, set: &MultiplierSet) -> Result<AnalysisResult> {
    analyze_with(cl, "p", "q", Multiplier::Free(set))
}

pub fn analyze_with(cl: &StateSpace, unc_in: &str, unc_out: &str, multiplier: Multiplier) -> Result<AnalysisResult> {
    // Any admissible certificate makes the nominal loop stable, since the
    // zero gain lies in every sector.
    if !cl.is_hurwitz() {
        return Err(Error::Infeasible);
    }
    // The same holds for every vertex gain of the sector box.
    if let Multiplier::Free(set) = multiplier {
        if set.n_p() == cl.input_width(unc_in)? && set.n_q() == cl.output_width(unc_out)? {
            for theta in set.vertices() {
                match lti::lft_lower(cl, &StateSpace::gain(theta), unc_in, unc_out) {
                    Ok(v) if v.is_hurwitz() => {}
                    Ok(_) | Err(Error::IllPosed) => return Err(Error::Infeasible),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    // Solve on a balanced realization and map the Lyapunov matrix back.
    let t = cl.balancing_transform()?;
    let t_inv = t.clone().try_inverse().ok_or_else(|| Error::Solver("singular balancing transformation".into()))?;
    let bal = cl.similarity(&t)?;
    // Larger strictness margins absorb solver round-off when the first
    // solution does not verify.
    let mut attempt = None;
    for margin in [1e-9, 1e-7, 1e-6] {
        let (lmi, gamma, xv, pv) = analysis_problem(&bal, unc_in, unc_out, multiplier, margin)?;
        let sol = lmi.solve(&solver_settings())?;
        let done = sol.status != crate::lmi::LmiStatus::NumericalFailure;
        attempt = Some((sol, gamma, xv, pv));
        if done {
            break;
        }
    }
    let (mut sol, mut gamma, mut xv, mut pv) = attempt.expect("at least one attempt");
    if sol.status == crate::lmi::LmiStatus::NumericalFailure {
        (sol, gamma, xv, pv) = bisect_analysis(&bal, unc_in, unc_out, multiplier, sol.scalar(gamma))?;
    }
    check_solution(&sol)?;
    let (nq, np) = (cl.output_width(unc_out)?, cl.input_width(unc_in)?);
    let p = match (pv, multiplier) {
        (Some(pv), _) => sol.matrix(&pv),
        (None, Multiplier::Fixed(p)) => p.clone(),
        (None, Multiplier::Free(_)) => unreachable!("free multiplier has a variable"),
    };
    Ok(AnalysisResult {
        certificate: Certificate {
            gamma: sol.scalar(gamma),
            x: linalg::symmetrize(&(t_inv.transpose() * sol.matrix(&xv) * &t_inv)),
            multiplier: MultiplierValue::new(p, nq, np)?,
        },
        solver: SolverInfo::from(&sol),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    /// `-λ_max` of the analysis inequality (non-negative when it holds).
    pub lmi_margin: f64,
    pub x_min_eigenvalue: f64,
    pub multiplier_in_set: bool,
    pub closed_loop_hurwitz: bool,
}

impl CertificateCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.lmi_margin >= -tol && self.x_min_eigenvalue > 0.0 && self.multiplier_in_set && self.closed_loop_hurwitz
    }
}

pub fn check_certificate(cl: &StateSpace, set: &MultiplierSet, cert: &Certificate) -> Result<CertificateCheck> {
    let m = analysis_matrix(cl, "p", "q", cert)?;
    Ok(CertificateCheck {
        lmi_margin: -linalg::max_eigenvalue(&m),
        x_min_eigenvalue: linalg::min_eigenvalue(&cert.x),
        multiplier_in_set: set.check_membership(&cert.multiplier, 1e-7 * (1.0 + linalg::spectral_norm(&cert.multiplier.p))),
        closed_loop_hurwitz: cl.is_hurwitz(),
    })
}

/// Plant for the quadratic-performance step: the factorized multiplier is
/// absorbed into the uncertainty channels, which become the unit-weight
/// performance pair `w1 → z1`.
pub fn transform_plant(plant: &GeneralizedPlant, fac: &Factorization) -> Result<GeneralizedPlant> {
    let (np, nq) = (plant.n_p(), plant.n_q());
    if fac.n_p() != np || fac.n_q() != nq {
        return Err(Error::Dimension(format!(
            "factorization is for {}x{} channels, plant has {nq}x{np}",
            fac.n_q(),
            fac.n_p()
        )));
    }
    let cond = fac.psi2.singular_values();
    if np > 0 && cond.min() * 1e12 <= cond.max() {
        return Err(Error::InvalidParameter("Ψ₂ is too ill-conditioned to invert".into()));
    }
    let psi2_inv = if np > 0 {
        fac.psi2.clone().try_inverse().ok_or_else(|| Error::InvalidParameter("Ψ₂ is singular".into()))?
    } else {
        DMatrix::zeros(0, 0)
    };
    let sys = &plant.sys;
    let p_range = sys.input_range(&plant.unc_in)?;
    let q_range = sys.output_range(&plant.unc_out)?;
    let mut b = sys.b().clone();
    let mut c = sys.c().clone();
    let mut d = sys.d().clone();
    // Input side: every column block of p is post-multiplied by Ψ₂⁻¹.
    let bp = sys.b().columns(p_range.start, np) * &psi2_inv;
    b.view_mut((0, p_range.start), (b.nrows(), np)).copy_from(&bp);
    let dp = sys.d().columns(p_range.start, np) * &psi2_inv;
    d.view_mut((0, p_range.start), (d.nrows(), np)).copy_from(&dp);
    // Output side: q rows become Ψ₁ q, plus Ψ₃Ψ₂⁻¹ on the p column.
    let cq = &fac.psi1 * sys.c().rows(q_range.start, nq);
    c.view_mut((q_range.start, 0), (nq, c.ncols())).copy_from(&cq);
    let dq = &fac.psi1 * d.rows(q_range.start, nq);
    d.view_mut((q_range.start, 0), (nq, d.ncols())).copy_from(&dq);
    let dqp = d.view((q_range.start, p_range.start), (nq, np)) + &fac.psi3 * &psi2_inv;
    d.view_mut((q_range.start, p_range.start), (nq, np)).copy_from(&dqp);

    let rename = |chans: &[Channel], from: &str, to: &str| -> Vec<Channel> {
        chans
            .iter()
            .map(|ch| if ch.name == from { Channel::new(to, ch.width) } else { ch.clone() })
            .collect()
    };
    let inputs = rename(sys.inputs(), &plant.unc_in, "w1");
    let outputs = rename(sys.outputs(), &plant.unc_out, "z1");
    let sys = StateSpace::new(sys.a().clone(), b, c, d, inputs, outputs)?;
    Ok(GeneralizedPlant { sys, unc_in: "w1".into(), unc_out: "z1".into() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// Relative slack on the optimal level used when reshaping the
    /// Lyapunov pair for a well-conditioned reconstruction.
    pub backoff: f64,
    /// Bound on the Lyapunov pair relative to the optimal one.
    pub size_factor: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { backoff: 1e-3, size_factor: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub controller: StateSpace,
    /// Optimal level of the synthesis LMIs.
    pub gamma: f64,
    /// Relaxed level at which the controller was reconstructed.
    pub level: f64,
    /// Condition number of `I - XY` used in the reconstruction.
    pub coupling_condition: f64,
    pub solver: SolverInfo,
}

struct SynthesisData {
    a: DMatrix<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
    c1: DMatrix<f64>,
    c2: DMatrix<f64>,
    d11: DMatrix<f64>,
    d12: DMatrix<f64>,
    d21: DMatrix<f64>,
    /// Inputs/outputs with unit weight come first.
    n_unit_in: usize,
    n_unit_out: usize,
}

impl SynthesisData {
    fn new(sys: &StateSpace, unit: Option<(&str, &str)>) -> Result<Self> {
        let (ins, outs): (Vec<&str>, Vec<&str>) = match unit {
            Some((i, o)) => (vec![i, "w"], vec![o, "z"]),
            None => (vec!["w"], vec!["z"]),
        };
        let cat_cols = |f: &dyn Fn(&str) -> Result<DMatrix<f64>>| -> Result<DMatrix<f64>> {
            let parts = ins.iter().map(|n| f(n)).collect::<Result<Vec<_>>>()?;
            linalg::hstack(&parts.iter().collect::<Vec<_>>())
        };
        let cat_rows = |f: &dyn Fn(&str) -> Result<DMatrix<f64>>| -> Result<DMatrix<f64>> {
            let parts = outs.iter().map(|n| f(n)).collect::<Result<Vec<_>>>()?;
            linalg::vstack(&parts.iter().collect::<Vec<_>>())
        };
        let b1 = cat_cols(&|n| sys.b_of(n))?;
        let c1 = cat_rows(&|n| sys.c_of(n))?;
        let d12 = cat_rows(&|n| sys.d_of(n, "u"))?;
        let d21 = cat_cols(&|n| sys.d_of("y", n))?;
        let d11 = {
            let rows = outs
                .iter()
                .map(|o| {
                    let parts = ins.iter().map(|i| sys.d_of(o, i)).collect::<Result<Vec<_>>>()?;
                    linalg::hstack(&parts.iter().collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            linalg::vstack(&rows.iter().collect::<Vec<_>>())?
        };
        let (n_unit_in, n_unit_out) = match unit {
            Some((i, o)) => (sys.input_width(i)?, sys.output_width(o)?),
            None => (0, 0),
        };
        Ok(Self {
            a: sys.a().clone(),
            b1,
            b2: sys.b_of("u")?,
            c1,
            c2: sys.c_of("y")?,
            d11,
            d12,
            d21,
            n_unit_in,
            n_unit_out,
        })
    }
}

struct SynthesisVars {
    gamma: crate::lmi::ScalarVar,
    x: crate::lmi::MatrixVar,
    y: crate::lmi::MatrixVar,
    k: crate::lmi::MatrixVar,
    l: crate::lmi::MatrixVar,
    m: crate::lmi::MatrixVar,
    nn: crate::lmi::MatrixVar,
}

#[derive(Clone, Copy, Debug)]
enum Level {
    Minimize,
    /// Feasibility at a fixed level with `X, Y ⪯ bound·I`.
    Fixed { gamma: f64, bound: f64 },
}

/// Builds the convexified synthesis inequalities.
fn synthesis_problem(s: &SynthesisData, level: Level) -> Result<(LmiProblem, SynthesisVars)> {
    let gamma_fixed = match level {
        Level::Minimize => None,
        Level::Fixed { gamma, .. } => Some(gamma),
    };
    let n = s.a.nrows();
    let (nu, ny) = (s.b2.ncols(), s.c2.nrows());
    let (nw, nz) = (s.b1.ncols(), s.c1.nrows());
    let mut lmi = LmiProblem::new();
    let gamma = lmi.scalar("gamma");
    let xv = lmi.symmetric("X", n);
    let yv = lmi.symmetric("Y", n);
    let kv = lmi.full("K", n, n);
    let lv = lmi.full("L", n, ny);
    let mv = lmi.full("M", nu, n);
    let nv = lmi.full("N", nu, ny);
    let (x, y, k, l, m, nn) = (lmi.mat(&xv), lmi.mat(&yv), lmi.mat(&kv), lmi.mat(&lv), lmi.mat(&mv), lmi.mat(&nv));
    let c = |mm: &DMatrix<f64>| Affine::constant(mm.clone());

    let a11 = y.lmul(&s.a).add(&m.lmul(&s.b2));
    let a12 = nn.rmul(&s.c2).lmul(&s.b2).add_constant(&s.a);
    let a22 = x.rmul(&s.a).add(&l.rmul(&s.c2));
    let bb1 = nn.rmul(&s.d21).lmul(&s.b2).add_constant(&s.b1);
    let bb2 = x.rmul(&s.b1).add(&l.rmul(&s.d21));
    let cc1 = y.lmul(&s.c1).add(&m.lmul(&s.d12));
    let cc2 = nn.rmul(&s.c2).lmul(&s.d12).add_constant(&s.c1);
    let dd = nn.rmul(&s.d21).lmul(&s.d12).add_constant(&s.d11);

    let aa = Affine::block(&[vec![a11, a12], vec![k, a22]])?;
    let bb = Affine::block(&[vec![bb1], vec![bb2]])?;
    let cc = Affine::block(&[vec![cc1, cc2]])?;

    let (nwu, nzu) = (s.n_unit_in, s.n_unit_out);
    let weight = |unit: usize, total: usize, sign: f64| -> Affine {
        let mut fixed = DMatrix::zeros(total, total);
        for i in 0..unit {
            fixed[(i, i)] = sign;
        }
        let mut g_sel = DMatrix::zeros(total, total);
        for i in unit..total {
            g_sel[(i, i)] = sign;
        }
        match gamma_fixed {
            Some(g) => c(&(fixed + g_sel * g)),
            None => Affine::scalar(gamma, g_sel).add_constant(&fixed),
        }
    };
    let q_in = weight(nwu, nw, -1.0);
    let r_out = weight(nzu, nz, -1.0);
    let main = Affine::block(&[
        vec![aa.sym(), bb.clone(), cc.transpose()],
        vec![bb.transpose(), q_in, dd.transpose()],
        vec![cc, dd, r_out],
    ])?;
    let scale = 1.0 + linalg::spectral_norm(&s.a);
    lmi.nsd("performance", main, 1e-8 * scale)?;
    let eye = c(&DMatrix::identity(n, n));
    let coup = Affine::block(&[vec![y.clone(), eye.clone()], vec![eye, x.clone()]])?;
    lmi.psd("coupling", coup, 1e-8)?;
    match level {
        Level::Minimize => lmi.minimize(gamma),
        Level::Fixed { bound, .. } => {
            lmi.psd("X bound", Affine::identity(n).scale(bound).sub(&x), 0.0)?;
            lmi.psd("Y bound", Affine::identity(n).scale(bound).sub(&y), 0.0)?;
        }
    }
    Ok((lmi, SynthesisVars { gamma, x: xv, y: yv, k: kv, l: lv, m: mv, nn: nv }))
}

fn reconstruct(s: &SynthesisData, sol: &LmiSolution, v: &SynthesisVars) -> Result<(StateSpace, f64)> {
    let n = s.a.nrows();
    let (x, y) = (sol.matrix(&v.x), sol.matrix(&v.y));
    let (kh, lh, mh, dk) = (sol.matrix(&v.k), sol.matrix(&v.l), sol.matrix(&v.m), sol.matrix(&v.nn));
    let coupling = DMatrix::identity(n, n) - &x * &y;
    let svd = coupling.clone().svd(true, true);
    let sv = &svd.singular_values;
    let cond = if n == 0 { 1.0 } else { sv.max() / sv.min() };
    if !(cond.is_finite() && cond < 1e12) {
        return Err(Error::Reconstruction(format!("I - XY has condition number {cond:e}")));
    }
    let root = DMatrix::from_diagonal(&sv.map(f64::sqrt));
    let u = svd.u.as_ref().expect("left singular vectors") * &root;
    let vt = &root * svd.v_t.as_ref().expect("right singular vectors");
    let u_inv = u.clone().try_inverse().ok_or_else(|| Error::Reconstruction("U is singular".into()))?;
    let vt_inv = vt.clone().try_inverse().ok_or_else(|| Error::Reconstruction("V is singular".into()))?;
    // vt = Vᵀ, so V⁻ᵀ = vt⁻¹
    let ck = (&mh - &dk * &s.c2 * &y) * &vt_inv;
    let bk = &u_inv * (&lh - &x * &s.b2 * &dk);
    let ak = &u_inv
        * (&kh - &u * &bk * &s.c2 * &y - &x * &s.b2 * &ck * &vt - &x * (&s.a + &s.b2 * &dk * &s.c2) * &y)
        * &vt_inv;
    for (name, m) in [("A_K", &ak), ("B_K", &bk), ("C_K", &ck), ("D_K", &dk)] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Reconstruction(format!("{name} is not finite")));
        }
    }
    Ok((StateSpace::from_matrices(ak, bk, ck, dk)?, cond))
}

/// Diagonal state scaling that balances the diagonals of the two Lyapunov
/// matrices of a synthesis solution.
fn balancing_scaling(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i != j {
            return 0.0;
        }
        let r = (y[(i, i)].abs().max(1e-300) / x[(i, i)].abs().max(1e-300)).powf(0.25);
        if r.is_finite() {
            r.clamp(1e-4, 1e4)
        } else {
            1.0
        }
    })
}

/// Congruence `T` with `TᵀXT = T⁻¹YT⁻ᵀ` diagonal, falling back to the
/// diagonal scaling when either matrix is not numerically definite.
fn pair_balancing(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let full = (|| {
        let lc = linalg::upper_cholesky(y)?.transpose();
        let m = linalg::symmetrize(&(lc.transpose() * x * &lc));
        let eig = nalgebra::SymmetricEigen::new(m);
        if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(-0.25)));
        let t = lc * eig.eigenvectors * scale;
        let sv = t.singular_values();
        (sv.min() > 0.0 && sv.max() / sv.min() < 1e10).then_some(t)
    })();
    full.unwrap_or_else(|| balancing_scaling(x, y)).resize(n, n, 0.0)
}

fn synthesize(sys: &StateSpace, unit: Option<(&str, &str)>, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    // Synthesis results are verified a posteriori, so slack violations are
    // tolerated up to a looser threshold here.
    let settings = SolverSettings { report_tol: 1e-4, tol: 1e-8, ..solver_settings() };
    let minimize = |sys: &StateSpace| -> Result<(LmiSolution, SynthesisVars)> {
        let data = SynthesisData::new(sys, unit)?;
        let (lmi, vars) = synthesis_problem(&data, Level::Minimize)?;
        let sol = lmi.solve(&settings)?;
        if sol.status == crate::lmi::LmiStatus::Infeasible {
            return Err(Error::Infeasible);
        }
        if !sol.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver(format!("{} in level minimization", sol.backend_status)));
        }
        Ok((sol, vars))
    };

    // Each solve fixes a state transformation that balances the two
    // Lyapunov matrices; the level is re-estimated on the transformed plant
    // until the solver reports a clean optimum.
    let mut t = DMatrix::identity(sys.n_states(), sys.n_states());
    let mut best: Option<(StateSpace, LmiSolution, SynthesisVars)> = None;
    for _ in 0..4 {
        let current = sys.similarity(&t)?;
        let (sol, vars) = match minimize(&current) {
            Ok(r) => r,
            Err(Error::Infeasible) if best.is_none() => return Err(Error::Infeasible),
            Err(e) => {
                if best.is_none() {
                    return Err(e);
                }
                break;
            }
        };
        let clean = sol.status == crate::lmi::LmiStatus::Optimal;
        let step = pair_balancing(&sol.matrix(&vars.x), &sol.matrix(&vars.y));
        let better = match &best {
            None => true,
            Some((_, b, _)) => sol.status.is_feasible() || !b.status.is_feasible(),
        };
        if better {
            best = Some((current, sol, vars));
        }
        if clean {
            break;
        }
        t *= step;
    }
    let (current, sol, vars) = best.expect("at least one solve");
    let data = SynthesisData::new(&current, unit)?;
    fixed_level_search(&data, &sol, &vars, opts, &settings)
}

/// Feasibility problems at slightly relaxed levels give Lyapunov pairs away
/// from the coupling boundary, which the reconstruction needs.
fn fixed_level_search(
    data: &SynthesisData,
    sol: &LmiSolution,
    vars: &SynthesisVars,
    opts: &SynthesisOptions,
    settings: &SolverSettings,
) -> Result<SynthesisResult> {
    let gamma_min = sol.scalar(vars.gamma);
    let size = linalg::spectral_norm(&sol.matrix(&vars.x)).max(linalg::spectral_norm(&sol.matrix(&vars.y)));
    let bound = opts.size_factor * size.max(1.0);
    let mut last = Error::Reconstruction("no relaxed level produced a controller".into());
    for relax in [opts.backoff, 10.0 * opts.backoff, 0.03, 0.1, 0.3, 1.0] {
        let gamma = gamma_min * (1.0 + relax);
        let attempt = synthesis_problem(data, Level::Fixed { gamma, bound }).and_then(|(lmi, v)| {
            let s = lmi.solve(settings)?;
            check_solution(&s)?;
            let (ctrl, cond) = reconstruct(data, &s, &v)?;
            Ok(SynthesisResult {
                controller: ctrl,
                gamma: gamma_min,
                level: gamma,
                coupling_condition: cond,
                solver: SolverInfo::from(&s),
            })
        });
        match attempt {
            Ok(r) => return Ok(r),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Full-order H∞ synthesis on the nominal plant (inputs `w`, `u`; outputs
/// `z`, `y`). Returns the controller and the verified closed-loop norm.
pub fn nominal_hinf_synthesis(plant: &StateSpace, opts: &SynthesisOptions) -> Result<(SynthesisResult, f64)> {
    let res = synthesize(plant, None, opts)?;
    let cl = lti::lft_lower(&plant.select(&["w", "u"], &["z", "y"])?, &res.controller, "u", "y")?;
    let achieved = cl.hinf_norm(1e-5)?;
    Ok((res, achieved))
}

/// Quadratic-performance synthesis on a transformed plant: unit weights on
/// `w1 → z1` and the H∞ level on `w → z`.
pub fn qp_synthesis(plant: &GeneralizedPlant, form: FactorForm, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    if form != FactorForm::Diagonal {
        return Err(Error::InvalidParameter("quadratic-performance synthesis expects the diag(I, -I) form".into()));
    }
    if plant.n_p() == 0 && plant.n_q() == 0 {
        return synthesize(&plant.sys, None, opts);
    }
    synthesize(&plant.sys, Some((&plant.unc_in, &plant.unc_out)), opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop as soon as the relative improvement drops below the tolerance.
    EarlyStop,
    /// Run up to the iteration cap, keeping any strict improvement.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub stop_rule: StopRule,
    pub synthesis: SynthesisOptions,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self { max_iters: 20, rel_tol: 1e-3, stop_rule: StopRule::EarlyStop, synthesis: SynthesisOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    /// Analysis level the step started from.
    pub start_gamma: f64,
    pub factorization: Option<Factorization>,
    pub synthesis_gamma: Option<f64>,
    /// Analysis level of the candidate controller.
    pub candidate_gamma: Option<f64>,
    pub accepted: bool,
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Converged,
    IterationLimit,
    /// The initial controller could not be certified for the given set.
    InitialAnalysisInfeasible,
    /// A later step failed; the best certified controller is kept.
    StoppedOnError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub status: LoopStatus,
    pub sectors: Vec<(f64, f64)>,
    /// Failure probability the sectors carry; the certificate holds with
    /// probability at least `1 - delta`.
    pub delta: f64,
    pub nominal_gamma: f64,
    pub nominal_achieved: f64,
    pub initial_gamma: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub controller: StateSpace,
    pub certificate: Option<Certificate>,
    pub converged: bool,
}

impl SynthesisReport {
    pub fn final_gamma(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.gamma)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Recomputes the analysis inequality for the final controller on the
    /// given plant.
    pub fn replay(&self, plant: &GeneralizedPlant) -> Result<CertificateCheck> {
        let cert = self.certificate.as_ref().ok_or(Error::Infeasible)?;
        let set = MultiplierSet::new(self.sectors.clone())?;
        check_certificate(&plant.close(&self.controller)?, &set, cert)
    }
}

/// Alternating analysis and quadratic-performance synthesis.
pub fn robust_synthesis_loop(plant: &GeneralizedPlant, set: &MultiplierSet, delta: f64, opts: &LoopOptions) -> Result<SynthesisReport> {
    let (nominal, achieved) = nominal_hinf_synthesis(&plant.nominal()?, &opts.synthesis)?;
    let mut report = SynthesisReport {
        status: LoopStatus::InitialAnalysisInfeasible,
        sectors: set.sectors.clone(),
        delta,
        nominal_gamma: nominal.gamma,
        nominal_achieved: achieved,
        initial_gamma: None,
        iterations: Vec::new(),
        controller: nominal.controller.clone(),
        certificate: None,
        converged: false,
    };
    let mut current = match robust_analysis(&plant.close(&nominal.controller)?, set) {
        Ok(a) => a,
        Err(Error::Infeasible) => return Ok(report),
        Err(e) => return Err(e),
    };
    report.initial_gamma = Some(current.gamma());
    report.certificate = Some(current.certificate.clone());
    report.status = LoopStatus::IterationLimit;

    for index in 0..opts.max_iters {
        let mut rec = IterationRecord {
            index,
            start_gamma: current.gamma(),
            factorization: None,
            synthesis_gamma: None,
            candidate_gamma: None,
            accepted: false,
            note: String::new(),
        };
        let step = (|| -> Result<(SynthesisResult, AnalysisResult)> {
            let fac = iqc::factorize(&current.certificate.multiplier)?;
            rec.factorization = Some(fac.clone());
            let g1 = transform_plant(plant, &fac)?;
            let syn = qp_synthesis(&g1, fac.form, &opts.synthesis)?;
            rec.synthesis_gamma = Some(syn.gamma);
            let ana = robust_analysis(&plant.close(&syn.controller)?, set)?;
            rec.candidate_gamma = Some(ana.gamma());
            Ok((syn, ana))
        })();
        match step {
            Ok((syn, ana)) => {
                let improvement = (current.gamma() - ana.gamma()) / current.gamma();
                let required = match opts.stop_rule {
                    StopRule::EarlyStop => opts.rel_tol,
                    StopRule::Fixed => 0.0,
                };
                if improvement > required {
                    rec.accepted = true;
                    report.controller = syn.controller;
                    report.certificate = Some(ana.certificate.clone());
                    current = ana;
                    report.iterations.push(rec);
                } else {
                    rec.note = format!("relative improvement {improvement:.3e} below threshold");
                    report.iterations.push(rec);
                    report.status = LoopStatus::Converged;
                    report.converged = true;
                    break;
                }
            }
            Err(e) => {
                rec.note = e.to_string();
                report.iterations.push(rec);
                report.status = LoopStatus::StoppedOnError;
                break;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    /// `ẋ = a x + bp p + w + u`, `q = x`, `z = (x, 0.5 u)`, `y = x + 0.1 w`.
    fn scalar_plant(a: f64, bp: f64, cq: f64) -> GeneralizedPlant {
        let sys = StateSpace::new(
            m(1, 1, &[a]),
            m(1, 3, &[bp, 1.0, 1.0]),
            m(4, 1, &[cq, 1.0, 0.0, 1.0]),
            m(4, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.1, 0.0]),
            vec![Channel::new("p", 1), Channel::new("w", 1), Channel::new("u", 1)],
            vec![Channel::new("q", 1), Channel::new("z", 2), Channel::new("y", 1)],
        )
        .unwrap();
        GeneralizedPlant::new(sys).unwrap()
    }

    #[test]
    fn stable_decoupled_plant_needs_no_control() {
        // w → z is 3/(s+2); u and y do not touch the performance channel.
        let g = 1.5;
        let sys = StateSpace::new(
            m(2, 2, &[-2.0, 0.0, 0.0, -1.0]),
            m(2, 2, &[3.0, 0.0, 0.0, 1.0]),
            m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DMatrix::zeros(2, 2),
            vec![Channel::new("w", 1), Channel::new("u", 1)],
            vec![Channel::new("z", 1), Channel::new("y", 1)],
        )
        .unwrap();
        let (res, achieved) = nominal_hinf_synthesis(&sys, &SynthesisOptions::default()).unwrap();
        assert!((res.gamma - g).abs() < 1e-4 * g, "{}", res.gamma);
        assert!((achieved - g).abs() < 1e-4 * g, "{achieved}");
    }

    #[test]
    fn integrator_is_stabilized() {
        let plant = scalar_plant(0.0, 0.0, 0.0);
        let (res, achieved) = nominal_hinf_synthesis(&plant.nominal().unwrap(), &SynthesisOptions::default()).unwrap();
        let cl = lti::lft_lower(&plant.nominal().unwrap(), &res.controller, "u", "y").unwrap();
        assert!(cl.is_hurwitz());
        assert!(res.gamma.is_finite());
        assert!(achieved <= res.level * (1.0 + 1e-4), "{achieved} > {}", res.level);
        let brl = lti::brl_problem(&cl, res.level * (1.0 + 1e-3)).unwrap().solve(&SolverSettings::default()).unwrap();
        assert!(brl.status.is_feasible());
    }

    #[test]
    fn identity_transform_leaves_plant_unchanged() {
        let plant = scalar_plant(-1.0, 0.7, 1.3);
        let g1 = transform_plant(&plant, &Factorization::identity(1, 1)).unwrap();
        assert_eq!(g1.sys.a(), plant.sys.a());
        assert_eq!(g1.sys.b(), plant.sys.b());
        assert_eq!(g1.sys.c(), plant.sys.c());
        assert_eq!(g1.sys.d(), plant.sys.d());
        assert!(g1.sys.has_input("w1") && g1.sys.has_output("z1"));
    }

    #[test]
    fn psi2_scaling_halves_input_blocks() {
        let mut plant = scalar_plant(-1.0, 0.7, 1.3);
        let mut d = plant.sys.d().clone();
        d[(1, 0)] = 0.4;
        plant.sys = StateSpace::new(
            plant.sys.a().clone(),
            plant.sys.b().clone(),
            plant.sys.c().clone(),
            d,
            plant.sys.inputs().to_vec(),
            plant.sys.outputs().to_vec(),
        )
        .unwrap();
        let mut fac = Factorization::identity(1, 1);
        fac.psi2 = m(1, 1, &[2.0]);
        let g1 = transform_plant(&plant, &fac).unwrap();
        assert_eq!(g1.sys.b_of("w1").unwrap()[(0, 0)], 0.35);
        assert_eq!(g1.sys.d_of("z", "w1").unwrap()[(0, 0)], 0.2);
        assert_eq!(g1.sys.b_of("w").unwrap(), plant.sys.b_of("w").unwrap());
    }

    #[test]
    fn zero_sector_matches_nominal_norm() {
        let plant = scalar_plant(-1.0, 1.0, 1.0);
        let cl = plant.close(&StateSpace::gain(DMatrix::zeros(1, 1))).unwrap();
        let set = MultiplierSet::new(vec![(0.0, 0.0)]).unwrap();
        let res = robust_analysis(&cl, &set).unwrap();
        let nominal = cl.select(&["w"], &["z"]).unwrap().hinf_norm(1e-7).unwrap();
        assert!((res.gamma() - nominal).abs() <= 1e-3 * nominal, "{} vs {nominal}", res.gamma());
        assert!(check_certificate(&cl, &set, &res.certificate).unwrap().passed(1e-7));
    }

    #[test]
    fn scalar_gain_uncertainty_is_tight() {
        // ẋ = -x + w + p, q = z = x, p = κ q: worst case 1/(1 - 0.5) = 2.
        let cl = StateSpace::new(
            m(1, 1, &[-1.0]),
            m(1, 2, &[1.0, 1.0]),
            m(2, 1, &[1.0, 1.0]),
            DMatrix::zeros(2, 2),
            vec![Channel::new("p", 1), Channel::new("w", 1)],
            vec![Channel::new("q", 1), Channel::new("z", 1)],
        )
        .unwrap();
        let set = MultiplierSet::new(vec![(-0.5, 0.5)]).unwrap();
        let res = robust_analysis(&cl, &set).unwrap();
        assert!(res.gamma() >= 2.0 * (1.0 - 1e-6) && res.gamma() <= 2.0 * 1.05, "{}", res.gamma());
    }

    #[test]
    fn bisection_fallback_agrees_with_minimization() {
        let cl = StateSpace::new(
            m(1, 1, &[-1.0]),
            m(1, 2, &[1.0, 1.0]),
            m(2, 1, &[1.0, 1.0]),
            DMatrix::zeros(2, 2),
            vec![Channel::new("p", 1), Channel::new("w", 1)],
            vec![Channel::new("q", 1), Channel::new("z", 1)],
        )
        .unwrap();
        let set = MultiplierSet::new(vec![(-0.5, 0.5)]).unwrap();
        let direct = robust_analysis(&cl, &set).unwrap().gamma();
        let (sol, gamma, _, _) = bisect_analysis(&cl, "p", "q", Multiplier::Free(&set), f64::NAN).unwrap();
        let g = sol.scalar(gamma);
        assert!(sol.status.is_feasible());
        assert!(g >= direct * (1.0 - 1e-6) && g <= direct * 1.002, "{g} vs {direct}");
    }

    #[test]
    fn disconnected_channels_reduce_to_nominal() {
        let plant = scalar_plant(1.0, 0.0, 0.0);
        let opts = SynthesisOptions::default();
        let (nominal, _) = nominal_hinf_synthesis(&plant.nominal().unwrap(), &opts).unwrap();
        let g1 = transform_plant(&plant, &Factorization::identity(1, 1)).unwrap();
        let qp = qp_synthesis(&g1, FactorForm::Diagonal, &opts).unwrap();
        assert!((qp.gamma - nominal.gamma).abs() <= 1e-6 * nominal.gamma, "{} vs {}", qp.gamma, nominal.gamma);
    }

    #[test]
    fn loop_without_uncertainty_stops_after_one_step() {
        let plant = scalar_plant(1.0, 0.0, 0.0);
        let set = MultiplierSet::new(vec![(-0.5, 0.5)]).unwrap();
        let report = robust_synthesis_loop(&plant, &set, 0.01, &LoopOptions::default()).unwrap();
        assert_eq!(report.status, LoopStatus::Converged);
        assert_eq!(report.iterations.len(), 1);
        let g = report.final_gamma().unwrap();
        assert!((g - report.nominal_achieved).abs() <= 1e-3 * g, "{g} vs {}", report.nominal_achieved);
    }

    #[test]
    fn loop_report_replays_and_roundtrips() {
        let plant = scalar_plant(0.5, 1.0, 1.0);
        let set = MultiplierSet::new(vec![(-0.3, 0.4)]).unwrap();
        let opts = LoopOptions { max_iters: 4, ..LoopOptions::default() };
        let report = robust_synthesis_loop(&plant, &set, 0.01, &opts).unwrap();
        assert!(report.final_gamma().is_some());
        let mut last = report.initial_gamma.unwrap();
        for rec in report.iterations.iter().filter(|r| r.accepted) {
            let g = rec.candidate_gamma.unwrap();
            assert!(g <= last);
            last = g;
        }
        assert!(report.replay(&plant).unwrap().passed(1e-7));
        let back = SynthesisReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.final_gamma(), report.final_gamma());
        assert!(back.replay(&plant).unwrap().passed(1e-7));
    }

    #[test]
    fn plant_checks_reject_bad_structure() {
        let plant = scalar_plant(1.0, 1.0, 1.0);
        let mut d = plant.sys.d().clone();
        d[(3, 2)] = 1.0;
        let sys = StateSpace::new(
            plant.sys.a().clone(),
            plant.sys.b().clone(),
            plant.sys.c().clone(),
            d,
            plant.sys.inputs().to_vec(),
            plant.sys.outputs().to_vec(),
        )
        .unwrap();
        assert!(GeneralizedPlant::new(sys).is_err());
        let mut b = plant.sys.b().clone();
        b[(0, 2)] = 0.0;
        let sys = StateSpace::new(
            plant.sys.a().clone(),
            b,
            plant.sys.c().clone(),
            plant.sys.d().clone(),
            plant.sys.inputs().to_vec(),
            plant.sys.outputs().to_vec(),
        )
        .unwrap();
        assert!(GeneralizedPlant::new(sys).is_err());
    }
}
