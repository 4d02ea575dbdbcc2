//! Full-block multipliers for diagonal sector-bounded nonlinearities and
//! their static factorization.
//!
//! A symmetric `P` on `(q, p)` belongs to the set when
//! `[I; Θ]ᵀ P [I; Θ] ⪰ 0` for every vertex `Θ = diag(θ)` with
//! `θᵢ ∈ {κ₁⁽ⁱ⁾, κ₂⁽ⁱ⁾}` and `P₂₂ ⪯ 0`. The quadratic form is concave in
//! `Θ` once `P₂₂ ⪯ 0`, so the vertex conditions extend to the whole box.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::lmi::{Affine, LmiProblem};
use crate::sector::SectorBounds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    /// Per-channel `(κ₁, κ₂)`.
    pub sectors: Vec<(f64, f64)>,
}

/// A concrete multiplier `P` on `(q, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierValue {
    #[serde(with = "rows")]
    pub p: DMatrix<f64>,
    pub n_q: usize,
    pub n_p: usize,
}

impl MultiplierValue {
    pub fn new(p: DMatrix<f64>, n_q: usize, n_p: usize) -> Result<Self> {
        if p.shape() != (n_q + n_p, n_q + n_p) {
            return Err(Error::Dimension(format!("multiplier is {:?}, expected {}x{}", p.shape(), n_q + n_p, n_q + n_p)));
        }
        Ok(Self { p: linalg::symmetrize(&p), n_q, n_p })
    }

    pub fn p11(&self) -> DMatrix<f64> {
        self.p.view((0, 0), (self.n_q, self.n_q)).into_owned()
    }
    pub fn p12(&self) -> DMatrix<f64> {
        self.p.view((0, self.n_q), (self.n_q, self.n_p)).into_owned()
    }
    pub fn p22(&self) -> DMatrix<f64> {
        self.p.view((self.n_q, self.n_q), (self.n_p, self.n_p)).into_owned()
    }

    /// `[I; Θ]ᵀ P [I; Θ]`
    pub fn vertex_form(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let stacked = linalg::vstack(&[&DMatrix::identity(self.n_q, self.n_q), theta]).expect("vertex shape");
        stacked.transpose() * &self.p * stacked
    }
}

impl MultiplierSet {
    pub fn new(sectors: Vec<(f64, f64)>) -> Result<Self> {
        if sectors.is_empty() {
            return Err(Error::InvalidParameter("multiplier set needs at least one channel".into()));
        }
        for &(k1, k2) in &sectors {
            if !(k1 <= 0.0 && 0.0 <= k2) {
                return Err(Error::SectorSign { kappa1: k1, kappa2: k2 });
            }
        }
        Ok(Self { sectors })
    }

    pub fn from_sectors(sectors: &[SectorBounds]) -> Result<Self> {
        Self::new(sectors.iter().map(|s| (s.kappa1, s.kappa2)).collect())
    }

    /// The same sector on `n` channels.
    pub fn repeated(kappa1: f64, kappa2: f64, n: usize) -> Result<Self> {
        Self::new(vec![(kappa1, kappa2); n])
    }

    pub fn n_p(&self) -> usize {
        self.sectors.len()
    }

    pub fn n_q(&self) -> usize {
        self.sectors.len()
    }

    /// All `2^{n_p}` diagonal vertex matrices.
    pub fn vertices(&self) -> Vec<DMatrix<f64>> {
        let n = self.n_p();
        (0..1usize << n)
            .map(|mask| {
                let diag: Vec<f64> = (0..n)
                    .map(|i| if mask >> i & 1 == 0 { self.sectors[i].0 } else { self.sectors[i].1 })
                    .collect();
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
            })
            .collect()
    }

    /// Adds the vertex and lower-right constraints on the expression `p`.
    pub fn constrain(&self, lmi: &mut LmiProblem, p: &Affine) -> Result<()> {
        let (nq, np) = (self.n_q(), self.n_p());
        if p.shape() != (nq + np, nq + np) {
            return Err(Error::Dimension("multiplier expression has the wrong size".into()));
        }
        for (k, theta) in self.vertices().iter().enumerate() {
            let stacked = linalg::vstack(&[&DMatrix::identity(nq, nq), theta])?;
            lmi.psd(&format!("vertex{k}"), p.rmul(&stacked).lmul(&stacked.transpose()), 0.0)?;
        }
        let sel = linalg::vstack(&[&DMatrix::zeros(nq, np), &DMatrix::identity(np, np)])?;
        lmi.nsd("P22", p.rmul(&sel).lmul(&sel.transpose()), 0.0)?;
        Ok(())
    }

    pub fn check_membership(&self, p: &MultiplierValue, tol: f64) -> bool {
        if p.n_q != self.n_q() || p.n_p != self.n_p() {
            return false;
        }
        self.vertices().iter().all(|t| linalg::min_eigenvalue(&p.vertex_form(t)) >= -tol)
            && linalg::max_eigenvalue(&p.p22()) <= tol
    }

    /// The classical sector multiplier `-(p - κ₁q)(p - κ₂q)` per channel,
    /// always a member of the set.
    pub fn sector_multiplier(&self) -> MultiplierValue {
        let n = self.n_p();
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        for (i, &(k1, k2)) in self.sectors.iter().enumerate() {
            p[(i, i)] = -k1 * k2;
            p[(i, n + i)] = 0.5 * (k1 + k2);
            p[(n + i, i)] = 0.5 * (k1 + k2);
            p[(n + i, n + i)] = -1.0;
        }
        MultiplierValue { p, n_q: n, n_p: n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorForm {
    /// `P̂ = diag(I, -I)`
    Diagonal,
    /// `P̂ = [0 I; I 0]`
    OffDiagonal,
}

/// `P ≈ Ψᵀ P̂ Ψ` with `Ψ = [Ψ₁ Ψ₃; 0 Ψ₂]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub form: FactorForm,
    #[serde(with = "rows")]
    pub psi1: DMatrix<f64>,
    #[serde(with = "rows")]
    pub psi2: DMatrix<f64>,
    #[serde(with = "rows")]
    pub psi3: DMatrix<f64>,
    /// Diagonal shift used to make the Cholesky factors exist.
    pub eps: f64,
    pub psi2_condition: f64,
}

impl Factorization {
    pub fn identity(n_q: usize, n_p: usize) -> Self {
        Self {
            form: FactorForm::Diagonal,
            psi1: DMatrix::identity(n_q, n_q),
            psi2: DMatrix::identity(n_p, n_p),
            psi3: DMatrix::zeros(n_q, n_p),
            eps: 0.0,
            psi2_condition: 1.0,
        }
    }

    pub fn n_q(&self) -> usize {
        self.psi1.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.psi2.nrows()
    }

    pub fn p_hat(&self) -> DMatrix<f64> {
        let (nq, np) = (self.n_q(), self.n_p());
        match self.form {
            FactorForm::Diagonal => {
                linalg::block_diag(&[&DMatrix::identity(nq, nq), &(-DMatrix::identity(np, np))])
            }
            FactorForm::OffDiagonal => {
                let i = DMatrix::identity(nq, np);
                linalg::block(&[vec![&DMatrix::zeros(nq, nq), &i], vec![&i.transpose(), &DMatrix::zeros(np, np)]])
                    .expect("square blocks")
            }
        }
    }

    pub fn psi(&self) -> DMatrix<f64> {
        let z = DMatrix::zeros(self.n_p(), self.n_q());
        linalg::block(&[vec![&self.psi1, &self.psi3], vec![&z, &self.psi2]]).expect("factor blocks")
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let psi = self.psi();
        psi.transpose() * self.p_hat() * psi
    }

    /// Spectral norm of `ΨᵀP̂Ψ - P`.
    pub fn reconstruction_error(&self, p: &MultiplierValue) -> f64 {
        linalg::spectral_norm(&(self.reconstruct() - &p.p))
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Default shift `1e-8·(1 + ‖P‖)`.
pub fn default_eps(p: &MultiplierValue) -> f64 {
    1e-8 * (1.0 + linalg::spectral_norm(&p.p))
}

/// Factorization with `P̂ = diag(I, -I)`, retrying with a doubled shift up
/// to four times when a Cholesky factor does not exist.
pub fn factorize(p: &MultiplierValue) -> Result<Factorization> {
    let mut eps = default_eps(p);
    let mut last = None;
    for _ in 0..5 {
        match factorize_with(p, FactorForm::Diagonal, eps) {
            Ok(f) => return Ok(f),
            Err(e) => last = Some(e),
        }
        eps *= 2.0;
    }
    Err(last.expect("at least one attempt"))
}

pub fn factorize_with(p: &MultiplierValue, form: FactorForm, eps: f64) -> Result<Factorization> {
    let (nq, np) = (p.n_q, p.n_p);
    let (p11, p12, p22) = (p.p11(), p.p12(), p.p22());
    match form {
        FactorForm::Diagonal => {
            let psi1 = linalg::upper_cholesky(&(&p11 + DMatrix::identity(nq, nq) * eps))
                .ok_or_else(|| Error::Cholesky(format!("P11 + {eps:e} I is not positive definite")))?;
            let psi3 = psi1
                .transpose()
                .solve_lower_triangular(&p12)
                .ok_or_else(|| Error::Cholesky("Ψ₁ is singular".into()))?;
            let s = psi3.transpose() * &psi3 - &p22 + DMatrix::identity(np, np) * eps;
            let psi2 = linalg::upper_cholesky(&s)
                .ok_or_else(|| Error::Cholesky(format!("Ψ₃ᵀΨ₃ - P22 + {eps:e} I is not positive definite")))?;
            let psi2_condition = condition_number(&psi2);
            Ok(Factorization { form, psi1, psi2, psi3, eps, psi2_condition })
        }
        FactorForm::OffDiagonal => {
            if nq != np {
                return Err(Error::Dimension("off-diagonal form needs n_q = n_p".into()));
            }
            let scale = 1.0 + linalg::spectral_norm(&p.p);
            if linalg::max_abs(&p11) > eps.max(1e-12) * scale {
                return Err(Error::InvalidParameter("off-diagonal form needs P11 = 0".into()));
            }
            let psi2 = DMatrix::identity(np, np);
            let psi1 = p12.transpose();
            let psi3 = &p22 * 0.5;
            let psi2_condition = 1.0;
            Ok(Factorization { form, psi1, psi2, psi3, eps, psi2_condition })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::SolverSettings;

    fn mv(v: &[f64]) -> MultiplierValue {
        MultiplierValue::new(DMatrix::from_row_slice(2, 2, v), 1, 1).unwrap()
    }

    #[test]
    fn symmetric_unit_sector() {
        let set = MultiplierSet::new(vec![(-1.0, 1.0)]).unwrap();
        assert_eq!(set.vertices().len(), 2);
        assert!(set.check_membership(&mv(&[1.0, 0.0, 0.0, -1.0]), 1e-12));
        assert!(set.check_membership(&mv(&[0.0, 0.0, 0.0, 0.0]), 0.0));
        assert!(!set.check_membership(&mv(&[0.0, 0.0, 0.0, 1.0]), 1e-9));
    }

    #[test]
    fn vertex_count_and_sign_assumption() {
        let set = MultiplierSet::repeated(-0.25, 0.55, 2).unwrap();
        let v = set.vertices();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|t| [(-0.25f64), 0.55].contains(&t[(0, 0)]) && [(-0.25f64), 0.55].contains(&t[(1, 1)])));
        assert!(matches!(MultiplierSet::new(vec![(0.1, 0.5)]), Err(Error::SectorSign { .. })));
        assert!(MultiplierSet::new(vec![]).is_err());
    }

    #[test]
    fn degenerate_sector_only_constrains_p11() {
        let set = MultiplierSet::new(vec![(0.0, 0.0)]).unwrap();
        assert!(set.check_membership(&mv(&[0.5, 3.0, 3.0, -1.0]), 1e-12));
        assert!(!set.check_membership(&mv(&[-0.5, 0.0, 0.0, -1.0]), 1e-12));
    }

    #[test]
    fn sector_multiplier_is_member() {
        let set = MultiplierSet::new(vec![(-0.3, 0.8), (-0.1, 0.0)]).unwrap();
        assert!(set.check_membership(&set.sector_multiplier(), 1e-12));
    }

    #[test]
    fn trivial_factorizations() {
        let f = factorize_with(&mv(&[1.0, 0.0, 0.0, -1.0]), FactorForm::Diagonal, 0.0).unwrap();
        assert_eq!((f.psi1[(0, 0)], f.psi3[(0, 0)], f.psi2[(0, 0)]), (1.0, 0.0, 1.0));
        let p = mv(&[0.0, 1.0, 1.0, 0.0]);
        let f = factorize_with(&p, FactorForm::OffDiagonal, 0.0).unwrap();
        assert_eq!(f.psi(), DMatrix::identity(2, 2));
        assert!(f.reconstruction_error(&p) < 1e-15);
        assert!(factorize_with(&mv(&[1.0, 1.0, 1.0, 0.0]), FactorForm::OffDiagonal, 0.0).is_err());
    }

    #[test]
    fn factorizes_solver_multiplier() {
        let set = MultiplierSet::new(vec![(-0.5, 0.5)]).unwrap();
        let mut lmi = LmiProblem::new();
        let pv = lmi.symmetric("P", 2);
        let pe = lmi.mat(&pv);
        set.constrain(&mut lmi, &pe).unwrap();
        lmi.psd("upper", Affine::identity(2).sub(&pe), 0.0).unwrap();
        lmi.psd("lower", pe.add_constant(&DMatrix::identity(2, 2)), 0.0).unwrap();
        let t = lmi.scalar("t");
        let e1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p12 = pe.rmul(&e2).lmul(&e1);
        lmi.psd("link", Affine::scalar(t, DMatrix::identity(1, 1)).sub(&p12), 0.0).unwrap();
        lmi.minimize(t);
        let sol = lmi.solve(&SolverSettings::default()).unwrap();
        assert!(sol.status.is_feasible());
        let p = MultiplierValue::new(sol.matrix(&pv), 1, 1).unwrap();
        assert!(set.check_membership(&p, 1e-7));
        let f = factorize(&p).unwrap();
        assert!(f.reconstruction_error(&p) <= 2.0 * default_eps(&p));
    }

    #[test]
    fn factorization_fails_for_indefinite_p11() {
        let p = mv(&[-1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(factorize(&p), Err(Error::Cholesky(_))));
    }
}
