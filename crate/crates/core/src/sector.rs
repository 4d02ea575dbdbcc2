//! Sector bounds certified from an uncertainty band.
//!
//! For a band `lower(x) ≤ φ(x) ≤ upper(x)` on `[a, b]` the ratio `φ(x)/x`
//! lies between `min(lower/x, upper/x)` and `max(lower/x, upper/x)`. The
//! ratios are evaluated on a grid that skips the interval `(-ρ, ρ)` around
//! the origin and then widened so the bound holds between grid points as
//! well: if both band edges are `L`-Lipschitz and `x` lies within `h/2` of
//! the grid point `xⱼ`, then
//!
//! `|e(x)/x - e(xⱼ)/xⱼ| ≤ (L + |e(xⱼ)/xⱼ|)·(h/2)/min|x|`
//!
//! for either edge `e`, where `min|x|` is taken over that cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gp::GpPosterior;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorOptions {
    pub a: f64,
    pub b: f64,
    pub grid_points: usize,
    /// Lipschitz constant of both band edges (a trust input).
    pub lipschitz: f64,
    pub exclusion_radius: f64,
}

impl Default for SectorOptions {
    fn default() -> Self {
        Self { a: -1.0, b: 1.0, grid_points: 2001, lipschitz: 4.0, exclusion_radius: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorProvenance {
    pub grid_points: usize,
    pub spacing: f64,
    pub exclusion_radius: f64,
    pub lipschitz: f64,
    /// Extremes of the ratios on the grid, before widening.
    pub grid_kappa1: f64,
    pub grid_kappa2: f64,
    /// Largest widening applied at any grid point.
    pub max_inflation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    pub kappa1: f64,
    pub kappa2: f64,
    pub domain: (f64, f64),
    /// Failure probability attached to this channel's bound.
    pub delta_share: f64,
    pub provenance: Option<SectorProvenance>,
}

impl SectorBounds {
    /// A bound given a priori (no learning, no failure probability).
    pub fn prior(kappa1: f64, kappa2: f64, domain: (f64, f64)) -> Result<Self> {
        if !(kappa1 <= kappa2) {
            return Err(Error::InvalidParameter(format!("sector [{kappa1}, {kappa2}] is empty")));
        }
        Ok(Self { kappa1, kappa2, domain, delta_share: 0.0, provenance: None })
    }

    /// `κ₁ ≤ 0 ≤ κ₂`, required by the full-block multiplier description.
    pub fn sign_ok(&self) -> bool {
        self.kappa1 <= 0.0 && 0.0 <= self.kappa2
    }

    pub fn width(&self) -> f64 {
        self.kappa2 - self.kappa1
    }

    pub fn contains(&self, other: &SectorBounds) -> bool {
        self.kappa1 <= other.kappa1 && other.kappa2 <= self.kappa2
    }
}

fn grid(opts: &SectorOptions) -> Result<(Vec<f64>, f64)> {
    let SectorOptions { a, b, grid_points, lipschitz, exclusion_radius: rho } = *opts;
    if !(a < 0.0 && 0.0 < b) {
        return Err(Error::InvalidParameter(format!("domain [{a}, {b}] must contain 0 in its interior")));
    }
    if grid_points < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 grid points, got {grid_points}")));
    }
    if !(lipschitz >= 0.0) {
        return Err(Error::InvalidParameter(format!("Lipschitz constant must be non-negative, got {lipschitz}")));
    }
    if !(rho > 0.0) || rho >= a.abs().min(b) {
        return Err(Error::InvalidParameter(format!("exclusion radius {rho} must lie in (0, {})", a.abs().min(b))));
    }
    let h = (b - a) / (grid_points - 1) as f64;
    let mut xs = vec![-rho, rho];
    xs.extend(crate::gp::linspace(a, b, grid_points).into_iter().filter(|x| x.abs() > rho));
    xs.sort_by(|p, q| p.total_cmp(q));
    Ok((xs, h))
}

/// Certified sector from an arbitrary band function `x ↦ (lower, upper)`.
pub fn extract_sector_from_band<F>(band: F, opts: &SectorOptions, delta_share: f64, exec: Execution) -> Result<SectorBounds>
where
    F: Fn(f64) -> Result<(f64, f64)> + Sync + Send,
{
    let (xs, h) = grid(opts)?;
    let rho = opts.exclusion_radius;
    let cells: Vec<Result<(f64, f64, f64)>> = exec.map(&xs, |&x| {
        let (lo, hi) = band(x)?;
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("band edge"));
        }
        let (r1, r2) = (lo / x, hi / x);
        let (gmin, gmax) = (r1.min(r2), r1.max(r2));
        let min_abs = (x.abs() - 0.5 * h).max(rho);
        let inflation = (opts.lipschitz + gmin.abs().max(gmax.abs())) * 0.5 * h / min_abs;
        Ok((gmin, gmax, inflation))
    });
    let mut grid_k1 = f64::INFINITY;
    let mut grid_k2 = f64::NEG_INFINITY;
    let mut k1 = f64::INFINITY;
    let mut k2 = f64::NEG_INFINITY;
    let mut max_infl: f64 = 0.0;
    for c in cells {
        let (gmin, gmax, infl) = c?;
        grid_k1 = grid_k1.min(gmin);
        grid_k2 = grid_k2.max(gmax);
        k1 = k1.min(gmin - infl);
        k2 = k2.max(gmax + infl);
        max_infl = max_infl.max(infl);
    }
    Ok(SectorBounds {
        kappa1: k1,
        kappa2: k2,
        domain: (opts.a, opts.b),
        delta_share,
        provenance: Some(SectorProvenance {
            grid_points: opts.grid_points,
            spacing: h,
            exclusion_radius: rho,
            lipschitz: opts.lipschitz,
            grid_kappa1: grid_k1,
            grid_kappa2: grid_k2,
            max_inflation: max_infl,
        }),
    })
}

/// Certified sector of the posterior band `μ_D ± β_D σ_D`.
pub fn extract_sector(post: &GpPosterior, opts: &SectorOptions, exec: Execution) -> Result<SectorBounds> {
    extract_sector_from_band(|x| post.band(x), opts, post.delta(), exec)
}

/// Failure probability per channel: one learned function reused on every
/// channel keeps the whole budget, independent learners split it evenly.
pub fn split_delta(total_delta: f64, n_channels: usize, shared_function: bool) -> Result<Vec<f64>> {
    if !(total_delta > 0.0 && total_delta < 1.0) || n_channels == 0 {
        return Err(Error::InvalidParameter(format!("delta {total_delta} over {n_channels} channels")));
    }
    if shared_function {
        Ok(vec![total_delta])
    } else {
        Ok(vec![total_delta / n_channels as f64; n_channels])
    }
}
