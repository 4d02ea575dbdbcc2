//! Time-domain simulation of a generalized plant in feedback with a
//! controller on `u → y` and a static nonlinearity `p = φ(q)` applied to each
//! scalar channel of `q`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::lti::StateSpace;
use crate::synthesis::GeneralizedPlant;

pub type Nonlinearity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    pub channel: usize,
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

/// Exogenous input on the `w` channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Zero,
    Step { amplitude: Vec<f64>, at: f64 },
    Sine { amplitude: Vec<f64>, phase: Vec<f64>, omega: f64 },
    Multisine { components: Vec<SineComponent> },
}

impl Signal {
    pub fn step(amplitude: Vec<f64>) -> Self {
        Signal::Step { amplitude, at: 0.0 }
    }

    /// Band-limited noise realization: `n` sinusoids per channel with
    /// frequencies uniform on `(0, cutoff]`, random phases and total RMS
    /// `rms` per channel.
    pub fn band_limited(width: usize, rms: f64, cutoff: f64, n: usize, seed: u64) -> Result<Self> {
        if !(cutoff > 0.0) || n == 0 || !(rms >= 0.0) {
            return Err(Error::InvalidParameter("band-limited noise needs cutoff > 0, n > 0, rms >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitude = rms * (2.0 / n as f64).sqrt();
        let mut components = Vec::with_capacity(width * n);
        for channel in 0..width {
            for _ in 0..n {
                components.push(SineComponent {
                    channel,
                    amplitude,
                    omega: cutoff * (1.0 - rng.random::<f64>()),
                    phase: 2.0 * std::f64::consts::PI * rng.random::<f64>(),
                });
            }
        }
        Ok(Signal::Multisine { components })
    }

    fn check_width(&self, width: usize) -> Result<()> {
        let ok = match self {
            Signal::Zero => true,
            Signal::Step { amplitude, .. } => amplitude.len() == width,
            Signal::Sine { amplitude, phase, .. } => amplitude.len() == width && phase.len() == width,
            Signal::Multisine { components } => components.iter().all(|c| c.channel < width),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("signal does not fit a {width}-wide channel")))
        }
    }

    pub fn eval(&self, t: f64, out: &mut DVector<f64>) {
        out.fill(0.0);
        match self {
            Signal::Zero => {}
            Signal::Step { amplitude, at } => {
                if t >= *at {
                    out.copy_from_slice(amplitude);
                }
            }
            Signal::Sine { amplitude, phase, omega } => {
                for i in 0..out.len() {
                    out[i] = amplitude[i] * (omega * t + phase[i]).cos();
                }
            }
            Signal::Multisine { components } => {
                for c in components {
                    out[c.channel] += c.amplitude * (c.omega * t + c.phase).cos();
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    /// Output sampling step.
    pub h: f64,
    pub horizon: f64,
    pub divergence_threshold: f64,
    /// Integration steps per output sample.
    pub substeps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { h: 0.01, horizon: 600.0, divergence_threshold: 1e9, substeps: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub width: usize,
    /// Row-major samples, one row per time point.
    pub values: Vec<f64>,
}

impl Series {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Per-component maximum of `|v|`.
    pub fn max_abs(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.width];
        for row in self.values.chunks(self.width.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o = (*o).max(v.abs());
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub series: Vec<Series>,
}

impl Trajectory {
    pub fn channel(&self, name: &str) -> Result<&Series> {
        self.series.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownChannel(name.into()))
    }

    /// `∫ ‖s(t)‖² dt` by the trapezoidal rule.
    pub fn energy(&self, name: &str) -> Result<f64> {
        let s = self.channel(name)?;
        let sq = |k: usize| s.at(k).iter().map(|v| v * v).sum::<f64>();
        Ok(self.time.windows(2).enumerate().map(|(k, t)| 0.5 * (t[1] - t[0]) * (sq(k) + sq(k + 1))).sum())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        for s in &self.series {
            for i in 0..s.width {
                header.push(format!("{}{}", s.name, i + 1));
            }
        }
        w.write_record(&header)?;
        for (k, t) in self.time.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for s in &self.series {
                row.extend(s.at(k).iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub trajectory: Trajectory,
    /// Internal integration step.
    pub h_internal: f64,
    pub max_abs_q: Vec<f64>,
    pub diverged_at: Option<f64>,
    /// `‖y(T)‖_∞` at the last recorded sample.
    pub terminal_error: f64,
}

impl SimulationOutcome {
    pub fn bounded(&self) -> bool {
        self.diverged_at.is_none()
    }

    /// Whether every channel of `q` stayed inside `[lo, hi]`.
    pub fn q_within(&self, lo: f64, hi: f64) -> Result<bool> {
        let q = self.trajectory.channel("q")?;
        Ok(q.values.iter().all(|v| *v >= lo && *v <= hi))
    }
}

/// Plant, controller and nonlinearity in feedback.
#[derive(Clone)]
pub struct LureLoop {
    pub plant: GeneralizedPlant,
    pub controller: StateSpace,
    pub phi: Nonlinearity,
}

struct Blocks {
    a: DMatrix<f64>,
    bp: DMatrix<f64>,
    bw: DMatrix<f64>,
    bu: DMatrix<f64>,
    c: DMatrix<f64>,
    dp: DMatrix<f64>,
    dw: DMatrix<f64>,
    du: DMatrix<f64>,
    q_rows: std::ops::Range<usize>,
    y_rows: std::ops::Range<usize>,
    ak: DMatrix<f64>,
    bk: DMatrix<f64>,
    ck: DMatrix<f64>,
    dk: DMatrix<f64>,
    /// Whether `p` reaches `q` instantaneously.
    algebraic: bool,
}

struct Snapshot {
    p: DVector<f64>,
    u: DVector<f64>,
    y: DVector<f64>,
}

impl LureLoop {
    pub fn new(plant: GeneralizedPlant, controller: StateSpace, phi: Nonlinearity) -> Result<Self> {
        if controller.n_inputs() != plant.sys.output_width("y")? || controller.n_outputs() != plant.sys.input_width("u")? {
            return Err(Error::Dimension("controller does not match the plant's u/y channels".into()));
        }
        if plant.n_p() != plant.n_q() {
            return Err(Error::Dimension("a channelwise nonlinearity needs as many p as q channels".into()));
        }
        Ok(Self { plant, controller, phi })
    }

    fn blocks(&self) -> Result<Blocks> {
        let sys = &self.plant.sys;
        let (pin, qout) = (self.plant.unc_in.as_str(), self.plant.unc_out.as_str());
        let dcols = |name: &str| -> Result<DMatrix<f64>> {
            let r = sys.input_range(name)?;
            Ok(sys.d().columns(r.start, r.len()).into_owned())
        };
        let q_rows = sys.output_range(qout)?;
        let y_rows = sys.output_range("y")?;
        let dk = self.controller.d().clone();
        let dp = dcols(pin)?;
        let du = dcols("u")?;
        let direct = dp.rows(q_rows.start, q_rows.len())
            + du.rows(q_rows.start, q_rows.len()) * &dk * dp.rows(y_rows.start, y_rows.len());
        Ok(Blocks {
            a: sys.a().clone(),
            bp: sys.b_of(pin)?,
            bw: sys.b_of("w")?,
            bu: sys.b_of("u")?,
            c: sys.c().clone(),
            dp,
            dw: dcols("w")?,
            du,
            q_rows,
            y_rows,
            ak: self.controller.a().clone(),
            bk: self.controller.b().clone(),
            ck: self.controller.c().clone(),
            dk,
            algebraic: linalg::max_abs(&direct) > 0.0,
        })
    }

    fn linear_matrix(b: &Blocks) -> DMatrix<f64> {
        let (n, nk) = (b.a.nrows(), b.ak.nrows());
        let cy = b.c.rows(b.y_rows.start, b.y_rows.len());
        let mut m = DMatrix::zeros(n + nk, n + nk);
        m.view_mut((0, 0), (n, n)).copy_from(&(&b.a + &b.bu * &b.dk * cy));
        m.view_mut((0, n), (n, nk)).copy_from(&(&b.bu * &b.ck));
        m.view_mut((n, 0), (nk, n)).copy_from(&(&b.bk * cy));
        m.view_mut((n, n), (nk, nk)).copy_from(&b.ak);
        m
    }

    fn snapshot(&self, b: &Blocks, x: &DVector<f64>, xk: &DVector<f64>, w: &DVector<f64>, t: f64) -> Result<Snapshot> {
        let (ny, nq) = (b.y_rows.len(), b.q_rows.len());
        let cy = b.c.rows(b.y_rows.start, ny);
        let cq = b.c.rows(b.q_rows.start, nq);
        let y_free = cy * x + b.dw.rows(b.y_rows.start, ny) * w;
        let q_free = cq * x + b.dw.rows(b.q_rows.start, nq) * w;
        let mut p = DVector::zeros(nq);
        for _ in 0..200 {
            let y = &y_free + b.dp.rows(b.y_rows.start, ny) * &p;
            let u = &b.ck * xk + &b.dk * &y;
            let q = &q_free + b.dp.rows(b.q_rows.start, nq) * &p + b.du.rows(b.q_rows.start, nq) * &u;
            let p_new = q.map(|v| (self.phi)(v));
            let change = (&p_new - &p).amax();
            p = p_new;
            if !b.algebraic || change <= 1e-13 * (1.0 + p.amax()) {
                let y = &y_free + b.dp.rows(b.y_rows.start, ny) * &p;
                let u = &b.ck * xk + &b.dk * &y;
                return Ok(Snapshot { p, u, y });
            }
        }
        Err(Error::AlgebraicLoop { time: t })
    }

    fn derivative(&self, b: &Blocks, t: f64, s: &DVector<f64>, signal: &Signal, w: &mut DVector<f64>) -> Result<DVector<f64>> {
        let n = b.a.nrows();
        let x = s.rows(0, n).into_owned();
        let xk = s.rows(n, s.len() - n).into_owned();
        signal.eval(t, w);
        let snap = self.snapshot(b, &x, &xk, w, t)?;
        let dx = &b.a * &x + &b.bp * &snap.p + &b.bw * &*w + &b.bu * &snap.u;
        let dxk = &b.ak * &xk + &b.bk * &snap.y;
        let mut out = DVector::zeros(s.len());
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, s.len() - n).copy_from(&dxk);
        Ok(out)
    }

    /// Exponential RK4 (Cox-Matthews) from rest: the loop with the
    /// nonlinearity removed is propagated exactly, the remainder explicitly.
    pub fn simulate(&self, reference: &Signal, settings: &SimSettings) -> Result<SimulationOutcome> {
        if !(settings.h > 0.0) || !(settings.horizon > settings.h) || settings.substeps == 0 {
            return Err(Error::InvalidParameter("need h > 0, horizon > h and at least one substep".into()));
        }
        let nw = self.plant.sys.input_width("w")?;
        reference.check_width(nw)?;
        let b = self.blocks()?;
        let substeps = settings.substeps;
        let dt = settings.h / substeps as f64;
        let lin = Self::linear_matrix(&b);
        let half = Etd::new(&lin, 0.5 * dt);
        let full = Etd::new(&lin, dt);
        let f1 = &full.phi1 - &full.phi2 * 3.0 + &full.phi3 * 4.0;
        let f2 = (&full.phi2 - &full.phi3 * 2.0) * 2.0;
        let f3 = &full.phi3 * 4.0 - &full.phi2;
        let steps = (settings.horizon / settings.h).round() as usize;

        let sys = &self.plant.sys;
        let out_names: Vec<(String, usize)> = sys.outputs().iter().map(|c| (c.name.clone(), c.width)).collect();
        let mut series: Vec<Series> = [("w".to_string(), nw), ("p".to_string(), b.bp.ncols()), ("u".to_string(), b.bu.ncols())]
            .into_iter()
            .chain(out_names.iter().cloned())
            .map(|(name, width)| Series { name, width, values: Vec::with_capacity((steps + 1) * width) })
            .collect();
        let mut time = Vec::with_capacity(steps + 1);

        let n = b.a.nrows();
        let mut state = DVector::zeros(n + b.ak.nrows());
        let mut w = DVector::zeros(nw);
        let mut diverged_at = None;
        let record = |t: f64, s: &DVector<f64>, w: &mut DVector<f64>, series: &mut Vec<Series>, time: &mut Vec<f64>| -> Result<()> {
            let x = s.rows(0, n).into_owned();
            let xk = s.rows(n, s.len() - n).into_owned();
            reference.eval(t, w);
            let snap = self.snapshot(&b, &x, &xk, w, t)?;
            let outputs = &b.c * &x + &b.dp * &snap.p + &b.dw * &*w + &b.du * &snap.u;
            time.push(t);
            series[0].values.extend(w.iter());
            series[1].values.extend(snap.p.iter());
            series[2].values.extend(snap.u.iter());
            for (s, r) in series[3..].iter_mut().zip(sys.outputs()) {
                let range = sys.output_range(&r.name)?;
                s.values.extend(outputs.rows(range.start, range.len()).iter());
            }
            Ok(())
        };
        record(0.0, &state, &mut w, &mut series, &mut time)?;
        'outer: for k in 0..steps {
            for j in 0..substeps {
                let t = k as f64 * settings.h + j as f64 * dt;
                let mut nonlinear = |t: f64, s: &DVector<f64>| -> Result<DVector<f64>> {
                    Ok(self.derivative(&b, t, s, reference, &mut w)? - &lin * s)
                };
                let hd = 0.5 * dt;
                let eu = &half.exp * &state;
                let nu = nonlinear(t, &state)?;
                let a = &eu + &half.phi1 * &nu * hd;
                let na = nonlinear(t + hd, &a)?;
                let bb = &eu + &half.phi1 * &na * hd;
                let nb = nonlinear(t + hd, &bb)?;
                let c = &half.exp * &a + &half.phi1 * (&nb * 2.0 - &nu) * hd;
                let nc = nonlinear(t + dt, &c)?;
                state = &full.exp * &state + (&f1 * nu + &f2 * (na + nb) + &f3 * nc) * dt;
                if !(state.amax() <= settings.divergence_threshold) {
                    diverged_at = Some(t + dt);
                    break 'outer;
                }
            }
            record((k + 1) as f64 * settings.h, &state, &mut w, &mut series, &mut time)?;
        }
        let trajectory = Trajectory { time, series };
        let max_abs_q = trajectory.channel(&self.plant.unc_out)?.max_abs();
        let y = trajectory.channel("y")?;
        let terminal_error = y.at(trajectory.time.len() - 1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(SimulationOutcome { trajectory, h_internal: dt, max_abs_q, diverged_at, terminal_error })
    }
}

/// `exp(hA)` and the functions `φ_k(hA)`, k = 1..3, read off one augmented exponential.
struct Etd {
    exp: DMatrix<f64>,
    phi1: DMatrix<f64>,
    phi2: DMatrix<f64>,
    phi3: DMatrix<f64>,
}

impl Etd {
    fn new(a: &DMatrix<f64>, h: f64) -> Self {
        let n = a.nrows();
        let mut m = DMatrix::zeros(4 * n, 4 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(a * h));
        for k in 0..3 {
            m.view_mut((k * n, (k + 1) * n), (n, n)).fill_with_identity();
        }
        let e = m.exp();
        let block = |k: usize| e.view((0, k * n), (n, n)).into_owned();
        Self { exp: block(0), phi1: block(1), phi2: block(2), phi3: block(3) }
    }
}

/// Largest `‖z‖₂ / ‖w‖₂` over the excitations (zero for zero input).
pub fn empirical_l2_gain(lure: &LureLoop, excitations: &[Signal], settings: &SimSettings, exec: Execution) -> Result<f64> {
    let gains = exec.map(excitations, |sig| -> Result<f64> {
        let out = lure.simulate(sig, settings)?;
        if let Some(time) = out.diverged_at {
            return Err(Error::Diverged { time });
        }
        let ew = out.trajectory.energy("w")?;
        if ew == 0.0 {
            return Ok(0.0);
        }
        Ok((out.trajectory.energy("z")? / ew).sqrt())
    });
    gains.into_iter().try_fold(0.0f64, |m, g| Ok(m.max(g?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::Channel;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    /// `ẋ = a x - p + w + u`, `q = u`, `z = x`, `y = w - x`.
    fn plant(a: f64) -> GeneralizedPlant {
        let sys = StateSpace::new(
            m(1, 1, &[a]),
            m(1, 3, &[-1.0, 1.0, 1.0]),
            m(3, 1, &[0.0, 1.0, -1.0]),
            m(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            vec![Channel::new("p", 1), Channel::new("w", 1), Channel::new("u", 1)],
            vec![Channel::new("q", 1), Channel::new("z", 1), Channel::new("y", 1)],
        )
        .unwrap();
        GeneralizedPlant::new(sys).unwrap()
    }

    fn pi_controller() -> StateSpace {
        StateSpace::from_matrices(m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[2.0])).unwrap()
    }

    fn settings(h: f64, horizon: f64) -> SimSettings {
        SimSettings { h, horizon, ..SimSettings::default() }
    }

    #[test]
    fn tracking_error_vanishes_with_integral_action() {
        let lure = LureLoop::new(plant(-1.0), pi_controller(), Arc::new(|_| 0.0)).unwrap();
        let out = lure.simulate(&Signal::step(vec![1.0]), &settings(0.01, 30.0)).unwrap();
        assert!(out.bounded());
        assert!(out.terminal_error < 0.05, "{}", out.terminal_error);
    }

    #[test]
    fn unstable_open_loop_diverges() {
        let zero = StateSpace::gain(DMatrix::zeros(1, 1));
        let lure = LureLoop::new(plant(1.0), zero, Arc::new(|_| 0.0)).unwrap();
        let out = lure.simulate(&Signal::step(vec![1.0]), &settings(0.01, 100.0)).unwrap();
        assert!(out.diverged_at.is_some());
        assert!(!out.bounded());
    }

    #[test]
    fn linear_gain_matches_matrix_exponential() {
        let kappa = 0.3;
        let lure = LureLoop::new(plant(-1.0), pi_controller(), Arc::new(move |v| kappa * v)).unwrap();
        let out = lure.simulate(&Signal::step(vec![1.0]), &settings(0.01, 5.0)).unwrap();
        // Closed loop: u = 2y + xk, y = 1 - x, ẋ = -x + (1-κ)u + 1, ẋk = y.
        let g = 1.0 - kappa;
        let acl = m(2, 2, &[-1.0 - 2.0 * g, g, -1.0, 0.0]);
        let bcl = m(2, 1, &[1.0 + 2.0 * g, 1.0]);
        let mut aug = DMatrix::zeros(3, 3);
        aug.view_mut((0, 0), (2, 2)).copy_from(&acl);
        aug.view_mut((0, 2), (2, 1)).copy_from(&bcl);
        let z = out.trajectory.channel("z").unwrap();
        let scale = z.sup_norm();
        for k in [50, 200, 500] {
            let t = out.trajectory.time[k];
            let e = (&aug * t).exp();
            let x = e[(0, 2)];
            assert!((z.at(k)[0] - x).abs() <= 1e-6 * scale, "t={t}: {} vs {x}", z.at(k)[0]);
        }
    }

    #[test]
    fn fast_controller_pole_needs_no_small_steps() {
        let phi: Nonlinearity = Arc::new(|v: f64| 0.2 * v.tanh());
        let fast = StateSpace::from_matrices(
            m(2, 2, &[0.0, 0.0, 0.0, -1e5]),
            m(2, 1, &[1.0, 1e5]),
            m(1, 2, &[1.0, 2.0]),
            m(1, 1, &[0.0]),
        )
        .unwrap();
        let a = LureLoop::new(plant(-1.0), fast, phi.clone()).unwrap().simulate(&Signal::step(vec![1.0]), &settings(0.01, 10.0)).unwrap();
        let b = LureLoop::new(plant(-1.0), pi_controller(), phi).unwrap().simulate(&Signal::step(vec![1.0]), &settings(0.01, 10.0)).unwrap();
        assert!(a.diverged_at.is_none());
        let (za, zb) = (a.trajectory.channel("z").unwrap(), b.trajectory.channel("z").unwrap());
        let diff = (10..a.trajectory.time.len()).map(|k| (za.at(k)[0] - zb.at(k)[0]).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-3 * zb.sup_norm(), "{diff}");
    }

    #[test]
    fn halving_the_step_barely_changes_the_trajectory() {
        let lure = LureLoop::new(plant(-1.0), pi_controller(), Arc::new(|v: f64| 0.2 * v.tanh())).unwrap();
        let a = lure.simulate(&Signal::step(vec![1.0]), &settings(0.02, 10.0)).unwrap();
        let b = lure.simulate(&Signal::step(vec![1.0]), &settings(0.01, 10.0)).unwrap();
        let (za, zb) = (a.trajectory.channel("z").unwrap(), b.trajectory.channel("z").unwrap());
        let diff = (0..a.trajectory.time.len()).map(|k| (za.at(k)[0] - zb.at(2 * k)[0]).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4 * zb.sup_norm(), "{diff}");
    }

    #[test]
    fn sinusoid_gain_approaches_frequency_response() {
        let kappa = 0.2;
        let lure = LureLoop::new(plant(-1.0), pi_controller(), Arc::new(move |v| kappa * v)).unwrap();
        let g = 1.0 - kappa;
        let cl = StateSpace::from_matrices(
            m(2, 2, &[-1.0 - 2.0 * g, g, -1.0, 0.0]),
            m(2, 1, &[1.0 + 2.0 * g, 1.0]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 1, &[0.0]),
        )
        .unwrap();
        let (peak, omega) = cl.peak_gain_on_grid(1e-2, 1e2, 2000).unwrap();
        let sig = Signal::Sine { amplitude: vec![1.0], phase: vec![0.0], omega };
        let gain = empirical_l2_gain(&lure, &[sig], &settings(0.01, 400.0), Execution::Sequential).unwrap();
        assert!((gain - peak).abs() <= 0.05 * peak, "{gain} vs {peak}");
    }

    #[test]
    fn zero_excitation_has_zero_gain() {
        let lure = LureLoop::new(plant(-1.0), pi_controller(), Arc::new(|v| 0.1 * v)).unwrap();
        let g = empirical_l2_gain(&lure, &[Signal::Zero], &settings(0.05, 5.0), Execution::Sequential).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn band_limited_noise_is_reproducible() {
        let a = Signal::band_limited(2, 0.3, 1.0, 8, 7).unwrap();
        let b = Signal::band_limited(2, 0.3, 1.0, 8, 7).unwrap();
        assert_eq!(a, b);
        let mut out = DVector::zeros(2);
        a.eval(3.0, &mut out);
        assert!(out.amax() > 0.0);
        assert!(Signal::step(vec![1.0]).check_width(2).is_err());
    }

    #[test]
    fn csv_has_named_columns() {
        let lure = LureLoop::new(plant(-1.0), pi_controller(), Arc::new(|_| 0.0)).unwrap();
        let out = lure.simulate(&Signal::step(vec![1.0]), &settings(0.1, 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        out.trajectory.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("t,w1,p1,u1,q1,z1,y1"));
        assert_eq!(text.lines().count(), 12);
    }
}
