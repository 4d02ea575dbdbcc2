//! Configuration-driven experiments on the distillation-column benchmark:
//! synthesis for an a-priori sector, synthesis for a sector learned from
//! noisy samples, and a sweep over data-set sizes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gp::{self, Dataset, Kernel, NoiseModel, RkhsFunction};
use crate::iqc::MultiplierSet;
use crate::lti::{self, StateSpace};
use crate::sector::{self, SectorBounds, SectorOptions};
use crate::sim::{self, LureLoop, Nonlinearity, SimSettings, Signal};
use crate::synthesis::{self, GeneralizedPlant, LoopOptions, LoopStatus, StopRule, SynthesisOptions, SynthesisReport};

/// Coefficients of the default ground truth on 12 equispaced centers.
pub const TRUTH_COEFFS: [f64; 12] = [
    -18.54926709899313,
    22.653866297923063,
    12.433048607650822,
    -27.835648498192977,
    1.144546587388259,
    0.06628322853243956,
    -9.446204258529106,
    -6.031460141949079,
    -2.751032691262966,
    -0.08108596164632133,
    6.482110394419997,
    -2.8419999824220192,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub gain: [[f64; 2]; 2],
    pub time_constant: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { gain: [[87.8, -86.4], [108.2, -109.6]], time_constant: 75.0 }
    }
}

/// `(num1 s + num0) / (den1 s + den0)` on each channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrderWeight {
    pub num1: f64,
    pub num0: f64,
    pub den1: f64,
    pub den0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub error: FirstOrderWeight,
    pub control: FirstOrderWeight,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            error: FirstOrderWeight { num1: 1.0, num0: 0.1, den1: 2.0, den0: 1e-5 },
            control: FirstOrderWeight { num1: 1.0, num0: 10.0, den1: 1.0, den0: 100.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub lengthscale: f64,
    pub variance: f64,
    /// Condition the kernel so that every function vanishes at the origin.
    pub zero_at_origin: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { lengthscale: 0.5, variance: 0.5, zero_at_origin: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInterpretation {
    /// `level` is the noise variance.
    Variance,
    /// `level` is the noise standard deviation.
    StdDev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub level: f64,
    pub interpretation: NoiseInterpretation,
    /// Regularization `λ`; defaults to the noise variance.
    pub lambda: Option<f64>,
    /// Subgaussian parameter `R`; defaults to the noise standard deviation.
    pub subgaussian_r: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { level: 0.05, interpretation: NoiseInterpretation::Variance, lambda: None, subgaussian_r: None }
    }
}

impl NoiseConfig {
    pub fn std_dev(&self) -> f64 {
        match self.interpretation {
            NoiseInterpretation::Variance => self.level.sqrt(),
            NoiseInterpretation::StdDev => self.level,
        }
    }

    pub fn model(&self) -> NoiseModel {
        let sd = self.std_dev();
        NoiseModel { subgaussian_r: self.subgaussian_r.unwrap_or(sd), lambda: self.lambda.unwrap_or(sd * sd) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub centers: Vec<f64>,
    pub coeffs: Vec<f64>,
    /// RKHS norm the expansion is rescaled to.
    pub target_norm: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { centers: gp::linspace(-1.0, 1.0, TRUTH_COEFFS.len()), coeffs: TRUTH_COEFFS.to_vec(), target_norm: 2.6053 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 50, sizes: vec![100, 150, 200, 250, 300], trials: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub iterations: usize,
    pub rel_tol: f64,
    pub stop_rule: StopRule,
    pub backoff: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { iterations: 20, rel_tol: 1e-3, stop_rule: StopRule::EarlyStop, backoff: 1e-3 }
    }
}

impl SynthesisConfig {
    pub fn loop_options(&self) -> LoopOptions {
        LoopOptions {
            max_iters: self.iterations,
            rel_tol: self.rel_tol,
            stop_rule: self.stop_rule,
            synthesis: SynthesisOptions { backoff: self.backoff, ..SynthesisOptions::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub h: f64,
    pub horizon: f64,
    pub step_amplitude: f64,
    /// Number of band-limited excitations for the empirical gain.
    pub excitations: usize,
    pub noise_rms: f64,
    pub noise_cutoff: f64,
    pub noise_components: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            h: 0.01,
            horizon: 600.0,
            step_amplitude: 0.1,
            excitations: 20,
            noise_rms: 0.1,
            noise_cutoff: 1.0,
            noise_components: 20,
        }
    }
}

impl SimulationConfig {
    pub fn settings(&self) -> SimSettings {
        SimSettings { h: self.h, horizon: self.horizon, ..SimSettings::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub delta: f64,
    /// `B` is this factor times the RKHS norm of the ground truth.
    pub b_factor: f64,
    pub prior_sector: (f64, f64),
    /// One learned function serves every channel, so the whole failure
    /// budget goes to it.
    pub shared_function: bool,
    pub plant: PlantConfig,
    pub weights: WeightsConfig,
    pub kernel: KernelConfig,
    pub noise: NoiseConfig,
    pub truth: TruthConfig,
    pub data: DataConfig,
    pub sector: SectorOptions,
    pub synthesis: SynthesisConfig,
    pub simulation: SimulationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            delta: 1e-3,
            b_factor: 2.0,
            prior_sector: (-0.9, 0.9),
            shared_function: true,
            plant: PlantConfig::default(),
            weights: WeightsConfig::default(),
            kernel: KernelConfig::default(),
            noise: NoiseConfig::default(),
            truth: TruthConfig::default(),
            data: DataConfig::default(),
            sector: SectorOptions::default(),
            synthesis: SynthesisConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1)")?;
        ensure(self.b_factor > 0.0 && self.b_factor.is_finite(), "b_factor must be positive")?;
        let (k1, k2) = self.prior_sector;
        ensure(k1 <= k2, "prior sector must satisfy kappa1 <= kappa2")?;
        ensure(self.plant.time_constant > 0.0, "plant time constant must be positive")?;
        ensure(self.plant.gain.iter().flatten().all(|v| v.is_finite()), "plant gain must be finite")?;
        for w in [&self.weights.error, &self.weights.control] {
            ensure(w.den1 > 0.0 && w.den0 > 0.0, "weights must be stable with positive denominator coefficients")?;
        }
        ensure(self.kernel.lengthscale > 0.0 && self.kernel.variance > 0.0, "kernel hyperparameters must be positive")?;
        ensure(self.noise.level >= 0.0, "noise level must be non-negative")?;
        ensure(self.noise.model().lambda > 0.0, "lambda must be positive; set noise.lambda for noiseless data")?;
        ensure(self.noise.model().subgaussian_r >= 0.0, "subgaussian_r must be non-negative")?;
        ensure(
            self.truth.centers.len() == self.truth.coeffs.len() && !self.truth.centers.is_empty(),
            "truth needs as many centers as coefficients",
        )?;
        ensure(self.truth.target_norm > 0.0, "truth target_norm must be positive")?;
        ensure(self.data.n >= 1, "data.n must be at least 1")?;
        ensure(self.data.sizes.iter().all(|&n| n >= 1), "data sizes must be at least 1")?;
        ensure(self.data.trials >= 1, "data.trials must be at least 1")?;
        ensure(self.sector.a < 0.0 && self.sector.b > 0.0, "sector domain must contain 0")?;
        ensure(self.synthesis.rel_tol >= 0.0, "synthesis.rel_tol must be non-negative")?;
        ensure(self.synthesis.backoff > 0.0, "synthesis.backoff must be positive")?;
        ensure(self.simulation.h > 0.0 && self.simulation.horizon > self.simulation.h, "need 0 < h < horizon")?;
        Ok(())
    }

    pub fn plant(&self) -> Result<GeneralizedPlant> {
        let tau = self.plant.time_constant;
        let gain = DMatrix::from_fn(2, 2, |i, j| self.plant.gain[i][j]);
        let g = StateSpace::from_matrices(DMatrix::identity(2, 2) * (-1.0 / tau), gain / tau, DMatrix::identity(2, 2), DMatrix::zeros(2, 2))?;
        let weight = |w: &FirstOrderWeight| lti::tf::repeat(&lti::tf::biproper(w.num1, w.num0, w.den1, w.den0), 2);
        synthesis::tracking_plant(&g, &weight(&self.weights.error), &weight(&self.weights.control))
    }

    pub fn kernel(&self) -> Result<Kernel> {
        let base = Kernel::squared_exponential(self.kernel.lengthscale, self.kernel.variance)?;
        if self.kernel.zero_at_origin {
            Kernel::zero_at_origin(base)
        } else {
            Ok(base)
        }
    }

    pub fn truth(&self) -> Result<RkhsFunction> {
        RkhsFunction::new(self.kernel()?, self.truth.centers.clone(), self.truth.coeffs.clone())?.scaled_to_norm(self.truth.target_norm)
    }

    pub fn rkhs_bound(&self) -> f64 {
        self.b_factor * self.truth.target_norm
    }

    /// Per-channel failure probability.
    pub fn delta_share(&self) -> Result<f64> {
        Ok(sector::split_delta(self.delta, 2, self.shared_function)?[0])
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed of trial `index`, with independent input and noise streams.
pub fn trial_rngs(master: u64, index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let seed = splitmix(master ^ splitmix(index));
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(0);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(1);
    (data, noise)
}

/// Smallest and largest `φ(x)/x` on a uniform grid of `[a, b]` without 0.
pub fn grid_sector(f: impl Fn(f64) -> f64, (a, b): (f64, f64), points: usize) -> (f64, f64) {
    gp::linspace(a, b, points)
        .into_iter()
        .filter(|x| *x != 0.0)
        .map(|x| f(x) / x)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

#[derive(Clone, Debug)]
pub struct LearnedSector {
    pub dataset: Dataset,
    pub posterior: gp::GpPosterior,
    pub sector: SectorBounds,
}

/// Samples `n` noisy evaluations of the ground truth and extracts the
/// certified sector.
pub fn learn_sector(cfg: &ExperimentConfig, n: usize, trial: u64, exec: Execution) -> Result<LearnedSector> {
    let truth = cfg.truth()?;
    let (mut data_rng, mut noise_rng) = trial_rngs(cfg.seed, trial);
    let (a, b) = (cfg.sector.a, cfg.sector.b);
    let x: Vec<f64> = (0..n).map(|_| data_rng.random_range(a..=b)).collect();
    let sd = cfg.noise.std_dev();
    let y: Vec<f64> = if sd > 0.0 {
        let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        x.iter().map(|xi| truth.eval(*xi) + normal.sample(&mut noise_rng)).collect()
    } else {
        x.iter().map(|xi| truth.eval(*xi)).collect()
    };
    let dataset = Dataset::new(x, y, cfg.noise.model())?;
    let posterior = gp::fit(&cfg.kernel()?, &dataset, cfg.rkhs_bound(), cfg.delta_share()?)?;
    let sector = sector::extract_sector(&posterior, &cfg.sector, exec)?;
    Ok(LearnedSector { dataset, posterior, sector })
}

fn truth_nonlinearity(cfg: &ExperimentConfig) -> Result<Nonlinearity> {
    let f = cfg.truth()?;
    Ok(Arc::new(move |x| f.eval(x)))
}

/// Closed-loop simulation with the ground truth in the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub step_bounded: bool,
    pub step_max_abs_q: Vec<f64>,
    pub step_terminal_error: f64,
    pub empirical_gain: Option<f64>,
    /// `q` stayed inside the sector domain in every run.
    pub q_contained: bool,
    pub note: String,
}

pub fn simulate_with_truth(cfg: &ExperimentConfig, controller: &StateSpace, exec: Execution) -> Result<(SimulationSummary, sim::Trajectory)> {
    let lure = LureLoop::new(cfg.plant()?, controller.clone(), truth_nonlinearity(cfg)?)?;
    let settings = cfg.simulation.settings();
    let amp = cfg.simulation.step_amplitude;
    let step = lure.simulate(&Signal::step(vec![amp, amp]), &settings)?;
    let (a, b) = (cfg.sector.a, cfg.sector.b);
    let mut contained = step.q_within(a, b)?;
    let excitations = (0..cfg.simulation.excitations)
        .map(|k| {
            Signal::band_limited(
                2,
                cfg.simulation.noise_rms,
                cfg.simulation.noise_cutoff,
                cfg.simulation.noise_components,
                splitmix(cfg.seed.wrapping_add(1000 + k as u64)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut note = String::new();
    let empirical_gain = if step.bounded() && !excitations.is_empty() {
        let runs = exec.map(&excitations, |sig| lure.simulate(sig, &settings));
        let mut gain = 0.0f64;
        let mut ok = true;
        for r in runs {
            let r = r?;
            if !r.bounded() {
                ok = false;
                note = format!("excitation diverged at t = {}", r.diverged_at.unwrap_or(f64::NAN));
                break;
            }
            contained &= r.q_within(a, b)?;
            let ew = r.trajectory.energy("w")?;
            if ew > 0.0 {
                gain = gain.max((r.trajectory.energy("z")? / ew).sqrt());
            }
        }
        ok.then_some(gain)
    } else {
        None
    };
    if !contained {
        note.push_str("q left the certified domain; the sector bound does not cover the run");
    }
    Ok((
        SimulationSummary {
            step_bounded: step.bounded(),
            step_max_abs_q: step.max_abs_q.clone(),
            step_terminal_error: step.terminal_error,
            empirical_gain,
            q_contained: contained,
            note,
        },
        step.trajectory,
    ))
}

/// Human-readable probability attached to a certificate.
pub fn probability_statement(report: &SynthesisReport) -> String {
    match report.final_gamma() {
        None => "no certificate".into(),
        Some(g) if report.delta > 0.0 => format!(
            "with probability at least {} over the data, the controller stabilizes the true system with robust performance level {g}",
            1.0 - report.delta
        ),
        Some(g) => format!("given the a-priori sector, the controller stabilizes the system with robust performance level {g}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub kind: String,
    pub status: LoopStatus,
    pub sectors: Vec<(f64, f64)>,
    pub delta: f64,
    pub nominal_gamma: f64,
    pub initial_gamma: Option<f64>,
    pub final_gamma: Option<f64>,
    pub accepted_iterations: usize,
    pub replay_margin: Option<f64>,
    pub replay_passed: bool,
    pub statement: String,
    pub true_sector: Option<(f64, f64)>,
    pub simulation: Option<SimulationSummary>,
    /// Set when the sectors are a reporting average rather than a
    /// certified bound.
    pub averaged_sector: bool,
}

/// Outcome of a single synthesis experiment.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: SynthesisReport,
    pub summary: ExperimentSummary,
    pub learned: Option<LearnedSector>,
}

pub const REPLAY_TOL: f64 = 1e-7;

fn summarize(kind: &str, plant: &GeneralizedPlant, report: &SynthesisReport) -> Result<ExperimentSummary> {
    let check = match report.certificate {
        Some(_) => Some(report.replay(plant)?),
        None => None,
    };
    Ok(ExperimentSummary {
        kind: kind.into(),
        status: report.status,
        sectors: report.sectors.clone(),
        delta: report.delta,
        nominal_gamma: report.nominal_gamma,
        initial_gamma: report.initial_gamma,
        final_gamma: report.final_gamma(),
        accepted_iterations: report.iterations.iter().filter(|r| r.accepted).count(),
        replay_margin: check.as_ref().map(|c| c.lmi_margin),
        replay_passed: check.is_some_and(|c| c.passed(REPLAY_TOL)),
        statement: probability_statement(report),
        true_sector: None,
        simulation: None,
        averaged_sector: false,
    })
}

/// Synthesis for a repeated sector on both channels.
pub fn synthesize_for_sector(cfg: &ExperimentConfig, kappa: (f64, f64), delta: f64) -> Result<(GeneralizedPlant, SynthesisReport)> {
    let plant = cfg.plant()?;
    let set = MultiplierSet::repeated(kappa.0, kappa.1, 2)?;
    let report = synthesis::robust_synthesis_loop(&plant, &set, delta, &cfg.synthesis.loop_options())?;
    Ok((plant, report))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_levels(path: PathBuf, report: &SynthesisReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "start_gamma", "synthesis_gamma", "candidate_gamma", "accepted"])?;
    let opt = |v: Option<f64>| v.map(|g| g.to_string()).unwrap_or_default();
    for r in &report.iterations {
        w.write_record([r.index.to_string(), r.start_gamma.to_string(), opt(r.synthesis_gamma), opt(r.candidate_gamma), r.accepted.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_outcome(dir: &Path, out: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(dir.join("report.json"), &out.report)?;
    write_json(dir.join("controller.json"), &out.report.controller)?;
    if let Some(cert) = &out.report.certificate {
        write_json(dir.join("certificate.json"), cert)?;
    }
    write_json(dir.join("summary.json"), &out.summary)?;
    write_levels(dir.join("levels.csv"), &out.report)
}

/// Synthesis for the a-priori sector.
pub fn run_prior_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (plant, report) = synthesize_for_sector(cfg, cfg.prior_sector, 0.0)?;
    let summary = summarize("prior", &plant, &report)?;
    let outcome = ExperimentOutcome { report, summary, learned: None };
    if let Some(dir) = out {
        write_outcome(dir, &outcome)?;
    }
    Ok(outcome)
}

/// Learns the sector from `cfg.data.n` samples, synthesizes for it and
/// simulates the final loop with the ground truth.
pub fn run_learned_experiment(cfg: &ExperimentConfig, out: Option<&Path>, exec: Execution) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let learned = learn_sector(cfg, cfg.data.n, 0, exec)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        learned.dataset.write_csv(dir.join("dataset.csv"))?;
        learned.posterior.write_band_csv(dir.join("band.csv"), &gp::linspace(cfg.sector.a, cfg.sector.b, 401))?;
        write_json(dir.join("sector.json"), &learned.sector)?;
    }
    let s = &learned.sector;
    if !s.sign_ok() {
        return Err(Error::Assumption(format!("learned sector [{}, {}] does not bracket zero", s.kappa1, s.kappa2)));
    }
    let (plant, report) = synthesize_for_sector(cfg, (s.kappa1, s.kappa2), cfg.delta)?;
    let mut summary = summarize("learned", &plant, &report)?;
    let truth = cfg.truth()?;
    summary.true_sector = Some(grid_sector(|x| truth.eval(x), (cfg.sector.a, cfg.sector.b), 100_001));
    if report.certificate.is_some() {
        let (sim_summary, traj) = simulate_with_truth(cfg, &report.controller, exec)?;
        if let Some(dir) = out {
            traj.write_csv(dir.join("trajectory.csv"))?;
        }
        summary.simulation = Some(sim_summary);
    }
    let outcome = ExperimentOutcome { report, summary, learned: Some(learned) };
    if let Some(dir) = out {
        write_outcome(dir, &outcome)?;
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub trials: usize,
    pub kappa1_mean: f64,
    pub kappa1_std: f64,
    pub kappa2_mean: f64,
    pub kappa2_std: f64,
    pub width_median: f64,
    /// Trials whose sector failed to bracket zero or errored.
    pub failed_trials: usize,
    pub gamma: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `(n, trial, κ̂₁, κ̂₂)` for every successful trial.
    pub trials: Vec<(usize, usize, f64, f64)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sector statistics per data-set size and synthesis on the trial-averaged
/// sector of each size.
pub fn run_tradeoff_sweep(cfg: &ExperimentConfig, out: Option<&Path>, exec: Execution) -> Result<SweepTable> {
    cfg.validate()?;
    let sizes = cfg.data.sizes.clone();
    let trials = cfg.data.trials;
    let cells: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(i, _)| (0..trials).map(move |t| (i, t))).collect();
    let learned = exec.map(&cells, |&(i, t)| {
        learn_sector(cfg, sizes[i], (i * trials + t) as u64, Execution::Sequential).map(|l| (l.sector.kappa1, l.sector.kappa2))
    });

    let mut table = SweepTable { rows: Vec::new(), trials: Vec::new() };
    let mut averaged = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut k1 = Vec::new();
        let mut k2 = Vec::new();
        let mut failed = 0;
        for (t, r) in learned[i * trials..(i + 1) * trials].iter().enumerate() {
            match r {
                Ok((a, b)) if *a <= 0.0 && 0.0 <= *b => {
                    k1.push(*a);
                    k2.push(*b);
                    table.trials.push((n, t, *a, *b));
                }
                _ => failed += 1,
            }
        }
        let widths: Vec<f64> = k1.iter().zip(&k2).map(|(a, b)| b - a).collect();
        let (m1, s1) = if k1.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&k1) };
        let (m2, s2) = if k2.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&k2) };
        averaged.push((m1, m2));
        table.rows.push(SweepRow {
            n,
            trials,
            kappa1_mean: m1,
            kappa1_std: s1,
            kappa2_mean: m2,
            kappa2_std: s2,
            width_median: median(&widths),
            failed_trials: failed,
            gamma: None,
            status: String::new(),
        });
    }

    let delta = cfg.delta;
    let reports = exec.map(&averaged, |&(m1, m2)| -> Result<(GeneralizedPlant, SynthesisReport)> {
        if !(m1.is_finite() && m2.is_finite()) {
            return Err(Error::Assumption("no trial produced a sector bracketing zero".into()));
        }
        synthesize_for_sector(cfg, (m1, m2), delta)
    });
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    for (row, rep) in table.rows.iter_mut().zip(reports) {
        match rep {
            Ok((plant, report)) => {
                row.gamma = report.final_gamma();
                row.status = format!("{:?}", report.status);
                if let Some(dir) = out {
                    let mut summary = summarize("sweep", &plant, &report)?;
                    summary.averaged_sector = true;
                    let o = ExperimentOutcome { report, summary, learned: None };
                    write_outcome(&dir.join(format!("n{}", row.n)), &o)?;
                }
            }
            Err(e) => row.status = format!("error: {e}"),
        }
    }
    if let Some(dir) = out {
        write_sweep_csv(dir, &table)?;
    }
    Ok(table)
}

fn write_sweep_csv(dir: &Path, table: &SweepTable) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record([
        "n",
        "trials",
        "kappa1_mean",
        "kappa1_std",
        "kappa2_mean",
        "kappa2_std",
        "width_median",
        "failed_trials",
        "gamma",
        "status",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.n.to_string(),
            r.trials.to_string(),
            r.kappa1_mean.to_string(),
            r.kappa1_std.to_string(),
            r.kappa2_mean.to_string(),
            r.kappa2_std.to_string(),
            r.width_median.to_string(),
            r.failed_trials.to_string(),
            r.gamma.map(|g| g.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("sweep_trials.csv"))?;
    w.write_record(["n", "trial", "kappa1", "kappa2"])?;
    for (n, t, a, b) in &table.trials {
        w.write_record([n.to_string(), t.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Replays the certificate of a stored report on the configured plant.
pub fn replay_report(cfg: &ExperimentConfig, report: &SynthesisReport) -> Result<synthesis::CertificateCheck> {
    report.replay(&cfg.plant()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("seed = 7\n[data]\nn = 10\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.data.n, 10);
        assert_eq!(partial.data.trials, 50);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig::from_toml("delta = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("prior_sector = [0.5, -0.5]").is_err());
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("[noise]\nlevel = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("[noise]\nlevel = 0.0\nlambda = 1e-6").is_ok());
    }

    #[test]
    fn default_truth_matches_its_published_properties() {
        let cfg = ExperimentConfig::default();
        let f = cfg.truth().unwrap();
        assert!((f.norm() - 2.6053).abs() < 1e-9);
        assert_eq!(f.eval(0.0), 0.0);
        let (lo, hi) = grid_sector(|x| f.eval(x), (-1.0, 1.0), 100_001);
        assert!((lo + 0.0572).abs() < 5e-4, "{lo}");
        assert!((hi - 0.3575).abs() < 5e-4, "{hi}");
    }

    #[test]
    fn noise_interpretations() {
        let n = NoiseConfig::default();
        assert!((n.std_dev() - 0.05f64.sqrt()).abs() < 1e-15);
        assert!((n.model().lambda - 0.05).abs() < 1e-15);
        let s = NoiseConfig { interpretation: NoiseInterpretation::StdDev, ..n };
        assert_eq!(s.std_dev(), 0.05);
    }

    #[test]
    fn trial_streams_are_deterministic_and_distinct() {
        let (mut a, mut b) = trial_rngs(3, 5);
        let (mut c, _) = trial_rngs(3, 5);
        let x: u64 = a.random();
        assert_eq!(x, c.random::<u64>());
        assert_ne!(x, b.random::<u64>());
        let (mut d, _) = trial_rngs(3, 6);
        assert_ne!(trial_rngs(3, 5).0.random::<u64>(), d.random::<u64>());
    }

    #[test]
    fn learned_sector_contains_truth() {
        let cfg = ExperimentConfig::default();
        let l = learn_sector(&cfg, 50, 0, Execution::Sequential).unwrap();
        let truth = cfg.truth().unwrap();
        let (lo, hi) = grid_sector(|x| truth.eval(x), (-1.0, 1.0), 10_001);
        assert!(l.sector.kappa1 <= lo && hi <= l.sector.kappa2, "{:?}", l.sector);
        assert_eq!(l.sector.delta_share, 1e-3);
        let again = learn_sector(&cfg, 50, 0, Execution::Parallel).unwrap();
        assert_eq!(again.sector, l.sector);
    }

    #[test]
    fn plant_matches_the_benchmark() {
        let plant = ExperimentConfig::default().plant().unwrap();
        let (g, we, wu) = synthesis::distillation_column();
        let reference = synthesis::tracking_plant(&g, &we, &wu).unwrap();
        assert_eq!(plant, reference);
    }
}
