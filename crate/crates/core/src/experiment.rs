//! Experiment configuration, seeded replicate runs, aggregation and CSV output.
//!
//! A configuration is a TOML document; every section is optional and falls
//! back to the platooning defaults. Replicate `r` of an experiment with base
//! seed `s` runs with seed `s + r`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agp::{self, BeliefMode, Beliefs, FeedbackSchedule, LoopSetup, StepOutcome, UserModel, UserTruth};
use crate::baselines::{self, SyntheticUserModel, ZeroOrder};
use crate::error::{Error, Result};
use crate::gp::{closest_path_seed, sample_path, GpPosterior, PathSampler, SamplePath};
use crate::kernels::KernelSpec;
use crate::objectives::{default_q, EngineeringObjective, Tick, TimeVaryingQuadratic, Trajectory};
use crate::regret::{
    info_gain_greedy, theoretical_bound, BoundInputs, BoundTerms, LearningRateTracker, OptimumTable, RegretLedger,
    UcNormalizer,
};
use crate::solver::{linspace, maximize_on_box, BoxDomain, FnSmooth, SolverConfig};
use crate::ucb::ConfidenceParams;

/// Scale mapping a unit decision to a real inter-vehicle distance.
pub const DISTANCE_SCALE: f64 = 3.0;

/// Which algorithm a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    AgpUcb,
    Synthetic,
    Zero2,
    Zero4,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Self::AgpUcb => "agp_ucb",
            Self::Synthetic => "synthetic",
            Self::Zero2 => "zero2",
            Self::Zero4 => "zero4",
        }
    }

    pub const ALL: [Algorithm; 4] = [Self::AgpUcb, Self::Synthetic, Self::Zero2, Self::Zero4];
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}` (expected agp_ucb, synthetic, zero2 or zero4)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub omega: f64,
    pub trajectory: Trajectory,
    pub q: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            omega: 0.0,
            trajectory: Trajectory::Periodic,
            q: default_q(2),
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub delta: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            a: 1.1,
            b: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Standard deviation of the feedback noise.
    pub noise_std: f64,
    /// Noise variance assumed by the GP; `noise_std²` when absent.
    pub gp_noise_variance: Option<f64>,
    pub schedule: FeedbackSchedule,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.1,
            gp_noise_variance: None,
            schedule: FeedbackSchedule::EveryStep,
        }
    }
}

/// Ground truth of the simulated users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    /// Log-normal profiles with one shape per user.
    LogNormal { xi: Vec<f64> },
    /// For each user, the GP sample path closest to the log-normal profile
    /// with shape `xi[i]` among seeds `seed..seed + candidates`, restricted to
    /// paths that are positive on the lattice and peak within `peak_tolerance`
    /// of the profile's maximizer. Users get distinct seeds.
    LogNormalPath {
        xi: Vec<f64>,
        grid_resolution: usize,
        seed: u64,
        candidates: u64,
        peak_tolerance: f64,
    },
    /// Independent 1-D GP sample paths drawn with seeds `seed + i`.
    GpSample { grid_resolution: usize, seed: u64 },
    Zero,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self::LogNormalPath {
            xi: vec![0.6, 0.7],
            grid_resolution: 101,
            seed: 0,
            candidates: 20_000,
            peak_tolerance: 0.05,
        }
    }
}

/// Sample paths chosen as described for [`TruthConfig::LogNormalPath`];
/// returns the chosen seeds alongside the paths.
pub fn lognormal_like_paths(
    kernel: KernelSpec,
    xi: &[f64],
    grid_resolution: usize,
    seed: u64,
    candidates: u64,
    peak_tolerance: f64,
) -> Result<Vec<(u64, SamplePath)>> {
    let sampler = PathSampler::new(kernel, &BoxDomain::unit(1), grid_resolution)?;
    let nodes: Vec<f64> = sampler.grid().iter().map(|g| g[0]).collect();
    let mut chosen: Vec<u64> = Vec::with_capacity(xi.len());
    for &shape in xi {
        let peak = baselines::lognormal_argmax(shape);
        let admissible = |v: &[f64]| {
            let top = v
                .iter()
                .enumerate()
                .fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
            v.iter().all(|x| *x > 0.0) && (nodes[top] - peak).abs() <= peak_tolerance
        };
        let pick = closest_path_seed(
            &sampler,
            |x| baselines::lognormal_value(shape, x[0]),
            admissible,
            seed,
            candidates,
            &chosen,
        )
        .map_err(|e| Error::config("truth", format!("no admissible path for xi = {shape}: {e}")))?;
        chosen.push(pick);
    }
    Ok(chosen.into_iter().map(|s| (s, sampler.path(s))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub grid_resolution: usize,
    pub polish_steps: usize,
    /// Line-search points per axis for the per-user satisfaction maxima.
    pub uc_resolution: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 501,
            polish_steps: 50,
            uc_resolution: 100_001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write GP posterior snapshots of run 0 at `snapshot_steps`.
    pub gp_snapshots: bool,
    pub snapshot_steps: Vec<u64>,
    pub snapshot_grid: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            gp_snapshots: false,
            snapshot_steps: vec![25, 100, 400],
            snapshot_grid: 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    /// Contraction factor `η`; `1 − α λ_min(Q)` when absent.
    pub eta: Option<f64>,
    /// Lattice points for the greedy information gain (raised to `T + 1`
    /// when the horizon needs more).
    pub info_gain_resolution: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            eta: None,
            info_gain_resolution: 51,
        }
    }
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of users, one decision coordinate each.
    pub users: usize,
    pub horizon: u64,
    pub runs: usize,
    pub seed: u64,
    /// Worker threads for replicate runs.
    pub workers: usize,
    /// Sampling period `h`; tick `k` is at time `k·h`.
    pub dt: f64,
    pub algorithm: Algorithm,
    pub beliefs: BeliefMode,
    /// Initial decision. When absent, the maximizer of `V(·; t_1)` plus the
    /// synthetic profiles, i.e. the best decision under the average user.
    pub x0: Option<Vec<f64>>,
    /// Shape assumed by the synthetic-model baseline.
    pub synthetic_xi: Vec<f64>,
    pub objective: ObjectiveConfig,
    pub kernel: KernelSpec,
    pub confidence: ConfidenceConfig,
    pub solver: SolverConfig,
    pub feedback: FeedbackConfig,
    pub truth: TruthConfig,
    pub oracle: OracleConfig,
    pub bounds: BoundConfig,
    pub output: OutputConfig,
    /// Record the learning-rate error `ℓ_n` (AGP-UCB, separable beliefs).
    pub track_learning_rate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            users: 2,
            horizon: 2000,
            runs: 25,
            seed: 0,
            workers: 1,
            dt: 1.0,
            algorithm: Algorithm::AgpUcb,
            beliefs: BeliefMode::Separable,
            x0: None,
            synthetic_xi: vec![0.9, 0.9],
            objective: ObjectiveConfig::default(),
            kernel: KernelSpec::default(),
            confidence: ConfidenceConfig::default(),
            solver: SolverConfig::default(),
            feedback: FeedbackConfig::default(),
            truth: TruthConfig::default(),
            oracle: OracleConfig::default(),
            bounds: BoundConfig::default(),
            output: OutputConfig::default(),
            track_learning_rate: false,
        }
    }
}

fn field<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let path = e.span().map_or_else(
                || "<document>".to_string(),
                |s| format!("line {}", text[..s.start].matches('\n').count() + 1),
            );
            Error::config(path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// Domain `[0, 1]^m`.
    pub fn domain(&self) -> BoxDomain {
        BoxDomain::unit(self.users)
    }

    pub fn noise_variance(&self) -> f64 {
        self.feedback
            .gp_noise_variance
            .unwrap_or(self.feedback.noise_std * self.feedback.noise_std)
    }

    /// Learning dimension entering `β_n`.
    pub fn learning_dim(&self) -> usize {
        match self.beliefs {
            BeliefMode::Separable => 1,
            BeliefMode::Joint => self.users,
        }
    }

    pub fn confidence_params(&self) -> ConfidenceParams {
        ConfidenceParams {
            delta: self.confidence.delta,
            d: self.learning_dim(),
            a: self.confidence.a,
            b: self.confidence.b,
            r: self.domain().side(),
        }
    }

    /// Checks every field, naming the offending one on failure.
    pub fn validate(&self) -> Result<()> {
        let m = self.users;
        if m == 0 {
            return Err(Error::config("users", "at least one user is required"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != m || !self.domain().contains(x0) {
                return Err(Error::config("x0", "must have one entry per user inside [0, 1]"));
            }
        }
        if self.synthetic_xi.len() != m || self.synthetic_xi.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("synthetic_xi", "needs one positive shape per user"));
        }
        if self.objective.q.len() != m {
            return Err(Error::config("objective.q", format!("must be {m}×{m}")));
        }
        field(
            "objective",
            TimeVaryingQuadratic::new(
                &self.objective.q,
                self.objective.omega,
                self.objective.trajectory,
                self.objective.gamma,
            )
            .map(|_| ()),
        )?;
        field("kernel", self.kernel.validate())?;
        field("confidence", self.confidence_params().validate())?;
        field("solver", self.solver.validate())?;
        if !(self.feedback.noise_std.is_finite() && self.feedback.noise_std >= 0.0) {
            return Err(Error::config("feedback.noise_std", "must be non-negative"));
        }
        if !(self.noise_variance() > 0.0) {
            return Err(Error::config("feedback.gp_noise_variance", "must be positive"));
        }
        field("feedback.schedule", self.feedback.schedule.validate())?;
        if self.beliefs == BeliefMode::Joint && m > 2 {
            return Err(Error::config("beliefs", "joint beliefs support at most 2 users"));
        }
        if matches!(self.algorithm, Algorithm::Zero2 | Algorithm::Zero4) && !self.feedback.schedule.is_every_step() {
            return Err(Error::config(
                "feedback.schedule",
                "zeroth-order baselines need feedback at every step",
            ));
        }
        match &self.truth {
            TruthConfig::LogNormal { xi } => {
                if xi.len() != m || xi.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::config("truth.xi", "needs one positive shape per user"));
                }
            }
            TruthConfig::LogNormalPath {
                xi,
                grid_resolution,
                candidates,
                peak_tolerance,
                ..
            } => {
                if xi.len() != m || xi.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::config("truth.xi", "needs one positive shape per user"));
                }
                if *grid_resolution < 2 {
                    return Err(Error::config("truth.grid_resolution", "must be at least 2"));
                }
                if *candidates < m as u64 {
                    return Err(Error::config("truth.candidates", "must be at least the number of users"));
                }
                if !(*peak_tolerance >= 0.0) {
                    return Err(Error::config("truth.peak_tolerance", "must be non-negative"));
                }
            }
            TruthConfig::GpSample { grid_resolution, .. } => {
                if *grid_resolution < 2 {
                    return Err(Error::config("truth.grid_resolution", "must be at least 2"));
                }
            }
            TruthConfig::Zero => {}
        }
        if self.oracle.grid_resolution < 2 || self.oracle.uc_resolution < 2 {
            return Err(Error::config("oracle", "resolutions must be at least 2"));
        }
        if self.output.snapshot_grid < 2 {
            return Err(Error::config("output.snapshot_grid", "must be at least 2"));
        }
        if let Some(eta) = self.bounds.eta {
            if !(0.0..1.0).contains(&eta) {
                return Err(Error::config("bounds.eta", "must lie in [0, 1)"));
            }
        }
        if self.bounds.info_gain_resolution < 2 {
            return Err(Error::config("bounds.info_gain_resolution", "must be at least 2"));
        }
        Ok(())
    }
}

/// Per-experiment state shared by every replicate: objective, users and the
/// precomputed oracle.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub objective: TimeVaryingQuadratic,
    pub users: UserModel,
    pub domain: BoxDomain,
    pub optimum: OptimumTable,
    pub uc: Option<UcNormalizer>,
    /// Initial decision shared by every replicate.
    pub x0: Vec<f64>,
}

impl Scenario {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let objective = TimeVaryingQuadratic::new(
            &config.objective.q,
            config.objective.omega,
            config.objective.trajectory,
            config.objective.gamma,
        )?;
        let domain = config.domain();
        let truths = match &config.truth {
            TruthConfig::LogNormal { xi } => xi.iter().map(|v| UserTruth::LogNormal { xi: *v }).collect(),
            TruthConfig::GpSample { grid_resolution, seed } => (0..config.users)
                .map(|i| {
                    sample_path(config.kernel, &domain.axis(i), *grid_resolution, seed.wrapping_add(i as u64))
                        .map(UserTruth::Sample)
                })
                .collect::<Result<_>>()?,
            TruthConfig::LogNormalPath {
                xi,
                grid_resolution,
                seed,
                candidates,
                peak_tolerance,
            } => lognormal_like_paths(config.kernel, xi, *grid_resolution, *seed, *candidates, *peak_tolerance)?
                .into_iter()
                .map(|(_, p)| UserTruth::Sample(p))
                .collect(),
            TruthConfig::Zero => vec![UserTruth::Zero; config.users],
        };
        let users = UserModel::new(truths, config.feedback.noise_std, config.feedback.schedule)?;
        let optimum = OptimumTable::compute(
            &objective,
            &users,
            &domain,
            config.horizon,
            config.dt,
            config.oracle.grid_resolution,
            config.oracle.polish_steps,
        )?;
        // Satisfaction ratios are undefined for users without a positive maximum.
        let uc = match config.truth {
            TruthConfig::Zero => None,
            _ => UcNormalizer::new(&users, &domain, config.oracle.uc_resolution).ok(),
        };
        let x0 = match &config.x0 {
            Some(x0) => x0.clone(),
            None => average_user_start(&config, &objective, &domain)?,
        };
        Ok(Self {
            config,
            objective,
            users,
            domain,
            optimum,
            uc,
            x0,
        })
    }

    pub fn setup(&self) -> LoopSetup<'_> {
        LoopSetup {
            objective: &self.objective,
            users: &self.users,
            solver: self.config.solver,
            params: self.config.confidence_params(),
            domain: self.domain.clone(),
            kernel: self.config.kernel,
            noise_variance: self.config.noise_variance(),
            mode: self.config.beliefs,
            dt: self.config.dt,
            x0: self.x0.clone(),
        }
    }

    /// Seed of replicate `run_id`.
    pub fn run_seed(&self, run_id: usize) -> u64 {
        self.config.seed.wrapping_add(run_id as u64)
    }
}

/// Maximizer of `V(·; t_1) + γ Σ_i U_syn(x_i)` with the synthetic shapes.
fn average_user_start(config: &ExperimentConfig, objective: &TimeVaryingQuadratic, domain: &BoxDomain) -> Result<Vec<f64>> {
    let tick = Tick::at(1, config.dt);
    let gamma = objective.gamma();
    let xi = &config.synthetic_xi;
    let phi = FnSmooth::new(
        domain.dim(),
        |x: &[f64]| {
            objective.value(x, tick) + gamma * x.iter().zip(xi).map(|(d, s)| baselines::lognormal_value(*s, *d)).sum::<f64>()
        },
        |x: &[f64]| {
            let mut g = objective.grad(x, tick);
            for ((gi, d), s) in g.iter_mut().zip(x).zip(xi) {
                *gi += gamma * baselines::lognormal_grad(*s, *d);
            }
            g
        },
    );
    let res = if domain.dim() <= 2 { 201 } else { 21 };
    Ok(maximize_on_box(&phi, domain, res, 200)?.0)
}

/// One row of a per-run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub k: u64,
    pub n: u64,
    pub t: f64,
    pub x: Vec<f64>,
    pub f_star: f64,
    pub f_x: f64,
    pub regret_inst: f64,
    pub regret_cum: f64,
    pub regret_avg: f64,
    pub uc: Vec<f64>,
    pub feedback: bool,
    pub beta_n: f64,
}

/// GP posterior of each user on a grid after step `k`, with the feedback seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: u64,
    /// `(user, d, mean, std)`.
    pub grid: Vec<(usize, f64, f64, f64)>,
    /// Feedback noise standard deviation assumed by the beliefs.
    pub noise_std: f64,
    /// `(user, d, y)`.
    pub feedback: Vec<(usize, f64, f64)>,
}

/// Everything produced by one replicate.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: usize,
    pub records: Vec<RunRecord>,
    pub ledger: RegretLedger,
    pub snapshots: Vec<Snapshot>,
    /// `ℓ_n` per feedback event when tracked.
    pub learning_rate: Vec<f64>,
}

impl RunResult {
    pub fn regret_avg(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.regret_avg).collect()
    }

    pub fn uc_rows(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.uc.clone()).collect()
    }
}

fn snapshot(beliefs: &Beliefs, k: u64, domain: &BoxDomain, points: usize) -> Result<Snapshot> {
    let Beliefs::Separable(posts) = beliefs else {
        return Err(Error::Unsupported("snapshots need separable beliefs".into()));
    };
    let mut grid = Vec::new();
    let mut feedback = Vec::new();
    let noise_std = posts.first().map_or(0.0, |p| p.noise_variance().sqrt());
    for (i, post) in posts.iter().enumerate() {
        for d in linspace(domain.lo()[i], domain.hi()[i], points) {
            grid.push((i, d, post.posterior_mean(&[d])?, post.posterior_std(&[d])?));
        }
        feedback.extend(snapshot_points(post, i));
    }
    Ok(Snapshot {
        k,
        grid,
        noise_std,
        feedback,
    })
}

fn snapshot_points(post: &GpPosterior, user: usize) -> Vec<(usize, f64, f64)> {
    (0..post.len())
        .map(|j| (user, post.input(j)[0], post.outputs()[j]))
        .collect()
}

/// Runs one replicate of `algorithm` and scores it against the oracle.
pub fn run_single(scenario: &Scenario, run_id: usize, algorithm: Algorithm) -> Result<RunResult> {
    let cfg = &scenario.config;
    let setup = scenario.setup();
    let seed = scenario.run_seed(run_id);
    let mut snapshots = Vec::new();
    let mut learning_rate = Vec::new();
    let outcomes: Vec<StepOutcome> = match algorithm {
        Algorithm::AgpUcb => {
            let want_snaps = cfg.output.gp_snapshots && run_id == 0;
            let mut tracker = (cfg.track_learning_rate && cfg.beliefs == BeliefMode::Separable).then(|| {
                LearningRateTracker::new(&cfg.kernel, &scenario.domain, 51, cfg.confidence_params())
            });
            let mut failure = None;
            let log = agp::run_with(cfg.horizon, seed, &setup, |state, out| {
                if let Some(t) = tracker.as_mut() {
                    if let Err(e) = t.observe(&state.beliefs) {
                        failure.get_or_insert(e);
                    }
                }
                if want_snaps && cfg.output.snapshot_steps.contains(&out.k) {
                    match snapshot(&state.beliefs, out.k, &scenario.domain, cfg.output.snapshot_grid) {
                        Ok(s) => snapshots.push(s),
                        Err(e) => {
                            failure.get_or_insert(e);
                        }
                    }
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            if let Some(t) = tracker {
                learning_rate = t.history;
            }
            log
        }
        Algorithm::Synthetic => {
            baselines::run_synthetic(cfg.horizon, seed, &setup, &SyntheticUserModel::new(cfg.synthetic_xi.clone())?)?
        }
        Algorithm::Zero2 => baselines::run_zero_order(cfg.horizon, seed, &setup, ZeroOrder::TwoPoint)?,
        Algorithm::Zero4 => baselines::run_zero_order(cfg.horizon, seed, &setup, ZeroOrder::FourPoint)?,
    };
    let mut ledger = RegretLedger::new();
    let gamma = scenario.objective.gamma();
    let records = outcomes
        .into_iter()
        .map(|o| {
            let tick = Tick { k: o.k, t: o.t };
            let (_, f_star) = scenario.optimum.at(o.k);
            let f_x = scenario.objective.value(&o.x, tick) + gamma * scenario.users.total(&o.x);
            ledger.push(f_star, f_x);
            let i = ledger.len() - 1;
            let uc = scenario
                .uc
                .as_ref()
                .map_or_else(|| vec![f64::NAN; o.x.len()], |u| u.uc(&scenario.users, &o.x));
            RunRecord {
                run_id,
                k: o.k,
                n: o.n,
                t: o.t,
                f_star,
                f_x,
                regret_inst: ledger.instant[i],
                regret_cum: ledger.cumulative[i],
                regret_avg: ledger.cumulative[i] / (i + 1) as f64,
                uc,
                feedback: o.feedback,
                beta_n: o.beta,
                x: o.x,
            }
        })
        .collect();
    Ok(RunResult {
        run_id,
        records,
        ledger,
        snapshots,
        learning_rate,
    })
}

/// Runs every replicate of `algorithm`, in parallel over `config.workers` threads.
pub fn run_replicates(scenario: &Scenario, algorithm: Algorithm) -> Result<Vec<RunResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(scenario.config.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..scenario.config.runs)
            .into_par_iter()
            .map(|r| run_single(scenario, r, algorithm))
            .collect()
    })
}

/// Cross-run means per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub k: Vec<u64>,
    pub regret_avg: Vec<f64>,
    pub regret_inst: Vec<f64>,
    /// `uc[step][user]`.
    pub uc: Vec<Vec<f64>>,
}

impl Aggregate {
    pub fn from_runs(runs: &[RunResult]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::invalid("no runs to aggregate"))?;
        let steps = first.records.len();
        let users = first.records.first().map_or(0, |r| r.x.len());
        let count = runs.len() as f64;
        let mut out = Self {
            k: first.records.iter().map(|r| r.k).collect(),
            regret_avg: vec![0.0; steps],
            regret_inst: vec![0.0; steps],
            uc: vec![vec![0.0; users]; steps],
        };
        for run in runs {
            if run.records.len() != steps {
                return Err(Error::invalid("runs have different lengths"));
            }
            for (i, r) in run.records.iter().enumerate() {
                out.regret_avg[i] += r.regret_avg;
                out.regret_inst[i] += r.regret_inst;
                for (a, b) in out.uc[i].iter_mut().zip(&r.uc) {
                    *a += b;
                }
            }
        }
        for i in 0..steps {
            out.regret_avg[i] /= count;
            out.regret_inst[i] /= count;
            out.uc[i].iter_mut().for_each(|v| *v /= count);
        }
        Ok(out)
    }
}

/// Float formatting used in every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header of a per-run log for `m` users.
pub fn run_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "k", "n", "t"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=m).map(|i| format!("x_{i}")));
    h.extend(
        ["f_star", "f_x", "regret_inst", "regret_cum", "regret_avg"]
            .iter()
            .map(|s| s.to_string()),
    );
    h.extend((1..=m).map(|i| format!("uc_{i}")));
    h.push("feedback".into());
    h.push("beta_n".into());
    h
}

pub fn write_run_csv(path: &Path, run: &RunResult) -> Result<()> {
    let m = run.records.first().map_or(0, |r| r.x.len());
    let mut w = create(path)?;
    w.write_record(run_header(m))?;
    for r in &run.records {
        let mut row = vec![r.run_id.to_string(), r.k.to_string(), r.n.to_string(), fmt_f64(r.t)];
        row.extend(r.x.iter().map(|v| fmt_f64(*v)));
        row.extend([r.f_star, r.f_x, r.regret_inst, r.regret_cum, r.regret_avg].map(fmt_f64));
        row.extend(r.uc.iter().map(|v| fmt_f64(*v)));
        row.push(u8::from(r.feedback).to_string());
        row.push(fmt_f64(r.beta_n));
        w.write_record(row)?;
    }
    finish(w, path)
}

pub fn write_aggregate_csv(path: &Path, agg: &Aggregate) -> Result<()> {
    let m = agg.uc.first().map_or(0, Vec::len);
    let mut w = create(path)?;
    let mut header = vec!["k".to_string(), "regret_avg".into(), "regret_inst".into()];
    header.extend((1..=m).map(|i| format!("uc_{i}")));
    w.write_record(header)?;
    for i in 0..agg.k.len() {
        let mut row = vec![agg.k[i].to_string(), fmt_f64(agg.regret_avg[i]), fmt_f64(agg.regret_inst[i])];
        row.extend(agg.uc[i].iter().map(|v| fmt_f64(*v)));
        w.write_record(row)?;
    }
    finish(w, path)
}

/// Cumulative scaled gaps `Σ_{j≤i} 3 x_j` of one run next to the same
/// quantity for the target.
pub fn write_distances_csv(path: &Path, run: &RunResult, objective: &TimeVaryingQuadratic) -> Result<()> {
    let m = run.records.first().map_or(0, |r| r.x.len());
    let mut w = create(path)?;
    let mut header = vec!["k".to_string(), "t".into()];
    header.extend((1..=m).map(|i| format!("distance_{i}")));
    header.extend((1..=m).map(|i| format!("target_distance_{i}")));
    w.write_record(header)?;
    for r in &run.records {
        let target = objective.target(Tick { k: r.k, t: r.t });
        let mut row = vec![r.k.to_string(), fmt_f64(r.t)];
        row.extend(cumulative_distances(&r.x).into_iter().map(fmt_f64));
        row.extend(cumulative_distances(&target).into_iter().map(fmt_f64));
        w.write_record(row)?;
    }
    finish(w, path)
}

/// `Σ_{j≤i} 3 x_j` for each vehicle `i`.
pub fn cumulative_distances(x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(0.0, |s, v| {
            *s += DISTANCE_SCALE * v;
            Some(*s)
        })
        .collect()
}

/// Writes the posterior grid and the feedback of one snapshot.
///
/// `lower`/`upper` bound the ±1σ predictive band of a new feedback value,
/// `latent_lower`/`latent_upper` the ±1σ band of the satisfaction itself.
pub fn write_snapshot_csvs(dir: &Path, run_id: usize, snap: &Snapshot) -> Result<(PathBuf, PathBuf)> {
    let grid_path = dir.join(format!("gp_run{run_id:03}_k{:04}.csv", snap.k));
    let mut w = create(&grid_path)?;
    w.write_record(["user", "d", "mean", "lower", "upper", "latent_lower", "latent_upper"])?;
    for (u, d, m, s) in &snap.grid {
        let p = s.hypot(snap.noise_std);
        w.write_record([
            (u + 1).to_string(),
            fmt_f64(*d),
            fmt_f64(*m),
            fmt_f64(m - p),
            fmt_f64(m + p),
            fmt_f64(m - s),
            fmt_f64(m + s),
        ])?;
    }
    finish(w, &grid_path)?;
    let fb_path = dir.join(format!("feedback_run{run_id:03}_k{:04}.csv", snap.k));
    let mut w = create(&fb_path)?;
    w.write_record(["user", "d", "y"])?;
    for (u, d, y) in &snap.feedback {
        w.write_record([(u + 1).to_string(), fmt_f64(*d), fmt_f64(*y)])?;
    }
    finish(w, &fb_path)?;
    Ok((grid_path, fb_path))
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub config: PathBuf,
    pub runs: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub distances: PathBuf,
    pub snapshots: Vec<PathBuf>,
}

impl Artifacts {
    pub fn all(&self) -> Vec<&PathBuf> {
        let mut v = vec![&self.config, &self.aggregate, &self.distances];
        v.extend(&self.runs);
        v.extend(&self.snapshots);
        v
    }
}

/// Outcome of [`run_experiment`].
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
    pub artifacts: Artifacts,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Executes all replicates of `config` and writes their CSV artifacts under
/// `config.output.dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let scenario = Scenario::new(config.clone())?;
    let runs = run_replicates(&scenario, config.algorithm)?;
    let aggregate = Aggregate::from_runs(&runs)?;
    let dir = config.output.dir.clone();
    ensure_dir(&dir)?;
    let mut artifacts = Artifacts {
        config: dir.join("config.toml"),
        aggregate: dir.join("aggregate.csv"),
        distances: dir.join("distances.csv"),
        ..Default::default()
    };
    fs::write(&artifacts.config, config.to_toml_string()?).map_err(|e| Error::io(&artifacts.config, e))?;
    for run in &runs {
        let p = dir.join(format!("run_{:03}.csv", run.run_id));
        write_run_csv(&p, run)?;
        artifacts.runs.push(p);
        for snap in &run.snapshots {
            let (a, b) = write_snapshot_csvs(&dir, run.run_id, snap)?;
            artifacts.snapshots.push(a);
            artifacts.snapshots.push(b);
        }
    }
    write_aggregate_csv(&artifacts.aggregate, &aggregate)?;
    write_distances_csv(&artifacts.distances, &runs[0], &scenario.objective)?;
    Ok(ExperimentOutput {
        runs,
        aggregate,
        artifacts,
    })
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub omega: f64,
    pub schedule: FeedbackSchedule,
    pub dir: PathBuf,
    pub aggregate: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

/// Index of a sweep's outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<SweepEntry>,
}

/// Cartesian sweep over `omegas × schedules`, one sub-directory each, plus
/// `manifest.toml` in the base output directory.
pub fn sweep(base: &ExperimentConfig, omegas: &[f64], schedules: &[FeedbackSchedule]) -> Result<(Manifest, PathBuf)> {
    let root = base.output.dir.clone();
    ensure_dir(&root)?;
    let mut manifest = Manifest::default();
    for &omega in omegas {
        for &schedule in schedules {
            let mut cfg = base.clone();
            cfg.objective.omega = omega;
            cfg.feedback.schedule = schedule;
            cfg.output.dir = root.join(format!("omega_{omega}_{}", schedule.label()));
            let out = run_experiment(&cfg)?;
            manifest.entries.push(SweepEntry {
                omega,
                schedule,
                dir: cfg.output.dir.clone(),
                aggregate: out.artifacts.aggregate.clone(),
                artifacts: out.artifacts.all().into_iter().cloned().collect(),
            });
        }
    }
    let path = root.join("manifest.toml");
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::config("<manifest>", e.to_string()))?;
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok((manifest, path))
}

/// Computable regret bound at `horizon` for `config`, with `γ_T` taken as
/// the greedy information gain summed over the independent belief components.
pub fn bound_for(config: &ExperimentConfig, horizon: u64) -> Result<(BoundInputs, BoundTerms)> {
    config.validate()?;
    let objective = TimeVaryingQuadratic::new(
        &config.objective.q,
        config.objective.omega,
        config.objective.trajectory,
        config.objective.gamma,
    )?;
    let domain = config.domain();
    let ticks: Vec<Tick> = (1..=horizon).map(|k| Tick::at(k, config.dt)).collect();
    let md = objective.metadata(&domain, &ticks)?;
    let eta = config
        .bounds
        .eta
        .unwrap_or_else(|| (1.0 - config.solver.alpha * objective.lambda_min()).clamp(0.0, 1.0 - 1e-12));
    let gamma_t = info_gain_for(config, horizon)?;
    let params = config.confidence_params();
    let inputs = BoundInputs {
        horizon,
        delta: params.delta,
        sigma: config.feedback.noise_std,
        d: params.d,
        a: params.a,
        b: params.b,
        r: params.r,
        l: md.l,
        d_g: md.d_g,
        drift: md.delta,
        eta,
        gamma_t,
    };
    let terms = theoretical_bound(&inputs)?;
    Ok((inputs, terms))
}

/// Greedy `γ_T` of the belief model: per-user 1-D gains summed over users in
/// separable mode, or the joint gain on the full box.
pub fn info_gain_for(config: &ExperimentConfig, horizon: u64) -> Result<f64> {
    let sigma = config.feedback.noise_std;
    let t = horizon as usize;
    match config.beliefs {
        BeliefMode::Separable => {
            let res = config.bounds.info_gain_resolution.max(t + 1);
            let g = info_gain_greedy(&config.kernel, &BoxDomain::unit(1), res, t, sigma)?;
            Ok(config.users as f64 * g[t - 1])
        }
        BeliefMode::Joint => {
            let side = (t as f64).powf(1.0 / config.users as f64).ceil() as usize + 1;
            let res = config.bounds.info_gain_resolution.max(side);
            let noise = (config.users as f64).sqrt() * sigma;
            let g = info_gain_greedy(&config.kernel, &config.domain(), res, t, noise)?;
            Ok(g[t - 1])
        }
    }
}
