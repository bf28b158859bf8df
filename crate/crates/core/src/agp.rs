//! The AGP-UCB loop: one inexact projected-gradient pass on
//! `V(·; t_k) + Û_n` per tick, with Bayesian updates only when the user
//! answers. The optimization counter `k` advances every tick; the data
//! counter `n` only on feedback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{lognormal_grad, lognormal_value};
use crate::error::{check_dim, Error, Result};
use crate::gp::{GpPosterior, LocalPosterior, Observation, SamplePath};
use crate::kernels::KernelSpec;
use crate::objectives::{EngineeringObjective, Tick};
use crate::solver::{run_inner, BoxDomain, FnSmooth, SolverConfig};
use crate::ucb::{beta, ucb_value_grad_from, ConfidenceParams};

/// When the user answers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeedbackSchedule {
    #[default]
    EveryStep,
    /// Feedback on the last tick of each block of `q`, i.e. when `k % q == 0`.
    EveryQ { q: u64 },
    /// Independent feedback with probability `p` per tick.
    Bernoulli { p: f64 },
}

impl FeedbackSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::EveryStep => Ok(()),
            Self::EveryQ { q } if q >= 1 => Ok(()),
            Self::EveryQ { q } => Err(Error::invalid(format!("q must be at least 1, got {q}"))),
            Self::Bernoulli { p } if p > 0.0 && p <= 1.0 => Ok(()),
            Self::Bernoulli { p } => Err(Error::invalid(format!("p must lie in (0, 1], got {p}"))),
        }
    }

    pub fn is_every_step(&self) -> bool {
        matches!(self, Self::EveryStep | Self::EveryQ { q: 1 })
    }

    /// Short label used in file names and reports.
    pub fn label(&self) -> String {
        match self {
            Self::EveryStep => "every_step".into(),
            Self::EveryQ { q } => format!("every_{q}"),
            Self::Bernoulli { p } => format!("bernoulli_{p}"),
        }
    }
}

impl std::str::FromStr for FeedbackSchedule {
    type Err = Error;

    /// Parses `every_step`, `every_q:Q` (or the label `every_Q`) and `bernoulli:P`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown feedback schedule `{s}`"));
        let sched = if s == "every_step" {
            Self::EveryStep
        } else if let Some(q) = s.strip_prefix("every_q:").or_else(|| s.strip_prefix("every_")) {
            Self::EveryQ {
                q: q.parse().map_err(|_| bad())?,
            }
        } else if let Some(p) = s.strip_prefix("bernoulli:").or_else(|| s.strip_prefix("bernoulli_")) {
            Self::Bernoulli {
                p: p.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Ground-truth satisfaction of one user as a function of their own coordinate.
#[derive(Debug, Clone)]
pub enum UserTruth {
    /// `exp(−ln²d/ξ²)/(ξd)`.
    LogNormal { xi: f64 },
    /// A 1-D GP sample path.
    Sample(SamplePath),
    Zero,
}

impl UserTruth {
    pub fn value(&self, d: f64) -> f64 {
        match self {
            Self::LogNormal { xi } => lognormal_value(*xi, d),
            Self::Sample(path) => path.eval(&[d]),
            Self::Zero => 0.0,
        }
    }

    pub fn grad(&self, d: f64) -> f64 {
        match self {
            Self::LogNormal { xi } => lognormal_grad(*xi, d),
            Self::Sample(path) => path.grad(&[d])[0],
            Self::Zero => 0.0,
        }
    }
}

/// The simulated users and how they answer.
#[derive(Debug, Clone)]
pub struct UserModel {
    pub truths: Vec<UserTruth>,
    pub noise_std: f64,
    pub schedule: FeedbackSchedule,
}

impl UserModel {
    pub fn new(truths: Vec<UserTruth>, noise_std: f64, schedule: FeedbackSchedule) -> Result<Self> {
        if truths.is_empty() {
            return Err(Error::invalid("at least one user is required"));
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::invalid(format!("noise_std must be non-negative, got {noise_std}")));
        }
        schedule.validate()?;
        Ok(Self {
            truths,
            noise_std,
            schedule,
        })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    /// `U_i(x_i)` for every user.
    pub fn per_user(&self, x: &[f64]) -> Vec<f64> {
        self.truths.iter().zip(x).map(|(u, xi)| u.value(*xi)).collect()
    }

    /// `Σ U_i(x_i)`.
    pub fn total(&self, x: &[f64]) -> f64 {
        self.per_user(x).iter().sum()
    }

    pub fn total_grad(&self, x: &[f64]) -> Vec<f64> {
        self.truths.iter().zip(x).map(|(u, xi)| u.grad(*xi)).collect()
    }
}

/// Feedback timing and noise shared by every algorithm run under one seed, so
/// that paired comparisons see identical realizations.
#[derive(Debug, Clone)]
pub struct FeedbackStream {
    schedule: FeedbackSchedule,
    users: usize,
    noise: ChaCha8Rng,
    coin: ChaCha8Rng,
}

/// Draws of one tick: whether feedback arrives and the standard-normal noise
/// per user (drawn every tick regardless).
#[derive(Debug, Clone, PartialEq)]
pub struct TickDraw {
    pub feedback: bool,
    pub noise: Vec<f64>,
}

impl FeedbackStream {
    pub fn new(schedule: FeedbackSchedule, users: usize, seed: u64) -> Self {
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(1);
        let mut coin = ChaCha8Rng::seed_from_u64(seed);
        coin.set_stream(2);
        Self {
            schedule,
            users,
            noise,
            coin,
        }
    }

    pub fn draw(&mut self, k: u64) -> TickDraw {
        let noise = (0..self.users).map(|_| StandardNormal.sample(&mut self.noise)).collect();
        let u: f64 = self.coin.random();
        let feedback = match self.schedule {
            FeedbackSchedule::EveryStep => true,
            FeedbackSchedule::EveryQ { q } => k.is_multiple_of(q),
            FeedbackSchedule::Bernoulli { p } => u < p,
        };
        TickDraw { feedback, noise }
    }
}

/// How beliefs about the users are organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefMode {
    /// One 1-D GP per user on its own coordinate.
    #[default]
    Separable,
    /// One GP over the full decision on the summed feedback.
    Joint,
}

/// GP beliefs about `Σ U_i`.
#[derive(Debug, Clone)]
pub enum Beliefs {
    Separable(Vec<GpPosterior>),
    Joint(GpPosterior),
}

impl Beliefs {
    /// Zero-mean priors. In joint mode the summed feedback carries `m` noise
    /// terms, so its noise variance is `m·σ²`.
    pub fn prior(mode: BeliefMode, kernel: KernelSpec, noise_variance: f64, users: usize) -> Result<Self> {
        match mode {
            BeliefMode::Separable => Ok(Self::Separable(
                (0..users)
                    .map(|_| GpPosterior::new(kernel, noise_variance, 1))
                    .collect::<Result<_>>()?,
            )),
            BeliefMode::Joint => {
                if users > 2 {
                    return Err(Error::Unsupported(format!(
                        "joint beliefs support at most 2 users, got {users}"
                    )));
                }
                Ok(Self::Joint(GpPosterior::new(kernel, users as f64 * noise_variance, users)?))
            }
        }
    }

    /// Local posterior per belief component.
    fn locals(&self, x: &[f64]) -> Vec<LocalPosterior> {
        match self {
            Self::Separable(posts) => posts
                .iter()
                .zip(x)
                .map(|(p, xi)| p.local(&[*xi]).expect("1-D belief"))
                .collect(),
            Self::Joint(p) => vec![p.local(x).expect("decision dimension checked at construction")],
        }
    }

    /// `Û(x)` and its gradient.
    pub fn ucb(&self, x: &[f64], beta_n: f64) -> (f64, Vec<f64>) {
        let locals = self.locals(x);
        match self {
            Self::Separable(_) => {
                let mut value = 0.0;
                let mut grad = Vec::with_capacity(x.len());
                for l in &locals {
                    let (v, g) = ucb_value_grad_from(l, beta_n);
                    value += v;
                    grad.push(g[0]);
                }
                (value, grad)
            }
            Self::Joint(_) => ucb_value_grad_from(&locals[0], beta_n),
        }
    }

    /// Posterior mean of `Σ U_i` at `x`.
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.locals(x).iter().map(|l| l.mean).sum()
    }

    fn observe(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        match self {
            Self::Separable(posts) => {
                for ((p, xi), yi) in posts.iter_mut().zip(x).zip(y) {
                    p.update(&Observation::new(vec![*xi], *yi))?;
                }
                Ok(())
            }
            Self::Joint(p) => p.update(&Observation::new(x.to_vec(), y.iter().sum())),
        }
    }

    /// Observations held by each component.
    pub fn len(&self) -> usize {
        match self {
            Self::Separable(posts) => posts.first().map_or(0, GpPosterior::len),
            Self::Joint(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything a run carries from tick to tick.
#[derive(Debug, Clone)]
pub struct LoopState {
    /// Optimization counter of the next tick.
    pub k: u64,
    /// Data counter indexing the surrogate of the next tick.
    pub n: u64,
    /// Latest decision `x_{k−1}`.
    pub x: Vec<f64>,
    pub beliefs: Beliefs,
    /// `β_n` for the current `n`.
    pub beta: f64,
    stream: FeedbackStream,
}

impl LoopState {
    /// `k = n = 1` with beliefs at the prior.
    pub fn new(
        x0: Vec<f64>,
        beliefs: Beliefs,
        params: &ConfidenceParams,
        schedule: FeedbackSchedule,
        users: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            k: 1,
            n: 1,
            x: x0,
            beliefs,
            beta: beta(1, params)?,
            stream: FeedbackStream::new(schedule, users, seed),
        })
    }
}

/// Log of one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub k: u64,
    /// Data counter the surrogate was built with.
    pub n: u64,
    pub t: f64,
    pub x: Vec<f64>,
    pub feedback: bool,
    /// Per-user noisy feedback; empty without feedback.
    pub y: Vec<f64>,
    pub beta: f64,
}

/// Fixed ingredients of a run.
pub struct LoopSetup<'a> {
    pub objective: &'a dyn EngineeringObjective,
    pub users: &'a UserModel,
    pub solver: SolverConfig,
    pub params: ConfidenceParams,
    pub domain: BoxDomain,
    pub kernel: KernelSpec,
    /// `σ²` used by the GP beliefs.
    pub noise_variance: f64,
    pub mode: BeliefMode,
    /// Sampling period between ticks, in seconds.
    pub dt: f64,
    pub x0: Vec<f64>,
}

impl LoopSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        let m = self.users.len();
        check_dim(m, self.objective.dim())?;
        check_dim(m, self.domain.dim())?;
        check_dim(m, self.x0.len())?;
        if !self.domain.contains(&self.x0) {
            return Err(Error::invalid("initial decision lies outside the domain"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        self.solver.validate()?;
        self.params.validate()
    }

    pub fn initial_state(&self, seed: u64) -> Result<LoopState> {
        self.validate()?;
        let beliefs = Beliefs::prior(self.mode, self.kernel, self.noise_variance, self.users.len())?;
        LoopState::new(
            self.x0.clone(),
            beliefs,
            &self.params,
            self.users.schedule,
            self.users.len(),
            seed,
        )
    }
}

/// Steps [S1]–[S3] for the tick `state.k`.
pub fn step(state: &mut LoopState, setup: &LoopSetup<'_>) -> Result<StepOutcome> {
    let tick = Tick::at(state.k, setup.dt);
    let beta_n = beta(state.n, &setup.params)?;
    state.beta = beta_n;
    let gamma = setup.objective.user_weight();
    let objective = setup.objective;
    let beliefs = &state.beliefs;
    let phi = FnSmooth::new(
        setup.domain.dim(),
        |x: &[f64]| objective.value(x, tick) + gamma * beliefs.ucb(x, beta_n).0,
        |x: &[f64]| {
            let mut g = objective.grad(x, tick);
            let (_, gu) = beliefs.ucb(x, beta_n);
            for (a, b) in g.iter_mut().zip(gu) {
                *a += gamma * b;
            }
            g
        },
    );
    let x = run_inner(&phi, &state.x, &setup.solver, &setup.domain);
    let draw = state.stream.draw(state.k);
    let n_used = state.n;
    let y = if draw.feedback {
        let y: Vec<f64> = setup
            .users
            .per_user(&x)
            .iter()
            .zip(&draw.noise)
            .map(|(u, e)| u + setup.users.noise_std * e)
            .collect();
        state.beliefs.observe(&x, &y)?;
        state.n += 1;
        y
    } else {
        Vec::new()
    };
    state.x = x.clone();
    state.k += 1;
    Ok(StepOutcome {
        k: tick.k,
        n: n_used,
        t: tick.t,
        x,
        feedback: draw.feedback,
        y,
        beta: beta_n,
    })
}

/// Runs `horizon` ticks, calling `observer` after each one.
pub fn run_with(
    horizon: u64,
    seed: u64,
    setup: &LoopSetup<'_>,
    mut observer: impl FnMut(&LoopState, &StepOutcome),
) -> Result<Vec<StepOutcome>> {
    let mut state = setup.initial_state(seed)?;
    let mut log = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        let out = step(&mut state, setup)?;
        observer(&state, &out);
        log.push(out);
    }
    Ok(log)
}

/// Runs `horizon` ticks from a fresh state.
pub fn run(horizon: u64, seed: u64, setup: &LoopSetup<'_>) -> Result<Vec<StepOutcome>> {
    run_with(horizon, seed, setup, |_, _| {})
}
