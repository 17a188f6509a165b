//! The bi-level online meta-learning loop.
//!
//! Each round adapts the meta-learner to the current task with one gradient
//! step on the training loss, defines the round loss as the test loss of the
//! adapted learner viewed as a function of the meta-learner,
//! `ℓ_t(x) = ℓ^ts(x − θ∇ℓ^tr(x))`, and moves the meta-learner with one
//! DTS-AG step on the smoothed stochastic gradient of the last `w` round
//! losses.

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::error::{Error, Result};
use crate::numerics::{ensure_same_dim, spawn_rng_stream, RealVector, RngStream};
use crate::optimizer::{
    dts_ag_step, smoothed_stochastic_gradient, OptimizerConfig, OptimizerState, SmoothingWindow,
    WindowSlot,
};
use crate::tasks::{Loss, TaskRound, TaskStream};

const INNER_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const SMOOTHING_STREAM: u64 = 2;

pub const DEFAULT_BATCH: usize = 32;

fn default_batch() -> usize {
    DEFAULT_BATCH
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerAdaptConfig {
    /// Inner step size θ.
    pub theta: f64,
    #[serde(default = "default_batch")]
    pub train_batch: usize,
    #[serde(default = "default_batch")]
    pub test_batch: usize,
}

impl InnerAdaptConfig {
    pub fn new(theta: f64) -> Self {
        InnerAdaptConfig {
            theta,
            train_batch: DEFAULT_BATCH,
            test_batch: DEFAULT_BATCH,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            out.push(format!("theta = {} violates theta >= 0", self.theta));
        }
        if self.train_batch < 1 {
            out.push("train_batch = 0 violates train_batch >= 1".into());
        }
        if self.test_batch < 1 {
            out.push("test_batch = 0 violates test_batch >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::config(p.join("; ")))
        }
    }
}

/// `x − θ·ĝ` with `ĝ` the mean of `train_batch` noisy training gradients.
pub fn inner_adapt(
    x: &RealVector,
    task: &TaskRound,
    cfg: &InnerAdaptConfig,
    rng: &mut RngStream,
) -> Result<RealVector> {
    cfg.validate()?;
    ensure_same_dim(task.dim(), x.dim())?;
    let mut mean = vec![0.0; x.dim()];
    for _ in 0..cfg.train_batch {
        let g = task.sample_stochastic_gradient(x, rng)?;
        mean.iter_mut()
            .zip(g.as_slice())
            .for_each(|(m, gi)| *m += gi);
    }
    let n = cfg.train_batch as f64;
    let adapted: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(&mean)
        .map(|(xi, gi)| xi - cfg.theta * gi / n)
        .collect();
    RealVector::new(adapted).map_err(|e| Error::numeric(format!("inner adaptation: {e}")))
}

/// The composite round loss `x ↦ ℓ^ts(U(x))` with `U(x) = x − θ∇ℓ^tr(x)`.
///
/// Its gradient is `(I − θ∇²ℓ^tr(x))·∇ℓ^ts(U(x))`, computed with one
/// Hessian-vector product.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLoss {
    task: TaskRound,
    theta: f64,
}

impl RoundLoss {
    pub fn new(task: TaskRound, theta: f64) -> Self {
        RoundLoss { task, theta }
    }

    pub fn task(&self) -> &TaskRound {
        &self.task
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Exact adaptation `U(x)`.
    pub fn adapt(&self, x: &RealVector) -> Result<RealVector> {
        x.add_scaled(-self.theta, &self.task.train.gradient(x)?)
    }
}

impl Loss for RoundLoss {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn value(&self, x: &RealVector) -> Result<f64> {
        self.task.test.value(&self.adapt(x)?)
    }

    fn gradient(&self, x: &RealVector) -> Result<RealVector> {
        let outer = self.task.test.gradient(&self.adapt(x)?)?;
        if self.theta == 0.0 {
            return Ok(outer);
        }
        let curvature = self.task.train.hessian_vector(x, &outer)?;
        outer.add_scaled(-self.theta, &curvature)
    }
}

/// Per-round entry of a [`RunTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    /// Meta-learner `x_t` before the update.
    pub iterate: RealVector,
    /// Adapted learner `x̂_t` from the sampled training batch.
    pub adapted: RealVector,
    /// Exact round loss `ℓ_t(x_t)`.
    pub loss: f64,
    /// Test-batch estimate of the loss suffered by `x̂_t`.
    pub test_loss_estimate: f64,
    /// Exact `∇ℓ_t(x_t)`.
    pub exact_gradient: RealVector,
    /// Smoothed stochastic gradient fed to the optimizer.
    pub smoothed_gradient: RealVector,
    /// `η_{t+1}`.
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub inner: InnerAdaptConfig,
    pub optimizer: OptimizerConfig,
}

/// Full record of a run: rounds `1..=T` in order.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub seed: u64,
    pub settings: RunSettings,
    pub records: Vec<RoundRecord>,
    /// Source of past losses; required to re-evaluate them at other points.
    pub stream: Option<TaskStream>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.iterate.dim())
    }

    /// Record of round `t` (1-based).
    pub fn record(&self, t: usize) -> Result<&RoundRecord> {
        if t == 0 || t > self.records.len() {
            return Err(Error::Index {
                index: t,
                len: self.records.len(),
            });
        }
        Ok(&self.records[t - 1])
    }

    /// The composite loss of round `t`, rebuilt from the retained stream.
    pub fn round_loss(&self, t: u64) -> Result<RoundLoss> {
        let stream = self
            .stream
            .as_ref()
            .ok_or_else(|| Error::Capability("trace does not retain its task stream".into()))?;
        Ok(RoundLoss::new(stream.round(t)?, self.settings.inner.theta))
    }
}

/// Meta-learner, optimizer moments and smoothing window.
#[derive(Debug, Clone)]
pub struct MetaLearnerState {
    pub x: RealVector,
    pub optimizer: OptimizerState,
    pub window: SmoothingWindow<RoundLoss>,
    pub round: u64,
}

impl MetaLearnerState {
    pub fn new(x1: RealVector, cfg: &OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = x1.dim();
        Ok(MetaLearnerState {
            x: x1,
            optimizer: OptimizerState::new(dim),
            window: SmoothingWindow::new(cfg.alpha, cfg.window)?,
            round: 1,
        })
    }
}

/// Plays one round. Errors carry the round index; `state` is unchanged on error.
pub fn run_round(
    state: &mut MetaLearnerState,
    task: &TaskRound,
    inner: &InnerAdaptConfig,
    opt: &OptimizerConfig,
    rng: &RngStream,
) -> Result<RoundRecord> {
    let t = state.round;
    play_round(state, task, inner, opt, rng).map_err(|e| e.in_round(t))
}

fn play_round(
    state: &mut MetaLearnerState,
    task: &TaskRound,
    inner: &InnerAdaptConfig,
    opt: &OptimizerConfig,
    rng: &RngStream,
) -> Result<RoundRecord> {
    ensure_same_dim(state.x.dim(), task.dim())?;
    let t = state.round;
    let x_t = state.x.clone();

    let adapted = inner_adapt(&x_t, task, inner, &mut rng.substream(INNER_STREAM))?;
    let test_loss_estimate = estimate_test_loss(
        task,
        &adapted,
        inner.test_batch,
        &mut rng.substream(TEST_STREAM),
    )?;

    let round_loss = RoundLoss::new(task.clone(), inner.theta);
    let loss = round_loss.value(&x_t)?;
    let exact_gradient = round_loss.gradient(&x_t)?;

    let evicted = state.window.insert(WindowSlot {
        iterate: x_t.clone(),
        loss: round_loss,
        gradient: Some(exact_gradient.clone()),
    });
    let smoothed =
        smoothed_stochastic_gradient(&state.window, &task.noise, &rng.substream(SMOOTHING_STREAM))
            .and_then(|g| dts_ag_step(&mut state.optimizer, opt, &x_t, &g).map(|step| (g, step)));
    let (smoothed, step) = match smoothed {
        Ok(v) => v,
        Err(e) => {
            state.window.undo_insert(evicted);
            return Err(e);
        }
    };

    state.x = step.x;
    state.round += 1;

    Ok(RoundRecord {
        t,
        iterate: x_t,
        adapted,
        loss,
        test_loss_estimate,
        exact_gradient,
        smoothed_gradient: smoothed,
        eta: step.eta,
    })
}

/// Mean of `batch` loss observations at `x̂`, each perturbed by scalar noise of scale σ.
fn estimate_test_loss(
    task: &TaskRound,
    adapted: &RealVector,
    batch: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let exact = task.test.value(adapted)?;
    if task.noise.is_exact() {
        return Ok(exact);
    }
    let sigma = task.noise.sigma;
    let noise: f64 = (0..batch).map(|_| rng.normal()).sum::<f64>() / batch as f64;
    Ok(exact + sigma * noise)
}

/// A run that stopped early; `partial` holds every completed round.
#[derive(Debug, ThisError)]
#[error("run aborted after {} completed rounds: {error}", partial.len())]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunTrace,
}

/// Random stream that drives round `t` of a run with `seed`.
pub fn round_stream(seed: u64, t: u64) -> RngStream {
    spawn_rng_stream(seed, t)
}

/// Runs `horizon` rounds from `x₁ = 0`.
pub fn run_stream(
    stream: &TaskStream,
    horizon: u64,
    inner: &InnerAdaptConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> std::result::Result<RunTrace, RunFailure> {
    run_stream_from(
        stream,
        RealVector::zeros(stream.dim()),
        horizon,
        inner,
        opt,
        seed,
    )
}

pub fn run_stream_from(
    stream: &TaskStream,
    x1: RealVector,
    horizon: u64,
    inner: &InnerAdaptConfig,
    opt: &OptimizerConfig,
    seed: u64,
) -> std::result::Result<RunTrace, RunFailure> {
    let mut trace = RunTrace {
        seed,
        settings: RunSettings {
            inner: *inner,
            optimizer: *opt,
        },
        records: Vec::with_capacity(horizon as usize),
        stream: Some(stream.clone()),
    };
    let fail = |error: Error, partial: RunTrace| RunFailure { error, partial };
    if horizon < 1 {
        return Err(fail(Error::config("horizon T must be >= 1"), trace));
    }
    if let Err(e) = inner.validate() {
        return Err(fail(e, trace));
    }
    if let Err(e) = ensure_same_dim(stream.dim(), x1.dim()) {
        return Err(fail(e, trace));
    }
    let mut state = match MetaLearnerState::new(x1, opt) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, trace)),
    };
    for t in 1..=horizon {
        let outcome = stream
            .round(t)
            .map_err(|e| e.in_round(t))
            .and_then(|task| run_round(&mut state, &task, inner, opt, &round_stream(seed, t)));
        match outcome {
            Ok(rec) => trace.records.push(rec),
            Err(e) => return Err(fail(e, trace)),
        }
    }
    Ok(trace)
}
