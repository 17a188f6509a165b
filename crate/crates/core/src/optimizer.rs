//! The DTS-AG optimizer.
//!
//! One round draws a fresh stochastic gradient for every loss held in the
//! smoothing window, each evaluated at the iterate that was current when the
//! loss was revealed, averages them with weights `α^r / W`, and feeds the
//! result to the unified moment update
//!
//! ```text
//! m ← β₁·m + g̃
//! v ← β₂·v + g̃²
//! x ← x − η_{t+1} · m / √(ε + v)
//! ```
//!
//! `β₁ = 0, β₂ = 1` with a constant step is Adagrad; `0 < β₁ < β₂ < 1` with
//! the [`StepSchedule::AdamTheorem`] schedule is the Adam variant without
//! first-moment bias correction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_same_dim, RealVector, RngStream};
use crate::tasks::{Loss, NoiseModel};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `η_{t+1} = η`.
    Constant,
    /// `η_{t+1} = η(1−β₁)√((1−β₂^{t+1})/(1−β₂))`.
    AdamTheorem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub schedule: StepSchedule,
    pub alpha: f64,
    pub window: usize,
}

impl OptimizerConfig {
    /// Every violated constraint, each naming the inequality.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.beta2 > 0.0 && self.beta2 <= 1.0) {
            out.push(format!("beta2 = {} violates 0 < beta2 <= 1", self.beta2));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < self.beta2) {
            out.push(format!(
                "beta1 = {} violates 0 <= beta1 < beta2 = {}",
                self.beta1, self.beta2
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            out.push(format!("epsilon = {} violates epsilon > 0", self.epsilon));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            out.push(format!("eta = {} violates eta > 0", self.eta));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            out.push(format!("alpha = {} violates 0 < alpha <= 1", self.alpha));
        }
        if self.window < 1 {
            out.push("window = 0 violates w >= 1".to_string());
        }
        if self.schedule == StepSchedule::AdamTheorem && self.beta2 >= 1.0 {
            out.push(format!(
                "beta2 = {} violates beta2 < 1 required by the adam schedule",
                self.beta2
            ));
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

pub fn make_config_adagrad(
    eta: f64,
    epsilon: f64,
    alpha: f64,
    w: usize,
) -> Result<OptimizerConfig> {
    let cfg = OptimizerConfig {
        beta1: 0.0,
        beta2: 1.0,
        epsilon,
        eta,
        schedule: StepSchedule::Constant,
        alpha,
        window: w,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn make_config_adam(
    eta: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    alpha: f64,
    w: usize,
) -> Result<OptimizerConfig> {
    if !(beta1 > 0.0) {
        return Err(Error::config(format!("beta1 = {beta1} violates 0 < beta1")));
    }
    let cfg = OptimizerConfig {
        beta1,
        beta2,
        epsilon,
        eta,
        schedule: StepSchedule::AdamTheorem,
        alpha,
        window: w,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `W = Σ_{r<w} α^r`: `w` for `α = 1`, `(1 − α^w)/(1 − α)` otherwise.
pub fn weight_sum(alpha: f64, w: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!(
            "alpha = {alpha} violates 0 < alpha <= 1"
        )));
    }
    if w < 1 {
        return Err(Error::config("w = 0 violates w >= 1"));
    }
    if alpha == 1.0 || w == 1 {
        return Ok(w as f64);
    }
    // 1 − α^w via expm1 keeps precision for α near 1.
    Ok(-(w as f64 * alpha.ln()).exp_m1() / (1.0 - alpha))
}

/// Step size `η_{t+1}` applied by the update that ends round `t` (`t = 0` is allowed).
pub fn step_size_at(cfg: &OptimizerConfig, t: u64) -> Result<f64> {
    match cfg.schedule {
        StepSchedule::Constant => Ok(cfg.eta),
        StepSchedule::AdamTheorem => {
            if !(cfg.beta2 < 1.0) {
                return Err(Error::config("adam schedule requires beta2 < 1"));
            }
            let k = (t as f64) + 1.0;
            let ratio = -(k * cfg.beta2.ln()).exp_m1() / (1.0 - cfg.beta2);
            Ok(cfg.eta * (1.0 - cfg.beta1) * ratio.sqrt())
        }
    }
}

/// First and second moment accumulators plus the round counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    /// `m = 0, v = 0, t = 1`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be >= 1");
        OptimizerState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 1,
        }
    }

    pub fn from_parts(m: RealVector, v: RealVector, t: u64) -> Result<Self> {
        ensure_same_dim(m.dim(), v.dim())?;
        if v.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidInput(
                "second moment must be entrywise >= 0".into(),
            ));
        }
        if t < 1 {
            return Err(Error::InvalidInput("round counter starts at 1".into()));
        }
        Ok(OptimizerState {
            m: m.into_inner(),
            v: v.into_inner(),
            t,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn t(&self) -> u64 {
        self.t
    }
}

/// `x − η · m / √(ε + v)` elementwise.
pub fn adaptive_descent(
    x: &RealVector,
    m: &[f64],
    v: &[f64],
    eta: f64,
    epsilon: f64,
) -> Result<RealVector> {
    ensure_same_dim(x.dim(), m.len())?;
    ensure_same_dim(x.dim(), v.len())?;
    let mut out = Vec::with_capacity(x.dim());
    for (i, ((&xi, &mi), &vi)) in x.as_slice().iter().zip(m).zip(v).enumerate() {
        let next = xi - eta * mi / (epsilon + vi).sqrt();
        if !next.is_finite() {
            return Err(Error::numeric(format!(
                "coordinate {i} of the iterate became {next}"
            )));
        }
        out.push(next);
    }
    RealVector::new(out)
}

/// Outcome of one [`dts_ag_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub x: RealVector,
    /// `η_{t+1}` used by this update.
    pub eta: f64,
}

/// One DTS-AG update; moments, then iterate, in that order. `state` is left
/// untouched when an error is returned.
pub fn dts_ag_step(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    x: &RealVector,
    g_tilde: &RealVector,
) -> Result<Step> {
    ensure_same_dim(state.dim(), x.dim())?;
    ensure_same_dim(state.dim(), g_tilde.dim())?;
    let g = g_tilde.as_slice();
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g)
        .map(|(mi, gi)| cfg.beta1 * mi + gi)
        .collect();
    let v: Vec<f64> = state
        .v
        .iter()
        .zip(g)
        .map(|(vi, gi)| cfg.beta2 * vi + gi * gi)
        .collect();
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(format!(
            "coordinate {i} of the second moment overflowed"
        )));
    }
    let eta = step_size_at(cfg, state.t)?;
    let next = adaptive_descent(x, &m, &v, eta, cfg.epsilon)?;
    state.m = m;
    state.v = v;
    state.t += 1;
    Ok(Step { x: next, eta })
}

/// One occupied window slot: the iterate `x_{t−r}` and a handle to `ℓ_{t−r}`.
#[derive(Debug, Clone)]
pub struct WindowSlot<H> {
    pub iterate: RealVector,
    pub loss: H,
    /// `∇ℓ_{t−r}(x_{t−r})` when already known; it never changes once stored.
    pub gradient: Option<RealVector>,
}

/// Ring buffer of the last `w` (iterate, loss) pairs, newest first.
///
/// Rounds before the first one are zero losses; they simply occupy no slot,
/// while `W` stays `Σ_{r<w} α^r` regardless of how much history exists.
#[derive(Debug, Clone)]
pub struct SmoothingWindow<H> {
    slots: VecDeque<WindowSlot<H>>,
    alpha: f64,
    w: usize,
    weight_sum: f64,
    weights: Vec<f64>,
}

impl<H> SmoothingWindow<H> {
    pub fn new(alpha: f64, w: usize) -> Result<Self> {
        let weight_sum = weight_sum(alpha, w)?;
        let weights = (0..w).map(|r| alpha.powi(r as i32)).collect();
        Ok(SmoothingWindow {
            slots: VecDeque::with_capacity(w),
            alpha,
            w,
            weight_sum,
            weights,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// The normalisation `W`.
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// `α^r` for slot `r`.
    pub fn weight(&self, r: usize) -> f64 {
        self.weights[r]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Inserts the newest pair, evicting the oldest once `w` slots are full.
    pub fn push(&mut self, iterate: RealVector, loss: H) {
        self.insert(WindowSlot {
            iterate,
            loss,
            gradient: None,
        });
    }

    /// Like [`SmoothingWindow::push`] with the slot's exact gradient cached.
    pub fn push_evaluated(&mut self, iterate: RealVector, loss: H, gradient: RealVector) {
        self.insert(WindowSlot {
            iterate,
            loss,
            gradient: Some(gradient),
        });
    }

    /// Inserts a slot and returns the evicted one, if any.
    pub fn insert(&mut self, slot: WindowSlot<H>) -> Option<WindowSlot<H>> {
        let evicted = if self.slots.len() == self.w {
            self.slots.pop_back()
        } else {
            None
        };
        self.slots.push_front(slot);
        evicted
    }

    /// Reverts the last [`SmoothingWindow::insert`].
    pub fn undo_insert(&mut self, evicted: Option<WindowSlot<H>>) {
        self.slots.pop_front();
        if let Some(slot) = evicted {
            self.slots.push_back(slot);
        }
    }

    /// Slots newest first; index `r` holds round `t − r`.
    pub fn slots(&self) -> impl Iterator<Item = &WindowSlot<H>> {
        self.slots.iter()
    }

    fn check_dims(&self) -> Result<usize> {
        let first = self
            .slots
            .front()
            .ok_or_else(|| Error::InvalidInput("smoothing window is empty".into()))?;
        let dim = first.iterate.dim();
        for s in &self.slots {
            ensure_same_dim(dim, s.iterate.dim())?;
        }
        Ok(dim)
    }
}

impl<H: Loss> WindowSlot<H> {
    fn exact_gradient(&self) -> Result<std::borrow::Cow<'_, RealVector>> {
        match &self.gradient {
            Some(g) => Ok(std::borrow::Cow::Borrowed(g)),
            None => self
                .loss
                .gradient(&self.iterate)
                .map(std::borrow::Cow::Owned),
        }
    }
}

impl<H: Loss> SmoothingWindow<H> {
    /// `(1/W) Σ_r α^r ∇ℓ_{t−r}(x_{t−r})` from exact gradients.
    pub fn exact_gradient(&self) -> Result<RealVector> {
        let dim = self.check_dims()?;
        let mut acc = vec![0.0; dim];
        for (r, slot) in self.slots.iter().enumerate() {
            let g = slot.exact_gradient()?;
            ensure_same_dim(dim, g.dim())?;
            let wgt = self.weights[r];
            acc.iter_mut()
                .zip(g.as_slice())
                .for_each(|(a, gi)| *a += wgt * gi);
        }
        finish_average(acc, self.weight_sum)
    }
}

fn finish_average(mut acc: Vec<f64>, weight_sum: f64) -> Result<RealVector> {
    acc.iter_mut().for_each(|a| *a /= weight_sum);
    RealVector::new(acc).map_err(|e| Error::numeric(format!("smoothed gradient: {e}")))
}

/// `(1/W) Σ_r α^r g_{t−r}(x_{t−r}, ξ_{t,t−r})` with one fresh noise draw per
/// occupied slot. Slot `r` draws from `rng.substream(r)`, so the result
/// depends only on the window contents and the round stream's identity.
pub fn smoothed_stochastic_gradient<H: Loss>(
    window: &SmoothingWindow<H>,
    noise: &NoiseModel,
    rng: &RngStream,
) -> Result<RealVector> {
    let dim = window.check_dims()?;
    let mut acc = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for (r, slot) in window.slots.iter().enumerate() {
        let exact = slot.exact_gradient()?;
        ensure_same_dim(dim, exact.dim())?;
        g.copy_from_slice(exact.as_slice());
        if !noise.is_exact() {
            let mut sub = rng.substream(r as u64);
            noise.perturb(&mut g, &mut sub);
        }
        let wgt = window.weights[r];
        acc.iter_mut().zip(&g).for_each(|(a, gi)| *a += wgt * gi);
    }
    finish_average(acc, window.weight_sum)
}
