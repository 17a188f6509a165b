//! Regret accounting and theoretical bound calculators.
//!
//! The dynamic local regret of a run is
//! `DLR_w(T) = Σ_t ‖∇S_{t,w,α}(x_t)‖²` where `∇S_{t,w,α}(x_t)` averages the
//! exact gradients of the last `w` round losses, each at its own historical
//! iterate, with weights `α^r / W`. The static local regret instead averages
//! the gradients of the last `w` losses at the current iterate with uniform
//! weights.
//!
//! The bound calculators evaluate the four regret bounds (Adagrad and Adam,
//! in expectation and with high probability) and expose every intermediate
//! constant so that each can be audited.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::meta::RunTrace;
use crate::numerics::{norm_sq, RealVector, RngStream};
use crate::optimizer::weight_sum;
use crate::tasks::{Loss, LossConstants, NoiseModel};

/// Per-round squared smoothed-gradient norms and their running sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub per_round: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub w: usize,
    pub alpha: f64,
    pub weight_sum: f64,
}

impl RegretLedger {
    fn from_increments(per_round: Vec<f64>, w: usize, alpha: f64, weight_sum: f64) -> Self {
        let mut total = 0.0;
        let cumulative = per_round
            .iter()
            .map(|v| {
                total += v;
                total
            })
            .collect();
        RegretLedger {
            per_round,
            cumulative,
            w,
            alpha,
            weight_sum,
        }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

fn check_round(trace: &RunTrace, t: usize) -> Result<()> {
    if t == 0 || t > trace.len() {
        return Err(Error::Index {
            index: t,
            len: trace.len(),
        });
    }
    Ok(())
}

/// `(1/W) Σ_{r<w} α^r ∇ℓ_{t−r}(x_{t−r})` from the trace's stored exact
/// gradients; rounds before the first contribute nothing.
pub fn exact_smoothed_gradient(
    trace: &RunTrace,
    t: usize,
    w: usize,
    alpha: f64,
) -> Result<RealVector> {
    check_round(trace, t)?;
    let big_w = weight_sum(alpha, w)?;
    let dim = trace.records[0].exact_gradient.dim();
    let mut acc = vec![0.0; dim];
    let mut weight = 1.0;
    for r in 0..w.min(t) {
        let g = trace.records[t - 1 - r].exact_gradient.as_slice();
        acc.iter_mut().zip(g).for_each(|(a, gi)| *a += weight * gi);
        weight *= alpha;
    }
    acc.iter_mut().for_each(|a| *a /= big_w);
    RealVector::new(acc)
}

/// Dynamic local regret ledger.
pub fn dlr_cumulative(trace: &RunTrace, w: usize, alpha: f64) -> Result<RegretLedger> {
    let big_w = weight_sum(alpha, w)?;
    let per_round = (1..=trace.len())
        .map(|t| exact_smoothed_gradient(trace, t, w, alpha).map(|g| norm_sq(g.as_slice())))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretLedger::from_increments(per_round, w, alpha, big_w))
}

/// `(1/w) Σ_{r<w} ∇ℓ_{t−r}(x_t)`: past losses re-evaluated at the current iterate.
pub fn static_smoothed_gradient(trace: &RunTrace, t: usize, w: usize) -> Result<RealVector> {
    check_round(trace, t)?;
    if w < 1 {
        return Err(Error::config("w = 0 violates w >= 1"));
    }
    let x_t = &trace.records[t - 1].iterate;
    let mut acc = vec![0.0; x_t.dim()];
    for r in 0..w.min(t) {
        let g = trace.round_loss((t - r) as u64)?.gradient(x_t)?;
        acc.iter_mut()
            .zip(g.as_slice())
            .for_each(|(a, gi)| *a += gi);
    }
    let n = w as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    RealVector::new(acc)
}

/// Static local regret ledger; needs a trace that retains its task stream.
pub fn slr_cumulative(trace: &RunTrace, w: usize) -> Result<RegretLedger> {
    let per_round = (1..=trace.len())
        .map(|t| static_smoothed_gradient(trace, t, w).map(|g| norm_sq(g.as_slice())))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretLedger::from_increments(per_round, w, 1.0, w as f64))
}

/// Monte-Carlo estimate of `∇S_{t,w,α}(x_t)` from `samples` noisy gradient
/// draws per window slot, for losses without an exact gradient oracle.
pub fn monte_carlo_smoothed_gradient(
    trace: &RunTrace,
    t: usize,
    w: usize,
    alpha: f64,
    noise: &NoiseModel,
    samples: usize,
    rng: &mut RngStream,
) -> Result<RealVector> {
    check_round(trace, t)?;
    if samples < 1 {
        return Err(Error::config("samples must be >= 1"));
    }
    let big_w = weight_sum(alpha, w)?;
    let dim = trace.records[0].iterate.dim();
    let mut acc = vec![0.0; dim];
    let mut weight = 1.0;
    for r in 0..w.min(t) {
        let round = t - r;
        let loss = trace.round_loss(round as u64)?;
        let x = &trace.records[round - 1].iterate;
        let exact = loss.gradient(x)?;
        for _ in 0..samples {
            let mut g = exact.as_slice().to_vec();
            noise.perturb(&mut g, rng);
            acc.iter_mut()
                .zip(&g)
                .for_each(|(a, gi)| *a += weight * gi / samples as f64);
        }
        weight *= alpha;
    }
    acc.iter_mut().for_each(|a| *a /= big_w);
    RealVector::new(acc)
}

/// Lipschitz and smoothness constants of the composite round loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConstants {
    #[serde(rename = "L_prime")]
    pub lipschitz: f64,
    #[serde(rename = "gamma_prime")]
    pub smoothness: f64,
}

/// `L′ = (1+θγ)L`, `γ′ = θLH + (1+θγ)²γ`.
pub fn effective_constants(c: &LossConstants, theta: f64) -> EffectiveConstants {
    let k = 1.0 + theta * c.smoothness;
    EffectiveConstants {
        lipschitz: k * c.lipschitz,
        smoothness: theta * c.lipschitz * c.hessian_lipschitz + k * k * c.smoothness,
    }
}

/// `Σ_{r<w} α^{2r}`.
fn squared_weight_sum(alpha: f64, w: usize) -> f64 {
    if alpha == 1.0 {
        w as f64
    } else {
        -(2.0 * w as f64 * alpha.ln()).exp_m1() / (1.0 - alpha * alpha)
    }
}

/// Variance proxies of the smoothed stochastic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceProxy {
    /// `σ²(1−α^{2w}) / (W²(1−α²))`, or `σ²/w` at `α = 1`.
    pub mu: f64,
    /// `σ²/W`, used by the expectation bounds.
    pub zeta_expectation: f64,
    /// `κ² ln(e/δ)`, used by the high-probability bounds.
    pub zeta_high_prob: Option<f64>,
    /// `κ² ln(exp(w Σ_{r<w} α^{2r} / W²) / δ)`.
    pub mu_bar: Option<f64>,
}

/// Variance proxies for `noise`. The high-probability entries are filled
/// when `delta` is given; `kappa` defaults to the noise model's own value.
pub fn variance_proxy(
    noise: &NoiseModel,
    alpha: f64,
    w: usize,
    delta: Option<f64>,
    kappa: Option<f64>,
) -> Result<VarianceProxy> {
    let big_w = weight_sum(alpha, w)?;
    let sigma2 = noise.sigma * noise.sigma;
    let sq = squared_weight_sum(alpha, w);
    let mu = sigma2 * sq / (big_w * big_w);
    let (zeta_high_prob, mu_bar) = match delta {
        None => (None, None),
        Some(d) => {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::config(format!("delta = {d} violates 0 < delta < 1")));
            }
            let k = kappa.or(noise.kappa).ok_or_else(|| {
                Error::config("kappa is required for the high-probability proxies")
            })?;
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::config(format!("kappa = {k} violates kappa > 0")));
            }
            let k2 = k * k;
            (
                Some(k2 * (1.0 - d.ln())),
                Some(k2 * (w as f64 * sq / (big_w * big_w) - d.ln())),
            )
        }
    };
    Ok(VarianceProxy {
        mu,
        zeta_expectation: sigma2 / big_w,
        zeta_high_prob,
        mu_bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerFamily {
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    AdagradExpectation,
    AdamExpectation,
    AdagradHighProb,
    AdamHighProb,
}

impl Theorem {
    pub const ALL: [Theorem; 4] = [
        Theorem::AdagradExpectation,
        Theorem::AdamExpectation,
        Theorem::AdagradHighProb,
        Theorem::AdamHighProb,
    ];

    pub fn family(self) -> OptimizerFamily {
        match self {
            Theorem::AdagradExpectation | Theorem::AdagradHighProb => OptimizerFamily::Adagrad,
            Theorem::AdamExpectation | Theorem::AdamHighProb => OptimizerFamily::Adam,
        }
    }

    pub fn is_high_prob(self) -> bool {
        matches!(self, Theorem::AdagradHighProb | Theorem::AdamHighProb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Theorem::AdagradExpectation => "adagrad_expectation",
            Theorem::AdamExpectation => "adam_expectation",
            Theorem::AdagradHighProb => "adagrad_high_prob",
            Theorem::AdamHighProb => "adam_high_prob",
        }
    }
}

/// Every input of the bound calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(rename = "T")]
    pub horizon: u64,
    #[serde(rename = "d")]
    pub dim: usize,
    pub delta: f64,
    pub eta: f64,
    #[serde(rename = "beta_1")]
    pub beta1: f64,
    #[serde(rename = "beta_2")]
    pub beta2: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub w: usize,
    pub sigma: f64,
    pub kappa: Option<f64>,
    pub theta: f64,
    /// ς; defaults to `√(1−β₂)` for the Adam bounds.
    pub varsigma: Option<f64>,
    pub constants: LossConstants,
}

impl BoundInputs {
    fn check(&self, theorem: Theorem) -> Result<()> {
        let mut bad = Vec::new();
        if self.horizon < 1 {
            bad.push("T >= 1".to_string());
        }
        if self.dim < 1 {
            bad.push("d >= 1".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad.push(format!("0 < delta < 1 (delta = {})", self.delta));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            bad.push(format!("eta > 0 (eta = {})", self.eta));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad.push(format!("epsilon > 0 (epsilon = {})", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            bad.push(format!("0 < alpha <= 1 (alpha = {})", self.alpha));
        }
        if self.w < 1 {
            bad.push("w >= 1".to_string());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            bad.push(format!("sigma >= 0 (sigma = {})", self.sigma));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            bad.push(format!("theta >= 0 (theta = {})", self.theta));
        }
        if let Err(e) = self.constants.validate() {
            bad.push(e.to_string());
        }
        match theorem.family() {
            OptimizerFamily::Adagrad => {
                if self.beta1 != 0.0 {
                    bad.push(format!("beta_1 = 0 (beta_1 = {})", self.beta1));
                }
                if self.beta2 != 1.0 {
                    bad.push(format!("beta_2 = 1 (beta_2 = {})", self.beta2));
                }
            }
            OptimizerFamily::Adam => {
                if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
                    bad.push(format!("0 < beta_2 < 1 (beta_2 = {})", self.beta2));
                }
                if !(self.beta1 > 0.0 && self.beta1 < self.beta2) {
                    bad.push(format!(
                        "0 < beta_1 < beta_2 (beta_1 = {}, beta_2 = {})",
                        self.beta1, self.beta2
                    ));
                }
                if let Some(s) = self.varsigma {
                    let cap = (1.0 - self.beta2).sqrt();
                    if !(s > 0.0 && s <= cap) {
                        bad.push(format!(
                            "0 < varsigma <= sqrt(1 - beta_2) = {cap} (varsigma = {s})"
                        ));
                    }
                }
            }
        }
        if theorem.is_high_prob() {
            match self.kappa {
                Some(k) if k > 0.0 && k.is_finite() => {}
                Some(k) => bad.push(format!("kappa > 0 (kappa = {k})")),
                None => bad.push("kappa > 0 (kappa missing)".to_string()),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{} requires {}",
                theorem.name(),
                bad.join(", ")
            )))
        }
    }
}

/// Intermediate constants of a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    #[serde(rename = "W")]
    pub weight_sum: f64,
    #[serde(rename = "L_prime")]
    pub l_prime: f64,
    #[serde(rename = "gamma_prime")]
    pub gamma_prime: f64,
    pub zeta: f64,
    pub mu: Option<f64>,
    pub mu_bar: Option<f64>,
    pub varpi_1: f64,
    pub varpi_2: f64,
    pub varpi_3: Option<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub varsigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub inputs: BoundInputs,
    pub derived: DerivedConstants,
    /// Right-hand side; `+∞` when the Adam high-probability constant overflows.
    pub rhs: f64,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn is_infinite(&self) -> bool {
        self.rhs.is_infinite()
    }

    /// Flat key/value record; every input and derived constant by symbol name.
    /// Non-finite numbers are written as `null` and flagged by `rhs_infinite`.
    pub fn to_record(&self) -> Map<String, Value> {
        let mut out = Map::new();
        out.insert("theorem".into(), Value::from(self.theorem.name()));
        let i = &self.inputs;
        let d = &self.derived;
        let nums: [(&str, Option<f64>); 29] = [
            ("T", Some(i.horizon as f64)),
            ("d", Some(i.dim as f64)),
            ("delta", Some(i.delta)),
            ("eta", Some(i.eta)),
            ("beta_1", Some(i.beta1)),
            ("beta_2", Some(i.beta2)),
            ("epsilon", Some(i.epsilon)),
            ("alpha", Some(i.alpha)),
            ("w", Some(i.w as f64)),
            ("sigma", Some(i.sigma)),
            ("kappa", i.kappa),
            ("theta", Some(i.theta)),
            ("varsigma", d.varsigma),
            ("D", Some(i.constants.bound)),
            ("L", Some(i.constants.lipschitz)),
            ("gamma", Some(i.constants.smoothness)),
            ("H", Some(i.constants.hessian_lipschitz)),
            ("W", Some(d.weight_sum)),
            ("L_prime", Some(d.l_prime)),
            ("gamma_prime", Some(d.gamma_prime)),
            ("zeta", Some(d.zeta)),
            ("mu", d.mu),
            ("mu_bar", d.mu_bar),
            ("varpi_1", Some(d.varpi_1)),
            ("varpi_2", Some(d.varpi_2)),
            ("varpi_3", d.varpi_3),
            ("C", Some(d.c)),
            ("rhs", Some(self.rhs)),
            ("rhs_infinite", None),
        ];
        for (k, v) in nums {
            if k == "rhs_infinite" {
                out.insert(k.into(), Value::Bool(self.is_infinite()));
                continue;
            }
            if let Some(v) = v {
                let val = if (k == "T" || k == "d" || k == "w") && v.fract() == 0.0 {
                    Value::from(v as u64)
                } else {
                    serde_json::Number::from_f64(v)
                        .map(Value::Number)
                        .unwrap_or(Value::Null)
                };
                out.insert(k.into(), val);
            }
        }
        out.insert(
            "warnings".into(),
            Value::Array(self.warnings.iter().cloned().map(Value::from).collect()),
        );
        out
    }
}

/// Shared pieces: `W`, `L′`, `γ′`.
fn common(inputs: &BoundInputs) -> Result<(f64, EffectiveConstants)> {
    Ok((
        weight_sum(inputs.alpha, inputs.w)?,
        effective_constants(&inputs.constants, inputs.theta),
    ))
}

/// `ϖ₁` shared by both Adam bounds.
fn adam_varpi1(i: &BoundInputs, big_w: f64, l_prime: f64) -> f64 {
    let t = i.horizon as f64;
    4.0 * i.constants.bound * t / big_w
        + 8.0 * t * i.eta * (1.0 - i.beta1) * l_prime * l_prime
            / (i.beta1 * (1.0 - i.beta2).sqrt() * big_w * big_w)
}

/// `ϖ₂` shared by both Adam bounds; `noise_term` is `√ζ` or `√ζ/√W`.
fn adam_varpi2(i: &BoundInputs, gamma_prime: f64, noise_term: f64) -> f64 {
    let d = i.dim as f64;
    let (eta, b1, b2) = (i.eta, i.beta1, i.beta2);
    let ratio = 1.0 - b1 / b2;
    let one_b2 = 1.0 - b2;
    d * eta * eta * (1.0 - b1) * gamma_prime / (2.0 * one_b2 * ratio)
        + d * eta.powi(3) * gamma_prime * gamma_prime * b1 / (ratio * one_b2.powf(1.5))
        + 2.0 * d * eta * (1.0 + noise_term) * (1.0 - b1).sqrt() / (ratio.powf(1.5) * one_b2.sqrt())
        + 2.0 * eta.powi(3) * (1.0 - b1).powi(2) * gamma_prime * gamma_prime
            / (b1 * one_b2.powf(1.5) * ratio)
}

/// `d ln(1 + 2(ζ+L′²)/(dε(1−β₂))) − T ln β₂`.
fn adam_log_term(i: &BoundInputs, zeta: f64, l_prime: f64) -> f64 {
    let d = i.dim as f64;
    d * (2.0 * (zeta + l_prime * l_prime) / (d * i.epsilon * (1.0 - i.beta2))).ln_1p()
        - i.horizon as f64 * i.beta2.ln()
}

/// `d ln(1 + 2(ζ+L′²)T/(dε))`.
fn adagrad_log_term(i: &BoundInputs, zeta: f64, l_prime: f64) -> f64 {
    let d = i.dim as f64;
    d * (2.0 * (zeta + l_prime * l_prime) * i.horizon as f64 / (d * i.epsilon)).ln_1p()
}

/// Bound on `Σ_t E‖∇S_{t,w,α}(x_t)‖²` holding with probability `1 − δ`.
pub fn bound_expectation(kind: OptimizerFamily, inputs: &BoundInputs) -> Result<BoundReport> {
    let theorem = match kind {
        OptimizerFamily::Adagrad => Theorem::AdagradExpectation,
        OptimizerFamily::Adam => Theorem::AdamExpectation,
    };
    inputs.check(theorem)?;
    let i = inputs;
    let (big_w, eff) = common(i)?;
    let t = i.horizon as f64;
    let delta = i.delta;
    let zeta = i.sigma * i.sigma / big_w;
    let proxy = variance_proxy(
        &NoiseModel {
            sigma: i.sigma,
            ..NoiseModel::exact()
        },
        i.alpha,
        i.w,
        None,
        None,
    )?;
    let (varpi_1, varpi_2, c, rhs, varsigma) = match kind {
        OptimizerFamily::Adagrad => {
            let varpi_1 = 4.0 * i.constants.bound * t / (big_w * i.eta);
            let varpi_2 = (i.eta * eff.smoothness + 4.0 * zeta.sqrt()) / 2.0;
            let c = varpi_1 + varpi_2 * adagrad_log_term(i, zeta, eff.lipschitz);
            let rhs = 4.0 * c * i.epsilon.sqrt() / delta
                + 8.0 * c * (zeta * t).sqrt() / delta.powf(1.5)
                + 48.0 * c * c / (delta * delta);
            (varpi_1, varpi_2, c, rhs, None)
        }
        OptimizerFamily::Adam => {
            let s = i.varsigma.unwrap_or_else(|| (1.0 - i.beta2).sqrt());
            let varpi_1 = adam_varpi1(i, big_w, eff.lipschitz);
            let varpi_2 = adam_varpi2(i, eff.smoothness, zeta.sqrt());
            let c = varpi_1 + varpi_2 * adam_log_term(i, zeta, eff.lipschitz);
            let scale = i.eta * (1.0 - i.beta1);
            let rhs = (1.0 - i.beta2).sqrt() / (s * scale)
                * (4.0 * c * i.epsilon.sqrt() / delta
                    + 8.0 * c * (zeta * t).sqrt() / delta.powf(1.5))
                + 48.0 * (1.0 - i.beta2) * c * c / (s * s * scale * scale * delta * delta);
            (varpi_1, varpi_2, c, rhs, Some(s))
        }
    };
    Ok(BoundReport {
        theorem,
        inputs: *i,
        derived: DerivedConstants {
            weight_sum: big_w,
            l_prime: eff.lipschitz,
            gamma_prime: eff.smoothness,
            zeta,
            mu: Some(proxy.mu),
            mu_bar: None,
            varpi_1,
            varpi_2,
            varpi_3: None,
            c,
            varsigma,
        },
        rhs,
        warnings: Vec::new(),
    })
}

/// Bound on `Σ_t ‖∇S_{t,w,α}(x_t)‖²` holding with probability `1 − δ` under
/// sub-Gaussian noise of scale κ.
pub fn bound_highprob(kind: OptimizerFamily, inputs: &BoundInputs) -> Result<BoundReport> {
    let theorem = match kind {
        OptimizerFamily::Adagrad => Theorem::AdagradHighProb,
        OptimizerFamily::Adam => Theorem::AdamHighProb,
    };
    inputs.check(theorem)?;
    let i = inputs;
    let kappa = i.kappa.expect("checked above");
    let k2 = kappa * kappa;
    let (big_w, eff) = common(i)?;
    let t = i.horizon as f64;
    let log_inv_delta = -i.delta.ln();
    let zeta = k2 * (1.0 + log_inv_delta);
    let proxy = variance_proxy(
        &NoiseModel::exact(),
        i.alpha,
        i.w,
        Some(i.delta),
        Some(kappa),
    )?;
    let mut warnings = Vec::new();
    let (varpi_1, varpi_2, varpi_3, c, rhs, varsigma) = match kind {
        OptimizerFamily::Adagrad => {
            let varpi_1 = 4.0 * i.constants.bound * t / (big_w * i.eta);
            let varpi_2 = i.eta * eff.smoothness / 2.0 + 2.0 * zeta.sqrt() / big_w.sqrt();
            let c = varpi_1
                + varpi_2 * adagrad_log_term(i, zeta, eff.lipschitz)
                + 3.0 * k2 / i.epsilon.sqrt() * log_inv_delta;
            let rhs = 4.0 * c * i.epsilon.sqrt()
                + 4.0 * c * (2.0 * t * zeta / big_w).sqrt()
                + 48.0 * c * c / big_w;
            (varpi_1, varpi_2, None, c, rhs, None)
        }
        OptimizerFamily::Adam => {
            let s = i.varsigma.unwrap_or_else(|| (1.0 - i.beta2).sqrt());
            let varpi_1 = adam_varpi1(i, big_w, eff.lipschitz);
            let varpi_2 = adam_varpi2(i, eff.smoothness, zeta.sqrt() / big_w.sqrt());
            // β₁^{-T} is evaluated in log space so that only a genuinely
            // unrepresentable ϖ₃ becomes +∞.
            let log_varpi_3 = (3.0 * i.eta * (1.0 - i.beta1) * k2 * log_inv_delta).ln()
                - 2.0 * big_w.ln()
                - t * i.beta1.ln()
                - 0.5 * (1.0 - i.beta2).ln()
                - 0.5 * i.epsilon.ln();
            let varpi_3 = log_varpi_3.exp();
            if varpi_3.is_infinite() {
                warnings.push(format!(
                    "varpi_3 overflows: beta_1^T = exp({:.6e}) underflows; bound reported as infinite",
                    t * i.beta1.ln()
                ));
            }
            let c = varpi_1 + varpi_2 * adam_log_term(i, zeta, eff.lipschitz) + varpi_3;
            let scale = i.eta * (1.0 - i.beta1);
            let rhs = 4.0 * (1.0 - i.beta2).sqrt() * c / (s * scale)
                * (i.epsilon.sqrt() + (2.0 * t * zeta / big_w).sqrt())
                + 48.0 * (1.0 - i.beta2) * c * c / (big_w * s * s * scale * scale);
            (varpi_1, varpi_2, Some(varpi_3), c, rhs, Some(s))
        }
    };
    if rhs.is_infinite() && warnings.is_empty() {
        warnings.push("bound overflows f64; reported as infinite".into());
    }
    Ok(BoundReport {
        theorem,
        inputs: *i,
        derived: DerivedConstants {
            weight_sum: big_w,
            l_prime: eff.lipschitz,
            gamma_prime: eff.smoothness,
            zeta,
            mu: None,
            mu_bar: proxy.mu_bar,
            varpi_1,
            varpi_2,
            varpi_3,
            c,
            varsigma,
        },
        rhs,
        warnings,
    })
}

pub fn bound_report(theorem: Theorem, inputs: &BoundInputs) -> Result<BoundReport> {
    if theorem.is_high_prob() {
        bound_highprob(theorem.family(), inputs)
    } else {
        bound_expectation(theorem.family(), inputs)
    }
}

/// Least-squares fit of `DLR(T) ≈ slope·ln T + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    /// `DLR(T_k) / ln T_k`.
    pub ratios: Vec<f64>,
    /// `|r_k − r_{k−1}| / r_{k−1}` for the last two ratios.
    pub tail_change: f64,
    /// False when the ratios increase strictly and the last step grows by
    /// more than [`LOG_TAIL_TOLERANCE`].
    pub logarithmic: bool,
}

pub const LOG_TAIL_TOLERANCE: f64 = 0.10;

pub fn logarithmic_fit(horizons: &[u64], dlr: &[f64]) -> Result<LogFit> {
    if horizons.len() != dlr.len() {
        return Err(Error::InvalidInput(format!(
            "{} horizons but {} regret values",
            horizons.len(),
            dlr.len()
        )));
    }
    if horizons.len() < 3 {
        return Err(Error::InvalidInput(
            "logarithmic fit needs at least 3 horizons".into(),
        ));
    }
    if horizons.windows(2).any(|p| p[0] >= p[1]) || horizons[0] < 2 {
        return Err(Error::InvalidInput(
            "horizons must be strictly increasing and >= 2".into(),
        ));
    }
    if dlr.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("regret values must be finite".into()));
    }
    let xs: Vec<f64> = horizons.iter().map(|&t| (t as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = dlr.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(dlr).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs
        .iter()
        .zip(dlr)
        .map(|(x, y)| y - (slope * x + intercept))
        .collect();
    let ratios: Vec<f64> = xs.iter().zip(dlr).map(|(x, y)| y / x).collect();
    let k = ratios.len();
    let tail_change = (ratios[k - 1] - ratios[k - 2]).abs() / ratios[k - 2].abs();
    let increasing = ratios.windows(2).all(|p| p[1] > p[0]);
    let logarithmic =
        !(increasing && (ratios[k - 1] - ratios[k - 2]) / ratios[k - 2].abs() > LOG_TAIL_TOLERANCE);
    Ok(LogFit {
        slope,
        intercept,
        residuals,
        ratios,
        tail_change,
        logarithmic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{InnerAdaptConfig, RoundRecord, RunSettings};
    use crate::optimizer::make_config_adagrad;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn rv(x: &[f64]) -> RealVector {
        RealVector::new(x.to_vec()).unwrap()
    }

    /// A stream-less trace with scripted scalar gradients at fixed iterates.
    fn scripted(grads: &[f64]) -> RunTrace {
        let records = grads
            .iter()
            .enumerate()
            .map(|(i, &g)| RoundRecord {
                t: i as u64 + 1,
                iterate: rv(&[0.0]),
                adapted: rv(&[0.0]),
                loss: 0.0,
                test_loss_estimate: 0.0,
                exact_gradient: rv(&[g]),
                smoothed_gradient: rv(&[g]),
                eta: 0.1,
            })
            .collect();
        RunTrace {
            seed: 0,
            settings: RunSettings {
                inner: InnerAdaptConfig::new(0.1),
                optimizer: make_config_adagrad(0.1, 1e-8, 1.0, 1).unwrap(),
            },
            records,
            stream: None,
        }
    }

    #[test]
    fn smoothed_gradient_examples() {
        let tr = scripted(&[2.0, 4.0, 7.0]);
        // t = 1: only the first term survives.
        assert_eq!(
            exact_smoothed_gradient(&tr, 1, 5, 0.5).unwrap(),
            rv(&[2.0 / weight_sum(0.5, 5).unwrap()])
        );
        // w = 1 returns the round's own gradient.
        assert_eq!(exact_smoothed_gradient(&tr, 3, 1, 0.3).unwrap(), rv(&[7.0]));
        // α = 1, w = 2 at t = 2: ([4] + [2]) / 2.
        assert_eq!(exact_smoothed_gradient(&tr, 2, 2, 1.0).unwrap(), rv(&[3.0]));
        assert!(matches!(
            exact_smoothed_gradient(&tr, 0, 2, 1.0),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            exact_smoothed_gradient(&tr, 4, 2, 1.0),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn dlr_scripted_hand_values() {
        let tr = scripted(&[1.0, 1.0, 1.0]);
        let l = dlr_cumulative(&tr, 2, 1.0).unwrap();
        assert_eq!(l.per_round, vec![0.25, 1.0, 1.0]);
        assert_eq!(l.total(), 2.25);

        let single = dlr_cumulative(&scripted(&[3.0]), 1, 1.0).unwrap();
        assert_eq!(single.total(), 9.0);

        let zero = dlr_cumulative(&scripted(&[0.0; 10]), 4, 0.9).unwrap();
        assert_eq!(zero.total(), 0.0);
    }

    #[test]
    fn slr_needs_task_handles() {
        let tr = scripted(&[1.0, 2.0]);
        assert!(matches!(slr_cumulative(&tr, 2), Err(Error::Capability(_))));
    }

    #[test]
    fn effective_constants_examples() {
        let c = LossConstants::new(1.0, 5.0, 2.0, 3.0).unwrap();
        let e = effective_constants(&c, 0.1);
        assert_relative_eq!(e.lipschitz, 6.0, max_relative = 1e-15);
        assert_relative_eq!(
            e.smoothness,
            0.1 * 5.0 * 3.0 + 1.2f64.powi(2) * 2.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(e.smoothness, 4.38, max_relative = 1e-12);

        let zero = effective_constants(&c, 0.0);
        assert_eq!((zero.lipschitz, zero.smoothness), (5.0, 2.0));

        let k = 3.0;
        let scaled = effective_constants(
            &LossConstants::new(1.0, k * 5.0, k * 2.0, k * 3.0).unwrap(),
            0.1,
        );
        assert_relative_eq!(
            scaled.lipschitz,
            (1.0 + 0.1 * k * 2.0) * k * 5.0,
            max_relative = 1e-15
        );
        assert!((scaled.lipschitz - k * e.lipschitz).abs() > 1e-6);
    }

    #[test]
    fn variance_proxy_examples() {
        let exact = variance_proxy(&NoiseModel::exact(), 0.5, 2, None, None).unwrap();
        assert_eq!(exact.mu, 0.0);

        let p = variance_proxy(&NoiseModel::gaussian(2.0).unwrap(), 0.5, 2, None, None).unwrap();
        assert_relative_eq!(
            p.mu,
            4.0 * (1.0 - 0.0625) / (1.5 * 1.5 * 0.75),
            max_relative = 1e-14
        );
        assert_relative_eq!(p.mu, 20.0 / 9.0, max_relative = 1e-14);

        let lim = variance_proxy(&NoiseModel::gaussian(1.0).unwrap(), 1.0, 4, None, None).unwrap();
        assert_eq!(lim.mu, 0.25);
        assert_eq!(lim.zeta_expectation, 0.25);
    }

    #[test]
    fn mu_bar_formula_and_domain() {
        let noise = NoiseModel::sub_gaussian(1.0, 3).unwrap();
        let k = noise.kappa.unwrap();
        let p = variance_proxy(&noise, 1.0, 4, Some(0.2), None).unwrap();
        // α = 1: w·w/w² = 1.
        assert_relative_eq!(
            p.mu_bar.unwrap(),
            k * k * (1.0 + (1.0f64 / 0.2).ln()),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            p.zeta_high_prob.unwrap(),
            k * k * (std::f64::consts::E / 0.2).ln(),
            max_relative = 1e-14
        );
        assert!(variance_proxy(&noise, 1.0, 4, Some(1.0), None).is_err());
        assert!(variance_proxy(&noise, 1.0, 4, Some(0.0), None).is_err());
        assert!(variance_proxy(&NoiseModel::exact(), 1.0, 4, Some(0.1), None).is_err());
    }

    fn desk_inputs() -> BoundInputs {
        BoundInputs {
            horizon: 1000,
            dim: 10,
            delta: 0.1,
            eta: 0.1,
            beta1: 0.0,
            beta2: 1.0,
            epsilon: 1e-8,
            alpha: 1.0,
            w: 500,
            sigma: 0.5,
            kappa: Some(0.6),
            theta: 0.1,
            varsigma: None,
            constants: LossConstants::new(1.0, 1.0, 1.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn noiseless_single_round_drops_variance_term() {
        let mut i = desk_inputs();
        i.horizon = 1;
        i.sigma = 0.0;
        let r = bound_expectation(OptimizerFamily::Adagrad, &i).unwrap();
        assert_eq!(r.derived.zeta, 0.0);
        let c = r.derived.c;
        let expected = 4.0 * c * i.epsilon.sqrt() / i.delta + 48.0 * c * c / (i.delta * i.delta);
        assert_relative_eq!(r.rhs, expected, max_relative = 1e-14);
    }

    #[test]
    fn larger_delta_gives_smaller_bound() {
        let i = desk_inputs();
        for th in Theorem::ALL {
            let mut a = i;
            let mut b = i;
            if th.family() == OptimizerFamily::Adam {
                for x in [&mut a, &mut b] {
                    x.beta1 = 0.5;
                    x.beta2 = 0.9;
                    x.horizon = 50;
                }
            }
            a.delta = 0.05;
            b.delta = 0.1;
            let ra = bound_report(th, &a).unwrap();
            let rb = bound_report(th, &b).unwrap();
            assert!(rb.rhs < ra.rhs, "{th:?}: {} !< {}", rb.rhs, ra.rhs);
        }
    }

    #[test]
    fn constraint_violations_name_the_inequality() {
        let mut i = desk_inputs();
        i.beta1 = 0.5;
        let e = bound_expectation(OptimizerFamily::Adagrad, &i).unwrap_err();
        assert!(e.to_string().contains("beta_1 = 0"), "{e}");
        let mut i = desk_inputs();
        i.beta1 = 0.9;
        i.beta2 = 0.9;
        let e = bound_expectation(OptimizerFamily::Adam, &i).unwrap_err();
        assert!(e.to_string().contains("beta_1 < beta_2"), "{e}");
        let mut i = desk_inputs();
        i.kappa = None;
        let e = bound_highprob(OptimizerFamily::Adagrad, &i).unwrap_err();
        assert!(e.to_string().contains("kappa"), "{e}");
        let mut i = desk_inputs();
        i.delta = 1.0;
        assert!(bound_expectation(OptimizerFamily::Adagrad, &i).is_err());
    }

    #[test]
    fn adam_high_prob_overflow_is_infinite_not_a_crash() {
        let mut i = desk_inputs();
        i.beta1 = 0.5;
        i.beta2 = 0.9;
        i.horizon = 100_000;
        let r = bound_highprob(OptimizerFamily::Adam, &i).unwrap();
        assert!(r.is_infinite());
        assert!(!r.warnings.is_empty());
        let rec = r.to_record();
        assert_eq!(rec["rhs"], Value::Null);
        assert_eq!(rec["rhs_infinite"], Value::Bool(true));
    }

    #[test]
    fn high_prob_log_terms_vanish_as_delta_tends_to_one() {
        let mut i = desk_inputs();
        i.delta = 1.0 - 1e-15;
        let r = bound_highprob(OptimizerFamily::Adagrad, &i).unwrap();
        let k2 = 0.36;
        assert_relative_eq!(r.derived.zeta, k2, max_relative = 1e-12);
        let mut i = desk_inputs();
        i.beta1 = 0.5;
        i.beta2 = 0.9;
        i.horizon = 20;
        i.delta = 1.0 - 1e-15;
        let r = bound_highprob(OptimizerFamily::Adam, &i).unwrap();
        assert!(r.derived.varpi_3.unwrap() < 1e-3 * r.derived.varpi_1);
    }

    #[test]
    fn high_prob_increases_with_kappa() {
        let mut prev = 0.0;
        for k in [0.1, 0.5, 1.0, 2.0] {
            let mut i = desk_inputs();
            i.kappa = Some(k);
            let r = bound_highprob(OptimizerFamily::Adagrad, &i).unwrap();
            assert!(r.rhs > prev);
            prev = r.rhs;
        }
    }

    #[test]
    fn record_lists_symbols() {
        let r = bound_expectation(OptimizerFamily::Adagrad, &desk_inputs()).unwrap();
        let rec = r.to_record();
        for k in [
            "varpi_1",
            "varpi_2",
            "zeta",
            "C",
            "rhs",
            "L_prime",
            "gamma_prime",
            "W",
            "mu",
            "T",
            "delta",
        ] {
            assert!(rec.contains_key(k), "missing {k}");
        }
        assert_eq!(rec["T"], Value::from(1000u64));
        assert_eq!(rec["theorem"], Value::from("adagrad_expectation"));
    }

    #[test]
    fn log_fit_examples() {
        let hs = [500u64, 1000, 2000, 4000];
        let exact: Vec<f64> = hs.iter().map(|&t| 5.0 * (t as f64).ln()).collect();
        let f = logarithmic_fit(&hs, &exact).unwrap();
        assert_abs_diff_eq!(f.slope, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.intercept, 0.0, epsilon = 1e-10);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-10));
        assert!(f.logarithmic);

        let linear: Vec<f64> = hs.iter().map(|&t| t as f64).collect();
        let f = logarithmic_fit(&hs, &linear).unwrap();
        assert!(f.ratios.windows(2).all(|p| p[1] > p[0]));
        assert!(!f.logarithmic);

        assert!(logarithmic_fit(&hs[..2], &exact[..2]).is_err());
    }
}
