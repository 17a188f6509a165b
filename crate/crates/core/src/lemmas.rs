//! Numerical checks of the standalone inequalities behind the regret
//! analysis, plus Monte-Carlo checks of the smoothed stochastic gradient.
//!
//! A check never fails on a true inequality: sums are accumulated with
//! compensation and a point counts as a violation only when
//! `rhs − lhs < −1e-9·max(1, |rhs|)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{run_stream, InnerAdaptConfig, RunTrace};
use crate::numerics::{norm_sq, spawn_rng_stream, CompensatedSum, RealVector};
use crate::optimizer::{
    make_config_adagrad, smoothed_stochastic_gradient, weight_sum, SmoothingWindow,
};
use crate::regret::{exact_smoothed_gradient, variance_proxy};
use crate::tasks::{make_drifting_sine_stream, Loss, NoiseModel, SineLoss};

pub const VIOLATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub params: Vec<(String, f64)>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheckResult {
    pub lemma_id: String,
    pub grid_size: usize,
    pub violations: Vec<Violation>,
    /// Smallest `rhs − lhs` seen over the grid.
    pub max_slack: f64,
}

impl LemmaCheckResult {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    /// One report line: id, grid size, verdict, slack.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<28} {:>8} points  {}  min slack {:.6e}",
            self.lemma_id,
            self.grid_size,
            if self.pass() { "PASS" } else { "FAIL" },
            self.max_slack
        )
    }

    fn merge(id: &str, parts: Vec<LemmaCheckResult>) -> LemmaCheckResult {
        let mut out = Checker::new(id, 1.0).finish();
        for p in parts {
            out.grid_size += p.grid_size;
            out.violations.extend(p.violations);
            out.max_slack = out.max_slack.min(p.max_slack);
        }
        out
    }
}

/// Accumulates grid points; `tamper` scales every rhs (1 in normal use).
struct Checker {
    id: String,
    grid_size: usize,
    violations: Vec<Violation>,
    min_slack: f64,
    tamper: f64,
}

impl Checker {
    fn new(id: &str, tamper: f64) -> Self {
        Checker {
            id: id.to_string(),
            grid_size: 0,
            violations: Vec::new(),
            min_slack: f64::INFINITY,
            tamper,
        }
    }

    fn record<F: FnOnce() -> Vec<(String, f64)>>(&mut self, params: F, lhs: f64, rhs: f64) {
        let rhs = rhs * self.tamper;
        self.grid_size += 1;
        let slack = rhs - lhs;
        self.min_slack = self.min_slack.min(slack);
        if !(slack >= -VIOLATION_TOLERANCE * rhs.abs().max(1.0)) {
            self.violations.push(Violation {
                params: params(),
                lhs,
                rhs,
            });
        }
    }

    fn finish(self) -> LemmaCheckResult {
        LemmaCheckResult {
            lemma_id: self.id,
            grid_size: self.grid_size,
            violations: self.violations,
            max_slack: self.min_slack,
        }
    }
}

fn p(name: &str, v: f64) -> (String, f64) {
    (name.to_string(), v)
}

fn check_geometric_grid(a_grid: &[f64], q_grid: &[usize]) -> Result<usize> {
    if let Some(a) = a_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::config(format!("a = {a} violates 0 < a < 1")));
    }
    if q_grid.contains(&0) {
        return Err(Error::config("Q = 0 violates Q >= 1"));
    }
    Ok(q_grid.iter().copied().max().unwrap_or(0))
}

/// Runs `Σ_{q<Q} term(a, q) ≤ bound(a)` over the grid with one pass per `a`.
fn geometric_series_check(
    id: &str,
    a_grid: &[f64],
    q_grid: &[usize],
    tamper: f64,
    term: impl Fn(f64, usize) -> f64,
    bound: impl Fn(f64) -> f64,
) -> Result<LemmaCheckResult> {
    let q_max = check_geometric_grid(a_grid, q_grid)?;
    let mut c = Checker::new(id, tamper);
    let mut qs = q_grid.to_vec();
    qs.sort_unstable();
    qs.dedup();
    for &a in a_grid {
        let rhs = bound(a);
        let mut sum = CompensatedSum::new();
        let mut next = qs.iter().peekable();
        for q in 0..q_max {
            sum.add(term(a, q));
            if next.peek() == Some(&&(q + 1)) {
                next.next();
                let lhs = sum.value();
                c.record(|| vec![p("a", a), p("Q", (q + 1) as f64)], lhs, rhs);
            }
        }
    }
    Ok(c.finish())
}

/// `Σ_{q<Q} a^q √(q+1) ≤ 2/(1−a)^{3/2}`.
pub fn check_geom_sqrt_sum(a_grid: &[f64], q_grid: &[usize]) -> Result<LemmaCheckResult> {
    geom_sqrt(a_grid, q_grid, 1.0)
}

fn geom_sqrt(a_grid: &[f64], q_grid: &[usize], tamper: f64) -> Result<LemmaCheckResult> {
    geometric_series_check(
        "geom_sqrt",
        a_grid,
        q_grid,
        tamper,
        |a, q| a.powi(q as i32) * ((q + 1) as f64).sqrt(),
        |a| 2.0 / (1.0 - a).powf(1.5),
    )
}

/// The sharper middle bound `(1 + √π/(2√(−ln a)))/(1−a)` of the same sum.
pub fn check_geom_sqrt_intermediate(a_grid: &[f64], q_grid: &[usize]) -> Result<LemmaCheckResult> {
    geom_sqrt_intermediate(a_grid, q_grid, 1.0)
}

fn geom_sqrt_intermediate(
    a_grid: &[f64],
    q_grid: &[usize],
    tamper: f64,
) -> Result<LemmaCheckResult> {
    geometric_series_check(
        "geom_sqrt_intermediate",
        a_grid,
        q_grid,
        tamper,
        |a, q| a.powi(q as i32) * ((q + 1) as f64).sqrt(),
        |a| (1.0 + std::f64::consts::PI.sqrt() / (2.0 * (-a.ln()).sqrt())) / (1.0 - a),
    )
}

/// `Σ_{q<Q} a^q √q (q+1) ≤ 4a/(1−a)^{5/2}`.
pub fn check_geom_32_sum(a_grid: &[f64], q_grid: &[usize]) -> Result<LemmaCheckResult> {
    geom_32(a_grid, q_grid, 1.0)
}

fn geom_32(a_grid: &[f64], q_grid: &[usize], tamper: f64) -> Result<LemmaCheckResult> {
    geometric_series_check(
        "geom_32",
        a_grid,
        q_grid,
        tamper,
        |a, q| a.powi(q as i32) * (q as f64).sqrt() * (q + 1) as f64,
        |a| 4.0 * a / (1.0 - a).powf(2.5),
    )
}

/// `Σ_{q<Q} a^q/√(q+1) ≤ 2/(a√(1−a))`.
pub fn check_inv_sqrt_geom(a_grid: &[f64], q_grid: &[usize]) -> Result<LemmaCheckResult> {
    inv_sqrt_geom(a_grid, q_grid, 1.0)
}

fn inv_sqrt_geom(a_grid: &[f64], q_grid: &[usize], tamper: f64) -> Result<LemmaCheckResult> {
    geometric_series_check(
        "inv_sqrt_geom",
        a_grid,
        q_grid,
        tamper,
        |a, q| a.powi(q as i32) / ((q + 1) as f64).sqrt(),
        |a| 2.0 / (a * (1.0 - a).sqrt()),
    )
}

/// Sum-ratio inequality at every prefix of `seq`.
///
/// With `β₁ = 0` this is `Σ a_j/(ε+b_j) ≤ ln(1+b_N/ε) − N ln β₂` where
/// `b_n = Σ β₂^{n−j} a_j` and the `a_j` must be non-negative. With `β₁ > 0`
/// it is the momentum form `Σ c_j²/(ε+b_j) ≤ (ln(1+b_n/ε) − n ln β₂) /
/// ((1−β₁)(1−β₁/β₂))` with `b_n = Σ β₂^{n−j} a_j²`, `c_n = Σ β₁^{n−j} a_j`.
pub fn check_sum_ratio(beta1: f64, beta2: f64, seq: &[f64], eps: f64) -> Result<LemmaCheckResult> {
    sum_ratio(beta1, beta2, seq, eps, 1.0)
}

fn sum_ratio(
    beta1: f64,
    beta2: f64,
    seq: &[f64],
    eps: f64,
    tamper: f64,
) -> Result<LemmaCheckResult> {
    if !(beta2 > 0.0 && beta2 <= 1.0) {
        return Err(Error::config(format!(
            "beta_2 = {beta2} violates 0 < beta_2 <= 1"
        )));
    }
    if !(beta1 >= 0.0 && beta1 < beta2) {
        return Err(Error::config(format!(
            "beta_1 = {beta1} violates 0 <= beta_1 < beta_2 = {beta2}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!(
            "epsilon = {eps} violates epsilon > 0"
        )));
    }
    if seq.iter().any(|a| !a.is_finite()) {
        return Err(Error::config("sequence entries must be finite"));
    }
    let momentum = beta1 > 0.0;
    if !momentum && seq.iter().any(|a| *a < 0.0) {
        return Err(Error::config(
            "sequence entries must be >= 0 when beta_1 = 0",
        ));
    }
    let (id, factor) = if momentum {
        (
            "sum_ratio_momentum",
            1.0 / ((1.0 - beta1) * (1.0 - beta1 / beta2)),
        )
    } else {
        ("sum_ratio", 1.0)
    };
    let mut c = Checker::new(id, tamper);
    let (mut b, mut m) = (0.0, 0.0);
    let mut lhs = CompensatedSum::new();
    for (j, &a) in seq.iter().enumerate() {
        let n = (j + 1) as f64;
        let num = if momentum {
            b = beta2 * b + a * a;
            m = beta1 * m + a;
            m * m
        } else {
            b = beta2 * b + a;
            a
        };
        lhs.add(num / (eps + b));
        let rhs = factor * ((b / eps).ln_1p() - n * beta2.ln());
        c.record(
            || {
                vec![
                    p("beta_1", beta1),
                    p("beta_2", beta2),
                    p("epsilon", eps),
                    p("n", n),
                ]
            },
            lhs.value(),
            rhs,
        );
    }
    Ok(c.finish())
}

/// For each `Z` in the grid satisfying `Z/√(cZ+a) ≤ b`, checks `Z ≤ cb² + b√a`.
pub fn check_quadratic(a: f64, b: f64, c: f64, z_grid: &[f64]) -> Result<LemmaCheckResult> {
    quadratic(a, b, c, z_grid, 1.0)
}

fn quadratic(a: f64, b: f64, c: f64, z_grid: &[f64], tamper: f64) -> Result<LemmaCheckResult> {
    for (name, v) in [("a", a), ("b", b), ("c", c)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(format!("{name} = {v} violates {name} >= 0")));
        }
    }
    if let Some(z) = z_grid.iter().find(|z| !(**z >= 0.0 && z.is_finite())) {
        return Err(Error::config(format!("Z = {z} violates Z >= 0")));
    }
    let mut chk = Checker::new("quadratic", tamper);
    let rhs = c * b * b + b * a.sqrt();
    for &z in z_grid {
        let denom = (c * z + a).sqrt();
        let hypothesis = if denom == 0.0 {
            z == 0.0
        } else {
            z / denom <= b
        };
        if hypothesis {
            chk.record(|| vec![p("a", a), p("b", b), p("c", c), p("Z", z)], z, rhs);
        }
    }
    Ok(chk.finish())
}

/// Evaluates the smoothed objective `(1/W) Σ_r α^r ℓ_{t−r}(·)`.
struct DriftTerms<'a> {
    trace: &'a RunTrace,
    w: usize,
    alpha: f64,
    big_w: f64,
}

impl DriftTerms<'_> {
    /// Every window loss at the common point `y`.
    fn at_point(&self, t: usize, y: &RealVector) -> Result<f64> {
        let mut s = CompensatedSum::new();
        let mut weight = 1.0;
        for r in 0..self.w.min(t) {
            s.add(weight * self.trace.round_loss((t - r) as u64)?.value(y)?);
            weight *= self.alpha;
        }
        Ok(s.value() / self.big_w)
    }

    /// Each window loss at its own round's iterate.
    fn historical(&self, t: usize) -> f64 {
        let mut s = CompensatedSum::new();
        let mut weight = 1.0;
        for r in 0..self.w.min(t) {
            s.add(weight * self.trace.records[t - 1 - r].loss);
            weight *= self.alpha;
        }
        s.value() / self.big_w
    }
}

/// `(1−α^k)/(1−α)`, equal to `k` at `α = 1`.
fn geometric_ratio(alpha: f64, k: usize) -> f64 {
    if alpha == 1.0 {
        k as f64
    } else {
        -(k as f64 * alpha.ln()).exp_m1() / (1.0 - alpha)
    }
}

/// Both objective-drift bounds at every consecutive round pair of `trace`.
///
/// The first compares `S_{t+1}` and `S_t` at the common point `x_{t+1}`;
/// the second compares `S_t(x_t)` with `S_{t+1}(x_{t+1})`, each window loss
/// at its own round's iterate. At `α = 1` the bounds use the limits
/// `(1−α^{w−1})/(1−α) → w−1` and `(1−α^w)/(1−α) → w`.
pub fn check_objective_drift(
    trace: &RunTrace,
    w: usize,
    alpha: f64,
    d: f64,
) -> Result<Vec<LemmaCheckResult>> {
    objective_drift(trace, w, alpha, d, 1.0)
}

fn objective_drift(
    trace: &RunTrace,
    w: usize,
    alpha: f64,
    d: f64,
    tamper: f64,
) -> Result<Vec<LemmaCheckResult>> {
    if trace.stream.is_none() {
        return Err(Error::Capability(
            "objective drift needs a trace that retains its task stream".into(),
        ));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::config(format!("D = {d} violates D > 0")));
    }
    let big_w = weight_sum(alpha, w)?;
    let terms = DriftTerms {
        trace,
        w,
        alpha,
        big_w,
    };
    let aw1 = alpha.powi(w as i32 - 1);
    let rhs1 = d * (1.0 + aw1) / big_w + d * geometric_ratio(alpha, w - 1) * (1.0 + alpha) / big_w;
    let rhs2 = 2.0 * d * geometric_ratio(alpha, w) / big_w;
    let mut c1 = Checker::new("objective_drift_point", tamper);
    let mut c2 = Checker::new("objective_drift_iterates", tamper);
    for t in 1..trace.len() {
        let x_next = &trace.records[t].iterate;
        let lhs1 = terms.at_point(t + 1, x_next)? - terms.at_point(t, x_next)?;
        c1.record(
            || vec![p("t", t as f64), p("w", w as f64), p("alpha", alpha)],
            lhs1,
            rhs1,
        );
        let lhs2 = terms.historical(t) - terms.historical(t + 1);
        c2.record(
            || vec![p("t", t as f64), p("w", w as f64), p("alpha", alpha)],
            lhs2,
            rhs2,
        );
    }
    Ok(vec![c1.finish(), c2.finish()])
}

/// Setup for the Monte-Carlo checks on one smoothing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McWindowConfig {
    pub dim: usize,
    pub w: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Monte-Carlo statistics of `∇̃S − ∇S` on one full window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McWindowStats {
    /// `‖mean(∇̃S) − ∇S‖`.
    pub mean_error: f64,
    /// `√(Σ_i s_i²/N)` from per-coordinate sample variances.
    pub standard_error: f64,
    /// Sample mean of `‖∇̃S − ∇S‖²`.
    pub mean_sq_deviation: f64,
    /// Its standard error.
    pub mean_sq_deviation_se: f64,
    pub mu: f64,
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// Draws `samples` smoothed stochastic gradients on a window of `w` sine
/// losses from a drifting stream, each at its own random iterate.
pub fn mc_window_stats(cfg: &McWindowConfig) -> Result<McWindowStats> {
    if cfg.samples < MIN_MC_SAMPLES {
        return Err(Error::config(format!(
            "N = {} violates N >= {MIN_MC_SAMPLES}",
            cfg.samples
        )));
    }
    let noise = NoiseModel::gaussian(cfg.sigma)?;
    let stream = make_drifting_sine_stream(cfg.dim, 1.0, 1.0, 0.1, noise, cfg.seed)?;
    let mut window: SmoothingWindow<SineLoss> = SmoothingWindow::new(cfg.alpha, cfg.w)?;
    let mut place = spawn_rng_stream(cfg.seed, u64::MAX);
    for t in 1..=cfg.w as u64 {
        let x = RealVector::new(place.normal_vec(cfg.dim, 1.0))?;
        window.push(x, stream.round(t)?.train);
    }
    let exact = window.exact_gradient()?;
    let d = cfg.dim;
    let mut sum = vec![CompensatedSum::new(); d];
    let mut sum_sq = vec![CompensatedSum::new(); d];
    let mut dev = CompensatedSum::new();
    let mut dev_sq = CompensatedSum::new();
    for i in 0..cfg.samples {
        let rng = spawn_rng_stream(cfg.seed, i as u64);
        let g = smoothed_stochastic_gradient(&window, &noise, &rng)?;
        let mut e2 = 0.0;
        for k in 0..d {
            let e = g[k] - exact[k];
            sum[k].add(e);
            sum_sq[k].add(e * e);
            e2 += e * e;
        }
        dev.add(e2);
        dev_sq.add(e2 * e2);
    }
    let n = cfg.samples as f64;
    let mut mean_err_sq = 0.0;
    let mut se_sq = 0.0;
    for k in 0..d {
        let m = sum[k].value() / n;
        let var = (sum_sq[k].value() / n - m * m) * n / (n - 1.0);
        mean_err_sq += m * m;
        se_sq += var / n;
    }
    let mean_dev = dev.value() / n;
    let var_dev = (dev_sq.value() / n - mean_dev * mean_dev) * n / (n - 1.0);
    Ok(McWindowStats {
        mean_error: mean_err_sq.sqrt(),
        standard_error: se_sq.sqrt(),
        mean_sq_deviation: mean_dev,
        mean_sq_deviation_se: (var_dev / n).sqrt(),
        mu: variance_proxy(&noise, cfg.alpha, cfg.w, None, None)?.mu,
    })
}

/// Unbiasedness: the Monte-Carlo mean error stays within 5 standard errors.
pub fn check_mc_unbiased(cfg: &McWindowConfig) -> Result<LemmaCheckResult> {
    mc_unbiased(cfg, 1.0)
}

fn mc_unbiased(cfg: &McWindowConfig, tamper: f64) -> Result<LemmaCheckResult> {
    let s = mc_window_stats(cfg)?;
    let mut c = Checker::new("mc_unbiased", tamper);
    c.record(|| mc_params(cfg), s.mean_error, 5.0 * s.standard_error);
    Ok(c.finish())
}

/// Variance identity: `E‖∇̃S − ∇S‖²` within ±3% of `μ` (Gaussian noise attains `μ`).
pub fn check_mc_variance(cfg: &McWindowConfig) -> Result<LemmaCheckResult> {
    mc_variance(cfg, 1.0)
}

fn mc_variance(cfg: &McWindowConfig, tamper: f64) -> Result<LemmaCheckResult> {
    let s = mc_window_stats(cfg)?;
    let mut c = Checker::new("mc_variance", tamper);
    c.record(|| mc_params(cfg), s.mean_sq_deviation, 1.03 * s.mu);
    c.record(|| mc_params(cfg), 0.97 * s.mu, s.mean_sq_deviation);
    Ok(c.finish())
}

fn mc_params(cfg: &McWindowConfig) -> Vec<(String, f64)> {
    vec![
        p("d", cfg.dim as f64),
        p("w", cfg.w as f64),
        p("alpha", cfg.alpha),
        p("sigma", cfg.sigma),
        p("N", cfg.samples as f64),
    ]
}

/// Setup for the sub-Gaussian exceedance experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceConfig {
    pub runs: usize,
    pub horizon: u64,
    pub dim: usize,
    pub w: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceStats {
    pub kappa: f64,
    pub mu_bar: f64,
    pub exceedances: usize,
    pub frequency: f64,
    /// `δ + 3√(δ(1−δ)/runs)`.
    pub threshold: f64,
}

/// κ for which `E[exp(max_i ‖n_i‖²/κ²)] ≤ e` over `draws` independent
/// Gaussian noise vectors of total variance `σ²` in dimension `dim`.
///
/// By Jensen, `E[exp(max_i X_i/κ²)] ≤ (draws · E[exp(p X/κ²)])^{1/p}`; with
/// `p = 1 + ln draws` and `κ² = p·κ_min²` the right side is exactly `e`.
pub fn kappa_for_max(sigma: f64, dim: usize, draws: usize) -> f64 {
    let p = 1.0 + (draws.max(1) as f64).ln();
    NoiseModel::min_kappa(sigma, dim) * p.sqrt()
}

/// Runs `runs` short seeded runs and counts how often
/// `max_t ‖∇̃S_t − ∇S_t‖²` exceeds `μ̄`.
pub fn mc_exceedance(cfg: &ExceedanceConfig) -> Result<ExceedanceStats> {
    if cfg.runs < 1 || cfg.horizon < 1 {
        return Err(Error::config("runs and horizon must be >= 1"));
    }
    let kappa = kappa_for_max(cfg.sigma, cfg.dim, cfg.horizon as usize * cfg.w);
    let noise = NoiseModel::sub_gaussian(cfg.sigma, cfg.dim)?.with_kappa(kappa, cfg.dim)?;
    let mu_bar = variance_proxy(&noise, cfg.alpha, cfg.w, Some(cfg.delta), None)?
        .mu_bar
        .expect("delta given");
    let opt = make_config_adagrad(0.1, 1e-8, cfg.alpha, cfg.w)?;
    let inner = InnerAdaptConfig::new(0.1);
    let exceeded = (0..cfg.runs)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let seed = cfg.seed.wrapping_add(k as u64);
            let stream = make_drifting_sine_stream(cfg.dim, 1.0, 1.0, 0.05, noise, seed)?;
            let trace =
                run_stream(&stream, cfg.horizon, &inner, &opt, seed).map_err(|f| f.error)?;
            let mut worst: f64 = 0.0;
            for t in 1..=trace.len() {
                let exact = exact_smoothed_gradient(&trace, t, cfg.w, cfg.alpha)?;
                let dev = trace.records[t - 1].smoothed_gradient.sub(&exact)?;
                worst = worst.max(norm_sq(dev.as_slice()));
            }
            Ok(worst > mu_bar)
        })
        .collect::<Result<Vec<bool>>>()?;
    let exceedances = exceeded.iter().filter(|e| **e).count();
    let n = cfg.runs as f64;
    Ok(ExceedanceStats {
        kappa,
        mu_bar,
        exceedances,
        frequency: exceedances as f64 / n,
        threshold: cfg.delta + 3.0 * (cfg.delta * (1.0 - cfg.delta) / n).sqrt(),
    })
}

pub fn check_mc_exceedance(cfg: &ExceedanceConfig) -> Result<LemmaCheckResult> {
    mc_exceedance_check(cfg, 1.0)
}

fn mc_exceedance_check(cfg: &ExceedanceConfig, tamper: f64) -> Result<LemmaCheckResult> {
    let s = mc_exceedance(cfg)?;
    let mut c = Checker::new("mc_subgaussian_exceedance", tamper);
    c.record(
        || {
            vec![
                p("runs", cfg.runs as f64),
                p("T", cfg.horizon as f64),
                p("delta", cfg.delta),
            ]
        },
        s.frequency,
        s.threshold,
    );
    Ok(c.finish())
}

/// The three Monte-Carlo checks on the smoothed stochastic gradient.
pub fn mc_smoothed_gradient_lemmas(
    window: &McWindowConfig,
    exceed: &ExceedanceConfig,
) -> Result<Vec<LemmaCheckResult>> {
    Ok(vec![
        check_mc_unbiased(window)?,
        check_mc_variance(window)?,
        check_mc_exceedance(exceed)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    Quick,
    Full,
}

/// Identifiers accepted by the corruption hook of [`run_all`].
pub const LEMMA_IDS: [&str; 13] = [
    "geom_sqrt",
    "geom_sqrt_intermediate",
    "geom_32",
    "inv_sqrt_geom",
    "sum_ratio",
    "sum_ratio_momentum",
    "quadratic",
    "objective_drift_point",
    "objective_drift_iterates",
    "mc_unbiased",
    "mc_variance",
    "mc_variance_limit",
    "mc_subgaussian_exceedance",
];

/// Ids of the purely scalar inequalities.
pub const SCALAR_LEMMA_IDS: [&str; 7] = [
    "geom_sqrt",
    "geom_sqrt_intermediate",
    "geom_32",
    "inv_sqrt_geom",
    "sum_ratio",
    "sum_ratio_momentum",
    "quadratic",
];

pub fn a_grid(preset: GridPreset) -> Vec<f64> {
    let mut g = vec![1e-9, 1e-3, 0.01, 0.99, 0.999];
    let n = match preset {
        GridPreset::Quick => 20,
        GridPreset::Full => 400,
    };
    g.extend((1..n).map(|i| i as f64 / n as f64));
    g
}

pub fn q_grid(preset: GridPreset) -> Vec<usize> {
    let (dense, sparse): (usize, &[usize]) = match preset {
        GridPreset::Quick => (20, &[50, 100, 1000, 10_000]),
        GridPreset::Full => (200, &[500, 1000, 5000, 10_000, 100_000]),
    };
    let mut g: Vec<usize> = (1..=dense).collect();
    g.extend_from_slice(sparse);
    g
}

/// Random sum-ratio sequences; every fourth uses one of the edge `β₂` values.
fn sum_ratio_random(
    momentum: bool,
    count: usize,
    max_len: usize,
    seed: u64,
    tamper: f64,
) -> Result<LemmaCheckResult> {
    let edge = [0.5, 0.999, 1.0];
    let parts = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = spawn_rng_stream(seed, k as u64);
            let beta2 = if k % 4 == 0 {
                edge[(k / 4) % edge.len()]
            } else {
                rng.uniform_range(0.3, 1.0)
            };
            let beta1 = if momentum {
                beta2 * rng.uniform_range(0.01, 0.99)
            } else {
                0.0
            };
            let eps = 10f64.powf(rng.uniform_range(-8.0, 0.0));
            let len = 1 + rng.index(max_len);
            let scale = 10f64.powf(rng.uniform_range(-4.0, 2.0));
            let seq: Vec<f64> = (0..len)
                .map(|_| {
                    let v = scale * rng.normal();
                    if momentum {
                        v
                    } else if rng.uniform() < 0.1 {
                        0.0
                    } else {
                        v.abs()
                    }
                })
                .collect();
            sum_ratio(beta1, beta2, &seq, eps, tamper)
        })
        .collect::<Result<Vec<_>>>()?;
    let id = if momentum {
        "sum_ratio_momentum"
    } else {
        "sum_ratio"
    };
    Ok(LemmaCheckResult::merge(id, parts))
}

fn quadratic_random(count: usize, seed: u64, tamper: f64) -> Result<LemmaCheckResult> {
    let mut rng = spawn_rng_stream(seed, 0);
    let mut parts = vec![
        quadratic(
            0.0,
            2.0,
            1.0,
            &[0.0, 1.0, 2.0, 3.999, 4.0, 4.001, 5.0],
            tamper,
        )?,
        quadratic(3.0, 0.7, 2.5, &[0.0], tamper)?,
    ];
    for _ in 0..count {
        let a = rng.uniform_range(0.0, 10.0);
        let b = rng.uniform_range(0.0, 10.0);
        let c = rng.uniform_range(0.0, 10.0);
        // Largest Z satisfying the hypothesis, then a point beneath it.
        let z_max = (c * b * b + (c * c * b.powi(4) + 4.0 * b * b * a).sqrt()) / 2.0;
        let z = z_max * rng.uniform();
        parts.push(quadratic(a, b, c, &[z, z_max], tamper)?);
    }
    Ok(LemmaCheckResult::merge("quadratic", parts))
}

fn drift_runs(preset: GridPreset, tamper: f64) -> Result<Vec<LemmaCheckResult>> {
    let (seeds, horizon) = match preset {
        GridPreset::Quick => (4u64, 200u64),
        GridPreset::Full => (20, 500),
    };
    let (w, alpha) = (32usize, 0.99);
    let inner = InnerAdaptConfig::new(0.1);
    let opt = make_config_adagrad(0.1, 1e-8, alpha, w)?;
    let per_seed = (0..seeds)
        .into_par_iter()
        .map(|seed| -> Result<Vec<LemmaCheckResult>> {
            let stream =
                make_drifting_sine_stream(3, 1.0, 1.0, 0.05, NoiseModel::gaussian(0.3)?, seed)?;
            let trace = run_stream(&stream, horizon, &inner, &opt, seed).map_err(|f| f.error)?;
            let mut out = objective_drift(&trace, w, alpha, 1.0, tamper)?;
            let stationary =
                make_drifting_sine_stream(3, 1.0, 1.0, 0.0, NoiseModel::gaussian(0.3)?, seed)?;
            let trace = run_stream(
                &stationary,
                horizon / 4,
                &inner,
                &make_config_adagrad(0.1, 1e-8, 1.0, 1)?,
                seed,
            )
            .map_err(|f| f.error)?;
            out.extend(objective_drift(&trace, 1, 1.0, 1.0, tamper)?);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut point = Vec::new();
    let mut iterates = Vec::new();
    for group in per_seed {
        for r in group {
            if r.lemma_id == "objective_drift_point" {
                point.push(r);
            } else {
                iterates.push(r);
            }
        }
    }
    Ok(vec![
        LemmaCheckResult::merge("objective_drift_point", point),
        LemmaCheckResult::merge("objective_drift_iterates", iterates),
    ])
}

/// Runs every registered check for `preset`. `corrupt` names a lemma whose
/// bound is deliberately scaled down (a harness self-test).
pub fn run_all(preset: GridPreset, corrupt: Option<&str>) -> Result<Vec<LemmaCheckResult>> {
    let mut results = run_scalar(preset, corrupt)?;
    let tamper = |id: &str| -> f64 {
        if corrupt == Some(id) {
            0.25
        } else {
            1.0
        }
    };
    results.extend(drift_runs(
        preset,
        tamper("objective_drift_point").min(tamper("objective_drift_iterates")),
    )?);
    let samples = match preset {
        GridPreset::Quick => 20_000,
        GridPreset::Full => 100_000,
    };
    let window = McWindowConfig {
        dim: 5,
        w: 8,
        alpha: 0.9,
        sigma: 0.5,
        samples,
        seed: 11,
    };
    results.push(mc_unbiased(&window, tamper("mc_unbiased"))?);
    results.push(mc_variance(&window, tamper("mc_variance"))?);
    let limit = McWindowConfig {
        dim: 3,
        w: 4,
        alpha: 1.0,
        sigma: 1.0,
        samples,
        seed: 12,
    };
    let mut lim = mc_variance(&limit, tamper("mc_variance_limit"))?;
    lim.lemma_id = "mc_variance_limit".into();
    results.push(lim);
    let exceed = ExceedanceConfig {
        runs: match preset {
            GridPreset::Quick => 100,
            GridPreset::Full => 500,
        },
        horizon: 20,
        dim: 5,
        w: 4,
        alpha: 0.9,
        sigma: 0.5,
        delta: 0.2,
        seed: 13,
    };
    results.push(mc_exceedance_check(
        &exceed,
        tamper("mc_subgaussian_exceedance"),
    )?);
    Ok(results)
}

/// Only the scalar inequalities: the geometric sums, both sum-ratio forms
/// and the quadratic lemma.
pub fn run_scalar(preset: GridPreset, corrupt: Option<&str>) -> Result<Vec<LemmaCheckResult>> {
    if let Some(id) = corrupt {
        if !LEMMA_IDS.contains(&id) {
            return Err(Error::config(format!("unknown lemma id {id:?}")));
        }
    }
    let tamper = |id: &str| -> f64 {
        if corrupt == Some(id) {
            0.25
        } else {
            1.0
        }
    };
    let a = a_grid(preset);
    let q = q_grid(preset);
    let (count, max_len) = match preset {
        GridPreset::Quick => (1000, 50),
        GridPreset::Full => (5000, 500),
    };
    let jobs: Vec<Box<dyn Fn() -> Result<LemmaCheckResult> + Send + Sync>> = vec![
        Box::new(|| geom_sqrt(&a, &q, tamper("geom_sqrt"))),
        Box::new(|| geom_sqrt_intermediate(&a, &q, tamper("geom_sqrt_intermediate"))),
        Box::new(|| geom_32(&a, &q, tamper("geom_32"))),
        Box::new(|| inv_sqrt_geom(&a, &q, tamper("inv_sqrt_geom"))),
        Box::new(move || sum_ratio_random(false, count, max_len, 21, tamper("sum_ratio"))),
        Box::new(move || sum_ratio_random(true, count, max_len, 22, tamper("sum_ratio_momentum"))),
        Box::new(move || quadratic_random(count * 10, 23, tamper("quadratic"))),
    ];
    jobs.par_iter().map(|job| job()).collect()
}
