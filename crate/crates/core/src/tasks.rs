//! Synthetic non-stationary task streams.
//!
//! Every round loss is a sinusoid `ℓ(x) = D·sin(⟨a, x⟩ + b)`, which is
//! bounded by `D`, `D‖a‖`-Lipschitz, `D‖a‖²`-smooth and has a
//! `D‖a‖³`-Lipschitz Hessian. Streams keep `‖a_t‖` fixed while rotating the
//! direction of `a_t` and shifting `b_t`, so the constants are exact for every
//! round. A round carries a training loss (used by the inner adaptation step)
//! and a test loss (the same sinusoid shifted in phase by `split_shift`).
//!
//! Gradient noise is additive and isotropic: each coordinate receives
//! `N(0, σ²/d)`, so `E‖noise‖² = σ²` holds with equality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, ensure_same_dim, spawn_rng_stream, RealVector, RngStream};

const BASIS_STREAM: u64 = 0xB45E;
const SEGMENT_STREAM: u64 = 0x5E6E;

/// A differentiable real-valued loss on `ℝ^d`.
pub trait Loss {
    fn dim(&self) -> usize;
    fn value(&self, x: &RealVector) -> Result<f64>;
    fn gradient(&self, x: &RealVector) -> Result<RealVector>;
}

/// Regularity constants of a loss family: `|ℓ| ≤ D`, `L`-Lipschitz,
/// `γ`-smooth, `H`-Hessian-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConstants {
    #[serde(rename = "D")]
    pub bound: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    #[serde(rename = "gamma")]
    pub smoothness: f64,
    #[serde(rename = "H")]
    pub hessian_lipschitz: f64,
}

impl LossConstants {
    pub fn new(
        bound: f64,
        lipschitz: f64,
        smoothness: f64,
        hessian_lipschitz: f64,
    ) -> Result<Self> {
        let c = LossConstants {
            bound,
            lipschitz,
            smoothness,
            hessian_lipschitz,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("D", self.bound),
            ("L", self.lipschitz),
            ("gamma", self.smoothness),
            ("H", self.hessian_lipschitz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!(
                    "{name} = {v} must be finite and > 0"
                )));
            }
        }
        Ok(())
    }

    /// Constants of `c·ℓ` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        LossConstants::new(
            c * self.bound,
            c * self.lipschitz,
            c * self.smoothness,
            c * self.hessian_lipschitz,
        )
    }
}

/// `D·sin(⟨a, x⟩ + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineLoss {
    amplitude: f64,
    freq: RealVector,
    phase: f64,
}

impl SineLoss {
    pub fn new(amplitude: f64, freq: RealVector, phase: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::config(format!(
                "amplitude D = {amplitude} must be > 0"
            )));
        }
        if !phase.is_finite() {
            return Err(Error::config("phase must be finite"));
        }
        if freq.is_zero() {
            return Err(Error::config("frequency vector must be non-zero"));
        }
        Ok(SineLoss {
            amplitude,
            freq,
            phase,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn freq(&self) -> &RealVector {
        &self.freq
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    fn argument(&self, x: &[f64]) -> f64 {
        dot(self.freq.as_slice(), x) + self.phase
    }

    /// Hessian-vector product `∇²ℓ(x)·v = -D sin(⟨a,x⟩+b) ⟨a,v⟩ a`.
    pub fn hessian_vector(&self, x: &RealVector, v: &RealVector) -> Result<RealVector> {
        ensure_same_dim(self.dim(), x.dim())?;
        ensure_same_dim(self.dim(), v.dim())?;
        let a = self.freq.as_slice();
        let coef = -self.amplitude * self.argument(x.as_slice()).sin() * dot(a, v.as_slice());
        RealVector::new(a.iter().map(|ai| coef * ai).collect())
    }

    pub fn constants(&self) -> LossConstants {
        let s = dot(self.freq.as_slice(), self.freq.as_slice()).sqrt();
        let d = self.amplitude;
        LossConstants {
            bound: d,
            lipschitz: d * s,
            smoothness: d * s * s,
            hessian_lipschitz: d * s * s * s,
        }
    }
}

impl Loss for SineLoss {
    fn dim(&self) -> usize {
        self.freq.dim()
    }

    fn value(&self, x: &RealVector) -> Result<f64> {
        ensure_same_dim(self.dim(), x.dim())?;
        Ok(self.amplitude * self.argument(x.as_slice()).sin())
    }

    fn gradient(&self, x: &RealVector) -> Result<RealVector> {
        ensure_same_dim(self.dim(), x.dim())?;
        let c = self.amplitude * self.argument(x.as_slice()).cos();
        RealVector::new(self.freq.as_slice().iter().map(|ai| c * ai).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Exact,
    Gaussian,
    SubGaussian,
}

/// Additive isotropic gradient noise.
///
/// `sigma` is the total standard deviation (`E‖noise‖² = σ²`). `kappa` is
/// the sub-Gaussian scale with `E[exp(‖noise‖²/κ²)] ≤ e`; see
/// [`NoiseModel::min_kappa`] for its relation to `σ` and the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl NoiseModel {
    pub fn exact() -> Self {
        NoiseModel {
            kind: NoiseKind::Exact,
            sigma: 0.0,
            kappa: None,
        }
    }

    /// Gaussian noise with total variance `σ²`; `σ = 0` collapses to [`NoiseModel::exact`].
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if sigma == 0.0 {
            return Ok(Self::exact());
        }
        Ok(NoiseModel {
            kind: NoiseKind::Gaussian,
            sigma,
            kappa: None,
        })
    }

    /// Gaussian noise tagged with the smallest valid sub-Gaussian scale for `dim`.
    pub fn sub_gaussian(sigma: f64, dim: usize) -> Result<Self> {
        check_sigma(sigma)?;
        if sigma == 0.0 {
            return Err(Error::config("sub-Gaussian noise needs sigma > 0"));
        }
        Ok(NoiseModel {
            kind: NoiseKind::SubGaussian,
            sigma,
            kappa: Some(Self::min_kappa(sigma, dim)),
        })
    }

    /// Overrides κ; it must not undercut [`NoiseModel::min_kappa`].
    pub fn with_kappa(mut self, kappa: f64, dim: usize) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::config(format!("kappa = {kappa} must be > 0")));
        }
        let floor = Self::min_kappa(self.sigma, dim);
        if kappa < floor * (1.0 - 1e-12) {
            return Err(Error::config(format!(
                "kappa = {kappa} is below the sub-Gaussian floor {floor} for sigma = {} and dim = {dim}",
                self.sigma
            )));
        }
        self.kappa = Some(kappa);
        Ok(self)
    }

    /// Smallest κ with `E[exp(‖n‖²/κ²)] ≤ e` for `n ~ N(0, σ²/d · I_d)`.
    ///
    /// `‖n‖² = (σ²/d)·χ²_d` and `E[exp(λχ²_d)] = (1 - 2λ)^{-d/2}`, so equality
    /// holds at `κ² = 2σ² / (d·(1 - e^{-2/d}))`.
    pub fn min_kappa(sigma: f64, dim: usize) -> f64 {
        let d = dim.max(1) as f64;
        (2.0 * sigma * sigma / (d * -(-2.0 / d).exp_m1())).sqrt()
    }

    /// κ if set, else the Gaussian floor for `dim` (zero for exact gradients).
    pub fn effective_kappa(&self, dim: usize) -> f64 {
        self.kappa
            .unwrap_or_else(|| Self::min_kappa(self.sigma, dim))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        check_sigma(self.sigma)?;
        match self.kind {
            NoiseKind::Exact if self.sigma != 0.0 => {
                Err(Error::config("exact noise requires sigma = 0"))
            }
            NoiseKind::Gaussian | NoiseKind::SubGaussian if self.sigma == 0.0 => Err(
                Error::config("noisy gradient models require sigma > 0; use kind = exact"),
            ),
            _ => match self.kappa {
                Some(k) => self.with_kappa(k, dim).map(|_| ()),
                None => Ok(()),
            },
        }
    }

    pub fn is_exact(&self) -> bool {
        self.kind == NoiseKind::Exact
    }

    /// Adds one noise draw to `out` in place.
    pub fn perturb(&self, out: &mut [f64], rng: &mut RngStream) {
        if self.is_exact() {
            return;
        }
        let scale = self.sigma / (out.len() as f64).sqrt();
        for v in out.iter_mut() {
            *v += scale * rng.normal();
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config(format!(
            "sigma = {sigma} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Exact gradient of `loss` at `x` plus one fresh noise draw.
pub fn sample_stochastic_gradient<L: Loss + ?Sized>(
    loss: &L,
    noise: &NoiseModel,
    x: &RealVector,
    rng: &mut RngStream,
) -> Result<RealVector> {
    let mut g = loss.gradient(x)?.into_inner();
    noise.perturb(&mut g, rng);
    RealVector::new(g).map_err(|e| Error::numeric(format!("stochastic gradient: {e}")))
}

/// The task revealed at one round: training and test losses plus noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRound {
    pub t: u64,
    pub train: SineLoss,
    pub test: SineLoss,
    pub noise: NoiseModel,
}

impl TaskRound {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Noisy gradient of the training loss.
    pub fn sample_stochastic_gradient(
        &self,
        x: &RealVector,
        rng: &mut RngStream,
    ) -> Result<RealVector> {
        sample_stochastic_gradient(&self.train, &self.noise, x, rng)
    }

    pub fn constants(&self) -> LossConstants {
        let a = self.train.constants();
        let b = self.test.constants();
        LossConstants {
            bound: a.bound.max(b.bound),
            lipschitz: a.lipschitz.max(b.lipschitz),
            smoothness: a.smoothness.max(b.smoothness),
            hessian_lipschitz: a.hessian_lipschitz.max(b.hessian_lipschitz),
        }
    }
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_freq_scale() -> f64 {
    1.0
}

fn default_noise() -> NoiseModel {
    NoiseModel::exact()
}

/// Smoothly rotating sinusoid: `a_t` turns by `drift_rate` radians per round
/// in a seed-chosen plane and `b_t` advances by `drift_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftingSineSpec {
    pub dim: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_freq_scale")]
    pub freq_scale: f64,
    #[serde(default)]
    pub drift_rate: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub split_shift: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

/// Piecewise-constant sinusoid: parameters hold for `segment_length`
/// rounds, then the direction of `a` turns by `±jump` radians and `b` moves
/// with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseDriftSpec {
    pub dim: usize,
    pub segment_length: u64,
    #[serde(default)]
    pub jump: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_freq_scale")]
    pub freq_scale: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub split_shift: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StreamSpec {
    DriftingSine(DriftingSineSpec),
    PiecewiseDrift(PiecewiseDriftSpec),
}

impl StreamSpec {
    pub fn dim(&self) -> usize {
        match self {
            StreamSpec::DriftingSine(s) => s.dim,
            StreamSpec::PiecewiseDrift(s) => s.dim,
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        match self {
            StreamSpec::DriftingSine(s) => &s.noise,
            StreamSpec::PiecewiseDrift(s) => &s.noise,
        }
    }

    pub fn noise_mut(&mut self) -> &mut NoiseModel {
        match self {
            StreamSpec::DriftingSine(s) => &mut s.noise,
            StreamSpec::PiecewiseDrift(s) => &mut s.noise,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            StreamSpec::DriftingSine(s) => s.seed,
            StreamSpec::PiecewiseDrift(s) => s.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            StreamSpec::DriftingSine(s) => s.seed = seed,
            StreamSpec::PiecewiseDrift(s) => s.seed = seed,
        }
    }

    /// Every violated constraint, prefixed with its field name.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (dim, amplitude, freq_scale, phase, shift, noise) = match self {
            StreamSpec::DriftingSine(s) => {
                if !s.drift_rate.is_finite() {
                    out.push("drift_rate: must be finite".to_string());
                }
                (
                    s.dim,
                    s.amplitude,
                    s.freq_scale,
                    s.phase,
                    s.split_shift,
                    &s.noise,
                )
            }
            StreamSpec::PiecewiseDrift(s) => {
                if s.segment_length < 1 {
                    out.push("segment_length: must satisfy segment_length >= 1".to_string());
                }
                if !s.jump.is_finite() {
                    out.push("jump: must be finite".to_string());
                }
                (
                    s.dim,
                    s.amplitude,
                    s.freq_scale,
                    s.phase,
                    s.split_shift,
                    &s.noise,
                )
            }
        };
        if dim < 1 {
            out.push("dim: must satisfy dim >= 1".to_string());
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            out.push(format!("amplitude: {amplitude} violates amplitude > 0"));
        }
        if !(freq_scale.is_finite() && freq_scale > 0.0) {
            out.push(format!("freq_scale: {freq_scale} violates freq_scale > 0"));
        }
        if !phase.is_finite() {
            out.push("phase: must be finite".to_string());
        }
        if !shift.is_finite() {
            out.push("split_shift: must be finite".to_string());
        }
        if let Err(e) = noise.validate(dim.max(1)) {
            out.push(format!("noise: {e}"));
        }
        out
    }
}

/// A task stream: a pure function from `(t, seed)` to [`TaskRound`].
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    spec: StreamSpec,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl TaskStream {
    pub fn from_spec(spec: StreamSpec) -> Result<Self> {
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(Error::config(problems.join("; ")));
        }
        let (u, v) = plane_basis(spec.dim(), spec.seed());
        Ok(TaskStream { spec, u, v })
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn noise(&self) -> &NoiseModel {
        self.spec.noise()
    }

    /// Rotation angle and phase offset of round `t` (t ≥ 1).
    fn drift_state(&self, t: u64) -> (f64, f64) {
        match &self.spec {
            StreamSpec::DriftingSine(s) => {
                let angle = s.drift_rate * (t.saturating_sub(1)) as f64;
                (angle, angle)
            }
            StreamSpec::PiecewiseDrift(s) => {
                if s.jump == 0.0 {
                    return (0.0, 0.0);
                }
                let segment = t.saturating_sub(1) / s.segment_length;
                let root = spawn_rng_stream(s.seed, SEGMENT_STREAM);
                let turns: f64 = (1..=segment).map(|j| root.substream(j).sign()).sum();
                (s.jump * turns, s.jump * turns)
            }
        }
    }

    pub fn round(&self, t: u64) -> Result<TaskRound> {
        if t < 1 {
            return Err(Error::InvalidInput("rounds are numbered from 1".into()));
        }
        let (amplitude, freq_scale, phase, shift) = match &self.spec {
            StreamSpec::DriftingSine(s) => (s.amplitude, s.freq_scale, s.phase, s.split_shift),
            StreamSpec::PiecewiseDrift(s) => (s.amplitude, s.freq_scale, s.phase, s.split_shift),
        };
        let (angle, offset) = self.drift_state(t);
        let (c, s) = (angle.cos(), angle.sin());
        let freq: Vec<f64> = if self.dim() == 1 {
            vec![freq_scale * self.u[0]]
        } else {
            self.u
                .iter()
                .zip(&self.v)
                .map(|(ui, vi)| freq_scale * (c * ui + s * vi))
                .collect()
        };
        let freq = RealVector::new(freq)?;
        let b = phase + offset;
        Ok(TaskRound {
            t,
            train: SineLoss::new(amplitude, freq.clone(), b)?,
            test: SineLoss::new(amplitude, freq, b + shift)?,
            noise: *self.noise(),
        })
    }
}

/// Orthonormal pair spanning the drift plane; `u` has a non-negative first coordinate.
fn plane_basis(dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = spawn_rng_stream(seed, BASIS_STREAM);
    if dim == 1 {
        return (vec![1.0], vec![0.0]);
    }
    let mut u = rng.normal_vec(dim, 1.0);
    normalize(&mut u);
    if u[0] < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    let mut v = rng.normal_vec(dim, 1.0);
    let p = dot(&u, &v);
    v.iter_mut().zip(&u).for_each(|(vi, ui)| *vi -= p * ui);
    normalize(&mut v);
    (u, v)
}

fn normalize(x: &mut [f64]) {
    let n = dot(x, x).sqrt();
    x.iter_mut().for_each(|v| *v /= n);
}

pub fn make_drifting_sine_stream(
    dim: usize,
    amplitude: f64,
    freq_scale: f64,
    drift_rate: f64,
    noise: NoiseModel,
    seed: u64,
) -> Result<TaskStream> {
    TaskStream::from_spec(StreamSpec::DriftingSine(DriftingSineSpec {
        dim,
        amplitude,
        freq_scale,
        drift_rate,
        phase: 0.0,
        split_shift: 0.0,
        noise,
        seed,
    }))
}

pub fn make_piecewise_drift_stream(
    dim: usize,
    segment_length: u64,
    jump: f64,
    noise: NoiseModel,
    seed: u64,
) -> Result<TaskStream> {
    TaskStream::from_spec(StreamSpec::PiecewiseDrift(PiecewiseDriftSpec {
        dim,
        segment_length,
        jump,
        amplitude: 1.0,
        freq_scale: 1.0,
        phase: 0.0,
        split_shift: 0.0,
        noise,
        seed,
    }))
}

/// Closed-form `(D, L, γ, H)` of the stream's loss family. Every round shares
/// amplitude and `‖a_t‖`, so these are the maxima over all rounds.
pub fn loss_constants(stream: &TaskStream) -> LossConstants {
    let (amplitude, s) = match stream.spec() {
        StreamSpec::DriftingSine(p) => (p.amplitude, p.freq_scale),
        StreamSpec::PiecewiseDrift(p) => (p.amplitude, p.freq_scale),
    };
    LossConstants {
        bound: amplitude,
        lipschitz: amplitude * s,
        smoothness: amplitude * s * s,
        hessian_lipschitz: amplitude * s * s * s,
    }
}
