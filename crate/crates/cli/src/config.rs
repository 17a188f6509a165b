//! Experiment configuration: a single JSON document plus `--set` overrides.
//!
//! ```json
//! {
//!   "stream": {"family": "drifting_sine", "dim": 5, "drift_rate": 0.05,
//!              "noise": {"kind": "gaussian", "sigma": 0.5}},
//!   "optimizer": {"preset": "adagrad", "eta": 0.1, "epsilon": 1e-8},
//!   "smoothing": {"alpha": 1.0, "window_fraction": 0.5},
//!   "meta": {"theta": 0.1, "train_batch": 32, "test_batch": 32},
//!   "horizon": 1000,
//!   "seeds": [0, 1, 2],
//!   "delta": 0.1,
//!   "out_dir": "out"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use dynreg_core::meta::InnerAdaptConfig;
use dynreg_core::optimizer::{OptimizerConfig, StepSchedule};
use dynreg_core::regret::{BoundInputs, OptimizerFamily, Theorem};
use dynreg_core::tasks::{loss_constants, NoiseKind, StreamSpec, TaskStream};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub preset: Preset,
    pub eta: f64,
    /// Adagrad fixes β₁ = 0; Adam defaults to 0.9.
    #[serde(default)]
    pub beta1: Option<f64>,
    /// Adagrad fixes β₂ = 1; Adam defaults to 0.999.
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// ς for the Adam bounds; defaults to `√(1−β₂)`.
    #[serde(default)]
    pub varsigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Explicit window length `w`.
    #[serde(default)]
    pub window: Option<usize>,
    /// `w = ⌈fraction·T⌉`.
    #[serde(default)]
    pub window_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSpec {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_batch")]
    pub train_batch: usize,
    #[serde(default = "default_batch")]
    pub test_batch: usize,
}

impl Default for MetaSpec {
    fn default() -> Self {
        MetaSpec {
            theta: default_theta(),
            train_batch: default_batch(),
            test_batch: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSpec,
    pub optimizer: OptimizerSpec,
    pub smoothing: SmoothingSpec,
    #[serde(default)]
    pub meta: MetaSpec,
    pub horizon: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sub-Gaussian scale for the high-probability bounds; falls back to the
    /// stream noise model's κ.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Bound reports to emit; empty selects the preset's own theorems.
    #[serde(default)]
    pub theorems: Vec<Theorem>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_epsilon() -> f64 {
    1e-8
}

fn default_alpha() -> f64 {
    1.0
}

fn default_theta() -> f64 {
    0.1
}

fn default_batch() -> usize {
    dynreg_core::meta::DEFAULT_BATCH
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_delta() -> f64 {
    0.1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Reads `path`, applies `overrides` and validates the result en bloc.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(vec![format!("cannot read config {}: {e}", path.display())])
    })?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
    let mut problems = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut value, o) {
            problems.push(e);
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(vec![e.to_string()]))?;
    let problems = cfg.problems();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(problems))
    }
}

/// Applies `a.b.c=value`; `value` is parsed as JSON, else taken as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not of the form key=value"))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} has an empty segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("override {key:?}: {part:?} is not inside an object"))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| format!("override {key:?}: parent is not an object"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Every constraint violation, each prefixed by its field path.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut add = |field: &str, msgs: Vec<String>| {
            out.extend(msgs.into_iter().map(|m| format!("{field}: {m}")));
        };
        add("stream", self.stream.problems());
        if self.horizon < 1 {
            add("horizon", vec!["T = 0 violates T >= 1".into()]);
        }
        if self.seeds.is_empty() {
            add("seeds", vec!["at least one seed is required".into()]);
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            add("seeds", vec!["seeds must be distinct".into()]);
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            add(
                "delta",
                vec![format!("delta = {} violates 0 < delta < 1", self.delta)],
            );
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                add("kappa", vec![format!("kappa = {k} violates kappa > 0")]);
            }
        }
        let s = &self.smoothing;
        match (s.window, s.window_fraction) {
            (Some(_), Some(_)) => add(
                "smoothing",
                vec!["window and window_fraction are mutually exclusive".into()],
            ),
            (None, None) => add(
                "smoothing",
                vec!["one of window or window_fraction is required".into()],
            ),
            (Some(0), None) => add("smoothing.window", vec!["w = 0 violates w >= 1".into()]),
            (None, Some(f)) if !(f > 0.0 && f <= 1.0) => add(
                "smoothing.window_fraction",
                vec![format!("fraction = {f} violates 0 < fraction <= 1")],
            ),
            _ => {}
        }
        let o = &self.optimizer;
        match o.preset {
            Preset::Adagrad => {
                if o.beta1.is_some_and(|b| b != 0.0) {
                    add(
                        "optimizer.beta1",
                        vec!["the adagrad preset requires beta1 = 0".into()],
                    );
                }
                if o.beta2.is_some_and(|b| b != 1.0) {
                    add(
                        "optimizer.beta2",
                        vec!["the adagrad preset requires beta2 = 1".into()],
                    );
                }
            }
            Preset::Adam => {
                let (b1, b2) = self.betas();
                if !(b1 > 0.0) {
                    add(
                        "optimizer.beta1",
                        vec![format!("beta1 = {b1} violates 0 < beta1")],
                    );
                }
                if let Some(v) = o.varsigma {
                    let cap = (1.0 - b2).sqrt();
                    if !(v > 0.0 && v <= cap) {
                        add(
                            "optimizer.varsigma",
                            vec![format!(
                                "varsigma = {v} violates 0 < varsigma <= sqrt(1 - beta2) = {cap}"
                            )],
                        );
                    }
                }
            }
        }
        let opt = self.optimizer_config_unchecked(self.horizon.max(1));
        add(
            "optimizer",
            opt.problems()
                .into_iter()
                .filter(|m| !m.starts_with("window"))
                .collect(),
        );
        add("meta", self.inner().problems());
        out
    }

    /// Problems that only matter to the bound calculators.
    pub fn bound_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for th in self.selected_theorems() {
            if th.is_high_prob() && self.resolved_kappa().is_none() {
                out.push(format!(
                    "kappa: {} needs kappa > 0 (set kappa or a sub_gaussian stream noise)",
                    th.name()
                ));
            }
        }
        out
    }

    pub fn betas(&self) -> (f64, f64) {
        match self.optimizer.preset {
            Preset::Adagrad => (0.0, 1.0),
            Preset::Adam => (
                self.optimizer.beta1.unwrap_or(0.9),
                self.optimizer.beta2.unwrap_or(0.999),
            ),
        }
    }

    /// `w` for horizon `T`.
    pub fn window_for(&self, horizon: u64) -> usize {
        match (self.smoothing.window, self.smoothing.window_fraction) {
            (Some(w), _) => w,
            (None, Some(f)) => ((f * horizon as f64).ceil() as usize).max(1),
            (None, None) => 1,
        }
    }

    fn optimizer_config_unchecked(&self, horizon: u64) -> OptimizerConfig {
        let (beta1, beta2) = self.betas();
        OptimizerConfig {
            beta1,
            beta2,
            epsilon: self.optimizer.epsilon,
            eta: self.optimizer.eta,
            schedule: match self.optimizer.preset {
                Preset::Adagrad => StepSchedule::Constant,
                Preset::Adam => StepSchedule::AdamTheorem,
            },
            alpha: self.smoothing.alpha,
            window: self.window_for(horizon),
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        self.optimizer_config_unchecked(self.horizon)
    }

    pub fn inner(&self) -> InnerAdaptConfig {
        InnerAdaptConfig {
            theta: self.meta.theta,
            train_batch: self.meta.train_batch,
            test_batch: self.meta.test_batch,
        }
    }

    /// The task stream for one run; its seed is the run seed.
    pub fn stream_for_seed(&self, seed: u64) -> Result<TaskStream, CliError> {
        let mut spec = self.stream.clone();
        spec.set_seed(seed);
        TaskStream::from_spec(spec).map_err(|e| CliError::Config(vec![format!("stream: {e}")]))
    }

    /// Explicit κ, else the stream's κ, else the Gaussian floor for
    /// sub-Gaussian noise.
    pub fn resolved_kappa(&self) -> Option<f64> {
        let noise = self.stream.noise();
        self.kappa.or(noise.kappa).or_else(|| {
            (noise.kind == NoiseKind::SubGaussian).then(|| noise.effective_kappa(self.stream.dim()))
        })
    }

    /// Requested theorems, or the preset's expectation bound plus its
    /// high-probability bound when κ is known.
    pub fn selected_theorems(&self) -> Vec<Theorem> {
        if !self.theorems.is_empty() {
            return self.theorems.clone();
        }
        let family = match self.optimizer.preset {
            Preset::Adagrad => OptimizerFamily::Adagrad,
            Preset::Adam => OptimizerFamily::Adam,
        };
        Theorem::ALL
            .into_iter()
            .filter(|t| {
                t.family() == family && (!t.is_high_prob() || self.resolved_kappa().is_some())
            })
            .collect()
    }

    pub fn bound_inputs(&self) -> Result<BoundInputs, CliError> {
        let stream = self.stream_for_seed(self.stream.seed())?;
        let (beta1, beta2) = self.betas();
        Ok(BoundInputs {
            horizon: self.horizon,
            dim: self.stream.dim(),
            delta: self.delta,
            eta: self.optimizer.eta,
            beta1,
            beta2,
            epsilon: self.optimizer.epsilon,
            alpha: self.smoothing.alpha,
            w: self.window_for(self.horizon),
            sigma: self.stream.noise().sigma,
            kappa: self.resolved_kappa(),
            theta: self.meta.theta,
            varsigma: self.optimizer.varsigma,
            constants: loss_constants(&stream),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "stream": {"family": "drifting_sine", "dim": 3, "drift_rate": 0.05,
                       "noise": {"kind": "gaussian", "sigma": 0.5}},
            "optimizer": {"preset": "adagrad", "eta": 0.1},
            "smoothing": {"alpha": 1.0, "window": 4},
            "horizon": 10
        })
    }

    fn parse(v: Value) -> Result<ExperimentConfig, CliError> {
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let p = cfg.problems();
        if p.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(p))
        }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse(base()).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.meta, MetaSpec::default());
        assert_eq!(cfg.betas(), (0.0, 1.0));
        assert_eq!(cfg.window_for(10), 4);
        assert_eq!(cfg.selected_theorems(), vec![Theorem::AdagradExpectation]);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut v = base();
        apply_override(&mut v, "optimizer.eta=0.25").unwrap();
        apply_override(&mut v, "smoothing.window=null").unwrap();
        apply_override(&mut v, "smoothing.window_fraction=0.5").unwrap();
        apply_override(&mut v, "out_dir=results").unwrap();
        let cfg = parse(v).unwrap();
        assert_eq!(cfg.optimizer.eta, 0.25);
        assert_eq!(cfg.window_for(7), 4);
        assert_eq!(cfg.out_dir, PathBuf::from("results"));
        assert!(apply_override(&mut base(), "novalue").is_err());
        assert!(apply_override(&mut base(), "horizon.x=1").is_err());
    }

    #[test]
    fn problems_are_collected_together() {
        let mut v = base();
        apply_override(&mut v, "smoothing.window_fraction=0.5").unwrap();
        apply_override(&mut v, "delta=1.5").unwrap();
        apply_override(&mut v, "optimizer.eta=-1").unwrap();
        apply_override(&mut v, "horizon=0").unwrap();
        let CliError::Config(p) = parse(v).unwrap_err() else {
            panic!()
        };
        assert!(
            p.iter()
                .any(|m| m.starts_with("smoothing:") && m.contains("mutually exclusive")),
            "{p:?}"
        );
        assert!(p.iter().any(|m| m.starts_with("delta:")), "{p:?}");
        assert!(
            p.iter()
                .any(|m| m.starts_with("optimizer:") && m.contains("eta")),
            "{p:?}"
        );
        assert!(p.iter().any(|m| m.starts_with("horizon:")), "{p:?}");
    }

    #[test]
    fn adagrad_preset_rejects_momentum() {
        let mut v = base();
        apply_override(&mut v, "optimizer.beta1=0.5").unwrap();
        let CliError::Config(p) = parse(v).unwrap_err() else {
            panic!()
        };
        assert!(p[0].contains("beta1 = 0"), "{p:?}");
    }

    #[test]
    fn high_prob_needs_kappa() {
        let mut v = base();
        apply_override(&mut v, r#"theorems=["adagrad_high_prob"]"#).unwrap();
        let cfg = parse(v).unwrap();
        assert_eq!(cfg.bound_problems().len(), 1);
        let mut v = base();
        apply_override(&mut v, r#"theorems=["adagrad_high_prob"]"#).unwrap();
        apply_override(&mut v, "kappa=0.7").unwrap();
        assert!(parse(v).unwrap().bound_problems().is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = base();
        apply_override(&mut v, "optimizer.etaa=1").unwrap();
        assert!(parse(v).is_err());
    }
}
