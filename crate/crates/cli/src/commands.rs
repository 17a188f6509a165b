//! The `run`, `bounds` and `verify-lemmas` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use dynreg_core::lemmas::{run_all, GridPreset, LemmaCheckResult};
use dynreg_core::meta::{run_stream, RunTrace};
use dynreg_core::regret::{
    bound_report, dlr_cumulative, logarithmic_fit, slr_cumulative, BoundReport, LogFit,
};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const CSV_HEADER: &str = "t,loss,grad_norm_sq,dlr_cum,slr_cum,eta_t";

pub fn csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Outcome of one seed; `error` is set when the run stopped early.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub w: usize,
    pub rounds_completed: usize,
    pub dlr: f64,
    pub slr: f64,
    pub csv: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    failure: Option<dynreg_core::Error>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seeds: Vec<SeedSummary>,
    pub wall_time_seconds: f64,
}

fn io_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Io(e.into())
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(io_err)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io_err)
}

fn core_config(context: &str, e: dynreg_core::Error) -> CliError {
    let msg = match e {
        dynreg_core::Error::InvalidConfig(m) | dynreg_core::Error::InvalidInput(m) => m,
        other => other.to_string(),
    };
    CliError::Config(vec![format!("{context}: {msg}")])
}

fn config_value(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// CSV of one trace: per round the exact composite loss, the squared norm
/// of the exact smoothed gradient, both regret sums and the step size.
pub fn trace_csv(
    trace: &RunTrace,
    w: usize,
    alpha: f64,
) -> dynreg_core::Result<(String, f64, f64)> {
    let dlr = dlr_cumulative(trace, w, alpha)?;
    let slr = slr_cumulative(trace, w)?;
    let mut out = String::with_capacity(96 * (trace.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, r) in trace.records.iter().enumerate() {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.loss, dlr.per_round[i], dlr.cumulative[i], slr.cumulative[i], r.eta
        )
        .expect("writing to a String");
    }
    Ok((out, dlr.total(), slr.total()))
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedSummary, CliError> {
    let stream = cfg.stream_for_seed(seed)?;
    let opt = cfg.optimizer_config();
    let (trace, failure) = match run_stream(&stream, cfg.horizon, &cfg.inner(), &opt, seed) {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let (csv, dlr, slr) = trace_csv(&trace, opt.window, opt.alpha)
        .map_err(|source| CliError::Numeric { seed, source })?;
    let name = csv_name(seed);
    let path = out.join(&name);
    fs::write(&path, csv)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(io_err)?;
    let summary = SeedSummary {
        seed,
        w: opt.window,
        rounds_completed: trace.len(),
        dlr,
        slr,
        csv: name,
        error: failure.as_ref().map(|e| e.to_string()),
        failure,
    };
    write_json(
        &out.join(format!("seed_{seed}.json")),
        &json!({"seed": seed, "config": config_value(cfg), "result": summary}),
    )?;
    Ok(summary)
}

/// Runs every configured seed on a pool of `jobs` threads. Each seed owns
/// its files, so the artifacts do not depend on scheduling.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunReport, CliError> {
    let start = Instant::now();
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(io_err)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(io_err)?;
    let results: Vec<Result<SeedSummary, CliError>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| run_seed(cfg, s, out))
            .collect()
    });
    let seeds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let report = RunReport {
        seeds,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(
        &out.join("summary.json"),
        &json!({
            "config": config_value(cfg),
            "seeds": report.seeds,
            "wall_time_seconds": report.wall_time_seconds,
        }),
    )?;
    if let Some(s) = report.seeds.iter().find(|s| s.failure.is_some()) {
        return Err(CliError::Numeric {
            seed: s.seed,
            source: s.failure.clone().expect("checked"),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub horizon: u64,
    pub w: usize,
    pub mean_dlr: f64,
    pub mean_slr: f64,
    pub dir: PathBuf,
}

/// Seed-averaged DLR per horizon; `fit` is present when there are at least
/// three horizons.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub fit: Option<LogFit>,
}

pub fn horizon_dir(out: &Path, horizon: u64) -> PathBuf {
    out.join(format!("T{horizon}"))
}

/// Runs the config once per horizon, each into `out/T{horizon}`, and writes
/// `sweep.json` with the logarithmic fit of the seed-averaged DLR.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    horizons: &[u64],
    out: &Path,
    jobs: usize,
) -> Result<SweepReport, CliError> {
    let mut points = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut c = cfg.clone();
        c.horizon = h;
        let problems = c.problems();
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        let dir = horizon_dir(out, h);
        let report = cmd_run(&c, &dir, jobs)?;
        let n = report.seeds.len() as f64;
        points.push(SweepPoint {
            horizon: h,
            w: c.window_for(h),
            mean_dlr: report.seeds.iter().map(|s| s.dlr).sum::<f64>() / n,
            mean_slr: report.seeds.iter().map(|s| s.slr).sum::<f64>() / n,
            dir,
        });
    }
    let fit = if points.len() >= 3 {
        let hs: Vec<u64> = points.iter().map(|p| p.horizon).collect();
        let dlr: Vec<f64> = points.iter().map(|p| p.mean_dlr).collect();
        Some(logarithmic_fit(&hs, &dlr).map_err(|e| core_config("horizons", e))?)
    } else {
        None
    };
    let report = SweepReport { points, fit };
    write_json(
        &out.join("sweep.json"),
        &json!({"config": config_value(cfg), "sweep": report}),
    )?;
    Ok(report)
}

/// Evaluates the selected bounds and writes one JSON report per theorem.
pub fn cmd_bounds(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<(BoundReport, PathBuf)>, CliError> {
    let problems = cfg.bound_problems();
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    let inputs = cfg.bound_inputs()?;
    let reports = cfg
        .selected_theorems()
        .into_iter()
        .map(|th| bound_report(th, &inputs).map_err(|e| core_config(th.name(), e)))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .map_err(io_err)?;
    let mut written = Vec::new();
    for r in reports {
        let mut record = r.to_record();
        record.insert("config".into(), config_value(cfg));
        let path = out.join(format!("bounds_{}.json", r.theorem.name()));
        write_json(&path, &Value::Object(record))?;
        written.push((r, path));
    }
    Ok(written)
}

/// Runs the lemma suite; any violation is a verification failure naming the
/// lemma and its first offending parameters.
pub fn cmd_verify_lemmas(
    preset: GridPreset,
    corrupt: Option<&str>,
    out: Option<&Path>,
) -> Result<Vec<LemmaCheckResult>, (Vec<LemmaCheckResult>, CliError)> {
    let results =
        run_all(preset, corrupt).map_err(|e| (Vec::new(), core_config("--corrupt", e)))?;
    if let Some(dir) = out {
        let record = json!({
            "preset": preset,
            "lemmas": results.iter().map(|r| json!({
                "lemma_id": r.lemma_id,
                "grid_size": r.grid_size,
                "pass": r.pass(),
                "max_slack": r.max_slack,
                "violations": r.violations.iter().take(20).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        });
        let written = fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))
            .map_err(io_err)
            .and_then(|_| write_json(&dir.join("lemmas.json"), &record));
        if let Err(e) = written {
            return Err((results, e));
        }
    }
    let failing: Vec<String> = results
        .iter()
        .filter(|r| !r.pass())
        .map(|r| {
            let v = &r.violations[0];
            let params: Vec<String> = v.params.iter().map(|(k, x)| format!("{k}={x}")).collect();
            format!(
                "{} ({} violations; first at {}: lhs {:e} > rhs {:e})",
                r.lemma_id,
                r.violations.len(),
                params.join(", "),
                v.lhs,
                v.rhs
            )
        })
        .collect();
    if failing.is_empty() {
        Ok(results)
    } else {
        let msg = failing.join("; ");
        Err((results, CliError::Verification(msg)))
    }
}
