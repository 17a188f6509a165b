use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynreg::commands::{cmd_bounds, cmd_run, cmd_sweep, cmd_verify_lemmas};
use dynreg::config::{load_config, ExperimentConfig};
use dynreg::CliError;
use dynreg_core::lemmas::GridPreset;

#[derive(Parser)]
#[command(
    name = "dynreg",
    version,
    about = "Dynamic local regret experiments with time-smoothed adaptive gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed and write one CSV per seed plus summary.json.
    Run(RunArgs),
    /// Evaluate the regret bounds for a configuration.
    Bounds(ConfigArgs),
    /// Numerically verify the supporting inequalities.
    VerifyLemmas(VerifyArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override a config field, e.g. `--set optimizer.eta=0.05` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; the DYNREG_OUT environment variable takes precedence.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Use seeds 0..N instead of the configured list.
    #[arg(long, value_name = "N", conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Comma-separated seeds, e.g. `--seed-list 3,7,11`.
    #[arg(long, value_name = "SEEDS", value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Run once per horizon (comma-separated) into `<out>/T<horizon>` and fit
    /// the mean DLR against ln T.
    #[arg(long, value_name = "T1,T2,...", value_delimiter = ',')]
    horizons: Option<Vec<u64>>,
    /// Worker threads for running seeds concurrently.
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Quick,
    Full,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "quick")]
    preset: PresetArg,
    /// Directory for lemmas.json; the DYNREG_OUT environment variable takes precedence.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scale the named lemma's bound down to check that the harness notices.
    #[arg(long, value_name = "LEMMA_ID", hide = true)]
    corrupt: Option<String>,
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os("DYNREG_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    env_out().or(flag).unwrap_or_else(|| cfg.out_dir.clone())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common.config, &args.common.set)?;
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    } else if let Some(list) = args.seed_list {
        cfg.seeds = list;
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    let out = out_dir(args.common.out, &cfg);
    if let Some(horizons) = args.horizons {
        let sweep = cmd_sweep(&cfg, &horizons, &out, args.jobs)?;
        for p in &sweep.points {
            println!(
                "T {:>7}  w {:>6}  mean DLR {:.6e}  mean SLR {:.6e}  DLR/ln T {:.6e}",
                p.horizon,
                p.w,
                p.mean_dlr,
                p.mean_slr,
                p.mean_dlr / (p.horizon as f64).ln()
            );
        }
        if let Some(fit) = &sweep.fit {
            println!(
                "fit: DLR = {:.4e} ln T + {:.4e}; tail change {:.2}%; logarithmic: {}",
                fit.slope,
                fit.intercept,
                100.0 * fit.tail_change,
                fit.logarithmic
            );
        }
        return Ok(());
    }
    let report = cmd_run(&cfg, &out, args.jobs)?;
    for s in &report.seeds {
        println!(
            "seed {:>6}  T {:>7}  w {:>6}  DLR {:.6e}  SLR {:.6e}  {}",
            s.seed,
            s.rounds_completed,
            s.w,
            s.dlr,
            s.slr,
            out.join(&s.csv).display()
        );
    }
    Ok(())
}

fn bounds(args: ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, &args.set)?;
    let out = out_dir(args.out, &cfg);
    for (r, path) in cmd_bounds(&cfg, &out)? {
        let rhs = if r.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.6e}", r.rhs)
        };
        println!(
            "{:<20} C {:.6e}  rhs {}  {}",
            r.theorem.name(),
            r.derived.c,
            rhs,
            path.display()
        );
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<(), CliError> {
    let preset = match args.preset {
        PresetArg::Quick => GridPreset::Quick,
        PresetArg::Full => GridPreset::Full,
    };
    let out = env_out().or(args.out);
    let (results, err) = match cmd_verify_lemmas(preset, args.corrupt.as_deref(), out.as_deref()) {
        Ok(r) => (r, None),
        Err((r, e)) => (r, Some(e)),
    };
    for r in &results {
        println!("{}", r.summary_line());
    }
    err.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Bounds(a) => bounds(a),
        Command::VerifyLemmas(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
