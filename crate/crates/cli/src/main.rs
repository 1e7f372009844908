use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dampwave_cli::config::RunConfig;
use dampwave_cli::output::{output_root, write_atomic};
use dampwave_cli::pipeline::{self, Bundle};
use dampwave_core::fit::{parse_window, FitModel};

/// Damped wave experiments on triangulated surfaces.
///
/// Artifacts go under $DAMPWAVE_OUTPUT_ROOT (default ./dampwave-output).
/// Exit status: 0 on success, 1 if a requested assertion failed, 2 on a
/// configuration or runtime error.
#[derive(Parser)]
#[command(name = "dampwave", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiment configs (concurrently).
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Fit a decay model to a trace CSV.
    Fit {
        trace: PathBuf,
        #[arg(long)]
        model: FitModel,
        /// Fit window `a:b`; defaults to the back half of the trace.
        #[arg(long, value_parser = parse_window_arg)]
        window: Option<(f64, f64)>,
        /// Fail unless R² reaches this value.
        #[arg(long)]
        min_r2: Option<f64>,
        /// Fail unless the fitted rate is positive.
        #[arg(long)]
        assert_decay: bool,
    },
    /// Build and certify the multiplier of a config.
    Certify { config: PathBuf },
    /// Run two configs differing only in damping and compare their rates.
    Compare { config_a: PathBuf, config_b: PathBuf },
}

fn parse_window_arg(s: &str) -> Result<(f64, f64), String> {
    parse_window(s).map_err(|e| e.to_string())
}

enum Outcome {
    Ok,
    AssertionFailed,
}

fn load(path: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(path)?)
}

/// Writes the bundle, prints its report and folds it into an outcome.
fn finish(bundle: &Bundle, dir: &Path) -> Result<Outcome> {
    bundle.write(dir)?;
    print!("{}", bundle.report());
    println!("artifacts: {}", dir.display());
    if let Some(f) = &bundle.failure {
        anyhow::bail!("{}: {f}", bundle.name);
    }
    Ok(if bundle.assertions_failed() { Outcome::AssertionFailed } else { Outcome::Ok })
}

fn run(configs: &[PathBuf]) -> Result<Outcome> {
    let cfgs = configs.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
    let bundles: Vec<Bundle> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(|| pipeline::run_experiment(c))).collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    let root = output_root();
    let mut outcome = Outcome::Ok;
    let mut error = None;
    for (cfg, bundle) in cfgs.iter().zip(&bundles) {
        match finish(bundle, &root.join(cfg.output_subdir())) {
            Ok(Outcome::AssertionFailed) => outcome = Outcome::AssertionFailed,
            Ok(Outcome::Ok) => {}
            Err(e) => error = Some(e),
        }
    }
    match error {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

fn fit(trace: &Path, model: FitModel, window: Option<(f64, f64)>, min_r2: Option<f64>, assert_decay: bool) -> Result<Outcome> {
    let (fit, echo) = pipeline::fit_trace_file(trace, model, window)?;
    let stem = trace.file_stem().context("trace path has no file name")?.to_string_lossy();
    let out = output_root().join(format!("{stem}-fit.csv"));
    write_atomic(&out, &format!("{}{}", echo.comment_block(), fit.to_csv()))?;
    println!("{}", fit.summary());
    println!("artifacts: {}", out.display());
    let mut failed = false;
    if let Some(min) = min_r2 {
        let ok = fit.r_squared >= min;
        println!("assertion min_r_squared: {} (R^2 = {:.12}, minimum {min})", pass(ok), fit.r_squared);
        failed |= !ok;
    }
    if assert_decay {
        let ok = fit.decay_rate() > 0.0 && !fit.no_decay;
        println!("assertion positive_rate: {} (decay rate {:.10e})", pass(ok), fit.decay_rate());
        failed |= !ok;
    }
    Ok(if failed { Outcome::AssertionFailed } else { Outcome::Ok })
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn certify(config: &Path) -> Result<Outcome> {
    let cfg = load(config)?;
    let bundle = pipeline::certify(&cfg);
    finish(&bundle, &output_root().join(cfg.output_subdir()))
}

fn compare(a: &Path, b: &Path) -> Result<Outcome> {
    let (ca, cb) = (load(a)?, load(b)?);
    let cmp = pipeline::compare(&ca, &cb)?;
    let dir = output_root().join(format!("compare-{}-vs-{}", ca.output_subdir(), cb.output_subdir()));
    let mut failed = false;
    for (tag, cfg, bundle) in [("a", &ca, &cmp.bundles[0]), ("b", &cb, &cmp.bundles[1])] {
        bundle.write(&dir.join(format!("{tag}_{}", cfg.output_subdir())))?;
        failed |= bundle.assertions_failed();
    }
    match finish(&cmp.report, &dir)? {
        Outcome::AssertionFailed => failed = true,
        Outcome::Ok => {}
    }
    Ok(if failed { Outcome::AssertionFailed } else { Outcome::Ok })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { configs } => run(configs),
        Command::Fit {
            trace,
            model,
            window,
            min_r2,
            assert_decay,
        } => fit(trace, *model, *window, *min_r2, *assert_decay),
        Command::Certify { config } => certify(config),
        Command::Compare { config_a, config_b } => compare(config_a, config_b),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
