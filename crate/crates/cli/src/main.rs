use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use warmkit_harness::sweep::{parse_list, FINAL_FILE};
use warmkit_harness::{run_sweep, run_training, verify, HarnessError, Result, RunConfig, Suite, SweepSpec};

/// Warmup experiments: train toy models, sweep learning rates and warmups,
/// and check the closed-form predictions against Monte Carlo oracles.
#[derive(Parser)]
#[command(name = "warmkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics.jsonl and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: run.out_dir, then $WARMKIT_OUT_DIR, then ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a peak-lr × warmup-fraction grid and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated peak learning rates.
        #[arg(long)]
        lrs: String,
        /// Comma-separated warmup fractions.
        #[arg(long)]
        warmups: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Seeds per cell, starting at run.seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle suites and print a JSON report; exits 1 if any check fails.
    Verify {
        /// all, eq1, amplification, l1, rrc, scale_invariance, snr, gradcheck or lionar_norms.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print tidy CSV (step,group,field,value) for fields of a metrics file.
    Plotdata {
        #[arg(long)]
        metrics: PathBuf,
        /// Comma-separated field names, e.g. loss,ang_mean.
        #[arg(long)]
        fields: String,
    },
}

fn write_file(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            let dir = cfg.resolve_out_dir(out.as_deref());
            let summary = run_training(&cfg, Some(&dir.join("metrics.jsonl")))?;
            let text = serde_json::to_string_pretty(&summary.to_json())?;
            write_file(&dir.join("summary.json"), &text)?;
            println!("{text}");
            Ok(summary.status == warmkit_harness::train::RunStatus::Ok)
        }
        Command::Sweep {
            config,
            lrs,
            warmups,
            workers,
            seeds,
            out,
        } => {
            let base = RunConfig::load(&config)?;
            let dir = base.resolve_out_dir(out.as_deref());
            let spec = SweepSpec {
                base,
                lrs: parse_list(&lrs)?,
                warmups: parse_list(&warmups)?,
                seeds,
            };
            let rows = run_sweep(&spec, &dir, workers)?;
            eprintln!("{} rows written to {}", rows.len(), dir.join(FINAL_FILE).display());
            Ok(true)
        }
        Command::Verify { suite, seed, out } => {
            let suites = Suite::parse_selector(&suite)?;
            let report = verify(&suites, seed)?;
            for c in &report.checks {
                eprintln!(
                    "{} {}/{}: {:.6e} vs {:.6e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.estimate,
                    c.target
                );
            }
            let text = serde_json::to_string_pretty(&report.to_json())?;
            if let Some(path) = out {
                write_file(&path, &text)?;
            }
            println!("{text}");
            Ok(report.passed())
        }
        Command::Plotdata { metrics, fields } => {
            let fields: Vec<String> = fields.split(',').map(|f| f.trim().to_string()).collect();
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            warmkit_harness::plotdata::plotdata(&metrics, &fields, &mut lock)?;
            lock.flush().map_err(|e| HarnessError::io("<stdout>", e))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
