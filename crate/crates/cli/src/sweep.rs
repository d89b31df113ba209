//! Learning-rate × warmup grid runner.
//!
//! Cells run in parallel and share nothing mutable except the partial
//! results file, whose rows appear in completion order. The final file is
//! sorted by grid position (lr, then warmup, then seed) and is identical
//! across reruns.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::train::{run_training, RunStatus};

pub const SWEEP_SCHEMA_VERSION: u32 = 1;
pub const PARTIAL_FILE: &str = "sweep_partial.csv";
pub const FINAL_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub lrs: Vec<f64>,
    pub warmups: Vec<f64>,
    /// Seeds `base.run.seed .. base.run.seed + seeds` are run per cell.
    pub seeds: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() || self.warmups.is_empty() || self.seeds == 0 {
            return Err(HarnessError::Usage(
                "sweep needs at least one lr, one warmup and one seed".into(),
            ));
        }
        self.base.validate()
    }

    /// Cells in output order.
    pub fn cells(&self) -> Vec<(f64, f64, u64)> {
        let mut out = Vec::new();
        for &lr in &self.lrs {
            for &w in &self.warmups {
                for s in 0..self.seeds {
                    out.push((lr, w, self.base.run.seed + s));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Diverged,
    /// The cell could not run (for example an invalid warmup fraction).
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub lr: f64,
    pub warmup_frac: f64,
    pub seed: u64,
    pub status: CellStatus,
    pub steps_completed: u64,
    pub init_train_loss: f64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
}

fn run_cell(base: &RunConfig, lr: f64, warmup: f64, seed: u64) -> SweepRow {
    let mut config = base.clone();
    config.schedule.peak_lr = lr;
    config.schedule.warmup_frac = warmup;
    config.run.seed = seed;
    let row = |status, steps, init, train, val| SweepRow {
        schema_version: SWEEP_SCHEMA_VERSION,
        lr,
        warmup_frac: warmup,
        seed,
        status,
        steps_completed: steps,
        init_train_loss: init,
        final_train_loss: train,
        final_val_loss: val,
    };
    match run_training(&config, None) {
        Ok(s) => row(
            match s.status {
                RunStatus::Ok => CellStatus::Ok,
                RunStatus::Diverged => CellStatus::Diverged,
            },
            s.steps_completed,
            s.init_train_loss,
            s.final_train_loss,
            s.final_val_loss,
        ),
        Err(_) => row(CellStatus::Error, 0, f64::NAN, f64::NAN, f64::NAN),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Runs every cell of `spec` on `workers` threads, writing
/// [`PARTIAL_FILE`] as cells finish and [`FINAL_FILE`] at the end. Returns
/// the rows in grid order.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, workers: usize) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let partial_path = out_dir.join(PARTIAL_FILE);
    let partial = Mutex::new(csv_writer(&partial_path)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let cells = spec.cells();
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(lr, w, seed)| {
                let row = run_cell(&spec.base, lr, w, seed);
                let mut out = partial.lock().expect("partial writer lock");
                out.serialize(&row)?;
                out.flush().map_err(|e| HarnessError::io(&partial_path, e))?;
                Ok(row)
            })
            .collect::<Result<_>>()
    })?;
    let final_path: PathBuf = out_dir.join(FINAL_FILE);
    let mut out = csv_writer(&final_path)?;
    for row in &rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| HarnessError::io(&final_path, e))?;
    Ok(rows)
}

/// Parses `a,b,c` into floats.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::Usage(format!("not a number: `{x}`")))
        })
        .collect()
}
