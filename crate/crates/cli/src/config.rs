//! Run configuration, read from TOML. Every key has a default and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warmkit::{ModelConfig, OptimizerConfig, ScheduleKind, ScheduleSpec, TaskSpec};

use crate::error::{HarnessError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "WARMKIT_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub total_steps: u64,
    /// Samples per step (`B`).
    pub batch_size: usize,
    /// Micro-batches per step (`A`); `B` must be divisible by `A`. At least 2
    /// are needed to estimate the gradient signal-to-noise ratio.
    pub micro_batches: usize,
    /// Log a metrics record every this many steps (and at the last step);
    /// 0 logs none.
    pub metric_every: u64,
    /// Examples per split used for the initial and final loss.
    pub eval_samples: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 1000,
            batch_size: 32,
            micro_batches: 4,
            metric_every: 10,
            eval_samples: 2048,
            out_dir: None,
        }
    }
}

/// Learning-rate schedule; its length is `run.total_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub cooldown_frac: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ScheduleSpec::default();
        Self {
            kind: s.kind,
            peak_lr: s.peak_lr,
            warmup_frac: s.warmup_frac,
            cooldown_frac: s.cooldown_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// A hidden unit is dead when its preactivation is `≤` this on every
    /// sample of the step's batch.
    pub dead_threshold: f64,
    /// Layer whose relative representation change is sampled.
    pub rrc_layer: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            dead_threshold: 0.0,
            rrc_layer: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleSection,
    pub diagnostics: DiagnosticsSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule.kind,
            peak_lr: self.schedule.peak_lr,
            total_steps: self.run.total_steps,
            warmup_frac: self.schedule.warmup_frac,
            cooldown_frac: self.schedule.cooldown_frac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.batch_size == 0 || r.micro_batches == 0 || !r.batch_size.is_multiple_of(r.micro_batches) {
            return Err(HarnessError::Usage(format!(
                "run.batch_size ({}) must be a positive multiple of run.micro_batches ({})",
                r.batch_size, r.micro_batches
            )));
        }
        if self.optimizer.rrc_correction && r.micro_batches < 2 {
            return Err(HarnessError::Usage(
                "optimizer.rrc_correction needs run.micro_batches >= 2".into(),
            ));
        }
        if r.eval_samples == 0 {
            return Err(HarnessError::Usage("run.eval_samples must be positive".into()));
        }
        if self.diagnostics.rrc_layer > self.model.hidden.len() {
            return Err(HarnessError::Usage(format!(
                "diagnostics.rrc_layer {} does not exist (model has {} layers)",
                self.diagnostics.rrc_layer,
                self.model.hidden.len() + 1
            )));
        }
        self.task.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        // a zero-step run is allowed; the schedule itself needs one step
        let mut spec = self.schedule_spec();
        spec.total_steps = spec.total_steps.max(1);
        spec.validate()?;
        Ok(())
    }

    /// `explicit`, else `run.out_dir`, else `$WARMKIT_OUT_DIR`, else `runs`.
    pub fn resolve_out_dir(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.run.out_dir.clone())
            .unwrap_or_else(default_out_dir)
    }
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use warmkit::{Activation, Algorithm};

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            r#"
            [run]
            seed = 7
            batch_size = 64
            micro_batches = 8

            [task]
            kind = "charlm"
            context = 3

            [model]
            hidden = [32, 32]
            activation = { leaky_relu = 0.1 }

            [optimizer]
            algorithm = "lionar"
            rrc_correction = true
            rrc_wd_multiplier = 32.0

            [schedule]
            kind = "cosine"
            peak_lr = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(c.run.seed, 7);
        assert_eq!(c.model.activation, Activation::LeakyRelu(0.1));
        assert_eq!(c.optimizer.algorithm, Algorithm::Lionar);
        assert_eq!(c.schedule_spec().total_steps, 1000);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[run]\nsteps = 5\n").is_err());
        assert!(RunConfig::from_toml("[optimiser]\n").is_err());
        assert!(RunConfig::from_toml("[schedule]\ntotal_steps = 5\n").is_err());
    }

    #[test]
    fn invariants_are_checked() {
        assert!(RunConfig::from_toml("[run]\nbatch_size = 30\nmicro_batches = 4\n").is_err());
        assert!(RunConfig::from_toml("[run]\nmicro_batches = 1\n[optimizer]\nrrc_correction = true\n").is_err());
        assert!(RunConfig::from_toml("[schedule]\nwarmup_frac = 0.7\n").is_err());
        assert!(RunConfig::from_toml("[run]\ntotal_steps = 0\n").is_ok());
    }

    #[test]
    fn out_dir_precedence() {
        let mut c = RunConfig::default();
        c.run.out_dir = Some("from_config".into());
        assert_eq!(c.resolve_out_dir(Some(Path::new("cli"))), PathBuf::from("cli"));
        assert_eq!(c.resolve_out_dir(None), PathBuf::from("from_config"));
    }
}
