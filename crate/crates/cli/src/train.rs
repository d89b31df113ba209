//! The training loop and its JSONL metrics stream.
//!
//! Each step runs forward, backward with per-micro-batch gradients, the
//! signal-to-noise estimate, the optional representation-change update scale,
//! the optimizer step and (on logging steps) the diagnostics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use warmkit::diagnostics::{dead_unit_fraction, measure_layer_rrc, row_angular_updates, GroupMetrics};
use warmkit::gradstats::{alignment_metrics, estimate_snr, rrc_rho};
use warmkit::linalg::{sum_sq, Matrix};
use warmkit::optim::StepReport;
use warmkit::toymodel::{ForwardCache, Split};
use warmkit::{
    Activation, AngularSummary, Batch, Dataset, MicroBatchGrads, Mlp, Optimizer, ParamGroup, RrcCorrectionState,
    ScheduleSpec, SeededRng, StepMetrics,
};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

/// Version of the metrics JSONL and summary JSON layouts.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// JSON number, or one of the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// What one [`Trainer::step`] did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub report: StepReport<f64>,
    /// Present on logging steps.
    pub metrics: Option<StepMetrics>,
}

/// A training run that can be advanced one step at a time.
pub struct Trainer {
    config: RunConfig,
    schedule: ScheduleSpec,
    dataset: Dataset,
    model: Mlp<f64>,
    optimizer: Optimizer<f64>,
    data_rng: SeededRng,
    rrc_states: Vec<Option<RrcCorrectionState<f64>>>,
    train_eval: Batch<f64>,
    val_eval: Batch<f64>,
    t: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.run.seed;
        let dataset = config.task.build(seed)?;
        let model = Mlp::new(
            config.model.clone(),
            dataset.input_dim(),
            dataset.n_classes(),
            &mut SeededRng::new(seed, 2),
        )?;
        let optimizer = Optimizer::new(config.optimizer.clone(), model.groups())?;
        let rrc_states = model
            .groups()
            .iter()
            .map(|g| {
                (config.optimizer.rrc_correction && g.is_neuron_matrix())
                    .then(|| RrcCorrectionState::new(config.optimizer.beta1, config.run.batch_size))
                    .transpose()
            })
            .collect::<warmkit::Result<_>>()?;
        let eval = |split| dataset.batch(split, &dataset.eval_indices(split, config.run.eval_samples), 1);
        let train_eval = eval(Split::Train)?;
        let val_eval = eval(Split::Val)?;
        Ok(Self {
            schedule: config.schedule_spec(),
            data_rng: SeededRng::new(seed, 1),
            config,
            dataset,
            model,
            optimizer,
            rrc_states,
            train_eval,
            val_eval,
            t: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn model(&self) -> &Mlp<f64> {
        &self.model
    }

    pub fn optimizer(&self) -> &Optimizer<f64> {
        &self.optimizer
    }

    pub fn steps_done(&self) -> u64 {
        self.t
    }

    /// Mean loss on the fixed train and validation evaluation sets.
    pub fn eval_losses(&self) -> Result<(f64, f64)> {
        Ok((self.model.loss(&self.train_eval)?, self.model.loss(&self.val_eval)?))
    }

    fn is_log_step(&self, t: u64) -> bool {
        let every = self.config.run.metric_every;
        every > 0 && (t.is_multiple_of(every) || t == self.config.run.total_steps)
    }

    /// Runs one step. Fails with [`HarnessError::Diverged`] on a non-finite
    /// batch loss, leaving the model untouched.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let t = self.t + 1;
        let run = &self.config.run;
        let idx = self.dataset.sample_indices(Split::Train, run.batch_size, &mut self.data_rng);
        let batch: Batch<f64> = self.dataset.batch(Split::Train, &idx, run.micro_batches)?;
        let cache = self.model.forward(&batch)?;
        if !cache.loss.is_finite() {
            return Err(HarnessError::Diverged { step: t, loss: cache.loss });
        }
        let grads = self.model.backward(&cache, &batch, true)?;

        // signal-to-noise from exactly the micro-batch means averaged into grads.full
        let snr = if batch.micro_count() >= 2 {
            let per_group = (0..grads.full.len())
                .map(|g| {
                    let micro = grads.micro.iter().map(|m| m[g].clone()).collect();
                    Ok(estimate_snr(&MicroBatchGrads::new(micro, batch.micro_size())?).phi)
                })
                .collect::<warmkit::Result<Vec<f64>>>()?;
            let whole = grads.micro.iter().map(|m| m.concat()).collect();
            let phi = estimate_snr(&MicroBatchGrads::new(whole, batch.micro_size())?).phi;
            Some((phi, per_group))
        } else {
            None
        };

        let mut scales = vec![None; grads.full.len()];
        if let Some((_, per_group)) = &snr {
            for (i, state) in self.rrc_states.iter_mut().enumerate() {
                if let Some(state) = state {
                    let group = &self.model.groups()[i];
                    let fan_in = group.fan_in().expect("rrc state only for neuron matrices");
                    let rho = rrc_rho(per_group[i], batch.size(), fan_in)?;
                    let scale = state.update_scale(rho)?;
                    self.optimizer.apply_update_scale(group.name(), scale)?;
                    scales[i] = Some(scale);
                }
            }
        }

        let log = self.is_log_step(t);
        let m_prev: Vec<f64> = if log {
            (0..grads.full.len()).flat_map(|i| self.optimizer.momentum(i).to_vec()).collect()
        } else {
            Vec::new()
        };
        let before: Vec<ParamGroup<f64>> = if log { self.model.groups().to_vec() } else { Vec::new() };
        let lr: f64 = self.schedule.lr_at(t)?;
        let report = self
            .optimizer
            .step(self.model.groups_mut(), &grads.full, lr, self.schedule.max_lr())?;
        self.t = t;

        let metrics = if log {
            let g_all: Vec<f64> = grads.full.concat();
            let cancel_ratio = (m_prev.len() == g_all.len() && sum_sq(&g_all) > 0.0)
                .then(|| alignment_metrics(&m_prev, &g_all, self.optimizer.beta()))
                .transpose()?
                .map(|a| a.cancel_ratio);
            let m = StepMetrics {
                step: t,
                lr,
                loss: cache.loss,
                groups: self.group_metrics(&before, &report, &scales)?,
                phi: snr.as_ref().map(|s| s.0),
                cancel_ratio,
                rrc: self.sample_rrc(&before, &batch, &cache)?,
                dead_frac: self.dead_fraction(&cache)?,
            };
            m.validate()?;
            Some(m)
        } else {
            None
        };
        Ok(StepOutcome { report, metrics })
    }

    fn group_metrics(
        &self,
        before: &[ParamGroup<f64>],
        report: &StepReport<f64>,
        scales: &[Option<f64>],
    ) -> Result<Vec<GroupMetrics>> {
        let mut out = Vec::with_capacity(before.len());
        for (i, prev) in before.iter().enumerate() {
            let next = &self.model.groups()[i];
            let row_len = if prev.is_neuron_matrix() { prev.shape().1 } else { prev.len() };
            let angles = row_angular_updates(prev.values(), next.values(), row_len)?;
            let l2: f64 = prev
                .values()
                .iter()
                .zip(next.values())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt();
            debug_assert_eq!(report.groups[i].name, prev.name());
            out.push(GroupMetrics {
                name: prev.name().to_string(),
                l2_update: l2,
                angular: (!angles.is_empty())
                    .then(|| AngularSummary::from_angles(&angles))
                    .transpose()?,
                rrc_scale: scales[i],
            });
        }
        Ok(out)
    }

    /// Local representation change of the configured layer on this step's
    /// inputs; `None` if its output was zero.
    fn sample_rrc(&self, before: &[ParamGroup<f64>], batch: &Batch<f64>, cache: &ForwardCache<f64>) -> Result<Option<f64>> {
        let k = self.config.diagnostics.rrc_layer;
        let w0 = before[2 * k].to_matrix();
        let w1 = self.model.weight(k);
        let delta = Matrix::from_fn(w0.rows(), w0.cols(), |i, j| w1.get(i, j) - w0.get(i, j));
        let input = if k == 0 { batch.inputs() } else { &cache.activations[k - 1] };
        match measure_layer_rrc(&w0, &delta, &input.transpose()) {
            Ok(v) => Ok(Some(v)),
            Err(warmkit::Error::ZeroNorm(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Dead fraction over all hidden units on this step's batch.
    fn dead_fraction(&self, cache: &ForwardCache<f64>) -> Result<Option<f64>> {
        let hidden = cache.activations.len();
        if hidden == 0 {
            return Ok(None);
        }
        let (mut dead, mut units) = (0.0, 0usize);
        for k in 0..hidden {
            let u = cache.hidden_units(k);
            dead += dead_unit_fraction(&u, self.config.diagnostics.dead_threshold)? * u.rows() as f64;
            units += u.rows();
        }
        Ok(Some(dead / units as f64))
    }
}

/// JSON line for one step.
pub fn step_record(m: &StepMetrics) -> Value {
    let mut groups = Map::new();
    for g in &m.groups {
        let ang = g.angular;
        groups.insert(
            g.name.clone(),
            json!({
                "l2_update": num(g.l2_update),
                "ang_mean": opt_num(ang.map(|a| a.mean)),
                "ang_p5": opt_num(ang.map(|a| a.p5)),
                "ang_p95": opt_num(ang.map(|a| a.p95)),
                "rrc_scale": opt_num(g.rrc_scale),
            }),
        );
    }
    let scales: Vec<f64> = m.groups.iter().filter_map(|g| g.rrc_scale).collect();
    let mean_scale = (!scales.is_empty()).then(|| scales.iter().sum::<f64>() / scales.len() as f64);
    json!({
        "schema_version": METRICS_SCHEMA_VERSION,
        "record": "step",
        "step": m.step,
        "lr": num(m.lr),
        "loss": num(m.loss),
        "phi": opt_num(m.phi),
        "cancel_ratio": opt_num(m.cancel_ratio),
        "rrc": opt_num(m.rrc),
        "rrc_scale": opt_num(mean_scale),
        "dead_frac": opt_num(m.dead_frac),
        "groups": groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub status: RunStatus,
    pub steps_completed: u64,
    pub init_train_loss: f64,
    pub init_val_loss: f64,
    /// NaN when the run diverged.
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub metrics_path: Option<PathBuf>,
}

impl TrainSummary {
    pub fn to_json(&self) -> Value {
        json!({
            "schema_version": self.schema_version,
            "status": self.status,
            "steps_completed": self.steps_completed,
            "init_train_loss": num(self.init_train_loss),
            "init_val_loss": num(self.init_val_loss),
            "final_train_loss": num(self.final_train_loss),
            "final_val_loss": num(self.final_val_loss),
            "metrics_path": self.metrics_path,
        })
    }
}

struct Jsonl {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Jsonl {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn write(&mut self, v: &Value) -> Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n").map_err(|e| HarnessError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

fn header_record(trainer: &Trainer, init: (f64, f64)) -> Value {
    let config = trainer.config();
    let n_params: usize = trainer.model().groups().iter().map(ParamGroup::len).sum();
    json!({
        "schema_version": METRICS_SCHEMA_VERSION,
        "record": "header",
        "config": config,
        "optimizer_hash": config.optimizer.hash(),
        "dataset_fingerprint": trainer.dataset().fingerprint(),
        "n_params": n_params,
        "groups": trainer.model().groups().iter().map(|g| g.name()).collect::<Vec<_>>(),
        "dead_frac_advisory": matches!(config.model.activation, Activation::LeakyRelu(_)),
        "init_train_loss": num(init.0),
        "init_val_loss": num(init.1),
    })
}

/// Runs `config` to completion. With a `metrics_path`, writes a header record
/// followed by one record per logging step. A non-finite loss stops the run
/// with an `abort` record and a summary whose final losses are NaN.
pub fn run_training(config: &RunConfig, metrics_path: Option<&Path>) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(config.clone())?;
    let init = trainer.eval_losses()?;
    let mut sink = metrics_path.map(Jsonl::create).transpose()?;
    if let Some(s) = sink.as_mut() {
        s.write(&header_record(&trainer, init))?;
    }
    let mut status = RunStatus::Ok;
    while trainer.steps_done() < config.run.total_steps {
        match trainer.step() {
            Ok(outcome) => {
                if let (Some(s), Some(m)) = (sink.as_mut(), &outcome.metrics) {
                    s.write(&step_record(m))?;
                }
            }
            Err(e @ (HarnessError::Diverged { .. } | HarnessError::Core(warmkit::Error::NonFinite(_)))) => {
                if let Some(s) = sink.as_mut() {
                    s.write(&json!({
                        "schema_version": METRICS_SCHEMA_VERSION,
                        "record": "abort",
                        "step": trainer.steps_done() + 1,
                        "reason": e.to_string(),
                    }))?;
                }
                status = RunStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(s) = sink {
        s.finish()?;
    }
    let (final_train, final_val) = match status {
        RunStatus::Ok => trainer.eval_losses()?,
        RunStatus::Diverged => (f64::NAN, f64::NAN),
    };
    Ok(TrainSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        status,
        steps_completed: trainer.steps_done(),
        init_train_loss: init.0,
        init_val_loss: init.1,
        final_train_loss: final_train,
        final_val_loss: final_val,
        metrics_path: metrics_path.map(Path::to_path_buf),
    })
}
