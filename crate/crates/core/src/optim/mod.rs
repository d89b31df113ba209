//! AdamW, LionA, LionAR and normalized gradient descent over named
//! parameter groups.
//!
//! ```text
//! AdamW   θ ← (1-ηλ)θ - η m̂/(√v̂+ε)
//! LionA   θ ← (1-ηλ)θ - η γ sign(u)
//! LionAR  θ̂ ← θ - (η/η_max) √(2 η_max λ) γ (‖θ₀‖/√C) sign(u);  θ ← θ̂ ‖θ₀‖/‖θ̂‖   (neuron rows)
//!         θ ← θ - η γ sign(u)                                                (other groups)
//! NGD     θ ← θ - η g/√E[‖g‖²]
//! ```
//!
//! `u` is the heavy-ball momentum `m_t` or, with Nesterov, `β m_t + (1-β) g_t`;
//! `γ` comes from [`momentum_scale`].

mod checkpoint;
mod group;
mod momentum;
mod rules;

pub use checkpoint::{Checkpoint, GroupCheckpoint, CHECKPOINT_FORMAT_VERSION};
pub use group::{ParamGroup, ParamKind};
pub use momentum::{bias_amplification_sq, momentum_scale, momentum_second_moment};
pub use rules::normalized_gd_step;

use crate::error::{out_of_range, Error, Result};
use crate::linalg::{all_finite, sum_sq};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adamw,
    Liona,
    Lionar,
    NormalizedGd,
}

impl Algorithm {
    pub fn is_lion_family(self) -> bool {
        matches!(self, Algorithm::Liona | Algorithm::Lionar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub weight_decay: f64,
    /// Momentum coefficient (β₁ for AdamW, β for the Lion family).
    pub beta1: f64,
    /// AdamW magnitude smoothing; also the EMA coefficient of the gradient
    /// power estimate used by normalized GD.
    pub beta2: f64,
    pub eps: f64,
    /// Lion family only.
    pub nesterov: bool,
    /// AdamW only: use `m̂ = m`.
    pub disable_beta1_bias_correction: bool,
    /// Lion family only: time-varying `γ_t`.
    pub inverse_bias_correction: bool,
    /// Scale neuron-matrix updates by the measured representation-change
    /// factor (driven from the training loop through
    /// [`Optimizer::apply_update_scale`]).
    pub rrc_correction: bool,
    /// Weight decay multiplier applied when `rrc_correction` is on.
    pub rrc_wd_multiplier: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adamw,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            nesterov: false,
            disable_beta1_bias_correction: false,
            inverse_bias_correction: false,
            rrc_correction: false,
            rrc_wd_multiplier: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(out_of_range(name, b, "[0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(out_of_range("weight_decay", self.weight_decay, "[0, inf)"));
        }
        // eps = 0 is allowed so the exact scale-invariance of AdamW can be checked
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(out_of_range("eps", self.eps, "[0, inf)"));
        }
        if !(self.rrc_wd_multiplier > 0.0 && self.rrc_wd_multiplier.is_finite()) {
            return Err(out_of_range("rrc_wd_multiplier", self.rrc_wd_multiplier, "(0, inf)"));
        }
        if self.nesterov && !self.algorithm.is_lion_family() {
            return Err(Error::Config("nesterov is only defined for liona/lionar".into()));
        }
        if self.inverse_bias_correction && !self.algorithm.is_lion_family() {
            return Err(Error::Config(
                "inverse_bias_correction is only defined for liona/lionar".into(),
            ));
        }
        if self.disable_beta1_bias_correction && self.algorithm != Algorithm::Adamw {
            return Err(Error::Config(
                "disable_beta1_bias_correction is only defined for adamw".into(),
            ));
        }
        Ok(())
    }

    /// Weight decay after the representation-change multiplier.
    pub fn effective_weight_decay(&self) -> f64 {
        if self.rrc_correction {
            self.weight_decay * self.rrc_wd_multiplier
        } else {
            self.weight_decay
        }
    }

    /// Short stable fingerprint of the configuration, stored in checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone)]
struct GroupState<F> {
    name: String,
    momentum: Vec<F>,
    second_moment: Option<Vec<F>>,
    /// EMA of ‖g‖² (normalized GD only).
    grad_power: Option<F>,
    pending_scale: F,
}

/// Everything that evolves across steps.
#[derive(Debug, Clone)]
pub struct OptimizerState<F> {
    t: u64,
    groups: Vec<GroupState<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStepReport<F> {
    pub name: String,
    /// Norm of the gradient-driven part of the step, before weight decay
    /// (and before the LionAR norm projection).
    pub update_norm: F,
    /// Learning-rate multiplier consumed from [`Optimizer::apply_update_scale`].
    pub scale: F,
    pub gamma: Option<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<F> {
    pub t: u64,
    pub lr: F,
    pub groups: Vec<GroupStepReport<F>>,
}

/// An optimizer bound to a fixed list of parameter groups (matched by index).
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    config: OptimizerConfig,
    state: OptimizerState<F>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(config: OptimizerConfig, groups: &[ParamGroup<F>]) -> Result<Self> {
        config.validate()?;
        if config.algorithm == Algorithm::Lionar {
            for g in groups.iter().filter(|g| g.is_neuron_matrix()) {
                if let Some(r) = g.init_row_norms().iter().position(|&n| !(n > F::zero())) {
                    return Err(Error::ZeroInitialRow {
                        group: g.name().to_string(),
                        row: r,
                    });
                }
            }
        }
        let adam = config.algorithm == Algorithm::Adamw;
        let ngd = config.algorithm == Algorithm::NormalizedGd;
        let states = groups
            .iter()
            .map(|g| GroupState {
                name: g.name().to_string(),
                momentum: vec![F::zero(); g.len()],
                second_moment: adam.then(|| vec![F::zero(); g.len()]),
                grad_power: ngd.then(F::zero),
                pending_scale: F::one(),
            })
            .collect();
        Ok(Self {
            config,
            state: OptimizerState { t: 0, groups: states },
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState<F> {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.state.t
    }

    pub fn beta(&self) -> F {
        F::lit(self.config.beta1)
    }

    /// Momentum buffer of group `idx` (as of the last completed step).
    pub fn momentum(&self, idx: usize) -> &[F] {
        &self.state.groups[idx].momentum
    }

    /// `γ` the next step will use.
    pub fn next_gamma(&self) -> Result<F> {
        momentum_scale(
            self.beta(),
            self.config.nesterov,
            Some(self.state.t + 1),
            self.config.inverse_bias_correction,
        )
    }

    /// Multiplies the learning rate of the *next* step of `group_name` by
    /// `scale ∈ (0, 1]`. The scale is consumed by that step.
    pub fn apply_update_scale(&mut self, group_name: &str, scale: F) -> Result<()> {
        if !(scale > F::zero() && scale <= F::one()) {
            return Err(out_of_range("scale", scale.to_f64_lossless(), "(0, 1]"));
        }
        let g = self
            .state
            .groups
            .iter_mut()
            .find(|g| g.name == group_name)
            .ok_or_else(|| Error::Unknown {
                kind: "parameter group",
                name: group_name.to_string(),
            })?;
        g.pending_scale = scale;
        Ok(())
    }

    fn check_inputs<G: AsRef<[F]>>(&self, groups: &[ParamGroup<F>], grads: &[G], lr: F) -> Result<()> {
        if groups.len() != self.state.groups.len() || grads.len() != groups.len() {
            return Err(Error::ShapeMismatch {
                what: "number of parameter groups / gradients".into(),
                expected: self.state.groups.len(),
                got: if groups.len() != self.state.groups.len() {
                    groups.len()
                } else {
                    grads.len()
                },
            });
        }
        if !(lr >= F::zero() && lr.is_finite()) {
            return Err(out_of_range("lr", lr.to_f64_lossless(), "[0, inf)"));
        }
        for ((p, g), s) in groups.iter().zip(grads).zip(&self.state.groups) {
            let g = g.as_ref();
            if p.name() != s.name {
                return Err(Error::Config(format!(
                    "group order changed: expected `{}`, got `{}`",
                    s.name,
                    p.name()
                )));
            }
            if g.len() != p.len() {
                return Err(Error::ShapeMismatch {
                    what: format!("gradient for `{}`", p.name()),
                    expected: p.len(),
                    got: g.len(),
                });
            }
            if !all_finite(g) {
                return Err(Error::NonFinite(format!("gradient for `{}`", p.name())));
            }
        }
        Ok(())
    }

    /// One optimizer step at learning rate `lr`. `lr_max` is the schedule's
    /// peak rate and is only read by LionAR.
    ///
    /// The step is all-or-nothing: on error neither the parameters nor the
    /// optimizer state are modified.
    pub fn step<G: AsRef<[F]>>(
        &mut self,
        groups: &mut [ParamGroup<F>],
        grads: &[G],
        lr: F,
        lr_max: F,
    ) -> Result<StepReport<F>> {
        self.check_inputs(groups, grads, lr)?;
        let alg = self.config.algorithm;
        if alg == Algorithm::Lionar && !(lr_max > F::zero()) {
            return Err(out_of_range("lr_max", lr_max.to_f64_lossless(), "(0, inf)"));
        }
        let t = self.state.t + 1;
        let beta = self.beta();
        let wd = F::lit(self.config.effective_weight_decay());
        let gamma = if alg.is_lion_family() {
            Some(momentum_scale(
                beta,
                self.config.nesterov,
                Some(t),
                self.config.inverse_bias_correction,
            )?)
        } else {
            None
        };

        // Work on copies so a failing group leaves everything untouched.
        let mut new_states = self.state.groups.clone();
        let mut new_values: Vec<Vec<F>> = Vec::with_capacity(groups.len());
        let mut reports = Vec::with_capacity(groups.len());
        for ((p, g), st) in groups.iter().zip(grads).zip(new_states.iter_mut()) {
            let g = g.as_ref();
            let scale = st.pending_scale;
            let lr_eff = lr * scale;
            let mut out = vec![F::zero(); p.len()];
            let update_norm = match alg {
                Algorithm::Adamw => {
                    let h = rules::AdamwHyper {
                        beta1: beta,
                        beta2: F::lit(self.config.beta2),
                        eps: F::lit(self.config.eps),
                        weight_decay: wd,
                        bias_correct_m: !self.config.disable_beta1_bias_correction,
                    };
                    let v = st.second_moment.as_mut().expect("adamw state");
                    rules::adamw(p.values(), g, &mut st.momentum, v, t, lr_eff, &h, &mut out)
                }
                Algorithm::Liona | Algorithm::Lionar => {
                    let gamma = gamma.expect("lion gamma");
                    let mut dir = vec![F::zero(); p.len()];
                    rules::lion_direction(g, &mut st.momentum, beta, self.config.nesterov, &mut dir);
                    match (alg, p.kind()) {
                        (Algorithm::Lionar, ParamKind::NeuronMatrix { fan_in }) => rules::lionar_rows(
                            p.name(),
                            p.values(),
                            &dir,
                            p.init_row_norms(),
                            fan_in,
                            lr_eff,
                            lr_max,
                            gamma,
                            wd,
                            &mut out,
                        )?,
                        // LionAR leaves non-neuron parameters undecayed
                        (Algorithm::Lionar, ParamKind::Generic) => {
                            rules::liona_apply(p.values(), &dir, lr_eff, gamma, F::zero(), &mut out)
                        }
                        _ => rules::liona_apply(p.values(), &dir, lr_eff, gamma, wd, &mut out),
                    }
                }
                Algorithm::NormalizedGd => {
                    let b2 = F::lit(self.config.beta2);
                    let power = st.grad_power.as_mut().expect("ngd state");
                    *power = b2 * *power + (F::one() - b2) * sum_sq(g);
                    let tt = t.min(i32::MAX as u64) as i32;
                    let estimate = *power / (F::one() - b2.powi(tt));
                    if estimate > F::zero() {
                        out = normalized_gd_step(p.values(), g, estimate, lr_eff)?;
                        lr_eff * (sum_sq(g) / estimate).sqrt()
                    } else {
                        // every gradient so far was exactly zero
                        out.copy_from_slice(p.values());
                        F::zero()
                    }
                }
            };
            st.pending_scale = F::one();
            new_values.push(out);
            reports.push(GroupStepReport {
                name: p.name().to_string(),
                update_norm,
                scale,
                gamma,
            });
        }

        for (p, v) in groups.iter_mut().zip(new_values) {
            p.values_mut().copy_from_slice(&v);
        }
        self.state.groups = new_states;
        self.state.t = t;
        Ok(StepReport {
            t,
            lr,
            groups: reports,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            algorithm: self.config.algorithm,
            config_hash: self.config.hash(),
            t: self.state.t,
            groups: self
                .state
                .groups
                .iter()
                .map(|g| GroupCheckpoint {
                    name: g.name.clone(),
                    momentum: g.momentum.iter().map(|x| x.to_f64_lossless()).collect(),
                    second_moment: g
                        .second_moment
                        .as_ref()
                        .map(|v| v.iter().map(|x| x.to_f64_lossless()).collect()),
                    grad_power: g.grad_power.map(|x| x.to_f64_lossless()),
                })
                .collect(),
        }
    }

    /// Rebuilds an optimizer from a checkpoint taken with the same config
    /// and parameter layout. Pending update scales are not persisted.
    pub fn restore(config: OptimizerConfig, groups: &[ParamGroup<F>], ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        if ckpt.config_hash != config.hash() {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let mut opt = Self::new(config, groups)?;
        if ckpt.groups.len() != opt.state.groups.len() {
            return Err(Error::Checkpoint("group count mismatch".into()));
        }
        let conv = |v: &[f64]| v.iter().map(|&x| F::lit(x)).collect::<Vec<F>>();
        for (st, gc) in opt.state.groups.iter_mut().zip(&ckpt.groups) {
            if st.name != gc.name || st.momentum.len() != gc.momentum.len() {
                return Err(Error::Checkpoint(format!("layout mismatch at `{}`", gc.name)));
            }
            st.momentum = conv(&gc.momentum);
            match (&mut st.second_moment, &gc.second_moment) {
                (Some(v), Some(src)) if v.len() == src.len() => *v = conv(src),
                (None, None) => {}
                _ => return Err(Error::Checkpoint(format!("second moment mismatch at `{}`", gc.name))),
            }
            match (&mut st.grad_power, gc.grad_power) {
                (Some(p), Some(src)) => *p = F::lit(src),
                (None, None) => {}
                _ => return Err(Error::Checkpoint(format!("grad power mismatch at `{}`", gc.name))),
            }
        }
        opt.state.t = ckpt.t;
        Ok(opt)
    }
}
