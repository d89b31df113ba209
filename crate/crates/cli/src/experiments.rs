//! Small qualitative experiments on the toy model.

use warmkit::diagnostics::dead_unit_fraction;
use warmkit::toymodel::Split;
use warmkit::{Activation, Algorithm, Batch, Mlp, ModelConfig, Optimizer, OptimizerConfig, SeededRng, TaskSpec};

use crate::error::Result;

/// Learning rate of the "giant" first step.
pub const GIANT_LR: f64 = 10.0;
/// Learning rate of the reference first step.
pub const NORMAL_LR: f64 = 1e-2;
const HIDDEN: [usize; 2] = [64, 64];
const BATCH: usize = 64;
const EVAL_SAMPLES: usize = 512;

/// Fraction of dead hidden units (preactivation `≤ 0` on every evaluation
/// sample) after a single LionA step at `lr` from a fresh initialization.
///
/// The model is a two-hidden-layer MLP on the default synthetic task; the
/// seed fixes the data, the initialization and the step's batch, so runs that
/// differ only in `lr` or `activation` are paired.
pub fn dead_fraction_after_first_step(activation: Activation, seed: u64, lr: f64) -> Result<f64> {
    let data = TaskSpec::default().build(seed)?;
    let config = ModelConfig {
        hidden: HIDDEN.to_vec(),
        activation,
        ..ModelConfig::default()
    };
    let mut model = Mlp::<f64>::new(config, data.input_dim(), data.n_classes(), &mut SeededRng::new(seed, 2))?;
    let mut opt = Optimizer::new(OptimizerConfig::new(Algorithm::Liona), model.groups())?;
    let idx = data.sample_indices(Split::Train, BATCH, &mut SeededRng::new(seed, 1));
    let batch: Batch<f64> = data.batch(Split::Train, &idx, 1)?;
    let grads = model.backward(&model.forward(&batch)?, &batch, false)?;
    opt.step(model.groups_mut(), &grads.full, lr, lr)?;

    let eval: Batch<f64> = data.batch(Split::Val, &data.eval_indices(Split::Val, EVAL_SAMPLES), 1)?;
    let cache = model.forward(&eval)?;
    let (mut dead, mut units) = (0.0, 0usize);
    for k in 0..cache.activations.len() {
        let u = cache.hidden_units(k);
        dead += dead_unit_fraction(&u, 0.0)? * u.rows() as f64;
        units += u.rows();
    }
    Ok(dead / units as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GiantStepOutcome {
    pub seed: u64,
    pub relu_normal: f64,
    pub relu_giant: f64,
    pub leaky_normal: f64,
    pub leaky_giant: f64,
}

impl GiantStepOutcome {
    pub fn relu_increase(&self) -> f64 {
        self.relu_giant - self.relu_normal
    }

    pub fn leaky_increase(&self) -> f64 {
        self.leaky_giant - self.leaky_normal
    }
}

/// Giant vs normal first step for ReLU and leaky ReLU (`α = 0.1`) on one seed.
pub fn giant_step_comparison(seed: u64) -> Result<GiantStepOutcome> {
    let leaky = Activation::LeakyRelu(0.1);
    Ok(GiantStepOutcome {
        seed,
        relu_normal: dead_fraction_after_first_step(Activation::Relu, seed, NORMAL_LR)?,
        relu_giant: dead_fraction_after_first_step(Activation::Relu, seed, GIANT_LR)?,
        leaky_normal: dead_fraction_after_first_step(leaky, seed, NORMAL_LR)?,
        leaky_giant: dead_fraction_after_first_step(leaky, seed, GIANT_LR)?,
    })
}
