//! Small MLPs with analytic backpropagation.
//!
//! Layer `k` computes `z = W̃_k a + b_k` where each row of `W_k` is one
//! neuron. With `weight_norm`, hidden layers use `W̃` rows `w/‖w‖`, which
//! makes their outputs invariant to rescaling a row. Parameters are exposed
//! as [`ParamGroup`]s named `layer{k}.weight` (neuron matrices) and
//! `layer{k}.bias` (generic vectors).
//!
//! The ReLU derivative at exactly 0 is taken to be 0; leaky ReLU uses `α`
//! there.

mod data;

pub use data::{make_task, Dataset, Split, TaskKind, TaskSpec, CORPUS, DATASET_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::linalg::{all_finite, dot, norm, Matrix};
use crate::optim::ParamGroup;
use crate::rng::SeededRng;
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::LeakyRelu(a) => {
                if z > F::zero() {
                    z
                } else {
                    F::lit(a) * z
                }
            }
        }
    }

    fn derivative<F: Scalar>(self, z: F) -> F {
        match self {
            _ if z > F::zero() => F::one(),
            Activation::Relu => F::zero(),
            Activation::LeakyRelu(a) => F::lit(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy against class labels.
    CrossEntropy,
    /// `½‖z - y‖²` per sample; class labels become one-hot targets.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths. Empty gives a linear model.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub weight_norm: bool,
    /// Initial weights are `N(0, init_gain²/fan_in)`; biases start at 0.
    pub init_gain: f64,
    pub loss: LossKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
            weight_norm: false,
            init_gain: 1.0,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if let Activation::LeakyRelu(a) = self.activation {
            if !(a > 0.0 && a < 1.0) {
                return Err(out_of_range("leaky_relu alpha", a, "(0, 1)"));
            }
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(out_of_range("init_gain", self.init_gain, "(0, inf)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<F> {
    Classes(Vec<usize>),
    Values(Matrix<F>),
}

impl<F: Scalar> Targets<F> {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(y) => y.len(),
            Targets::Values(m) => m.rows(),
        }
    }
}

/// Inputs (one sample per row) with targets, split into `micro_count`
/// consecutive micro-batches of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    inputs: Matrix<F>,
    targets: Targets<F>,
    micro_count: usize,
}

impl<F: Scalar> Batch<F> {
    pub fn new(inputs: Matrix<F>, targets: Targets<F>, micro_count: usize) -> Result<Self> {
        let b = inputs.rows();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        if targets.len() != b {
            return Err(Error::ShapeMismatch {
                what: "targets".into(),
                expected: b,
                got: targets.len(),
            });
        }
        if micro_count == 0 || !b.is_multiple_of(micro_count) {
            return Err(Error::Config(format!(
                "batch size {b} is not divisible by micro-batch count {micro_count}"
            )));
        }
        Ok(Self {
            inputs,
            targets,
            micro_count,
        })
    }

    pub fn inputs(&self) -> &Matrix<F> {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets<F> {
        &self.targets
    }

    pub fn size(&self) -> usize {
        self.inputs.rows()
    }

    pub fn micro_count(&self) -> usize {
        self.micro_count
    }

    pub fn micro_size(&self) -> usize {
        self.size() / self.micro_count
    }
}

/// Activations kept by [`Mlp::forward`] for the backward pass and
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    version: u64,
    /// Per layer, `batch × width` preactivations; the last entry is the output.
    pub preactivations: Vec<Matrix<F>>,
    /// Per hidden layer, `batch × width` activations.
    pub activations: Vec<Matrix<F>>,
    pub per_sample_loss: Vec<F>,
    pub loss: F,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn outputs(&self) -> &Matrix<F> {
        self.preactivations.last().expect("at least one layer")
    }

    /// Hidden preactivations of layer `k` as `units × samples`.
    pub fn hidden_units(&self, k: usize) -> Matrix<F> {
        self.preactivations[k].transpose()
    }
}

/// Gradients of the mean loss, one flat vector per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub full: Vec<Vec<F>>,
    /// `micro[m][g]`: gradient of micro-batch `m`'s mean loss for group `g`.
    /// Empty unless requested.
    pub micro: Vec<Vec<Vec<F>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Mlp<F> {
    config: ModelConfig,
    input_dim: usize,
    output_dim: usize,
    groups: Vec<ParamGroup<F>>,
    #[serde(skip)]
    version: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct ModelFile<F> {
    format_version: u32,
    model: Mlp<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(config: ModelConfig, input_dim: usize, output_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Config("input and output dimensions must be positive".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(output_dim);
        let mut groups = Vec::with_capacity(2 * (dims.len() - 1));
        for (k, pair) in dims.windows(2).enumerate() {
            let (fan_in, width) = (pair[0], pair[1]);
            let std = F::lit(config.init_gain / (fan_in as f64).sqrt());
            let mut w = Matrix::from_vec(width, fan_in, rng.normal_vec(width * fan_in, std))?;
            // an all-zero row would break weight norm and LionAR; redraw it
            for r in 0..width {
                while norm(w.row(r)) == F::zero() {
                    let fresh = rng.normal_vec(fan_in, std);
                    w.row_mut(r).copy_from_slice(&fresh);
                }
            }
            groups.push(ParamGroup::matrix(format!("layer{k}.weight"), w)?);
            groups.push(ParamGroup::vector(format!("layer{k}.bias"), vec![F::zero(); width]));
        }
        Ok(Self {
            config,
            input_dim,
            output_dim,
            groups,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn n_layers(&self) -> usize {
        self.groups.len() / 2
    }

    pub fn groups(&self) -> &[ParamGroup<F>] {
        &self.groups
    }

    /// Mutable parameter access. Invalidates earlier forward caches.
    pub fn groups_mut(&mut self) -> &mut [ParamGroup<F>] {
        self.version += 1;
        &mut self.groups
    }

    pub fn weight(&self, layer: usize) -> Matrix<F> {
        self.groups[2 * layer].to_matrix()
    }

    fn normalized(&self, layer: usize) -> bool {
        self.config.weight_norm && layer + 1 < self.n_layers()
    }

    /// The weights actually applied by `layer` (row-normalized under
    /// weight norm), plus the raw row norms when normalized.
    fn effective_weight(&self, layer: usize) -> Result<(Matrix<F>, Option<Vec<F>>)> {
        let mut w = self.weight(layer);
        if !self.normalized(layer) {
            return Ok((w, None));
        }
        let mut norms = Vec::with_capacity(w.rows());
        for r in 0..w.rows() {
            let n = norm(w.row(r));
            if n == F::zero() {
                return Err(Error::DegenerateProjection {
                    group: self.groups[2 * layer].name().to_string(),
                    row: r,
                });
            }
            w.row_mut(r).iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok((w, Some(norms)))
    }

    fn check_targets(&self, batch: &Batch<F>) -> Result<()> {
        match (&batch.targets, self.config.loss) {
            (Targets::Classes(y), _) => {
                if let Some(&bad) = y.iter().find(|&&c| c >= self.output_dim) {
                    return Err(out_of_range("class label", bad as f64, "[0, output_dim)"));
                }
            }
            (Targets::Values(v), LossKind::Mse) => {
                if v.cols() != self.output_dim {
                    return Err(Error::ShapeMismatch {
                        what: "regression targets".into(),
                        expected: self.output_dim,
                        got: v.cols(),
                    });
                }
            }
            (Targets::Values(_), LossKind::CrossEntropy) => {
                return Err(Error::Config("cross-entropy needs class targets".into()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Batch<F>) -> Result<ForwardCache<F>> {
        if batch.inputs.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "input features".into(),
                expected: self.input_dim,
                got: batch.inputs.cols(),
            });
        }
        if !all_finite(batch.inputs.as_slice()) {
            return Err(Error::NonFinite("batch inputs".into()));
        }
        self.check_targets(batch)?;
        let layers = self.n_layers();
        let mut pre = Vec::with_capacity(layers);
        let mut post = Vec::with_capacity(layers - 1);
        for k in 0..layers {
            let input = if k == 0 { &batch.inputs } else { &post[k - 1] };
            let (w, _) = self.effective_weight(k)?;
            let mut z = input.matmul(&w.transpose())?;
            let bias = self.groups[2 * k + 1].values();
            for r in 0..z.rows() {
                z.row_mut(r).iter_mut().zip(bias).for_each(|(a, &b)| *a += b);
            }
            if k + 1 < layers {
                let act = self.config.activation;
                let a = Matrix::from_fn(z.rows(), z.cols(), |i, j| act.apply(z.get(i, j)));
                post.push(a);
            }
            pre.push(z);
        }
        let out = pre.last().expect("at least one layer");
        let per_sample_loss: Vec<F> = (0..out.rows())
            .map(|i| self.sample_loss(out.row(i), &batch.targets, i))
            .collect();
        let loss = per_sample_loss.iter().copied().sum::<F>() / F::from_count(per_sample_loss.len());
        Ok(ForwardCache {
            version: self.version,
            preactivations: pre,
            activations: post,
            per_sample_loss,
            loss,
        })
    }

    fn sample_loss(&self, z: &[F], targets: &Targets<F>, i: usize) -> F {
        let half = F::lit(0.5);
        match (self.config.loss, targets) {
            (LossKind::CrossEntropy, Targets::Classes(y)) => log_sum_exp(z) - z[y[i]],
            (LossKind::Mse, Targets::Classes(y)) => {
                half * z
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let d = if j == y[i] { v - F::one() } else { v };
                        d * d
                    })
                    .sum::<F>()
            }
            (LossKind::Mse, Targets::Values(t)) => half * z.iter().zip(t.row(i)).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>(),
            (LossKind::CrossEntropy, Targets::Values(_)) => unreachable!("rejected by check_targets"),
        }
    }

    pub fn loss(&self, batch: &Batch<F>) -> Result<F> {
        Ok(self.forward(batch)?.loss)
    }

    /// Fraction of samples whose largest logit is the target class.
    pub fn accuracy(&self, cache: &ForwardCache<F>, batch: &Batch<F>) -> Result<F> {
        let Targets::Classes(y) = &batch.targets else {
            return Err(Error::Config("accuracy needs class targets".into()));
        };
        let out = cache.outputs();
        let hits = (0..out.rows())
            .filter(|&i| {
                let row = out.row(i);
                let best = (0..row.len())
                    .fold(0, |b, j| if row[j] > row[b] { j } else { b });
                best == y[i]
            })
            .count();
        Ok(F::from_count(hits) / F::from_count(out.rows()))
    }

    /// Gradient of the mean loss over samples `lo..hi`.
    fn gradient_range(&self, cache: &ForwardCache<F>, batch: &Batch<F>, lo: usize, hi: usize) -> Result<Vec<Vec<F>>> {
        let n = F::from_count(hi - lo);
        let layers = self.n_layers();
        let out = cache.outputs().row_range(lo, hi);
        let mut dz = Matrix::zeros(hi - lo, self.output_dim);
        for i in 0..hi - lo {
            let z = out.row(i);
            let row = dz.row_mut(i);
            match (&batch.targets, self.config.loss) {
                (Targets::Classes(y), LossKind::CrossEntropy) => {
                    let lse = log_sum_exp(z);
                    for (d, &v) in row.iter_mut().zip(z) {
                        *d = (v - lse).exp();
                    }
                    row[y[lo + i]] -= F::one();
                }
                (Targets::Classes(y), LossKind::Mse) => {
                    row.copy_from_slice(z);
                    row[y[lo + i]] -= F::one();
                }
                (Targets::Values(t), _) => {
                    for ((d, &v), &target) in row.iter_mut().zip(z).zip(t.row(lo + i)) {
                        *d = v - target;
                    }
                }
            }
            row.iter_mut().for_each(|d| *d /= n);
        }
        let mut grads = vec![Vec::new(); self.groups.len()];
        for k in (0..layers).rev() {
            let input = if k == 0 {
                batch.inputs.row_range(lo, hi)
            } else {
                cache.activations[k - 1].row_range(lo, hi)
            };
            let (w, norms) = self.effective_weight(k)?;
            let mut gw = dz.transpose().matmul(&input)?;
            let mut gb = vec![F::zero(); dz.cols()];
            for r in 0..dz.rows() {
                gb.iter_mut().zip(dz.row(r)).for_each(|(a, &b)| *a += b);
            }
            if k > 0 {
                let da = dz.matmul(&w)?;
                let pre = &cache.preactivations[k - 1];
                let act = self.config.activation;
                dz = Matrix::from_fn(da.rows(), da.cols(), |i, j| da.get(i, j) * act.derivative(pre.get(lo + i, j)));
            }
            if let Some(norms) = norms {
                // ∂L/∂w = (g_v - ⟨v, g_v⟩ v) / ‖w‖ for v = w/‖w‖
                for (r, &nr) in norms.iter().enumerate() {
                    let v = w.row(r);
                    let proj = dot(v, gw.row(r));
                    for (g, &vj) in gw.row_mut(r).iter_mut().zip(v) {
                        *g = (*g - proj * vj) / nr;
                    }
                }
            }
            grads[2 * k] = gw.into_vec();
            grads[2 * k + 1] = gb;
        }
        Ok(grads)
    }

    /// Gradients of the mean loss of `batch`. With `per_micro`, each
    /// micro-batch's mean-loss gradient is also returned and the full
    /// gradient is their average.
    pub fn backward(&self, cache: &ForwardCache<F>, batch: &Batch<F>, per_micro: bool) -> Result<Gradients<F>> {
        if cache.version != self.version || cache.per_sample_loss.len() != batch.size() {
            return Err(Error::StaleForward);
        }
        if !per_micro {
            return Ok(Gradients {
                full: self.gradient_range(cache, batch, 0, batch.size())?,
                micro: Vec::new(),
            });
        }
        let m = batch.micro_size();
        let micro: Vec<Vec<Vec<F>>> = (0..batch.micro_count)
            .map(|i| self.gradient_range(cache, batch, i * m, (i + 1) * m))
            .collect::<Result<_>>()?;
        let a = F::from_count(micro.len());
        let mut full: Vec<Vec<F>> = micro[0].iter().map(|g| vec![F::zero(); g.len()]).collect();
        for mg in &micro {
            for (acc, g) in full.iter_mut().zip(mg) {
                acc.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
        }
        full.iter_mut().flatten().for_each(|x| *x /= a);
        Ok(Gradients { full, micro })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile<F> = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "model format {} (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.model.config.validate()?;
        Ok(file.model)
    }
}

fn log_sum_exp<F: Scalar>(z: &[F]) -> F {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<F>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest `|analytic - fd| / max(|analytic|, |fd|, 1e-12)`.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped some hidden unit
    /// across the activation kink.
    pub excluded: usize,
}

impl Mlp<f64> {
    fn activation_pattern(cache: &ForwardCache<f64>) -> Vec<bool> {
        let hidden = cache.preactivations.len() - 1;
        cache.preactivations[..hidden]
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|&z| z > 0.0))
            .collect()
    }

    /// Compares analytic gradients with central finite differences of step
    /// `eps` on up to `max_coords` randomly chosen parameters (all of them if
    /// there are fewer). For a loss of order 1, `eps ≈ 3e-5` balances
    /// truncation against roundoff.
    pub fn grad_check(&self, batch: &Batch<f64>, eps: f64, max_coords: usize, rng: &mut SeededRng) -> Result<GradCheckReport> {
        let cache = self.forward(batch)?;
        let grads = self.backward(&cache, batch, false)?.full;
        let pattern = Self::activation_pattern(&cache);
        let mut coords: Vec<(usize, usize)> = self
            .groups
            .iter()
            .enumerate()
            .flat_map(|(g, p)| (0..p.len()).map(move |i| (g, i)))
            .collect();
        if coords.len() > max_coords {
            rng.shuffle(&mut coords);
            coords.truncate(max_coords);
        }
        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            checked: 0,
            excluded: 0,
        };
        let mut probe = self.clone();
        for (g, i) in coords {
            let base = self.groups[g].values()[i];
            let mut eval = |v: f64| -> Result<(f64, bool)> {
                probe.groups_mut()[g].values_mut()[i] = v;
                let c = probe.forward(batch)?;
                Ok((c.loss, Self::activation_pattern(&c) == pattern))
            };
            let (lp, same_p) = eval(base + eps)?;
            let (lm, same_m) = eval(base - eps)?;
            probe.groups_mut()[g].values_mut()[i] = base;
            if !(same_p && same_m) {
                report.excluded += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            let a = grads[g][i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
        Ok(report)
    }
}
