//! Synthetic gradient models and Monte Carlo oracles (f64 only).
//!
//! Every estimator splits its trials into a fixed number of chunks. Chunk `i`
//! draws from stream `i` of a seed taken from the caller's RNG, and chunk
//! results are reduced in index order. Results are therefore bitwise
//! reproducible whatever the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::angular_update;
use crate::error::{out_of_range, Error, Result};
use crate::gradstats::{estimate_snr, expected_rrc_sq, MicroBatchGrads};
use crate::linalg::{dot, norm, sum_sq};
use crate::optim::{Algorithm, Optimizer, OptimizerConfig, ParamGroup};
use crate::rng::SeededRng;

const CHUNKS: usize = 64;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    /// `|mean - target| ≤ max(rel_tol·|target|, 3σ)`.
    pub fn agrees(&self, target: f64, rel_tol: f64) -> bool {
        (self.mean - target).abs() <= (rel_tol * target.abs()).max(3.0 * self.std_err)
    }

    pub fn rel_err(&self, target: f64) -> f64 {
        (self.mean - target).abs() / target.abs()
    }
}

/// Running sums for a pair of per-trial statistics.
#[derive(Debug, Clone, Copy, Default)]
struct PairSums {
    n: usize,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl PairSums {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.yy += y * y;
        self.xy += x * y;
    }

    fn merge(mut self, o: &PairSums) -> Self {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
        self
    }

    fn mean_x(&self) -> McEstimate {
        let n = self.n as f64;
        let m = self.x / n;
        let var = ((self.xx / n - m * m) * n / (n - 1.0)).max(0.0);
        McEstimate {
            mean: m,
            std_err: (var / n).sqrt(),
            n: self.n,
        }
    }

    /// `mean(x)/mean(y)` with a delta-method standard error.
    fn ratio(&self) -> McEstimate {
        let n = self.n as f64;
        let (mx, my) = (self.x / n, self.y / n);
        let vx = (self.xx / n - mx * mx) * n / (n - 1.0);
        let vy = (self.yy / n - my * my) * n / (n - 1.0);
        let cxy = (self.xy / n - mx * my) * n / (n - 1.0);
        let r = mx / my;
        let var = (vx - 2.0 * r * cxy + r * r * vy) / (my * my) / n;
        McEstimate {
            mean: r,
            std_err: var.max(0.0).sqrt(),
            n: self.n,
        }
    }
}

/// Splits `trials` over [`CHUNKS`] independent streams and reduces in order.
fn chunked<F>(trials: usize, rng: &mut SeededRng, f: F) -> PairSums
where
    F: Fn(&mut SeededRng, usize) -> PairSums + Sync,
{
    let seed = rng.next_seed();
    let chunks = CHUNKS.min(trials);
    let parts: Vec<PairSums> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let size = trials / chunks + usize::from(i < trials % chunks);
            f(&mut SeededRng::new(seed, i as u64), size)
        })
        .collect();
    parts.iter().fold(PairSums::default(), |acc, p| acc.merge(p))
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(out_of_range("trials", trials as f64, "[2, inf)"));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(out_of_range("beta", beta, "[0, 1)"));
    }
    Ok(())
}

/// Per-sample gradients `g_b = ḡ + g̃_b` in `C` dimensions. `ḡ` points along
/// the first axis with `‖ḡ‖² = signal_power`; `g̃_b` has IID `N(0, noise_power/C)`
/// components, so `E‖g̃_b‖² = noise_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientModel {
    dim: usize,
    batch: usize,
    signal_power: f64,
    noise_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl GradientModel {
    pub fn new(dim: usize, batch: usize, signal_power: f64, noise_power: f64) -> Result<Self> {
        if dim == 0 {
            return Err(out_of_range("C", 0.0, "[1, inf)"));
        }
        if batch == 0 {
            return Err(out_of_range("B", 0.0, "[1, inf)"));
        }
        if !(signal_power >= 0.0 && signal_power.is_finite()) {
            return Err(out_of_range("signal_power", signal_power, "[0, inf)"));
        }
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(out_of_range("noise_power", noise_power, "[0, inf)"));
        }
        Ok(Self {
            dim,
            batch,
            signal_power,
            noise_power,
        })
    }

    /// Model with the given `φ` and unit noise power.
    pub fn with_phi(dim: usize, batch: usize, phi: f64) -> Result<Self> {
        Self::new(dim, batch, phi, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn signal_power(&self) -> f64 {
        self.signal_power
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    /// `‖ḡ‖² / E‖g̃_b‖²`, `+∞` for a noiseless nonzero signal.
    pub fn phi(&self) -> f64 {
        if self.noise_power > 0.0 {
            self.signal_power / self.noise_power
        } else if self.signal_power > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// `E‖g‖² = ‖ḡ‖² + E‖g̃‖²/B` for the batch mean `g`.
    pub fn expected_batch_grad_power(&self) -> f64 {
        self.signal_power + self.noise_power / self.batch as f64
    }

    pub fn sample_one(&self, rng: &mut SeededRng, out: &mut [f64]) {
        let sd = (self.noise_power / self.dim as f64).sqrt();
        rng.fill_normal(out, sd);
        out[0] += self.signal_power.sqrt();
    }

    pub fn sample_batch(&self, rng: &mut SeededRng) -> SampledBatch {
        let mut mean = vec![0.0; self.dim];
        let samples: Vec<Vec<f64>> = (0..self.batch)
            .map(|_| {
                let mut g = vec![0.0; self.dim];
                self.sample_one(rng, &mut g);
                mean.iter_mut().zip(&g).for_each(|(m, x)| *m += x);
                g
            })
            .collect();
        let b = self.batch as f64;
        mean.iter_mut().for_each(|m| *m /= b);
        SampledBatch { samples, mean }
    }

    /// Draws one batch and groups it into `micro_count` consecutive
    /// micro-batch means.
    pub fn sample_micro_batches(&self, micro_count: usize, rng: &mut SeededRng) -> Result<MicroBatchGrads<f64>> {
        if micro_count == 0 || !self.batch.is_multiple_of(micro_count) {
            return Err(Error::Config(format!(
                "batch size {} is not divisible by micro-batch count {micro_count}",
                self.batch
            )));
        }
        let m = self.batch / micro_count;
        let batch = self.sample_batch(rng);
        let grads = batch
            .samples
            .chunks(m)
            .map(|chunk| {
                let mut g = vec![0.0; self.dim];
                for s in chunk {
                    g.iter_mut().zip(s).for_each(|(a, x)| *a += x);
                }
                g.iter_mut().for_each(|a| *a /= m as f64);
                g
            })
            .collect();
        MicroBatchGrads::new(grads, m)
    }
}

/// Estimate of `E[m_t²]/σ²` for a heavy-ball EMA of IID `N(0, 1)` gradients,
/// from `trials` runs of a `dims`-dimensional momentum buffer.
pub fn mc_momentum_norm(beta: f64, t: u64, dims: usize, trials: usize, rng: &mut SeededRng) -> Result<McEstimate> {
    check_beta(beta)?;
    check_trials(trials)?;
    if t == 0 || dims == 0 {
        return Err(out_of_range("t/dims", 0.0, "[1, inf)"));
    }
    let sums = chunked(trials, rng, |r, n| {
        let mut acc = PairSums::default();
        let mut m = vec![0.0; dims];
        for _ in 0..n {
            m.iter_mut().for_each(|x| *x = 0.0);
            for _ in 0..t {
                for x in m.iter_mut() {
                    *x = beta * *x + (1.0 - beta) * r.normal();
                }
            }
            acc.push(sum_sq(&m) / dims as f64, 0.0);
        }
        acc
    });
    Ok(sums.mean_x())
}

/// Number of steps after which `β^{2t}` is below `1e-12`.
fn steady_state_steps(beta: f64) -> u64 {
    if beta == 0.0 {
        1
    } else {
        (12.0 * std::f64::consts::LN_10 / (-2.0 * beta.ln())).ceil() as u64
    }
}

/// Estimate of `E‖m̂_t‖² / E‖m_∞‖²` where `m̂_t = m_t/(1-β^t)` is Adam's
/// bias-corrected momentum and `m_∞` is the same EMA long after start-up.
/// Both are measured on the same simulated gradient streams.
pub fn mc_bias_amplification(beta: f64, t: u64, dims: usize, trials: usize, rng: &mut SeededRng) -> Result<McEstimate> {
    check_beta(beta)?;
    check_trials(trials)?;
    if t == 0 || dims == 0 {
        return Err(out_of_range("t/dims", 0.0, "[1, inf)"));
    }
    let horizon = steady_state_steps(beta).max(t + 1);
    let correction = 1.0 - beta.powi(t as i32);
    let sums = chunked(trials, rng, |r, n| {
        let mut acc = PairSums::default();
        let mut m = vec![0.0; dims];
        for _ in 0..n {
            m.iter_mut().for_each(|x| *x = 0.0);
            let mut early = 0.0;
            for step in 1..=horizon {
                for x in m.iter_mut() {
                    *x = beta * *x + (1.0 - beta) * r.normal();
                }
                if step == t {
                    early = sum_sq(&m) / (correction * correction);
                }
            }
            acc.push(early / dims as f64, sum_sq(&m) / dims as f64);
        }
        acc
    });
    Ok(sums.ratio())
}

/// Element distribution for [`mc_lemma_l1`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementDist {
    Normal { mean: f64, std: f64 },
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ElementDist {
    pub fn standard_normal() -> Self {
        ElementDist::Normal { mean: 0.0, std: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ElementDist::Normal { mean, .. } => mean,
            ElementDist::Constant { value } => value,
            ElementDist::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            ElementDist::Normal { mean, std } => mean * mean + std * std,
            ElementDist::Constant { value } => value * value,
            ElementDist::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        match *self {
            ElementDist::Normal { mean, std } => mean + std * rng.normal(),
            ElementDist::Constant { value } => value,
            ElementDist::Uniform { lo, hi } => rng.uniform_range(lo, hi),
        }
    }
}

/// Estimate of `E⟨a,b⟩² · C / (E‖a‖² E‖b‖²)` for independent `a`, `b` with
/// IID elements; the lemma predicts 1 whenever one side is zero-mean. The
/// norms use the distributions' exact second moments.
pub fn mc_lemma_l1(c: usize, a: ElementDist, b: ElementDist, trials: usize, rng: &mut SeededRng) -> Result<McEstimate> {
    check_trials(trials)?;
    if c == 0 {
        return Err(out_of_range("C", 0.0, "[1, inf)"));
    }
    if a.mean() != 0.0 && b.mean() != 0.0 {
        return Err(Error::Config("mc_lemma_l1 needs at least one zero-mean distribution".into()));
    }
    let scale = c as f64 / (c as f64 * a.second_moment() * c as f64 * b.second_moment());
    let sums = chunked(trials, rng, |r, n| {
        let mut acc = PairSums::default();
        for _ in 0..n {
            let mut s = 0.0;
            for _ in 0..c {
                s += a.sample(r) * b.sample(r);
            }
            acc.push(s * s * scale, 0.0);
        }
        acc
    });
    Ok(sums.mean_x())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRrc {
    /// `mean (Δwᵀx_b)² / mean (wᵀx_b)²`.
    pub ratio: McEstimate,
    /// Empirical `E‖g‖²` of the batch-mean gradient.
    pub grad_power: McEstimate,
    /// `‖ḡ‖² + E‖g̃‖²/B`.
    pub grad_power_target: f64,
    /// Closed-form prediction at `‖w‖² = C·w_std²`.
    pub closed_form: f64,
}

/// Brute-force `E[(Δy_b)²]/E[y_b²]` for one normalized-GD step
/// `Δw = -η g/√E‖g‖²` (exact model power) on a neuron with IID `N(0, w_std²)`
/// weights, with each input `x_b` a unit vector parallel to its sample
/// gradient `g_b`. Every sample of every trial contributes.
pub fn mc_rrc(model: &GradientModel, eta: f64, w_std: f64, trials: usize, rng: &mut SeededRng) -> Result<McRrc> {
    check_trials(trials)?;
    if !(w_std > 0.0) {
        return Err(out_of_range("w_std", w_std, "(0, inf)"));
    }
    let (c, bsz) = (model.dim(), model.batch());
    let power = model.expected_batch_grad_power();
    if power == 0.0 {
        return Err(Error::ZeroNorm("mc_rrc gradient power"));
    }
    let step = eta / power.sqrt();
    let ratio_sums = chunked(trials, rng, |r, n| {
        let mut acc = PairSums::default();
        let mut w = vec![0.0; c];
        for _ in 0..n {
            let batch = model.sample_batch(r);
            r.fill_normal(&mut w, w_std);
            let (mut num, mut den) = (0.0, 0.0);
            for gb in &batch.samples {
                let ng = norm(gb);
                if ng == 0.0 {
                    continue;
                }
                // x_b = g_b/‖g_b‖, Δw = -step·g
                let dy = -step * dot(&batch.mean, gb) / ng;
                let y = dot(&w, gb) / ng;
                num += dy * dy;
                den += y * y;
            }
            acc.push(num / bsz as f64, den / bsz as f64);
        }
        acc
    });
    let power_sums = chunked(trials, rng, |r, n| {
        let mut acc = PairSums::default();
        for _ in 0..n {
            acc.push(sum_sq(&model.sample_batch(r).mean), 0.0);
        }
        acc
    });
    let closed_form = expected_rrc_sq(eta, bsz, c, model.phi(), c as f64 * w_std * w_std)?;
    Ok(McRrc {
        ratio: ratio_sums.ratio(),
        grad_power: power_sums.mean_x(),
        grad_power_target: power,
        closed_form,
    })
}

/// `∂y/∂w` for the weight-normalized neuron `y = ⟨w/‖w‖, x⟩`:
/// `(x - (⟨w,x⟩/‖w‖²) w) / ‖w‖`.
pub fn weight_normalized_grad(w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let wn2 = sum_sq(w);
    if wn2 == 0.0 {
        return Err(Error::ZeroNorm("weight_normalized_grad"));
    }
    let k = dot(w, x) / wn2;
    let wn = wn2.sqrt();
    Ok(w.iter().zip(x).map(|(&wi, &xi)| (xi - k * wi) / wn).collect())
}

/// `‖∇(c·w)‖ / ‖∇w‖` for a random weight-normalized neuron of fan-in `dim`.
pub fn scale_invariance_check(c: f64, dim: usize, rng: &mut SeededRng) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(out_of_range("c", c, "(0, inf)"));
    }
    if dim < 2 {
        return Err(out_of_range("C", dim as f64, "[2, inf)"));
    }
    let w = rng.normal_vec(dim, 1.0);
    let x = rng.normal_vec(dim, 1.0);
    let cw: Vec<f64> = w.iter().map(|v| c * v).collect();
    let base = norm(&weight_normalized_grad(&w, &x)?);
    if base == 0.0 {
        return Err(Error::ZeroNorm("scale_invariance_check gradient"));
    }
    Ok(norm(&weight_normalized_grad(&cw, &x)?) / base)
}

fn lion_config(wd: f64) -> OptimizerConfig {
    OptimizerConfig {
        weight_decay: wd,
        ..OptimizerConfig::new(Algorithm::Liona)
    }
}

/// Runs LionA (no weight decay) on the weight-normalized neuron from `w` and
/// from `c·w` with the same input stream, returning the per-step ratio
/// `angle(c·w run) / angle(w run)` averaged over `trials` random neurons.
/// Scale invariance predicts `1/c` for small steps.
pub fn mc_lion_angular_scaling(
    c: f64,
    dim: usize,
    eta: f64,
    steps: usize,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<McEstimate> {
    check_trials(trials)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(out_of_range("c", c, "(0, inf)"));
    }
    if steps == 0 {
        return Err(out_of_range("steps", 0.0, "[1, inf)"));
    }
    let seed = rng.next_seed();
    let run = |w0: &[f64], stream: u64| -> Result<f64> {
        let mut inputs = SeededRng::new(seed, stream);
        let mut groups = vec![ParamGroup::vector("w", w0.to_vec())];
        let mut opt = Optimizer::new(lion_config(0.0), &groups)?;
        let mut total = 0.0;
        for _ in 0..steps {
            let x = inputs.normal_vec(dim, 1.0);
            let g = weight_normalized_grad(groups[0].values(), &x)?;
            let before = groups[0].values().to_vec();
            opt.step(&mut groups, &[g], eta, eta)?;
            total += angular_update(&before, groups[0].values())?;
        }
        Ok(total / steps as f64)
    };
    let mut init = SeededRng::new(seed, u64::MAX);
    let starts: Vec<Vec<f64>> = (0..trials).map(|_| init.normal_vec(dim, 1.0)).collect();
    let ratios: Vec<f64> = starts
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let cw: Vec<f64> = w.iter().map(|v| c * v).collect();
            Ok(run(&cw, i as u64)? / run(w, i as u64)?)
        })
        .collect::<Result<_>>()?;
    let mut acc = PairSums::default();
    ratios.iter().for_each(|&r| acc.push(r, 0.0));
    Ok(acc.mean_x())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LionarAngularRun {
    /// Mean per-row angular update over all steps and rows.
    pub mean_angle: f64,
    /// `arctan((η/η_max)·√(2 η_max λ)·γ)`.
    pub predicted: f64,
    /// Largest `|‖row‖ - ‖row_0‖|` seen over the run.
    pub max_norm_drift: f64,
}

/// LionAR on a `rows × dim` neuron matrix driven by IID `N(0, 1)` gradients at
/// a constant learning rate `eta ≤ eta_max`.
pub fn lionar_random_gradient_run(
    rows: usize,
    dim: usize,
    eta: f64,
    eta_max: f64,
    weight_decay: f64,
    steps: usize,
    rng: &mut SeededRng,
) -> Result<LionarAngularRun> {
    let config = OptimizerConfig {
        weight_decay,
        ..OptimizerConfig::new(Algorithm::Lionar)
    };
    let init = crate::linalg::Matrix::from_vec(rows, dim, rng.normal_vec(rows * dim, 1.0))?;
    let mut groups = vec![ParamGroup::matrix("w", init)?];
    let init_norms = groups[0].init_row_norms().to_vec();
    let mut opt = Optimizer::new(config, &groups)?;
    let gamma: f64 = crate::optim::momentum_scale(opt.beta(), false, None, false)?;
    let predicted = ((eta / eta_max) * (2.0 * eta_max * weight_decay).sqrt() * gamma).atan();
    let (mut total, mut count, mut drift) = (0.0, 0usize, 0.0f64);
    for _ in 0..steps {
        let before = groups[0].values().to_vec();
        let g = rng.normal_vec(rows * dim, 1.0);
        opt.step(&mut groups, &[g], eta, eta_max)?;
        for (r, &n0) in init_norms.iter().enumerate() {
            let row = groups[0].row(r);
            total += angular_update(&before[r * dim..(r + 1) * dim], row)?;
            drift = drift.max((norm(row) - n0).abs());
            count += 1;
        }
    }
    Ok(LionarAngularRun {
        mean_angle: total / count as f64,
        predicted,
        max_norm_drift: drift,
    })
}

/// `φ̂` from `repeats` independent batches of `micro_count × micro_size`
/// samples of a model with true `φ`.
pub fn snr_estimates(
    phi: f64,
    dim: usize,
    micro_count: usize,
    micro_size: usize,
    repeats: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let model = GradientModel::with_phi(dim, micro_count * micro_size, phi)?;
    (0..repeats)
        .map(|_| Ok(estimate_snr(&model.sample_micro_batches(micro_count, rng)?).phi))
        .collect()
}

/// Median of a nonempty slice without NaNs.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median of NaN"));
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
