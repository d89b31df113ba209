//! Per-group update kernels. Each kernel reads the current values and the
//! gradient, advances the optimizer buffers, and writes the new values into
//! `out`. The pre-decay update norm is returned for logging.

use crate::error::{out_of_range, Error, Result};
use crate::linalg::{norm, sign};
use crate::scalar::Scalar;

pub(crate) struct AdamwHyper<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    pub bias_correct_m: bool,
}

/// One AdamW step:
/// `θ ← (1 - ηλ) θ - η m̂ / (√v̂ + ε)`.
///
/// With `eps = 0` and a coordinate whose gradient history is all zero, the
/// update for that coordinate is 0 rather than 0/0.
pub(crate) fn adamw<F: Scalar>(
    values: &[F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    lr: F,
    h: &AdamwHyper<F>,
    out: &mut [F],
) -> F {
    let one = F::one();
    let tt = t.min(i32::MAX as u64) as i32;
    let m_corr = if h.bias_correct_m {
        one / (one - h.beta1.powi(tt))
    } else {
        one
    };
    let v_corr = one / (one - h.beta2.powi(tt));
    let decay = one - lr * h.weight_decay;
    let mut upd_sq = F::zero();
    for i in 0..values.len() {
        let g = grad[i];
        m[i] = h.beta1 * m[i] + (one - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (one - h.beta2) * g * g;
        let m_hat = m[i] * m_corr;
        let denom = (v[i] * v_corr).sqrt() + h.eps;
        let step = if denom == F::zero() {
            F::zero()
        } else {
            lr * m_hat / denom
        };
        upd_sq += step * step;
        out[i] = decay * values[i] - step;
    }
    upd_sq.sqrt()
}

/// Advances the momentum buffer and writes the (unsigned) update direction:
/// `m_t` for heavy-ball, `β m_t + (1-β) g_t` for Nesterov.
pub(crate) fn lion_direction<F: Scalar>(
    grad: &[F],
    m: &mut [F],
    beta: F,
    nesterov: bool,
    dir: &mut [F],
) {
    let keep = F::one() - beta;
    for i in 0..grad.len() {
        m[i] = beta * m[i] + keep * grad[i];
        dir[i] = if nesterov {
            beta * m[i] + keep * grad[i]
        } else {
            m[i]
        };
    }
}

/// LionA update from an already computed direction:
/// `θ ← (1 - ηλ) θ - η γ sign(u)`.
pub(crate) fn liona_apply<F: Scalar>(
    values: &[F],
    dir: &[F],
    lr: F,
    gamma: F,
    weight_decay: F,
    out: &mut [F],
) -> F {
    let decay = F::one() - lr * weight_decay;
    let step = lr * gamma;
    let mut nonzero = 0usize;
    for i in 0..values.len() {
        let s = sign(dir[i]);
        if s != F::zero() {
            nonzero += 1;
        }
        out[i] = decay * values[i] - step * s;
    }
    step * F::from_count(nonzero).sqrt()
}

/// LionAR update of the neuron rows of one matrix. Each row moves by
/// `(η/η_max) √(2 η_max λ) γ (‖θ₀‖/√C) sign(u)` and is then projected back
/// to its initial norm. Returns the norm of the pre-projection update.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lionar_rows<F: Scalar>(
    group: &str,
    values: &[F],
    dir: &[F],
    init_norms: &[F],
    fan_in: usize,
    lr: F,
    lr_max: F,
    gamma: F,
    weight_decay: F,
    out: &mut [F],
) -> Result<F> {
    let two = F::lit(2.0);
    let rel = lr / lr_max * (two * lr_max * weight_decay).sqrt() * gamma;
    let sqrt_c = F::from_count(fan_in).sqrt();
    let mut upd_sq = F::zero();
    for (r, &n0) in init_norms.iter().enumerate() {
        let span = r * fan_in..(r + 1) * fan_in;
        let step = rel * n0 / sqrt_c;
        let (src, u, dst) = (&values[span.clone()], &dir[span.clone()], &mut out[span]);
        for i in 0..fan_in {
            let s = step * sign(u[i]);
            upd_sq += s * s;
            dst[i] = src[i] - s;
        }
        let n = norm(dst);
        if n == F::zero() || !n.is_finite() {
            return Err(Error::DegenerateProjection {
                group: group.to_string(),
                row: r,
            });
        }
        let k = n0 / n;
        for x in dst.iter_mut() {
            *x *= k;
        }
    }
    Ok(upd_sq.sqrt())
}

/// Normalized gradient descent `w - η g / √E[‖g‖²]`.
pub fn normalized_gd_step<F: Scalar>(w: &[F], grad: &[F], grad_power: F, lr: F) -> Result<Vec<F>> {
    if w.len() != grad.len() {
        return Err(Error::ShapeMismatch {
            what: "normalized_gd gradient".into(),
            expected: w.len(),
            got: grad.len(),
        });
    }
    if !(grad_power > F::zero()) {
        return Err(out_of_range(
            "grad_power_estimate",
            grad_power.to_f64_lossless(),
            "(0, inf)",
        ));
    }
    let k = lr / grad_power.sqrt();
    Ok(w.iter().zip(grad).map(|(&x, &g)| x - k * g).collect())
}
