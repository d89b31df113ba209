//! Closed-form momentum magnitudes for uncorrelated zero-mean gradients.
//!
//! For gradients that are independent across steps with `E[g] = 0` and
//! `E[g²] = σ²`, a heavy-ball EMA started from zero has
//! `E[m_t²] = (1 - β^{2t}) (1 - β) / (1 + β) σ²`. The sign-based optimizers
//! scale their fixed-size steps by the square root of these factors so that
//! their update norm matches AdamW's on a random walk.

use crate::error::{out_of_range, Result};
use crate::scalar::Scalar;

fn check_beta<F: Scalar>(beta: F) -> Result<()> {
    if !(beta >= F::zero() && beta < F::one()) {
        return Err(out_of_range("beta", beta.to_f64_lossless(), "[0, 1)"));
    }
    Ok(())
}

#[inline]
fn powi<F: Scalar>(x: F, n: u64) -> F {
    // powi takes i32; large step counts saturate harmlessly since |x| < 1
    x.powi(n.min(i32::MAX as u64) as i32)
}

/// `E[m_t²] / σ²` for heavy-ball momentum after `t` steps (`None` = steady state).
pub fn momentum_second_moment<F: Scalar>(beta: F, t: Option<u64>) -> Result<F> {
    check_beta(beta)?;
    let one = F::one();
    let steady = (one - beta) / (one + beta);
    Ok(match t {
        None => steady,
        Some(t) => (one - powi(beta, 2 * t)) * steady,
    })
}

/// Squared-norm amplification of bias-corrected momentum relative to the
/// steady state: `(1 + β^t) / (1 - β^t)`.
pub fn bias_amplification_sq<F: Scalar>(beta: F, t: u64) -> Result<F> {
    check_beta(beta)?;
    if t == 0 {
        return Err(out_of_range("t", 0.0, "[1, inf)"));
    }
    if beta == F::zero() {
        return Ok(F::one());
    }
    let bt = powi(beta, t);
    Ok((F::one() + bt) / (F::one() - bt))
}

/// Update scaling factor `γ` of the sign-based optimizers.
///
/// Without `inverse_correction` (or with `t = None`) the steady-state values
/// are returned: `√((1-β)/(1+β))` for heavy-ball and
/// `√((1-β²)² + β⁴ (1-β)/(1+β))` for Nesterov momentum. With the inverse
/// correction the time-varying forms shrink early steps to the size a
/// random-gradient EMA would have at step `t`.
pub fn momentum_scale<F: Scalar>(
    beta: F,
    nesterov: bool,
    t: Option<u64>,
    inverse_correction: bool,
) -> Result<F> {
    check_beta(beta)?;
    if t == Some(0) {
        return Err(out_of_range("t", 0.0, "[1, inf)"));
    }
    let one = F::one();
    let t = if inverse_correction { t } else { None };
    let ratio = (one - beta) / (one + beta);
    let sq = if nesterov {
        let b2 = beta * beta;
        let fresh = (one - b2) * (one - b2);
        let carried = match t {
            None => one,
            // the carried-over momentum is one step older than the fresh gradient
            Some(t) => one - powi(beta, 2 * t - 2),
        };
        fresh + carried * b2 * b2 * ratio
    } else {
        match t {
            None => ratio,
            Some(t) => (one - powi(beta, 2 * t)) * ratio,
        }
    };
    Ok(sq.sqrt())
}
