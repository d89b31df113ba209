//! Gradient signal/noise statistics.
//!
//! * [`estimate_snr`] turns the mean gradients of `A` micro-batches of size
//!   `M` into signal power `P_S`, per-example noise power `P_N` and their
//!   ratio `φ`.
//! * [`rrc_rho`] is the factor by which a batch of size `B` inflates the
//!   expected relative representation change of a fan-in `C` neuron relative
//!   to the pure-noise, infinitely wide case; [`RrcCorrectionState`] turns it
//!   into an update scale `√EMA(1/ρ)`.
//! * [`alignment_metrics`] measures how the carried-over momentum lines up
//!   with the fresh gradient.
//!
//! `φ = +∞` (zero measured noise) is represented by `F::infinity()`.

use crate::error::{out_of_range, Error, Result};
use crate::linalg::{cosine_between, dot, sum_sq};
use crate::scalar::Scalar;

/// Mean gradients of `A ≥ 2` equally sized micro-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroBatchGrads<F> {
    grads: Vec<Vec<F>>,
    micro_size: usize,
}

impl<F: Scalar> MicroBatchGrads<F> {
    pub fn new(grads: Vec<Vec<F>>, micro_size: usize) -> Result<Self> {
        if grads.len() < 2 {
            return Err(out_of_range("A (micro-batch count)", grads.len() as f64, "[2, inf)"));
        }
        if micro_size == 0 {
            return Err(out_of_range("M (micro-batch size)", 0.0, "[1, inf)"));
        }
        let n = grads[0].len();
        if let Some(bad) = grads.iter().find(|g| g.len() != n) {
            return Err(Error::ShapeMismatch {
                what: "micro-batch gradient length".into(),
                expected: n,
                got: bad.len(),
            });
        }
        Ok(Self { grads, micro_size })
    }

    pub fn count(&self) -> usize {
        self.grads.len()
    }

    pub fn micro_size(&self) -> usize {
        self.micro_size
    }

    pub fn grads(&self) -> &[Vec<F>] {
        &self.grads
    }

    /// Full-batch gradient `g = (1/A) Σ g_m`.
    pub fn mean(&self) -> Vec<F> {
        let a = F::from_count(self.grads.len());
        let mut out = vec![F::zero(); self.grads[0].len()];
        for g in &self.grads {
            for (o, &x) in out.iter_mut().zip(g) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|x| *x /= a);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrEstimate<F> {
    /// Estimate of `‖ḡ‖²`, clamped to be nonnegative.
    pub signal_power: F,
    /// Estimate of the per-example noise power `E[‖g̃_b‖²]`.
    pub noise_power: F,
    /// `P_S / P_N`; `+∞` when `P_N = 0 < P_S`, `0` when both vanish.
    pub phi: F,
}

/// ```text
/// P_N = A/(A-1) · M · 1ᵀ((1/A) Σ g_m² - g²)
/// P_S = 1ᵀ g² - P_N / (A M)
/// φ   = P_S / P_N
/// ```
/// The spread term is evaluated as `(1/A) Σ (g_m - g)²`, which is the same
/// quantity without the cancellation.
pub fn estimate_snr<F: Scalar>(micro: &MicroBatchGrads<F>) -> SnrEstimate<F> {
    let a = micro.count();
    let af = F::from_count(a);
    let mf = F::from_count(micro.micro_size());
    let g = micro.mean();
    let mut spread = F::zero();
    for gm in micro.grads() {
        for (&x, &mu) in gm.iter().zip(&g) {
            spread += (x - mu) * (x - mu);
        }
    }
    spread /= af;
    let noise = af / (af - F::one()) * mf * spread;
    let signal = (sum_sq(&g) - noise / (af * mf)).max(F::zero());
    let phi = if noise > F::zero() {
        signal / noise
    } else if signal > F::zero() {
        F::infinity()
    } else {
        F::zero()
    };
    SnrEstimate {
        signal_power: signal,
        noise_power: noise,
        phi,
    }
}

fn check_rho_args<F: Scalar>(phi: F, batch: usize, fan_in: usize) -> Result<()> {
    if batch == 0 {
        return Err(out_of_range("B", 0.0, "[1, inf)"));
    }
    if fan_in == 0 {
        return Err(out_of_range("C", 0.0, "[1, inf)"));
    }
    if phi.is_nan() || phi < F::zero() {
        return Err(out_of_range("phi", phi.to_f64_lossless(), "[0, inf]"));
    }
    Ok(())
}

/// The bracketed sum of the representation-change expression:
/// `(φ+1) + (B-1)/C + (B-1)² φ/(φ+1) (φ + 1/C) + 2(B-1)φ`.
fn rrc_bracket<F: Scalar>(phi: F, b: F, c: F) -> F {
    let one = F::one();
    let bm1 = b - one;
    (phi + one) + bm1 / c + bm1 * bm1 * phi / (phi + one) * (phi + one / c) + F::lit(2.0) * bm1 * phi
}

/// ρ before clamping. `φ = ∞` is returned as `+∞`.
pub fn rrc_rho_unclamped<F: Scalar>(phi: F, batch: usize, fan_in: usize) -> Result<F> {
    check_rho_args(phi, batch, fan_in)?;
    if phi.is_infinite() {
        return Ok(F::infinity());
    }
    let b = F::from_count(batch);
    let c = F::from_count(fan_in);
    Ok(rrc_bracket(phi, b, c) / (b * (F::one() + phi)))
}

/// `ρ = bracket / (B (1 + φ))`, clamped to `[1, B]`; `φ = ∞` maps to `B`.
pub fn rrc_rho<F: Scalar>(phi: F, batch: usize, fan_in: usize) -> Result<F> {
    let raw = rrc_rho_unclamped(phi, batch, fan_in)?;
    let b = F::from_count(batch);
    Ok(raw.max(F::one()).min(b))
}

/// Predicted `E[(Δy_b)²] / E[y_b²]` for one normalized-GD step of size `eta`
/// on a neuron with fan-in `C`, weight norm² `w_norm_sq` and batch size `B`:
///
/// ```text
/// η² C / (B² ‖w‖²) · 1/(φ + 1/B) · bracket(φ, B, C)
/// ```
pub fn expected_rrc_sq<F: Scalar>(eta: F, batch: usize, fan_in: usize, phi: F, w_norm_sq: F) -> Result<F> {
    check_rho_args(phi, batch, fan_in)?;
    if !(w_norm_sq > F::zero()) {
        return Err(out_of_range("w_norm_sq", w_norm_sq.to_f64_lossless(), "(0, inf)"));
    }
    if phi.is_infinite() {
        return Err(out_of_range("phi", f64::INFINITY, "[0, inf)"));
    }
    let b = F::from_count(batch);
    let c = F::from_count(fan_in);
    Ok(eta * eta * c / (b * b * w_norm_sq) / (phi + F::one() / b) * rrc_bracket(phi, b, c))
}

/// Running `EMA(1/ρ)` for one parameter group. The EMA starts at the first
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RrcCorrectionState<F> {
    beta: F,
    batch_size: usize,
    ema_inv_rho: Option<F>,
}

impl<F: Scalar> RrcCorrectionState<F> {
    pub fn new(beta: F, batch_size: usize) -> Result<Self> {
        if !(beta >= F::zero() && beta < F::one()) {
            return Err(out_of_range("beta", beta.to_f64_lossless(), "[0, 1)"));
        }
        if batch_size == 0 {
            return Err(out_of_range("B", 0.0, "[1, inf)"));
        }
        Ok(Self {
            beta,
            batch_size,
            ema_inv_rho: None,
        })
    }

    pub fn ema(&self) -> Option<F> {
        self.ema_inv_rho
    }

    /// Folds in a new `ρ ∈ [1, B]` and returns the update scale `√EMA(1/ρ)`.
    pub fn update_scale(&mut self, rho: F) -> Result<F> {
        let b = F::from_count(self.batch_size);
        if !(rho >= F::one() && rho <= b) {
            return Err(out_of_range("rho", rho.to_f64_lossless(), "[1, B]"));
        }
        let inv = F::one() / rho;
        let next = match self.ema_inv_rho {
            None => inv,
            Some(prev) => self.beta * prev + (F::one() - self.beta) * inv,
        };
        // keep rounding from nudging the scale outside [1/√B, 1]
        let next = next.max(F::one() / b).min(F::one());
        self.ema_inv_rho = Some(next);
        Ok(next.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment<F> {
    /// Cosine between `β m_{t-1}` and `g_t`; 0 while the momentum is zero.
    pub cosine: F,
    /// `⟨β m_{t-1}, g_t⟩ / ⟨g_t, g_t⟩`; negative means the momentum cancels
    /// part of the gradient.
    pub cancel_ratio: F,
}

pub fn alignment_metrics<F: Scalar>(m_prev: &[F], grad: &[F], beta: F) -> Result<Alignment<F>> {
    if m_prev.len() != grad.len() {
        return Err(Error::ShapeMismatch {
            what: "momentum vs gradient".into(),
            expected: grad.len(),
            got: m_prev.len(),
        });
    }
    let gg = sum_sq(grad);
    if gg == F::zero() {
        return Err(Error::ZeroNorm("alignment_metrics gradient"));
    }
    let carried: Vec<F> = m_prev.iter().map(|&m| beta * m).collect();
    let cosine = if sum_sq(&carried) == F::zero() {
        F::zero()
    } else {
        cosine_between(&carried, grad)?
    };
    Ok(Alignment {
        cosine,
        cancel_ratio: dot(&carried, grad) / gg,
    })
}

/// Batch size `1/φ` beyond which square-root learning-rate scaling stops
/// holding. `φ = 0` gives `+∞`, `φ = ∞` gives 0.
pub fn critical_batch_size<F: Scalar>(phi: F) -> Result<F> {
    if phi.is_nan() || phi < F::zero() {
        return Err(out_of_range("phi", phi.to_f64_lossless(), "[0, inf]"));
    }
    if phi == F::zero() {
        return Ok(F::infinity());
    }
    Ok(F::one() / phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snr(grads: Vec<Vec<f64>>, m: usize) -> SnrEstimate<f64> {
        estimate_snr(&MicroBatchGrads::new(grads, m).unwrap())
    }

    #[test]
    fn snr_hand_examples() {
        let e = snr(vec![vec![1.0], vec![-1.0]], 1);
        assert_eq!((e.noise_power, e.signal_power, e.phi), (2.0, 0.0, 0.0));
        let e = snr(vec![vec![3.0], vec![3.0]], 1);
        assert_eq!(e.noise_power, 0.0);
        assert_eq!(e.signal_power, 9.0);
        assert!(e.phi.is_infinite());
        let e = snr(vec![vec![2.0], vec![0.0]], 1);
        assert_eq!((e.noise_power, e.signal_power, e.phi), (2.0, 0.0, 0.0));
        let e = snr(vec![vec![0.0, 0.0]; 3], 4);
        assert_eq!((e.noise_power, e.signal_power, e.phi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn snr_matches_textbook_form() {
        // P_N from the raw "mean of squares minus square of mean" expression
        let grads = vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.0, 1.0], vec![-0.5, 1.0, 3.0]];
        let (a, m) = (3.0, 5.0);
        let mean: Vec<f64> = (0..3).map(|i| grads.iter().map(|g| g[i]).sum::<f64>() / a).collect();
        let msq: f64 = (0..3)
            .map(|i| grads.iter().map(|g| g[i] * g[i]).sum::<f64>() / a - mean[i] * mean[i])
            .sum();
        let pn = a / (a - 1.0) * m * msq;
        let ps = mean.iter().map(|x| x * x).sum::<f64>() - pn / (a * m);
        let e = snr(grads, 5);
        assert!((e.noise_power - pn).abs() < 1e-12);
        assert!((e.signal_power - ps.max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn micro_batch_validation() {
        assert!(MicroBatchGrads::new(vec![vec![1.0f64]], 1).is_err());
        assert!(MicroBatchGrads::new(vec![vec![1.0f64], vec![1.0, 2.0]], 1).is_err());
        assert!(MicroBatchGrads::new(vec![vec![1.0f64], vec![1.0]], 0).is_err());
    }

    #[test]
    fn rho_examples() {
        let raw: f64 = rrc_rho_unclamped(1.0, 4, 8).unwrap();
        assert!((raw - 13.4375 / 8.0).abs() < 1e-15);
        assert!((raw - 1.679688).abs() < 1e-6);
        assert_eq!(rrc_rho(1.0f64, 4, 8).unwrap(), raw);
        let raw0: f64 = rrc_rho_unclamped(0.0, 4, 8).unwrap();
        assert!((raw0 - 0.34375).abs() < 1e-15);
        assert_eq!(rrc_rho(0.0f64, 4, 8).unwrap(), 1.0);
        assert_eq!(rrc_rho(f64::INFINITY, 4, 8).unwrap(), 4.0);
        assert!((rrc_rho(1e12f64, 4, 8).unwrap() - 4.0).abs() < 1e-9);
        assert!(rrc_rho(1.0f64, 0, 8).is_err());
        assert!(rrc_rho(1.0f64, 4, 0).is_err());
        assert!(rrc_rho(-1.0f64, 4, 8).is_err());
    }

    #[test]
    fn rho_is_one_at_unit_batch() {
        for phi in [0.0, 0.01, 0.5, 3.0, 1e6] {
            for c in [1, 7, 1000] {
                let raw: f64 = rrc_rho_unclamped(phi, 1, c).unwrap();
                assert!((raw - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expected_rrc_examples() {
        // B = 1 collapses to η² C / ‖w‖²
        for phi in [0.0, 0.1, 1.0, 10.0] {
            let v: f64 = expected_rrc_sq(0.1, 1, 8, phi, 2.0).unwrap();
            assert!((v - 0.01 * 8.0 / 2.0).abs() < 1e-15);
        }
        // φ = 0: η² C/(B ‖w‖²) (1 + (B-1)/C)
        let v: f64 = expected_rrc_sq(1.0, 4, 8, 0.0, 1.0).unwrap();
        assert!((v - 8.0 / 4.0 * (1.0 + 3.0 / 8.0)).abs() < 1e-12);
        assert!(expected_rrc_sq(1.0, 4, 8, f64::INFINITY, 1.0).is_err());
        assert!(expected_rrc_sq(1.0, 4, 8, 0.5, 0.0).is_err());
    }

    #[test]
    fn update_scale_examples() {
        let mut s = RrcCorrectionState::new(0.9f64, 8).unwrap();
        for _ in 0..10 {
            assert_eq!(s.update_scale(1.0).unwrap(), 1.0);
        }
        let mut s = RrcCorrectionState::new(0.9f64, 8).unwrap();
        assert!((s.update_scale(2.25).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let mut s = RrcCorrectionState::new(0.9f64, 8).unwrap();
        s.update_scale(1.0).unwrap();
        let mut last = 1.0;
        for _ in 0..400 {
            last = s.update_scale(4.0).unwrap();
        }
        assert!((last - 0.5).abs() < 1e-12);
        assert!(s.update_scale(0.5).is_err());
        assert!(s.update_scale(9.0).is_err());
    }

    #[test]
    fn alignment_examples() {
        let g = [1.0f64, -2.0, 0.5];
        let a = alignment_metrics(&g, &g, 1.0 - 1e-16).unwrap();
        assert!((a.cosine - 1.0).abs() < 1e-12 && (a.cancel_ratio - 1.0).abs() < 1e-12);
        let beta = 0.9;
        let m: Vec<f64> = g.iter().map(|x| -x / (2.0 * beta)).collect();
        let a = alignment_metrics(&m, &g, beta).unwrap();
        assert!((a.cancel_ratio + 0.5).abs() < 1e-12);
        assert!((a.cosine + 1.0).abs() < 1e-12);
        let a = alignment_metrics(&[2.0, 1.0, 0.0], &g, beta).unwrap();
        assert_eq!((a.cosine, a.cancel_ratio), (0.0, 0.0));
        let a = alignment_metrics(&[0.0; 3], &g, beta).unwrap();
        assert_eq!((a.cosine, a.cancel_ratio), (0.0, 0.0));
        assert!(alignment_metrics(&[1.0; 3], &[0.0; 3], beta).is_err());
    }

    #[test]
    fn critical_batch_examples() {
        assert!((critical_batch_size(0.01f64).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(critical_batch_size(1.0f64).unwrap(), 1.0);
        assert_eq!(critical_batch_size(f64::INFINITY).unwrap(), 0.0);
        assert!(critical_batch_size(0.0f64).unwrap().is_infinite());
        assert!(critical_batch_size(-1.0f64).is_err());
    }

    proptest! {
        #[test]
        fn rho_is_monotone_in_phi(b in 2usize..600, c in 1usize..2048) {
            let mut prev = 0.0f64;
            for k in 0..50 {
                let phi = 10f64.powf(-4.0 + 8.0 * k as f64 / 49.0);
                let r = rrc_rho(phi, b, c).unwrap();
                prop_assert!(r >= prev - 1e-12 * prev);
                prev = r;
            }
        }

        #[test]
        fn update_scale_stays_in_bounds(
            b in 1usize..500,
            beta in 0.0f64..0.999,
            rhos in prop::collection::vec(0.0f64..1.0, 1..50),
        ) {
            let mut s = RrcCorrectionState::new(beta, b).unwrap();
            let lo = 1.0 / (b as f64).sqrt();
            for u in rhos {
                let rho = 1.0 + u * (b as f64 - 1.0);
                let scale = s.update_scale(rho).unwrap();
                prop_assert!(scale >= lo - 1e-15 && scale <= 1.0);
            }
        }
    }
}
