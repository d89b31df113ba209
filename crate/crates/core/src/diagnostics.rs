//! Update-size and representation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine_between, norm, sum_sq, Matrix};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Angle in radians between `w_prev` and `w_next`, in `[0, π]`.
///
/// Equals `arccos` of the clamped cosine; evaluated as
/// `2·atan2(‖â − b̂‖, ‖â + b̂‖)`, which keeps full precision near 0 and π.
pub fn angular_update<F: Scalar>(w_prev: &[F], w_next: &[F]) -> Result<F> {
    // validates shapes and norms
    cosine_between(w_prev, w_next)?;
    let (na, nb) = (norm(w_prev), norm(w_next));
    let (mut diff, mut sum) = (F::zero(), F::zero());
    for (&a, &b) in w_prev.iter().zip(w_next) {
        let (ua, ub) = (a / na, b / nb);
        diff += (ua - ub) * (ua - ub);
        sum += (ua + ub) * (ua + ub);
    }
    Ok(F::lit(2.0) * diff.sqrt().atan2(sum.sqrt()))
}

/// Relative representation change `‖Δwᵀ X‖ / ‖wᵀ X‖` of one neuron on the
/// `B` input columns of `x` (shape `C × B`).
///
/// A vanishing denominator is reported as [`Error::ZeroNorm`]; callers that
/// log metrics should record it as missing rather than stop.
pub fn measure_rrc<F: Scalar>(w: &[F], delta_w: &[F], x: &Matrix<F>) -> Result<F> {
    if delta_w.len() != w.len() {
        return Err(Error::ShapeMismatch {
            what: "delta_w".into(),
            expected: w.len(),
            got: delta_w.len(),
        });
    }
    let y = x.t_matvec(w)?;
    let den = norm(&y);
    if den == F::zero() {
        return Err(Error::ZeroNorm("measure_rrc output"));
    }
    Ok(norm(&x.t_matvec(delta_w)?) / den)
}

/// Layer version of [`measure_rrc`]: `‖ΔW X‖_F / ‖W X‖_F` with neuron rows in
/// `w` and inputs as columns of `x`.
pub fn measure_layer_rrc<F: Scalar>(w: &Matrix<F>, delta_w: &Matrix<F>, x: &Matrix<F>) -> Result<F> {
    if delta_w.shape() != w.shape() {
        return Err(Error::ShapeMismatch {
            what: "delta_w elements".into(),
            expected: w.as_slice().len(),
            got: delta_w.as_slice().len(),
        });
    }
    let den = w.matmul(x)?.frobenius_sq();
    if den == F::zero() {
        return Err(Error::ZeroNorm("measure_layer_rrc output"));
    }
    Ok((delta_w.matmul(x)?.frobenius_sq() / den).sqrt())
}

/// Fraction of units (rows) whose preactivation is `≤ threshold` on every
/// sample (column).
pub fn dead_unit_fraction<F: Scalar>(preactivations: &Matrix<F>, threshold: F) -> Result<F> {
    let (units, samples) = preactivations.shape();
    if units == 0 || samples == 0 {
        return Err(Error::Empty("dead_unit_fraction preactivations"));
    }
    let dead = preactivations
        .row_iter()
        .filter(|r| r.iter().all(|&z| z <= threshold))
        .count();
    Ok(F::from_count(dead) / F::from_count(units))
}

const POWER_ITER_TOL: f64 = 1e-8;
const POWER_ITER_MAX: usize = 100_000;

/// Largest eigenvalue of `WᵀW` (that is `σ_max²`) by power iteration from a
/// fixed pseudo-random start.
pub fn top_singular_value_sq<F: Scalar>(w: &Matrix<F>) -> Result<F> {
    if w.frobenius_sq() == F::zero() {
        return Err(Error::ZeroNorm("top_singular_value_sq"));
    }
    let mut start = SeededRng::new(0x5eed0f5ca1e, 0);
    let mut v: Vec<F> = start.normal_vec(w.cols(), F::one());
    let mut lambda = F::zero();
    let tol = F::lit(POWER_ITER_TOL);
    for _ in 0..POWER_ITER_MAX {
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let wv = w.matvec(&v)?;
        let next = sum_sq(&wv);
        v = w.t_matvec(&wv)?;
        if norm(&v) == F::zero() {
            // start vector orthogonal to the row space; WᵀW is nonzero so a
            // coordinate axis with a nonzero column must work
            let j = (0..w.cols())
                .find(|&j| (0..w.rows()).any(|i| w.get(i, j) != F::zero()))
                .expect("nonzero matrix has a nonzero column");
            v = vec![F::zero(); w.cols()];
            v[j] = F::one();
            continue;
        }
        let done = (next - lambda).abs() <= tol * next;
        lambda = next;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// `‖W‖_F² / σ_max²`, clamped to `[1, min(rows, cols)]`.
pub fn stable_rank<F: Scalar>(w: &Matrix<F>) -> Result<F> {
    let top = top_singular_value_sq(w)?;
    let cap = F::from_count(w.rows().min(w.cols()));
    Ok((w.frobenius_sq() / top).max(F::one()).min(cap))
}

/// Linear-interpolation percentile (`q ∈ [0, 100]`) of sorted data.
fn percentile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = F::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-group aggregate of per-neuron angular updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularSummary<F> {
    pub mean: F,
    pub p5: F,
    pub p95: F,
}

impl<F: Scalar> AngularSummary<F> {
    pub fn from_angles(angles: &[F]) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Empty("angular summary"));
        }
        let mut sorted = angles.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("angles are not NaN"));
        let mean = sorted.iter().copied().sum::<F>() / F::from_count(sorted.len());
        Ok(Self {
            mean,
            p5: percentile_sorted(&sorted, 5.0),
            p95: percentile_sorted(&sorted, 95.0),
        })
    }
}

/// Angular update of each `row_len`-sized row of a flattened parameter block.
/// Rows with zero norm before or after the step are skipped.
pub fn row_angular_updates<F: Scalar>(prev: &[F], next: &[F], row_len: usize) -> Result<Vec<F>> {
    if prev.len() != next.len() {
        return Err(Error::ShapeMismatch {
            what: "parameter block".into(),
            expected: prev.len(),
            got: next.len(),
        });
    }
    if row_len == 0 || !prev.len().is_multiple_of(row_len) {
        return Err(Error::ShapeMismatch {
            what: "row length divisor".into(),
            expected: prev.len(),
            got: row_len,
        });
    }
    let mut out = Vec::with_capacity(prev.len() / row_len);
    for (a, b) in prev.chunks(row_len).zip(next.chunks(row_len)) {
        match angular_update(a, b) {
            Ok(angle) => out.push(angle),
            Err(Error::ZeroNorm(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub name: String,
    pub l2_update: f64,
    pub angular: Option<AngularSummary<f64>>,
    /// Update scale applied by the representation-change correction.
    pub rrc_scale: Option<f64>,
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub groups: Vec<GroupMetrics>,
    /// `+∞` when the measured gradient noise is zero.
    pub phi: Option<f64>,
    pub cancel_ratio: Option<f64>,
    pub rrc: Option<f64>,
    pub dead_frac: Option<f64>,
}

impl StepMetrics {
    /// Checks that every value is finite (φ may be `+∞`) and every angle lies
    /// in `[0, π]`.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::NonFinite(format!("step {} {what}", self.step)));
        let finite_opt = |x: Option<f64>| x.is_none_or(f64::is_finite);
        if !self.lr.is_finite() || !self.loss.is_finite() {
            return bad("lr/loss");
        }
        if !finite_opt(self.cancel_ratio) || !finite_opt(self.rrc) || !finite_opt(self.dead_frac) {
            return bad("statistics");
        }
        if self.phi.is_some_and(|p| p.is_nan() || p < 0.0) {
            return bad("phi");
        }
        for g in &self.groups {
            if !g.l2_update.is_finite() || !finite_opt(g.rrc_scale) {
                return bad(&g.name);
            }
            if let Some(a) = g.angular {
                let ok = |x: f64| (0.0..=std::f64::consts::PI).contains(&x);
                if !(ok(a.mean) && ok(a.p5) && ok(a.p95)) {
                    return bad(&g.name);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn angular_examples() {
        assert_eq!(angular_update(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!((angular_update(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((angular_update(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert!((angular_update(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() - PI).abs() < 1e-15);
        assert!(angular_update(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rrc_examples() {
        let x = Matrix::<f64>::identity(2);
        assert_eq!(measure_rrc(&[1.0, 0.0], &[0.0, 0.5], &x).unwrap(), 0.5);
        assert_eq!(measure_rrc(&[1.0, 0.0], &[0.0, 0.0], &x).unwrap(), 0.0);
        let x = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25]).unwrap();
        let w = [0.3, -0.7, 1.1];
        let dw: Vec<f64> = w.iter().map(|v| 0.3 * v).collect();
        assert!((measure_rrc(&w, &dw, &x).unwrap() - 0.3).abs() < 1e-15);
        assert!(measure_rrc(&[0.0, 1.0], &[1.0, 0.0], &Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn layer_rrc_matches_single_row() {
        let x = Matrix::from_vec(2, 3, vec![1.0, 0.5, -1.0, 2.0, 0.0, 1.0]).unwrap();
        let w = Matrix::from_vec(1, 2, vec![0.4f64, -0.2]).unwrap();
        let dw = Matrix::from_vec(1, 2, vec![0.1, 0.3]).unwrap();
        let a = measure_layer_rrc(&w, &dw, &x).unwrap();
        let b = measure_rrc(w.row(0), dw.row(0), &x).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn dead_fraction_examples() {
        let pos = Matrix::from_fn(4, 3, |i, j| 1.0 + (i + j) as f64);
        assert_eq!(dead_unit_fraction(&pos, 0.0).unwrap(), 0.0);
        assert_eq!(dead_unit_fraction(&pos.scale(-1.0), 0.0).unwrap(), 1.0);
        let mixed = Matrix::from_fn(4, 3, |i, _| if i % 2 == 0 { -1.0 } else { 1.0 });
        assert_eq!(dead_unit_fraction(&mixed, 0.0).unwrap(), 0.5);
        // one live sample keeps a unit alive
        let m = Matrix::from_vec(1, 3, vec![-1.0, 0.0, 0.1]).unwrap();
        assert_eq!(dead_unit_fraction(&m, 0.0).unwrap(), 0.0);
        assert!(dead_unit_fraction(&Matrix::<f64>::zeros(3, 0), 0.0).is_err());
    }

    #[test]
    fn stable_rank_examples() {
        assert!((stable_rank(&Matrix::<f64>::identity(4)).unwrap() - 4.0).abs() < 1e-12);
        let r1 = Matrix::outer(&[1.0f64, -2.0, 3.0], &[0.5, 0.25]);
        assert!((stable_rank(&r1).unwrap() - 1.0).abs() < 1e-12);
        assert!((stable_rank(&Matrix::diag(&[2.0f64, 1.0])).unwrap() - 1.25).abs() < 1e-7);
        assert!(stable_rank(&Matrix::<f64>::zeros(2, 2)).is_err());
        let f32_rank = stable_rank(&Matrix::<f32>::diag(&[2.0, 1.0])).unwrap();
        assert!((f32_rank - 1.25).abs() < 1e-4);
    }

    #[test]
    fn summary_percentiles() {
        let angles: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let s = AngularSummary::from_angles(&angles).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.p5 - 0.05).abs() < 1e-15);
        assert!((s.p95 - 0.95).abs() < 1e-15);
        let s = AngularSummary::from_angles(&[0.2]).unwrap();
        assert_eq!((s.mean, s.p5, s.p95), (0.2, 0.2, 0.2));
    }

    #[test]
    fn row_angles_skip_zero_rows() {
        let prev = [1.0, 0.0, 0.0, 0.0];
        let next = [0.0, 1.0, 0.0, 0.0];
        let a = row_angular_updates(&prev, &next, 2).unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0] - FRAC_PI_2).abs() < 1e-15);
        assert!(row_angular_updates(&prev, &next, 3).is_err());
    }

    #[test]
    fn step_metrics_validation() {
        let mut m = StepMetrics {
            step: 1,
            lr: 0.1,
            loss: 2.0,
            groups: vec![GroupMetrics {
                name: "w".into(),
                l2_update: 0.1,
                angular: Some(AngularSummary { mean: 0.1, p5: 0.0, p95: 0.2 }),
                rrc_scale: Some(1.0),
            }],
            phi: Some(f64::INFINITY),
            cancel_ratio: Some(-0.2),
            rrc: None,
            dead_frac: Some(0.0),
        };
        assert!(m.validate().is_ok());
        m.groups[0].angular = Some(AngularSummary { mean: 4.0, p5: 0.0, p95: 4.0 });
        assert!(m.validate().is_err());
        m.groups[0].angular = None;
        m.loss = f64::NAN;
        assert!(m.validate().is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    /// Random orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
    fn random_orthogonal(n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = SeededRng::new(seed, 7);
        let mut q = Matrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut v = rng.normal_vec(n, 1.0);
            for j in 0..i {
                let p = crate::linalg::dot(&v, q.row(j));
                v.iter_mut().zip(q.row(j)).for_each(|(a, &b)| *a -= p * b);
            }
            let nv = norm(&v);
            q.row_mut(i).iter_mut().zip(&v).for_each(|(a, &b)| *a = b / nv);
        }
        q
    }

    proptest! {
        #[test]
        fn angular_scale_and_symmetry(a in vec_strategy(5), b in vec_strategy(5), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            prop_assert!(angular_update(&a, &scaled).unwrap() < 1e-6);
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            prop_assert!((angular_update(&a, &neg).unwrap() - PI).abs() < 1e-6);
            let ab = angular_update(&a, &b).unwrap();
            prop_assert_eq!(ab, angular_update(&b, &a).unwrap());
            prop_assert!((0.0..=PI).contains(&ab));
        }

        #[test]
        fn rrc_scaling(w in vec_strategy(4), d in vec_strategy(4), k in 0.1f64..10.0, s in -10.0f64..10.0, seed in 0u64..1000) {
            prop_assume!(s.abs() > 1e-2);
            let mut rng = SeededRng::new(seed, 0);
            let x = Matrix::from_vec(4, 6, rng.normal_vec(24, 1.0)).unwrap();
            let base = measure_rrc(&w, &d, &x).unwrap();
            let xs = x.scale(s);
            prop_assert!((measure_rrc(&w, &d, &xs).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
            let dk: Vec<f64> = d.iter().map(|v| k * v).collect();
            prop_assert!((measure_rrc(&w, &dk, &x).unwrap() - k * base).abs() <= 1e-12 * (k * base).max(1.0));
        }

        #[test]
        fn stable_rank_bounds_and_rotation(rows in 1usize..7, cols in 1usize..7, seed in 0u64..500) {
            let mut rng = SeededRng::new(seed, 1);
            let w = Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols, 1.0)).unwrap();
            let r = stable_rank(&w).unwrap();
            prop_assert!(r >= 1.0 && r <= rows.min(cols) as f64);
            let u = random_orthogonal(rows, seed + 1);
            let v = random_orthogonal(cols, seed + 2);
            let rotated = u.matmul(&w).unwrap().matmul(&v).unwrap();
            let rr = stable_rank(&rotated).unwrap();
            prop_assert!((rr - r).abs() < 1e-6 * r, "{} vs {}", rr, r);
        }
    }
}
