//! Learning-rate schedules.
//!
//! Steps are 1-based. During a warmup of `W` steps the rate is `peak * t / W`,
//! so the very first step already moves the weights. Phase lengths are
//! `round(frac * total_steps)` with ties rounding up.

use crate::error::{out_of_range, Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Linear warmup, constant plateau, linear cooldown to zero.
    Trapezoidal,
    /// Linear warmup followed by half a cosine period down to zero.
    Cosine,
    /// Linear warmup followed by a constant rate.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
    /// Only used by the trapezoidal schedule.
    pub cooldown_frac: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Trapezoidal,
            peak_lr: 1e-3,
            total_steps: 1000,
            warmup_frac: 0.05,
            cooldown_frac: 0.5,
        }
    }
}

fn phase_len(frac: f64, total: u64) -> u64 {
    // f64::round breaks ties away from zero, i.e. up for positive lengths
    (frac * total as f64).round() as u64
}

impl ScheduleSpec {
    pub fn trapezoidal(peak_lr: f64, total_steps: u64, warmup_frac: f64, cooldown_frac: f64) -> Self {
        Self {
            kind: ScheduleKind::Trapezoidal,
            peak_lr,
            total_steps,
            warmup_frac,
            cooldown_frac,
        }
    }

    pub fn cosine(peak_lr: f64, total_steps: u64, warmup_frac: f64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            peak_lr,
            total_steps,
            warmup_frac,
            cooldown_frac: 0.0,
        }
    }

    pub fn constant(peak_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            peak_lr,
            total_steps,
            warmup_frac: 0.0,
            cooldown_frac: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(out_of_range("peak_lr", self.peak_lr, "(0, inf)"));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(out_of_range("warmup_frac", self.warmup_frac, "[0, 1)"));
        }
        if self.kind == ScheduleKind::Trapezoidal {
            if !(0.0..=1.0).contains(&self.cooldown_frac) {
                return Err(out_of_range("cooldown_frac", self.cooldown_frac, "[0, 1]"));
            }
            if self.warmup_frac + self.cooldown_frac > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "warmup_frac + cooldown_frac = {} exceeds 1",
                    self.warmup_frac + self.cooldown_frac
                )));
            }
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        phase_len(self.warmup_frac, self.total_steps).min(self.total_steps)
    }

    pub fn cooldown_steps(&self) -> u64 {
        match self.kind {
            ScheduleKind::Trapezoidal => phase_len(self.cooldown_frac, self.total_steps),
            _ => 0,
        }
    }

    /// Learning rate at 1-based step `t`.
    pub fn lr_at<F: Scalar>(&self, t: u64) -> Result<F> {
        self.validate()?;
        if t == 0 || t > self.total_steps {
            return Err(out_of_range("t", t as f64, "[1, total_steps]"));
        }
        let peak = F::lit(self.peak_lr);
        let total = self.total_steps;
        let warm = self.warmup_steps();
        let warm_factor = if t <= warm {
            F::from_count(t as usize) / F::from_count(warm as usize)
        } else {
            F::one()
        };
        let decay_factor = match self.kind {
            ScheduleKind::Constant => F::one(),
            ScheduleKind::Trapezoidal => {
                let cool = self.cooldown_steps();
                if cool > 0 && t > total - cool {
                    F::from_count((total - t) as usize) / F::from_count(cool as usize)
                } else {
                    F::one()
                }
            }
            ScheduleKind::Cosine => {
                if t <= warm || total == warm {
                    F::one()
                } else {
                    let progress = F::from_count((t - warm) as usize)
                        / F::from_count((total - warm) as usize);
                    F::lit(0.5) * (F::one() + (F::PI() * progress).cos())
                }
            }
        };
        Ok(peak * warm_factor.min(decay_factor).max(F::zero()))
    }

    /// The largest rate the schedule ever reaches.
    pub fn max_lr<F: Scalar>(&self) -> F {
        F::lit(self.peak_lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> ScheduleSpec {
        ScheduleSpec::trapezoidal(1.0, 5000, 0.05, 0.5)
    }

    #[test]
    fn trapezoidal_examples() {
        let s = reference();
        assert_eq!(s.warmup_steps(), 250);
        assert_eq!(s.lr_at::<f64>(250).unwrap(), 1.0);
        assert_eq!(s.lr_at::<f64>(5000).unwrap(), 0.0);
        assert_eq!(s.lr_at::<f64>(3750).unwrap(), 0.5);
        assert_eq!(s.lr_at::<f64>(1).unwrap(), 1.0 / 250.0);
        assert_eq!(s.lr_at::<f64>(2500).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_steps() {
        let s = reference();
        assert!(s.lr_at::<f64>(0).is_err());
        assert!(s.lr_at::<f64>(5001).is_err());
    }

    #[test]
    fn max_lr_examples() {
        assert_eq!(ScheduleSpec::trapezoidal(6e-4, 10, 0.1, 0.5).max_lr::<f64>(), 6e-4);
        assert_eq!(ScheduleSpec::trapezoidal(1e-2, 10, 0.0, 0.5).max_lr::<f64>(), 1e-2);
        assert_eq!(ScheduleSpec::constant(0.1, 10).max_lr::<f64>(), 0.1);
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let s = ScheduleSpec::trapezoidal(0.3, 100, 0.0, 0.5);
        assert_eq!(s.lr_at::<f64>(1).unwrap(), 0.3);
        let c = ScheduleSpec::cosine(0.3, 100, 0.0);
        assert!((c.lr_at::<f64>(1).unwrap() - 0.3).abs() < 1e-3);
    }

    #[test]
    fn ties_round_up() {
        // 0.05 * 10 = 0.5 rounds to one warmup step
        let s = ScheduleSpec::trapezoidal(1.0, 10, 0.05, 0.25);
        assert_eq!(s.warmup_steps(), 1);
        // 0.25 * 10 = 2.5 rounds to three cooldown steps
        assert_eq!(s.cooldown_steps(), 3);
    }

    #[test]
    fn cosine_shape() {
        let s = ScheduleSpec::cosine(2.0, 110, 10.0 / 110.0);
        assert_eq!(s.warmup_steps(), 10);
        assert_eq!(s.lr_at::<f64>(5).unwrap(), 1.0);
        assert_eq!(s.lr_at::<f64>(10).unwrap(), 2.0);
        assert!((s.lr_at::<f64>(60).unwrap() - 1.0).abs() < 1e-12);
        assert!(s.lr_at::<f64>(110).unwrap().abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(ScheduleSpec::trapezoidal(0.0, 10, 0.1, 0.5).validate().is_err());
        assert!(ScheduleSpec::trapezoidal(1.0, 0, 0.1, 0.5).validate().is_err());
        assert!(ScheduleSpec::trapezoidal(1.0, 10, 1.0, 0.0).validate().is_err());
        assert!(ScheduleSpec::trapezoidal(1.0, 10, 0.6, 0.5).validate().is_err());
        assert!(ScheduleSpec::trapezoidal(1.0, 10, 0.5, 0.5).validate().is_ok());
    }

    #[test]
    fn f32_and_f64_agree() {
        let s = reference();
        for t in [1u64, 100, 250, 2600, 4999] {
            let a: f64 = s.lr_at(t).unwrap();
            let b: f32 = s.lr_at(t).unwrap();
            assert!((a - b as f64).abs() < 1e-6);
        }
    }

    fn arb_spec() -> impl Strategy<Value = ScheduleSpec> {
        (0usize..3, 1e-4f64..10.0, 1u64..3000, 0.0f64..0.6, 0.0f64..0.4).prop_map(
            |(k, peak, total, w, c)| ScheduleSpec {
                kind: [ScheduleKind::Trapezoidal, ScheduleKind::Cosine, ScheduleKind::Constant][k],
                peak_lr: peak,
                total_steps: total,
                warmup_frac: w,
                cooldown_frac: c,
            },
        )
    }

    proptest! {
        #[test]
        fn lr_is_bounded_by_peak(spec in arb_spec()) {
            for t in 1..=spec.total_steps {
                let lr: f64 = spec.lr_at(t).unwrap();
                prop_assert!(lr >= 0.0 && lr <= spec.peak_lr * (1.0 + 1e-12));
            }
        }

        #[test]
        fn trapezoid_is_continuous_at_phase_boundaries(
            total in 20u64..5000, w in 0.01f64..0.5, c in 0.01f64..0.49,
        ) {
            let spec = ScheduleSpec::trapezoidal(1.0, total, w, c);
            let warm = spec.warmup_steps();
            let cool = spec.cooldown_steps();
            prop_assume!(warm >= 1 && cool >= 1 && warm + cool < total);
            prop_assert_eq!(spec.lr_at::<f64>(warm).unwrap(), 1.0);
            prop_assert_eq!(spec.lr_at::<f64>(total - cool).unwrap(), 1.0);
            // one step on either side moves by at most one phase increment
            let before = spec.lr_at::<f64>(warm.saturating_sub(1).max(1)).unwrap();
            prop_assert!(1.0 - before <= 1.0 / warm as f64 + 1e-12);
            let after = spec.lr_at::<f64>(total - cool + 1).unwrap();
            prop_assert!(1.0 - after <= 1.0 / cool as f64 + 1e-12);
        }
    }
}
