//! Oracle suites behind `warmkit verify`.
//!
//! Each check compares an estimate against a target under a stated
//! tolerance. Monte Carlo checks use fixed seeds and report their standard
//! error.

use std::str::FromStr;

use serde_json::{json, Value};
use warmkit::gradstats::{estimate_snr, expected_rrc_sq};
use warmkit::optim::{bias_amplification_sq, momentum_second_moment};
use warmkit::sim::{
    lionar_random_gradient_run, mc_bias_amplification, mc_lemma_l1, mc_lion_angular_scaling, mc_momentum_norm, mc_rrc,
    median, scale_invariance_check, snr_estimates, ElementDist,
};
use warmkit::toymodel::Split;
use warmkit::{
    Activation, Algorithm, GradientModel, LossKind, McEstimate, MicroBatchGrads, Mlp, ModelConfig, OptimizerConfig, SeededRng, TaskSpec,
};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::train::{num, Trainer};

pub const VERIFY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Eq1,
    Amplification,
    L1,
    Rrc,
    ScaleInvariance,
    Snr,
    Gradcheck,
    LionarNorms,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Eq1,
        Suite::Amplification,
        Suite::L1,
        Suite::Rrc,
        Suite::ScaleInvariance,
        Suite::Snr,
        Suite::Gradcheck,
        Suite::LionarNorms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Eq1 => "eq1",
            Suite::Amplification => "amplification",
            Suite::L1 => "l1",
            Suite::Rrc => "rrc",
            Suite::ScaleInvariance => "scale_invariance",
            Suite::Snr => "snr",
            Suite::Gradcheck => "gradcheck",
            Suite::LionarNorms => "lionar_norms",
        }
    }

    /// `all` or a single suite name.
    pub fn parse_selector(s: &str) -> Result<Vec<Suite>> {
        if s == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        Ok(vec![s.parse()?])
    }

    fn run(self, seed: u64) -> Result<Vec<Check>> {
        let mut rng = SeededRng::new(seed, 0x5e7 + self as u64);
        match self {
            Suite::Eq1 => eq1(&mut rng),
            Suite::Amplification => amplification(&mut rng),
            Suite::L1 => lemma_l1(&mut rng),
            Suite::Rrc => rrc(&mut rng),
            Suite::ScaleInvariance => scale_invariance(&mut rng),
            Suite::Snr => snr(&mut rng),
            Suite::Gradcheck => gradcheck(&mut rng),
            Suite::LionarNorms => lionar_norms(&mut rng),
        }
    }
}

impl FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                HarnessError::Usage(format!("unknown suite `{s}` (expected all or one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `|estimate - target| ≤ tol·|target|`.
    Rel(f64),
    /// `|estimate - target| ≤ tol`.
    Abs(f64),
    /// `|estimate - target| ≤ max(rel·|target|, 3σ)`.
    RelOrThreeSigma(f64),
    /// `|estimate - target| ≤ 3σ`.
    ThreeSigma,
    /// `estimate ≤ target`.
    AtMost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub std_err: Option<f64>,
    pub tolerance: Tolerance,
    pub passed: bool,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, estimate: f64, target: f64, std_err: Option<f64>, tolerance: Tolerance) -> Self {
        let diff = (estimate - target).abs();
        let sigma3 = 3.0 * std_err.unwrap_or(0.0);
        let passed = estimate == target || match tolerance {
            Tolerance::Rel(r) => diff <= r * target.abs(),
            Tolerance::Abs(a) => diff <= a,
            Tolerance::RelOrThreeSigma(r) => diff <= (r * target.abs()).max(sigma3),
            Tolerance::ThreeSigma => diff <= sigma3,
            Tolerance::AtMost => estimate <= target,
        };
        Self {
            suite: suite.name(),
            name: name.into(),
            estimate,
            target,
            std_err,
            tolerance,
            passed,
        }
    }

    fn mc(suite: Suite, name: impl Into<String>, e: McEstimate, target: f64, tolerance: Tolerance) -> Self {
        Self::new(suite, name, e.mean, target, Some(e.std_err), tolerance)
    }

    pub fn to_json(&self) -> Value {
        let (kind, value) = match self.tolerance {
            Tolerance::Rel(r) => ("rel", Some(r)),
            Tolerance::Abs(a) => ("abs", Some(a)),
            Tolerance::RelOrThreeSigma(r) => ("rel_or_3sigma", Some(r)),
            Tolerance::ThreeSigma => ("3sigma", None),
            Tolerance::AtMost => ("at_most", None),
        };
        json!({
            "suite": self.suite,
            "name": self.name,
            "estimate": num(self.estimate),
            "target": num(self.target),
            "std_err": self.std_err.map(num),
            "tolerance": { "kind": kind, "value": value.map(num) },
            "verdict": if self.passed { "pass" } else { "fail" },
        })
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "schema_version": VERIFY_SCHEMA_VERSION,
            "seed": self.seed,
            "suites": self.suites.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "passed": self.passed(),
            "n_checks": self.checks.len(),
            "n_failed": self.checks.iter().filter(|c| !c.passed).count(),
            "checks": self.checks.iter().map(Check::to_json).collect::<Vec<_>>(),
        })
    }
}

pub fn verify(suites: &[Suite], seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for &s in suites {
        checks.extend(s.run(seed)?);
    }
    Ok(VerifyReport {
        seed,
        suites: suites.to_vec(),
        checks,
    })
}

/// Momentum dimensions × trials per Monte Carlo cell (10⁵ samples).
const MOMENTUM_DIMS: usize = 100;
const MOMENTUM_TRIALS: usize = 1000;

fn eq1(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for beta in [0.5, 0.9, 0.98] {
        for t in [1u64, 5, 50, 500] {
            let e = mc_momentum_norm(beta, t, MOMENTUM_DIMS, MOMENTUM_TRIALS, rng)?;
            let target: f64 = momentum_second_moment(beta, Some(t))?;
            out.push(Check::mc(Suite::Eq1, format!("beta={beta} t={t}"), e, target, Tolerance::Rel(0.02)));
        }
        let steady: f64 = momentum_second_moment(beta, None)?;
        let closed = (1.0 - beta) / (1.0 + beta);
        out.push(Check::new(Suite::Eq1, format!("beta={beta} steady state"), steady, closed, None, Tolerance::Abs(1e-15)));
    }
    Ok(out)
}

fn amplification(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let mut out = vec![Check::new(
        Suite::Amplification,
        "beta=0.9 t=1 closed form",
        bias_amplification_sq(0.9f64, 1)?,
        19.0,
        None,
        Tolerance::Abs(1e-12),
    )];
    for t in [1u64, 2, 5] {
        let e = mc_bias_amplification(0.9, t, MOMENTUM_DIMS, MOMENTUM_TRIALS, rng)?;
        let target: f64 = bias_amplification_sq(0.9, t)?;
        out.push(Check::mc(Suite::Amplification, format!("beta=0.9 t={t}"), e, target, Tolerance::Rel(0.03)));
    }
    Ok(out)
}

const L1_TRIALS: usize = 100_000;

fn lemma_l1(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let normal = ElementDist::standard_normal();
    let pairs = [
        ("normal.normal", normal, normal),
        ("ones.normal", ElementDist::Constant { value: 1.0 }, normal),
        (
            "uniform.shifted_normal",
            ElementDist::Uniform { lo: -1.0, hi: 1.0 },
            ElementDist::Normal { mean: 2.0, std: 0.5 },
        ),
    ];
    let mut out = Vec::new();
    for c in [1usize, 4, 16, 64] {
        for (label, a, b) in pairs {
            let e = mc_lemma_l1(c, a, b, L1_TRIALS, rng)?;
            out.push(Check::mc(Suite::L1, format!("C={c} {label}"), e, 1.0, Tolerance::ThreeSigma));
        }
    }
    Ok(out)
}

pub const RRC_ETA: f64 = 0.1;
pub const RRC_TRIALS: usize = 200_000;

fn rrc(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for b in [1usize, 4, 16] {
        for c in [8usize, 64] {
            for phi in [0.0, 0.1, 1.0] {
                let model = GradientModel::with_phi(c, b, phi)?;
                let r = mc_rrc(&model, RRC_ETA, 1.0, RRC_TRIALS, rng)?;
                let cell = format!("B={b} C={c} phi={phi}");
                out.push(Check::mc(
                    Suite::Rrc,
                    format!("{cell} grad power"),
                    r.grad_power,
                    r.grad_power_target,
                    Tolerance::Rel(0.01),
                ));
                out.push(Check::mc(Suite::Rrc, cell, r.ratio, r.closed_form, Tolerance::RelOrThreeSigma(0.05)));
            }
        }
    }
    // unit batch collapses to η²C/‖w‖²
    for (c, phi, w2) in [(8usize, 0.0, 2.0), (64, 0.1, 64.0), (8, 1.0, 0.5)] {
        let v: f64 = expected_rrc_sq(RRC_ETA, 1, c, phi, w2)?;
        let simple = RRC_ETA * RRC_ETA * c as f64 / w2;
        out.push(Check::new(Suite::Rrc, format!("B=1 C={c} phi={phi} closed form"), v, simple, None, Tolerance::Rel(1e-12)));
    }
    Ok(out)
}

fn scale_invariance(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for c in [0.5, 2.0, 10.0] {
        let ratio = scale_invariance_check(c, 32, rng)?;
        out.push(Check::new(Suite::ScaleInvariance, format!("grad norm c={c}"), ratio, 1.0 / c, None, Tolerance::Rel(1e-10)));
        let e = mc_lion_angular_scaling(c, 32, 1e-3, 5, 64, rng)?;
        out.push(Check::mc(Suite::ScaleInvariance, format!("liona angle c={c}"), e, 1.0 / c, Tolerance::Rel(0.05)));
    }
    Ok(out)
}

fn snr(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for phi in [0.1, 1.0, 10.0] {
        let est = snr_estimates(phi, 64, 8, 16, 64, rng)?;
        out.push(Check::new(Suite::Snr, format!("median phi phi={phi}"), median(&est)?, phi, None, Tolerance::Rel(0.15)));
    }
    // two single-sample micro-batches, worked by hand
    let cases: [(&str, f64, f64, [f64; 3]); 3] = [
        ("opposite", 1.0, -1.0, [2.0, 0.0, 0.0]),
        ("identical", 3.0, 3.0, [0.0, 9.0, f64::INFINITY]),
        ("offset", 2.0, 0.0, [2.0, 0.0, 0.0]),
    ];
    for (label, a, b, [pn, ps, phi]) in cases {
        let e = estimate_snr(&MicroBatchGrads::new(vec![vec![a], vec![b]], 1)?);
        for (field, got, want) in [("P_N", e.noise_power, pn), ("P_S", e.signal_power, ps), ("phi", e.phi, phi)] {
            out.push(Check::new(Suite::Snr, format!("hand case {label} {field}"), got, want, None, Tolerance::Abs(0.0)));
        }
    }
    Ok(out)
}

fn gradcheck(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let data = TaskSpec::default().build(3)?;
    let batch = data.batch(Split::Train, &data.sample_indices(Split::Train, 8, rng), 1)?;
    let cases = [
        ("linear mse", vec![], Activation::Relu, LossKind::Mse, 1e-3, 1e-9),
        ("leaky_relu mlp", vec![16, 16], Activation::LeakyRelu(0.1), LossKind::CrossEntropy, 3e-5, 1e-5),
        ("relu mlp", vec![16, 16], Activation::Relu, LossKind::CrossEntropy, 3e-5, 1e-5),
    ];
    let mut out = Vec::new();
    for (label, hidden, activation, loss, eps, tol) in cases {
        let config = ModelConfig {
            hidden,
            activation,
            loss,
            ..ModelConfig::default()
        };
        let model = Mlp::<f64>::new(config, data.input_dim(), data.n_classes(), rng)?;
        let report = model.grad_check(&batch, eps, 2000, rng)?;
        out.push(Check::new(
            Suite::Gradcheck,
            format!("{label} ({} checked, {} kink-excluded)", report.checked, report.excluded),
            report.max_rel_err,
            tol,
            None,
            Tolerance::AtMost,
        ));
    }
    Ok(out)
}

/// LionAR training run length for the norm-preservation check.
pub const LIONAR_RUN_STEPS: u64 = 2000;

/// Largest `|‖row‖ - ‖row₀‖|` over every neuron row of every weight matrix,
/// checked after each step of a LionAR training run.
pub fn lionar_training_norm_drift(steps: u64, seed: u64) -> Result<f64> {
    let mut config = RunConfig::default();
    config.run.seed = seed;
    config.run.total_steps = steps;
    config.run.metric_every = 0;
    config.run.eval_samples = 64;
    config.optimizer = OptimizerConfig::new(Algorithm::Lionar);
    config.schedule.peak_lr = 1e-2;
    let mut trainer = Trainer::new(config)?;
    let mut drift = 0.0f64;
    for _ in 0..steps {
        trainer.step()?;
        for g in trainer.model().groups().iter().filter(|g| g.is_neuron_matrix()) {
            for (now, init) in g.row_norms().iter().zip(g.init_row_norms()) {
                drift = drift.max((now - init).abs());
            }
        }
    }
    Ok(drift)
}

fn lionar_norms(rng: &mut SeededRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (eta, eta_max) in [(1e-3, 1e-3), (5e-4, 1e-3)] {
        let run = lionar_random_gradient_run(16, 64, eta, eta_max, 0.1, 200, rng)?;
        let cell = format!("eta={eta} eta_max={eta_max}");
        out.push(Check::new(
            Suite::LionarNorms,
            format!("{cell} random-gradient row norm drift"),
            run.max_norm_drift,
            1e-12,
            None,
            Tolerance::AtMost,
        ));
        out.push(Check::new(
            Suite::LionarNorms,
            format!("{cell} mean angular update"),
            run.mean_angle,
            run.predicted,
            None,
            Tolerance::Rel(0.10),
        ));
    }
    let drift = lionar_training_norm_drift(LIONAR_RUN_STEPS, rng.next_seed())?;
    out.push(Check::new(
        Suite::LionarNorms,
        format!("{LIONAR_RUN_STEPS}-step training run row norm drift"),
        drift,
        1e-12,
        None,
        Tolerance::AtMost,
    ));
    Ok(out)
}
