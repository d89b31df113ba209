//! Acceptance criteria 1-14, one PASS/FAIL line each.
//!
//! Run with `cargo test -p warmkit-cli --test acceptance`. Criteria listed in
//! `EXPECTED_FAILURES` are still evaluated and reported as FAIL, but do not
//! fail the run; everything else must pass.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use warmkit::gradstats::{estimate_snr, rrc_rho, rrc_rho_unclamped};
use warmkit::optim::{momentum_scale, ParamGroup};
use warmkit::sim::lionar_random_gradient_run;
use warmkit::{Activation, Algorithm, MicroBatchGrads, Optimizer, OptimizerConfig, SeededRng};
use warmkit_harness::experiments::giant_step_comparison;
use warmkit_harness::verify::lionar_training_norm_drift;
use warmkit_harness::{verify, RunConfig, Suite, Trainer};

/// Criterion 12's third clause asks for a first-step ratio of
/// `(1-β1)/√(1-β2)`, but dropping only the first-moment bias correction gives
/// `1-β1`. The clause is checked as written and stays red.
const EXPECTED_FAILURES: &[u8] = &[12];

const SEED: u64 = 0;

type Verdict = Result<String, String>;
type Criterion = (u8, &'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Runs oracle suites and folds their checks into one verdict, optionally
/// bounded in wall time.
fn suites(list: &[Suite], limit: Option<Duration>) -> Verdict {
    let start = Instant::now();
    let report = verify(list, SEED).map_err(err)?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} (estimate {:.6e}, target {:.6e})", c.name, c.estimate, c.target))
        .collect();
    let timing = format!("{:.1}s", elapsed.as_secs_f64());
    if !failed.is_empty() {
        return Err(format!("{} of {} checks failed: {}", failed.len(), report.checks.len(), failed.join("; ")));
    }
    if let Some(limit) = limit {
        if elapsed > limit {
            return Err(format!("all checks pass but took {timing} (limit {}s)", limit.as_secs()));
        }
    }
    Ok(format!("{} checks, {timing}", report.checks.len()))
}

// ---------------------------------------------------------------------------

fn momentum_oracle() -> Verdict {
    suites(&[Suite::Eq1], Some(Duration::from_secs(30)))
}

fn bias_amplification() -> Verdict {
    suites(&[Suite::Amplification], None)
}

/// Squared update coefficients summed term by term: heavy-ball applies
/// `(1-β)β^k` to the gradient `k` steps back; Nesterov applies `1-β²` to the
/// fresh gradient and `(1-β)β^(k+1)` to older ones.
fn gamma_by_series(beta: f64, nesterov: bool, steps: usize) -> f64 {
    let mut sq = 0.0;
    for k in 0..steps {
        let c = match (nesterov, k) {
            (true, 0) => 1.0 - beta * beta,
            (true, _) => (1.0 - beta) * beta.powi(k as i32 + 1),
            (false, _) => (1.0 - beta) * beta.powi(k as i32),
        };
        sq += c * c;
    }
    sq.sqrt()
}

fn scaling_constants() -> Verdict {
    let cases = [
        ("heavy-ball steady", false, None, 0.229416),
        ("nesterov steady", true, None, 0.265766),
        ("heavy-ball t=1 inverse", false, Some(1u64), 0.1),
        ("nesterov t=1 inverse", true, Some(1), 0.19),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, nesterov, t, stated) in cases {
        let got: f64 = momentum_scale(0.9, nesterov, t, t.is_some()).map_err(err)?;
        let oracle = gamma_by_series(0.9, nesterov, t.map_or(20_000, |t| t as usize));
        ok &= (got - oracle).abs() < 1e-6 && (got - stated).abs() < 1e-6;
        parts.push(format!("{label} {got:.6}"));
    }
    ensure(ok, parts.join(", "))
}

fn liona_norm_control() -> Verdict {
    let mut config = RunConfig::default();
    config.run.seed = SEED;
    config.run.total_steps = 500;
    config.run.metric_every = 0;
    config.run.eval_samples = 64;
    config.model.activation = Activation::LeakyRelu(0.1);
    config.optimizer = OptimizerConfig::new(Algorithm::Liona);
    // recovering the step from parameters loses ulp(θ)/(ηγ) to rounding, so
    // the rate is kept large enough for that to sit well below 1e-12
    config.schedule.peak_lr = 1e-2;
    let wd = config.optimizer.effective_weight_decay();
    let mut trainer = Trainer::new(config).map_err(err)?;
    let (mut worst, mut worst_reported, mut zero_signs) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..500 {
        let before: Vec<Vec<f64>> = trainer.model().groups().iter().map(|g| g.values().to_vec()).collect();
        let report = trainer.step().map_err(err)?.report;
        let (lr, gamma) = (report.lr, report.groups[0].gamma.ok_or("LionA reported no gamma")?);
        let (mut sq, mut d) = (0.0, 0usize);
        for (g, p) in report.groups.iter().zip(trainer.model().groups()) {
            let expected = lr * gamma * (p.len() as f64).sqrt();
            worst_reported = worst_reported.max((g.update_norm - expected).abs() / expected);
        }
        for (g, prev) in trainer.model().groups().iter().zip(&before) {
            for (x, x0) in g.values().iter().zip(prev) {
                let u = (1.0 - lr * wd) * x0 - x;
                if u.abs() < 0.5 * lr * gamma {
                    zero_signs += 1;
                }
                sq += u * u;
            }
            d += g.len();
        }
        let expected = lr * gamma * (d as f64).sqrt();
        worst = worst.max((sq.sqrt() - expected).abs() / expected);
    }
    ensure(
        zero_signs == 0 && worst <= 1e-12 && worst_reported <= 1e-12,
        format!(
            "max relative deviation {worst:.2e} from parameters, {worst_reported:.2e} per reported group, \
             {zero_signs} zero sign coordinates over 500 steps"
        ),
    )
}

fn lionar_projection() -> Verdict {
    let drift = lionar_training_norm_drift(2000, SEED).map_err(err)?;
    let mut parts = vec![format!("2000-step row norm drift {drift:.2e}")];
    let mut ok = drift <= 1e-12;
    let gamma = gamma_by_series(0.9, false, 20_000);
    let mut rng = SeededRng::new(SEED, 5);
    for (eta, eta_max, wd) in [(1e-3, 1e-3, 0.1), (5e-4, 1e-3, 0.1)] {
        let run = lionar_random_gradient_run(16, 64, eta, eta_max, wd, 200, &mut rng).map_err(err)?;
        let predicted = ((eta / eta_max) * (2.0 * eta_max * wd).sqrt() * gamma).atan();
        let rel = (run.mean_angle - predicted).abs() / predicted;
        ok &= rel <= 0.10 && run.max_norm_drift <= 1e-12;
        parts.push(format!("eta={eta}: angle {:.4e} vs {predicted:.4e} ({:+.1}%)", run.mean_angle, 100.0 * (run.mean_angle / predicted - 1.0)));
    }
    ensure(ok, parts.join(", "))
}

fn lemma_l1() -> Verdict {
    suites(&[Suite::L1], Some(Duration::from_secs(10)))
}

fn rrc_oracle() -> Verdict {
    suites(&[Suite::Rrc], Some(Duration::from_secs(120)))
}

fn rho_formula() -> Verdict {
    let pre: f64 = rrc_rho_unclamped(1.0, 4, 8).map_err(err)?;
    let zero: f64 = rrc_rho(0.0, 4, 8).map_err(err)?;
    let inf: f64 = rrc_rho(f64::INFINITY, 4, 8).map_err(err)?;
    let mut monotone = true;
    for (b, c) in [(4usize, 8usize), (16, 64), (32, 8), (1, 8)] {
        let grid: Vec<f64> = (0..50).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 49.0)).collect();
        let rhos: Vec<f64> = grid.iter().map(|&p| rrc_rho(p, b, c)).collect::<Result<_, _>>().map_err(err)?;
        monotone &= rhos.windows(2).all(|w| w[1] >= w[0]);
    }
    ensure(
        (pre - 1.679688).abs() <= 1e-6 && zero == 1.0 && inf == 4.0 && monotone,
        format!("pre-clamp {pre:.6}, phi=0 -> {zero}, phi=inf -> {inf}, monotone {monotone}"),
    )
}

fn snr_estimator() -> Verdict {
    let summary = suites(&[Suite::Snr], None)?;
    // the two hand cases, recomputed here
    let hand = |a: f64, b: f64| estimate_snr(&MicroBatchGrads::new(vec![vec![a], vec![b]], 1).unwrap());
    let opposite = hand(1.0, -1.0);
    let offset = hand(2.0, 0.0);
    let exact = (opposite.noise_power, opposite.signal_power, opposite.phi) == (2.0, 0.0, 0.0)
        && (offset.noise_power, offset.signal_power, offset.phi) == (2.0, 0.0, 0.0);
    ensure(exact, format!("{summary}, hand cases exact {exact}"))
}

fn scale_invariance() -> Verdict {
    suites(&[Suite::ScaleInvariance], None)
}

fn gradient_check() -> Verdict {
    suites(&[Suite::Gradcheck], None)
}

fn adamw_cfg() -> OptimizerConfig {
    OptimizerConfig {
        eps: 0.0,
        ..OptimizerConfig::new(Algorithm::Adamw)
    }
}

fn adamw_contract() -> Verdict {
    let mut rng = SeededRng::new(SEED, 12);
    let start = vec![ParamGroup::vector("theta", rng.normal_vec(32, 1.0))];
    let grads: Vec<Vec<f64>> = (0..20).map(|_| rng.normal_vec(32, 1.0)).collect();

    let mut worst_scale = 0.0f64;
    for k in [0.01, 100.0] {
        let (mut a, mut b) = (start.clone(), start.clone());
        let mut oa = Optimizer::new(adamw_cfg(), &a).map_err(err)?;
        let mut ob = Optimizer::new(adamw_cfg(), &b).map_err(err)?;
        for g in &grads {
            let gk: Vec<f64> = g.iter().map(|x| k * x).collect();
            oa.step(&mut a, &[g], 1e-2, 1e-2).map_err(err)?;
            ob.step(&mut b, &[gk], 1e-2, 1e-2).map_err(err)?;
        }
        for (x, y) in a[0].values().iter().zip(b[0].values()) {
            worst_scale = worst_scale.max((x - y).abs());
        }
    }
    let scale_ok = worst_scale <= 1e-12;

    let cfg = OptimizerConfig { weight_decay: 0.0, ..adamw_cfg() };
    let (theta0, eta) = (1.0, 0.1);
    let mut p = vec![ParamGroup::vector("theta", vec![theta0])];
    let mut opt = Optimizer::new(cfg.clone(), &p).map_err(err)?;
    let mut worst_traj = 0.0f64;
    for k in 1..=50 {
        opt.step(&mut p, &[vec![2.0]], eta, eta).map_err(err)?;
        worst_traj = worst_traj.max((p[0].values()[0] - (theta0 - eta * k as f64)).abs());
    }
    let traj_ok = worst_traj <= 1e-12;

    let first_step = |disable: bool| -> Result<f64, String> {
        let cfg = OptimizerConfig {
            disable_beta1_bias_correction: disable,
            ..cfg.clone()
        };
        let mut p = vec![ParamGroup::vector("theta", vec![0.0])];
        let mut opt = Optimizer::new(cfg, &p).map_err(err)?;
        opt.step(&mut p, &[vec![-3.0]], eta, eta).map_err(err)?;
        Ok(p[0].values()[0])
    };
    let ratio = first_step(true)? / first_step(false)?;
    let wanted = (1.0 - cfg.beta1) / (1.0 - cfg.beta2).sqrt();
    let ratio_ok = (ratio - wanted).abs() <= 1e-12;

    ensure(
        scale_ok && traj_ok && ratio_ok,
        format!(
            "loss-scale invariance {} (max diff {worst_scale:.1e}); constant-gradient trajectory {} (max diff {worst_traj:.1e}); \
             disabled-correction ratio {} (measured {ratio:.6}, required {wanted:.6})",
            pass_word(scale_ok),
            pass_word(traj_ok),
            pass_word(ratio_ok),
        ),
    )
}

fn giant_step() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let o = giant_step_comparison(seed).map_err(err)?;
        ok &= o.relu_giant > o.relu_normal && o.leaky_giant > o.leaky_normal && o.leaky_increase() < o.relu_increase();
        parts.push(format!("seed {seed}: relu +{:.3} leaky +{:.3}", o.relu_increase(), o.leaky_increase()));
    }
    ensure(ok, parts.join(", "))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_warmkit")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_bin(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(bin()).args(args).output().map_err(err)
}

fn end_to_end() -> Verdict {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut parts = Vec::new();

    let start = Instant::now();
    let out = run_bin(&["verify", "--suite", "all", "--seed", "0"])?;
    let secs = start.elapsed().as_secs_f64();
    let verify_ok = out.status.code() == Some(0) && secs < 300.0;
    parts.push(format!("verify exit {:?} in {secs:.1}s", out.status.code()));

    let charlm = configs_dir().join("charlm_smoke.toml");
    let train_dir = tmp.path().join("train");
    let out = run_bin(&["train", "--config", charlm.to_str().unwrap(), "--out", train_dir.to_str().unwrap()])?;
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(err)?;
    let (init, fin) = (summary["init_train_loss"].as_f64(), summary["final_train_loss"].as_f64());
    let train_ok = out.status.success()
        && summary["steps_completed"] == 2000
        && matches!((init, fin), (Some(i), Some(f)) if f < i - 0.5);
    parts.push(format!("charlm train loss {:.3} -> {:.3}", init.unwrap_or(f64::NAN), fin.unwrap_or(f64::NAN)));

    let cfg = tmp.path().join("sweep.toml");
    std::fs::write(&cfg, "[run]\ntotal_steps = 60\neval_samples = 128\nmetric_every = 0\n[optimizer]\nalgorithm = \"liona\"\n")
        .map_err(err)?;
    let sweep = |dir: &str| -> Result<String, String> {
        let d = tmp.path().join(dir);
        let out = run_bin(&[
            "sweep", "--config", cfg.to_str().unwrap(), "--lrs", "1e-3,1e-2,1e-1", "--warmups", "0,0.25",
            "--workers", "2", "--out", d.to_str().unwrap(),
        ])?;
        if !out.status.success() {
            return Err(format!("sweep exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
        }
        std::fs::read_to_string(d.join("sweep.csv")).map_err(err)
    };
    let (first, second) = (sweep("a")?, sweep("b")?);
    let rows = first.lines().count().saturating_sub(1);
    let complete = first.lines().skip(1).all(|l| l.contains(",ok,60,"));
    let sweep_ok = rows == 6 && complete && first == second;
    parts.push(format!("sweep {rows} rows, complete {complete}, identical rerun {}", first == second));

    ensure(verify_ok && train_ok && sweep_ok, parts.join(", "))
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        (1, "momentum norm oracle", momentum_oracle),
        (2, "bias amplification", bias_amplification),
        (3, "momentum scaling constants", scaling_constants),
        (4, "LionA update norm control", liona_norm_control),
        (5, "LionAR norm projection and angle", lionar_projection),
        (6, "mixed-moment lemma oracle", lemma_l1),
        (7, "relative representation change oracle", rrc_oracle),
        (8, "rho correction factor", rho_formula),
        (9, "SNR estimator", snr_estimator),
        (10, "scale invariance", scale_invariance),
        (11, "gradient check", gradient_check),
        (12, "AdamW contract", adamw_contract),
        (13, "giant first step kills units", giant_step),
        (14, "end to end", end_to_end),
    ];
    let mut unexpected = 0;
    for (id, title, f) in criteria {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS [{id:>2}] {title} ({secs:.1}s): {detail}"),
            Err(detail) => {
                let note = if EXPECTED_FAILURES.contains(&id) {
                    " [expected failure]"
                } else {
                    unexpected += 1;
                    ""
                };
                println!("FAIL [{id:>2}] {title} ({secs:.1}s){note}: {detail}");
            }
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    }
}
