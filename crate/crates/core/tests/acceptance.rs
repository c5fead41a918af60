//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use transport_mc::cli::{load_config, parse_config, EstimatorKind, RunConfig};
use transport_mc::distributions::{sample_gaussian_increment, LifetimeParams, RngStream};
use transport_mc::estimators::{Estimator, UnbiasedTransport};
use transport_mc::mesh_path::{build_mesh, SigmaSchedule};
use transport_mc::montecarlo::{run_estimate, run_study, McConfig, RunningStats, StudyReferences};
use transport_mc::problems::{builtin, ProblemSpec};
use transport_mc::weights::{weight_w1, weight_w2};

const TRUE_LINEAR: f64 = 2.836_622;
const PERTURBED_LINEAR: f64 = 2.822_475;
const TRUE_NONLINEAR: f64 = 0.540_302;
/// `erfc(1/√2) = 2(1 − Φ(1))`.
const NO_SWITCH: f64 = 0.317_310_507_862_914_1;

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn config_file(name: &str) -> RunConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "configs", name]
        .iter()
        .collect();
    load_config(&path).expect("shipped configuration parses")
}

fn z(value: f64, target: f64, se: f64) -> f64 {
    (value - target) / se
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = config_file("paper-linear.toml");
    assert_eq!(cfg.point, (0.0, 10.0));
    assert_eq!(cfg.mc.sample_levels, vec![1_000, 10_000, 100_000]);
    assert_eq!(cfg.mc.n_repeats, 50);
    let unbiased = cfg.estimator(EstimatorKind::Unbiased).unwrap();
    let perturbed = cfg.estimator(EstimatorKind::Perturbed).unwrap();
    let study = run_study(
        &[unbiased.as_ref(), perturbed.as_ref()],
        &cfg.mc,
        cfg.references(),
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let mut passed = elapsed < 120.0;
    let mut parts = Vec::new();
    for row in study.rows_for("unbiased") {
        let zz = z(row.average, TRUE_LINEAR, row.pooled_std_error);
        passed &= zz.abs() <= 3.0 && row.poisoned_count == 0;
        passed &= row.band_low <= row.average && row.average <= row.band_high;
        parts.push(format!(
            "n={} avg={:.5} z={:+.2}",
            row.n_samples, row.average, zz
        ));
    }
    outcome(passed, format!("{} ({elapsed:.1} s)", parts.join("; ")))
}

fn criterion_2() -> Outcome {
    let cfg = config_file("paper-linear.toml");
    assert_eq!(cfg.perturbation_sigma0, 0.1);
    // g(x + T + σ0 Z) averaged: 10 cos(x − 5) e^{−σ0²/2}.
    let closed = 10.0 * 5f64.cos() * (-0.5f64 * 0.01).exp();
    assert!((closed - PERTURBED_LINEAR).abs() < 1e-6);
    let est = cfg.estimator(EstimatorKind::Perturbed).unwrap();
    let mc = McConfig {
        n_samples: 1_000_000,
        ..cfg.mc.clone()
    };
    let r = run_estimate(est.as_ref(), &mc).unwrap();
    let z_closed = z(r.mean, PERTURBED_LINEAR, r.std_error);
    let z_truth = z(r.mean, TRUE_LINEAR, r.std_error);
    outcome(
        z_closed.abs() <= 3.0 && z_truth.abs() > 3.0,
        format!(
            "mean {:.6}, z vs closed form {z_closed:+.2}, gap to truth {:.5} (z {z_truth:+.1})",
            r.mean,
            TRUE_LINEAR - r.mean
        ),
    )
}

fn criterion_3() -> Outcome {
    let params = LifetimeParams::new(0.5, 2.0, false).unwrap();
    let n = 1_000_000u64;
    let hits = (0..n)
        .filter(|&i| {
            build_mesh(0.0, 1.0, &params, &mut RngStream::new(3, i))
                .unwrap()
                .n_switches()
                == 0
        })
        .count();
    let p = hits as f64 / n as f64;
    outcome(
        (p - NO_SWITCH).abs() <= 0.005,
        format!("P[N=0] = {p:.5} vs {NO_SWITCH:.5}"),
    )
}

fn criterion_4() -> Outcome {
    let n = 1_000_000u64;
    let (sigma, dt) = (0.37, 0.61);
    let mut w1 = RunningStats::new();
    let mut w2 = RunningStats::new();
    for i in 0..n {
        let dw = sample_gaussian_increment(&mut RngStream::new(4, i), dt).unwrap();
        w1.push(weight_w1(sigma, dw, dt));
        w2.push(weight_w2(sigma, dw, dt));
    }
    let z1 = z(w1.mean(), 0.0, w1.std_error());
    let z2 = z(w2.mean(), 0.0, w2.std_error());

    let cfg = config_file("paper-linear.toml");
    let d1 = cfg.estimator(EstimatorKind::UnbiasedD1).unwrap();
    let r = run_estimate(
        d1.as_ref(),
        &McConfig {
            n_samples: n,
            ..cfg.mc.clone()
        },
    )
    .unwrap();
    let h = 1e-4;
    let v = |x: f64| 10.0 * (x - 5.0).cos();
    let fd = (v(10.0 + h) - v(10.0 - h)) / (2.0 * h);
    let zd = z(r.mean, fd, r.std_error);
    outcome(
        z1.abs() <= 3.0 && z2.abs() <= 3.0 && zd.abs() <= 3.0 && r.poisoned_count == 0,
        format!(
            "E[W1] z={z1:+.2}, E[W2] z={z2:+.2}, d/dx: {:.4} vs finite difference {fd:.4} (z {zd:+.2})",
            r.mean
        ),
    )
}

/// The representation written out term by term on plain σ products.
fn psi_expansion(
    problem: &ProblemSpec,
    sigma0: f64,
    n_exp: f64,
    path: &transport_mc::mesh_path::PathSample,
) -> f64 {
    let dts = path.mesh.increments();
    let times = path.mesh.times();
    let n = dts.len() - 1;
    let density = |s: f64| (-s / 2.0).exp() / (2.0 * std::f64::consts::PI * s).sqrt();
    let survival = |s: f64| libm::erfc((s / 2.0).sqrt());
    let mut sigma = vec![sigma0];
    for k in 0..n {
        sigma.push(sigma[k] * dts[k].powf(n_exp));
    }
    // Positions are taken from the path; g at |x| ~ 1e6 would amplify last-ulp differences.
    let x = &path.x_values;
    let x_hat = path.x_hat_terminal;
    for k in 0..=n {
        let step = problem.drift_at(times[k], x[k]) * dts[k] + sigma[k] * path.dw[k];
        assert!((x[k] + step - x[k + 1]).abs() <= 1e-9 * (1.0 + x[k + 1].abs()));
    }
    let step_hat = problem.drift_at(times[n], x[n]) * dts[n] - sigma[n] * path.dw[n];
    assert!((x[n] + step_hat - x_hat).abs() <= 1e-9 * (1.0 + x_hat.abs()));
    if n == 0 {
        return problem.g(x[1]) / survival(dts[0]);
    }
    // Legs and weights are 1-based: leg k spans [T_{k-1}, T_k].
    let w1 = |k: usize| path.dw[k - 1] / (sigma[k - 1] * dts[k - 1]);
    let w2 = |k: usize| {
        (path.dw[k - 1].powi(2) - dts[k - 1]) / (sigma[k - 1].powi(2) * dts[k - 1].powi(2))
    };
    let db = |k: usize| problem.drift_at(times[k], x[k]) - problem.drift_at(times[k - 1], x[k - 1]);
    let cv = x[n] + problem.drift_at(times[n], x[n]) * dts[n];
    let g_cv = problem.g(cv);
    let dg = problem.g(x[n + 1]) - g_cv;
    let dg_hat = problem.g(x_hat) - g_cv;
    let last = n + 1;
    let v_last = -0.5 * sigma[n - 1].powi(2) * w2(last);
    let m_last = db(n) * w1(last);
    let head = dg / (2.0 * survival(dts[n])) * (m_last + v_last) / density(dts[n - 1])
        + dg_hat / (2.0 * survival(dts[n])) * (-m_last + v_last) / density(dts[n - 1]);
    let mut product = 1.0;
    for k in 2..=n {
        product *= (db(k - 1) * w1(k) - 0.5 * sigma[k - 2].powi(2) * w2(k)) / density(dts[k - 2]);
    }
    head * product
}

fn criterion_5() -> Outcome {
    let problems = [
        builtin("paper-linear").unwrap().problem,
        ProblemSpec::new("1 + sin(3*t)", "10*cos(x - 6)", 0.0, 1.0)
            .unwrap()
            .with_point(0.0, 10.0)
            .unwrap(),
    ];
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut skipped = 0;
    let mut switched = 0;
    for (p_idx, problem) in problems.iter().enumerate() {
        for &sigma0 in &[0.1, 0.7] {
            let schedule = SigmaSchedule::new(sigma0, -1.0, false).unwrap();
            let est = UnbiasedTransport::new(
                problem.clone(),
                schedule,
                LifetimeParams::reference(),
                (0.0, 10.0),
                false,
            )
            .unwrap();
            let mut i = 0u64;
            let mut done = 0;
            while done < 10_000 / 4 {
                let mut rng = RngStream::new(50 + p_idx as u64, i);
                i += 1;
                let Ok(path) = est.sample_path(&mut rng) else {
                    skipped += 1;
                    continue;
                };
                let lib = est.evaluate(&path);
                if lib.is_poisoned() {
                    skipped += 1;
                    continue;
                }
                let oracle = psi_expansion(problem, sigma0, -1.0, &path);
                let scale = lib.value.abs().max(oracle.abs()).max(f64::MIN_POSITIVE);
                let rel = if lib.value == oracle {
                    0.0
                } else {
                    (lib.value - oracle).abs() / scale
                };
                worst = worst.max(rel);
                switched += usize::from(path.n_switches() >= 2);
                done += 1;
                compared += 1;
            }
        }
    }
    outcome(
        worst <= 1e-10 && switched > 1000,
        format!("{compared} paths ({switched} with two or more switches, {skipped} overflowed), largest relative gap {worst:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let cfg = config_file("paper-linear.toml");
    let est = cfg.estimator(EstimatorKind::Unbiased).unwrap();
    let small = run_estimate(
        est.as_ref(),
        &McConfig {
            n_samples: 100_000,
            master_seed: 6,
            ..cfg.mc.clone()
        },
    )
    .unwrap();
    let large = run_estimate(
        est.as_ref(),
        &McConfig {
            n_samples: 1_000_000,
            master_seed: 6,
            ..cfg.mc.clone()
        },
    )
    .unwrap();
    let (a, b) = (small.second_moment(), large.second_moment());
    let ratio = a / b;
    outcome(
        (ratio - 1.0).abs() <= 0.2 && small.poisoned_count == 0 && large.poisoned_count == 0,
        format!(
            "E[psi^2] {a:.3} at 1e5, {b:.3} at 1e6 (ratio {ratio:.3}), poisoned {}",
            small.poisoned_count + large.poisoned_count
        ),
    )
}

/// Explicit finite differences for `u_t + u_x + ½σ²u_xx + ((u_x)² + u² − 1)/10 = 0`, `u(1,x) = cos(1 − x)`.
fn perturbed_nonlinear_fd(sigma: f64, x0: f64) -> f64 {
    let (half_width, m) = (20.0, 2000usize);
    let h = 2.0 * half_width / m as f64;
    let steps = 20_000usize;
    let dt = 1.0 / steps as f64;
    assert!(0.5 * sigma * sigma * dt / (h * h) < 0.5);
    let xs: Vec<f64> = (0..=m).map(|i| x0 - half_width + i as f64 * h).collect();
    let mut u: Vec<f64> = xs.iter().map(|x| (1.0 - x).cos()).collect();
    let mut next = u.clone();
    for _ in 0..steps {
        for i in 1..m {
            let ux = (u[i + 1] - u[i - 1]) / (2.0 * h);
            let uxx = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
            next[i] =
                u[i] + dt * (ux + 0.5 * sigma * sigma * uxx + 0.1 * (ux * ux + u[i] * u[i] - 1.0));
        }
        next[0] = next[1];
        next[m] = next[m - 1];
        std::mem::swap(&mut u, &mut next);
    }
    u[m / 2]
}

fn criterion_7() -> Outcome {
    let cfg = config_file("paper-nonlinear.toml");
    assert_eq!(cfg.point, (0.0, 1.0));
    let mc = McConfig {
        sample_levels: vec![100_000],
        n_repeats: 100,
        ..cfg.mc.clone()
    };
    let unbiased = cfg.estimator(EstimatorKind::UnbiasedNonlinear).unwrap();
    let branching = cfg.estimator(EstimatorKind::Branching).unwrap();
    let study = run_study(
        &[unbiased.as_ref(), branching.as_ref()],
        &mc,
        cfg.references(),
    )
    .unwrap();
    let a = study.rows_for("unbiased-nonlinear").next().unwrap();
    let za = z(a.average, TRUE_NONLINEAR, a.pooled_std_error);
    let pass_a = za.abs() <= 3.0 && a.poisoned_count == 0;

    let b = study.rows_for("branching").next().unwrap();
    let zb = z(b.average, TRUE_NONLINEAR, b.pooled_std_error);
    let biased = perturbed_nonlinear_fd(cfg.perturbation_sigma0, 1.0);
    let zb_fd = z(b.average, biased, b.pooled_std_error);
    let pass_b = zb.abs() > 3.0 && zb_fd.abs() <= 3.0;

    let half = parse_config(
        "[problem]\nbuiltin = \"paper-nonlinear\"\n[sigma]\nperturbation_sigma0 = 0.5\n[mc]\nseed = 1\n",
    )
    .unwrap();
    let branching_half = half.estimator(EstimatorKind::Branching).unwrap();
    let study_half =
        run_study(&[branching_half.as_ref()], &mc, StudyReferences::default()).unwrap();
    let c = &study_half.rows[0];
    let pass_c = c.exploding_variance();

    outcome(
        pass_a && pass_b && pass_c,
        format!(
            "(a) unbiased {:.5} z={za:+.2}; (b) branching {:.5} z={zb:+.1} vs truth, z={zb_fd:+.2} vs perturbed PDE {biased:.5}; \
             (c) sigma0=0.5 largest share {:.3}, flagged {}",
            a.average,
            b.average,
            c.pooled.max_share(),
            pass_c
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = config_file("paper-linear.toml");
    let unbiased = cfg.estimator(EstimatorKind::Unbiased).unwrap();
    let perturbed = cfg.estimator(EstimatorKind::Perturbed).unwrap();
    let nl = config_file("paper-nonlinear.toml");
    let nonlinear = nl.estimator(EstimatorKind::UnbiasedNonlinear).unwrap();
    let estimators: [&dyn Estimator; 3] =
        [unbiased.as_ref(), perturbed.as_ref(), nonlinear.as_ref()];
    let reports: Vec<_> = [1usize, 4, 8]
        .iter()
        .map(|&threads| {
            let mc = McConfig {
                sample_levels: vec![1_000, 10_000, 30_000],
                n_repeats: 6,
                master_seed: 8,
                threads: Some(threads),
                ..cfg.mc.clone()
            };
            run_study(&estimators, &mc, cfg.references()).unwrap()
        })
        .collect();
    let bits = |r: &transport_mc::montecarlo::StudyReport| -> Vec<u64> {
        r.rows
            .iter()
            .flat_map(|row| {
                row.estimates
                    .iter()
                    .chain(&row.std_errors)
                    .chain([
                        &row.average,
                        &row.band_low,
                        &row.band_high,
                        &row.q_low,
                        &row.q_high,
                    ])
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let same = reports
        .windows(2)
        .all(|w| w[0] == w[1] && bits(&w[0]) == bits(&w[1]));
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        same && elapsed < 30.0,
        format!("threads 1/4/8 identical: {same} ({elapsed:.1} s)"),
    )
}

fn criterion_9() -> Outcome {
    let cfg = parse_config("[problem]\nbuiltin = \"identity-terminal\"\n[mc]\nconfidence = 0.9\n")
        .unwrap();
    let est = cfg.estimator(EstimatorKind::Unbiased).unwrap();
    let truth = cfg.references().true_value.unwrap();
    assert_eq!(truth, 1.0);
    let runs = 200u64;
    let covered = (0..runs)
        .filter(|&r| {
            let mc = McConfig {
                n_samples: 10_000,
                master_seed: 9_000 + r,
                ..cfg.mc.clone()
            };
            let rep = run_estimate(est.as_ref(), &mc).unwrap();
            rep.ci_low <= truth && truth <= rep.ci_high
        })
        .count();
    let rate = covered as f64 / runs as f64;
    outcome(
        (rate - 0.9).abs() <= 0.05,
        format!(
            "{covered}/{runs} intervals cover the exact value ({:.1}%)",
            100.0 * rate
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "linear example unbiased", criterion_1),
        (2, "perturbation bias detected", criterion_2),
        (3, "mesh law", criterion_3),
        (4, "weight identities", criterion_4),
        (5, "representation identity", criterion_5),
        (6, "finite second moment", criterion_6),
        (7, "nonlinear example", criterion_7),
        (8, "determinism across thread counts", criterion_8),
        (9, "confidence interval calibration", criterion_9),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.passed { "PASS" } else { "FAIL" };
        failures += usize::from(!result.passed);
        println!(
            "{tag} criterion {id} ({name}): {} [{:.1} s]",
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
