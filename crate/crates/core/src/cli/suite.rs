//! Self-check suite behind `validate`.

use crate::distributions::{
    gaussian_increment, lifetime_density, lifetime_survival, LifetimeParams, RngStream,
};
use crate::error::Result;
use crate::estimators::{Estimator, PerturbedLinear, UnbiasedNonlinear, UnbiasedTransport};
use crate::mesh_path::{build_mesh, SigmaSchedule};
use crate::montecarlo::{run_estimate, McConfig, RunningStats};
use crate::problems::{
    builtin, perturbed_closed_form, quadrature::integrate, validate_problem, BUILTIN_NAMES,
};
use crate::weights::{weight_w1, weight_w2};

/// Statistical checks pass when within this many standard errors.
const Z_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    fn within(name: &'static str, value: f64, target: f64, se: f64) -> Self {
        let z = (value - target) / se;
        Self::new(
            name,
            z.abs() <= Z_LIMIT,
            format!("{value:.6} vs {target:.6} (z = {z:+.2})"),
        )
    }
}

fn failed(name: &'static str, err: crate::error::Error) -> Check {
    Check::new(name, false, err.to_string())
}

/// `∫_0^s f` via `τ = u²`, which removes the `τ^{-1/2}` singularity.
fn cdf_by_quadrature(params: &LifetimeParams, s: f64) -> f64 {
    integrate(
        |u| {
            let u = u.max(1e-150);
            2.0 * u * params.density_unchecked(u * u)
        },
        0.0,
        s.sqrt(),
        1e-13,
    )
}

fn lifetime_checks(checks: &mut Vec<Check>) {
    let params = LifetimeParams::reference();
    let total = cdf_by_quadrature(&params, 200.0);
    checks.push(Check::new(
        "lifetime density integrates to one",
        (total - 1.0).abs() < 1e-8,
        format!("integral {total:.12}"),
    ));
    let worst = [0.05, 0.3, 1.0, 2.5, 7.0]
        .iter()
        .map(|&s| {
            let direct = lifetime_survival(&params, s).unwrap_or(f64::NAN);
            (direct - (1.0 - cdf_by_quadrature(&params, s))).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "survival equals one minus integrated density",
        worst < 1e-10,
        format!("largest gap {worst:.2e}"),
    ));
    let positive = [1e-6, 0.5, 3.0]
        .iter()
        .all(|&s| lifetime_density(&params, s).is_ok_and(|f| f > 0.0));
    checks.push(Check::new("density positive", positive, String::new()));
}

fn mesh_check(n: u64) -> Check {
    let params = LifetimeParams::reference();
    let mut hits = 0u64;
    for i in 0..n {
        match build_mesh(0.0, 1.0, &params, &mut RngStream::new(11, i)) {
            Ok(mesh) => hits += u64::from(mesh.n_switches() == 0),
            Err(e) => return failed("probability of no switch", e),
        }
    }
    let p = hits as f64 / n as f64;
    let target = libm::erfc(0.5f64.sqrt());
    let se = (target * (1.0 - target) / n as f64).sqrt();
    Check::within("probability of no switch", p, target, se)
}

fn weight_checks(checks: &mut Vec<Check>, n: u64) {
    let (sigma, dt) = (0.7, 0.4);
    let mut w1 = RunningStats::new();
    let mut w2 = RunningStats::new();
    for i in 0..n {
        let dw = gaussian_increment(&mut RngStream::new(12, i), dt);
        w1.push(weight_w1(sigma, dw, dt));
        w2.push(weight_w2(sigma, dw, dt));
    }
    checks.push(Check::within(
        "first order weight has mean zero",
        w1.mean(),
        0.0,
        w1.std_error(),
    ));
    checks.push(Check::within(
        "second order weight has mean zero",
        w2.mean(),
        0.0,
        w2.std_error(),
    ));
}

fn problem_checks(checks: &mut Vec<Check>) {
    for name in BUILTIN_NAMES {
        let check = match builtin(name) {
            Ok(b) => {
                let report = validate_problem(&b.problem);
                let residual = report
                    .residual
                    .map_or("none".to_string(), |r| format!("{r:.2e}"));
                Check::new(
                    "built-in problem is consistent",
                    report.all_finite() && report.residual_ok(),
                    format!("{name}: residual {residual}"),
                )
            }
            Err(e) => failed("built-in problem is consistent", e),
        };
        checks.push(check);
    }
}

fn mean_check(name: &'static str, est: Result<impl Estimator>, n: u64, target: f64) -> Check {
    let est = match est {
        Ok(e) => e,
        Err(e) => return failed(name, e),
    };
    let cfg = McConfig {
        n_samples: n,
        master_seed: 13,
        ..McConfig::default()
    };
    match run_estimate(&est, &cfg) {
        Ok(r) if r.poisoned_count > 0 => Check::new(
            name,
            false,
            format!("{} poisoned samples", r.poisoned_count),
        ),
        Ok(r) => Check::within(name, r.mean, target, r.std_error),
        Err(e) => failed(name, e),
    }
}

fn estimator_checks(checks: &mut Vec<Check>, n: u64) -> Result<()> {
    let lin = builtin("paper-linear")?;
    let (t, x) = lin.problem.point();
    let truth = 10.0 * 5f64.cos();
    let schedule = SigmaSchedule::new(lin.sigma0, -1.0, false)?;
    let params = LifetimeParams::reference();
    checks.push(mean_check(
        "unbiased estimator hits the exact value",
        UnbiasedTransport::new(lin.problem.clone(), schedule, params.clone(), (t, x), false),
        n,
        truth,
    ));
    let biased = perturbed_closed_form(&lin.problem, lin.perturbation_sigma0, t, x)?;
    checks.push(mean_check(
        "perturbed estimator hits its closed form",
        PerturbedLinear::new(lin.problem.clone(), lin.perturbation_sigma0, (t, x)),
        n,
        biased,
    ));
    let src = builtin("constant-source")?;
    checks.push(mean_check(
        "nonlinear estimator handles a source term",
        UnbiasedNonlinear::with_default_events(
            src.problem.clone(),
            SigmaSchedule::new(0.1, -1.0, false)?,
            params.clone(),
            src.problem.point(),
            false,
        ),
        n / 2,
        1f64.cos() + 0.5,
    ));

    let est = UnbiasedTransport::new(lin.problem, schedule, params, (t, x), false)?;
    let base = McConfig {
        n_samples: 3 * crate::montecarlo::CHUNK_SIZE + 17,
        master_seed: 14,
        ..McConfig::default()
    };
    let one = run_estimate(
        &est,
        &McConfig {
            threads: Some(1),
            ..base.clone()
        },
    )?;
    let many = run_estimate(
        &est,
        &McConfig {
            threads: Some(3),
            ..base
        },
    )?;
    checks.push(Check::new(
        "results independent of thread count",
        one.same_numbers(&many),
        format!("means {:e} and {:e}", one.mean, many.mean),
    ));
    Ok(())
}

/// Runs every check; `quick` uses smaller sample budgets.
pub fn run_suite(quick: bool) -> Vec<Check> {
    let n = if quick { 100_000 } else { 1_000_000 };
    let mut checks = Vec::new();
    lifetime_checks(&mut checks);
    checks.push(mesh_check(n));
    weight_checks(&mut checks, n);
    problem_checks(&mut checks);
    if let Err(e) = estimator_checks(&mut checks, n) {
        checks.push(failed("estimator setup", e));
    }
    checks
}
