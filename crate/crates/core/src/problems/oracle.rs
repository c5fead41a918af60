use super::expr::{BinOp, Func, Node};
use super::quadrature::integrate;
use super::ProblemSpec;
use crate::error::{Error, Result};

const QUAD_TOL: f64 = 1e-12;
const RESIDUAL_STEP: f64 = 1e-5;
const RESIDUAL_TOL: f64 = 1e-4;
const GRID: usize = 50;

/// `∫_t^T b(s) ds` for a time-only drift.
pub fn drift_integral(problem: &ProblemSpec, t: f64) -> Result<f64> {
    if problem.has_space_dependent_drift() {
        return Err(Error::Unsupported(
            "the drift depends on x; only time-dependent drifts have a closed characteristic"
                .into(),
        ));
    }
    let t_end = problem.t_end();
    if let Node::Const(b) = problem.drift().node() {
        return Ok(b * (t_end - t));
    }
    Ok(integrate(|s| problem.drift_at(s, 0.0), t, t_end, QUAD_TOL))
}

/// `g(x + ∫_t^T b)`, the solution of the linear transport problem.
pub fn characteristics_solution(problem: &ProblemSpec, t: f64, x: f64) -> Result<f64> {
    if !problem.is_linear() {
        return Err(Error::Unsupported(
            "characteristics oracle requires a problem without nonlinearity".into(),
        ));
    }
    Ok(problem.g(x + drift_integral(problem, t)?))
}

/// `E[g(x + ∫b + σ0 √(T−t) Z)]` in closed form for terminals built from
/// affine terms and `A cos(kx + φ)`, `A sin(kx + φ)`.
pub fn perturbed_closed_form(problem: &ProblemSpec, sigma0: f64, t: f64, x: f64) -> Result<f64> {
    if !problem.is_linear() {
        return Err(Error::Unsupported(
            "closed-form perturbation requires a linear problem".into(),
        ));
    }
    if !(sigma0 >= 0.0) {
        return Err(Error::domain(format!(
            "sigma0 must be nonnegative, got {sigma0}"
        )));
    }
    let terms = trig_terms(problem.terminal().node()).ok_or_else(|| {
        Error::Unsupported(format!(
            "no closed form for terminal `{}`; expected sums of A*cos(k*x+p), A*sin(k*x+p) and affine terms",
            problem.terminal()
        ))
    })?;
    let y = x + drift_integral(problem, t)?;
    let variance = sigma0 * sigma0 * (problem.t_end() - t);
    Ok(terms.iter().map(|term| term.smoothed(y, variance)).sum())
}

/// `cos(t − x)`, the solution of the reference nonlinear problem.
pub fn analytic_nonlinear_solution(t: f64, x: f64) -> f64 {
    (t - x).cos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    Affine { slope: f64, intercept: f64 },
    Cos { amp: f64, k: f64, phase: f64 },
    Sin { amp: f64, k: f64, phase: f64 },
}

impl Term {
    fn scaled(self, c: f64) -> Self {
        match self {
            Term::Affine { slope, intercept } => Term::Affine {
                slope: c * slope,
                intercept: c * intercept,
            },
            Term::Cos { amp, k, phase } => Term::Cos {
                amp: c * amp,
                k,
                phase,
            },
            Term::Sin { amp, k, phase } => Term::Sin {
                amp: c * amp,
                k,
                phase,
            },
        }
    }

    /// Expectation at `y + √variance · Z`.
    fn smoothed(self, y: f64, variance: f64) -> f64 {
        match self {
            Term::Affine { slope, intercept } => slope * y + intercept,
            Term::Cos { amp, k, phase } => {
                amp * (-0.5 * k * k * variance).exp() * (k * y + phase).cos()
            }
            Term::Sin { amp, k, phase } => {
                amp * (-0.5 * k * k * variance).exp() * (k * y + phase).sin()
            }
        }
    }
}

fn constant(node: &Node) -> Option<f64> {
    node.is_constant().then(|| node.eval(0.0, 0.0))
}

fn affine(node: &Node) -> Option<(f64, f64)> {
    if let Some(c) = constant(node) {
        return Some((0.0, c));
    }
    match node {
        Node::X => Some((1.0, 0.0)),
        Node::Neg(a) => affine(a).map(|(s, i)| (-s, -i)),
        Node::Bin(op, a, b) => match op {
            BinOp::Add | BinOp::Sub => {
                let (sa, ia) = affine(a)?;
                let (sb, ib) = affine(b)?;
                let sign = if *op == BinOp::Add { 1.0 } else { -1.0 };
                Some((sa + sign * sb, ia + sign * ib))
            }
            BinOp::Mul => {
                if let Some(c) = constant(a) {
                    affine(b).map(|(s, i)| (c * s, c * i))
                } else {
                    let c = constant(b)?;
                    affine(a).map(|(s, i)| (c * s, c * i))
                }
            }
            BinOp::Div => {
                let c = constant(b)?;
                affine(a).map(|(s, i)| (s / c, i / c))
            }
            BinOp::Pow => None,
        },
        _ => None,
    }
}

fn trig_terms(node: &Node) -> Option<Vec<Term>> {
    if node.uses_t() {
        return None;
    }
    if let Some((slope, intercept)) = affine(node) {
        return Some(vec![Term::Affine { slope, intercept }]);
    }
    match node {
        Node::Call(func, arg) => {
            let (k, phase) = affine(arg)?;
            match func {
                Func::Cos => Some(vec![Term::Cos { amp: 1.0, k, phase }]),
                Func::Sin => Some(vec![Term::Sin { amp: 1.0, k, phase }]),
                Func::Exp => None,
            }
        }
        Node::Neg(a) => Some(trig_terms(a)?.into_iter().map(|t| t.scaled(-1.0)).collect()),
        Node::Bin(op, a, b) => match op {
            BinOp::Add => {
                let mut out = trig_terms(a)?;
                out.extend(trig_terms(b)?);
                Some(out)
            }
            BinOp::Sub => {
                let mut out = trig_terms(a)?;
                out.extend(trig_terms(b)?.into_iter().map(|t| t.scaled(-1.0)));
                Some(out)
            }
            BinOp::Mul => {
                let (c, other) = match (constant(a), constant(b)) {
                    (Some(c), _) => (c, b),
                    (_, Some(c)) => (c, a),
                    _ => return None,
                };
                Some(
                    trig_terms(other)?
                        .into_iter()
                        .map(|t| t.scaled(c))
                        .collect(),
                )
            }
            BinOp::Div => {
                let c = constant(b)?;
                Some(
                    trig_terms(a)?
                        .into_iter()
                        .map(|t| t.scaled(1.0 / c))
                        .collect(),
                )
            }
            BinOp::Pow => None,
        },
        _ => None,
    }
}

/// Outcome of [`validate_problem`]; warnings never abort a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub drift_bound: f64,
    pub drift_lipschitz: f64,
    pub g_bound: f64,
    pub g1_bound: f64,
    pub g2_bound: f64,
    /// Largest PDE residual of the analytic solution over the grid, if one is given.
    pub residual: Option<f64>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn residual_ok(&self) -> bool {
        self.residual.is_none_or(|r| r < RESIDUAL_TOL)
    }

    pub fn all_finite(&self) -> bool {
        [
            self.drift_bound,
            self.drift_lipschitz,
            self.g_bound,
            self.g1_bound,
            self.g2_bound,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty() && self.residual_ok() && self.all_finite()
    }
}

fn sup_abs<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let mut sup = 0.0f64;
    for i in 0..=n {
        let v = f(lo + (hi - lo) * i as f64 / n as f64).abs();
        if v.is_nan() {
            return f64::INFINITY;
        }
        sup = sup.max(v);
    }
    sup
}

/// Samples the bounds and Lipschitz constants the representation relies on,
/// and checks any analytic solution against the PDE by finite differences.
pub fn validate_problem(problem: &ProblemSpec) -> ValidationReport {
    let (t0, t1) = problem.horizon();
    let (lo, hi) = problem.working_interval();
    let mut warnings = Vec::new();
    let n = 1000;

    let mut drift_lipschitz = 0.0f64;
    let mut drift_bound = 0.0f64;
    let x_probe = problem.point().1;
    let mut prev = problem.drift_at(t0, x_probe);
    for i in 0..=n {
        let s = t0 + (t1 - t0) * i as f64 / n as f64;
        let b = problem.drift_at(s, x_probe);
        drift_bound = drift_bound.max(if b.is_nan() { f64::INFINITY } else { b.abs() });
        if i > 0 {
            let q = (b - prev).abs() / ((t1 - t0) / n as f64);
            drift_lipschitz = drift_lipschitz.max(if q.is_nan() { f64::INFINITY } else { q });
        }
        prev = b;
    }
    if problem.has_space_dependent_drift() {
        warnings.push("drift depends on x; variance guarantees do not cover this case".into());
    }

    let g_bound = sup_abs(|x| problem.g(x), lo, hi, n);
    let g1_bound = sup_abs(|x| problem.g1(x), lo, hi, n);
    let g2_bound = sup_abs(|x| problem.g2(x), lo, hi, n);

    // Growth probe: a bounded terminal keeps the same sup on a much wider window.
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let wide = sup_abs(
        |x| problem.g(x),
        mid - 100.0 * half,
        mid + 100.0 * half,
        100 * n,
    );
    if !wide.is_finite() || wide > 2.0 * g_bound.max(1.0) {
        warnings.push(format!(
            "terminal `{}` appears unbounded: sup |g| grows from {g_bound:.6e} to {wide:.6e} on a 100x wider window",
            problem.terminal()
        ));
    }
    if !problem.has_exact_derivatives() {
        warnings.push(format!(
            "terminal derivatives not supplied; using central differences with step {:e}",
            super::DERIVATIVE_STEP
        ));
    }
    for (label, v) in [
        ("b", drift_bound),
        ("Lipschitz(b)", drift_lipschitz),
        ("g", g_bound),
        ("g'", g1_bound),
        ("g''", g2_bound),
    ] {
        if !v.is_finite() {
            warnings.push(format!("{label} is not finite on the working interval"));
        }
    }

    let residual = problem.solution().map(|_| pde_residual(problem));
    if let Some(r) = residual {
        if !(r < RESIDUAL_TOL) {
            warnings.push(format!(
                "analytic solution leaves a PDE residual of {r:.3e}"
            ));
        }
    }

    ValidationReport {
        drift_bound,
        drift_lipschitz,
        g_bound,
        g1_bound,
        g2_bound,
        residual,
        warnings,
    }
}

/// Max over a grid of `|∂t v + b ∂x v + F(v, ∂x v)|` for the analytic solution.
fn pde_residual(problem: &ProblemSpec) -> f64 {
    let v = |t: f64, x: f64| problem.solution_at(t, x).unwrap_or(f64::NAN);
    let (t0, t1) = problem.horizon();
    let (lo, hi) = problem.working_interval();
    let h = RESIDUAL_STEP;
    let mut worst = 0.0f64;
    for i in 0..GRID {
        // Interior in time so the stencil stays inside the horizon.
        let t = t0 + (t1 - t0) * (i as f64 + 0.5) / GRID as f64;
        for j in 0..GRID {
            let x = lo + (hi - lo) * j as f64 / (GRID - 1) as f64;
            let vt = (v(t + h, x) - v(t - h, x)) / (2.0 * h);
            let vx = (v(t, x + h) - v(t, x - h)) / (2.0 * h);
            let r = vt + problem.drift_at(t, x) * vx + problem.nonlinearity_at(v(t, x), vx);
            worst = worst.max(if r.is_nan() { f64::INFINITY } else { r.abs() });
        }
    }
    worst
}
