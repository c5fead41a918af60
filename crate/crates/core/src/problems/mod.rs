//! Problem definitions and deterministic reference solutions.
//!
//! A problem is the terminal value problem
//!
//! ```text
//! ∂t v + b(t) ∂x v + Σ_m c_m v^{a_m} (∂x v)^{β_m} = 0,   v(T, x) = g(x)
//! ```
//!
//! with `b` and `g` given as expressions.

pub mod expr;
mod oracle;
pub mod quadrature;

pub use expr::Expression;
pub use oracle::{
    analytic_nonlinear_solution, characteristics_solution, drift_integral, perturbed_closed_form,
    validate_problem, ValidationReport,
};

use crate::error::{Error, Result};

/// Step of the central differences used when `g′` or `g″` is not supplied.
pub const DERIVATIVE_STEP: f64 = 1e-6;

/// The names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = [
    "paper-linear",
    "paper-nonlinear",
    "identity-terminal",
    "constant-source",
];

/// One term `c · v^a · (∂x v)^β` of the nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub value_power: u32,
    pub derivative_power: u32,
}

impl Monomial {
    pub fn new(coefficient: f64, value_power: u32, derivative_power: u32) -> Self {
        Self {
            coefficient,
            value_power,
            derivative_power,
        }
    }

    pub fn eval(&self, v: f64, dv: f64) -> f64 {
        self.coefficient * v.powi(self.value_power as i32) * dv.powi(self.derivative_power as i32)
    }

    /// Number of descendants spawned when this term fires in a branching scheme.
    pub fn n_children(&self) -> usize {
        (self.value_power + self.derivative_power) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    name: Option<String>,
    drift: Expression,
    terminal: Expression,
    terminal_d1: Option<Expression>,
    terminal_d2: Option<Expression>,
    t_start: f64,
    t_end: f64,
    nonlinearity: Vec<Monomial>,
    solution: Option<Expression>,
    working_interval: (f64, f64),
    point: (f64, f64),
}

impl ProblemSpec {
    /// A linear problem with drift `b(t)` and terminal `g(x)` on `[t_start, t_end]`.
    /// The evaluation point defaults to `(t_start, 0)`.
    pub fn new(drift: &str, terminal: &str, t_start: f64, t_end: f64) -> Result<Self> {
        let drift = Expression::parse(drift)?;
        let terminal = Expression::parse(terminal)?;
        if terminal.uses_t() {
            return Err(Error::config(format!(
                "terminal condition `{terminal}` must depend on x only"
            )));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(Error::config(format!(
                "horizon must satisfy t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        Ok(Self {
            name: None,
            drift,
            terminal,
            terminal_d1: None,
            terminal_d2: None,
            t_start,
            t_end,
            nonlinearity: Vec::new(),
            solution: None,
            working_interval: (-10.0, 10.0),
            point: (t_start, 0.0),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_derivatives(mut self, d1: Option<&str>, d2: Option<&str>) -> Result<Self> {
        self.terminal_d1 = d1.map(Expression::parse).transpose()?;
        self.terminal_d2 = d2.map(Expression::parse).transpose()?;
        for e in self.terminal_d1.iter().chain(&self.terminal_d2) {
            if e.uses_t() {
                return Err(Error::config(format!(
                    "terminal derivative `{e}` must depend on x only"
                )));
            }
        }
        Ok(self)
    }

    pub fn with_solution(mut self, solution: &str) -> Result<Self> {
        self.solution = Some(Expression::parse(solution)?);
        Ok(self)
    }

    pub fn with_nonlinearity(mut self, monomials: Vec<Monomial>) -> Result<Self> {
        if let Some(m) = monomials.iter().find(|m| !m.coefficient.is_finite()) {
            return Err(Error::config(format!(
                "monomial coefficient must be finite, got {}",
                m.coefficient
            )));
        }
        self.nonlinearity = monomials;
        Ok(self)
    }

    pub fn with_point(mut self, t: f64, x: f64) -> Result<Self> {
        self.point = (t, x);
        self.check_point(t, x)?;
        Ok(self)
    }

    pub fn with_working_interval(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(Error::config(format!(
                "working interval must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        self.working_interval = (lo, hi);
        Ok(self)
    }

    /// Checks that `(t, x)` lies in the problem's domain `[t_start, t_end) × ℝ`.
    pub fn check_point(&self, t: f64, x: f64) -> Result<()> {
        if !(t >= self.t_start && t < self.t_end) || !x.is_finite() {
            return Err(Error::domain(format!(
                "evaluation point ({t}, {x}) must satisfy {} <= t < {}",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn drift(&self) -> &Expression {
        &self.drift
    }

    pub fn terminal(&self) -> &Expression {
        &self.terminal
    }

    pub fn terminal_d1(&self) -> Option<&Expression> {
        self.terminal_d1.as_ref()
    }

    pub fn terminal_d2(&self) -> Option<&Expression> {
        self.terminal_d2.as_ref()
    }

    pub fn solution(&self) -> Option<&Expression> {
        self.solution.as_ref()
    }

    pub fn nonlinearity(&self) -> &[Monomial] {
        &self.nonlinearity
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn point(&self) -> (f64, f64) {
        self.point
    }

    pub fn working_interval(&self) -> (f64, f64) {
        self.working_interval
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_empty()
    }

    pub fn has_space_dependent_drift(&self) -> bool {
        self.drift.uses_x()
    }

    pub fn has_exact_derivatives(&self) -> bool {
        self.terminal_d1.is_some() && self.terminal_d2.is_some()
    }

    #[inline]
    pub fn drift_at(&self, t: f64, x: f64) -> f64 {
        self.drift.eval(t, x)
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        self.terminal.eval(self.t_end, x)
    }

    pub fn g1(&self, x: f64) -> f64 {
        match &self.terminal_d1 {
            Some(d) => d.eval(self.t_end, x),
            None => {
                (self.g(x + DERIVATIVE_STEP) - self.g(x - DERIVATIVE_STEP))
                    / (2.0 * DERIVATIVE_STEP)
            }
        }
    }

    pub fn g2(&self, x: f64) -> f64 {
        match &self.terminal_d2 {
            Some(d) => d.eval(self.t_end, x),
            None => {
                let h = DERIVATIVE_STEP;
                (self.g(x + h) - 2.0 * self.g(x) + self.g(x - h)) / (h * h)
            }
        }
    }

    pub fn solution_at(&self, t: f64, x: f64) -> Option<f64> {
        self.solution.as_ref().map(|s| s.eval(t, x))
    }

    /// `Σ_m c_m v^a (∂x v)^β`.
    pub fn nonlinearity_at(&self, v: f64, dv: f64) -> f64 {
        self.nonlinearity.iter().map(|m| m.eval(v, dv)).sum()
    }
}

/// A named problem together with its suggested diffusion levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Builtin {
    pub problem: ProblemSpec,
    /// `σ0` of the unbiased estimator.
    pub sigma0: f64,
    /// `σ0` of the perturbation baselines.
    pub perturbation_sigma0: f64,
}

pub fn builtin(name: &str) -> Result<Builtin> {
    let (problem, sigma0, perturbation_sigma0) = match name {
        "paper-linear" => (
            ProblemSpec::new("1", "10*cos(x - 1 - 5)", 0.0, 1.0)?
                .with_derivatives(Some("-10*sin(x - 1 - 5)"), Some("-10*cos(x - 1 - 5)"))?
                .with_solution("10*cos(x - t - 5)")?
                .with_working_interval(0.0, 20.0)?
                .with_point(0.0, 10.0)?,
            0.1,
            0.1,
        ),
        "paper-nonlinear" => (
            ProblemSpec::new("1", "cos(1 - x)", 0.0, 1.0)?
                .with_derivatives(Some("sin(1 - x)"), Some("-cos(1 - x)"))?
                .with_solution("cos(t - x)")?
                .with_nonlinearity(vec![
                    Monomial::new(0.1, 0, 2),
                    Monomial::new(0.1, 2, 0),
                    Monomial::new(-0.1, 0, 0),
                ])?
                .with_working_interval(-5.0, 5.0)?
                .with_point(0.0, 1.0)?,
            0.1,
            1.0,
        ),
        "identity-terminal" => (
            ProblemSpec::new("1", "x", 0.0, 1.0)?
                .with_derivatives(Some("1"), Some("0"))?
                .with_solution("x + 1 - t")?
                .with_working_interval(-5.0, 5.0)?
                .with_point(0.0, 0.0)?,
            1.0,
            1.0,
        ),
        "constant-source" => (
            ProblemSpec::new("1", "cos(x)", 0.0, 1.0)?
                .with_derivatives(Some("-sin(x)"), Some("-cos(x)"))?
                .with_solution("cos(x + 1 - t) + 0.5*(1 - t)")?
                .with_nonlinearity(vec![Monomial::new(0.5, 0, 0)])?
                .with_working_interval(-5.0, 5.0)?
                .with_point(0.0, 0.0)?,
            1.0,
            1.0,
        ),
        other => {
            return Err(Error::config(format!(
                "unknown built-in problem `{other}`; known: {}",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(Builtin {
        problem: problem.with_name(name),
        sigma0,
        perturbation_sigma0,
    })
}
