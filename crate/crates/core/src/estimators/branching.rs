//! Perturbation baselines: the Laplacian `½σ0²∂xx` is added to the PDE and
//! the resulting second order problem is simulated exactly. Both converge to
//! the perturbed solution, not the transport one.

use super::{
    DriftIntegral, Estimator, EstimatorSample, EventDistribution, EventKind, PoisonReason,
};
use super::{DEFAULT_MAX_DEPTH, DEFAULT_MAX_PARTICLES};
use crate::distributions::{
    gaussian_increment, sample_lifetime, standard_normal, LifetimeParams, RngStream,
};
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;

/// `g(x + ∫_t^T b + σ0 √(T−t) Z)`.
#[derive(Debug, Clone)]
pub struct PerturbedLinear {
    problem: ProblemSpec,
    sigma0: f64,
    point: (f64, f64),
    mean: f64,
    scale: f64,
}

impl PerturbedLinear {
    pub fn new(problem: ProblemSpec, sigma0: f64, point: (f64, f64)) -> Result<Self> {
        if !problem.is_linear() {
            return Err(Error::Unsupported(
                "the linear perturbation baseline needs a linear problem".into(),
            ));
        }
        if !(sigma0 >= 0.0 && sigma0.is_finite()) {
            return Err(Error::config(format!(
                "sigma0 must be nonnegative, got {sigma0}"
            )));
        }
        problem.check_point(point.0, point.1)?;
        let drift = DriftIntegral::new(&problem)?;
        let mean = point.1 + drift.between(point.0, problem.t_end());
        let scale = sigma0 * (problem.t_end() - point.0).sqrt();
        Ok(Self {
            problem,
            sigma0,
            point,
            mean,
            scale,
        })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn point(&self) -> (f64, f64) {
        self.point
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }
}

impl Estimator for PerturbedLinear {
    fn name(&self) -> &str {
        "perturbed"
    }

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
        let z = standard_normal(rng);
        EstimatorSample::plain(self.problem.g(self.mean + self.scale * z))
    }
}

/// Branching estimator of the perturbed semilinear PDE
/// `∂t v + b ∂x v + ½σ0² ∂xx v + Σ c v^a (∂x v)^β = 0`.
///
/// Every particle carries mark 0 (value) or 1 (first derivative). A mark 1
/// particle multiplies its payoff by `W¹` of its own life.
#[derive(Debug, Clone)]
pub struct BranchingSemilinear {
    problem: ProblemSpec,
    sigma0: f64,
    params: LifetimeParams,
    events: EventDistribution,
    point: (f64, f64),
    drift: DriftIntegral,
    max_depth: usize,
    max_particles: usize,
}

struct Walk<'a> {
    rng: &'a mut RngStream,
    particles: usize,
    events: usize,
}

impl BranchingSemilinear {
    pub fn new(
        problem: ProblemSpec,
        sigma0: f64,
        events: EventDistribution,
        params: LifetimeParams,
        point: (f64, f64),
    ) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::config(format!(
                "sigma0 must be positive, got {sigma0}"
            )));
        }
        if events.correction().is_some() {
            return Err(Error::config(
                "the perturbation baseline has no correction event; its law must cover monomials only",
            ));
        }
        if !problem.is_linear() || !events.monomials().is_empty() {
            events.check_against(&problem)?;
        }
        problem.check_point(point.0, point.1)?;
        let drift = DriftIntegral::new(&problem)?;
        Ok(Self {
            problem,
            sigma0,
            params,
            events,
            point,
            drift,
            max_depth: DEFAULT_MAX_DEPTH,
            max_particles: DEFAULT_MAX_PARTICLES,
        })
    }

    /// Uses the uniform event law over the problem's monomials.
    pub fn with_default_events(
        problem: ProblemSpec,
        sigma0: f64,
        params: LifetimeParams,
        point: (f64, f64),
    ) -> Result<Self> {
        let events = if problem.is_linear() {
            EventDistribution::empty()
        } else {
            EventDistribution::default_for(&problem, false)?
        };
        Self::new(problem, sigma0, events, params, point)
    }

    pub fn with_limits(mut self, max_depth: usize, max_particles: usize) -> Self {
        self.max_depth = max_depth;
        self.max_particles = max_particles;
        self
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn events(&self) -> &EventDistribution {
        &self.events
    }

    fn particle(
        &self,
        walk: &mut Walk<'_>,
        s: f64,
        y: f64,
        derivative: bool,
        depth: usize,
    ) -> std::result::Result<f64, PoisonReason> {
        walk.particles += 1;
        if walk.particles > self.max_particles {
            return Err(PoisonReason::ParticleCap);
        }
        let t_end = self.problem.t_end();
        let tau = sample_lifetime(&self.params, walk.rng);
        if tau >= t_end - s || s + tau >= t_end {
            let dt = t_end - s;
            let dw = gaussian_increment(walk.rng, dt);
            let mean = y + self.drift.between(s, t_end);
            let shock = self.sigma0 * dw;
            let survival = self.params.survival_unchecked(dt);
            let g_plus = self.problem.g(mean + shock);
            return Ok(if derivative {
                let g_minus = self.problem.g(mean - shock);
                0.5 * (g_plus - g_minus) / survival * dw / (self.sigma0 * dt)
            } else {
                g_plus / survival
            });
        }
        if depth >= self.max_depth {
            return Err(PoisonReason::DepthCap);
        }
        walk.events += 1;
        let dw = gaussian_increment(walk.rng, tau);
        let s_next = s + tau;
        let y_next = y + self.drift.between(s, s_next) + self.sigma0 * dw;
        let weight = if derivative {
            dw / (self.sigma0 * tau)
        } else {
            1.0
        };
        let EventKind::Monomial(i) = self.events.draw(walk.rng) else {
            unreachable!("no correction event in the perturbation baseline")
        };
        let m = self.problem.nonlinearity()[i];
        let q = self.events.monomials()[i];
        let mut payoff = weight * m.coefficient / (q * self.params.density_unchecked(tau));
        for _ in 0..m.value_power {
            payoff *= self.particle(walk, s_next, y_next, false, depth + 1)?;
        }
        for _ in 0..m.derivative_power {
            payoff *= self.particle(walk, s_next, y_next, true, depth + 1)?;
        }
        Ok(payoff)
    }
}

impl Estimator for BranchingSemilinear {
    fn name(&self) -> &str {
        "branching"
    }

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
        let (t, x) = self.point;
        if self.problem.is_linear() {
            // No event can fire: the payoff is the perturbed terminal value.
            let mean = x + self.drift.between(t, self.problem.t_end());
            let z = standard_normal(rng);
            let scale = self.sigma0 * (self.problem.t_end() - t).sqrt();
            return EstimatorSample::plain(self.problem.g(mean + scale * z));
        }
        let mut walk = Walk {
            rng,
            particles: 0,
            events: 0,
        };
        let result = self.particle(&mut walk, t, x, false, 0);
        let mut out = match result {
            Ok(v) => EstimatorSample::plain(v),
            Err(reason) => EstimatorSample::poisoned(reason),
        };
        out.n_switches = walk.events;
        out.check_finite();
        out
    }
}
