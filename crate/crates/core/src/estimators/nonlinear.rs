//! Experimental unbiased estimator for polynomial nonlinearities.
//!
//! A particle runs the frozen-coefficient Euler scheme of the linear
//! estimator. At each arrival it either applies the regime-switching
//! correction and continues with the next σ of its schedule, or fires a
//! monomial `c v^a (∂x v)^β` and spawns `a + β` descendants that restart at
//! `σ0`. Each particle carries the weight of its current leg as
//! `c0 + c1 W¹ + r2 (ΔW² − ΔT)/ΔT²`; value descendants start with `(1, 0, 0)`,
//! derivative descendants with `(0, 1, 0)`.

use super::{Estimator, EstimatorSample, EventDistribution, EventKind, PoisonReason};
use super::{DEFAULT_MAX_DEPTH, DEFAULT_MAX_PARTICLES};
use crate::distributions::{gaussian_increment, sample_lifetime, LifetimeParams, RngStream};
use crate::error::{Error, Result};
use crate::mesh_path::SigmaSchedule;
use crate::problems::ProblemSpec;
use crate::weights::SwitchForm;

#[derive(Debug, Clone)]
pub struct UnbiasedNonlinear {
    problem: ProblemSpec,
    schedule: SigmaSchedule,
    params: LifetimeParams,
    events: EventDistribution,
    point: (f64, f64),
    form: SwitchForm,
    max_depth: usize,
    max_particles: usize,
}

#[derive(Debug, Clone, Copy)]
struct LegWeight {
    c0: f64,
    c1: f64,
    r2: f64,
}

impl LegWeight {
    const VALUE: Self = Self {
        c0: 1.0,
        c1: 0.0,
        r2: 0.0,
    };
    const DERIVATIVE: Self = Self {
        c0: 0.0,
        c1: 1.0,
        r2: 0.0,
    };
}

struct Walk<'a> {
    rng: &'a mut RngStream,
    particles: usize,
    events: usize,
}

impl UnbiasedNonlinear {
    pub fn new(
        problem: ProblemSpec,
        events: EventDistribution,
        schedule: SigmaSchedule,
        params: LifetimeParams,
        point: (f64, f64),
        unsafe_variance: bool,
    ) -> Result<Self> {
        if events.correction().is_none() {
            return Err(Error::config(
                "the unbiased nonlinear estimator needs positive probability on the correction event",
            ));
        }
        events.check_against(&problem)?;
        if problem.has_space_dependent_drift() && !unsafe_variance {
            return Err(Error::config(
                "space-dependent drift has no variance guarantee; set unsafe_variance = true to allow it",
            ));
        }
        problem.check_point(point.0, point.1)?;
        Ok(Self {
            problem,
            schedule,
            params,
            events,
            point,
            form: SwitchForm::Full,
            max_depth: DEFAULT_MAX_DEPTH,
            max_particles: DEFAULT_MAX_PARTICLES,
        })
    }

    /// Uniform law over the correction and every monomial.
    pub fn with_default_events(
        problem: ProblemSpec,
        schedule: SigmaSchedule,
        params: LifetimeParams,
        point: (f64, f64),
        unsafe_variance: bool,
    ) -> Result<Self> {
        let events = EventDistribution::default_for(&problem, true)?;
        Self::new(problem, events, schedule, params, point, unsafe_variance)
    }

    pub fn with_form(mut self, form: SwitchForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_limits(mut self, max_depth: usize, max_particles: usize) -> Self {
        self.max_depth = max_depth;
        self.max_particles = max_particles;
        self
    }

    pub fn events(&self) -> &EventDistribution {
        &self.events
    }

    pub fn schedule(&self) -> &SigmaSchedule {
        &self.schedule
    }

    /// Runs one particle from every start point in `ys` with shared randomness.
    ///
    /// The draws never depend on the position, so the returned values are the
    /// same sub-tree evaluated at each start, which keeps differences between
    /// nearby starts small.
    fn particle(
        &self,
        walk: &mut Walk<'_>,
        s: f64,
        ys: &[f64],
        log_sigma: f64,
        legs: &[LegWeight],
        depth: usize,
    ) -> std::result::Result<Vec<f64>, PoisonReason> {
        walk.particles += ys.len();
        if walk.particles > self.max_particles {
            return Err(PoisonReason::ParticleCap);
        }
        let sigma = log_sigma.exp();
        if !sigma.is_finite() {
            return Err(PoisonReason::Overflow);
        }
        let t_end = self.problem.t_end();
        let tau = sample_lifetime(&self.params, walk.rng);
        let survived = tau >= t_end - s || s + tau >= t_end;
        let dt = if survived { t_end - s } else { tau };
        let dw = gaussian_increment(walk.rng, dt);
        let shock = sigma * dw;
        let w1 = dw / (sigma * dt);
        let w2_ratio = (dw * dw - dt) / (dt * dt);

        let mut drifts = Vec::with_capacity(ys.len());
        for &y in ys {
            let b = self.problem.drift_at(s, y);
            if !b.is_finite() {
                return Err(PoisonReason::NonFinite);
            }
            drifts.push(b);
        }

        if survived {
            let survival = self.params.survival_unchecked(dt);
            let out = ys
                .iter()
                .zip(&drifts)
                .zip(legs)
                .map(|((&y, &b), leg)| {
                    let base = y + b * dt;
                    let g_plus = self.problem.g(base + shock);
                    let mut payoff = leg.c0 * g_plus;
                    if leg.c1 != 0.0 || leg.r2 != 0.0 {
                        let g_cv = self.problem.g(base);
                        let dg = g_plus - g_cv;
                        let dg_hat = self.problem.g(base - shock) - g_cv;
                        payoff += 0.5 * leg.c1 * w1 * (dg - dg_hat)
                            + 0.5 * leg.r2 * w2_ratio * (dg + dg_hat);
                    }
                    payoff / survival
                })
                .collect();
            return Ok(out);
        }

        if depth >= self.max_depth {
            return Err(PoisonReason::DepthCap);
        }
        walk.events += 1;
        let s_next = s + tau;
        let density = self.params.density_unchecked(tau);
        let bases: Vec<f64> = ys.iter().zip(&drifts).map(|(&y, &b)| y + b * tau).collect();
        match self.events.draw(walk.rng) {
            EventKind::Correction => {
                let q = self.events.probability(EventKind::Correction);
                let log_sigma_next = self.schedule.next_log_sigma(log_sigma, tau);
                let ratio_sq = (2.0 * (log_sigma - log_sigma_next)).exp();
                let r2 = self.form.combine(0.0, -0.5 * ratio_sq);
                let plus: Vec<f64> = bases.iter().map(|&x| x + shock).collect();
                let mut child_legs = Vec::with_capacity(ys.len());
                for (&x, &b) in plus.iter().zip(&drifts) {
                    let delta_b = self.problem.drift_at(s_next, x) - b;
                    child_legs.push(LegWeight {
                        c0: 0.0,
                        c1: delta_b,
                        r2,
                    });
                }
                let v =
                    self.particle(walk, s_next, &plus, log_sigma_next, &child_legs, depth + 1)?;
                Ok(legs
                    .iter()
                    .zip(v)
                    .map(|(leg, v)| (leg.c0 + leg.c1 * w1 + leg.r2 * w2_ratio) * v / (density * q))
                    .collect())
            }
            EventKind::Monomial(i) => {
                let m = self.problem.nonlinearity()[i];
                let q = self.events.probability(EventKind::Monomial(i));
                let k = ys.len();
                let odd = legs.iter().any(|l| l.c1 != 0.0 || l.r2 != 0.0);
                let even = legs.iter().any(|l| l.r2 != 0.0);
                // Starts laid out as [plus | minus | control] blocks of length k.
                let mut starts: Vec<f64> = bases.iter().map(|&x| x + shock).collect();
                if odd || even {
                    starts.extend(bases.iter().map(|&x| x - shock));
                }
                if even {
                    starts.extend_from_slice(&bases);
                }
                let fresh = self.schedule.sigma0().ln();
                let mut product = vec![m.coefficient; starts.len()];
                for (count, leg) in [
                    (m.value_power, LegWeight::VALUE),
                    (m.derivative_power, LegWeight::DERIVATIVE),
                ] {
                    let child_legs = vec![leg; starts.len()];
                    for _ in 0..count {
                        let v =
                            self.particle(walk, s_next, &starts, fresh, &child_legs, depth + 1)?;
                        for (p, v) in product.iter_mut().zip(v) {
                            *p *= v;
                        }
                    }
                }
                let scale = 1.0 / (q * density);
                Ok((0..k)
                    .map(|j| {
                        let leg = legs[j];
                        let plus = product[j];
                        let mut payoff = leg.c0 * plus;
                        if leg.c1 != 0.0 || leg.r2 != 0.0 {
                            let minus = product[k + j];
                            payoff += 0.5 * leg.c1 * w1 * (plus - minus);
                            if leg.r2 != 0.0 {
                                let control = product[2 * k + j];
                                payoff += leg.r2 * w2_ratio * (0.5 * (plus + minus) - control);
                            }
                        }
                        payoff * scale
                    })
                    .collect())
            }
        }
    }
}

impl Estimator for UnbiasedNonlinear {
    fn name(&self) -> &str {
        "unbiased-nonlinear"
    }

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
        let (t, x) = self.point;
        let mut walk = Walk {
            rng,
            particles: 0,
            events: 0,
        };
        let root = self.schedule.sigma0().ln();
        let result = self.particle(&mut walk, t, &[x], root, &[LegWeight::VALUE], 0);
        let mut out = match result {
            Ok(v) => EstimatorSample::plain(v[0]),
            Err(reason) => EstimatorSample::poisoned(reason),
        };
        out.n_switches = walk.events;
        out.check_finite();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::builtin;

    fn mean_se<E: Estimator>(est: &E, seed: u64, n: u64) -> (f64, f64) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let s = est.sample(&mut RngStream::new(seed, i));
            assert!(!s.is_poisoned());
            s1 += s.value;
            s2 += s.value * s.value;
        }
        let mean = s1 / n as f64;
        (mean, ((s2 / n as f64 - mean * mean) / n as f64).sqrt())
    }

    #[test]
    fn requires_correction_event() {
        let p = builtin("paper-nonlinear").unwrap().problem;
        let ev = EventDistribution::uniform(3, false).unwrap();
        let sched = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        assert!(UnbiasedNonlinear::new(
            p,
            ev,
            sched,
            LifetimeParams::reference(),
            (0.0, 1.0),
            false
        )
        .is_err());
    }

    #[test]
    fn source_term_mean() {
        let p = builtin("constant-source").unwrap().problem;
        let sched = SigmaSchedule::new(0.1, -1.0, false).unwrap();
        let est = UnbiasedNonlinear::with_default_events(
            p,
            sched,
            LifetimeParams::reference(),
            (0.0, 0.0),
            false,
        )
        .unwrap();
        let (mean, se) = mean_se(&est, 5, 200_000);
        let target = 1f64.cos() + 0.5;
        assert!(
            (mean - target).abs() < 4.0 * se,
            "{mean} vs {target} (se {se})"
        );
    }
}
