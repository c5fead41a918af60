//! The unbiased regime-switching estimator of linear transport problems and
//! its Malliavin-weight derivatives.

use super::{poison_for, Estimator, EstimatorSample, PoisonReason};
use crate::distributions::{LifetimeParams, RngStream};
use crate::error::{Error, Result};
use crate::mesh_path::{build_mesh, evolve_path, PathSample, SigmaSchedule};
use crate::problems::ProblemSpec;
use crate::weights::{factor_v_from_ratio, weight_w1, weight_w2, SwitchForm, WeightProduct};

/// `ψ`: `g(X̄_T)/F̄(ΔT_1)` without switches, `β · ∏_{k=2}^N P_k` otherwise.
#[derive(Debug, Clone)]
pub struct UnbiasedTransport {
    problem: ProblemSpec,
    schedule: SigmaSchedule,
    params: LifetimeParams,
    point: (f64, f64),
    form: SwitchForm,
}

impl UnbiasedTransport {
    pub fn new(
        problem: ProblemSpec,
        schedule: SigmaSchedule,
        params: LifetimeParams,
        point: (f64, f64),
        unsafe_variance: bool,
    ) -> Result<Self> {
        if !problem.is_linear() {
            return Err(Error::Unsupported(
                "the transport estimator handles linear problems; use the nonlinear estimator"
                    .into(),
            ));
        }
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
            point,
            form: SwitchForm::Full,
        })
    }

    pub fn with_form(mut self, form: SwitchForm) -> Self {
        self.form = form;
        self
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn schedule(&self) -> &SigmaSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &LifetimeParams {
        &self.params
    }

    pub fn point(&self) -> (f64, f64) {
        self.point
    }

    pub fn form(&self) -> SwitchForm {
        self.form
    }

    /// Draws a mesh and the Euler path over it.
    pub fn sample_path(&self, rng: &mut RngStream) -> Result<PathSample> {
        let (t, x) = self.point;
        let mesh = build_mesh(t, self.problem.t_end(), &self.params, rng)?;
        evolve_path(
            &mesh,
            |s, y| self.problem.drift_at(s, y),
            &self.schedule,
            x,
            rng,
        )
    }

    /// `ψ` on a given path.
    pub fn evaluate(&self, path: &PathSample) -> EstimatorSample {
        let n = path.n_switches();
        let dts = path.mesh.increments();
        let last_dt = dts[n];
        let survival = self.params.survival_unchecked(last_dt);
        let mut out = EstimatorSample::plain(0.0);
        out.n_switches = n;
        if n == 0 {
            out.value = self.problem.g(path.x_terminal()) / survival;
            out.check_finite();
            return out;
        }

        let g_cv = self.problem.g(path.cv_point);
        let dg = self.problem.g(path.x_terminal()) - g_cv;
        let dg_hat = self.problem.g(path.x_hat_terminal) - g_cv;
        let (m, v) = self.switch_terms(path, n + 1);
        let denom = survival * self.params.density_unchecked(dts[n - 1]);
        out.beta1 = 0.5 * dg * self.form.combine(m, v) / denom;
        out.beta2 = 0.5 * dg_hat * self.form.combine_antithetic(m, v) / denom;

        let mut product = WeightProduct::identity();
        for k in 2..=n {
            let (m, v) = self.switch_terms(path, k);
            let p = self.form.combine(m, v) / self.params.density_unchecked(dts[k - 2]);
            out.max_abs_p = out.max_abs_p.max(p.abs());
            product = product.accumulate(p);
        }
        let (value, used_log) = product.scale(out.beta1 + out.beta2);
        out.value = value;
        out.used_log_path = used_log;
        if !(out.beta1.is_finite() && out.beta2.is_finite()) {
            out.poison = Some(PoisonReason::Overflow);
        }
        out.check_finite();
        out
    }

    /// `(M_k, V_k)` for leg `k ≥ 2` (1-based).
    fn switch_terms(&self, path: &PathSample, k: usize) -> (f64, f64) {
        let times = path.mesh.times();
        let dt = path.mesh.increments()[k - 1];
        let dw = path.dw[k - 1];
        let log_sigma = path.log_sigma_legs[k - 1];
        let log_sigma_prev = path.log_sigma_legs[k - 2];
        let delta_b = self.problem.drift_at(times[k - 1], path.x_values[k - 1])
            - self.problem.drift_at(times[k - 2], path.x_values[k - 2]);
        let m = delta_b * weight_w1(log_sigma.exp(), dw, dt);
        let ratio_sq = (2.0 * (log_sigma_prev - log_sigma)).exp();
        (m, factor_v_from_ratio(ratio_sq, dw, dt))
    }
}

impl Estimator for UnbiasedTransport {
    fn name(&self) -> &str {
        "unbiased"
    }

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
        match self.sample_path(rng) {
            Ok(path) => self.evaluate(&path),
            Err(e) => EstimatorSample::poisoned(poison_for(&e)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeOrder {
    First,
    Second,
}

impl DerivativeOrder {
    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            1 => Ok(Self::First),
            2 => Ok(Self::Second),
            other => Err(Error::config(format!(
                "derivative order must be 1 or 2, got {other}"
            ))),
        }
    }
}

/// `∂x^i v` via `ψ̃ · W^i_1`, with `Φ_i · W^i_1` on paths without switches.
#[derive(Debug, Clone)]
pub struct DerivativeEstimator {
    inner: UnbiasedTransport,
    order: DerivativeOrder,
}

impl DerivativeEstimator {
    pub fn new(inner: UnbiasedTransport, order: DerivativeOrder) -> Self {
        Self { inner, order }
    }

    pub fn order(&self) -> DerivativeOrder {
        self.order
    }

    pub fn inner(&self) -> &UnbiasedTransport {
        &self.inner
    }

    pub fn evaluate(&self, path: &PathSample) -> EstimatorSample {
        let sigma0 = path.log_sigma_legs[0].exp();
        let (dw, dt) = (path.dw[0], path.mesh.increments()[0]);
        let weight = match self.order {
            DerivativeOrder::First => weight_w1(sigma0, dw, dt),
            DerivativeOrder::Second => weight_w2(sigma0, dw, dt),
        };
        let mut out = if path.n_switches() == 0 {
            let p = &self.inner.problem;
            let g_cv = p.g(path.cv_point);
            let dg = p.g(path.x_terminal()) - g_cv;
            let dg_hat = p.g(path.x_hat_terminal) - g_cv;
            let survival = self.inner.params.survival_unchecked(dt);
            let phi = match self.order {
                DerivativeOrder::First => (dg - dg_hat) / (2.0 * survival),
                DerivativeOrder::Second => (dg + dg_hat) / (2.0 * survival),
            };
            let mut s = EstimatorSample::plain(0.0);
            s.value = phi * weight;
            s
        } else {
            let mut s = self.inner.evaluate(path);
            s.value *= weight;
            s
        };
        out.check_finite();
        out
    }
}

impl Estimator for DerivativeEstimator {
    fn name(&self) -> &str {
        match self.order {
            DerivativeOrder::First => "unbiased-d1",
            DerivativeOrder::Second => "unbiased-d2",
        }
    }

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
        match self.inner.sample_path(rng) {
            Ok(path) => self.evaluate(&path),
            Err(e) => EstimatorSample::poisoned(poison_for(&e)),
        }
    }
}
