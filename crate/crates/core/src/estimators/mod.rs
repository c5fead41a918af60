//! Per-sample payoffs.

mod branching;
mod linear;
mod nonlinear;

pub use branching::{BranchingSemilinear, PerturbedLinear};
pub use linear::{DerivativeEstimator, DerivativeOrder, UnbiasedTransport};
pub use nonlinear::UnbiasedNonlinear;

use std::fmt;

use crate::distributions::{uniform01, RngStream};
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;

/// Default recursion cap of the branching estimators.
pub const DEFAULT_MAX_DEPTH: usize = 50;
/// Default cap on the number of particles of one branching sample.
pub const DEFAULT_MAX_PARTICLES: usize = 100_000;

/// Why a sample was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoisonReason {
    Overflow,
    NonFinite,
    DepthCap,
    ParticleCap,
}

impl fmt::Display for PoisonReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoisonReason::Overflow => "overflow",
            PoisonReason::NonFinite => "non-finite value",
            PoisonReason::DepthCap => "depth cap",
            PoisonReason::ParticleCap => "particle cap",
        })
    }
}

/// One realisation of an estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSample {
    pub value: f64,
    /// Switch count of the mesh, or the number of branching events.
    pub n_switches: usize,
    pub used_log_path: bool,
    /// Largest `|P_k|` along the path.
    pub max_abs_p: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub poison: Option<PoisonReason>,
}

impl EstimatorSample {
    pub fn plain(value: f64) -> Self {
        let mut s = Self {
            value,
            n_switches: 0,
            used_log_path: false,
            max_abs_p: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            poison: None,
        };
        s.check_finite();
        s
    }

    pub fn poisoned(reason: PoisonReason) -> Self {
        Self {
            value: f64::NAN,
            poison: Some(reason),
            ..Self::plain(0.0)
        }
    }

    pub fn is_poisoned(&self) -> bool {
        self.poison.is_some()
    }

    pub(crate) fn check_finite(&mut self) {
        if self.poison.is_none() && !self.value.is_finite() {
            self.poison = Some(PoisonReason::NonFinite);
        }
    }
}

pub(crate) fn poison_for(err: &Error) -> PoisonReason {
    match err {
        Error::Overflow(_) => PoisonReason::Overflow,
        _ => PoisonReason::NonFinite,
    }
}

/// A Monte Carlo estimator: one sample per call, a pure function of the stream.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample;
}

impl<E: Estimator + ?Sized> Estimator for Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
        (**self).sample(rng)
    }
}

/// Event chosen at a branching time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// The regime-switching drift and Laplacian correction.
    Correction,
    /// The monomial with this index in the problem's nonlinearity.
    Monomial(usize),
}

/// Categorical law over event kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDistribution {
    correction: Option<f64>,
    monomials: Vec<f64>,
    cumulative: Vec<f64>,
}

const SUM_TOL: f64 = 1e-12;

impl EventDistribution {
    /// Uniform over `n_monomials` monomials, plus the correction if requested.
    pub fn uniform(n_monomials: usize, with_correction: bool) -> Result<Self> {
        let n = n_monomials + usize::from(with_correction);
        if n == 0 {
            return Err(Error::config(
                "event distribution needs at least one event kind",
            ));
        }
        let q = 1.0 / n as f64;
        Self::from_weights(with_correction.then_some(q), vec![q; n_monomials])
    }

    /// Normalises nonnegative weights; every listed kind must get positive mass.
    pub fn from_weights(correction: Option<f64>, monomials: Vec<f64>) -> Result<Self> {
        let all: Vec<f64> = correction
            .iter()
            .copied()
            .chain(monomials.iter().copied())
            .collect();
        if all.is_empty() {
            return Err(Error::config(
                "event distribution needs at least one event kind",
            ));
        }
        if let Some(w) = all.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::config(format!(
                "event probabilities must be strictly positive and finite, got {w}"
            )));
        }
        let total: f64 = all.iter().sum();
        let correction = correction.map(|w| w / total);
        let monomials: Vec<f64> = monomials.iter().map(|w| w / total).collect();
        let mut cumulative = Vec::with_capacity(all.len());
        let mut acc = 0.0;
        for w in correction.iter().chain(&monomials) {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            correction,
            monomials,
            cumulative,
        })
    }

    /// The law with no event kinds, for problems where no event can fire.
    pub(crate) fn empty() -> Self {
        Self {
            correction: None,
            monomials: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    /// The default law for `problem`: uniform over its monomials and, for the
    /// unbiased scheme, the correction.
    pub fn default_for(problem: &ProblemSpec, with_correction: bool) -> Result<Self> {
        Self::uniform(problem.nonlinearity().len(), with_correction)
    }

    pub fn correction(&self) -> Option<f64> {
        self.correction
    }

    pub fn monomials(&self) -> &[f64] {
        &self.monomials
    }

    pub fn n_kinds(&self) -> usize {
        self.cumulative.len()
    }

    pub fn probability(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::Correction => self.correction.unwrap_or(0.0),
            EventKind::Monomial(i) => self.monomials.get(i).copied().unwrap_or(0.0),
        }
    }

    pub fn total(&self) -> f64 {
        self.correction.unwrap_or(0.0) + self.monomials.iter().sum::<f64>()
    }

    /// Maps a uniform draw in `[0, 1)` to an event kind.
    pub fn select(&self, u: f64) -> EventKind {
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        match (self.correction.is_some(), idx) {
            (true, 0) => EventKind::Correction,
            (true, i) => EventKind::Monomial(i - 1),
            (false, i) => EventKind::Monomial(i),
        }
    }

    pub(crate) fn draw(&self, rng: &mut RngStream) -> EventKind {
        self.select(uniform01(rng))
    }

    pub(crate) fn check_against(&self, problem: &ProblemSpec) -> Result<()> {
        if self.monomials.len() != problem.nonlinearity().len() {
            return Err(Error::config(format!(
                "event distribution lists {} monomials but the problem has {}",
                self.monomials.len(),
                problem.nonlinearity().len()
            )));
        }
        if (self.total() - 1.0).abs() > SUM_TOL {
            return Err(Error::config("event probabilities do not sum to 1"));
        }
        Ok(())
    }
}

/// `∫_s^u b(r) dr` for the perturbation baselines.
#[derive(Debug, Clone)]
pub(crate) enum DriftIntegral {
    Constant(f64),
    General(Box<ProblemSpec>),
}

impl DriftIntegral {
    pub(crate) fn new(problem: &ProblemSpec) -> Result<Self> {
        if problem.has_space_dependent_drift() {
            return Err(Error::Unsupported(
                "perturbation baselines need a time-only drift".into(),
            ));
        }
        Ok(if problem.drift().is_constant() {
            Self::Constant(problem.drift_at(0.0, 0.0))
        } else {
            Self::General(Box::new(problem.clone()))
        })
    }

    pub(crate) fn between(&self, s: f64, u: f64) -> f64 {
        match self {
            Self::Constant(b) => b * (u - s),
            Self::General(p) => {
                crate::problems::quadrature::integrate(|r| p.drift_at(r, 0.0), s, u, 1e-12)
            }
        }
    }
}
