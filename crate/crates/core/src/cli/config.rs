//! TOML run configuration.
//!
//! Values resolve as explicit key, then built-in preset, then default
//! (κ = 1/2, η = 2, n = −1, σ0 = 1). [`RunConfig::canonical`] holds the fully
//! resolved document, so emitting it and parsing again is a fixed point.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::{LifetimeParams, HALF_SHAPE};
use crate::error::{Error, Result};
use crate::estimators::{
    BranchingSemilinear, DerivativeEstimator, DerivativeOrder, Estimator, EventDistribution,
    PerturbedLinear, UnbiasedNonlinear, UnbiasedTransport, DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_PARTICLES,
};
use crate::mesh_path::SigmaSchedule;
use crate::montecarlo::{McConfig, StudyReferences};
use crate::problems::{
    builtin, characteristics_solution, perturbed_closed_form, Monomial, ProblemSpec,
};
use crate::weights::SwitchForm;

pub const DEFAULT_SIGMA0: f64 = 1.0;
pub const DEFAULT_EXPONENT: f64 = -1.0;
pub const DEFAULT_ETA: f64 = 2.0;
pub const DEFAULT_INTERVAL: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub lifetimes: LifetimeSection,
    #[serde(default)]
    pub sigma: SigmaSection,
    #[serde(default)]
    pub mc: McSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_d1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_d2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub monomials: Vec<MonomialEntry>,
}

/// One term `coefficient · v^value_power · (∂x v)^derivative_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialEntry {
    pub coefficient: f64,
    #[serde(default)]
    pub value_power: u32,
    #[serde(default)]
    pub derivative_power: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    /// Unnormalised weight of the Laplacian correction event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction_weight: Option<f64>,
    /// Unnormalised weights of the monomial events, in problem order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monomial_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_particles: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    /// `σ0` of the perturbation baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_sigma0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_variance: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Unbiased,
    UnbiasedD1,
    UnbiasedD2,
    Perturbed,
    Branching,
    UnbiasedNonlinear,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Unbiased,
        EstimatorKind::UnbiasedD1,
        EstimatorKind::UnbiasedD2,
        EstimatorKind::Perturbed,
        EstimatorKind::Branching,
        EstimatorKind::UnbiasedNonlinear,
    ];

    /// Matches [`Estimator::name`] of the estimator it builds.
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Unbiased => "unbiased",
            EstimatorKind::UnbiasedD1 => "unbiased-d1",
            EstimatorKind::UnbiasedD2 => "unbiased-d2",
            EstimatorKind::Perturbed => "perturbed",
            EstimatorKind::Branching => "branching",
            EstimatorKind::UnbiasedNonlinear => "unbiased-nonlinear",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!(
                    "unknown estimator `{name}`; known: {}",
                    known.join(", ")
                ))
            })
    }

    /// Whether the estimator runs on the diffusion `σ0` of the perturbation baselines.
    pub fn is_perturbation(self) -> bool {
        matches!(self, EstimatorKind::Perturbed | EstimatorKind::Branching)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn parse_form(name: &str) -> Result<SwitchForm> {
    match name {
        "full" => Ok(SwitchForm::Full),
        "half-v" => Ok(SwitchForm::HalfV),
        other => Err(Error::config(format!(
            "unknown switch form `{other}`; known: full, half-v"
        ))),
    }
}

fn form_name(form: SwitchForm) -> &'static str {
    match form {
        SwitchForm::Full => "full",
        SwitchForm::HalfV => "half-v",
    }
}

/// A validated configuration, ready to build estimators.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub canonical: ConfigDocument,
    pub problem: ProblemSpec,
    pub point: (f64, f64),
    pub kind: EstimatorKind,
    pub form: SwitchForm,
    pub schedule: SigmaSchedule,
    pub perturbation_sigma0: f64,
    pub lifetimes: LifetimeParams,
    /// Unnormalised event weights, when configured.
    pub correction_weight: Option<f64>,
    pub monomial_weights: Option<Vec<f64>>,
    pub max_depth: usize,
    pub max_particles: usize,
    pub mc: McConfig,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn expression_error(key: &str, err: Error) -> Error {
    match err {
        Error::Parse {
            column, message, ..
        } => Error::config(format!(
            "problem.{key}: column {column} of the expression: {message}"
        )),
        other => other,
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: ConfigDocument = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    resolve(&doc)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Serialises a document as TOML.
pub fn emit_config(doc: &ConfigDocument) -> Result<String> {
    toml::to_string(doc).map_err(|e| Error::config(format!("cannot serialise configuration: {e}")))
}

fn build_problem(section: &ProblemSection) -> Result<(ProblemSpec, Option<(f64, f64)>)> {
    if let Some(name) = &section.builtin {
        let fixed = [
            ("drift", section.drift.is_some()),
            ("terminal", section.terminal.is_some()),
            ("terminal_d1", section.terminal_d1.is_some()),
            ("terminal_d2", section.terminal_d2.is_some()),
            ("solution", section.solution.is_some()),
            ("t_start", section.t_start.is_some()),
            ("t_end", section.t_end.is_some()),
            ("monomials", !section.monomials.is_empty()),
        ];
        if let Some((key, _)) = fixed.iter().find(|(_, set)| *set) {
            return Err(Error::config(format!(
                "problem.{key} cannot be combined with problem.builtin = \"{name}\""
            )));
        }
        let preset = builtin(name)?;
        return Ok((
            preset.problem,
            Some((preset.sigma0, preset.perturbation_sigma0)),
        ));
    }
    let drift = section
        .drift
        .as_deref()
        .ok_or_else(|| Error::config("problem.drift is required unless problem.builtin is set"))?;
    let terminal = section.terminal.as_deref().ok_or_else(|| {
        Error::config("problem.terminal is required unless problem.builtin is set")
    })?;
    let t_start = section.t_start.unwrap_or(0.0);
    let t_end = section.t_end.unwrap_or(1.0);
    let mut problem = ProblemSpec::new(drift, terminal, t_start, t_end).map_err(|e| {
        // Both expressions go through the same parser; name the one that failed.
        if crate::problems::Expression::parse(drift).is_err() {
            expression_error("drift", e)
        } else {
            expression_error("terminal", e)
        }
    })?;
    if section.terminal_d1.is_some() || section.terminal_d2.is_some() {
        let d1 = section.terminal_d1.as_deref();
        let d2 = section.terminal_d2.as_deref();
        problem = problem.with_derivatives(d1, d2).map_err(|e| {
            if d1.is_some_and(|s| crate::problems::Expression::parse(s).is_err()) {
                expression_error("terminal_d1", e)
            } else {
                expression_error("terminal_d2", e)
            }
        })?;
    }
    if let Some(solution) = &section.solution {
        problem = problem
            .with_solution(solution)
            .map_err(|e| expression_error("solution", e))?;
    }
    if !section.monomials.is_empty() {
        let monomials = section
            .monomials
            .iter()
            .map(|m| Monomial::new(m.coefficient, m.value_power, m.derivative_power))
            .collect();
        problem = problem.with_nonlinearity(monomials)?;
    }
    let (lo, hi) = DEFAULT_INTERVAL;
    problem = problem
        .with_working_interval(lo, hi)?
        .with_point(t_start, 0.0)?;
    Ok((problem, None))
}

fn resolve(doc: &ConfigDocument) -> Result<RunConfig> {
    let (mut problem, preset) = build_problem(&doc.problem)?;
    if let Some([lo, hi]) = doc.problem.interval {
        problem = problem.with_working_interval(lo, hi)?;
    }
    if let Some([t, x]) = doc.problem.point {
        problem = problem.with_point(t, x)?;
    }
    let point = problem.point();

    let mc_section = &doc.mc;
    let defaults = McConfig::default();
    let unsafe_variance = mc_section.unsafe_variance.unwrap_or(false);
    let mc = McConfig {
        n_samples: mc_section.samples.unwrap_or(defaults.n_samples),
        n_repeats: mc_section.repeats.unwrap_or(defaults.n_repeats),
        sample_levels: mc_section.levels.clone().unwrap_or(defaults.sample_levels),
        master_seed: mc_section.seed.unwrap_or(defaults.master_seed),
        confidence_level: mc_section.confidence.unwrap_or(defaults.confidence_level),
        threads: mc_section.threads,
        unsafe_variance,
    };
    mc.validate()?;
    if mc.sample_levels.is_empty() {
        return Err(Error::config("mc.levels must not be empty"));
    }

    let kappa = doc.lifetimes.kappa.unwrap_or(HALF_SHAPE);
    let eta = doc.lifetimes.eta.unwrap_or(DEFAULT_ETA);
    let lifetimes = LifetimeParams::new(kappa, eta, unsafe_variance)?;

    let (preset_sigma0, preset_perturbation) = preset.unwrap_or((DEFAULT_SIGMA0, DEFAULT_SIGMA0));
    let sigma0 = doc.sigma.sigma0.unwrap_or(preset_sigma0);
    let exponent = doc.sigma.exponent.unwrap_or(DEFAULT_EXPONENT);
    let schedule = SigmaSchedule::new(sigma0, exponent, unsafe_variance)?;
    let perturbation_sigma0 = doc.sigma.perturbation_sigma0.unwrap_or(preset_perturbation);
    if !(perturbation_sigma0.is_finite() && perturbation_sigma0 > 0.0) {
        return Err(Error::config(format!(
            "sigma.perturbation_sigma0 must be > 0, got {perturbation_sigma0}"
        )));
    }

    let kind = match &doc.estimator.kind {
        Some(name) => EstimatorKind::parse(name)?,
        None if problem.is_linear() => EstimatorKind::Unbiased,
        None => EstimatorKind::UnbiasedNonlinear,
    };
    let form = parse_form(doc.estimator.form.as_deref().unwrap_or("full"))?;

    let n_monomials = problem.nonlinearity().len();
    let (correction_weight, monomial_weights) = match (
        doc.estimator.correction_weight,
        &doc.estimator.monomial_weights,
    ) {
        (None, None) => (None, None),
        (c, m) => {
            let m = m.clone().unwrap_or_else(|| vec![1.0; n_monomials]);
            if m.len() != n_monomials {
                return Err(Error::config(format!(
                        "estimator.monomial_weights has {} entries but the problem has {n_monomials} monomials",
                        m.len()
                    )));
            }
            (Some(c.unwrap_or(1.0)), Some(m))
        }
    };
    if let (Some(c), Some(m)) = (correction_weight, &monomial_weights) {
        // Validates positivity and the total.
        EventDistribution::from_weights(Some(c), m.clone())?;
    }

    let max_depth = doc.estimator.max_depth.unwrap_or(DEFAULT_MAX_DEPTH);
    let max_particles = doc.estimator.max_particles.unwrap_or(DEFAULT_MAX_PARTICLES);
    if max_depth == 0 || max_particles == 0 {
        return Err(Error::config(
            "estimator.max_depth and estimator.max_particles must be at least 1",
        ));
    }

    let canonical = ConfigDocument {
        problem: ProblemSection {
            point: Some([point.0, point.1]),
            interval: Some({
                let (lo, hi) = problem.working_interval();
                [lo, hi]
            }),
            t_start: doc.problem.builtin.is_none().then(|| problem.t_start()),
            t_end: doc.problem.builtin.is_none().then(|| problem.t_end()),
            ..doc.problem.clone()
        },
        estimator: EstimatorSection {
            kind: Some(kind.name().to_string()),
            form: Some(form_name(form).to_string()),
            correction_weight,
            monomial_weights: monomial_weights.clone(),
            max_depth: Some(max_depth),
            max_particles: Some(max_particles),
        },
        lifetimes: LifetimeSection {
            kappa: Some(kappa),
            eta: Some(eta),
        },
        sigma: SigmaSection {
            sigma0: Some(sigma0),
            exponent: Some(exponent),
            perturbation_sigma0: Some(perturbation_sigma0),
        },
        mc: McSection {
            samples: Some(mc.n_samples),
            repeats: Some(mc.n_repeats),
            levels: Some(mc.sample_levels.clone()),
            seed: Some(mc.master_seed),
            confidence: Some(mc.confidence_level),
            threads: mc.threads,
            unsafe_variance: Some(unsafe_variance),
        },
    };

    let config = RunConfig {
        canonical,
        problem,
        point,
        kind,
        form,
        schedule,
        perturbation_sigma0,
        lifetimes,
        correction_weight,
        monomial_weights,
        max_depth,
        max_particles,
        mc,
    };
    // Surface estimator-level invariants now rather than mid-run.
    config.estimator(kind)?;
    Ok(config)
}

impl RunConfig {
    /// The same configuration evaluated at another point.
    pub fn at(mut self, t: f64, x: f64) -> Result<Self> {
        self.problem = self.problem.with_point(t, x)?;
        self.point = (t, x);
        self.canonical.problem.point = Some([t, x]);
        Ok(self)
    }

    fn events(&self, with_correction: bool) -> Result<EventDistribution> {
        match &self.monomial_weights {
            Some(m) => {
                let correction = if with_correction {
                    self.correction_weight
                } else {
                    None
                };
                if m.is_empty() && correction.is_none() {
                    return EventDistribution::default_for(&self.problem, with_correction);
                }
                EventDistribution::from_weights(correction, m.clone())
            }
            None => EventDistribution::default_for(&self.problem, with_correction),
        }
    }

    pub fn estimator(&self, kind: EstimatorKind) -> Result<Box<dyn Estimator>> {
        let unsafe_variance = self.mc.unsafe_variance;
        let unbiased = || {
            UnbiasedTransport::new(
                self.problem.clone(),
                self.schedule,
                self.lifetimes.clone(),
                self.point,
                unsafe_variance,
            )
            .map(|e| e.with_form(self.form))
        };
        Ok(match kind {
            EstimatorKind::Unbiased => Box::new(unbiased()?),
            EstimatorKind::UnbiasedD1 => Box::new(DerivativeEstimator::new(
                unbiased()?,
                DerivativeOrder::First,
            )),
            EstimatorKind::UnbiasedD2 => Box::new(DerivativeEstimator::new(
                unbiased()?,
                DerivativeOrder::Second,
            )),
            EstimatorKind::Perturbed => Box::new(PerturbedLinear::new(
                self.problem.clone(),
                self.perturbation_sigma0,
                self.point,
            )?),
            EstimatorKind::Branching => {
                let est = if self.problem.is_linear() {
                    BranchingSemilinear::with_default_events(
                        self.problem.clone(),
                        self.perturbation_sigma0,
                        self.lifetimes.clone(),
                        self.point,
                    )?
                } else {
                    BranchingSemilinear::new(
                        self.problem.clone(),
                        self.perturbation_sigma0,
                        self.events(false)?,
                        self.lifetimes.clone(),
                        self.point,
                    )?
                };
                Box::new(est.with_limits(self.max_depth, self.max_particles))
            }
            EstimatorKind::UnbiasedNonlinear => Box::new(
                UnbiasedNonlinear::new(
                    self.problem.clone(),
                    self.events(true)?,
                    self.schedule,
                    self.lifetimes.clone(),
                    self.point,
                    unsafe_variance,
                )?
                .with_form(self.form)
                .with_limits(self.max_depth, self.max_particles),
            ),
        })
    }

    /// Exact value at the point and, for linear problems, the perturbed closed form.
    pub fn references(&self) -> StudyReferences {
        let (t, x) = self.point;
        let true_value = self
            .problem
            .solution_at(t, x)
            .or_else(|| characteristics_solution(&self.problem, t, x).ok());
        let biased_value = if self.problem.is_linear() {
            perturbed_closed_form(&self.problem, self.perturbation_sigma0, t, x).ok()
        } else {
            None
        };
        StudyReferences {
            true_value,
            biased_value,
        }
    }
}
