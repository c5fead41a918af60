//! Reproducible parallel estimation.
//!
//! Sample `i` of a run with key `k` always draws from `RngStream::new(k, i)`.
//! Samples are grouped in fixed chunks whose statistics are merged in index
//! order, so a report depends only on the configuration and never on the
//! thread count.

mod stats;

pub use stats::{confidence_interval, normal_quantile, RunningStats};

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::distributions::{derive_seed, RngStream};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, PoisonReason};

pub const CHUNK_SIZE: u64 = 4096;
/// Environment variable read for the default worker count.
pub const THREADS_ENV: &str = "TRANSPORT_MC_THREADS";

/// Largest single-sample share of `Σψ²` above which a run is flagged as
/// having an exploding variance.
pub const EXPLODING_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_samples: u64,
    pub n_repeats: usize,
    pub sample_levels: Vec<u64>,
    pub master_seed: u64,
    pub confidence_level: f64,
    /// Worker threads; `None` uses the environment default.
    pub threads: Option<usize>,
    pub unsafe_variance: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            n_repeats: 50,
            sample_levels: vec![1_000, 10_000, 100_000],
            master_seed: 0,
            confidence_level: 0.9,
            threads: None,
            unsafe_variance: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if self.n_repeats < 1 {
            return Err(Error::config("n_repeats must be at least 1"));
        }
        if self.sample_levels.contains(&0) {
            return Err(Error::config("sample levels must be at least 1"));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(Error::config(format!(
                "confidence_level must lie in (0, 1), got {}",
                self.confidence_level
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be at least 1"));
        }
        Ok(())
    }

    /// Explicit setting, else the environment variable, else rayon's default.
    pub fn resolved_threads(&self) -> Result<usize> {
        if let Some(n) = self.threads {
            return Ok(n);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    Error::config(format!(
                        "{THREADS_ENV} must be a positive integer, got `{v}`"
                    ))
                }),
            Err(_) => Ok(rayon::current_num_threads()),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.resolved_threads()?)
            .build()
            .map_err(|e| Error::Run(format!("cannot start worker threads: {e}")))
    }
}

/// Result of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub estimator: String,
    pub n_samples: u64,
    pub n_effective: u64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence_level: f64,
    pub poisoned_count: u64,
    pub poison_reasons: Vec<(PoisonReason, u64)>,
    /// `switch_histogram[k]` counts samples with `k` switches.
    pub switch_histogram: Vec<u64>,
    pub log_path_count: u64,
    pub stats: RunningStats,
    pub wall_time: Duration,
}

impl RunReport {
    pub fn second_moment(&self) -> f64 {
        self.stats.second_moment()
    }

    pub fn max_share(&self) -> f64 {
        self.stats.max_share()
    }

    /// Poisoned samples or one sample dominating `Σψ²`.
    pub fn exploding_variance(&self) -> bool {
        self.poisoned_count > 0 || self.max_share() > EXPLODING_SHARE
    }

    /// Everything but the wall time, for bit-level comparisons.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let a = Self {
            wall_time: Duration::ZERO,
            ..self.clone()
        };
        let b = Self {
            wall_time: Duration::ZERO,
            ..other.clone()
        };
        a == b
    }
}

#[derive(Debug, Clone, Default)]
struct Chunk {
    stats: RunningStats,
    poisoned: [u64; 4],
    histogram: Vec<u64>,
    log_path: u64,
}

fn reason_index(r: PoisonReason) -> usize {
    match r {
        PoisonReason::Overflow => 0,
        PoisonReason::NonFinite => 1,
        PoisonReason::DepthCap => 2,
        PoisonReason::ParticleCap => 3,
    }
}

const REASONS: [PoisonReason; 4] = [
    PoisonReason::Overflow,
    PoisonReason::NonFinite,
    PoisonReason::DepthCap,
    PoisonReason::ParticleCap,
];

impl Chunk {
    fn run<E: Estimator + ?Sized>(estimator: &E, key: u64, start: u64, end: u64) -> Self {
        let mut chunk = Self::default();
        for i in start..end {
            let mut rng = RngStream::new(key, i);
            let s = estimator.sample(&mut rng);
            if let Some(r) = s.poison {
                chunk.poisoned[reason_index(r)] += 1;
                continue;
            }
            chunk.stats.push(s.value);
            if s.n_switches >= chunk.histogram.len() {
                chunk.histogram.resize(s.n_switches + 1, 0);
            }
            chunk.histogram[s.n_switches] += 1;
            chunk.log_path += u64::from(s.used_log_path);
        }
        chunk
    }

    fn absorb(&mut self, other: &Self) {
        self.stats = self.stats.merge(&other.stats);
        for (a, b) in self.poisoned.iter_mut().zip(other.poisoned) {
            *a += b;
        }
        if other.histogram.len() > self.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        self.log_path += other.log_path;
    }
}

fn run_keyed<E: Estimator + ?Sized>(
    estimator: &E,
    n_samples: u64,
    key: u64,
    confidence_level: f64,
) -> Result<RunReport> {
    let started = Instant::now();
    let n_chunks = n_samples.div_ceil(CHUNK_SIZE);
    let chunks: Vec<Chunk> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK_SIZE;
            Chunk::run(estimator, key, start, (start + CHUNK_SIZE).min(n_samples))
        })
        .collect();
    let mut total = Chunk::default();
    for c in &chunks {
        total.absorb(c);
    }
    let poisoned_count: u64 = total.poisoned.iter().sum();
    let stats = total.stats;
    if stats.count() == 0 {
        return Err(Error::Run(format!(
            "all {n_samples} samples of `{}` were poisoned",
            estimator.name()
        )));
    }
    let (ci_low, ci_high) = if stats.count() >= 2 {
        confidence_interval(&stats, confidence_level)?
    } else {
        (stats.mean(), stats.mean())
    };
    Ok(RunReport {
        estimator: estimator.name().to_string(),
        n_samples,
        n_effective: stats.count(),
        mean: stats.mean(),
        variance: stats.variance(),
        std_error: stats.std_error(),
        ci_low,
        ci_high,
        confidence_level,
        poisoned_count,
        poison_reasons: REASONS
            .iter()
            .zip(total.poisoned)
            .filter(|(_, n)| *n > 0)
            .map(|(r, n)| (*r, n))
            .collect(),
        switch_histogram: total.histogram,
        log_path_count: total.log_path,
        stats,
        wall_time: started.elapsed(),
    })
}

/// Run key of repeat `repeat` at level `level` of a study.
pub fn run_key(master_seed: u64, level: u64, repeat: u64) -> u64 {
    derive_seed(master_seed, &[level, repeat])
}

/// A single run of `config.n_samples` samples, keyed by `run_key(seed, 0, 0)`.
pub fn run_estimate<E: Estimator + ?Sized>(estimator: &E, config: &McConfig) -> Result<RunReport> {
    config.validate()?;
    let pool = config.pool()?;
    pool.install(|| {
        run_keyed(
            estimator,
            config.n_samples,
            run_key(config.master_seed, 0, 0),
            config.confidence_level,
        )
    })
}

/// Reference lines attached to every row of a study.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudyReferences {
    pub true_value: Option<f64>,
    pub biased_value: Option<f64>,
}

/// Summary of the repeats of one estimator at one sample level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub n_samples: u64,
    pub estimator: String,
    /// Per-repeat means, in repeat order.
    pub estimates: Vec<f64>,
    /// Per-repeat standard errors.
    pub std_errors: Vec<f64>,
    pub average: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub q_low: f64,
    pub q_high: f64,
    /// Standard error of `average` from the pooled samples.
    pub pooled_std_error: f64,
    pub pooled: RunningStats,
    pub true_value: Option<f64>,
    pub reference_biased_value: Option<f64>,
    pub poisoned_count: u64,
    /// Repeats flagged by [`RunReport::exploding_variance`].
    pub exploding_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyReport {
    pub rows: Vec<LevelSummary>,
}

impl LevelSummary {
    /// Poisoned samples, or one sample dominating `Σψ²` over all repeats pooled.
    pub fn exploding_variance(&self) -> bool {
        self.poisoned_count > 0 || self.pooled.max_share() > EXPLODING_SHARE
    }
}

impl StudyReport {
    pub fn rows_for<'a>(
        &'a self,
        estimator: &'a str,
    ) -> impl Iterator<Item = &'a LevelSummary> + 'a {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// For every level and repeat, one independent run per estimator. Repeat `r`
/// at level index `l` uses run key `run_key(seed, l, r)` for every estimator.
pub fn run_study(
    estimators: &[&dyn Estimator],
    config: &McConfig,
    references: StudyReferences,
) -> Result<StudyReport> {
    config.validate()?;
    if config.sample_levels.is_empty() {
        return Err(Error::config("a study needs at least one sample level"));
    }
    let pool = config.pool()?;
    let mut rows = Vec::new();
    for (l, &n) in config.sample_levels.iter().enumerate() {
        for est in estimators {
            let reports: Vec<RunReport> = pool.install(|| {
                (0..config.n_repeats)
                    .into_par_iter()
                    .map(|r| {
                        let key = run_key(config.master_seed, l as u64, r as u64);
                        run_keyed(*est, n, key, config.confidence_level)
                    })
                    .collect::<Result<_>>()
            })?;
            let mut estimates = Vec::with_capacity(config.n_repeats);
            let mut std_errors = Vec::with_capacity(config.n_repeats);
            let mut pooled = RunningStats::new();
            let mut poisoned_count = 0;
            let mut exploding_runs = 0;
            for report in &reports {
                estimates.push(report.mean);
                std_errors.push(report.std_error);
                pooled = pooled.merge(&report.stats);
                poisoned_count += report.poisoned_count;
                exploding_runs += usize::from(report.exploding_variance());
            }
            let mut sorted = estimates.clone();
            sorted.sort_by(f64::total_cmp);
            let tail = 0.5 * (1.0 - config.confidence_level);
            rows.push(LevelSummary {
                n_samples: n,
                estimator: est.name().to_string(),
                average: estimates.iter().sum::<f64>() / estimates.len() as f64,
                band_low: sorted[0],
                band_high: sorted[sorted.len() - 1],
                q_low: quantile(&sorted, tail),
                q_high: quantile(&sorted, 1.0 - tail),
                pooled_std_error: pooled.std_error(),
                pooled,
                estimates,
                std_errors,
                true_value: references.true_value,
                reference_biased_value: references.biased_value,
                poisoned_count,
                exploding_runs,
            });
        }
    }
    Ok(StudyReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorSample;

    struct Constant(f64);

    impl Estimator for Constant {
        fn name(&self) -> &str {
            "constant"
        }

        fn sample(&self, _rng: &mut RngStream) -> EstimatorSample {
            EstimatorSample::plain(self.0)
        }
    }

    struct Uniform;

    impl Estimator for Uniform {
        fn name(&self) -> &str {
            "uniform"
        }

        fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
            EstimatorSample::plain(crate::distributions::uniform01(rng))
        }
    }

    struct SometimesPoisoned;

    impl Estimator for SometimesPoisoned {
        fn name(&self) -> &str {
            "poisoned"
        }

        fn sample(&self, rng: &mut RngStream) -> EstimatorSample {
            if rng.stream_index().is_multiple_of(10) {
                EstimatorSample::poisoned(PoisonReason::DepthCap)
            } else {
                EstimatorSample::plain(1.0)
            }
        }
    }

    fn config(n: u64, threads: usize) -> McConfig {
        McConfig {
            n_samples: n,
            threads: Some(threads),
            ..McConfig::default()
        }
    }

    #[test]
    fn constant_estimator() {
        let r = run_estimate(&Constant(3.5), &config(10_000, 1)).unwrap();
        assert_eq!(r.mean, 3.5);
        assert_eq!(r.variance, 0.0);
        assert_eq!((r.ci_low, r.ci_high), (3.5, 3.5));
        assert_eq!(r.switch_histogram, vec![10_000]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let a = run_estimate(&Uniform, &config(50_000, 1)).unwrap();
        let b = run_estimate(&Uniform, &config(50_000, 3)).unwrap();
        assert!(a.same_numbers(&b));
        assert!((a.mean - 0.5).abs() < 4.0 * a.std_error);
    }

    #[test]
    fn poisoned_samples_are_counted_and_excluded() {
        let r = run_estimate(&SometimesPoisoned, &config(1000, 1)).unwrap();
        assert_eq!(r.poisoned_count, 100);
        assert_eq!(r.n_effective, 900);
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.poison_reasons, vec![(PoisonReason::DepthCap, 100)]);
        assert!(r.exploding_variance());
    }

    #[test]
    fn all_poisoned_is_an_error() {
        struct Never;
        impl Estimator for Never {
            fn name(&self) -> &str {
                "never"
            }
            fn sample(&self, _: &mut RngStream) -> EstimatorSample {
                EstimatorSample::poisoned(PoisonReason::Overflow)
            }
        }
        assert!(matches!(
            run_estimate(&Never, &config(10, 1)),
            Err(Error::Run(_))
        ));
    }

    #[test]
    fn single_repeat_band_is_degenerate() {
        let cfg = McConfig {
            n_repeats: 1,
            sample_levels: vec![100, 1000],
            threads: Some(1),
            ..McConfig::default()
        };
        let study = run_study(&[&Uniform], &cfg, StudyReferences::default()).unwrap();
        assert_eq!(study.rows.len(), 2);
        for row in &study.rows {
            assert_eq!(row.band_low, row.estimates[0]);
            assert_eq!(row.band_high, row.estimates[0]);
            assert_eq!(row.q_low, row.estimates[0]);
            assert_eq!(row.average, row.estimates[0]);
        }
    }

    #[test]
    fn bands_contain_estimates_and_replay() {
        let cfg = McConfig {
            n_repeats: 7,
            sample_levels: vec![500],
            threads: Some(2),
            ..McConfig::default()
        };
        let refs = StudyReferences {
            true_value: Some(0.5),
            biased_value: None,
        };
        let a = run_study(&[&Uniform, &Constant(1.0)], &cfg, refs).unwrap();
        let b = run_study(&[&Uniform, &Constant(1.0)], &cfg, refs).unwrap();
        assert_eq!(a, b);
        let row = &a.rows[0];
        for e in &row.estimates {
            assert!(row.band_low <= *e && *e <= row.band_high);
        }
        assert!(row.band_low <= row.q_low && row.q_high <= row.band_high);
        assert_eq!(row.true_value, Some(0.5));
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(quantile(&xs, 0.5), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(McConfig {
            n_samples: 0,
            ..McConfig::default()
        }
        .validate()
        .is_err());
        assert!(McConfig {
            confidence_level: 1.0,
            ..McConfig::default()
        }
        .validate()
        .is_err());
        assert!(McConfig {
            threads: Some(0),
            ..McConfig::default()
        }
        .validate()
        .is_err());
        assert!(McConfig::default().validate().is_ok());
    }
}
