//! Lifetime law of the switching times and the Gaussian increments that
//! drive every path, plus the per-sample random streams they draw from.
//!
//! Lifetimes follow a Gamma(κ, η) law (shape κ, scale η). The estimators'
//! variance analysis only holds for κ = 1/2, so [`LifetimeParams::new`]
//! rejects any other shape unless the caller opts into unsafe variance.

use libm::erfc;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Shape required by the finite-variance analysis of the transport estimator.
pub const HALF_SHAPE: f64 = 0.5;

/// Gamma(κ, η) lifetime parameters.
#[derive(Debug, Clone)]
pub struct LifetimeParams {
    kappa: f64,
    eta: f64,
    /// `-ln Γ(κ) - κ ln η`, the log of the density's normalizing constant.
    log_norm: f64,
    sampler: Option<Gamma<f64>>,
}

impl PartialEq for LifetimeParams {
    fn eq(&self, other: &Self) -> bool {
        self.kappa == other.kappa && self.eta == other.eta
    }
}

impl LifetimeParams {
    /// Validated constructor. `unsafe_variance` lifts the κ = 1/2 restriction.
    pub fn new(kappa: f64, eta: f64, unsafe_variance: bool) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::config(format!(
                "lifetime shape kappa must be > 0, got {kappa}"
            )));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::config(format!(
                "lifetime scale eta must be > 0, got {eta}"
            )));
        }
        if kappa != HALF_SHAPE && !unsafe_variance {
            return Err(Error::config(format!(
                "kappa = {kappa} violates the finite-variance assumption (kappa must be 1/2); \
                 set unsafe_variance = true to override"
            )));
        }
        let sampler = if kappa == HALF_SHAPE {
            None
        } else {
            Some(Gamma::new(kappa, eta).map_err(|e| Error::config(e.to_string()))?)
        };
        Ok(Self {
            kappa,
            eta,
            log_norm: -ln_gamma(kappa) - kappa * eta.ln(),
            sampler,
        })
    }

    /// κ = 1/2, η = 2: the parameter set used for the reference examples.
    pub fn reference() -> Self {
        Self::new(HALF_SHAPE, 2.0, false).expect("reference lifetime parameters are valid")
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mean(&self) -> f64 {
        self.kappa * self.eta
    }

    pub fn variance(&self) -> f64 {
        self.kappa * self.eta * self.eta
    }

    /// Density without argument checks; `s` must be positive.
    #[inline]
    pub(crate) fn density_unchecked(&self, s: f64) -> f64 {
        debug_assert!(s > 0.0);
        let d = if self.kappa == HALF_SHAPE {
            (-s / self.eta).exp() / (std::f64::consts::PI * self.eta * s).sqrt()
        } else {
            ((self.kappa - 1.0) * s.ln() - s / self.eta + self.log_norm).exp()
        };
        if d.is_infinite() {
            f64::MAX
        } else {
            d
        }
    }

    /// Survival function without argument checks; `s` must be nonnegative.
    #[inline]
    pub(crate) fn survival_unchecked(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        if self.kappa == HALF_SHAPE {
            erfc((s / self.eta).sqrt())
        } else {
            gamma_ur(self.kappa, s / self.eta)
        }
    }
}

/// Draws one lifetime. The result is always strictly positive.
pub fn sample_lifetime(params: &LifetimeParams, rng: &mut RngStream) -> f64 {
    loop {
        let s = match &params.sampler {
            None => {
                let z: f64 = StandardNormal.sample(rng);
                0.5 * params.eta * z * z
            }
            Some(gamma) => gamma.sample(rng),
        };
        if s > 0.0 {
            return s;
        }
    }
}

/// Gamma density `s^(κ-1) e^(-s/η) / (Γ(κ) η^κ)`.
///
/// Near zero the density may diverge; the returned value saturates at
/// `f64::MAX` instead of becoming infinite.
pub fn lifetime_density(params: &LifetimeParams, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::domain(format!(
            "lifetime density requires s > 0, got {s}"
        )));
    }
    Ok(params.density_unchecked(s))
}

/// Survival function `P[τ ≥ s]`.
pub fn lifetime_survival(params: &LifetimeParams, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::domain(format!(
            "lifetime survival requires s >= 0, got {s}"
        )));
    }
    Ok(params.survival_unchecked(s))
}

/// Draws a Brownian increment over a step of length `dt`.
pub fn sample_gaussian_increment(rng: &mut RngStream, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!(
            "Brownian increment requires dt > 0, got {dt}"
        )));
    }
    Ok(gaussian_increment(rng, dt))
}

#[inline]
pub(crate) fn gaussian_increment(rng: &mut RngStream, dt: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    dt.sqrt() * z
}

#[inline]
pub(crate) fn standard_normal(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub(crate) fn uniform01(rng: &mut RngStream) -> f64 {
    // 53 random mantissa bits in [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of indices.
pub fn derive_seed(master_seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master_seed), |acc, &i| {
        mix64(acc ^ mix64(i.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

/// Counter-based random stream keyed by `(master_seed, stream_index)`.
///
/// The master seed becomes the ChaCha key and the stream index selects the
/// ChaCha stream, so every Monte Carlo sample owns a private sequence that
/// does not depend on which thread evaluates it.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = master_seed;
        for chunk in key.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn rejects_non_half_shape_without_flag() {
        assert!(LifetimeParams::new(1.0, 1.0, false).is_err());
        assert!(LifetimeParams::new(1.0, 1.0, true).is_ok());
        assert!(LifetimeParams::new(0.5, -1.0, true).is_err());
        assert!(LifetimeParams::new(0.0, 1.0, true).is_err());
    }

    #[test]
    fn half_shape_lifetime_moments() {
        let p = LifetimeParams::reference();
        let mut rng = RngStream::new(11, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_lifetime(&p, &mut rng))
            .collect();
        let (mean, var) = moments(&xs);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.05, "variance {var}");
        let tail = xs.iter().filter(|&&s| s >= 1.0).count() as f64 / xs.len() as f64;
        assert!((tail - 0.3173).abs() < 0.005, "tail {tail}");
    }

    #[test]
    fn generic_shape_lifetime_moments() {
        let p = LifetimeParams::new(2.5, 0.8, true).unwrap();
        let mut rng = RngStream::new(12, 0);
        let xs: Vec<f64> = (0..400_000)
            .map(|_| sample_lifetime(&p, &mut rng))
            .collect();
        let (mean, var) = moments(&xs);
        assert!((mean - 2.0).abs() < 0.01, "mean {mean}");
        assert!((var - 1.6).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn density_values() {
        let p = LifetimeParams::reference();
        // Gamma(1/2, 2) is the law of Z², so f(1) equals the standard normal density at 1.
        assert!((lifetime_density(&p, 1.0).unwrap() - 0.241_970_724_519_143_37).abs() < 1e-12);
        let e = LifetimeParams::new(1.0, 1.0, true).unwrap();
        assert!((lifetime_density(&e, 0.5).unwrap() - (-0.5f64).exp()).abs() < 1e-14);
        let tiny = lifetime_density(&p, f64::MIN_POSITIVE * 1e-10).unwrap();
        assert!(tiny.is_finite() && tiny > 1e100);
        let sharp = LifetimeParams::new(0.01, 1.0, true).unwrap();
        let d = lifetime_density(&sharp, 1e-300).unwrap();
        assert!(d.is_finite() && !d.is_nan());
    }

    #[test]
    fn density_domain_errors() {
        let p = LifetimeParams::reference();
        assert!(lifetime_density(&p, 0.0).is_err());
        assert!(lifetime_density(&p, -1.0).is_err());
        assert!(lifetime_density(&p, f64::NAN).is_err());
        assert!(lifetime_survival(&p, -0.1).is_err());
    }

    #[test]
    fn survival_values() {
        let p = LifetimeParams::reference();
        assert_eq!(lifetime_survival(&p, 0.0).unwrap(), 1.0);
        assert!((lifetime_survival(&p, 1.0).unwrap() - 0.317_310_507_862_914_1).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let s = i as f64 * 0.01;
            let f = lifetime_survival(&p, s).unwrap();
            assert!(f < prev, "not strictly decreasing at {s}");
            prev = f;
        }
    }

    #[test]
    fn generic_survival_matches_erfc_route_at_half_shape() {
        // The incomplete-gamma route evaluated at κ = 1/2 must agree with erfc.
        for &s in &[0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let erfc_route = erfc((s / 2.0f64).sqrt());
            let gamma_route = gamma_ur(0.5, s / 2.0);
            assert!(
                ((erfc_route - gamma_route) / erfc_route).abs() < 1e-12,
                "s = {s}"
            );
        }
    }

    #[test]
    fn gaussian_increment_moments_and_replay() {
        let mut rng = RngStream::new(5, 3);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_gaussian_increment(&mut rng, 0.25).unwrap())
            .collect();
        let (mean, var) = moments(&xs);
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var - 0.25).abs() < 0.005, "variance {var}");

        let mut a = RngStream::new(5, 3);
        let mut b = RngStream::new(5, 3);
        for _ in 0..1000 {
            assert_eq!(
                sample_gaussian_increment(&mut a, 0.25).unwrap().to_bits(),
                sample_gaussian_increment(&mut b, 0.25).unwrap().to_bits()
            );
        }
        assert!(sample_gaussian_increment(&mut a, 0.0).is_err());
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 100_000;
        let draws = |idx: u64| -> Vec<f64> {
            let mut rng = RngStream::new(77, idx);
            (0..n).map(|_| standard_normal(&mut rng)).collect()
        };
        let a = draws(0);
        let b = draws(1);
        let c = draws(2);
        let corr = |x: &[f64], y: &[f64], lag: usize| {
            let m = x.len() - lag;
            x[..m]
                .iter()
                .zip(&y[lag..])
                .map(|(p, q)| p * q)
                .sum::<f64>()
                / m as f64
        };
        for lag in 0..4 {
            assert!(corr(&a, &b, lag).abs() < 0.01);
            assert!(corr(&b, &c, lag).abs() < 0.01);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let s1 = derive_seed(1, &[0, 0, 0]);
        let s2 = derive_seed(1, &[0, 0, 1]);
        let s3 = derive_seed(1, &[0, 1, 0]);
        let s4 = derive_seed(2, &[0, 0, 0]);
        assert!(s1 != s2 && s1 != s3 && s1 != s4 && s2 != s3);
        assert_eq!(s1, derive_seed(1, &[0, 0, 0]));
    }
}
