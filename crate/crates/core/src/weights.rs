//! Malliavin weights and the per-switch correction factors.
//!
//! On a leg with coefficient σ, increment ΔW and length ΔT the first and
//! second order weights are
//!
//! ```text
//! W¹ = ΔW / (σ ΔT)        W² = (ΔW² − ΔT) / (σ² ΔT²)
//! ```
//!
//! A switch at the end of leg `k` contributes `P_{k+1} = (M + V) / f(ΔT_k)`
//! where `M = Δb · W¹` corrects the frozen drift and `V = −½ σ_k² W²`
//! removes the Laplacian added on leg `k`.

use crate::error::{Error, Result};

/// How the Laplacian correction enters a switch factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwitchForm {
    /// `M + V`.
    #[default]
    Full,
    /// `M + ½V`, kept for A/B comparisons only.
    HalfV,
}

impl SwitchForm {
    #[inline]
    pub fn combine(self, m: f64, v: f64) -> f64 {
        match self {
            SwitchForm::Full => m + v,
            SwitchForm::HalfV => m + 0.5 * v,
        }
    }

    /// Antithetic partner of [`combine`](Self::combine): `M` enters with a flipped sign.
    #[inline]
    pub fn combine_antithetic(self, m: f64, v: f64) -> f64 {
        self.combine(-m, v)
    }
}

#[inline]
pub fn weight_w1(sigma: f64, dw: f64, dt: f64) -> f64 {
    dw / (sigma * dt)
}

#[inline]
pub fn weight_w2(sigma: f64, dw: f64, dt: f64) -> f64 {
    (dw * dw - dt) / (sigma * sigma * dt * dt)
}

#[inline]
pub fn factor_m(delta_b: f64, sigma: f64, dw: f64, dt: f64) -> f64 {
    delta_b * weight_w1(sigma, dw, dt)
}

#[inline]
pub fn factor_v(sigma_prev: f64, sigma_cur: f64, dw: f64, dt: f64) -> f64 {
    let ratio = sigma_prev / sigma_cur;
    factor_v_from_ratio(ratio * ratio, dw, dt)
}

/// `V` given the squared σ ratio `(σ_prev / σ_cur)²` directly.
#[inline]
pub fn factor_v_from_ratio(ratio_sq: f64, dw: f64, dt: f64) -> f64 {
    -0.5 * ratio_sq * (dw * dw - dt) / (dt * dt)
}

/// `P = (M + V) / f_prev`.
pub fn switch_factor_p(m: f64, v: f64, f_prev: f64) -> Result<f64> {
    switch_factor(m, v, f_prev, SwitchForm::Full)
}

pub fn switch_factor(m: f64, v: f64, f_prev: f64, form: SwitchForm) -> Result<f64> {
    if !(f_prev > 0.0) {
        return Err(Error::domain(format!(
            "switch factor needs a positive previous density, got {f_prev}"
        )));
    }
    Ok(form.combine(m, v) / f_prev)
}

/// Running product kept both directly and as sign / log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightProduct {
    sign: i8,
    log_magnitude: f64,
    plain: f64,
}

impl Default for WeightProduct {
    fn default() -> Self {
        Self::identity()
    }
}

impl WeightProduct {
    pub const fn identity() -> Self {
        Self {
            sign: 1,
            log_magnitude: 0.0,
            plain: 1.0,
        }
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn log_magnitude(&self) -> f64 {
        self.log_magnitude
    }

    pub fn plain_value(&self) -> f64 {
        self.plain
    }

    #[must_use]
    #[inline]
    pub fn accumulate(self, factor: f64) -> Self {
        if factor == 0.0 || self.sign == 0 {
            return Self {
                sign: 0,
                log_magnitude: f64::NEG_INFINITY,
                plain: 0.0,
            };
        }
        let sign = if factor < 0.0 { -self.sign } else { self.sign };
        Self {
            sign,
            log_magnitude: self.log_magnitude + factor.abs().ln(),
            plain: self.plain * factor,
        }
    }

    /// Whether the plain product is unusable and the log form must be used.
    pub fn needs_log_path(&self) -> bool {
        !self.plain.is_finite() || (self.plain == 0.0 && self.sign != 0)
    }

    /// The product itself, via the log form when the plain one left range.
    pub fn value(&self) -> f64 {
        self.scale(1.0).0
    }

    /// `x · product`, returning the value and whether the log form was used.
    pub fn scale(&self, x: f64) -> (f64, bool) {
        if !self.needs_log_path() {
            let direct = x * self.plain;
            if direct.is_finite() && !(direct == 0.0 && x != 0.0 && self.sign != 0) {
                return (direct, false);
            }
        }
        if x == 0.0 || self.sign == 0 {
            return (0.0, true);
        }
        let magnitude = (x.abs().ln() + self.log_magnitude).exp();
        let sign = f64::from(self.sign) * x.signum();
        (sign * magnitude, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_order_weight() {
        assert!((weight_w1(2.0, 0.1, 0.25) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn second_order_weight() {
        assert!(weight_w2(1.3, 0.5f64.sqrt(), 0.5).abs() < 1e-15);
        assert!((weight_w2(1.0, 0.0, 0.5) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn drift_factor() {
        assert_eq!(factor_m(0.0, 3.0, 0.7, 0.2), 0.0);
        assert!((factor_m(0.3, 2.0, 0.1, 0.25) - 0.06).abs() < 1e-15);
    }

    #[test]
    fn laplacian_factor() {
        assert!((factor_v(1.0, 2.0, 0.0, 0.5) - 0.25).abs() < 1e-15);
        assert!(factor_v(1.0, 2.0, 0.3f64.sqrt(), 0.3).abs() < 1e-15);
        // V = −½ σ_prev² W²(σ_cur).
        let (sp, sc, dw, dt) = (0.7, 1.9, 0.4, 0.3);
        let via_w2 = -0.5 * sp * sp * weight_w2(sc, dw, dt);
        assert!((factor_v(sp, sc, dw, dt) - via_w2).abs() < 1e-14);
    }

    #[test]
    fn switch_factor_values() {
        assert_eq!(switch_factor_p(0.0, 0.0, 1.0).unwrap(), 0.0);
        let p = switch_factor_p(0.06, 0.25, 0.242).unwrap();
        assert!((p - 0.31 / 0.242).abs() < 1e-14);
        let half = switch_factor(0.06, 0.25, 0.242, SwitchForm::HalfV).unwrap();
        assert!((half - 0.185 / 0.242).abs() < 1e-14);
        assert!(switch_factor_p(0.1, 0.1, 0.0).is_err());
        assert!(switch_factor_p(0.1, 0.1, -2.0).is_err());
    }

    #[test]
    fn accumulate_signs() {
        let w = WeightProduct::identity().accumulate(3.0).accumulate(-2.0);
        assert_eq!(w.sign(), -1);
        assert!((w.log_magnitude().exp() - 6.0).abs() < 1e-14);
        assert_eq!(w.plain_value(), -6.0);
        let z = WeightProduct::identity().accumulate(0.0);
        assert_eq!(z.sign(), 0);
        assert_eq!(z.value(), 0.0);
        assert_eq!(WeightProduct::identity().value(), 1.0);
    }

    #[test]
    fn long_product_representations_agree() {
        let w = (0..50).fold(WeightProduct::identity(), |w, _| w.accumulate(0.9));
        let closed = 0.9f64.powi(50);
        assert!(((w.plain_value() - closed) / closed).abs() < 1e-12);
        assert!(((w.log_magnitude().exp() - closed) / closed).abs() < 1e-9);
    }

    #[test]
    fn log_path_rescues_overflowing_product() {
        let w = WeightProduct::identity()
            .accumulate(1e200)
            .accumulate(1e200)
            .accumulate(-1e-200);
        assert!(w.needs_log_path());
        assert!(w.plain_value().is_infinite());
        let (v, used_log) = w.scale(1.0);
        assert!(used_log);
        assert!(((v + 1e200) / 1e200).abs() < 1e-9);
        let (v, used_log) = w.scale(1e-250);
        assert!(used_log);
        assert!(((v + 1e-50) / 1e-50).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn sign_log_matches_plain(factors in proptest::collection::vec(
            prop_oneof![-50.0f64..-1e-3, 1e-3f64..50.0], 0..40)) {
            let w = factors.iter().fold(WeightProduct::identity(), |w, &f| w.accumulate(f));
            let plain = w.plain_value();
            if plain.is_finite() && plain != 0.0 {
                let rebuilt = f64::from(w.sign()) * w.log_magnitude().exp();
                prop_assert!(((rebuilt - plain) / plain).abs() < 1e-9);
            }
        }
    }
}
