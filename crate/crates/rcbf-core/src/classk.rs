//! Extended class-K∞ functions: strictly increasing bijections of the real
//! line with α(0) = 0. They set the decay rate of the barrier constraint and
//! their inverse maps conjugate values back to safe-set inflation levels.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar function shared across threads.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Inverse for a custom class-K function: either supplied in closed form or
/// computed by bisection on a declared bracket.
#[derive(Clone)]
pub enum CustomInverse {
    Closed(ScalarFn),
    Bracket { lo: f64, hi: f64 },
}

/// Extended class-K∞ function with an evaluable inverse.
#[derive(Clone)]
pub enum ClassKappa {
    /// α(r) = c·r
    Linear { c: f64 },
    /// α(r) = c·r³
    Cubic { c: f64 },
    Custom {
        alpha: ScalarFn,
        inverse: CustomInverse,
    },
}

impl ClassKappa {
    pub fn linear(c: f64) -> Result<Self> {
        if c <= 0.0 || !c.is_finite() {
            return Err(Error::Config(format!("class-K linear gain must be > 0, got {c}")));
        }
        Ok(ClassKappa::Linear { c })
    }

    pub fn cubic(c: f64) -> Result<Self> {
        if c <= 0.0 || !c.is_finite() {
            return Err(Error::Config(format!("class-K cubic gain must be > 0, got {c}")));
        }
        Ok(ClassKappa::Cubic { c })
    }

    pub fn custom(alpha: ScalarFn, inverse: CustomInverse) -> Self {
        ClassKappa::Custom { alpha, inverse }
    }

    /// α(r)
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            ClassKappa::Linear { c } => c * r,
            ClassKappa::Cubic { c } => c * r * r * r,
            ClassKappa::Custom { alpha, .. } => alpha(r),
        }
    }

    /// α⁻¹(s). For the bracketed custom kind this bisects to ~1e-12
    /// resolution, well inside the documented 1e-9 round-trip tolerance.
    pub fn eval_inverse(&self, s: f64) -> Result<f64> {
        match self {
            ClassKappa::Linear { c } => Ok(s / c),
            ClassKappa::Cubic { c } => Ok((s / c).cbrt()),
            ClassKappa::Custom { alpha, inverse } => match inverse {
                CustomInverse::Closed(inv) => Ok(inv(s)),
                CustomInverse::Bracket { lo, hi } => bisect_inverse(alpha, s, *lo, *hi),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ClassKappa::Linear { c } => format!("linear(c={c})"),
            ClassKappa::Cubic { c } => format!("cubic(c={c})"),
            ClassKappa::Custom { .. } => "custom".to_string(),
        }
    }
}

fn bisect_inverse(alpha: &ScalarFn, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (flo, fhi) = (alpha(lo), alpha(hi));
    if !(flo <= target && target <= fhi) {
        return Err(Error::Inversion(format!(
            "bracket [{lo}, {hi}] maps to [{flo}, {fhi}], which does not straddle {target}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alpha(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_zero_maps_to_zero() {
        let ak = ClassKappa::linear(1.0).unwrap();
        assert_eq!(ak.eval(0.0), 0.0);
    }

    #[test]
    fn linear_inverse() {
        let ak = ClassKappa::linear(2.0).unwrap();
        assert_relative_eq!(ak.eval_inverse(-1.6).unwrap(), -0.8, max_relative = 1e-12);
    }

    #[test]
    fn cubic_inverse() {
        let ak = ClassKappa::cubic(1.0).unwrap();
        assert_relative_eq!(ak.eval_inverse(8.0).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn custom_bracket_round_trips() {
        // α(r) = r + r³, inverse only available numerically.
        let ak = ClassKappa::custom(
            Arc::new(|r: f64| r + r * r * r),
            CustomInverse::Bracket { lo: -10.0, hi: 10.0 },
        );
        for r in [-2.0, -0.3, 0.0, 0.7, 3.1] {
            let s = ak.eval(r);
            assert_relative_eq!(ak.eval_inverse(s).unwrap(), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn bracket_must_straddle() {
        let ak = ClassKappa::custom(
            Arc::new(|r: f64| r),
            CustomInverse::Bracket { lo: 0.0, hi: 1.0 },
        );
        assert!(ak.eval_inverse(5.0).is_err());
    }

    #[test]
    fn rejects_nonpositive_gain() {
        assert!(ClassKappa::linear(0.0).is_err());
        assert!(ClassKappa::cubic(-1.0).is_err());
    }

    #[test]
    fn strictly_increasing_on_grid() {
        let ak = ClassKappa::cubic(0.5).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let r = -5.0 + 0.05 * i as f64;
            let v = ak.eval(r);
            assert!(v > prev);
            prev = v;
        }
    }
}
