//! Robustness functions ρ: nonnegative, ρ(0) = 0, with a positive linear
//! lower-bound slope ε = inf ρ(y)/y and a finite conjugate
//! ζ(d) = −inf_y (ρ(y) − y·d). ε is the uncertainty level below which the
//! original safe set stays invariant; ζ(d) sets the inflation level beyond it.

use std::sync::Arc;

use crate::classk::ScalarFn;
use crate::error::{Error, Result};

/// ρ(y) with the two derived quantities of interest, ε and ζ.
#[derive(Clone)]
pub enum RobustnessFunction {
    /// ρ(y) = γ₁y + γ₂y², the workhorse closed-form family.
    Polynomial { gamma1: f64, gamma2: f64 },
    /// Arbitrary ρ evaluated numerically on [0, search_bound].
    Generic { rho: ScalarFn, search_bound: f64 },
}

impl RobustnessFunction {
    pub fn polynomial(gamma1: f64, gamma2: f64) -> Result<Self> {
        if gamma1 <= 0.0 || gamma2 <= 0.0 || !gamma1.is_finite() || !gamma2.is_finite() {
            return Err(Error::Config(format!(
                "polynomial robustness needs gamma1, gamma2 > 0, got ({gamma1}, {gamma2})"
            )));
        }
        Ok(RobustnessFunction::Polynomial { gamma1, gamma2 })
    }

    pub fn generic(rho: impl Fn(f64) -> f64 + Send + Sync + 'static, search_bound: f64) -> Result<Self> {
        if search_bound <= 0.0 || !search_bound.is_finite() {
            return Err(Error::Config(format!(
                "generic robustness needs search_bound > 0, got {search_bound}"
            )));
        }
        Ok(RobustnessFunction::Generic {
            rho: Arc::new(rho),
            search_bound,
        })
    }

    pub fn describe(&self) -> String {
        match self {
            RobustnessFunction::Polynomial { gamma1, gamma2 } => {
                format!("poly(gamma1={gamma1},gamma2={gamma2})")
            }
            RobustnessFunction::Generic { search_bound, .. } => {
                format!("generic(bound={search_bound})")
            }
        }
    }
}

/// ρ(y) for y ≥ 0. The polynomial kind evaluates γ₁y + γ₂y².
pub fn rho_eval(rf: &RobustnessFunction, y: f64) -> Result<f64> {
    if y < 0.0 || !y.is_finite() {
        return Err(Error::Domain(format!("rho is defined on y >= 0, got {y}")));
    }
    Ok(match rf {
        RobustnessFunction::Polynomial { gamma1, gamma2 } => gamma1 * y + gamma2 * y * y,
        RobustnessFunction::Generic { rho, .. } => rho(y),
    })
}

/// ε = inf_{y>0} ρ(y)/y. Exactly γ₁ for the polynomial kind; for the generic
/// kind a log-spaced grid over (0, search_bound] plus golden-section
/// refinement. An infimum that is nonpositive — or indistinguishable from
/// zero at the sampling resolution (below 1e-9) — means ρ lacks the linear
/// lower bound and is rejected.
pub fn rho_epsilon(rf: &RobustnessFunction) -> Result<f64> {
    match rf {
        RobustnessFunction::Polynomial { gamma1, .. } => Ok(*gamma1),
        RobustnessFunction::Generic { rho, search_bound } => {
            if rho(0.0).abs() > 1e-12 {
                return Err(Error::InvalidRobustness(format!(
                    "rho(0) = {} but must be 0",
                    rho(0.0)
                )));
            }
            let ratio_log = |t: f64| {
                let y = t.exp();
                rho(y) / y
            };
            let t_lo = (search_bound * 1e-12).ln();
            let t_hi = search_bound.ln();
            let n = 2048;
            let mut best_i = 0usize;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                let t = t_lo + (t_hi - t_lo) * i as f64 / n as f64;
                let v = ratio_log(t);
                if v < best {
                    best = v;
                    best_i = i;
                }
            }
            let lo = t_lo + (t_hi - t_lo) * best_i.saturating_sub(1) as f64 / n as f64;
            let hi = t_lo + (t_hi - t_lo) * (best_i + 1).min(n) as f64 / n as f64;
            let (_, refined) = golden_section_min(&ratio_log, lo, hi, 1e-12, 200);
            let eps = refined.min(best);
            if eps <= 1e-9 {
                return Err(Error::InvalidRobustness(format!(
                    "inf rho(y)/y = {eps} on (0, {search_bound}] is not positive"
                )));
            }
            Ok(eps)
        }
    }
}

/// ζ(d) = −inf_{y≥0} (ρ(y) − y·d), nonnegative and nondecreasing, zero for
/// d ≤ ε. Polynomial kind: (max{0, d−γ₁})²/(4γ₂) in closed form. Generic
/// kind: coarse grid over [0, search_bound] then golden-section refinement,
/// with a divergence check at the right end.
pub fn zeta(rf: &RobustnessFunction, d: f64) -> Result<f64> {
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!("zeta is defined on d >= 0, got {d}")));
    }
    match rf {
        RobustnessFunction::Polynomial { gamma1, gamma2 } => {
            let excess = (d - gamma1).max(0.0);
            Ok(excess * excess / (4.0 * gamma2))
        }
        RobustnessFunction::Generic { rho, search_bound } => {
            let objective = |y: f64| rho(y) - y * d;
            let n = 2048;
            let step = search_bound / n as f64;
            let mut best_i = 0usize;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                let v = objective(i as f64 * step);
                if v < best {
                    best = v;
                    best_i = i;
                }
            }
            if best_i == n {
                let slope = (objective(*search_bound) - objective(*search_bound - step)) / step;
                if slope < -1e-10 * (1.0 + best.abs()) {
                    return Err(Error::UnboundedConjugate(format!(
                        "rho(y) - y*{d} still decreasing at y = {search_bound}"
                    )));
                }
            }
            let lo = step * best_i.saturating_sub(1) as f64;
            let hi = step * (best_i + 1).min(n) as f64;
            let (_, refined) = golden_section_min(&objective, lo, hi, 1e-13, 200);
            Ok((-refined.min(best)).max(0.0))
        }
    }
}

/// Golden-section minimization of a unimodal-on-[lo,hi] function.
/// Returns (argmin, min).
pub(crate) fn golden_section_min(
    f: &impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..max_iter {
        if hi - lo < tol * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}
