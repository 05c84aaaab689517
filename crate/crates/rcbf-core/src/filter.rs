//! Pointwise safety filters. Each filter builds a single affine (or, for the
//! measurement-robust variant, norm-augmented) constraint on the input at the
//! current state estimate and returns the minimum-deviation input satisfying
//! it, together with certification routines for the validity conditions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barrier::Barrier;
use crate::classk::ClassKappa;
use crate::error::{Error, Result};
use crate::exec;
use crate::robustness::{rho_epsilon, rho_eval, RobustnessFunction};
use crate::system::{lie_derivatives, ControlAffineSystem, Input, State};

/// Assumed uncertainty bound and Lipschitz constants for the
/// measurement-robust constraint.
#[derive(Clone)]
pub struct MrcbfParams {
    /// δ(x̂): assumed estimation-error bound at the queried estimate.
    pub delta: Arc<dyn Fn(&State) -> f64 + Send + Sync>,
    pub lip_lfh: f64,
    pub lip_lgh: f64,
    pub lip_alpha_h: f64,
}

impl MrcbfParams {
    pub fn constant_delta(delta: f64, lip_lfh: f64, lip_lgh: f64, lip_alpha_h: f64) -> Result<Self> {
        if delta <= 0.0 || !delta.is_finite() {
            return Err(Error::Config(format!("mrcbf delta must be > 0, got {delta}")));
        }
        for (name, v) in [("lip_lfh", lip_lfh), ("lip_lgh", lip_lgh), ("lip_alpha_h", lip_alpha_h)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("mrcbf {name} must be >= 0, got {v}")));
            }
        }
        Ok(Self {
            delta: Arc::new(move |_x| delta),
            lip_lfh,
            lip_lgh,
            lip_alpha_h,
        })
    }
}

/// Which constraint the filter enforces at the estimate.
#[derive(Clone)]
pub enum FilterKind {
    PlainCbf,
    Rcbf(RobustnessFunction),
    Issf { eps: f64 },
    TunableRcbf { gamma1: f64, gamma2: f64, c1: f64, c2: f64 },
    Mrcbf(MrcbfParams),
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::PlainCbf => "cbf",
            FilterKind::Rcbf(_) => "rcbf",
            FilterKind::Issf { .. } => "issf",
            FilterKind::TunableRcbf { .. } => "tunable",
            FilterKind::Mrcbf(_) => "mrcbf",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FilterKind::PlainCbf => "cbf".into(),
            FilterKind::Rcbf(rf) => format!("rcbf[{}]", rf.describe()),
            FilterKind::Issf { eps } => format!("issf[eps={eps}]"),
            FilterKind::TunableRcbf { gamma1, gamma2, c1, c2 } => {
                format!("tunable[g1={gamma1},g2={gamma2},c1={c1},c2={c2}]")
            }
            FilterKind::Mrcbf(p) => format!(
                "mrcbf[Llfh={},Llgh={},Lah={}]",
                p.lip_lfh, p.lip_lgh, p.lip_alpha_h
            ),
        }
    }
}

/// Filter output: the input, the constraint value at that input, and whether
/// the nominal input violated the constraint.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub u: Input,
    pub slack: f64,
    pub active: bool,
    pub nominal_modified: bool,
}

/// min ‖u − u_d‖² s.t. a·u ≥ b, solved in closed form by projection.
/// A zero constraint vector with b > 0 is infeasible at this state; with
/// b ≤ 0 the constraint is vacuous.
pub fn halfspace_qp(u_d: &Input, a: &Input, b: f64) -> Result<Input> {
    if u_d.len() != a.len() {
        return Err(Error::Config(format!(
            "nominal input has length {}, constraint vector {}",
            u_d.len(),
            a.len()
        )));
    }
    let aa = a.dot(a);
    if aa == 0.0 {
        if b > 0.0 {
            return Err(Error::InfeasibleAtState(format!(
                "constraint 0·u >= {b} has no solution"
            )));
        }
        return Ok(u_d.clone());
    }
    let ad = a.dot(u_d);
    if ad >= b {
        Ok(u_d.clone())
    } else {
        Ok(u_d + a * ((b - ad) / aa))
    }
}

fn halfspace_filter_result(
    lfh: f64,
    lgh: &Input,
    alpha_h: f64,
    strengthening: f64,
    u_d: &Input,
) -> Result<FilterResult> {
    let b = strengthening - lfh - alpha_h;
    let violated = lgh.dot(u_d) < b;
    let u = halfspace_qp(u_d, lgh, b)?;
    let slack = lfh + lgh.dot(&u) + alpha_h - strengthening;
    Ok(FilterResult {
        u,
        slack,
        active: violated,
        nominal_modified: violated,
    })
}

/// Robustified constraint: L_f h + L_g h·u + α(h) ≥ ρ(‖L_g h‖), evaluated at
/// the estimate.
pub fn rcbf_filter(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    rf: &RobustnessFunction,
    u_d: &Input,
    xhat: &State,
) -> Result<FilterResult> {
    let (lfh, lgh) = lie_derivatives(sys, bar, xhat)?;
    let strengthening = rho_eval(rf, lgh.norm())?;
    halfspace_filter_result(lfh, &lgh, alpha.eval(bar.h(xhat)), strengthening, u_d)
}

/// Plain constraint: L_f h + L_g h·u + α(h) ≥ 0.
pub fn cbf_filter(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    u_d: &Input,
    xhat: &State,
) -> Result<FilterResult> {
    let (lfh, lgh) = lie_derivatives(sys, bar, xhat)?;
    halfspace_filter_result(lfh, &lgh, alpha.eval(bar.h(xhat)), 0.0, u_d)
}

/// Input-to-state-safety style strengthening ‖L_g h‖²/ε: quadratic term only,
/// so the linear lower-bound slope of a robustness function is absent.
pub fn issf_filter(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    eps_issf: f64,
    u_d: &Input,
    xhat: &State,
) -> Result<FilterResult> {
    if eps_issf <= 0.0 || !eps_issf.is_finite() {
        return Err(Error::Config(format!("issf eps must be > 0, got {eps_issf}")));
    }
    let (lfh, lgh) = lie_derivatives(sys, bar, xhat)?;
    let y = lgh.norm();
    halfspace_filter_result(lfh, &lgh, alpha.eval(bar.h(xhat)), y * y / eps_issf, u_d)
}

/// Tuning map εᵢ(r): 1 on r ≤ 0 and 1 + cᵢ·r beyond, so the strengthening
/// relaxes in the interior of the safe set and matches the plain
/// robustified constraint on and outside the boundary.
fn tuning_scale(r: f64, c: f64) -> f64 {
    if r > 0.0 {
        1.0 + c * r
    } else {
        1.0
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tunable_rcbf_filter(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    gamma1: f64,
    gamma2: f64,
    c1: f64,
    c2: f64,
    u_d: &Input,
    xhat: &State,
) -> Result<FilterResult> {
    if gamma1 <= 0.0 || gamma2 <= 0.0 || c1 < 0.0 || c2 < 0.0 {
        return Err(Error::Config(format!(
            "tunable filter needs gamma1, gamma2 > 0 and c1, c2 >= 0, got ({gamma1}, {gamma2}, {c1}, {c2})"
        )));
    }
    let (lfh, lgh) = lie_derivatives(sys, bar, xhat)?;
    let h = bar.h(xhat);
    let y = lgh.norm();
    let strengthening = (gamma1 / tuning_scale(h, c1)) * y + (gamma2 / tuning_scale(h, c2)) * y * y;
    halfspace_filter_result(lfh, &lgh, alpha.eval(h), strengthening, u_d)
}

fn mrcbf_slack(lfh: f64, lgh: &Input, alpha_h: f64, delta: f64, p: &MrcbfParams, u: &Input) -> f64 {
    lfh + lgh.dot(u) + alpha_h - delta * (p.lip_lfh + p.lip_alpha_h + p.lip_lgh * u.norm())
}

/// Nearest point of `[lo, hi] ∩ {a·u ≥ c}` to `ud` on the real line, if the
/// intersection is nonempty.
fn clamp_to_halfline(a: f64, c: f64, lo: f64, hi: f64, ud: f64) -> Option<f64> {
    let (flo, fhi) = if a > 0.0 {
        ((c / a).max(lo), hi)
    } else if a < 0.0 {
        (lo, (c / a).min(hi))
    } else if c <= 0.0 {
        (lo, hi)
    } else {
        return None;
    };
    if flo > fhi {
        return None;
    }
    Some(ud.clamp(flo, fhi))
}

/// Measurement-robust constraint
/// L_f h + L_g h·u + α(h) − δ(x̂)(𝓛_{L_f h} + 𝓛_{α∘h} + 𝓛_{L_g h}‖u‖) ≥ 0.
///
/// The ‖u‖ term makes the constraint non-affine. For m = 1 the sign of u is
/// case-split, giving two affine half-line problems solved exactly. For
/// m > 1 the input is found by bisecting on the norm budget r: project the
/// nominal onto the halfspace with the conservative offset at budget r and
/// shrink r until the projection fits inside the ball of radius r. Any such
/// point satisfies the original constraint.
pub fn mrcbf_filter(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    params: &MrcbfParams,
    u_d: &Input,
    xhat: &State,
) -> Result<FilterResult> {
    let (lfh, lgh) = lie_derivatives(sys, bar, xhat)?;
    let alpha_h = alpha.eval(bar.h(xhat));
    let delta = (params.delta)(xhat);
    if delta < 0.0 || !delta.is_finite() {
        return Err(Error::Config(format!("mrcbf delta(xhat) must be >= 0, got {delta}")));
    }
    // constraint: lgh·u − δ·L_lgh·‖u‖ ≥ c0
    let c0 = delta * (params.lip_lfh + params.lip_alpha_h) - lfh - alpha_h;
    let dl = delta * params.lip_lgh;

    let nominal_ok = lgh.dot(u_d) - dl * u_d.norm() >= c0;
    let u = if nominal_ok {
        u_d.clone()
    } else if sys.m() == 1 {
        let a = lgh[0];
        let ud = u_d[0];
        let pos = clamp_to_halfline(a - dl, c0, 0.0, f64::INFINITY, ud);
        let neg = clamp_to_halfline(a + dl, c0, f64::NEG_INFINITY, 0.0, ud);
        let best = match (pos, neg) {
            (Some(p), Some(n)) => {
                let (dp, dn) = ((p - ud).abs(), (n - ud).abs());
                if dp < dn || (dp == dn && p.abs() <= n.abs()) {
                    Some(p)
                } else {
                    Some(n)
                }
            }
            (Some(p), None) => Some(p),
            (None, Some(n)) => Some(n),
            (None, None) => None,
        };
        match best {
            Some(v) => Input::from_vec(vec![v]),
            None => {
                return Err(Error::InfeasibleAtState(format!(
                    "measurement-robust constraint empty at estimate {xhat:?} (|L_g h| = {} <= {dl}, required margin {c0} > 0)",
                    a.abs()
                )))
            }
        }
    } else {
        let y = lgh.norm();
        if y <= dl {
            // best achievable left side over all u is at u = 0
            if c0 > 0.0 {
                return Err(Error::InfeasibleAtState(format!(
                    "measurement-robust constraint empty at estimate {xhat:?} (‖L_g h‖ = {y} <= {dl}, required margin {c0} > 0)"
                )));
            }
            // any input inside the ball ‖u‖ ≤ −c0/(δL) is feasible
            let cap = if dl > 0.0 { -c0 / dl } else { f64::INFINITY };
            let un = u_d.norm();
            if un <= cap {
                u_d.clone()
            } else {
                u_d * (cap / un)
            }
        } else {
            let proj = |r: f64| -> Result<Input> { halfspace_qp(u_d, &lgh, c0 + dl * r) };
            let mut hi = 1.0f64.max(2.0 * u_d.norm());
            let mut grew = 0;
            while proj(hi)?.norm() > hi {
                hi *= 2.0;
                grew += 1;
                if grew > 60 {
                    return Err(Error::InfeasibleAtState(format!(
                        "norm-budget search diverged at estimate {xhat:?}"
                    )));
                }
            }
            let mut lo = 0.0f64;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if proj(mid)?.norm() > mid {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-14 * (1.0 + hi) {
                    break;
                }
            }
            proj(hi)?
        }
    };

    let slack = mrcbf_slack(lfh, &lgh, alpha_h, delta, params, &u);
    Ok(FilterResult {
        u,
        slack,
        active: !nominal_ok,
        nominal_modified: !nominal_ok,
    })
}

/// Best achievable constraint margin at the estimate, i.e. the constraint
/// value at zero input (which maximizes it whenever the constraint is
/// infeasible). Used to record the failure margin of aborted runs.
pub fn constraint_margin_at_zero(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    kind: &FilterKind,
    xhat: &State,
) -> Result<f64> {
    let (lfh, lgh) = lie_derivatives(sys, bar, xhat)?;
    let base = lfh + alpha.eval(bar.h(xhat));
    let y = lgh.norm();
    Ok(match kind {
        FilterKind::PlainCbf => base,
        FilterKind::Rcbf(rf) => base - rho_eval(rf, y)?,
        FilterKind::Issf { eps } => base - y * y / eps,
        FilterKind::TunableRcbf { gamma1, gamma2, c1, c2 } => {
            let h = bar.h(xhat);
            base - (gamma1 / tuning_scale(h, *c1)) * y
                - (gamma2 / tuning_scale(h, *c2)) * y * y
        }
        FilterKind::Mrcbf(p) => {
            let delta = (p.delta)(xhat);
            base - delta * (p.lip_lfh + p.lip_alpha_h)
        }
    })
}

/// Dispatch on the configured filter kind.
pub fn apply_filter(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    kind: &FilterKind,
    u_d: &Input,
    xhat: &State,
) -> Result<FilterResult> {
    match kind {
        FilterKind::PlainCbf => cbf_filter(sys, bar, alpha, u_d, xhat),
        FilterKind::Rcbf(rf) => rcbf_filter(sys, bar, alpha, rf, u_d, xhat),
        FilterKind::Issf { eps } => issf_filter(sys, bar, alpha, *eps, u_d, xhat),
        FilterKind::TunableRcbf { gamma1, gamma2, c1, c2 } => {
            tunable_rcbf_filter(sys, bar, alpha, *gamma1, *gamma2, *c1, *c2, u_d, xhat)
        }
        FilterKind::Mrcbf(p) => mrcbf_filter(sys, bar, alpha, p, u_d, xhat),
    }
}

/// Certification report for the robustified barrier condition: at grid
/// points where the input gain (numerically) vanishes, the drift alone must
/// keep the constraint nonnegative.
#[derive(Debug, Clone)]
pub struct RcbfCertReport {
    pub points_checked: usize,
    pub zero_tol_used: f64,
    pub epsilon: f64,
    /// (grid index, margin L_f h + α(h)) at near-degenerate points.
    pub near_degenerate: Vec<(usize, f64)>,
    /// Indices of near-degenerate points with negative margin.
    pub violations: Vec<usize>,
    /// Smallest margin over near-degenerate points, if any.
    pub min_margin: Option<f64>,
}

/// Check the degenerate-direction validity condition on a grid:
/// ‖L_g h‖ ≤ zero_tol ⟹ L_f h + α(h) ≥ 0. Defaults zero_tol to
/// 1e-6 times the largest ‖L_g h‖ seen on the grid.
pub fn certify_rcbf(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    rf: &RobustnessFunction,
    grid: &[State],
    zero_tol: Option<f64>,
) -> Result<RcbfCertReport> {
    let epsilon = rho_epsilon(rf)?;
    let evals = exec::map_indexed(grid.len(), |i| {
        let x = &grid[i];
        let (lfh, lgh) = lie_derivatives(sys, bar, x)?;
        Ok::<(f64, f64), Error>((lgh.norm(), lfh + alpha.eval(bar.h(x))))
    });
    let mut rows = Vec::with_capacity(evals.len());
    let mut max_y = 0.0f64;
    for e in evals {
        let (y, margin) = e?;
        max_y = max_y.max(y);
        rows.push((y, margin));
    }
    let tol = zero_tol.unwrap_or(1e-6 * max_y);
    let mut near = Vec::new();
    let mut violations = Vec::new();
    let mut min_margin: Option<f64> = None;
    for (i, (y, margin)) in rows.iter().enumerate() {
        if *y <= tol {
            near.push((i, *margin));
            min_margin = Some(min_margin.map_or(*margin, |m| m.min(*margin)));
            if *margin < 0.0 {
                violations.push(i);
            }
        }
    }
    Ok(RcbfCertReport {
        points_checked: grid.len(),
        zero_tol_used: tol,
        epsilon,
        near_degenerate: near,
        violations,
        min_margin,
    })
}

/// Certification report for the measurement-robust condition and the
/// admissible uniform uncertainty bound.
#[derive(Debug, Clone)]
pub struct MrcbfCertReport {
    pub points_checked: usize,
    /// Points where ‖L_g h‖ ≤ δ·𝓛_{L_g h} holds but the drift margin falls
    /// short of δ·(𝓛_{L_f h} + 𝓛_{α∘h}).
    pub violations: Vec<usize>,
    /// Points where the configured δ(x) exceeds the per-point extension bound.
    pub delta_bound_violations: Vec<usize>,
    /// Largest uniform δ admitted by the extension bound over the grid.
    pub admissible_delta: f64,
}

pub fn certify_mrcbf(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    params: &MrcbfParams,
    grid: &[State],
) -> Result<MrcbfCertReport> {
    let evals = exec::map_indexed(grid.len(), |i| {
        let x = &grid[i];
        let (lfh, lgh) = lie_derivatives(sys, bar, x)?;
        let y = lgh.norm();
        let margin = lfh + alpha.eval(bar.h(x));
        let delta = (params.delta)(x);
        let implication_violated =
            y <= delta * params.lip_lgh && margin < delta * (params.lip_lfh + params.lip_alpha_h);
        let by = if params.lip_lgh > 0.0 { y / params.lip_lgh } else { f64::INFINITY };
        let bm = if params.lip_lfh + params.lip_alpha_h > 0.0 {
            margin / (params.lip_lfh + params.lip_alpha_h)
        } else {
            f64::INFINITY
        };
        let bound = by.max(bm);
        Ok::<(bool, bool, f64), Error>((implication_violated, delta > bound, bound))
    });
    let mut violations = Vec::new();
    let mut delta_bound_violations = Vec::new();
    let mut admissible = f64::INFINITY;
    for (i, e) in evals.into_iter().enumerate() {
        let (impl_viol, delta_viol, bound) = e?;
        if impl_viol {
            violations.push(i);
        }
        if delta_viol {
            delta_bound_violations.push(i);
        }
        admissible = admissible.min(bound);
    }
    Ok(MrcbfCertReport {
        points_checked: grid.len(),
        violations,
        delta_bound_violations,
        admissible_delta: admissible,
    })
}

/// Axis-aligned box used for sampled estimates.
#[derive(Debug, Clone)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config(
                "box bounds must have equal nonzero length".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(l, h)| h <= l) {
            return Err(Error::Config(format!(
                "box has zero volume: lo = {lo:?}, hi = {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn sample(&self, rng: &mut impl Rng) -> State {
        State::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(&l, &h)| rng.random_range(l..=h)),
        )
    }
}

/// Largest difference quotient ‖f(x)−f(y)‖/‖x−y‖ over seeded random pairs in
/// the box. A lower estimate of the true Lipschitz constant; each pair draws
/// from its own counter-keyed stream so the result is independent of thread
/// count.
pub fn estimate_lipschitz<F>(f: F, region: &BoxRegion, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&State) -> nalgebra::DVector<f64> + Sync,
{
    if samples == 0 {
        return Err(Error::Config("lipschitz estimation needs samples > 0".into()));
    }
    let ratios = exec::map_indexed(samples, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let x = region.sample(&mut rng);
        let y = region.sample(&mut rng);
        let dist = (&x - &y).norm();
        if dist < 1e-12 {
            return 0.0;
        }
        (f(&x) - f(&y)).norm() / dist
    });
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Counter-keyed generator: one independent stream per (seed, index) pair,
/// so sampled loops reproduce regardless of evaluation order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
