//! Run metrics and the theorem-side quantities they are compared against:
//! predicted safe-set inflation levels under actuation or measurement
//! uncertainty, the sampled controller-sensitivity bound, and the two
//! uncertainty thresholds derived from it.

use crate::classk::ClassKappa;
use crate::error::{Error, Result};
use crate::exec;
use crate::filter::stream_rng;
use crate::robustness::{rho_epsilon, zeta, RobustnessFunction};
use crate::sim::{Outcome, Trajectory};
use crate::system::{Input, State};
use rand::Rng;

/// Summary of one closed-loop run.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub min_h: f64,
    pub final_h: f64,
    /// First recorded time with h ≥ −tol; 0 when the run starts there, none
    /// if the trajectory never gets that close from below.
    pub time_to_safe: Option<f64>,
    /// Theorem-side inflation bound, when the scenario admits one.
    pub predicted_inflation: Option<f64>,
    /// max(0, −min h): how far the run actually left the safe set.
    pub observed_inflation: f64,
    pub bounded: bool,
    pub outcome: Outcome,
}

pub fn compute_metrics(traj: &Trajectory, tol: f64) -> Result<Metrics> {
    if traj.is_empty() {
        return Err(Error::Config("cannot summarize an empty trajectory".into()));
    }
    let min_h = traj.min_h();
    let final_h = *traj.h_values.last().unwrap();
    let time_to_safe = traj
        .times
        .iter()
        .zip(&traj.h_values)
        .find(|(_, h)| **h >= -tol)
        .map(|(t, _)| *t);
    Ok(Metrics {
        min_h,
        final_h,
        time_to_safe,
        predicted_inflation: None,
        observed_inflation: (-min_h).max(0.0),
        bounded: !matches!(traj.outcome, Outcome::Escaped { .. }),
        outcome: traj.outcome,
    })
}

/// Inflation level −α⁻¹(−ζ(d̄)) guaranteed invariant under actuation error
/// bounded by d̄. Zero whenever d̄ ≤ ε.
pub fn predicted_inflation_actuation(
    alpha: &ClassKappa,
    rf: &RobustnessFunction,
    dbar: f64,
) -> Result<f64> {
    let z = zeta(rf, dbar)?;
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok((-alpha.eval_inverse(-z)?).max(0.0))
}

/// Inflation level −α⁻¹(−ζ(L_k·δ)) for measurement error δ pushed through a
/// controller with Lipschitz constant L_k. Zero whenever L_k·δ ≤ ε.
pub fn predicted_inflation_measurement(
    alpha: &ClassKappa,
    rf: &RobustnessFunction,
    lip_controller: f64,
    delta: f64,
) -> Result<f64> {
    if lip_controller < 0.0 || delta < 0.0 {
        return Err(Error::Domain(format!(
            "lipschitz constant and delta must be >= 0, got ({lip_controller}, {delta})"
        )));
    }
    predicted_inflation_actuation(alpha, rf, lip_controller * delta)
}

/// Sampled estimate of sup over ‖e‖ ≤ r and region points z of
/// ‖k(z+e) − k(z)‖. Offsets are drawn on the radius-r sphere with directions
/// fixed by the seed, so the estimate is a lower bound on the true sup,
/// exactly linear in r for linear controllers, and zero at r = 0.
pub fn estimate_sigma_beta<K>(
    controller: &K,
    region: &[State],
    r: f64,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    K: Fn(&State) -> Input + Sync,
{
    if region.is_empty() {
        return Err(Error::Config("sigma estimation needs a nonempty region sample".into()));
    }
    if r < 0.0 {
        return Err(Error::Domain(format!("radius must be >= 0, got {r}")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let dim = region[0].len();
    let vals = exec::map_indexed(samples, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let z = &region[rng.random_range(0..region.len())];
        let dir = loop {
            let v = State::from_iterator(dim, (0..dim).map(|_| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            }));
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        let shifted = z + dir * r;
        (controller(&shifted) - controller(z)).norm()
    });
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Empirical uncertainty thresholds: below `eps1` the original safe set is
/// expected to stay invariant, below `eps2` an inflated set inside the β
/// super-level set does. Estimates, labeled with the sample count; `capped`
/// flags a bisection bracket that never closed within 10× the region
/// diameter.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub eps1: f64,
    pub eps1_capped: bool,
    pub eps2: f64,
    pub eps2_capped: bool,
    pub samples: usize,
}

/// Solve σ̂_β(ε₁) = ε and ζ(σ̂_β(ε₂)) = −α(−β) by bisection over the sampled
/// sensitivity estimate.
pub fn thresholds<K>(
    alpha: &ClassKappa,
    rf: &RobustnessFunction,
    controller: &K,
    beta: f64,
    region: &[State],
    samples: usize,
    seed: u64,
) -> Result<Thresholds>
where
    K: Fn(&State) -> Input + Sync,
{
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::Config(format!("beta must be > 0, got {beta}")));
    }
    if region.is_empty() {
        return Err(Error::Config("thresholds need a nonempty region sample".into()));
    }
    let eps = rho_epsilon(rf)?;
    let dim = region[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for z in region {
        for d in 0..dim {
            lo[d] = lo[d].min(z[d]);
            hi[d] = hi[d].max(z[d]);
        }
    }
    let diameter = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt()
        .max(1e-6);
    let cap = 10.0 * diameter;
    let sigma = |r: f64| estimate_sigma_beta(controller, region, r, samples, seed);

    // eps1: sigma(r) crosses eps
    let (eps1, eps1_capped) = bisect_crossing(&sigma, |s| Ok(s - eps), cap)?;
    // eps2: zeta(sigma(r)) crosses -alpha(-beta)
    let target = -alpha.eval(-beta);
    let (eps2, eps2_capped) = bisect_crossing(&sigma, |s| Ok(zeta(rf, s)? - target), cap)?;
    Ok(Thresholds {
        eps1,
        eps1_capped,
        eps2,
        eps2_capped,
        samples,
    })
}

/// Smallest r in [0, cap] where g(sigma(r)) crosses zero from below, to 1e-6;
/// (cap, true) if it never does.
fn bisect_crossing(
    sigma: &impl Fn(f64) -> Result<f64>,
    g: impl Fn(f64) -> Result<f64>,
    cap: f64,
) -> Result<(f64, bool)> {
    if g(sigma(cap)?)? < 0.0 {
        return Ok((cap, true));
    }
    let (mut lo, mut hi) = (0.0f64, cap);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if g(sigma(mid)?)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), false))
}
