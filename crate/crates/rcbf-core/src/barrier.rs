//! Barrier functions h with explicit gradients. The safe set is the
//! 0-superlevel set {x : h(x) ≥ 0}; certification elsewhere additionally
//! needs ∇h ≠ 0 wherever h(x) ≤ 0.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec;
use crate::system::State;

type BarrierFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&State) -> State + Send + Sync>;

#[derive(Clone)]
pub struct Barrier {
    h: BarrierFn,
    grad: GradientFn,
}

impl Barrier {
    pub fn new(
        h: impl Fn(&State) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&State) -> State + Send + Sync + 'static,
    ) -> Self {
        Self {
            h: Arc::new(h),
            grad: Arc::new(grad),
        }
    }

    pub fn h(&self, x: &State) -> f64 {
        (self.h)(x)
    }

    pub fn grad(&self, x: &State) -> State {
        (self.grad)(x)
    }
}

/// Report from [`validate_barrier`]: worst gradient disagreement against
/// central finite differences, and the sampled points where h ≤ 0 but the
/// gradient (numerically) vanishes.
#[derive(Debug, Clone)]
pub struct BarrierReport {
    pub points_checked: usize,
    /// max over the grid of ‖∇h − ∇h_fd‖ / max(1, ‖∇h‖)
    pub max_rel_grad_error: f64,
    /// Grid indices of points with h(x) ≤ 0 and ‖∇h(x)‖ below threshold.
    pub regularity_violations: Vec<usize>,
    pub gradient_zero_threshold: f64,
}

const GRAD_ZERO_THRESHOLD: f64 = 1e-8;

/// Check the declared gradient against central finite differences (step
/// `fd_step` relative per coordinate) and spot-check the regular-value
/// condition on the sampled sublevel points. Report-only: never errors.
pub fn validate_barrier(bar: &Barrier, grid: &[State], fd_step: f64) -> BarrierReport {
    let per_point = exec::map_indexed(grid.len(), |i| {
        let x = &grid[i];
        let ga = bar.grad(x);
        let mut gfd = State::zeros(x.len());
        for k in 0..x.len() {
            let hk = fd_step * x[k].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += hk;
            xm[k] -= hk;
            gfd[k] = (bar.h(&xp) - bar.h(&xm)) / (2.0 * hk);
        }
        let rel_err = (&ga - &gfd).norm() / ga.norm().max(1.0);
        let degenerate = bar.h(x) <= 0.0 && ga.norm() <= GRAD_ZERO_THRESHOLD;
        (rel_err, degenerate)
    });

    let mut max_rel = 0.0f64;
    let mut violations = Vec::new();
    for (i, (rel, degenerate)) in per_point.iter().enumerate() {
        max_rel = max_rel.max(*rel);
        if *degenerate {
            violations.push(i);
        }
    }
    BarrierReport {
        points_checked: grid.len(),
        max_rel_grad_error: max_rel,
        regularity_violations: violations,
        gradient_zero_threshold: GRAD_ZERO_THRESHOLD,
    }
}

/// Evenly spaced samples including both endpoints. Uses the
/// lo + span·i/(n−1) form so that rational fractions of the span land on
/// exact grid points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Cartesian grid over a box, one count per dimension.
pub fn grid_box(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Vec<State>> {
    if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
        return Err(Error::Config(
            "grid bounds and counts must have equal nonzero length".into(),
        ));
    }
    if counts.contains(&0) {
        return Err(Error::Config("grid counts must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .zip(counts)
        .map(|((&l, &h), &c)| linspace(l, h, c))
        .collect();
    let total: usize = counts.iter().product();
    let mut grid = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    loop {
        grid.push(State::from_iterator(
            lo.len(),
            idx.iter().enumerate().map(|(d, &i)| axes[d][i]),
        ));
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == counts.len() {
                return Ok(grid);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{scalar_example, segway, SegwayParams};

    fn grid_1d(lo: f64, hi: f64, n: usize) -> Vec<State> {
        linspace(lo, hi, n)
            .into_iter()
            .map(|v| State::from_vec(vec![v]))
            .collect()
    }

    #[test]
    fn scalar_barrier_gradient_matches_fd() {
        let (_, bar) = scalar_example();
        let report = validate_barrier(&bar, &grid_1d(-2.0, 2.0, 201), 1e-5);
        assert!(report.max_rel_grad_error <= 1e-4);
        assert!(report.regularity_violations.is_empty());
    }

    #[test]
    fn segway_barrier_gradient_matches_fd() {
        let (_, bar) = segway(&SegwayParams::default()).unwrap();
        let mut grid = Vec::new();
        for p in linspace(-4.0, 4.0, 3) {
            for phi in linspace(-1.0, 1.0, 7) {
                for v in linspace(-5.0, 5.0, 3) {
                    for om in linspace(-2.0, 2.0, 7) {
                        grid.push(State::from_vec(vec![p, phi, v, om]));
                    }
                }
            }
        }
        let report = validate_barrier(&bar, &grid, 1e-5);
        assert!(
            report.max_rel_grad_error <= 1e-6,
            "quadratic barrier should be near-exact, got {}",
            report.max_rel_grad_error
        );
    }

    #[test]
    fn constant_barrier_flagged_everywhere() {
        let bar = Barrier::new(|_x: &State| -1.0, |x: &State| State::zeros(x.len()));
        let grid = grid_1d(-1.0, 1.0, 11);
        let report = validate_barrier(&bar, &grid, 1e-5);
        assert_eq!(report.max_rel_grad_error, 0.0);
        assert_eq!(report.regularity_violations.len(), grid.len());
    }

    #[test]
    fn linspace_hits_rational_points_exactly() {
        let xs = linspace(-2.0, 2.0, 4001);
        assert_eq!(xs[1000], -1.0);
        assert_eq!(xs[2000], 0.0);
        assert_eq!(xs[3000], 1.0);
        assert_eq!(xs[4000], 2.0);
    }

    #[test]
    fn grid_box_counts() {
        let g = grid_box(&[0.0, 0.0], &[1.0, 2.0], &[3, 5]).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g[0], State::from_vec(vec![0.0, 0.0]));
        assert_eq!(g[14], State::from_vec(vec![1.0, 2.0]));
    }
}
