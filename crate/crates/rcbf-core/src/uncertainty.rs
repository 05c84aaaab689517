//! Corruption models for the state estimate and additive actuation
//! disturbance. Random variants draw from a counter-keyed generator per
//! (seed, step) so sweeps reproduce exactly and independently of evaluation
//! order.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::barrier::Barrier;
use crate::error::Result;
use crate::filter::stream_rng;
use crate::system::{lie_derivatives, ControlAffineSystem, Input, State};

/// How the estimate x̂ relates to the true state: always ‖x̂ − x‖ ≤ δ, with
/// δ = ‖e‖ for the constant-offset variant.
#[derive(Clone, Debug)]
pub enum EstimateModel {
    Exact,
    ConstantOffset { offset: Vec<f64> },
    /// Moves the estimate along +∇h, i.e. the estimate looks safer than the
    /// true state. Falls back to the first coordinate direction where the
    /// gradient vanishes.
    InwardGradient { delta: f64 },
    RandomBounded { delta: f64, seed: u64 },
}

impl EstimateModel {
    pub fn bound(&self) -> f64 {
        match self {
            EstimateModel::Exact => 0.0,
            EstimateModel::ConstantOffset { offset } => {
                offset.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            EstimateModel::InwardGradient { delta } | EstimateModel::RandomBounded { delta, .. } => {
                *delta
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            EstimateModel::Exact => "exact".into(),
            EstimateModel::ConstantOffset { offset } => format!("constant_offset{offset:?}"),
            EstimateModel::InwardGradient { delta } => format!("inward_gradient(delta={delta})"),
            EstimateModel::RandomBounded { delta, seed } => {
                format!("random_bounded(delta={delta},seed={seed})")
            }
        }
    }
}

/// Additive input disturbance with ‖d‖ ≤ d̄.
#[derive(Clone, Debug)]
pub enum DisturbanceModel {
    None,
    Constant { d: Vec<f64> },
    /// −d̄·L_g h(x)ᵀ/‖L_g h(x)‖: the ball extreme point minimizing ḣ at the
    /// true state; zero where the gain vanishes.
    WorstCaseAntiGradient { dbar: f64 },
    RandomBounded { dbar: f64, seed: u64 },
}

impl DisturbanceModel {
    pub fn bound(&self) -> f64 {
        match self {
            DisturbanceModel::None => 0.0,
            DisturbanceModel::Constant { d } => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            DisturbanceModel::WorstCaseAntiGradient { dbar }
            | DisturbanceModel::RandomBounded { dbar, .. } => *dbar,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DisturbanceModel::None => "none".into(),
            DisturbanceModel::Constant { d } => format!("constant{d:?}"),
            DisturbanceModel::WorstCaseAntiGradient { dbar } => format!("worst_case(dbar={dbar})"),
            DisturbanceModel::RandomBounded { dbar, seed } => {
                format!("random_bounded(dbar={dbar},seed={seed})")
            }
        }
    }
}

fn unit_sphere_sample(dim: usize, rng: &mut impl Rng) -> State {
    loop {
        let v = State::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Produce the estimate for step `step` of a run.
pub fn corrupt_estimate(model: &EstimateModel, x: &State, bar: &Barrier, step: u64) -> State {
    match model {
        EstimateModel::Exact => x.clone(),
        EstimateModel::ConstantOffset { offset } => x + State::from_vec(offset.clone()),
        EstimateModel::InwardGradient { delta } => {
            let g = bar.grad(x);
            let n = g.norm();
            let dir = if n <= 1e-12 {
                let mut e = State::zeros(x.len());
                e[0] = 1.0;
                e
            } else {
                g / n
            };
            x + dir * *delta
        }
        EstimateModel::RandomBounded { delta, seed } => {
            let mut rng = stream_rng(*seed, step);
            let dir = unit_sphere_sample(x.len(), &mut rng);
            let w: f64 = rng.random();
            x + dir * (*delta * w)
        }
    }
}

/// Sample the input disturbance for step `step` of a run.
pub fn sample_disturbance(
    model: &DisturbanceModel,
    sys: &ControlAffineSystem,
    bar: &Barrier,
    x: &State,
    step: u64,
) -> Result<Input> {
    Ok(match model {
        DisturbanceModel::None => Input::zeros(sys.m()),
        DisturbanceModel::Constant { d } => Input::from_iterator(sys.m(), d.iter().copied()),
        DisturbanceModel::WorstCaseAntiGradient { dbar } => {
            let (_, lgh) = lie_derivatives(sys, bar, x)?;
            let n = lgh.norm();
            if n <= 1e-12 {
                Input::zeros(sys.m())
            } else {
                lgh * (-dbar / n)
            }
        }
        DisturbanceModel::RandomBounded { dbar, seed } => {
            let mut rng = stream_rng(*seed, step);
            let dir = unit_sphere_sample(sys.m(), &mut rng);
            let w: f64 = rng.random();
            dir * (*dbar * w)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{scalar_example, segway, SegwayParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn exact_is_identity() {
        let (_, bar) = scalar_example();
        let x = State::from_vec(vec![0.42]);
        assert_eq!(corrupt_estimate(&EstimateModel::Exact, &x, &bar, 0), x);
    }

    #[test]
    fn inward_gradient_scalar_moves_inward() {
        let (_, bar) = scalar_example();
        let x = State::from_vec(vec![0.5]);
        let m = EstimateModel::InwardGradient { delta: 0.1 };
        let xh = corrupt_estimate(&m, &x, &bar, 0);
        assert_relative_eq!(xh[0], 0.4, epsilon = 1e-15);
        assert!(bar.h(&xh) > bar.h(&x));
    }

    #[test]
    fn inward_gradient_zero_gradient_fallback() {
        let (_, bar) = scalar_example();
        let x = State::from_vec(vec![0.0]);
        let m = EstimateModel::InwardGradient { delta: 0.1 };
        let xh = corrupt_estimate(&m, &x, &bar, 0);
        assert_relative_eq!(xh[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn constant_offset_norm_equals_bound() {
        let (_, bar) = scalar_example();
        let m = EstimateModel::ConstantOffset { offset: vec![-0.3] };
        let x = State::from_vec(vec![1.0]);
        let xh = corrupt_estimate(&m, &x, &bar, 5);
        assert_relative_eq!((xh - &x).norm(), m.bound(), epsilon = 1e-15);
    }

    #[test]
    fn worst_case_disturbance_direction() {
        let (sys, bar) = scalar_example();
        let x = State::from_vec(vec![0.5]);
        let m = DisturbanceModel::WorstCaseAntiGradient { dbar: 0.1 };
        let d = sample_disturbance(&m, &sys, &bar, &x, 0).unwrap();
        assert_relative_eq!(d[0], 0.1, epsilon = 1e-15);
        // vanishing gain: no descent direction
        let x0 = State::from_vec(vec![0.0]);
        let d0 = sample_disturbance(&m, &sys, &bar, &x0, 0).unwrap();
        assert_eq!(d0[0], 0.0);
    }

    #[test]
    fn bounds_hold_over_many_draws() {
        let (sys, bar) = scalar_example();
        let em = EstimateModel::RandomBounded { delta: 0.2, seed: 9 };
        let dm = DisturbanceModel::RandomBounded { dbar: 0.7, seed: 10 };
        let x = State::from_vec(vec![0.3]);
        for step in 0..10_000u64 {
            let xh = corrupt_estimate(&em, &x, &bar, step);
            assert!((xh - &x).norm() <= 0.2 + 1e-12);
            let d = sample_disturbance(&dm, &sys, &bar, &x, step).unwrap();
            assert!(d.norm() <= 0.7 + 1e-12);
        }
    }

    #[test]
    fn draws_deterministic_per_seed_and_step() {
        let (_, bar) = scalar_example();
        let em = EstimateModel::RandomBounded { delta: 0.2, seed: 9 };
        let x = State::from_vec(vec![0.3]);
        let a = corrupt_estimate(&em, &x, &bar, 123);
        let b = corrupt_estimate(&em, &x, &bar, 123);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        let c = corrupt_estimate(&em, &x, &bar, 124);
        assert_ne!(a[0].to_bits(), c[0].to_bits());
    }

    #[test]
    fn worst_case_minimizes_over_ball_samples() {
        // planar two-input variant exercises the vector case
        let sys = ControlAffineSystem::new(
            2,
            2,
            "planar",
            |x: &State| x.clone(),
            |_x: &State| nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]),
        )
        .unwrap();
        let bar = Barrier::new(|x: &State| 1.0 - x.norm_squared(), |x: &State| x * -2.0);
        let m = DisturbanceModel::WorstCaseAntiGradient { dbar: 0.4 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let x = State::from_vec(vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            let (_, lgh) = lie_derivatives(&sys, &bar, &x).unwrap();
            if lgh.norm() <= 1e-9 {
                continue;
            }
            let d = sample_disturbance(&m, &sys, &bar, &x, trial).unwrap();
            let worst = lgh.dot(&d);
            assert_relative_eq!(worst, -0.4 * lgh.norm(), epsilon = 1e-12);
            for k in 0..1000u64 {
                let mut r2 = stream_rng(1000 + trial, k);
                let cand = unit_sphere_sample(2, &mut r2) * (0.4 * r2.random::<f64>());
                assert!(lgh.dot(&cand) >= worst - 1e-12);
            }
        }
    }

    #[test]
    fn inward_gradient_raises_h_on_segway() {
        let (_, bar) = segway(&SegwayParams::default()).unwrap();
        let m = EstimateModel::InwardGradient { delta: 0.05 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for step in 0..200u64 {
            let x = State::from_vec(vec![
                rng.random_range(-4.0..4.0),
                rng.random_range(0.1..0.6),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.1..0.6),
            ]);
            let xh = corrupt_estimate(&m, &x, &bar, step);
            assert!(
                bar.h(&xh) >= bar.h(&x),
                "inward estimate must not look less safe at {x:?}"
            );
        }
    }
}
