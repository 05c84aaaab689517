//! Control-affine systems ẋ = f(x) + g(x)u and their Lie derivatives along a
//! barrier.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::barrier::Barrier;
use crate::error::{Error, Result};

/// State vector in ℝⁿ.
pub type State = DVector<f64>;
/// Input vector in ℝᵐ. The admissible set is all of ℝᵐ.
pub type Input = DVector<f64>;

type DriftFn = Arc<dyn Fn(&State) -> State + Send + Sync>;
type InputMapFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;

/// ẋ = f(x) + g(x)u with immutable, thread-shareable evaluators.
#[derive(Clone)]
pub struct ControlAffineSystem {
    n: usize,
    m: usize,
    label: String,
    f: DriftFn,
    g: InputMapFn,
}

impl ControlAffineSystem {
    pub fn new(
        n: usize,
        m: usize,
        label: impl Into<String>,
        f: impl Fn(&State) -> State + Send + Sync + 'static,
        g: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Config(format!(
                "system dimensions must be positive, got n={n}, m={m}"
            )));
        }
        Ok(Self {
            n,
            m,
            label: label.into(),
            f: Arc::new(f),
            g: Arc::new(g),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift(&self, x: &State) -> State {
        (self.f)(x)
    }

    pub fn input_matrix(&self, x: &State) -> DMatrix<f64> {
        (self.g)(x)
    }

    /// f(x) + g(x)u with shape checks.
    pub fn dynamics(&self, x: &State, u: &Input) -> Result<State> {
        if x.len() != self.n {
            return Err(Error::Config(format!(
                "state has length {} but system '{}' expects n={}",
                x.len(),
                self.label,
                self.n
            )));
        }
        if u.len() != self.m {
            return Err(Error::Config(format!(
                "input has length {} but system '{}' expects m={}",
                u.len(),
                self.label,
                self.m
            )));
        }
        let fx = self.drift(x);
        let gx = self.input_matrix(x);
        if fx.len() != self.n || gx.nrows() != self.n || gx.ncols() != self.m {
            return Err(Error::Config(format!(
                "evaluators of '{}' returned f: {}, g: {}x{}, expected {}, {}x{}",
                self.label,
                fx.len(),
                gx.nrows(),
                gx.ncols(),
                self.n,
                self.n,
                self.m
            )));
        }
        Ok(fx + gx * u)
    }
}

/// (L_f h, L_g h) at x: the gradient of h dotted with the drift, and the
/// gradient pulled through the input matrix as an m-vector.
pub fn lie_derivatives(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    x: &State,
) -> Result<(f64, Input)> {
    if x.len() != sys.n() {
        return Err(Error::Config(format!(
            "state has length {} but system '{}' expects n={}",
            x.len(),
            sys.label(),
            sys.n()
        )));
    }
    let grad = bar.grad(x);
    if grad.len() != sys.n() {
        return Err(Error::Config(format!(
            "barrier gradient has length {}, expected {}",
            grad.len(),
            sys.n()
        )));
    }
    let fx = sys.drift(x);
    let gx = sys.input_matrix(x);
    if fx.len() != sys.n() || gx.nrows() != sys.n() || gx.ncols() != sys.m() {
        return Err(Error::Config(format!(
            "evaluators of '{}' returned f: {}, g: {}x{}",
            sys.label(),
            fx.len(),
            gx.nrows(),
            gx.ncols()
        )));
    }
    let lfh = grad.dot(&fx);
    let lgh = gx.transpose() * grad;
    Ok((lfh, lgh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::scalar_example;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_lie_derivatives_at_origin() {
        let (sys, bar) = scalar_example();
        let (lfh, lgh) = lie_derivatives(&sys, &bar, &State::from_vec(vec![0.0])).unwrap();
        assert_eq!(lfh, 0.0);
        assert_eq!(lgh[0], 0.0);
    }

    #[test]
    fn scalar_lie_derivatives_at_one() {
        let (sys, bar) = scalar_example();
        let (lfh, lgh) = lie_derivatives(&sys, &bar, &State::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(lfh, 0.205, epsilon = 1e-12);
        assert_relative_eq!(lgh[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_annihilates_both() {
        let sys = ControlAffineSystem::new(
            2,
            2,
            "rot",
            |x: &State| State::from_vec(vec![x[1], -x[0]]),
            |_x: &State| DMatrix::identity(2, 2),
        )
        .unwrap();
        let bar = Barrier::new(|_x: &State| 1.0, |x: &State| State::zeros(x.len()));
        let (lfh, lgh) = lie_derivatives(&sys, &bar, &State::from_vec(vec![0.3, 0.7])).unwrap();
        assert_eq!(lfh, 0.0);
        assert!(lgh.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let (sys, bar) = scalar_example();
        let err = lie_derivatives(&sys, &bar, &State::from_vec(vec![0.0, 1.0]));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn linear_in_drift() {
        let (sys, bar) = scalar_example();
        let doubled = ControlAffineSystem::new(
            1,
            1,
            "scalar-2f",
            {
                let inner = sys.clone();
                move |x: &State| inner.drift(x) * 2.0
            },
            {
                let inner = sys.clone();
                move |x: &State| inner.input_matrix(x)
            },
        )
        .unwrap();
        for xv in [-1.7, -0.4, 0.3, 0.9, 1.4] {
            let x = State::from_vec(vec![xv]);
            let (lfh, _) = lie_derivatives(&sys, &bar, &x).unwrap();
            let (lfh2, _) = lie_derivatives(&doubled, &bar, &x).unwrap();
            assert_relative_eq!(lfh2, 2.0 * lfh, max_relative = 1e-14);
        }
    }
}
