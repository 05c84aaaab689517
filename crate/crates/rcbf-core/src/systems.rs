//! Built-in benchmark systems: a cubic scalar plant whose safe-set boundary
//! is control-degenerate, and a two-body wheeled inverted pendulum
//! ("segway") with a pitch/pitch-rate barrier.

use nalgebra::{DMatrix, DVector};

use crate::barrier::Barrier;
use crate::error::{Error, Result};
use crate::system::{ControlAffineSystem, State};

/// ẋ = x(x−1.05)(x+1.05) + (1−x²)u with barrier h(x) = 1−x².
///
/// The input gain vanishes exactly on the safe-set boundary x = ±1 and at
/// x = 0, which makes this a sharp test case for degenerate-point
/// certification.
pub fn scalar_example() -> (ControlAffineSystem, Barrier) {
    let sys = ControlAffineSystem::new(
        1,
        1,
        "scalar",
        |x: &State| {
            let v = x[0];
            State::from_vec(vec![v * (v - 1.05) * (v + 1.05)])
        },
        |x: &State| {
            let v = x[0];
            DMatrix::from_vec(1, 1, vec![1.0 - v * v])
        },
    )
    .expect("scalar example dimensions are valid");
    let bar = Barrier::new(
        |x: &State| 1.0 - x[0] * x[0],
        |x: &State| State::from_vec(vec![-2.0 * x[0]]),
    );
    (sys, bar)
}

/// Physical parameters of the wheeled-inverted-pendulum surrogate.
/// Wheel inertia is modeled as a solid disc (½·m_w·R²) and rolled into the
/// translational mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegwayParams {
    /// kg, total wheel mass
    pub wheel_mass: f64,
    /// kg
    pub body_mass: f64,
    /// kg·m², body inertia about the axle
    pub body_inertia: f64,
    /// m, axle to body center of mass
    pub body_com_length: f64,
    /// m
    pub wheel_radius: f64,
    /// m/s²
    pub gravity: f64,
    /// N·m·s, viscous drive friction acting on the wheel/body relative rate
    pub viscous_friction: f64,
}

impl Default for SegwayParams {
    fn default() -> Self {
        Self {
            wheel_mass: 1.0,
            body_mass: 10.0,
            body_inertia: 1.0,
            body_com_length: 0.5,
            wheel_radius: 0.2,
            gravity: 9.81,
            viscous_friction: 0.1,
        }
    }
}

impl SegwayParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("wheel_mass", self.wheel_mass),
            ("body_mass", self.body_mass),
            ("body_inertia", self.body_inertia),
            ("body_com_length", self.body_com_length),
            ("wheel_radius", self.wheel_radius),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("segway {name} must be > 0, got {v}")));
            }
        }
        if self.viscous_friction < 0.0 || !self.viscous_friction.is_finite() {
            return Err(Error::Config(format!(
                "segway viscous_friction must be >= 0, got {}",
                self.viscous_friction
            )));
        }
        Ok(())
    }
}

/// Wheeled inverted pendulum in state x = (p, φ, v, ω) with wheel torque
/// input, and the barrier h = 1 − (3φ² + 2φω + ω²).
///
/// Equations of motion (generalized coordinates q = (p, φ), motor torque τ
/// acting between wheel and body, rolling without slip):
///
/// ```text
///   m_t v̇ + d cosφ ω̇ = τ/R − τ_f/R + d sinφ ω²
///   d cosφ v̇ + I_t ω̇ = −τ + τ_f + m_b g L sinφ
/// ```
///
/// with m_t = m_b + 1.5 m_w (wheel inertia ½ m_w R² rolled in),
/// d = m_b L, I_t = I_b + m_b L², and viscous drive friction
/// τ_f = b (v/R − ω). The torque enters both equations linearly, so the
/// dynamics are control-affine by construction.
pub fn segway(params: &SegwayParams) -> Result<(ControlAffineSystem, Barrier)> {
    params.validate()?;
    let p = *params;
    let m_t = p.body_mass + 1.5 * p.wheel_mass;
    let d_c = p.body_mass * p.body_com_length;
    let i_t = p.body_inertia + p.body_mass * p.body_com_length * p.body_com_length;
    // det M(φ) = m_t·I_t − d² cos²φ, smallest at φ = 0.
    if m_t * i_t - d_c * d_c <= 1e-12 {
        return Err(Error::Config(format!(
            "segway mass matrix is singular: m_t*I_t = {} <= d^2 = {}",
            m_t * i_t,
            d_c * d_c
        )));
    }

    let mass_solve = move |phi: f64, rhs: [f64; 2]| -> [f64; 2] {
        let off = d_c * phi.cos();
        let det = m_t * i_t - off * off;
        [
            (i_t * rhs[0] - off * rhs[1]) / det,
            (m_t * rhs[1] - off * rhs[0]) / det,
        ]
    };

    let sys = ControlAffineSystem::new(
        4,
        1,
        "segway",
        move |x: &State| {
            let (phi, v, om) = (x[1], x[2], x[3]);
            let tau_f = p.viscous_friction * (v / p.wheel_radius - om);
            let rhs = [
                -tau_f / p.wheel_radius + d_c * phi.sin() * om * om,
                tau_f + p.body_mass * p.gravity * p.body_com_length * phi.sin(),
            ];
            let acc = mass_solve(phi, rhs);
            State::from_vec(vec![v, om, acc[0], acc[1]])
        },
        move |x: &State| {
            let phi = x[1];
            let acc = mass_solve(phi, [1.0 / p.wheel_radius, -1.0]);
            DMatrix::from_vec(4, 1, vec![0.0, 0.0, acc[0], acc[1]])
        },
    )?;

    let bar = Barrier::new(
        |x: &State| {
            let (phi, om) = (x[1], x[3]);
            1.0 - (3.0 * phi * phi + 2.0 * phi * om + om * om)
        },
        |x: &State| {
            let (phi, om) = (x[1], x[3]);
            State::from_vec(vec![0.0, -6.0 * phi - 2.0 * om, 0.0, -2.0 * phi - 2.0 * om])
        },
    );
    Ok((sys, bar))
}

/// Fixed 1×4 state-feedback gain used by the experiments, u = −K x.
///
/// Derived offline as the continuous-time LQR for the default-parameter
/// linearization at the upright equilibrium with Q = diag(2, 1, 1, 1),
/// R = 0.5, then frozen here so runs stay deterministic. It stabilizes the
/// upright equilibrium but recovers position aggressively enough that, from
/// far-out initial conditions, the unfiltered closed loop leaves the barrier
/// set.
pub fn default_segway_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        1,
        4,
        &[-2.0, -40.92114177246187, -4.672625316726279, -8.47972836616269],
    )
}

/// Numeric Jacobian of the closed loop ẋ = f(x) − g(x)Kx at the origin.
/// Used by tests to check that the frozen gain is stabilizing.
pub fn closed_loop_jacobian(
    sys: &ControlAffineSystem,
    gain: &DMatrix<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = sys.n();
    if gain.nrows() != sys.m() || gain.ncols() != n {
        return Err(Error::Config(format!(
            "gain is {}x{}, expected {}x{}",
            gain.nrows(),
            gain.ncols(),
            sys.m(),
            n
        )));
    }
    let eval = |x: &State| -> Result<State> {
        let u = -(gain * x);
        sys.dynamics(x, &u)
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = DVector::zeros(n);
        let mut xm = DVector::zeros(n);
        xp[j] = step;
        xm[j] = -step;
        let fp = eval(&xp)?;
        let fm = eval(&xm)?;
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}
