//! Closed-loop simulation: fixed-step RK4 on ẋ = f(x) + g(x)(u + d) with the
//! filtered input computed once per step from the corrupted estimate
//! (zero-order hold) and the disturbance sampled at the true state.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::barrier::Barrier;
use crate::classk::ClassKappa;
use crate::error::{Error, Result};
use crate::filter::{apply_filter, FilterKind};
use crate::system::{ControlAffineSystem, Input, State};
use crate::uncertainty::{corrupt_estimate, sample_disturbance, DisturbanceModel, EstimateModel};

/// Nominal (desired) controller evaluated at the estimate.
pub type Controller = Arc<dyn Fn(&State) -> Input + Send + Sync>;

pub fn nominal_zero(m: usize) -> Controller {
    Arc::new(move |_x: &State| Input::zeros(m))
}

/// u = −K x for a fixed gain matrix (m×n; checked against the system at
/// simulation start).
pub fn nominal_linear(gain: DMatrix<f64>) -> Controller {
    Arc::new(move |x: &State| -(&gain * x))
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// step, seconds
    pub dt: f64,
    /// total simulated time, seconds
    pub horizon: f64,
    /// ‖x‖ beyond which the run counts as escaped
    pub escape_radius: f64,
    /// record every k-th step (first and last steps always recorded)
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, escape_radius: f64, record_stride: usize) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        if horizon <= 0.0 || dt > horizon {
            return Err(Error::Config(format!(
                "horizon must satisfy 0 < dt <= horizon, got dt={dt}, horizon={horizon}"
            )));
        }
        if escape_radius <= 0.0 || !escape_radius.is_finite() {
            return Err(Error::Config(format!(
                "escape_radius must be > 0, got {escape_radius}"
            )));
        }
        if record_stride == 0 {
            return Err(Error::Config("record_stride must be >= 1".into()));
        }
        Ok(Self {
            dt,
            horizon,
            escape_radius,
            record_stride,
        })
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Completed,
    Escaped { t_escape: f64 },
    Infeasible { t_fail: f64 },
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Completed => "completed".into(),
            Outcome::Escaped { t_escape } => format!("escaped(t={t_escape})"),
            Outcome::Infeasible { t_fail } => format!("infeasible(t={t_fail})"),
        }
    }
}

/// Time-indexed closed-loop record. All columns have equal length; h and the
/// constraint slack are stored per recorded step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub estimates: Vec<State>,
    pub inputs: Vec<Input>,
    pub disturbances: Vec<Input>,
    pub h_values: Vec<f64>,
    pub slacks: Vec<f64>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn min_h(&self) -> f64 {
        self.h_values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_state_norm(&self) -> f64 {
        self.states.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}

/// One classical Runge–Kutta step of ẋ = f(x) + g(x)u with u held constant.
pub fn rk4_step(sys: &ControlAffineSystem, x: &State, u: &Input, dt: f64) -> Result<State> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::Config(format!("rk4 step needs dt > 0, got {dt}")));
    }
    let k1 = sys.dynamics(x, u)?;
    let k2 = sys.dynamics(&(x + &k1 * (dt / 2.0)), u)?;
    let k3 = sys.dynamics(&(x + &k2 * (dt / 2.0)), u)?;
    let k4 = sys.dynamics(&(x + &k3 * dt), u)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericBlowup(format!(
            "state became non-finite after a step from {x:?}"
        )));
    }
    Ok(next)
}

/// Run the closed loop. Per step: corrupt the estimate, filter the nominal
/// input at the estimate, sample the disturbance at the true state, then
/// advance with RK4. Filter infeasibility and escape terminate the run and
/// are encoded in the outcome, never as errors.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    sys: &ControlAffineSystem,
    bar: &Barrier,
    alpha: &ClassKappa,
    filter: Option<&FilterKind>,
    nominal: &Controller,
    est: &EstimateModel,
    dist: &DisturbanceModel,
    x0: &State,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(Error::Config(format!(
            "x0 has length {}, system '{}' expects {}",
            x0.len(),
            sys.label(),
            sys.n()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("x0 must be finite".into()));
    }
    if let EstimateModel::ConstantOffset { offset } = est {
        if offset.len() != sys.n() {
            return Err(Error::Config(format!(
                "estimate offset has length {}, expected {}",
                offset.len(),
                sys.n()
            )));
        }
    }
    if let DisturbanceModel::Constant { d } = dist {
        if d.len() != sys.m() {
            return Err(Error::Config(format!(
                "constant disturbance has length {}, expected {}",
                d.len(),
                sys.m()
            )));
        }
    }
    let probe = nominal(x0);
    if probe.len() != sys.m() {
        return Err(Error::Config(format!(
            "nominal controller returns length {}, system '{}' expects m={}",
            probe.len(),
            sys.label(),
            sys.m()
        )));
    }

    let n_steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        estimates: Vec::new(),
        inputs: Vec::new(),
        disturbances: Vec::new(),
        h_values: Vec::new(),
        slacks: Vec::new(),
        outcome: Outcome::Completed,
    };

    let mut x = x0.clone();
    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        let terminal = k == n_steps;
        let escaped = x.norm() > cfg.escape_radius;

        let xhat = corrupt_estimate(est, &x, bar, k as u64);
        let u_d = nominal(&xhat);
        let (u, slack) = match filter {
            None => (u_d, 0.0),
            Some(kind) => match apply_filter(sys, bar, alpha, kind, &u_d, &xhat) {
                Ok(res) => (res.u, res.slack),
                Err(Error::InfeasibleAtState(_)) if escaped => {
                    traj.outcome = Outcome::Escaped { t_escape: t };
                    break;
                }
                Err(Error::InfeasibleAtState(_)) => {
                    // record the failure point with zero input and the best
                    // achievable (negative) constraint margin
                    let margin = crate::filter::constraint_margin_at_zero(
                        sys,
                        bar,
                        alpha,
                        filter.expect("infeasibility implies a filter"),
                        &xhat,
                    )?;
                    traj.times.push(t);
                    traj.states.push(x.clone());
                    traj.estimates.push(xhat);
                    traj.inputs.push(Input::zeros(sys.m()));
                    traj.disturbances.push(Input::zeros(sys.m()));
                    traj.h_values.push(bar.h(&x));
                    traj.slacks.push(margin);
                    traj.outcome = Outcome::Infeasible { t_fail: t };
                    break;
                }
                Err(e) => return Err(e),
            },
        };
        let d = sample_disturbance(dist, sys, bar, &x, k as u64)?;

        if k % cfg.record_stride == 0 || terminal || escaped {
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.estimates.push(xhat);
            traj.inputs.push(u.clone());
            traj.disturbances.push(d.clone());
            traj.h_values.push(bar.h(&x));
            traj.slacks.push(slack);
        }
        if escaped {
            traj.outcome = Outcome::Escaped { t_escape: t };
            break;
        }
        if terminal {
            break;
        }

        match rk4_step(sys, &x, &(u + d), cfg.dt) {
            Ok(next) => x = next,
            Err(Error::NumericBlowup(_)) => {
                traj.outcome = Outcome::Escaped {
                    t_escape: (k + 1) as f64 * cfg.dt,
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robustness::RobustnessFunction;
    use crate::systems::scalar_example;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn state1(v: f64) -> State {
        State::from_vec(vec![v])
    }

    #[test]
    fn rk4_static_system() {
        let sys = ControlAffineSystem::new(
            1,
            1,
            "static",
            |_x: &State| State::zeros(1),
            |_x: &State| DMatrix::zeros(1, 1),
        )
        .unwrap();
        let x = rk4_step(&sys, &state1(0.7), &state1(5.0), 0.1).unwrap();
        assert_eq!(x[0], 0.7);
    }

    #[test]
    fn rk4_pure_integrator_exact() {
        let sys = ControlAffineSystem::new(
            1,
            1,
            "integrator",
            |_x: &State| State::zeros(1),
            |_x: &State| DMatrix::identity(1, 1),
        )
        .unwrap();
        let x = rk4_step(&sys, &state1(0.25), &state1(1.0), 0.1).unwrap();
        assert_relative_eq!(x[0], 0.35, epsilon = 1e-15);
    }

    #[test]
    fn rk4_exponential_accuracy() {
        let sys = ControlAffineSystem::new(
            1,
            1,
            "exp",
            |x: &State| x.clone(),
            |_x: &State| DMatrix::zeros(1, 1),
        )
        .unwrap();
        let x = rk4_step(&sys, &state1(1.0), &state1(0.0), 0.1).unwrap();
        assert!((x[0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn dt_greater_than_horizon_rejected() {
        assert!(SimConfig::new(1.0, 0.5, 10.0, 1).is_err());
        assert!(SimConfig::new(1e-3, 1.0, 10.0, 0).is_err());
    }

    fn scalar_run(
        filter: Option<FilterKind>,
        est: EstimateModel,
        dist: DisturbanceModel,
        x0: f64,
        cfg: SimConfig,
    ) -> Trajectory {
        let (sys, bar) = scalar_example();
        let alpha = ClassKappa::linear(1.0).unwrap();
        simulate(
            &sys,
            &bar,
            &alpha,
            filter.as_ref(),
            &nominal_zero(1),
            &est,
            &dist,
            &state1(x0),
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn plain_cbf_keeps_safe_set_invariant() {
        let cfg = SimConfig::new(1e-3, 5.0, 10.0, 10).unwrap();
        let traj = scalar_run(
            Some(FilterKind::PlainCbf),
            EstimateModel::Exact,
            DisturbanceModel::None,
            0.5,
            cfg,
        );
        assert_eq!(traj.outcome, Outcome::Completed);
        assert!(traj.min_h() >= -1e-6);
        assert!(traj.slacks.iter().all(|s| *s >= -1e-9));
    }

    #[test]
    fn rcbf_from_outside_converges_toward_safe_set() {
        let cfg = SimConfig::new(1e-3, 20.0, 10.0, 10).unwrap();
        let rf = RobustnessFunction::polynomial(0.2, 0.2).unwrap();
        let traj = scalar_run(
            Some(FilterKind::Rcbf(rf)),
            EstimateModel::Exact,
            DisturbanceModel::None,
            1.3,
            cfg,
        );
        assert_eq!(traj.outcome, Outcome::Completed);
        // h increases toward the boundary from below
        let h0 = traj.h_values.first().unwrap();
        let hf = traj.h_values.last().unwrap();
        assert!(h0 < &0.0 && hf > h0);
        assert!(*hf >= -1e-3, "final h should be near 0, got {hf}");
    }

    #[test]
    fn determinism_bitwise() {
        let cfg = SimConfig::new(1e-3, 2.0, 10.0, 7).unwrap();
        let mk = || {
            scalar_run(
                Some(FilterKind::Rcbf(
                    RobustnessFunction::polynomial(0.2, 0.2).unwrap(),
                )),
                EstimateModel::RandomBounded { delta: 0.1, seed: 5 },
                DisturbanceModel::RandomBounded { dbar: 0.2, seed: 6 },
                0.7,
                cfg,
            )
        };
        let a = mk();
        let b = mk();
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            assert_eq!(a.states[i][0].to_bits(), b.states[i][0].to_bits());
            assert_eq!(a.inputs[i][0].to_bits(), b.inputs[i][0].to_bits());
        }
    }

    #[test]
    fn fourth_order_error_decay() {
        // unfiltered smooth drift so the hold introduces no extra error
        let run = |dt: f64| {
            let cfg = SimConfig::new(dt, 2.0, 10.0, 1).unwrap();
            let traj = scalar_run(
                Some(FilterKind::PlainCbf),
                EstimateModel::Exact,
                DisturbanceModel::None,
                0.5,
                cfg,
            );
            assert_eq!(traj.outcome, Outcome::Completed);
            traj.states.last().unwrap()[0]
        };
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let ratio = (a - b).abs() / (b - c).abs();
        assert!(
            (8.0..=32.0).contains(&ratio),
            "dt-halving error ratio {ratio} outside [8, 32]"
        );
    }

    #[test]
    fn escape_detected() {
        // drift-unstable scalar system with no control authority
        let sys = ControlAffineSystem::new(
            1,
            1,
            "unstable",
            |x: &State| x * 2.0,
            |_x: &State| DMatrix::zeros(1, 1),
        )
        .unwrap();
        let bar = Barrier::new(|_x: &State| 1.0, |_x: &State| State::zeros(1));
        let alpha = ClassKappa::linear(1.0).unwrap();
        let cfg = SimConfig::new(1e-2, 10.0, 5.0, 1).unwrap();
        let traj = simulate(
            &sys,
            &bar,
            &alpha,
            None,
            &nominal_zero(1),
            &EstimateModel::Exact,
            &DisturbanceModel::None,
            &state1(0.5),
            &cfg,
        )
        .unwrap();
        assert!(matches!(traj.outcome, Outcome::Escaped { .. }));
        assert!(traj.max_state_norm() > 5.0);
    }

    #[test]
    fn infeasible_filter_aborts_run() {
        // g ≡ 0 with outward drift makes the plain constraint unsatisfiable
        // once the boundary margin is exhausted
        let sys = ControlAffineSystem::new(
            1,
            1,
            "driftout",
            |x: &State| x.clone(),
            |_x: &State| DMatrix::zeros(1, 1),
        )
        .unwrap();
        let bar = Barrier::new(
            |x: &State| 1.0 - x[0] * x[0],
            |x: &State| State::from_vec(vec![-2.0 * x[0]]),
        );
        let alpha = ClassKappa::linear(1.0).unwrap();
        let cfg = SimConfig::new(1e-2, 10.0, 50.0, 1).unwrap();
        let traj = simulate(
            &sys,
            &bar,
            &alpha,
            Some(&FilterKind::PlainCbf),
            &nominal_zero(1),
            &EstimateModel::Exact,
            &DisturbanceModel::None,
            &state1(0.8),
            &cfg,
        )
        .unwrap();
        assert!(matches!(traj.outcome, Outcome::Infeasible { .. }));
    }

    #[test]
    fn recorded_columns_consistent() {
        let cfg = SimConfig::new(1e-2, 1.0, 10.0, 13).unwrap();
        let traj = scalar_run(
            Some(FilterKind::PlainCbf),
            EstimateModel::Exact,
            DisturbanceModel::None,
            0.3,
            cfg,
        );
        assert_eq!(traj.times.len(), traj.states.len());
        assert_eq!(traj.times.len(), traj.estimates.len());
        assert_eq!(traj.times.len(), traj.inputs.len());
        assert_eq!(traj.times.len(), traj.disturbances.len());
        assert_eq!(traj.times.len(), traj.h_values.len());
        assert_eq!(traj.times.len(), traj.slacks.len());
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        // h bookkeeping matches the recorded states
        let (_, bar) = scalar_example();
        for (x, h) in traj.states.iter().zip(&traj.h_values) {
            assert_eq!(bar.h(x).to_bits(), h.to_bits());
        }
        // final step always recorded
        assert_relative_eq!(*traj.times.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_nominal_gain() {
        let gain = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        let ctrl = nominal_linear(gain);
        let u = ctrl(&State::from_vec(vec![2.0, 0.0, 0.0, 0.0]));
        assert_eq!(u[0], -2.0);
    }

    #[test]
    fn nominal_shape_mismatch_rejected() {
        let (sys, bar) = scalar_example();
        let alpha = ClassKappa::linear(1.0).unwrap();
        let cfg = SimConfig::new(1e-2, 1.0, 10.0, 1).unwrap();
        let bad = nominal_zero(3);
        let err = simulate(
            &sys,
            &bar,
            &alpha,
            None,
            &bad,
            &EstimateModel::Exact,
            &DisturbanceModel::None,
            &state1(0.1),
            &cfg,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
