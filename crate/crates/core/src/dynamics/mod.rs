//! Vehicle and battery models, RK4 integration and linearization.

pub mod battery;
pub mod quadrotor;
pub mod quat;

use nalgebra::{DMatrix, DVector, Matrix3, Vector4};

pub use battery::{battery_deriv, BatteryModel, ClassK, Discharge};
pub use quadrotor::{quadrotor_deriv, quadrotor_jacobians, QuadrotorParams, QuadrotorState};

use crate::error::{MeschError, Result};

/// Default central-difference step for [`linearize`].
pub const FD_STEP: f64 = 1e-6;

/// Robot state augmented with its state of charge.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: DVector<f64>,
    /// State of charge, percent. Never negative; depletion is flagged instead.
    pub e: f64,
}

/// The vehicle models used by robots and the charging station.
#[derive(Debug, Clone, PartialEq)]
pub enum RobotModel {
    /// 13-state rigid body, 4 rotor thrusts.
    Quadrotor(QuadrotorParams),
    /// `dim` positions followed by `dim` velocities, acceleration inputs.
    DoubleIntegrator { dim: usize },
    /// Planar `[x, y, heading]` with `[speed, turn rate]` inputs.
    Unicycle,
}

impl RobotModel {
    pub fn state_dim(&self) -> usize {
        match self {
            RobotModel::Quadrotor(_) => quadrotor::STATE_DIM,
            RobotModel::DoubleIntegrator { dim } => 2 * dim,
            RobotModel::Unicycle => 3,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            RobotModel::Quadrotor(_) => quadrotor::CONTROL_DIM,
            RobotModel::DoubleIntegrator { dim } => *dim,
            RobotModel::Unicycle => 2,
        }
    }

    pub fn is_quadrotor(&self) -> bool {
        matches!(self, RobotModel::Quadrotor(_))
    }

    /// Unchecked derivative; callers guarantee dimensions.
    pub fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            RobotModel::Quadrotor(p) => quadrotor_deriv(&QuadrotorState::from_vector(x), u, p),
            RobotModel::DoubleIntegrator { dim } => {
                let mut d = DVector::zeros(2 * dim);
                d.rows_mut(0, *dim).copy_from(&x.rows(*dim, *dim));
                d.rows_mut(*dim, *dim).copy_from(u);
                d
            }
            RobotModel::Unicycle => {
                let th = x[2];
                DVector::from_vec(vec![u[0] * th.cos(), u[0] * th.sin(), u[1]])
            }
        }
    }

    /// Analytic Jacobians `(df/dx, df/du)`.
    pub fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            RobotModel::Quadrotor(p) => quadrotor_jacobians(&QuadrotorState::from_vector(x), u, p),
            RobotModel::DoubleIntegrator { dim } => {
                let d = *dim;
                let mut a = DMatrix::zeros(2 * d, 2 * d);
                let mut b = DMatrix::zeros(2 * d, d);
                for i in 0..d {
                    a[(i, d + i)] = 1.0;
                    b[(d + i, i)] = 1.0;
                }
                (a, b)
            }
            RobotModel::Unicycle => {
                let (s, c) = x[2].sin_cos();
                let mut a = DMatrix::zeros(3, 3);
                a[(0, 2)] = -u[0] * s;
                a[(1, 2)] = u[0] * c;
                let mut b = DMatrix::zeros(3, 2);
                b[(0, 0)] = c;
                b[(1, 0)] = s;
                b[(2, 1)] = 1.0;
                (a, b)
            }
        }
    }

    /// One RK4 step with zero-order-hold control. Quaternions are renormalized.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64, t: f64) -> Result<DVector<f64>> {
        let mut next = rk4_step(|x, u| self.deriv(x, u), x, u, dt, t)?;
        if self.is_quadrotor() {
            let n = next.rows(3, 4).norm();
            next.rows_mut(3, 4).unscale_mut(n);
        }
        Ok(next)
    }

    /// Jacobians at `(x_bar, u_bar)` packaged with the sample time.
    pub fn linearize(&self, x_bar: &DVector<f64>, u_bar: &DVector<f64>, dt: f64) -> LinearizedModel {
        let (a, b) = self.jacobians(x_bar, u_bar);
        LinearizedModel {
            a,
            b,
            x_bar: x_bar.clone(),
            u_bar: u_bar.clone(),
            dt,
        }
    }
}

/// Dimension-checked dispatch over the vehicle models.
pub fn model_deriv(model: &RobotModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.state_dim() || u.len() != model.control_dim() {
        return Err(MeschError::Argument(format!(
            "model expects state {} / control {}, got {} / {}",
            model.state_dim(),
            model.control_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(model.deriv(x, u))
}

/// Classic fourth-order Runge-Kutta step holding `u` constant.
///
/// `t` is only used to label an integration error.
pub fn rk4_step<F>(deriv: F, x: &DVector<f64>, u: &DVector<f64>, dt: f64, t: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    if !(dt > 0.0) {
        return Err(MeschError::Argument(format!("rk4 step needs dt > 0, got {dt}")));
    }
    let k1 = deriv(x, u);
    let k2 = deriv(&(x + &k1 * (dt / 2.0)), u);
    let k3 = deriv(&(x + &k2 * (dt / 2.0)), u);
    let k4 = deriv(&(x + &k3 * dt), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(MeschError::Integration { t })
    }
}

/// Advance robot state and SoC together under one held control.
pub fn step_system(
    model: &RobotModel,
    battery: &BatteryModel,
    chi: &SystemState,
    u: &DVector<f64>,
    dt: f64,
    t: f64,
) -> Result<SystemState> {
    let x = model.step(&chi.x, u, dt, t)?;
    // The discharge rate depends on the held control only, so RK4 is exact here.
    let e = (chi.e + battery_deriv(battery, u) * dt).max(0.0);
    Ok(SystemState { x, e })
}

/// Continuous-time linearization about `(x_bar, u_bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub dt: f64,
}

impl LinearizedModel {
    /// Exact zero-order-hold discretization `(A_d, B_d)` over `dt`.
    pub fn discretize(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * self.dt));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * self.dt));
        let e = aug.exp();
        (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Central finite-difference linearization of an arbitrary derivative.
pub fn linearize<F>(deriv: F, x_bar: &DVector<f64>, u_bar: &DVector<f64>, dt: f64, step: f64) -> LinearizedModel
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let n = x_bar.len();
    let m = u_bar.len();
    let f0 = deriv(x_bar, u_bar);
    let rows = f0.len();
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DMatrix::zeros(rows, m);
    for j in 0..n {
        let mut xp = x_bar.clone();
        let mut xm = x_bar.clone();
        xp[j] += step;
        xm[j] -= step;
        a.set_column(j, &((deriv(&xp, u_bar) - deriv(&xm, u_bar)) / (2.0 * step)));
    }
    for j in 0..m {
        let mut up = u_bar.clone();
        let mut um = u_bar.clone();
        up[j] += step;
        um[j] -= step;
        b.set_column(j, &((deriv(x_bar, &up) - deriv(x_bar, &um)) / (2.0 * step)));
    }
    LinearizedModel {
        a,
        b,
        x_bar: x_bar.clone(),
        u_bar: u_bar.clone(),
        dt,
    }
}

/// Block-diagonal error-state map `E(q)`: identity on position, velocity and
/// rate, attitude Jacobian on the quaternion. 13 x 12.
pub fn error_state_map(q_bar: &Vector4<f64>) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(13, 12);
    let eye = Matrix3::<f64>::identity();
    e.view_mut((0, 0), (3, 3)).copy_from(&eye);
    e.view_mut((3, 3), (4, 3)).copy_from(&quat::attitude_jacobian(q_bar));
    e.view_mut((7, 6), (3, 3)).copy_from(&eye);
    e.view_mut((10, 9), (3, 3)).copy_from(&eye);
    e
}

/// Reduce a 13-state quadrotor linearization to the 12-state attitude-error
/// system `A_r = E^T A E`, `B_r = E^T B`.
pub fn reduce_attitude(lin: &LinearizedModel, q_bar: &Vector4<f64>) -> Result<LinearizedModel> {
    if (q_bar.norm() - 1.0).abs() > quat::UNIT_TOLERANCE {
        return Err(MeschError::Argument(format!(
            "reduction point quaternion has norm {}",
            q_bar.norm()
        )));
    }
    if lin.a.nrows() != 13 || lin.b.ncols() != 4 {
        return Err(MeschError::Argument("reduce_attitude needs a 13-state, 4-input model".into()));
    }
    let e = error_state_map(q_bar);
    let et = e.transpose();
    let xb = &lin.x_bar;
    let mut x_bar = DVector::zeros(12);
    x_bar.rows_mut(0, 3).copy_from(&xb.rows(0, 3));
    x_bar.rows_mut(6, 6).copy_from(&xb.rows(7, 6));
    Ok(LinearizedModel {
        a: &et * &lin.a * &e,
        b: &et * &lin.b,
        x_bar,
        u_bar: lin.u_bar.clone(),
        dt: lin.dt,
    })
}

/// Rank of `[B, AB, ..., A^(n-1) B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    c.svd(false, false).rank(tol)
}
