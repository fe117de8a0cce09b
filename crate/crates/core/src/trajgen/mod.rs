//! Tracking, back-to-base, candidate and landing trajectories by
//! time-varying LQ control on a model linearized about hover, plus the
//! reserve-energy bookkeeping built on them.
//!
//! Quadrotors are controlled in 12-state error coordinates
//! `[r, phi, v, omega]` with `phi` the Rodrigues attitude error against the
//! identity quaternion. Double integrators use their own state.

mod candidate;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::quadrotor::QuadrotorState;
use crate::dynamics::{quat, reduce_attitude, RobotModel};
use crate::error::{MeschError, Result};
use crate::riccati::{AffineLq, AffinePolicy, Seq};

pub use candidate::{
    b2b_trajectory, candidate_trajectory, landing_trajectory, reserve_energy, CandidateTrajectory, ReserveEnergy,
    ReserveMode, SystemTrajectory, TERMINAL_TOLERANCE,
};

/// Terminal weight standing in for a hard terminal constraint.
pub const TERMINAL_WEIGHT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingWeights {
    /// Diagonal of the stage state cost in control coordinates.
    pub q: Vec<f64>,
    /// Diagonal of the control cost.
    pub r: Vec<f64>,
    /// Diagonal of the terminal cost; `None` uses `q`.
    #[serde(default)]
    pub q_terminal: Option<Vec<f64>>,
}

impl TrackingWeights {
    /// Defaults sized for `model`: heavier on position than on rates.
    pub fn default_for(model: &RobotModel) -> Self {
        match model {
            RobotModel::Quadrotor(_) => Self {
                q: [vec![1.0; 3], vec![1.0; 3], vec![1.0; 3], vec![0.1; 3]].concat(),
                r: vec![1.0; 4],
                q_terminal: None,
            },
            _ => {
                let d = model.control_dim();
                Self {
                    q: [vec![10.0; d], vec![1.0; d]].concat(),
                    r: vec![0.1; d],
                    q_terminal: None,
                }
            }
        }
    }

    fn matrices(&self, nz: usize, nu: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let qf = self.q_terminal.as_ref().unwrap_or(&self.q);
        if self.q.len() != nz || qf.len() != nz || self.r.len() != nu {
            return Err(MeschError::Config(format!(
                "tracking weights need {nz} state and {nu} control entries, got {} and {}",
                self.q.len(),
                self.r.len()
            )));
        }
        if self.q.iter().chain(qf).any(|v| !(*v >= 0.0)) || self.r.iter().any(|v| !(*v > 0.0)) {
            return Err(MeschError::Config("tracking weights need Q >= 0 and R > 0".into()));
        }
        Ok((
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.r)),
            DMatrix::from_diagonal(&DVector::from_column_slice(qf)),
        ))
    }
}

/// Discrete LQ machinery for one robot model at one sample time.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub model: RobotModel,
    pub dt: f64,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    u_bar: DVector<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_terminal: DMatrix<f64>,
}

impl Tracker {
    pub fn new(model: RobotModel, weights: &TrackingWeights, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(MeschError::Config(format!("tracking dt must be > 0, got {dt}")));
        }
        let (a, b, u_bar) = match &model {
            RobotModel::Quadrotor(p) => {
                let x_bar = QuadrotorState::hover_at(Vector3::zeros()).to_vector();
                let u_bar = p.hover_control();
                let lin = reduce_attitude(&model.linearize(&x_bar, &u_bar, dt), &quat::identity())?;
                let (a, b) = lin.discretize();
                (a, b, u_bar)
            }
            RobotModel::DoubleIntegrator { dim } => {
                let x = DVector::zeros(2 * dim);
                let u = DVector::zeros(*dim);
                let (a, b) = model.linearize(&x, &u, dt).discretize();
                (a, b, u)
            }
            RobotModel::Unicycle => {
                return Err(MeschError::Config("unicycle robots have no hover equilibrium to track about".into()))
            }
        };
        let (q, r, q_terminal) = weights.matrices(a.nrows(), b.ncols())?;
        Ok(Self {
            model,
            dt,
            a,
            b,
            u_bar,
            q,
            r,
            q_terminal,
        })
    }

    /// Dimension of the control coordinates.
    pub fn error_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Discrete `(A, B)` in control coordinates.
    pub fn system(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a, &self.b)
    }

    pub fn equilibrium_control(&self) -> &DVector<f64> {
        &self.u_bar
    }

    /// Map a model state to control coordinates.
    pub fn coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.model {
            RobotModel::Quadrotor(_) => {
                let s = QuadrotorState::from_vector(x);
                let phi = quat::attitude_error(&quat::identity(), &s.q);
                let mut z = DVector::zeros(12);
                z.fixed_rows_mut::<3>(0).copy_from(&s.r);
                z.fixed_rows_mut::<3>(3).copy_from(&phi);
                z.fixed_rows_mut::<3>(6).copy_from(&s.v);
                z.fixed_rows_mut::<3>(9).copy_from(&s.omega);
                z
            }
            _ => x.clone(),
        }
    }

    /// Inverse of [`Tracker::coordinates`].
    pub fn state_from_coordinates(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.model {
            RobotModel::Quadrotor(_) => {
                let phi = Vector3::new(z[3], z[4], z[5]);
                QuadrotorState {
                    r: Vector3::new(z[0], z[1], z[2]),
                    q: quat::from_attitude_error(&quat::identity(), &phi),
                    v: Vector3::new(z[6], z[7], z[8]),
                    omega: Vector3::new(z[9], z[10], z[11]),
                }
                .to_vector()
            }
            _ => z.clone(),
        }
    }

    /// Hovering (zero-velocity, level) state at `p`, in control coordinates.
    /// For planar double integrators only the leading components of `p` are used.
    pub fn hover_coordinates(&self, p: &Vector3<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.error_dim());
        let k = self.spatial_dim();
        for i in 0..k {
            z[i] = p[i];
        }
        z
    }

    /// Reference in control coordinates for a position/velocity pair.
    pub fn reference_coordinates(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> DVector<f64> {
        let mut z = self.hover_coordinates(p);
        let k = self.spatial_dim();
        let v_off = if self.model.is_quadrotor() { 6 } else { k };
        for i in 0..k {
            z[v_off + i] = v[i];
        }
        z
    }

    /// Number of position components (3 for quadrotors).
    pub fn spatial_dim(&self) -> usize {
        match self.model {
            RobotModel::Quadrotor(_) => 3,
            _ => self.b.ncols().min(3),
        }
    }

    /// Position of a model state, zero-padded to 3D.
    pub fn position(&self, x: &DVector<f64>) -> Vector3<f64> {
        let mut p = Vector3::zeros();
        for i in 0..self.spatial_dim() {
            p[i] = x[i];
        }
        p
    }

    fn lq<'a>(
        &'a self,
        q_terminal: &'a DMatrix<f64>,
        q_lin: Option<&'a [DVector<f64>]>,
        r_lin: Option<&'a [DVector<f64>]>,
    ) -> AffineLq<'a> {
        AffineLq {
            a: Seq::Const(&self.a),
            b: Seq::Const(&self.b),
            q: Seq::Const(&self.q),
            r: Seq::Const(&self.r),
            q_terminal,
            q_lin,
            r_lin,
        }
    }

    /// Affine tracking policy `u - u_bar = K_n z_n + k_n` for a reference in
    /// control coordinates (one entry per state, so `refs.len() - 1` steps).
    pub fn tracking_policy(&self, refs: &[DVector<f64>], terminal_weight: Option<f64>) -> Result<AffinePolicy> {
        if refs.len() < 2 {
            return Err(MeschError::Argument(format!("tracking needs >= 2 reference states, got {}", refs.len())));
        }
        let qf = match terminal_weight {
            Some(w) => DMatrix::identity(self.error_dim(), self.error_dim()) * w,
            None => self.q_terminal.clone(),
        };
        let last = refs.len() - 1;
        let q_lin: Vec<_> = refs
            .iter()
            .enumerate()
            .map(|(n, z)| if n == last { &qf * z * -2.0 } else { &self.q * z * -2.0 })
            .collect();
        self.lq(&qf, Some(&q_lin), None).solve(refs.len())
    }

    /// Feedback gains of the constant-target regulator over `steps` steps.
    pub fn regulator_gains(&self, steps: usize, terminal_weight: f64) -> Result<Vec<DMatrix<f64>>> {
        let qf = DMatrix::identity(self.error_dim(), self.error_dim()) * terminal_weight;
        Ok(self.lq(&qf, None, None).solve(steps + 1)?.gains)
    }

    /// Control at step `n` of an affine policy.
    pub fn policy_control(&self, policy: &AffinePolicy, n: usize, x: &DVector<f64>) -> DVector<f64> {
        policy.control(n, &self.coordinates(x)) + &self.u_bar
    }

    /// Control driving toward the hover target `target` (control coordinates).
    pub fn regulator_control(&self, gain: &DMatrix<f64>, x: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        gain * (self.coordinates(x) - target) + &self.u_bar
    }
}

/// Track `refs` (control coordinates) from `x_start` and return the
/// nonlinear RK4 rollout of the resulting policy.
pub fn lq_track(
    tracker: &Tracker,
    refs: &[DVector<f64>],
    x_start: &DVector<f64>,
    terminal_weight: Option<f64>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let policy = tracker.tracking_policy(refs, terminal_weight)?;
    let mut states = Vec::with_capacity(refs.len());
    let mut controls = Vec::with_capacity(refs.len() - 1);
    states.push(x_start.clone());
    for n in 0..policy.steps() {
        let u = tracker.policy_control(&policy, n, &states[n]);
        let next = tracker.model.step(&states[n], &u, tracker.dt, n as f64 * tracker.dt)?;
        controls.push(u);
        states.push(next);
    }
    Ok((states, controls))
}
