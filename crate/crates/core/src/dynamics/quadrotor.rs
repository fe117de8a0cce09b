//! Rigid-body quadrotor with a plus-configuration rotor mixer.
//!
//! State layout (13): `[r(3), q(4), v(3), omega(3)]`, quaternion scalar-first.
//! Controls are the four rotor thrusts in newtons: front (+x), left (+y),
//! back (-x), right (-y). Rotors 1 and 3 spin opposite to 2 and 4.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};

use super::quat::{self, hat};
use crate::error::{MeschError, Result};

pub const STATE_DIM: usize = 13;
pub const CONTROL_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorState {
    pub r: Vector3<f64>,
    pub q: Vector4<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl QuadrotorState {
    pub fn hover_at(r: Vector3<f64>) -> Self {
        Self {
            r,
            q: quat::identity(),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        debug_assert_eq!(x.len(), STATE_DIM);
        Self {
            r: Vector3::new(x[0], x[1], x[2]),
            q: Vector4::new(x[3], x[4], x[5], x[6]),
            v: Vector3::new(x[7], x[8], x[9]),
            omega: Vector3::new(x[10], x[11], x[12]),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        x.fixed_rows_mut::<3>(0).copy_from(&self.r);
        x.fixed_rows_mut::<4>(3).copy_from(&self.q);
        x.fixed_rows_mut::<3>(7).copy_from(&self.v);
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }
}

/// Physical parameters. Constructed through [`QuadrotorParams::new`], which
/// rejects a non-positive mass or an inertia that is not symmetric positive
/// definite, so evaluation never has to.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorParams {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    arm_length: f64,
    torque_coeff: f64,
    gravity: f64,
    mixer: Matrix4<f64>,
}

impl QuadrotorParams {
    pub fn new(
        mass: f64,
        inertia: Matrix3<f64>,
        arm_length: f64,
        torque_coeff: f64,
        gravity: f64,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(MeschError::Config(format!("quadrotor mass must be > 0, got {mass}")));
        }
        if (inertia - inertia.transpose()).amax() > 1e-12 {
            return Err(MeschError::Config("inertia matrix is not symmetric".into()));
        }
        if inertia.cholesky().is_none() {
            return Err(MeschError::Config("inertia matrix is not positive definite".into()));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| MeschError::Config("inertia matrix is singular".into()))?;
        let l = arm_length;
        let c = torque_coeff;
        #[rustfmt::skip]
        let mixer = Matrix4::new(
            1.0, 1.0, 1.0, 1.0,
            0.0, l, 0.0, -l,
            -l, 0.0, l, 0.0,
            c, -c, c, -c,
        );
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
            arm_length,
            torque_coeff,
            gravity,
            mixer,
        })
    }

    /// Small research quadrotor: 0.5 kg, 17.5 cm arms.
    pub fn reference() -> Self {
        Self::new(
            0.5,
            Matrix3::from_diagonal(&Vector3::new(0.0023, 0.0023, 0.004)),
            0.175,
            0.0245,
            9.81,
        )
        .expect("reference parameters are valid")
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }
    pub fn arm_length(&self) -> f64 {
        self.arm_length
    }
    pub fn torque_coeff(&self) -> f64 {
        self.torque_coeff
    }
    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    /// Maps rotor thrusts to `[total thrust, tau_x, tau_y, tau_z]`.
    pub fn mixer(&self) -> &Matrix4<f64> {
        &self.mixer
    }

    /// Per-rotor thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }

    pub fn hover_control(&self) -> DVector<f64> {
        DVector::from_element(CONTROL_DIM, self.hover_thrust())
    }

    /// World-frame force: rotated collective thrust plus gravity.
    pub fn world_force(&self, q: &Vector4<f64>, u: &Vector4<f64>) -> Vector3<f64> {
        let thrust = u.sum();
        quat::rotate(q, &Vector3::new(0.0, 0.0, thrust)) - Vector3::new(0.0, 0.0, self.mass * self.gravity)
    }

    /// Body-frame torque from the rotor thrusts.
    pub fn body_torque(&self, u: &Vector4<f64>) -> Vector3<f64> {
        let w = self.mixer * u;
        Vector3::new(w[1], w[2], w[3])
    }
}

fn control4(u: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(u[0], u[1], u[2], u[3])
}

/// Continuous-time quadrotor dynamics.
pub fn quadrotor_deriv(s: &QuadrotorState, u: &DVector<f64>, p: &QuadrotorParams) -> DVector<f64> {
    let u4 = control4(u);
    let q_dot = quat::left_unchecked(&s.q) * quat::embed_h() * s.omega * 0.5;
    let v_dot = p.world_force(&s.q, &u4) / p.mass;
    let jw = p.inertia * s.omega;
    let w_dot = p.inertia_inv * (p.body_torque(&u4) - hat(&s.omega) * jw);
    let mut out = DVector::zeros(STATE_DIM);
    out.fixed_rows_mut::<3>(0).copy_from(&s.v);
    out.fixed_rows_mut::<4>(3).copy_from(&q_dot);
    out.fixed_rows_mut::<3>(7).copy_from(&v_dot);
    out.fixed_rows_mut::<3>(10).copy_from(&w_dot);
    out
}

/// Analytic state and control Jacobians of [`quadrotor_deriv`].
pub fn quadrotor_jacobians(
    s: &QuadrotorState,
    u: &DVector<f64>,
    p: &QuadrotorParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let u4 = control4(u);
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut b = DMatrix::zeros(STATE_DIM, CONTROL_DIM);

    // r_dot = v
    a.view_mut((0, 7), (3, 3)).copy_from(&Matrix3::identity());

    // q_dot = 0.5 L(q) H w = 0.5 R([0; w]) q
    let w_quat = Vector4::new(0.0, s.omega[0], s.omega[1], s.omega[2]);
    a.view_mut((3, 3), (4, 4))
        .copy_from(&(quat::quat_right(&w_quat) * 0.5));
    a.view_mut((3, 10), (4, 3))
        .copy_from(&(quat::left_unchecked(&s.q) * quat::embed_h() * 0.5));

    // v_dot = (1/m) (rotate(q, [0,0,T]) - m g e3)
    let thrust = u4.sum();
    let dq = quat::rotate_jacobian(&s.q, &Vector3::new(0.0, 0.0, thrust)) / p.mass;
    a.view_mut((7, 3), (3, 4)).copy_from(&dq);
    let z_world = quat::rotate(&s.q, &Vector3::new(0.0, 0.0, 1.0)) / p.mass;
    for j in 0..CONTROL_DIM {
        b.view_mut((7, j), (3, 1)).copy_from(&z_world);
    }

    // w_dot = J^-1 (tau - w x J w)
    let jw = p.inertia * s.omega;
    let dw = p.inertia_inv * (-hat(&s.omega) * p.inertia + hat(&jw));
    a.view_mut((10, 10), (3, 3)).copy_from(&dw);
    let torque_rows = p.mixer.fixed_view::<3, 4>(1, 0).into_owned();
    b.view_mut((10, 0), (3, 4))
        .copy_from(&(p.inertia_inv * torque_rows));

    (a, b)
}
