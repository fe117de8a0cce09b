//! EKF for the mobile charging station, horizon-ahead prediction, worst-case
//! state and rendezvous placement.
//!
//! Charger states always carry a vertical coordinate at index 2; planar
//! vehicles are padded with a constant `z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::rk4_step;
use crate::error::{MeschError, Result};

/// z-score of the two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Tolerance for symmetry and negative eigenvalues of a covariance.
pub const COV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Time the belief refers to, s.
    pub stamp: f64,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, stamp: f64) -> Result<Self> {
        let b = Self { mean, cov, stamp };
        b.check()?;
        Ok(b)
    }

    /// Symmetry and PSD check.
    pub fn check(&self) -> Result<()> {
        let n = self.mean.len();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(MeschError::Argument(format!(
                "covariance is {}x{}, mean has {n} entries",
                self.cov.nrows(),
                self.cov.ncols()
            )));
        }
        let asym = (&self.cov - self.cov.transpose()).amax();
        if asym > COV_TOL {
            return Err(MeschError::Numerical(format!("covariance asymmetry {asym:.3e}")));
        }
        let min_eig = self.cov.clone().symmetric_eigenvalues().min();
        if min_eig < -COV_TOL {
            return Err(MeschError::Numerical(format!(
                "covariance lost positive semidefiniteness: min eigenvalue {min_eig:.3e}, trace {:.3e}",
                self.cov.trace()
            )));
        }
        Ok(())
    }

    pub fn position(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.mean[0], self.mean[1], self.mean[2])
    }
}

/// Charging-station motion models.
#[derive(Debug, Clone, PartialEq)]
pub enum ChargerModel {
    /// Parked station, `f = 0`.
    Static { dim: usize },
    /// `[x, y, z, heading]` with `[speed, turn rate]`; `z` is constant.
    Unicycle,
    /// `x_dot = A x + B u`.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
}

impl ChargerModel {
    pub fn state_dim(&self) -> usize {
        match self {
            ChargerModel::Static { dim } => *dim,
            ChargerModel::Unicycle => 4,
            ChargerModel::Linear { a, .. } => a.nrows(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            ChargerModel::Static { .. } => 0,
            ChargerModel::Unicycle => 2,
            ChargerModel::Linear { b, .. } => b.ncols(),
        }
    }

    pub fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ChargerModel::Static { dim } => DVector::zeros(*dim),
            ChargerModel::Unicycle => {
                let th = x[3];
                DVector::from_vec(vec![u[0] * th.cos(), u[0] * th.sin(), 0.0, u[1]])
            }
            ChargerModel::Linear { a, b } => a * x + b * u,
        }
    }

    pub fn state_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ChargerModel::Static { dim } => DMatrix::zeros(*dim, *dim),
            ChargerModel::Unicycle => {
                let (s, c) = x[3].sin_cos();
                let mut a = DMatrix::zeros(4, 4);
                a[(0, 3)] = -u[0] * s;
                a[(1, 3)] = u[0] * c;
                a
            }
            ChargerModel::Linear { a, .. } => a.clone(),
        }
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64, t: f64) -> Result<DVector<f64>> {
        rk4_step(|x, u| self.deriv(x, u), x, u, dt, t)
    }
}

/// Covariance as a function of time: constant or piecewise constant.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeCovariance {
    Constant(DMatrix<f64>),
    /// `(start_time, covariance)` pairs sorted by start time.
    Piecewise(Vec<(f64, DMatrix<f64>)>),
}

impl TimeCovariance {
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        match self {
            TimeCovariance::Constant(m) => m,
            TimeCovariance::Piecewise(pieces) => {
                let mut cur = &pieces[0].1;
                for (start, m) in pieces {
                    if *start <= t {
                        cur = m;
                    }
                }
                cur
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Process noise intensity `W(t)`.
    pub w: TimeCovariance,
    /// Measurement noise covariance `V(t)`.
    pub v: TimeCovariance,
}

impl NoiseModel {
    pub fn constant(w: DMatrix<f64>, v: DMatrix<f64>) -> Self {
        Self {
            w: TimeCovariance::Constant(w),
            v: TimeCovariance::Constant(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObservationModel {
    #[default]
    Identity,
    /// First three state components.
    PositionOnly,
}

impl ObservationModel {
    pub fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ObservationModel::Identity => x.clone(),
            ObservationModel::PositionOnly => x.rows(0, 3).into_owned(),
        }
    }

    pub fn jacobian(&self, dim: usize) -> DMatrix<f64> {
        match self {
            ObservationModel::Identity => DMatrix::identity(dim, dim),
            ObservationModel::PositionOnly => DMatrix::identity(3, dim),
        }
    }

    pub fn output_dim(&self, dim: usize) -> usize {
        match self {
            ObservationModel::Identity => dim,
            ObservationModel::PositionOnly => 3,
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// EKF time update: RK4 mean, first-order covariance `F S F' + W dt`.
pub fn ekf_predict(
    b: &GaussianBelief,
    model: &ChargerModel,
    u: &DVector<f64>,
    noise: &NoiseModel,
    dt: f64,
) -> Result<GaussianBelief> {
    if !(dt > 0.0) {
        return Err(MeschError::Argument(format!("ekf_predict needs dt > 0, got {dt}")));
    }
    let n = b.mean.len();
    let f = DMatrix::identity(n, n) + model.state_jacobian(&b.mean, u) * dt;
    let mean = model.step(&b.mean, u, dt, b.stamp)?;
    let cov = symmetrize(&(&f * &b.cov * f.transpose() + noise.w.at(b.stamp) * dt));
    let out = GaussianBelief {
        mean,
        cov,
        stamp: b.stamp + dt,
    };
    out.check()?;
    Ok(out)
}

/// EKF measurement update in Joseph form.
pub fn ekf_update(
    b: &GaussianBelief,
    y: &DVector<f64>,
    obs: ObservationModel,
    v: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    if v.clone().cholesky().is_none() {
        return Err(MeschError::Argument("measurement covariance must be positive definite".into()));
    }
    let n = b.mean.len();
    let h = obs.jacobian(n);
    let s = &h * &b.cov * h.transpose() + v;
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| MeschError::Numerical("innovation covariance is singular".into()))?;
    let k = &b.cov * h.transpose() * s_inv;
    let innovation = y - obs.observe(&b.mean);
    let mean = &b.mean + &k * innovation;
    let i_kh = DMatrix::identity(n, n) - &k * &h;
    let cov = symmetrize(&(&i_kh * &b.cov * i_kh.transpose() + &k * v * k.transpose()));
    let out = GaussianBelief {
        mean,
        cov,
        stamp: b.stamp,
    };
    out.check()?;
    Ok(out)
}

/// Chain `T_R / dt` predictions with the charger's nominal controls.
pub fn propagate_horizon<U>(
    b: &GaussianBelief,
    model: &ChargerModel,
    nominal: U,
    noise: &NoiseModel,
    horizon: f64,
    dt: f64,
) -> Result<GaussianBelief>
where
    U: Fn(f64) -> DVector<f64>,
{
    if !(horizon > 0.0) || !(dt > 0.0) {
        return Err(MeschError::Argument("horizon and dt must be positive".into()));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 {
        return Err(MeschError::Argument(format!("dt = {dt} does not divide horizon {horizon}")));
    }
    let t0 = b.stamp;
    let mut cur = b.clone();
    for k in 0..steps as usize {
        let t = t0 + k as f64 * dt;
        cur = ekf_predict(&cur, model, &nominal(t), noise, dt)?;
        cur.stamp = t + dt;
    }
    cur.stamp = t0 + horizon;
    Ok(cur)
}

/// Per-axis 95% worst case: `mean + 1.96 sqrt(diag(cov))`.
pub fn worst_case_state(b: &GaussianBelief) -> Result<DVector<f64>> {
    let mut out = b.mean.clone();
    for i in 0..out.len() {
        let var = b.cov[(i, i)];
        if var < -COV_TOL {
            return Err(MeschError::Numerical(format!("negative variance {var:.3e} on axis {i}")));
        }
        out[i] += Z_95 * var.max(0.0).sqrt();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RendezvousPoint {
    pub state: DVector<f64>,
    /// Height above the predicted charger, m.
    pub d: f64,
    pub valid_at: f64,
}

impl RendezvousPoint {
    pub fn position(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.state[0], self.state[1], self.state[2])
    }
}

/// Rendezvous point `d` metres above the predicted charger state.
pub fn rendezvous_point(b: &GaussianBelief, d: f64) -> Result<RendezvousPoint> {
    if !(d > 0.0) {
        return Err(MeschError::Argument(format!("rendezvous offset d must be > 0, got {d}")));
    }
    if b.mean.len() < 3 {
        return Err(MeschError::Config(format!(
            "charger state has {} components; a z coordinate at index 2 is required",
            b.mean.len()
        )));
    }
    let mut state = b.mean.clone();
    state[2] += d;
    Ok(RendezvousPoint {
        state,
        d,
        valid_at: b.stamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn static_noise(n: usize, sigma2: f64) -> NoiseModel {
        NoiseModel::constant(DMatrix::identity(n, n) * sigma2, DMatrix::identity(n, n))
    }

    #[test]
    fn static_charger_covariance_grows_linearly() {
        let b = GaussianBelief::new(DVector::zeros(3), DMatrix::identity(3, 3) * 0.1, 0.0).unwrap();
        let model = ChargerModel::Static { dim: 3 };
        let out = propagate_horizon(&b, &model, |_| DVector::zeros(0), &static_noise(3, 0.02), 4.0, 0.05).unwrap();
        let expected = DMatrix::identity(3, 3) * (0.1 + 0.02 * 4.0);
        assert!((out.cov - expected).amax() < 1e-12);
        assert!((out.stamp - 4.0).abs() < 1e-12);
    }

    #[test]
    fn no_dynamics_no_noise_keeps_belief() {
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), DMatrix::identity(3, 3), 0.0).unwrap();
        let out = ekf_predict(&b, &ChargerModel::Static { dim: 3 }, &DVector::zeros(0), &static_noise(3, 0.0), 0.05).unwrap();
        assert_eq!(out.mean, b.mean);
        assert_eq!(out.cov, b.cov);
    }

    #[test]
    fn unicycle_mean_matches_deterministic_rollout() {
        let model = ChargerModel::Unicycle;
        let x0 = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.3]);
        let u = DVector::from_vec(vec![0.5, 0.0]);
        let b = GaussianBelief::new(x0.clone(), DMatrix::identity(4, 4) * 0.01, 0.0).unwrap();
        let out = propagate_horizon(&b, &model, |_| u.clone(), &static_noise(4, 0.01), 2.0, 0.05).unwrap();
        let mut x = x0;
        for k in 0..40 {
            x = model.step(&x, &u, 0.05, k as f64 * 0.05).unwrap();
        }
        assert_eq!(out.mean, x);
    }

    #[test]
    fn paper_horizon_step_count() {
        // 18 s at 20 Hz is 360 predictions; with unit W the trace grows by 4 * 18.
        let b = GaussianBelief::new(DVector::zeros(4), DMatrix::zeros(4, 4), 10.0).unwrap();
        let out = propagate_horizon(&b, &ChargerModel::Static { dim: 4 }, |_| DVector::zeros(0), &static_noise(4, 1.0), 18.0, 0.05).unwrap();
        assert!((out.cov.trace() - 72.0).abs() < 1e-9);
        assert!((out.stamp - 28.0).abs() < 1e-12);
    }

    #[test]
    fn horizon_must_be_divisible() {
        let b = GaussianBelief::new(DVector::zeros(3), DMatrix::zeros(3, 3), 0.0).unwrap();
        let r = propagate_horizon(&b, &ChargerModel::Static { dim: 3 }, |_| DVector::zeros(0), &static_noise(3, 1.0), 1.01, 0.05);
        assert!(r.is_err());
    }

    #[test]
    fn trace_non_decreasing_with_process_noise() {
        let model = ChargerModel::Unicycle;
        let u = DVector::from_vec(vec![0.3, 0.1]);
        let mut b = GaussianBelief::new(DVector::zeros(4), DMatrix::identity(4, 4) * 0.01, 0.0).unwrap();
        let noise = NoiseModel::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01, 0.0, 0.001])), DMatrix::identity(4, 4));
        let mut tr = b.cov.trace();
        for _ in 0..360 {
            b = ekf_predict(&b, &model, &u, &noise, 0.05).unwrap();
            assert!(b.cov.trace() >= tr);
            tr = b.cov.trace();
        }
    }

    #[test]
    fn uninformative_measurement_changes_nothing() {
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 0.0]), DMatrix::identity(3, 3) * 0.5, 0.0).unwrap();
        let y = DVector::from_vec(vec![5.0, -3.0, 2.0]);
        let out = ekf_update(&b, &y, ObservationModel::Identity, &(DMatrix::identity(3, 3) * 1e12)).unwrap();
        assert!((out.mean - b.mean).amax() < 1e-6);
    }

    #[test]
    fn perfect_measurement_snaps_to_observation() {
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 0.0]), DMatrix::identity(3, 3) * 0.5, 0.0).unwrap();
        let y = DVector::from_vec(vec![5.0, -3.0, 2.0]);
        let out = ekf_update(&b, &y, ObservationModel::Identity, &(DMatrix::identity(3, 3) * 1e-12)).unwrap();
        assert!((out.mean - y).amax() < 1e-6);
    }

    #[test]
    fn linear_gaussian_update_matches_conjugate_formula() {
        // Information-form posterior, independent of the gain form used by ekf_update.
        let p = DMatrix::from_row_slice(4, 4, &[2.0, 0.3, 0.1, 0.0, 0.3, 1.0, 0.2, 0.1, 0.1, 0.2, 1.5, 0.0, 0.0, 0.1, 0.0, 0.7]);
        let m = DVector::from_vec(vec![0.5, -1.0, 0.2, 3.0]);
        let v = DMatrix::from_row_slice(3, 3, &[0.4, 0.05, 0.0, 0.05, 0.3, 0.02, 0.0, 0.02, 0.2]);
        let y = DVector::from_vec(vec![1.0, -0.5, 0.0]);
        let h = DMatrix::identity(3, 4);
        let v_inv = v.clone().try_inverse().unwrap();
        let post_cov = (p.clone().try_inverse().unwrap() + h.transpose() * &v_inv * &h).try_inverse().unwrap();
        let post_mean = &post_cov * (p.clone().try_inverse().unwrap() * &m + h.transpose() * &v_inv * &y);
        let b = GaussianBelief::new(m, p, 0.0).unwrap();
        let out = ekf_update(&b, &y, ObservationModel::PositionOnly, &v).unwrap();
        assert!((out.mean - post_mean).amax() < 1e-9);
        assert!((out.cov - post_cov).amax() < 1e-9);
    }

    #[test]
    fn non_pd_measurement_covariance_rejected() {
        let b = GaussianBelief::new(DVector::zeros(3), DMatrix::identity(3, 3), 0.0).unwrap();
        let r = ekf_update(&b, &DVector::zeros(3), ObservationModel::Identity, &DMatrix::zeros(3, 3));
        assert!(matches!(r, Err(MeschError::Argument(_))));
    }

    #[test]
    fn zero_noise_linear_predict_is_discrete_lyapunov() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.1]);
        let model = ChargerModel::Linear { a: a.clone(), b: DMatrix::zeros(2, 1) };
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let b = GaussianBelief::new(DVector::zeros(2), cov.clone(), 0.0).unwrap();
        let out = ekf_predict(&b, &model, &DVector::zeros(1), &NoiseModel::constant(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)), 0.05).unwrap();
        let f = DMatrix::identity(2, 2) + a * 0.05;
        assert!((out.cov - &f * cov * f.transpose()).amax() < 1e-9);
    }

    #[test]
    fn worst_case_examples() {
        let b = GaussianBelief::new(DVector::zeros(4), DMatrix::zeros(4, 4), 0.0).unwrap();
        assert_eq!(worst_case_state(&b).unwrap(), b.mean);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.25, 0.0]));
        let b = GaussianBelief::new(DVector::zeros(4), cov, 0.0).unwrap();
        let w = worst_case_state(&b).unwrap();
        let expected = [3.92, 1.96, 0.98, 0.0];
        for i in 0..4 {
            assert!((w[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn worst_case_rejects_negative_variance() {
        let mut cov = DMatrix::zeros(3, 3);
        cov[(1, 1)] = -1e-6;
        let b = GaussianBelief { mean: DVector::zeros(3), cov, stamp: 0.0 };
        assert!(worst_case_state(&b).is_err());
        let mut cov = DMatrix::zeros(3, 3);
        cov[(1, 1)] = -1e-12;
        let b = GaussianBelief { mean: DVector::zeros(3), cov, stamp: 0.0 };
        assert_eq!(worst_case_state(&b).unwrap()[1], 0.0);
    }

    #[test]
    fn rendezvous_offsets_only_z() {
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 0.0, 0.7]), DMatrix::identity(4, 4), 3.5).unwrap();
        let rp = rendezvous_point(&b, 1.0).unwrap();
        assert_eq!(rp.state.as_slice(), &[1.0, 2.0, 1.0, 0.7]);
        assert_eq!(rp.valid_at, 3.5);
        assert!(rendezvous_point(&b, 0.0).is_err());
        let planar = GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2), 0.0).unwrap();
        assert!(matches!(rendezvous_point(&planar, 1.0), Err(MeschError::Config(_))));
    }

    proptest! {
        #[test]
        fn worst_case_scales_and_is_monotone(
            diag in prop::collection::vec(0.0f64..5.0, 4),
            extra in prop::collection::vec(0.0f64..5.0, 4),
            mean in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let m = DVector::from_vec(mean);
            let c1 = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
            let c2 = &c1 + DMatrix::from_diagonal(&DVector::from_vec(extra));
            let w1 = worst_case_state(&GaussianBelief { mean: m.clone(), cov: c1.clone(), stamp: 0.0 }).unwrap();
            let w2 = worst_case_state(&GaussianBelief { mean: m.clone(), cov: c2, stamp: 0.0 }).unwrap();
            let w4 = worst_case_state(&GaussianBelief { mean: m.clone(), cov: &c1 * 4.0, stamp: 0.0 }).unwrap();
            for i in 0..4 {
                prop_assert!(w1[i] <= w2[i]);
                prop_assert!(((w4[i] - m[i]) - 2.0 * (w1[i] - m[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn update_preserves_symmetry_and_psd(
            d in prop::collection::vec(0.01f64..2.0, 4),
            y in prop::collection::vec(-2.0f64..2.0, 4),
            vscale in 1e-4f64..10.0,
        ) {
            let b = GaussianBelief::new(DVector::zeros(4), DMatrix::from_diagonal(&DVector::from_vec(d)), 0.0).unwrap();
            let out = ekf_update(&b, &DVector::from_vec(y), ObservationModel::Identity, &(DMatrix::identity(4, 4) * vscale)).unwrap();
            prop_assert!(out.check().is_ok());
        }
    }
}
