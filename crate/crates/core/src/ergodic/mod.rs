//! Ergodic coverage trajectories by projection-based trajectory optimization.
//!
//! Trajectories live on forward-Euler discretized dynamics
//! `x_{n+1} = x_n + f(x_n, u_n) dt`. The leading `s` state components are
//! the spatial coordinates that enter the coverage metric.

mod pto;
mod spectral;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::RobotModel;
use crate::error::{MeschError, Result};

pub use pto::{
    boundary_penalty, descent_direction, objective, objective_gradients, perturbation_matrices, projection_gains,
    project, pto_optimize, ArmijoParams, ObjectiveWeights, PtoParams, PtoResult, PtoStatus,
};
pub use spectral::{
    basis, ergodic_metric, ergodic_metric_gradient, trajectory_coefficients, DensitySpec, GaussianComponent,
    SpectralDensity, DEFAULT_COEFFS,
};

/// Dynamics residual below which a trajectory is flagged feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Rectangle `[0, L_1] x ... x [0, L_s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageDomain {
    pub lengths: Vec<f64>,
}

impl CoverageDomain {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(MeschError::Config(format!("domain lengths must be positive, got {lengths:?}")));
        }
        Ok(Self { lengths })
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.lengths.iter().enumerate().all(|(i, l)| x[i] >= 0.0 && x[i] <= *l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub dt: f64,
    pub feasible: bool,
}

impl DiscreteTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Duration covered by the states.
    pub fn horizon(&self) -> f64 {
        self.controls.len() as f64 * self.dt
    }

    /// Max-norm residual of the forward-Euler constraint.
    pub fn dynamics_residual(&self, model: &RobotModel) -> f64 {
        self.controls
            .iter()
            .enumerate()
            .map(|(n, u)| {
                let pred = &self.states[n] + model.deriv(&self.states[n], u) * self.dt;
                (&self.states[n + 1] - pred).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Recompute the feasible flag against `model`.
    pub fn check_feasible(&mut self, model: &RobotModel) -> bool {
        self.feasible = self.states.len() == self.controls.len() + 1
            && self.dynamics_residual(model) < FEASIBILITY_TOL;
        self.feasible
    }

    /// Linearly interpolated state at time `t` from the first sample.
    pub fn sample(&self, t: f64) -> DVector<f64> {
        let last = self.states.len() - 1;
        let s = (t / self.dt).clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.states[0].clone();
        }
        let w = s - i as f64;
        &self.states[i] * (1.0 - w) + &self.states[i + 1] * w
    }
}

/// Perturbation `(z, v)` of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentDirection {
    pub z: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}
