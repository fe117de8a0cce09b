use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ergodic_metric, ergodic_metric_gradient, CoverageDomain, DescentDirection, DiscreteTrajectory, SpectralDensity};
use crate::dynamics::RobotModel;
use crate::error::{MeschError, Result};
use crate::riccati::{AffineLq, Seq};

/// Weights of the coverage objective `q Phi + J_b + dt/2 sum u'Ru`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveWeights {
    pub q: f64,
    pub c_b: f64,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoParams {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtoParams {
    /// Planning horizon, s.
    pub horizon: f64,
    pub dt: f64,
    pub weights: ObjectiveWeights,
    pub q_d: DMatrix<f64>,
    pub r_d: DMatrix<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub armijo: ArmijoParams,
}

impl PtoParams {
    /// Identity descent metrics, sized for `model`.
    pub fn with_defaults(model: &RobotModel, horizon: f64, dt: f64, q: f64, c_b: f64, r: f64) -> Self {
        let (n, m) = (model.state_dim(), model.control_dim());
        Self {
            horizon,
            dt,
            weights: ObjectiveWeights {
                q,
                c_b,
                r: DMatrix::identity(m, m) * r,
            },
            q_d: DMatrix::identity(n, n),
            r_d: DMatrix::identity(m, m),
            max_iters: 100,
            tol: 1e-7,
            armijo: ArmijoParams::default(),
        }
    }

    /// `horizon / dt + 1`.
    pub fn num_states(&self) -> Result<usize> {
        let steps = self.horizon / self.dt;
        if !(self.dt > 0.0) || (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(MeschError::Config(format!(
                "dt {} must divide the horizon {} into at least one step",
                self.dt, self.horizon
            )));
        }
        Ok(steps.round() as usize + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PtoStatus {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct PtoResult {
    pub trajectory: DiscreteTrajectory,
    /// Objective of the initial trajectory followed by each accepted iterate.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub status: PtoStatus,
}

/// Forward-Euler perturbation matrices `(I + dt A_n, dt B_n)` for each control.
pub fn perturbation_matrices(traj: &DiscreteTrajectory, model: &RobotModel) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let n = model.state_dim();
    traj.controls
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let (a, b) = model.jacobians(&traj.states[k], u);
            (DMatrix::identity(n, n) + a * traj.dt, b * traj.dt)
        })
        .unzip()
}

/// Quadratic exterior penalty on the spatial components and its per-state gradient.
pub fn boundary_penalty(traj: &DiscreteTrajectory, domain: &CoverageDomain, c_b: f64) -> (f64, Vec<DVector<f64>>) {
    let mut total = 0.0;
    let grads = traj
        .states
        .iter()
        .map(|x| {
            let mut g = DVector::zeros(x.len());
            for (i, &l) in domain.lengths.iter().enumerate() {
                let over = if x[i] > l {
                    x[i] - l
                } else if x[i] < 0.0 {
                    x[i]
                } else {
                    0.0
                };
                total += c_b * over * over;
                g[i] = 2.0 * c_b * over;
            }
            g
        })
        .collect();
    (total, grads)
}

fn control_cost(traj: &DiscreteTrajectory, r: &DMatrix<f64>) -> f64 {
    0.5 * traj.dt * traj.controls.iter().map(|u| u.dot(&(r * u))).sum::<f64>()
}

pub fn objective(traj: &DiscreteTrajectory, density: &SpectralDensity, domain: &CoverageDomain, w: &ObjectiveWeights) -> f64 {
    w.q * ergodic_metric(traj, density, domain) + boundary_penalty(traj, domain, w.c_b).0 + control_cost(traj, &w.r)
}

/// Exact gradients of [`objective`] with respect to states and controls.
pub fn objective_gradients(
    traj: &DiscreteTrajectory,
    density: &SpectralDensity,
    domain: &CoverageDomain,
    w: &ObjectiveWeights,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let phi = ergodic_metric_gradient(traj, density, domain);
    let (_, jb) = boundary_penalty(traj, domain, w.c_b);
    let a = phi.into_iter().zip(jb).map(|(p, b)| p * w.q + b).collect();
    let b = traj.controls.iter().map(|u| &w.r * u * traj.dt).collect();
    (a, b)
}

/// Minimizer of the LQ descent subproblem with the initial perturbation fixed at zero.
pub fn descent_direction(
    a_lin: &[DVector<f64>],
    b_lin: &[DVector<f64>],
    a_tilde: &[DMatrix<f64>],
    b_tilde: &[DMatrix<f64>],
    q_d: &DMatrix<f64>,
    r_d: &DMatrix<f64>,
) -> Result<DescentDirection> {
    Ok(descent_and_gains(a_lin, b_lin, a_tilde, b_tilde, q_d, r_d)?.0)
}

/// Descent direction plus the projection gains. Both come from the same
/// Riccati recursion: the linear terms only change the feedforward.
fn descent_and_gains(
    a_lin: &[DVector<f64>],
    b_lin: &[DVector<f64>],
    a_tilde: &[DMatrix<f64>],
    b_tilde: &[DMatrix<f64>],
    q_d: &DMatrix<f64>,
    r_d: &DMatrix<f64>,
) -> Result<(DescentDirection, Vec<DMatrix<f64>>)> {
    let states = a_lin.len();
    if b_lin.len() + 1 != states || a_tilde.len() + 1 != states || b_tilde.len() + 1 != states {
        return Err(MeschError::Argument("descent problem sequences have inconsistent lengths".into()));
    }
    let lq = AffineLq {
        a: Seq::Each(a_tilde),
        b: Seq::Each(b_tilde),
        q: Seq::Const(q_d),
        r: Seq::Const(r_d),
        q_terminal: q_d,
        q_lin: Some(a_lin),
        r_lin: Some(b_lin),
    };
    let policy = lq.solve(states)?;
    let (z, v) = lq.rollout(&policy, &DVector::zeros(q_d.nrows()));
    let gains = policy.gains.into_iter().map(|k| -k).collect();
    Ok((DescentDirection { z, v }, gains))
}

/// Time-varying LQR gains in the projection convention `u = mu + K (alpha - x)`.
pub fn projection_gains(
    a_tilde: &[DMatrix<f64>],
    b_tilde: &[DMatrix<f64>],
    q_d: &DMatrix<f64>,
    r_d: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let lq = AffineLq {
        a: Seq::Each(a_tilde),
        b: Seq::Each(b_tilde),
        q: Seq::Const(q_d),
        r: Seq::Const(r_d),
        q_terminal: q_d,
        q_lin: None,
        r_lin: None,
    };
    Ok(lq.solve(a_tilde.len() + 1)?.gains.into_iter().map(|k| -k).collect())
}

/// Feedback rollout of a candidate onto the forward-Euler dynamics.
pub fn project(
    alpha: &[DVector<f64>],
    mu: &[DVector<f64>],
    x_ic: &DVector<f64>,
    model: &RobotModel,
    gains: &[DMatrix<f64>],
    dt: f64,
) -> DiscreteTrajectory {
    let mut states = Vec::with_capacity(mu.len() + 1);
    let mut controls = Vec::with_capacity(mu.len());
    states.push(x_ic.clone());
    for (n, m) in mu.iter().enumerate() {
        let x = &states[n];
        let u = m + &gains[n] * (&alpha[n] - x);
        let next = x + model.deriv(x, &u) * dt;
        controls.push(u);
        states.push(next);
    }
    DiscreteTrajectory {
        states,
        controls,
        dt,
        feasible: true,
    }
}

fn zero_control_rollout(x_ic: &DVector<f64>, model: &RobotModel, n: usize, dt: f64) -> DiscreteTrajectory {
    let mu = vec![DVector::zeros(model.control_dim()); n - 1];
    let alpha = vec![x_ic.clone(); n];
    let gains = vec![DMatrix::zeros(model.control_dim(), model.state_dim()); n - 1];
    project(&alpha, &mu, x_ic, model, &gains, dt)
}

/// Iterative descent on the coverage objective from a zero-control rollout.
pub fn pto_optimize(
    x_ic: &DVector<f64>,
    model: &RobotModel,
    density: &SpectralDensity,
    domain: &CoverageDomain,
    params: &PtoParams,
) -> Result<PtoResult> {
    if x_ic.len() != model.state_dim() {
        return Err(MeschError::Argument(format!(
            "initial state has {} entries, model expects {}",
            x_ic.len(),
            model.state_dim()
        )));
    }
    if domain.dim() > model.state_dim() {
        return Err(MeschError::Config("domain has more dimensions than the model state".into()));
    }
    let n = params.num_states()?;
    let w = &params.weights;
    let mut traj = zero_control_rollout(x_ic, model, n, params.dt);
    let mut j = objective(&traj, density, domain, w);
    let mut history = vec![j];
    let mut status = PtoStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < params.max_iters {
        let (a_t, b_t) = perturbation_matrices(&traj, model);
        let (a_lin, b_lin) = objective_gradients(&traj, density, domain, w);
        let (dir, gains) = descent_and_gains(&a_lin, &b_lin, &a_t, &b_t, &params.q_d, &params.r_d)?;
        let slope: f64 = a_lin.iter().zip(&dir.z).map(|(a, z)| a.dot(z)).sum::<f64>()
            + b_lin.iter().zip(&dir.v).map(|(b, v)| b.dot(v)).sum::<f64>();
        if slope > -f64::EPSILON * j.abs().max(1.0) {
            status = PtoStatus::Converged;
            break;
        }

        let mut gamma = params.armijo.initial_step;
        let mut accepted = None;
        for _ in 0..=params.armijo.max_backtracks {
            let alpha: Vec<_> = traj.states.iter().zip(&dir.z).map(|(x, z)| x + z * gamma).collect();
            let mu: Vec<_> = traj.controls.iter().zip(&dir.v).map(|(u, v)| u + v * gamma).collect();
            let cand = project(&alpha, &mu, x_ic, model, &gains, params.dt);
            let jc = objective(&cand, density, domain, w);
            if jc.is_finite() && jc <= j + params.armijo.sufficient_decrease * gamma * slope {
                accepted = Some((cand, jc));
                break;
            }
            gamma *= params.armijo.shrink;
        }
        let Some((cand, jc)) = accepted else {
            status = PtoStatus::Stalled;
            break;
        };
        iterations += 1;
        let dj = j - jc;
        traj = cand;
        j = jc;
        history.push(j);
        if dj.abs() < params.tol {
            status = PtoStatus::Converged;
            break;
        }
    }
    traj.check_feasible(model);
    Ok(PtoResult {
        trajectory: traj,
        objective_history: history,
        iterations,
        status,
    })
}
