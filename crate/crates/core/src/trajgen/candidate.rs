use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{Tracker, TERMINAL_WEIGHT};
use crate::dynamics::battery::{battery_deriv, BatteryModel};
use crate::dynamics::{step_system, SystemState};
use crate::error::{MeschError, Result};
use crate::estimation::RendezvousPoint;
use crate::riccati::AffinePolicy;

/// Largest accepted terminal position miss, m.
pub const TERMINAL_TOLERANCE: f64 = 1e-3;

/// Sampled closed-loop robot trajectory with state of charge.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemTrajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub soc: Vec<f64>,
}

impl SystemTrajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn last(&self) -> SystemState {
        SystemState {
            x: self.states.last().expect("non-empty trajectory").clone(),
            e: *self.soc.last().expect("non-empty trajectory"),
        }
    }

    /// `e(start) - e(end)`.
    pub fn consumed(&self) -> f64 {
        self.soc[0] - self.soc[self.soc.len() - 1]
    }

    fn start(chi: &SystemState, t0: f64, dt: f64, steps: usize) -> Self {
        let mut states = Vec::with_capacity(steps + 1);
        let mut soc = Vec::with_capacity(steps + 1);
        states.push(chi.x.clone());
        soc.push(chi.e);
        Self {
            t0,
            dt,
            states,
            controls: Vec::with_capacity(steps),
            soc,
        }
    }

    fn push(&mut self, tracker: &Tracker, battery: &BatteryModel, u: DVector<f64>) -> Result<()> {
        let n = self.controls.len();
        let chi = SystemState {
            x: self.states[n].clone(),
            e: self.soc[n],
        };
        let next = step_system(&tracker.model, battery, &chi, &u, self.dt, self.t0 + n as f64 * self.dt)?;
        self.controls.push(u);
        self.states.push(next.x);
        self.soc.push(next.e);
        Ok(())
    }
}

fn check_terminal(tracker: &Tracker, x: &DVector<f64>, target: &Vector3<f64>) -> Result<f64> {
    let miss = (tracker.position(x) - target).norm();
    if miss.is_finite() && miss < TERMINAL_TOLERANCE {
        Ok(miss)
    } else {
        Err(MeschError::Infeasible {
            residual: miss,
            tolerance: TERMINAL_TOLERANCE,
        })
    }
}

fn steps_for(duration: f64, dt: f64) -> Result<usize> {
    let s = duration / dt;
    if !(s.round() >= 1.0) || (s - s.round()).abs() > 1e-9 {
        return Err(MeschError::Config(format!("duration {duration} is not a positive multiple of dt {dt}")));
    }
    Ok(s.round() as usize)
}

/// Roll the constant-target regulator from `chi` toward the hover point at
/// `target`, verifying the terminal miss.
fn regulate(
    tracker: &Tracker,
    battery: &BatteryModel,
    gains: &[DMatrix<f64>],
    chi: &SystemState,
    target: &Vector3<f64>,
    t0: f64,
) -> Result<SystemTrajectory> {
    let z_t = tracker.hover_coordinates(target);
    let mut traj = SystemTrajectory::start(chi, t0, tracker.dt, gains.len());
    for (n, k) in gains.iter().enumerate() {
        let u = tracker.regulator_control(k, &traj.states[n], &z_t);
        traj.push(tracker, battery, u)?;
    }
    check_terminal(tracker, traj.states.last().unwrap(), target)?;
    Ok(traj)
}

/// Back-to-base leg from `chi` (the nominal state at the end of the nominal
/// segment) to the rendezvous point over `t_b` seconds.
pub fn b2b_trajectory(
    tracker: &Tracker,
    battery: &BatteryModel,
    chi: &SystemState,
    rp: &RendezvousPoint,
    t_b: f64,
    t0: f64,
) -> Result<SystemTrajectory> {
    let gains = tracker.regulator_gains(steps_for(t_b, tracker.dt)?, TERMINAL_WEIGHT)?;
    regulate(tracker, battery, &gains, chi, &rp.position(), t0)
}

/// Descent from the rendezvous point onto `target` over `t_l` seconds.
/// Pass precomputed gains from [`Tracker::regulator_gains`] to avoid resolving.
pub fn landing_trajectory(
    tracker: &Tracker,
    battery: &BatteryModel,
    chi: &SystemState,
    target: &Vector3<f64>,
    gains: &[DMatrix<f64>],
    t0: f64,
) -> Result<SystemTrajectory> {
    regulate(tracker, battery, gains, chi, target, t0)
}

/// Closed-loop plan: track the nominal, then fly back to base.
#[derive(Debug, Clone)]
pub struct CandidateTrajectory {
    pub trajectory: SystemTrajectory,
    /// The tracking policy that produced `trajectory`; replaying it reproduces it.
    pub policy: AffinePolicy,
    /// Steps spent on the nominal segment.
    pub nominal_steps: usize,
    pub rendezvous: RendezvousPoint,
    pub terminal_miss: f64,
}

impl CandidateTrajectory {
    pub fn start_time(&self) -> f64 {
        self.trajectory.t0
    }

    pub fn end_time(&self) -> f64 {
        self.trajectory.end_time()
    }

    pub fn nominal_end_time(&self) -> f64 {
        self.trajectory.t0 + self.nominal_steps as f64 * self.trajectory.dt
    }
}

/// Build the candidate from the current system state.
///
/// `nominal` holds reference states (control coordinates) on the tracking
/// grid from `t_j` to the end of the nominal segment inclusive. `b2b_gains`
/// come from [`Tracker::regulator_gains`] over the back-to-base duration.
pub fn candidate_trajectory(
    tracker: &Tracker,
    battery: &BatteryModel,
    chi: &SystemState,
    t_j: f64,
    nominal: &[DVector<f64>],
    rp: &RendezvousPoint,
    b2b_gains: &[DMatrix<f64>],
) -> Result<CandidateTrajectory> {
    if nominal.len() < 2 {
        return Err(MeschError::Argument("nominal segment needs >= 2 samples".into()));
    }
    let nominal_steps = nominal.len() - 1;
    let x_n = tracker.state_from_coordinates(&nominal[nominal_steps]);
    let leg = regulate(
        tracker,
        battery,
        b2b_gains,
        &SystemState { x: x_n, e: chi.e },
        &rp.position(),
        t_j + nominal_steps as f64 * tracker.dt,
    )?;
    let refs: Vec<DVector<f64>> = nominal[..nominal_steps]
        .iter()
        .cloned()
        .chain(leg.states.iter().map(|x| tracker.coordinates(x)))
        .collect();
    let policy = tracker.tracking_policy(&refs, Some(TERMINAL_WEIGHT))?;
    let mut traj = SystemTrajectory::start(chi, t_j, tracker.dt, policy.steps());
    for n in 0..policy.steps() {
        let u = tracker.policy_control(&policy, n, &traj.states[n]);
        traj.push(tracker, battery, u)?;
    }
    let terminal_miss = check_terminal(tracker, traj.states.last().unwrap(), &rp.position())?;
    Ok(CandidateTrajectory {
        trajectory: traj,
        policy,
        nominal_steps,
        rendezvous: rp.clone(),
        terminal_miss,
    })
}

/// How reserve energy is obtained from the two landing trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ReserveMode {
    /// Difference of control-dependent consumption only.
    ControlEnergy,
    /// Additionally lengthen the worst-case landing by the extra distance
    /// flown at `descent_speed`, for duration-driven discharge.
    DurationExtended { descent_speed: f64 },
}

impl Default for ReserveMode {
    fn default() -> Self {
        ReserveMode::DurationExtended { descent_speed: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReserveEnergy {
    /// Reserve, % SoC. Never negative.
    pub e_res: f64,
    pub worst_target: Vector3<f64>,
    pub mean_target: Vector3<f64>,
    /// Extra landing time charged to the worst case, s.
    pub extension: f64,
    pub computed_at: usize,
}

/// Excess consumption of the worst-case landing over the mean landing.
pub fn reserve_energy(
    tracker: &Tracker,
    battery: &BatteryModel,
    worst: &SystemTrajectory,
    mean: &SystemTrajectory,
    mode: ReserveMode,
    iteration: usize,
) -> Result<ReserveEnergy> {
    if (&worst.states[0] - &mean.states[0]).amax() > 1e-12 || worst.soc[0] != mean.soc[0] {
        return Err(MeschError::Argument("landing trajectories must share a start state".into()));
    }
    let worst_target = tracker.position(worst.states.last().unwrap());
    let mean_target = tracker.position(mean.states.last().unwrap());
    let mut consumed_worst = worst.consumed();
    let extension = match mode {
        ReserveMode::ControlEnergy => 0.0,
        ReserveMode::DurationExtended { descent_speed } => {
            if !(descent_speed > 0.0) {
                return Err(MeschError::Config(format!("descent speed must be > 0, got {descent_speed}")));
            }
            let ext = (worst_target - mean_target).norm() / descent_speed;
            let hold = worst.controls.last().cloned().unwrap_or_else(|| tracker.equilibrium_control().clone());
            consumed_worst += -battery_deriv(battery, &hold) * ext;
            ext
        }
    };
    Ok(ReserveEnergy {
        e_res: (consumed_worst - mean.consumed()).max(0.0),
        worst_target,
        mean_target,
        extension,
        computed_at: iteration,
    })
}
