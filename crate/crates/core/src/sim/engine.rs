//! Closed-loop simulation: the scheduling loop every `T_E`, tracking and
//! charger motion every `dt`, recharge handling and runtime monitoring.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::log::{
    Calibration, Events, IterationRecord, MonitorEvent, ReturnEvent, RobotIterationEntry, SimLog, Status, TickRecord,
};
use super::nominal::{NominalPlan, NominalPlanner};
use super::scenario::{Ablation, RobotSpec, Scenario};
use crate::dynamics::battery::BatteryModel;
use crate::dynamics::quadrotor::QuadrotorState;
use crate::dynamics::{step_system, RobotModel, SystemState};
use crate::error::{MeschError, Result};
use crate::estimation::{
    ekf_predict, ekf_update, propagate_horizon, rendezvous_point, worst_case_state, ChargerModel, GaussianBelief,
    NoiseModel, ObservationModel, RendezvousPoint, Z_95,
};
use crate::par;
use crate::scheduler::{self, Action, GapParams, RobotDecision, RobotSlot, ScheduleDecision, Trigger};
use crate::trajgen::{
    candidate_trajectory, landing_trajectory, reserve_energy, CandidateTrajectory, ReserveMode, Tracker,
    TrackingWeights, TERMINAL_WEIGHT,
};

const CHARGER_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;
/// Steps used to approximate the steady-state tracking gain.
const HOLD_HORIZON: usize = 400;

/// Precomputed controllers for one robot model.
struct Controllers {
    tracker: Tracker,
    b2b: Vec<DMatrix<f64>>,
    landing: Vec<DMatrix<f64>>,
    hold: DMatrix<f64>,
}

impl Controllers {
    fn new(model: RobotModel, weights: &TrackingWeights, s: &Scenario) -> Result<Self> {
        let tracker = Tracker::new(model, weights, s.dt)?;
        let steps = |d: f64| (d / s.dt).round() as usize;
        let b2b = tracker.regulator_gains(steps(s.horizons.t_b), TERMINAL_WEIGHT)?;
        let landing = tracker.regulator_gains(steps(s.horizons.t_l), TERMINAL_WEIGHT)?;
        let hold = tracker.regulator_gains(HOLD_HORIZON, TERMINAL_WEIGHT)?.swap_remove(0);
        Ok(Self {
            tracker,
            b2b,
            landing,
            hold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Active,
    Returning,
    Landing { start_tick: u64 },
    Charging { until_tick: u64 },
}

impl Phase {
    fn status(&self) -> Status {
        match self {
            Phase::Active => Status::Active,
            Phase::Returning | Phase::Landing { .. } => Status::Returning,
            Phase::Charging { .. } => Status::Charging,
        }
    }
}

struct Committed {
    cand: CandidateTrajectory,
    start_tick: u64,
}

struct Robot {
    id: usize,
    battery: BatteryModel,
    ctl: usize,
    x: DVector<f64>,
    e: f64,
    phase: Phase,
    plan: NominalPlan,
    committed: Option<Committed>,
    /// Reserve budgeted by the committed plan.
    reserve: f64,
    /// Whether the robot has been through an iteration since launch.
    scheduled: bool,
    below_floor: bool,
}

impl Robot {
    fn chi(&self) -> SystemState {
        SystemState {
            x: self.x.clone(),
            e: self.e,
        }
    }
}

/// Candidate plus everything the scheduler needs about it.
struct Bundle {
    cand: CandidateTrajectory,
    e_res: f64,
    soc_stream: Vec<f64>,
}

struct PendingCheck {
    tick: u64,
    belief: GaussianBelief,
}

fn hover_state(model: &RobotModel, p: &Vector3<f64>) -> DVector<f64> {
    match model {
        RobotModel::Quadrotor(_) => QuadrotorState::hover_at(*p).to_vector(),
        _ => {
            let d = model.control_dim();
            let mut x = DVector::zeros(2 * d);
            for i in 0..d.min(3) {
                x[i] = p[i];
            }
            x
        }
    }
}

fn xyz(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

struct Sim<'a> {
    s: &'a Scenario,
    gap: GapParams,
    ablate: Option<Ablation>,
    allow_violations: bool,
    planner: NominalPlanner,
    controllers: Vec<Controllers>,
    robots: Vec<Robot>,
    charger_model: ChargerModel,
    charger_u: DVector<f64>,
    noise: NoiseModel,
    w_sqrt: DVector<f64>,
    v_sqrt: DVector<f64>,
    observation: ObservationModel,
    charger: DVector<f64>,
    belief: GaussianBelief,
    rng_charger: ChaCha8Rng,
    rng_meas: ChaCha8Rng,
    pending: Vec<PendingCheck>,
    ticks: Vec<TickRecord>,
    iterations: Vec<IterationRecord>,
    events: Events,
    occupied: bool,
    steps_n: usize,
    steps_r: u64,
    steps_l: u64,
}

impl<'a> Sim<'a> {
    fn new(s: &'a Scenario) -> Result<Self> {
        s.validate()?;
        let domain = s.coverage_domain();
        let n = s.robots.len();
        let planner = NominalPlanner::new(&s.nominal, &domain, n)?;

        let mut specs: Vec<RobotSpec> = Vec::new();
        let mut controllers = Vec::new();
        let mut robots = Vec::with_capacity(n);
        for (id, rc) in s.robots.iter().enumerate() {
            let model = rc.model.model()?;
            if let RobotModel::DoubleIntegrator { dim } = model {
                if dim != 3 {
                    return Err(MeschError::Load {
                        field: format!("robots[{id}].model.dim"),
                        reason: "simulated double integrators must be 3D".into(),
                    });
                }
            }
            let ctl = match specs.iter().position(|sp| *sp == rc.model) {
                Some(i) => i,
                None => {
                    let w = s.weights.clone().unwrap_or_else(|| TrackingWeights::default_for(&model));
                    controllers.push(Controllers::new(model.clone(), &w, s)?);
                    specs.push(rc.model.clone());
                    specs.len() - 1
                }
            };
            let default_xy = [
                domain.lengths[0] * (id + 1) as f64 / (n + 1) as f64,
                domain.lengths[1] * 0.5,
            ];
            let start_xy = rc.position.map(|p| [p[0], p[1]]).unwrap_or(default_xy);
            let plan = planner.plan(id, 0.0, [start_xy[0], start_xy[1], 0.0, 0.0])?;
            let p = match rc.position {
                Some(p) => Vector3::from(p),
                None => plan.sample(0.0).0,
            };
            robots.push(Robot {
                id,
                battery: rc.battery,
                ctl,
                x: hover_state(&model, &p),
                e: rc.soc.unwrap_or(rc.battery.e_max),
                phase: Phase::Active,
                plan,
                committed: None,
                reserve: 0.0,
                scheduled: false,
                below_floor: false,
            });
        }

        let noise = s.charger_noise();
        let w_sqrt = noise.w.at(0.0).diagonal().map(|v| v.max(0.0).sqrt());
        let v_sqrt = noise.v.at(0.0).diagonal().map(|v| v.sqrt());
        let mut rng_charger = ChaCha8Rng::seed_from_u64(s.seed);
        rng_charger.set_stream(CHARGER_STREAM);
        let mut rng_meas = ChaCha8Rng::seed_from_u64(s.seed);
        rng_meas.set_stream(MEASUREMENT_STREAM);

        let mean = s.charger_initial();
        let cov = s.charger_initial_cov();
        let mut charger = mean.clone();
        for i in 0..4 {
            let z: f64 = StandardNormal.sample(&mut rng_charger);
            charger[i] += cov[(i, i)].max(0.0).sqrt() * z;
        }
        let belief = GaussianBelief::new(mean, cov, 0.0)?;

        let ablate = s.ablate;
        Ok(Self {
            s,
            gap: s.gap_params(),
            ablate,
            allow_violations: s.allow_violations || ablate.is_some(),
            planner,
            controllers,
            robots,
            charger_model: s.charger_model(),
            charger_u: s.charger_input(),
            noise,
            w_sqrt,
            v_sqrt,
            observation: s.charger.observation,
            charger,
            belief,
            rng_charger,
            rng_meas,
            pending: Vec::new(),
            ticks: Vec::new(),
            iterations: Vec::new(),
            events: Events::default(),
            occupied: false,
            steps_n: (s.horizons.t_n / s.dt).round() as usize,
            steps_r: (s.horizons.t_r / s.dt).round() as u64,
            steps_l: (s.horizons.t_l / s.dt).round() as u64,
        })
    }

    fn violation(&mut self, t: f64, kind: &str, detail: String) -> Result<()> {
        log::warn!("monitor: {kind} at t = {t:.2}: {detail}");
        self.events.violations.push(MonitorEvent {
            t,
            kind: kind.to_string(),
            detail: detail.clone(),
        });
        if self.allow_violations {
            Ok(())
        } else {
            Err(MeschError::Monitor {
                t,
                what: format!("{kind}: {detail}"),
            })
        }
    }

    fn run(mut self) -> Result<SimLog> {
        let dt = self.s.dt;
        let total = (self.s.duration / dt).round() as u64;
        let every = (self.s.horizons.t_e / dt).round() as u64;
        let mut j = 0;
        for k in 0..=total {
            let t = k as f64 * dt;
            self.record(t);
            self.monitor_tick(t)?;
            self.check_calibration(k);
            self.relaunch(k, t)?;
            if k == total {
                break;
            }
            if k % every == 0 {
                let start = Instant::now();
                self.iteration(j, k, t)?;
                self.events.iteration_wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
                j += 1;
            }
            self.advance(k, t)?;
        }
        Ok(SimLog {
            scenario: self.s.clone(),
            ticks: self.ticks,
            iterations: self.iterations,
            events: self.events,
        })
    }

    fn record(&mut self, t: f64) {
        let c = xyz(&self.charger);
        let est = xyz(&self.belief.mean);
        let trace = self.belief.cov.trace();
        for r in &self.robots {
            let tracker = &self.controllers[r.ctl].tracker;
            let p = tracker.position(&r.x);
            self.ticks.push(TickRecord {
                t,
                robot_id: r.id,
                soc: r.e,
                status: r.phase.status(),
                dist_to_charger: (p - c).norm(),
                pos: arr(&p),
                reserve: r.reserve,
                e_min: r.battery.e_min,
                charger: arr(&c),
                estimate: arr(&est),
                cov_trace: trace,
            });
        }
    }

    fn monitor_tick(&mut self, t: f64) -> Result<()> {
        let c = xyz(&self.charger);
        let radius = self.s.station_radius;
        let mut at_station = 0;
        let mut newly_low = Vec::new();
        for r in &mut self.robots {
            let p = self.controllers[r.ctl].tracker.position(&r.x);
            if r.phase.status() == Status::Charging || (p - c).norm() <= radius {
                at_station += 1;
            }
            let low = r.e < r.battery.e_min;
            if low && !r.below_floor {
                newly_low.push((r.id, r.e));
            }
            r.below_floor = low;
        }
        for (id, e) in newly_low {
            self.violation(t, "soc_below_floor", format!("robot {id} SoC {e:.3}"))?;
        }
        let occupied = at_station > 1;
        if occupied && !self.occupied {
            self.occupied = true;
            self.violation(t, "station_co_occupancy", format!("{at_station} robots at the station"))?;
        }
        self.occupied = occupied;
        Ok(())
    }

    fn check_calibration(&mut self, k: u64) {
        let Calibration { mut hits, mut checks } = self.events.calibration.clone();
        let charger = &self.charger;
        self.pending.retain(|p| {
            if p.tick != k {
                return true;
            }
            for i in 0..charger.len() {
                let sd = p.belief.cov[(i, i)].max(0.0).sqrt();
                if sd > 0.0 {
                    checks += 1;
                    if (charger[i] - p.belief.mean[i]).abs() <= Z_95 * sd {
                        hits += 1;
                    }
                }
            }
            false
        });
        self.events.calibration = Calibration { hits, checks };
    }

    fn relaunch(&mut self, k: u64, t: f64) -> Result<()> {
        for i in 0..self.robots.len() {
            let r = &self.robots[i];
            let Phase::Charging { until_tick } = r.phase else { continue };
            if k < until_tick {
                continue;
            }
            let p = self.controllers[r.ctl].tracker.position(&r.x);
            let plan = self.planner.plan(r.id, t, [p.x, p.y, 0.0, 0.0])?;
            let r = &mut self.robots[i];
            r.e = r.battery.e_max;
            r.phase = Phase::Active;
            r.plan = plan;
            r.committed = None;
            r.reserve = 0.0;
            r.scheduled = false;
            let id = r.id;
            if let Some(ev) = self.events.returns.iter_mut().rev().find(|e| e.robot_id == id) {
                ev.relaunch = Some(t);
            }
        }
        Ok(())
    }

    fn iteration(&mut self, j: usize, k: u64, t: f64) -> Result<()> {
        let h = self.s.horizons;
        let dt = self.s.dt;

        // Keep nominal plans valid over the candidate horizon.
        let replans: Vec<usize> = self
            .robots
            .iter()
            .enumerate()
            .filter(|(_, r)| r.phase == Phase::Active && self.planner.needs_replan(&r.plan, t, h.t_c))
            .map(|(i, _)| i)
            .collect();
        let planner = &self.planner;
        let robots = &self.robots;
        let new_plans = par::map(&replans, |&i| {
            let (p, v) = robots[i].plan.sample(t);
            planner.plan(robots[i].id, t, [p.x, p.y, v.x, v.y])
        });
        for (i, plan) in replans.into_iter().zip(new_plans) {
            self.robots[i].plan = plan?;
        }

        let u = self.charger_u.clone();
        let b_r = propagate_horizon(&self.belief, &self.charger_model, |_| u.clone(), &self.noise, h.t_r, dt)?;
        let rp = rendezvous_point(&b_r, self.s.charger.d)?;
        let mean_target = xyz(&b_r.mean);
        let worst_target = xyz(&worst_case_state(&b_r)?);
        self.pending.push(PendingCheck {
            tick: k + self.steps_r,
            belief: b_r,
        });

        let active: Vec<usize> = (0..self.robots.len()).filter(|&i| self.robots[i].phase == Phase::Active).collect();
        let bundles: Vec<Result<Bundle>> = {
            let this = &*self;
            par::map(&active, |&i| this.bundle(&this.robots[i], j, t, &rp, &mean_target, &worst_target))
        };

        let mut entries = Vec::with_capacity(active.len());
        let mut slots = Vec::with_capacity(active.len());
        for (&i, b) in active.iter().zip(&bundles) {
            let r = &self.robots[i];
            let rem = scheduler::remaining_battery_time(&r.chi(), &r.battery);
            let (soc_stream, e_res, error) = match b {
                Ok(b) => (b.soc_stream.clone(), b.e_res, None),
                Err(e) => (vec![f64::NEG_INFINITY], 0.0, Some(e.to_string())),
            };
            entries.push(RobotIterationEntry {
                id: r.id,
                t_f: rem.t_f,
                depleted: rem.depleted,
                e_res,
                valid: error.is_none(),
                error,
            });
            slots.push(RobotSlot {
                id: r.id,
                t_f: rem.t_f,
                soc_stream,
                e_min: r.battery.e_min,
                e_res,
            });
        }
        let decision = self.decide(&slots);
        if j == 0 && decision.trigger != Trigger::None && self.ablate.is_none() {
            self.violation(t, "initial_infeasible", format!("first iteration triggered {:?}", decision.trigger))?;
        }

        let mut bundles: Vec<Option<Bundle>> = bundles.into_iter().map(|b| b.ok()).collect();
        for d in decision.decisions.clone() {
            let slot = active.iter().position(|&i| self.robots[i].id == d.id).expect("decision for active robot");
            let i = active[slot];
            let bundle = bundles[slot].take();
            self.apply(i, d, bundle, k, t)?;
        }
        for &i in &active {
            let r = &mut self.robots[i];
            if r.phase == Phase::Active && r.committed.is_none() {
                let id = r.id;
                self.violation(t, "uncommitted_robot", format!("robot {id} is flying without a committed plan"))?;
            }
            self.robots[i].scheduled = true;
        }

        self.iterations.push(IterationRecord {
            j,
            t,
            robots: entries,
            schedule: decision,
            rendezvous: arr(&rp.position()),
            worst_case_target: arr(&worst_target),
        });
        Ok(())
    }

    fn decide(&self, slots: &[RobotSlot]) -> ScheduleDecision {
        match self.ablate {
            None => scheduler::schedule(slots, &self.gap),
            Some(Ablation::Gware) => {
                let sorted = scheduler::sort_slots(slots);
                let decisions = scheduler::eware(&sorted);
                let trigger =
                    if decisions.iter().any(|d| d.land) { Trigger::ReserveViolation } else { Trigger::None };
                ScheduleDecision {
                    decisions,
                    trigger,
                    flags: Vec::new(),
                }
            }
            Some(Ablation::Eware) => {
                let sorted = scheduler::sort_slots(slots);
                let (violation, decisions, flags) = scheduler::gware(&sorted, &self.gap);
                if violation {
                    ScheduleDecision {
                        decisions,
                        trigger: Trigger::GapViolation,
                        flags,
                    }
                } else {
                    ScheduleDecision {
                        decisions: sorted
                            .iter()
                            .map(|s| RobotDecision {
                                id: s.id,
                                action: Action::CommitCandidate,
                                land: false,
                            })
                            .collect(),
                        trigger: Trigger::None,
                        flags,
                    }
                }
            }
        }
    }

    fn bundle(
        &self,
        r: &Robot,
        j: usize,
        t: f64,
        rp: &RendezvousPoint,
        mean_target: &Vector3<f64>,
        worst_target: &Vector3<f64>,
    ) -> Result<Bundle> {
        let ctl = &self.controllers[r.ctl];
        let tr = &ctl.tracker;
        let refs: Vec<DVector<f64>> = (0..=self.steps_n)
            .map(|n| {
                let (p, v) = r.plan.sample(t + n as f64 * self.s.dt);
                tr.reference_coordinates(&p, &v)
            })
            .collect();
        let cand = candidate_trajectory(tr, &r.battery, &r.chi(), t, &refs, rp, &ctl.b2b)?;
        let end = cand.trajectory.last();
        let t_c = cand.end_time();
        let mean = landing_trajectory(tr, &r.battery, &end, mean_target, &ctl.landing, t_c)?;
        let worst = landing_trajectory(tr, &r.battery, &end, worst_target, &ctl.landing, t_c)?;
        let mode: ReserveMode = self.s.reserve;
        let reserve = reserve_energy(tr, &r.battery, &worst, &mean, mode, j)?;
        let mut soc_stream = cand.trajectory.soc.clone();
        soc_stream.extend_from_slice(&mean.soc[1..]);
        Ok(Bundle {
            cand,
            e_res: reserve.e_res,
            soc_stream,
        })
    }

    fn apply(&mut self, i: usize, d: RobotDecision, bundle: Option<Bundle>, k: u64, t: f64) -> Result<()> {
        let id = self.robots[i].id;
        match (d.action, bundle) {
            (Action::CommitCandidate, Some(b)) => {
                let r = &mut self.robots[i];
                r.committed = Some(Committed {
                    cand: b.cand,
                    start_tick: k,
                });
                r.reserve = b.e_res;
            }
            (action, bundle) => {
                if action == Action::CommitCandidate {
                    self.violation(t, "invalid_candidate", format!("robot {id} has no valid candidate to commit"))?;
                }
                let r = &mut self.robots[i];
                r.phase = Phase::Returning;
                if r.committed.is_none() {
                    match bundle {
                        Some(b) => {
                            r.committed = Some(Committed {
                                cand: b.cand,
                                start_tick: k,
                            });
                            r.reserve = b.e_res;
                        }
                        None => r.phase = Phase::Landing { start_tick: k },
                    }
                    self.violation(t, "no_committed_plan", format!("robot {id} returns without a committed plan"))?;
                }
            }
        }
        Ok(())
    }

    /// Predicted charger position at `steps` ticks ahead, mean only.
    fn predicted_station(&self, steps: u64) -> Result<Vector3<f64>> {
        let mut m = self.belief.mean.clone();
        for n in 0..steps {
            m = self.charger_model.step(&m, &self.charger_u, self.s.dt, n as f64 * self.s.dt)?;
        }
        Ok(xyz(&m))
    }

    fn advance(&mut self, k: u64, t: f64) -> Result<()> {
        let dt = self.s.dt;
        let station = xyz(&self.charger);
        let mut touchdowns = Vec::new();
        for i in 0..self.robots.len() {
            let phase = self.robots[i].phase;
            let target = match phase {
                Phase::Landing { start_tick } => Some(self.predicted_station(self.steps_l - (k - start_tick))?),
                Phase::Returning => {
                    let r = &self.robots[i];
                    let c = r.committed.as_ref().expect("returning robots keep a plan");
                    if k - c.start_tick >= c.cand.policy.steps() as u64 {
                        Some(self.predicted_station(self.steps_l)?)
                    } else {
                        None
                    }
                }
                _ => None,
            };
            let r = &mut self.robots[i];
            let ctl = &self.controllers[r.ctl];
            let tr = &ctl.tracker;
            if r.phase == Phase::Returning && target.is_some() {
                r.phase = Phase::Landing { start_tick: k };
            }
            let u = match r.phase {
                Phase::Charging { .. } => {
                    r.x = hover_state(&tr.model, &station);
                    continue;
                }
                Phase::Landing { start_tick } => {
                    let m = (k - start_tick) as usize;
                    let z_t = tr.hover_coordinates(&target.expect("landing target"));
                    tr.regulator_control(&ctl.landing[m], &r.x, &z_t)
                }
                Phase::Active | Phase::Returning => match &r.committed {
                    Some(c) if ((k - c.start_tick) as usize) < c.cand.policy.steps() => {
                        tr.policy_control(&c.cand.policy, (k - c.start_tick) as usize, &r.x)
                    }
                    _ => {
                        let (p, v) = r.plan.sample(t);
                        tr.regulator_control(&ctl.hold, &r.x, &tr.reference_coordinates(&p, &v))
                    }
                },
            };
            let next = step_system(&tr.model, &r.battery, &r.chi(), &u, dt, t)?;
            r.x = next.x;
            r.e = next.e;
            if let Phase::Landing { start_tick } = r.phase {
                if k + 1 - start_tick >= self.steps_l {
                    let until = k + 1 + (self.s.horizons.t_ch / dt).round() as u64;
                    r.phase = Phase::Charging { until_tick: until };
                    r.committed = None;
                    touchdowns.push(r.id);
                }
            }
        }

        // Charger: RK4 drift plus Euler-Maruyama diffusion, then filter.
        let mut next = self.charger_model.step(&self.charger, &self.charger_u, dt, t)?;
        for i in 0..next.len() {
            if self.w_sqrt[i] > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng_charger);
                next[i] += self.w_sqrt[i] * dt.sqrt() * z;
            }
        }
        self.charger = next;
        let predicted = ekf_predict(&self.belief, &self.charger_model, &self.charger_u, &self.noise, dt)?;
        let mut y = self.observation.observe(&self.charger);
        for i in 0..y.len() {
            let z: f64 = StandardNormal.sample(&mut self.rng_meas);
            y[i] += self.v_sqrt[i] * z;
        }
        self.belief = ekf_update(&predicted, &y, self.observation, self.noise.v.at(t + dt))?;

        let t_next = (k + 1) as f64 * dt;
        for id in touchdowns {
            let last = self.events.returns.iter().map(|e| e.t).fold(f64::NEG_INFINITY, f64::max);
            self.events.returns.push(ReturnEvent {
                robot_id: id,
                t: t_next,
                relaunch: None,
            });
            let gap = t_next - last;
            if gap <= self.gap.min_gap() {
                self.violation(t_next, "return_gap", format!("robot {id} returned {gap:.2} s after the previous return"))?;
            }
        }
        Ok(())
    }
}

/// Run a scenario to completion.
pub fn run(s: &Scenario) -> Result<SimLog> {
    Sim::new(s)?.run()
}
