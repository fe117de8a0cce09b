//! Energy- and gap-aware return scheduling.
//!
//! Each iteration, every robot still on mission offers a candidate plan. The
//! scheduler decides per robot whether to commit the candidate or fall back
//! to its previously committed plan and land at the end of it.

use serde::{Deserialize, Serialize};

use crate::dynamics::battery::BatteryModel;
use crate::dynamics::SystemState;
use crate::error::{MeschError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    /// Charging duration, s.
    pub t_ch: f64,
    /// Buffer between consecutive returns, s.
    pub t_delta: f64,
    /// Landing duration, s.
    pub t_l: f64,
    /// Candidate duration, s.
    pub t_c: f64,
    /// Decision-cadence slack, s: subtracted from the remaining time and added
    /// to each required spacing. Zero gives the bare test.
    #[serde(default)]
    pub cadence_margin: f64,
}

impl GapParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.t_ch, self.t_delta, self.t_l, self.t_c, self.cadence_margin];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MeschError::Config(format!("gap parameters must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Required spacing between consecutive returns, s.
    pub fn min_gap(&self) -> f64 {
        self.t_ch + self.t_delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainingTime {
    pub t_f: f64,
    pub depleted: bool,
}

/// Time until SoC reaches the floor at the worst-case discharge rate.
pub fn remaining_battery_time(chi: &SystemState, battery: &BatteryModel) -> RemainingTime {
    let rate = battery.max_rate();
    if chi.e < battery.e_min {
        return RemainingTime { t_f: 0.0, depleted: true };
    }
    let t_f = if rate > 0.0 { (chi.e - battery.e_min) / rate } else { f64::INFINITY };
    RemainingTime { t_f, depleted: false }
}

/// Whether the `k`-th robot in sorted order leaves room for `k` returns ahead of it.
pub fn gap_flag(t_f: f64, k: usize, p: &GapParams) -> bool {
    let m = p.cadence_margin;
    t_f - p.t_l - p.t_c - m > k as f64 * (p.min_gap() + m)
}

/// Scheduler view of one robot on mission.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSlot {
    pub id: usize,
    pub t_f: f64,
    /// Predicted SoC samples the candidate must keep above the floor.
    pub soc_stream: Vec<f64>,
    pub e_min: f64,
    pub e_res: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    CommitCandidate,
    KeepPrevious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotDecision {
    pub id: usize,
    pub action: Action,
    /// Land at the end of the kept plan.
    pub land: bool,
}

impl RobotDecision {
    fn commit(id: usize) -> Self {
        Self { id, action: Action::CommitCandidate, land: false }
    }

    fn keep_and_land(id: usize) -> Self {
        Self { id, action: Action::KeepPrevious, land: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    None,
    GapViolation,
    ReserveViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagEvaluation {
    pub id: usize,
    pub k: usize,
    pub t_f: f64,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub decisions: Vec<RobotDecision>,
    pub trigger: Trigger,
    /// Gap flags evaluated, in sorted order, up to the first failure.
    pub flags: Vec<FlagEvaluation>,
}

impl ScheduleDecision {
    pub fn landing(&self) -> impl Iterator<Item = usize> + '_ {
        self.decisions.iter().filter(|d| d.land).map(|d| d.id)
    }

    pub fn for_robot(&self, id: usize) -> Option<&RobotDecision> {
        self.decisions.iter().find(|d| d.id == id)
    }
}

/// Stable sort by remaining time, ties by id.
pub fn sort_slots(slots: &[RobotSlot]) -> Vec<&RobotSlot> {
    let mut sorted: Vec<&RobotSlot> = slots.iter().collect();
    sorted.sort_by(|a, b| a.t_f.total_cmp(&b.t_f).then(a.id.cmp(&b.id)));
    sorted
}

/// Gap check over robots already in sorted order. Returns the violation
/// flag, the decisions (empty without a violation) and the flags evaluated.
pub fn gware(sorted: &[&RobotSlot], p: &GapParams) -> (bool, Vec<RobotDecision>, Vec<FlagEvaluation>) {
    let mut flags = Vec::new();
    for (k, slot) in sorted.iter().enumerate().skip(1) {
        let flag = gap_flag(slot.t_f, k, p);
        flags.push(FlagEvaluation { id: slot.id, k, t_f: slot.t_f, flag });
        if !flag {
            let decisions = sorted
                .iter()
                .enumerate()
                .map(|(i, s)| if i == 0 { RobotDecision::keep_and_land(s.id) } else { RobotDecision::commit(s.id) })
                .collect();
            return (true, decisions, flags);
        }
    }
    (false, Vec::new(), flags)
}

/// Per-robot reserve check: commit when every predicted sample stays at or
/// above `e_min + e_res`.
pub fn eware(slots: &[&RobotSlot]) -> Vec<RobotDecision> {
    slots
        .iter()
        .map(|s| {
            let floor = s.e_min + s.e_res;
            if s.soc_stream.iter().all(|&e| e >= floor) {
                RobotDecision::commit(s.id)
            } else {
                RobotDecision::keep_and_land(s.id)
            }
        })
        .collect()
}

/// Gap check first; the reserve check runs only when no gap is violated.
pub fn schedule(slots: &[RobotSlot], p: &GapParams) -> ScheduleDecision {
    let sorted = sort_slots(slots);
    let (violation, decisions, flags) = gware(&sorted, p);
    if violation {
        return ScheduleDecision { decisions, trigger: Trigger::GapViolation, flags };
    }
    let decisions = eware(&sorted);
    let trigger = if decisions.iter().any(|d| d.land) { Trigger::ReserveViolation } else { Trigger::None };
    ScheduleDecision { decisions, trigger, flags }
}
