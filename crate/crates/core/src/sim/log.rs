//! Simulation records and the summary metrics derived from them.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::scenario::{NominalConfig, Scenario};
use crate::ergodic::{ergodic_metric, DiscreteTrajectory, SpectralDensity, DEFAULT_COEFFS};
use crate::scheduler::ScheduleDecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Returning,
    Charging,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::Returning => "returning",
            Status::Charging => "charging",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active" => Some(Status::Active),
            "returning" => Some(Status::Returning),
            "charging" => Some(Status::Charging),
            _ => None,
        }
    }
}

/// One robot at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub robot_id: usize,
    pub soc: f64,
    pub status: Status,
    pub dist_to_charger: f64,
    pub pos: [f64; 3],
    /// Reserve budgeted by the robot's committed plan, %.
    pub reserve: f64,
    pub e_min: f64,
    pub charger: [f64; 3],
    pub estimate: [f64; 3],
    pub cov_trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotIterationEntry {
    pub id: usize,
    pub t_f: f64,
    pub depleted: bool,
    pub e_res: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub j: usize,
    pub t: f64,
    pub robots: Vec<RobotIterationEntry>,
    pub schedule: ScheduleDecision,
    pub rendezvous: [f64; 3],
    pub worst_case_target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnEvent {
    pub robot_id: usize,
    /// Touchdown time, s.
    pub t: f64,
    /// Relaunch time; `None` if the run ended first.
    pub relaunch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub t: f64,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub hits: usize,
    pub checks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Events {
    pub returns: Vec<ReturnEvent>,
    pub violations: Vec<MonitorEvent>,
    pub calibration: Calibration,
    /// Wall-clock per iteration, ms. Not part of the deterministic outputs.
    #[serde(default)]
    pub iteration_wall_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub scenario: Scenario,
    pub ticks: Vec<TickRecord>,
    pub iterations: Vec<IterationRecord>,
    pub events: Events,
}

fn ser_inf<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `inf` when fewer than two returns happened.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub min_inter_return_gap_s: f64,
    pub required_gap_s: f64,
    /// Minimum of `soc - e_min - reserve` over all ticks.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub min_soc_margin_above_reserve: f64,
    /// Minimum of `soc - e_min` over all ticks.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub min_soc_margin_above_floor: f64,
    pub robots_below_floor: Vec<usize>,
    pub co_occupancy_events: usize,
    pub max_station_occupancy: usize,
    pub returns_per_robot: Vec<usize>,
    pub max_reserve: f64,
    /// `None` for robots that never flew on mission.
    pub ergodic_metric_per_robot: Vec<Option<f64>>,
    pub monitor_violations: usize,
    pub calibration_hits: usize,
    pub calibration_checks: usize,
    pub iterations: usize,
    pub mean_iteration_wall_ms: f64,
    pub max_iteration_wall_ms: f64,
}

/// Per-tick station occupancy: robots charging or within the station radius.
pub fn station_occupancy(log: &SimLog) -> Vec<(f64, usize)> {
    let radius = log.scenario.station_radius;
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in &log.ticks {
        let here = usize::from(r.status == Status::Charging || r.dist_to_charger <= radius);
        match out.last_mut() {
            Some((t, c)) if *t == r.t => *c += here,
            _ => out.push((r.t, here)),
        }
    }
    out
}

/// Minimum spacing between consecutive return times.
pub fn min_gap(returns: &[f64]) -> f64 {
    let mut ts = returns.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

pub fn metrics(log: &SimLog) -> Metrics {
    let n = log.scenario.robots.len();
    let occupancy = station_occupancy(log);
    let mut events = 0;
    let mut prev = 0;
    for &(_, c) in &occupancy {
        if c > 1 && prev <= 1 {
            events += 1;
        }
        prev = c;
    }
    let mut below: Vec<usize> = log.ticks.iter().filter(|r| r.soc < r.e_min).map(|r| r.robot_id).collect();
    below.sort_unstable();
    below.dedup();
    let mut returns_per_robot = vec![0; n];
    for r in &log.events.returns {
        returns_per_robot[r.robot_id] += 1;
    }
    let walls = &log.events.iteration_wall_ms;
    Metrics {
        min_inter_return_gap_s: min_gap(&log.events.returns.iter().map(|r| r.t).collect::<Vec<_>>()),
        required_gap_s: log.scenario.horizons.t_ch + log.scenario.horizons.t_delta,
        min_soc_margin_above_reserve: log
            .ticks
            .iter()
            .map(|r| r.soc - r.e_min - r.reserve)
            .fold(f64::INFINITY, f64::min),
        min_soc_margin_above_floor: log.ticks.iter().map(|r| r.soc - r.e_min).fold(f64::INFINITY, f64::min),
        robots_below_floor: below,
        co_occupancy_events: events,
        max_station_occupancy: occupancy.iter().map(|o| o.1).max().unwrap_or(0),
        returns_per_robot,
        max_reserve: log
            .iterations
            .iter()
            .flat_map(|it| it.robots.iter().map(|r| r.e_res))
            .fold(0.0, f64::max),
        ergodic_metric_per_robot: executed_ergodic_metrics(log),
        monitor_violations: log.events.violations.len(),
        calibration_hits: log.events.calibration.hits,
        calibration_checks: log.events.calibration.checks,
        iterations: log.iterations.len(),
        mean_iteration_wall_ms: if walls.is_empty() { 0.0 } else { walls.iter().sum::<f64>() / walls.len() as f64 },
        max_iteration_wall_ms: walls.iter().copied().fold(0.0, f64::max),
    }
}

/// Coverage quality of each robot's flown path while on mission.
fn executed_ergodic_metrics(log: &SimLog) -> Vec<Option<f64>> {
    let NominalConfig::Ergodic { density, .. } = &log.scenario.nominal else {
        return Vec::new();
    };
    let domain = log.scenario.coverage_domain();
    let Ok(spectral) = SpectralDensity::from_spec(density, &domain, DEFAULT_COEFFS) else {
        return Vec::new();
    };
    (0..log.scenario.robots.len())
        .map(|id| {
            let states: Vec<_> = log
                .ticks
                .iter()
                .filter(|r| r.robot_id == id && r.status == Status::Active)
                .map(|r| nalgebra::DVector::from_vec(vec![r.pos[0], r.pos[1]]))
                .collect();
            if states.is_empty() {
                return None;
            }
            let traj = DiscreteTrajectory {
                controls: Vec::new(),
                states,
                dt: log.scenario.dt,
                feasible: false,
            };
            Some(ergodic_metric(&traj, &spectral, &domain))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        assert_eq!(min_gap(&[100.0, 130.0]), 30.0);
        assert_eq!(min_gap(&[]), f64::INFINITY);
        assert_eq!(min_gap(&[5.0]), f64::INFINITY);
        assert_eq!(min_gap(&[50.0, 10.0, 40.0]), 10.0);
    }

    #[test]
    fn infinite_gap_serializes_as_inf() {
        #[derive(Serialize, Deserialize)]
        struct W {
            #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
            v: f64,
        }
        let s = serde_json::to_string(&W { v: f64::INFINITY }).unwrap();
        assert_eq!(s, r#"{"v":"inf"}"#);
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back.v, f64::INFINITY);
        let back: W = serde_json::from_str(r#"{"v":2.5}"#).unwrap();
        assert_eq!(back.v, 2.5);
    }
}
