//! On-disk run artifacts and multi-seed sweeps.
//!
//! A run directory holds `ticks.csv`, `decisions.json`, `events.json`,
//! `scenario.json`, `metrics.json` and `plot.gp`. Everything except the
//! wall-clock timings is a pure function of the scenario and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::run;
use super::log::{metrics, Events, IterationRecord, Metrics, SimLog, Status, TickRecord};
use super::scenario::Scenario;
use crate::error::{MeschError, Result};
use crate::par;

pub const TICKS_HEADER: &str = "t,robot_id,soc,status,dist_to_charger,x,y,z,reserve,e_min,\
charger_x,charger_y,charger_z,estimate_x,estimate_y,estimate_z,cov_trace";

fn ticks_csv(ticks: &[TickRecord]) -> String {
    let mut out = String::with_capacity(ticks.len() * 160);
    out.push_str(TICKS_HEADER);
    out.push('\n');
    for r in ticks {
        let _ = write!(out, "{},{},{},{},{}", r.t, r.robot_id, r.soc, r.status.as_str(), r.dist_to_charger);
        for v in r.pos.iter().chain([r.reserve, r.e_min].iter()).chain(&r.charger).chain(&r.estimate) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", r.cov_trace);
    }
    out
}

fn parse_ticks(text: &str) -> Result<Vec<TickRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TICKS_HEADER) {
        return Err(MeschError::Load {
            field: "ticks.csv".into(),
            reason: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| MeschError::Load {
                field: format!("ticks.csv line {}", i + 2),
                reason: what.to_string(),
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 17 {
                return Err(bad("expected 17 columns"));
            }
            let f = |k: usize| cols[k].parse::<f64>().map_err(|_| bad(&format!("column {k} is not a number")));
            let xyz = |k: usize| -> Result<[f64; 3]> { Ok([f(k)?, f(k + 1)?, f(k + 2)?]) };
            Ok(TickRecord {
                t: f(0)?,
                robot_id: cols[1].parse().map_err(|_| bad("robot_id"))?,
                soc: f(2)?,
                status: Status::parse(cols[3]).ok_or_else(|| bad("status"))?,
                dist_to_charger: f(4)?,
                pos: xyz(5)?,
                reserve: f(8)?,
                e_min: f(9)?,
                charger: xyz(10)?,
                estimate: xyz(13)?,
                cov_trace: f(16)?,
            })
        })
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| MeschError::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| MeschError::io(&path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("log records serialize")
}

fn from_json<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| MeschError::Load {
        field: name.to_string(),
        reason: e.to_string(),
    })
}

/// Write every artifact of a run into `dir` and return its metrics.
pub fn export(log: &SimLog, dir: &Path) -> Result<Metrics> {
    fs::create_dir_all(dir).map_err(|e| MeschError::io(dir, e))?;
    let m = metrics(log);
    write(dir, "ticks.csv", &ticks_csv(&log.ticks))?;
    write(dir, "decisions.json", &json(&log.iterations))?;
    write(dir, "events.json", &json(&log.events))?;
    write(dir, "scenario.json", &log.scenario.to_json())?;
    write(dir, "metrics.json", &json(&m))?;
    write_plot_script(dir, log.scenario.robots.len())?;
    Ok(m)
}

/// Rebuild a run from its directory.
pub fn read_log(dir: &Path) -> Result<SimLog> {
    let scenario = Scenario::from_json(&read(dir, "scenario.json")?)?;
    let ticks = parse_ticks(&read(dir, "ticks.csv")?)?;
    let iterations: Vec<IterationRecord> = from_json("decisions.json", &read(dir, "decisions.json")?)?;
    let events: Events = from_json("events.json", &read(dir, "events.json")?)?;
    Ok(SimLog {
        scenario,
        ticks,
        iterations,
        events,
    })
}

/// Gnuplot script drawing SoC and distance-to-charger per robot.
pub fn write_plot_script(dir: &Path, robots: usize) -> Result<()> {
    let mut gp = String::from(
        "# gnuplot -p plot.gp\n\
         set datafile separator ','\n\
         set key outside right\n\
         set xlabel 't [s]'\n\
         set terminal pngcairo size 1200,900\n\
         set output 'plot.png'\n\
         set multiplot layout 2,1\n\
         set ylabel 'SoC [%]'\n",
    );
    let series = |col: &str| -> String {
        (0..robots)
            .map(|id| format!("'ticks.csv' every ::1 using ($2=={id}?$1:1/0):{col} with lines title 'robot {id}'"))
            .collect::<Vec<_>>()
            .join(", \\\n     ")
    };
    let _ = writeln!(gp, "plot {}", series("3"));
    gp.push_str("set ylabel 'distance to charger [m]'\n");
    let _ = writeln!(gp, "plot {}", series("5"));
    gp.push_str("unset multiplot\n");
    write(dir, "plot.gp", &gp)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub runs: Vec<SeedOutcome>,
    pub failures: usize,
    /// Smallest return gap over all successful runs.
    pub min_inter_return_gap_s: f64,
    pub total_monitor_violations: usize,
}

/// Run seeds `0..seeds` of a scenario, in parallel when enabled.
pub fn sweep(scenario: &Scenario, seeds: u64) -> SweepSummary {
    let runs = par::map_range(seeds as usize, |i| {
        let mut s = scenario.clone();
        s.seed = i as u64;
        match run(&s) {
            Ok(log) => SeedOutcome {
                seed: s.seed,
                metrics: Some(metrics(&log)),
                error: None,
            },
            Err(e) => SeedOutcome {
                seed: s.seed,
                metrics: None,
                error: Some(e.to_string()),
            },
        }
    });
    let ok = || runs.iter().filter_map(|r| r.metrics.as_ref());
    SweepSummary {
        scenario: scenario.name.clone(),
        failures: runs.iter().filter(|r| r.error.is_some()).count(),
        min_inter_return_gap_s: ok().map(|m| m.min_inter_return_gap_s).fold(f64::INFINITY, f64::min),
        total_monitor_violations: ok().map(|m| m.monitor_violations).sum(),
        runs,
    }
}
