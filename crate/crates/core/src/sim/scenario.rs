//! Scenario files: JSON, every optional field defaulted, validated at load.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::battery::BatteryModel;
use crate::dynamics::quadrotor::QuadrotorParams;
use crate::dynamics::RobotModel;
use crate::ergodic::{CoverageDomain, DensitySpec};
use crate::error::{MeschError, Result};
use crate::estimation::{ChargerModel, NoiseModel, ObservationModel};
use crate::scheduler::GapParams;
use crate::trajgen::{ReserveMode, TrackingWeights};

const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotSpec {
    Quadrotor {
        #[serde(default = "default_mass")]
        mass: f64,
        #[serde(default = "default_inertia")]
        inertia: [f64; 3],
        #[serde(default = "default_arm")]
        arm_length: f64,
        #[serde(default = "default_torque")]
        torque_coeff: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
    DoubleIntegrator {
        #[serde(default = "default_di_dim")]
        dim: usize,
    },
}

fn default_mass() -> f64 {
    0.5
}
fn default_inertia() -> [f64; 3] {
    [0.0023, 0.0023, 0.004]
}
fn default_arm() -> f64 {
    0.175
}
fn default_torque() -> f64 {
    0.0245
}
fn default_gravity() -> f64 {
    9.81
}
fn default_di_dim() -> usize {
    3
}

impl RobotSpec {
    pub fn model(&self) -> Result<RobotModel> {
        match self {
            RobotSpec::Quadrotor {
                mass,
                inertia,
                arm_length,
                torque_coeff,
                gravity,
            } => Ok(RobotModel::Quadrotor(QuadrotorParams::new(
                *mass,
                nalgebra::Matrix3::from_diagonal(&Vector3::from(*inertia)),
                *arm_length,
                *torque_coeff,
                *gravity,
            )?)),
            RobotSpec::DoubleIntegrator { dim } => {
                if !(2..=3).contains(dim) {
                    return Err(MeschError::Config(format!("double integrator dim must be 2 or 3, got {dim}")));
                }
                Ok(RobotModel::DoubleIntegrator { dim: *dim })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub model: RobotSpec,
    pub battery: BatteryModel,
    /// Start position; defaults to the nominal plan's first point.
    #[serde(default)]
    pub position: Option<[f64; 3]>,
    /// Initial SoC, %; defaults to `battery.e_max`.
    #[serde(default)]
    pub soc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChargerMotion {
    Static,
    /// Constant speed and turn rate.
    Unicycle { speed: f64, turn_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargerConfig {
    pub motion: ChargerMotion,
    /// `[x, y]`, `[x, y, z]` or `[x, y, z, heading]`; missing entries are zero.
    pub initial: Vec<f64>,
    /// Diagonal of the process-noise intensity.
    #[serde(default)]
    pub process_noise: Vec<f64>,
    /// Diagonal of the measurement-noise covariance.
    #[serde(default = "default_meas_noise")]
    pub measurement_noise: Vec<f64>,
    /// Diagonal of the initial belief covariance.
    #[serde(default)]
    pub initial_cov: Vec<f64>,
    #[serde(default = "default_observation")]
    pub observation: ObservationModel,
    /// Rendezvous height above the station, m.
    #[serde(default = "default_d")]
    pub d: f64,
}

fn default_meas_noise() -> Vec<f64> {
    vec![0.01, 0.01, 0.01]
}
fn default_observation() -> ObservationModel {
    ObservationModel::PositionOnly
}
fn default_d() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    pub t_n: f64,
    pub t_b: f64,
    pub t_c: f64,
    pub t_r: f64,
    pub t_l: f64,
    pub t_e: f64,
    pub t_ch: f64,
    pub t_delta: f64,
}

impl Default for Horizons {
    fn default() -> Self {
        Self {
            t_n: 2.0,
            t_b: 10.0,
            t_c: 12.0,
            t_r: 18.0,
            t_l: 6.0,
            t_e: 2.0,
            t_ch: 0.0,
            t_delta: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NominalConfig {
    Ergodic {
        #[serde(default)]
        density: DensitySpec,
        #[serde(default = "default_altitude")]
        altitude: f64,
        #[serde(default = "default_t_h")]
        t_h: f64,
        #[serde(default = "default_pto_dt")]
        dt: f64,
        #[serde(default = "default_q")]
        q: f64,
        #[serde(default = "default_c_b")]
        c_b: f64,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default = "default_iters")]
        max_iters: usize,
    },
    /// Robots share one circle, evenly phased; altitude stepped per robot.
    Circle {
        center: [f64; 2],
        radius: f64,
        speed: f64,
        #[serde(default = "default_altitude")]
        altitude: f64,
        #[serde(default)]
        altitude_step: f64,
    },
    /// Closed polyline flown at constant speed, robots evenly spaced along it.
    Waypoint { points: Vec<[f64; 3]>, speed: f64 },
}

fn default_altitude() -> f64 {
    2.0
}
fn default_t_h() -> f64 {
    30.0
}
fn default_pto_dt() -> f64 {
    0.2
}
fn default_q() -> f64 {
    100.0
}
fn default_c_b() -> f64 {
    10.0
}
fn default_r() -> f64 {
    0.01
}
fn default_iters() -> usize {
    40
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Gware,
    Eware,
}

impl std::str::FromStr for Ablation {
    type Err = MeschError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gware" => Ok(Ablation::Gware),
            "eware" => Ok(Ablation::Eware),
            _ => Err(MeschError::Argument(format!("unknown ablation `{s}`; expected gware or eware"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Tracking and simulation step, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub domain: Vec<f64>,
    #[serde(default)]
    pub horizons: Horizons,
    pub robots: Vec<RobotConfig>,
    pub charger: ChargerConfig,
    pub nominal: NominalConfig,
    /// Per-model tracking weights; `None` picks model defaults.
    #[serde(default)]
    pub weights: Option<TrackingWeights>,
    #[serde(default)]
    pub reserve: ReserveMode,
    #[serde(default)]
    pub deterministic_charger: bool,
    #[serde(default = "default_station_radius")]
    pub station_radius: f64,
    /// Slack added to the gap test; `None` uses `T_E`.
    #[serde(default)]
    pub cadence_margin: Option<f64>,
    #[serde(default)]
    pub allow_violations: bool,
    #[serde(default)]
    pub ablate: Option<Ablation>,
}

fn default_duration() -> f64 {
    600.0
}
fn default_dt() -> f64 {
    0.05
}
fn default_station_radius() -> f64 {
    0.3
}

fn load_err(field: &str, reason: impl Into<String>) -> MeschError {
    MeschError::Load {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn multiple_of(x: f64, dt: f64) -> bool {
    let r = x / dt;
    (r - r.round()).abs() < 1e-6
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            load_err(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.horizons;
        if self.robots.is_empty() {
            return Err(load_err("robots", "at least one robot is required"));
        }
        CoverageDomain::new(self.domain.clone()).map_err(|e| load_err("domain", e.to_string()))?;
        if self.domain.len() != 2 {
            return Err(load_err("domain", "coverage domain must be planar"));
        }
        if !(self.duration > 0.0) || !(self.dt > 0.0) {
            return Err(load_err("duration", "duration and dt must be positive"));
        }
        for (name, v) in [
            ("t_n", h.t_n),
            ("t_b", h.t_b),
            ("t_c", h.t_c),
            ("t_r", h.t_r),
            ("t_l", h.t_l),
            ("t_e", h.t_e),
            ("t_ch", h.t_ch),
            ("t_delta", h.t_delta),
        ] {
            let field = format!("horizons.{name}");
            if !(v >= 0.0) {
                return Err(load_err(&field, "must be >= 0"));
            }
            if !multiple_of(v, self.dt) {
                return Err(load_err(&field, format!("{v} is not a multiple of dt = {}", self.dt)));
            }
        }
        if (h.t_c - h.t_n - h.t_b).abs() > TIME_TOL {
            return Err(load_err("horizons.t_c", format!("T_C = {} but T_N + T_B = {}", h.t_c, h.t_n + h.t_b)));
        }
        if (h.t_r - h.t_c - h.t_l).abs() > TIME_TOL {
            return Err(load_err("horizons.t_r", format!("T_R = {} but T_C + T_L = {}", h.t_r, h.t_c + h.t_l)));
        }
        if !(h.t_e > 0.0) || h.t_e > h.t_n + TIME_TOL || !(h.t_n > 0.0) || !(h.t_b > 0.0) || !(h.t_l > 0.0) {
            return Err(load_err("horizons.t_e", "need 0 < T_E <= T_N and positive T_N, T_B, T_L"));
        }
        for (i, r) in self.robots.iter().enumerate() {
            r.model.model().map_err(|e| load_err(&format!("robots[{i}].model"), e.to_string()))?;
            r.battery
                .validate()
                .map_err(|e| load_err(&format!("robots[{i}].battery"), e.to_string()))?;
            if let Some(e) = r.soc {
                if !(e >= 0.0 && e <= r.battery.e_max) {
                    return Err(load_err(&format!("robots[{i}].soc"), "must lie in [0, e_max]"));
                }
            }
        }
        let c = &self.charger;
        if c.initial.len() < 2 || c.initial.len() > 4 {
            return Err(load_err("charger.initial", "need 2 to 4 entries"));
        }
        let n = 4;
        for (name, v) in [("charger.process_noise", &c.process_noise), ("charger.initial_cov", &c.initial_cov)] {
            if !v.is_empty() && (v.len() != n || v.iter().any(|x| !(*x >= 0.0))) {
                return Err(load_err(name, format!("need {n} non-negative entries")));
            }
        }
        let m = c.observation.output_dim(n);
        if c.measurement_noise.len() != m || c.measurement_noise.iter().any(|x| !(*x > 0.0)) {
            return Err(load_err("charger.measurement_noise", format!("need {m} positive entries")));
        }
        if !(c.d > 0.0) {
            return Err(load_err("charger.d", "must be > 0"));
        }
        if let NominalConfig::Ergodic { t_h, dt, .. } = &self.nominal {
            if !(t_h > &h.t_c) {
                return Err(load_err("nominal.t_h", "planning horizon must exceed T_C"));
            }
            if !multiple_of(*t_h, *dt) {
                return Err(load_err("nominal.dt", "must divide t_h"));
            }
        }
        if let NominalConfig::Waypoint { points, speed } = &self.nominal {
            if points.len() < 2 || !(*speed > 0.0) {
                return Err(load_err("nominal.points", "need >= 2 points and positive speed"));
            }
        }
        if let NominalConfig::Circle { radius, speed, .. } = &self.nominal {
            if !(*radius > 0.0) || !(*speed > 0.0) {
                return Err(load_err("nominal.radius", "radius and speed must be positive"));
            }
        }
        if let Some(w) = &self.weights {
            for (i, r) in self.robots.iter().enumerate() {
                crate::trajgen::Tracker::new(r.model.model()?, w, self.dt)
                    .map_err(|e| load_err(&format!("weights (robot {i})"), e.to_string()))?;
            }
        }
        self.gap_params().validate()?;
        Ok(())
    }

    pub fn gap_params(&self) -> GapParams {
        let h = &self.horizons;
        GapParams {
            t_ch: h.t_ch,
            t_delta: h.t_delta,
            t_l: h.t_l,
            t_c: h.t_c,
            cadence_margin: self.cadence_margin.unwrap_or(h.t_e),
        }
    }

    /// Charger state `[x, y, z, heading]`.
    pub fn charger_initial(&self) -> DVector<f64> {
        let mut x = DVector::zeros(4);
        for (i, v) in self.charger.initial.iter().enumerate() {
            x[i] = *v;
        }
        x
    }

    pub fn charger_model(&self) -> ChargerModel {
        match self.charger.motion {
            ChargerMotion::Static => ChargerModel::Static { dim: 4 },
            ChargerMotion::Unicycle { .. } => ChargerModel::Unicycle,
        }
    }

    /// Known charger input.
    pub fn charger_input(&self) -> DVector<f64> {
        match self.charger.motion {
            ChargerMotion::Static => DVector::zeros(0),
            ChargerMotion::Unicycle { speed, turn_rate } => DVector::from_vec(vec![speed, turn_rate]),
        }
    }

    fn diag(v: &[f64], n: usize) -> DMatrix<f64> {
        if v.is_empty() {
            DMatrix::zeros(n, n)
        } else {
            DMatrix::from_diagonal(&DVector::from_column_slice(v))
        }
    }

    /// Process and measurement noise, zeroed process noise when deterministic.
    pub fn charger_noise(&self) -> NoiseModel {
        let w = if self.deterministic_charger {
            DMatrix::zeros(4, 4)
        } else {
            Self::diag(&self.charger.process_noise, 4)
        };
        NoiseModel::constant(w, Self::diag(&self.charger.measurement_noise, 0))
    }

    pub fn charger_initial_cov(&self) -> DMatrix<f64> {
        if self.deterministic_charger {
            DMatrix::zeros(4, 4)
        } else {
            Self::diag(&self.charger.initial_cov, 4)
        }
    }

    pub fn coverage_domain(&self) -> CoverageDomain {
        CoverageDomain::new(self.domain.clone()).expect("validated domain")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MeschError::io(path, e))?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "domain": [10, 10],
        "robots": [{"model": {"kind": "double_integrator"}, "battery": {"discharge": {"kind": "constant_rate", "k_d": 0.5}}}],
        "charger": {"motion": {"kind": "static"}, "initial": [5, 5]},
        "nominal": {"kind": "circle", "center": [5, 5], "radius": 3, "speed": 0.5}
    }"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.horizons, Horizons::default());
        assert_eq!(s.duration, 600.0);
        assert_eq!(s.charger_initial().as_slice(), &[5.0, 5.0, 0.0, 0.0]);
        assert_eq!(s.gap_params().cadence_margin, 2.0);
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn empty_robot_list_is_a_load_error() {
        let text = MINIMAL.replace(
            r#"[{"model": {"kind": "double_integrator"}, "battery": {"discharge": {"kind": "constant_rate", "k_d": 0.5}}}]"#,
            "[]",
        );
        match Scenario::from_json(&text) {
            Err(MeschError::Load { field, .. }) => assert_eq!(field, "robots"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_horizons_rejected() {
        let text = MINIMAL.replace(
            r#""domain": [10, 10],"#,
            r#""domain": [10, 10], "horizons": {"t_n": 2, "t_b": 10, "t_c": 12, "t_r": 20, "t_l": 6, "t_e": 2, "t_ch": 0, "t_delta": 15},"#,
        );
        match Scenario::from_json(&text) {
            Err(MeschError::Load { field, .. }) => assert_eq!(field, "horizons.t_r"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = MINIMAL.replace(r#""k_d": 0.5"#, r#""k_d": "fast""#);
        match Scenario::from_json(&text) {
            Err(MeschError::Load { field, .. }) => assert!(field.contains("robots[0].battery"), "{field}"),
            other => panic!("{other:?}"),
        }
    }
}
