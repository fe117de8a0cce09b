//! High-level nominal plans the robots track between recharges.

use std::f64::consts::TAU;

use nalgebra::{DVector, Vector3};

use super::scenario::NominalConfig;
use crate::dynamics::RobotModel;
use crate::ergodic::{pto_optimize, CoverageDomain, DiscreteTrajectory, PtoParams, SpectralDensity, DEFAULT_COEFFS};
use crate::error::Result;

#[derive(Debug, Clone)]
pub enum NominalPlan {
    /// Planar double-integrator plan flown at fixed altitude, starting at `t0`.
    Ergodic {
        traj: DiscreteTrajectory,
        t0: f64,
        altitude: f64,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
        omega: f64,
        phase: f64,
        altitude: f64,
    },
    Waypoint {
        points: Vec<Vector3<f64>>,
        /// Cumulative arc length at each vertex, closing segment included.
        cumulative: Vec<f64>,
        speed: f64,
        offset: f64,
    },
}

impl NominalPlan {
    /// Reference position and velocity at `t`.
    pub fn sample(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            NominalPlan::Ergodic { traj, t0, altitude } => {
                let horizon = traj.horizon();
                let tau = (t - t0).clamp(0.0, horizon);
                let x = traj.sample(tau);
                let v = if t - t0 > horizon { Vector3::zeros() } else { Vector3::new(x[2], x[3], 0.0) };
                (Vector3::new(x[0], x[1], *altitude), v)
            }
            NominalPlan::Circle {
                center,
                radius,
                omega,
                phase,
                altitude,
            } => {
                let a = phase + omega * t;
                let (s, c) = a.sin_cos();
                (
                    Vector3::new(center[0] + radius * c, center[1] + radius * s, *altitude),
                    Vector3::new(-radius * omega * s, radius * omega * c, 0.0),
                )
            }
            NominalPlan::Waypoint {
                points,
                cumulative,
                speed,
                offset,
            } => {
                let total = *cumulative.last().unwrap();
                let s = (offset + speed * t).rem_euclid(total);
                let i = cumulative.partition_point(|&c| c <= s).saturating_sub(1).min(points.len() - 1);
                let a = points[i];
                let b = points[(i + 1) % points.len()];
                let seg = cumulative[i + 1] - cumulative[i];
                let w = (s - cumulative[i]) / seg;
                let dir = (b - a) / seg;
                (a + (b - a) * w, dir * *speed)
            }
        }
    }

    /// End of the interval on which the plan is defined.
    pub fn valid_until(&self) -> f64 {
        match self {
            NominalPlan::Ergodic { traj, t0, .. } => t0 + traj.horizon(),
            _ => f64::INFINITY,
        }
    }
}

/// Builds per-robot nominal plans from the scenario configuration.
#[derive(Debug, Clone)]
pub struct NominalPlanner {
    config: NominalConfig,
    domain: CoverageDomain,
    density: Option<SpectralDensity>,
    robots: usize,
}

impl NominalPlanner {
    pub fn new(config: &NominalConfig, domain: &CoverageDomain, robots: usize) -> Result<Self> {
        let density = match config {
            NominalConfig::Ergodic { density, .. } => Some(SpectralDensity::from_spec(density, domain, DEFAULT_COEFFS)?),
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            domain: domain.clone(),
            density,
            robots,
        })
    }

    pub fn density(&self) -> Option<&SpectralDensity> {
        self.density.as_ref()
    }

    /// Whether the plan needs regenerating before `t` plus `lead` seconds.
    pub fn needs_replan(&self, plan: &NominalPlan, t: f64, lead: f64) -> bool {
        plan.valid_until() - t < lead
    }

    /// Plan for robot `id` starting at time `t` from planar state
    /// `[x, y, vx, vy]`.
    pub fn plan(&self, id: usize, t: f64, start: [f64; 4]) -> Result<NominalPlan> {
        match &self.config {
            NominalConfig::Ergodic {
                altitude,
                t_h,
                dt,
                q,
                c_b,
                r,
                max_iters,
                ..
            } => {
                let model = RobotModel::DoubleIntegrator { dim: 2 };
                let mut params = PtoParams::with_defaults(&model, *t_h, *dt, *q, *c_b, *r);
                params.max_iters = *max_iters;
                let clamp = |v: f64, l: f64| v.clamp(0.0, l);
                let x_ic = DVector::from_vec(vec![
                    clamp(start[0], self.domain.lengths[0]),
                    clamp(start[1], self.domain.lengths[1]),
                    start[2],
                    start[3],
                ]);
                let density = self.density.as_ref().expect("ergodic planner has a density");
                let res = pto_optimize(&x_ic, &model, density, &self.domain, &params)?;
                Ok(NominalPlan::Ergodic {
                    traj: res.trajectory,
                    t0: t,
                    altitude: *altitude,
                })
            }
            NominalConfig::Circle {
                center,
                radius,
                speed,
                altitude,
                altitude_step,
            } => Ok(NominalPlan::Circle {
                center: *center,
                radius: *radius,
                omega: speed / radius,
                phase: TAU * id as f64 / self.robots as f64,
                altitude: altitude + altitude_step * id as f64,
            }),
            NominalConfig::Waypoint { points, speed } => {
                let pts: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(*p)).collect();
                let mut cumulative = vec![0.0];
                for i in 0..pts.len() {
                    let next = cumulative[i] + (pts[(i + 1) % pts.len()] - pts[i]).norm();
                    cumulative.push(next);
                }
                let total = *cumulative.last().unwrap();
                Ok(NominalPlan::Waypoint {
                    points: pts,
                    cumulative,
                    speed: *speed,
                    offset: total * id as f64 / self.robots as f64,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_plan_is_consistent() {
        let cfg = NominalConfig::Circle {
            center: [5.0, 5.0],
            radius: 2.0,
            speed: 0.5,
            altitude: 2.0,
            altitude_step: 0.1,
        };
        let d = CoverageDomain::new(vec![10.0, 10.0]).unwrap();
        let p = NominalPlanner::new(&cfg, &d, 4).unwrap().plan(1, 0.0, [0.0; 4]).unwrap();
        let (a, va) = p.sample(3.0);
        let (b, _) = p.sample(3.0 + 1e-6);
        assert!(((b - a) / 1e-6 - va).norm() < 1e-5);
        assert!((va.norm() - 0.5).abs() < 1e-12);
        assert!((a.z - 2.1).abs() < 1e-12);
    }

    #[test]
    fn waypoint_plan_wraps() {
        let cfg = NominalConfig::Waypoint {
            points: vec![[0.0, 0.0, 1.0], [4.0, 0.0, 1.0], [4.0, 3.0, 1.0]],
            speed: 1.0,
        };
        let d = CoverageDomain::new(vec![10.0, 10.0]).unwrap();
        let p = NominalPlanner::new(&cfg, &d, 1).unwrap().plan(0, 0.0, [0.0; 4]).unwrap();
        let (a, v) = p.sample(2.0);
        assert!((a - Vector3::new(2.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((v - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let (b, _) = p.sample(12.0 + 2.0);
        assert!((b - a).norm() < 1e-9);
    }

    #[test]
    fn ergodic_plan_starts_at_start_and_expires() {
        let cfg = NominalConfig::Ergodic {
            density: Default::default(),
            altitude: 2.0,
            t_h: 30.0,
            dt: 0.2,
            q: 100.0,
            c_b: 10.0,
            r: 0.01,
            max_iters: 5,
        };
        let d = CoverageDomain::new(vec![10.0, 10.0]).unwrap();
        let planner = NominalPlanner::new(&cfg, &d, 2).unwrap();
        let p = planner.plan(0, 10.0, [3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.sample(10.0).0, Vector3::new(3.0, 4.0, 2.0));
        assert!((p.valid_until() - 40.0).abs() < 1e-9);
        assert!(planner.needs_replan(&p, 29.0, 12.0));
        assert!(!planner.needs_replan(&p, 27.0, 12.0));
    }
}
