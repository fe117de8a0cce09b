//! Worst-case battery discharge models. State of charge is in percent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MeschError, Result};

/// Class-K function of the squared control magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassK {
    /// `alpha(s) = gain * s`
    Linear { gain: f64 },
    /// `alpha(s) = gain * s^exponent`
    Power { gain: f64, exponent: f64 },
}

impl Default for ClassK {
    fn default() -> Self {
        ClassK::Linear { gain: 1.0 }
    }
}

impl ClassK {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ClassK::Linear { gain } => gain * s,
            ClassK::Power { gain, exponent } => gain * s.max(0.0).powf(exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassK::Linear { gain } => gain > 0.0,
            ClassK::Power { gain, exponent } => gain > 0.0 && exponent > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(MeschError::Config(format!("{self:?} is not strictly increasing")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discharge {
    /// `e_dot = -k_d`
    ConstantRate { k_d: f64 },
    /// `e_dot = -(eta / capacity) * alpha(|u|^2)`
    ControlDependent {
        eta: f64,
        capacity: f64,
        #[serde(default)]
        alpha: ClassK,
        /// Largest `|u|^2` the actuators can produce; bounds the discharge rate.
        u_max_sq: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub discharge: Discharge,
    #[serde(default)]
    pub e_min: f64,
    #[serde(default = "default_e_max")]
    pub e_max: f64,
}

fn default_e_max() -> f64 {
    100.0
}

impl BatteryModel {
    pub fn constant_rate(k_d: f64, e_min: f64, e_max: f64) -> Self {
        Self {
            discharge: Discharge::ConstantRate { k_d },
            e_min,
            e_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.discharge {
            Discharge::ConstantRate { k_d } if k_d <= 0.0 => {
                return Err(MeschError::Config(format!("k_d must be > 0, got {k_d}")))
            }
            Discharge::ControlDependent {
                eta,
                capacity,
                alpha,
                u_max_sq,
            } => {
                if eta <= 0.0 || capacity <= 0.0 || u_max_sq <= 0.0 {
                    return Err(MeschError::Config(
                        "eta, capacity and u_max_sq must be > 0".into(),
                    ));
                }
                alpha.validate()?;
            }
            _ => {}
        }
        if !(self.e_min < self.e_max) || self.e_min < 0.0 {
            return Err(MeschError::Config(format!(
                "need 0 <= e_min < e_max, got e_min = {}, e_max = {}",
                self.e_min, self.e_max
            )));
        }
        Ok(())
    }

    /// Largest discharge rate the model can produce, %/s.
    pub fn max_rate(&self) -> f64 {
        match self.discharge {
            Discharge::ConstantRate { k_d } => k_d,
            Discharge::ControlDependent {
                eta,
                capacity,
                alpha,
                u_max_sq,
            } => eta / capacity * alpha.eval(u_max_sq),
        }
    }
}

/// SoC rate of change in %/s under control `u`; never positive.
pub fn battery_deriv(model: &BatteryModel, u: &DVector<f64>) -> f64 {
    match model.discharge {
        Discharge::ConstantRate { k_d } => -k_d,
        Discharge::ControlDependent {
            eta,
            capacity,
            alpha,
            ..
        } => -eta / capacity * alpha.eval(u.norm_squared()),
    }
}
