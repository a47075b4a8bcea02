use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Load resistor and reference voltage of the sensor read-out divider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupplyConstants {
    pub load_kohm: f64,
    pub reference_v: f64,
}

impl Default for SupplyConstants {
    fn default() -> Self {
        Self {
            load_kohm: 10.0,
            reference_v: 3.11,
        }
    }
}

impl SupplyConstants {
    /// `R = load * (Vref - v) / v`, defined on the open interval `(0, Vref)`.
    pub fn to_resistance(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v < self.reference_v) {
            return Err(Error::OutOfRangeVoltage {
                volts: v,
                reference: self.reference_v,
            });
        }
        Ok(self.load_kohm * (self.reference_v - v) / v)
    }

    pub fn to_voltage(&self, r_kohm: f64) -> f64 {
        self.reference_v / (1.0 + r_kohm / self.load_kohm)
    }
}

/// Sensor voltage to resistance (kΩ) with the default 10 kΩ / 3.11 V divider.
pub fn voltage_to_resistance(v: f64) -> Result<f64> {
    SupplyConstants::default().to_resistance(v)
}

pub fn resistance_to_voltage(r_kohm: f64) -> f64 {
    SupplyConstants::default().to_voltage(r_kohm)
}
