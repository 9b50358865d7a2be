//! Physical constants, unit-carrying scalars and the frequency convention.
//!
//! Everything is SI at double precision. Quoted experimental frequencies
//! pass through [`apply_convention`] exactly once, at the edge, to become an
//! [`AngularFrequency`].

use std::f64::consts::TAU;
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravitational constant, reduced Planck constant and speed of light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// m³·kg⁻¹·s⁻²
    #[serde(rename = "G")]
    pub g: f64,
    /// J·s
    pub hbar: f64,
    /// m·s⁻¹
    pub c: f64,
}

/// CODATA 2018 values.
pub const CODATA_2018: PhysicalConstants = PhysicalConstants {
    g: 6.674_30e-11,
    hbar: 1.054_571_817e-34,
    c: 2.997_924_58e8,
};

impl PhysicalConstants {
    /// c⁴, which appears in every energy-energy coupling.
    pub fn c4(&self) -> f64 {
        let c2 = self.c * self.c;
        c2 * c2
    }

    /// Għω²/(2c⁴): the prefactor shared by the closed-form minimum rates, in Hz·m.
    pub fn rate_prefactor(&self, omega: AngularFrequency) -> f64 {
        self.g * self.hbar * omega.0 * omega.0 / (2.0 * self.c4())
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        CODATA_2018
    }
}

/// Angular frequency in rad·s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngularFrequency(pub f64);

impl AngularFrequency {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "angular frequency must be finite and non-negative, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A rate in s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rate(pub f64);

impl Rate {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} Hz", self.0)
    }
}

/// Position-measurement rate in Hz·m⁻².
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionMeasurementRate(pub f64);

impl PositionMeasurementRate {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Whether a quoted frequency is used as ω directly or multiplied by 2π.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize, JsonSchema)]
pub enum FrequencyConvention {
    #[default]
    #[serde(rename = "direct")]
    Direct,
    #[serde(rename = "2pi", alias = "times-two-pi")]
    TimesTwoPi,
}

impl FrequencyConvention {
    pub const ALL: [FrequencyConvention; 2] =
        [FrequencyConvention::Direct, FrequencyConvention::TimesTwoPi];

    pub fn as_str(self) -> &'static str {
        match self {
            FrequencyConvention::Direct => "direct",
            FrequencyConvention::TimesTwoPi => "2pi",
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            FrequencyConvention::Direct => 1.0,
            FrequencyConvention::TimesTwoPi => TAU,
        }
    }
}

impl fmt::Display for FrequencyConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FrequencyConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(FrequencyConvention::Direct),
            "2pi" | "times-two-pi" => Ok(FrequencyConvention::TimesTwoPi),
            other => Err(Error::invalid(format!("unknown frequency convention '{other}'"))),
        }
    }
}

/// Turn a quoted frequency (Hz) into an angular frequency under `convention`.
pub fn apply_convention(
    quoted_frequency: f64,
    convention: FrequencyConvention,
) -> Result<AngularFrequency> {
    if !quoted_frequency.is_finite() || quoted_frequency < 0.0 {
        return Err(Error::invalid(format!(
            "quoted frequency must be finite and non-negative, got {quoted_frequency}"
        )));
    }
    Ok(AngularFrequency(quoted_frequency * convention.factor()))
}
