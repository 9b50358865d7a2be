//! Dephasing of one clock that accompanies the gravitational redshift from a
//! nearby mass, with the clock on a single global-feedback channel.
//!
//! The clock dephases at Γ_z/2 + Σ_i g_i²/(8Γ_i), where g_i = Gm_iω/(c²d_i²)
//! couples the clock to the position of atom i and Γ_i is that atom's
//! position-measurement rate.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{AngularFrequency, FrequencyConvention, PhysicalConstants, PositionMeasurementRate, Rate};
use crate::error::{Error, Result};
use crate::geometry::{distance, Position};
use crate::summation::CompensatedSum;

/// Gmω/(c²d²), in Hz·m⁻¹.
pub fn redshift_coupling(m: f64, d: f64, omega: AngularFrequency, k: &PhysicalConstants) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("clock-mass distance must be positive, got {d}")));
    }
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::invalid(format!("mass must be finite and >= 0, got {m}")));
    }
    Ok(k.g * m * omega.0 / (k.c * k.c * d * d))
}

/// Gm²/(ħL_c³), in Hz·m⁻².
pub fn internal_measurement_rate(m: f64, lc: f64, k: &PhysicalConstants) -> Result<PositionMeasurementRate> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::invalid(format!("atom mass must be positive, got {m}")));
    }
    if !(lc > 0.0) {
        return Err(Error::invalid(format!("lattice constant must be positive, got {lc}")));
    }
    Ok(PositionMeasurementRate(k.g * m * m / (k.hbar * lc.powi(3))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum BodyShape {
    /// Homogeneous shell l < r < L centred on the clock, treated as a continuum.
    Shell { inner: f64, outer: f64 },
    /// Explicit atom positions.
    Atoms { positions: Vec<Position> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeBody {
    pub atom_mass: f64,
    pub lattice_constant: f64,
    pub shape: BodyShape,
    /// Replaces Gm²/(ħL_c³) as every atom's measurement rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_rate: Option<PositionMeasurementRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MassiveBody {
    Simple {
        mass: f64,
        distance: f64,
        measurement_rate: PositionMeasurementRate,
    },
    Composite(CompositeBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedshiftDephasing {
    pub total: Rate,
    /// Γ_z/2.
    pub measurement_part: Rate,
    /// Σ_i g_i²/(8Γ_i).
    pub feedback_part: Rate,
    /// Γ_i/2 + g_i²/(8Γ_z) per atom, Hz·m⁻²; only for explicit atoms and Γ_z > 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_diffusion: Option<Vec<f64>>,
    pub convention: FrequencyConvention,
}

impl RedshiftDephasing {
    fn new(gamma_z: Rate, feedback: f64, position_diffusion: Option<Vec<f64>>) -> Self {
        let measurement = gamma_z.0 / 2.0;
        Self {
            total: Rate(measurement + feedback),
            measurement_part: Rate(measurement),
            feedback_part: Rate(feedback),
            position_diffusion,
            convention: FrequencyConvention::Direct,
        }
    }

    pub fn with_convention(mut self, convention: FrequencyConvention) -> Self {
        self.convention = convention;
        self
    }
}

fn check_gamma_z(gamma_z: Rate) -> Result<()> {
    if !(gamma_z.0 >= 0.0 && gamma_z.0.is_finite()) {
        return Err(Error::invalid(format!("clock measurement rate must be finite and >= 0, got {}", gamma_z.0)));
    }
    Ok(())
}

/// D = Γ_z/2 + (πGħω²/2c⁴)(l⁻¹ − L⁻¹).
pub fn shell_dephasing(
    inner: f64,
    outer: f64,
    omega: AngularFrequency,
    gamma_z: Rate,
    k: &PhysicalConstants,
) -> Result<RedshiftDephasing> {
    check_gamma_z(gamma_z)?;
    if !(inner > 0.0 && outer >= inner) {
        return Err(Error::invalid(format!(
            "shell needs 0 < l <= L, got l = {inner}, L = {outer}"
        )));
    }
    let feedback = PI * k.g * k.hbar * omega.0 * omega.0 / (2.0 * k.c4()) * (1.0 / inner - 1.0 / outer);
    Ok(RedshiftDephasing::new(gamma_z, feedback, None))
}

/// D = Γ_z/2 + G²M²ω²/(8c⁴d⁴Γ_i).
pub fn simple_particle_dephasing(
    mass: f64,
    d: f64,
    omega: AngularFrequency,
    gamma_i: PositionMeasurementRate,
    gamma_z: Rate,
    k: &PhysicalConstants,
) -> Result<RedshiftDephasing> {
    check_gamma_z(gamma_z)?;
    if !(gamma_i.0 > 0.0) {
        return Err(Error::invalid("position measurement rate must be positive; feedback noise diverges at zero"));
    }
    let g = redshift_coupling(mass, d, omega, k)?;
    let diffusion = (gamma_z.0 > 0.0).then(|| vec![gamma_i.0 / 2.0 + g * g / (8.0 * gamma_z.0)]);
    Ok(RedshiftDephasing::new(gamma_z, g * g / (8.0 * gamma_i.0), diffusion))
}

/// Dephasing of a clock at `clock` from a composite body of identical atoms.
pub fn composite_dephasing(
    body: &CompositeBody,
    clock: Position,
    omega: AngularFrequency,
    gamma_z: Rate,
    k: &PhysicalConstants,
) -> Result<RedshiftDephasing> {
    check_gamma_z(gamma_z)?;
    let lc = body.lattice_constant;
    let gamma = match body.measurement_rate {
        Some(r) if r.0 > 0.0 => r,
        Some(r) => return Err(Error::invalid(format!("atom measurement rate must be positive, got {}", r.0))),
        None => internal_measurement_rate(body.atom_mass, lc, k)?,
    };
    // g_i²/(8Γ) = coefficient / d_i⁴
    let coefficient = (k.g * body.atom_mass * omega.0 / (k.c * k.c)).powi(2) / (8.0 * gamma.0);
    match &body.shape {
        BodyShape::Shell { inner, outer } => {
            if !(*inner >= lc / 2.0 && outer >= inner) {
                return Err(Error::invalid(format!(
                    "shell needs L_c/2 <= l <= L, got l = {inner}, L = {outer}"
                )));
            }
            // atom density 1/L_c³ integrated against d⁻⁴
            let feedback = coefficient / lc.powi(3) * 4.0 * PI * (1.0 / inner - 1.0 / outer);
            Ok(RedshiftDephasing::new(gamma_z, feedback, None))
        }
        BodyShape::Atoms { positions } => {
            if positions.is_empty() {
                return Err(Error::invalid("composite body has no atoms"));
            }
            let distances: Vec<f64> = positions.iter().map(|p| distance(p, &clock)).collect();
            if let Some(i) = distances.iter().position(|d| *d < lc / 2.0) {
                return Err(Error::invalid(format!(
                    "clock lies within L_c/2 of atom {i} (distance {:e} m)",
                    distances[i]
                )));
            }
            let partials: Vec<CompensatedSum> = distances
                .par_chunks(4096)
                .map(|chunk| chunk.iter().map(|d| d.powi(-4)).sum())
                .collect();
            let mut sum = CompensatedSum::new();
            for p in partials {
                sum.merge(p);
            }
            let diffusion = (gamma_z.0 > 0.0).then(|| {
                distances
                    .iter()
                    // g_i² = 8Γ·coefficient/d⁴
                    .map(|d| gamma.0 / 2.0 + coefficient * gamma.0 / (gamma_z.0 * d.powi(4)))
                    .collect()
            });
            Ok(RedshiftDephasing::new(gamma_z, coefficient * sum.value(), diffusion))
        }
    }
}

/// Atoms filling the shell l < r < L around `centre`: layers of thickness
/// ≈ L_c at their midpoint radii, each holding round(4πr²Δr/L_c³) points on a
/// Fibonacci sphere.
pub fn discretize_shell(centre: Position, inner: f64, outer: f64, lc: f64) -> Result<Vec<Position>> {
    if !(inner > 0.0 && outer > inner && lc > 0.0) {
        return Err(Error::invalid("shell discretization needs 0 < l < L and L_c > 0"));
    }
    let layers = ((outer - inner) / lc).round().max(1.0) as usize;
    let dr = (outer - inner) / layers as f64;
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut atoms = Vec::new();
    for layer in 0..layers {
        let r = inner + (layer as f64 + 0.5) * dr;
        let count = (4.0 * PI * r * r * dr / lc.powi(3)).round().max(1.0) as usize;
        for k in 0..count {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let rho = (1.0 - y * y).sqrt();
            let phi = golden * k as f64;
            atoms.push([
                centre[0] + r * rho * phi.cos(),
                centre[1] + r * y,
                centre[2] + r * rho * phi.sin(),
            ]);
        }
    }
    Ok(atoms)
}

/// Bounds on Γ_i and Γ_z implied by an observed cap on the clock's
/// dephasing: each term alone must stay below the cap.
pub fn bound_parameters(
    cap: Rate,
    mass: f64,
    d: f64,
    omega: AngularFrequency,
    k: &PhysicalConstants,
) -> Result<(PositionMeasurementRate, Rate)> {
    if !(cap.0 > 0.0 && cap.0.is_finite()) {
        return Err(Error::invalid(format!("dephasing cap must be positive, got {}", cap.0)));
    }
    let g = redshift_coupling(mass, d, omega, k)?;
    Ok((PositionMeasurementRate(g * g / (8.0 * cap.0)), Rate(2.0 * cap.0)))
}
