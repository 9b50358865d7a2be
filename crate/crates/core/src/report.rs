//! Headline estimates recomputed under every frequency convention and channel
//! mode, compared with the quoted order-of-magnitude values.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constants::{apply_convention, FrequencyConvention, PhysicalConstants, CODATA_2018};
use crate::continuum::{continuum_sum, ScalingSweep, SweepQuantity};
use crate::error::Result;
use crate::geometry::{pair_interaction_rate, ClockSpec};
use crate::rates::ChannelMode;
use crate::redshift::bound_parameters;
use crate::constants::Rate;

/// Agreement class from the factor between computed and quoted values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    /// Within ×10.
    Reproduced,
    /// Within ×100.
    OrderCompatible,
    Discrepant,
}

impl Status {
    pub fn classify(factor: f64) -> Self {
        if factor <= 10.0 {
            Status::Reproduced
        } else if factor <= 100.0 {
            Status::OrderCompatible
        } else {
            Status::Discrepant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Reproduced => "reproduced",
            Status::OrderCompatible => "order-compatible",
            Status::Discrepant => "discrepant",
        }
    }
}

/// max(x/y, y/x); infinite when either side is zero or non-finite.
pub fn discrepancy_factor(computed: f64, quoted: f64) -> f64 {
    if !(computed > 0.0 && quoted > 0.0 && computed.is_finite()) {
        return f64::INFINITY;
    }
    let r = computed / quoted;
    r.max(1.0 / r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRow {
    pub convention: FrequencyConvention,
    /// Channel mode, or "n/a" where the quantity does not depend on it.
    pub mode: String,
    /// Lattice dimension for continuum estimates.
    pub dimension: Option<usize>,
    pub formula_id: String,
    pub computed: f64,
    /// computed / quoted.
    pub ratio: f64,
    pub factor: f64,
    pub status: Status,
    /// Smallest factor among the rows of this claim.
    pub closest: bool,
    /// This row is held to the claim's gate.
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub citation: String,
    pub description: String,
    pub quoted: f64,
    pub unit: String,
    /// Maximum agreement factor required of the gated rows; `None` means the
    /// claim is tabulated only.
    pub gate_factor: Option<f64>,
    pub rows: Vec<ClaimRow>,
}

impl Claim {
    /// True when every gated row lies within the gate factor (inclusive).
    pub fn gate_passes(&self) -> Option<bool> {
        self.gate_factor
            .map(|limit| self.rows.iter().filter(|r| r.gated).all(|r| r.factor <= limit))
    }

    pub fn closest_row(&self) -> Option<&ClaimRow> {
        self.rows.iter().find(|r| r.closest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineReport {
    pub constants: PhysicalConstants,
    pub claims: Vec<Claim>,
}

impl HeadlineReport {
    pub fn claim(&self, id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }

    /// One row per computed value, claim fields repeated.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "claim_id",
            "citation",
            "quoted",
            "unit",
            "convention",
            "mode",
            "dimension",
            "formula_id",
            "computed",
            "ratio",
            "status",
            "closest",
            "gated",
            "gate_factor",
        ])?;
        for c in &self.claims {
            for r in &c.rows {
                w.write_record([
                    c.id.clone(),
                    c.citation.clone(),
                    format!("{:e}", c.quoted),
                    c.unit.clone(),
                    r.convention.to_string(),
                    r.mode.clone(),
                    r.dimension.map(|d| d.to_string()).unwrap_or_default(),
                    r.formula_id.clone(),
                    format!("{:e}", r.computed),
                    format!("{:e}", r.ratio),
                    r.status.as_str().to_string(),
                    r.closest.to_string(),
                    r.gated.to_string(),
                    c.gate_factor.map(|g| format!("{g}")).unwrap_or_default(),
                ])?;
            }
        }
        w.flush().map_err(|e| crate::Error::Io {
            path: "<report>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Parameter sets behind the headline estimates.
pub mod presets {
    /// Optical clock angular frequency used for the two-clock, lattice and
    /// Earth estimates.
    pub const OPTICAL_OMEGA: f64 = 1e15;
    pub const TWO_CLOCK_SEPARATION: f64 = 300e-9;
    pub const LATTICE_CLOCKS: f64 = 1e6;
    pub const LATTICE_SPACING: f64 = 800e-9;
    pub const NUCLEAR_OMEGA: f64 = 1e26;
    pub const NUCLEAR_CLOCKS: f64 = 1e23;
    pub const NUCLEAR_SPACING: f64 = 1e-15;
    /// 8×10⁵ THz gamma line.
    pub const MOSSBAUER_OMEGA: f64 = 8e17;
    pub const MOSSBAUER_SPACING: f64 = 1e-10;
    /// One mole.
    pub const MOSSBAUER_ATOMS: f64 = 6.022_140_76e23;
    /// Linewidth considered observable.
    pub const OBSERVABLE_RATE: f64 = 1e-3;
    pub const EARTH_MASS: f64 = 5.972e24;
    pub const EARTH_RADIUS: f64 = 6.371e6;
    /// Anomalous dephasing excluded by clock comparisons.
    pub const OBSERVED_DEPHASING_CAP: f64 = 1e-4;
}

use presets::*;

struct ClaimBuilder {
    claim: Claim,
}

impl ClaimBuilder {
    fn new(id: &str, citation: &str, description: &str, quoted: f64, unit: &str, gate: Option<f64>) -> Self {
        Self {
            claim: Claim {
                id: id.into(),
                citation: citation.into(),
                description: description.into(),
                quoted,
                unit: unit.into(),
                gate_factor: gate,
                rows: Vec::new(),
            },
        }
    }

    fn row(
        &mut self,
        convention: FrequencyConvention,
        mode: &str,
        dimension: Option<usize>,
        formula_id: &str,
        computed: f64,
        gated: bool,
    ) {
        let factor = discrepancy_factor(computed, self.claim.quoted);
        self.claim.rows.push(ClaimRow {
            convention,
            mode: mode.into(),
            dimension,
            formula_id: formula_id.into(),
            computed,
            ratio: computed / self.claim.quoted,
            factor,
            status: Status::classify(factor),
            closest: false,
            gated,
        });
    }

    fn finish(mut self) -> Claim {
        let best = self
            .claim
            .rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.factor.total_cmp(&b.1.factor))
            .map(|(i, _)| i);
        if let Some(i) = best {
            self.claim.rows[i].closest = true;
        }
        self.claim
    }
}

fn quantity_for(mode: ChannelMode) -> SweepQuantity {
    match mode {
        ChannelMode::Pairwise => SweepQuantity::PairwiseFree,
        ChannelMode::Global => SweepQuantity::GlobalFree,
    }
}

/// Free-rate center-clock minimum from the continuum estimate.
pub fn continuum_rate(
    n: f64,
    dimension: usize,
    lc: f64,
    omega: f64,
    mode: ChannelMode,
    k: &PhysicalConstants,
) -> Result<f64> {
    let q = quantity_for(mode);
    let sum = continuum_sum(n, dimension, lc, q.alpha())?.value;
    Ok(q.rate(k.rate_prefactor(crate::constants::AngularFrequency(omega)), sum, n))
}

/// Smallest N (log-space bisection) whose continuum rate reaches `target`;
/// infinite when even N = 10³⁰⁰ falls short.
pub fn clocks_for_rate(
    target: f64,
    dimension: usize,
    lc: f64,
    omega: f64,
    mode: ChannelMode,
    k: &PhysicalConstants,
) -> Result<f64> {
    let f = |log_n: f64| continuum_rate(10f64.powf(log_n), dimension, lc, omega, mode, k);
    let (mut lo, mut hi) = (2f64.log10(), 300.0);
    if f(lo)? >= target {
        return Ok(2.0);
    }
    if f(hi)? < target {
        return Ok(f64::INFINITY);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(hi))
}

fn continuum_formula(mode: ChannelMode, dimension: usize) -> String {
    format!("continuum.{}.{}D", quantity_for(mode).formula_id(), dimension)
}

/// Every headline estimate, one claim each, computed under both conventions
/// and both channel modes where the mode matters.
pub fn headline_report() -> Result<HeadlineReport> {
    headline_report_with(&CODATA_2018)
}

pub fn headline_report_with(k: &PhysicalConstants) -> Result<HeadlineReport> {
    let conventions = FrequencyConvention::ALL;
    let direct = FrequencyConvention::Direct;
    let mut claims = Vec::new();

    let pair_half_rate = |conv: FrequencyConvention| -> Result<f64> {
        let w = apply_convention(OPTICAL_OMEGA, conv)?;
        let a = ClockSpec::new(w, [0.0; 3]);
        let b = ClockSpec::new(w, [TWO_CLOCK_SEPARATION, 0.0, 0.0]);
        Ok(pair_interaction_rate(&a, &b, k)?.0 / 2.0)
    };

    let mut c = ClaimBuilder::new(
        "two-clock-300nm",
        "coupled-clocks",
        "minimum dephasing g12/2 of two optical clocks 300 nm apart",
        1e-42,
        "Hz",
        Some(10.0),
    );
    for conv in conventions {
        // both modes reduce to g/2 for a pair
        c.row(conv, "n/a", None, "pairwise.free", pair_half_rate(conv)?, conv == direct);
    }
    claims.push(c.finish());

    let mut c = ClaimBuilder::new(
        "fractional-uncertainty",
        "coupled-clocks",
        "(g12/2)/omega needed to resolve the two-clock dephasing",
        1e-57,
        "1",
        Some(10.0),
    );
    for conv in conventions {
        let w = apply_convention(OPTICAL_OMEGA, conv)?.0;
        c.row(conv, "n/a", None, "pairwise.free/omega", pair_half_rate(conv)? / w, conv == direct);
    }
    claims.push(c.finish());

    let mut c = ClaimBuilder::new(
        "lattice-1e6-800nm",
        "multiparticle",
        "center-clock free-rate minimum for 1e6 optical clocks at 800 nm spacing",
        1e-40,
        "Hz",
        Some(100.0),
    );
    for conv in conventions {
        let w = apply_convention(OPTICAL_OMEGA, conv)?.0;
        for dim in 1..=3 {
            for mode in ChannelMode::ALL {
                let v = continuum_rate(LATTICE_CLOCKS, dim, LATTICE_SPACING, w, mode, k)?;
                c.row(conv, mode.as_str(), Some(dim), &continuum_formula(mode, dim), v, conv == direct && dim == 2);
            }
        }
    }
    claims.push(c.finish());

    let mut c = ClaimBuilder::new(
        "large-n-1e23-1fm",
        "multiparticle",
        "1e23 clocks at 1 fm spacing with a 1e26 Hz transition (3D)",
        1.0,
        "Hz",
        None,
    );
    for conv in conventions {
        let w = apply_convention(NUCLEAR_OMEGA, conv)?.0;
        for mode in ChannelMode::ALL {
            let v = continuum_rate(NUCLEAR_CLOCKS, 3, NUCLEAR_SPACING, w, mode, k)?;
            c.row(conv, mode.as_str(), Some(3), &continuum_formula(mode, 3), v, false);
        }
    }
    claims.push(c.finish());

    let mut c = ClaimBuilder::new(
        "mossbauer-linewidth",
        "multiparticle",
        "gamma-line broadening for one mole of atoms at 1 angstrom spacing (3D)",
        1e-11,
        "Hz",
        None,
    );
    for conv in conventions {
        let w = apply_convention(MOSSBAUER_OMEGA, conv)?.0;
        for mode in ChannelMode::ALL {
            let v = continuum_rate(MOSSBAUER_ATOMS, 3, MOSSBAUER_SPACING, w, mode, k)?;
            c.row(conv, mode.as_str(), Some(3), &continuum_formula(mode, 3), v, false);
        }
    }
    claims.push(c.finish());

    let mut c = ClaimBuilder::new(
        "mossbauer-atoms-for-mhz",
        "multiparticle",
        "number of atoms for a 1 mHz gamma-line broadening (3D)",
        1e36,
        "atoms",
        None,
    );
    for conv in conventions {
        let w = apply_convention(MOSSBAUER_OMEGA, conv)?.0;
        for mode in ChannelMode::ALL {
            let v = clocks_for_rate(OBSERVABLE_RATE, 3, MOSSBAUER_SPACING, w, mode, k)?;
            c.row(conv, mode.as_str(), Some(3), &format!("inverse.{}", continuum_formula(mode, 3)), v, false);
        }
    }
    claims.push(c.finish());

    let mut gi = ClaimBuilder::new(
        "earth-gamma-i-bound",
        "redshift",
        "lower bound on the Earth's position-measurement rate from unobserved dephasing",
        10.0,
        "Hz m^-2",
        Some(3.0),
    );
    let mut gz = ClaimBuilder::new(
        "earth-gamma-z-bound",
        "redshift",
        "upper bound on the clock measurement rate from unobserved dephasing",
        1e-4,
        "Hz",
        Some(2.0),
    );
    for conv in conventions {
        let w = apply_convention(OPTICAL_OMEGA, conv)?;
        let (gamma_i, gamma_z) =
            bound_parameters(Rate(OBSERVED_DEPHASING_CAP), EARTH_MASS, EARTH_RADIUS, w, k)?;
        gi.row(conv, "global", None, "redshift.bound.gamma_i", gamma_i.0, conv == direct);
        gz.row(conv, "global", None, "redshift.bound.gamma_z", gamma_z.0, conv == direct);
    }
    claims.push(gi.finish());
    claims.push(gz.finish());

    Ok(HeadlineReport { constants: *k, claims })
}

/// Tidy long-format plot table: one row per (sweep, N). An empty slice
/// yields only the header.
pub fn write_plot_data<W: Write>(sweeps: &[ScalingSweep], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "N",
        "D",
        "mode",
        "case",
        "convention",
        "formula_id",
        "rate",
        "fit_model",
        "fit_param",
    ])?;
    for s in sweeps {
        for r in &s.rows {
            w.write_record([
                r.n.to_string(),
                s.dimension.to_string(),
                s.quantity.mode().to_string(),
                s.quantity.case().to_string(),
                s.convention.to_string(),
                s.quantity.formula_id().to_string(),
                format!("{:e}", r.rate_hz),
                s.fit.model.to_string(),
                format!("{:e}", s.fit.parameter),
            ])?;
        }
    }
    w.flush().map_err(|e| crate::Error::Io {
        path: "<plot data>".into(),
        source: e,
    })?;
    Ok(())
}
