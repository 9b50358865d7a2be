//! Per-clock dephasing rates.
//!
//! Two feedback topologies are supported. With pairwise feedback every ordered
//! pair (i, j) has its own measurement rate Γ_ij and clock i dephases at
//!
//! ```text
//! D_i = Σ_{j≠i} ( Γ_ij/2 + g_ij² / (8 Γ_ji) )
//! ```
//!
//! With global feedback clock i is measured once at rate Γ_i and the record
//! is broadcast to every other clock:
//!
//! ```text
//! D_i = Γ_i/2 + Σ_{j≠i} g_ij² / (8 Γ_j)
//! ```
//!
//! The closed-form minima are evaluated from a single row of the pair-rate
//! matrix so that they also work for lattices far too large to store N×N.

mod optimize;

pub use optimize::{optimize_rates, OptimizeMode, OptimizerSettings, RateOptimum};

use std::fmt;
use std::io::Write;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::constants::{FrequencyConvention, Rate};
use crate::error::{Error, Result};
use crate::geometry::PairRateMatrix;
use crate::summation::compensated_sum;

/// Feedback topology of the classical channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Pairwise,
    Global,
}

impl ChannelMode {
    pub const ALL: [ChannelMode; 2] = [ChannelMode::Pairwise, ChannelMode::Global];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::Pairwise => "pairwise",
            ChannelMode::Global => "global",
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the measurement rates entering a report were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub enum RateCase {
    /// Every Γ free and minimized.
    #[serde(rename = "A-free")]
    AFree,
    /// One fixed Γ shared by every channel.
    #[serde(rename = "B-fixed")]
    BFixed,
    #[serde(rename = "given-rates")]
    GivenRates,
}

impl RateCase {
    pub fn as_str(self) -> &'static str {
        match self {
            RateCase::AFree => "A-free",
            RateCase::BFixed => "B-fixed",
            RateCase::GivenRates => "given-rates",
        }
    }
}

impl fmt::Display for RateCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Free parameters of the channel.
///
/// Pairwise entry `[i][j]` is the rate of the measurement of clock i that
/// drives feedback on clock j; `[i][j]` and `[j][i]` are independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasurementRates {
    Pairwise(Vec<Vec<f64>>),
    Global(Vec<f64>),
}

impl MeasurementRates {
    pub fn mode(&self) -> ChannelMode {
        match self {
            MeasurementRates::Pairwise(_) => ChannelMode::Pairwise,
            MeasurementRates::Global(_) => ChannelMode::Global,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MeasurementRates::Pairwise(m) => m.len(),
            MeasurementRates::Global(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same Γ on every channel.
    pub fn uniform(mode: ChannelMode, n: usize, gamma: f64) -> Self {
        match mode {
            ChannelMode::Pairwise => MeasurementRates::Pairwise(
                (0..n)
                    .map(|i| (0..n).map(|j| if i == j { 0.0 } else { gamma }).collect())
                    .collect(),
            ),
            ChannelMode::Global => MeasurementRates::Global(vec![gamma; n]),
        }
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        let bad = |entry: String, value: f64| Error::NonPositiveRate { entry, value };
        match self {
            MeasurementRates::Pairwise(m) => {
                if m.len() != n || m.iter().any(|row| row.len() != n) {
                    return Err(Error::invalid(format!(
                        "pairwise measurement rates must be {n}x{n}"
                    )));
                }
                for (i, row) in m.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        if i != j && !(v.is_finite() && v > 0.0) {
                            return Err(bad(format!("Gamma[{i}][{j}]"), v));
                        }
                    }
                }
            }
            MeasurementRates::Global(v) => {
                if v.len() != n {
                    return Err(Error::invalid(format!(
                        "global measurement rates must have {n} entries, got {}",
                        v.len()
                    )));
                }
                for (i, &x) in v.iter().enumerate() {
                    if !(x.is_finite() && x > 0.0) {
                        return Err(bad(format!("Gamma[{i}]"), x));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-clock dephasing rates plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingReport {
    pub per_clock: Vec<Rate>,
    pub mode: ChannelMode,
    pub case: RateCase,
    pub convention: FrequencyConvention,
    pub formula_id: String,
}

impl DephasingReport {
    pub fn total(&self) -> f64 {
        compensated_sum(self.per_clock.iter().map(|r| r.0))
    }

    pub fn values(&self) -> Vec<f64> {
        self.per_clock.iter().map(|r| r.0).collect()
    }

    /// CSV with one row per clock.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "rate_hz", "mode", "case", "convention", "formula_id"])?;
        for (i, r) in self.per_clock.iter().enumerate() {
            w.write_record([
                i.to_string(),
                format!("{:e}", r.0),
                self.mode.to_string(),
                self.case.to_string(),
                self.convention.to_string(),
                self.formula_id.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Per-clock dephasing for explicitly chosen measurement rates.
pub fn dephasing_given_rates(g: &PairRateMatrix, rates: &MeasurementRates) -> Result<DephasingReport> {
    let n = g.n();
    rates.check(n)?;
    let per_clock: Vec<Rate> = match rates {
        MeasurementRates::Pairwise(gamma) => (0..n)
            .map(|i| {
                let terms = (0..n).filter(|&j| j != i).map(|j| {
                    let gij = g.get(i, j);
                    gamma[i][j] / 2.0 + gij * gij / (8.0 * gamma[j][i])
                });
                Rate(compensated_sum(terms))
            })
            .collect(),
        MeasurementRates::Global(gamma) => (0..n)
            .map(|i| {
                let feedback = (0..n).filter(|&j| j != i).map(|j| {
                    let gij = g.get(i, j);
                    gij * gij / (8.0 * gamma[j])
                });
                Rate(gamma[i] / 2.0 + compensated_sum(feedback))
            })
            .collect(),
    };
    Ok(DephasingReport {
        per_clock,
        mode: rates.mode(),
        case: RateCase::GivenRates,
        convention: g.convention(),
        formula_id: match rates.mode() {
            ChannelMode::Pairwise => "eq-pairwise:sum_j(G_ij/2+g_ij^2/(8G_ji))".into(),
            ChannelMode::Global => "eq-global:G_i/2+sum_j g_ij^2/(8G_j)".into(),
        },
    })
}

/// ½ Σ_j g_ij over one row (diagonal entries, if present, must be zero).
pub fn pairwise_a_rate(row: &[f64]) -> f64 {
    0.5 * compensated_sum(row.iter().copied())
}

/// ½ √(Σ_j g_ij²).
pub fn global_a_rate(row: &[f64]) -> f64 {
    0.5 * compensated_sum(row.iter().map(|g| g * g)).sqrt()
}

/// (√(N−1)/2) √(Σ_j g_ij²).
pub fn pairwise_b_rate(row: &[f64], n: usize) -> f64 {
    ((n - 1) as f64).sqrt() * global_a_rate(row)
}

fn off_diagonal_row(g: &PairRateMatrix, i: usize) -> Vec<f64> {
    g.row(i)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect()
}

fn inverse_distance_powers(g: &PairRateMatrix, i: usize, alpha: i32) -> Option<f64> {
    let n = g.n();
    let mut terms = Vec::with_capacity(n.saturating_sub(1));
    for j in (0..n).filter(|&j| j != i) {
        terms.push(g.distance(i, j)?.powi(-alpha));
    }
    Some(compensated_sum(terms))
}

/// Which route a closed form took: the ω² prefactor times an inverse-distance
/// sum (equal frequencies), or the general g-matrix form.
fn closed_form<F, G>(g: &PairRateMatrix, tag: &str, via_distances: F, via_couplings: G) -> (Vec<Rate>, String)
where
    F: Fn(f64, usize) -> Option<f64>,
    G: Fn(&[f64]) -> f64,
{
    let n = g.n();
    if let Some(prefactor) = g.closed_form_prefactor() {
        let values: Option<Vec<Rate>> = (0..n).map(|i| via_distances(prefactor, i).map(Rate)).collect();
        if let Some(values) = values {
            return (values, tag.to_string());
        }
    }
    let values = (0..n).map(|i| Rate(via_couplings(&off_diagonal_row(g, i)))).collect();
    (values, format!("{tag}.general"))
}

/// Pairwise feedback with every Γ_ij free: Γ_ij = Γ_ji = g_ij/2 and
/// D_i = ½ Σ_j g_ij.
pub fn min_dephasing_pairwise_a(g: &PairRateMatrix) -> (DephasingReport, MeasurementRates) {
    let n = g.n();
    let (per_clock, formula_id) = closed_form(
        g,
        "pairwise.free",
        |p, i| inverse_distance_powers(g, i, 1).map(|s| p * s),
        pairwise_a_rate,
    );
    let rates = MeasurementRates::Pairwise(
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { g.get(i, j) / 2.0 }).collect())
            .collect(),
    );
    let report = DephasingReport {
        per_clock,
        mode: ChannelMode::Pairwise,
        case: RateCase::AFree,
        convention: g.convention(),
        formula_id,
    };
    (report, rates)
}

/// Global feedback with every Γ_i free: Γ_i = ½√(Σ_j g_ij²).
///
/// The reported per-clock value is ½√(Σ_j g_ij²), the cost attributed to
/// clock i's own channel (its measurement back-action plus the feedback noise
/// it spreads). These sum to the minimal total dephasing. The dephasing
/// *experienced* by clock i at this optimum, from [`dephasing_given_rates`],
/// equals it element-wise only when Σ_j g_ij²/√S_j = √S_i for every i (for
/// example N = 2 or any geometry where every clock sees the same S).
pub fn min_dephasing_global_a(g: &PairRateMatrix) -> (DephasingReport, MeasurementRates) {
    let n = g.n();
    let (per_clock, formula_id) = closed_form(
        g,
        "global.free",
        |p, i| inverse_distance_powers(g, i, 2).map(|s| p * s.sqrt()),
        global_a_rate,
    );
    let rates = MeasurementRates::Global(
        (0..n).map(|i| global_a_rate(&off_diagonal_row(g, i))).collect(),
    );
    let report = DephasingReport {
        per_clock,
        mode: ChannelMode::Global,
        case: RateCase::AFree,
        convention: g.convention(),
        formula_id,
    };
    (report, rates)
}

/// Fixed Γ shared by every pairwise channel.
///
/// Per clock, (√(N−1)/2)√(Σ_j g_ij²) is the least dephasing clock i can see
/// for any single Γ. The returned Γ minimizes the summed dephasing,
/// Γ² = Σ_ij g_ij² / (4N(N−1)); the two coincide when every clock sees the
/// same Σ_j g_ij².
pub fn min_dephasing_pairwise_b(g: &PairRateMatrix) -> Result<(DephasingReport, Rate)> {
    let n = g.n();
    if n < 2 {
        return Err(Error::invalid("the fixed-rate pairwise minimum needs N >= 2"));
    }
    let root = ((n - 1) as f64).sqrt();
    let (per_clock, formula_id) = closed_form(
        g,
        "pairwise.fixed",
        |p, i| inverse_distance_powers(g, i, 2).map(|s| root * p * s.sqrt()),
        |row| pairwise_b_rate(row, n),
    );
    let report = DephasingReport {
        per_clock,
        mode: ChannelMode::Pairwise,
        case: RateCase::BFixed,
        convention: g.convention(),
        formula_id,
    };
    Ok((report, Rate(fixed_gamma(g, ChannelMode::Pairwise))))
}

/// Fixed Γ shared by every global channel. Per clock the bound is the same
/// ½√(Σ_j g_ij²) as the free global minimum.
pub fn min_dephasing_global_b(g: &PairRateMatrix) -> Result<(DephasingReport, Rate)> {
    if g.n() < 2 {
        return Err(Error::invalid("the fixed-rate global minimum needs N >= 2"));
    }
    let (per_clock, formula_id) = closed_form(
        g,
        "global.fixed",
        |p, i| inverse_distance_powers(g, i, 2).map(|s| p * s.sqrt()),
        global_a_rate,
    );
    let report = DephasingReport {
        per_clock,
        mode: ChannelMode::Global,
        case: RateCase::BFixed,
        convention: g.convention(),
        formula_id,
    };
    Ok((report, Rate(fixed_gamma(g, ChannelMode::Global))))
}

/// Single Γ minimizing the summed dephasing, from the stationarity condition
/// of AΓ + B/Γ.
fn fixed_gamma(g: &PairRateMatrix, mode: ChannelMode) -> f64 {
    let n = g.n() as f64;
    let sum_sq = compensated_sum(g.as_slice().iter().map(|v| v * v));
    let channels = match mode {
        ChannelMode::Pairwise => n * (n - 1.0),
        ChannelMode::Global => n,
    };
    (sum_sq / (4.0 * channels)).sqrt()
}
