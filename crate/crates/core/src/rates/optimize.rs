//! Numerical minimization of the summed dephasing over the channel's free
//! measurement rates.
//!
//! Every Γ enters the objective Σ_i D_i either linearly or inversely, so the
//! objective collects into Σ_p (A_p Γ_p + B_p / Γ_p). The coefficients are
//! gathered term by term from the dephasing formulas. Parameters live in log
//! space (Γ = e^θ) which keeps them positive without constraints; each
//! coordinate then takes damped Newton steps on a function that is convex in θ.

use serde::{Deserialize, Serialize};

use super::{dephasing_given_rates, ChannelMode, DephasingReport, MeasurementRates, RateCase};
use crate::error::{Error, Result};
use crate::geometry::PairRateMatrix;
use crate::summation::compensated_sum;

/// Which Γ are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizeMode {
    /// One Γ_ij per ordered pair.
    Pairwise,
    /// One Γ_i per clock.
    Global,
    /// A single Γ shared by every channel of the given topology.
    FixedScalar(ChannelMode),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    /// Stop once the relative objective change over a sweep falls below this...
    pub objective_tolerance: f64,
    /// ...and the largest log-space step is below this.
    pub step_tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            objective_tolerance: 1e-10,
            step_tolerance: 1e-12,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateOptimum {
    pub rates: MeasurementRates,
    /// Per-clock dephasing at the argmin, evaluated through the master-equation
    /// coefficients.
    pub report: DephasingReport,
    /// Σ_i D_i at the argmin.
    pub objective: f64,
    pub sweeps: usize,
}

/// Objective in the form Σ_p (linear[p]·Γ_p + inverse[p]/Γ_p).
struct Posynomial {
    linear: Vec<f64>,
    inverse: Vec<f64>,
}

impl Posynomial {
    fn build(g: &PairRateMatrix, mode: OptimizeMode) -> Self {
        let n = g.n();
        let count = match mode {
            OptimizeMode::Pairwise => n * n,
            OptimizeMode::Global => n,
            OptimizeMode::FixedScalar(_) => 1,
        };
        let mut linear = vec![0.0; count];
        let mut inverse = vec![0.0; count];
        let mut add = |linear_at: usize, inverse_at: usize, g2: f64| {
            linear[linear_at] += 0.5;
            inverse[inverse_at] += g2 / 8.0;
        };
        match mode {
            // D_i ⊃ Γ_ij/2 + g_ij²/(8Γ_ji)
            OptimizeMode::Pairwise | OptimizeMode::FixedScalar(ChannelMode::Pairwise) => {
                let scalar = matches!(mode, OptimizeMode::FixedScalar(_));
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        let gij = g.get(i, j);
                        let (ij, ji) = if scalar { (0, 0) } else { (i * n + j, j * n + i) };
                        add(ij, ji, gij * gij);
                    }
                }
            }
            // D_i ⊃ Γ_i/2 + Σ_j g_ij²/(8Γ_j)
            OptimizeMode::Global | OptimizeMode::FixedScalar(ChannelMode::Global) => {
                let scalar = matches!(mode, OptimizeMode::FixedScalar(_));
                for i in 0..n {
                    let own = if scalar { 0 } else { i };
                    linear[own] += 0.5;
                    for j in (0..n).filter(|&j| j != i) {
                        let gij = g.get(i, j);
                        inverse[if scalar { 0 } else { j }] += gij * gij / 8.0;
                    }
                }
            }
        }
        Self { linear, inverse }
    }

    fn active(&self, p: usize) -> bool {
        self.linear[p] != 0.0 || self.inverse[p] != 0.0
    }

    fn value(&self, theta: &[f64]) -> f64 {
        compensated_sum(
            (0..theta.len())
                .filter(|&p| self.active(p))
                .map(|p| self.linear[p] * theta[p].exp() + self.inverse[p] * (-theta[p]).exp()),
        )
    }
}

fn to_rates(g: &PairRateMatrix, mode: OptimizeMode, theta: &[f64]) -> MeasurementRates {
    let n = g.n();
    match mode {
        OptimizeMode::Pairwise => MeasurementRates::Pairwise(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { theta[i * n + j].exp() }).collect())
                .collect(),
        ),
        OptimizeMode::Global => MeasurementRates::Global(theta.iter().map(|t| t.exp()).collect()),
        OptimizeMode::FixedScalar(channel) => MeasurementRates::uniform(channel, n, theta[0].exp()),
    }
}

/// Minimize Σ_i D_i over the free measurement rates of `mode`.
pub fn optimize_rates(g: &PairRateMatrix, mode: OptimizeMode) -> Result<RateOptimum> {
    optimize_rates_with(g, mode, OptimizerSettings::default())
}

pub fn optimize_rates_with(
    g: &PairRateMatrix,
    mode: OptimizeMode,
    settings: OptimizerSettings,
) -> Result<RateOptimum> {
    let n = g.n();
    if n < 2 {
        return Err(Error::invalid("rate optimization needs at least two clocks"));
    }
    let objective = Posynomial::build(g, mode);

    // Start every parameter at the geometric mean of the couplings.
    let positive: Vec<f64> = g.as_slice().iter().copied().filter(|v| *v > 0.0).collect();
    let start = if positive.is_empty() {
        0.0
    } else {
        positive.iter().map(|v| v.ln()).sum::<f64>() / positive.len() as f64
    };
    let mut theta = vec![start; objective.linear.len()];
    let mut value = objective.value(&theta);

    for sweep in 1..=settings.max_sweeps {
        let mut max_step: f64 = 0.0;
        for p in 0..theta.len() {
            if !objective.active(p) {
                continue;
            }
            let up = objective.linear[p] * theta[p].exp();
            let down = objective.inverse[p] * (-theta[p]).exp();
            let step = (up - down) / (up + down);
            theta[p] -= step;
            max_step = max_step.max(step.abs());
        }
        let next = objective.value(&theta);
        let change = (value - next).abs() / next.abs().max(f64::MIN_POSITIVE);
        value = next;
        if !value.is_finite() {
            break;
        }
        if change < settings.objective_tolerance && max_step < settings.step_tolerance {
            let rates = to_rates(g, mode, &theta);
            let mut report = dephasing_given_rates(g, &rates)?;
            report.case = match mode {
                OptimizeMode::FixedScalar(_) => RateCase::BFixed,
                _ => RateCase::AFree,
            };
            report.formula_id = format!("optimizer/{}", report.formula_id);
            let objective = report.total();
            return Ok(RateOptimum {
                rates,
                report,
                objective,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_sweeps,
        best_objective: value,
        best_parameters: theta.iter().map(|t| t.exp()).collect(),
    })
}
