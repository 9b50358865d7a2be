//! Lattice sums Σ_j d_ij^(−α), their integral approximations, and scaling-law
//! fits of the resulting dephasing rates against N.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{AngularFrequency, FrequencyConvention, PhysicalConstants};
use crate::error::{Error, Result};
use crate::geometry::{build_lattice, distance, ClockArray};
use crate::rates::{ChannelMode, RateCase};
use crate::summation::CompensatedSum;

/// Solid-angle factor for a D-dimensional array: 1, 2π, 4π.
pub fn solid_angle(dimension: usize) -> Result<f64> {
    match dimension {
        1 => Ok(1.0),
        2 => Ok(2.0 * PI),
        3 => Ok(4.0 * PI),
        d => Err(Error::invalid(format!("dimension must be 1, 2 or 3, got {d}"))),
    }
}

/// (S_D / L_c^D) ∫_{L_c}^{R} r^(D−1−α) dr with R = N^(1/D) L_c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuumEstimate {
    pub dimension: usize,
    pub alpha: f64,
    pub solid_angle: f64,
    pub lattice_constant: f64,
    pub radius: f64,
    pub value: f64,
}

/// ∫_{L}^{R} r^(p−1) dr, written so that p → 0 goes smoothly into ln(R/L).
fn radial_integral(p: f64, lc: f64, radius: f64) -> f64 {
    let log_ratio = (radius / lc).ln();
    if p == 0.0 {
        log_ratio
    } else {
        lc.powf(p) * (p * log_ratio).exp_m1() / p
    }
}

fn estimate(n: f64, dimension: usize, lc: f64, alpha: f64) -> Result<ContinuumEstimate> {
    let s = solid_angle(dimension)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if !(lc > 0.0 && lc.is_finite()) {
        return Err(Error::invalid(format!("lattice constant must be positive, got {lc}")));
    }
    if !(n >= 1.0 && n.is_finite()) {
        return Err(Error::invalid(format!("clock count must be finite and >= 1, got {n}")));
    }
    let radius = n.powf(1.0 / dimension as f64) * lc;
    let value = s / lc.powi(dimension as i32) * radial_integral(dimension as f64 - alpha, lc, radius);
    Ok(ContinuumEstimate {
        dimension,
        alpha,
        solid_angle: s,
        lattice_constant: lc,
        radius,
        value,
    })
}

/// Integral estimate of Σ_j d_ij^(−α) for a clock at the center of an array
/// of `n` clocks. `n` is a float so that counts such as 10²³ can be used.
pub fn continuum_sum(n: f64, dimension: usize, lc: f64, alpha: f64) -> Result<ContinuumEstimate> {
    if n < 2.0 {
        return Err(Error::invalid(format!("continuum sum needs N >= 2, got {n}")));
    }
    estimate(n, dimension, lc, alpha)
}

/// Two-sided chain estimate for a clock with `left` and `right` neighbours.
/// Each half-chain is treated as a one-sided array that includes the clock
/// itself, so a clock at one end contributes nothing from the empty side.
pub fn continuum_sum_chain(left: usize, right: usize, lc: f64, alpha: f64) -> Result<f64> {
    let l = estimate(left as f64 + 1.0, 1, lc, alpha)?.value;
    let r = estimate(right as f64 + 1.0, 1, lc, alpha)?.value;
    Ok(l + r)
}

const CHUNK: usize = 4096;

/// Σ_{j≠i} d_ij^(−α) by direct compensated summation.
///
/// Chunks are summed in parallel and merged in index order, so the result
/// does not depend on the thread count.
pub fn lattice_sum_exact(array: &ClockArray, center: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let clocks = array.clocks();
    if center >= clocks.len() {
        return Err(Error::invalid(format!(
            "clock index {center} out of range for {} clocks",
            clocks.len()
        )));
    }
    let p = clocks[center].position;
    let partials: Vec<CompensatedSum> = clocks
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(chunk, slice)| {
            let mut acc = CompensatedSum::new();
            for (k, c) in slice.iter().enumerate() {
                if chunk * CHUNK + k != center {
                    acc.add(distance(&p, &c.position).powf(-alpha));
                }
            }
            acc
        })
        .collect();
    let mut total = CompensatedSum::new();
    for part in partials {
        total.merge(part);
    }
    Ok(total.value())
}

/// Continuum estimate matching the center clock of a lattice array.
pub fn continuum_for_lattice(array: &ClockArray, alpha: f64) -> Result<f64> {
    let lattice = array
        .lattice()
        .ok_or_else(|| Error::invalid("sum-vs-integral comparison needs lattice metadata"))?;
    let n = lattice.count();
    if n < 2 {
        return Err(Error::invalid("sum-vs-integral comparison needs N >= 2"));
    }
    let lc = lattice.lattice_constant;
    if lattice.dimension == 1 {
        let i = array.center_index();
        continuum_sum_chain(i, n - 1 - i, lc, alpha)
    } else {
        Ok(continuum_sum(n as f64, lattice.dimension, lc, alpha)?.value)
    }
}

/// Exact center-clock sum divided by its continuum estimate.
pub fn compare_sum_vs_integral(array: &ClockArray, alpha: f64) -> Result<f64> {
    let integral = continuum_for_lattice(array, alpha)?;
    let exact = lattice_sum_exact(array, array.center_index(), alpha)?;
    Ok(exact / integral)
}

/// Candidate N-dependence of a rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingModel {
    /// y = a N^p; parameter p.
    PowerLaw,
    /// y = a + b ln N; parameter b.
    LogLaw,
    /// y² = a + b ln N; parameter b.
    SqrtLogLaw,
    /// y² = a + b/N; parameter b/a (−2 for √(1 − 2/N)).
    Saturating,
    /// y² = N (a + b ln N); parameter b/a.
    SqrtNLogN,
}

impl ScalingModel {
    pub const ALL: [ScalingModel; 5] = [
        ScalingModel::PowerLaw,
        ScalingModel::LogLaw,
        ScalingModel::SqrtLogLaw,
        ScalingModel::Saturating,
        ScalingModel::SqrtNLogN,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScalingModel::PowerLaw => "power-law",
            ScalingModel::LogLaw => "log-law",
            ScalingModel::SqrtLogLaw => "sqrt-log-law",
            ScalingModel::Saturating => "saturating",
            ScalingModel::SqrtNLogN => "sqrt-n-log-n",
        }
    }
}

impl fmt::Display for ScalingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: ScalingModel,
    pub parameter: f64,
    /// Relative RMS deviation of the fitted curve from the data, in y.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub parameter: f64,
    pub residual: f64,
    /// Every candidate, best first.
    pub ranking: Vec<ModelFit>,
}

/// A structured alternative must beat the power law's residual by this
/// factor to be selected.
pub const SELECTION_MARGIN: f64 = 3.0;

/// Least-squares line t = c0 + c1 x.
fn line_fit(x: &[f64], t: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxt: f64 = x.iter().zip(t).map(|(a, b)| (a - mx) * (b - mt)).sum();
    let c1 = if sxx > 0.0 { sxt / sxx } else { 0.0 };
    (mt - c1 * mx, c1)
}

fn fit_model(model: ScalingModel, n: &[f64], y: &[f64]) -> ModelFit {
    let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
    let root = |v: f64| v.max(0.0).sqrt();
    let (parameter, predicted): (f64, Vec<f64>) = match model {
        ScalingModel::PowerLaw => {
            let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
            let (a, p) = line_fit(&ln_n, &ln_y);
            (p, ln_n.iter().map(|l| (a + p * l).exp()).collect())
        }
        ScalingModel::LogLaw => {
            let (a, b) = line_fit(&ln_n, y);
            (b, ln_n.iter().map(|l| a + b * l).collect())
        }
        ScalingModel::SqrtLogLaw => {
            let (a, b) = line_fit(&ln_n, &sq);
            (b, ln_n.iter().map(|l| root(a + b * l)).collect())
        }
        ScalingModel::Saturating => {
            let inv: Vec<f64> = n.iter().map(|v| 1.0 / v).collect();
            let (a, b) = line_fit(&inv, &sq);
            (b / a, inv.iter().map(|x| root(a + b * x)).collect())
        }
        ScalingModel::SqrtNLogN => {
            let per: Vec<f64> = sq.iter().zip(n).map(|(s, v)| s / v).collect();
            let (a, b) = line_fit(&ln_n, &per);
            (
                b / a,
                ln_n.iter().zip(n).map(|(l, v)| root(v * (a + b * l))).collect(),
            )
        }
    };
    let mean_sq = predicted
        .iter()
        .zip(y)
        .map(|(p, v)| ((p - v) / v).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    ModelFit {
        model,
        parameter,
        residual: mean_sq.sqrt(),
    }
}

/// Fit every candidate model to (N, rate) points and pick the best.
///
/// The power law is the default; a structured alternative replaces it only
/// when its residual is smaller by [`SELECTION_MARGIN`].
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientSpan(format!("got {} points", points.len())));
    }
    if let Some((n, y)) = points.iter().find(|(n, y)| !(*n >= 1.0 && n.is_finite() && *y > 0.0 && y.is_finite())) {
        return Err(Error::invalid(format!("scaling points need N >= 1 and rate > 0, got ({n}, {y})")));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi / lo < 100.0 {
        return Err(Error::InsufficientSpan(format!("N spans {lo}..{hi}")));
    }
    let n: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut ranking: Vec<ModelFit> = ScalingModel::ALL.iter().map(|&m| fit_model(m, &n, &y)).collect();
    ranking.sort_by(|a, b| a.residual.total_cmp(&b.residual));

    let power = *ranking.iter().find(|f| f.model == ScalingModel::PowerLaw).unwrap();
    let alternative = ranking.iter().find(|f| f.model != ScalingModel::PowerLaw).copied().unwrap();
    let best = if alternative.residual * SELECTION_MARGIN < power.residual {
        alternative
    } else {
        power
    };
    Ok(ScalingFit {
        model: best.model,
        parameter: best.parameter,
        residual: best.residual,
        ranking,
    })
}

/// Which closed-form minimum a sweep tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepQuantity {
    /// Pairwise, all Γ free: P Σ d⁻¹.
    PairwiseFree,
    /// Global, all Γ free: P √(Σ d⁻²).
    GlobalFree,
    /// Pairwise, one fixed Γ: √(N−1) P √(Σ d⁻²).
    PairwiseFixed,
}

impl SweepQuantity {
    pub const ALL: [SweepQuantity; 3] =
        [SweepQuantity::PairwiseFree, SweepQuantity::GlobalFree, SweepQuantity::PairwiseFixed];

    pub fn alpha(self) -> f64 {
        match self {
            SweepQuantity::PairwiseFree => 1.0,
            _ => 2.0,
        }
    }

    pub fn mode(self) -> ChannelMode {
        match self {
            SweepQuantity::GlobalFree => ChannelMode::Global,
            _ => ChannelMode::Pairwise,
        }
    }

    pub fn case(self) -> RateCase {
        match self {
            SweepQuantity::PairwiseFixed => RateCase::BFixed,
            _ => RateCase::AFree,
        }
    }

    pub fn formula_id(self) -> &'static str {
        match self {
            SweepQuantity::PairwiseFree => "pairwise.free",
            SweepQuantity::GlobalFree => "global.free",
            SweepQuantity::PairwiseFixed => "pairwise.fixed",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepQuantity::PairwiseFree => "pairwise-free",
            SweepQuantity::GlobalFree => "global-free",
            SweepQuantity::PairwiseFixed => "pairwise-fixed",
        }
    }

    /// Dephasing rate from the lattice sum of the matching power.
    pub fn rate(self, prefactor: f64, lattice_sum: f64, n: f64) -> f64 {
        match self {
            SweepQuantity::PairwiseFree => prefactor * lattice_sum,
            SweepQuantity::GlobalFree => prefactor * lattice_sum.sqrt(),
            SweepQuantity::PairwiseFixed => (n - 1.0).sqrt() * prefactor * lattice_sum.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub exact_sum: f64,
    pub continuum_estimate: f64,
    pub ratio: f64,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSweep {
    pub dimension: usize,
    pub quantity: SweepQuantity,
    pub convention: FrequencyConvention,
    pub rows: Vec<SweepRow>,
    pub fit: ScalingFit,
}

impl ScalingSweep {
    /// Columns: N, exact_sum, continuum_estimate, ratio, fitted_model,
    /// parameter, rate_hz, then provenance (mode, case, convention,
    /// formula_id). The fit columns repeat on every row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "N",
            "exact_sum",
            "continuum_estimate",
            "ratio",
            "fitted_model",
            "parameter",
            "rate_hz",
            "mode",
            "case",
            "convention",
            "formula_id",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.exact_sum),
                format!("{:e}", r.continuum_estimate),
                format!("{:.6}", r.ratio),
                self.fit.model.to_string(),
                format!("{:.6}", self.fit.parameter),
                format!("{:e}", r.rate_hz),
                self.quantity.mode().to_string(),
                self.quantity.case().to_string(),
                self.convention.to_string(),
                self.quantity.formula_id().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Center-clock rates on odd-sided square/cubic lattices with the given side
/// lengths, plus the best-fitting scaling law.
pub fn scaling_sweep(
    dimension: usize,
    sides: &[usize],
    lattice_constant: f64,
    omega: AngularFrequency,
    quantity: SweepQuantity,
    constants: &PhysicalConstants,
) -> Result<ScalingSweep> {
    let prefactor = constants.rate_prefactor(omega);
    let alpha = quantity.alpha();
    let mut rows = Vec::with_capacity(sides.len());
    for &k in sides {
        if k % 2 == 0 {
            return Err(Error::invalid(format!("sweep side lengths must be odd so a center clock exists, got {k}")));
        }
        let array = build_lattice(dimension, lattice_constant, &vec![k; dimension], omega)?;
        let n = array.len();
        let exact_sum = lattice_sum_exact(&array, array.center_index(), alpha)?;
        let continuum_estimate = continuum_for_lattice(&array, alpha)?;
        rows.push(SweepRow {
            n,
            exact_sum,
            continuum_estimate,
            ratio: exact_sum / continuum_estimate,
            rate_hz: quantity.rate(prefactor, exact_sum, n as f64),
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.rate_hz)).collect();
    let fit = fit_scaling(&points)?;
    Ok(ScalingSweep {
        dimension,
        quantity,
        convention: FrequencyConvention::Direct,
        rows,
        fit,
    })
}

/// Odd side lengths used for the default sweeps: N from about 10 to 10⁵ in
/// 1D and 2D, and k from 5 to 41 in 3D.
pub fn default_sides(dimension: usize) -> Vec<usize> {
    match dimension {
        1 => vec![11, 21, 51, 101, 201, 501, 1001, 2001, 5001, 10001, 20001, 50001, 100001],
        2 => (5..=317).step_by(12).chain([317]).collect(),
        _ => (5..=41).step_by(4).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::CODATA_2018;
    use crate::geometry::ClockSpec;
    use proptest::prelude::*;

    const W: AngularFrequency = AngularFrequency(1e15);

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn chain(n: usize, lc: f64) -> ClockArray {
        build_lattice(1, lc, &[n], W).unwrap()
    }

    #[test]
    fn exact_sum_examples() {
        let d = 2.5e-7;
        assert!(rel(lattice_sum_exact(&chain(3, d), 1, 1.0).unwrap(), 2.0 / d) < 1e-15);

        for m in [5usize, 50, 50_000] {
            let harmonic: f64 = (1..=m).rev().map(|k| 1.0 / k as f64).sum();
            let s = lattice_sum_exact(&chain(2 * m + 1, 1.0), m, 1.0).unwrap();
            assert!(rel(s, 2.0 * harmonic) < 1e-14);
        }

        let lc = 3.0;
        let cube = build_lattice(3, lc, &[2, 2, 2], W).unwrap();
        let expected = (3.0 + 1.5 + 1.0 / 3.0) / (lc * lc);
        for corner in 0..8 {
            assert!(rel(lattice_sum_exact(&cube, corner, 2.0).unwrap(), expected) < 1e-15);
        }
        assert!(lattice_sum_exact(&cube, 8, 2.0).is_err());
        assert!(lattice_sum_exact(&cube, 0, 0.0).is_err());
    }

    #[test]
    fn exact_sum_is_deterministic_across_chunks() {
        // more clocks than one chunk, so several partial sums are merged
        let a = build_lattice(3, 1.0, &[21, 21, 21], W).unwrap();
        let c = a.center_index();
        let first = lattice_sum_exact(&a, c, 1.0).unwrap();
        for _ in 0..3 {
            assert_eq!(lattice_sum_exact(&a, c, 1.0).unwrap(), first);
        }
        let naive: f64 = a.distances_from(c).iter().map(|d| 1.0 / d).sum();
        assert!(rel(first, naive) < 1e-12);
    }

    #[test]
    fn continuum_examples() {
        let lc = 2.0;
        // 1D one-sided: (1/L) ln(R/L) = (1/L) ln N
        let e = continuum_sum(1000.0, 1, lc, 1.0).unwrap();
        assert!(rel(e.value, 1000f64.ln() / lc) < 1e-15);
        assert_eq!(e.solid_angle, 1.0);
        // two-sided with each side counting the clock
        let v = continuum_sum_chain(40, 60, lc, 1.0).unwrap();
        assert!(rel(v, (41.0f64 * 61.0).ln() / lc) < 1e-14);

        let n = 27_000.0;
        let e = continuum_sum(n, 3, lc, 2.0).unwrap();
        let r = 30.0 * lc;
        assert!(rel(e.radius, r) < 1e-14);
        assert!(rel(e.value, 4.0 * PI / lc.powi(3) * (r - lc)) < 1e-13);

        let e = continuum_sum(n, 3, lc, 4.0).unwrap();
        assert!(rel(e.value, 4.0 * PI / lc.powi(3) * (1.0 / lc - 1.0 / r)) < 1e-13);

        let e = continuum_sum(1e4, 2, lc, 2.0).unwrap();
        assert!(rel(e.value, 2.0 * PI / (lc * lc) * (100f64).ln()) < 1e-14);
        assert_eq!(e.solid_angle, 2.0 * PI);

        assert!(continuum_sum(1.0, 3, lc, 1.0).is_err());
        assert!(continuum_sum(10.0, 4, lc, 1.0).is_err());
        assert!(continuum_sum(10.0, 2, lc, -1.0).is_err());
    }

    #[test]
    fn continuum_handles_huge_n() {
        let e = continuum_sum(1e36, 3, 1e-10, 2.0).unwrap();
        assert!(e.value.is_finite() && e.value > 0.0);
        assert!(rel(e.radius, 1e12 * 1e-10) < 1e-12);
    }

    #[test]
    fn ratio_examples() {
        let r = compare_sum_vs_integral(&chain(100_001, 1e-6), 1.0).unwrap();
        assert!((0.5..=2.0).contains(&r), "{r}");
        let r = compare_sum_vs_integral(&build_lattice(3, 1e-6, &[21, 21, 21], W).unwrap(), 1.0).unwrap();
        assert!((0.3..=3.0).contains(&r), "{r}");
        let r = compare_sum_vs_integral(&chain(2, 1e-6), 1.0).unwrap();
        assert!(r.is_finite() && r > 0.0);
        assert!(rel(r, 1.0 / 2f64.ln()) < 1e-14);

        let plain = ClockArray::new(vec![ClockSpec::new(W, [0.0; 3]), ClockSpec::new(W, [1.0, 0.0, 0.0])]).unwrap();
        assert!(compare_sum_vs_integral(&plain, 1.0).is_err());
    }

    #[test]
    fn ratio_stays_order_one() {
        // N ≥ 100 in every dimension; α = 4 in 1D is handled separately below
        let arrays = [
            chain(101, 1.0),
            chain(10_001, 1.0),
            build_lattice(2, 1.0, &[11, 11], W).unwrap(),
            build_lattice(2, 1.0, &[101, 101], W).unwrap(),
            build_lattice(3, 1.0, &[5, 5, 5], W).unwrap(),
            build_lattice(3, 1.0, &[21, 21, 21], W).unwrap(),
        ];
        for a in &arrays {
            let dim = a.lattice().unwrap().dimension;
            for alpha in [1.0, 2.0, 4.0] {
                if dim == 1 && alpha == 4.0 {
                    continue;
                }
                let r = compare_sum_vs_integral(a, alpha).unwrap();
                assert!((1.0 / 3.0..=3.0).contains(&r), "D={dim} α={alpha} N={} ratio {r}", a.len());
            }
        }
    }

    #[test]
    fn chain_alpha_four_ratio_exceeds_three() {
        // The exact sum tends to 2ζ(4) = π⁴/45 while each half-integral tends
        // to 1/3, so the ratio approaches π⁴/30 ≈ 3.247 for every large N.
        let r = compare_sum_vs_integral(&chain(10_001, 1.0), 4.0).unwrap();
        assert!(rel(r, PI.powi(4) / 30.0) < 1e-6, "{r}");
        assert!(r > 3.0);
    }

    #[test]
    fn log_point_is_continuous() {
        for d in [1usize, 2, 3] {
            let a = d as f64;
            let at = continuum_sum(5000.0, d, 0.7, a).unwrap().value;
            for da in [-1e-6, 1e-6] {
                let near = continuum_sum(5000.0, d, 0.7, a + da).unwrap().value;
                assert!(rel(near, at) < 1e-4);
            }
        }
    }

    #[test]
    fn fit_recovers_synthetic_power_law() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1e3, 1e4, 1e5].iter().map(|&n: &f64| (n, 3.2 * n.powf(2.0 / 3.0))).collect();
        let f = fit_scaling(&pts).unwrap();
        assert_eq!(f.model, ScalingModel::PowerLaw);
        assert!((f.parameter - 2.0 / 3.0).abs() < 0.01);
        assert_eq!(f.ranking.len(), 5);
        assert!(f.ranking.windows(2).all(|w| w[0].residual <= w[1].residual));
    }

    #[test]
    fn fit_recovers_synthetic_saturation_and_logs() {
        let ns = [10.0, 30.0, 100.0, 1e3, 1e4];
        let sat: Vec<_> = ns.iter().map(|&n: &f64| (n, (1.0 - 2.0 / n).sqrt())).collect();
        let f = fit_scaling(&sat).unwrap();
        assert_eq!(f.model, ScalingModel::Saturating);
        assert!((f.parameter + 2.0).abs() < 1e-9);

        let log: Vec<_> = ns.iter().map(|&n: &f64| (n, 1.0 + 2.0 * n.ln())).collect();
        let f = fit_scaling(&log).unwrap();
        assert_eq!(f.model, ScalingModel::LogLaw);
        assert!((f.parameter - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fit_preconditions() {
        let few = [(10.0, 1.0), (100.0, 2.0), (1000.0, 3.0)];
        assert!(matches!(fit_scaling(&few), Err(Error::InsufficientSpan(_))));
        let narrow: Vec<_> = (10..14).map(|n| (n as f64, n as f64)).collect();
        assert!(matches!(fit_scaling(&narrow), Err(Error::InsufficientSpan(_))));
        let bad = [(10.0, 1.0), (100.0, -2.0), (1000.0, 3.0), (1e4, 4.0)];
        assert!(fit_scaling(&bad).is_err());
    }

    /// Expected best model for each (quantity, dimension).
    fn expected(q: SweepQuantity, d: usize) -> ScalingModel {
        use ScalingModel::*;
        match (q, d) {
            (SweepQuantity::PairwiseFree, 1) => LogLaw,
            (SweepQuantity::GlobalFree, 1) => Saturating,
            (SweepQuantity::GlobalFree, 2) => SqrtLogLaw,
            (SweepQuantity::PairwiseFixed, 2) => SqrtNLogN,
            _ => PowerLaw,
        }
    }

    #[test]
    fn sweeps_select_the_tabulated_forms() {
        for d in [1usize, 2, 3] {
            for q in SweepQuantity::ALL {
                let s = scaling_sweep(d, &default_sides(d), 1e-6, W, q, &CODATA_2018).unwrap();
                assert_eq!(s.fit.model, expected(q, d), "D={d} {q:?} {:?}", s.fit.ranking);
                if s.fit.model == ScalingModel::PowerLaw {
                    let target = match (q, d) {
                        (SweepQuantity::PairwiseFree, 2) | (SweepQuantity::PairwiseFixed, 1) => 0.5,
                        (SweepQuantity::GlobalFree, 3) => 1.0 / 6.0,
                        _ => 2.0 / 3.0,
                    };
                    assert!((s.fit.parameter - target).abs() < 0.05, "D={d} {q:?} p={}", s.fit.parameter);
                }
            }
        }
    }

    #[test]
    fn sweep_rejects_even_sides_and_writes_csv() {
        assert!(scaling_sweep(2, &[4, 5, 7, 9], 1.0, W, SweepQuantity::GlobalFree, &CODATA_2018).is_err());
        let s = scaling_sweep(1, &[11, 101, 1001, 10001], 1e-6, W, SweepQuantity::PairwiseFree, &CODATA_2018).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "N,exact_sum,continuum_estimate,ratio,fitted_model,parameter,rate_hz,mode,case,convention,formula_id"
        );
        assert_eq!(lines.count(), 4);
        assert!(text.contains(",log-law,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_sum_ignores_clock_order(n in 3usize..60, seed in any::<u64>(), alpha in 0.5f64..4.0) {
            let base = build_lattice(2, 1.0, &[n, 2], W).unwrap();
            let mut clocks = base.clocks().to_vec();
            let centre = clocks[0].position;
            let mut s = seed | 1;
            for i in (1..clocks.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                clocks.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let pos = clocks.iter().position(|c| c.position == centre).unwrap();
            let shuffled = ClockArray::new(clocks).unwrap();
            let a = lattice_sum_exact(&base, 0, alpha).unwrap();
            let b = lattice_sum_exact(&shuffled, pos, alpha).unwrap();
            prop_assert!(rel(b, a) < 1e-12);
        }

        #[test]
        fn continuum_never_shrinks_with_n(d in 1usize..4, alpha in 0.5f64..4.0, n in 2.0f64..1e9) {
            let a = continuum_sum(n, d, 1.0, alpha).unwrap().value;
            let b = continuum_sum(n * 2.0, d, 1.0, alpha).unwrap().value;
            prop_assert!(b >= a);
        }
    }
}
