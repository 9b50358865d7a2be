//! Scenario configs (JSON) and the runner that turns one into a directory of
//! CSV/JSON artifacts.
//!
//! Every file written is a pure function of the config and the selected
//! conventions: no timestamps, sorted manifests, fixed float formatting.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::constants::{
    apply_convention, AngularFrequency, FrequencyConvention, PhysicalConstants, PositionMeasurementRate, Rate,
    CODATA_2018,
};
use crate::continuum::{default_sides, scaling_sweep, ScalingSweep, SweepQuantity};
use crate::error::{Error, Result};
use crate::geometry::{build_lattice_with_convention, distance, pair_rate_matrix, ClockArray, ClockSpec, PairRateMatrix};
use crate::lindblad::{
    coherence_decay_rate, coherence_trace, coherence_trace_product, evolve_exact, evolve_numeric, negativity,
    CoherenceTrace, DensityMatrix, EvolutionKind, EvolutionModel, Qubit, UnitMap, ANALYTIC_LIMIT, DENSE_LIMIT,
    JSON_LIMIT,
};
use crate::rates::{
    dephasing_given_rates, min_dephasing_global_a, min_dephasing_global_b, min_dephasing_pairwise_a,
    min_dephasing_pairwise_b, optimize_rates, pairwise_a_rate, pairwise_b_rate, global_a_rate, ChannelMode,
    MeasurementRates, OptimizeMode, RateCase,
};
use crate::redshift::{
    bound_parameters, composite_dephasing, discretize_shell, shell_dephasing, simple_particle_dephasing, BodyShape,
    CompositeBody, RedshiftDephasing,
};
use crate::report::{headline_report_with, write_plot_data, HeadlineReport};

/// Arrays larger than this get center-clock rates only.
pub const FULL_MATRIX_LIMIT: usize = 2048;
/// Largest array handed to the numerical optimizer.
pub const OPTIMIZE_LIMIT: usize = 64;
/// Largest array for which negativity is tracked in a simulation.
pub const NEGATIVITY_LIMIT: usize = 6;
const MAX_LATTICE_CLOCKS: usize = 50_000_000;
const MAX_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Rates(RatesScenario),
    Optimize(OptimizeScenario),
    ScalingSweep(SweepScenario),
    Simulate(SimulateScenario),
    Redshift(RedshiftScenario),
    PaperReport(ReportScenario),
}

/// Either a regular lattice or an explicit clock list. Frequencies are quoted
/// values; the run's convention turns them into ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeometrySpec {
    Lattice(LatticeSpec),
    Clocks(Vec<ClockEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub dimension: usize,
    pub lattice_constant: f64,
    pub counts: Vec<usize>,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClockEntry {
    pub frequency: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RatesScenario {
    pub geometry: GeometrySpec,
    /// Default: both modes.
    #[serde(default)]
    pub modes: Vec<ChannelMode>,
    /// Default: A-free and B-fixed, plus given-rates when rates are supplied.
    #[serde(default)]
    pub cases: Vec<RateCase>,
    /// Hz; required for the given-rates case.
    #[serde(default)]
    pub measurement_rates: Option<MeasurementRates>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizeTarget {
    Pairwise,
    Global,
    FixedPairwise,
    FixedGlobal,
}

impl OptimizeTarget {
    pub const ALL: [OptimizeTarget; 4] = [
        OptimizeTarget::Pairwise,
        OptimizeTarget::Global,
        OptimizeTarget::FixedPairwise,
        OptimizeTarget::FixedGlobal,
    ];

    fn mode(self) -> OptimizeMode {
        match self {
            OptimizeTarget::Pairwise => OptimizeMode::Pairwise,
            OptimizeTarget::Global => OptimizeMode::Global,
            OptimizeTarget::FixedPairwise => OptimizeMode::FixedScalar(ChannelMode::Pairwise),
            OptimizeTarget::FixedGlobal => OptimizeMode::FixedScalar(ChannelMode::Global),
        }
    }

    fn channel(self) -> ChannelMode {
        match self {
            OptimizeTarget::Pairwise | OptimizeTarget::FixedPairwise => ChannelMode::Pairwise,
            _ => ChannelMode::Global,
        }
    }

    fn case(self) -> RateCase {
        match self {
            OptimizeTarget::Pairwise | OptimizeTarget::Global => RateCase::AFree,
            _ => RateCase::BFixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OptimizeScenario {
    pub geometry: GeometrySpec,
    /// Default: all four.
    #[serde(default)]
    pub targets: Vec<OptimizeTarget>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SweepQuantityName {
    PairwiseFree,
    GlobalFree,
    PairwiseFixed,
}

impl From<SweepQuantityName> for SweepQuantity {
    fn from(q: SweepQuantityName) -> Self {
        match q {
            SweepQuantityName::PairwiseFree => SweepQuantity::PairwiseFree,
            SweepQuantityName::GlobalFree => SweepQuantity::GlobalFree,
            SweepQuantityName::PairwiseFixed => SweepQuantity::PairwiseFixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepScenario {
    /// Default: 1, 2 and 3.
    #[serde(default = "all_dimensions")]
    pub dimensions: Vec<usize>,
    /// Default: all three quantities.
    #[serde(default)]
    pub quantities: Vec<SweepQuantityName>,
    pub lattice_constant: f64,
    pub frequency: f64,
    /// Odd side lengths per dimension; defaults to the built-in ranges.
    #[serde(default)]
    pub sides_1d: Option<Vec<usize>>,
    #[serde(default)]
    pub sides_2d: Option<Vec<usize>>,
    #[serde(default)]
    pub sides_3d: Option<Vec<usize>>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn all_dimensions() -> Vec<usize> {
    vec![1, 2, 3]
}

impl SweepScenario {
    fn sides(&self, dimension: usize) -> Vec<usize> {
        let explicit = match dimension {
            1 => &self.sides_1d,
            2 => &self.sides_2d,
            _ => &self.sides_3d,
        };
        explicit.clone().unwrap_or_else(|| default_sides(dimension))
    }

    fn quantities(&self) -> Vec<SweepQuantity> {
        if self.quantities.is_empty() {
            vec![SweepQuantity::PairwiseFree, SweepQuantity::GlobalFree, SweepQuantity::PairwiseFixed]
        } else {
            self.quantities.iter().map(|&q| q.into()).collect()
        }
    }
}

/// Source of the couplings for a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Couplings already in model units.
    Dimensionless {
        couplings: Vec<Vec<f64>>,
        #[serde(default)]
        frequencies: Option<Vec<f64>>,
    },
    /// Physical array; model units are set by the largest coupling.
    Geometry {
        geometry: GeometrySpec,
        /// Keep the σ_z free term (usually ~10⁵⁷ times the couplings).
        #[serde(default)]
        include_free_term: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelChoice {
    Unitary,
    Pairwise,
    Global,
}

/// Measurement rates for a simulation, in the model's rate unit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum RateChoice {
    /// Free-rate minimum of the chosen channel.
    #[default]
    Optimal,
    Uniform(f64),
    Explicit(MeasurementRates),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// Every clock in |+⟩.
    AllPlus,
    /// Clock 0 in |+⟩, the rest in |0⟩: clock 0's coherence then decays as a
    /// pure exponential.
    #[default]
    Probe,
    /// One Bloch vector (x, y, z) per clock, |r| ≤ 1.
    Bloch(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Exact,
    Numeric,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    /// Model units.
    pub t_max: f64,
    pub samples: usize,
}

impl TimeGrid {
    fn times(&self) -> Vec<f64> {
        let last = (self.samples - 1) as f64;
        (0..self.samples).map(|k| self.t_max * k as f64 / last).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulateScenario {
    pub model: ModelSpec,
    pub channel: ChannelChoice,
    #[serde(default)]
    pub rates: RateChoice,
    #[serde(default)]
    pub initial: InitialState,
    pub times: TimeGrid,
    #[serde(default)]
    pub method: Method,
    /// RK4 step in model units; default is a hundredth of the sample spacing.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    /// Uniform density, integrated in closed form.
    Shell { inner: f64, outer: f64 },
    /// The same shell realised as explicit atoms around the clock.
    DiscretizedShell { inner: f64, outer: f64 },
    Atoms(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum BodySpec {
    /// A point mass at `distance` with a single measurement rate (Hz·m⁻²).
    Simple {
        mass: f64,
        distance: f64,
        measurement_rate: f64,
    },
    /// A shell with the internally set measurement rate, closed form.
    Shell { inner: f64, outer: f64 },
    Composite {
        atom_mass: f64,
        lattice_constant: f64,
        shape: ShapeSpec,
        #[serde(default)]
        measurement_rate: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    /// Largest unobserved dephasing, Hz.
    pub cap: f64,
    pub mass: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RedshiftScenario {
    pub body: BodySpec,
    pub frequency: f64,
    #[serde(default)]
    pub clock_position: [f64; 3],
    /// Clock measurement rate Γ_z, Hz.
    #[serde(default)]
    pub gamma_z: f64,
    #[serde(default)]
    pub bounds: Option<BoundsSpec>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ReportScenario {
    #[serde(default)]
    pub format: OutputFormat,
}

/// JSON Schema of the scenario format.
pub fn scenario_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(Scenario)).expect("schema serializes")
}

fn check(ok: bool, path: impl Into<String>, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(path, message))
    }
}

fn positive(v: f64, path: &str) -> Result<()> {
    check(v > 0.0 && v.is_finite(), path, format!("must be positive and finite, got {v}"))
}

fn non_negative(v: f64, path: &str) -> Result<()> {
    check(v >= 0.0 && v.is_finite(), path, format!("must be finite and >= 0, got {v}"))
}

fn finite_position(p: &[f64; 3], path: &str) -> Result<()> {
    check(p.iter().all(|x| x.is_finite()), path, "coordinates must be finite")
}

fn check_rates_shape(rates: &MeasurementRates, n: usize, path: &str) -> Result<()> {
    rates.check(n).map_err(|e| Error::validation(path, e.to_string()))
}

impl GeometrySpec {
    pub fn clock_count(&self) -> usize {
        match self {
            GeometrySpec::Lattice(l) => l.counts.iter().product(),
            GeometrySpec::Clocks(c) => c.len(),
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        match self {
            GeometrySpec::Lattice(l) => {
                let p = format!("{path}.lattice");
                check(
                    (1..=3).contains(&l.dimension),
                    format!("{p}.dimension"),
                    format!("must be 1, 2 or 3, got {}", l.dimension),
                )?;
                positive(l.lattice_constant, &format!("{p}.lattice_constant"))?;
                non_negative(l.frequency, &format!("{p}.frequency"))?;
                check(
                    l.counts.len() == l.dimension,
                    format!("{p}.counts"),
                    format!("needs {} entries, got {}", l.dimension, l.counts.len()),
                )?;
                check(l.counts.iter().all(|&c| c >= 1), format!("{p}.counts"), "every count must be >= 1")?;
                let n = l.counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
                check(
                    n.is_some_and(|n| n <= MAX_LATTICE_CLOCKS),
                    format!("{p}.counts"),
                    format!("lattice exceeds {MAX_LATTICE_CLOCKS} clocks"),
                )
            }
            GeometrySpec::Clocks(clocks) => {
                let p = format!("{path}.clocks");
                check(!clocks.is_empty(), &p, "needs at least one clock")?;
                for (i, c) in clocks.iter().enumerate() {
                    non_negative(c.frequency, &format!("{p}[{i}].frequency"))?;
                    finite_position(&c.position, &format!("{p}[{i}].position"))?;
                }
                if clocks.len() <= FULL_MATRIX_LIMIT {
                    for i in 0..clocks.len() {
                        for j in i + 1..clocks.len() {
                            check(
                                distance(&clocks[i].position, &clocks[j].position) > 0.0,
                                format!("{p}[{j}].position"),
                                format!("coincides with clock {i}"),
                            )?;
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn build(&self, convention: FrequencyConvention) -> Result<ClockArray> {
        match self {
            GeometrySpec::Lattice(l) => build_lattice_with_convention(
                l.dimension,
                l.lattice_constant,
                &l.counts,
                apply_convention(l.frequency, convention)?,
                convention,
            ),
            GeometrySpec::Clocks(clocks) => {
                let specs = clocks
                    .iter()
                    .map(|c| Ok(ClockSpec::new(apply_convention(c.frequency, convention)?, c.position)))
                    .collect::<Result<Vec<_>>>()?;
                ClockArray::with_metadata(specs, None, convention)
            }
        }
    }
}

pub const SCENARIO_KINDS: [&str; 6] = ["rates", "optimize", "scaling-sweep", "simulate", "redshift", "paper-report"];

fn typed<T: serde::de::DeserializeOwned>(body: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(body).map_err(|e| {
        let path = e.path().to_string();
        Error::validation(if path == "." { "$".to_string() } else { path }, e.inner().to_string())
    })
}

impl Scenario {
    /// Parse and validate; both failure kinds come back as
    /// [`Error::Validation`] with the offending field path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::validation("$", e.to_string()))?;
        let serde_json::Value::Object(mut fields) = value else {
            return Err(Error::validation("$", "a scenario must be a JSON object"));
        };
        let kind = match fields.remove("kind") {
            Some(serde_json::Value::String(k)) => k,
            _ => return Err(Error::validation("kind", "missing or not a string")),
        };
        // The body is parsed on its own so that errors keep their field path.
        let body = serde_json::Value::Object(fields);
        let scenario = match kind.as_str() {
            "rates" => Scenario::Rates(typed(body)?),
            "optimize" => Scenario::Optimize(typed(body)?),
            "scaling-sweep" => Scenario::ScalingSweep(typed(body)?),
            "simulate" => Scenario::Simulate(typed(body)?),
            "redshift" => Scenario::Redshift(typed(body)?),
            "paper-report" => Scenario::PaperReport(typed(body)?),
            other => {
                return Err(Error::validation(
                    "kind",
                    format!("unknown scenario kind '{other}', expected one of {}", SCENARIO_KINDS.join(", ")),
                ))
            }
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Scenario::Rates(_) => "rates",
            Scenario::Optimize(_) => "optimize",
            Scenario::ScalingSweep(_) => "scaling-sweep",
            Scenario::Simulate(_) => "simulate",
            Scenario::Redshift(_) => "redshift",
            Scenario::PaperReport(_) => "paper-report",
        }
    }

    fn format(&self) -> OutputFormat {
        match self {
            Scenario::Rates(s) => s.format,
            Scenario::Optimize(s) => s.format,
            Scenario::ScalingSweep(s) => s.format,
            Scenario::Simulate(s) => s.format,
            Scenario::Redshift(s) => s.format,
            Scenario::PaperReport(s) => s.format,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::Rates(s) => {
                s.geometry.validate("geometry")?;
                let n = s.geometry.clock_count();
                if s.cases.contains(&RateCase::GivenRates) {
                    let rates = s
                        .measurement_rates
                        .as_ref()
                        .ok_or_else(|| Error::validation("measurement_rates", "required by the given-rates case"))?;
                    check(
                        n <= FULL_MATRIX_LIMIT,
                        "cases",
                        format!("given-rates needs the full coupling matrix (N <= {FULL_MATRIX_LIMIT})"),
                    )?;
                    check_rates_shape(rates, n, "measurement_rates")?;
                }
                Ok(())
            }
            Scenario::Optimize(s) => {
                s.geometry.validate("geometry")?;
                let n = s.geometry.clock_count();
                check(
                    (2..=OPTIMIZE_LIMIT).contains(&n),
                    "geometry",
                    format!("optimizer handles 2..={OPTIMIZE_LIMIT} clocks, got {n}"),
                )
            }
            Scenario::ScalingSweep(s) => {
                positive(s.lattice_constant, "lattice_constant")?;
                non_negative(s.frequency, "frequency")?;
                for (i, &d) in s.dimensions.iter().enumerate() {
                    check((1..=3).contains(&d), format!("dimensions[{i}]"), format!("must be 1, 2 or 3, got {d}"))?;
                    let field = format!("sides_{d}d");
                    let sides = s.sides(d);
                    check(sides.len() >= 4, &field, "needs at least 4 side lengths for a fit")?;
                    for (j, &k) in sides.iter().enumerate() {
                        check(k % 2 == 1, format!("{field}[{j}]"), format!("side lengths must be odd, got {k}"))?;
                        let n = (k as f64).powi(d as i32);
                        check(
                            n <= MAX_LATTICE_CLOCKS as f64,
                            format!("{field}[{j}]"),
                            format!("lattice exceeds {MAX_LATTICE_CLOCKS} clocks"),
                        )?;
                    }
                }
                Ok(())
            }
            Scenario::Simulate(s) => s.validate(),
            Scenario::Redshift(s) => s.validate(),
            Scenario::PaperReport(_) => Ok(()),
        }
    }
}

impl SimulateScenario {
    fn clock_count(&self) -> usize {
        match &self.model {
            ModelSpec::Dimensionless { couplings, .. } => couplings.len(),
            ModelSpec::Geometry { geometry, .. } => geometry.clock_count(),
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.model {
            ModelSpec::Dimensionless { couplings, frequencies } => {
                let n = couplings.len();
                check(n >= 1, "model.dimensionless.couplings", "needs at least one clock")?;
                for (i, row) in couplings.iter().enumerate() {
                    let p = format!("model.dimensionless.couplings[{i}]");
                    check(row.len() == n, &p, format!("must have {n} entries"))?;
                    for (j, &v) in row.iter().enumerate() {
                        non_negative(v, &format!("{p}[{j}]"))?;
                        if i == j {
                            check(v == 0.0, format!("{p}[{j}]"), "diagonal must be zero")?;
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..i {
                        check(
                            couplings[i][j] == couplings[j][i],
                            format!("model.dimensionless.couplings[{i}][{j}]"),
                            "couplings must be symmetric",
                        )?;
                    }
                }
                if let Some(f) = frequencies {
                    check(f.len() == n, "model.dimensionless.frequencies", format!("must have {n} entries"))?;
                    for (i, &v) in f.iter().enumerate() {
                        check(v.is_finite(), format!("model.dimensionless.frequencies[{i}]"), "must be finite")?;
                    }
                }
            }
            ModelSpec::Geometry { geometry, .. } => geometry.validate("model.geometry.geometry")?,
        }
        let n = self.clock_count();
        // every initial state is a product state, so exact runs can skip dense storage
        let limit = if self.method == Method::Exact { ANALYTIC_LIMIT } else { DENSE_LIMIT };
        check(
            n <= limit,
            "model",
            format!("{n} clocks exceed the limit of {limit} for this method"),
        )?;
        match (&self.channel, &self.rates) {
            (ChannelChoice::Unitary, RateChoice::Optimal) => {}
            (ChannelChoice::Unitary, _) => {
                return Err(Error::validation("rates", "a unitary run takes no measurement rates"));
            }
            (_, RateChoice::Uniform(g)) => positive(*g, "rates.uniform")?,
            (channel, RateChoice::Explicit(r)) => {
                let expected = if *channel == ChannelChoice::Pairwise { ChannelMode::Pairwise } else { ChannelMode::Global };
                check(r.mode() == expected, "rates.explicit", format!("channel is {expected}"))?;
                check_rates_shape(r, n, "rates.explicit")?;
            }
            _ => {}
        }
        if let InitialState::Bloch(v) = &self.initial {
            check(v.len() == n, "initial.bloch", format!("needs {n} Bloch vectors, got {}", v.len()))?;
            for (i, b) in v.iter().enumerate() {
                let r2: f64 = b.iter().map(|x| x * x).sum();
                check(
                    b.iter().all(|x| x.is_finite()) && r2 <= 1.0 + 1e-12,
                    format!("initial.bloch[{i}]"),
                    "Bloch vector must be finite with length <= 1",
                )?;
            }
        }
        positive(self.times.t_max, "times.t_max")?;
        check(
            (2..=MAX_SAMPLES).contains(&self.times.samples),
            "times.samples",
            format!("must lie in 2..={MAX_SAMPLES}"),
        )?;
        if let Some(dt) = self.dt {
            positive(dt, "dt")?;
        }
        Ok(())
    }
}

impl RedshiftScenario {
    fn validate(&self) -> Result<()> {
        non_negative(self.frequency, "frequency")?;
        non_negative(self.gamma_z, "gamma_z")?;
        finite_position(&self.clock_position, "clock_position")?;
        match &self.body {
            BodySpec::Simple {
                mass,
                distance,
                measurement_rate,
            } => {
                positive(*mass, "body.simple.mass")?;
                positive(*distance, "body.simple.distance")?;
                positive(*measurement_rate, "body.simple.measurement_rate")?;
            }
            BodySpec::Shell { inner, outer } => {
                positive(*inner, "body.shell.inner")?;
                positive(*outer, "body.shell.outer")?;
                check(outer >= inner, "body.shell.outer", "must be >= inner")?;
            }
            BodySpec::Composite {
                atom_mass,
                lattice_constant,
                shape,
                measurement_rate,
            } => {
                positive(*atom_mass, "body.composite.atom_mass")?;
                positive(*lattice_constant, "body.composite.lattice_constant")?;
                if let Some(r) = measurement_rate {
                    positive(*r, "body.composite.measurement_rate")?;
                }
                match shape {
                    ShapeSpec::Shell { inner, outer } | ShapeSpec::DiscretizedShell { inner, outer } => {
                        positive(*inner, "body.composite.shape.inner")?;
                        check(outer > inner, "body.composite.shape.outer", "must exceed inner")?;
                        check(
                            *inner >= lattice_constant / 2.0,
                            "body.composite.shape.inner",
                            "must be at least half the lattice constant",
                        )?;
                        if matches!(shape, ShapeSpec::DiscretizedShell { .. }) {
                            let atoms = 4.0 / 3.0 * std::f64::consts::PI * (outer.powi(3) - inner.powi(3))
                                / lattice_constant.powi(3);
                            check(
                                atoms <= MAX_LATTICE_CLOCKS as f64,
                                "body.composite.shape",
                                format!("discretization would need {atoms:e} atoms"),
                            )?;
                        }
                    }
                    ShapeSpec::Atoms(p) => {
                        check(!p.is_empty(), "body.composite.shape.atoms", "needs at least one atom")?;
                        for (i, a) in p.iter().enumerate() {
                            finite_position(a, &format!("body.composite.shape.atoms[{i}]"))?;
                        }
                    }
                }
            }
        }
        if let Some(b) = &self.bounds {
            positive(b.cap, "bounds.cap")?;
            positive(b.mass, "bounds.mass")?;
            positive(b.distance, "bounds.distance")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub conventions: Vec<FrequencyConvention>,
    pub out_dir: PathBuf,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            conventions: vec![FrequencyConvention::Direct],
            out_dir: out_dir.into(),
        }
    }

    pub fn with_conventions(mut self, conventions: &[FrequencyConvention]) -> Self {
        self.conventions = conventions.to_vec();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub format: OutputFormat,
    pub conventions: Vec<FrequencyConvention>,
    pub files: Vec<String>,
}

/// Collects artifacts; `manifest.json` is written last and lists them sorted.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| Error::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn rows<T: Serialize>(&mut self, stem: &str, format: OutputFormat, rows: &[T], header: &[&str]) -> Result<()> {
        match format {
            OutputFormat::Csv => self.csv(&format!("{stem}.csv"), |buf| {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(buf);
                w.write_record(header)?;
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush().map_err(|source| Error::Io {
                    path: stem.into(),
                    source,
                })?;
                Ok(())
            }),
            OutputFormat::Json => self.json(&format!("{stem}.json"), &rows),
        }
    }

    fn finish(mut self, scenario: &Scenario, options: &RunOptions) -> Result<Manifest> {
        self.files.sort();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: scenario.kind().to_string(),
            format: scenario.format(),
            conventions: options.conventions.clone(),
            files: self.files.clone(),
        };
        self.json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}

/// Run a validated scenario and write its artifacts under `options.out_dir`.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<Manifest> {
    run_scenario_with(scenario, options, &CODATA_2018)
}

pub fn run_scenario_with(scenario: &Scenario, options: &RunOptions, k: &PhysicalConstants) -> Result<Manifest> {
    scenario.validate()?;
    if options.conventions.is_empty() {
        return Err(Error::validation("conventions", "select at least one frequency convention"));
    }
    let conventions: Vec<String> = options.conventions.iter().map(|c| c.to_string()).collect();
    info!(
        "{} {} running {} scenario, conventions [{}]",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        scenario.kind(),
        conventions.join(", ")
    );
    let mut out = Artifacts::new(&options.out_dir)?;
    let result = match scenario {
        Scenario::Rates(s) => run_rates(s, options, k, &mut out),
        Scenario::Optimize(s) => run_optimize(s, options, k, &mut out),
        Scenario::ScalingSweep(s) => run_sweep(s, options, k, &mut out),
        Scenario::Simulate(s) => run_simulate(s, options, k, &mut out),
        Scenario::Redshift(s) => run_redshift(s, options, k, &mut out),
        Scenario::PaperReport(s) => run_report(s, k, &mut out),
    };
    result.map_err(|e| e.context(format!("{} scenario", scenario.kind())))?;
    out.finish(scenario, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub convention: FrequencyConvention,
    pub mode: ChannelMode,
    pub case: RateCase,
    pub formula_id: String,
    pub index: usize,
    pub rate_hz: f64,
}

fn run_rates(s: &RatesScenario, options: &RunOptions, k: &PhysicalConstants, out: &mut Artifacts) -> Result<()> {
    let modes = if s.modes.is_empty() { ChannelMode::ALL.to_vec() } else { s.modes.clone() };
    let cases = if s.cases.is_empty() {
        let mut c = vec![RateCase::AFree, RateCase::BFixed];
        if s.measurement_rates.is_some() {
            c.push(RateCase::GivenRates);
        }
        c
    } else {
        s.cases.clone()
    };
    let mut rows = Vec::new();
    for &conv in &options.conventions {
        let array = s.geometry.build(conv)?;
        let n = array.len();
        if n > FULL_MATRIX_LIMIT {
            let center = array.center_index();
            info!("{n} clocks: computing center clock {center} only");
            let row = array.pair_rate_row(center, k)?;
            for &mode in &modes {
                for &case in &cases {
                    let (formula, rate) = match (mode, case) {
                        (ChannelMode::Pairwise, RateCase::AFree) => ("pairwise.free.general", pairwise_a_rate(&row)),
                        (ChannelMode::Global, RateCase::AFree) => ("global.free.general", global_a_rate(&row)),
                        (ChannelMode::Pairwise, RateCase::BFixed) => ("pairwise.fixed.general", pairwise_b_rate(&row, n)),
                        _ => {
                            warn!("{mode} {case} needs every clock's couplings; skipped for {n} clocks");
                            continue;
                        }
                    };
                    rows.push(RateRow {
                        convention: conv,
                        mode,
                        case,
                        formula_id: formula.to_string(),
                        index: center,
                        rate_hz: rate,
                    });
                }
            }
            continue;
        }
        let g = pair_rate_matrix(&array, k)?;
        for &mode in &modes {
            for &case in &cases {
                let report = match (mode, case) {
                    (ChannelMode::Pairwise, RateCase::AFree) => min_dephasing_pairwise_a(&g).0,
                    (ChannelMode::Global, RateCase::AFree) => min_dephasing_global_a(&g).0,
                    (ChannelMode::Pairwise, RateCase::BFixed) => min_dephasing_pairwise_b(&g)?.0,
                    (ChannelMode::Global, RateCase::BFixed) => min_dephasing_global_b(&g)?.0,
                    (_, RateCase::GivenRates) => {
                        let given = s.measurement_rates.as_ref().expect("validated");
                        if given.mode() != mode {
                            continue;
                        }
                        dephasing_given_rates(&g, given)?
                    }
                };
                for (index, r) in report.per_clock.iter().enumerate() {
                    rows.push(RateRow {
                        convention: conv,
                        mode,
                        case,
                        formula_id: report.formula_id.clone(),
                        index,
                        rate_hz: r.0,
                    });
                }
            }
        }
    }
    out.rows(
        "rates",
        s.format,
        &rows,
        &["convention", "mode", "case", "formula_id", "index", "rate_hz"],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRow {
    pub convention: FrequencyConvention,
    pub mode: ChannelMode,
    pub case: RateCase,
    pub formula_id: String,
    /// "dephasing", "measurement_rate" or "objective".
    pub quantity: String,
    /// Clock index, "i-j" for a pairwise channel, or "all".
    pub index: String,
    pub optimized_hz: f64,
    pub closed_form_hz: f64,
    pub relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeSummary {
    pub convention: FrequencyConvention,
    pub target: OptimizeTarget,
    pub sweeps: usize,
    pub objective_hz: f64,
    pub closed_form_objective_hz: f64,
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn run_optimize(s: &OptimizeScenario, options: &RunOptions, k: &PhysicalConstants, out: &mut Artifacts) -> Result<()> {
    let targets = if s.targets.is_empty() { OptimizeTarget::ALL.to_vec() } else { s.targets.clone() };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &conv in &options.conventions {
        let g = pair_rate_matrix(&s.geometry.build(conv)?, k)?;
        let n = g.n();
        for &target in &targets {
            let opt = optimize_rates(&g, target.mode())?;
            let (closed_report, closed_rates) = match target {
                OptimizeTarget::Pairwise => min_dephasing_pairwise_a(&g),
                OptimizeTarget::Global => min_dephasing_global_a(&g),
                OptimizeTarget::FixedPairwise | OptimizeTarget::FixedGlobal => {
                    let (report, gamma) = if target == OptimizeTarget::FixedPairwise {
                        min_dephasing_pairwise_b(&g)?
                    } else {
                        min_dephasing_global_b(&g)?
                    };
                    (report, MeasurementRates::uniform(target.channel(), n, gamma.0))
                }
            };
            let closed_objective = dephasing_given_rates(&g, &closed_rates)?.total();
            let mut push = |quantity: &str, index: String, a: f64, b: f64| {
                rows.push(OptimizeRow {
                    convention: conv,
                    mode: target.channel(),
                    case: target.case(),
                    formula_id: closed_report.formula_id.clone(),
                    quantity: quantity.to_string(),
                    index,
                    optimized_hz: a,
                    closed_form_hz: b,
                    relative_difference: relative(a, b),
                });
            };
            push("objective", "all".into(), opt.objective, closed_objective);
            for (i, (a, b)) in opt.report.per_clock.iter().zip(&closed_report.per_clock).enumerate() {
                push("dephasing", i.to_string(), a.0, b.0);
            }
            match (&opt.rates, &closed_rates) {
                (MeasurementRates::Pairwise(a), MeasurementRates::Pairwise(b)) => {
                    let limit = if target.case() == RateCase::BFixed { 1 } else { n };
                    for i in 0..limit {
                        for j in (0..n).filter(|&j| j != i) {
                            if target.case() == RateCase::BFixed && j != (i + 1) % n {
                                continue;
                            }
                            push("measurement_rate", format!("{i}-{j}"), a[i][j], b[i][j]);
                        }
                    }
                }
                (MeasurementRates::Global(a), MeasurementRates::Global(b)) => {
                    let limit = if target.case() == RateCase::BFixed { 1 } else { n };
                    for i in 0..limit {
                        push("measurement_rate", i.to_string(), a[i], b[i]);
                    }
                }
                _ => unreachable!("optimizer and closed form share a channel"),
            }
            summary.push(OptimizeSummary {
                convention: conv,
                target,
                sweeps: opt.sweeps,
                objective_hz: opt.objective,
                closed_form_objective_hz: closed_objective,
            });
        }
    }
    out.rows(
        "optimize",
        s.format,
        &rows,
        &[
            "convention",
            "mode",
            "case",
            "formula_id",
            "quantity",
            "index",
            "optimized_hz",
            "closed_form_hz",
            "relative_difference",
        ],
    )?;
    out.json("optimize_summary.json", &summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepFitSummary {
    convention: FrequencyConvention,
    dimension: usize,
    quantity: String,
    mode: ChannelMode,
    case: RateCase,
    formula_id: String,
    fitted_model: String,
    parameter: f64,
    residual: f64,
    max_ratio: f64,
    min_ratio: f64,
    ranking: Vec<crate::continuum::ModelFit>,
}

fn run_sweep(s: &SweepScenario, options: &RunOptions, k: &PhysicalConstants, out: &mut Artifacts) -> Result<()> {
    let mut sweeps: Vec<ScalingSweep> = Vec::new();
    for &conv in &options.conventions {
        let omega = apply_convention(s.frequency, conv)?;
        for &d in &s.dimensions {
            for q in s.quantities() {
                info!("sweep {d}D {} ({conv})", q.as_str());
                let mut sweep = scaling_sweep(d, &s.sides(d), s.lattice_constant, omega, q, k)
                    .map_err(|e| e.context(format!("{d}D {} sweep", q.as_str())))?;
                sweep.convention = conv;
                sweeps.push(sweep);
            }
        }
    }
    let fits: Vec<SweepFitSummary> = sweeps
        .iter()
        .map(|sw| SweepFitSummary {
            convention: sw.convention,
            dimension: sw.dimension,
            quantity: sw.quantity.as_str().to_string(),
            mode: sw.quantity.mode(),
            case: sw.quantity.case(),
            formula_id: sw.quantity.formula_id().to_string(),
            fitted_model: sw.fit.model.to_string(),
            parameter: sw.fit.parameter,
            residual: sw.fit.residual,
            max_ratio: sw.rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max),
            min_ratio: sw.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min),
            ranking: sw.fit.ranking.clone(),
        })
        .collect();
    match s.format {
        OutputFormat::Csv => {
            for sw in &sweeps {
                let name = format!("sweep_{}_{}d_{}.csv", sw.convention, sw.dimension, sw.quantity.as_str());
                out.csv(&name, |buf| sw.write_csv(buf))?;
            }
        }
        OutputFormat::Json => out.json("sweeps.json", &sweeps)?,
    }
    out.csv("plot_data.csv", |buf| write_plot_data(&sweeps, buf))?;
    out.json("fits.json", &fits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub clock: usize,
    /// Model units.
    pub rate: Option<f64>,
    pub rate_hz: Option<f64>,
    /// Why no rate could be fitted.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub dt: f64,
    pub steps: usize,
    pub max_error_estimate: f64,
    /// Largest Frobenius distance to the exact state over the samples.
    pub max_deviation_from_exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub convention: FrequencyConvention,
    pub kind: EvolutionKind,
    pub clocks: usize,
    pub units: UnitMap,
    /// Model units.
    pub dephasing: Vec<f64>,
    pub fits: Vec<DecayFit>,
    /// Largest single-clock-cut negativity over the samples; absent beyond
    /// the tracking limit.
    pub max_negativity: Option<f64>,
    pub numeric: Option<NumericSummary>,
}

fn simulation_model(s: &SimulateScenario, conv: FrequencyConvention, k: &PhysicalConstants) -> Result<EvolutionModel> {
    let kind = match s.channel {
        ChannelChoice::Unitary => EvolutionKind::Unitary,
        ChannelChoice::Pairwise => EvolutionKind::CcgPairwise,
        ChannelChoice::Global => EvolutionKind::CcgGlobal,
    };
    let (g, omega, reference, free_term) = match &s.model {
        ModelSpec::Dimensionless { couplings, frequencies } => {
            let n = couplings.len();
            let flat: Vec<f64> = couplings.iter().flatten().copied().collect();
            let omega = frequencies.clone().unwrap_or_else(|| vec![0.0; n]);
            (PairRateMatrix::from_couplings(n, &flat)?, omega, 1.0, true)
        }
        ModelSpec::Geometry {
            geometry,
            include_free_term,
        } => {
            let array = geometry.build(conv)?;
            let g = pair_rate_matrix(&array, k)?;
            let max = g.max_coupling();
            let reference = if max > 0.0 { max } else { 1.0 };
            let omega = array.clocks().iter().map(|c| c.omega.0 / reference).collect();
            (g.rescaled(reference), omega, reference, *include_free_term)
        }
    };
    let n = g.n();
    let dephasing = match (s.channel, &s.rates) {
        (ChannelChoice::Unitary, _) => vec![0.0; n],
        (channel, choice) => {
            let mode = if channel == ChannelChoice::Pairwise { ChannelMode::Pairwise } else { ChannelMode::Global };
            let rates = match choice {
                RateChoice::Optimal if mode == ChannelMode::Pairwise => min_dephasing_pairwise_a(&g).1,
                RateChoice::Optimal => min_dephasing_global_a(&g).1,
                RateChoice::Uniform(v) => MeasurementRates::uniform(mode, n, *v),
                RateChoice::Explicit(r) => r.clone(),
            };
            dephasing_given_rates(&g, &rates)?.values()
        }
    };
    let mut model = EvolutionModel::from_parts(kind, omega, g.as_slice().to_vec(), dephasing)?;
    model.units = UnitMap::from_reference(reference);
    if !free_term {
        model = model.without_free_term();
    }
    Ok(model)
}

fn initial_qubits(initial: &InitialState, n: usize) -> Vec<Qubit> {
    match initial {
        InitialState::AllPlus => vec![Qubit::plus(); n],
        InitialState::Probe => (0..n).map(|i| if i == 0 { Qubit::plus() } else { Qubit::zero() }).collect(),
        InitialState::Bloch(v) => v.iter().map(|b| Qubit::from_bloch(b[0], b[1], b[2])).collect(),
    }
}

fn fit_all(trace: &CoherenceTrace) -> Vec<DecayFit> {
    trace
        .clocks
        .iter()
        .map(|&clock| match coherence_decay_rate(trace, clock) {
            Ok(r) => DecayFit {
                clock,
                rate: Some(r.0 / trace.units.rate_unit_hz),
                rate_hz: Some(r.0),
                error: None,
            },
            Err(e) => DecayFit {
                clock,
                rate: None,
                rate_hz: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn max_single_cut_negativity(rho: &DensityMatrix) -> Result<f64> {
    let mut best: f64 = 0.0;
    for i in 0..rho.clocks() {
        best = best.max(negativity(rho, &[i])?);
    }
    Ok(best)
}

fn write_trace(out: &mut Artifacts, stem: &str, format: OutputFormat, trace: &CoherenceTrace) -> Result<()> {
    match format {
        OutputFormat::Csv => out.csv(&format!("{stem}.csv"), |buf| trace.write_csv(buf)),
        OutputFormat::Json => out.json(&format!("{stem}.json"), trace),
    }
}

fn run_simulate(s: &SimulateScenario, options: &RunOptions, k: &PhysicalConstants, out: &mut Artifacts) -> Result<()> {
    // dimensionless models carry no frequency convention
    let conventions: &[FrequencyConvention] = match s.model {
        ModelSpec::Dimensionless { .. } => &options.conventions[..1],
        ModelSpec::Geometry { .. } => &options.conventions,
    };
    let times = s.times.times();
    let mut summaries = Vec::new();
    for &conv in conventions {
        let model = simulation_model(s, conv, k)?;
        let n = model.clocks;
        let qubits = initial_qubits(&s.initial, n);
        let dense = n <= DENSE_LIMIT;
        let tag = if conventions.len() > 1 { format!("_{conv}") } else { String::new() };
        let rho0 = if dense { Some(DensityMatrix::product(&qubits)?) } else { None };

        let mut exact_states = Vec::new();
        let mut exact_trace = None;
        if s.method != Method::Numeric {
            let trace = match &rho0 {
                Some(rho) => {
                    for &t in &times {
                        exact_states.push(evolve_exact(rho, &model, t)?);
                    }
                    coherence_trace(rho, &model, &times)?
                }
                None => coherence_trace_product(&qubits, &model, &times)?,
            };
            write_trace(out, &format!("coherence{tag}"), s.format, &trace)?;
            exact_trace = Some(trace);
        }

        let mut numeric = None;
        let mut numeric_states = Vec::new();
        if s.method != Method::Exact {
            let rho = rho0.as_ref().expect("validated: numeric runs are dense");
            let spacing = times[1] - times[0];
            let dt = s.dt.unwrap_or(spacing / 100.0);
            let mut state = rho.clone();
            let mut steps = 0;
            let mut max_error: f64 = 0.0;
            numeric_states.push(state.clone());
            for w in times.windows(2) {
                let step = evolve_numeric(&state, &model, w[1] - w[0], dt)?;
                steps += step.steps;
                max_error = max_error.max(step.error_estimate);
                state = step.state;
                numeric_states.push(state.clone());
            }
            let magnitudes = numeric_states
                .iter()
                .map(|r| (0..n).map(|i| r.reduced_coherence(i).norm()).collect())
                .collect();
            let trace = CoherenceTrace {
                times: times.clone(),
                clocks: (0..n).collect(),
                magnitudes,
                units: model.units,
            };
            write_trace(out, &format!("coherence_numeric{tag}"), s.format, &trace)?;
            let deviation = (!exact_states.is_empty()).then(|| {
                exact_states
                    .iter()
                    .zip(&numeric_states)
                    .map(|(a, b)| a.frobenius_distance(b))
                    .fold(0.0, f64::max)
            });
            numeric = Some((
                NumericSummary {
                    dt,
                    steps,
                    max_error_estimate: max_error,
                    max_deviation_from_exact: deviation,
                },
                trace,
            ));
        }

        let states = if exact_states.is_empty() { &numeric_states } else { &exact_states };
        let max_negativity = if n <= NEGATIVITY_LIMIT && !states.is_empty() {
            let mut best: f64 = 0.0;
            for rho in states {
                best = best.max(max_single_cut_negativity(rho)?);
            }
            Some(best)
        } else {
            None
        };
        if n <= JSON_LIMIT {
            if let Some(last) = states.last() {
                out.write(&format!("final_state{tag}.json"), format!("{}\n", last.to_json_string()?).as_bytes())?;
            }
        }
        let fit_trace = exact_trace.as_ref().or(numeric.as_ref().map(|(_, t)| t)).expect("one method ran");
        summaries.push(SimulationSummary {
            convention: conv,
            kind: model.kind,
            clocks: n,
            units: model.units,
            dephasing: model.dephasing.clone(),
            fits: fit_all(fit_trace),
            max_negativity,
            numeric: numeric.map(|(summary, _)| summary),
        });
    }
    out.json("summary.json", &summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedshiftRow {
    pub convention: FrequencyConvention,
    pub quantity: String,
    pub value: f64,
    pub unit: String,
    pub formula_id: String,
}

fn redshift_result(s: &RedshiftScenario, omega: AngularFrequency, k: &PhysicalConstants) -> Result<(RedshiftDephasing, &'static str)> {
    let gamma_z = Rate(s.gamma_z);
    match &s.body {
        BodySpec::Simple {
            mass,
            distance,
            measurement_rate,
        } => Ok((
            simple_particle_dephasing(*mass, *distance, omega, PositionMeasurementRate(*measurement_rate), gamma_z, k)?,
            "redshift.simple",
        )),
        BodySpec::Shell { inner, outer } => Ok((shell_dephasing(*inner, *outer, omega, gamma_z, k)?, "redshift.shell")),
        BodySpec::Composite {
            atom_mass,
            lattice_constant,
            shape,
            measurement_rate,
        } => {
            let (shape, formula) = match shape {
                ShapeSpec::Shell { inner, outer } => (
                    BodyShape::Shell {
                        inner: *inner,
                        outer: *outer,
                    },
                    "redshift.composite.shell",
                ),
                ShapeSpec::DiscretizedShell { inner, outer } => (
                    BodyShape::Atoms {
                        positions: discretize_shell(s.clock_position, *inner, *outer, *lattice_constant)?,
                    },
                    "redshift.composite.discretized-shell",
                ),
                ShapeSpec::Atoms(p) => (BodyShape::Atoms { positions: p.clone() }, "redshift.composite.atoms"),
            };
            let body = CompositeBody {
                atom_mass: *atom_mass,
                lattice_constant: *lattice_constant,
                shape,
                measurement_rate: measurement_rate.map(PositionMeasurementRate),
            };
            Ok((composite_dephasing(&body, s.clock_position, omega, gamma_z, k)?, formula))
        }
    }
}

fn run_redshift(s: &RedshiftScenario, options: &RunOptions, k: &PhysicalConstants, out: &mut Artifacts) -> Result<()> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &conv in &options.conventions {
        let omega = apply_convention(s.frequency, conv)?;
        let (d, formula) = redshift_result(s, omega, k)?;
        let d = d.with_convention(conv);
        for (quantity, value) in [
            ("total", d.total.0),
            ("measurement_part", d.measurement_part.0),
            ("feedback_part", d.feedback_part.0),
        ] {
            rows.push(RedshiftRow {
                convention: conv,
                quantity: quantity.into(),
                value,
                unit: "Hz".into(),
                formula_id: formula.into(),
            });
        }
        if let Some(b) = &s.bounds {
            let (gi, gz) = bound_parameters(Rate(b.cap), b.mass, b.distance, omega, k)?;
            rows.push(RedshiftRow {
                convention: conv,
                quantity: "gamma_i_lower_bound".into(),
                value: gi.0,
                unit: "Hz m^-2".into(),
                formula_id: "redshift.bound.gamma_i".into(),
            });
            rows.push(RedshiftRow {
                convention: conv,
                quantity: "gamma_z_upper_bound".into(),
                value: gz.0,
                unit: "Hz".into(),
                formula_id: "redshift.bound.gamma_z".into(),
            });
        }
        results.push(d);
    }
    out.rows("redshift", s.format, &rows, &["convention", "quantity", "value", "unit", "formula_id"])?;
    out.json("redshift_detail.json", &results)
}

fn run_report(s: &ReportScenario, k: &PhysicalConstants, out: &mut Artifacts) -> Result<()> {
    let report: HeadlineReport = headline_report_with(k)?;
    match s.format {
        OutputFormat::Csv => out.csv("paper_report.csv", |buf| report.write_csv(buf))?,
        OutputFormat::Json => out.json("paper_report.json", &report)?,
    }
    let gates: Vec<serde_json::Value> = report
        .claims
        .iter()
        .map(|c| {
            serde_json::json!({
                "claim_id": c.id,
                "gate_factor": c.gate_factor,
                "gate_passes": c.gate_passes(),
                "closest": c.closest_row().map(|r| serde_json::json!({
                    "convention": r.convention,
                    "mode": r.mode,
                    "dimension": r.dimension,
                    "computed": r.computed,
                    "status": r.status,
                })),
            })
        })
        .collect();
    out.json("gates.json", &gates)
}
