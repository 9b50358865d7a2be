//! N-clock density-matrix dynamics under the Newtonian σ_z σ_z coupling, with
//! or without the classical-channel dephasing.
//!
//! Simulations run in units where one reference coupling rate is 1. The model
//! carries the conversion back to seconds and hertz.
//!
//! Basis state `a` has clock 0 in its most significant bit; bit value 0 is
//! σ_z = +1.

use std::io::Write;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::constants::{PhysicalConstants, Rate};
use crate::error::{Error, Result};
use crate::geometry::{pair_rate_matrix, ClockArray};
use crate::rates::{dephasing_given_rates, ChannelMode, MeasurementRates};

pub type C64 = Complex<f64>;

/// Largest N stored as a dense 2^N × 2^N matrix.
pub const DENSE_LIMIT: usize = 12;
/// Largest N for the element-wise analytic propagator.
pub const ANALYTIC_LIMIT: usize = 20;
/// Largest N exported as JSON.
pub const JSON_LIMIT: usize = 4;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
/// Numeric evolution fails when an eigenvalue drops below this.
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Log-fit residual, relative to the total log drop, above which a trace is
/// declared non-exponential.
pub const NON_EXPONENTIAL_THRESHOLD: f64 = 1e-3;

fn z(n: usize, i: usize, a: usize) -> f64 {
    if (a >> (n - 1 - i)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    m.clone().symmetric_eigenvalues().iter().copied().collect()
}

/// Single-clock state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qubit(pub [[C64; 2]; 2]);

impl Qubit {
    pub fn zero() -> Self {
        Self::from_bloch(0.0, 0.0, 1.0)
    }

    pub fn one() -> Self {
        Self::from_bloch(0.0, 0.0, -1.0)
    }

    /// (|0⟩ + |1⟩)/√2.
    pub fn plus() -> Self {
        Self::from_bloch(1.0, 0.0, 0.0)
    }

    /// Bloch vector (x, y, z) with |r| ≤ 1.
    pub fn from_bloch(x: f64, y: f64, zc: f64) -> Self {
        let h = 0.5;
        Qubit([
            [C64::new(h * (1.0 + zc), 0.0), C64::new(h * x, -h * y)],
            [C64::new(h * x, h * y), C64::new(h * (1.0 - zc), 0.0)],
        ])
    }

    fn matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(2, 2, |r, c| self.0[r][c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    m: DMatrix<C64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityJson {
    clocks: usize,
    real: Vec<Vec<f64>>,
    imag: Vec<Vec<f64>>,
}

impl DensityMatrix {
    /// Validated density matrix: Hermitian, unit trace, positive semidefinite.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        let rho = Self::wrap(m)?;
        rho.check()?;
        Ok(rho)
    }

    fn wrap(m: DMatrix<C64>) -> Result<Self> {
        let dim = m.nrows();
        if m.ncols() != dim || dim == 0 || !dim.is_power_of_two() {
            return Err(Error::invalid(format!(
                "density matrix must be 2^N x 2^N, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = dim.trailing_zeros() as usize;
        if n > DENSE_LIMIT {
            return Err(Error::TooManyClocks {
                n,
                limit: DENSE_LIMIT,
                hint: "dense states stop at 12 clocks; use product states with the analytic propagator (N <= 20)",
            });
        }
        Ok(Self { n, m })
    }

    /// Re-run the invariant checks.
    pub fn check(&self) -> Result<()> {
        let dev = (&self.m - self.m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if dev > HERMITIAN_TOL {
            return Err(Error::invalid(format!("density matrix is not Hermitian (deviation {dev:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::invalid(format!("density matrix has negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// |ψ⟩⟨ψ| for a normalized state vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("state vector norm² is {norm}, expected 1")));
        }
        let d = psi.len();
        Self::new(DMatrix::from_fn(d, d, |r, c| psi[r] * psi[c].conj()))
    }

    pub fn product(states: &[Qubit]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("product state needs at least one clock"));
        }
        let mut m = states[0].matrix();
        for q in &states[1..] {
            m = m.kronecker(&q.matrix());
        }
        Self::new(m)
    }

    /// |+⟩^⊗N.
    pub fn all_plus(n: usize) -> Result<Self> {
        Self::product(&vec![Qubit::plus(); n])
    }

    pub fn clocks(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn purity(&self) -> f64 {
        (&self.m * &self.m).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.m).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn populations(&self) -> Vec<f64> {
        self.m.diagonal().iter().map(|c| c.re).collect()
    }

    /// Off-diagonal element ⟨0|ρ_i|1⟩ of clock i's reduced state.
    pub fn reduced_coherence(&self, i: usize) -> C64 {
        let mask = 1 << (self.n - 1 - i);
        (0..self.m.nrows())
            .filter(|a| a & mask == 0)
            .map(|a| self.m[(a, a | mask)])
            .sum()
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        (&self.m - &other.m).norm()
    }

    pub fn to_json_string(&self) -> Result<String> {
        if self.n > JSON_LIMIT {
            return Err(Error::TooManyClocks {
                n: self.n,
                limit: JSON_LIMIT,
                hint: "JSON export is limited to 4 clocks",
            });
        }
        let rows = |f: fn(&C64) -> f64| {
            (0..self.m.nrows())
                .map(|r| (0..self.m.ncols()).map(|c| f(&self.m[(r, c)])).collect())
                .collect()
        };
        let doc = DensityJson {
            clocks: self.n,
            real: rows(|c| c.re),
            imag: rows(|c| c.im),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: DensityJson = serde_json::from_str(text)?;
        let dim = 1usize << doc.clocks.min(JSON_LIMIT);
        let shaped = |v: &Vec<Vec<f64>>| v.len() == dim && v.iter().all(|r| r.len() == dim);
        if doc.clocks > JSON_LIMIT || !shaped(&doc.real) || !shaped(&doc.imag) {
            return Err(Error::validation("real/imag", format!("expected {dim}x{dim} arrays")));
        }
        Self::new(DMatrix::from_fn(dim, dim, |r, c| C64::new(doc.real[r][c], doc.imag[r][c])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionKind {
    Unitary,
    CcgPairwise,
    CcgGlobal,
}

impl EvolutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvolutionKind::Unitary => "unitary",
            EvolutionKind::CcgPairwise => "ccg-pairwise",
            EvolutionKind::CcgGlobal => "ccg-global",
        }
    }
}

impl std::fmt::Display for EvolutionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Conversion from model units (reference rate = 1) back to SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitMap {
    pub rate_unit_hz: f64,
    pub time_unit_s: f64,
}

impl UnitMap {
    pub fn from_reference(rate_hz: f64) -> Self {
        Self {
            rate_unit_hz: rate_hz,
            time_unit_s: 1.0 / rate_hz,
        }
    }
}

/// Diagonal generator of the dynamics, in model units:
/// E_a = Σ_i ω_i z_i(a) + sign · Σ_{i<j} g_ij z_i(a) z_j(a), and
/// dρ/dt = −i[H, ρ] − Σ_i D_i [σ_z^(i), [σ_z^(i), ρ]].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionModel {
    pub kind: EvolutionKind,
    pub clocks: usize,
    pub omega: Vec<f64>,
    /// Row-major N×N, zero diagonal.
    pub couplings: Vec<f64>,
    pub dephasing: Vec<f64>,
    /// −1: the interaction lowers the energy of aligned clocks.
    pub interaction_sign: f64,
    pub units: UnitMap,
}

impl EvolutionModel {
    /// Model directly in model units (unit map 1 Hz).
    pub fn from_parts(kind: EvolutionKind, omega: Vec<f64>, couplings: Vec<f64>, dephasing: Vec<f64>) -> Result<Self> {
        let n = omega.len();
        if n == 0 || n > ANALYTIC_LIMIT {
            return Err(Error::TooManyClocks {
                n,
                limit: ANALYTIC_LIMIT,
                hint: "the analytic propagator handles at most 20 clocks",
            });
        }
        if couplings.len() != n * n || dephasing.len() != n {
            return Err(Error::invalid("couplings must be NxN and dephasing length N"));
        }
        if dephasing.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid("dephasing coefficients must be finite and >= 0"));
        }
        if kind == EvolutionKind::Unitary && dephasing.iter().any(|d| *d != 0.0) {
            return Err(Error::invalid("unitary evolution has no dephasing"));
        }
        for i in 0..n {
            for j in 0..n {
                if couplings[i * n + j] != couplings[j * n + i] {
                    return Err(Error::invalid("couplings must be symmetric"));
                }
            }
        }
        Ok(Self {
            kind,
            clocks: n,
            omega,
            couplings,
            dephasing,
            interaction_sign: -1.0,
            units: UnitMap::from_reference(1.0),
        })
    }

    /// Drop Σ ω_i σ_z^(i). It only adds single-clock phases.
    pub fn without_free_term(mut self) -> Self {
        self.omega.iter_mut().for_each(|w| *w = 0.0);
        self
    }

    pub fn with_interaction_sign(mut self, sign: f64) -> Self {
        self.interaction_sign = sign;
        self
    }

    pub fn energy(&self, a: usize) -> f64 {
        let n = self.clocks;
        let mut e = 0.0;
        for i in 0..n {
            let zi = z(n, i, a);
            e += self.omega[i] * zi;
            for j in (i + 1)..n {
                e += self.interaction_sign * self.couplings[i * n + j] * zi * z(n, j, a);
            }
        }
        e
    }

    /// Λ_ab = Σ_i D_i (z_i(a) − z_i(b))².
    pub fn decay_exponent(&self, a: usize, b: usize) -> f64 {
        let n = self.clocks;
        (0..n)
            .filter(|&i| z(n, i, a) != z(n, i, b))
            .map(|i| 4.0 * self.dephasing[i])
            .sum()
    }

    /// Factor multiplying ρ_ab(0) after time t.
    pub fn propagator(&self, a: usize, b: usize, t: f64) -> C64 {
        let phase = -(self.energy(a) - self.energy(b)) * t;
        C64::from_polar((-self.decay_exponent(a, b) * t).exp(), phase)
    }

    /// ⟨0|ρ_i|1⟩(t) for every clock, starting from a product state. Needs no
    /// 2^N storage.
    pub fn product_coherences(&self, states: &[Qubit], t: f64) -> Result<Vec<C64>> {
        let n = self.clocks;
        if states.len() != n {
            return Err(Error::invalid(format!("expected {n} clock states, got {}", states.len())));
        }
        Ok((0..n)
            .map(|i| {
                // a has z_i = +1, b has z_i = −1, every other clock shares its state
                let mut c = states[i].0[0][1]
                    * C64::from_polar((-4.0 * self.dephasing[i] * t).exp(), -2.0 * self.omega[i] * t);
                for j in (0..n).filter(|&j| j != i) {
                    let w = 2.0 * self.interaction_sign * self.couplings[i * n + j] * t;
                    let up = states[j].0[0][0].re;
                    let down = states[j].0[1][1].re;
                    c *= C64::from_polar(up, -w) + C64::from_polar(down, w);
                }
                c
            })
            .collect())
    }

    fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.n != self.clocks {
            return Err(Error::invalid(format!(
                "state has {} clocks, model has {}",
                rho.n, self.clocks
            )));
        }
        Ok(())
    }
}

/// Evolution model for an explicit array. No rates gives unitary evolution;
/// pairwise or global rates give the matching dephasing channel.
pub fn build_model(
    array: &ClockArray,
    rates: Option<&MeasurementRates>,
    constants: &PhysicalConstants,
) -> Result<EvolutionModel> {
    if array.len() > DENSE_LIMIT {
        return Err(Error::TooManyClocks {
            n: array.len(),
            limit: DENSE_LIMIT,
            hint: "use build_analytic_model for the exact propagator only (N <= 20)",
        });
    }
    build_analytic_model(array, rates, constants)
}

/// As [`build_model`] but allows up to 20 clocks; such models can only be
/// evaluated element-wise or on product states.
pub fn build_analytic_model(
    array: &ClockArray,
    rates: Option<&MeasurementRates>,
    constants: &PhysicalConstants,
) -> Result<EvolutionModel> {
    let n = array.len();
    if n == 0 || n > ANALYTIC_LIMIT {
        return Err(Error::TooManyClocks {
            n,
            limit: ANALYTIC_LIMIT,
            hint: "beyond 20 clocks only closed-form rates are available",
        });
    }
    let g = pair_rate_matrix(array, constants)?;
    let max = g.max_coupling();
    let reference = if max > 0.0 { max } else { 1.0 };
    let (kind, dephasing_hz) = match rates {
        None => (EvolutionKind::Unitary, vec![0.0; n]),
        Some(r) => {
            let kind = match r.mode() {
                ChannelMode::Pairwise => EvolutionKind::CcgPairwise,
                ChannelMode::Global => EvolutionKind::CcgGlobal,
            };
            (kind, dephasing_given_rates(&g, r)?.values())
        }
    };
    let mut model = EvolutionModel::from_parts(
        kind,
        array.clocks().iter().map(|c| c.omega.0 / reference).collect(),
        g.as_slice().iter().map(|v| v / reference).collect(),
        dephasing_hz.iter().map(|d| d / reference).collect(),
    )?;
    model.units = UnitMap::from_reference(reference);
    Ok(model)
}

/// Closed-form propagation; every generator is diagonal in the σ_z basis.
pub fn evolve_exact(rho0: &DensityMatrix, model: &EvolutionModel, t: f64) -> Result<DensityMatrix> {
    model.check_state(rho0)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    let dim = rho0.m.nrows();
    let energies: Vec<f64> = (0..dim).map(|a| model.energy(a)).collect();
    let m = DMatrix::from_fn(dim, dim, |a, b| {
        let phase = -(energies[a] - energies[b]) * t;
        rho0.m[(a, b)] * C64::from_polar((-model.decay_exponent(a, b) * t).exp(), phase)
    });
    Ok(DensityMatrix { n: rho0.n, m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericEvolution {
    pub state: DensityMatrix,
    /// Frobenius distance between the run at dt and a run at dt/2.
    pub error_estimate: f64,
    pub steps: usize,
}

/// [D, ρ] for a diagonal operator D.
fn commutator(diag: &[f64], rho: &DMatrix<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(rho.nrows(), rho.ncols(), |a, b| rho[(a, b)] * (diag[a] - diag[b]))
}

struct Generator {
    energies: Vec<f64>,
    z_ops: Vec<(f64, Vec<f64>)>,
}

impl Generator {
    fn new(model: &EvolutionModel) -> Self {
        let n = model.clocks;
        let dim = 1usize << n;
        let energies = (0..dim).map(|a| model.energy(a)).collect();
        let z_ops = (0..n)
            .filter(|&i| model.dephasing[i] != 0.0)
            .map(|i| (model.dephasing[i], (0..dim).map(|a| z(n, i, a)).collect()))
            .collect();
        Self { energies, z_ops }
    }

    fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = commutator(&self.energies, rho) * C64::new(0.0, -1.0);
        for (d, zi) in &self.z_ops {
            let inner = commutator(zi, rho);
            out -= commutator(zi, &inner) * C64::new(*d, 0.0);
        }
        out
    }

    fn run(&self, rho0: &DMatrix<C64>, h: f64, steps: usize) -> DMatrix<C64> {
        let mut rho = rho0.clone();
        let half = C64::new(h / 2.0, 0.0);
        let full = C64::new(h, 0.0);
        let sixth = C64::new(h / 6.0, 0.0);
        for _ in 0..steps {
            let k1 = self.apply(&rho);
            let k2 = self.apply(&(&rho + &k1 * half));
            let k3 = self.apply(&(&rho + &k2 * half));
            let k4 = self.apply(&(&rho + &k3 * full));
            rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * sixth;
        }
        rho
    }
}

/// Fixed-step RK4 integration of the master equation, used as an
/// independent check on [`evolve_exact`].
pub fn evolve_numeric(rho0: &DensityMatrix, model: &EvolutionModel, t: f64, dt: f64) -> Result<NumericEvolution> {
    model.check_state(rho0)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let generator = Generator::new(model);
    let coarse = generator.run(&rho0.m, h, steps);
    let fine = generator.run(&rho0.m, h / 2.0, 2 * steps);
    let error_estimate = (&coarse - &fine).norm();
    if coarse.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::PositivityViolated {
            min_eigenvalue: f64::NEG_INFINITY,
        });
    }
    let state = DensityMatrix { n: rho0.n, m: coarse };
    let min_eigenvalue = state.min_eigenvalue();
    if min_eigenvalue < -POSITIVITY_TOL {
        return Err(Error::PositivityViolated { min_eigenvalue });
    }
    Ok(NumericEvolution {
        state,
        error_estimate,
        steps,
    })
}

/// Σ|negative eigenvalues| of ρ partially transposed over `subsystem`.
pub fn negativity(rho: &DensityMatrix, subsystem: &[usize]) -> Result<f64> {
    let n = rho.n;
    let mut seen = vec![false; n];
    for &i in subsystem {
        if i >= n || seen[i] {
            return Err(Error::invalid(format!("invalid or repeated clock {i} in bipartition")));
        }
        seen[i] = true;
    }
    if subsystem.is_empty() || subsystem.len() == n {
        return Err(Error::invalid("bipartition must leave both sides non-empty"));
    }
    let mask: usize = subsystem.iter().map(|i| 1usize << (n - 1 - i)).sum();
    let dim = rho.m.nrows();
    let pt = DMatrix::from_fn(dim, dim, |a, b| {
        // swap the subsystem bits between row and column
        let a2 = (a & !mask) | (b & mask);
        let b2 = (b & !mask) | (a & mask);
        rho.m[(a2, b2)]
    });
    Ok(hermitian_eigenvalues(&pt).into_iter().filter(|e| *e < 0.0).map(|e| -e).sum())
}

/// |⟨σ₊^(i)⟩| sampled over time for selected clocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTrace {
    /// Model units.
    pub times: Vec<f64>,
    pub clocks: Vec<usize>,
    /// `magnitudes[k][c]` at `times[k]` for clock `clocks[c]`.
    pub magnitudes: Vec<Vec<f64>>,
    pub units: UnitMap,
}

impl CoherenceTrace {
    pub fn column(&self, clock: usize) -> Result<Vec<f64>> {
        let c = self
            .clocks
            .iter()
            .position(|&k| k == clock)
            .ok_or_else(|| Error::invalid(format!("clock {clock} is not in the trace")))?;
        Ok(self.magnitudes.iter().map(|row| row[c]).collect())
    }

    /// Columns t, t_s, then one column per clock.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "t_s".to_string()];
        header.extend(self.clocks.iter().map(|c| format!("clock_{c}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.magnitudes) {
            let mut record = vec![format!("{t:e}"), format!("{:e}", t * self.units.time_unit_s)];
            record.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::invalid("sample times must be finite and >= 0"));
    }
    Ok(())
}

/// Coherence of every clock along the exact evolution of a dense state.
pub fn coherence_trace(rho0: &DensityMatrix, model: &EvolutionModel, times: &[f64]) -> Result<CoherenceTrace> {
    check_times(times)?;
    let mut magnitudes = Vec::with_capacity(times.len());
    for &t in times {
        let rho = evolve_exact(rho0, model, t)?;
        magnitudes.push((0..rho.n).map(|i| rho.reduced_coherence(i).norm()).collect());
    }
    Ok(CoherenceTrace {
        times: times.to_vec(),
        clocks: (0..model.clocks).collect(),
        magnitudes,
        units: model.units,
    })
}

/// Same as [`coherence_trace`] for product initial states, without dense
/// storage.
pub fn coherence_trace_product(states: &[Qubit], model: &EvolutionModel, times: &[f64]) -> Result<CoherenceTrace> {
    check_times(times)?;
    let magnitudes = times
        .iter()
        .map(|&t| Ok(model.product_coherences(states, t)?.iter().map(|c| c.norm()).collect()))
        .collect::<Result<_>>()?;
    Ok(CoherenceTrace {
        times: times.to_vec(),
        clocks: (0..model.clocks).collect(),
        magnitudes,
        units: model.units,
    })
}

/// Least-squares slope and the RMS residual of ln|c| against t.
fn log_fit(times: &[f64], values: &[f64]) -> (f64, f64) {
    let n = times.len() as f64;
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mt = times.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let stt: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    let sty: f64 = times.iter().zip(&y).map(|(t, v)| (t - mt) * (v - my)).sum();
    let slope = sty / stt;
    let rms = (times
        .iter()
        .zip(&y)
        .map(|(t, v)| (v - (my + slope * (t - mt))).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, rms)
}

/// Exponential decay rate of one clock's coherence, in hertz.
///
/// Rejects traces whose log is not a straight line in t: the RMS residual of
/// the fit must stay below [`NON_EXPONENTIAL_THRESHOLD`] times the total drop
/// in ln|c| across the window.
pub fn coherence_decay_rate(trace: &CoherenceTrace, clock: usize) -> Result<Rate> {
    let values = trace.column(clock)?;
    if values.len() < 10 {
        return Err(Error::invalid(format!("decay fit needs >= 10 samples, got {}", values.len())));
    }
    if !(values[0] > 0.0) || values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("coherence must stay positive for a log fit"));
    }
    let (slope, rms) = log_fit(&trace.times, &values);
    let hi = values.iter().map(|v| v.ln()).fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().map(|v| v.ln()).fold(f64::INFINITY, f64::min);
    let drop = hi - lo;
    if drop < 1e-12 {
        return Ok(Rate(0.0));
    }
    let residual = rms / drop;
    if residual > NON_EXPONENTIAL_THRESHOLD {
        return Err(Error::NonExponential {
            residual,
            threshold: NON_EXPONENTIAL_THRESHOLD,
        });
    }
    Ok(Rate(-slope * trace.units.rate_unit_hz))
}

/// Order p of the short-time coherence loss ½ − |c(t)| ∝ t^p, from a log-log
/// fit over the samples with t > 0.
pub fn short_time_loss_order(trace: &CoherenceTrace, clock: usize) -> Result<f64> {
    let values = trace.column(clock)?;
    let c0 = values[0];
    let (x, y): (Vec<f64>, Vec<f64>) = trace
        .times
        .iter()
        .zip(&values)
        .filter(|(t, v)| **t > 0.0 && c0 - **v > 0.0)
        .map(|(t, v)| (t.ln(), (c0 - v).ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::invalid("need at least three samples with measurable coherence loss"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{AngularFrequency, CODATA_2018};
    use crate::geometry::ClockSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn two_clock_array() -> ClockArray {
        let w = AngularFrequency(1e15);
        ClockArray::new(vec![ClockSpec::new(w, [0.0; 3]), ClockSpec::new(w, [3e-7, 0.0, 0.0])]).unwrap()
    }

    /// Two clocks, g = 1, no free term.
    fn pair(kind: EvolutionKind, d: f64) -> EvolutionModel {
        let dephasing = if kind == EvolutionKind::Unitary { vec![0.0; 2] } else { vec![d; 2] };
        EvolutionModel::from_parts(kind, vec![0.0; 2], vec![0.0, 1.0, 1.0, 0.0], dephasing).unwrap()
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        // mixture of two random pure states
        let dim = 1 << n;
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for w in [0.7, 0.3] {
            let v: Vec<C64> = (0..dim).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for r in 0..dim {
                for c in 0..dim {
                    m[(r, c)] += v[r] * v[c].conj() * C64::new(w / (norm * norm), 0.0);
                }
            }
        }
        // restore exact Hermiticity after rounding
        let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let tr = m.trace();
        DensityMatrix::new(m / tr).unwrap()
    }

    fn random_model(n: usize, rng: &mut ChaCha8Rng) -> EvolutionModel {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.1..1.0);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        let omega = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        EvolutionModel::from_parts(EvolutionKind::CcgGlobal, omega, g, d).unwrap()
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::all_plus(2).is_ok());
        let bad_trace = DMatrix::from_element(2, 2, C64::new(0.0, 0.0));
        assert!(DensityMatrix::new(bad_trace).is_err());
        let non_herm = DMatrix::from_row_slice(2, 2, &[C64::new(0.5, 0.0), C64::new(0.1, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)]);
        assert!(DensityMatrix::new(non_herm).is_err());
        let negative = DMatrix::from_row_slice(2, 2, &[C64::new(0.5, 0.0), C64::new(0.9, 0.0), C64::new(0.9, 0.0), C64::new(0.5, 0.0)]);
        assert!(DensityMatrix::new(negative).is_err());
        assert!(DensityMatrix::new(DMatrix::identity(3, 3)).is_err());
        assert!(DensityMatrix::pure(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_state(2, &mut rng);
        let back = DensityMatrix::from_json_str(&rho.to_json_string().unwrap()).unwrap();
        assert_eq!(back, rho);
        assert!(DensityMatrix::all_plus(5).unwrap().to_json_string().is_err());
        assert!(DensityMatrix::from_json_str(r#"{"clocks":1,"real":[[1,0]],"imag":[[0,0]]}"#).is_err());
    }

    #[test]
    fn build_model_examples() {
        let w = AngularFrequency(2.0);
        let single = ClockArray::new(vec![ClockSpec::new(w, [0.0; 3])]).unwrap();
        let m = build_model(&single, None, &CODATA_2018).unwrap();
        assert_eq!(m.kind, EvolutionKind::Unitary);
        assert_eq!(m.dephasing, vec![0.0]);
        assert_eq!(m.energy(0), 2.0);
        assert_eq!(m.energy(1), -2.0);

        let array = two_clock_array();
        let g = pair_rate_matrix(&array, &CODATA_2018).unwrap().get(0, 1);
        let rates = MeasurementRates::uniform(ChannelMode::Global, 2, g / 2.0);
        let m = build_model(&array, Some(&rates), &CODATA_2018).unwrap();
        assert_eq!(m.kind, EvolutionKind::CcgGlobal);
        assert!((m.units.rate_unit_hz - g).abs() < 1e-15 * g);
        for d in &m.dephasing {
            assert!((d - 0.5).abs() < 1e-14);
        }
        assert_eq!(m.couplings[1], 1.0);
    }

    #[test]
    fn three_clock_coefficients_match_rates_module() {
        let w = AngularFrequency(1e15);
        let array = ClockArray::new(vec![
            ClockSpec::new(w, [0.0; 3]),
            ClockSpec::new(w, [1e-6, 0.0, 0.0]),
            ClockSpec::new(w, [0.0, 3e-6, 0.0]),
        ])
        .unwrap();
        let g = pair_rate_matrix(&array, &CODATA_2018).unwrap();
        let rates = MeasurementRates::Global(vec![1e-42, 3e-42, 2e-43]);
        let expected = dephasing_given_rates(&g, &rates).unwrap().values();
        let m = build_model(&array, Some(&rates), &CODATA_2018).unwrap();
        for (d, e) in m.dephasing.iter().zip(expected) {
            assert!((d * m.units.rate_unit_hz - e).abs() <= 1e-14 * e);
        }
    }

    #[test]
    fn too_many_clocks_suggests_analytic_mode() {
        let array = crate::geometry::build_lattice(1, 1e-6, &[13], AngularFrequency(1.0)).unwrap();
        match build_model(&array, None, &CODATA_2018).unwrap_err() {
            Error::TooManyClocks { n, limit, hint } => {
                assert_eq!((n, limit), (13, 12));
                assert!(hint.contains("20"));
            }
            e => panic!("{e}"),
        }
        assert!(build_analytic_model(&array, None, &CODATA_2018).is_ok());
        let big = crate::geometry::build_lattice(1, 1e-6, &[21], AngularFrequency(1.0)).unwrap();
        assert!(build_analytic_model(&big, None, &CODATA_2018).is_err());
    }

    #[test]
    fn exact_single_clock() {
        // [σz,[σz,ρ]] has off-diagonals 4ρ01, so ρ01 decays as e^(−4Dt)
        let d = 0.3;
        let m = EvolutionModel::from_parts(EvolutionKind::CcgGlobal, vec![0.0], vec![0.0], vec![d]).unwrap();
        let rho0 = DensityMatrix::product(&[Qubit::plus()]).unwrap();
        assert_eq!(evolve_exact(&rho0, &m, 0.0).unwrap(), rho0);
        for t in [0.1, 1.0, 4.0] {
            let rho = evolve_exact(&rho0, &m, t).unwrap();
            assert!((rho.matrix()[(0, 1)].re - 0.5 * (-4.0 * d * t).exp()).abs() < 1e-15);
        }
        assert!(evolve_exact(&rho0, &m, -1.0).is_err());
    }

    #[test]
    fn optimum_pair_decays_at_twice_coupling() {
        let array = two_clock_array();
        let g = pair_rate_matrix(&array, &CODATA_2018).unwrap().get(0, 1);
        let rates = MeasurementRates::uniform(ChannelMode::Global, 2, g / 2.0);
        let m = build_model(&array, Some(&rates), &CODATA_2018).unwrap().without_free_term();
        let rho0 = DensityMatrix::product(&[Qubit::plus(), Qubit::zero()]).unwrap();
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.05).collect();
        let trace = coherence_trace(&rho0, &m, &times).unwrap();
        let rate = coherence_decay_rate(&trace, 0).unwrap();
        assert!((rate.0 - 2.0 * g).abs() < 1e-9 * g);
    }

    #[test]
    fn unitary_trace_is_rejected() {
        let m = pair(EvolutionKind::Unitary, 0.0);
        let times: Vec<f64> = (0..30).map(|k| k as f64 * 0.02).collect();
        let trace = coherence_trace(&DensityMatrix::all_plus(2).unwrap(), &m, &times).unwrap();
        for (t, row) in times.iter().zip(&trace.magnitudes) {
            assert!((row[0] - 0.5 * (2.0 * t).cos().abs()).abs() < 1e-15);
        }
        assert!(matches!(coherence_decay_rate(&trace, 0), Err(Error::NonExponential { .. })));
    }

    #[test]
    fn free_clocks_do_not_decay() {
        let m = EvolutionModel::from_parts(EvolutionKind::Unitary, vec![1.0, 2.0], vec![0.0; 4], vec![0.0; 2]).unwrap();
        let times: Vec<f64> = (0..12).map(|k| k as f64).collect();
        let trace = coherence_trace(&DensityMatrix::all_plus(2).unwrap(), &m, &times).unwrap();
        assert_eq!(coherence_decay_rate(&trace, 1).unwrap().0, 0.0);
        assert!(coherence_decay_rate(&trace, 7).is_err());
        let short = coherence_trace(&DensityMatrix::all_plus(2).unwrap(), &m, &times[..5]).unwrap();
        assert!(coherence_decay_rate(&short, 0).is_err());
    }

    #[test]
    fn first_versus_second_order_loss() {
        let times: Vec<f64> = (1..=10).map(|k| k as f64 * 1e-4).collect();
        let rho0 = DensityMatrix::all_plus(2).unwrap();
        let unitary = coherence_trace(&rho0, &pair(EvolutionKind::Unitary, 0.0), &times).unwrap();
        let ccg = coherence_trace(&rho0, &pair(EvolutionKind::CcgGlobal, 0.5), &times).unwrap();
        let with_zero = |tr: CoherenceTrace| {
            let mut t = vec![0.0];
            t.extend(&tr.times);
            let mut mags = vec![vec![0.5, 0.5]];
            mags.extend(tr.magnitudes);
            CoherenceTrace { times: t, magnitudes: mags, ..tr }
        };
        let pu = short_time_loss_order(&with_zero(unitary), 0).unwrap();
        let pc = short_time_loss_order(&with_zero(ccg), 0).unwrap();
        assert!((pu - 2.0).abs() < 0.01, "{pu}");
        assert!((pc - 1.0).abs() < 0.01, "{pc}");
    }

    #[test]
    fn negativity_examples() {
        let rho0 = DensityMatrix::all_plus(2).unwrap();
        assert!(negativity(&rho0, &[0]).unwrap().abs() < 1e-15);
        let rho = evolve_exact(&rho0, &pair(EvolutionKind::Unitary, 0.0), PI / 4.0).unwrap();
        assert!((negativity(&rho, &[0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((negativity(&rho, &[1]).unwrap() - 0.5).abs() < 1e-12);

        let m = pair(EvolutionKind::CcgGlobal, 0.5);
        for k in 0..=64 {
            let t = 2.0 * PI * k as f64 / 64.0;
            let rho = evolve_exact(&rho0, &m, t).unwrap();
            assert!(negativity(&rho, &[0]).unwrap() <= 1e-10);
        }
        assert!(negativity(&rho0, &[]).is_err());
        assert!(negativity(&rho0, &[0, 1]).is_err());
        assert!(negativity(&rho0, &[2]).is_err());
        assert!(negativity(&rho0, &[0, 0]).is_err());
    }

    #[test]
    fn numeric_matches_exact_for_pair() {
        let rho0 = DensityMatrix::all_plus(2).unwrap();
        let m = pair(EvolutionKind::CcgPairwise, 0.5);
        for t in [0.5, 2.0, 5.0] {
            let exact = evolve_exact(&rho0, &m, t).unwrap();
            let numeric = evolve_numeric(&rho0, &m, t, t / 1e4).unwrap();
            assert!(numeric.state.frobenius_distance(&exact) < 1e-8);
            assert!(numeric.error_estimate < 1e-8);
            assert_eq!(numeric.steps, 10_000);
        }
    }

    #[test]
    fn numeric_unitary_conserves_purity() {
        let rho0 = DensityMatrix::all_plus(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = random_model(3, &mut rng);
        m.kind = EvolutionKind::Unitary;
        m.dephasing = vec![0.0; 3];
        let out = evolve_numeric(&rho0, &m, 3.0, 1e-3).unwrap();
        assert!((out.state.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn numeric_single_qubit_decay() {
        let m = EvolutionModel::from_parts(EvolutionKind::CcgPairwise, vec![0.0], vec![0.0], vec![0.25]).unwrap();
        let rho0 = DensityMatrix::product(&[Qubit::plus()]).unwrap();
        let out = evolve_numeric(&rho0, &m, 2.0, 1e-3).unwrap();
        assert!((out.state.matrix()[(0, 1)].re - 0.5 * (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn numeric_flags_lost_positivity() {
        // a step far beyond the RK4 stability region
        let m = EvolutionModel::from_parts(EvolutionKind::CcgPairwise, vec![0.0], vec![0.0], vec![10.0]).unwrap();
        let rho0 = DensityMatrix::product(&[Qubit::plus()]).unwrap();
        assert!(matches!(evolve_numeric(&rho0, &m, 1.0, 1.0), Err(Error::PositivityViolated { .. })));
        assert!(evolve_numeric(&rho0, &m, 1.0, 0.0).is_err());
    }

    #[test]
    fn product_mode_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(4, &mut rng);
        let states: Vec<Qubit> = (0..4)
            .map(|_| {
                let (x, y, zc): (f64, f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                Qubit::from_bloch(x, y, zc)
            })
            .collect();
        let rho0 = DensityMatrix::product(&states).unwrap();
        for t in [0.0, 0.3, 1.7] {
            let rho = evolve_exact(&rho0, &m, t).unwrap();
            let lazy = m.product_coherences(&states, t).unwrap();
            for i in 0..4 {
                assert!((rho.reduced_coherence(i) - lazy[i]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn twenty_clock_product_coherence() {
        let array = crate::geometry::build_lattice(1, 1e-6, &[20], AngularFrequency(1e15)).unwrap();
        let g = pair_rate_matrix(&array, &CODATA_2018).unwrap();
        let (_, rates) = crate::rates::min_dephasing_global_a(&g);
        let m = build_analytic_model(&array, Some(&rates), &CODATA_2018).unwrap().without_free_term();
        let states = vec![Qubit::plus(); 20];
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let trace = coherence_trace_product(&states, &m, &times).unwrap();
        // neighbours in superposition modulate the coherence, so only the
        // dephasing envelope bounds it
        for (t, row) in times.iter().zip(&trace.magnitudes) {
            for (i, c) in row.iter().enumerate() {
                assert!(*c <= 0.5 * (-4.0 * m.dephasing[i] * t).exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn trace_csv_layout() {
        let m = pair(EvolutionKind::CcgGlobal, 0.5);
        let trace = coherence_trace(&DensityMatrix::all_plus(2).unwrap(), &m, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,t_s,clock_0,clock_1");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn interaction_sign_changes_phases_only() {
        let rho0 = DensityMatrix::all_plus(2).unwrap();
        let m = pair(EvolutionKind::CcgGlobal, 0.5);
        let flipped = m.clone().with_interaction_sign(1.0);
        for t in [0.2, 1.1] {
            let a = evolve_exact(&rho0, &m, t).unwrap();
            let b = evolve_exact(&rho0, &flipped, t).unwrap();
            for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
                assert!((x.norm() - y.norm()).abs() < 1e-15);
            }
            assert!((a.reduced_coherence(0).norm() - b.reduced_coherence(0).norm()).abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn exact_invariants(seed in any::<u64>(), n in 1usize..5, t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho0 = random_state(n, &mut rng);
            let m = random_model(n, &mut rng);
            let a = evolve_exact(&rho0, &m, t1 + t2).unwrap();
            let b = evolve_exact(&evolve_exact(&rho0, &m, t1).unwrap(), &m, t2).unwrap();
            prop_assert!(a.frobenius_distance(&b) < 1e-13);
            prop_assert!((a.trace() - 1.0).abs() < 1e-10);
            prop_assert!((a.matrix() - a.matrix().adjoint()).norm() < 1e-10);
            prop_assert_eq!(a.populations(), rho0.populations());
        }

        #[test]
        fn numeric_agrees_with_exact(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho0 = random_state(n, &mut rng);
            let m = random_model(n, &mut rng);
            let t = 1.5;
            let exact = evolve_exact(&rho0, &m, t).unwrap();
            let numeric = evolve_numeric(&rho0, &m, t, 1e-3).unwrap();
            prop_assert!(numeric.state.frobenius_distance(&exact) < 1e-8);
            prop_assert!((numeric.state.trace() - 1.0).abs() < 1e-10);
            for (x, y) in numeric.state.populations().iter().zip(rho0.populations()) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }

        #[test]
        fn ccg_pairs_stay_separable(seed in any::<u64>(), t in 0.0f64..6.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let states: Vec<Qubit> = (0..2).map(|_| {
                let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1.0);
                Qubit::from_bloch(v[0] / r, v[1] / r, v[2] / r)
            }).collect();
            let rho0 = DensityMatrix::product(&states).unwrap();
            let g: f64 = rng.random_range(0.1..2.0);
            for kind in [EvolutionKind::CcgPairwise, EvolutionKind::CcgGlobal] {
                let m = EvolutionModel::from_parts(kind, vec![0.0; 2], vec![0.0, g, g, 0.0], vec![g / 2.0; 2]).unwrap();
                let rho = evolve_exact(&rho0, &m, t).unwrap();
                prop_assert!(negativity(&rho, &[0]).unwrap() <= 1e-10);
            }
        }

        #[test]
        fn ccg_coherence_never_increases(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(3, &mut rng);
            let times: Vec<f64> = (0..25).map(|k| k as f64 * 0.2).collect();
            let trace = coherence_trace_product(&[Qubit::plus(), Qubit::zero(), Qubit::one()], &m, &times).unwrap();
            for w in trace.magnitudes.windows(2) {
                prop_assert!(w[1][0] <= w[0][0] + 1e-15);
            }
        }
    }
}
