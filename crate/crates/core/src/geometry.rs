//! Clock arrays, pair distances and the Newtonian pair interaction rate
//! g_ij = Għω_iω_j / (d_ij c⁴).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{AngularFrequency, FrequencyConvention, PhysicalConstants, Rate};
use crate::error::{Error, Result};

pub type Position = [f64; 3];

/// One two-level clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSpec {
    pub omega: AngularFrequency,
    pub position: Position,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_mass: Option<f64>,
}

impl ClockSpec {
    pub fn new(omega: AngularFrequency, position: Position) -> Self {
        Self {
            omega,
            position,
            rest_mass: None,
        }
    }
}

/// Regular-grid metadata attached to arrays produced by [`build_lattice`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeInfo {
    pub dimension: usize,
    pub lattice_constant: f64,
    pub extent: Vec<usize>,
}

impl LatticeInfo {
    pub fn count(&self) -> usize {
        self.extent.iter().product()
    }
}

/// An ordered set of clocks. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockArray {
    clocks: Vec<ClockSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lattice: Option<LatticeInfo>,
    /// Convention under which the angular frequencies were obtained.
    #[serde(default)]
    convention: FrequencyConvention,
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl ClockArray {
    /// Validate and wrap an explicit list of clocks.
    pub fn new(clocks: Vec<ClockSpec>) -> Result<Self> {
        Self::with_metadata(clocks, None, FrequencyConvention::Direct)
    }

    pub fn with_metadata(
        clocks: Vec<ClockSpec>,
        lattice: Option<LatticeInfo>,
        convention: FrequencyConvention,
    ) -> Result<Self> {
        let array = Self {
            clocks,
            lattice,
            convention,
        };
        array.validate()?;
        Ok(array)
    }

    /// Parse the JSON interchange form and validate it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let array: ClockArray = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::validation(e.path().to_string(), e.inner().to_string()))?;
        array.validate()?;
        Ok(array)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.clocks.is_empty() {
            return Err(Error::invalid("a clock array needs at least one clock"));
        }
        for (i, c) in self.clocks.iter().enumerate() {
            if !c.omega.0.is_finite() || c.omega.0 < 0.0 {
                return Err(Error::invalid(format!("clock {i}: omega must be finite and >= 0")));
            }
            if c.position.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("clock {i}: position must be finite")));
            }
            if let Some(m) = c.rest_mass {
                if !m.is_finite() || m < 0.0 {
                    return Err(Error::invalid(format!("clock {i}: rest mass must be >= 0")));
                }
            }
        }
        match &self.lattice {
            Some(lattice) => self.check_lattice(lattice),
            None => self.check_distinct(),
        }
    }

    fn check_distinct(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.clocks.len()).collect();
        order.sort_by(|&a, &b| {
            let pa = &self.clocks[a].position;
            let pb = &self.clocks[b].position;
            pa.partial_cmp(pb).expect("positions are finite")
        });
        for w in order.windows(2) {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            if distance(&self.clocks[a].position, &self.clocks[b].position) == 0.0 {
                return Err(Error::CoincidentClocks { i: a, j: b });
            }
        }
        Ok(())
    }

    fn check_lattice(&self, lattice: &LatticeInfo) -> Result<()> {
        check_lattice_shape(lattice.dimension, lattice.lattice_constant, &lattice.extent)?;
        if lattice.count() != self.clocks.len() {
            return Err(Error::invalid(format!(
                "lattice extent {:?} implies {} clocks but the array has {}",
                lattice.extent,
                lattice.count(),
                self.clocks.len()
            )));
        }
        let tol = 1e-9 * lattice.lattice_constant;
        for (idx, clock) in self.clocks.iter().enumerate() {
            let expected = grid_position(idx, lattice.lattice_constant, &lattice.extent);
            if distance(&expected, &clock.position) > tol {
                return Err(Error::invalid(format!(
                    "clock {idx} at {:?} is off the declared lattice (expected {:?})",
                    clock.position, expected
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clocks.is_empty()
    }

    pub fn clocks(&self) -> &[ClockSpec] {
        &self.clocks
    }

    pub fn lattice(&self) -> Option<&LatticeInfo> {
        self.lattice.as_ref()
    }

    pub fn convention(&self) -> FrequencyConvention {
        self.convention
    }

    /// Common angular frequency if all clocks agree to 1e-12 relative.
    pub fn uniform_omega(&self) -> Option<AngularFrequency> {
        let w0 = self.clocks[0].omega.0;
        let same = self
            .clocks
            .iter()
            .all(|c| (c.omega.0 - w0).abs() <= 1e-12 * w0.abs().max(c.omega.0.abs()));
        same.then_some(AngularFrequency(w0))
    }

    /// Index of the clock nearest the centroid; ties go to the lowest index.
    pub fn center_index(&self) -> usize {
        let n = self.clocks.len() as f64;
        let mut centroid = [0.0; 3];
        for c in &self.clocks {
            for k in 0..3 {
                centroid[k] += c.position[k] / n;
            }
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.clocks.iter().enumerate() {
            let d = distance(&c.position, &centroid);
            // relative slack so that mirror-image clocks tie exactly
            if d < best_d * (1.0 - 1e-12) {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Distances from clock `i` to every other clock, in index order.
    pub fn distances_from(&self, i: usize) -> Vec<f64> {
        let p = self.clocks[i].position;
        self.clocks
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, c)| distance(&p, &c.position))
            .collect()
    }

    /// Row i of the pair-rate matrix without the diagonal, without building the
    /// full N×N matrix.
    pub fn pair_rate_row(&self, i: usize, k: &PhysicalConstants) -> Result<Vec<f64>> {
        let ci = &self.clocks[i];
        self.clocks
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, cj)| {
                pair_coupling(ci, cj, k).map_err(|_| Error::CoincidentClocks {
                    i: i.min(j),
                    j: i.max(j),
                })
            })
            .collect()
    }

    /// Copy with every position scaled by `s` (lattice constant too).
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let clocks = self
            .clocks
            .iter()
            .map(|c| ClockSpec {
                position: [c.position[0] * s, c.position[1] * s, c.position[2] * s],
                ..*c
            })
            .collect();
        let lattice = self.lattice.as_ref().map(|l| LatticeInfo {
            lattice_constant: l.lattice_constant * s,
            ..l.clone()
        });
        Self::with_metadata(clocks, lattice, self.convention)
    }
}

fn check_lattice_shape(dimension: usize, lattice_constant: f64, counts: &[usize]) -> Result<()> {
    if !(1..=3).contains(&dimension) {
        return Err(Error::invalid(format!("lattice dimension must be 1, 2 or 3, got {dimension}")));
    }
    if !(lattice_constant.is_finite() && lattice_constant > 0.0) {
        return Err(Error::invalid(format!(
            "lattice constant must be positive, got {lattice_constant}"
        )));
    }
    if counts.len() != dimension {
        return Err(Error::invalid(format!(
            "expected {dimension} per-axis counts, got {}",
            counts.len()
        )));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("per-axis counts must be >= 1"));
    }
    Ok(())
}

/// Position of lattice site `idx` (x varies fastest), centered on the origin.
fn grid_position(idx: usize, lattice_constant: f64, counts: &[usize]) -> Position {
    let mut pos = [0.0; 3];
    let mut rem = idx;
    for (axis, &n) in counts.iter().enumerate() {
        let k = rem % n;
        rem /= n;
        pos[axis] = (k as f64 - (n as f64 - 1.0) / 2.0) * lattice_constant;
    }
    pos
}

/// Regular 1D/2D/3D grid of identical clocks with spacing `lattice_constant`,
/// centered on the origin.
pub fn build_lattice(
    dimension: usize,
    lattice_constant: f64,
    counts: &[usize],
    omega: AngularFrequency,
) -> Result<ClockArray> {
    build_lattice_with_convention(dimension, lattice_constant, counts, omega, FrequencyConvention::Direct)
}

pub fn build_lattice_with_convention(
    dimension: usize,
    lattice_constant: f64,
    counts: &[usize],
    omega: AngularFrequency,
    convention: FrequencyConvention,
) -> Result<ClockArray> {
    check_lattice_shape(dimension, lattice_constant, counts)?;
    let n: usize = counts.iter().product();
    let clocks = (0..n)
        .map(|idx| ClockSpec::new(omega, grid_position(idx, lattice_constant, counts)))
        .collect();
    // consistent by construction; skip the O(N) re-check
    Ok(ClockArray {
        clocks,
        lattice: Some(LatticeInfo {
            dimension,
            lattice_constant,
            extent: counts.to_vec(),
        }),
        convention,
    })
}

fn pair_coupling(c1: &ClockSpec, c2: &ClockSpec, k: &PhysicalConstants) -> Result<f64> {
    let d = distance(&c1.position, &c2.position);
    if d == 0.0 {
        return Err(Error::invalid("coincident clock positions: the pair interaction diverges"));
    }
    Ok(k.g * k.hbar / k.c4() * (c1.omega.0 * c2.omega.0) / d)
}

/// Newtonian interaction rate Għω₁ω₂/(d₁₂c⁴) between two clocks.
pub fn pair_interaction_rate(c1: &ClockSpec, c2: &ClockSpec, k: &PhysicalConstants) -> Result<Rate> {
    pair_coupling(c1, c2, k).map(Rate)
}

/// Symmetric N×N matrix of pair interaction rates (Hz) with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRateMatrix {
    n: usize,
    g: Vec<f64>,
    distances: Vec<f64>,
    uniform_omega: Option<AngularFrequency>,
    /// Għω²/(2c⁴) when every clock shares one frequency.
    prefactor: Option<f64>,
    convention: FrequencyConvention,
}

impl PairRateMatrix {
    /// Build directly from couplings, e.g. in dimensionless simulation units.
    /// Only the upper triangle of `g` is read; it is mirrored.
    pub fn from_couplings(n: usize, g: &[f64]) -> Result<Self> {
        if n == 0 || g.len() != n * n {
            return Err(Error::invalid(format!("expected a {n}x{n} coupling matrix")));
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = g[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("coupling ({i},{j}) must be finite and >= 0")));
                }
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Ok(Self {
            n,
            g: data,
            distances: Vec::new(),
            uniform_omega: None,
            prefactor: None,
            convention: FrequencyConvention::Direct,
        })
    }

    /// All pairs coupled with the same rate `g`.
    pub fn uniform(n: usize, g: f64) -> Result<Self> {
        Self::from_couplings(n, &vec![g; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.g[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.g
    }

    /// Pair distance, when the matrix was built from a geometry.
    pub fn distance(&self, i: usize, j: usize) -> Option<f64> {
        self.distances.get(i * self.n + j).copied()
    }

    pub fn uniform_omega(&self) -> Option<AngularFrequency> {
        self.uniform_omega
    }

    pub fn convention(&self) -> FrequencyConvention {
        self.convention
    }

    /// Closed-form prefactor Għω²/(2c⁴) (Hz·m), present only for
    /// equal-frequency arrays built from a geometry.
    pub fn closed_form_prefactor(&self) -> Option<f64> {
        self.prefactor
    }

    /// Same matrix divided by `reference`, for dimensionless simulation.
    pub fn rescaled(&self, reference: f64) -> Self {
        Self {
            g: self.g.iter().map(|v| v / reference).collect(),
            distances: Vec::new(),
            uniform_omega: None,
            prefactor: None,
            ..self.clone()
        }
    }

    /// Largest off-diagonal entry.
    pub fn max_coupling(&self) -> f64 {
        self.g.iter().copied().fold(0.0, f64::max)
    }
}

/// Full pair-rate matrix of an array. Rows are filled in parallel; each entry
/// is computed independently so the result does not depend on scheduling.
pub fn pair_rate_matrix(array: &ClockArray, k: &PhysicalConstants) -> Result<PairRateMatrix> {
    let n = array.len();
    let clocks = array.clocks();
    let rows: Vec<Vec<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    let d = distance(&clocks[i].position, &clocks[j].position);
                    (d, k.g * k.hbar / k.c4() * (clocks[i].omega.0 * clocks[j].omega.0) / d)
                })
                .collect()
        })
        .collect();
    let mut g = vec![0.0; n * n];
    let mut distances = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, (d, v)) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            if d == 0.0 {
                return Err(Error::CoincidentClocks { i, j });
            }
            g[i * n + j] = v;
            g[j * n + i] = v;
            distances[i * n + j] = d;
            distances[j * n + i] = d;
        }
    }
    Ok(PairRateMatrix {
        n,
        g,
        distances,
        uniform_omega: array.uniform_omega(),
        prefactor: array.uniform_omega().map(|w| k.rate_prefactor(w)),
        convention: array.convention(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::CODATA_2018;
    use proptest::prelude::*;

    const W: AngularFrequency = AngularFrequency(1e15);

    fn clock(x: f64, y: f64, z: f64) -> ClockSpec {
        ClockSpec::new(W, [x, y, z])
    }

    #[test]
    fn chain_of_three_is_symmetric_about_origin() {
        let a = build_lattice(1, 1e-6, &[3], W).unwrap();
        let xs: Vec<f64> = a.clocks().iter().map(|c| c.position[0]).collect();
        assert_eq!(xs, vec![-1e-6, 0.0, 1e-6]);
        assert_eq!(a.center_index(), 1);
    }

    #[test]
    fn cube_corners() {
        let a = build_lattice(3, 1e-10, &[2, 2, 2], W).unwrap();
        assert_eq!(a.len(), 8);
        let d = a.distances_from(0);
        let nn = d.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((nn - 1e-10).abs() < 1e-25);
        for c in a.clocks() {
            for x in c.position {
                assert!((x.abs() - 0.5e-10).abs() < 1e-25);
            }
        }
    }

    #[test]
    fn planar_million_clock_array() {
        let a = build_lattice(2, 8e-7, &[1000, 1000], W).unwrap();
        assert_eq!(a.len(), 1_000_000);
        assert_eq!(a.lattice().unwrap().count(), 1_000_000);
    }

    #[test]
    fn lattice_rejects_bad_shapes() {
        assert!(build_lattice(1, 0.0, &[3], W).is_err());
        assert!(build_lattice(1, -1.0, &[3], W).is_err());
        assert!(build_lattice(2, 1.0, &[3, 0], W).is_err());
        assert!(build_lattice(4, 1.0, &[1, 1, 1, 1], W).is_err());
        assert!(build_lattice(2, 1.0, &[3], W).is_err());
    }

    #[test]
    fn two_clocks_at_300nm() {
        let g = pair_interaction_rate(&clock(0.0, 0.0, 0.0), &clock(3e-7, 0.0, 0.0), &CODATA_2018)
            .unwrap()
            .0;
        // hand evaluation: 6.6743e-11 * 1.054571817e-34 * 1e30 / (3e-7 * 2.99792458e8^4)
        let c4 = 2.99792458e8_f64.powi(4);
        let expected = 6.6743e-11 * 1.054571817e-34 * 1e30 / (3e-7 * c4);
        assert!((g - expected).abs() < 1e-12 * expected);
        assert!((g - 2.9045e-42).abs() < 1e-45, "g = {g:e}");
        assert!((g / 2.0 - 1.45e-42).abs() < 0.01e-42);
    }

    #[test]
    fn zero_frequency_and_distance_scaling() {
        let silent = ClockSpec::new(AngularFrequency(0.0), [0.0; 3]);
        assert_eq!(pair_interaction_rate(&silent, &clock(1.0, 0.0, 0.0), &CODATA_2018).unwrap().0, 0.0);
        let g1 = pair_interaction_rate(&clock(0.0, 0.0, 0.0), &clock(1e-6, 0.0, 0.0), &CODATA_2018).unwrap().0;
        let g2 = pair_interaction_rate(&clock(0.0, 0.0, 0.0), &clock(2e-6, 0.0, 0.0), &CODATA_2018).unwrap().0;
        assert!((g1 / g2 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn coincident_clocks_are_an_error() {
        assert!(pair_interaction_rate(&clock(1.0, 2.0, 3.0), &clock(1.0, 2.0, 3.0), &CODATA_2018).is_err());
        let err = ClockArray::new(vec![clock(0.0, 0.0, 0.0), clock(1.0, 0.0, 0.0), clock(0.0, 0.0, 0.0)])
            .unwrap_err();
        assert!(matches!(err, Error::CoincidentClocks { i: 0, j: 2 }), "{err}");
    }

    #[test]
    fn two_clock_matrix() {
        let a = ClockArray::new(vec![clock(0.0, 0.0, 0.0), clock(3e-7, 0.0, 0.0)]).unwrap();
        let m = pair_rate_matrix(&a, &CODATA_2018).unwrap();
        let g = pair_interaction_rate(&a.clocks()[0], &a.clocks()[1], &CODATA_2018).unwrap().0;
        assert_eq!(m.get(0, 1), g);
        assert_eq!(m.get(1, 0), g);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn collinear_triple_distance_ratios() {
        let a = build_lattice(1, 5e-7, &[3], W).unwrap();
        let m = pair_rate_matrix(&a, &CODATA_2018).unwrap();
        assert!((m.get(0, 1) - m.get(1, 2)).abs() <= 1e-15 * m.get(0, 1));
        assert!((m.get(0, 1) - 2.0 * m.get(0, 2)).abs() <= 1e-14 * m.get(0, 1));
    }

    #[test]
    fn matrix_matches_brute_force_double_loop() {
        let pts = [
            [0.1, 0.7, -0.2],
            [0.4, -0.3, 0.9],
            [-0.8, 0.2, 0.5],
            [0.0, 0.0, 0.0],
            [0.3, 0.3, 0.3],
        ];
        let omegas = [1e15, 2e15, 5e14, 1.5e15, 1e15];
        let clocks: Vec<_> = pts
            .iter()
            .zip(omegas)
            .map(|(p, w)| ClockSpec::new(AngularFrequency(w), [p[0] * 1e-6, p[1] * 1e-6, p[2] * 1e-6]))
            .collect();
        let a = ClockArray::new(clocks.clone()).unwrap();
        let m = pair_rate_matrix(&a, &CODATA_2018).unwrap();
        let (gc, hbar, c) = (6.67430e-11, 1.054571817e-34, 2.99792458e8);
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j {
                    0.0
                } else {
                    let d = ((pts[i][0] - pts[j][0]).powi(2)
                        + (pts[i][1] - pts[j][1]).powi(2)
                        + (pts[i][2] - pts[j][2]).powi(2))
                    .sqrt()
                        * 1e-6;
                    gc * hbar * omegas[i] * omegas[j] / (d * c * c * c * c)
                };
                assert!((m.get(i, j) - expected).abs() <= 1e-13 * expected.abs().max(1e-300), "{i},{j}");
            }
        }
        let row = a.pair_rate_row(2, &CODATA_2018).unwrap();
        let full: Vec<f64> = (0..5).filter(|&j| j != 2).map(|j| m.get(2, j)).collect();
        assert_eq!(row, full);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let a = build_lattice(2, 1e-6, &[3, 2], W).unwrap();
        let text = a.to_json_string().unwrap();
        let back = ClockArray::from_json_str(&text).unwrap();
        assert_eq!(a, back);

        let bad = r#"{"clocks":[{"omega":1.0,"position":[0,0,0],"colour":"red"}]}"#;
        let err = ClockArray::from_json_str(bad).unwrap_err();
        assert!(err.is_validation());

        let off_grid = r#"{"clocks":[{"omega":1.0,"position":[0,0,0]},{"omega":1.0,"position":[3,0,0]}],
            "lattice":{"dimension":1,"lattice_constant":1.0,"extent":[2]}}"#;
        assert!(ClockArray::from_json_str(off_grid).is_err());
    }

    #[test]
    fn even_lattice_center_is_nearest_centroid() {
        let a = build_lattice(1, 1.0, &[4], W).unwrap();
        // clocks at -1.5, -0.5, 0.5, 1.5: tie broken toward the lower index
        assert_eq!(a.center_index(), 1);
        let b = build_lattice(3, 1.0, &[5, 5, 5], W).unwrap();
        assert_eq!(b.clocks()[b.center_index()].position, [0.0, 0.0, 0.0]);
    }

    fn rotate(p: Position, (a, b, c): (f64, f64, f64)) -> Position {
        // z-y-x Euler rotation
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        let p1 = [ca * p[0] - sa * p[1], sa * p[0] + ca * p[1], p[2]];
        let p2 = [cb * p1[0] + sb * p1[2], p1[1], -sb * p1[0] + cb * p1[2]];
        [p2[0], cc * p2[1] - sc * p2[2], p2[1] * sc + cc * p2[2]]
    }

    proptest! {
        #[test]
        fn invariant_under_rigid_motion(
            pts in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 2..7),
            shift in proptest::array::uniform3(-5.0f64..5.0),
            angles in (0.0f64..std::f64::consts::TAU, 0.0f64..std::f64::consts::TAU, 0.0f64..std::f64::consts::TAU),
        ) {
            let base: Vec<_> = pts.iter().map(|p| ClockSpec::new(W, *p)).collect();
            prop_assume!(ClockArray::new(base.clone()).is_ok());
            let a = ClockArray::new(base).unwrap();
            let moved: Vec<_> = pts.iter().map(|p| {
                let r = rotate(*p, angles);
                ClockSpec::new(W, [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]])
            }).collect();
            let b = ClockArray::new(moved).unwrap();
            let ma = pair_rate_matrix(&a, &CODATA_2018).unwrap();
            let mb = pair_rate_matrix(&b, &CODATA_2018).unwrap();
            for (x, y) in ma.as_slice().iter().zip(mb.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300));
            }
        }

        #[test]
        fn distance_and_frequency_scaling(
            pts in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 2..6),
            s in 0.01f64..100.0,
        ) {
            let base: Vec<_> = pts.iter().map(|p| ClockSpec::new(W, *p)).collect();
            prop_assume!(ClockArray::new(base.clone()).is_ok());
            let a = ClockArray::new(base.clone()).unwrap();
            let ma = pair_rate_matrix(&a, &CODATA_2018).unwrap();
            let mb = pair_rate_matrix(&a.scaled(s).unwrap(), &CODATA_2018).unwrap();
            let fast: Vec<_> = base.iter().map(|c| ClockSpec::new(AngularFrequency(W.0 * s), c.position)).collect();
            let mc = pair_rate_matrix(&ClockArray::new(fast).unwrap(), &CODATA_2018).unwrap();
            for i in 0..ma.n() {
                for j in 0..ma.n() {
                    if i == j { continue; }
                    prop_assert!((mb.get(i, j) * s - ma.get(i, j)).abs() <= 1e-12 * ma.get(i, j));
                    prop_assert!((mc.get(i, j) - ma.get(i, j) * s * s).abs() <= 1e-12 * mc.get(i, j));
                    prop_assert_eq!(ma.get(i, j), ma.get(j, i));
                }
            }
        }
    }
}
