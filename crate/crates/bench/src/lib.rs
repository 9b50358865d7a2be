//! Fixtures shared by the criterion benches.

use ccg_clocks::geometry::{build_lattice, pair_rate_matrix};
use ccg_clocks::lindblad::{build_model, DensityMatrix, EvolutionModel};
use ccg_clocks::rates::{min_dephasing_pairwise_a, MeasurementRates};
use ccg_clocks::{AngularFrequency, ClockArray, PairRateMatrix, CODATA_2018};

pub const OMEGA: AngularFrequency = AngularFrequency(1e15);

/// Cubic lattice with `side` clocks per edge at 1 µm spacing.
pub fn cube(side: usize) -> ClockArray {
    build_lattice(3, 1e-6, &[side; 3], OMEGA).expect("valid lattice")
}

/// Chain of `n` clocks at 1 µm spacing.
pub fn chain(n: usize) -> ClockArray {
    build_lattice(1, 1e-6, &[n], OMEGA).expect("valid lattice")
}

pub fn couplings(array: &ClockArray) -> PairRateMatrix {
    pair_rate_matrix(array, &CODATA_2018).expect("distinct clocks")
}

/// Pairwise CCG model at the free-rate optimum on an `n`-clock chain, with the
/// all-plus initial state.
pub fn pairwise_chain_model(n: usize) -> (EvolutionModel, DensityMatrix) {
    let array = chain(n);
    let (_, rates): (_, MeasurementRates) = min_dephasing_pairwise_a(&couplings(&array));
    let model = build_model(&array, Some(&rates), &CODATA_2018)
        .expect("small chain")
        .without_free_term();
    (model, DensityMatrix::all_plus(n).expect("small chain"))
}
