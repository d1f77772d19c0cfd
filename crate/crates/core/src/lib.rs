//! Numerical laboratory for the two-weight Hilbert transform on a dyadic tree.
//!
//! Everything is desk scale: weights are finite atomic measures on `[0,1)`
//! with exact rational atom positions, so interval membership is exact and
//! the Hilbert kernel is a finite sum over disjoint supports. On top of that
//! the crate builds weighted Haar bases, Poisson and energy functionals, the
//! bilinear form `B(f,phi) = <H_sigma f, phi>_w` together with its exact
//! splitting cascade, Calderon-Zygmund and Dini stopping trees, and dynamic
//! programs for the energy and Dini constants.

pub mod constants;
pub mod corona;
pub mod dyadic;
pub mod error;
pub mod forms;
pub mod haar;
pub mod kernels;

pub use constants::{
    bounded_fluctuation_constant, dini_constant, dini_functional_sq, doubling_energy_floor,
    energy_constant, functional_energy, functional_energy_with, jstar_family,
    theorem_inequality_suite, ConstantsReport, DiniProfile, GoodnessKind, Provenance, RatioRow,
};
pub use corona::{
    bf_reduction_check, classify_pair, cz_corona_split, dini_stopping_tree, f_stopping_tree,
    quasi_orthogonality, stop_form_split, CoronaClass, CoronaTerm, CzSplitReport, ReductionReport,
    StopSplitReport, StoppingForest, StoppingNode,
};
pub use dyadic::{
    build_tree, generate_weight, is_good, Atom, DyadicInterval, DyadicTree, GoodnessForm,
    GoodnessParams, Rat, Side, Weight, WeightFamily, WeightPair, WeightSpec,
};
pub use error::{Error, Result};
pub use forms::{
    a2_constant, classify, form_norm, full_form, poisson_decay_check, schur_sum, split_form,
    testing_constants, weak_boundedness, NormMode, NormOptions, NormReport, PairClass,
    PoissonDecayReport, SchurReport, SplitOptions, SplitReport,
};
pub use haar::{HaarCoefficients, WeightedFunction};
pub use kernels::SignedDensity;
