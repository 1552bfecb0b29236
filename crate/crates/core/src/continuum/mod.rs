//! Continuum opinion model, represented through weighted discretizations.

mod density;
mod diagnostics;
mod operators;

pub use density::{DensitySpec, Piece, QuantileRule};
pub use diagnostics::{
    continuity_probe, distance_to_f, refine_compare, regularity_bounds, sup_distance,
    ContinuityReport, MuMetricReport, Refinement, RegularityBounds, REGULARITY_WINDOW,
};
pub use operators::{
    adjacency_apply, degree, disconnected_pair_mass, laplacian_apply, laplacian_residual,
    lyapunov_decrement, plus_form, potential, potential_naive, potential_tightness, psd_check,
    scalar_product, update_map, LaplacianResidual, LyapunovStep, LYAPUNOV_TOL,
};
