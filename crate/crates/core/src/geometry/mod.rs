//! Representational geometry: orthogonalization, Procrustes alignment,
//! rotation swaps and causal perturbation.

mod causal;
mod ortho;
mod procrustes;
mod stats;

pub use causal::{causal_perturb, magnitude_grid, PerturbationCurve};
pub use ortho::{
    compare_ortho, ortho_index, ortho_index_refit, ortho_value, pca_equalize, principal_axes, OrthoComparison,
    OrthoIndex,
};
pub use procrustes::{
    procrustes_align, reconstruct_decoders, swap_test, BiasSource, ProcrustesAlignment, SwapReport, SwapRow,
};
pub use stats::{paired_t_test, sign_test, welch_t_test, TTest};
