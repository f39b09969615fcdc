//! Diagnostics and theory checks.

mod bounds;
mod gap;
mod landscape;
mod lanczos;
mod sweep;

pub use bounds::{mrwp_bound, rwp_bound, smoothness_report, SmoothnessReport, TheoryConstants};
pub use gap::generalization_gap;
pub use landscape::{filter_normalized_direction, grid_axis, landscape_grid, LandscapeGrid};
pub use lanczos::{lanczos_spectrum, tridiagonal_eigen, SpectrumResult};
pub use sweep::{
    expected_perturbed_loss, perturbed_loss_samples, radius_sweep, rwp_radius_to_match,
    rwp_sigma_for_radius, Sampler, SweepResult,
};
