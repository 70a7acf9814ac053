//! Closed-form privacy and theory math.

mod accountant;
mod bound;
mod gaussian;

pub use accountant::{accountant_epsilon, default_orders, rdp_subsampled_gaussian, AccountantState};
pub use bound::{outlier_gap_bound, uaerm_gap, GapBoundInputs, UaermMeasurement};
pub use gaussian::{gaussian_sigma, MechanismSpec};
