//! Iteration domains, access relations, dependence analysis and schedule
//! validity.

pub mod deps;
pub mod system;
pub mod validate;

pub use deps::*;
pub use system::{affine_text, for_each_box_point, Constraint, System, BRUTE_FORCE_LIMIT};
pub use validate::{band_properties, cross_thread, refresh_band_flags, validate_schedule, Violation, ViolationKind};
