//! Sparse over-parameterization for regression and classification under
//! sparse label corruption: gradient-descent solvers, the convex reference
//! program, landscape diagnostics, recovery bounds and the experiment drivers.

pub mod convex_oracle;
pub mod csv_io;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod landscape;
pub mod numerics;
pub mod recovery_theory;
pub mod sop_classifier;
pub mod sop_linear;

pub use error::{Error, Result};
