//! Revenue-maximizing auction machinery for additive bidders with hard budgets.
//!
//! - [`model`]: virtual welfare instances, allocations, objectives, pricing.
//! - [`lp`]: dense two-phase simplex in float or exact rational arithmetic.
//! - [`gap`]: generalized assignment LP and slot rounding.
//! - [`bavwm`]: exact and 3-approximate virtual welfare maximization.
//! - [`mechanism`]: finite priors, the optimal-mechanism LP, constraint
//!   checkers and the virtual welfare mechanism runner.
//! - [`harness`]: instance generation, ratio benchmarks and invariant suites.

pub mod bavwm;
pub mod gap;
pub mod harness;
pub mod lp;
pub mod mechanism;
pub mod model;
pub mod scalar;

pub use num_rational::BigRational;
pub use scalar::{Arithmetic, Scalar};
