//! Decomposition solvers for block-separable mixed-integer convex programs.

pub mod cuts;
pub mod error;
pub mod fixed_z;
pub mod lp;
pub mod master;
pub mod milp;
pub mod model;
pub mod oa;
pub mod oracle;
pub mod padoa;
pub mod random;
pub mod tcl;
pub mod trace;

pub use cuts::{Cut, CutGranularity, CutOrigin, CutPool};
pub use error::{Error, Result};
pub use fixed_z::{solve_fixed_z, FixedZOutcome, FixedZSolution, InfeasibilityCertificate};
pub use model::{validate, ObjectiveTerm, StructuredMicp};
pub use oa::{solve_oa, OaOptions, OaResult, SolveStatus};
pub use padoa::{solve_padoa, PadoaOptions, PadoaResult};
pub use trace::IterationTrace;
