//! Mini-batch noise bias analysis for Adam and SGD with momentum.
//!
//! The crate is organised around a small number of pure building blocks:
//!
//! - [`problem`]: per-sample loss families with analytic derivatives, mini-batch
//!   noise tensors and the empirical gradient covariance.
//! - [`optim`]: reference Adam / SGD-with-momentum steppers and epoch runners.
//! - [`memoryless`]: the memory-free approximating iteration (main and
//!   correction terms) and a trajectory closeness harness.
//! - [`moments`]: permutation expectations of noise monomials (exact, closed
//!   form, Monte Carlo) and the brute-force expected Adam correction.
//! - [`coeffs`]: μ/ν weights, exponential series limits, the constants C1–C5,
//!   `C_total` and numerical checks of the monotonicity and smallness lemmas.
//! - [`assemble`]: the expected correction split into its full-batch and
//!   mini-batch-noise pieces.
//! - [`expansion`]: noise expansions of the correction's building blocks and
//!   their remainder-order checks.
//! - [`advisor`]: simple noise scale, regime ratio λ and batch-size advice.
//! - [`sweep`]: a desk-scale β-sweep on a synthetic overfitting task.
//! - [`verify`]: named invariant suites used by the command line front end.

pub mod advisor;
pub mod assemble;
pub mod coeffs;
pub mod error;
pub mod expansion;
pub mod memoryless;
pub mod moments;
pub mod optim;
pub mod problem;
pub mod stats;
pub mod sweep;
pub mod verify;

pub use error::{Error, Result};

/// Dense column vector used for parameters and gradients.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for Hessians and covariances.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Version tag written at the top of every emitted CSV/JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
