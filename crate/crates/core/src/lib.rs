//! Gaussian-process regression with neural-network dual kernels, and
//! GP-based approximate policy iteration on the mountain-car problem.
//!
//! * [`kernels`]: RBF, conjugate (CK) and neural tangent (NTK) kernels.
//! * [`gp`]: exact zero-mean GP regression.
//! * [`hyperopt`]: grid search on the log marginal likelihood and
//!   random-walk Metropolis on cross-validated error.
//! * [`mountaincar`]: the ground-truth environment.
//! * [`policy_iteration`]: dynamics GPs, value GP, Bellman sweeps, rollouts.
//!
//! Inner loops (covariance assembly, batched prediction, value sweeps) run on
//! rayon when the `parallel` feature is enabled; see [`par`].

pub mod error;
pub mod gp;
pub mod hyperopt;
pub mod kernels;
pub mod mountaincar;
pub mod par;
pub mod policy_iteration;

pub use error::{Error, Result};
pub use gp::{GpModel, PosteriorSummary};
pub use kernels::{CovMatrix, DualParams, KernelSpec, KernelVariant, PointSet};
pub use par::Execution;
