//! Multidomain discriminant analysis (MDA).
//!
//! Learns a kernel feature transformation from several labeled source
//! domains that keeps classes apart while pulling together the
//! class-conditional distributions of different domains, then classifies
//! instances of an unseen domain by 1-nearest-neighbor in the learned
//! subspace.
//!
//! The pieces, bottom up:
//!
//! - [`data`]: datasets, CSV files and the synthetic Gaussian generator
//! - [`kernel`]: Gaussian kernel, median heuristic, Gram matrices, centering
//! - [`scatter`]: kernel mean embedding coefficients and the measure matrices
//! - [`eigsolver`]: the regularized generalized eigenproblem
//! - [`pipeline`]: fit and transform
//! - [`classifiers`]: 1NN, KPCA and KFD baselines
//! - [`bounds`]: excess-risk and generalization bounds for a fitted model
//! - [`harness`]: validation protocols and hyperparameter sweeps
//! - [`model_io`]: the binary model container

pub mod bounds;
pub mod classifiers;
pub mod data;
pub mod eigsolver;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod model_io;
pub mod pipeline;
pub mod scatter;

pub use error::{MdaError, Result};
