//! Generalized linear regression with network-valued responses.
//!
//! Each subject contributes an adjacency matrix `A⁽ⁱ⁾` over a shared node
//! set and a covariate vector `xᵢ`. Edges follow an exponential family with
//! canonical link `g`, and
//!
//! ```text
//! g(E[A⁽ⁱ⁾ | xᵢ]) = Θ + B ×₃ xᵢ
//! ```
//!
//! where the intercept `Θ` is low rank (fitted in factored form) and the
//! slope tensor `B` has at most `s` nonzero entries.
//!
//! * [`tensor`]: dense storage and kernels (mode-3 product, truncation, SVD).
//! * [`glm`]: edge families, the loss and its gradients.
//! * [`optimizer`]: alternating gradient descent, distance diagnostics, eBIC
//!   tuning.
//! * [`analysis`]: community detection, edge selection, evaluation scores.
//! * [`simulation`]: ground-truth generators and the replication runner.

pub mod analysis;
pub mod error;
pub mod glm;
pub mod optimizer;
pub mod simulation;
pub mod tensor;

pub use error::{Error, Result};
pub use glm::{EdgeFamily, NetworkDataset};
pub use optimizer::{FactorModel, FitResult, Hyperparams};
pub use simulation::{SimConfig, SimTruth};
pub use tensor::{Matrix, Tensor3};
