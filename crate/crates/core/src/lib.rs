//! Phase separation binary classifier.
//!
//! Forward propagation is a semi-implicit finite-difference discretization
//! of the Allen-Cahn equation for the features, coupled with a companion
//! phase ODE that decides whether the final state is read as-is or flipped.

pub mod basis;
pub mod data;
pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod gradient;
pub mod invariant;
pub mod model;
pub mod nonlinearity;
pub mod params;
pub mod pca;
pub mod propagation;
pub mod simulate;
pub mod training;
pub mod verify;

pub use basis::{BasisKind, BasisMatrix};
pub use data::{Dataset, NormalizationMap};
pub use diffusion::DiffusionOperator;
pub use error::{PsbcError, Result};
pub use gradient::GradientStack;
pub use model::PsbcModel;
pub use params::{BoundaryCondition, Hyperparameters, Subordination, WeightStack};
