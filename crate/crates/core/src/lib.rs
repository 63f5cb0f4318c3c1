//! Random forests with surrogate splits for relation analysis and feature selection.
//!
//! The crate trains forests (classification, regression, survival) that record surrogate splits at
//! every node, and derives from them:
//!
//! * the mean adjusted agreement matrix between features,
//! * the mutual forest impact (MFI), a relation measure corrected by permuted pseudo-features,
//! * impurity importance, actual impurity reduction (AIR), surrogate minimal depth (SMD) and
//!   mutual impurity reduction (MIR),
//! * empirical null distributions and p-values for selecting related and important features.
//!
//! [`simulation`] reproduces the null and correlation benchmark scenarios.

pub mod analysis;
pub mod criteria;
pub mod data;
pub mod forest;
pub mod importance;
pub mod io;
pub mod relations;
pub mod selection;
pub mod simulation;
pub mod surrogates;
pub mod tree;

pub use data::{Dataset, FeatureKind, ForestParams, Outcome, ValidationError};
pub use forest::{oob_error, train_forest, Forest, ForestError};
pub use surrogates::{mean_adjusted_agreement, RelationMatrix, SquareMatrix, SurrogateSplit};
pub use tree::{SplitRule, SplitTest, Tree, TreeNode};
