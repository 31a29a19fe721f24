//! Communication-avoiding QR: TSQR over arbitrary reduction trees, CAQR on
//! 2-D block layouts, out-of-core variants over a block store, rival
//! orthogonalizations, and closed-form α-β-γ performance models.

pub mod caqr;
pub mod error;
pub mod householder;
pub mod machine;
pub mod matrix;
pub mod model;
pub mod rivals;
pub mod sim;
pub mod store;
pub mod tree;
pub mod tsqr;

pub use error::{Error, Result};
pub use householder::{FlopCounter, HouseholderFactor, Sparsity};
pub use machine::MachineModel;
pub use matrix::DenseMatrix;
pub use model::{evaluate, optimize, speedup_table, Algorithm, ModelParams, ModelPrediction};
pub use sim::{CostReport, TransferCounters};
pub use store::{Backend, BlockStore};
pub use tree::{make_tree, ReductionTree, TreeShape};
