//! Compression-guided relation extraction toolkit.
//!
//! The pipeline has two halves. The mining half turns an entity-annotated
//! corpus into transactions, builds an MDL-optimal code table over them
//! ([`krimp`]), and generates new relation instances by merging code-table
//! itemsets until an entity pair appears ([`expand`]). The learning half
//! trains a piecewise convolutional sentence encoder with selective attention
//! over bags and adversarial perturbation of word embeddings ([`model`],
//! [`trainer`]), and scores ranked fact lists ([`eval`]).

pub mod corpus;
pub mod error;
pub mod eval;
pub mod expand;
pub mod krimp;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
