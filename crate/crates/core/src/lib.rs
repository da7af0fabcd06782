//! Compositional hierarchical molecular graphs and multi-level
//! self-supervised pretraining of a GIN encoder over them.

pub mod canon;
pub mod elements;
pub mod perception;
pub mod smiles;
pub mod vocab;
pub mod chg;
pub mod labels;
pub mod tensor;
pub mod optim;
pub mod encoder;
pub mod objectives;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod checkpoint;
pub mod preprocess;
pub mod train;
