//! Configurable pipeline for extracting schema-defined entities from
//! layout-rich documents with large language models.
//!
//! Stages run in order: render a document as text with layout, split it into
//! token-bounded chunks, build one prompt per chunk, complete each prompt,
//! refine the decoded output, and score it against ground truth. The `sweep`
//! module searches the configuration space over these stages.

pub mod backend;
pub mod chunker;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod prompting;
pub mod refine;
pub mod rendering;
pub mod sweep;
pub mod synthetic;

pub use error::{Error, Result};
