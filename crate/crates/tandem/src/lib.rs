//! Trainable multitask toolkit: dependency parsing as head selection and
//! semantic role labeling as BIO tagging over one shared encoder.
//!
//! The crate is organized around the pipeline: `corpus` reads and
//! generates data, `tokenize` learns subwords and assembles model inputs,
//! `numerics` provides the differentiable tensor engine, `model` holds
//! the shared encoder and both task heads, `trainer` runs single-task,
//! multitask, and hyperparameter-search training, and `report` carries
//! evaluation results. The `tandem` binary ties these into commands.

pub mod config;
pub mod corpus;
pub mod error;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod report;
pub mod tokenize;
pub mod trainer;

pub use error::{Error, Result};
