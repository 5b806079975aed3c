//! Selective synaptic dampening for machine unlearning on small MLP
//! classifiers.
//!
//! The pipeline trains a classifier, estimates per-parameter importance over
//! the full dataset and a forget set, dampens parameters disproportionately
//! important to the forget set, and evaluates forgetting quality via
//! retain/forget accuracy and an entropy-based membership inference attack.
//! Two importance estimators are provided: the Fisher information diagonal
//! (label-dependent) and a label-free sensitivity built from gradients of
//! the squared l2 norm of the model output.

pub mod autodiff;
pub mod dampening;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod importance;
pub mod model;
pub mod training;

pub use error::{Error, Result};
