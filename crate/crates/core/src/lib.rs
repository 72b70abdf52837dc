//! Toolkit for training hybrid acoustic models that treat non-speech
//! separately from speech, with bidirectional predictive pre-training,
//! pseudo-label self-training and neural language model rescoring.

pub mod biapc;
pub mod config;
pub mod corpus;
pub mod data;
pub mod decoder;
pub mod error;
pub mod frontend;
pub mod inventory;
pub mod model;
pub mod nnet;
pub mod nsdl;
pub mod pipeline;
pub mod recognize;
pub mod rnnlm;
pub mod seed;
pub mod ssl;
pub mod train;

pub use error::{Error, Result};
