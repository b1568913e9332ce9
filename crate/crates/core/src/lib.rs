//! Unsupervised phrase segmentation of symbolic melodies from the prediction
//! error of a next-frame LSTM model.
//!
//! The crate is organised along the processing chain: [`corpus`] reads EsAC
//! records into [`corpus::Song`]s, [`tokenizer`] turns them into four-channel
//! frame sequences, [`nn`] and [`trainer`] fit the prediction model,
//! [`segmenter`] and [`ensemble`] turn its losses into boundaries, and
//! [`eval`] scores them. [`pipeline`] wires the chain together.
//!
//! Numerical code is generic over [`Scalar`]; the aliases below fix the
//! precision used for training and checkpoints.

pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod segmenter;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model parameters in the training precision.
pub type Model = nn::ModelParams<f32>;
pub type Checkpoint = trainer::ModelCheckpoint<f32>;
pub type SongEnsemble = ensemble::Ensemble<f32>;
pub type PipelineOutput = pipeline::PipelineOutput<f32>;
pub type Curve = segmenter::LossCurve<f32>;
