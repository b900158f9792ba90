//! Neural cognitive diagnosis with cross-subject transfer.
//!
//! Two base models are provided: [`neuralcd::NeuralCd`], with direct
//! per-concept student and item embeddings, and [`kancd::Kancd`], which
//! factorizes those embeddings through shared latent vectors. Either can be
//! pretrained on one subject and carried to another with
//! [`transfer::TransferModel`], which freezes the pretrained interaction
//! layers and fine-tunes a dropout-regularized head plus fresh target
//! embeddings.
//!
//! All numerics run on a small reverse-mode tape in [`tensor`].

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod kancd;
pub mod model;
pub mod neuralcd;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{DiagnosisModel, ModelKind, Prediction};
