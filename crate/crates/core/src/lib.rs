//! Memory networks for clause-level emotion cause extraction.
//!
//! Each (clause, emotion word) pair is posed as a yes/no question: does this
//! clause cause the emotion? Two networks answer it:
//!
//! * [`memnet`]: a multi-hop memory network attending over the clause words
//!   with the emotion word as the first query.
//! * [`convms`]: the convolutional multiple-slot variant, which attends over
//!   width-3 windows and reads three shifted slots per hop.
//!
//! Per document, the clause with the highest probability is proposed as the
//! cause ([`eval::predict_document`]).

pub mod convms;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod memnet;
pub mod model;
pub mod synthetic;
pub mod training;
mod vector;

pub use corpus::{Document, Instance, Vocabulary};
pub use embeddings::EmbeddingMatrix;
pub use error::{Error, Result};
pub use model::{Model, ModelKind};
pub use training::{TrainConfig, TrainHistory};
