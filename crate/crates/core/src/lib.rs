//! Document-level event extraction with a two-stage reading model.
//!
//! For every event type the extractor first *roughly reads* the document to
//! decide whether an unextracted record of that type remains, then *reads
//! elaborately*, role by role: it locates the sentence holding the argument and
//! copies the argument out of it character by character. A per-type memory of
//! extracted arguments conditions both stages, which lets the same type be
//! extracted several times from one document without repeating itself.
//!
//! Module map:
//! - [`corpus`]: documents, schemas, gold records, JSONL, synthetic data.
//! - [`tensor`], [`graph`]: dense matrices and the reverse-mode tape.
//! - [`backbone`]: parameters, transformer encoders, document encoding,
//!   gradient checking.
//! - [`memory`], [`rough_reading`], [`elaborate_reading`]: the model proper.
//! - [`pipeline`]: inference loop, teacher-forced training, checkpoints.
//! - [`evaluation`]: record matching and event-level scoring.

pub mod backbone;
pub mod corpus;
pub mod elaborate_reading;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod memory;
pub mod pipeline;
pub mod rough_reading;
pub mod tensor;

pub use error::{Error, Result};

/// Hex SHA-256 of `bytes`.
pub fn fingerprint(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
