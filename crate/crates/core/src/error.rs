// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Tensor archive could not be decoded.
    #[error("malformed archive: {0}")]
    Archive(String),

    /// Archive payload shorter than its header claims.
    #[error("truncated archive payload: header needs {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    /// Model configuration, or archive/vocab inconsistent with it.
    #[error("model config error: {0}")]
    Config(String),

    #[error("vocab error: {0}")]
    Vocab(String),

    /// Sequence would not fit in the model context.
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    /// Intervention plan references invalid layers, positions or shapes.
    #[error("invalid intervention plan: {0}")]
    Plan(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    /// A model oracle failed to answer a query.
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("probe error: {0}")]
    Probe(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
