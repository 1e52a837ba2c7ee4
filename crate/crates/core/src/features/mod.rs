//! Text to numbers: tokenization, TF-IDF weighting and truncated SVD.

pub(crate) mod matrix;
mod svd;
mod text;

pub use matrix::FeatureMatrix;
pub use svd::{apply_svd, fit_svd, SvdTransform, DEFAULT_SVD_COMPONENTS};
pub use text::{apply_tfidf, fit_tfidf, tokenize, NgramRange, TfidfTransform, Vocabulary};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit on an empty corpus")]
    EmptyCorpus,
    #[error("corpus contains no tokens")]
    NoTokens,
    #[error("cannot fit on an empty matrix")]
    EmptyMatrix,
    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix data has {found} values, expected {expected}")]
    BadShape { expected: usize, found: usize },
    #[error("matrix contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, FeatureError>;
