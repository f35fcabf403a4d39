//! Writer retrieval for historical document images.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`corpus`]: manifests, ground-truth relevance, subset selection and a
//!   deterministic synthetic corpus generator.
//! * [`preprocess`]: grayscale loading, border crop, max-dimension resize,
//!   Otsu binarization and projection-profile deskew.
//! * [`descriptor`]: multi-radius LBP histograms concatenated into a page
//!   descriptor, plus the on-disk vector store.
//! * [`embed`]: PCA fit/projection, signed square root and ℓ2 normalization.
//! * [`retrieval`]: distance metrics, tiled distance matrices, matrix I/O and
//!   per-query ranking.
//! * [`evaluate`]: leave-one-image-out AP, mAP, Top-1, PR curves and subset
//!   breakdowns.
//! * [`pipeline`]: the stage orchestration shared by the `wr` binary.

pub mod corpus;
pub mod descriptor;
pub mod embed;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod preprocess;
pub mod retrieval;

pub use error::{Error, ErrorClass, Result};
