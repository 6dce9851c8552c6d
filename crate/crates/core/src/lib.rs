//! Matrix completion, nonnegative factorization, text classification and
//! map/shuffle/reduce k-means, built around one sparse rating-matrix core.
//!
//! The crate is organized by learner:
//!
//! * [`sparse`] — sparse observed-entry matrices, dataset ingestion,
//!   holdout splitting and error metrics shared by everything else.
//! * [`svt`] — nuclear-norm-regularized completion by iterated
//!   soft-thresholded truncated SVD.
//! * [`als`] — regularized alternating least squares over observed entries,
//!   with an optional nonnegativity clamp.
//! * [`nmf`] — dense nonnegative matrix factorization (multiplicative
//!   updates and clamped ALS) with NNDSVD and multi-start initialization.
//! * [`text`] — cleaning, stop words, stemming, signed feature hashing and
//!   smooth TF-IDF.
//! * [`logreg`] — one-vs-rest L2-regularized logistic regression over
//!   hashed sparse features.
//! * [`kmeans`] — Forgy/Lloyd k-means expressed as explicit
//!   map / shuffle / reduce stages over partitioned data.
//!
//! All stochastic routines take an explicit `u64` seed and are deterministic
//! for a fixed seed, independently of thread count.

pub mod als;
pub mod error;
pub mod kmeans;
mod linalg;
pub mod logreg;
pub mod nmf;
pub mod sparse;
pub mod svt;
pub mod text;

pub use error::{Error, Result};
