//! Audits of embedding spaces against an expert-annotated similarity structure.
//!
//! The crate covers the whole evaluation chain: loading labeled vectors and
//! annotations ([`corpus`]), cosine similarity and seeded neighborhoods
//! ([`simspace`]), ground-truth construction ([`groundtruth`]), aP@k
//! retrieval correspondence ([`retrieval`]), hubness measurement and
//! reduction ([`hubness`]), k-means and clustering overlap ([`clusterkit`]),
//! and MDS layouts with SVG output ([`mdsviz`]).
//!
//! Row-, trial- and restart-level work runs on rayon when the default
//! `parallel` feature is enabled; results are identical either way.

pub mod clusterkit;
pub mod corpus;
pub mod error;
pub mod fsutil;
pub mod groundtruth;
pub mod hubness;
pub mod mdsviz;
pub mod par;
pub mod retrieval;
pub mod simspace;

pub use error::{AuditError, Result};
