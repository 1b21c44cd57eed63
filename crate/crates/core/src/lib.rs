//! Dual-graph anomaly detection on transaction ledgers.
//!
//! A ledger is turned into a user graph and a transaction graph, each node
//! gets a small feature vector, and nodes are ranked by local outlier factor
//! (optionally restricted to their k-means cluster).

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod graph;
pub mod kmeans;
pub mod knn;
pub mod ledger;
pub mod lof;
pub mod powerlaw;
pub mod synth;
pub mod tsv;

pub use error::{Error, Result};
