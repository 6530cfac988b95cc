//! Black-box uncertainty scores built from semantic frequency and
//! cross-cluster similarity, plus two cheap baselines.
//!
//! For generation `j` in cluster `c` with `K` clusters of frequency `F_k`:
//!
//! ```text
//! U(j) = 1 - λ·F_c - (1 - λ)·(1/K)·Σ_k S(rep_c, rep_k)·F_k
//! ```
//!
//! where `rep_k` is the first member of cluster `k`. Using the
//! representative of `j`'s own cluster in the similarity term makes every
//! member of a cluster score identically. The process-level score is `U`
//! of the largest cluster's representative. All scores are oriented so
//! that larger means more uncertain.

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::data::Record;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub per_generation: Vec<f64>,
    pub process: f64,
    pub most_trustworthy_index: usize,
    pub k: usize,
}

/// Score shared by every member of `cluster`.
pub fn cluster_uncertainty(
    record: &Record,
    clustering: &Clustering,
    lambda: f64,
    cluster: usize,
) -> f64 {
    let rep = clustering.representatives[cluster];
    let k = clustering.k() as f64;
    let consistency: f64 = clustering
        .representatives
        .iter()
        .enumerate()
        .map(|(other, &r)| record.gen_sim[rep][r] * clustering.cluster_frequency(other))
        .sum();
    1.0 - lambda * clustering.cluster_frequency(cluster) - (1.0 - lambda) * consistency / k
}

pub fn generation_uncertainty(
    record: &Record,
    clustering: &Clustering,
    lambda: f64,
    j: usize,
) -> Result<f64> {
    let cluster = *clustering
        .assignment
        .get(j)
        .ok_or(Error::IndexOutOfRange {
            index: j,
            m: clustering.m(),
        })?;
    Ok(cluster_uncertainty(record, clustering, lambda, cluster))
}

/// Uncertainty of the whole query-response process: the score of the
/// most trustworthy generation.
pub fn process_uncertainty(record: &Record, clustering: &Clustering, lambda: f64) -> f64 {
    cluster_uncertainty(record, clustering, lambda, clustering.largest_cluster())
}

/// Per-generation and process scores in one pass.
pub fn score(record: &Record, clustering: &Clustering, lambda: f64) -> UncertaintyReport {
    let by_cluster: Vec<f64> = (0..clustering.k())
        .map(|c| cluster_uncertainty(record, clustering, lambda, c))
        .collect();
    let per_generation = clustering
        .assignment
        .iter()
        .map(|&c| by_cluster[c])
        .collect();
    let largest = clustering.largest_cluster();
    UncertaintyReport {
        per_generation,
        process: by_cluster[largest],
        most_trustworthy_index: clustering.representatives[largest],
        k: clustering.k(),
    }
}

/// Number of semantic clusters, as an uncertainty score.
pub fn baseline_numset(clustering: &Clustering) -> f64 {
    clustering.k() as f64
}

/// One minus the mean off-diagonal pairwise similarity.
pub fn baseline_lexsim(record: &Record) -> Result<f64> {
    let m = record.m();
    if m < 2 {
        return Err(Error::InsufficientSamples(m));
    }
    let mut total = 0.0;
    for (i, row) in record.gen_sim.iter().enumerate() {
        for (j, &s) in row.iter().enumerate() {
            if i != j {
                total += s;
            }
        }
    }
    Ok(1.0 - total / (m * (m - 1)) as f64)
}
