//! Greedy representative clustering of sampled generations.

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};

/// Semantic equivalence: `sim >= tau`. Used both for clustering candidates
/// and for judging a generation correct against the reference.
#[inline]
pub fn equivalent(sim: f64, tau: f64) -> bool {
    sim >= tau
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster index of each generation.
    pub assignment: Vec<usize>,
    /// Number of generations in each cluster.
    pub sizes: Vec<usize>,
    /// First member (lowest generation index) of each cluster.
    pub representatives: Vec<usize>,
}

impl Clustering {
    pub fn m(&self) -> usize {
        self.assignment.len()
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Share of generations in `cluster`.
    pub fn cluster_frequency(&self, cluster: usize) -> f64 {
        self.sizes[cluster] as f64 / self.m() as f64
    }

    /// Share of generations that fall in the same cluster as generation `j`.
    pub fn frequency(&self, j: usize) -> Result<f64> {
        let c = *self.assignment.get(j).ok_or(Error::IndexOutOfRange {
            index: j,
            m: self.m(),
        })?;
        Ok(self.cluster_frequency(c))
    }

    /// Index of the largest cluster, lowest index on ties.
    pub fn largest_cluster(&self) -> usize {
        let mut best = 0;
        for (c, &size) in self.sizes.iter().enumerate() {
            if size > self.sizes[best] {
                best = c;
            }
        }
        best
    }

    /// Representative generation of the largest cluster.
    pub fn most_trustworthy(&self) -> usize {
        self.representatives[self.largest_cluster()]
    }
}

/// Clusters a square similarity matrix: each row joins the first existing
/// cluster whose representative it is equivalent to, else founds a new one.
pub fn cluster_matrix(sim: &[Vec<f64>], tau: f64) -> Clustering {
    let mut assignment = Vec::with_capacity(sim.len());
    let mut sizes: Vec<usize> = Vec::new();
    let mut representatives: Vec<usize> = Vec::new();
    for (j, row) in sim.iter().enumerate() {
        match representatives
            .iter()
            .position(|&r| equivalent(row[r], tau))
        {
            Some(c) => {
                assignment.push(c);
                sizes[c] += 1;
            }
            None => {
                assignment.push(representatives.len());
                representatives.push(j);
                sizes.push(1);
            }
        }
    }
    Clustering {
        assignment,
        sizes,
        representatives,
    }
}

pub fn cluster(record: &Record, tau: f64) -> Clustering {
    cluster_matrix(&record.gen_sim, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(m: usize, off: f64) -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { off }).collect())
            .collect()
    }

    fn from_sizes(sizes: &[usize]) -> Clustering {
        let mut assignment = Vec::new();
        let mut representatives = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            representatives.push(assignment.len());
            assignment.extend(std::iter::repeat(c).take(s));
        }
        Clustering {
            assignment,
            sizes: sizes.to_vec(),
            representatives,
        }
    }

    #[test]
    fn equivalence_boundary() {
        assert!(equivalent(0.70, 0.7));
        assert!(!equivalent(0.69, 0.7));
        assert!(equivalent(1.0, 0.7));
    }

    #[test]
    fn unanimous_and_all_distinct() {
        let c = cluster_matrix(&matrix(5, 0.9), 0.7);
        assert_eq!(c.sizes, vec![5]);
        let c = cluster_matrix(&matrix(4, 0.1), 0.7);
        assert_eq!(c.sizes, vec![1, 1, 1, 1]);
        assert_eq!(c.representatives, vec![0, 1, 2, 3]);
    }

    #[test]
    fn chain_compares_only_to_representatives() {
        let sim = vec![
            vec![1.0, 0.9, 0.5],
            vec![0.9, 1.0, 0.9],
            vec![0.5, 0.9, 1.0],
        ];
        let c = cluster_matrix(&sim, 0.7);
        assert_eq!(c.assignment, vec![0, 0, 1]);
        assert_eq!(c.k(), 2);
        assert_eq!(c.representatives, vec![0, 2]);
    }

    #[test]
    fn frequencies() {
        assert_eq!(from_sizes(&[5]).frequency(3).unwrap(), 1.0);
        assert_eq!(from_sizes(&[3, 1]).frequency(0).unwrap(), 0.75);
        assert_eq!(from_sizes(&[2, 2, 1]).frequency(4).unwrap(), 0.2);
        assert!(matches!(
            from_sizes(&[2]).frequency(2),
            Err(Error::IndexOutOfRange { index: 2, m: 2 })
        ));
    }

    #[test]
    fn most_trustworthy_tie_breaks_low() {
        assert_eq!(from_sizes(&[1, 4]).most_trustworthy(), 1);
        assert_eq!(from_sizes(&[2, 2]).most_trustworthy(), 0);
        assert_eq!(from_sizes(&[3]).most_trustworthy(), 0);
    }

    #[test]
    fn sizes_sum_to_m_and_representatives_are_members() {
        let sim = vec![
            vec![1.0, 0.2, 0.8, 0.1],
            vec![0.2, 1.0, 0.3, 0.75],
            vec![0.8, 0.3, 1.0, 0.0],
            vec![0.1, 0.75, 0.0, 1.0],
        ];
        let c = cluster_matrix(&sim, 0.7);
        assert_eq!(c.sizes.iter().sum::<usize>(), 4);
        for (k, &r) in c.representatives.iter().enumerate() {
            assert_eq!(c.assignment[r], k);
        }
        assert_eq!(c, cluster_matrix(&sim, 0.7));
    }
}
