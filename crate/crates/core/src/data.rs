//! Record schema, line-delimited ingestion and seeded calibration/test splits.
//!
//! A record carries one question, its reference answer, the most-likely
//! generation and `M` sampled candidates, together with every similarity
//! score the rest of the crate needs. Texts are carried verbatim and never
//! interpreted; all semantics come from the scores.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal entries of `gen_sim` must equal 1 within this tolerance.
pub const DIAGONAL_TOLERANCE: f64 = 1e-9;
/// Largest `|S[i][j] - S[j][i]|` that is silently symmetrized.
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub question: String,
    pub reference: String,
    pub most_likely: String,
    pub generations: Vec<String>,
    /// Pairwise similarity between sampled generations, `M x M`.
    pub gen_sim: Vec<Vec<f64>>,
    /// Similarity of each sampled generation to the reference answer.
    pub gen_ref_sim: Vec<f64>,
    /// Similarity of the most-likely generation to the reference answer.
    pub ml_ref_sim: f64,
}

fn in_unit_interval(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl Record {
    /// Number of sampled generations.
    pub fn m(&self) -> usize {
        self.generations.len()
    }

    fn violation(&self, field: &'static str, detail: String) -> Error {
        Error::Invariant {
            id: self.id.clone(),
            field,
            detail,
        }
    }

    /// Checks every record invariant and symmetrizes `gen_sim` in place
    /// when the asymmetry is within [`SYMMETRY_TOLERANCE`].
    pub fn validate(&mut self) -> Result<()> {
        let m = self.m();
        if m == 0 {
            return Err(self.violation("generations", "need at least one generation".into()));
        }
        if self.gen_sim.len() != m {
            return Err(self.violation(
                "gen_sim",
                format!("expected {m} rows for M={m}, found {}", self.gen_sim.len()),
            ));
        }
        if let Some((i, row)) = self.gen_sim.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(self.violation(
                "gen_sim",
                format!("row {i} has {} columns, expected {m}", row.len()),
            ));
        }
        if self.gen_ref_sim.len() != m {
            return Err(self.violation(
                "gen_ref_sim",
                format!("expected length {m}, found {}", self.gen_ref_sim.len()),
            ));
        }
        for (i, row) in self.gen_sim.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !in_unit_interval(v) {
                    return Err(self.violation(
                        "gen_sim",
                        format!("entry [{i}][{j}] = {v} outside [0, 1]"),
                    ));
                }
            }
        }
        if let Some((j, &v)) = self
            .gen_ref_sim
            .iter()
            .enumerate()
            .find(|(_, &v)| !in_unit_interval(v))
        {
            return Err(self.violation("gen_ref_sim", format!("entry [{j}] = {v} outside [0, 1]")));
        }
        if !in_unit_interval(self.ml_ref_sim) {
            return Err(self.violation(
                "ml_ref_sim",
                format!("{} outside [0, 1]", self.ml_ref_sim),
            ));
        }
        for i in 0..m {
            let d = self.gen_sim[i][i];
            if (d - 1.0).abs() > DIAGONAL_TOLERANCE {
                return Err(self.violation("gen_sim", format!("diagonal [{i}][{i}] = {d}, expected 1")));
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let (a, b) = (self.gen_sim[i][j], self.gen_sim[j][i]);
                if (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(self.violation(
                        "gen_sim",
                        format!("asymmetric: [{i}][{j}] = {a} but [{j}][{i}] = {b}"),
                    ));
                }
                if a != b {
                    let mean = 0.5 * (a + b);
                    self.gen_sim[i][j] = mean;
                    self.gen_sim[j][i] = mean;
                }
            }
        }
        Ok(())
    }
}

/// An immutable collection of validated records with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    metadata: String,
}

impl Dataset {
    pub fn new(mut records: Vec<Record>, metadata: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for record in &mut records {
            record.validate()?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::DuplicateId(record.id.clone()));
            }
        }
        Ok(Self {
            records,
            metadata: metadata.into(),
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sub-dataset made of the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], metadata: impl Into<String>) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            metadata: metadata.into(),
        }
    }

    /// Parses line-delimited records. Blank lines are ignored; the first
    /// malformed line or invariant violation aborts ingestion.
    pub fn from_reader(reader: impl BufRead, metadata: impl Into<String>) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            record.validate()?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::DuplicateId(record.id));
            }
            records.push(record);
        }
        Ok(Self {
            records,
            metadata: metadata.into(),
        })
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for record in &self.records {
            let line = serde_json::to_string(record).map_err(|e| Error::Serialize(e.to_string()))?;
            writeln!(writer, "{line}").map_err(|e| Error::Serialize(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Serialize(e.to_string()))
    }
}

/// Reads and validates a line-delimited record file.
pub fn ingest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Dataset::from_reader(BufReader::new(file), path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of records placed in the calibration set, in (0, 1).
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(calibration_fraction: f64, seed: u64) -> Result<Self> {
        if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "calibration fraction {calibration_fraction} not in (0, 1)"
            )));
        }
        Ok(Self {
            calibration_fraction,
            seed,
        })
    }

    /// Calibration size for `n` records: `round(fraction * n)` clamped to `[1, n - 1]`.
    pub fn calibration_size(&self, n: usize) -> usize {
        let raw = (self.calibration_fraction * n as f64).round() as usize;
        raw.clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Seeded permutation of `0..n` cut into (calibration, test) index lists.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewRecords(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let test = order.split_off(spec.calibration_size(n));
    Ok((order, test))
}

/// Splits a dataset into disjoint calibration and test parts.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (cal, test) = split_indices(dataset.len(), spec)?;
    Ok((
        dataset.subset(&cal, format!("{} [calibration]", dataset.metadata())),
        dataset.subset(&test, format!("{} [test]", dataset.metadata())),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, gen_sim: Vec<Vec<f64>>, gen_ref_sim: Vec<f64>) -> Record {
        let m = gen_ref_sim.len();
        Record {
            id: id.into(),
            question: "q".into(),
            reference: "ref".into(),
            most_likely: "ml".into(),
            generations: (0..m).map(|i| format!("g{i}")).collect(),
            gen_sim,
            gen_ref_sim,
            ml_ref_sim: 0.5,
        }
    }

    fn identity(m: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.2 }).collect())
            .collect()
    }

    #[test]
    fn two_valid_records_ingest() {
        let ds = Dataset::new(
            vec![
                record("a", identity(2), vec![0.9, 0.1]),
                record("b", identity(3), vec![0.1, 0.2, 0.3]),
            ],
            "mem",
        )
        .unwrap();
        let text = ds.to_jsonl_string().unwrap();
        let back = Dataset::from_reader(text.as_bytes(), "mem").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back, ds);
    }

    #[test]
    fn shape_mismatch_names_record() {
        let mut r = record("bad", identity(2), vec![0.1, 0.2, 0.3]);
        r.generations.push("g2".into());
        match r.validate() {
            Err(Error::Invariant { id, field, .. }) => {
                assert_eq!(id, "bad");
                assert_eq!(field, "gen_sim");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_similarity_rejected() {
        let mut sim = identity(2);
        sim[0][1] = 1.2;
        sim[1][0] = 1.2;
        let err = record("r", sim, vec![0.1, 0.2]).validate().unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"), "{err}");
    }

    #[test]
    fn small_asymmetry_is_averaged_large_rejected() {
        let mut sim = identity(2);
        sim[0][1] = 0.5;
        sim[1][0] = 0.5 + 5e-7;
        let mut r = record("r", sim.clone(), vec![0.1, 0.2]);
        r.validate().unwrap();
        assert_eq!(r.gen_sim[0][1], r.gen_sim[1][0]);

        sim[1][0] = 0.6;
        assert!(record("r", sim, vec![0.1, 0.2]).validate().is_err());
    }

    #[test]
    fn bad_diagonal_rejected() {
        let mut sim = identity(2);
        sim[1][1] = 0.99;
        assert!(record("r", sim, vec![0.1, 0.2]).validate().is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = serde_json::to_string(&record("a", identity(1), vec![0.5])).unwrap();
        let text = format!("{good}\n{{not json\n");
        match Dataset::from_reader(text.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = record("a", identity(1), vec![0.5]);
        assert!(matches!(
            Dataset::new(vec![r.clone(), r], "mem"),
            Err(Error::DuplicateId(_))
        ));
    }

    fn numbered(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| record(&format!("r{i}"), identity(1), vec![0.5]))
                .collect(),
            "mem",
        )
        .unwrap()
    }

    #[test]
    fn split_eleven_one_to_ten_is_deterministic() {
        let ds = numbered(11);
        let spec = SplitSpec::new(1.0 / 11.0, 7).unwrap();
        let (c1, t1) = split(&ds, &spec).unwrap();
        let (c2, t2) = split(&ds, &spec).unwrap();
        assert_eq!((c1.len(), t1.len()), (1, 10));
        assert_eq!(c1, c2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn split_exact_half() {
        let (c, t) = split(&numbered(100), &SplitSpec::new(0.5, 1).unwrap()).unwrap();
        assert_eq!((c.len(), t.len()), (50, 50));
    }

    #[test]
    fn split_clamps_to_leave_both_sides_nonempty() {
        let ds = numbered(3);
        let (c, t) = split(&ds, &SplitSpec::new(0.01, 0).unwrap()).unwrap();
        assert_eq!((c.len(), t.len()), (1, 2));
        let (c, t) = split(&ds, &SplitSpec::new(0.99, 0).unwrap()).unwrap();
        assert_eq!((c.len(), t.len()), (2, 1));
    }

    #[test]
    fn split_rejects_tiny_dataset() {
        assert!(matches!(
            split(&numbered(1), &SplitSpec::new(0.5, 0).unwrap()),
            Err(Error::TooFewRecords(1))
        ));
        assert!(SplitSpec::new(1.0, 0).is_err());
        assert!(SplitSpec::new(0.0, 0).is_err());
    }

    #[test]
    fn different_seeds_give_different_valid_partitions() {
        let ds = numbered(50);
        let (a, _) = split_indices(ds.len(), &SplitSpec::new(0.3, 1).unwrap()).unwrap();
        let (b, _) = split_indices(ds.len(), &SplitSpec::new(0.3, 2).unwrap()).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a, b);
    }
}
