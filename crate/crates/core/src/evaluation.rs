//! Metrics over calibrated prediction sets: coverage, set size, AUROC of
//! the uncertainty scores, selective-prediction accuracy, and sweeps over
//! error rates and split ratios.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, equivalent, Clustering};
use crate::conformal::{self, CalibrationResult, PredictionSet, Threshold};
use crate::data::{split_indices, Dataset, Record, SplitSpec};
use crate::error::{Error, Result};
use crate::uncertainty;

pub const METHOD_CONU: &str = "conu";
pub const METHOD_NUMSET: &str = "numset";
pub const METHOD_LEXSIM: &str = "lexsim";

/// Recorded in every report: what selective prediction does with an empty set.
pub const EMPTY_SET_POLICY: &str = "fallback_to_most_likely";

/// Whether the most-likely generation is correct.
pub fn correctness_label(record: &Record, tau: f64) -> bool {
    equivalent(record.ml_ref_sim, tau)
}

/// Area under the ROC curve with `positive` marking incorrect answers and
/// scores oriented higher = more uncertain. Ties get half credit.
///
/// Computed from average ranks (Mann-Whitney U) in `O(n log n)`.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(positive.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| positive[i]).count();
        pos_rank_sum += mean_rank * tied_pos as f64;
        start = end;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Share of all test records whose set holds an admissible generation.
    pub coverage: f64,
    /// Same, restricted to records that have an admissible generation at all.
    pub coverage_admissible: Option<f64>,
    /// Same, restricted to records with a non-empty set.
    pub coverage_nonempty: Option<f64>,
    pub avg_set_size: f64,
    pub empty_fraction: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn coverage_from_flags(items: impl Iterator<Item = (usize, bool, bool)>) -> Result<CoverageStats> {
    let (mut n, mut covered, mut total_size, mut empty) = (0, 0, 0, 0);
    let (mut admissible, mut covered_admissible, mut covered_nonempty) = (0, 0, 0);
    for (size, is_covered, is_admissible) in items {
        n += 1;
        total_size += size;
        covered += is_covered as usize;
        if size == 0 {
            empty += 1;
        } else {
            covered_nonempty += is_covered as usize;
        }
        if is_admissible {
            admissible += 1;
            covered_admissible += is_covered as usize;
        }
    }
    if n == 0 {
        return Err(Error::EmptyTest);
    }
    Ok(CoverageStats {
        coverage: covered as f64 / n as f64,
        coverage_admissible: ratio(covered_admissible, admissible),
        coverage_nonempty: ratio(covered_nonempty, n - empty),
        avg_set_size: total_size as f64 / n as f64,
        empty_fraction: empty as f64 / n as f64,
    })
}

/// Coverage statistics for prediction sets paired index-by-index with the
/// test records they were built for.
pub fn coverage_rate(sets: &[PredictionSet], records: &[Record], tau: f64) -> Result<CoverageStats> {
    if sets.len() != records.len() {
        return Err(Error::LengthMismatch {
            scores: sets.len(),
            labels: records.len(),
        });
    }
    let mut items = Vec::with_capacity(sets.len());
    for (set, record) in sets.iter().zip(records) {
        if set.record_id != record.id {
            return Err(Error::Invariant {
                id: record.id.clone(),
                field: "id",
                detail: format!("prediction set belongs to `{}`", set.record_id),
            });
        }
        let covered = set
            .member_indices
            .iter()
            .any(|&j| equivalent(record.gen_ref_sim[j], tau));
        items.push((set.len(), covered, conformal::is_admissible(record, tau)));
    }
    coverage_from_flags(items.into_iter())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Member(usize),
    /// Empty set; the most-likely generation answers instead.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectiveOutcome {
    pub choice: Choice,
    pub correct: bool,
}

pub fn selective_from_scores(
    record: &Record,
    per_generation: &[f64],
    set: &PredictionSet,
    tau: f64,
) -> SelectiveOutcome {
    let mut best: Option<usize> = None;
    for &j in &set.member_indices {
        if best.is_none_or(|b| per_generation[j] < per_generation[b] || (per_generation[j] == per_generation[b] && j < b)) {
            best = Some(j);
        }
    }
    match best {
        Some(j) => SelectiveOutcome {
            choice: Choice::Member(j),
            correct: equivalent(record.gen_ref_sim[j], tau),
        },
        None => SelectiveOutcome {
            choice: Choice::Fallback,
            correct: correctness_label(record, tau),
        },
    }
}

/// Answers with the least uncertain member of the prediction set.
pub fn selective_predict(
    record: &Record,
    clustering: &Clustering,
    set: &PredictionSet,
    lambda: f64,
    tau: f64,
) -> SelectiveOutcome {
    let report = uncertainty::score(record, clustering, lambda);
    selective_from_scores(record, &report.per_generation, set, tau)
}

/// Every per-record quantity evaluation needs, computed once so that
/// repeated splits only re-index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub per_generation: Vec<f64>,
    pub process: f64,
    pub numset: f64,
    pub lexsim: Option<f64>,
    /// `None` when no generation is admissible.
    pub nonconformity: Option<f64>,
    pub gen_correct: Vec<bool>,
    pub ml_correct: bool,
}

impl ScoredRecord {
    pub fn new(record: &Record, lambda: f64, tau: f64) -> Self {
        let clustering = cluster(record, tau);
        let report = uncertainty::score(record, &clustering, lambda);
        let nonconformity = conformal::best_admissible(record, tau).map(|j| report.per_generation[j]);
        Self {
            process: report.process,
            numset: uncertainty::baseline_numset(&clustering),
            lexsim: uncertainty::baseline_lexsim(record).ok(),
            nonconformity,
            gen_correct: record.gen_ref_sim.iter().map(|&s| equivalent(s, tau)).collect(),
            ml_correct: correctness_label(record, tau),
            per_generation: report.per_generation,
        }
    }

    pub fn admissible(&self) -> bool {
        self.nonconformity.is_some()
    }

    fn members(&self, q_hat: Threshold) -> impl Iterator<Item = usize> + '_ {
        self.per_generation
            .iter()
            .enumerate()
            .filter(move |(_, &u)| q_hat.admits(u))
            .map(|(j, _)| j)
    }
}

#[derive(Debug, Clone)]
pub struct ScoredDataset {
    pub ids: Vec<String>,
    pub records: Vec<ScoredRecord>,
    pub lambda: f64,
    pub tau: f64,
}

impl ScoredDataset {
    pub fn new(dataset: &Dataset, lambda: f64, tau: f64) -> Self {
        Self {
            ids: dataset.records().iter().map(|r| r.id.clone()).collect(),
            records: dataset
                .records()
                .iter()
                .map(|r| ScoredRecord::new(r, lambda, tau))
                .collect(),
            lambda,
            tau,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Calibrates on the records at `indices`.
    pub fn calibrate(&self, indices: &[usize], alpha: f64) -> Result<CalibrationResult> {
        let mut scores = Vec::with_capacity(indices.len());
        for &i in indices {
            if let Some(r) = self.records[i].nonconformity {
                scores.push(r);
            }
        }
        let skipped = indices.len() - scores.len();
        conformal::calibrate_scores(scores, alpha, skipped, self.lambda, self.tau)
    }

    /// AUROC of each method on the records at `indices`; methods whose
    /// AUROC is undefined (one class, or missing baseline) are left out.
    pub fn auroc_by_method(&self, indices: &[usize]) -> BTreeMap<String, f64> {
        let labels: Vec<bool> = indices.iter().map(|&i| !self.records[i].ml_correct).collect();
        let mut out = BTreeMap::new();
        let conu: Vec<f64> = indices.iter().map(|&i| self.records[i].process).collect();
        if let Ok(a) = auroc(&conu, &labels) {
            out.insert(METHOD_CONU.to_string(), a);
        }
        let numset: Vec<f64> = indices.iter().map(|&i| self.records[i].numset).collect();
        if let Ok(a) = auroc(&numset, &labels) {
            out.insert(METHOD_NUMSET.to_string(), a);
        }
        let lexsim: Option<Vec<f64>> = indices.iter().map(|&i| self.records[i].lexsim).collect();
        if let Some(Ok(a)) = lexsim.map(|s| auroc(&s, &labels)) {
            out.insert(METHOD_LEXSIM.to_string(), a);
        }
        out
    }

    /// Coverage and selective accuracy of `calibration` on the records at `test`.
    pub fn evaluate_test(
        &self,
        test: &[usize],
        calibration: &CalibrationResult,
        auroc_by_method: BTreeMap<String, f64>,
    ) -> Result<EvaluationReport> {
        if test.is_empty() {
            return Err(Error::EmptyTest);
        }
        let q_hat = calibration.q_hat;
        let mut selective_correct = 0;
        let mut original_correct = 0;
        let mut flags = Vec::with_capacity(test.len());
        for &i in test {
            let rec = &self.records[i];
            let mut size = 0;
            let mut covered = false;
            let mut best: Option<usize> = None;
            for j in rec.members(q_hat) {
                size += 1;
                covered |= rec.gen_correct[j];
                // members arrive in index order, so strict < keeps the lowest index on ties
                if best.is_none_or(|b| rec.per_generation[j] < rec.per_generation[b]) {
                    best = Some(j);
                }
            }
            let selective = match best {
                Some(j) => rec.gen_correct[j],
                None => rec.ml_correct,
            };
            selective_correct += selective as usize;
            original_correct += rec.ml_correct as usize;
            flags.push((size, covered, rec.admissible()));
        }
        let stats = coverage_from_flags(flags.into_iter())?;
        let n = test.len() as f64;
        Ok(EvaluationReport {
            alpha: calibration.alpha,
            split_fraction: None,
            repetition: None,
            q_hat,
            coverage: stats.coverage,
            coverage_admissible: stats.coverage_admissible,
            coverage_nonempty: stats.coverage_nonempty,
            avg_set_size: stats.avg_set_size,
            empty_fraction: stats.empty_fraction,
            auroc_by_method,
            selective_accuracy: selective_correct as f64 / n,
            original_accuracy: original_correct as f64 / n,
            n_test: test.len(),
            n_calibration: calibration.n_calibration,
            skipped_calibration: calibration.skipped,
            empty_set_policy: EMPTY_SET_POLICY.to_string(),
        })
    }

    /// Calibrates on `cal` and evaluates on `test` for every alpha.
    pub fn evaluate_split(&self, cal: &[usize], test: &[usize], alphas: &[f64]) -> Result<Vec<EvaluationReport>> {
        let aurocs = self.auroc_by_method(test);
        alphas
            .iter()
            .map(|&alpha| {
                let calibration = self.calibrate(cal, alpha)?;
                self.evaluate_test(test, &calibration, aurocs.clone())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub alpha: f64,
    pub split_fraction: Option<f64>,
    pub repetition: Option<usize>,
    pub q_hat: Threshold,
    pub coverage: f64,
    pub coverage_admissible: Option<f64>,
    pub coverage_nonempty: Option<f64>,
    pub avg_set_size: f64,
    pub empty_fraction: f64,
    pub auroc_by_method: BTreeMap<String, f64>,
    pub selective_accuracy: f64,
    pub original_accuracy: f64,
    pub n_test: usize,
    pub n_calibration: usize,
    pub skipped_calibration: usize,
    pub empty_set_policy: String,
}

/// Calibrates on one dataset and evaluates on another.
pub fn evaluate(
    calibration: &Dataset,
    test: &Dataset,
    alphas: &[f64],
    lambda: f64,
    tau: f64,
) -> Result<Vec<EvaluationReport>> {
    let cal = ScoredDataset::new(calibration, lambda, tau);
    let tst = ScoredDataset::new(test, lambda, tau);
    let cal_idx: Vec<usize> = (0..cal.len()).collect();
    let test_idx: Vec<usize> = (0..tst.len()).collect();
    let aurocs = tst.auroc_by_method(&test_idx);
    alphas
        .iter()
        .map(|&alpha| {
            let result = cal.calibrate(&cal_idx, alpha)?;
            tst.evaluate_test(&test_idx, &result, aurocs.clone())
        })
        .collect()
}

/// Evaluates a stored calibration result on every record of `test`.
pub fn evaluate_with_calibration(test: &Dataset, calibration: &CalibrationResult) -> Result<EvaluationReport> {
    let scored = ScoredDataset::new(test, calibration.lambda, calibration.tau);
    let idx: Vec<usize> = (0..scored.len()).collect();
    let aurocs = scored.auroc_by_method(&idx);
    scored.evaluate_test(&idx, calibration, aurocs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub lambda: f64,
    pub tau: f64,
}

/// SplitMix64 finalizer over the base seed and the grid coordinates.
pub fn derive_seed(base: u64, grid_point: u64, repetition: u64) -> u64 {
    let mut z = base
        ^ grid_point.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ repetition.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub alpha: f64,
    pub split_fraction: f64,
    pub repetitions: usize,
    pub mean_coverage: f64,
    pub std_coverage: f64,
    pub mean_coverage_admissible: Option<f64>,
    pub std_coverage_admissible: Option<f64>,
    pub mean_coverage_nonempty: Option<f64>,
    pub std_coverage_nonempty: Option<f64>,
    pub mean_avg_set_size: f64,
    pub std_avg_set_size: f64,
    pub mean_empty_fraction: f64,
    pub std_empty_fraction: f64,
    pub mean_selective_accuracy: f64,
    pub std_selective_accuracy: f64,
    pub mean_original_accuracy: f64,
    pub std_original_accuracy: f64,
    pub mean_auroc_conu: Option<f64>,
    pub std_auroc_conu: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean/std over the values present; `None` when any row lacks the value.
fn mean_std_opt(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    match values.collect::<Option<Vec<f64>>>() {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        _ => (None, None),
    }
}

impl SummaryRow {
    fn from_rows(alpha: f64, split_fraction: f64, rows: &[&EvaluationReport]) -> Self {
        let col = |f: fn(&EvaluationReport) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (mean_coverage, std_coverage) = col(|r| r.coverage);
        let (mean_avg_set_size, std_avg_set_size) = col(|r| r.avg_set_size);
        let (mean_empty_fraction, std_empty_fraction) = col(|r| r.empty_fraction);
        let (mean_selective_accuracy, std_selective_accuracy) = col(|r| r.selective_accuracy);
        let (mean_original_accuracy, std_original_accuracy) = col(|r| r.original_accuracy);
        let (mean_coverage_admissible, std_coverage_admissible) =
            mean_std_opt(rows.iter().map(|r| r.coverage_admissible));
        let (mean_coverage_nonempty, std_coverage_nonempty) =
            mean_std_opt(rows.iter().map(|r| r.coverage_nonempty));
        let (mean_auroc_conu, std_auroc_conu) =
            mean_std_opt(rows.iter().map(|r| r.auroc_by_method.get(METHOD_CONU).copied()));
        Self {
            alpha,
            split_fraction,
            repetitions: rows.len(),
            mean_coverage,
            std_coverage,
            mean_coverage_admissible,
            std_coverage_admissible,
            mean_coverage_nonempty,
            std_coverage_nonempty,
            mean_avg_set_size,
            std_avg_set_size,
            mean_empty_fraction,
            std_empty_fraction,
            mean_selective_accuracy,
            std_selective_accuracy,
            mean_original_accuracy,
            std_original_accuracy,
            mean_auroc_conu,
            std_auroc_conu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<EvaluationReport>,
    pub summary: Vec<SummaryRow>,
}

/// Runs a full evaluation for every (split fraction, repetition, alpha).
///
/// Each (fraction, repetition) pair gets its own split seed from
/// [`derive_seed`]; all alphas share that split so their prediction sets
/// are directly comparable.
pub fn sweep(dataset: &Dataset, config: &SweepConfig) -> Result<SweepTable> {
    sweep_scored(&ScoredDataset::new(dataset, config.lambda, config.tau), config)
}

pub fn sweep_scored(scored: &ScoredDataset, config: &SweepConfig) -> Result<SweepTable> {
    if config.repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
    }
    if config.alphas.is_empty() || config.fractions.is_empty() {
        return Err(Error::InvalidConfig("alpha and fraction grids must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(config.alphas.len() * config.fractions.len() * config.repetitions);
    for (fi, &fraction) in config.fractions.iter().enumerate() {
        for rep in 0..config.repetitions {
            let spec = SplitSpec::new(fraction, derive_seed(config.seed, fi as u64, rep as u64))?;
            let (cal, test) = split_indices(scored.len(), &spec)?;
            for mut report in scored.evaluate_split(&cal, &test, &config.alphas)? {
                report.split_fraction = Some(fraction);
                report.repetition = Some(rep);
                rows.push(report);
            }
        }
    }
    let mut summary = Vec::new();
    for &fraction in &config.fractions {
        for &alpha in &config.alphas {
            let group: Vec<&EvaluationReport> = rows
                .iter()
                .filter(|r| r.alpha == alpha && r.split_fraction == Some(fraction))
                .collect();
            summary.push(SummaryRow::from_rows(alpha, fraction, &group));
        }
    }
    Ok(SweepTable { rows, summary })
}

/// Flat table row; column names are stable for plotting scripts.
#[derive(Debug, Clone, Serialize)]
struct TableRow<'a> {
    alpha: f64,
    split_fraction: Option<f64>,
    repetition: Option<usize>,
    q_hat: String,
    coverage: f64,
    coverage_admissible: Option<f64>,
    coverage_nonempty: Option<f64>,
    avg_set_size: f64,
    empty_fraction: f64,
    selective_accuracy: f64,
    original_accuracy: f64,
    auroc_conu: Option<f64>,
    auroc_numset: Option<f64>,
    auroc_lexsim: Option<f64>,
    n_test: usize,
    n_calibration: usize,
    skipped_calibration: usize,
    empty_set_policy: &'a str,
}

impl<'a> From<&'a EvaluationReport> for TableRow<'a> {
    fn from(r: &'a EvaluationReport) -> Self {
        TableRow {
            alpha: r.alpha,
            split_fraction: r.split_fraction,
            repetition: r.repetition,
            q_hat: r.q_hat.to_string(),
            coverage: r.coverage,
            coverage_admissible: r.coverage_admissible,
            coverage_nonempty: r.coverage_nonempty,
            avg_set_size: r.avg_set_size,
            empty_fraction: r.empty_fraction,
            selective_accuracy: r.selective_accuracy,
            original_accuracy: r.original_accuracy,
            auroc_conu: r.auroc_by_method.get(METHOD_CONU).copied(),
            auroc_numset: r.auroc_by_method.get(METHOD_NUMSET).copied(),
            auroc_lexsim: r.auroc_by_method.get(METHOD_LEXSIM).copied(),
            n_test: r.n_test,
            n_calibration: r.n_calibration,
            skipped_calibration: r.skipped_calibration,
            empty_set_policy: &r.empty_set_policy,
        }
    }
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Serialize(e.to_string())
}

/// Writes reports as CSV with a header row.
pub fn write_reports_csv(reports: &[EvaluationReport], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(TableRow::from(r)).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_summary_csv(summary: &[SummaryRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in summary {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], mut writer: impl Write) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item).map_err(csv_err)?;
        writeln!(writer, "{line}").map_err(csv_err)?;
    }
    Ok(())
}

/// Coverage as a percentage with two decimals, e.g. `91.00`.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}
