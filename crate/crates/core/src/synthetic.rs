//! Synthetic exchangeable datasets with known ground truth, and
//! brute-force oracles used to cross-check the production code paths.
//!
//! Each record draws its own categorical distribution over a small
//! vocabulary of latent answers (a symmetric Dirichlet whose parameter
//! shrinks as `concentration` grows), samples `M` generations from it and
//! picks a reference answer. Similarities are block-structured: pairs
//! sharing a latent answer get `within_sim` (at or above the equivalence
//! threshold), all other pairs uniform noise in `[0, cross_sim_max]`
//! (strictly below it), so threshold clustering recovers the latent
//! partition exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::conformal::Threshold;
use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::evaluation::derive_seed;

/// How the most-likely generation's latent answer is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MostLikelySource {
    /// The most frequent answer among the sampled generations.
    #[default]
    ModalSample,
    /// One extra draw from the record's answer distribution, independent
    /// of the sampled generations.
    IndependentDraw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_records: usize,
    /// Generations per record.
    pub m: usize,
    /// Size of the latent answer vocabulary.
    pub n_semantics: usize,
    /// Larger is more peaked.
    pub concentration: f64,
    /// Probability that the reference equals the record's modal latent answer.
    pub accuracy: f64,
    pub within_sim: f64,
    pub cross_sim_max: f64,
    /// Probability that a record's reference is an answer no generation gives.
    #[serde(default)]
    pub plant_inadmissible: f64,
    /// Redraw non-planted records until at least one generation matches
    /// the reference. Draws stay i.i.d., now from the conditional law.
    #[serde(default)]
    pub require_admissible: bool,
    #[serde(default)]
    pub most_likely: MostLikelySource,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_records: 1000,
            m: 10,
            n_semantics: 5,
            concentration: 1.0,
            accuracy: 0.85,
            within_sim: 1.0,
            cross_sim_max: crate::config::DEFAULT_TAU - 0.1,
            plant_inadmissible: 0.0,
            require_admissible: false,
            most_likely: MostLikelySource::ModalSample,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self, tau: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n_records == 0 || self.m == 0 || self.n_semantics == 0 {
            return bad("n_records, m and n_semantics must be positive".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(format!("concentration {} must be positive", self.concentration));
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return bad(format!("accuracy {} not in [0, 1]", self.accuracy));
        }
        if !(0.0..=1.0).contains(&self.plant_inadmissible) {
            return bad(format!("plant_inadmissible {} not in [0, 1]", self.plant_inadmissible));
        }
        if !(self.within_sim >= tau && self.within_sim <= 1.0) {
            return bad(format!("within_sim {} not in [tau={tau}, 1]", self.within_sim));
        }
        if !(self.cross_sim_max >= 0.0 && self.cross_sim_max < tau) {
            return bad(format!("cross_sim_max {} not in [0, tau={tau})", self.cross_sim_max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    /// Latent answer of each sampled generation.
    pub semantics: Vec<usize>,
    pub reference_semantic: usize,
    pub most_likely_semantic: usize,
    /// Most probable answer under the record's latent distribution.
    pub latent_mode: usize,
    pub admissible: bool,
    pub planted_inadmissible: bool,
}

fn draw_distribution(rng: &mut impl Rng, n: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(1.0 / concentration, 1.0).expect("positive shape");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        // every draw underflowed: the limit is a point mass
        let k = rng.random_range(0..n);
        w = (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
    }
    w
}

fn draw_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Most frequent value, ties broken by first occurrence.
fn modal(values: &[usize]) -> usize {
    let mut best = values[0];
    let mut best_count = 0;
    for &v in values {
        let count = values.iter().filter(|&&x| x == v).count();
        if count > best_count {
            best = v;
            best_count = count;
        }
    }
    best
}

const MAX_ATTEMPTS: u64 = 10_000;

/// Generates `spec.n_records` i.i.d. records and their ground truth.
pub fn generate(spec: &GeneratorSpec, tau: f64) -> Result<(Dataset, Vec<GroundTruth>)> {
    spec.validate(tau)?;
    let mut records = Vec::with_capacity(spec.n_records);
    let mut truth = Vec::with_capacity(spec.n_records);
    for i in 0..spec.n_records {
        let mut plant_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64, u64::MAX));
        let planted = plant_rng.random::<f64>() < spec.plant_inadmissible;
        let mut attempt = 0u64;
        loop {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64, u64::MAX - 1 - attempt));
            let (record, gt) = generate_record(spec, i, planted, &mut rng);
            if planted || gt.admissible || !spec.require_admissible {
                records.push(record);
                truth.push(gt);
                break;
            }
            attempt += 1;
            if attempt >= MAX_ATTEMPTS {
                return Err(Error::InvalidSpec(format!(
                    "no admissible record after {MAX_ATTEMPTS} draws; raise accuracy or m"
                )));
            }
        }
    }
    let metadata = format!(
        "synthetic: {}",
        serde_json::to_string(spec).map_err(|e| Error::Serialize(e.to_string()))?
    );
    Ok((Dataset::new(records, metadata)?, truth))
}

fn generate_record(
    spec: &GeneratorSpec,
    index: usize,
    planted: bool,
    rng: &mut ChaCha8Rng,
) -> (Record, GroundTruth) {
    let probs = draw_distribution(rng, spec.n_semantics, spec.concentration);
    let latent_mode = argmax(&probs);
    let semantics: Vec<usize> = (0..spec.m).map(|_| draw_categorical(rng, &probs)).collect();

    let reference_semantic = if planted {
        // an answer outside the vocabulary, so no generation can match it
        spec.n_semantics
    } else if spec.n_semantics == 1 || rng.random::<f64>() < spec.accuracy {
        latent_mode
    } else {
        let other = rng.random_range(0..spec.n_semantics - 1);
        if other >= latent_mode {
            other + 1
        } else {
            other
        }
    };
    let most_likely_semantic = match spec.most_likely {
        MostLikelySource::ModalSample => modal(&semantics),
        MostLikelySource::IndependentDraw => draw_categorical(rng, &probs),
    };

    let mut similarity = |a: usize, b: usize| {
        if a == b {
            spec.within_sim
        } else {
            rng.random_range(0.0..=spec.cross_sim_max)
        }
    };
    let m = spec.m;
    let mut gen_sim = vec![vec![1.0; m]; m];
    for a in 0..m {
        for b in (a + 1)..m {
            let s = similarity(semantics[a], semantics[b]);
            gen_sim[a][b] = s;
            gen_sim[b][a] = s;
        }
    }
    let gen_ref_sim: Vec<f64> = semantics
        .iter()
        .map(|&s| similarity(s, reference_semantic))
        .collect();
    let ml_ref_sim = similarity(most_likely_semantic, reference_semantic);

    let id = format!("syn-{index:06}");
    let admissible = semantics.contains(&reference_semantic);
    let record = Record {
        id: id.clone(),
        question: format!("synthetic question {index}"),
        reference: format!("answer {reference_semantic}"),
        most_likely: format!("answer {most_likely_semantic}"),
        generations: semantics.iter().map(|s| format!("answer {s}")).collect(),
        gen_sim,
        gen_ref_sim,
        ml_ref_sim,
    };
    let gt = GroundTruth {
        id,
        semantics,
        reference_semantic,
        most_likely_semantic,
        latent_mode,
        admissible,
        planted_inadmissible: planted,
    };
    (record, gt)
}

/// Threshold by full sort and direct rank arithmetic. Independent of
/// [`crate::conformal`].
pub fn oracle_quantile(scores: &[f64], alpha: f64) -> Threshold {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = sorted.len();
    let target = (n + 1) as f64 * (1.0 - alpha);
    // smallest integer k with k >= target, tolerating rounding noise in target
    let k = (1..=n + 1)
        .find(|&k| k as f64 >= target - 1e-9 * target.max(1.0))
        .unwrap_or(n + 1);
    if k <= n {
        Threshold::Finite(sorted[k - 1])
    } else {
        Threshold::Unbounded
    }
}

/// Threshold as the infimum over observed scores `q` with
/// `|{i : r_i <= q}| / N >= ⌈(N+1)(1-α)⌉ / N`, by exhaustive counting.
pub fn oracle_quantile_infimum(scores: &[f64], alpha: f64) -> Threshold {
    let n = scores.len();
    let target = (n + 1) as f64 * (1.0 - alpha);
    let needed = (1..=n + 1)
        .find(|&k| k as f64 >= target - 1e-9 * target.max(1.0))
        .unwrap_or(n + 1);
    let mut best: Option<f64> = None;
    for &q in scores {
        let count = scores.iter().filter(|&&r| r <= q).count();
        if count >= needed && best.is_none_or(|b| q < b) {
            best = Some(q);
        }
    }
    best.map_or(Threshold::Unbounded, Threshold::Finite)
}

/// AUROC by counting every (positive, negative) pair; ties score 1/2.
pub fn oracle_auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: positive.len(),
        });
    }
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::SingleClass(scores.len()));
    }
    Ok(wins / pairs as f64)
}
