use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use conu::clustering::cluster;
use conu::conformal::{self, CalibrationResult};
use conu::data::{ingest, split, Dataset};
use conu::evaluation::{self, EvaluationReport, ScoredDataset, SweepConfig, SweepTable};
use conu::synthetic::{self, GeneratorSpec, MostLikelySource};
use conu::uncertainty;
use serde::Serialize;

use crate::settings::Resolved;
use crate::{Command, GeneratorArgs, GridArgs, MostLikelyArg};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { input, settings } => validate(&input, &settings.resolve()?),
        Command::Score { input, settings } => score(&input, &settings.resolve()?),
        Command::Calibrate {
            input,
            omit_scores,
            settings,
        } => calibrate(&input, omit_scores, &settings.resolve()?),
        Command::Predict {
            input,
            artifact,
            settings,
        } => predict(&input, &artifact, &settings.resolve()?),
        Command::Evaluate {
            input,
            artifact,
            settings,
        } => evaluate(&input, artifact.as_deref(), &settings.resolve()?),
        Command::Simulate {
            generator,
            grid,
            settings,
        } => {
            let resolved = settings.resolve()?;
            let out = resolved.out_dir()?;
            let (dataset, truth) = generate(&generator, &resolved)?;
            write_atomic(out, "dataset.jsonl", &dataset.to_jsonl_string()?)?;
            write_atomic(out, "ground_truth.jsonl", &jsonl(&truth)?)?;
            println!("generated {} records", dataset.len());
            run_sweep(&dataset, &grid, &resolved)
        }
        Command::Sweep {
            input,
            generator,
            grid,
            settings,
        } => {
            let resolved = settings.resolve()?;
            let dataset = match input {
                Some(path) => ingest(path)?,
                None => generate(&generator, &resolved)?.0,
            };
            run_sweep(&dataset, &grid, &resolved)
        }
    }
}

/// Writes `contents` to `dir/name` through a temporary file and rename.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    let path = dir.join(name);
    tmp.persist(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    evaluation::write_jsonl(items, &mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn validate(input: &Path, resolved: &Resolved) -> Result<()> {
    let dataset = ingest(input)?;
    let report = conformal::admissibility_check(&dataset, resolved.config.tau);
    println!("records: {}", dataset.len());
    println!("admissibility_rate: {}", report.rate);
    println!("violating_ids: {}", report.violating_ids.len());
    for id in &report.violating_ids {
        println!("  {id}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    id: &'a str,
    conu: f64,
    numset: f64,
    lexsim: Option<f64>,
    k: usize,
    most_trustworthy: usize,
    correct: bool,
    admissible: bool,
}

fn score(input: &Path, resolved: &Resolved) -> Result<()> {
    let dataset = ingest(input)?;
    let (lambda, tau) = (resolved.config.lambda, resolved.config.tau);
    let mut rows = Vec::with_capacity(dataset.len());
    for record in dataset.records() {
        let clustering = cluster(record, tau);
        let report = uncertainty::score(record, &clustering, lambda);
        rows.push(ScoreRow {
            id: &record.id,
            conu: report.process,
            numset: uncertainty::baseline_numset(&clustering),
            lexsim: uncertainty::baseline_lexsim(record).ok(),
            k: report.k,
            most_trustworthy: report.most_trustworthy_index,
            correct: evaluation::correctness_label(record, tau),
            admissible: conformal::is_admissible(record, tau),
        });
    }
    let scored = ScoredDataset::new(&dataset, lambda, tau);
    let all: Vec<usize> = (0..scored.len()).collect();
    let aurocs = scored.auroc_by_method(&all);

    let mut table = String::from("method,auroc,n_records\n");
    println!("{:<8} {:>8}", "method", "auroc");
    for method in [evaluation::METHOD_CONU, evaluation::METHOD_NUMSET, evaluation::METHOD_LEXSIM] {
        match aurocs.get(method) {
            Some(a) => {
                table.push_str(&format!("{method},{a},{}\n", dataset.len()));
                println!("{method:<8} {a:>8.4}");
            }
            None => {
                table.push_str(&format!("{method},,{}\n", dataset.len()));
                println!("{method:<8} {:>8}", "undefined");
            }
        }
    }
    if let Some(out) = &resolved.out_dir {
        write_atomic(out, "scores.jsonl", &jsonl(&rows)?)?;
        write_atomic(out, "auroc.csv", &table)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SplitArtifact<'a> {
    seed: u64,
    calibration_fraction: f64,
    calibration_ids: Vec<&'a str>,
    test_ids: Vec<&'a str>,
}

fn calibration_file_name(alpha: f64) -> String {
    format!("calibration_alpha_{alpha}.json")
}

fn calibrate(input: &Path, omit_scores: bool, resolved: &Resolved) -> Result<()> {
    let out = resolved.out_dir()?;
    let config = &resolved.config;
    let dataset = ingest(input)?;
    let (cal, test) = split(&dataset, &config.split)?;
    let split_artifact = SplitArtifact {
        seed: config.split.seed,
        calibration_fraction: config.split.calibration_fraction,
        calibration_ids: cal.records().iter().map(|r| r.id.as_str()).collect(),
        test_ids: test.records().iter().map(|r| r.id.as_str()).collect(),
    };
    write_atomic(out, "split.json", &serde_json::to_string_pretty(&split_artifact)?)?;
    for &alpha in &config.alphas {
        let mut result = conformal::calibrate(&cal, alpha, config.lambda, config.tau)?;
        if omit_scores {
            result = result.without_scores();
        }
        let name = calibration_file_name(alpha);
        write_atomic(out, &name, &serde_json::to_string_pretty(&result)?)?;
        println!(
            "alpha={alpha} q_hat={} N={} skipped={} -> {name}",
            result.q_hat, result.n_calibration, result.skipped
        );
    }
    Ok(())
}

fn load_artifact(path: &Path) -> Result<CalibrationResult> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| conu::Error::InvalidConfig(format!("{}: {e}", path.display())).into())
}

fn predict(input: &Path, artifact: &Path, resolved: &Resolved) -> Result<()> {
    let calibration = load_artifact(artifact)?;
    let dataset = ingest(input)?;
    let sets: Vec<_> = dataset
        .records()
        .iter()
        .map(|r| {
            let clustering = cluster(r, calibration.tau);
            conformal::predict(r, &clustering, &calibration, calibration.lambda)
        })
        .collect();
    let text = jsonl(&sets)?;
    match &resolved.out_dir {
        Some(out) => {
            write_atomic(out, "predictions.jsonl", &text)?;
            let total: usize = sets.iter().map(|s| s.len()).sum();
            let empty = sets.iter().filter(|s| s.is_empty()).count();
            println!(
                "records={} q_hat={} avg_set_size={} empty_sets={}",
                sets.len(),
                calibration.q_hat,
                total as f64 / sets.len().max(1) as f64,
                empty
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn print_reports(reports: &[EvaluationReport]) {
    println!(
        "{:>6} {:>10} {:>9} {:>9} {:>8} {:>8} {:>9} {:>9}",
        "alpha", "q_hat", "coverage", "cov_adm", "avg_set", "empty", "sel_acc", "orig_acc"
    );
    for r in reports {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let q_hat = match r.q_hat.finite() {
            Some(q) => format!("{q:.4}"),
            None => r.q_hat.to_string(),
        };
        println!(
            "{:>6} {:>10} {:>9.4} {:>9} {:>8.3} {:>8.3} {:>9.4} {:>9.4}",
            r.alpha,
            q_hat,
            r.coverage,
            opt(r.coverage_admissible),
            r.avg_set_size,
            r.empty_fraction,
            r.selective_accuracy,
            r.original_accuracy
        );
    }
    if let Some(r) = reports.first() {
        println!(
            "n_calibration={} skipped_calibration={} n_test={}",
            r.n_calibration, r.skipped_calibration, r.n_test
        );
        for (method, a) in &r.auroc_by_method {
            println!("auroc[{method}]={a:.4}");
        }
    }
}

fn write_reports(out: &Path, stem: &str, reports: &[EvaluationReport]) -> Result<()> {
    let mut csv = Vec::new();
    evaluation::write_reports_csv(reports, &mut csv)?;
    write_atomic(out, &format!("{stem}.csv"), &String::from_utf8(csv)?)?;
    write_atomic(out, &format!("{stem}.jsonl"), &jsonl(reports)?)
}

fn evaluate(input: &Path, artifact: Option<&Path>, resolved: &Resolved) -> Result<()> {
    let config = &resolved.config;
    let dataset = ingest(input)?;
    let reports = match artifact {
        Some(path) => {
            let calibration = load_artifact(path)?;
            vec![evaluation::evaluate_with_calibration(&dataset, &calibration)?]
        }
        None => {
            let (cal, test) = split(&dataset, &config.split)?;
            evaluation::evaluate(&cal, &test, &config.alphas, config.lambda, config.tau)?
        }
    };
    print_reports(&reports);
    if let Some(out) = &resolved.out_dir {
        write_reports(out, "evaluation", &reports)?;
    }
    Ok(())
}

fn generate(args: &GeneratorArgs, resolved: &Resolved) -> Result<(Dataset, Vec<synthetic::GroundTruth>)> {
    let tau = resolved.config.tau;
    let spec = GeneratorSpec {
        n_records: args.n_records,
        m: args.m,
        n_semantics: args.n_semantics,
        concentration: args.concentration,
        accuracy: args.accuracy,
        within_sim: args.within_sim,
        cross_sim_max: args.cross_sim_max.unwrap_or(tau - 0.1),
        plant_inadmissible: args.plant_inadmissible,
        require_admissible: args.require_admissible,
        most_likely: match args.most_likely {
            MostLikelyArg::ModalSample => MostLikelySource::ModalSample,
            MostLikelyArg::IndependentDraw => MostLikelySource::IndependentDraw,
        },
        seed: resolved.config.seed,
    };
    Ok(synthetic::generate(&spec, tau)?)
}

fn run_sweep(dataset: &Dataset, grid: &GridArgs, resolved: &Resolved) -> Result<()> {
    let out = resolved.out_dir()?;
    let config = &resolved.config;
    let fractions = if grid.fractions.is_empty() {
        vec![config.split.calibration_fraction]
    } else {
        grid.fractions
            .iter()
            .map(|f| conu::config::parse_fraction(f))
            .collect::<conu::Result<Vec<_>>>()?
    };
    let sweep_config = SweepConfig {
        alphas: config.alphas.clone(),
        fractions,
        repetitions: resolved.reps,
        seed: config.seed,
        lambda: config.lambda,
        tau: config.tau,
    };
    let SweepTable { rows, summary } = evaluation::sweep(dataset, &sweep_config)?;
    write_reports(out, "sweep", &rows)?;
    let mut csv = Vec::new();
    evaluation::write_summary_csv(&summary, &mut csv)?;
    write_atomic(out, "sweep_summary.csv", &String::from_utf8(csv)?)?;

    println!(
        "{:>6} {:>9} {:>5} {:>10} {:>10} {:>9} {:>9}",
        "alpha", "fraction", "reps", "coverage", "cov_adm", "avg_set", "sel_acc"
    );
    for s in &summary {
        println!(
            "{:>6} {:>9.4} {:>5} {:>10.4} {:>10} {:>9.3} {:>9.4}",
            s.alpha,
            s.split_fraction,
            s.repetitions,
            s.mean_coverage,
            s.mean_coverage_admissible.map_or("-".into(), |v| format!("{v:.4}")),
            s.mean_avg_set_size,
            s.mean_selective_accuracy
        );
    }
    Ok(())
}
