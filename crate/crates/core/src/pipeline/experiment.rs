use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ensure_parent, stage_assemble, stage_eval, stage_generate, stage_prepare, stage_qc,
    stage_train, synthesize, write_report_files, EvalOutput, PipelineConfig, PipelineError,
    RunDir,
};
use crate::assembly::{AugmentationMode, Condition};
use crate::corpus::{write_examples, Attribute, Example};
use crate::fairness_eval::{mean_sd, paired_sign_test, EvalError, MeanSd};

/// Baseline gap the benchmark corpus must show before augmentation.
pub const MIN_BASELINE_GAP: f64 = 0.02;
/// Largest overall-accuracy drop tolerated for the augmented condition.
pub const MAX_ACCURACY_DROP: f64 = 0.01;

/// One (seed, condition) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub seed: u64,
    pub condition: Condition,
    pub n_candidates: usize,
    pub n_retained: usize,
    pub eval: Option<EvalOutput>,
    /// Set when a stage failed; the other cells still run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n_cells: usize,
    pub overall: Option<MeanSd>,
    pub groups: BTreeMap<Attribute, Option<MeanSd>>,
    pub bias_gap: Option<MeanSd>,
    pub mean_synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub reference: Condition,
    pub other: Condition,
    pub metric: String,
    pub n_pairs: usize,
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    pub conditions: Vec<Condition>,
    pub augmentation_mode: AugmentationMode,
    pub ci_level: f64,
    pub groups: Vec<Attribute>,
    pub cells: Vec<Cell>,
    pub summaries: Vec<ConditionSummary>,
    pub sign_tests: Vec<SignTest>,
    pub checks: Vec<CheckResult>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn summary(&self, condition: Condition) -> Option<&ConditionSummary> {
        self.summaries.iter().find(|s| s.condition == condition)
    }

    pub fn from_cells(cells: Vec<Cell>, cfg: &PipelineConfig) -> Self {
        let groups: Vec<Attribute> = cells
            .iter()
            .filter_map(|c| c.eval.as_ref())
            .flat_map(|e| e.metrics.groups.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let summaries: Vec<ConditionSummary> = cfg
            .conditions
            .iter()
            .map(|&condition| summarize(condition, &cells, &groups))
            .collect();
        let mut report = ExperimentReport {
            seeds: cfg.seeds.clone(),
            conditions: cfg.conditions.clone(),
            augmentation_mode: cfg.augmentation_mode,
            ci_level: cfg.eval.level,
            groups,
            sign_tests: sign_tests(&cells, &cfg.conditions),
            cells,
            summaries,
            checks: Vec::new(),
        };
        report.checks = checks(&report);
        report
    }
}

fn ok_evals(cells: &[Cell], condition: Condition) -> Vec<&EvalOutput> {
    cells
        .iter()
        .filter(|c| c.condition == condition)
        .filter_map(|c| c.eval.as_ref())
        .collect()
}

fn summarize(condition: Condition, cells: &[Cell], groups: &[Attribute]) -> ConditionSummary {
    let evals = ok_evals(cells, condition);
    let overall: Vec<f64> = evals.iter().map(|e| e.metrics.overall.accuracy()).collect();
    let gaps: Vec<f64> = evals.iter().filter_map(|e| e.metrics.bias_gap).collect();
    let groups = groups
        .iter()
        .map(|g| {
            let accs: Vec<f64> = evals.iter().filter_map(|e| e.metrics.accuracy(g.as_str())).collect();
            (g.clone(), mean_sd(&accs))
        })
        .collect();
    let mean_synthetic = if evals.is_empty() {
        0.0
    } else {
        evals.iter().map(|e| e.n_synthetic as f64).sum::<f64>() / evals.len() as f64
    };
    ConditionSummary {
        condition,
        n_cells: evals.len(),
        overall: mean_sd(&overall),
        groups,
        bias_gap: mean_sd(&gaps),
        mean_synthetic,
    }
}

fn sign_tests(cells: &[Cell], conditions: &[Condition]) -> Vec<SignTest> {
    if !conditions.contains(&Condition::Baseline) {
        return Vec::new();
    }
    let by_seed = |c: Condition| -> BTreeMap<u64, &EvalOutput> {
        cells
            .iter()
            .filter(|x| x.condition == c)
            .filter_map(|x| x.eval.as_ref().map(|e| (x.seed, e)))
            .collect()
    };
    let base = by_seed(Condition::Baseline);
    let mut out = Vec::new();
    for &other in conditions.iter().filter(|c| **c != Condition::Baseline) {
        let oth = by_seed(other);
        for metric in ["bias_gap", "overall"] {
            let value = |e: &EvalOutput| match metric {
                "bias_gap" => e.metrics.bias_gap,
                _ => Some(e.metrics.overall.accuracy()),
            };
            let pairs: Vec<(f64, f64)> = base
                .iter()
                .filter_map(|(s, b)| Some((value(b)?, value(oth.get(s)?)?)))
                .collect();
            let (p_value, note) = match paired_sign_test(&pairs) {
                Ok(p) => (Some(p), None),
                Err(EvalError::TooFewPairs(n)) => (None, Some(format!("{n} paired seeds; at least 5 needed"))),
                Err(EvalError::AllTies) => (None, Some("every paired seed is tied".to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(SignTest {
                reference: Condition::Baseline,
                other,
                metric: metric.to_string(),
                n_pairs: pairs.len(),
                p_value,
                note,
            });
        }
    }
    out
}

fn checks(report: &ExperimentReport) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("seed {} {}: {e}", c.seed, c.condition)))
        .collect();
    out.push(CheckResult {
        name: "all_cells_completed".into(),
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} cells", report.cells.len())
        } else {
            failed.join("; ")
        },
    });

    let gap = |c: Condition| report.summary(c).and_then(|s| s.bias_gap).map(|m| m.mean);
    let acc = |c: Condition| report.summary(c).and_then(|s| s.overall).map(|m| m.mean);
    let missing = |name: &str| CheckResult {
        name: name.into(),
        pass: false,
        detail: "a required condition produced no results".into(),
    };

    out.push(match gap(Condition::Baseline) {
        Some(g) => CheckResult {
            name: "baseline_gap_at_least_0.02".into(),
            pass: g >= MIN_BASELINE_GAP,
            detail: format!("mean baseline gap {g:.4}"),
        },
        None => missing("baseline_gap_at_least_0.02"),
    });
    for (c, name) in [(Condition::Swap, "swap_reduces_gap"), (Condition::Lgsa, "lgsa_reduces_gap")] {
        out.push(match (gap(Condition::Baseline), gap(c)) {
            (Some(b), Some(g)) => CheckResult {
                name: name.into(),
                pass: g < b,
                detail: format!("mean gap {g:.4} vs baseline {b:.4}"),
            },
            _ => missing(name),
        });
    }
    out.push(match (acc(Condition::Baseline), acc(Condition::Lgsa)) {
        (Some(b), Some(a)) => CheckResult {
            name: "lgsa_accuracy_within_0.01".into(),
            pass: a >= b - MAX_ACCURACY_DROP,
            detail: format!("mean overall {a:.4} vs baseline {b:.4}"),
        },
        _ => missing("lgsa_accuracy_within_0.01"),
    });

    if report.augmentation_mode == AugmentationMode::TrainOnly {
        let mut hashes: BTreeMap<u64, BTreeSet<&str>> = BTreeMap::new();
        for c in &report.cells {
            if let Some(e) = &c.eval {
                hashes.entry(c.seed).or_default().insert(&e.test_hash);
            }
        }
        let differing: Vec<String> = hashes
            .iter()
            .filter(|(_, h)| h.len() > 1)
            .map(|(s, _)| s.to_string())
            .collect();
        out.push(CheckResult {
            name: "test_sets_identical".into(),
            pass: differing.is_empty() && !hashes.is_empty(),
            detail: if differing.is_empty() {
                format!("{} seeds share one test set across conditions", hashes.len())
            } else {
                format!("seeds with differing test sets: {}", differing.join(", "))
            },
        });
    }
    out
}

fn run_condition(run: &RunDir, cfg: &PipelineConfig, condition: Condition, seed: u64) -> Cell {
    let mut cell = Cell {
        seed,
        condition,
        n_candidates: 0,
        n_retained: 0,
        eval: None,
        error: None,
    };
    let result = (|| -> Result<EvalOutput, PipelineError> {
        if condition != Condition::Baseline {
            cell.n_candidates = stage_generate(run, cfg, condition, None, None)?.len();
            cell.n_retained = stage_qc(run, cfg, condition)?.retained.len();
        }
        stage_assemble(run, cfg, condition)?;
        stage_train(run, cfg, condition)?;
        stage_eval(run, cfg, condition, seed)
    })();
    match result {
        Ok(e) => cell.eval = Some(e),
        Err(e) => {
            log::error!("seed {seed} {condition}: {e}");
            cell.error = Some(e.to_string());
        }
    }
    cell
}

fn run_seed(root: &Path, corpus: &[Example], cfg: &PipelineConfig, seed: u64) -> Vec<Cell> {
    let run = RunDir::new(root.join(format!("seed-{seed}")));
    if let Err(e) = stage_prepare(&run, corpus, &cfg.split, seed) {
        return cfg
            .conditions
            .iter()
            .map(|&condition| Cell {
                seed,
                condition,
                n_candidates: 0,
                n_retained: 0,
                eval: None,
                error: Some(format!("split: {e}")),
            })
            .collect();
    }
    cfg.conditions
        .iter()
        .map(|&c| run_condition(&run, cfg, c, seed))
        .collect()
}

/// Synthesize the configured corpus into `root/corpus/` and run the
/// experiment on it.
pub fn run_experiment(root: &Path, cfg: &PipelineConfig) -> Result<ExperimentReport, PipelineError> {
    cfg.validate()?;
    let corpus = synthesize(cfg)?;
    let path = RunDir::new(root).corpus_file();
    ensure_parent(&path)?;
    write_examples(&path, &corpus)?;
    run_experiment_on(root, &corpus, cfg)
}

/// Run every (condition, seed) cell on `corpus` under `root/seed-<n>/`, where
/// the seed fixes the split, and write the aggregate report to
/// `root/reports/`. Seeds run in parallel; cells are ordered by condition,
/// then seed, so reruns produce identical reports.
pub fn run_experiment_on(root: &Path, corpus: &[Example], cfg: &PipelineConfig) -> Result<ExperimentReport, PipelineError> {
    cfg.validate()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.len() != cfg.seeds.len() {
        return Err(PipelineError::Config("seeds must be distinct".into()));
    }
    let mut cells: Vec<Cell> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(root, corpus, cfg, s))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let order = |c: &Cell| {
        (
            cfg.conditions.iter().position(|x| *x == c.condition),
            cfg.seeds.iter().position(|x| *x == c.seed),
        )
    };
    cells.sort_by_key(order);
    let report = ExperimentReport::from_cells(cells, cfg);
    write_report_files(&RunDir::new(root).reports_dir(), &report)?;
    Ok(report)
}
