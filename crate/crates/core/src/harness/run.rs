//! Experiment execution: split preparation, the detector × split × seed
//! sweep, and report assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, OsrSplit};
use super::report::{CellReport, EvalReport, NamedOutcome, Outcome, RunReport, SampleCounts};
use super::HarnessError;
use crate::detectors::{fit, DetectorKind, DetectorSpec};
use crate::eds::{DatasetManifest, EmbeddingSet, LoadedDataset, ModelHead};
use crate::ensemble::{de_average, epistemic_uncertainty, total_uncertainty, EnsembleBatch};
use crate::metrics::{auroc_from_scores, balanced_accuracy, prr};

pub const TOTAL_UNCERTAINTY: &str = "de_tu";
pub const EPISTEMIC_UNCERTAINTY: &str = "de_eu";

/// Member dumps restricted to the rows of their split.
#[derive(Debug, Clone)]
struct SplitMembers {
    id_test: Vec<EmbeddingSet>,
    semantic: Vec<EmbeddingSet>,
    covariate: Vec<Vec<EmbeddingSet>>,
}

/// One split's sets, with labels mapped onto logit indices.
#[derive(Debug, Clone)]
struct PreparedSplit {
    train: EmbeddingSet,
    id_test: EmbeddingSet,
    /// `None` when the split has no source of semantic OOD at all.
    semantic: Option<EmbeddingSet>,
    covariate: Vec<(String, EmbeddingSet)>,
    head: Option<ModelHead>,
    members: Option<SplitMembers>,
}

fn rows_where(set: &EmbeddingSet, keep: impl Fn(u32) -> bool) -> Vec<usize> {
    match set.labels() {
        Some(labels) => (0..set.n()).filter(|&i| keep(labels[i])).collect(),
        None => (0..set.n()).collect(),
    }
}

/// Maps raw class ids onto logit indices.
///
/// When the classifier has exactly one logit per ID class, the sorted ID
/// classes map to `0..c`; otherwise labels already index the logits.
fn label_map(id_classes: &BTreeSet<u32>, c: usize) -> Result<BTreeMap<u32, u32>, HarnessError> {
    if id_classes.len() == c {
        return Ok(id_classes.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect());
    }
    if let Some(&bad) = id_classes.iter().find(|&&k| k as usize >= c) {
        return Err(HarnessError::Config(format!(
            "class {bad} cannot index a classifier with {c} logits"
        )));
    }
    Ok(id_classes.iter().map(|&k| (k, k)).collect())
}

fn remap(set: &EmbeddingSet, map: &BTreeMap<u32, u32>) -> Result<EmbeddingSet, HarnessError> {
    match set.labels() {
        None => Ok(set.clone()),
        Some(labels) => {
            let mapped = labels
                .iter()
                .map(|l| {
                    map.get(l).copied().ok_or_else(|| {
                        HarnessError::Config(format!("class {l} never appears in id_train"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(set.with_labels(Some(mapped))?)
        }
    }
}

fn prepare_split(split: &OsrSplit, data: &LoadedDataset) -> Result<PreparedSplit, HarnessError> {
    let held: BTreeSet<u32> = split.held_out.iter().copied().collect();
    let is_id = |l: u32| !held.contains(&l);
    let is_ood = |l: u32| held.contains(&l);

    if !held.is_empty() && (data.id_train.labels().is_none() || data.id_test.labels().is_none()) {
        return Err(HarnessError::Config(
            "held-out classes need labeled id_train and id_test dumps".into(),
        ));
    }

    let train_rows = rows_where(&data.id_train, is_id);
    let train_raw = data.id_train.select(&train_rows);
    if train_raw.n() == 0 {
        return Err(HarnessError::Config("no id_train rows left after holding out classes".into()));
    }
    let id_classes: BTreeSet<u32> = train_raw.labels().unwrap_or(&[]).iter().copied().collect();
    let map = label_map(&id_classes, train_raw.c())?;

    let test_rows = rows_where(&data.id_test, is_id);
    let id_test = remap(&data.id_test.select(&test_rows), &map)?;
    let train = remap(&train_raw, &map)?;

    let held_rows: Vec<usize> = match data.id_test.labels() {
        Some(_) if !held.is_empty() => rows_where(&data.id_test, is_ood),
        _ => Vec::new(),
    };
    let mut semantic_parts = Vec::new();
    if !held.is_empty() {
        semantic_parts.push(data.id_test.select(&held_rows));
    }
    if let Some(s) = &data.semantic_ood {
        semantic_parts.push(s.clone());
    }
    let semantic = if semantic_parts.is_empty() {
        None
    } else {
        let refs: Vec<&EmbeddingSet> = semantic_parts.iter().collect();
        Some(EmbeddingSet::concat(&refs)?)
    };

    let mut covariate = Vec::new();
    let mut covariate_rows = Vec::new();
    for (name, set) in &data.covariate_ood {
        let rows = rows_where(set, is_id);
        covariate.push((name.clone(), remap(&set.select(&rows), &map)?));
        covariate_rows.push(rows);
    }

    let members = data.members.as_ref().map(|m| {
        let sem_members: Vec<EmbeddingSet> = (0..m.id_test.len())
            .map(|k| {
                let mut parts = Vec::new();
                if !held.is_empty() {
                    parts.push(m.id_test[k].select(&held_rows));
                }
                if let Some(s) = m.semantic_ood.get(k) {
                    parts.push(s.clone());
                }
                let refs: Vec<&EmbeddingSet> = parts.iter().collect();
                EmbeddingSet::concat(&refs)
            })
            .collect::<Result<_, _>>()?;
        Ok::<_, HarnessError>(SplitMembers {
            id_test: m.id_test.iter().map(|s| s.select(&test_rows)).collect(),
            semantic: if semantic.is_some() { sem_members } else { Vec::new() },
            covariate: m
                .covariate_ood
                .iter()
                .zip(&covariate_rows)
                .map(|(sets, rows)| sets.iter().map(|s| s.select(rows)).collect())
                .collect(),
        })
    });
    let members = members.transpose()?;

    Ok(PreparedSplit {
        train,
        id_test,
        semantic,
        covariate,
        head: data.head.clone(),
        members,
    })
}

fn subsample(train: &EmbeddingSet, limit: Option<usize>, seed: u64) -> EmbeddingSet {
    match limit {
        Some(m) if m < train.n() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..train.n()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(m);
            idx.sort_unstable();
            train.select(&idx)
        }
        _ => train.clone(),
    }
}

fn labels_usize(set: &EmbeddingSet) -> Option<Vec<usize>> {
    set.labels().map(|l| l.iter().map(|&v| v as usize).collect())
}

fn accuracy(preds: &[usize], set: &EmbeddingSet) -> Outcome {
    match labels_usize(set) {
        None => Outcome::Failed("set has no labels".into()),
        Some(labels) => balanced_accuracy(preds, &labels, None).into(),
    }
}

/// Everything shared by the cells of one split × seed.
struct RunContext<'a> {
    split: &'a PreparedSplit,
    train: EmbeddingSet,
    id_accuracy: Outcome,
    covariate_accuracy: Option<Outcome>,
    covariate_accuracy_per_dump: Vec<NamedOutcome>,
    /// Per covariate dump, `Some(correct)` when it carries labels.
    correctness: Vec<Option<Vec<bool>>>,
}

fn correctness(preds: &[usize], set: &EmbeddingSet) -> Option<Vec<bool>> {
    labels_usize(set).map(|l| preds.iter().zip(&l).map(|(p, y)| p == y).collect())
}

fn pooled_accuracy(preds: &[Vec<usize>], sets: &[&EmbeddingSet]) -> Option<Outcome> {
    if sets.is_empty() {
        return None;
    }
    let mut all_preds = Vec::new();
    let mut all_labels = Vec::new();
    for (p, s) in preds.iter().zip(sets) {
        match labels_usize(s) {
            Some(l) => {
                all_preds.extend_from_slice(p);
                all_labels.extend(l);
            }
            None => return Some(Outcome::Failed("covariate dump has no labels".into())),
        }
    }
    Some(balanced_accuracy(&all_preds, &all_labels, None).into())
}

impl<'a> RunContext<'a> {
    fn new(split: &'a PreparedSplit, limit: Option<usize>, seed: u64) -> Self {
        let train = subsample(&split.train, limit, seed);
        let id_accuracy = accuracy(&split.id_test.predictions(), &split.id_test);
        let preds: Vec<Vec<usize>> = split.covariate.iter().map(|(_, s)| s.predictions()).collect();
        let sets: Vec<&EmbeddingSet> = split.covariate.iter().map(|(_, s)| s).collect();
        let covariate_accuracy = pooled_accuracy(&preds, &sets);
        let covariate_accuracy_per_dump = split
            .covariate
            .iter()
            .zip(&preds)
            .map(|((name, s), p)| NamedOutcome {
                name: name.clone(),
                outcome: accuracy(p, s),
            })
            .collect();
        let correctness = split
            .covariate
            .iter()
            .zip(&preds)
            .map(|((_, s), p)| correctness(p, s))
            .collect();
        Self {
            split,
            train,
            id_accuracy,
            covariate_accuracy,
            covariate_accuracy_per_dump,
            correctness,
        }
    }

    fn counts(&self) -> SampleCounts {
        SampleCounts {
            id_train: self.train.n(),
            id_test: self.split.id_test.n(),
            semantic_ood: self.split.semantic.as_ref().map_or(0, EmbeddingSet::n),
            covariate_ood: self.split.covariate.iter().map(|(_, s)| s.n()).sum(),
            covariate_per_dump: self.split.covariate.iter().map(|(_, s)| s.n()).collect(),
        }
    }
}

/// S-OODD AUROC with semantic OOD as positives and the ID test set as negatives.
fn semantic_auroc(semantic: Option<&[f64]>, id_test: &[f64]) -> Option<Outcome> {
    semantic.map(|ood| auroc_from_scores(ood, id_test).into())
}

/// Pooled and per-dump PRR over covariate dumps.
fn covariate_prr(
    names: &[&str],
    scores: &[Vec<f64>],
    correct: &[Option<Vec<bool>>],
) -> (Option<Outcome>, Option<f64>, Vec<NamedOutcome>) {
    if names.is_empty() {
        return (None, None, Vec::new());
    }
    let per_dump = names
        .iter()
        .zip(scores)
        .zip(correct)
        .map(|((name, s), c)| NamedOutcome {
            name: name.to_string(),
            outcome: match c {
                Some(c) => prr(s, c).map(|r| r.prr).into(),
                None => Outcome::Failed("covariate dump has no labels".into()),
            },
        })
        .collect();
    if correct.iter().any(Option::is_none) {
        return (Some(Outcome::Failed("covariate dump has no labels".into())), None, per_dump);
    }
    let pooled_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let pooled_correct: Vec<bool> = correct.iter().flatten().flatten().copied().collect();
    match prr(&pooled_scores, &pooled_correct) {
        Ok(r) => (Some(Outcome::Value(r.prr)), r.tie_randomized, per_dump),
        Err(e) => (Some(Outcome::Failed(e.to_string())), None, per_dump),
    }
}

fn detector_cell(ctx: &RunContext<'_>, spec: &DetectorSpec) -> CellReport {
    let name = spec.kind.name();
    let split = ctx.split;
    let state = match fit(spec, &ctx.train, split.head.as_ref()) {
        Ok(s) => s,
        Err(e) => return CellReport::failed(name, &format!("fit failed: {e}")),
    };
    let id_scores = state.score(&split.id_test);
    let auroc = match (&id_scores, &split.semantic) {
        (_, None) => None,
        (Err(e), Some(_)) => Some(Outcome::Failed(format!("scoring id_test failed: {e}"))),
        (Ok(id), Some(sem)) => match state.score(sem) {
            Ok(s) => semantic_auroc(Some(&s), id),
            Err(e) => Some(Outcome::Failed(format!("scoring semantic_ood failed: {e}"))),
        },
    };
    let names: Vec<&str> = split.covariate.iter().map(|(n, _)| n.as_str()).collect();
    let cov_scores: Result<Vec<Vec<f64>>, _> = split.covariate.iter().map(|(_, s)| state.score(s)).collect();
    let (prr_value, tie, per_dump) = match cov_scores {
        Ok(scores) => covariate_prr(&names, &scores, &ctx.correctness),
        Err(e) => (
            Some(Outcome::Failed(format!("scoring covariate_ood failed: {e}"))),
            None,
            Vec::new(),
        ),
    };
    CellReport {
        detector: name.to_string(),
        id_accuracy: Some(ctx.id_accuracy.clone()),
        covariate_accuracy: ctx.covariate_accuracy.clone(),
        auroc,
        prr: prr_value,
        prr_tie_randomized: tie,
        prr_per_dump: per_dump,
    }
}

fn ensemble_cell(ctx: &RunContext<'_>, which: &str) -> CellReport {
    let split = ctx.split;
    let Some(members) = &split.members else {
        return CellReport::failed(which, "ensemble requested but the manifest lists no member dumps");
    };
    let uncertainty = |batch: &EnsembleBatch| {
        if which == TOTAL_UNCERTAINTY {
            total_uncertainty(batch)
        } else {
            epistemic_uncertainty(batch)
        }
    };
    let batch_of = |sets: &[EmbeddingSet]| {
        let refs: Vec<&EmbeddingSet> = sets.iter().collect();
        EnsembleBatch::from_member_logits(&refs)
    };
    let id_batch = match batch_of(&members.id_test) {
        Ok(b) => b,
        Err(e) => return CellReport::failed(which, &e.to_string()),
    };
    let (_, id_preds) = de_average(&id_batch);
    let id_accuracy = accuracy(&id_preds, &split.id_test);
    let id_scores = uncertainty(&id_batch);

    let auroc = split.semantic.as_ref().map(|_| {
        if members.semantic.is_empty() {
            return Outcome::Failed("no semantic_ood member dumps".into());
        }
        match batch_of(&members.semantic) {
            Ok(b) => auroc_from_scores(&uncertainty(&b), &id_scores).into(),
            Err(e) => Outcome::Failed(e.to_string()),
        }
    });

    let (covariate_accuracy, prr_value, tie, per_dump) = if split.covariate.is_empty() {
        (None, None, None, Vec::new())
    } else if members.covariate.len() != split.covariate.len() {
        let f = Some(Outcome::Failed("no covariate_ood member dumps".into()));
        (f.clone(), f, None, Vec::new())
    } else {
        let mut preds = Vec::new();
        let mut scores = Vec::new();
        for sets in &members.covariate {
            match batch_of(sets) {
                Ok(b) => {
                    preds.push(de_average(&b).1);
                    scores.push(uncertainty(&b));
                }
                Err(e) => {
                    let f = Some(Outcome::Failed(e.to_string()));
                    return CellReport {
                        covariate_accuracy: f.clone(),
                        prr: f,
                        ..CellReport::failed(which, &e.to_string())
                    };
                }
            }
        }
        let sets: Vec<&EmbeddingSet> = split.covariate.iter().map(|(_, s)| s).collect();
        let cov_acc = pooled_accuracy(&preds, &sets);
        let correct: Vec<Option<Vec<bool>>> =
            preds.iter().zip(&sets).map(|(p, s)| correctness(p, s)).collect();
        let names: Vec<&str> = split.covariate.iter().map(|(n, _)| n.as_str()).collect();
        let (p, t, d) = covariate_prr(&names, &scores, &correct);
        (cov_acc, p, t, d)
    };
    CellReport {
        detector: which.to_string(),
        id_accuracy: Some(id_accuracy),
        covariate_accuracy,
        auroc,
        prr: prr_value,
        prr_tie_randomized: tie,
        prr_per_dump: per_dump,
    }
}

#[derive(Clone, Copy)]
enum CellJob {
    Detector(DetectorKind),
    Ensemble(&'static str),
}

impl CellJob {
    fn name(&self) -> &'static str {
        match self {
            CellJob::Detector(k) => k.name(),
            CellJob::Ensemble(n) => n,
        }
    }
}

/// Runs every split × seed × detector cell. Per-cell failures are recorded
/// in the report; only config-level problems (unreadable config, invalid
/// worker count) return an error.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;

    let mut jobs: Vec<CellJob> = config.detectors.iter().map(|&k| CellJob::Detector(k)).collect();
    if config.ensemble {
        jobs.push(CellJob::Ensemble(TOTAL_UNCERTAINTY));
        jobs.push(CellJob::Ensemble(EPISTEMIC_UNCERTAINTY));
    }
    let detector_names: Vec<String> = jobs.iter().map(|j| j.name().to_string()).collect();

    let mut loaded: BTreeMap<PathBuf, Result<LoadedDataset, String>> = BTreeMap::new();
    let splits = config.effective_splits();
    let mut prepared: Vec<Result<PreparedSplit, String>> = Vec::with_capacity(splits.len());
    for split in &splits {
        let manifest_path = config.resolve(
            split
                .manifest
                .as_ref()
                .or(config.manifest.as_ref())
                .expect("validated: every split has a manifest"),
        );
        let data = loaded.entry(manifest_path.clone()).or_insert_with(|| {
            DatasetManifest::load(&manifest_path)
                .and_then(|m| m.load_all())
                .map_err(|e| e.to_string())
        });
        prepared.push(match data {
            Ok(d) => prepare_split(split, d).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        });
    }

    let specs: Vec<DetectorSpec> = config
        .detectors
        .iter()
        .map(|&k| DetectorSpec::with_params(k, config.hyperparams))
        .collect();

    let runs = pool.install(|| {
        let mut runs = Vec::new();
        for (split, prep) in splits.iter().zip(&prepared) {
            for &seed in &config.seeds {
                let run = match prep {
                    Err(e) => RunReport {
                        split: split.id.clone(),
                        seed,
                        error: Some(e.clone()),
                        counts: SampleCounts::default(),
                        id_accuracy: None,
                        covariate_accuracy: None,
                        covariate_accuracy_per_dump: Vec::new(),
                        cells: detector_names
                            .iter()
                            .map(|d| CellReport::failed(d, e))
                            .collect(),
                    },
                    Ok(prep) => {
                        let ctx = RunContext::new(prep, config.train_subsample, seed);
                        let cells: Vec<CellReport> = jobs
                            .par_iter()
                            .enumerate()
                            .map(|(i, job)| match job {
                                CellJob::Detector(_) => detector_cell(&ctx, &specs[i]),
                                CellJob::Ensemble(which) => ensemble_cell(&ctx, which),
                            })
                            .collect();
                        RunReport {
                            split: split.id.clone(),
                            seed,
                            error: None,
                            counts: ctx.counts(),
                            id_accuracy: Some(ctx.id_accuracy.clone()),
                            covariate_accuracy: ctx.covariate_accuracy.clone(),
                            covariate_accuracy_per_dump: ctx.covariate_accuracy_per_dump.clone(),
                            cells,
                        }
                    }
                };
                runs.push(run);
            }
        }
        runs
    });

    Ok(EvalReport::assemble(detector_names, runs))
}
