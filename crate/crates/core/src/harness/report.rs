//! Evaluation report model and its JSON / Markdown / CSV renderings.
//!
//! Units: accuracies and PRR in percent, AUROC as a fraction in `[0, 1]`
//! (rendered ×100 in tables).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// A metric value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Value(f64),
    Failed(String),
}

impl Outcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            Outcome::Value(v) => Some(*v),
            Outcome::Failed(_) => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Outcome::Failed(_))
    }
}

impl<E: std::fmt::Display> From<Result<f64, E>> for Outcome {
    fn from(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => Outcome::Value(v),
            Err(e) => Outcome::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub id_train: usize,
    pub id_test: usize,
    pub semantic_ood: usize,
    pub covariate_ood: usize,
    pub covariate_per_dump: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedOutcome {
    pub name: String,
    pub outcome: Outcome,
}

/// Results of one detector on one split × seed. `None` marks a metric whose
/// inputs were not configured (e.g. no covariate dumps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub detector: String,
    pub id_accuracy: Option<Outcome>,
    pub covariate_accuracy: Option<Outcome>,
    pub auroc: Option<Outcome>,
    pub prr: Option<Outcome>,
    pub prr_tie_randomized: Option<f64>,
    pub prr_per_dump: Vec<NamedOutcome>,
}

impl CellReport {
    pub fn failed(detector: &str, reason: &str) -> Self {
        let f = || Some(Outcome::Failed(reason.to_string()));
        Self {
            detector: detector.to_string(),
            id_accuracy: f(),
            covariate_accuracy: f(),
            auroc: f(),
            prr: f(),
            prr_tie_randomized: None,
            prr_per_dump: Vec::new(),
        }
    }

    fn outcomes(&self) -> impl Iterator<Item = &Outcome> {
        [&self.id_accuracy, &self.covariate_accuracy, &self.auroc, &self.prr]
            .into_iter()
            .flatten()
            .chain(self.prr_per_dump.iter().map(|n| &n.outcome))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub split: String,
    pub seed: u64,
    /// Set when the split could not be prepared at all.
    pub error: Option<String>,
    pub counts: SampleCounts,
    pub id_accuracy: Option<Outcome>,
    pub covariate_accuracy: Option<Outcome>,
    pub covariate_accuracy_per_dump: Vec<NamedOutcome>,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `None` for the single-model accuracy columns.
    pub detector: Option<String>,
    pub metric: String,
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: Option<f64>,
    pub count: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detectors: Vec<String>,
    pub runs: Vec<RunReport>,
    pub aggregates: Vec<Aggregate>,
}

pub(crate) fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

fn aggregate(detector: Option<&str>, metric: &str, outcomes: &[Option<&Outcome>]) -> Aggregate {
    let present: Vec<&Outcome> = outcomes.iter().flatten().copied().collect();
    let values: Vec<f64> = present.iter().filter_map(|o| o.value()).collect();
    let (mean, std) = mean_std(&values);
    Aggregate {
        detector: detector.map(str::to_string),
        metric: metric.to_string(),
        mean,
        std,
        count: values.len(),
        failed: present.len() - values.len(),
    }
}

impl EvalReport {
    /// Builds the report and its mean/std aggregates over every split × seed.
    pub fn assemble(detectors: Vec<String>, runs: Vec<RunReport>) -> Self {
        let mut aggregates = vec![
            aggregate(
                None,
                "id_accuracy",
                &runs.iter().map(|r| r.id_accuracy.as_ref()).collect::<Vec<_>>(),
            ),
            aggregate(
                None,
                "covariate_accuracy",
                &runs.iter().map(|r| r.covariate_accuracy.as_ref()).collect::<Vec<_>>(),
            ),
        ];
        for det in &detectors {
            let cells: Vec<&CellReport> = runs
                .iter()
                .flat_map(|r| r.cells.iter().filter(|c| &c.detector == det))
                .collect();
            type Pick = fn(&CellReport) -> Option<&Outcome>;
            let metrics: [(&str, Pick); 4] = [
                ("id_accuracy", |c| c.id_accuracy.as_ref()),
                ("covariate_accuracy", |c| c.covariate_accuracy.as_ref()),
                ("auroc", |c| c.auroc.as_ref()),
                ("prr", |c| c.prr.as_ref()),
            ];
            for (name, pick) in metrics {
                aggregates.push(aggregate(
                    Some(det),
                    name,
                    &cells.iter().map(|c| pick(c)).collect::<Vec<_>>(),
                ));
            }
        }
        Self {
            detectors,
            runs,
            aggregates,
        }
    }

    /// True iff no run and no configured metric failed.
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| {
            r.error.is_none()
                && ![&r.id_accuracy, &r.covariate_accuracy]
                    .into_iter()
                    .flatten()
                    .chain(r.covariate_accuracy_per_dump.iter().map(|n| &n.outcome))
                    .any(Outcome::is_failed)
                && r.cells.iter().all(|c| !c.outcomes().any(Outcome::is_failed))
        })
    }

    pub fn aggregate(&self, detector: Option<&str>, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.detector.as_deref() == detector && a.metric == metric)
    }

    pub fn cell(&self, split: &str, seed: u64, detector: &str) -> Option<&CellReport> {
        self.runs
            .iter()
            .find(|r| r.split == split && r.seed == seed)?
            .cells
            .iter()
            .find(|c| c.detector == detector)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Report(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(HarnessError::Report(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Markdown => markdown(report),
        ReportFormat::Csv => csv_long(report),
    }
}

struct Footnotes(Vec<String>);

impl Footnotes {
    fn cell(&mut self, outcome: Option<&Outcome>, scale: f64, context: &str) -> String {
        match outcome {
            None => "n/a".into(),
            Some(Outcome::Value(v)) => format!("{:.2}", v * scale),
            Some(Outcome::Failed(reason)) => {
                self.0.push(format!("{context}: {reason}"));
                format!("—[^{}]", self.0.len())
            }
        }
    }
}

fn mean_cell(agg: Option<&Aggregate>, scale: f64) -> String {
    match agg.and_then(|a| a.mean.zip(a.std)) {
        Some((m, s)) => format!("{:.2} ± {:.2}", m * scale, s * scale),
        None => "—".into(),
    }
}

fn table(
    out: &mut String,
    notes: &mut Footnotes,
    report: &EvalReport,
    title: &str,
    acc_metric: &str,
    det_metric: &str,
    scale: f64,
) {
    let pick_acc = |r: &RunReport| -> Option<Outcome> {
        if acc_metric == "id_accuracy" {
            r.id_accuracy.clone()
        } else {
            r.covariate_accuracy.clone()
        }
    };
    let pick_det = |c: &CellReport| -> Option<Outcome> {
        if det_metric == "auroc" {
            c.auroc.clone()
        } else {
            c.prr.clone()
        }
    };
    let ensemble: Vec<&String> = report.detectors.iter().filter(|d| d.starts_with("de_")).collect();
    let show_de_acc = !ensemble.is_empty();

    let _ = writeln!(out, "### {title}\n");
    let mut header = vec!["Run".to_string(), "Acc%".to_string()];
    if show_de_acc {
        header.push("DE Acc%".into());
    }
    header.extend(report.detectors.iter().cloned());
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; header.len()].join("|"));

    for run in &report.runs {
        let label = format!("{}/seed{}", run.split, run.seed);
        let mut row = vec![label.clone()];
        if let Some(err) = &run.error {
            notes.0.push(format!("{label}: {err}"));
            let mark = format!("—[^{}]", notes.0.len());
            row.extend(std::iter::repeat_n(mark, header.len() - 1));
        } else {
            row.push(notes.cell(pick_acc(run).as_ref(), 1.0, &format!("{label}/{acc_metric}")));
            if show_de_acc {
                let de_cell = run.cells.iter().find(|c| c.detector.starts_with("de_"));
                let de_acc = de_cell.and_then(|c| {
                    if acc_metric == "id_accuracy" {
                        c.id_accuracy.clone()
                    } else {
                        c.covariate_accuracy.clone()
                    }
                });
                row.push(notes.cell(de_acc.as_ref(), 1.0, &format!("{label}/de/{acc_metric}")));
            }
            for det in &report.detectors {
                let value = run.cells.iter().find(|c| &c.detector == det).and_then(pick_det);
                row.push(notes.cell(value.as_ref(), scale, &format!("{label}/{det}")));
            }
        }
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }

    let mut mean_row = vec!["mean ± std".to_string(), mean_cell(report.aggregate(None, acc_metric), 1.0)];
    if show_de_acc {
        mean_row.push(mean_cell(report.aggregate(Some(ensemble[0]), acc_metric), 1.0));
    }
    for det in &report.detectors {
        mean_row.push(mean_cell(report.aggregate(Some(det), det_metric), scale));
    }
    let _ = writeln!(out, "| {} |", mean_row.join(" | "));
    out.push('\n');
}

fn markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let mut notes = Footnotes(Vec::new());
    table(
        &mut out,
        &mut notes,
        report,
        "ID Acc% & S-OODD AUROC%",
        "id_accuracy",
        "auroc",
        100.0,
    );
    table(
        &mut out,
        &mut notes,
        report,
        "Covariate OOD Acc% & MC-OODD PRR%",
        "covariate_accuracy",
        "prr",
        1.0,
    );
    for (i, note) in notes.0.iter().enumerate() {
        let _ = writeln!(out, "[^{}]: {}", i + 1, note.replace('\n', " "));
    }
    out
}

fn csv_long(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "seed", "detector", "metric", "status", "value", "reason"])
        .expect("in-memory write");
    let mut emit = |split: &str, seed: u64, det: &str, metric: &str, o: &Outcome| {
        let seed = seed.to_string();
        let record = match o {
            Outcome::Value(v) => [split, seed.as_str(), det, metric, "ok", &v.to_string(), ""].map(String::from),
            Outcome::Failed(r) => [split, seed.as_str(), det, metric, "failed", "", r.as_str()].map(String::from),
        };
        w.write_record(&record).expect("in-memory write");
    };
    for run in &report.runs {
        if let Some(err) = &run.error {
            emit(&run.split, run.seed, "", "run", &Outcome::Failed(err.clone()));
            continue;
        }
        if let Some(o) = &run.id_accuracy {
            emit(&run.split, run.seed, "", "id_accuracy", o);
        }
        if let Some(o) = &run.covariate_accuracy {
            emit(&run.split, run.seed, "", "covariate_accuracy", o);
        }
        for n in &run.covariate_accuracy_per_dump {
            emit(&run.split, run.seed, "", &format!("covariate_accuracy:{}", n.name), &n.outcome);
        }
        for cell in &run.cells {
            let fields = [
                ("id_accuracy", &cell.id_accuracy),
                ("covariate_accuracy", &cell.covariate_accuracy),
                ("auroc", &cell.auroc),
                ("prr", &cell.prr),
            ];
            for (metric, o) in fields {
                if let Some(o) = o {
                    emit(&run.split, run.seed, &cell.detector, metric, o);
                }
            }
            if let Some(v) = cell.prr_tie_randomized {
                emit(&run.split, run.seed, &cell.detector, "prr_tie_randomized", &Outcome::Value(v));
            }
            for n in &cell.prr_per_dump {
                emit(&run.split, run.seed, &cell.detector, &format!("prr:{}", n.name), &n.outcome);
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(auroc: Outcome) -> EvalReport {
        let run = RunReport {
            split: "osr1".into(),
            seed: 0,
            error: None,
            counts: SampleCounts::default(),
            id_accuracy: Some(Outcome::Value(97.5)),
            covariate_accuracy: None,
            covariate_accuracy_per_dump: Vec::new(),
            cells: vec![CellReport {
                detector: "maha".into(),
                id_accuracy: Some(Outcome::Value(97.5)),
                covariate_accuracy: None,
                auroc: Some(auroc),
                prr: None,
                prr_tie_randomized: None,
                prr_per_dump: Vec::new(),
            }],
        };
        EvalReport::assemble(vec!["maha".into()], vec![run])
    }

    #[test]
    fn one_cell_markdown_has_header_and_one_data_row() {
        let md = emit_report(&one_cell(Outcome::Value(0.9731)), ReportFormat::Markdown);
        let first_table: Vec<&str> = md.split("\n\n").nth(1).unwrap().lines().collect();
        assert_eq!(first_table[0], "| Run | Acc% | maha |");
        assert_eq!(first_table[2], "| osr1/seed0 | 97.50 | 97.31 |");
        assert!(md.contains("| mean ± std | 97.50 ± 0.00 | 97.31 ± 0.00 |"));
    }

    #[test]
    fn failed_cell_renders_dash_with_footnote() {
        let md = emit_report(&one_cell(Outcome::Failed("boom".into())), ReportFormat::Markdown);
        assert!(md.contains("| osr1/seed0 | 97.50 | —[^1] |"));
        assert!(md.contains("[^1]: osr1/seed0/maha: boom"));
    }

    #[test]
    fn json_round_trips() {
        let r = one_cell(Outcome::Value(0.1 + 0.2));
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_is_long_form() {
        let csv = emit_report(&one_cell(Outcome::Failed("a, \"quoted\" reason".into())), ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "split,seed,detector,metric,status,value,reason");
        assert!(lines.contains(&"osr1,0,,id_accuracy,ok,97.5,"));
        assert!(lines.contains(&"osr1,0,maha,auroc,failed,,\"a, \"\"quoted\"\" reason\""));
    }

    #[test]
    fn aggregates_use_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert_eq!(s, Some(1.0));
        assert_eq!(mean_std(&[]), (None, None));
    }

    #[test]
    fn success_tracking() {
        assert!(one_cell(Outcome::Value(0.5)).all_succeeded());
        assert!(!one_cell(Outcome::Failed("x".into())).all_succeeded());
    }
}
