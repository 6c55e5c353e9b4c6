//! Scoring of predictions against ground truth, and the CSV reports built
//! from the scores.
//!
//! Report files:
//!
//! * `oa_summary.csv`: `scope,correct,total,oa`, one `overall` row and one
//!   `depth_<d>` row per taxonomy depth for hierarchical runs.
//! * `confusion.csv`: header `truth\predicted,<class>...`, then one row per
//!   true class. Counts are integers.
//! * `comparison.csv`: `classifier,classes,geo_context,depth,<vision model>...`;
//!   each cell is the OA of one run, `-` where no run exists.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hierarchy::HierarchicalOutcome;
use crate::taxonomy::{ClassLabel, Taxonomy};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to score")]
    Empty,
    #[error("sample {index}: {label:?} is not in the declared class list")]
    UnknownLabel { index: usize, label: String },
    #[error("sample {index} has no ground truth")]
    MissingTruth { index: usize },
    #[error("{patch_id}: path {path:?} is not a walk in the taxonomy")]
    PathMismatch { patch_id: String, path: Vec<String> },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// `correct / total`, kept as integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: u64,
    pub total: u64,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Thousandths, rounded half up with integer arithmetic.
    pub fn thousandths(&self) -> u64 {
        (2000 * self.correct + self.total) / (2 * self.total)
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.thousandths();
        write!(f, "{}.{:03}", t / 1000, t % 1000)
    }
}

/// Rows are true classes, columns predicted classes, both in declared order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<ClassLabel>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<ClassLabel>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class support.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Per-class prediction counts.
    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.classes.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub overall: Accuracy,
    pub confusion: ConfusionMatrix,
    pub per_depth: Option<Vec<Accuracy>>,
    /// Path of the run manifest this report was computed from.
    pub run_manifest: Option<String>,
}

fn index_of(classes: &[ClassLabel], label: &str, index: usize) -> Result<usize, EvalError> {
    classes
        .iter()
        .position(|c| c.as_str() == label)
        .ok_or_else(|| EvalError::UnknownLabel {
            index,
            label: label.to_owned(),
        })
}

/// Scores `(truth, predicted)` pairs against a declared class list.
pub fn score<T: AsRef<str>, P: AsRef<str>>(
    pairs: &[(T, P)],
    classes: &[ClassLabel],
) -> Result<EvaluationReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    for (i, (truth, predicted)) in pairs.iter().enumerate() {
        let t = index_of(classes, truth.as_ref(), i)?;
        let p = index_of(classes, predicted.as_ref(), i)?;
        confusion.counts[t][p] += 1;
    }
    Ok(EvaluationReport {
        overall: Accuracy {
            correct: confusion.trace(),
            total: confusion.total(),
        },
        confusion,
        per_depth: None,
        run_manifest: None,
    })
}

/// Routed correctness at depth `d`: the prediction agrees with the truth on
/// every level up to `d`. Past the end of a short truth path the leaf level
/// decides, so a correct shallow leaf stays correct at deeper depths.
pub fn correct_at(predicted: &[String], truth: &[String], d: usize) -> bool {
    if truth.is_empty() {
        return false;
    }
    let e = d.min(truth.len() - 1);
    predicted.len() > e && predicted[..=e] == truth[..=e]
}

/// Per-depth OA for routed outcomes, from depth 0 to the taxonomy's depth.
/// Non-increasing by construction.
pub fn score_hierarchical(
    outcomes: &[HierarchicalOutcome],
    taxonomy: &Taxonomy,
) -> Result<Vec<Accuracy>, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Empty);
    }
    let levels = taxonomy.max_path_len();
    let mut correct = vec![0u64; levels];
    for (i, o) in outcomes.iter().enumerate() {
        if !taxonomy.is_walk(&o.path) {
            return Err(EvalError::PathMismatch {
                patch_id: o.patch_id.clone(),
                path: o.path.clone(),
            });
        }
        let truth = o.truth_path.as_ref().ok_or(EvalError::MissingTruth { index: i })?;
        if !taxonomy.is_walk(truth) || taxonomy.truth_path(truth.last().expect("walks are non-empty")).as_ref() != Some(truth) {
            return Err(EvalError::PathMismatch {
                patch_id: o.patch_id.clone(),
                path: truth.clone(),
            });
        }
        for (d, c) in correct.iter_mut().enumerate() {
            *c += u64::from(correct_at(&o.path, truth, d));
        }
    }
    let total = outcomes.len() as u64;
    Ok(correct.into_iter().map(|correct| Accuracy { correct, total }).collect())
}

/// Leaf-level report for routed outcomes, with per-depth OA attached.
pub fn hierarchical_report(
    outcomes: &[HierarchicalOutcome],
    taxonomy: &Taxonomy,
) -> Result<EvaluationReport, EvalError> {
    let per_depth = score_hierarchical(outcomes, taxonomy)?;
    let leaves: Vec<ClassLabel> = taxonomy.leaves().into_iter().cloned().collect();
    let pairs: Vec<(&str, &str)> = outcomes
        .iter()
        .map(|o| {
            let truth = o.truth_path.as_ref().and_then(|t| t.last()).expect("checked above");
            (truth.as_str(), o.path.last().map(String::as_str).unwrap_or(""))
        })
        .collect();
    let mut report = score(&pairs, &leaves)?;
    report.per_depth = Some(per_depth);
    Ok(report)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, EvalError> {
    csv::Writer::from_path(path).map_err(|source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    })
}

fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<(), EvalError> {
    let mut w = csv_writer(path)?;
    let wrap = |source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    };
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn oa_summary_rows(report: &EvaluationReport) -> Vec<Vec<String>> {
    let row = |scope: String, a: &Accuracy| vec![scope, a.correct.to_string(), a.total.to_string(), a.to_string()];
    let mut rows = vec![
        vec!["scope".into(), "correct".into(), "total".into(), "oa".into()],
        row("overall".into(), &report.overall),
    ];
    for (d, a) in report.per_depth.iter().flatten().enumerate() {
        rows.push(row(format!("depth_{d}"), a));
    }
    rows
}

pub fn confusion_rows(m: &ConfusionMatrix) -> Vec<Vec<String>> {
    let mut header = vec!["truth\\predicted".to_owned()];
    header.extend(m.classes.iter().map(|c| c.as_str().to_owned()));
    let mut rows = vec![header];
    for (c, counts) in m.classes.iter().zip(&m.counts) {
        let mut row = vec![c.as_str().to_owned()];
        row.extend(counts.iter().map(u64::to_string));
        rows.push(row);
    }
    rows
}

/// Writes `oa_summary.csv` and `confusion.csv` into `dir`.
pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let summary = dir.join("oa_summary.csv");
    write_rows(&summary, &oa_summary_rows(report))?;
    let confusion = dir.join("confusion.csv");
    write_rows(&confusion, &confusion_rows(&report.confusion))?;
    Ok(vec![summary, confusion])
}

/// One cell of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub vision_model: String,
    pub classifier: String,
    pub include_classes: bool,
    pub include_geo_context: bool,
    /// Taxonomy depth for hierarchical runs.
    pub depth: Option<usize>,
    pub accuracy: Accuracy,
}

fn flag(on: bool) -> String {
    if on { "yes" } else { "no" }.to_owned()
}

/// Rows keyed by (classifier, classes flag, geo flag, depth) and columns by
/// vision model, both in first-appearance order. A later run with the same
/// key overwrites an earlier one.
pub fn comparison_rows(runs: &[RunSummary]) -> Vec<Vec<String>> {
    type Key = (String, bool, bool, Option<usize>);
    let mut models: Vec<&str> = Vec::new();
    let mut keys: Vec<Key> = Vec::new();
    let mut cells: BTreeMap<(Key, &str), Accuracy> = BTreeMap::new();
    for r in runs {
        if !models.contains(&r.vision_model.as_str()) {
            models.push(&r.vision_model);
        }
        let key = (r.classifier.clone(), r.include_classes, r.include_geo_context, r.depth);
        if !keys.contains(&key) {
            keys.push(key.clone());
        }
        cells.insert((key, &r.vision_model), r.accuracy);
    }
    let mut header: Vec<String> = ["classifier", "classes", "geo_context", "depth"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(models.iter().map(|m| m.to_string()));
    let mut rows = vec![header];
    for key in keys {
        let mut row = vec![
            key.0.clone(),
            flag(key.1),
            flag(key.2),
            key.3.map_or_else(|| "-".to_owned(), |d| d.to_string()),
        ];
        for m in &models {
            row.push(cells.get(&(key.clone(), *m)).map_or_else(|| "-".to_owned(), Accuracy::to_string));
        }
        rows.push(row);
    }
    rows
}

pub fn emit_comparison(runs: &[RunSummary], path: &Path) -> Result<PathBuf, EvalError> {
    write_rows(path, &comparison_rows(runs))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Source;
    use crate::taxonomy::class_set;
    use crate::taxonomy::fixtures::ucm_gpt4o;
    use proptest::prelude::*;

    fn binary() -> Vec<ClassLabel> {
        class_set(&["Buildings", "No Buildings"]).unwrap()
    }

    #[test]
    fn identity_predictions() {
        let r = score(&[("Buildings", "Buildings"), ("No Buildings", "No Buildings")], &binary()).unwrap();
        assert_eq!(r.overall, Accuracy { correct: 2, total: 2 });
        assert_eq!(r.overall.to_string(), "1.000");
        assert_eq!(r.confusion.counts(), &[vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn three_of_four() {
        let pairs = [
            ("Buildings", "Buildings"),
            ("Buildings", "No Buildings"),
            ("No Buildings", "No Buildings"),
            ("No Buildings", "No Buildings"),
        ];
        let r = score(&pairs, &binary()).unwrap();
        assert_eq!(r.overall.value(), 0.75);
        assert_eq!(r.overall.to_string(), "0.750");
        assert_eq!(r.confusion.get(0, 1), 1);
    }

    #[test]
    fn out_of_set_labels_abort() {
        assert!(matches!(
            score(&[("Buildings", "Water")], &binary()),
            Err(EvalError::UnknownLabel { index: 0, .. })
        ));
        assert!(matches!(score::<&str, &str>(&[], &binary()), Err(EvalError::Empty)));
    }

    #[test]
    fn rendering_rounds_half_up_exactly() {
        // 0.8825 is not representable in binary; integer rounding still gives .883
        assert_eq!(Accuracy { correct: 353, total: 400 }.to_string(), "0.883");
        assert_eq!(Accuracy { correct: 1, total: 3 }.to_string(), "0.333");
        assert_eq!(Accuracy { correct: 2, total: 3 }.to_string(), "0.667");
        assert_eq!(Accuracy { correct: 0, total: 7 }.to_string(), "0.000");
    }

    fn outcome(path: &[&str], truth: &[&str]) -> HierarchicalOutcome {
        HierarchicalOutcome {
            patch_id: "p".into(),
            path: path.iter().map(|s| s.to_string()).collect(),
            sources: vec![Source::Primary; path.len()],
            truth_path: Some(truth.iter().map(|s| s.to_string()).collect()),
        }
    }

    #[test]
    fn hand_built_per_depth_counts() {
        let tax = ucm_gpt4o();
        let beach = ["Natural Landscapes", "beach"];
        let mut outs = Vec::new();
        outs.extend((0..5).map(|_| outcome(&beach, &beach)));
        outs.extend((0..3).map(|_| outcome(&["Natural Landscapes", "river"], &beach)));
        outs.extend((0..2).map(|_| outcome(&["Transportation", "runway"], &beach)));
        let acc = score_hierarchical(&outs, &tax).unwrap();
        assert_eq!(acc, vec![Accuracy { correct: 8, total: 10 }, Accuracy { correct: 5, total: 10 }]);
        assert_eq!(acc.iter().map(Accuracy::value).collect::<Vec<_>>(), vec![0.8, 0.5]);
    }

    #[test]
    fn all_wrong_at_top_is_zero_everywhere() {
        let tax = ucm_gpt4o();
        let outs = vec![outcome(&["Transportation", "runway"], &["Natural Landscapes", "beach"]); 4];
        let acc = score_hierarchical(&outs, &tax).unwrap();
        assert!(acc.iter().all(|a| a.correct == 0));
    }

    #[test]
    fn invalid_paths_are_rejected() {
        let tax = ucm_gpt4o();
        let bad = outcome(&["Transportation", "beach"], &["Natural Landscapes", "beach"]);
        assert!(matches!(score_hierarchical(&[bad], &tax), Err(EvalError::PathMismatch { .. })));
    }

    #[test]
    fn report_files_golden() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = [("Buildings", "Buildings"), ("Buildings", "No Buildings"), ("No Buildings", "No Buildings")];
        let report = score(&pairs, &binary()).unwrap();
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("oa_summary.csv")).unwrap(),
            "scope,correct,total,oa\noverall,2,3,0.667\n"
        );
        assert_eq!(
            std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap(),
            "truth\\predicted,Buildings,No Buildings\nBuildings,1,1\nNo Buildings,0,1\n"
        );
    }

    #[test]
    fn comparison_puts_flags_in_rows_and_models_in_columns() {
        let run = |vision: &str, classes: bool, correct| RunSummary {
            vision_model: vision.into(),
            classifier: "gpt-4o".into(),
            include_classes: classes,
            include_geo_context: false,
            depth: None,
            accuracy: Accuracy { correct, total: 1000 },
        };
        let runs = [run("kosmos-2", true, 878), run("kosmos-2", false, 896), run("llama-3.2", true, 789)];
        let rows = comparison_rows(&runs);
        assert_eq!(rows[0], vec!["classifier", "classes", "geo_context", "depth", "kosmos-2", "llama-3.2"]);
        assert_eq!(rows[1], vec!["gpt-4o", "yes", "no", "-", "0.878", "0.789"]);
        assert_eq!(rows[2], vec!["gpt-4o", "no", "no", "-", "0.896", "-"]);
    }

    proptest! {
        #[test]
        fn marginals_match_counts(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..200)) {
            let classes = class_set(&["a", "b", "c"]).unwrap();
            let named: Vec<(&str, &str)> = pairs
                .iter()
                .map(|&(t, p)| (classes[t].as_str(), classes[p].as_str()))
                .collect();
            let r = score(&named, &classes).unwrap();
            for k in 0..3 {
                prop_assert_eq!(r.confusion.row_sums()[k], pairs.iter().filter(|x| x.0 == k).count() as u64);
                prop_assert_eq!(r.confusion.column_sums()[k], pairs.iter().filter(|x| x.1 == k).count() as u64);
            }
            prop_assert_eq!(r.overall.correct, pairs.iter().filter(|x| x.0 == x.1).count() as u64);
        }

        #[test]
        fn correct_at_is_monotone(
            truth in prop::collection::vec(0u8..3, 1..4),
            pred in prop::collection::vec(0u8..3, 1..4),
        ) {
            let s = |v: &[u8]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
            let (t, p) = (s(&truth), s(&pred));
            for d in 1..5 {
                prop_assert!(!correct_at(&p, &t, d) || correct_at(&p, &t, d - 1));
            }
        }
    }
}
