//! Correct-classification-rate evaluation, confusion matrices and
//! plot-ready CSV reports.

use std::fs;
use std::path::Path;

use crate::dataset::class_label;
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::training::{predict_set, SampleSet};

/// Counts of true class (rows) against predicted class (columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut m = Self::new(classes);
        for (truth, pred) in pairs {
            m.record(truth, pred)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::IndexOutOfRange(format!(
                "confusion entry ({truth}, {pred}) out of {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    /// Per-class support (row sum).
    pub fn support(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    /// trace / total.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    /// `None` for classes that never occurred (zero support).
    pub fn recall(&self, class: usize) -> Option<f64> {
        let support = self.support(class);
        if support == 0 {
            None
        } else {
            Some(self.count(class, class) as f64 / support as f64)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub recall: Vec<Option<f64>>,
}

/// Run the model over the test set in eval mode and aggregate.
pub fn evaluate(
    model: &ModelGraph,
    test: &dyn SampleSet,
    batch: usize,
    threads: usize,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let pairs = predict_set(model, test, batch, threads)?;
    let classes = model.spec().num_classes;
    result_from_pairs(classes, pairs)
}

pub fn result_from_pairs(classes: usize, pairs: Vec<(usize, usize)>) -> Result<EvalResult> {
    let confusion = ConfusionMatrix::from_pairs(classes, pairs)?;
    let recall = (0..classes).map(|c| confusion.recall(c)).collect();
    Ok(EvalResult {
        accuracy: confusion.accuracy(),
        confusion,
        recall,
    })
}

fn label_for(class: usize, classes: usize) -> String {
    class_label(class, classes)
}

/// Write `confusion.csv`, `per_class.csv` and `accuracy.txt` into `out_dir`;
/// `epochs_csv`, when given, is copied alongside them. Numeric formatting is
/// fixed at six decimals, so reruns are byte-identical.
pub fn emit_reports(
    result: &EvalResult,
    epochs_csv: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;
    let classes = result.confusion.classes();

    let mut confusion = String::from("label");
    for c in 0..classes {
        confusion.push(',');
        confusion.push_str(&label_for(c, classes));
    }
    confusion.push('\n');
    for truth in 0..classes {
        confusion.push_str(&label_for(truth, classes));
        for pred in 0..classes {
            confusion.push_str(&format!(",{}", result.confusion.count(truth, pred)));
        }
        confusion.push('\n');
    }
    write_file(&out_dir.join("confusion.csv"), &confusion)?;

    let mut per_class = String::from("label,support,recall\n");
    for c in 0..classes {
        let support = result.confusion.support(c);
        let recall = match result.recall[c] {
            Some(r) => format!("{r:.6}"),
            None => String::new(),
        };
        per_class.push_str(&format!("{},{support},{recall}\n", label_for(c, classes)));
    }
    write_file(&out_dir.join("per_class.csv"), &per_class)?;

    write_file(
        &out_dir.join("accuracy.txt"),
        &format!("{:.6}\n", result.accuracy),
    )?;

    if let Some(src) = epochs_csv {
        fs::copy(src, out_dir.join("epochs.csv")).map_err(|e| {
            Error::io(
                format!("copy {} -> {}", src.display(), out_dir.display()),
                e,
            )
        })?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn perfect_predictor_is_diagonal_with_accuracy_one() {
        let pairs: Vec<(usize, usize)> = (0..18).flat_map(|c| vec![(c, c); 3]).collect();
        let result = result_from_pairs(18, pairs).unwrap();
        assert_eq!(result.accuracy, 1.0);
        for t in 0..18 {
            for p in 0..18 {
                assert_eq!(result.confusion.count(t, p), if t == p { 3 } else { 0 });
            }
        }
        assert!(result.recall.iter().all(|r| *r == Some(1.0)));
    }

    #[test]
    fn constant_predictor_fills_single_column() {
        let k = 5usize;
        let pairs: Vec<(usize, usize)> = (0..18).flat_map(|c| vec![(c, k); 2]).collect();
        let result = result_from_pairs(18, pairs).unwrap();
        for p in 0..18 {
            let col: u64 = (0..18).map(|t| result.confusion.count(t, p)).sum();
            assert_eq!(col, if p == k { 36 } else { 0 });
        }
        let support_k = result.confusion.support(k);
        assert_eq!(
            result.accuracy,
            support_k as f64 / result.confusion.total() as f64
        );
    }

    #[test]
    fn totals_match_sample_count_and_row_sums_match_supports() {
        let mut rng = stream(61, Purpose::Synthetic, 0);
        let pairs: Vec<(usize, usize)> = (0..500)
            .map(|_| (rng.gen_range(0..18), rng.gen_range(0..18)))
            .collect();
        let m = ConfusionMatrix::from_pairs(18, pairs.clone()).unwrap();
        assert_eq!(m.total(), 500);
        for c in 0..18 {
            let expect = pairs.iter().filter(|(t, _)| *t == c).count() as u64;
            assert_eq!(m.support(c), expect);
        }
        assert!((m.accuracy() - m.trace() as f64 / 500.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_is_invariant_under_evaluation_order() {
        let mut rng = stream(62, Purpose::Synthetic, 0);
        let mut pairs: Vec<(usize, usize)> = (0..200)
            .map(|_| (rng.gen_range(0..6), rng.gen_range(0..6)))
            .collect();
        let a = ConfusionMatrix::from_pairs(6, pairs.clone()).unwrap();
        pairs.shuffle(&mut rng);
        let b = ConfusionMatrix::from_pairs(6, pairs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_support_recall_is_flagged_not_zero() {
        let pairs = vec![(0usize, 1usize), (1, 1)];
        let result = result_from_pairs(3, pairs).unwrap();
        assert_eq!(result.recall[0], Some(0.0));
        assert_eq!(result.recall[1], Some(1.0));
        assert_eq!(result.recall[2], None);
    }

    #[test]
    fn reports_are_byte_identical_across_reruns() {
        let pairs: Vec<(usize, usize)> = (0..18).map(|c| (c, (c + 1) % 18)).collect();
        let result = result_from_pairs(18, pairs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        emit_reports(&result, None, &out_a).unwrap();
        emit_reports(&result, None, &out_b).unwrap();
        for file in ["confusion.csv", "per_class.csv", "accuracy.txt"] {
            let a = fs::read(out_a.join(file)).unwrap();
            let b = fs::read(out_b.join(file)).unwrap();
            assert_eq!(a, b, "{file}");
        }
    }

    #[test]
    fn confusion_csv_has_19_rows_and_reproduces_accuracy() {
        let mut rng = stream(63, Purpose::Synthetic, 1);
        let pairs: Vec<(usize, usize)> = (0..333)
            .map(|_| (rng.gen_range(0..18), rng.gen_range(0..18)))
            .collect();
        let result = result_from_pairs(18, pairs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&result, None, dir.path()).unwrap();

        let text = fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 19);

        let mut trace = 0u64;
        let mut total = 0u64;
        for (t, row) in rows[1..].iter().enumerate() {
            for (p, cell) in row.split(',').skip(1).enumerate() {
                let v: u64 = cell.parse().unwrap();
                total += v;
                if t == p {
                    trace += v;
                }
            }
        }
        let csv_accuracy = trace as f64 / total as f64;
        assert!((csv_accuracy - result.accuracy).abs() < 1e-6);

        let per_class = fs::read_to_string(dir.path().join("per_class.csv")).unwrap();
        for line in per_class.lines().skip(1) {
            let recall = line.split(',').nth(2).unwrap();
            if !recall.is_empty() {
                let r: f64 = recall.parse().unwrap();
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
