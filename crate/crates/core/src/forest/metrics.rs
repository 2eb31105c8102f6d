//! Confusion matrix and the evaluation metrics derived from it.

use super::ForestError;

/// Square matrix of prediction counts: rows are true classes, columns
/// predicted classes (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let n = rows.len();
        let mut cm = ConfusionMatrix::new(n);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "confusion matrix must be square");
            for (p, &count) in row.iter().enumerate() {
                cm.counts[t * n + p] = count;
            }
        }
        cm
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn increment(&mut self, true_index: usize, predicted_index: usize) {
        self.counts[true_index * self.n_classes + predicted_index] += 1;
    }

    pub fn get(&self, true_index: usize, predicted_index: usize) -> u64 {
        self.counts[true_index * self.n_classes + predicted_index]
    }

    pub fn row_sum(&self, true_index: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(true_index, p)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Plain CSV: one row per true class, counts comma-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.n_classes {
            for p in 0..self.n_classes {
                if p > 0 {
                    out.push(',');
                }
                out.push_str(&self.get(t, p).to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Summary metrics of a confusion matrix. `per_class_accuracy[j]` is
/// `None` when class j has no true rows; such classes are absent from the
/// reliability average rather than counted as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// trace / total.
    pub accuracy: f64,
    /// Macro average of the defined per-class accuracies.
    pub reliability: f64,
    /// Population standard deviation of the defined per-class accuracies.
    pub reliability_sd: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// 1 - accuracy; the out-of-bag error when the matrix came from OOB
    /// voting.
    pub oob_error: f64,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics, ForestError> {
    let total = cm.total();
    if total == 0 {
        return Err(ForestError::EmptyConfusionMatrix);
    }
    let accuracy = cm.trace() as f64 / total as f64;

    let per_class_accuracy: Vec<Option<f64>> = (0..cm.n_classes())
        .map(|j| {
            let row = cm.row_sum(j);
            (row > 0).then(|| cm.get(j, j) as f64 / row as f64)
        })
        .collect();

    let defined: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
    let reliability = defined.iter().sum::<f64>() / defined.len() as f64;
    let variance = defined
        .iter()
        .map(|a| (a - reliability) * (a - reliability))
        .sum::<f64>()
        / defined.len() as f64;

    Ok(Metrics {
        accuracy,
        reliability,
        reliability_sd: variance.sqrt(),
        per_class_accuracy,
        oob_error: 1.0 - accuracy,
    })
}
