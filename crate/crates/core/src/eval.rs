//! Accuracy assessment from a confusion matrix.

use serde::Serialize;
use thiserror::Error;

use crate::raster::LabelMask;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("truth is {truth}, prediction is {predicted}")]
    DimensionMismatch { truth: String, predicted: String },
    #[error("predicted class {class} at pixel {pixel} exceeds class count {classes}")]
    ClassOutOfRange { class: u8, pixel: usize, classes: u8 },
    #[error("truth class {class} at pixel {pixel} exceeds class count {classes}")]
    TruthOutOfRange { class: u8, pixel: usize, classes: u8 },
    #[error("no prediction at labeled pixel {0}")]
    Unpredicted(usize),
    #[error("confusion matrix is empty")]
    Empty,
}

/// Rows are truth classes, columns predicted classes (both 1-based IDs stored 0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(EvalError::Empty);
        }
        let cm = Self { counts };
        if cm.total() == 0 {
            return Err(EvalError::Empty);
        }
        Ok(cm)
    }

    /// Binary matrix with the positive class first.
    pub fn binary(tp: u64, tn: u64, fp: u64, fn_: u64) -> Result<Self, EvalError> {
        Self::from_counts(vec![vec![tp, fn_], vec![fp, tn]])
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.classes())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }
}

/// Tallies every pixel with a nonzero truth label.
pub fn confusion_matrix(truth: &LabelMask, predicted: &LabelMask, classes: u8) -> Result<ConfusionMatrix, EvalError> {
    if truth.width() != predicted.width() || truth.height() != predicted.height() {
        return Err(EvalError::DimensionMismatch {
            truth: format!("{}x{}", truth.width(), truth.height()),
            predicted: format!("{}x{}", predicted.width(), predicted.height()),
        });
    }
    let k = classes as usize;
    let mut counts = vec![vec![0u64; k]; k];
    for (pixel, (&t, &p)) in truth.labels().iter().zip(predicted.labels()).enumerate() {
        if t == 0 {
            continue;
        }
        if t > classes {
            return Err(EvalError::TruthOutOfRange { class: t, pixel, classes });
        }
        if p == 0 {
            return Err(EvalError::Unpredicted(pixel));
        }
        if p > classes {
            return Err(EvalError::ClassOutOfRange { class: p, pixel, classes });
        }
        counts[t as usize - 1][p as usize - 1] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

/// `trace / total`.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> f64 {
    cm.trace() as f64 / cm.total() as f64
}

/// Kappa as an unreduced fraction `(N·trace − Σ r_c c_c) / (N² − Σ r_c c_c)`.
///
/// Returns `(1, 1)` or `(0, 1)` when all mass sits in one marginal cell (`p_e = 1`).
pub fn cohen_kappa_fraction(cm: &ConfusionMatrix) -> (i128, i128) {
    let n = cm.total() as i128;
    let chance: i128 = cm
        .row_totals()
        .iter()
        .zip(cm.column_totals())
        .map(|(&r, c)| r as i128 * c as i128)
        .sum();
    let den = n * n - chance;
    if den == 0 {
        return if cm.trace() == cm.total() { (1, 1) } else { (0, 1) };
    }
    (n * cm.trace() as i128 - chance, den)
}

/// `(p_o − p_e) / (1 − p_e)`, evaluated from integer counts.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    let (num, den) = cohen_kappa_fraction(cm);
    num as f64 / den as f64
}

/// Recall per class; `None` for classes with no truth pixels.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.counts
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect()
}

/// The JSON report emitted by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
    pub matrix: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn new(cm: &ConfusionMatrix) -> Self {
        Self {
            overall: overall_accuracy(cm),
            kappa: cohen_kappa(cm),
            per_class: per_class_accuracy(cm),
            matrix: cm.counts().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 4) as u8 + 1).collect();
        let m = LabelMask::new(10, 10, labels).unwrap();
        let cm = confusion_matrix(&m, &m, 4).unwrap();
        assert_eq!(cm.trace(), 100);
        assert_eq!(cm.total(), 100);
        assert_eq!(overall_accuracy(&cm), 1.0);
        assert_eq!(cohen_kappa(&cm), 1.0);
        assert!(per_class_accuracy(&cm).iter().all(|a| *a == Some(1.0)));
    }

    #[test]
    fn all_wrong() {
        let t = LabelMask::new(10, 1, vec![1; 10]).unwrap();
        let p = LabelMask::new(10, 1, vec![2; 10]).unwrap();
        let cm = confusion_matrix(&t, &p, 2).unwrap();
        assert_eq!(cm.counts(), &[vec![0, 10], vec![0, 0]]);
        assert_eq!(per_class_accuracy(&cm), vec![Some(0.0), None]);
    }

    #[test]
    fn binary_worked_example() {
        let cm = ConfusionMatrix::binary(40, 45, 5, 10).unwrap();
        assert_eq!(overall_accuracy(&cm), 0.85);
        assert_eq!(cohen_kappa_fraction(&cm), (3500, 5000));
        assert_eq!(cohen_kappa(&cm), 0.7);
    }

    #[test]
    fn unlabeled_skipped_and_errors() {
        let t = LabelMask::new(4, 1, vec![0, 1, 2, 0]).unwrap();
        let p = LabelMask::new(4, 1, vec![0, 1, 1, 9]).unwrap();
        let cm = confusion_matrix(&t, &p, 2).unwrap();
        assert_eq!(cm.total(), 2);
        let bad = LabelMask::new(4, 1, vec![1, 3, 1, 1]).unwrap();
        assert!(matches!(
            confusion_matrix(&t, &bad, 2),
            Err(EvalError::ClassOutOfRange { class: 3, .. })
        ));
        let hole = LabelMask::new(4, 1, vec![1, 0, 1, 1]).unwrap();
        assert_eq!(confusion_matrix(&t, &hole, 2), Err(EvalError::Unpredicted(1)));
        let small = LabelMask::new(2, 2, vec![1; 4]).unwrap();
        assert!(confusion_matrix(&t, &small, 2).is_err());
        let none = LabelMask::new(4, 1, vec![0; 4]).unwrap();
        assert_eq!(confusion_matrix(&none, &p, 2), Err(EvalError::Empty));
    }

    #[test]
    fn per_class_row_ratio() {
        let cm = ConfusionMatrix::from_counts(vec![
            vec![3, 0, 0, 0],
            vec![0, 5, 5, 0],
            vec![0, 0, 1, 0],
            vec![0, 0, 0, 0],
        ])
        .unwrap();
        assert_eq!(per_class_accuracy(&cm), vec![Some(1.0), Some(0.5), Some(1.0), None]);
    }

    #[test]
    fn single_cell_kappa() {
        let cm = ConfusionMatrix::from_counts(vec![vec![7, 0], vec![0, 0]]).unwrap();
        assert_eq!(cohen_kappa(&cm), 1.0);
    }

    #[test]
    fn report_json_shape() {
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![0, 0]]).unwrap();
        let json = serde_json::to_string(&EvalReport::new(&cm)).unwrap();
        assert_eq!(
            json,
            r#"{"overall":0.5,"kappa":0.0,"per_class":[0.5,null],"matrix":[[1,1],[0,0]]}"#
        );
    }

    fn mask_strategy() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..=4, n),
                proptest::collection::vec(1u8..=4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_tally_and_bounds((truth, pred) in mask_strategy()) {
            prop_assume!(truth.iter().any(|&t| t > 0));
            let n = truth.len();
            let t = LabelMask::new(n, 1, truth.clone()).unwrap();
            let p = LabelMask::new(n, 1, pred.clone()).unwrap();
            let cm = confusion_matrix(&t, &p, 4).unwrap();
            let mut tally = [[0u64; 4]; 4];
            for i in 0..n {
                if truth[i] > 0 {
                    tally[truth[i] as usize - 1][pred[i] as usize - 1] += 1;
                }
            }
            for r in 0..4 {
                prop_assert_eq!(&cm.counts()[r][..], &tally[r][..]);
                let row: u64 = tally[r].iter().sum();
                let acc = per_class_accuracy(&cm)[r];
                if row == 0 { prop_assert!(acc.is_none()); }
                else { prop_assert_eq!(acc, Some(tally[r][r] as f64 / row as f64)); }
            }
            prop_assert_eq!(cm.total() as usize, truth.iter().filter(|&&v| v > 0).count());
            let k = cohen_kappa(&cm);
            prop_assert!((-1.0..=1.0).contains(&k));
            let po = overall_accuracy(&cm);
            let (num, den) = cohen_kappa_fraction(&cm);
            if den != 0 && num == den { prop_assert_eq!(po, 1.0); }
            if po == 1.0 { prop_assert_eq!(k, 1.0); }

            // relabel classes with a fixed permutation
            let perm = [3u8, 1, 4, 2];
            let tp: Vec<u8> = truth.iter().map(|&v| if v == 0 { 0 } else { perm[v as usize - 1] }).collect();
            let pp: Vec<u8> = pred.iter().map(|&v| perm[v as usize - 1]).collect();
            let cm2 = confusion_matrix(&LabelMask::new(n, 1, tp).unwrap(), &LabelMask::new(n, 1, pp).unwrap(), 4).unwrap();
            prop_assert_eq!(overall_accuracy(&cm2), po);
            prop_assert_eq!(cohen_kappa(&cm2), k);
        }
    }
}
