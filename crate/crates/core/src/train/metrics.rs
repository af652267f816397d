use std::fmt;

use serde::Serialize;

use crate::data::Polarity;
use crate::error::{EmgfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification quality; `confusion[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub confusion: [[usize; 3]; 3],
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; 3],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> Result<Self> {
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(EmgfError::Empty { op: "evaluate" });
        }
        let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
        let per_class = std::array::from_fn(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if tp == 0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        });
        let macro_f1 = per_class.iter().map(|m: &ClassMetrics| m.f1).sum::<f64>() / 3.0;
        Ok(EvalReport {
            confusion,
            accuracy: ratio(correct, total),
            macro_f1,
            per_class,
        })
    }

    pub fn from_predictions(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut confusion = [[0usize; 3]; 3];
        for (gold, pred) in pairs {
            if gold > 2 || pred > 2 {
                return Err(EmgfError::Instance(format!(
                    "class index out of range: gold {gold}, predicted {pred}"
                )));
            }
            confusion[gold][pred] += 1;
        }
        EvalReport::from_confusion(confusion)
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Element-wise mean of several reports' scalar metrics; confusion counts are summed.
    pub fn average(reports: &[EvalReport]) -> Result<EvalReport> {
        if reports.is_empty() {
            return Err(EmgfError::Empty { op: "average" });
        }
        let k = reports.len() as f64;
        let mut confusion = [[0usize; 3]; 3];
        for r in reports {
            for (row, src) in confusion.iter_mut().zip(&r.confusion) {
                for (cell, v) in row.iter_mut().zip(src) {
                    *cell += v;
                }
            }
        }
        let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        let per_class = std::array::from_fn(|c| ClassMetrics {
            precision: mean(&|r| r.per_class[c].precision),
            recall: mean(&|r| r.per_class[c].recall),
            f1: mean(&|r| r.per_class[c].f1),
            support: confusion[c].iter().sum(),
        });
        Ok(EvalReport {
            confusion,
            accuracy: mean(&|r| r.accuracy),
            macro_f1: mean(&|r| r.macro_f1),
            per_class,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy  {:.4}", self.accuracy)?;
        writeln!(f, "macro_f1  {:.4}", self.macro_f1)?;
        writeln!(f, "{:<10}{:>10}{:>10}{:>10}{:>9}", "class", "precision", "recall", "f1", "support")?;
        for (p, m) in Polarity::ALL.iter().zip(&self.per_class) {
            writeln!(
                f,
                "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>9}",
                p.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            )?;
        }
        writeln!(f, "confusion (rows gold, columns predicted)")?;
        for (p, row) in Polarity::ALL.iter().zip(&self.confusion) {
            writeln!(f, "{:<10}{:>6}{:>6}{:>6}", p.as_str(), row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let r = EvalReport::from_confusion([[5, 0, 0], [0, 5, 0], [0, 0, 5]]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn one_off_each() {
        let r = EvalReport::from_confusion([[4, 1, 0], [1, 4, 0], [0, 0, 5]]).unwrap();
        assert!((r.accuracy - 13.0 / 15.0).abs() < 1e-15);
        assert!((r.per_class[0].f1 - 0.8).abs() < 1e-15);
        assert!((r.macro_f1 - 2.6 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_predictor() {
        let r = EvalReport::from_predictions((0..3).flat_map(|g| (0..4).map(move |_| (g, 0)))).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        // precision 4/12, recall 1 -> f1 = 0.5
        assert!((r.macro_f1 - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(EvalReport::from_confusion([[0; 3]; 3]).is_err());
    }
}
