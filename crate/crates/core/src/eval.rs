//! Detector verdicts versus ground-truth labels.
//!
//! A frame counts as flagged when the store holds a violation record whose
//! frame path equals the label path. Store records without a matching label
//! make the comparison invalid.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::store::ViolationRecord;
use crate::synthgen::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: u64,
    pub true_positives: u64,
    pub false_negatives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    /// `tp / (tp + fn)`; 1.0 when there are no violating frames.
    pub true_positive_rate: f64,
    /// `fp / (fp + tn)`; 0.0 when there are no clean frames.
    pub false_positive_rate: f64,
    /// `(fp + fn) / total`
    pub overall_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    /// Store frame paths with no label.
    pub unmatched: Vec<String>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stored frame(s) have no label: {}", self.unmatched.len(), self.unmatched.join(", "))
    }
}

impl EvalReport {
    /// Builds a report from confusion counts.
    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
        let total = tp + fn_ + fp + tn;
        Self {
            total,
            true_positives: tp,
            false_negatives: fn_,
            false_positives: fp,
            true_negatives: tn,
            true_positive_rate: ratio(tp, tp + fn_, 1.0),
            false_positive_rate: ratio(fp, fp + tn, 0.0),
            overall_error_rate: ratio(fp + fn_, total, 0.0),
        }
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        format!(
            "                 truth+   truth-\n\
             flagged        {:>7}  {:>7}\n\
             not flagged    {:>7}  {:>7}\n\
             \n\
             frames               {}\n\
             true positive rate   {:.4}\n\
             false positive rate  {:.4}\n\
             overall error rate   {:.4}\n",
            self.true_positives,
            self.false_positives,
            self.false_negatives,
            self.true_negatives,
            self.total,
            self.true_positive_rate,
            self.false_positive_rate,
            self.overall_error_rate,
        )
    }
}

pub fn evaluate(labels: &[Label], records: &[ViolationRecord]) -> Result<EvalReport, Mismatch> {
    let flagged: HashSet<&str> = records.iter().map(|r| r.frame.path.as_str()).collect();
    let known: HashSet<&str> = labels.iter().map(|l| l.path.as_str()).collect();
    let unmatched: BTreeSet<&str> = flagged.difference(&known).copied().collect();
    if !unmatched.is_empty() {
        return Err(Mismatch {
            unmatched: unmatched.into_iter().map(String::from).collect(),
        });
    }
    let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
    for label in labels {
        match (label.truth_violation, flagged.contains(label.path.as_str())) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fn_, fp, tn))
}
