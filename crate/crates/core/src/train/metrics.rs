use serde_json::value::RawValue;
use serde::{Deserialize, Serialize, Serializer};

use crate::{Error, Result};

fn two_decimals<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format!("{x:.2}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

/// Binary confusion counts (positive class 1) and derived percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    #[serde(serialize_with = "two_decimals")]
    pub accuracy: f64,
    #[serde(serialize_with = "two_decimals")]
    pub precision: f64,
    #[serde(serialize_with = "two_decimals")]
    pub recall: f64,
    #[serde(serialize_with = "two_decimals")]
    pub f1: f64,
    #[serde(serialize_with = "two_decimals")]
    pub macro_f1: f64,
    /// No positive predictions, so precision is reported as 0.
    pub precision_degenerate: bool,
    /// No positive labels, so recall is reported as 0.
    pub recall_degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Self> {
        let total = tp + fp + fn_ + tn;
        if total == 0 {
            return Err(Error::invalid("metrics over zero samples"));
        }
        let (precision, precision_degenerate) = ratio(tp, tp + fp);
        let (recall, recall_degenerate) = ratio(tp, tp + fn_);
        let f1 = f1_of(precision, recall);
        // negative class scored symmetrically
        let f1_neg = f1_of(ratio(tn, tn + fn_).0, ratio(tn, tn + fp).0);
        Ok(Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: 100.0 * (tp + tn) as f64 / total as f64,
            precision,
            recall,
            f1,
            macro_f1: (f1 + f1_neg) / 2.0,
            precision_degenerate,
            recall_degenerate,
        })
    }

    pub fn from_predictions(predicted: &[u8], actual: &[u8]) -> Result<Self> {
        let [tp, fp, fn_, tn] = confusion(predicted, actual)?;
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `[tp, fp, fn, tn]` with 1 as the positive class.
pub fn confusion(predicted: &[u8], actual: &[u8]) -> Result<[u64; 4]> {
    if predicted.len() != actual.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut c = [0u64; 4];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p > 1 || a > 1 {
            return Err(Error::invalid(format!("labels must be 0 or 1, got {p}/{a}")));
        }
        let slot = match (p, a) {
            (1, 1) => 0,
            (1, 0) => 1,
            (0, 1) => 2,
            _ => 3,
        };
        c[slot] += 1;
    }
    Ok(c)
}
