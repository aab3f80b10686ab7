//! Loss-threshold membership inference.
//!
//! The attacker scores each record by its negated loss under the trained
//! model and predicts "member" when the score is at least a threshold. The
//! ROC sweeps every distinct score; its trapezoidal area equals the
//! Mann-Whitney statistic with ties counted as one half.

use std::io::Write;

use crate::error::{domain, Result};
use crate::models::{Dataset, ToyModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// `+inf` for the leading `(0, 0)` point.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiaReport {
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub advantage: f64,
}

/// Per-record scores `-loss(model, x)` for both splits.
pub fn mia_scores(model: &ToyModel, members: &Dataset, nonmembers: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    if members.is_empty() || nonmembers.is_empty() {
        return domain("both member and non-member splits must be non-empty");
    }
    if members.dim() != model.input_dim || nonmembers.dim() != model.input_dim {
        return domain("dataset dimension does not match the model");
    }
    let score = |d: &Dataset| -> Vec<f64> {
        d.features
            .iter()
            .zip(&d.targets)
            .map(|(x, &y)| -model.example_loss(x, y))
            .collect()
    };
    Ok((score(members), score(nonmembers)))
}

/// ROC by threshold sweep over the union of scores, with its area and the
/// maximal `tpr - fpr`.
pub fn roc_auc(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<MiaReport> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return domain("score lists must be non-empty");
    }
    if member_scores.iter().chain(nonmember_scores).any(|s| s.is_nan()) {
        return domain("scores must not be NaN");
    }
    let mut tagged: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (s, true))
        .chain(nonmember_scores.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (m, n) = (member_scores.len() as f64, nonmember_scores.len() as f64);
    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < tagged.len() {
        let t = tagged[i].0;
        while i < tagged.len() && tagged[i].0 == t {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / n,
            tpr: tp as f64 / m,
        });
    }
    let auc = roc
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(MiaReport {
        member_scores: member_scores.to_vec(),
        nonmember_scores: nonmember_scores.to_vec(),
        advantage: advantage(&roc),
        roc,
        auc,
    })
}

/// `max(tpr - fpr)` over the curve; never negative since `(0, 0)` is on it.
pub fn advantage(roc: &[RocPoint]) -> f64 {
    roc.iter().map(|p| p.tpr - p.fpr).fold(0.0, f64::max)
}

/// Score both splits and build the report.
pub fn evaluate_mia(model: &ToyModel, members: &Dataset, nonmembers: &Dataset) -> Result<MiaReport> {
    let (a, b) = mia_scores(model, members, nonmembers)?;
    roc_auc(&a, &b)
}

impl MiaReport {
    /// CSV with columns `threshold,fpr,tpr`; the first threshold is `inf`.
    pub fn write_roc_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["threshold", "fpr", "tpr"])?;
        for p in &self.roc {
            wtr.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// `key=value` lines: auc, advantage, members, nonmembers.
    pub fn summary(&self) -> String {
        format!(
            "auc={}\nadvantage={}\nmembers={}\nnonmembers={}\n",
            self.auc,
            self.advantage,
            self.member_scores.len(),
            self.nonmember_scores.len()
        )
    }
}
