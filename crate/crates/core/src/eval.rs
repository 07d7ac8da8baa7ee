//! Rejection curves, Prediction Rejection Ratio and ROC-AUC.
//!
//! Curves are sampled at every integer rejection count `m = 0..=n/2`; the
//! point for `m` is the mean quality of the `n - m` records left after
//! rejecting the first `m` under the chosen order. PRR compares rectangle
//! sums of these curves, each taken relative to the overall mean quality.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub trace_id: String,
    pub method: String,
    pub uncertainty: f64,
    pub quality: f64,
}

impl ScoreRecord {
    pub fn new(trace_id: impl Into<String>, method: impl Into<String>, uncertainty: f64, quality: f64) -> Self {
        ScoreRecord {
            trace_id: trace_id.into(),
            method: method.into(),
            uncertainty,
            quality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionOrder {
    /// Most uncertain first.
    ByUncertainty,
    /// Lowest quality first.
    Oracle,
    /// Highest quality first.
    AntiOracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub rejection_fraction: f64,
    pub mean_quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub prr: f64,
    pub roc_auc: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub n: usize,
}

fn check_len(records: &[ScoreRecord]) -> Result<()> {
    if records.len() < 2 {
        return Err(Error::Contract(format!(
            "at least two records are required, got {}",
            records.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| !r.quality.is_finite() || !r.uncertainty.is_finite()) {
        return Err(Error::Contract(format!("record {} has a non-finite value", r.trace_id)));
    }
    Ok(())
}

fn mean_quality(records: &[ScoreRecord]) -> f64 {
    records.iter().map(|r| r.quality).sum::<f64>() / records.len() as f64
}

fn rejection_rank(records: &[ScoreRecord], order: RejectionOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        let primary = match order {
            RejectionOrder::ByUncertainty => rb.uncertainty.total_cmp(&ra.uncertainty),
            RejectionOrder::Oracle => ra.quality.total_cmp(&rb.quality),
            RejectionOrder::AntiOracle => rb.quality.total_cmp(&ra.quality),
        };
        primary.then_with(|| ra.trace_id.cmp(&rb.trace_id))
    });
    idx
}

/// Rejection curve over the first half of rejection fractions.
pub fn rejection_curve(records: &[ScoreRecord], order: RejectionOrder) -> Result<Vec<CurvePoint>> {
    check_len(records)?;
    let n = records.len();
    let max_reject = n / 2;
    let ranked = rejection_rank(records, order);

    // retained[m] = Σ quality of ranked[m..]
    let mut retained = vec![0.0; n + 1];
    for m in (0..n).rev() {
        retained[m] = retained[m + 1] + records[ranked[m]].quality;
    }
    let overall = mean_quality(records);
    Ok((0..=max_reject)
        .map(|m| CurvePoint {
            rejection_fraction: m as f64 / n as f64,
            // m = 0 uses the same mean for every order
            mean_quality: if m == 0 { overall } else { retained[m] / (n - m) as f64 },
        })
        .collect())
}

fn area_above_mean(curve: &[CurvePoint], mean: f64) -> f64 {
    curve.iter().map(|p| p.mean_quality - mean).sum()
}

/// Prediction Rejection Ratio of the uncertainty ranking.
pub fn prr(records: &[ScoreRecord]) -> Result<f64> {
    check_len(records)?;
    let first = records[0].quality;
    if records.iter().all(|r| r.quality == first) {
        return Err(Error::DegenerateOracle);
    }
    let mean = mean_quality(records);
    let uq = area_above_mean(&rejection_curve(records, RejectionOrder::ByUncertainty)?, mean);
    let oracle = area_above_mean(&rejection_curve(records, RejectionOrder::Oracle)?, mean);
    if oracle <= 0.0 {
        return Err(Error::DegenerateOracle);
    }
    Ok(uq / oracle)
}

/// ROC-AUC of uncertainty as a detector of low quality
/// (positive = `quality < threshold`), with midranks for ties.
pub fn roc_auc(records: &[ScoreRecord], threshold: f64) -> Result<f64> {
    let labels: Vec<bool> = records.iter().map(|r| r.quality < threshold).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    roc_auc_labeled(&scores, &labels)
}

pub fn roc_auc_labeled(scores: &[f64], positive: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), positive.len());
    let positives = positive.iter().filter(|&&p| p).count();
    let negatives = positive.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc { positives, negatives });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("non-finite uncertainty".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let (np, nn) = (positives as f64, negatives as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// 1-based ranks in ascending order, ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// PRR, curve and (when a threshold is given) ROC-AUC for one method.
pub fn evaluate(records: &[ScoreRecord], roc_threshold: Option<f64>) -> Result<EvalReport> {
    let prr = prr(records)?;
    let curve = rejection_curve(records, RejectionOrder::ByUncertainty)?;
    let roc_auc = roc_threshold.map(|t| roc_auc(records, t)).transpose()?;
    Ok(EvalReport {
        prr,
        roc_auc,
        curve,
        n: records.len(),
    })
}

/// Quality thresholds used to binarize continuous quality for ROC-AUC.
pub mod thresholds {
    pub const SUMMARIZATION: f64 = 0.3;
    pub const QA: f64 = 0.5;
    pub const TRANSLATION: f64 = 0.85;
}
