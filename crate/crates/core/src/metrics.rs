//! Binary classification metrics: accuracy, ROC AUC and background rejection
//! at a fixed signal efficiency.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Scores with their true labels (1 = signal, 0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim("scored set", &[scores.len()], &[labels.len()]));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite score {s}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("label {l} is not 0 or 1")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_signal(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_background(&self) -> usize {
        self.len() - self.n_signal()
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.n_signal() == 0 || self.n_background() == 0 {
            return Err(Error::Contract(format!(
                "need both classes, got {} signal and {} background",
                self.n_signal(),
                self.n_background()
            )));
        }
        Ok(())
    }
}

/// Fraction of entries where `(score ≥ threshold) == label`.
pub fn accuracy(set: &ScoredSet, threshold: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = set
        .scores
        .iter()
        .zip(&set.labels)
        .filter(|&(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(hits as f64 / set.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney rank statistic, with
/// midranks for ties: `P(s_sig > s_bkg) + ½ P(s_sig = s_bkg)`.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    set.require_both_classes()?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    let mut signal_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && set.scores[order[end]] == set.scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean
        let midrank = (start + 1 + end) as f64 / 2.0;
        let n_sig = order[start..end].iter().filter(|&&i| set.labels[i] == 1).count();
        signal_rank_sum += midrank * n_sig as f64;
        start = end;
    }
    let n1 = set.n_signal() as f64;
    let n0 = set.n_background() as f64;
    let u = signal_rank_sum - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkingPoint {
    /// `1 / ε_B`; `f64::INFINITY` when no background passes.
    pub rejection: f64,
    pub threshold: f64,
    pub signal_efficiency: f64,
    pub background_efficiency: f64,
}

/// Background rejection at the tightest cut `score ≥ t` that keeps at least
/// `eff` of the signal. Thresholds step between observed scores; there is no
/// interpolation.
pub fn rejection_at_efficiency(set: &ScoredSet, eff: f64) -> Result<WorkingPoint> {
    set.require_both_classes()?;
    if !(eff > 0.0 && eff < 1.0) {
        return Err(Error::Parameter(format!("efficiency must lie in (0, 1), got {eff}")));
    }
    let mut sig: Vec<f64> = Vec::with_capacity(set.n_signal());
    let mut bkg: Vec<f64> = Vec::with_capacity(set.n_background());
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        if l == 1 {
            sig.push(s);
        } else {
            bkg.push(s);
        }
    }
    sig.sort_by(|a, b| b.total_cmp(a));
    bkg.sort_by(|a, b| b.total_cmp(a));
    let n_sig = sig.len();

    // smallest count m with m / n_sig ≥ eff, evaluated exactly as the
    // efficiency comparison itself
    let passes = |m: usize| m as f64 / n_sig as f64 >= eff;
    let mut m = ((eff * n_sig as f64).ceil() as usize).clamp(1, n_sig);
    while m > 1 && passes(m - 1) {
        m -= 1;
    }
    while !passes(m) {
        m += 1;
    }
    let threshold = sig[m - 1];
    let sig_pass = sig.partition_point(|&s| s >= threshold);
    let bkg_pass = bkg.partition_point(|&s| s >= threshold);
    let background_efficiency = bkg_pass as f64 / bkg.len() as f64;
    Ok(WorkingPoint {
        rejection: if bkg_pass == 0 {
            f64::INFINITY
        } else {
            1.0 / background_efficiency
        },
        threshold,
        signal_efficiency: sig_pass as f64 / n_sig as f64,
        background_efficiency,
    })
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_none()
    }
}

/// Metrics summary written by the evaluation command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub auc: f64,
    /// Rendered as the string `"inf"` when no background passes the cut.
    #[serde(serialize_with = "finite_or_inf")]
    pub rej30: f64,
    pub n_signal: usize,
    pub n_background: usize,
    pub threshold_at_30: f64,
    pub threshold_selection: &'static str,
}

pub const WORKING_POINT_EFFICIENCY: f64 = 0.30;

impl MetricsReport {
    pub fn compute(set: &ScoredSet) -> Result<Self> {
        let wp = rejection_at_efficiency(set, WORKING_POINT_EFFICIENCY)?;
        Ok(Self {
            acc: accuracy(set, 0.5)?,
            auc: roc_auc(set)?,
            rej30: wp.rejection,
            n_signal: set.n_signal(),
            n_background: set.n_background(),
            threshold_at_30: wp.threshold,
            threshold_selection: "stepwise",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&set(&[0.9, 0.1], &[1, 0]), 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&set(&[0.9, 0.9], &[1, 0]), 0.5).unwrap(), 0.5);
        assert!(accuracy(&set(&[], &[]), 0.5).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(roc_auc(&set(&[0.4; 6], &[1, 0, 1, 0, 1, 0])).unwrap(), 0.5);
        assert!(matches!(roc_auc(&set(&[0.4, 0.5], &[1, 1])), Err(Error::Contract(_))));
    }

    #[test]
    fn rejection_is_infinite_without_background_passing() {
        let wp = rejection_at_efficiency(
            &set(&[0.9, 0.8, 0.7, 0.6, 0.0, 0.0, 0.0], &[1, 1, 1, 1, 0, 0, 0]),
            0.3,
        )
        .unwrap();
        assert!(wp.rejection.is_infinite());
    }

    #[test]
    fn rejection_hand_enumerated() {
        // sig {0.9,0.6,0.3}, bkg {0.8,0.4,0.1}: one-third efficiency is met at 0.9
        let s = set(&[0.9, 0.6, 0.3, 0.8, 0.4, 0.1], &[1, 1, 1, 0, 0, 0]);
        let wp = rejection_at_efficiency(&s, 1.0 / 3.0).unwrap();
        assert_eq!(wp.threshold, 0.9);
        assert_eq!(wp.background_efficiency, 0.0);
        assert!(wp.rejection.is_infinite());
        // two-thirds needs 0.6, which lets 0.8 through
        let wp = rejection_at_efficiency(&s, 0.5).unwrap();
        assert_eq!(wp.threshold, 0.6);
        assert!((wp.rejection - 3.0).abs() < 1e-12);
        assert!(rejection_at_efficiency(&s, 1.0).is_err());
    }

    #[test]
    fn report_serializes_infinite_rejection_as_string() {
        let s = set(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]);
        let r = MetricsReport::compute(&s).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["rej30"], "inf");
        assert_eq!(json["auc"], 1.0);
        assert_eq!(json["threshold_at_30"], 0.9);
    }
}
