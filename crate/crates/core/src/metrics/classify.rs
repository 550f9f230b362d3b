use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_decisions(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Illicit-class F1 of boolean decisions.
pub fn binary_f1(pred: &[bool], truth: &[bool]) -> f64 {
    Confusion::from_decisions(pred, truth).f1()
}

/// How scores are turned into decisions.
#[derive(Clone, Copy, Debug)]
pub enum DecisionRule<'a> {
    /// Positive iff score ≥ threshold.
    Threshold(f64),
    /// Decisions already made elsewhere (argmax over the logits).
    Given(&'a [bool]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_roc: f64,
    pub average_precision: f64,
    pub confusion: Confusion,
    /// `None` for argmax decisions.
    pub threshold: Option<f64>,
    /// No positive rows: recall, AUC and AP are recorded as 0 (AUC 0.5).
    pub undefined_recall: bool,
    /// No negative rows or no positive rows.
    pub undefined_auc: bool,
}

impl MetricBundle {
    pub fn get(&self, metric: MetricKind) -> f64 {
        match metric {
            MetricKind::F1 => self.f1,
            MetricKind::Precision => self.precision,
            MetricKind::Recall => self.recall,
            MetricKind::AucRoc => self.auc_roc,
            MetricKind::AveragePrecision => self.average_precision,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    F1,
    Precision,
    Recall,
    AucRoc,
    AveragePrecision,
}

/// Ranks with ties averaged, 1-based, in input order.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve from the rank-sum statistic; `None` when either
/// class is absent.
pub fn auc_roc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let sum: f64 = ranks
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t)
        .map(|(r, _)| r)
        .sum();
    let u = sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise area under the precision-recall curve, `Σ (Rₙ − Rₙ₋₁) Pₙ`
/// over distinct score thresholds; `None` without positives.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if truth[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Confusion, illicit-class F1/precision/recall, AUC and AP.
pub fn classify_metrics(
    scores: &[f64],
    truth: &[bool],
    rule: DecisionRule<'_>,
) -> Result<MetricBundle> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let (pred, threshold): (Vec<bool>, Option<f64>) = match rule {
        DecisionRule::Threshold(t) => (scores.iter().map(|&s| s >= t).collect(), Some(t)),
        DecisionRule::Given(d) => {
            if d.len() != truth.len() {
                return Err(Error::Dimension(format!(
                    "{} decisions for {} labels",
                    d.len(),
                    truth.len()
                )));
            }
            (d.to_vec(), None)
        }
    };
    let c = Confusion::from_decisions(&pred, truth);
    let auc = auc_roc(scores, truth);
    let ap = average_precision(scores, truth);
    Ok(MetricBundle {
        f1: c.f1(),
        precision: c.precision(),
        recall: c.recall(),
        auc_roc: auc.unwrap_or(0.5),
        average_precision: ap.unwrap_or(0.0),
        confusion: c,
        threshold,
        undefined_recall: c.tp + c.fn_ == 0,
        undefined_auc: auc.is_none(),
    })
}

/// Threshold maximising F1 over every distinct score (positive iff score ≥
/// threshold). Ties go to the lower threshold.
pub fn optimal_threshold(scores: &[f64], truth: &[bool]) -> (f64, f64) {
    let n_pos = truth.iter().filter(|&&t| t).count();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut best = (f64::INFINITY, 0.0);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if truth[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Confusion {
            tp,
            fp,
            fn_: n_pos - tp,
            tn: 0,
        };
        // Descending sweep: `>=` moves ties to the lower threshold.
        if c.f1() >= best.1 {
            best = (s, c.f1());
        }
    }
    if best.0.is_infinite() {
        best.0 = 0.5;
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerStepReport {
    pub steps: BTreeMap<u8, MetricBundle>,
    /// Mean F1 over test steps 35–42 present in the input.
    pub mean_f1_35_42: Option<f64>,
    /// Mean F1 over test steps 43–49 present in the input.
    pub mean_f1_43_49: Option<f64>,
}

pub fn mean_f1_over(steps: &BTreeMap<u8, MetricBundle>, lo: u8, hi: u8) -> Option<f64> {
    let v: Vec<f64> = steps.range(lo..=hi).map(|(_, m)| m.f1).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Metrics per timestep plus the two test-period means.
pub fn per_timestep_metrics(
    scores: &[f64],
    truth: &[bool],
    step_of_row: &[u8],
    rule: DecisionRule<'_>,
) -> Result<PerStepReport> {
    if step_of_row.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} steps for {} scores",
            step_of_row.len(),
            scores.len()
        )));
    }
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &t) in step_of_row.iter().enumerate() {
        groups.entry(t).or_default().push(i);
    }
    let mut steps = BTreeMap::new();
    for (t, rows) in groups {
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = rows.iter().map(|&i| truth[i]).collect();
        let m = match rule {
            DecisionRule::Threshold(th) => classify_metrics(&s, &y, DecisionRule::Threshold(th))?,
            DecisionRule::Given(d) => {
                let dd: Vec<bool> = rows.iter().map(|&i| d[i]).collect();
                classify_metrics(&s, &y, DecisionRule::Given(&dd))?
            }
        };
        steps.insert(t, m);
    }
    Ok(PerStepReport {
        mean_f1_35_42: mean_f1_over(&steps, 35, 42),
        mean_f1_43_49: mean_f1_over(&steps, 43, 49),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fraction of concordant (positive, negative) pairs, ties ½.
    fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn perfect_and_reversed_scores() {
        let y = [true, false, true, false];
        let s = [0.9, 0.1, 0.8, 0.2];
        let m = classify_metrics(&s, &y, DecisionRule::Threshold(0.5)).unwrap();
        assert_eq!((m.f1, m.auc_roc, m.average_precision), (1.0, 1.0, 1.0));
        let r: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        assert_eq!(
            classify_metrics(&r, &y, DecisionRule::Threshold(0.5))
                .unwrap()
                .auc_roc,
            0.0
        );
    }

    #[test]
    fn hand_built_confusion() {
        // tp = 2, fp = 1, fn = 1, tn = 2.
        let y = [true, true, true, false, false, false];
        let d = [true, true, false, true, false, false];
        let s = [0.0; 6];
        let m = classify_metrics(&s, &y, DecisionRule::Given(&d)).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 2
            }
        );
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.threshold, None);
    }

    #[test]
    fn no_positive_rows_are_flagged() {
        let m =
            classify_metrics(&[0.2, 0.7], &[false, false], DecisionRule::Threshold(0.5)).unwrap();
        assert!(m.undefined_recall && m.undefined_auc);
        assert_eq!((m.recall, m.f1), (0.0, 0.0));
    }

    #[test]
    fn auc_with_ties_matches_pair_count() {
        let s = [0.5, 0.5, 0.2, 0.9, 0.5, 0.1];
        let y = [true, false, false, true, true, false];
        assert!((auc_roc(&s, &y).unwrap() - brute_auc(&s, &y)).abs() < 1e-15);
    }

    #[test]
    fn average_precision_hand_value() {
        // Ranked: 0.9 (+), 0.8 (−), 0.7 (+): AP = 0.5·1 + 0.5·(2/3).
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn optimal_threshold_prefers_lower_on_ties() {
        let s = [0.9, 0.6, 0.6, 0.2];
        let y = [true, true, false, false];
        let (t, f1) = optimal_threshold(&s, &y);
        // Threshold 0.9: P=1, R=0.5, F1=2/3. 0.6: P=2/3, R=1, F1=0.8.
        assert_eq!(t, 0.6);
        assert!((f1 - 0.8).abs() < 1e-12);
        // Two thresholds with the same F1.
        let (t, _) = optimal_threshold(&[0.8, 0.4], &[false, false]);
        assert_eq!(t, 0.4);
    }

    #[test]
    fn single_step_matches_aggregate() {
        let s = [0.9, 0.3, 0.6];
        let y = [true, false, true];
        let r = per_timestep_metrics(&s, &y, &[40, 40, 40], DecisionRule::Threshold(0.5)).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(
            r.steps[&40],
            classify_metrics(&s, &y, DecisionRule::Threshold(0.5)).unwrap()
        );
        assert_eq!(r.mean_f1_35_42, Some(1.0));
        assert_eq!(r.mean_f1_43_49, None);
    }

    #[test]
    fn zero_positive_step_is_flagged_not_dropped() {
        let r = per_timestep_metrics(
            &[0.9, 0.1, 0.2],
            &[true, false, false],
            &[35, 35, 46],
            DecisionRule::Threshold(0.5),
        )
        .unwrap();
        assert!(r.steps[&46].undefined_recall);
        assert_eq!(r.mean_f1_43_49, Some(0.0));
    }
}
