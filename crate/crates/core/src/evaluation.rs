//! Threshold-sweep metrics, the accident-count baseline and real-world
//! precision extrapolation.
//!
//! A threshold `t` predicts positive for every score `>= t`. Equal scores form
//! one group and always flip together.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    Misaligned { scores: usize, labels: usize },
    #[error("score {index} is {value}, expected a value in [0, 1]")]
    Score { index: usize, value: f64 },
    #[error("label {index} is {value}, expected 0 or 1")]
    Label { index: usize, value: u8 },
    #[error("both classes are required")]
    SingleClass,
    #[error("no positive examples")]
    NoPositives,
    #[error("recall {0} cannot be reached")]
    UnreachableRecall(f64),
    #[error("argument `{name}` = {value} is outside [0, 1]")]
    Range { name: &'static str, value: f64 },
    #[error("result is undefined: {0}")]
    Undefined(&'static str),
    #[error("baseline needs at least one training row")]
    EmptyBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::Misaligned { scores: scores.len(), labels: labels.len() });
        }
        if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(EvalError::Score { index, value });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, y)| **y > 1) {
            return Err(EvalError::Label { index, value });
        }
        Ok(ScoredSet { scores, labels })
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

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Cumulative (threshold, tp, fp) after each score group, thresholds descending.
    fn groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out: Vec<(f64, usize, usize)> = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (k, &i) in order.iter().enumerate() {
            if self.labels[i] == 1 {
                tp += 1
            } else {
                fp += 1
            }
            let last_of_group = order.get(k + 1).is_none_or(|&j| self.scores[j] != self.scores[i]);
            if last_of_group {
                out.push((self.scores[i], tp, fp));
            }
        }
        out
    }
}

/// Serializes non-finite thresholds (the `(0, 0)` endpoint) as strings.
mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

fn fmt_threshold(t: f64) -> String {
    if t.is_finite() {
        t.to_string()
    } else {
        "inf".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// One point per score group after the `(0, 0)` start; area by trapezoids.
pub fn roc_curve(s: &ScoredSet) -> Result<RocCurve, EvalError> {
    let p = s.n_positive();
    let n = s.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    points.extend(s.groups().into_iter().map(|(t, tp, fp)| RocPoint {
        fpr: fp as f64 / n as f64,
        tpr: tp as f64 / p as f64,
        threshold: t,
    }));
    let auc = points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// One (recall, precision) point per score group, thresholds descending.
pub fn pr_curve(s: &ScoredSet) -> Result<Vec<PrPoint>, EvalError> {
    let p = s.n_positive();
    if p == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(s.groups()
        .into_iter()
        .map(|(t, tp, fp)| PrPoint {
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: t,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub fpr: f64,
}

/// Highest threshold whose recall reaches `target_recall`.
pub fn operating_point(s: &ScoredSet, target_recall: f64) -> Result<OperatingPoint, EvalError> {
    let p = s.n_positive();
    let n = s.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass);
    }
    s.groups()
        .into_iter()
        .map(|(t, tp, fp)| OperatingPoint {
            threshold: t,
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
            fpr: fp as f64 / n as f64,
        })
        .find(|o| o.recall >= target_recall)
        .ok_or(EvalError::UnreachableRecall(target_recall))
}

fn unit(name: &'static str, value: f64) -> Result<f64, EvalError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(EvalError::Range { name, value })
    }
}

/// Precision the classifier would reach at the true positive rate
/// `prevalence`, given its recall and false positive rate.
pub fn extrapolate_precision(recall: f64, fpr: f64, prevalence: f64) -> Result<f64, EvalError> {
    let (r, f, pi) = (unit("recall", recall)?, unit("fpr", fpr)?, unit("prevalence", prevalence)?);
    let tp = r * pi;
    let denom = tp + f * (1.0 - pi);
    if denom <= 0.0 {
        return Err(EvalError::Undefined("no predicted positives"));
    }
    Ok(tp / denom)
}

/// How many times more likely a flagged example is positive than a random one.
pub fn risk_ratio(extrapolated_precision: f64, prevalence: f64) -> Result<f64, EvalError> {
    if !(prevalence > 0.0) {
        return Err(EvalError::Undefined("prevalence must be positive"));
    }
    Ok(extrapolated_precision / prevalence)
}

/// Scores a row with accident count `n` by the positive fraction among
/// training rows whose count exceeds `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    /// Distinct training counts, ascending.
    pub counts: Vec<f64>,
    /// `at_or_above[j]`: positive fraction among rows with count >= counts[j].
    pub at_or_above: Vec<f64>,
    pub global_fraction: f64,
}

impl BaselineModel {
    pub fn fit(counts: &[f64], labels: &[u8]) -> Result<BaselineModel, EvalError> {
        if counts.len() != labels.len() {
            return Err(EvalError::Misaligned { scores: counts.len(), labels: labels.len() });
        }
        if counts.is_empty() {
            return Err(EvalError::EmptyBaseline);
        }
        let mut pairs: Vec<(f64, u8)> = counts.iter().copied().zip(labels.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut distinct: Vec<(f64, usize, usize)> = Vec::new();
        for (c, y) in pairs {
            match distinct.last_mut() {
                Some(last) if last.0 == c => {
                    last.1 += usize::from(y == 1);
                    last.2 += 1;
                }
                _ => distinct.push((c, usize::from(y == 1), 1)),
            }
        }
        let (mut pos, mut tot) = (0usize, 0usize);
        let mut at_or_above = vec![0.0; distinct.len()];
        for (j, &(_, p, t)) in distinct.iter().enumerate().rev() {
            pos += p;
            tot += t;
            at_or_above[j] = pos as f64 / tot as f64;
        }
        Ok(BaselineModel {
            counts: distinct.iter().map(|d| d.0).collect(),
            at_or_above,
            global_fraction: pos as f64 / tot as f64,
        })
    }

    pub fn score(&self, n: f64) -> f64 {
        let j = self.counts.partition_point(|&c| c <= n);
        self.at_or_above.get(j).copied().unwrap_or(self.global_fraction)
    }
}

/// Everything reported for one scored test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub n_positive: usize,
    pub auc_roc: f64,
    pub roc_points: Vec<RocPoint>,
    pub pr_points: Vec<PrPoint>,
    pub target_recall: f64,
    pub operating_point: OperatingPoint,
    pub prevalence: f64,
    pub extrapolated_precision: f64,
    pub risk_ratio: f64,
}

pub fn evaluate(s: &ScoredSet, target_recall: f64, prevalence: f64) -> Result<EvalReport, EvalError> {
    let roc = roc_curve(s)?;
    let op = operating_point(s, target_recall)?;
    let extrapolated_precision = extrapolate_precision(op.recall, op.fpr, prevalence)?;
    Ok(EvalReport {
        n_examples: s.len(),
        n_positive: s.n_positive(),
        auc_roc: roc.auc,
        roc_points: roc.points,
        pr_points: pr_curve(s)?,
        target_recall,
        operating_point: op,
        prevalence,
        extrapolated_precision,
        risk_ratio: risk_ratio(extrapolated_precision, prevalence)?,
    })
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", fmt_threshold(p.threshold), p.fpr, p.tpr));
    }
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,recall,precision\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
    }
    out
}

/// Precision, recall and false positive rate per threshold.
pub fn threshold_csv(s: &ScoredSet) -> Result<String, EvalError> {
    let p = s.n_positive();
    let n = s.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut out = String::from("threshold,precision,recall,fpr\n");
    for (t, tp, fp) in s.groups() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t,
            tp as f64 / (tp + fp) as f64,
            tp as f64 / p as f64,
            fp as f64 / n as f64
        ));
    }
    Ok(out)
}
