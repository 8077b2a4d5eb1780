use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ForecastRecord;
use crate::error::{Error, Result};
use crate::forecast::N_CLASSES;
use crate::labeler::EscalationState;
use crate::rng::{derive_index, rng_from};

pub type Confusion = [[u64; N_CLASSES]; N_CLASSES];

/// Class with the highest probability; ties go to the lowest code.
pub fn argmax(p: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

/// Counts indexed `[actual][predicted]`.
pub fn confusion(records: &[ForecastRecord]) -> Confusion {
    let mut m = [[0u64; N_CLASSES]; N_CLASSES];
    for r in records {
        m[r.actual.index()][argmax(&r.probabilities)] += 1;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn accuracy(m: &Confusion) -> Result<f64> {
    let total: u64 = m.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Undefined("empty confusion matrix".into()));
    }
    let diag: u64 = (0..N_CLASSES).map(|c| m[c][c]).sum();
    Ok(diag as f64 / total as f64)
}

/// Micro-averaged over classes from summed TP, FP and FN.
pub fn micro_metrics(m: &Confusion) -> Result<MicroMetrics> {
    let acc = accuracy(m)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for c in 0..N_CLASSES {
        tp += m[c][c];
        fp += (0..N_CLASSES).filter(|r| *r != c).map(|r| m[r][c]).sum::<u64>();
        fn_ += (0..N_CLASSES).filter(|p| *p != c).map(|p| m[c][p]).sum::<u64>();
    }
    let recall = tp as f64 / (tp + fn_) as f64;
    let precision = tp as f64 / (tp + fp) as f64;
    let f1 = if recall + precision > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let out = MicroMetrics { recall, precision, f1 };
    assert!(
        (recall - acc).abs() < 1e-12 && (precision - acc).abs() < 1e-12 && (f1 - acc).abs() < 1e-12,
        "micro metrics {out:?} differ from accuracy {acc}"
    );
    Ok(out)
}

fn sorted_desc(scores: &[f64], labels: &[bool]) -> Vec<(f64, bool)> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Average precision over the descending-score ranking. Within a group of
/// tied scores the expected value over all orderings of the group is used.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Length(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(Error::Undefined("average precision without positives".into()));
    }
    let pairs = sorted_desc(scores, labels);
    let mut sum = 0.0;
    let mut before = 0usize;
    let mut pos_before = 0usize;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let n = j - i;
        let p = pairs[i..j].iter().filter(|x| x.1).count();
        if p > 0 {
            let nf = n as f64;
            let pf = p as f64;
            for r in 1..=n {
                let rf = r as f64;
                let within = if n > 1 { (rf - 1.0) * (pf - 1.0) / (nf - 1.0) } else { 0.0 };
                sum += pf / nf * (pos_before as f64 + 1.0 + within) / (before as f64 + rf);
            }
        }
        before += n;
        pos_before += p;
        i = j;
    }
    Ok(sum / positives as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (rank-sum form with average ranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Length(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("auroc needs both labels".into()));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * pairs[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

fn pooled(records: &[ForecastRecord], class: Option<usize>) -> (Vec<f64>, Vec<bool>) {
    let classes: Vec<usize> = match class {
        Some(c) => vec![c],
        None => (0..N_CLASSES).collect(),
    };
    let mut s = Vec::with_capacity(records.len() * classes.len());
    let mut l = Vec::with_capacity(records.len() * classes.len());
    for r in records {
        for c in &classes {
            s.push(r.probabilities[*c]);
            l.push(r.actual.index() == *c);
        }
    }
    (s, l)
}

/// AP over every (record, class) pair pooled as one binary problem.
pub fn ap_ovr_micro(records: &[ForecastRecord]) -> Result<f64> {
    let (s, l) = pooled(records, None);
    average_precision(&s, &l)
}

pub fn auroc_ovr_micro(records: &[ForecastRecord]) -> Result<f64> {
    let (s, l) = pooled(records, None);
    auroc(&s, &l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub ap: f64,
    pub auroc: f64,
}

/// One-versus-rest AP and AUROC for `class`.
pub fn per_class_binary_report(records: &[ForecastRecord], class: EscalationState) -> Result<ClassReport> {
    let (s, l) = pooled(records, Some(class.index()));
    Ok(ClassReport {
        ap: average_precision(&s, &l)?,
        auroc: auroc(&s, &l)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Precision,
    F1,
    Auroc,
    Ap,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Recall, Metric::Precision, Metric::F1, Metric::Auroc, Metric::Ap];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
            Metric::Auroc => "auroc",
            Metric::Ap => "ap",
        }
    }

    pub fn compute(self, records: &[ForecastRecord]) -> Result<f64> {
        match self {
            Metric::Recall => Ok(micro_metrics(&confusion(records))?.recall),
            Metric::Precision => Ok(micro_metrics(&confusion(records))?.precision),
            Metric::F1 => Ok(micro_metrics(&confusion(records))?.f1),
            Metric::Auroc => auroc_ovr_micro(records),
            Metric::Ap => ap_ovr_micro(records),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_records: usize,
    pub n_boot: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval. Each resample draws its own seed from
/// `seed` and its index, so the result does not depend on thread count.
pub fn bootstrap_ci<F>(records: &[ForecastRecord], metric: F, n_boot: usize, level: f64, seed: u64) -> Result<Interval>
where
    F: Fn(&[ForecastRecord]) -> Result<f64> + Sync,
{
    if records.is_empty() {
        return Err(Error::invalid("bootstrap over no records"));
    }
    if n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("bad bootstrap settings n={n_boot} level={level}")));
    }
    let point = metric(records)?;
    let n = records.len();
    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            let mut rng = rng_from(derive_index(seed, b as u64));
            let sample: Vec<ForecastRecord> = (0..n).map(|_| records[rng.random_range(0..n)].clone()).collect();
            metric(&sample).ok()
        })
        .collect();
    let mut values: Vec<f64> = draws.into_iter().flatten().collect();
    let undefined = n_boot - values.len();
    if undefined * 10 > n_boot {
        return Err(Error::Undefined(format!("metric undefined on {undefined} of {n_boot} resamples")));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    Ok(Interval {
        point,
        lower: quantile(&values, alpha).min(point),
        upper: quantile(&values, 1.0 - alpha).max(point),
        n_records: n,
        n_boot,
    })
}
