//! Step-shifted softmax classifiers over pooled digest embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::{Digest, DigestKind, DigestRecord};
use crate::error::{Error, Result};
use crate::eval::{ForecastRecord, SOURCE_MODEL};
use crate::labeler::{EscalationState, LabelMap};
use crate::month::Month;

pub const DEFAULT_STEPS: [usize; 4] = [0, 1, 3, 6];
pub const N_CLASSES: usize = 4;

/// Mean of the member vectors, L2-normalized.
pub fn pool_embedding(members: &[Vec<f32>]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("digest has no member embeddings"))?;
    let dim = first.len();
    let mut acc = vec![0f64; dim];
    for m in members {
        if m.len() != dim {
            return Err(Error::Dimension { expected: dim, got: m.len() });
        }
        for (a, x) in acc.iter_mut().zip(m) {
            *a += *x as f64;
        }
    }
    let n = members.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::invalid("pooled digest embedding has zero norm"));
    }
    Ok(acc.into_iter().map(|a| a / norm).collect())
}

/// A digest reduced to its pooled feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledDigest {
    pub dyad_id: String,
    pub month: Month,
    pub kind: DigestKind,
    pub features: Vec<f64>,
}

impl PooledDigest {
    pub fn from_digest(d: &Digest) -> Result<Self> {
        Ok(PooledDigest {
            dyad_id: d.dyad_id.clone(),
            month: d.month,
            kind: d.kind,
            features: pool_embedding(&d.member_embeddings)?,
        })
    }

    /// Pools a stored digest by looking its snippet ids up in `embeddings`.
    /// Member vectors are normalized before averaging.
    pub fn from_record(r: &DigestRecord, embeddings: &BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let mut members = Vec::with_capacity(r.snippet_ids.len());
        for id in &r.snippet_ids {
            let v = embeddings
                .get(id)
                .ok_or_else(|| Error::invalid(format!("no embedding for digest member {id}")))?;
            members.push(crate::ann::normalize(v)?);
        }
        Ok(PooledDigest {
            dyad_id: r.dyad_id.clone(),
            month: r.month,
            kind: r.kind,
            features: pool_embedding(&members)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub dyad_id: String,
    pub digest_month: Month,
    pub target_month: Month,
    pub features: Vec<f64>,
    pub target: EscalationState,
    pub partition: Partition,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: usize,
    pub test: usize,
    /// Pairs whose target month had no label.
    pub missing_label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub train_end: Month,
    pub test_start: Month,
    pub val_end: Month,
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_end < self.test_start && self.test_start <= self.val_end) {
            return Err(Error::invalid(format!(
                "need train_end < test_start <= val_end, got {} / {} / {}",
                self.train_end, self.test_start, self.val_end
            )));
        }
        Ok(())
    }
}

/// Pairs each digest at month m with the state at m + step. Training pairs
/// need m + step ≤ train_end and use train labels; test pairs need
/// m ≥ test_start and m + step ≤ val_end and use validation labels.
pub fn build_dataset(
    digests: &[PooledDigest],
    labels_train: &LabelMap,
    labels_val: &LabelMap,
    step: usize,
    window: &Window,
) -> Result<(Vec<TrainingPair>, DatasetStats)> {
    window.validate()?;
    let mut pairs = Vec::new();
    let mut stats = DatasetStats::default();
    for d in digests {
        let target_month = d.month.offset(step as i32);
        let (partition, labels) = if target_month <= window.train_end {
            (Partition::Train, labels_train)
        } else if d.month >= window.test_start && target_month <= window.val_end {
            (Partition::Test, labels_val)
        } else {
            continue;
        };
        let Some(state) = labels.get(&(d.dyad_id.clone(), target_month)) else {
            stats.missing_label += 1;
            continue;
        };
        match partition {
            Partition::Train => stats.train += 1,
            Partition::Test => stats.test += 1,
        }
        pairs.push(TrainingPair {
            dyad_id: d.dyad_id.clone(),
            digest_month: d.month,
            target_month,
            features: d.features.clone(),
            target: *state,
            partition,
        });
    }
    if stats.missing_label > 0 {
        log::warn!("step {step}: {} pairs dropped for missing labels", stats.missing_label);
    }
    Ok((pairs, stats))
}

/// N / (4 n_c) for present classes, zero for absent ones.
pub fn class_weights(targets: &[EscalationState]) -> Result<[f64; N_CLASSES]> {
    let mut counts = [0usize; N_CLASSES];
    for t in targets {
        counts[t.index()] += 1;
    }
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(Error::invalid(format!(
            "class weights need at least two classes, counts {counts:?}"
        )));
    }
    let n = targets.len() as f64;
    let mut w = [0.0; N_CLASSES];
    for c in 0..N_CLASSES {
        if counts[c] > 0 {
            w[c] = n / (N_CLASSES as f64 * counts[c] as f64);
        }
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig {
            lr: 0.1,
            epochs: 2000,
            seed: 17,
            l2: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub dim: usize,
    /// One row of `dim + 1` weights per class; the last entry is the bias.
    pub weights: Vec<Vec<f64>>,
    pub class_weights: [f64; N_CLASSES],
    pub config: SoftmaxConfig,
    pub final_loss: f64,
}

impl SoftmaxModel {
    pub fn zeros(dim: usize, class_weights: [f64; N_CLASSES], config: SoftmaxConfig) -> Self {
        SoftmaxModel {
            dim,
            weights: vec![vec![0.0; dim + 1]; N_CLASSES],
            class_weights,
            config,
            final_loss: f64::NAN,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn logits(weights: &[Vec<f64>], x: &[f64]) -> [f64; N_CLASSES] {
    let mut z = [0.0; N_CLASSES];
    for (c, row) in weights.iter().enumerate() {
        let d = x.len();
        z[c] = row[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[d];
    }
    z
}

fn softmax(z: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = z.map(|v| (v - max).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub fn predict(model: &SoftmaxModel, features: &[f64]) -> Result<[f64; N_CLASSES]> {
    if features.len() != model.dim {
        return Err(Error::Dimension { expected: model.dim, got: features.len() });
    }
    Ok(softmax(logits(&model.weights, features)))
}

/// Class-weighted cross-entropy normalized by the total example weight, plus
/// `l2` times the squared norm of every weight (bias included). Returns the
/// loss and its gradient.
pub fn loss_and_gradient(
    weights: &[Vec<f64>],
    xs: &[Vec<f64>],
    ys: &[EscalationState],
    class_weights: &[f64; N_CLASSES],
    l2: f64,
) -> (f64, Vec<Vec<f64>>) {
    let d = weights[0].len() - 1;
    let mut grad = vec![vec![0.0; d + 1]; N_CLASSES];
    let mut total_w = 0.0;
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let w = class_weights[y.index()];
        if w == 0.0 {
            continue;
        }
        total_w += w;
        let z = logits(weights, x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - z[y.index()]);
        for c in 0..N_CLASSES {
            let g = w * ((z[c] - lse).exp() - (c == y.index()) as u8 as f64);
            for (gj, xj) in grad[c][..d].iter_mut().zip(x) {
                *gj += g * xj;
            }
            grad[c][d] += g;
        }
    }
    if total_w > 0.0 {
        loss /= total_w;
        grad.iter_mut().flatten().for_each(|g| *g /= total_w);
    }
    let mut penalty = 0.0;
    for (gr, wr) in grad.iter_mut().zip(weights) {
        for (g, w) in gr.iter_mut().zip(wr) {
            penalty += w * w;
            *g += 2.0 * l2 * w;
        }
    }
    (loss + l2 * penalty, grad)
}

/// Full-batch gradient descent from zero weights with balanced class weights.
pub fn train_softmax(xs: &[Vec<f64>], ys: &[EscalationState], config: &SoftmaxConfig) -> Result<SoftmaxModel> {
    let cw = class_weights(ys)?;
    train_with_weights(xs, ys, cw, config)
}

pub fn train_with_weights(
    xs: &[Vec<f64>],
    ys: &[EscalationState],
    cw: [f64; N_CLASSES],
    config: &SoftmaxConfig,
) -> Result<SoftmaxModel> {
    if xs.len() != ys.len() {
        return Err(Error::Length(format!("{} feature rows, {} targets", xs.len(), ys.len())));
    }
    let dim = xs
        .first()
        .map(|x| x.len())
        .ok_or_else(|| Error::invalid("no training pairs"))?;
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: bad.len() });
    }
    if !(config.lr > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::invalid("learning rate must be positive and l2 non-negative"));
    }
    if cw.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("class weights {cw:?} must be finite and non-negative")));
    }
    let mut model = SoftmaxModel::zeros(dim, cw, *config);
    let mut loss = f64::NAN;
    for epoch in 0..=config.epochs {
        let (l, grad) = loss_and_gradient(&model.weights, xs, ys, &cw, config.l2);
        if !l.is_finite() {
            return Err(Error::Collapse { epoch });
        }
        loss = l;
        if epoch == config.epochs {
            break;
        }
        for (wr, gr) in model.weights.iter_mut().zip(&grad) {
            for (w, g) in wr.iter_mut().zip(gr) {
                *w -= config.lr * g;
            }
        }
    }
    model.final_loss = loss;
    Ok(model)
}

pub fn train_on_pairs(pairs: &[TrainingPair], config: &SoftmaxConfig) -> Result<SoftmaxModel> {
    let train: Vec<&TrainingPair> = pairs.iter().filter(|p| p.partition == Partition::Train).collect();
    let xs: Vec<Vec<f64>> = train.iter().map(|p| p.features.clone()).collect();
    let ys: Vec<EscalationState> = train.iter().map(|p| p.target).collect();
    train_softmax(&xs, &ys, config)
}

/// Model and test-set forecasts for one (step, kind) combination.
#[derive(Clone, Debug)]
pub struct StepRun {
    pub step: usize,
    pub kind: DigestKind,
    pub model: SoftmaxModel,
    pub stats: DatasetStats,
    pub records: Vec<ForecastRecord>,
}

/// Trains one model per step on `digests` (all of one kind) and forecasts
/// its test partition. Records carry the target month.
pub fn run_steps(
    digests: &[PooledDigest],
    labels_train: &LabelMap,
    labels_val: &LabelMap,
    steps: &[usize],
    kind: DigestKind,
    window: &Window,
    config: &SoftmaxConfig,
) -> Result<Vec<StepRun>> {
    if let Some(d) = digests.iter().find(|d| d.kind != kind) {
        return Err(Error::invalid(format!("digest of kind {} in a {kind} run", d.kind)));
    }
    steps
        .par_iter()
        .map(|&step| {
            let (pairs, stats) = build_dataset(digests, labels_train, labels_val, step, window)?;
            let model = train_on_pairs(&pairs, config)?;
            let records = pairs
                .iter()
                .filter(|p| p.partition == Partition::Test)
                .map(|p| {
                    Ok(ForecastRecord {
                        dyad_id: p.dyad_id.clone(),
                        month: p.target_month,
                        step,
                        probabilities: predict(&model, &p.features)?,
                        actual: p.target,
                        source: SOURCE_MODEL.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StepRun {
                step,
                kind,
                model,
                stats,
                records,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use EscalationState::*;

    #[test]
    fn pooling_examples() {
        let e1 = vec![1.0f32, 0.0];
        let e2 = vec![0.0f32, 1.0];
        let p = pool_embedding(&[vec![3.0, 4.0]]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-12 && (p[1] - 0.8).abs() < 1e-12);
        assert!(pool_embedding(&[e1.clone(), vec![-1.0, 0.0]]).is_err());
        assert!(pool_embedding(&[]).is_err());
        let p = pool_embedding(&[e1.clone(), e1, e2]).unwrap();
        let n = 5f64.sqrt();
        assert!((p[0] - 2.0 / n).abs() < 1e-12 && (p[1] - 1.0 / n).abs() < 1e-12);
    }

    #[test]
    fn weight_examples() {
        let mut t = vec![Peace; 100];
        t.extend(vec![Escalation; 50]);
        t.extend(vec![Plateau; 25]);
        t.extend(vec![Deescalation; 25]);
        assert_eq!(class_weights(&t).unwrap(), [0.5, 1.0, 2.0, 2.0]);
        assert_eq!(class_weights(&ALL_BALANCED).unwrap(), [1.0; 4]);
        let w = class_weights(&[Peace, Peace, Plateau]).unwrap();
        assert_eq!(w[1], 0.0);
        assert!(class_weights(&[Plateau, Plateau]).is_err());
    }

    const ALL_BALANCED: [EscalationState; 8] =
        [Peace, Escalation, Plateau, Deescalation, Peace, Escalation, Plateau, Deescalation];

    #[test]
    fn zero_model_is_uniform() {
        let m = SoftmaxModel::zeros(3, [1.0; 4], SoftmaxConfig::default());
        assert_eq!(predict(&m, &[0.3, -2.0, 5.0]).unwrap(), [0.25; 4]);
        assert!(predict(&m, &[1.0]).is_err());
        let trained = train_softmax(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[Peace, Plateau],
            &SoftmaxConfig { epochs: 0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(predict(&trained, &[0.2, 0.1]).unwrap(), [0.25; 4]);
    }

    #[test]
    fn dominant_row_wins() {
        let mut m = SoftmaxModel::zeros(2, [1.0; 4], SoftmaxConfig::default());
        m.weights[2] = vec![3.0, 0.0, 0.0];
        let p = predict(&m, &[1.0, 0.5]).unwrap();
        let e = 3f64.exp();
        assert!((p[2] - e / (e + 3.0)).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_order_enforced() {
        let m: Month = "2021-12".parse().unwrap();
        assert!(Window { train_end: m, test_start: m, val_end: m.offset(3) }.validate().is_err());
        assert!(Window { train_end: m, test_start: m.offset(1), val_end: m.offset(1) }.validate().is_ok());
    }
}
