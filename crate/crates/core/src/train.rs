//! Local optimization: Adam, per-sample clipping with Gaussian noise,
//! mini-batch training loops and binary classification metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelParams};
use crate::seed::mix;

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 8;

/// Adam with bias correction. Weight decay is folded into the gradient by
/// the loss, not applied here.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam state has {} entries, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient component {i} is {}",
                grad[i]
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Noise settings for differentially private local training.
///
/// `epsilon` is a noise multiplier: larger means noisier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::Domain(format!(
                "clip norm {} must be > 0",
                self.clip
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "noise level {} must be >= 0",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Rescales `g` onto the L2 ball of radius `clip` if it lies outside.
pub fn clip_gradient(g: &[f64], clip: f64) -> Vec<f64> {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= clip || norm == 0.0 {
        return g.to_vec();
    }
    let scale = clip / norm;
    g.iter().map(|x| x * scale).collect()
}

/// Clips each per-sample gradient, sums them, adds `N(0, (ε·C)²)` noise per
/// coordinate and divides by the batch size.
pub fn dp_batch_grad<R: Rng + ?Sized>(
    per_sample: &[Vec<f64>],
    dp: &DpConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    dp.validate()?;
    let first = per_sample
        .first()
        .ok_or_else(|| Error::Contract("no per-sample gradients".into()))?;
    let mut sum = vec![0.0; first.len()];
    for g in per_sample {
        if g.len() != sum.len() {
            return Err(Error::Contract(
                "per-sample gradients differ in length".into(),
            ));
        }
        for (acc, c) in sum.iter_mut().zip(clip_gradient(g, dp.clip)) {
            *acc += c;
        }
    }
    let sigma = dp.epsilon * dp.clip;
    let b = per_sample.len() as f64;
    if sigma > 0.0 {
        for acc in sum.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *acc += sigma * n;
        }
    }
    Ok(sum.into_iter().map(|s| s / b).collect())
}

/// Runs `epochs` passes of mini-batch Adam over `data`.
///
/// Each epoch is shuffled by a generator seeded from `seed`. With `dp`, every
/// sample's gradient is computed on its own and passed through
/// [`dp_batch_grad`]. Returns the updated parameters and the mean loss over
/// the last epoch; with zero epochs the loss is evaluated at the input
/// parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_local(
    classifier: &Classifier,
    params: &ModelParams,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    opt: &mut AdamState,
    dp: Option<&DpConfig>,
    seed: u64,
) -> Result<(ModelParams, f64)> {
    if data.is_empty() {
        return Err(Error::Contract(format!("dataset {} is empty", data.name)));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be >= 1".into()));
    }
    if let Some(dp) = dp {
        dp.validate()?;
    }
    classifier.check_params(params)?;
    let mut params = params.clone();
    if epochs == 0 {
        let all: Vec<&ImageSample> = data.samples.iter().collect();
        let loss = classifier.loss(&params, &all, opt.weight_decay)?;
        return Ok((params, loss));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = dp.map(|d| ChaCha8Rng::seed_from_u64(mix(&[d.rng_seed, seed])));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut flat = params.to_flat();
    let mut epoch_loss = 0.0;
    for _ in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&ImageSample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let (loss, grad) = match (dp, noise_rng.as_mut()) {
                (Some(dp), Some(rng)) => {
                    let per_sample = batch
                        .par_iter()
                        .map(|s| {
                            classifier.loss_and_grad(
                                &params,
                                std::slice::from_ref(s),
                                opt.weight_decay,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
                    let grads: Vec<Vec<f64>> = per_sample.into_iter().map(|(_, g)| g).collect();
                    (loss, dp_batch_grad(&grads, dp, rng)?)
                }
                _ => classifier.loss_and_grad(&params, &batch, opt.weight_decay)?,
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss}")));
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(&mut flat, &grad)?;
            params.set_flat(&flat)?;
        }
        epoch_loss = loss_sum / data.len() as f64;
    }
    Ok((params, epoch_loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    /// `None` when the evaluated labels contain a single class.
    pub auc: Option<f64>,
    pub roc_points: Vec<(f64, f64)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion-matrix metrics from scores; a score `>= threshold` is positive.
pub fn metrics_from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let (auc, roc_points) = match roc_auc(scores, labels) {
        Ok((a, pts)) => (Some(a), pts),
        Err(_) => (None, Vec::new()),
    };
    Ok(MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
        specificity: ratio(tn, tn + fp),
        sensitivity: recall,
        auc,
        roc_points,
    })
}

pub fn evaluate(
    classifier: &Classifier,
    params: &ModelParams,
    data: &Dataset,
    threshold: f64,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Contract(format!("dataset {} is empty", data.name)));
    }
    let scores = data
        .samples
        .par_iter()
        .map(|s| Ok(classifier.forward(params, &s.image)?.probability))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
    metrics_from_scores(&scores, &labels, threshold)
}

/// Mann–Whitney AUC (ties count one half) and the ROC curve swept over every
/// distinct score, from `(0,0)` to `(1,1)`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<(f64, f64)>)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain("ROC AUC needs both classes".into()));
    }

    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Rank-sum over ascending scores, tied groups share their mean rank.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j + 1) as f64 / 2.0;
        let pos_in_group = idx[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += mean_rank * pos_in_group as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let auc = u / (n_pos as f64 * n_neg as f64);

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = idx.len();
    while k > 0 {
        let s = scores[idx[k - 1]];
        while k > 0 && scores[idx[k - 1]] == s {
            if labels[idx[k - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok((auc, points))
}
