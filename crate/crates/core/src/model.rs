//! Hybrid patch classifier: one shared tensor-network circuit evaluated on
//! every image patch, followed by a dense or global-average-pooling head.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Image, ImageSample};
use crate::error::{Error, Result};
use crate::qsim::{param_shift_grad, run_circuit};
use crate::qtn::{self, encode_pixels, BlockKind, CircuitTemplate, TopologyKind};

/// Predicted probabilities are kept inside `[PROB_FLOOR, 1 − PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Dense,
    Gap,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// `sigmoid(w · z + b)`.
    Dense { weights: Vec<f64>, bias: f64 },
    /// `(1 + mean z) / 2`, no parameters.
    Gap,
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Dense { .. } => HeadKind::Dense,
            Head::Gap => HeadKind::Gap,
        }
    }

    fn n_params(&self) -> usize {
        match self {
            Head::Dense { weights, .. } => weights.len() + 1,
            Head::Gap => 0,
        }
    }
}

/// Everything that fixes the shape of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub topology: TopologyKind,
    pub block: BlockKind,
    pub patch_side: usize,
    pub n_patches: usize,
    pub head: HeadKind,
}

impl Architecture {
    pub fn n_qubits(&self) -> usize {
        self.patch_side * self.patch_side
    }
}

/// Trainable state of a classifier, exchanged between clients and server.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub quantum: Vec<f64>,
    pub head: Head,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.quantum.len() + self.head.n_params()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quantum angles, then head weights, then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.quantum.clone();
        if let Head::Dense { weights, bias } = &self.head {
            v.extend_from_slice(weights);
            v.push(*bias);
        }
        v
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Contract(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.len()
            )));
        }
        let nq = self.quantum.len();
        self.quantum.copy_from_slice(&flat[..nq]);
        if let Head::Dense { weights, bias } = &mut self.head {
            let nw = weights.len();
            weights.copy_from_slice(&flat[nq..nq + nw]);
            *bias = flat[nq + nw];
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub patch_expectations: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A built circuit plus the head wiring for a fixed [`Architecture`].
#[derive(Debug, Clone)]
pub struct Classifier {
    arch: Architecture,
    template: CircuitTemplate,
}

impl Classifier {
    pub fn new(arch: Architecture) -> Result<Self> {
        if arch.n_patches == 0 {
            return Err(Error::Contract(
                "classifier needs at least one patch".into(),
            ));
        }
        let template = qtn::build(arch.topology, arch.n_qubits(), arch.block)?;
        Ok(Self { arch, template })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn template(&self) -> &CircuitTemplate {
        &self.template
    }

    /// Total trainable parameter count (circuit + head).
    pub fn n_params(&self) -> usize {
        self.template.param_count()
            + match self.arch.head {
                HeadKind::Dense => self.arch.n_patches + 1,
                HeadKind::Gap => 0,
            }
    }

    /// Angles uniform on `(−π, π]`; dense weights Glorot-uniform, bias 0.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quantum = (0..self.template.param_count())
            .map(|_| PI - 2.0 * PI * rng.gen::<f64>())
            .collect();
        let head = match self.arch.head {
            HeadKind::Gap => Head::Gap,
            HeadKind::Dense => {
                let limit = (6.0 / (self.arch.n_patches as f64 + 1.0)).sqrt();
                Head::Dense {
                    weights: (0..self.arch.n_patches)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect(),
                    bias: 0.0,
                }
            }
        };
        ModelParams {
            arch: self.arch,
            quantum,
            head,
        }
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.arch != self.arch {
            return Err(Error::Contract(format!(
                "parameters built for {:?}, classifier is {:?}",
                params.arch, self.arch
            )));
        }
        if params.quantum.len() != self.template.param_count() {
            return Err(Error::Contract(format!(
                "{} circuit angles, template needs {}",
                params.quantum.len(),
                self.template.param_count()
            )));
        }
        match (&params.head, self.arch.head) {
            (Head::Gap, HeadKind::Gap) => Ok(()),
            (Head::Dense { weights, .. }, HeadKind::Dense)
                if weights.len() == self.arch.n_patches =>
            {
                Ok(())
            }
            _ => Err(Error::Contract(
                "head payload does not match architecture".into(),
            )),
        }
    }

    fn patches_of(&self, image: &Image) -> Result<Vec<Vec<f64>>> {
        let patches = image.patches(self.arch.patch_side)?;
        if patches.len() != self.arch.n_patches {
            return Err(Error::Contract(format!(
                "{}x{} image yields {} patches, model expects {}",
                image.height(),
                image.width(),
                patches.len(),
                self.arch.n_patches
            )));
        }
        Ok(patches)
    }

    fn patch_expectation(&self, params: &ModelParams, patch: &[f64]) -> Result<f64> {
        let state = run_circuit(&encode_pixels(patch)?, &self.template.seq, &params.quantum)?;
        state.expectation_z(self.template.readout_qubit)
    }

    /// Unclamped head output and its derivative with respect to each `z_k`
    /// (and, for the dense head, the pre-activation derivative).
    fn head_output(head: &Head, z: &[f64]) -> (f64, f64) {
        match head {
            Head::Dense { weights, bias } => {
                let s = weights.iter().zip(z).map(|(w, z)| w * z).sum::<f64>() + bias;
                let p = sigmoid(s);
                (p, p * (1.0 - p))
            }
            Head::Gap => ((1.0 + z.iter().sum::<f64>() / z.len() as f64) / 2.0, 0.0),
        }
    }

    pub fn forward(&self, params: &ModelParams, image: &Image) -> Result<Prediction> {
        self.check_params(params)?;
        let patch_expectations = self
            .patches_of(image)?
            .iter()
            .map(|p| self.patch_expectation(params, p))
            .collect::<Result<Vec<_>>>()?;
        let (raw, _) = Self::head_output(&params.head, &patch_expectations);
        Ok(Prediction {
            probability: raw.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR),
            patch_expectations,
        })
    }

    /// Mean binary cross-entropy over `batch` plus `(λ/2)‖θ‖²`.
    pub fn loss(
        &self,
        params: &ModelParams,
        batch: &[&ImageSample],
        weight_decay: f64,
    ) -> Result<f64> {
        check_batch(batch)?;
        let bce = batch
            .par_iter()
            .map(|s| Ok(bce(self.forward(params, &s.image)?.probability, s.label)))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum::<f64>()
            / batch.len() as f64;
        Ok(bce + decay_term(params, weight_decay))
    }

    /// Loss as in [`Classifier::loss`] and its gradient over the flat
    /// parameter vector (see [`ModelParams::to_flat`]).
    ///
    /// Circuit angles are shared by all patches, so their gradient is the sum
    /// of per-patch parameter-shift gradients weighted by `∂p/∂z_k`.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        batch: &[&ImageSample],
        weight_decay: f64,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        check_batch(batch)?;
        let per_sample = batch
            .par_iter()
            .map(|s| self.sample_loss_and_grad(params, s))
            .collect::<Result<Vec<_>>>()?;

        let n = params.len();
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in per_sample {
            loss += l;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        loss /= b;
        let flat = params.to_flat();
        for (g, p) in grad.iter_mut().zip(&flat) {
            *g = *g / b + weight_decay * p;
        }
        Ok((loss + decay_term(params, weight_decay), grad))
    }

    fn sample_loss_and_grad(
        &self,
        params: &ModelParams,
        sample: &ImageSample,
    ) -> Result<(f64, Vec<f64>)> {
        let patches = self.patches_of(&sample.image)?;
        let readout = self.template.readout_qubit;
        let mut z = Vec::with_capacity(patches.len());
        let mut dz = Vec::with_capacity(patches.len());
        for patch in &patches {
            let input = encode_pixels(patch)?;
            let out = run_circuit(&input, &self.template.seq, &params.quantum)?;
            z.push(out.expectation_z(readout)?);
            dz.push(param_shift_grad(
                &self.template.seq,
                &params.quantum,
                &input,
                readout,
            )?);
        }

        let (raw, dsig) = Self::head_output(&params.head, &z);
        let p = raw.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let y = sample.label as f64;
        let loss = bce(p, sample.label);
        // the clamp is flat outside the interval
        let dl_dp = if raw == p {
            -(y / p) + (1.0 - y) / (1.0 - p)
        } else {
            0.0
        };

        let nq = params.quantum.len();
        let mut grad = vec![0.0; params.len()];
        let dp_dz: Vec<f64> = match &params.head {
            Head::Dense { weights, .. } => {
                let dl_ds = dl_dp * dsig;
                for (k, zk) in z.iter().enumerate() {
                    grad[nq + k] = dl_ds * zk;
                }
                grad[nq + weights.len()] = dl_ds;
                weights.iter().map(|w| dsig * w).collect()
            }
            Head::Gap => vec![0.5 / z.len() as f64; z.len()],
        };
        for (dzk, &w) in dz.iter().zip(&dp_dz) {
            let scale = dl_dp * w;
            for (g, d) in grad[..nq].iter_mut().zip(dzk) {
                *g += scale * d;
            }
        }
        Ok((loss, grad))
    }
}

fn check_batch(batch: &[&ImageSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.label > 1) {
        return Err(Error::Domain(format!(
            "sample {} has label {}",
            s.id, s.label
        )));
    }
    Ok(())
}

fn bce(p: f64, label: u8) -> f64 {
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn decay_term(params: &ModelParams, weight_decay: f64) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    0.5 * weight_decay * params.to_flat().iter().map(|v| v * v).sum::<f64>()
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// On-disk model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub topology: TopologyKind,
    /// `"simple"` or `"strong"`.
    pub block: String,
    pub layers: usize,
    pub n_qubits: usize,
    pub patch_side: usize,
    pub n_patches: usize,
    pub head_kind: HeadKind,
    pub quantum: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let a = &params.arch;
        let (block, layers) = match a.block {
            BlockKind::Simple => ("simple", 1),
            BlockKind::StronglyEntangling { layers } => ("strong", layers),
        };
        let (head_weights, head_bias) = match &params.head {
            Head::Dense { weights, bias } => (weights.clone(), *bias),
            Head::Gap => (Vec::new(), 0.0),
        };
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            topology: a.topology,
            block: block.into(),
            layers,
            n_qubits: a.n_qubits(),
            patch_side: a.patch_side,
            n_patches: a.n_patches,
            head_kind: a.head,
            quantum: params.quantum.clone(),
            head_weights,
            head_bias,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let block = match self.block.as_str() {
            "simple" => BlockKind::Simple,
            "strong" => BlockKind::StronglyEntangling {
                layers: self.layers,
            },
            other => return Err(Error::Format(format!("unknown block `{other}`"))),
        };
        if self.patch_side * self.patch_side != self.n_qubits {
            return Err(Error::Format(format!(
                "n_qubits {} is not patch_side² for side {}",
                self.n_qubits, self.patch_side
            )));
        }
        let arch = Architecture {
            topology: self.topology,
            block,
            patch_side: self.patch_side,
            n_patches: self.n_patches,
            head: self.head_kind,
        };
        let head = match self.head_kind {
            HeadKind::Gap => Head::Gap,
            HeadKind::Dense => Head::Dense {
                weights: self.head_weights.clone(),
                bias: self.head_bias,
            },
        };
        let params = ModelParams {
            arch,
            quantum: self.quantum.clone(),
            head,
        };
        Classifier::new(arch)?.check_params(&params)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
