//! ADAM training loop over length-bucketed batches, plus checkpoints.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::neuralnet::{ParameterStore, Tensor};
use crate::regressor::{normalize_input, LossBreakdown, RegressorConfig, RegressorModel};
use crate::simulator::{stream_rng, LabeledSample};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const INIT_STREAM: u64 = 0x494E_4954;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_per_round: usize,
    pub rounds: usize,
    pub alpha: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale gradients whose global L2 norm exceeds this value. Off when `None`.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs_per_round: 50,
            rounds: 1,
            alpha: 1.0,
            seed: 0,
            shuffle: true,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs_per_round == 0 || self.rounds == 0 {
            return Err(Error::Config(
                "batch_size, epochs_per_round and rounds must be at least 1".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("ADAM betas must lie in [0, 1)".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("clip_grad_norm must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_per_round * self.rounds
    }
}

/// A model with freshly initialised parameters drawn from `seed`.
pub fn fresh_model(config: &RegressorConfig, seed: u64) -> Result<RegressorModel> {
    let mut model = RegressorModel::new(config.clone())?;
    model.init(&mut stream_rng(seed, 0, 0, INIT_STREAM));
    Ok(model)
}

/// First/second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParameterStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }
}

/// Bias-corrected ADAM update using the gradients currently in `store`.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            expected: vec![store.len()],
            got: vec![state.m.len()],
        });
    }
    for (name, g) in store.names().iter().zip(store.grads()) {
        g.ensure_finite(&format!("ADAM input gradient {name}"))?;
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let (params, grads) = store.params_and_grads_mut();
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if p.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                expected: p.shape().to_vec(),
                got: m.shape().to_vec(),
            });
        }
        for (((w, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.ensure_finite("ADAM update")?;
    }
    Ok(())
}

/// Groups sample indices by sequence length, shuffles within each group,
/// chunks to at most `batch_size`, and (when shuffling) permutes the batch
/// order. Every index appears exactly once.
pub fn make_batches<R: Rng + ?Sized>(
    lengths: &[usize],
    batch_size: usize,
    rng: Option<&mut R>,
) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &n) in lengths.iter().enumerate() {
        groups.entry(n).or_default().push(i);
    }
    let mut batches = Vec::new();
    match rng {
        Some(rng) => {
            for group in groups.values_mut() {
                group.shuffle(rng);
                batches.extend(group.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
            }
            batches.shuffle(rng);
        }
        None => {
            for group in groups.values() {
                batches.extend(group.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
            }
        }
    }
    batches
}

fn global_grad_norm(store: &ParameterStore) -> f64 {
    store
        .grads()
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Stateful training run that can be advanced epoch by epoch and resumed.
pub struct Trainer {
    pub model: RegressorModel,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub epoch: usize,
    pub history: Vec<LossBreakdown>,
    inputs: Vec<Tensor>,
    labels: Vec<CameraPose>,
    lengths: Vec<usize>,
}

impl Trainer {
    pub fn new(
        model: RegressorModel,
        samples: &[LabeledSample],
        k: &CameraIntrinsics,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let inputs = samples
            .iter()
            .map(|s| normalize_input(&s.trajectory, k))
            .collect::<Result<Vec<_>>>()?;
        let adam = AdamState::new(model.store(), &cfg);
        Ok(Self {
            model,
            adam,
            cfg,
            epoch: 0,
            history: Vec::new(),
            lengths: samples.iter().map(|s| s.trajectory.len()).collect(),
            labels: samples.iter().map(|s| s.pose).collect(),
            inputs,
        })
    }

    /// Continues from a previous state (e.g. a checkpoint).
    pub fn resume(
        mut self,
        adam: AdamState,
        epoch: usize,
        history: Vec<LossBreakdown>,
    ) -> Result<Self> {
        if adam.m.len() != self.model.store().len() {
            return Err(Error::InvalidArgument(
                "optimizer state does not match the model".into(),
            ));
        }
        self.adam = adam;
        self.epoch = epoch;
        self.history = history;
        Ok(self)
    }

    /// One pass over the data; returns the sample-weighted mean loss.
    pub fn run_epoch(&mut self) -> Result<LossBreakdown> {
        let epoch = self.epoch;
        let batches = if self.cfg.shuffle {
            let mut rng = stream_rng(self.cfg.seed, epoch as u64, 0, SHUFFLE_STREAM);
            make_batches(&self.lengths, self.cfg.batch_size, Some(&mut rng))
        } else {
            make_batches::<rand_chacha::ChaCha8Rng>(&self.lengths, self.cfg.batch_size, None)
        };
        let total = self.lengths.len() as f64;
        let mut mean = LossBreakdown {
            alpha: self.cfg.alpha,
            ..LossBreakdown::default()
        };
        for (b, idx) in batches.iter().enumerate() {
            let at = |e: Error| match e {
                Error::NumericFailure(msg) => {
                    Error::NumericFailure(format!("epoch {epoch}, batch {b}: {msg}"))
                }
                other => other,
            };
            let inputs: Vec<&Tensor> = idx.iter().map(|&i| &self.inputs[i]).collect();
            let labels: Vec<&CameraPose> = idx.iter().map(|&i| &self.labels[i]).collect();
            let l = self
                .model
                .backward_normalized(&inputs, &labels, self.cfg.alpha)
                .map_err(at)?;
            if let Some(limit) = self.cfg.clip_grad_norm {
                let norm = global_grad_norm(self.model.store());
                if norm > limit {
                    let s = limit / norm;
                    for g in self.model.store_mut().grads_mut() {
                        g.data_mut().iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
            adam_step(self.model.store_mut(), &mut self.adam).map_err(at)?;
            let w = idx.len() as f64 / total;
            mean.total += l.total * w;
            mean.location += l.location * w;
            mean.orientation += l.orientation * w;
        }
        if !mean.total.is_finite() {
            return Err(Error::NumericFailure(format!(
                "epoch {epoch}: non-finite mean loss"
            )));
        }
        self.epoch += 1;
        self.history.push(mean);
        Ok(mean)
    }

    pub fn run_epochs(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.run_epoch()?;
        }
        Ok(())
    }
}

/// Trains for `cfg.total_epochs()` epochs and returns the model together
/// with one mean loss per epoch.
pub fn train(
    model: RegressorModel,
    samples: &[LabeledSample],
    k: &CameraIntrinsics,
    cfg: &TrainConfig,
) -> Result<(RegressorModel, Vec<LossBreakdown>)> {
    let mut trainer = Trainer::new(model, samples, k, *cfg)?;
    trainer.run_epochs(cfg.total_epochs())?;
    Ok((trainer.model, trainer.history))
}
