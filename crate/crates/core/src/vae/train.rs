use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::grad::backward;
use super::model::{forward, ForwardTrace, ModelParams};
use super::objective::{objective_loss, LossBreakdown, ObjectiveConfig};
use crate::matrix::Matrix;
use crate::rng::{self, NoiseKey, EVAL_STREAM, TRAIN_STREAM};
use crate::{Error, Result};

const SHUFFLE_PURPOSE: u64 = 0x7368_7566;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam state over a [`ModelParams`]-shaped parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    settings: AdamSettings,
    first: ModelParams,
    second: ModelParams,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams, settings: AdamSettings) -> Self {
        let zeros = ModelParams::zeros(&params.architecture());
        Self { settings, first: zeros.clone(), second: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let s = self.settings;
        let c1 = 1.0 - libm::pow(s.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(s.beta2, self.t as f64);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut().into_iter().zip(self.second.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
            for ((p, &g), (m, v)) in it {
                *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                *p -= s.learning_rate * (*m / c1) / (libm::sqrt(*v / c2) + s.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamSettings,
    pub seed: u64,
    /// Steps (0 = initialisation) at which the evaluation batch is traced.
    pub snapshot_steps: Vec<u64>,
}

impl TrainSettings {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            batch_size: 64,
            adam: AdamSettings::default(),
            seed,
            snapshot_steps: default_snapshot_schedule(steps),
        }
    }
}

/// Snapshot steps at {0, 1, 5, 10, 25, 50, 100}% of `total`, deduplicated.
pub fn default_snapshot_schedule(total: u64) -> Vec<u64> {
    let mut steps: Vec<u64> = [0u64, 1, 5, 10, 25, 50, 100].iter().map(|pct| total * pct / 100).collect();
    steps.dedup();
    steps
}

/// Receives the evaluation trace at each scheduled step.
pub trait SnapshotSink {
    type Error: From<Error>;
    fn snapshot(&mut self, step: u64, trace: &ForwardTrace, loss: &LossBreakdown) -> core::result::Result<(), Self::Error>;
}

/// Keeps every snapshot in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub snapshots: Vec<(u64, ForwardTrace, LossBreakdown)>,
}

impl SnapshotSink for MemorySink {
    type Error = Error;
    fn snapshot(&mut self, step: u64, trace: &ForwardTrace, loss: &LossBreakdown) -> Result<()> {
        self.snapshots.push((step, trace.clone(), loss.clone()));
        Ok(())
    }
}

/// Discards snapshots.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoSnapshots;

impl SnapshotSink for NoSnapshots {
    type Error = Error;
    fn snapshot(&mut self, _: u64, _: &ForwardTrace, _: &LossBreakdown) -> Result<()> {
        Ok(())
    }
}

/// Rows of `images` used for training and for the fixed evaluation batch.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub images: &'a Matrix,
    pub train_indices: &'a [usize],
    pub eval_indices: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Loss on the first training batch, before any update.
    pub initial_loss: Option<LossBreakdown>,
    /// Loss on the last training batch, before its update.
    pub final_loss: Option<LossBreakdown>,
}

/// Forward pass on the evaluation rows with fixed evaluation noise.
pub fn eval_trace(params: &ModelParams, images: &Matrix, eval_indices: &[usize], seed: u64) -> Result<ForwardTrace> {
    let batch = images.select_rows(eval_indices);
    let noise = NoiseKey::new(seed, EVAL_STREAM, 0).matrix(eval_indices, params.latent_dim());
    forward(params, &batch, &noise)
}

fn check_finite(loss: &LossBreakdown, step: u64) -> Result<()> {
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss { step, recon: loss.recon, penalty: loss.penalty });
    }
    Ok(())
}

/// Adam training with seeded shuffling and counter-keyed noise. Fully
/// deterministic in `(params, data, cfg, settings)`.
pub fn train<S: SnapshotSink>(
    mut params: ModelParams,
    data: TrainData<'_>,
    cfg: &ObjectiveConfig,
    settings: &TrainSettings,
    sink: &mut S,
) -> core::result::Result<TrainOutcome, S::Error> {
    cfg.validate()?;
    if data.train_indices.is_empty() || data.eval_indices.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 }.into());
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()).into());
    }
    let mut snapshots: Vec<u64> = settings.snapshot_steps.iter().copied().filter(|&s| s <= settings.steps).collect();
    snapshots.sort_unstable();
    snapshots.dedup();
    let mut next_snapshot = snapshots.iter().peekable();

    let take_snapshot = |step: u64, params: &ModelParams, sink: &mut S| -> core::result::Result<(), S::Error> {
        let trace = eval_trace(params, data.images, data.eval_indices, settings.seed)?;
        let loss = objective_loss(&trace, &trace.input, cfg, step)?;
        check_finite(&loss, step)?;
        sink.snapshot(step, &trace, &loss)
    };

    let batch_size = settings.batch_size.min(data.train_indices.len());
    let mut order: Vec<usize> = data.train_indices.to_vec();
    let mut shuffler = rng::seeded(settings.seed, SHUFFLE_PURPOSE);
    let mut cursor = order.len();
    let mut adam = Adam::new(&params, settings.adam);
    let mut outcome = TrainOutcome { params: params.clone(), initial_loss: None, final_loss: None };

    for step in 0..settings.steps {
        if next_snapshot.next_if(|&&s| s == step).is_some() {
            take_snapshot(step, &params, sink)?;
        }
        if cursor + batch_size > order.len() {
            order.shuffle(&mut shuffler);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch_size];
        cursor += batch_size;

        let batch = data.images.select_rows(rows);
        let noise = NoiseKey::new(settings.seed, TRAIN_STREAM, step).matrix(rows, params.latent_dim());
        let trace = forward(&params, &batch, &noise)?;
        let loss = objective_loss(&trace, &batch, cfg, step)?;
        check_finite(&loss, step)?;
        let grads = backward(&params, &trace, &batch, cfg, step)?;
        adam.step(&mut params, &grads);
        if outcome.initial_loss.is_none() {
            outcome.initial_loss = Some(loss.clone());
        }
        outcome.final_loss = Some(loss);
    }
    if next_snapshot.next_if(|&&s| s == settings.steps).is_some() {
        take_snapshot(settings.steps, &params, sink)?;
    }
    outcome.params = params;
    Ok(outcome)
}
