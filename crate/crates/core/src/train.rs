//! Supervised training of the forward model with BPTT and Adam.
//!
//! The loss of one sequence is the mean squared readout error over the
//! supervised steps plus a firing-rate penalty
//! `reg * sum_j (f_j - target_rate)^2`, where `f_j` is neuron `j`'s mean spike
//! count per step. Batch gradients are averaged in sample order.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::encoding::{aggregate_prediction, prediction_to_pose, EncodedSample};
use crate::grad::{backward, GradError, GradientSet, LossGrad};
use crate::matrix::Matrix;
use crate::model::{pose_metrics, ErrorStats, ForwardModel};
use crate::network::{forward, NetworkError, SpikeTape};
use crate::optim::{Hyper, OptimError, OptimizerKind, OptimizerState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("dataset does not match the model: {0}")]
    Mismatch(String),
    #[error("training diverged at update {update} (loss {loss})")]
    Diverged {
        update: u64,
        loss: f64,
        last_good: Box<Checkpoint>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub reg_factor: f64,
    pub target_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr0: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 10_000,
            reg_factor: 1e-3,
            target_rate: 0.02,
            epochs: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn decay_factor(&self, update: u64) -> f64 {
        self.lr_decay.powi((update / self.lr_decay_every) as i32)
    }

    /// Learning rate used for update number `update` (0-based).
    pub fn lr_at(&self, update: u64) -> f64 {
        self.lr0 * self.decay_factor(update)
    }

    pub fn reg_at(&self, update: u64) -> f64 {
        self.reg_factor * self.decay_factor(update)
    }

    pub fn batches_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size)
    }
}

/// Loss of one or more sequences with its parts and weight gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub mse: f64,
    pub rate_penalty: f64,
    pub mean_rate: f64,
    pub grads: GradientSet,
}

/// dE/dy of the masked MSE and its value.
pub fn readout_loss(y: &Matrix, sample: &EncodedSample) -> (f64, Matrix) {
    let n_out = y.cols();
    let supervised = sample.output_mask.iter().filter(|&&m| m).count();
    let denom = (supervised * n_out) as f64;
    let mut g = Matrix::zeros(y.rows(), n_out);
    let mut mse = 0.0;
    for (t, _) in sample.output_mask.iter().enumerate().filter(|(_, &m)| m) {
        let target = sample.step_target(t);
        for k in 0..n_out {
            let d = y[(t, k)] - target[k];
            mse += d * d;
            g[(t, k)] = 2.0 * d / denom;
        }
    }
    (mse / denom, g)
}

/// Per-neuron rate penalty and its direct spike gradient.
pub fn rate_penalty(z: &Matrix, reg: f64, target_rate: f64) -> (f64, Matrix) {
    let steps = z.rows() as f64;
    let mut rates = vec![0.0; z.cols()];
    for t in 0..z.rows() {
        for (r, s) in rates.iter_mut().zip(z.row(t)) {
            *r += s;
        }
    }
    rates.iter_mut().for_each(|r| *r /= steps);
    let penalty = reg * rates.iter().map(|f| (f - target_rate).powi(2)).sum::<f64>();
    let per_neuron: Vec<f64> = rates.iter().map(|f| 2.0 * reg * (f - target_rate) / steps).collect();
    let g = Matrix::from_fn(z.rows(), z.cols(), |_, j| per_neuron[j]);
    (penalty, g)
}

pub fn sample_loss_and_grad(
    model: &ForwardModel,
    sample: &EncodedSample,
    reg: f64,
    target_rate: f64,
) -> Result<LossOutput, TrainError> {
    let tape = forward(&sample.inputs, &model.weights, &model.neuron, &model.topology)?;
    loss_from_tape(model, &tape, sample, reg, target_rate)
}

fn loss_from_tape(
    model: &ForwardModel,
    tape: &SpikeTape,
    sample: &EncodedSample,
    reg: f64,
    target_rate: f64,
) -> Result<LossOutput, TrainError> {
    let (mse, g_y) = readout_loss(&tape.state.y, sample);
    let (rate_penalty, g_z) = rate_penalty(&tape.state.z, reg, target_rate);
    let lg = LossGrad {
        readout: g_y,
        spikes: (reg != 0.0).then_some(g_z),
    };
    let grads = backward(tape, &model.weights, &model.neuron, &model.topology, &lg)?;
    Ok(LossOutput {
        loss: mse + rate_penalty,
        mse,
        rate_penalty,
        mean_rate: tape.mean_rate(),
        grads,
    })
}

/// Batch-mean loss and gradients; samples run in parallel and are reduced in order.
pub fn loss_and_grad(
    model: &ForwardModel,
    batch: &[EncodedSample],
    reg: f64,
    target_rate: f64,
) -> Result<LossOutput, TrainError> {
    assert!(!batch.is_empty(), "empty batch");
    let steps = batch[0].steps();
    if batch.iter().any(|s| s.steps() != steps) {
        return Err(TrainError::Mismatch("batch mixes sequence lengths".into()));
    }
    let parts: Vec<LossOutput> = batch
        .par_iter()
        .map(|s| sample_loss_and_grad(model, s, reg, target_rate))
        .collect::<Result<_, _>>()?;
    let w = 1.0 / batch.len() as f64;
    let mut grads = GradientSet::zeros(&model.topology, 0);
    let (mut loss, mut mse, mut pen, mut rate) = (0.0, 0.0, 0.0, 0.0);
    for p in &parts {
        grads.accumulate_weights(&p.grads, w);
        loss += p.loss * w;
        mse += p.mse * w;
        pen += p.rate_penalty * w;
        rate += p.mean_rate * w;
    }
    Ok(LossOutput {
        loss,
        mse,
        rate_penalty: pen,
        mean_rate: rate,
        grads,
    })
}

/// Flattened `[w_in, w_rec, w_out]`.
pub fn flatten_weights(model: &ForwardModel) -> Vec<f64> {
    let w = &model.weights;
    [w.w_in.as_slice(), w.w_rec.as_slice(), w.w_out.as_slice()].concat()
}

pub fn unflatten_weights(model: &mut ForwardModel, flat: &[f64]) {
    let w = &mut model.weights;
    let (a, rest) = flat.split_at(w.w_in.as_slice().len());
    let (b, c) = rest.split_at(w.w_rec.as_slice().len());
    w.w_in.as_mut_slice().copy_from_slice(a);
    w.w_rec.as_mut_slice().copy_from_slice(b);
    w.w_out.as_mut_slice().copy_from_slice(c);
}

fn flatten_grads(g: &GradientSet, n_hidden: usize) -> Vec<f64> {
    let mut rec = g.g_rec.clone();
    // no self-connections
    for j in 0..n_hidden {
        rec[(j, j)] = 0.0;
    }
    [g.g_in.as_slice(), rec.as_slice(), g.g_out.as_slice()].concat()
}

/// Error summary of a model over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Per joint (end-effector last): position errors in mm.
    pub position_mm: Vec<ErrorStats>,
    pub rotation_deg: Vec<ErrorStats>,
    /// End-effector position errors in normalized units.
    pub end_effector_normalized: ErrorStats,
    pub normalization: f64,
}

impl Evaluation {
    pub fn end_effector_position(&self) -> &ErrorStats {
        self.position_mm.last().expect("at least one joint")
    }

    pub fn end_effector_rotation(&self) -> &ErrorStats {
        self.rotation_deg.last().expect("at least one joint")
    }
}

pub fn evaluate(model: &ForwardModel, data: &Dataset) -> Result<Evaluation, TrainError> {
    if data.spec != model.spec {
        return Err(TrainError::Mismatch(format!("dataset arm {:?} vs model arm {:?}", data.spec, model.spec)));
    }
    let n = model.spec.n_joints;
    let per_sample: Vec<Vec<(f64, f64)>> = data
        .samples
        .par_iter()
        .map(|s| -> Result<Vec<(f64, f64)>, TrainError> {
            let tape = model.run(&s.gears)?;
            Ok((0..n)
                .map(|k| {
                    let pred = prediction_to_pose(&aggregate_prediction(&tape.state.y, k), model.normalization);
                    pose_metrics(&s.poses[k], &pred)
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let column = |k: usize, rot: bool| -> Vec<f64> {
        per_sample
            .iter()
            .map(|r| if rot { r[k].1 } else { r[k].0 })
            .collect()
    };
    let ee_norm: Vec<f64> = column(n - 1, false).iter().map(|e| e / model.normalization).collect();
    Ok(Evaluation {
        position_mm: (0..n).map(|k| ErrorStats::from_values(&column(k, false))).collect(),
        rotation_deg: (0..n).map(|k| ErrorStats::from_values(&column(k, true))).collect(),
        end_effector_normalized: ErrorStats::from_values(&ee_norm),
        normalization: model.normalization,
    })
}

/// One row of the metrics history, written after every epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub update: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Median end-effector errors on the test set (NaN without one).
    pub test_pos_mm: f64,
    pub test_rot_deg: f64,
}

pub const METRICS_HEADER: &str = "update,epoch,lr,loss,test_pos_mm,test_rot_deg";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.update, r.epoch, r.lr, r.loss, r.test_pos_mm, r.test_rot_deg
        )?;
    }
    Ok(())
}

/// Fresh training state: a randomly initialized model and an empty Adam state.
pub fn initial_checkpoint(data: &Dataset, n_hidden: usize, config: TrainConfig) -> Result<Checkpoint, TrainError> {
    let model = ForwardModel::init(&data.spec, n_hidden, data.normalization, config.seed)?;
    let n_params = model.weights.param_count();
    Ok(Checkpoint {
        model,
        config,
        updates: 0,
        optimizer: OptimizerState::new(OptimizerKind::Adam, Hyper::with_eta(config.lr0), n_params),
        epoch_loss_sum: 0.0,
        history: Vec::new(),
    })
}

/// Shuffled sample order of `epoch`; depends only on the seed.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// What a [`train`] hook observes.
pub enum TrainEvent<'a> {
    Update { update: u64, loss: f64, state: &'a Checkpoint },
    Epoch { row: MetricsRow, state: &'a Checkpoint },
}

/// Continues training `state` until `state.config.epochs` epochs are complete.
///
/// Sample order depends only on the seed and epoch, so a run resumed from any
/// checkpoint reproduces the uninterrupted run exactly.
pub fn train(
    mut state: Checkpoint,
    data: &Dataset,
    test: Option<&Dataset>,
    mut hook: impl FnMut(TrainEvent<'_>),
) -> Result<Checkpoint, TrainError> {
    data.check_spec(&state.model.spec)
        .map_err(|e| TrainError::Mismatch(e.to_string()))?;
    if let Some(t) = test {
        t.check_spec(&state.model.spec)
            .map_err(|e| TrainError::Mismatch(e.to_string()))?;
    }
    let cfg = state.config;
    let per_epoch = cfg.batches_per_epoch(data.len()) as u64;
    let mut params = flatten_weights(&state.model);
    let mut last_good = state.clone();

    while state.updates < per_epoch * cfg.epochs as u64 {
        let epoch = (state.updates / per_epoch) as usize;
        let in_epoch = (state.updates % per_epoch) as usize;
        let order = epoch_order(cfg.seed, epoch, data.len());
        let chunk = &order[in_epoch * cfg.batch_size..((in_epoch + 1) * cfg.batch_size).min(order.len())];
        let batch: Vec<EncodedSample> = chunk.iter().map(|&i| data.encode(i)).collect();

        let update = state.updates;
        let out = loss_and_grad(&state.model, &batch, cfg.reg_at(update), cfg.target_rate)?;
        if !out.loss.is_finite() {
            return Err(TrainError::Diverged {
                update,
                loss: out.loss,
                last_good: Box::new(last_good),
            });
        }
        let g = flatten_grads(&out.grads, state.model.topology.n_hidden);
        state.optimizer.set_eta(cfg.lr_at(update));
        state.optimizer.step(&mut params, &g)?;
        unflatten_weights(&mut state.model, &params);
        state.updates += 1;
        state.epoch_loss_sum += out.loss;

        if state.updates % per_epoch == 0 {
            let (pos, rot) = match test {
                Some(t) => {
                    let ev = evaluate(&state.model, t)?;
                    (ev.end_effector_position().median, ev.end_effector_rotation().median)
                }
                None => (f64::NAN, f64::NAN),
            };
            let row = MetricsRow {
                update: state.updates,
                epoch: epoch + 1,
                lr: cfg.lr_at(update),
                loss: state.epoch_loss_sum / per_epoch as f64,
                test_pos_mm: pos,
                test_rot_deg: rot,
            };
            state.history.push(row);
            state.epoch_loss_sum = 0.0;
            hook(TrainEvent::Epoch { row, state: &state });
        }
        hook(TrainEvent::Update {
            update,
            loss: out.loss,
            state: &state,
        });
        last_good = state.clone();
    }
    Ok(state)
}

/// Mean loss of the whole dataset, without regularization.
pub fn dataset_mse(model: &ForwardModel, data: &Dataset) -> Result<f64, TrainError> {
    let losses: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.encode(i);
            let tape = forward(&s.inputs, &model.weights, &model.neuron, &model.topology)?;
            Ok(readout_loss(&tape.state.y, &s).0)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
