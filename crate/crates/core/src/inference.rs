//! Motor inference: moving the arm towards a goal pose by gradient descent on
//! the gear inputs of a trained forward model.
//!
//! Every iteration predicts the end-effector pose, compares it with a
//! corrected target, backpropagates the error through the spike tape onto the
//! inputs and sums the input gradient over each joint's window. The corrected
//! target adds the measured error of the real arm to the network's own
//! prediction:
//!
//! ```text
//! p_c = p_pred + gamma1 (p_goal - p_actual)
//! q_c = q_pred + gamma2 (q_goal - q_actual)
//! ```
//!
//! so a biased forward model still drives the real arm onto the goal.

use std::io::Write;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoding::{aggregate_prediction, output_steps, window, POSE_DIM};
use crate::grad::{input_gradient, GradError, LossGrad};
use crate::kinematics::{end_effector, project_in_place, sample_random_pose, ArmSpec, GearState, KinematicsError, Pose, GEARS_PER_JOINT};
use crate::matrix::Matrix;
use crate::model::{median, pose_metrics, ForwardModel};
use crate::network::NetworkError;
use crate::optim::{Hyper, OptimError, OptimizerKind, OptimizerState, StepSizeSchedule};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("start configuration does not fit the model: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Goal pose with correction gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceTarget {
    /// mm
    pub p_star: Vector3<f64>,
    pub q_star: UnitQuaternion<f64>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl InferenceTarget {
    pub fn new(goal: Pose) -> Self {
        Self {
            p_star: goal.p,
            q_star: goal.q,
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            p: self.p_star,
            q: self.q_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    pub optimizer: OptimizerKind,
    /// Initial step size (reset for every target).
    pub eta0: f64,
    pub max_iterations: usize,
    /// Early stop once the position error stays below `tolerance_mm` for `patience` iterations.
    pub tolerance_mm: f64,
    pub patience: usize,
    pub correction: bool,
    pub step_size_decay: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::SdAmsGrad,
            eta0: 0.1,
            max_iterations: 5000,
            tolerance_mm: 1.0,
            patience: 10,
            correction: true,
            step_size_decay: true,
        }
    }
}

/// Errors of the actual arm before one update, and the step size used for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub pos_err_mm: f64,
    pub rot_err_deg: f64,
    pub eta: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    pub gears: GearState,
    pub history: Vec<StepRecord>,
    pub final_pos_err_mm: f64,
    pub final_rot_err_deg: f64,
    pub converged: bool,
}

impl InferenceRun {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Sign flip of `q` into the hemisphere of `reference`.
fn align(q: Quaternion<f64>, reference: &Quaternion<f64>) -> Quaternion<f64> {
    if q.dot(reference) < 0.0 {
        -q
    } else {
        q
    }
}

/// Corrected target in network units `[p / norm, q]` (quaternion not renormalized).
pub fn corrected_target(
    prediction: &[f64; POSE_DIM],
    actual: &Pose,
    target: &InferenceTarget,
    normalization: f64,
    correction: bool,
) -> [f64; POSE_DIM] {
    let q_pred = Quaternion::new(prediction[3], prediction[4], prediction[5], prediction[6]);
    let q_goal = align(target.q_star.into_inner(), &q_pred);
    let mut out = [0.0; POSE_DIM];
    if correction {
        let q_act = align(actual.q.into_inner(), &q_pred);
        for c in 0..3 {
            out[c] = prediction[c] + target.gamma1 * (target.p_star[c] - actual.p[c]) / normalization;
        }
        let q = q_pred + (q_goal - q_act) * target.gamma2;
        out[3..].copy_from_slice(&[q.w, q.i, q.j, q.k]);
    } else {
        for c in 0..3 {
            out[c] = target.p_star[c] / normalization;
        }
        out[3..].copy_from_slice(&[q_goal.w, q_goal.i, q_goal.j, q_goal.k]);
    }
    out
}

/// Loss on the end-effector's window-mean prediction and its gradient w.r.t. the readouts.
pub fn inference_loss(readouts: &Matrix, n_joints: usize, goal: &[f64; POSE_DIM]) -> (f64, Matrix) {
    let k = n_joints - 1;
    let pred = aggregate_prediction(readouts, k);
    let steps = output_steps(k);
    let per_step = 1.0 / steps.len() as f64;
    let mut g = Matrix::zeros(readouts.rows(), readouts.cols());
    let mut loss = 0.0;
    for c in 0..POSE_DIM {
        let d = pred[c] - goal[c];
        loss += d * d / POSE_DIM as f64;
        for t in steps.clone() {
            g[(t, c)] = 2.0 * d / POSE_DIM as f64 * per_step;
        }
    }
    (loss, g)
}

/// dLoss/dgear: the input gradient summed over each joint's window, clock columns dropped.
pub fn gear_gradient(g_x: &Matrix, n_joints: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_joints * GEARS_PER_JOINT];
    for k in 0..n_joints {
        for t in window(k) {
            for c in 0..GEARS_PER_JOINT {
                out[k * GEARS_PER_JOINT + c] += g_x[(t, c)];
            }
        }
    }
    out
}

/// Loss and gear gradient of one configuration, with the current actual pose.
pub fn evaluate_gears(
    model: &ForwardModel,
    gears: &GearState,
    target: &InferenceTarget,
    correction: bool,
) -> Result<(f64, Vec<f64>, Pose), InferenceError> {
    let n = gears.n_joints();
    let tape = model.run(gears)?;
    let pred = aggregate_prediction(&tape.state.y, n - 1);
    let actual = end_effector(gears, &model.spec)?;
    let goal = corrected_target(&pred, &actual, target, model.normalization, correction);
    let (loss, g_y) = inference_loss(&tape.state.y, n, &goal);
    let g_x = input_gradient(&tape, &model.weights, &model.neuron, &model.topology, &LossGrad::readout_only(g_y))?;
    Ok((loss, gear_gradient(&g_x, n), actual))
}

/// Mutable state of one inference episode.
#[derive(Debug, Clone)]
pub struct InferenceSession<'a> {
    model: &'a ForwardModel,
    pub target: InferenceTarget,
    pub options: InferenceOptions,
    gears: Vec<f64>,
    optimizer: OptimizerState,
    schedule: StepSizeSchedule,
    iteration: usize,
}

impl<'a> InferenceSession<'a> {
    pub fn new(
        model: &'a ForwardModel,
        start: &GearState,
        target: InferenceTarget,
        options: InferenceOptions,
    ) -> Result<Self, InferenceError> {
        if start.n_joints() != model.spec.n_joints || start.variant() != model.spec.variant {
            return Err(InferenceError::Incompatible(format!(
                "{} {}-joint start for a {} {}-joint model",
                start.variant(),
                start.n_joints(),
                model.spec.variant,
                model.spec.n_joints
            )));
        }
        let len = start.as_slice().len();
        Ok(Self {
            model,
            target,
            options,
            gears: start.as_slice().to_vec(),
            optimizer: OptimizerState::new(options.optimizer, Hyper::with_eta(options.eta0), len),
            schedule: StepSizeSchedule::new(options.eta0),
            iteration: 0,
        })
    }

    pub fn gears(&self) -> GearState {
        GearState::projected(self.model.spec.variant, self.gears.clone())
    }

    /// One update; the record holds the errors before it.
    pub fn step(&mut self) -> Result<StepRecord, InferenceError> {
        let gears = self.gears();
        let (loss, grad, actual) = evaluate_gears(self.model, &gears, &self.target, self.options.correction)?;
        let (pos, rot) = pose_metrics(&actual, &self.target.pose());
        let eta = if self.options.step_size_decay {
            self.schedule.observe(pos)
        } else {
            self.options.eta0
        };
        self.optimizer.set_eta(eta);
        self.optimizer.step(&mut self.gears, &grad)?;
        project_in_place(self.model.spec.variant, &mut self.gears);
        let record = StepRecord {
            iteration: self.iteration,
            pos_err_mm: pos,
            rot_err_deg: rot,
            eta,
            loss,
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Current errors of the actual arm.
    pub fn errors(&self) -> Result<(f64, f64), InferenceError> {
        let actual = end_effector(&self.gears(), &self.model.spec)?;
        Ok(pose_metrics(&actual, &self.target.pose()))
    }
}

pub fn run_inference(
    model: &ForwardModel,
    start: &GearState,
    target: InferenceTarget,
    options: InferenceOptions,
) -> Result<InferenceRun, InferenceError> {
    let mut session = InferenceSession::new(model, start, target, options)?;
    let mut history = Vec::with_capacity(options.max_iterations.min(1 << 16));
    let mut below = 0;
    let mut converged = false;
    for _ in 0..options.max_iterations {
        let rec = session.step()?;
        below = if rec.pos_err_mm < options.tolerance_mm { below + 1 } else { 0 };
        history.push(rec);
        if below >= options.patience {
            converged = true;
            break;
        }
    }
    let (final_pos_err_mm, final_rot_err_deg) = session.errors()?;
    Ok(InferenceRun {
        gears: session.gears(),
        history,
        final_pos_err_mm,
        final_rot_err_deg,
        converged,
    })
}

/// Reachable goals: end-effector poses of random gear states.
pub fn sample_targets(spec: &ArmSpec, count: usize, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let g = sample_random_pose(spec, 0.0, &mut rng);
            end_effector(&g, spec).expect("sampled gears are valid")
        })
        .collect()
}

/// Runs every goal from `start` in parallel; results keep the goal order.
pub fn run_batch(
    model: &ForwardModel,
    start: &GearState,
    goals: &[Pose],
    options: InferenceOptions,
) -> Result<Vec<InferenceRun>, InferenceError> {
    goals
        .par_iter()
        .map(|g| run_inference(model, start, InferenceTarget::new(*g), options))
        .collect()
}

/// Position error per iteration, held at the final value after an early stop.
pub fn error_curve(run: &InferenceRun, length: usize) -> Vec<f64> {
    (0..length)
        .map(|i| run.history.get(i).map_or(run.final_pos_err_mm, |r| r.pos_err_mm))
        .collect()
}

/// Per-iteration median over runs of the position error.
pub fn median_curve(runs: &[InferenceRun], length: usize) -> Vec<f64> {
    let curves: Vec<Vec<f64>> = runs.iter().map(|r| error_curve(r, length)).collect();
    (0..length)
        .map(|i| median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
        .collect()
}

pub const TRAJECTORY_HEADER: &str = "iteration,pos_err_mm,rot_err_deg,eta";
pub const SUMMARY_HEADER: &str = "target_id,final_pos_err_mm,final_rot_err_deg,iterations,converged";

pub fn write_trajectory_csv<W: Write>(run: &InferenceRun, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in &run.history {
        writeln!(out, "{},{},{},{}", r.iteration, r.pos_err_mm, r.rot_err_deg, r.eta)?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(runs: &[InferenceRun], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for (i, r) in runs.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i,
            r.final_pos_err_mm,
            r.final_rot_err_deg,
            r.iterations(),
            r.converged
        )?;
    }
    Ok(())
}
