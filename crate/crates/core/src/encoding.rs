//! Maps arm configurations onto LSNN input/target sequences.
//!
//! Joint `k` owns the window of steps `12k .. 12k + 12`. Its three actuation
//! values are injected on all twelve steps; from step 5 of the window on, the
//! clock input `k` is set and the readouts are supervised with the pose of the
//! frame after joint `k`.

use thiserror::Error;

use crate::kinematics::{GearState, Pose, Variant, GEARS_PER_JOINT};
use crate::matrix::Matrix;

/// Simulation steps per joint.
pub const WINDOW: usize = 12;
/// First step of a window that carries the clock and the pose prediction.
pub const CLOCK_OFFSET: usize = 5;
/// Pose outputs: normalized position (3) followed by a quaternion (w, x, y, z).
pub const POSE_DIM: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("gear state has {gears} joints but {poses} poses were given")]
    JointCount { gears: usize, poses: usize },
    #[error("normalization constant must be finite and > 0, got {0}")]
    Normalization(f64),
    #[error("encoded sample has unexpected shape: {0}")]
    Shape(String),
}

/// Input width for an arm with `n_joints` joints.
pub fn input_width(n_joints: usize) -> usize {
    GEARS_PER_JOINT + n_joints
}

pub fn sequence_len(n_joints: usize) -> usize {
    WINDOW * n_joints
}

pub fn window(k: usize) -> std::ops::Range<usize> {
    k * WINDOW..(k + 1) * WINDOW
}

/// Steps of window `k` that carry the clock and are supervised.
pub fn output_steps(k: usize) -> std::ops::Range<usize> {
    k * WINDOW + CLOCK_OFFSET..(k + 1) * WINDOW
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    /// `T x n_in`, `T = 12 * n_joints`, `n_in = 3 + n_joints`.
    pub inputs: Matrix,
    /// `n_joints x 7`: normalized position and canonical quaternion per joint.
    pub targets: Matrix,
    /// True on the supervised steps of every window.
    pub output_mask: Vec<bool>,
}

impl EncodedSample {
    pub fn n_joints(&self) -> usize {
        self.targets.rows()
    }

    pub fn steps(&self) -> usize {
        self.inputs.rows()
    }

    /// Per-step target, meaningful on masked steps only.
    pub fn step_target(&self, t: usize) -> &[f64] {
        self.targets.row(t / WINDOW)
    }
}

/// Builds the input sequence for a gear state alone.
pub fn encode_inputs(gears: &GearState) -> Matrix {
    let n = gears.n_joints();
    let mut inputs = Matrix::zeros(sequence_len(n), input_width(n));
    for k in 0..n {
        let g = gears.joint(k);
        for t in window(k) {
            inputs.row_mut(t)[..GEARS_PER_JOINT].copy_from_slice(&g);
        }
        for t in output_steps(k) {
            inputs[(t, GEARS_PER_JOINT + k)] = 1.0;
        }
    }
    inputs
}

pub fn output_mask(n_joints: usize) -> Vec<bool> {
    (0..sequence_len(n_joints)).map(|t| t % WINDOW >= CLOCK_OFFSET).collect()
}

/// Encodes gears plus per-joint poses (frames after joints `1..=n`, base excluded).
pub fn encode(gears: &GearState, poses: &[Pose], norm: f64) -> Result<EncodedSample, EncodingError> {
    let n = gears.n_joints();
    if poses.len() != n {
        return Err(EncodingError::JointCount {
            gears: n,
            poses: poses.len(),
        });
    }
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(EncodingError::Normalization(norm));
    }
    let targets = Matrix::from_fn(n, POSE_DIM, |k, c| pose_target(&poses[k], norm)[c]);
    Ok(EncodedSample {
        inputs: encode_inputs(gears),
        targets,
        output_mask: output_mask(n),
    })
}

/// `[p / norm, q]` with `q` canonicalized to `w >= 0`.
pub fn pose_target(pose: &Pose, norm: f64) -> [f64; 7] {
    let c = pose.canonical();
    let mut a = c.to_array();
    for x in &mut a[..3] {
        *x /= norm;
    }
    a
}

/// Recovers the gear state from an encoded input sequence.
pub fn decode(sample: &EncodedSample, variant: Variant) -> Result<GearState, EncodingError> {
    let n = sample.n_joints();
    if sample.inputs.shape() != (sequence_len(n), input_width(n)) {
        return Err(EncodingError::Shape(format!("{:?}", sample.inputs.shape())));
    }
    let values: Vec<f64> = (0..n)
        .flat_map(|k| sample.inputs.row(k * WINDOW)[..GEARS_PER_JOINT].to_vec())
        .collect();
    GearState::new(variant, values).map_err(|e| EncodingError::Shape(e.to_string()))
}

/// Window-averaged readouts of joint `k`: the network's pose prediction.
pub fn aggregate_prediction(readouts: &Matrix, k: usize) -> [f64; POSE_DIM] {
    let steps = output_steps(k);
    let count = steps.len() as f64;
    let mut out = [0.0; POSE_DIM];
    for t in steps {
        for (o, y) in out.iter_mut().zip(readouts.row(t)) {
            *o += y;
        }
    }
    out.iter_mut().for_each(|o| *o /= count);
    out
}

/// Converts an aggregated prediction back to a pose in mm (quaternion renormalized).
pub fn prediction_to_pose(pred: &[f64; POSE_DIM], norm: f64) -> Pose {
    let mut a = *pred;
    for x in &mut a[..3] {
        *x *= norm;
    }
    Pose::from_array(a)
}
