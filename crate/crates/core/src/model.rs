//! A trained forward model bundled with the arm geometry it was trained on,
//! plus the pose error metrics shared by evaluation and inference.

use crate::encoding::{aggregate_prediction, encode_inputs, input_width, prediction_to_pose, POSE_DIM};
use crate::kinematics::{ArmSpec, GearState, Pose};
use crate::network::{forward, NetworkError, NetworkTopology, NetworkWeights, SpikeTape};
use crate::neuron::NeuronConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub spec: ArmSpec,
    pub topology: NetworkTopology,
    pub neuron: NeuronConfig,
    pub weights: NetworkWeights,
    /// Position scale in mm (mean inter-joint distance of the training set).
    pub normalization: f64,
}

impl ForwardModel {
    /// Fresh model with `n_hidden` neurons (half of them ALIF) and random weights.
    pub fn init(spec: &ArmSpec, n_hidden: usize, normalization: f64, seed: u64) -> Result<Self, NetworkError> {
        let topology = NetworkTopology::new(input_width(spec.n_joints), n_hidden, POSE_DIM)?;
        Ok(Self {
            spec: *spec,
            topology,
            neuron: NeuronConfig::default(),
            weights: NetworkWeights::random(&topology, seed, false),
            normalization,
        })
    }

    pub fn run(&self, gears: &GearState) -> Result<SpikeTape, NetworkError> {
        forward(&encode_inputs(gears), &self.weights, &self.neuron, &self.topology)
    }

    /// Predicted pose (mm) after every joint.
    pub fn predict(&self, gears: &GearState) -> Result<Vec<Pose>, NetworkError> {
        let tape = self.run(gears)?;
        Ok((0..gears.n_joints())
            .map(|k| prediction_to_pose(&aggregate_prediction(&tape.state.y, k), self.normalization))
            .collect())
    }
}

/// Position error in mm and orientation error in degrees.
pub fn pose_metrics(actual: &Pose, target: &Pose) -> (f64, f64) {
    let pos = (actual.p - target.p).norm();
    let dot = actual.q.quaternion().dot(target.q.quaternion()).abs().clamp(-1.0, 1.0);
    (pos, dot.acos().to_degrees())
}

/// Linear-interpolated quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty set");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Order statistics of an error sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            q90: quantile_sorted(&v, 0.9),
            max: *v.last().expect("non-empty"),
        }
    }
}
