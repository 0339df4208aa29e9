//! Plain-Rust demo logic behind the browser bindings.

use trunk_snn::kinematics::{forward_chain, project_in_place, ArmSpec, GearState, Variant};
use trunk_snn::neuron::{alif_step, pseudo_derivative, NeuronConfig};
use trunk_snn::optim::{Hyper, OptimizerKind, OptimizerState, StepSizeSchedule};

/// Single ALIF neuron driven by a constant current (`zeta = 0` gives LIF).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrace {
    pub voltage: Vec<f64>,
    pub threshold: Vec<f64>,
    pub pseudo_derivative: Vec<f64>,
    pub spike_times: Vec<usize>,
}

pub fn neuron_trace(input: f64, zeta: f64, v_thr: f64, steps: usize) -> Result<NeuronTrace, String> {
    let cfg = NeuronConfig {
        zeta,
        v_thr,
        ..NeuronConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let mut trace = NeuronTrace {
        voltage: Vec::with_capacity(steps),
        threshold: Vec::with_capacity(steps),
        pseudo_derivative: Vec::with_capacity(steps),
        spike_times: Vec::new(),
    };
    let (mut v, mut a, mut z) = (0.0, 0.0, 0.0);
    for t in 0..steps {
        let out = alif_step(v, a, input, 0.0, z, &cfg).map_err(|e| e.to_string())?;
        (v, a, z) = (out.v, out.a, out.z);
        trace.voltage.push(v);
        trace.threshold.push(out.threshold);
        trace.pseudo_derivative.push(pseudo_derivative(v, out.threshold, &cfg));
        if z == 1.0 {
            trace.spike_times.push(t);
        }
    }
    Ok(trace)
}

fn spec_for(variant: &str, gears: usize) -> Result<ArmSpec, String> {
    let variant: Variant = variant.parse().map_err(|e: trunk_snn::kinematics::KinematicsError| e.to_string())?;
    if gears == 0 || gears % 3 != 0 {
        return Err(format!("need three values per joint, got {gears}"));
    }
    Ok(ArmSpec::new(variant, gears / 3))
}

/// Base and joint positions `[x0, y0, z0, x1, ...]` in mm.
pub fn arm_points(variant: &str, gears: &[f64]) -> Result<Vec<f64>, String> {
    let spec = spec_for(variant, gears.len())?;
    let state = GearState::new(spec.variant, gears.to_vec()).map_err(|e| e.to_string())?;
    let chain = forward_chain(&state, &spec).map_err(|e| e.to_string())?;
    Ok(chain.iter().flat_map(|p| [p.p.x, p.p.y, p.p.z]).collect())
}

pub fn neutral_gears(variant: &str, n_joints: usize) -> Result<Vec<f64>, String> {
    let spec = spec_for(variant, 3 * n_joints)?;
    Ok(GearState::neutral(&spec).into_vec())
}

/// Position-only reaching by gradient descent on the exact kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct Reach {
    /// End-effector distance to the target before every update, mm.
    pub errors: Vec<f64>,
    pub gears: Vec<f64>,
}

fn end_effector_distance(spec: &ArmSpec, gears: &[f64], target: [f64; 3]) -> f64 {
    let state = GearState::projected(spec.variant, gears.to_vec());
    let p = forward_chain(&state, spec).expect("projected gears are valid")[spec.n_joints].p;
    ((p.x - target[0]).powi(2) + (p.y - target[1]).powi(2) + (p.z - target[2]).powi(2)).sqrt()
}

/// Starts at the neutral pose. The loss is the squared distance in units of
/// the joint spacing; its gradient comes from central differences.
pub fn reach(
    variant: &str,
    n_joints: usize,
    target: [f64; 3],
    optimizer: &str,
    eta0: f64,
    iterations: usize,
) -> Result<Reach, String> {
    let spec = spec_for(variant, 3 * n_joints)?;
    let kind: OptimizerKind = optimizer.parse().map_err(|e: String| e)?;
    if !(eta0.is_finite() && eta0 >= 0.0) || target.iter().any(|x| !x.is_finite()) {
        return Err("step size and target must be finite".into());
    }
    let mut gears = GearState::neutral(&spec).into_vec();
    let mut opt = OptimizerState::new(kind, Hyper::with_eta(eta0), gears.len());
    let mut schedule = StepSizeSchedule::new(eta0);
    let scale = spec.neutral_spacing();
    let loss = |g: &[f64]| (end_effector_distance(&spec, g, target) / scale).powi(2);
    let h = 1e-6;
    let mut errors = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let err = end_effector_distance(&spec, &gears, target);
        errors.push(err);
        let grad: Vec<f64> = (0..gears.len())
            .map(|i| {
                let mut up = gears.clone();
                let mut down = gears.clone();
                up[i] += h;
                down[i] -= h;
                (loss(&up) - loss(&down)) / (2.0 * h)
            })
            .collect();
        opt.set_eta(schedule.observe(err));
        opt.step(&mut gears, &grad).map_err(|e| e.to_string())?;
        project_in_place(spec.variant, &mut gears);
    }
    Ok(Reach { errors, gears })
}
