//! Property suites for every invariant, runnable with any case count.

use nalgebra::Vector3;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trunk_snn::checkpoint::Checkpoint;
use trunk_snn::dataset::{generate_dataset, Dataset};
use trunk_snn::encoding::{encode_inputs, window, CLOCK_OFFSET, WINDOW};
use trunk_snn::grad::{backward, LossGrad};
use trunk_snn::inference::{corrected_target, evaluate_gears, InferenceOptions, InferenceSession, InferenceTarget};
use trunk_snn::kinematics::{forward_chain, sample_random_pose, ArmSpec, GearState, Pose, Variant};
use trunk_snn::model::ForwardModel;
use trunk_snn::network::{forward, NetworkTopology, NetworkWeights};
use trunk_snn::neuron::{alif_step, pseudo_derivative, NeuronConfig, ResetMode};
use trunk_snn::optim::{step_size_decay, Hyper, OptimizerKind, OptimizerState, StepSizeSchedule};
use trunk_snn::train::{evaluate, initial_checkpoint, readout_loss, train, TrainConfig};
use trunk_snn::Matrix;

pub type Property = fn(u32) -> Result<(), String>;

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// A small random network with inputs strong enough to make it spike.
pub struct RandomNet {
    pub topo: NetworkTopology,
    pub weights: NetworkWeights,
    pub cfg: NeuronConfig,
    pub inputs: Matrix,
}

pub fn random_net(seed: u64, max_hidden: usize, max_steps: usize, reset: ResetMode) -> RandomNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = rng.random_range(1..=4);
    let n_hidden = rng.random_range(2..=max_hidden);
    let n_alif = rng.random_range(0..=n_hidden);
    let n_out = rng.random_range(1..=3);
    let steps = rng.random_range(2..=max_steps);
    let topo = NetworkTopology::with_alif(n_in, n_hidden, n_alif, n_out).unwrap();
    let weights = NetworkWeights::random(&topo, rng.random(), rng.random_bool(0.5));
    let gain = rng.random_range(0.3..1.5);
    let inputs = Matrix::from_fn(steps, n_in, |_, _| if rng.random_bool(0.7) { gain * rng.random::<f64>() } else { 0.0 });
    let cfg = NeuronConfig {
        zeta: rng.random_range(0.0..0.5),
        rho: rng.random_range(0.5..0.999),
        reset,
        ..NeuronConfig::default()
    };
    RandomNet {
        topo,
        weights,
        cfg,
        inputs,
    }
}

fn random_loss_grad(seed: u64, steps: usize, topo: &NetworkTopology, with_spikes: bool) -> LossGrad {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    LossGrad {
        readout: Matrix::from_fn(steps, topo.n_out, |_, _| rng.random_range(-1.0..1.0)),
        spikes: with_spikes.then(|| Matrix::from_fn(steps, topo.n_hidden, |_, _| rng.random_range(-0.5..0.5))),
    }
}

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::ThreeGeared), Just(Variant::FourGeared)]
}

fn random_gears(spec: &ArmSpec, seed: u64) -> GearState {
    sample_random_pose(spec, 0.1, &mut ChaCha8Rng::seed_from_u64(seed))
}

// ---- neuron and network ----

pub fn spike_binarity(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let net = random_net(seed, 12, 40, ResetMode::Base);
        let tape = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        prop_assert!(tape.state.z.as_slice().iter().all(|&z| z == 0.0 || z == 1.0));
        Ok(())
    })
}

pub fn voltage_recurrence(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), any::<bool>()), |(seed, adaptive)| {
        let reset = if adaptive { ResetMode::Adaptive } else { ResetMode::Base };
        let net = random_net(seed, 10, 30, reset);
        let tape = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        let (v, z, a) = (&tape.state.v, &tape.state.z, &tape.state.a);
        let n_lif = net.topo.n_lif();
        for t in 0..tape.steps() {
            for j in 0..net.topo.n_hidden {
                let mut expect = 0.0;
                if t > 0 {
                    expect += net.cfg.alpha * v[(t - 1, j)];
                }
                let mut input = 0.0;
                for i in 0..net.topo.n_in {
                    if net.inputs[(t, i)] != 0.0 {
                        input += net.weights.w_in[(i, j)] * net.inputs[(t, i)];
                    }
                }
                expect += input;
                if t > 0 {
                    let mut rec = 0.0;
                    for jp in 0..net.topo.n_hidden {
                        if z[(t - 1, jp)] != 0.0 {
                            rec += net.weights.w_rec[(jp, j)];
                        }
                    }
                    expect += rec;
                    let thr_reset = if j >= n_lif && reset == ResetMode::Adaptive {
                        net.cfg.v_thr + net.cfg.zeta * a[(t - 1, j - n_lif)]
                    } else {
                        net.cfg.v_thr
                    };
                    expect -= z[(t - 1, j)] * thr_reset;
                }
                prop_assert!(v[(t, j)] == expect, "t={t} j={j}: {} vs {expect}", v[(t, j)]);
            }
        }
        Ok(())
    })
}

pub fn adaptation_decay(cases: u32) -> Result<(), String> {
    run(cases, (0.0..5.0f64, 0.5..0.9999f64, 1usize..200), |(a0, rho, steps)| {
        let cfg = NeuronConfig {
            rho,
            ..NeuronConfig::default()
        };
        let mut a = a0;
        for t in 1..=steps {
            // strongly negative input keeps the neuron silent
            let out = alif_step(-1.0, a, -1.0, 0.0, 0.0, &cfg).unwrap();
            prop_assert_eq!(out.z, 0.0);
            a = out.a;
            let expect = rho.powi(t as i32) * a0;
            prop_assert!((a - expect).abs() <= 1e-12 * (1.0 + a0));
        }
        Ok(())
    })
}

pub fn pseudo_derivative_bounds(cases: u32) -> Result<(), String> {
    run(cases, (-5.0..5.0f64, 0.1..3.0f64, 0.05..2.0f64, 0.01..1.0f64), |(v, thr, v_thr, lambda)| {
        let cfg = NeuronConfig {
            v_thr,
            lambda_pd: lambda,
            ..NeuronConfig::default()
        };
        let h = pseudo_derivative(v, thr, &cfg);
        prop_assert!((0.0..=lambda).contains(&h));
        if (v - thr).abs() >= v_thr {
            prop_assert_eq!(h, 0.0);
        }
        Ok(())
    })
}

pub fn forward_determinism(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let net = random_net(seed, 16, 48, ResetMode::Base);
        let a = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        let b = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

// ---- gradients ----

pub fn gradient_linearity(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), -3.0..3.0f64), |(seed, factor)| {
        let net = random_net(seed, 10, 30, ResetMode::Base);
        let tape = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        let lg = random_loss_grad(seed, tape.steps(), &net.topo, true);
        let mut scaled = lg.clone();
        scaled.scale(factor);
        let g = backward(&tape, &net.weights, &net.cfg, &net.topo, &lg).unwrap();
        let gs = backward(&tape, &net.weights, &net.cfg, &net.topo, &scaled).unwrap();
        for (a, b) in [(&g.g_in, &gs.g_in), (&g.g_rec, &gs.g_rec), (&g.g_out, &gs.g_out), (&g.g_x, &gs.g_x)] {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x * factor - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
        Ok(())
    })
}

pub fn gradient_gating(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let net = random_net(seed, 12, 30, ResetMode::Base);
        let tape = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        let lg = random_loss_grad(seed, tape.steps(), &net.topo, true);
        let g = backward(&tape, &net.weights, &net.cfg, &net.topo, &lg).unwrap();
        for j in 0..net.topo.n_hidden {
            // only spikes before the last step feed a recurrent synapse
            let fired = (0..tape.steps() - 1).any(|t| tape.state.z[(t, j)] != 0.0);
            if !fired {
                prop_assert!(g.g_rec.row(j).iter().all(|&x| x == 0.0));
            }
            if !(0..tape.steps()).any(|t| tape.state.z[(t, j)] != 0.0) {
                prop_assert!(g.g_out.row(j).iter().all(|&x| x == 0.0));
            }
        }
        Ok(())
    })
}

pub fn alif_highway(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let mut net = random_net(seed, 10, 30, ResetMode::Base);
        net.cfg.zeta = 0.0;
        let lif_topo = NetworkTopology::with_alif(net.topo.n_in, net.topo.n_hidden, 0, net.topo.n_out).unwrap();
        let lg = random_loss_grad(seed, net.inputs.rows(), &net.topo, true);
        let ta = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        let tl = forward(&net.inputs, &net.weights, &net.cfg, &lif_topo).unwrap();
        prop_assert_eq!(&ta.state.z, &tl.state.z);
        let ga = backward(&ta, &net.weights, &net.cfg, &net.topo, &lg).unwrap();
        let gl = backward(&tl, &net.weights, &net.cfg, &lif_topo, &lg).unwrap();
        for (a, b) in [(&ga.g_in, &gl.g_in), (&ga.g_rec, &gl.g_rec), (&ga.g_out, &gl.g_out), (&ga.g_x, &gl.g_x)] {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
        Ok(())
    })
}

// ---- kinematics ----

pub fn reachability_bound(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), 1usize..12, any::<u64>()), |(variant, n, seed)| {
        let spec = ArmSpec::new(variant, n);
        let g = random_gears(&spec, seed);
        let chain = forward_chain(&g, &spec).unwrap();
        prop_assert!(chain.last().unwrap().p.norm() <= spec.max_reach() + 1e-9);
        Ok(())
    })
}

pub fn quaternion_normalization(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), any::<u64>()), |(variant, seed)| {
        let spec = ArmSpec::new(variant, 75);
        let g = random_gears(&spec, seed);
        for pose in forward_chain(&g, &spec).unwrap() {
            prop_assert!((pose.q.quaternion().norm() - 1.0).abs() < 1e-9);
        }
        Ok(())
    })
}

pub fn mirror_symmetry(cases: u32) -> Result<(), String> {
    run(cases, (1usize..10, any::<u64>()), |(n, seed)| {
        let spec = ArmSpec::four_geared(n);
        let g = random_gears(&spec, seed);
        let a = forward_chain(&g, &spec).unwrap();
        let b = forward_chain(&g.mirrored().unwrap(), &spec).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            prop_assert!((pa.p.x + pb.p.x).abs() < 1e-9);
            prop_assert!((pa.p.y + pb.p.y).abs() < 1e-9);
            prop_assert!((pa.p.z - pb.p.z).abs() < 1e-9);
        }
        Ok(())
    })
}

pub fn neutral_insertion(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), 1usize..8, any::<u64>(), any::<prop::sample::Index>()), |(variant, n, seed, at)| {
        let spec = ArmSpec::new(variant, n);
        let g = random_gears(&spec, seed);
        let k = at.index(n + 1);
        let mut joints: Vec<[f64; 3]> = (0..n).map(|i| g.joint(i)).collect();
        joints.insert(k, variant.neutral());
        let longer = GearState::from_joints(variant, &joints).unwrap();
        let spec_long = ArmSpec::new(variant, n + 1);
        let a = forward_chain(&g, &spec).unwrap();
        let b = forward_chain(&longer, &spec_long).unwrap();
        let shift = a[k].q * Vector3::new(0.0, 0.0, spec.neutral_spacing());
        for i in 0..=n {
            let (pa, pb) = if i <= k { (&a[i], &b[i]) } else { (&a[i], &b[i + 1]) };
            let expect = if i <= k { pa.p } else { pa.p + shift };
            prop_assert!((pb.p - expect).norm() < 1e-9);
            prop_assert!(pb.q.angle_to(&pa.q) < 1e-9);
        }
        prop_assert!((b[k + 1].p - (a[k].p + shift)).norm() < 1e-9);
        Ok(())
    })
}

// ---- encoding and datasets ----

pub fn window_partition(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), 1usize..10, any::<u64>()), |(variant, n, seed)| {
        let spec = ArmSpec::new(variant, n);
        let g = random_gears(&spec, seed);
        let x = encode_inputs(&g);
        prop_assert_eq!(x.rows(), n * WINDOW);
        let mut covered = vec![0; x.rows()];
        for k in 0..n {
            for t in window(k) {
                covered[t] += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c == 1));
        for t in 0..x.rows() {
            let k = t / WINDOW;
            for (c, &value) in x.row(t).iter().enumerate() {
                if c < 3 {
                    prop_assert_eq!(value, g.joint(k)[c]);
                } else {
                    let on = c - 3 == k && t % WINDOW >= CLOCK_OFFSET;
                    prop_assert_eq!(value, if on { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(())
    })
}

pub fn target_bounds_and_canonical_quaternions(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), 1usize..6, any::<u64>()), |(variant, n, seed)| {
        let spec = ArmSpec::new(variant, n);
        let ds = generate_dataset(&spec, 20, seed);
        let bound = spec.max_reach() / ds.normalization;
        for i in 0..ds.len() {
            let e = ds.encode(i);
            for k in 0..n {
                let row = e.targets.row(k);
                prop_assert!(row[..3].iter().all(|x| x.abs() <= bound + 1e-12));
                prop_assert!(row[3] >= 0.0);
            }
        }
        Ok(())
    })
}

pub fn dataset_round_trip(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), 1usize..6, 1usize..30, any::<u64>()), |(variant, n, count, seed)| {
        let ds = generate_dataset(&ArmSpec::new(variant, n), count, seed);
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(generate_dataset(&ArmSpec::new(variant, n), count, seed), ds);
        Ok(())
    })
}

// ---- optimizers ----

fn gradient_stream(seed: u64, len: usize, steps: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| {
            (0..len)
                .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(-2.0..2.0) })
                .collect()
        })
        .collect()
}

pub fn sd_amsgrad_reduces_to_amsgrad(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..8, 1usize..100), |(seed, len, steps)| {
        let hyper = Hyper::with_eta(0.05);
        let mut sd = OptimizerState::new(OptimizerKind::SdAmsGrad, hyper, len);
        sd.disable_sign_damping = true;
        let mut ams = OptimizerState::new(OptimizerKind::AmsGrad, hyper, len);
        let (mut a, mut b) = (vec![0.5; len], vec![0.5; len]);
        for g in gradient_stream(seed, len, steps) {
            sd.step(&mut a, &g).unwrap();
            ams.step(&mut b, &g).unwrap();
            prop_assert_eq!(&a, &b);
        }
        Ok(())
    })
}

pub fn eta_monotone(cases: u32) -> Result<(), String> {
    run(cases, (0.001..1.0f64, prop::collection::vec(0.0..200.0f64, 1..100)), |(eta0, errors)| {
        let mut sch = StepSizeSchedule::new(eta0);
        let mut prev = eta0;
        for e in &errors {
            let eta = sch.observe(*e);
            prop_assert!(eta <= prev);
            prev = eta;
        }
        if errors[0] > 0.0 {
            prop_assert!(step_size_decay(eta0, eta0, errors[0], errors[0]) == eta0);
        }
        sch.reset();
        prop_assert_eq!(sch.eta, eta0);
        Ok(())
    })
}

pub fn optimizer_scale_covariance(cases: u32) -> Result<(), String> {
    let kinds = prop_oneof![
        Just(OptimizerKind::Adam),
        Just(OptimizerKind::AmsGrad),
        Just(OptimizerKind::SdMomentum),
        Just(OptimizerKind::SdAmsGrad)
    ];
    run(cases, (kinds, any::<u64>(), 1usize..6, 1usize..40, 0.1..10.0f64), |(kind, seed, len, steps, c)| {
        let mut a = OptimizerState::new(kind, Hyper::with_eta(0.01), len);
        let mut b = OptimizerState::new(kind, Hyper::with_eta(0.01 * c), len);
        for g in gradient_stream(seed, len, steps) {
            let (mut ta, mut tb) = (vec![0.0; len], vec![0.0; len]);
            a.step(&mut ta, &g).unwrap();
            b.step(&mut tb, &g).unwrap();
            for (x, y) in ta.iter().zip(&tb) {
                prop_assert!((x * c - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
        Ok(())
    })
}

pub fn zero_gradient_no_update(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..6, 1usize..50), |(seed, len, steps)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        for kind in OptimizerKind::ALL {
            let mut st = OptimizerState::new(kind, Hyper::with_eta(0.3), len);
            let mut theta = start.clone();
            for _ in 0..steps {
                st.step(&mut theta, &vec![0.0; len]).unwrap();
            }
            prop_assert_eq!(&theta, &start);
        }
        Ok(())
    })
}

// ---- training ----

pub fn masked_loss_locality(cases: u32) -> Result<(), String> {
    run(cases, (1usize..5, any::<u64>(), -100.0..100.0f64), |(n, seed, junk)| {
        let ds = generate_dataset(&ArmSpec::four_geared(n), 1, seed);
        let s = ds.encode(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Matrix::from_fn(s.steps(), 7, |_, _| rng.random_range(-1.0..1.0));
        let (base, _) = readout_loss(&y, &s);
        for t in 0..s.steps() {
            if !s.output_mask[t] {
                y.row_mut(t).fill(junk);
            }
        }
        prop_assert_eq!(readout_loss(&y, &s).0, base);
        Ok(())
    })
}

pub fn rate_regularizer_sanity(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let mut net = random_net(seed, 8, 30, ResetMode::Base);
        // weak input weights: silent, but inside the surrogate window
        net.weights.w_in.scale(0.05);
        net.inputs = Matrix::from_fn(net.inputs.rows(), net.inputs.cols(), |_, _| 1.0);
        let tape = forward(&net.inputs, &net.weights, &net.cfg, &net.topo).unwrap();
        prop_assume!(tape.state.z.as_slice().iter().all(|&z| z == 0.0));
        let (_, g_z) = trunk_snn::train::rate_penalty(&tape.state.z, 1e-3, 0.02);
        prop_assert!(g_z.as_slice().iter().all(|&g| g < 0.0));
        let lg = LossGrad {
            readout: Matrix::zeros(tape.steps(), net.topo.n_out),
            spikes: Some(g_z),
        };
        let g = backward(&tape, &net.weights, &net.cfg, &net.topo, &lg).unwrap();
        // a descent step raises every voltage that the surrogate can see
        let mut stepped = net.weights.clone();
        stepped.w_in.add_scaled(&g.g_in, -1.0);
        let after = forward(&net.inputs, &stepped, &net.cfg, &net.topo).unwrap();
        let seen: f64 = tape.h.as_slice().iter().sum();
        prop_assume!(seen > 0.0);
        let before_v: f64 = tape.state.v.as_slice().iter().sum();
        let after_v: f64 = after.state.v.as_slice().iter().sum();
        prop_assert!(after_v > before_v, "{after_v} <= {before_v}");
        Ok(())
    })
}

pub fn training_determinism(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let ds = generate_dataset(&ArmSpec::four_geared(2), 24, seed);
        let test = generate_dataset(&ArmSpec::four_geared(2), 8, seed ^ 1);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 2,
            seed,
            ..TrainConfig::default()
        };
        let run_once = || {
            let start = initial_checkpoint(&ds, 8, cfg).unwrap();
            train(start, &ds, Some(&test), |_| {}).unwrap()
        };
        let (a, b) = (run_once(), run_once());
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        // resume from every intermediate update
        let mut saved = Vec::new();
        let start = initial_checkpoint(&ds, 8, cfg).unwrap();
        train(start, &ds, Some(&test), |ev| {
            if let trunk_snn::train::TrainEvent::Update { state, .. } = ev {
                saved.push(state.to_bytes());
            }
        })
        .unwrap();
        let mid = Checkpoint::from_bytes(&saved[saved.len() / 2 - 1]).unwrap();
        let resumed = train(mid, &ds, Some(&test), |_| {}).unwrap();
        prop_assert_eq!(resumed.to_bytes(), a.to_bytes());
        Ok(())
    })
}

pub fn normalized_error_units(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let ds = generate_dataset(&ArmSpec::four_geared(3), 15, seed);
        let model = ForwardModel::init(&ds.spec, 10, ds.normalization, seed).unwrap();
        let ev = evaluate(&model, &ds).unwrap();
        let mm = ev.end_effector_position();
        let nu = ev.end_effector_normalized;
        for (a, b) in [(mm.median, nu.median), (mm.mean, nu.mean), (mm.q90, nu.q90), (mm.max, nu.max)] {
            prop_assert!((a - b * ds.normalization).abs() <= 1e-12 * a.max(1.0));
        }
        Ok(())
    })
}

// ---- inference ----

fn straight_target(spec: &ArmSpec, dx: f64) -> InferenceTarget {
    let chain = forward_chain(&GearState::neutral(spec), spec).unwrap();
    let tip = chain.last().unwrap();
    InferenceTarget::new(Pose {
        p: tip.p + Vector3::new(dx, 0.0, 0.0),
        q: tip.q,
    })
}

pub fn gradient_routing_mirror(cases: u32) -> Result<(), String> {
    run(cases, (1usize..5, any::<u64>(), 1.0..60.0f64), |(n, seed, dx)| {
        let spec = ArmSpec::four_geared(n);
        let model = ForwardModel::init(&spec, 16, spec.neutral_spacing(), seed).unwrap();
        let start = GearState::neutral(&spec);
        let (_, gp, _) = evaluate_gears(&model, &start, &straight_target(&spec, dx), true).unwrap();
        let (_, gm, _) = evaluate_gears(&model, &start, &straight_target(&spec, -dx), true).unwrap();
        prop_assume!(gp.iter().any(|&g| g != 0.0));
        for (a, b) in gp.iter().zip(&gm) {
            prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        // tilts of the joints that can still move the tip receive gradient
        let tilt_mass: f64 = gp.chunks(3).map(|j| j[0].abs() + j[1].abs()).sum();
        prop_assert!(tilt_mass > 0.0);
        Ok(())
    })
}

pub fn projection_safety(cases: u32) -> Result<(), String> {
    run(cases, (variant_strategy(), 1usize..4, any::<u64>(), 0.01..5.0f64), |(variant, n, seed, eta)| {
        let spec = ArmSpec::new(variant, n);
        let model = ForwardModel::init(&spec, 12, spec.neutral_spacing(), seed).unwrap();
        let goal = forward_chain(&random_gears(&spec, seed ^ 7), &spec).unwrap();
        let opts = InferenceOptions {
            eta0: eta,
            step_size_decay: false,
            ..InferenceOptions::default()
        };
        let mut session =
            InferenceSession::new(&model, &random_gears(&spec, seed), InferenceTarget::new(*goal.last().unwrap()), opts).unwrap();
        let (lo, hi) = variant.range();
        let mut prev_eta = f64::INFINITY;
        for _ in 0..15 {
            let rec = session.step().unwrap();
            prop_assert!(rec.eta <= prev_eta);
            prev_eta = rec.eta;
            prop_assert!(session.gears().as_slice().iter().all(|x| (lo..=hi).contains(x)));
            prop_assert!(GearState::new(variant, session.gears().into_vec()).is_ok());
        }
        Ok(())
    })
}

pub fn inference_eta_monotone(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let spec = ArmSpec::four_geared(2);
        let model = ForwardModel::init(&spec, 12, spec.neutral_spacing(), seed).unwrap();
        let goal = forward_chain(&random_gears(&spec, seed ^ 3), &spec).unwrap();
        let mut s = InferenceSession::new(
            &model,
            &GearState::neutral(&spec),
            InferenceTarget::new(*goal.last().unwrap()),
            InferenceOptions::default(),
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..40 {
            let r = s.step().unwrap();
            prop_assert!(r.eta <= prev);
            prev = r.eta;
        }
        Ok(())
    })
}

pub fn position_dominance(cases: u32) -> Result<(), String> {
    run(cases, (1usize..6, any::<u64>(), any::<u64>()), |(n, s1, s2)| {
        let spec = ArmSpec::four_geared(n);
        let norm = spec.neutral_spacing();
        let actual = *forward_chain(&random_gears(&spec, s1), &spec).unwrap().last().unwrap();
        let goal = *forward_chain(&random_gears(&spec, s2), &spec).unwrap().last().unwrap();
        prop_assume!((actual.p - goal.p).norm() > norm);
        // a perfect model predicts the actual pose
        let c = actual.canonical();
        let pred = {
            let a = c.to_array();
            [a[0] / norm, a[1] / norm, a[2] / norm, a[3], a[4], a[5], a[6]]
        };
        let target = corrected_target(&pred, &actual, &InferenceTarget::new(goal), norm, true);
        let pos: f64 = (0..3).map(|i| (target[i] - pred[i]).powi(2)).sum();
        let rot: f64 = (3..7).map(|i| (target[i] - pred[i]).powi(2)).sum();
        prop_assert!(pos > rot, "pos {pos} rot {rot}");
        Ok(())
    })
}

/// Every property with its name.
pub fn all() -> Vec<(&'static str, Property, u32)> {
    vec![
        ("spike binarity", spike_binarity as Property, 64),
        ("voltage recurrence replay", voltage_recurrence, 48),
        ("adaptation decay", adaptation_decay, 128),
        ("pseudo-derivative bounds", pseudo_derivative_bounds, 512),
        ("forward determinism", forward_determinism, 32),
        ("gradient linearity", gradient_linearity, 48),
        ("gradient gating", gradient_gating, 48),
        ("ALIF highway with zeta = 0", alif_highway, 48),
        ("reachability bound", reachability_bound, 128),
        ("quaternion normalization over 75 joints", quaternion_normalization, 32),
        ("mirror symmetry", mirror_symmetry, 128),
        ("neutral joint insertion", neutral_insertion, 128),
        ("window partition", window_partition, 64),
        ("target bounds and canonical quaternions", target_bounds_and_canonical_quaternions, 32),
        ("dataset round trip", dataset_round_trip, 32),
        ("SD-AMSGrad reduces to AMSGrad", sd_amsgrad_reduces_to_amsgrad, 128),
        ("step size monotone", eta_monotone, 256),
        ("optimizer scale covariance", optimizer_scale_covariance, 128),
        ("zero gradient never updates", zero_gradient_no_update, 64),
        ("masked loss locality", masked_loss_locality, 64),
        ("rate regularizer sanity", rate_regularizer_sanity, 48),
        ("training determinism and resume", training_determinism, 4),
        ("error units", normalized_error_units, 8),
        ("gradient routing mirror", gradient_routing_mirror, 24),
        ("projection safety", projection_safety, 24),
        ("inference step size monotone", inference_eta_monotone, 8),
        ("position dominance", position_dominance, 256),
    ]
}
