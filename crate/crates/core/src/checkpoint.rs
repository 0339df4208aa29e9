//! Training checkpoints: the model, optimizer state, schedule position and
//! metrics history, so that training can resume bit-for-bit.
//!
//! Binary layout (little-endian), followed by a CRC32 of all preceding bytes:
//!
//! ```text
//! "STRKCKPT" | version u32 | arm spec | spec fingerprint u32
//!   | n_in n_hidden n_alif n_out u32 | alpha rho zeta v_thr lambda f64 | reset u32
//!   | normalization f64 | w_in w_rec w_out f64
//!   | batch u64 | lr0 lr_decay f64 | lr_decay_every u64 | reg target_rate f64 | epochs seed u64
//!   | updates u64 | epoch_loss_sum f64
//!   | optimizer kind u32 | eta b1 b2 b3 eps f64 | tau u64 | no-sign-damping u32 | len u64 | m v v_max s
//!   | rows u64 | rows x (update u64, epoch u64, lr loss pos rot f64)
//! ```

use std::path::Path;

use crate::binio::{spec_fingerprint, FormatError, Reader, Writer};
use crate::matrix::Matrix;
use crate::model::ForwardModel;
use crate::network::{NetworkTopology, NetworkWeights};
use crate::neuron::{NeuronConfig, ResetMode};
use crate::optim::{Hyper, OptimizerKind, OptimizerState};
use crate::train::{MetricsRow, TrainConfig};

pub const CHECKPOINT_MAGIC: &str = "STRKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ForwardModel,
    pub config: TrainConfig,
    /// Completed weight updates.
    pub updates: u64,
    pub optimizer: OptimizerState,
    /// Running loss sum of the unfinished epoch.
    pub epoch_loss_sum: f64,
    pub history: Vec<MetricsRow>,
}

fn kind_code(kind: OptimizerKind) -> u32 {
    match kind {
        OptimizerKind::Adam => 0,
        OptimizerKind::AmsGrad => 1,
        OptimizerKind::SdMomentum => 2,
        OptimizerKind::SdAmsGrad => 3,
    }
}

fn kind_from_code(code: u32) -> Result<OptimizerKind, FormatError> {
    OptimizerKind::ALL
        .into_iter()
        .find(|&k| kind_code(k) == code)
        .ok_or_else(|| FormatError::Invalid(format!("unknown optimizer code {code}")))
}

fn read_usize(r: &mut Reader<'_>) -> Result<usize, FormatError> {
    usize::try_from(r.u64()?).map_err(|_| FormatError::Invalid("count overflows usize".into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC.as_bytes());
        w.u32(CHECKPOINT_VERSION);
        w.arm_spec(&m.spec);
        w.u32(spec_fingerprint(&m.spec));
        let t = &m.topology;
        for x in [t.n_in, t.n_hidden, t.n_alif, t.n_out] {
            w.u32(x as u32);
        }
        let n = &m.neuron;
        w.f64s(&[n.alpha, n.rho, n.zeta, n.v_thr, n.lambda_pd]);
        w.u32(match n.reset {
            ResetMode::Base => 0,
            ResetMode::Adaptive => 1,
        });
        w.f64(m.normalization);
        w.f64s(m.weights.w_in.as_slice());
        w.f64s(m.weights.w_rec.as_slice());
        w.f64s(m.weights.w_out.as_slice());

        let c = &self.config;
        w.u64(c.batch_size as u64);
        w.f64s(&[c.lr0, c.lr_decay]);
        w.u64(c.lr_decay_every);
        w.f64s(&[c.reg_factor, c.target_rate]);
        w.u64(c.epochs as u64);
        w.u64(c.seed);
        w.u64(self.updates);
        w.f64(self.epoch_loss_sum);

        let o = &self.optimizer;
        w.u32(kind_code(o.kind));
        let h = &o.hyper;
        w.f64s(&[h.eta, h.beta1, h.beta2, h.beta3, h.eps]);
        w.u64(o.tau);
        w.u32(o.disable_sign_damping as u32);
        w.u64(o.len() as u64);
        for buf in [&o.m, &o.v, &o.v_max, &o.s] {
            w.f64s(buf);
        }

        w.u64(self.history.len() as u64);
        for r in &self.history {
            w.u64(r.update);
            w.u64(r.epoch as u64);
            w.f64s(&[r.lr, r.loss, r.test_pos_mm, r.test_rot_deg]);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        if data.len() < CHECKPOINT_MAGIC.len() + 8 + 4 {
            return Err(FormatError::Truncated);
        }
        r.verify_crc()?;
        let spec = r.arm_spec()?;
        let fp = r.u32()?;
        if fp != spec_fingerprint(&spec) {
            return Err(FormatError::Invalid("arm spec fingerprint mismatch".into()));
        }
        let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|x| x as usize)).collect::<Result<_, _>>()?;
        let topology = NetworkTopology::with_alif(dims[0], dims[1], dims[2], dims[3])
            .map_err(|e| FormatError::Invalid(e.to_string()))?;
        let nv = r.f64s(5)?;
        let reset = match r.u32()? {
            0 => ResetMode::Base,
            1 => ResetMode::Adaptive,
            x => return Err(FormatError::Invalid(format!("unknown reset mode {x}"))),
        };
        let neuron = NeuronConfig {
            alpha: nv[0],
            rho: nv[1],
            zeta: nv[2],
            v_thr: nv[3],
            lambda_pd: nv[4],
            reset,
        };
        neuron.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
        let normalization = r.f64()?;
        let (ni, nh, no) = (topology.n_in, topology.n_hidden, topology.n_out);
        let mut mat = |rows: usize, cols: usize| -> Result<Matrix, FormatError> {
            Ok(Matrix::from_vec(rows, cols, r.f64s(rows * cols)?).expect("length matches"))
        };
        let weights = NetworkWeights {
            w_in: mat(ni, nh)?,
            w_rec: mat(nh, nh)?,
            w_out: mat(nh, no)?,
        };

        let batch_size = read_usize(&mut r)?;
        let lr = r.f64s(2)?;
        let lr_decay_every = r.u64()?;
        let reg = r.f64s(2)?;
        let epochs = read_usize(&mut r)?;
        let seed = r.u64()?;
        if batch_size == 0 || lr_decay_every == 0 {
            return Err(FormatError::Invalid("zero batch size or decay interval".into()));
        }
        let config = TrainConfig {
            batch_size,
            lr0: lr[0],
            lr_decay: lr[1],
            lr_decay_every,
            reg_factor: reg[0],
            target_rate: reg[1],
            epochs,
            seed,
        };
        let updates = r.u64()?;
        let epoch_loss_sum = r.f64()?;

        let kind = kind_from_code(r.u32()?)?;
        let hv = r.f64s(5)?;
        let hyper = Hyper {
            eta: hv[0],
            beta1: hv[1],
            beta2: hv[2],
            beta3: hv[3],
            eps: hv[4],
        };
        let tau = r.u64()?;
        let disable_sign_damping = r.u32()? != 0;
        let len = read_usize(&mut r)?;
        let mut optimizer = OptimizerState::new(kind, hyper, 0);
        optimizer.m = r.f64s(len)?;
        optimizer.v = r.f64s(len)?;
        optimizer.v_max = r.f64s(len)?;
        optimizer.s = r.f64s(len)?;
        optimizer.tau = tau;
        optimizer.disable_sign_damping = disable_sign_damping;

        let rows = read_usize(&mut r)?;
        let mut history = Vec::with_capacity(rows.min(1 << 16));
        for _ in 0..rows {
            let update = r.u64()?;
            let epoch = read_usize(&mut r)?;
            let v = r.f64s(4)?;
            history.push(MetricsRow {
                update,
                epoch,
                lr: v[0],
                loss: v[1],
                test_pos_mm: v[2],
                test_rot_deg: v[3],
            });
        }
        r.finish()?;

        let model = ForwardModel {
            spec,
            topology,
            neuron,
            weights,
            normalization,
        };
        model
            .weights
            .check(&model.topology)
            .map_err(|e| FormatError::Invalid(e.to_string()))?;
        if len != model.weights.param_count() {
            return Err(FormatError::Invalid(format!(
                "optimizer state has {len} entries for {} parameters",
                model.weights.param_count()
            )));
        }
        Ok(Self {
            model,
            config,
            updates,
            optimizer,
            epoch_loss_sum,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
