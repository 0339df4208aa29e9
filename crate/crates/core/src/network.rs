//! Single-recurrent-layer LSNN: topology, weights and the recorded forward pass.
//!
//! Hidden neurons `0..n_lif` are LIF, `n_lif..n_hidden` are ALIF. Inputs are
//! real-valued currents injected directly, recurrent currents at step `t` use
//! the spikes of step `t - 1`, and every quantity the backward pass needs is
//! kept in a [`SpikeTape`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::neuron::{alif_step_unchecked, lif_step_unchecked, pseudo_derivative, NeuronConfig, NeuronError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error(transparent)]
    Neuron(#[from] NeuronError),
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkTopology {
    pub n_in: usize,
    pub n_hidden: usize,
    /// ALIF neurons occupy the last `n_alif` hidden indices.
    pub n_alif: usize,
    pub n_out: usize,
}

impl NetworkTopology {
    /// LIF and ALIF neurons in a one-to-one ratio (`n_alif = n_hidden / 2`).
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Result<Self, NetworkError> {
        Self::with_alif(n_in, n_hidden, n_hidden / 2, n_out)
    }

    pub fn with_alif(n_in: usize, n_hidden: usize, n_alif: usize, n_out: usize) -> Result<Self, NetworkError> {
        let topo = Self {
            n_in,
            n_hidden,
            n_alif,
            n_out,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.n_in == 0 || self.n_hidden == 0 || self.n_out == 0 {
            return Err(NetworkError::Topology(format!("all layer sizes must be >= 1: {self:?}")));
        }
        if self.n_alif > self.n_hidden {
            return Err(NetworkError::Topology(format!(
                "n_alif ({}) exceeds n_hidden ({})",
                self.n_alif, self.n_hidden
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn n_lif(&self) -> usize {
        self.n_hidden - self.n_alif
    }

    #[inline]
    pub fn is_alif(&self, j: usize) -> bool {
        j >= self.n_lif()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    /// `n_in x n_hidden`
    pub w_in: Matrix,
    /// `n_hidden x n_hidden`, row = presynaptic neuron.
    pub w_rec: Matrix,
    /// `n_hidden x n_out`
    pub w_out: Matrix,
}

impl NetworkWeights {
    pub fn zeros(topo: &NetworkTopology) -> Self {
        Self {
            w_in: Matrix::zeros(topo.n_in, topo.n_hidden),
            w_rec: Matrix::zeros(topo.n_hidden, topo.n_hidden),
            w_out: Matrix::zeros(topo.n_hidden, topo.n_out),
        }
    }

    /// Zero-mean Gaussian weights with standard deviation `1/sqrt(fan_in)`.
    pub fn random(topo: &NetworkTopology, seed: u64, self_recurrence: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        let w_in = draw(topo.n_in, topo.n_hidden, topo.n_in);
        let mut w_rec = draw(topo.n_hidden, topo.n_hidden, topo.n_hidden);
        let w_out = draw(topo.n_hidden, topo.n_out, topo.n_hidden);
        if !self_recurrence {
            for j in 0..topo.n_hidden {
                w_rec[(j, j)] = 0.0;
            }
        }
        Self { w_in, w_rec, w_out }
    }

    pub fn check(&self, topo: &NetworkTopology) -> Result<(), NetworkError> {
        let expect = [
            ("w_in", self.w_in.shape(), (topo.n_in, topo.n_hidden)),
            ("w_rec", self.w_rec.shape(), (topo.n_hidden, topo.n_hidden)),
            ("w_out", self.w_out.shape(), (topo.n_hidden, topo.n_out)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(NetworkError::Shape(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if !(self.w_in.is_finite() && self.w_rec.is_finite() && self.w_out.is_finite()) {
            return Err(NetworkError::NonFinite { what: "weights", step: 0 });
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w_in.as_slice().len() + self.w_rec.as_slice().len() + self.w_out.as_slice().len()
    }
}

/// Per-step trajectory of one unrolled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// `T x n_hidden` voltages.
    pub v: Matrix,
    /// `T x n_alif` adaptation values; column `m` belongs to hidden neuron `n_lif + m`.
    pub a: Matrix,
    /// `T x n_hidden` spikes, each exactly 0 or 1.
    pub z: Matrix,
    /// `T x n_out` readout voltages.
    pub y: Matrix,
}

impl NetworkState {
    pub fn steps(&self) -> usize {
        self.v.rows()
    }
}

/// Everything recorded during [`forward`] that the backward pass replays.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTape {
    /// `T x n_in` input currents.
    pub inputs: Matrix,
    pub state: NetworkState,
    /// `T x n_hidden` pseudo-derivatives.
    pub h: Matrix,
}

impl SpikeTape {
    pub fn steps(&self) -> usize {
        self.inputs.rows()
    }

    /// Mean spikes per step per neuron over the whole tape.
    pub fn mean_rate(&self) -> f64 {
        let z = self.state.z.as_slice();
        z.iter().sum::<f64>() / z.len().max(1) as f64
    }
}

/// Runs the network over `inputs` (`T x n_in`) from an all-zero initial state.
pub fn forward(
    inputs: &Matrix,
    weights: &NetworkWeights,
    cfg: &NeuronConfig,
    topo: &NetworkTopology,
) -> Result<SpikeTape, NetworkError> {
    topo.validate()?;
    cfg.validate()?;
    weights.check(topo)?;
    if inputs.cols() != topo.n_in {
        return Err(NetworkError::Shape(format!(
            "input width {} does not match n_in {}",
            inputs.cols(),
            topo.n_in
        )));
    }
    let steps = inputs.rows();
    if steps == 0 {
        return Err(NetworkError::Shape("input sequence is empty".into()));
    }
    if let Some(t) = (0..steps).find(|&t| inputs.row(t).iter().any(|x| !x.is_finite())) {
        return Err(NetworkError::NonFinite { what: "inputs", step: t });
    }

    let n_hidden = topo.n_hidden;
    let n_lif = topo.n_lif();
    let mut v = Matrix::zeros(steps, n_hidden);
    let mut a = Matrix::zeros(steps, topo.n_alif);
    let mut z = Matrix::zeros(steps, n_hidden);
    let mut y = Matrix::zeros(steps, topo.n_out);
    let mut h = Matrix::zeros(steps, n_hidden);

    let mut in_cur = vec![0.0; n_hidden];
    let mut rec_cur = vec![0.0; n_hidden];
    let zeros_hidden = vec![0.0; n_hidden];
    let zeros_alif = vec![0.0; topo.n_alif];
    let zeros_out = vec![0.0; topo.n_out];

    for t in 0..steps {
        in_cur.fill(0.0);
        for (i, &x) in inputs.row(t).iter().enumerate() {
            if x != 0.0 {
                for (c, w) in in_cur.iter_mut().zip(weights.w_in.row(i)) {
                    *c += w * x;
                }
            }
        }
        rec_cur.fill(0.0);
        let (v_prev, a_prev, z_prev, y_prev) = if t == 0 {
            (&zeros_hidden[..], &zeros_alif[..], &zeros_hidden[..], &zeros_out[..])
        } else {
            (v.row(t - 1), a.row(t - 1), z.row(t - 1), y.row(t - 1))
        };
        for (jp, &zp) in z_prev.iter().enumerate() {
            if zp != 0.0 {
                for (c, w) in rec_cur.iter_mut().zip(weights.w_rec.row(jp)) {
                    *c += w;
                }
            }
        }

        let mut v_row = vec![0.0; n_hidden];
        let mut z_row = vec![0.0; n_hidden];
        let mut h_row = vec![0.0; n_hidden];
        let mut a_row = vec![0.0; topo.n_alif];
        for j in 0..n_lif {
            let (vj, zj) = lif_step_unchecked(v_prev[j], in_cur[j], rec_cur[j], z_prev[j], cfg);
            v_row[j] = vj;
            z_row[j] = zj;
            h_row[j] = pseudo_derivative(vj, cfg.v_thr, cfg);
        }
        for m in 0..topo.n_alif {
            let j = n_lif + m;
            let out = alif_step_unchecked(v_prev[j], a_prev[m], in_cur[j], rec_cur[j], z_prev[j], cfg);
            v_row[j] = out.v;
            z_row[j] = out.z;
            a_row[m] = out.a;
            h_row[j] = pseudo_derivative(out.v, out.threshold, cfg);
        }

        let mut y_row: Vec<f64> = y_prev.iter().map(|yp| cfg.alpha * yp).collect();
        for (j, &zj) in z_row.iter().enumerate() {
            if zj != 0.0 {
                for (yk, w) in y_row.iter_mut().zip(weights.w_out.row(j)) {
                    *yk += w;
                }
            }
        }

        if v_row.iter().chain(&y_row).any(|x| !x.is_finite()) {
            return Err(NetworkError::NonFinite { what: "state", step: t });
        }
        v.row_mut(t).copy_from_slice(&v_row);
        z.row_mut(t).copy_from_slice(&z_row);
        h.row_mut(t).copy_from_slice(&h_row);
        a.row_mut(t).copy_from_slice(&a_row);
        y.row_mut(t).copy_from_slice(&y_row);
    }

    Ok(SpikeTape {
        inputs: inputs.clone(),
        state: NetworkState { v, a, z, y },
        h,
    })
}
