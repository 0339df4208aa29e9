//! Backpropagation through time over a recorded [`SpikeTape`].
//!
//! The spike nonlinearity is differentiated through its pseudo-derivative `h`:
//! `dz/dv = h` for every hidden neuron and `dz/da = -zeta * h` for ALIF
//! neurons. Walking the tape backwards, with `d_v`, `d_a`, `d_y` the state
//! errors of the following step:
//!
//! ```text
//! dE/dz_j[t] = sum_k w_out[j,k] d_y[k,t] + sum_j' w_rec[j,j'] d_v[j',t+1]
//!              - reset_j[t] d_v[j,t+1] + d_a[j,t+1] (ALIF only) + direct_j[t]
//! d_v[j,t]   = dE/dz_j[t] h_j[t] + alpha d_v[j,t+1]
//! d_a[j,t]   = -zeta dE/dz_j[t] h_j[t] + rho d_a[j,t+1]
//! d_y[k,t]   = dE/dy_k[t] + alpha d_y[k,t+1]
//! ```
//!
//! With [`ResetMode::Adaptive`] the reset depends on `a`, which adds
//! `-zeta z_j[t] d_v[j,t+1]` to `d_a[j,t]`.

use thiserror::Error;

use crate::matrix::Matrix;
use crate::network::{NetworkTopology, NetworkWeights, SpikeTape};
use crate::neuron::{NeuronConfig, ResetMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient explosion: non-finite {what} at step {step}")]
    Explosion { what: &'static str, step: usize },
}

/// Error signal injected into the unrolled network.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// `T x n_out`, dE/dy at every step.
    pub readout: Matrix,
    /// Optional `T x n_hidden` direct dE/dz (e.g. from a firing-rate regularizer).
    pub spikes: Option<Matrix>,
}

impl LossGrad {
    pub fn readout_only(readout: Matrix) -> Self {
        Self { readout, spikes: None }
    }

    pub fn scale(&mut self, factor: f64) {
        self.readout.scale(factor);
        if let Some(s) = self.spikes.as_mut() {
            s.scale(factor);
        }
    }
}

/// Backward state errors for the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaState {
    /// dE/dv per hidden neuron.
    pub delta_v: Vec<f64>,
    /// dE/da per ALIF neuron.
    pub delta_a: Vec<f64>,
    /// dE/dy per readout.
    pub delta_out: Vec<f64>,
}

impl DeltaState {
    fn zeros(topo: &NetworkTopology) -> Self {
        Self {
            delta_v: vec![0.0; topo.n_hidden],
            delta_a: vec![0.0; topo.n_alif],
            delta_out: vec![0.0; topo.n_out],
        }
    }
}

/// Gradients of the loss w.r.t. all weights and every input current.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub g_in: Matrix,
    pub g_rec: Matrix,
    pub g_out: Matrix,
    /// `T x n_in`
    pub g_x: Matrix,
}

impl GradientSet {
    pub fn zeros(topo: &NetworkTopology, steps: usize) -> Self {
        Self {
            g_in: Matrix::zeros(topo.n_in, topo.n_hidden),
            g_rec: Matrix::zeros(topo.n_hidden, topo.n_hidden),
            g_out: Matrix::zeros(topo.n_hidden, topo.n_out),
            g_x: Matrix::zeros(steps, topo.n_in),
        }
    }

    /// Adds the weight gradients of `other` scaled by `factor`; `g_x` is left untouched
    /// because input gradients of different sequences are not comparable.
    pub fn accumulate_weights(&mut self, other: &GradientSet, factor: f64) {
        self.g_in.add_scaled(&other.g_in, factor);
        self.g_rec.add_scaled(&other.g_rec, factor);
        self.g_out.add_scaled(&other.g_out, factor);
    }
}

/// Per-step record of the state errors, produced by [`backward_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaHistory {
    /// `T x n_hidden`
    pub delta_v: Matrix,
    /// `T x n_alif`
    pub delta_a: Matrix,
    /// `T x n_out`
    pub delta_out: Matrix,
}

/// Exact gradients of the surrogate-differentiable unrolled network.
pub fn backward(
    tape: &SpikeTape,
    weights: &NetworkWeights,
    cfg: &NeuronConfig,
    topo: &NetworkTopology,
    loss_grad: &LossGrad,
) -> Result<GradientSet, GradError> {
    run_backward(tape, weights, cfg, topo, loss_grad, false).map(|(g, _)| g)
}

/// Like [`backward`], additionally returning the full delta history.
pub fn backward_traced(
    tape: &SpikeTape,
    weights: &NetworkWeights,
    cfg: &NeuronConfig,
    topo: &NetworkTopology,
    loss_grad: &LossGrad,
) -> Result<(GradientSet, DeltaHistory), GradError> {
    run_backward(tape, weights, cfg, topo, loss_grad, true).map(|(g, h)| (g, h.expect("traced run")))
}

/// dE/dx for every step and input, `g_x[t][i] = sum_j w_in[i][j] d_v[j,t]`.
pub fn input_gradient(
    tape: &SpikeTape,
    weights: &NetworkWeights,
    cfg: &NeuronConfig,
    topo: &NetworkTopology,
    loss_grad: &LossGrad,
) -> Result<Matrix, GradError> {
    backward(tape, weights, cfg, topo, loss_grad).map(|g| g.g_x)
}

fn check_shapes(tape: &SpikeTape, weights: &NetworkWeights, topo: &NetworkTopology, lg: &LossGrad) -> Result<(), GradError> {
    let steps = tape.steps();
    let shape_err = |msg: String| Err(GradError::Shape(msg));
    if lg.readout.shape() != (steps, topo.n_out) {
        return shape_err(format!(
            "readout loss gradient is {:?}, expected {:?}",
            lg.readout.shape(),
            (steps, topo.n_out)
        ));
    }
    if let Some(s) = &lg.spikes {
        if s.shape() != (steps, topo.n_hidden) {
            return shape_err(format!("spike loss gradient is {:?}, expected {:?}", s.shape(), (steps, topo.n_hidden)));
        }
    }
    let st = &tape.state;
    if tape.inputs.cols() != topo.n_in
        || st.v.shape() != (steps, topo.n_hidden)
        || st.z.shape() != (steps, topo.n_hidden)
        || st.a.shape() != (steps, topo.n_alif)
        || st.y.shape() != (steps, topo.n_out)
        || tape.h.shape() != (steps, topo.n_hidden)
    {
        return shape_err("tape does not match topology".into());
    }
    if weights.w_in.shape() != (topo.n_in, topo.n_hidden)
        || weights.w_rec.shape() != (topo.n_hidden, topo.n_hidden)
        || weights.w_out.shape() != (topo.n_hidden, topo.n_out)
    {
        return shape_err("weights do not match topology".into());
    }
    Ok(())
}

fn run_backward(
    tape: &SpikeTape,
    weights: &NetworkWeights,
    cfg: &NeuronConfig,
    topo: &NetworkTopology,
    lg: &LossGrad,
    trace: bool,
) -> Result<(GradientSet, Option<DeltaHistory>), GradError> {
    check_shapes(tape, weights, topo, lg)?;
    let steps = tape.steps();
    let n_hidden = topo.n_hidden;
    let n_lif = topo.n_lif();
    let z = &tape.state.z;
    let a = &tape.state.a;

    let mut grads = GradientSet::zeros(topo, steps);
    let mut history = trace.then(|| DeltaHistory {
        delta_v: Matrix::zeros(steps, n_hidden),
        delta_a: Matrix::zeros(steps, topo.n_alif),
        delta_out: Matrix::zeros(steps, topo.n_out),
    });
    let mut next = DeltaState::zeros(topo);
    let mut cur = DeltaState::zeros(topo);

    for t in (0..steps).rev() {
        for (k, d) in cur.delta_out.iter_mut().enumerate() {
            *d = lg.readout[(t, k)] + cfg.alpha * next.delta_out[k];
        }

        let z_row = z.row(t);
        let h_row = tape.h.row(t);
        for j in 0..n_hidden {
            let is_alif = j >= n_lif;
            let h = h_row[j];
            let dz = if h != 0.0 {
                let mut dz = 0.0;
                for (w, d) in weights.w_out.row(j).iter().zip(&cur.delta_out) {
                    dz += w * d;
                }
                for (w, d) in weights.w_rec.row(j).iter().zip(&next.delta_v) {
                    dz += w * d;
                }
                let reset = if is_alif { cfg.alif_reset(a[(t, j - n_lif)]) } else { cfg.v_thr };
                dz -= reset * next.delta_v[j];
                if is_alif {
                    dz += next.delta_a[j - n_lif];
                }
                if let Some(s) = &lg.spikes {
                    dz += s[(t, j)];
                }
                dz
            } else {
                0.0
            };
            cur.delta_v[j] = dz * h + cfg.alpha * next.delta_v[j];
            if is_alif {
                let m = j - n_lif;
                let mut da = -cfg.zeta * dz * h + cfg.rho * next.delta_a[m];
                if cfg.reset == ResetMode::Adaptive && z_row[j] != 0.0 {
                    da -= cfg.zeta * next.delta_v[j];
                }
                cur.delta_a[m] = da;
            }
        }

        if cur.delta_v.iter().chain(&cur.delta_a).chain(&cur.delta_out).any(|x| !x.is_finite()) {
            return Err(GradError::Explosion { what: "delta", step: t });
        }

        // readout synapses: z_j[t] feeds y[t]
        for (j, &zj) in z_row.iter().enumerate() {
            if zj != 0.0 {
                for (g, d) in grads.g_out.row_mut(j).iter_mut().zip(&cur.delta_out) {
                    *g += zj * d;
                }
            }
        }
        // recurrent synapses: z_j'[t-1] feeds v_j[t]
        if t > 0 {
            for (jp, &zp) in z.row(t - 1).iter().enumerate() {
                if zp != 0.0 {
                    for (g, d) in grads.g_rec.row_mut(jp).iter_mut().zip(&cur.delta_v) {
                        *g += zp * d;
                    }
                }
            }
        }
        let x_row = tape.inputs.row(t);
        for (i, &x) in x_row.iter().enumerate() {
            if x != 0.0 {
                for (g, d) in grads.g_in.row_mut(i).iter_mut().zip(&cur.delta_v) {
                    *g += x * d;
                }
            }
            let mut gx = 0.0;
            for (w, d) in weights.w_in.row(i).iter().zip(&cur.delta_v) {
                gx += w * d;
            }
            grads.g_x[(t, i)] = gx;
        }

        if let Some(hist) = history.as_mut() {
            hist.delta_v.row_mut(t).copy_from_slice(&cur.delta_v);
            hist.delta_a.row_mut(t).copy_from_slice(&cur.delta_a);
            hist.delta_out.row_mut(t).copy_from_slice(&cur.delta_out);
        }
        std::mem::swap(&mut cur, &mut next);
    }

    Ok((grads, history))
}
