//! Spiking neuron dynamics: leaky integrate-and-fire (LIF), adaptive LIF (ALIF)
//! and the leaky, non-resetting readout neuron.
//!
//! All neurons share one voltage decay `alpha`. A hidden neuron spikes when its
//! voltage reaches its (possibly adaptive) threshold and is reset by subtracting
//! a threshold on the following step. ALIF neurons additionally carry an
//! adaptation value `a` that raises their threshold by `zeta * a`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuronError {
    #[error("invalid neuron config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// How much an ALIF neuron's voltage is reduced on the step after it spiked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResetMode {
    /// Subtract the base threshold `v_thr`. Reproduces the reference
    /// LIF/ALIF derivative traces.
    #[default]
    Base,
    /// Subtract the adaptive threshold of the spiking step, `v_thr + zeta * a`.
    Adaptive,
}

/// Constants of the spiking dynamics, shared by every neuron in a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronConfig {
    /// Voltage decay per step for LIF, ALIF and readout neurons.
    pub alpha: f64,
    /// Adaptation decay per step.
    pub rho: f64,
    /// Threshold increase per unit of adaptation.
    pub zeta: f64,
    /// Base spike threshold.
    pub v_thr: f64,
    /// Peak value (damping factor) of the pseudo-derivative.
    pub lambda_pd: f64,
    pub reset: ResetMode,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            alpha: (-1.0f64 / 20.0).exp(),
            rho: (-1.0f64 / 1200.0).exp(),
            zeta: 0.03,
            v_thr: 0.61,
            lambda_pd: 0.3,
            reset: ResetMode::Base,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<(), NeuronError> {
        let bad = |msg: &str| Err(NeuronError::InvalidConfig(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return bad("zeta must be finite and >= 0");
        }
        if !(self.v_thr > 0.0 && self.v_thr.is_finite()) {
            return bad("v_thr must be finite and > 0");
        }
        if !(self.lambda_pd > 0.0 && self.lambda_pd.is_finite()) {
            return bad("lambda_pd must be finite and > 0");
        }
        Ok(())
    }

    /// Amount subtracted from an ALIF voltage one step after a spike, given the
    /// adaptation value at the spiking step.
    #[inline]
    pub fn alif_reset(&self, a_at_spike: f64) -> f64 {
        match self.reset {
            ResetMode::Base => self.v_thr,
            ResetMode::Adaptive => self.v_thr + self.zeta * a_at_spike,
        }
    }
}

/// Heaviside with the closed boundary: spike iff `v >= threshold`.
#[inline]
pub fn spike(v: f64, threshold: f64) -> f64 {
    if v >= threshold {
        1.0
    } else {
        0.0
    }
}

/// Piecewise-linear surrogate for the derivative of the spike function,
/// `lambda * max(0, 1 - |v - thr| / v_thr)`. Always in `[0, lambda]`.
#[inline]
pub fn pseudo_derivative(v: f64, threshold: f64, cfg: &NeuronConfig) -> f64 {
    cfg.lambda_pd * (1.0 - (v - threshold).abs() / cfg.v_thr).max(0.0)
}

fn check_finite(values: &[(&str, f64)]) -> Result<(), NeuronError> {
    for (name, x) in values {
        if !x.is_finite() {
            return Err(NeuronError::InvalidInput(format!("{name} is not finite ({x})")));
        }
    }
    Ok(())
}

fn check_spike(z: f64) -> Result<(), NeuronError> {
    if z == 0.0 || z == 1.0 {
        Ok(())
    } else {
        Err(NeuronError::InvalidInput(format!("spike value must be 0 or 1, got {z}")))
    }
}

#[inline]
pub(crate) fn lif_step_unchecked(
    v_prev: f64,
    input_current: f64,
    rec_current: f64,
    z_prev: f64,
    cfg: &NeuronConfig,
) -> (f64, f64) {
    let v = cfg.alpha * v_prev + input_current + rec_current - z_prev * cfg.v_thr;
    (v, spike(v, cfg.v_thr))
}

/// One LIF update. Returns `(v, z)`.
pub fn lif_step(
    v_prev: f64,
    input_current: f64,
    rec_current: f64,
    z_prev: f64,
    cfg: &NeuronConfig,
) -> Result<(f64, f64), NeuronError> {
    check_finite(&[("v_prev", v_prev), ("input_current", input_current), ("rec_current", rec_current)])?;
    check_spike(z_prev)?;
    Ok(lif_step_unchecked(v_prev, input_current, rec_current, z_prev, cfg))
}

/// Result of one ALIF update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlifOutput {
    pub v: f64,
    pub a: f64,
    pub z: f64,
    /// Adaptive threshold `v_thr + zeta * a` the voltage was compared against.
    pub threshold: f64,
}

#[inline]
pub(crate) fn alif_step_unchecked(
    v_prev: f64,
    a_prev: f64,
    input_current: f64,
    rec_current: f64,
    z_prev: f64,
    cfg: &NeuronConfig,
) -> AlifOutput {
    let a = cfg.rho * a_prev + z_prev;
    let threshold = cfg.v_thr + cfg.zeta * a;
    let v = cfg.alpha * v_prev + input_current + rec_current - z_prev * cfg.alif_reset(a_prev);
    AlifOutput {
        v,
        a,
        z: spike(v, threshold),
        threshold,
    }
}

/// One ALIF update from the previous voltage, adaptation and spike.
pub fn alif_step(
    v_prev: f64,
    a_prev: f64,
    input_current: f64,
    rec_current: f64,
    z_prev: f64,
    cfg: &NeuronConfig,
) -> Result<AlifOutput, NeuronError> {
    check_finite(&[
        ("v_prev", v_prev),
        ("a_prev", a_prev),
        ("input_current", input_current),
        ("rec_current", rec_current),
    ])?;
    check_spike(z_prev)?;
    if a_prev < 0.0 {
        return Err(NeuronError::InvalidInput(format!("adaptation must be >= 0, got {a_prev}")));
    }
    Ok(alif_step_unchecked(v_prev, a_prev, input_current, rec_current, z_prev, cfg))
}

/// Leaky readout without reset: `y = alpha * y_prev + sum_j w_out[j] * z_j`.
/// `w_out_col` holds the weights from every hidden neuron to this readout.
pub fn readout_step(y_prev: f64, hidden_spikes: &[f64], w_out_col: &[f64], cfg: &NeuronConfig) -> f64 {
    assert_eq!(hidden_spikes.len(), w_out_col.len(), "spike/weight length mismatch");
    let mut y = cfg.alpha * y_prev;
    for (z, w) in hidden_spikes.iter().zip(w_out_col) {
        if *z != 0.0 {
            y += w * z;
        }
    }
    y
}
