//! First-order optimizers sharing one dense per-parameter state: Adam,
//! AMSGrad, sign-dampened momentum and SD-AMSGrad.
//!
//! SD-AMSGrad keeps an exponential moving average `s` of gradient signs next to
//! the usual moments. After bias correction its square scales the AMSGrad
//! update componentwise, so components whose gradient keeps flipping sign slow
//! down:
//!
//! ```text
//! m = b1 m + (1 - b1) g        v = b2 v + (1 - b2) g^2
//! s = b3 s + (1 - b3) sgn(g)   v' = max(v', v)
//! theta -= eta * s_hat^2 * m_hat / (sqrt(v'_hat) + eps)
//! ```

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient has length {got}, optimizer state has {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient component {index} ({value})")]
    NonFinite { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    AmsGrad,
    SdMomentum,
    SdAmsGrad,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Adam,
        OptimizerKind::AmsGrad,
        OptimizerKind::SdMomentum,
        OptimizerKind::SdAmsGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AmsGrad => "amsgrad",
            OptimizerKind::SdMomentum => "sd-momentum",
            OptimizerKind::SdAmsGrad => "sd-amsgrad",
        }
    }

    fn uses_sign_damping(self) -> bool {
        matches!(self, OptimizerKind::SdMomentum | OptimizerKind::SdAmsGrad)
    }

    fn uses_max_variance(self) -> bool {
        matches!(self, OptimizerKind::AmsGrad | OptimizerKind::SdAmsGrad)
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown optimizer '{s}' (expected adam, amsgrad, sd-momentum or sd-amsgrad)"))
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.9,
            eps: 1e-8,
        }
    }
}

impl Hyper {
    pub fn with_eta(eta: f64) -> Self {
        Self {
            eta,
            ..Self::default()
        }
    }
}

/// Dense optimizer state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub hyper: Hyper,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
    pub s: Vec<f64>,
    /// Number of completed steps.
    pub tau: u64,
    /// Forces the sign-damping factor to 1 (reduces SD variants to their base).
    pub disable_sign_damping: bool,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: Hyper, len: usize) -> Self {
        Self {
            kind,
            hyper,
            m: vec![0.0; len],
            v: vec![0.0; len],
            v_max: vec![0.0; len],
            s: vec![0.0; len],
            tau: 0,
            disable_sign_damping: false,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn reset(&mut self) {
        for buf in [&mut self.m, &mut self.v, &mut self.v_max, &mut self.s] {
            buf.fill(0.0);
        }
        self.tau = 0;
    }

    pub fn set_eta(&mut self, eta: f64) {
        self.hyper.eta = eta;
    }

    /// One update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<(), OptimError> {
        if theta.len() != self.len() || grad.len() != self.len() {
            return Err(OptimError::Shape {
                expected: self.len(),
                got: grad.len().max(theta.len()),
            });
        }
        if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(OptimError::NonFinite { index, value });
        }
        self.tau += 1;
        let Hyper {
            eta,
            beta1,
            beta2,
            beta3,
            eps,
        } = self.hyper;
        let tau = self.tau as i32;
        let c1 = 1.0 - beta1.powi(tau);
        let c2 = 1.0 - beta2.powi(tau);
        let c3 = 1.0 - beta3.powi(tau);
        let sign_damping = self.kind.uses_sign_damping() && !self.disable_sign_damping;
        let max_variance = self.kind.uses_max_variance();

        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.s[i] = beta3 * self.s[i] + (1.0 - beta3) * sign(g);
            self.v_max[i] = self.v_max[i].max(self.v[i]);

            let m_hat = self.m[i] / c1;
            let damp = if sign_damping {
                let s_hat = self.s[i] / c3;
                s_hat * s_hat
            } else {
                1.0
            };
            let update = match self.kind {
                OptimizerKind::SdMomentum => m_hat,
                _ => {
                    let second = if max_variance { self.v_max[i] } else { self.v[i] };
                    m_hat / ((second / c2).sqrt() + eps)
                }
            };
            theta[i] -= eta * damp * update;
        }
        Ok(())
    }
}

/// `sgn` with `sgn(0) = 0`.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Step-size decay driven by the smallest position error seen so far:
/// `eta' = min(eta, eta0 * ln(1 + err_min) / ln(1 + err0))`.
pub fn step_size_decay(eta: f64, eta0: f64, err0: f64, err_min: f64) -> f64 {
    assert!(err0 > 0.0, "initial error must be positive");
    let factor = (1.0 + err_min.max(0.0)).ln() / (1.0 + err0).ln();
    eta.min(eta0 * factor)
}

/// Tracks the decayed step size over one target episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeSchedule {
    pub eta0: f64,
    pub eta: f64,
    err0: Option<f64>,
    err_min: f64,
}

impl StepSizeSchedule {
    pub fn new(eta0: f64) -> Self {
        Self {
            eta0,
            eta: eta0,
            err0: None,
            err_min: f64::INFINITY,
        }
    }

    /// Restarts at `eta0` for a new target.
    pub fn reset(&mut self) {
        *self = Self::new(self.eta0);
    }

    /// Records the current position error and returns the step size for the next update.
    pub fn observe(&mut self, err: f64) -> f64 {
        let err0 = *self.err0.get_or_insert(err);
        self.err_min = self.err_min.min(err);
        if err0 > 0.0 {
            self.eta = step_size_decay(self.eta, self.eta0, err0, self.err_min);
        }
        self.eta
    }
}
