//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default; unknown
//! keys are rejected.

use std::fmt;
use std::str::FromStr;

use trunk_snn::inference::InferenceOptions;
use trunk_snn::kinematics::{ArmSpec, Variant, DEFAULT_EDGE_PROBABILITY};
use trunk_snn::optim::OptimizerKind;
use trunk_snn::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Neutral,
    /// A random gear state drawn per target.
    Random,
}

impl FromStr for Start {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neutral" => Ok(Start::Neutral),
            "random" => Ok(Start::Random),
            other => Err(format!("unknown start '{other}' (expected neutral or random)")),
        }
    }
}

impl fmt::Display for Start {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Start::Neutral => "neutral",
            Start::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arm: ArmSpec,
    pub hidden: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub edge_probability: f64,
    pub train: TrainConfig,
    /// Updates between periodic checkpoint writes.
    pub checkpoint_every: u64,
    pub infer: InferenceOptions,
    pub gamma1: f64,
    pub gamma2: f64,
    pub targets: usize,
    pub start: Start,
    pub compare_runs: usize,
    pub compare_models: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arm: ArmSpec::four_geared(10),
            hidden: 128,
            train_samples: 100_000,
            test_samples: 10_000,
            edge_probability: DEFAULT_EDGE_PROBABILITY,
            train: TrainConfig::default(),
            checkpoint_every: 1000,
            infer: InferenceOptions::default(),
            gamma1: 1.0,
            gamma2: 1.0,
            targets: 100,
            start: Start::Neutral,
            compare_runs: 250,
            compare_models: 5,
            seed: 0,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "seed",
    "arm.variant",
    "arm.joints",
    "arm.tilt_max",
    "arm.stretch_max",
    "arm.base_height",
    "arm.gear_radius",
    "model.hidden",
    "data.train_samples",
    "data.test_samples",
    "data.edge_probability",
    "train.batch_size",
    "train.lr0",
    "train.lr_decay",
    "train.lr_decay_every",
    "train.reg_factor",
    "train.target_rate",
    "train.epochs",
    "train.checkpoint_every",
    "infer.optimizer",
    "infer.eta0",
    "infer.max_iterations",
    "infer.tolerance_mm",
    "infer.patience",
    "infer.correction",
    "infer.step_size_decay",
    "infer.gamma1",
    "infer.gamma2",
    "infer.targets",
    "infer.start",
    "compare.runs",
    "compare.models",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid value '{value}' for {key}: {e}")))
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value, got '{raw}'", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        cfg.apply_all(&pairs)?;
        Ok(cfg)
    }

    /// Applies overrides. The arm variant goes first because it resets the
    /// geometry defaults.
    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<(), CliError> {
        let (variant, rest): (Vec<_>, Vec<_>) = pairs.iter().partition(|(k, _)| k == "arm.variant");
        for (k, v) in variant.into_iter().chain(rest) {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "arm.variant" => {
                let variant: Variant = parse(key, v)?;
                self.arm = ArmSpec::new(variant, self.arm.n_joints);
            }
            "arm.joints" => self.arm.n_joints = parse(key, v)?,
            "arm.tilt_max" => self.arm.tilt_max = parse(key, v)?,
            "arm.stretch_max" => self.arm.stretch_max = parse(key, v)?,
            "arm.base_height" => self.arm.base_height = parse(key, v)?,
            "arm.gear_radius" => self.arm.gear_radius = parse(key, v)?,
            "model.hidden" => self.hidden = parse(key, v)?,
            "data.train_samples" => self.train_samples = parse(key, v)?,
            "data.test_samples" => self.test_samples = parse(key, v)?,
            "data.edge_probability" => self.edge_probability = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr0" => self.train.lr0 = parse(key, v)?,
            "train.lr_decay" => self.train.lr_decay = parse(key, v)?,
            "train.lr_decay_every" => self.train.lr_decay_every = parse(key, v)?,
            "train.reg_factor" => self.train.reg_factor = parse(key, v)?,
            "train.target_rate" => self.train.target_rate = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "infer.optimizer" => self.infer.optimizer = parse::<OptimizerKind>(key, v)?,
            "infer.eta0" => self.infer.eta0 = parse(key, v)?,
            "infer.max_iterations" => self.infer.max_iterations = parse(key, v)?,
            "infer.tolerance_mm" => self.infer.tolerance_mm = parse(key, v)?,
            "infer.patience" => self.infer.patience = parse(key, v)?,
            "infer.correction" => self.infer.correction = parse(key, v)?,
            "infer.step_size_decay" => self.infer.step_size_decay = parse(key, v)?,
            "infer.gamma1" => self.gamma1 = parse(key, v)?,
            "infer.gamma2" => self.gamma2 = parse(key, v)?,
            "infer.targets" => self.targets = parse(key, v)?,
            "infer.start" => self.start = parse(key, v)?,
            "compare.runs" => self.compare_runs = parse(key, v)?,
            "compare.models" => self.compare_models = parse(key, v)?,
            other => return Err(CliError::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        self.arm.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.hidden < 2 {
            return usage("model.hidden must be at least 2");
        }
        if self.train.batch_size == 0 || self.train.lr_decay_every == 0 || self.checkpoint_every == 0 {
            return usage("train.batch_size, train.lr_decay_every and train.checkpoint_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return usage("data.edge_probability must be in [0, 1]");
        }
        let non_negative = [
            self.train.lr0,
            self.train.reg_factor,
            self.train.target_rate,
            self.infer.eta0,
            self.infer.tolerance_mm,
            self.gamma1,
            self.gamma2,
        ];
        if non_negative.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return usage("rates, gains and tolerances must be finite and non-negative");
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = &self.arm;
        let t = &self.train;
        let i = &self.infer;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "arm.variant = {}", a.variant)?;
        writeln!(f, "arm.joints = {}", a.n_joints)?;
        writeln!(f, "arm.tilt_max = {}", a.tilt_max)?;
        writeln!(f, "arm.stretch_max = {}", a.stretch_max)?;
        writeln!(f, "arm.base_height = {}", a.base_height)?;
        writeln!(f, "arm.gear_radius = {}", a.gear_radius)?;
        writeln!(f, "model.hidden = {}", self.hidden)?;
        writeln!(f, "data.train_samples = {}", self.train_samples)?;
        writeln!(f, "data.test_samples = {}", self.test_samples)?;
        writeln!(f, "data.edge_probability = {}", self.edge_probability)?;
        writeln!(f, "train.batch_size = {}", t.batch_size)?;
        writeln!(f, "train.lr0 = {}", t.lr0)?;
        writeln!(f, "train.lr_decay = {}", t.lr_decay)?;
        writeln!(f, "train.lr_decay_every = {}", t.lr_decay_every)?;
        writeln!(f, "train.reg_factor = {}", t.reg_factor)?;
        writeln!(f, "train.target_rate = {}", t.target_rate)?;
        writeln!(f, "train.epochs = {}", t.epochs)?;
        writeln!(f, "train.checkpoint_every = {}", self.checkpoint_every)?;
        writeln!(f, "infer.optimizer = {}", i.optimizer)?;
        writeln!(f, "infer.eta0 = {}", i.eta0)?;
        writeln!(f, "infer.max_iterations = {}", i.max_iterations)?;
        writeln!(f, "infer.tolerance_mm = {}", i.tolerance_mm)?;
        writeln!(f, "infer.patience = {}", i.patience)?;
        writeln!(f, "infer.correction = {}", i.correction)?;
        writeln!(f, "infer.step_size_decay = {}", i.step_size_decay)?;
        writeln!(f, "infer.gamma1 = {}", self.gamma1)?;
        writeln!(f, "infer.gamma2 = {}", self.gamma2)?;
        writeln!(f, "infer.targets = {}", self.targets)?;
        writeln!(f, "infer.start = {}", self.start)?;
        writeln!(f, "compare.runs = {}", self.compare_runs)?;
        writeln!(f, "compare.models = {}", self.compare_models)
    }
}
