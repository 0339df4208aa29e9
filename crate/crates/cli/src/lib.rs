//! Experiment runner: dataset generation, training, motor inference,
//! optimizer comparison and evaluation, with CSV outputs.

pub mod commands;
pub mod config;
pub mod error;
