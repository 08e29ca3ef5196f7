//! Synthetic data, training, QAT fine-tuning, evaluation, sweeps and export.

pub mod config;
pub mod data;
pub mod optim;
pub mod train;
pub mod run;
pub mod sweep;
pub mod export;
