//! Reinforcement-learned prompt generation: a generator proposes prompts,
//! an evaluator model answers with them, and GRPO updates the generator.

pub mod gateway;
pub mod grpo;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod reward;
pub mod tags;
pub mod generator;
pub mod training;
pub mod config;
pub mod dataset;
pub mod commands;
