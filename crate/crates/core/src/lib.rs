//! Cross-play population training for two-player cooperative games.

pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod rollout;
pub mod run;
pub mod tensor;
pub mod trainer;
pub mod world_model;
pub mod xpm;
