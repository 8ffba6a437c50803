//! Deterministic simulator of a digital ecosystem of beliefs: co-evolving
//! agent subpopulations exchange messages, update beliefs by contagion and
//! evolve their messaging policies with separable CMA-ES.

pub mod api;
pub mod belief;
pub mod config;
pub mod ecosystem;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod niche;
pub mod policy;
pub mod rng;
pub mod sepcma;
pub mod types;

pub use config::{AiType, EcosystemConfig, Hosting, WeightUpdate};
pub use error::{ConfigError, Error, Result};
pub use types::{Belief, BeliefWeightMatrix, Genotype, Message, Registers, SquareMatrix};
