//! Exact Bayesian inference for discretely and exactly observed Markov jump
//! processes using nested-region extended state spaces.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod expm;
pub mod generator;
pub mod likelihood;
pub mod network;
pub mod region;
pub mod sampler;
pub mod ssa;

pub use data::{Dataset, DatasetSidecar};
pub use error::{Error, Result};
pub use network::{BuiltinNetwork, ParamVector, ReactionNetwork};
pub use region::{Region, RegionConfig};
pub use sampler::{run_chain, Algorithm, Prior, RunMetadata, SampleStore, SamplerConfig};
