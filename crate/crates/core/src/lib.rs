//! Test-time scaling for next-token-prediction token-grid generators.
//!
//! Partially generated grids are scored with a filling-based reward: the
//! missing blocks are filled with copies of generated blocks and the best
//! oracle score over fillings stands in for the unknown final reward. The
//! engine fuses that reward with a diversity reward under a weighting
//! schedule and prunes N parallel trajectories by importance resampling.
//!
//! A deterministic toy world ([`toy`]) replaces the pretrained generator,
//! codec and reward model so every quantity has exact ground truth.

pub mod analysis;
pub mod config;
pub mod diversity;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod fr;
pub mod grid;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod sample;
pub mod schedule;
pub mod strategies;
pub mod toy;

pub use error::{Error, Result};
pub use fr::{coarse_search, filling_reward, zero_order_refine, FrResult, FrSearchConfig};
pub use grid::{apply_filling, random_scheme, segment_blocks, BlockPartition, FillingScheme, TokenGrid};
pub use oracle::{MeteredOracle, RemoteOracle, RewardOracle, SyntheticOracle};
pub use sample::SampleState;
pub use strategies::IntermediateStrategy;
pub use toy::{Codebook, GeneratorParams, Image, PromptSpec};
