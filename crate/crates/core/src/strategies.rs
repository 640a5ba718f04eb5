//! Ways to turn a partially generated grid into a complete one the oracle
//! can score.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::RewardOracle;
use crate::sample::SampleState;
use crate::toy::{generate_into, Codebook, GeneratorParams, PromptSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntermediateStrategy {
    Cropping,
    ZeroPadding,
    CompleteRollout,
    FillingBased,
}

impl IntermediateStrategy {
    pub const ALL: [IntermediateStrategy; 4] = [
        IntermediateStrategy::Cropping,
        IntermediateStrategy::ZeroPadding,
        IntermediateStrategy::CompleteRollout,
        IntermediateStrategy::FillingBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntermediateStrategy::Cropping => "cropping",
            IntermediateStrategy::ZeroPadding => "zero-padding",
            IntermediateStrategy::CompleteRollout => "complete-rollout",
            IntermediateStrategy::FillingBased => "filling-based",
        }
    }
}

impl fmt::Display for IntermediateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntermediateStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cropping" => Ok(IntermediateStrategy::Cropping),
            "zero-padding" | "zeropadding" => Ok(IntermediateStrategy::ZeroPadding),
            "complete-rollout" | "rollout" => Ok(IntermediateStrategy::CompleteRollout),
            "filling-based" | "filling" | "fr" => Ok(IntermediateStrategy::FillingBased),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Scores the generated rows after stretching them to full size.
pub fn cropping_reward(
    sample: &SampleState,
    prompt: &PromptSpec,
    codebook: &Codebook,
    oracle: &dyn RewardOracle,
) -> Result<f64> {
    let grid = sample.grid();
    if grid.is_complete() {
        return oracle.score(grid, prompt);
    }
    let stretched = codebook.crop_resize_reencode(grid)?;
    oracle.score(&stretched, prompt)
}

/// Scores the grid with every ungenerated cell set to token 0.
pub fn zeropad_reward(sample: &SampleState, prompt: &PromptSpec, oracle: &dyn RewardOracle) -> Result<f64> {
    oracle.score(&sample.grid().padded(0)?, prompt)
}

/// Finishes a copy of the trajectory with `rng` and scores the result.
/// The sample itself, including its stream, is left untouched.
pub fn rollout_reward<R: Rng + ?Sized>(
    sample: &SampleState,
    params: &GeneratorParams,
    prompt: &PromptSpec,
    oracle: &dyn RewardOracle,
    rng: &mut R,
) -> Result<f64> {
    let mut grid = sample.grid().clone();
    let remaining = grid.total() - grid.frontier();
    generate_into(&mut grid, prompt, remaining, params, rng)?;
    oracle.score(&grid, prompt)
}
