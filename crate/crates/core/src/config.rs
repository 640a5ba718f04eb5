//! Run configuration files.
//!
//! A config file is a flat list of `key = value` lines (TOML syntax, no
//! tables). Every key is optional and falls back to the default listed in
//! `configs/default.toml`; unknown keys are rejected. The fully resolved
//! configuration, re-serialized canonically, is what reports echo and what
//! the config hash covers.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{ResampleKernel, ScalingConfig};
use crate::error::{Error, Result};
use crate::fr::FrSearchConfig;
use crate::grid::TokenGrid;
use crate::oracle::{RemoteClient, RemoteOracle, RewardOracle, SyntheticOracle};
use crate::strategies::IntermediateStrategy;
use crate::toy::{Codebook, GeneratorParams, PromptSpec, SyntheticReward};

/// Overrides `endpoint` when set.
pub const ENDPOINT_ENV: &str = "FRTTS_REWARD_ENDPOINT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Synthetic,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    // testbed
    pub width: usize,
    pub height: usize,
    pub vocab_size: u32,
    pub patch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub w_match: f64,
    pub w_smooth: f64,
    pub prompt_start: u64,
    pub prompt_count: u64,
    pub prompt_dir: String,

    // scaling
    pub num_samples: usize,
    pub checkpoint_rows: usize,
    pub strategy: IntermediateStrategy,
    pub master_seed: u64,
    pub resample_temperature: f64,
    pub resample_kernel: ResampleKernel,
    pub elitism: bool,
    pub greedy_rollout: bool,

    // filling-based reward search
    pub block_size: usize,
    pub coarse_trials: usize,
    pub refine_iters: usize,
    pub refine_blocks: usize,
    pub dedup: bool,

    // schedule
    pub schedule_begin: f64,
    pub schedule_end: f64,
    pub v_c: f64,
    pub v_s: f64,
    pub variance_on_normalized: bool,
    /// Negative means "use the schedule".
    pub fixed_weight: f64,

    // diversity
    pub feature_extractor: ExtractorKind,

    // correlation study
    pub correlate_prompts: u64,
    pub correlate_per_prompt: usize,

    // output and oracle
    pub output_dir: String,
    pub export_png: bool,
    pub oracle: OracleKind,
    pub endpoint: String,
    pub remote_timeout_secs: u64,
    pub remote_retries: u32,
    pub remote_concurrency: usize,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let s = ScalingConfig::default();
        RunConfigFile {
            width: s.width,
            height: s.height,
            vocab_size: s.vocab_size,
            patch_size: s.patch_size,
            alpha: s.generator.alpha,
            beta: s.generator.beta,
            temperature: s.generator.temperature,
            w_match: SyntheticReward::default().w_match,
            w_smooth: SyntheticReward::default().w_smooth,
            prompt_start: 0,
            prompt_count: 100,
            prompt_dir: String::new(),
            num_samples: s.num_samples,
            checkpoint_rows: s.checkpoint_rows,
            strategy: s.strategy,
            master_seed: s.master_seed,
            resample_temperature: s.resample_temperature,
            resample_kernel: s.resample_kernel,
            elitism: s.elitism,
            greedy_rollout: s.greedy_rollout,
            block_size: s.fr.block_size,
            coarse_trials: s.fr.coarse_trials,
            refine_iters: s.fr.refine_iters,
            refine_blocks: s.fr.refine_blocks,
            dedup: s.fr.dedup,
            schedule_begin: s.schedule_begin,
            schedule_end: s.schedule_end,
            v_c: s.v_c,
            v_s: s.v_s,
            variance_on_normalized: s.variance_on_normalized,
            fixed_weight: -1.0,
            feature_extractor: ExtractorKind::Toy,
            correlate_prompts: 50,
            correlate_per_prompt: 4,
            output_dir: "out".into(),
            export_png: false,
            oracle: OracleKind::Synthetic,
            endpoint: "http://127.0.0.1:8000".into(),
            remote_timeout_secs: 30,
            remote_retries: 2,
            remote_concurrency: 4,
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies environment overrides.
    pub fn with_env(mut self) -> Self {
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.is_empty() {
                self.endpoint = endpoint;
            }
        }
        self
    }

    /// Canonical `key = value` rendering of every field.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// The configuration with `output_dir` cleared: where artifacts go is
    /// not part of what a run computes.
    pub fn identity(&self) -> RunConfigFile {
        RunConfigFile { output_dir: String::new(), ..self.clone() }
    }

    /// Hex SHA-256 of the canonical rendering of [`identity`](Self::identity).
    pub fn hash(&self) -> String {
        Sha256::digest(self.identity().canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn fr(&self) -> FrSearchConfig {
        FrSearchConfig {
            coarse_trials: self.coarse_trials,
            refine_iters: self.refine_iters,
            refine_blocks: self.refine_blocks,
            block_size: self.block_size,
            dedup: self.dedup,
        }
    }

    pub fn scaling(&self) -> ScalingConfig {
        ScalingConfig {
            width: self.width,
            height: self.height,
            vocab_size: self.vocab_size,
            patch_size: self.patch_size,
            generator: GeneratorParams {
                alpha: self.alpha,
                beta: self.beta,
                temperature: self.temperature,
                greedy: false,
            },
            num_samples: self.num_samples,
            checkpoint_rows: self.checkpoint_rows,
            strategy: self.strategy,
            fr: self.fr(),
            schedule_begin: self.schedule_begin,
            schedule_end: self.schedule_end,
            v_c: self.v_c,
            v_s: self.v_s,
            variance_on_normalized: self.variance_on_normalized,
            fixed_weight: (self.fixed_weight >= 0.0).then_some(self.fixed_weight),
            resample_temperature: self.resample_temperature,
            resample_kernel: self.resample_kernel,
            elitism: self.elitism,
            greedy_rollout: self.greedy_rollout,
            master_seed: self.master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fixed_weight > 1.0 {
            return Err(Error::Config(format!("fixed_weight {} above 1", self.fixed_weight)));
        }
        if !(self.w_match >= 0.0 && self.w_smooth >= 0.0) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        if self.prompt_count == 0 {
            return Err(Error::Config("prompt_count must be at least 1".into()));
        }
        if self.oracle == OracleKind::Remote && self.endpoint.is_empty() {
            return Err(Error::Config("remote oracle needs an endpoint".into()));
        }
        self.scaling().validate()
    }

    pub fn reward(&self) -> SyntheticReward {
        SyntheticReward { w_match: self.w_match, w_smooth: self.w_smooth }
    }

    pub fn oracle(&self) -> Result<Box<dyn RewardOracle>> {
        Ok(match self.oracle {
            OracleKind::Synthetic => Box::new(SyntheticOracle { reward: self.reward() }),
            OracleKind::Remote => Box::new(RemoteOracle {
                client: RemoteClient::new(self.endpoint.clone())
                    .with_timeout(Duration::from_secs(self.remote_timeout_secs))
                    .with_retries(self.remote_retries),
                codebook: Codebook::new(self.vocab_size, self.patch_size)?,
                concurrency: self.remote_concurrency,
            }),
        })
    }

    fn prompt_ids(&self, count: u64) -> impl Iterator<Item = u64> {
        self.prompt_start..self.prompt_start + count
    }

    /// The prompt set: fixture files `prompt_<id>.grid` from `prompt_dir`
    /// when set, procedural templates otherwise.
    pub fn prompts_n(&self, count: u64) -> Result<Vec<PromptSpec>> {
        self.prompt_ids(count)
            .map(|id| {
                if self.prompt_dir.is_empty() {
                    PromptSpec::library(id, self.width, self.height, self.vocab_size)
                } else {
                    let path = PathBuf::from(&self.prompt_dir).join(format!("prompt_{id}.grid"));
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    PromptSpec::new(id, TokenGrid::from_record(&text)?)
                }
            })
            .collect()
    }

    pub fn prompts(&self) -> Result<Vec<PromptSpec>> {
        self.prompts_n(self.prompt_count)
    }
}
