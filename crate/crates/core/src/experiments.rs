//! Prompt-set experiments shared by the CLI and the C ABI.

use std::str::FromStr;

use rayon::prelude::*;

use crate::analysis::{correlation_experiment, CorrelationTable, LabeledProbe};
use crate::config::RunConfigFile;
use crate::engine::{run_bon, run_fr_tts, Method, RunResult, ScalingConfig};
use crate::error::{Error, Result};
use crate::fr::{coarse_search, FrSearchConfig};
use crate::grid::TokenGrid;
use crate::oracle::RewardOracle;
use crate::report::AblationRow;
use crate::rng::StreamId;
use crate::sample::SampleState;
use crate::strategies::IntermediateStrategy;
use crate::toy::PromptSpec;

/// Runs one method over every prompt and checks the oracle budget.
pub fn run_prompts(
    cfg: &ScalingConfig,
    prompts: &[PromptSpec],
    oracle: &dyn RewardOracle,
    method: Method,
) -> Result<Vec<RunResult>> {
    let results = prompts
        .iter()
        .map(|p| match method {
            Method::FrTts => run_fr_tts(cfg, p, oracle),
            Method::BestOfN => run_bon(cfg, p, oracle),
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &results {
        if r.oracle_calls != r.expected_oracle_calls {
            return Err(Error::Validation(format!(
                "prompt {}: {} oracle calls, budget formula gives {}",
                r.prompt_id, r.oracle_calls, r.expected_oracle_calls
            )));
        }
    }
    Ok(results)
}

/// Cropping, zero padding, complete rollout and the configured filling
/// search, plus filling searches at 1 and 10 coarse trials.
pub fn default_probes(fr: FrSearchConfig) -> Vec<LabeledProbe> {
    vec![
        LabeledProbe::strategy(IntermediateStrategy::Cropping),
        LabeledProbe::strategy(IntermediateStrategy::ZeroPadding),
        LabeledProbe::strategy(IntermediateStrategy::CompleteRollout),
        LabeledProbe::filling("filling-based", fr),
        LabeledProbe::filling("filling-tc1", FrSearchConfig { coarse_trials: 1, refine_iters: 0, ..fr }),
        LabeledProbe::filling("filling-tc10", FrSearchConfig { coarse_trials: 10, refine_iters: 0, ..fr }),
    ]
}

pub fn correlate(cfg: &RunConfigFile, oracle: &dyn RewardOracle) -> Result<CorrelationTable> {
    let prompts = cfg.prompts_n(cfg.correlate_prompts)?;
    correlation_experiment(&cfg.scaling(), &default_probes(cfg.fr()), &prompts, cfg.correlate_per_prompt, oracle)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Strategy,
    BlockSize,
    FillingTimes,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(Axis::Strategy),
            "block-size" => Ok(Axis::BlockSize),
            "filling-times" => Ok(Axis::FillingTimes),
            other => Err(Error::Config(format!(
                "unknown axis {other:?} (expected strategy, block-size or filling-times)"
            ))),
        }
    }
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Strategy => "strategy",
            Axis::BlockSize => "block-size",
            Axis::FillingTimes => "filling-times",
        }
    }

    fn apply(self, base: &RunConfigFile, value: &str) -> Result<RunConfigFile> {
        let mut cfg = base.clone();
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|e| Error::Config(format!("bad {} value {v:?}: {e}", self.as_str())))
        };
        match self {
            Axis::Strategy => cfg.strategy = value.parse()?,
            Axis::BlockSize => cfg.block_size = parse(value)?,
            Axis::FillingTimes => cfg.coarse_trials = parse(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Partial trajectories shared by every row of an ablation: `per_prompt`
/// trajectories per prompt, snapshotted at every checkpoint.
fn probe_batch(cfg: &ScalingConfig, prompts: &[PromptSpec], per_prompt: usize) -> Result<Vec<(usize, usize, SampleState)>> {
    let frontiers = cfg.checkpoint_frontiers();
    let mut out = Vec::new();
    for (p, prompt) in prompts.iter().enumerate() {
        let root = StreamId::root(cfg.master_seed).child("probe").index(prompt.class_id);
        for t in 0..per_prompt {
            let mut s = SampleState::new(
                TokenGrid::empty(cfg.width, cfg.height, cfg.vocab_size)?,
                root.child("gen").index(t as u64),
            );
            for (c, &f) in frontiers.iter().enumerate() {
                let count = f - s.grid().frontier();
                s.generate(prompt, count, &cfg.generator)?;
                out.push((p, c, s.clone()));
            }
        }
    }
    Ok(out)
}

/// Mean coarse-phase best filling reward over the probe batch. The probe
/// for batch item `i` draws from a stream fixed by `i` alone, so larger
/// coarse budgets extend smaller ones trial for trial.
fn coarse_bound(
    cfg: &ScalingConfig,
    prompts: &[PromptSpec],
    batch: &[(usize, usize, SampleState)],
    oracle: &dyn RewardOracle,
) -> Result<f64> {
    let fr = FrSearchConfig { refine_iters: 0, ..cfg.fr };
    let scores = batch
        .par_iter()
        .enumerate()
        .map(|(i, (p, _, s))| {
            let mut rng = StreamId::root(cfg.master_seed).child("bound").index(i as u64).rng();
            coarse_search(s.grid(), &prompts[*p], oracle, &fr, &mut rng).map(|r| r.best_score)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
}

/// Sweeps one axis, running the scaled method over the prompt set for every
/// value.
pub fn ablate(base: &RunConfigFile, axis: Axis, values: &[String], oracle: &dyn RewardOracle) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let prompts = base.prompts()?;
    let probe_prompts = &prompts[..prompts.len().min(25)];
    let batch = probe_batch(&base.scaling(), probe_prompts, 2)?;
    values
        .iter()
        .map(|value| {
            let cfg = axis.apply(base, value)?;
            let scaling = cfg.scaling();
            let results = run_prompts(&scaling, &prompts, oracle, Method::FrTts)?;
            let n = results.len() as f64;
            let best_reward = match axis {
                Axis::Strategy => None,
                Axis::BlockSize | Axis::FillingTimes => Some(coarse_bound(&scaling, probe_prompts, &batch, oracle)?),
            };
            Ok(AblationRow {
                value: value.clone(),
                best_reward,
                final_best: results.iter().map(|r| r.best_score).sum::<f64>() / n,
                final_mean: results.iter().map(|r| r.mean_score).sum::<f64>() / n,
                oracle_calls: results.iter().map(|r| r.oracle_calls).sum(),
            })
        })
        .collect()
}
