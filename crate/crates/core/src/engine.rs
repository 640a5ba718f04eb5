//! The scaling loop over N parallel trajectories, plus the Best-of-N baseline.
//!
//! Randomness is split by purpose under `root(master_seed)/prompt/<class_id>`:
//!
//! | stream                           | consumer                              |
//! |----------------------------------|---------------------------------------|
//! | `gen/<i>`                        | initial generation of sample `i`      |
//! | `fill/<checkpoint>/<slot>`       | filling-reward search                 |
//! | `rollout/<checkpoint>/<slot>`    | complete-rollout strategy             |
//! | `resample/<checkpoint>`          | parent selection                      |
//! | `<parent stream>/fork/<c>/<j>`   | duplicate children of one parent      |
//!
//! The first child of a parent keeps the parent's generation stream where it
//! left off; later duplicates fork fresh streams so they diverge.

use std::time::{Duration, Instant};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::{diversity_scores, ToyExtractor};
use crate::error::{Error, Result};
use crate::fr::{filling_reward, FrSearchConfig, Trial};
use crate::grid::{segment_blocks, TokenGrid};
use crate::oracle::{MeteredOracle, RewardOracle};
use crate::rng::StreamId;
use crate::sample::SampleState;
use crate::schedule::{RewardBundle, ScheduleConfig};
use crate::strategies::{cropping_reward, rollout_reward, zeropad_reward, IntermediateStrategy};
use crate::toy::{Codebook, GeneratorParams, PromptSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleKernel {
    /// Weights `exp(R_u / tau)`.
    Exponential,
    /// Weights proportional to `R_u` (uniform when all are zero).
    Linear,
}

/// Every parameter of a scaling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub width: usize,
    pub height: usize,
    pub vocab_size: u32,
    pub patch_size: usize,
    pub generator: GeneratorParams,
    pub num_samples: usize,
    pub checkpoint_rows: usize,
    pub strategy: IntermediateStrategy,
    pub fr: FrSearchConfig,
    /// Ramp start as a fraction of the checkpoint count.
    pub schedule_begin: f64,
    /// Ramp end as a fraction of the checkpoint count.
    pub schedule_end: f64,
    pub v_c: f64,
    pub v_s: f64,
    pub variance_on_normalized: bool,
    pub fixed_weight: Option<f64>,
    pub resample_temperature: f64,
    pub resample_kernel: ResampleKernel,
    pub elitism: bool,
    pub greedy_rollout: bool,
    pub master_seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            width: 16,
            height: 16,
            vocab_size: 16,
            patch_size: 4,
            generator: GeneratorParams::default(),
            num_samples: 8,
            checkpoint_rows: 4,
            strategy: IntermediateStrategy::FillingBased,
            fr: FrSearchConfig::default(),
            schedule_begin: 0.25,
            schedule_end: 0.6,
            v_c: 0.0019,
            v_s: 50.0,
            variance_on_normalized: false,
            fixed_weight: None,
            resample_temperature: 0.1,
            resample_kernel: ResampleKernel::Exponential,
            elitism: true,
            greedy_rollout: false,
            master_seed: 0,
        }
    }
}

impl ScalingConfig {
    pub fn total_tokens(&self) -> usize {
        self.width * self.height
    }

    /// Frontiers at which populations are evaluated and resampled.
    pub fn checkpoint_frontiers(&self) -> Vec<usize> {
        let step = self.checkpoint_rows * self.width;
        (1..).map(|k| k * step).take_while(|&f| f < self.total_tokens()).collect()
    }

    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::new(self.vocab_size, self.patch_size)
    }

    pub fn schedule(&self) -> ScheduleConfig {
        let total = self.checkpoint_frontiers().len() as f64;
        ScheduleConfig {
            s_begin: self.schedule_begin * total,
            s_end: self.schedule_end * total,
            v_c: self.v_c,
            v_s: self.v_s,
            variance_on_normalized: self.variance_on_normalized,
            fixed_weight: self.fixed_weight,
        }
    }

    /// Oracle calls one evaluation of a sample costs under the strategy.
    pub fn calls_per_evaluation(&self) -> u64 {
        match self.strategy {
            IntermediateStrategy::FillingBased => self.fr.oracle_calls(),
            _ => 1,
        }
    }

    /// `checkpoints * N * calls_per_evaluation + N`.
    pub fn expected_scaling_calls(&self) -> u64 {
        let n = self.num_samples as u64;
        self.checkpoint_frontiers().len() as u64 * n * self.calls_per_evaluation() + n
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        if self.checkpoint_rows == 0 {
            return Err(Error::Config("checkpoint_rows must be at least 1".into()));
        }
        self.codebook()?;
        self.generator.validate()?;
        if !(self.resample_temperature > 0.0 && self.resample_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "resample_temperature must be positive, got {}",
                self.resample_temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.schedule_begin) || !(0.0..=1.0).contains(&self.schedule_end) {
            return Err(Error::Config("schedule fractions must lie in [0, 1]".into()));
        }
        self.schedule().validate()?;
        if self.strategy == IntermediateStrategy::FillingBased {
            self.fr.validate()?;
            let k = self.fr.block_size;
            let step = self.checkpoint_rows * self.width;
            if !step.is_multiple_of(k) {
                return Err(Error::Alignment(format!(
                    "checkpoint_rows * width = {step} is not divisible by block_size {k}"
                )));
            }
            if !self.total_tokens().is_multiple_of(k) {
                return Err(Error::Alignment(format!(
                    "block_size {k} does not divide the {} grid tokens",
                    self.total_tokens()
                )));
            }
            if self.fr.refine_iters > 0 {
                if let Some(&last) = self.checkpoint_frontiers().last() {
                    let part = segment_blocks(last, k, self.total_tokens())?;
                    if self.fr.refine_blocks > part.ungenerated_blocks() {
                        return Err(Error::Config(format!(
                            "refine_blocks {} exceeds the {} blocks left at the last checkpoint",
                            self.fr.refine_blocks,
                            part.ungenerated_blocks()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draws `n` parent indices with replacement, with probability increasing
/// in `unified`. With `elitism`, the arg-max (smallest index on ties) is
/// written into slot 0 if no draw picked it.
pub fn importance_resample<R: Rng + ?Sized>(
    unified: &[f64],
    n: usize,
    temperature: f64,
    kernel: ResampleKernel,
    elitism: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("resampling temperature must be positive, got {temperature}")));
    }
    if unified.is_empty() {
        return Err(Error::Shape("nothing to resample".into()));
    }
    if let Some(v) = unified.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite unified reward {v}")));
    }
    let mut best = 0;
    for (i, &u) in unified.iter().enumerate() {
        if u > unified[best] {
            best = i;
        }
    }
    let weights: Vec<f64> = match kernel {
        ResampleKernel::Exponential => unified.iter().map(|u| ((u - unified[best]) / temperature).exp()).collect(),
        ResampleKernel::Linear => {
            if unified.iter().any(|&u| u < 0.0) {
                return Err(Error::Numeric("linear resampling needs non-negative rewards".into()));
            }
            if unified.iter().all(|&u| u == 0.0) {
                vec![1.0; unified.len()]
            } else {
                unified.to_vec()
            }
        }
    };
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(format!("resampling weights: {e}")))?;
    let mut parents: Vec<usize> = (0..n).map(|_| dist.sample(rng)).collect();
    if elitism && n > 0 && !parents.contains(&best) {
        parents[0] = best;
    }
    Ok(parents)
}

/// State of the population at one checkpoint, before resampling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub index: usize,
    pub frontier: usize,
    pub bundle: RewardBundle,
    /// `parents[j]` is the sample of this checkpoint that child `j` continues.
    pub parents: Vec<usize>,
    /// Oracle calls made so far in the run.
    pub oracle_calls: u64,
    #[serde(skip)]
    pub population: Vec<TokenGrid>,
    #[serde(skip)]
    pub trials: Vec<Vec<Trial>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FrTts,
    BestOfN,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub prompt_id: u64,
    pub final_scores: Vec<f64>,
    pub best_index: usize,
    pub best_score: f64,
    pub mean_score: f64,
    pub checkpoints: Vec<CheckpointRecord>,
    pub oracle_calls: u64,
    pub expected_oracle_calls: u64,
    #[serde(skip)]
    pub final_grids: Vec<TokenGrid>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl RunResult {
    pub fn best_grid(&self) -> &TokenGrid {
        &self.final_grids[self.best_index]
    }
}

fn prompt_root(cfg: &ScalingConfig, prompt: &PromptSpec) -> StreamId {
    StreamId::root(cfg.master_seed).child("prompt").index(prompt.class_id)
}

/// Runs `f` for every index, in parallel as far as the oracle permits.
fn per_sample<T, F>(oracle: &dyn RewardOracle, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match oracle.max_concurrency() {
        None => (0..n).into_par_iter().map(f).collect(),
        Some(1) => (0..n).map(f).collect(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| (0..n).into_par_iter().map(f).collect()),
    }
}

fn initial_population(cfg: &ScalingConfig, root: StreamId) -> Result<Vec<SampleState>> {
    let empty = TokenGrid::empty(cfg.width, cfg.height, cfg.vocab_size)?;
    Ok((0..cfg.num_samples)
        .map(|i| SampleState::new(empty.clone(), root.child("gen").index(i as u64)))
        .collect())
}

fn check_prompt(cfg: &ScalingConfig, prompt: &PromptSpec) -> Result<()> {
    let t = &prompt.template;
    if t.width() != cfg.width || t.height() != cfg.height || t.vocab_size() != cfg.vocab_size {
        return Err(Error::Config(format!(
            "prompt {} is {}x{} over {} tokens, run expects {}x{} over {}",
            prompt.class_id,
            t.width(),
            t.height(),
            t.vocab_size(),
            cfg.width,
            cfg.height,
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Intermediate reward of one sample under the configured strategy.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_sample(
    cfg: &ScalingConfig,
    strategy: IntermediateStrategy,
    sample: &SampleState,
    prompt: &PromptSpec,
    codebook: &Codebook,
    oracle: &dyn RewardOracle,
    fill_stream: StreamId,
    rollout_stream: StreamId,
) -> Result<(f64, Vec<Trial>)> {
    match strategy {
        IntermediateStrategy::FillingBased => {
            let r = filling_reward(sample.grid(), prompt, oracle, &cfg.fr, fill_stream)?;
            Ok((r.best_score, r.trial_log))
        }
        IntermediateStrategy::Cropping => Ok((cropping_reward(sample, prompt, codebook, oracle)?, Vec::new())),
        IntermediateStrategy::ZeroPadding => Ok((zeropad_reward(sample, prompt, oracle)?, Vec::new())),
        IntermediateStrategy::CompleteRollout => {
            let params = GeneratorParams { greedy: cfg.greedy_rollout, ..cfg.generator };
            let r = rollout_reward(sample, &params, prompt, oracle, &mut rollout_stream.rng())?;
            Ok((r, Vec::new()))
        }
    }
}

fn finish(
    cfg: &ScalingConfig,
    method: Method,
    prompt: &PromptSpec,
    mut population: Vec<SampleState>,
    metered: &MeteredOracle<'_>,
    checkpoints: Vec<CheckpointRecord>,
    expected_oracle_calls: u64,
    started: Instant,
) -> Result<RunResult> {
    population.par_iter_mut().try_for_each(|s| {
        let remaining = s.grid().total() - s.grid().frontier();
        s.generate(prompt, remaining, &cfg.generator)
    })?;
    let final_scores = per_sample(metered, population.len(), |i| metered.score(population[i].grid(), prompt))?;
    let mut best_index = 0;
    for (i, &s) in final_scores.iter().enumerate() {
        if s > final_scores[best_index] {
            best_index = i;
        }
    }
    let mean_score = final_scores.iter().sum::<f64>() / final_scores.len() as f64;
    Ok(RunResult {
        method,
        prompt_id: prompt.class_id,
        best_score: final_scores[best_index],
        final_scores,
        best_index,
        mean_score,
        checkpoints,
        oracle_calls: metered.calls(),
        expected_oracle_calls,
        final_grids: population.into_iter().map(|s| s.grid().clone()).collect(),
        wall_clock: started.elapsed(),
    })
}

/// The full scaling pipeline for one prompt.
pub fn run_fr_tts(cfg: &ScalingConfig, prompt: &PromptSpec, oracle: &dyn RewardOracle) -> Result<RunResult> {
    cfg.validate()?;
    check_prompt(cfg, prompt)?;
    let started = Instant::now();
    let metered = MeteredOracle::new(oracle);
    let codebook = cfg.codebook()?;
    let extractor = ToyExtractor { codebook };
    let schedule = cfg.schedule();
    let root = prompt_root(cfg, prompt);
    let frontiers = cfg.checkpoint_frontiers();
    let mut population = initial_population(cfg, root)?;
    let mut checkpoints = Vec::with_capacity(frontiers.len());

    for (c, &frontier) in frontiers.iter().enumerate() {
        population.par_iter_mut().try_for_each(|s| {
            let count = frontier - s.grid().frontier();
            s.generate(prompt, count, &cfg.generator)
        })?;

        let evals = per_sample(&metered, population.len(), |i| {
            evaluate_sample(
                cfg,
                cfg.strategy,
                &population[i],
                prompt,
                &codebook,
                &metered,
                root.child("fill").index(c as u64).index(i as u64),
                root.child("rollout").index(c as u64).index(i as u64),
            )
        })?;
        let (raw_fr, trials): (Vec<f64>, Vec<Vec<Trial>>) = evals.into_iter().unzip();
        let raw_div = diversity_scores(&population, &codebook, &extractor)?;
        let bundle = RewardBundle::compute(raw_fr, raw_div, c, frontiers.len(), &schedule)?;

        let parents = importance_resample(
            &bundle.unified,
            cfg.num_samples,
            cfg.resample_temperature,
            cfg.resample_kernel,
            cfg.elitism,
            &mut root.child("resample").index(c as u64).rng(),
        )?;

        for (s, &u) in population.iter_mut().zip(&bundle.unified) {
            s.record(u);
        }
        let snapshot: Vec<TokenGrid> = population.iter().map(|s| s.grid().clone()).collect();
        let mut taken = vec![false; population.len()];
        let next: Vec<SampleState> = parents
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                if !taken[p] {
                    taken[p] = true;
                    population[p].clone()
                } else {
                    let parent = &population[p];
                    parent.fork(parent.stream().child("fork").index(c as u64).index(j as u64))
                }
            })
            .collect();
        population = next;

        checkpoints.push(CheckpointRecord {
            index: c,
            frontier,
            bundle,
            parents,
            oracle_calls: metered.calls(),
            population: snapshot,
            trials,
        });
    }

    finish(cfg, Method::FrTts, prompt, population, &metered, checkpoints, cfg.expected_scaling_calls(), started)
}

/// N independent complete generations, best by oracle score.
pub fn run_bon(cfg: &ScalingConfig, prompt: &PromptSpec, oracle: &dyn RewardOracle) -> Result<RunResult> {
    cfg.validate()?;
    check_prompt(cfg, prompt)?;
    let started = Instant::now();
    let metered = MeteredOracle::new(oracle);
    let population = initial_population(cfg, prompt_root(cfg, prompt))?;
    finish(cfg, Method::BestOfN, prompt, population, &metered, Vec::new(), cfg.num_samples as u64, started)
}
