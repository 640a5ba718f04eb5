//! Filling-based reward.
//!
//! A partial grid is completed by copying already generated blocks into the
//! ungenerated block slots; the reward of the partial grid is the best
//! oracle score found over such fillings. The search runs in two phases:
//!
//! 1. **Coarse**: `coarse_trials` independent uniform schemes, keep the best.
//! 2. **Refine**: `refine_iters` zero-order steps, each re-drawing the source
//!    of `refine_blocks` distinct slots of the current best scheme. A proposal
//!    replaces the incumbent only if it scores strictly higher.
//!
//! Every trial costs exactly one oracle call, so one search costs
//! `coarse_trials + refine_iters` calls.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_filling, random_scheme, segment_blocks, BlockPartition, FillingScheme, TokenGrid};
use crate::oracle::RewardOracle;
use crate::rng::StreamId;
use crate::toy::PromptSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrSearchConfig {
    pub coarse_trials: usize,
    pub refine_iters: usize,
    pub refine_blocks: usize,
    pub block_size: usize,
    /// Redraw coarse schemes that were already tried, until the scheme space
    /// is exhausted.
    pub dedup: bool,
}

impl Default for FrSearchConfig {
    fn default() -> Self {
        FrSearchConfig { coarse_trials: 5, refine_iters: 5, refine_blocks: 1, block_size: 8, dedup: false }
    }
}

impl FrSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_trials == 0 {
            return Err(Error::Parameter("coarse_trials must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Parameter("block_size must be at least 1".into()));
        }
        if self.refine_iters > 0 && self.refine_blocks == 0 {
            return Err(Error::Parameter("refine_blocks must be at least 1".into()));
        }
        Ok(())
    }

    pub fn oracle_calls(&self) -> u64 {
        (self.coarse_trials + self.refine_iters) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Coarse,
    Refine,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Refine => "refine",
        }
    }
}

/// One scored scheme. `accepted` marks trials that became the incumbent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub phase: Phase,
    pub index: usize,
    pub scheme_hash: u64,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrResult {
    pub best_scheme: FillingScheme,
    pub best_score: f64,
    pub trial_log: Vec<Trial>,
}

impl FrResult {
    /// Best score seen after each trial, in log order.
    pub fn running_best(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.trial_log
            .iter()
            .map(|t| {
                if t.accepted {
                    best = t.score;
                }
                best
            })
            .collect()
    }
}

fn partition(grid: &TokenGrid, cfg: &FrSearchConfig) -> Result<BlockPartition> {
    cfg.validate()?;
    let part = segment_blocks(grid.frontier(), cfg.block_size, grid.total())?;
    if part.generated_blocks == 0 {
        return Err(Error::NoSource);
    }
    Ok(part)
}

fn score_scheme(
    grid: &TokenGrid,
    scheme: &FillingScheme,
    prompt: &PromptSpec,
    oracle: &dyn RewardOracle,
    block_size: usize,
) -> Result<f64> {
    let filled = apply_filling(grid, scheme, block_size)?;
    let s = oracle.score(&filled, prompt)?;
    if !s.is_finite() {
        return Err(Error::Numeric(format!("oracle returned {s}")));
    }
    Ok(s)
}

/// Best of `coarse_trials` uniformly drawn schemes.
///
/// Schemes are drawn sequentially from `rng`, so the first `a` trials of a
/// search with budget `b >= a` are exactly the trials of the budget-`a`
/// search. Scoring may run concurrently when the oracle allows it.
pub fn coarse_search<R: Rng + ?Sized>(
    grid: &TokenGrid,
    prompt: &PromptSpec,
    oracle: &dyn RewardOracle,
    cfg: &FrSearchConfig,
    rng: &mut R,
) -> Result<FrResult> {
    let part = partition(grid, cfg)?;
    let space = part.scheme_space();
    let mut seen = HashSet::new();
    let mut schemes = Vec::with_capacity(cfg.coarse_trials);
    for _ in 0..cfg.coarse_trials {
        let mut scheme = random_scheme(part.generated_blocks, part.total_blocks, rng)?;
        if cfg.dedup {
            while (seen.len() as u64) < space && seen.contains(&scheme) {
                scheme = random_scheme(part.generated_blocks, part.total_blocks, rng)?;
            }
            seen.insert(scheme.clone());
        }
        schemes.push(scheme);
    }

    let scores: Vec<f64> = if oracle.max_concurrency().is_none() {
        schemes
            .par_iter()
            .map(|s| score_scheme(grid, s, prompt, oracle, cfg.block_size))
            .collect::<Result<_>>()?
    } else {
        schemes
            .iter()
            .map(|s| score_scheme(grid, s, prompt, oracle, cfg.block_size))
            .collect::<Result<_>>()?
    };

    let mut best = 0;
    let mut trial_log = Vec::with_capacity(cfg.coarse_trials);
    for (i, (scheme, &score)) in schemes.iter().zip(&scores).enumerate() {
        let accepted = i == 0 || score > scores[best];
        if accepted {
            best = i;
        }
        trial_log.push(Trial { phase: Phase::Coarse, index: i, scheme_hash: scheme.hash64(), score, accepted });
    }
    Ok(FrResult { best_scheme: schemes.swap_remove(best), best_score: scores[best], trial_log })
}

/// Zero-order refinement of `base`: `refine_iters` accept-if-better steps.
pub fn zero_order_refine<R: Rng + ?Sized>(
    grid: &TokenGrid,
    prompt: &PromptSpec,
    oracle: &dyn RewardOracle,
    base: FrResult,
    cfg: &FrSearchConfig,
    rng: &mut R,
) -> Result<FrResult> {
    let part = partition(grid, cfg)?;
    if base.best_scheme.generated_blocks() != part.generated_blocks
        || base.best_scheme.len() != part.ungenerated_blocks()
    {
        return Err(Error::Scheme("base scheme does not fit this grid".into()));
    }
    let slots = part.ungenerated_blocks();
    if cfg.refine_iters > 0 && slots > 0 && cfg.refine_blocks > slots {
        return Err(Error::Parameter(format!(
            "refine_blocks {} exceeds the {slots} ungenerated blocks",
            cfg.refine_blocks
        )));
    }
    let FrResult { mut best_scheme, mut best_score, mut trial_log } = base;
    for i in 0..cfg.refine_iters {
        let mut proposal = best_scheme.clone();
        if slots > 0 {
            for slot in sample_indices(rng, slots, cfg.refine_blocks) {
                proposal = proposal.with_slot(slot, rng.gen_range(0..part.generated_blocks))?;
            }
        }
        let score = score_scheme(grid, &proposal, prompt, oracle, cfg.block_size)?;
        let accepted = score > best_score;
        trial_log.push(Trial { phase: Phase::Refine, index: i, scheme_hash: proposal.hash64(), score, accepted });
        if accepted {
            best_scheme = proposal;
            best_score = score;
        }
    }
    Ok(FrResult { best_scheme, best_score, trial_log })
}

/// Coarse search then refinement. The two phases draw from the `coarse` and
/// `refine` children of `stream`, so the refinement budget never shifts the
/// coarse draws and vice versa.
pub fn filling_reward(
    grid: &TokenGrid,
    prompt: &PromptSpec,
    oracle: &dyn RewardOracle,
    cfg: &FrSearchConfig,
    stream: StreamId,
) -> Result<FrResult> {
    let coarse = coarse_search(grid, prompt, oracle, cfg, &mut stream.child("coarse").rng())?;
    zero_order_refine(grid, prompt, oracle, coarse, cfg, &mut stream.child("refine").rng())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Token;
    use crate::oracle::{MeteredOracle, SyntheticOracle};
    use crate::toy::{generate_into, synthetic_reward, GeneratorParams};

    /// Exhaustive maximum over all `m^(M-m)` schemes.
    fn brute_force_max(grid: &TokenGrid, prompt: &PromptSpec, k: usize) -> f64 {
        let part = segment_blocks(grid.frontier(), k, grid.total()).unwrap();
        let (m, slots) = (part.generated_blocks, part.ungenerated_blocks());
        let mut best = f64::NEG_INFINITY;
        let mut digits = vec![0usize; slots];
        loop {
            let mut tokens: Vec<Token> = grid.generated().to_vec();
            for &d in &digits {
                tokens.extend_from_slice(&grid.generated()[d * k..(d + 1) * k]);
            }
            let g = TokenGrid::from_prefix(grid.width(), grid.height(), grid.vocab_size(), &tokens).unwrap();
            best = best.max(synthetic_reward(&g, prompt).unwrap());
            let mut i = 0;
            loop {
                if i == slots {
                    return best;
                }
                digits[i] += 1;
                if digits[i] < m {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
        }
    }

    fn partial(id: u64, w: usize, h: usize, frontier: usize, seed: u64) -> (TokenGrid, PromptSpec) {
        let prompt = PromptSpec::library(id, w, h, 16).unwrap();
        let mut g = TokenGrid::empty(w, h, 16).unwrap();
        generate_into(&mut g, &prompt, frontier, &GeneratorParams::default(), &mut StreamId::root(seed).rng()).unwrap();
        (g, prompt)
    }

    #[test]
    fn complete_grid_scores_itself() {
        let (g, prompt) = partial(1, 4, 4, 16, 3);
        let cfg = FrSearchConfig { block_size: 4, ..Default::default() };
        let oracle = SyntheticOracle::default();
        let metered = MeteredOracle::new(&oracle);
        let r = filling_reward(&g, &prompt, &metered, &cfg, StreamId::root(0)).unwrap();
        assert_eq!(r.best_score, synthetic_reward(&g, &prompt).unwrap());
        assert!(r.best_scheme.is_empty());
        assert_eq!(metered.calls(), cfg.oracle_calls());
    }

    #[test]
    fn single_source_trials_identical() {
        let (g, prompt) = partial(2, 4, 4, 4, 3);
        let cfg = FrSearchConfig { block_size: 4, coarse_trials: 6, refine_iters: 0, ..Default::default() };
        let oracle = SyntheticOracle::default();
        let r = coarse_search(&g, &prompt, &oracle, &cfg, &mut StreamId::root(1).rng()).unwrap();
        assert!(r.trial_log.iter().all(|t| t.score == r.best_score));
        let only = FillingScheme::new(1, vec![0; 3]).unwrap();
        assert_eq!(r.best_score, synthetic_reward(&apply_filling(&g, &only, 4).unwrap(), &prompt).unwrap());
    }

    #[test]
    fn no_source_error() {
        let (g, prompt) = partial(2, 4, 4, 0, 3);
        let oracle = SyntheticOracle::default();
        let cfg = FrSearchConfig { block_size: 4, ..Default::default() };
        assert_eq!(
            coarse_search(&g, &prompt, &oracle, &cfg, &mut StreamId::root(1).rng()).unwrap_err(),
            Error::NoSource
        );
    }

    #[test]
    fn dedup_coarse_search_is_exhaustive() {
        // m = 2, M = 4, K = 1: four schemes in total.
        let oracle = SyntheticOracle::default();
        for seed in 0..20 {
            let (g, prompt) = partial(seed % 6, 2, 2, 2, seed);
            let cfg = FrSearchConfig { block_size: 1, coarse_trials: 4, refine_iters: 0, dedup: true, ..Default::default() };
            let r = coarse_search(&g, &prompt, &oracle, &cfg, &mut StreamId::root(seed).rng()).unwrap();
            let hashes: HashSet<u64> = r.trial_log.iter().map(|t| t.scheme_hash).collect();
            assert_eq!(hashes.len(), 4);
            assert_eq!(r.best_score, brute_force_max(&g, &prompt, 1));
        }
    }

    #[test]
    fn filling_reward_reaches_exhaustive_max_when_budget_covers_space() {
        let oracle = SyntheticOracle::default();
        // 4x4 grid, K = 2, half generated: 4^4 = 256 schemes.
        // 4x4 grid, K = 1, 13 generated: 13^3 = 2197 schemes.
        for (k, frontier, space) in [(2usize, 8usize, 256usize), (1, 13, 2197)] {
            for seed in 0..3 {
                let (g, prompt) = partial(seed, 4, 4, frontier, 40 + seed);
                let cfg = FrSearchConfig { block_size: k, coarse_trials: space, refine_iters: 3, dedup: true, ..Default::default() };
                let r = filling_reward(&g, &prompt, &oracle, &cfg, StreamId::root(seed)).unwrap();
                assert_eq!(r.best_score, brute_force_max(&g, &prompt, k));
            }
        }
    }

    #[test]
    fn refine_never_loses_and_stays_below_exhaustive_max() {
        let oracle = SyntheticOracle::default();
        for seed in 0..30 {
            let (g, prompt) = partial(seed % 6, 4, 4, 8, seed);
            let cfg = FrSearchConfig { block_size: 2, coarse_trials: 2, refine_iters: 8, refine_blocks: 2, dedup: false };
            let base = coarse_search(&g, &prompt, &oracle, &cfg, &mut StreamId::root(seed).rng()).unwrap();
            let refined = zero_order_refine(&g, &prompt, &oracle, base.clone(), &cfg, &mut StreamId::root(seed + 100).rng()).unwrap();
            assert!(refined.best_score >= base.best_score);
            assert!(refined.best_score <= brute_force_max(&g, &prompt, 2));
            let run = refined.running_best();
            assert!(run.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*run.last().unwrap(), refined.best_score);
            let replay = synthetic_reward(&apply_filling(&g, &refined.best_scheme, 2).unwrap(), &prompt).unwrap();
            assert_eq!(replay.to_bits(), refined.best_score.to_bits());
        }
    }

    #[test]
    fn refine_with_zero_iterations_is_identity() {
        let (g, prompt) = partial(0, 4, 4, 8, 1);
        let oracle = SyntheticOracle::default();
        let cfg = FrSearchConfig { block_size: 2, refine_iters: 0, ..Default::default() };
        let base = coarse_search(&g, &prompt, &oracle, &cfg, &mut StreamId::root(2).rng()).unwrap();
        let same = zero_order_refine(&g, &prompt, &oracle, base.clone(), &cfg, &mut StreamId::root(3).rng()).unwrap();
        assert_eq!(same, base);
    }

    #[test]
    fn refine_rejects_oversized_perturbation() {
        let (g, prompt) = partial(0, 4, 4, 12, 1);
        let oracle = SyntheticOracle::default();
        let cfg = FrSearchConfig { block_size: 2, refine_blocks: 3, ..Default::default() };
        let base = coarse_search(&g, &prompt, &oracle, &cfg, &mut StreamId::root(2).rng()).unwrap();
        assert!(matches!(
            zero_order_refine(&g, &prompt, &oracle, base, &cfg, &mut StreamId::root(3).rng()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn nested_coarse_budgets_are_monotone() {
        let oracle = SyntheticOracle::default();
        for seed in 0..20 {
            let (g, prompt) = partial(seed % 6, 8, 8, 32, seed);
            let score = |tc| {
                let cfg = FrSearchConfig { block_size: 4, coarse_trials: tc, refine_iters: 0, ..Default::default() };
                filling_reward(&g, &prompt, &oracle, &cfg, StreamId::root(seed)).unwrap().best_score
            };
            assert!(score(5) <= score(10));
            assert!(score(1) <= score(5));
        }
    }

    #[test]
    fn budget_is_exact() {
        let oracle = SyntheticOracle::default();
        let (g, prompt) = partial(3, 8, 8, 24, 5);
        for (tc, tr) in [(1, 0), (5, 5), (3, 11)] {
            let metered = MeteredOracle::new(&oracle);
            let cfg = FrSearchConfig { block_size: 8, coarse_trials: tc, refine_iters: tr, ..Default::default() };
            let r = filling_reward(&g, &prompt, &metered, &cfg, StreamId::root(1)).unwrap();
            assert_eq!(metered.calls(), (tc + tr) as u64);
            assert_eq!(r.trial_log.len(), tc + tr);
        }
    }
}
