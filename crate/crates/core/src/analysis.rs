//! Diagnostics: rank correlation between intermediate and final rewards,
//! attention entropy, and a paired sign test.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::engine::{evaluate_sample, ScalingConfig};
use crate::error::{Error, Result};
use crate::fr::FrSearchConfig;
use crate::grid::TokenGrid;
use crate::oracle::RewardOracle;
use crate::rng::StreamId;
use crate::sample::SampleState;
use crate::strategies::IntermediateStrategy;
use crate::toy::PromptSpec;

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Shape("spearman needs at least two pairs".into()));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value {v}")));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// One layer's row-stochastic `T x T` attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    size: usize,
    weights: Vec<f64>,
}

impl AttentionMap {
    pub fn new(layer: usize, size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || weights.len() != size * size {
            return Err(Error::Shape(format!("{} weights for a {size}x{size} map", weights.len())));
        }
        for (i, row) in weights.chunks(size).enumerate() {
            if row.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
                return Err(Error::Validation(format!("row {i} has a negative or non-finite weight")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("row {i} sums to {sum}")));
            }
        }
        Ok(AttentionMap { layer, size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Mean Shannon entropy of the rows, in bits, with `0 log 0 = 0`.
pub fn attention_entropy(map: &AttentionMap) -> f64 {
    let total: f64 = map
        .weights
        .chunks(map.size)
        .map(|row| row.iter().filter(|&&a| a > 0.0).map(|&a| -a * a.log2()).sum::<f64>())
        .sum();
    total / map.size as f64
}

/// An intermediate-reward estimator observed by the correlation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Probe {
    /// A strategy, optionally with its own filling-search budget.
    Strategy { strategy: IntermediateStrategy, fr: Option<FrSearchConfig> },
    /// The trajectory's own final reward, replayed at every checkpoint.
    FinalReplay,
    /// Uniform noise independent of the trajectory.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledProbe {
    pub label: String,
    pub probe: Probe,
}

impl LabeledProbe {
    pub fn strategy(strategy: IntermediateStrategy) -> Self {
        LabeledProbe { label: strategy.to_string(), probe: Probe::Strategy { strategy, fr: None } }
    }

    pub fn filling(label: impl Into<String>, fr: FrSearchConfig) -> Self {
        LabeledProbe {
            label: label.into(),
            probe: Probe::Strategy { strategy: IntermediateStrategy::FillingBased, fr: Some(fr) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub probe: String,
    pub checkpoint: usize,
    pub frontier: usize,
    /// `None` when either side was constant.
    pub rho: Option<f64>,
    pub n: usize,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub cells: Vec<CorrelationCell>,
    /// Final reward of every trajectory, in batch order.
    pub final_rewards: Vec<f64>,
    /// `intermediate[p][c][t]`: probe `p` at checkpoint `c` on trajectory `t`.
    #[serde(skip)]
    pub intermediate: Vec<Vec<Vec<f64>>>,
}

impl CorrelationTable {
    pub fn rho(&self, probe: &str, checkpoint: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.probe == probe && c.checkpoint == checkpoint)
            .and_then(|c| c.rho)
    }

    /// `rho` per checkpoint for one probe.
    pub fn series(&self, probe: &str) -> Vec<Option<f64>> {
        let mut cells: Vec<&CorrelationCell> = self.cells.iter().filter(|c| c.probe == probe).collect();
        cells.sort_by_key(|c| c.checkpoint);
        cells.into_iter().map(|c| c.rho).collect()
    }
}

/// Generates `per_prompt` independent trajectories for every prompt, then
/// lets every probe score every trajectory at every checkpoint. Probes only
/// observe; trajectories are shared, so comparisons are paired.
pub fn correlation_experiment(
    cfg: &ScalingConfig,
    probes: &[LabeledProbe],
    prompts: &[PromptSpec],
    per_prompt: usize,
    oracle: &dyn RewardOracle,
) -> Result<CorrelationTable> {
    let batch = prompts.len() * per_prompt;
    if batch < 2 {
        return Err(Error::Shape(format!("correlation needs at least 2 trajectories, got {batch}")));
    }
    let frontiers = cfg.checkpoint_frontiers();
    let codebook = cfg.codebook()?;
    for p in probes {
        if let Probe::Strategy { strategy, fr } = &p.probe {
            let probe_cfg = ScalingConfig { strategy: *strategy, fr: fr.unwrap_or(cfg.fr), ..cfg.clone() };
            probe_cfg.validate()?;
        }
    }

    let jobs: Vec<(usize, usize)> = (0..prompts.len()).flat_map(|p| (0..per_prompt).map(move |t| (p, t))).collect();
    // per trajectory: (final reward, [probe][checkpoint] intermediate reward)
    let rows: Vec<(f64, Vec<Vec<f64>>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(traj, &(p, t))| -> Result<(f64, Vec<Vec<f64>>)> {
            let prompt = &prompts[p];
            let root = StreamId::root(cfg.master_seed).child("prompt").index(prompt.class_id);
            let mut sample = SampleState::new(
                TokenGrid::empty(cfg.width, cfg.height, cfg.vocab_size)?,
                root.child("gen").index(t as u64),
            );
            let mut snapshots = Vec::with_capacity(frontiers.len());
            for &f in &frontiers {
                let count = f - sample.grid().frontier();
                sample.generate(prompt, count, &cfg.generator)?;
                snapshots.push(sample.clone());
            }
            let remaining = sample.grid().total() - sample.grid().frontier();
            sample.generate(prompt, remaining, &cfg.generator)?;
            let final_reward = oracle.score(sample.grid(), prompt)?;

            let mut noise = StreamId::root(cfg.master_seed).child("noise").index(traj as u64).rng();
            let mut per_probe = Vec::with_capacity(probes.len());
            for probe in probes {
                let mut series = Vec::with_capacity(frontiers.len());
                for (c, snap) in snapshots.iter().enumerate() {
                    let value = match &probe.probe {
                        Probe::FinalReplay => final_reward,
                        Probe::Noise => noise.gen::<f64>(),
                        Probe::Strategy { strategy, fr } => {
                            let probe_cfg = ScalingConfig { fr: fr.unwrap_or(cfg.fr), ..cfg.clone() };
                            evaluate_sample(
                                &probe_cfg,
                                *strategy,
                                snap,
                                prompt,
                                &codebook,
                                oracle,
                                root.child("fill").index(c as u64).index(t as u64),
                                root.child("rollout").index(c as u64).index(t as u64),
                            )?
                            .0
                        }
                    };
                    series.push(value);
                }
                per_probe.push(series);
            }
            Ok((final_reward, per_probe))
        })
        .collect::<Result<_>>()?;

    let final_rewards: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut intermediate = vec![vec![Vec::with_capacity(batch); frontiers.len()]; probes.len()];
    for (_, per_probe) in &rows {
        for (p, series) in per_probe.iter().enumerate() {
            for (c, &v) in series.iter().enumerate() {
                intermediate[p][c].push(v);
            }
        }
    }
    let mut cells = Vec::new();
    for (p, probe) in probes.iter().enumerate() {
        for (c, &frontier) in frontiers.iter().enumerate() {
            let (rho, note) = match spearman(&intermediate[p][c], &final_rewards) {
                Ok(r) => (Some(r), None),
                Err(Error::Undefined(msg)) => (None, Some(msg)),
                Err(e) => return Err(e),
            };
            cells.push(CorrelationCell { probe: probe.label.clone(), checkpoint: c, frontier, rho, n: batch, note });
        }
    }
    Ok(CorrelationTable { cells, final_rewards, intermediate })
}

/// One-sided paired sign test of `treatment > control`. Ties are dropped.
/// Returns `(wins, losses, p_value)`.
pub fn sign_test_greater(treatment: &[f64], control: &[f64]) -> Result<(u64, u64, f64)> {
    if treatment.len() != control.len() {
        return Err(Error::Shape("sign test needs paired samples".into()));
    }
    let wins = treatment.iter().zip(control).filter(|(a, b)| a > b).count() as u64;
    let losses = treatment.iter().zip(control).filter(|(a, b)| a < b).count() as u64;
    let n = wins + losses;
    if n == 0 {
        return Ok((0, 0, 1.0));
    }
    let binom = Binomial::new(0.5, n).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = if wins == 0 { 1.0 } else { binom.sf(wins - 1) };
    Ok((wins, losses, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SyntheticOracle;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // 1 - 6 * 2 / (3 * 8)
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn entropy_examples() {
        let t = 5;
        let uniform = AttentionMap::new(0, t, vec![1.0 / t as f64; t * t]).unwrap();
        assert!((attention_entropy(&uniform) - (t as f64).log2()).abs() < 1e-12);
        let eye: Vec<f64> = (0..t * t).map(|i| if i / t == i % t { 1.0 } else { 0.0 }).collect();
        assert_eq!(attention_entropy(&AttentionMap::new(0, t, eye).unwrap()), 0.0);
        let m = AttentionMap::new(1, 2, vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let row2 = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        assert!((attention_entropy(&m) - (1.0 + row2) / 2.0).abs() < 1e-15);
        assert!((row2 - 0.811_278_124_459_132_8).abs() < 1e-15);
        assert!(matches!(AttentionMap::new(0, 2, vec![0.5, 0.6, 0.5, 0.5]), Err(Error::Validation(_))));
        assert!(AttentionMap::new(0, 2, vec![1.5, -0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn sign_test_values() {
        let (w, l, p) = sign_test_greater(&[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((w, l), (3, 0));
        assert!((p - 0.125).abs() < 1e-12);
        let (_, _, p) = sign_test_greater(&[1.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn replay_and_noise_probes() {
        let cfg = ScalingConfig { width: 8, height: 8, checkpoint_rows: 2, ..Default::default() };
        let prompts: Vec<PromptSpec> = (0..40).map(|i| PromptSpec::library(i, 8, 8, 16).unwrap()).collect();
        let probes = vec![
            LabeledProbe { label: "replay".into(), probe: Probe::FinalReplay },
            LabeledProbe { label: "noise".into(), probe: Probe::Noise },
            LabeledProbe::strategy(IntermediateStrategy::ZeroPadding),
        ];
        let table = correlation_experiment(&cfg, &probes, &prompts, 5, &SyntheticOracle::default()).unwrap();
        assert_eq!(table.final_rewards.len(), 200);
        for rho in table.series("replay") {
            assert_eq!(rho, Some(1.0));
        }
        for rho in table.series("noise") {
            assert!(rho.unwrap().abs() <= 0.2, "{rho:?}");
        }
        // Probes do not steer: a different probe set sees identical finals.
        let alone = correlation_experiment(&cfg, &probes[..1], &prompts, 5, &SyntheticOracle::default()).unwrap();
        assert_eq!(alone.final_rewards, table.final_rewards);
        assert!(correlation_experiment(&cfg, &probes, &prompts[..1], 1, &SyntheticOracle::default()).is_err());
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(xs in prop::collection::vec(-50i32..50, 3..30), seed: u64) {
            let mut rng = StreamId::root(seed).rng();
            let ys: Vec<f64> = xs.iter().map(|_| rng.gen_range(-5..5) as f64).collect();
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            if let Ok(r) = spearman(&xs, &ys) {
                let tx: Vec<f64> = xs.iter().map(|x| (x / 10.0).exp() * 3.0 + 1.0).collect();
                let r2 = spearman(&tx, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn entropy_bounded(t in 1usize..8, seed: u64) {
            let mut rng = StreamId::root(seed).rng();
            let mut w = Vec::new();
            for _ in 0..t {
                let row: Vec<f64> = (0..t).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = row.iter().sum();
                w.extend(row.iter().map(|x| x / s));
            }
            let e = attention_entropy(&AttentionMap::new(0, t, w).unwrap());
            prop_assert!(e >= 0.0 && e <= (t as f64).log2() + 1e-12);
        }
    }
}
