//! Diversity reward: one minus a sample's highest feature similarity to the
//! samples before it in the batch.

use crate::error::{Error, Result};
use crate::sample::SampleState;
use crate::toy::{Codebook, Image};

pub trait FeatureExtractor: Send + Sync {
    fn features(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Side of the mean-gray pooling grid.
const POOL: usize = 4;

/// Token histogram of the re-encoded image followed by a 4x4 grid of mean
/// gray levels, L2-normalized. Length `V + 16`, all entries non-negative.
#[derive(Clone, Copy, Debug)]
pub struct ToyExtractor {
    pub codebook: Codebook,
}

fn cell_range(i: usize, n: usize) -> std::ops::Range<usize> {
    let lo = i * n / POOL;
    let hi = ((i + 1) * n / POOL).max(lo + 1).min(n);
    lo..hi
}

impl FeatureExtractor for ToyExtractor {
    fn features(&self, image: &Image) -> Result<Vec<f64>> {
        if image.is_empty() {
            return Err(Error::Shape("cannot extract features from an empty image".into()));
        }
        let grid = self.codebook.encode(image)?;
        let tokens = grid.complete_tokens()?;
        let mut f = vec![0.0; self.codebook.vocab_size as usize + POOL * POOL];
        for &t in tokens {
            f[t as usize] += 1.0 / tokens.len() as f64;
        }
        let base = self.codebook.vocab_size as usize;
        for cy in 0..POOL {
            for cx in 0..POOL {
                let (ys, xs) = (cell_range(cy, image.height()), cell_range(cx, image.width()));
                let n = (ys.len() * xs.len()) as f64;
                let sum: f64 = ys.flat_map(|y| xs.clone().map(move |x| (x, y))).map(|(x, y)| image.at(x, y)).sum();
                f[base + cy * POOL + cx] = sum / n;
            }
        }
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= norm);
        Ok(f)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Leave-one-out diversity over precomputed feature vectors.
///
/// For `i >= 1`, `R_d(i) = 1 - max_{j<i} cos(f_i, f_j)`. Sample 0 has no
/// predecessors and receives the largest `R_d` among the others; a lone
/// sample gets 1.
pub fn diversity_from_features(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len();
    if n == 0 {
        return Vec::new();
    }
    let mut scores = vec![1.0; n];
    for i in 1..n {
        let max_sim = (0..i)
            .map(|j| cosine(&features[i], &features[j]))
            .fold(f64::NEG_INFINITY, f64::max);
        scores[i] = 1.0 - max_sim;
    }
    if n > 1 {
        scores[0] = scores[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    scores
}

/// Diversity rewards of a batch sharing one frontier. Features come from the
/// decoded generated rows only.
pub fn diversity_scores(
    samples: &[SampleState],
    codebook: &Codebook,
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<f64>> {
    if let Some(first) = samples.first() {
        if samples.iter().any(|s| s.grid().frontier() != first.grid().frontier()) {
            return Err(Error::Shape("samples must share a frontier".into()));
        }
    }
    let features = samples
        .iter()
        .map(|s| extractor.features(&codebook.decode_partial(s.grid())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(diversity_from_features(&features))
}
