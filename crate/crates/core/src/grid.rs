//! Token grids, block segmentation and filling schemes.
//!
//! Blocks are indexed from 0 in code and in every external format. A grid of
//! `T = width * height` tokens with block size `K` has `M = T / K` blocks, of
//! which the first `m = frontier / K` are generated.
//!
//! # Record format
//!
//! Grids (and prompt fixtures) are stored as a small text record:
//!
//! ```text
//! frtts-grid 1
//! <width> <height> <vocab_size> <frontier>
//! <generated tokens, one grid row per line, space separated>
//! ```
//!
//! Only the generated prefix `tokens[0..frontier)` is written; the last line
//! may be a partial row. Lines starting with `#` are ignored.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

const RECORD_MAGIC: &str = "frtts-grid 1";

/// A `width x height` lattice of token ids generated in row-major order.
///
/// Cells at or past `frontier` hold the sentinel `vocab_size` and are never
/// read by scoring code except through an explicit filling or padding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenGrid {
    width: usize,
    height: usize,
    vocab_size: u32,
    tokens: Vec<Token>,
    frontier: usize,
}

impl TokenGrid {
    pub fn empty(width: usize, height: usize, vocab_size: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("grid must be non-empty, got {width}x{height}")));
        }
        if vocab_size == 0 {
            return Err(Error::Parameter("vocab_size must be at least 1".into()));
        }
        Ok(TokenGrid {
            width,
            height,
            vocab_size,
            tokens: vec![vocab_size; width * height],
            frontier: 0,
        })
    }

    /// Builds a grid whose generated prefix is `prefix`.
    pub fn from_prefix(width: usize, height: usize, vocab_size: u32, prefix: &[Token]) -> Result<Self> {
        let mut g = Self::empty(width, height, vocab_size)?;
        if prefix.len() > g.total() {
            return Err(Error::Capacity(format!(
                "prefix of {} tokens exceeds grid of {}",
                prefix.len(),
                g.total()
            )));
        }
        for &t in prefix {
            g.push(t)?;
        }
        Ok(g)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn frontier(&self) -> usize {
        self.frontier
    }

    pub fn total(&self) -> usize {
        self.width * self.height
    }

    pub fn sentinel(&self) -> Token {
        self.vocab_size
    }

    pub fn is_complete(&self) -> bool {
        self.frontier == self.total()
    }

    /// The generated prefix.
    pub fn generated(&self) -> &[Token] {
        &self.tokens[..self.frontier]
    }

    /// All tokens of a complete grid.
    pub fn complete_tokens(&self) -> Result<&[Token]> {
        if !self.is_complete() {
            return Err(Error::Incomplete(format!(
                "{} of {} tokens generated",
                self.frontier,
                self.total()
            )));
        }
        Ok(&self.tokens)
    }

    /// Token at a flat index, `None` when not yet generated.
    pub fn get(&self, idx: usize) -> Option<Token> {
        (idx < self.frontier).then(|| self.tokens[idx])
    }

    /// Number of fully generated rows.
    pub fn rows_generated(&self) -> usize {
        self.frontier / self.width
    }

    /// Appends one token at the frontier.
    pub fn push(&mut self, token: Token) -> Result<()> {
        if self.frontier >= self.total() {
            return Err(Error::Capacity("grid is already complete".into()));
        }
        if token >= self.vocab_size {
            return Err(Error::Parameter(format!(
                "token {token} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        self.tokens[self.frontier] = token;
        self.frontier += 1;
        Ok(())
    }

    /// The grid with every ungenerated cell replaced by `pad`.
    pub fn padded(&self, pad: Token) -> Result<TokenGrid> {
        if pad >= self.vocab_size {
            return Err(Error::Parameter(format!("pad token {pad} outside vocabulary")));
        }
        let mut tokens = self.tokens.clone();
        tokens[self.frontier..].iter_mut().for_each(|t| *t = pad);
        Ok(TokenGrid { tokens, frontier: self.total(), ..self.clone() })
    }

    /// Keeps only the first `frontier` tokens.
    pub fn truncated(&self, frontier: usize) -> Result<TokenGrid> {
        if frontier > self.frontier {
            return Err(Error::Capacity(format!(
                "cannot truncate to {frontier}, only {} generated",
                self.frontier
            )));
        }
        let mut tokens = self.tokens.clone();
        let sentinel = self.sentinel();
        tokens[frontier..].iter_mut().for_each(|t| *t = sentinel);
        Ok(TokenGrid { tokens, frontier, ..self.clone() })
    }

    pub fn same_shape(&self, other: &TokenGrid) -> bool {
        self.width == other.width && self.height == other.height && self.vocab_size == other.vocab_size
    }

    /// Serializes the grid as a text record (see module docs).
    pub fn to_record(&self) -> String {
        let mut out = format!(
            "{RECORD_MAGIC}\n{} {} {} {}\n",
            self.width, self.height, self.vocab_size, self.frontier
        );
        for row in self.generated().chunks(self.width) {
            let line: Vec<String> = row.iter().map(|t| t.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_record(text: &str) -> Result<TokenGrid> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some(RECORD_MAGIC) => {}
            other => return Err(Error::Validation(format!("bad grid record header: {other:?}"))),
        }
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::Validation("missing grid dimensions".into()))?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|e| Error::Validation(format!("bad dimension {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let [width, height, vocab, frontier] = header[..] else {
            return Err(Error::Validation("grid dimensions need 4 fields".into()));
        };
        let vocab = u32::try_from(vocab).map_err(|_| Error::Validation("vocab_size too large".into()))?;
        let mut prefix = Vec::with_capacity(frontier);
        for line in lines {
            for s in line.split_whitespace() {
                prefix.push(s.parse::<Token>().map_err(|e| Error::Validation(format!("bad token {s:?}: {e}")))?);
            }
        }
        if prefix.len() != frontier {
            return Err(Error::Validation(format!(
                "record declares frontier {frontier} but holds {} tokens",
                prefix.len()
            )));
        }
        TokenGrid::from_prefix(width, height, vocab, &prefix)
    }
}

/// Segmentation of a grid into blocks of `block_size` consecutive tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub block_size: usize,
    pub total_blocks: usize,
    pub generated_blocks: usize,
}

impl BlockPartition {
    pub fn ungenerated_blocks(&self) -> usize {
        self.total_blocks - self.generated_blocks
    }

    /// Number of distinct filling schemes, saturating at `u64::MAX`.
    pub fn scheme_space(&self) -> u64 {
        let base = self.generated_blocks as u64;
        (0..self.ungenerated_blocks()).fold(1u64, |acc, _| acc.saturating_mul(base))
    }
}

/// Splits `total` tokens into blocks of `block_size` and counts how many of
/// them lie below `frontier`.
pub fn segment_blocks(frontier: usize, block_size: usize, total: usize) -> Result<BlockPartition> {
    if block_size == 0 {
        return Err(Error::Parameter("block size must be at least 1".into()));
    }
    if frontier > total {
        return Err(Error::Capacity(format!("frontier {frontier} past total {total}")));
    }
    if !total.is_multiple_of(block_size) {
        return Err(Error::Alignment(format!("block size {block_size} does not divide {total} tokens")));
    }
    if !frontier.is_multiple_of(block_size) {
        return Err(Error::Alignment(format!("block size {block_size} does not divide frontier {frontier}")));
    }
    Ok(BlockPartition {
        block_size,
        total_blocks: total / block_size,
        generated_blocks: frontier / block_size,
    })
}

/// For each ungenerated block `m + j`, the generated block copied into it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FillingScheme {
    generated_blocks: usize,
    assignments: Vec<usize>,
}

impl FillingScheme {
    pub fn new(generated_blocks: usize, assignments: Vec<usize>) -> Result<Self> {
        if let Some(bad) = assignments.iter().find(|&&s| s >= generated_blocks) {
            return Err(Error::Scheme(format!(
                "source block {bad} is not among the {generated_blocks} generated blocks"
            )));
        }
        Ok(FillingScheme { generated_blocks, assignments })
    }

    /// The scheme that fills nothing, for complete grids.
    pub fn empty(generated_blocks: usize) -> Self {
        FillingScheme { generated_blocks, assignments: Vec::new() }
    }

    pub fn generated_blocks(&self) -> usize {
        self.generated_blocks
    }

    /// Source block for each ungenerated slot, in slot order.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Copy with slot `slot` redirected to `source`.
    pub fn with_slot(&self, slot: usize, source: usize) -> Result<Self> {
        if slot >= self.assignments.len() {
            return Err(Error::Scheme(format!("slot {slot} out of range")));
        }
        if source >= self.generated_blocks {
            return Err(Error::Scheme(format!("source block {source} not generated")));
        }
        let mut next = self.clone();
        next.assignments[slot] = source;
        Ok(next)
    }

    /// Order-sensitive 64-bit FNV-1a over the little-endian `u64` encoding
    /// of each assignment.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &a in &self.assignments {
            for b in (a as u64).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }
}

/// Draws every ungenerated slot's source uniformly from the `m` generated blocks.
pub fn random_scheme<R: Rng + ?Sized>(generated: usize, total: usize, rng: &mut R) -> Result<FillingScheme> {
    if generated == 0 {
        return Err(Error::NoSource);
    }
    if generated > total {
        return Err(Error::Scheme(format!("{generated} generated blocks exceed {total} total")));
    }
    let assignments = (generated..total).map(|_| rng.gen_range(0..generated)).collect();
    Ok(FillingScheme { generated_blocks: generated, assignments })
}

/// Completes `grid` by copying each assigned source block into its slot.
pub fn apply_filling(grid: &TokenGrid, scheme: &FillingScheme, block_size: usize) -> Result<TokenGrid> {
    let part = segment_blocks(grid.frontier(), block_size, grid.total())?;
    if scheme.generated_blocks != part.generated_blocks {
        return Err(Error::Scheme(format!(
            "scheme built for {} generated blocks, grid has {}",
            scheme.generated_blocks, part.generated_blocks
        )));
    }
    if scheme.len() != part.ungenerated_blocks() {
        return Err(Error::Scheme(format!(
            "scheme has {} slots, grid needs {}",
            scheme.len(),
            part.ungenerated_blocks()
        )));
    }
    let mut tokens = grid.tokens.clone();
    for (j, &src) in scheme.assignments.iter().enumerate() {
        if src >= part.generated_blocks {
            return Err(Error::Scheme(format!("dangling source block {src}")));
        }
        let dst = (part.generated_blocks + j) * block_size;
        tokens.copy_within(src * block_size..(src + 1) * block_size, dst);
    }
    Ok(TokenGrid { tokens, frontier: grid.total(), ..grid.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn segment_examples() {
        let p = segment_blocks(96, 12, 576).unwrap();
        assert_eq!((p.generated_blocks, p.total_blocks), (8, 48));
        let p = segment_blocks(576, 12, 576).unwrap();
        assert_eq!((p.generated_blocks, p.total_blocks), (48, 48));
        assert!(matches!(segment_blocks(90, 12, 576), Err(Error::Alignment(_))));
        assert!(matches!(segment_blocks(0, 0, 576), Err(Error::Parameter(_))));
        assert!(matches!(segment_blocks(0, 7, 576), Err(Error::Alignment(_))));
    }

    #[test]
    fn random_scheme_edges() {
        let mut rng = StreamId::root(1).rng();
        let s = random_scheme(1, 4, &mut rng).unwrap();
        assert_eq!(s.assignments(), &[0, 0, 0]);
        assert!(random_scheme(4, 4, &mut rng).unwrap().is_empty());
        assert_eq!(random_scheme(0, 4, &mut rng), Err(Error::NoSource));
    }

    #[test]
    fn random_scheme_is_uniform() {
        // Pearson chi-square per slot, 3 degrees of freedom; four slots are tested,
        // so each uses the 99.9% quantile 16.266.
        let mut rng = StreamId::root(99).rng();
        let draws = 100_000;
        let mut counts = vec![[0u64; 4]; 4];
        for _ in 0..draws {
            let s = random_scheme(4, 8, &mut rng).unwrap();
            for (slot, &src) in s.assignments().iter().enumerate() {
                counts[slot][src] += 1;
            }
        }
        let expected = draws as f64 / 4.0;
        for slot in counts {
            let chi2: f64 = slot.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            assert!(chi2 < 16.266, "chi2 = {chi2}");
        }
    }

    #[test]
    fn apply_filling_examples() {
        let g = TokenGrid::from_prefix(2, 2, 10, &[5, 7]).unwrap();
        let s = FillingScheme::new(2, vec![0, 1]).unwrap();
        let f = apply_filling(&g, &s, 1).unwrap();
        assert_eq!(f.complete_tokens().unwrap(), &[5, 7, 5, 7]);
        assert_eq!(g.frontier(), 2);

        let g = TokenGrid::from_prefix(2, 4, 10, &[1, 2, 3, 4]).unwrap();
        let s = FillingScheme::new(2, vec![1, 0]).unwrap();
        let f = apply_filling(&g, &s, 2).unwrap();
        assert_eq!(f.complete_tokens().unwrap(), &[1, 2, 3, 4, 3, 4, 1, 2]);

        let full = TokenGrid::from_prefix(2, 2, 10, &[1, 2, 3, 4]).unwrap();
        assert_eq!(apply_filling(&full, &FillingScheme::empty(4), 1).unwrap(), full);
    }

    #[test]
    fn apply_filling_errors() {
        let g = TokenGrid::from_prefix(2, 4, 10, &[1, 2, 3]).unwrap();
        assert!(matches!(
            apply_filling(&g, &FillingScheme::empty(1), 2),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(FillingScheme::new(2, vec![2]), Err(Error::Scheme(_))));
        let g = TokenGrid::from_prefix(2, 4, 10, &[1, 2, 3, 4]).unwrap();
        let short = FillingScheme::new(2, vec![0]).unwrap();
        assert!(matches!(apply_filling(&g, &short, 2), Err(Error::Scheme(_))));
    }

    #[test]
    fn sentinel_and_padding() {
        let g = TokenGrid::from_prefix(3, 2, 4, &[1, 2]).unwrap();
        assert_eq!(g.get(1), Some(2));
        assert_eq!(g.get(2), None);
        assert!(g.complete_tokens().is_err());
        assert_eq!(g.padded(0).unwrap().complete_tokens().unwrap(), &[1, 2, 0, 0, 0, 0]);
        assert!(TokenGrid::from_prefix(3, 2, 4, &[4]).is_err());
    }

    #[test]
    fn scheme_hash_is_order_sensitive() {
        let a = FillingScheme::new(3, vec![0, 1, 2]).unwrap();
        let b = FillingScheme::new(3, vec![2, 1, 0]).unwrap();
        assert_ne!(a.hash64(), b.hash64());
        assert_eq!(a.hash64(), a.clone().hash64());
    }

    #[test]
    fn record_round_trip_and_rejects() {
        let g = TokenGrid::from_prefix(3, 3, 5, &[0, 1, 2, 3, 4]).unwrap();
        let text = g.to_record();
        assert_eq!(text, "frtts-grid 1\n3 3 5 5\n0 1 2\n3 4\n");
        assert_eq!(TokenGrid::from_record(&text).unwrap(), g);
        assert!(TokenGrid::from_record("frtts-grid 1\n3 3 5 2\n0\n").is_err());
        assert!(TokenGrid::from_record("nope\n").is_err());
    }

    fn grid_and_scheme() -> impl Strategy<Value = (TokenGrid, FillingScheme, usize, u64)> {
        (1usize..5, 1usize..5, 1usize..4, 2u32..6, any::<u64>()).prop_flat_map(|(w, h, k, v, seed)| {
            let total = w * h * k;
            let blocks = total / k;
            (1..=blocks, Just((w * k, h, k, v, seed)))
        })
        .prop_map(|(m, (w, h, k, v, seed))| {
            let mut rng = StreamId::root(seed).rng();
            let prefix: Vec<Token> = (0..m * k).map(|_| rng.gen_range(0..v)).collect();
            let g = TokenGrid::from_prefix(w, h, v, &prefix).unwrap();
            let s = random_scheme(m, w * h / k, &mut rng).unwrap();
            (g, s, k, seed)
        })
    }

    proptest! {
        #[test]
        fn filling_preserves_prefix_and_completes((g, s, k, _seed) in grid_and_scheme()) {
            let f = apply_filling(&g, &s, k).unwrap();
            prop_assert!(f.is_complete());
            prop_assert_eq!(&f.complete_tokens().unwrap()[..g.frontier()], g.generated());
            let p = segment_blocks(f.frontier(), k, f.total()).unwrap();
            prop_assert_eq!(p.generated_blocks, p.total_blocks);
            let m = g.frontier() / k;
            for (j, &src) in s.assignments().iter().enumerate() {
                let dst = (m + j) * k;
                prop_assert_eq!(
                    &f.complete_tokens().unwrap()[dst..dst + k],
                    &g.generated()[src * k..(src + 1) * k]
                );
            }
        }

        #[test]
        fn record_round_trip((g, _s, _k, _seed) in grid_and_scheme()) {
            prop_assert_eq!(TokenGrid::from_record(&g.to_record()).unwrap(), g);
        }
    }
}
