//! Desk-scale stand-ins for the generator, the VQ codec and the reward model.
//!
//! The codec maps token `v` to the flat gray level `v / (V - 1)` painted over
//! a `P x P` patch, so encode/decode round-trips exactly while resizing a
//! decoded image (as the cropping baseline does) still scrambles tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Token, TokenGrid};
use crate::rng::StreamId;

/// Row-major grayscale image, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, gray: f64) -> Self {
        Image { width, height, pixels: vec![gray; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Nearest-neighbor resize: destination pixel `(x, y)` samples source
    /// `(x * w / W, y * h / H)` with integer division.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Image> {
        if self.is_empty() || width == 0 || height == 0 {
            return Err(Error::Shape("cannot resize an empty image".into()));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                pixels.push(self.at(sx, sy));
            }
        }
        Ok(Image { width, height, pixels })
    }

    /// 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Io(e.to_string()))?;
            let data: Vec<u8> = self
                .pixels
                .iter()
                .map(|g| (g.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            writer.write_image_data(&data).map_err(|e| Error::Io(e.to_string()))?;
        }
        Ok(out)
    }

    /// Reads an 8-bit grayscale PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::Io(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Shape("png too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Io(e.to_string()))?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Shape("expected 8-bit grayscale png".into()));
        }
        let pixels = buf[..info.buffer_size()].iter().map(|&b| f64::from(b) / 255.0).collect();
        Image::new(info.width as usize, info.height as usize, pixels)
    }
}

/// Gray-level codec: token `v` paints a `patch_size`-square of gray `v / (V-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub vocab_size: u32,
    pub patch_size: usize,
}

impl Codebook {
    pub fn new(vocab_size: u32, patch_size: usize) -> Result<Self> {
        if vocab_size == 0 || vocab_size > 256 {
            return Err(Error::Parameter(format!("vocab_size {vocab_size} not in 1..=256")));
        }
        if patch_size == 0 {
            return Err(Error::Parameter("patch_size must be at least 1".into()));
        }
        Ok(Codebook { vocab_size, patch_size })
    }

    pub fn gray(&self, token: Token) -> f64 {
        if self.vocab_size <= 1 {
            0.0
        } else {
            f64::from(token) / f64::from(self.vocab_size - 1)
        }
    }

    /// Token whose gray level is nearest `gray`; ties go to the smaller id.
    pub fn nearest(&self, gray: f64) -> Token {
        if self.vocab_size <= 1 {
            return 0;
        }
        let top = self.vocab_size - 1;
        let scaled = gray.clamp(0.0, 1.0) * f64::from(top);
        let lo = (scaled.floor() as Token).min(top);
        let hi = (lo + 1).min(top);
        if (gray - self.gray(hi)).abs() < (gray - self.gray(lo)).abs() {
            hi
        } else {
            lo
        }
    }

    fn paint(&self, tokens: &[Token], cols: usize, rows: usize) -> Image {
        let p = self.patch_size;
        let (w, h) = (cols * p, rows * p);
        let mut pixels = vec![0.0; w * h];
        for (i, &t) in tokens.iter().enumerate() {
            let g = self.gray(t);
            let (r, c) = (i / cols, i % cols);
            for y in r * p..(r + 1) * p {
                pixels[y * w + c * p..y * w + (c + 1) * p].iter_mut().for_each(|px| *px = g);
            }
        }
        Image { width: w, height: h, pixels }
    }

    /// Decodes a complete grid.
    pub fn decode(&self, grid: &TokenGrid) -> Result<Image> {
        let tokens = grid.complete_tokens()?;
        Ok(self.paint(tokens, grid.width(), grid.height()))
    }

    /// Decodes only the fully generated rows of a partial grid.
    pub fn decode_partial(&self, grid: &TokenGrid) -> Result<Image> {
        let rows = grid.rows_generated();
        if rows == 0 {
            return Err(Error::Empty("no complete row has been generated".into()));
        }
        Ok(self.paint(&grid.generated()[..rows * grid.width()], grid.width(), rows))
    }

    /// Re-encodes an image patch by patch to the nearest gray level.
    pub fn encode(&self, image: &Image) -> Result<TokenGrid> {
        let p = self.patch_size;
        if image.is_empty() || !image.width.is_multiple_of(p) || !image.height.is_multiple_of(p) {
            return Err(Error::Shape(format!(
                "{}x{} image is not a whole number of {p}x{p} patches",
                image.width, image.height
            )));
        }
        let (cols, rows) = (image.width / p, image.height / p);
        let area = (p * p) as f64;
        let mut tokens = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let mut sum = 0.0;
                for y in r * p..(r + 1) * p {
                    sum += image.pixels[y * image.width + c * p..y * image.width + (c + 1) * p]
                        .iter()
                        .sum::<f64>();
                }
                tokens.push(self.nearest(sum / area));
            }
        }
        TokenGrid::from_prefix(cols, rows, self.vocab_size, &tokens)
    }

    /// Crops the generated rows, stretches them to the full grid size with
    /// nearest-neighbor sampling and re-encodes.
    pub fn crop_resize_reencode(&self, grid: &TokenGrid) -> Result<TokenGrid> {
        let crop = self.decode_partial(grid)?;
        let full = crop.resize_nearest(grid.width() * self.patch_size, grid.height() * self.patch_size)?;
        self.encode(&full)
    }
}

/// A prompt: an identifier plus the complete target pattern it describes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub class_id: u64,
    pub template: TokenGrid,
}

impl PromptSpec {
    pub fn new(class_id: u64, template: TokenGrid) -> Result<Self> {
        if !template.is_complete() {
            return Err(Error::Incomplete("prompt template must be a complete grid".into()));
        }
        Ok(PromptSpec { class_id, template })
    }

    /// Procedural template for `class_id`. The family cycles with the id
    /// (stripes, blobs, gradients, ...); its parameters come from a stream
    /// seeded by the id, so the library is fixed across runs.
    pub fn library(class_id: u64, width: usize, height: usize, vocab_size: u32) -> Result<Self> {
        let mut rng = StreamId::root(class_id).child("prompt").rng();
        let v = vocab_size;
        let pick = |rng: &mut crate::rng::Stream| rng.gen_range(0..v);
        let mut cells = vec![0 as Token; width * height];
        match class_id % 6 {
            0 => {
                // horizontal stripes
                let period = rng.gen_range(1..=4usize);
                let colors: Vec<Token> = (0..rng.gen_range(2..=3)).map(|_| pick(&mut rng)).collect();
                for (i, c) in cells.iter_mut().enumerate() {
                    *c = colors[(i / width / period) % colors.len()];
                }
            }
            1 => {
                // vertical stripes
                let period = rng.gen_range(1..=4usize);
                let colors: Vec<Token> = (0..rng.gen_range(2..=3)).map(|_| pick(&mut rng)).collect();
                for (i, c) in cells.iter_mut().enumerate() {
                    *c = colors[(i % width / period) % colors.len()];
                }
            }
            2 => {
                // blobs: nearest of a few random centers
                let n = rng.gen_range(2..=5);
                let centers: Vec<(f64, f64, Token)> = (0..n)
                    .map(|_| {
                        (
                            rng.gen_range(0.0..width as f64),
                            rng.gen_range(0.0..height as f64),
                            pick(&mut rng),
                        )
                    })
                    .collect();
                for (i, c) in cells.iter_mut().enumerate() {
                    let (x, y) = ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5);
                    let nearest = centers
                        .iter()
                        .min_by(|a, b| {
                            let da = (a.0 - x).powi(2) + (a.1 - y).powi(2);
                            let db = (b.0 - x).powi(2) + (b.1 - y).powi(2);
                            da.total_cmp(&db)
                        })
                        .expect("at least two centers");
                    *c = nearest.2;
                }
            }
            3 => {
                // linear gradient in a random direction
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let (dx, dy) = (angle.cos(), angle.sin());
                let span = (dx.abs() * width as f64 + dy.abs() * height as f64).max(1.0);
                let lo = if dx < 0.0 { -dx * width as f64 } else { 0.0 } + if dy < 0.0 { -dy * height as f64 } else { 0.0 };
                for (i, c) in cells.iter_mut().enumerate() {
                    let (x, y) = ((i % width) as f64, (i / width) as f64);
                    let t = ((x * dx + y * dy + lo) / span).clamp(0.0, 0.999_999);
                    *c = (t * f64::from(v)) as Token;
                }
            }
            4 => {
                // coarse checker of square tiles
                let tile = rng.gen_range(2..=4usize);
                let (a, b) = (pick(&mut rng), pick(&mut rng));
                for (i, c) in cells.iter_mut().enumerate() {
                    let (x, y) = (i % width / tile, i / width / tile);
                    *c = if (x + y) % 2 == 0 { a } else { b };
                }
            }
            _ => {
                // background with a rectangular object
                let (bg, fg) = (pick(&mut rng), pick(&mut rng));
                let x0 = rng.gen_range(0..width.max(2) / 2);
                let y0 = rng.gen_range(0..height.max(2) / 2);
                let x1 = rng.gen_range(x0 + 1..=width);
                let y1 = rng.gen_range(y0 + 1..=height);
                for (i, c) in cells.iter_mut().enumerate() {
                    let (x, y) = (i % width, i / width);
                    *c = if (x0..x1).contains(&x) && (y0..y1).contains(&y) { fg } else { bg };
                }
            }
        }
        PromptSpec::new(class_id, TokenGrid::from_prefix(width, height, vocab_size, &cells)?)
    }
}

/// Logit weights of the toy next-token model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Weight of the indicator `v == template[t]`.
    pub alpha: f64,
    /// Weight of the fraction of generated 4-neighbors equal to `v`.
    pub beta: f64,
    pub temperature: f64,
    /// Take the arg-max token (smallest id on ties) instead of sampling.
    pub greedy: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams { alpha: 2.0, beta: 1.0, temperature: 1.0, greedy: false }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Parameter("generator weights must be finite".into()));
        }
        Ok(())
    }

    /// Unnormalized logits for the next cell of `grid`.
    pub fn logits(&self, grid: &TokenGrid, prompt: &PromptSpec) -> Vec<f64> {
        let t = grid.frontier();
        let w = grid.width();
        let mut logits = vec![0.0; grid.vocab_size() as usize];
        if let Some(target) = prompt.template.get(t) {
            logits[target as usize] += self.alpha;
        }
        // In row-major order only the left and upper neighbors exist yet.
        let neighbors: Vec<Token> = [
            (t % w > 0).then(|| t - 1),
            (t >= w).then(|| t - w),
        ]
        .into_iter()
        .flatten()
        .filter_map(|i| grid.get(i))
        .collect();
        if !neighbors.is_empty() {
            let share = self.beta / neighbors.len() as f64;
            for n in neighbors {
                logits[n as usize] += share;
            }
        }
        logits
    }
}

/// Appends `count` tokens to `grid`, each drawn from the toy conditional
/// `p(x_t | prompt, x_<t)`.
pub fn generate_into<R: Rng + ?Sized>(
    grid: &mut TokenGrid,
    prompt: &PromptSpec,
    count: usize,
    params: &GeneratorParams,
    rng: &mut R,
) -> Result<()> {
    params.validate()?;
    if !grid.same_shape(&prompt.template) {
        return Err(Error::Shape("grid and prompt template differ in shape".into()));
    }
    if grid.frontier() + count > grid.total() {
        return Err(Error::Capacity(format!(
            "cannot generate {count} tokens past frontier {} of {}",
            grid.frontier(),
            grid.total()
        )));
    }
    let mut weights = vec![0.0; grid.vocab_size() as usize];
    for _ in 0..count {
        let logits = params.logits(grid, prompt);
        let next = if params.greedy {
            let mut best = 0;
            for (v, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = v;
                }
            }
            best as Token
        } else {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (w, &l) in weights.iter_mut().zip(&logits) {
                *w = ((l - max) / params.temperature).exp();
                sum += *w;
            }
            let mut u = rng.gen::<f64>() * sum;
            let mut chosen = weights.len() - 1;
            for (v, &w) in weights.iter().enumerate() {
                if u < w {
                    chosen = v;
                    break;
                }
                u -= w;
            }
            chosen as Token
        };
        grid.push(next)?;
    }
    Ok(())
}

/// Weighted sum of template agreement and neighbor smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReward {
    pub w_match: f64,
    pub w_smooth: f64,
}

impl Default for SyntheticReward {
    fn default() -> Self {
        SyntheticReward { w_match: 0.7, w_smooth: 0.3 }
    }
}

impl SyntheticReward {
    /// Scores a complete grid against the prompt's template. A grid with no
    /// adjacent pairs (1x1) counts as perfectly smooth.
    pub fn score(&self, grid: &TokenGrid, prompt: &PromptSpec) -> Result<f64> {
        let tokens = grid.complete_tokens()?;
        if !grid.same_shape(&prompt.template) {
            return Err(Error::Shape("grid and prompt template differ in shape".into()));
        }
        let template = prompt.template.complete_tokens()?;
        let matches = tokens.iter().zip(template).filter(|(a, b)| a == b).count();
        let (w, h) = (grid.width(), grid.height());
        let mut equal = 0usize;
        for r in 0..h {
            for c in 0..w {
                let t = tokens[r * w + c];
                if c + 1 < w && tokens[r * w + c + 1] == t {
                    equal += 1;
                }
                if r + 1 < h && tokens[(r + 1) * w + c] == t {
                    equal += 1;
                }
            }
        }
        let pairs = h * (w - 1) + w * (h - 1);
        let smooth = if pairs == 0 { 1.0 } else { equal as f64 / pairs as f64 };
        let matched = matches as f64 / tokens.len() as f64;
        Ok(self.w_match * matched + self.w_smooth * smooth)
    }
}

/// Convenience wrapper with the default weights.
pub fn synthetic_reward(grid: &TokenGrid, prompt: &PromptSpec) -> Result<f64> {
    SyntheticReward::default().score(grid, prompt)
}
