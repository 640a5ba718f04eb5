use crate::error::Result;
use crate::grid::TokenGrid;
use crate::rng::{Stream, StreamId};
use crate::toy::{generate_into, GeneratorParams, PromptSpec};

/// One parallel trajectory: its grid, its private generation stream and the
/// unified rewards it collected at past checkpoints.
#[derive(Clone, Debug)]
pub struct SampleState {
    grid: TokenGrid,
    stream: StreamId,
    rng: Stream,
    history: Vec<f64>,
}

impl SampleState {
    pub fn new(grid: TokenGrid, stream: StreamId) -> Self {
        SampleState { grid, stream, rng: stream.rng(), history: Vec::new() }
    }

    pub fn grid(&self) -> &TokenGrid {
        &self.grid
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn record(&mut self, reward: f64) {
        self.history.push(reward);
    }

    /// Samples `count` more tokens from the sample's own stream.
    pub fn generate(&mut self, prompt: &PromptSpec, count: usize, params: &GeneratorParams) -> Result<()> {
        generate_into(&mut self.grid, prompt, count, params, &mut self.rng)
    }

    /// Same grid and history, fresh generation stream.
    pub fn fork(&self, stream: StreamId) -> SampleState {
        SampleState { grid: self.grid.clone(), stream, rng: stream.rng(), history: self.history.clone() }
    }
}

/// Value-style wrapper over [`SampleState::generate`].
pub fn generate_tokens(
    mut sample: SampleState,
    prompt: &PromptSpec,
    count: usize,
    params: &GeneratorParams,
) -> Result<SampleState> {
    sample.generate(prompt, count, params)?;
    Ok(sample)
}
