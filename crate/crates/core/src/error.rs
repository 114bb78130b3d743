use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid scale {0}: expected 2, 3 or 4")]
    InvalidScale(usize),

    #[error("invalid chunking: cannot split {frames} frames into {chunks} chunks")]
    InvalidChunking { frames: usize, chunks: usize },

    #[error("invalid patch: {patch}px patch does not fit in {height}x{width} frame")]
    InvalidPatch { patch: usize, height: usize, width: usize },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer index {index} out of range ({count} layers)")]
    LayerRange { index: usize, count: usize },

    #[error("chunk index {index} out of range ({count} chunks)")]
    ChunkRange { index: usize, count: usize },

    #[error("training diverged at iteration {iteration}: loss is {loss}")]
    Divergence { iteration: usize, loss: f32 },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("bad bundle magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),

    #[error("bundle truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },

    #[error("bundle source: {0}")]
    Source(String),

    #[error("bundle manifest: {0}")]
    Manifest(String),

    #[error("bundle layout: {0}")]
    Layout(String),

    #[error("rate control: {0}")]
    Rate(String),

    #[error("budget of {budget} bytes is below the encoder floor of {floor} bytes")]
    BudgetBelowFloor { budget: u64, floor: u64 },
}
