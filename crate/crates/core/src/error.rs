//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed wav: {0}")]
    MalformedWav(String),

    #[error("malformed grid file: {0}")]
    MalformedGrid(String),

    #[error("channels unsupported: expected mono, got {0}")]
    UnsupportedChannels(u16),

    #[error("bit depth unsupported: expected 16-bit PCM, got {0}")]
    UnsupportedBitDepth(u16),

    #[error("overrange sample {value} at index {index}; enable clamping or rescale")]
    Overrange { index: usize, value: f64 },

    #[error("zero-energy {0}")]
    ZeroEnergy(&'static str),

    #[error("silent input: no power in the level-alignment band")]
    SilentInput,

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("grid dimension mismatch: {expected:?} vs {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("waveform too short: {len} samples, need at least {need}")]
    WaveformTooShort { len: usize, need: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown mask kind: {0:?}")]
    UnknownMaskKind(String),

    #[error("unknown loss kind: {0:?}")]
    UnknownLossKind(String),

    #[error("non-finite loss at step {step}; aborting fit")]
    Divergence { step: usize },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
