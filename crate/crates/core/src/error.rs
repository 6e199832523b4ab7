use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty waveform")]
    EmptyWaveform,

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("unsupported channel count {0}; only mono audio is accepted")]
    ChannelCount(u16),

    #[error("unsupported audio encoding: {0}")]
    Encoding(String),

    #[error("window sum vanishes at sample {0}; the window/shift pair is not overlap-add invertible")]
    ZeroWindowSum(usize),

    #[error("no voiced frame in F0 contour")]
    AllUnvoiced,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported container version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "invalid_input",
            Error::EmptyWaveform => "empty_waveform",
            Error::SampleRateMismatch { .. } => "sample_rate",
            Error::ChannelCount(_) => "channel_count",
            Error::Encoding(_) => "encoding",
            Error::ZeroWindowSum(_) => "window_sum",
            Error::AllUnvoiced => "all_unvoiced",
            Error::NonFinite(_) => "non_finite",
            Error::Version { .. } => "version",
            Error::Corrupt(_) => "corrupt",
            Error::MissingParam(_) => "missing_param",
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
