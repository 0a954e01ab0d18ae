use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("silent signal cannot be calibrated")]
    SilentSignal,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("no fundamental detected")]
    NoFundamental,
    #[error("empty band [{lo}, {hi}) Hz")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("no frames")]
    NoFrames,
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("unknown hearing profile '{0}' (known profiles: NH, Slope35-7,0,0)")]
    UnknownProfile(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
