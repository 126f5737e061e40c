use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expected a single-channel image, got {0} channels")]
    NotSingleChannel(usize),

    #[error("image shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no circle found in edge map")]
    NoCircle,

    #[error("eye samples {gap_ms} ms apart exceed the {max_ms} ms pairing window")]
    EyeTimestampGap { gap_ms: i64, max_ms: i64 },

    #[error("gaze point maps outside the target frame")]
    OffScreenGaze,

    #[error("at least {needed} samples required, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("LoG kernel radius {radius} is below ceil(3 sigma) = {min}")]
    KernelTruncated { radius: usize, min: usize },

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("trajectories share no timestamps")]
    NoCommonTimestamps,

    #[error("zero pixel baseline in calibration ({0} axis)")]
    ZeroBaseline(&'static str),

    #[error("no class has a defined AP")]
    NoDefinedClasses,

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Placeholder path for parse errors from in-memory readers.
pub(crate) const INPUT: &str = "<input>";

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: PathBuf::from(INPUT),
            line,
            message: message.into(),
        }
    }

    /// Attaches a file name to a parse error raised by an in-memory reader.
    pub(crate) fn at_path(self, file: &std::path::Path) -> Self {
        match self {
            Error::Parse { path, line, message } if path.as_os_str() == INPUT => Error::Parse {
                path: file.to_path_buf(),
                line,
                message,
            },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
