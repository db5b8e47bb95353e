use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: failed to decode image: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}: expected an 8-bit grayscale image, found {found}")]
    NonGrayscale { path: PathBuf, found: String },

    #[error("scan {scan_id}: dimensions {found:?} differ from session dimensions {expected:?}")]
    DimensionMismatch {
        scan_id: u64,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("no pose for scan {0}")]
    MissingPose(u64),

    #[error("session at {0} contains no scans")]
    EmptySession(PathBuf),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("corrupt descriptor file: {0}")]
    CorruptFile(String),

    #[error("bad magic bytes {0:?}, not a descriptor file")]
    BadMagic([u8; 4]),

    #[error("config hash mismatch: {expected:#018x} vs {found:#018x}")]
    ConfigHashMismatch { expected: u64, found: u64 },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{dim} of size {size} is not divisible by block size {block}")]
    Divisibility {
        dim: &'static str,
        size: usize,
        block: usize,
    },

    #[error("descriptor database is empty")]
    EmptyDatabase,

    #[error("node index {index} out of range for graph of {nodes} nodes")]
    IndexOutOfRange { index: usize, nodes: usize },

    #[error("information matrix is not symmetric positive-definite")]
    NotSpd,

    #[error("pose graph is disconnected: node {0} is not reachable from the anchored node")]
    DisconnectedGraph(usize),

    #[error("normal equations are singular after damping")]
    SingularSystem,

    #[error("no query has a true revisit, metric is undefined")]
    NoPositives,

    #[error("session has no odometry columns")]
    NoOdometry,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by invalid input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: PathBuf::new(),
                source,
            },
            other => Error::Malformed(format!("csv: {other:?}")),
        }
    }
}
