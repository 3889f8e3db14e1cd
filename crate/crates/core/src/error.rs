use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors produced by the codec core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its documented domain.
    InvalidParam(String),
    /// An anchor violates a cloud invariant.
    Validation { anchor: usize, field: &'static str, reason: String },
    /// Two inputs that must agree in length or width do not.
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    IndexOutOfRange { index: usize, len: usize },
    /// Every anchor scored below the pruning threshold.
    DegenerateScene,
    EmptyCloud,
    /// A level-2 anchor has no level-1 parent in its coarse voxel.
    MissingParent(usize),
    NonFinite(&'static str),
    /// A quantized symbol left the coded alphabet.
    Overflow { value: i64, bound: i64 },
    CorruptStream { section: &'static str, offset: usize, reason: &'static str },
    /// Decoder-side probability models disagree with the encoder's digest.
    ModelMismatch { section: &'static str },
    /// The encoder's own decode of its output disagrees with what it coded.
    SelfCheck(&'static str),
    /// An error raised inside one stage of the encode/decode pipeline.
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn corrupt(section: &'static str, offset: usize, reason: &'static str) -> Self {
        Error::CorruptStream { section, offset, reason }
    }

    /// Strips [`Error::Stage`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Validation { anchor, field, reason } => {
                write!(f, "anchor {anchor}: invalid {field}: {reason}")
            }
            Error::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, found {found}")
            }
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::DegenerateScene => f.write_str("every anchor falls below the pruning threshold"),
            Error::EmptyCloud => f.write_str("anchor cloud is empty"),
            Error::MissingParent(j) => write!(f, "level-2 anchor {j} has no level-1 parent"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Overflow { value, bound } => {
                write!(f, "symbol {value} outside the coded alphabet [-{bound}, {bound}]")
            }
            Error::CorruptStream { section, offset, reason } => {
                write!(f, "corrupt stream in {section} section at byte {offset}: {reason}")
            }
            Error::ModelMismatch { section } => {
                write!(f, "decoder models disagree with the encoder digest in {section} section")
            }
            Error::SelfCheck(what) => write!(f, "encoder self-check failed: {what}"),
            Error::Stage { stage, source } => write!(f, "{stage}: {source}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, source: Box::new(e) })
    }
}
