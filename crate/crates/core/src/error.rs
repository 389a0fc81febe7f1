use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for a primitive.
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    /// A primitive received or produced a NaN or infinity.
    NonFinite { op: &'static str },
    /// `backward` called on a tensor that is not 1x1.
    NotScalar { shape: [usize; 2] },
    /// A sequence violates one of its invariants.
    InvalidSequence { position: usize, reason: String },
    /// A type or vertex id is outside its declared range.
    IndexOutOfRange {
        what: &'static str,
        position: usize,
        index: usize,
        bound: usize,
    },
    /// A query time lies outside the interval its context covers.
    OutsideInterval { t: f64, start: f64, end: f64 },
    /// Sequences with fewer than two events have nothing to score.
    TooShort { len: usize },
    /// Parameters or settings rejected at construction.
    InvalidConfig(String),
    /// A gradient or loss became NaN/inf during optimisation.
    Divergence { context: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                lhs[0], lhs[1], rhs[0], rhs[1]
            ),
            Error::NonFinite { op } => write!(f, "non-finite value in {op}"),
            Error::NotScalar { shape } => {
                write!(f, "backward needs a 1x1 loss, got {}x{}", shape[0], shape[1])
            }
            Error::InvalidSequence { position, reason } => {
                write!(f, "invalid sequence at event {position}: {reason}")
            }
            Error::IndexOutOfRange {
                what,
                position,
                index,
                bound,
            } => write!(
                f,
                "{what} index {index} at event {position} is out of range (< {bound} required)"
            ),
            Error::OutsideInterval { t, start, end } => {
                write!(f, "time {t} outside interval [{start}, {end})")
            }
            Error::TooShort { len } => {
                write!(f, "sequence of length {len} has no scored events (need >= 2)")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Divergence { context } => write!(f, "numerical divergence: {context}"),
        }
    }
}

impl core::error::Error for Error {}
