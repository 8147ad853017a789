use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("non-finite loss at step {step} (|U|={frob_u:.3e}, |V|={frob_v:.3e}, |W|={frob_w:.3e})")]
    NonFinite {
        step: usize,
        frob_u: f64,
        frob_v: f64,
        frob_w: f64,
    },

    #[error("degenerate result: {0}")]
    Degenerate(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
