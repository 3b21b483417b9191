use thiserror::Error;

/// Errors raised by the lifting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("joint {joint} has non-positive depth {depth}")]
    NonPositiveDepth { joint: usize, depth: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("tape does not match the network: {0}")]
    StaleTape(String),

    #[error("unsupported occlusion scenario: {0}")]
    UnsupportedScenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            got,
        })
    }
}
