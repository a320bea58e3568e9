//! Error type shared by every pluggable backend contract (judge, extractor,
//! generator, captioner, OCR, QA generator).

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("{backend}: timed out: {message}")]
    Timeout { backend: String, message: String },

    #[error("{backend}: transport failure: {message}")]
    Transport { backend: String, message: String },

    #[error("{backend}: protocol error: {message}")]
    Protocol { backend: String, message: String },

    #[error("{backend}: unavailable: {message}")]
    Unavailable { backend: String, message: String },
}

impl ClientError {
    pub fn protocol(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Protocol {
            backend: backend.into(),
            message: message.into(),
        }
    }

    pub fn transport(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Transport {
            backend: backend.into(),
            message: message.into(),
        }
    }

    pub fn unavailable(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Unavailable {
            backend: backend.into(),
            message: message.into(),
        }
    }

    pub fn timeout(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Timeout {
            backend: backend.into(),
            message: message.into(),
        }
    }

    /// Timeouts and transport failures may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Timeout { .. } | Self::Transport { .. })
    }
}

/// Runs `op` up to `attempts` times while it fails with a retryable error.
pub fn with_retries<T>(
    attempts: usize,
    mut op: impl FnMut() -> Result<T, ClientError>,
) -> Result<T, ClientError> {
    let attempts = attempts.max(1);
    let mut last = None;
    for _ in 0..attempts {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
