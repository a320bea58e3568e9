//! Gateway errors with CLI exit codes and HTTP status mapping.

use grg_core::client::ClientError;
use grg_core::grg::GrgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("store {store} is missing at {path}; run `grg {hint}` first")]
    MissingStore { store: String, path: String, hint: String },
    #[error("store layout version {found} is not supported (expected {expected}); rebuild the store")]
    LayoutVersion { expected: u32, found: u32 },
    #[error("adapter: {0}")]
    Adapter(#[from] ClientError),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{0}")]
    Pipeline(String),
}

impl GatewayError {
    pub fn pipeline(e: impl std::fmt::Display) -> Self {
        Self::Pipeline(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::BadRequest(_) => 2,
            Self::Config(_) => 3,
            Self::MissingStore { .. } | Self::LayoutVersion { .. } => 4,
            Self::Adapter(_) => 5,
            Self::NotFound(_) | Self::Pipeline(_) => 1,
        }
    }

    /// Short category used in JSON results and the HTTP envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::MissingStore { .. } | Self::LayoutVersion { .. } => "stores_not_built",
            Self::Adapter(_) => "adapter_unavailable",
            Self::NotFound(_) => "not_found",
            Self::BadRequest(_) => "bad_request",
            Self::Pipeline(_) => "internal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Self::Usage(_) | Self::BadRequest(_) | Self::Config(_) => 400,
            Self::NotFound(_) => 404,
            Self::MissingStore { .. } | Self::LayoutVersion { .. } => 409,
            Self::Adapter(_) => 503,
            Self::Pipeline(_) => 500,
        }
    }
}

impl From<GrgError> for GatewayError {
    fn from(e: GrgError) -> Self {
        match e {
            GrgError::Generation { source, .. } => Self::Adapter(source),
            GrgError::EmptyQuery | GrgError::ZeroK => Self::BadRequest(e.to_string()),
            GrgError::Embed(grg_core::embed::EmbedError::Backend(c)) => Self::Adapter(c),
            GrgError::Image(grg_core::mmio::MmioError::Format(_) | grg_core::mmio::MmioError::InvalidImage { .. }) => {
                Self::BadRequest(e.to_string())
            }
            other => Self::Pipeline(other.to_string()),
        }
    }
}
