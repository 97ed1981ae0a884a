use serde::Serialize;

/// Printed to stderr as `{"error": {...}}` before exiting.
#[derive(Debug, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub exit_code: i32,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            exit_code: 1,
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    /// Inputs that do not belong together (hash mismatch); exit code 2.
    pub fn mismatch(message: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            ..Self::new("manifest_mismatch", message)
        }
    }

    pub fn report(&self) {
        eprintln!("{}", serde_json::json!({ "error": self }));
    }
}

macro_rules! from_error {
    ($($ty:ty => $code:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($code, e.to_string())
            }
        })*
    };
}

from_error! {
    flipdiag::data::DataError => "data",
    flipdiag::model::ModelError => "model",
    flipdiag::explain::ExplainError => "explain",
    flipdiag::aggregate::AggregateError => "aggregate",
    flipdiag::metrics::MetricsError => "metrics",
    flipdiag_service::ApiError => "service",
    std::io::Error => "io",
    serde_json::Error => "json",
}
