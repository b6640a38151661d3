use snis_abc_core::Method;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Unusable configuration or command line; nothing was run.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Estimator(#[from] snis_abc_core::Error),
    #[error(
        "{method} failed {cap} redraws at query {query}, n = {n}, trial {trial}; last error: {last}"
    )]
    RetryCapExceeded {
        method: Method,
        query: usize,
        n: usize,
        trial: usize,
        cap: usize,
        last: snis_abc_core::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl HarnessError {
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Format(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Format(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
