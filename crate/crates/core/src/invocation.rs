//! Invocation request/result records and the data-reference convention.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Prefix under which handlers publish paths into the shared data root.
pub const DATA_PREFIX: &str = "/data/";

pub const TEXT_CONTENT_TYPE: &str = "text/plain; charset=utf-8";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvocationRequest {
    pub request_id: String,
    pub function_name: String,
    pub parameters: Map<String, Value>,
    pub data_refs: Vec<String>,
    pub received_at: DateTime<Utc>,
}

impl InvocationRequest {
    pub fn new(
        function_name: impl Into<String>,
        parameters: Map<String, Value>,
        data_keys: &DataKeys,
    ) -> Self {
        InvocationRequest {
            request_id: new_request_id(),
            function_name: function_name.into(),
            data_refs: data_keys.extract(&parameters),
            parameters,
            received_at: Utc::now(),
        }
    }
}

pub fn new_request_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationStatus {
    Ok,
    HandlerError,
    PlatformError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Output {
    Text { text: String },
    Binary { content_type: String, bytes: Vec<u8> },
}

impl Output {
    pub fn text(s: impl Into<String>) -> Self {
        Output::Text { text: s.into() }
    }

    pub fn content_type(&self) -> &str {
        match self {
            Output::Text { .. } => TEXT_CONTENT_TYPE,
            Output::Binary { content_type, .. } => content_type,
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        match self {
            Output::Text { text } => text.as_bytes(),
            Output::Binary { bytes, .. } => bytes,
        }
    }

    /// The payload as a string when it is valid UTF-8.
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Output::Text { text } => Some(text),
            Output::Binary { bytes, .. } => std::str::from_utf8(bytes).ok(),
        }
    }

    /// Data id of a `/data/...` text output.
    pub fn data_ref(&self) -> Option<&str> {
        match self {
            Output::Text { text } => text
                .strip_prefix(DATA_PREFIX)
                .filter(|rest| !rest.is_empty()),
            Output::Binary { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvocationResult {
    pub request_id: String,
    pub status: InvocationStatus,
    pub output: Option<Output>,
    /// Handler or platform error text for non-ok results.
    pub error: Option<String>,
    pub node_id: String,
    pub cold_start: bool,
    pub duration_ms: f64,
}

impl InvocationResult {
    pub fn is_ok(&self) -> bool {
        self.status == InvocationStatus::Ok
    }
}

/// Which request parameters name data items: keys ending in one of
/// `suffixes` or equal to one of `exact`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataKeys {
    pub suffixes: Vec<String>,
    pub exact: Vec<String>,
}

impl Default for DataKeys {
    fn default() -> Self {
        DataKeys {
            suffixes: vec!["-MS".to_string()],
            exact: vec!["file".to_string()],
        }
    }
}

impl DataKeys {
    pub fn matches(&self, key: &str) -> bool {
        self.exact.iter().any(|k| k == key) || self.suffixes.iter().any(|s| key.ends_with(s.as_str()))
    }

    /// String values of matching top-level keys, in parameter order, with
    /// any `/data/` prefix removed. Non-string and empty values are skipped.
    pub fn extract(&self, parameters: &Map<String, Value>) -> Vec<String> {
        parameters
            .iter()
            .filter(|(k, _)| self.matches(k))
            .filter_map(|(_, v)| v.as_str())
            .map(strip_data_prefix)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }
}

pub fn extract_data_refs(parameters: &Map<String, Value>) -> Vec<String> {
    DataKeys::default().extract(parameters)
}

pub fn strip_data_prefix(s: &str) -> &str {
    s.strip_prefix(DATA_PREFIX).unwrap_or(s)
}
