//! Two-phase runtime host protocol.
//!
//! A runtime host listens on a loopback port. `POST /specialize` with
//! `{"code_path": "...", "entry": "main"}` loads a handler (200 on
//! success, 500 with the load error). Each invocation is then `POST /`
//! with the parameters object as the JSON body: 200 carries the output,
//! 500 carries the handler's error text. `X-Faas-Request-Id` is echoed.

use std::net::SocketAddr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::invocation::{Output, TEXT_CONTENT_TYPE};

pub const SPECIALIZE_PATH: &str = "/specialize";
pub const INVOKE_PATH: &str = "/";
pub const REQUEST_ID_HEADER: &str = "X-Faas-Request-Id";
pub const DEFAULT_ENTRY: &str = "main";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializeRequest {
    pub code_path: String,
    #[serde(default = "default_entry")]
    pub entry: String,
}

fn default_entry() -> String {
    DEFAULT_ENTRY.to_string()
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("runtime host not reachable: {0}")]
    Unreachable(String),
    #[error("runtime host connection lost: {0}")]
    Crashed(String),
    #[error("runtime host did not answer within {0:?}")]
    Timeout(Duration),
    #[error("runtime host rejected specialization: {0}")]
    Rejected(String),
    #[error("runtime host answered {status}: {body}")]
    UnexpectedStatus { status: u16, body: String },
    #[error("runtime host echoed request id `{got}` for `{expected}`")]
    RequestIdMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvokeReply {
    Ok(Output),
    HandlerError(String),
}

/// Client side of the protocol, shared by every runtime kind.
#[derive(Debug, Clone)]
pub struct RuntimeClient {
    http: reqwest::Client,
}

impl Default for RuntimeClient {
    fn default() -> Self {
        RuntimeClient::new()
    }
}

impl RuntimeClient {
    pub fn new() -> Self {
        let http = reqwest::Client::builder()
            .pool_max_idle_per_host(0)
            .no_proxy()
            .build()
            .expect("http client builds");
        RuntimeClient { http }
    }

    fn classify(err: reqwest::Error, timeout: Duration) -> ProtocolError {
        if err.is_timeout() {
            ProtocolError::Timeout(timeout)
        } else if err.is_connect() {
            ProtocolError::Unreachable(err.to_string())
        } else {
            ProtocolError::Crashed(err.to_string())
        }
    }

    pub async fn specialize(
        &self,
        endpoint: SocketAddr,
        code_path: &str,
        timeout: Duration,
    ) -> Result<(), ProtocolError> {
        let body = serde_json::to_vec(&SpecializeRequest {
            code_path: code_path.to_string(),
            entry: DEFAULT_ENTRY.to_string(),
        })
        .expect("specialize body serializes");
        let resp = self
            .http
            .post(format!("http://{endpoint}{SPECIALIZE_PATH}"))
            .header("content-type", "application/json")
            .body(body)
            .timeout(timeout)
            .send()
            .await
            .map_err(|e| Self::classify(e, timeout))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .await
            .map_err(|e| Self::classify(e, timeout))?;
        match status {
            200 => Ok(()),
            500 => Err(ProtocolError::Rejected(text)),
            status => Err(ProtocolError::UnexpectedStatus { status, body: text }),
        }
    }

    pub async fn invoke(
        &self,
        endpoint: SocketAddr,
        request_id: &str,
        parameters: &Map<String, Value>,
        timeout: Duration,
    ) -> Result<InvokeReply, ProtocolError> {
        let body = serde_json::to_vec(parameters).expect("parameters serialize");
        let resp = self
            .http
            .post(format!("http://{endpoint}{INVOKE_PATH}"))
            .header("content-type", "application/json")
            .header(REQUEST_ID_HEADER, request_id)
            .body(body)
            .timeout(timeout)
            .send()
            .await
            .map_err(|e| Self::classify(e, timeout))?;
        let status = resp.status().as_u16();
        let echoed = resp
            .headers()
            .get(REQUEST_ID_HEADER)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or(TEXT_CONTENT_TYPE)
            .to_string();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| Self::classify(e, timeout))?
            .to_vec();
        if echoed != request_id {
            return Err(ProtocolError::RequestIdMismatch {
                expected: request_id.to_string(),
                got: echoed,
            });
        }
        match status {
            200 => Ok(InvokeReply::Ok(decode_output(&content_type, bytes))),
            500 => Ok(InvokeReply::HandlerError(
                String::from_utf8_lossy(&bytes).into_owned(),
            )),
            status => Err(ProtocolError::UnexpectedStatus {
                status,
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }
}

/// `text/plain` bodies that are valid UTF-8 become text outputs; anything
/// else is kept as bytes with its content type.
pub fn decode_output(content_type: &str, bytes: Vec<u8>) -> Output {
    let is_plain = content_type
        .split(';')
        .next()
        .is_some_and(|m| m.trim().eq_ignore_ascii_case("text/plain"));
    if is_plain {
        match String::from_utf8(bytes) {
            Ok(text) => Output::Text { text },
            Err(e) => Output::Binary {
                content_type: content_type.to_string(),
                bytes: e.into_bytes(),
            },
        }
    } else {
        Output::Binary {
            content_type: content_type.to_string(),
            bytes,
        }
    }
}
