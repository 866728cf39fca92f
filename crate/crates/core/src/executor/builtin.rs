//! In-process runtime host speaking the same loopback protocol as external
//! hosts, backed by [`BuiltinHandler`]s.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{Map, Value};
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Mutex};

use super::handlers::{BuiltinHandler, HostContext};
use super::protocol::{SpecializeRequest, DEFAULT_ENTRY, INVOKE_PATH, REQUEST_ID_HEADER, SPECIALIZE_PATH};
use crate::invocation::TEXT_CONTENT_TYPE;

#[derive(Debug)]
struct HostState {
    specialized: Option<(String, BuiltinHandler)>,
    ctx: HostContext,
}

type Shared = Arc<Mutex<HostState>>;

pub fn router(data_root: PathBuf) -> Router {
    let state: Shared = Arc::new(Mutex::new(HostState {
        specialized: None,
        ctx: HostContext::new(data_root),
    }));
    Router::new()
        .route(SPECIALIZE_PATH, post(specialize))
        .route(INVOKE_PATH, post(invoke))
        .with_state(state)
}

/// Serves the builtin host on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    data_root: PathBuf,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(data_root))
        .with_graceful_shutdown(shutdown)
        .await
}

fn text(status: StatusCode, body: impl Into<String>) -> Response {
    (
        status,
        [(axum::http::header::CONTENT_TYPE, TEXT_CONTENT_TYPE)],
        body.into(),
    )
        .into_response()
}

async fn specialize(State(state): State<Shared>, body: Bytes) -> Response {
    let req: SpecializeRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return text(StatusCode::INTERNAL_SERVER_ERROR, format!("bad specialize request: {e}")),
    };
    if req.entry != DEFAULT_ENTRY {
        return text(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("entry `{}` not found in {}", req.entry, req.code_path),
        );
    }
    let mut state = state.lock().await;
    if let Some((loaded, _)) = &state.specialized {
        return if *loaded == req.code_path {
            text(StatusCode::OK, "specialized")
        } else {
            text(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("already specialized with {loaded}"),
            )
        };
    }
    match BuiltinHandler::resolve(&req.code_path) {
        Some(handler) => {
            state.specialized = Some((req.code_path, handler));
            text(StatusCode::OK, "specialized")
        }
        None => text(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("no builtin handler for code path `{}`", req.code_path),
        ),
    }
}

async fn invoke(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let request_id = headers.get(REQUEST_ID_HEADER).cloned();
    let mut resp = run(state, body).await;
    if let Some(id) = request_id {
        resp.headers_mut().insert(REQUEST_ID_HEADER, id);
    }
    resp
}

async fn run(state: Shared, body: Bytes) -> Response {
    let params: Map<String, Value> = match serde_json::from_slice::<Value>(&body) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return text(StatusCode::INTERNAL_SERVER_ERROR, "parameters must be a JSON object"),
        Err(e) => return text(StatusCode::INTERNAL_SERVER_ERROR, format!("bad parameters: {e}")),
    };
    // Single occupancy: an overlapping invocation is a platform bug, and is
    // reported rather than queued.
    let Ok(mut state) = state.try_lock() else {
        return text(StatusCode::INTERNAL_SERVER_ERROR, "runtime busy: concurrent invocation");
    };
    let Some((_, handler)) = state.specialized else {
        return text(StatusCode::INTERNAL_SERVER_ERROR, "not specialized");
    };
    match handler.run(&mut state.ctx, &params).await {
        Ok(output) => {
            let content_type = HeaderValue::from_str(output.content_type())
                .unwrap_or_else(|_| HeaderValue::from_static("application/octet-stream"));
            let mut resp = (StatusCode::OK, output.as_bytes().to_vec()).into_response();
            resp.headers_mut()
                .insert(axum::http::header::CONTENT_TYPE, content_type);
            resp
        }
        Err(message) => text(StatusCode::INTERNAL_SERVER_ERROR, message),
    }
}

/// A running builtin host bound to an ephemeral loopback port.
#[derive(Debug)]
pub struct BuiltinHost {
    endpoint: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
}

impl BuiltinHost {
    pub async fn start(data_root: PathBuf) -> std::io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
        let endpoint = listener.local_addr()?;
        let (tx, rx) = oneshot::channel();
        tokio::spawn(async move {
            let stop = async {
                let _ = rx.await;
            };
            if let Err(e) = serve(listener, data_root, stop).await {
                tracing::warn!(%endpoint, "builtin runtime host stopped: {e}");
            }
        });
        Ok(BuiltinHost {
            endpoint,
            shutdown: Some(tx),
        })
    }

    pub fn endpoint(&self) -> SocketAddr {
        self.endpoint
    }

    pub fn terminate(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

impl Drop for BuiltinHost {
    fn drop(&mut self) {
        self.terminate();
    }
}
