//! HTTP front door. Management endpoints live at `GET /healthz` and
//! `GET /catalog`; every other path is looked up in the route table built
//! from the catalog and dispatched through the [`Platform`].

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde_json::{Map, Value};
use tokio::net::TcpListener;

use crate::catalog::{CatalogError, CatalogSnapshot, FunctionSpec};
use crate::invocation::{InvocationStatus, TEXT_CONTENT_TYPE};
use crate::platform::{DispatchError, Platform};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8888";

pub const HEADER_REQUEST_ID: &str = "x-faas-request-id";
pub const HEADER_NODE: &str = "x-faas-node";
pub const HEADER_COLD_START: &str = "x-faas-cold-start";
pub const HEADER_DURATION_MS: &str = "x-faas-duration-ms";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("route `{route}` is claimed by both `{first}` and `{second}`")]
    RouteConflict {
        route: String,
        first: String,
        second: String,
    },
}

/// Function lookup by URL route.
#[derive(Debug, Default, Clone)]
pub struct RouteTable {
    by_route: HashMap<String, FunctionSpec>,
}

impl RouteTable {
    pub fn build(snapshot: &CatalogSnapshot) -> Result<Self, GatewayError> {
        let mut by_route: HashMap<String, FunctionSpec> = HashMap::new();
        for f in &snapshot.functions {
            if let Some(prev) = by_route.get(&f.url_route) {
                return Err(GatewayError::RouteConflict {
                    route: f.url_route.clone(),
                    first: prev.name.clone(),
                    second: f.name.clone(),
                });
            }
            by_route.insert(f.url_route.clone(), f.clone());
        }
        Ok(RouteTable { by_route })
    }

    /// Exact match, also accepting the route without its trailing slash.
    pub fn resolve(&self, path: &str) -> Option<&FunctionSpec> {
        self.by_route.get(path).or_else(|| {
            if path.ends_with('/') {
                None
            } else {
                self.by_route.get(&format!("{path}/"))
            }
        })
    }

    pub fn len(&self) -> usize {
        self.by_route.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_route.is_empty()
    }

    pub fn routes(&self) -> impl Iterator<Item = (&str, &FunctionSpec)> {
        self.by_route.iter().map(|(r, f)| (r.as_str(), f))
    }
}

#[derive(Debug)]
pub struct Gateway {
    platform: Arc<Platform>,
    routes: RwLock<(u64, Arc<RouteTable>)>,
}

impl Gateway {
    /// Builds the gateway and binds every catalog route. A route conflict
    /// here is fatal.
    pub fn new(platform: Arc<Platform>) -> Result<Self, GatewayError> {
        let gateway = Gateway {
            platform,
            routes: RwLock::new((0, Arc::new(RouteTable::default()))),
        };
        gateway.register_routes()?;
        Ok(gateway)
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.platform
    }

    /// Rebuilds the route table from the current catalog.
    pub fn register_routes(&self) -> Result<(), GatewayError> {
        let catalog = self.platform.catalog();
        let generation = catalog.generation();
        let table = RouteTable::build(&catalog.snapshot())?;
        *self.routes.write().unwrap_or_else(|e| e.into_inner()) = (generation, Arc::new(table));
        Ok(())
    }

    /// Current routes, rebuilt if the catalog changed since the last call.
    /// A conflicting catalog update keeps the previous table.
    pub fn routes(&self) -> Arc<RouteTable> {
        let current = self.platform.catalog().generation();
        {
            let guard = self.routes.read().unwrap_or_else(|e| e.into_inner());
            if guard.0 == current {
                return guard.1.clone();
            }
        }
        if let Err(e) = self.register_routes() {
            tracing::error!("catalog change not applied: {e}");
        }
        self.routes.read().unwrap_or_else(|e| e.into_inner()).1.clone()
    }

    pub async fn handle_request(
        &self,
        method: &Method,
        path: &str,
        headers: &HeaderMap,
        body: Bytes,
    ) -> Response {
        let routes = self.routes();
        let Some(function) = routes.resolve(path) else {
            return plain(StatusCode::NOT_FOUND, format!("no function is published at {path}"));
        };
        if method.as_str() != function.http_method.as_str() {
            let mut resp = plain(
                StatusCode::METHOD_NOT_ALLOWED,
                format!("{path} accepts {} only", function.http_method),
            );
            resp.headers_mut().insert(
                header::ALLOW,
                HeaderValue::from_static(function.http_method.as_str()),
            );
            return resp;
        }
        let parameters = match parse_parameters(headers, &body) {
            Ok(p) => p,
            Err(msg) => return plain(StatusCode::BAD_REQUEST, msg),
        };

        let request = self.platform.request(&function.name, parameters);
        let request_id = request.request_id.clone();
        let mut resp = match self.platform.dispatch(function, request).await {
            Ok(dispatch) => {
                let result = dispatch.result;
                let mut resp = match result.status {
                    InvocationStatus::Ok => {
                        let output = result.output.expect("ok results carry output");
                        let ct = HeaderValue::from_str(output.content_type())
                            .unwrap_or_else(|_| HeaderValue::from_static("application/octet-stream"));
                        let mut r = (StatusCode::OK, output.as_bytes().to_vec()).into_response();
                        r.headers_mut().insert(header::CONTENT_TYPE, ct);
                        r
                    }
                    InvocationStatus::HandlerError => plain(
                        StatusCode::BAD_GATEWAY,
                        result.error.unwrap_or_default(),
                    ),
                    InvocationStatus::PlatformError => plain(
                        StatusCode::INTERNAL_SERVER_ERROR,
                        result.error.unwrap_or_default(),
                    ),
                };
                let h = resp.headers_mut();
                set(h, HEADER_NODE, &result.node_id);
                set(h, HEADER_COLD_START, if result.cold_start { "true" } else { "false" });
                set(h, HEADER_DURATION_MS, &format!("{:.3}", result.duration_ms));
                resp
            }
            Err(e) => {
                let status = match &e {
                    _ if e.is_capacity() => StatusCode::SERVICE_UNAVAILABLE,
                    DispatchError::Catalog(CatalogError::NotFound { .. }) => StatusCode::NOT_FOUND,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                tracing::warn!(%request_id, function = %function.name, "dispatch failed: {e}");
                plain(status, e.to_string())
            }
        };
        set(resp.headers_mut(), HEADER_REQUEST_ID, &request_id);
        resp
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/healthz", get(healthz))
            .route("/catalog", get(catalog))
            .fallback(dispatch)
            .with_state(self)
    }
}

fn set(headers: &mut HeaderMap, name: &'static str, value: &str) {
    if let Ok(v) = HeaderValue::from_str(value) {
        headers.insert(HeaderName::from_static(name), v);
    }
}

fn plain(status: StatusCode, body: impl Into<String>) -> Response {
    (status, [(header::CONTENT_TYPE, TEXT_CONTENT_TYPE)], body.into()).into_response()
}

/// JSON object body. An empty body is an empty object; a non-empty body
/// must be JSON, declared as such or undeclared.
pub fn parse_parameters(headers: &HeaderMap, body: &[u8]) -> Result<Map<String, Value>, String> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    if let Some(ct) = headers.get(header::CONTENT_TYPE) {
        let mime = ct.to_str().unwrap_or("").split(';').next().unwrap_or("").trim();
        if !mime.eq_ignore_ascii_case("application/json") {
            return Err(format!("expected an application/json body, got `{mime}`"));
        }
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err("request body must be a JSON object".to_string()),
        Err(e) => Err(format!("malformed JSON body: {e}")),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

async fn catalog(State(gw): State<Arc<Gateway>>) -> Response {
    let body = gw.platform.catalog().snapshot().to_json();
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn dispatch(
    State(gw): State<Arc<Gateway>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    gw.handle_request(&method, uri.path(), &headers, body).await
}

pub async fn serve(
    gateway: Arc<Gateway>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, gateway.router())
        .with_graceful_shutdown(shutdown)
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{EnvironmentSpec, SCHEMA_VERSION};

    fn snapshot(routes: &[(&str, &str)]) -> CatalogSnapshot {
        CatalogSnapshot {
            schema_version: SCHEMA_VERSION,
            environments: vec![EnvironmentSpec::builtin("env", "img")],
            functions: routes
                .iter()
                .map(|(name, route)| FunctionSpec::new(*name, "env", "echo", *route))
                .collect(),
        }
    }

    #[test]
    fn builds_and_resolves() {
        let t = RouteTable::build(&snapshot(&[("tclean", "/tclean/"), ("wsclean", "/wsclean/")]))
            .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.resolve("/tclean/").unwrap().name, "tclean");
        assert_eq!(t.resolve("/wsclean").unwrap().name, "wsclean");
        assert!(t.resolve("/nosuch/").is_none());
        assert!(t.resolve("/tclean/x").is_none());
    }

    #[test]
    fn empty_catalog_empty_table() {
        assert!(RouteTable::build(&snapshot(&[])).unwrap().is_empty());
    }

    #[test]
    fn duplicate_route_conflicts() {
        let err = RouteTable::build(&snapshot(&[("a", "/x/"), ("b", "/x/")])).unwrap_err();
        assert!(matches!(err, GatewayError::RouteConflict { ref route, .. } if route == "/x/"));
    }

    #[test]
    fn parameter_parsing() {
        let mut json = HeaderMap::new();
        json.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
        assert!(parse_parameters(&json, b"").unwrap().is_empty());
        assert_eq!(parse_parameters(&json, br#"{"a":1}"#).unwrap().len(), 1);
        assert!(parse_parameters(&json, b"{bad json").is_err());
        assert!(parse_parameters(&json, b"[1,2]").is_err());
        assert!(parse_parameters(&json, b"3").is_err());
        assert!(parse_parameters(&HeaderMap::new(), br#"{"a":1}"#).is_ok());
        let mut form = HeaderMap::new();
        form.insert(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/x-www-form-urlencoded"),
        );
        assert!(parse_parameters(&form, b"a=1").is_err());
    }
}
