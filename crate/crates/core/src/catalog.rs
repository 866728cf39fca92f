//! Registry of runtime environments and functions.
//!
//! The catalog is the set of published functions the gateway serves. It is
//! held behind a reader/writer lock so request handlers can share it, and
//! every mutation is written through to a JSON document on disk (when the
//! catalog was opened from a path) using a temp-file-and-rename swap.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Version written to, and required of, every catalog document.
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_MIN_WARM: u32 = 0;
pub const DEFAULT_MAX_POOL: u32 = 4;
pub const DEFAULT_IDLE_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_INVOKE_TIMEOUT_SECS: u64 = 300;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("duplicate {kind} `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("route `{route}` is already bound to function `{existing}`")]
    DuplicateRoute { route: String, existing: String },
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("{kind} `{name}` not found")]
    NotFound { kind: &'static str, name: String },
    #[error("environment `{env}` is used by function(s): {}", .functions.join(", "))]
    EnvironmentInUse { env: String, functions: Vec<String> },
    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("catalog schema_version {found} is not supported (expected {expected})")]
    SchemaMismatch { found: u32, expected: u32 },
    /// Read, write or decode failure. Decode failures carry the line and
    /// column reported by the JSON parser.
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CatalogError {
    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        CatalogError::InvalidSpec {
            field,
            reason: reason.into(),
        }
    }

    fn io(path: &Path, source: impl Into<io::Error>) -> Self {
        CatalogError::Io {
            path: path.to_path_buf(),
            source: source.into(),
        }
    }
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuntimeKind {
    /// In-process host with native handlers; used for tests and demos.
    BuiltinTest,
    /// Child process started from the environment's launch command.
    ExternalProcess,
}

impl fmt::Display for RuntimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuntimeKind::BuiltinTest => "builtin-test",
            RuntimeKind::ExternalProcess => "external-process",
        })
    }
}

impl std::str::FromStr for RuntimeKind {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin-test" => Ok(RuntimeKind::BuiltinTest),
            "external-process" => Ok(RuntimeKind::ExternalProcess),
            other => Err(CatalogError::invalid(
                "runtime_kind",
                format!("`{other}` is not one of builtin-test, external-process"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub name: String,
    pub image_ref: String,
    pub runtime_kind: RuntimeKind,
    #[serde(default)]
    pub launch_command: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl EnvironmentSpec {
    /// A builtin-test environment. `created_at` is overwritten on creation.
    pub fn builtin(name: impl Into<String>, image_ref: impl Into<String>) -> Self {
        EnvironmentSpec {
            name: name.into(),
            image_ref: image_ref.into(),
            runtime_kind: RuntimeKind::BuiltinTest,
            launch_command: Vec::new(),
            created_at: Utc::now(),
        }
    }

    pub fn external(
        name: impl Into<String>,
        image_ref: impl Into<String>,
        launch_command: Vec<String>,
    ) -> Self {
        EnvironmentSpec {
            runtime_kind: RuntimeKind::ExternalProcess,
            launch_command,
            ..EnvironmentSpec::builtin(name, image_ref)
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_name("name", &self.name)?;
        if self.runtime_kind == RuntimeKind::ExternalProcess {
            if self.launch_command.is_empty() {
                return Err(CatalogError::invalid(
                    "launch_command",
                    "external-process environments need a launch command",
                ));
            }
            if !self.launch_command.iter().any(|arg| arg.contains("{port}")) {
                return Err(CatalogError::invalid(
                    "launch_command",
                    "launch command must contain the `{port}` placeholder",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HttpMethod {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(HttpMethod::Get),
            "POST" => Ok(HttpMethod::Post),
            _ => Err(CatalogError::invalid(
                "http_method",
                format!("`{s}` is not one of GET, POST"),
            )),
        }
    }
}

fn default_invoke_timeout() -> u64 {
    DEFAULT_INVOKE_TIMEOUT_SECS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub env_name: String,
    pub code_ref: String,
    pub http_method: HttpMethod,
    pub url_route: String,
    pub min_warm: u32,
    pub max_pool: u32,
    /// Seconds an idle runtime may linger before it is reaped.
    pub idle_timeout: u64,
    /// Per-invocation limit in seconds.
    #[serde(default = "default_invoke_timeout")]
    pub invoke_timeout: u64,
    pub created_at: DateTime<Utc>,
}

impl FunctionSpec {
    /// A POST function with default pool settings.
    pub fn new(
        name: impl Into<String>,
        env_name: impl Into<String>,
        code_ref: impl Into<String>,
        url_route: impl Into<String>,
    ) -> Self {
        FunctionSpec {
            name: name.into(),
            env_name: env_name.into(),
            code_ref: code_ref.into(),
            http_method: HttpMethod::Post,
            url_route: url_route.into(),
            min_warm: DEFAULT_MIN_WARM,
            max_pool: DEFAULT_MAX_POOL,
            idle_timeout: DEFAULT_IDLE_TIMEOUT_SECS,
            invoke_timeout: DEFAULT_INVOKE_TIMEOUT_SECS,
            created_at: Utc::now(),
        }
    }

    pub fn with_method(mut self, method: HttpMethod) -> Self {
        self.http_method = method;
        self
    }

    pub fn with_pool(mut self, min_warm: u32, max_pool: u32, idle_timeout: u64) -> Self {
        self.min_warm = min_warm;
        self.max_pool = max_pool;
        self.idle_timeout = idle_timeout;
        self
    }

    pub fn with_invoke_timeout(mut self, secs: u64) -> Self {
        self.invoke_timeout = secs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_name("name", &self.name)?;
        validate_name("env_name", &self.env_name)?;
        if self.code_ref.trim().is_empty() {
            return Err(CatalogError::invalid("code_ref", "must not be empty"));
        }
        validate_route(&self.url_route)?;
        if self.max_pool == 0 {
            return Err(CatalogError::invalid("max_pool", "must be at least 1"));
        }
        if self.min_warm > self.max_pool {
            return Err(CatalogError::invalid(
                "min_warm",
                format!(
                    "min_warm ({}) exceeds max_pool ({})",
                    self.min_warm, self.max_pool
                ),
            ));
        }
        if self.invoke_timeout == 0 {
            return Err(CatalogError::invalid("invoke_timeout", "must be positive"));
        }
        Ok(())
    }
}

/// Checks the `[a-z0-9][a-z0-9.-]*` identifier grammar.
pub fn validate_name(field: &'static str, name: &str) -> Result<()> {
    let mut chars = name.chars();
    match chars.next() {
        None => return Err(CatalogError::invalid(field, "must not be empty")),
        Some(c) if !(c.is_ascii_lowercase() || c.is_ascii_digit()) => {
            return Err(CatalogError::invalid(
                field,
                format!("`{name}` must start with a lowercase letter or digit"),
            ))
        }
        Some(_) => {}
    }
    if let Some(bad) =
        chars.find(|c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '.' || *c == '-'))
    {
        return Err(CatalogError::invalid(
            field,
            format!("`{name}` contains `{bad}`; allowed are a-z, 0-9, `.` and `-`"),
        ));
    }
    Ok(())
}

pub fn validate_route(route: &str) -> Result<()> {
    if route.len() < 2 || !route.starts_with('/') || !route.ends_with('/') {
        let trimmed = route.trim_matches('/');
        let hint = if trimmed.is_empty() {
            String::new()
        } else {
            format!(" (did you mean `/{trimmed}/`?)")
        };
        return Err(CatalogError::invalid(
            "url_route",
            format!("`{route}` must begin and end with `/`{hint}"),
        ));
    }
    if let Some(bad) = route
        .chars()
        .find(|c| c.is_whitespace() || c.is_control() || matches!(c, '?' | '#' | '%'))
    {
        return Err(CatalogError::invalid(
            "url_route",
            format!("`{route}` contains `{}`", bad.escape_default()),
        ));
    }
    if route.contains("//") {
        return Err(CatalogError::invalid(
            "url_route",
            format!("`{route}` contains an empty path segment"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSnapshot {
    pub schema_version: u32,
    pub environments: Vec<EnvironmentSpec>,
    pub functions: Vec<FunctionSpec>,
}

impl Default for CatalogSnapshot {
    fn default() -> Self {
        CatalogSnapshot {
            schema_version: SCHEMA_VERSION,
            environments: Vec::new(),
            functions: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

impl CatalogSnapshot {
    /// Decodes a catalog document.
    ///
    /// The schema version is checked before the body so that documents from
    /// a newer layout fail with `SchemaMismatch` rather than a field error.
    /// Route uniqueness is not checked here; that is the gateway's job when
    /// it binds routes.
    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| CatalogError::io(path, e))?;
        if probe.schema_version != SCHEMA_VERSION {
            return Err(CatalogError::SchemaMismatch {
                found: probe.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let snapshot: CatalogSnapshot =
            serde_json::from_str(text).map_err(|e| CatalogError::io(path, e))?;
        snapshot.check_integrity()?;
        Ok(snapshot)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog snapshot serializes")
    }

    fn check_integrity(&self) -> Result<()> {
        let mut envs = BTreeMap::new();
        for env in &self.environments {
            env.validate()?;
            if envs.insert(env.name.as_str(), env).is_some() {
                return Err(CatalogError::DuplicateName {
                    kind: "environment",
                    name: env.name.clone(),
                });
            }
        }
        let mut names = BTreeMap::new();
        for func in &self.functions {
            func.validate()?;
            if !envs.contains_key(func.env_name.as_str()) {
                return Err(CatalogError::UnknownEnvironment(func.env_name.clone()));
            }
            if names.insert(func.name.as_str(), func).is_some() {
                return Err(CatalogError::DuplicateName {
                    kind: "function",
                    name: func.name.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_snapshot(path: &Path) -> Result<CatalogSnapshot> {
    let text = std::fs::read_to_string(path).map_err(|e| CatalogError::io(path, e))?;
    CatalogSnapshot::from_json(path, &text)
}

pub fn save_snapshot(path: &Path, snapshot: &CatalogSnapshot) -> Result<()> {
    write_atomic(path, snapshot.to_json().as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CatalogError::io(path, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.write_all(b"\n"))
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CatalogError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| CatalogError::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Default)]
struct State {
    environments: BTreeMap<String, EnvironmentSpec>,
    functions: BTreeMap<String, FunctionSpec>,
}

impl State {
    fn from_snapshot(snapshot: CatalogSnapshot) -> Self {
        State {
            environments: snapshot
                .environments
                .into_iter()
                .map(|e| (e.name.clone(), e))
                .collect(),
            functions: snapshot
                .functions
                .into_iter()
                .map(|f| (f.name.clone(), f))
                .collect(),
        }
    }

    fn snapshot(&self) -> CatalogSnapshot {
        CatalogSnapshot {
            schema_version: SCHEMA_VERSION,
            environments: self.environments.values().cloned().collect(),
            functions: self.functions.values().cloned().collect(),
        }
    }
}

/// Shared, optionally file-backed catalog.
#[derive(Debug)]
pub struct Catalog {
    state: RwLock<State>,
    path: Option<PathBuf>,
    generation: AtomicU64,
}

impl Catalog {
    pub fn in_memory() -> Self {
        Catalog::with_state(State::default(), None)
    }

    /// Opens the catalog at `path`, starting empty when the file does not
    /// exist yet. Every subsequent mutation is persisted there.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let state = if path.exists() {
            State::from_snapshot(load_snapshot(&path)?)
        } else {
            State::default()
        };
        Ok(Catalog::with_state(state, Some(path)))
    }

    pub fn from_snapshot(snapshot: CatalogSnapshot) -> Result<Self> {
        snapshot.check_integrity()?;
        Ok(Catalog::with_state(State::from_snapshot(snapshot), None))
    }

    fn with_state(state: State, path: Option<PathBuf>) -> Self {
        Catalog {
            state: RwLock::new(state),
            path,
            generation: AtomicU64::new(0),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Bumped on every mutation or reload; lets readers cache derived views.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::Acquire)
    }

    pub fn snapshot(&self) -> CatalogSnapshot {
        self.read().snapshot()
    }

    /// Re-reads the backing file, replacing the in-memory state.
    pub fn reload(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let fresh = if path.exists() {
            State::from_snapshot(load_snapshot(path)?)
        } else {
            State::default()
        };
        *self.write() = fresh;
        self.generation.fetch_add(1, Ordering::AcqRel);
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let state = self.read();
        save_snapshot(path, &state.snapshot())
    }

    pub fn create_environment(&self, mut spec: EnvironmentSpec) -> Result<EnvironmentSpec> {
        spec.validate()?;
        self.mutate(|state| {
            if state.environments.contains_key(&spec.name) {
                return Err(CatalogError::DuplicateName {
                    kind: "environment",
                    name: spec.name.clone(),
                });
            }
            spec.created_at = Utc::now();
            state.environments.insert(spec.name.clone(), spec.clone());
            Ok(spec)
        })
    }

    pub fn get_environment(&self, name: &str) -> Result<EnvironmentSpec> {
        self.read()
            .environments
            .get(name)
            .cloned()
            .ok_or_else(|| CatalogError::NotFound {
                kind: "environment",
                name: name.to_string(),
            })
    }

    pub fn list_environments(&self) -> Vec<EnvironmentSpec> {
        self.read().environments.values().cloned().collect()
    }

    pub fn delete_environment(&self, name: &str) -> Result<()> {
        self.mutate(|state| {
            if !state.environments.contains_key(name) {
                return Err(CatalogError::NotFound {
                    kind: "environment",
                    name: name.to_string(),
                });
            }
            let users: Vec<String> = state
                .functions
                .values()
                .filter(|f| f.env_name == name)
                .map(|f| f.name.clone())
                .collect();
            if !users.is_empty() {
                return Err(CatalogError::EnvironmentInUse {
                    env: name.to_string(),
                    functions: users,
                });
            }
            state.environments.remove(name);
            Ok(())
        })
    }

    pub fn create_function(&self, mut spec: FunctionSpec) -> Result<FunctionSpec> {
        spec.validate()?;
        self.mutate(|state| {
            if !state.environments.contains_key(&spec.env_name) {
                return Err(CatalogError::UnknownEnvironment(spec.env_name.clone()));
            }
            if state.functions.contains_key(&spec.name) {
                return Err(CatalogError::DuplicateName {
                    kind: "function",
                    name: spec.name.clone(),
                });
            }
            if let Some(existing) = state
                .functions
                .values()
                .find(|f| f.url_route == spec.url_route)
            {
                return Err(CatalogError::DuplicateRoute {
                    route: spec.url_route.clone(),
                    existing: existing.name.clone(),
                });
            }
            spec.created_at = Utc::now();
            state.functions.insert(spec.name.clone(), spec.clone());
            Ok(spec)
        })
    }

    pub fn get_function(&self, name: &str) -> Result<FunctionSpec> {
        self.read()
            .functions
            .get(name)
            .cloned()
            .ok_or_else(|| CatalogError::NotFound {
                kind: "function",
                name: name.to_string(),
            })
    }

    pub fn list_functions(&self) -> Vec<FunctionSpec> {
        self.read().functions.values().cloned().collect()
    }

    pub fn delete_function(&self, name: &str) -> Result<()> {
        self.mutate(|state| {
            state
                .functions
                .remove(name)
                .map(|_| ())
                .ok_or_else(|| CatalogError::NotFound {
                    kind: "function",
                    name: name.to_string(),
                })
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Applies `op` under the write lock and persists the result. On a
    /// persistence failure the in-memory state is rolled back.
    fn mutate<T>(&self, op: impl FnOnce(&mut State) -> Result<T>) -> Result<T> {
        let mut state = self.write();
        let before = self.path.as_ref().map(|_| state.snapshot());
        let out = op(&mut state)?;
        if let Some(path) = &self.path {
            if let Err(err) = save_snapshot(path, &state.snapshot()) {
                *state = State::from_snapshot(before.expect("snapshot taken when path is set"));
                return Err(err);
            }
        }
        self.generation.fetch_add(1, Ordering::AcqRel);
        Ok(out)
    }
}
