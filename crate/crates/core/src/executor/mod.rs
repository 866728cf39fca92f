//! Per-function runtime pools with a cold/warm lifecycle.
//!
//! Each function gets a pool bounded by `max_pool`. A semaphore with
//! `max_pool` permits gates acquisition: holding a permit entitles the
//! holder to one runtime, either an idle specialized one (warm) or a freshly
//! spawned and specialized one (cold). Requests that cannot get a permit
//! within the queue timeout fail with `CapacityExhausted`.
//!
//! Idle runtimes older than the function's `idle_timeout` are terminated by
//! [`Executor::reap_idle`], never dropping a pool below `min_warm`. A
//! terminated runtime is never handed out again, so anything a handler kept
//! in memory is gone with it.

pub mod builtin;
pub mod handlers;
pub mod process;
pub mod protocol;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use crate::catalog::{EnvironmentSpec, FunctionSpec, RuntimeKind};
use crate::clock::{Clock, SystemClock};
use crate::invocation::{InvocationRequest, InvocationResult, InvocationStatus, Output};
use builtin::BuiltinHost;
use process::ProcessHost;
use protocol::{InvokeReply, ProtocolError, RuntimeClient};

pub const DEFAULT_QUEUE_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_SPAWN_TIMEOUT: Duration = Duration::from_secs(15);
pub const DEFAULT_REAP_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    /// Directory mounted as `/data/` for every runtime host.
    pub data_root: PathBuf,
    pub queue_timeout: Duration,
    pub spawn_timeout: Duration,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            data_root: PathBuf::from("./data"),
            queue_timeout: DEFAULT_QUEUE_TIMEOUT,
            spawn_timeout: DEFAULT_SPAWN_TIMEOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("runtime for `{function}` failed to start: {reason}")]
    SpawnFailure { function: String, reason: String },
    #[error("all {max_pool} runtime(s) of `{function}` stayed busy for {waited:?}")]
    CapacityExhausted {
        function: String,
        max_pool: u32,
        waited: Duration,
    },
    #[error("function `{function}` is bound to environment `{expected}`, got `{got}`")]
    EnvironmentMismatch {
        function: String,
        expected: String,
        got: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleState {
    Starting,
    Specialized,
    Busy,
    Idle,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeHandle {
    pub handle_id: String,
    pub function_name: String,
    pub env_name: String,
    pub endpoint: SocketAddr,
    pub state: HandleState,
    pub last_used_at: DateTime<Utc>,
    pub invocation_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub min_warm: u32,
    pub max_pool: u32,
    pub idle_timeout: Duration,
    pub spawn_timeout: Duration,
}

impl PoolConfig {
    pub fn for_function(function: &FunctionSpec, spawn_timeout: Duration) -> Self {
        PoolConfig {
            min_warm: function.min_warm,
            max_pool: function.max_pool,
            idle_timeout: Duration::from_secs(function.idle_timeout),
            spawn_timeout,
        }
    }
}

/// Point-in-time pool counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PoolStats {
    pub idle: usize,
    pub busy: usize,
    pub live: usize,
    /// Highest `live` ever observed.
    pub peak_live: usize,
    pub spawned: u64,
    pub terminated: u64,
}

#[derive(Debug)]
enum Host {
    Builtin(BuiltinHost),
    Process(ProcessHost),
}

impl Host {
    fn endpoint(&self) -> SocketAddr {
        match self {
            Host::Builtin(h) => h.endpoint(),
            Host::Process(h) => h.endpoint(),
        }
    }

    fn terminate(&mut self) {
        match self {
            Host::Builtin(h) => h.terminate(),
            Host::Process(h) => h.terminate(),
        }
    }
}

#[derive(Debug)]
struct Runtime {
    handle: RuntimeHandle,
    host: Host,
}

impl Runtime {
    fn terminate(&mut self) {
        self.handle.state = HandleState::Terminated;
        self.host.terminate();
    }
}

#[derive(Debug, Default)]
struct PoolInner {
    /// Ordered by `last_used_at`, most recent last.
    idle: Vec<Runtime>,
    /// Leased runtimes, including ones still being spawned for a lease.
    busy: usize,
    /// Runtimes being spawned by `prewarm`.
    warming: usize,
    spawned: u64,
    terminated: u64,
    peak_live: usize,
}

impl PoolInner {
    fn live(&self) -> usize {
        self.idle.len() + self.busy + self.warming
    }

    fn note_peak(&mut self) {
        self.peak_live = self.peak_live.max(self.live());
    }

    fn stats(&self) -> PoolStats {
        PoolStats {
            idle: self.idle.len(),
            busy: self.busy,
            live: self.live(),
            peak_live: self.peak_live,
            spawned: self.spawned,
            terminated: self.terminated,
        }
    }
}

#[derive(Debug)]
struct Pool {
    function: FunctionSpec,
    env: EnvironmentSpec,
    permits: Arc<Semaphore>,
    inner: Mutex<PoolInner>,
    retired: AtomicBool,
    clock: Arc<dyn Clock>,
}

impl Pool {
    fn lock(&self) -> std::sync::MutexGuard<'_, PoolInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn same_definition(&self, function: &FunctionSpec, env: &EnvironmentSpec) -> bool {
        self.function == *function
            && self.env.name == env.name
            && self.env.image_ref == env.image_ref
            && self.env.runtime_kind == env.runtime_kind
            && self.env.launch_command == env.launch_command
    }

    fn retire(&self) -> usize {
        self.retired.store(true, Ordering::Release);
        let mut inner = self.lock();
        let n = inner.idle.len();
        for mut rt in inner.idle.drain(..) {
            rt.terminate();
        }
        inner.terminated += n as u64;
        n
    }
}

/// Undoes a `busy` reservation if the acquiring future is dropped before it
/// produces a lease.
struct BusySlot<'a> {
    pool: &'a Pool,
    armed: bool,
}

impl Drop for BusySlot<'_> {
    fn drop(&mut self) {
        if self.armed {
            self.pool.lock().busy -= 1;
        }
    }
}

#[derive(Debug)]
pub struct Executor {
    config: ExecutorConfig,
    clock: Arc<dyn Clock>,
    client: RuntimeClient,
    pools: Mutex<HashMap<String, Arc<Pool>>>,
    next_handle: AtomicU64,
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Self {
        Executor::with_clock(config, Arc::new(SystemClock))
    }

    pub fn with_clock(config: ExecutorConfig, clock: Arc<dyn Clock>) -> Self {
        Executor {
            config,
            clock,
            client: RuntimeClient::new(),
            pools: Mutex::new(HashMap::new()),
            next_handle: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn pools(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<Pool>>> {
        self.pools.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The pool for `function`, replacing it when the function or its
    /// environment was redefined since the pool was created.
    fn pool_for(
        &self,
        function: &FunctionSpec,
        env: &EnvironmentSpec,
    ) -> Result<Arc<Pool>, ExecutorError> {
        if function.env_name != env.name {
            return Err(ExecutorError::EnvironmentMismatch {
                function: function.name.clone(),
                expected: function.env_name.clone(),
                got: env.name.clone(),
            });
        }
        let mut pools = self.pools();
        if let Some(pool) = pools.get(&function.name) {
            if pool.same_definition(function, env) {
                return Ok(pool.clone());
            }
            pool.retire();
        }
        let pool = Arc::new(Pool {
            function: function.clone(),
            env: env.clone(),
            permits: Arc::new(Semaphore::new(function.max_pool as usize)),
            inner: Mutex::new(PoolInner::default()),
            retired: AtomicBool::new(false),
            clock: self.clock.clone(),
        });
        pools.insert(function.name.clone(), pool.clone());
        Ok(pool)
    }

    /// Hands out a runtime for `function`: a warm idle one when available,
    /// otherwise a newly spawned and specialized one (`cold() == true`).
    pub async fn acquire(
        &self,
        function: &FunctionSpec,
        env: &EnvironmentSpec,
    ) -> Result<Lease, ExecutorError> {
        let pool = self.pool_for(function, env)?;
        let wait = self.config.queue_timeout;
        let permit = match tokio::time::timeout(wait, pool.permits.clone().acquire_owned()).await {
            Ok(Ok(permit)) => permit,
            _ => {
                return Err(ExecutorError::CapacityExhausted {
                    function: function.name.clone(),
                    max_pool: function.max_pool,
                    waited: wait,
                })
            }
        };

        let reused = {
            let mut inner = pool.lock();
            inner.busy += 1;
            let rt = inner.idle.pop();
            inner.note_peak();
            rt
        };
        let mut slot = BusySlot {
            pool: &pool,
            armed: true,
        };
        let (runtime, cold) = match reused {
            Some(rt) => (rt, false),
            None => {
                let rt = self.spawn_runtime(&pool).await?;
                pool.lock().spawned += 1;
                (rt, true)
            }
        };
        slot.armed = false;
        drop(slot);
        Ok(Lease {
            pool,
            runtime: Some(runtime),
            _permit: permit,
            cold,
            client: self.client.clone(),
        })
    }

    /// Spawns idle runtimes until the pool holds `min_warm`. Returns how
    /// many were started.
    pub async fn prewarm(
        &self,
        function: &FunctionSpec,
        env: &EnvironmentSpec,
    ) -> Result<usize, ExecutorError> {
        let pool = self.pool_for(function, env)?;
        let mut started = 0;
        loop {
            let Ok(permit) = pool.permits.clone().try_acquire_owned() else {
                break;
            };
            {
                let mut inner = pool.lock();
                if inner.live() >= function.min_warm as usize {
                    break;
                }
                inner.warming += 1;
                inner.note_peak();
            }
            let spawned = self.spawn_runtime(&pool).await;
            let mut inner = pool.lock();
            inner.warming -= 1;
            match spawned {
                Ok(mut rt) => {
                    rt.handle.state = HandleState::Idle;
                    rt.handle.last_used_at = self.clock.now();
                    inner.spawned += 1;
                    inner.idle.push(rt);
                    started += 1;
                }
                Err(e) => return Err(e),
            }
            drop(inner);
            drop(permit);
        }
        Ok(started)
    }

    async fn spawn_runtime(&self, pool: &Pool) -> Result<Runtime, ExecutorError> {
        let function = &pool.function;
        let fail = |reason: String| ExecutorError::SpawnFailure {
            function: function.name.clone(),
            reason,
        };
        let deadline = Instant::now() + self.config.spawn_timeout;
        let mut host = match pool.env.runtime_kind {
            RuntimeKind::BuiltinTest => Host::Builtin(
                BuiltinHost::start(self.config.data_root.clone())
                    .await
                    .map_err(|e| fail(format!("cannot bind runtime host: {e}")))?,
            ),
            RuntimeKind::ExternalProcess => {
                Host::Process(ProcessHost::spawn(&pool.env, &self.config.data_root).map_err(fail)?)
            }
        };
        let endpoint = host.endpoint();
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                host.terminate();
                return Err(fail(format!(
                    "not specialized within {:?}",
                    self.config.spawn_timeout
                )));
            }
            let attempt = remaining.min(Duration::from_secs(2));
            match self
                .client
                .specialize(endpoint, &function.code_ref, attempt)
                .await
            {
                Ok(()) => break,
                Err(ProtocolError::Unreachable(_)) | Err(ProtocolError::Timeout(_)) => {
                    if let Host::Process(p) = &mut host {
                        if let Some(status) = p.exit_status() {
                            return Err(fail(format!("runtime host exited with {status}")));
                        }
                    }
                    tokio::time::sleep(Duration::from_millis(20)).await;
                }
                Err(e) => {
                    host.terminate();
                    return Err(fail(e.to_string()));
                }
            }
        }
        let n = self.next_handle.fetch_add(1, Ordering::Relaxed);
        tracing::debug!(function = %function.name, %endpoint, "runtime specialized");
        Ok(Runtime {
            handle: RuntimeHandle {
                handle_id: format!("{}-{n}", function.name),
                function_name: function.name.clone(),
                env_name: pool.env.name.clone(),
                endpoint,
                state: HandleState::Specialized,
                last_used_at: self.clock.now(),
                invocation_count: 0,
            },
            host,
        })
    }

    /// Terminates idle runtimes idle for longer than their function's
    /// `idle_timeout`, keeping at least `min_warm` live per function.
    pub fn reap_idle(&self, now: DateTime<Utc>) -> usize {
        let pools: Vec<Arc<Pool>> = self.pools().values().cloned().collect();
        let mut reaped = 0;
        for pool in pools {
            let limit = chrono::Duration::seconds(pool.function.idle_timeout as i64);
            let floor = pool.function.min_warm as usize;
            let mut inner = pool.lock();
            let mut live = inner.live();
            let idle = std::mem::take(&mut inner.idle);
            for mut rt in idle {
                if live > floor && now - rt.handle.last_used_at > limit {
                    rt.terminate();
                    live -= 1;
                    inner.terminated += 1;
                    reaped += 1;
                } else {
                    inner.idle.push(rt);
                }
            }
        }
        reaped
    }

    /// Terminates every idle runtime of `function` regardless of age.
    pub fn recycle(&self, function: &str) -> usize {
        let pool = self.pools().get(function).cloned();
        pool.map(|p| {
            let mut inner = p.lock();
            let n = inner.idle.len();
            for mut rt in inner.idle.drain(..) {
                rt.terminate();
            }
            inner.terminated += n as u64;
            n
        })
        .unwrap_or(0)
    }

    pub fn stats(&self, function: &str) -> Option<PoolStats> {
        self.pools().get(function).map(|p| p.lock().stats())
    }

    /// Handles of idle runtimes of `function`, oldest first.
    pub fn idle_handles(&self, function: &str) -> Vec<RuntimeHandle> {
        self.pools()
            .get(function)
            .map(|p| p.lock().idle.iter().map(|rt| rt.handle.clone()).collect())
            .unwrap_or_default()
    }

    /// Retires every pool; leased runtimes are terminated on release.
    pub fn shutdown(&self) -> usize {
        self.pools().drain().map(|(_, p)| p.retire()).sum()
    }

    /// Calls `reap_idle` every `every` until the executor is dropped.
    pub fn spawn_reaper(self: &Arc<Self>, every: Duration) -> tokio::task::JoinHandle<()> {
        let weak: Weak<Executor> = Arc::downgrade(self);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                let Some(exec) = weak.upgrade() else { break };
                let n = exec.reap_idle(exec.clock.now());
                if n > 0 {
                    tracing::debug!(reaped = n, "idle runtimes terminated");
                }
            }
        })
    }
}

/// Exclusive use of one runtime. Dropping the lease releases it: the
/// runtime goes back to the idle set, or is terminated if it crashed, was
/// interrupted mid-invocation, or its pool was retired.
#[derive(Debug)]
pub struct Lease {
    pool: Arc<Pool>,
    runtime: Option<Runtime>,
    _permit: OwnedSemaphorePermit,
    cold: bool,
    client: RuntimeClient,
}

impl Lease {
    pub fn handle(&self) -> &RuntimeHandle {
        &self.runtime.as_ref().expect("lease holds a runtime").handle
    }

    pub fn cold(&self) -> bool {
        self.cold
    }

    pub async fn invoke(&mut self, request: &InvocationRequest, node_id: &str) -> InvocationResult {
        let timeout = Duration::from_secs(self.pool.function.invoke_timeout);
        let rt = self.runtime.as_mut().expect("lease holds a runtime");
        let mut result = InvocationResult {
            request_id: request.request_id.clone(),
            status: InvocationStatus::PlatformError,
            output: None,
            error: None,
            node_id: node_id.to_string(),
            cold_start: self.cold,
            duration_ms: 0.0,
        };
        if rt.handle.state == HandleState::Terminated {
            result.error = Some("runtime terminated".to_string());
            return result;
        }
        rt.handle.state = HandleState::Busy;
        let started = Instant::now();
        let reply = self
            .client
            .invoke(rt.handle.endpoint, &request.request_id, &request.parameters, timeout)
            .await;
        result.duration_ms = started.elapsed().as_secs_f64() * 1000.0;
        rt.handle.invocation_count += 1;
        match reply {
            Ok(InvokeReply::Ok(output)) => {
                rt.handle.state = HandleState::Idle;
                result.status = InvocationStatus::Ok;
                result.output = Some(output);
            }
            Ok(InvokeReply::HandlerError(message)) => {
                rt.handle.state = HandleState::Idle;
                result.status = InvocationStatus::HandlerError;
                result.output = Some(Output::text(message.clone()));
                result.error = Some(message);
            }
            Err(e) => {
                tracing::warn!(handle = %rt.handle.handle_id, "runtime failed: {e}");
                rt.terminate();
                result.error = Some(e.to_string());
            }
        }
        result
    }

    pub fn release(self) {}
}

impl Drop for Lease {
    fn drop(&mut self) {
        let Some(mut rt) = self.runtime.take() else {
            return;
        };
        let mut inner = self.pool.lock();
        inner.busy -= 1;
        let reusable = matches!(rt.handle.state, HandleState::Idle | HandleState::Specialized)
            && !self.pool.retired.load(Ordering::Acquire);
        if reusable {
            rt.handle.state = HandleState::Idle;
            rt.handle.last_used_at = self.pool.clock.now();
            inner.idle.push(rt);
        } else {
            if rt.handle.state != HandleState::Terminated {
                rt.terminate();
            }
            inner.terminated += 1;
        }
    }
}
