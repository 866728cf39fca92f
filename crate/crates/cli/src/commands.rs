use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use meshfaas::catalog::{CatalogError, HttpMethod, RuntimeKind};
use meshfaas::executor::DEFAULT_REAP_INTERVAL;
use meshfaas::planner::{load_topology, plan_placement, save_topology, PlannerError};
use meshfaas::workflow::{parse_workflow, run_workflow, WorkflowError, WorkflowStatus};
use meshfaas::{
    Catalog, ClusterState, DataItem, DataKeys, EnvironmentSpec, Executor, ExecutorConfig,
    FunctionSpec, Gateway, GatewayError, Planner, Platform, Weights,
};
use serde_json::{json, Map, Value};

use crate::args::{
    Cli, Command, DataCommand, EnvCommand, EnvCreate, FnCommand, FnCreate, PlanCommand,
    TopologyCommand, WorkflowCommand,
};

/// Exit 1 for domain and validation errors, 2 for I/O and environment errors.
#[derive(Debug)]
pub enum Failure {
    Domain(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Domain(m) | Failure::Io(m) => m,
        }
    }
}

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

impl From<PlannerError> for Failure {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

impl From<WorkflowError> for Failure {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure::Domain(e.to_string())
    }
}

/// What a command prints: `text` or `json` depending on `--output`, and an
/// optional error that turns the exit code to 1 after printing.
#[derive(Debug)]
pub struct Report {
    pub text: String,
    pub json: Value,
    pub error: Option<String>,
}

impl Report {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Report {
            text: text.into(),
            json,
            error: None,
        }
    }
}

pub async fn run(cli: Cli) -> Result<Report, Failure> {
    match &cli.command {
        Command::Env(cmd) => env(&cli, cmd),
        Command::Function(cmd) => function(&cli, cmd).await,
        Command::Serve => serve(&cli).await,
        Command::Topology(TopologyCommand::Load { file }) => topology_load(&cli, file),
        Command::Data(DataCommand::Add { id, size, nodes }) => data_add(&cli, id, *size, nodes),
        Command::Plan(PlanCommand::Explain { function, data }) => plan_explain(&cli, function, data),
        Command::Workflow(WorkflowCommand::Run { file, inputs }) => {
            workflow_run(&cli, file, inputs).await
        }
        Command::RuntimeHost { port, workdir } => runtime_host(*port, workdir).await,
    }
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = vec![line(header.iter().map(|h| h.to_string()).collect())];
    out.extend(rows.into_iter().map(line));
    out.join("\n")
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("serializable")
}

fn env(cli: &Cli, cmd: &EnvCommand) -> Result<Report, Failure> {
    let catalog = Catalog::open(&cli.catalog)?;
    match cmd {
        EnvCommand::Create(EnvCreate {
            name,
            image,
            kind,
            command,
        }) => {
            let spec = match kind.parse::<RuntimeKind>()? {
                RuntimeKind::BuiltinTest => {
                    if command.is_some() {
                        return Err(Failure::Domain(
                            "--command applies to external-process environments only".into(),
                        ));
                    }
                    EnvironmentSpec::builtin(name, image)
                }
                RuntimeKind::ExternalProcess => {
                    let template = command
                        .as_deref()
                        .unwrap_or_default()
                        .split_whitespace()
                        .map(str::to_string)
                        .collect();
                    EnvironmentSpec::external(name, image, template)
                }
            };
            let created = catalog.create_environment(spec)?;
            Ok(Report::new(created.name.clone(), to_json(&created)))
        }
        EnvCommand::List => {
            let envs = catalog.list_environments();
            let rows = envs
                .iter()
                .map(|e| vec![e.name.clone(), e.runtime_kind.to_string(), e.image_ref.clone()])
                .collect();
            Ok(Report::new(table(&["NAME", "KIND", "IMAGE"], rows), to_json(&envs)))
        }
        EnvCommand::Delete { name } => {
            catalog.delete_environment(name)?;
            Ok(Report::new(format!("deleted {name}"), json!({"deleted": name})))
        }
    }
}

/// `--data` value: inline JSON or `@file`. Must be an object.
fn read_parameters(data: &str) -> Result<Map<String, Value>, Failure> {
    let text = match data.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("cannot read {path}: {e}")))?,
        None => data.to_string(),
    };
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Failure::Domain("--data must be a JSON object".into())),
        Err(e) => Err(Failure::Domain(format!("--data is not valid JSON: {e}"))),
    }
}

async fn function(cli: &Cli, cmd: &FnCommand) -> Result<Report, Failure> {
    let catalog = Catalog::open(&cli.catalog)?;
    match cmd {
        FnCommand::Create(FnCreate {
            name,
            env,
            code,
            method,
            url,
            min_warm,
            max_pool,
            idle_timeout,
            invoke_timeout,
        }) => {
            let spec = FunctionSpec::new(name, env, code, url)
                .with_method(method.parse::<HttpMethod>()?)
                .with_pool(*min_warm, *max_pool, *idle_timeout)
                .with_invoke_timeout(*invoke_timeout);
            let created = catalog.create_function(spec)?;
            Ok(Report::new(
                format!("{} {} {}", created.name, created.http_method, created.url_route),
                to_json(&created),
            ))
        }
        FnCommand::List => {
            let fns = catalog.list_functions();
            let rows = fns
                .iter()
                .map(|f| {
                    vec![
                        f.name.clone(),
                        f.env_name.clone(),
                        f.url_route.clone(),
                        f.http_method.to_string(),
                    ]
                })
                .collect();
            Ok(Report::new(
                table(&["NAME", "ENV", "ROUTE", "METHOD"], rows),
                to_json(&fns),
            ))
        }
        FnCommand::Delete { name } => {
            catalog.delete_function(name)?;
            Ok(Report::new(format!("deleted {name}"), json!({"deleted": name})))
        }
        FnCommand::Invoke {
            name,
            data,
            gateway,
        } => {
            let params = read_parameters(data)?;
            let spec = catalog.get_function(name).map_err(|e| match e {
                CatalogError::NotFound { .. } => Failure::Domain(format!("404: {e}")),
                other => other.into(),
            })?;
            invoke(gateway, &spec, &params).await
        }
    }
}

async fn invoke(gateway: &str, spec: &FunctionSpec, params: &Map<String, Value>) -> Result<Report, Failure> {
    let url = format!("{}{}", gateway.trim_end_matches('/'), spec.url_route);
    let client = reqwest::Client::builder()
        .no_proxy()
        .build()
        .map_err(|e| Failure::Io(e.to_string()))?;
    let method = match spec.http_method {
        HttpMethod::Get => reqwest::Method::GET,
        HttpMethod::Post => reqwest::Method::POST,
    };
    let resp = client
        .request(method, &url)
        .header("content-type", "application/json")
        .body(Value::Object(params.clone()).to_string())
        .send()
        .await
        .map_err(|e| Failure::Io(format!("cannot reach gateway at {url}: {e}")))?;
    let status = resp.status().as_u16();
    let header = |name: &str| {
        resp.headers()
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    };
    let meta = json!({
        "request_id": header("x-faas-request-id"),
        "node": header("x-faas-node"),
        "cold_start": header("x-faas-cold-start").map(|v| v == "true"),
        "duration_ms": header("x-faas-duration-ms").and_then(|v| v.parse::<f64>().ok()),
    });
    let body = resp
        .text()
        .await
        .map_err(|e| Failure::Io(format!("reading response from {url}: {e}")))?;
    let mut report = Report::new(
        body.clone(),
        json!({"status": status, "body": body, "meta": meta}),
    );
    if status != 200 {
        report.text.clear();
        report.error = Some(format!("HTTP {status}: {}", body.trim_end()));
    }
    Ok(report)
}

fn open_planner(path: &Path) -> Result<Planner, Failure> {
    if path.exists() {
        let (cluster, weights) = load_topology(path)?;
        Ok(Planner::new(cluster, weights))
    } else {
        Ok(Planner::single_local())
    }
}

fn platform(cli: &Cli) -> Result<Platform, Failure> {
    std::fs::create_dir_all(&cli.data_root)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", cli.data_root.display())))?;
    let catalog = Catalog::open(&cli.catalog)?;
    let executor = Executor::new(ExecutorConfig {
        data_root: cli.data_root.clone(),
        ..ExecutorConfig::default()
    });
    Ok(Platform::new(
        Arc::new(catalog),
        Arc::new(open_planner(&cli.topology)?),
        Arc::new(executor),
    ))
}

fn modified(path: &Path) -> Option<SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// Reloads the catalog whenever its file changes on disk.
fn watch_catalog(catalog: Arc<Catalog>, path: PathBuf) {
    tokio::spawn(async move {
        let mut seen = modified(&path);
        let mut tick = tokio::time::interval(Duration::from_secs(1));
        loop {
            tick.tick().await;
            let now = modified(&path);
            if now != seen {
                seen = now;
                match catalog.reload() {
                    Ok(()) => tracing::info!("catalog reloaded from {}", path.display()),
                    Err(e) => tracing::error!("catalog reload failed: {e}"),
                }
            }
        }
    });
}

async fn serve(cli: &Cli) -> Result<Report, Failure> {
    let platform = Arc::new(platform(cli)?);
    let gateway = Arc::new(Gateway::new(platform.clone())?);
    let listener = tokio::net::TcpListener::bind(&cli.listen)
        .await
        .map_err(|e| Failure::Io(format!("cannot listen on {}: {e}", cli.listen)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Failure::Io(e.to_string()))?;
    let executor = platform.executor().clone();
    executor.spawn_reaper(DEFAULT_REAP_INTERVAL);
    watch_catalog(platform.catalog().clone(), cli.catalog.clone());

    for f in platform.catalog().list_functions() {
        if f.min_warm == 0 {
            continue;
        }
        let platform = platform.clone();
        tokio::spawn(async move {
            let env = match platform.catalog().get_environment(&f.env_name) {
                Ok(env) => env,
                Err(e) => return tracing::warn!("prewarm of {} skipped: {e}", f.name),
            };
            match platform.executor().prewarm(&f, &env).await {
                Ok(n) => tracing::info!("prewarmed {n} runtime(s) for {}", f.name),
                Err(e) => tracing::warn!("prewarm of {} failed: {e}", f.name),
            }
        });
    }

    tracing::info!(
        "gateway listening on http://{addr} with {} route(s)",
        gateway.routes().len()
    );
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    let served = meshfaas::gateway::serve(gateway, listener, shutdown).await;
    let terminated = executor.shutdown();
    served.map_err(|e| Failure::Io(format!("gateway stopped: {e}")))?;
    Ok(Report::new(
        format!("stopped; {terminated} runtime(s) terminated"),
        json!({"listen": addr.to_string(), "terminated": terminated}),
    ))
}

fn topology_summary(cluster: &ClusterState, path: &Path) -> (String, Value) {
    let text = format!(
        "{} nodes, {} links, {} data items -> {}",
        cluster.node_count(),
        cluster.link_count(),
        cluster.data_items().count(),
        path.display()
    );
    let json = json!({
        "path": path,
        "nodes": cluster.node_count(),
        "links": cluster.link_count(),
        "data_items": cluster.data_items().count(),
    });
    (text, json)
}

fn topology_load(cli: &Cli, file: &Path) -> Result<Report, Failure> {
    let (cluster, weights) = load_topology(file)?;
    save_topology(&cli.topology, &cluster, weights)?;
    let (text, json) = topology_summary(&cluster, &cli.topology);
    Ok(Report::new(text, json))
}

fn data_add(cli: &Cli, id: &str, size: u64, nodes: &[String]) -> Result<Report, Failure> {
    let (mut cluster, weights) = if cli.topology.exists() {
        load_topology(&cli.topology)?
    } else {
        (ClusterState::single_local(), Weights::default())
    };
    let item = DataItem::new(id, size, nodes.iter().map(|n| n.trim()));
    cluster.register_data(item.clone())?;
    save_topology(&cli.topology, &cluster, weights)?;
    Ok(Report::new(
        format!(
            "{id} ({size} bytes) on {}",
            item.replica_nodes.iter().cloned().collect::<Vec<_>>().join(",")
        ),
        to_json(&item),
    ))
}

fn plan_explain(cli: &Cli, function: &str, data: &str) -> Result<Report, Failure> {
    let params = read_parameters(data)?;
    let catalog = Catalog::open(&cli.catalog)?;
    catalog.get_function(function)?;
    let planner = open_planner(&cli.topology)?;
    let refs = DataKeys::default().extract(&params);
    let chosen = plan_placement(&planner.snapshot(), &refs, planner.weights())
        .ok()
        .map(|d| d.node_id);

    let mut rows = Vec::new();
    let mut nodes = Vec::new();
    for (node, estimate) in planner.explain(&refs) {
        let mark = if chosen.as_deref() == Some(node.as_str()) { "*" } else { "" };
        match estimate {
            Ok(est) => {
                let b = est.breakdown;
                rows.push(vec![
                    mark.to_string(),
                    node.clone(),
                    format!("{:.6}", b.transfer_cost),
                    format!("{:.6}", b.latency_cost),
                    format!("{:.6}", b.compute_cost),
                    format!("{:.6}", b.total()),
                ]);
                nodes.push(json!({
                    "node_id": node,
                    "feasible": true,
                    "breakdown": b,
                    "total_cost": b.total(),
                    "transfers": est.transfers,
                }));
            }
            Err(e) => {
                rows.push(vec![mark.to_string(), node.clone(), format!("infeasible: {e}")]);
                nodes.push(json!({"node_id": node, "feasible": false, "reason": e.to_string()}));
            }
        }
    }
    let mut text = format!("function {function}, data [{}]\n", refs.join(", "));
    text.push_str(&table(&["", "NODE", "TRANSFER", "LATENCY", "COMPUTE", "TOTAL"], rows));
    let mut report = Report::new(
        text,
        json!({"function": function, "data_refs": refs, "chosen": chosen, "nodes": nodes}),
    );
    if chosen.is_none() {
        report.error = Some("no feasible node".into());
    }
    Ok(report)
}

fn parse_inputs(inputs: &[String]) -> Result<Map<String, Value>, Failure> {
    inputs
        .iter()
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) if !k.is_empty() => Ok((k.to_string(), Value::String(v.to_string()))),
            _ => Err(Failure::Domain(format!("--input `{kv}` is not KEY=VALUE"))),
        })
        .collect()
}

async fn workflow_run(cli: &Cli, file: &Path, inputs: &[String]) -> Result<Report, Failure> {
    let inputs = parse_inputs(inputs)?;
    let platform = platform(cli)?;
    let spec = parse_workflow(file, platform.catalog())?;
    let result = run_workflow(&platform, &spec, &inputs).await;
    platform.executor().shutdown();
    let result = result?;

    let rows = result
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step_name.clone(),
                s.function_name.clone(),
                s.node_id.clone(),
                format!("{:.1}", s.result.duration_ms),
                if s.result.cold_start { "cold" } else { "warm" }.to_string(),
                s.result
                    .output
                    .as_ref()
                    .and_then(|o| o.as_str())
                    .unwrap_or("")
                    .to_string(),
            ]
        })
        .collect();
    let mut text = table(&["STEP", "FUNCTION", "NODE", "MS", "START", "OUTPUT"], rows);
    let mut report = Report::new(String::new(), to_json(&result));
    match &result.status {
        WorkflowStatus::Completed => {
            text.push_str(&format!(
                "\n{} completed: {}",
                result.workflow,
                result.final_output.as_deref().unwrap_or("(no output)")
            ));
        }
        WorkflowStatus::AbortedAt { step_name, reason } => {
            report.error = Some(format!("{} aborted at step `{step_name}`: {reason}", result.workflow));
        }
    }
    report.text = text;
    Ok(report)
}

async fn runtime_host(port: u16, workdir: &Path) -> Result<Report, Failure> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|e| Failure::Io(format!("cannot listen on port {port}: {e}")))?;
    tracing::info!("runtime host on 127.0.0.1:{port}, data root {}", workdir.display());
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    meshfaas::executor::builtin::serve(listener, workdir.to_path_buf(), shutdown)
        .await
        .map_err(|e| Failure::Io(e.to_string()))?;
    Ok(Report::new("", json!({"stopped": true})))
}
