use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "meshfaas", version, about = "Miniature function-as-a-service platform")]
pub struct Cli {
    /// Catalog file holding environments and functions.
    #[arg(long, global = true, env = "FAAS_CATALOG", default_value = "catalog.json")]
    pub catalog: PathBuf,
    /// Cluster topology file. Without one the planner sees a single node `local`.
    #[arg(long, global = true, env = "FAAS_TOPOLOGY", default_value = "topology.json")]
    pub topology: PathBuf,
    /// Directory served to handlers as `/data/`.
    #[arg(long, global = true, env = "FAAS_DATA_ROOT", default_value = "data")]
    pub data_root: PathBuf,
    #[arg(long, global = true, default_value = meshfaas::gateway::DEFAULT_LISTEN)]
    pub listen: String,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub output: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Manage runtime environments.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Manage and invoke functions.
    #[command(subcommand, name = "fn")]
    Function(FnCommand),
    /// Run the gateway, executor and planner until interrupted.
    Serve,
    /// Validate a topology file and install it at `--topology`.
    #[command(subcommand)]
    Topology(TopologyCommand),
    /// Register data items in the topology.
    #[command(subcommand)]
    Data(DataCommand),
    /// Inspect placement without executing anything.
    #[command(subcommand)]
    Plan(PlanCommand),
    /// Run linear pipelines.
    #[command(subcommand)]
    Workflow(WorkflowCommand),
    /// Serve the builtin handlers as a standalone runtime host process.
    RuntimeHost {
        #[arg(long, env = "FAAS_RUNTIME_PORT")]
        port: u16,
        #[arg(long, default_value = ".")]
        workdir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum EnvCommand {
    Create(EnvCreate),
    List,
    Delete {
        #[arg(long)]
        name: String,
    },
}

#[derive(Debug, Args)]
pub struct EnvCreate {
    #[arg(long)]
    pub name: String,
    /// Image reference, recorded as given.
    #[arg(long)]
    pub image: String,
    #[arg(long, default_value = "builtin-test")]
    pub kind: String,
    /// Launch command template for external-process runtimes, with
    /// `{port}` and `{workdir}` placeholders.
    #[arg(long)]
    pub command: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum FnCommand {
    Create(FnCreate),
    List,
    Delete {
        #[arg(long)]
        name: String,
    },
    /// Send a request to the running gateway.
    Invoke {
        #[arg(long)]
        name: String,
        /// JSON object, or `@path` to read it from a file.
        #[arg(long, default_value = "{}")]
        data: String,
        #[arg(long, env = "FAAS_GATEWAY_URL", default_value = "http://127.0.0.1:8888")]
        gateway: String,
    },
}

#[derive(Debug, Args)]
pub struct FnCreate {
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub code: String,
    #[arg(long, default_value = "POST")]
    pub method: String,
    #[arg(long)]
    pub url: String,
    #[arg(long, default_value_t = meshfaas::catalog::DEFAULT_MIN_WARM)]
    pub min_warm: u32,
    #[arg(long, default_value_t = meshfaas::catalog::DEFAULT_MAX_POOL)]
    pub max_pool: u32,
    /// Seconds an idle runtime is kept before it is reaped.
    #[arg(long, default_value_t = meshfaas::catalog::DEFAULT_IDLE_TIMEOUT_SECS)]
    pub idle_timeout: u64,
    #[arg(long, default_value_t = meshfaas::catalog::DEFAULT_INVOKE_TIMEOUT_SECS)]
    pub invoke_timeout: u64,
}

#[derive(Debug, Subcommand)]
pub enum TopologyCommand {
    Load { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        size: u64,
        /// Comma-separated replica nodes.
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PlanCommand {
    /// Cost breakdown on every node for a function and parameters.
    Explain {
        #[arg(long = "fn")]
        function: String,
        #[arg(long, default_value = "{}")]
        data: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum WorkflowCommand {
    Run {
        file: PathBuf,
        /// Workflow input as key=value; repeatable.
        #[arg(long = "input", value_name = "KEY=VALUE")]
        inputs: Vec<String>,
    },
}
