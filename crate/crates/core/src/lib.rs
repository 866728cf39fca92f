//! A small function-as-a-service platform for chained scientific pipelines.
//!
//! Functions are registered in a [`catalog::Catalog`] against named runtime
//! environments, published over HTTP by the [`gateway`], placed on a node of
//! a simulated federated cluster by the [`planner`], and executed in pooled
//! runtime hosts managed by the [`executor`]. The [`workflow`] module chains
//! functions so that each step consumes the previous step's output.

pub mod catalog;
pub mod clock;
pub mod executor;
pub mod gateway;
pub mod grid;
pub mod invocation;
pub mod planner;
pub mod platform;
pub mod workflow;

pub use catalog::{Catalog, CatalogError, EnvironmentSpec, FunctionSpec, HttpMethod, RuntimeKind};
pub use clock::{Clock, ManualClock, SystemClock};
pub use executor::{Executor, ExecutorConfig, ExecutorError, Lease, PoolStats, RuntimeHandle};
pub use invocation::{DataKeys, InvocationRequest, InvocationResult, InvocationStatus, Output};
pub use planner::{ClusterState, DataItem, NetworkLink, NodeSpec, PlacementDecision, Planner, Weights};
pub use gateway::{Gateway, GatewayError, RouteTable};
pub use platform::{Dispatch, DispatchError, Platform};
pub use workflow::{parse_workflow, run_workflow, WorkflowError, WorkflowResult, WorkflowSpec, WorkflowStatus, WorkflowStep};
