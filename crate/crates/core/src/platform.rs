//! The invocation path shared by the gateway and the workflow runner:
//! plan a node, lease a runtime, invoke, release, and record where the
//! output now lives.

use std::sync::Arc;

use serde_json::{Map, Value};

use crate::catalog::{Catalog, CatalogError, FunctionSpec};
use crate::executor::{Executor, ExecutorError};
use crate::invocation::{DataKeys, InvocationRequest, InvocationResult};
use crate::planner::{PlacementDecision, Planner, PlannerError};

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("placement failed: {0}")]
    Placement(#[from] PlannerError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
}

impl DispatchError {
    pub fn is_capacity(&self) -> bool {
        matches!(self, DispatchError::Executor(ExecutorError::CapacityExhausted { .. }))
    }
}

/// One completed trip through the platform.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub request: InvocationRequest,
    pub placement: PlacementDecision,
    pub result: InvocationResult,
}

#[derive(Debug)]
pub struct Platform {
    catalog: Arc<Catalog>,
    planner: Arc<Planner>,
    executor: Arc<Executor>,
    data_keys: DataKeys,
}

/// Returns the planner's load slot when dropped, including on cancellation.
struct LoadSlot<'a> {
    planner: &'a Planner,
    node: String,
}

impl Drop for LoadSlot<'_> {
    fn drop(&mut self) {
        if let Err(e) = self.planner.update_load(&self.node, -1) {
            tracing::error!("load accounting out of sync: {e}");
        }
    }
}

impl Platform {
    pub fn new(catalog: Arc<Catalog>, planner: Arc<Planner>, executor: Arc<Executor>) -> Self {
        Platform {
            catalog,
            planner,
            executor,
            data_keys: DataKeys::default(),
        }
    }

    pub fn with_data_keys(mut self, keys: DataKeys) -> Self {
        self.data_keys = keys;
        self
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn planner(&self) -> &Arc<Planner> {
        &self.planner
    }

    pub fn executor(&self) -> &Arc<Executor> {
        &self.executor
    }

    pub fn data_keys(&self) -> &DataKeys {
        &self.data_keys
    }

    pub fn request(&self, function: &str, parameters: Map<String, Value>) -> InvocationRequest {
        InvocationRequest::new(function, parameters, &self.data_keys)
    }

    pub async fn invoke(
        &self,
        function: &FunctionSpec,
        parameters: Map<String, Value>,
    ) -> Result<Dispatch, DispatchError> {
        self.dispatch(function, self.request(&function.name, parameters))
            .await
    }

    pub async fn invoke_by_name(
        &self,
        name: &str,
        parameters: Map<String, Value>,
    ) -> Result<Dispatch, DispatchError> {
        let function = self.catalog.get_function(name)?;
        self.invoke(&function, parameters).await
    }

    pub async fn dispatch(
        &self,
        function: &FunctionSpec,
        request: InvocationRequest,
    ) -> Result<Dispatch, DispatchError> {
        let env = self.catalog.get_environment(&function.env_name)?;
        let placement = self.planner.plan(&request.data_refs)?;
        let slot = LoadSlot {
            planner: &self.planner,
            node: placement.node_id.clone(),
        };
        let mut lease = self.executor.acquire(function, &env).await?;
        let result = lease.invoke(&request, &placement.node_id).await;
        lease.release();
        drop(slot);

        if result.is_ok() {
            self.record_output(&request, &placement, &result);
        }
        tracing::info!(
            request_id = %request.request_id,
            function = %function.name,
            node = %placement.node_id,
            status = ?result.status,
            cold = result.cold_start,
            "invocation finished"
        );
        Ok(Dispatch {
            request,
            placement,
            result,
        })
    }

    /// Registers a `/data/` output as a replica on the executing node so
    /// later placements see it there. Its simulated size is the largest
    /// known input it was derived from, or the file's actual size when it
    /// had no known inputs.
    fn record_output(
        &self,
        request: &InvocationRequest,
        placement: &PlacementDecision,
        result: &InvocationResult,
    ) {
        let Some(data_id) = result.output.as_ref().and_then(|o| o.data_ref()) else {
            return;
        };
        let cluster = self.planner.snapshot();
        let derived = request
            .data_refs
            .iter()
            .filter(|r| r.as_str() != data_id)
            .filter_map(|r| cluster.data_item(r))
            .map(|item| item.size_bytes)
            .max();
        let size = derived.unwrap_or_else(|| {
            std::fs::metadata(self.executor.config().data_root.join(data_id))
                .map(|m| m.len())
                .unwrap_or(0)
        });
        if let Err(e) = self.planner.add_replica(data_id, &placement.node_id, size) {
            tracing::warn!("could not record replica of {data_id}: {e}");
        }
    }
}
