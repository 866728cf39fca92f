//! Execution planner: picks the node of the simulated federated cluster on
//! which an invocation should run.
//!
//! Each candidate node is scored with a weighted sum of three terms: the
//! cost of pulling every input item from its cheapest replica, the worst
//! link latency among those pulls, and the node's own per-invocation compute
//! cost. Nodes that are full or cannot reach some input are skipped; the
//! cheapest remaining node wins, ties going to the smallest node id.

mod cost;
mod topology;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

pub use cost::{estimate_cost, plan_placement, CostBreakdown, CostEstimate, Transfer};
pub use topology::{load_topology, save_topology, TopologyFile};

pub type NodeId = String;

/// Bytes per GiB; transfer prices are quoted per GiB.
pub const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("node `{node}` is infeasible: {reason}")]
    Infeasible { node: NodeId, reason: String },
    #[error("no feasible node for this invocation ({})", .reasons.join("; "))]
    NoFeasibleNode { reasons: Vec<String> },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("load on node `{node}` cannot drop below zero (current {current}, delta {delta})")]
    LoadUnderflow { node: NodeId, current: u32, delta: i64 },
    #[error("{}: {source}", .path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PlannerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    #[serde(default)]
    pub site_name: String,
    pub compute_cost_per_invocation: f64,
    pub capacity: u32,
}

impl NodeSpec {
    pub fn new(node_id: impl Into<NodeId>, compute_cost: f64, capacity: u32) -> Self {
        let node_id = node_id.into();
        NodeSpec {
            site_name: node_id.clone(),
            node_id,
            compute_cost_per_invocation: compute_cost,
            capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLink {
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub latency_ms: f64,
    pub cost_per_gib: f64,
    pub bandwidth_gibps: f64,
}

impl NetworkLink {
    pub fn new(
        from: impl Into<NodeId>,
        to: impl Into<NodeId>,
        latency_ms: f64,
        cost_per_gib: f64,
    ) -> Self {
        NetworkLink {
            from_node: from.into(),
            to_node: to.into(),
            latency_ms,
            cost_per_gib,
            bandwidth_gibps: 1.0,
        }
    }

    fn loopback(node: &str) -> Self {
        NetworkLink::new(node, node, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataItem {
    pub data_id: String,
    pub size_bytes: u64,
    pub replica_nodes: BTreeSet<NodeId>,
}

impl DataItem {
    pub fn new<I, S>(data_id: impl Into<String>, size_bytes: u64, replicas: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<NodeId>,
    {
        DataItem {
            data_id: data_id.into(),
            size_bytes,
            replica_nodes: replicas.into_iter().map(Into::into).collect(),
        }
    }

    pub fn size_gib(&self) -> f64 {
        self.size_bytes as f64 / GIB
    }
}

/// Multipliers applied to the transfer, latency and compute terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            alpha: 1.0,
            beta: 0.001,
            gamma: 1.0,
        }
    }
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Weights { alpha, beta, gamma }
    }

    pub fn scaled(self, k: f64) -> Self {
        Weights::new(self.alpha * k, self.beta * k, self.gamma * k)
    }

    fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !w.is_finite() || w < 0.0 {
                return Err(PlannerError::InvalidTopology(format!(
                    "weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Snapshot of the simulated topology plus in-flight load.
///
/// Links are keyed by ordered `(from, to)` pair; self-links are always
/// present with zero latency and cost. A missing pair means the two nodes
/// are disconnected.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    nodes: BTreeMap<NodeId, NodeSpec>,
    links: BTreeMap<(NodeId, NodeId), NetworkLink>,
    data_items: BTreeMap<String, DataItem>,
    current_load: BTreeMap<NodeId, u32>,
}

fn non_negative(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(PlannerError::InvalidTopology(format!(
            "{what} must be finite and non-negative, got {v}"
        )))
    }
}

impl ClusterState {
    pub fn new(
        nodes: Vec<NodeSpec>,
        links: Vec<NetworkLink>,
        data_items: Vec<DataItem>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(PlannerError::InvalidTopology(
                "cluster has no nodes".to_string(),
            ));
        }
        let mut cluster = ClusterState {
            nodes: BTreeMap::new(),
            links: BTreeMap::new(),
            data_items: BTreeMap::new(),
            current_load: BTreeMap::new(),
        };
        for node in nodes {
            if node.node_id.is_empty() {
                return Err(PlannerError::InvalidTopology(
                    "node_id must not be empty".to_string(),
                ));
            }
            non_negative(
                &format!("compute_cost_per_invocation of `{}`", node.node_id),
                node.compute_cost_per_invocation,
            )?;
            if node.capacity == 0 {
                return Err(PlannerError::InvalidTopology(format!(
                    "capacity of `{}` must be positive",
                    node.node_id
                )));
            }
            let id = node.node_id.clone();
            if cluster.nodes.insert(id.clone(), node).is_some() {
                return Err(PlannerError::InvalidTopology(format!(
                    "node_id `{id}` is not unique"
                )));
            }
            cluster.current_load.insert(id, 0);
        }
        for link in links {
            cluster.insert_link(link)?;
        }
        let ids: Vec<NodeId> = cluster.nodes.keys().cloned().collect();
        for id in ids {
            cluster
                .links
                .entry((id.clone(), id.clone()))
                .or_insert_with(|| NetworkLink::loopback(&id));
        }
        for item in data_items {
            cluster.register_data(item)?;
        }
        Ok(cluster)
    }

    /// The implicit topology used when none is configured.
    pub fn single_local() -> Self {
        ClusterState::new(vec![NodeSpec::new("local", 0.0, u32::MAX)], vec![], vec![])
            .expect("single-node cluster is valid")
    }

    fn insert_link(&mut self, link: NetworkLink) -> Result<()> {
        for end in [&link.from_node, &link.to_node] {
            if !self.nodes.contains_key(end) {
                return Err(PlannerError::InvalidTopology(format!(
                    "link {} -> {} references unknown node `{end}`",
                    link.from_node, link.to_node
                )));
            }
        }
        let label = format!("link {} -> {}", link.from_node, link.to_node);
        non_negative(&format!("latency_ms of {label}"), link.latency_ms)?;
        non_negative(&format!("cost_per_gib of {label}"), link.cost_per_gib)?;
        if !(link.bandwidth_gibps.is_finite() && link.bandwidth_gibps > 0.0) {
            return Err(PlannerError::InvalidTopology(format!(
                "bandwidth_gibps of {label} must be positive"
            )));
        }
        if link.from_node == link.to_node && (link.latency_ms != 0.0 || link.cost_per_gib != 0.0) {
            return Err(PlannerError::InvalidTopology(format!(
                "self-link on `{}` must have zero latency and zero cost",
                link.from_node
            )));
        }
        let key = (link.from_node.clone(), link.to_node.clone());
        if self.links.insert(key, link).is_some() {
            return Err(PlannerError::InvalidTopology(format!(
                "{label} is listed more than once"
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.get(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// All links, self-links included.
    pub fn links(&self) -> impl Iterator<Item = &NetworkLink> {
        self.links.values()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// `None` when the pair is disconnected.
    pub fn link(&self, from: &str, to: &str) -> Option<&NetworkLink> {
        self.links.get(&(from.to_string(), to.to_string()))
    }

    pub fn data_items(&self) -> impl Iterator<Item = &DataItem> {
        self.data_items.values()
    }

    pub fn data_item(&self, id: &str) -> Option<&DataItem> {
        self.data_items.get(id)
    }

    pub fn load(&self, node: &str) -> u32 {
        self.current_load.get(node).copied().unwrap_or(0)
    }

    /// Inserts or replaces a data item.
    pub fn register_data(&mut self, item: DataItem) -> Result<()> {
        if item.data_id.is_empty() {
            return Err(PlannerError::InvalidTopology(
                "data_id must not be empty".to_string(),
            ));
        }
        if item.replica_nodes.is_empty() {
            return Err(PlannerError::InvalidTopology(format!(
                "data item `{}` has no replica nodes",
                item.data_id
            )));
        }
        if let Some(missing) = item.replica_nodes.iter().find(|n| !self.nodes.contains_key(*n)) {
            return Err(PlannerError::InvalidTopology(format!(
                "data item `{}` lists unknown replica node `{missing}`",
                item.data_id
            )));
        }
        self.data_items.insert(item.data_id.clone(), item);
        Ok(())
    }

    /// Records that `node` now holds a copy of `data_id`. Unknown items are
    /// created with `size_bytes`; known items keep their size.
    pub fn add_replica(&mut self, data_id: &str, node: &str, size_bytes: u64) -> Result<()> {
        if !self.nodes.contains_key(node) {
            return Err(PlannerError::UnknownNode(node.to_string()));
        }
        match self.data_items.get_mut(data_id) {
            Some(item) => {
                item.replica_nodes.insert(node.to_string());
                Ok(())
            }
            None => self.register_data(DataItem::new(data_id, size_bytes, [node])),
        }
    }

    pub fn update_load(&mut self, node: &str, delta: i64) -> Result<u32> {
        let current = *self
            .current_load
            .get(node)
            .ok_or_else(|| PlannerError::UnknownNode(node.to_string()))?;
        let next = i64::from(current) + delta;
        if next < 0 {
            return Err(PlannerError::LoadUnderflow {
                node: node.to_string(),
                current,
                delta,
            });
        }
        let next = u32::try_from(next).unwrap_or(u32::MAX);
        self.current_load.insert(node.to_string(), next);
        Ok(next)
    }
}

/// Thread-safe planner over a shared cluster state.
///
/// `plan` evaluates and reserves a load slot under one write lock, so two
/// concurrent plans never both take the last slot of a node.
#[derive(Debug)]
pub struct Planner {
    cluster: RwLock<ClusterState>,
    weights: Weights,
}

impl Planner {
    pub fn new(cluster: ClusterState, weights: Weights) -> Self {
        Planner {
            cluster: RwLock::new(cluster),
            weights,
        }
    }

    pub fn single_local() -> Self {
        Planner::new(ClusterState::single_local(), Weights::default())
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn snapshot(&self) -> ClusterState {
        self.read().clone()
    }

    /// Chooses a node and increments its load. The caller must release the
    /// slot with `update_load(node, -1)` once the invocation finishes.
    pub fn plan(&self, data_refs: &[String]) -> Result<PlacementDecision> {
        let mut cluster = self.write();
        let decision = plan_placement(&cluster, data_refs, self.weights)?;
        cluster.update_load(&decision.node_id, 1)?;
        Ok(decision)
    }

    /// Scores every node without reserving anything.
    pub fn explain(&self, data_refs: &[String]) -> Vec<(NodeId, Result<CostEstimate>)> {
        let cluster = self.read();
        cluster
            .nodes()
            .map(|n| {
                (
                    n.node_id.clone(),
                    estimate_cost(n, data_refs, &cluster, self.weights),
                )
            })
            .collect()
    }

    pub fn register_data(&self, item: DataItem) -> Result<()> {
        self.write().register_data(item)
    }

    pub fn add_replica(&self, data_id: &str, node: &str, size_bytes: u64) -> Result<()> {
        self.write().add_replica(data_id, node, size_bytes)
    }

    pub fn update_load(&self, node: &str, delta: i64) -> Result<u32> {
        self.write().update_load(node, delta)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, ClusterState> {
        self.cluster.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, ClusterState> {
        self.cluster.write().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementDecision {
    pub node_id: NodeId,
    pub total_cost: f64,
    pub breakdown: CostBreakdown,
    pub transfers: Vec<Transfer>,
}
