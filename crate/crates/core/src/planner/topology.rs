use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClusterState, DataItem, NetworkLink, NodeSpec, PlannerError, Result, Weights};

/// On-disk topology document: `nodes`, `links`, `data_items`, `weights`.
///
/// Self-links may be omitted; pairs without a link are disconnected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<NetworkLink>,
    #[serde(default)]
    pub data_items: Vec<DataItem>,
    #[serde(default)]
    pub weights: Weights,
}

impl TopologyFile {
    pub fn from_json(text: &str) -> Result<(ClusterState, Weights)> {
        let file: TopologyFile = serde_json::from_str(text).map_err(|e| PlannerError::Io {
            path: "<topology>".into(),
            source: e.into(),
        })?;
        file.into_state()
    }

    pub fn into_state(self) -> Result<(ClusterState, Weights)> {
        self.weights.validate()?;
        let cluster = ClusterState::new(self.nodes, self.links, self.data_items)?;
        Ok((cluster, self.weights))
    }

    /// Inverse of `into_state`; self-links are left implicit.
    pub fn from_state(cluster: &ClusterState, weights: Weights) -> Self {
        TopologyFile {
            nodes: cluster.nodes().cloned().collect(),
            links: cluster
                .links()
                .filter(|l| l.from_node != l.to_node)
                .cloned()
                .collect(),
            data_items: cluster.data_items().cloned().collect(),
            weights,
        }
    }
}

pub fn load_topology(path: &Path) -> Result<(ClusterState, Weights)> {
    let io = |source: std::io::Error| PlannerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let file: TopologyFile = serde_json::from_str(&text).map_err(|e| io(e.into()))?;
    file.into_state()
}

pub fn save_topology(path: &Path, cluster: &ClusterState, weights: Weights) -> Result<()> {
    let doc = TopologyFile::from_state(cluster, weights);
    let text = serde_json::to_string_pretty(&doc).expect("topology serializes");
    crate::catalog::write_atomic(path, text.as_bytes()).map_err(|e| match e {
        crate::catalog::CatalogError::Io { path, source } => PlannerError::Io { path, source },
        other => PlannerError::InvalidTopology(other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"{
        "nodes": [
            {"node_id": "a", "compute_cost_per_invocation": 1.0, "capacity": 2},
            {"node_id": "b", "compute_cost_per_invocation": 1.0, "capacity": 2}
        ],
        "links": [{"from_node": "a", "to_node": "b", "latency_ms": 3, "cost_per_gib": 1, "bandwidth_gibps": 1}]
    }"#;

    #[test]
    fn weights_default_when_absent() {
        let (c, w) = TopologyFile::from_json(TWO_NODE).unwrap();
        assert_eq!(w, Weights::default());
        assert_eq!(c.link_count(), 3);
        assert!(c.link("b", "a").is_none());
    }

    #[test]
    fn negative_weight_rejected() {
        let text = r#"{"nodes":[{"node_id":"a","compute_cost_per_invocation":0,"capacity":1}],
                      "weights":{"alpha":-1,"beta":0,"gamma":0}}"#;
        assert!(matches!(
            TopologyFile::from_json(text),
            Err(PlannerError::InvalidTopology(_))
        ));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = r#"{"nodes":[],"extra":1}"#;
        assert!(matches!(TopologyFile::from_json(text), Err(PlannerError::Io { .. })));
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topo.json");
        let (mut c, w) = TopologyFile::from_json(TWO_NODE).unwrap();
        c.register_data(DataItem::new("obs1.ms", 99, ["b"])).unwrap();
        save_topology(&path, &c, w).unwrap();
        let (back, w2) = load_topology(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(w2, w);
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(
            load_topology(Path::new("/nonexistent/topology.json")),
            Err(PlannerError::Io { .. })
        ));
    }
}
