use std::collections::BTreeSet;

use serde::Serialize;

use super::{ClusterState, NodeId, NodeSpec, PlacementDecision, PlannerError, Result, Weights};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub transfer_cost: f64,
    pub latency_cost: f64,
    pub compute_cost: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.transfer_cost + self.latency_cost + self.compute_cost
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transfer {
    pub data_id: String,
    pub source_node: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate {
    pub breakdown: CostBreakdown,
    pub transfers: Vec<Transfer>,
}

/// Scores running an invocation touching `data_refs` on `node`.
///
/// Unknown data ids are outputs that do not exist yet and cost nothing.
/// Each known input not already on `node` is pulled from the replica with
/// the cheapest transfer term (smallest node id on ties); the latency term
/// is the slowest of those pulls.
pub fn estimate_cost(
    node: &NodeSpec,
    data_refs: &[String],
    cluster: &ClusterState,
    weights: Weights,
) -> Result<CostEstimate> {
    let target = node.node_id.as_str();
    let infeasible = |reason: String| PlannerError::Infeasible {
        node: target.to_string(),
        reason,
    };
    let load = cluster.load(target);
    if load >= node.capacity {
        return Err(infeasible(format!(
            "at capacity ({load}/{})",
            node.capacity
        )));
    }

    let mut transfer_sum = 0.0;
    let mut worst_latency: f64 = 0.0;
    let mut transfers = Vec::new();
    let unique: BTreeSet<&str> = data_refs.iter().map(String::as_str).collect();
    for data_id in unique {
        let Some(item) = cluster.data_item(data_id) else {
            continue;
        };
        if item.replica_nodes.contains(target) {
            continue;
        }
        let size_gib = item.size_gib();
        let mut best: Option<(f64, &str, f64)> = None;
        for source in &item.replica_nodes {
            let Some(link) = cluster.link(source, target) else {
                continue;
            };
            let term = size_gib * link.cost_per_gib;
            if best.is_none_or(|(b, _, _)| term < b) {
                best = Some((term, source.as_str(), link.latency_ms));
            }
        }
        let Some((term, source, latency)) = best else {
            return Err(infeasible(format!(
                "no replica of `{data_id}` is reachable"
            )));
        };
        transfer_sum += term;
        worst_latency = worst_latency.max(latency);
        transfers.push(Transfer {
            data_id: data_id.to_string(),
            source_node: source.to_string(),
            bytes: item.size_bytes,
        });
    }

    Ok(CostEstimate {
        breakdown: CostBreakdown {
            transfer_cost: weights.alpha * transfer_sum,
            latency_cost: weights.beta * worst_latency,
            compute_cost: weights.gamma * node.compute_cost_per_invocation,
        },
        transfers,
    })
}

/// Cheapest feasible node, smallest node id on ties. Does not touch load.
pub fn plan_placement(
    cluster: &ClusterState,
    data_refs: &[String],
    weights: Weights,
) -> Result<PlacementDecision> {
    let mut best: Option<PlacementDecision> = None;
    let mut reasons = Vec::new();
    // BTreeMap iteration is in node-id order, so strict `<` keeps the
    // smallest id among equal totals.
    for node in cluster.nodes() {
        match estimate_cost(node, data_refs, cluster, weights) {
            Ok(est) => {
                let total = est.breakdown.total();
                if best.as_ref().is_none_or(|b| total < b.total_cost) {
                    best = Some(PlacementDecision {
                        node_id: node.node_id.clone(),
                        total_cost: total,
                        breakdown: est.breakdown,
                        transfers: est.transfers,
                    });
                }
            }
            Err(e) => reasons.push(e.to_string()),
        }
    }
    best.ok_or(PlannerError::NoFeasibleNode { reasons })
}

#[cfg(test)]
mod tests {
    use super::super::{DataItem, NetworkLink};
    use super::*;

    const GIB_BYTES: u64 = 1 << 30;

    fn refs(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn pair() -> ClusterState {
        ClusterState::new(
            vec![NodeSpec::new("a", 1.0, 4), NodeSpec::new("b", 1.0, 4)],
            vec![NetworkLink::new("a", "b", 20.0, 5.0), NetworkLink::new("b", "a", 20.0, 5.0)],
            vec![DataItem::new("obs1.ms", GIB_BYTES, ["a"])],
        )
        .unwrap()
    }

    #[test]
    fn local_item_is_free() {
        let c = pair();
        let est = estimate_cost(c.node("a").unwrap(), &refs(&["obs1.ms"]), &c, Weights::default())
            .unwrap();
        assert_eq!(est.breakdown.transfer_cost, 0.0);
        assert_eq!(est.breakdown.latency_cost, 0.0);
        assert!(est.transfers.is_empty());
    }

    #[test]
    fn one_gib_at_five_per_gib() {
        let c = pair();
        let w = Weights::new(1.0, 0.0, 0.0);
        let est = estimate_cost(c.node("b").unwrap(), &refs(&["obs1.ms"]), &c, w).unwrap();
        assert_eq!(est.breakdown.transfer_cost, 5.0);
        assert_eq!(
            est.transfers,
            vec![Transfer {
                data_id: "obs1.ms".into(),
                source_node: "a".into(),
                bytes: GIB_BYTES
            }]
        );
    }

    #[test]
    fn latency_uses_chosen_source() {
        let c = pair();
        let est = estimate_cost(c.node("b").unwrap(), &refs(&["obs1.ms"]), &c, Weights::default())
            .unwrap();
        assert_eq!(est.breakdown.latency_cost, 0.001 * 20.0);
    }

    #[test]
    fn zero_weights_zero_total() {
        let c = pair();
        for n in c.nodes() {
            let est =
                estimate_cost(n, &refs(&["obs1.ms"]), &c, Weights::new(0.0, 0.0, 0.0)).unwrap();
            assert_eq!(est.breakdown.total(), 0.0);
        }
    }

    #[test]
    fn unknown_ref_is_an_output() {
        let c = pair();
        let est = estimate_cost(c.node("b").unwrap(), &refs(&["img1"]), &c, Weights::default())
            .unwrap();
        assert_eq!(est.breakdown.transfer_cost, 0.0);
        assert!(est.transfers.is_empty());
    }

    #[test]
    fn duplicate_refs_counted_once() {
        let c = pair();
        let w = Weights::new(1.0, 0.0, 0.0);
        let est =
            estimate_cost(c.node("b").unwrap(), &refs(&["obs1.ms", "obs1.ms"]), &c, w).unwrap();
        assert_eq!(est.breakdown.transfer_cost, 5.0);
    }

    #[test]
    fn disconnected_source_is_infeasible() {
        let c = ClusterState::new(
            vec![NodeSpec::new("a", 1.0, 4), NodeSpec::new("b", 1.0, 4)],
            vec![],
            vec![DataItem::new("obs1.ms", 10, ["a"])],
        )
        .unwrap();
        let err = estimate_cost(c.node("b").unwrap(), &refs(&["obs1.ms"]), &c, Weights::default())
            .unwrap_err();
        assert!(matches!(err, PlannerError::Infeasible { ref node, .. } if node == "b"));
        let d = plan_placement(&c, &refs(&["obs1.ms"]), Weights::default()).unwrap();
        assert_eq!(d.node_id, "a");
    }

    #[test]
    fn full_node_is_infeasible() {
        let mut c = pair();
        for _ in 0..4 {
            c.update_load("a", 1).unwrap();
        }
        assert!(matches!(
            estimate_cost(c.node("a").unwrap(), &[], &c, Weights::default()),
            Err(PlannerError::Infeasible { .. })
        ));
        let d = plan_placement(&c, &refs(&["obs1.ms"]), Weights::default()).unwrap();
        assert_eq!(d.node_id, "b");
    }

    #[test]
    fn cheapest_replica_wins() {
        let c = ClusterState::new(
            vec![
                NodeSpec::new("a", 0.0, 4),
                NodeSpec::new("b", 0.0, 4),
                NodeSpec::new("c", 0.0, 4),
            ],
            vec![NetworkLink::new("a", "c", 1.0, 9.0), NetworkLink::new("b", "c", 50.0, 2.0)],
            vec![DataItem::new("x", 2 * GIB_BYTES, ["a", "b"])],
        )
        .unwrap();
        let est = estimate_cost(c.node("c").unwrap(), &refs(&["x"]), &c, Weights::default())
            .unwrap();
        assert_eq!(est.transfers[0].source_node, "b");
        assert_eq!(est.breakdown.transfer_cost, 4.0);
        assert_eq!(est.breakdown.latency_cost, 0.001 * 50.0);
    }

    #[test]
    fn single_node_cluster_always_chosen() {
        let c = ClusterState::single_local();
        let d = plan_placement(&c, &refs(&["anything"]), Weights::default()).unwrap();
        assert_eq!(d.node_id, "local");
    }

    #[test]
    fn tie_goes_to_smallest_id() {
        let c = ClusterState::new(
            vec![NodeSpec::new("zeta", 3.0, 1), NodeSpec::new("alpha", 3.0, 1)],
            vec![],
            vec![],
        )
        .unwrap();
        let d = plan_placement(&c, &[], Weights::default()).unwrap();
        assert_eq!(d.node_id, "alpha");
    }

    #[test]
    fn total_is_sum_of_parts() {
        let c = pair();
        let d = plan_placement(&c, &refs(&["obs1.ms"]), Weights::new(0.3, 0.7, 1.1)).unwrap();
        assert_eq!(d.total_cost, d.breakdown.total());
    }
}
