mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::oracle;
use meshfaas::planner::{estimate_cost, plan_placement};
use meshfaas::{ClusterState, DataItem, NetworkLink, NodeSpec, Planner, Weights};
use proptest::prelude::*;

fn cluster_strategy() -> impl Strategy<Value = (oracle::Cluster, Vec<String>)> {
    (1usize..=8, 0usize..=5).prop_flat_map(|(n, m)| {
        let nodes = prop::collection::vec((0u32..=8, 1u32..=3, prop::bool::weighted(0.15)), n);
        let links = prop::collection::vec(
            prop::option::weighted(0.8, (0u32..=20, 0u32..=16)),
            n * n,
        );
        let items = prop::collection::vec((0u64..=16, prop::collection::vec(any::<bool>(), n), 0..n), m);
        let wanted = prop::collection::vec(any::<bool>(), m);
        (nodes, links, items, wanted, any::<bool>()).prop_map(move |(nodes, links, items, wanted, extra)| {
            let id = |i: usize| format!("n{i}");
            let nodes = nodes
                .into_iter()
                .enumerate()
                .map(|(i, (c, cap, full))| (id(i), (c as f64 * 0.5, cap, if full { cap } else { 0 })))
                .collect();
            let links = links
                .into_iter()
                .enumerate()
                .filter(|(k, _)| k / n != k % n)
                .filter_map(|(k, l)| l.map(|(lat, cpg)| ((id(k / n), id(k % n)), (lat as f64 * 5.0, cpg as f64 * 0.25))))
                .collect();
            let items: BTreeMap<_, _> = items
                .into_iter()
                .enumerate()
                .map(|(d, (size, mask, home))| {
                    let mut reps: BTreeSet<String> =
                        mask.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| id(i)).collect();
                    reps.insert(id(home));
                    (format!("d{d}"), (size << 28, reps))
                })
                .collect();
            let mut refs: Vec<String> = items
                .keys()
                .zip(&wanted)
                .filter(|(_, w)| **w)
                .map(|(k, _)| k.clone())
                .collect();
            if extra {
                refs.push("output".into());
            }
            (oracle::Cluster { nodes, links, items }, refs)
        })
    })
}

fn weights() -> impl Strategy<Value = (f64, f64, f64)> {
    (1u32..=16, 1u32..=16, 1u32..=16).prop_map(|(a, b, g)| (a as f64 * 0.25, b as f64 * 0.001, g as f64 * 0.25))
}

fn build(c: &oracle::Cluster) -> ClusterState {
    let nodes = c.nodes.iter().map(|(id, (cost, cap, _))| NodeSpec::new(id.as_str(), *cost, *cap)).collect();
    let links = c
        .links
        .iter()
        .map(|((a, b), (lat, cpg))| NetworkLink::new(a.as_str(), b.as_str(), *lat, *cpg))
        .collect();
    let items = c
        .items
        .iter()
        .map(|(id, (size, reps))| DataItem::new(id.as_str(), *size, reps.iter().map(String::as_str)))
        .collect();
    let mut state = ClusterState::new(nodes, links, items).unwrap();
    for (id, (_, _, load)) in &c.nodes {
        state.update_load(id, i64::from(*load)).unwrap();
    }
    state
}

proptest! {
    #[test]
    fn plan_matches_exhaustive_oracle((c, refs) in cluster_strategy(), w in weights()) {
        let state = build(&c);
        let got = plan_placement(&state, &refs, Weights::new(w.0, w.1, w.2)).ok();
        let want = c.best(&refs, w);
        prop_assert_eq!(got.as_ref().map(|d| d.node_id.clone()), want.as_ref().map(|x| x.0.clone()));
        if let (Some(d), Some((_, cost))) = (got, want) {
            prop_assert!((d.total_cost - cost).abs() <= 1e-9 * cost.abs().max(1.0));
            prop_assert!((d.breakdown.total() - d.total_cost).abs() <= 1e-9 * d.total_cost.abs().max(1.0));
        }
    }

    #[test]
    fn argmin_invariant_under_weight_scaling((c, refs) in cluster_strategy(), w in weights(), k in 1u32..=64) {
        let state = build(&c);
        let base = Weights::new(w.0, w.1, w.2);
        let k = k as f64 * 0.5;
        let a = plan_placement(&state, &refs, base).ok().map(|d| d.node_id);
        let b = plan_placement(&state, &refs, base.scaled(k)).ok().map(|d| d.node_id);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dearer_inbound_links_never_help((c, refs) in cluster_strategy(), w in weights(), pick in any::<prop::sample::Index>(), bump in 1u32..=8) {
        let target = c.nodes.keys().nth(pick.index(c.nodes.len())).unwrap().clone();
        let mut dearer = c.clone();
        for ((_, to), (_, cpg)) in dearer.links.iter_mut() {
            if *to == target {
                *cpg += bump as f64 * 0.25;
            }
        }
        let weights = Weights::new(w.0, w.1, w.2);
        let (before, after) = (build(&c), build(&dearer));
        let node = before.node(&target).unwrap();
        if let (Ok(x), Ok(y)) = (
            estimate_cost(node, &refs, &before, weights),
            estimate_cost(node, &refs, &after, weights),
        ) {
            prop_assert!(y.breakdown.transfer_cost >= x.breakdown.transfer_cost);
        }
        let was = plan_placement(&before, &refs, weights).ok().map(|d| d.node_id);
        let now = plan_placement(&after, &refs, weights).ok().map(|d| d.node_id);
        if now.as_deref() == Some(target.as_str()) {
            prop_assert_eq!(was.as_deref(), Some(target.as_str()));
        }
    }

    #[test]
    fn plan_accounts_load_and_release_restores_it((c, refs) in cluster_strategy()) {
        let planner = Planner::new(build(&c), Weights::default());
        if let Ok(d) = planner.plan(&refs) {
            let loaded = planner.snapshot().load(&d.node_id);
            prop_assert_eq!(loaded, c.nodes[&d.node_id].2 + 1);
            planner.update_load(&d.node_id, -1).unwrap();
            prop_assert_eq!(planner.snapshot().load(&d.node_id), c.nodes[&d.node_id].2);
        }
    }
}

#[test]
fn three_node_fixture_shape() {
    let planner = common::three_node_planner();
    let cluster = planner.snapshot();
    assert_eq!(cluster.node_count(), 3);
    assert_eq!(cluster.link_count(), 9);
    let d = planner.plan(&["obs1.ms".to_string()]).unwrap();
    assert_eq!(d.node_id, "uksrc");
    assert_eq!(d.breakdown.transfer_cost, 0.0);
    assert_eq!(d.breakdown.latency_cost, 0.0);
}
