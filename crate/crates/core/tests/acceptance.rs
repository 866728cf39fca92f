//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::pin::Pin;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::oracle;
use common::Harness;
use meshfaas::workflow::{parse_workflow, run_workflow, WorkflowStatus};
use meshfaas::{
    Clock, ClusterState, DataItem, FunctionSpec, ManualClock, NetworkLink, NodeSpec, Planner, Weights,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

type Outcome = Result<String, String>;
type Check = fn() -> Pin<Box<dyn Future<Output = Outcome>>>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Listing names and routes, one POST to `/tclean/`, within 5 s.
async fn listing_flow() -> Outcome {
    let start = Instant::now();
    let h = Harness::local();
    h.env("python-casa-6.5");
    h.env("wsclean-3.3");
    h.function(FunctionSpec::new("tclean", "python-casa-6.5", "tclean.py", "/tclean/"));
    h.function(FunctionSpec::new("wsclean", "wsclean-3.3", "wsclean.py", "/wsclean/"));
    let server = h.serve().await;
    let resp = server
        .post("/tclean/", r#"{"Input-MS":"obs1.ms","Output-MS":"img1"}"#)
        .await;
    let status = resp.status().as_u16();
    let body = resp.text().await.map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(status == 200, "status {status}, body {body:?}");
    ensure!(body == "/data/img1", "body {body:?}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 `{body}` in {} ms", elapsed.as_millis()))
}

/// Cold, warm, reaped after idle_timeout = 1 s on a fake clock, cold again
/// with fresh handler state.
async fn cold_warm_lifecycle() -> Outcome {
    let clock = Arc::new(ManualClock::default());
    let h = Harness::new(Planner::single_local(), Some(clock.clone()));
    h.env("python");
    h.function(FunctionSpec::new("counter", "python", "counter", "/counter/").with_pool(0, 4, 1));
    let server = h.serve().await;

    let mut seen = Vec::new();
    let call = || async {
        let resp = server.post("/counter/", "{}").await;
        let cold = resp.headers()["x-faas-cold-start"].to_str().unwrap() == "true";
        let status = resp.status().as_u16();
        (status, cold, resp.text().await.unwrap())
    };
    seen.push(call().await);
    seen.push(call().await);
    clock.advance(chrono::Duration::milliseconds(1500));
    let reaped = h.platform.executor().reap_idle(clock.now());
    seen.push(call().await);

    let expected = [
        (200, true, "1".to_string()),
        (200, false, "2".to_string()),
        (200, true, "1".to_string()),
    ];
    ensure!(reaped == 1, "reap terminated {reaped} runtimes, expected 1");
    ensure!(seen == expected, "observed {seen:?}");
    Ok("cold → warm → reaped → cold, counter 1, 2, 1".into())
}

fn random_cluster(rng: &mut StdRng) -> (oracle::Cluster, Vec<String>) {
    let n = rng.gen_range(1..=8);
    let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let nodes = ids
        .iter()
        .map(|id| {
            let capacity = rng.gen_range(1..=3);
            let load = if rng.gen_bool(0.15) { capacity } else { 0 };
            (id.clone(), (rng.gen_range(0..=8) as f64 * 0.5, capacity, load))
        })
        .collect();
    let mut links = BTreeMap::new();
    for a in &ids {
        for b in &ids {
            if a != b && rng.gen_bool(0.8) {
                links.insert(
                    (a.clone(), b.clone()),
                    (rng.gen_range(0..=20) as f64 * 5.0, rng.gen_range(0..=16) as f64 * 0.25),
                );
            }
        }
    }
    let mut items = BTreeMap::new();
    for d in 0..rng.gen_range(0..=5) {
        let mut replicas: BTreeSet<String> =
            ids.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
        replicas.insert(ids[rng.gen_range(0..n)].clone());
        let size = rng.gen_range(0..=16u64) << 28;
        items.insert(format!("d{d}"), (size, replicas));
    }
    let mut refs: Vec<String> = items.keys().filter(|_| rng.gen_bool(0.7)).cloned().collect();
    if rng.gen_bool(0.3) {
        refs.push("not-yet-created".into());
    }
    if let Some(first) = refs.first().cloned() {
        refs.push(first);
    }
    (oracle::Cluster { nodes, links, items }, refs)
}

fn build(c: &oracle::Cluster) -> ClusterState {
    let nodes = c
        .nodes
        .iter()
        .map(|(id, (cost, cap, _))| NodeSpec::new(id.as_str(), *cost, *cap))
        .collect();
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

/// 200 random clusters against the exhaustive oracle, under 2 s.
async fn planner_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0003);
    let start = Instant::now();
    let mut agree = 0;
    let mut infeasible = 0;
    for trial in 0..200 {
        let (c, refs) = random_cluster(&mut rng);
        let w = (
            rng.gen_range(1..=16) as f64 * 0.25,
            rng.gen_range(1..=16) as f64 * 0.001,
            rng.gen_range(1..=16) as f64 * 0.25,
        );
        let planner = Planner::new(build(&c), Weights::new(w.0, w.1, w.2));
        let got = planner.plan(&refs).ok().map(|d| (d.node_id, d.total_cost));
        let want = c.best(&refs, w);
        match (&got, &want) {
            (Some((gn, gc)), Some((wn, wc))) if gn == wn && (gc - wc).abs() <= 1e-9 * wc.abs().max(1.0) => {
                agree += 1
            }
            (None, None) => {
                agree += 1;
                infeasible += 1;
            }
            _ => return Err(format!("trial {trial}: plan {got:?}, oracle {want:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(2), "took {elapsed:?}");
    Ok(format!(
        "{agree}/200 agree ({infeasible} infeasible) in {} ms",
        elapsed.as_millis()
    ))
}

/// Single-replica item, equal compute costs: the replica node wins.
async fn locality() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    for trial in 0..100 {
        let n = rng.gen_range(2..=8);
        let ids: Vec<String> = (0..n).map(|i| format!("site-{i}")).collect();
        let compute = rng.gen_range(0..=8) as f64 * 0.5;
        let latency = rng.gen_range(0..=10) as f64 * 10.0;
        let nodes = ids.iter().map(|id| NodeSpec::new(id.as_str(), compute, 4)).collect();
        let mut links = Vec::new();
        for a in &ids {
            for b in &ids {
                if a != b {
                    let cost = rng.gen_range(1..=40) as f64 * 0.25;
                    links.push(NetworkLink::new(a.as_str(), b.as_str(), latency, cost));
                }
            }
        }
        let home = ids[rng.gen_range(0..n)].clone();
        let size = rng.gen_range(1..=64u64) << 26;
        let items = vec![DataItem::new("vis", size, [home.as_str()])];
        let weights = Weights::new(
            rng.gen_range(1..=8) as f64 * 0.5,
            rng.gen_range(0..=8) as f64 * 0.001,
            rng.gen_range(0..=8) as f64 * 0.5,
        );
        let planner = Planner::new(ClusterState::new(nodes, links, items).unwrap(), weights);
        let got = planner.plan(&["vis".to_string()]).map_err(|e| e.to_string())?;
        ensure!(got.node_id == home, "trial {trial}: chose {} over {home}", got.node_id);
    }
    Ok("100/100 placed on the replica node".into())
}

/// 32 concurrent 100 ms invocations through max_pool = 4.
async fn pool_bound() -> Outcome {
    let h = Harness::local();
    h.env("python");
    h.function(FunctionSpec::new("sleep", "python", "sleep-ms", "/sleep/").with_pool(0, 4, 60));
    let server = Arc::new(h.serve().await);
    let start = Instant::now();
    let calls: Vec<_> = (0..32)
        .map(|_| {
            let server = server.clone();
            tokio::spawn(async move { server.post("/sleep/", r#"{"ms":100}"#).await.status().as_u16() })
        })
        .collect();
    let mut statuses = Vec::new();
    for c in calls {
        statuses.push(c.await.map_err(|e| e.to_string())?);
    }
    let wall = start.elapsed();
    let stats = h.platform.executor().stats("sleep").ok_or("no pool")?;
    let ok = statuses.iter().filter(|s| **s == 200).count();
    ensure!(ok == 32, "{ok}/32 returned 200: {statuses:?}");
    ensure!(stats.peak_live <= 4, "peak live runtimes {}", stats.peak_live);
    ensure!(wall >= Duration::from_millis(800), "wall time {wall:?}");
    Ok(format!(
        "32/32 ok, peak live {}, wall {} ms",
        stats.peak_live,
        wall.as_millis()
    ))
}

/// flag → calibrate → tclean over the fixture grid; file matches the
/// composition oracle and steps 2–3 follow step 1's output.
async fn workflow_chaining() -> Outcome {
    let h = Harness::new(common::three_node_planner(), None);
    h.env("python-casa-6.5");
    h.function(FunctionSpec::new("flag", "python-casa-6.5", "mock-flag", "/flag/"));
    h.function(FunctionSpec::new("calibrate", "python-casa-6.5", "mock-calibrate", "/calibrate/"));
    h.function(FunctionSpec::new("tclean", "python-casa-6.5", "tclean.py", "/tclean/"));
    let spec = parse_workflow(&common::fixture("pipeline.json"), h.catalog()).map_err(|e| e.to_string())?;
    let inputs = json!({"ms": "obs1.ms"}).as_object().unwrap().clone();
    let result = run_workflow(&h.platform, &spec, &inputs)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(result.status == WorkflowStatus::Completed, "status {:?}", result.status);
    ensure!(
        result.final_output.as_deref() == Some("/data/img1"),
        "final output {:?}",
        result.final_output
    );

    let fixture = oracle::parse_grid(&std::fs::read_to_string(common::fixture("obs1.ms")).unwrap());
    let expected = oracle::grid_text(&oracle::blur(&oracle::calibrate(&oracle::flag(&fixture, 9.0), 1.25)));
    let got = h.read("img1");
    ensure!(got == expected.as_bytes(), "img1 differs from the composition oracle");

    let home = h
        .platform
        .planner()
        .snapshot()
        .data_item("obs1.ms")
        .map(|i| i.replica_nodes.iter().next().cloned().unwrap())
        .unwrap();
    let nodes: Vec<&str> = result.steps.iter().map(|s| s.node_id.as_str()).collect();
    ensure!(nodes == [home.as_str(); 3], "steps ran on {nodes:?}, input lives on {home}");
    for (step, record) in result.steps.iter().enumerate().skip(1) {
        ensure!(
            record.placement.breakdown.transfer_cost == 0.0,
            "step {} paid transfer {}",
            step + 1,
            record.placement.breakdown.transfer_cost
        );
    }
    Ok(format!("{} bytes identical, all steps on {home}", got.len()))
}

fn main() {
    let checks: [(&str, Check); 6] = [
        ("listing flow", || Box::pin(listing_flow())),
        ("cold/warm lifecycle", || Box::pin(cold_warm_lifecycle())),
        ("planner oracle", || Box::pin(planner_oracle())),
        ("locality", || Box::pin(locality())),
        ("pool bound", || Box::pin(pool_bound())),
        ("workflow chaining", || Box::pin(workflow_chaining())),
    ];
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match rt.block_on(check()) {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
