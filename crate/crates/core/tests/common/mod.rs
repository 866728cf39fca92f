#![allow(dead_code)]

pub mod oracle;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use meshfaas::planner::load_topology;
use meshfaas::{
    Catalog, Clock, EnvironmentSpec, Executor, ExecutorConfig, FunctionSpec, Gateway, Planner,
    Platform,
};
use tokio::sync::oneshot;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn three_node_planner() -> Planner {
    let (cluster, weights) = load_topology(&fixture("topology-3node.json")).unwrap();
    Planner::new(cluster, weights)
}

/// A platform over an in-memory catalog and a fresh data root seeded with
/// `obs1.ms`.
pub struct Harness {
    pub data: tempfile::TempDir,
    pub platform: Arc<Platform>,
}

impl Harness {
    pub fn new(planner: Planner, clock: Option<Arc<dyn Clock>>) -> Self {
        let data = tempfile::tempdir().unwrap();
        std::fs::copy(fixture("obs1.ms"), data.path().join("obs1.ms")).unwrap();
        let config = ExecutorConfig {
            data_root: data.path().to_path_buf(),
            ..ExecutorConfig::default()
        };
        let executor = match clock {
            Some(c) => Executor::with_clock(config, c),
            None => Executor::new(config),
        };
        let platform = Platform::new(
            Arc::new(Catalog::in_memory()),
            Arc::new(planner),
            Arc::new(executor),
        );
        Harness {
            data,
            platform: Arc::new(platform),
        }
    }

    pub fn local() -> Self {
        Self::new(Planner::single_local(), None)
    }

    pub fn catalog(&self) -> &Catalog {
        self.platform.catalog()
    }

    pub fn env(&self, name: &str) {
        self.catalog()
            .create_environment(EnvironmentSpec::builtin(name, "builtin/test"))
            .unwrap();
    }

    pub fn function(&self, spec: FunctionSpec) {
        self.catalog().create_function(spec).unwrap();
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.data.path().join(rel)).unwrap()
    }

    pub async fn serve(&self) -> Server {
        let gateway = Arc::new(Gateway::new(self.platform.clone()).unwrap());
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(meshfaas::gateway::serve(gateway, listener, async {
            let _ = rx.await;
        }));
        Server {
            addr,
            _stop: tx,
            client: reqwest::Client::builder().no_proxy().build().unwrap(),
        }
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        self.platform.executor().shutdown();
    }
}

pub struct Server {
    pub addr: SocketAddr,
    _stop: oneshot::Sender<()>,
    pub client: reqwest::Client,
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub async fn post(&self, path: &str, body: &str) -> reqwest::Response {
        self.client
            .post(self.url(path))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap()
    }
}
