//! Runtime hosts started as child processes from an environment's launch
//! command.

use std::net::{Ipv4Addr, SocketAddr, TcpListener};
use std::path::Path;
use std::process::{ExitStatus, Stdio};

use tokio::process::{Child, Command};

use crate::catalog::EnvironmentSpec;

pub const PORT_ENV_VAR: &str = "FAAS_RUNTIME_PORT";

/// Replaces `{port}` and `{workdir}` in every argument.
pub fn substitute(template: &[String], port: u16, workdir: &Path) -> Vec<String> {
    let port = port.to_string();
    let workdir = workdir.to_string_lossy();
    template
        .iter()
        .map(|arg| arg.replace("{port}", &port).replace("{workdir}", &workdir))
        .collect()
}

/// Asks the OS for an unused loopback port. The port is released before
/// returning, so a racing process could still claim it; spawning then fails
/// and is reported as such.
pub fn free_port() -> std::io::Result<u16> {
    Ok(TcpListener::bind((Ipv4Addr::LOCALHOST, 0))?.local_addr()?.port())
}

#[derive(Debug)]
pub struct ProcessHost {
    endpoint: SocketAddr,
    child: Child,
}

impl ProcessHost {
    pub fn spawn(env: &EnvironmentSpec, workdir: &Path) -> Result<Self, String> {
        let port = free_port().map_err(|e| format!("no free port: {e}"))?;
        let argv = substitute(&env.launch_command, port, workdir);
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| format!("environment `{}` has an empty launch command", env.name))?;
        let child = Command::new(program)
            .args(args)
            .env(PORT_ENV_VAR, port.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::inherit())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| format!("cannot start `{program}`: {e}"))?;
        Ok(ProcessHost {
            endpoint: SocketAddr::from((Ipv4Addr::LOCALHOST, port)),
            child,
        })
    }

    pub fn endpoint(&self) -> SocketAddr {
        self.endpoint
    }

    pub fn exit_status(&mut self) -> Option<ExitStatus> {
        self.child.try_wait().ok().flatten()
    }

    pub fn terminate(&mut self) {
        let _ = self.child.start_kill();
    }
}
