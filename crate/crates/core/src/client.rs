//! Shared transport for external services (OCR, VLM auditor, query expander,
//! image-text scorer).
//!
//! Every service speaks the same protocol: one JSON request per line in, one
//! JSON response per line out. [`SubprocessTransport`] runs a long-lived
//! child process and serializes calls to it; in-process mocks implement the
//! service traits directly.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("service rejected the request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3 }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds or the attempts are exhausted. Returns the
    /// number of attempts alongside the last error.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ClientError>) -> Result<T, (u32, ClientError)> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("client call failed (attempt {attempt}/{attempts}): {e}");
                    last = Some(e);
                }
            }
        }
        Err((attempts, last.expect("at least one attempt ran")))
    }
}

/// Sends one request line and reads one response line.
pub trait LineTransport: Send + Sync {
    fn round_trip(&self, line: &str) -> Result<String, ClientError>;
}

pub fn call_json<Req: Serialize, Resp: DeserializeOwned>(
    transport: &dyn LineTransport,
    request: &Req,
) -> Result<Resp, ClientError> {
    let line = serde_json::to_string(request).map_err(|e| ClientError::Protocol(e.to_string()))?;
    let reply = transport.round_trip(&line)?;
    serde_json::from_str(reply.trim_end()).map_err(|e| ClientError::Protocol(format!("{e}: {reply:?}")))
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A child process answering one JSON line per request line on stdio.
pub struct SubprocessTransport {
    io: Mutex<ChildIo>,
}

impl SubprocessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ClientError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ClientError::Transport(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        Ok(Self { io: Mutex::new(ChildIo { child, stdin, stdout }) })
    }
}

impl LineTransport for SubprocessTransport {
    fn round_trip(&self, line: &str) -> Result<String, ClientError> {
        let mut io = self.io.lock().map_err(|_| ClientError::Transport("poisoned lock".into()))?;
        let io = &mut *io;
        writeln!(io.stdin, "{line}")
            .and_then(|_| io.stdin.flush())
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let mut reply = String::new();
        let n = io.stdout.read_line(&mut reply).map_err(|e| ClientError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(ClientError::Transport("service closed its output".into()));
        }
        Ok(reply)
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
