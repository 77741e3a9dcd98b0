//! Client for external evaluation workers.
//!
//! A worker is any process that reads one JSON request per line on stdin and
//! writes exactly one JSON response per line on stdout, in order:
//!
//! ```text
//! -> {"id":"7","config":{"layers":[3,4],"d_sa":12,"d_pa":96,"l_pt":1},"fidelity":0.05,"seed":11}
//! <- {"id":"7","score":71.3}
//! <- {"id":"7","error":"out of memory"}
//! ```
//!
//! A response carries either `score` (optionally with `cost`) or `error`,
//! never both. Malformed requests are answered with id `"unknown"`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_fidelity, Backend, Scored};
use crate::error::{Error, Result};
use crate::space::{ConfigText, Configuration, SearchSpaceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub id: String,
    pub config: ConfigText,
    pub fidelity: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WorkerRequest {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("request serializes");
        line.push('\n');
        line
    }
}

impl WorkerResponse {
    pub fn parse(line: &str) -> Result<Self> {
        let resp: WorkerResponse = serde_json::from_str(line.trim_end_matches(['\n', '\r']))
            .map_err(|e| Error::Evaluation(format!("malformed worker response: {e}")))?;
        match (&resp.score, &resp.error) {
            (Some(_), None) | (None, Some(_)) => Ok(resp),
            _ => Err(Error::Evaluation(
                "worker response must carry exactly one of score or error".into(),
            )),
        }
    }

    /// Check the id echo and turn the response into a score.
    pub fn into_scored(self, expected_id: &str) -> Result<Scored> {
        if let Some(message) = self.error {
            return Err(Error::Evaluation(format!("worker error: {message}")));
        }
        if self.id != expected_id {
            return Err(Error::Evaluation(format!(
                "worker answered id {:?}, expected {:?}",
                self.id, expected_id
            )));
        }
        Ok(Scored {
            score: self.score.expect("validated in parse"),
            cost: self.cost,
        })
    }
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Evaluation(format!("cannot start worker `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn roundtrip(&mut self, request: &WorkerRequest, timeout: Duration) -> Result<WorkerResponse> {
        self.stdin
            .write_all(request.to_line().as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Evaluation(format!("worker stdin closed: {e}")))?;
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => WorkerResponse::parse(&line),
            Ok(Err(e)) => Err(Error::Evaluation(format!("worker stdout: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Evaluation(format!(
                "worker timed out after {:.1}s",
                timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Evaluation("worker exited before responding".into())),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Spawns worker processes on demand; each connection handles one request at
/// a time, concurrent callers get their own connection.
pub struct WorkerClient {
    command: String,
    timeout: Duration,
    idle: Mutex<Vec<Connection>>,
    next_id: AtomicU64,
}

impl WorkerClient {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            timeout,
            idle: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(0),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn request(&self, request: &WorkerRequest) -> Result<Scored> {
        let pooled = self.idle.lock().expect("worker pool poisoned").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::spawn(&self.command)?,
        };
        // Any transport failure drops the connection; a worker-reported error
        // leaves it usable.
        let response = conn.roundtrip(request, self.timeout)?;
        self.idle.lock().expect("worker pool poisoned").push(conn);
        response.into_scored(&request.id)
    }
}

impl Backend for WorkerClient {
    fn score(&self, _space: &SearchSpaceSpec, config: &Configuration, fidelity: f64, seed: u64) -> Result<Scored> {
        check_fidelity(fidelity)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed).to_string();
        self.request(&WorkerRequest {
            id,
            config: config.to_text(),
            fidelity,
            seed,
        })
    }
}
