//! External models behind a batched JSON scoring protocol.
//!
//! Request and response are single-line JSON objects:
//!
//! ```text
//! {"id": 7, "items": [[0, 3], [], [2]]}
//! {"id": 7, "scores": [0.81, 0.12, 0.40]}
//! ```
//!
//! In subprocess mode these travel as newline-delimited JSON over the child's
//! stdin/stdout; in endpoint mode the request is the body of `POST /score`.
//! Responses are matched to requests by id and anything carrying a stale id is
//! dropped. Every failure (timeout, malformed line, wrong batch length, score
//! outside `[0, 1]`) fails the attempt; a request gets `attempts` tries before
//! the error is surfaced.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ModelError, Predictor};
use crate::data::FeatureIdx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub items: Vec<Vec<FeatureIdx>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub timeout: Duration,
    pub attempts: usize,
    /// Subprocess mode only: number of child processes to spread batches over.
    pub connections: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            attempts: 3,
            connections: 1,
        }
    }
}

#[derive(Debug)]
enum Failure {
    // the connection is unusable and must be re-established
    Broken(String),
    // the peer answered but violated the protocol
    Protocol(String),
}

impl Failure {
    fn message(&self) -> &str {
        match self {
            Failure::Broken(m) | Failure::Protocol(m) => m,
        }
    }
}

fn check_response(expected: usize, scores: &[f64]) -> Result<(), Failure> {
    if scores.len() != expected {
        return Err(Failure::Protocol(format!(
            "response carries {} scores for {} items",
            scores.len(),
            expected
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Failure::Protocol(format!("score {bad} outside [0, 1]")));
    }
    Ok(())
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn spawn(command: &str) -> Result<Self, Failure> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Failure::Broken(format!("cannot spawn {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
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
            lines,
        })
    }

    fn round_trip(&mut self, request: &ScoreRequest, timeout: Duration) -> Result<Vec<f64>, Failure> {
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Failure::Broken(format!("write to model process: {e}")))?;

        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(Failure::Broken(format!("read from model process: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Failure::Broken(format!(
                        "no response to request {} within {timeout:?}",
                        request.id
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Failure::Broken("model process closed its output".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let response: ScoreResponse = serde_json::from_str(&line)
                .map_err(|e| Failure::Protocol(format!("malformed response {line:?}: {e}")))?;
            if response.id != request.id {
                continue;
            }
            check_response(request.items.len(), &response.scores)?;
            return Ok(response.scores);
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Scores by talking to child processes started with `sh -c <command>`.
pub struct SubprocessBridge {
    name: String,
    command: String,
    config: BridgeConfig,
    pool: Vec<Mutex<Option<Connection>>>,
    next_id: AtomicU64,
    cursor: AtomicUsize,
}

impl SubprocessBridge {
    /// Starts the child processes eagerly so a bad command fails here.
    pub fn connect(command: impl Into<String>, config: BridgeConfig) -> Result<Self, ModelError> {
        let command = command.into();
        let pool = (0..config.connections.max(1))
            .map(|_| {
                Connection::spawn(&command)
                    .map(|c| Mutex::new(Some(c)))
                    .map_err(|f| ModelError::Bridge(f.message().to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: format!("bridge:{command}"),
            command,
            config,
            pool,
            next_id: AtomicU64::new(0),
            cursor: AtomicUsize::new(0),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Predictor for SubprocessBridge {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        if bags.is_empty() {
            return Ok(Vec::new());
        }
        let items: Vec<Vec<FeatureIdx>> = bags.iter().map(|b| b.to_vec()).collect();
        let slot = self.cursor.fetch_add(1, Ordering::Relaxed) % self.pool.len();
        let mut conn = self.pool[slot].lock().unwrap_or_else(|p| p.into_inner());

        let mut last = String::new();
        for _ in 0..self.config.attempts.max(1) {
            if conn.is_none() {
                match Connection::spawn(&self.command) {
                    Ok(c) => *conn = Some(c),
                    Err(f) => {
                        last = f.message().to_string();
                        continue;
                    }
                }
            }
            let request = ScoreRequest {
                id: self.next_id.fetch_add(1, Ordering::Relaxed),
                items: items.clone(),
            };
            match conn.as_mut().expect("connected above").round_trip(&request, self.config.timeout) {
                Ok(scores) => return Ok(scores),
                Err(Failure::Broken(m)) => {
                    *conn = None;
                    last = m;
                }
                Err(Failure::Protocol(m)) => last = m,
            }
        }
        Err(ModelError::BridgeExhausted {
            attempts: self.config.attempts.max(1),
            last,
        })
    }
}

/// Scores by POSTing requests to `<base>/score`.
pub struct HttpBridge {
    name: String,
    url: String,
    agent: ureq::Agent,
    attempts: usize,
    next_id: AtomicU64,
}

impl HttpBridge {
    pub fn new(base_url: &str, config: &BridgeConfig) -> Self {
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/score") {
            base.to_string()
        } else {
            format!("{base}/score")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self {
            name: format!("bridge:{url}"),
            url,
            agent,
            attempts: config.attempts.max(1),
            next_id: AtomicU64::new(0),
        }
    }

    fn attempt(&self, request: &ScoreRequest) -> Result<Vec<f64>, Failure> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| Failure::Broken(format!("POST {}: {e}", self.url)))?;
        let response: ScoreResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Protocol(format!("malformed response: {e}")))?;
        if response.id != request.id {
            return Err(Failure::Protocol(format!(
                "response id {} does not match request id {}",
                response.id, request.id
            )));
        }
        check_response(request.items.len(), &response.scores)?;
        Ok(response.scores)
    }
}

impl Predictor for HttpBridge {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        if bags.is_empty() {
            return Ok(Vec::new());
        }
        let items: Vec<Vec<FeatureIdx>> = bags.iter().map(|b| b.to_vec()).collect();
        let mut last = String::new();
        for _ in 0..self.attempts {
            let request = ScoreRequest {
                id: self.next_id.fetch_add(1, Ordering::Relaxed),
                items: items.clone(),
            };
            match self.attempt(&request) {
                Ok(scores) => return Ok(scores),
                Err(f) => last = f.message().to_string(),
            }
        }
        Err(ModelError::BridgeExhausted {
            attempts: self.attempts,
            last,
        })
    }
}
