//! Client for the newline-delimited JSON scoring protocol.
//!
//! Request lines are `{"id", "premise", "hypothesis"}`, response lines
//! `{"id", "entailment"}` (or `{"id", "error"}`), one per request and in
//! request order. The adapter may be a child process speaking over
//! stdin/stdout or a TCP service.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerError};
use crate::verbalizer::NliQuery;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entailment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments; spoken to over stdin/stdout.
    Command(Vec<String>),
    /// `host:port`.
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    /// `tcp://host:port` or a whitespace-separated command line.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let argv: Vec<String> = s.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err("empty adapter command".into());
        }
        Ok(Endpoint::Command(argv))
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
}

impl Connection {
    /// Unblocks a writer stuck on a peer that stopped reading.
    fn abort(child: &mut Option<Child>, socket: &Option<TcpStream>) {
        if let Some(c) = child {
            let _ = c.kill();
        }
        if let Some(s) = socket {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: std::io::Read + Send + 'static>(r: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(r).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, ScorerError> {
        match endpoint {
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    socket: None,
                })
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                let read_half = stream.try_clone()?;
                let control = stream.try_clone()?;
                Ok(Self {
                    writer: Box::new(stream),
                    lines: spawn_reader(read_half),
                    child: None,
                    socket: Some(control),
                })
            }
        }
    }
}

/// Scores through an external adapter. One connection is kept open and
/// requests are serialized on it. A timed-out batch is resent on a fresh
/// connection; scoring is pure, so resending is safe.
pub struct ExternalScorer {
    endpoint: Endpoint,
    timeout: Duration,
    retries: u32,
    conn: Mutex<Option<Connection>>,
}

impl ExternalScorer {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            endpoint,
            timeout: Duration::from_secs(60),
            retries: 1,
            conn: Mutex::new(None),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    fn attempt(
        &self,
        conn: &mut Connection,
        reqs: &[ScoreRequest],
    ) -> Result<Vec<f64>, ScorerError> {
        let mut payload = Vec::new();
        for r in reqs {
            serde_json::to_writer(&mut payload, r)
                .map_err(|e| ScorerError::Protocol(e.to_string()))?;
            payload.push(b'\n');
        }
        let deadline = Instant::now() + self.timeout;
        let Connection {
            writer,
            lines,
            child,
            socket,
        } = conn;
        std::thread::scope(|s| {
            // Write on a side thread so a chatty adapter cannot fill both pipes.
            let w = s.spawn(move || -> std::io::Result<()> {
                writer.write_all(&payload)?;
                writer.flush()
            });
            let result = self.collect(lines, reqs, deadline);
            if result.is_err() {
                Connection::abort(child, socket);
            }
            let written = w
                .join()
                .map_err(|_| ScorerError::Protocol("writer thread panicked".into()))?;
            let scores = result?;
            written?;
            Ok(scores)
        })
    }

    fn collect(
        &self,
        lines: &Receiver<std::io::Result<String>>,
        reqs: &[ScoreRequest],
        deadline: Instant,
    ) -> Result<Vec<f64>, ScorerError> {
        let mut scores = Vec::with_capacity(reqs.len());
        for (i, req) in reqs.iter().enumerate() {
            let wait = deadline.saturating_duration_since(Instant::now());
            let line = match lines.recv_timeout(wait) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ScorerError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(ScorerError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ScorerError::IdMismatch(format!(
                        "adapter closed after {i} of {} responses",
                        reqs.len()
                    )))
                }
            };
            let resp: ScoreResponse = serde_json::from_str(&line)
                .map_err(|e| ScorerError::Protocol(format!("bad response line {line:?}: {e}")))?;
            if resp.id != req.id {
                return Err(ScorerError::IdMismatch(format!(
                    "expected {:?}, got {:?}",
                    req.id, resp.id
                )));
            }
            if let Some(err) = resp.error {
                return Err(ScorerError::Protocol(format!(
                    "adapter error for {}: {err}",
                    resp.id
                )));
            }
            let score = resp.entailment.ok_or_else(|| {
                ScorerError::Protocol(format!("response for {} has no score", resp.id))
            })?;
            scores.push(score);
        }
        Ok(scores)
    }
}

impl Scorer for ExternalScorer {
    fn score_batch(&self, queries: &[NliQuery]) -> Result<Vec<f64>, ScorerError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let reqs: Vec<ScoreRequest> = queries
            .iter()
            .map(|q| ScoreRequest {
                id: q.query_id(),
                premise: q.premise.clone(),
                hypothesis: q.hypothesis.clone(),
            })
            .collect();
        let mut guard = self.conn.lock().expect("connection lock poisoned");
        let mut tries = 0;
        loop {
            if guard.is_none() {
                *guard = Some(Connection::open(&self.endpoint)?);
            }
            let result = self.attempt(guard.as_mut().expect("connection"), &reqs);
            match result {
                Ok(scores) => return Ok(scores),
                Err(e @ (ScorerError::Timeout(_) | ScorerError::Io(_))) => {
                    // stream state is unknown; reconnect before retrying
                    *guard = None;
                    if tries >= self.retries {
                        return Err(e);
                    }
                    tries += 1;
                }
                Err(e) => {
                    *guard = None;
                    return Err(e);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;

    fn queries(n: usize) -> Vec<NliQuery> {
        (0..n)
            .map(|i| NliQuery {
                instance_id: format!("s{i}"),
                candidate: "L".into(),
                premise: format!("premise {i}"),
                hypothesis: "h".into(),
            })
            .collect()
    }

    /// Serves one connection, answering each request with `f(index, req)`.
    fn serve<F>(f: F) -> String
    where
        F: Fn(usize, &ScoreRequest) -> Option<String> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { return };
                let mut out = stream.try_clone().unwrap();
                for (i, line) in BufReader::new(stream).lines().enumerate() {
                    let Ok(line) = line else { break };
                    let req: ScoreRequest = serde_json::from_str(&line).unwrap();
                    match f(i, &req) {
                        Some(resp) => {
                            if writeln!(out, "{resp}").is_err() {
                                break;
                            }
                        }
                        None => break,
                    }
                }
            }
        });
        addr
    }

    #[test]
    fn round_trip_preserves_order_and_values() {
        let addr = serve(|i, r| {
            Some(
                serde_json::to_string(&ScoreResponse {
                    id: r.id.clone(),
                    entailment: Some(i as f64 * 0.1 - 0.05),
                    error: None,
                })
                .unwrap(),
            )
        });
        let s = ExternalScorer::new(Endpoint::Tcp(addr));
        let got = s.score_batch(&queries(5)).unwrap();
        let want: Vec<f64> = (0..5).map(|i| i as f64 * 0.1 - 0.05).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn short_response_is_id_mismatch() {
        let addr =
            serve(|i, r| (i < 2).then(|| format!(r#"{{"id":"{}","entailment":1.0}}"#, r.id)));
        let s = ExternalScorer::new(Endpoint::Tcp(addr)).with_timeout(Duration::from_secs(5));
        assert!(matches!(
            s.score_batch(&queries(3)),
            Err(ScorerError::IdMismatch(_))
        ));
    }

    #[test]
    fn wrong_id_is_id_mismatch() {
        let addr = serve(|_, _| Some(r#"{"id":"other","entailment":1.0}"#.to_string()));
        let s = ExternalScorer::new(Endpoint::Tcp(addr));
        assert!(matches!(
            s.score_batch(&queries(1)),
            Err(ScorerError::IdMismatch(_))
        ));
    }

    #[test]
    fn error_record_and_garbage_are_protocol_errors() {
        let addr = serve(|_, r| Some(format!(r#"{{"id":"{}","error":"empty hypothesis"}}"#, r.id)));
        let s = ExternalScorer::new(Endpoint::Tcp(addr));
        assert!(matches!(
            s.score_batch(&queries(1)),
            Err(ScorerError::Protocol(_))
        ));
        let addr = serve(|_, _| Some("not json".into()));
        let s = ExternalScorer::new(Endpoint::Tcp(addr));
        assert!(matches!(
            s.score_batch(&queries(1)),
            Err(ScorerError::Protocol(_))
        ));
    }

    #[test]
    fn silent_adapter_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let _keep = std::thread::spawn(move || {
            let conns: Vec<_> = listener.incoming().take(2).collect();
            std::thread::sleep(Duration::from_secs(2));
            drop(conns);
        });
        let s = ExternalScorer::new(Endpoint::Tcp(addr))
            .with_timeout(Duration::from_millis(100))
            .with_retries(1);
        assert!(matches!(
            s.score_batch(&queries(2)),
            Err(ScorerError::Timeout(_))
        ));
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "tcp://127.0.0.1:9".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("127.0.0.1:9".into())
        );
        assert_eq!(
            "python3 serve.py --x".parse::<Endpoint>().unwrap(),
            Endpoint::Command(vec!["python3".into(), "serve.py".into(), "--x".into()])
        );
        assert!("  ".parse::<Endpoint>().is_err());
    }
}
