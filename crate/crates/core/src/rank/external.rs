//! External scorers over a line protocol.
//!
//! The engine opens with `hello`, the scorer answers `ready`, and each
//! `score` request is answered by a `scores` reply carrying one finite real
//! per candidate. Replies are matched by `example_id`, so a scorer may answer
//! pipelined requests out of order.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Ranking, RankingExample, Target};

pub const PROTOCOL: &str = "linkforge-scorer/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("scorer returned {actual} scores for {expected} candidates")]
    CountMismatch { expected: usize, actual: usize },
    #[error("scorer returned a non-finite score at position {0}")]
    NonFinite(usize),
    #[error("scorer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("bad handshake: {0}")]
    BadHandshake(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("unexpected message type {0:?}")]
    UnexpectedType(String),
    #[error("reply for unknown example {0:?}")]
    UnexpectedExample(String),
    #[error("scorer reported an error: {0}")]
    Scorer(String),
    #[error("scorer closed the connection")]
    Closed,
    #[error("scorer i/o: {0}")]
    Io(String),
}

impl ProtocolError {
    /// Stable snake_case name, used by fixtures and logs.
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolError::CountMismatch { .. } => "count_mismatch",
            ProtocolError::NonFinite(_) => "non_finite",
            ProtocolError::Timeout(_) => "timeout",
            ProtocolError::BadHandshake(_) => "bad_handshake",
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::UnexpectedType(_) => "unexpected_type",
            ProtocolError::UnexpectedExample(_) => "unexpected_example",
            ProtocolError::Scorer(_) => "scorer",
            ProtocolError::Closed => "closed",
            ProtocolError::Io(_) => "io",
        }
    }

    /// Errors confined to one example; the connection stays usable.
    pub fn is_per_example(&self) -> bool {
        matches!(
            self,
            ProtocolError::CountMismatch { .. }
                | ProtocolError::NonFinite(_)
                | ProtocolError::Timeout(_)
                | ProtocolError::Scorer(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub section: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        protocol: String,
    },
    Ready {
        name: String,
    },
    Score {
        example_id: String,
        target: Target,
        candidates: Vec<WireCandidate>,
    },
    /// `None` marks a score that was not a finite JSON number.
    Scores {
        example_id: String,
        scores: Vec<Option<f64>>,
    },
    Error {
        #[serde(default)]
        example_id: Option<String>,
        message: String,
    },
}

const TYPES: [&str; 5] = ["hello", "ready", "score", "scores", "error"];

impl Message {
    pub fn request(example: &RankingExample) -> Self {
        Message::Score {
            example_id: example.example_id.clone(),
            target: example.target.clone(),
            candidates: example
                .candidates
                .iter()
                .map(|c| WireCandidate {
                    section: c.section_title.clone(),
                    text: c.text.clone(),
                })
                .collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages serialize infallibly")
    }

    /// Parse one line, reading bare `NaN` and `Infinity` tokens as missing
    /// scores rather than rejecting the whole line.
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let value: serde_json::Value =
            serde_json::from_str(&nonfinite_to_null(line)).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let tag = value
            .get("type")
            .and_then(|t| t.as_str())
            .ok_or_else(|| ProtocolError::Malformed("missing \"type\"".into()))?;
        if !TYPES.contains(&tag) {
            return Err(ProtocolError::UnexpectedType(tag.to_string()));
        }
        serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Ready { .. } => "ready",
            Message::Score { .. } => "score",
            Message::Scores { .. } => "scores",
            Message::Error { .. } => "error",
        }
    }
}

/// Replace `NaN`, `Infinity` and `-Infinity` outside strings with `null`.
fn nonfinite_to_null(line: &str) -> Cow<'_, str> {
    if !line.contains("NaN") && !line.contains("Infinity") {
        return Cow::Borrowed(line);
    }
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if let Some(tok) = ["NaN", "-Infinity", "+Infinity", "Infinity"]
            .into_iter()
            .find(|t| rest.starts_with(t))
        {
            out.push_str("null");
            rest = &rest[tok.len()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    Cow::Owned(out)
}

/// A bidirectional line channel to a scorer.
pub trait Transport {
    fn send(&mut self, line: &str) -> Result<(), ProtocolError>;
    fn recv(&mut self, timeout: Duration) -> Result<String, ProtocolError>;
}

/// A scorer running as a child process, spoken to over stdin and stdout.
pub struct ProcessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ProcessTransport {
    /// Spawn `command` through `sh -c`. Stderr is inherited.
    pub fn spawn(command: &str) -> Result<Self, ProtocolError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {command}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProtocolError::Io(format!("spawning {command:?}: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            stdin: child.stdin.take(),
            child,
            lines: rx,
        })
    }
}

impl Transport for ProcessTransport {
    fn send(&mut self, line: &str) -> Result<(), ProtocolError> {
        let stdin = self.stdin.as_mut().ok_or(ProtocolError::Closed)?;
        let res = stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        res.map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe => ProtocolError::Closed,
            _ => ProtocolError::Io(e.to_string()),
        })
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, ProtocolError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(ProtocolError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Closed),
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// An in-process scorer: each sent line is handed to a function whose
/// output lines are queued as replies. An empty queue reads as a timeout.
pub struct FnTransport<F> {
    respond: F,
    queue: VecDeque<String>,
}

impl<F: FnMut(&str) -> Vec<String>> FnTransport<F> {
    pub fn new(respond: F) -> Self {
        Self {
            respond,
            queue: VecDeque::new(),
        }
    }
}

impl<F: FnMut(&str) -> Vec<String>> Transport for FnTransport<F> {
    fn send(&mut self, line: &str) -> Result<(), ProtocolError> {
        let replies = (self.respond)(line);
        self.queue.extend(replies);
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, ProtocolError> {
        self.queue.pop_front().ok_or(ProtocolError::Timeout(timeout))
    }
}

/// An engine-side connection after a completed handshake.
pub struct ExternalScorer<T> {
    transport: T,
    name: String,
    timeout: Duration,
    abandoned: HashSet<String>,
}

impl<T: Transport> ExternalScorer<T> {
    pub fn connect(mut transport: T, timeout: Duration) -> Result<Self, ProtocolError> {
        let hello = Message::Hello {
            protocol: PROTOCOL.to_string(),
        };
        transport.send(&hello.to_line())?;
        let reply = transport.recv(timeout)?;
        let name = match Message::parse(&reply) {
            Ok(Message::Ready { name }) => name,
            Ok(other) => {
                return Err(ProtocolError::BadHandshake(format!(
                    "expected ready, got {}",
                    other.type_name()
                )))
            }
            Err(e) => return Err(ProtocolError::BadHandshake(e.to_string())),
        };
        Ok(Self {
            transport,
            name,
            timeout,
            abandoned: HashSet::new(),
        })
    }

    /// The name the scorer announced in its `ready` reply.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn score(&mut self, example: &RankingExample) -> Result<Ranking, ProtocolError> {
        self.score_many(std::slice::from_ref(example), 1)?
            .pop()
            .expect("one result per example")
    }

    /// Score `examples` with up to `window` requests in flight. The outer
    /// error aborts the connection; inner errors fail single examples.
    pub fn score_many(
        &mut self,
        examples: &[RankingExample],
        window: usize,
    ) -> Result<Vec<Result<Ranking, ProtocolError>>, ProtocolError> {
        let window = window.max(1);
        let mut results: Vec<Option<Result<Ranking, ProtocolError>>> = vec![None; examples.len()];
        let mut pending: HashMap<String, usize> = HashMap::new();
        let mut queue: VecDeque<String> = VecDeque::new();
        let mut next = 0;
        while next < examples.len() || !pending.is_empty() {
            while next < examples.len() && pending.len() < window {
                let id = &examples[next].example_id;
                if pending.contains_key(id) {
                    break;
                }
                self.transport.send(&Message::request(&examples[next]).to_line())?;
                pending.insert(id.clone(), next);
                queue.push_back(id.clone());
                next += 1;
            }
            let line = match self.transport.recv(self.timeout) {
                Ok(line) => line,
                Err(ProtocolError::Timeout(t)) => {
                    let oldest = queue.pop_front().expect("a request is in flight");
                    let i = pending.remove(&oldest).expect("queued ids are pending");
                    self.abandoned.insert(oldest);
                    results[i] = Some(Err(ProtocolError::Timeout(t)));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (id, outcome) = match Message::parse(&line)? {
                Message::Scores { example_id, scores } => (example_id, Ok(scores)),
                Message::Error {
                    example_id: Some(example_id),
                    message,
                } => (example_id, Err(ProtocolError::Scorer(message))),
                Message::Error {
                    example_id: None,
                    message,
                } => return Err(ProtocolError::Scorer(message)),
                other => return Err(ProtocolError::UnexpectedType(other.type_name().to_string())),
            };
            let Some(i) = pending.remove(&id) else {
                if self.abandoned.remove(&id) {
                    continue;
                }
                return Err(ProtocolError::UnexpectedExample(id));
            };
            queue.retain(|q| q != &id);
            results[i] = Some(outcome.and_then(|s| self.ranking(&examples[i], s)));
        }
        Ok(results
            .into_iter()
            .map(|r| r.expect("every example resolved"))
            .collect())
    }

    fn ranking(&self, example: &RankingExample, scores: Vec<Option<f64>>) -> Result<Ranking, ProtocolError> {
        let expected = example.candidates.len();
        if scores.len() != expected {
            return Err(ProtocolError::CountMismatch {
                expected,
                actual: scores.len(),
            });
        }
        let scores = scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.filter(|x| x.is_finite()).ok_or(ProtocolError::NonFinite(i)))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(Ranking::from_scores(&example.example_id, &self.name, scores))
    }
}

/// Reply behaviour of the bundled echo scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoMode {
    /// Candidate `i` scores `i`.
    Index,
    /// One score too few.
    Short,
    /// The first score is `NaN`.
    Nan,
}

impl std::str::FromStr for EchoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "index" => Ok(EchoMode::Index),
            "short" => Ok(EchoMode::Short),
            "nan" => Ok(EchoMode::Nan),
            _ => Err(format!("unknown echo mode {s:?}")),
        }
    }
}

pub const ECHO_NAME: &str = "echo";

/// The echo scorer's reply to one request line.
pub fn echo_reply(line: &str, mode: EchoMode) -> String {
    match Message::parse(line) {
        Ok(Message::Hello { .. }) => Message::Ready {
            name: ECHO_NAME.to_string(),
        }
        .to_line(),
        Ok(Message::Score {
            example_id, candidates, ..
        }) => {
            let n = candidates.len();
            let scores: Vec<Option<f64>> = match mode {
                EchoMode::Index | EchoMode::Nan => (0..n).map(|i| Some(i as f64)).collect(),
                EchoMode::Short => (0..n.saturating_sub(1)).map(|i| Some(i as f64)).collect(),
            };
            let reply = Message::Scores { example_id, scores }.to_line();
            if mode == EchoMode::Nan && n > 0 {
                reply.replacen("\"scores\":[0.0", "\"scores\":[NaN", 1)
            } else {
                reply
            }
        }
        Ok(other) => Message::Error {
            example_id: None,
            message: format!("unexpected {}", other.type_name()),
        }
        .to_line(),
        Err(e) => Message::Error {
            example_id: None,
            message: e.to_string(),
        }
        .to_line(),
    }
}

/// Serve the echo protocol until `reader` is exhausted.
pub fn run_echo_scorer<R: BufRead, W: Write>(reader: R, mut writer: W, mode: EchoMode) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", echo_reply(&line, mode))?;
        writer.flush()?;
    }
    Ok(())
}

/// An in-process echo scorer.
pub fn echo_transport(mode: EchoMode) -> FnTransport<impl FnMut(&str) -> Vec<String>> {
    FnTransport::new(move |line: &str| vec![echo_reply(line, mode)])
}
