//! Connection to a protocol v1 server over TCP or a child process's stdio.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::protocol::{
    HandshakePayload, HandshakeResult, Kind, LmQuery, LmScorePayload, Request, Response, SimilarityPayload,
    SimilarityQuery, SparseDistribution, SpeakerNextPayload, SpeakerQuery, PROTOCOL_VERSION,
};
use crate::BridgeError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_WINDOW: usize = 32;

/// `tcp://host:port` or `exec:<shell command>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Command(String),
}

impl FromStr for Endpoint {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            Ok(Endpoint::Command(cmd.to_string()))
        } else {
            Err(BridgeError::Endpoint(format!("`{s}`: expected tcp://host:port or exec:<command>")))
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Command(c) => write!(f, "exec:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptions {
    /// Per-request deadline. Timed-out requests are not retried.
    pub timeout: Duration,
    /// Most requests in flight at once.
    pub window: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { timeout: DEFAULT_TIMEOUT, window: DEFAULT_WINDOW }
    }
}

type Reply = Result<Value, BridgeError>;

#[derive(Default)]
struct Shared {
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    poison: Mutex<Option<String>>,
    next_id: AtomicU64,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
}

impl Shared {
    fn poisoned(&self) -> Option<String> {
        self.poison.lock().expect("poison lock").clone()
    }

    /// Marks the connection unusable and fails every pending request.
    fn poison(&self, reason: String) {
        let mut poison = self.poison.lock().expect("poison lock");
        if poison.is_none() {
            *poison = Some(reason.clone());
        }
        drop(poison);
        for (_, tx) in self.pending.lock().expect("pending lock").drain() {
            let _ = tx.send(Err(BridgeError::Poisoned(reason.clone())));
        }
    }

    fn acquire(&self, window: usize) {
        let mut n = self.in_flight.lock().expect("window lock");
        while *n >= window {
            n = self.slot_freed.wait(n).expect("window lock");
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().expect("window lock") -= 1;
        self.slot_freed.notify_one();
    }

    fn dispatch(&self, line: &str) {
        let response: Response = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return self.poison(format!("malformed response: {e}")),
        };
        let Some(id) = response.id else {
            return self.poison(format!("response without id: {}", response.error.unwrap_or_default()));
        };
        let reply = match (response.result, response.error) {
            (Some(v), None) => Ok(v),
            (None, Some(e)) => Err(BridgeError::Remote(e)),
            _ => return self.poison(format!("response {id} must carry exactly one of result and error")),
        };
        let tx = self.pending.lock().expect("pending lock").remove(&id);
        match tx {
            Some(tx) => {
                let _ = tx.send(reply);
            }
            // A late answer to a request that already timed out.
            None if id < self.next_id.load(Ordering::SeqCst) => {}
            None => self.poison(format!("response for unknown id {id}")),
        }
    }
}

enum Transport {
    Tcp(TcpStream),
    Child(Child),
}

/// A handshaken connection. Safe to share between threads: writes are
/// serialized and a reader thread routes each response to its caller by id.
pub struct BridgeClient {
    endpoint: Endpoint,
    options: ClientOptions,
    shared: Arc<Shared>,
    writer: Mutex<Box<dyn Write + Send>>,
    transport: Mutex<Option<Transport>>,
    info: HandshakeResult,
}

impl BridgeClient {
    pub fn connect(endpoint: &Endpoint, options: ClientOptions) -> Result<Self, BridgeError> {
        if options.window == 0 {
            return Err(BridgeError::Endpoint("in-flight window must be >= 1".into()));
        }
        let (reader, writer, transport): (Box<dyn Read + Send>, Box<dyn Write + Send>, Transport) = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| BridgeError::Transport(format!("{addr}: {e}")))?;
                stream.set_nodelay(true).map_err(|e| BridgeError::Transport(e.to_string()))?;
                let r = stream.try_clone().map_err(|e| BridgeError::Transport(e.to_string()))?;
                let w = stream.try_clone().map_err(|e| BridgeError::Transport(e.to_string()))?;
                (Box::new(r), Box::new(w), Transport::Tcp(stream))
            }
            Endpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| BridgeError::Transport(format!("spawning `{cmd}`: {e}")))?;
                let r = child.stdout.take().expect("piped stdout");
                let w = child.stdin.take().expect("piped stdin");
                (Box::new(r), Box::new(w), Transport::Child(child))
            }
        };
        let shared = Arc::new(Shared::default());
        let reader_shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("bridge-reader".into())
            .spawn(move || {
                let mut lines = BufReader::new(reader);
                let mut line = String::new();
                loop {
                    line.clear();
                    match lines.read_line(&mut line) {
                        Ok(0) => return reader_shared.poison("connection closed".into()),
                        Ok(_) => reader_shared.dispatch(line.trim_end()),
                        Err(e) => return reader_shared.poison(format!("read failed: {e}")),
                    }
                }
            })
            .map_err(|e| BridgeError::Transport(e.to_string()))?;

        let mut client = Self {
            endpoint: endpoint.clone(),
            options,
            shared,
            writer: Mutex::new(writer),
            transport: Mutex::new(Some(transport)),
            info: HandshakeResult { version: PROTOCOL_VERSION, capabilities: vec![Kind::Handshake], vocabulary: None },
        };
        let info: HandshakeResult = match client.request(Kind::Handshake, &HandshakePayload { version: PROTOCOL_VERSION }) {
            Ok(info) => info,
            Err(BridgeError::Remote(msg)) => return Err(BridgeError::UnsupportedVersion(msg)),
            Err(e) => return Err(e),
        };
        if info.version != PROTOCOL_VERSION {
            return Err(BridgeError::UnsupportedVersion(format!(
                "unsupported protocol version {} from server (client speaks {PROTOCOL_VERSION})",
                info.version
            )));
        }
        if info.capabilities.contains(&Kind::SpeakerNext) && info.vocabulary.is_none() {
            return Err(BridgeError::Malformed("speaker_next offered without a vocabulary".into()));
        }
        client.info = info;
        Ok(client)
    }

    /// A new connection to the same endpoint; ids start over.
    pub fn reconnect(&self) -> Result<Self, BridgeError> {
        Self::connect(&self.endpoint, self.options.clone())
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn info(&self) -> &HandshakeResult {
        &self.info
    }

    pub fn has(&self, kind: Kind) -> bool {
        self.info.capabilities.contains(&kind)
    }

    pub fn require(&self, kind: Kind) -> Result<(), BridgeError> {
        if self.has(kind) {
            Ok(())
        } else {
            Err(BridgeError::MissingCapability(kind))
        }
    }

    /// Reason the connection was poisoned, if it was.
    pub fn poisoned(&self) -> Option<String> {
        self.shared.poisoned()
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, kind: Kind, payload: Value) -> Result<Value, BridgeError> {
        if kind != Kind::Handshake {
            self.require(kind)?;
        }
        if let Some(reason) = self.shared.poisoned() {
            return Err(BridgeError::Poisoned(reason));
        }
        self.shared.acquire(self.options.window);
        let result = self.round_trip(kind, payload);
        self.shared.release();
        result
    }

    fn round_trip(&self, kind: Kind, payload: Value) -> Result<Value, BridgeError> {
        let id = self.shared.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().expect("pending lock").insert(id, tx);
        let mut line = serde_json::to_string(&Request { id, kind: kind.to_string(), payload })
            .map_err(|e| BridgeError::Malformed(e.to_string()))?;
        line.push('\n');
        let written = {
            let mut w = self.writer.lock().expect("writer lock");
            w.write_all(line.as_bytes()).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.shared.pending.lock().expect("pending lock").remove(&id);
            let reason = format!("write failed: {e}");
            self.shared.poison(reason.clone());
            return Err(BridgeError::Poisoned(reason));
        }
        match rx.recv_timeout(self.options.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                // A reply racing the deadline may already be queued.
                self.shared.pending.lock().expect("pending lock").remove(&id);
                match rx.try_recv() {
                    Ok(reply) => reply,
                    Err(_) => Err(BridgeError::Timeout { id, timeout: self.options.timeout }),
                }
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(BridgeError::Poisoned(self.shared.poisoned().unwrap_or_else(|| "connection closed".into())))
            }
        }
    }

    /// Typed request; a result that does not fit `T` poisons the connection.
    pub fn request<T: DeserializeOwned>(&self, kind: Kind, payload: &impl Serialize) -> Result<T, BridgeError> {
        let payload = serde_json::to_value(payload).map_err(|e| BridgeError::Malformed(e.to_string()))?;
        let value = self.call(kind, payload)?;
        serde_json::from_value(value).map_err(|e| self.schema_violation(format!("{kind} result: {e}")))
    }

    fn schema_violation(&self, reason: String) -> BridgeError {
        self.shared.poison(reason.clone());
        BridgeError::Malformed(reason)
    }

    fn check_len<T>(&self, kind: Kind, got: Vec<T>, expected: usize) -> Result<Vec<T>, BridgeError> {
        if got.len() == expected {
            Ok(got)
        } else {
            Err(self.schema_violation(format!("{kind}: {} results for {expected} queries", got.len())))
        }
    }

    pub fn speaker_next(
        &self,
        queries: Vec<SpeakerQuery>,
        top_k: Option<usize>,
    ) -> Result<Vec<SparseDistribution>, BridgeError> {
        let n = queries.len();
        let out = self.request(Kind::SpeakerNext, &SpeakerNextPayload { queries, top_k })?;
        self.check_len(Kind::SpeakerNext, out, n)
    }

    pub fn similarity(&self, queries: Vec<SimilarityQuery>) -> Result<Vec<Vec<f64>>, BridgeError> {
        let shapes: Vec<usize> = queries.iter().map(|q| q.items.len()).collect();
        let out: Vec<Vec<f64>> = self.request(Kind::Similarity, &SimilarityPayload { queries })?;
        let out = self.check_len(Kind::Similarity, out, shapes.len())?;
        if let Some((i, v)) = out.iter().enumerate().find(|(i, v)| v.len() != shapes[*i]) {
            return Err(self.schema_violation(format!("similarity: {} values for {} items in query {i}", v.len(), shapes[i])));
        }
        Ok(out)
    }

    /// Per-token log-likelihoods per text; `null` entries read as `-inf`.
    pub fn lm_score(&self, texts: Vec<String>) -> Result<Vec<Vec<f64>>, BridgeError> {
        let n = texts.len();
        let queries = texts.into_iter().map(|text| LmQuery { text }).collect();
        let out: Vec<Vec<Option<f64>>> = self.request(Kind::LmScore, &LmScorePayload { queries })?;
        let out = self.check_len(Kind::LmScore, out, n)?;
        Ok(out.into_iter().map(|v| v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect()).collect())
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        match self.transport.lock().expect("transport lock").take() {
            Some(Transport::Tcp(stream)) => {
                let _ = stream.shutdown(Shutdown::Both);
            }
            Some(Transport::Child(mut child)) => {
                let _ = child.kill();
                let _ = child.wait();
            }
            None => {}
        }
    }
}
