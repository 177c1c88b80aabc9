//! Protocol v1 server wrapping in-process scorers. Used as a test fixture
//! and by `pragcap serve-toy`; options inject delays, out-of-order answers,
//! a different protocol version, or a corrupt response.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use pragcap_core::bench::{derive_seed, ScorerParams, ToyScorers};
use pragcap_core::evaluation::LanguageModelScorer;
use pragcap_core::listeners::SimilarityScorer;
use pragcap_core::speakers::{SpeakerScorer, ToyWorld};
use pragcap_core::{Caption, ItemId, Vocabulary};

use crate::client::Endpoint;
use crate::protocol::{
    HandshakePayload, HandshakeResult, Kind, LmScorePayload, Request, Response, SimilarityPayload,
    SparseDistribution, SpeakerNextPayload, PROTOCOL_VERSION,
};

/// The scorers a server exposes; each present one becomes a capability.
pub struct Backends {
    pub vocabulary: Vocabulary,
    pub speaker: Option<Arc<dyn SpeakerScorer>>,
    pub similarity: Option<Arc<dyn SimilarityScorer>>,
    pub lm: Option<Arc<dyn LanguageModelScorer>>,
}

impl Backends {
    /// Toy speaker, decoding similarity and fluency LM of `world`.
    pub fn toy(world: Arc<ToyWorld>, params: &ScorerParams, seed: u64, max_len: usize) -> pragcap_core::Result<Self> {
        let vocabulary = world.vocabulary().clone();
        let ToyScorers { speaker, listener, lm, .. } = ToyScorers::build(world, params, seed, max_len)?;
        Ok(Self { vocabulary, speaker: Some(Arc::new(speaker)), similarity: Some(Arc::new(listener)), lm: Some(Arc::new(lm)) })
    }

    pub fn capabilities(&self) -> Vec<Kind> {
        let mut caps = Vec::new();
        if self.speaker.is_some() {
            caps.push(Kind::SpeakerNext);
        }
        if self.similarity.is_some() {
            caps.push(Kind::Similarity);
        }
        if self.lm.is_some() {
            caps.push(Kind::LmScore);
        }
        caps
    }
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Protocol version the server accepts and advertises.
    pub version: u64,
    /// K for sparse speaker answers when the request does not set one; full
    /// vocabulary when `None`.
    pub top_k: Option<usize>,
    /// Pause before answering each non-handshake request.
    pub delay: Duration,
    /// Answer concurrently after a pseudo-random pause of up to the given
    /// length, seeded per request id, so answers arrive out of order.
    pub shuffle: Option<(u64, Duration)>,
    /// Answer this request id with a line that is not valid protocol.
    pub corrupt_id: Option<u64>,
    /// Records every request id received.
    pub log: Option<Arc<Mutex<Vec<u64>>>>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { version: PROTOCOL_VERSION, top_k: None, delay: Duration::ZERO, shuffle: None, corrupt_id: None, log: None }
    }
}

fn parse<T: DeserializeOwned>(payload: Value) -> Result<T, String> {
    serde_json::from_value(payload).map_err(|e| format!("bad payload: {e}"))
}

fn answer(backends: &Backends, options: &ServerOptions, kind: Kind, payload: Value) -> Result<Value, String> {
    let vocab = &backends.vocabulary;
    let e = |err: pragcap_core::Error| err.to_string();
    let unsupported = || format!("unsupported kind \"{kind}\"");
    match kind {
        Kind::Handshake => {
            let p: HandshakePayload = parse(payload)?;
            if p.version != options.version {
                return Err(format!("unsupported protocol version {} (server speaks {})", p.version, options.version));
            }
            let result = HandshakeResult {
                version: options.version,
                capabilities: backends.capabilities(),
                vocabulary: backends.speaker.as_ref().map(|_| vocab.clone()),
            };
            Ok(serde_json::to_value(result).expect("serializable"))
        }
        Kind::SpeakerNext => {
            let speaker = backends.speaker.as_ref().ok_or_else(unsupported)?;
            let p: SpeakerNextPayload = parse(payload)?;
            let k = p.top_k.or(options.top_k).unwrap_or(vocab.len());
            let tokens = p.queries.iter().map(|q| vocab.tokenize(&q.prefix).map_err(e)).collect::<Result<Vec<_>, _>>()?;
            let items: Vec<ItemId> = p.queries.iter().map(|q| ItemId::new(q.item.clone())).collect();
            let queries: Vec<_> = items.iter().zip(&tokens).map(|(i, t)| (i, t.as_slice())).collect();
            let dists = speaker.next_token_logprobs_batch(&queries).map_err(e)?;
            let sparse: Vec<SparseDistribution> = dists.iter().map(|d| SparseDistribution::from_dense(d, k)).collect();
            Ok(serde_json::to_value(sparse).expect("serializable"))
        }
        Kind::Similarity => {
            let sim = backends.similarity.as_ref().ok_or_else(unsupported)?;
            let p: SimilarityPayload = parse(payload)?;
            let out = p
                .queries
                .iter()
                .map(|q| {
                    let items: Vec<ItemId> = q.items.iter().map(|i| ItemId::new(i.clone())).collect();
                    sim.similarities(&items, &q.text).map_err(e)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(json!(out))
        }
        Kind::LmScore => {
            let lm = backends.lm.as_ref().ok_or_else(unsupported)?;
            let p: LmScorePayload = parse(payload)?;
            let out = p
                .queries
                .iter()
                .map(|q| {
                    let caption = Caption::from_words(&vocab.tokenize(&q.text).map_err(e)?, vocab.eos()).map_err(e)?;
                    let lls = lm.token_logprobs(&caption).map_err(e)?;
                    Ok(lls.into_iter().map(|v| (v > f64::NEG_INFINITY).then_some(v)).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>, String>>()?;
            Ok(json!(out))
        }
    }
}

/// Answers one request line. Returns the request id (when readable), its
/// kind, and the response line.
pub fn handle_line(backends: &Backends, options: &ServerOptions, line: &str) -> (Option<u64>, Option<Kind>, String) {
    let (id, kind, outcome) = match serde_json::from_str::<Request>(line) {
        Err(err) => {
            let id = serde_json::from_str::<Value>(line).ok().and_then(|v| v.get("id").and_then(Value::as_u64));
            (id, None, Err(format!("malformed request: {err}")))
        }
        Ok(req) => match Kind::parse(&req.kind) {
            None => (Some(req.id), None, Err(format!("unsupported kind \"{}\"", req.kind))),
            Some(kind) => (Some(req.id), Some(kind), answer(backends, options, kind, req.payload)),
        },
    };
    let response = match outcome {
        Ok(result) => Response { id, result: Some(result), error: None },
        Err(error) => Response { id, result: None, error: Some(error) },
    };
    (id, kind, serde_json::to_string(&response).expect("serializable"))
}

fn write_line(writer: &Mutex<impl Write>, line: &str) -> io::Result<()> {
    let mut w = writer.lock().expect("writer lock");
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Serves requests from `reader` until end of input.
pub fn serve_connection<W: Write + Send + 'static>(
    backends: Arc<Backends>,
    options: ServerOptions,
    reader: impl BufRead,
    writer: W,
) -> io::Result<()> {
    let writer = Arc::new(Mutex::new(writer));
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, kind, mut response) = handle_line(&backends, &options, &line);
        if let (Some(log), Some(id)) = (&options.log, id) {
            log.lock().expect("log lock").push(id);
        }
        if id.is_some() && id == options.corrupt_id {
            response = "{\"id\": oops".to_string();
        }
        let pause = match options.shuffle {
            Some((seed, max)) if !max.is_zero() => {
                let label = id.map_or_else(String::new, |i| i.to_string());
                let micros = derive_seed(seed, &label) % (max.as_micros() as u64 + 1);
                options.delay + Duration::from_micros(micros)
            }
            _ => options.delay,
        };
        if kind == Some(Kind::Handshake) || (pause.is_zero() && options.shuffle.is_none()) {
            write_line(&writer, &response)?;
        } else {
            let writer = Arc::clone(&writer);
            workers.push(thread::spawn(move || {
                thread::sleep(pause);
                let _ = write_line(&writer, &response);
            }));
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// A loopback TCP server accepting any number of connections. Dropping it
/// closes every connection.
pub struct LoopbackServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Binds an ephemeral port on 127.0.0.1.
    pub fn spawn(backends: Arc<Backends>, options: ServerOptions) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", backends, options)
    }

    pub fn bind(addr: &str, backends: Arc<Backends>, options: ServerOptions) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let (stop2, conns2) = (Arc::clone(&stop), Arc::clone(&connections));
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let (Ok(read), Ok(keep)) = (stream.try_clone(), stream.try_clone()) else { continue };
                conns2.lock().expect("connections lock").push(keep);
                let (backends, options) = (Arc::clone(&backends), options.clone());
                thread::spawn(move || {
                    let _ = serve_connection(backends, options, BufReader::new(read), stream);
                });
            }
        });
        Ok(Self { addr, stop, connections, accept: Some(accept) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::Tcp(self.addr.to_string())
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.connections.lock().expect("connections lock").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}
