//! Untrusted compute node.
//!
//! A worker multiplies blinded operands it is sent, keeps the latest pair per
//! `(layer, shard)` so the backward pass can reuse it, and can be told to
//! misbehave for integrity experiments.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};

use crate::protocol::{self, error_code, Message, Mode, ReadError};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// How a worker treats the results it returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkerMode {
    Honest,
    /// With `probability`, adds `magnitude` to one uniformly chosen entry.
    Tamper { probability: f64, magnitude: f64 },
    /// With `probability`, returns the last result it sent with the same
    /// shape, or zeros if there is none.
    Lazy { probability: f64 },
}

impl WorkerMode {
    pub fn validate(&self) -> Result<(), String> {
        let p = match *self {
            WorkerMode::Honest => return Ok(()),
            WorkerMode::Tamper {
                probability,
                magnitude,
            } => {
                if !magnitude.is_finite() {
                    return Err("tamper magnitude must be finite".into());
                }
                probability
            }
            WorkerMode::Lazy { probability } => probability,
        };
        if (0.0..=1.0).contains(&p) {
            Ok(())
        } else {
            Err(format!("probability {p} outside [0, 1]"))
        }
    }
}

/// Applies a [`WorkerMode`] to outgoing results.
#[derive(Debug, Clone)]
pub struct Adversary {
    mode: WorkerMode,
    rng: Rng,
    last_sent: HashMap<(usize, usize), Matrix>,
}

impl Adversary {
    pub fn new(mode: WorkerMode, rng: Rng) -> Self {
        Self {
            mode,
            rng,
            last_sent: HashMap::new(),
        }
    }

    pub fn mode(&self) -> WorkerMode {
        self.mode
    }

    pub fn apply(&mut self, honest: Matrix) -> Matrix {
        let out = match self.mode {
            WorkerMode::Honest => honest,
            WorkerMode::Tamper {
                probability,
                magnitude,
            } => {
                if self.rng.bernoulli(probability) {
                    let target = self.rng.index(honest.len());
                    let (rows, cols) = honest.shape();
                    let mut data = honest.into_vec();
                    data[target] += magnitude;
                    Matrix::new(rows, cols, data).expect("tampered entry stays finite")
                } else {
                    honest
                }
            }
            WorkerMode::Lazy { probability } => {
                if self.rng.bernoulli(probability) {
                    self.last_sent
                        .get(&honest.shape())
                        .cloned()
                        .unwrap_or_else(|| Matrix::zeros(honest.rows(), honest.cols()))
                } else {
                    honest
                }
            }
        };
        if matches!(self.mode, WorkerMode::Lazy { .. }) {
            self.last_sent.insert(out.shape(), out.clone());
        }
        out
    }
}

#[derive(Debug, Clone)]
struct CachedPair {
    a_enc: Matrix,
    b_enc: Matrix,
    forwarded: bool,
}

/// State of one master connection.
#[derive(Debug)]
pub struct WorkerState {
    worker_id: u32,
    mode: Option<Mode>,
    n_layers: u32,
    cache: HashMap<(u32, u32), CachedPair>,
    adversary: Adversary,
    next_tag: u64,
}

fn error(code: u16, text: impl Into<String>) -> Message {
    Message::Error {
        code,
        text: text.into(),
    }
}

impl WorkerState {
    pub fn new(mode: WorkerMode, seed: u64) -> Self {
        Self {
            worker_id: 0,
            mode: None,
            n_layers: 0,
            cache: HashMap::new(),
            adversary: Adversary::new(mode, Rng::new(seed)),
            next_tag: 0,
        }
    }

    pub fn worker_id(&self) -> u32 {
        self.worker_id
    }

    /// Number of cached `(layer, shard)` pairs.
    pub fn cached_pairs(&self) -> usize {
        self.cache.len()
    }

    /// Processes one incoming message and returns the reply, if any.
    pub fn handle(&mut self, msg: Message) -> Option<Message> {
        match msg {
            Message::Hello { worker_id } => {
                self.worker_id = worker_id;
                Some(Message::Hello { worker_id })
            }
            Message::Config { n_layers, mode } => {
                self.n_layers = n_layers;
                self.mode = Some(mode);
                None
            }
            Message::StorePair {
                layer_id,
                shard_id,
                a_enc,
                b_enc,
            } => Some(self.handle_store(layer_id, shard_id, a_enc, b_enc)),
            Message::MultFwd { layer_id, shard_id } => Some(self.handle_mult_fwd(layer_id, shard_id)),
            Message::MultBwd {
                layer_id,
                shard_id,
                d_enc,
            } => Some(self.handle_mult_bwd(layer_id, shard_id, &d_enc)),
            other => Some(error(
                error_code::UNEXPECTED_MESSAGE,
                format!("worker does not accept message type 0x{:02x}", other.type_byte()),
            )),
        }
    }

    fn take_tag(&mut self) -> u64 {
        let tag = self.next_tag;
        self.next_tag += 1;
        tag
    }

    pub fn handle_store(&mut self, layer_id: u32, shard_id: u32, a_enc: Matrix, b_enc: Matrix) -> Message {
        let tag = self.take_tag();
        if a_enc.cols() != b_enc.rows() {
            return error(
                error_code::SHAPE_MISMATCH,
                format!(
                    "cannot multiply {:?} by {:?}",
                    a_enc.shape(),
                    b_enc.shape()
                ),
            );
        }
        self.cache.insert(
            (layer_id, shard_id),
            CachedPair {
                a_enc,
                b_enc,
                forwarded: false,
            },
        );
        Message::Result {
            request_tag: tag,
            matrices: Vec::new(),
        }
    }

    pub fn handle_mult_fwd(&mut self, layer_id: u32, shard_id: u32) -> Message {
        let tag = self.take_tag();
        let Some(pair) = self.cache.get_mut(&(layer_id, shard_id)) else {
            return error(
                error_code::CACHE_MISS,
                format!("no stored pair for layer {layer_id} shard {shard_id}"),
            );
        };
        pair.forwarded = true;
        let z = pair
            .a_enc
            .matmul(&pair.b_enc)
            .expect("shapes checked on store");
        Message::Result {
            request_tag: tag,
            matrices: vec![self.adversary.apply(z)],
        }
    }

    /// Returns `(b_enc d, d a_enc)`: with the forward pair `(W', X')` this is
    /// `(X' (delta^T)', (delta^T)' W')`.
    pub fn handle_mult_bwd(&mut self, layer_id: u32, shard_id: u32, d_enc: &Matrix) -> Message {
        let tag = self.take_tag();
        let pair = match self.cache.get(&(layer_id, shard_id)) {
            Some(p) if p.forwarded => p,
            _ => {
                return error(
                    error_code::CACHE_MISS,
                    format!("no forward product for layer {layer_id} shard {shard_id}"),
                )
            }
        };
        let (Ok(t1), Ok(t2)) = (pair.b_enc.matmul(d_enc), d_enc.matmul(&pair.a_enc)) else {
            return error(
                error_code::SHAPE_MISMATCH,
                format!(
                    "backward operand {:?} does not fit cached {:?} and {:?}",
                    d_enc.shape(),
                    pair.a_enc.shape(),
                    pair.b_enc.shape()
                ),
            );
        };
        Message::Result {
            request_tag: tag,
            matrices: vec![self.adversary.apply(t1), self.adversary.apply(t2)],
        }
    }
}

/// Serves one master connection until it closes.
pub fn serve_connection(stream: TcpStream, mode: WorkerMode, seed: u64) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut state = WorkerState::new(mode, seed);
    loop {
        let msg = match protocol::read_message(&mut reader) {
            Ok(Some(msg)) => msg,
            Ok(None) => return Ok(()),
            Err(ReadError::Io(e)) => return Err(e),
            Err(ReadError::Decode(e)) => {
                let reply = error(error_code::MALFORMED, e.to_string());
                let _ = protocol::write_message(&mut writer, &reply);
                return Err(io::Error::new(io::ErrorKind::InvalidData, e));
            }
        };
        if let Some(reply) = state.handle(msg) {
            protocol::write_message(&mut writer, &reply)?;
        }
    }
}

/// Accepts connections forever, one thread per connection. Connection `i`
/// seeds its adversary with `seed + i`.
pub fn serve(listener: TcpListener, mode: WorkerMode, seed: u64) -> io::Result<()> {
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let conn_seed = seed.wrapping_add(i as u64);
        thread::spawn(move || {
            if let Err(e) = serve_connection(stream, mode, conn_seed) {
                log::warn!("worker connection ended with error: {e}");
            }
        });
    }
    Ok(())
}

/// Binds `addr` and serves on the current thread.
pub fn run<A: ToSocketAddrs>(addr: A, mode: WorkerMode, seed: u64) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("worker listening on {}", listener.local_addr()?);
    serve(listener, mode, seed)
}

/// A worker serving on a loopback port from a background thread.
#[derive(Debug)]
pub struct LocalWorker {
    pub addr: SocketAddr,
    pub handle: JoinHandle<io::Result<()>>,
}

/// Starts a worker on an ephemeral loopback port.
pub fn spawn_local(mode: WorkerMode, seed: u64) -> io::Result<LocalWorker> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handle = thread::spawn(move || serve(listener, mode, seed));
    Ok(LocalWorker { addr, handle })
}
