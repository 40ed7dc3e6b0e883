//! Trusted orchestrator.
//!
//! [`OffloadExecutor`] implements [`MatMulExecutor`] by splitting each layer's
//! product across workers, blinding every shard under its own key, and
//! unblinding and verifying what comes back. Keys are refreshed at every epoch
//! boundary and reused by all batches of the epoch.
//!
//! Tensor-parallel layers split `W` by rows and keep `X` whole; data-parallel
//! layers split `X` by columns and send all of `W` to every shard. In the
//! backward pass each shard blinds only `delta_j^T` (under the forward key
//! shifted by two) and the worker multiplies it against the operands it kept
//! from the forward pass:
//!
//! ```text
//! TP: x delta^T = [x delta_1^T | ... | x delta_N^T],  delta^T W = sum_j delta_j^T W_j
//! DP: x delta^T = sum_j x_j delta_j^T,  delta^T W = [delta_1^T W; ...; delta_N^T W]
//! ```

use std::collections::{HashMap, VecDeque};
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, EpochSummary, MatMulExecutor, Network, ParallelPolicy, TrainConfig};
use crate::obfuscate::{min_rounds, IntegrityConfig, KeySpace, SecretKey, Task, Verifier};
use crate::protocol::{self, Message, Mode, ReadError};
use crate::rng::Rng;
use crate::tensor::{shard_sizes, Axis, Matrix};

/// Per-layer distribution policy and worker budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub layers: Vec<ParallelPolicy>,
    pub n_workers: usize,
}

impl PartitionPlan {
    /// Number of shards for a layer with `out_dim` rows and a batch of
    /// `batch` columns. Zero for in-master layers.
    pub fn shards(&self, layer: usize, out_dim: usize, batch: usize) -> usize {
        match self.layers[layer] {
            ParallelPolicy::TensorParallel => self.n_workers.min(out_dim),
            ParallelPolicy::DataParallel => self.n_workers.min(batch),
            ParallelPolicy::InMaster => 0,
        }
    }
}

/// Uses each linear layer's configured policy (tensor-parallel unless set
/// otherwise) with `n_workers` workers.
pub fn plan_partition(net: &Network, n_workers: usize) -> Result<PartitionPlan> {
    if n_workers == 0 {
        return Err(Error::Config("at least one worker is required".into()));
    }
    Ok(PartitionPlan {
        layers: net.policies(),
        n_workers,
    })
}

/// Counters of the offload pipeline. All are monotone within a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OffloadStats {
    pub matrices_encrypted: u64,
    pub matrices_decrypted: u64,
    pub products_offloaded: u64,
    pub verification_rounds: u64,
    pub failures: u64,
}

/// How the backward pass blinds its operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    /// Blind `delta^T` once and reuse the forward operands held by workers.
    #[default]
    Reuse,
    /// Blind both backward products from scratch with fresh keys (four
    /// matrices). Kept as a reference point for encryption counts.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadConfig {
    pub key_space: KeySpace,
    pub verifier: Verifier,
    /// Blind the next layer's weights while waiting for this layer's results.
    pub pipelined: bool,
    pub backward: BackwardMode,
    /// Seeds key generation and verification vectors.
    pub seed: u64,
    /// Record an [`Event`] trace.
    pub trace: bool,
}

impl OffloadConfig {
    pub fn new(rounds: u32, seed: u64) -> Self {
        Self {
            key_space: KeySpace::default(),
            verifier: Verifier::new(rounds),
            pipelined: false,
            backward: BackwardMode::Reuse,
            seed,
            trace: false,
        }
    }
}

/// Ordering trace of the executor's work, for inspecting interleaving.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Both forward operands of a layer blinded in the critical path.
    EncryptPair { layer: usize },
    /// A layer's inputs blinded against weights blinded ahead of time.
    EncryptInput { layer: usize },
    /// Ahead-of-time blinding of a layer's weights started.
    PrefetchWeights { layer: usize },
    /// Backward operand(s) blinded.
    EncryptDelta { layer: usize },
    Send { layer: usize },
    Receive { layer: usize },
}

/// Outgoing-frame capture shared by all connections of a pool.
pub type FrameTap = Arc<Mutex<Vec<Message>>>;

struct Connection {
    addr: SocketAddr,
    writer: BufWriter<TcpStream>,
    incoming: Receiver<std::result::Result<Message, String>>,
    pending: VecDeque<u64>,
    next_tag: u64,
}

impl Connection {
    fn open(addr: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let (tx, incoming) = mpsc::channel();
        thread::spawn(move || loop {
            let item = match protocol::read_message(&mut reader) {
                Ok(Some(msg)) => Ok(msg),
                Ok(None) => Err("connection closed".to_string()),
                Err(ReadError::Io(e)) => Err(e.to_string()),
                Err(ReadError::Decode(e)) => Err(e.to_string()),
            };
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                return;
            }
        });
        Ok(Self {
            addr,
            writer: BufWriter::new(stream),
            incoming,
            pending: VecDeque::new(),
            next_tag: 0,
        })
    }
}

/// Connections to the workers. Shard `j` of every layer runs on worker `j`.
pub struct WorkerPool {
    conns: Vec<Connection>,
    tap: Option<FrameTap>,
}

impl WorkerPool {
    /// Connects to every address and performs the `HELLO` exchange.
    pub fn connect<A: ToSocketAddrs>(addrs: &[A]) -> Result<Self> {
        if addrs.is_empty() {
            return Err(Error::Config("no worker addresses".into()));
        }
        let mut conns = Vec::with_capacity(addrs.len());
        for a in addrs {
            let addr = a
                .to_socket_addrs()?
                .next()
                .ok_or_else(|| Error::Config("worker address resolves to nothing".into()))?;
            conns.push(Connection::open(addr)?);
        }
        let mut pool = Self { conns, tap: None };
        for w in 0..pool.len() {
            pool.send(w, Message::Hello { worker_id: w as u32 })?;
            match pool.next_message(w)? {
                Message::Hello { worker_id } if worker_id == w as u32 => {}
                other => {
                    return Err(Error::Unexpected {
                        worker: w,
                        detail: format!("expected HELLO, got {other:?}"),
                    })
                }
            }
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.conns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conns.is_empty()
    }

    pub fn addrs(&self) -> Vec<SocketAddr> {
        self.conns.iter().map(|c| c.addr).collect()
    }

    /// Records a copy of every message sent from now on.
    pub fn set_tap(&mut self, tap: FrameTap) {
        self.tap = Some(tap);
    }

    /// Sends `CONFIG` to every worker.
    pub fn configure(&mut self, n_layers: usize, mode: Mode) -> Result<()> {
        for w in 0..self.len() {
            self.send(
                w,
                Message::Config {
                    n_layers: n_layers as u32,
                    mode: mode.clone(),
                },
            )?;
        }
        Ok(())
    }

    fn send(&mut self, worker: usize, msg: Message) -> Result<()> {
        if let Some(tap) = &self.tap {
            tap.lock().expect("tap lock").push(msg.clone());
        }
        let conn = &mut self.conns[worker];
        if matches!(
            msg,
            Message::StorePair { .. } | Message::MultFwd { .. } | Message::MultBwd { .. }
        ) {
            conn.pending.push_back(conn.next_tag);
            conn.next_tag += 1;
        }
        protocol::write_message(&mut conn.writer, &msg)?;
        Ok(())
    }

    fn next_message(&mut self, worker: usize) -> Result<Message> {
        let conn = &mut self.conns[worker];
        match conn.incoming.recv() {
            Ok(Ok(msg)) => Ok(msg),
            Ok(Err(detail)) => Err(Error::Unexpected { worker, detail }),
            Err(_) => Err(Error::Unexpected {
                worker,
                detail: "connection closed".into(),
            }),
        }
    }

    /// Receives the response to the oldest outstanding request of `worker`.
    fn receive(&mut self, worker: usize) -> Result<Vec<Matrix>> {
        let expected = self.conns[worker]
            .pending
            .pop_front()
            .ok_or_else(|| Error::Unexpected {
                worker,
                detail: "no request outstanding".into(),
            })?;
        match self.next_message(worker)? {
            Message::Result {
                request_tag,
                matrices,
            } if request_tag == expected => Ok(matrices),
            Message::Result { request_tag, .. } => Err(Error::Unexpected {
                worker,
                detail: format!("result tag {request_tag}, expected {expected}"),
            }),
            Message::Error { code, text } => Err(Error::Remote { worker, code, text }),
            other => Err(Error::Unexpected {
                worker,
                detail: format!("{other:?}"),
            }),
        }
    }

    fn receive_n(&mut self, worker: usize, n: usize) -> Result<Vec<Matrix>> {
        let matrices = self.receive(worker)?;
        if matrices.len() != n {
            return Err(Error::Unexpected {
                worker,
                detail: format!("expected {n} result matrices, got {}", matrices.len()),
            });
        }
        Ok(matrices)
    }
}

/// Keys of the current epoch, one per `(layer, shard, operand shape)`.
#[derive(Debug, Default)]
pub struct EpochKeys {
    keys: HashMap<(usize, usize, (usize, usize, usize)), SecretKey>,
}

impl EpochKeys {
    fn get_or_generate(
        &mut self,
        layer: usize,
        shard: usize,
        dims: (usize, usize, usize),
        key_space: KeySpace,
        rng: &mut Rng,
    ) -> SecretKey {
        self.keys
            .entry((layer, shard, dims))
            .or_insert_with(|| SecretKey::generate(dims.0, dims.1, dims.2, key_space, rng))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn clear(&mut self) {
        self.keys.clear();
    }
}

/// One shard's plaintext operands and key, kept from forward to backward.
struct Shard {
    key: SecretKey,
    weight: Matrix,
    input: Matrix,
}

enum Retained {
    Local { weight: Matrix, input: Matrix },
    Offloaded { policy: ParallelPolicy, shards: Vec<Shard> },
}

/// Weights of a layer blinded ahead of time, with the keys used.
struct Prefetched {
    layer: usize,
    keys: Vec<SecretKey>,
    blinded: Vec<Matrix>,
}

/// [`MatMulExecutor`] that offloads blinded products to a [`WorkerPool`].
pub struct OffloadExecutor<'p> {
    pool: &'p mut WorkerPool,
    plan: PartitionPlan,
    config: OffloadConfig,
    keys: EpochKeys,
    key_rng: Rng,
    verify_rng: Rng,
    retained: Vec<Option<Retained>>,
    prefetched: Option<Prefetched>,
    stats: OffloadStats,
    events: Vec<Event>,
}

impl<'p> OffloadExecutor<'p> {
    pub fn new(pool: &'p mut WorkerPool, plan: PartitionPlan, config: OffloadConfig) -> Result<Self> {
        if plan.n_workers > pool.len() {
            return Err(Error::Config(format!(
                "plan uses {} workers but the pool has {}",
                plan.n_workers,
                pool.len()
            )));
        }
        let mut root = Rng::new(config.seed);
        let key_rng = root.fork();
        let verify_rng = root.fork();
        Ok(Self {
            pool,
            plan,
            config,
            keys: EpochKeys::default(),
            key_rng,
            verify_rng,
            retained: Vec::new(),
            prefetched: None,
            stats: OffloadStats::default(),
            events: Vec::new(),
        })
    }

    pub fn stats(&self) -> OffloadStats {
        self.stats
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    fn event(&mut self, e: Event) {
        if self.config.trace {
            self.events.push(e);
        }
    }

    /// Shapes and keys of a layer's shards for weight `m x n` and batch `p`.
    fn shard_keys(&mut self, layer: usize, m: usize, n: usize, p: usize) -> Vec<SecretKey> {
        let policy = self.plan.layers[layer];
        let count = self.plan.shards(layer, m, p);
        let dims: Vec<(usize, usize, usize)> = match policy {
            ParallelPolicy::TensorParallel => shard_sizes(m, count)
                .expect("shard count within bounds")
                .into_iter()
                .map(|mj| (mj, n, p))
                .collect(),
            ParallelPolicy::DataParallel => shard_sizes(p, count)
                .expect("shard count within bounds")
                .into_iter()
                .map(|pj| (m, n, pj))
                .collect(),
            ParallelPolicy::InMaster => Vec::new(),
        };
        dims.into_iter()
            .enumerate()
            .map(|(j, d)| {
                self.keys
                    .get_or_generate(layer, j, d, self.config.key_space, &mut self.key_rng)
            })
            .collect()
    }

    fn weight_shards(policy: ParallelPolicy, weight: &Matrix, count: usize) -> Result<Vec<Matrix>> {
        Ok(match policy {
            ParallelPolicy::TensorParallel => weight.split(Axis::Rows, count)?,
            _ => vec![weight.clone(); count],
        })
    }

    fn unblind(&mut self, key: &SecretKey, c_enc: &Matrix, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        self.stats.matrices_decrypted += 1;
        match key.dec(c_enc, a, b, self.config.verifier, &mut self.verify_rng) {
            Ok(c) => {
                self.stats.verification_rounds += u64::from(self.config.verifier.rounds);
                Ok(c)
            }
            Err(e) => {
                let e = Error::from(e);
                if let Error::Integrity(f) = &e {
                    self.stats.verification_rounds += u64::from(f.round) + 1;
                    self.stats.failures += 1;
                }
                Err(e)
            }
        }
    }

    fn retain(&mut self, layer: usize, r: Retained) {
        if self.retained.len() <= layer {
            self.retained.resize_with(layer + 1, || None);
        }
        self.retained[layer] = Some(r);
    }

    /// Offloads `weight * input` for one layer.
    pub fn offload_forward_layer(
        &mut self,
        layer: usize,
        weight: &Matrix,
        input: &Matrix,
        lookahead: Option<&Matrix>,
    ) -> Result<Matrix> {
        if weight.cols() != input.rows() {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "offload_forward_layer",
                left: weight.shape(),
                right: input.shape(),
            }
            .into());
        }
        let policy = self.plan.layers[layer];
        let (m, n, p) = (weight.rows(), weight.cols(), input.cols());
        if policy == ParallelPolicy::InMaster {
            self.retain(
                layer,
                Retained::Local {
                    weight: weight.clone(),
                    input: input.clone(),
                },
            );
            return Ok(weight.matmul(input)?);
        }

        let keys = self.shard_keys(layer, m, n, p);
        let count = keys.len();
        let weights = Self::weight_shards(policy, weight, count)?;
        let inputs = match policy {
            ParallelPolicy::DataParallel => input.split(Axis::Cols, count)?,
            _ => vec![input.clone(); count],
        };

        let prefetched = match self.prefetched.take() {
            Some(pf) if pf.layer == layer && pf.keys == keys => Some(pf.blinded),
            _ => None,
        };
        let mut blinded = Vec::with_capacity(count);
        match prefetched {
            Some(w_enc) => {
                self.event(Event::EncryptInput { layer });
                for ((key, x), w) in keys.iter().zip(&inputs).zip(w_enc) {
                    blinded.push((w, key.enc_right(x)?));
                    self.stats.matrices_encrypted += 1;
                }
            }
            None => {
                self.event(Event::EncryptPair { layer });
                for ((key, w), x) in keys.iter().zip(&weights).zip(&inputs) {
                    blinded.push(key.enc_pair(w, x)?);
                    self.stats.matrices_encrypted += 2;
                }
            }
        }

        self.event(Event::Send { layer });
        for (j, (w_enc, x_enc)) in blinded.into_iter().enumerate() {
            self.pool.send(
                j,
                Message::StorePair {
                    layer_id: layer as u32,
                    shard_id: j as u32,
                    a_enc: w_enc,
                    b_enc: x_enc,
                },
            )?;
            self.pool.send(
                j,
                Message::MultFwd {
                    layer_id: layer as u32,
                    shard_id: j as u32,
                },
            )?;
        }

        // Blind the next layer's weights while the workers compute.
        let next = match lookahead {
            Some(w_next) if self.config.pipelined && layer + 1 < self.plan.layers.len() => {
                let next_policy = self.plan.layers[layer + 1];
                if next_policy == ParallelPolicy::InMaster || w_next.cols() != m {
                    None
                } else {
                    let next_keys = self.shard_keys(layer + 1, w_next.rows(), w_next.cols(), p);
                    let next_weights = Self::weight_shards(next_policy, w_next, next_keys.len())?;
                    self.event(Event::PrefetchWeights { layer: layer + 1 });
                    Some((next_keys, next_weights))
                }
            }
            _ => None,
        };

        let (replies, prefetched) = thread::scope(|s| {
            let job = next.map(|(keys, weights)| {
                s.spawn(move || {
                    let blinded = keys
                        .iter()
                        .zip(&weights)
                        .map(|(k, w)| k.enc_left(w))
                        .collect::<std::result::Result<Vec<_>, _>>();
                    (keys, blinded)
                })
            });
            let replies = (0..count)
                .map(|j| {
                    self.pool.receive_n(j, 0)?;
                    Ok(self.pool.receive_n(j, 1)?.remove(0))
                })
                .collect::<Result<Vec<Matrix>>>();
            let prefetched = job.map(|h| h.join().expect("prefetch thread panicked"));
            (replies, prefetched)
        });
        if let Some((keys, blinded)) = prefetched {
            let blinded = blinded?;
            self.stats.matrices_encrypted += blinded.len() as u64;
            self.prefetched = Some(Prefetched {
                layer: layer + 1,
                keys,
                blinded,
            });
        }
        let replies = replies?;
        self.event(Event::Receive { layer });
        self.stats.products_offloaded += count as u64;

        let mut outputs = Vec::with_capacity(count);
        let mut shards = Vec::with_capacity(count);
        for (((key, w), x), z_enc) in keys.into_iter().zip(weights).zip(inputs).zip(&replies) {
            outputs.push(self.unblind(&key, z_enc, &w, &x)?);
            shards.push(Shard {
                key,
                weight: w,
                input: x,
            });
        }
        self.retain(layer, Retained::Offloaded { policy, shards });
        Ok(match policy {
            ParallelPolicy::DataParallel => Matrix::concat(&outputs, Axis::Cols)?,
            _ => Matrix::concat(&outputs, Axis::Rows)?,
        })
    }

    /// Offloads `(x delta^T, delta^T W)` for a layer whose forward product was
    /// the most recent one offloaded for that layer.
    pub fn offload_backward_layer(&mut self, layer: usize, delta: &Matrix) -> Result<(Matrix, Matrix)> {
        let retained = self
            .retained
            .get_mut(layer)
            .and_then(Option::take)
            .ok_or_else(|| Error::Network(format!("no forward pass retained for layer {layer}")))?;
        let (policy, shards) = match retained {
            Retained::Local { weight, input } => {
                let dt = delta.transpose();
                return Ok((input.matmul(&dt)?, dt.matmul(&weight)?));
            }
            Retained::Offloaded { policy, shards } => (policy, shards),
        };
        let (m_total, p_total) = match policy {
            ParallelPolicy::TensorParallel => (
                shards.iter().map(|s| s.weight.rows()).sum(),
                shards[0].input.cols(),
            ),
            _ => (
                shards[0].weight.rows(),
                shards.iter().map(|s| s.input.cols()).sum(),
            ),
        };
        if delta.shape() != (m_total, p_total) {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "offload_backward_layer",
                left: (m_total, p_total),
                right: delta.shape(),
            }
            .into());
        }
        let delta_parts = match policy {
            ParallelPolicy::TensorParallel => delta.split(Axis::Rows, shards.len())?,
            _ => delta.split(Axis::Cols, shards.len())?,
        };
        let deltas_t: Vec<Matrix> = delta_parts.iter().map(Matrix::transpose).collect();

        let pairs = match self.config.backward {
            BackwardMode::Reuse => self.backward_reuse(layer, &shards, &deltas_t)?,
            BackwardMode::Naive => self.backward_naive(layer, &shards, &delta_parts, &deltas_t)?,
        };
        let (t1s, t2s): (Vec<Matrix>, Vec<Matrix>) = pairs.into_iter().unzip();
        Ok(match policy {
            ParallelPolicy::TensorParallel => {
                (Matrix::concat(&t1s, Axis::Cols)?, Matrix::sum_all(&t2s)?)
            }
            _ => (Matrix::sum_all(&t1s)?, Matrix::concat(&t2s, Axis::Rows)?),
        })
    }

    fn backward_reuse(
        &mut self,
        layer: usize,
        shards: &[Shard],
        deltas_t: &[Matrix],
    ) -> Result<Vec<(Matrix, Matrix)>> {
        self.event(Event::EncryptDelta { layer });
        let mut blinded = Vec::with_capacity(shards.len());
        for (shard, dt) in shards.iter().zip(deltas_t) {
            blinded.push(shard.key.shift(2).enc_left(dt)?);
            self.stats.matrices_encrypted += 1;
        }
        self.event(Event::Send { layer });
        for (j, d_enc) in blinded.into_iter().enumerate() {
            self.pool.send(
                j,
                Message::MultBwd {
                    layer_id: layer as u32,
                    shard_id: j as u32,
                    d_enc,
                },
            )?;
        }
        let replies = (0..shards.len())
            .map(|j| self.pool.receive_n(j, 2))
            .collect::<Result<Vec<_>>>()?;
        self.event(Event::Receive { layer });
        self.stats.products_offloaded += 2 * shards.len() as u64;

        let mut out = Vec::with_capacity(shards.len());
        for ((shard, dt), reply) in shards.iter().zip(deltas_t).zip(&replies) {
            let t1 = self.unblind(&shard.key.shift(1), &reply[0], &shard.input, dt)?;
            let t2 = self.unblind(&shard.key.shift(2), &reply[1], dt, &shard.weight)?;
            out.push((t1, t2));
        }
        Ok(out)
    }

    fn backward_naive(
        &mut self,
        layer: usize,
        shards: &[Shard],
        deltas: &[Matrix],
        deltas_t: &[Matrix],
    ) -> Result<Vec<(Matrix, Matrix)>> {
        self.event(Event::EncryptDelta { layer });
        let ks = self.config.key_space;
        let mut jobs = Vec::with_capacity(shards.len());
        for (shard, d) in shards.iter().zip(deltas) {
            let x_t = shard.input.transpose();
            let w_t = shard.weight.transpose();
            let (m, n, p) = (d.rows(), x_t.cols(), d.cols());
            // delta X^T and W^T delta, each under a fresh key.
            let k1 = SecretKey::generate(m, p, n, ks, &mut self.key_rng);
            let k2 = SecretKey::generate(n, m, p, ks, &mut self.key_rng);
            let first = k1.enc_pair(d, &x_t)?;
            let second = k2.enc_pair(&w_t, d)?;
            self.stats.matrices_encrypted += 4;
            jobs.push(((k1, x_t, first), (k2, w_t, second)));
        }
        self.event(Event::Send { layer });
        for (j, ((_, _, (a1, b1)), (_, _, (a2, b2)))) in jobs.iter().enumerate() {
            for (a, b) in [(a1, b1), (a2, b2)] {
                self.pool.send(
                    j,
                    Message::StorePair {
                        layer_id: layer as u32,
                        shard_id: j as u32,
                        a_enc: a.clone(),
                        b_enc: b.clone(),
                    },
                )?;
                self.pool.send(
                    j,
                    Message::MultFwd {
                        layer_id: layer as u32,
                        shard_id: j as u32,
                    },
                )?;
            }
        }
        let mut replies = Vec::with_capacity(shards.len());
        for j in 0..shards.len() {
            let mut products = Vec::with_capacity(2);
            for _ in 0..2 {
                self.pool.receive_n(j, 0)?;
                products.push(self.pool.receive_n(j, 1)?.remove(0));
            }
            replies.push(products);
        }
        self.event(Event::Receive { layer });
        self.stats.products_offloaded += 2 * shards.len() as u64;

        let mut out = Vec::with_capacity(shards.len());
        for (((d, dt), ((k1, x_t, _), (k2, w_t, _))), reply) in
            deltas.iter().zip(deltas_t).zip(&jobs).zip(&replies)
        {
            let dxt = self.unblind(k1, &reply[0], d, x_t)?;
            let wtd = self.unblind(k2, &reply[1], w_t, d)?;
            debug_assert_eq!(wtd.cols(), dt.rows());
            out.push((dxt.transpose(), wtd.transpose()));
        }
        Ok(out)
    }
}

impl MatMulExecutor for OffloadExecutor<'_> {
    fn begin_epoch(&mut self, _epoch: usize) -> Result<()> {
        self.keys.clear();
        self.prefetched = None;
        Ok(())
    }

    fn multiply_forward(
        &mut self,
        layer: usize,
        weight: &Matrix,
        input: &Matrix,
        lookahead: Option<&Matrix>,
    ) -> Result<Matrix> {
        self.offload_forward_layer(layer, weight, input, lookahead)
    }

    fn multiply_backward(&mut self, layer: usize, delta: &Matrix) -> Result<(Matrix, Matrix)> {
        self.offload_backward_layer(layer, delta)
    }
}

/// Freivalds rounds for a training run at failure tolerance `t`.
pub fn training_rounds(t: f64, n_workers: usize, net: &Network, data_len: usize, cfg: &TrainConfig) -> Result<u32> {
    Ok(min_rounds(&IntegrityConfig {
        t,
        task: Task::Training {
            epochs: cfg.epochs.max(1) as u64,
            dataset_size: data_len as u64,
            batch_size: cfg.batch_size as u64,
        },
        n_workers: n_workers as u64,
        n_layers: net.n_linear() as u64,
    })?)
}

/// Freivalds rounds for an inference pass at failure tolerance `t`.
pub fn inference_rounds(t: f64, n_workers: usize, net: &Network) -> Result<u32> {
    Ok(min_rounds(&IntegrityConfig {
        t,
        task: Task::Inference,
        n_workers: n_workers as u64,
        n_layers: net.n_linear() as u64,
    })?)
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub epochs: Vec<EpochSummary>,
    pub stats: OffloadStats,
}

/// Distributed training: per epoch, keys are refreshed; per batch, the
/// forward pass runs layer by layer through the workers, then the backward
/// pass runs from the last layer down. Any failed verification aborts the
/// run.
pub fn run_training(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    pool: &mut WorkerPool,
    plan: PartitionPlan,
    offload: OffloadConfig,
) -> Result<TrainingOutcome> {
    run_training_with(net, data, cfg, pool, plan, offload, |_, _| {})
}

pub fn run_training_with(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    pool: &mut WorkerPool,
    plan: PartitionPlan,
    offload: OffloadConfig,
    on_epoch: impl FnMut(&EpochSummary, &Network),
) -> Result<TrainingOutcome> {
    pool.configure(net.n_linear(), Mode::Training)?;
    let mut exec = OffloadExecutor::new(pool, plan, offload)?;
    let epochs = nn::train_with(net, data, cfg, &mut exec, on_epoch);
    let stats = exec.stats();
    if let Err(e) = &epochs {
        log::warn!("training aborted: {e}");
    }
    Ok(TrainingOutcome {
        epochs: epochs?,
        stats,
    })
}

/// Forward-only pass through the workers; returns the predicted class of
/// each column.
pub fn run_inference(
    net: &Network,
    input: &Matrix,
    pool: &mut WorkerPool,
    plan: PartitionPlan,
    offload: OffloadConfig,
) -> Result<(Vec<usize>, OffloadStats)> {
    pool.configure(net.n_linear(), Mode::Inference)?;
    let mut exec = OffloadExecutor::new(pool, plan, offload)?;
    let predictions = nn::predict(net, input, &mut exec)?;
    Ok((predictions, exec.stats()))
}

/// Starts `modes.len()` loopback workers and connects a pool to them.
pub fn local_pool(modes: &[crate::worker::WorkerMode], seed: u64) -> Result<WorkerPool> {
    let addrs = modes
        .iter()
        .enumerate()
        .map(|(i, mode)| Ok(crate::worker::spawn_local(*mode, seed.wrapping_add(i as u64))?.addr))
        .collect::<Result<Vec<_>>>()?;
    WorkerPool::connect(&addrs)
}
