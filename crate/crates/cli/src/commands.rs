use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blindtrain::dataset::Dataset;
use blindtrain::master::{
    inference_rounds, local_pool, plan_partition, run_inference, training_rounds, OffloadConfig,
    OffloadExecutor, OffloadStats, WorkerPool,
};
use blindtrain::nn::{self, EpochSummary, LocalExecutor, MatMulExecutor, Network};
use blindtrain::obfuscate::{min_rounds, IntegrityConfig, Task};
use blindtrain::privacy::{privacy_score, smooth_field, BlindScheme};
use blindtrain::protocol::Mode;
use blindtrain::worker::{self, WorkerMode};
use blindtrain::{KeySpace, Matrix, Rng, Verifier};
use serde::Serialize;

use crate::config::{ExecutorMode, RunConfig};
use crate::data::read_csv;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub matrices_encrypted: u64,
    pub matrices_decrypted: u64,
    pub products_offloaded: u64,
    pub verification_rounds: u64,
    pub failures: u64,
}

impl From<OffloadStats> for StatsReport {
    fn from(s: OffloadStats) -> Self {
        Self {
            matrices_encrypted: s.matrices_encrypted,
            matrices_decrypted: s.matrices_decrypted,
            products_offloaded: s.products_offloaded,
            verification_rounds: s.verification_rounds,
            failures: s.failures,
        }
    }
}

/// Outcome of a training run. Only `epochs[].wall_clock_secs` depends on
/// timing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub executor: ExecutorMode,
    pub n_workers: usize,
    pub rounds: Option<u32>,
    pub final_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub epochs: Vec<EpochReport>,
    pub stats: Option<StatsReport>,
    pub aborted: Option<String>,
}

/// Where the workers for an offloaded run come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerSource {
    Remote(Vec<String>),
    Local(usize),
}

impl WorkerSource {
    pub fn from_flags(workers: Option<&str>, local: Option<usize>) -> Result<Option<Self>> {
        Ok(match (workers, local) {
            (Some(_), Some(_)) => bail!("--workers and --local-workers are exclusive"),
            (Some(list), None) => Some(WorkerSource::Remote(
                list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            )),
            (None, Some(n)) => Some(WorkerSource::Local(n)),
            (None, None) => None,
        })
    }

    fn connect(&self, seed: u64) -> Result<WorkerPool> {
        Ok(match self {
            WorkerSource::Remote(addrs) => {
                WorkerPool::connect(addrs).with_context(|| format!("cannot connect to workers {addrs:?}"))?
            }
            WorkerSource::Local(n) => {
                if *n == 0 {
                    bail!("need at least one local worker");
                }
                local_pool(&vec![WorkerMode::Honest; *n], seed)?
            }
        })
    }
}

fn write_output(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, format!("{text}\n")).with_context(|| format!("cannot write {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub workers: Option<WorkerSource>,
    pub force_local: bool,
    pub model_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
}

/// Loads and validates the config, trains, and writes the report and model.
pub fn train(args: TrainArgs) -> Result<Report> {
    let mut cfg = RunConfig::load(&args.config)?;
    match &args.workers {
        Some(WorkerSource::Remote(addrs)) => {
            cfg.workers = addrs.clone();
            cfg.local_workers = None;
        }
        Some(WorkerSource::Local(n)) => {
            cfg.workers.clear();
            cfg.local_workers = Some(*n);
        }
        None => {}
    }
    if args.force_local {
        cfg.executor = ExecutorMode::Local;
    }
    cfg.validate()?;
    let (data, standardization) = cfg.dataset()?;
    let mut net = cfg.network()?;
    let (report, trained) = train_network(&cfg, &data, &mut net)?;
    write_output(&serde_json::to_string_pretty(&report)?, args.report_out.as_deref())?;
    if let Some(reason) = &report.aborted {
        bail!("training aborted: {reason}");
    }
    if let Some(path) = &args.model_out {
        Model {
            network: trained,
            standardization,
        }
        .save(path)?;
    }
    Ok(report)
}

fn train_network(cfg: &RunConfig, data: &Dataset, net: &mut Network) -> Result<(Report, Network)> {
    let train_cfg = cfg.train_config();
    let mut epochs = Vec::new();
    let record = |s: &EpochSummary, _: &Network| {
        epochs.push(EpochReport {
            epoch: s.epoch,
            mean_loss: s.mean_loss,
            wall_clock_secs: s.wall_clock.as_secs_f64(),
        })
    };
    let (result, stats, rounds, n_workers) = match cfg.executor {
        ExecutorMode::Local => (nn::train_with(net, data, &train_cfg, &mut LocalExecutor::new(), record), None, None, 0),
        ExecutorMode::Offload => {
            let source = if cfg.workers.is_empty() {
                WorkerSource::Local(cfg.local_workers.unwrap_or(1))
            } else {
                WorkerSource::Remote(cfg.workers.clone())
            };
            let mut pool = source.connect(cfg.seed)?;
            let n_workers = pool.len();
            let rounds = match cfg.rounds {
                Some(k) => k,
                None => training_rounds(cfg.t, n_workers, net, data.len(), &train_cfg)?,
            };
            log::info!("{n_workers} workers, {rounds} verification rounds per product");
            let plan = plan_partition(net, n_workers)?;
            let offload = OffloadConfig {
                key_space: KeySpace::new(cfg.key_space)?,
                verifier: Verifier::new(rounds),
                pipelined: cfg.pipelined,
                backward: cfg.backward.into(),
                seed: cfg.offload_seed(),
                trace: false,
            };
            pool.configure(net.n_linear(), Mode::Training)?;
            let mut exec = OffloadExecutor::new(&mut pool, plan, offload)?;
            let result = nn::train_with(net, data, &train_cfg, &mut exec, record);
            (result, Some(exec.stats().into()), Some(rounds), n_workers)
        }
    };
    let aborted = match result {
        Ok(_) => None,
        Err(e) if e.is_integrity_failure() => Some(e.to_string()),
        Err(e) => return Err(e.into()),
    };
    let accuracy = if aborted.is_none() {
        Some(nn::accuracy(net, data, &mut LocalExecutor::new())?)
    } else {
        None
    };
    let report = Report {
        executor: cfg.executor,
        n_workers,
        rounds,
        final_loss: epochs.last().map(|e| e.mean_loss),
        accuracy,
        epochs,
        stats,
        aborted,
    };
    Ok((report, net.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferReport {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub rounds: Option<u32>,
    pub stats: Option<StatsReport>,
}

pub fn infer(model: &Path, input: &Path, workers: Option<WorkerSource>, t: f64, seed: u64) -> Result<InferReport> {
    let model = Model::load(model)?;
    let raw = read_csv(input)?;
    let features = match &model.standardization {
        Some(std) => std.apply(&raw.rows)?,
        None => Matrix::from_fn(raw.rows[0].len(), raw.rows.len(), |d, s| raw.rows[s][d]),
    };
    if features.rows() != model.network.input_dim() {
        bail!(
            "{} has {} features, the model takes {}",
            input.display(),
            features.rows(),
            model.network.input_dim()
        );
    }
    let (predictions, rounds, stats) = match workers {
        None => (nn::predict(&model.network, &features, &mut LocalExecutor::new())?, None, None),
        Some(source) => {
            let mut pool = source.connect(seed)?;
            let rounds = inference_rounds(t, pool.len(), &model.network)?;
            let plan = plan_partition(&model.network, pool.len())?;
            let (pred, stats) = run_inference(&model.network, &features, &mut pool, plan, OffloadConfig::new(rounds, seed))?;
            (pred, Some(rounds), Some(stats.into()))
        }
    };
    let correct = predictions.iter().zip(&raw.labels).filter(|(p, l)| p == l).count();
    Ok(InferReport {
        accuracy: correct as f64 / raw.labels.len() as f64,
        predictions,
        rounds,
        stats,
    })
}

pub fn min_k(t: f64, n_workers: u64, n_layers: u64, training: Option<(u64, u64, u64)>) -> Result<u32> {
    let task = match training {
        Some((epochs, dataset_size, batch_size)) => Task::Training {
            epochs,
            dataset_size,
            batch_size,
        },
        None => Task::Inference,
    };
    Ok(min_rounds(&IntegrityConfig {
        t,
        task,
        n_workers,
        n_layers,
    })?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub k: u32,
    pub trials: usize,
    pub detected: usize,
    pub rate: f64,
    /// `1 - 2^-k`, the guaranteed detection rate for any wrong result.
    pub bound: f64,
}

/// Offloads `trials` random products to one misbehaving loopback worker for
/// each `k` and counts how often verification catches it. Keys are refreshed
/// before every trial.
pub fn verify_experiment(ks: &[u32], trials: usize, mode: WorkerMode, dim: usize, seed: u64) -> Result<Vec<DetectionRow>> {
    if let Err(e) = mode.validate() {
        bail!(e);
    }
    if dim == 0 || trials == 0 {
        bail!("dimension and trial count must be positive");
    }
    let mut rows = Vec::new();
    for &k in ks {
        if k == 0 {
            bail!("k must be positive");
        }
        let mut pool = local_pool(&[mode], seed)?;
        let plan = blindtrain::master::PartitionPlan {
            layers: vec![nn::ParallelPolicy::TensorParallel],
            n_workers: 1,
        };
        let mut exec = OffloadExecutor::new(&mut pool, plan, OffloadConfig::new(k, seed))?;
        let mut rng = Rng::new(seed.wrapping_add(u64::from(k)));
        let mut detected = 0;
        for trial in 0..trials {
            exec.begin_epoch(trial)?;
            let w = Matrix::random_normal(dim, dim, &mut rng);
            let x = Matrix::random_normal(dim, dim, &mut rng);
            match exec.offload_forward_layer(0, &w, &x, None) {
                Ok(_) => {}
                Err(e) if e.is_integrity_failure() => detected += 1,
                Err(e) => return Err(e.into()),
            }
        }
        rows.push(DetectionRow {
            k,
            trials,
            detected,
            rate: detected as f64 / trials as f64,
            bound: 1.0 - 0.5f64.powi(k as i32),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiRow {
    pub scheme: &'static str,
    pub key_space: u64,
    pub privacy: f64,
}

/// Privacy score of every scheme on one smooth `size x size` field per key
/// space. The scalar multiplier is drawn from the key space.
pub fn mi_eval(key_spaces: &[u64], size: usize, bins: usize, seed: u64) -> Result<Vec<MiRow>> {
    if size == 0 {
        bail!("field size must be positive");
    }
    let field = smooth_field(size, size, 4, seed);
    let mut rows = Vec::new();
    for &ks in key_spaces {
        let key_space = KeySpace::new(ks)?;
        let mut rng = Rng::new(seed.wrapping_add(ks));
        let mu = rng.int_inclusive(1, ks) as f64;
        for scheme in [
            BlindScheme::Identity,
            BlindScheme::ScalarMult { mu },
            BlindScheme::AddRandom { seed: seed.wrapping_add(1) },
            BlindScheme::EncNoPerm,
            BlindScheme::EncFull,
        ] {
            rows.push(MiRow {
                scheme: scheme.name(),
                key_space: ks,
                privacy: privacy_score(scheme, &field, key_space, bins, &mut rng)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Binds, announces the bound address on stdout, and serves forever.
pub fn run_worker(listen: &str, mode: WorkerMode, seed: u64) -> Result<()> {
    if let Err(e) = mode.validate() {
        bail!(e);
    }
    let listener = TcpListener::bind(listen).with_context(|| format!("cannot listen on {listen}"))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    worker::serve(listener, mode, seed)?;
    Ok(())
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| anyhow::anyhow!("bad list entry {p:?}")))
        .collect()
}
