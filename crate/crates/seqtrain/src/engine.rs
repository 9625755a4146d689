//! Training loop, evaluation, checkpointing, and activation forwarding.
//!
//! Training iterates seeded-shuffled chunk batches: forward, loss, backward,
//! gradient conditioning, parameter update. Evaluation and forwarding process
//! whole sequences (no chunking, dropout off). Every per-epoch random stream
//! is derived from (seed, epoch, worker), so a fixed seed with one worker
//! replays bit-identically and checkpoint resume continues exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::config::{
    parse_network, ExperimentConfig, OptimizerConfig, ScheduleMetric, UpdateRule,
};
use crate::data::{
    assemble_batch, assemble_whole_batches, chunk_sequences, make_batches, open_dataset, Chunk,
    Dataset, TargetKind,
};
use crate::error::{Error, Result};
use crate::net::{build_network, Mode, Network};
use crate::optim::{
    apply_max_row_norm, apply_update, condition_gradients, ConditionOpts, LrSchedule,
    OptimizerState,
};
use crate::params::{decode_tensors, encode_tensors, ParamSet};
use crate::rng::{derive_seed, name_tag, new_rng, Rng};
use crate::tensor::{SeqTensor, Tensor};

pub const RTNM_MAGIC: &[u8; 4] = b"RTNM";
pub const RTNM_VERSION: u8 = 1;
pub const RTNA_MAGIC: &[u8; 4] = b"RTNA";
pub const RTNA_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verbosity {
    Info,
    Debug,
}

/// Writes log lines to standard output and, when configured, a log file.
pub struct Logger {
    level: Verbosity,
    file: Option<Mutex<File>>,
    quiet: bool,
}

impl Logger {
    pub fn new(level: Verbosity, log_path: Option<&Path>) -> Result<Logger> {
        let file = match log_path {
            Some(p) => Some(Mutex::new(
                File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?,
            )),
            None => None,
        };
        Ok(Logger {
            level,
            file,
            quiet: false,
        })
    }

    /// Logger that writes nowhere; used by tests.
    pub fn quiet() -> Logger {
        Logger {
            level: Verbosity::Info,
            file: None,
            quiet: true,
        }
    }

    fn write(&self, line: &str) {
        if !self.quiet {
            println!("{}", line);
        }
        if let Some(f) = &self.file {
            let mut f = f.lock().unwrap();
            let _ = writeln!(f, "{}", line);
        }
    }

    pub fn info(&self, line: &str) {
        self.write(line);
    }

    pub fn debug(&self, line: &str) {
        if self.level == Verbosity::Debug {
            self.write(line);
        }
    }
}

/// Accumulated counters of a batch run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub loss_sum: f64,
    pub ce_frames: u64,
    pub ce_errors: u64,
    pub frames: u64,
    pub batches: u64,
}

impl RunStats {
    pub fn merge(&mut self, other: &RunStats) {
        self.loss_sum += other.loss_sum;
        self.ce_frames += other.ce_frames;
        self.ce_errors += other.ce_errors;
        self.frames += other.frames;
        self.batches += other.batches;
    }

    pub fn fer(&self) -> f64 {
        if self.ce_frames == 0 {
            0.0
        } else {
            self.ce_errors as f64 / self.ce_frames as f64
        }
    }

    pub fn mean_ce(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.loss_sum / self.frames as f64
        }
    }
}

/// Everything that evolves across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: OptimizerState,
    pub schedule: LrSchedule,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig) -> TrainState {
        TrainState {
            epoch: 0,
            optimizer: OptimizerState::new(cfg.optimizer.clone()),
            schedule: LrSchedule::new(cfg.lr_decay, cfg.min_relative_improvement),
        }
    }

    pub fn best_dev_score(&self) -> Option<f64> {
        self.schedule.best_score
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: RunStats,
    pub dev: Option<RunStats>,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Per-epoch shuffle seed: (config seed, epoch) hashed.
pub fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, &[name_tag("shuffle"), epoch as u64])
}

/// Per-worker training stream (dropout, gradient noise) for one epoch.
pub fn worker_rng(seed: u64, epoch: usize, worker: u32) -> Rng {
    new_rng(derive_seed(seed, &[name_tag("worker"), epoch as u64, u64::from(worker)]))
}

/// The full batch plan of one epoch, identical on every worker.
pub fn epoch_batch_plan(dataset: &Dataset, cfg: &ExperimentConfig, epoch: usize) -> Result<Vec<Vec<Chunk>>> {
    let chunks = chunk_sequences(dataset.seq_lens(), cfg.chunk_size, cfg.chunk_step)?;
    Ok(make_batches(
        &chunks,
        cfg.max_chunks_per_batch,
        epoch_shuffle_seed(cfg.seed, epoch),
    ))
}

fn condition_opts(cfg: &ExperimentConfig) -> ConditionOpts {
    ConditionOpts {
        l2: cfg.l2,
        max_global_norm: cfg.max_grad_norm,
        noise_stddev: cfg.grad_noise,
    }
}

/// Runs forward/loss/backward/update over the given batch plans in order.
/// Shared by the sequential engine and every cluster worker.
#[allow(clippy::too_many_arguments)]
pub fn run_batches(
    net: &Network,
    params: &mut ParamSet,
    opt: &mut OptimizerState,
    dataset: &Dataset,
    plans: &[Vec<Chunk>],
    cfg: &ExperimentConfig,
    rng: &mut Rng,
    epoch: usize,
    batch_offset: usize,
    logger: Option<&Logger>,
) -> Result<RunStats> {
    let opts = condition_opts(cfg);
    let mut stats = RunStats::default();
    for (i, plan) in plans.iter().enumerate() {
        let batch = assemble_batch(dataset, plan, cfg.chunk_size)?;
        let pass = net.forward(params, &batch.inputs, Mode::Train, rng);
        let losses = net.losses(&pass, &batch.targets)?;
        let mut batch_loss = 0.0;
        for (li, l) in &losses {
            batch_loss += l.loss;
            stats.frames += l.frames as u64;
            if net.layers[*li].spec.loss.as_deref() == Some("ce") {
                stats.ce_frames += l.frames as u64;
                stats.ce_errors += l.frame_errors as u64;
            }
        }
        if !batch_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {} in epoch {} batch {}",
                batch_loss,
                epoch,
                batch_offset + i
            )));
        }
        stats.loss_sum += batch_loss;
        stats.batches += 1;

        let loss_grads: Vec<(usize, &SeqTensor)> =
            losses.iter().map(|(li, l)| (*li, &l.grad_wrt_input)).collect();
        let mut grads = net.backward(params, &pass, &loss_grads);
        condition_gradients(&mut grads, params, &opts, rng);
        apply_update(params, &grads, opt)?;
        if let Some(tau) = cfg.max_row_norm {
            apply_max_row_norm(params, tau);
        }
        if let Some(log) = logger {
            log.debug(&format!(
                "epoch {} batch {} loss {:.6}",
                epoch,
                batch_offset + i,
                batch_loss
            ));
        }
    }
    Ok(stats)
}

/// One sequential training epoch over all batches (seeded shuffle per epoch).
pub fn train_epoch(
    net: &Network,
    params: &mut ParamSet,
    state: &mut TrainState,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    logger: Option<&Logger>,
) -> Result<RunStats> {
    let plans = epoch_batch_plan(dataset, cfg, state.epoch)?;
    let mut rng = worker_rng(cfg.seed, state.epoch, 0);
    run_batches(
        net,
        params,
        &mut state.optimizer,
        dataset,
        &plans,
        cfg,
        &mut rng,
        state.epoch,
        0,
        logger,
    )
}

/// Loss and frame-error counts over a dataset. Whole sequences, dropout off,
/// no state of any kind is touched.
pub fn evaluate(
    net: &Network,
    params: &ParamSet,
    dataset: &Dataset,
    max_seqs_per_batch: usize,
) -> Result<RunStats> {
    let mut stats = RunStats::default();
    let mut rng = new_rng(0); // eval mode draws nothing
    for batch in assemble_whole_batches(dataset, max_seqs_per_batch)? {
        let pass = net.forward(params, &batch.inputs, Mode::Eval, &mut rng);
        let losses = net.losses(&pass, &batch.targets)?;
        for (li, l) in &losses {
            stats.loss_sum += l.loss;
            stats.frames += l.frames as u64;
            if net.layers[*li].spec.loss.as_deref() == Some("ce") {
                stats.ce_frames += l.frames as u64;
                stats.ce_errors += l.frame_errors as u64;
            }
        }
        stats.batches += 1;
    }
    Ok(stats)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CheckpointMeta {
    network: serde_json::Value,
    input_dim: usize,
    epoch: usize,
    lr: f64,
    step: u64,
    rule: String,
    momentum: f64,
    rho: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    best_dev_score: Option<f64>,
    decay_factor: f64,
    min_relative_improvement: f64,
}

/// Writes a checkpoint: meta JSON (network description, epoch, optimizer
/// settings, schedule state) plus every parameter tensor and optimizer slot
/// ("slot/" prefix) in 64-bit little-endian.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network,
    params: &ParamSet,
    state: &TrainState,
) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let meta = CheckpointMeta {
        network: net.graph.to_json(),
        input_dim: net.input_dim,
        epoch: state.epoch,
        lr: state.optimizer.lr,
        step: state.optimizer.step,
        rule: state.optimizer.cfg.rule.name().to_string(),
        momentum: state.optimizer.cfg.momentum,
        rho: state.optimizer.cfg.rho,
        beta1: state.optimizer.cfg.beta1,
        beta2: state.optimizer.cfg.beta2,
        epsilon: state.optimizer.cfg.epsilon,
        best_dev_score: state.schedule.best_score,
        decay_factor: state.schedule.decay_factor,
        min_relative_improvement: state.schedule.min_relative_improvement,
    };
    let meta_bytes = serde_json::to_vec(&meta)
        .map_err(|e| Error::Format(format!("checkpoint meta encoding failed: {}", e)))?;

    let tensors: Vec<(String, &Tensor)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t))
        .chain(state.optimizer.slots().map(|(n, t)| (format!("slot/{}", n), t)))
        .collect();

    let f = File::create(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| Error::io(&path_str, e);
    w.write_all(RTNM_MAGIC).map_err(io_err)?;
    w.write_all(&[RTNM_VERSION]).map_err(io_err)?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&meta_bytes).map_err(io_err)?;
    w.write_all(&encode_tensors(tensors.iter().map(|(n, t)| (n.as_str(), *t))))
        .map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// A checkpoint read back from disk.
pub struct Checkpoint {
    pub graph_json: serde_json::Value,
    pub input_dim: usize,
    pub epoch: usize,
    pub params: ParamSet,
    pub optimizer: OptimizerState,
    pub schedule: LrSchedule,
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path_str = path.as_ref().display().to_string();
    let f = File::open(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated reading magic", path_str)))?;
    if &magic != RTNM_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic at offset 0: expected {:?}, found {:?}",
            path_str, RTNM_MAGIC, magic
        )));
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver)
        .map_err(|_| Error::Format(format!("{}: truncated reading version", path_str)))?;
    if ver[0] != RTNM_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {}",
            path_str, ver[0]
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format(format!("{}: truncated reading meta length", path_str)))?;
    let meta_len = u32::from_le_bytes(len_bytes) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| Error::Format(format!("{}: truncated reading meta", path_str)))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Format(format!("{}: bad meta JSON: {}", path_str, e)))?;

    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(&path_str, e))?;
    let tensors = decode_tensors(&rest)
        .map_err(|e| Error::Format(format!("{}: {}", path_str, e)))?;

    let rule = UpdateRule::parse(&meta.rule)?;
    let cfg = OptimizerConfig {
        rule,
        lr: meta.lr,
        momentum: meta.momentum,
        rho: meta.rho,
        beta1: meta.beta1,
        beta2: meta.beta2,
        epsilon: meta.epsilon,
    };
    let mut optimizer = OptimizerState::new(cfg);
    optimizer.lr = meta.lr;
    optimizer.step = meta.step;
    let mut params = ParamSet::new();
    for (name, t) in tensors {
        if let Some(slot) = name.strip_prefix("slot/") {
            optimizer.restore_slot(slot, t);
        } else {
            params.insert(name, t);
        }
    }
    let schedule = LrSchedule {
        decay_factor: meta.decay_factor,
        min_relative_improvement: meta.min_relative_improvement,
        best_score: meta.best_dev_score,
    };
    Ok(Checkpoint {
        graph_json: meta.network,
        input_dim: meta.input_dim,
        epoch: meta.epoch,
        params,
        optimizer,
        schedule,
    })
}

/// Checks that checkpoint tensors exactly match the network's allocation;
/// errors name the offending tensor.
pub fn validate_params_against(net_params: &ParamSet, loaded: &ParamSet) -> Result<()> {
    for (name, t) in net_params.iter() {
        match loaded.get(name) {
            None => {
                return Err(Error::Format(format!(
                    "checkpoint is missing tensor {:?}",
                    name
                )))
            }
            Some(lt) if lt.dims() != t.dims() => {
                return Err(Error::Format(format!(
                    "checkpoint tensor {:?} has dims {:?}, network expects {:?}",
                    name,
                    lt.dims(),
                    t.dims()
                )))
            }
            Some(_) => {}
        }
    }
    for (name, _) in loaded.iter() {
        if net_params.get(name).is_none() {
            return Err(Error::Format(format!(
                "checkpoint tensor {:?} does not exist in the network",
                name
            )));
        }
    }
    Ok(())
}

fn sanitize_file_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes per-sequence activations of the named layers, one RTNA file per
/// layer under `out_dir`. Sequences are processed whole (no chunking).
pub fn forward_dump(
    net: &Network,
    params: &ParamSet,
    dataset: &Dataset,
    layer_names: &[String],
    out_dir: &Path,
    max_seqs_per_batch: usize,
) -> Result<Vec<PathBuf>> {
    let mut layer_idx = Vec::with_capacity(layer_names.len());
    for name in layer_names {
        let idx = net
            .layer_index(name)
            .ok_or_else(|| Error::Network(format!("unknown layer name {:?}", name)))?;
        layer_idx.push(idx);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut writers: Vec<(PathBuf, BufWriter<File>)> = Vec::with_capacity(layer_names.len());
    for name in layer_names {
        let path = out_dir.join(format!("{}.rtna", sanitize_file_name(name)));
        let f = File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        let io_err = |e| Error::io(path.display().to_string(), e);
        w.write_all(RTNA_MAGIC).map_err(io_err)?;
        w.write_all(&[RTNA_VERSION]).map_err(io_err)?;
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(dataset.len() as u64).to_le_bytes()).map_err(io_err)?;
        writers.push((path, w));
    }

    let mut rng = new_rng(0);
    let mut seq_id = 0u64;
    for batch in assemble_whole_batches(dataset, max_seqs_per_batch)? {
        let pass = net.forward(params, &batch.inputs, Mode::Eval, &mut rng);
        let b_len = batch.inputs.batch_len();
        for bi in 0..b_len {
            let l = batch.inputs.seq_len(bi);
            for (k, &li) in layer_idx.iter().enumerate() {
                let act = &pass.activations[li];
                let d = act.feat_dim();
                let (path, w) = &mut writers[k];
                let io_err = |e| Error::io(path.display().to_string(), e);
                w.write_all(&seq_id.to_le_bytes()).map_err(io_err)?;
                w.write_all(&(l as u64).to_le_bytes()).map_err(io_err)?;
                w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
                for t in 0..l {
                    let row = (t * b_len + bi) * d;
                    for &v in &act.values.data()[row..row + d] {
                        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
                    }
                }
            }
            seq_id += 1;
        }
    }
    let mut paths = Vec::with_capacity(writers.len());
    for (path, mut w) in writers {
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads an RTNA activation file back: (layer name, per-sequence tensors).
pub fn read_activations(path: impl AsRef<Path>) -> Result<(String, Vec<(u64, Tensor)>)> {
    let path_str = path.as_ref().display().to_string();
    let f = File::open(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let mut r = BufReader::new(f);
    let trunc = |what: &str| Error::Format(format!("{}: truncated reading {}", path_str, what));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| trunc("magic"))?;
    if &magic != RTNA_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic at offset 0: expected {:?}, found {:?}",
            path_str, RTNA_MAGIC, magic
        )));
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver).map_err(|_| trunc("version"))?;
    if ver[0] != RTNA_VERSION {
        return Err(Error::Format(format!("{}: unsupported version {}", path_str, ver[0])));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| trunc("name length"))?;
    let name_len = u32::from_le_bytes(b4) as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes).map_err(|_| trunc("layer name"))?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Format(format!("{}: layer name is not UTF-8", path_str)))?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| trunc("sequence count"))?;
    let num_seqs = u64::from_le_bytes(b8) as usize;

    let mut out = Vec::with_capacity(num_seqs);
    for _ in 0..num_seqs {
        r.read_exact(&mut b8).map_err(|_| trunc("sequence id"))?;
        let id = u64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(|_| trunc("sequence length"))?;
        let l = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4).map_err(|_| trunc("feature dim"))?;
        let d = u32::from_le_bytes(b4) as usize;
        let mut bytes = vec![0u8; l * d * 4];
        r.read_exact(&mut bytes).map_err(|_| trunc("activations"))?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((id, Tensor::from_vec(&[l, d], data)));
    }
    Ok((name, out))
}

/// Validates that loss-layer widths agree with the dataset targets.
pub fn validate_outputs(net: &Network, dataset: &Dataset) -> Result<()> {
    for &i in &net.outputs {
        let layer = &net.layers[i];
        match (layer.spec.loss.as_deref(), dataset.target_kind()) {
            (Some("ce"), TargetKind::Sparse(k)) => {
                if layer.out_dim != k {
                    return Err(Error::Network(format!(
                        "output layer {:?} has {} classes, dataset has {}",
                        layer.spec.name, layer.out_dim, k
                    )));
                }
            }
            (Some("mse"), TargetKind::Dense(d)) => {
                if layer.out_dim != d {
                    return Err(Error::Network(format!(
                        "output layer {:?} emits dim {}, dataset target dim is {}",
                        layer.spec.name, layer.out_dim, d
                    )));
                }
            }
            (Some("ce"), TargetKind::Dense(_)) => {
                return Err(Error::Network(format!(
                    "output layer {:?} needs sparse labels, dataset is dense",
                    layer.spec.name
                )))
            }
            (Some("mse"), TargetKind::Sparse(_)) => {
                return Err(Error::Network(format!(
                    "output layer {:?} needs dense targets, dataset is sparse",
                    layer.spec.name
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

fn fmt_dev(stats: &Option<RunStats>) -> (String, String) {
    match stats {
        Some(s) => (format!("{:.6}", s.mean_ce()), format!("{:.6}", s.fer())),
        None => ("-".into(), "-".into()),
    }
}

/// Full training run: epochs, LR schedule, per-epoch checkpoints, best
/// checkpoint, multi-worker dispatch. Returns the final parameters, state,
/// and per-epoch reports.
pub fn run_training(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    logger: &Logger,
) -> Result<(ParamSet, TrainState, Vec<EpochReport>)> {
    let train_desc = cfg
        .train_dataset
        .as_ref()
        .ok_or_else(|| Error::Config("task \"train\" requires \"train_dataset\"".into()))?;
    let train_data = Arc::new(open_dataset(train_desc, cfg.cache_byte_cap)?);
    let dev_data = match &cfg.dev_dataset {
        Some(d) => Some(open_dataset(d, cfg.cache_byte_cap)?),
        None => None,
    };

    // network + parameters, either fresh or resumed
    let (net, mut params, mut state) = match &cfg.resume {
        None => {
            let graph = cfg
                .network
                .clone()
                .ok_or_else(|| Error::Config("task \"train\" requires \"network\"".into()))?;
            let (net, params) = build_network(&graph, train_data.input_dim(), cfg.seed)?;
            (net, params, TrainState::new(cfg))
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let graph = match &cfg.network {
                Some(g) => g.clone(),
                None => parse_network(&ckpt.graph_json.to_string())?,
            };
            let (net, fresh) = build_network(&graph, train_data.input_dim(), cfg.seed)?;
            validate_params_against(&fresh, &ckpt.params)?;
            let state = TrainState {
                epoch: ckpt.epoch,
                optimizer: ckpt.optimizer,
                schedule: ckpt.schedule,
            };
            (net, ckpt.params, state)
        }
    };
    validate_outputs(&net, &train_data)?;
    if let Some(dev) = &dev_data {
        validate_outputs(&net, dev)?;
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut cluster = if cfg.num_workers > 1 {
        Some(Cluster::spawn(&net, &train_data, cfg)?)
    } else {
        None
    };

    let mut reports = Vec::new();
    let result = (|| -> Result<()> {
        while state.epoch < cfg.num_epochs {
            let started = Instant::now();
            let train_stats = match &mut cluster {
                None => train_epoch(&net, &mut params, &mut state, &train_data, cfg, Some(logger))?,
                Some(c) => {
                    let plans = epoch_batch_plan(&train_data, cfg, state.epoch)?;
                    c.run_epoch(&mut params, state.optimizer.lr, state.epoch, plans.len())?
                }
            };
            state.epoch += 1;

            let dev_stats = match &dev_data {
                Some(dev) => Some(evaluate(&net, &params, dev, cfg.max_chunks_per_batch)?),
                None => None,
            };
            let mut improved = false;
            if let Some(dev) = &dev_stats {
                let score = match cfg.schedule_metric {
                    ScheduleMetric::CrossEntropy => dev.mean_ce(),
                    ScheduleMetric::FrameErrorRate => dev.fer(),
                };
                let (new_lr, imp) = state.schedule.lr_step(score, state.optimizer.lr);
                state.optimizer.lr = new_lr;
                improved = imp;
            }

            let wall = started.elapsed().as_secs_f64();
            let (dev_ce, dev_fer) = fmt_dev(&dev_stats);
            logger.info(&format!(
                "epoch {} train_ce {:.6} train_fer {:.6} dev_ce {} dev_fer {} lr {:e} sec {:.2}",
                state.epoch,
                train_stats.mean_ce(),
                train_stats.fer(),
                dev_ce,
                dev_fer,
                state.optimizer.lr,
                wall
            ));

            save_checkpoint(
                out_dir.join(format!("epoch{}.rtnm", state.epoch)),
                &net,
                &params,
                &state,
            )?;
            if dev_stats.is_some() && improved {
                save_checkpoint(out_dir.join("best.rtnm"), &net, &params, &state)?;
            }

            reports.push(EpochReport {
                epoch: state.epoch,
                train: train_stats,
                dev: dev_stats,
                lr: state.optimizer.lr,
                wall_seconds: wall,
            });
        }
        Ok(())
    })();

    if let Some(c) = cluster.take() {
        c.shutdown();
    }
    result?;
    Ok((params, state, reports))
}

/// Builds a network and parameters from a checkpoint for eval/forward tasks.
pub fn network_from_checkpoint(path: &str) -> Result<(Network, ParamSet, TrainState)> {
    let ckpt = load_checkpoint(path)?;
    let graph = parse_network(&ckpt.graph_json.to_string())?;
    let (net, fresh) = build_network(&graph, ckpt.input_dim, 0)?;
    validate_params_against(&fresh, &ckpt.params)?;
    let state = TrainState {
        epoch: ckpt.epoch,
        optimizer: ckpt.optimizer,
        schedule: ckpt.schedule,
    };
    Ok((net, ckpt.params, state))
}

/// Eval task: loss and FER of a checkpoint on a dataset.
pub fn run_eval(cfg: &ExperimentConfig, logger: &Logger) -> Result<RunStats> {
    let ckpt_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("task \"eval\" requires \"checkpoint\"".into()))?;
    let data = open_dataset(
        cfg.dev_dataset
            .as_ref()
            .ok_or_else(|| Error::Config("task \"eval\" requires \"dev_dataset\"".into()))?,
        cfg.cache_byte_cap,
    )?;
    let (net, params, _) = network_from_checkpoint(ckpt_path)?;
    validate_outputs(&net, &data)?;
    let stats = evaluate(&net, &params, &data, cfg.max_chunks_per_batch)?;
    logger.info(&format!(
        "eval loss_sum {:.6} mean_ce {:.6} fer {:.6} frames {}",
        stats.loss_sum,
        stats.mean_ce(),
        stats.fer(),
        stats.frames
    ));
    Ok(stats)
}

/// Forward task: dump activations of the configured layers (default: the
/// loss layers) into RTNA files under the output directory.
pub fn run_forward(cfg: &ExperimentConfig, out_dir: &Path, logger: &Logger) -> Result<Vec<PathBuf>> {
    let ckpt_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("task \"forward\" requires \"checkpoint\"".into()))?;
    let data = open_dataset(
        cfg.dev_dataset
            .as_ref()
            .ok_or_else(|| Error::Config("task \"forward\" requires \"dev_dataset\"".into()))?,
        cfg.cache_byte_cap,
    )?;
    let (net, params, _) = network_from_checkpoint(ckpt_path)?;
    let layers = if cfg.forward_layers.is_empty() {
        net.graph.outputs.clone()
    } else {
        cfg.forward_layers.clone()
    };
    let paths = forward_dump(&net, &params, &data, &layers, out_dir, cfg.max_chunks_per_batch)?;
    for p in &paths {
        logger.info(&format!("wrote activations to {}", p.display()));
    }
    Ok(paths)
}


#[cfg(test)]
mod synth_task_tests {
    use super::*;
    use crate::config::parse_network;

    #[test]
    fn zero_delay_echo_is_linearly_solvable() {
        // with delay 0 the target is the current one-hot symbol, so a scaled
        // identity weight matrix classifies every frame
        let data = open_dataset("synth:echo:classes=8,delay=0,seqs=10,min_len=20,max_len=40,seed=6", 0).unwrap();
        let graph = parse_network(r#"{"out": {"class": "softmax", "loss": "ce", "n_out": 8}}"#).unwrap();
        let (net, mut params) = build_network(&graph, 8, 1).unwrap();
        {
            let w = params.get_mut("out/W").unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    w.set(&[i, j], if i == j { 20.0 } else { 0.0 });
                }
            }
            for v in params.get_mut("out/b").unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let stats = evaluate(&net, &params, &data, 8).unwrap();
        assert_eq!(stats.ce_errors, 0, "linear net must reach FER 0 on delay-0 echo");
    }
}
