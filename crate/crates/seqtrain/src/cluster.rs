//! Asynchronous multi-worker data-parallel training with periodic parameter
//! averaging.
//!
//! The coordinator owns the canonical parameters. Each epoch it partitions
//! the batch list round-robin across workers; in every sync round it sends
//! the current parameters to each worker with batches left, the workers
//! independently run up to `sync_interval_batches` updates on their private
//! copies (private optimizer slots included), send their estimates back, and
//! the coordinator replaces the canonical set with the elementwise mean.
//!
//! Workers are threads, but all coordination runs over the framed RTNP byte
//! protocol: an in-process channel carrying encoded frames by default, a
//! local TCP socket under the `use_sockets` flag. Worker optimizer slots are
//! process-local and are not part of checkpoints.

use std::io::Read;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use crate::config::ExperimentConfig;
use crate::data::{Chunk, Dataset};
use crate::engine::{epoch_batch_plan, run_batches, worker_rng, RunStats};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::optim::OptimizerState;
use crate::params::{decode_tensors_prefix, encode_tensors, ParamSet};

pub const RTNP_MAGIC: &[u8; 4] = b"RTNP";
pub const RTNP_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 8;

/// Reflected CRC-32 (polynomial 0xEDB88320) over message payloads.
pub fn crc32(data: &[u8]) -> u32 {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB88320 ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        t
    });
    let mut crc = 0xFFFFFFFFu32;
    for &b in data {
        crc = table[((crc ^ u32::from(b)) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFFFFFF
}

/// Byte-exact parameter serialization; the format is the checkpoint tensor
/// blob (f64, canonical lexicographic name order).
pub fn serialize_params(p: &ParamSet) -> Vec<u8> {
    encode_tensors(p.iter())
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ParamSet> {
    let (tensors, consumed) = decode_tensors_prefix(bytes)
        .map_err(|e| Error::Protocol(e.to_string()))?;
    if consumed != bytes.len() {
        return Err(Error::Protocol(format!(
            "parameter payload has {} trailing bytes",
            bytes.len() - consumed
        )));
    }
    check_canonical_order(&tensors)?;
    Ok(tensors.into_iter().collect())
}

fn check_canonical_order(tensors: &[(String, crate::tensor::Tensor)]) -> Result<()> {
    for w in tensors.windows(2) {
        if w[0].0 >= w[1].0 {
            return Err(Error::Protocol(format!(
                "parameter name order violation: {:?} before {:?}",
                w[0].0, w[1].0
            )));
        }
    }
    Ok(())
}

/// Unweighted elementwise mean; summation runs in worker-index order.
pub fn average_params(sets: &[ParamSet]) -> Result<ParamSet> {
    average_params_weighted(sets, &vec![1.0; sets.len()])
}

/// Mean weighted by per-worker batch counts (flag-gated; defaults off).
pub fn average_params_weighted(sets: &[ParamSet], weights: &[f64]) -> Result<ParamSet> {
    assert_eq!(sets.len(), weights.len());
    let first = sets
        .first()
        .ok_or_else(|| Error::Protocol("cannot average zero parameter sets".into()))?;
    for s in &sets[1..] {
        first.check_aligned(s).map_err(|e| Error::Protocol(e.to_string()))?;
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Protocol("average weights sum to zero".into()));
    }
    let mut out = ParamSet::new();
    for (name, t0) in first.iter() {
        let mut acc = vec![0.0f64; t0.numel()];
        for (s, &w) in sets.iter().zip(weights) {
            let t = s.expect(name);
            for (a, &v) in acc.iter_mut().zip(t.data()) {
                *a += w * v;
            }
        }
        for a in &mut acc {
            *a /= total;
        }
        out.insert(name, crate::tensor::Tensor::from_vec(t0.dims(), acc));
    }
    Ok(out)
}

/// Protocol messages. PARAMS carries the canonical set to a worker;
/// UPDATED_PARAMS returns the worker's estimate plus its run counters.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { worker_id: u32 },
    Assign { worker_id: u32, epoch: u64, lr: f64, batch_ids: Vec<u64> },
    Params { worker_id: u32, params: ParamSet },
    UpdatedParams { worker_id: u32, params: ParamSet, stats: RunStats },
    Done { worker_id: u32 },
    Abort { worker_id: u32, reason: String },
}

impl Message {
    fn type_byte(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::Assign { .. } => 2,
            Message::Params { .. } => 3,
            Message::UpdatedParams { .. } => 4,
            Message::Done { .. } => 5,
            Message::Abort { .. } => 6,
        }
    }

    fn worker_id(&self) -> u32 {
        match self {
            Message::Hello { worker_id }
            | Message::Assign { worker_id, .. }
            | Message::Params { worker_id, .. }
            | Message::UpdatedParams { worker_id, .. }
            | Message::Done { worker_id }
            | Message::Abort { worker_id, .. } => *worker_id,
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            Message::Hello { .. } | Message::Done { .. } => Vec::new(),
            Message::Assign { epoch, lr, batch_ids, .. } => {
                let mut p = Vec::with_capacity(24 + batch_ids.len() * 8);
                p.extend_from_slice(&epoch.to_le_bytes());
                p.extend_from_slice(&lr.to_le_bytes());
                p.extend_from_slice(&(batch_ids.len() as u64).to_le_bytes());
                for id in batch_ids {
                    p.extend_from_slice(&id.to_le_bytes());
                }
                p
            }
            Message::Params { params, .. } => serialize_params(params),
            Message::UpdatedParams { params, stats, .. } => {
                let mut p = serialize_params(params);
                p.extend_from_slice(&stats.loss_sum.to_le_bytes());
                p.extend_from_slice(&stats.ce_frames.to_le_bytes());
                p.extend_from_slice(&stats.ce_errors.to_le_bytes());
                p.extend_from_slice(&stats.frames.to_le_bytes());
                p.extend_from_slice(&stats.batches.to_le_bytes());
                p
            }
            Message::Abort { reason, .. } => reason.as_bytes().to_vec(),
        }
    }
}

/// Encodes a message frame: magic, version, type, worker id, payload length,
/// payload, crc32 of the payload. Little-endian throughout.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let payload = msg.payload();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(RTNP_MAGIC);
    out.push(RTNP_VERSION);
    out.push(msg.type_byte());
    out.extend_from_slice(&msg.worker_id().to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32(&payload).to_le_bytes());
    out
}

fn parse_payload(msg_type: u8, worker_id: u32, payload: &[u8]) -> Result<Message> {
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > payload.len() {
            return Err(Error::Protocol(format!(
                "payload truncated at byte {} (wanted {} more)",
                pos, n
            )));
        }
        let s = &payload[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    match msg_type {
        1 => Ok(Message::Hello { worker_id }),
        2 => {
            let mut pos = 0;
            let epoch = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let lr = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            let mut batch_ids = Vec::with_capacity(count);
            for _ in 0..count {
                batch_ids.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            Ok(Message::Assign { worker_id, epoch, lr, batch_ids })
        }
        3 => Ok(Message::Params {
            worker_id,
            params: deserialize_params(payload)?,
        }),
        4 => {
            let (tensors, consumed) = decode_tensors_prefix(payload)
                .map_err(|e| Error::Protocol(e.to_string()))?;
            check_canonical_order(&tensors)?;
            let rest = &payload[consumed..];
            if rest.len() != 40 {
                return Err(Error::Protocol(format!(
                    "UPDATED_PARAMS stats trailer has {} bytes, expected 40",
                    rest.len()
                )));
            }
            let stats = RunStats {
                loss_sum: f64::from_le_bytes(rest[0..8].try_into().unwrap()),
                ce_frames: u64::from_le_bytes(rest[8..16].try_into().unwrap()),
                ce_errors: u64::from_le_bytes(rest[16..24].try_into().unwrap()),
                frames: u64::from_le_bytes(rest[24..32].try_into().unwrap()),
                batches: u64::from_le_bytes(rest[32..40].try_into().unwrap()),
            };
            Ok(Message::UpdatedParams {
                worker_id,
                params: tensors.into_iter().collect(),
                stats,
            })
        }
        5 => Ok(Message::Done { worker_id }),
        6 => Ok(Message::Abort {
            worker_id,
            reason: String::from_utf8_lossy(payload).into_owned(),
        }),
        t => Err(Error::Protocol(format!("unknown message type {}", t))),
    }
}

/// Decodes one complete frame. Partial frames never yield a message.
pub fn decode_message(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Protocol(format!(
            "frame of {} bytes is shorter than the minimum {}",
            bytes.len(),
            HEADER_LEN + 4
        )));
    }
    if &bytes[0..4] != RTNP_MAGIC {
        return Err(Error::Protocol(format!(
            "bad magic {:?} at offset 0",
            &bytes[0..4]
        )));
    }
    if bytes[4] != RTNP_VERSION {
        return Err(Error::Protocol(format!("unsupported protocol version {}", bytes[4])));
    }
    let msg_type = bytes[5];
    let worker_id = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let payload_len = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + payload_len + 4 {
        return Err(Error::Protocol(format!(
            "frame length {} does not match header payload length {}",
            bytes.len(),
            payload_len
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let want_crc = u32::from_le_bytes(bytes[HEADER_LEN + payload_len..].try_into().unwrap());
    let got_crc = crc32(payload);
    if want_crc != got_crc {
        return Err(Error::Protocol(format!(
            "payload crc mismatch: header {:08x}, computed {:08x}",
            want_crc, got_crc
        )));
    }
    parse_payload(msg_type, worker_id, payload)
}

/// Reads one frame from a byte stream.
pub fn read_message(r: &mut impl Read) -> Result<Message> {
    let mut frame = vec![0u8; HEADER_LEN];
    r.read_exact(&mut frame)
        .map_err(|e| Error::Protocol(format!("connection closed reading header: {}", e)))?;
    let payload_len = u64::from_le_bytes(frame[10..18].try_into().unwrap()) as usize;
    frame.resize(HEADER_LEN + payload_len + 4, 0);
    r.read_exact(&mut frame[HEADER_LEN..])
        .map_err(|e| Error::Protocol(format!("connection closed reading payload: {}", e)))?;
    decode_message(&frame)
}

/// Message transport carrying encoded RTNP frames.
enum Transport {
    Channel {
        tx: Sender<Vec<u8>>,
        rx: Receiver<Vec<u8>>,
    },
    Socket(TcpStream),
}

impl Transport {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = encode_message(msg);
        match self {
            Transport::Channel { tx, .. } => tx
                .send(frame)
                .map_err(|_| Error::Protocol("peer hung up".into())),
            Transport::Socket(stream) => stream
                .write_all(&frame)
                .map_err(|e| Error::Protocol(format!("socket write failed: {}", e))),
        }
    }

    fn recv(&mut self) -> Result<Message> {
        match self {
            Transport::Channel { rx, .. } => {
                let frame = rx
                    .recv()
                    .map_err(|_| Error::Protocol("peer hung up".into()))?;
                decode_message(&frame)
            }
            Transport::Socket(stream) => read_message(stream),
        }
    }
}

fn worker_main(
    worker_id: u32,
    net: Arc<Network>,
    dataset: Arc<Dataset>,
    cfg: Arc<ExperimentConfig>,
    mut transport: Transport,
) {
    if transport.send(&Message::Hello { worker_id }).is_err() {
        return;
    }
    let mut opt = OptimizerState::new(cfg.optimizer.clone());
    let mut rng = worker_rng(cfg.seed, 0, worker_id);
    let mut plans: Vec<Vec<Chunk>> = Vec::new();
    let mut ids: Vec<u64> = Vec::new();
    let mut pos = 0usize;
    let mut epoch = 0usize;
    // cumulative counters over the current epoch; the coordinator reads the
    // final round's value, so single-worker totals accumulate in exactly the
    // sequential engine's order
    let mut epoch_stats = RunStats::default();

    loop {
        let msg = match transport.recv() {
            Ok(m) => m,
            Err(_) => return, // coordinator went away
        };
        match msg {
            Message::Assign { epoch: e, lr, batch_ids, .. } => {
                epoch = e as usize;
                plans = match epoch_batch_plan(&dataset, &cfg, epoch) {
                    Ok(p) => p,
                    Err(err) => {
                        let _ = transport.send(&Message::Abort {
                            worker_id,
                            reason: err.to_string(),
                        });
                        return;
                    }
                };
                ids = batch_ids;
                pos = 0;
                opt.lr = lr;
                epoch_stats = RunStats::default();
                rng = worker_rng(cfg.seed, epoch, worker_id);
            }
            Message::Params { params, .. } => {
                if cfg.reset_worker_slots {
                    opt.reset_slots();
                }
                let k = cfg.sync_interval_batches.unwrap_or(usize::MAX);
                let take = k.min(ids.len().saturating_sub(pos));
                let mut p = params;
                let mut failed: Option<Error> = None;
                for j in 0..take {
                    let global_id = ids[pos + j] as usize;
                    let plan = plans[global_id].clone();
                    match run_batches(
                        &net,
                        &mut p,
                        &mut opt,
                        &dataset,
                        &[plan],
                        &cfg,
                        &mut rng,
                        epoch,
                        global_id,
                        None,
                    ) {
                        Ok(s) => epoch_stats.merge(&s),
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                }
                if let Some(e) = failed {
                    let _ = transport.send(&Message::Abort {
                        worker_id,
                        reason: e.to_string(),
                    });
                    return;
                }
                pos += take;
                if transport
                    .send(&Message::UpdatedParams {
                        worker_id,
                        params: p,
                        stats: epoch_stats,
                    })
                    .is_err()
                {
                    return;
                }
            }
            Message::Done { .. } | Message::Abort { .. } => return,
            other => {
                let _ = transport.send(&Message::Abort {
                    worker_id,
                    reason: format!("unexpected message type {}", other.type_byte()),
                });
                return;
            }
        }
    }
}

struct WorkerHandle {
    transport: Transport,
    join: Option<JoinHandle<()>>,
}

/// Coordinator side of the worker pool. Workers persist across epochs so
/// their private optimizer slots carry over.
pub struct Cluster {
    workers: Vec<WorkerHandle>,
    cfg: Arc<ExperimentConfig>,
}

impl Cluster {
    pub fn spawn(net: &Network, dataset: &Arc<Dataset>, cfg: &ExperimentConfig) -> Result<Cluster> {
        let n = cfg.num_workers;
        let net = Arc::new(net.clone());
        let cfg = Arc::new(cfg.clone());
        let mut workers = Vec::with_capacity(n);

        if cfg.use_sockets {
            let listener = TcpListener::bind("127.0.0.1:0")
                .map_err(|e| Error::Protocol(format!("cannot bind coordinator socket: {}", e)))?;
            let addr = listener
                .local_addr()
                .map_err(|e| Error::Protocol(format!("no local addr: {}", e)))?;
            let mut joins = Vec::with_capacity(n);
            for w in 0..n {
                let (net, dataset, cfg) = (net.clone(), dataset.clone(), cfg.clone());
                joins.push(std::thread::spawn(move || {
                    let stream = match TcpStream::connect(addr) {
                        Ok(s) => s,
                        Err(_) => return,
                    };
                    stream.set_nodelay(true).ok();
                    worker_main(w as u32, net, dataset, cfg, Transport::Socket(stream));
                }));
            }
            // accept and identify by the HELLO each worker sends first
            let mut slots: Vec<Option<WorkerHandle>> = (0..n).map(|_| None).collect();
            for _ in 0..n {
                let (stream, _) = listener
                    .accept()
                    .map_err(|e| Error::Protocol(format!("accept failed: {}", e)))?;
                stream.set_nodelay(true).ok();
                let mut t = Transport::Socket(stream);
                match t.recv()? {
                    Message::Hello { worker_id } => {
                        slots[worker_id as usize] = Some(WorkerHandle {
                            transport: t,
                            join: None,
                        });
                    }
                    other => {
                        return Err(Error::Protocol(format!(
                            "expected HELLO, got message type {}",
                            other.type_byte()
                        )))
                    }
                }
            }
            for (slot, join) in slots.iter_mut().zip(joins) {
                let handle = slot.as_mut().unwrap();
                handle.join = Some(join);
            }
            workers.extend(slots.into_iter().map(Option::unwrap));
        } else {
            for w in 0..n {
                let (to_worker_tx, to_worker_rx) = channel::<Vec<u8>>();
                let (to_coord_tx, to_coord_rx) = channel::<Vec<u8>>();
                let (net, dataset, cfg) = (net.clone(), dataset.clone(), cfg.clone());
                let join = std::thread::spawn(move || {
                    worker_main(
                        w as u32,
                        net,
                        dataset,
                        cfg,
                        Transport::Channel {
                            tx: to_coord_tx,
                            rx: to_worker_rx,
                        },
                    );
                });
                let mut transport = Transport::Channel {
                    tx: to_worker_tx,
                    rx: to_coord_rx,
                };
                match transport.recv()? {
                    Message::Hello { worker_id } if worker_id == w as u32 => {}
                    other => {
                        return Err(Error::Protocol(format!(
                            "expected HELLO from worker {}, got {:?}",
                            w,
                            other.type_byte()
                        )))
                    }
                }
                workers.push(WorkerHandle {
                    transport,
                    join: Some(join),
                });
            }
        }
        Ok(Cluster { workers, cfg })
    }

    /// Runs one epoch of sync rounds over the given batch plan. The canonical
    /// parameters are replaced by the round averages; returns merged counters.
    pub fn run_epoch(
        &mut self,
        params: &mut ParamSet,
        lr: f64,
        epoch: usize,
        total_batches: usize,
    ) -> Result<RunStats> {
        let n = self.workers.len();
        let mut ids: Vec<Vec<u64>> = vec![Vec::new(); n];
        for b in 0..total_batches {
            ids[b % n].push(b as u64);
        }
        for (w, handle) in self.workers.iter_mut().enumerate() {
            handle.transport.send(&Message::Assign {
                worker_id: w as u32,
                epoch: epoch as u64,
                lr,
                batch_ids: ids[w].clone(),
            })?;
        }

        let k = self.cfg.sync_interval_batches.unwrap_or(usize::MAX);
        let mut remaining: Vec<usize> = ids.iter().map(Vec::len).collect();
        let mut worker_stats: Vec<RunStats> = vec![RunStats::default(); n];
        while remaining.iter().any(|&r| r > 0) {
            let participants: Vec<usize> = (0..n).filter(|&w| remaining[w] > 0).collect();
            for &w in &participants {
                self.workers[w].transport.send(&Message::Params {
                    worker_id: w as u32,
                    params: params.clone(),
                })?;
            }
            let mut returned: Vec<ParamSet> = Vec::with_capacity(participants.len());
            let mut counts: Vec<f64> = Vec::with_capacity(participants.len());
            for &w in &participants {
                match self.workers[w].transport.recv() {
                    Ok(Message::UpdatedParams { params: p, stats, .. }) => {
                        let took = k.min(remaining[w]);
                        remaining[w] -= took;
                        counts.push(took as f64);
                        worker_stats[w] = stats; // cumulative over the epoch
                        returned.push(p);
                    }
                    Ok(Message::Abort { reason, .. }) => {
                        return Err(Error::Training(format!(
                            "worker {} aborted: {}",
                            w, reason
                        )))
                    }
                    Ok(other) => {
                        return Err(Error::Protocol(format!(
                            "worker {} sent unexpected message type {}",
                            w,
                            other.type_byte()
                        )))
                    }
                    Err(e) => {
                        return Err(Error::Training(format!(
                            "worker {} failed: {}",
                            w, e
                        )))
                    }
                }
            }
            *params = if self.cfg.weighted_average {
                average_params_weighted(&returned, &counts)?
            } else {
                average_params(&returned)?
            };
        }
        let mut total = RunStats::default();
        for s in &worker_stats {
            total.merge(s);
        }
        Ok(total)
    }

    /// Tells every worker to exit and joins the threads. Transports are
    /// dropped before joining so a worker blocked on a dead connection
    /// unblocks instead of deadlocking the join.
    pub fn shutdown(self) {
        let mut joins = Vec::new();
        for (w, handle) in self.workers.into_iter().enumerate() {
            let WorkerHandle { mut transport, join } = handle;
            let _ = transport.send(&Message::Done { worker_id: w as u32 });
            drop(transport);
            if let Some(j) = join {
                joins.push(j);
            }
        }
        for j in joins {
            let _ = j.join();
        }
    }
}
