//! Dataset abstraction: the RTND binary sequence format, an LRU-cached file
//! reader with a configurable byte cap, deterministic synthetic tasks, and
//! the chunking and batch assembly pipeline.
//!
//! Long sequences are cut into constant-length, possibly overlapping chunks
//! (zero-padded at the tail) so batches stay dense; the index mask marks the
//! padding. Storage is 32-bit floats, compute is 64-bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::net::Targets;
use crate::rng::{derive_seed, new_rng};
use crate::tensor::{SeqTensor, Tensor};

pub const RTND_MAGIC: &[u8; 4] = b"RTND";
pub const RTND_VERSION: u8 = 1;

/// One training sequence: inputs [L, D] plus sparse labels or a dense target
/// per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: u64,
    pub inputs: Tensor,
    pub targets: SeqTargets,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeqTargets {
    Sparse(Vec<u32>),
    Dense(Tensor),
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.inputs.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn decoded_bytes(&self) -> usize {
        let t = match &self.targets {
            SeqTargets::Sparse(l) => l.len() * 4,
            SeqTargets::Dense(t) => t.numel() * 8,
        };
        self.inputs.numel() * 8 + t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// Sparse class labels; the payload is the class count.
    Sparse(usize),
    /// Dense per-frame targets; the payload is the target dimension.
    Dense(usize),
}

struct LruCache {
    cap: usize,
    used: usize,
    tick: u64,
    entries: HashMap<u64, (Arc<Sequence>, u64)>,
}

impl LruCache {
    fn get(&mut self, id: u64) -> Option<Arc<Sequence>> {
        self.tick += 1;
        let tick = self.tick;
        self.entries.get_mut(&id).map(|(seq, stamp)| {
            *stamp = tick;
            seq.clone()
        })
    }

    fn insert(&mut self, seq: Arc<Sequence>) {
        self.tick += 1;
        self.used += seq.decoded_bytes();
        self.entries.insert(seq.id, (seq, self.tick));
        // evict least-recently-used whole sequences until under the cap;
        // a sequence larger than the cap passes straight through
        while self.used > self.cap && !self.entries.is_empty() {
            let oldest = *self
                .entries
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(id, _)| id)
                .unwrap();
            let (seq, _) = self.entries.remove(&oldest).unwrap();
            self.used -= seq.decoded_bytes();
        }
    }
}

struct FileSource {
    reader: Mutex<(BufReader<File>, LruCache)>,
    offsets: Vec<u64>,
    path: String,
}

enum Source {
    Memory(Vec<Arc<Sequence>>),
    File(FileSource),
}

/// Sequences retrievable by id, backed by memory or a cached RTND file.
/// Shared read access from multiple workers is safe.
pub struct Dataset {
    input_dim: usize,
    target_kind: TargetKind,
    lens: Vec<usize>,
    source: Source,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("input_dim", &self.input_dim)
            .field("target_kind", &self.target_kind)
            .field("num_seqs", &self.lens.len())
            .finish()
    }
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], path: &str, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| {
        Error::Format(format!("{}: truncated file while reading {}", path, what))
    })
}

fn read_u32(r: &mut impl Read, path: &str, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &str, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_at(r, &mut b, path, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32_block(r: &mut impl Read, n: usize, path: &str, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact_at(r, &mut bytes, path, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind
    }

    /// Frame count per sequence, indexable by id, available without decoding.
    pub fn seq_lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn total_frames(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn from_sequences(input_dim: usize, target_kind: TargetKind, seqs: Vec<Sequence>) -> Result<Dataset> {
        let mut lens = Vec::with_capacity(seqs.len());
        for (i, s) in seqs.iter().enumerate() {
            if s.id != i as u64 {
                return Err(Error::Data(format!(
                    "sequence ids must be dense 0..n, got {} at position {}",
                    s.id, i
                )));
            }
            if s.is_empty() {
                return Err(Error::Data(format!("sequence {} is empty", s.id)));
            }
            validate_sequence(s, input_dim, target_kind)?;
            lens.push(s.len());
        }
        Ok(Dataset {
            input_dim,
            target_kind,
            lens,
            source: Source::Memory(seqs.into_iter().map(Arc::new).collect()),
        })
    }

    /// Fetches one sequence, consulting the cache for file-backed datasets.
    pub fn get(&self, id: u64) -> Result<Arc<Sequence>> {
        match &self.source {
            Source::Memory(seqs) => seqs
                .get(id as usize)
                .cloned()
                .ok_or_else(|| Error::Data(format!("sequence id {} out of range", id))),
            Source::File(src) => {
                let mut guard = src.reader.lock().unwrap();
                if let Some(hit) = guard.1.get(id) {
                    return Ok(hit);
                }
                let offset = *src
                    .offsets
                    .get(id as usize)
                    .ok_or_else(|| Error::Data(format!("sequence id {} out of range", id)))?;
                let (reader, cache) = &mut *guard;
                reader
                    .seek(SeekFrom::Start(offset))
                    .map_err(|e| Error::io(&src.path, e))?;
                let seq = Arc::new(decode_sequence(
                    reader,
                    id,
                    self.input_dim,
                    self.target_kind,
                    &src.path,
                )?);
                cache.insert(seq.clone());
                Ok(seq)
            }
        }
    }
}

fn validate_sequence(s: &Sequence, input_dim: usize, target_kind: TargetKind) -> Result<()> {
    if s.inputs.dims().len() != 2 || s.inputs.dims()[1] != input_dim {
        return Err(Error::Data(format!(
            "sequence {}: inputs {:?} do not match input_dim {}",
            s.id,
            s.inputs.dims(),
            input_dim
        )));
    }
    let l = s.len();
    match (&s.targets, target_kind) {
        (SeqTargets::Sparse(labels), TargetKind::Sparse(k)) => {
            if labels.len() != l {
                return Err(Error::Data(format!("sequence {}: label count mismatch", s.id)));
            }
            for (t, &lab) in labels.iter().enumerate() {
                if lab as usize >= k {
                    return Err(Error::Data(format!(
                        "sequence {}: label {} at frame {} exceeds {} classes",
                        s.id, lab, t, k
                    )));
                }
            }
        }
        (SeqTargets::Dense(tgt), TargetKind::Dense(d)) => {
            if tgt.dims() != [l, d] {
                return Err(Error::Data(format!(
                    "sequence {}: target dims {:?} do not match [{}, {}]",
                    s.id,
                    tgt.dims(),
                    l,
                    d
                )));
            }
        }
        _ => {
            return Err(Error::Data(format!(
                "sequence {}: target kind does not match the dataset header",
                s.id
            )))
        }
    }
    Ok(())
}

fn decode_sequence(
    r: &mut impl Read,
    id: u64,
    input_dim: usize,
    target_kind: TargetKind,
    path: &str,
) -> Result<Sequence> {
    let len = read_u64(r, path, "sequence length")? as usize;
    if len == 0 {
        return Err(Error::Format(format!("{}: sequence {} has zero length", path, id)));
    }
    let inputs = Tensor::from_vec(
        &[len, input_dim],
        read_f32_block(r, len * input_dim, path, "sequence inputs")?,
    );
    let targets = match target_kind {
        TargetKind::Sparse(k) => {
            let mut bytes = vec![0u8; len * 4];
            read_exact_at(r, &mut bytes, path, "sequence labels")?;
            let labels: Vec<u32> = bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            for (t, &lab) in labels.iter().enumerate() {
                if lab as usize >= k {
                    return Err(Error::Data(format!(
                        "{}: sequence {} label {} at frame {} exceeds {} classes",
                        path, id, lab, t, k
                    )));
                }
            }
            SeqTargets::Sparse(labels)
        }
        TargetKind::Dense(d) => SeqTargets::Dense(Tensor::from_vec(
            &[len, d],
            read_f32_block(r, len * d, path, "sequence targets")?,
        )),
    };
    Ok(Sequence { id, inputs, targets })
}

/// Writes a dataset file in the RTND format.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let f = File::create(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| Error::io(&path_str, e);

    w.write_all(RTND_MAGIC).map_err(io_err)?;
    w.write_all(&[RTND_VERSION]).map_err(io_err)?;
    let (kind_byte, dim_field) = match dataset.target_kind {
        TargetKind::Sparse(k) => (0u8, k as u32),
        TargetKind::Dense(d) => (1u8, d as u32),
    };
    w.write_all(&[kind_byte]).map_err(io_err)?;
    w.write_all(&(dataset.input_dim as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&dim_field.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dataset.len() as u64).to_le_bytes()).map_err(io_err)?;

    for id in 0..dataset.len() as u64 {
        let seq = dataset.get(id)?;
        w.write_all(&(seq.len() as u64).to_le_bytes()).map_err(io_err)?;
        for &v in seq.inputs.data() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
        match &seq.targets {
            SeqTargets::Sparse(labels) => {
                for &l in labels {
                    w.write_all(&l.to_le_bytes()).map_err(io_err)?;
                }
            }
            SeqTargets::Dense(t) => {
                for &v in t.data() {
                    w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Opens an RTND file, indexing sequence offsets without decoding payloads.
/// The in-memory cache holds at most `cache_byte_cap` bytes of decoded
/// sequences, evicting least-recently-used whole sequences.
pub fn load_dataset(path: impl AsRef<Path>, cache_byte_cap: usize) -> Result<Dataset> {
    let path_str = path.as_ref().display().to_string();
    let f = File::open(path.as_ref()).map_err(|e| Error::io(&path_str, e))?;
    let mut r = BufReader::new(f);

    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, &path_str, "magic")?;
    if &magic != RTND_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic at offset 0: expected {:?}, found {:?}",
            path_str, RTND_MAGIC, magic
        )));
    }
    let mut version = [0u8; 1];
    read_exact_at(&mut r, &mut version, &path_str, "version")?;
    if version[0] != RTND_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {} at offset 4",
            path_str, version[0]
        )));
    }
    let mut kind_byte = [0u8; 1];
    read_exact_at(&mut r, &mut kind_byte, &path_str, "target kind")?;
    let input_dim = read_u32(&mut r, &path_str, "input_dim")? as usize;
    let dim_field = read_u32(&mut r, &path_str, "target dim")? as usize;
    let num_seqs = read_u64(&mut r, &path_str, "sequence count")? as usize;
    let target_kind = match kind_byte[0] {
        0 => TargetKind::Sparse(dim_field),
        1 => TargetKind::Dense(dim_field),
        k => {
            return Err(Error::Format(format!(
                "{}: unknown target kind {} at offset 5",
                path_str, k
            )))
        }
    };
    if input_dim == 0 {
        return Err(Error::Format(format!("{}: input_dim is zero", path_str)));
    }
    if num_seqs == 0 {
        return Err(Error::Data(format!("{}: dataset holds no sequences", path_str)));
    }

    // index pass: record offsets, skip payloads
    let mut offsets = Vec::with_capacity(num_seqs);
    let mut lens = Vec::with_capacity(num_seqs);
    let mut pos = r.stream_position().map_err(|e| Error::io(&path_str, e))?;
    let file_len = r
        .get_ref()
        .metadata()
        .map_err(|e| Error::io(&path_str, e))?
        .len();
    for i in 0..num_seqs {
        offsets.push(pos);
        if pos + 8 > file_len {
            return Err(Error::Format(format!(
                "{}: truncated at offset {} while indexing sequence {}",
                path_str, pos, i
            )));
        }
        r.seek(SeekFrom::Start(pos)).map_err(|e| Error::io(&path_str, e))?;
        let len = read_u64(&mut r, &path_str, "sequence length")? as usize;
        if len == 0 {
            return Err(Error::Format(format!(
                "{}: sequence {} has zero length at offset {}",
                path_str, i, pos
            )));
        }
        let payload = match target_kind {
            TargetKind::Sparse(_) => len * input_dim * 4 + len * 4,
            TargetKind::Dense(d) => len * input_dim * 4 + len * d * 4,
        } as u64;
        pos = pos + 8 + payload;
        if pos > file_len {
            return Err(Error::Format(format!(
                "{}: truncated at offset {}: sequence {} payload runs past end of file",
                path_str, offsets[i], i
            )));
        }
        lens.push(len);
    }

    Ok(Dataset {
        input_dim,
        target_kind,
        lens,
        source: Source::File(FileSource {
            reader: Mutex::new((
                r,
                LruCache {
                    cap: cache_byte_cap,
                    used: 0,
                    tick: 0,
                    entries: HashMap::new(),
                },
            )),
            offsets,
            path: path_str,
        }),
    })
}

/// One constant-length window into a sequence. Starts are multiples of the
/// chunk step; the tail is zero-padded up to the chunk size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub seq_id: u64,
    pub start: usize,
    pub valid_len: usize,
}

/// Cuts every sequence into chunks with starts {0, S, 2S, ...} ∩ [0, L).
/// Every frame is covered by at least one chunk; with S = C the chunks
/// partition each sequence exactly.
pub fn chunk_sequences(lens: &[usize], chunk_size: usize, chunk_step: usize) -> Result<Vec<Chunk>> {
    assert!(chunk_step >= 1 && chunk_step <= chunk_size, "need 1 <= step <= size");
    if lens.is_empty() {
        return Err(Error::Data("cannot chunk an empty dataset".into()));
    }
    let mut chunks = Vec::new();
    for (id, &len) in lens.iter().enumerate() {
        let mut start = 0;
        while start < len {
            chunks.push(Chunk {
                seq_id: id as u64,
                start,
                valid_len: (len - start).min(chunk_size),
            });
            start += chunk_step;
        }
    }
    Ok(chunks)
}

/// Deterministic shuffle by seed, then greedy fill: every batch holds
/// `max_chunks` chunks except possibly the last.
pub fn make_batches(chunks: &[Chunk], max_chunks: usize, shuffle_seed: u64) -> Vec<Vec<Chunk>> {
    assert!(max_chunks >= 1);
    let mut shuffled = chunks.to_vec();
    let mut rng = new_rng(derive_seed(shuffle_seed, &[crate::rng::name_tag("batches")]));
    shuffled.shuffle(&mut rng);
    shuffled.chunks(max_chunks).map(|c| c.to_vec()).collect()
}

/// Materialized batch: chunk inputs packed into [C, B, D] with the index
/// mask, plus per-frame targets.
pub struct Batch {
    pub inputs: SeqTensor,
    pub targets: Targets,
}

/// Packs a planned batch. The time extent is always `chunk_size`.
pub fn assemble_batch(dataset: &Dataset, chunks: &[Chunk], chunk_size: usize) -> Result<Batch> {
    assert!(!chunks.is_empty());
    let b_len = chunks.len();
    let d = dataset.input_dim();
    let mut values = Tensor::zeros(&[chunk_size, b_len, d]);
    let mut mask = Tensor::zeros(&[chunk_size, b_len]);

    let mut sparse: Option<Vec<u32>> = None;
    let mut dense: Option<Tensor> = None;
    match dataset.target_kind() {
        TargetKind::Sparse(_) => sparse = Some(vec![0; chunk_size * b_len]),
        TargetKind::Dense(dd) => dense = Some(Tensor::zeros(&[chunk_size, b_len, dd])),
    }

    for (bi, chunk) in chunks.iter().enumerate() {
        let seq = dataset.get(chunk.seq_id)?;
        for t in 0..chunk.valid_len {
            let frame = chunk.start + t;
            mask.set(&[t, bi], 1.0);
            let src = frame * d;
            let dst = (t * b_len + bi) * d;
            values.data_mut()[dst..dst + d].copy_from_slice(&seq.inputs.data()[src..src + d]);
            match (&seq.targets, &mut sparse, &mut dense) {
                (SeqTargets::Sparse(labels), Some(out), _) => {
                    out[t * b_len + bi] = labels[frame];
                }
                (SeqTargets::Dense(tgt), _, Some(out)) => {
                    let dd = tgt.dims()[1];
                    let tsrc = frame * dd;
                    let tdst = (t * b_len + bi) * dd;
                    out.data_mut()[tdst..tdst + dd]
                        .copy_from_slice(&tgt.data()[tsrc..tsrc + dd]);
                }
                _ => {
                    return Err(Error::Data(format!(
                        "sequence {} target kind does not match the dataset header",
                        chunk.seq_id
                    )))
                }
            }
        }
    }

    let targets = match (sparse, dense) {
        (Some(s), _) => Targets::Sparse(s),
        (_, Some(t)) => Targets::Dense(t),
        _ => unreachable!(),
    };
    Ok(Batch {
        inputs: SeqTensor::new(values, mask),
        targets,
    })
}

/// Groups whole sequences (no chunking) into evaluation batches in id order.
/// The time extent of each batch is its longest member.
pub fn assemble_whole_batches(dataset: &Dataset, max_seqs: usize) -> Result<Vec<Batch>> {
    assert!(max_seqs >= 1);
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let ids: Vec<u64> = (0..dataset.len() as u64).collect();
    let mut out = Vec::new();
    for group in ids.chunks(max_seqs) {
        let lens: Vec<usize> = group.iter().map(|&id| dataset.seq_lens()[id as usize]).collect();
        let t_len = *lens.iter().max().unwrap();
        let b_len = group.len();
        let d = dataset.input_dim();
        let mut values = Tensor::zeros(&[t_len, b_len, d]);
        let mut mask = Tensor::zeros(&[t_len, b_len]);
        let mut sparse: Option<Vec<u32>> = None;
        let mut dense: Option<Tensor> = None;
        match dataset.target_kind() {
            TargetKind::Sparse(_) => sparse = Some(vec![0; t_len * b_len]),
            TargetKind::Dense(dd) => dense = Some(Tensor::zeros(&[t_len, b_len, dd])),
        }
        for (bi, &id) in group.iter().enumerate() {
            let seq = dataset.get(id)?;
            for t in 0..seq.len() {
                mask.set(&[t, bi], 1.0);
                let src = t * d;
                let dst = (t * b_len + bi) * d;
                values.data_mut()[dst..dst + d].copy_from_slice(&seq.inputs.data()[src..src + d]);
                match (&seq.targets, &mut sparse, &mut dense) {
                    (SeqTargets::Sparse(labels), Some(out), _) => out[t * b_len + bi] = labels[t],
                    (SeqTargets::Dense(tgt), _, Some(out)) => {
                        let dd = tgt.dims()[1];
                        out.data_mut()[(t * b_len + bi) * dd..(t * b_len + bi + 1) * dd]
                            .copy_from_slice(&tgt.data()[t * dd..(t + 1) * dd]);
                    }
                    _ => unreachable!("validated at load"),
                }
            }
        }
        let targets = match (sparse, dense) {
            (Some(s), _) => Targets::Sparse(s),
            (_, Some(t)) => Targets::Dense(t),
            _ => unreachable!(),
        };
        out.push(Batch {
            inputs: SeqTensor::new(values, mask),
            targets,
        });
    }
    Ok(out)
}

/// Settings of the shipped synthetic sequence-labeling task. The target at
/// frame t is the class of the input symbol at t - delay (clamped at the
/// sequence start), so any delay > 0 requires memory and defeats frame-wise
/// models while staying easy for a recurrent net.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub delay: usize,
    pub n_seqs: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

/// Deterministic delayed-echo dataset: one-hot symbol inputs, labels echo the
/// symbol stream with the configured delay.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::Data("synth task needs at least 2 classes".into()));
    }
    if spec.n_seqs == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::Data("synth task needs n_seqs >= 1 and 1 <= min_len <= max_len".into()));
    }
    let k = spec.num_classes;
    let mut seqs = Vec::with_capacity(spec.n_seqs);
    for id in 0..spec.n_seqs as u64 {
        let mut rng = new_rng(derive_seed(spec.seed, &[0x73796e7468, id]));
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let symbols: Vec<u32> = (0..len).map(|_| rng.gen_range(0..k as u32)).collect();
        let mut inputs = Tensor::zeros(&[len, k]);
        for (t, &s) in symbols.iter().enumerate() {
            inputs.set(&[t, s as usize], 1.0);
        }
        let labels: Vec<u32> = (0..len)
            .map(|t| symbols[t.saturating_sub(spec.delay)])
            .collect();
        seqs.push(Sequence {
            id,
            inputs,
            targets: SeqTargets::Sparse(labels),
        });
    }
    Dataset::from_sequences(k, TargetKind::Sparse(k), seqs)
}

/// Parses a dataset descriptor: either a file path or a synthetic-task
/// string "synth:echo:classes=8,delay=3,seqs=200,min_len=100,max_len=300,seed=1".
pub fn open_dataset(descriptor: &str, cache_byte_cap: usize) -> Result<Dataset> {
    if let Some(rest) = descriptor.strip_prefix("synth:") {
        let (task, args) = rest.split_once(':').unwrap_or((rest, ""));
        if task != "echo" {
            return Err(Error::Config(format!("unknown synthetic task {:?}", task)));
        }
        let mut spec = SynthSpec {
            num_classes: 8,
            delay: 0,
            n_seqs: 100,
            min_len: 50,
            max_len: 100,
            seed: 1,
        };
        if !args.is_empty() {
            for kv in args.split(',') {
                let (key, value) = kv.split_once('=').ok_or_else(|| {
                    Error::Config(format!("synth descriptor entry {:?} is not key=value", kv))
                })?;
                let num: u64 = value
                    .parse()
                    .map_err(|_| Error::Config(format!("synth key {:?}: bad number {:?}", key, value)))?;
                match key {
                    "classes" => spec.num_classes = num as usize,
                    "delay" => spec.delay = num as usize,
                    "seqs" => spec.n_seqs = num as usize,
                    "min_len" => spec.min_len = num as usize,
                    "max_len" => spec.max_len = num as usize,
                    "seed" => spec.seed = num,
                    other => {
                        return Err(Error::Config(format!("unknown synth key {:?}", other)))
                    }
                }
            }
        }
        synth_dataset(&spec)
    } else {
        load_dataset(descriptor, cache_byte_cap)
    }
}
