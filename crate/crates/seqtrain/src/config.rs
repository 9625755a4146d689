//! Network description and experiment configuration parsing.
//!
//! A network is a JSON object mapping layer names to layer descriptions. A
//! description holds a "class" key plus class-specific settings; the graph is
//! built by starting at the layers that carry a loss and recursively pulling
//! in everything they read from, so layers not connected to any loss are
//! silently dropped. Experiment settings live at the top level of the same
//! file, with the network under the "network" key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::de::{MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::layers::{Activation, Direction};

/// JSON tree that keeps object entries in document order including
/// duplicates, so duplicate layer names can be rejected instead of silently
/// collapsing.
#[derive(Debug, Clone)]
pub enum RawJson {
    Null,
    Bool(bool),
    Number(serde_json::Number),
    String(String),
    Array(Vec<RawJson>),
    Object(Vec<(String, RawJson)>),
}

impl<'de> Deserialize<'de> for RawJson {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawJson;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("any JSON value")
            }

            fn visit_bool<E>(self, v: bool) -> std::result::Result<RawJson, E> {
                Ok(RawJson::Bool(v))
            }
            fn visit_i64<E>(self, v: i64) -> std::result::Result<RawJson, E> {
                Ok(RawJson::Number(v.into()))
            }
            fn visit_u64<E>(self, v: u64) -> std::result::Result<RawJson, E> {
                Ok(RawJson::Number(v.into()))
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<RawJson, E> {
                serde_json::Number::from_f64(v)
                    .map(RawJson::Number)
                    .ok_or_else(|| E::custom("non-finite number"))
            }
            fn visit_str<E>(self, v: &str) -> std::result::Result<RawJson, E> {
                Ok(RawJson::String(v.to_string()))
            }
            fn visit_unit<E>(self) -> std::result::Result<RawJson, E> {
                Ok(RawJson::Null)
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<RawJson, A::Error> {
                let mut out = Vec::new();
                while let Some(v) = seq.next_element()? {
                    out.push(v);
                }
                Ok(RawJson::Array(out))
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawJson, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, RawJson>()? {
                    out.push((k, v));
                }
                Ok(RawJson::Object(out))
            }
        }
        d.deserialize_any(V)
    }
}

impl RawJson {
    fn to_value(&self) -> Value {
        match self {
            RawJson::Null => Value::Null,
            RawJson::Bool(b) => Value::Bool(*b),
            RawJson::Number(n) => Value::Number(n.clone()),
            RawJson::String(s) => Value::String(s.clone()),
            RawJson::Array(a) => Value::Array(a.iter().map(RawJson::to_value).collect()),
            RawJson::Object(o) => Value::Object(
                o.iter()
                    .map(|(k, v)| (k.clone(), v.to_value()))
                    .collect(),
            ),
        }
    }
}

fn parse_raw(text: &str) -> Result<RawJson> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {}", e)))
}

/// The reserved input name denoting the dataset's input stream.
pub const DATA_SOURCE: &str = "data";

/// Registered layer classes.
pub const LAYER_KINDS: [&str; 3] = ["linear", "softmax", "lstm"];

/// One layer description from the network file.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: String,
    pub inputs: Vec<String>,
    pub n_out: usize,
    pub direction: Direction,
    pub dropout: f64,
    pub activation: Activation,
    pub loss: Option<String>,
}

/// Validated, topologically ordered layer graph. `outputs` names the layers
/// carrying a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    pub specs: Vec<LayerSpec>,
    pub outputs: Vec<String>,
}

impl LayerGraph {
    pub fn spec(&self, name: &str) -> Option<&LayerSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Canonical JSON form; parsing it back yields an equal graph.
    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        for s in &self.specs {
            let mut layer = serde_json::Map::new();
            layer.insert("class".into(), Value::String(s.kind.clone()));
            layer.insert(
                "from".into(),
                Value::Array(s.inputs.iter().map(|i| Value::String(i.clone())).collect()),
            );
            layer.insert("n_out".into(), Value::Number(s.n_out.into()));
            if s.kind == "lstm" {
                layer.insert("direction".into(), Value::Number(s.direction.sign().into()));
            }
            if s.dropout != 0.0 {
                layer.insert(
                    "dropout".into(),
                    Value::Number(serde_json::Number::from_f64(s.dropout).unwrap()),
                );
            }
            if s.kind == "linear" && s.activation != Activation::Identity {
                layer.insert("activation".into(), Value::String(s.activation.name().into()));
            }
            if let Some(loss) = &s.loss {
                layer.insert("loss".into(), Value::String(loss.clone()));
            }
            map.insert(s.name.clone(), Value::Object(layer));
        }
        Value::Object(map)
    }
}

fn layer_err(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Network(format!("layer {:?}: {}", name, msg))
}

fn parse_layer(name: &str, desc: &RawJson) -> Result<LayerSpec> {
    let pairs = match desc {
        RawJson::Object(pairs) => pairs,
        _ => return Err(layer_err(name, "description must be a JSON object")),
    };
    let mut seen = BTreeSet::new();
    for (k, _) in pairs {
        if !seen.insert(k.as_str()) {
            return Err(layer_err(name, format!("duplicate key {:?}", k)));
        }
    }
    let get = |k: &str| pairs.iter().find(|(pk, _)| pk == k).map(|(_, v)| v);

    for (k, _) in pairs {
        if !["class", "from", "n_out", "direction", "dropout", "activation", "loss"]
            .contains(&k.as_str())
        {
            return Err(layer_err(name, format!("unknown key {:?}", k)));
        }
    }

    let kind = match get("class") {
        Some(RawJson::String(s)) => s.clone(),
        Some(_) => return Err(layer_err(name, "\"class\" must be a string")),
        None => return Err(layer_err(name, "missing \"class\"")),
    };
    if !LAYER_KINDS.contains(&kind.as_str()) {
        return Err(layer_err(
            name,
            format!("unknown class {:?} (known: {:?})", kind, LAYER_KINDS),
        ));
    }

    let inputs = match get("from") {
        None => vec![DATA_SOURCE.to_string()],
        Some(RawJson::Array(items)) => {
            let mut out = Vec::new();
            for it in items {
                match it {
                    RawJson::String(s) => out.push(s.clone()),
                    _ => return Err(layer_err(name, "\"from\" entries must be strings")),
                }
            }
            if out.is_empty() {
                return Err(layer_err(name, "\"from\" must not be empty"));
            }
            out
        }
        Some(RawJson::String(s)) => vec![s.clone()],
        Some(_) => return Err(layer_err(name, "\"from\" must be a list of layer names")),
    };

    let n_out = match get("n_out") {
        Some(RawJson::Number(n)) => match n.as_u64() {
            Some(v) if v > 0 => v as usize,
            _ => return Err(layer_err(name, "\"n_out\" must be a positive integer")),
        },
        Some(_) => return Err(layer_err(name, "\"n_out\" must be a positive integer")),
        None => return Err(layer_err(name, "missing \"n_out\"")),
    };

    let direction = match get("direction") {
        None => Direction::Forward,
        Some(RawJson::Number(n)) => {
            if kind != "lstm" {
                return Err(layer_err(name, "\"direction\" only applies to lstm layers"));
            }
            Direction::from_sign(n.as_i64().unwrap_or(0))?
        }
        Some(_) => return Err(layer_err(name, "\"direction\" must be +1 or -1")),
    };

    let dropout = match get("dropout") {
        None => 0.0,
        Some(RawJson::Number(n)) => {
            let v = n.as_f64().unwrap_or(-1.0);
            if !(0.0..1.0).contains(&v) {
                return Err(layer_err(name, format!("dropout rate {} outside [0,1)", v)));
            }
            v
        }
        Some(_) => return Err(layer_err(name, "\"dropout\" must be a number")),
    };

    let activation = match get("activation") {
        None => Activation::Identity,
        Some(RawJson::String(s)) => {
            if kind != "linear" {
                return Err(layer_err(name, "\"activation\" only applies to linear layers"));
            }
            Activation::parse(s)?
        }
        Some(_) => return Err(layer_err(name, "\"activation\" must be a string")),
    };

    let loss = match get("loss") {
        None => None,
        Some(RawJson::String(s)) => {
            match (kind.as_str(), s.as_str()) {
                ("softmax", "ce") => {}
                ("linear", "mse") => {}
                (k, l) => {
                    return Err(layer_err(
                        name,
                        format!("loss {:?} is not available on class {:?}", l, k),
                    ))
                }
            }
            Some(s.clone())
        }
        Some(_) => return Err(layer_err(name, "\"loss\" must be a string")),
    };

    Ok(LayerSpec {
        name: name.to_string(),
        kind,
        inputs,
        n_out,
        direction,
        dropout,
        activation,
        loss,
    })
}

fn build_graph(pairs: &[(String, RawJson)]) -> Result<LayerGraph> {
    let mut by_name: BTreeMap<String, LayerSpec> = BTreeMap::new();
    for (name, desc) in pairs {
        if name == DATA_SOURCE {
            return Err(Error::Network(format!(
                "layer name {:?} is reserved for the dataset input",
                DATA_SOURCE
            )));
        }
        let spec = parse_layer(name, desc)?;
        if by_name.insert(name.clone(), spec).is_some() {
            return Err(Error::Network(format!("duplicate layer name {:?}", name)));
        }
    }

    let loss_layers: Vec<String> = by_name
        .values()
        .filter(|s| s.loss.is_some())
        .map(|s| s.name.clone())
        .collect();
    if loss_layers.is_empty() {
        return Err(Error::Network(
            "no layer carries a loss; nothing to train or evaluate".into(),
        ));
    }

    // reachability: everything a loss layer directly or indirectly reads from
    let mut reachable: BTreeSet<String> = BTreeSet::new();
    let mut stack = loss_layers.clone();
    while let Some(name) = stack.pop() {
        if !reachable.insert(name.clone()) {
            continue;
        }
        let spec = &by_name[&name];
        for input in &spec.inputs {
            if input == DATA_SOURCE {
                continue;
            }
            match by_name.get(input) {
                Some(_) => stack.push(input.clone()),
                None => {
                    return Err(Error::Network(format!(
                        "layer {:?} reads from unknown layer {:?}",
                        name, input
                    )))
                }
            }
        }
    }

    // Kahn's algorithm over the reachable subgraph; lexicographic tie-break
    // keeps instantiation order deterministic.
    let mut pending: BTreeMap<String, usize> = BTreeMap::new();
    for name in &reachable {
        let deps = by_name[name]
            .inputs
            .iter()
            .filter(|i| *i != DATA_SOURCE)
            .count();
        pending.insert(name.clone(), deps);
    }
    let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for name in &reachable {
        for input in &by_name[name].inputs {
            if input != DATA_SOURCE {
                consumers.entry(input.as_str()).or_default().push(name.as_str());
            }
        }
    }
    let mut ready: BTreeSet<String> = pending
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(n, _)| n.clone())
        .collect();
    let mut order: Vec<String> = Vec::new();
    while let Some(next) = ready.iter().next().cloned() {
        ready.remove(&next);
        order.push(next.clone());
        if let Some(users) = consumers.get(next.as_str()) {
            for &user in users {
                let d = pending.get_mut(user).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(user.to_string());
                }
            }
        }
    }
    if order.len() != reachable.len() {
        let stuck: Vec<&String> = reachable
            .iter()
            .filter(|n| !order.contains(n))
            .collect();
        let mut names = String::new();
        for s in stuck {
            let _ = write!(names, "{:?} ", s);
        }
        return Err(Error::Network(format!(
            "cycle detected among layers: {}",
            names.trim_end()
        )));
    }

    let specs: Vec<LayerSpec> = order.iter().map(|n| by_name[n].clone()).collect();
    let outputs: Vec<String> = specs
        .iter()
        .filter(|s| s.loss.is_some())
        .map(|s| s.name.clone())
        .collect();
    Ok(LayerGraph { specs, outputs })
}

/// Parses a standalone network document (layer name -> description).
pub fn parse_network(text: &str) -> Result<LayerGraph> {
    match parse_raw(text)? {
        RawJson::Object(pairs) => build_graph(&pairs),
        _ => Err(Error::Network("network must be a JSON object".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Train,
    Eval,
    Forward,
}

impl Task {
    fn parse(s: &str) -> Result<Task> {
        match s {
            "train" => Ok(Task::Train),
            "eval" => Ok(Task::Eval),
            "forward" => Ok(Task::Forward),
            other => Err(Error::Config(format!(
                "task must be train, eval, or forward; got {:?}",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Sgd,
    Momentum,
    Nesterov,
    Adagrad,
    Adadelta,
    Adam,
}

impl UpdateRule {
    pub fn parse(s: &str) -> Result<UpdateRule> {
        match s {
            "sgd" => Ok(UpdateRule::Sgd),
            "momentum" => Ok(UpdateRule::Momentum),
            "nesterov" => Ok(UpdateRule::Nesterov),
            "adagrad" => Ok(UpdateRule::Adagrad),
            "adadelta" => Ok(UpdateRule::Adadelta),
            "adam" => Ok(UpdateRule::Adam),
            other => Err(Error::Config(format!("unknown optimizer rule {:?}", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UpdateRule::Sgd => "sgd",
            UpdateRule::Momentum => "momentum",
            UpdateRule::Nesterov => "nesterov",
            UpdateRule::Adagrad => "adagrad",
            UpdateRule::Adadelta => "adadelta",
            UpdateRule::Adam => "adam",
        }
    }

    fn default_lr(&self) -> f64 {
        match self {
            UpdateRule::Sgd | UpdateRule::Momentum | UpdateRule::Nesterov | UpdateRule::Adagrad => 0.1,
            UpdateRule::Adadelta => 1.0,
            UpdateRule::Adam => 1e-3,
        }
    }
}

/// Update rule plus hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub rule: UpdateRule,
    pub lr: f64,
    pub momentum: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rule: UpdateRule::Sgd,
            lr: UpdateRule::Sgd.default_lr(),
            momentum: 0.9,
            rho: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMetric {
    CrossEntropy,
    FrameErrorRate,
}

/// Fully validated experiment configuration with defaults filled in.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub network: Option<LayerGraph>,
    pub train_dataset: Option<String>,
    pub dev_dataset: Option<String>,
    pub num_epochs: usize,
    pub max_chunks_per_batch: usize,
    pub chunk_size: usize,
    pub chunk_step: usize,
    pub optimizer: OptimizerConfig,
    pub l2: f64,
    pub grad_noise: f64,
    pub max_grad_norm: Option<f64>,
    pub max_row_norm: Option<f64>,
    pub lr_decay: f64,
    pub min_relative_improvement: f64,
    pub schedule_metric: ScheduleMetric,
    pub seed: u64,
    pub num_workers: usize,
    /// Batches each worker runs between parameter averaging rounds. None
    /// means once per epoch.
    pub sync_interval_batches: Option<usize>,
    pub cache_byte_cap: usize,
    pub checkpoint: Option<String>,
    pub resume: Option<String>,
    pub forward_layers: Vec<String>,
    pub use_sockets: bool,
    pub weighted_average: bool,
    pub reset_worker_slots: bool,
}

const CONFIG_KEYS: [&str; 24] = [
    "task",
    "network",
    "train_dataset",
    "dev_dataset",
    "num_epochs",
    "max_chunks_per_batch",
    "chunk_size",
    "chunk_step",
    "optimizer",
    "l2",
    "grad_noise",
    "max_grad_norm",
    "max_row_norm",
    "lr_decay",
    "min_relative_improvement",
    "schedule_metric",
    "seed",
    "num_workers",
    "sync_interval_batches",
    "cache_byte_cap",
    "checkpoint",
    "resume",
    "forward_layers",
    "use_sockets",
];
const CONFIG_KEYS_EXTRA: [&str; 2] = ["weighted_average", "reset_worker_slots"];

const OPTIMIZER_KEYS: [&str; 7] = ["rule", "lr", "momentum", "rho", "beta1", "beta2", "epsilon"];

fn key_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("config key {:?}: {}", key, msg))
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| key_err(key, "expected a non-negative integer"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| key_err(key, "expected a number"))
}

fn as_str(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| key_err(key, "expected a string"))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| key_err(key, "expected a boolean"))
}

fn parse_optimizer(v: &Value) -> Result<OptimizerConfig> {
    let obj = v
        .as_object()
        .ok_or_else(|| key_err("optimizer", "expected an object"))?;
    for k in obj.keys() {
        if !OPTIMIZER_KEYS.contains(&k.as_str()) {
            return Err(key_err("optimizer", format!("unknown key {:?}", k)));
        }
    }
    let rule = match obj.get("rule") {
        Some(r) => UpdateRule::parse(&as_str("optimizer.rule", r)?)?,
        None => UpdateRule::Sgd,
    };
    let mut cfg = OptimizerConfig {
        rule,
        lr: rule.default_lr(),
        ..OptimizerConfig::default()
    };
    if let Some(v) = obj.get("lr") {
        cfg.lr = as_f64("optimizer.lr", v)?;
        if cfg.lr < 0.0 || !cfg.lr.is_finite() {
            return Err(key_err("optimizer.lr", "must be finite and >= 0"));
        }
    }
    if let Some(v) = obj.get("momentum") {
        cfg.momentum = as_f64("optimizer.momentum", v)?;
    }
    if let Some(v) = obj.get("rho") {
        cfg.rho = as_f64("optimizer.rho", v)?;
    }
    if let Some(v) = obj.get("beta1") {
        cfg.beta1 = as_f64("optimizer.beta1", v)?;
    }
    if let Some(v) = obj.get("beta2") {
        cfg.beta2 = as_f64("optimizer.beta2", v)?;
    }
    if let Some(v) = obj.get("epsilon") {
        cfg.epsilon = as_f64("optimizer.epsilon", v)?;
        if cfg.epsilon < 0.0 {
            return Err(key_err("optimizer.epsilon", "must be >= 0"));
        }
    }
    for (k, v) in [
        ("optimizer.momentum", cfg.momentum),
        ("optimizer.rho", cfg.rho),
        ("optimizer.beta1", cfg.beta1),
        ("optimizer.beta2", cfg.beta2),
    ] {
        if !(0.0..1.0).contains(&v) {
            return Err(key_err(k, "must be in [0,1)"));
        }
    }
    Ok(cfg)
}

/// Applies one `key=value` override onto the parsed document. Dotted keys
/// descend into nested objects ("optimizer.lr=0.01"). The value is parsed as
/// JSON when possible, else taken as a string.
fn apply_override(doc: &mut Vec<(String, RawJson)>, key: &str, value: &str) -> Result<()> {
    let parsed: RawJson = match serde_json::from_str(value) {
        Ok(v) => v,
        Err(_) => RawJson::String(value.to_string()),
    };
    let mut segments = key.split('.').collect::<Vec<_>>();
    let last = segments.pop().unwrap();
    let mut pairs = doc;
    for seg in segments {
        let idx = match pairs.iter().position(|(k, _)| k == seg) {
            Some(i) => i,
            None => {
                pairs.push((seg.to_string(), RawJson::Object(Vec::new())));
                pairs.len() - 1
            }
        };
        pairs = match &mut pairs[idx].1 {
            RawJson::Object(inner) => inner,
            _ => {
                return Err(Error::Config(format!(
                    "override {:?}: {:?} is not an object",
                    key, seg
                )))
            }
        };
    }
    match pairs.iter_mut().find(|(k, _)| k == last) {
        Some((_, slot)) => *slot = parsed,
        None => pairs.push((last.to_string(), parsed)),
    }
    Ok(())
}

/// Parses and validates a combined configuration document, applying
/// command-line overrides (highest precedence) before validation.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut pairs = match parse_raw(text)? {
        RawJson::Object(pairs) => pairs,
        _ => return Err(Error::Config("configuration must be a JSON object".into())),
    };
    {
        let mut seen = BTreeSet::new();
        for (k, _) in &pairs {
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!("duplicate config key {:?}", k)));
            }
        }
    }
    for (k, v) in overrides {
        apply_override(&mut pairs, k, v)?;
    }

    // network is handled on the raw tree (duplicate layer names matter)
    let mut network: Option<LayerGraph> = None;
    for (k, v) in &pairs {
        if k == "network" {
            network = Some(match v {
                RawJson::Object(layer_pairs) => build_graph(layer_pairs)?,
                RawJson::String(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Error::io(path.clone(), e))?;
                    parse_network(&text)?
                }
                _ => {
                    return Err(key_err(
                        "network",
                        "expected a layer object or a path to a network file",
                    ))
                }
            });
        }
    }

    let doc: BTreeMap<String, Value> = pairs
        .iter()
        .map(|(k, v)| (k.clone(), v.to_value()))
        .collect();
    for k in doc.keys() {
        if !CONFIG_KEYS.contains(&k.as_str()) && !CONFIG_KEYS_EXTRA.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown config key {:?}", k)));
        }
    }

    let task = match doc.get("task") {
        Some(v) => Task::parse(&as_str("task", v)?)?,
        None => return Err(Error::Config("missing required key \"task\"".into())),
    };

    let get_str = |k: &str| -> Result<Option<String>> {
        match doc.get(k) {
            Some(v) => Ok(Some(as_str(k, v)?)),
            None => Ok(None),
        }
    };

    let train_dataset = get_str("train_dataset")?;
    let dev_dataset = get_str("dev_dataset")?;
    let checkpoint = get_str("checkpoint")?;
    let resume = get_str("resume")?;

    let num_epochs = match doc.get("num_epochs") {
        Some(v) => as_u64("num_epochs", v)? as usize,
        None => 1,
    };
    if num_epochs == 0 {
        return Err(key_err("num_epochs", "must be >= 1"));
    }

    let max_chunks_per_batch = match doc.get("max_chunks_per_batch") {
        Some(v) => as_u64("max_chunks_per_batch", v)? as usize,
        None => 32,
    };
    if max_chunks_per_batch == 0 {
        return Err(key_err("max_chunks_per_batch", "must be >= 1"));
    }

    let chunk_size = match doc.get("chunk_size") {
        Some(v) => as_u64("chunk_size", v)? as usize,
        None => 250,
    };
    if chunk_size == 0 {
        return Err(key_err("chunk_size", "must be >= 1"));
    }
    let chunk_step = match doc.get("chunk_step") {
        Some(v) => as_u64("chunk_step", v)? as usize,
        None => chunk_size,
    };
    if chunk_step == 0 {
        return Err(key_err("chunk_step", "must be >= 1"));
    }
    if chunk_step > chunk_size {
        return Err(key_err(
            "chunk_step",
            format!("{} exceeds chunk_size {}", chunk_step, chunk_size),
        ));
    }

    let optimizer = match doc.get("optimizer") {
        Some(v) => parse_optimizer(v)?,
        None => OptimizerConfig::default(),
    };

    let l2 = match doc.get("l2") {
        Some(v) => as_f64("l2", v)?,
        None => 0.0,
    };
    let grad_noise = match doc.get("grad_noise") {
        Some(v) => as_f64("grad_noise", v)?,
        None => 0.0,
    };
    if l2 < 0.0 || grad_noise < 0.0 {
        return Err(Error::Config("l2 and grad_noise must be >= 0".into()));
    }
    let max_grad_norm = match doc.get("max_grad_norm") {
        Some(v) => {
            let n = as_f64("max_grad_norm", v)?;
            if n <= 0.0 {
                return Err(key_err("max_grad_norm", "must be > 0"));
            }
            Some(n)
        }
        None => None,
    };
    let max_row_norm = match doc.get("max_row_norm") {
        Some(v) => {
            let n = as_f64("max_row_norm", v)?;
            if n <= 0.0 {
                return Err(key_err("max_row_norm", "must be > 0"));
            }
            Some(n)
        }
        None => None,
    };

    let lr_decay = match doc.get("lr_decay") {
        Some(v) => as_f64("lr_decay", v)?,
        None => 0.7,
    };
    if !(0.0..1.0).contains(&lr_decay) || lr_decay == 0.0 {
        return Err(key_err("lr_decay", "must be in (0,1)"));
    }
    let min_relative_improvement = match doc.get("min_relative_improvement") {
        Some(v) => as_f64("min_relative_improvement", v)?,
        None => 0.005,
    };
    if min_relative_improvement < 0.0 {
        return Err(key_err("min_relative_improvement", "must be >= 0"));
    }
    let schedule_metric = match doc.get("schedule_metric") {
        Some(v) => match as_str("schedule_metric", v)?.as_str() {
            "ce" => ScheduleMetric::CrossEntropy,
            "fer" => ScheduleMetric::FrameErrorRate,
            other => {
                return Err(key_err(
                    "schedule_metric",
                    format!("must be \"ce\" or \"fer\", got {:?}", other),
                ))
            }
        },
        None => ScheduleMetric::CrossEntropy,
    };

    let seed = match doc.get("seed") {
        Some(v) => as_u64("seed", v)?,
        None => 1,
    };
    let num_workers = match doc.get("num_workers") {
        Some(v) => as_u64("num_workers", v)? as usize,
        None => 1,
    };
    if num_workers == 0 {
        return Err(key_err("num_workers", "must be >= 1"));
    }
    let sync_interval_batches = match doc.get("sync_interval_batches") {
        Some(v) => {
            let n = as_u64("sync_interval_batches", v)? as usize;
            if n == 0 {
                return Err(key_err("sync_interval_batches", "must be >= 1"));
            }
            Some(n)
        }
        None => None,
    };
    let cache_byte_cap = match doc.get("cache_byte_cap") {
        Some(v) => as_u64("cache_byte_cap", v)? as usize,
        None => 256 << 20,
    };

    let forward_layers = match doc.get("forward_layers") {
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for it in items {
                out.push(as_str("forward_layers", it)?);
            }
            out
        }
        Some(_) => return Err(key_err("forward_layers", "expected a list of layer names")),
        None => Vec::new(),
    };

    let use_sockets = match doc.get("use_sockets") {
        Some(v) => as_bool("use_sockets", v)?,
        None => false,
    };
    let weighted_average = match doc.get("weighted_average") {
        Some(v) => as_bool("weighted_average", v)?,
        None => false,
    };
    let reset_worker_slots = match doc.get("reset_worker_slots") {
        Some(v) => as_bool("reset_worker_slots", v)?,
        None => false,
    };

    // task-specific requirements
    match task {
        Task::Train => {
            if network.is_none() && resume.is_none() {
                return Err(Error::Config(
                    "task \"train\" requires \"network\" (or \"resume\")".into(),
                ));
            }
            if train_dataset.is_none() {
                return Err(Error::Config("task \"train\" requires \"train_dataset\"".into()));
            }
        }
        Task::Eval => {
            if checkpoint.is_none() {
                return Err(Error::Config("task \"eval\" requires \"checkpoint\"".into()));
            }
            if dev_dataset.is_none() {
                return Err(Error::Config("task \"eval\" requires \"dev_dataset\"".into()));
            }
        }
        Task::Forward => {
            if checkpoint.is_none() {
                return Err(Error::Config("task \"forward\" requires \"checkpoint\"".into()));
            }
            if dev_dataset.is_none() {
                return Err(Error::Config("task \"forward\" requires \"dev_dataset\"".into()));
            }
        }
    }

    Ok(ExperimentConfig {
        task,
        network,
        train_dataset,
        dev_dataset,
        num_epochs,
        max_chunks_per_batch,
        chunk_size,
        chunk_step,
        optimizer,
        l2,
        grad_noise,
        max_grad_norm,
        max_row_norm,
        lr_decay,
        min_relative_improvement,
        schedule_metric,
        seed,
        num_workers,
        sync_interval_batches,
        cache_byte_cap,
        checkpoint,
        resume,
        forward_layers,
        use_sockets,
        weighted_average,
        reset_worker_slots,
    })
}

/// Parses a combined configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(text, &[])
}
