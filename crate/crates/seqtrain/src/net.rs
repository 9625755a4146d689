//! Runtime network: layer graph instantiation, deterministic parameter
//! initialization, and the forward/backward drivers that move masked
//! sequence tensors through the graph.

use rand::Rng as _;

use crate::config::{LayerGraph, LayerSpec, DATA_SOURCE};
use crate::error::{Error, Result};
use crate::layers::{
    concat_features, dropout_backward, dropout_forward, linear_backward, linear_forward,
    lstm_backward, lstm_forward, mse, softmax_ce, split_features, Activation, LinearCache,
    LossResult, LstmCache, LstmParams, LSTM_GATES,
};
use crate::params::ParamSet;
use crate::rng::{derive_seed, name_tag, new_rng, Rng};
use crate::tensor::{SeqTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRef {
    Data,
    Layer(usize),
}

#[derive(Debug, Clone)]
pub struct RuntimeLayer {
    pub spec: LayerSpec,
    pub inputs: Vec<InputRef>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Instantiated network. Layers are stored in topological order; `outputs`
/// indexes the loss-carrying layers.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: LayerGraph,
    pub input_dim: usize,
    pub layers: Vec<RuntimeLayer>,
    pub outputs: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer retained state of one forward pass.
enum Cache {
    Linear(LinearCache),
    Lstm(LstmCache),
}

/// Activations plus everything the backward pass needs.
pub struct ForwardPass {
    pub activations: Vec<SeqTensor>,
    /// For softmax layers the visible activation is the class posterior; the
    /// logits live in the cache.
    caches: Vec<Cache>,
    drop_mults: Vec<Option<Tensor>>,
    input: SeqTensor,
}

/// Targets of one batch: sparse class labels (row-major [T,B]) or a dense
/// regression target [T,B,D].
#[derive(Debug, Clone)]
pub enum Targets {
    Sparse(Vec<u32>),
    Dense(Tensor),
}

fn init_weight(name: &str, dims: &[usize], seed: u64) -> Tensor {
    // uniform on +-sqrt(6/(fan_in+fan_out))
    let fan_in = dims[0] as f64;
    let fan_out = dims[1] as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let mut rng = new_rng(derive_seed(seed, &[name_tag("init"), name_tag(name)]));
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

/// Instantiates layer objects in topological order and allocates parameters
/// deterministically from the seed. Parameter names are "<layer>/<tensor>".
pub fn build_network(graph: &LayerGraph, input_dim: usize, seed: u64) -> Result<(Network, ParamSet)> {
    if input_dim == 0 {
        return Err(Error::Network("input dimension must be positive".into()));
    }
    let mut layers: Vec<RuntimeLayer> = Vec::with_capacity(graph.specs.len());
    let mut params = ParamSet::new();

    for spec in &graph.specs {
        let mut inputs = Vec::with_capacity(spec.inputs.len());
        let mut in_dim = 0usize;
        for input in &spec.inputs {
            if input == DATA_SOURCE {
                inputs.push(InputRef::Data);
                in_dim += input_dim;
            } else {
                let idx = layers
                    .iter()
                    .position(|l: &RuntimeLayer| &l.spec.name == input)
                    .ok_or_else(|| {
                        Error::Network(format!(
                            "layer {:?} input {:?} not instantiated yet; graph order broken",
                            spec.name, input
                        ))
                    })?;
                inputs.push(InputRef::Layer(idx));
                in_dim += layers[idx].out_dim;
            }
        }
        let out_dim = spec.n_out;
        match spec.kind.as_str() {
            "linear" | "softmax" => {
                let w_name = format!("{}/W", spec.name);
                params.insert(w_name.clone(), init_weight(&w_name, &[in_dim, out_dim], seed));
                params.insert(format!("{}/b", spec.name), Tensor::zeros(&[out_dim]));
            }
            "lstm" => {
                let h = out_dim;
                let w_name = format!("{}/W", spec.name);
                let r_name = format!("{}/R", spec.name);
                params.insert(w_name.clone(), init_weight(&w_name, &[in_dim, LSTM_GATES * h], seed));
                params.insert(r_name.clone(), init_weight(&r_name, &[h, LSTM_GATES * h], seed));
                // biases zero except the forget-gate block at +1
                let mut b = Tensor::zeros(&[LSTM_GATES * h]);
                for u in 0..h {
                    b.set(&[h + u], 1.0);
                }
                params.insert(format!("{}/b", spec.name), b);
            }
            other => return Err(Error::Network(format!("unknown layer class {:?}", other))),
        }
        layers.push(RuntimeLayer {
            spec: spec.clone(),
            inputs,
            in_dim,
            out_dim,
        });
    }

    let outputs = graph
        .outputs
        .iter()
        .map(|name| layers.iter().position(|l| &l.spec.name == name).unwrap())
        .collect();

    Ok((
        Network {
            graph: graph.clone(),
            input_dim,
            layers,
            outputs,
        },
        params,
    ))
}

/// Stable softmax rows over masked-in frames; masked-out rows zero.
fn softmax_rows(logits: &SeqTensor) -> SeqTensor {
    let (t_len, b_len, k) = (logits.time_len(), logits.batch_len(), logits.feat_dim());
    let mut probs = Tensor::zeros(&[t_len, b_len, k]);
    for t in 0..t_len {
        for bi in 0..b_len {
            if !logits.mask_at(t, bi) {
                continue;
            }
            let row = (t * b_len + bi) * k;
            let vals = &logits.values.data()[row..row + k];
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &v in vals {
                sum += (v - max).exp();
            }
            let lse = max + sum.ln();
            for j in 0..k {
                probs.data_mut()[row + j] = (vals[j] - lse).exp();
            }
        }
    }
    logits.with_values(probs)
}

impl Network {
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.spec.name == name)
    }

    /// Flattened [T,B] dims of the data stream each layer expects; used by
    /// callers validating datasets against the network.
    pub fn output_layer_dims(&self) -> Vec<(String, usize)> {
        self.outputs
            .iter()
            .map(|&i| (self.layers[i].spec.name.clone(), self.layers[i].out_dim))
            .collect()
    }

    fn gather_input(&self, layer: &RuntimeLayer, pass_acts: &[SeqTensor], input: &SeqTensor) -> SeqTensor {
        let parts: Vec<&SeqTensor> = layer
            .inputs
            .iter()
            .map(|r| match r {
                InputRef::Data => input,
                InputRef::Layer(i) => &pass_acts[*i],
            })
            .collect();
        if parts.len() == 1 {
            parts[0].clone()
        } else {
            concat_features(&parts)
        }
    }

    /// Runs the graph over one batch input. In train mode dropout is live and
    /// caches are retained for backward; in eval mode dropout is the identity.
    pub fn forward(&self, params: &ParamSet, input: &SeqTensor, mode: Mode, rng: &mut Rng) -> ForwardPass {
        assert_eq!(input.feat_dim(), self.input_dim, "batch input dim mismatch");
        let input = input.apply_mask();
        let mut activations: Vec<SeqTensor> = Vec::with_capacity(self.layers.len());
        let mut caches: Vec<Cache> = Vec::with_capacity(self.layers.len());
        let mut drop_mults: Vec<Option<Tensor>> = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let gathered = self.gather_input(layer, &activations, &input);
            // each dropout layer draws from its own derived stream, so the
            // draws one layer makes for padding frames never shift another
            // layer's mask
            let (x, mult) = if mode == Mode::Train && layer.spec.dropout > 0.0 {
                let mut layer_rng = new_rng(rng.gen::<u64>());
                dropout_forward(&gathered, layer.spec.dropout, &mut layer_rng, true)
            } else {
                (gathered.clone(), None)
            };
            drop_mults.push(mult);
            let w = params.expect(&format!("{}/W", layer.spec.name));
            let b = params.expect(&format!("{}/b", layer.spec.name));
            match layer.spec.kind.as_str() {
                "linear" => {
                    let (y, cache) = linear_forward(&x, w, b, layer.spec.activation);
                    activations.push(y);
                    caches.push(Cache::Linear(cache));
                }
                "softmax" => {
                    let (logits, cache) = linear_forward(&x, w, b, Activation::Identity);
                    activations.push(softmax_rows(&logits));
                    caches.push(Cache::Linear(cache));
                }
                "lstm" => {
                    let r = params.expect(&format!("{}/R", layer.spec.name));
                    let (y, cache) = lstm_forward(&x, LstmParams { w, r, b }, layer.spec.direction);
                    activations.push(y);
                    caches.push(Cache::Lstm(cache));
                }
                other => panic!("unknown layer class {:?}", other),
            }
        }
        ForwardPass {
            activations,
            caches,
            drop_mults,
            input,
        }
    }

    /// Loss (and gradient seed) per output layer.
    pub fn losses(&self, pass: &ForwardPass, targets: &Targets) -> Result<Vec<(usize, LossResult)>> {
        let mut out = Vec::with_capacity(self.outputs.len());
        for &i in &self.outputs {
            let layer = &self.layers[i];
            let loss_name = layer.spec.loss.as_deref().unwrap();
            match (loss_name, targets) {
                ("ce", Targets::Sparse(labels)) => {
                    let logits = match &pass.caches[i] {
                        Cache::Linear(c) => &c.y,
                        _ => unreachable!("softmax layer without linear cache"),
                    };
                    out.push((i, softmax_ce(logits, labels)?));
                }
                ("mse", Targets::Dense(target)) => {
                    out.push((i, mse(&pass.activations[i], target)));
                }
                ("ce", Targets::Dense(_)) => {
                    return Err(Error::Data(format!(
                        "output layer {:?} expects sparse class labels, dataset provides dense targets",
                        layer.spec.name
                    )))
                }
                ("mse", Targets::Sparse(_)) => {
                    return Err(Error::Data(format!(
                        "output layer {:?} expects dense targets, dataset provides sparse labels",
                        layer.spec.name
                    )))
                }
                (other, _) => return Err(Error::Network(format!("unknown loss {:?}", other))),
            }
        }
        Ok(out)
    }

    /// Backpropagates the loss gradients through the graph and returns the
    /// parameter gradient set, aligned name-by-name with the parameters.
    /// Loss-layer gradients arrive in pre-activation space for "ce" (softmax
    /// minus onehot) and output space for "mse".
    pub fn backward(
        &self,
        params: &ParamSet,
        pass: &ForwardPass,
        loss_grads: &[(usize, &SeqTensor)],
    ) -> ParamSet {
        let n = self.layers.len();
        // gradient wrt each layer's visible output, accumulated from consumers
        let mut d_act: Vec<Option<SeqTensor>> = (0..n).map(|_| None).collect();
        let mut grads = ParamSet::new();

        let add_into = |slot: &mut Option<SeqTensor>, g: &SeqTensor| {
            match slot {
                Some(acc) => acc.values.add_assign(&g.values),
                None => *slot = Some(g.clone()),
            }
        };

        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let loss_grad = loss_grads.iter().find(|(j, _)| *j == i).map(|(_, g)| *g);

            // gradient in the layer's pre-activation ("ce") or output space
            let upstream: Option<SeqTensor> = match layer.spec.kind.as_str() {
                "softmax" => {
                    // consumers saw the posterior p; map their gradient back
                    // through the softmax jacobian: dz = p ⊙ (dp − <dp, p>)
                    let mut total: Option<SeqTensor> = None;
                    if let Some(dp) = &d_act[i] {
                        let p = &pass.activations[i];
                        let (t_len, b_len, k) = (p.time_len(), p.batch_len(), p.feat_dim());
                        let mut dz = Tensor::zeros(&[t_len, b_len, k]);
                        for t in 0..t_len {
                            for bi in 0..b_len {
                                if !p.mask_at(t, bi) {
                                    continue;
                                }
                                let row = (t * b_len + bi) * k;
                                let mut dot = 0.0;
                                for j in 0..k {
                                    dot += dp.values.data()[row + j] * p.values.data()[row + j];
                                }
                                for j in 0..k {
                                    dz.data_mut()[row + j] = p.values.data()[row + j]
                                        * (dp.values.data()[row + j] - dot);
                                }
                            }
                        }
                        total = Some(p.with_values(dz));
                    }
                    if let Some(lg) = loss_grad {
                        add_into(&mut total, lg);
                    }
                    total
                }
                _ => {
                    let mut total = d_act[i].clone();
                    if let Some(lg) = loss_grad {
                        add_into(&mut total, lg);
                    }
                    total
                }
            };
            let Some(upstream) = upstream else {
                // layer feeds nothing that received a gradient this pass
                let zero_for = |dims: &[usize]| Tensor::zeros(dims);
                match layer.spec.kind.as_str() {
                    "lstm" => {
                        let h = layer.out_dim;
                        grads.insert(format!("{}/W", layer.spec.name), zero_for(&[layer.in_dim, LSTM_GATES * h]));
                        grads.insert(format!("{}/R", layer.spec.name), zero_for(&[h, LSTM_GATES * h]));
                        grads.insert(format!("{}/b", layer.spec.name), zero_for(&[LSTM_GATES * h]));
                    }
                    _ => {
                        grads.insert(format!("{}/W", layer.spec.name), zero_for(&[layer.in_dim, layer.out_dim]));
                        grads.insert(format!("{}/b", layer.spec.name), zero_for(&[layer.out_dim]));
                    }
                }
                continue;
            };

            let w = params.expect(&format!("{}/W", layer.spec.name));
            let d_input = match (&pass.caches[i], layer.spec.kind.as_str()) {
                (Cache::Linear(cache), _) => {
                    let (d_x, d_w, d_b) = linear_backward(cache, w, &upstream);
                    grads.insert(format!("{}/W", layer.spec.name), d_w);
                    grads.insert(format!("{}/b", layer.spec.name), d_b);
                    d_x
                }
                (Cache::Lstm(cache), _) => {
                    let r = params.expect(&format!("{}/R", layer.spec.name));
                    let (d_x, d_w, d_r, d_b) =
                        lstm_backward(cache, LstmParams { w, r, b: params.expect(&format!("{}/b", layer.spec.name)) }, &upstream);
                    grads.insert(format!("{}/W", layer.spec.name), d_w);
                    grads.insert(format!("{}/R", layer.spec.name), d_r);
                    grads.insert(format!("{}/b", layer.spec.name), d_b);
                    d_x
                }
            };
            let d_gathered = dropout_backward(&d_input, pass.drop_mults[i].as_ref());

            // split the concatenated input gradient back to the sources
            let widths: Vec<usize> = layer
                .inputs
                .iter()
                .map(|r| match r {
                    InputRef::Data => self.input_dim,
                    InputRef::Layer(j) => self.layers[*j].out_dim,
                })
                .collect();
            let parts = if widths.len() == 1 {
                vec![d_gathered]
            } else {
                split_features(&d_gathered, &widths)
            };
            for (part, input_ref) in parts.into_iter().zip(&layer.inputs) {
                if let InputRef::Layer(j) = input_ref {
                    add_into(&mut d_act[*j], &part);
                }
            }
        }
        grads
    }

    pub fn input_of_pass<'a>(&self, pass: &'a ForwardPass) -> &'a SeqTensor {
        &pass.input
    }
}
