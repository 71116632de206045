//! Minimal trainable classifier: a feature extractor (dense hidden stack
//! with inverted dropout), a softmax prediction head, and a logistic
//! selector head that learns to flag likely misclassifications.
//!
//! The joint objective sums, per sample, a cross-entropy class loss and a
//! binary cross-entropy selection loss whose positive term is reweighted by
//! the dynamic coefficient `beta` (count of correct over incorrect
//! predictions in the batch).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Floor applied to every probability before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Dropout rate applied to every hidden layer, in [0, 1).
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { input_dim: 2, hidden: vec![32], classes: 2, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Dense {
    // row-major, out_dim x in_dim
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        Dense {
            w: (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect(),
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Network {
    hidden: Vec<Dense>,
    head: Dense,
    selector: Dense,
    dropout: f64,
}

/// Cached activations of the hidden stack for one input.
struct HiddenTrace {
    /// pre-activation per layer
    pre: Vec<Vec<f64>>,
    /// post relu-and-mask output per layer
    post: Vec<Vec<f64>>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / s).collect()
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

impl Network {
    pub fn new(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.classes == 0 || cfg.input_dim == 0 {
            return Err(Error::Config("network needs input_dim >= 1 and classes >= 1".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0,1)", cfg.dropout)));
        }
        let mut hidden = Vec::new();
        let mut prev = cfg.input_dim;
        for &h in &cfg.hidden {
            hidden.push(Dense::init(prev, h, (2.0 / prev as f64).sqrt(), rng));
            prev = h;
        }
        let head = Dense::init(prev, cfg.classes, (1.0 / prev as f64).sqrt(), rng);
        let selector = Dense::init(prev, 1, (1.0 / prev as f64).sqrt(), rng);
        Ok(Network { hidden, head, selector, dropout: cfg.dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.head.in_dim, |l| l.in_dim)
    }

    pub fn classes(&self) -> usize {
        self.head.out_dim
    }

    pub fn representation_dim(&self) -> usize {
        self.head.in_dim
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// One inverted-dropout mask per hidden unit: 0 with probability `rate`,
    /// otherwise 1/(1-rate), so the dropout-off network is the expectation.
    pub fn sample_masks(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let keep = 1.0 - self.dropout;
        self.hidden
            .iter()
            .map(|l| {
                (0..l.out_dim)
                    .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { 1.0 / keep })
                    .collect()
            })
            .collect()
    }

    fn hidden_pass(&self, x: &[f64], masks: Option<&[Vec<f64>]>) -> HiddenTrace {
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut post = Vec::with_capacity(self.hidden.len());
        let mut cur = x.to_vec();
        for (li, layer) in self.hidden.iter().enumerate() {
            let mut a = Vec::new();
            layer.apply(&cur, &mut a);
            let mut h: Vec<f64> = a.iter().map(|&v| v.max(0.0)).collect();
            if let Some(m) = masks {
                for (hv, &mv) in h.iter_mut().zip(&m[li]) {
                    *hv *= mv;
                }
            }
            pre.push(a);
            cur = h.clone();
            post.push(h);
        }
        HiddenTrace { pre, post }
    }

    fn rep<'a>(&self, x: &'a [f64], trace: &'a HiddenTrace) -> &'a [f64] {
        trace.post.last().map_or(x, |v| v.as_slice())
    }

    /// Class probabilities with explicit masks (`None` = dropout off).
    pub fn forward_with_masks(&self, x: &[f64], masks: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let trace = self.hidden_pass(x, masks);
        let mut logits = Vec::new();
        self.head.apply(self.rep(x, &trace), &mut logits);
        Ok(softmax(&logits))
    }

    /// Class probabilities; `rng` is consumed only when `dropout_on`.
    pub fn forward(&self, x: &[f64], dropout_on: bool, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if dropout_on {
            let masks = self.sample_masks(rng);
            self.forward_with_masks(x, Some(&masks))
        } else {
            self.forward_with_masks(x, None)
        }
    }

    /// Penultimate representation of `x`, dropout off.
    pub fn representation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let trace = self.hidden_pass(x, None);
        Ok(self.rep(x, &trace).to_vec())
    }

    /// Selector output t in [0,1]; always evaluated dropout off.
    pub fn selector_forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let trace = self.hidden_pass(x, None);
        let mut u = Vec::new();
        self.selector.apply(self.rep(x, &trace), &mut u);
        Ok(logistic(u[0]))
    }

    pub fn n_params(&self) -> usize {
        self.hidden.iter().map(Dense::n_params).sum::<usize>()
            + self.head.n_params()
            + self.selector.n_params()
    }

    pub fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in self.hidden.iter().chain([&self.head, &self.selector]) {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.b);
        }
        v
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut off = 0;
        let dropout = self.dropout;
        let mut layers: Vec<&mut Dense> = self.hidden.iter_mut().collect();
        layers.push(&mut self.head);
        layers.push(&mut self.selector);
        for l in layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        self.dropout = dropout;
    }

    /// Versioned checkpoint; round-trips bit-exactly.
    pub fn save(&self, w: impl Write) -> Result<()> {
        let ckpt = Checkpoint { version: CHECKPOINT_VERSION, network: self.clone() };
        serde_json::to_writer(w, &ckpt).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn load(r: impl Read) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_reader(r).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        Ok(ckpt.network)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    network: Network,
}

#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainBatch {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::InvalidBatch(format!(
                "need matching non-empty features/labels, got {}/{}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidBatch(format!("label {bad} outside [0,{classes})")));
        }
        Ok(TrainBatch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Ratio of correctly classified (e=0) to misclassified (e=1) samples.
/// The denominator is clamped to >= 1 so a perfectly classified batch
/// yields a finite coefficient.
pub fn beta_coefficient(errors: &[u8]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidBatch("beta coefficient over empty error list".into()));
    }
    let ones = errors.iter().filter(|&&e| e == 1).count();
    let zeros = errors.len() - ones;
    Ok(zeros as f64 / ones.max(1) as f64)
}

/// Both loss components plus the flat gradient (layout of `params_vec`).
///
/// `masks` supplies one dropout mask set per sample for the class-loss path;
/// `None` runs it dropout off. The selection path and the zero-one targets
/// `e` always use the dropout-off forward.
pub fn joint_loss_and_grad(
    net: &Network,
    batch: &TrainBatch,
    masks: Option<&[Vec<Vec<f64>>]>,
) -> Result<(f64, f64, Vec<f64>)> {
    let n_hidden = net.hidden.len();
    let mut grad = vec![0.0; net.n_params()];

    // layer offsets into the flat gradient
    let mut offsets = Vec::with_capacity(n_hidden + 2);
    let mut off = 0;
    for l in net.hidden.iter().chain([&net.head, &net.selector]) {
        offsets.push(off);
        off += l.n_params();
    }

    // dropout-off pass: e targets, t values, beta
    let mut off_traces = Vec::with_capacity(batch.len());
    let mut errors = Vec::with_capacity(batch.len());
    let mut tvals = Vec::with_capacity(batch.len());
    for (x, &y) in batch.features.iter().zip(&batch.labels) {
        net.check_dim(x)?;
        let trace = net.hidden_pass(x, None);
        let mut logits = Vec::new();
        net.head.apply(net.rep(x, &trace), &mut logits);
        let p = softmax(&logits);
        let pred = argmax_lowest(&p);
        errors.push(u8::from(pred != y));
        let mut u = Vec::new();
        net.selector.apply(net.rep(x, &trace), &mut u);
        tvals.push(logistic(u[0]));
        off_traces.push(trace);
    }
    let beta = beta_coefficient(&errors)?;

    let mut class_loss = 0.0;
    let mut sel_loss = 0.0;

    let backprop_hidden = |grad: &mut [f64],
                           x: &[f64],
                           trace: &HiddenTrace,
                           masks: Option<&[Vec<f64>]>,
                           mut d_rep: Vec<f64>| {
        for li in (0..n_hidden).rev() {
            let layer = &net.hidden[li];
            // through mask and relu
            let mut da = d_rep;
            if let Some(m) = masks {
                for (dv, &mv) in da.iter_mut().zip(&m[li]) {
                    *dv *= mv;
                }
            }
            for (dv, &a) in da.iter_mut().zip(&trace.pre[li]) {
                if a <= 0.0 {
                    *dv = 0.0;
                }
            }
            let input: &[f64] = if li == 0 { x } else { &trace.post[li - 1] };
            let g = &mut grad[offsets[li]..offsets[li] + layer.n_params()];
            for (o, &dao) in da.iter().enumerate() {
                for (i, &xv) in input.iter().enumerate() {
                    g[o * layer.in_dim + i] += dao * xv;
                }
                g[layer.w.len() + o] += dao;
            }
            let mut d_prev = vec![0.0; layer.in_dim];
            for (o, &dao) in da.iter().enumerate() {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dp, &w) in d_prev.iter_mut().zip(row) {
                    *dp += w * dao;
                }
            }
            d_rep = d_prev;
        }
    };

    for (si, (x, &y)) in batch.features.iter().zip(&batch.labels).enumerate() {
        // class path (dropout on when masks given)
        let sample_masks = masks.map(|m| m[si].as_slice());
        let trace = match sample_masks {
            Some(m) => net.hidden_pass(x, Some(m)),
            None => net.hidden_pass(x, None),
        };
        let rep = net.rep(x, &trace);
        let mut logits = Vec::new();
        net.head.apply(rep, &mut logits);
        let p = softmax(&logits);
        class_loss += -clamp_prob(p[y]).ln();

        let head_off = offsets[n_hidden];
        let mut d_rep = vec![0.0; net.head.in_dim];
        for o in 0..net.head.out_dim {
            let dl = p[o] - f64::from(o == y);
            let g = &mut grad[head_off..head_off + net.head.n_params()];
            for i in 0..net.head.in_dim {
                g[o * net.head.in_dim + i] += dl * rep[i];
                d_rep[i] += net.head.w[o * net.head.in_dim + i] * dl;
            }
            g[net.head.w.len() + o] += dl;
        }
        backprop_hidden(&mut grad, x, &trace, sample_masks, d_rep);

        // selection path (always dropout off)
        let e = f64::from(errors[si]);
        let t = tvals[si];
        sel_loss += -beta * e * clamp_prob(t).ln() - (1.0 - e) * clamp_prob(1.0 - t).ln();
        let du = -beta * e * (1.0 - t) + (1.0 - e) * t;
        let trace = &off_traces[si];
        let rep = net.rep(x, trace);
        let sel_off = offsets[n_hidden + 1];
        let mut d_rep = vec![0.0; net.selector.in_dim];
        {
            let g = &mut grad[sel_off..sel_off + net.selector.n_params()];
            for i in 0..net.selector.in_dim {
                g[i] += du * rep[i];
                d_rep[i] = net.selector.w[i] * du;
            }
            g[net.selector.w.len()] += du;
        }
        backprop_hidden(&mut grad, x, trace, None, d_rep);
    }

    if !(class_loss.is_finite() && sel_loss.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite loss: class={class_loss} selection={sel_loss} beta={beta} batch={}",
            batch.len()
        )));
    }
    Ok((class_loss, sel_loss, grad))
}

pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Adam optimizer state over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1c;
            let vh = self.v[i] / b2c;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One gradient update of the joint objective. Dropout masks for the class
/// path are sampled here (one set per sample); returns (class, selection)
/// loss components evaluated before the update.
pub fn train_step(
    net: &mut Network,
    batch: &TrainBatch,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let masks: Vec<Vec<Vec<f64>>> = (0..batch.len()).map(|_| net.sample_masks(rng)).collect();
    let (cl, sl, grad) = joint_loss_and_grad(net, batch, Some(&masks))?;
    let mut params = net.params_vec();
    opt.step(&mut params, &grad);
    net.set_params(&params);
    Ok((cl, sl))
}
