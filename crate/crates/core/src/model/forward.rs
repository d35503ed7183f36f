//! Forward pass, activation taps and exact backpropagation.
//!
//! Blocks are pre-layernorm GPT-2 style:
//! `x += Wo·attn(LN1(x))` (ATTN tap), then `x += W2·gelu(W1·LN2(x))` (FFN tap).
//! Reductions (layernorm moments, softmax, loss) accumulate in `f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use serde::{Deserialize, Serialize};

use super::weights::{LayerWeights, Weights};
use super::{ModelConfig, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sublayer {
    Attn = 0,
    Ffn = 1,
}

/// Post-residual sublayer outputs for every layer and position of one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    n_layers: usize,
    d_model: usize,
    len: usize,
    // [layer][sublayer][position][channel]
    values: Vec<f32>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Activation of one neuron at one position; `None` outside the trace.
    pub fn value(&self, layer: usize, sublayer: Sublayer, channel: usize, pos: usize) -> Option<f32> {
        if layer >= self.n_layers || channel >= self.d_model || pos >= self.len {
            return None;
        }
        let tap = layer * 2 + sublayer as usize;
        Some(self.values[(tap * self.len + pos) * self.d_model + channel])
    }

    /// All tap values at `pos`, flattened in (layer, sublayer, channel) order.
    pub fn position(&self, pos: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.n_layers * 2 * self.d_model);
        for tap in 0..self.n_layers * 2 {
            let start = (tap * self.len + pos) * self.d_model;
            out.extend_from_slice(&self.values[start..start + self.d_model]);
        }
        out
    }
}

struct LnCache<T> {
    xhat: Array2<T>,
    rstd: Vec<f64>,
}

struct LayerCache<T> {
    a: Array2<T>,
    ln1: LnCache<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    // one matrix per (sequence, head), sequence-major
    probs: Vec<Array2<T>>,
    o: Array2<T>,
    x_mid: Array2<T>,
    f: Array2<T>,
    ln2: LnCache<T>,
    h: Array2<T>,
    g: Array2<T>,
    x_out: Array2<T>,
}

/// Cache for a stack of sequences: row `spans[i].0 + p` holds position `p` of sequence `i`.
struct ForwardCache<T> {
    spans: Vec<(usize, usize)>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    y: Array2<T>,
}

impl<T> ForwardCache<T> {
    fn last_row(&self, seq: usize) -> usize {
        let (start, len) = self.spans[seq];
        start + len - 1
    }
}

#[inline]
fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

fn check_input(config: &ModelConfig, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    if ids.len() > config.max_pos {
        return Err(Error::PrefixTooLong {
            len: ids.len(),
            max: config.max_pos,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::InvalidTokenId {
            id,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
    eps: f64,
) -> (Array2<T>, LnCache<T>) {
    let (rows, d) = x.dim();
    let mut xhat = Array2::zeros((rows, d));
    let mut rstd = Vec::with_capacity(rows);
    for (row, mut out) in x.rows().into_iter().zip(xhat.rows_mut()) {
        let mean = row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.to_f64().unwrap() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        for (o, v) in out.iter_mut().zip(row) {
            *o = cast((v.to_f64().unwrap() - mean) * r);
        }
        rstd.push(r);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: &Array1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    let d = dy.ncols();
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let mut dx = dy * gain;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let m1 = row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / d as f64;
        let m2 = row
            .iter()
            .zip(xh)
            .map(|(a, b)| a.to_f64().unwrap() * b.to_f64().unwrap())
            .sum::<f64>()
            / d as f64;
        row.zip_mut_with(&xh, |g, &xv| {
            *g = cast(r * (g.to_f64().unwrap() - m1 - xv.to_f64().unwrap() * m2));
        });
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c: T = cast(GELU_C);
    let a: T = cast(GELU_A);
    let half: T = cast(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c: T = cast(GELU_C);
    let a: T = cast(GELU_A);
    let half: T = cast(0.5);
    let three: T = cast(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Row-wise causal softmax of `scores * scale`, accumulated in f64.
fn causal_softmax<T: Scalar>(scores: &mut Array2<T>, scale: f64) {
    let n = scores.nrows();
    let mut buf = vec![0f64; n];
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..=i {
            buf[j] = row[j].to_f64().unwrap() * scale;
            max = max.max(buf[j]);
        }
        let mut sum = 0.0;
        for b in buf.iter_mut().take(i + 1) {
            *b = (*b - max).exp();
            sum += *b;
        }
        for (j, r) in row.iter_mut().enumerate() {
            *r = if j <= i { cast(buf[j] / sum) } else { T::zero() };
        }
    }
}

fn layer_forward<T: Scalar>(
    lw: &LayerWeights<T>,
    config: &ModelConfig,
    spans: &[(usize, usize)],
    x: &Array2<T>,
) -> LayerCache<T> {
    let eps = config.layernorm_eps;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let (a, ln1) = layer_norm(x, &lw.ln1_g, &lw.ln1_b, eps);
    let q = a.dot(&lw.wq) + &lw.bq;
    let k = a.dot(&lw.wk) + &lw.bk;
    let v = a.dot(&lw.wv) + &lw.bv;
    let mut o = Array2::zeros(x.dim());
    let mut probs = Vec::with_capacity(spans.len() * config.n_heads);
    for &(start, len) in spans {
        for h in 0..config.n_heads {
            let block = s![start..start + len, h * dh..(h + 1) * dh];
            let mut p = q.slice(block).dot(&k.slice(block).t());
            causal_softmax(&mut p, scale);
            o.slice_mut(block).assign(&p.dot(&v.slice(block)));
            probs.push(p);
        }
    }
    let x_mid = x + &(o.dot(&lw.wo) + &lw.bo);
    let (f, ln2) = layer_norm(&x_mid, &lw.ln2_g, &lw.ln2_b, eps);
    let h = f.dot(&lw.w1) + &lw.b1;
    let g = h.mapv(gelu);
    let x_out = &x_mid + &(g.dot(&lw.w2) + &lw.b2);
    LayerCache {
        a,
        ln1,
        q,
        k,
        v,
        probs,
        o,
        x_mid,
        f,
        ln2,
        h,
        g,
        x_out,
    }
}

/// Forward over a stack of already validated sequences.
fn run<T: Scalar>(w: &Weights<T>, seqs: &[&[u32]]) -> ForwardCache<T> {
    let config = &w.config;
    let mut spans = Vec::with_capacity(seqs.len());
    let mut rows = 0;
    for s in seqs {
        spans.push((rows, s.len()));
        rows += s.len();
    }
    let mut x = Array2::zeros((rows, config.d_model));
    for (seq, &(start, _)) in seqs.iter().zip(&spans) {
        for (p, &id) in seq.iter().enumerate() {
            let mut row = x.row_mut(start + p);
            row.assign(&w.tok_emb.row(id as usize));
            row += &w.pos_emb.row(p);
        }
    }
    let mut layers: Vec<LayerCache<T>> = Vec::with_capacity(config.n_layers);
    for lw in &w.layers {
        let input = layers.last().map_or(&x, |c| &c.x_out);
        let cache = layer_forward(lw, config, &spans, input);
        layers.push(cache);
    }
    let last = layers.last().map_or(&x, |c| &c.x_out);
    let (y, lnf) = layer_norm(last, &w.lnf_g, &w.lnf_b, config.layernorm_eps);
    ForwardCache {
        spans,
        layers,
        lnf,
        y,
    }
}

fn build_trace<T: Scalar>(config: &ModelConfig, cache: &ForwardCache<T>, len: usize) -> ActivationTrace {
    let mut values = Vec::with_capacity(config.n_neurons() * len);
    for lc in &cache.layers {
        for tap in [&lc.x_mid, &lc.x_out] {
            values.extend(tap.iter().map(|v| v.to_f32().unwrap()));
        }
    }
    ActivationTrace {
        n_layers: config.n_layers,
        d_model: config.d_model,
        len,
        values,
    }
}

/// Runs the model over `input`, returning `[len × vocab]` logits and the activation trace.
pub fn forward(w: &Weights<f32>, input: &[u32]) -> Result<(Array2<f32>, ActivationTrace)> {
    check_input(&w.config, input)?;
    let cache = run(w, &[input]);
    let logits = cache.y.dot(&w.tok_emb.t());
    let trace = build_trace(&w.config, &cache, input.len());
    Ok((logits, trace))
}

/// Log-probabilities of the next token after `input`.
pub fn next_token_logprobs<T: Scalar>(w: &Weights<T>, input: &[u32]) -> Result<Vec<f64>> {
    Ok(next_token_logprobs_batch(w, &[input])?.pop().expect("one row"))
}

/// Next-token log-probabilities for several inputs run as one stacked pass.
pub fn next_token_logprobs_batch<T: Scalar>(w: &Weights<T>, inputs: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    for input in inputs {
        check_input(&w.config, input)?;
    }
    let cache = run(w, inputs);
    Ok((0..inputs.len())
        .map(|i| log_softmax(w.tok_emb.dot(&cache.y.row(cache.last_row(i))).view()))
        .collect())
}

/// Tap values at the last input position, flattened in (layer, sublayer, channel) order.
pub fn last_position_activations(w: &Weights<f32>, input: &[u32]) -> Result<Vec<f32>> {
    Ok(last_position_activations_batch(w, &[input])?.pop().expect("one row"))
}

/// [`last_position_activations`] for several inputs run as one stacked pass.
pub fn last_position_activations_batch(w: &Weights<f32>, inputs: &[&[u32]]) -> Result<Vec<Vec<f32>>> {
    for input in inputs {
        check_input(&w.config, input)?;
    }
    let cache = run(w, inputs);
    Ok((0..inputs.len())
        .map(|i| {
            let row = cache.last_row(i);
            let mut out = Vec::with_capacity(w.config.n_neurons());
            for lc in &cache.layers {
                out.extend(lc.x_mid.row(row).iter().copied());
                out.extend(lc.x_out.row(row).iter().copied());
            }
            out
        })
        .collect())
}

pub(crate) fn log_softmax<T: Scalar>(logits: ArrayView1<T>) -> Vec<f64> {
    let vals: Vec<f64> = logits.iter().map(|v| v.to_f64().unwrap()).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    vals.into_iter().map(|v| v - lse).collect()
}

fn attention_backward<T: Scalar>(
    lw: &LayerWeights<T>,
    gw: &mut LayerWeights<T>,
    config: &ModelConfig,
    spans: &[(usize, usize)],
    lc: &LayerCache<T>,
    dout: &Array2<T>,
) -> Array2<T> {
    let one = T::one();
    let n_heads = config.n_heads;
    let dh = config.head_dim();
    let scale: T = cast(1.0 / (dh as f64).sqrt());
    general_mat_mul(one, &lc.o.t(), dout, one, &mut gw.wo);
    gw.bo += &dout.sum_axis(Axis(0));
    let d_o = dout.dot(&lw.wo.t());

    let mut dq = Array2::zeros(dout.dim());
    let mut dk = Array2::zeros(dout.dim());
    let mut dv = Array2::zeros(dout.dim());
    for (si, &(start, len)) in spans.iter().enumerate() {
        for h in 0..n_heads {
            let p = &lc.probs[si * n_heads + h];
            let block = s![start..start + len, h * dh..(h + 1) * dh];
            let doh = d_o.slice(block);
            let mut ds = doh.dot(&lc.v.slice(block).t());
            dv.slice_mut(block).assign(&p.t().dot(&doh));
            for (i, (mut ds_row, p_row)) in ds.rows_mut().into_iter().zip(p.rows()).enumerate() {
                let dot: f64 = (0..=i)
                    .map(|j| p_row[j].to_f64().unwrap() * ds_row[j].to_f64().unwrap())
                    .sum();
                let dot: T = cast(dot);
                for (j, (d, &pv)) in ds_row.iter_mut().zip(p_row).enumerate() {
                    *d = if j <= i { pv * (*d - dot) * scale } else { T::zero() };
                }
            }
            dq.slice_mut(block).assign(&ds.dot(&lc.k.slice(block)));
            dk.slice_mut(block).assign(&ds.t().dot(&lc.q.slice(block)));
        }
    }
    let mut da = Array2::zeros(dout.dim());
    for (dproj, wproj, gproj, gbias) in [
        (&dq, &lw.wq, &mut gw.wq, &mut gw.bq),
        (&dk, &lw.wk, &mut gw.wk, &mut gw.bk),
        (&dv, &lw.wv, &mut gw.wv, &mut gw.bv),
    ] {
        general_mat_mul(one, &lc.a.t(), dproj, one, gproj);
        *gbias += &dproj.sum_axis(Axis(0));
        general_mat_mul(one, dproj, &wproj.t(), one, &mut da);
    }
    layer_norm_backward(&da, &lc.ln1, &lw.ln1_g, &mut gw.ln1_g, &mut gw.ln1_b)
}

fn ffn_backward<T: Scalar>(
    lw: &LayerWeights<T>,
    gw: &mut LayerWeights<T>,
    lc: &LayerCache<T>,
    dout: &Array2<T>,
) -> Array2<T> {
    let one = T::one();
    general_mat_mul(one, &lc.g.t(), dout, one, &mut gw.w2);
    gw.b2 += &dout.sum_axis(Axis(0));
    let mut dh = dout.dot(&lw.w2.t());
    dh.zip_mut_with(&lc.h, |d, &h| *d = *d * gelu_grad(h));
    general_mat_mul(one, &lc.f.t(), &dh, one, &mut gw.w1);
    gw.b1 += &dh.sum_axis(Axis(0));
    let df = dh.dot(&lw.w1.t());
    layer_norm_backward(&df, &lc.ln2, &lw.ln2_g, &mut gw.ln2_g, &mut gw.ln2_b)
}

fn validate_batch<T: Scalar>(w: &Weights<T>, batch: &[&[u32]]) -> Result<usize> {
    for seq in batch {
        if seq.len() < 2 {
            return Err(Error::SequenceTooShort { len: seq.len() });
        }
        check_input(&w.config, seq)?;
    }
    let positions: usize = batch.iter().map(|s| s.len() - 1).sum();
    if positions == 0 {
        return Err(Error::SequenceTooShort { len: 0 });
    }
    Ok(positions)
}

/// Mean next-token cross-entropy over every position of the batch, with exact gradients.
pub fn loss_and_grads<T: Scalar>(w: &Weights<T>, batch: &[&[u32]]) -> Result<(f64, Weights<T>)> {
    let positions = validate_batch(w, batch)?;
    let inv = 1.0 / positions as f64;
    let config = &w.config;
    let cache = run(w, batch);
    let logits = cache.y.dot(&w.tok_emb.t());

    let mut nll = 0.0;
    let mut dlogits = Array2::<T>::zeros(logits.dim());
    for (seq, &(start, len)) in batch.iter().zip(&cache.spans) {
        for p in 0..len - 1 {
            let row = start + p;
            let target = seq[p + 1] as usize;
            let lp = log_softmax(logits.row(row));
            nll -= lp[target];
            for (d, l) in dlogits.row_mut(row).iter_mut().zip(&lp) {
                *d = cast(l.exp() * inv);
            }
            dlogits[[row, target]] = dlogits[[row, target]] - cast(inv);
        }
    }

    let one = T::one();
    let mut grads = Weights::zeros(*config);
    general_mat_mul(one, &dlogits.t(), &cache.y, one, &mut grads.tok_emb);
    let dy = dlogits.dot(&w.tok_emb);
    let mut dx = layer_norm_backward(&dy, &cache.lnf, &w.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let lw = &w.layers[l];
        let gw = &mut grads.layers[l];
        let dmid = &dx + &ffn_backward(lw, gw, lc, &dx);
        dx = &dmid + &attention_backward(lw, gw, config, &cache.spans, lc, &dmid);
    }

    for (seq, &(start, _)) in batch.iter().zip(&cache.spans) {
        for (p, &id) in seq.iter().enumerate() {
            let drow = dx.row(start + p);
            let mut t = grads.tok_emb.row_mut(id as usize);
            t += &drow;
            let mut q = grads.pos_emb.row_mut(p);
            q += &drow;
        }
    }
    Ok((nll * inv, grads))
}

/// Loss only; used by finite-difference checks.
pub fn loss<T: Scalar>(w: &Weights<T>, batch: &[&[u32]]) -> Result<f64> {
    let positions = validate_batch(w, batch)?;
    let cache = run(w, batch);
    let logits: Array2<T> = cache.y.dot(&w.tok_emb.t());
    let mut total = 0.0;
    for (seq, &(start, len)) in batch.iter().zip(&cache.spans) {
        for p in 0..len - 1 {
            total -= log_softmax(logits.row(start + p))[seq[p + 1] as usize];
        }
    }
    Ok(total / positions as f64)
}
