//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use provgen::model::{loss, loss_and_grads, next_token_logprobs, ModelConfig, Weights};
use provgen::tokenizer::{TokenSeq, END};

/// Full (len(a)+1) x (len(b)+1) Levenshtein table over chars.
pub fn dp_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

pub fn oracle_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for i in 0..a.len() {
        sum += (a[i] as f64 - b[i] as f64).powi(2);
    }
    sum.sqrt()
}

/// Scan every vector, sort by (distance, id), keep k.
pub fn brute_force_top_k(items: &[(u64, Vec<f32>)], q: &[f32], k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = items.iter().map(|(id, v)| (*id, oracle_distance(v, q))).collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Best sequence among all that end at END or reach `max_len` tokens;
/// ties go to the smaller sequence.
pub fn exhaustive_best(w: &Weights<f32>, prefix: &TokenSeq, max_len: usize) -> (Vec<u32>, f64) {
    let v = w.config.vocab_size as u32;
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut stack: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((toks, score)) = stack.pop() {
        if toks.last() == Some(&END) || toks.len() == max_len {
            let better = match &best {
                None => true,
                Some((bt, bs)) => score > *bs || (score == *bs && toks < *bt),
            };
            if better {
                best = Some((toks, score));
            }
            continue;
        }
        let seq: Vec<u32> = prefix.ids().iter().chain(&toks).copied().collect();
        let lp = next_token_logprobs(w, &seq).unwrap();
        for t in 0..v {
            let mut next = toks.clone();
            next.push(t);
            stack.push((next, score + lp[t as usize]));
        }
    }
    best.unwrap()
}

pub const GRAD_EPS: f64 = 1e-3;
pub const GRAD_MAX_REL_ERR: f64 = 1e-3;
// Absolute slack for components whose size is comparable to the O(eps^2)
// truncation error of the central difference quotient.
pub const GRAD_ABS_FLOOR: f64 = 1e-5;

pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 11,
        max_pos: 8,
        layernorm_eps: 1e-5,
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= GRAD_ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Worst relative error per parameter tensor, central differences in f64.
pub fn gradcheck(seed: u64) -> Vec<(String, f64)> {
    let weights = Weights::<f64>::init_with_std(gradcheck_config(), seed, 0.5).unwrap();
    let batch: Vec<Vec<u32>> = vec![vec![1, 4, 7, 10, 2, 5], vec![3, 3, 9, 0, 8], vec![6, 2]];
    let batch: Vec<&[u32]> = batch.iter().map(Vec::as_slice).collect();
    let (_, grads) = loss_and_grads(&weights, &batch).unwrap();

    let mut probe = weights.clone();
    let mut out = Vec::new();
    for (ti, (name, g)) in grads.params().iter().enumerate() {
        let mut worst = 0f64;
        for (i, &analytic) in g.iter().enumerate() {
            let set = |w: &mut Weights<f64>, v: f64| {
                *w.params_mut()[ti].1.iter_mut().nth(i).unwrap() = v;
            };
            let orig = *probe.params()[ti].1.iter().nth(i).unwrap();
            set(&mut probe, orig + GRAD_EPS);
            let plus = loss(&probe, &batch).unwrap();
            set(&mut probe, orig - GRAD_EPS);
            let minus = loss(&probe, &batch).unwrap();
            set(&mut probe, orig);
            let numeric = (plus - minus) / (2.0 * GRAD_EPS);
            worst = worst.max(relative_error(analytic, numeric));
        }
        out.push((name.clone(), worst));
    }
    out
}
