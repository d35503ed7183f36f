//! Beam-search decoding over raw summed log-probabilities.
//!
//! Every step expands each live beam by its top-K next tokens, pools the
//! (at most K²) expansions with the frozen beams and keeps the best K.
//! Ordering is score descending, then token sequence ascending.

use std::cmp::Ordering;

use super::forward::{next_token_logprobs, next_token_logprobs_batch};
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenSeq, END, NEWLINE};

pub const DEFAULT_LINE_MAX_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    /// Generated tokens only, including the stop token if one was emitted.
    pub tokens: TokenSeq,
    /// Sum of the log-probabilities of each generated token.
    pub score: f64,
}

#[derive(Debug, Clone)]
struct Beam {
    tokens: Vec<u32>,
    score: f64,
    frozen: bool,
}

fn rank(a: &Beam, b: &Beam) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Indices of the `k` largest entries, ties to the smaller id.
fn top_k(logprobs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logprobs.len()).collect();
    idx.sort_by(|&a, &b| logprobs[b].total_cmp(&logprobs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Beam search that freezes a beam once it emits any token in `stops`.
///
/// Generation never runs past the model's position limit.
pub fn beam_search_until(
    w: &Weights<f32>,
    prefix: &TokenSeq,
    k: usize,
    max_len: usize,
    stops: &[u32],
) -> Result<BeamResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("beam width must be at least 1".into()));
    }
    if prefix.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let max_len = max_len.min(w.config.max_pos.saturating_sub(prefix.len()));
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        score: 0.0,
        frozen: false,
    }];
    // validates the prefix even when nothing can be generated
    let mut first = Some(next_token_logprobs(w, prefix.ids())?);

    for _ in 0..max_len {
        if beams.iter().all(|b| b.frozen) {
            break;
        }
        let live: Vec<Vec<u32>> = beams
            .iter()
            .filter(|b| !b.frozen)
            .map(|b| [prefix.ids(), &b.tokens].concat())
            .collect();
        let mut logprobs = match first.take() {
            Some(lp) => vec![lp],
            None => {
                let refs: Vec<&[u32]> = live.iter().map(Vec::as_slice).collect();
                next_token_logprobs_batch(w, &refs)?
            }
        }
        .into_iter();
        let mut pool = Vec::with_capacity(k * k + k);
        for beam in &beams {
            if beam.frozen {
                pool.push(beam.clone());
                continue;
            }
            let lp = logprobs.next().expect("one row per live beam");
            for tok in top_k(&lp, k) {
                let mut tokens = beam.tokens.clone();
                tokens.push(tok as u32);
                pool.push(Beam {
                    tokens,
                    score: beam.score + lp[tok],
                    frozen: stops.contains(&(tok as u32)),
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(k);
        beams = pool;
    }
    let best = beams.into_iter().min_by(rank).expect("at least one beam");
    Ok(BeamResult {
        tokens: TokenSeq::new(best.tokens),
        score: best.score,
    })
}

/// Beam search that stops a beam when it emits END.
pub fn beam_search(w: &Weights<f32>, prefix: &TokenSeq, k: usize, max_len: usize) -> Result<BeamResult> {
    beam_search_until(w, prefix, k, max_len, &[END])
}

/// Predicts the next line: tokens up to (not including) the first NEWLINE or END.
pub fn generate_line(w: &Weights<f32>, prefix: &TokenSeq, k: usize) -> Result<TokenSeq> {
    generate_line_with_max(w, prefix, k, DEFAULT_LINE_MAX_LEN)
}

pub fn generate_line_with_max(
    w: &Weights<f32>,
    prefix: &TokenSeq,
    k: usize,
    max_len: usize,
) -> Result<TokenSeq> {
    let result = beam_search_until(w, prefix, k, max_len, &[END, NEWLINE])?;
    let line: Vec<u32> = result
        .tokens
        .ids()
        .iter()
        .copied()
        .take_while(|t| *t != END && *t != NEWLINE)
        .collect();
    Ok(TokenSeq::new(line))
}
