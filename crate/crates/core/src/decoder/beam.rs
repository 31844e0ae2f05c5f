//! Beam search with a length-penalized score.
//!
//! Hypotheses are ranked by `logp / length_penalty(len, alpha)` and ties are
//! broken on the emitted token sequence: lower token id first, then the
//! shorter sequence. Pruning stops the search only once no unfinished
//! hypothesis could still rank strictly above the best finished one, so a
//! wide enough beam reproduces exhaustive search exactly, ties included.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::vocab::{BOS, EOS};

/// `((5 + len) / 6)^alpha`; divides hypothesis log-probabilities, so larger
/// alpha favors longer outputs. `len` counts generated tokens and must be
/// at least 1.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// One beam search candidate. `tokens` always starts with BOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    /// Sum of per-token log-probabilities over the generated tokens.
    pub logp: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn start() -> Hypothesis {
        Hypothesis { tokens: vec![BOS], logp: 0.0, finished: false }
    }

    /// Generated token count, including a terminal EOS when present.
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    /// The output sequence: generated tokens without BOS or a terminal EOS.
    pub fn emitted(&self) -> &[u32] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&t) if t == EOS => &body[..body.len() - 1],
            _ => body,
        }
    }

    /// Length-penalized score; only meaningful once something was generated.
    pub fn score(&self, alpha: f64) -> f64 {
        self.logp / length_penalty(self.generated().max(1), alpha)
    }

    /// Best score this hypothesis could still reach if every remaining token
    /// were free, finishing at the most favorable length.
    fn optimistic_bound(&self, alpha: f64, max_len: usize) -> f64 {
        if self.logp <= 0.0 {
            self.logp / length_penalty(max_len, alpha)
        } else {
            self.logp
        }
    }
}

/// Ranks (score, emitted) pairs: higher score first, then lexicographically
/// smaller emitted sequence (a strict prefix counts as smaller).
fn better(score_a: f64, emitted_a: &[u32], score_b: f64, emitted_b: &[u32]) -> bool {
    match score_a.total_cmp(&score_b) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => emitted_a < emitted_b,
    }
}

/// Next-token distribution provider; implemented by the trained model and by
/// the toy scorers the search is verified against.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities over the vocabulary for the token following
    /// `prefix` (which starts with BOS).
    fn next_log_probs(&mut self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// Length-penalized beam search. Returns the emitted tokens of the best
/// hypothesis (no BOS, no terminal EOS).
pub fn beam_search(
    scorer: &mut dyn StepScorer,
    beam_size: usize,
    alpha: f64,
    max_len: usize,
) -> Result<Vec<u32>> {
    if beam_size == 0 {
        return Err(Error::Invalid("beam_size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be at least 1".into()));
    }
    let vocab = scorer.vocab_size();
    if vocab <= EOS as usize {
        return Err(Error::Invalid(format!(
            "vocabulary of size {vocab} has no EOS slot"
        )));
    }
    let mut beam = vec![Hypothesis::start()];
    let mut best: Option<Hypothesis> = None;

    while !beam.is_empty() {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &beam {
            let log_probs = scorer.next_log_probs(&hyp.tokens)?;
            if log_probs.len() != vocab {
                return Err(Error::Invalid(format!(
                    "scorer returned {} log-probs for a vocabulary of {vocab}",
                    log_probs.len()
                )));
            }
            for (tok, lp) in log_probs.iter().enumerate() {
                let mut next = hyp.clone();
                next.tokens.push(tok as u32);
                next.logp += lp;
                next.finished = tok as u32 == EOS || next.generated() == max_len;
                candidates.push(next);
            }
        }
        // all candidates in one step share a length, so raw logp ranks them
        candidates.sort_unstable_by(|a, b| match b.logp.total_cmp(&a.logp) {
            Ordering::Equal => a.emitted().cmp(b.emitted()),
            other => other,
        });
        candidates.truncate(beam_size);
        beam = Vec::new();
        for cand in candidates {
            if cand.finished {
                let replace = match &best {
                    None => true,
                    Some(b) => {
                        better(cand.score(alpha), cand.emitted(), b.score(alpha), b.emitted())
                    }
                };
                if replace {
                    best = Some(cand);
                }
            } else {
                beam.push(cand);
            }
        }
        if let Some(b) = &best {
            let best_score = b.score(alpha);
            // keep any survivor that could still tie: a tying finisher can
            // win on the token-order tie-break
            beam.retain(|h| h.optimistic_bound(alpha, max_len) >= best_score);
        }
    }
    let best = best.expect("search space always contains a finished hypothesis");
    Ok(best.emitted().to_vec())
}
