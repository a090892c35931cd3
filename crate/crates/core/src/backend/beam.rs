use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{SequenceModel, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_len: usize,
    pub num_return: usize,
    /// When set, hypotheses are ranked by `log_prob / len^alpha`.
    #[serde(default)]
    pub length_penalty: Option<f64>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 5,
            max_len: 16,
            num_return: 5,
            length_penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Generated tokens, including the closing EOS when one was produced.
    pub tokens: Vec<String>,
    /// Sum of per-step natural-log probabilities.
    pub log_prob: f64,
}

impl BeamHypothesis {
    pub fn ended_by_eos(&self) -> bool {
        self.tokens.last().is_some_and(|t| t == EOS)
    }

    /// Generated text without the EOS sentinel.
    pub fn text(&self) -> String {
        let end = if self.ended_by_eos() {
            self.tokens.len() - 1
        } else {
            self.tokens.len()
        };
        self.tokens[..end].join(" ")
    }

    fn score(&self, length_penalty: Option<f64>) -> f64 {
        match length_penalty {
            Some(alpha) if !self.tokens.is_empty() => {
                self.log_prob / (self.tokens.len() as f64).powf(alpha)
            }
            _ => self.log_prob,
        }
    }
}

/// Higher score first; equal scores in lexicographic token order.
fn rank(a: &BeamHypothesis, b: &BeamHypothesis, length_penalty: Option<f64>) -> Ordering {
    b.score(length_penalty)
        .total_cmp(&a.score(length_penalty))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn checked_distribution(
    model: &dyn SequenceModel,
    context: &[String],
    generated: &[String],
) -> Result<Vec<f64>> {
    let dist = model.next_token_distribution(context, generated)?;
    if dist.len() != model.vocabulary().len() {
        return Err(Error::Backend(format!(
            "distribution has {} entries for a vocabulary of {}",
            dist.len(),
            model.vocabulary().len()
        )));
    }
    let sum: f64 = dist.iter().sum();
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Backend(format!(
            "invalid next-token distribution after {generated:?} (sum {sum})"
        )));
    }
    Ok(dist)
}

/// Beam search over `model` for the source `context`.
///
/// At each step every live hypothesis is extended by every token with
/// non-zero probability; the best `beam_width` candidates survive, and those
/// ending in EOS or reaching `max_len` move to the finished pool. Returns up
/// to `num_return` finished hypotheses, best first.
pub fn beam_search(
    model: &dyn SequenceModel,
    context: &[String],
    config: &BeamConfig,
) -> Result<Vec<BeamHypothesis>> {
    if config.num_return == 0 || config.beam_width < config.num_return {
        return Err(Error::InvalidArgument(format!(
            "need beam_width >= num_return >= 1, got {} and {}",
            config.beam_width, config.num_return
        )));
    }
    if config.max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let vocab = model.vocabulary();
    if vocab.is_empty() {
        return Err(Error::Backend("empty vocabulary".into()));
    }

    let mut alive = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished = Vec::new();
    for _ in 0..config.max_len {
        let mut candidates = Vec::new();
        for hyp in &alive {
            let dist = checked_distribution(model, context, &hyp.tokens)?;
            for (id, &p) in dist.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(vocab.tokens()[id].clone());
                candidates.push(BeamHypothesis {
                    tokens,
                    log_prob: hyp.log_prob + p.ln(),
                });
            }
        }
        candidates.sort_by(|a, b| rank(a, b, config.length_penalty));
        candidates.truncate(config.beam_width);
        alive.clear();
        for c in candidates {
            if c.ended_by_eos() || c.tokens.len() == config.max_len {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    finished.sort_by(|a, b| rank(a, b, config.length_penalty));
    finished.truncate(config.num_return);
    Ok(finished)
}

/// Greedy decoding: take the most probable token at each step (ties go to
/// the lexicographically smallest token) until EOS or `max_len`.
pub fn greedy_decode(
    model: &dyn SequenceModel,
    context: &[String],
    max_len: usize,
) -> Result<BeamHypothesis> {
    let vocab = model.vocabulary();
    let mut hyp = BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    while hyp.tokens.len() < max_len && !hyp.ended_by_eos() {
        let dist = checked_distribution(model, context, &hyp.tokens)?;
        let (best, p) = dist
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .max_by(|(i, p), (j, q)| {
                p.total_cmp(q)
                    .then_with(|| vocab.tokens()[*j].cmp(&vocab.tokens()[*i]))
            })
            .ok_or_else(|| Error::Backend("distribution has no mass".into()))?;
        hyp.tokens.push(vocab.tokens()[best].clone());
        hyp.log_prob += p.ln();
    }
    Ok(hyp)
}
