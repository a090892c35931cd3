use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    check_kind, sequence_nll, Lineage, SequenceModel, Snapshot, Trainable, TrainingPair,
    Vocabulary, BOS, EOS,
};
use crate::error::Result;

/// Trainable count-based bigram model with add-`alpha` smoothing.
///
/// The first generated token is conditioned on the last source token, which
/// for serialized triples is the relation sentinel. Only tokens seen on the
/// target side (and EOS) receive probability mass.
#[derive(Debug, Clone)]
pub struct BigramLm {
    alpha: f64,
    vocab: Vocabulary,
    emittable: BTreeSet<String>,
    counts: BTreeMap<String, BTreeMap<String, f64>>,
    lineage: Lineage,
}

#[derive(Serialize, Deserialize)]
struct State {
    alpha: f64,
    vocabulary: Vocabulary,
    emittable: BTreeSet<String>,
    counts: BTreeMap<String, BTreeMap<String, f64>>,
}

impl BigramLm {
    pub const KIND: &'static str = "bigram";

    pub fn new(alpha: f64) -> Self {
        let mut emittable = BTreeSet::new();
        emittable.insert(EOS.to_string());
        BigramLm {
            alpha,
            vocab: Vocabulary::with_sentinels(),
            emittable,
            counts: BTreeMap::new(),
            lineage: Lineage::default(),
        }
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self> {
        check_kind(snapshot, Self::KIND)?;
        let s: State = serde_json::from_value(snapshot.state.clone())?;
        Ok(BigramLm {
            alpha: s.alpha,
            vocab: s.vocabulary,
            emittable: s.emittable,
            counts: s.counts,
            lineage: Lineage::default(),
        })
    }

    fn observe(&mut self, pair: &TrainingPair) {
        for t in &pair.source {
            self.vocab.insert(t);
        }
        let mut prev = pair
            .source
            .last()
            .cloned()
            .unwrap_or_else(|| BOS.to_string());
        for tok in pair.target.iter().map(String::as_str).chain([EOS]) {
            self.vocab.insert(tok);
            self.emittable.insert(tok.to_string());
            *self
                .counts
                .entry(prev)
                .or_default()
                .entry(tok.to_string())
                .or_default() += 1.0;
            prev = tok.to_string();
        }
    }
}

impl Trainable for BigramLm {
    type Example = TrainingPair;

    fn train_step(&mut self, batch: &[TrainingPair]) -> Result<f64> {
        let loss = if batch.is_empty() {
            0.0
        } else {
            sequence_nll(self, batch)?
        };
        for pair in batch {
            self.observe(pair);
        }
        Ok(loss)
    }

    fn validation_loss(&self, data: &[TrainingPair]) -> Result<f64> {
        sequence_nll(self, data)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        let state = State {
            alpha: self.alpha,
            vocabulary: self.vocab.clone(),
            emittable: self.emittable.clone(),
            counts: self.counts.clone(),
        };
        Ok(Snapshot {
            kind: Self::KIND.into(),
            state: serde_json::to_value(state)?,
        })
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let lineage = std::mem::take(&mut self.lineage);
        *self = BigramLm::from_snapshot(snapshot)?;
        self.lineage = lineage;
        Ok(())
    }

    fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    fn lineage_mut(&mut self) -> &mut Lineage {
        &mut self.lineage
    }
}

impl SequenceModel for BigramLm {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_distribution(
        &self,
        context: &[String],
        generated: &[String],
    ) -> Result<Vec<f64>> {
        let prev = generated
            .last()
            .or(context.last())
            .map(String::as_str)
            .unwrap_or(BOS);
        let mut dist = vec![0.0; self.vocab.len()];
        let k = self.emittable.len() as f64;
        match self.counts.get(prev) {
            Some(row) => {
                let total: f64 = row.values().sum();
                for tok in &self.emittable {
                    let c = row.get(tok).copied().unwrap_or(0.0);
                    dist[self
                        .vocab
                        .id(tok)
                        .expect("emittable tokens are in vocabulary")] =
                        (c + self.alpha) / (total + self.alpha * k);
                }
            }
            None => {
                for tok in &self.emittable {
                    dist[self
                        .vocab
                        .id(tok)
                        .expect("emittable tokens are in vocabulary")] = 1.0 / k;
                }
            }
        }
        Ok(dist)
    }

    fn extend_vocabulary(&mut self, tokens: &[String]) {
        for t in tokens {
            self.vocab.insert(t);
        }
    }
}
