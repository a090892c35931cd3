use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    check_kind, sequence_nll, Lineage, SequenceModel, Snapshot, Trainable, TrainingPair,
    Vocabulary, EOS,
};
use crate::error::{Error, Result};

pub type ConditionalTable = BTreeMap<Vec<String>, BTreeMap<String, f64>>;

/// Frozen table language model. Rows are keyed by the generated prefix only;
/// the source context is ignored. Unlisted prefixes back off to a uniform
/// distribution over the vocabulary.
#[derive(Debug, Clone)]
pub struct ToyLm {
    vocab: Vocabulary,
    table: ConditionalTable,
    lineage: Lineage,
}

#[derive(Serialize, Deserialize)]
struct Row {
    prefix: Vec<String>,
    next: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct State {
    vocabulary: Vocabulary,
    rows: Vec<Row>,
}

/// Build a toy LM; the vocabulary is EOS followed by every other token
/// mentioned in the table, in sorted order.
pub fn make_toy_lm(table: ConditionalTable) -> Result<ToyLm> {
    let mut extra = BTreeSet::new();
    for (prefix, row) in &table {
        extra.extend(prefix.iter().cloned());
        extra.extend(row.keys().cloned());
    }
    let mut vocab = Vocabulary::new();
    vocab.insert(EOS);
    for t in &extra {
        vocab.insert(t);
    }
    ToyLm::with_vocabulary(vocab, table)
}

fn check_row(prefix: &[String], row: &BTreeMap<String, f64>) -> Result<()> {
    let sum: f64 = row.values().sum();
    if row.values().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Backend(format!(
            "malformed distribution for prefix {prefix:?}: sums to {sum}"
        )));
    }
    Ok(())
}

impl ToyLm {
    pub const KIND: &'static str = "toy-table";

    pub fn with_vocabulary(vocab: Vocabulary, table: ConditionalTable) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Backend("empty vocabulary".into()));
        }
        for (prefix, row) in &table {
            check_row(prefix, row)?;
            if let Some(t) = row.keys().find(|t| !vocab.contains(t)) {
                return Err(Error::Backend(format!(
                    "token `{t}` missing from vocabulary"
                )));
            }
        }
        Ok(ToyLm {
            vocab,
            table,
            lineage: Lineage::default(),
        })
    }

    pub fn table(&self) -> &ConditionalTable {
        &self.table
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self> {
        check_kind(snapshot, Self::KIND)?;
        let state: State = serde_json::from_value(snapshot.state.clone())?;
        let table = state.rows.into_iter().map(|r| (r.prefix, r.next)).collect();
        ToyLm::with_vocabulary(state.vocabulary, table)
    }
}

impl Trainable for ToyLm {
    type Example = TrainingPair;

    fn train_step(&mut self, _batch: &[TrainingPair]) -> Result<f64> {
        Err(Error::FrozenBackend)
    }

    fn validation_loss(&self, data: &[TrainingPair]) -> Result<f64> {
        sequence_nll(self, data)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        let state = State {
            vocabulary: self.vocab.clone(),
            rows: self
                .table
                .iter()
                .map(|(prefix, next)| Row {
                    prefix: prefix.clone(),
                    next: next.clone(),
                })
                .collect(),
        };
        Ok(Snapshot {
            kind: Self::KIND.into(),
            state: serde_json::to_value(state)?,
        })
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let lineage = std::mem::take(&mut self.lineage);
        *self = ToyLm::from_snapshot(snapshot)?;
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

impl SequenceModel for ToyLm {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_distribution(
        &self,
        _context: &[String],
        generated: &[String],
    ) -> Result<Vec<f64>> {
        match self.table.get(generated) {
            Some(row) => {
                let mut dist = vec![0.0; self.vocab.len()];
                for (tok, p) in row {
                    dist[self.vocab.id(tok).expect("validated")] = *p;
                }
                Ok(dist)
            }
            None => Ok(vec![1.0 / self.vocab.len() as f64; self.vocab.len()]),
        }
    }

    fn extend_vocabulary(&mut self, tokens: &[String]) {
        for t in tokens {
            self.vocab.insert(t);
        }
    }
}
