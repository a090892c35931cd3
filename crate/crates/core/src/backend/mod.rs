//! Model contracts and the deterministic toy backends used at desk scale.
//!
//! A [`SequenceModel`] exposes next-token distributions over its
//! [`Vocabulary`] for a source context and a generated prefix. Training goes
//! through the [`Trainable`] contract, which the phase controller in
//! [`crate::training`] drives. Real pretrained models plug in behind the same
//! traits.

mod beam;
mod bigram;
mod embed;
mod scripted;
mod toy;
mod vocab;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use beam::{beam_search, greedy_decode, BeamConfig, BeamHypothesis};
pub use bigram::BigramLm;
pub use embed::{cosine, make_hash_embedder, Embedder, HashEmbedder};
pub use scripted::Scripted;
pub use toy::{make_toy_lm, ConditionalTable, ToyLm};
pub use vocab::{Vocabulary, BOS, EOS, MASK};

/// Opaque model state captured for checkpointing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub kind: String,
    pub state: serde_json::Value,
}

/// Training stage that produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "phase1")]
    Pretrain,
    #[serde(rename = "phase2")]
    Knowledge,
    #[serde(rename = "extrinsic")]
    Extrinsic,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "phase1",
            Phase::Knowledge => "phase2",
            Phase::Extrinsic => "extrinsic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub phase: Phase,
    pub selected_epoch: u32,
    pub validation_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_hash: Option<String>,
}

/// Ordered record of the training phases a model went through.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub marks: Vec<PhaseMark>,
}

impl Lineage {
    pub fn has(&self, phase: Phase) -> bool {
        self.marks.iter().any(|m| m.phase == phase)
    }

    pub fn last_phase(&self) -> Option<Phase> {
        self.marks.last().map(|m| m.phase)
    }

    pub fn push(&mut self, mark: PhaseMark) {
        self.marks.push(mark);
    }
}

/// Contract the training controller drives.
pub trait Trainable {
    type Example;

    /// One optimization step; returns the batch loss.
    fn train_step(&mut self, batch: &[Self::Example]) -> Result<f64>;

    fn validation_loss(&self, data: &[Self::Example]) -> Result<f64>;

    fn snapshot(&self) -> Result<Snapshot>;

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()>;

    fn lineage(&self) -> &Lineage;

    fn lineage_mut(&mut self) -> &mut Lineage;

    fn set_learning_rate(&mut self, _learning_rate: f64) {}
}

/// Source/target token pair for sequence-to-sequence training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

pub trait SequenceModel: Trainable<Example = TrainingPair> + Send + Sync {
    /// Stable identifier used when saving and loading models.
    fn kind(&self) -> &'static str;

    fn vocabulary(&self) -> &Vocabulary;

    /// Probability of each vocabulary entry (by index) following `generated`,
    /// given the source `context`.
    fn next_token_distribution(&self, context: &[String], generated: &[String])
        -> Result<Vec<f64>>;

    /// Register new source-side tokens such as relation sentinels.
    fn extend_vocabulary(&mut self, tokens: &[String]);
}

/// Mean negative log-likelihood per target token (EOS included).
pub fn sequence_nll(model: &dyn SequenceModel, data: &[TrainingPair]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for pair in data {
        let mut generated: Vec<String> = Vec::with_capacity(pair.target.len() + 1);
        for tok in pair.target.iter().chain(std::iter::once(&EOS.to_string())) {
            let dist = model.next_token_distribution(&pair.source, &generated)?;
            let p = model.vocabulary().id(tok).map(|i| dist[i]).unwrap_or(0.0);
            total += -(p.max(1e-12)).ln();
            count += 1;
            generated.push(tok.clone());
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    Ok(total / count as f64)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    lineage: Lineage,
    state: serde_json::Value,
}

pub const MODEL_FILE: &str = "model.json";

/// Write `model` as `dir/model.json`.
pub fn save_model(dir: &Path, model: &dyn SequenceModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let snap = model.snapshot()?;
    let file = ModelFile {
        format_version: 1,
        kind: snap.kind,
        lineage: model.lineage().clone(),
        state: snap.state,
    };
    fs::write(dir.join(MODEL_FILE), serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<Box<dyn SequenceModel>> {
    let path = dir.join(MODEL_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::in_file(&path, e.into()))?;
    let file: ModelFile =
        serde_json::from_slice(&bytes).map_err(|e| Error::in_file(&path, e.into()))?;
    let snap = Snapshot {
        kind: file.kind,
        state: file.state,
    };
    let mut model: Box<dyn SequenceModel> = match snap.kind.as_str() {
        ToyLm::KIND => Box::new(ToyLm::from_snapshot(&snap)?),
        BigramLm::KIND => Box::new(BigramLm::from_snapshot(&snap)?),
        other => return Err(Error::Backend(format!("unknown model kind `{other}`"))),
    };
    *model.lineage_mut() = file.lineage;
    Ok(model)
}

fn check_kind(snapshot: &Snapshot, expected: &str) -> Result<()> {
    if snapshot.kind != expected {
        return Err(Error::Backend(format!(
            "snapshot of kind `{}` cannot restore a `{expected}` model",
            snapshot.kind
        )));
    }
    Ok(())
}
