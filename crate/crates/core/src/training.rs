//! Two-phase training schedule: denoising pretraining on cultural assertions,
//! then knowledge-triple fine-tuning, each keeping the checkpoint with the
//! lowest validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{Phase, PhaseMark, SequenceModel, Snapshot, Trainable, TrainingPair};
use crate::corpus::KnowledgeTriple;
use crate::error::{Error, Result};
use crate::noising::NoisedRecord;
use crate::relations::Relation;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase: Phase,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl PhaseConfig {
    /// Denoising pretraining: 50 epochs, 5% held out for validation.
    pub fn phase1() -> Self {
        PhaseConfig {
            phase: Phase::Pretrain,
            epochs: 50,
            learning_rate: 1e-5,
            batch_size: 32,
            validation_fraction: 0.05,
            seed: 0,
        }
    }

    pub fn phase2() -> Self {
        PhaseConfig {
            phase: Phase::Knowledge,
            epochs: 3,
            learning_rate: 1e-5,
            batch_size: 32,
            validation_fraction: 0.05,
            seed: 0,
        }
    }

    /// Answer-scorer training: 20 epochs.
    pub fn extrinsic() -> Self {
        PhaseConfig {
            phase: Phase::Extrinsic,
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: u32,
    pub validation_loss: f64,
}

/// Lowest validation loss; ties go to the earliest epoch.
pub fn select_checkpoint(records: &[CheckpointRecord]) -> Result<CheckpointRecord> {
    records
        .iter()
        .copied()
        .reduce(|best, r| {
            if r.validation_loss < best.validation_loss
                || (r.validation_loss == best.validation_loss && r.epoch < best.epoch)
            {
                r
            } else {
                best
            }
        })
        .ok_or_else(|| Error::InvalidArgument("no checkpoint records".into()))
}

/// Indices of the validation subset: `round(fraction * n)` (at least one)
/// drawn by a seeded shuffle, returned in ascending order.
pub fn validation_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    let size = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut picked = order[..size].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Disjoint, exhaustive train/validation split; each side keeps input order.
pub fn split_validation<T: Clone>(
    data: &[T],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let held = validation_indices(data.len(), fraction, seed)?;
    let mut is_held = vec![false; data.len()];
    for &i in &held {
        is_held[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (item, held) in data.iter().zip(is_held) {
        if held {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: Phase,
    pub selected: CheckpointRecord,
    pub history: Vec<CheckpointRecord>,
    pub train_losses: Vec<f64>,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Fixed-epoch training with per-epoch validation. The model is left
/// restored to the selected checkpoint and a lineage mark is appended.
pub fn run_phase<M>(
    model: &mut M,
    data: &[M::Example],
    config: &PhaseConfig,
) -> Result<PhaseOutcome>
where
    M: Trainable + ?Sized,
    M::Example: Clone,
{
    config.validate()?;
    let (mut train, val) = split_validation(data, config.validation_fraction, config.seed)?;
    model.set_learning_rate(config.learning_rate);

    let mut history = Vec::with_capacity(config.epochs as usize);
    let mut train_losses = Vec::with_capacity(config.epochs as usize);
    let mut best: Option<(CheckpointRecord, Snapshot)> = None;
    for epoch in 1..=config.epochs {
        train.shuffle(&mut seeded(derive_seed(config.seed, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in train.chunks(config.batch_size) {
            epoch_loss += model.train_step(batch)?;
            batches += 1;
        }
        train_losses.push(if batches == 0 {
            0.0
        } else {
            epoch_loss / batches as f64
        });

        let loss = model.validation_loss(&val)?;
        if !loss.is_finite() {
            return Err(Error::Backend(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let record = CheckpointRecord {
            epoch,
            validation_loss: loss,
        };
        history.push(record);
        if best.as_ref().is_none_or(|(b, _)| loss < b.validation_loss) {
            best = Some((record, model.snapshot()?));
        }
    }

    let selected = select_checkpoint(&history)?;
    let (kept, snapshot) = best.expect("at least one epoch ran");
    debug_assert_eq!(kept, selected);
    model.restore(&snapshot)?;
    model.lineage_mut().push(PhaseMark {
        phase: config.phase,
        selected_epoch: selected.epoch,
        validation_loss: selected.validation_loss,
        data_hash: None,
    });
    Ok(PhaseOutcome {
        phase: config.phase,
        selected,
        history,
        train_losses,
        train_size: train.len(),
        validation_size: val.len(),
    })
}

/// Denoising pretraining over noised assertions.
pub fn run_phase1(
    model: &mut dyn SequenceModel,
    data: &[NoisedRecord],
    config: &PhaseConfig,
) -> Result<PhaseOutcome> {
    if config.phase != Phase::Pretrain {
        return Err(Error::InvalidArgument(format!(
            "phase-1 run given a {} config",
            config.phase
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "phase 1 needs a non-empty dataset".into(),
        ));
    }
    if model.lineage().has(Phase::Knowledge) {
        return Err(Error::PhaseOrdering(
            "model already went through phase 2".into(),
        ));
    }
    let pairs: Vec<TrainingPair> = data
        .iter()
        .map(|r| TrainingPair {
            source: r.source_tokens.clone(),
            target: r.target_tokens.clone(),
        })
        .collect();
    run_phase(model, &pairs, config)
}

/// Source is the whitespace-split head followed by one relation sentinel
/// (`[xNeed]`); target is the whitespace-split tail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedTriple {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SerializedTriple {
    pub fn source_text(&self) -> String {
        self.source.join(" ")
    }

    pub fn target_text(&self) -> String {
        self.target.join(" ")
    }

    /// Recover the triple; the sentinel must be the last source token and
    /// must not appear anywhere else.
    pub fn parse(&self) -> Result<KnowledgeTriple> {
        let (last, head) = self
            .source
            .split_last()
            .ok_or_else(|| Error::Malformed("empty serialized source".into()))?;
        let relation = Relation::from_sentinel(last)
            .ok_or_else(|| Error::Malformed(format!("`{last}` is not a relation sentinel")))?;
        if head.iter().any(|t| Relation::from_sentinel(t).is_some()) {
            return Err(Error::Malformed("more than one relation sentinel".into()));
        }
        KnowledgeTriple::new(&head.join(" "), relation, &self.target.join(" "))
    }
}

impl From<&SerializedTriple> for TrainingPair {
    fn from(s: &SerializedTriple) -> Self {
        TrainingPair {
            source: s.source.clone(),
            target: s.target.clone(),
        }
    }
}

pub fn serialize_triple(triple: &KnowledgeTriple) -> SerializedTriple {
    let mut source: Vec<String> = triple.head.split_whitespace().map(str::to_string).collect();
    source.push(triple.relation.sentinel());
    SerializedTriple {
        source,
        target: triple.tail.split_whitespace().map(str::to_string).collect(),
    }
}

pub fn serialize_triples(triples: &[KnowledgeTriple]) -> Vec<SerializedTriple> {
    triples.iter().map(serialize_triple).collect()
}

/// Knowledge fine-tuning. The model must come out of phase 1; relation
/// sentinels are added to its vocabulary before training.
pub fn run_phase2(
    model: &mut dyn SequenceModel,
    triples: &[KnowledgeTriple],
    config: &PhaseConfig,
) -> Result<PhaseOutcome> {
    if config.phase != Phase::Knowledge {
        return Err(Error::InvalidArgument(format!(
            "phase-2 run given a {} config",
            config.phase
        )));
    }
    if model.lineage().last_phase() != Some(Phase::Pretrain) {
        return Err(Error::PhaseOrdering(
            "phase 2 requires a model whose last training phase is phase 1".into(),
        ));
    }
    if triples.is_empty() {
        return Err(Error::InvalidArgument(
            "phase 2 needs a non-empty triple set".into(),
        ));
    }
    let sentinels: Vec<String> = Relation::ALL.iter().map(|r| r.sentinel()).collect();
    model.extend_vocabulary(&sentinels);
    let pairs: Vec<TrainingPair> = serialize_triples(triples)
        .iter()
        .map(TrainingPair::from)
        .collect();
    run_phase(model, &pairs, config)
}
