use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Lineage, SequenceModel, Snapshot, Trainable, TrainingPair, Vocabulary};
use crate::error::{Error, Result};

/// Wraps a model and replaces its validation losses with a fixed script,
/// one entry per call. Training and generation go to the inner model.
pub struct Scripted {
    inner: Box<dyn SequenceModel>,
    losses: Vec<f64>,
    calls: AtomicUsize,
}

impl Scripted {
    pub fn new(inner: Box<dyn SequenceModel>, losses: Vec<f64>) -> Self {
        Scripted {
            inner,
            losses,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn into_inner(self) -> Box<dyn SequenceModel> {
        self.inner
    }
}

impl Trainable for Scripted {
    type Example = TrainingPair;

    fn train_step(&mut self, batch: &[TrainingPair]) -> Result<f64> {
        self.inner.train_step(batch)
    }

    fn validation_loss(&self, _data: &[TrainingPair]) -> Result<f64> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        self.losses.get(i).copied().ok_or_else(|| {
            Error::Backend(format!(
                "loss script exhausted after {} calls",
                self.losses.len()
            ))
        })
    }

    fn snapshot(&self) -> Result<Snapshot> {
        self.inner.snapshot()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.inner.restore(snapshot)
    }

    fn lineage(&self) -> &Lineage {
        self.inner.lineage()
    }

    fn lineage_mut(&mut self) -> &mut Lineage {
        self.inner.lineage_mut()
    }

    fn set_learning_rate(&mut self, learning_rate: f64) {
        self.inner.set_learning_rate(learning_rate)
    }
}

impl SequenceModel for Scripted {
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }

    fn next_token_distribution(
        &self,
        context: &[String],
        generated: &[String],
    ) -> Result<Vec<f64>> {
        self.inner.next_token_distribution(context, generated)
    }

    fn extend_vocabulary(&mut self, tokens: &[String]) {
        self.inner.extend_vocabulary(tokens)
    }
}
