//! Answer-scorer training and prediction over a QA set.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::eval::PredictionRecord;
use crate::fusion::{FeatureResolver, LinearScorer, QAInstance, ScorerExample};
use crate::inference::SelectionRecord;
use crate::training::{run_phase, PhaseConfig, PhaseOutcome};

/// Selected knowledge sentences per qa_id, in rank order.
pub fn knowledge_by_qa(records: &[SelectionRecord]) -> Result<HashMap<String, Vec<String>>> {
    let mut ranked: HashMap<String, Vec<(usize, String)>> = HashMap::new();
    for r in records {
        let id = r
            .qa_id
            .clone()
            .ok_or_else(|| Error::Malformed("selection record without qa_id".into()))?;
        ranked
            .entry(id)
            .or_default()
            .push((r.rank, r.sentence.clone()));
    }
    Ok(ranked
        .into_iter()
        .map(|(id, mut v)| {
            v.sort_by_key(|(rank, _)| *rank);
            (id, v.into_iter().map(|(_, s)| s).collect())
        })
        .collect())
}

fn visual_dim(instances: &[QAInstance], resolver: &mut FeatureResolver) -> Result<usize> {
    for q in instances {
        if let Some(row) = resolver.resolve(&q.visual_features)?.first() {
            return Ok(row.len());
        }
    }
    Ok(0)
}

pub struct ScorerSettings {
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub use_knowledge: bool,
    pub phase: PhaseConfig,
}

pub struct SeedRun {
    pub scorer: LinearScorer,
    pub outcome: PhaseOutcome,
    pub predictions: Vec<PredictionRecord>,
}

/// Train a fresh scorer on `train` with run seed `seed`, then score every
/// instance of `eval`.
pub fn train_and_predict(
    train: &[QAInstance],
    eval: &[QAInstance],
    knowledge: &HashMap<String, Vec<String>>,
    resolver: &mut FeatureResolver,
    settings: &ScorerSettings,
    seed: u64,
) -> Result<SeedRun> {
    let dim = visual_dim(train, resolver)?;
    let mut scorer = LinearScorer::new(
        settings.embed_dim,
        settings.embed_seed,
        dim,
        settings.use_knowledge,
    )?;
    let none = Vec::new();
    let mut examples = |set: &[QAInstance], scorer: &LinearScorer| -> Result<Vec<ScorerExample>> {
        set.iter()
            .map(|q| {
                let visual = resolver.resolve(&q.visual_features)?;
                scorer.example(q, &visual, knowledge.get(&q.qa_id).unwrap_or(&none))
            })
            .collect()
    };
    let train_ex = examples(train, &scorer)?;
    let eval_ex = examples(eval, &scorer)?;
    let config = PhaseConfig {
        seed,
        ..settings.phase.clone()
    };
    let outcome = run_phase(&mut scorer, &train_ex, &config)?;
    let predictions = eval
        .iter()
        .zip(&eval_ex)
        .map(|(q, ex)| {
            let scores = scorer.score_example(ex)?;
            Ok(PredictionRecord {
                qa_id: q.qa_id.clone(),
                seed,
                scores: scores.scores,
                predicted: scores.predicted(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SeedRun {
        scorer,
        outcome,
        predictions,
    })
}
