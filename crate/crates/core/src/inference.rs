//! Per-relation inference generation, template rendering and
//! query-similarity selection.

use serde::{Deserialize, Serialize};

use crate::backend::{beam_search, cosine, BeamConfig, Embedder, Phase, SequenceModel};
use crate::error::{Error, Result};
use crate::relations::{render_relation, Relation};

/// Tag used when generating knowledge for the (North American) VCR training set.
pub const VCR_COUNTRY_TAG: &str = "North America";
pub const DEFAULT_NUM_RETURN: usize = 5;
pub const DEFAULT_TOP_K: usize = 5;
/// Rendered in place of an empty generated tail.
pub const EMPTY_TAIL: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub context: String,
    pub country_tag: Option<String>,
    pub beam_width: usize,
    pub num_return: usize,
    pub max_len: usize,
    pub relations: Vec<Relation>,
}

impl GenerationRequest {
    /// All 34 relations, 5 beams, 5 returned tails per relation.
    pub fn new(context: impl Into<String>) -> Self {
        GenerationRequest {
            context: context.into(),
            country_tag: None,
            beam_width: DEFAULT_NUM_RETURN,
            num_return: DEFAULT_NUM_RETURN,
            max_len: BeamConfig::default().max_len,
            relations: Relation::ALL.to_vec(),
        }
    }

    pub fn with_country(mut self, tag: impl Into<String>) -> Self {
        self.country_tag = Some(tag.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.context.trim().is_empty() {
            return Err(Error::InvalidArgument("empty generation context".into()));
        }
        if self.num_return < 1 {
            return Err(Error::InvalidArgument(
                "num_return must be at least 1".into(),
            ));
        }
        if self.beam_width < self.num_return {
            return Err(Error::InvalidArgument(format!(
                "beam width {} below num_return {}",
                self.beam_width, self.num_return
            )));
        }
        Ok(())
    }

    fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam_width: self.beam_width,
            max_len: self.max_len,
            num_return: self.num_return,
            length_penalty: None,
        }
    }
}

/// Context tokens, followed by `[country: <tag>]` when a tag is given.
pub fn compose_input(context: &str, country_tag: Option<&str>) -> Vec<String> {
    let mut tokens: Vec<String> = context.split_whitespace().map(str::to_string).collect();
    if let Some(tag) = country_tag {
        let suffix = format!("[country: {tag}]");
        tokens.extend(suffix.split_whitespace().map(str::to_string));
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub tail: String,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInferences {
    pub relation: Relation,
    pub inferences: Vec<Inference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSet {
    pub request: GenerationRequest,
    pub per_relation: Vec<RelationInferences>,
}

impl InferenceSet {
    /// Total number of (tail, log_prob) entries.
    pub fn len(&self) -> usize {
        self.per_relation.iter().map(|r| r.inferences.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self, qa_id: Option<&str>) -> Vec<InferenceRecord> {
        self.per_relation
            .iter()
            .flat_map(|r| {
                r.inferences.iter().map(move |inf| InferenceRecord {
                    qa_id: qa_id.map(str::to_string),
                    context: self.request.context.clone(),
                    country_tag: self.request.country_tag.clone(),
                    relation: Some(r.relation),
                    tail: inf.tail.clone(),
                    log_prob: inf.log_prob,
                })
            })
            .collect()
    }
}

/// Beam search over the composed input plus each requested relation's sentinel.
pub fn generate_inferences(
    model: &dyn SequenceModel,
    request: &GenerationRequest,
) -> Result<InferenceSet> {
    request.validate()?;
    let base = compose_input(&request.context, request.country_tag.as_deref());
    let config = request.beam_config();
    let mut per_relation = Vec::with_capacity(request.relations.len());
    for &relation in &request.relations {
        let mut input = base.clone();
        input.push(relation.sentinel());
        let wrap = |e: Error| Error::ForRelation {
            relation: relation.name().to_string(),
            source: Box::new(e),
        };
        let hyps = beam_search(model, &input, &config).map_err(wrap)?;
        if hyps.len() < request.num_return {
            return Err(wrap(Error::Backend(format!(
                "beam search produced {} of {} requested hypotheses",
                hyps.len(),
                request.num_return
            ))));
        }
        per_relation.push(RelationInferences {
            relation,
            inferences: hyps
                .iter()
                .map(|h| Inference {
                    tail: h.text(),
                    log_prob: h.log_prob,
                })
                .collect(),
        });
    }
    Ok(InferenceSet {
        request: request.clone(),
        per_relation,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `None` for free-form generations.
    pub relation: Option<Relation>,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSentence {
    pub sentence: String,
    pub provenance: Provenance,
}

pub fn render_inference(head: &str, relation: Relation, tail: &str) -> Result<String> {
    let tail = if tail.trim().is_empty() {
        EMPTY_TAIL
    } else {
        tail
    };
    render_relation(head, relation, tail)
}

/// One sentence per inference, relation by relation in set order, then beam order.
pub fn to_sentences(set: &InferenceSet) -> Result<Vec<KnowledgeSentence>> {
    let mut out = Vec::with_capacity(set.len());
    for r in &set.per_relation {
        for inf in &r.inferences {
            out.push(KnowledgeSentence {
                sentence: render_inference(&set.request.context, r.relation, &inf.tail)?,
                provenance: Provenance {
                    relation: Some(r.relation),
                    tail: inf.tail.clone(),
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSentence {
    pub sentence: String,
    pub provenance: Provenance,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedKnowledge {
    pub query: String,
    pub items: Vec<SelectedSentence>,
}

impl SelectedKnowledge {
    pub fn records(&self, qa_id: Option<&str>) -> Vec<SelectionRecord> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, s)| SelectionRecord {
                qa_id: qa_id.map(str::to_string),
                query: self.query.clone(),
                sentence: s.sentence.clone(),
                relation: s.provenance.relation,
                similarity: s.similarity,
                rank: i + 1,
            })
            .collect()
    }
}

/// The `k` sentences most cosine-similar to `query`, best first; ties keep
/// input order.
pub fn select_top_k(
    sentences: &[KnowledgeSentence],
    query: &str,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<SelectedKnowledge> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let q = embedder.embed(query);
    let mut scored: Vec<SelectedSentence> = sentences
        .iter()
        .map(|s| SelectedSentence {
            sentence: s.sentence.clone(),
            provenance: s.provenance.clone(),
            similarity: cosine(&q, &embedder.embed(&s.sentence)),
        })
        .collect();
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    scored.truncate(k);
    Ok(SelectedKnowledge {
        query: query.to_string(),
        items: scored,
    })
}

/// Free-form continuation of the composed input with no relation sentinel,
/// for a model that only went through denoising pretraining.
pub fn generate_freeform(
    model: &dyn SequenceModel,
    request: &GenerationRequest,
) -> Result<Vec<Inference>> {
    let lineage = model.lineage();
    if !lineage.has(Phase::Pretrain) || lineage.has(Phase::Knowledge) {
        return Err(Error::AblationRequiresPhase1);
    }
    request.validate()?;
    let input = compose_input(&request.context, request.country_tag.as_deref());
    let hyps = beam_search(model, &input, &request.beam_config())?;
    if hyps.len() < request.num_return {
        return Err(Error::Backend(format!(
            "beam search produced {} of {} requested hypotheses",
            hyps.len(),
            request.num_return
        )));
    }
    Ok(hyps
        .iter()
        .map(|h| Inference {
            tail: h.text(),
            log_prob: h.log_prob,
        })
        .collect())
}

/// Dump records for free-form generations.
pub fn freeform_records(
    request: &GenerationRequest,
    texts: &[Inference],
    qa_id: Option<&str>,
) -> Vec<InferenceRecord> {
    texts
        .iter()
        .map(|t| InferenceRecord {
            qa_id: qa_id.map(str::to_string),
            context: request.context.clone(),
            country_tag: request.country_tag.clone(),
            relation: None,
            tail: t.tail.clone(),
            log_prob: t.log_prob,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_id: Option<String>,
    pub context: String,
    pub country_tag: Option<String>,
    /// `None` for free-form generations.
    pub relation: Option<Relation>,
    pub tail: String,
    pub log_prob: f64,
}

impl InferenceRecord {
    /// Template rendering for relation inferences; free-form text is used as is.
    pub fn to_sentence(&self) -> Result<KnowledgeSentence> {
        let sentence = match self.relation {
            Some(r) => render_inference(&self.context, r, &self.tail)?,
            None if self.tail.trim().is_empty() => EMPTY_TAIL.to_string(),
            None => self.tail.clone(),
        };
        Ok(KnowledgeSentence {
            sentence,
            provenance: Provenance {
                relation: self.relation,
                tail: self.tail.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_id: Option<String>,
    pub query: String,
    pub sentence: String,
    pub relation: Option<Relation>,
    pub similarity: f64,
    pub rank: usize,
}

/// Consecutive runs of records sharing a `(qa_id, context, country_tag)` key.
pub fn group_records(records: &[InferenceRecord]) -> Vec<&[InferenceRecord]> {
    let same = |a: &InferenceRecord, b: &InferenceRecord| {
        a.qa_id == b.qa_id && a.context == b.context && a.country_tag == b.country_tag
    };
    records.chunk_by(|a, b| same(a, b)).collect()
}
