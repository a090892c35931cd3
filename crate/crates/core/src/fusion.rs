//! Knowledge fusion for multiple-choice QA: caption noun phrases become a
//! knowledge query, selected sentences are pooled into one knowledge token,
//! and a scorer rates each answer.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Embedder, HashEmbedder, Lineage, Snapshot, Trainable};
use crate::error::{Error, Result};
use crate::inference::GenerationRequest;

pub const NUM_ANSWERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "West")]
    West,
    #[serde(rename = "South Asia")]
    SouthAsia,
    #[serde(rename = "East Asia")]
    EastAsia,
    #[serde(rename = "Africa")]
    Africa,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::West,
        Region::SouthAsia,
        Region::EastAsia,
        Region::Africa,
    ];
    /// Column order of the accuracy table.
    pub const TABLE_ORDER: [Region; 4] = [
        Region::West,
        Region::SouthAsia,
        Region::Africa,
        Region::EastAsia,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Region::West => "West",
            Region::SouthAsia => "South Asia",
            Region::EastAsia => "East Asia",
            Region::Africa => "Africa",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown region `{s}`")))
    }
}

/// Image-region features, inline or as a row of a binary sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VisualFeatures {
    Sidecar { path: String, row: usize },
    Inline(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAInstance {
    pub qa_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub region: Region,
    pub country_tag: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_tags: Option<Vec<String>>,
    pub question: String,
    pub answers: Vec<String>,
    pub gold_index: usize,
    pub visual_features: VisualFeatures,
}

impl QAInstance {
    pub fn validate(&self) -> Result<()> {
        if self.answers.len() != NUM_ANSWERS {
            return Err(Error::Malformed(format!(
                "{}: expected {NUM_ANSWERS} answers, found {}",
                self.qa_id,
                self.answers.len()
            )));
        }
        if self.gold_index >= NUM_ANSWERS {
            return Err(Error::Malformed(format!(
                "{}: gold index {} out of range",
                self.qa_id, self.gold_index
            )));
        }
        Ok(())
    }

    /// Caption tokens paired with their part-of-speech labels.
    pub fn tagged_caption(&self) -> Result<Vec<(String, String)>> {
        let tags = self
            .caption_tags
            .as_ref()
            .ok_or_else(|| Error::Malformed(format!("{}: caption has no tags", self.qa_id)))?;
        let tokens: Vec<&str> = self.caption.split_whitespace().collect();
        if tokens.len() != tags.len() {
            return Err(Error::Malformed(format!(
                "{}: {} caption tokens but {} tags",
                self.qa_id,
                tokens.len(),
                tags.len()
            )));
        }
        Ok(tokens
            .into_iter()
            .zip(tags)
            .map(|(t, g)| (t.to_string(), g.clone()))
            .collect())
    }
}

pub fn load_qa(path: &Path) -> Result<Vec<QAInstance>> {
    let items: Vec<QAInstance> = crate::jsonl::load_jsonl(path)?;
    for (i, q) in items.iter().enumerate() {
        q.validate()
            .map_err(|e| Error::in_file(path, Error::at_line(i + 1, e)))?;
    }
    Ok(items)
}

/// Parse `word/TAG` tokens.
pub fn parse_tagged(text: &str) -> Result<Vec<(String, String)>> {
    text.split_whitespace()
        .map(|tok| match tok.rsplit_once('/') {
            Some((w, t)) if !w.is_empty() && !t.is_empty() => Ok((w.to_string(), t.to_string())),
            _ => Err(Error::Malformed(format!("token `{tok}` has no tag"))),
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Pos {
    Det,
    Adj,
    Noun,
    Other,
}

fn pos(tag: &str) -> Pos {
    match tag {
        "DET" => Pos::Det,
        "ADJ" => Pos::Adj,
        "NOUN" | "PROPN" => Pos::Noun,
        _ => Pos::Other,
    }
}

/// Maximal `DET? ADJ* NOUN+` spans, scanned left to right without overlap.
pub fn extract_noun_phrases(tagged: &[(String, String)]) -> Result<Vec<String>> {
    if let Some((w, _)) = tagged.iter().find(|(_, t)| t.trim().is_empty()) {
        return Err(Error::Malformed(format!("token `{w}` has no tag")));
    }
    let tags: Vec<Pos> = tagged.iter().map(|(_, t)| pos(t)).collect();
    let mut phrases = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let mut j = i;
        if tags[j] == Pos::Det {
            j += 1;
        }
        while j < tags.len() && tags[j] == Pos::Adj {
            j += 1;
        }
        let noun_start = j;
        while j < tags.len() && tags[j] == Pos::Noun {
            j += 1;
        }
        if j > noun_start {
            let words: Vec<&str> = tagged[i..j].iter().map(|(w, _)| w.as_str()).collect();
            phrases.push(words.join(" "));
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(phrases)
}

/// Knowledge query: caption noun phrases joined by ", ", then " . ", then the question.
pub fn build_knowledge_query(instance: &QAInstance) -> Result<GenerationRequest> {
    let phrases = extract_noun_phrases(&instance.tagged_caption()?)?;
    let context = if phrases.is_empty() {
        instance.question.clone()
    } else {
        format!("{} . {}", phrases.join(", "), instance.question)
    };
    Ok(GenerationRequest::new(context).with_country(instance.country_tag.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionPooler {
    pub query: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `softmax(q . e_i)`-weighted average of the embeddings.
pub fn attention_pool(embeddings: &[Vec<f64>], pooler: &AttentionPooler) -> Result<Pooled> {
    let d = pooler.query.len();
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot pool an empty embedding list".into(),
        ));
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::InvalidArgument(format!(
            "embedding of dimension {} does not match pooler dimension {d}",
            e.len()
        )));
    }
    let logits: Vec<f64> = embeddings.iter().map(|e| dot(&pooler.query, e)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut vector = vec![0.0; d];
    for (w, e) in weights.iter().zip(embeddings) {
        for (v, x) in vector.iter_mut().zip(e) {
            *v += w * x;
        }
    }
    Ok(Pooled { vector, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub scores: [f64; NUM_ANSWERS],
}

impl AnswerScores {
    /// Highest score; ties go to the lowest index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_ANSWERS {
            if self.scores[i] > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

pub trait AnswerScorer: Send + Sync {
    fn score(
        &self,
        question: &str,
        answer: &str,
        visual: &[Vec<f64>],
        knowledge: &[f64],
    ) -> Result<f64>;
}

/// Score each of the four answers independently.
pub fn score_answers(
    instance: &QAInstance,
    visual: &[Vec<f64>],
    knowledge: &[f64],
    scorer: &dyn AnswerScorer,
) -> Result<AnswerScores> {
    instance.validate()?;
    let mut scores = [0.0; NUM_ANSWERS];
    for (i, answer) in instance.answers.iter().enumerate() {
        let s = scorer
            .score(&instance.question, answer, visual, knowledge)
            .map_err(|e| Error::ForAnswer {
                index: i,
                source: Box::new(e),
            })?;
        if !s.is_finite() {
            return Err(Error::ForAnswer {
                index: i,
                source: Box::new(Error::Backend(format!("non-finite score {s}"))),
            });
        }
        scores[i] = s;
    }
    Ok(AnswerScores { scores })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of `sigmoid(score)` against the one-hot gold answer.
pub fn bce_loss(scores: &[f64; NUM_ANSWERS], gold_index: usize) -> Result<f64> {
    if gold_index >= NUM_ANSWERS {
        return Err(Error::InvalidArgument(format!(
            "gold index {gold_index} out of range"
        )));
    }
    // -ln sigmoid(s) = softplus(-s); -ln(1 - sigmoid(s)) = softplus(s)
    let total: f64 = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == gold_index {
                softplus(-s)
            } else {
                softplus(s)
            }
        })
        .sum();
    Ok(total / NUM_ANSWERS as f64)
}

/// Precomputed scorer inputs for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerExample {
    pub question: Vec<f64>,
    pub answers: Vec<Vec<f64>>,
    pub visual: Vec<f64>,
    pub knowledge: Vec<Vec<f64>>,
    pub gold_index: usize,
}

pub fn mean_visual(visual: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    if visual.is_empty() {
        return Ok(out);
    }
    for row in visual {
        if row.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "visual feature of dimension {} where {dim} expected",
                row.len()
            )));
        }
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= visual.len() as f64);
    Ok(out)
}

/// Toy answer scorer: a linear read-out over
/// `[mean visual; q; a; k; a*q; a*k]` plus a bias, where `q`, `a` are hashed
/// sentence embeddings and `k` is the pooled knowledge token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub visual_dim: usize,
    pub use_knowledge: bool,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub pooler: AttentionPooler,
    #[serde(default)]
    pub learning_rate: f64,
    #[serde(default)]
    pub lineage: Lineage,
}

impl LinearScorer {
    pub const KIND: &'static str = "linear-scorer";
    pub const FILE: &'static str = "scorer.json";

    /// All-zero parameters.
    pub fn new(
        embed_dim: usize,
        embed_seed: u64,
        visual_dim: usize,
        use_knowledge: bool,
    ) -> Result<Self> {
        crate::backend::make_hash_embedder(embed_dim, embed_seed)?;
        Ok(LinearScorer {
            embed_dim,
            embed_seed,
            visual_dim,
            use_knowledge,
            weights: vec![0.0; visual_dim + 5 * embed_dim],
            bias: 0.0,
            pooler: AttentionPooler {
                query: vec![0.0; embed_dim],
            },
            learning_rate: 0.05,
            lineage: Lineage::default(),
        })
    }

    pub fn embedder(&self) -> HashEmbedder {
        crate::backend::make_hash_embedder(self.embed_dim, self.embed_seed)
            .expect("dimension checked at construction")
    }

    /// Knowledge token for a list of sentence embeddings; zeros when the list
    /// is empty or knowledge is disabled.
    pub fn knowledge_token(&self, sentence_embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        if !self.use_knowledge || sentence_embeddings.is_empty() {
            return Ok(vec![0.0; self.embed_dim]);
        }
        Ok(attention_pool(sentence_embeddings, &self.pooler)?.vector)
    }

    pub fn example(
        &self,
        instance: &QAInstance,
        visual: &[Vec<f64>],
        knowledge: &[String],
    ) -> Result<ScorerExample> {
        instance.validate()?;
        let emb = self.embedder();
        Ok(ScorerExample {
            question: emb.embed(&instance.question),
            answers: instance.answers.iter().map(|a| emb.embed(a)).collect(),
            visual: mean_visual(visual, self.visual_dim)?,
            knowledge: knowledge.iter().map(|s| emb.embed(s)).collect(),
            gold_index: instance.gold_index,
        })
    }

    fn features(&self, visual: &[f64], q: &[f64], a: &[f64], k: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.weights.len());
        f.extend_from_slice(visual);
        f.extend_from_slice(q);
        f.extend_from_slice(a);
        f.extend_from_slice(k);
        f.extend(a.iter().zip(q).map(|(x, y)| x * y));
        f.extend(a.iter().zip(k).map(|(x, y)| x * y));
        f
    }

    fn raw_score(&self, visual: &[f64], q: &[f64], a: &[f64], k: &[f64]) -> f64 {
        dot(&self.weights, &self.features(visual, q, a, k)) + self.bias
    }

    pub fn score_example(&self, ex: &ScorerExample) -> Result<AnswerScores> {
        self.check_example(ex)?;
        let k = self.knowledge_token(&ex.knowledge)?;
        let mut scores = [0.0; NUM_ANSWERS];
        for (s, a) in scores.iter_mut().zip(&ex.answers) {
            *s = self.raw_score(&ex.visual, &ex.question, a, &k);
        }
        Ok(AnswerScores { scores })
    }

    fn check_example(&self, ex: &ScorerExample) -> Result<()> {
        let d = self.embed_dim;
        if ex.answers.len() != NUM_ANSWERS
            || ex.gold_index >= NUM_ANSWERS
            || ex.question.len() != d
            || ex.answers.iter().any(|a| a.len() != d)
            || ex.visual.len() != self.visual_dim
            || ex.knowledge.iter().any(|k| k.len() != d)
        {
            return Err(Error::InvalidArgument(
                "scorer example has the wrong shape".into(),
            ));
        }
        Ok(())
    }

    /// Loss and gradients (weights, bias, pooler query) for one example.
    fn gradients(&self, ex: &ScorerExample) -> Result<(f64, Vec<f64>, f64, Vec<f64>)> {
        let d = self.embed_dim;
        let v = self.visual_dim;
        let pooled = if self.use_knowledge && !ex.knowledge.is_empty() {
            Some(attention_pool(&ex.knowledge, &self.pooler)?)
        } else {
            None
        };
        let k = pooled
            .as_ref()
            .map_or_else(|| vec![0.0; d], |p| p.vector.clone());
        let scores = self.score_example(ex)?;
        let loss = bce_loss(&scores.scores, ex.gold_index)?;

        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        let mut gk = vec![0.0; d];
        let w_k = &self.weights[v + 2 * d..v + 3 * d];
        let w_ak = &self.weights[v + 4 * d..v + 5 * d];
        for (i, a) in ex.answers.iter().enumerate() {
            let y = if i == ex.gold_index { 1.0 } else { 0.0 };
            let ds = (sigmoid(scores.scores[i]) - y) / NUM_ANSWERS as f64;
            for (g, f) in gw
                .iter_mut()
                .zip(self.features(&ex.visual, &ex.question, a, &k))
            {
                *g += ds * f;
            }
            gb += ds;
            for j in 0..d {
                gk[j] += ds * (w_k[j] + w_ak[j] * a[j]);
            }
        }

        // d k / d q = sum_i w_i e_i (e_i - k)^T
        let mut gq = vec![0.0; d];
        if let Some(p) = pooled {
            for (w, e) in p.weights.iter().zip(&ex.knowledge) {
                let ge = dot(&gk, e);
                for j in 0..d {
                    gq[j] += w * ge * (e[j] - k[j]);
                }
            }
        }
        Ok((loss, gw, gb, gq))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(Self::FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let bytes = fs::read(&path).map_err(|e| Error::in_file(&path, e.into()))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::in_file(&path, e.into()))
    }
}

impl AnswerScorer for LinearScorer {
    fn score(
        &self,
        question: &str,
        answer: &str,
        visual: &[Vec<f64>],
        knowledge: &[f64],
    ) -> Result<f64> {
        if knowledge.len() != self.embed_dim {
            return Err(Error::InvalidArgument(format!(
                "knowledge token of dimension {} where {} expected",
                knowledge.len(),
                self.embed_dim
            )));
        }
        let emb = self.embedder();
        let zeros;
        let k = if self.use_knowledge {
            knowledge
        } else {
            zeros = vec![0.0; self.embed_dim];
            &zeros
        };
        Ok(self.raw_score(
            &mean_visual(visual, self.visual_dim)?,
            &emb.embed(question),
            &emb.embed(answer),
            k,
        ))
    }
}

impl Trainable for LinearScorer {
    type Example = ScorerExample;

    /// One SGD step on the batch-mean BCE; returns the pre-update loss.
    fn train_step(&mut self, batch: &[ScorerExample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let n = batch.len() as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        let mut gq = vec![0.0; self.embed_dim];
        let mut loss = 0.0;
        for ex in batch {
            let (l, w, b, q) = self.gradients(ex)?;
            loss += l;
            gw.iter_mut().zip(w).for_each(|(g, x)| *g += x);
            gb += b;
            gq.iter_mut().zip(q).for_each(|(g, x)| *g += x);
        }
        let lr = self.learning_rate;
        self.weights
            .iter_mut()
            .zip(gw)
            .for_each(|(w, g)| *w -= lr * g / n);
        self.bias -= lr * gb / n;
        self.pooler
            .query
            .iter_mut()
            .zip(gq)
            .for_each(|(q, g)| *q -= lr * g / n);
        Ok(loss / n)
    }

    fn validation_loss(&self, data: &[ScorerExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        let mut total = 0.0;
        for ex in data {
            total += bce_loss(&self.score_example(ex)?.scores, ex.gold_index)?;
        }
        Ok(total / data.len() as f64)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        Ok(Snapshot {
            kind: Self::KIND.to_string(),
            state: serde_json::json!({
                "weights": self.weights,
                "bias": self.bias,
                "pooler": self.pooler,
            }),
        })
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        if snapshot.kind != Self::KIND {
            return Err(Error::Backend(format!(
                "cannot restore a `{}` snapshot",
                snapshot.kind
            )));
        }
        #[derive(Deserialize)]
        struct State {
            weights: Vec<f64>,
            bias: f64,
            pooler: AttentionPooler,
        }
        let s: State = serde_json::from_value(snapshot.state.clone())?;
        if s.weights.len() != self.weights.len() || s.pooler.query.len() != self.embed_dim {
            return Err(Error::Backend(
                "snapshot shape does not match scorer".into(),
            ));
        }
        self.weights = s.weights;
        self.bias = s.bias;
        self.pooler = s.pooler;
        Ok(())
    }

    fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    fn lineage_mut(&mut self) -> &mut Lineage {
        &mut self.lineage
    }

    fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"GDKF";
const FEATURE_VERSION: u32 = 1;

/// Region features for many images: `rows x regions x dim` little-endian f32
/// after a 20-byte header (`GDKF`, version, rows, regions, dim).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub regions: usize,
    pub dim: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new(regions: usize, dim: usize, rows: Vec<Vec<Vec<f32>>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * regions * dim);
        for row in &rows {
            if row.len() != regions || row.iter().any(|r| r.len() != dim) {
                return Err(Error::InvalidArgument(
                    "feature row has the wrong shape".into(),
                ));
            }
            row.iter().for_each(|r| data.extend_from_slice(r));
        }
        Ok(FeatureStore { regions, dim, data })
    }

    pub fn rows(&self) -> usize {
        if self.regions * self.dim == 0 {
            0
        } else {
            self.data.len() / (self.regions * self.dim)
        }
    }

    pub fn row(&self, index: usize) -> Result<Vec<Vec<f64>>> {
        if index >= self.rows() {
            return Err(Error::InvalidArgument(format!(
                "feature row {index} out of range ({} rows)",
                self.rows()
            )));
        }
        let start = index * self.regions * self.dim;
        Ok(self.data[start..start + self.regions * self.dim]
            .chunks(self.dim)
            .map(|c| c.iter().map(|&x| x as f64).collect())
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(FEATURE_MAGIC);
        for x in [
            FEATURE_VERSION,
            self.rows() as u32,
            self.regions as u32,
            self.dim as u32,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::Malformed("not a feature file".into()));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        if word(1) != FEATURE_VERSION as usize {
            return Err(Error::Malformed(format!(
                "unsupported feature file version {}",
                word(1)
            )));
        }
        let (rows, regions, dim) = (word(2), word(3), word(4));
        let count = rows * regions * dim;
        if bytes.len() != 20 + 4 * count {
            return Err(Error::Malformed(
                "feature file length does not match its header".into(),
            ));
        }
        let data = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FeatureStore { regions, dim, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::in_file(path, e.into()))?;
        Self::from_bytes(&bytes).map_err(|e| Error::in_file(path, e))
    }
}

/// Resolves instance features, loading each sidecar file once. Relative
/// sidecar paths are taken from `base_dir`.
pub struct FeatureResolver {
    base_dir: PathBuf,
    stores: HashMap<PathBuf, FeatureStore>,
}

impl FeatureResolver {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        FeatureResolver {
            base_dir: base_dir.into(),
            stores: HashMap::new(),
        }
    }

    pub fn resolve(&mut self, features: &VisualFeatures) -> Result<Vec<Vec<f64>>> {
        match features {
            VisualFeatures::Inline(rows) => Ok(rows.clone()),
            VisualFeatures::Sidecar { path, row } => {
                let full = self.base_dir.join(path);
                if !self.stores.contains_key(&full) {
                    let store = FeatureStore::load(&full)?;
                    self.stores.insert(full.clone(), store);
                }
                self.stores[&full].row(*row)
            }
        }
    }
}
