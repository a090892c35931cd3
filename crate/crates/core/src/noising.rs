//! Denoising pretraining data: token masking, token deletion, text infilling
//! and sentence permutation over whitespace-plus-punctuation tokens.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::Poisson;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::CulturalAssertion;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

pub const MASK: &str = "<mask>";

pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Splits on whitespace and separates punctuation marks into their own tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct PunctTokenizer;

impl Tokenizer for PunctTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        static WORD: OnceLock<Regex> = OnceLock::new();
        let re = WORD.get_or_init(|| Regex::new(r"\w+(?:['’]\w+)*|[^\w\s]").unwrap());
        re.find_iter(text).map(|m| m.as_str().to_string()).collect()
    }
}

/// Tokens plus the `[start, end)` range of each sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
    sentence_bounds: Vec<(usize, usize)>,
}

impl TokenSequence {
    /// Checks that the bounds partition the tokens into ordered, non-empty sentences.
    pub fn new(tokens: Vec<String>, sentence_bounds: Vec<(usize, usize)>) -> Result<Self> {
        let mut cursor = 0;
        for &(start, end) in &sentence_bounds {
            if start != cursor || end <= start {
                return Err(Error::InvalidArgument(format!(
                    "sentence bounds {sentence_bounds:?} do not partition {} tokens",
                    tokens.len()
                )));
            }
            cursor = end;
        }
        if cursor != tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "sentence bounds cover {cursor} of {} tokens",
                tokens.len()
            )));
        }
        Ok(TokenSequence {
            tokens,
            sentence_bounds,
        })
    }

    /// A single sentence spanning all tokens.
    pub fn single(tokens: Vec<String>) -> Self {
        let bounds = if tokens.is_empty() {
            vec![]
        } else {
            vec![(0, tokens.len())]
        };
        TokenSequence {
            tokens,
            sentence_bounds: bounds,
        }
    }

    /// Tokenize `text`, ending a sentence at `.`, `!` or `?` followed by whitespace.
    pub fn from_text(text: &str, tokenizer: &dyn Tokenizer) -> Self {
        let mut tokens = Vec::new();
        let mut bounds = Vec::new();
        for sentence in split_sentences(text) {
            let toks = tokenizer.tokenize(sentence);
            if toks.is_empty() {
                continue;
            }
            let start = tokens.len();
            tokens.extend(toks);
            bounds.push((start, tokens.len()));
        }
        TokenSequence {
            tokens,
            sentence_bounds: bounds,
        }
    }

    /// Rebuild bounds from tokens tagged with a non-decreasing sentence id.
    fn from_tagged(tagged: Vec<(String, usize)>) -> Self {
        let mut tokens = Vec::with_capacity(tagged.len());
        let mut bounds: Vec<(usize, usize)> = Vec::new();
        let mut current = None;
        for (i, (tok, sid)) in tagged.into_iter().enumerate() {
            if current != Some(sid) {
                if let Some(last) = bounds.last_mut() {
                    last.1 = i;
                }
                bounds.push((i, i + 1));
                current = Some(sid);
            }
            tokens.push(tok);
        }
        if let Some(last) = bounds.last_mut() {
            last.1 = tokens.len();
        }
        TokenSequence {
            tokens,
            sentence_bounds: bounds,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn sentence_bounds(&self) -> &[(usize, usize)] {
        &self.sentence_bounds
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &[String]> {
        self.sentence_bounds
            .iter()
            .map(|&(s, e)| &self.tokens[s..e])
    }

    fn sentence_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.tokens.len()];
        for (sid, &(s, e)) in self.sentence_bounds.iter().enumerate() {
            ids[s..e].fill(sid);
        }
        ids
    }
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    out.push(&text[start..end]);
                    start = end;
                }
            }
        }
    }
    out.push(&text[start..]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mask,
    Delete,
    Infill,
    Permute,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Mask,
        Objective::Delete,
        Objective::Infill,
        Objective::Permute,
    ];
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Objective::Mask => "mask",
            Objective::Delete => "delete",
            Objective::Infill => "infill",
            Objective::Permute => "permute",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisedExample {
    pub source: TokenSequence,
    pub target: TokenSequence,
    pub objective: Objective,
    pub seed: u64,
}

/// Line format of the pretraining dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisedRecord {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub objective: Objective,
    pub seed: u64,
}

impl From<&NoisedExample> for NoisedRecord {
    fn from(ex: &NoisedExample) -> Self {
        NoisedRecord {
            source_tokens: ex.source.tokens.clone(),
            target_tokens: ex.target.tokens.clone(),
            objective: ex.objective,
            seed: ex.seed,
        }
    }
}

pub fn write_noised<W: Write>(mut writer: W, examples: &[NoisedExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut writer, &NoisedRecord::from(ex))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_noised<R: BufRead>(reader: R) -> Result<Vec<NoisedRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::at_line(i + 1, Error::Malformed(e.to_string())))?;
        out.push(rec);
    }
    Ok(out)
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "{name} {rate} outside [0, 1]"
        )));
    }
    Ok(())
}

fn pick_positions(n: usize, rate: f64, rng: &mut Rng) -> Vec<bool> {
    let count = ((rate * n as f64).floor() as usize).min(n);
    let mut picked = vec![false; n];
    for i in rand::seq::index::sample(rng, n, count) {
        picked[i] = true;
    }
    picked
}

/// Replace `floor(rate * n)` uniformly chosen tokens with [`MASK`].
pub fn token_masking(seq: &TokenSequence, rate: f64, rng_seed: u64) -> Result<NoisedExample> {
    check_rate("masking rate", rate)?;
    let picked = pick_positions(seq.len(), rate, &mut seeded(rng_seed));
    let tokens = seq
        .tokens
        .iter()
        .zip(&picked)
        .map(|(t, &p)| if p { MASK.to_string() } else { t.clone() })
        .collect();
    Ok(NoisedExample {
        source: TokenSequence {
            tokens,
            sentence_bounds: seq.sentence_bounds.clone(),
        },
        target: seq.clone(),
        objective: Objective::Mask,
        seed: rng_seed,
    })
}

/// Remove `floor(rate * n)` uniformly chosen tokens.
pub fn token_deletion(seq: &TokenSequence, rate: f64, rng_seed: u64) -> Result<NoisedExample> {
    check_rate("deletion rate", rate)?;
    let picked = pick_positions(seq.len(), rate, &mut seeded(rng_seed));
    let sids = seq.sentence_ids();
    let tagged = seq
        .tokens
        .iter()
        .enumerate()
        .filter(|&(i, _)| !picked[i])
        .map(|(i, t)| (t.clone(), sids[i]))
        .collect();
    Ok(NoisedExample {
        source: TokenSequence::from_tagged(tagged),
        target: seq.clone(),
        objective: Objective::Delete,
        seed: rng_seed,
    })
}

/// A masked span: `len` tokens starting at `start`. A zero-length span
/// inserts a bare mask before token `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

/// Draw non-overlapping spans with Poisson lengths until at least
/// `mask_fraction` of the `n` tokens are covered.
pub fn plan_infill_spans(
    n: usize,
    mask_fraction: f64,
    mean_span: f64,
    rng_seed: u64,
) -> Result<Vec<Span>> {
    check_rate("mask fraction", mask_fraction)?;
    if !(mean_span > 0.0 && mean_span.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mean span {mean_span} must be positive"
        )));
    }
    let poisson = Poisson::new(mean_span).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seeded(rng_seed);
    let goal = mask_fraction * n as f64;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut gap_used = vec![false; n + 1];
    let mut covered = 0usize;
    let mut spans = Vec::new();
    let max_draws = 100 * (n + 1);

    for _ in 0..max_draws {
        if covered as f64 >= goal || covered == n {
            break;
        }
        let len = poisson.sample(&mut rng) as usize;
        if len == 0 {
            let gaps: Vec<usize> = (0..=n)
                .filter(|&g| {
                    let inside =
                        g > 0 && g < n && owner[g - 1].is_some() && owner[g - 1] == owner[g];
                    !inside && !gap_used[g]
                })
                .collect();
            if gaps.is_empty() {
                continue;
            }
            let g = gaps[rng.random_range(0..gaps.len())];
            gap_used[g] = true;
            spans.push(Span { start: g, len: 0 });
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| owner[i].is_none()).collect();
            let start = free[rng.random_range(0..free.len())];
            let mut end = start;
            while end < n
                && end - start < len
                && owner[end].is_none()
                && (end == start || !gap_used[end])
            {
                end += 1;
            }
            let id = spans.len();
            owner[start..end].fill(Some(id));
            covered += end - start;
            spans.push(Span {
                start,
                len: end - start,
            });
        }
    }
    Ok(spans)
}

/// Replace each span with a single [`MASK`].
pub fn apply_spans(seq: &TokenSequence, spans: &[Span]) -> Result<TokenSequence> {
    let n = seq.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut inserts = vec![0usize; n + 1];
    for (id, span) in spans.iter().enumerate() {
        if span.start > n || span.start + span.len > n {
            return Err(Error::InvalidArgument(format!(
                "span {span:?} out of range"
            )));
        }
        if span.len == 0 {
            inserts[span.start] += 1;
            continue;
        }
        for slot in &mut owner[span.start..span.start + span.len] {
            if slot.is_some() {
                return Err(Error::InvalidArgument(format!("span {span:?} overlaps")));
            }
            *slot = Some(id);
        }
    }
    let sids = seq.sentence_ids();
    let last_sid = sids.last().copied().unwrap_or(0);
    let mut tagged = Vec::new();
    for g in 0..=n {
        let sid = if g < n { sids[g] } else { last_sid };
        for _ in 0..inserts[g] {
            tagged.push((MASK.to_string(), sid));
        }
        if g == n {
            break;
        }
        match owner[g] {
            Some(id) if spans[id].start == g => tagged.push((MASK.to_string(), sid)),
            Some(_) => {}
            None => tagged.push((seq.tokens[g].clone(), sid)),
        }
    }
    Ok(TokenSequence::from_tagged(tagged))
}

pub fn text_infilling(
    seq: &TokenSequence,
    mask_fraction: f64,
    mean_span: f64,
    rng_seed: u64,
) -> Result<NoisedExample> {
    let spans = plan_infill_spans(seq.len(), mask_fraction, mean_span, rng_seed)?;
    Ok(NoisedExample {
        source: apply_spans(seq, &spans)?,
        target: seq.clone(),
        objective: Objective::Infill,
        seed: rng_seed,
    })
}

/// Shuffle sentence order with a seeded uniform permutation.
pub fn sentence_permutation(seq: &TokenSequence, rng_seed: u64) -> Result<NoisedExample> {
    if seq.sentence_bounds.is_empty() {
        return Err(Error::InvalidArgument(
            "sentence permutation needs at least one sentence".into(),
        ));
    }
    let mut order: Vec<usize> = (0..seq.sentence_bounds.len()).collect();
    order.shuffle(&mut seeded(rng_seed));
    let mut tokens = Vec::with_capacity(seq.len());
    let mut bounds = Vec::with_capacity(order.len());
    for sid in order {
        let (s, e) = seq.sentence_bounds[sid];
        let start = tokens.len();
        tokens.extend_from_slice(&seq.tokens[s..e]);
        bounds.push((start, tokens.len()));
    }
    Ok(NoisedExample {
        source: TokenSequence {
            tokens,
            sentence_bounds: bounds,
        },
        target: seq.clone(),
        objective: Objective::Permute,
        seed: rng_seed,
    })
}

/// Relative weight of each objective in the pretraining mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMix {
    pub mask: f64,
    pub delete: f64,
    pub infill: f64,
    pub permute: f64,
}

impl Default for ObjectiveMix {
    fn default() -> Self {
        ObjectiveMix {
            mask: 1.0,
            delete: 1.0,
            infill: 1.0,
            permute: 1.0,
        }
    }
}

impl ObjectiveMix {
    pub fn only(objective: Objective) -> Self {
        let mut mix = ObjectiveMix {
            mask: 0.0,
            delete: 0.0,
            infill: 0.0,
            permute: 0.0,
        };
        match objective {
            Objective::Mask => mix.mask = 1.0,
            Objective::Delete => mix.delete = 1.0,
            Objective::Infill => mix.infill = 1.0,
            Objective::Permute => mix.permute = 1.0,
        }
        mix
    }

    fn weights(&self) -> [f64; 4] {
        [self.mask, self.delete, self.infill, self.permute]
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>> {
        let w = self.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "objective weights {w:?} must be non-negative and not all zero"
            )));
        }
        WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub mask_rate: f64,
    pub delete_rate: f64,
    pub infill_fraction: f64,
    pub infill_mean_span: f64,
    pub mix: ObjectiveMix,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            mask_rate: 0.15,
            delete_rate: 0.15,
            infill_fraction: 0.3,
            infill_mean_span: 3.0,
            mix: ObjectiveMix::default(),
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        check_rate("mask rate", self.mask_rate)?;
        check_rate("delete rate", self.delete_rate)?;
        check_rate("infill fraction", self.infill_fraction)?;
        if !(self.infill_mean_span.is_finite() && self.infill_mean_span > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mean span length {} must be positive",
                self.infill_mean_span
            )));
        }
        self.mix.sampler().map(|_| ())
    }
}

pub fn apply_objective(
    seq: &TokenSequence,
    objective: Objective,
    params: &NoiseParams,
    seed: u64,
) -> Result<NoisedExample> {
    match objective {
        Objective::Mask => token_masking(seq, params.mask_rate, seed),
        Objective::Delete => token_deletion(seq, params.delete_rate, seed),
        Objective::Infill => {
            text_infilling(seq, params.infill_fraction, params.infill_mean_span, seed)
        }
        Objective::Permute => sentence_permutation(seq, seed),
    }
}

/// One noised example per assertion. Record `i` uses sub-seed
/// `derive_seed(rng_seed, i)` for both its objective draw and its transform.
pub fn build_pretrain_dataset(
    assertions: &[CulturalAssertion],
    params: &NoiseParams,
    rng_seed: u64,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<NoisedExample>> {
    let sampler = params.mix.sampler()?;
    assertions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let sub = derive_seed(rng_seed, i as u64);
            let objective = Objective::ALL[sampler.sample(&mut seeded(derive_seed(sub, 0)))];
            let seq = TokenSequence::from_text(&a.text, tokenizer);
            apply_objective(&seq, objective, params, sub)
        })
        .collect()
}
