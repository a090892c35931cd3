//! Cultural-assertion and commonsense-triple corpora.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relations::Relation;

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

/// The five cultural facets of the assertion corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Food,
    Drinks,
    Clothing,
    Rituals,
    Traditions,
}

impl Facet {
    pub const ALL: [Facet; 5] = [
        Facet::Food,
        Facet::Drinks,
        Facet::Clothing,
        Facet::Rituals,
        Facet::Traditions,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Facet::Food => "food",
            Facet::Drinks => "drinks",
            Facet::Clothing => "clothing",
            Facet::Rituals => "rituals",
            Facet::Traditions => "traditions",
        }
    }
}

impl FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Facet::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| Error::UnknownFacet(s.to_string()))
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CulturalAssertion {
    pub id: String,
    pub text: String,
    pub country: String,
    pub facet: Facet,
    pub score: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAssertion {
    id: String,
    text: String,
    country: String,
    facet: String,
    score: f64,
}

impl CulturalAssertion {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        country: impl Into<String>,
        facet: Facet,
        score: f64,
    ) -> Result<Self> {
        let assertion = CulturalAssertion {
            id: id.into(),
            text: text.into(),
            country: country.into(),
            facet,
            score,
        };
        assertion.validate()?;
        Ok(assertion)
    }

    fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Malformed(format!(
                "assertion {}: empty text",
                self.id
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Malformed(format!(
                "assertion {}: score {} outside [0, 1]",
                self.id, self.score
            )));
        }
        Ok(())
    }

    /// Parse one JSON-lines record.
    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: RawAssertion =
            serde_json::from_str(line).map_err(|e| Error::Malformed(e.to_string()))?;
        let facet = raw.facet.parse()?;
        CulturalAssertion::new(raw.id, raw.text, raw.country, facet, raw.score)
    }
}

pub fn read_assertions<R: BufRead>(reader: R) -> Result<Vec<CulturalAssertion>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(CulturalAssertion::from_json_line(&line).map_err(|e| Error::at_line(i + 1, e))?);
    }
    Ok(out)
}

pub fn load_assertions(path: &Path) -> Result<Vec<CulturalAssertion>> {
    let file = File::open(path).map_err(|e| Error::in_file(path, e.into()))?;
    read_assertions(BufReader::new(file)).map_err(|e| Error::in_file(path, e))
}

pub fn write_assertions<W: Write>(writer: W, assertions: &[CulturalAssertion]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for a in assertions {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Keep assertions whose score is strictly greater than `threshold`.
pub fn filter_by_score(assertions: &[CulturalAssertion], threshold: f64) -> Vec<CulturalAssertion> {
    assertions
        .iter()
        .filter(|a| a.score > threshold)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub head: String,
    pub relation: Relation,
    pub tail: String,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl KnowledgeTriple {
    /// Builds a triple with whitespace-normalized head and tail.
    pub fn new(head: &str, relation: Relation, tail: &str) -> Result<Self> {
        let head = normalize_ws(head);
        let tail = normalize_ws(tail);
        if head.is_empty() {
            return Err(Error::Malformed("empty head".into()));
        }
        if tail.is_empty() {
            return Err(Error::Malformed("empty tail".into()));
        }
        Ok(KnowledgeTriple {
            head,
            relation,
            tail,
        })
    }

    pub fn from_tsv_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Malformed(format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let relation = Relation::from_name(cols[1].trim())?;
        KnowledgeTriple::new(cols[0], relation, cols[2])
    }
}

pub fn read_triples<R: BufRead>(reader: R) -> Result<Vec<KnowledgeTriple>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        out.push(KnowledgeTriple::from_tsv_line(line).map_err(|e| Error::at_line(i + 1, e))?);
    }
    Ok(out)
}

pub fn load_triples(path: &Path) -> Result<Vec<KnowledgeTriple>> {
    let file = File::open(path).map_err(|e| Error::in_file(path, e.into()))?;
    read_triples(BufReader::new(file)).map_err(|e| Error::in_file(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub kept: usize,
    pub per_facet: BTreeMap<Facet, usize>,
    pub per_country: BTreeMap<String, usize>,
}

/// Summary of a corpus; every record counts as kept.
pub fn corpus_stats(assertions: &[CulturalAssertion]) -> CorpusStats {
    let mut stats = CorpusStats {
        total: assertions.len(),
        kept: assertions.len(),
        ..Default::default()
    };
    for a in assertions {
        *stats.per_facet.entry(a.facet).or_default() += 1;
        *stats.per_country.entry(a.country.clone()).or_default() += 1;
    }
    stats
}

/// Summary of a corpus together with the number of records passing `threshold`.
pub fn filter_stats(assertions: &[CulturalAssertion], threshold: f64) -> CorpusStats {
    CorpusStats {
        kept: assertions.iter().filter(|a| a.score > threshold).count(),
        ..corpus_stats(assertions)
    }
}
