//! Commonsense relation registry and the text templates used to verbalize
//! triples and to build culture-specific input sentences.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

macro_rules! relations {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// One of the 34 typed commonsense links.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Relation {
            $($variant),+
        }

        impl Relation {
            /// Registry order (row-wise reading of the relation table).
            pub const ALL: [Relation; 34] = [$(Relation::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Relation::$variant => $name),+
                }
            }

            pub fn from_name(name: &str) -> Result<Relation> {
                match name {
                    $($name => Ok(Relation::$variant),)+
                    other => Err(Error::UnknownRelation(other.to_string())),
                }
            }
        }
    };
}

relations! {
    AtLocation => "AtLocation",
    CapableOf => "CapableOf",
    IsBefore => "isBefore",
    Causes => "Causes",
    CausesDesire => "CausesDesire",
    IsFilledBy => "isFilledBy",
    CreatedBy => "CreatedBy",
    Desires => "Desires",
    OEffect => "oEffect",
    HasPrerequisite => "HasPrerequisite",
    HasFirstSubevent => "HasFirstSubevent",
    OReact => "oReact",
    HasA => "HasA",
    HasProperty => "HasProperty",
    OWant => "oWant",
    InstanceOf => "InstanceOf",
    IsA => "IsA",
    XAttr => "xAttr",
    LocatedNear => "LocatedNear",
    MadeOf => "MadeOf",
    XEffect => "xEffect",
    MadeUpOf => "MadeUpOf",
    MotivatedByGoal => "MotivatedByGoal",
    XIntent => "xIntent",
    ObjectUse => "ObjectUse",
    PartOf => "PartOf",
    XNeed => "xNeed",
    ReceivesAction => "ReceivesAction",
    SymbolOf => "SymbolOf",
    XReact => "xReact",
    UsedFor => "UsedFor",
    IsAfter => "isAfter",
    XReason => "xReason",
    XWant => "xWant",
}

impl Relation {
    /// Sentinel token marking the relation in a serialized source sequence.
    pub fn sentinel(self) -> String {
        format!("[{}]", self.name())
    }

    /// Inverse of [`Relation::sentinel`].
    pub fn from_sentinel(token: &str) -> Option<Relation> {
        token
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .and_then(|name| Relation::from_name(name).ok())
    }

    /// Position in registry order.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::from_name(s)
    }
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Relation::from_name(&name).map_err(serde::de::Error::custom)
    }
}

pub fn list_relations() -> Vec<Relation> {
    Relation::ALL.to_vec()
}

/// The four facets that have an input-sentence template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateFacet {
    Clothing,
    Food,
    Drink,
    Festival,
}

impl TemplateFacet {
    pub const ALL: [TemplateFacet; 4] = [
        TemplateFacet::Clothing,
        TemplateFacet::Food,
        TemplateFacet::Drink,
        TemplateFacet::Festival,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TemplateFacet::Clothing => "clothing",
            TemplateFacet::Food => "food",
            TemplateFacet::Drink => "drink",
            TemplateFacet::Festival => "festival",
        }
    }

    pub fn pattern(self) -> &'static str {
        match self {
            TemplateFacet::Clothing => "PersonX wears {concept} in {country}",
            TemplateFacet::Food => "PersonX eats {concept} in {country}",
            TemplateFacet::Drink => "PersonX drinks {concept} in {country}",
            TemplateFacet::Festival => "PersonX celebrates {concept} in {country}",
        }
    }

    pub fn render(self, concept: &str, country: &str) -> String {
        self.pattern()
            .replace("{concept}", concept)
            .replace("{country}", country)
    }
}

impl FromStr for TemplateFacet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateFacet::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| Error::NoFacetTemplate(s.to_string()))
    }
}

impl fmt::Display for TemplateFacet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Render an input sentence for a facet label. Labels outside the four
/// templated facets (e.g. `rituals`) are rejected.
pub fn render_facet(facet: &str, concept: &str, country: &str) -> Result<String> {
    let facet: TemplateFacet = facet.parse()?;
    Ok(facet.render(concept, country))
}

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.json");

#[derive(Deserialize)]
struct TemplateFile {
    version: u32,
    relations: BTreeMap<String, String>,
}

/// Relation-specific verbalization patterns, one per registered relation.
#[derive(Debug, Clone)]
pub struct TemplateTable {
    version: u32,
    patterns: Vec<String>,
}

impl TemplateTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TemplateFile = serde_json::from_str(text)?;
        let mut patterns: Vec<Option<String>> = vec![None; Relation::ALL.len()];
        for (name, pattern) in file.relations {
            let relation = Relation::from_name(&name)?;
            for placeholder in ["{head}", "{tail}"] {
                if pattern.matches(placeholder).count() != 1 {
                    return Err(Error::InvalidTemplate(format!(
                        "{name}: pattern must contain {placeholder} exactly once"
                    )));
                }
            }
            patterns[relation.index()] = Some(pattern);
        }
        let patterns = patterns
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                p.ok_or_else(|| {
                    Error::InvalidTemplate(format!("missing pattern for {}", Relation::ALL[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TemplateTable {
            version: file.version,
            patterns,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::in_file(path, e.into()))?;
        Self::from_json(&text).map_err(|e| Error::in_file(path, e))
    }

    /// The table shipped with the crate.
    pub fn shipped() -> &'static TemplateTable {
        static TABLE: OnceLock<TemplateTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            TemplateTable::from_json(DEFAULT_TEMPLATES).expect("shipped template table is valid")
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn pattern(&self, relation: Relation) -> &str {
        &self.patterns[relation.index()]
    }

    pub fn render(&self, head: &str, relation: Relation, tail: &str) -> Result<String> {
        if head.trim().is_empty() {
            return Err(Error::InvalidArgument("empty head".into()));
        }
        if tail.trim().is_empty() {
            return Err(Error::InvalidArgument("empty tail".into()));
        }
        // Substitute in one pass so that placeholder text inside `head`
        // is never re-expanded.
        let pattern = self.pattern(relation);
        let (before, after) = pattern.split_once("{head}").expect("validated");
        let mut out = String::with_capacity(pattern.len() + head.len() + tail.len());
        if let Some((a, b)) = before.split_once("{tail}") {
            out.push_str(a);
            out.push_str(tail);
            out.push_str(b);
            out.push_str(head);
            out.push_str(after);
        } else {
            let (a, b) = after.split_once("{tail}").expect("validated");
            out.push_str(before);
            out.push_str(head);
            out.push_str(a);
            out.push_str(tail);
            out.push_str(b);
        }
        Ok(out)
    }
}

/// Verbalize a triple with the shipped template table.
pub fn render_relation(head: &str, relation: Relation, tail: &str) -> Result<String> {
    TemplateTable::shipped().render(head, relation, tail)
}
