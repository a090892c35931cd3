use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relations::TemplateFacet;

pub const CONCEPTS_PER_FACET: usize = 5;
pub const MAX_GRADE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Culture {
    India,
    #[serde(rename = "South Korea")]
    SouthKorea,
    Nigeria,
    Iran,
    Indonesia,
}

impl Culture {
    pub const ALL: [Culture; 5] = [
        Culture::India,
        Culture::SouthKorea,
        Culture::Nigeria,
        Culture::Iran,
        Culture::Indonesia,
    ];

    /// Country name used in rendered sentences and item ids.
    pub fn country(self) -> &'static str {
        match self {
            Culture::India => "India",
            Culture::SouthKorea => "South Korea",
            Culture::Nigeria => "Nigeria",
            Culture::Iran => "Iran",
            Culture::Indonesia => "Indonesia",
        }
    }

    /// Row label in the results table.
    pub fn short_label(self) -> &'static str {
        match self {
            Culture::SouthKorea => "S Korea",
            c => c.country(),
        }
    }
}

impl fmt::Display for Culture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.country())
    }
}

impl FromStr for Culture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Culture::ALL
            .into_iter()
            .find(|c| c.country() == s || c.short_label() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown culture `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrinsicItem {
    pub id: String,
    pub culture: Culture,
    pub facet: TemplateFacet,
    pub concept: String,
    pub sentence: String,
}

pub type ConceptSheet = BTreeMap<Culture, BTreeMap<TemplateFacet, Vec<String>>>;

/// Twenty sentences per culture (four facets, five concepts each), ordered
/// by culture, facet, then concept.
pub fn build_intrinsic_set(concepts: &ConceptSheet) -> Result<Vec<IntrinsicItem>> {
    let mut items = Vec::new();
    for culture in Culture::ALL {
        let Some(facets) = concepts.get(&culture) else {
            continue;
        };
        for facet in TemplateFacet::ALL {
            let list = facets.get(&facet).map(Vec::as_slice).unwrap_or_default();
            if list.len() != CONCEPTS_PER_FACET {
                return Err(Error::Malformed(format!(
                    "({culture}, {facet}): expected {CONCEPTS_PER_FACET} concepts, found {}",
                    list.len()
                )));
            }
            for (i, concept) in list.iter().enumerate() {
                items.push(IntrinsicItem {
                    id: format!("{culture}/{facet}/{i}"),
                    culture,
                    facet,
                    concept: concept.clone(),
                    sentence: facet.render(concept, culture.country()),
                });
            }
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Criterion {
    CulturalRelevance = 1,
    StereotypeAvoidance = 2,
    LinguisticAccuracy = 3,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [
        Criterion::CulturalRelevance,
        Criterion::StereotypeAvoidance,
        Criterion::LinguisticAccuracy,
    ];
}

impl TryFrom<u8> for Criterion {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Criterion::CulturalRelevance),
            2 => Ok(Criterion::StereotypeAvoidance),
            3 => Ok(Criterion::LinguisticAccuracy),
            _ => Err(format!("criterion {v} not in 1..=3")),
        }
    }
}

impl From<Criterion> for u8 {
    fn from(c: Criterion) -> u8 {
        c as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub model: String,
    pub annotator: String,
    pub criterion: Criterion,
    pub grade: u8,
}

impl AnnotationRecord {
    /// Culture named by the item id prefix (`India/food/0#xAttr:1`).
    pub fn culture(&self) -> Result<Culture> {
        self.item_id
            .split(['/', '#'])
            .next()
            .unwrap_or_default()
            .parse()
    }

    fn validate(&self) -> Result<()> {
        if self.grade > MAX_GRADE {
            return Err(Error::Malformed(format!(
                "grade {} not in 0..=3",
                self.grade
            )));
        }
        self.culture()?;
        Ok(())
    }
}

/// CSV with header `item_id,model,annotator,criterion,grade`.
pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let expected = ["item_id", "model", "annotator", "criterion", "grade"];
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Malformed(format!(
            "annotation header must be {}",
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<AnnotationRecord>().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let rec = row.map_err(|e| Error::at_line(line, Error::Malformed(e.to_string())))?;
        rec.validate().map_err(|e| Error::at_line(line, e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::in_file(path, e.into()))?;
    read_annotations(file).map_err(|e| Error::in_file(path, e))
}

pub type GradeKey = (String, Culture, Criterion);

/// Unrounded mean grade per (model, culture, criterion); cells without
/// grades are absent.
pub fn mean_grades(annotations: &[AnnotationRecord]) -> Result<BTreeMap<GradeKey, f64>> {
    let mut sums: BTreeMap<GradeKey, (f64, usize)> = BTreeMap::new();
    for a in annotations {
        let cell = sums
            .entry((a.model.clone(), a.culture()?, a.criterion))
            .or_default();
        cell.0 += a.grade as f64;
        cell.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect())
}

/// Round half away from zero at `decimals` places, tolerant of binary
/// representation error (2.675 rounds to 2.68).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let nudge = 1e-9 * scaled.abs().max(1.0);
    (scaled + nudge.copysign(scaled)).round() / scale
}

/// Unweighted Cohen's kappa over the grade categories 0..=3.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "kappa over sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("kappa over empty sequences".into()));
    }
    if let Some(g) = a.iter().chain(b).find(|&&g| g > MAX_GRADE) {
        return Err(Error::InvalidArgument(format!("grade {g} not in 0..=3")));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let po = agree / n;
    let mut ca = [0usize; 4];
    let mut cb = [0usize; 4];
    a.iter().for_each(|&g| ca[g as usize] += 1);
    b.iter().for_each(|&g| cb[g as usize] += 1);
    let pe: f64 = (0..4).map(|k| ca[k] as f64 * cb[k] as f64).sum::<f64>() / (n * n);
    if pe == 1.0 {
        return if a == b {
            Ok(1.0)
        } else {
            Err(Error::InvalidArgument(
                "kappa undefined: chance agreement is 1".into(),
            ))
        };
    }
    Ok((po - pe) / (1.0 - pe))
}

pub fn average_kappa(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no kappa values to average".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Kappa per (model, culture), pooling every criterion. Grades are paired
/// on (item, criterion) between the cell's two annotators; grades without
/// a partner are ignored.
pub fn kappa_by_culture(
    annotations: &[AnnotationRecord],
) -> Result<BTreeMap<(String, Culture), f64>> {
    type Cell = BTreeMap<(String, Criterion), BTreeMap<String, u8>>;
    let mut cells: BTreeMap<(String, Culture), Cell> = BTreeMap::new();
    for a in annotations {
        let prev = cells
            .entry((a.model.clone(), a.culture()?))
            .or_default()
            .entry((a.item_id.clone(), a.criterion))
            .or_default()
            .insert(a.annotator.clone(), a.grade);
        if prev.is_some() {
            return Err(Error::Malformed(format!(
                "duplicate grade from {} for {} criterion {}",
                a.annotator, a.item_id, a.criterion as u8
            )));
        }
    }
    let mut out = BTreeMap::new();
    for (key, cell) in cells {
        let annotators: BTreeSet<&String> = cell.values().flat_map(|m| m.keys()).collect();
        if annotators.len() > 2 {
            return Err(Error::Malformed(format!(
                "{} / {}: {} annotators where two are expected",
                key.0,
                key.1,
                annotators.len()
            )));
        }
        let (mut ga, mut gb) = (Vec::new(), Vec::new());
        for grades in cell.values() {
            if grades.len() == 2 {
                let mut it = grades.values();
                ga.push(*it.next().unwrap());
                gb.push(*it.next().unwrap());
            }
        }
        if !ga.is_empty() {
            out.insert(key, cohen_kappa(&ga, &gb)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CultureRow {
    /// Mean grade for criteria 1, 2 and 3.
    pub means: [Option<f64>; 3],
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub rows: BTreeMap<Culture, CultureRow>,
    pub average_kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    /// Keyed by model id, in the order models should be reported.
    pub models: Vec<(String, ModelBlock)>,
}

/// Aggregate annotations into means and agreement, models in first-seen order.
pub fn intrinsic_report(annotations: &[AnnotationRecord]) -> Result<IntrinsicReport> {
    let means = mean_grades(annotations)?;
    let kappas = kappa_by_culture(annotations)?;
    let mut order: Vec<String> = Vec::new();
    for a in annotations {
        if !order.contains(&a.model) {
            order.push(a.model.clone());
        }
    }
    let mut report = IntrinsicReport::default();
    for model in order {
        let mut block = ModelBlock::default();
        for ((m, culture, criterion), mean) in &means {
            if *m == model {
                block.rows.entry(*culture).or_default().means[*criterion as usize - 1] =
                    Some(*mean);
            }
        }
        let mut ks = Vec::new();
        for ((m, culture), k) in &kappas {
            if *m == model {
                block.rows.entry(*culture).or_default().kappa = Some(*k);
                ks.push(*k);
            }
        }
        block.average_kappa = average_kappa(&ks).ok();
        report.models.push((model, block));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet(cultures: &[Culture]) -> ConceptSheet {
        cultures
            .iter()
            .map(|&c| {
                let facets = TemplateFacet::ALL
                    .iter()
                    .map(|&f| (f, (0..5).map(|i| format!("{f}{i}")).collect()))
                    .collect();
                (c, facets)
            })
            .collect()
    }

    #[test]
    fn intrinsic_set_sizes() {
        assert_eq!(
            build_intrinsic_set(&sheet(&Culture::ALL)).unwrap().len(),
            100
        );
        let one = build_intrinsic_set(&sheet(&[Culture::Iran])).unwrap();
        assert_eq!(one.len(), 20);
        assert_eq!(one[0].sentence, "PersonX wears clothing0 in Iran");
        assert_eq!(one[0].id, "Iran/clothing/0");

        let mut short = sheet(&[Culture::Nigeria]);
        short
            .get_mut(&Culture::Nigeria)
            .unwrap()
            .get_mut(&TemplateFacet::Food)
            .unwrap()
            .pop();
        let err = build_intrinsic_set(&short).unwrap_err().to_string();
        assert!(err.contains("(Nigeria, food)"), "{err}");
    }

    #[test]
    fn kappa_fixtures() {
        assert_eq!(cohen_kappa(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0);
        assert!(cohen_kappa(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(cohen_kappa(&[2, 2], &[2, 2]).unwrap(), 1.0);
        assert!(cohen_kappa(&[2, 2], &[2]).is_err());
        assert!(cohen_kappa(&[4], &[4]).is_err());
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(2.675, 2), 2.68);
        assert_eq!(round_half_up(2.5, 0), 3.0);
        assert_eq!(round_half_up(0.6555, 3), 0.656);
        assert_eq!(round_half_up(2.544, 2), 2.54);
    }

    #[test]
    fn annotations_csv() {
        let data = "item_id,model,annotator,criterion,grade\n\
                    India/food/0#xAttr:0,gd-comet,a1,1,2\n\
                    India/food/0#xAttr:0,gd-comet,a2,1,3\n\
                    South Korea/drink/1,comet,b1,3,3\n";
        let recs = read_annotations(data.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].culture().unwrap(), Culture::SouthKorea);
        let means = mean_grades(&recs).unwrap();
        assert_eq!(
            means[&(
                "gd-comet".into(),
                Culture::India,
                Criterion::CulturalRelevance
            )],
            2.5
        );
        assert_eq!(means.len(), 2);

        let bad = "item_id,model,annotator,criterion,grade\nIndia/food/0,comet,a,4,1\n";
        assert!(matches!(
            read_annotations(bad.as_bytes()).unwrap_err(),
            Error::AtLine { line: 2, .. }
        ));
        let bad = "item_id,model,annotator,criterion,grade\nIndia/food/0,comet,a,1,7\n";
        assert!(read_annotations(bad.as_bytes()).is_err());
        let bad = "item_id,model,annotator,criterion,grade\nMars/food/0,comet,a,1,1\n";
        assert!(read_annotations(bad.as_bytes()).is_err());
        assert!(read_annotations("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn report_pools_criteria() {
        let mut recs = Vec::new();
        for (i, (x, y)) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
            for (ann, g) in [("a", x), ("b", y)] {
                recs.push(AnnotationRecord {
                    item_id: format!("Iran/food/{}", i / 2),
                    model: "comet".into(),
                    annotator: ann.into(),
                    criterion: Criterion::ALL[i % 2],
                    grade: *g,
                });
            }
        }
        let report = intrinsic_report(&recs).unwrap();
        let (model, block) = &report.models[0];
        assert_eq!(model, "comet");
        assert!(block.rows[&Culture::Iran].kappa.unwrap().abs() < 1e-12);
        assert_eq!(block.rows[&Culture::Iran].means[2], None);
    }
}
