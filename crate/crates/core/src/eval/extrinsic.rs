use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{QAInstance, Region, NUM_ANSWERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub qa_id: String,
    pub seed: u64,
    pub scores: [f64; NUM_ANSWERS],
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub gold_index: usize,
    pub region: Region,
}

pub fn gold_labels(instances: &[QAInstance]) -> HashMap<String, GoldLabel> {
    instances
        .iter()
        .map(|q| {
            (
                q.qa_id.clone(),
                GoldLabel {
                    gold_index: q.gold_index,
                    region: q.region,
                },
            )
        })
        .collect()
}

/// Overall and per-region accuracy in percent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub overall: f64,
    pub regions: BTreeMap<Region, f64>,
}

impl AccuracyRow {
    /// `None` names the overall column.
    pub fn get(&self, region: Option<Region>) -> Option<f64> {
        match region {
            None => Some(self.overall),
            Some(r) => self.regions.get(&r).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub accuracy: AccuracyRow,
    /// (correct, total) per region.
    #[serde(default)]
    pub counts: BTreeMap<Region, (usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAccuracy {
    pub model: String,
    pub seeds: Vec<SeedAccuracy>,
    pub average: AccuracyRow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicReport {
    pub models: Vec<ModelAccuracy>,
}

/// Arithmetic mean of seed rows, column by column. A region column is
/// averaged over the seeds that report it.
pub fn average_rows(rows: &[AccuracyRow]) -> Result<AccuracyRow> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no seed rows to average".into()));
    }
    let overall = rows.iter().map(|r| r.overall).sum::<f64>() / rows.len() as f64;
    let mut regions = BTreeMap::new();
    for region in Region::ALL {
        let vals: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.regions.get(&region).copied())
            .collect();
        if !vals.is_empty() {
            regions.insert(region, vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(AccuracyRow { overall, regions })
}

/// Per-seed accuracy (100 * correct / total) overall and per region, plus
/// the seed average. Seeds appear in ascending order.
pub fn accuracy_by_region(
    model: &str,
    predictions: &[PredictionRecord],
    gold: &HashMap<String, GoldLabel>,
) -> Result<ModelAccuracy> {
    let mut by_seed: BTreeMap<u64, BTreeMap<Region, (usize, usize)>> = BTreeMap::new();
    let mut seen: BTreeSet<(u64, &str)> = BTreeSet::new();
    for p in predictions {
        let g = gold.get(&p.qa_id).ok_or_else(|| {
            Error::Malformed(format!("prediction for unknown qa_id `{}`", p.qa_id))
        })?;
        if p.predicted >= NUM_ANSWERS {
            return Err(Error::Malformed(format!(
                "{}: predicted index {} out of range",
                p.qa_id, p.predicted
            )));
        }
        if !seen.insert((p.seed, &p.qa_id)) {
            return Err(Error::Malformed(format!(
                "duplicate prediction for {} seed {}",
                p.qa_id, p.seed
            )));
        }
        let cell = by_seed
            .entry(p.seed)
            .or_default()
            .entry(g.region)
            .or_default();
        cell.0 += usize::from(p.predicted == g.gold_index);
        cell.1 += 1;
    }
    if by_seed.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let seeds: Vec<SeedAccuracy> = by_seed
        .into_iter()
        .map(|(seed, counts)| {
            let (c, t) = counts
                .values()
                .fold((0, 0), |(c, t), (a, b)| (c + a, t + b));
            SeedAccuracy {
                seed,
                accuracy: AccuracyRow {
                    overall: 100.0 * c as f64 / t as f64,
                    regions: counts
                        .iter()
                        .map(|(r, (c, t))| (*r, 100.0 * *c as f64 / *t as f64))
                        .collect(),
                },
                counts,
            }
        })
        .collect();
    let rows: Vec<AccuracyRow> = seeds.iter().map(|s| s.accuracy.clone()).collect();
    Ok(ModelAccuracy {
        model: model.to_string(),
        average: average_rows(&rows)?,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct SeedResultRow {
    model: String,
    seed: u64,
    region: String,
    accuracy: f64,
}

/// Per-seed accuracies from CSV (`model,seed,region,accuracy`, region
/// `Overall` for the whole set), averaged over seeds. Models keep
/// first-seen order.
pub fn read_seed_results<R: Read>(reader: R) -> Result<ExtrinsicReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, BTreeMap<u64, (Option<f64>, BTreeMap<Region, f64>)>> =
        HashMap::new();
    for (i, row) in rdr.deserialize::<SeedResultRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::at_line(line, Error::Malformed(e.to_string())))?;
        if !(0.0..=100.0).contains(&row.accuracy) {
            return Err(Error::at_line(
                line,
                Error::Malformed(format!("accuracy {} outside [0, 100]", row.accuracy)),
            ));
        }
        if !order.contains(&row.model) {
            order.push(row.model.clone());
        }
        let seed = cells
            .entry(row.model)
            .or_default()
            .entry(row.seed)
            .or_default();
        let dup = if row.region == "Overall" {
            seed.0.replace(row.accuracy).is_some()
        } else {
            let region: Region = row.region.parse().map_err(|e| Error::at_line(line, e))?;
            seed.1.insert(region, row.accuracy).is_some()
        };
        if dup {
            return Err(Error::at_line(
                line,
                Error::Malformed("duplicate seed row".into()),
            ));
        }
    }
    let mut report = ExtrinsicReport::default();
    for model in order {
        let mut seeds = Vec::new();
        for (seed, (overall, regions)) in cells.remove(&model).unwrap_or_default() {
            let overall = overall
                .ok_or_else(|| Error::Malformed(format!("{model} seed {seed}: no Overall row")))?;
            seeds.push(SeedAccuracy {
                seed,
                accuracy: AccuracyRow { overall, regions },
                counts: BTreeMap::new(),
            });
        }
        let rows: Vec<AccuracyRow> = seeds.iter().map(|s| s.accuracy.clone()).collect();
        report.models.push(ModelAccuracy {
            model,
            average: average_rows(&rows)?,
            seeds,
        });
    }
    Ok(report)
}

pub fn load_seed_results(path: &Path) -> Result<ExtrinsicReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::in_file(path, e.into()))?;
    read_seed_results(file).map_err(|e| Error::in_file(path, e))
}

/// Image and QA counts of an evaluation set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub qa_pairs: usize,
    pub per_region: BTreeMap<Region, (usize, usize)>,
}

/// Images are counted by distinct `image_id`; instances without one count
/// as their own image.
pub fn dataset_stats(instances: &[QAInstance]) -> DatasetStats {
    let mut images: BTreeMap<Region, BTreeSet<String>> = BTreeMap::new();
    let mut qa: BTreeMap<Region, usize> = BTreeMap::new();
    for q in instances {
        let image = q
            .image_id
            .clone()
            .unwrap_or_else(|| format!("qa:{}", q.qa_id));
        images.entry(q.region).or_default().insert(image);
        *qa.entry(q.region).or_default() += 1;
    }
    let per_region: BTreeMap<Region, (usize, usize)> = qa
        .iter()
        .map(|(r, n)| (*r, (images[r].len(), *n)))
        .collect();
    DatasetStats {
        images: per_region.values().map(|(i, _)| i).sum(),
        qa_pairs: instances.len(),
        per_region,
    }
}

/// Published GD-VCR counts: 328 images and 886 QA pairs.
pub fn gdvcr_reference_stats() -> DatasetStats {
    DatasetStats {
        images: 328,
        qa_pairs: 886,
        per_region: BTreeMap::from([
            (Region::West, (100, 275)),
            (Region::EastAsia, (101, 282)),
            (Region::SouthAsia, (87, 221)),
            (Region::Africa, (40, 108)),
        ]),
    }
}

pub fn check_gdvcr_stats(stats: &DatasetStats) -> Result<()> {
    let reference = gdvcr_reference_stats();
    if *stats != reference {
        return Err(Error::Malformed(format!(
            "GD-VCR counts differ from the published statistics: found {} images / {} QA pairs",
            stats.images, stats.qa_pairs
        )));
    }
    Ok(())
}
