#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gdk_core::backend::{ConditionalTable, EOS};
use gdk_core::eval::{
    AccuracyRow, Culture, CultureRow, IntrinsicReport, ModelAccuracy, ModelBlock, SeedAccuracy,
    Table2Column,
};
use gdk_core::fusion::Region;
use gdk_core::manifest::{sha256_bytes, Manifest};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compare against a committed golden file; `GDK_BLESS=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden(name);
    if std::env::var_os("GDK_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
    }
    let expected =
        std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!(
            "{name} differs:\n--- expected\n{expected}--- actual\n{actual}"
        ))
    }
}

// Intrinsic grades: (1), (2), (3), kappa per culture.
pub const TABLE1_COMET: [(Culture, [f64; 4]); 5] = [
    (Culture::India, [2.32, 2.16, 2.65, 0.71]),
    (Culture::SouthKorea, [1.93, 1.86, 2.32, 0.67]),
    (Culture::Nigeria, [1.97, 1.98, 2.27, 0.61]),
    (Culture::Iran, [2.09, 2.31, 2.42, 0.63]),
    (Culture::Indonesia, [2.28, 2.36, 2.55, 0.66]),
];

pub const TABLE1_GD_COMET: [(Culture, [f64; 4]); 5] = [
    (Culture::India, [2.62, 2.54, 2.73, 0.74]),
    (Culture::SouthKorea, [2.13, 1.92, 2.35, 0.65]),
    (Culture::Nigeria, [2.25, 1.92, 2.35, 0.59]),
    (Culture::Iran, [2.27, 2.38, 2.58, 0.76]),
    (Culture::Indonesia, [2.43, 2.46, 2.58, 0.77]),
];

pub const REPORTED_AVG_KAPPA: [(&str, f64); 2] = [("comet", 0.656), ("gd-comet", 0.702)];

fn block(rows: &[(Culture, [f64; 4])]) -> ModelBlock {
    let kappas: Vec<f64> = rows.iter().map(|(_, v)| v[3]).collect();
    ModelBlock {
        rows: rows
            .iter()
            .map(|(c, v)| {
                (
                    *c,
                    CultureRow {
                        means: [Some(v[0]), Some(v[1]), Some(v[2])],
                        kappa: Some(v[3]),
                    },
                )
            })
            .collect(),
        average_kappa: gdk_core::eval::average_kappa(&kappas).ok(),
    }
}

pub fn table1_report() -> IntrinsicReport {
    IntrinsicReport {
        models: vec![
            ("comet".into(), block(&TABLE1_COMET)),
            ("gd-comet".into(), block(&TABLE1_GD_COMET)),
        ],
    }
}

// Accuracy by model: GD-VCR overall, West, South Asia, Africa, East Asia.
pub const TABLE2: [(&str, [f64; 5]); 7] = [
    ("Human", [88.84, 91.23, 92.98, 87.93, 83.05]),
    ("VisualBERT*", [53.27, 65.82, 52.04, 51.85, 45.39]),
    ("ViLBERT*", [58.47, 64.37, 62.9, 62.04, 46.45]),
    ("vl-bert", [58.63, 65.27, 64.92, 58.17, 47.88]),
    ("gd-bart", [52.69, 57.69, 54.35, 51.87, 41.87]),
    ("comet", [59.59, 66.78, 64.25, 57.71, 49.64]),
    ("gd-comet", [63.51, 69.93, 68.17, 64.81, 53.07]),
];

pub fn table2_report() -> gdk_core::eval::ExtrinsicReport {
    let models = TABLE2
        .iter()
        .map(|(model, v)| {
            let row = AccuracyRow {
                overall: v[0],
                regions: Region::TABLE_ORDER
                    .iter()
                    .zip(&v[1..])
                    .map(|(r, x)| (*r, *x))
                    .collect(),
            };
            ModelAccuracy {
                model: model.to_string(),
                seeds: vec![SeedAccuracy {
                    seed: 1,
                    accuracy: row.clone(),
                    counts: BTreeMap::new(),
                }],
                average: row,
            }
        })
        .collect();
    gdk_core::eval::ExtrinsicReport { models }
}

pub fn table2_paper_columns() -> Vec<Table2Column> {
    gdk_core::eval::table2_columns(&table2_report(), &["Human"])
}

/// Printed seed averages: Overall, West, South Asia, East Asia, Africa.
pub const TABLE5_AVERAGES: [(&str, [f64; 5]); 4] = [
    ("vl-bert", [58.63, 65.27, 64.92, 47.88, 58.17]),
    ("gd-bart", [52.69, 57.69, 54.35, 41.87, 51.87]),
    ("comet", [59.59, 66.78, 64.25, 49.64, 57.71]),
    ("gd-comet", [63.51, 69.93, 68.17, 53.07, 64.81]),
];

pub const TABLE5_COLUMNS: [Option<Region>; 5] = [
    None,
    Some(Region::West),
    Some(Region::SouthAsia),
    Some(Region::EastAsia),
    Some(Region::Africa),
];

/// Random toy table over EOS plus `vocab_size - 1` letters with a row for
/// every non-EOS prefix shorter than `max_len`. Weights are drawn from a
/// small set so equal-probability continuations are common.
pub fn random_toy_table<R: Rng>(
    rng: &mut R,
    vocab_size: usize,
    max_len: usize,
) -> ConditionalTable {
    let letters: Vec<String> = (0..vocab_size - 1)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect();
    let tokens: Vec<String> = std::iter::once(EOS.to_string())
        .chain(letters.iter().cloned())
        .collect();
    let mut prefixes: Vec<Vec<String>> = vec![vec![]];
    let mut frontier = prefixes.clone();
    for _ in 1..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for l in &letters {
                let mut q = p.clone();
                q.push(l.clone());
                next.push(q);
            }
        }
        prefixes.extend(next.iter().cloned());
        frontier = next;
    }
    let mut table = ConditionalTable::new();
    for prefix in prefixes {
        let mut weights: Vec<f64> = tokens
            .iter()
            .map(|_| [0.0, 1.0, 1.0, 2.0, 4.0][rng.random_range(0..5)])
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            let i = rng.random_range(0..weights.len());
            weights[i] = 1.0;
        }
        let total: f64 = weights.iter().sum();
        let row = tokens
            .iter()
            .zip(&weights)
            .map(|(t, w)| (t.clone(), w / total))
            .collect();
        table.insert(prefix, row);
    }
    table
}

/// Every complete sequence (ends in EOS or reaches `max_len`) with
/// non-zero probability, sorted by log-probability descending and then by
/// token order.
pub fn enumerate_sequences(table: &ConditionalTable, max_len: usize) -> Vec<(Vec<String>, f64)> {
    fn walk(
        table: &ConditionalTable,
        max_len: usize,
        prefix: &mut Vec<String>,
        log_prob: f64,
        out: &mut Vec<(Vec<String>, f64)>,
    ) {
        let row = &table[prefix.as_slice()];
        for (tok, &p) in row {
            if p <= 0.0 {
                continue;
            }
            let lp = log_prob + p.ln();
            prefix.push(tok.clone());
            if tok == EOS || prefix.len() == max_len {
                out.push((prefix.clone(), lp));
            } else {
                walk(table, max_len, prefix, lp, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(table, max_len, &mut Vec::new(), 0.0, &mut out);
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Number of adjacent equal-score pairs in a sorted enumeration.
pub fn tie_count(seqs: &[(Vec<String>, f64)]) -> usize {
    seqs.windows(2).filter(|w| w[0].1 == w[1].1).count()
}

pub fn gdk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdk"))
        .args(args)
        .current_dir(dir)
        .env("GDK_CONFIG", fixture("toy/config.toml"))
        .output()
        .expect("spawn gdk")
}

fn run_ok(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = gdk(dir, args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "gdk {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Final artifact of the toy pipeline, followed by its upstream chain.
pub const PIPELINE_CHAIN: [&str; 7] = [
    "extrinsic.json",
    "selection.jsonl",
    "inferences.jsonl",
    "phase2",
    "phase1",
    "noised.jsonl",
    "filtered.jsonl",
];

/// filter, build-noise, train-phase1, train-phase2, generate, select and
/// eval-extrinsic on the toy fixtures, writing into `dir`.
pub fn run_toy_pipeline(dir: &Path) -> Result<(), String> {
    let assertions = fixture("toy/assertions.jsonl");
    let triples = fixture("toy/triples.tsv");
    let qa = fixture("toy/qa.jsonl");
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    let (assertions, triples, qa) = (s(&assertions), s(&triples), s(&qa));
    run_ok(
        dir,
        &[
            "filter",
            "--input",
            &assertions,
            "--output",
            "filtered.jsonl",
            "--stats",
            "filter_stats.json",
        ],
    )?;
    run_ok(
        dir,
        &[
            "build-noise",
            "--input",
            "filtered.jsonl",
            "--output",
            "noised.jsonl",
        ],
    )?;
    run_ok(
        dir,
        &[
            "train-phase1",
            "--input",
            "noised.jsonl",
            "--output",
            "phase1",
        ],
    )?;
    run_ok(
        dir,
        &[
            "train-phase2",
            "--model",
            "phase1",
            "--triples",
            &triples,
            "--output",
            "phase2",
        ],
    )?;
    run_ok(
        dir,
        &[
            "generate",
            "--model",
            "phase2",
            "--qa",
            &qa,
            "--output",
            "inferences.jsonl",
        ],
    )?;
    run_ok(
        dir,
        &[
            "select",
            "--inferences",
            "inferences.jsonl",
            "--qa",
            &qa,
            "--output",
            "selection.jsonl",
        ],
    )?;
    run_ok(
        dir,
        &[
            "eval-extrinsic",
            "--qa",
            &qa,
            "--selection",
            "selection.jsonl",
            "--predictions-out",
            "predictions.jsonl",
            "--model-name",
            "gd-comet",
            "--output",
            "extrinsic.json",
            "--text",
            "extrinsic.txt",
        ],
    )
}

/// Relative path and contents of every file under `dir`, sorted.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Walk the manifests from the final artifact back to the filtered corpus:
/// every artifact verifies against its manifest, every parent digest
/// matches the parent manifest on disk, and the chain covers
/// [`PIPELINE_CHAIN`] in order.
pub fn check_manifest_chain(dir: &Path) -> Result<(), String> {
    let mut visited = Vec::new();
    let mut current = PIPELINE_CHAIN[0].to_string();
    loop {
        let manifest =
            gdk_core::manifest::verify_artifact(&dir.join(&current)).map_err(|e| e.to_string())?;
        visited.push(current.clone());
        let mut next = None;
        for parent in &manifest.parents {
            let bytes = std::fs::read(dir.join(&parent.path))
                .map_err(|e| format!("{}: {e}", parent.path))?;
            if sha256_bytes(&bytes) != parent.sha256 {
                return Err(format!("parent manifest {} changed", parent.path));
            }
            let artifact = match parent.path.strip_suffix("/manifest.json") {
                Some(d) => d.to_string(),
                None => parent.path.trim_end_matches(".manifest.json").to_string(),
            };
            if PIPELINE_CHAIN.contains(&artifact.as_str()) && !visited.contains(&artifact) {
                next = Some(artifact);
            }
        }
        match next {
            Some(n) => current = n,
            None => break,
        }
    }
    if visited != PIPELINE_CHAIN {
        return Err(format!("manifest chain {visited:?}"));
    }
    let last = Manifest::load(&gdk_core::manifest::manifest_path(
        &dir.join(PIPELINE_CHAIN[0]),
    ))
    .map_err(|e| e.to_string())?;
    let phases: BTreeSet<String> = last.lineage.iter().map(|m| m.phase.to_string()).collect();
    if !phases.contains("phase1") || !phases.contains("phase2") {
        return Err(format!("final lineage lacks training phases: {phases:?}"));
    }
    Ok(())
}
