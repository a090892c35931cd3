//! Exit-criteria suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when the set of failing criteria differs from `KNOWN_FAILING`.

mod common;

use std::time::{Duration, Instant};

use gdk_core::backend::{
    beam_search, make_hash_embedder, make_toy_lm, BeamConfig, BigramLm, Embedder, EOS,
};
use gdk_core::corpus::{filter_by_score, CulturalAssertion, Facet, KnowledgeTriple};
use gdk_core::eval::{average_kappa, cohen_kappa, load_seed_results, render_table1, render_table2};
use gdk_core::fusion::{attention_pool, AttentionPooler};
use gdk_core::inference::{
    generate_inferences, select_top_k, GenerationRequest, KnowledgeSentence, Provenance,
};
use gdk_core::noising::{
    plan_infill_spans, sentence_permutation, text_infilling, token_deletion, token_masking,
    write_noised, TokenSequence, MASK,
};
use gdk_core::relations::{list_relations, render_facet, Relation};
use gdk_core::rng::seeded;
use gdk_core::training::{run_phase2, select_checkpoint, CheckpointRecord, PhaseConfig};
use gdk_core::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRng, TestRunner};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

type Check = Result<String, String>;

/// Criteria that cannot pass as stated; see the README.
const KNOWN_FAILING: &[&str] = &["seed averaging"];

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:?}, limit {limit:?}"))
    }
}

fn assertion(i: usize, score: f64) -> CulturalAssertion {
    CulturalAssertion::new(
        format!("a{i}"),
        format!("assertion {i}"),
        "Kenya",
        Facet::Food,
        score,
    )
    .unwrap()
}

fn corpus_filtering() -> Check {
    let start = Instant::now();
    let mut rng = seeded(7);
    let scores: Vec<f64> = (0..1000)
        .map(|i| match i % 10 {
            0 => 0.5,
            1 => f64::from_bits(0.5f64.to_bits() + 1),
            2 => 0.0,
            3 => 1.0,
            _ => (rng.random_range(0..=1000) as f64) / 1000.0,
        })
        .collect();
    let corpus: Vec<CulturalAssertion> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| assertion(i, s))
        .collect();
    let expected: Vec<String> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.5)
        .map(|(i, _)| format!("a{i}"))
        .collect();
    let kept: Vec<String> = filter_by_score(&corpus, 0.5)
        .into_iter()
        .map(|a| a.id)
        .collect();
    if kept != expected {
        return Err(format!(
            "kept {} records, expected {}",
            kept.len(),
            expected.len()
        ));
    }

    let strategy = (
        prop::collection::vec(0u32..=20, 0..60),
        0u32..=20,
        0u32..=20,
    );
    runner(256)
        .run(&strategy, |(raw, t1, t2)| {
            let corpus: Vec<CulturalAssertion> = raw
                .iter()
                .enumerate()
                .map(|(i, &s)| assertion(i, s as f64 / 20.0))
                .collect();
            let (lo, hi) = (t1.min(t2) as f64 / 20.0, t1.max(t2) as f64 / 20.0);
            let once = filter_by_score(&corpus, lo);
            prop_assert_eq!(&filter_by_score(&once, lo), &once);
            let strict = filter_by_score(&corpus, hi);
            prop_assert!(strict.iter().all(|a| once.contains(a)));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{} of 1000 kept", kept.len()))
}

const RELATION_NAMES: [&str; 34] = [
    "AtLocation",
    "CapableOf",
    "isBefore",
    "Causes",
    "CausesDesire",
    "isFilledBy",
    "CreatedBy",
    "Desires",
    "oEffect",
    "HasPrerequisite",
    "HasFirstSubevent",
    "oReact",
    "HasA",
    "HasProperty",
    "oWant",
    "InstanceOf",
    "IsA",
    "xAttr",
    "LocatedNear",
    "MadeOf",
    "xEffect",
    "MadeUpOf",
    "MotivatedByGoal",
    "xIntent",
    "ObjectUse",
    "PartOf",
    "xNeed",
    "ReceivesAction",
    "SymbolOf",
    "xReact",
    "UsedFor",
    "isAfter",
    "xReason",
    "xWant",
];

fn relation_registry() -> Check {
    let names: Vec<&str> = list_relations().into_iter().map(Relation::name).collect();
    if names != RELATION_NAMES {
        return Err(format!("registry is {names:?}"));
    }
    Ok("34 relations in order".into())
}

fn facet_templates() -> Check {
    let cases = [
        (
            "clothing",
            "a sari",
            "India",
            "PersonX wears a sari in India",
        ),
        (
            "food",
            "jollof rice",
            "Nigeria",
            "PersonX eats jollof rice in Nigeria",
        ),
        (
            "drink",
            "soju",
            "South Korea",
            "PersonX drinks soju in South Korea",
        ),
        (
            "festival",
            "Nowruz",
            "Iran",
            "PersonX celebrates Nowruz in Iran",
        ),
    ];
    for (facet, concept, country, expected) in cases {
        let got = render_facet(facet, concept, country).map_err(|e| e.to_string())?;
        if got != expected {
            return Err(format!("{facet}: {got:?} != {expected:?}"));
        }
    }
    Ok("4 patterns byte-exact".into())
}

fn beam_oracle() -> Check {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut fixtures = 0;
    let mut ties = 0;
    for _ in 0..40 {
        let vocab = rng.random_range(2..=5);
        let max_len = rng.random_range(1..=4);
        let table = common::random_toy_table(&mut rng, vocab, max_len);
        let oracle = common::enumerate_sequences(&table, max_len);
        let lm = make_toy_lm(table).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..=oracle.len());
        for num_return in [k, oracle.len()] {
            let config = BeamConfig {
                beam_width: 5usize.pow(max_len as u32 + 1),
                max_len,
                num_return,
                length_penalty: None,
            };
            let got = beam_search(&lm, &[], &config).map_err(|e| e.to_string())?;
            let got: Vec<(Vec<String>, f64)> =
                got.into_iter().map(|h| (h.tokens, h.log_prob)).collect();
            if got != oracle[..num_return] {
                return Err(format!(
                    "vocab {vocab}, max_len {max_len}, top-{num_return} differs from enumeration"
                ));
            }
        }
        fixtures += 1;
        ties += common::tie_count(&oracle);
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{fixtures} toy LMs, {ties} tied pairs ordered"))
}

fn generation_cardinality() -> Check {
    let mut table = gdk_core::backend::ConditionalTable::new();
    table.insert(
        vec![],
        [("tea", 0.4), ("rice", 0.3), ("stew", 0.2), (EOS, 0.1)]
            .into_iter()
            .map(|(t, p)| (t.to_string(), p))
            .collect(),
    );
    let lm = make_toy_lm(table).map_err(|e| e.to_string())?;
    let base =
        GenerationRequest::new("PersonX eats jollof rice in Nigeria").with_country("Nigeria");
    let count = |req: &GenerationRequest| {
        generate_inferences(&lm, req)
            .map(|s| s.len())
            .map_err(|e| e.to_string())
    };
    let n = count(&base)?;
    if n != 170 {
        return Err(format!("default request gave {n} inferences"));
    }
    for (num_return, relations) in [(1, 34), (3, 34), (5, 1), (2, 7), (4, 20)] {
        let req = GenerationRequest {
            num_return,
            relations: Relation::ALL[..relations].to_vec(),
            ..base.clone()
        };
        let n = count(&req)?;
        if n != num_return * relations {
            return Err(format!("{num_return} x {relations} gave {n}"));
        }
    }
    Ok("170 by default, subsets scale".into())
}

fn sequence(sentences: &[Vec<&str>]) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut bounds = Vec::new();
    for s in sentences {
        let start = tokens.len();
        tokens.extend(s.iter().map(|t| t.to_string()));
        bounds.push((start, tokens.len()));
    }
    TokenSequence::new(tokens, bounds).unwrap()
}

fn noising_invariants() -> Check {
    let words = prop::sample::select(vec![
        "tea", "rice", "is", "served", "hot", "at", "weddings", ".", ",",
    ]);
    let sentences = prop::collection::vec(prop::collection::vec(words, 1..8), 1..5);
    let strategy = (sentences, 0u32..=100, 0u32..=100, 1u32..=60, any::<u64>());
    runner(10_000)
        .run(&strategy, |(sents, rate, fraction, span, seed)| {
            let seq = sequence(&sents);
            let n = seq.len();
            let rate = rate as f64 / 100.0;
            let fraction = fraction as f64 / 100.0;
            let mean_span = span as f64 / 10.0;

            let del = token_deletion(&seq, rate, seed).unwrap();
            let removed = (rate * n as f64).floor() as usize;
            prop_assert_eq!(del.source.len(), n - removed);
            if removed > 0 {
                prop_assert!(del.source.len() < n);
            }

            let perm = sentence_permutation(&seq, seed).unwrap();
            let mut before: Vec<&[String]> = seq.sentences().collect();
            let mut after: Vec<&[String]> = perm.source.sentences().collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);

            let infill = text_infilling(&seq, fraction, mean_span, seed).unwrap();
            let spans = plan_infill_spans(n, fraction, mean_span, seed).unwrap();
            let masks = infill.source.tokens().iter().filter(|t| *t == MASK).count();
            prop_assert_eq!(masks, spans.len());

            let masked = token_masking(&seq, rate, seed).unwrap();
            prop_assert_eq!(masked.source.len(), n);

            let examples = [del, perm, infill, masked];
            let again = [
                token_deletion(&seq, rate, seed).unwrap(),
                sentence_permutation(&seq, seed).unwrap(),
                text_infilling(&seq, fraction, mean_span, seed).unwrap(),
                token_masking(&seq, rate, seed).unwrap(),
            ];
            let (mut a, mut b) = (Vec::new(), Vec::new());
            write_noised(&mut a, &examples).unwrap();
            write_noised(&mut b, &again).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 trials".into())
}

fn checkpoint_selection() -> Check {
    let strategy = prop::collection::vec(0u32..6, 1..40);
    runner(1000)
        .run(&strategy, |losses| {
            let records: Vec<CheckpointRecord> = losses
                .iter()
                .enumerate()
                .map(|(i, &l)| CheckpointRecord {
                    epoch: i as u32 + 1,
                    validation_loss: l as f64 * 0.25,
                })
                .collect();
            let mut best = 0;
            for i in 1..records.len() {
                if records[i].validation_loss < records[best].validation_loss {
                    best = i;
                }
            }
            prop_assert_eq!(select_checkpoint(&records).unwrap(), records[best]);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut fresh = BigramLm::new(0.1);
    let triples =
        [KnowledgeTriple::new("PersonX drinks tea", Relation::XIntent, "to relax").unwrap()];
    match run_phase2(&mut fresh, &triples, &PhaseConfig::phase2()) {
        Err(Error::PhaseOrdering(_)) => {
            Ok("1000 sequences; phase 2 without phase 1 rejected".into())
        }
        other => Err(format!(
            "phase 2 on a fresh model gave {:?}",
            other.map(|o| o.selected)
        )),
    }
}

fn selection_oracle() -> Check {
    let words = [
        "tea", "rice", "wedding", "bow", "henna", "festival", "market", "prayer", "dance",
        "greeting",
    ];
    let mut rng = seeded(99);
    let embedder = make_hash_embedder(64, 3).map_err(|e| e.to_string())?;
    for fixture in 0..200 {
        let n = rng.random_range(1..=30);
        let sentences: Vec<KnowledgeSentence> = (0..n)
            .map(|_| {
                let len = rng.random_range(1..=4);
                let text = (0..len)
                    .map(|_| *words.choose(&mut rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ");
                KnowledgeSentence {
                    sentence: text.clone(),
                    provenance: Provenance {
                        relation: None,
                        tail: text,
                    },
                }
            })
            .collect();
        let query = (0..3)
            .map(|_| *words.choose(&mut rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        let k = rng.random_range(1..=n + 2);

        let q = embedder.embed(&query);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut scored: Vec<(usize, f64)> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let e = embedder.embed(&s.sentence);
                let dot: f64 = q.iter().zip(&e).map(|(a, b)| a * b).sum();
                (i, dot / (norm(&q) * norm(&e)))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);

        let got = select_top_k(&sentences, &query, &embedder, k).map_err(|e| e.to_string())?;
        if got.items.len() != scored.len() {
            return Err(format!(
                "fixture {fixture}: {} items, expected {}",
                got.items.len(),
                scored.len()
            ));
        }
        for (item, (i, sim)) in got.items.iter().zip(&scored) {
            if item.sentence != sentences[*i].sentence || (item.similarity - sim).abs() > 1e-12 {
                return Err(format!("fixture {fixture}: order differs from full sort"));
            }
        }

        let target = sentences[rng.random_range(0..n)].sentence.clone();
        let top = select_top_k(&sentences, &target, &embedder, 1).map_err(|e| e.to_string())?;
        let first = &top.items[0];
        if first.sentence != target || (first.similarity - 1.0).abs() > 1e-9 {
            return Err(format!(
                "fixture {fixture}: identical query ranked {:?}",
                first.sentence
            ));
        }
    }
    Ok("200 fixtures".into())
}

fn pooling() -> Check {
    let mut rng = seeded(5);
    for set in 0..1000 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(1..=6);
        let embeddings: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let pooler = AttentionPooler {
            query: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let pooled = attention_pool(&embeddings, &pooler).map_err(|e| e.to_string())?;

        let wsum: f64 = pooled.weights.iter().sum();
        if pooled.weights.iter().any(|w| *w < 0.0) || (wsum - 1.0).abs() > 1e-12 {
            return Err(format!(
                "set {set}: weights {:?} not on the simplex",
                pooled.weights
            ));
        }
        for j in 0..d {
            let lo = embeddings
                .iter()
                .map(|e| e[j])
                .fold(f64::INFINITY, f64::min);
            let hi = embeddings
                .iter()
                .map(|e| e[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if pooled.vector[j] < lo - 1e-12 || pooled.vector[j] > hi + 1e-12 {
                return Err(format!("set {set}: coordinate {j} outside the hull"));
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| embeddings[i].clone()).collect();
        let again = attention_pool(&permuted, &pooler).map_err(|e| e.to_string())?;
        let vec_ok = again
            .vector
            .iter()
            .zip(&pooled.vector)
            .all(|(a, b)| (a - b).abs() < 1e-12);
        let w_ok = order
            .iter()
            .zip(&again.weights)
            .all(|(&i, w)| (w - pooled.weights[i]).abs() < 1e-12);
        if !vec_ok || !w_ok {
            return Err(format!("set {set}: not permutation-equivariant"));
        }

        let zero = AttentionPooler {
            query: vec![0.0; d],
        };
        let mean_pool = attention_pool(&embeddings, &zero).map_err(|e| e.to_string())?;
        for j in 0..d {
            let mean = embeddings.iter().map(|e| e[j]).sum::<f64>() / n as f64;
            if (mean_pool.vector[j] - mean).abs() > 1e-9 {
                return Err(format!("set {set}: zero query is not the mean"));
            }
        }
    }

    // logits ln 3 and 0 give weights 3/4 and 1/4
    let golden = attention_pool(
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &AttentionPooler {
            query: vec![3f64.ln(), 0.0],
        },
    )
    .map_err(|e| e.to_string())?;
    if (golden.vector[0] - 0.75).abs() > 1e-9 || (golden.vector[1] - 0.25).abs() > 1e-9 {
        return Err(format!("golden case gave {:?}", golden.vector));
    }
    Ok("1000 sets, golden case".into())
}

fn kappa() -> Check {
    for seq in [vec![0u8, 1, 2, 3, 3, 1], vec![2, 2, 2], vec![3, 0]] {
        let k = cohen_kappa(&seq, &seq).map_err(|e| e.to_string())?;
        if k != 1.0 {
            return Err(format!("identical {seq:?} gave {k}"));
        }
    }
    // observed 1/2, chance (2*2 + 2*2) / 16 = 1/2
    let k = cohen_kappa(&[0, 0, 1, 1], &[0, 1, 0, 1]).map_err(|e| e.to_string())?;
    if k.abs() > 1e-12 {
        return Err(format!("chance-level fixture gave {k}"));
    }
    let mut parts = Vec::new();
    for ((model, reported), rows) in common::REPORTED_AVG_KAPPA
        .iter()
        .zip([common::TABLE1_COMET, common::TABLE1_GD_COMET])
    {
        let column: Vec<f64> = rows.iter().map(|(_, v)| v[3]).collect();
        let avg = average_kappa(&column).map_err(|e| e.to_string())?;
        if (avg - reported).abs() > 0.0005 {
            return Err(format!("{model}: average {avg:.4}, reported {reported}"));
        }
        parts.push(format!("{model} {avg:.3}"));
    }
    Ok(parts.join(", "))
}

fn seed_averaging() -> Check {
    let report =
        load_seed_results(&common::fixture("table5_seeds.csv")).map_err(|e| e.to_string())?;
    let mut misses = Vec::new();
    let mut cells = 0;
    for (model, printed) in common::TABLE5_AVERAGES {
        let m = report
            .models
            .iter()
            .find(|m| m.model == model)
            .ok_or_else(|| format!("{model} missing"))?;
        for (col, expected) in common::TABLE5_COLUMNS.iter().zip(printed) {
            let got = m
                .average
                .get(*col)
                .ok_or_else(|| format!("{model} lacks {col:?}"))?;
            cells += 1;
            if (got - expected).abs() > 0.005 {
                let label = col.map_or("Overall", |r| r.label());
                misses.push(format!("{model} {label} {got:.4} vs {expected}"));
            }
        }
    }
    if misses.is_empty() {
        Ok(format!("{cells} cells"))
    } else {
        Err(format!(
            "{} of {cells} cells off by > 0.005: {}",
            misses.len(),
            misses.join("; ")
        ))
    }
}

fn table_rendering() -> Check {
    common::check_golden("table1.txt", &render_table1(&common::table1_report()))?;
    common::check_golden(
        "table2.txt",
        &render_table2(&common::table2_paper_columns()),
    )?;
    Ok("table1.txt, table2.txt".into())
}

fn end_to_end() -> Check {
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    common::run_toy_pipeline(first.path())?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(60))?;
    common::run_toy_pipeline(second.path())?;
    let a = common::snapshot_dir(first.path());
    let b = common::snapshot_dir(second.path());
    if a != b {
        let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        return Err(format!("runs differ in {differing:?}"));
    }
    common::check_manifest_chain(first.path())?;
    Ok(format!(
        "{} files identical across runs, {:.1}s",
        a.len(),
        elapsed.as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 13] = [
        ("corpus filtering", corpus_filtering),
        ("relation registry", relation_registry),
        ("facet templates", facet_templates),
        ("beam search oracle", beam_oracle),
        ("generation cardinality", generation_cardinality),
        ("noising invariants", noising_invariants),
        ("checkpoint selection", checkpoint_selection),
        ("selection oracle", selection_oracle),
        ("pooling", pooling),
        ("kappa", kappa),
        ("seed averaging", seed_averaging),
        ("table rendering", table_rendering),
        ("end-to-end toy pipeline", end_to_end),
    ];
    let mut failing = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                failing.push(name);
            }
        }
    }
    let unexpected: Vec<&&str> = failing
        .iter()
        .filter(|n| !KNOWN_FAILING.contains(n))
        .collect();
    let fixed: Vec<&&str> = KNOWN_FAILING
        .iter()
        .filter(|n| !failing.contains(n))
        .collect();
    println!(
        "{} of {} criteria pass; known failing: {:?}",
        criteria.len() - failing.len(),
        criteria.len(),
        KNOWN_FAILING
    );
    if !unexpected.is_empty() || !fixed.is_empty() {
        println!("unexpected failures: {unexpected:?}; known failures now passing: {fixed:?}");
        std::process::exit(1);
    }
}
