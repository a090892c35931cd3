use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gdk_core::backend::{
    load_model, make_hash_embedder, save_model, BigramLm, Phase, Scripted, SequenceModel,
};
use gdk_core::config::RunConfig;
use gdk_core::corpus::{
    filter_by_score, filter_stats, load_assertions, load_triples, write_assertions,
};
use gdk_core::eval::{
    self, accuracy_by_region, build_intrinsic_set, dataset_stats, gold_labels, intrinsic_report,
    load_annotations, load_seed_results, render_seed_table, render_table1, render_table2,
    table2_columns, ConceptSheet, ExtrinsicReport, IntrinsicReport, PredictionRecord,
};
use gdk_core::fusion::{build_knowledge_query, load_qa, FeatureResolver, QAInstance};
use gdk_core::inference::{
    freeform_records, generate_freeform, generate_inferences, group_records, select_top_k,
    GenerationRequest, InferenceRecord, SelectionRecord, VCR_COUNTRY_TAG,
};
use gdk_core::jsonl::{load_jsonl, save_jsonl};
use gdk_core::manifest::{artifact_hash, verify_artifact, Manifest};
use gdk_core::noising::{build_pretrain_dataset, read_noised, write_noised, PunctTokenizer};
use gdk_core::pipeline::{knowledge_by_qa, train_and_predict, ScorerSettings};
use gdk_core::training::{run_phase1, run_phase2, PhaseOutcome};
use gdk_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gdk",
    version,
    about = "Geo-diverse commonsense knowledge pipeline"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true, env = "GDK_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep cultural assertions scoring above a threshold.
    Filter(FilterArgs),
    /// Build the denoising pretraining dataset.
    BuildNoise(BuildNoiseArgs),
    /// Write an untrained model.
    InitModel(InitModelArgs),
    /// Denoising pretraining.
    TrainPhase1(TrainPhase1Args),
    /// Knowledge-triple fine-tuning of a phase-1 model.
    TrainPhase2(TrainPhase2Args),
    /// Generate per-relation inferences.
    Generate(GenerateArgs),
    /// Select the inference sentences most similar to a query.
    Select(SelectArgs),
    /// Build the intrinsic item set and aggregate human grades.
    EvalIntrinsic(EvalIntrinsicArgs),
    /// Per-region QA accuracy, averaged over seeds.
    EvalExtrinsic(EvalExtrinsicArgs),
    /// Render result tables from report files.
    Report(ReportArgs),
}

fn threshold(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Defaults to the configured score threshold (0.5).
    #[arg(long, value_parser = threshold)]
    threshold: Option<f64>,
    /// Write corpus statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct BuildNoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InitModelArgs {
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainPhase1Args {
    /// Noised dataset from build-noise.
    #[arg(long)]
    input: PathBuf,
    /// Model directory to write.
    #[arg(long)]
    output: PathBuf,
    /// Start from this model directory instead of an untrained model.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPhase2Args {
    /// Phase-1 model directory.
    #[arg(long)]
    model: PathBuf,
    /// Tab-separated head, relation, tail triples.
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Single input context.
    #[arg(long, conflicts_with = "qa", required_unless_present = "qa")]
    context: Option<String>,
    #[arg(long, requires = "context")]
    country: Option<String>,
    /// QA set; one knowledge query per instance.
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Tag every query with the VCR training-set region.
    #[arg(long)]
    vcr: bool,
    /// Continue the input without a relation (phase-1 models only).
    #[arg(long)]
    freeform: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    inferences: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, conflicts_with = "qa", required_unless_present = "qa")]
    query: Option<String>,
    /// QA set supplying each group's question as the query.
    #[arg(long)]
    qa: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EvalIntrinsicArgs {
    /// JSON map culture -> facet -> five concepts.
    #[arg(long, requires = "items")]
    concepts: Option<PathBuf>,
    /// Where to write the rendered item set.
    #[arg(long)]
    items: Option<PathBuf>,
    /// CSV of human grades.
    #[arg(long, requires = "output")]
    annotations: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Rendered table.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args)]
struct EvalExtrinsicArgs {
    /// Report JSON.
    #[arg(long)]
    output: PathBuf,
    /// Rendered per-seed table.
    #[arg(long)]
    text: Option<PathBuf>,
    /// CSV of per-seed accuracies (model,seed,region,accuracy).
    #[arg(long, conflicts_with_all = ["qa", "predictions"])]
    seed_results: Option<PathBuf>,
    /// QA set to evaluate on.
    #[arg(long, required_unless_present = "seed_results")]
    qa: Option<PathBuf>,
    /// Existing predictions (JSON lines); skips scorer training.
    #[arg(long, conflicts_with_all = ["selection", "train_qa"])]
    predictions: Option<PathBuf>,
    /// Selected knowledge from the select step.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// QA set for scorer training; defaults to the evaluation set.
    #[arg(long)]
    train_qa: Option<PathBuf>,
    /// Where to write predictions of the trained scorers.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
    #[arg(long, default_value = "scorer")]
    model_name: String,
    /// Check the QA set against the published GD-VCR counts.
    #[arg(long)]
    check_gdvcr: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    intrinsic: Option<PathBuf>,
    /// May be repeated; models are listed in order.
    #[arg(long)]
    extrinsic: Vec<PathBuf>,
    /// Model ids treated as reference columns.
    #[arg(long, default_value = "Human")]
    reference: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::PhaseOrdering(_) => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Filter(a) => filter(&config, a),
        Command::BuildNoise(a) => build_noise(&config, a),
        Command::InitModel(a) => init_model(&config, a),
        Command::TrainPhase1(a) => train_phase1(&config, a),
        Command::TrainPhase2(a) => train_phase2(&config, a),
        Command::Generate(a) => generate(&config, a),
        Command::Select(a) => select(&config, a),
        Command::EvalIntrinsic(a) => eval_intrinsic(a),
        Command::EvalExtrinsic(a) => eval_extrinsic(&config, a),
        Command::Report(a) => report(a),
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::in_file(path, e.into()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::in_file(path, e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::in_file(path, e.into()))
}

fn filter(config: &RunConfig, a: FilterArgs) -> Result<()> {
    let threshold = a.threshold.unwrap_or(config.score_threshold);
    let all = load_assertions(&a.input)?;
    let kept = filter_by_score(&all, threshold);
    write_assertions(create(&a.output)?, &kept)?;
    let mut m = Manifest::new("filter", json!({ "threshold": threshold }));
    m.add_input(&a.input)?;
    m.add_output(&a.output)?;
    let mut outputs = vec![a.output.as_path()];
    if let Some(stats) = &a.stats {
        write_json(stats, &filter_stats(&all, threshold))?;
        m.add_output(stats)?;
        outputs.push(stats);
    }
    m.write_for(&outputs)?;
    eprintln!("kept {} of {} assertions", kept.len(), all.len());
    Ok(())
}

fn build_noise(config: &RunConfig, a: BuildNoiseArgs) -> Result<()> {
    let upstream = verify_artifact(&a.input)?;
    let seed = a.seed.unwrap_or(config.seed);
    let params = config.noise_params();
    let assertions = load_assertions(&a.input)?;
    let examples = build_pretrain_dataset(&assertions, &params, seed, &PunctTokenizer)?;
    write_noised(create(&a.output)?, &examples)?;
    let mut m = Manifest::new("build-noise", json!({ "seed": seed, "noise": params }));
    m.add_verified_input(&a.input, &upstream)?;
    m.add_output(&a.output)?;
    m.write_for(&[&a.output])?;
    Ok(())
}

fn fresh_model(config: &RunConfig) -> Box<dyn SequenceModel> {
    Box::new(BigramLm::new(config.bigram_alpha))
}

fn with_script(model: Box<dyn SequenceModel>, losses: &Option<Vec<f64>>) -> Box<dyn SequenceModel> {
    match losses {
        Some(l) => Box::new(Scripted::new(model, l.clone())),
        None => model,
    }
}

fn save_trained(
    dir: &Path,
    command: &str,
    model: &mut dyn SequenceModel,
    outcome: &PhaseOutcome,
    data: &Path,
    upstream: Option<(&Path, &Manifest)>,
    config: &RunConfig,
) -> Result<()> {
    let data_hash = artifact_hash(data)?;
    if let Some(mark) = model.lineage_mut().marks.last_mut() {
        mark.data_hash = Some(data_hash);
    }
    save_model(dir, model)?;
    let phase_config = config.phase_config(outcome.phase);
    let mut m = Manifest::new(
        command,
        json!({ "phase": phase_config, "backend": model.kind() }),
    );
    match upstream {
        Some((path, up)) => m.add_verified_input(path, up)?,
        None => m.add_input(data)?,
    }
    if upstream.is_some_and(|(p, _)| p != data) {
        m.add_input(data)?;
    }
    m.lineage = model.lineage().marks.clone();
    m.run = Some(json!({
        "phase": outcome.phase,
        "config": phase_config,
        "validation_losses": outcome.history,
        "train_losses": outcome.train_losses,
        "selected_epoch": outcome.selected.epoch,
        "lineage": model.lineage().marks,
    }));
    m.add_output(dir)?;
    m.write_for(&[dir])?;
    eprintln!(
        "{}: selected epoch {} (validation loss {:.4})",
        outcome.phase, outcome.selected.epoch, outcome.selected.validation_loss
    );
    Ok(())
}

fn init_model(config: &RunConfig, a: InitModelArgs) -> Result<()> {
    let model = fresh_model(config);
    save_model(&a.output, model.as_ref())?;
    let mut m = Manifest::new(
        "init-model",
        json!({ "backend": model.kind(), "alpha": config.bigram_alpha }),
    );
    m.add_output(&a.output)?;
    m.write_for(&[&a.output])?;
    Ok(())
}

fn train_phase1(config: &RunConfig, a: TrainPhase1Args) -> Result<()> {
    let upstream = verify_artifact(&a.input)?;
    let records = read_noised(BufReader::new(File::open(&a.input)?))?;
    let base = match &a.init {
        Some(dir) => {
            verify_artifact(dir)?;
            load_model(dir)?
        }
        None => fresh_model(config),
    };
    let mut model = with_script(base, &config.phase1_scripted_losses);
    let outcome = run_phase1(
        model.as_mut(),
        &records,
        &config.phase_config(Phase::Pretrain),
    )?;
    save_trained(
        &a.output,
        "train-phase1",
        model.as_mut(),
        &outcome,
        &a.input,
        Some((&a.input, &upstream)),
        config,
    )
}

fn train_phase2(config: &RunConfig, a: TrainPhase2Args) -> Result<()> {
    let upstream = verify_artifact(&a.model)?;
    if upstream.lineage.last().map(|m| m.phase) != Some(Phase::Pretrain) {
        return Err(Error::PhaseOrdering(format!(
            "{} lacks phase-1 lineage",
            a.model.display()
        )));
    }
    let triples = load_triples(&a.triples)?;
    let mut model = with_script(load_model(&a.model)?, &config.phase2_scripted_losses);
    let outcome = run_phase2(
        model.as_mut(),
        &triples,
        &config.phase_config(Phase::Knowledge),
    )?;
    save_trained(
        &a.output,
        "train-phase2",
        model.as_mut(),
        &outcome,
        &a.triples,
        Some((&a.model, &upstream)),
        config,
    )
}

fn request_for(
    config: &RunConfig,
    context: String,
    tag: Option<String>,
) -> Result<GenerationRequest> {
    Ok(GenerationRequest {
        context,
        country_tag: tag,
        beam_width: config.beam_width,
        num_return: config.num_return,
        max_len: config.max_len,
        relations: config.relation_list()?,
    })
}

fn generate(config: &RunConfig, a: GenerateArgs) -> Result<()> {
    let upstream = verify_artifact(&a.model)?;
    let model = load_model(&a.model)?;
    let mut jobs: Vec<(Option<String>, GenerationRequest)> = Vec::new();
    match (&a.context, &a.qa) {
        (Some(context), _) => {
            let tag = if a.vcr {
                Some(VCR_COUNTRY_TAG.to_string())
            } else {
                a.country.clone()
            };
            jobs.push((None, request_for(config, context.clone(), tag)?));
        }
        (None, Some(qa)) => {
            for q in load_qa(qa)? {
                let query = build_knowledge_query(&q)?;
                let tag = if a.vcr {
                    VCR_COUNTRY_TAG.to_string()
                } else {
                    q.country_tag.clone()
                };
                jobs.push((
                    Some(q.qa_id.clone()),
                    request_for(config, query.context, Some(tag))?,
                ));
            }
        }
        (None, None) => unreachable!("clap requires --context or --qa"),
    }
    let mut records: Vec<InferenceRecord> = Vec::new();
    for (qa_id, req) in &jobs {
        if a.freeform {
            let texts = generate_freeform(model.as_ref(), req)?;
            records.extend(freeform_records(req, &texts, qa_id.as_deref()));
        } else {
            records.extend(generate_inferences(model.as_ref(), req)?.records(qa_id.as_deref()));
        }
    }
    save_jsonl(&a.output, &records)?;
    let mut m = Manifest::new(
        "generate",
        json!({
            "beam_width": config.beam_width,
            "num_return": config.num_return,
            "max_len": config.max_len,
            "relations": config.relation_list()?,
            "vcr": a.vcr,
            "freeform": a.freeform,
        }),
    );
    m.add_verified_input(&a.model, &upstream)?;
    if let Some(qa) = &a.qa {
        m.add_input(qa)?;
    }
    m.add_output(&a.output)?;
    m.write_for(&[&a.output])?;
    eprintln!("wrote {} inferences", records.len());
    Ok(())
}

fn select(config: &RunConfig, a: SelectArgs) -> Result<()> {
    let upstream = verify_artifact(&a.inferences)?;
    let records: Vec<InferenceRecord> = load_jsonl(&a.inferences)?;
    let questions: HashMap<String, String> = match &a.qa {
        Some(qa) => load_qa(qa)?
            .into_iter()
            .map(|q| (q.qa_id, q.question))
            .collect(),
        None => HashMap::new(),
    };
    let k = a.k.unwrap_or(config.top_k);
    let embedder = make_hash_embedder(config.embed_dim, config.embed_seed)?;
    let mut out: Vec<SelectionRecord> = Vec::new();
    for group in group_records(&records) {
        let qa_id = group[0].qa_id.as_deref();
        let query = match (&a.query, qa_id) {
            (Some(q), _) => q.clone(),
            (None, Some(id)) => questions
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Malformed(format!("qa_id `{id}` not in the QA set")))?,
            (None, None) => {
                return Err(Error::Malformed(
                    "inference records lack qa_id; pass --query".into(),
                ))
            }
        };
        let sentences = group
            .iter()
            .map(|r| r.to_sentence())
            .collect::<Result<Vec<_>>>()?;
        out.extend(select_top_k(&sentences, &query, &embedder, k)?.records(qa_id));
    }
    save_jsonl(&a.output, &out)?;
    let mut m = Manifest::new(
        "select",
        json!({ "k": k, "embed_dim": config.embed_dim, "embed_seed": config.embed_seed }),
    );
    m.add_verified_input(&a.inferences, &upstream)?;
    if let Some(qa) = &a.qa {
        m.add_input(qa)?;
    }
    m.add_output(&a.output)?;
    m.write_for(&[&a.output])?;
    Ok(())
}

fn eval_intrinsic(a: EvalIntrinsicArgs) -> Result<()> {
    if a.concepts.is_none() && a.annotations.is_none() {
        return Err(Error::InvalidArgument(
            "pass --concepts and/or --annotations".into(),
        ));
    }
    if let (Some(concepts), Some(items)) = (&a.concepts, &a.items) {
        let text = fs::read_to_string(concepts).map_err(|e| Error::in_file(concepts, e.into()))?;
        let sheet: ConceptSheet = serde_json::from_str(&text)
            .map_err(|e| Error::in_file(concepts, Error::Malformed(e.to_string())))?;
        let set = build_intrinsic_set(&sheet)?;
        save_jsonl(items, &set)?;
        let mut m = Manifest::new("eval-intrinsic", json!({ "step": "build-set" }));
        m.add_input(concepts)?;
        m.add_output(items)?;
        m.write_for(&[items])?;
    }
    if let (Some(ann), Some(output)) = (&a.annotations, &a.output) {
        let report = intrinsic_report(&load_annotations(ann)?)?;
        write_json(output, &report)?;
        let mut m = Manifest::new(
            "eval-intrinsic",
            json!({ "step": "aggregate", "kappa": "unweighted, pooled" }),
        );
        m.add_input(ann)?;
        m.add_output(output)?;
        let mut outputs = vec![output.as_path()];
        if let Some(text) = &a.text {
            write_text(text, &render_table1(&report))?;
            m.add_output(text)?;
            outputs.push(text);
        }
        m.write_for(&outputs)?;
    }
    Ok(())
}

fn eval_extrinsic(config: &RunConfig, a: EvalExtrinsicArgs) -> Result<()> {
    let mut m = Manifest::new("eval-extrinsic", json!({}));
    let report = if let Some(csv) = &a.seed_results {
        m.add_input(csv)?;
        m.parameters = json!({ "mode": "seed-results" });
        load_seed_results(csv)?
    } else {
        let qa_path = a.qa.as_ref().expect("clap requires --qa");
        let eval_set = load_qa(qa_path)?;
        m.add_input(qa_path)?;
        if a.check_gdvcr {
            eval::check_gdvcr_stats(&dataset_stats(&eval_set))?;
        }
        let predictions: Vec<PredictionRecord> = match &a.predictions {
            Some(p) => {
                m.add_input(p)?;
                m.parameters = json!({ "mode": "predictions" });
                load_jsonl(p)?
            }
            None => {
                let knowledge = match &a.selection {
                    Some(sel) => {
                        let upstream = verify_artifact(sel)?;
                        m.add_verified_input(sel, &upstream)?;
                        knowledge_by_qa(&load_jsonl::<SelectionRecord>(sel)?)?
                    }
                    None => HashMap::new(),
                };
                let train_set: Vec<QAInstance> = match &a.train_qa {
                    Some(p) => {
                        m.add_input(p)?;
                        load_qa(p)?
                    }
                    None => eval_set.clone(),
                };
                let settings = ScorerSettings {
                    embed_dim: config.embed_dim,
                    embed_seed: config.embed_seed,
                    use_knowledge: a.selection.is_some(),
                    phase: config.phase_config(Phase::Extrinsic),
                };
                let base = qa_path.parent().unwrap_or(Path::new("."));
                let mut resolver = FeatureResolver::new(base);
                let mut all = Vec::new();
                let mut runs = Vec::new();
                for &seed in &config.seeds {
                    let run = train_and_predict(
                        &train_set,
                        &eval_set,
                        &knowledge,
                        &mut resolver,
                        &settings,
                        seed,
                    )?;
                    runs.push(json!({ "seed": seed, "selected_epoch": run.outcome.selected.epoch, "validation_losses": run.outcome.history }));
                    all.extend(run.predictions);
                }
                m.parameters = json!({
                    "mode": "train",
                    "seeds": config.seeds,
                    "phase": settings.phase,
                    "use_knowledge": settings.use_knowledge,
                });
                m.run = Some(json!(runs));
                if let Some(out) = &a.predictions_out {
                    save_jsonl(out, &all)?;
                }
                all
            }
        };
        ExtrinsicReport {
            models: vec![accuracy_by_region(
                &a.model_name,
                &predictions,
                &gold_labels(&eval_set),
            )?],
        }
    };
    write_json(&a.output, &report)?;
    m.add_output(&a.output)?;
    let mut outputs = vec![a.output.as_path()];
    let text = render_seed_table(&report);
    if let Some(path) = &a.text {
        write_text(path, &text)?;
        m.add_output(path)?;
        outputs.push(path);
    }
    if let Some(path) = &a.predictions_out {
        if path.exists() {
            m.add_output(path)?;
            outputs.push(path);
        }
    }
    m.write_for(&outputs)?;
    print!("{text}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut text = String::new();
    let mut m = Manifest::new("report", json!({ "reference": a.reference }));
    if let Some(path) = &a.intrinsic {
        let upstream = verify_artifact(path)?;
        m.add_verified_input(path, &upstream)?;
        let bytes = fs::read(path)?;
        let r: IntrinsicReport = serde_json::from_slice(&bytes)
            .map_err(|e| Error::in_file(path, Error::Malformed(e.to_string())))?;
        text.push_str(&render_table1(&r));
    }
    if !a.extrinsic.is_empty() {
        let mut merged = ExtrinsicReport::default();
        for path in &a.extrinsic {
            let upstream = verify_artifact(path)?;
            m.add_verified_input(path, &upstream)?;
            let bytes = fs::read(path)?;
            let r: ExtrinsicReport = serde_json::from_slice(&bytes)
                .map_err(|e| Error::in_file(path, Error::Malformed(e.to_string())))?;
            merged.models.extend(r.models);
        }
        let reference: Vec<&str> = a.reference.iter().map(String::as_str).collect();
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&render_table2(&table2_columns(&merged, &reference)));
        text.push('\n');
        text.push_str(&render_seed_table(&merged));
    }
    if text.is_empty() {
        return Err(Error::InvalidArgument(
            "pass --intrinsic and/or --extrinsic".into(),
        ));
    }
    match &a.output {
        Some(out) => {
            write_text(out, &text)?;
            m.add_output(out)?;
            m.write_for(&[out])?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
