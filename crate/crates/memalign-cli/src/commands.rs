//! Command implementations behind the argument parser.

use crate::{Cli, Command};
use memalign::archive::{self, EmbeddingRecord, Modality};
use memalign::config::{EvalMode, RunConfig};
use memalign::error::{Error, Result};
use memalign::eval::{self, ConversionRecord};
use memalign::mfva::MfvaModule;
use memalign::numerics::cosine_similarity;
use memalign::synth::{generate_corpus, CorpusSpec, SyntheticCorpus};
use memalign::trainer::{self, Conditioner, LossComponents, ModelDoc};
use memalign::util::atomic_write;
use std::path::{Path, PathBuf};

pub(crate) fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen { out } => cmd_gen(cli, out),
        Command::Pretrain {
            corpus,
            out,
            steps,
            loss_csv,
        } => cmd_pretrain(cli, corpus, out, *steps, loss_csv.as_deref()),
        Command::Train {
            corpus,
            out,
            pretrained,
            steps,
            no_inter,
            no_mfva,
            no_pretrain,
            loss_csv,
        } => cmd_train(
            cli,
            corpus,
            out,
            pretrained.as_deref(),
            *steps,
            *no_inter,
            *no_mfva,
            *no_pretrain,
            loss_csv.as_deref(),
        ),
        Command::Eval {
            model,
            corpus,
            report,
            mode,
            pairs_csv,
        } => cmd_eval(cli, model, corpus, report, mode.as_deref(), pairs_csv.as_deref()),
        Command::Gradcheck { eps, tol, cases } => cmd_gradcheck(cli, *eps, *tol, *cases),
        Command::Interp {
            model,
            corpus,
            face_a,
            face_b,
            steps,
            out,
        } => cmd_interp(cli, model, corpus, face_a, face_b, *steps, out.as_deref()),
        Command::Recall {
            model,
            face_embedding,
            out,
        } => cmd_recall(cli, model, face_embedding, out.as_deref()),
    }
}

/// Base configuration: defaults, then the config file, then global flags.
fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn note(cli: &Cli, message: String) {
    if !cli.quiet {
        eprintln!("{message}");
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("serialization failed: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Loads a corpus directory: corpus.json pins the shape and seed, and the
/// features are regenerated from it. The effective config's corpus fields
/// are overwritten so every echoed config reflects the data actually used.
fn load_corpus_dir(dir: &Path, config: &mut RunConfig) -> Result<SyntheticCorpus> {
    let spec_path = dir.join("corpus.json");
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: CorpusSpec = serde_json::from_str(&text).map_err(|e| {
        Error::Validation(format!("{}: invalid corpus spec: {e}", spec_path.display()))
    })?;
    spec.validate()?;
    config.apply_corpus_spec(&spec);
    generate_corpus(&spec)
}

fn cmd_gen(cli: &Cli, out: &Path) -> Result<()> {
    let config = base_config(cli)?;
    let spec = config.to_corpus_spec();
    spec.validate()?;
    let corpus = generate_corpus(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    archive::write_archive(&archive::face_records(&corpus), &out.join("face.xmeb"))?;
    archive::write_archive(&archive::voice_records(&corpus), &out.join("voice.xmeb"))?;
    write_json(&spec, &out.join("corpus.json"))?;
    note(
        cli,
        format!(
            "gen: {} speakers ({} train, {} holdout) -> {}",
            spec.total_speakers(),
            spec.n_train_speakers,
            spec.n_holdout_speakers,
            out.display()
        ),
    );
    Ok(())
}

fn default_loss_csv(model_path: &Path) -> PathBuf {
    model_path.with_extension("losses.csv")
}

fn write_loss_csv(curve: &[LossComponents], path: &Path) -> Result<()> {
    let mut text = String::from("step,total,store,align,intra,inter\n");
    for (step, l) in curve.iter().enumerate() {
        text.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            l.total, l.store, l.align, l.intra, l.inter
        ));
    }
    atomic_write(path, text.as_bytes())
}

fn print_final_losses(phase: &str, losses: Option<&LossComponents>) {
    match losses {
        Some(l) => println!(
            "{phase} final: total={} store={} align={} intra={} inter={}",
            l.total, l.store, l.align, l.intra, l.inter
        ),
        None => println!("{phase} final: no optimization steps run"),
    }
}

fn cmd_pretrain(
    cli: &Cli,
    corpus_dir: &Path,
    out: &Path,
    steps: Option<usize>,
    loss_csv: Option<&Path>,
) -> Result<()> {
    let mut config = base_config(cli)?;
    if let Some(steps) = steps {
        config.pretrain_steps = steps;
    }
    let corpus = load_corpus_dir(corpus_dir, &mut config)?;
    note(
        cli,
        format!(
            "pretrain: {} steps on {} training speakers",
            config.pretrain_steps,
            corpus.train_speakers().len()
        ),
    );
    let outcome = trainer::pretrain(&corpus, &config)?;
    write_json(&ModelDoc::for_pretrain(&config, &outcome), out)?;
    let csv_path = loss_csv
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_loss_csv(out));
    write_loss_csv(&outcome.loss_curve, &csv_path)?;
    print_final_losses("pretrain", outcome.final_losses.as_ref());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cli: &Cli,
    corpus_dir: &Path,
    out: &Path,
    pretrained: Option<&Path>,
    steps: Option<usize>,
    no_inter: bool,
    no_mfva: bool,
    no_pretrain: bool,
    loss_csv: Option<&Path>,
) -> Result<()> {
    let mut config = base_config(cli)?;
    if let Some(steps) = steps {
        config.steps = steps;
    }
    config.no_inter |= no_inter;
    config.no_mfva |= no_mfva;
    config.no_pretrain |= no_pretrain;
    let pretrained_decoder = match pretrained {
        Some(path) => {
            // An explicit pretrained model wins over a config-file
            // no_pretrain; the echoed config reflects what actually ran.
            config.no_pretrain = false;
            Some(ModelDoc::load(path)?.decoder()?)
        }
        None => {
            if !config.no_pretrain {
                return Err(Error::config(
                    "pretrained",
                    "a pretrained model is required unless --no-pretrain is set",
                ));
            }
            None
        }
    };
    let corpus = load_corpus_dir(corpus_dir, &mut config)?;
    note(
        cli,
        format!(
            "train: {} steps on {} training speakers{}{}",
            config.steps,
            corpus.train_speakers().len(),
            if config.no_inter { ", no inter loss" } else { "" },
            if config.no_mfva { ", no memory module" } else { "" },
        ),
    );
    let outcome = trainer::fit(&corpus, &config, pretrained_decoder.as_ref())?;
    write_json(&ModelDoc::for_train(&config, &outcome), out)?;
    let csv_path = loss_csv
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_loss_csv(out));
    write_loss_csv(&outcome.loss_curve, &csv_path)?;
    print_final_losses("train", outcome.final_losses.as_ref());
    Ok(())
}

fn parse_mode(text: &str) -> Result<EvalMode> {
    match text {
        "embedding" => Ok(EvalMode::Embedding),
        "output" => Ok(EvalMode::Output),
        other => Err(Error::config(
            "mode",
            format!("expected `embedding` or `output`, got {other:?}"),
        )),
    }
}

fn cmd_eval(
    cli: &Cli,
    model_path: &Path,
    corpus_dir: &Path,
    report_path: &Path,
    mode: Option<&str>,
    pairs_csv: Option<&Path>,
) -> Result<()> {
    let doc = ModelDoc::load(model_path)?;
    // Without an explicit config file the model document's embedded
    // configuration governs the run, so eval defaults follow training.
    let mut config = if cli.config.is_some() {
        base_config(cli)?
    } else {
        let mut config = doc.run_config.clone();
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        config
    };
    if let Some(mode) = mode {
        config.eval_mode = parse_mode(mode)?;
    }
    let conditioner = doc.conditioner()?.ok_or_else(|| {
        Error::Validation(
            "model document has no face conditioner; run the train command first".into(),
        )
    })?;
    let decoder = doc.decoder()?;
    let corpus = load_corpus_dir(corpus_dir, &mut config)?;
    if conditioner.dim() != corpus.spec.embedding_dim {
        return Err(Error::dim_mismatch(
            "model embedding dimension vs corpus",
            conditioner.dim(),
            corpus.spec.embedding_dim,
        ));
    }
    if decoder.content_dim() != corpus.spec.content_dim {
        return Err(Error::dim_mismatch(
            "decoder content dimension vs corpus",
            decoder.content_dim(),
            corpus.spec.content_dim,
        ));
    }
    let outcome = eval::evaluate(&corpus, &config, &conditioner, &decoder)?;
    for warning in &outcome.warnings {
        note(cli, format!("warning: {warning}"));
    }
    eval::emit_report(&outcome.report, report_path)?;
    if let Some(path) = pairs_csv {
        write_pairs_csv(&outcome.records, path)?;
    }
    let r = &outcome.report;
    println!(
        "eval: n_conversions={} shr={} sho={} sdr={} sdo={} ga={}",
        r.n_conversions, r.shr, r.sho, r.sdr, r.sdo, r.ga
    );
    Ok(())
}

fn write_pairs_csv(records: &[ConversionRecord], path: &Path) -> Result<()> {
    let mut text = String::from(
        "metric,source_speaker,source_utterance,target_a,face_a,target_b,face_b,cosine\n",
    );
    let mut push = |metric: &str, a: &ConversionRecord, b: &ConversionRecord| -> Result<()> {
        let cos = eval::pair_cosine(&a.embedding, &b.embedding)?;
        text.push_str(&format!(
            "{metric},{},{},{},{},{},{},{}\n",
            a.source_speaker_id,
            a.source_utterance_id,
            a.target_speaker_id,
            a.target_face_entity_id,
            b.target_speaker_id,
            b.target_face_entity_id,
            cos
        ));
        Ok(())
    };
    for (a, b) in eval::sho_pairs(records)? {
        push("sho", &records[a], &records[b])?;
    }
    for (a, b) in eval::sdo_pairs(records) {
        push("sdo", &records[a], &records[b])?;
    }
    atomic_write(path, text.as_bytes())
}

fn cmd_gradcheck(cli: &Cli, eps: f64, tol: f64, cases: usize) -> Result<()> {
    let config = base_config(cli)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config("eps", format!("must be positive, got {eps}")));
    }
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(Error::config(
            "tol",
            format!("must be non-negative, got {tol}"),
        ));
    }
    if cases == 0 {
        return Err(Error::config("cases", "must be at least 1"));
    }
    let report = trainer::gradient_check_suite(config.seed, eps, cases)?;
    let rows = [
        ("store", report.max_store),
        ("align", report.max_align),
        ("intra", report.max_intra),
        ("inter", report.max_inter),
    ];
    let mut failing = Vec::new();
    for (name, value) in rows {
        println!("{name}: max relative error {value:e}");
        if !(value < tol) {
            failing.push(name);
        }
    }
    if failing.is_empty() {
        println!(
            "gradcheck: pass ({} configurations per loss, tolerance {tol:e})",
            report.configs_per_loss
        );
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check exceeded tolerance {tol:e} for: {}",
            failing.join(", ")
        )))
    }
}

/// Parses a SPEAKER:ENTITY id pair.
fn parse_entity(text: &str, flag: &str) -> Result<(u32, u32)> {
    let parse = |part: &str| -> Option<u32> { part.trim().parse().ok() };
    text.split_once(':')
        .and_then(|(s, e)| Some((parse(s)?, parse(e)?)))
        .ok_or_else(|| {
            Error::config(
                flag,
                format!("expected SPEAKER:ENTITY ids like 12:0, got {text:?}"),
            )
        })
}

fn modality_name(modality: Modality) -> &'static str {
    match modality {
        Modality::Voice => "voice",
        Modality::Face => "face",
    }
}

fn find_record(
    records: &[EmbeddingRecord],
    modality: Modality,
    speaker: u32,
    entity: u32,
    source: &str,
) -> Result<Vec<f64>> {
    records
        .iter()
        .find(|r| r.modality == modality && r.speaker_id == speaker && r.entity_id == entity)
        .map(|r| r.vector.clone())
        .ok_or_else(|| {
            Error::Validation(format!(
                "{source}: no {} record for entity {speaker}:{entity}",
                modality_name(modality)
            ))
        })
}

/// Mean of a speaker's voice records in an archive.
fn archive_voice_centroid(
    records: &[EmbeddingRecord],
    speaker: u32,
    source: &str,
) -> Result<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for r in records {
        if r.modality != Modality::Voice || r.speaker_id != speaker {
            continue;
        }
        if sum.is_empty() {
            sum = vec![0.0; r.vector.len()];
        }
        for (s, v) in sum.iter_mut().zip(&r.vector) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Validation(format!(
            "{source}: speaker {speaker} has no voice records"
        )));
    }
    for s in sum.iter_mut() {
        *s /= count as f64;
    }
    Ok(sum)
}

/// Extracts the memory module from a model document or explains why the
/// command cannot run without one.
fn require_memory_module(doc: &ModelDoc, command: &str) -> Result<MfvaModule> {
    match doc.conditioner()? {
        Some(Conditioner::Mfva(module)) => Ok(module),
        Some(Conditioner::FaceProjection { .. }) => Err(Error::Validation(format!(
            "{command} requires a model with the memory module, but this one was trained with no_mfva"
        ))),
        None => Err(Error::Validation(
            "model document has no face conditioner; run the train command first".into(),
        )),
    }
}

fn emit_csv(text: String, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => atomic_write(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_interp(
    cli: &Cli,
    model_path: &Path,
    corpus_dir: &Path,
    face_a: &str,
    face_b: &str,
    steps: usize,
    out: Option<&Path>,
) -> Result<()> {
    if steps < 2 {
        return Err(Error::config(
            "steps",
            format!("interpolation needs at least 2 rows, got {steps}"),
        ));
    }
    let module = require_memory_module(&ModelDoc::load(model_path)?, "interp")?;
    let (speaker_a, entity_a) = parse_entity(face_a, "face-a")?;
    let (speaker_b, entity_b) = parse_entity(face_b, "face-b")?;
    let face_path = corpus_dir.join("face.xmeb");
    let voice_path = corpus_dir.join("voice.xmeb");
    let faces = archive::read_archive(&face_path)?;
    let voices = archive::read_archive(&voice_path)?;
    let face_source = face_path.display().to_string();
    let voice_source = voice_path.display().to_string();
    let ha = find_record(&faces, Modality::Face, speaker_a, entity_a, &face_source)?;
    let hb = find_record(&faces, Modality::Face, speaker_b, entity_b, &face_source)?;
    let centroid_a = archive_voice_centroid(&voices, speaker_a, &voice_source)?;
    let centroid_b = archive_voice_centroid(&voices, speaker_b, &voice_source)?;
    let recall_a = module.recall_face(&ha)?;
    let recall_b = module.recall_face(&hb)?;
    let mut text = String::from("alpha,cosine_to_a,cosine_to_b\n");
    for i in 0..steps {
        let alpha = i as f64 / (steps - 1) as f64;
        let blended = module.interpolate_recall(&recall_a.weights, &recall_b.weights, alpha)?;
        let cos_a = cosine_similarity(&blended.embedding, &centroid_a)?;
        let cos_b = cosine_similarity(&blended.embedding, &centroid_b)?;
        text.push_str(&format!("{alpha},{cos_a},{cos_b}\n"));
    }
    note(
        cli,
        format!(
            "interp: {steps} rows from {speaker_a}:{entity_a} to {speaker_b}:{entity_b}"
        ),
    );
    emit_csv(text, out)
}

/// Parses an ARCHIVE#SPEAKER:ENTITY face source.
fn parse_face_source(text: &str) -> Result<(PathBuf, u32, u32)> {
    let (path, ids) = text.rsplit_once('#').ok_or_else(|| {
        Error::config(
            "face-embedding",
            format!("expected ARCHIVE#SPEAKER:ENTITY, got {text:?}"),
        )
    })?;
    let (speaker, entity) = parse_entity(ids, "face-embedding")?;
    Ok((PathBuf::from(path), speaker, entity))
}

fn cmd_recall(
    cli: &Cli,
    model_path: &Path,
    face_embedding: &str,
    out: Option<&Path>,
) -> Result<()> {
    let module = require_memory_module(&ModelDoc::load(model_path)?, "recall")?;
    let (archive_path, speaker, entity) = parse_face_source(face_embedding)?;
    let records = archive::read_archive(&archive_path)?;
    let source = archive_path.display().to_string();
    let face = find_record(&records, Modality::Face, speaker, entity, &source)?;
    if face.len() != module.dim() {
        return Err(Error::dim_mismatch(
            "face embedding vs model",
            face.len(),
            module.dim(),
        ));
    }
    let recall = module.recall_face(&face)?;
    let mut text = String::from("kind,index,value\n");
    for (i, w) in recall.weights.as_slice().iter().enumerate() {
        text.push_str(&format!("weight,{i},{w}\n"));
    }
    for (i, v) in recall.embedding.iter().enumerate() {
        text.push_str(&format!("embedding,{i},{v}\n"));
    }
    note(cli, format!("recall: face {speaker}:{entity} from {source}"));
    emit_csv(text, out)
}
