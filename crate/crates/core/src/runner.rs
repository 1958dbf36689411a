//! Command-level operations shared by the CLI and the C ABI: each one loads
//! inputs, runs the corresponding module operation, and writes artifacts with
//! a run record embedding the provenance hash.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    common_word_split, cross_domain_term_counts, generate_corpus, vocab_iou_at_topk,
    word_frequency_table, CorpusConfig, Modality, Split, SplitManifest,
};
use crate::error::{Error, Result};
use crate::eval::{cluster_sweep, confusion_report, evaluate_split, EvalReport};
use crate::io::{self, RunRecord};
use crate::model::{Checkpoint, ModelConfig, StageTag};
use crate::training::{
    finetune_full, pretrain, train_asr_decoder, tune_cluster_prompt, Corpus, StageConfig,
    StageKind, StageOutcome,
};

/// Generate a corpus directory from a config, write the run record, and
/// validate the emitted files.
pub fn run_generate(
    config: &CorpusConfig,
    out_dir: &Path,
    force: bool,
    command: String,
) -> Result<()> {
    let started = Instant::now();
    let generated = generate_corpus(config, out_dir, force)?;
    generated.manifest.validate_files()?;
    let record = RunRecord::new(
        command,
        serde_json::to_value(config).map_err(|e| Error::Other(e.to_string()))?,
        io::sha256_hex(serde_json::to_string(config).unwrap().as_bytes()),
        vec![out_dir.display().to_string()],
        started.elapsed().as_secs_f64(),
    );
    record.write(out_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Pretrain,
    Asr,
    Prompt,
    Finetune,
}

impl TrainStage {
    pub fn parse(s: &str) -> Result<TrainStage> {
        match s {
            "pretrain" => Ok(TrainStage::Pretrain),
            "asr" => Ok(TrainStage::Asr),
            "prompt" => Ok(TrainStage::Prompt),
            "finetune" => Ok(TrainStage::Finetune),
            other => Err(Error::Config(format!(
                "unknown training stage `{other}` (expected pretrain, asr, prompt or finetune)"
            ))),
        }
    }
}

pub struct TrainRequest {
    pub stage: TrainStage,
    pub corpus_dir: PathBuf,
    pub input_checkpoint: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub stage_config: StageConfig,
    /// Model shape for pretraining; defaults to the desk configuration.
    pub model_config: Option<ModelConfig>,
    pub force: bool,
    pub command: String,
}

fn default_model_for(corpus: &Corpus) -> Result<ModelConfig> {
    let cfg_path = corpus.dir.join(crate::corpus::generate::CONFIG_FILE);
    let corpus_cfg: CorpusConfig = io::read_json(&cfg_path)?;
    Ok(ModelConfig::desk_default(
        corpus.vocab().words().len(),
        corpus_cfg.audio_dim,
        corpus_cfg.visual_dim,
    ))
}

fn load_input_checkpoint(req: &TrainRequest) -> Result<Checkpoint> {
    let dir = req.input_checkpoint.as_ref().ok_or_else(|| {
        Error::Config("this stage requires --ckpt with the input checkpoint".into())
    })?;
    Checkpoint::load(dir)
}

/// Run one training stage and write the checkpoint, run log, metrics and run
/// record into the output directory.
pub fn run_train(req: &TrainRequest) -> Result<StageOutcome> {
    let started = Instant::now();
    let corpus = Corpus::open(&req.corpus_dir)?;

    // Stage-tag mismatches must surface before any training step.
    let expected_kind = match req.stage {
        TrainStage::Pretrain => StageKind::Pretrain,
        TrainStage::Asr => StageKind::Asr,
        TrainStage::Prompt => StageKind::FewShotClusterPrompt,
        TrainStage::Finetune => StageKind::FullFinetune,
    };
    if req.stage_config.stage != expected_kind {
        return Err(Error::Config("stage config does not match the requested stage".into()));
    }

    let mut input_hash = io::sha256_file(&req.corpus_dir.join(crate::corpus::generate::MANIFEST_FILE))?;
    let outcome = match req.stage {
        TrainStage::Pretrain => {
            let mcfg = match req.model_config {
                Some(m) => m,
                None => default_model_for(&corpus)?,
            };
            pretrain(&corpus, &mcfg, &req.stage_config)?
        }
        TrainStage::Asr => {
            let ckpt = load_input_checkpoint(req)?;
            input_hash = format!("{input_hash}+{}", ckpt.content_hash());
            train_asr_decoder(&corpus, ckpt, &req.stage_config)?
        }
        TrainStage::Prompt => {
            let ckpt = load_input_checkpoint(req)?;
            input_hash = format!("{input_hash}+{}", ckpt.content_hash());
            let split_path = req.split_manifest.as_ref().ok_or_else(|| {
                Error::Config("prompt tuning requires --split with a common-word split manifest".into())
            })?;
            let split = SplitManifest::load(split_path)?;
            tune_cluster_prompt(&corpus, ckpt, &split, &req.stage_config)?
        }
        TrainStage::Finetune => {
            let ckpt = load_input_checkpoint(req)?;
            input_hash = format!("{input_hash}+{}", ckpt.content_hash());
            finetune_full(&corpus, ckpt, &req.stage_config)?
        }
    };

    outcome.checkpoint.save(&req.out_dir, req.force)?;
    let log_path = req.out_dir.join("run_log.jsonl");
    let mut log_text = String::new();
    for entry in &outcome.log {
        log_text.push_str(&serde_json::to_string(entry).map_err(|e| Error::Other(e.to_string()))?);
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text).map_err(|e| Error::io(&log_path, e))?;
    io::write_json(&req.out_dir.join("stage_metrics.json"), &outcome.metrics)?;

    let record = RunRecord::new(
        req.command.clone(),
        serde_json::to_value(&req.stage_config).map_err(|e| Error::Other(e.to_string()))?,
        input_hash,
        vec![req.out_dir.display().to_string()],
        started.elapsed().as_secs_f64(),
    );
    record.write(&req.out_dir)?;
    Ok(outcome)
}

pub struct EvalRequest {
    pub checkpoint_dir: PathBuf,
    pub corpus_dir: PathBuf,
    pub split: Split,
    pub modality: Modality,
    pub beam_size: usize,
    pub confusions: bool,
    pub sweep_clusters: Option<Vec<usize>>,
    pub split_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub force: bool,
    pub command: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalArtifacts {
    pub wer: f64,
    pub report_path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_path: Option<String>,
}

/// Evaluate a checkpoint on a split and write report artifacts.
pub fn run_eval(req: &EvalRequest) -> Result<(EvalReport, EvalArtifacts)> {
    let started = Instant::now();
    io::prepare_out_dir(&req.out_dir, req.force)?;
    let corpus = Corpus::open(&req.corpus_dir)?;
    let ckpt = Checkpoint::load(&req.checkpoint_dir)?;

    let report = evaluate_split(&ckpt, &corpus.manifest, req.split, req.modality, req.beam_size)?;
    let report_path = req.out_dir.join("report.json");
    report.save(&report_path)?;
    let text_path = req.out_dir.join("report.txt");
    std::fs::write(&text_path, report.summary_text()).map_err(|e| Error::io(&text_path, e))?;

    let mut artifacts = EvalArtifacts {
        wer: report.wer,
        report_path: report_path.display().to_string(),
        confusion_path: None,
        sweep_path: None,
    };

    if req.confusions {
        let conf = confusion_report(&report, &corpus.lexicon.lexicon, &corpus.lexicon.viseme_map)?;
        let path = req.out_dir.join("confusion.json");
        io::write_json(&path, &conf)?;
        artifacts.confusion_path = Some(path.display().to_string());
    }

    if let Some(ns) = &req.sweep_clusters {
        ckpt.expect_stage(StageTag::Asr, &req.checkpoint_dir.display().to_string())?;
        let split_path = req.split_manifest.as_ref().ok_or_else(|| {
            Error::Config("--sweep-clusters requires --split with a common-word split manifest".into())
        })?;
        let split = SplitManifest::load(split_path)?;
        let base = StageConfig::cluster_prompt(crate::io::derive_seed(ckpt_seed(&ckpt), "sweep"));
        let points = cluster_sweep(&corpus, &ckpt, &split, ns, req.split, &base, req.beam_size)?;
        let path = req.out_dir.join("sweep.csv");
        let mut csv = String::from("n,wer\n");
        for p in &points {
            csv.push_str(&format!("{},{}\n", p.n, p.wer));
        }
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        io::write_json(&req.out_dir.join("sweep.json"), &points)?;
        artifacts.sweep_path = Some(path.display().to_string());
    }

    let input_hash = format!(
        "{}+{}",
        ckpt.content_hash(),
        io::sha256_file(&req.corpus_dir.join(crate::corpus::generate::MANIFEST_FILE))?
    );
    let record = RunRecord::new(
        req.command.clone(),
        serde_json::json!({
            "split": req.split.as_str(),
            "modality": req.modality.as_str(),
            "beam": req.beam_size,
        }),
        input_hash,
        vec![req.out_dir.display().to_string()],
        started.elapsed().as_secs_f64(),
    );
    record.write(&req.out_dir)?;
    Ok((report, artifacts))
}

fn ckpt_seed(ckpt: &Checkpoint) -> u64 {
    // A stable per-checkpoint seed for sweep tuning.
    u64::from_str_radix(&ckpt.content_hash()[..12], 16).unwrap_or(0)
}

/// Analytics artifact wrappers embed the run-record hash directly.
#[derive(Debug, Serialize, Deserialize)]
pub struct AnalyticsFile<T> {
    pub run_record_hash: String,
    pub payload: T,
}

fn write_analytics<T: Serialize>(
    path: &Path,
    command: &str,
    input_hash: String,
    payload: T,
    force: bool,
) -> Result<()> {
    io::prepare_out_file(path, force)?;
    let record = RunRecord::new(command.to_string(), serde_json::Value::Null, input_hash, vec![path.display().to_string()], 0.0);
    io::write_json(
        path,
        &AnalyticsFile {
            run_record_hash: record.record_hash,
            payload,
        },
    )
}

pub fn run_analyze_tf(corpus_dir: &Path, split: &str, out: &Path, force: bool, command: &str) -> Result<()> {
    let corpus = Corpus::open(corpus_dir)?;
    let tf = word_frequency_table(&corpus.manifest, split)?;
    let input_hash = io::sha256_file(&corpus_dir.join(crate::corpus::generate::MANIFEST_FILE))?;
    // Plot-ready sibling: word,count rows sorted by count desc then word.
    let csv_path = out.with_extension("csv");
    io::prepare_out_file(&csv_path, force)?;
    let mut rows: Vec<(&String, &u64)> = tf.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut csv = String::from("word,count\n");
    for (w, c) in rows {
        csv.push_str(&format!("{w},{c}\n"));
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    write_analytics(out, command, input_hash, tf, force)
}

pub fn run_analyze_split(
    corpus_dir: &Path,
    tf_threshold: u64,
    out: &Path,
    force: bool,
    command: &str,
) -> Result<SplitManifest> {
    let corpus = Corpus::open(corpus_dir)?;
    let mut split = common_word_split(&corpus.manifest, tf_threshold)?;
    let input_hash = io::sha256_file(&corpus_dir.join(crate::corpus::generate::MANIFEST_FILE))?;
    let record = RunRecord::new(
        command.to_string(),
        serde_json::json!({ "tf_threshold": tf_threshold }),
        input_hash,
        vec![out.display().to_string()],
        0.0,
    );
    split.run_record_hash = Some(record.record_hash);
    io::prepare_out_file(out, force)?;
    split.save(out)?;
    Ok(split)
}

pub fn run_analyze_iou(
    corpus_a: &Path,
    corpus_b: &Path,
    split: &str,
    ks: &[usize],
    out: &Path,
    force: bool,
    command: &str,
) -> Result<()> {
    let a = Corpus::open(corpus_a)?;
    let b = Corpus::open(corpus_b)?;
    let tf_a = word_frequency_table(&a.manifest, split)?;
    let tf_b = word_frequency_table(&b.manifest, split)?;
    let points = vocab_iou_at_topk(&tf_a, &tf_b, ks)?;
    let csv_path = out.with_extension("csv");
    io::prepare_out_file(&csv_path, force)?;
    let mut csv = String::from("k,iou,clamped\n");
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", p.k, p.iou, p.clamped));
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let input_hash = format!(
        "{}+{}",
        io::sha256_file(&corpus_a.join(crate::corpus::generate::MANIFEST_FILE))?,
        io::sha256_file(&corpus_b.join(crate::corpus::generate::MANIFEST_FILE))?
    );
    write_analytics(out, command, input_hash, points, force)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShiftResult {
    pub k_a: u64,
    pub k_b: u64,
    pub count: usize,
}

pub fn run_analyze_shift(
    corpus_a: &Path,
    corpus_b: &Path,
    split: &str,
    k_a: u64,
    k_b: u64,
    out: &Path,
    force: bool,
    command: &str,
) -> Result<usize> {
    let a = Corpus::open(corpus_a)?;
    let b = Corpus::open(corpus_b)?;
    let tf_a = word_frequency_table(&a.manifest, split)?;
    let tf_b = word_frequency_table(&b.manifest, split)?;
    let count = cross_domain_term_counts(&tf_a, &tf_b, k_a, k_b);
    let input_hash = format!(
        "{}+{}",
        io::sha256_file(&corpus_a.join(crate::corpus::generate::MANIFEST_FILE))?,
        io::sha256_file(&corpus_b.join(crate::corpus::generate::MANIFEST_FILE))?
    );
    write_analytics(out, command, input_hash, ShiftResult { k_a, k_b, count }, force)?;
    Ok(count)
}

/// A reproducible end-to-end experiment: generate, pretrain, ASR-train and
/// score both modalities, all seeded from one master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub corpus: CorpusConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub pretrain_steps: usize,
    pub asr_steps: usize,
    pub batch_size: usize,
    pub beam_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub corpus_hash: String,
    pub pretrained_hash: String,
    pub asr_hash: String,
    pub audio_wer: f64,
    pub visual_wer: f64,
}

/// Run the zero-shot pipeline end to end under one master seed.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<PipelineSummary> {
    io::prepare_out_dir(out_dir, force)?;
    let corpus_dir = out_dir.join("corpus");
    let mut corpus_cfg = cfg.corpus.clone();
    corpus_cfg.seed = io::derive_seed(cfg.master_seed, "corpus");
    run_generate(&corpus_cfg, &corpus_dir, force, "pipeline generate".into())?;
    let corpus = Corpus::open(&corpus_dir)?;

    let mcfg = match cfg.model {
        Some(m) => m,
        None => ModelConfig::desk_default(
            corpus.vocab().words().len(),
            corpus_cfg.audio_dim,
            corpus_cfg.visual_dim,
        ),
    };
    let mut pre_cfg = StageConfig::pretrain(io::derive_seed(cfg.master_seed, "pretrain"));
    pre_cfg.steps = cfg.pretrain_steps;
    pre_cfg.batch_size = cfg.batch_size;
    let pre = pretrain(&corpus, &mcfg, &pre_cfg)?;
    let pre_dir = out_dir.join("pretrained");
    pre.checkpoint.save(&pre_dir, force)?;

    let mut asr_cfg = StageConfig::asr(io::derive_seed(cfg.master_seed, "asr"));
    asr_cfg.steps = cfg.asr_steps;
    asr_cfg.batch_size = cfg.batch_size;
    let asr = train_asr_decoder(&corpus, pre.checkpoint.clone(), &asr_cfg)?;
    let asr_dir = out_dir.join("asr");
    asr.checkpoint.save(&asr_dir, force)?;

    let audio = evaluate_split(&asr.checkpoint, &corpus.manifest, Split::Test, Modality::Audio, cfg.beam_size)?;
    let visual = evaluate_split(&asr.checkpoint, &corpus.manifest, Split::Test, Modality::Visual, cfg.beam_size)?;

    let summary = PipelineSummary {
        corpus_hash: io::hash_dir_contents(&corpus_dir)?,
        pretrained_hash: pre.checkpoint.content_hash(),
        asr_hash: asr.checkpoint.content_hash(),
        audio_wer: audio.wer,
        visual_wer: visual.wer,
    };
    io::write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
