//! `openmod`: generate synthetic paired-modality corpora, run the staged
//! training pipeline, and evaluate WER across modalities.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use openmod::corpus::{CorpusConfig, Modality, Split};
use openmod::error::Result;
use openmod::io;
use openmod::model::ModelConfig;
use openmod::runner::{
    run_analyze_iou, run_analyze_shift, run_analyze_split, run_analyze_tf, run_eval, run_generate,
    run_train, EvalRequest, TrainRequest, TrainStage,
};
use openmod::training::StageConfig;

#[derive(Parser)]
#[command(name = "openmod", version, about = "Open-modality speech recognition at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-modality corpus.
    Generate(GenerateArgs),
    /// Word-distribution analytics over corpus manifests.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Run one training stage.
    Train(TrainArgs),
    /// Decode a split and report WER.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Corpus config JSON; omitted means the built-in default corpus.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Token frequency table of one split.
    Tf {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Common-word training split with TF > threshold.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "tf-threshold")]
        tf_threshold: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Top-k vocabulary IoU between two corpora.
    Iou {
        #[arg(long = "corpus-a")]
        corpus_a: PathBuf,
        #[arg(long = "corpus-b")]
        corpus_b: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Cross-domain term counts: TF_a >= k_a and TF_b <= k_b.
    Shift {
        #[arg(long = "corpus-a")]
        corpus_a: PathBuf,
        #[arg(long = "corpus-b")]
        corpus_b: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long = "k-a")]
        k_a: u64,
        #[arg(long = "k-b")]
        k_b: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// pretrain | asr | prompt | finetune
    stage: String,
    #[arg(long)]
    corpus: PathBuf,
    /// Input checkpoint (all stages except pretrain).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Common-word split manifest (prompt stage).
    #[arg(long)]
    split: Option<PathBuf>,
    /// Stage config JSON; omitted means the stage's desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model config JSON (pretrain only).
    #[arg(long = "model-config")]
    model_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Cluster-prompt N (prompt stage).
    #[arg(long)]
    clusters: Option<usize>,
    /// Layer selectors for fine-tuning, e.g. "encoder.layer.[0,4),decoder.layer.[0,2)".
    #[arg(long)]
    layers: Option<String>,
    /// ASR ablation: leave the encoder tunable during decoder training.
    #[arg(long = "no-freeze-encoder")]
    no_freeze_encoder: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// audio | visual | audio_visual
    #[arg(long)]
    modality: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Also emit a homophene confusion report.
    #[arg(long)]
    confusions: bool,
    /// Comma-separated cluster counts: tune a prompt bank per N and sweep WER.
    #[arg(long = "sweep-clusters", value_delimiter = ',')]
    sweep_clusters: Option<Vec<usize>>,
    /// Common-word split manifest used by --sweep-clusters.
    #[arg(long = "split-manifest")]
    split_manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn init_threads() {
    if let Ok(v) = std::env::var("OPENMOD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn stage_config_for(args: &TrainArgs, stage: TrainStage) -> Result<StageConfig> {
    let mut cfg = match &args.config {
        Some(path) => io::read_json::<StageConfig>(path)?,
        None => {
            let seed = args.seed.unwrap_or(17);
            match stage {
                TrainStage::Pretrain => StageConfig::pretrain(seed),
                TrainStage::Asr => StageConfig::asr(seed),
                TrainStage::Prompt => StageConfig::cluster_prompt(seed),
                TrainStage::Finetune => StageConfig::full_finetune(seed),
            }
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(n) = args.clusters {
        cfg.prompt_clusters = Some(n);
    }
    if let Some(layers) = &args.layers {
        cfg.layer_selectors = vec![layers.clone()];
    }
    if args.no_freeze_encoder {
        cfg.encoder_frozen = false;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let mut config = match &args.config {
                Some(path) => io::read_json::<CorpusConfig>(path)?,
                None => CorpusConfig::default(),
            };
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            run_generate(&config, &args.out, args.force, command_line())?;
            println!("corpus written to {}", args.out.display());
            Ok(())
        }
        Command::Analyze { what } => match what {
            AnalyzeCmd::Tf {
                corpus,
                split,
                out,
                force,
            } => {
                run_analyze_tf(&corpus, &split, &out, force, &command_line())?;
                println!("tf table written to {}", out.display());
                Ok(())
            }
            AnalyzeCmd::Split {
                corpus,
                tf_threshold,
                out,
                force,
            } => {
                let split = run_analyze_split(&corpus, tf_threshold, &out, force, &command_line())?;
                println!(
                    "split manifest written to {} ({} utterances, {} words)",
                    out.display(),
                    split.retained_ids.len(),
                    split.retained_vocab.len()
                );
                Ok(())
            }
            AnalyzeCmd::Iou {
                corpus_a,
                corpus_b,
                split,
                ks,
                out,
                force,
            } => {
                run_analyze_iou(&corpus_a, &corpus_b, &split, &ks, &out, force, &command_line())?;
                println!("iou curve written to {}", out.display());
                Ok(())
            }
            AnalyzeCmd::Shift {
                corpus_a,
                corpus_b,
                split,
                k_a,
                k_b,
                out,
                force,
            } => {
                let count =
                    run_analyze_shift(&corpus_a, &corpus_b, &split, k_a, k_b, &out, force, &command_line())?;
                println!("{count} terms with TF_a >= {k_a} and TF_b <= {k_b}");
                Ok(())
            }
        },
        Command::Train(args) => {
            let stage = TrainStage::parse(&args.stage)?;
            let stage_config = stage_config_for(&args, stage)?;
            let model_config = match &args.model_config {
                Some(path) => Some(io::read_json::<ModelConfig>(path)?),
                None => None,
            };
            let request = TrainRequest {
                stage,
                corpus_dir: args.corpus.clone(),
                input_checkpoint: args.ckpt.clone(),
                split_manifest: args.split.clone(),
                out_dir: args.out.clone(),
                stage_config,
                model_config,
                force: args.force,
                command: command_line(),
            };
            let outcome = run_train(&request)?;
            println!(
                "checkpoint ({}) written to {}; final loss {:.4}",
                outcome.checkpoint.stage.as_str(),
                args.out.display(),
                outcome.metrics.last_loss
            );
            Ok(())
        }
        Command::Eval(args) => {
            let request = EvalRequest {
                checkpoint_dir: args.ckpt.clone(),
                corpus_dir: args.corpus.clone(),
                split: Split::parse(&args.split)?,
                modality: Modality::parse(&args.modality)?,
                beam_size: args.beam,
                confusions: args.confusions,
                sweep_clusters: args.sweep_clusters.clone(),
                split_manifest: args.split_manifest.clone(),
                out_dir: args.out.clone(),
                force: args.force,
                command: command_line(),
            };
            let (report, artifacts) = run_eval(&request)?;
            println!(
                "{} {} WER {:.4} (S={} D={} I={} M={}) -> {}",
                report.split.as_str(),
                report.modality.as_str(),
                report.wer,
                report.total_substitutions,
                report.total_deletions,
                report.total_insertions,
                report.total_reference_len,
                artifacts.report_path
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
