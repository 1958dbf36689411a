//! The staged pipeline: masked-cluster pretraining with modality dropout,
//! audio-only decoder training behind the freeze registry, cluster-prompt
//! tuning, and selective fine-tuning.

use std::collections::HashSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::model::{
    add_prompt_params, encode_features, init_params, masked_cluster_step, s2s_loss,
    s2s_loss_from_memory, Checkpoint, FreezeMask, GradStore, ModelConfig, Names, ParamState,
    ParameterStore, StageTag,
};

use super::config::{StageConfig, StageKind};
use super::data::{load_split_items, sample_dropout, sample_mask, BatchSchedule, Corpus, TrainItem};
use super::kmeans::{assign_nearest, kmeans};
use super::optimizer::{lr_schedule, Adam};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub stage: String,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageMetrics {
    /// Mean training loss over the first and last smoothing windows.
    pub first_loss: f64,
    pub last_loss: f64,
    pub final_val_loss: Option<f64>,
    pub masked_val_accuracy: Option<f64>,
    pub chance_accuracy: Option<f64>,
    pub tunable_params: usize,
    pub total_params: usize,
    pub tunable_ratio: f64,
    pub empty_mask_events: usize,
}

pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<RunLogEntry>,
    pub metrics: StageMetrics,
}

const SMOOTH_WINDOW: usize = 50;

fn smooth_ends(losses: &[f64]) -> (f64, f64) {
    if losses.is_empty() {
        return (0.0, 0.0);
    }
    let w = SMOOTH_WINDOW.min(losses.len());
    let first = losses[..w].iter().sum::<f64>() / w as f64;
    let last = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
    (first, last)
}

fn count_tunable_scalars(store: &ParameterStore, freeze: &FreezeMask) -> (usize, usize) {
    let mut tunable = 0;
    let mut total = 0;
    for (name, tensor) in store.iter() {
        total += tensor.len();
        if freeze.is_tunable(name) {
            tunable += tensor.len();
        }
    }
    (tunable, total)
}

/// Stack per-utterance frame features for clustering; returns the matrix and
/// per-item row ranges.
fn gather_cluster_features(
    items: &[TrainItem],
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    use_encoder: bool,
) -> Result<(Array2<f64>, Vec<(usize, usize)>)> {
    let per_item: Vec<Array2<f64>> = if use_encoder {
        items
            .par_iter()
            .map(|item| {
                encode_features(store, names, cfg, item.audio.as_ref(), item.visual.as_ref(), false)
            })
            .collect::<Result<_>>()?
    } else {
        items
            .iter()
            .map(|item| {
                let a = item.audio.as_ref().expect("pretraining loads both modalities");
                let v = item.visual.as_ref().expect("pretraining loads both modalities");
                let t = a.nrows();
                let mut out = Array2::zeros((t, a.ncols() + v.ncols()));
                out.slice_mut(ndarray::s![.., 0..a.ncols()]).assign(a);
                out.slice_mut(ndarray::s![.., a.ncols()..]).assign(v);
                Ok(out)
            })
            .collect::<Result<_>>()?
    };
    let total: usize = per_item.iter().map(|m| m.nrows()).sum();
    let dim = per_item.first().map(|m| m.ncols()).unwrap_or(0);
    let mut frames = Array2::zeros((total, dim));
    let mut ranges = Vec::with_capacity(per_item.len());
    let mut cursor = 0;
    for m in &per_item {
        frames
            .slice_mut(ndarray::s![cursor..cursor + m.nrows(), ..])
            .assign(m);
        ranges.push((cursor, cursor + m.nrows()));
        cursor += m.nrows();
    }
    Ok((frames, ranges))
}

/// Stage 1: alternate feature clustering with masked cluster prediction under
/// per-utterance modality dropout. Round 0 clusters raw concatenated frames;
/// later rounds re-cluster encoder features from the previous round.
pub fn pretrain(corpus: &Corpus, mcfg: &ModelConfig, scfg: &StageConfig) -> Result<StageOutcome> {
    if scfg.stage != StageKind::Pretrain {
        return Err(Error::Config("stage config is not for pretraining".into()));
    }
    mcfg.validate()?;
    scfg.validate()?;
    let vocab = corpus.vocab();
    if vocab.size() != mcfg.vocab_size {
        return Err(Error::Config(format!(
            "model vocab {} does not match corpus vocab {}",
            mcfg.vocab_size,
            vocab.size()
        )));
    }
    let train = load_split_items(corpus, Split::Train, Modality::AudioVisual, &vocab, None)?;
    if train.is_empty() {
        return Err(Error::Validation("train split is empty".into()));
    }
    let val = load_split_items(corpus, Split::Val, Modality::AudioVisual, &vocab, None)?;

    let names = Names::new(mcfg);
    let mut store = init_params(mcfg, derive_seed(scfg.seed, "init"));
    let freeze = FreezeMask::all_tunable(&store);
    let mut adam = Adam::new();
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(scfg.steps);
    let mut empty_mask_events = 0usize;

    let rounds = scfg.pretrain_rounds;
    let base = scfg.steps / rounds;
    let mut global_step = 0usize;
    let mut val_targets: Vec<Vec<usize>> = Vec::new();

    for round in 0..rounds {
        let round_steps = if round + 1 == rounds {
            scfg.steps - base * (rounds - 1)
        } else {
            base
        };
        // Cluster targets for this round.
        let (frames, ranges) =
            gather_cluster_features(&train, &store, &names, mcfg, round > 0)?;
        let km = kmeans(
            &frames,
            mcfg.clusters_k,
            scfg.kmeans_iters,
            derive_seed(scfg.seed, &format!("kmeans/{round}")),
        )?;
        let train_targets: Vec<Vec<usize>> = ranges
            .iter()
            .map(|&(a, b)| km.labels[a..b].to_vec())
            .collect();
        if !val.is_empty() {
            let (vframes, vranges) =
                gather_cluster_features(&val, &store, &names, mcfg, round > 0)?;
            let vlabels = assign_nearest(&km.centroids, &vframes);
            val_targets = vranges
                .iter()
                .map(|&(a, b)| vlabels[a..b].to_vec())
                .collect();
        }

        let mut sched = BatchSchedule::new(
            train.len(),
            scfg.batch_size,
            derive_seed(scfg.seed, &format!("sched/{round}")),
        );
        for _ in 0..round_steps {
            let batch = sched.next_batch();
            let lr = lr_schedule(global_step + 1, scfg.steps, scfg.peak_lr, scfg.warmup_fraction);
            let results: Vec<(f64, bool, GradStore)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| -> Result<(f64, bool, GradStore)> {
                    let item = &train[i];
                    let mut rng = rand::SeedableRng::seed_from_u64(derive_seed(
                        scfg.seed,
                        &format!("draw/{round}/{global_step}/{slot}"),
                    ));
                    let (keep_a, keep_v) = sample_dropout(scfg.modality_dropout, &mut rng);
                    let t = item.audio.as_ref().unwrap().nrows();
                    let mask = sample_mask(t, scfg.mask_coverage, scfg.mask_span, &mut rng);
                    let mut grads = GradStore::new();
                    let out = masked_cluster_step(
                        &store,
                        &names,
                        mcfg,
                        keep_a.then_some(item.audio.as_ref().unwrap()),
                        keep_v.then_some(item.visual.as_ref().unwrap()),
                        &mask,
                        &train_targets[i],
                        Some(&mut grads),
                    )?;
                    Ok((out.loss, out.empty_mask, grads))
                })
                .collect::<Result<_>>()?;

            let mut total = GradStore::new();
            let mut loss_sum = 0.0;
            for (loss, warned, grads) in results {
                loss_sum += loss;
                if warned {
                    empty_mask_events += 1;
                    log::warn!("empty mask sampled at step {global_step}");
                }
                total.merge(grads);
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(&mut store, &total, &freeze, lr);
            let loss = loss_sum / batch.len() as f64;
            losses.push(loss);
            if global_step % scfg.log_interval == 0 || global_step + 1 == scfg.steps {
                log.push(RunLogEntry {
                    stage: "pretrain".into(),
                    step: global_step,
                    lr,
                    loss,
                    val_loss: None,
                });
            }
            global_step += 1;
        }
    }

    // Held-out masked prediction accuracy against the final round's targets.
    let masked_val_accuracy = if val.is_empty() {
        None
    } else {
        let hits: Vec<(usize, usize)> = val
            .par_iter()
            .enumerate()
            .map(|(i, item)| -> Result<(usize, usize)> {
                let mut rng = rand::SeedableRng::seed_from_u64(derive_seed(
                    scfg.seed,
                    &format!("valmask/{i}"),
                ));
                let t = item.audio.as_ref().unwrap().nrows();
                let mask = sample_mask(t, scfg.mask_coverage, scfg.mask_span, &mut rng);
                let out = masked_cluster_step(
                    &store,
                    &names,
                    mcfg,
                    item.audio.as_ref(),
                    item.visual.as_ref(),
                    &mask,
                    &val_targets[i],
                    None,
                )?;
                Ok((out.correct, out.masked))
            })
            .collect::<Result<_>>()?;
        let correct: usize = hits.iter().map(|h| h.0).sum();
        let masked: usize = hits.iter().map(|h| h.1).sum();
        Some(correct as f64 / masked.max(1) as f64)
    };

    let (first_loss, last_loss) = smooth_ends(&losses);
    let (tunable, total_params) = count_tunable_scalars(&store, &freeze);
    Ok(StageOutcome {
        checkpoint: Checkpoint {
            model: *mcfg,
            vocab,
            params: store,
            freeze,
            stage: StageTag::Pretrained,
        },
        log,
        metrics: StageMetrics {
            first_loss,
            last_loss,
            final_val_loss: None,
            masked_val_accuracy,
            chance_accuracy: Some(1.0 / mcfg.clusters_k as f64),
            tunable_params: tunable,
            total_params,
            tunable_ratio: tunable as f64 / total_params as f64,
            empty_mask_events,
        },
    })
}

struct LoopItem {
    targets: Vec<u32>,
    audio: Option<Array2<f64>>,
    visual: Option<Array2<f64>>,
    memory: Option<Array2<f64>>,
}

fn item_loss(
    item: &LoopItem,
    store: &ParameterStore,
    names: &Names,
    mcfg: &ModelConfig,
    prompts_enabled: bool,
    grads: Option<&mut GradStore>,
) -> Result<f64> {
    match &item.memory {
        Some(fp) => s2s_loss_from_memory(store, names, mcfg, fp, &item.targets, grads),
        None => s2s_loss(
            store,
            names,
            mcfg,
            item.audio.as_ref(),
            item.visual.as_ref(),
            &item.targets,
            prompts_enabled,
            grads,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_s2s_training(
    store: &mut ParameterStore,
    freeze: &FreezeMask,
    names: &Names,
    mcfg: &ModelConfig,
    scfg: &StageConfig,
    items: &[LoopItem],
    val_items: &[LoopItem],
    prompts_enabled: bool,
    grad_filter: Option<&HashSet<String>>,
    stage_label: &str,
    log: &mut Vec<RunLogEntry>,
) -> Result<(Vec<f64>, Option<f64>)> {
    if items.is_empty() {
        return Err(Error::Validation(format!("{stage_label}: no training utterances")));
    }
    let mut adam = Adam::new();
    let mut sched = BatchSchedule::new(
        items.len(),
        scfg.batch_size,
        derive_seed(scfg.seed, "sched"),
    );
    let mut losses = Vec::with_capacity(scfg.steps);
    let mut final_val = None;
    for step in 0..scfg.steps {
        let batch = sched.next_batch();
        let lr = lr_schedule(step + 1, scfg.steps, scfg.peak_lr, scfg.warmup_fraction);
        let results: Vec<(f64, GradStore)> = batch
            .par_iter()
            .map(|&i| -> Result<(f64, GradStore)> {
                let mut grads = match grad_filter {
                    Some(f) => GradStore::filtered(f.clone()),
                    None => GradStore::new(),
                };
                let loss = item_loss(&items[i], store, names, mcfg, prompts_enabled, Some(&mut grads))?;
                Ok((loss, grads))
            })
            .collect::<Result<_>>()?;
        let mut total = GradStore::new();
        let mut loss_sum = 0.0;
        for (loss, grads) in results {
            loss_sum += loss;
            total.merge(grads);
        }
        total.scale(1.0 / batch.len() as f64);
        adam.step(store, &total, freeze, lr);
        let loss = loss_sum / batch.len() as f64;
        losses.push(loss);

        let due_val = !val_items.is_empty()
            && ((step + 1) % scfg.val_interval == 0 || step + 1 == scfg.steps);
        let val_loss = if due_val {
            let vsum: f64 = val_items
                .par_iter()
                .map(|item| item_loss(item, store, names, mcfg, prompts_enabled, None))
                .collect::<Result<Vec<f64>>>()?
                .iter()
                .sum();
            let v = vsum / val_items.len() as f64;
            final_val = Some(v);
            Some(v)
        } else {
            None
        };
        if step % scfg.log_interval == 0 || val_loss.is_some() || step + 1 == scfg.steps {
            log.push(RunLogEntry {
                stage: stage_label.into(),
                step,
                lr,
                loss,
                val_loss,
            });
        }
    }
    Ok((losses, final_val))
}

fn to_loop_items(items: Vec<TrainItem>, memories: Option<Vec<Array2<f64>>>) -> Vec<LoopItem> {
    match memories {
        Some(mems) => items
            .into_iter()
            .zip(mems)
            .map(|(item, fp)| LoopItem {
                targets: item.targets,
                audio: None,
                visual: None,
                memory: Some(fp),
            })
            .collect(),
        None => items
            .into_iter()
            .map(|item| LoopItem {
                targets: item.targets,
                audio: item.audio,
                visual: item.visual,
                memory: None,
            })
            .collect(),
    }
}

fn precompute_memories(
    items: &[TrainItem],
    store: &ParameterStore,
    names: &Names,
    mcfg: &ModelConfig,
    prompts_enabled: bool,
) -> Result<Vec<Array2<f64>>> {
    items
        .par_iter()
        .map(|item| {
            encode_features(
                store,
                names,
                mcfg,
                item.audio.as_ref(),
                item.visual.as_ref(),
                prompts_enabled,
            )
        })
        .collect()
}

/// Stage 2: train the decoder on audio-only inputs. Everything upstream of
/// the decoder is frozen (the `encoder_frozen = false` ablation unfreezes the
/// encoder stack and reproduces the transfer collapse).
pub fn train_asr_decoder(corpus: &Corpus, ckpt: Checkpoint, scfg: &StageConfig) -> Result<StageOutcome> {
    if scfg.stage != StageKind::Asr {
        return Err(Error::Config("stage config is not for ASR training".into()));
    }
    scfg.validate()?;
    ckpt.expect_stage(StageTag::Pretrained, "asr input checkpoint")?;
    if scfg.train_modality != Modality::Audio {
        return Err(Error::Config("the ASR stage consumes audio-only utterances".into()));
    }

    let Checkpoint {
        model: mcfg,
        vocab,
        params: mut store,
        ..
    } = ckpt;
    let names = Names::new(&mcfg);
    let train = load_split_items(corpus, Split::Train, Modality::Audio, &vocab, None)?;
    let val = load_split_items(corpus, Split::Val, Modality::Audio, &vocab, None)?;

    let mut freeze = FreezeMask::all_frozen(&store);
    freeze.set_prefix("decoder.", ParamState::Tunable);
    freeze.set_prefix("output_head.", ParamState::Tunable);
    freeze.set("embeddings.token", ParamState::Tunable);
    if !scfg.encoder_frozen {
        freeze.set_prefix("encoder.layer.", ParamState::Tunable);
    }

    let (train_items, val_items) = if scfg.encoder_frozen {
        // The encoder output per utterance is constant; compute it once.
        let train_mem = precompute_memories(&train, &store, &names, &mcfg, false)?;
        let val_mem = precompute_memories(&val, &store, &names, &mcfg, false)?;
        (
            to_loop_items(train, Some(train_mem)),
            to_loop_items(val, Some(val_mem)),
        )
    } else {
        (to_loop_items(train, None), to_loop_items(val, None))
    };

    let mut log = Vec::new();
    let (losses, final_val) = run_s2s_training(
        &mut store,
        &freeze,
        &names,
        &mcfg,
        scfg,
        &train_items,
        &val_items,
        false,
        None,
        "asr",
        &mut log,
    )?;
    let (first_loss, last_loss) = smooth_ends(&losses);
    let (tunable, total) = count_tunable_scalars(&store, &freeze);
    Ok(StageOutcome {
        checkpoint: Checkpoint {
            model: mcfg,
            vocab,
            params: store,
            freeze,
            stage: StageTag::Asr,
        },
        log,
        metrics: StageMetrics {
            first_loss,
            last_loss,
            final_val_loss: final_val,
            masked_val_accuracy: None,
            chance_accuracy: None,
            tunable_params: tunable,
            total_params: total,
            tunable_ratio: tunable as f64 / total as f64,
            empty_mask_events: 0,
        },
    })
}

/// Stage 3, few-shot: install a fresh cluster-prompt bank and tune only
/// prompt/meta parameters on the common-word split's visual utterances.
pub fn tune_cluster_prompt(
    corpus: &Corpus,
    ckpt: Checkpoint,
    split: &SplitManifest,
    scfg: &StageConfig,
) -> Result<StageOutcome> {
    if scfg.stage != StageKind::FewShotClusterPrompt {
        return Err(Error::Config("stage config is not for cluster-prompt tuning".into()));
    }
    scfg.validate()?;
    ckpt.expect_stage(StageTag::Asr, "cluster prompt input checkpoint")?;
    if split.retained_ids.is_empty() {
        return Err(Error::Validation("the common-word split retained no utterances".into()));
    }

    let Checkpoint {
        model: mut mcfg,
        vocab,
        params: mut store,
        ..
    } = ckpt;
    if let Some(n) = scfg.prompt_clusters {
        if n == 0 {
            return Err(Error::Config("prompt cluster count must be >= 1".into()));
        }
        mcfg.prompt_clusters_n = n;
    }
    add_prompt_params(&mut store, &mcfg, derive_seed(scfg.seed, "prompt-init"));
    let names = Names::new(&mcfg);

    let mut freeze = FreezeMask::all_frozen(&store);
    freeze.set_prefix("prompt.", ParamState::Tunable);
    freeze.set_prefix("meta.", ParamState::Tunable);
    let tunable_set: HashSet<String> = freeze.tunable_names().into_iter().collect();

    let train = load_split_items(
        corpus,
        Split::Train,
        Modality::Visual,
        &vocab,
        Some(&split.retained_ids),
    )?;
    let val = load_split_items(corpus, Split::Val, Modality::Visual, &vocab, None)?;
    let train_items = to_loop_items(train, None);
    let val_items = to_loop_items(val, None);

    let mut log = Vec::new();
    let (losses, final_val) = run_s2s_training(
        &mut store,
        &freeze,
        &names,
        &mcfg,
        scfg,
        &train_items,
        &val_items,
        true,
        Some(&tunable_set),
        "cluster_prompt",
        &mut log,
    )?;
    let (first_loss, last_loss) = smooth_ends(&losses);
    let (tunable, total) = count_tunable_scalars(&store, &freeze);
    let ratio = tunable as f64 / total as f64;
    if ratio > 0.05 {
        log::warn!("cluster-prompt tunable ratio {ratio:.4} exceeds 0.05 (N={})", mcfg.prompt_clusters_n);
    }
    Ok(StageOutcome {
        checkpoint: Checkpoint {
            model: mcfg,
            vocab,
            params: store,
            freeze,
            stage: StageTag::ClusterPrompt,
        },
        log,
        metrics: StageMetrics {
            first_loss,
            last_loss,
            final_val_loss: final_val,
            masked_val_accuracy: None,
            chance_accuracy: None,
            tunable_params: tunable,
            total_params: total,
            tunable_ratio: ratio,
            empty_mask_events: 0,
        },
    })
}

/// Stage 3, full-shot: unfreeze exactly the selected layer groups and
/// fine-tune on visual utterances.
pub fn finetune_full(corpus: &Corpus, ckpt: Checkpoint, scfg: &StageConfig) -> Result<StageOutcome> {
    if scfg.stage != StageKind::FullFinetune {
        return Err(Error::Config("stage config is not for full fine-tuning".into()));
    }
    scfg.validate()?;
    ckpt.expect_stage(StageTag::Asr, "fine-tune input checkpoint")?;

    let Checkpoint {
        model: mcfg,
        vocab,
        params: mut store,
        ..
    } = ckpt;
    let names = Names::new(&mcfg);

    let mut freeze = FreezeMask::all_frozen(&store);
    let mut selectors = Vec::new();
    for text in &scfg.layer_selectors {
        selectors.extend(super::selectors::parse_selectors(text)?);
    }
    super::selectors::apply_selectors(&selectors, &mcfg, &mut freeze)?;
    let tunable_names = freeze.tunable_names();

    let train = load_split_items(corpus, Split::Train, Modality::Visual, &vocab, None)?;
    let val = load_split_items(corpus, Split::Val, Modality::Visual, &vocab, None)?;

    let mut log = Vec::new();
    let (losses, final_val) = if tunable_names.is_empty() {
        // Nothing to tune; parameters pass through unchanged.
        (Vec::new(), None)
    } else {
        let decoder_side_only = tunable_names.iter().all(|n| {
            n.starts_with("decoder.") || n.starts_with("output_head.") || n == "embeddings.token"
        });
        let (train_items, val_items) = if decoder_side_only {
            let train_mem = precompute_memories(&train, &store, &names, &mcfg, false)?;
            let val_mem = precompute_memories(&val, &store, &names, &mcfg, false)?;
            (
                to_loop_items(train, Some(train_mem)),
                to_loop_items(val, Some(val_mem)),
            )
        } else {
            (to_loop_items(train, None), to_loop_items(val, None))
        };
        run_s2s_training(
            &mut store,
            &freeze,
            &names,
            &mcfg,
            scfg,
            &train_items,
            &val_items,
            false,
            None,
            "full_finetune",
            &mut log,
        )?
    };
    let (first_loss, last_loss) = smooth_ends(&losses);
    let (tunable, total) = count_tunable_scalars(&store, &freeze);
    Ok(StageOutcome {
        checkpoint: Checkpoint {
            model: mcfg,
            vocab,
            params: store,
            freeze,
            stage: StageTag::FullFinetune,
        },
        log,
        metrics: StageMetrics {
            first_loss,
            last_loss,
            final_val_loss: final_val,
            masked_val_accuracy: None,
            chance_accuracy: None,
            tunable_params: tunable,
            total_params: total,
            tunable_ratio: tunable as f64 / total.max(1) as f64,
            empty_mask_events: 0,
        },
    })
}
