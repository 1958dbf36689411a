//! Named parameter tensors, the freeze registry, gradients, and checkpoints.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{self, derive_seed};

use super::config::{ModelConfig, Vocab};

/// Every learnable tensor, keyed by a dotted name. Iteration is always in
/// name order, which keeps accumulation and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    map: BTreeMap<String, Array2<f64>>,
}

impl ParameterStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.map.insert(name.into(), value);
    }

    /// Fetch a tensor that must exist; missing names are programming errors.
    pub fn p(&self, name: &str) -> &Array2<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// The parameter group a name belongs to, mirroring the freeze-control
    /// granularity: `encoder.layer.3`, `prompt.layer.0`, `embeddings`, ...
    pub fn group_of(name: &str) -> String {
        let parts: Vec<&str> = name.split('.').collect();
        if parts.len() >= 3 && parts[1] == "layer" {
            format!("{}.{}.{}", parts[0], parts[1], parts[2])
        } else {
            parts[0].to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamState {
    Frozen,
    Tunable,
}

/// Per-parameter tunable/frozen flags; total over the store it was built for.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FreezeMask {
    pub map: BTreeMap<String, ParamState>,
}

impl FreezeMask {
    pub fn all_frozen(store: &ParameterStore) -> Self {
        FreezeMask {
            map: store
                .names()
                .map(|n| (n.clone(), ParamState::Frozen))
                .collect(),
        }
    }

    pub fn all_tunable(store: &ParameterStore) -> Self {
        FreezeMask {
            map: store
                .names()
                .map(|n| (n.clone(), ParamState::Tunable))
                .collect(),
        }
    }

    pub fn set(&mut self, name: &str, state: ParamState) {
        self.map.insert(name.to_string(), state);
    }

    /// Mark every parameter whose name starts with `prefix` as `state`.
    pub fn set_prefix(&mut self, prefix: &str, state: ParamState) {
        for (name, s) in self.map.iter_mut() {
            if name.starts_with(prefix) {
                *s = state;
            }
        }
    }

    pub fn is_tunable(&self, name: &str) -> bool {
        matches!(self.map.get(name), Some(ParamState::Tunable))
    }

    pub fn tunable_names(&self) -> Vec<String> {
        self.map
            .iter()
            .filter(|(_, s)| **s == ParamState::Tunable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn validate_total(&self, store: &ParameterStore) -> Result<()> {
        for name in store.names() {
            if !self.map.contains_key(name) {
                return Err(Error::Validation(format!(
                    "freeze mask is missing parameter `{name}`"
                )));
            }
        }
        Ok(())
    }
}

/// Accumulated gradients. An optional filter restricts which names are kept,
/// letting backward passes skip weight-gradient work for frozen subtrees.
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    map: BTreeMap<String, Array2<f64>>,
    filter: Option<HashSet<String>>,
}

impl GradStore {
    pub fn new() -> Self {
        GradStore::default()
    }

    pub fn filtered(names: HashSet<String>) -> Self {
        GradStore {
            map: BTreeMap::new(),
            filter: Some(names),
        }
    }

    /// Whether gradients for `name` should be computed at all.
    pub fn tracks(&self, name: &str) -> bool {
        match &self.filter {
            Some(f) => f.contains(name),
            None => true,
        }
    }

    pub fn add(&mut self, name: &str, grad: Array2<f64>) {
        if !self.tracks(name) {
            return;
        }
        match self.map.get_mut(name) {
            Some(existing) => *existing += &grad,
            None => {
                self.map.insert(name.to_string(), grad);
            }
        }
    }

    pub fn merge(&mut self, other: GradStore) {
        for (name, grad) in other.map {
            match self.map.get_mut(&name) {
                Some(existing) => *existing += &grad,
                None => {
                    self.map.insert(name, grad);
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.map.values_mut() {
            grad.mapv_inplace(|v| v * factor);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Training-stage tag carried by every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Pretrained,
    Asr,
    ZeroShot,
    ClusterPrompt,
    FullFinetune,
}

impl StageTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageTag::Pretrained => "pretrained",
            StageTag::Asr => "asr",
            StageTag::ZeroShot => "zero_shot",
            StageTag::ClusterPrompt => "cluster_prompt",
            StageTag::FullFinetune => "full_finetune",
        }
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols))
}

fn ones(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_elem((rows, cols), 1.0)
}

fn init_attn(store: &mut ParameterStore, prefix: &str, d: usize, seed: u64) {
    for part in ["wq", "wk", "wv", "wo"] {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{prefix}.{part}")));
        store.insert(format!("{prefix}.{part}"), xavier(d, d, &mut rng));
    }
    for part in ["bq", "bk", "bv", "bo"] {
        store.insert(format!("{prefix}.{part}"), zeros(1, d));
    }
}

fn init_ln(store: &mut ParameterStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gamma"), ones(1, d));
    store.insert(format!("{prefix}.beta"), zeros(1, d));
}

fn init_ffn(store: &mut ParameterStore, prefix: &str, d: usize, f: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{prefix}.w1")));
    store.insert(format!("{prefix}.w1"), xavier(d, f, &mut rng));
    store.insert(format!("{prefix}.b1"), zeros(1, f));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{prefix}.w2")));
    store.insert(format!("{prefix}.w2"), xavier(f, d, &mut rng));
    store.insert(format!("{prefix}.b2"), zeros(1, d));
}

/// Initialize every backbone parameter from the seed. Prompt banks are not
/// created here; `add_prompt_params` installs them at tuning time.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParameterStore {
    let d = cfg.d_model;
    let mut store = ParameterStore::default();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "audio_frontend"));
    store.insert("audio_frontend.weight", xavier(cfg.audio_dim, d, &mut rng));
    store.insert("audio_frontend.bias", zeros(1, d));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "visual_frontend"));
    store.insert("visual_frontend.weight", xavier(cfg.visual_dim, d, &mut rng));
    store.insert("visual_frontend.bias", zeros(1, d));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "av_fusion"));
    store.insert("av_fusion.weight", xavier(2 * d, d, &mut rng));
    store.insert("av_fusion.bias", zeros(1, d));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "embeddings.token"));
    store.insert("embeddings.token", gaussian(cfg.vocab_size, d, 0.02, &mut rng));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "embeddings.mask"));
    store.insert("embeddings.mask", gaussian(1, d, 0.02, &mut rng));

    for j in 0..cfg.encoder_layers {
        let p = format!("encoder.layer.{j}");
        init_ln(&mut store, &format!("{p}.ln1"), d);
        init_attn(&mut store, &format!("{p}.attn"), d, seed);
        init_ln(&mut store, &format!("{p}.ln2"), d);
        init_ffn(&mut store, &format!("{p}.ffn"), d, cfg.ffn_dim, seed);
    }
    for j in 0..cfg.decoder_layers {
        let p = format!("decoder.layer.{j}");
        init_ln(&mut store, &format!("{p}.ln1"), d);
        init_attn(&mut store, &format!("{p}.self_attn"), d, seed);
        init_ln(&mut store, &format!("{p}.ln2"), d);
        init_attn(&mut store, &format!("{p}.cross_attn"), d, seed);
        init_ln(&mut store, &format!("{p}.ln3"), d);
        init_ffn(&mut store, &format!("{p}.ffn"), d, cfg.ffn_dim, seed);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "output_head"));
    store.insert("output_head.weight", xavier(d, cfg.vocab_size, &mut rng));
    store.insert("output_head.bias", zeros(1, cfg.vocab_size));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "cluster_head"));
    store.insert("cluster_head.weight", xavier(d, cfg.clusters_k, &mut rng));
    store.insert("cluster_head.bias", zeros(1, cfg.clusters_k));

    store
}

/// Install a fresh cluster-prompt bank: zero cluster embeddings (so the model
/// starts exactly at the zero-shot behaviour) and a small random Meta weight
/// per layer.
pub fn add_prompt_params(store: &mut ParameterStore, cfg: &ModelConfig, seed: u64) {
    let d = cfg.d_model;
    let n = cfg.prompt_clusters_n;
    for j in 0..cfg.encoder_layers {
        store.insert(format!("prompt.layer.{j}.clusters"), zeros(n, d));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("meta.layer.{j}")));
        store.insert(format!("meta.layer.{j}.weight"), xavier(d, n, &mut rng));
        store.insert(format!("meta.layer.{j}.bias"), zeros(1, n));
    }
}

pub fn has_prompt_params(store: &ParameterStore) -> bool {
    store.contains("prompt.layer.0.clusters")
}

/// Precomputed parameter names so hot loops never format strings.
#[derive(Debug, Clone)]
pub struct AttnNames {
    pub wq: String,
    pub bq: String,
    pub wk: String,
    pub bk: String,
    pub wv: String,
    pub bv: String,
    pub wo: String,
    pub bo: String,
}

impl AttnNames {
    fn new(prefix: &str) -> Self {
        AttnNames {
            wq: format!("{prefix}.wq"),
            bq: format!("{prefix}.bq"),
            wk: format!("{prefix}.wk"),
            bk: format!("{prefix}.bk"),
            wv: format!("{prefix}.wv"),
            bv: format!("{prefix}.bv"),
            wo: format!("{prefix}.wo"),
            bo: format!("{prefix}.bo"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LnNames {
    pub gamma: String,
    pub beta: String,
}

impl LnNames {
    fn new(prefix: &str) -> Self {
        LnNames {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FfnNames {
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
}

impl FfnNames {
    fn new(prefix: &str) -> Self {
        FfnNames {
            w1: format!("{prefix}.w1"),
            b1: format!("{prefix}.b1"),
            w2: format!("{prefix}.w2"),
            b2: format!("{prefix}.b2"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncLayerNames {
    pub ln1: LnNames,
    pub attn: AttnNames,
    pub ln2: LnNames,
    pub ffn: FfnNames,
}

#[derive(Debug, Clone)]
pub struct DecLayerNames {
    pub ln1: LnNames,
    pub self_attn: AttnNames,
    pub ln2: LnNames,
    pub cross_attn: AttnNames,
    pub ln3: LnNames,
    pub ffn: FfnNames,
}

#[derive(Debug, Clone)]
pub struct PromptNames {
    pub clusters: String,
    pub meta_w: String,
    pub meta_b: String,
}

#[derive(Debug, Clone)]
pub struct Names {
    pub audio_w: String,
    pub audio_b: String,
    pub visual_w: String,
    pub visual_b: String,
    pub fusion_w: String,
    pub fusion_b: String,
    pub token_emb: String,
    pub mask_emb: String,
    pub encoder: Vec<EncLayerNames>,
    pub decoder: Vec<DecLayerNames>,
    pub prompt: Vec<PromptNames>,
    pub head_w: String,
    pub head_b: String,
    pub cluster_w: String,
    pub cluster_b: String,
}

impl Names {
    pub fn new(cfg: &ModelConfig) -> Self {
        let encoder = (0..cfg.encoder_layers)
            .map(|j| EncLayerNames {
                ln1: LnNames::new(&format!("encoder.layer.{j}.ln1")),
                attn: AttnNames::new(&format!("encoder.layer.{j}.attn")),
                ln2: LnNames::new(&format!("encoder.layer.{j}.ln2")),
                ffn: FfnNames::new(&format!("encoder.layer.{j}.ffn")),
            })
            .collect();
        let decoder = (0..cfg.decoder_layers)
            .map(|j| DecLayerNames {
                ln1: LnNames::new(&format!("decoder.layer.{j}.ln1")),
                self_attn: AttnNames::new(&format!("decoder.layer.{j}.self_attn")),
                ln2: LnNames::new(&format!("decoder.layer.{j}.ln2")),
                cross_attn: AttnNames::new(&format!("decoder.layer.{j}.cross_attn")),
                ln3: LnNames::new(&format!("decoder.layer.{j}.ln3")),
                ffn: FfnNames::new(&format!("decoder.layer.{j}.ffn")),
            })
            .collect();
        let prompt = (0..cfg.encoder_layers)
            .map(|j| PromptNames {
                clusters: format!("prompt.layer.{j}.clusters"),
                meta_w: format!("meta.layer.{j}.weight"),
                meta_b: format!("meta.layer.{j}.bias"),
            })
            .collect();
        Names {
            audio_w: "audio_frontend.weight".into(),
            audio_b: "audio_frontend.bias".into(),
            visual_w: "visual_frontend.weight".into(),
            visual_b: "visual_frontend.bias".into(),
            fusion_w: "av_fusion.weight".into(),
            fusion_b: "av_fusion.bias".into(),
            token_emb: "embeddings.token".into(),
            mask_emb: "embeddings.mask".into(),
            encoder,
            decoder,
            prompt,
            head_w: "output_head.weight".into(),
            head_b: "output_head.bias".into(),
            cluster_w: "cluster_head.weight".into(),
            cluster_b: "cluster_head.bias".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfigFile {
    model: ModelConfig,
    vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct StageFile {
    stage: StageTag,
}

/// A complete model snapshot: config, vocabulary, parameters, freeze mask
/// and the training-stage tag.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub params: ParameterStore,
    pub freeze: FreezeMask,
    pub stage: StageTag,
}

impl Checkpoint {
    pub fn expect_stage(&self, expected: StageTag, context: &str) -> Result<()> {
        if self.stage != expected {
            return Err(Error::StageTag {
                context: context.to_string(),
                found: self.stage.as_str().into(),
                expected: expected.as_str().into(),
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, force: bool) -> Result<()> {
        io::prepare_out_dir(dir, force)?;
        io::write_json(
            &dir.join("config.json"),
            &CheckpointConfigFile {
                model: self.model,
                vocab: self.vocab.clone(),
            },
        )?;
        io::write_json(&dir.join("freeze.json"), &self.freeze)?;
        io::write_json(&dir.join("stage.json"), &StageFile { stage: self.stage })?;
        let pdir = dir.join("params");
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        for (name, tensor) in self.params.iter() {
            io::write_tensor(&pdir.join(format!("{name}.omsr")), tensor)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let cfg_file: CheckpointConfigFile = io::read_json(&dir.join("config.json"))?;
        let freeze: FreezeMask = io::read_json(&dir.join("freeze.json"))?;
        let stage_file: StageFile = io::read_json(&dir.join("stage.json"))?;
        let pdir = dir.join("params");
        let mut params = ParameterStore::default();
        let mut entries: Vec<PathBuf> = fs::read_dir(&pdir)
            .map_err(|e| Error::io(&pdir, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&pdir, e))?;
        entries.sort();
        for path in entries {
            let fname = path
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::format(&path, "bad file name"))?;
            let Some(name) = fname.strip_suffix(".omsr") else {
                continue;
            };
            params.insert(name.to_string(), io::read_tensor(&path)?);
        }
        freeze.validate_total(&params)?;
        Ok(Checkpoint {
            model: cfg_file.model,
            vocab: cfg_file.vocab,
            params,
            freeze,
            stage: stage_file.stage,
        })
    }

    /// Hash of everything that defines the model: config, freeze mask, stage
    /// and all tensor bytes. Run records and logs are not part of it.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.model).unwrap().as_bytes());
        h.update(serde_json::to_string(&self.vocab).unwrap().as_bytes());
        h.update(serde_json::to_string(&self.freeze).unwrap().as_bytes());
        h.update(self.stage.as_str().as_bytes());
        for (name, tensor) in self.params.iter() {
            h.update(name.as_bytes());
            h.update(&io::tensor_to_bytes(tensor));
        }
        hex::encode(h.finalize())
    }

    pub fn short_id(&self) -> String {
        self.content_hash()[..12].to_string()
    }

    /// Per-tensor hashes, used by the freeze-soundness checks.
    pub fn tensor_hashes(&self) -> BTreeMap<String, String> {
        self.params
            .iter()
            .map(|(name, tensor)| (name.clone(), io::sha256_hex(&io::tensor_to_bytes(tensor))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            encoder_layers: 2,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 16,
            clusters_k: 3,
            prompt_clusters_n: 2,
            audio_dim: 3,
            visual_dim: 3,
            vocab_size: 9,
            max_seq_len: 16,
            use_positional: true,
        }
    }

    #[test]
    fn init_is_deterministic_and_named_consistently() {
        let cfg = tiny_cfg();
        let a = init_params(&cfg, 3);
        let b = init_params(&cfg, 3);
        for (name, t) in a.iter() {
            assert_eq!(t, b.p(name), "{name} differs between identical seeds");
        }
        let c = init_params(&cfg, 4);
        assert_ne!(a.p("av_fusion.weight"), c.p("av_fusion.weight"));
        assert!(a.contains("encoder.layer.1.ffn.w2"));
        assert!(a.contains("decoder.layer.0.cross_attn.wo"));
        assert!(!has_prompt_params(&a));
    }

    #[test]
    fn group_names() {
        assert_eq!(ParameterStore::group_of("encoder.layer.3.attn.wq"), "encoder.layer.3");
        assert_eq!(ParameterStore::group_of("embeddings.token"), "embeddings");
        assert_eq!(ParameterStore::group_of("prompt.layer.0.clusters"), "prompt.layer.0");
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 5);
        let freeze = FreezeMask::all_frozen(&params);
        let ckpt = Checkpoint {
            model: cfg,
            vocab: Vocab::new(vec!["aa".into(), "bb".into(), "cc".into(), "dd".into(), "ee".into()]),
            params,
            freeze,
            stage: StageTag::Pretrained,
        };
        let d1 = tempfile::tempdir().unwrap();
        ckpt.save(d1.path(), false).unwrap();
        let loaded = Checkpoint::load(d1.path()).unwrap();
        assert_eq!(loaded.stage, StageTag::Pretrained);
        assert_eq!(loaded.content_hash(), ckpt.content_hash());
        let d2 = tempfile::tempdir().unwrap();
        loaded.save(d2.path(), false).unwrap();
        assert_eq!(
            io::hash_dir_contents(d1.path()).unwrap(),
            io::hash_dir_contents(d2.path()).unwrap()
        );
    }

    #[test]
    fn prompt_params_have_zero_clusters() {
        let cfg = tiny_cfg();
        let mut params = init_params(&cfg, 5);
        add_prompt_params(&mut params, &cfg, 6);
        assert!(has_prompt_params(&params));
        let c = params.p("prompt.layer.0.clusters");
        assert!(c.iter().all(|&v| v == 0.0));
        assert_eq!(c.dim(), (2, 8));
        assert_eq!(params.p("meta.layer.1.weight").dim(), (8, 2));
    }

    #[test]
    fn grad_store_filter_and_merge() {
        let mut g = GradStore::new();
        g.add("a", Array2::from_elem((1, 2), 1.0));
        g.add("a", Array2::from_elem((1, 2), 2.0));
        assert_eq!(g.get("a").unwrap()[[0, 0]], 3.0);

        let mut f = GradStore::filtered(["x".to_string()].into_iter().collect());
        assert!(!f.tracks("a"));
        f.add("a", Array2::from_elem((1, 2), 1.0));
        assert!(f.get("a").is_none());
        f.add("x", Array2::from_elem((1, 1), 4.0));
        let mut g2 = GradStore::new();
        g2.merge(f);
        assert_eq!(g2.get("x").unwrap()[[0, 0]], 4.0);
    }
}
