//! Synthetic feature rendering: prototype-plus-Gaussian frames.
//!
//! Each phoneme occupies a contiguous segment of 2-4 frames. Audio frames
//! carry the phoneme prototype, visual frames the prototype of the phoneme's
//! viseme class, so words sharing a viseme sequence are indistinguishable in
//! the visual view once the noise is removed.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::types::{PhonemeInventory, VisemeMap};

/// Fixed unit-norm prototype vectors, one per phoneme (audio view) and one
/// per viseme class (visual view). Drawn once per corpus from the seed.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub audio: Array2<f64>,
    pub visual: Array2<f64>,
    pub viseme_index: Vec<usize>,
    pub viseme_classes: Vec<String>,
}

impl Prototypes {
    pub fn generate(
        inventory: &PhonemeInventory,
        viseme_map: &VisemeMap,
        audio_dim: usize,
        visual_dim: usize,
        seed: u64,
    ) -> Result<Prototypes> {
        let classes = viseme_map.viseme_classes();
        let mut viseme_index = Vec::with_capacity(inventory.len());
        for p in &inventory.phonemes {
            let v = viseme_map
                .viseme_of(p)
                .ok_or_else(|| Error::Validation(format!("phoneme `{p}` has no viseme")))?;
            let idx = classes
                .iter()
                .position(|c| c == v)
                .expect("class list covers all visemes");
            viseme_index.push(idx);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio = unit_rows(inventory.len(), audio_dim, &mut rng);
        let visual = unit_rows(classes.len(), visual_dim, &mut rng);
        Ok(Prototypes {
            audio,
            visual,
            viseme_index,
            viseme_classes: classes,
        })
    }
}

fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        loop {
            let mut norm2 = 0.0;
            for j in 0..d {
                let v: f64 = normal.sample(rng);
                out[[i, j]] = v;
                norm2 += v * v;
            }
            if norm2 > 1e-12 {
                let inv = 1.0 / norm2.sqrt();
                for j in 0..d {
                    out[[i, j]] *= inv;
                }
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RenderConfig {
    pub sigma_audio: f64,
    pub sigma_visual: f64,
    /// Frames per phoneme segment, inclusive.
    pub segment_frames: (usize, usize),
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            sigma_audio: 0.3,
            sigma_visual: 0.3,
            segment_frames: (2, 4),
        }
    }
}

/// One contiguous frame segment belonging to a phoneme of the utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSegment {
    /// Index into the utterance's phoneme sequence.
    pub phoneme_pos: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct RenderedUtterance {
    pub audio: Array2<f64>,
    pub visual: Array2<f64>,
    pub alignment: Vec<AlignedSegment>,
}

/// Render aligned audio/visual feature sequences for a phoneme sequence.
/// `phoneme_ids` index into the inventory the prototypes were built from.
pub fn render_utterance(
    phoneme_ids: &[usize],
    protos: &Prototypes,
    cfg: &RenderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedUtterance> {
    if phoneme_ids.is_empty() {
        return Err(Error::Validation("cannot render an empty phoneme sequence".into()));
    }
    let (seg_lo, seg_hi) = cfg.segment_frames;
    if seg_lo == 0 || seg_hi < seg_lo {
        return Err(Error::Config("invalid segment frame range".into()));
    }
    let audio_dim = protos.audio.ncols();
    let visual_dim = protos.visual.ncols();

    let mut alignment = Vec::with_capacity(phoneme_ids.len());
    let mut start = 0usize;
    for (pos, _) in phoneme_ids.iter().enumerate() {
        let len = rng.gen_range(seg_lo..=seg_hi);
        alignment.push(AlignedSegment {
            phoneme_pos: pos,
            start,
            end: start + len,
        });
        start += len;
    }
    let total = start;

    let mut audio = Array2::zeros((total, audio_dim));
    let mut visual = Array2::zeros((total, visual_dim));
    let noise_a = Normal::new(0.0, 1.0).unwrap();
    for seg in &alignment {
        let p = phoneme_ids[seg.phoneme_pos];
        let v = protos.viseme_index[p];
        for t in seg.start..seg.end {
            for j in 0..audio_dim {
                let eps = if cfg.sigma_audio > 0.0 {
                    cfg.sigma_audio * noise_a.sample(rng)
                } else {
                    0.0
                };
                audio[[t, j]] = protos.audio[[p, j]] + eps;
            }
            for j in 0..visual_dim {
                let eps = if cfg.sigma_visual > 0.0 {
                    cfg.sigma_visual * noise_a.sample(rng)
                } else {
                    0.0
                };
                visual[[t, j]] = protos.visual[[v, j]] + eps;
            }
        }
    }
    Ok(RenderedUtterance {
        audio,
        visual,
        alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (PhonemeInventory, VisemeMap, Prototypes) {
        let inv = PhonemeInventory::synthetic(8);
        let map = VisemeMap::synthetic(&inv, 4).unwrap();
        let protos = Prototypes::generate(&inv, &map, 16, 16, 5).unwrap();
        (inv, map, protos)
    }

    #[test]
    fn noiseless_single_phoneme_repeats_prototype() {
        let (_, _, protos) = setup();
        let cfg = RenderConfig {
            sigma_audio: 0.0,
            sigma_visual: 0.0,
            segment_frames: (2, 2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = render_utterance(&[3], &protos, &cfg, &mut rng).unwrap();
        assert_eq!(r.audio.nrows(), 2);
        for t in 0..2 {
            for j in 0..16 {
                assert_eq!(r.audio[[t, j]], protos.audio[[3, j]]);
            }
        }
    }

    #[test]
    fn shared_viseme_makes_visual_identical_audio_distinct() {
        let (_, map, protos) = setup();
        // Phonemes 0 and 4 share viseme class with a 4-class map over 8.
        assert_eq!(map.viseme_of("p00"), map.viseme_of("p04"));
        let cfg = RenderConfig {
            sigma_audio: 0.0,
            sigma_visual: 0.0,
            segment_frames: (3, 3),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = render_utterance(&[0, 4], &protos, &cfg, &mut rng).unwrap();
        for j in 0..16 {
            assert_eq!(r.visual[[0, j]], r.visual[[3, j]]);
        }
        let audio_differs = (0..16).any(|j| r.audio[[0, j]] != r.audio[[3, j]]);
        assert!(audio_differs);
    }

    #[test]
    fn noisy_mean_approaches_prototype() {
        let (_, _, protos) = setup();
        let cfg = RenderConfig {
            sigma_audio: 0.1,
            sigma_visual: 0.0,
            segment_frames: (1, 1),
        };
        // 1000 frames of the same phoneme: the per-coordinate mean lands
        // within 0.02 of the prototype (sigma/sqrt(1000) ~ 0.003).
        let ids = vec![2usize; 1000];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = render_utterance(&ids, &protos, &cfg, &mut rng).unwrap();
        assert_eq!(r.audio.nrows(), 1000);
        for j in 0..16 {
            let mean = r.audio.column(j).sum() / 1000.0;
            assert!(
                (mean - protos.audio[[2, j]]).abs() < 0.02,
                "coordinate {j} mean drifted"
            );
        }
    }

    #[test]
    fn alignment_partitions_frames_and_views_agree() {
        let (_, _, protos) = setup();
        let cfg = RenderConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = render_utterance(&[1, 5, 2, 2], &protos, &cfg, &mut rng).unwrap();
        assert_eq!(r.audio.nrows(), r.visual.nrows());
        let mut cursor = 0;
        for (i, seg) in r.alignment.iter().enumerate() {
            assert_eq!(seg.phoneme_pos, i);
            assert_eq!(seg.start, cursor);
            assert!(seg.end > seg.start);
            let len = seg.end - seg.start;
            assert!((2..=4).contains(&len));
            cursor = seg.end;
        }
        assert_eq!(cursor, r.audio.nrows());
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let (_, _, protos) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(render_utterance(&[], &protos, &RenderConfig::default(), &mut rng).is_err());
    }
}
