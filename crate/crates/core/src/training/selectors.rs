//! Layer-group selectors for selective fine-tuning, e.g.
//! `encoder.layer.[0,4)`, `decoder.layer.[0,2)`, `output_head`, `all`.

use crate::error::{Error, Result};
use crate::model::{FreezeMask, ModelConfig, ParamState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    EncoderLayers { start: usize, end: usize },
    DecoderLayers { start: usize, end: usize },
    Group(String),
    All,
}

const GROUPS: &[&str] = &[
    "audio_frontend",
    "visual_frontend",
    "av_fusion",
    "embeddings",
    "output_head",
    "cluster_head",
];

/// Parse a comma-separated selector list. Commas inside `[a,b)` ranges do
/// not split.
pub fn parse_selectors(text: &str) -> Result<Vec<Selector>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut token = String::new();
    for c in text.chars().chain(std::iter::once(',')) {
        match c {
            '[' => {
                depth += 1;
                token.push(c);
            }
            ')' | ']' if depth > 0 => {
                depth -= 1;
                token.push(c);
            }
            ',' if depth == 0 => {
                let tok = token.trim();
                if !tok.is_empty() {
                    out.push(parse_one(tok)?);
                }
                token.clear();
            }
            _ => token.push(c),
        }
    }
    Ok(out)
}

fn parse_one(tok: &str) -> Result<Selector> {
    if tok == "all" {
        return Ok(Selector::All);
    }
    if GROUPS.contains(&tok) {
        return Ok(Selector::Group(tok.to_string()));
    }
    for (prefix, enc) in [("encoder.layer.", true), ("decoder.layer.", false)] {
        if let Some(rest) = tok.strip_prefix(prefix) {
            let rest = rest.trim();
            let inner = rest
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| {
                    Error::Config(format!("selector `{tok}` must use half-open range syntax [a,b)"))
                })?;
            let mut parts = inner.splitn(2, ',');
            let a: usize = parts
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad range start in `{tok}`")))?;
            let b: usize = parts
                .next()
                .ok_or_else(|| Error::Config(format!("missing range end in `{tok}`")))?
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad range end in `{tok}`")))?;
            if a >= b {
                return Err(Error::Config(format!("empty range in `{tok}`")));
            }
            return Ok(if enc {
                Selector::EncoderLayers { start: a, end: b }
            } else {
                Selector::DecoderLayers { start: a, end: b }
            });
        }
    }
    Err(Error::Config(format!("unknown selector `{tok}`")))
}

/// Mark the selected groups tunable in `freeze`. Ranges that name layers the
/// model does not have are rejected.
pub fn apply_selectors(
    selectors: &[Selector],
    cfg: &ModelConfig,
    freeze: &mut FreezeMask,
) -> Result<()> {
    for sel in selectors {
        match sel {
            Selector::All => {
                for name in freeze.map.keys().cloned().collect::<Vec<_>>() {
                    freeze.set(&name, ParamState::Tunable);
                }
            }
            Selector::EncoderLayers { start, end } => {
                if *end > cfg.encoder_layers {
                    return Err(Error::Config(format!(
                        "encoder.layer.[{start},{end}) exceeds {} encoder layers",
                        cfg.encoder_layers
                    )));
                }
                for j in *start..*end {
                    freeze.set_prefix(&format!("encoder.layer.{j}."), ParamState::Tunable);
                }
            }
            Selector::DecoderLayers { start, end } => {
                if *end > cfg.decoder_layers {
                    return Err(Error::Config(format!(
                        "decoder.layer.[{start},{end}) exceeds {} decoder layers",
                        cfg.decoder_layers
                    )));
                }
                for j in *start..*end {
                    freeze.set_prefix(&format!("decoder.layer.{j}."), ParamState::Tunable);
                }
            }
            Selector::Group(g) => {
                freeze.set_prefix(&format!("{g}."), ParamState::Tunable);
            }
        }
    }
    Ok(())
}
