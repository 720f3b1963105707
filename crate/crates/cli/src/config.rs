use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use condcl_core::encoder::{load_embeddings, MlpEncoder};
use condcl_core::{EncoderProvider, TrainConfig};

use crate::error::CliError;

/// Encoder selection. `store` reads a JSONL embedding file; the others
/// synthesize vectors of width `nh`.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncoderSpec {
    #[default]
    Store,
    Hashing {
        #[serde(default)]
        seed: u64,
    },
    Mlp {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_layers")]
        layers: usize,
    },
}

fn default_layers() -> usize {
    4
}

impl EncoderSpec {
    pub fn parse(kind: &str, seed: u64) -> Result<Self, CliError> {
        match kind {
            "store" => Ok(EncoderSpec::Store),
            "hashing" => Ok(EncoderSpec::Hashing { seed }),
            "mlp" => Ok(EncoderSpec::Mlp {
                seed,
                layers: default_layers(),
            }),
            other => Err(CliError::usage(format!(
                "unknown encoder {other:?}; expected store|hashing|mlp"
            ))),
        }
    }
}

/// Contents of a `--config` file. Every field is optional and flags win.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub encoder: EncoderSpec,
    pub embeddings: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
    }

    pub fn provider(&self, dim: usize) -> Result<EncoderProvider, CliError> {
        match &self.encoder {
            EncoderSpec::Store => {
                let path = self
                    .embeddings
                    .as_deref()
                    .ok_or_else(|| CliError::usage("store encoder needs --embeddings"))?;
                let store = load_embeddings(require_file(path)?).map_err(CliError::input)?;
                if store.dim() != dim {
                    return Err(CliError::usage(format!(
                        "embedding dim {} does not match nh {dim}",
                        store.dim()
                    )));
                }
                Ok(EncoderProvider::Store(store))
            }
            EncoderSpec::Hashing { seed } => Ok(EncoderProvider::Hashing { dim, seed: *seed }),
            EncoderSpec::Mlp { seed, layers } => Ok(EncoderProvider::Mlp(
                MlpEncoder::new(dim, *layers, *seed).map_err(CliError::input)?,
            )),
        }
    }
}

pub fn require_file(path: &Path) -> Result<&Path, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::usage(format!("no such file: {}", path.display())))
    }
}

pub fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("missing {what}")))?;
    require_file(p)
}
