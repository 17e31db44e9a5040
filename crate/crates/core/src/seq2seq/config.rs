use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::FactorKind;

/// One attribute stream: its name and number of real labels. Every stream
/// additionally reserves label 0 for the shift position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub labels: usize,
}

impl StreamSpec {
    pub fn of(kind: FactorKind) -> Self {
        StreamSpec {
            name: kind.name().to_string(),
            labels: kind.label_count(),
        }
    }

    /// Output/embedding size including the shift label.
    pub fn head_size(&self) -> usize {
        self.labels + 1
    }

    pub fn kind(&self) -> Option<FactorKind> {
        match self.name.as_str() {
            "case" => Some(FactorKind::Case),
            "gender" => Some(FactorKind::Gender),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Longest token sequence per side; longer inputs are truncated.
    pub max_len: usize,
    pub source_factors: bool,
    pub target_factors: bool,
    pub factor_streams: Vec<StreamSpec>,
    /// Source embeddings, target embeddings and the word output layer share one matrix.
    pub tie_embeddings: bool,
    pub factor_embed_combination: String,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 64,
            ff_dim: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            max_len: 64,
            source_factors: false,
            target_factors: false,
            factor_streams: Vec::new(),
            tie_embeddings: true,
            factor_embed_combination: "sum".into(),
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Transformer-base with a deep encoder and shallow decoder.
    pub fn paper_scale(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 512,
            ff_dim: 2048,
            heads: 8,
            enc_layers: 20,
            dec_layers: 2,
            max_len: 256,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be positive".into());
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("encoder and decoder need at least one layer".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.factor_embed_combination != "sum" {
            return bad(format!(
                "unsupported factor combination `{}`",
                self.factor_embed_combination
            ));
        }
        if let Some(s) = self.factor_streams.iter().find(|s| s.labels == 0) {
            return bad(format!("stream `{}` has no labels", s.name));
        }
        if (self.source_factors || self.target_factors) && self.factor_streams.is_empty() {
            return bad("factors enabled without factor streams".into());
        }
        Ok(())
    }

    pub fn source_streams(&self) -> &[StreamSpec] {
        if self.source_factors {
            &self.factor_streams
        } else {
            &[]
        }
    }

    pub fn target_streams(&self) -> &[StreamSpec] {
        if self.target_factors {
            &self.factor_streams
        } else {
            &[]
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}
