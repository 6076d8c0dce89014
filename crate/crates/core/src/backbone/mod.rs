//! Numeric substrate of the model: configuration, the parameter set, the
//! transformer encoders and the hierarchical document encoding.

mod encode;
mod encoder;
mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encode::{encode_document, DocInput, EncodedDocument};
pub use encoder::{run_encoder, sinusoidal_positions};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, GradientFailure};

use crate::corpus::EventSchema;
use crate::error::{Error, Result};
use crate::graph::{ParamId, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Zero layers makes the encoder the identity map.
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

/// Switches that remove one model component each. All on by default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Subtract the summarized memory from the document vector before detection.
    pub memory_in_detection: bool,
    /// Gate sentence vectors by the memory before locating.
    pub redundancy_gate: bool,
    /// Build role queries through the memory encoder (otherwise the raw role embedding).
    pub query_construction: bool,
    /// Add the query to character vectors before copying.
    pub query_enrichment: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self { memory_in_detection: true, redundancy_gate: true, query_construction: true, query_enrichment: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub vocab_size: usize,
    pub roles_per_type: Vec<usize>,
    pub sentence_encoder: EncoderConfig,
    pub document_encoder: EncoderConfig,
    pub memory_encoder: EncoderConfig,
    /// Sinusoidal positions for the sentence and document encoders. The
    /// memory encoder never uses positions.
    pub positional: bool,
    #[serde(default)]
    pub ablations: Ablations,
    pub seed: u64,
}

impl ModelConfig {
    /// Uniform encoder shape: `layers` layers of `heads` heads and a `4·dim`
    /// feed-forward width for all three encoders.
    pub fn new(dim: usize, layers: usize, heads: usize, vocab_size: usize, schema: &EventSchema) -> Self {
        let enc = EncoderConfig { layers, heads, ff_dim: 4 * dim };
        Self {
            dim,
            vocab_size,
            roles_per_type: (0..schema.num_types()).map(|t| schema.num_roles(t)).collect(),
            sentence_encoder: enc.clone(),
            document_encoder: enc.clone(),
            memory_encoder: enc,
            positional: true,
            ablations: Ablations::default(),
            seed: 0,
        }
    }

    /// CPU-friendly default: 64 dimensions, 2 layers, 4 heads.
    pub fn desk(vocab_size: usize, schema: &EventSchema) -> Self {
        Self::new(64, 2, 4, vocab_size, schema)
    }

    /// Full-width preset with 768-dimensional characters.
    pub fn wide(vocab_size: usize, schema: &EventSchema) -> Self {
        Self::new(768, 2, 12, vocab_size, schema)
    }

    pub fn num_types(&self) -> usize {
        self.roles_per_type.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("model dimension must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold at least PAD and UNK".into()));
        }
        if self.roles_per_type.is_empty() || self.roles_per_type.contains(&0) {
            return Err(Error::Config("every event type needs at least one role".into()));
        }
        for (name, e) in [("sentence", &self.sentence_encoder), ("document", &self.document_encoder), ("memory", &self.memory_encoder)] {
            if e.layers > 0 && (e.heads == 0 || self.dim % e.heads != 0) {
                return Err(Error::Config(format!("{name} encoder: {} heads do not divide dimension {}", e.heads, self.dim)));
            }
            if e.layers > 0 && e.ff_dim == 0 {
                return Err(Error::Config(format!("{name} encoder: feed-forward width must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams {
    /// `d × d_head` projections, applied as `x · W`.
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    /// `d_head × d`
    pub output: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub attn_bias: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    /// `d × ff`
    pub ff_in: ParamId,
    pub ff_in_bias: ParamId,
    /// `ff × d`
    pub ff_out: ParamId,
    pub ff_out_bias: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.layers.first().map_or(0, |l| l.heads.len())
    }
}

/// Handles of every trainable array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIds {
    /// `|V| × d`
    pub char_embed: ParamId,
    /// One row per event type.
    pub type_embed: ParamId,
    /// One row per (type, role); rows of type `t` start at `role_offset[t]`.
    pub role_embed: ParamId,
    pub role_offset: Vec<usize>,
    pub sentence_encoder: EncoderParams,
    pub document_encoder: EncoderParams,
    pub memory_encoder: EncoderParams,
    /// `1 × d` detection read-out.
    pub w_s: ParamId,
    /// `d × d`, applied to the redundancy-aware document vector.
    pub w_d: ParamId,
    /// `d × d`, applied to the type embedding.
    pub w_t: ParamId,
    /// `d × 2d` redundancy gate.
    pub w_l: ParamId,
    /// `1 × d` location target meaning "no argument for this role".
    pub null_sentence: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub ids: ParamIds,
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
    dim: usize,
}

impl Builder {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let a = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-a..a)).collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    fn constant(&mut self, name: String, cols: usize, value: f64) -> ParamId {
        self.store.add(name, Matrix::filled(1, cols, value))
    }

    fn encoder(&mut self, prefix: &str, cfg: &EncoderConfig) -> EncoderParams {
        let d = self.dim;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                let dh = d / cfg.heads;
                let heads = (0..cfg.heads)
                    .map(|h| HeadParams {
                        query: self.uniform(format!("{p}.head{h}.query"), d, dh, d),
                        key: self.uniform(format!("{p}.head{h}.key"), d, dh, d),
                        value: self.uniform(format!("{p}.head{h}.value"), d, dh, d),
                        output: self.uniform(format!("{p}.head{h}.output"), dh, d, d),
                    })
                    .collect();
                LayerParams {
                    heads,
                    attn_bias: self.constant(format!("{p}.attn_bias"), d, 0.0),
                    norm1_gain: self.constant(format!("{p}.norm1.gain"), d, 1.0),
                    norm1_bias: self.constant(format!("{p}.norm1.bias"), d, 0.0),
                    ff_in: self.uniform(format!("{p}.ff.in"), d, cfg.ff_dim, d),
                    ff_in_bias: self.constant(format!("{p}.ff.in_bias"), cfg.ff_dim, 0.0),
                    ff_out: self.uniform(format!("{p}.ff.out"), cfg.ff_dim, d, cfg.ff_dim),
                    ff_out_bias: self.constant(format!("{p}.ff.out_bias"), d, 0.0),
                    norm2_gain: self.constant(format!("{p}.norm2.gain"), d, 1.0),
                    norm2_bias: self.constant(format!("{p}.norm2.bias"), d, 0.0),
                }
            })
            .collect();
        EncoderParams { layers }
    }
}

impl ModelParams {
    /// Fresh parameters, deterministic in `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut b = Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(config.seed), dim: d };
        let char_embed = b.uniform("char_embed".into(), config.vocab_size, d, d);
        let type_embed = b.uniform("type_embed".into(), config.num_types(), d, d);
        let total_roles: usize = config.roles_per_type.iter().sum();
        let role_embed = b.uniform("role_embed".into(), total_roles, d, d);
        let role_offset = config
            .roles_per_type
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        let sentence_encoder = b.encoder("sentence_encoder", &config.sentence_encoder);
        let document_encoder = b.encoder("document_encoder", &config.document_encoder);
        let memory_encoder = b.encoder("memory_encoder", &config.memory_encoder);
        let w_s = b.uniform("w_s".into(), 1, d, d);
        let w_d = b.uniform("w_d".into(), d, d, d);
        let w_t = b.uniform("w_t".into(), d, d, d);
        let w_l = b.uniform("w_l".into(), d, 2 * d, 2 * d);
        let null_sentence = b.uniform("null_sentence".into(), 1, d, d);
        let ids = ParamIds {
            char_embed,
            type_embed,
            role_embed,
            role_offset,
            sentence_encoder,
            document_encoder,
            memory_encoder,
            w_s,
            w_d,
            w_t,
            w_l,
            null_sentence,
        };
        Ok(Self { config, store: b.store, ids })
    }

    /// Rebuilds parameters from named arrays, checking names and shapes
    /// against what `config` implies.
    pub fn from_named(config: ModelConfig, arrays: Vec<(String, Matrix)>) -> Result<Self> {
        let mut params = Self::init(config)?;
        if arrays.len() != params.store.len() {
            return Err(Error::Checkpoint(format!("expected {} arrays, found {}", params.store.len(), arrays.len())));
        }
        for (name, m) in arrays {
            let id = params.store.id(&name).ok_or_else(|| Error::Checkpoint(format!("unexpected array {name:?}")))?;
            let slot = params.store.get_mut(id);
            if slot.shape() != m.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", m.shape(), slot.shape())));
            }
            *slot = m;
        }
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn role_row(&self, event_type: usize, role: usize) -> usize {
        self.ids.role_offset[event_type] + role
    }

    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn all_finite(&self) -> bool {
        self.store.iter().all(|(_, _, m)| m.is_finite())
    }
}
