//! The factored transformer: summed word and factor embeddings on both
//! sides, pre-norm encoder/decoder blocks, and one output head per target
//! stream projected from the shared final decoder state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::Vocab;

use super::batch::FactoredBatch;
use super::config::ModelConfig;
use super::tape::{Grads, NodeId, ParamId, ParamStore, Tape};

#[derive(Clone, Debug)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Debug)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncLayer {
    norm_attn: NormIds,
    attn: AttnIds,
    norm_ffn: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct DecLayer {
    norm_self: NormIds,
    self_attn: AttnIds,
    norm_cross: NormIds,
    cross_attn: AttnIds,
    norm_ffn: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct Layout {
    src_embed: ParamId,
    tgt_embed: ParamId,
    src_factor_embed: Vec<ParamId>,
    tgt_factor_embed: Vec<ParamId>,
    enc: Vec<EncLayer>,
    enc_norm: NormIds,
    dec: Vec<DecLayer>,
    dec_norm: NormIds,
    /// vocab × dim; equals `tgt_embed` when tied.
    word_out: ParamId,
    word_bias: ParamId,
    factor_out: Vec<(ParamId, ParamId)>,
}

enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

struct Builder<'a> {
    store: ParamStore,
    seed: u64,
    config: &'a ModelConfig,
}

/// FNV-1a, so parameter init depends only on (seed, name).
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.wrapping_mul(0x9E3779B97F4A7C15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Builder<'_> {
    fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> ParamId {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let value = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::Embedding => {
                let a = (3.0 / self.config.embed_dim as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
            }
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
            }
        };
        self.store.add(name, value)
    }

    fn norm(&mut self, prefix: &str) -> NormIds {
        let d = self.config.embed_dim;
        NormIds {
            gamma: self.add(&format!("{prefix}.gamma"), 1, d, Init::Ones),
            beta: self.add(&format!("{prefix}.beta"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str) -> AttnIds {
        let d = self.config.embed_dim;
        AttnIds {
            wq: self.add(&format!("{prefix}.wq"), d, d, Init::Xavier),
            wk: self.add(&format!("{prefix}.wk"), d, d, Init::Xavier),
            wv: self.add(&format!("{prefix}.wv"), d, d, Init::Xavier),
            wo: self.add(&format!("{prefix}.wo"), d, d, Init::Xavier),
        }
    }

    fn ffn(&mut self, prefix: &str) -> FfnIds {
        let (d, f) = (self.config.embed_dim, self.config.ff_dim);
        FfnIds {
            w1: self.add(&format!("{prefix}.w1"), d, f, Init::Xavier),
            b1: self.add(&format!("{prefix}.b1"), 1, f, Init::Zeros),
            w2: self.add(&format!("{prefix}.w2"), f, d, Init::Xavier),
            b2: self.add(&format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }

    fn build(mut self) -> (ParamStore, Layout) {
        let c = self.config;
        let (v, d) = (c.vocab_size, c.embed_dim);
        let (src_embed, tgt_embed) = if c.tie_embeddings {
            let e = self.add("embed.word", v, d, Init::Embedding);
            (e, e)
        } else {
            (
                self.add("embed.src", v, d, Init::Embedding),
                self.add("embed.tgt", v, d, Init::Embedding),
            )
        };
        let src_factor_embed = c
            .source_streams()
            .iter()
            .map(|s| self.add(&format!("embed.src_factor.{}", s.name), s.head_size(), d, Init::Embedding))
            .collect();
        let tgt_factor_embed = c
            .target_streams()
            .iter()
            .map(|s| self.add(&format!("embed.tgt_factor.{}", s.name), s.head_size(), d, Init::Embedding))
            .collect();
        let enc = (0..c.enc_layers)
            .map(|l| EncLayer {
                norm_attn: self.norm(&format!("enc.{l}.norm_attn")),
                attn: self.attn(&format!("enc.{l}.attn")),
                norm_ffn: self.norm(&format!("enc.{l}.norm_ffn")),
                ffn: self.ffn(&format!("enc.{l}.ffn")),
            })
            .collect();
        let enc_norm = self.norm("enc.norm");
        let dec = (0..c.dec_layers)
            .map(|l| DecLayer {
                norm_self: self.norm(&format!("dec.{l}.norm_self")),
                self_attn: self.attn(&format!("dec.{l}.self_attn")),
                norm_cross: self.norm(&format!("dec.{l}.norm_cross")),
                cross_attn: self.attn(&format!("dec.{l}.cross_attn")),
                norm_ffn: self.norm(&format!("dec.{l}.norm_ffn")),
                ffn: self.ffn(&format!("dec.{l}.ffn")),
            })
            .collect();
        let dec_norm = self.norm("dec.norm");
        let word_out = if c.tie_embeddings {
            tgt_embed
        } else {
            self.add("out.word.weight", v, d, Init::Xavier)
        };
        let word_bias = self.add("out.word.bias", 1, v, Init::Zeros);
        let factor_out = c
            .target_streams()
            .iter()
            .map(|s| {
                (
                    self.add(&format!("out.factor.{}.weight", s.name), d, s.head_size(), Init::Xavier),
                    self.add(&format!("out.factor.{}.bias", s.name), 1, s.head_size(), Init::Zeros),
                )
            })
            .collect();
        let layout = Layout {
            src_embed,
            tgt_embed,
            src_factor_embed,
            tgt_factor_embed,
            enc,
            enc_norm,
            dec,
            dec_norm,
            word_out,
            word_bias,
            factor_out,
        };
        (self.store, layout)
    }
}

/// Scalar parameter count implied by a configuration.
pub fn param_count(c: &ModelConfig) -> usize {
    let (v, d, f) = (c.vocab_size, c.embed_dim, c.ff_dim);
    let norm = 2 * d;
    let attn = 4 * d * d;
    let ffn = d * f + f + f * d + d;
    let embeds = if c.tie_embeddings { v * d } else { 2 * v * d + v * d };
    let factor_in: usize = c
        .source_streams()
        .iter()
        .chain(c.target_streams())
        .map(|s| s.head_size() * d)
        .sum();
    let factor_out: usize = c
        .target_streams()
        .iter()
        .map(|s| d * s.head_size() + s.head_size())
        .sum();
    embeds
        + factor_in
        + c.enc_layers * (2 * norm + attn + ffn)
        + norm
        + c.dec_layers * (3 * norm + 2 * attn + ffn)
        + norm
        + v
        + factor_out
}

pub fn sinusoidal_positions(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Summed per-stream cross-entropy, averaged over non-pad positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Word stream first, then target factor streams.
    pub per_stream: Vec<f64>,
    pub positions: usize,
}

#[derive(Clone, Debug)]
pub struct FactoredSeq2Seq {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
    positions: Array2<f64>,
}

impl FactoredSeq2Seq {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (params, layout) = Builder {
            store: ParamStore::default(),
            seed: config.seed,
            config: &config,
        }
        .build();
        let positions = sinusoidal_positions(config.max_len + 2, config.embed_dim);
        Ok(FactoredSeq2Seq {
            config,
            params,
            layout,
            positions,
        })
    }

    pub fn stream_count(&self) -> usize {
        1 + self.config.target_streams().len()
    }

    pub fn word_embedding(&self) -> &Array2<f64> {
        self.params.get(self.layout.tgt_embed)
    }

    pub fn word_embedding_mut(&mut self) -> &mut Array2<f64> {
        self.params.get_mut(self.layout.tgt_embed)
    }

    pub fn source_embedding(&self) -> &Array2<f64> {
        self.params.get(self.layout.src_embed)
    }

    /// vocab × dim output projection of the word head.
    pub fn word_output_weight(&self) -> &Array2<f64> {
        self.params.get(self.layout.word_out)
    }

    pub fn word_output_weight_mut(&mut self) -> &mut Array2<f64> {
        self.params.get_mut(self.layout.word_out)
    }

    pub fn source_factor_embedding(&self, stream: usize) -> Option<&Array2<f64>> {
        self.layout.src_factor_embed.get(stream).map(|&p| self.params.get(p))
    }

    pub fn target_factor_embedding(&self, stream: usize) -> Option<&Array2<f64>> {
        self.layout.tgt_factor_embed.get(stream).map(|&p| self.params.get(p))
    }

    /// Sets every factor embedding table (both sides) to zero.
    pub fn zero_factor_embeddings(&mut self) {
        for &p in self.layout.src_factor_embed.iter().chain(&self.layout.tgt_factor_embed) {
            self.params.get_mut(p).fill(0.0);
        }
    }

    fn embed(&self, t: &mut Tape, table: ParamId, factor_tables: &[ParamId], ids: &[u32], factors: &[Vec<u32>]) -> NodeId {
        let tn = t.param(table);
        let mut x = t.gather(tn, ids);
        for (&ft, fids) in factor_tables.iter().zip(factors) {
            let fnode = t.param(ft);
            let fe = t.gather(fnode, fids);
            x = t.add(x, fe);
        }
        let x = t.scale(x, (self.config.embed_dim as f64).sqrt());
        let pos = self.position_rows(ids.len());
        let pos = t.constant(pos);
        t.add(x, pos)
    }

    fn position_rows(&self, len: usize) -> Array2<f64> {
        if len <= self.positions.nrows() {
            self.positions.slice(ndarray::s![..len, ..]).to_owned()
        } else {
            sinusoidal_positions(len, self.config.embed_dim)
        }
    }

    fn norm(&self, t: &mut Tape, x: NodeId, ids: &NormIds) -> NodeId {
        let g = t.param(ids.gamma);
        let b = t.param(ids.beta);
        t.layer_norm(x, g, b)
    }

    fn attention(&self, t: &mut Tape, query: NodeId, memory: NodeId, ids: &AttnIds, causal: bool) -> NodeId {
        let (wq, wk, wv, wo) = (t.param(ids.wq), t.param(ids.wk), t.param(ids.wv), t.param(ids.wo));
        let q = t.matmul(query, wq);
        let k = t.matmul(memory, wk);
        let v = t.matmul(memory, wv);
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let heads: Vec<NodeId> = (0..self.config.heads)
            .map(|h| {
                let qh = t.slice_cols(q, h * hd, hd);
                let kh = t.slice_cols(k, h * hd, hd);
                let vh = t.slice_cols(v, h * hd, hd);
                let scores = t.matmul_bt(qh, kh);
                let scores = t.scale(scores, scale);
                let p = t.softmax(scores, causal);
                t.matmul(p, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
        t.matmul(cat, wo)
    }

    fn feed_forward(&self, t: &mut Tape, x: NodeId, ids: &FfnIds) -> NodeId {
        let (w1, b1, w2, b2) = (t.param(ids.w1), t.param(ids.b1), t.param(ids.w2), t.param(ids.b2));
        let h = t.matmul(x, w1);
        let h = t.add_row(h, b1);
        let h = t.relu(h);
        let h = t.matmul(h, w2);
        t.add_row(h, b2)
    }

    /// Encoder output, `len × dim`.
    pub(crate) fn encode(&self, t: &mut Tape, src: &[u32], src_factors: &[Vec<u32>]) -> NodeId {
        let mut x = self.embed(t, self.layout.src_embed, &self.layout.src_factor_embed, src, src_factors);
        for layer in &self.layout.enc {
            let h = self.norm(t, x, &layer.norm_attn);
            let a = self.attention(t, h, h, &layer.attn, false);
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.norm_ffn);
            let f = self.feed_forward(t, h, &layer.ffn);
            x = t.add(x, f);
        }
        self.norm(t, x, &self.layout.enc_norm)
    }

    /// Final decoder state, `len × dim`, for decoder inputs `words` and
    /// (already shifted) input factor labels.
    pub(crate) fn decode(&self, t: &mut Tape, memory: NodeId, words: &[u32], factors: &[Vec<u32>]) -> NodeId {
        let mut x = self.embed(t, self.layout.tgt_embed, &self.layout.tgt_factor_embed, words, factors);
        for layer in &self.layout.dec {
            let h = self.norm(t, x, &layer.norm_self);
            let a = self.attention(t, h, h, &layer.self_attn, true);
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.norm_cross);
            let a = self.attention(t, h, memory, &layer.cross_attn, false);
            x = t.add(x, a);
            let h = self.norm(t, x, &layer.norm_ffn);
            let f = self.feed_forward(t, h, &layer.ffn);
            x = t.add(x, f);
        }
        self.norm(t, x, &self.layout.dec_norm)
    }

    /// Logits per stream: word head first, then each target factor head.
    pub(crate) fn heads(&self, t: &mut Tape, h: NodeId) -> Vec<NodeId> {
        let w = t.param(self.layout.word_out);
        let b = t.param(self.layout.word_bias);
        let logits = t.matmul_bt(h, w);
        let mut out = vec![t.add_row(logits, b)];
        for &(w, b) in &self.layout.factor_out {
            let (w, b) = (t.param(w), t.param(b));
            let l = t.matmul(h, w);
            out.push(t.add_row(l, b));
        }
        out
    }

    pub fn check_batch(&self, batch: &FactoredBatch) -> Result<()> {
        let c = &self.config;
        if batch.src_factors.len() != c.source_streams().len() {
            return Err(Error::Shape(format!(
                "batch has {} source factor streams, model expects {}",
                batch.src_factors.len(),
                c.source_streams().len()
            )));
        }
        if batch.tgt_factors.len() != c.target_streams().len() {
            return Err(Error::Shape(format!(
                "batch has {} target factor streams, model expects {}",
                batch.tgt_factors.len(),
                c.target_streams().len()
            )));
        }
        let v = c.vocab_size as u32;
        if batch.src_words.iter().chain(batch.tgt_words.iter()).any(|&id| id >= v) {
            return Err(Error::Shape(format!("word id outside vocabulary of {v}")));
        }
        for (m, s) in batch.src_factors.iter().zip(c.source_streams()) {
            if m.iter().any(|&id| id as usize >= s.head_size()) {
                return Err(Error::Shape(format!("source factor id outside stream `{}`", s.name)));
            }
        }
        for (m, s) in batch.tgt_factors.iter().zip(c.target_streams()) {
            if m.iter().any(|&id| id as usize >= s.head_size()) {
                return Err(Error::Shape(format!("target factor id outside stream `{}`", s.name)));
            }
        }
        Ok(())
    }

    /// Per-stream logit nodes and cross-entropy nodes for batch row `b`.
    fn example(&self, t: &mut Tape, batch: &FactoredBatch, b: usize) -> (Vec<NodeId>, Vec<NodeId>) {
        let mem = self.encode(t, &batch.source_ids(b), &batch.source_factor_ids(b));
        let h = self.decode(t, mem, &batch.decoder_input_words(b), &batch.decoder_input_factors(b));
        let logits = self.heads(t, h);
        let mut targets = vec![batch.output_words(b)];
        targets.extend(batch.output_factors(b));
        let ces = logits
            .iter()
            .zip(&targets)
            .map(|(&l, tg)| t.cross_entropy(l, tg))
            .collect();
        (logits, ces)
    }

    /// Logits per stream, `batch × tgt_len × labels`; pad positions are zero.
    pub fn forward(&self, batch: &FactoredBatch) -> Result<Vec<Array3<f64>>> {
        self.check_batch(batch)?;
        let t_len = batch.tgt_mask.ncols();
        let sizes: Vec<usize> = std::iter::once(self.config.vocab_size)
            .chain(self.config.target_streams().iter().map(|s| s.head_size()))
            .collect();
        let mut out: Vec<Array3<f64>> = sizes
            .iter()
            .map(|&n| Array3::zeros((batch.len(), t_len, n)))
            .collect();
        for b in 0..batch.len() {
            let mut t = Tape::new(&self.params);
            let (logits, _) = self.example(&mut t, batch, b);
            for (o, &l) in out.iter_mut().zip(&logits) {
                let v = t.value(l);
                o.slice_mut(ndarray::s![b, ..v.nrows(), ..]).assign(&v);
            }
        }
        Ok(out)
    }

    pub fn loss(&self, batch: &FactoredBatch) -> Result<LossReport> {
        self.run(batch, false).map(|(r, _)| r)
    }

    /// Loss and gradients of the mean loss.
    pub fn loss_and_grads(&self, batch: &FactoredBatch) -> Result<(LossReport, Grads)> {
        self.run(batch, true)
    }

    fn run(&self, batch: &FactoredBatch, with_grads: bool) -> Result<(LossReport, Grads)> {
        self.check_batch(batch)?;
        let positions = batch.positions();
        let mut per_stream = vec![0.0; self.stream_count()];
        let mut grads = Grads::zeros_like(&self.params);
        let norm = if positions == 0 { 0.0 } else { 1.0 / positions as f64 };
        for b in 0..batch.len() {
            let mut t = Tape::new(&self.params);
            let (_, ces) = self.example(&mut t, batch, b);
            for (acc, &ce) in per_stream.iter_mut().zip(&ces) {
                *acc += t.scalar(ce);
            }
            if with_grads {
                let seeds: Vec<_> = ces.iter().map(|&c| (c, norm)).collect();
                grads.accumulate(t.backward(&seeds));
            }
        }
        per_stream.iter_mut().for_each(|x| *x *= norm);
        Ok((
            LossReport {
                total: per_stream.iter().sum(),
                per_stream,
                positions,
            },
            grads,
        ))
    }

    /// Encoder output for one source sentence.
    pub fn encode_source(&self, src: &[u32], src_factors: &[Vec<u32>]) -> Array2<f64> {
        let mut t = Tape::new(&self.params);
        let m = self.encode(&mut t, src, src_factors);
        t.value(m).to_owned()
    }

    /// Logits per stream at every decoder position given a precomputed
    /// encoder output.
    pub fn decoder_logits(&self, memory: &Array2<f64>, words: &[u32], factors: &[Vec<u32>]) -> Vec<Array2<f64>> {
        let mut t = Tape::new(&self.params);
        let m = t.constant(memory.clone());
        let h = self.decode(&mut t, m, words, factors);
        self.heads(&mut t, h)
            .into_iter()
            .map(|l| t.value(l).to_owned())
            .collect()
    }

    pub fn save(&self, path: &Path, vocab: &Vocab, extra: serde_json::Value) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, vocab, extra)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Vocab, serde_json::Value)> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to(&self, w: &mut impl Write, vocab: &Vocab, extra: serde_json::Value) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            vocab: vocab.clone(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.values())
                .map(|(n, v)| TensorInfo {
                    name: n.clone(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                })
                .collect(),
            extra,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self.params.values() {
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<(Self, Vocab, serde_json::Value)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Invalid("not a model checkpoint".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        let mut model = FactoredSeq2Seq::new(header.config)?;
        if header.tensors.len() != model.params.len() {
            return Err(Error::Invalid("tensor count does not match config".into()));
        }
        for (id, info) in header.tensors.iter().enumerate() {
            let expected = model.params.get(id);
            if info.name != model.params.name(id) || (info.rows, info.cols) != expected.dim() {
                return Err(Error::Invalid(format!("unexpected tensor `{}`", info.name)));
            }
            let mut buf = vec![0u8; info.rows * info.cols * 8];
            r.read_exact(&mut buf)?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *model.params.get_mut(id) = Array2::from_shape_vec((info.rows, info.cols), data)
                .map_err(|e| Error::Invalid(e.to_string()))?;
        }
        Ok((model, header.vocab, header.extra))
    }
}

const MAGIC: &[u8; 8] = b"FNMTCKP1";

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorInfo>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorize::{FactorKind, SHIFT_LABEL};
    use crate::seq2seq::batch::FactoredBatch;
    use crate::seq2seq::config::StreamSpec;
    use crate::subword::{BOS, EOS, PAD};
    use ndarray::array;

    fn tiny(factors: bool, tied: bool) -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 8,
            ff_dim: 16,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            max_len: 10,
            source_factors: factors,
            target_factors: factors,
            factor_streams: vec![StreamSpec::of(FactorKind::Case)],
            tie_embeddings: tied,
            ..Default::default()
        }
    }

    /// One pair: source [5,6,7], target [8,9] with case labels.
    fn batch(factors: bool) -> FactoredBatch {
        let nf = usize::from(factors);
        FactoredBatch {
            src_words: array![[5, 6, 7, EOS]],
            src_factors: vec![array![[1, 3, 3, SHIFT_LABEL]]; nf],
            src_lens: vec![4],
            tgt_words: array![[BOS, 8, 9, EOS]],
            tgt_factors: vec![array![[SHIFT_LABEL, 1, 3]]; nf],
            tgt_mask: array![[true, true, true]],
            tgt_lens: vec![3],
            truncated: 0,
            unknown: 0,
        }
    }

    #[test]
    fn param_count_is_a_function_of_config() {
        for (f, t) in [(false, false), (false, true), (true, false), (true, true)] {
            let c = tiny(f, t);
            let m = FactoredSeq2Seq::new(c.clone()).unwrap();
            assert_eq!(m.params.scalar_count(), param_count(&c));
        }
    }

    #[test]
    fn zero_layer_decoder_rejected() {
        let c = ModelConfig { dec_layers: 0, ..tiny(false, true) };
        assert!(FactoredSeq2Seq::new(c).is_err());
    }

    #[test]
    fn logits_shapes() {
        let m = FactoredSeq2Seq::new(tiny(true, true)).unwrap();
        let out = m.forward(&batch(true)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].dim(), (1, 3, 12));
        assert_eq!(out[1].dim(), (1, 3, 5));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = FactoredSeq2Seq::new(tiny(true, true)).unwrap();
        assert!(matches!(m.forward(&batch(false)), Err(Error::Shape(_))));
        let mut b = batch(true);
        b.tgt_words[[0, 1]] = 99;
        assert!(matches!(m.loss(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_factor_embeddings_match_factorless_forward() {
        let mut with = FactoredSeq2Seq::new(tiny(true, true)).unwrap();
        with.zero_factor_embeddings();
        let without = FactoredSeq2Seq::new(tiny(false, true)).unwrap();
        let a = with.forward(&batch(true)).unwrap();
        let b = without.forward(&batch(false)).unwrap();
        assert_eq!(a[0], b[0]);
        // word component of the factored loss equals the baseline loss
        let la = with.loss(&batch(true)).unwrap();
        let lb = without.loss(&batch(false)).unwrap();
        assert_eq!(la.per_stream[0], lb.total);
    }

    #[test]
    fn uniform_logits_give_log_label_count() {
        let mut m = FactoredSeq2Seq::new(ModelConfig {
            vocab_size: 4,
            ..tiny(true, false)
        })
        .unwrap();
        let word_out = m.params.id("out.word.weight").unwrap();
        m.params.get_mut(word_out).fill(0.0);
        let fw = m.params.id("out.factor.case.weight").unwrap();
        m.params.get_mut(fw).fill(0.0);
        let b = FactoredBatch {
            src_words: array![[EOS]],
            src_factors: vec![array![[SHIFT_LABEL]]],
            src_lens: vec![1],
            tgt_words: array![[BOS, EOS]],
            tgt_factors: vec![array![[SHIFT_LABEL]]],
            tgt_mask: array![[true]],
            tgt_lens: vec![1],
            truncated: 0,
            unknown: 0,
        };
        let r = m.loss(&b).unwrap();
        assert!((r.per_stream[0] - 4f64.ln()).abs() < 1e-12);
        assert!((r.total - (4f64.ln() + 5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn tied_storage_is_shared() {
        let mut m = FactoredSeq2Seq::new(tiny(false, true)).unwrap();
        m.word_embedding_mut()[[5, 0]] = 42.0;
        assert_eq!(m.word_output_weight()[[5, 0]], 42.0);
        assert_eq!(m.source_embedding()[[5, 0]], 42.0);
        m.word_output_weight_mut()[[6, 1]] = -3.0;
        assert_eq!(m.word_embedding()[[6, 1]], -3.0);

        let mut u = FactoredSeq2Seq::new(tiny(false, false)).unwrap();
        u.word_embedding_mut()[[5, 0]] = 42.0;
        assert_ne!(u.word_output_weight()[[5, 0]], 42.0);
    }

    #[test]
    fn causal_decoder() {
        let m = FactoredSeq2Seq::new(tiny(true, true)).unwrap();
        let base = m.forward(&batch(true)).unwrap();
        let mut b = batch(true);
        b.tgt_words[[0, 2]] = 10; // decoder input position 2
        b.tgt_factors[0][[0, 1]] = 2; // input factor position 2
        let changed = m.forward(&b).unwrap();
        for s in 0..2 {
            for pos in 0..2 {
                assert_eq!(
                    base[s].slice(ndarray::s![0, pos, ..]),
                    changed[s].slice(ndarray::s![0, pos, ..])
                );
            }
            assert_ne!(
                base[s].slice(ndarray::s![0, 2, ..]),
                changed[s].slice(ndarray::s![0, 2, ..])
            );
        }
    }

    #[test]
    fn padding_does_not_change_loss() {
        let m = FactoredSeq2Seq::new(tiny(true, true)).unwrap();
        let mut padded = batch(true);
        padded.src_words = array![[5, 6, 7, EOS, PAD, PAD]];
        padded.src_factors = vec![array![[1, 3, 3, SHIFT_LABEL, 0, 0]]];
        assert_eq!(m.loss(&padded).unwrap(), m.loss(&batch(true)).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = FactoredSeq2Seq::new(tiny(true, false)).unwrap();
        let vocab = Vocab::from_symbols(["a", "b"]);
        let mut buf = Vec::new();
        m.write_to(&mut buf, &vocab, serde_json::json!({"k": 1})).unwrap();
        let (back, v, extra) = FactoredSeq2Seq::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
        assert_eq!(v, vocab);
        assert_eq!(extra["k"], 1);
        for (a, b) in back.params.values().iter().zip(m.params.values()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
