//! Small trainable self-attention encoder over `[CLS] summary [SEP] candidate
//! [SEP]` pair sequences.
//!
//! Embeddings are token + learned position, followed by `layers` post-norm
//! blocks of multi-head self-attention and a GELU feed-forward network, each
//! wrapped in a residual connection. The summary vector is the `[CLS]` state;
//! the candidate vector is the mean of the states over the candidate span.

use std::ops::Range;

use hinsr_tensor::{Graph, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{PairSequence, TextSequence};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            hidden: 64,
            layers: 2,
            heads: 2,
            ff: 128,
            max_len,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.ff == 0 || self.max_len == 0 || self.vocab_size == 0 {
            return Err(Error::config(format!("encoder sizes must be positive: {self:?}")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// How padding is handled in the forward pass.
///
/// Real tokens always form a prefix of the sequence, and padded keys get zero
/// attention weight, so running the blocks over the prefix alone produces the
/// same values at every real position (bit for bit) at a fraction of the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Trim,
    Mask,
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct PairEncoder {
    config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
}

/// Graph nodes produced by one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// `L×d` final hidden states over the positions actually computed.
    pub hidden: Var,
    /// Attention probabilities per layer, per head (`L×L` each).
    pub attention: Vec<Vec<Var>>,
    /// Number of positions computed (the real prefix, or `N` when masking).
    pub positions: usize,
}

#[derive(Debug, Clone)]
pub struct PairEncoding {
    /// `1×d` hidden state at `[CLS]`.
    pub summary: Var,
    /// `1×d` mean hidden state over the candidate span.
    pub candidate: Var,
    pub trace: EncoderTrace,
}

impl PairEncoder {
    pub fn register<R: Rng>(config: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let tok_emb = store.insert_xavier("enc.tok_emb", config.vocab_size, d, rng)?;
        let pos_emb = store.insert_xavier("enc.pos_emb", config.max_len, d, rng)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |n: &str| format!("enc.l{l}.{n}");
            let mut mat = |n: &str, r: usize, c: usize, store: &mut ParamStore| store.insert_xavier(p(n), r, c, rng);
            let wq = mat("wq", d, d, store)?;
            let wk = mat("wk", d, d, store)?;
            let wv = mat("wv", d, d, store)?;
            let wo = mat("wo", d, d, store)?;
            let w1 = mat("w1", d, config.ff, store)?;
            let w2 = mat("w2", config.ff, d, store)?;
            layers.push(LayerIds {
                wq,
                wk,
                wv,
                wo,
                w1,
                w2,
                bq: store.insert_zeros(p("bq"), &[d])?,
                bk: store.insert_zeros(p("bk"), &[d])?,
                bv: store.insert_zeros(p("bv"), &[d])?,
                bo: store.insert_zeros(p("bo"), &[d])?,
                b1: store.insert_zeros(p("b1"), &[config.ff])?,
                b2: store.insert_zeros(p("b2"), &[d])?,
                ln1_g: store.insert_ones(p("ln1.gain"), &[d])?,
                ln1_b: store.insert_zeros(p("ln1.shift"), &[d])?,
                ln2_g: store.insert_ones(p("ln2.gain"), &[d])?,
                ln2_b: store.insert_zeros(p("ln2.shift"), &[d])?,
            });
        }
        Ok(PairEncoder {
            config,
            tok_emb,
            pos_emb,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok_emb
    }

    pub fn position_embedding(&self) -> ParamId {
        self.pos_emb
    }

    /// Runs the blocks over `ids` with key mask `keep`.
    fn run(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], keep: &[bool], padding: Padding) -> Result<EncoderTrace> {
        if ids.len() != self.config.max_len || keep.len() != ids.len() {
            return Err(Error::Encode(format!(
                "sequence length {} does not match configured length {}",
                ids.len(),
                self.config.max_len
            )));
        }
        let real = keep.iter().take_while(|&&k| k).count();
        if real == 0 || keep[real..].iter().any(|&k| k) {
            return Err(Error::Encode("real tokens must form a non-empty prefix".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Encode(format!("token id {bad} outside vocabulary")));
        }
        let len = match padding {
            Padding::Trim => real,
            Padding::Mask => ids.len(),
        };
        let keep = &keep[..len];
        let positions: Vec<usize> = (0..len).collect();

        let tok = g.param(store, self.tok_emb);
        let pos = g.param(store, self.pos_emb);
        let te = g.select_rows(tok, &ids[..len])?;
        let pe = g.select_rows(pos, &positions)?;
        let mut x = g.add(te, pe)?;

        let d = self.config.hidden;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attention = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let bind = |g: &mut Graph, id| g.param(store, id);
            let (wq, bq, wk, bk) = (bind(g, l.wq), bind(g, l.bq), bind(g, l.wk), bind(g, l.bk));
            let (wv, bv, wo, bo) = (bind(g, l.wv), bind(g, l.bv), bind(g, l.wo), bind(g, l.bo));
            let q = g.linear(x, wq, bq)?;
            let k = g.linear(x, wk, bk)?;
            let v = g.linear(x, wv, bv)?;
            let mut heads = Vec::with_capacity(self.config.heads);
            let mut probs = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = g.slice_cols(q, cols.start, cols.end)?;
                let kh = g.slice_cols(k, cols.start, cols.end)?;
                let vh = g.slice_cols(v, cols.start, cols.end)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale);
                let a = g.masked_softmax(scores, keep)?;
                heads.push(g.matmul(a, vh)?);
                probs.push(a);
            }
            attention.push(probs);
            let ctx = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
            let attn_out = g.linear(ctx, wo, bo)?;
            let res = g.add(x, attn_out)?;
            let (g1, s1) = (bind(g, l.ln1_g), bind(g, l.ln1_b));
            x = g.layer_norm(res, g1, s1, LN_EPS)?;

            let (w1, b1, w2, b2) = (bind(g, l.w1), bind(g, l.b1), bind(g, l.w2), bind(g, l.b2));
            let f = g.linear(x, w1, b1)?;
            let f = g.gelu(f);
            let f = g.linear(f, w2, b2)?;
            let res = g.add(x, f)?;
            let (g2, s2) = (bind(g, l.ln2_g), bind(g, l.ln2_b));
            x = g.layer_norm(res, g2, s2, LN_EPS)?;
        }
        debug_assert_eq!(g.value(x).shape(), &[len, d]);
        Ok(EncoderTrace {
            hidden: x,
            attention,
            positions: len,
        })
    }

    fn mean_rows(g: &mut Graph, x: Var, span: Range<usize>) -> Result<Var> {
        let rows: Vec<usize> = span.collect();
        let sel = g.select_rows(x, &rows)?;
        let m = g.mean_axis(sel, 0)?;
        let d = g.value(m).len();
        Ok(g.reshape(m, &[1, d])?)
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, pair: &PairSequence) -> Result<PairEncoding> {
        self.encode_with(g, store, pair, Padding::Trim)
    }

    pub fn encode_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pair: &PairSequence,
        padding: Padding,
    ) -> Result<PairEncoding> {
        if pair.candidate_span.is_empty() {
            return Err(Error::Encode("empty candidate span".into()));
        }
        let trace = self.run(g, store, &pair.ids, &pair.mask, padding)?;
        if pair.candidate_span.end > trace.positions.min(pair.mask.iter().filter(|&&m| m).count()) {
            return Err(Error::Encode("candidate span covers padding".into()));
        }
        let summary = g.select_rows(trace.hidden, &[0])?;
        let candidate = Self::mean_rows(g, trace.hidden, pair.candidate_span.clone())?;
        Ok(PairEncoding {
            summary,
            candidate,
            trace,
        })
    }

    /// Encodes `[CLS] text [SEP]` and returns the `1×d` `[CLS]` state.
    pub fn encode_single(&self, g: &mut Graph, store: &ParamStore, seq: &TextSequence) -> Result<Var> {
        if seq.text_span.is_empty() {
            return Err(Error::Encode("empty text".into()));
        }
        let trace = self.run(g, store, &seq.ids, &seq.mask, Padding::Trim)?;
        Ok(g.select_rows(trace.hidden, &[0])?)
    }

    /// Share of last-layer attention (averaged over heads) that each query
    /// position in `queries` places on the `summary` positions. Zero for an
    /// embedding-only encoder.
    pub fn summary_attention(g: &Graph, trace: &EncoderTrace, queries: Range<usize>, summary: Range<usize>) -> Vec<f64> {
        let Some(last) = trace.attention.last() else {
            return vec![0.0; queries.len()];
        };
        queries
            .map(|q| {
                let total: f64 = last
                    .iter()
                    .map(|&a| g.value(a).row(q)[summary.clone()].iter().sum::<f64>())
                    .sum();
                total / last.len() as f64
            })
            .collect()
    }
}
