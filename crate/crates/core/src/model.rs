//! Hierarchical interaction network: pair encodings are fused across
//! candidates by a bidirectional GRU, pooled into a segment-level summary
//! vector, attended over with that summary, and decoded into a sentiment
//! distribution. A separate feedback head reads the same document vector and
//! supplies the rewards used by the rethinking trainer.

use std::fmt;
use std::str::FromStr;

use hinsr_tensor::graph::softmax_slice;
use hinsr_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, PairEncoder, PairEncoding};
use crate::error::{Error, Result};
use crate::pipeline::PreparedSample;

/// Which parts of the network are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pair encoding, Bi-GRU, segment summary, document attention.
    Full,
    /// Attention replaced by an unweighted mean of the GRU states.
    NoDoc,
    /// No GRU and no attention: mean of a linear projection of the pair vectors.
    NoDocSeg,
    /// Summary and whole document encoded separately and concatenated.
    NoInteract,
    /// Document encoded alone.
    NoSummary,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::NoDoc, Mode::NoDocSeg, Mode::NoInteract, Mode::NoSummary];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoDoc => "no_doc",
            Mode::NoDocSeg => "no_doc_seg",
            Mode::NoInteract => "no_interact",
            Mode::NoSummary => "no_summary",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gru_hidden: usize,
    pub classes: usize,
    pub candidates: usize,
    /// Dropout on the Bi-GRU inputs during training.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.gru_hidden == 0 {
            return Err(Error::config("GRU hidden size must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.candidates == 0 {
            return Err(Error::config("number of candidates must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of the segment states and document vector.
    pub fn state_dim(&self) -> usize {
        2 * self.gru_hidden
    }
}

/// Parameter ids of one GRU direction.
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

/// One GRU direction bound into a graph. Weights act on row vectors:
/// `x · W` with `W: in×hidden`, `h · U` with `U: hidden×hidden`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruIds {
    fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = |s: &str| format!("{prefix}.{s}");
        Ok(GruIds {
            w_z: store.insert_xavier(n("w_z"), input, hidden, rng)?,
            u_z: store.insert_xavier(n("u_z"), hidden, hidden, rng)?,
            b_z: store.insert_zeros(n("b_z"), &[hidden])?,
            w_r: store.insert_xavier(n("w_r"), input, hidden, rng)?,
            u_r: store.insert_xavier(n("u_r"), hidden, hidden, rng)?,
            b_r: store.insert_zeros(n("b_r"), &[hidden])?,
            w_h: store.insert_xavier(n("w_h"), input, hidden, rng)?,
            u_h: store.insert_xavier(n("u_h"), hidden, hidden, rng)?,
            b_h: store.insert_zeros(n("b_h"), &[hidden])?,
        })
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> GruVars {
        GruVars {
            w_z: g.param(store, self.w_z),
            u_z: g.param(store, self.u_z),
            b_z: g.param(store, self.b_z),
            w_r: g.param(store, self.w_r),
            u_r: g.param(store, self.u_r),
            b_r: g.param(store, self.b_r),
            w_h: g.param(store, self.w_h),
            u_h: g.param(store, self.u_h),
            b_h: g.param(store, self.b_h),
        }
    }
}

/// Standard update/reset-gate recurrence:
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
pub fn gru_cell(g: &mut Graph, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let gate = |g: &mut Graph, w, u, b, h| -> Result<Var> {
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h, u)?;
        let s = g.add(xw, hu)?;
        Ok(g.add_bias(s, b)?)
    };
    let z = gate(g, p.w_z, p.u_z, p.b_z, h_prev)?;
    let z = g.sigmoid(z);
    let r = gate(g, p.w_r, p.u_r, p.b_r, h_prev)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h_prev)?;
    let cand = gate(g, p.w_h, p.u_h, p.b_h, rh)?;
    let cand = g.tanh(cand);
    // (1 − z) ⊙ h + z ⊙ ĥ = h + z ⊙ (ĥ − h)
    let diff = g.sub(cand, h_prev)?;
    let step = g.mul(z, diff)?;
    Ok(g.add(h_prev, step)?)
}

/// Bidirectional GRU over the candidate inputs `[y_c ; x_j]`, starting from
/// zero states. Returns `h_j = [→h_j ; ←h_j]` (each `1×2·hidden`) in
/// candidate order.
pub fn segment_interaction(
    g: &mut Graph,
    summary: Var,
    candidates: &[Var],
    forward: &GruVars,
    backward: &GruVars,
    dropout: f64,
) -> Result<Vec<Var>> {
    if candidates.is_empty() {
        return Err(Error::config("segment interaction needs at least one candidate"));
    }
    let hidden = g.value(forward.u_z).shape()[0];
    let inputs = candidates
        .iter()
        .map(|&c| {
            let x = g.concat(&[summary, c], 1)?;
            Ok(g.dropout(x, dropout)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let zero = g.constant(Tensor::zeros(&[1, hidden]));
    let mut fwd = Vec::with_capacity(inputs.len());
    let mut h = zero;
    for &x in &inputs {
        h = gru_cell(g, x, h, forward)?;
        fwd.push(h);
    }
    let mut bwd = vec![zero; inputs.len()];
    let mut h = zero;
    for (j, &x) in inputs.iter().enumerate().rev() {
        h = gru_cell(g, x, h, backward)?;
        bwd[j] = h;
    }
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| Ok(g.concat(&[f, b], 1)?))
        .collect()
}

/// `y_s = (1/T) Σ_j tanh(h_j W_s + b_s)`.
pub fn segment_summary(g: &mut Graph, states: &[Var], w_s: Var, b_s: Var) -> Result<Var> {
    let h = g.concat(states, 0)?;
    let proj = g.linear(h, w_s, b_s)?;
    let act = g.tanh(proj);
    let mean = g.mean_axis(act, 0)?;
    let d = g.value(mean).len();
    Ok(g.reshape(mean, &[1, d])?)
}

/// Attention over segment states guided by the segment summary:
/// `u_j = tanh(h_j W_d + b_d)`, `α = softmax_j(u_j · y_s)`, `d = Σ_j α_j h_j`.
/// Returns the `1×D` document vector and the `T`-vector of weights.
pub fn document_attention(g: &mut Graph, states: &[Var], summary: Var, w_d: Var, b_d: Var) -> Result<(Var, Var)> {
    let h = g.concat(states, 0)?;
    let u = g.linear(h, w_d, b_d)?;
    let u = g.tanh(u);
    let ys = g.transpose(summary)?;
    let scores = g.matmul(u, ys)?;
    let t = states.len();
    let scores = g.reshape(scores, &[t])?;
    let alpha = g.softmax(scores, 0)?;
    let alpha_row = g.reshape(alpha, &[1, t])?;
    let d = g.matmul(alpha_row, h)?;
    Ok((d, alpha))
}

/// Decoder logits `d W_c + b_c` (apply softmax for the distribution).
pub fn classify(g: &mut Graph, doc: Var, w_c: Var, b_c: Var) -> Result<Var> {
    Ok(g.linear(doc, w_c, b_c)?)
}

/// Index of the largest probability; ties go to the lowest class index.
pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best })
}

/// Graph nodes from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `1×K` decoder logits.
    pub logits: Var,
    /// `1×K` feedback-head logits.
    pub feedback_logits: Var,
    /// `1×D` document vector (the state read by the feedback head).
    pub document: Var,
    /// Candidate attention weights (full mode only).
    pub alpha: Option<Var>,
    /// Segment states `h_j` (modes with a GRU).
    pub states: Vec<Var>,
    /// Per-candidate pair encodings (pair-based modes).
    pub pairs: Vec<PairEncoding>,
}

impl ForwardPass {
    pub fn probs(&self, g: &Graph) -> Vec<f64> {
        softmax_slice(g.value(self.logits).data())
    }

    pub fn feedback_probs(&self, g: &Graph) -> Vec<f64> {
        softmax_slice(g.value(self.feedback_logits).data())
    }

    pub fn alpha_values(&self, g: &Graph) -> Option<Vec<f64>> {
        self.alpha.map(|a| g.value(a).data().to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct HinModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: PairEncoder,
    gru_fwd: GruIds,
    gru_bwd: GruIds,
    w_s: ParamId,
    b_s: ParamId,
    w_d: ParamId,
    b_d: ParamId,
    w_c: ParamId,
    b_c: ParamId,
    w_r: ParamId,
    b_r: ParamId,
    proj_pair_w: ParamId,
    proj_pair_b: ParamId,
    proj_single_w: ParamId,
    proj_single_b: ParamId,
}

impl HinModel {
    /// Fresh model with scaled-uniform weights and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = PairEncoder::register(config.encoder, &mut store, &mut rng)?;
        let d = config.encoder.hidden;
        let gh = config.gru_hidden;
        let sd = config.state_dim();
        let k = config.classes;
        let gru_fwd = GruIds::register(&mut store, "gru.fwd", 2 * d, gh, &mut rng)?;
        let gru_bwd = GruIds::register(&mut store, "gru.bwd", 2 * d, gh, &mut rng)?;
        let mut mat = |name: &str, r, c, store: &mut ParamStore| store.insert_xavier(name, r, c, &mut rng);
        let w_s = mat("seg.w_s", sd, sd, &mut store)?;
        let w_d = mat("doc.w_d", sd, sd, &mut store)?;
        let w_c = mat("dec.w_c", sd, k, &mut store)?;
        let w_r = mat("feedback.w_r", sd, k, &mut store)?;
        let proj_pair_w = mat("ablate.pair.w", 2 * d, sd, &mut store)?;
        let proj_single_w = mat("ablate.single.w", d, sd, &mut store)?;
        Ok(HinModel {
            config,
            encoder,
            gru_fwd,
            gru_bwd,
            w_s,
            w_d,
            w_c,
            w_r,
            proj_pair_w,
            proj_single_w,
            b_s: store.insert_zeros("seg.b_s", &[sd])?,
            b_d: store.insert_zeros("doc.b_d", &[sd])?,
            b_c: store.insert_zeros("dec.b_c", &[k])?,
            b_r: store.insert_zeros("feedback.b_r", &[k])?,
            proj_pair_b: store.insert_zeros("ablate.pair.b", &[sd])?,
            proj_single_b: store.insert_zeros("ablate.single.b", &[sd])?,
            params: store,
        })
    }

    /// Rebuilds a model from stored weights; every parameter must be present
    /// with its expected shape.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = HinModel::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, model expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids() {
            let name = model.params.get(id).name.clone();
            let src = params
                .by_name(&name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks parameter {name}")))?;
            let dst = model.params.value_mut(id);
            if src.value.shape() != dst.shape() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.value.shape(),
                    dst.shape()
                )));
            }
            *dst = src.value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &PairEncoder {
        &self.encoder
    }

    pub fn gru_ids(&self) -> (GruIds, GruIds) {
        (self.gru_fwd, self.gru_bwd)
    }

    /// `(W_s, b_s, W_d, b_d, W_c, b_c, W_r, b_r)`.
    pub fn head_ids(&self) -> [ParamId; 8] {
        [self.w_s, self.b_s, self.w_d, self.b_d, self.w_c, self.b_c, self.w_r, self.b_r]
    }

    fn bind(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(&self.params, id)
    }

    fn project(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (self.bind(g, w), self.bind(g, b));
        Ok(g.linear(x, w, b)?)
    }

    pub fn forward(&self, g: &mut Graph, sample: &PreparedSample, mode: Mode) -> Result<ForwardPass> {
        let dropout = self.config.dropout;
        let mut alpha = None;
        let mut states = Vec::new();
        let mut pairs = Vec::new();
        let document = match mode {
            Mode::Full | Mode::NoDoc | Mode::NoDocSeg => {
                if sample.pairs.is_empty() {
                    return Err(Error::Encode("sample has no candidate pairs".into()));
                }
                pairs = sample
                    .pairs
                    .iter()
                    .map(|p| self.encoder.encode(g, &self.params, p))
                    .collect::<Result<Vec<_>>>()?;
                // y_c: mean of the per-pair [CLS] states.
                let y_c = {
                    let cls: Vec<Var> = pairs.iter().map(|p| p.summary).collect();
                    let stacked = g.concat(&cls, 0)?;
                    let mean = g.mean_axis(stacked, 0)?;
                    let d = self.config.encoder.hidden;
                    g.reshape(mean, &[1, d])?
                };
                let xs: Vec<Var> = pairs.iter().map(|p| p.candidate).collect();
                if mode == Mode::NoDocSeg {
                    let projected = xs
                        .iter()
                        .map(|&x| {
                            let cat = g.concat(&[y_c, x], 1)?;
                            let cat = g.dropout(cat, dropout)?;
                            self.project(g, cat, self.proj_pair_w, self.proj_pair_b)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let stacked = g.concat(&projected, 0)?;
                    let mean = g.mean_axis(stacked, 0)?;
                    let sd = self.config.state_dim();
                    g.reshape(mean, &[1, sd])?
                } else {
                    let fwd = self.gru_fwd.bind(g, &self.params);
                    let bwd = self.gru_bwd.bind(g, &self.params);
                    states = segment_interaction(g, y_c, &xs, &fwd, &bwd, dropout)?;
                    if mode == Mode::Full {
                        let (w_s, b_s) = (self.bind(g, self.w_s), self.bind(g, self.b_s));
                        let y_s = segment_summary(g, &states, w_s, b_s)?;
                        let (w_d, b_d) = (self.bind(g, self.w_d), self.bind(g, self.b_d));
                        let (d, a) = document_attention(g, &states, y_s, w_d, b_d)?;
                        alpha = Some(a);
                        d
                    } else {
                        let stacked = g.concat(&states, 0)?;
                        let mean = g.mean_axis(stacked, 0)?;
                        let sd = self.config.state_dim();
                        g.reshape(mean, &[1, sd])?
                    }
                }
            }
            Mode::NoInteract => {
                let s = self.encoder.encode_single(g, &self.params, &sample.summary)?;
                let d = self.encoder.encode_single(g, &self.params, &sample.document)?;
                let cat = g.concat(&[s, d], 1)?;
                self.project(g, cat, self.proj_pair_w, self.proj_pair_b)?
            }
            Mode::NoSummary => {
                let d = self.encoder.encode_single(g, &self.params, &sample.document)?;
                self.project(g, d, self.proj_single_w, self.proj_single_b)?
            }
        };
        let (w_c, b_c) = (self.bind(g, self.w_c), self.bind(g, self.b_c));
        let logits = classify(g, document, w_c, b_c)?;
        let (w_r, b_r) = (self.bind(g, self.w_r), self.bind(g, self.b_r));
        let feedback_logits = classify(g, document, w_r, b_r)?;
        Ok(ForwardPass {
            logits,
            feedback_logits,
            document,
            alpha,
            states,
            pairs,
        })
    }

    /// Evaluation-mode prediction: `(decoder distribution, predicted class)`.
    pub fn predict(&self, sample: &PreparedSample, mode: Mode) -> Result<(Vec<f64>, usize)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, sample, mode)?;
        let probs = out.probs(&g);
        let pred = argmax(&probs);
        Ok((probs, pred))
    }
}
