//! Relation classifier: a small contextual encoder followed by the
//! entity-pair head
//!
//! ```text
//! z = ReLU(W_proj [h_subj, h_obj])
//! P(r | x) = softmax(W z + b)_r
//! ```
//!
//! where `h_subj` and `h_obj` are the encoder outputs at the two head
//! subtokens. Everything is double precision, and gradients are derived by
//! hand (see [`backward`]).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::SubtokenizedInstance;

/// Floor applied to the gold probability inside the log.
pub const LOG_FLOOR: f64 = 1e-12;

pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// `h_i = tok_emb[id_i] + pos_emb[i]`
    Lookup,
    /// Lookup followed by one single-head self-attention layer and a ReLU
    /// feed-forward layer, each wrapped in a residual connection.
    Attn1,
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderVariant::Lookup => "lookup",
            EncoderVariant::Attn1 => "attn1",
        })
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookup" => Ok(EncoderVariant::Lookup),
            "attn1" => Ok(EncoderVariant::Attn1),
            _ => Err(Error::Config(format!("unknown encoder variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub variant: EncoderVariant,
}

/// Self-attention and feed-forward weights of the `attn1` encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors. The same type holds gradients and optimizer
/// moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub attn: Option<AttentionBlock>,
    /// `2d x d`; applied as `[h_subj, h_obj] · proj`.
    pub proj: Array2<f64>,
    /// One row per relation label.
    pub rel_w: Array2<f64>,
    pub rel_b: Array1<f64>,
}

impl ClassifierParams {
    /// All-zero tensors of the given shape.
    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.dim;
        let attn = match dims.variant {
            EncoderVariant::Lookup => None,
            EncoderVariant::Attn1 => Some(AttentionBlock {
                wq: Array2::zeros((d, d)),
                wk: Array2::zeros((d, d)),
                wv: Array2::zeros((d, d)),
                w1: Array2::zeros((d, dims.ff_dim)),
                b1: Array1::zeros(dims.ff_dim),
                w2: Array2::zeros((dims.ff_dim, d)),
                b2: Array1::zeros(d),
            }),
        };
        Self {
            tok_emb: Array2::zeros((dims.vocab_size, d)),
            pos_emb: Array2::zeros((dims.max_len, d)),
            attn,
            proj: Array2::zeros((2 * d, d)),
            rel_w: Array2::zeros((dims.num_classes, d)),
            rel_b: Array1::zeros(dims.num_classes),
        }
    }

    /// Uniform(-0.1, 0.1) weights and embeddings, zero biases.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        const SCALE: f64 = 0.1;
        let mut params = Self::zeros(dims);
        for (name, tensor) in params.tensors_mut() {
            if is_bias(name) {
                continue;
            }
            for x in tensor {
                *x = rng.gen_range(-SCALE..SCALE);
            }
        }
        params
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.tok_emb.nrows(),
            num_classes: self.rel_w.nrows(),
            dim: self.tok_emb.ncols(),
            ff_dim: self.attn.as_ref().map_or(0, |a| a.w1.ncols()),
            max_len: self.pos_emb.nrows(),
            variant: self.variant(),
        }
    }

    pub fn variant(&self) -> EncoderVariant {
        if self.attn.is_some() {
            EncoderVariant::Attn1
        } else {
            EncoderVariant::Lookup
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("tok_emb", self.tok_emb.as_slice().expect("standard layout")),
            ("pos_emb", self.pos_emb.as_slice().expect("standard layout")),
        ];
        if let Some(a) = &self.attn {
            out.extend([
                ("attn.wq", a.wq.as_slice().expect("standard layout")),
                ("attn.wk", a.wk.as_slice().expect("standard layout")),
                ("attn.wv", a.wv.as_slice().expect("standard layout")),
                ("ff.w1", a.w1.as_slice().expect("standard layout")),
                ("ff.b1", a.b1.as_slice().expect("standard layout")),
                ("ff.w2", a.w2.as_slice().expect("standard layout")),
                ("ff.b2", a.b2.as_slice().expect("standard layout")),
            ]);
        }
        out.extend([
            ("proj", self.proj.as_slice().expect("standard layout")),
            ("rel_w", self.rel_w.as_slice().expect("standard layout")),
            ("rel_b", self.rel_b.as_slice().expect("standard layout")),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("tok_emb", self.tok_emb.as_slice_mut().expect("standard layout")),
            ("pos_emb", self.pos_emb.as_slice_mut().expect("standard layout")),
        ];
        if let Some(a) = &mut self.attn {
            out.extend([
                ("attn.wq", a.wq.as_slice_mut().expect("standard layout")),
                ("attn.wk", a.wk.as_slice_mut().expect("standard layout")),
                ("attn.wv", a.wv.as_slice_mut().expect("standard layout")),
                ("ff.w1", a.w1.as_slice_mut().expect("standard layout")),
                ("ff.b1", a.b1.as_slice_mut().expect("standard layout")),
                ("ff.w2", a.w2.as_slice_mut().expect("standard layout")),
                ("ff.b2", a.b2.as_slice_mut().expect("standard layout")),
            ]);
        }
        out.extend([
            ("proj", self.proj.as_slice_mut().expect("standard layout")),
            ("rel_w", self.rel_w.as_slice_mut().expect("standard layout")),
            ("rel_b", self.rel_b.as_slice_mut().expect("standard layout")),
        ]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub fn is_bias(tensor_name: &str) -> bool {
    matches!(tensor_name, "ff.b1" | "ff.b2" | "rel_b")
}

/// Contextual embeddings, one row per subtoken.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hiddens: Array2<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
struct AttnTrace {
    h0: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Array2<f64>,
    h1: Array2<f64>,
    pre_ff: Array2<f64>,
    act_ff: Array2<f64>,
}

fn check_ids(ids: &[u32], params: &ClassifierParams) -> Result<()> {
    let vocab = params.tok_emb.nrows();
    let max_len = params.pos_emb.nrows();
    if ids.len() > max_len {
        return Err(Error::Shape(format!(
            "input of {} subtokens exceeds max_len {max_len}",
            ids.len()
        )));
    }
    if let Some(bad) = ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::Shape(format!(
            "token id {bad} out of range for vocabulary of {vocab}"
        )));
    }
    Ok(())
}

fn lookup(ids: &[u32], params: &ClassifierParams) -> Array2<f64> {
    let mut h = Array2::zeros((ids.len(), params.tok_emb.ncols()));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = h.row_mut(i);
        row.assign(&params.tok_emb.row(id as usize));
        row += &params.pos_emb.row(i);
    }
    h
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn encode_traced(ids: &[u32], params: &ClassifierParams) -> Result<(EncoderOutput, Option<AttnTrace>)> {
    check_ids(ids, params)?;
    let h0 = lookup(ids, params);
    let Some(a) = &params.attn else {
        return Ok((EncoderOutput { hiddens: h0 }, None));
    };
    let scale = (h0.ncols() as f64).sqrt();
    let q = h0.dot(&a.wq);
    let k = h0.dot(&a.wk);
    let v = h0.dot(&a.wv);
    let mut weights = q.dot(&k.t()) / scale;
    softmax_rows(&mut weights);
    let h1 = &h0 + &weights.dot(&v);
    let pre_ff = h1.dot(&a.w1) + &a.b1;
    let act_ff = pre_ff.mapv(|x| x.max(0.0));
    let hiddens = &h1 + &act_ff.dot(&a.w2) + &a.b2;
    let trace = AttnTrace {
        h0,
        q,
        k,
        v,
        weights,
        h1,
        pre_ff,
        act_ff,
    };
    Ok((EncoderOutput { hiddens }, Some(trace)))
}

/// Runs the encoder over subtoken ids.
pub fn encode(ids: &[u32], params: &ClassifierParams) -> Result<EncoderOutput> {
    encode_traced(ids, params).map(|(out, _)| out)
}

struct HeadTrace {
    pair: Array1<f64>,
    pre: Array1<f64>,
    z: Array1<f64>,
    probs: Array1<f64>,
}

fn head(out: &EncoderOutput, subj: usize, obj: usize, params: &ClassifierParams) -> Result<HeadTrace> {
    let len = out.hiddens.nrows();
    if subj >= len || obj >= len {
        return Err(Error::Shape(format!(
            "head indices ({subj}, {obj}) out of range for {len} subtokens"
        )));
    }
    let d = out.hiddens.ncols();
    let mut pair = Array1::zeros(2 * d);
    pair.slice_mut(s![..d]).assign(&out.hiddens.row(subj));
    pair.slice_mut(s![d..]).assign(&out.hiddens.row(obj));
    let pre = pair.dot(&params.proj);
    let z = pre.mapv(|x| x.max(0.0));
    let logits = params.rel_w.dot(&z) + &params.rel_b;
    let probs = softmax(logits.view());
    Ok(HeadTrace { pair, pre, z, probs })
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut p = logits.mapv(|x| (x - max).exp());
    let sum = p.sum();
    p /= sum;
    p
}

/// Relation probabilities for one encoded sentence.
pub fn forward(
    out: &EncoderOutput,
    subj_head_sub: usize,
    obj_head_sub: usize,
    params: &ClassifierParams,
) -> Result<Array1<f64>> {
    head(out, subj_head_sub, obj_head_sub, params).map(|t| t.probs)
}

/// Encodes and classifies one subtokenized instance.
pub fn predict_proba(inst: &SubtokenizedInstance, params: &ClassifierParams) -> Result<Array1<f64>> {
    let out = encode(&inst.ids, params)?;
    forward(&out, inst.subj_head_sub, inst.obj_head_sub, params)
}

/// Cross-entropy `-ln p[gold]`, with the probability floored at [`LOG_FLOOR`].
pub fn loss(probs: ArrayView1<f64>, gold: usize) -> Result<f64> {
    let p = probs
        .get(gold)
        .ok_or_else(|| Error::Shape(format!("gold index {gold} out of range for {} classes", probs.len())))?;
    Ok(-p.max(LOG_FLOOR).ln())
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predict(probs: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Example {
    pub input: SubtokenizedInstance,
    pub gold: usize,
}

/// Gradients of the mean cross-entropy over `batch`, plus that mean loss.
pub fn backward(batch: &[Example], params: &ClassifierParams) -> Result<(ClassifierParams, f64)> {
    let mut grads = params.zeros_like();
    let total = accumulate_gradients(batch, params, &mut grads)?;
    Ok((grads, total / batch.len().max(1) as f64))
}

/// Adds `1/|batch|`-scaled gradients into `grads`; returns the summed loss.
pub fn accumulate_gradients(batch: &[Example], params: &ClassifierParams, grads: &mut ClassifierParams) -> Result<f64> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let d = params.tok_emb.ncols();
    let mut total = 0.0;
    for ex in batch {
        let ids = &ex.input.ids;
        let (out, trace) = encode_traced(ids, params)?;
        let (s_idx, o_idx) = (ex.input.subj_head_sub, ex.input.obj_head_sub);
        let h = head(&out, s_idx, o_idx, params)?;
        total += loss(h.probs.view(), ex.gold)?;

        let mut dlogits = h.probs.clone();
        if h.probs[ex.gold] > LOG_FLOOR {
            dlogits[ex.gold] -= 1.0;
        } else {
            // floored loss is constant in the parameters here
            dlogits.fill(0.0);
        }
        dlogits *= scale;

        add_outer(&mut grads.rel_w, dlogits.view(), h.z.view());
        grads.rel_b += &dlogits;
        let dz = params.rel_w.t().dot(&dlogits);
        let dpre = &dz * &h.pre.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        add_outer(&mut grads.proj, h.pair.view(), dpre.view());
        let dpair = params.proj.dot(&dpre);

        let len = ids.len();
        let mut dh = Array2::<f64>::zeros((len, d));
        {
            let mut row = dh.row_mut(s_idx);
            row += &dpair.slice(s![..d]);
        }
        {
            let mut row = dh.row_mut(o_idx);
            row += &dpair.slice(s![d..]);
        }

        let dh0 = match (&params.attn, trace, &mut grads.attn) {
            (Some(a), Some(t), Some(g)) => attn_backward(a, &t, dh, g),
            (None, None, None) => dh,
            _ => return Err(Error::Internal("gradient buffers do not match encoder variant".into())),
        };

        for (i, &id) in ids.iter().enumerate() {
            let row = dh0.row(i);
            let mut e = grads.tok_emb.row_mut(id as usize);
            e += &row;
            let mut p = grads.pos_emb.row_mut(i);
            p += &row;
        }
    }
    Ok(total)
}

fn add_outer(target: &mut Array2<f64>, left: ArrayView1<f64>, right: ArrayView1<f64>) {
    for (i, &l) in left.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        target.row_mut(i).scaled_add(l, &right);
    }
}

/// Backpropagates through the feed-forward and attention sublayers; returns
/// the gradient with respect to the lookup embeddings.
fn attn_backward(a: &AttentionBlock, t: &AttnTrace, dh: Array2<f64>, g: &mut AttentionBlock) -> Array2<f64> {
    // H = h1 + relu(h1 W1 + b1) W2 + b2
    g.w2 += &t.act_ff.t().dot(&dh);
    g.b2 += &dh.sum_axis(Axis(0));
    let mut dpre = dh.dot(&a.w2.t());
    dpre.zip_mut_with(&t.pre_ff, |g, &x| {
        if x <= 0.0 {
            *g = 0.0
        }
    });
    g.w1 += &t.h1.t().dot(&dpre);
    g.b1 += &dpre.sum_axis(Axis(0));
    let dh1 = &dh + &dpre.dot(&a.w1.t());

    // h1 = h0 + A V,  A = softmax(Q K^T / sqrt(d))
    let dweights = dh1.dot(&t.v.t());
    let dv = t.weights.t().dot(&dh1);
    let mut dscores = dweights.clone();
    for (mut ds, (w, dw)) in dscores
        .rows_mut()
        .into_iter()
        .zip(t.weights.rows().into_iter().zip(dweights.rows()))
    {
        let inner = w.dot(&dw);
        ds.assign(&(&w * &dw.mapv(|x| x - inner)));
    }
    let scale = (t.h0.ncols() as f64).sqrt();
    dscores /= scale;
    let dq = dscores.dot(&t.k);
    let dk = dscores.t().dot(&t.q);

    g.wq += &t.h0.t().dot(&dq);
    g.wk += &t.h0.t().dot(&dk);
    g.wv += &t.h0.t().dot(&dv);
    dh1 + dq.dot(&a.wq.t()) + dk.dot(&a.wk.t()) + dv.dot(&a.wv.t())
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// Little-endian f64, row-major, base64.
    data: String,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    version: u32,
    dims: ModelDims,
    tensors: Vec<TensorRecord>,
}

const PARAMS_FORMAT: &str = "rebaseline-params";

impl ClassifierParams {
    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![self.tok_emb.shape().to_vec(), self.pos_emb.shape().to_vec()];
        if let Some(a) = &self.attn {
            out.extend([
                a.wq.shape().to_vec(),
                a.wk.shape().to_vec(),
                a.wv.shape().to_vec(),
                a.w1.shape().to_vec(),
                a.b1.shape().to_vec(),
                a.w2.shape().to_vec(),
                a.b2.shape().to_vec(),
            ]);
        }
        out.extend([
            self.proj.shape().to_vec(),
            self.rel_w.shape().to_vec(),
            self.rel_b.shape().to_vec(),
        ]);
        out
    }

    /// JSON header with base64 row-major tensors. Round trips bit for bit.
    pub fn to_json(&self) -> String {
        let tensors = self
            .tensors()
            .into_iter()
            .zip(self.shapes())
            .map(|((name, data), shape)| {
                let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
                TensorRecord {
                    name: name.to_string(),
                    shape,
                    data: B64.encode(bytes),
                }
            })
            .collect();
        let file = ParamsFile {
            format: PARAMS_FORMAT.into(),
            version: 1,
            dims: self.dims(),
            tensors,
        };
        serde_json::to_string_pretty(&file).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("params file: {e}")))?;
        if file.format != PARAMS_FORMAT || file.version != 1 {
            return Err(Error::Config(format!(
                "unsupported params format {} v{}",
                file.format, file.version
            )));
        }
        let mut params = ClassifierParams::zeros(file.dims);
        let expected = params.shapes();
        if expected.len() != file.tensors.len() {
            return Err(Error::Config("params file: wrong tensor count".into()));
        }
        for (((name, slot), shape), record) in params.tensors_mut().into_iter().zip(expected).zip(file.tensors) {
            if record.name != name || record.shape != shape {
                return Err(Error::Config(format!(
                    "params file: expected tensor {name} {shape:?}, found {} {:?}",
                    record.name, record.shape
                )));
            }
            let bytes = B64
                .decode(record.data.as_bytes())
                .map_err(|e| Error::Config(format!("params file: tensor {name}: {e}")))?;
            if bytes.len() != slot.len() * 8 {
                return Err(Error::Config(format!(
                    "params file: tensor {name} has wrong byte length"
                )));
            }
            for (x, chunk) in slot.iter_mut().zip(bytes.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
