//! Knowledge fusion, multi-head attention reasoning and the prediction head.
//!
//! Token rows are interpolated with the retrieval-weighted knowledge aggregate
//! `g = Σ w_j k_j`, and the retrieved fragment vectors are appended as extra
//! sequence positions so that attention can route mass from tokens directly
//! onto evidence. Retrieval weights and fragment vectors enter as constants.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBase, RetrievalResult};
use crate::numeric::matrix::softmax;
use crate::numeric::{Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::text::ContextMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub alpha: f64,
    pub top_k: usize,
    pub tau: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { alpha: 0.7, top_k: 4, tau: 0.1 }
    }
}

impl FusionConfig {
    /// `alpha = 1` switches the knowledge path off entirely: token rows are
    /// `h` and no knowledge positions are appended.
    pub fn uses_knowledge(&self) -> bool {
        self.alpha < 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedMatrix {
    pub matrix: Matrix,
    pub n_tokens: usize,
    pub n_knowledge: usize,
}

/// `Σ_j w_j k_j` over the retrieved fragments.
pub fn knowledge_aggregate(retrieval: &RetrievalResult, kb: &KnowledgeBase) -> Result<Vec<f64>> {
    let mut g = vec![0.0; kb.dimension()];
    for (&pos, &w) in retrieval.positions.iter().zip(&retrieval.weights) {
        let frag = kb.fragments().get(pos).ok_or(Error::Index { index: pos, len: kb.len() })?;
        for (acc, v) in g.iter_mut().zip(&frag.vector) {
            *acc += w * v;
        }
    }
    Ok(g)
}

/// Records the fused matrix `[α·h_i + (1−α)·g ; k_1 … k_k]`.
pub fn record_fuse(
    tape: &mut Tape,
    h: NodeId,
    retrieval: &RetrievalResult,
    kb: &KnowledgeBase,
    alpha: f64,
) -> Result<(NodeId, usize)> {
    let d = tape.value(h).cols();
    if d != kb.dimension() {
        return Err(Error::dimension("fuse", tape.value(h).shape(), (kb.len(), kb.dimension())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let g = knowledge_aggregate(retrieval, kb)?;
    let shift = tape.constant(Matrix::row_vector(g.iter().map(|v| (1.0 - alpha) * v).collect()))?;
    let scaled = tape.scale(h, alpha)?;
    let tokens = tape.add_row(scaled, shift)?;
    if alpha >= 1.0 || retrieval.is_empty() {
        return Ok((tokens, 0));
    }
    let rows: Vec<Vec<f64>> = retrieval.positions.iter().map(|&p| kb.fragment(p).vector.clone()).collect();
    let knowledge = tape.constant(Matrix::from_rows(&rows)?)?;
    Ok((tape.concat_rows(&[tokens, knowledge])?, rows.len()))
}

pub fn fuse(h: &ContextMatrix, retrieval: &RetrievalResult, kb: &KnowledgeBase, cfg: &FusionConfig) -> Result<FusedMatrix> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let hn = tape.constant(h.0.clone())?;
    let (z, n_knowledge) = record_fuse(&mut tape, hn, retrieval, kb, cfg.alpha)?;
    Ok(FusedMatrix { matrix: tape.value(z).clone(), n_tokens: h.0.rows(), n_knowledge })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// Query and key projections start this many times wider than the other
/// projections. Near zero their gradients vanish together and attention
/// stays uniform for most of a short run.
pub const QK_INIT_GAIN: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub d_model: usize,
}

/// Per-head `(n + k) × (n + k)` row-stochastic attention matrices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionWeights {
    pub heads: Vec<Matrix>,
    pub n_tokens: usize,
    pub n_knowledge: usize,
}

impl AttentionWeights {
    pub fn head_average(&self) -> Result<Matrix> {
        let first = self.heads.first().ok_or_else(|| Error::EmptyInput("no attention heads".into()))?;
        let mut acc = first.clone();
        for h in &self.heads[1..] {
            acc.add_assign(h)?;
        }
        Ok(acc.scale(1.0 / self.heads.len() as f64))
    }
}

fn check_heads(d_model: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::Config(format!("d_model {d_model} is not divisible by {heads} heads")));
    }
    Ok(d_model / heads)
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let d_head = check_heads(d_model, heads)?;
        let bound = 1.0 / (d_model as f64).sqrt();
        let heads = (0..heads)
            .map(|h| HeadParams {
                w_q: store.add_uniform(format!("reasoner.head{h}.w_q"), d_model, d_head, QK_INIT_GAIN * bound, rng),
                w_k: store.add_uniform(format!("reasoner.head{h}.w_k"), d_model, d_head, QK_INIT_GAIN * bound, rng),
                w_v: store.add_uniform(format!("reasoner.head{h}.w_v"), d_model, d_head, bound, rng),
            })
            .collect();
        let w_o = store.add_uniform("reasoner.w_o", d_model, d_model, bound, rng);
        Ok(Self { heads, w_o, d_model })
    }

    pub fn locate(store: &ParamStore, d_model: usize, heads: usize) -> Result<Self> {
        check_heads(d_model, heads)?;
        let find = |name: String| store.find(&name).ok_or_else(|| Error::Data(format!("missing parameter {name}")));
        let heads = (0..heads)
            .map(|h| {
                Ok(HeadParams {
                    w_q: find(format!("reasoner.head{h}.w_q"))?,
                    w_k: find(format!("reasoner.head{h}.w_k"))?,
                    w_v: find(format!("reasoner.head{h}.w_v"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { heads, w_o: find("reasoner.w_o".into())?, d_model })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads.len()
    }

    /// Records `z + Concat_h(softmax(Q_h K_hᵀ / √d_head) V_h) · W_O`.
    pub fn record(&self, tape: &mut Tape, z: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        check_heads(self.d_model, self.heads.len())?;
        if tape.value(z).cols() != self.d_model {
            return Err(Error::dimension("reason", tape.value(z).shape(), (0, self.d_model)));
        }
        let scale = 1.0 / (self.d_head() as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let wq = tape.param(head.w_q);
            let wk = tape.param(head.w_k);
            let wv = tape.param(head.w_v);
            let q = tape.matmul(z, wq)?;
            let k = tape.matmul(z, wk)?;
            let v = tape.matmul(z, wv)?;
            let logits = tape.matmul_transpose(q, k)?;
            let logits = tape.scale(logits, scale)?;
            let a = tape.softmax_rows(logits)?;
            outputs.push(tape.matmul(a, v)?);
            weights.push(a);
        }
        let concat = tape.concat_cols(&outputs)?;
        let wo = tape.param(self.w_o);
        let projected = tape.matmul(concat, wo)?;
        Ok((tape.add(z, projected)?, weights))
    }
}

pub fn reason(z: &FusedMatrix, params: &AttentionParams, store: &ParamStore) -> Result<(Matrix, AttentionWeights)> {
    let mut tape = Tape::new(store);
    let zn = tape.constant(z.matrix.clone())?;
    let (out, heads) = params.record(&mut tape, zn)?;
    Ok((
        tape.value(out).clone(),
        AttentionWeights {
            heads: heads.iter().map(|&h| tape.value(h).clone()).collect(),
            n_tokens: z.n_tokens,
            n_knowledge: z.n_knowledge,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classifier {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Classifier {
    pub fn init(store: &mut ParamStore, d_model: usize, num_labels: usize, rng: &mut impl Rng) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::Config("label set is empty".into()));
        }
        let bound = 1.0 / (d_model as f64).sqrt();
        Ok(Self {
            weight: store.add_uniform("classifier.weight", d_model, num_labels, bound, rng),
            bias: store.add("classifier.bias", Matrix::zeros(1, num_labels)),
        })
    }

    pub fn locate(store: &ParamStore) -> Result<Self> {
        let find = |name: &str| store.find(name).ok_or_else(|| Error::Data(format!("missing parameter {name}")));
        Ok(Self { weight: find("classifier.weight")?, bias: find("classifier.bias")? })
    }

    /// Records the label distribution from the mean of the first `n_tokens` rows.
    pub fn record(&self, tape: &mut Tape, z_out: NodeId, n_tokens: usize) -> Result<NodeId> {
        if n_tokens == 0 {
            return Err(Error::EmptyInput("prediction needs at least one token row".into()));
        }
        let tokens = tape.slice_rows(z_out, 0, n_tokens)?;
        let pooled = tape.mean_rows(tokens)?;
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let logits = tape.matmul(pooled, w)?;
        let logits = tape.add_row(logits, b)?;
        tape.softmax_rows(logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label_distribution: Vec<f64>,
    pub predicted_label: String,
    #[serde(skip)]
    pub predicted_index: usize,
}

impl Prediction {
    /// Argmax with ties resolved toward the earlier label.
    pub fn from_distribution(distribution: Vec<f64>, labels: &[String]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        if distribution.len() != labels.len() {
            return Err(Error::dimension("prediction", (1, distribution.len()), (1, labels.len())));
        }
        let mut best = 0;
        for (i, &p) in distribution.iter().enumerate() {
            if p > distribution[best] {
                best = i;
            }
        }
        Ok(Self { predicted_label: labels[best].clone(), predicted_index: best, label_distribution: distribution })
    }

    pub fn from_logits(logits: &[f64], labels: &[String]) -> Result<Self> {
        Self::from_distribution(softmax(logits), labels)
    }
}

pub fn predict(
    z_out: &Matrix,
    n_tokens: usize,
    head: &Classifier,
    store: &ParamStore,
    labels: &[String],
) -> Result<Prediction> {
    if labels.is_empty() {
        return Err(Error::Config("label set is empty".into()));
    }
    let mut tape = Tape::new(store);
    let z = tape.constant(z_out.clone())?;
    let probs = head.record(&mut tape, z, n_tokens)?;
    Prediction::from_distribution(tape.value(probs).values().to_vec(), labels)
}
