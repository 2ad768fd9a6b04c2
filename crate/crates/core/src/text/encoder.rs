//! Context encoder: token embeddings plus sinusoidal positions, refined by one
//! residual single-head self-attention block.

use rand::Rng;

use super::tokenize::tokenize;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, NodeId, ParamId, ParamStore, Tape};

/// Amplitude of the positional signal relative to a unit sinusoid.
///
/// Sequence vectors are mean-pooled for retrieval; a full-amplitude positional
/// mean is shared by every sequence of the same length and swamps the token
/// content in cosine space, so positions are kept an order below the
/// embedding scale.
pub const POSITION_SCALE: f64 = 0.1;
/// Embeddings are drawn uniformly from `[-EMBEDDING_INIT, EMBEDDING_INIT]`.
pub const EMBEDDING_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub source_text: String,
}

impl TokenSequence {
    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let tokens = tokenize(text)?;
        let ids = tokens.iter().map(|t| vocab.id(t)).collect();
        Ok(Self { ids, tokens, source_text: text.to_string() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `H = [h_1, …, h_n]`, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix(pub Matrix);

impl ContextMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn positional_encoding(n: usize, d_model: usize) -> Matrix {
    let mut p = Matrix::zeros(n, d_model);
    for pos in 0..n {
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / d_model as f64);
            let angle = pos as f64 * freq;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            p.set(pos, i, POSITION_SCALE * v);
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub embedding: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub d_model: usize,
}

impl Encoder {
    pub fn init(store: &mut ParamStore, vocab_size: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        let proj = 1.0 / (d_model as f64).sqrt();
        Self {
            embedding: store.add_uniform("encoder.embedding", vocab_size, d_model, EMBEDDING_INIT, rng),
            w_q: store.add_uniform("encoder.w_q", d_model, d_model, proj, rng),
            w_k: store.add_uniform("encoder.w_k", d_model, d_model, proj, rng),
            w_v: store.add_uniform("encoder.w_v", d_model, d_model, proj, rng),
            d_model,
        }
    }

    pub fn locate(store: &ParamStore, d_model: usize) -> Result<Self> {
        let find = |name: &str| store.find(name).ok_or_else(|| Error::Data(format!("missing parameter {name}")));
        Ok(Self {
            embedding: find("encoder.embedding")?,
            w_q: find("encoder.w_q")?,
            w_k: find("encoder.w_k")?,
            w_v: find("encoder.w_v")?,
            d_model,
        })
    }

    /// Records `H = X + softmax(X W_q (X W_k)ᵀ / √d) X W_v` with `X = E[ids] + P`.
    pub fn record(&self, tape: &mut Tape, ids: &[usize]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty token sequence".into()));
        }
        let emb = tape.gather_rows(self.embedding, ids)?;
        let pos = tape.constant(positional_encoding(ids.len(), self.d_model))?;
        let x = tape.add(emb, pos)?;
        let wq = tape.param(self.w_q);
        let wk = tape.param(self.w_k);
        let wv = tape.param(self.w_v);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let logits = tape.matmul_transpose(q, k)?;
        let logits = tape.scale(logits, 1.0 / (self.d_model as f64).sqrt())?;
        let weights = tape.softmax_rows(logits)?;
        let attended = tape.matmul(weights, v)?;
        tape.add(x, attended)
    }

    pub fn encode(&self, store: &ParamStore, tokens: &TokenSequence) -> Result<ContextMatrix> {
        let mut tape = Tape::new(store);
        let h = self.record(&mut tape, &tokens.ids)?;
        Ok(ContextMatrix(tape.value(h).clone()))
    }
}

/// Column-wise mean of the context rows: the sequence-level query vector.
pub fn pool(h: &ContextMatrix) -> Result<Vec<f64>> {
    Ok(h.0.mean_rows()?.into_values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::scaled_dot_attention;
    use rand::SeedableRng;

    fn setup(d: usize) -> (ParamStore, Encoder, Vocabulary) {
        let vocab = Vocabulary::build(&[vec!["markets", "rallied", "on", "strong", "earnings"]]);
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let enc = Encoder::init(&mut store, vocab.len(), d, &mut rng);
        (store, enc, vocab)
    }

    #[test]
    fn shape_matches_token_count() {
        let (store, enc, vocab) = setup(6);
        let toks = TokenSequence::from_text("markets rallied on earnings", &vocab).unwrap();
        let h = enc.encode(&store, &toks).unwrap();
        assert_eq!(h.matrix().shape(), (4, 6));
    }

    #[test]
    fn deterministic() {
        let (store, enc, vocab) = setup(6);
        let toks = TokenSequence::from_text("strong earnings", &vocab).unwrap();
        assert_eq!(enc.encode(&store, &toks).unwrap(), enc.encode(&store, &toks).unwrap());
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let (store, enc, _) = setup(4);
        let toks = TokenSequence { ids: vec![], tokens: vec![], source_text: String::new() };
        assert!(matches!(enc.encode(&store, &toks), Err(Error::EmptyInput(_))));
    }

    // With zero embeddings X = P, so H is a recomputable function of positions only.
    #[test]
    fn zero_embeddings_reduce_to_positional_recomputation() {
        let (mut store, enc, vocab) = setup(6);
        store.get_mut(enc.embedding).value.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let toks = TokenSequence::from_text("markets rallied on strong earnings", &vocab).unwrap();
        let h = enc.encode(&store, &toks).unwrap();

        let x = positional_encoding(5, 6);
        let q = x.matmul(store.value(enc.w_q)).unwrap();
        let k = x.matmul(store.value(enc.w_k)).unwrap();
        let v = x.matmul(store.value(enc.w_v)).unwrap();
        let (att, _) = scaled_dot_attention(&q, &k, &v, 6).unwrap();
        let expected = x.add(&att).unwrap();
        assert!(h.matrix().max_abs_diff(&expected) < 1e-15);

        // Swapping token identities changes nothing when embeddings are zero.
        let other = TokenSequence::from_text("earnings strong on rallied markets", &vocab).unwrap();
        assert_eq!(enc.encode(&store, &other).unwrap(), h);
    }

    #[test]
    fn rows_depend_on_whole_sequence() {
        let (store, enc, vocab) = setup(6);
        let a = enc.encode(&store, &TokenSequence::from_text("markets rallied", &vocab).unwrap()).unwrap();
        let b = enc.encode(&store, &TokenSequence::from_text("markets earnings", &vocab).unwrap()).unwrap();
        assert_ne!(a.matrix().row(0), b.matrix().row(0));
    }

    #[test]
    fn pool_examples() {
        let single = ContextMatrix(Matrix::row_vector(vec![0.25, -3.0]));
        assert_eq!(pool(&single).unwrap(), vec![0.25, -3.0]);
        let two = ContextMatrix(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        assert_eq!(pool(&two).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn pool_matches_naive_mean_and_stays_in_column_range() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let h = ContextMatrix(Matrix::from_rows(&rows).unwrap());
        let pooled = pool(&h).unwrap();
        for c in 0..7 {
            let naive = (rows[0][c] + rows[1][c] + rows[2][c]) / 3.0;
            assert!((pooled[c] - naive).abs() < 1e-12);
            let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= pooled[c] && pooled[c] <= hi);
        }
    }
}
