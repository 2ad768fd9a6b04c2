//! The assembled network: encoder, retrieval, fusion, reasoning and the
//! classification head, plus the joint loss `L = L_task + λ·L_explain`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::explain::{extract_chain, record_explain_loss, render_rationale, Explanation};
use crate::knowledge::{KnowledgeBase, KnowledgeEntry, RetrievalResult};
use crate::numeric::gradcheck::{grad_check, GradCheckReport, Objective, DEFAULT_PERTURBATION};
use crate::numeric::{Gradients, Matrix, NodeId, ParamStore, Tape};
use crate::reasoner::{record_fuse, AttentionParams, AttentionWeights, Classifier, FusionConfig, Prediction};
use crate::text::{pool, ContextMatrix, Encoder, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub explain: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn mean(items: &[LossBreakdown]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        Self {
            task: items.iter().map(|l| l.task).sum::<f64>() / n,
            explain: items.iter().map(|l| l.explain).sum::<f64>() / n,
            total: items.iter().map(|l| l.total).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    encoder: Encoder,
    attention: AttentionParams,
    classifier: Classifier,
}

/// The encoder exactly as initialized. Fragment vectors are embedded with it,
/// so a knowledge base stays valid however far training moves the encoder.
#[derive(Debug, Clone)]
struct IngestEncoder {
    params: ParamStore,
    encoder: Encoder,
}

impl IngestEncoder {
    fn new(config: &TrainConfig, vocab_size: usize) -> Self {
        // The encoder is the first draw from the seeded generator in `Model::init`.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::init(&mut params, vocab_size, config.d_model, &mut rng);
        Self { params, encoder }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub params: ParamStore,
    layout: Layout,
    ingest: IngestEncoder,
}

/// Intermediate values of one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub tokens: TokenSequence,
    pub retrieval: RetrievalResult,
    pub fused: Matrix,
    pub z_out: Matrix,
    pub attention: AttentionWeights,
    pub prediction: Prediction,
}

struct Recorded {
    retrieval: RetrievalResult,
    n_knowledge: usize,
    fused: NodeId,
    z_out: NodeId,
    heads: Vec<NodeId>,
    probs: NodeId,
}

struct LossNodes {
    task: NodeId,
    explain: NodeId,
    total: NodeId,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `config.seed`.
    pub fn init(config: TrainConfig, vocab: Vocabulary, labels: Vec<String>) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::init(&mut params, vocab.len(), config.d_model, &mut rng);
        let attention = AttentionParams::init(&mut params, config.d_model, config.heads, &mut rng)?;
        let classifier = Classifier::init(&mut params, config.d_model, labels.len(), &mut rng)?;
        let ingest = IngestEncoder::new(&config, vocab.len());
        Ok(Self { config, vocab, labels, params, layout: Layout { encoder, attention, classifier }, ingest })
    }

    /// Reassembles a model from stored parameters, checking every shape.
    pub fn from_parts(config: TrainConfig, vocab: Vocabulary, labels: Vec<String>, params: ParamStore) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Data("label set is empty".into()));
        }
        let d = config.d_model;
        let encoder = Encoder::locate(&params, d)?;
        let attention = AttentionParams::locate(&params, d, config.heads)?;
        let classifier = Classifier::locate(&params)?;
        let dh = config.d_head();
        let mut expected = vec![
            (encoder.embedding, (vocab.len(), d)),
            (encoder.w_q, (d, d)),
            (encoder.w_k, (d, d)),
            (encoder.w_v, (d, d)),
            (attention.w_o, (d, d)),
            (classifier.weight, (d, labels.len())),
            (classifier.bias, (1, labels.len())),
        ];
        for h in &attention.heads {
            expected.extend([(h.w_q, (d, dh)), (h.w_k, (d, dh)), (h.w_v, (d, dh))]);
        }
        for (id, shape) in expected {
            let p = params.get(id);
            if p.value.shape() != shape {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    p.value.shape(),
                    shape
                )));
            }
        }
        if params.len() != 7 + 3 * config.heads {
            return Err(Error::Data(format!("unexpected parameter count {}", params.len())));
        }
        let ingest = IngestEncoder::new(&config, vocab.len());
        Ok(Self { config, vocab, labels, params, layout: Layout { encoder, attention, classifier }, ingest })
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig { alpha: self.config.alpha, top_k: self.config.top_k, tau: self.config.tau }
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Data(format!("label {label:?} is not in the label set {:?}", self.labels)))
    }

    pub fn tokens(&self, text: &str) -> Result<TokenSequence> {
        TokenSequence::from_text(text, &self.vocab)
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<ContextMatrix> {
        self.layout.encoder.encode(&self.params, tokens)
    }

    /// Mean-pooled encoding of `text`: the retrieval query.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        pool(&self.encode(&self.tokens(text)?)?)
    }

    /// Mean-pooled encoding of `text` under the initial encoder.
    pub fn embed_fragment(&self, text: &str) -> Result<Vec<f64>> {
        pool(&self.ingest.encoder.encode(&self.ingest.params, &self.tokens(text)?)?)
    }

    /// Embeds every entry with the initial encoder.
    pub fn build_kb(&self, entries: &[KnowledgeEntry]) -> Result<KnowledgeBase> {
        KnowledgeBase::ingest(entries, |text| self.embed_fragment(text))
    }

    pub fn retrieve(&self, text: &str, kb: &KnowledgeBase) -> Result<RetrievalResult> {
        kb.retrieve(&self.embed(text)?, self.config.top_k, self.config.tau)
    }

    fn record(
        &self,
        tape: &mut Tape,
        tokens: &TokenSequence,
        kb: &KnowledgeBase,
        fixed: Option<&RetrievalResult>,
    ) -> Result<Recorded> {
        let h = self.layout.encoder.record(tape, &tokens.ids)?;
        let retrieval = match fixed {
            Some(r) => r.clone(),
            None => kb.retrieve(&tape.value(h).mean_rows()?.into_values(), self.config.top_k, self.config.tau)?,
        };
        let (fused, n_knowledge) = record_fuse(tape, h, &retrieval, kb, self.config.alpha)?;
        let (z_out, heads) = self.layout.attention.record(tape, fused)?;
        let probs = self.layout.classifier.record(tape, z_out, tokens.len())?;
        Ok(Recorded { retrieval, n_knowledge, fused, z_out, heads, probs })
    }

    fn record_loss(&self, tape: &mut Tape, rec: &Recorded, n_tokens: usize, target: usize) -> Result<LossNodes> {
        let task = tape.neg_log_pick(rec.probs, target)?;
        let explain = record_explain_loss(
            tape,
            &rec.heads,
            n_tokens,
            rec.n_knowledge,
            &rec.retrieval.weights,
            self.config.beta,
        )?
        .total;
        let scaled = tape.scale(explain, self.config.lambda)?;
        let total = tape.add(task, scaled)?;
        Ok(LossNodes { task, explain, total })
    }

    fn breakdown(tape: &Tape, nodes: &LossNodes) -> LossBreakdown {
        LossBreakdown { task: tape.scalar(nodes.task), explain: tape.scalar(nodes.explain), total: tape.scalar(nodes.total) }
    }

    pub fn forward(&self, text: &str, kb: &KnowledgeBase) -> Result<ForwardPass> {
        let tokens = self.tokens(text)?;
        let mut tape = Tape::new(&self.params);
        let rec = self.record(&mut tape, &tokens, kb, None)?;
        let prediction = Prediction::from_distribution(tape.value(rec.probs).values().to_vec(), &self.labels)?;
        let attention = AttentionWeights {
            heads: rec.heads.iter().map(|&h| tape.value(h).clone()).collect(),
            n_tokens: tokens.len(),
            n_knowledge: rec.n_knowledge,
        };
        Ok(ForwardPass {
            fused: tape.value(rec.fused).clone(),
            z_out: tape.value(rec.z_out).clone(),
            retrieval: rec.retrieval,
            tokens,
            attention,
            prediction,
        })
    }

    pub fn explain_pass(&self, pass: &ForwardPass, kb: &KnowledgeBase) -> Result<Explanation> {
        let chain = extract_chain(&pass.attention, &pass.retrieval, &pass.tokens, self.config.max_chain_edges)?;
        let rationale = render_rationale(&chain, &pass.prediction, kb)?;
        Ok(Explanation { prediction: pass.prediction.clone(), chain, rationale })
    }

    pub fn explain(&self, text: &str, kb: &KnowledgeBase) -> Result<Explanation> {
        self.explain_pass(&self.forward(text, kb)?, kb)
    }

    pub fn total_loss(&self, example: &CorpusExample, kb: &KnowledgeBase) -> Result<LossBreakdown> {
        let tokens = self.tokens(&example.text)?;
        let target = self.label_index(&example.label)?;
        let mut tape = Tape::new(&self.params);
        let rec = self.record(&mut tape, &tokens, kb, None)?;
        let nodes = self.record_loss(&mut tape, &rec, tokens.len(), target)?;
        Ok(Self::breakdown(&tape, &nodes))
    }

    /// Loss and parameter gradients for one example. Retrieval and the
    /// fragment vectors are treated as constants.
    pub fn loss_and_gradients(&self, example: &CorpusExample, kb: &KnowledgeBase) -> Result<(LossBreakdown, Gradients)> {
        let tokens = self.tokens(&example.text)?;
        let target = self.label_index(&example.label)?;
        let mut tape = Tape::new(&self.params);
        let rec = self.record(&mut tape, &tokens, kb, None)?;
        let nodes = self.record_loss(&mut tape, &rec, tokens.len(), target)?;
        let loss = Self::breakdown(&tape, &nodes);
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss on example {:?}", example.id)));
        }
        Ok((loss, tape.backward(nodes.total)?))
    }

    /// The joint loss of one example as a finite-difference objective, with
    /// retrieval frozen at the current parameters.
    pub fn objective<'a>(&'a self, example: &CorpusExample, kb: &'a KnowledgeBase) -> Result<LossObjective<'a>> {
        let tokens = self.tokens(&example.text)?;
        let target = self.label_index(&example.label)?;
        let retrieval = self.retrieve(&example.text, kb)?;
        Ok(LossObjective { model: self, kb, tokens, target, retrieval })
    }
}

pub struct LossObjective<'a> {
    model: &'a Model,
    kb: &'a KnowledgeBase,
    tokens: TokenSequence,
    target: usize,
    retrieval: RetrievalResult,
}

impl LossObjective<'_> {
    fn run<T>(&self, store: &ParamStore, f: impl FnOnce(&Tape, &LossNodes) -> Result<T>) -> Result<T> {
        let mut tape = Tape::new(store);
        let rec = self.model.record(&mut tape, &self.tokens, self.kb, Some(&self.retrieval))?;
        let nodes = self.model.record_loss(&mut tape, &rec, self.tokens.len(), self.target)?;
        f(&tape, &nodes)
    }

    pub fn breakdown_at(&self, store: &ParamStore) -> Result<LossBreakdown> {
        self.run(store, |t, n| Ok(Model::breakdown(t, n)))
    }
}

impl Objective for LossObjective<'_> {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn loss_at(&self, params: &ParamStore) -> Result<f64> {
        self.run(params, |t, n| Ok(t.scalar(n.total)))
    }

    fn gradients(&self) -> Result<Gradients> {
        self.run(&self.model.params, |t, n| t.backward(n.total))
    }
}

const TINY_WORDS: [&str; 29] = [
    "acme", "bolt", "crane", "delta", "ember", "flint", "grove", "harbor", "iris", "jade", "kite", "lumen", "maple",
    "nova", "onyx", "pike", "quill", "raven", "sable", "tide", "umber", "vale", "wren", "xenon", "yarrow", "zephyr",
    "outlook", "strong", "weak",
];

/// The small configuration used for gradient verification: `d_model = 8`,
/// two heads, a five-token input, two retrieved fragments and a vocabulary
/// of about thirty tokens.
pub fn tiny_gradcheck_setup(seed: u64) -> Result<(Model, KnowledgeBase, CorpusExample)> {
    use rand::seq::SliceRandom;
    use rand::Rng;

    let config = TrainConfig { d_model: 8, heads: 2, top_k: 2, seed, ..TrainConfig::default() };
    let vocab = Vocabulary::build(&[TINY_WORDS.to_vec()]);
    let labels = vec!["strong".to_string(), "weak".to_string()];
    let mut model = Model::init(config, vocab, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    // Wider initial values keep attention away from uniform so every path carries signal.
    for p in model.params.iter_mut() {
        for v in p.value.values_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let names = &TINY_WORDS[..26];
    let entries: Vec<KnowledgeEntry> = (0..4)
        .map(|i| {
            let picks: Vec<&str> = names.choose_multiple(&mut rng, 2).copied().collect();
            let polarity = if rng.gen_bool(0.5) { "strong" } else { "weak" };
            KnowledgeEntry { id: format!("kb-{i}"), text: format!("{} {} outlook {polarity}", picks[0], picks[1]) }
        })
        .collect();
    let kb = model.build_kb(&entries)?;
    let words: Vec<&str> = (0..5).map(|_| *names.choose(&mut rng).expect("non-empty")).collect();
    let example = CorpusExample {
        id: "gradcheck".into(),
        text: words.join(" "),
        label: if rng.gen_bool(0.5) { "strong" } else { "weak" }.into(),
        reference_explanation: None,
    };
    Ok((model, kb, example))
}

pub fn gradcheck_tiny(seed: u64) -> Result<GradCheckReport> {
    let (model, kb, example) = tiny_gradcheck_setup(seed)?;
    grad_check(&model.objective(&example, &kb)?, DEFAULT_PERTURBATION)
}
