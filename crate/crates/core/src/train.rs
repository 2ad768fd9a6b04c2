//! Joint optimization of the task and explanation losses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{OptimizerKind, TrainConfig};
use crate::corpus::{label_set, validate_corpus, CorpusExample};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBase, KnowledgeEntry};
use crate::model::{LossBreakdown, Model};
use crate::numeric::{Matrix, ParamStore};
use crate::text::{tokenize, Vocabulary, UNK};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

// Stream separators so shuffling and noise never share a generator with
// parameter initialization.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = 0x4e4f_4953;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: i32,
    moments: Vec<(Matrix, Matrix)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamStore) -> Self {
        let moments = match kind {
            OptimizerKind::Adam => params
                .iter()
                .map(|p| (Matrix::zeros(p.value.rows(), p.value.cols()), Matrix::zeros(p.value.rows(), p.value.cols())))
                .collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self { kind, learning_rate, step: 0, moments }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies the gradients accumulated in `params` and clears them.
    pub fn apply(&mut self, params: &mut ParamStore) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    for (v, g) in p.value.values_mut().iter_mut().zip(p.gradient.values()) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
                    let grads = p.gradient.values();
                    let values = p.value.values_mut();
                    for (((x, &g), m), v) in
                        values.iter_mut().zip(grads).zip(m.values_mut().iter_mut()).zip(v.values_mut().iter_mut())
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *x -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        params.zero_grad();
    }
}

/// One update on the mean loss of `batch`. Per-example passes run in
/// parallel; gradients are summed in batch order so the result does not
/// depend on scheduling.
pub fn train_step(
    model: &mut Model,
    batch: &[CorpusExample],
    kb: &KnowledgeBase,
    optimizer: &mut Optimizer,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let results: Vec<_> = {
        let frozen = &*model;
        batch.par_iter().map(|ex| frozen.loss_and_gradients(ex, kb)).collect::<Result<_>>()?
    };
    let scale = 1.0 / batch.len() as f64;
    model.params.zero_grad();
    let mut losses = Vec::with_capacity(results.len());
    for (loss, grads) in &results {
        model.params.accumulate(grads, scale)?;
        losses.push(*loss);
    }
    optimizer.apply(&mut model.params);
    Ok(LossBreakdown::mean(&losses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Vocabulary over every corpus and knowledge text.
pub fn build_vocabulary(corpus: &[CorpusExample], knowledge: &[KnowledgeEntry]) -> Result<Vocabulary> {
    let mut docs = Vec::with_capacity(corpus.len() + knowledge.len());
    for ex in corpus {
        docs.push(tokenize(&ex.text)?);
    }
    for entry in knowledge {
        docs.push(tokenize(&entry.text)?);
    }
    Ok(Vocabulary::build(&docs))
}

/// Trains from scratch. Fragment vectors are embedded once, before the first
/// update, and never change.
pub fn train(corpus: &[CorpusExample], knowledge: &[KnowledgeEntry], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    validate_corpus(corpus)?;
    let labels = label_set(corpus);
    if labels.len() < 2 {
        return Err(Error::Config(format!("training needs at least two distinct labels, found {labels:?}")));
    }
    let vocab = build_vocabulary(corpus, knowledge)?;
    let data = if cfg.noise_ratio > 0.0 {
        inject_noise(corpus, cfg.noise_ratio, cfg.seed ^ NOISE_STREAM, &vocab)?
    } else {
        corpus.to_vec()
    };
    let mut model = Model::init(cfg.clone(), vocab, labels)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let kb = model.build_kb(knowledge)?;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<CorpusExample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let loss = train_step(&mut model, &batch, &kb, &mut optimizer)?;
            let w = batch.len() as f64;
            sum.task += w * loss.task;
            sum.explain += w * loss.explain;
            sum.total += w * loss.total;
        }
        let n = data.len() as f64;
        history.push(EpochStats {
            epoch,
            loss: LossBreakdown { task: sum.task / n, explain: sum.explain / n, total: sum.total / n },
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Corrupts `round(ratio·N)` examples chosen by a seeded shuffle. Each token
/// of a chosen example is replaced with probability 1/2 by a different
/// vocabulary token; when no token was drawn, one position is replaced so
/// that every chosen example actually changes. Labels are untouched.
pub fn inject_noise(
    corpus: &[CorpusExample],
    ratio: f64,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Vec<CorpusExample>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("noise ratio must lie in [0, 1], got {ratio}")));
    }
    let mut out = corpus.to_vec();
    let count = (ratio * corpus.len() as f64).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    let pool: Vec<&str> = vocab.tokens().iter().map(String::as_str).filter(|t| *t != UNK).collect();
    if pool.len() < 2 {
        return Err(Error::Data("noise injection needs at least two vocabulary tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    indices.shuffle(&mut rng);
    let mut chosen = indices[..count].to_vec();
    chosen.sort_unstable();
    for i in chosen {
        let mut tokens = tokenize(&out[i].text)?;
        if tokens.is_empty() {
            continue;
        }
        let replace = |t: &str, rng: &mut ChaCha8Rng| loop {
            let candidate = pool[rng.gen_range(0..pool.len())];
            if candidate != t {
                return candidate.to_string();
            }
        };
        let mut changed = false;
        for t in tokens.iter_mut() {
            if rng.gen_bool(0.5) {
                *t = replace(t, &mut rng);
                changed = true;
            }
        }
        if !changed {
            let pos = rng.gen_range(0..tokens.len());
            tokens[pos] = replace(&tokens[pos], &mut rng);
        }
        out[i].text = tokens.join(" ");
    }
    Ok(out)
}
