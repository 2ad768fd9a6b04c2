//! Corpus-level evaluation of a trained model.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::explain::{fact_score, DEFAULT_OVERLAP_THRESHOLD};
use crate::knowledge::{KnowledgeBase, KnowledgeEntry};
use crate::metrics::{bleu, rouge_1, rouge_l};
use crate::model::Model;
use crate::text::tokenize;

pub const BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub bleu: f64,
    pub fact_score: f64,
    pub n_examples: usize,
    pub n_with_references: usize,
}

impl MetricsReport {
    /// The same report with every score multiplied by 100.
    pub fn as_percent(&self) -> Self {
        Self {
            accuracy: 100.0 * self.accuracy,
            rouge1_f: 100.0 * self.rouge1_f,
            rouge_l_f: 100.0 * self.rouge_l_f,
            bleu: 100.0 * self.bleu,
            fact_score: 100.0 * self.fact_score,
            ..*self
        }
    }

    pub fn to_json(&self, config: &TrainConfig) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value["config_echo"] = serde_json::to_value(config).expect("config serializes");
        value
    }
}

/// Overlap scores of one rationale against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceScores {
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub predicted: String,
    pub correct: bool,
    pub rationale: String,
    pub reference: Option<ReferenceScores>,
    pub fact_score: f64,
}

pub fn score_rationale(rationale: &str, reference: &str) -> Result<ReferenceScores> {
    let cand = tokenize(rationale)?;
    let reference = tokenize(reference)?;
    Ok(ReferenceScores {
        rouge1_f: rouge_1(&cand, &reference)?.f,
        rouge_l_f: rouge_l(&cand, &reference)?.f,
        bleu: bleu(&cand, std::slice::from_ref(&reference), BLEU_ORDER)?,
    })
}

pub fn score_example(model: &Model, kb: &KnowledgeBase, example: &CorpusExample) -> Result<ExampleScore> {
    let pass = model.forward(&example.text, kb)?;
    let explanation = model.explain_pass(&pass, kb)?;
    let reference = example
        .reference_explanation
        .as_deref()
        .map(|r| score_rationale(&explanation.rationale.text, r))
        .transpose()?;
    let fact = fact_score(&explanation.rationale, &pass.retrieval, kb, DEFAULT_OVERLAP_THRESHOLD)?;
    Ok(ExampleScore {
        id: example.id.clone(),
        correct: pass.prediction.predicted_label == example.label,
        predicted: pass.prediction.predicted_label,
        rationale: explanation.rationale.text,
        reference,
        fact_score: fact.value,
    })
}

/// Mean of per-example scores; ROUGE and BLEU over the examples that carry a
/// reference explanation.
pub fn aggregate(scores: &[ExampleScore]) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Data("evaluation corpus has no labeled examples".into()));
    }
    let n = scores.len() as f64;
    let refs: Vec<&ReferenceScores> = scores.iter().filter_map(|s| s.reference.as_ref()).collect();
    let mean_ref = |f: fn(&ReferenceScores) -> f64| {
        if refs.is_empty() {
            0.0
        } else {
            refs.iter().map(|r| f(r)).sum::<f64>() / refs.len() as f64
        }
    };
    Ok(MetricsReport {
        accuracy: scores.iter().filter(|s| s.correct).count() as f64 / n,
        rouge1_f: mean_ref(|r| r.rouge1_f),
        rouge_l_f: mean_ref(|r| r.rouge_l_f),
        bleu: mean_ref(|r| r.bleu),
        fact_score: scores.iter().map(|s| s.fact_score).sum::<f64>() / n,
        n_examples: scores.len(),
        n_with_references: refs.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub examples: Vec<ExampleScore>,
}

pub fn evaluate_with_kb(model: &Model, corpus: &[CorpusExample], kb: &KnowledgeBase) -> Result<Evaluation> {
    if corpus.is_empty() {
        return Err(Error::Data("evaluation corpus has no labeled examples".into()));
    }
    for ex in corpus {
        model.label_index(&ex.label)?;
    }
    let examples: Vec<ExampleScore> =
        corpus.par_iter().map(|ex| score_example(model, kb, ex)).collect::<Result<_>>()?;
    Ok(Evaluation { report: aggregate(&examples)?, examples })
}

/// Embeds the knowledge entries with the model's encoder, then evaluates.
pub fn evaluate(model: &Model, corpus: &[CorpusExample], knowledge: &[KnowledgeEntry]) -> Result<Evaluation> {
    let kb = model.build_kb(knowledge)?;
    evaluate_with_kb(model, corpus, &kb)
}
