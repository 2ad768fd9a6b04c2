//! Reasoning chains read off attention, the explanation-consistency loss,
//! templated rationales and the lexical fact-support score.

use std::collections::HashSet;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeBase, RetrievalResult};
use crate::numeric::{Matrix, NodeId, ParamStore, Tape};
use crate::reasoner::{AttentionWeights, Prediction};
use crate::text::{tokenize_or_empty, TokenSequence};

pub const ATTRIBUTION_EPS: f64 = 1e-9;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;
const EVIDENCE_PREFIX: &str = "supported by ";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChainTarget {
    Token { index: usize, text: String },
    Fragment { position: usize, id: String },
}

impl ChainTarget {
    /// Token text, or the fragment id for knowledge positions.
    pub fn label(&self) -> &str {
        match self {
            Self::Token { text, .. } => text,
            Self::Fragment { id, .. } => id,
        }
    }

    /// Column of the target in the fused sequence.
    pub fn column(&self, n_tokens: usize) -> usize {
        match self {
            Self::Token { index, .. } => *index,
            Self::Fragment { position, .. } => n_tokens + position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStep {
    pub source_index: usize,
    pub source: String,
    pub target: ChainTarget,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub id: String,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasoningChain {
    pub steps: Vec<ChainStep>,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rationale {
    pub text: String,
    pub cited_fragment_ids: Vec<String>,
}

impl Rationale {
    /// Rebuilds the cited ids from the `supported by <id>:` lines of a text.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let cited_fragment_ids = evidence_lines(&text).map(|(id, _)| id.to_string()).collect();
        Self { text, cited_fragment_ids }
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.text.lines().filter(|l| !l.trim().is_empty())
    }
}

fn evidence_lines(text: &str) -> impl Iterator<Item = (&str, &str)> {
    text.lines().filter_map(|line| {
        let rest = line.strip_prefix(EVIDENCE_PREFIX)?;
        let (id, _) = rest.split_once(':')?;
        Some((id.trim(), line))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactScoreValue {
    pub value: f64,
    pub supported: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExplainLoss {
    pub kl: f64,
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ExplainNodes {
    pub kl: Option<NodeId>,
    pub entropy: NodeId,
    pub total: NodeId,
}

/// Records `KL(a_kb ‖ w) + β·H̄` over the head-averaged token rows.
///
/// Without knowledge positions only the entropy term remains.
pub fn record_explain_loss(
    tape: &mut Tape,
    heads: &[NodeId],
    n_tokens: usize,
    n_knowledge: usize,
    retrieval_weights: &[f64],
    beta: f64,
) -> Result<ExplainNodes> {
    if heads.is_empty() {
        return Err(Error::EmptyInput("no attention heads".into()));
    }
    if n_tokens == 0 {
        return Err(Error::EmptyInput("no token rows".into()));
    }
    let mut avg = heads[0];
    for &h in &heads[1..] {
        avg = tape.add(avg, h)?;
    }
    let avg = tape.scale(avg, 1.0 / heads.len() as f64)?;
    let token_rows = tape.slice_rows(avg, 0, n_tokens)?;
    let entropy = tape.mean_row_entropy(token_rows)?;
    let weighted = tape.scale(entropy, beta)?;
    if n_knowledge == 0 {
        return Ok(ExplainNodes { kl: None, entropy, total: weighted });
    }
    if retrieval_weights.len() != n_knowledge {
        return Err(Error::dimension("explain_loss", (1, n_knowledge), (1, retrieval_weights.len())));
    }
    let mass = tape.slice_cols(token_rows, n_tokens, n_tokens + n_knowledge)?;
    let raw = tape.mean_rows(mass)?;
    let a_kb = tape.normalize_smoothed(raw, ATTRIBUTION_EPS)?;
    let kl = tape.kl_to_constant(a_kb, retrieval_weights)?;
    let total = tape.add(kl, weighted)?;
    Ok(ExplainNodes { kl: Some(kl), entropy, total })
}

pub fn explain_loss(attn: &AttentionWeights, retrieval: &RetrievalResult, beta: f64) -> Result<ExplainLoss> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be finite and non-negative, got {beta}")));
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let heads = attn.heads.iter().map(|h| tape.constant(h.clone())).collect::<Result<Vec<_>>>()?;
    let nodes = record_explain_loss(&mut tape, &heads, attn.n_tokens, attn.n_knowledge, &retrieval.weights, beta)?;
    Ok(ExplainLoss {
        kl: nodes.kl.map_or(0.0, |k| tape.scalar(k)),
        entropy: tape.scalar(nodes.entropy),
        total: tape.scalar(nodes.total),
    })
}

pub fn extract_chain(
    attn: &AttentionWeights,
    retrieval: &RetrievalResult,
    tokens: &TokenSequence,
    max_edges: usize,
) -> Result<ReasoningChain> {
    if max_edges == 0 {
        return Err(Error::Config("max_chain_edges must be at least 1".into()));
    }
    let avg = attn.head_average()?;
    let n = attn.n_tokens;
    if tokens.len() != n || avg.rows() != n + attn.n_knowledge || avg.cols() != avg.rows() {
        return Err(Error::dimension("extract_chain", avg.shape(), (tokens.len(), n + attn.n_knowledge)));
    }
    if attn.n_knowledge > retrieval.len() {
        return Err(Error::dimension("extract_chain", (1, attn.n_knowledge), (1, retrieval.len())));
    }
    let mut edges: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..avg.cols()).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, avg.get(i, j)))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    edges.truncate(max_edges);

    let steps = edges
        .into_iter()
        .map(|(i, j, weight)| ChainStep {
            source_index: i,
            source: tokens.tokens[i].clone(),
            target: if j < n {
                ChainTarget::Token { index: j, text: tokens.tokens[j].clone() }
            } else {
                ChainTarget::Fragment { position: j - n, id: retrieval.fragment_ids[j - n].clone() }
            },
            weight,
        })
        .collect();
    let evidence = retrieval
        .fragment_ids
        .iter()
        .zip(&retrieval.weights)
        .map(|(id, &w)| Evidence { id: id.clone(), w })
        .collect();
    Ok(ReasoningChain { steps, evidence })
}

pub fn render_rationale(chain: &ReasoningChain, pred: &Prediction, kb: &KnowledgeBase) -> Result<Rationale> {
    if chain.steps.is_empty() {
        return Err(Error::EmptyInput("cannot render an empty chain".into()));
    }
    let mut lines = Vec::with_capacity(chain.steps.len() + chain.evidence.len());
    for step in &chain.steps {
        lines.push(format!(
            "predicted {} because \"{}\" attends to \"{}\" (w={:.4}).",
            pred.predicted_label,
            step.source,
            step.target.label(),
            step.weight
        ));
    }
    let mut cited = Vec::with_capacity(chain.evidence.len());
    for ev in &chain.evidence {
        let fragment = kb.find(&ev.id).ok_or_else(|| Error::Data(format!("unknown fragment id {:?}", ev.id)))?;
        lines.push(format!("{EVIDENCE_PREFIX}{}: \"{}\".", ev.id, fragment.text));
        cited.push(ev.id.clone());
    }
    Ok(Rationale { text: lines.join("\n"), cited_fragment_ids: cited })
}

pub fn fact_score(
    rationale: &Rationale,
    retrieval: &RetrievalResult,
    kb: &KnowledgeBase,
    overlap_threshold: f64,
) -> Result<FactScoreValue> {
    if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
        return Err(Error::Config(format!("overlap threshold must lie in (0, 1], got {overlap_threshold}")));
    }
    let mut supported = 0;
    let mut total = 0;
    for (id, line) in evidence_lines(&rationale.text) {
        total += 1;
        let Some(fragment) = kb.find(id).filter(|_| retrieval.contains(id)) else {
            continue;
        };
        let fragment_tokens: HashSet<String> = tokenize_or_empty(&fragment.text).into_iter().collect();
        if fragment_tokens.is_empty() {
            continue;
        }
        let sentence: HashSet<String> = tokenize_or_empty(line).into_iter().collect();
        let overlap = fragment_tokens.intersection(&sentence).count() as f64 / fragment_tokens.len() as f64;
        if overlap >= overlap_threshold {
            supported += 1;
        }
    }
    let value = if total == 0 { 0.0 } else { supported as f64 / total as f64 };
    Ok(FactScoreValue { value, supported, total })
}

/// Everything the `explain` command reports for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub prediction: Prediction,
    pub chain: ReasoningChain,
    pub rationale: Rationale,
}

impl Explanation {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "prediction": self.prediction.predicted_label,
            "steps": self.chain.steps.iter().map(|s| json!({
                "source": s.source,
                "target": s.target.label(),
                "weight": s.weight,
            })).collect::<Vec<_>>(),
            "evidence": self.chain.evidence,
            "rationale": self.rationale.text,
        })
    }
}

/// Head-averaged attention restricted to token query rows.
pub fn token_attention(attn: &AttentionWeights) -> Result<Matrix> {
    attn.head_average()?.slice_rows(0, attn.n_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::KnowledgeFragment;
    use crate::numeric::matrix::softmax_rows;
    use crate::text::Vocabulary;
    use rand::{Rng, SeedableRng};

    fn tokens(words: &[&str]) -> TokenSequence {
        let vocab = Vocabulary::build(&[words.to_vec()]);
        TokenSequence::from_text(&words.join(" "), &vocab).unwrap()
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_fragments(vec![
            KnowledgeFragment { id: "kb-1".into(), text: "acme outlook strong".into(), vector: vec![1.0, 0.0] },
            KnowledgeFragment { id: "kb-2".into(), text: "zenith outlook weak".into(), vector: vec![0.0, 1.0] },
            KnowledgeFragment { id: "kb-3".into(), text: "orbit outlook weak".into(), vector: vec![-1.0, 0.2] },
        ])
        .unwrap()
    }

    fn retrieval(ids: &[&str], weights: &[f64]) -> RetrievalResult {
        let kb = kb();
        RetrievalResult {
            fragment_ids: ids.iter().map(|s| s.to_string()).collect(),
            similarities: vec![0.5; ids.len()],
            weights: weights.to_vec(),
            positions: ids.iter().map(|id| kb.fragments().iter().position(|f| f.id == *id).unwrap()).collect(),
        }
    }

    fn attn(heads: Vec<Matrix>, n_tokens: usize, n_knowledge: usize) -> AttentionWeights {
        AttentionWeights { heads, n_tokens, n_knowledge }
    }

    fn prediction(label: &str) -> Prediction {
        Prediction { label_distribution: vec![1.0], predicted_label: label.into(), predicted_index: 0 }
    }

    #[test]
    fn uniform_attention_picks_lowest_pair() {
        let a = attn(vec![Matrix::filled(4, 4, 0.25)], 3, 1);
        let ret = retrieval(&["kb-1"], &[1.0]);
        let chain = extract_chain(&a, &ret, &tokens(&["a", "b", "c"]), 1).unwrap();
        assert_eq!(chain.steps.len(), 1);
        assert_eq!(chain.steps[0].source_index, 0);
        assert_eq!(chain.steps[0].target, ChainTarget::Token { index: 1, text: "b".into() });
        assert_eq!(chain.steps[0].weight, 0.25);
        assert_eq!(chain.evidence, vec![Evidence { id: "kb-1".into(), w: 1.0 }]);
    }

    #[test]
    fn concentrated_knowledge_edge_is_first() {
        let mut m = Matrix::filled(3, 3, 0.01);
        m.set(1, 2, 0.98);
        let a = attn(vec![m], 2, 1);
        let ret = retrieval(&["kb-2"], &[1.0]);
        let chain = extract_chain(&a, &ret, &tokens(&["x", "y"]), 5).unwrap();
        assert_eq!(chain.steps[0].source, "y");
        assert_eq!(chain.steps[0].target, ChainTarget::Fragment { position: 0, id: "kb-2".into() });
        // 2 token rows × 2 off-diagonal columns
        assert_eq!(chain.steps.len(), 4);
    }

    #[test]
    fn matches_brute_force_sort() {
        let head_a = Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]]).unwrap();
        let head_b = Matrix::from_rows(&[vec![0.4, 0.1, 0.5], vec![0.3, 0.2, 0.5], vec![0.3, 0.5, 0.2]]).unwrap();
        let a = attn(vec![head_a.clone(), head_b.clone()], 3, 0);
        let chain = extract_chain(&a, &retrieval(&[], &[]), &tokens(&["p", "q", "r"]), 6).unwrap();

        let mut brute = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    brute.push(((head_a.get(i, j) + head_b.get(i, j)) / 2.0, i, j));
                }
            }
        }
        // bubble sort: weight desc, then (i, j) asc
        for pass in 0..brute.len() {
            for k in 0..brute.len() - 1 - pass {
                let (x, y) = (brute[k], brute[k + 1]);
                if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) {
                    brute.swap(k, k + 1);
                }
            }
        }
        let got: Vec<(f64, usize, usize)> =
            chain.steps.iter().map(|s| (s.weight, s.source_index, s.target.column(3))).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn chain_rejects_zero_edges() {
        let a = attn(vec![Matrix::filled(2, 2, 0.5)], 2, 0);
        assert!(extract_chain(&a, &retrieval(&[], &[]), &tokens(&["a", "b"]), 0).is_err());
    }

    #[test]
    fn kl_vanishes_when_attribution_matches_weights() {
        // token rows put 0.3 / 0.1 on the two knowledge positions: a_kb = (0.75, 0.25)
        let m = Matrix::from_rows(&[
            vec![0.4, 0.2, 0.3, 0.1],
            vec![0.1, 0.5, 0.3, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.25, 0.25, 0.25, 0.25],
        ])
        .unwrap();
        let a = attn(vec![m.clone()], 2, 2);
        let loss = explain_loss(&a, &retrieval(&["kb-1", "kb-2"], &[0.75, 0.25]), 0.1).unwrap();
        assert!(loss.kl.abs() < 1e-9, "{loss:?}");
        let entropy: f64 = (0..2).map(|r| m.row(r).iter().map(|p| -p * p.ln()).sum::<f64>()).sum::<f64>() / 2.0;
        assert!((loss.entropy - entropy).abs() < 1e-9);
        assert!((loss.total - 0.1 * entropy).abs() < 1e-9);
    }

    #[test]
    fn single_fragment_kl_is_zero() {
        let a = attn(vec![Matrix::filled(3, 3, 1.0 / 3.0)], 2, 1);
        let loss = explain_loss(&a, &retrieval(&["kb-1"], &[1.0]), 0.0).unwrap();
        assert!(loss.kl.abs() < 1e-12);
        assert!(loss.total.abs() < 1e-12);
    }

    #[test]
    fn kl_example() {
        // attribution (0.9, 0.1) against uniform weights
        let m = Matrix::from_rows(&[vec![0.1, 0.81, 0.09], vec![0.5, 0.25, 0.25], vec![0.5, 0.25, 0.25]]).unwrap();
        let a = attn(vec![m], 1, 2);
        let loss = explain_loss(&a, &retrieval(&["kb-1", "kb-2"], &[0.5, 0.5]), 0.0).unwrap();
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((loss.kl - expected).abs() < 1e-6, "{loss:?}");
        assert!((loss.kl - 0.3681).abs() < 1e-3);
    }

    #[test]
    fn no_knowledge_positions_leaves_entropy_only() {
        let a = attn(vec![Matrix::filled(2, 2, 0.5)], 2, 0);
        let loss = explain_loss(&a, &retrieval(&["kb-1"], &[1.0]), 2.0).unwrap();
        assert_eq!(loss.kl, 0.0);
        assert!((loss.total - 2.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn explain_loss_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let mut store = ParamStore::new();
        let logits: Vec<_> = (0..2)
            .map(|h| store.add_uniform(format!("logits{h}"), n, n, 2.0, &mut rng))
            .collect();
        let weights = [0.6, 0.3, 0.1];
        let record = |s: &ParamStore| -> Result<f64> {
            let mut t = Tape::new(s);
            let heads: Vec<_> = logits.iter().map(|&id| {
                let p = t.param(id);
                t.softmax_rows(p).unwrap()
            }).collect();
            let nodes = record_explain_loss(&mut t, &heads, 2, 3, &weights, 0.1)?;
            Ok(t.scalar(nodes.total))
        };
        let mut t = Tape::new(&store);
        let heads: Vec<_> = logits.iter().map(|&id| {
            let p = t.param(id);
            t.softmax_rows(p).unwrap()
        }).collect();
        let nodes = record_explain_loss(&mut t, &heads, 2, 3, &weights, 0.1).unwrap();
        let grads = t.backward(nodes.total).unwrap();
        let mut probe = store.clone();
        for &id in &logits {
            for e in 0..n * n {
                let numeric = crate::numeric::gradcheck::central_difference(&mut probe, id, e, 1e-5, record).unwrap();
                let analytic = grads.get(id).unwrap().values()[e];
                let err = crate::numeric::gradcheck::rel_error(analytic, numeric);
                assert!(err < 1e-4 || (analytic - numeric).abs() < 1e-10, "entry {e}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn explain_loss_is_non_negative_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.gen_range(1..5);
            let k = rng.gen_range(0..4);
            let size = n + k;
            let heads = (0..rng.gen_range(1..4))
                .map(|_| {
                    let raw = Matrix::from_vec(size, size, (0..size * size).map(|_| rng.gen_range(-6.0..6.0)).collect())
                        .unwrap();
                    softmax_rows(&raw).unwrap()
                })
                .collect();
            let w = crate::numeric::softmax(&(0..k).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>());
            let ids: Vec<&str> = ["kb-1", "kb-2", "kb-3"][..k].to_vec();
            let loss = explain_loss(&attn(heads, n, k), &retrieval(&ids, &w), rng.gen_range(0.0..1.0)).unwrap();
            assert!(loss.total >= 0.0 && loss.kl >= -1e-12, "{loss:?}");
        }
    }

    fn chain_two_steps() -> ReasoningChain {
        ReasoningChain {
            steps: vec![
                ChainStep {
                    source_index: 0,
                    source: "acme".into(),
                    target: ChainTarget::Fragment { position: 0, id: "kb-1".into() },
                    weight: 0.98765,
                },
                ChainStep {
                    source_index: 1,
                    source: "today".into(),
                    target: ChainTarget::Token { index: 0, text: "acme".into() },
                    weight: 0.5,
                },
            ],
            evidence: vec![Evidence { id: "kb-1".into(), w: 1.0 }],
        }
    }

    #[test]
    fn rationale_template() {
        let r = render_rationale(&chain_two_steps(), &prediction("strong"), &kb()).unwrap();
        assert_eq!(r.sentences().count(), 3);
        assert_eq!(
            r.text,
            "predicted strong because \"acme\" attends to \"kb-1\" (w=0.9877).\n\
             predicted strong because \"today\" attends to \"acme\" (w=0.5000).\n\
             supported by kb-1: \"acme outlook strong\"."
        );
        assert_eq!(r.cited_fragment_ids, vec!["kb-1"]);
        assert_eq!(r, render_rationale(&chain_two_steps(), &prediction("strong"), &kb()).unwrap());
        assert_eq!(Rationale::from_text(r.text.clone()), r);
    }

    #[test]
    fn rationale_errors() {
        let mut chain = chain_two_steps();
        chain.evidence[0].id = "kb-404".into();
        assert!(matches!(render_rationale(&chain, &prediction("x"), &kb()), Err(Error::Data(_))));
        chain.steps.clear();
        assert!(render_rationale(&chain, &prediction("x"), &kb()).is_err());
    }

    #[test]
    fn fact_score_examples() {
        let kb = kb();
        let ret = retrieval(&["kb-1", "kb-2"], &[0.5, 0.5]);
        let verbatim =
            Rationale::from_text("supported by kb-1: \"acme outlook strong\".\nsupported by kb-2: \"zenith outlook weak\".");
        assert_eq!(fact_score(&verbatim, &ret, &kb, 0.5).unwrap(), FactScoreValue { value: 1.0, supported: 2, total: 2 });

        let foreign = Rationale::from_text("supported by kb-3: \"orbit outlook weak\".");
        assert_eq!(fact_score(&foreign, &ret, &kb, 0.5).unwrap().value, 0.0);

        let half = Rationale::from_text("supported by kb-1: \"acme outlook strong\".\nsupported by kb-2: \"nothing here\".");
        assert_eq!(fact_score(&half, &ret, &kb, 0.5).unwrap().value, 0.5);

        let none = Rationale::from_text("predicted x because \"a\" attends to \"b\" (w=0.5000).");
        assert_eq!(fact_score(&none, &ret, &kb, 0.5).unwrap(), FactScoreValue { value: 0.0, supported: 0, total: 0 });
        assert!(fact_score(&none, &ret, &kb, 0.0).is_err());
    }

    #[test]
    fn fact_score_is_monotone() {
        let kb = kb();
        let ret = retrieval(&["kb-1", "kb-2"], &[0.5, 0.5]);
        let good = "supported by kb-1: \"acme outlook strong\".";
        let bad = "supported by kb-3: \"orbit outlook weak\".";
        let mut text = String::from("supported by kb-2: \"zenith\".");
        let mut last = fact_score(&Rationale::from_text(text.clone()), &ret, &kb, 0.5).unwrap().value;
        for add in [good, bad, good, bad, bad, good] {
            text.push('\n');
            text.push_str(add);
            let v = fact_score(&Rationale::from_text(text.clone()), &ret, &kb, 0.5).unwrap().value;
            if add == good {
                assert!(v >= last);
            } else {
                assert!(v <= last);
            }
            last = v;
        }
    }

    #[test]
    fn explanation_json_shape() {
        let chain = chain_two_steps();
        let pred = prediction("strong");
        let rationale = render_rationale(&chain, &pred, &kb()).unwrap();
        let json = Explanation { prediction: pred, chain, rationale }.to_json();
        assert_eq!(json["prediction"], "strong");
        assert_eq!(json["steps"][0]["target"], "kb-1");
        assert_eq!(json["evidence"][0]["id"], "kb-1");
        assert_eq!(json["evidence"][0]["w"], 1.0);
        assert!(json["rationale"].as_str().unwrap().starts_with("predicted strong"));
    }
}
