//! External knowledge base with cosine-similarity top-k retrieval.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::matrix::{dot, norm, softmax};

pub const DEFAULT_TAU: f64 = 0.1;

/// One line of a knowledge file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeFragment {
    pub id: String,
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    fragments: Vec<KnowledgeFragment>,
    dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub fragment_ids: Vec<String>,
    pub similarities: Vec<f64>,
    pub weights: Vec<f64>,
    /// Positions of the selected fragments inside the knowledge base.
    #[serde(skip)]
    pub positions: Vec<usize>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.fragment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragment_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.fragment_ids.iter().any(|f| f == id)
    }
}

pub fn load_knowledge(path: &Path) -> Result<Vec<KnowledgeEntry>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open knowledge file {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: KnowledgeEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: malformed knowledge line: {e}", path.display(), i + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn save_knowledge(path: &Path, entries: &[KnowledgeEntry]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        writeln!(out, "{}", serde_json::to_string(e).expect("knowledge entry serializes"))?;
    }
    out.flush()?;
    Ok(())
}

impl KnowledgeBase {
    /// Embeds every entry once with `embed`; the resulting vectors are frozen.
    pub fn ingest<F>(entries: &[KnowledgeEntry], embed: F) -> Result<Self>
    where
        F: Fn(&str) -> Result<Vec<f64>> + Sync,
    {
        if entries.is_empty() {
            return Err(Error::Data("knowledge base needs at least one fragment".into()));
        }
        let mut seen = HashSet::new();
        for e in entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate knowledge fragment id {:?}", e.id)));
            }
            if e.text.trim().is_empty() {
                return Err(Error::Data(format!("knowledge fragment {:?} has empty text", e.id)));
            }
        }
        let vectors: Vec<Vec<f64>> = entries.par_iter().map(|e| embed(&e.text)).collect::<Result<_>>()?;
        let fragments = entries
            .iter()
            .zip(vectors)
            .map(|(e, vector)| KnowledgeFragment { id: e.id.clone(), text: e.text.clone(), vector })
            .collect();
        Self::from_fragments(fragments)
    }

    pub fn from_fragments(fragments: Vec<KnowledgeFragment>) -> Result<Self> {
        let dimension = fragments
            .first()
            .map(|f| f.vector.len())
            .ok_or_else(|| Error::Data("knowledge base needs at least one fragment".into()))?;
        let mut seen = HashSet::new();
        for f in &fragments {
            if !seen.insert(f.id.as_str()) {
                return Err(Error::Data(format!("duplicate knowledge fragment id {:?}", f.id)));
            }
            if f.vector.len() != dimension {
                return Err(Error::dimension("knowledge fragment", (1, dimension), (1, f.vector.len())));
            }
            if !f.vector.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("fragment {:?} has a non-finite vector", f.id)));
            }
            if norm(&f.vector) == 0.0 {
                return Err(Error::Data(format!("fragment {:?} has a zero vector", f.id)));
            }
        }
        Ok(Self { fragments, dimension })
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fragments(&self) -> &[KnowledgeFragment] {
        &self.fragments
    }

    pub fn fragment(&self, position: usize) -> &KnowledgeFragment {
        &self.fragments[position]
    }

    pub fn find(&self, id: &str) -> Option<&KnowledgeFragment> {
        self.fragments.iter().find(|f| f.id == id)
    }

    /// Top-k fragments by cosine similarity with temperature-softmax weights.
    pub fn retrieve(&self, query: &[f64], top_k: usize, tau: f64) -> Result<RetrievalResult> {
        retrieve(query, self, top_k, tau)
    }
}

/// `h·k / (‖h‖‖k‖)`, clamped to [−1, 1].
pub fn cosine_sim(h: &[f64], k: &[f64]) -> Result<f64> {
    if h.len() != k.len() {
        return Err(Error::dimension("cosine_sim", (1, h.len()), (1, k.len())));
    }
    let (nh, nk) = (norm(h), norm(k));
    if nh == 0.0 || nk == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(h, k) / (nh * nk)).clamp(-1.0, 1.0))
}

pub fn retrieve(query: &[f64], kb: &KnowledgeBase, top_k: usize, tau: f64) -> Result<RetrievalResult> {
    if kb.is_empty() {
        return Err(Error::Data("retrieval from an empty knowledge base".into()));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let mut scored: Vec<(usize, f64)> = kb
        .fragments
        .iter()
        .enumerate()
        .map(|(i, f)| cosine_sim(query, &f.vector).map(|s| (i, s)))
        .collect::<Result<_>>()?;

    let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.partial_cmp(&a.1)
            .expect("similarities are finite")
            .then_with(|| kb.fragments[a.0].id.cmp(&kb.fragments[b.0].id))
    };
    let k = top_k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);

    let similarities: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    let logits: Vec<f64> = similarities.iter().map(|s| s / tau).collect();
    Ok(RetrievalResult {
        fragment_ids: scored.iter().map(|&(i, _)| kb.fragments[i].id.clone()).collect(),
        weights: softmax(&logits),
        similarities,
        positions: scored.iter().map(|&(i, _)| i).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb(vectors: &[(&str, Vec<f64>)]) -> KnowledgeBase {
        KnowledgeBase::from_fragments(
            vectors
                .iter()
                .map(|(id, v)| KnowledgeFragment { id: id.to_string(), text: format!("text {id}"), vector: v.clone() })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn retrieval_weights_follow_temperature_softmax() {
        // Vectors chosen so the similarities to e1 are exactly 0.9, 0.5, 0.1.
        let mk = |s: f64| vec![s, (1.0 - s * s).sqrt()];
        let base = kb(&[("C", mk(0.1)), ("A", mk(0.9)), ("B", mk(0.5))]);
        let r = base.retrieve(&[1.0, 0.0], 2, 0.1).unwrap();
        assert_eq!(r.fragment_ids, ["A", "B"]);
        assert!((r.weights[0] - 0.9820).abs() < 1e-4);
        assert!((r.weights[1] - 0.0180).abs() < 1e-4);
        assert_eq!(r.positions, [1, 2]);
    }

    #[test]
    fn top_k_beyond_size_returns_everything() {
        let base = kb(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let r = base.retrieve(&[0.3, 0.7], 10, DEFAULT_TAU).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let base = kb(&[("z", vec![1.0, 0.0]), ("m", vec![2.0, 0.0]), ("b", vec![0.5, 0.0]), ("q", vec![-1.0, 0.0])]);
        let r = base.retrieve(&[3.0, 0.0], 3, DEFAULT_TAU).unwrap();
        assert_eq!(r.fragment_ids, ["b", "m", "z"]);
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let base = kb(&[("a", vec![1.0, 0.0])]);
        assert!(matches!(base.retrieve(&[0.0, 0.0], 1, 0.1), Err(Error::Numeric(_))));
        assert!(matches!(base.retrieve(&[1.0, 0.0], 0, 0.1), Err(Error::Config(_))));
        assert!(matches!(base.retrieve(&[1.0, 0.0], 1, 0.0), Err(Error::Config(_))));
        assert!(KnowledgeBase::from_fragments(vec![]).is_err());
    }

    #[test]
    fn ingest_validates_entries() {
        let embed = |t: &str| Ok(vec![t.len() as f64, 1.0]);
        let entries = vec![
            KnowledgeEntry { id: "x".into(), text: "one".into() },
            KnowledgeEntry { id: "y".into(), text: "two".into() },
            KnowledgeEntry { id: "z".into(), text: "one".into() },
        ];
        let base = KnowledgeBase::ingest(&entries, embed).unwrap();
        assert_eq!(base.len(), 3);
        assert_eq!(base.fragment(0).vector, base.fragment(2).vector);

        let dup = vec![entries[0].clone(), entries[0].clone()];
        let err = KnowledgeBase::ingest(&dup, embed).unwrap_err();
        assert!(err.to_string().contains("\"x\""), "{err}");

        let empty = vec![KnowledgeEntry { id: "e".into(), text: "  ".into() }];
        assert!(matches!(KnowledgeBase::ingest(&empty, embed), Err(Error::Data(_))));

        let zero = |_: &str| Ok(vec![0.0, 0.0]);
        assert!(matches!(KnowledgeBase::ingest(&entries[..1], zero), Err(Error::Data(_))));
    }

    proptest::proptest! {
        #[test]
        fn cosine_scale_invariance(h in proptest::collection::vec(-3.0f64..3.0, 1..10), c in 0.01f64..100.0) {
            proptest::prop_assume!(norm(&h) > 1e-3);
            let scaled: Vec<f64> = h.iter().map(|v| v * c).collect();
            let neg: Vec<f64> = h.iter().map(|v| -v).collect();
            proptest::prop_assert!((cosine_sim(&h, &scaled).unwrap() - 1.0).abs() < 1e-12);
            proptest::prop_assert!((cosine_sim(&h, &neg).unwrap() + 1.0).abs() < 1e-12);
        }

        #[test]
        fn weights_are_shift_invariant(sims in proptest::collection::vec(-1.0f64..1.0, 1..8), shift in -5.0f64..5.0) {
            let a = softmax(&sims.iter().map(|s| s / 0.1).collect::<Vec<_>>());
            let b = softmax(&sims.iter().map(|s| (s + shift) / 0.1).collect::<Vec<_>>());
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
