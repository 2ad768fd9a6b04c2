//! Synthetic knowledge-dependent corpus.
//!
//! Every entity has a knowledge fragment stating its outlook and one example
//! "report on <entity> today" labeled with that outlook. Train and test
//! entities are disjoint, so test labels can only be recovered through
//! retrieval.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{save_corpus, CorpusExample};
use crate::error::{Error, Result};
use crate::knowledge::{save_knowledge, KnowledgeEntry};

pub const POSITIVE: &str = "strong";
pub const NEGATIVE: &str = "weak";
pub const NAME_TOKENS: usize = 3;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const RESERVED: &[&str] = &[
    "report", "on", "today", "outlook", "strong", "weak", "predicted", "because", "attends", "to", "supported", "by",
    "kb", "w",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub name: Vec<String>,
    pub fragment_id: String,
    pub label: String,
}

impl Entity {
    pub fn display_name(&self) -> String {
        self.name.join(" ")
    }

    pub fn fragment_text(&self) -> String {
        format!("{} outlook {}", self.display_name(), self.label)
    }

    pub fn example_text(&self) -> String {
        format!("report on {} today", self.display_name())
    }

    /// The rationale a faithful model would give: each name token attends to
    /// the entity's fragment under the gold label, and that fragment is cited.
    pub fn reference_explanation(&self) -> String {
        let mut lines: Vec<String> = self
            .name
            .iter()
            .map(|t| format!("predicted {} because \"{t}\" attends to \"{}\".", self.label, self.fragment_id))
            .collect();
        lines.push(format!("supported by {}: \"{}\".", self.fragment_id, self.fragment_text()));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticData {
    pub entities: Vec<Entity>,
    pub train: Vec<CorpusExample>,
    pub test: Vec<CorpusExample>,
    pub knowledge: Vec<KnowledgeEntry>,
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .flat_map(|_| {
            [CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char, VOWELS[rng.gen_range(0..VOWELS.len())] as char]
        })
        .collect()
}

pub fn generate_synthetic(num_entities: usize, train_fraction: f64, seed: u64) -> Result<SyntheticData> {
    if num_entities < 10 {
        return Err(Error::Config(format!("synthetic corpus needs at least 10 entities, got {num_entities}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: HashSet<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let width = (num_entities - 1).to_string().len().max(3);
    let entities: Vec<Entity> = (0..num_entities)
        .map(|i| {
            let name = (0..NAME_TOKENS)
                .map(|_| loop {
                    let w = pseudo_word(&mut rng);
                    if used.insert(w.clone()) {
                        break w;
                    }
                })
                .collect();
            let label = if rng.gen_bool(0.5) { POSITIVE } else { NEGATIVE }.to_string();
            Entity { name, fragment_id: format!("kb-{i:0width$}"), label }
        })
        .collect();

    let mut order: Vec<usize> = (0..num_entities).collect();
    order.shuffle(&mut rng);
    let n_train = ((train_fraction * num_entities as f64).round() as usize).clamp(1, num_entities - 1);
    let mut train_ids = order[..n_train].to_vec();
    let mut test_ids = order[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();

    let example = |i: usize| {
        let e = &entities[i];
        CorpusExample {
            id: format!("ex-{i:0width$}"),
            text: e.example_text(),
            label: e.label.clone(),
            reference_explanation: Some(e.reference_explanation()),
        }
    };
    let knowledge = entities.iter().map(|e| KnowledgeEntry { id: e.fragment_id.clone(), text: e.fragment_text() }).collect();
    Ok(SyntheticData {
        train: train_ids.into_iter().map(example).collect(),
        test: test_ids.into_iter().map(example).collect(),
        knowledge,
        entities,
    })
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const KB_FILE: &str = "kb.jsonl";

/// Writes `train.jsonl`, `test.jsonl` and `kb.jsonl` into `dir`.
pub fn write_synthetic(dir: &Path, data: &SyntheticData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_corpus(&dir.join(TRAIN_FILE), &data.train)?;
    save_corpus(&dir.join(TEST_FILE), &data.test)?;
    save_knowledge(&dir.join(KB_FILE), &data.knowledge)
}
