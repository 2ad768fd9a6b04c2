//! Retrain-per-point sweeps over one training parameter.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::corpus::CorpusExample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::knowledge::KnowledgeEntry;
use crate::train::train;

/// Caps the number of sweep points trained at once.
pub const THREADS_ENV: &str = "KALM_THREADS";
pub const CSV_HEADER: &str = "param,value,seed,accuracy,rouge1_f,rougeL_f,bleu,fact_score";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    BatchSize,
    NoiseRatio,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::BatchSize => "batch_size",
            Self::NoiseRatio => "noise_ratio",
        }
    }

    fn apply(self, cfg: &mut TrainConfig, value: f64) {
        match self {
            Self::BatchSize => cfg.batch_size = value as usize,
            Self::NoiseRatio => cfg.noise_ratio = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "batch_size" => Ok(Self::BatchSize),
            "noise_ratio" => Ok(Self::NoiseRatio),
            other => Err(format!("cannot sweep {other:?} (expected batch_size or noise_ratio)")),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Value-major: all seeds of the first value, then the next value.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for p in &self.points {
            let r = &p.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.param, p.value, p.seed, r.accuracy, r.rouge1_f, r.rouge_l_f, r.bleu, r.fact_score
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("sweep result serializes")
    }

    /// Seed average of `metric` for each value, in value order.
    pub fn seed_means(&self, metric: impl Fn(&MetricsReport) -> f64) -> Vec<f64> {
        self.points.chunks(self.seeds.len()).map(|c| c.iter().map(|p| metric(&p.report)).sum::<f64>() / c.len() as f64).collect()
    }
}

fn check_values(param: SweepParam, values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::Config(format!("a sweep needs at least two values, got {}", values.len())));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("sweep values must be strictly increasing".into()));
    }
    for &v in values {
        let ok = match param {
            SweepParam::BatchSize => v >= 1.0 && v.fract() == 0.0,
            SweepParam::NoiseRatio => (0.0..=1.0).contains(&v),
        };
        if !ok {
            return Err(Error::Config(format!("{v} is not a valid {param}")));
        }
    }
    Ok(())
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Trains a fresh model for every (value, seed) pair and evaluates it on the
/// untouched `test` corpus.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    base: &TrainConfig,
    train_corpus: &[CorpusExample],
    test_corpus: &[CorpusExample],
    knowledge: &[KnowledgeEntry],
) -> Result<SweepResult> {
    check_values(param, values)?;
    if seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    let jobs: Vec<(f64, u64)> = values.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let run = |&(value, seed): &(f64, u64)| -> Result<SweepPoint> {
        let mut cfg = base.clone();
        param.apply(&mut cfg, value);
        cfg.seed = seed;
        let model = train(train_corpus, knowledge, &cfg)?.model;
        Ok(SweepPoint { value, seed, report: evaluate(&model, test_corpus, knowledge)?.report })
    };
    let points = match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot build sweep thread pool: {e}")))?
            .install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?,
        None => jobs.par_iter().map(run).collect::<Result<Vec<_>>>()?,
    };
    Ok(SweepResult { param, values: values.to_vec(), seeds: seeds.to_vec(), points })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // tied entries share the mean of their 1-based positions
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
