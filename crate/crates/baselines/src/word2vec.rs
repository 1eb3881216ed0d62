//! Skip-gram with negative sampling.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Word2VecConfig;
use crate::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub tokens: Vec<String>,
    /// `tokens.len() × dim`, row-major.
    pub vectors: Vec<f32>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, tokens: Vec<String>, vectors: Vec<f32>) -> EmbeddingTable {
        assert_eq!(vectors.len(), tokens.len() * dim, "vector table shape");
        let mut t = EmbeddingTable { dim, tokens, vectors, index: HashMap::new() };
        t.reindex();
        t
    }

    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.get(a)?, self.get(b)?);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| *p as f64 * *q as f64).sum();
        let nx: f64 = x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        Some(dot / (nx * ny).max(1e-300))
    }
}

/// Learning rate after `step` of `total` updates, falling linearly from
/// `alpha_start` to exactly `alpha_min` on the last update.
pub fn learning_rate_at(config: &Word2VecConfig, step: u64, total: u64) -> f64 {
    if total <= 1 {
        return config.alpha_start;
    }
    let frac = step.min(total - 1) as f64 / (total - 1) as f64;
    config.alpha_start - (config.alpha_start - config.alpha_min) * frac
}

fn sigmoid(x: f32) -> f32 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Trains input vectors over whitespace-tokenized `corpus`. Context pairs
/// are all tokens within `window` positions of the center; negatives come
/// from the unigram distribution raised to 0.75.
pub fn train_word2vec<S: AsRef<str>>(corpus: &[S], config: &Word2VecConfig, seed: u64) -> Result<EmbeddingTable, BaselineError> {
    let sentences: Vec<Vec<&str>> =
        corpus.iter().map(|s| s.as_ref().split_whitespace().collect::<Vec<_>>()).filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(BaselineError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for s in &sentences {
        for t in s {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| s.iter().map(|t| index[t]).collect()).collect();

    let mut cumulative = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for (_, c) in &vocab {
        acc += (*c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let (v, d) = (vocab.len(), config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input: Vec<f32> = (0..v * d).map(|_| (rng.gen::<f32>() - 0.5) / d as f32).collect();
    let mut output = vec![0.0f32; v * d];
    let mut grad = vec![0.0f32; d];

    let pairs_per_epoch: u64 = ids
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|i| (i.saturating_sub(config.window)..(i + config.window + 1).min(s.len())).count() as u64 - 1)
                .sum::<u64>()
        })
        .sum();
    let total = pairs_per_epoch * config.epochs as u64;
    let mut step = 0u64;
    for _ in 0..config.epochs {
        for s in &ids {
            for (i, &center) in s.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window + 1).min(s.len());
                for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let alpha = learning_rate_at(config, step, total) as f32;
                    step += 1;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let ci = center * d;
                    for n in 0..=config.negatives {
                        let (target, label) = if n == 0 {
                            (ctx, 1.0)
                        } else {
                            let r = rng.gen::<f64>() * acc;
                            let t = cumulative.partition_point(|&c| c <= r).min(v - 1);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let ti = target * d;
                        let dot: f32 = (0..d).map(|k| input[ci + k] * output[ti + k]).sum();
                        let g = (label - sigmoid(dot)) * alpha;
                        for k in 0..d {
                            grad[k] += g * output[ti + k];
                            output[ti + k] += g * input[ci + k];
                        }
                    }
                    for k in 0..d {
                        input[ci + k] += grad[k];
                    }
                }
            }
        }
    }
    Ok(EmbeddingTable::new(d, vocab.into_iter().map(|(t, _)| t.to_string()).collect(), input))
}

/// Mean of the known token vectors; zero when no token is known.
pub fn embed_command(table: &EmbeddingTable, command: &str) -> Vec<f32> {
    let mut sum = vec![0.0f64; table.dim];
    let mut n = 0usize;
    for t in command.split_whitespace() {
        if let Some(v) = table.get(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += *x as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return vec![0.0; table.dim];
    }
    sum.into_iter().map(|s| (s / n as f64) as f32).collect()
}
