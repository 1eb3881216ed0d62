//! Bagged CART trees with Gini impurity.

use cmdrisk_core::RiskClass;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ForestConfig;
use crate::BaselineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf { class: RiskClass, counts: [u32; 3] },
    /// Goes left when `x[feature] <= threshold`.
    Split { feature: usize, threshold: f32, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> RiskClass {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { class, .. } => return *class,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn gini(counts: &[u32; 3]) -> f64 {
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[u32; 3]) -> RiskClass {
    let as_f: [f64; 3] = [counts[0] as f64, counts[1] as f64, counts[2] as f64];
    RiskClass::argmax(&as_f)
}

struct Builder<'a> {
    x: &'a [Vec<f32>],
    y: &'a [RiskClass],
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    impurity: f64,
    feature: usize,
    threshold: f32,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; 3] {
        let mut c = [0u32; 3];
        for &i in idx {
            c[self.y[i].index()] += 1;
        }
        c
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let d = self.x[0].len();
        let k = self.config.max_features.count(d).min(d);
        let mut features: Vec<usize> = sample(&mut self.rng, d, k).into_vec();
        features.sort_unstable();
        let total = self.counts(idx);
        let n = idx.len() as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted = idx.to_vec();
        for f in features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = [0u32; 3];
            for w in 0..sorted.len() - 1 {
                left[self.y[sorted[w]].index()] += 1;
                let (lo, hi) = (self.x[sorted[w]][f], self.x[sorted[w + 1]][f]);
                if lo == hi {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
                let nl = (w + 1) as f64;
                let impurity = (nl * gini(&left) + (n - nl) * gini(&right)) / n;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit { impurity, feature: f, threshold });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { class: majority(&counts), counts });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || idx.len() < self.config.min_samples_split || self.config.max_depth.is_some_and(|m| depth >= m) {
            return id;
        }
        let Some(split) = self.best_split(&idx) else { return id };
        if split.impurity >= gini(&counts) {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// One tree on the given sample indices.
pub fn train_tree(x: &[Vec<f32>], y: &[RiskClass], idx: Vec<usize>, config: &ForestConfig, seed: u64) -> Tree {
    let mut b = Builder { x, y, config, rng: ChaCha8Rng::seed_from_u64(seed), nodes: Vec::new() };
    b.grow(idx, 0);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

pub fn train_random_forest(
    x: &[Vec<f32>],
    y: &[RiskClass],
    config: &ForestConfig,
    seed: u64,
) -> Result<Forest, BaselineError> {
    assert_eq!(x.len(), y.len(), "vectors and labels differ in length");
    let present = RiskClass::ALL.iter().filter(|c| y.contains(c)).count();
    if present < 2 {
        return Err(BaselineError::TooFewClasses(present));
    }
    if x.iter().any(|v| v.len() != x[0].len()) || x[0].is_empty() {
        return Err(BaselineError::Shape("feature vectors must share a positive dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..config.trees)
        .map(|_| {
            let tree_seed: u64 = rng.gen();
            let idx: Vec<usize> =
                if config.bootstrap { (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect() } else { (0..x.len()).collect() };
            train_tree(x, y, idx, config, tree_seed)
        })
        .collect();
    Ok(Forest { trees })
}

impl Forest {
    pub fn votes(&self, x: &[f32]) -> [u32; 3] {
        let mut v = [0u32; 3];
        for t in &self.trees {
            v[t.predict(x).index()] += 1;
        }
        v
    }

    /// Vote fractions.
    pub fn predict_proba(&self, x: &[f32]) -> [f64; 3] {
        let v = self.votes(x);
        let n = self.trees.len().max(1) as f64;
        [v[0] as f64 / n, v[1] as f64 / n, v[2] as f64 / n]
    }

    /// Majority vote; ties go to the more dangerous class.
    pub fn predict(&self, x: &[f32]) -> RiskClass {
        majority(&self.votes(x))
    }
}
