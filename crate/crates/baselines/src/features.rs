//! Sparse count features over a vocabulary fixed at training time.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Sorted `(feature index, count)` pairs.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub features: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl FeatureVocab {
    /// Keeps the `cap` most frequent items, ties broken lexicographically.
    pub fn build<I, S>(items: I, cap: Option<usize>) -> FeatureVocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for it in items {
            *counts.entry(it.into()).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(cap) = cap {
            ranked.truncate(cap);
        }
        FeatureVocab::from_features(ranked.into_iter().map(|(f, _)| f).collect())
    }

    pub fn from_features(features: Vec<String>) -> FeatureVocab {
        let index = features.iter().enumerate().map(|(i, f)| (f.clone(), i as u32)).collect();
        FeatureVocab { features, index }
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.features.iter().enumerate().map(|(i, f)| (f.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, item: &str) -> Option<u32> {
        self.index.get(item).copied()
    }

    fn count<'a>(&self, items: impl Iterator<Item = &'a str>) -> SparseVec {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for it in items {
            if let Some(i) = self.get(it) {
                *acc.entry(i).or_default() += 1.0;
            }
        }
        acc.into_iter().collect()
    }
}

/// All character `n`-grams of `command`, as string slices.
pub fn char_ngrams(command: &str, n: usize) -> Vec<&str> {
    assert!(n > 0, "n-gram length must be positive");
    let bounds: Vec<usize> = command.char_indices().map(|(i, _)| i).chain([command.len()]).collect();
    if bounds.len() <= n {
        return Vec::new();
    }
    (0..bounds.len() - n).map(|i| &command[bounds[i]..bounds[i + n]]).collect()
}

/// Maximal runs of non-whitespace.
pub fn bow_tokens(command: &str) -> Vec<&str> {
    command.split_whitespace().collect()
}

pub fn featurize_char_ngrams(command: &str, n: usize, vocab: &FeatureVocab) -> SparseVec {
    vocab.count(char_ngrams(command, n).into_iter())
}

pub fn featurize_bow(command: &str, vocab: &FeatureVocab) -> SparseVec {
    vocab.count(bow_tokens(command).into_iter())
}

/// Which featurizer a linear text model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Featurizer {
    CharNgram { n: usize },
    Bow,
}

impl Featurizer {
    pub fn items(self, command: &str) -> Vec<&str> {
        match self {
            Featurizer::CharNgram { n } => char_ngrams(command, n),
            Featurizer::Bow => bow_tokens(command),
        }
    }

    pub fn build_vocab<'a>(self, commands: impl IntoIterator<Item = &'a str>, cap: Option<usize>) -> FeatureVocab {
        FeatureVocab::build(commands.into_iter().flat_map(|c| self.items(c)), cap)
    }

    pub fn featurize(self, command: &str, vocab: &FeatureVocab) -> SparseVec {
        vocab.count(self.items(command).into_iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigram_basics() {
        let v = FeatureVocab::from_features(vec!["abc".into()]);
        assert_eq!(featurize_char_ngrams("abc", 3, &v), vec![(0, 1.0)]);
        assert!(featurize_char_ngrams("ab", 3, &v).is_empty());
        assert_eq!(char_ngrams("aaaa", 3), vec!["aaa", "aaa"]);
        assert_eq!(char_ngrams("héllo", 3), vec!["hél", "éll", "llo"]);
    }

    #[test]
    fn bow_basics() {
        let v = FeatureVocab::build(bow_tokens("rm -rf /bin/*"), None);
        let f = featurize_bow("rm -rf /bin/*", &v);
        assert_eq!(f.len(), 3);
        assert!(f.iter().all(|&(_, c)| c == 1.0));
        for t in ["rm", "-rf", "/bin/*"] {
            assert!(v.get(t).is_some());
        }
        assert!(featurize_bow("", &v).is_empty());
    }

    #[test]
    fn cap_keeps_most_frequent() {
        let v = FeatureVocab::build(["b", "a", "b", "c", "c", "c"], Some(2));
        assert_eq!(v.features, vec!["c", "b"]);
    }
}
