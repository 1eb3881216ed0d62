//! Byte-level byte-pair encoding.
//!
//! Token ids `0..256` are the raw bytes, followed by the special tokens in
//! declaration order, followed by one token per learned merge. A merge never
//! produces a byte sequence that is already in the table, so every token's
//! bytes identify it uniquely and the vocabulary file can reference tokens by
//! their hex-encoded bytes.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::rc::Rc;

use crate::input::ModelInput;

pub type TokenId = u32;

/// Special tokens every vocabulary must declare.
pub const REQUIRED_SPECIALS: [&str; 5] = ["PAD", "UNK", "CLS", "SEP", "MASK"];

const FILE_MAGIC: &str = "bpevocab v1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BpeError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary size {target} must exceed {minimum} (bytes + specials)")]
    TargetTooSmall { target: usize, minimum: usize },
    #[error("special token `{0}` is required")]
    MissingSpecial(String),
    #[error("special token `{0}` declared twice")]
    DuplicateSpecial(String),
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(TokenId),
    #[error("token id {0} is a special token and has no byte form")]
    SpecialId(TokenId),
    #[error("vocabulary file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One learned merge: `left` followed by `right` becomes `id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub id: TokenId,
}

/// Resolved ids of the required special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    target_size: usize,
    special_names: Vec<String>,
    specials: SpecialIds,
    merges: Vec<Merge>,
    /// Byte form of every token; empty for specials.
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.target_size == other.target_size
            && self.special_names == other.special_names
            && self.merges == other.merges
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    fn base(target_size: usize, special_names: &[&str]) -> Result<Self, BpeError> {
        let mut seen = HashSet::new();
        for name in special_names {
            if !seen.insert(*name) {
                return Err(BpeError::DuplicateSpecial(name.to_string()));
            }
        }
        let minimum = 256 + special_names.len();
        if target_size <= minimum {
            return Err(BpeError::TargetTooSmall { target: target_size, minimum });
        }
        let lookup = |name: &str| -> Result<TokenId, BpeError> {
            special_names
                .iter()
                .position(|n| *n == name)
                .map(|i| (256 + i) as TokenId)
                .ok_or_else(|| BpeError::MissingSpecial(name.to_string()))
        };
        let specials = SpecialIds {
            pad: lookup("PAD")?,
            unk: lookup("UNK")?,
            cls: lookup("CLS")?,
            sep: lookup("SEP")?,
            mask: lookup("MASK")?,
        };
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.extend(special_names.iter().map(|_| Vec::new()));
        Ok(Vocabulary {
            target_size,
            special_names: special_names.iter().map(|s| s.to_string()).collect(),
            specials,
            merges: Vec::new(),
            tokens,
            ranks: HashMap::new(),
        })
    }

    fn push_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let id = self.tokens.len() as TokenId;
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.tokens.push(bytes);
        self.ranks.insert((left, right), (self.merges.len(), id));
        self.merges.push(Merge { left, right, id });
        id
    }

    /// Number of tokens currently in the table (bytes + specials + merges).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn special_names(&self) -> &[String] {
        &self.special_names
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        let first = 256;
        id >= first && (id as usize) < first as usize + self.special_names.len()
    }

    /// Byte form of a token, `None` for specials and unknown ids.
    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        if self.is_special(id) {
            return None;
        }
        self.tokens.get(id as usize).map(|b| b.as_slice())
    }

    /// Vocabulary truncated to its first `n` merges.
    pub fn truncated(&self, n: usize) -> Vocabulary {
        let names: Vec<&str> = self.special_names.iter().map(|s| s.as_str()).collect();
        let mut v = Vocabulary::base(self.target_size, &names).expect("already validated");
        for m in self.merges.iter().take(n) {
            v.push_merge(m.left, m.right);
        }
        v
    }

    pub fn encode(&self, text: &[u8]) -> Vec<TokenId> {
        let mut symbols: Vec<TokenId> = text.iter().map(|&b| b as TokenId).collect();
        if symbols.len() < 2 || self.merges.is_empty() {
            return symbols;
        }
        loop {
            // Lowest-ranked applicable merge; new pairs created by it always
            // rank later, so this matches applying merges one by one in order.
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
                .min();
            let Some((_, left, right, id)) = best else { break };
            symbols = merge_pair(&symbols, left, right, id);
            if symbols.len() < 2 {
                break;
            }
        }
        symbols
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, BpeError> {
        let mut out = Vec::new();
        for &id in ids {
            if self.is_special(id) {
                return Err(BpeError::SpecialId(id));
            }
            let bytes = self.tokens.get(id as usize).ok_or(BpeError::UnknownId(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Assemble `[CLS] first [SEP] (second [SEP])`, truncated and padded to
    /// exactly `max_len` positions.
    pub fn build_input(&self, first: &[u8], second: Option<&[u8]>, max_len: usize) -> ModelInput {
        assert!(max_len >= 4, "max_len must be at least 4, got {max_len}");
        let mut a = self.encode(first);
        let mut b = second.map(|s| self.encode(s));
        let reserved = if b.is_some() { 3 } else { 2 };
        let budget = max_len - reserved;
        loop {
            let total = a.len() + b.as_ref().map_or(0, |b| b.len());
            if total <= budget {
                break;
            }
            match b.as_mut() {
                Some(bs) if bs.len() >= a.len() => {
                    bs.pop();
                }
                _ => {
                    a.pop();
                }
            }
        }

        let s = self.specials;
        let mut ids = Vec::with_capacity(max_len);
        let mut segments = Vec::with_capacity(max_len);
        ids.push(s.cls);
        ids.extend_from_slice(&a);
        ids.push(s.sep);
        segments.resize(ids.len(), 0u8);
        if let Some(bs) = b {
            ids.extend_from_slice(&bs);
            ids.push(s.sep);
            segments.resize(ids.len(), 1u8);
        }
        let real = ids.len();
        ids.resize(max_len, s.pad);
        segments.resize(max_len, 0);
        let mut mask = vec![1u8; real];
        mask.resize(max_len, 0);
        ModelInput {
            token_ids: ids,
            segment_ids: segments,
            attention_mask: mask,
            mlm_targets: Vec::new(),
            next_label: None,
            class_label: None,
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{FILE_MAGIC} {}\n", self.target_size);
        for name in &self.special_names {
            let _ = writeln!(out, "special {name}");
        }
        for m in &self.merges {
            let _ = writeln!(
                out,
                "merge {} {}",
                hex(&self.tokens[m.left as usize]),
                hex(&self.tokens[m.right as usize])
            );
        }
        out
    }

    pub fn from_file_str(text: &str) -> Result<Vocabulary, BpeError> {
        let err = |line: usize, message: String| BpeError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let target: usize = header
            .strip_prefix(FILE_MAGIC)
            .map(str::trim)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(1, format!("expected `{FILE_MAGIC} <target_size>`, got `{header}`")))?;

        let mut names = Vec::new();
        let mut merges = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["special", name] => {
                    if !merges.is_empty() {
                        return Err(err(no, "special after merge".into()));
                    }
                    names.push((*name).to_string());
                }
                ["merge", l, r] => {
                    let l = unhex(l).ok_or_else(|| err(no, format!("bad hex `{l}`")))?;
                    let r = unhex(r).ok_or_else(|| err(no, format!("bad hex `{r}`")))?;
                    merges.push((no, l, r));
                }
                _ => return Err(err(no, format!("unrecognised line `{line}`"))),
            }
        }
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let mut vocab = Vocabulary::base(target, &name_refs)?;
        let mut by_bytes: HashMap<Vec<u8>, TokenId> = (0..256u32).map(|b| (vec![b as u8], b)).collect();
        for (no, l, r) in merges {
            let left = *by_bytes.get(&l).ok_or_else(|| err(no, "left operand is not a known token".into()))?;
            let right = *by_bytes.get(&r).ok_or_else(|| err(no, "right operand is not a known token".into()))?;
            let mut joined = l;
            joined.extend_from_slice(&r);
            if by_bytes.contains_key(&joined) {
                return Err(err(no, "merge result duplicates an existing token".into()));
            }
            if vocab.len() >= target {
                return Err(err(no, "merge list exceeds target size".into()));
            }
            let id = vocab.push_merge(left, right);
            by_bytes.insert(joined, id);
        }
        Ok(vocab)
    }
}

/// Replace non-overlapping occurrences of `(left, right)` scanning left to right.
pub(crate) fn merge_pair(symbols: &[TokenId], left: TokenId, right: TokenId, id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.is_empty() || s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

type PairKey = (Reverse<i64>, Rc<[u8]>, Rc<[u8]>, TokenId, TokenId);

/// Learn a vocabulary of at most `target_vocab_size` tokens.
///
/// Each step merges the most frequent adjacent pair (overlapping occurrences
/// counted) in the current encoding of the corpus; ties go to the
/// lexicographically smallest `(left bytes, right bytes)`. Training stops at
/// the target size or when no eligible pair occurs at least twice.
pub fn train_bpe<S: AsRef<[u8]>>(
    corpus: &[S],
    target_vocab_size: usize,
    specials: &[&str],
) -> Result<Vocabulary, BpeError> {
    let mut vocab = Vocabulary::base(target_vocab_size, specials)?;
    if corpus.is_empty() {
        return Err(BpeError::EmptyCorpus);
    }

    let mut freq: HashMap<&[u8], i64> = HashMap::new();
    for s in corpus {
        *freq.entry(s.as_ref()).or_default() += 1;
    }
    let mut uniq: Vec<(&[u8], i64)> = freq.into_iter().collect();
    uniq.sort_unstable();
    let mut words: Vec<Vec<TokenId>> = uniq.iter().map(|(w, _)| w.iter().map(|&b| b as TokenId).collect()).collect();
    let counts: Vec<i64> = uniq.iter().map(|&(_, c)| c).collect();

    let mut bytes: Vec<Rc<[u8]>> = vocab.tokens.iter().map(|t| Rc::from(t.as_slice())).collect();
    let mut known: HashSet<Rc<[u8]>> = bytes.iter().take(256).cloned().collect();

    let mut pair_count: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut pair_words: HashMap<(TokenId, TokenId), Vec<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            let key = (p[0], p[1]);
            *pair_count.entry(key).or_default() += counts[wi];
            let list = pair_words.entry(key).or_default();
            if list.last() != Some(&wi) {
                list.push(wi);
            }
        }
    }

    let key_of = |bytes: &[Rc<[u8]>], (l, r): (TokenId, TokenId), c: i64| -> PairKey {
        (Reverse(c), bytes[l as usize].clone(), bytes[r as usize].clone(), l, r)
    };
    let mut queue: BTreeSet<PairKey> = pair_count.iter().map(|(&p, &c)| key_of(&bytes, p, c)).collect();
    let mut retired: HashSet<(TokenId, TokenId)> = HashSet::new();

    while vocab.len() < target_vocab_size {
        let Some(top) = queue.pop_first() else { break };
        let (Reverse(count), lb, rb, left, right) = top;
        if count < 2 {
            break;
        }
        let mut joined = lb.to_vec();
        joined.extend_from_slice(&rb);
        let joined: Rc<[u8]> = Rc::from(joined);
        if known.contains(&joined) {
            // Would duplicate an existing token; never eligible again.
            pair_count.remove(&(left, right));
            retired.insert((left, right));
            continue;
        }

        let id = vocab.push_merge(left, right);
        bytes.push(joined.clone());
        known.insert(joined);

        let mut delta: HashMap<(TokenId, TokenId), i64> = HashMap::new();
        let affected = pair_words.remove(&(left, right)).unwrap_or_default();
        for wi in affected {
            let w = &words[wi];
            if !w.windows(2).any(|p| p[0] == left && p[1] == right) {
                continue;
            }
            let c = counts[wi];
            for p in w.windows(2) {
                *delta.entry((p[0], p[1])).or_default() -= c;
            }
            let merged = merge_pair(w, left, right, id);
            for p in merged.windows(2) {
                let key = (p[0], p[1]);
                *delta.entry(key).or_default() += c;
                if p[0] == id || p[1] == id {
                    let list = pair_words.entry(key).or_default();
                    if list.last() != Some(&wi) {
                        list.push(wi);
                    }
                }
            }
            words[wi] = merged;
        }

        let mut changed: Vec<_> = delta.into_iter().filter(|&(_, d)| d != 0).collect();
        changed.sort_unstable();
        for (pair, d) in changed {
            if pair == (left, right) || retired.contains(&pair) {
                continue;
            }
            let old = pair_count.get(&pair).copied().unwrap_or(0);
            if old > 0 {
                queue.remove(&key_of(&bytes, pair, old));
            }
            let new = old + d;
            if new > 0 {
                pair_count.insert(pair, new);
                queue.insert(key_of(&bytes, pair, new));
            } else {
                pair_count.remove(&pair);
            }
        }
        pair_count.remove(&(left, right));
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specials() -> Vec<&'static str> {
        REQUIRED_SPECIALS.to_vec()
    }

    #[test]
    fn single_merge_on_repeated_pair() {
        let v = train_bpe(&["abababab"], 256 + 5 + 1, &specials()).unwrap();
        assert_eq!(v.merges().len(), 1);
        let m = v.merges()[0];
        assert_eq!((m.left, m.right), (b'a' as u32, b'b' as u32));
        assert_eq!(v.token_bytes(m.id), Some(&b"ab"[..]));
        assert_eq!(v.encode(b"abab"), vec![m.id, m.id]);
        assert_eq!(v.decode(&[m.id, m.id]).unwrap(), b"abab");
    }

    #[test]
    fn empty_inputs() {
        let v = train_bpe(&["abab"], 300, &specials()).unwrap();
        assert!(v.encode(b"").is_empty());
        assert!(v.decode(&[]).unwrap().is_empty());
    }

    #[test]
    fn training_errors() {
        let empty: [&str; 0] = [];
        assert_eq!(train_bpe(&empty, 300, &specials()), Err(BpeError::EmptyCorpus));
        assert!(matches!(train_bpe(&["ab"], 261, &specials()), Err(BpeError::TargetTooSmall { .. })));
        assert!(matches!(train_bpe(&["ab"], 300, &["PAD", "CLS"]), Err(BpeError::MissingSpecial(_))));
    }

    #[test]
    fn full_vocab_size_accepted() {
        let v = train_bpe(&["ls -la /tmp", "ls -la /var"], 20000, &specials()).unwrap();
        assert_eq!(v.target_size(), 20000);
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let v = train_bpe(&["abcdef"], 1000, &specials()).unwrap();
        assert!(v.merges().is_empty());
    }

    #[test]
    fn decode_rejects_special_and_unknown() {
        let v = train_bpe(&["abab"], 300, &specials()).unwrap();
        assert_eq!(v.decode(&[v.specials().cls]), Err(BpeError::SpecialId(v.specials().cls)));
        assert_eq!(v.decode(&[9999]), Err(BpeError::UnknownId(9999)));
    }

    #[test]
    fn special_ids_never_merge_operands() {
        let v = train_bpe(&["rm -rf /tmp/a", "rm -rf /tmp/b", "ls -la"], 400, &specials()).unwrap();
        for m in v.merges() {
            assert!(!v.is_special(m.left) && !v.is_special(m.right));
            let mut cat = v.token_bytes(m.left).unwrap().to_vec();
            cat.extend_from_slice(v.token_bytes(m.right).unwrap());
            assert_eq!(v.token_bytes(m.id).unwrap(), cat.as_slice());
        }
        assert!(v.len() <= v.target_size());
    }

    #[test]
    fn build_input_single_span() {
        let v = train_bpe(&["xyxy"], 300, &specials()).unwrap();
        let s = v.specials();
        let input = v.build_input(b"x", None, 8);
        assert_eq!(input.token_ids, vec![s.cls, b'x' as u32, s.sep, s.pad, s.pad, s.pad, s.pad, s.pad]);
        assert_eq!(input.attention_mask, vec![1, 1, 1, 0, 0, 0, 0, 0]);
        assert!(input.segment_ids.iter().all(|&g| g == 0));
    }

    #[test]
    fn build_input_truncates_longest_span_first() {
        let v = train_bpe(&["q"], 300, &specials()).unwrap();
        let s = v.specials();
        let input = v.build_input(b"abcdefghij", Some(b"xyz"), 10);
        assert_eq!(input.token_ids.len(), 10);
        assert_eq!(input.token_ids.iter().filter(|&&t| t == s.sep).count(), 2);
        // 7 content slots: first span trimmed to 4, second keeps 3.
        assert_eq!(&input.token_ids[1..5], &[b'a' as u32, b'b' as u32, b'c' as u32, b'd' as u32]);
        assert_eq!(input.segment_ids, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert!(input.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn file_roundtrip() {
        let corpus = ["rm -rf /bin/*", "rm -rf /usr/bin", "ls -la", "ls -la /tmp"];
        let v = train_bpe(&corpus, 300, &specials()).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("bpevocab v1 300\nspecial PAD\n"));
        let back = Vocabulary::from_file_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.encode(b"rm -rf /etc"), v.encode(b"rm -rf /etc"));
    }

    #[test]
    fn file_parse_errors_carry_line() {
        let bad = "bpevocab v1 300\nspecial PAD\nmerge zz 61\n";
        assert!(matches!(Vocabulary::from_file_str(bad), Err(BpeError::Parse { line: 3, .. })));
        assert!(matches!(Vocabulary::from_file_str("nope"), Err(BpeError::Parse { line: 1, .. })));
    }
}
