//! Independent reference implementations for BPE training and encoding.

use std::collections::{BTreeMap, HashSet};

use cmdrisk_core::bpe::{train_bpe, Vocabulary, REQUIRED_SPECIALS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recount every adjacent pair from scratch at each step and apply the best
/// eligible one left to right. Returns merges as byte-string pairs.
pub fn oracle_merges(corpus: &[Vec<u8>], target: usize, n_specials: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut seqs: Vec<Vec<Vec<u8>>> = corpus.iter().map(|s| s.iter().map(|&b| vec![b]).collect()).collect();
    let mut known: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();
    while 256 + n_specials + merges.len() < target {
        let mut counts: BTreeMap<(Vec<u8>, Vec<u8>), usize> = BTreeMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1;
            }
        }
        // BTreeMap iterates in lexicographic (left, right) order, so the
        // first maximum is the tie-break winner.
        let mut best: Option<(&(Vec<u8>, Vec<u8>), usize)> = None;
        for (pair, &c) in &counts {
            let joined = [pair.0.as_slice(), pair.1.as_slice()].concat();
            if c < 2 || known.contains(&joined) {
                continue;
            }
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.clone(), r.clone());
        for s in seqs.iter_mut() {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    out.push([l.as_slice(), r.as_slice()].concat());
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        known.insert([l.as_slice(), r.as_slice()].concat());
        merges.push((l, r));
    }
    merges
}

/// Apply merges one at a time, in learned order, over the whole sequence.
pub fn oracle_encode(vocab: &Vocabulary, text: &[u8]) -> Vec<u32> {
    let mut seq: Vec<u32> = text.iter().map(|&b| b as u32).collect();
    for m in vocab.merges() {
        let mut out = Vec::with_capacity(seq.len());
        let mut i = 0;
        while i < seq.len() {
            if i + 1 < seq.len() && seq[i] == m.left && seq[i + 1] == m.right {
                out.push(m.id);
                i += 2;
            } else {
                out.push(seq[i]);
                i += 1;
            }
        }
        seq = out;
    }
    seq
}

fn learned_pairs(v: &Vocabulary) -> Vec<(Vec<u8>, Vec<u8>)> {
    v.merges()
        .iter()
        .map(|m| (v.token_bytes(m.left).unwrap().to_vec(), v.token_bytes(m.right).unwrap().to_vec()))
        .collect()
}

const PIECES: &[&str] = &[
    "ls", " -la", " /tmp", "rm", " -rf", " /bin/*", " | ", "grep", " *.log", "kill", " -9", " 1234", "`", "'", "\"",
    "cat", " $DELETE_LIST", "xargs", " -0", "time ", "echo ", "aaaa", "abab", "\0", "\\", "&&", ";",
];

pub fn synthetic_command(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = rng.gen_range(1..8);
    let mut s = Vec::new();
    for _ in 0..n {
        if rng.gen_bool(0.8) {
            s.extend_from_slice(PIECES[rng.gen_range(0..PIECES.len())].as_bytes());
        } else {
            s.push(rng.gen());
        }
    }
    s
}

#[test]
fn fifty_commands_budget_300_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let corpus: Vec<Vec<u8>> = (0..50).map(|_| synthetic_command(&mut rng)).collect();
    let v = train_bpe(&corpus, 300, &REQUIRED_SPECIALS).unwrap();
    let want = oracle_merges(&corpus, 300, REQUIRED_SPECIALS.len());
    assert!(!want.is_empty());
    assert_eq!(learned_pairs(&v), want);
}

#[test]
fn overlapping_runs_match_oracle() {
    let corpus: Vec<Vec<u8>> = ["aaaaaaa", "aaab", "abababa", "bbbb aaaa", "aaaa"].iter().map(|s| s.as_bytes().to_vec()).collect();
    let v = train_bpe(&corpus, 280, &REQUIRED_SPECIALS).unwrap();
    assert_eq!(learned_pairs(&v), oracle_merges(&corpus, 280, 5));
}

#[test]
fn encode_matches_sequential_oracle_on_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus: Vec<Vec<u8>> = (0..300).map(|_| synthetic_command(&mut rng)).collect();
    let v = train_bpe(&corpus, 600, &REQUIRED_SPECIALS).unwrap();
    for _ in 0..100 {
        let len = rng.gen_range(0..60);
        let s: Vec<u8> = if rng.gen_bool(0.5) {
            (0..len).map(|_| rng.gen()).collect()
        } else {
            synthetic_command(&mut rng)
        };
        assert_eq!(v.encode(&s), oracle_encode(&v, &s));
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus: Vec<Vec<u8>> = (0..200).map(|_| synthetic_command(&mut rng)).collect();
    let a = train_bpe(&corpus, 500, &REQUIRED_SPECIALS).unwrap();
    let b = train_bpe(&corpus, 500, &REQUIRED_SPECIALS).unwrap();
    assert_eq!(a.to_file_string(), b.to_file_string());
}

fn shared_vocab() -> &'static Vocabulary {
    use std::sync::OnceLock;
    static V: OnceLock<Vocabulary> = OnceLock::new();
    V.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let corpus: Vec<Vec<u8>> = (0..400).map(|_| synthetic_command(&mut rng)).collect();
        train_bpe(&corpus, 700, &REQUIRED_SPECIALS).unwrap()
    })
}

proptest! {
    #[test]
    fn roundtrip(s in proptest::collection::vec(any::<u8>(), 0..200)) {
        let v = shared_vocab();
        prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s);
    }

    #[test]
    fn compression_monotone_in_merges(s in proptest::collection::vec(any::<u8>(), 0..80), k in 0usize..50) {
        let v = shared_vocab();
        let fewer = v.truncated(k);
        let more = v.truncated(k + 25);
        prop_assert!(more.encode(&s).len() <= fewer.encode(&s).len());
    }

    #[test]
    fn build_input_shape(a in proptest::collection::vec(any::<u8>(), 0..40),
                         b in proptest::option::of(proptest::collection::vec(any::<u8>(), 0..40)),
                         max_len in 4usize..48) {
        let v = shared_vocab();
        let input = v.build_input(&a, b.as_deref(), max_len);
        prop_assert_eq!(input.token_ids.len(), max_len);
        prop_assert_eq!(input.segment_ids.len(), max_len);
        prop_assert_eq!(input.attention_mask.len(), max_len);
        let pad = v.specials().pad;
        for (t, m) in input.token_ids.iter().zip(&input.attention_mask) {
            prop_assert_eq!(*m == 0, *t == pad);
        }
        let seps = input.token_ids.iter().filter(|&&t| t == v.specials().sep).count();
        prop_assert_eq!(seps, if b.is_some() { 2 } else { 1 });
    }
}
