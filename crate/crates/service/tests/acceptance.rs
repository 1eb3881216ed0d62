//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p cmdrisk --test acceptance -- 4 5` runs a subset.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cmdrisk::pipeline::{pretrain_scripts, train_vocabulary};
use cmdrisk::records::RecordLog;
use cmdrisk::settings::Settings;
use cmdrisk::trainers::{Backbone, BaselineKind, BaselineTrainer, TransformerTrainer};
use cmdrisk::{decide, read_log, ClassifyRequest, ClassifyResponse, Decision, Engines, LogEntry, Privilege, Service};
use cmdrisk_baselines::config::{ForestConfig, LogRegConfig, MaxFeatures, Word2VecConfig};
use cmdrisk_baselines::forest::{train_tree, Node, Tree};
use cmdrisk_baselines::{train_logreg, train_word2vec, SparseVec};
use cmdrisk_core::bpe::{train_bpe, Vocabulary, REQUIRED_SPECIALS};
use cmdrisk_core::dataset::{class_counts, stratified_split, DatasetSplits, LabeledCommand, SplitRatios};
use cmdrisk_core::eval::{class_metrics, micro_avg_positive, ConfusionMatrix, Prf, POSITIVE};
use cmdrisk_core::experiment::{positive_f1, stratified_subsample, Trainer};
use cmdrisk_core::synth::{generate_synthetic_dataset, generate_synthetic_scripts, DEFAULT_RATIOS};
use cmdrisk_core::{load_rules, ModelInput, RiskClass, RiskModel};
use cmdrisk_model::encoder::{backward, batch_loss, Heads};
use cmdrisk_model::train::{annotate_corpus, pretrain};
use cmdrisk_model::{finetune, init_params, ModelConfig, Parameters, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const DATA_SEED: u64 = 7;

/// State shared between the model criteria.
#[derive(Default)]
struct Shared {
    pretrained: Option<(Parameters<f32>, Vocabulary)>,
    data: Option<DatasetSplits>,
}

impl Shared {
    fn splits(&mut self) -> &DatasetSplits {
        self.data.get_or_insert_with(|| {
            let data = generate_synthetic_dataset(47158, DEFAULT_RATIOS, DATA_SEED).expect("dataset");
            stratified_split(&data, SplitRatios::default(), DATA_SEED).expect("split")
        })
    }

    fn pretrained(&mut self) -> Result<(Parameters<f32>, Vocabulary), String> {
        if self.pretrained.is_none() {
            let run = desk_pretraining(DESK_SEED).map_err(|e| e.to_string())?;
            self.pretrained = Some((run.params, run.vocab));
        }
        Ok(self.pretrained.clone().expect("set above"))
    }
}

// ---------------------------------------------------------------- 1 and 2

fn oracle_merges(corpus: &[Vec<u8>], target: usize, n_specials: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut seqs: Vec<Vec<Vec<u8>>> = corpus.iter().map(|s| s.iter().map(|&b| vec![b]).collect()).collect();
    let mut known: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();
    while 256 + n_specials + merges.len() < target {
        let mut counts: BTreeMap<(&[u8], &[u8]), usize> = BTreeMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((&w[0], &w[1])).or_default() += 1;
            }
        }
        // lexicographic iteration: the first maximum wins ties
        let mut best: Option<((&[u8], &[u8]), usize)> = None;
        for (&pair, &c) in &counts {
            if c < 2 || known.contains(&[pair.0, pair.1].concat()) {
                continue;
            }
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((pair, c));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_vec(), r.to_vec());
        for s in seqs.iter_mut() {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    out.push([l.as_slice(), r.as_slice()].concat());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut s[i]));
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

fn oracle_encode(vocab: &Vocabulary, text: &[u8]) -> Vec<u32> {
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

const PIECES: &[&str] = &[
    "rm", " -rf", " /bin/*", " 2023-04-21_12:45:67.log", "cat", " $DELETE_LIST", " | ", "grep", " *.log", "xargs",
    " -0", "time ", "kill", " -9", " 12345", "echo ", "'kill 7890'", "`kill 7890`", "\"", "'", "`", "\0", "ls", " -la",
    " /tmp", "&&", ";", "aaaa", "abab",
];

fn archetype_string(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut s = Vec::new();
    for _ in 0..rng.gen_range(0..8) {
        if rng.gen_bool(0.75) {
            s.extend_from_slice(PIECES[rng.gen_range(0..PIECES.len())].as_bytes());
        } else {
            s.push(rng.gen());
        }
    }
    s
}

fn random_corpus(rng: &mut ChaCha8Rng, max_bytes: usize) -> Vec<Vec<u8>> {
    let budget = rng.gen_range(64..=max_bytes);
    let mut corpus = Vec::new();
    let mut used = 0;
    loop {
        let s = archetype_string(rng);
        if used + s.len() > budget {
            break;
        }
        used += s.len();
        corpus.push(s);
    }
    corpus
}

fn learned_pairs(v: &Vocabulary) -> Vec<(Vec<u8>, Vec<u8>)> {
    v.merges()
        .iter()
        .map(|m| (v.token_bytes(m.left).unwrap().to_vec(), v.token_bytes(m.right).unwrap().to_vec()))
        .collect()
}

fn bpe_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut merges = 0;
    let mut last = None;
    for i in 0..100 {
        let corpus = random_corpus(&mut rng, 10 * 1024);
        let bytes: usize = corpus.iter().map(Vec::len).sum();
        ensure!(bytes <= 10 * 1024, "corpus {i} has {bytes} bytes");
        let target = rng.gen_range(262..700);
        let v = train_bpe(&corpus, target, &REQUIRED_SPECIALS).map_err(|e| e.to_string())?;
        let want = oracle_merges(&corpus, target, REQUIRED_SPECIALS.len());
        ensure!(learned_pairs(&v) == want, "corpus {i}: merge sequence differs from the recount oracle");
        merges += want.len();
        last = Some(v);
    }
    let v = last.expect("100 corpora");
    for i in 0..1000 {
        let s: Vec<u8> = if i % 2 == 0 {
            archetype_string(&mut rng)
        } else {
            (0..rng.gen_range(0..80)).map(|_| rng.gen()).collect()
        };
        ensure!(v.encode(&s) == oracle_encode(&v, &s), "encode differs on {s:?}");
    }
    Ok(format!("100 corpora, {merges} merges identical; 1000 encodings identical"))
}

fn bpe_roundtrip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let corpus: Vec<Vec<u8>> = (0..2000).map(|_| archetype_string(&mut rng)).collect();
    let v = train_bpe(&corpus, 1000, &REQUIRED_SPECIALS).map_err(|e| e.to_string())?;
    let special = [b'\0', b'\'', b'"', b'`', b'|'];
    let mut tokens = 0;
    for i in 0..100_000 {
        let mut s = archetype_string(&mut rng);
        if i % 3 == 0 {
            s.extend((0..rng.gen_range(0..40)).map(|_| rng.gen::<u8>()));
        }
        s.insert(rng.gen_range(0..=s.len()), special[i % special.len()]);
        let ids = v.encode(&s);
        ensure!(ids.iter().all(|&t| !v.is_special(t)), "encode produced a special token for {s:?}");
        tokens += ids.len();
        let back = v.decode(&ids).map_err(|e| e.to_string())?;
        ensure!(back == s, "roundtrip failed for {s:?}");
    }
    Ok(format!("100000 strings, {tokens} tokens, vocabulary {}", v.len()))
}

// ---------------------------------------------------------------- 3

fn toy_config() -> ModelConfig {
    ModelConfig {
        hidden_size: 8,
        attention_heads: 2,
        hidden_layers: 1,
        intermediate_size: 32,
        vocab_size: 64,
        max_len: 8,
        ..Default::default()
    }
}

fn toy_input(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> ModelInput {
    let real = rng.gen_range(3..=cfg.max_len);
    let split = rng.gen_range(1..real);
    let token_ids = (0..cfg.max_len).map(|i| if i < real { rng.gen_range(0..cfg.vocab_size as u32) } else { 0 }).collect();
    let mut mlm_targets = Vec::new();
    for pos in 1..real {
        if rng.gen_bool(0.4) {
            mlm_targets.push((pos, rng.gen_range(0..cfg.vocab_size as u32)));
        }
    }
    if mlm_targets.is_empty() {
        mlm_targets.push((1, 3));
    }
    ModelInput {
        token_ids,
        segment_ids: (0..cfg.max_len).map(|i| u8::from(i >= split && i < real)).collect(),
        attention_mask: (0..cfg.max_len).map(|i| u8::from(i < real)).collect(),
        mlm_targets,
        next_label: Some(rng.gen_bool(0.5)),
        class_label: RiskClass::from_index(rng.gen_range(0..3)),
    }
}

fn gradient_check() -> Check {
    let cfg = toy_config();
    let mut p = init_params::<f64>(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // Scaled-up weights and random biases so every path carries a gradient
    // well above finite-difference noise.
    for (_, t) in p.named_mut() {
        if t.shape.len() == 2 {
            t.data.iter_mut().for_each(|v| *v *= 20.0);
        } else {
            t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }
    let batch: Vec<ModelInput> = (0..3).map(|_| toy_input(&mut rng, &cfg)).collect();
    let heads = Heads { mlm: true, nsp: true, cls: true };
    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    let mut tensors = 0;
    let mut zero = 0;
    for dropout in [None, Some(99)] {
        let (_, grads) = backward(&p, &batch, heads, dropout, 1.0);
        let analytic: Vec<(String, Vec<f64>)> = grads.named().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
        for (ti, (name, g)) in analytic.iter().enumerate() {
            let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
            for (i, &ga) in g.iter().enumerate() {
                let at = |delta: f64| {
                    let mut q = p.clone();
                    q.named_mut()[ti].1.data[i] += delta;
                    batch_loss(&q, &batch, heads, dropout).total()
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                diff += (numeric - ga).powi(2);
                na += ga * ga;
                nn += numeric * numeric;
            }
            let scale = na.sqrt().max(nn.sqrt());
            if scale < 1e-9 {
                // key bias: softmax is shift invariant, both sides vanish
                ensure!(diff.sqrt() < 1e-9, "{name}: analytic {} vs numeric {}", na.sqrt(), nn.sqrt());
                zero += 1;
                tensors += 1;
                continue;
            }
            let rel = diff.sqrt() / scale;
            if rel > worst.0 {
                worst = (rel, name.clone());
            }
            ensure!(rel < 1e-4, "{name}: relative error {rel:e}");
            tensors += 1;
        }
    }
    Ok(format!("{tensors} tensor checks (eval and dropout), {zero} identically zero, worst {:.2e} at {}", worst.0, worst.1))
}

// ---------------------------------------------------------------- 4

const DESK_SEED: u64 = 1;
const DESK_SCRIPTS: usize = 5000;

struct DeskRun {
    params: Parameters<f32>,
    vocab: Vocabulary,
    history: Vec<f64>,
    elapsed: Duration,
}

fn desk_pretraining(seed: u64) -> Result<DeskRun, cmdrisk_model::ModelError> {
    let settings = Settings::desk();
    let start = Instant::now();
    let scripts = generate_synthetic_scripts(DESK_SCRIPTS, seed);
    let vocab = train_vocabulary(&scripts, &settings.model)?;
    let run = pretrain_scripts(&scripts, &vocab, &settings, seed, None)?;
    Ok(DeskRun {
        params: run.params,
        vocab,
        history: run.history.iter().map(|r| r.total).collect(),
        elapsed: start.elapsed(),
    })
}

fn pretraining_sanity(shared: &mut Shared) -> Check {
    let settings = Settings::desk();
    let run = desk_pretraining(DESK_SEED).map_err(|e| e.to_string())?;
    ensure!(run.vocab.len() == 1000, "vocabulary has {} tokens", run.vocab.len());
    ensure!(run.history.len() == 2000, "{} steps", run.history.len());
    let expected = 1000f64.ln() + 2f64.ln();
    let initial = run.history[0];
    let off = (initial - expected).abs() / expected;
    ensure!(off <= 0.2, "initial loss {initial:.4} is {:.1}% from {expected:.4}", 100.0 * off);
    // noise-robust end point: mean of the last 50 steps
    let tail = run.history[run.history.len() - 50..].iter().sum::<f64>() / 50.0;
    let drop = 1.0 - tail / initial;
    ensure!(drop >= 0.5, "loss fell {:.1}% ({initial:.4} -> {tail:.4})", 100.0 * drop);
    ensure!(run.elapsed < Duration::from_secs(15 * 60), "pretraining took {:?}", run.elapsed);

    // replay the first 100 steps from scratch
    let scripts = generate_synthetic_scripts(DESK_SCRIPTS, DESK_SEED);
    let vocab = train_vocabulary(&scripts, &settings.model).map_err(|e| e.to_string())?;
    ensure!(vocab.to_file_string() == run.vocab.to_file_string(), "vocabulary differs on replay");
    let examples = annotate_corpus(&scripts, settings.negative_ratio, DESK_SEED).map_err(|e| e.to_string())?;
    let cfg = ModelConfig { vocab_size: vocab.len(), ..settings.model.clone() };
    let tc = TrainConfig { seed: DESK_SEED, max_steps: Some(100), ..settings.pretrain.clone() };
    let replay = pretrain(&examples, &vocab, init_params(&cfg, DESK_SEED), &tc, None).map_err(|e| e.to_string())?;
    let same = replay.history.iter().zip(&run.history).all(|(a, &b)| a.total.to_bits() == b.to_bits());
    ensure!(same && replay.history.len() == 100, "replayed losses differ");

    let detail = format!(
        "initial {initial:.4} (ln1000+ln2 = {expected:.4}), last-50 mean {tail:.4}, drop {:.1}%, replay identical, {:.0}s",
        100.0 * drop,
        run.elapsed.as_secs_f64()
    );
    shared.pretrained = Some((run.params, run.vocab));
    Ok(detail)
}

// ---------------------------------------------------------------- 5 and 6

fn transfer_effect(shared: &mut Shared) -> Check {
    let (params, vocab) = shared.pretrained()?;
    let start = Instant::now();
    let settings = Settings::desk();
    let splits = shared.splits().clone();
    let dev = stratified_subsample(&splits.dev, DEV_SAMPLE, DATA_SEED).ok_or("dev subsample")?;
    let pre = TransformerTrainer {
        name: "pretrained".into(),
        backbone: Backbone::Pretrained(params.clone()),
        vocab: vocab.clone(),
        config: SMALL_DATA_FINETUNE,
    };
    let rnd = TransformerTrainer {
        name: "random-init".into(),
        backbone: Backbone::Random(params.config.clone()),
        vocab,
        config: SMALL_DATA_FINETUNE,
    };
    let bow = BaselineTrainer { kind: BaselineKind::Bow, config: settings.baselines.clone(), corpus: Vec::new() };
    let mut lines = Vec::new();
    let mut wins = 0;
    for seed in 0..3u64 {
        let train = stratified_subsample(&splits.train, 100, seed).ok_or("train subsample")?;
        let mut f1 = Vec::new();
        for t in [&pre as &dyn Trainer, &rnd, &bow] {
            let model = t.train(&train, &dev, seed).map_err(|e| format!("{}: {e}", t.name()))?;
            f1.push(positive_f1(model.as_ref(), &splits.test));
        }
        let [p, r, b] = [f1[0], f1[1], f1[2]];
        let win = p.or_below_zero() > r.or_below_zero() && p.or_below_zero() > b.or_below_zero();
        wins += usize::from(win);
        lines.push(format!("seed {seed}: pretrained {p} random {r} bow {b}"));
    }
    let elapsed = start.elapsed();
    let detail = format!("{} ({:.0}s)", lines.join("; "), elapsed.as_secs_f64());
    ensure!(wins == 3, "pretrained wins {wins}/3: {detail}");
    ensure!(elapsed < Duration::from_secs(30 * 60), "took {elapsed:?}");
    Ok(detail)
}

/// Dev samples used for epoch selection.
const DEV_SAMPLE: usize = 1000;

/// 100 training commands give too few steps at the full-data batch size.
const SMALL_DATA_FINETUNE: TrainConfig =
    TrainConfig { batch_size: 8, epochs: 50, learning_rate: 5e-4, mask_rate: 0.15, seed: 0, max_steps: None };

fn end_to_end(shared: &mut Shared) -> Check {
    let (params, vocab) = shared.pretrained()?;
    let start = Instant::now();
    let settings = Settings::desk();
    let splits = shared.splits().clone();
    let counts = class_counts(&[splits.train.clone(), splits.dev.clone(), splits.test.clone()].concat());
    ensure!(counts == [37586, 9431, 141], "class counts {counts:?}");
    let dev = stratified_subsample(&splits.dev, DEV_SAMPLE, DATA_SEED).ok_or("dev subsample")?;
    let config = TrainConfig { seed: DATA_SEED, ..settings.finetune.clone() };
    let result = finetune(params, &vocab, &splits.train, &dev, &config, None).map_err(|e| e.to_string())?;
    let mut cm = ConfusionMatrix::default();
    for d in &splits.test {
        cm.add(d.label, result.classifier.predict(&d.command).risk);
    }
    let f1 = micro_avg_positive(&cm, &POSITIVE).f1;
    let blocked = class_metrics(&cm, RiskClass::Blocked).recall;
    let elapsed = start.elapsed();
    let detail = format!(
        "R+B F1 {f1}, BLOCKED recall {blocked} ({}/{}), best epoch {}, {:.0}s",
        cm.get(RiskClass::Blocked, RiskClass::Blocked),
        splits.test.iter().filter(|d| d.label == RiskClass::Blocked).count(),
        result.best_epoch,
        elapsed.as_secs_f64()
    );
    ensure!(f1.or_below_zero() >= 0.95, "{detail}");
    ensure!(blocked.or_below_zero() >= 0.875, "{detail}");
    ensure!(elapsed < Duration::from_secs(2 * 3600), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn oracle_prf(gold: &[RiskClass], pred: &[RiskClass], classes: &[RiskClass]) -> (u64, u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (g, p) in gold.iter().zip(pred) {
        for c in classes {
            match (g == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    (tp, fp, fn_)
}

fn compare(label: &str, got: Prf, (tp, fp, fn_): (u64, u64, u64)) -> Result<(), String> {
    let p = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let r = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    ensure!(got.precision.value() == p, "{label} precision {:?} vs {p:?}", got.precision);
    ensure!(got.recall.value() == r, "{label} recall {:?} vs {r:?}", got.recall);
    let f = if tp == 0 {
        None
    } else {
        let (p, r) = (p.expect("tp > 0"), r.expect("tp > 0"));
        Some(2.0 * p * r / (p + r))
    };
    match (got.f1.value(), f) {
        (None, None) => {}
        (Some(a), Some(b)) => ensure!((a - b).abs() <= 1e-12 * b, "{label} f1 {a} vs {b}"),
        (a, b) => return Err(format!("{label} f1 {a:?} vs {b:?}")),
    }
    ensure!((got.f1.to_string() == "-") == f.is_none(), "{label} rendering");
    Ok(())
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut undefined = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..60);
        let weights: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.2)];
        let draw = |rng: &mut ChaCha8Rng| {
            let x = rng.gen_range(0.0..weights.iter().sum::<f64>().max(1e-9));
            if x < weights[0] {
                RiskClass::Safe
            } else if x < weights[0] + weights[1] {
                RiskClass::Risky
            } else {
                RiskClass::Blocked
            }
        };
        let gold: Vec<RiskClass> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<RiskClass> =
            gold.iter().map(|&g| if rng.gen_bool(0.6) { g } else { draw(&mut rng) }).collect();
        let cm = ConfusionMatrix::from_labels(&gold, &pred);
        for c in RiskClass::ALL {
            let got = class_metrics(&cm, c);
            undefined += usize::from(!got.f1.is_defined());
            compare(c.as_str(), got, oracle_prf(&gold, &pred, &[c]))?;
        }
        compare("R+B", micro_avg_positive(&cm, &POSITIVE), oracle_prf(&gold, &pred, &POSITIVE))?;
    }
    ensure!(undefined > 0, "no undefined case exercised");
    Ok(format!("1000 vectors, {undefined} undefined per-class F1 values"))
}

// ---------------------------------------------------------------- 8

fn lr_gradient(w: &[[f64; 2]], b: &[f64; 2], x: &[[f64; 2]], y: &[usize], c: f64) -> f64 {
    let mut gw = [[w[0][0] / c, w[0][1] / c], [w[1][0] / c, w[1][1] / c]];
    let mut gb = [0.0; 2];
    for (xi, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = (0..2).map(|j| b[j] + xi[0] * w[0][j] + xi[1] * w[1][j]).collect();
        let m = z[0].max(z[1]);
        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
        for j in 0..2 {
            let r = (z[j] - m).exp() / s - f64::from(u8::from(j == yi));
            gb[j] += r;
            gw[0][j] += xi[0] * r;
            gw[1][j] += xi[1] * r;
        }
    }
    gw.iter().flatten().chain(&gb).map(|v| v * v).sum::<f64>().sqrt()
}

fn baseline_correctness() -> Check {
    // separable logistic regression
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..40 {
        let (label, shift) = if i % 2 == 0 { (RiskClass::Safe, -1.5) } else { (RiskClass::Risky, 1.5) };
        x.push([shift + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        y.push(label);
    }
    let sparse: Vec<SparseVec> = x.iter().map(|v| vec![(0, v[0]), (1, v[1])]).collect();
    let m = train_logreg(&sparse, &y, 2, &LogRegConfig::default()).map_err(|e| e.to_string())?;
    let correct = sparse.iter().zip(&y).filter(|(v, l)| m.predict(v) == **l).count();
    ensure!(correct == 40, "logistic regression {correct}/40 on separable data");
    let k = m.classes.len();
    let w: Vec<[f64; 2]> = (0..2).map(|f| [m.weights[f * k], m.weights[f * k + 1]]).collect();
    let yi: Vec<usize> = y.iter().map(|l| m.classes.iter().position(|c| c == l).unwrap()).collect();
    let gnorm = lr_gradient(&w, &[m.bias[0], m.bias[1]], &x, &yi, LogRegConfig::default().c);
    ensure!(gnorm < 1e-5, "gradient norm at optimum {gnorm:e}");

    // single tree against a hand-built CART
    let fx = vec![vec![0.0f32, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let fy = vec![RiskClass::Safe, RiskClass::Safe, RiskClass::Risky, RiskClass::Blocked];
    let cfg = ForestConfig { trees: 1, bootstrap: false, max_features: MaxFeatures::All, ..Default::default() };
    let want = Tree {
        nodes: vec![
            Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
            Node::Leaf { class: RiskClass::Safe, counts: [2, 0, 0] },
            Node::Split { feature: 1, threshold: 0.5, left: 3, right: 4 },
            Node::Leaf { class: RiskClass::Risky, counts: [0, 1, 0] },
            Node::Leaf { class: RiskClass::Blocked, counts: [0, 0, 1] },
        ],
    };
    ensure!(train_tree(&fx, &fy, (0..4).collect(), &cfg, 0) == want, "tree differs from hand-built CART");

    // Word2Vec co-occurrence
    let mut corpus = Vec::new();
    for _ in 0..400 {
        corpus.push(format!("the {} sat on the mat", ["cat", "dog"][rng.gen_range(0..2)]));
        corpus.push(format!("grab a {} from the shed", ["wrench", "hammer"][rng.gen_range(0..2)]));
    }
    let t = train_word2vec(&corpus, &Word2VecConfig { epochs: 5, ..Default::default() }, 1).map_err(|e| e.to_string())?;
    let cos = |a: &str, b: &str| t.cosine(a, b).unwrap_or(f64::NAN);
    let related = cos("cat", "dog");
    for other in ["wrench", "hammer", "shed", "grab"] {
        ensure!(related > cos("cat", other), "cat~dog {related} not above cat~{other}");
    }
    ensure!(cos("wrench", "hammer") > cos("wrench", "cat"), "wrench~hammer ordering");
    Ok(format!("LR 40/40, gradient norm {gnorm:.1e}; CART tree identical; cat~dog {related:.3} above unrelated pairs"))
}

// ---------------------------------------------------------------- 9

fn rules_and_policy() -> Check {
    let rules = load_rules(common::FIXTURE_RULES).map_err(|e| e.to_string())?;
    let fixture = common::fixture_commands();
    for (cmd, want) in &fixture {
        let got = rules.match_command(cmd);
        ensure!(got.risk == *want, "{cmd:?}: rules say {} ({:?}), annotated {want}", got.risk, got.rule_id);
    }

    let table = [
        (RiskClass::Safe, Privilege::Standard, Decision::Allow),
        (RiskClass::Safe, Privilege::Elevated, Decision::Allow),
        (RiskClass::Risky, Privilege::Standard, Decision::Block),
        (RiskClass::Risky, Privilege::Elevated, Decision::Allow),
        (RiskClass::Blocked, Privilege::Standard, Decision::Block),
        (RiskClass::Blocked, Privilege::Elevated, Decision::Block),
    ];
    for (r, p, d) in table {
        ensure!(decide(r, p) == d, "decide({r}, {p:?})");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let faults: Vec<Arc<dyn RiskModel>> = vec![
        Arc::new(common::Panics),
        Arc::new(common::Fixed(RiskClass::Safe, [f64::NAN, 0.0, 1.0])),
        Arc::new(common::Fixed(RiskClass::Safe, [0.7, 0.7, 0.0])),
    ];
    let mut injected = 0;
    for (i, model) in faults.into_iter().enumerate() {
        let log = RecordLog::open(&dir.path().join(format!("fault{i}.jsonl"))).map_err(|e| e.to_string())?;
        let svc = Service::new(Engines { model, rules: Some(rules.clone()) }, log);
        for p in [Privilege::Standard, Privilege::Elevated] {
            let r = svc.handle_request(&ClassifyRequest { cmd: "ls".into(), privilege: p, origin: "t".into() });
            ensure!(r.decision == Decision::Block && r.error.is_some(), "fault {i} allowed: {r:?}");
            injected += 1;
        }
    }
    #[cfg(target_os = "linux")]
    {
        let log = RecordLog::open(std::path::Path::new("/dev/full")).map_err(|e| e.to_string())?;
        let svc = Service::new(Engines { model: Arc::new(common::Keyword), rules: None }, log);
        let r = svc.handle_request(&ClassifyRequest { cmd: "ls".into(), privilege: Privilege::Elevated, origin: "t".into() });
        ensure!(r.decision == Decision::Block, "log write failure allowed");
        injected += 1;
    }

    // online versus offline on 1000 replayed requests
    let data = generate_synthetic_dataset(3000, DEFAULT_RATIOS, 11).map_err(|e| e.to_string())?;
    let settings = Settings::desk();
    let model: Arc<dyn RiskModel> =
        Arc::new(cmdrisk::trainers::train_baseline(BaselineKind::Bow, &data[..2000], &[], &settings.baselines, 0).map_err(|e| e.to_string())?);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let requests: Vec<ClassifyRequest> = data[2000..]
        .iter()
        .map(|d| ClassifyRequest {
            cmd: d.command.clone(),
            privilege: if rng.gen() { Privilege::Standard } else { Privilege::Elevated },
            origin: format!("host-{}", rng.gen_range(0..4)),
        })
        .collect();
    let log_path = dir.path().join("online.jsonl");
    let svc = Service::new(
        Engines { model: Arc::clone(&model), rules: Some(rules.clone()) },
        RecordLog::open(&log_path).map_err(|e| e.to_string())?,
    );
    let wire: String = requests.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let mut out = Vec::new();
    svc.serve_stream(Cursor::new(wire), &mut out).map_err(|e| e.to_string())?;
    let online: Vec<ClassifyResponse> =
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    ensure!(online.len() == 1000, "{} responses", online.len());
    let logged = read_log(&log_path).map_err(|e| e.to_string())?;
    ensure!(logged.len() == 1000, "{} log records", logged.len());
    let mut blocks = 0;
    for ((req, resp), entry) in requests.iter().zip(&online).zip(&logged) {
        let offline = model.predict(&req.cmd);
        let want = decide(offline.risk, req.privilege);
        ensure!(resp.decision == want && resp.risk == Some(offline.risk), "{:?}: online {resp:?}", req.cmd);
        let LogEntry::Record(rec) = entry else { return Err("quarantined log line".into()) };
        ensure!(rec.command == req.cmd && rec.decision == want, "log record mismatch for {:?}", req.cmd);
        blocks += usize::from(want == Decision::Block);
    }
    Ok(format!(
        "{} fixture commands, 6 policy cases, {injected} injected faults blocked, 1000 online = offline ({blocks} BLOCK)",
        fixture.len()
    ))
}

// ---------------------------------------------------------------- 10

fn splits_and_generation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ratios = SplitRatios::default();
    for i in 0..100 {
        let counts = [rng.gen_range(3..2000), rng.gen_range(3..600), rng.gen_range(3..40)];
        let mut data = Vec::new();
        for (c, &n) in RiskClass::ALL.iter().zip(&counts) {
            data.extend((0..n).map(|k| LabeledCommand::new(format!("{c} {i} {k}"), *c)));
        }
        let s = stratified_split(&data, ratios, rng.gen()).map_err(|e| e.to_string())?;
        for (part, r) in [&s.train, &s.dev, &s.test].into_iter().zip(ratios.0) {
            let got = class_counts(part);
            for c in 0..3 {
                let exact = counts[c] as f64 * r;
                ensure!((got[c] as f64 - exact).abs() <= 1.0, "dataset {i} class {c}: {} vs {exact}", got[c]);
            }
        }
        let all: HashSet<&str> = [&s.train, &s.dev, &s.test].iter().flat_map(|p| p.iter().map(|d| d.command.as_str())).collect();
        ensure!(all.len() == data.len(), "dataset {i}: splits overlap or drop samples");
    }
    let data = generate_synthetic_dataset(47158, DEFAULT_RATIOS, 0).map_err(|e| e.to_string())?;
    let counts = class_counts(&data);
    ensure!(counts == [37586, 9431, 141], "generated class counts {counts:?}");
    Ok("100 datasets within one sample per class and split; 47158 -> 37586/9431/141".into())
}

// ---------------------------------------------------------------- runner

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| args.is_empty() || args.contains(&n);
    let mut shared = Shared::default();
    type Crit<'a> = (usize, &'a str, u64, Box<dyn FnMut(&mut Shared) -> Check + 'a>);
    let criteria: Vec<Crit> = vec![
        (1, "BPE oracle equivalence", 60, Box::new(|_| bpe_oracle_equivalence())),
        (2, "BPE roundtrip", 60, Box::new(|_| bpe_roundtrip())),
        (3, "gradient correctness", 300, Box::new(|_| gradient_check())),
        (4, "pretraining sanity", 30 * 60, Box::new(pretraining_sanity)),
        (5, "transfer-learning effect", 45 * 60, Box::new(transfer_effect)),
        (6, "end-to-end surrogate", 2 * 3600, Box::new(end_to_end)),
        (7, "metrics oracle", 60, Box::new(|_| metrics_oracle())),
        (8, "baseline correctness", 300, Box::new(|_| baseline_correctness())),
        (9, "rule engine and policy", 120, Box::new(|_| rules_and_policy())),
        (10, "splits and generation", 60, Box::new(|_| splits_and_generation())),
    ];
    let mut failed = 0;
    for (n, title, limit, mut run) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(|| run(&mut shared))) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs > limit as f64 => Err(format!("{d}; exceeded {limit}s")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {title} [{secs:.1}s]: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
