//! Self-supervised pretraining and supervised finetuning.

use std::io::Write;

use cmdrisk_core::dataset::LabeledCommand;
use cmdrisk_core::eval::{micro_avg_positive, ConfusionMatrix, Metric, POSITIVE};
use cmdrisk_core::{ModelInput, Prediction, RiskClass, RiskModel, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::config::ModelConfig;
use crate::encoder::{backward, classify, Heads};
use crate::params::Parameters;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, whatever the epoch count.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 128, epochs: 16, learning_rate: 3e-4, mask_rate: 0.15, seed: 0, max_steps: None }
    }
}

/// splitmix64 over a pair, for deriving independent seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PretrainExample {
    pub command_a: Vec<u8>,
    pub command_b: Vec<u8>,
    pub is_next: bool,
}

/// One example per adjacent command pair. With probability
/// `negative_ratio` the successor is replaced by a command drawn uniformly
/// from the other scripts and the pair is labeled not-next.
pub fn annotate_corpus<S: AsRef<str>>(
    scripts: &[Vec<S>],
    negative_ratio: f64,
    seed: u64,
) -> Result<Vec<PretrainExample>, ModelError> {
    let pool: Vec<(usize, &str)> =
        scripts.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |c| (i, c.as_ref()))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (si, script) in scripts.iter().enumerate() {
        let foreign = pool.len() - script.len();
        for w in script.windows(2) {
            let a = w[0].as_ref().as_bytes().to_vec();
            if foreign > 0 && rng.gen_bool(negative_ratio) {
                let b = loop {
                    let (owner, c) = pool[rng.gen_range(0..pool.len())];
                    if owner != si {
                        break c;
                    }
                };
                out.push(PretrainExample { command_a: a, command_b: b.as_bytes().to_vec(), is_next: false });
            } else {
                out.push(PretrainExample { command_a: a, command_b: w[1].as_ref().as_bytes().to_vec(), is_next: true });
            }
        }
    }
    if out.is_empty() {
        return Err(ModelError::NoPairs);
    }
    Ok(out)
}

/// Selects `⌈mask_rate · k⌉` (at least one) of the `k` real, non-special
/// positions. Each selected token becomes MASK with probability 0.8, a
/// random non-special token with 0.1, and stays unchanged otherwise.
pub fn apply_masking_with<R: Rng>(input: &ModelInput, vocab: &Vocabulary, mask_rate: f64, rng: &mut R) -> ModelInput {
    let candidates: Vec<usize> = (0..input.len())
        .filter(|&i| input.attention_mask[i] == 1 && !vocab.is_special(input.token_ids[i]))
        .collect();
    let mut out = input.clone();
    out.mlm_targets.clear();
    if candidates.is_empty() {
        return out;
    }
    let k = ((mask_rate * candidates.len() as f64 - 1e-9).ceil() as usize).clamp(1, candidates.len());
    let mut chosen: Vec<usize> =
        rand::seq::index::sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    chosen.sort_unstable();
    let specials = vocab.specials();
    let n_tokens = vocab.len() as u32;
    for pos in chosen {
        let original = input.token_ids[pos];
        let r: f64 = rng.gen();
        if r < 0.8 {
            out.token_ids[pos] = specials.mask;
        } else if r < 0.9 {
            out.token_ids[pos] = loop {
                let t = rng.gen_range(0..n_tokens);
                if !vocab.is_special(t) {
                    break t;
                }
            };
        }
        out.mlm_targets.push((pos, original));
    }
    out
}

pub fn apply_masking(input: &ModelInput, vocab: &Vocabulary, mask_rate: f64, seed: u64) -> ModelInput {
    apply_masking_with(input, vocab, mask_rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One line of training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: String,
    pub step: usize,
    pub epoch: usize,
    pub mlm: f64,
    pub nsp: f64,
    pub cls: f64,
    pub total: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Seed of the shuffle for this epoch.
    pub shuffle_seed: u64,
}

fn emit(telemetry: &mut Option<&mut dyn Write>, rec: &StepRecord) -> Result<(), ModelError> {
    if let Some(w) = telemetry.as_deref_mut() {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub struct PretrainResult {
    pub params: Parameters<f32>,
    pub history: Vec<StepRecord>,
}

/// Minimizes masked-LM plus next-command cross-entropy with Adam. Inputs
/// are re-masked every epoch. On a non-finite loss or gradient the error
/// carries no parameters; callers keep the last good copy via `on_step`.
pub fn pretrain(
    examples: &[PretrainExample],
    vocab: &Vocabulary,
    init: Parameters<f32>,
    config: &TrainConfig,
    mut telemetry: Option<&mut dyn Write>,
) -> Result<PretrainResult, ModelError> {
    let max_len = init.config.max_len;
    let base: Vec<ModelInput> = examples
        .iter()
        .map(|e| {
            let mut x = vocab.build_input(&e.command_a, Some(&e.command_b), max_len);
            x.next_label = Some(e.is_next);
            x
        })
        .collect();
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut history = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..base.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        let shuffle_seed = derive_seed(config.seed, 2 * epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2 * epoch as u64 + 1));
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<ModelInput> =
                chunk.iter().map(|&i| apply_masking_with(&base[i], vocab, config.mask_rate, &mut mask_rng)).collect();
            let (loss, grads) = backward(&params, &batch, Heads::PRETRAIN, Some(derive_seed(config.seed, 1 << 40 | step as u64)), 1.0f32);
            if !loss.total().is_finite() {
                return Err(ModelError::Diverged { step });
            }
            adam_step(&mut params, &grads, &mut state, config.learning_rate)?;
            let rec = StepRecord {
                phase: "pretrain".into(),
                step,
                epoch,
                mlm: loss.mlm,
                nsp: loss.nsp,
                cls: 0.0,
                total: loss.total(),
                learning_rate: config.learning_rate,
                seed: config.seed,
                shuffle_seed,
            };
            emit(&mut telemetry, &rec)?;
            history.push(rec);
            step += 1;
        }
    }
    Ok(PretrainResult { params, history })
}

/// A finetuned encoder with its tokenizer.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub params: Parameters<f32>,
    pub vocab: Vocabulary,
}

impl Classifier {
    pub fn new(params: Parameters<f32>, vocab: Vocabulary) -> Self {
        Classifier { params, vocab }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn probabilities(&self, command: &[u8]) -> [f64; 3] {
        let input = self.vocab.build_input(command, None, self.params.config.max_len);
        let p = classify(&self.params, &input);
        assert_eq!(p.len(), 3, "classifier must have three outputs");
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }
}

/// Most probable class and the class probabilities for one command.
pub fn predict_risk(classifier: &Classifier, command: &[u8]) -> (RiskClass, [f64; 3]) {
    let probs = classifier.probabilities(command);
    (RiskClass::argmax(&probs), probs)
}

impl RiskModel for Classifier {
    fn predict(&self, command: &str) -> Prediction {
        Prediction::from_probs(self.probabilities(command.as_bytes()))
    }
}

/// Positive-class F1 of `model` on `data`.
pub fn dev_f1(model: &dyn RiskModel, data: &[LabeledCommand]) -> Metric {
    let mut cm = ConfusionMatrix::default();
    for ex in data {
        cm.add(ex.label, model.predict(&ex.command).risk);
    }
    micro_avg_positive(&cm, &POSITIVE).f1
}

pub struct FinetuneResult {
    pub classifier: Classifier,
    pub best_epoch: usize,
    pub best_dev_f1: Metric,
    pub dev_f1: Vec<Metric>,
    pub history: Vec<StepRecord>,
}

/// Trains encoder and classification head end to end, keeping the epoch
/// with the best dev positive-class F1 (earliest on ties). Undefined F1
/// ranks below every defined value.
pub fn finetune(
    init: Parameters<f32>,
    vocab: &Vocabulary,
    train: &[LabeledCommand],
    dev: &[LabeledCommand],
    config: &TrainConfig,
    mut telemetry: Option<&mut dyn Write>,
) -> Result<FinetuneResult, ModelError> {
    if init.config.output_classes != 3 {
        return Err(ModelError::Config("classifier needs exactly 3 output classes".into()));
    }
    let first = train.first().ok_or_else(|| ModelError::Config("empty training split".into()))?.label;
    if train.iter().all(|e| e.label == first) {
        return Err(ModelError::SingleClass(first));
    }
    let max_len = init.config.max_len;
    let inputs: Vec<ModelInput> = train
        .iter()
        .map(|e| {
            let mut x = vocab.build_input(e.command.as_bytes(), None, max_len);
            x.class_label = Some(e.label);
            x
        })
        .collect();
    let mut model = Classifier::new(init, vocab.clone());
    let mut state = AdamState::new(&model.params);
    let mut best: Option<(Parameters<f32>, usize, Metric)> = None;
    let mut scores = Vec::new();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let shuffle_seed = derive_seed(config.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch: Vec<ModelInput> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let (loss, grads) =
                backward(&model.params, &batch, Heads::CLASSIFY, Some(derive_seed(config.seed, 1 << 40 | step as u64)), 1.0f32);
            if !loss.total().is_finite() {
                return Err(ModelError::Diverged { step });
            }
            adam_step(&mut model.params, &grads, &mut state, config.learning_rate)?;
            let rec = StepRecord {
                phase: "finetune".into(),
                step,
                epoch,
                mlm: 0.0,
                nsp: 0.0,
                cls: loss.cls,
                total: loss.total(),
                learning_rate: config.learning_rate,
                seed: config.seed,
                shuffle_seed,
            };
            emit(&mut telemetry, &rec)?;
            history.push(rec);
            step += 1;
        }
        let f1 = dev_f1(&model, dev);
        log::debug!("finetune epoch {epoch}: dev F1 {f1}");
        scores.push(f1);
        if best.as_ref().is_none_or(|(_, _, b)| f1.or_below_zero() > b.or_below_zero()) {
            best = Some((model.params.clone(), epoch, f1));
        }
    }
    let (params, best_epoch, best_dev_f1) = match best {
        Some(b) => b,
        None => (model.params.clone(), 0, Metric::UNDEFINED),
    };
    Ok(FinetuneResult { classifier: Classifier::new(params, vocab.clone()), best_epoch, best_dev_f1, dev_f1: scores, history })
}
