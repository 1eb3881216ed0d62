//! Data-size experiment: train every model kind on growing stratified
//! subsamples of the training split and score R+B F1 on a fixed test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{class_counts, largest_remainder, LabeledCommand};
use crate::eval::{micro_avg_positive, ConfusionMatrix, CurvePoint, Metric, POSITIVE};
use crate::risk::RiskClass;
use crate::RiskModel;

/// Default training-set sizes.
pub const DEFAULT_SIZES: [usize; 8] = [100, 200, 500, 1000, 2000, 5000, 10000, 20000];

/// Builds one kind of model from labeled data.
pub trait Trainer {
    fn name(&self) -> &str;
    fn train(
        &self,
        train: &[LabeledCommand],
        dev: &[LabeledCommand],
        seed: u64,
    ) -> Result<Box<dyn RiskModel>, Box<dyn std::error::Error + Send + Sync>>;
}

/// Stratified draw of `size` samples. Class shares follow `pool` by largest
/// remainder, and every class present in `pool` gets at least one sample
/// (taken from the largest class).
pub fn stratified_subsample(pool: &[LabeledCommand], size: usize, seed: u64) -> Option<Vec<LabeledCommand>> {
    let counts = class_counts(pool);
    let present = counts.iter().filter(|&&c| c > 0).count();
    if size > pool.len() || size < present {
        return None;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut want = largest_remainder(size, &weights);
    for c in 0..3 {
        if counts[c] > 0 && want[c] == 0 {
            let donor = (0..3).max_by_key(|&i| want[i]).expect("three classes");
            want[donor] -= 1;
            want[c] = 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for class in RiskClass::ALL {
        let mut members: Vec<&LabeledCommand> = pool.iter().filter(|d| d.label == class).collect();
        members.shuffle(&mut rng);
        out.extend(members.into_iter().take(want[class.index()]).cloned());
    }
    out.shuffle(&mut rng);
    Some(out)
}

/// R+B micro-F1 of `model` on `test`.
pub fn positive_f1(model: &dyn RiskModel, test: &[LabeledCommand]) -> Metric {
    let mut cm = ConfusionMatrix::default();
    for d in test {
        cm.add(d.label, model.predict(&d.command).risk);
    }
    micro_avg_positive(&cm, &POSITIVE).f1
}

/// For every size and trainer, subsample, train and score. Sizes that cannot
/// be realized, and training failures, are recorded as undefined points.
pub fn data_size_experiment(
    trainers: &[&dyn Trainer],
    sizes: &[usize],
    train: &[LabeledCommand],
    dev: &[LabeledCommand],
    test: &[LabeledCommand],
    seed: u64,
) -> Vec<CurvePoint> {
    let mut points = Vec::new();
    for (si, &size) in sizes.iter().enumerate() {
        let sample_seed = seed.wrapping_add(1000 * si as u64);
        let sample = stratified_subsample(train, size, sample_seed);
        for trainer in trainers {
            let f1 = match &sample {
                None => Metric::UNDEFINED,
                Some(s) => match trainer.train(s, dev, sample_seed) {
                    Ok(model) => positive_f1(model.as_ref(), test),
                    Err(e) => {
                        log::warn!("{} at size {size}: {e}", trainer.name());
                        Metric::UNDEFINED
                    }
                },
            };
            points.push(CurvePoint { model: trainer.name().to_string(), size, f1 });
        }
    }
    points
}
