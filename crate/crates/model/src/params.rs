use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ModelConfig;
use crate::scalar::Scalar;

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| G::of(v.f64())).collect() }
    }
}

/// `x·weight + bias` with `weight` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gain: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub attn_norm: LayerNorm<F>,
    pub ffn_in: Linear<F>,
    pub ffn_out: Linear<F>,
    pub ffn_norm: LayerNorm<F>,
}

/// Every trainable tensor of the encoder and its task heads. The masked-LM
/// projection reuses `token_embeddings`; only its bias is separate.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub config: ModelConfig,
    pub token_embeddings: Tensor<F>,
    pub position_embeddings: Tensor<F>,
    pub segment_embeddings: Tensor<F>,
    pub embedding_norm: LayerNorm<F>,
    pub layers: Vec<Layer<F>>,
    pub pooler: Linear<F>,
    pub mlm_bias: Tensor<F>,
    pub nsp: Linear<F>,
    pub classifier: Linear<F>,
}

/// Tensors dropped when a pretrained backbone is exported.
pub const PRETRAINING_HEADS: [&str; 3] = ["mlm.bias", "nsp.weight", "nsp.bias"];

/// Cut-off `k` (in units of the underlying normal) for which a normal
/// truncated at `±k` and rescaled to `±2` has unit standard deviation.
const TRUNCATION_K: f64 = 1.4514819049861818;

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    scale: f64,
}

impl Init {
    fn weight<F: Scalar>(&mut self, shape: &[usize]) -> Tensor<F> {
        let n = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let z = self.normal.sample(&mut self.rng);
            if z.abs() <= TRUNCATION_K {
                data.push(F::of(z * self.scale));
            }
        }
        Tensor { shape: shape.to_vec(), data }
    }

    fn linear<F: Scalar>(&mut self, inp: usize, out: usize) -> Linear<F> {
        Linear { weight: self.weight(&[inp, out]), bias: Tensor::zeros(&[out]) }
    }
}

fn norm<F: Scalar>(h: usize) -> LayerNorm<F> {
    LayerNorm { gain: Tensor::filled(&[h], F::one()), bias: Tensor::zeros(&[h]) }
}

/// Weights from a truncated normal bounded by `±2·initializer_range` whose
/// standard deviation is `initializer_range`. Gains are one and biases zero.
pub fn init_params<F: Scalar>(config: &ModelConfig, seed: u64) -> Parameters<F> {
    config.validate().expect("valid model config");
    let sigma = config.initializer_range;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        normal: Normal::new(0.0, 1.0).expect("unit normal"),
        scale: 2.0 * sigma / TRUNCATION_K,
    };
    let (h, hi) = (config.hidden_size, config.intermediate_size);
    let token_embeddings = init.weight(&[config.vocab_size, h]);
    let position_embeddings = init.weight(&[config.max_len, h]);
    let segment_embeddings = init.weight(&[2, h]);
    let layers = (0..config.hidden_layers)
        .map(|_| Layer {
            query: init.linear(h, h),
            key: init.linear(h, h),
            value: init.linear(h, h),
            output: init.linear(h, h),
            attn_norm: norm(h),
            ffn_in: init.linear(h, hi),
            ffn_out: init.linear(hi, h),
            ffn_norm: norm(h),
        })
        .collect();
    let pooler = init.linear(h, h);
    let nsp = init.linear(h, 2);
    let classifier = init.linear(h, config.output_classes);
    Parameters {
        config: config.clone(),
        token_embeddings,
        position_embeddings,
        segment_embeddings,
        embedding_norm: norm(h),
        layers,
        pooler,
        mlm_bias: Tensor::zeros(&[config.vocab_size]),
        nsp,
        classifier,
    }
}

macro_rules! named {
    ($self:ident, $out:ident, $($r:tt)*) => {{
        let p = $self;
        $out.push(("embeddings.token".to_string(), $($r)* p.token_embeddings));
        $out.push(("embeddings.position".to_string(), $($r)* p.position_embeddings));
        $out.push(("embeddings.segment".to_string(), $($r)* p.segment_embeddings));
        $out.push(("embeddings.norm.gain".to_string(), $($r)* p.embedding_norm.gain));
        $out.push(("embeddings.norm.bias".to_string(), $($r)* p.embedding_norm.bias));
        for (i, l) in ($($r)* p.layers).into_iter().enumerate() {
            for (name, lin) in [
                ("attn.query", $($r)* l.query),
                ("attn.key", $($r)* l.key),
                ("attn.value", $($r)* l.value),
                ("attn.output", $($r)* l.output),
            ] {
                $out.push((format!("layer{i}.{name}.weight"), $($r)* lin.weight));
                $out.push((format!("layer{i}.{name}.bias"), $($r)* lin.bias));
            }
            $out.push((format!("layer{i}.attn.norm.gain"), $($r)* l.attn_norm.gain));
            $out.push((format!("layer{i}.attn.norm.bias"), $($r)* l.attn_norm.bias));
            for (name, lin) in [("ffn.in", $($r)* l.ffn_in), ("ffn.out", $($r)* l.ffn_out)] {
                $out.push((format!("layer{i}.{name}.weight"), $($r)* lin.weight));
                $out.push((format!("layer{i}.{name}.bias"), $($r)* lin.bias));
            }
            $out.push((format!("layer{i}.ffn.norm.gain"), $($r)* l.ffn_norm.gain));
            $out.push((format!("layer{i}.ffn.norm.bias"), $($r)* l.ffn_norm.bias));
        }
        $out.push(("pooler.weight".to_string(), $($r)* p.pooler.weight));
        $out.push(("pooler.bias".to_string(), $($r)* p.pooler.bias));
        $out.push(("mlm.bias".to_string(), $($r)* p.mlm_bias));
        $out.push(("nsp.weight".to_string(), $($r)* p.nsp.weight));
        $out.push(("nsp.bias".to_string(), $($r)* p.nsp.bias));
        $out.push(("classifier.weight".to_string(), $($r)* p.classifier.weight));
        $out.push(("classifier.bias".to_string(), $($r)* p.classifier.bias));
    }};
}

impl<F: Scalar> Parameters<F> {
    /// All tensors with stable dotted names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        named!(self, out, &);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        named!(self, out, &mut);
        out
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Parameters<F> {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.data.iter_mut().for_each(|v| *v = F::zero());
        }
        z
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        let mut out = init_params_shape::<G>(&self.config);
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        // The tied MLM projection is counted once, as token embeddings.
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters<F>, scale: F) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * *y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for (_, t) in self.named_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Zero-filled parameters of the right shapes, without sampling.
pub(crate) fn init_params_shape<F: Scalar>(config: &ModelConfig) -> Parameters<F> {
    let (h, hi) = (config.hidden_size, config.intermediate_size);
    let lin = |i: usize, o: usize| Linear { weight: Tensor::zeros(&[i, o]), bias: Tensor::zeros(&[o]) };
    Parameters {
        config: config.clone(),
        token_embeddings: Tensor::zeros(&[config.vocab_size, h]),
        position_embeddings: Tensor::zeros(&[config.max_len, h]),
        segment_embeddings: Tensor::zeros(&[2, h]),
        embedding_norm: norm(h),
        layers: (0..config.hidden_layers)
            .map(|_| Layer {
                query: lin(h, h),
                key: lin(h, h),
                value: lin(h, h),
                output: lin(h, h),
                attn_norm: norm(h),
                ffn_in: lin(h, hi),
                ffn_out: lin(hi, h),
                ffn_norm: norm(h),
            })
            .collect(),
        pooler: lin(h, h),
        mlm_bias: Tensor::zeros(&[config.vocab_size]),
        nsp: lin(h, 2),
        classifier: lin(h, config.output_classes),
    }
}
