//! Forward and backward passes of the encoder and its task heads.

use cmdrisk_core::ModelInput;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{LayerNorm, Linear, Parameters, Tensor};
use crate::scalar::{matmul, matmul_acc, matmul_into, Scalar, View};

const LN_EPS: f64 = 1e-12;

/// Inverted dropout driven by a private, seeded stream.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    /// Stream `stream` of the generator seeded with `seed`; batch items use
    /// their index as stream so their masks do not depend on each other.
    pub fn new(p: f64, seed: u64, stream: u64) -> Dropout {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Dropout { p, rng }
    }

    /// Multiplicative mask of `0` or `1/(1-p)` entries; `None` when `p == 0`.
    pub fn mask<F: Scalar>(&mut self, n: usize) -> Option<Vec<F>> {
        if self.p == 0.0 {
            return None;
        }
        let keep = F::of(1.0 / (1.0 - self.p));
        Some((0..n).map(|_| if self.rng.gen::<f64>() < self.p { F::zero() } else { keep }).collect())
    }
}

fn apply_mask<F: Scalar>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= *k;
        }
    }
}

fn mask_fn<F: Scalar>(dropout: &mut Option<&mut Dropout>, n: usize) -> Option<Vec<F>> {
    dropout.as_mut().and_then(|d| d.mask(n))
}

pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::of((2.0 / std::f64::consts::PI).sqrt());
    let a = F::of(0.044715);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::of((2.0 / std::f64::consts::PI).sqrt());
    let a = F::of(0.044715);
    let half = F::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}

fn linear<F: Scalar>(x: &[F], n: usize, lin: &Linear<F>) -> Vec<F> {
    let (i, o) = (lin.weight.shape[0], lin.weight.shape[1]);
    let mut out: Vec<F> = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(&lin.bias.data);
    }
    matmul_into(View::new(x, n, i), View::new(&lin.weight.data, i, o), &mut out, 0, o, F::one());
    out
}

fn accumulate_param_grads<F: Scalar>(x: &[F], dy: &[F], n: usize, lin: &Linear<F>, g: &mut Linear<F>) {
    let (i, o) = (lin.weight.shape[0], lin.weight.shape[1]);
    matmul_acc(View::new(x, n, i).t(), View::new(dy, n, o), &mut g.weight.data);
    for r in 0..n {
        for (b, d) in g.bias.data.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
            *b += *d;
        }
    }
}

/// Parameter gradients of `x·W + b`, returning `dx`.
fn linear_backward<F: Scalar>(x: &[F], dy: &[F], n: usize, lin: &Linear<F>, g: &mut Linear<F>) -> Vec<F> {
    accumulate_param_grads(x, dy, n, lin, g);
    let (i, o) = (lin.weight.shape[0], lin.weight.shape[1]);
    matmul(View::new(dy, n, o), View::new(&lin.weight.data, i, o).t())
}

/// As [`linear_backward`] but adds `dx` into `dx_acc`.
fn linear_backward_acc<F: Scalar>(x: &[F], dy: &[F], n: usize, lin: &Linear<F>, g: &mut Linear<F>, dx_acc: &mut [F]) {
    accumulate_param_grads(x, dy, n, lin, g);
    let (i, o) = (lin.weight.shape[0], lin.weight.shape[1]);
    matmul_acc(View::new(dy, n, o), View::new(&lin.weight.data, i, o).t(), dx_acc);
}

struct LnCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

fn ln_forward<F: Scalar>(x: &[F], n: usize, ln: &LayerNorm<F>) -> (Vec<F>, LnCache<F>) {
    let h = ln.gain.len();
    let hf = F::of(h as f64);
    let mut y = vec![F::zero(); n * h];
    let mut xhat = vec![F::zero(); n * h];
    let mut rstd = vec![F::zero(); n];
    for r in 0..n {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().copied().sum::<F>() / hf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / hf;
        let rs = F::one() / (var + F::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for c in 0..h {
            let xh = (row[c] - mean) * rs;
            xhat[r * h + c] = xh;
            y[r * h + c] = xh * ln.gain.data[c] + ln.bias.data[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn ln_backward<F: Scalar>(dy: &[F], cache: &LnCache<F>, ln: &LayerNorm<F>, g: &mut LayerNorm<F>) -> Vec<F> {
    let h = ln.gain.len();
    let n = cache.rstd.len();
    let hf = F::of(h as f64);
    let mut dx = vec![F::zero(); n * h];
    let mut dxhat = vec![F::zero(); h];
    for r in 0..n {
        let xh = &cache.xhat[r * h..(r + 1) * h];
        let d = &dy[r * h..(r + 1) * h];
        let (mut sum, mut dot) = (F::zero(), F::zero());
        for c in 0..h {
            g.gain.data[c] += d[c] * xh[c];
            g.bias.data[c] += d[c];
            dxhat[c] = d[c] * ln.gain.data[c];
            sum += dxhat[c];
            dot += dxhat[c] * xh[c];
        }
        let (mean_d, mean_dx) = (sum / hf, dot / hf);
        for c in 0..h {
            dx[r * h + c] = cache.rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// Row-wise softmax in place; `-inf` entries become exact zeros.
fn softmax_rows<F: Scalar>(x: &mut [F], width: usize) {
    for row in x.chunks_mut(width) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        if max == F::neg_infinity() {
            row.iter_mut().for_each(|v| *v = F::zero());
            continue;
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct LayerCache<F> {
    x: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    probs_mask: Option<Vec<F>>,
    ctx: Vec<F>,
    attn_mask: Option<Vec<F>>,
    ln1: LnCache<F>,
    h1: Vec<F>,
    f: Vec<F>,
    g: Vec<F>,
    ffn_mask: Option<Vec<F>>,
    ln2: LnCache<F>,
}

/// Intermediates of one encoder pass over `n` positions.
pub(crate) struct EncoderCache<F> {
    n: usize,
    emb_ln: LnCache<F>,
    emb_mask: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    pub hidden: Vec<F>,
    pub pooled: Vec<F>,
}

impl<F: Scalar> EncoderCache<F> {
    /// Attention probabilities of `layer`, `heads × n × n`, before dropout.
    pub fn attention(&self, layer: usize) -> &[F] {
        &self.layers[layer].probs
    }
}

pub(crate) fn encode<F: Scalar>(
    p: &Parameters<F>,
    ids: &[u32],
    segments: &[u8],
    key_mask: &[u8],
    mut dropout: Option<&mut Dropout>,
) -> EncoderCache<F> {
    let cfg = &p.config;
    let (n, h) = (ids.len(), cfg.hidden_size);
    let heads = cfg.attention_heads;
    let d = cfg.head_size();
    assert!(n <= cfg.max_len, "sequence longer than max_len");
    assert_eq!(segments.len(), n, "segment ids length mismatch");
    assert_eq!(key_mask.len(), n, "attention mask length mismatch");

    let mut e = vec![F::zero(); n * h];
    for i in 0..n {
        let t = ids[i] as usize;
        assert!(t < cfg.vocab_size, "token id {t} outside vocabulary");
        let s = segments[i] as usize;
        assert!(s < 2, "segment id {s} not in {{0, 1}}");
        let (tok, pos, seg) = (p.token_embeddings.row(t), p.position_embeddings.row(i), p.segment_embeddings.row(s));
        for c in 0..h {
            e[i * h + c] = tok[c] + pos[c] + seg[c];
        }
    }
    let (mut x, emb_ln) = ln_forward(&e, n, &p.embedding_norm);
    let emb_mask = mask_fn(&mut dropout, n * h);
    apply_mask(&mut x, &emb_mask);

    let scale = F::one() / F::of(d as f64).sqrt();
    let mut layers = Vec::with_capacity(p.layers.len());
    for l in &p.layers {
        let q = linear(&x, n, &l.query);
        let k = linear(&x, n, &l.key);
        let v = linear(&x, n, &l.value);
        let mut probs = vec![F::zero(); heads * n * n];
        for hd in 0..heads {
            let s = &mut probs[hd * n * n..(hd + 1) * n * n];
            matmul_into(View::cols_of(&q, n, h, hd * d, d), View::cols_of(&k, n, h, hd * d, d).t(), s, 0, n, F::zero());
            for row in s.chunks_mut(n) {
                for (j, val) in row.iter_mut().enumerate() {
                    *val = if key_mask[j] == 0 { F::neg_infinity() } else { *val * scale };
                }
            }
            softmax_rows(s, n);
        }
        let probs_mask = mask_fn(&mut dropout, heads * n * n);
        let mut dropped;
        let pd: &[F] = if probs_mask.is_some() {
            dropped = probs.clone();
            apply_mask(&mut dropped, &probs_mask);
            &dropped
        } else {
            &probs
        };
        let mut ctx = vec![F::zero(); n * h];
        for hd in 0..heads {
            matmul_into(
                View::new(&pd[hd * n * n..(hd + 1) * n * n], n, n),
                View::cols_of(&v, n, h, hd * d, d),
                &mut ctx,
                hd * d,
                h,
                F::zero(),
            );
        }
        let mut attn = linear(&ctx, n, &l.output);
        let attn_mask = mask_fn(&mut dropout, n * h);
        apply_mask(&mut attn, &attn_mask);
        for (a, xi) in attn.iter_mut().zip(&x) {
            *a += *xi;
        }
        let (h1, ln1) = ln_forward(&attn, n, &l.attn_norm);

        let f = linear(&h1, n, &l.ffn_in);
        let g: Vec<F> = f.iter().map(|&v| gelu(v)).collect();
        let mut o = linear(&g, n, &l.ffn_out);
        let ffn_mask = mask_fn(&mut dropout, n * h);
        apply_mask(&mut o, &ffn_mask);
        for (a, hi) in o.iter_mut().zip(&h1) {
            *a += *hi;
        }
        let (out, ln2) = ln_forward(&o, n, &l.ffn_norm);
        layers.push(LayerCache { x, q, k, v, probs, probs_mask, ctx, attn_mask, ln1, h1, f, g, ffn_mask, ln2 });
        x = out;
    }
    let pooled: Vec<F> = linear(&x[..h], 1, &p.pooler).into_iter().map(|v| v.tanh()).collect();
    EncoderCache { n, emb_ln, emb_mask, layers, hidden: x, pooled }
}

/// Accumulates parameter gradients given gradients of the final hidden
/// states and of the pooled vector.
pub(crate) fn encode_backward<F: Scalar>(
    p: &Parameters<F>,
    cache: &EncoderCache<F>,
    ids: &[u32],
    segments: &[u8],
    mut d_hidden: Vec<F>,
    d_pooled: &[F],
    g: &mut Parameters<F>,
) {
    let cfg = &p.config;
    let (n, h) = (cache.n, cfg.hidden_size);
    let heads = cfg.attention_heads;
    let d = cfg.head_size();
    let scale = F::one() / F::of(d as f64).sqrt();

    let d_pre: Vec<F> = d_pooled.iter().zip(&cache.pooled).map(|(&dp, &y)| dp * (F::one() - y * y)).collect();
    linear_backward_acc(&cache.hidden[..h], &d_pre, 1, &p.pooler, &mut g.pooler, &mut d_hidden[..h]);

    let mut dout = d_hidden;
    for (li, (l, c)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut g.layers[li];
        let dr2 = ln_backward(&dout, &c.ln2, &l.ffn_norm, &mut gl.ffn_norm);
        let mut dh1 = dr2.clone();
        let mut d_o = dr2;
        apply_mask(&mut d_o, &c.ffn_mask);
        let mut df = linear_backward(&c.g, &d_o, n, &l.ffn_out, &mut gl.ffn_out);
        for (v, &f) in df.iter_mut().zip(&c.f) {
            *v *= gelu_grad(f);
        }
        linear_backward_acc(&c.h1, &df, n, &l.ffn_in, &mut gl.ffn_in, &mut dh1);

        let dr1 = ln_backward(&dh1, &c.ln1, &l.attn_norm, &mut gl.attn_norm);
        let mut dx = dr1.clone();
        let mut dattn = dr1;
        apply_mask(&mut dattn, &c.attn_mask);
        let dctx = linear_backward(&c.ctx, &dattn, n, &l.output, &mut gl.output);

        let mut dq = vec![F::zero(); n * h];
        let mut dk = vec![F::zero(); n * h];
        let mut dv = vec![F::zero(); n * h];
        for hd in 0..heads {
            let range = hd * n * n..(hd + 1) * n * n;
            let probs = &c.probs[range.clone()];
            let mut pd = probs.to_vec();
            let head_mask = c.probs_mask.as_ref().map(|m| m[range.clone()].to_vec());
            apply_mask(&mut pd, &head_mask);
            let dctx_h = View::cols_of(&dctx, n, h, hd * d, d);
            matmul_into(View::new(&pd, n, n).t(), dctx_h, &mut dv, hd * d, h, F::zero());
            let mut ds = matmul(dctx_h, View::cols_of(&c.v, n, h, hd * d, d).t());
            apply_mask(&mut ds, &head_mask);
            for (drow, prow) in ds.chunks_mut(n).zip(probs.chunks(n)) {
                let dot: F = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (dv_, &pv) in drow.iter_mut().zip(prow) {
                    *dv_ = pv * (*dv_ - dot) * scale;
                }
            }
            matmul_into(View::new(&ds, n, n), View::cols_of(&c.k, n, h, hd * d, d), &mut dq, hd * d, h, F::zero());
            matmul_into(View::new(&ds, n, n).t(), View::cols_of(&c.q, n, h, hd * d, d), &mut dk, hd * d, h, F::zero());
        }
        linear_backward_acc(&c.x, &dq, n, &l.query, &mut gl.query, &mut dx);
        linear_backward_acc(&c.x, &dk, n, &l.key, &mut gl.key, &mut dx);
        linear_backward_acc(&c.x, &dv, n, &l.value, &mut gl.value, &mut dx);
        dout = dx;
    }

    apply_mask(&mut dout, &cache.emb_mask);
    let de = ln_backward(&dout, &cache.emb_ln, &p.embedding_norm, &mut g.embedding_norm);
    for i in 0..n {
        let t = ids[i] as usize;
        let s = segments[i] as usize;
        let row = &de[i * h..(i + 1) * h];
        for c in 0..h {
            g.token_embeddings.data[t * h + c] += row[c];
            g.position_embeddings.data[i * h + c] += row[c];
            g.segment_embeddings.data[s * h + c] += row[c];
        }
    }
}

/// Final hidden states and pooled vector for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<F> {
    /// `len × hidden_size`, row-major.
    pub hidden: Vec<F>,
    pub pooled: Vec<F>,
}

fn check_input<F: Scalar>(p: &Parameters<F>, input: &ModelInput) {
    let n = input.len();
    assert_eq!(input.segment_ids.len(), n, "segment ids length mismatch");
    assert_eq!(input.attention_mask.len(), n, "attention mask length mismatch");
    assert!(n <= p.config.max_len, "input longer than max_len");
    assert!(input.attention_mask.iter().all(|&m| m <= 1), "attention mask outside {{0, 1}}");
    for &(pos, t) in &input.mlm_targets {
        assert!(pos < n && input.attention_mask[pos] == 1, "masked position {pos} is not a real token");
        assert!((t as usize) < p.config.vocab_size, "target id outside vocabulary");
    }
}

/// Runs the encoder over every position of `input`, padding included.
/// With `train_mode` off the result is a pure function of its inputs.
pub fn forward_encoder<F: Scalar>(p: &Parameters<F>, input: &ModelInput, train_mode: bool, dropout_seed: u64) -> EncoderOutput<F> {
    check_input(p, input);
    let mut dropout = Dropout::new(p.config.dropout_prob, dropout_seed, 0);
    let cache = encode(p, &input.token_ids, &input.segment_ids, &input.attention_mask, train_mode.then_some(&mut dropout));
    EncoderOutput { hidden: cache.hidden, pooled: cache.pooled }
}

/// Attention probabilities (`heads × len × len`) of every layer, eval mode.
pub fn attention_probs<F: Scalar>(p: &Parameters<F>, input: &ModelInput) -> Vec<Vec<F>> {
    check_input(p, input);
    let cache = encode(p, &input.token_ids, &input.segment_ids, &input.attention_mask, None);
    (0..p.layers.len()).map(|l| cache.attention(l).to_vec()).collect()
}

/// `hidden[pos] · token_embeddingsᵀ + mlm_bias` for each position.
pub fn mlm_logits<F: Scalar>(p: &Parameters<F>, hidden: &[F], positions: &[usize]) -> Vec<F> {
    let (h, v) = (p.config.hidden_size, p.config.vocab_size);
    let rows = hidden.len() / h;
    let mut gathered = Vec::with_capacity(positions.len() * h);
    for &pos in positions {
        assert!(pos < rows, "position {pos} outside sequence of {rows}");
        gathered.extend_from_slice(&hidden[pos * h..(pos + 1) * h]);
    }
    let m = positions.len();
    let mut out: Vec<F> = Vec::with_capacity(m * v);
    for _ in 0..m {
        out.extend_from_slice(&p.mlm_bias.data);
    }
    matmul_into(View::new(&gathered, m, h), View::new(&p.token_embeddings.data, v, h).t(), &mut out, 0, v, F::one());
    out
}

pub fn nsp_logits<F: Scalar>(p: &Parameters<F>, pooled: &[F]) -> Vec<F> {
    linear(pooled, 1, &p.nsp)
}

/// Classification logits; `dropout` is applied to `pooled` when given.
pub fn cls_logits<F: Scalar>(p: &Parameters<F>, pooled: &[F], dropout: Option<&mut Dropout>) -> Vec<F> {
    let mut x = pooled.to_vec();
    if let Some(d) = dropout {
        let m = d.mask(x.len());
        apply_mask(&mut x, &m);
    }
    linear(&x, 1, &p.classifier)
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let mut v = logits.to_vec();
    softmax_rows(&mut v, logits.len().max(1));
    v
}

/// `-log softmax(logits)[target]`, stabilized by subtracting the maximum.
pub fn cross_entropy<F: Scalar>(logits: &[F], target: usize) -> F {
    assert!(target < logits.len(), "target {target} outside arity {}", logits.len());
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln() + max;
    lse - logits[target]
}

/// Mean cross-entropy over rows of width `arity`.
pub fn mean_cross_entropy<F: Scalar>(logits: &[F], arity: usize, targets: &[usize]) -> F {
    assert_eq!(logits.len(), arity * targets.len(), "logits and targets disagree");
    let sum: F = logits.chunks(arity).zip(targets).map(|(row, &t)| cross_entropy(row, t)).sum();
    sum / F::of(targets.len().max(1) as f64)
}

/// Which task losses contribute to a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub mlm: bool,
    pub nsp: bool,
    pub cls: bool,
}

impl Heads {
    pub const PRETRAIN: Heads = Heads { mlm: true, nsp: true, cls: false };
    pub const CLASSIFY: Heads = Heads { mlm: false, nsp: false, cls: true };
}

/// Mean per-example task losses over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    pub mlm: f64,
    pub nsp: f64,
    pub cls: f64,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.mlm + self.nsp + self.cls
    }
}

pub type Gradients<F> = Parameters<F>;

/// Loss and (optionally) gradients of one example, over its real prefix.
fn example_step<F: Scalar>(
    p: &Parameters<F>,
    input: &ModelInput,
    heads: Heads,
    mut dropout: Option<&mut Dropout>,
    grad_scale: F,
    grads: Option<&mut Gradients<F>>,
) -> BatchLoss {
    check_input(p, input);
    let (h, v) = (p.config.hidden_size, p.config.vocab_size);
    let n = input.real_len();
    assert!(n > 0, "input has no real tokens");
    let ids = &input.token_ids[..n];
    let segs = &input.segment_ids[..n];
    let cache = encode(p, ids, segs, &input.attention_mask[..n], dropout.as_deref_mut());

    let mut loss = BatchLoss::default();
    let mut d_hidden = vec![F::zero(); n * h];
    let mut d_pooled = vec![F::zero(); h];
    let want_grads = grads.is_some();
    let mut scratch = grads;

    if heads.mlm && !input.mlm_targets.is_empty() {
        let positions: Vec<usize> = input.mlm_targets.iter().map(|&(pos, _)| pos).collect();
        let m = positions.len();
        let mut logits = mlm_logits(p, &cache.hidden, &positions);
        let mut total = 0.0;
        for (row, &(_, t)) in logits.chunks(v).zip(&input.mlm_targets) {
            total += cross_entropy(row, t as usize).f64();
        }
        loss.mlm = total / m as f64;
        if let Some(g) = scratch.as_deref_mut() {
            let s = grad_scale / F::of(m as f64);
            softmax_rows(&mut logits, v);
            for (row, &(_, t)) in logits.chunks_mut(v).zip(&input.mlm_targets) {
                row[t as usize] -= F::one();
                row.iter_mut().for_each(|x| *x *= s);
            }
            let mut gathered = Vec::with_capacity(m * h);
            for &pos in &positions {
                gathered.extend_from_slice(&cache.hidden[pos * h..(pos + 1) * h]);
            }
            matmul_acc(View::new(&logits, m, v).t(), View::new(&gathered, m, h), &mut g.token_embeddings.data);
            for row in logits.chunks(v) {
                for (b, &dl) in g.mlm_bias.data.iter_mut().zip(row) {
                    *b += dl;
                }
            }
            let dg = matmul(View::new(&logits, m, v), View::new(&p.token_embeddings.data, v, h));
            for (k, &pos) in positions.iter().enumerate() {
                for c in 0..h {
                    d_hidden[pos * h + c] += dg[k * h + c];
                }
            }
        }
    }

    if let (true, Some(label)) = (heads.nsp, input.next_label) {
        let mut logits = nsp_logits(p, &cache.pooled);
        let t = usize::from(label);
        loss.nsp = cross_entropy(&logits, t).f64();
        if let Some(g) = scratch.as_deref_mut() {
            softmax_rows(&mut logits, 2);
            logits[t] -= F::one();
            logits.iter_mut().for_each(|x| *x *= grad_scale);
            let dp = linear_backward(&cache.pooled, &logits, 1, &p.nsp, &mut g.nsp);
            for (a, b) in d_pooled.iter_mut().zip(dp) {
                *a += b;
            }
        }
    }

    if let (true, Some(label)) = (heads.cls, input.class_label) {
        let mask = mask_fn(&mut dropout, h);
        let mut x = cache.pooled.clone();
        apply_mask(&mut x, &mask);
        let mut logits = linear(&x, 1, &p.classifier);
        let t = label.index();
        loss.cls = cross_entropy(&logits, t).f64();
        if let Some(g) = scratch.as_deref_mut() {
            softmax_rows(&mut logits, p.config.output_classes);
            logits[t] -= F::one();
            logits.iter_mut().for_each(|x| *x *= grad_scale);
            let mut dp = linear_backward(&x, &logits, 1, &p.classifier, &mut g.classifier);
            apply_mask(&mut dp, &mask);
            for (a, b) in d_pooled.iter_mut().zip(dp) {
                *a += b;
            }
        }
    }

    if want_grads {
        let g = scratch.expect("gradients requested");
        encode_backward(p, &cache, ids, segs, d_hidden, &d_pooled, g);
    }
    loss
}

fn run_batch<F: Scalar>(
    p: &Parameters<F>,
    batch: &[ModelInput],
    heads: Heads,
    dropout_seed: Option<u64>,
    loss_scale: F,
    mut grads: Option<&mut Gradients<F>>,
) -> BatchLoss {
    assert!(!batch.is_empty(), "empty batch");
    let b = batch.len() as f64;
    let scale = loss_scale / F::of(b);
    let mut sum = BatchLoss::default();
    for (i, input) in batch.iter().enumerate() {
        let mut d = dropout_seed.map(|s| Dropout::new(p.config.dropout_prob, s, i as u64));
        let l = example_step(p, input, heads, d.as_mut(), scale, grads.as_deref_mut());
        sum.mlm += l.mlm;
        sum.nsp += l.nsp;
        sum.cls += l.cls;
    }
    BatchLoss { mlm: sum.mlm / b, nsp: sum.nsp / b, cls: sum.cls / b }
}

/// Mean loss of the active heads over `batch`. `dropout_seed` switches on
/// train mode; batch item `i` draws its dropout masks from stream `i`.
pub fn batch_loss<F: Scalar>(p: &Parameters<F>, batch: &[ModelInput], heads: Heads, dropout_seed: Option<u64>) -> BatchLoss {
    run_batch(p, batch, heads, dropout_seed, F::one(), None)
}

/// Gradients of `loss_scale ×` the mean batch loss with respect to every
/// parameter. Tensors unused by the active heads get zero gradient.
pub fn backward<F: Scalar>(
    p: &Parameters<F>,
    batch: &[ModelInput],
    heads: Heads,
    dropout_seed: Option<u64>,
    loss_scale: F,
) -> (BatchLoss, Gradients<F>) {
    let mut g = p.zeros_like();
    let loss = run_batch(p, batch, heads, dropout_seed, loss_scale, Some(&mut g));
    (loss, g)
}

/// Class probabilities for one input in eval mode.
pub fn classify<F: Scalar>(p: &Parameters<F>, input: &ModelInput) -> Vec<F> {
    let n = input.real_len().max(1);
    let cache = encode(p, &input.token_ids[..n], &input.segment_ids[..n], &input.attention_mask[..n], None);
    softmax(&cls_logits(p, &cache.pooled, None))
}

impl<F: Scalar> Tensor<F> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
