use crate::params::Parameters;
use crate::scalar::Scalar;
use crate::ModelError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Parameters<F>,
    pub v: Parameters<F>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &Parameters<F>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam update. Gradients are checked for non-finite
/// values before anything is modified.
pub fn adam_step<F: Scalar>(
    params: &mut Parameters<F>,
    grads: &Parameters<F>,
    state: &mut AdamState<F>,
    learning_rate: f64,
) -> Result<(), ModelError> {
    for (name, g) in grads.named() {
        if !g.is_finite() {
            return Err(ModelError::NonFiniteGradient { tensor: name });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(BETA1), F::of(BETA2));
    let c1 = F::of(1.0 - BETA1.powi(t));
    let c2 = F::of(1.0 - BETA2.powi(t));
    let lr = F::of(learning_rate);
    let eps = F::of(EPSILON);
    let one = F::one();
    let params_t = params.named_mut();
    let m_t = state.m.named_mut();
    let v_t = state.v.named_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params_t.into_iter().zip(grads.named()).zip(m_t).zip(v_t) {
        assert_eq!(p.shape, g.shape, "gradient shape mismatch");
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (one - b1) * gi;
            v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
            let mh = m.data[i] / c1;
            let vh = v.data[i] / c2;
            p.data[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
