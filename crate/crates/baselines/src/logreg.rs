//! L2-regularized multinomial logistic regression fitted with L-BFGS.

use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use cmdrisk_core::RiskClass;
use serde::{Deserialize, Serialize};

use crate::config::LogRegConfig;
use crate::features::SparseVec;
use crate::BaselineError;

/// Weights are stored feature-major: `weights[f * k + j]` for class slot `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    /// Classes seen in training; other classes get probability zero.
    pub classes: Vec<RiskClass>,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub iterations: u64,
    /// Norm of the objective gradient at the returned parameters.
    pub grad_norm: f64,
}

struct Problem<'a> {
    x: &'a [SparseVec],
    y: Vec<usize>,
    k: usize,
    dim: usize,
    c: f64,
}

impl Problem<'_> {
    fn logits(&self, params: &[f64], x: &SparseVec, out: &mut [f64]) {
        let bias = &params[self.dim * self.k..];
        out.copy_from_slice(bias);
        for &(f, v) in x {
            let row = &params[f as usize * self.k..(f as usize + 1) * self.k];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    /// Objective and gradient in one pass.
    fn evaluate(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let k = self.k;
        let wlen = self.dim * k;
        let mut loss = params[..wlen].iter().map(|w| w * w).sum::<f64>() / (2.0 * self.c);
        let mut z = vec![0.0; k];
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            for (gi, w) in g[..wlen].iter_mut().zip(&params[..wlen]) {
                *gi = w / self.c;
            }
            g[wlen..].iter_mut().for_each(|v| *v = 0.0);
        }
        for (x, &y) in self.x.iter().zip(&self.y) {
            self.logits(params, x, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            loss += sum.ln() + max - z[y];
            if let Some(g) = g.as_deref_mut() {
                for j in 0..k {
                    let r = (z[j] - max).exp() / sum - if j == y { 1.0 } else { 0.0 };
                    g[wlen + j] += r;
                    for &(f, v) in x {
                        g[f as usize * k + j] += v * r;
                    }
                }
            }
        }
        loss
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, ArgminError> {
        Ok(self.evaluate(p, None))
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> Result<Vec<f64>, ArgminError> {
        let mut g = vec![0.0; p.len()];
        self.evaluate(p, Some(&mut g));
        Ok(g)
    }
}

/// Minimizes `Σ cross-entropy + ‖W‖² / (2c)`; biases are not penalized.
pub fn train_logreg(
    features: &[SparseVec],
    labels: &[RiskClass],
    dim: usize,
    config: &LogRegConfig,
) -> Result<LogReg, BaselineError> {
    assert_eq!(features.len(), labels.len(), "features and labels differ in length");
    let classes: Vec<RiskClass> = RiskClass::ALL.into_iter().filter(|c| labels.contains(c)).collect();
    if classes.len() < 2 {
        return Err(BaselineError::TooFewClasses(classes.len()));
    }
    let k = classes.len();
    let y = labels.iter().map(|l| classes.iter().position(|c| c == l).expect("present")).collect();
    let problem = Problem { x: features, y, k, dim, c: config.c };
    let n_params = dim * k + k;

    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(config.tolerance)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .map_err(|e| BaselineError::Optimizer(e.to_string()))?;
    let result = Executor::new(problem, solver)
        .configure(|s| s.param(vec![0.0; n_params]).max_iters(config.max_iters))
        .run()
        .map_err(|e| BaselineError::Optimizer(e.to_string()))?;
    let state = result.state();
    let params = state.get_best_param().cloned().unwrap_or_else(|| vec![0.0; n_params]);
    let iterations = state.get_iter();
    let problem = Problem { x: features, y: labels.iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect(), k, dim, c: config.c };
    let mut g = vec![0.0; n_params];
    problem.evaluate(&params, Some(&mut g));
    let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if grad_norm > config.tolerance.max(1e-5) {
        log::warn!("logistic regression stopped after {iterations} iterations with gradient norm {grad_norm:e}");
    }
    let weights = params[..dim * k].to_vec();
    let bias = params[dim * k..].to_vec();
    Ok(LogReg { classes, dim, weights, bias, iterations, grad_norm })
}

impl LogReg {
    pub fn predict_proba(&self, x: &SparseVec) -> [f64; 3] {
        let k = self.classes.len();
        let mut z = self.bias.clone();
        for &(f, v) in x {
            let f = f as usize;
            if f < self.dim {
                for j in 0..k {
                    z[j] += v * self.weights[f * k + j];
                }
            }
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let mut out = [0.0; 3];
        for (j, c) in self.classes.iter().enumerate() {
            out[c.index()] = (z[j] - max).exp() / sum;
        }
        out
    }

    pub fn predict(&self, x: &SparseVec) -> RiskClass {
        RiskClass::argmax(&self.predict_proba(x))
    }
}
