//! Hyperparameter fitting by multi-start gradient ascent on the log
//! marginal likelihood, in log-parameter space.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    cholesky_with_jitter, combined_cov_matrix, KernelParams, TrainingSet, FEATURE_DIM, SQRT3,
};
use crate::error::{Error, Result};

/// Number of optimized hyperparameters: output scale + one length scale
/// per feature dimension.
const N_PARAMS: usize = 1 + FEATURE_DIM;
/// Log-parameter clamp keeping exp() well away from overflow/underflow.
const LOG_BOUND: f64 = 12.0;
/// Restart perturbations come from a fixed internal stream so fitting never
/// touches the simulator's RNG.
const RESTART_SEED: u64 = 0x05EE_DF17;

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Total ascent starts, the first from `init` itself.
    pub restarts: usize,
    /// Maximum ascent iterations per restart.
    pub max_iters: usize,
    /// Std of the log-space perturbation applied to restart inits.
    pub perturbation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 4,
            max_iters: 100,
            perturbation: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: KernelParams,
    pub log_marginal_likelihood: f64,
    /// False when no restart beat the likelihood of `init`; the returned
    /// params then equal `init`.
    pub improved: bool,
}

fn params_from_theta(theta: &[f64; N_PARAMS]) -> KernelParams {
    let mut ls = [0.0; FEATURE_DIM];
    for d in 0..FEATURE_DIM {
        ls[d] = theta[1 + d].exp();
    }
    KernelParams::new(theta[0].exp(), ls).expect("exp of clamped theta is positive and finite")
}

fn theta_from_params(params: &KernelParams) -> [f64; N_PARAMS] {
    let mut theta = [0.0; N_PARAMS];
    theta[0] = params.output_scale().ln();
    for d in 0..FEATURE_DIM {
        theta[1 + d] = params.length_scales()[d].ln();
    }
    theta
}

fn clamp_theta(theta: &mut [f64; N_PARAMS]) {
    for t in theta.iter_mut() {
        *t = t.clamp(-LOG_BOUND, LOG_BOUND);
    }
}

struct Objective<'a> {
    train: &'a TrainingSet,
    y: DVector<f64>,
}

impl<'a> Objective<'a> {
    fn value(&self, theta: &[f64; N_PARAMS]) -> Result<f64> {
        let params = params_from_theta(theta);
        super::log_marginal_likelihood_with(self.train, &params, &self.y)
    }

    /// Likelihood and its gradient w.r.t. the log-hyperparameters:
    /// dL/dθ_j = ½·tr((ααᵀ − Σ⁻¹)·∂Σ/∂θ_j).
    fn value_and_grad(&self, theta: &[f64; N_PARAMS]) -> Result<(f64, [f64; N_PARAMS])> {
        let params = params_from_theta(theta);
        let n = self.train.len();
        let sigma = combined_cov_matrix(
            self.train.points(),
            self.train.points(),
            &params,
            Some(self.train.noise_variances()),
        )?;
        let (chol, _) = cholesky_with_jitter(&sigma, true)?;
        let alpha = chol.solve(&self.y);
        let value = -0.5 * self.y.dot(&alpha)
            - 0.5 * super::ln_det_from_cholesky(&chol)
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        let sigma_inv = chol.inverse();
        let mut a = &alpha * alpha.transpose();
        a -= &sigma_inv;

        let s2 = params.output_scale() * params.output_scale();
        let ls = params.length_scales();
        let pts = self.train.points();
        let mut grad = [0.0; N_PARAMS];
        for i in 0..n {
            let pi = pts[i].as_array();
            for j in i..n {
                let pj = pts[j].as_array();
                let mut z2 = [0.0; FEATURE_DIM];
                let mut r2 = 0.0;
                for d in 0..FEATURE_DIM {
                    let z = (pi[d] - pj[d]) / ls[d];
                    z2[d] = z * z;
                    r2 += z2[d];
                }
                let r = r2.sqrt();
                let e = (-SQRT3 * r).exp();
                let k = s2 * (1.0 + SQRT3 * r) * e;
                // off-diagonal contributions appear twice in the trace
                let w = if i == j { a[(i, j)] } else { 2.0 * a[(i, j)] };
                // d k / d ln(sigma) = 2 k
                grad[0] += w * 2.0 * k;
                // d k / d ln(l_d) = 3 sigma^2 e^{-sqrt3 r} z_d^2
                for d in 0..FEATURE_DIM {
                    grad[1 + d] += w * 3.0 * s2 * e * z2[d];
                }
            }
        }
        for g in grad.iter_mut() {
            *g *= 0.5;
        }
        Ok((value, grad))
    }
}

/// Maximizes the log marginal likelihood over output scale and per-dimension
/// length scales, starting from `init` plus perturbed restarts. The returned
/// likelihood is never below that of `init`: the init evaluation itself is a
/// candidate.
pub fn fit_hyperparameters(
    train: &TrainingSet,
    init: &KernelParams,
    config: &FitConfig,
) -> Result<FitOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("cannot fit hyperparameters without data"));
    }
    let objective = Objective {
        train,
        y: DVector::from_column_slice(train.targets()),
    };
    let init_theta = theta_from_params(init);
    let init_value = objective.value(&init_theta)?;

    let mut best_theta = init_theta;
    let mut best_value = init_value;

    let mut restart_rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    for restart in 0..config.restarts.max(1) {
        let mut theta = init_theta;
        if restart > 0 {
            for t in theta.iter_mut() {
                let z: f64 = restart_rng.sample(StandardNormal);
                *t += config.perturbation * z;
            }
            clamp_theta(&mut theta);
        }
        let Ok((mut value, mut grad)) = objective.value_and_grad(&theta) else {
            continue;
        };
        let mut lr = 0.1;
        for _ in 0..config.max_iters {
            let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm < 1e-7 {
                break;
            }
            let mut cand = theta;
            for (c, g) in cand.iter_mut().zip(grad.iter()) {
                *c += lr * g;
            }
            clamp_theta(&mut cand);
            let cand_value = objective.value(&cand).unwrap_or(f64::NEG_INFINITY);
            if cand_value > value {
                theta = cand;
                value = cand_value;
                lr = (lr * 1.5).min(1.0);
                match objective.value_and_grad(&theta) {
                    Ok((v, g)) => {
                        value = v;
                        grad = g;
                    }
                    Err(_) => break,
                }
            } else {
                lr *= 0.5;
                if lr < 1e-10 {
                    break;
                }
            }
        }
        if value > best_value {
            best_value = value;
            best_theta = theta;
        }
    }

    let improved = best_value > init_value;
    Ok(FitOutcome {
        params: if improved {
            params_from_theta(&best_theta)
        } else {
            init.clone()
        },
        log_marginal_likelihood: best_value,
        improved,
    })
}
