//! Objectives scored by the fitting drivers.
//!
//! * [`exact_mixture_loglik`]: `(1/N) sum_i ln E_{xi ~ p_phi}[p_xi(s'_i | s_i, a_i)]`
//!   with the expectation replaced by `K` parameter draws.
//! * [`dropo_loglik`]: the simulator-in-the-loop Gaussian likelihood built
//!   from `K` simulated next states per transition.
//! * [`edropo_objective`]: either base term plus `beta * H(p_phi)`.
//! * [`population_loglik_exact`]: the exact expected log-likelihood on a
//!   finite class, for small instances.
//!
//! Parameter draws use common random numbers: the standard-normal draws for
//! a transition are seeded from the objective seed and the transition's
//! contents, so the objective is a deterministic function of `phi` and does
//! not depend on row order. Per-transition terms are summed in sorted order
//! so permuting the dataset leaves the result bit-identical.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, Transition};
use crate::error::{OdrError, Result};
use crate::gaussian::DiagonalGaussian;
use crate::rng::{derive_seed, stream};
use crate::simulators::{FiniteMdpClass, SimulatorFamily};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which base likelihood to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    ExactMixture,
    Dropo,
}

/// Covariance estimate used by [`dropo_loglik`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Per-dimension sample variance of the `K` simulated next states.
    #[default]
    SampleSpread,
    /// `K/(K-1) * (mean - s_observed)^2` per dimension: the squared
    /// deviation of the simulated mean from the observed next state.
    ObservedDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Parameter draws per transition (`K`).
    pub n_xi_samples: usize,
    /// Diagonal regularizer added to the simulated covariance.
    pub cov_regularizer: f64,
    /// Weight of the entropy bonus; zero recovers plain DROPO.
    pub entropy_weight: f64,
    pub seed: u64,
    #[serde(default)]
    pub covariance_mode: CovarianceMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            n_xi_samples: 10,
            cov_regularizer: 1e-5,
            entropy_weight: 0.002,
            seed: 0,
            covariance_mode: CovarianceMode::SampleSpread,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self, kind: ObjectiveKind) -> Result<()> {
        let min_k = match kind {
            ObjectiveKind::ExactMixture => 1,
            ObjectiveKind::Dropo => 2,
        };
        if self.n_xi_samples < min_k {
            return Err(OdrError::InvalidConfig(format!(
                "{kind:?} needs at least {min_k} parameter samples, got {}",
                self.n_xi_samples
            )));
        }
        if !(self.cov_regularizer > 0.0) {
            return Err(OdrError::InvalidConfig(
                "cov_regularizer must be positive".into(),
            ));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(OdrError::InvalidConfig(
                "entropy_weight must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Value of the mixture likelihood plus the transitions whose estimated
/// mixture density was zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLoglik {
    pub value: f64,
    pub zero_density: Vec<usize>,
}

fn transition_key(t: &Transition) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.s.iter().chain(&t.a).chain(&t.s_next) {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    }
    h
}

/// Standard-normal draws for one transition, `k * dim + j` layout.
fn normal_draws(seed: u64, t: &Transition, k: usize, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, "likelihood.xi", transition_key(t));
    (0..k * dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}

pub(crate) fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.total_cmp(b));
    terms.iter().sum()
}

/// Per-transition `ln((1/K) sum_k p_{xi_k}(s'|s,a))`.
pub fn mixture_log_densities(
    dataset: &OfflineDataset,
    family: &dyn SimulatorFamily,
    g: &DiagonalGaussian,
    n_xi_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !family.density_available() {
        return Err(OdrError::DensityUnavailable(family.id()));
    }
    if g.dim() != family.param_dim() {
        return Err(OdrError::DimensionMismatch {
            expected: family.param_dim(),
            got: g.dim(),
        });
    }
    if n_xi_samples == 0 {
        return Err(OdrError::InvalidConfig(
            "need at least one parameter sample".into(),
        ));
    }
    let d = g.dim();
    let degenerate = g.sigma.iter().all(|s| *s == 0.0);
    let mu = family.project_params(&g.mu);
    dataset
        .transitions()
        .par_iter()
        .map(|t| {
            if degenerate {
                return family.log_transition_density(&mu, &t.s, &t.a, &t.s_next);
            }
            let z = normal_draws(seed, t, n_xi_samples, d);
            let logs = z
                .chunks_exact(d)
                .map(|zk| {
                    let xi = family.project_params(&g.transform(zk));
                    family.log_transition_density(&xi, &t.s, &t.a, &t.s_next)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(log_mean_exp(&logs))
        })
        .collect()
}

/// Monte Carlo mixture log-likelihood normalized by the dataset size.
/// Returns `-inf` (and lists the offending transitions) when some
/// transition has zero estimated mixture density.
pub fn exact_mixture_loglik(
    dataset: &OfflineDataset,
    family: &dyn SimulatorFamily,
    g: &DiagonalGaussian,
    config: &ObjectiveConfig,
) -> Result<MixtureLoglik> {
    if dataset.is_empty() {
        return Err(OdrError::EmptyDataset);
    }
    config.validate(ObjectiveKind::ExactMixture)?;
    let logs = mixture_log_densities(dataset, family, g, config.n_xi_samples, config.seed)?;
    let zero_density: Vec<usize> = logs
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == f64::NEG_INFINITY)
        .map(|(i, _)| i)
        .collect();
    let value = if zero_density.is_empty() {
        sorted_sum(logs) / dataset.len() as f64
    } else {
        f64::NEG_INFINITY
    };
    Ok(MixtureLoglik {
        value,
        zero_density,
    })
}

/// Simulator-in-the-loop likelihood: for each transition, place the
/// simulator at `s`, apply `a` under `K` sampled parameters, fit a diagonal
/// Gaussian to the simulated next states (variances plus the regularizer)
/// and score the observed next state. Summed over transitions.
pub fn dropo_loglik(
    dataset: &OfflineDataset,
    family: &dyn SimulatorFamily,
    g: &DiagonalGaussian,
    config: &ObjectiveConfig,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(OdrError::EmptyDataset);
    }
    config.validate(ObjectiveKind::Dropo)?;
    if !family.supports_reset() {
        return Err(OdrError::ResetUnsupported(family.id()));
    }
    if g.dim() != family.param_dim() {
        return Err(OdrError::DimensionMismatch {
            expected: family.param_dim(),
            got: g.dim(),
        });
    }
    let k = config.n_xi_samples;
    let d = g.dim();
    let terms = dataset
        .transitions()
        .par_iter()
        .map(|t| {
            let key = transition_key(t);
            let z = normal_draws(config.seed, t, k, d);
            let sim_seed = derive_seed(config.seed, "likelihood.sim", key);
            let outcomes = z
                .chunks_exact(d)
                .enumerate()
                .map(|(j, zk)| {
                    let xi = family.project_params(&g.transform(zk));
                    family.step(&xi, &t.s, &t.a, &mut stream(sim_seed, "k", j as u64))
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok(gaussian_score(&outcomes, &t.s_next, config))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sorted_sum(terms))
}

fn gaussian_score(outcomes: &[Vec<f64>], observed: &[f64], config: &ObjectiveConfig) -> f64 {
    let k = outcomes.len() as f64;
    let dim = observed.len();
    let mut acc = -0.5 * dim as f64 * LN_2PI;
    for j in 0..dim {
        let mean = outcomes.iter().map(|o| o[j]).sum::<f64>() / k;
        let spread = match config.covariance_mode {
            CovarianceMode::SampleSpread => {
                outcomes.iter().map(|o| (o[j] - mean).powi(2)).sum::<f64>() / (k - 1.0)
            }
            CovarianceMode::ObservedDeviation => k / (k - 1.0) * (mean - observed[j]).powi(2),
        };
        let var = spread + config.cov_regularizer;
        let r = observed[j] - mean;
        acc -= 0.5 * var.ln() + 0.5 * r * r / var;
    }
    acc
}

/// Chosen base likelihood plus `entropy_weight * H(g)`.
pub fn edropo_objective(
    dataset: &OfflineDataset,
    family: &dyn SimulatorFamily,
    g: &DiagonalGaussian,
    kind: ObjectiveKind,
    config: &ObjectiveConfig,
) -> Result<f64> {
    let base = match kind {
        ObjectiveKind::ExactMixture => exact_mixture_loglik(dataset, family, g, config)?.value,
        ObjectiveKind::Dropo => dropo_loglik(dataset, family, g, config)?,
    };
    with_entropy_bonus(base, g, config.entropy_weight)
}

/// `base + beta * H(g)`; exactly `base` when `beta == 0`.
pub fn with_entropy_bonus(base: f64, g: &DiagonalGaussian, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        return Ok(base);
    }
    Ok(base + beta * g.entropy()?)
}

fn check_sa_weights(class: &FiniteMdpClass, sa: &[Vec<f64>]) -> Result<()> {
    if sa.len() != class.n_states || sa.iter().any(|r| r.len() != class.n_actions) {
        return Err(OdrError::InvalidConfig(
            "state-action weights must be [n_states][n_actions]".into(),
        ));
    }
    let total: f64 = sa.iter().flatten().sum();
    if sa.iter().flatten().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(OdrError::InvalidConfig(format!(
            "state-action weights must sum to 1, got {total}"
        )));
    }
    Ok(())
}

/// Uniform weights over all state-action pairs.
pub fn uniform_sa_weights(class: &FiniteMdpClass) -> Vec<Vec<f64>> {
    let w = 1.0 / (class.n_states * class.n_actions) as f64;
    vec![vec![w; class.n_actions]; class.n_states]
}

/// Exact `E_{(s,a) ~ w, s' ~ P_true}[ln q_phi(s'|s,a)]` on a finite class,
/// with `q_phi` the exact mixture kernel of `g`. `-inf` when `q_phi`
/// vanishes where the true kernel does not.
pub fn population_loglik_exact(
    class: &FiniteMdpClass,
    sa: &[Vec<f64>],
    g: &DiagonalGaussian,
) -> Result<f64> {
    check_sa_weights(class, sa)?;
    let q = class.mixture_kernel(&class.mixture_weights(g)?);
    Ok(expected_log(class, sa, &q))
}

/// `E[ln p_true(s'|s,a)]`, the maximum of [`population_loglik_exact`].
pub fn true_model_loglik(class: &FiniteMdpClass, sa: &[Vec<f64>]) -> Result<f64> {
    check_sa_weights(class, sa)?;
    Ok(expected_log(
        class,
        sa,
        &class.transitions[class.true_index],
    ))
}

fn expected_log(class: &FiniteMdpClass, sa: &[Vec<f64>], q: &[Vec<Vec<f64>>]) -> f64 {
    let p = &class.transitions[class.true_index];
    let mut terms = Vec::new();
    for s in 0..class.n_states {
        for a in 0..class.n_actions {
            for sn in 0..class.n_states {
                let (ps, qs) = (p[s][a][sn], q[s][a][sn]);
                if ps == 0.0 || sa[s][a] == 0.0 {
                    continue;
                }
                if qs == 0.0 {
                    return f64::NEG_INFINITY;
                }
                terms.push(sa[s][a] * ps * qs.ln());
            }
        }
    }
    terms.iter().sum()
}

/// `(1/N) sum_i ln q_phi(s'_i|s_i,a_i)` with the exact mixture kernel.
pub fn exact_kernel_loglik(
    class: &FiniteMdpClass,
    dataset: &OfflineDataset,
    g: &DiagonalGaussian,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(OdrError::EmptyDataset);
    }
    let q = class.mixture_kernel(&class.mixture_weights(g)?);
    let mut acc = 0.0;
    for t in dataset.transitions() {
        let s = class.index(&t.s, class.n_states, "state")?;
        let a = class.index(&t.a, class.n_actions, "action")?;
        let sn = class.index(&t.s_next, class.n_states, "next state")?;
        acc += q[s][a][sn].ln();
    }
    Ok(acc / dataset.len() as f64)
}
