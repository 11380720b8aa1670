//! (mu/mu_w, lambda)-CMA-ES maximizer on a box.
//!
//! The search runs in coordinates normalized to the unit cube, so
//! `initial_step` is a fraction of each coordinate's range. Candidates are
//! clipped to the box before evaluation and the clipped points enter the
//! recombination and covariance updates. Selection uses ranks only, so any
//! strictly increasing transform of the objective yields the same run.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OdrError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaConfig {
    /// Candidates per generation (`lambda`).
    pub population: usize,
    /// Generations to run; there is no early stop.
    pub iterations: usize,
    /// Initial step size as a fraction of each coordinate's range.
    pub initial_step: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub seed: u64,
    /// Starting mean; the box center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mean: Option<Vec<f64>>,
}

impl CmaConfig {
    /// Defaults: 20 generations of 10 candidates, step 0.3, started at the
    /// box center.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, seed: u64) -> Self {
        Self {
            population: 10,
            iterations: 20,
            initial_step: 0.3,
            lo,
            hi,
            seed,
            initial_mean: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.iterations < 1 {
            return Err(OdrError::InvalidConfig(
                "need population >= 2 and iterations >= 1".into(),
            ));
        }
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(OdrError::InvalidConfig(
                "bounds must be nonempty and of equal length".into(),
            ));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
        {
            return Err(OdrError::InvalidConfig(
                "every bound needs finite lo < hi".into(),
            ));
        }
        if !(self.initial_step > 0.0) {
            return Err(OdrError::InvalidConfig(
                "initial_step must be positive".into(),
            ));
        }
        if let Some(m) = &self.initial_mean {
            if m.len() != self.lo.len() {
                return Err(OdrError::DimensionMismatch {
                    expected: self.lo.len(),
                    got: m.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Best value seen so far.
    pub best_value: f64,
    /// Global step size after the generation's update (normalized units).
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<IterationRecord>,
    pub evaluations: usize,
}

struct Params {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Params {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu =
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Maximizes `objective` over the box in `config`.
///
/// The objective may return `-inf` for infeasible points. A NaN aborts the
/// run, as does a generation in which every candidate scores `-inf`.
pub fn optimize<F>(objective: F, config: &CmaConfig) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    config.validate()?;
    let n = config.lo.len();
    let lambda = config.population;
    let p = Params::new(n, lambda);
    let width: Vec<f64> = config
        .lo
        .iter()
        .zip(&config.hi)
        .map(|(l, h)| h - l)
        .collect();
    let to_user =
        |u: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| config.lo[i] + width[i] * u[i]).collect() };

    let mut mean = match &config.initial_mean {
        Some(m) => DVector::from_iterator(
            n,
            (0..n).map(|i| ((m[i] - config.lo[i]) / width[i]).clamp(0.0, 1.0)),
        ),
        None => DVector::from_element(n, 0.5),
    };
    let mut sigma = config.initial_step;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut rng = crate::rng::stream(config.seed, "cmaes", 0);

    let mut best_point: Option<Vec<f64>> = None;
    let mut best_value = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(config.iterations);
    let mut evaluations = 0;

    for gen in 0..config.iterations {
        cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov.clone());
        let basis = eig.eigenvectors;
        let scales = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());

        let mut ys = Vec::with_capacity(lambda);
        let mut points = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let y = &basis * z.component_mul(&scales);
            let x = (&mean + &y * sigma).map(|v| v.clamp(0.0, 1.0));
            ys.push((&x - &mean) / sigma);
            points.push(x);
        }

        let values = points
            .par_iter()
            .map(|x| objective(&to_user(x)))
            .collect::<Result<Vec<f64>>>()?;
        evaluations += lambda;
        for (x, v) in points.iter().zip(&values) {
            if v.is_nan() {
                return Err(OdrError::NotANumber { point: to_user(x) });
            }
        }
        if values.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(OdrError::Infeasible {
                transitions: Vec::new(),
            });
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        if values[order[0]] > best_value || best_point.is_none() {
            best_value = values[order[0]];
            best_point = Some(to_user(&points[order[0]]));
        }

        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &i) in p.weights.iter().zip(order.iter().take(p.mu)) {
            y_w += &ys[i] * *w;
        }
        mean = (&mean + &y_w * sigma).map(|v| v.clamp(0.0, 1.0));

        let inv_sqrt =
            &basis * DMatrix::from_diagonal(&scales.map(|s| 1.0 / s)) * basis.transpose();
        p_sigma = &p_sigma * (1.0 - p.c_sigma)
            + (&inv_sqrt * &y_w) * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let norm_ps = p_sigma.norm();
        let denom = (1.0 - (1.0 - p.c_sigma).powi(2 * (gen as i32 + 1))).sqrt();
        let h_sigma = if norm_ps / denom < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n {
            1.0
        } else {
            0.0
        };
        p_c = &p_c * (1.0 - p.c_c) + &y_w * (h_sigma * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &i) in p.weights.iter().zip(order.iter().take(p.mu)) {
            rank_mu += &ys[i] * ys[i].transpose() * *w;
        }
        let decay = 1.0 - p.c_1 - p.c_mu + (1.0 - h_sigma) * p.c_1 * p.c_c * (2.0 - p.c_c);
        cov = &cov * decay + &p_c * p_c.transpose() * p.c_1 + rank_mu * p.c_mu;

        sigma *= ((p.c_sigma / p.d_sigma) * (norm_ps / p.chi_n - 1.0)).exp();
        sigma = sigma.clamp(1e-300, 1e3);

        history.push(IterationRecord {
            best_value,
            step_size: sigma,
        });
    }

    Ok(OptimResult {
        best_point: best_point.expect("at least one generation ran"),
        best_value,
        history,
        evaluations,
    })
}
