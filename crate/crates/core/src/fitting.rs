//! DROPO / E-DROPO drivers: encode `phi = (mu, sigma)` as a search vector,
//! maximize the chosen objective with CMA-ES and decode the result.
//!
//! The search vector is `[mu_1..mu_d, ln sigma_1..ln sigma_d]` bounded by
//! the parameter box (log-bounds for the spreads).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cmaes::{optimize, CmaConfig, IterationRecord};
use crate::dataset::OfflineDataset;
use crate::error::{OdrError, Result};
use crate::gaussian::{DiagonalGaussian, ParamBox};
use crate::likelihood::{edropo_objective, exact_mixture_loglik, ObjectiveConfig, ObjectiveKind};
use crate::simulators::SimulatorFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kind: ObjectiveKind,
    pub objective: ObjectiveConfig,
    pub population: usize,
    pub iterations: usize,
    /// Initial CMA-ES step as a fraction of each coordinate's range.
    pub initial_step: f64,
    pub cma_seed: u64,
}

impl FitConfig {
    /// E-DROPO with the reference settings: `beta = 0.002`, `eps = 1e-5`,
    /// `K = 10`, 20 generations of 10 candidates.
    pub fn edropo(seed: u64) -> Self {
        Self {
            kind: ObjectiveKind::Dropo,
            objective: ObjectiveConfig {
                seed,
                ..ObjectiveConfig::default()
            },
            population: 10,
            iterations: 20,
            initial_step: 0.3,
            cma_seed: seed,
        }
    }

    /// Same as [`FitConfig::edropo`] with the entropy bonus switched off.
    pub fn dropo(seed: u64) -> Self {
        let mut c = Self::edropo(seed);
        c.objective.entropy_weight = 0.0;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: String,
    pub n_transitions: usize,
    pub fitted: DiagonalGaussian,
    /// `||mu_hat - xi_star||^2`, when the dataset records the truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    pub objective_value: f64,
    pub config: FitConfig,
    pub history: Vec<IterationRecord>,
    /// Wall-clock seconds; excluded from serialized output so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub wall_time: f64,
}

pub fn encode(g: &DiagonalGaussian) -> Vec<f64> {
    g.mu.iter()
        .copied()
        .chain(g.sigma.iter().map(|s| s.ln()))
        .collect()
}

/// Inverse of [`encode`], projected onto `bx`.
pub fn decode(x: &[f64], bx: &ParamBox) -> DiagonalGaussian {
    let d = bx.dim();
    let g = DiagonalGaussian {
        mu: x[..d].to_vec(),
        sigma: x[d..].iter().map(|v| v.exp()).collect(),
    };
    bx.clamp(&g)
}

pub fn search_bounds(bx: &ParamBox) -> (Vec<f64>, Vec<f64>) {
    let d = bx.dim();
    let mut lo = bx.lo.clone();
    let mut hi = bx.hi.clone();
    lo.extend(std::iter::repeat_n(bx.sigma_floor.ln(), d));
    hi.extend(std::iter::repeat_n(bx.sigma_max.ln(), d));
    (lo, hi)
}

/// Objective value of `g` under `config`.
pub fn score(
    dataset: &OfflineDataset,
    family: &dyn SimulatorFamily,
    g: &DiagonalGaussian,
    config: &FitConfig,
) -> Result<f64> {
    edropo_objective(dataset, family, g, config.kind, &config.objective)
}

/// Maximizes the configured objective over `bx`.
pub fn fit(
    dataset: &OfflineDataset,
    family: &dyn SimulatorFamily,
    bx: &ParamBox,
    config: &FitConfig,
) -> Result<FitResult> {
    let start = Instant::now();
    if dataset.is_empty() {
        return Err(OdrError::EmptyDataset);
    }
    bx.validate()?;
    if bx.dim() != family.param_dim() {
        return Err(OdrError::DimensionMismatch {
            expected: family.param_dim(),
            got: bx.dim(),
        });
    }
    config.objective.validate(config.kind)?;
    let (lo, hi) = search_bounds(bx);
    let cma = CmaConfig {
        population: config.population,
        iterations: config.iterations,
        initial_step: config.initial_step,
        lo,
        hi,
        seed: config.cma_seed,
        initial_mean: None,
    };
    let run = optimize(
        |x: &[f64]| score(dataset, family, &decode(x, bx), config),
        &cma,
    );
    let run = match run {
        Err(OdrError::Infeasible { .. }) => {
            let center = DiagonalGaussian {
                mu: bx.center(),
                sigma: vec![(bx.sigma_floor * bx.sigma_max).sqrt(); bx.dim()],
            };
            let transitions =
                match exact_mixture_loglik(dataset, family, &center, &config.objective) {
                    Ok(v) => v.zero_density,
                    Err(_) => Vec::new(),
                };
            return Err(OdrError::Infeasible { transitions });
        }
        other => other?,
    };
    let fitted = decode(&run.best_point, bx);
    let mse = dataset
        .meta
        .xi_star
        .as_ref()
        .map(|xi| squared_error(&fitted.mu, xi));
    Ok(FitResult {
        family: family.id(),
        n_transitions: dataset.len(),
        fitted,
        mse,
        objective_value: run.best_value,
        config: config.clone(),
        history: run.history,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

pub fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallMass {
    pub epsilon: f64,
    pub monte_carlo: f64,
    pub chebyshev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub mse: f64,
    pub per_dim_error: Vec<f64>,
    pub ball_mass: Vec<BallMass>,
}

/// Error of the fitted mean against `xi_star` and the fitted mass near it.
pub fn evaluate_fit(
    fit: &FitResult,
    xi_star: &[f64],
    epsilons: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<FitMetrics> {
    let g = &fit.fitted;
    if xi_star.len() != g.dim() {
        return Err(OdrError::DimensionMismatch {
            expected: g.dim(),
            got: xi_star.len(),
        });
    }
    let ball_mass = epsilons
        .iter()
        .map(|&eps| {
            Ok(BallMass {
                epsilon: eps,
                monte_carlo: g.ball_mass_mc(xi_star, eps, n_mc, seed)?,
                chebyshev: g.chebyshev_ball_lower_bound(xi_star, eps)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitMetrics {
        mse: squared_error(&g.mu, xi_star),
        per_dim_error: g.mu.iter().zip(xi_star).map(|(m, x)| m - x).collect(),
        ball_mass,
    })
}

impl FitResult {
    pub fn csv_header(dim: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "family",
            "kind",
            "beta",
            "k",
            "cov_regularizer",
            "iterations",
            "population",
            "seed",
            "n_transitions",
            "objective",
            "mse",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend((1..=dim).map(|i| format!("mu_{i}")));
        h.extend((1..=dim).map(|i| format!("sigma_{i}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let c = &self.config;
        let kind = match c.kind {
            ObjectiveKind::Dropo => "dropo",
            ObjectiveKind::ExactMixture => "exact_mixture",
        };
        let mut r = vec![
            self.family.clone(),
            kind.to_string(),
            c.objective.entropy_weight.to_string(),
            c.objective.n_xi_samples.to_string(),
            c.objective.cov_regularizer.to_string(),
            c.iterations.to_string(),
            c.population.to_string(),
            c.objective.seed.to_string(),
            self.n_transitions.to_string(),
            self.objective_value.to_string(),
            self.mse.map(|m| m.to_string()).unwrap_or_default(),
        ];
        r.extend(self.fitted.mu.iter().map(|v| v.to_string()));
        r.extend(self.fitted.sigma.iter().map(|v| v.to_string()));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_iid, BehaviorPolicy, ResetDistribution};
    use crate::simulators::PointMassSim;

    const XI: [f64; 2] = [1.0, 0.5];

    fn noiseless_data(n: usize) -> OfflineDataset {
        let quiet = PointMassSim::single(0.1, vec![0.0, 0.0]).unwrap();
        let reset = ResetDistribution::Uniform {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        collect_iid(&quiet, &XI, &BehaviorPolicy::UniformRandom, n, &reset, 12).unwrap()
    }

    fn mixture_config(iterations: usize, beta: f64) -> FitConfig {
        FitConfig {
            kind: ObjectiveKind::ExactMixture,
            objective: ObjectiveConfig {
                n_xi_samples: 8,
                entropy_weight: beta,
                seed: 1,
                ..Default::default()
            },
            population: 10,
            iterations,
            initial_step: 0.3,
            cma_seed: 2,
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let bx = ParamBox::new(vec![0.0, 0.0], vec![2.0, 1.0], 1e-3, 0.5).unwrap();
        let g = DiagonalGaussian::new(vec![1.5, 0.2], vec![0.01, 0.3]).unwrap();
        let back = decode(&encode(&g), &bx);
        for (a, b) in back.sigma.iter().zip(&g.sigma) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(back.mu, g.mu);
        let outside = decode(&[5.0, -1.0, 10.0, -50.0], &bx);
        assert!(bx.contains(&outside));
    }

    #[test]
    fn noiseless_fit_recovers_truth_at_floor() {
        let data = noiseless_data(40);
        let sim = PointMassSim::single(0.1, vec![1e-4, 1e-4]).unwrap();
        let bx = ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-2, 0.3).unwrap();
        let r = fit(&data, &sim, &bx, &mixture_config(80, 0.0)).unwrap();
        for (m, x) in r.fitted.mu.iter().zip(&XI) {
            assert!((m - x).abs() <= 0.01 * x, "mu {:?}", r.fitted.mu);
        }
        for s in &r.fitted.sigma {
            assert!(*s <= 1.05 * bx.sigma_floor, "sigma {:?}", r.fitted.sigma);
        }
        assert!(bx.contains(&r.fitted));

        // grid-search oracle over mu with sigma at the floor
        let cfg = mixture_config(80, 0.0);
        let mut best = (f64::NEG_INFINITY, vec![]);
        for i in 0..=40 {
            for j in 0..=40 {
                let mu = vec![0.5 + i as f64 / 40.0, j as f64 / 40.0];
                let g = DiagonalGaussian {
                    mu: mu.clone(),
                    sigma: vec![bx.sigma_floor; 2],
                };
                let v = score(&data, &sim, &g, &cfg).unwrap();
                if v > best.0 {
                    best = (v, mu);
                }
            }
        }
        assert!(r.objective_value >= best.0);
        assert!(squared_error(&r.fitted.mu, &best.1).sqrt() <= 0.025 * std::f64::consts::SQRT_2);
    }

    #[test]
    fn huge_entropy_weight_saturates_sigma() {
        let data = noiseless_data(10);
        let sim = PointMassSim::single(0.1, vec![0.05, 0.05]).unwrap();
        let bx = ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-3, 0.2).unwrap();
        let r = fit(&data, &sim, &bx, &mixture_config(40, 1e3)).unwrap();
        for s in &r.fitted.sigma {
            assert!(
                (s - bx.sigma_max).abs() < 1e-9,
                "sigma {:?}",
                r.fitted.sigma
            );
        }
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let data = noiseless_data(15);
        let sim = PointMassSim::single(0.1, vec![0.01, 0.01]).unwrap();
        let bx = ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-3, 0.2).unwrap();
        let mut a = fit(&data, &sim, &bx, &FitConfig::edropo(4)).unwrap();
        let mut b = fit(&data, &sim, &bx, &FitConfig::edropo(4)).unwrap();
        a.wall_time = 0.0;
        b.wall_time = 0.0;
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 20);
        assert!(a.mse.is_some());
    }

    #[test]
    fn metrics() {
        let data = noiseless_data(5);
        let sim = PointMassSim::single(0.1, vec![0.01, 0.01]).unwrap();
        let bx = ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-3, 0.2).unwrap();
        let mut r = fit(&data, &sim, &bx, &FitConfig::dropo(1)).unwrap();
        let m = evaluate_fit(&r, &r.fitted.mu.clone(), &[0.1], 1000, 0).unwrap();
        assert_eq!(m.mse, 0.0);
        r.fitted.mu = vec![1.3, 0.1];
        let m = evaluate_fit(&r, &XI, &[0.05, 0.5], 1000, 0).unwrap();
        let manual = (1.3f64 - 1.0).powi(2) + (0.1f64 - 0.5).powi(2);
        assert!((m.mse - manual).abs() < 1e-15);
        assert_eq!(m.ball_mass.len(), 2);
        assert!(m.ball_mass[0].monte_carlo <= m.ball_mass[1].monte_carlo);
    }

    #[test]
    fn dimension_and_emptiness_checks() {
        let data = noiseless_data(5);
        let sim = PointMassSim::single(0.1, vec![0.01, 0.01]).unwrap();
        let bx1 = ParamBox::new(vec![0.5], vec![1.5], 1e-3, 0.2).unwrap();
        assert!(fit(&data, &sim, &bx1, &FitConfig::dropo(1)).is_err());
        let empty = OfflineDataset::from_transitions(data.meta.clone(), vec![]);
        let bx = ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-3, 0.2).unwrap();
        assert_eq!(
            fit(&empty, &sim, &bx, &FitConfig::dropo(1)).unwrap_err(),
            OdrError::EmptyDataset
        );
    }

    #[test]
    fn csv_row_shape() {
        let data = noiseless_data(5);
        let sim = PointMassSim::single(0.1, vec![0.01, 0.01]).unwrap();
        let bx = ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-3, 0.2).unwrap();
        let r = fit(&data, &sim, &bx, &FitConfig::dropo(1)).unwrap();
        assert_eq!(FitResult::csv_header(2).len(), r.csv_row().len());
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_time"));
    }
}
