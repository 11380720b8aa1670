//! Desk-scale consistency experiments and the covering / concentration
//! bound utilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{collect_iid, BehaviorPolicy, ResetDistribution};
use crate::error::{OdrError, Result};
use crate::fitting::{evaluate_fit, fit, BallMass, FitConfig};
use crate::gaussian::{DiagonalGaussian, ParamBox};
use crate::likelihood::ObjectiveKind;
use crate::rng::derive_seed;
use crate::simulators::FamilySpec;
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub family: FamilySpec,
    pub xi_star: Vec<f64>,
    pub dataset_sizes: Vec<usize>,
    pub trials: usize,
    pub epsilons: Vec<f64>,
    pub param_box: ParamBox,
    pub policy: BehaviorPolicy,
    pub reset: ResetDistribution,
    pub fit: FitConfig,
    pub n_mc: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_sizes.is_empty() || self.dataset_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OdrError::InvalidConfig(
                "dataset sizes must be strictly increasing".into(),
            ));
        }
        if self.dataset_sizes[0] == 0 {
            return Err(OdrError::InvalidConfig("dataset sizes must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(OdrError::InvalidConfig("trials must be >= 1".into()));
        }
        if self.n_mc == 0 || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(OdrError::InvalidConfig(
                "n_mc and every epsilon must be positive".into(),
            ));
        }
        if self.fit.kind != ObjectiveKind::ExactMixture || self.fit.objective.entropy_weight != 0.0
        {
            log::warn!("consistency sweep running with a non-default objective");
        }
        self.param_box.validate()?;
        self.as_family_check()
    }

    fn as_family_check(&self) -> Result<()> {
        let family = self.family.as_family();
        family.validate_params(&self.xi_star)?;
        if self.param_box.dim() != family.param_dim() {
            return Err(OdrError::DimensionMismatch {
                expected: family.param_dim(),
                got: self.param_box.dim(),
            });
        }
        Ok(())
    }
}

/// One `(N, trial)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub trial: usize,
    pub fitted: Option<DiagonalGaussian>,
    /// `||mu_hat - xi_star||`.
    pub mu_error: Option<f64>,
    /// `||(mu_hat, sigma_hat) - (xi_star, 0)||`.
    pub error: Option<f64>,
    /// Mean of the fitted spreads.
    pub sigma_mean: Option<f64>,
    pub ball_masses: Vec<BallMass>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        Self {
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub ball_mass: Quartiles,
    /// Fraction of successful trials with `error >= epsilon`.
    pub exceed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub successes: usize,
    pub mu_error: Quartiles,
    pub error: Quartiles,
    pub sigma_mean: Quartiles,
    pub per_epsilon: Vec<EpsilonSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub epsilons: Vec<f64>,
    /// Sorted by `(n, trial)`.
    pub cells: Vec<SweepCell>,
    pub summaries: Vec<SizeSummary>,
}

fn run_cell(config: &SweepConfig, n: usize, trial: usize) -> SweepCell {
    let cell_seed = derive_seed(
        derive_seed(config.seed, "sweep.size", n as u64),
        "sweep.trial",
        trial as u64,
    );
    let attempt = || -> Result<(DiagonalGaussian, Vec<BallMass>)> {
        let family = config.family.as_family();
        let data_seed = derive_seed(cell_seed, "sweep.data", 0);
        let data = collect_iid(
            family,
            &config.xi_star,
            &config.policy,
            n,
            &config.reset,
            data_seed,
        )?;
        let mut fit_config = config.fit.clone();
        fit_config.objective.seed = derive_seed(cell_seed, "sweep.objective", 0);
        fit_config.cma_seed = derive_seed(cell_seed, "sweep.cma", 0);
        let result = fit(&data, family, &config.param_box, &fit_config)?;
        let metrics = evaluate_fit(
            &result,
            &config.xi_star,
            &config.epsilons,
            config.n_mc,
            derive_seed(cell_seed, "sweep.ball", 0),
        )?;
        Ok((result.fitted, metrics.ball_mass))
    };
    match attempt() {
        Ok((fitted, ball_masses)) => {
            let mu_sq: f64 = fitted
                .mu
                .iter()
                .zip(&config.xi_star)
                .map(|(m, x)| (m - x) * (m - x))
                .sum();
            let sigma_sq: f64 = fitted.sigma.iter().map(|s| s * s).sum();
            let sigma_mean = fitted.sigma.iter().sum::<f64>() / fitted.dim() as f64;
            SweepCell {
                n,
                trial,
                mu_error: Some(mu_sq.sqrt()),
                error: Some((mu_sq + sigma_sq).sqrt()),
                sigma_mean: Some(sigma_mean),
                fitted: Some(fitted),
                ball_masses,
                failure: None,
            }
        }
        Err(e) => SweepCell {
            n,
            trial,
            fitted: None,
            mu_error: None,
            error: None,
            sigma_mean: None,
            ball_masses: Vec::new(),
            failure: Some(e.to_string()),
        },
    }
}

fn summarize(n: usize, cells: &[&SweepCell], epsilons: &[f64]) -> SizeSummary {
    let ok: Vec<&SweepCell> = cells
        .iter()
        .copied()
        .filter(|c| c.failure.is_none())
        .collect();
    let pick =
        |f: &dyn Fn(&SweepCell) -> Option<f64>| ok.iter().filter_map(|c| f(c)).collect::<Vec<_>>();
    let errors = pick(&|c| c.error);
    let per_epsilon = epsilons
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let masses = pick(&|c| c.ball_masses.get(i).map(|b| b.monte_carlo));
            let exceed = errors.iter().filter(|e| **e >= eps).count();
            EpsilonSummary {
                epsilon: eps,
                ball_mass: Quartiles::of(&masses),
                exceed_fraction: if errors.is_empty() {
                    f64::NAN
                } else {
                    exceed as f64 / errors.len() as f64
                },
            }
        })
        .collect();
    SizeSummary {
        n,
        successes: ok.len(),
        mu_error: Quartiles::of(&pick(&|c| c.mu_error)),
        error: Quartiles::of(&errors),
        sigma_mean: Quartiles::of(&pick(&|c| c.sigma_mean)),
        per_epsilon,
    }
}

/// Collects, fits and scores every `(N, trial)` cell. Cells run in
/// parallel with seeds derived from `(seed, N, trial)`, so the report does
/// not depend on scheduling. Failed cells are recorded, not propagated.
pub fn consistency_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .dataset_sizes
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |t| (n, t)))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(n, t)| run_cell(config, n, t))
        .collect();
    for c in cells.iter().filter(|c| c.failure.is_some()) {
        log::warn!(
            "sweep cell N={} trial={} failed: {}",
            c.n,
            c.trial,
            c.failure.as_deref().unwrap_or("")
        );
    }
    let summaries = config
        .dataset_sizes
        .iter()
        .map(|&n| {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.n == n).collect();
            summarize(n, &group, &config.epsilons)
        })
        .collect();
    Ok(SweepReport {
        epsilons: config.epsilons.clone(),
        cells,
        summaries,
    })
}

impl SweepReport {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["n", "trial", "mu_error", "error", "sigma_mean", "failure"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for eps in &self.epsilons {
            h.push(format!("ball_mass_mc@{eps}"));
            h.push(format!("ball_mass_chebyshev@{eps}"));
        }
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.cells
            .iter()
            .map(|c| {
                let mut row = vec![
                    c.n.to_string(),
                    c.trial.to_string(),
                    opt(c.mu_error),
                    opt(c.error),
                    opt(c.sigma_mean),
                    c.failure.clone().unwrap_or_default(),
                ];
                for i in 0..self.epsilons.len() {
                    let b = c.ball_masses.get(i);
                    row.push(opt(b.map(|b| b.monte_carlo)));
                    row.push(opt(b.map(|b| b.chebyshev)));
                }
                row
            })
            .collect()
    }

    /// Plain-text quartile table, one line per dataset size.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:>8} {:>4} {:>32} {:>32}",
            "N", "ok", "|mu-xi*| q1/med/q3", "sigma q1/med/q3"
        );
        for eps in &self.epsilons {
            out.push_str(&format!(" {:>14}", format!("mass@{eps}")));
        }
        out.push('\n');
        let q = |q: &Quartiles| format!("{:.3e}/{:.3e}/{:.3e}", q.q1, q.median, q.q3);
        for s in &self.summaries {
            out.push_str(&format!(
                "{:>8} {:>4} {:>32} {:>32}",
                s.n,
                s.successes,
                q(&s.mu_error),
                q(&s.sigma_mean)
            ));
            for e in &s.per_epsilon {
                out.push_str(&format!(" {:>14.4}", e.ball_mass.median));
            }
            out.push('\n');
        }
        out
    }
}

/// Smallest swept `N` whose median ball mass at `epsilon` reaches `alpha`;
/// `None` when no size does.
pub fn informativeness_curve(
    report: &SweepReport,
    alpha: f64,
    epsilon: f64,
) -> Result<Option<usize>> {
    let idx = report
        .epsilons
        .iter()
        .position(|e| (e - epsilon).abs() <= 1e-12 * epsilon.abs().max(1.0))
        .ok_or(OdrError::EpsilonNotInSweep(epsilon))?;
    Ok(report
        .summaries
        .iter()
        .find(|s| s.per_epsilon[idx].ball_mass.median >= alpha)
        .map(|s| s.n))
}

/// `ceil(4^d (diameter * lipschitz / epsilon)^d)`, valid for
/// `0 < epsilon < 2 * diameter * lipschitz`.
pub fn covering_bound(d: usize, diameter: f64, lipschitz: f64, epsilon: f64) -> Result<u64> {
    if d == 0
        || !(diameter > 0.0)
        || !(lipschitz > 0.0)
        || !(epsilon > 0.0 && epsilon < 2.0 * diameter * lipschitz)
    {
        return Err(OdrError::OutOfRange(format!(
            "covering bound needs d >= 1 and 0 < epsilon < 2 * diameter * L (d={d}, diameter={diameter}, L={lipschitz}, epsilon={epsilon})"
        )));
    }
    let raw = (4.0 * diameter * lipschitz / epsilon).powi(d as i32);
    let nearest = raw.round();
    let value = if (raw - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    Ok(value as u64)
}

/// Greedy net of closed `radius`-balls over a grid on the cube
/// `[0, side]^d` with `resolution` points per axis. Every grid point lies
/// within `radius` of the net and net points are more than `radius` apart.
pub fn greedy_net(d: usize, side: f64, radius: f64, resolution: usize) -> Vec<Vec<f64>> {
    let step = if resolution > 1 {
        side / (resolution - 1) as f64
    } else {
        0.0
    };
    let total = resolution.pow(d as u32);
    let mut net: Vec<Vec<f64>> = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let p: Vec<f64> = (0..d)
            .map(|_| {
                let i = rem % resolution;
                rem /= resolution;
                i as f64 * step
            })
            .collect();
        let covered = net
            .iter()
            .any(|q| crate::gaussian::euclidean(&p, q) <= radius);
        if !covered {
            net.push(p);
        }
    }
    net
}

/// `2 exp(-N epsilon^2 / (2 m_tilde^2))`.
pub fn hoeffding_deviation_bound(n: usize, epsilon: f64, m_tilde: f64) -> f64 {
    2.0 * (-(n as f64) * epsilon * epsilon / (2.0 * m_tilde * m_tilde)).exp()
}
