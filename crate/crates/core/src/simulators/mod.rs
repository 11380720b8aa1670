//! Parametric simulator families `M_xi` that share states, actions, rewards
//! and horizon and differ only in their transition kernels.

mod finite_mdp;
mod point_mass;

pub use finite_mdp::{FiniteMdpClass, TabularMdp};
pub use point_mass::{PointMassLayout, PointMassSim};

use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{OdrError, Result};
use crate::gaussian::{DiagonalGaussian, ParamBox};
use crate::likelihood::mixture_log_densities;
use crate::rng::SimRng;

/// Action space exposed to behavior policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    /// Actions are indices `0..n`, encoded as one-element vectors.
    Discrete(usize),
    /// Actions are real vectors inside `[lo, hi]`.
    Continuous { lo: Vec<f64>, hi: Vec<f64> },
}

/// A family of simulators indexed by a real parameter vector `xi`.
///
/// States and actions are real vectors; discrete families encode indices as
/// one-element vectors.
pub trait SimulatorFamily: Send + Sync {
    fn id(&self) -> String;
    fn param_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn start_state(&self) -> Vec<f64>;

    /// Whether `transition_density` can be evaluated.
    fn density_available(&self) -> bool;

    /// Upper bound on the transition density, when known.
    fn density_bound(&self) -> Option<f64>;

    /// Whether the simulator can be placed in an arbitrary state before a step.
    fn supports_reset(&self) -> bool {
        true
    }

    fn validate_params(&self, xi: &[f64]) -> Result<()>;

    /// Maps an arbitrary parameter draw into the physically valid domain.
    fn project_params(&self, xi: &[f64]) -> Vec<f64>;

    /// Samples `s' ~ P_xi(.|s, a)`.
    fn step(&self, xi: &[f64], s: &[f64], a: &[f64], rng: &mut SimRng) -> Result<Vec<f64>>;

    /// `ln p_xi(s'|s, a)`; `-inf` where the density is zero.
    fn log_transition_density(
        &self,
        xi: &[f64],
        s: &[f64],
        a: &[f64],
        s_next: &[f64],
    ) -> Result<f64>;

    fn transition_density(&self, xi: &[f64], s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
        Ok(self.log_transition_density(xi, s, a, s_next)?.exp())
    }
}

/// Serializable choice of simulator family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    PointMass(PointMassSim),
    FiniteMdp(FiniteMdpClass),
}

impl FamilySpec {
    pub fn as_family(&self) -> &dyn SimulatorFamily {
        match self {
            FamilySpec::PointMass(s) => s,
            FamilySpec::FiniteMdp(c) => c,
        }
    }
}

/// Outcome of [`check_mixture_positivity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePositivity {
    /// Smallest Monte Carlo mixture density seen over the grid and dataset.
    pub min_density: f64,
    /// Grid point attaining the minimum.
    pub argmin: DiagonalGaussian,
    /// Index of the transition attaining the minimum.
    pub transition: usize,
    /// Set when the minimum is below `1e-12`.
    pub warning: Option<String>,
}

/// Grid over `(mu, sigma)` inside `bx`: `resolution` points per coordinate,
/// linear in `mu` and logarithmic in `sigma`. A resolution of 1 yields the
/// box center (geometric center for `sigma`).
pub fn phi_grid(bx: &ParamBox, resolution: usize) -> Vec<DiagonalGaussian> {
    let d = bx.dim();
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        if resolution <= 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..resolution)
                .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
                .collect()
        }
    };
    let mut axes: Vec<Vec<f64>> = (0..d).map(|i| axis(bx.lo[i], bx.hi[i])).collect();
    let log_axis = axis(bx.sigma_floor.ln(), bx.sigma_max.ln());
    for _ in 0..d {
        axes.push(log_axis.iter().map(|v| v.exp()).collect());
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; 2 * d];
    loop {
        let coords: Vec<f64> = idx.iter().enumerate().map(|(j, &k)| axes[j][k]).collect();
        out.push(DiagonalGaussian {
            mu: coords[..d].to_vec(),
            sigma: coords[d..].to_vec(),
        });
        let mut j = 0;
        loop {
            if j == 2 * d {
                return out;
            }
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Estimates the smallest mixture density `q_phi(s'|s,a)` over the dataset
/// and a grid of `phi` in `bx`, using `n_xi_samples` parameter draws per
/// transition (common random numbers across grid points).
pub fn check_mixture_positivity(
    family: &dyn SimulatorFamily,
    dataset: &OfflineDataset,
    bx: &ParamBox,
    grid_resolution: usize,
    n_xi_samples: usize,
    seed: u64,
) -> Result<MixturePositivity> {
    if !family.density_available() {
        return Err(OdrError::DensityUnavailable(family.id()));
    }
    if dataset.is_empty() {
        return Err(OdrError::EmptyDataset);
    }
    let mut best: Option<MixturePositivity> = None;
    for g in phi_grid(bx, grid_resolution) {
        let logs = mixture_log_densities(dataset, family, &g, n_xi_samples, seed)?;
        for (i, l) in logs.iter().enumerate() {
            let dens = l.exp();
            if best.as_ref().is_none_or(|b| dens < b.min_density) {
                best = Some(MixturePositivity {
                    min_density: dens,
                    argmin: g.clone(),
                    transition: i,
                    warning: None,
                });
            }
        }
    }
    let mut best = best.expect("grid and dataset are nonempty");
    if best.min_density < 1e-12 {
        let msg = format!(
            "mixture density {:.3e} at transition {} under {:?} violates positivity",
            best.min_density, best.transition, best.argmin
        );
        log::warn!("{msg}");
        best.warning = Some(msg);
    }
    Ok(best)
}

pub(crate) fn check_len(expected: usize, got: &[f64]) -> Result<()> {
    if expected != got.len() {
        return Err(OdrError::DimensionMismatch {
            expected,
            got: got.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_iid, BehaviorPolicy, ResetDistribution};

    #[test]
    fn grid_sizes() {
        let bx = ParamBox::new(vec![0.0, 0.0], vec![1.0, 2.0], 1e-3, 1.0).unwrap();
        assert_eq!(phi_grid(&bx, 3).len(), 81);
        let single = phi_grid(&bx, 1);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].mu, vec![0.5, 1.0]);
        assert!((single[0].sigma[0] - (1e-3f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn positivity_on_true_parameters_is_positive() {
        let sim = PointMassSim::single(0.05, vec![0.01, 0.01]).unwrap();
        let xi = [1.0, 0.5];
        let data = collect_iid(
            &sim,
            &xi,
            &BehaviorPolicy::UniformRandom,
            50,
            &ResetDistribution::Uniform {
                lo: vec![-1.0, -1.0],
                hi: vec![1.0, 1.0],
            },
            3,
        )
        .unwrap();
        let bx = ParamBox::new(vec![0.99, 0.49], vec![1.01, 0.51], 1e-6, 1e-3).unwrap();
        let r = check_mixture_positivity(&sim, &data, &bx, 2, 8, 1).unwrap();
        assert!(r.min_density > 0.0);
        assert!(r.warning.is_none());
    }

    #[test]
    fn positivity_detects_impossible_transition() {
        // member rows put zero mass on state 2 everywhere
        let row = vec![0.5, 0.5, 0.0];
        let member = vec![vec![row.clone(); 1]; 3];
        let class = FiniteMdpClass::new(
            3,
            1,
            1,
            vec![vec![0.5]; 3],
            0,
            vec![member.clone(), member],
            0,
        )
        .unwrap();
        let data = OfflineDataset::from_transitions(
            crate::dataset::DatasetMeta::new("manual", crate::dataset::CollectionMode::Iid, 0),
            vec![crate::dataset::Transition {
                s: vec![0.0],
                a: vec![0.0],
                s_next: vec![2.0],
            }],
        );
        let bx = ParamBox::new(vec![0.0], vec![1.0], 1e-6, 0.5).unwrap();
        let r = check_mixture_positivity(&class, &data, &bx, 3, 16, 0).unwrap();
        assert_eq!(r.min_density, 0.0);
        assert!(r.warning.is_some());
    }

    #[test]
    fn positivity_single_point_reduces_to_mixture() {
        let sim = PointMassSim::single(0.05, vec![0.02, 0.02]).unwrap();
        let data = OfflineDataset::from_transitions(
            crate::dataset::DatasetMeta::new("manual", crate::dataset::CollectionMode::Iid, 0),
            vec![crate::dataset::Transition {
                s: vec![0.1, 0.2],
                a: vec![0.5],
                s_next: vec![0.11, 0.22],
            }],
        );
        let bx = ParamBox::new(vec![0.8, 0.2], vec![1.2, 0.8], 1e-4, 0.1).unwrap();
        let r = check_mixture_positivity(&sim, &data, &bx, 1, 32, 9).unwrap();
        let g = &phi_grid(&bx, 1)[0];
        let direct = mixture_log_densities(&data, &sim, g, 32, 9).unwrap()[0].exp();
        assert_eq!(r.min_density, direct);
    }

    #[test]
    fn positivity_requires_density() {
        let sim = PointMassSim::single(0.05, vec![0.0, 0.0]).unwrap();
        let data = OfflineDataset::from_transitions(
            crate::dataset::DatasetMeta::new("manual", crate::dataset::CollectionMode::Iid, 0),
            vec![crate::dataset::Transition {
                s: vec![0.0, 0.0],
                a: vec![0.0],
                s_next: vec![0.0, 0.0],
            }],
        );
        let bx = ParamBox::new(vec![0.8, 0.2], vec![1.2, 0.8], 1e-4, 0.1).unwrap();
        assert!(matches!(
            check_mixture_positivity(&sim, &data, &bx, 1, 4, 0),
            Err(OdrError::DensityUnavailable(_))
        ));
    }
}
