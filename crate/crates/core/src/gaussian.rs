//! Diagonal Gaussian distributions over simulator parameters and the box
//! that constrains them during fitting.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OdrError, Result};
use crate::rng::SimRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default lower bound on fitted standard deviations.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

/// `N(mu, diag(sigma^2))`. A zero `sigma[i]` is allowed and denotes a point
/// mass along that coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(OdrError::DimensionMismatch {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        if let Some(i) = sigma.iter().position(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(OdrError::InvalidParameter(format!(
                "sigma[{i}] = {} must be finite and nonnegative",
                sigma[i]
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(OdrError::InvalidParameter("mu must be finite".into()));
        }
        Ok(Self { mu, sigma })
    }

    /// Point mass at `mu`.
    pub fn point_mass(mu: Vec<f64>) -> Self {
        let d = mu.len();
        Self {
            mu,
            sigma: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Trace of the covariance.
    pub fn trace(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum()
    }

    fn first_zero_sigma(&self) -> Option<usize> {
        self.sigma.iter().position(|s| *s == 0.0)
    }

    /// Differential entropy `(d/2)(1 + ln 2pi) + sum_i ln sigma_i`.
    pub fn entropy(&self) -> Result<f64> {
        if let Some(index) = self.first_zero_sigma() {
            return Err(OdrError::DegenerateDistribution { index });
        }
        let d = self.dim() as f64;
        Ok(0.5 * d * (1.0 + LN_2PI) + self.sigma.iter().map(|s| s.ln()).sum::<f64>())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(OdrError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(index) = self.first_zero_sigma() {
            return Err(OdrError::DegenerateDistribution { index });
        }
        let mut acc = -0.5 * self.dim() as f64 * LN_2PI;
        for ((xi, mi), si) in x.iter().zip(&self.mu).zip(&self.sigma) {
            let z = (xi - mi) / si;
            acc -= si.ln() + 0.5 * z * z;
        }
        Ok(acc)
    }

    /// Maps standard-normal draws `z` to `mu + sigma * z`.
    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((m, s), z)| m + s * z)
            .collect()
    }

    /// Draws one point using `rng`.
    pub fn draw(&self, rng: &mut SimRng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.transform(&z)
    }

    /// `count` i.i.d. rows, reproducible from `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(OdrError::InvalidConfig("sample count must be >= 1".into()));
        }
        let mut rng = crate::rng::stream(seed, "gaussian.sample", 0);
        Ok((0..count).map(|_| self.draw(&mut rng)).collect())
    }

    /// Monte Carlo estimate of the mass inside the open Euclidean ball
    /// `B(center, radius)`.
    pub fn ball_mass_mc(&self, center: &[f64], radius: f64, n_mc: usize, seed: u64) -> Result<f64> {
        if center.len() != self.dim() {
            return Err(OdrError::DimensionMismatch {
                expected: self.dim(),
                got: center.len(),
            });
        }
        if !(radius > 0.0) || n_mc == 0 {
            return Err(OdrError::InvalidConfig(
                "ball mass needs radius > 0 and n_mc >= 1".into(),
            ));
        }
        let r2 = radius * radius;
        let mut rng = crate::rng::stream(seed, "gaussian.ball_mass", 0);
        let mut inside = 0usize;
        for _ in 0..n_mc {
            let mut dist2 = 0.0;
            for ((m, s), c) in self.mu.iter().zip(&self.sigma).zip(center) {
                let z: f64 = rng.sample(StandardNormal);
                let dx = m + s * z - c;
                dist2 += dx * dx;
            }
            if dist2 < r2 {
                inside += 1;
            }
        }
        Ok(inside as f64 / n_mc as f64)
    }

    /// Lower bound on the ball mass from Chebyshev's inequality:
    /// `max(0, 1 - 4 tr(Sigma) / radius^2)` when the mean lies within half the
    /// radius of `center`, otherwise 0.
    pub fn chebyshev_ball_lower_bound(&self, center: &[f64], radius: f64) -> Result<f64> {
        if center.len() != self.dim() {
            return Err(OdrError::DimensionMismatch {
                expected: self.dim(),
                got: center.len(),
            });
        }
        if !(radius > 0.0) {
            return Err(OdrError::InvalidConfig("radius must be positive".into()));
        }
        if euclidean(&self.mu, center) >= radius / 2.0 {
            return Ok(0.0);
        }
        Ok((1.0 - 4.0 * self.trace() / (radius * radius)).max(0.0))
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

/// Search region for the fitted distribution: `mu[i]` in `[lo[i], hi[i]]`
/// and every `sigma[i]` in `[sigma_floor, sigma_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub sigma_floor: f64,
    pub sigma_max: f64,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, sigma_floor: f64, sigma_max: f64) -> Result<Self> {
        let b = Self {
            lo,
            hi,
            sigma_floor,
            sigma_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(OdrError::DimensionMismatch {
                expected: self.lo.len(),
                got: self.hi.len(),
            });
        }
        if self.lo.is_empty() {
            return Err(OdrError::InvalidConfig(
                "parameter box has no dimensions".into(),
            ));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(OdrError::InvalidConfig(format!(
                    "box dimension {i}: need lo < hi, got [{l}, {h}]"
                )));
            }
        }
        if !(self.sigma_floor > 0.0
            && self.sigma_floor < self.sigma_max
            && self.sigma_max.is_finite())
        {
            return Err(OdrError::InvalidConfig(format!(
                "need 0 < sigma_floor < sigma_max, got {} and {}",
                self.sigma_floor, self.sigma_max
            )));
        }
        Ok(())
    }

    /// Box spanning `center * (1 -/+ rel)` per coordinate.
    pub fn relative(center: &[f64], rel: f64, sigma_floor: f64, sigma_max: f64) -> Result<Self> {
        let lo = center.iter().map(|c| c - rel * c.abs()).collect();
        let hi = center.iter().map(|c| c + rel * c.abs()).collect();
        Self::new(lo, hi, sigma_floor, sigma_max)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, g: &DiagonalGaussian) -> bool {
        g.dim() == self.dim()
            && g.mu
                .iter()
                .zip(&self.lo)
                .zip(&self.hi)
                .all(|((m, l), h)| m >= l && m <= h)
            && g.sigma
                .iter()
                .all(|s| *s >= self.sigma_floor && *s <= self.sigma_max)
    }

    /// Projects `g` onto the box.
    pub fn clamp(&self, g: &DiagonalGaussian) -> DiagonalGaussian {
        DiagonalGaussian {
            mu: g
                .mu
                .iter()
                .zip(&self.lo)
                .zip(&self.hi)
                .map(|((m, l), h)| m.clamp(*l, *h))
                .collect(),
            sigma: g
                .sigma
                .iter()
                .map(|s| s.clamp(self.sigma_floor, self.sigma_max))
                .collect(),
        }
    }
}
