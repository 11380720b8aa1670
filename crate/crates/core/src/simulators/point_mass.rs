use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_len, ActionSpace, SimulatorFamily};
use crate::error::{OdrError, Result};
use crate::rng::SimRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MIN_MASS: f64 = 1e-9;

/// What the parameter vector `xi` means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointMassLayout {
    /// One body, `xi = (mass, friction)`.
    MassFriction,
    /// `n` bodies in a chain, `xi = (m_1, ..., m_n)`; friction is known.
    Masses { n: usize, friction: f64 },
}

/// Bodies on a line, coupled by springs between neighbours, each driven by
/// its own force and damped by linear friction.
///
/// State is `(x_1, v_1, ..., x_n, v_n)`, action is `(f_1, ..., f_n)`. One step
/// of semi-implicit Euler:
///
/// ```text
/// v' = v + dt * (f - k * spring_stretch - friction * v) / m
/// x' = x + dt * v'
/// ```
///
/// followed by additive Gaussian noise with per-coordinate `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassSim {
    pub layout: PointMassLayout,
    pub dt: f64,
    #[serde(default)]
    pub spring: f64,
    pub noise_std: Vec<f64>,
    #[serde(default = "default_force_limit")]
    pub force_limit: f64,
}

fn default_force_limit() -> f64 {
    1.0
}

impl PointMassSim {
    pub fn new(
        layout: PointMassLayout,
        dt: f64,
        spring: f64,
        noise_std: Vec<f64>,
        force_limit: f64,
    ) -> Result<Self> {
        let sim = Self {
            layout,
            dt,
            spring,
            noise_std,
            force_limit,
        };
        sim.validate()?;
        Ok(sim)
    }

    /// Single body with unknown mass and friction.
    pub fn single(dt: f64, noise_std: Vec<f64>) -> Result<Self> {
        Self::new(PointMassLayout::MassFriction, dt, 0.0, noise_std, 1.0)
    }

    /// `n` spring-coupled bodies with unknown masses.
    pub fn chain(
        n: usize,
        friction: f64,
        spring: f64,
        dt: f64,
        noise_std: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            PointMassLayout::Masses { n, friction },
            dt,
            spring,
            noise_std,
            1.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(OdrError::InvalidConfig("dt must be positive".into()));
        }
        if self.n_bodies() == 0 {
            return Err(OdrError::InvalidConfig("need at least one body".into()));
        }
        if self.noise_std.len() != 2 * self.n_bodies() {
            return Err(OdrError::DimensionMismatch {
                expected: 2 * self.n_bodies(),
                got: self.noise_std.len(),
            });
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(OdrError::InvalidConfig(
                "noise_std must be nonnegative".into(),
            ));
        }
        if !(self.force_limit > 0.0) || self.spring < 0.0 {
            return Err(OdrError::InvalidConfig(
                "need force_limit > 0 and spring >= 0".into(),
            ));
        }
        if let PointMassLayout::Masses { friction, .. } = self.layout {
            if friction < 0.0 {
                return Err(OdrError::InvalidConfig(
                    "friction must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_bodies(&self) -> usize {
        match self.layout {
            PointMassLayout::MassFriction => 1,
            PointMassLayout::Masses { n, .. } => n,
        }
    }

    fn mass(&self, xi: &[f64], j: usize) -> f64 {
        match self.layout {
            PointMassLayout::MassFriction => xi[0],
            PointMassLayout::Masses { .. } => xi[j],
        }
    }

    fn friction(&self, xi: &[f64]) -> f64 {
        match self.layout {
            PointMassLayout::MassFriction => xi[1],
            PointMassLayout::Masses { friction, .. } => friction,
        }
    }

    /// Noise-free next state of body `j`: `(x', v')`.
    #[inline]
    fn body_next(&self, xi: &[f64], s: &[f64], a: &[f64], j: usize) -> (f64, f64) {
        let n = self.n_bodies();
        let x = s[2 * j];
        let v = s[2 * j + 1];
        let mut stretch = 0.0;
        if j > 0 {
            stretch += x - s[2 * (j - 1)];
        }
        if j + 1 < n {
            stretch += x - s[2 * (j + 1)];
        }
        let force = a[j] - self.spring * stretch - self.friction(xi) * v;
        let v_next = v + self.dt * force / self.mass(xi, j);
        (x + self.dt * v_next, v_next)
    }

    /// Deterministic part of the transition.
    pub fn mean_next(&self, xi: &[f64], s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.validate_params(xi)?;
        self.check_sa(s, a)?;
        let mut out = Vec::with_capacity(s.len());
        for j in 0..self.n_bodies() {
            let (x, v) = self.body_next(xi, s, a, j);
            out.push(x);
            out.push(v);
        }
        Ok(out)
    }

    fn check_sa(&self, s: &[f64], a: &[f64]) -> Result<()> {
        check_len(2 * self.n_bodies(), s)?;
        check_len(self.n_bodies(), a)
    }
}

impl SimulatorFamily for PointMassSim {
    fn id(&self) -> String {
        match self.layout {
            PointMassLayout::MassFriction => "point-mass".into(),
            PointMassLayout::Masses { n, .. } => format!("mass-chain-{n}"),
        }
    }

    fn param_dim(&self) -> usize {
        match self.layout {
            PointMassLayout::MassFriction => 2,
            PointMassLayout::Masses { n, .. } => n,
        }
    }

    fn state_dim(&self) -> usize {
        2 * self.n_bodies()
    }

    fn action_space(&self) -> ActionSpace {
        let n = self.n_bodies();
        ActionSpace::Continuous {
            lo: vec![-self.force_limit; n],
            hi: vec![self.force_limit; n],
        }
    }

    fn start_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    fn density_available(&self) -> bool {
        self.noise_std.iter().all(|s| *s > 0.0)
    }

    fn density_bound(&self) -> Option<f64> {
        if !self.density_available() {
            return None;
        }
        Some(
            self.noise_std
                .iter()
                .map(|s| 1.0 / (2.0 * std::f64::consts::PI * s * s).sqrt())
                .product(),
        )
    }

    fn validate_params(&self, xi: &[f64]) -> Result<()> {
        check_len(self.param_dim(), xi)?;
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(OdrError::InvalidParameter(format!(
                "non-finite parameter {xi:?}"
            )));
        }
        for j in 0..self.n_bodies() {
            if self.mass(xi, j) <= 0.0 {
                return Err(OdrError::InvalidParameter(format!(
                    "mass must be positive, got {xi:?}"
                )));
            }
        }
        if self.friction(xi) < 0.0 {
            return Err(OdrError::InvalidParameter(format!(
                "friction must be nonnegative, got {xi:?}"
            )));
        }
        Ok(())
    }

    fn project_params(&self, xi: &[f64]) -> Vec<f64> {
        match self.layout {
            PointMassLayout::MassFriction => vec![xi[0].max(MIN_MASS), xi[1].max(0.0)],
            PointMassLayout::Masses { .. } => xi.iter().map(|m| m.max(MIN_MASS)).collect(),
        }
    }

    fn step(&self, xi: &[f64], s: &[f64], a: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        let mut next = self.mean_next(xi, s, a)?;
        for (v, sd) in next.iter_mut().zip(&self.noise_std) {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
        Ok(next)
    }

    fn log_transition_density(
        &self,
        xi: &[f64],
        s: &[f64],
        a: &[f64],
        s_next: &[f64],
    ) -> Result<f64> {
        if !self.density_available() {
            return Err(OdrError::DensityUnavailable(self.id()));
        }
        self.validate_params(xi)?;
        self.check_sa(s, a)?;
        check_len(s.len(), s_next)?;
        let mut acc = 0.0;
        for j in 0..self.n_bodies() {
            let (x, v) = self.body_next(xi, s, a, j);
            for (k, mean) in [(2 * j, x), (2 * j + 1, v)] {
                let sd = self.noise_std[k];
                let z = (s_next[k] - mean) / sd;
                acc -= 0.5 * LN_2PI + sd.ln() + 0.5 * z * z;
            }
        }
        Ok(acc)
    }
}
