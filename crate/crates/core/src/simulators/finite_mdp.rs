use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, ActionSpace, SimulatorFamily};
use crate::error::{OdrError, Result};
use crate::gaussian::{std_normal_cdf, std_normal_pdf, DiagonalGaussian};
use crate::rng::SimRng;

const ROW_TOL: f64 = 1e-12;

/// One tabular episodic MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub start_state: usize,
    /// `reward[s][a]` in `[0, 1]`.
    pub reward: Vec<Vec<f64>>,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

/// `M` tabular MDPs sharing states, actions, rewards, horizon and start
/// state, differing only in their transition tensors.
///
/// As a [`SimulatorFamily`] the class is indexed by a scalar `xi`: integer
/// values select a member and fractional values interpolate linearly between
/// neighbouring members (clamped at both ends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClass")]
pub struct FiniteMdpClass {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub reward: Vec<Vec<f64>>,
    pub start_state: usize,
    /// `transitions[member][s][a][s']`.
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub true_index: usize,
}

#[derive(Deserialize)]
struct RawClass {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    reward: Vec<Vec<f64>>,
    start_state: usize,
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    true_index: usize,
}

impl TryFrom<RawClass> for FiniteMdpClass {
    type Error = OdrError;

    fn try_from(r: RawClass) -> Result<Self> {
        FiniteMdpClass::new(
            r.n_states,
            r.n_actions,
            r.horizon,
            r.reward,
            r.start_state,
            r.transitions,
            r.true_index,
        )
    }
}

impl FiniteMdpClass {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        reward: Vec<Vec<f64>>,
        start_state: usize,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        true_index: usize,
    ) -> Result<Self> {
        let c = Self {
            n_states,
            n_actions,
            horizon,
            reward,
            start_state,
            transitions,
            true_index,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OdrError::InvalidConfig(m));
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return bad("need at least one state, action and step".into());
        }
        if self.transitions.is_empty() {
            return bad("class has no members".into());
        }
        if self.start_state >= self.n_states || self.true_index >= self.transitions.len() {
            return bad("start_state or true_index out of range".into());
        }
        if self.reward.len() != self.n_states
            || self.reward.iter().any(|r| r.len() != self.n_actions)
        {
            return bad("reward must be [n_states][n_actions]".into());
        }
        if self
            .reward
            .iter()
            .flatten()
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return bad("rewards must lie in [0, 1]".into());
        }
        for (m, member) in self.transitions.iter().enumerate() {
            if member.len() != self.n_states {
                return bad(format!("member {m}: wrong number of states"));
            }
            for (s, per_a) in member.iter().enumerate() {
                if per_a.len() != self.n_actions {
                    return bad(format!("member {m} state {s}: wrong number of actions"));
                }
                for (a, row) in per_a.iter().enumerate() {
                    if row.len() != self.n_states || row.iter().any(|p| !(*p >= 0.0)) {
                        return bad(format!("member {m} row ({s},{a}) malformed"));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > ROW_TOL {
                        return bad(format!("member {m} row ({s},{a}) sums to {total}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Random class whose members are pairwise `delta`-separated in every
    /// transition row. Rows are drawn uniformly from the simplex and
    /// rewards uniformly from `[0, 1]`; draws are rejected until the
    /// separation holds.
    pub fn random_separated(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        m: usize,
        delta: f64,
        seed: u64,
    ) -> Result<Self> {
        const MAX_ATTEMPTS: u64 = 200_000;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = crate::rng::stream(seed, "finite_mdp.random", attempt);
            let reward = (0..n_states)
                .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
                .collect();
            let transitions = (0..m)
                .map(|_| {
                    (0..n_states)
                        .map(|_| {
                            (0..n_actions)
                                .map(|_| simplex_row(&mut rng, n_states))
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let true_index = rng.random_range(0..m.max(1));
            let class = Self::new(
                n_states,
                n_actions,
                horizon,
                reward,
                0,
                transitions,
                true_index,
            )?;
            if m < 2 || class.l1_separation() >= delta {
                return Ok(class);
            }
        }
        Err(OdrError::InvalidConfig(format!(
            "no {delta}-separated class found in {MAX_ATTEMPTS} draws"
        )))
    }

    pub fn n_members(&self) -> usize {
        self.transitions.len()
    }

    /// Parameter value selecting member `j`.
    pub fn member_xi(j: usize) -> Vec<f64> {
        vec![j as f64]
    }

    pub fn member(&self, j: usize) -> TabularMdp {
        TabularMdp {
            n_states: self.n_states,
            n_actions: self.n_actions,
            horizon: self.horizon,
            start_state: self.start_state,
            reward: self.reward.clone(),
            transitions: self.transitions[j].clone(),
        }
    }

    /// Smallest L1 distance between transition rows of two distinct members,
    /// over all member pairs and state-action pairs. Infinite for a class
    /// with fewer than two members.
    pub fn l1_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        let m = self.n_members();
        for i in 0..m {
            for j in (i + 1)..m {
                for s in 0..self.n_states {
                    for a in 0..self.n_actions {
                        let d: f64 = self.transitions[i][s][a]
                            .iter()
                            .zip(&self.transitions[j][s][a])
                            .map(|(p, q)| (p - q).abs())
                            .sum();
                        best = best.min(d);
                    }
                }
            }
        }
        best
    }

    /// Interpolation weights of each member at parameter value `xi`.
    pub fn interpolation_weights(&self, xi: f64) -> Vec<f64> {
        let m = self.n_members();
        let mut w = vec![0.0; m];
        if m == 1 {
            w[0] = 1.0;
            return w;
        }
        let x = xi.clamp(0.0, (m - 1) as f64);
        let j = (x.floor() as usize).min(m - 2);
        let t = x - j as f64;
        w[j] = 1.0 - t;
        w[j + 1] = t;
        w
    }

    /// Exact member weights of the mixture kernel under `g`:
    /// `E_{xi ~ g}[interpolation_weights(xi)]`.
    pub fn mixture_weights(&self, g: &DiagonalGaussian) -> Result<Vec<f64>> {
        check_len(1, &g.mu)?;
        let (mu, sd) = (g.mu[0], g.sigma[0]);
        let m = self.n_members();
        if m == 1 {
            return Ok(vec![1.0]);
        }
        // E[max(xi - c, 0)]
        let ramp = |c: f64| -> f64 {
            if sd == 0.0 {
                return (mu - c).max(0.0);
            }
            let z = (mu - c) / sd;
            (mu - c) * std_normal_cdf(z) + sd * std_normal_pdf(z)
        };
        let r: Vec<f64> = (0..m).map(|j| ramp(j as f64)).collect();
        let mut w = vec![0.0; m];
        w[0] = 1.0 - r[0] + r[1];
        for j in 1..m - 1 {
            w[j] = r[j - 1] - 2.0 * r[j] + r[j + 1];
        }
        w[m - 1] = r[m - 2] - r[m - 1];
        for v in &mut w {
            *v = v.clamp(0.0, 1.0);
        }
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / total).collect())
    }

    /// Transition tensor of the member mixture `sum_j weights[j] P_j`.
    pub fn mixture_kernel(&self, weights: &[f64]) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        (0..self.n_states)
                            .map(|sn| {
                                weights
                                    .iter()
                                    .enumerate()
                                    .filter(|(_, w)| **w > 0.0)
                                    .map(|(j, w)| w * self.transitions[j][s][a][sn])
                                    .sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn row_prob(&self, xi: f64, s: usize, a: usize, s_next: usize) -> f64 {
        self.interpolation_weights(xi)
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(j, w)| w * self.transitions[j][s][a][s_next])
            .sum()
    }

    pub(crate) fn index(&self, v: &[f64], n: usize, what: &str) -> Result<usize> {
        check_len(1, v)?;
        let x = v[0];
        if x < 0.0 || x.fract() != 0.0 || x >= n as f64 {
            return Err(OdrError::InvalidParameter(format!(
                "{what} {x} is not an index below {n}"
            )));
        }
        Ok(x as usize)
    }
}

fn simplex_row(rng: &mut SimRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // put the rounding residue on the largest entry so the row sums to 1
    let resid = 1.0 - row.iter().sum::<f64>();
    let imax = (0..n)
        .max_by(|&i, &j| row[i].total_cmp(&row[j]))
        .unwrap_or(0);
    row[imax] += resid;
    row
}

impl SimulatorFamily for FiniteMdpClass {
    fn id(&self) -> String {
        format!(
            "finite-mdp-{}x{}x{}",
            self.n_members(),
            self.n_states,
            self.n_actions
        )
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.n_actions)
    }

    fn start_state(&self) -> Vec<f64> {
        vec![self.start_state as f64]
    }

    fn density_available(&self) -> bool {
        true
    }

    fn density_bound(&self) -> Option<f64> {
        Some(1.0)
    }

    fn validate_params(&self, xi: &[f64]) -> Result<()> {
        check_len(1, xi)?;
        if !xi[0].is_finite() {
            return Err(OdrError::InvalidParameter(format!(
                "non-finite parameter {xi:?}"
            )));
        }
        Ok(())
    }

    fn project_params(&self, xi: &[f64]) -> Vec<f64> {
        vec![xi[0].clamp(0.0, (self.n_members() - 1) as f64)]
    }

    fn step(&self, xi: &[f64], s: &[f64], a: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        self.validate_params(xi)?;
        let s = self.index(s, self.n_states, "state")?;
        let a = self.index(a, self.n_actions, "action")?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for sn in 0..self.n_states {
            let p = self.row_prob(xi[0], s, a, sn);
            if p > 0.0 {
                last_positive = sn;
            }
            acc += p;
            if u < acc {
                return Ok(vec![sn as f64]);
            }
        }
        Ok(vec![last_positive as f64])
    }

    fn log_transition_density(
        &self,
        xi: &[f64],
        s: &[f64],
        a: &[f64],
        s_next: &[f64],
    ) -> Result<f64> {
        self.validate_params(xi)?;
        let s = self.index(s, self.n_states, "state")?;
        let a = self.index(a, self.n_actions, "action")?;
        let sn = self.index(s_next, self.n_states, "next state")?;
        Ok(self.row_prob(xi[0], s, a, sn).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn two_member_onehot() -> FiniteMdpClass {
        // member 0 goes to state 0, member 1 to state 1, from every (s, a)
        let m0 = vec![vec![vec![1.0, 0.0]; 1]; 2];
        let m1 = vec![vec![vec![0.0, 1.0]; 1]; 2];
        FiniteMdpClass::new(2, 1, 1, vec![vec![0.0]; 2], 0, vec![m0, m1], 0).unwrap()
    }

    #[test]
    fn validation_rejects_bad_rows_and_rewards() {
        let good = two_member_onehot();
        let mut bad = good.clone();
        bad.transitions[0][0][0] = vec![0.6, 0.6];
        assert!(
            FiniteMdpClass::new(2, 1, 1, bad.reward.clone(), 0, bad.transitions.clone(), 0)
                .is_err()
        );
        assert!(
            FiniteMdpClass::new(2, 1, 1, vec![vec![1.5]; 2], 0, good.transitions.clone(), 0)
                .is_err()
        );
        assert!(
            FiniteMdpClass::new(2, 1, 1, good.reward.clone(), 0, good.transitions.clone(), 5)
                .is_err()
        );
    }

    #[test]
    fn onehot_step_is_deterministic() {
        let c = two_member_onehot();
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(c.step(&[1.0], &[0.0], &[0.0], &mut rng).unwrap(), vec![1.0]);
            assert_eq!(c.step(&[0.0], &[1.0], &[0.0], &mut rng).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn density_is_table_lookup_and_normalized() {
        let c = FiniteMdpClass::random_separated(3, 2, 3, 3, 0.2, 5).unwrap();
        let t = c.true_index;
        let xi = FiniteMdpClass::member_xi(t);
        for s in 0..3 {
            for a in 0..2 {
                let mut total = 0.0;
                for sn in 0..3 {
                    let d = c
                        .transition_density(&xi, &[s as f64], &[a as f64], &[sn as f64])
                        .unwrap();
                    assert_abs_diff_eq!(d, c.transitions[t][s][a][sn], epsilon = 1e-15);
                    total += d;
                }
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn separation_examples() {
        let c = two_member_onehot();
        assert_eq!(c.l1_separation(), 2.0);
        let mut same = c.clone();
        same.transitions[1] = same.transitions[0].clone();
        assert_eq!(same.l1_separation(), 0.0);
        // disjoint at one (s, a), identical elsewhere
        let mut mixed = c.clone();
        mixed.transitions[1][1] = mixed.transitions[0][1].clone();
        assert_eq!(mixed.l1_separation(), 0.0);
    }

    #[test]
    fn separation_matches_brute_force() {
        for seed in 0..10 {
            let c = FiniteMdpClass::random_separated(3, 2, 2, 4, 0.0, seed).unwrap();
            let mut brute = f64::INFINITY;
            for i in 0..4 {
                for j in 0..4 {
                    if i == j {
                        continue;
                    }
                    for s in 0..3 {
                        for a in 0..2 {
                            let mut d = 0.0;
                            for k in 0..3 {
                                d += (c.transitions[i][s][a][k] - c.transitions[j][s][a][k]).abs();
                            }
                            brute = brute.min(d);
                        }
                    }
                }
            }
            assert_abs_diff_eq!(c.l1_separation(), brute, epsilon = 1e-15);
        }
    }

    #[test]
    fn random_class_is_separated() {
        let c = FiniteMdpClass::random_separated(3, 2, 3, 3, 0.3, 11).unwrap();
        assert!(c.l1_separation() >= 0.3);
        assert_eq!(c.n_members(), 3);
    }

    #[test]
    fn empirical_frequencies_match_row() {
        let c = FiniteMdpClass::random_separated(3, 2, 3, 2, 0.1, 4).unwrap();
        let xi = [0.0];
        let n = 100_000;
        let mut counts = [0usize; 3];
        let mut rng = SimRng::seed_from_u64(17);
        for _ in 0..n {
            let sn = c.step(&xi, &[1.0], &[1.0], &mut rng).unwrap()[0] as usize;
            counts[sn] += 1;
        }
        for k in 0..3 {
            let p = c.transitions[0][1][1][k];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (counts[k] as f64 / n as f64 - p).abs() <= 3.0 * se + 1e-12,
                "entry {k}"
            );
        }
    }

    #[test]
    fn mixture_weights_point_masses_and_quadrature() {
        let c = FiniteMdpClass::random_separated(2, 1, 1, 4, 0.0, 2).unwrap();
        for j in 0..4 {
            let w = c
                .mixture_weights(&DiagonalGaussian::point_mass(vec![j as f64]))
                .unwrap();
            let mut e = vec![0.0; 4];
            e[j] = 1.0;
            assert_eq!(w, e);
        }
        // trapezoid quadrature of E[interpolation weights]
        let g = DiagonalGaussian::new(vec![1.3], vec![0.8]).unwrap();
        let w = c.mixture_weights(&g).unwrap();
        let (lo, hi, n) = (1.3 - 12.0 * 0.8, 1.3 + 12.0 * 0.8, 200_000);
        let h = (hi - lo) / n as f64;
        let mut q = [0.0; 4];
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
            let dens = g.log_density(&[x]).unwrap().exp();
            for (qj, hj) in q.iter_mut().zip(c.interpolation_weights(x)) {
                *qj += wt * h * dens * hj;
            }
        }
        for j in 0..4 {
            assert_abs_diff_eq!(w[j], q[j], epsilon = 1e-7);
        }
    }

    #[test]
    fn json_round_trip_validates() {
        let c = FiniteMdpClass::random_separated(3, 2, 3, 3, 0.3, 1).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<FiniteMdpClass>(&s).unwrap(), c);
        let broken = s.replacen("\"true_index\":", "\"true_index\":9", 1);
        assert!(serde_json::from_str::<FiniteMdpClass>(&broken).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn separation_symmetric_and_relabel_invariant(seed in 0u64..10_000, perm_idx in 0usize..6) {
            let c = FiniteMdpClass::random_separated(3, 2, 2, 3, 0.0, seed).unwrap();
            let mut rev = c.clone();
            rev.transitions.reverse();
            prop_assert_eq!(c.l1_separation(), rev.l1_separation());

            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_idx];
            let mut relabeled = c.clone();
            for m in 0..3 {
                for s in 0..3 {
                    for a in 0..2 {
                        for sn in 0..3 {
                            relabeled.transitions[m][p[s]][a][p[sn]] = c.transitions[m][s][a][sn];
                        }
                    }
                }
            }
            prop_assert!((c.l1_separation() - relabeled.l1_separation()).abs() < 1e-12);
        }
    }
}
