//! Exact sim-to-real gap computations on finite MDP classes.
//!
//! Values are finite-horizon and undiscounted, rewards lie in `[0, 1]`, and
//! every episode starts from the class's start state. Histories are encoded
//! as `[s_1, a_1, s_2, a_2, ..., s_h]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cmaes::{optimize, CmaConfig};
use crate::dataset::OfflineDataset;
use crate::error::{OdrError, Result};
use crate::fitting::{decode, search_bounds};
use crate::gaussian::{DiagonalGaussian, ParamBox};
use crate::likelihood::exact_kernel_loglik;
use crate::simulators::{FiniteMdpClass, TabularMdp};

/// Values within this distance of the maximum count as ties; ties go to the
/// lowest action index.
const TIE_TOL: f64 = 1e-12;

/// Default cap on `members * history nodes` for exact belief-tree DP.
pub const DEFAULT_NODE_LIMIT: usize = 1_000_000;

fn argmax_lowest(values: &[f64]) -> (usize, f64) {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx = values
        .iter()
        .position(|v| *v >= best - TIE_TOL)
        .unwrap_or(0);
    (idx, values[idx])
}

/// Probability vector over the members of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    pub weights: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12
        {
            return Err(OdrError::InvalidConfig(format!(
                "prior weights must be nonnegative and sum to 1, got {weights:?}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn point_mass(m: usize, j: usize) -> Self {
        let mut weights = vec![0.0; m];
        weights[j] = 1.0;
        Self { weights }
    }

    /// Mass `alpha` on `truth`, the remainder spread evenly over the others.
    pub fn informative(m: usize, truth: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || truth >= m {
            return Err(OdrError::OutOfRange(format!(
                "alpha {alpha} / truth {truth} for {m} members"
            )));
        }
        if m == 1 {
            return Ok(Self { weights: vec![1.0] });
        }
        let rest = (1.0 - alpha) / (m - 1) as f64;
        let mut weights = vec![rest; m];
        weights[truth] = alpha;
        Ok(Self { weights })
    }

    /// Member weights of a Gaussian over the class parameter line: the
    /// exact mixture weights of `g`, so the prior reproduces the fitted
    /// mixture kernel.
    pub fn from_gaussian(class: &FiniteMdpClass, g: &DiagonalGaussian) -> Result<Self> {
        Ok(Self {
            weights: class.mixture_weights(g)?,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Deterministic Markov policy, `actions[h][s]` for steps `h = 0..H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub actions: Vec<Vec<usize>>,
}

/// Deterministic history-dependent policy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryPolicy {
    pub actions: BTreeMap<Vec<usize>, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Markov(MarkovPolicy),
    History(HistoryPolicy),
}

impl Policy {
    /// Action at `history`, which ends in the current state.
    pub fn act(&self, history: &[usize]) -> Option<usize> {
        match self {
            Policy::Markov(p) => {
                let h = history.len() / 2;
                p.actions
                    .get(h)
                    .and_then(|row| row.get(*history.last()?))
                    .copied()
            }
            Policy::History(p) => p.actions.get(history).copied(),
        }
    }
}

/// Optimal values `values[h][s]` (step `h` counted from 0) and a greedy
/// optimal policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
    pub policy: MarkovPolicy,
}

impl ValueTable {
    pub fn start_value(&self, mdp: &TabularMdp) -> f64 {
        self.values[0][mdp.start_state]
    }
}

pub fn value_iteration(mdp: &TabularMdp) -> ValueTable {
    let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut values = vec![vec![0.0; ns]; horizon];
    let mut actions = vec![vec![0usize; ns]; horizon];
    let mut next = vec![0.0; ns];
    for h in (0..horizon).rev() {
        for s in 0..ns {
            let q: Vec<f64> = (0..na)
                .map(|a| {
                    let mut v = mdp.reward[s][a];
                    for (sn, p) in mdp.transitions[s][a].iter().enumerate() {
                        v += p * next[sn];
                    }
                    v
                })
                .collect();
            let (a, v) = argmax_lowest(&q);
            actions[h][s] = a;
            values[h][s] = v;
        }
        next = values[h].clone();
    }
    ValueTable {
        values,
        policy: MarkovPolicy { actions },
    }
}

/// Exact expected return of `policy` from the start state, by forward
/// recursion over the histories reachable with positive probability.
pub fn policy_value(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    fn rec(mdp: &TabularMdp, policy: &Policy, history: &mut Vec<usize>) -> Result<f64> {
        let h = history.len() / 2;
        if h == mdp.horizon {
            return Ok(0.0);
        }
        let s = *history.last().expect("history is never empty");
        let a = policy
            .act(history)
            .filter(|a| *a < mdp.n_actions)
            .ok_or_else(|| OdrError::PolicyUndefined {
                history: history.clone(),
            })?;
        let mut v = mdp.reward[s][a];
        if h + 1 < mdp.horizon {
            for (sn, p) in mdp.transitions[s][a].iter().enumerate() {
                if *p > 0.0 {
                    history.push(a);
                    history.push(sn);
                    v += p * rec(mdp, policy, history)?;
                    history.truncate(history.len() - 2);
                }
            }
        }
        Ok(v)
    }
    rec(mdp, policy, &mut vec![mdp.start_state])
}

/// `V*(s_1) - V^pi(s_1)` on `mdp`, never negative.
pub fn gap(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    let optimal = value_iteration(mdp).start_value(mdp);
    let v = policy_value(mdp, policy)?;
    Ok((optimal - v).max(0.0))
}

/// Bayes-optimal policy of the latent MDP and its prior-weighted value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesSolution {
    pub policy: HistoryPolicy,
    pub value: f64,
}

/// Number of decision nodes in the history tree of `class`.
pub fn history_tree_size(class: &FiniteMdpClass) -> usize {
    let branch = class.n_states.saturating_mul(class.n_actions);
    let mut level = 1usize;
    let mut total = 0usize;
    for _ in 0..class.horizon {
        total = total.saturating_add(level);
        level = level.saturating_mul(branch);
    }
    total
}

/// Exact maximizer of `sum_j prior_j V_j^pi(s_1)` over history-dependent
/// policies, by dynamic programming over the history tree with Bayes
/// posteriors over the members.
///
/// Histories with zero probability under the current belief keep the
/// belief unchanged, so the policy is defined on every history and a
/// point-mass prior reproduces that member's optimal policy.
pub fn bayes_optimal_policy(
    class: &FiniteMdpClass,
    prior: &DiscretePrior,
    node_limit: usize,
) -> Result<BayesSolution> {
    if prior.len() != class.n_members() {
        return Err(OdrError::DimensionMismatch {
            expected: class.n_members(),
            got: prior.len(),
        });
    }
    let nodes = history_tree_size(class).saturating_mul(class.n_members());
    if nodes > node_limit {
        return Err(OdrError::InstanceTooLarge {
            nodes,
            limit: node_limit,
        });
    }

    struct Solver<'a> {
        class: &'a FiniteMdpClass,
        policy: HistoryPolicy,
    }

    impl Solver<'_> {
        fn solve(&mut self, history: &mut Vec<usize>, belief: &[f64]) -> f64 {
            let c = self.class;
            let h = history.len() / 2;
            let s = *history.last().expect("history is never empty");
            let mut q = Vec::with_capacity(c.n_actions);
            for a in 0..c.n_actions {
                let mut v = c.reward[s][a];
                if h + 1 < c.horizon {
                    for sn in 0..c.n_states {
                        let pred: f64 = belief
                            .iter()
                            .enumerate()
                            .map(|(j, b)| b * c.transitions[j][s][a][sn])
                            .sum();
                        let posterior: Vec<f64> = if pred > 0.0 {
                            belief
                                .iter()
                                .enumerate()
                                .map(|(j, b)| b * c.transitions[j][s][a][sn] / pred)
                                .collect()
                        } else {
                            belief.to_vec()
                        };
                        history.push(a);
                        history.push(sn);
                        let child = self.solve(history, &posterior);
                        history.truncate(history.len() - 2);
                        v += pred * child;
                    }
                }
                q.push(v);
            }
            let (a, v) = argmax_lowest(&q);
            self.policy.actions.insert(history.clone(), a);
            v
        }
    }

    let mut solver = Solver {
        class,
        policy: HistoryPolicy::default(),
    };
    let value = solver.solve(&mut vec![class.start_state], &prior.weights);
    Ok(BayesSolution {
        policy: solver.policy,
        value,
    })
}

/// Gaussian over the class parameter line maximizing the exact
/// mixture-kernel log-likelihood of `dataset`, and the member prior it
/// induces.
pub fn fit_class_prior(
    class: &FiniteMdpClass,
    dataset: &OfflineDataset,
    bx: &ParamBox,
    population: usize,
    iterations: usize,
    seed: u64,
) -> Result<(DiagonalGaussian, DiscretePrior)> {
    bx.validate()?;
    if bx.dim() != 1 {
        return Err(OdrError::DimensionMismatch {
            expected: 1,
            got: bx.dim(),
        });
    }
    let (lo, hi) = search_bounds(bx);
    let mut cma = CmaConfig::new(lo, hi, seed);
    cma.population = population;
    cma.iterations = iterations;
    let run = optimize(
        |x: &[f64]| exact_kernel_loglik(class, dataset, &decode(x, bx)),
        &cma,
    )?;
    let g = decode(&run.best_point, bx);
    let prior = DiscretePrior::from_gaussian(class, &g)?;
    Ok((g, prior))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallBoundEntry {
    pub epsilon: f64,
    /// Prior mass on members within `epsilon` of the true parameter.
    pub ball_mass: f64,
    /// `None` when the ball carries no mass.
    pub bound: Option<f64>,
}

/// Uniform-prior versus fitted-prior comparison on one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub true_index: usize,
    pub gap_udr: f64,
    pub gap_odr: f64,
    /// Fitted mass on the true member.
    pub alpha: f64,
    /// `max_j (V*_j - V_j^{pi_odr})`.
    pub c: f64,
    /// `c / alpha`.
    pub ratio_bound: f64,
    pub ratio_bound_holds: bool,
    /// Smallest worst-member gap among the fitted-prior policy, the
    /// uniform-prior policy and each member's optimal policy.
    pub c_tight: f64,
    pub tight_bound_holds: bool,
    pub odr_member_gaps: Vec<f64>,
    pub udr_member_gaps: Vec<f64>,
    pub ball_bounds: Vec<BallBoundEntry>,
}

fn member_gaps(class: &FiniteMdpClass, policy: &Policy) -> Result<Vec<f64>> {
    (0..class.n_members())
        .map(|j| gap(&class.member(j), policy))
        .collect()
}

/// Bayes policies under the uniform prior and under `fitted`, their gaps on
/// every member, and the finite-class bounds evaluated on the instance.
pub fn udr_vs_odr_report(
    class: &FiniteMdpClass,
    fitted: &DiscretePrior,
    epsilons: &[f64],
    lipschitz: f64,
) -> Result<GapReport> {
    let m = class.n_members();
    let t = class.true_index;
    let alpha = fitted.weights[t];
    if !(alpha > 0.0) {
        return Err(OdrError::BoundVacuous);
    }
    let odr = Policy::History(bayes_optimal_policy(class, fitted, DEFAULT_NODE_LIMIT)?.policy);
    let udr = Policy::History(
        bayes_optimal_policy(class, &DiscretePrior::uniform(m), DEFAULT_NODE_LIMIT)?.policy,
    );
    let odr_member_gaps = member_gaps(class, &odr)?;
    let udr_member_gaps = member_gaps(class, &udr)?;
    let worst = |g: &[f64]| g.iter().copied().fold(0.0, f64::max);
    let c = worst(&odr_member_gaps);
    let mut c_tight = c.min(worst(&udr_member_gaps));
    for j in 0..m {
        let opt = Policy::Markov(value_iteration(&class.member(j)).policy);
        c_tight = c_tight.min(worst(&member_gaps(class, &opt)?));
    }
    let gap_odr = odr_member_gaps[t];
    let ratio_bound = c / alpha;
    let ball_bounds = epsilons
        .iter()
        .map(|&eps| {
            let ball_mass: f64 = (0..m)
                .filter(|j| (*j as f64 - t as f64).abs() < eps)
                .map(|j| fitted.weights[j])
                .sum();
            BallBoundEntry {
                epsilon: eps,
                ball_mass,
                bound: ball_gap_bound(c, ball_mass, lipschitz, eps).ok(),
            }
        })
        .collect();
    Ok(GapReport {
        true_index: t,
        gap_udr: udr_member_gaps[t],
        gap_odr,
        alpha,
        c,
        ratio_bound,
        ratio_bound_holds: gap_odr <= ratio_bound,
        c_tight,
        tight_bound_holds: gap_odr <= c_tight / alpha + TIE_TOL,
        odr_member_gaps,
        udr_member_gaps,
        ball_bounds,
    })
}

/// `c / ball_mass + lipschitz * epsilon`.
pub fn ball_gap_bound(c: f64, ball_mass: f64, lipschitz: f64, epsilon: f64) -> Result<f64> {
    if ball_mass == 0.0 {
        return Err(OdrError::BoundVacuous);
    }
    if !(ball_mass > 0.0 && ball_mass <= 1.0) || lipschitz < 0.0 || epsilon < 0.0 {
        return Err(OdrError::OutOfRange(format!(
            "ball_mass {ball_mass}, lipschitz {lipschitz}, epsilon {epsilon}"
        )));
    }
    Ok(c / ball_mass + lipschitz * epsilon)
}

impl GapReport {
    pub fn csv_header() -> [&'static str; 9] {
        [
            "true_index",
            "alpha",
            "gap_udr",
            "gap_odr",
            "c",
            "ratio_bound",
            "ratio_bound_holds",
            "c_tight",
            "tight_bound_holds",
        ]
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.true_index.to_string(),
            self.alpha.to_string(),
            self.gap_udr.to_string(),
            self.gap_odr.to_string(),
            self.c.to_string(),
            self.ratio_bound.to_string(),
            self.ratio_bound_holds.to_string(),
            self.c_tight.to_string(),
            self.tight_bound_holds.to_string(),
        ]
    }
}
