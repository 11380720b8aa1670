//! Independent reference computations for the acceptance suite.

#![allow(dead_code, clippy::needless_range_loop)]

use odr_core::simulators::{FiniteMdpClass, TabularMdp};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

fn hat(j: usize, m: usize, xi: f64) -> f64 {
    let c = j as f64;
    let last = (m - 1) as f64;
    if (j == 0 && xi <= 0.0) || (j == m - 1 && xi >= last) {
        return 1.0;
    }
    (1.0 - (xi - c).abs()).max(0.0)
}

/// Member weights `E[hat_j(mu + sigma z)]` by composite Gauss-Legendre in
/// `z`, split at every kink of the hat functions.
pub fn mixture_weights_quadrature(m: usize, mu: f64, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return (0..m).map(|j| hat(j, m, mu)).collect();
    }
    let (gx, gw) = gauss_legendre(30);
    let lim = 40.0;
    let mut cuts: Vec<f64> = vec![-lim, lim];
    for c in 0..m {
        let z = (c as f64 - mu) / sigma;
        if z.abs() < lim {
            cuts.push(z);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut refined = Vec::new();
    for w in cuts.windows(2) {
        let pieces = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
        for p in 0..pieces {
            refined.push(w[0] + (w[1] - w[0]) * p as f64 / pieces as f64);
        }
    }
    refined.push(lim);
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (0..m)
        .map(|j| {
            let mut acc = 0.0;
            for w in refined.windows(2) {
                let (a, b) = (w[0], w[1]);
                let half = 0.5 * (b - a);
                for (x, wt) in gx.iter().zip(&gw) {
                    let z = a + half * (x + 1.0);
                    acc += half * wt * hat(j, m, mu + sigma * z) * phi(z);
                }
            }
            acc
        })
        .collect()
}

/// `sum_{s,a} w(s,a) KL(P_true(.|s,a) || sum_j weights_j P_j(.|s,a))`.
pub fn weighted_kl(class: &FiniteMdpClass, sa: &[Vec<f64>], weights: &[f64]) -> f64 {
    let p = &class.transitions[class.true_index];
    let mut total = 0.0;
    for s in 0..class.n_states {
        for a in 0..class.n_actions {
            let mut kl = 0.0;
            for sn in 0..class.n_states {
                let ps = p[s][a][sn];
                if ps == 0.0 {
                    continue;
                }
                let q: f64 = (0..class.n_members())
                    .map(|j| weights[j] * class.transitions[j][s][a][sn])
                    .sum();
                kl += ps * (ps / q).ln();
            }
            total += sa[s][a] * kl;
        }
    }
    total
}

/// Value of a Markov policy by forward propagation of the state
/// distribution from `start`, over steps `h0..H`.
pub fn markov_value_forward(
    mdp: &TabularMdp,
    actions: &[Vec<usize>],
    h0: usize,
    start: usize,
) -> f64 {
    let mut dist = vec![0.0; mdp.n_states];
    dist[start] = 1.0;
    let mut value = 0.0;
    for h in h0..mdp.horizon {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if dist[s] == 0.0 {
                continue;
            }
            let a = actions[h][s];
            value += dist[s] * mdp.reward[s][a];
            for sn in 0..mdp.n_states {
                next[sn] += dist[s] * mdp.transitions[s][a][sn];
            }
        }
        dist = next;
    }
    value
}

/// Maximum over all `A^(S*H)` deterministic Markov policies of the value
/// from `(h0, start)`.
pub fn markov_enumeration(mdp: &TabularMdp, h0: usize, start: usize) -> f64 {
    let (ns, na, hz) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let slots = ns * hz;
    let total = na.pow(slots as u32);
    let mut best = f64::NEG_INFINITY;
    let mut actions = vec![vec![0usize; ns]; hz];
    for code in 0..total {
        let mut rem = code;
        for slot in 0..slots {
            actions[slot / ns][slot % ns] = rem % na;
            rem /= na;
        }
        best = best.max(markov_value_forward(mdp, &actions, h0, start));
    }
    best
}

/// Prior-weighted optimal value over history-dependent policies, by
/// recursion on the unnormalized joint weights `prior_j * P_j(history)`.
pub fn joint_weight_value(class: &FiniteMdpClass, weights: &[f64], s: usize, h: usize) -> f64 {
    if h == class.horizon {
        return 0.0;
    }
    let mass: f64 = weights.iter().sum();
    let mut best = f64::NEG_INFINITY;
    for a in 0..class.n_actions {
        let mut v = mass * class.reward[s][a];
        for sn in 0..class.n_states {
            let child: Vec<f64> = weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * class.transitions[j][s][a][sn])
                .collect();
            if child.iter().any(|w| *w > 0.0) {
                v += joint_weight_value(class, &child, sn, h + 1);
            }
        }
        best = best.max(v);
    }
    best
}

/// Number of deterministic tree policies from a node at step `h`.
pub fn tree_policy_count(class: &FiniteMdpClass, h: usize) -> f64 {
    if h + 1 >= class.horizon {
        return class.n_actions as f64;
    }
    class.n_actions as f64 * tree_policy_count(class, h + 1).powi(class.n_states as i32)
}

/// Per-member returns of every deterministic tree policy below a node at
/// step `h` in state `s`, weighted by each member's probability `reach`
/// of arriving there.
fn tree_returns(class: &FiniteMdpClass, reach: &[f64], s: usize, h: usize) -> Vec<Vec<f64>> {
    let m = class.n_members();
    let mut out = Vec::new();
    for a in 0..class.n_actions {
        let here: Vec<f64> = (0..m).map(|j| reach[j] * class.reward[s][a]).collect();
        let mut partial = vec![here];
        if h + 1 < class.horizon {
            for sn in 0..class.n_states {
                let child_reach: Vec<f64> = (0..m)
                    .map(|j| reach[j] * class.transitions[j][s][a][sn])
                    .collect();
                let options = tree_returns(class, &child_reach, sn, h + 1);
                let mut combined = Vec::with_capacity(partial.len() * options.len());
                for p in &partial {
                    for o in &options {
                        combined.push(p.iter().zip(o).map(|(x, y)| x + y).collect());
                    }
                }
                partial = combined;
            }
        }
        out.extend(partial);
    }
    out
}

/// Maximum of `sum_j prior_j V_j^pi` over every deterministic
/// history-dependent policy, by explicit enumeration.
pub fn history_enumeration(class: &FiniteMdpClass, prior: &[f64]) -> f64 {
    let reach = vec![1.0; class.n_members()];
    tree_returns(class, &reach, class.start_state, 0)
        .iter()
        .map(|v| v.iter().zip(prior).map(|(x, p)| x * p).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}
