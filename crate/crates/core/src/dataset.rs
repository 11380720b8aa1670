//! Offline transition datasets collected from the real system and their
//! JSON-lines storage format.
//!
//! A dataset file holds one `{"s":[...],"a":[...],"s_next":[...]}` object per
//! line. Its [`DatasetMeta`] lives in a sidecar `<stem>.meta.json`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OdrError, Result};
use crate::rng::{stream, SimRng};
use crate::simulators::{ActionSpace, SimulatorFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionMode {
    Iid,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub family: String,
    pub mode: CollectionMode,
    pub seed: u64,
    #[serde(default)]
    pub behavior_policy: String,
    /// Ground truth, kept for evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

impl DatasetMeta {
    pub fn new(family: impl Into<String>, mode: CollectionMode, seed: u64) -> Self {
        Self {
            family: family.into(),
            mode,
            seed,
            behavior_policy: String::new(),
            xi_star: None,
            n_traj: None,
            horizon: None,
        }
    }
}

/// Immutable collection of real-system transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    transitions: Vec<Transition>,
}

impl OfflineDataset {
    pub fn from_transitions(meta: DatasetMeta, transitions: Vec<Transition>) -> Self {
        Self { meta, transitions }
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Same records in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            meta: self.meta.clone(),
            transitions: order.iter().map(|&i| self.transitions[i].clone()).collect(),
        }
    }

    /// Writes one transition per line to `w`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t).map_err(|e| OdrError::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sidecar path holding the metadata of the dataset stored at `path`.
    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the records to `path` and the metadata to its sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.write_jsonl(BufWriter::new(File::create(path)?))?;
        let mut meta =
            serde_json::to_vec_pretty(&self.meta).map_err(|e| OdrError::Io(e.to_string()))?;
        meta.push(b'\n');
        std::fs::write(Self::meta_path(path), meta)?;
        Ok(())
    }

    /// Parses the JSON-lines form. Blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(r: R, meta: DatasetMeta) -> Result<Self> {
        let mut transitions: Vec<Transition> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let index = transitions.len();
            let t: Transition =
                serde_json::from_str(&line).map_err(|e| OdrError::MalformedRecord {
                    index,
                    reason: format!("line {}: {e}", lineno + 1),
                })?;
            if let Some(first) = transitions.first() {
                if t.s.len() != first.s.len() || t.a.len() != first.a.len() {
                    return Err(OdrError::MalformedRecord {
                        index,
                        reason: format!("line {}: dimensions differ from record 0", lineno + 1),
                    });
                }
            }
            if t.s.len() != t.s_next.len() {
                return Err(OdrError::MalformedRecord {
                    index,
                    reason: format!("line {}: s and s_next differ in length", lineno + 1),
                });
            }
            transitions.push(t);
        }
        if transitions.is_empty() {
            return Err(OdrError::EmptyDataset);
        }
        Ok(Self { meta, transitions })
    }

    /// Reads records from `path` and metadata from the sidecar when it
    /// exists; otherwise the family is recorded as `"unknown"`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_path = Self::meta_path(path);
        let meta = if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path)?;
            serde_json::from_str(&text)
                .map_err(|e| OdrError::Io(format!("{}: {e}", meta_path.display())))?
        } else {
            DatasetMeta::new("unknown", CollectionMode::Iid, 0)
        };
        Self::read_jsonl(BufReader::new(File::open(path)?), meta)
    }
}

/// Policy that generated the offline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorPolicy {
    /// Uniform over the action space.
    UniformRandom,
    /// `a_j(t) = amplitude * hi_j * sin(2 pi t / period + j pi / 2)` for
    /// continuous actions, plus uniform jitter of relative size `jitter`.
    /// Discrete actions bin the unit sine into `n` equal cells.
    Sinusoidal {
        amplitude: f64,
        period: f64,
        jitter: f64,
    },
}

impl BehaviorPolicy {
    pub fn name(&self) -> String {
        match self {
            BehaviorPolicy::UniformRandom => "uniform-random".into(),
            BehaviorPolicy::Sinusoidal {
                amplitude,
                period,
                jitter,
            } => {
                format!("sinusoidal(amp={amplitude},period={period},jitter={jitter})")
            }
        }
    }

    pub fn act(&self, space: &ActionSpace, t: usize, rng: &mut SimRng) -> Vec<f64> {
        match (self, space) {
            (BehaviorPolicy::UniformRandom, ActionSpace::Discrete(n)) => {
                vec![rng.random_range(0..*n) as f64]
            }
            (BehaviorPolicy::UniformRandom, ActionSpace::Continuous { lo, hi }) => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            (BehaviorPolicy::Sinusoidal { period, .. }, ActionSpace::Discrete(n)) => {
                let u = 0.5 * (1.0 + (std::f64::consts::TAU * t as f64 / period).sin());
                vec![((u * *n as f64) as usize).min(n - 1) as f64]
            }
            (
                BehaviorPolicy::Sinusoidal {
                    amplitude,
                    period,
                    jitter,
                },
                ActionSpace::Continuous { lo, hi },
            ) => lo
                .iter()
                .zip(hi)
                .enumerate()
                .map(|(j, (l, h))| {
                    let phase = std::f64::consts::TAU * t as f64 / period
                        + j as f64 * std::f64::consts::FRAC_PI_2;
                    let noise = jitter * (2.0 * rng.random::<f64>() - 1.0);
                    (amplitude * h * phase.sin() + noise * h).clamp(*l, *h)
                })
                .collect(),
        }
    }
}

/// Distribution of the state each i.i.d. transition starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResetDistribution {
    Fixed {
        state: Vec<f64>,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Uniform over discrete states `0..n`.
    UniformIndex {
        n: usize,
    },
}

impl ResetDistribution {
    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        match self {
            ResetDistribution::Fixed { state } => state.clone(),
            ResetDistribution::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            ResetDistribution::UniformIndex { n } => vec![rng.random_range(0..*n) as f64],
        }
    }
}

fn record(
    family: &dyn SimulatorFamily,
    xi_star: &[f64],
    policy: &BehaviorPolicy,
    s: Vec<f64>,
    t: usize,
    index: u64,
    seed: u64,
) -> Result<Transition> {
    let a = policy.act(
        &family.action_space(),
        t,
        &mut stream(seed, "dataset.policy", index),
    );
    let s_next = family.step(xi_star, &s, &a, &mut stream(seed, "dataset.step", index))?;
    Ok(Transition { s, a, s_next })
}

/// `n` independent transitions: `s` from `reset`, `a` from `policy`, `s'`
/// from the real system `xi_star`.
pub fn collect_iid(
    family: &dyn SimulatorFamily,
    xi_star: &[f64],
    policy: &BehaviorPolicy,
    n: usize,
    reset: &ResetDistribution,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(OdrError::InvalidConfig("n must be >= 1".into()));
    }
    family.validate_params(xi_star)?;
    let transitions = (0..n)
        .map(|i| {
            let s = reset.sample(&mut stream(seed, "dataset.reset", i as u64));
            record(family, xi_star, policy, s, i, i as u64, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = DatasetMeta::new(family.id(), CollectionMode::Iid, seed);
    meta.behavior_policy = policy.name();
    meta.xi_star = Some(xi_star.to_vec());
    Ok(OfflineDataset { meta, transitions })
}

/// `n_traj` episodes of `horizon` steps from the family's start state.
pub fn collect_trajectories(
    family: &dyn SimulatorFamily,
    xi_star: &[f64],
    policy: &BehaviorPolicy,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_traj == 0 || horizon == 0 {
        return Err(OdrError::InvalidConfig(
            "n_traj and horizon must be >= 1".into(),
        ));
    }
    family.validate_params(xi_star)?;
    let mut transitions = Vec::with_capacity(n_traj * horizon);
    for ep in 0..n_traj {
        let mut s = family.start_state();
        for t in 0..horizon {
            let index = (ep * horizon + t) as u64;
            let tr = record(family, xi_star, policy, s, t, index, seed)?;
            s = tr.s_next.clone();
            transitions.push(tr);
        }
    }
    let mut meta = DatasetMeta::new(family.id(), CollectionMode::Trajectory, seed);
    meta.behavior_policy = policy.name();
    meta.xi_star = Some(xi_star.to_vec());
    meta.n_traj = Some(n_traj);
    meta.horizon = Some(horizon);
    Ok(OfflineDataset { meta, transitions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{FiniteMdpClass, PointMassSim};

    fn sim() -> PointMassSim {
        PointMassSim::single(0.1, vec![0.01, 0.01]).unwrap()
    }

    fn box_reset() -> ResetDistribution {
        ResetDistribution::Uniform {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        }
    }

    #[test]
    fn iid_sizes_and_meta() {
        let d = collect_iid(
            &sim(),
            &[1.0, 0.5],
            &BehaviorPolicy::UniformRandom,
            1,
            &box_reset(),
            3,
        )
        .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.meta.mode, CollectionMode::Iid);
        assert_eq!(d.meta.seed, 3);
        assert!(collect_iid(
            &sim(),
            &[1.0, 0.5],
            &BehaviorPolicy::UniformRandom,
            0,
            &box_reset(),
            3
        )
        .is_err());
        assert!(matches!(
            collect_iid(
                &sim(),
                &[-1.0, 0.5],
                &BehaviorPolicy::UniformRandom,
                3,
                &box_reset(),
                3
            ),
            Err(OdrError::InvalidParameter(_))
        ));
    }

    #[test]
    fn deterministic_setup_gives_identical_transitions() {
        let quiet = PointMassSim::single(0.1, vec![0.0, 0.0]).unwrap();
        let reset = ResetDistribution::Fixed {
            state: vec![0.2, 0.1],
        };
        let constant = BehaviorPolicy::Sinusoidal {
            amplitude: 0.0,
            period: 4.0,
            jitter: 0.0,
        };
        let d = collect_iid(&quiet, &[1.0, 0.5], &constant, 5, &reset, 0).unwrap();
        assert!(d.transitions().iter().all(|t| *t == d.transitions()[0]));
    }

    #[test]
    fn trajectory_reduces_to_iid_at_start_state() {
        let s = sim();
        let policy = BehaviorPolicy::UniformRandom;
        let traj = collect_trajectories(&s, &[1.0, 0.5], &policy, 1, 1, 21).unwrap();
        let reset = ResetDistribution::Fixed {
            state: s.start_state(),
        };
        let iid = collect_iid(&s, &[1.0, 0.5], &policy, 1, &reset, 21).unwrap();
        assert_eq!(traj.transitions(), iid.transitions());
        assert_eq!(traj.meta.mode, CollectionMode::Trajectory);
    }

    #[test]
    fn trajectories_chain() {
        let d = collect_trajectories(&sim(), &[1.0, 0.5], &BehaviorPolicy::UniformRandom, 3, 5, 2)
            .unwrap();
        assert_eq!(d.len(), 15);
        for ep in 0..3 {
            for t in 0..4 {
                let i = ep * 5 + t;
                assert_eq!(d.transitions()[i].s_next, d.transitions()[i + 1].s);
            }
            assert_eq!(d.transitions()[ep * 5].s, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn iid_histogram_matches_row() {
        let c = FiniteMdpClass::random_separated(3, 1, 1, 2, 0.1, 8).unwrap();
        let xi = FiniteMdpClass::member_xi(c.true_index);
        let reset = ResetDistribution::Fixed { state: vec![2.0] };
        let n = 100_000;
        let d = collect_iid(&c, &xi, &BehaviorPolicy::UniformRandom, n, &reset, 4).unwrap();
        let mut counts = [0usize; 3];
        for t in d.transitions() {
            counts[t.s_next[0] as usize] += 1;
        }
        for k in 0..3 {
            let p = c.transitions[c.true_index][2][0][k];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[k] as f64 / n as f64 - p).abs() <= 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let d = collect_iid(
            &sim(),
            &[1.0, 0.5],
            &BehaviorPolicy::UniformRandom,
            3,
            &box_reset(),
            5,
        )
        .unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        d.save(&p1).unwrap();
        assert_eq!(OfflineDataset::load(&p1).unwrap(), d);
        collect_iid(
            &sim(),
            &[1.0, 0.5],
            &BehaviorPolicy::UniformRandom,
            3,
            &box_reset(),
            5,
        )
        .unwrap()
        .save(&p2)
        .unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.starts_with(r#"{"s":["#)));
        let meta = std::fs::read_to_string(OfflineDataset::meta_path(&p1)).unwrap();
        assert!(meta.contains(r#""mode": "iid""#));
        std::fs::remove_file(OfflineDataset::meta_path(&p1)).unwrap();
        let bare = OfflineDataset::load(&p1).unwrap();
        assert_eq!(bare.meta.family, "unknown");
        assert_eq!(bare.transitions(), d.transitions());
    }

    #[test]
    fn load_errors() {
        let meta = || DatasetMeta::new("x", CollectionMode::Iid, 1);
        let ok = r#"{"s":[0.0,1.0],"a":[0.5],"s_next":[0.0,1.0]}"#;
        let bad = r#"{"s":[0.0],"a":[0.5],"s_next":[0.0]}"#;
        let text = format!("{ok}\n{ok}\n{bad}\n");
        match OfflineDataset::read_jsonl(text.as_bytes(), meta()) {
            Err(OdrError::MalformedRecord { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            OfflineDataset::read_jsonl("".as_bytes(), meta()),
            Err(OdrError::EmptyDataset)
        );
        assert_eq!(
            OfflineDataset::read_jsonl("\n\n".as_bytes(), meta()),
            Err(OdrError::EmptyDataset)
        );
        assert!(matches!(
            OfflineDataset::read_jsonl("not json\n".as_bytes(), meta()),
            Err(OdrError::MalformedRecord { index: 0, .. })
        ));
    }
}
