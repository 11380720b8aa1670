//! Built-in simulator families and their default truths and search boxes.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use odr_core::dataset::ResetDistribution;
use odr_core::gaussian::ParamBox;
use odr_core::simulators::{FamilySpec, FiniteMdpClass, PointMassSim, SimulatorFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    /// One body, unknown mass and friction.
    PointMass,
    /// Two spring-coupled bodies, unknown masses.
    MassChain,
    /// Finite class of tabular MDPs on a parameter line.
    FiniteMdp,
}

impl FamilyName {
    /// Family behind a dataset's recorded family id.
    pub fn from_id(id: &str) -> Option<Self> {
        if id == "point-mass" {
            Some(Self::PointMass)
        } else if id.starts_with("mass-chain") {
            Some(Self::MassChain)
        } else if id.starts_with("finite-mdp") {
            Some(Self::FiniteMdp)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyName>,
    /// True parameter of the real system.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub xi: Option<Vec<f64>>,
    /// Transition noise standard deviation (continuous families).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Finite class as JSON; generated from the flags below when absent.
    #[arg(long)]
    pub class_file: Option<PathBuf>,
    #[arg(long)]
    pub mdp_states: Option<usize>,
    #[arg(long)]
    pub mdp_actions: Option<usize>,
    #[arg(long)]
    pub mdp_horizon: Option<usize>,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub class_seed: Option<u64>,
}

/// A family with its default truth, search box and i.i.d. reset.
pub struct Setup {
    pub spec: FamilySpec,
    pub xi: Vec<f64>,
    pub param_box: ParamBox,
    pub reset: ResetDistribution,
}

impl Setup {
    pub fn family(&self) -> &dyn SimulatorFamily {
        self.spec.as_family()
    }
}

pub fn build(args: &FamilyArgs, fallback: FamilyName) -> Result<Setup> {
    let name = args.family.unwrap_or(fallback);
    let setup = match name {
        FamilyName::PointMass => {
            let noise = args.noise.unwrap_or(0.01);
            let sim = PointMassSim::single(args.dt.unwrap_or(0.1), vec![noise; 2])?;
            Setup {
                spec: FamilySpec::PointMass(sim),
                xi: vec![1.0, 0.5],
                param_box: ParamBox::new(vec![0.5, 0.0], vec![1.5, 1.0], 1e-3, 0.3)?,
                reset: ResetDistribution::Uniform {
                    lo: vec![-1.0; 2],
                    hi: vec![1.0; 2],
                },
            }
        }
        FamilyName::MassChain => {
            let noise = args.noise.unwrap_or(0.01);
            let sim = PointMassSim::chain(2, 0.1, 1.0, args.dt.unwrap_or(0.05), vec![noise; 4])?;
            Setup {
                spec: FamilySpec::PointMass(sim),
                xi: vec![1.0, 2.0],
                param_box: ParamBox::new(vec![0.5, 1.0], vec![1.5, 3.0], 1e-3, 1.0)?,
                reset: ResetDistribution::Uniform {
                    lo: vec![-1.0; 4],
                    hi: vec![1.0; 4],
                },
            }
        }
        FamilyName::FiniteMdp => {
            let class = match &args.class_file {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<FiniteMdpClass>(&text)
                        .with_context(|| format!("parsing class {}", path.display()))?
                }
                None => FiniteMdpClass::random_separated(
                    args.mdp_states.unwrap_or(3),
                    args.mdp_actions.unwrap_or(2),
                    args.mdp_horizon.unwrap_or(3),
                    args.members.unwrap_or(3),
                    args.delta.unwrap_or(0.3),
                    args.class_seed.unwrap_or(0),
                )?,
            };
            let m = class.n_members() as f64;
            Setup {
                xi: FiniteMdpClass::member_xi(class.true_index),
                param_box: ParamBox::new(vec![0.0], vec![(m - 1.0).max(1.0)], 1e-3, m.max(2.0))?,
                reset: ResetDistribution::UniformIndex { n: class.n_states },
                spec: FamilySpec::FiniteMdp(class),
            }
        }
    };
    Ok(Setup {
        xi: args.xi.clone().unwrap_or(setup.xi),
        ..setup
    })
}
