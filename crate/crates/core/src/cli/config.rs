//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dfsm::DfsmConfig;
use crate::dynsys::{Interpolation, LinearSystem, StateSpaceSystem, SyntheticFowt, TwoLinkRobot};
use crate::error::{Error, Result};
use crate::trajdata::ChannelMap;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    #[default]
    TwoLinkRobot,
    SyntheticFowt,
    /// `ẋ = A x + B u`, `y = C x + D u`; matrices as lists of rows.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        d: Option<Vec<Vec<f64>>>,
    },
    /// Pre-recorded trajectories: every `*.csv` in `dir`, in name order.
    ExternalFiles {
        dir: PathBuf,
        channels: ChannelMap,
    },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::invalid(format!("matrix `{what}` has ragged rows")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// A simulated system selected by the configuration.
pub enum System {
    Robot(TwoLinkRobot),
    Fowt(SyntheticFowt),
    Linear(LinearSystem),
}

impl System {
    pub fn as_dyn(&self) -> &dyn StateSpaceSystem {
        match self {
            System::Robot(s) => s,
            System::Fowt(s) => s,
            System::Linear(s) => s,
        }
    }
}

impl SystemSpec {
    /// The simulator for generated data; `None` for external files.
    pub fn system(&self) -> Result<Option<System>> {
        Ok(match self {
            SystemSpec::TwoLinkRobot => Some(System::Robot(TwoLinkRobot::default())),
            SystemSpec::SyntheticFowt => Some(System::Fowt(SyntheticFowt::default())),
            SystemSpec::Linear { a, b, c, d } => {
                let a = matrix(a, "a")?;
                let b = matrix(b, "b")?;
                let sys = match (c, d) {
                    (None, None) => LinearSystem::states_only(a, b)?,
                    _ => {
                        let c = match c {
                            Some(c) => matrix(c, "c")?,
                            None => DMatrix::zeros(0, a.ncols()),
                        };
                        let d = match d {
                            Some(d) => matrix(d, "d")?,
                            None => DMatrix::zeros(c.nrows(), b.ncols()),
                        };
                        LinearSystem::new(a, b, c, d)?
                    }
                };
                Some(System::Linear(sys))
            }
            SystemSpec::ExternalFiles { .. } => None,
        })
    }
}

/// Random wind for the turbine fixture: each simulation draws a mean in
/// `mean` and fluctuates by up to `amplitude` at evenly spaced knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindGen {
    pub mean: [f64; 2],
    pub amplitude: f64,
    pub n_knots: usize,
}

impl Default for WindGen {
    fn default() -> Self {
        WindGen {
            mean: [10.0, 14.0],
            amplitude: 1.0,
            n_knots: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub n_sim: usize,
    pub t_final: f64,
    pub dt: f64,
    /// Control knots per simulation; defaults to one per second plus one.
    pub n_knots: Option<usize>,
    pub interpolation: Interpolation,
    /// Per-control `[lo, hi]`; defaults depend on the system.
    pub control_bounds: Option<Vec<[f64; 2]>>,
    /// Initial states are drawn uniformly from `center ± spread`.
    pub x0_center: Option<Vec<f64>>,
    pub x0_spread: Option<Vec<f64>>,
    pub wind: WindGen,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            n_sim: 100,
            t_final: 5.0,
            dt: 0.01,
            n_knots: None,
            interpolation: Interpolation::PiecewiseLinear,
            control_bounds: None,
            x0_center: None,
            x0_spread: None,
            wind: WindGen::default(),
        }
    }
}

impl SimulationSpec {
    pub fn knots(&self) -> usize {
        self.n_knots
            .unwrap_or_else(|| (self.t_final.round() as usize).max(1) + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSpec {
    pub n_bins: usize,
    /// Welch segment length; defaults to `min(N, 1024)`.
    pub psd_segment: Option<usize>,
    pub psd_overlap: f64,
    /// Also build and validate the all-network (no linear part) model.
    pub include_nonlinear: bool,
    /// Reference poles `[re, im]` compared with the linear part.
    pub reference_eigenvalues: Vec<[f64; 2]>,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec {
            n_bins: 50,
            psd_segment: None,
            psd_overlap: 0.5,
            include_nonlinear: false,
            reference_eigenvalues: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSpec {
    /// Problem definition used when `--problem` is not given.
    pub problem: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The only seed; every random stage derives from it.
    pub seed: u64,
    pub out: PathBuf,
    pub system: SystemSpec,
    pub simulation: SimulationSpec,
    pub split: SplitSpec,
    /// Model settings; its `seed` is replaced by the run seed.
    pub dfsm: DfsmConfig,
    pub validation: ValidationSpec,
    pub ocp: OcpSpec,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            system: SystemSpec::default(),
            simulation: SimulationSpec::default(),
            split: SplitSpec::default(),
            dfsm: DfsmConfig::default(),
            validation: ValidationSpec::default(),
            ocp: OcpSpec::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: source.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.base_dir = source.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.dfsm.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dfsm.seed = seed;
        self
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        self.out = out;
        self
    }

    /// Output directory, resolved against the config file.
    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    /// Value checks and referenced-path existence.
    pub fn check(&self) -> Result<()> {
        let s = &self.simulation;
        if !(s.dt > 0.0) || !(s.t_final >= s.dt) {
            return Err(Error::invalid("simulation needs 0 < dt <= t_final"));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must be in (0, 1)"));
        }
        if let SystemSpec::ExternalFiles { dir, .. } = &self.system {
            let dir = self.resolve(dir);
            if !dir.is_dir() {
                return Err(Error::io(
                    &dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "trajectory directory not found"),
                ));
            }
        }
        if let Some(p) = &self.ocp.problem {
            let p = self.resolve(p);
            if !p.is_file() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "problem file not found"),
                ));
            }
        }
        self.system.system()?;
        Ok(())
    }

    /// The effective configuration as written next to every artifact.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }
}
