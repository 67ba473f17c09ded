//! TOML problem definitions.
//!
//! ```toml
//! bundle = "model"            # optional, relative to this file
//! tf = 600.0
//! n_t = 1000
//! x0 = [0.0, 7.0, 0.0, 0.0]
//! wind = { constant = 12.0 }  # or { file = "wind.csv", column = "wind" }
//!
//! [objective]
//! control_weights = { tau_g = 1e-5, beta = 0.5 }
//! power = { torque = "tau_g", speed = "omega_g", efficiency = 0.99 }
//!
//! [bounds.states]
//! theta_p = [-inf, 6.0]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{unbounded, Bounds, Objective, OcpProblem, PowerTerm, SolveOptions};
use crate::dynsys::{ControlSignal, Interpolation, ParamInput, StateSpaceSystem};
use crate::error::{Error, Result};
use crate::trajdata::{import_timeseries, ChannelMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindSpec {
    Constant {
        constant: f64,
    },
    File {
        file: PathBuf,
        #[serde(default = "default_wind_column")]
        column: String,
    },
}

fn default_wind_column() -> String {
    "wind".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSpec {
    pub torque: String,
    pub speed: String,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
}

fn default_efficiency() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Quadratic weights by control name; unnamed controls get zero.
    pub control_weights: BTreeMap<String, f64>,
    pub power: Option<PowerSpec>,
}

/// Per-channel `[lo, hi]` by name; unnamed channels are unbounded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSpec {
    pub states: BTreeMap<String, [f64; 2]>,
    pub controls: BTreeMap<String, [f64; 2]>,
    pub outputs: BTreeMap<String, [f64; 2]>,
    pub terminal: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub t0: f64,
    pub tf: f64,
    #[serde(default = "default_n_t")]
    pub n_t: usize,
    pub x0: Vec<f64>,
    pub wind: Option<WindSpec>,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_n_t() -> usize {
    1000
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut file: ProblemFile = toml::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(file)
}

fn index(names: &[String], name: &str, kind: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::invalid(format!("unknown {kind} channel `{name}`")))
}

fn resolve_bounds(names: &[String], spec: &BTreeMap<String, [f64; 2]>, kind: &str) -> Result<Bounds> {
    let mut b = unbounded(names.len());
    for (name, [lo, hi]) in spec {
        b[index(names, name, kind)?] = (*lo, *hi);
    }
    Ok(b)
}

impl ProblemFile {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn bundle_path(&self) -> Option<PathBuf> {
        self.bundle.as_deref().map(|b| self.resolve(b))
    }

    fn wind_input(&self, n_params: usize) -> Result<ParamInput> {
        match (&self.wind, n_params) {
            (None, 0) => Ok(ParamInput::None),
            (None, _) => Err(Error::invalid(
                "the model is scheduled and the problem names no wind input",
            )),
            (Some(_), 0) => Err(Error::invalid(
                "the problem gives a wind input but the model is not scheduled",
            )),
            (Some(WindSpec::Constant { constant }), _) => Ok(ParamInput::Constant(vec![*constant])),
            (Some(WindSpec::File { file, column }), _) => {
                let map = ChannelMap {
                    time: "time".into(),
                    controls: vec![column.clone()],
                    states: Vec::new(),
                    outputs: Vec::new(),
                    sched: None,
                };
                let traj = import_timeseries(self.resolve(file), &map)?;
                let signal = ControlSignal::new(
                    traj.times().to_vec(),
                    traj.controls().clone(),
                    Interpolation::PiecewiseLinear,
                )?;
                Ok(ParamInput::Signal(signal))
            }
        }
    }

    /// Binds the definition to a model, resolving channel names.
    pub fn to_problem<'a>(&self, system: &'a dyn StateSpaceSystem) -> Result<OcpProblem<'a>> {
        let names = system.channel_names();
        let mut weights = vec![0.0; system.n_controls()];
        for (name, w) in &self.objective.control_weights {
            weights[index(&names.controls, name, "control")?] = *w;
        }
        let power = match &self.objective.power {
            Some(p) => Some(PowerTerm {
                efficiency: p.efficiency,
                torque: index(&names.controls, &p.torque, "control")?,
                speed: index(&names.states, &p.speed, "state")?,
            }),
            None => None,
        };
        let b = &self.bounds;
        let problem = OcpProblem {
            system,
            t0: self.t0,
            tf: self.tf,
            n_t: self.n_t,
            x0: self.x0.clone(),
            state_bounds: resolve_bounds(&names.states, &b.states, "state")?,
            control_bounds: resolve_bounds(&names.controls, &b.controls, "control")?,
            output_bounds: if b.outputs.is_empty() {
                Vec::new()
            } else {
                resolve_bounds(&names.outputs, &b.outputs, "output")?
            },
            terminal_bounds: if b.terminal.is_empty() {
                None
            } else {
                Some(resolve_bounds(&names.states, &b.terminal, "state")?)
            },
            objective: Objective {
                control_weights: weights,
                power,
            },
            wind: self.wind_input(system.n_params())?,
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::SyntheticFowt;

    const FOWT: &str = r#"
tf = 20.0
n_t = 21
x0 = [3.0, 7.0, 0.0, 0.0]
wind = { constant = 12.0 }

[objective]
control_weights = { tau_g = 1e-5, beta = 0.5 }
power = { torque = "tau_g", speed = "omega_g" }

[bounds.states]
theta_p = [-inf, 6.0]

[bounds.controls]
beta = [0.0, 30.0]

[solver]
max_outer = 5
"#;

    #[test]
    fn parses_and_binds_names() {
        let file: ProblemFile = toml::from_str(FOWT).unwrap();
        let sys = SyntheticFowt::default();
        let p = file.to_problem(&sys).unwrap();
        assert_eq!(p.objective.control_weights, vec![1e-5, 0.5]);
        let power = p.objective.power.unwrap();
        assert_eq!((power.torque, power.speed, power.efficiency), (0, 1, 0.99));
        assert_eq!(p.state_bounds[0], (f64::NEG_INFINITY, 6.0));
        assert_eq!(p.control_bounds[1], (0.0, 30.0));
        assert_eq!(file.solver.max_outer, 5);
        assert_eq!(file.solver.optimality_tol, 1e-7);
        assert!(matches!(p.wind, ParamInput::Constant(ref w) if w == &[12.0]));
    }

    #[test]
    fn malformed_field_is_named() {
        let text = FOWT.replace("n_t = 21", "n_t = \"many\"");
        let err = toml::from_str::<ProblemFile>(&text).unwrap_err().to_string();
        assert!(err.contains("n_t"), "{err}");
        let text = FOWT.replace("max_outer", "max_outr");
        let err = toml::from_str::<ProblemFile>(&text).unwrap_err().to_string();
        assert!(err.contains("max_outr"), "{err}");
    }

    #[test]
    fn unknown_channel_is_rejected() {
        let text = FOWT.replace("theta_p = ", "theta = ");
        let file: ProblemFile = toml::from_str(&text).unwrap();
        assert!(file.to_problem(&SyntheticFowt::default()).is_err());
    }

    #[test]
    fn wind_file_is_read_relative_to_problem() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("wind.csv"), "time,wind\n0,10\n100,14\n").unwrap();
        let text = FOWT.replace("wind = { constant = 12.0 }", "wind = { file = \"wind.csv\" }");
        std::fs::write(dir.path().join("p.toml"), text).unwrap();
        let file = load_problem(dir.path().join("p.toml")).unwrap();
        let sys = SyntheticFowt::default();
        let p = file.to_problem(&sys).unwrap();
        let mut w = [0.0];
        p.wind.eval_into(50.0, &mut w);
        assert!((w[0] - 12.0).abs() < 1e-12);
    }
}
