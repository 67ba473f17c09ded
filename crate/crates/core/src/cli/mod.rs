//! The `dfsm` command line: generate, build, validate and solve.
//!
//! Every command writes the effective configuration next to its artifacts
//! as `config.toml`. Exit codes: 0 success, 1 error, 2 an optimization that
//! stopped without converging.

mod config;

pub use config::{OcpSpec, RunConfig, SimulationSpec, SplitSpec, System, SystemSpec, ValidationSpec, WindGen};

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dfsm::{build_dfsm, load_bundle, save_bundle, simulate_dfsm, BuildMode, DfsmModel};
use crate::dynsys::{generate_random_controls, simulate, ControlSignal, Interpolation, ParamInput, StateSpaceSystem};
use crate::error::{Error, Result};
use crate::linfit::{eigenvalues, LinearPart};
use crate::mat::fmt_f64;
use crate::ocp::{load_problem, solve, OcpSolution};
use crate::trajdata::{export_timeseries, import_timeseries, split_train_test, ChannelMap, Split, Trajectory};
use crate::validate::{
    compare_trajectories, error_histogram, pooled_rmse, psd_welch, write_histogram, write_psd, write_rmse_summary,
    ComparisonReport, PsdEstimate, DEFAULT_SEGMENT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCONVERGED: i32 = 2;

const TRAJ_DIR: &str = "trajectories";
const TRAJ_MANIFEST: &str = "manifest.json";
const MODEL_DIR: &str = "model";
const VALIDATION_DIR: &str = "validation";
const SOLUTION_DIR: &str = "solution";

// Independent random streams derived from the run seed.
const STREAM_CONTROLS: u64 = 1;
const STREAM_X0: u64 = 2;
const STREAM_WIND: u64 = 3;
const STREAM_SPLIT: u64 = 4;

fn substream(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

#[derive(Debug, Parser)]
#[command(
    name = "dfsm",
    version,
    about = "Derivative-function surrogate models and optimal control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the configured seed.
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured system and write trajectory files.
    Generate(Common),
    /// Fit a surrogate to the training trajectories and save the bundle.
    Build(Common),
    /// Compare surrogate simulations with the test trajectories.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Model bundle; defaults to `<out>/model`.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Solve an optimal control problem on a surrogate.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Problem definition; defaults to `ocp.problem` in the configuration.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Model bundle; defaults to the problem's `bundle`, then `<out>/model`.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

fn effective_config(common: &Common, required: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None if required => return Err(Error::invalid("this command needs --config")),
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed_override {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        // command-line paths are relative to the working directory
        cfg = cfg.with_out(std::path::absolute(out).map_err(|e| Error::io(out, e))?);
    }
    Ok(cfg)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Generate(common) => effective_config(&common, true).and_then(|c| {
            let s = cmd_generate(&c)?;
            println!(
                "generated {} of {} trajectories in {}",
                s.n_ok(),
                s.entries.len(),
                s.dir.display()
            );
            Ok(EXIT_OK)
        }),
        Command::Build(common) => effective_config(&common, true).and_then(|c| {
            let model = cmd_build(&c)?;
            let corrected = model.channel_mask().iter().filter(|m| **m).count();
            println!(
                "built {:?} model: {corrected} of {} state channels corrected, bundle in {}",
                model.mode,
                model.n_states(),
                c.out_dir().join(MODEL_DIR).display()
            );
            Ok(EXIT_OK)
        }),
        Command::Validate { common, bundle } => effective_config(&common, true).and_then(|c| {
            let s = cmd_validate(&c, bundle.as_deref())?;
            for row in &s.pooled {
                println!(
                    "{:<10} {:<7} {:<14} rmse {}",
                    row.model,
                    row.kind,
                    row.channel,
                    fmt_f64(row.rmse)
                );
            }
            Ok(EXIT_OK)
        }),
        Command::Solve {
            common,
            problem,
            bundle,
        } => effective_config(&common, false).and_then(|c| {
            let sol = cmd_solve(&c, problem.as_deref(), bundle.as_deref())?;
            println!(
                "objective {} max defect {:e} converged {}",
                fmt_f64(sol.objective),
                sol.max_defect,
                sol.converged
            );
            Ok(if sol.converged { EXIT_OK } else { EXIT_UNCONVERGED })
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let msg = s.to_string();
                // wrappers often repeat their source's text
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                }
                shown = msg;
                src = s.source();
            }
            EXIT_ERROR
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedEntry {
    pub index: usize,
    /// File name inside the trajectory directory; absent when the run failed.
    pub file: Option<String>,
    pub control_seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    #[serde(skip)]
    pub dir: PathBuf,
    pub names: crate::trajdata::ChannelNames,
    pub entries: Vec<GeneratedEntry>,
}

impl GenerateSummary {
    pub fn n_ok(&self) -> usize {
        self.entries.iter().filter(|e| e.file.is_some()).count()
    }
}

fn control_bounds(cfg: &RunConfig, system: &System) -> Result<Vec<(f64, f64)>> {
    let nu = system.as_dyn().n_controls();
    let bounds = match &cfg.simulation.control_bounds {
        Some(b) => b.iter().map(|&[lo, hi]| (lo, hi)).collect(),
        None => match system {
            System::Robot(_) => vec![(-3.0, 3.0); nu],
            // torque [MN·m], blade pitch [deg] around the rated region
            System::Fowt(_) => vec![(17.0, 21.0), (3.0, 11.0)],
            System::Linear(_) => vec![(-1.0, 1.0); nu],
        },
    };
    if bounds.len() != nu {
        return Err(Error::Dimension {
            context: "simulation.control_bounds",
            expected: nu,
            actual: bounds.len(),
        });
    }
    Ok(bounds)
}

fn x0_box(cfg: &RunConfig, system: &System, wind0: f64, u_mid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let nx = system.as_dyn().n_states();
    let center = match &cfg.simulation.x0_center {
        Some(c) => c.clone(),
        None => match system {
            // hanging configuration
            System::Robot(_) => vec![-std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0],
            System::Fowt(f) => f
                .equilibrium(wind0, u_mid[0], u_mid[1])
                .map(|e| e.to_vec())
                .unwrap_or_else(|| vec![3.0, 7.0, 0.0, 0.0]),
            System::Linear(_) => vec![0.0; nx],
        },
    };
    let spread = match &cfg.simulation.x0_spread {
        Some(s) => s.clone(),
        None => match system {
            System::Robot(_) => vec![0.5; nx],
            System::Fowt(_) => vec![0.5, 0.3, 0.05, 0.05],
            System::Linear(_) => vec![1.0; nx],
        },
    };
    for (what, v) in [("simulation.x0_center", &center), ("simulation.x0_spread", &spread)] {
        if v.len() != nx {
            return Err(Error::Dimension {
                context: what,
                expected: nx,
                actual: v.len(),
            });
        }
    }
    Ok((center, spread))
}

fn wind_signal(cfg: &RunConfig, index: usize) -> Result<(f64, ParamInput)> {
    let g = &cfg.simulation.wind;
    let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, STREAM_WIND, index as u64));
    let mean = g.mean[0] + (g.mean[1] - g.mean[0]) * rng.random::<f64>();
    let n = g.n_knots.max(2);
    let tf = cfg.simulation.t_final;
    let times: Vec<f64> = (0..n).map(|k| tf * k as f64 / (n - 1) as f64).collect();
    let values: Vec<f64> = (0..n)
        .map(|_| mean + g.amplitude * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let first = values[0];
    let signal = ControlSignal::new(
        times,
        DMatrix::from_row_slice(1, n, &values),
        Interpolation::PiecewiseLinear,
    )?;
    Ok((first, ParamInput::Signal(signal)))
}

/// One simulation of the configured system, as `generate` would run it.
pub fn generate_one(cfg: &RunConfig, system: &System, index: usize) -> Result<Trajectory> {
    let sim = &cfg.simulation;
    let bounds = control_bounds(cfg, system)?;
    let seed = substream(cfg.seed, STREAM_CONTROLS, index as u64);
    let u = generate_random_controls(&bounds, sim.knots(), sim.t_final, sim.interpolation, seed)?;
    let (wind0, w) = if system.as_dyn().n_params() == 1 {
        wind_signal(cfg, index)?
    } else {
        (0.0, ParamInput::None)
    };
    let mid: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let (center, spread) = x0_box(cfg, system, wind0, &mid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, STREAM_X0, index as u64));
    let x0: Vec<f64> = center
        .iter()
        .zip(&spread)
        .map(|(c, s)| c + s * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    simulate(system.as_dyn(), &x0, &u, &w, sim.t_final, sim.dt)
}

/// Simulates `n_sim` trajectories. A divergent simulation is recorded in
/// the manifest and the run continues.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let system = cfg
        .system
        .system()?
        .ok_or_else(|| Error::invalid("an external-files system has nothing to generate"))?;
    let out = cfg.out_dir();
    let dir = out.join(TRAJ_DIR);
    create_dir(&dir)?;
    write_config(cfg, &out)?;
    let width = cfg.simulation.n_sim.saturating_sub(1).to_string().len().max(4);
    let mut entries = Vec::with_capacity(cfg.simulation.n_sim);
    for i in 0..cfg.simulation.n_sim {
        let control_seed = substream(cfg.seed, STREAM_CONTROLS, i as u64);
        let entry = match generate_one(cfg, &system, i) {
            Ok(traj) => {
                let name = format!("traj_{i:0width$}.csv");
                export_timeseries(&traj, dir.join(&name))?;
                GeneratedEntry {
                    index: i,
                    file: Some(name),
                    control_seed,
                    error: None,
                }
            }
            Err(e @ (Error::Divergence { .. } | Error::InvalidInput(_))) => {
                eprintln!("warning: simulation {i} failed: {e}");
                GeneratedEntry {
                    index: i,
                    file: None,
                    control_seed,
                    error: Some(e.to_string()),
                }
            }
            Err(e) => return Err(e),
        };
        entries.push(entry);
    }
    let summary = GenerateSummary {
        dir: dir.clone(),
        names: system.as_dyn().channel_names(),
        entries,
    };
    write_json(&dir.join(TRAJ_MANIFEST), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------- build

/// The trajectories a configuration refers to: generated files listed in
/// the manifest, or every `*.csv` of an external directory in name order.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    match &cfg.system {
        SystemSpec::ExternalFiles { dir, channels } => {
            let dir = cfg.resolve(dir);
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            files.iter().map(|f| import_timeseries(f, channels)).collect()
        }
        _ => {
            let dir = cfg.out_dir().join(TRAJ_DIR);
            let path = dir.join(TRAJ_MANIFEST);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let manifest: GenerateSummary = serde_json::from_str(&text).map_err(|e| Error::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let map = ChannelMap::from_names(&manifest.names);
            manifest
                .entries
                .iter()
                .filter_map(|e| e.file.as_ref())
                .map(|f| import_timeseries(dir.join(f), &map))
                .collect()
        }
    }
}

pub fn dataset_split(cfg: &RunConfig, n: usize) -> Result<Split> {
    split_train_test(n, cfg.split.train_fraction, substream(cfg.seed, STREAM_SPLIT, 0))
}

fn pick(trajs: &[Trajectory], idx: &[usize]) -> Vec<Trajectory> {
    idx.iter().map(|&i| trajs[i].clone()).collect()
}

/// Fits the surrogate on the training split and writes `<out>/model`.
pub fn cmd_build(cfg: &RunConfig) -> Result<DfsmModel> {
    let trajs = load_dataset(cfg)?;
    let split = dataset_split(cfg, trajs.len())?;
    let model = build_dfsm(&pick(&trajs, &split.train), &cfg.dfsm)?;
    let out = cfg.out_dir();
    save_bundle(&model, out.join(MODEL_DIR))?;
    write_json(&out.join("split.json"), &split)?;
    write_config(cfg, &out)?;
    Ok(model)
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledRow {
    pub model: String,
    pub kind: String,
    pub channel: String,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub test_trajectories: Vec<usize>,
    /// Test trajectories on which a surrogate simulation diverged, by model.
    pub diverged: Vec<(String, usize)>,
    pub pooled: Vec<PooledRow>,
    pub max_eigen_relative_error: Option<f64>,
}

/// Recorded controls and scheduling of a trajectory as simulation inputs,
/// with time measured from its first sample.
fn replay_inputs(traj: &Trajectory) -> Result<(Vec<f64>, ControlSignal, ParamInput, f64, f64)> {
    if traj.len() < 2 {
        return Err(Error::invalid("a trajectory needs two samples to be replayed"));
    }
    let t = traj.times();
    let rel: Vec<f64> = t.iter().map(|v| v - t[0]).collect();
    let dt = rel[1];
    let tf = rel[rel.len() - 1];
    let u = ControlSignal::new(rel.clone(), traj.controls().clone(), Interpolation::PiecewiseLinear)?;
    let w = match traj.sched() {
        Some(s) => ParamInput::Signal(ControlSignal::new(
            rel,
            DMatrix::from_row_slice(1, s.len(), s),
            Interpolation::PiecewiseLinear,
        )?),
        None => ParamInput::None,
    };
    let x0 = traj.states().column(0).iter().copied().collect();
    Ok((x0, u, w, tf, dt))
}

fn replay(system: &dyn StateSpaceSystem, traj: &Trajectory) -> Result<(Trajectory, f64)> {
    let (x0, u, w, tf, dt) = replay_inputs(traj)?;
    let w = if system.n_params() == 0 { ParamInput::None } else { w };
    let start = Instant::now();
    let sim = simulate(system, &x0, &u, &w, tf, dt)?;
    Ok((sim, start.elapsed().as_secs_f64()))
}

fn replay_model(model: &DfsmModel, traj: &Trajectory) -> Result<(Trajectory, f64)> {
    let (x0, u, w, tf, dt) = replay_inputs(traj)?;
    let w = if model.is_lpv() { w } else { ParamInput::None };
    let start = Instant::now();
    let sim = simulate_dfsm(model, &x0, &u, &w, tf, dt)?;
    Ok((sim, start.elapsed().as_secs_f64()))
}

fn state_eigenvalues(model: &DfsmModel) -> Option<Vec<Complex<f64>>> {
    match &model.derivs.linear {
        LinearPart::Fixed(m) => eigenvalues(m).ok(),
        LinearPart::Lpv(_) => None,
    }
}

fn channel_file(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Simulates the surrogate (and its linear-only part) on every test
/// trajectory and writes RMSE tables, error histograms, PSDs and the
/// eigenvalues of the linear part to `<out>/validation`.
pub fn cmd_validate(cfg: &RunConfig, bundle: Option<&Path>) -> Result<ValidationSummary> {
    let out = cfg.out_dir();
    let bundle = bundle.map_or_else(|| out.join(MODEL_DIR), Path::to_path_buf);
    let model = load_bundle(&bundle)?;
    let trajs = load_dataset(cfg)?;
    let split = dataset_split(cfg, trajs.len())?;
    let system = cfg.system.system()?;

    let mut models: Vec<(String, DfsmModel)> =
        vec![("mf".into(), model.clone()), ("linear".into(), model.linear_only())];
    if model.mode == BuildMode::Nonlinear {
        models.truncate(1);
        models[0].0 = "nonlinear".into();
    } else if cfg.validation.include_nonlinear {
        let mut nl_cfg = cfg.dfsm.clone();
        nl_cfg.mode = BuildMode::Nonlinear;
        models.push(("nonlinear".into(), build_dfsm(&pick(&trajs, &split.train), &nl_cfg)?));
    }

    let vdir = out.join(VALIDATION_DIR);
    create_dir(&vdir)?;
    let mut truths = Vec::new();
    let mut truth_seconds = Vec::new();
    for &i in &split.test {
        match &system {
            Some(s) => {
                let (t, secs) = replay(s.as_dyn(), &trajs[i])?;
                truths.push(t);
                truth_seconds.push(Some(secs));
            }
            None => {
                truths.push(trajs[i].clone());
                truth_seconds.push(None);
            }
        }
    }

    let mut diverged = Vec::new();
    let mut pooled = Vec::new();
    let mut timings = String::from("model,trajectory,truth_seconds,model_seconds\n");
    let mut first_sims: Vec<(String, Trajectory)> = Vec::new();
    for (label, m) in &models {
        let mut reports: Vec<ComparisonReport> = Vec::new();
        for (k, &i) in split.test.iter().enumerate() {
            match replay_model(m, &truths[k]) {
                Ok((sim, secs)) => {
                    let mut r = compare_trajectories(&truths[k], &sim)?;
                    r.truth_seconds = truth_seconds[k];
                    r.predicted_seconds = Some(secs);
                    timings.push_str(&format!(
                        "{label},{i},{},{}\n",
                        truth_seconds[k].map_or(String::new(), fmt_f64),
                        fmt_f64(secs)
                    ));
                    if reports.is_empty() {
                        first_sims.push((label.clone(), sim));
                    }
                    reports.push(r);
                }
                Err(Error::Divergence { .. }) => diverged.push((label.clone(), i)),
                Err(e) => return Err(e),
            }
        }
        write_rmse_summary(&reports, vdir.join(format!("rmse_{label}.csv")))?;
        let (states, outputs) = pooled_rmse(&reports);
        let Some(first) = reports.first() else { continue };
        for (kind, chans, values) in [("state", &first.states, states), ("output", &first.outputs, outputs)] {
            for (c, rmse) in chans.iter().zip(values) {
                pooled.push(PooledRow {
                    model: label.clone(),
                    kind: kind.into(),
                    channel: c.name.clone(),
                    rmse,
                });
                let errors: Vec<f64> = reports
                    .iter()
                    .flat_map(|r| {
                        let list = if kind == "state" { &r.states } else { &r.outputs };
                        list.iter()
                            .find(|e| e.name == c.name)
                            .map(|e| e.errors.clone())
                            .unwrap_or_default()
                    })
                    .collect();
                let h = error_histogram(&errors, cfg.validation.n_bins)?;
                write_histogram(
                    &h,
                    vdir.join("histograms")
                        .join(format!("{label}_{}.csv", channel_file(&c.name))),
                )?;
            }
        }
    }
    write_file(&vdir.join("timings.csv"), &timings)?;
    let mut table = String::from("model,kind,channel,rmse\n");
    for r in &pooled {
        table.push_str(&format!("{},{},{},{}\n", r.model, r.kind, r.channel, fmt_f64(r.rmse)));
    }
    write_file(&vdir.join("rmse_pooled.csv"), &table)?;

    if let Some(truth) = truths.first() {
        write_psds(cfg, &vdir.join("psd"), truth, &first_sims)?;
    }

    let mut max_eigen = None;
    if let Some(eig) = state_eigenvalues(&model) {
        let mut s = String::from("re,im\n");
        for e in &eig {
            s.push_str(&format!("{},{}\n", fmt_f64(e.re), fmt_f64(e.im)));
        }
        write_file(&vdir.join("eigenvalues.csv"), &s)?;
        if !cfg.validation.reference_eigenvalues.is_empty() {
            let reference: Vec<Complex<f64>> = cfg
                .validation
                .reference_eigenvalues
                .iter()
                .map(|&[re, im]| Complex::new(re, im))
                .collect();
            let cmp = crate::validate::compare_eigenvalues(&reference, &eig)?;
            let mut s = String::from("reference_re,reference_im,model_re,model_im,relative_error\n");
            for p in &cmp.pairs {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_f64(p.reference.re),
                    fmt_f64(p.reference.im),
                    fmt_f64(p.candidate.re),
                    fmt_f64(p.candidate.im),
                    fmt_f64(p.relative_error)
                ));
            }
            write_file(&vdir.join("eigen_comparison.csv"), &s)?;
            max_eigen = Some(cmp.max_relative_error);
        }
    }

    let summary = ValidationSummary {
        test_trajectories: split.test.clone(),
        diverged,
        pooled,
        max_eigen_relative_error: max_eigen,
    };
    write_json(&vdir.join("summary.json"), &summary)?;
    write_config(cfg, &out)?;
    Ok(summary)
}

/// One file per channel of the first test trajectory: truth and every model.
fn write_psds(cfg: &RunConfig, dir: &Path, truth: &Trajectory, sims: &[(String, Trajectory)]) -> Result<()> {
    let n = truth.len();
    let dt = truth.times()[1] - truth.times()[0];
    let seg = cfg.validation.psd_segment.unwrap_or(DEFAULT_SEGMENT).min(n);
    let overlap = cfg.validation.psd_overlap;
    let psd = |row: Vec<f64>| psd_welch(&row, dt, seg, overlap);
    let names = truth.names();
    let channels = names
        .states
        .iter()
        .enumerate()
        .map(|(r, name)| (name, false, r))
        .chain(names.outputs.iter().enumerate().map(|(r, name)| (name, true, r)));
    for (name, is_output, r) in channels {
        let rows = |t: &Trajectory| -> Option<Vec<f64>> {
            let m = if is_output { t.outputs() } else { t.states() };
            (r < m.nrows()).then(|| m.row(r).iter().copied().collect())
        };
        let mut est: Vec<(String, PsdEstimate)> = Vec::new();
        est.push(("truth".into(), psd(rows(truth).unwrap_or_default())?));
        for (label, sim) in sims {
            if let Some(row) = rows(sim) {
                est.push((label.clone(), psd(row)?));
            }
        }
        let refs: Vec<(&str, &PsdEstimate)> = est.iter().map(|(l, e)| (l.as_str(), e)).collect();
        write_psd(&refs, dir.join(format!("{}.csv", channel_file(name))))?;
    }
    Ok(())
}

// ------------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub objective: f64,
    pub power_integral: Option<f64>,
    pub max_defect: f64,
    pub max_bound_violation: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Solves the problem on a saved surrogate and writes `<out>/solution`.
/// A run that stops unconverged still writes its best iterate.
pub fn cmd_solve(cfg: &RunConfig, problem: Option<&Path>, bundle: Option<&Path>) -> Result<OcpSolution> {
    let problem_path = match (problem, &cfg.ocp.problem) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => return Err(Error::invalid("no problem file: pass --problem or set ocp.problem")),
    };
    let file = load_problem(&problem_path)?;
    let out = cfg.out_dir();
    let bundle = match (bundle, file.bundle_path()) {
        (Some(b), _) => b.to_path_buf(),
        (None, Some(b)) => b,
        (None, None) => out.join(MODEL_DIR),
    };
    let model = load_bundle(&bundle)?;
    let ocp = file.to_problem(&model)?;
    let sol = solve(&ocp, &file.solver)?;

    let dir = out.join(SOLUTION_DIR);
    create_dir(&dir)?;
    export_timeseries(&sol.trajectory, dir.join("trajectory.csv"))?;
    write_json(
        &dir.join("summary.json"),
        &SolveSummary {
            objective: sol.objective,
            power_integral: sol.power_integral,
            max_defect: sol.max_defect,
            max_bound_violation: sol.max_bound_violation,
            iterations: sol.iterations,
            outer_iterations: sol.outer_iterations,
            converged: sol.converged,
        },
    )?;
    write_file(
        &dir.join("timings.csv"),
        &format!("seconds\n{}\n", fmt_f64(sol.seconds)),
    )?;
    std::fs::copy(&problem_path, dir.join("problem.toml")).map_err(|e| Error::io(&problem_path, e))?;
    write_config(cfg, &out)?;
    Ok(sol)
}
