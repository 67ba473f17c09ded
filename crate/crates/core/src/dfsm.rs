//! Multi-fidelity derivative-function surrogate models.
//!
//! A surrogate predicts `ẋ ≈ L·I + e(I)` where `L` is a least-squares linear
//! map (optionally scheduled on `w`) and `e` is a set of RBF networks, one
//! per error-corrected channel. The output map `y ≈ [D_L C_L]·I + e_y(I)`
//! is built the same way from output samples.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivx::extract_state_derivatives;
use crate::dynsys::{self, ControlSignal, Jacobians, ParamInput, StateSpaceSystem};
use crate::errnet::{train_rbf, RbfNetwork, RbfOptions};
use crate::error::{check_len, Error, Result};
use crate::linfit::{fit_linear, fit_lpv, LinearFitModel, LinearPart};
use crate::subsample::{kmeans_subsample, residual_error, SampleSet};
use crate::trajdata::{assemble, ChannelNames, DerivativeDataset, InputLayout, Trajectory};

/// Bundle format tag written to and required in every manifest.
pub const BUNDLE_FORMAT: &str = "dfsm-bundle/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildMode {
    /// Linear fit plus error networks on the channels that need them.
    #[default]
    MultiFidelity,
    /// No linear part; every channel is an RBF network.
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSpace {
    /// Mean |residual| divided by the target's standard deviation.
    #[default]
    Scaled,
    /// Mean |residual| in the target's own units.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfsmConfig {
    pub mode: BuildMode,
    /// Scheduling grid; enables the LPV linear part and appends `w` to the
    /// inputs of the error networks.
    pub lpv_grid: Option<Vec<f64>>,
    /// LPV window half-width; defaults to the mean grid spacing.
    pub lpv_window: Option<f64>,
    /// Number of k-means samples `n_s` per clustering pass.
    pub n_samples: usize,
    pub mask_threshold: f64,
    pub mask_space: MaskSpace,
    pub rbf: RbfOptions,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    /// Cluster each scheduling bin separately (LPV only).
    pub cluster_per_bin: bool,
    pub output_surrogate: bool,
    /// Reuse the derivative clustering for the output residuals.
    pub share_output_clustering: bool,
    pub seed: u64,
}

impl Default for DfsmConfig {
    fn default() -> Self {
        DfsmConfig {
            mode: BuildMode::MultiFidelity,
            lpv_grid: None,
            lpv_window: None,
            n_samples: 500,
            mask_threshold: 1e-5,
            mask_space: MaskSpace::Scaled,
            rbf: RbfOptions::default(),
            kmeans_max_iter: 300,
            kmeans_restarts: 10,
            cluster_per_bin: false,
            output_surrogate: true,
            share_output_clustering: false,
            seed: 0,
        }
    }
}

/// An RBF network correcting one target channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNet {
    pub channel: usize,
    pub net: RbfNetwork,
}

/// Linear part, channel mask and per-channel error networks for one target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub linear: LinearPart,
    pub mask: Vec<bool>,
    pub nets: Vec<ChannelNet>,
}

impl Surrogate {
    pub fn n_targets(&self) -> usize {
        self.mask.len()
    }

    /// `input` is `[u; x]`, plus `w` last for scheduled models.
    fn eval_into(&self, input: &[f64], w: Option<f64>, out: &mut [f64]) -> Result<()> {
        let nl = self.linear.n_inputs();
        self.linear.eval_into(&input[..nl], w, out)?;
        let mut e = [0.0];
        for cn in &self.nets {
            cn.net.eval_into(input, &mut e)?;
            out[cn.channel] += e[0];
        }
        Ok(())
    }

    /// Jacobian with respect to `[u; x]` (the scheduling value is exogenous).
    fn jacobian(&self, input: &[f64], w: Option<f64>) -> Result<DMatrix<f64>> {
        let nl = self.linear.n_inputs();
        let mut jac = self.linear.matrix_at(w);
        for cn in &self.nets {
            let j = cn.net.jacobian(input)?;
            for c in 0..nl {
                jac[(cn.channel, c)] += j[(0, c)];
            }
        }
        Ok(jac)
    }

    fn without_corrections(&self) -> Surrogate {
        Surrogate {
            linear: self.linear.clone(),
            mask: vec![false; self.mask.len()],
            nets: Vec::new(),
        }
    }
}

/// Residual statistics of one target channel at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub name: String,
    pub mean_abs_residual: f64,
    pub target_std: f64,
    /// The quantity compared against the mask threshold.
    pub mask_metric: f64,
    pub corrected: bool,
}

/// Deterministic build summary (wall-times live in [`StageTimings`]).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub n_trajectories: usize,
    pub n_columns: usize,
    pub state_channels: Vec<ChannelStat>,
    pub output_channels: Vec<ChannelStat>,
    pub n_samples: usize,
    pub n_output_samples: usize,
    pub linear_rank_deficient: bool,
}

/// Wall-clock seconds per build stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub derivatives: f64,
    pub linear_fit: f64,
    pub residuals: f64,
    pub subsample: f64,
    pub error_nets: f64,
    pub output_surrogate: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfsmModel {
    pub layout: InputLayout,
    pub names: ChannelNames,
    pub mode: BuildMode,
    pub derivs: Surrogate,
    pub outputs: Option<Surrogate>,
    pub report: BuildReport,
    pub timings: StageTimings,
}

fn row_stats(e: &DMatrix<f64>, targets: &DMatrix<f64>, r: usize) -> (f64, f64) {
    let n = e.ncols().max(1) as f64;
    let mean_abs = e.row(r).iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean = targets.row(r).sum() / n;
    let std = (targets.row(r).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    (mean_abs, std)
}

fn channel_stats(names: &[String], e: &DMatrix<f64>, targets: &DMatrix<f64>, cfg: &DfsmConfig) -> Vec<ChannelStat> {
    (0..e.nrows())
        .map(|r| {
            let (mean_abs, std) = row_stats(e, targets, r);
            let metric = match cfg.mask_space {
                MaskSpace::Raw => mean_abs,
                MaskSpace::Scaled => {
                    if std > 0.0 {
                        mean_abs / std
                    } else {
                        mean_abs
                    }
                }
            };
            let corrected = match cfg.mode {
                BuildMode::Nonlinear => true,
                BuildMode::MultiFidelity => metric > cfg.mask_threshold,
            };
            ChannelStat {
                name: names.get(r).cloned().unwrap_or_else(|| format!("target{r}")),
                mean_abs_residual: mean_abs,
                target_std: std,
                mask_metric: metric,
                corrected,
            }
        })
        .collect()
}

/// Splits `n_s` over bins in proportion to their sizes (largest remainder),
/// giving every non-empty bin at least one sample.
fn allocate(sizes: &[usize], n_s: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| (s * n_s / total.max(1)).min(s)).collect();
    for (a, &s) in alloc.iter_mut().zip(sizes) {
        if s > 0 && *a == 0 {
            *a = 1;
        }
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((sizes[i] * n_s) % total.max(1)));
    let mut assigned: usize = alloc.iter().sum();
    for &i in order.iter().cycle().take(sizes.len() * 4) {
        if assigned >= n_s {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            assigned += 1;
        }
    }
    alloc
}

fn cluster(
    inputs: &DMatrix<f64>,
    residuals: &DMatrix<f64>,
    sched: Option<&[f64]>,
    cfg: &DfsmConfig,
    seed: u64,
) -> Result<SampleSet> {
    let n_s = cfg.n_samples.min(inputs.ncols()).max(1);
    let bins = match (cfg.cluster_per_bin, &cfg.lpv_grid, sched) {
        (true, Some(grid), Some(_)) if grid.len() > 1 => grid,
        _ => return kmeans_subsample(inputs, residuals, n_s, seed, cfg.kmeans_max_iter, cfg.kmeans_restarts),
    };
    let w = sched.expect("matched above");
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    for (c, &wc) in w.iter().enumerate() {
        let b = (0..bins.len())
            .min_by(|&a, &b| (wc - bins[a]).abs().total_cmp(&(wc - bins[b]).abs()))
            .expect("non-empty grid");
        members[b].push(c);
    }
    let alloc = allocate(&members.iter().map(Vec::len).collect::<Vec<_>>(), n_s);
    let mut centers = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    let mut assignment = vec![0; inputs.ncols()];
    let mut inertia = 0.0;
    for (b, cols) in members.iter().enumerate() {
        if cols.is_empty() {
            continue;
        }
        let s = kmeans_subsample(
            &crate::mat::select_columns(inputs, cols),
            &crate::mat::select_columns(residuals, cols),
            alloc[b],
            seed.wrapping_add(b as u64),
            cfg.kmeans_max_iter,
            cfg.kmeans_restarts,
        )?;
        let offset = weights.len();
        for (k, &c) in cols.iter().enumerate() {
            assignment[c] = offset + s.assignment[k];
        }
        centers.push(s.centers);
        targets.push(s.targets);
        weights.extend(s.weights);
        inertia += s.inertia;
    }
    let hcat = |blocks: &[DMatrix<f64>]| {
        let rows = blocks[0].nrows();
        let cols = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for b in blocks {
            out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
            c0 += b.ncols();
        }
        out
    };
    Ok(SampleSet {
        centers: hcat(&centers),
        targets: hcat(&targets),
        weights,
        assignment,
        inertia,
    })
}

/// Mean of `residuals` columns per cluster of an existing assignment.
fn regroup(samples: &SampleSet, residuals: &DMatrix<f64>) -> SampleSet {
    let k = samples.weights.len();
    let mut targets = DMatrix::zeros(residuals.nrows(), k);
    for (c, &a) in samples.assignment.iter().enumerate() {
        let mut col = targets.column_mut(a);
        col += residuals.column(c);
    }
    for (j, &w) in samples.weights.iter().enumerate() {
        targets.column_mut(j).unscale_mut(w.max(1) as f64);
    }
    SampleSet {
        targets,
        ..samples.clone()
    }
}

fn train_nets(samples: &SampleSet, channels: &[usize], cfg: &DfsmConfig) -> Result<Vec<ChannelNet>> {
    let max = cfg.rbf.max_neurons.map(|m| m.min(samples.centers.ncols()));
    let opts = RbfOptions {
        max_neurons: max,
        ..cfg.rbf
    };
    channels
        .par_iter()
        .enumerate()
        .map(|(row, &channel)| {
            let target = samples.targets.rows(row, 1).into_owned();
            Ok(ChannelNet {
                channel,
                net: train_rbf(&samples.centers, &target, &opts)?,
            })
        })
        .collect()
}

struct Stage {
    linear: LinearPart,
    residuals: DMatrix<f64>,
    stats: Vec<ChannelStat>,
}

fn fit_stage(ds: &DerivativeDataset, targets: &DMatrix<f64>, names: &[String], cfg: &DfsmConfig) -> Result<Stage> {
    let lin_inputs = ds.linear_inputs().into_owned();
    let sched = ds.sched();
    let layout = InputLayout {
        sched: false,
        ..ds.layout
    };
    let linear = match (cfg.mode, &cfg.lpv_grid) {
        (BuildMode::Nonlinear, _) => LinearPart::Fixed(LinearFitModel::zeros(
            targets.nrows(),
            layout.n_controls,
            layout.n_states,
        )),
        (BuildMode::MultiFidelity, None) => LinearPart::Fixed(fit_linear(&lin_inputs, targets, layout)?),
        (BuildMode::MultiFidelity, Some(grid)) => LinearPart::Lpv(fit_lpv(
            &lin_inputs,
            sched.as_deref().expect("LPV datasets carry scheduling values"),
            targets,
            layout,
            grid,
            cfg.lpv_window,
        )?),
    };
    let residuals = residual_error(&lin_inputs, sched.as_deref(), targets, &linear)?;
    let stats = channel_stats(names, &residuals, targets, cfg);
    Ok(Stage {
        linear,
        residuals,
        stats,
    })
}

fn masked_rows(e: &DMatrix<f64>, channels: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(channels.len(), e.ncols(), |r, c| e[(channels[r], c)])
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Builds a surrogate from training trajectories.
pub fn build_dfsm(trajectories: &[Trajectory], cfg: &DfsmConfig) -> Result<DfsmModel> {
    let t_total = Instant::now();
    let first = trajectories
        .first()
        .ok_or_else(|| Error::invalid("no training trajectories"))?;
    let lpv = cfg.lpv_grid.is_some();
    if lpv && trajectories.iter().any(|t| t.sched().is_none()) {
        return Err(Error::invalid(
            "an LPV build needs a scheduling channel in every trajectory",
        ));
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let derivs = trajectories
        .par_iter()
        .map(extract_state_derivatives)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("derivatives"))?;
    let ds = assemble(trajectories, &derivs, lpv).map_err(|e| e.in_stage("assemble"))?;
    timings.derivatives = secs(t);

    let names = first.names().clone();
    let t = Instant::now();
    let stage = fit_stage(&ds, &ds.state_derivs, &names.states, cfg).map_err(|e| e.in_stage("linear-fit"))?;
    timings.linear_fit = secs(t);

    let t = Instant::now();
    let channels: Vec<usize> = (0..stage.stats.len()).filter(|&c| stage.stats[c].corrected).collect();
    let residuals = masked_rows(&stage.residuals, &channels);
    timings.residuals = secs(t);

    let sched = ds.sched();
    let mut samples = None;
    let mut nets = Vec::new();
    if !channels.is_empty() {
        let t = Instant::now();
        let s =
            cluster(&ds.inputs, &residuals, sched.as_deref(), cfg, cfg.seed).map_err(|e| e.in_stage("subsample"))?;
        timings.subsample = secs(t);
        let t = Instant::now();
        nets = train_nets(&s, &channels, cfg).map_err(|e| e.in_stage("error-net"))?;
        timings.error_nets = secs(t);
        samples = Some(s);
    }
    let derivs_surrogate = Surrogate {
        linear: stage.linear,
        mask: stage.stats.iter().map(|s| s.corrected).collect(),
        nets,
    };

    let t = Instant::now();
    let mut output_stats = Vec::new();
    let mut n_output_samples = 0;
    let outputs = if cfg.output_surrogate && first.n_outputs() > 0 {
        let out = fit_stage(&ds, &ds.outputs, &names.outputs, cfg).map_err(|e| e.in_stage("output-surrogate"))?;
        let ch: Vec<usize> = (0..out.stats.len()).filter(|&c| out.stats[c].corrected).collect();
        let mut onets = Vec::new();
        if !ch.is_empty() {
            let res = masked_rows(&out.residuals, &ch);
            let s = match (&samples, cfg.share_output_clustering) {
                (Some(s), true) => regroup(s, &res),
                _ => cluster(&ds.inputs, &res, sched.as_deref(), cfg, cfg.seed.wrapping_add(1))
                    .map_err(|e| e.in_stage("output-surrogate"))?,
            };
            n_output_samples = s.weights.len();
            onets = train_nets(&s, &ch, cfg).map_err(|e| e.in_stage("output-surrogate"))?;
        }
        output_stats = out.stats.clone();
        Some(Surrogate {
            linear: out.linear,
            mask: out.stats.iter().map(|s| s.corrected).collect(),
            nets: onets,
        })
    } else {
        None
    };
    timings.output_surrogate = secs(t);
    timings.total = secs(t_total);

    let rank_deficient = match &derivs_surrogate.linear {
        LinearPart::Fixed(m) => m.rank_deficient,
        LinearPart::Lpv(m) => m.models.iter().any(|g| g.rank_deficient),
    };
    let report = BuildReport {
        n_trajectories: trajectories.len(),
        n_columns: ds.n_columns(),
        state_channels: stage.stats,
        output_channels: output_stats,
        n_samples: samples.as_ref().map_or(0, |s| s.weights.len()),
        n_output_samples,
        linear_rank_deficient: rank_deficient && cfg.mode == BuildMode::MultiFidelity,
    };
    Ok(DfsmModel {
        layout: ds.layout,
        names,
        mode: cfg.mode,
        derivs: derivs_surrogate,
        outputs,
        report,
        timings,
    })
}

impl DfsmModel {
    pub fn n_states(&self) -> usize {
        self.layout.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.layout.n_controls
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.as_ref().map_or(0, Surrogate::n_targets)
    }

    pub fn is_lpv(&self) -> bool {
        self.layout.sched
    }

    pub fn channel_mask(&self) -> &[bool] {
        &self.derivs.mask
    }

    fn stack(&self, u: &[f64], x: &[f64], w: Option<f64>) -> Result<(Vec<f64>, Option<f64>)> {
        check_len("control vector", self.layout.n_controls, u.len())?;
        check_len("state vector", self.layout.n_states, x.len())?;
        let mut input = Vec::with_capacity(self.layout.n_rows());
        input.extend_from_slice(u);
        input.extend_from_slice(x);
        if self.layout.sched {
            let w = w.ok_or_else(|| Error::invalid("this model is scheduled and needs w"))?;
            if !w.is_finite() {
                return Err(Error::invalid("scheduling value must be finite"));
            }
            input.push(w);
            Ok((input, Some(w)))
        } else {
            Ok((input, None))
        }
    }

    pub fn eval_into(&self, u: &[f64], x: &[f64], w: Option<f64>, dx: &mut [f64]) -> Result<()> {
        let (input, w) = self.stack(u, x, w)?;
        self.derivs.eval_into(&input, w, dx)
    }

    pub fn outputs_into(&self, u: &[f64], x: &[f64], w: Option<f64>, y: &mut [f64]) -> Result<()> {
        let out = self
            .outputs
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no output surrogate"))?;
        let (input, w) = self.stack(u, x, w)?;
        out.eval_into(&input, w, y)
    }

    /// Analytic Jacobians of the derivative and output surrogates.
    pub fn jacobians(&self, u: &[f64], x: &[f64], w: Option<f64>) -> Result<Jacobians> {
        let (input, w) = self.stack(u, x, w)?;
        let nu = self.layout.n_controls;
        let nx = self.layout.n_states;
        let split = |j: DMatrix<f64>| (j.columns(nu, nx).into_owned(), j.columns(0, nu).into_owned());
        let (fx, fu) = split(self.derivs.jacobian(&input, w)?);
        let (gx, gu) = match &self.outputs {
            Some(o) => split(o.jacobian(&input, w)?),
            None => (DMatrix::zeros(0, nx), DMatrix::zeros(0, nu)),
        };
        Ok(Jacobians { fx, fu, gx, gu })
    }

    /// The same model with every error network removed (`f̂_L`, `ĝ_L`).
    pub fn linear_only(&self) -> DfsmModel {
        DfsmModel {
            derivs: self.derivs.without_corrections(),
            outputs: self.outputs.as_ref().map(Surrogate::without_corrections),
            ..self.clone()
        }
    }
}

pub fn eval_dfsm(model: &DfsmModel, u: &[f64], x: &[f64], w: Option<f64>) -> Result<Vec<f64>> {
    let mut dx = vec![0.0; model.n_states()];
    model.eval_into(u, x, w, &mut dx)?;
    Ok(dx)
}

pub fn eval_outputs(model: &DfsmModel, u: &[f64], x: &[f64], w: Option<f64>) -> Result<Vec<f64>> {
    let mut y = vec![0.0; model.n_outputs()];
    model.outputs_into(u, x, w, &mut y)?;
    Ok(y)
}

impl StateSpaceSystem for DfsmModel {
    fn n_states(&self) -> usize {
        self.layout.n_states
    }
    fn n_controls(&self) -> usize {
        self.layout.n_controls
    }
    fn n_outputs(&self) -> usize {
        DfsmModel::n_outputs(self)
    }
    fn n_params(&self) -> usize {
        usize::from(self.layout.sched)
    }

    fn deriv(&self, x: &[f64], u: &[f64], w: &[f64], dx: &mut [f64]) -> Result<()> {
        self.eval_into(u, x, w.first().copied(), dx)
    }

    fn output(&self, x: &[f64], u: &[f64], w: &[f64], y: &mut [f64]) -> Result<()> {
        if self.outputs.is_some() {
            self.outputs_into(u, x, w.first().copied(), y)?;
        }
        Ok(())
    }

    fn channel_names(&self) -> ChannelNames {
        let mut names = self.names.clone();
        if self.outputs.is_none() {
            names.outputs.clear();
        }
        if !self.layout.sched {
            names.sched = None;
        } else if names.sched.is_none() {
            names.sched = Some("w".into());
        }
        names
    }

    fn analytic_jacobians(&self, x: &[f64], u: &[f64], w: &[f64]) -> Option<Result<Jacobians>> {
        Some(self.jacobians(u, x, w.first().copied()))
    }
}

/// RK4 simulation with the surrogate as the derivative function.
pub fn simulate_dfsm(
    model: &DfsmModel,
    x0: &[f64],
    u: &ControlSignal,
    w: &ParamInput,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    dynsys::simulate(model, x0, u, w, t_final, dt)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    mode: BuildMode,
    layout: InputLayout,
    names: ChannelNames,
    state_mask: Vec<bool>,
    output_mask: Option<Vec<bool>>,
    files: Vec<String>,
}

const LINEAR_FILE: &str = "linear.json";
const NETS_FILE: &str = "error_nets.json";
const OUT_LINEAR_FILE: &str = "output_linear.json";
const OUT_NETS_FILE: &str = "output_error_nets.json";
const REPORT_FILE: &str = "build_report.json";
const TIMINGS_FILE: &str = "build_timings.json";
const MANIFEST_FILE: &str = "manifest.json";

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes a model bundle directory. All files except the timings file are
/// deterministic functions of the model.
pub fn save_bundle(model: &DfsmModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![LINEAR_FILE.to_string(), NETS_FILE.to_string()];
    write_json(dir, LINEAR_FILE, &model.derivs.linear)?;
    write_json(dir, NETS_FILE, &model.derivs.nets)?;
    if let Some(o) = &model.outputs {
        write_json(dir, OUT_LINEAR_FILE, &o.linear)?;
        write_json(dir, OUT_NETS_FILE, &o.nets)?;
        files.push(OUT_LINEAR_FILE.into());
        files.push(OUT_NETS_FILE.into());
    }
    write_json(dir, REPORT_FILE, &model.report)?;
    write_json(dir, TIMINGS_FILE, &model.timings)?;
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        mode: model.mode,
        layout: model.layout,
        names: model.names.clone(),
        state_mask: model.derivs.mask.clone(),
        output_mask: model.outputs.as_ref().map(|o| o.mask.clone()),
        files,
    };
    write_json(dir, MANIFEST_FILE, &manifest)
}

fn check_surrogate(s: &Surrogate, layout: &InputLayout, what: &'static str) -> Result<()> {
    check_len(what, layout.n_linear(), s.linear.n_inputs())?;
    check_len(what, s.mask.len(), s.linear.n_targets())?;
    for cn in &s.nets {
        if cn.channel >= s.mask.len() || !s.mask[cn.channel] {
            return Err(Error::invalid(format!(
                "{what}: network for unmasked channel {}",
                cn.channel
            )));
        }
        check_len(what, layout.n_rows(), cn.net.n_inputs())?;
    }
    let covered = s
        .mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .all(|(c, _)| s.nets.iter().any(|n| n.channel == c));
    if !covered {
        return Err(Error::invalid(format!("{what}: masked channel without a network")));
    }
    Ok(())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DfsmModel> {
    let dir = dir.as_ref();
    let manifest: Manifest = read_json(dir, MANIFEST_FILE)?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(Error::Config {
            path: dir.join(MANIFEST_FILE).display().to_string(),
            message: format!("unsupported bundle format `{}`", manifest.format),
        });
    }
    let derivs = Surrogate {
        linear: read_json(dir, LINEAR_FILE)?,
        nets: read_json(dir, NETS_FILE)?,
        mask: manifest.state_mask,
    };
    check_surrogate(&derivs, &manifest.layout, "state-derivative surrogate")?;
    check_len(
        "state-derivative surrogate",
        manifest.layout.n_states,
        derivs.n_targets(),
    )?;
    if derivs.linear.is_lpv() != manifest.layout.sched {
        return Err(Error::invalid("bundle layout and linear part disagree on scheduling"));
    }
    let outputs = match manifest.output_mask {
        Some(mask) => {
            let s = Surrogate {
                linear: read_json(dir, OUT_LINEAR_FILE)?,
                nets: read_json(dir, OUT_NETS_FILE)?,
                mask,
            };
            check_surrogate(&s, &manifest.layout, "output surrogate")?;
            Some(s)
        }
        None => None,
    };
    let report = read_json(dir, REPORT_FILE).unwrap_or_default();
    let timings = read_json(dir, TIMINGS_FILE).unwrap_or_default();
    Ok(DfsmModel {
        layout: manifest.layout,
        names: manifest.names,
        mode: manifest.mode,
        derivs,
        outputs,
        report,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{generate_random_controls, Interpolation, LinearSystem};

    pub(crate) fn linear_truth() -> LinearSystem {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -2.0, -0.4, 0.3, 0.1, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, -1.0]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 2.0]);
        let d = DMatrix::from_row_slice(1, 2, &[0.0, 0.3]);
        LinearSystem::new(a, b, c, d).unwrap()
    }

    fn linear_data(n: usize) -> Vec<Trajectory> {
        let sys = linear_truth();
        (0..n)
            .map(|i| {
                // two knots keep the controls smooth, so spline error stays below the mask threshold
                let u = generate_random_controls(
                    &[(-1.0, 1.0), (-1.0, 1.0)],
                    2,
                    2.0,
                    Interpolation::PiecewiseLinear,
                    i as u64,
                )
                .unwrap();
                let x0 = [0.1 * i as f64, -0.2, 0.05 * i as f64];
                dynsys::simulate(&sys, &x0, &u, &ParamInput::None, 2.0, 0.01).unwrap()
            })
            .collect()
    }

    #[test]
    fn linear_truth_gives_empty_mask() {
        let model = build_dfsm(&linear_data(6), &DfsmConfig::default()).unwrap();
        assert!(model.derivs.mask.iter().all(|m| !m));
        assert!(model.derivs.nets.is_empty());
        assert_eq!(model.timings.error_nets, 0.0);
        let out = model.outputs.as_ref().unwrap();
        assert!(out.mask.iter().all(|m| !m));
        let LinearPart::Fixed(l) = &out.linear else { panic!() };
        let expected = DMatrix::from_row_slice(1, 5, &[0.0, 0.3, 1.0, 0.0, 2.0]);
        assert!((l.l.clone() - expected).amax() <= 1e-8);
    }

    #[test]
    fn nonlinear_mode_corrects_everything() {
        let cfg = DfsmConfig {
            mode: BuildMode::Nonlinear,
            n_samples: 60,
            kmeans_restarts: 2,
            ..DfsmConfig::default()
        };
        let model = build_dfsm(&linear_data(3), &cfg).unwrap();
        assert!(model.derivs.mask.iter().all(|m| *m));
        assert_eq!(model.derivs.nets.len(), 3);
        let LinearPart::Fixed(l) = &model.derivs.linear else {
            panic!()
        };
        assert_eq!(l.l.amax(), 0.0);
    }

    #[test]
    fn missing_output_surrogate_is_an_error() {
        let cfg = DfsmConfig {
            output_surrogate: false,
            ..DfsmConfig::default()
        };
        let model = build_dfsm(&linear_data(3), &cfg).unwrap();
        assert!(eval_outputs(&model, &[0.0, 0.0], &[0.0; 3], None).is_err());
    }

    #[test]
    fn lpv_model_requires_w() {
        let mut trajs = linear_data(3);
        trajs = trajs
            .into_iter()
            .map(|t| {
                let n = t.len();
                Trajectory::new(
                    t.times().to_vec(),
                    t.controls().clone(),
                    t.states().clone(),
                    t.outputs().clone(),
                    Some((0..n).map(|k| 5.0 + 10.0 * k as f64 / n as f64).collect()),
                )
                .unwrap()
            })
            .collect();
        let cfg = DfsmConfig {
            lpv_grid: Some(vec![6.0, 10.0, 14.0]),
            ..DfsmConfig::default()
        };
        let model = build_dfsm(&trajs, &cfg).unwrap();
        assert!(eval_dfsm(&model, &[0.0, 0.0], &[0.0; 3], None).is_err());
        assert!(eval_dfsm(&model, &[0.0, 0.0], &[0.0; 3], Some(8.0)).is_ok());
    }

    #[test]
    fn allocation_sums_to_budget() {
        assert_eq!(allocate(&[10, 30, 60], 10), vec![1, 3, 6]);
        let a = allocate(&[5, 1, 100], 20);
        assert_eq!(a.iter().sum::<usize>(), 20);
        assert!(a[1] == 1);
    }

    #[test]
    fn build_without_trajectories_fails() {
        assert!(build_dfsm(&[], &DfsmConfig::default()).is_err());
    }
}
