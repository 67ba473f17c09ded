//! Open-loop optimal control by direct transcription.
//!
//! States and controls at every node are decision variables. Dynamics are
//! enforced by trapezoidal defect equalities, output bounds by node-wise
//! inequalities, and both are handled by an augmented-Lagrangian outer loop
//! around a projected L-BFGS inner solver.

mod band;
mod lbfgsb;
mod problem_file;
mod transcribe;

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use lbfgsb::{minimize_box, minimize_box_preconditioned, BoxOptions, BoxResult, Preconditioner};

pub use problem_file::{load_problem, BoundsSpec, ObjectiveSpec, PowerSpec, ProblemFile, WindSpec};
pub use transcribe::{transcribe, NodeEval, Transcription};

use crate::dynsys::{ControlSignal, Interpolation, ParamInput, StateSpaceSystem};
use crate::error::{check_len, Error, Result};
use crate::trajdata::Trajectory;

/// Generation power `η·τ_g·ω_g`, entering the objective with a minus sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTerm {
    pub efficiency: f64,
    /// Control index of the generator torque.
    pub torque: usize,
    /// State index of the generator speed.
    pub speed: usize,
}

/// Integrand `−p_g + Σ_j w_j u_j²`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub control_weights: Vec<f64>,
    pub power: Option<PowerTerm>,
}

impl Objective {
    pub fn integrand(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut v: f64 = self.control_weights.iter().zip(u).map(|(w, u)| w * u * u).sum();
        if let Some(p) = &self.power {
            v -= p.efficiency * u[p.torque] * x[p.speed];
        }
        v
    }

    fn add_gradient(&self, x: &[f64], u: &[f64], scale: f64, gx: &mut [f64], gu: &mut [f64]) {
        for (j, w) in self.control_weights.iter().enumerate() {
            gu[j] += scale * 2.0 * w * u[j];
        }
        if let Some(p) = &self.power {
            gu[p.torque] -= scale * p.efficiency * x[p.speed];
            gx[p.speed] -= scale * p.efficiency * u[p.torque];
        }
    }
}

pub type Bounds = Vec<(f64, f64)>;

pub fn unbounded(n: usize) -> Bounds {
    vec![(f64::NEG_INFINITY, f64::INFINITY); n]
}

pub struct OcpProblem<'a> {
    pub system: &'a dyn StateSpaceSystem,
    pub t0: f64,
    pub tf: f64,
    pub n_t: usize,
    pub x0: Vec<f64>,
    pub state_bounds: Bounds,
    pub control_bounds: Bounds,
    /// Node-wise output bounds; empty means none.
    pub output_bounds: Bounds,
    /// Extra bounds on the final state.
    pub terminal_bounds: Option<Bounds>,
    pub objective: Objective,
    /// Exogenous scheduling input, evaluated at absolute time.
    pub wind: ParamInput,
}

fn check_bounds(what: &'static str, expected: usize, b: &Bounds) -> Result<()> {
    check_len(what, expected, b.len())?;
    for &(lo, hi) in b {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!("{what}: bad interval [{lo}, {hi}]")));
        }
    }
    Ok(())
}

impl<'a> OcpProblem<'a> {
    /// Unbounded problem with a zero objective.
    pub fn new(system: &'a dyn StateSpaceSystem, x0: Vec<f64>, tf: f64, n_t: usize) -> Self {
        OcpProblem {
            system,
            t0: 0.0,
            tf,
            n_t,
            x0,
            state_bounds: unbounded(system.n_states()),
            control_bounds: unbounded(system.n_controls()),
            output_bounds: Vec::new(),
            terminal_bounds: None,
            objective: Objective {
                control_weights: vec![0.0; system.n_controls()],
                power: None,
            },
            wind: ParamInput::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.system;
        if self.n_t < 2 {
            return Err(Error::invalid("the grid needs at least two nodes"));
        }
        if !(self.tf > self.t0) || !self.t0.is_finite() || !self.tf.is_finite() {
            return Err(Error::invalid(format!("bad horizon [{}, {}]", self.t0, self.tf)));
        }
        check_len("initial state", sys.n_states(), self.x0.len())?;
        check_bounds("state bounds", sys.n_states(), &self.state_bounds)?;
        check_bounds("control bounds", sys.n_controls(), &self.control_bounds)?;
        if !self.output_bounds.is_empty() {
            check_bounds("output bounds", sys.n_outputs(), &self.output_bounds)?;
        }
        if let Some(tb) = &self.terminal_bounds {
            check_bounds("terminal bounds", sys.n_states(), tb)?;
        }
        for (i, (&x, &(lo, hi))) in self.x0.iter().zip(&self.state_bounds).enumerate() {
            if !(lo..=hi).contains(&x) {
                return Err(Error::invalid(format!(
                    "initial state {i} = {x} is outside [{lo}, {hi}]"
                )));
            }
        }
        check_len(
            "objective control weights",
            sys.n_controls(),
            self.objective.control_weights.len(),
        )?;
        if let Some(p) = &self.objective.power {
            if p.torque >= sys.n_controls() || p.speed >= sys.n_states() {
                return Err(Error::invalid("power term refers to a missing channel"));
            }
        }
        check_len("scheduling channels", sys.n_params(), self.wind.dim())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Central differences on the model at each node.
    #[default]
    FiniteDifference,
    /// Model-supplied Jacobians (linear plus RBF), with differences as fallback.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub optimality_tol: f64,
    pub feasibility_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub fd_step: f64,
    pub gradient: GradientMode,
    pub initial_penalty: f64,
    /// One progress line per outer iteration on stderr.
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            optimality_tol: 1e-7,
            feasibility_tol: 1e-7,
            max_outer: 40,
            max_inner: 2000,
            fd_step: 1e-6,
            gradient: GradientMode::FiniteDifference,
            initial_penalty: 10.0,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub trajectory: Trajectory,
    pub objective: f64,
    /// `∫ η τ_g ω_g dt` when the objective has a power term.
    pub power_integral: Option<f64>,
    pub max_defect: f64,
    pub max_bound_violation: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

/// Scaled augmented-Lagrangian state.
struct Scaling {
    /// Per decision variable.
    var: Vec<f64>,
    /// Per defect row.
    defect: Vec<f64>,
    objective: f64,
}

fn scaling(tr: &Transcription, z0: &[f64], j0: f64) -> Scaling {
    let var: Vec<f64> = (0..tr.n_vars())
        .map(|i| {
            let (lo, hi) = (tr.lower[i], tr.upper[i]);
            if lo.is_finite() && hi.is_finite() && hi > lo {
                hi - lo
            } else {
                z0[i].abs().max(1.0)
            }
        })
        .collect();
    // defect rows share their state's scale taken at the second node
    let defect = (0..tr.n_defects()).map(|r| var[tr.n_x + r % tr.n_x]).collect();
    Scaling {
        var,
        defect,
        objective: 1.0 / j0.abs().max(1.0),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_pos(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(*x))
}

/// Node values and active path rows of the latest merit evaluation.
type MeritPoint = (Vec<f64>, Vec<NodeEval>, Vec<f64>);

const INITIAL_DAMPING: f64 = 1e-3;
const MIN_DAMPING: f64 = 1e-8;
const MAX_DAMPING: f64 = 1e8;

/// Banded Gauss-Newton approximation of the merit Hessian with
/// Levenberg-Marquardt damping. The matrix is singular along directions
/// that keep the defects unchanged, so the damping bounds those steps; it
/// shrinks after full steps and grows when the line search backtracks.
struct GaussNewton<'a> {
    tr: &'a Transcription<'a, 'a>,
    last: &'a RefCell<Option<MeritPoint>>,
    defect_w: Vec<f64>,
    objective_scale: f64,
    var_scale: &'a [f64],
    damping: &'a mut f64,
}

impl Preconditioner for GaussNewton<'_> {
    fn apply(&mut self, zeta: &[f64], free: &[bool], v: &mut [f64]) -> Result<bool> {
        let cached = self.last.borrow();
        let Some((_, nodes, active)) = cached.as_ref().filter(|(at, ..)| at.as_slice() == zeta) else {
            return Ok(false);
        };
        let tr = self.tr;
        let mut band = tr.gauss_newton(nodes, &self.defect_w, active, self.objective_scale, self.var_scale);
        let n = tr.n_vars();
        let pos: Vec<usize> = (0..n).map(|i| tr.band_index(i)).collect();
        let mut max_diag = 0.0_f64;
        for i in 0..n {
            if free[i] {
                max_diag = max_diag.max(band.get(pos[i], pos[i]));
            }
        }
        let floor = 1e-8 * max_diag + 1e-300;
        for i in 0..n {
            if free[i] {
                let d = band.get(pos[i], pos[i]);
                band.add(pos[i], pos[i], *self.damping * d.max(floor) + 1e-10 * max_diag);
            } else {
                band.isolate(pos[i]);
            }
        }
        if !band.cholesky() {
            return Ok(false);
        }
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[pos[i]] = if free[i] { v[i] } else { 0.0 };
        }
        band.solve(&mut b);
        for i in 0..n {
            v[i] = if free[i] { b[pos[i]] } else { 0.0 };
        }
        Ok(true)
    }

    fn step_accepted(&mut self, alpha: f64) {
        let d = &mut *self.damping;
        *d = if alpha >= 1.0 {
            *d / 4.0
        } else if alpha >= 0.25 {
            *d
        } else {
            *d * 4.0 / alpha.max(1e-6)
        }
        .clamp(MIN_DAMPING, MAX_DAMPING);
    }
}

/// Solves the transcribed problem. Running out of iterations is not an
/// error: the best iterate is returned with `converged = false`.
pub fn solve(problem: &OcpProblem, opts: &SolveOptions) -> Result<OcpSolution> {
    let start = Instant::now();
    let tr = transcribe(problem)?;
    let z0 = tr.initial_guess();
    let sc = scaling(&tr, &z0, tr.objective(&z0));
    let lo: Vec<f64> = tr.lower.iter().zip(&sc.var).map(|(l, d)| l / d).collect();
    let hi: Vec<f64> = tr.upper.iter().zip(&sc.var).map(|(u, d)| u / d).collect();
    let mut zeta: Vec<f64> = z0.iter().zip(&sc.var).map(|(z, d)| z / d).collect();
    let grads = Some((opts.gradient, opts.fd_step));
    let unscale = |zeta: &[f64]| -> Vec<f64> { zeta.iter().zip(&sc.var).map(|(v, d)| v * d).collect() };

    let mut lambda = vec![0.0; tr.n_defects()];
    let mut mu = vec![0.0; tr.n_path()];
    let mut rho = opts.initial_penalty;
    let mut prev_violation = f64::INFINITY;
    let mut inner_tol = 1e-2_f64.max(opts.optimality_tol);
    let mut iterations = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut z = z0;
    let mut damping = INITIAL_DAMPING;

    while outer < opts.max_outer {
        outer += 1;
        // node values of the latest merit evaluation, reused by the preconditioner
        let last: RefCell<Option<MeritPoint>> = RefCell::new(None);
        let merit = |zeta: &[f64], grad: &mut [f64]| -> Result<f64> {
            let z = unscale(zeta);
            let nodes = tr.eval_nodes(&z, grads)?;
            let c = tr.defects(&z, &nodes);
            let g = tr.path_constraints(&nodes);
            let mut value = sc.objective * tr.objective(&z);
            let mut vc = vec![0.0; c.len()];
            for r in 0..c.len() {
                let cs = c[r] / sc.defect[r];
                value += lambda[r] * cs + 0.5 * rho * cs * cs;
                vc[r] = (lambda[r] + rho * cs) / sc.defect[r];
            }
            let mut vg = vec![0.0; g.len()];
            let mut active = vec![0.0; g.len()];
            for r in 0..g.len() {
                let m = (mu[r] + rho * g[r]).max(0.0);
                value += (m * m - mu[r] * mu[r]) / (2.0 * rho);
                vg[r] = m;
                active[r] = if m > 0.0 { rho } else { 0.0 };
            }
            tr.objective_gradient(&z, grad);
            grad.iter_mut().for_each(|v| *v *= sc.objective);
            tr.add_defect_vjp(&nodes, &vc, grad);
            tr.add_path_vjp(&nodes, &vg, grad);
            for (gi, d) in grad.iter_mut().zip(&sc.var) {
                *gi *= d;
            }
            *last.borrow_mut() = Some((zeta.to_vec(), nodes, active));
            Ok(value)
        };
        let mut precond = GaussNewton {
            tr: &tr,
            last: &last,
            defect_w: sc.defect.iter().map(|s| rho / (s * s)).collect(),
            objective_scale: sc.objective,
            var_scale: &sc.var,
            damping: &mut damping,
        };
        let inner = BoxOptions {
            max_iter: opts.max_inner,
            tol: inner_tol,
            memory: 0,
        };
        let res = minimize_box_preconditioned(
            merit,
            Some(&mut precond as &mut dyn Preconditioner),
            &zeta,
            &lo,
            &hi,
            &inner,
        )?;
        iterations += res.iterations;
        zeta = res.x;
        z = unscale(&zeta);

        let nodes = tr.eval_nodes(&z, None)?;
        let c = tr.defects(&z, &nodes);
        let g = tr.path_constraints(&nodes);
        let violation = max_abs(&c).max(max_pos(&g));
        if opts.verbose {
            eprintln!(
                "outer {outer:3} rho {rho:8.1e} inner {:5} pg {:9.3e} violation {violation:9.3e} objective {}",
                res.iterations,
                res.pg_norm,
                tr.objective(&z)
            );
        }
        if violation <= opts.feasibility_tol && res.converged && inner_tol <= opts.optimality_tol {
            converged = true;
            break;
        }
        for r in 0..c.len() {
            lambda[r] += rho * c[r] / sc.defect[r];
        }
        for r in 0..g.len() {
            mu[r] = (mu[r] + rho * g[r]).max(0.0);
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * 10.0).min(1e12);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.1).max(opts.optimality_tol);
    }

    finish(problem, &tr, &z, iterations, outer, converged, start)
}

fn finish(
    problem: &OcpProblem,
    tr: &Transcription,
    z: &[f64],
    iterations: usize,
    outer_iterations: usize,
    converged: bool,
    start: Instant,
) -> Result<OcpSolution> {
    let nodes = tr.eval_nodes(z, None)?;
    let defects = tr.defects(z, &nodes);
    let path = tr.path_constraints(&nodes);
    let (states, controls) = tr.unpack(z);
    let outputs = DMatrix::from_fn(tr.n_y, tr.n_t, |r, k| nodes[k].y[r]);
    let sched = (problem.system.n_params() == 1).then(|| (0..tr.n_t).map(|k| tr.param(k)[0]).collect());
    let trajectory =
        Trajectory::new(tr.times.clone(), controls, states, outputs, sched)?.with_names(problem.system.channel_names());
    let power_integral = problem.objective.power.map(|p| {
        (0..tr.n_t - 1)
            .map(|k| {
                let pk = |k: usize| p.efficiency * tr.control(z, k)[p.torque] * tr.state(z, k)[p.speed];
                0.5 * (tr.times[k + 1] - tr.times[k]) * (pk(k) + pk(k + 1))
            })
            .sum()
    });
    Ok(OcpSolution {
        trajectory,
        objective: tr.objective(z),
        power_integral,
        max_defect: max_abs(&defects),
        max_bound_violation: tr.bound_violation(z).max(max_pos(&path)),
        iterations,
        outer_iterations,
        converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn find(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::MissingChannel(name.to_string()))
}

/// Trapezoidal quadrature of `−η τ_g ω_g + w₁ τ_g² + w₂ β²` over a
/// trajectory carrying `tau_g`, `beta` (controls) and `omega_g` (state).
pub fn fowt_objective(trajectory: &Trajectory, w1: f64, w2: f64, efficiency: f64) -> Result<f64> {
    let names = trajectory.names();
    let tau = find(&names.controls, "tau_g")?;
    let beta = find(&names.controls, "beta")?;
    let omega = find(&names.states, "omega_g")?;
    let (u, x, t) = (trajectory.controls(), trajectory.states(), trajectory.times());
    let phi =
        |k: usize| -efficiency * u[(tau, k)] * x[(omega, k)] + w1 * u[(tau, k)].powi(2) + w2 * u[(beta, k)].powi(2);
    Ok((0..t.len().saturating_sub(1))
        .map(|k| 0.5 * (t[k + 1] - t[k]) * (phi(k) + phi(k + 1)))
        .sum())
}

/// Re-simulates the system from `x0` under the solution's controls,
/// interpolated linearly between nodes, with `substeps` RK4 steps per
/// interval. The result is on the fine grid, with time measured from `t0`.
pub fn resimulate(problem: &OcpProblem, solution: &OcpSolution, substeps: usize) -> Result<Trajectory> {
    let traj = &solution.trajectory;
    let rel: Vec<f64> = traj.times().iter().map(|t| t - problem.t0).collect();
    let u = ControlSignal::new(rel, traj.controls().clone(), Interpolation::PiecewiseLinear)?;
    let w = match &problem.wind {
        ParamInput::Signal(s) => ParamInput::Signal(ControlSignal::new(
            s.times().iter().map(|t| t - problem.t0).collect(),
            s.values().clone(),
            s.interpolation(),
        )?),
        other => other.clone(),
    };
    let h = (problem.tf - problem.t0) / ((problem.n_t - 1) * substeps.max(1)) as f64;
    crate::dynsys::simulate(problem.system, &problem.x0, &u, &w, problem.tf - problem.t0, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::LinearSystem;
    use proptest::prelude::*;

    fn double_integrator() -> LinearSystem {
        LinearSystem::states_only(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    fn transfer(sys: &LinearSystem, n_t: usize) -> OcpProblem<'_> {
        let mut p = OcpProblem::new(sys, vec![0.0, 0.0], 1.0, n_t);
        p.terminal_bounds = Some(vec![(1.0, 1.0), (0.0, 0.0)]);
        p.objective.control_weights = vec![1.0];
        p
    }

    #[test]
    fn box_solver_finds_bounded_minimum() {
        // Rosenbrock with the optimum cut off by an upper bound
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        };
        let free = minimize_box(f, &[-1.2, 1.0], &[-5.0; 2], &[5.0; 2], &BoxOptions::default()).unwrap();
        assert!(free.converged);
        assert!((free.x[0] - 1.0).abs() < 1e-6 && (free.x[1] - 1.0).abs() < 1e-6);
        let capped = minimize_box(f, &[-1.2, 1.0], &[-5.0; 2], &[0.5, 5.0], &BoxOptions::default()).unwrap();
        assert!(capped.converged);
        assert_eq!(capped.x[0], 0.5);
        assert!((capped.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn zero_dynamics_single_defect() {
        let sys = LinearSystem::states_only(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let p = OcpProblem::new(&sys, vec![0.0, 0.0], 1.0, 2);
        let tr = transcribe(&p).unwrap();
        let z = [0.0, 0.0, 0.3, -0.7, 5.0, 5.0];
        let nodes = tr.eval_nodes(&z, None).unwrap();
        assert_eq!(tr.defects(&z, &nodes), vec![0.3, -0.7]);
    }

    #[test]
    fn constant_trajectory_objective_is_exact() {
        let sys = LinearSystem::states_only(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let mut p = OcpProblem::new(&sys, vec![0.0, 7.0], 3.0, 11);
        p.t0 = 1.0;
        p.objective = Objective {
            control_weights: vec![1e-5, 0.5],
            power: Some(PowerTerm {
                efficiency: 0.99,
                torque: 0,
                speed: 1,
            }),
        };
        let tr = transcribe(&p).unwrap();
        let states = DMatrix::from_fn(2, 11, |r, _| [0.0, 7.0][r]);
        let controls = DMatrix::from_fn(2, 11, |r, _| [19.0, 4.0][r]);
        let z = tr.pack(&states, &controls).unwrap();
        let expected = 2.0 * (-0.99 * 19.0 * 7.0 + 1e-5 * 19.0 * 19.0 + 0.5 * 16.0);
        assert!((tr.objective(&z) - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn truth_trajectory_defects_are_second_order() {
        let sys = LinearSystem::states_only(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.2]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let max_defect = |n_t: usize| {
            let p = OcpProblem::new(&sys, vec![1.0, 0.0], 2.0, n_t);
            let tr = transcribe(&p).unwrap();
            let u = ControlSignal::constant(&[0.5]);
            let truth = crate::dynsys::simulate(&sys, &p.x0, &u, &ParamInput::None, 2.0, tr.h).unwrap();
            let z = tr.pack(truth.states(), truth.controls()).unwrap();
            let nodes = tr.eval_nodes(&z, None).unwrap();
            max_abs(&tr.defects(&z, &nodes))
        };
        let (coarse, fine) = (max_defect(41), max_defect(81));
        assert!(coarse < 1e-2);
        assert!(coarse / fine >= 3.5, "{coarse} / {fine}");
    }

    #[test]
    fn double_integrator_matches_analytic_control() {
        let sys = double_integrator();
        let p = transfer(&sys, 101);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.max_defect <= 1e-6);
        assert!(sol.max_bound_violation <= 1e-8);
        let u = sol.trajectory.controls();
        let t = sol.trajectory.times();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..t.len() {
            let exact = 6.0 - 12.0 * t[k];
            num += (u[(0, k)] - exact).powi(2);
            den += exact * exact;
        }
        assert!((num / den).sqrt() < 0.02);
    }

    #[test]
    fn all_bounds_equal_returns_the_feasible_point() {
        let sys = LinearSystem::states_only(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let mut p = OcpProblem::new(&sys, vec![0.0], 1.0, 5);
        p.control_bounds = vec![(2.0, 2.0)];
        p.terminal_bounds = Some(vec![(2.0, 2.0)]);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.max_defect <= 1e-7);
        let x = sol.trajectory.states();
        for k in 0..5 {
            assert!((x[(0, k)] - 0.5 * k as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn iteration_limit_is_not_an_error() {
        let sys = double_integrator();
        let p = transfer(&sys, 51);
        let opts = SolveOptions {
            max_outer: 1,
            max_inner: 3,
            ..SolveOptions::default()
        };
        let sol = solve(&p, &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.trajectory.len(), 51);
    }

    #[test]
    fn output_bounds_are_enforced_at_nodes() {
        // single integrator pushed up by the objective, capped through y = 2x
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let mut p = OcpProblem::new(&sys, vec![0.0], 2.0, 21);
        p.control_bounds = vec![(-1.0, 1.0)];
        p.output_bounds = vec![(f64::NEG_INFINITY, 1.0)];
        p.objective = Objective {
            control_weights: vec![0.01],
            power: Some(PowerTerm {
                efficiency: 1.0,
                torque: 0,
                speed: 0,
            }),
        };
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert!(sol.max_bound_violation <= 1e-6, "{}", sol.max_bound_violation);
        let y = sol.trajectory.outputs();
        assert!((0..21).all(|k| y[(0, k)] <= 1.0 + 1e-6));
    }

    #[test]
    fn resimulation_agrees_with_defects() {
        // trapezoidal collocation is exact for a single integrator under
        // piecewise-linear controls, so the deviation only reflects defects
        let sys = LinearSystem::states_only(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let mut p = OcpProblem::new(&sys, vec![0.0], 1.0, 21);
        p.terminal_bounds = Some(vec![(1.0, 1.0)]);
        p.objective.control_weights = vec![1.0];
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        let fine = resimulate(&p, &sol, 10).unwrap();
        let end = fine.states()[(0, fine.len() - 1)];
        let dev = (end - sol.trajectory.states()[(0, 20)]).abs();
        assert!(dev <= 10.0 * sol.max_defect.max(f64::EPSILON) * 21.0, "{dev}");
    }

    #[test]
    fn nested_bounds_do_not_improve_the_objective() {
        let sys = double_integrator();
        let solve_with = |umax: f64| {
            let mut p = transfer(&sys, 41);
            p.control_bounds = vec![(-umax, umax)];
            let sol = solve(&p, &SolveOptions::default()).unwrap();
            assert!(sol.converged);
            sol.objective
        };
        let (tight, loose) = (solve_with(5.0), solve_with(8.0));
        assert!(tight >= loose - 1e-7, "{tight} < {loose}");
    }

    #[test]
    fn fowt_objective_examples() {
        let names = crate::trajdata::ChannelNames {
            controls: vec!["tau_g".into(), "beta".into()],
            states: vec!["theta_p".into(), "omega_g".into()],
            outputs: vec![],
            sched: None,
        };
        let make = |tau: f64, beta: f64, omega: f64| {
            Trajectory::new(
                vec![0.0, 0.5, 2.0],
                DMatrix::from_fn(2, 3, |r, _| [tau, beta][r]),
                DMatrix::from_fn(2, 3, |r, _| [1.0, omega][r]),
                DMatrix::zeros(0, 3),
                None,
            )
            .unwrap()
            .with_names(names.clone())
        };
        assert_eq!(fowt_objective(&make(0.0, 0.0, 7.0), 1e-5, 0.5, 0.99).unwrap(), 0.0);
        let j = fowt_objective(&make(19.0, 4.0, 7.0), 1e-5, 0.5, 0.99).unwrap();
        let expected = 2.0 * (-0.99 * 19.0 * 7.0 + 1e-5 * 361.0 + 8.0);
        assert!((j - expected).abs() < 1e-12 * expected.abs());
        assert!(fowt_objective(&make(19.0, 4.0, 7.5), 1e-5, 0.5, 0.99).unwrap() < j);
        let bare = Trajectory::new(
            vec![0.0, 1.0],
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(0, 2),
            None,
        )
        .unwrap();
        assert!(matches!(
            fowt_objective(&bare, 1e-5, 0.5, 0.99),
            Err(Error::MissingChannel(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn merit_gradient_matches_differences(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let robot = crate::dynsys::TwoLinkRobot::default();
            let mut p = OcpProblem::new(&robot, vec![-1.5, 0.0, 0.2, 0.0], 0.5, 6);
            p.objective = Objective {
                control_weights: vec![0.3, 0.7],
                power: Some(PowerTerm { efficiency: 0.9, torque: 1, speed: 3 }),
            };
            let tr = transcribe(&p).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..tr.n_vars()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..tr.n_defects()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let value = |z: &[f64]| {
                let nodes = tr.eval_nodes(z, None).unwrap();
                let c = tr.defects(z, &nodes);
                tr.objective(z) + c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
            };
            let nodes = tr.eval_nodes(&z, Some((GradientMode::Analytic, 1e-6))).unwrap();
            let mut grad = vec![0.0; tr.n_vars()];
            tr.objective_gradient(&z, &mut grad);
            tr.add_defect_vjp(&nodes, &v, &mut grad);
            for i in 0..tr.n_vars() {
                let h = 1e-6;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (value(&zp) - value(&zm)) / (2.0 * h);
                prop_assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", grad[i]);
            }
        }
    }
}
