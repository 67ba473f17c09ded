//! Evaluatable dynamic systems and a fixed-step simulator.
//!
//! A [`StateSpaceSystem`] exposes `ẋ = f(x, u, w)` and `y = g(x, u, w)`,
//! where `w` is an optional vector of exogenous scheduling parameters
//! (wind speed for the turbine fixture). [`simulate`] integrates a system
//! with classical RK4 on a uniform grid.

mod fowt;
mod linear;
mod robot;

pub use fowt::{eval_synthetic_fowt, FowtParams, SyntheticFowt};
pub use linear::LinearSystem;
pub use robot::{eval_two_link_deriv, TwoLinkRobot, STATIONARY_CONTROL, STATIONARY_STATE};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::trajdata::{ChannelNames, Trajectory};

/// Jacobians of the derivative and output maps at one point.
#[derive(Debug, Clone)]
pub struct Jacobians {
    /// ∂f/∂x, n_states × n_states
    pub fx: DMatrix<f64>,
    /// ∂f/∂u, n_states × n_controls
    pub fu: DMatrix<f64>,
    /// ∂g/∂x, n_outputs × n_states
    pub gx: DMatrix<f64>,
    /// ∂g/∂u, n_outputs × n_controls
    pub gu: DMatrix<f64>,
}

pub trait StateSpaceSystem: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_controls(&self) -> usize;
    fn n_outputs(&self) -> usize;

    /// Number of exogenous scheduling parameters.
    fn n_params(&self) -> usize {
        0
    }

    fn deriv(&self, x: &[f64], u: &[f64], w: &[f64], dx: &mut [f64]) -> Result<()>;

    fn output(&self, _x: &[f64], _u: &[f64], _w: &[f64], _y: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn channel_names(&self) -> ChannelNames {
        ChannelNames::generic(
            self.n_controls(),
            self.n_states(),
            self.n_outputs(),
            self.n_params() > 0,
        )
    }

    /// Analytic Jacobians, when the system can provide them.
    fn analytic_jacobians(&self, _x: &[f64], _u: &[f64], _w: &[f64]) -> Option<Result<Jacobians>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    ZeroOrderHold,
    PiecewiseLinear,
}

/// A sampled multi-channel signal over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    times: Vec<f64>,
    values: DMatrix<f64>,
    interpolation: Interpolation,
}

impl ControlSignal {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>, interpolation: Interpolation) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("control signal needs at least one knot"));
        }
        check_len("control signal knots", times.len(), values.ncols())?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("control knot times must be strictly increasing"));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("control signal contains non-finite values"));
        }
        Ok(ControlSignal {
            times,
            values,
            interpolation,
        })
    }

    /// A signal that holds `value` for all time.
    pub fn constant(value: &[f64]) -> Self {
        ControlSignal {
            times: vec![0.0],
            values: DMatrix::from_column_slice(value.len(), 1, value),
            interpolation: Interpolation::ZeroOrderHold,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Evaluates every channel at `t`, holding the end values outside the knot span.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        let tol = 1e-12 * t.abs().max(1.0);
        // index of the last knot <= t
        let k = self.times.partition_point(|&k| k <= t + tol);
        if k == 0 {
            out.copy_from_slice(self.values.column(0).as_slice());
            return;
        }
        let k = k - 1;
        if k + 1 >= n || self.interpolation == Interpolation::ZeroOrderHold {
            out.copy_from_slice(self.values.column(k).as_slice());
            return;
        }
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        for (c, o) in out.iter_mut().enumerate() {
            *o = (1.0 - s) * self.values[(c, k)] + s * self.values[(c, k + 1)];
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_channels()];
        self.eval_into(t, &mut out);
        out
    }
}

/// Exogenous parameter input to a simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ParamInput {
    #[default]
    None,
    Constant(Vec<f64>),
    Signal(ControlSignal),
}

impl ParamInput {
    pub fn dim(&self) -> usize {
        match self {
            ParamInput::None => 0,
            ParamInput::Constant(v) => v.len(),
            ParamInput::Signal(s) => s.n_channels(),
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            ParamInput::None => {}
            ParamInput::Constant(v) => out.copy_from_slice(v),
            ParamInput::Signal(s) => s.eval_into(t, out),
        }
    }
}

/// Number of grid points for a horizon, `⌊t_final/dt⌋ + 1`.
pub fn grid_len(t_final: f64, dt: f64) -> usize {
    // tolerate t_final being an inexact multiple of dt
    (t_final / dt + 1e-9).floor() as usize + 1
}

/// Fixed-step classical RK4 integration on the grid `{0, dt, …}`.
pub fn simulate<S: StateSpaceSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    u: &ControlSignal,
    w: &ParamInput,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if !(t_final >= dt) || !t_final.is_finite() {
        return Err(Error::invalid(format!(
            "t_final = {t_final} must be at least dt = {dt}"
        )));
    }
    let (nx, nu, ny, np) = (
        system.n_states(),
        system.n_controls(),
        system.n_outputs(),
        system.n_params(),
    );
    check_len("initial state", nx, x0.len())?;
    check_len("control channels", nu, u.n_channels())?;
    check_len("parameter channels", np, w.dim())?;
    if np > 1 {
        return Err(Error::invalid("trajectories carry at most one scheduling parameter"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state is not finite"));
    }

    let n = grid_len(t_final, dt);
    let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    let mut states = DMatrix::zeros(nx, n);
    let mut controls = DMatrix::zeros(nu, n);
    let mut outputs = DMatrix::zeros(ny, n);
    let mut sched = if np == 1 { Some(vec![0.0; n]) } else { None };

    let mut x = x0.to_vec();
    let mut uk = vec![0.0; nu];
    let mut wk = vec![0.0; np];
    let mut yk = vec![0.0; ny];
    let mut k1 = vec![0.0; nx];
    let mut k2 = vec![0.0; nx];
    let mut k3 = vec![0.0; nx];
    let mut k4 = vec![0.0; nx];
    let mut tmp = vec![0.0; nx];

    for k in 0..n {
        let t = times[k];
        u.eval_into(t, &mut uk);
        w.eval_into(t, &mut wk);
        system.output(&x, &uk, &wk, &mut yk)?;
        states.column_mut(k).copy_from_slice(&x);
        controls.column_mut(k).copy_from_slice(&uk);
        outputs.column_mut(k).copy_from_slice(&yk);
        if let Some(s) = sched.as_mut() {
            s[k] = wk[0];
        }
        if k + 1 == n {
            break;
        }

        system.deriv(&x, &uk, &wk, &mut k1)?;
        let th = t + 0.5 * dt;
        u.eval_into(th, &mut uk);
        w.eval_into(th, &mut wk);
        for i in 0..nx {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        system.deriv(&tmp, &uk, &wk, &mut k2)?;
        for i in 0..nx {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        system.deriv(&tmp, &uk, &wk, &mut k3)?;
        let t1 = times[k + 1];
        u.eval_into(t1, &mut uk);
        w.eval_into(t1, &mut wk);
        for i in 0..nx {
            tmp[i] = x[i] + dt * k3[i];
        }
        system.deriv(&tmp, &uk, &wk, &mut k4)?;
        for i in 0..nx {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_valid_time: t });
        }
    }

    Trajectory::new(times, controls, states, outputs, sched).map(|t| t.with_names(system.channel_names()))
}

/// Uniform random knot values on `n_knots` evenly spaced times over `[0, t_final]`.
pub fn generate_random_controls(
    bounds: &[(f64, f64)],
    n_knots: usize,
    t_final: f64,
    interpolation: Interpolation,
    seed: u64,
) -> Result<ControlSignal> {
    if n_knots < 2 {
        return Err(Error::invalid("random controls need at least two knots"));
    }
    if !(t_final > 0.0) {
        return Err(Error::invalid("t_final must be positive"));
    }
    for &(lo, hi) in bounds {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bad control bound [{lo}, {hi}]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..n_knots)
        .map(|k| t_final * k as f64 / (n_knots - 1) as f64)
        .collect();
    let mut values = DMatrix::zeros(bounds.len(), n_knots);
    for k in 0..n_knots {
        for (c, &(lo, hi)) in bounds.iter().enumerate() {
            let r: f64 = rng.random();
            values[(c, k)] = lo + (hi - lo) * r;
        }
    }
    ControlSignal::new(times, values, interpolation)
}
