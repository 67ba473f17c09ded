//! Projected L-BFGS for smooth bound-constrained minimization.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient ∞-norm falls to this level.
    pub tol: f64,
    pub memory: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions {
            max_iter: 1000,
            tol: 1e-8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub pg_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn pg_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

fn dot_free(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    (0..a.len()).filter(|&i| free[i]).map(|i| a[i] * b[i]).sum()
}

/// Minimizes `f` over the box `[lo, hi]`. `fg(x, grad)` returns the value
/// and fills the gradient; non-finite values are treated as failed steps by
/// the line search.
pub fn minimize_box<F>(fg: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BoxOptions) -> Result<BoxResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    minimize_box_preconditioned(fg, None, x0, lo, hi, opts)
}

/// Relative slack on `f` admitted by the approximate Wolfe test.
const WOLFE_EPS: f64 = 1e-12;

/// Iterations without a decrease beyond [`WOLFE_EPS`] after which the
/// gradient is taken to be at its noise floor.
const STALL_ITERS: usize = 20;

/// Approximate inverse-Hessian operator on the free variables.
pub trait Preconditioner {
    /// Overwrites `v` (zero on fixed variables) with `H₀ v`, where `H₀`
    /// approximates the inverse Hessian on the free variables at `x`.
    /// Returning `false` falls back to a scaled identity.
    fn apply(&mut self, x: &[f64], free: &[bool], v: &mut [f64]) -> Result<bool>;

    /// Step length accepted by the line search after a preconditioned
    /// direction, for operators that adapt a damping term.
    fn step_accepted(&mut self, _alpha: f64) {}
}

/// [`minimize_box`] with an optional inverse-Hessian operator. With one,
/// every step is the projected, preconditioned gradient direction and no
/// quasi-Newton pairs are kept; a damped Gauss-Newton operator makes this a
/// projected Gauss-Newton method.
pub fn minimize_box_preconditioned<F>(
    mut fg: F,
    mut precond: Option<&mut dyn Preconditioner>,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BoxOptions,
) -> Result<BoxResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut free = vec![true; n];
    let mut d = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];

    let mut iterations = 0;
    let mut best = f;
    let mut stalled = 0;
    loop {
        let pg = pg_norm(&x, &g, lo, hi);
        if pg <= opts.tol || iterations >= opts.max_iter || stalled >= STALL_ITERS || !f.is_finite() {
            return Ok(BoxResult {
                x,
                f,
                pg_norm: pg,
                iterations,
                converged: pg <= opts.tol,
            });
        }
        iterations += 1;

        for i in 0..n {
            free[i] = lo[i] < hi[i] && !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));
        }

        let mut steepest = false;
        let mut scaled;
        let mut preconditioned = false;
        loop {
            // two-loop recursion restricted to the free variables
            for i in 0..n {
                d[i] = if free[i] { g[i] } else { 0.0 };
            }
            scaled = false;
            if !steepest {
                for (m, (s, y, rho)) in memory.iter().enumerate().rev() {
                    let a = rho * dot_free(s, &d, &free);
                    alpha_buf[m] = a;
                    for i in 0..n {
                        if free[i] {
                            d[i] -= a * y[i];
                        }
                    }
                }
                if let Some(pc) = precond.as_mut() {
                    scaled = pc.apply(&x, &free, &mut d)?;
                    preconditioned = scaled;
                }
                if !scaled {
                    if let Some((s, y, _)) = memory.back() {
                        let yy = dot_free(y, y, &free);
                        let gamma = if yy > 0.0 { dot_free(s, y, &free) / yy } else { 1.0 };
                        if gamma > 0.0 && gamma.is_finite() {
                            d.iter_mut().for_each(|v| *v *= gamma);
                        }
                        scaled = true;
                    }
                }
                for (m, (s, y, rho)) in memory.iter().enumerate() {
                    let b = rho * dot_free(y, &d, &free);
                    for i in 0..n {
                        if free[i] {
                            d[i] += (alpha_buf[m] - b) * s[i];
                        }
                    }
                }
            }
            d.iter_mut().for_each(|v| *v = -*v);
            let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if (gd < 0.0 && d.iter().all(|v| v.is_finite())) || steepest {
                break;
            }
            steepest = true;
            memory.clear();
        }

        let mut alpha = if scaled {
            1.0
        } else {
            let dmax = d.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            (1.0 / dmax.max(1e-300)).min(1.0)
        };
        let mut accepted = false;
        let mut ft = f;
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = (x[i] + alpha * d[i]).clamp(lo[i], hi[i]);
            }
            ft = fg(&xt, &mut gt)?;
            if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                let slope: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
                let slope_t: f64 = (0..n).map(|i| gt[i] * (xt[i] - x[i])).sum();
                // Armijo, or the approximate Wolfe test once the predicted
                // decrease is at the rounding level of f
                let armijo = ft <= f + 1e-4 * slope;
                let approx_wolfe =
                    ft <= f + WOLFE_EPS * f.abs() && slope < 0.0 && slope_t >= 0.9 * slope && slope_t <= -0.8 * slope;
                if armijo || approx_wolfe {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if preconditioned {
            if let Some(pc) = precond.as_mut() {
                pc.step_accepted(if accepted { alpha } else { 0.0 });
            }
        }
        if !accepted {
            if memory.is_empty() {
                // no descent possible at this resolution
                let pg = pg_norm(&x, &g, lo, hi);
                return Ok(BoxResult {
                    x,
                    f,
                    pg_norm: pg,
                    iterations,
                    converged: pg <= opts.tol,
                });
            }
            memory.clear();
            continue;
        }

        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        // pairs gathered under a preconditioner that changes every iteration
        // describe no single metric, so that variant runs memoryless
        if sy > 1e-12 * (ss * yy).sqrt() && precond.is_none() && opts.memory > 0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        if f < best - WOLFE_EPS * best.abs() {
            best = f;
            stalled = 0;
        } else {
            stalled += 1;
        }
    }
}
