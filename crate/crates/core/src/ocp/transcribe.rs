//! Trapezoidal direct transcription of an [`OcpProblem`].

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::band::Band;
use super::{GradientMode, OcpProblem};
use crate::dynsys::Jacobians;
use crate::error::{check_len, Error, Result};

/// One side of an output bound at every node: `sign·(y_i − bound) ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PathBound {
    output: usize,
    sign: f64,
    bound: f64,
}

/// Per-node model values, with Jacobians when requested.
#[derive(Debug, Clone)]
pub struct NodeEval {
    pub f: Vec<f64>,
    pub y: Vec<f64>,
    pub jac: Option<Jacobians>,
}

/// Discrete program over `z = [x_0 … x_{n−1}, u_0 … u_{n−1}]`.
pub struct Transcription<'p, 'a> {
    problem: &'p OcpProblem<'a>,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_t: usize,
    pub h: f64,
    pub times: Vec<f64>,
    params: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    path: Vec<PathBound>,
}

pub fn transcribe<'p, 'a>(problem: &'p OcpProblem<'a>) -> Result<Transcription<'p, 'a>> {
    problem.validate()?;
    let sys = problem.system;
    let (n_x, n_u, n_y, n_t) = (sys.n_states(), sys.n_controls(), sys.n_outputs(), problem.n_t);
    let h = (problem.tf - problem.t0) / (n_t - 1) as f64;
    let times: Vec<f64> = (0..n_t)
        .map(|k| {
            if k + 1 == n_t {
                problem.tf
            } else {
                problem.t0 + h * k as f64
            }
        })
        .collect();
    let params = times
        .iter()
        .map(|&t| {
            let mut w = vec![0.0; sys.n_params()];
            problem.wind.eval_into(t, &mut w);
            w
        })
        .collect();

    let n = n_t * (n_x + n_u);
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for k in 0..n_t {
        for i in 0..n_x {
            let (mut lo, mut hi) = problem.state_bounds[i];
            if k == 0 {
                (lo, hi) = (problem.x0[i], problem.x0[i]);
            } else if k + 1 == n_t {
                if let Some(tb) = &problem.terminal_bounds {
                    lo = lo.max(tb[i].0);
                    hi = hi.min(tb[i].1);
                }
            }
            lower[k * n_x + i] = lo;
            upper[k * n_x + i] = hi;
        }
        for j in 0..n_u {
            let idx = n_t * n_x + k * n_u + j;
            (lower[idx], upper[idx]) = problem.control_bounds[j];
        }
    }
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::invalid("terminal bounds do not intersect the state bounds"));
    }

    let mut path = Vec::new();
    for (i, &(lo, hi)) in problem.output_bounds.iter().enumerate() {
        if lo.is_finite() {
            path.push(PathBound {
                output: i,
                sign: -1.0,
                bound: lo,
            });
        }
        if hi.is_finite() {
            path.push(PathBound {
                output: i,
                sign: 1.0,
                bound: hi,
            });
        }
    }
    Ok(Transcription {
        problem,
        n_x,
        n_u,
        n_y,
        n_t,
        h,
        times,
        params,
        lower,
        upper,
        path,
    })
}

impl Transcription<'_, '_> {
    pub fn n_vars(&self) -> usize {
        self.n_t * (self.n_x + self.n_u)
    }

    pub fn n_defects(&self) -> usize {
        (self.n_t - 1) * self.n_x
    }

    pub fn n_path(&self) -> usize {
        self.n_t * self.path.len()
    }

    pub fn state<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        &z[k * self.n_x..(k + 1) * self.n_x]
    }

    pub fn control<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let off = self.n_t * self.n_x + k * self.n_u;
        &z[off..off + self.n_u]
    }

    pub fn param(&self, k: usize) -> &[f64] {
        &self.params[k]
    }

    pub fn pack(&self, states: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_len("state nodes", self.n_t, states.ncols())?;
        check_len("control nodes", self.n_t, controls.ncols())?;
        let mut z = Vec::with_capacity(self.n_vars());
        for k in 0..self.n_t {
            z.extend(states.column(k).iter());
        }
        for k in 0..self.n_t {
            z.extend(controls.column(k).iter());
        }
        Ok(z)
    }

    pub fn unpack(&self, z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let states = DMatrix::from_fn(self.n_x, self.n_t, |i, k| self.state(z, k)[i]);
        let controls = DMatrix::from_fn(self.n_u, self.n_t, |j, k| self.control(z, k)[j]);
        (states, controls)
    }

    fn quad_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.n_t {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Trapezoidal quadrature of the objective integrand.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let obj = &self.problem.objective;
        (0..self.n_t)
            .map(|k| self.quad_weight(k) * obj.integrand(self.state(z, k), self.control(z, k)))
            .sum()
    }

    pub fn objective_gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let obj = &self.problem.objective;
        let off = self.n_t * self.n_x;
        for k in 0..self.n_t {
            let q = self.quad_weight(k);
            let (gx, gu) = grad.split_at_mut(off);
            obj.add_gradient(
                self.state(z, k),
                self.control(z, k),
                q,
                &mut gx[k * self.n_x..(k + 1) * self.n_x],
                &mut gu[k * self.n_u..(k + 1) * self.n_u],
            );
        }
    }

    fn eval_node(&self, z: &[f64], k: usize, gradients: Option<(GradientMode, f64)>) -> Result<NodeEval> {
        let sys = self.problem.system;
        let (x, u, w) = (self.state(z, k), self.control(z, k), self.param(k));
        let mut f = vec![0.0; self.n_x];
        let mut y = vec![0.0; self.n_y];
        sys.deriv(x, u, w, &mut f)?;
        sys.output(x, u, w, &mut y)?;
        let jac = match gradients {
            None => None,
            Some((GradientMode::Analytic, step)) => Some(match sys.analytic_jacobians(x, u, w) {
                Some(j) => j?,
                None => self.fd_jacobians(x, u, w, step)?,
            }),
            Some((GradientMode::FiniteDifference, step)) => Some(self.fd_jacobians(x, u, w, step)?),
        };
        Ok(NodeEval { f, y, jac })
    }

    /// Central differences with a step relative to each coordinate's size.
    fn fd_jacobians(&self, x: &[f64], u: &[f64], w: &[f64], step: f64) -> Result<Jacobians> {
        let sys = self.problem.system;
        let (nx, nu, ny) = (self.n_x, self.n_u, self.n_y);
        let mut fx = DMatrix::zeros(nx, nx);
        let mut fu = DMatrix::zeros(nx, nu);
        let mut gx = DMatrix::zeros(ny, nx);
        let mut gu = DMatrix::zeros(ny, nu);
        let (mut fp, mut fm) = (vec![0.0; nx], vec![0.0; nx]);
        let (mut yp, mut ym) = (vec![0.0; ny], vec![0.0; ny]);
        let mut xs = x.to_vec();
        let mut us = u.to_vec();
        for i in 0..nx + nu {
            let (v, slot) = if i < nx {
                (x[i], &mut xs[i])
            } else {
                (u[i - nx], &mut us[i - nx])
            };
            let d = step * v.abs().max(1.0);
            *slot = v + d;
            sys.deriv(&xs, &us, w, &mut fp)?;
            sys.output(&xs, &us, w, &mut yp)?;
            let slot = if i < nx { &mut xs[i] } else { &mut us[i - nx] };
            *slot = v - d;
            sys.deriv(&xs, &us, w, &mut fm)?;
            sys.output(&xs, &us, w, &mut ym)?;
            let slot = if i < nx { &mut xs[i] } else { &mut us[i - nx] };
            *slot = v;
            for r in 0..nx {
                let g = (fp[r] - fm[r]) / (2.0 * d);
                if i < nx {
                    fx[(r, i)] = g;
                } else {
                    fu[(r, i - nx)] = g;
                }
            }
            for r in 0..ny {
                let g = (yp[r] - ym[r]) / (2.0 * d);
                if i < nx {
                    gx[(r, i)] = g;
                } else {
                    gu[(r, i - nx)] = g;
                }
            }
        }
        Ok(Jacobians { fx, fu, gx, gu })
    }

    /// Model values at every node, evaluated in parallel.
    pub fn eval_nodes(&self, z: &[f64], gradients: Option<(GradientMode, f64)>) -> Result<Vec<NodeEval>> {
        check_len("decision vector", self.n_vars(), z.len())?;
        (0..self.n_t)
            .into_par_iter()
            .map(|k| self.eval_node(z, k, gradients))
            .collect()
    }

    /// `δ_k = x_{k+1} − x_k − (h/2)(f_k + f_{k+1})`, stacked by interval.
    pub fn defects(&self, z: &[f64], nodes: &[NodeEval]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_defects());
        for k in 0..self.n_t - 1 {
            let (a, b) = (self.state(z, k), self.state(z, k + 1));
            for i in 0..self.n_x {
                out.push(b[i] - a[i] - 0.5 * self.h * (nodes[k].f[i] + nodes[k + 1].f[i]));
            }
        }
        out
    }

    /// Output path constraints in `g ≤ 0` form, node-major.
    pub fn path_constraints(&self, nodes: &[NodeEval]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_path());
        for node in nodes {
            for pb in &self.path {
                out.push(pb.sign * (node.y[pb.output] - pb.bound));
            }
        }
        out
    }

    /// Adds `(∂δ/∂z)ᵀ v` to `grad`.
    pub fn add_defect_vjp(&self, nodes: &[NodeEval], v: &[f64], grad: &mut [f64]) {
        let (nx, nu) = (self.n_x, self.n_u);
        let off = self.n_t * nx;
        let hh = 0.5 * self.h;
        for k in 0..self.n_t - 1 {
            let vk = &v[k * nx..(k + 1) * nx];
            for i in 0..nx {
                grad[(k + 1) * nx + i] += vk[i];
                grad[k * nx + i] -= vk[i];
            }
            for node in [k, k + 1] {
                let jac = nodes[node].jac.as_ref().expect("node Jacobians requested");
                for c in 0..nx {
                    let s: f64 = (0..nx).map(|r| jac.fx[(r, c)] * vk[r]).sum();
                    grad[node * nx + c] -= hh * s;
                }
                for c in 0..nu {
                    let s: f64 = (0..nx).map(|r| jac.fu[(r, c)] * vk[r]).sum();
                    grad[off + node * nu + c] -= hh * s;
                }
            }
        }
    }

    /// Adds `(∂g/∂z)ᵀ v` to `grad`.
    pub fn add_path_vjp(&self, nodes: &[NodeEval], v: &[f64], grad: &mut [f64]) {
        let (nx, nu) = (self.n_x, self.n_u);
        let off = self.n_t * nx;
        let m = self.path.len();
        for (k, node) in nodes.iter().enumerate() {
            let jac = node.jac.as_ref().expect("node Jacobians requested");
            for (p, pb) in self.path.iter().enumerate() {
                let vk = v[k * m + p] * pb.sign;
                if vk == 0.0 {
                    continue;
                }
                for c in 0..nx {
                    grad[k * nx + c] += vk * jac.gx[(pb.output, c)];
                }
                for c in 0..nu {
                    grad[off + k * nu + c] += vk * jac.gu[(pb.output, c)];
                }
            }
        }
    }

    /// Position of decision variable `i` when variables are ordered node by
    /// node, which makes the constraint Gauss-Newton matrix banded.
    pub fn band_index(&self, i: usize) -> usize {
        let nb = self.n_x + self.n_u;
        let off = self.n_t * self.n_x;
        if i < off {
            (i / self.n_x) * nb + i % self.n_x
        } else {
            let j = i - off;
            (j / self.n_u) * nb + self.n_x + j % self.n_u
        }
    }

    /// Decision-variable index of slot `s` of node `k` in band order.
    fn var_index(&self, k: usize, s: usize) -> usize {
        if s < self.n_x {
            k * self.n_x + s
        } else {
            self.n_t * self.n_x + k * self.n_u + s - self.n_x
        }
    }

    /// Gauss-Newton matrix `Σ w_r ∇δ_r ∇δ_rᵀ + Σ v_r ∇g_r ∇g_rᵀ + s·diag(∇²J_quad)`
    /// in band order, for variables `z = D ζ` with `D = diag(var_scale)`.
    /// Model second derivatives and the indefinite power term are left out.
    pub fn gauss_newton(
        &self,
        nodes: &[NodeEval],
        defect_w: &[f64],
        path_w: &[f64],
        obj_scale: f64,
        var_scale: &[f64],
    ) -> Band {
        let (nx, nu) = (self.n_x, self.n_u);
        let nb = nx + nu;
        let d = |k: usize, s: usize| var_scale[self.var_index(k, s)];
        let mut band = Band::zeros(self.n_t * nb, 2 * nb - 1);
        let hh = 0.5 * self.h;
        let mut row = vec![0.0; 2 * nb];
        for k in 0..self.n_t - 1 {
            let (ja, jb) = (
                nodes[k].jac.as_ref().expect("node Jacobians requested"),
                nodes[k + 1].jac.as_ref().expect("node Jacobians requested"),
            );
            for r in 0..nx {
                let w = defect_w[k * nx + r];
                if w == 0.0 {
                    continue;
                }
                for c in 0..nx {
                    row[c] = -hh * ja.fx[(r, c)] - if c == r { 1.0 } else { 0.0 };
                    row[nb + c] = -hh * jb.fx[(r, c)] + if c == r { 1.0 } else { 0.0 };
                }
                for c in 0..nu {
                    row[nx + c] = -hh * ja.fu[(r, c)];
                    row[nb + nx + c] = -hh * jb.fu[(r, c)];
                }
                for a in 0..2 * nb {
                    row[a] *= d(k + a / nb, a % nb);
                }
                let base = k * nb;
                for a in 0..2 * nb {
                    if row[a] == 0.0 {
                        continue;
                    }
                    for b in 0..=a {
                        band.add(base + a, base + b, w * row[a] * row[b]);
                    }
                }
            }
        }
        let m = self.path.len();
        for (k, node) in nodes.iter().enumerate() {
            let jac = node.jac.as_ref().expect("node Jacobians requested");
            for (p, pb) in self.path.iter().enumerate() {
                let w = path_w[k * m + p];
                if w == 0.0 {
                    continue;
                }
                for c in 0..nx {
                    row[c] = jac.gx[(pb.output, c)];
                }
                for c in 0..nu {
                    row[nx + c] = jac.gu[(pb.output, c)];
                }
                for a in 0..nb {
                    row[a] *= d(k, a);
                }
                for a in 0..nb {
                    for b in 0..=a {
                        band.add(k * nb + a, k * nb + b, w * row[a] * row[b]);
                    }
                }
            }
            for (j, wj) in self.problem.objective.control_weights.iter().enumerate() {
                let dj = d(k, nx + j);
                band.add(
                    k * nb + nx + j,
                    k * nb + nx + j,
                    obj_scale * 2.0 * wj.max(0.0) * self.quad_weight(k) * dj * dj,
                );
            }
        }
        band
    }

    /// Largest violation of the variable bounds.
    pub fn bound_violation(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Baseline guess: RK4 on the node grid under mid-bound constant controls,
    /// clipped to the state bounds. Falls back to holding `x0` when the
    /// baseline simulation fails.
    pub fn initial_guess(&self) -> Vec<f64> {
        let p = self.problem;
        let u: Vec<f64> = p
            .control_bounds
            .iter()
            .map(|&(lo, hi)| {
                if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    0.0f64.clamp(lo, hi)
                }
            })
            .collect();
        let states = self.rk4_nodes(&u).unwrap_or_else(|| vec![p.x0.clone(); self.n_t]);
        let mut z = Vec::with_capacity(self.n_vars());
        for x in &states {
            z.extend_from_slice(x);
        }
        for _ in 0..self.n_t {
            z.extend_from_slice(&u);
        }
        for (v, (l, h)) in z.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *h);
        }
        z
    }

    fn rk4_nodes(&self, u: &[f64]) -> Option<Vec<Vec<f64>>> {
        let sys = self.problem.system;
        let nx = self.n_x;
        let mut w = vec![0.0; sys.n_params()];
        let mut f = |x: &[f64], t: f64, out: &mut [f64]| -> bool {
            self.problem.wind.eval_into(t, &mut w);
            sys.deriv(x, u, &w, out).is_ok() && out.iter().all(|v| v.is_finite())
        };
        let mut x = self.problem.x0.clone();
        let mut out = vec![x.clone()];
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
            vec![0.0; nx],
            vec![0.0; nx],
            vec![0.0; nx],
            vec![0.0; nx],
            vec![0.0; nx],
        );
        for k in 0..self.n_t - 1 {
            let (t, h) = (self.times[k], self.times[k + 1] - self.times[k]);
            if !f(&x, t, &mut k1) {
                return None;
            }
            (0..nx).for_each(|i| tmp[i] = x[i] + 0.5 * h * k1[i]);
            if !f(&tmp, t + 0.5 * h, &mut k2) {
                return None;
            }
            (0..nx).for_each(|i| tmp[i] = x[i] + 0.5 * h * k2[i]);
            if !f(&tmp, t + 0.5 * h, &mut k3) {
                return None;
            }
            (0..nx).for_each(|i| tmp[i] = x[i] + h * k3[i]);
            if !f(&tmp, t + h, &mut k4) {
                return None;
            }
            (0..nx).for_each(|i| x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
            out.push(x.clone());
        }
        Some(out)
    }
}
