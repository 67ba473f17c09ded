//! Gaussian RBF networks grown one neuron at a time.
//!
//! In scaled space a network evaluates
//! `s(x̃) = b + Σᵢ wᵢ exp(−(‖x̃ − c̃ᵢ‖ / σ)²)` and de-scales the result.
//! Training adds a neuron at the sample with the largest residual and
//! re-solves bias and weights by ridge-regularized least squares, updated
//! incrementally through a modified Gram–Schmidt factorization of the
//! augmented design matrix `[Φ; √λ·I]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mat::Scaler;

/// Ridge on neuron weights during the least-squares re-solve.
pub const RIDGE: f64 = 1e-8;
/// Neuron count after which the default width is re-estimated once.
const WIDTH_REFRESH: usize = 10;
/// Sample cap for the initial pairwise-distance median.
const WIDTH_SAMPLE_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbfOptions {
    /// Defaults to the number of samples.
    pub max_neurons: Option<usize>,
    /// Stop once the scaled-space training MSE reaches this value.
    pub goal_mse: f64,
    /// Fixed width in scaled space; `None` selects it from the data.
    pub width: Option<f64>,
}

impl Default for RbfOptions {
    fn default() -> Self {
        RbfOptions {
            max_neurons: None,
            goal_mse: 1e-6,
            width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfNetwork {
    /// n_inputs × n_neurons, scaled space.
    #[serde(with = "crate::mat::dmatrix")]
    pub centers: DMatrix<f64>,
    pub width: f64,
    /// n_targets × n_neurons, scaled space.
    #[serde(with = "crate::mat::dmatrix")]
    pub weights: DMatrix<f64>,
    /// Per-target bias, scaled space.
    pub bias: Vec<f64>,
    pub input_scaler: Scaler,
    pub target_scaler: Scaler,
    /// Scaled training MSE (ridge term included) after each neuron.
    pub mse_history: Vec<f64>,
}

impl RbfNetwork {
    pub fn n_inputs(&self) -> usize {
        self.centers.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.centers.ncols()
    }

    fn scaled_input(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; x.len()];
        self.input_scaler.apply(x, &mut z);
        z
    }

    /// Kernel activations `φᵢ(x̃)`.
    fn activations(&self, z: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.width * self.width);
        self.centers
            .column_iter()
            .map(|c| {
                let r2: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 * inv).exp()
            })
            .collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("network input", self.n_inputs(), x.len())?;
        check_len("network output", self.n_targets(), out.len())?;
        let z = self.scaled_input(x);
        let phi = self.activations(&z);
        let mut s = self.bias.clone();
        for (t, st) in s.iter_mut().enumerate() {
            for (i, p) in phi.iter().enumerate() {
                *st += self.weights[(t, i)] * p;
            }
        }
        self.target_scaler.invert(&s, out);
        Ok(())
    }

    /// Output Jacobian (n_targets × n_inputs) in original units.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len("network input", self.n_inputs(), x.len())?;
        let z = self.scaled_input(x);
        let phi = self.activations(&z);
        let inv = 1.0 / (self.width * self.width);
        let (nt, nin) = (self.n_targets(), self.n_inputs());
        let mut jac = DMatrix::zeros(nt, nin);
        for (i, p) in phi.iter().enumerate() {
            for j in 0..nin {
                // ∂φᵢ/∂z_j
                let g = -2.0 * (z[j] - self.centers[(j, i)]) * inv * p;
                for t in 0..nt {
                    jac[(t, j)] += self.weights[(t, i)] * g;
                }
            }
        }
        for t in 0..nt {
            for j in 0..nin {
                jac[(t, j)] *= self.target_scaler.scale[t] / self.input_scaler.scale[j];
            }
        }
        Ok(jac)
    }
}

pub fn eval_rbf(net: &RbfNetwork, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; net.n_targets()];
    net.eval_into(x, &mut out)?;
    Ok(out)
}

fn median_pairwise(z: &DMatrix<f64>, cols: &[usize]) -> f64 {
    let mut d = Vec::with_capacity(cols.len() * cols.len().saturating_sub(1) / 2);
    for (a, &i) in cols.iter().enumerate() {
        for &j in &cols[a + 1..] {
            d.push((z.column(i) - z.column(j)).norm());
        }
    }
    let m = crate::mat::median(&mut d);
    if m.is_finite() && m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Incremental QR of the ridge-augmented design matrix.
struct Factor {
    n: usize,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    /// Residual of each target in the augmented system.
    resid: Vec<Vec<f64>>,
    /// `q_kᵀ t` per column and target.
    qt: Vec<Vec<f64>>,
}

impl Factor {
    fn new(targets: &DMatrix<f64>, rows: usize) -> Self {
        let n = targets.ncols();
        let resid = targets
            .row_iter()
            .map(|t| {
                let mut v = vec![0.0; rows];
                v[..n].copy_from_slice(t.clone_owned().as_slice());
                v
            })
            .collect();
        Factor {
            n,
            q: Vec::new(),
            r: Vec::new(),
            resid,
            qt: Vec::new(),
        }
    }

    fn push(&mut self, mut v: Vec<f64>) {
        let mut rcol = vec![0.0; self.q.len() + 1];
        // two Gram–Schmidt passes keep Q orthonormal to working precision
        for _ in 0..2 {
            for (k, qk) in self.q.iter().enumerate() {
                let c: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(qk) {
                    *vi -= c * qi;
                }
                rcol[k] += c;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        rcol[self.q.len()] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        let coeffs = self
            .resid
            .iter_mut()
            .map(|res| {
                let c: f64 = v.iter().zip(res.iter()).map(|(a, b)| a * b).sum();
                for (ri, qi) in res.iter_mut().zip(&v) {
                    *ri -= c * qi;
                }
                c
            })
            .collect();
        self.q.push(v);
        self.r.push(rcol);
        self.qt.push(coeffs);
    }

    fn mse(&self) -> f64 {
        let total: f64 = self.resid.iter().flat_map(|r| r.iter()).map(|x| x * x).sum();
        total / (self.n * self.resid.len()).max(1) as f64
    }

    /// Squared residual norm over targets for training sample `s`.
    fn sample_residual(&self, s: usize) -> f64 {
        self.resid.iter().map(|r| r[s] * r[s]).sum()
    }

    /// Back-substitution for `[bias, w₁, …]` per target.
    fn solve(&self) -> Vec<Vec<f64>> {
        let m = self.q.len();
        let nt = self.resid.len();
        (0..nt)
            .map(|t| {
                let mut a = vec![0.0; m];
                for i in (0..m).rev() {
                    let mut s = self.qt[i][t];
                    for (j, aj) in a.iter().enumerate().skip(i + 1) {
                        s -= self.r[j][i] * aj;
                    }
                    a[i] = s / self.r[i][i];
                }
                a
            })
            .collect()
    }
}

/// Grows a network on `inputs` (n_inputs × N) and `targets` (n_targets × N).
pub fn train_rbf(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, opts: &RbfOptions) -> Result<RbfNetwork> {
    let n = inputs.ncols();
    if n == 0 {
        return Err(Error::invalid("RBF training needs at least one sample"));
    }
    check_len("RBF target columns", n, targets.ncols())?;
    if !crate::mat::all_finite(inputs) || !crate::mat::all_finite(targets) {
        return Err(Error::invalid("RBF training data contains non-finite values"));
    }
    let max_neurons = opts.max_neurons.unwrap_or(n);
    if max_neurons == 0 || max_neurons > n {
        return Err(Error::invalid(format!(
            "max_neurons must lie in [1, {n}], got {max_neurons}"
        )));
    }
    if let Some(w) = opts.width {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::invalid(format!("RBF width must be positive, got {w}")));
        }
    }

    let input_scaler = Scaler::fit(inputs);
    let target_scaler = Scaler::fit(targets);
    let mut z = inputs.clone();
    input_scaler.apply_columns(&mut z);
    let mut tz = targets.clone();
    target_scaler.apply_columns(&mut tz);

    let mut width = match opts.width {
        Some(w) => w,
        None => {
            let stride = n.div_ceil(WIDTH_SAMPLE_CAP);
            let cols: Vec<usize> = (0..n).step_by(stride).collect();
            median_pairwise(&z, &cols)
        }
    };
    let rows = n + max_neurons;
    let sqrt_ridge = RIDGE.sqrt();
    let column = |center: usize, slot: usize, width: f64| -> Vec<f64> {
        let inv = 1.0 / (width * width);
        let c = z.column(center);
        let mut v = vec![0.0; rows];
        for (s, vs) in v.iter_mut().take(n).enumerate() {
            let r2 = (z.column(s) - c).norm_squared();
            *vs = (-r2 * inv).exp();
        }
        v[n + slot] = sqrt_ridge;
        v
    };
    let bias_column = || {
        let mut v = vec![0.0; rows];
        v[..n].fill(1.0);
        v
    };

    let mut factor = Factor::new(&tz, rows);
    factor.push(bias_column());
    let mut chosen: Vec<usize> = Vec::new();
    let mut used = vec![false; n];
    let mut mse_history = Vec::new();

    loop {
        // largest residual among unused samples, lowest index on ties
        let mut pick = None;
        let mut best = -1.0;
        for s in 0..n {
            if used[s] {
                continue;
            }
            let v = factor.sample_residual(s);
            if v > best {
                best = v;
                pick = Some(s);
            }
        }
        let Some(s) = pick else { break };
        used[s] = true;
        chosen.push(s);
        factor.push(column(s, chosen.len() - 1, width));

        if opts.width.is_none() && chosen.len() == WIDTH_REFRESH && max_neurons > WIDTH_REFRESH {
            width = median_pairwise(&z, &chosen);
            factor = Factor::new(&tz, rows);
            factor.push(bias_column());
            // history restarts with the nested prefixes at the new width
            mse_history.clear();
            for (slot, &c) in chosen.iter().enumerate() {
                factor.push(column(c, slot, width));
                mse_history.push(factor.mse());
            }
        } else {
            mse_history.push(factor.mse());
        }
        if chosen.len() >= max_neurons || factor.mse() <= opts.goal_mse {
            break;
        }
    }

    let coeffs = factor.solve();
    let nt = targets.nrows();
    let m = chosen.len();
    let bias = coeffs.iter().map(|a| a[0]).collect();
    let weights = DMatrix::from_fn(nt, m, |t, i| coeffs[t][i + 1]);
    Ok(RbfNetwork {
        centers: crate::mat::select_columns(&z, &chosen),
        width,
        weights,
        bias,
        input_scaler,
        target_scaler,
        mse_history,
    })
}
