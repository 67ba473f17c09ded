//! Least-squares linear maps `target ≈ L·[u; x]` and their scheduled (LPV) family.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::trajdata::InputLayout;

/// Linear map from stacked inputs `[u; x]` to targets.
///
/// Columns `0..n_controls` form the control partition (`B_L`, or `D_L` for
/// outputs) and the remaining columns the state partition (`A_L` / `C_L`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFitModel {
    #[serde(with = "crate::mat::dmatrix")]
    pub l: DMatrix<f64>,
    pub n_controls: usize,
    pub n_states: usize,
    /// Numerical rank of the input matrix at fit time.
    pub rank: usize,
    pub rank_deficient: bool,
}

impl LinearFitModel {
    /// The zero map.
    pub fn zeros(n_targets: usize, n_controls: usize, n_states: usize) -> Self {
        LinearFitModel {
            l: DMatrix::zeros(n_targets, n_controls + n_states),
            n_controls,
            n_states,
            rank: 0,
            rank_deficient: false,
        }
    }

    pub fn n_targets(&self) -> usize {
        self.l.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.l.ncols()
    }

    /// `B_L` (or `D_L`): the control columns.
    pub fn control_part(&self) -> DMatrix<f64> {
        self.l.columns(0, self.n_controls).into_owned()
    }

    /// `A_L` (or `C_L`): the state columns.
    pub fn state_part(&self) -> DMatrix<f64> {
        self.l.columns(self.n_controls, self.n_states).into_owned()
    }

    pub fn eval_into(&self, input: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("linear-model input", self.n_inputs(), input.len())?;
        check_len("linear-model output", self.n_targets(), out.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, v) in input.iter().enumerate() {
                s += self.l[(i, j)] * v;
            }
            *o = s;
        }
        Ok(())
    }
}

/// Least-squares fit minimizing `‖targets − L·inputs‖_F`.
///
/// Solved through an SVD of `inputsᵀ`; singular values below
/// `max(N, n)·ε·σ_max` are dropped, giving the minimum-norm solution and
/// setting `rank_deficient`.
pub fn fit_linear(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, layout: InputLayout) -> Result<LinearFitModel> {
    let n = inputs.ncols();
    if n == 0 {
        return Err(Error::invalid("cannot fit a linear model to an empty dataset"));
    }
    check_len("linear-fit input rows", layout.n_linear(), inputs.nrows())?;
    check_len("linear-fit target columns", n, targets.ncols())?;
    if !crate::mat::all_finite(inputs) || !crate::mat::all_finite(targets) {
        return Err(Error::invalid("linear-fit data contains non-finite values"));
    }
    let p = inputs.nrows();
    if p == 0 {
        return Ok(LinearFitModel::zeros(targets.nrows(), 0, 0));
    }
    let svd = inputs.transpose().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = n.max(p) as f64 * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let lt = if rank == 0 {
        DMatrix::zeros(p, targets.nrows())
    } else {
        svd.solve(&targets.transpose(), tol)
            .map_err(|e| Error::invalid(e.to_string()))?
    };
    Ok(LinearFitModel {
        l: lt.transpose(),
        n_controls: layout.n_controls,
        n_states: layout.n_states,
        rank,
        rank_deficient: rank < p,
    })
}

pub fn eval_linear(model: &LinearFitModel, input: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.n_targets()];
    model.eval_into(input, &mut out)?;
    Ok(out)
}

/// Linear models on an ascending grid of scheduling values, blended
/// entrywise and clamped at the grid ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpvLinearFitModel {
    pub grid: Vec<f64>,
    pub window: f64,
    pub models: Vec<LinearFitModel>,
}

/// Default window half-width: the mean grid spacing.
pub fn default_window(grid: &[f64]) -> f64 {
    if grid.len() < 2 {
        f64::INFINITY
    } else {
        (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64
    }
}

/// Fits one linear model per grid value `w_k` on the columns whose
/// scheduling value lies in `[w_k − window, w_k + window]`.
pub fn fit_lpv(
    inputs: &DMatrix<f64>,
    sched: &[f64],
    targets: &DMatrix<f64>,
    layout: InputLayout,
    grid: &[f64],
    window: Option<f64>,
) -> Result<LpvLinearFitModel> {
    if grid.is_empty() {
        return Err(Error::invalid("LPV grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("LPV grid must be finite and strictly increasing"));
    }
    check_len("scheduling samples", inputs.ncols(), sched.len())?;
    let window = window.unwrap_or_else(|| default_window(grid));
    if !(window > 0.0) {
        return Err(Error::invalid(format!("LPV window must be positive, got {window}")));
    }
    let needed = layout.n_linear();
    let members: Vec<Vec<usize>> = grid
        .iter()
        .map(|&g| (0..sched.len()).filter(|&c| (sched[c] - g).abs() <= window).collect())
        .collect();
    let deficient: Vec<f64> = grid
        .iter()
        .zip(&members)
        .filter(|(_, m)| m.len() < needed.max(1))
        .map(|(g, _)| *g)
        .collect();
    if !deficient.is_empty() {
        return Err(Error::UnderPopulatedWindow {
            points: deficient,
            needed: needed.max(1),
        });
    }
    let models = members
        .iter()
        .map(|cols| {
            fit_linear(
                &crate::mat::select_columns(inputs, cols),
                &crate::mat::select_columns(targets, cols),
                layout,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LpvLinearFitModel {
        grid: grid.to_vec(),
        window,
        models,
    })
}

impl LpvLinearFitModel {
    pub fn n_targets(&self) -> usize {
        self.models[0].n_targets()
    }

    pub fn n_inputs(&self) -> usize {
        self.models[0].n_inputs()
    }

    /// Bracketing grid index and blend factor for `w`, clamped to the grid.
    fn bracket(&self, w: f64) -> (usize, f64) {
        let g = &self.grid;
        if g.len() == 1 || w <= g[0] {
            return (0, 0.0);
        }
        if w >= g[g.len() - 1] {
            return (g.len() - 1, 0.0);
        }
        let k = g.partition_point(|&v| v <= w) - 1;
        (k, (w - g[k]) / (g[k + 1] - g[k]))
    }

    pub fn eval_into(&self, input: &[f64], w: f64, out: &mut [f64]) -> Result<()> {
        if !w.is_finite() {
            return Err(Error::invalid("scheduling value must be finite"));
        }
        let (k, s) = self.bracket(w);
        self.models[k].eval_into(input, out)?;
        if s > 0.0 {
            let mut hi = vec![0.0; out.len()];
            self.models[k + 1].eval_into(input, &mut hi)?;
            for (o, h) in out.iter_mut().zip(hi) {
                *o = (1.0 - s) * *o + s * h;
            }
        }
        Ok(())
    }

    /// `L(w)`, interpolated entrywise.
    pub fn matrix_at(&self, w: f64) -> DMatrix<f64> {
        let (k, s) = self.bracket(w);
        if s > 0.0 {
            &self.models[k].l * (1.0 - s) + &self.models[k + 1].l * s
        } else {
            self.models[k].l.clone()
        }
    }
}

pub fn eval_lpv(model: &LpvLinearFitModel, input: &[f64], w: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.n_targets()];
    model.eval_into(input, w, &mut out)?;
    Ok(out)
}

/// Either a single linear map or a scheduled family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LinearPart {
    Fixed(LinearFitModel),
    Lpv(LpvLinearFitModel),
}

impl LinearPart {
    pub fn is_lpv(&self) -> bool {
        matches!(self, LinearPart::Lpv(_))
    }

    pub fn n_targets(&self) -> usize {
        match self {
            LinearPart::Fixed(m) => m.n_targets(),
            LinearPart::Lpv(m) => m.n_targets(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            LinearPart::Fixed(m) => m.n_inputs(),
            LinearPart::Lpv(m) => m.n_inputs(),
        }
    }

    pub fn eval_into(&self, input: &[f64], w: Option<f64>, out: &mut [f64]) -> Result<()> {
        match self {
            LinearPart::Fixed(m) => m.eval_into(input, out),
            LinearPart::Lpv(m) => {
                let w = w.ok_or_else(|| Error::invalid("scheduled model needs a scheduling value"))?;
                m.eval_into(input, w, out)
            }
        }
    }

    /// The map in effect at `w` (ignored for fixed models).
    pub fn matrix_at(&self, w: Option<f64>) -> DMatrix<f64> {
        match self {
            LinearPart::Fixed(m) => m.l.clone(),
            LinearPart::Lpv(m) => m.matrix_at(w.unwrap_or(m.grid[0])),
        }
    }
}

/// Eigenvalues of the state partition `A_L`.
pub fn eigenvalues(model: &LinearFitModel) -> Result<Vec<Complex<f64>>> {
    let a = model.state_part();
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(format!(
            "state partition is {}x{}, not square",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.complex_eigenvalues().iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(nu: usize, nx: usize) -> InputLayout {
        InputLayout {
            n_controls: nu,
            n_states: nx,
            sched: false,
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn recovers_exact_linear_map() {
        let truth = random(3, 5, 1);
        let inputs = random(5, 200, 2);
        let m = fit_linear(&inputs, &(&truth * &inputs), layout(2, 3)).unwrap();
        assert!((m.l.clone() - truth).amax() <= 1e-8);
        assert!(!m.rank_deficient);
    }

    #[test]
    fn zero_targets_give_zero_map() {
        let inputs = random(4, 30, 3);
        let m = fit_linear(&inputs, &DMatrix::zeros(2, 30), layout(1, 3)).unwrap();
        assert_eq!(m.l.amax(), 0.0);
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let mut inputs = random(3, 40, 4);
        let r0 = inputs.row(0).into_owned();
        inputs.row_mut(2).copy_from(&(r0 * 2.0));
        let targets = random(1, 40, 5);
        let m = fit_linear(&inputs, &targets, layout(1, 2)).unwrap();
        assert!(m.rank_deficient);
        assert_eq!(m.rank, 2);
        // minimum-norm: the solution has no component along the null direction (2, 0, -1)/√5
        let null = 2.0 * m.l[(0, 0)] - m.l[(0, 2)];
        assert!(null.abs() < 1e-10, "{null}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(fit_linear(&DMatrix::zeros(2, 0), &DMatrix::zeros(1, 0), layout(1, 1)).is_err());
    }

    #[test]
    fn eval_linear_basics() {
        let m = LinearFitModel {
            l: DMatrix::identity(3, 3),
            n_controls: 1,
            n_states: 2,
            rank: 3,
            rank_deficient: false,
        };
        assert_eq!(eval_linear(&m, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(eval_linear(&m, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(eval_linear(&m, &[1.0]).is_err());
    }

    #[test]
    fn eigenvalues_of_known_matrices() {
        let mut m = LinearFitModel::zeros(4, 1, 4);
        for i in 0..4 {
            m.l[(i, i + 1)] = (i + 1) as f64;
        }
        let mut ev: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|c| c.re).collect();
        ev.sort_by(f64::total_cmp);
        assert_eq!(ev, vec![1.0, 2.0, 3.0, 4.0]);

        let mut rot = LinearFitModel::zeros(2, 0, 2);
        rot.l = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let ev = eigenvalues(&rot).unwrap();
        assert!(ev
            .iter()
            .all(|c| c.re.abs() < 1e-12 && (c.im.abs() - 1.0).abs() < 1e-12));

        assert!(eigenvalues(&LinearFitModel::zeros(3, 1, 2)).is_err());
    }

    fn lpv_fixture() -> LpvLinearFitModel {
        let mk = |v: f64| LinearFitModel {
            l: DMatrix::from_element(1, 2, v),
            n_controls: 1,
            n_states: 1,
            rank: 2,
            rank_deficient: false,
        };
        LpvLinearFitModel {
            grid: vec![6.0, 12.0, 18.0],
            window: 6.0,
            models: vec![mk(1.0), mk(3.0), mk(7.0)],
        }
    }

    #[test]
    fn lpv_interpolation_and_clamping() {
        let m = lpv_fixture();
        let x = [1.0, 1.0];
        assert_eq!(eval_lpv(&m, &x, 12.0).unwrap(), vec![6.0]);
        assert_eq!(eval_lpv(&m, &x, 9.0).unwrap(), vec![4.0]);
        assert_eq!(eval_lpv(&m, &x, 0.0).unwrap(), vec![2.0]);
        assert_eq!(eval_lpv(&m, &x, 40.0).unwrap(), vec![14.0]);
        assert!(eval_lpv(&m, &x, f64::NAN).is_err());
    }

    #[test]
    fn lpv_on_w_independent_data() {
        let truth = random(2, 3, 6);
        let inputs = random(3, 300, 7);
        let sched: Vec<f64> = (0..300).map(|k| 4.0 + 16.0 * k as f64 / 299.0).collect();
        let m = fit_lpv(
            &inputs,
            &sched,
            &(&truth * &inputs),
            layout(1, 2),
            &[6.0, 12.0, 18.0],
            None,
        )
        .unwrap();
        assert_eq!(m.window, 6.0);
        for g in &m.models {
            assert!((g.l.clone() - &m.models[0].l).amax() <= 1e-6);
        }
    }

    #[test]
    fn lpv_single_point_degenerates() {
        let truth = random(2, 3, 8);
        let inputs = random(3, 50, 9);
        let targets = &truth * &inputs;
        let sched = vec![10.0; 50];
        let lpv = fit_lpv(&inputs, &sched, &targets, layout(1, 2), &[10.0], None).unwrap();
        let fixed = fit_linear(&inputs, &targets, layout(1, 2)).unwrap();
        let x = [0.3, -0.2, 0.9];
        assert_eq!(eval_lpv(&lpv, &x, 3.0).unwrap(), eval_linear(&fixed, &x).unwrap());
    }

    #[test]
    fn lpv_reports_every_sparse_window() {
        let inputs = random(2, 10, 10);
        let sched = vec![5.0; 10];
        match fit_lpv(
            &inputs,
            &sched,
            &DMatrix::zeros(1, 10),
            layout(1, 1),
            &[5.0, 20.0, 30.0],
            Some(2.0),
        ) {
            Err(Error::UnderPopulatedWindow { points, needed }) => {
                assert_eq!(points, vec![20.0, 30.0]);
                assert_eq!(needed, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    fn residual(l: &DMatrix<f64>, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
        (targets - l * inputs).norm()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn residual_is_orthogonal_to_inputs(seed in 0u64..10_000) {
            let inputs = random(4, 60, seed);
            let targets = random(3, 60, seed + 1).map(|v| v.powi(3)) + random(3, 4, seed + 2) * &inputs;
            let m = fit_linear(&inputs, &targets, layout(2, 2)).unwrap();
            let g = (&targets - &m.l * &inputs) * inputs.transpose();
            let scale = (&targets * inputs.transpose()).amax().max(1.0);
            prop_assert!(g.amax() <= 1e-6 * scale);
        }

        #[test]
        fn fit_ignores_column_order(seed in 0u64..10_000) {
            let inputs = random(3, 40, seed);
            let targets = random(2, 40, seed + 1);
            let mut perm: Vec<usize> = (0..40).collect();
            perm.reverse();
            perm.swap(3, 17);
            let a = fit_linear(&inputs, &targets, layout(1, 2)).unwrap();
            let b = fit_linear(
                &crate::mat::select_columns(&inputs, &perm),
                &crate::mat::select_columns(&targets, &perm),
                layout(1, 2),
            ).unwrap();
            prop_assert!((a.l - b.l).amax() <= 1e-10);
        }

        #[test]
        fn fit_is_the_argmin(seed in 0u64..10_000, i in 0usize..2, j in 0usize..3, sign in prop::bool::ANY) {
            let inputs = random(3, 50, seed);
            let targets = random(2, 50, seed + 1);
            let m = fit_linear(&inputs, &targets, layout(1, 2)).unwrap();
            let base = residual(&m.l, &inputs, &targets);
            let mut l = m.l.clone();
            l[(i, j)] += if sign { 1e-3 } else { -1e-3 };
            prop_assert!(residual(&l, &inputs, &targets) > base);
        }
    }
}
