use nalgebra::DMatrix;

use super::{Jacobians, StateSpaceSystem};
use crate::error::{check_len, Error, Result};

/// `ẋ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if a.ncols() != nx {
            return Err(Error::invalid("A must be square"));
        }
        check_len("B rows", nx, b.nrows())?;
        check_len("C columns", nx, c.ncols())?;
        check_len("D rows", c.nrows(), d.nrows())?;
        check_len("D columns", b.ncols(), d.ncols())?;
        Ok(LinearSystem { a, b, c, d })
    }

    /// System with no outputs.
    pub fn states_only(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let (nx, nu) = (a.nrows(), b.ncols());
        Self::new(a, b, DMatrix::zeros(0, nx), DMatrix::zeros(0, nu))
    }
}

impl StateSpaceSystem for LinearSystem {
    fn n_states(&self) -> usize {
        self.a.nrows()
    }
    fn n_controls(&self) -> usize {
        self.b.ncols()
    }
    fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    fn deriv(&self, x: &[f64], u: &[f64], _w: &[f64], dx: &mut [f64]) -> Result<()> {
        check_len("state", self.n_states(), x.len())?;
        check_len("control", self.n_controls(), u.len())?;
        for (i, out) in dx.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate() {
                s += self.a[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                s += self.b[(i, j)] * uj;
            }
            *out = s;
        }
        Ok(())
    }

    fn output(&self, x: &[f64], u: &[f64], _w: &[f64], y: &mut [f64]) -> Result<()> {
        for (i, out) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate() {
                s += self.c[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                s += self.d[(i, j)] * uj;
            }
            *out = s;
        }
        Ok(())
    }

    fn analytic_jacobians(&self, _x: &[f64], _u: &[f64], _w: &[f64]) -> Option<Result<Jacobians>> {
        Some(Ok(Jacobians {
            fx: self.a.clone(),
            fu: self.b.clone(),
            gx: self.c.clone(),
            gu: self.d.clone(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        let a = DMatrix::identity(2, 2);
        assert!(LinearSystem::states_only(a.clone(), DMatrix::zeros(3, 1)).is_err());
        let sys = LinearSystem::states_only(a, DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(sys.n_outputs(), 0);
    }

    #[test]
    fn deriv_is_ax_plus_bu() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 3.0]);
        let sys = LinearSystem::states_only(a, b).unwrap();
        let mut dx = [0.0; 2];
        sys.deriv(&[1.0, 2.0], &[0.5], &[], &mut dx).unwrap();
        assert_eq!(dx, [2.0, -2.0 - 1.0 + 1.5]);
    }
}
