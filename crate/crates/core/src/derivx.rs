//! Not-a-knot cubic splines and state-derivative extraction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::trajdata::Trajectory;

/// Piecewise cubic interpolant of several channels on shared knots.
///
/// On interval `i`, channel `c` is
/// `p(t) = a + b τ + c τ² + d τ³` with `τ = t − knots[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    /// `coeffs[c][i] = [a, b, c, d]`
    coeffs: Vec<Vec<[f64; 4]>>,
}

/// Slopes at the knots for the not-a-knot interpolant, all channels at once.
/// The tridiagonal system depends on the knots only, so it is factored once.
fn knot_slopes(x: &[f64], values: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = x.len();
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

    // tridiagonal rows: lower[i] s[i-1] + diag[i] s[i] + upper[i] s[i+1] = rhs[i]
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let d0 = x[2] - x[0];
    let dn = x[n - 1] - x[n - 3];
    diag[0] = dx[1];
    upper[0] = d0;
    for i in 1..n - 1 {
        lower[i] = dx[i];
        diag[i] = 2.0 * (dx[i - 1] + dx[i]);
        upper[i] = dx[i - 1];
    }
    lower[n - 1] = dn;
    diag[n - 1] = dx[n - 3];

    // forward elimination
    let mut cp = vec![0.0; n];
    let mut denom = vec![0.0; n];
    denom[0] = diag[0];
    cp[0] = upper[0] / denom[0];
    for i in 1..n {
        denom[i] = diag[i] - lower[i] * cp[i - 1];
        cp[i] = upper[i] / denom[i];
    }

    let mut out = Vec::with_capacity(values.nrows());
    let mut slope = vec![0.0; n - 1];
    let mut rhs = vec![0.0; n];
    for row in values.row_iter() {
        for i in 0..n - 1 {
            slope[i] = (row[i + 1] - row[i]) / dx[i];
        }
        rhs[0] = ((dx[0] + 2.0 * d0) * dx[1] * slope[0] + dx[0] * dx[0] * slope[1]) / d0;
        for i in 1..n - 1 {
            rhs[i] = 3.0 * (dx[i] * slope[i - 1] + dx[i - 1] * slope[i]);
        }
        rhs[n - 1] = (dx[n - 2] * dx[n - 2] * slope[n - 3] + (2.0 * dn + dx[n - 2]) * dx[n - 3] * slope[n - 2]) / dn;

        let mut s = vec![0.0; n];
        s[0] = rhs[0] / denom[0];
        for i in 1..n {
            s[i] = (rhs[i] - lower[i] * s[i - 1]) / denom[i];
        }
        for i in (0..n - 1).rev() {
            s[i] -= cp[i] * s[i + 1];
        }
        out.push(s);
    }
    out
}

fn check_knots(times: &[f64]) -> Result<()> {
    if times.len() < 4 {
        return Err(Error::invalid(format!(
            "a not-a-knot spline needs at least 4 points, got {}",
            times.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("spline knots must be finite"));
    }
    if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(format!(
            "spline knots must be strictly increasing (knot {} = {}, knot {} = {})",
            k,
            times[k],
            k + 1,
            times[k + 1]
        )));
    }
    Ok(())
}

/// Fits a not-a-knot cubic spline to each row of `values` (channels × n_t).
pub fn fit_cubic_spline(times: &[f64], values: &DMatrix<f64>) -> Result<CubicSpline> {
    check_knots(times)?;
    crate::error::check_len("spline samples", times.len(), values.ncols())?;
    let slopes = knot_slopes(times, values);
    let coeffs = slopes
        .iter()
        .zip(values.row_iter())
        .map(|(s, y)| {
            (0..times.len() - 1)
                .map(|i| {
                    let h = times[i + 1] - times[i];
                    let m = (y[i + 1] - y[i]) / h;
                    [
                        y[i],
                        s[i],
                        (3.0 * m - 2.0 * s[i] - s[i + 1]) / h,
                        (s[i] + s[i + 1] - 2.0 * m) / (h * h),
                    ]
                })
                .collect()
        })
        .collect();
    Ok(CubicSpline {
        knots: times.to_vec(),
        coeffs,
    })
}

impl CubicSpline {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_channels(&self) -> usize {
        self.coeffs.len()
    }

    fn interval(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.knots[0], self.knots[self.knots.len() - 1]);
        if !(t >= start && t <= end) {
            return Err(Error::Extrapolation { t, start, end });
        }
        let k = self.knots.partition_point(|&k| k <= t);
        Ok(k.saturating_sub(1).min(self.knots.len() - 2))
    }

    /// Value (`order` 0), first or second derivative of every channel at `t`.
    pub fn eval(&self, t: f64, order: u8) -> Result<Vec<f64>> {
        let i = self.interval(t)?;
        self.eval_on(i, t, order)
    }

    /// Evaluates on a given interval, which lets callers take one-sided
    /// limits at interior knots.
    pub fn eval_on(&self, interval: usize, t: f64, order: u8) -> Result<Vec<f64>> {
        if interval + 1 >= self.knots.len() {
            return Err(Error::invalid(format!("interval {interval} out of range")));
        }
        let tau = t - self.knots[interval];
        let out = self
            .coeffs
            .iter()
            .map(|c| {
                let [a, b, c2, d] = c[interval];
                match order {
                    0 => a + tau * (b + tau * (c2 + tau * d)),
                    1 => b + tau * (2.0 * c2 + 3.0 * d * tau),
                    2 => 2.0 * c2 + 6.0 * d * tau,
                    _ => f64::NAN,
                }
            })
            .collect();
        if order > 2 {
            return Err(Error::invalid(format!("derivative order {order} not supported")));
        }
        Ok(out)
    }

    /// First derivative of every channel at every knot (channels × n_t).
    pub fn knot_derivatives(&self) -> DMatrix<f64> {
        let n = self.knots.len();
        DMatrix::from_fn(self.coeffs.len(), n, |c, k| {
            if k + 1 < n {
                self.coeffs[c][k][1]
            } else {
                let [_, b, c2, d] = self.coeffs[c][n - 2];
                let h = self.knots[n - 1] - self.knots[n - 2];
                b + h * (2.0 * c2 + 3.0 * d * h)
            }
        })
    }
}

/// State derivatives on the trajectory's own grid from per-state splines.
pub fn extract_state_derivatives(traj: &Trajectory) -> Result<DMatrix<f64>> {
    let spline = fit_cubic_spline(traj.times(), traj.states())?;
    Ok(spline.knot_derivatives())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(times: &[f64], f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(1, times.len(), |_, k| f(times[k]))
    }

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn reproduces_cubic() {
        let p = |t: f64| t * t * t - 2.0 * t + 1.0;
        let times = vec![-1.0, -0.3, 0.2, 0.9, 1.5, 2.0];
        let s = fit_cubic_spline(&times, &sample(&times, p)).unwrap();
        for k in 0..100 {
            let t = -1.0 + 3.0 * k as f64 / 99.0;
            assert!((s.eval(t, 0).unwrap()[0] - p(t)).abs() <= 1e-10);
            assert!((s.eval(t, 1).unwrap()[0] - (3.0 * t * t - 2.0)).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_data() {
        let times = grid(6, 0.5);
        let s = fit_cubic_spline(&times, &sample(&times, |_| 4.0)).unwrap();
        for t in [0.0, 0.3, 1.7, 2.5] {
            assert!((s.eval(t, 0).unwrap()[0] - 4.0).abs() < 1e-14);
            assert!(s.eval(t, 1).unwrap()[0].abs() < 1e-14);
        }
    }

    #[test]
    fn sine_derivative_accuracy() {
        let times = grid(101, 0.01);
        let s = fit_cubic_spline(&times, &sample(&times, f64::sin)).unwrap();
        let d = s.knot_derivatives();
        let err = (0..101).map(|k| (d[(0, k)] - times[k].cos()).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn linear_data_slope() {
        let times = grid(8, 0.25);
        let s = fit_cubic_spline(&times, &sample(&times, |t| 3.0 * t - 1.0)).unwrap();
        for t in [0.0, 0.1, 1.0, 1.75] {
            assert!((s.eval(t, 1).unwrap()[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_continuity() {
        let times = vec![0.0, 0.1, 0.35, 0.5, 0.8, 1.0, 1.3];
        let s = fit_cubic_spline(&times, &sample(&times, |t| (3.0 * t).exp().sin())).unwrap();
        for i in 1..times.len() - 1 {
            let left = s.eval_on(i - 1, times[i], 2).unwrap()[0];
            let right = s.eval_on(i, times[i], 2).unwrap()[0];
            assert!((left - right).abs() <= 1e-9 * left.abs().max(1.0), "{left} vs {right}");
        }
    }

    #[test]
    fn extrapolation_and_bad_knots() {
        let times = grid(5, 1.0);
        let s = fit_cubic_spline(&times, &sample(&times, |t| t)).unwrap();
        assert!(matches!(s.eval(4.5, 0), Err(Error::Extrapolation { .. })));
        assert!(matches!(s.eval(-0.1, 0), Err(Error::Extrapolation { .. })));
        assert!(fit_cubic_spline(&times[..3], &sample(&times[..3], |t| t)).is_err());
        let dup = vec![0.0, 1.0, 1.0, 2.0];
        assert!(fit_cubic_spline(&dup, &sample(&dup, |t| t)).is_err());
    }

    #[test]
    fn square_extraction_on_coarse_grid() {
        let times = grid(11, 0.1);
        let states = sample(&times, |t| t * t);
        let traj = Trajectory::new(
            times.clone(),
            DMatrix::zeros(0, 11),
            states,
            DMatrix::zeros(0, 11),
            None,
        )
        .unwrap();
        let d = extract_state_derivatives(&traj).unwrap();
        for k in 0..11 {
            assert!((d[(0, k)] - 2.0 * times[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn refinement_reduces_error() {
        let f = |t: f64| (2.0 * t).sin() + 0.3 * t * t;
        let df = |t: f64| 2.0 * (2.0 * t).cos() + 0.6 * t;
        let max_err = |n: usize| {
            let times: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 / (n - 1) as f64).collect();
            let d = fit_cubic_spline(&times, &sample(&times, f)).unwrap().knot_derivatives();
            (0..n).map(|k| (d[(0, k)] - df(times[k])).abs()).fold(0.0, f64::max)
        };
        for n in [11, 21, 41] {
            assert!(max_err(n) >= 4.0 * max_err(2 * n - 1));
        }
    }

    fn knot_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, 3..20).prop_map(|gaps| {
            let mut t = vec![0.0];
            for g in gaps {
                t.push(t.last().unwrap() + g);
            }
            t
        })
    }

    proptest! {
        #[test]
        fn interpolates_samples(times in knot_strategy(), seed in 0u64..1000) {
            let values = DMatrix::from_fn(2, times.len(), |c, k| ((k as f64 + 1.0) * (seed as f64 + c as f64 + 0.5)).sin());
            let s = fit_cubic_spline(&times, &values).unwrap();
            for (k, &t) in times.iter().enumerate() {
                let v = s.eval(t, 0).unwrap();
                prop_assert!((v[0] - values[(0, k)]).abs() <= 1e-12);
                prop_assert!((v[1] - values[(1, k)]).abs() <= 1e-12);
            }
        }

        #[test]
        fn exact_on_cubics(times in knot_strategy(), c in prop::array::uniform4(-2.0f64..2.0)) {
            let p = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
            let dp = |t: f64| c[1] + t * (2.0 * c[2] + 3.0 * c[3] * t);
            let s = fit_cubic_spline(&times, &sample(&times, p)).unwrap();
            let end = *times.last().unwrap();
            for k in 0..50 {
                let t = (end * (k as f64 / 49.0)).min(end);
                let scale = 1.0 + p(t).abs() + end.powi(3) * 2.0;
                prop_assert!((s.eval(t, 0).unwrap()[0] - p(t)).abs() <= 1e-9 * scale);
                prop_assert!((s.eval(t, 1).unwrap()[0] - dp(t)).abs() <= 1e-9 * scale);
            }
        }
    }
}
