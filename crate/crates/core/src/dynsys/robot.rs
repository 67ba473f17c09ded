//! Planar two-link robot arm under gravity.
//!
//! States are `[θ₁, θ̇₁, θ₂, θ̇₂]` (θ₂ measured relative to link 1), controls
//! are the joint torques `[u₁, u₂]` in N·m, and the outputs are the states.
//! The equations of motion are `M(θ₂) θ̈ + h(θ, θ̇) + G(θ) = u` with lumped
//! parameters
//!
//! | symbol | meaning                        | value  |
//! |--------|--------------------------------|--------|
//! | `a`    | `I₁ + I₂ + m₁l_c1² + m₂(l₁² + l_c2²)` | 1.84 |
//! | `b`    | `m₂ l₁ l_c2`                   | 0.6    |
//! | `d`    | `I₂ + m₂ l_c2²`                | 0.55   |
//! | `g₁`   | `(m₁ l_c1 + m₂ l₁) g`          | 23.544 |
//! | `g₂`   | `m₂ l_c2 g`                    | 9.81   |
//!
//! Multiplying the solved θ̈₁ through by 10⁴ gives the familiar closed form
//! `-(5500(u₁-u₂) - 100062 cos ξ₁ + 29430 cos(ξ₁+2ξ₃) + …)/(1800 cos 2ξ₃ - 5295)`.

use super::StateSpaceSystem;
use crate::error::{Error, Result};
use crate::trajdata::ChannelNames;

/// Stationary configuration `[π/4, 0, -π/6, 0]`, to four decimals.
#[allow(clippy::approx_constant)]
pub const STATIONARY_STATE: [f64; 4] = [0.7854, 0.0, -0.5236, 0.0];
/// Gravity-balancing torques at [`STATIONARY_STATE`], to four decimals.
pub const STATIONARY_CONTROL: [f64; 2] = [26.1239, 9.4757];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkRobot {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub g1: f64,
    pub g2: f64,
}

impl Default for TwoLinkRobot {
    fn default() -> Self {
        TwoLinkRobot {
            a: 1.84,
            b: 0.6,
            d: 0.55,
            g1: 23.544,
            g2: 9.81,
        }
    }
}

impl TwoLinkRobot {
    pub fn eval(&self, x: &[f64; 4], u: &[f64; 2]) -> [f64; 4] {
        let [q1, w1, q2, w2] = *x;
        let (s2, c2) = q2.sin_cos();
        let m11 = self.a + 2.0 * self.b * c2;
        let m12 = self.d + self.b * c2;
        let m22 = self.d;
        let det = m11 * m22 - m12 * m12;

        let h1 = -self.b * s2 * (2.0 * w1 * w2 + w2 * w2);
        let h2 = self.b * s2 * w1 * w1;
        let c12 = (q1 + q2).cos();
        let gr1 = self.g1 * q1.cos() + self.g2 * c12;
        let gr2 = self.g2 * c12;

        let r1 = u[0] - h1 - gr1;
        let r2 = u[1] - h2 - gr2;
        let acc1 = (m22 * r1 - m12 * r2) / det;
        let acc2 = (m11 * r2 - m12 * r1) / det;
        [w1, acc1, w2, acc2]
    }

    /// Central-difference state Jacobian `∂f/∂ξ` at `(x, u)`.
    pub fn state_jacobian(&self, x: &[f64; 4], u: &[f64; 2]) -> nalgebra::Matrix4<f64> {
        let mut jac = nalgebra::Matrix4::zeros();
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let fp = self.eval(&xp, u);
            let fm = self.eval(&xm, u);
            for i in 0..4 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }
}

/// Evaluates the robot derivative with the default parameters.
pub fn eval_two_link_deriv(state: &[f64], control: &[f64]) -> Result<[f64; 4]> {
    let x: [f64; 4] = state
        .try_into()
        .map_err(|_| Error::invalid(format!("robot state needs 4 entries, got {}", state.len())))?;
    let u: [f64; 2] = control
        .try_into()
        .map_err(|_| Error::invalid(format!("robot control needs 2 entries, got {}", control.len())))?;
    if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("robot state and control must be finite"));
    }
    Ok(TwoLinkRobot::default().eval(&x, &u))
}

impl StateSpaceSystem for TwoLinkRobot {
    fn n_states(&self) -> usize {
        4
    }
    fn n_controls(&self) -> usize {
        2
    }
    fn n_outputs(&self) -> usize {
        4
    }

    fn deriv(&self, x: &[f64], u: &[f64], _w: &[f64], dx: &mut [f64]) -> Result<()> {
        let x: [f64; 4] = x
            .try_into()
            .map_err(|_| Error::invalid("robot state needs 4 entries"))?;
        let u: [f64; 2] = u
            .try_into()
            .map_err(|_| Error::invalid("robot control needs 2 entries"))?;
        dx.copy_from_slice(&self.eval(&x, &u));
        Ok(())
    }

    fn output(&self, x: &[f64], _u: &[f64], _w: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }

    fn channel_names(&self) -> ChannelNames {
        ChannelNames {
            controls: vec!["u1".into(), "u2".into()],
            states: vec![
                "theta1".into(),
                "theta1_dot".into(),
                "theta2".into(),
                "theta2_dot".into(),
            ],
            outputs: vec![
                "y_theta1".into(),
                "y_theta1_dot".into(),
                "y_theta2".into(),
                "y_theta2_dot".into(),
            ],
            sched: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// θ̈₁ written term by term in the expanded closed form.
    fn closed_form_f2(x: &[f64; 4], u: &[f64; 2]) -> f64 {
        let [x1, x2, x3, x4] = *x;
        let [u1, u2] = *u;
        let num = 5500.0 * (u1 - u2) - 100062.0 * x1.cos()
            + 29430.0 * (x1 + 2.0 * x3).cos()
            + 1800.0 * x2 * x2 * (2.0 * x3).sin()
            - 6000.0 * u2 * x3.cos()
            + 3300.0 * x2 * x2 * x3.sin()
            + 3300.0 * x4 * x4 * x3.sin()
            + 6600.0 * x2 * x4 * x3.sin();
        -num / (1800.0 * (2.0 * x3).cos() - 5295.0)
    }

    #[test]
    fn stationary_point_is_near_zero() {
        let f = eval_two_link_deriv(&STATIONARY_STATE, &STATIONARY_CONTROL).unwrap();
        for v in f {
            assert!(v.abs() <= 0.05, "{f:?}");
        }
    }

    #[test]
    fn kinematic_rows_copy_velocities() {
        let f = eval_two_link_deriv(&[0.0, 1.0, 0.0, 2.0], &[3.0, -4.0]).unwrap();
        assert_eq!(f[0], 1.0);
        assert_eq!(f[2], 2.0);
    }

    #[test]
    fn second_component_matches_closed_form() {
        let x = STATIONARY_STATE;
        let u = [27.1239, 9.4757];
        let f = eval_two_link_deriv(&x, &u).unwrap();
        let expected = closed_form_f2(&x, &u);
        assert!((f[1] - expected).abs() < 1e-10, "{} vs {expected}", f[1]);

        let x = [0.3, -1.2, 1.1, 0.7];
        let u = [-3.0, 5.5];
        let f = eval_two_link_deriv(&x, &u).unwrap();
        assert!((f[1] - closed_form_f2(&x, &u)).abs() < 1e-10);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(eval_two_link_deriv(&[f64::NAN, 0.0, 0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(eval_two_link_deriv(&[0.0; 3], &[0.0, 0.0]).is_err());
    }
}
