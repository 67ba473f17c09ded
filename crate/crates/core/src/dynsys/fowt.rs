//! Reduced-order floating wind turbine fixture.
//!
//! A fixed analytic model used to exercise the surrogate pipeline and the
//! optimal control module without an aero-hydro-servo-elastic code. It is a
//! test fixture, not a model of any real turbine.
//!
//! * States `[Θ_p (deg), ω_g (rpm), Θ̇_p (deg/s), ω̇_g (rpm/s)]`
//! * Controls `[τ_g (MN·m), β (deg)]`, scheduling parameter wind `w` (m/s)
//! * Outputs `[T_F (MN), T_M (MN·m)]`
//!
//! Aerodynamics use the rotor-relative wind `w_r = w − h_hub·Θ̇_p` (smoothly
//! floored at zero) and the tip-speed ratio `λ = Ω R / w_r`:
//!
//! ```text
//! 1/λᵢ = 1/(λ + 0.08β) − 0.035/(β³ + 1)
//! C_p  = 0.22 (116/λᵢ − 0.4β − 5) exp(−12.5/λᵢ)
//! C_t  = c_t0 (1 − exp(−0.35 λ)) exp(−0.06 β)
//! Q    = ½ρA C_p w_r³ / Ω,   T = ½ρA C_t w_r²
//! ```
//!
//! The platform is a damped oscillator forced by thrust,
//! `Θ̈_p = −2ζω_n Θ̇_p − ω_n² Θ_p + k_T T`, and the generator acceleration
//! relaxes toward the torque-balance value with a drivetrain lag,
//! `ω̈_g = (κ (Q − τ_g) − ω̇_g) / T_d`. Outputs are affine in thrust and
//! platform pitch acceleration.

use super::{Jacobians, StateSpaceSystem};
use crate::error::{Error, Result};
use crate::trajdata::ChannelNames;

const RPM: f64 = std::f64::consts::PI / 30.0;

/// Valid wind-speed range in m/s.
pub const WIND_RANGE: (f64, f64) = (3.0, 25.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FowtParams {
    pub air_density: f64,
    pub rotor_radius: f64,
    pub hub_height: f64,
    /// Rotor plus generator inertia, kg·m².
    pub drivetrain_inertia: f64,
    /// Generator acceleration lag, s.
    pub drivetrain_lag: f64,
    /// Platform pitch natural frequency, Hz.
    pub pitch_frequency: f64,
    pub pitch_damping_ratio: f64,
    /// Pitch acceleration per unit thrust, deg/s² per MN.
    pub thrust_gain: f64,
    pub thrust_coefficient_scale: f64,
    /// `[T_F per MN thrust, T_F per deg/s² pitch acceleration]`
    pub shear_coefficients: [f64; 2],
    /// `[T_M per MN thrust, T_M per deg/s² pitch acceleration]`
    pub moment_coefficients: [f64; 2],
}

impl Default for FowtParams {
    fn default() -> Self {
        FowtParams {
            air_density: 1.225,
            rotor_radius: 120.0,
            hub_height: 150.0,
            drivetrain_inertia: 3.2e8,
            drivetrain_lag: 0.5,
            pitch_frequency: 0.1,
            pitch_damping_ratio: 0.08,
            thrust_gain: 1.0,
            thrust_coefficient_scale: 0.9,
            shear_coefficients: [1.0, 0.4],
            moment_coefficients: [1.1, 0.6],
        }
    }
}

/// Aerodynamic torque and thrust at one operating condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorLoads {
    /// MN·m
    pub torque: f64,
    /// MN
    pub thrust: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SyntheticFowt {
    pub params: FowtParams,
}

fn soft_positive(v: f64) -> f64 {
    // smooth max(v, 0) with a 0.25 m/s transition
    let k = 4.0;
    if k * v > 30.0 {
        v
    } else {
        (1.0 + (k * v).exp()).ln() / k
    }
}

impl SyntheticFowt {
    pub fn new(params: FowtParams) -> Self {
        SyntheticFowt { params }
    }

    fn natural_omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.params.pitch_frequency
    }

    /// Rotor torque and thrust for a rotor-relative wind, speed and blade pitch.
    pub fn rotor_loads(&self, rel_wind: f64, speed_rpm: f64, pitch_deg: f64) -> RotorLoads {
        let p = &self.params;
        let area = std::f64::consts::PI * p.rotor_radius * p.rotor_radius;
        let wind = soft_positive(rel_wind).max(1e-6);
        let omega = speed_rpm * RPM;
        let tsr = ((omega * p.rotor_radius / wind).powi(2) + 0.25).sqrt();
        let inv = 1.0 / (tsr + 0.08 * pitch_deg) - 0.035 / (pitch_deg.powi(3) + 1.0);
        let cp = 0.22 * (116.0 * inv - 0.4 * pitch_deg - 5.0) * (-12.5 * inv).exp();
        let ct = p.thrust_coefficient_scale * (1.0 - (-0.35 * tsr).exp()) * (-0.06 * pitch_deg).exp();
        let power = 0.5 * p.air_density * area * cp * wind.powi(3);
        let rotor_speed = (omega * omega + 1e-4).sqrt();
        RotorLoads {
            torque: power / rotor_speed / 1e6,
            thrust: 0.5 * p.air_density * area * ct * wind * wind / 1e6,
        }
    }

    /// Platform pitch acceleration (deg/s²) for a given state and thrust (MN).
    pub fn pitch_acceleration(&self, state: &[f64; 4], thrust: f64) -> f64 {
        let wn = self.natural_omega();
        -2.0 * self.params.pitch_damping_ratio * wn * state[2] - wn * wn * state[0] + self.params.thrust_gain * thrust
    }

    fn relative_wind(&self, state: &[f64; 4], wind: f64) -> f64 {
        wind - self.params.hub_height * state[2].to_radians()
    }

    /// State derivative and outputs; no range checking.
    pub fn eval(&self, state: &[f64; 4], control: &[f64; 2], wind: f64) -> ([f64; 4], [f64; 2]) {
        let p = &self.params;
        let loads = self.rotor_loads(self.relative_wind(state, wind), state[1], control[1]);
        let pitch_acc = self.pitch_acceleration(state, loads.thrust);
        let torque_gain = 1e6 / p.drivetrain_inertia / RPM;
        let gen_jerk = (torque_gain * (loads.torque - control[0]) - state[3]) / p.drivetrain_lag;
        let deriv = [state[2], state[3], pitch_acc, gen_jerk];
        let outputs = [
            p.shear_coefficients[0] * loads.thrust + p.shear_coefficients[1] * pitch_acc,
            p.moment_coefficients[0] * loads.thrust + p.moment_coefficients[1] * pitch_acc,
        ];
        (deriv, outputs)
    }

    /// Steady operating point at `wind` for fixed controls on the stable
    /// (torque decreasing with speed) branch within `[1, 12]` rpm.
    pub fn equilibrium(&self, wind: f64, torque: f64, pitch: f64) -> Option<[f64; 4]> {
        let excess = |speed: f64| self.rotor_loads(wind, speed, pitch).torque - torque;
        // scan down from high speed for the first sign change (+ below, − above)
        let n = 400;
        let (lo, hi) = (1.0, 12.0);
        let mut prev_s = hi;
        let mut prev_v = excess(hi);
        for i in (0..n).rev() {
            let s = lo + (hi - lo) * i as f64 / n as f64;
            let v = excess(s);
            if v > 0.0 && prev_v <= 0.0 {
                let speed = bisect(excess, s, prev_s)?;
                let thrust = self.rotor_loads(wind, speed, pitch).thrust;
                let wn = self.natural_omega();
                let pitch_angle = self.params.thrust_gain * thrust / (wn * wn);
                return Some([pitch_angle, speed, 0.0, 0.0]);
            }
            prev_s = s;
            prev_v = v;
        }
        None
    }

    /// Blade pitch in `[0, 30]` deg that holds `speed` at `torque` and `wind`,
    /// choosing the smallest such pitch.
    pub fn pitch_for_speed(&self, wind: f64, torque: f64, speed: f64) -> Option<f64> {
        let excess = |pitch: f64| self.rotor_loads(wind, speed, pitch).torque - torque;
        let n = 600;
        let mut prev_b = 0.0;
        let mut prev_v = excess(0.0);
        for i in 1..=n {
            let b = 30.0 * i as f64 / n as f64;
            let v = excess(b);
            if prev_v > 0.0 && v <= 0.0 {
                return bisect(excess, prev_b, b);
            }
            prev_b = b;
            prev_v = v;
        }
        None
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a) < 1e-14 * m.abs().max(1.0) {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

fn check_wind(wind: f64) -> Result<()> {
    if !(WIND_RANGE.0..=WIND_RANGE.1).contains(&wind) {
        return Err(Error::invalid(format!(
            "wind speed {wind} m/s outside [{}, {}]",
            WIND_RANGE.0, WIND_RANGE.1
        )));
    }
    Ok(())
}

/// Evaluates the default fixture, returning `(state derivative, outputs)`.
pub fn eval_synthetic_fowt(state: &[f64], control: &[f64], wind: f64) -> Result<([f64; 4], [f64; 2])> {
    check_wind(wind)?;
    let x: [f64; 4] = state
        .try_into()
        .map_err(|_| Error::invalid("turbine state needs 4 entries"))?;
    let u: [f64; 2] = control
        .try_into()
        .map_err(|_| Error::invalid("turbine control needs 2 entries"))?;
    Ok(SyntheticFowt::default().eval(&x, &u, wind))
}

impl StateSpaceSystem for SyntheticFowt {
    fn n_states(&self) -> usize {
        4
    }
    fn n_controls(&self) -> usize {
        2
    }
    fn n_outputs(&self) -> usize {
        2
    }
    fn n_params(&self) -> usize {
        1
    }

    fn deriv(&self, x: &[f64], u: &[f64], w: &[f64], dx: &mut [f64]) -> Result<()> {
        let (d, _) = eval_synthetic_fowt(x, u, w[0])?;
        dx.copy_from_slice(&d);
        Ok(())
    }

    fn output(&self, x: &[f64], u: &[f64], w: &[f64], y: &mut [f64]) -> Result<()> {
        let (_, out) = eval_synthetic_fowt(x, u, w[0])?;
        y.copy_from_slice(&out);
        Ok(())
    }

    fn channel_names(&self) -> ChannelNames {
        ChannelNames {
            controls: vec!["tau_g".into(), "beta".into()],
            states: vec![
                "theta_p".into(),
                "omega_g".into(),
                "theta_p_dot".into(),
                "omega_g_dot".into(),
            ],
            outputs: vec!["T_F".into(), "T_M".into()],
            sched: Some("wind".into()),
        }
    }

    fn analytic_jacobians(&self, _x: &[f64], _u: &[f64], _w: &[f64]) -> Option<Result<Jacobians>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_has_zero_derivative() {
        let fowt = SyntheticFowt::default();
        for (torque, pitch) in [(19.9, 8.0), (15.0, 11.0), (10.0, 14.0)] {
            let x = fowt.equilibrium(12.0, torque, pitch).expect("operating point");
            let (d, _) = eval_synthetic_fowt(&x, &[torque, pitch], 12.0).unwrap();
            for v in d {
                assert!(v.abs() < 1e-9, "{d:?} at {x:?}");
            }
            // stable branch
            let hi = fowt.rotor_loads(12.0, x[1] + 0.01, pitch).torque;
            let lo = fowt.rotor_loads(12.0, x[1] - 0.01, pitch).torque;
            assert!(hi < lo);
        }
    }

    #[test]
    fn rotor_accelerates_without_generator_torque() {
        let state = [0.0, 2.0, 0.0, 0.0];
        let (d, _) = eval_synthetic_fowt(&state, &[0.0, 0.0], 3.0).unwrap();
        assert!(d[3] > 0.0, "{d:?}");
    }

    #[test]
    fn more_thrust_means_more_pitch_acceleration() {
        let fowt = SyntheticFowt::default();
        let state = [2.0, 6.0, 0.3, 0.0];
        let a1 = fowt.pitch_acceleration(&state, 1.5);
        let a2 = fowt.pitch_acceleration(&state, 3.0);
        assert!(a2 > a1);
    }

    #[test]
    fn wind_out_of_range_is_rejected() {
        assert!(eval_synthetic_fowt(&[0.0; 4], &[1.0, 0.0], 2.0).is_err());
        assert!(eval_synthetic_fowt(&[0.0; 4], &[1.0, 0.0], 26.0).is_err());
    }

    #[test]
    fn pitch_natural_frequency_below_one_hz() {
        let fowt = SyntheticFowt::default();
        assert!(fowt.params.pitch_frequency > 0.0 && fowt.params.pitch_frequency < 1.0);
    }

    #[test]
    fn pitch_for_speed_holds_speed() {
        let fowt = SyntheticFowt::default();
        let b = fowt.pitch_for_speed(12.0, 19.9, 7.0).unwrap();
        let x = fowt.equilibrium(12.0, 19.9, b).unwrap();
        assert!((x[1] - 7.0).abs() < 1e-6, "{x:?}");
    }
}
