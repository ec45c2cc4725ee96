//! Slewing-crane dynamics with a spherical-pendulum load.
//!
//! The boom rotates about the vertical axis; the load hangs from the boom tip
//! on a cable of length l. theta1/theta2 are the tangential and radial pendulum
//! angles, theta4 the boom slewing angle, and the control input is the boom
//! angular acceleration. For small pendulum angles:
//!
//! ```text
//! theta1'' = -a1^2 theta1 + a2 theta4'^2 + 2 theta2' theta4'
//! theta2'' = -a1^2 theta2 - a2 u
//! theta4'' = u
//! a1 = sqrt(g / l),  a2 = l_b sin(theta3) / l
//! ```
//!
//! where l_b is the boom length and theta3 the fixed luffing angle. An optional
//! cubic pendulum correction (+ a1^2 theta^3 / 6, the next Taylor term of the
//! full sine) can be switched on to study model mismatch; it is off by default.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use nalgebra::Matrix6;

use crate::error::Error;
use crate::excitation::differentiate_to_acceleration;
use crate::trajectory::{ChannelLayout, Trajectory};
use crate::Result;

/// Geometry and gravity of the crane.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CraneParams {
    /// Boom length l_b in meters.
    pub boom_length: f64,
    /// Cable length l in meters.
    pub cable_length: f64,
    /// Fixed luffing angle theta3 in radians.
    pub luffing_angle: f64,
    /// Gravitational acceleration in m/s^2.
    pub gravity: f64,
    /// Include the cubic pendulum correction terms.
    pub cubic_pendulum_term: bool,
}

impl Default for CraneParams {
    fn default() -> Self {
        Self {
            boom_length: 2.0,
            cable_length: 1.0,
            luffing_angle: std::f64::consts::FRAC_PI_4,
            gravity: 9.81,
            cubic_pendulum_term: false,
        }
    }
}

impl CraneParams {
    /// Pendulum natural frequency a1 = sqrt(g / l).
    pub fn alpha1(&self) -> f64 {
        (self.gravity / self.cable_length).sqrt()
    }

    /// Coupling gain a2 = l_b sin(theta3) / l.
    pub fn alpha2(&self) -> f64 {
        self.boom_length * self.luffing_angle.sin() / self.cable_length
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("boom_length", self.boom_length),
            ("cable_length", self.cable_length),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if !self.luffing_angle.is_finite() {
            return Err(Error::InvalidParameter("luffing_angle must be finite".into()));
        }
        Ok(())
    }
}

/// Full state (angles and rates) of the crane.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct CraneState {
    pub theta1: f64,
    pub theta2: f64,
    pub theta4: f64,
    pub dtheta1: f64,
    pub dtheta2: f64,
    pub dtheta4: f64,
}

impl CraneState {
    /// At rest with the boom parked at the given slewing angle.
    pub fn rest_at(theta4: f64) -> Self {
        Self { theta4, ..Self::default() }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.theta1, self.theta2, self.theta4, self.dtheta1, self.dtheta2, self.dtheta4]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            theta1: x[0],
            theta2: x[1],
            theta4: x[2],
            dtheta1: x[3],
            dtheta2: x[4],
            dtheta4: x[5],
        }
    }
}

/// Measurement noise added to recorded output channels (never to the input).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation on angle channels (rad).
    pub angle_std: f64,
    /// Standard deviation on rate channels (rad/s).
    pub velocity_std: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { angle_std: 0.002, velocity_std: 0.005, seed: 0 }
    }
}

/// Time derivative of the state under boom acceleration `u`.
///
/// The returned struct holds derivatives in the matching slots (theta1 field
/// carries dtheta1, dtheta1 field carries ddtheta1, and so on).
pub fn state_derivative(params: &CraneParams, x: &CraneState, u: f64) -> CraneState {
    let a1sq = params.gravity / params.cable_length;
    let a2 = params.alpha2();
    let mut dd1 = -a1sq * x.theta1 + a2 * x.dtheta4 * x.dtheta4 + 2.0 * x.dtheta2 * x.dtheta4;
    let mut dd2 = -a1sq * x.theta2 - a2 * u;
    if params.cubic_pendulum_term {
        dd1 += a1sq * x.theta1.powi(3) / 6.0;
        dd2 += a1sq * x.theta2.powi(3) / 6.0;
    }
    CraneState {
        theta1: x.dtheta1,
        theta2: x.dtheta2,
        theta4: x.dtheta4,
        dtheta1: dd1,
        dtheta2: dd2,
        dtheta4: u,
    }
}

/// Largest admissible state magnitude before the integrator reports divergence.
pub const STATE_LIMIT: f64 = 1e6;

fn rk4_step(params: &CraneParams, x: &CraneState, u: f64, h: f64) -> CraneState {
    let add = |a: &CraneState, b: &CraneState, s: f64| -> CraneState {
        let av = a.to_array();
        let bv = b.to_array();
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = av[i] + s * bv[i];
        }
        CraneState::from_array(out)
    };
    let k1 = state_derivative(params, x, u);
    let k2 = state_derivative(params, &add(x, &k1, 0.5 * h), u);
    let k3 = state_derivative(params, &add(x, &k2, 0.5 * h), u);
    let k4 = state_derivative(params, &add(x, &k3, h), u);
    let xv = x.to_array();
    let (k1v, k2v, k3v, k4v) = (k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = xv[i] + h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
    CraneState::from_array(out)
}

fn state_ok(x: &CraneState) -> bool {
    x.to_array().iter().all(|v| v.is_finite() && v.abs() <= STATE_LIMIT)
}

/// Fixed-step RK4 simulation with zero-order-hold inputs.
///
/// `inputs` holds one value per output sample: boom accelerations in
/// [`ChannelLayout::AccelerationInput`] mode, commanded boom rates in
/// [`ChannelLayout::VelocityInput`] mode (differentiated internally; the
/// initial boom rate should match the first command). The input is held
/// constant over each 1/rate interval and integrated with substeps of at most
/// 1 ms; sample k records the state reached at the end of interval k. Noise,
/// if given, perturbs only the recorded output channels.
pub fn simulate(
    params: &CraneParams,
    initial: &CraneState,
    inputs: &[f64],
    rate: f64,
    layout: ChannelLayout,
    noise: Option<&NoiseSpec>,
) -> Result<Trajectory> {
    params.validate()?;
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!("rate = {rate} must be positive")));
    }
    if inputs.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidParameter("non-finite input sample".into()));
    }
    if !state_ok(initial) {
        return Err(Error::NonFiniteState { sample: 0 });
    }

    let accel: Vec<f64> = match layout {
        ChannelLayout::AccelerationInput => inputs.to_vec(),
        ChannelLayout::VelocityInput => differentiate_to_acceleration(inputs, rate),
    };

    let q = layout.q();
    let dt = 1.0 / rate;
    let n_sub = (dt / 1e-3).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;

    let mut x = *initial;
    let mut data = Vec::with_capacity(inputs.len() * q);
    for (k, &u) in accel.iter().enumerate() {
        for _ in 0..n_sub {
            x = rk4_step(params, &x, u, h);
            if !state_ok(&x) {
                return Err(Error::NonFiniteState { sample: k });
            }
        }
        match layout {
            ChannelLayout::AccelerationInput => {
                data.extend_from_slice(&[u, x.theta1, x.theta2, x.theta4, x.dtheta4]);
            }
            ChannelLayout::VelocityInput => {
                data.extend_from_slice(&[inputs[k], x.theta1, x.theta2, x.theta4]);
            }
        }
    }

    if let Some(spec) = noise {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let angle = Normal::new(0.0, spec.angle_std)
            .map_err(|_| Error::InvalidParameter("angle_std must be non-negative".into()))?;
        let vel = Normal::new(0.0, spec.velocity_std)
            .map_err(|_| Error::InvalidParameter("velocity_std must be non-negative".into()))?;
        let n = data.len() / q;
        for k in 0..n {
            for c in 1..q {
                let dist = if c == layout.dtheta4() && c != 0 { &vel } else { &angle };
                data[k * q + c] += dist.sample(&mut rng);
            }
        }
    }

    Trajectory::new(q, layout.m(), rate, data, layout.channel_names())
}

/// Accessibility test matrix built from iterated Lie brackets of the drift and
/// input fields, evaluated at the given state. Columns are bracket orders 0..5.
pub fn controllability_matrix(params: &CraneParams, state: &CraneState) -> Matrix6<f64> {
    let a1sq = params.gravity / params.cable_length;
    let a1_4 = a1sq * a1sq;
    let a2 = params.alpha2();
    let th2 = state.theta2;
    let dth2 = state.dtheta2;
    let dth4 = state.dtheta4;
    let d1 = 4.0 * dth2 - a2 * dth4;
    let d2 = 2.0 * dth2 - a2 * dth4;
    #[rustfmt::skip]
    let q = Matrix6::new(
        0.0,        0.0,         2.0 * dth2,    -4.0 * a1sq * th2, -2.0 * a1sq * d1, 16.0 * a1_4 * th2,
        0.0,        -2.0 * dth2, 2.0 * a1sq * th2, 2.0 * a1sq * d2, -8.0 * a1_4 * th2, -4.0 * a1_4 * d1,
        0.0,        a2,          0.0,           -a1sq * a2,        0.0,              a1_4 * a2,
        -a2,        0.0,         a1sq * a2,     0.0,               -a1_4 * a2,       0.0,
        0.0,        -1.0,        0.0,           0.0,               0.0,              0.0,
        1.0,        0.0,         0.0,           0.0,               0.0,              0.0,
    );
    q
}

/// Closed-form determinant of [`controllability_matrix`].
///
/// det = 4 a1^10 a2^2 (18 a1^2 theta2^2 + a2^2 dtheta4^2 - 9 a2 dtheta2 dtheta4 + 18 dtheta2^2).
/// It vanishes exactly on the measure-zero set theta2 = dtheta2 = dtheta4 = 0.
pub fn controllability_det_formula(params: &CraneParams, state: &CraneState) -> f64 {
    let a1sq = params.gravity / params.cable_length;
    let a2 = params.alpha2();
    let th2 = state.theta2;
    let dth2 = state.dtheta2;
    let dth4 = state.dtheta4;
    4.0 * a1sq.powi(5)
        * a2
        * a2
        * (18.0 * a1sq * th2 * th2 + a2 * a2 * dth4 * dth4 - 9.0 * a2 * dth2 * dth4
            + 18.0 * dth2 * dth2)
}

/// Determinant of [`controllability_matrix`] via LU factorization; the
/// independent cross-check for [`controllability_det_formula`].
pub fn controllability_det_lu(params: &CraneParams, state: &CraneState) -> f64 {
    controllability_matrix(params, state).lu().determinant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn derivative_matches_hand_values() {
        let p = CraneParams::default();
        // a2 = 2 sin(pi/4) = sqrt(2)
        assert_relative_eq!(p.alpha2(), std::f64::consts::SQRT_2, epsilon = 1e-15);
        let x = CraneState { dtheta2: 0.2, dtheta4: 0.3, ..Default::default() };
        let d = state_derivative(&p, &x, 0.0);
        assert_relative_eq!(d.dtheta1, std::f64::consts::SQRT_2 * 0.09 + 0.12, epsilon = 1e-15);

        let x2 = CraneState { theta1: 0.1, ..Default::default() };
        let d2 = state_derivative(&p, &x2, 0.0);
        assert_relative_eq!(d2.dtheta1, -0.981, epsilon = 1e-12);

        // input enters radial sway with gain -a2 and the boom directly
        let d3 = state_derivative(&p, &CraneState::default(), 0.5);
        assert_relative_eq!(d3.dtheta2, -std::f64::consts::SQRT_2 * 0.5, epsilon = 1e-15);
        assert_relative_eq!(d3.dtheta4, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cubic_term_adds_taylor_correction() {
        let p = CraneParams { cubic_pendulum_term: true, ..Default::default() };
        let x = CraneState { theta1: 0.3, ..Default::default() };
        let with = state_derivative(&p, &x, 0.0);
        let without = state_derivative(&CraneParams::default(), &x, 0.0);
        assert_relative_eq!(with.dtheta1 - without.dtheta1, 9.81 * 0.3f64.powi(3) / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_state_zero_input_stays_at_rest() {
        let p = CraneParams::default();
        let traj = simulate(
            &p,
            &CraneState::default(),
            &vec![0.0; 100],
            20.0,
            ChannelLayout::AccelerationInput,
            None,
        )
        .unwrap();
        assert_eq!(traj.len(), 100);
        assert!(traj.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn free_pendulum_follows_cosine() {
        let p = CraneParams::default();
        let a1 = p.alpha1();
        let x0 = CraneState { theta1: 0.05, ..Default::default() };
        let traj =
            simulate(&p, &x0, &vec![0.0; 100], 20.0, ChannelLayout::AccelerationInput, None)
                .unwrap();
        for k in 0..100 {
            let t = (k + 1) as f64 / 20.0;
            assert_relative_eq!(traj.value(k, 1), 0.05 * (a1 * t).cos(), epsilon = 1e-6);
        }
    }

    #[test]
    fn boom_is_a_double_integrator() {
        let p = CraneParams::default();
        let traj = simulate(
            &p,
            &CraneState::default(),
            &vec![0.1; 20],
            20.0,
            ChannelLayout::AccelerationInput,
            None,
        )
        .unwrap();
        // after t = 1 s of constant 0.1 rad/s^2
        assert_relative_eq!(traj.value(19, 4), 0.1, epsilon = 1e-12);
        assert_relative_eq!(traj.value(19, 3), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn velocity_mode_records_commands_and_integrates() {
        let p = CraneParams::default();
        let v = vec![0.0, 0.1, 0.2, 0.3];
        let traj = simulate(
            &p,
            &CraneState::default(),
            &v,
            20.0,
            ChannelLayout::VelocityInput,
            None,
        )
        .unwrap();
        assert_eq!(traj.q(), 4);
        for k in 0..4 {
            assert_eq!(traj.value(k, 0), v[k]);
        }
        // piecewise-linear rate: last interval repeats the final slope
        let expected_theta4 = (0.05 + 0.15 + 0.25 + 0.35) * 0.05;
        assert_relative_eq!(traj.value(3, 3), expected_theta4, epsilon = 1e-12);
    }

    #[test]
    fn noise_is_seeded_and_skips_input_channel() {
        let p = CraneParams::default();
        let inputs = vec![0.01; 50];
        let spec = NoiseSpec { seed: 7, ..Default::default() };
        let a = simulate(&p, &CraneState::default(), &inputs, 20.0, ChannelLayout::AccelerationInput, Some(&spec)).unwrap();
        let b = simulate(&p, &CraneState::default(), &inputs, 20.0, ChannelLayout::AccelerationInput, Some(&spec)).unwrap();
        let clean = simulate(&p, &CraneState::default(), &inputs, 20.0, ChannelLayout::AccelerationInput, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.channel(0), clean.channel(0));
        assert_ne!(a.channel(1), clean.channel(1));
        let other = NoiseSpec { seed: 8, ..Default::default() };
        let c = simulate(&p, &CraneState::default(), &inputs, 20.0, ChannelLayout::AccelerationInput, Some(&other)).unwrap();
        assert_ne!(a.channel(1), c.channel(1));
    }

    #[test]
    fn divergence_is_reported() {
        let p = CraneParams::default();
        let r = simulate(
            &p,
            &CraneState::default(),
            &[1e12],
            20.0,
            ChannelLayout::AccelerationInput,
            None,
        );
        assert!(matches!(r, Err(Error::NonFiniteState { sample: 0 })));
    }

    #[test]
    fn controllability_first_column_is_input_field() {
        let p = CraneParams::default();
        let q = controllability_matrix(&p, &CraneState::default());
        let col: Vec<f64> = q.column(0).iter().cloned().collect();
        assert_eq!(col, vec![0.0, 0.0, 0.0, -p.alpha2(), 0.0, 1.0]);
    }

    #[test]
    fn determinant_formula_example() {
        // unit-gain crane: a1 = a2 = 1
        let p = CraneParams {
            boom_length: 1.0,
            cable_length: 1.0,
            luffing_angle: std::f64::consts::FRAC_PI_2,
            gravity: 1.0,
            cubic_pendulum_term: false,
        };
        let x = CraneState { theta2: 1.0, ..Default::default() };
        assert_relative_eq!(controllability_det_formula(&p, &x), 72.0, epsilon = 1e-12);
        assert_relative_eq!(controllability_det_lu(&p, &x), 72.0, max_relative = 1e-10);
    }

    #[test]
    fn determinant_routes_agree_on_random_states() {
        let p = CraneParams::default();
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..50 {
            let x = CraneState {
                theta1: rng.gen_range(-0.5..0.5),
                theta2: rng.gen_range(-0.5..0.5),
                theta4: rng.gen_range(-3.0..3.0),
                dtheta1: rng.gen_range(-1.0..1.0),
                dtheta2: rng.gen_range(-1.0..1.0),
                dtheta4: rng.gen_range(-1.0..1.0),
            };
            let f = controllability_det_formula(&p, &x);
            let l = controllability_det_lu(&p, &x);
            assert_relative_eq!(f, l, max_relative = 1e-8);
        }
    }

    #[test]
    fn determinant_vanishes_on_degenerate_set() {
        let p = CraneParams::default();
        let x = CraneState { theta1: 0.2, theta4: 1.0, dtheta1: 0.4, ..Default::default() };
        assert_eq!(controllability_det_formula(&p, &x), 0.0);
        assert!(controllability_det_lu(&p, &x).abs() <= 1e-10);
    }
}
