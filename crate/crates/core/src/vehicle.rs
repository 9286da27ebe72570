//! Rear-wheel-drive kinematic bicycle model and its RK4 discretization.

#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{normalize_angle, FloatExt as _};
use core::f64::consts::FRAC_PI_2;

/// Vehicle state: position, heading, steering angle and longitudinal speed.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading, normalized to (-pi, pi].
    pub phi: f64,
    /// Front-wheel steering angle.
    pub delta: f64,
    /// Longitudinal speed.
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, phi: f64, delta: f64, v: f64) -> Self {
        VehicleState {
            x,
            y,
            phi: normalize_angle(phi),
            delta,
            v,
        }
    }

    pub fn pose(&self) -> crate::math::Pose {
        crate::math::Pose::new(self.x, self.y, self.phi)
    }

    pub fn position(&self) -> crate::math::Vec2 {
        crate::math::Vec2::new(self.x, self.y)
    }
}

/// Control input: steering rate and longitudinal acceleration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlInput {
    pub delta_rate: f64,
    pub accel: f64,
}

impl ControlInput {
    pub fn new(delta_rate: f64, accel: f64) -> Self {
        ControlInput { delta_rate, accel }
    }
}

/// Physical limits and collision footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct VehicleLimits {
    /// Distance between the two wheel axes.
    pub wheelbase_l: f64,
    pub delta_max: f64,
    pub delta_rate_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        VehicleLimits {
            wheelbase_l: 2.9,
            delta_max: 0.52,
            delta_rate_max: 0.7,
            accel_min: -6.0,
            accel_max: 3.0,
            v_min: 0.0,
            v_max: 15.0,
            half_length: 2.3,
            half_width: 0.95,
        }
    }
}

impl VehicleLimits {
    pub fn clamp_input(&self, input: ControlInput) -> (ControlInput, bool) {
        let d = input
            .delta_rate
            .clamp(-self.delta_rate_max, self.delta_rate_max);
        let a = input.accel.clamp(self.accel_min, self.accel_max);
        let saturated = d != input.delta_rate || a != input.accel;
        (ControlInput::new(d, a), saturated)
    }
}

/// Time derivative of the vehicle state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
    pub ddelta: f64,
    pub dv: f64,
}

/// Which quantities were clamped while integrating.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Saturation {
    pub delta: bool,
    pub v: bool,
    pub input: bool,
}

impl Saturation {
    pub fn any(&self) -> bool {
        self.delta || self.v || self.input
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsError {
    /// Steering at or beyond pi/2 makes tan(delta) blow up.
    SingularSteering {
        delta: f64,
    },
    NonFinite,
}

impl core::fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DynamicsError::SingularSteering { delta } => {
                write!(f, "singular steering angle {delta} (|delta| >= pi/2)")
            }
            DynamicsError::NonFinite => write!(f, "non-finite state or input"),
        }
    }
}

impl core::error::Error for DynamicsError {}

/// Continuous-time bicycle dynamics:
/// `[v cos(phi), v sin(phi), (v/L) tan(delta), delta_rate, accel]`.
pub fn derivative(
    state: &VehicleState,
    input: &ControlInput,
    limits: &VehicleLimits,
) -> Result<StateDerivative, DynamicsError> {
    if !(state.x.is_finite()
        && state.y.is_finite()
        && state.phi.is_finite()
        && state.delta.is_finite()
        && state.v.is_finite()
        && input.delta_rate.is_finite()
        && input.accel.is_finite())
    {
        return Err(DynamicsError::NonFinite);
    }
    if state.delta.abs() >= FRAC_PI_2 {
        return Err(DynamicsError::SingularSteering { delta: state.delta });
    }
    let (s, c) = state.phi.sin_cos();
    Ok(StateDerivative {
        dx: state.v * c,
        dy: state.v * s,
        dphi: state.v / limits.wheelbase_l * state.delta.tan(),
        ddelta: input.delta_rate,
        dv: input.accel,
    })
}

/// One fourth-order Runge-Kutta step with inputs held constant over `dt`.
/// The resulting steering angle and speed are clamped to the limits.
pub fn integrate(
    state: &VehicleState,
    input: &ControlInput,
    limits: &VehicleLimits,
    dt: f64,
) -> Result<(VehicleState, Saturation), DynamicsError> {
    debug_assert!(dt > 0.0);
    let (input, input_sat) = limits.clamp_input(*input);

    let add = |s: &VehicleState, d: &StateDerivative, h: f64| VehicleState {
        x: s.x + h * d.dx,
        y: s.y + h * d.dy,
        phi: s.phi + h * d.dphi,
        delta: s.delta + h * d.ddelta,
        v: s.v + h * d.dv,
    };

    let k1 = derivative(state, &input, limits)?;
    let k2 = derivative(&add(state, &k1, dt * 0.5), &input, limits)?;
    let k3 = derivative(&add(state, &k2, dt * 0.5), &input, limits)?;
    let k4 = derivative(&add(state, &k3, dt), &input, limits)?;

    let sixth = dt / 6.0;
    let mut next = VehicleState {
        x: state.x + sixth * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
        y: state.y + sixth * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy),
        phi: state.phi + sixth * (k1.dphi + 2.0 * k2.dphi + 2.0 * k3.dphi + k4.dphi),
        delta: state.delta + sixth * (k1.ddelta + 2.0 * k2.ddelta + 2.0 * k3.ddelta + k4.ddelta),
        v: state.v + sixth * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv),
    };

    let mut sat = Saturation {
        input: input_sat,
        ..Saturation::default()
    };
    let delta_clamped = next.delta.clamp(-limits.delta_max, limits.delta_max);
    if delta_clamped != next.delta {
        sat.delta = true;
        next.delta = delta_clamped;
    }
    let v_clamped = next.v.clamp(limits.v_min, limits.v_max);
    if v_clamped != next.v {
        sat.v = true;
        next.v = v_clamped;
    }
    next.phi = normalize_angle(next.phi);
    Ok((next, sat))
}
