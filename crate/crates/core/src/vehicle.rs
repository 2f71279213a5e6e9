//! Planar double-track vehicle dynamics.
//!
//! Twelve states: pose (X, Y, psi), body velocities (vx, vy), yaw rate r,
//! travelled distance theta, road-wheel angle delta and the four per-wheel
//! longitudinal forces. The control inputs are the *rates* of delta and of
//! the four forces; the values themselves are integrator states so their
//! magnitudes and rates can both be bounded.
//!
//! The same derivative code serves the controller's prediction model and the
//! plant; it is generic over the scalar so Jacobians fall out of dual-number
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::math::Real;
use crate::tyre::{self, TyreParams};

pub const N_STATES: usize = 12;
pub const N_RATES: usize = 5;

/// State vector indices.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const PSI: usize = 2;
    pub const VX: usize = 3;
    pub const VY: usize = 4;
    pub const R: usize = 5;
    pub const THETA: usize = 6;
    pub const DELTA: usize = 7;
    pub const FX_FL: usize = 8;
    pub const FX_FR: usize = 9;
    pub const FX_RL: usize = 10;
    pub const FX_RR: usize = 11;
}

/// Wheels below this effective forward speed use the floor instead, keeping
/// slip angles well defined near standstill.
pub const MIN_WHEEL_SPEED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass [kg]
    pub m: f64,
    /// Yaw inertia [kg m^2]
    pub izz: f64,
    /// CoG to front axle [m]
    pub lf: f64,
    /// CoG to rear axle [m]
    pub lr: f64,
    /// Front track width [m]
    pub tf: f64,
    /// Rear track width [m]
    pub tr: f64,
    /// Air density [kg/m^3]
    pub rho: f64,
    /// Drag coefficient [-]
    pub cd1: f64,
    /// Rolling resistance [N]
    pub cd0: f64,
    /// Frontal area [m^2]
    pub af: f64,
    /// CoG height [m]
    pub hcog: f64,
    /// Gravity [m/s^2]
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            m: 1997.0,
            izz: 3198.0,
            lf: 1.430,
            lr: 1.455,
            tf: 1.540,
            tr: 1.576,
            rho: 1.204,
            cd1: 0.25,
            cd0: 45.0,
            af: 2.4,
            hcog: 0.52,
            g: 9.81,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            self.m, self.izz, self.lf, self.lr, self.tf, self.tr, self.rho, self.cd1, self.cd0,
            self.af, self.hcog, self.g,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err("all vehicle parameters must be strictly positive".into());
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
    pub theta: f64,
    pub delta: f64,
    pub fx_fl: f64,
    pub fx_fr: f64,
    pub fx_rl: f64,
    pub fx_rr: f64,
}

impl VehicleState {
    pub fn to_array(self) -> [f64; N_STATES] {
        [
            self.x, self.y, self.psi, self.vx, self.vy, self.r, self.theta, self.delta,
            self.fx_fl, self.fx_fr, self.fx_rl, self.fx_rr,
        ]
    }

    pub fn from_array(a: &[f64; N_STATES]) -> Self {
        VehicleState {
            x: a[idx::X],
            y: a[idx::Y],
            psi: a[idx::PSI],
            vx: a[idx::VX],
            vy: a[idx::VY],
            r: a[idx::R],
            theta: a[idx::THETA],
            delta: a[idx::DELTA],
            fx_fl: a[idx::FX_FL],
            fx_fr: a[idx::FX_FR],
            fx_rl: a[idx::FX_RL],
            fx_rr: a[idx::FX_RR],
        }
    }

    /// Sideslip angle at the CoG [rad].
    pub fn sideslip(&self) -> f64 {
        self.vy.atan2(self.vx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlRates {
    pub ddelta: f64,
    pub dfx_fl: f64,
    pub dfx_fr: f64,
    pub dfx_rl: f64,
    pub dfx_rr: f64,
}

impl ControlRates {
    pub fn to_array(self) -> [f64; N_RATES] {
        [self.ddelta, self.dfx_fl, self.dfx_fr, self.dfx_rl, self.dfx_rr]
    }

    pub fn from_array(a: &[f64; N_RATES]) -> Self {
        ControlRates {
            ddelta: a[0],
            dfx_fl: a[1],
            dfx_fr: a[2],
            dfx_rl: a[3],
            dfx_rr: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelLoads {
    pub fz_fl: f64,
    pub fz_fr: f64,
    pub fz_rl: f64,
    pub fz_rr: f64,
}

impl WheelLoads {
    pub fn to_array(self) -> [f64; 4] {
        [self.fz_fl, self.fz_fr, self.fz_rl, self.fz_rr]
    }
    pub fn from_array(a: &[f64; 4]) -> Self {
        WheelLoads { fz_fl: a[0], fz_fr: a[1], fz_rl: a[2], fz_rr: a[3] }
    }
}

/// Aerodynamic drag plus rolling resistance [N].
pub fn resistance_force<R: Real>(vx: R, p: &VehicleParams) -> R {
    R::from_f64(0.5 * p.rho * p.af * p.cd1) * vx * vx + R::from_f64(p.cd0)
}

/// Slip angles (fl, fr, rl, rr) [rad] from the wheel-centre velocities.
pub fn wheel_slip_angles<R: Real>(s: &[R; N_STATES], p: &VehicleParams) -> [R; 4] {
    let vx = s[idx::VX];
    let vy = s[idx::VY];
    let r = s[idx::R];
    let delta = s[idx::DELTA];
    let floor = R::from_f64(MIN_WHEEL_SPEED);
    let half_tf = R::from_f64(0.5 * p.tf);
    let half_tr = R::from_f64(0.5 * p.tr);
    let vy_f = vy + R::from_f64(p.lf) * r;
    let vy_r = vy - R::from_f64(p.lr) * r;
    let ux_fl = (vx - half_tf * r).max_by_value(floor);
    let ux_fr = (vx + half_tf * r).max_by_value(floor);
    let ux_rl = (vx - half_tr * r).max_by_value(floor);
    let ux_rr = (vx + half_tr * r).max_by_value(floor);
    [
        vy_f.atan2(ux_fl) - delta,
        vy_f.atan2(ux_fr) - delta,
        vy_r.atan2(ux_rl),
        vy_r.atan2(ux_rr),
    ]
}

/// Quasi-static vertical loads (fl, fr, rl, rr) [N].
///
/// Static lever-arm split plus longitudinal transfer `m ax hcog / L` between
/// the axles and lateral transfer `m ay hcog / t` per axle, the latter split
/// in proportion to the static axle loads. Loads are clamped at zero; the
/// sum equals `m g` before clamping.
pub fn wheel_vertical_loads<R: Real>(ax: R, ay: R, p: &VehicleParams) -> [R; 4] {
    let zero = R::from_f64(0.0);
    let raw = wheel_vertical_loads_unclamped(ax, ay, p);
    [
        raw[0].max_by_value(zero),
        raw[1].max_by_value(zero),
        raw[2].max_by_value(zero),
        raw[3].max_by_value(zero),
    ]
}

/// Transfer balance before the zero clamp; the four entries sum to `m g`.
pub fn wheel_vertical_loads_unclamped<R: Real>(ax: R, ay: R, p: &VehicleParams) -> [R; 4] {
    let half = R::from_f64(0.5);
    let length = p.wheelbase();
    let w_front = p.lr / length;
    let w_rear = p.lf / length;
    let mg = R::from_f64(p.m * p.g);
    let fz_front_static = mg * R::from_f64(w_front);
    let fz_rear_static = mg * R::from_f64(w_rear);

    // Positive ax (acceleration) unloads the front axle.
    let d_long = R::from_f64(p.m * p.hcog / length) * ax;
    let fz_front_axle = fz_front_static - d_long;
    let fz_rear_axle = fz_rear_static + d_long;

    // Positive ay (leftward) loads the right side.
    let d_lat_f = R::from_f64(p.m * p.hcog / p.tf * w_front) * ay;
    let d_lat_r = R::from_f64(p.m * p.hcog / p.tr * w_rear) * ay;

    [
        half * fz_front_axle - d_lat_f,
        half * fz_front_axle + d_lat_f,
        half * fz_rear_axle - d_lat_r,
        half * fz_rear_axle + d_lat_r,
    ]
}

/// Typed wrapper over [`wheel_vertical_loads`].
pub fn wheel_loads(ax: f64, ay: f64, p: &VehicleParams) -> WheelLoads {
    WheelLoads::from_array(&wheel_vertical_loads(ax, ay, p))
}

/// Time derivative of the full state for given per-wheel vertical loads.
pub fn state_derivative<R: Real>(
    s: &[R; N_STATES],
    u: &[R; N_RATES],
    loads: &[R; 4],
    tp: &TyreParams,
    p: &VehicleParams,
) -> [R; N_STATES] {
    let alphas = wheel_slip_angles(s, p);
    let fx = [s[idx::FX_FL], s[idx::FX_FR], s[idx::FX_RL], s[idx::FX_RR]];
    let mut fy = [R::from_f64(0.0); 4];
    for w in 0..4 {
        fy[w] = tyre::lateral_force_generic(alphas[w], fx[w], loads[w], tp);
    }

    let psi = s[idx::PSI];
    let vx = s[idx::VX];
    let vy = s[idx::VY];
    let r = s[idx::R];
    let delta = s[idx::DELTA];
    let (sp, cp) = (psi.sin(), psi.cos());
    let (sd, cd) = (delta.sin(), delta.cos());

    let fx_f = fx[0] + fx[1];
    let fx_r = fx[2] + fx[3];
    let fy_f = fy[0] + fy[1];
    let fy_r = fy[2] + fy[3];
    let inv_m = R::from_f64(1.0 / p.m);
    let resist = resistance_force(vx, p);

    let dvx = (fx_f * cd - fy_f * sd + fx_r - resist) * inv_m + r * vy;
    let dvy = (fx_f * sd + fy_f * cd + fy_r) * inv_m - r * vx;

    let lf = R::from_f64(p.lf);
    let lr = R::from_f64(p.lr);
    let half_tf = R::from_f64(0.5 * p.tf);
    let half_tr = R::from_f64(0.5 * p.tr);
    let yaw_moment = lf * cd * fy_f - lr * fy_r + lf * sd * fx_f
        + half_tf * cd * (fx[1] - fx[0])
        + half_tf * sd * (fy[0] - fy[1])
        + half_tr * (fx[3] - fx[2]);
    let dr = yaw_moment * R::from_f64(1.0 / p.izz);

    [
        vx * cp - vy * sp,
        vx * sp + vy * cp,
        r,
        dvx,
        dvy,
        dr,
        (vx * vx + vy * vy).sqrt(),
        u[0],
        u[1],
        u[2],
        u[3],
        u[4],
    ]
}

/// Derivative with loads resolved by a two-pass quasi-static estimate:
/// a first pass on static loads yields (ax, ay), which set the final loads.
/// Returns the derivative together with the loads used.
pub fn dynamics_with_load_transfer<R: Real>(
    s: &[R; N_STATES],
    u: &[R; N_RATES],
    tp: &TyreParams,
    p: &VehicleParams,
) -> ([R; N_STATES], [R; 4]) {
    let zero = R::from_f64(0.0);
    let static_loads = wheel_vertical_loads(zero, zero, p);
    let d0 = state_derivative(s, u, &static_loads, tp, p);
    let ax = d0[idx::VX] - s[idx::R] * s[idx::VY];
    let ay = d0[idx::VY] + s[idx::R] * s[idx::VX];
    let loads = wheel_vertical_loads(ax, ay, p);
    let d = state_derivative(s, u, &loads, tp, p);
    (d, loads)
}

/// Body-frame accelerations implied by a state derivative.
pub fn body_accelerations<R: Real>(s: &[R; N_STATES], deriv: &[R; N_STATES]) -> (R, R) {
    (
        deriv[idx::VX] - s[idx::R] * s[idx::VY],
        deriv[idx::VY] + s[idx::R] * s[idx::VX],
    )
}

/// One explicit-midpoint step of the full model with quasi-static loads.
pub fn rk2_step<R: Real>(
    s: &[R; N_STATES],
    u: &[R; N_RATES],
    dt: f64,
    tp: &TyreParams,
    p: &VehicleParams,
) -> [R; N_STATES] {
    crate::math::rk2_step_generic(s, R::from_f64(dt), |x| {
        dynamics_with_load_transfer(x, u, tp, p).0
    })
}

/// Typed wrapper for closed-loop code.
pub fn step_vehicle(
    s: &VehicleState,
    u: &ControlRates,
    dt: f64,
    tp: &TyreParams,
    p: &VehicleParams,
) -> VehicleState {
    VehicleState::from_array(&rk2_step(&s.to_array(), &u.to_array(), dt, tp, p))
}
