//! Per-cycle optimal-control problem for the contouring controller.
//!
//! Multiple-shooting transcription over an N-step horizon: decision
//! variables are the five input rates and the twelve successor states per
//! stage, dynamics enter as defect equalities through the shared RK2 step,
//! and the cost stacks tracking, input-rate and obstacle-prioritisation
//! terms. Obstacle weights, friction bounds and torque-vectoring bounds are
//! frozen from the warm-start trajectory for each solve, so the subproblems
//! see them as data.

mod nlp;

pub use nlp::OcpNlp;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::math::Real;
use crate::track::{ReferencePath, Scenario};
use crate::tyre::TyreParams;
use crate::vehicle::{
    self, idx, ControlRates, VehicleParams, WheelLoads, N_RATES, N_STATES,
};

pub const VARS_PER_STAGE: usize = N_STATES + N_RATES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub q_con: f64,
    pub q_lag: f64,
    pub q_vel: f64,
    pub q_ddelta: f64,
    pub q_dfx_fl: f64,
    pub q_dfx_fr: f64,
    pub q_dfx_rl: f64,
    pub q_dfx_rr: f64,
    /// Ceiling of the dynamic obstacle/edge weights.
    pub pk: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            q_con: 1.0,
            q_lag: 10.0,
            q_vel: 0.05,
            q_ddelta: 1e-4,
            q_dfx_fl: 1e-8,
            q_dfx_fr: 1e-8,
            q_dfx_rl: 1e-8,
            q_dfx_rr: 1e-8,
            pk: 100.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.q_con, self.q_lag, self.q_vel, self.q_ddelta, self.q_dfx_fl, self.q_dfx_fr,
            self.q_dfx_rl, self.q_dfx_rr, self.pk,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("cost weights must be finite and non-negative".into());
        }
        if self.q_vel > self.q_con {
            log::warn!(
                "velocity weight {} exceeds contouring weight {}; obstacle \
                 prioritisation relies on the speed being allowed to drop",
                self.q_vel,
                self.q_con
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintParams {
    /// Friction-circle safety factor, in (0, 1].
    pub sf: f64,
    /// Straight-line torque-vectoring allowance factor.
    pub ts_tv: f64,
    /// Road-wheel angle bound [rad]
    pub delta_max: f64,
    /// Steering rate bound [rad/s]
    pub ddelta_max: f64,
    /// Per-wheel longitudinal force bound [N]
    pub fx_max: f64,
    /// Per-wheel force rate bound [N/s]
    pub dfx_max: f64,
}

impl Default for ConstraintParams {
    fn default() -> Self {
        ConstraintParams {
            sf: 0.9,
            ts_tv: 2.0,
            delta_max: 18.0f64.to_radians(),
            ddelta_max: 90.0f64.to_radians(),
            fx_max: 3600.0,
            dfx_max: 7200.0,
        }
    }
}

impl ConstraintParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sf > 0.0 && self.sf <= 1.0) {
            return Err("friction safety factor must lie in (0, 1]".into());
        }
        if self.ts_tv <= 0.0 {
            return Err("torque-vectoring allowance must be positive".into());
        }
        if [self.delta_max, self.ddelta_max, self.fx_max, self.dfx_max]
            .iter()
            .any(|v| !v.is_finite() || *v <= 0.0)
        {
            return Err("actuation bounds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub n: usize,
    pub dt: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig { n: 30, dt: 0.05 }
    }
}

/// Controller variant switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantFlags {
    /// Allow unequal left/right forces; when false each axle is forced to an
    /// equal split.
    pub enable_tv: bool,
    /// Include the obstacle/edge prioritisation cost.
    pub enable_ca: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        VariantFlags { enable_tv: true, enable_ca: true }
    }
}

/// Contouring and lag errors of a position against the path point at the
/// travelled distance `theta`.
pub fn contouring_lag_errors<R: Real>(
    x: R,
    y: R,
    theta: R,
    path: &ReferencePath,
) -> (R, R) {
    let (xt, yt, psit) = path.sample(theta);
    let (sp, cp) = (psit.sin(), psit.cos());
    let dx = x - xt;
    let dy = y - yt;
    let e_con = sp * dx - cp * dy;
    let e_lag = -(cp * dx) - sp * dy;
    (e_con, e_lag)
}

/// Stacked tracking cost over per-stage (e_con, e_lag, e_vel) triples.
pub fn tracking_cost(stages: &[(f64, f64, f64)], w: &CostWeights) -> f64 {
    stages
        .iter()
        .map(|(ec, el, ev)| w.q_con * ec * ec + w.q_lag * el * el + w.q_vel * ev * ev)
        .sum()
}

/// Stacked input-rate cost.
pub fn input_cost(stages: &[ControlRates], w: &CostWeights) -> f64 {
    stages
        .iter()
        .map(|u| {
            w.q_ddelta * u.ddelta * u.ddelta
                + w.q_dfx_fl * u.dfx_fl * u.dfx_fl
                + w.q_dfx_fr * u.dfx_fr * u.dfx_fr
                + w.q_dfx_rl * u.dfx_rl * u.dfx_rl
                + w.q_dfx_rr * u.dfx_rr * u.dfx_rr
        })
        .sum()
}

/// Clearance-dependent weight: ceiling inside collision, Gaussian decay to
/// the safety distance, zero beyond it.
pub fn dynamic_weight(d: f64, dsft: f64, pk: f64) -> f64 {
    if d < 0.0 {
        pk
    } else if d <= dsft {
        pk * (-2.0 * d * d / (dsft * dsft)).exp()
    } else {
        0.0
    }
}

/// Obstacle/edge prioritisation cost with weights evaluated from the given
/// clearances themselves.
pub fn obstacle_cost(
    stage_obstacle_clearances: &[Vec<f64>],
    stage_edge_clearances: &[Vec<f64>],
    sc: &Scenario,
    w: &CostWeights,
) -> f64 {
    let mut total = 0.0;
    for clearances in stage_obstacle_clearances {
        for &d in clearances {
            let q = dynamic_weight(d, sc.dsft_obstacle, w.pk);
            let e = d - sc.dsft_obstacle;
            total += q * e * e;
        }
    }
    for clearances in stage_edge_clearances {
        for &d in clearances {
            let q = dynamic_weight(d, sc.dsft_edge, w.pk);
            let e = d - sc.dsft_edge;
            total += q * e * e;
        }
    }
    total
}

/// Per-wheel bound on |Fx|: the scaled friction circle capped by the
/// actuator box.
pub fn friction_circle_bounds(loads: &WheelLoads, cp: &ConstraintParams, mu: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, fz) in loads.to_array().iter().enumerate() {
        out[i] = (cp.sf * mu * fz.max(0.0)).min(cp.fx_max);
    }
    out
}

/// Road-corridor residual at the centerline point matched by `theta`;
/// feasible iff non-positive.
pub fn road_boundary_residual<R: Real>(x: R, y: R, theta: R, path: &ReferencePath) -> R {
    let (xc, yc, _) = path.sample(theta);
    let dx = x - xc;
    let dy = y - yc;
    let half = path.width / 2.0;
    dx * dx + dy * dy - R::from_f64(half * half)
}

/// Straight-line torque-vectoring residuals (front, rear); the allowed
/// left/right force difference scales with the load difference.
pub fn tv_straight_residuals(
    fx: &[f64; 4],
    loads: &WheelLoads,
    cp: &ConstraintParams,
) -> (f64, f64) {
    let front = (fx[0] - fx[1]).abs() - (loads.fz_fl - loads.fz_fr).abs() * cp.ts_tv;
    let rear = (fx[2] - fx[3]).abs() - (loads.fz_rl - loads.fz_rr).abs() * cp.ts_tv;
    (front, rear)
}

/// Frozen per-stage data evaluated on the warm-start trajectory.
#[derive(Debug, Clone)]
pub struct StageData {
    pub loads: WheelLoads,
    pub fx_bounds: [f64; 4],
    pub tv_bound_front: f64,
    pub tv_bound_rear: f64,
    pub obstacle_weights: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

/// Assembled problem for one control cycle.
pub struct OcpProblem<'a> {
    pub x0: [f64; N_STATES],
    pub horizon: HorizonConfig,
    pub weights: CostWeights,
    pub constraints: ConstraintParams,
    pub variant: VariantFlags,
    pub scenario: &'a Scenario,
    pub vehicle: &'a VehicleParams,
    pub tyre: &'a TyreParams,
    /// Initial guess in physical units, stage-major `[u_k, x_{k+1}]`.
    pub warm: DVector<f64>,
    pub stage_data: Vec<StageData>,
}

impl<'a> OcpProblem<'a> {
    pub fn num_vars(&self) -> usize {
        self.horizon.n * VARS_PER_STAGE
    }

    pub fn num_dynamics_eq(&self) -> usize {
        self.horizon.n * N_STATES
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build(
        x0_raw: [f64; N_STATES],
        scenario: &'a Scenario,
        horizon: HorizonConfig,
        weights: CostWeights,
        constraints: ConstraintParams,
        variant: VariantFlags,
        vehicle_params: &'a VehicleParams,
        tyre_params: &'a TyreParams,
        warm: Option<&DVector<f64>>,
    ) -> Self {
        assert!(horizon.n >= 1, "horizon needs at least one stage");
        assert!(horizon.dt > 0.0, "sampling time must be positive");
        let n = horizon.n;

        let mut x0 = x0_raw;
        x0[idx::DELTA] = x0[idx::DELTA].clamp(-constraints.delta_max, constraints.delta_max);
        for k in [idx::FX_FL, idx::FX_FR, idx::FX_RL, idx::FX_RR] {
            x0[k] = x0[k].clamp(-constraints.fx_max, constraints.fx_max);
        }

        let warm_z = match warm {
            Some(prev) if prev.len() == n * VARS_PER_STAGE => {
                shift_warm(prev, n, horizon.dt, tyre_params, vehicle_params)
            }
            _ => hold_trajectory(&x0, n, horizon.dt, tyre_params, vehicle_params),
        };

        let mut stage_data = Vec::with_capacity(n);
        for k in 0..n {
            let xs = stage_state(&warm_z, k);
            let (_, loads_arr) = vehicle::dynamics_with_load_transfer(
                &xs,
                &[0.0; N_RATES],
                tyre_params,
                vehicle_params,
            );
            let loads = WheelLoads::from_array(&loads_arr);
            let fx_bounds = friction_circle_bounds(&loads, &constraints, tyre_params.mu);
            let tv_bound_front = (loads.fz_fl - loads.fz_fr).abs() * constraints.ts_tv;
            let tv_bound_rear = (loads.fz_rl - loads.fz_rr).abs() * constraints.ts_tv;
            let obstacle_weights = scenario
                .obstacle_clearances(xs[idx::X], xs[idx::Y])
                .iter()
                .map(|&d| dynamic_weight(d, scenario.dsft_obstacle, weights.pk))
                .collect();
            let edge_weights = scenario
                .edge_clearances(xs[idx::X], xs[idx::Y], xs[idx::THETA])
                .iter()
                .map(|&d| dynamic_weight(d, scenario.dsft_edge, weights.pk))
                .collect();
            stage_data.push(StageData {
                loads,
                fx_bounds,
                tv_bound_front,
                tv_bound_rear,
                obstacle_weights,
                edge_weights,
            });
        }

        OcpProblem {
            x0,
            horizon,
            weights,
            constraints,
            variant,
            scenario,
            vehicle: vehicle_params,
            tyre: tyre_params,
            warm: warm_z,
            stage_data,
        }
    }

    /// Per-stage cost on physical stage variables.
    pub fn stage_cost<R: Real>(&self, k: usize, u: &[R; N_RATES], xn: &[R; N_STATES]) -> R {
        let w = &self.weights;
        let (e_con, e_lag) =
            contouring_lag_errors(xn[idx::X], xn[idx::Y], xn[idx::THETA], &self.scenario.path);
        let e_vel = xn[idx::VX] - R::from_f64(self.scenario.vdes);
        let mut cost = R::from_f64(w.q_con) * e_con * e_con
            + R::from_f64(w.q_lag) * e_lag * e_lag
            + R::from_f64(w.q_vel) * e_vel * e_vel;

        let qu = [w.q_ddelta, w.q_dfx_fl, w.q_dfx_fr, w.q_dfx_rl, w.q_dfx_rr];
        for (i, q) in qu.iter().enumerate() {
            cost += R::from_f64(*q) * u[i] * u[i];
        }

        if self.variant.enable_ca {
            let data = &self.stage_data[k];
            for (j, obs) in self.scenario.obstacles.iter().enumerate() {
                let q = data.obstacle_weights[j];
                if q > 0.0 {
                    let d = crate::track::v2o_distance(
                        xn[idx::X],
                        xn[idx::Y],
                        obs,
                        self.scenario.rveh,
                    );
                    let e = d - R::from_f64(self.scenario.dsft_obstacle);
                    cost += R::from_f64(q) * e * e;
                }
            }
            if data.edge_weights.iter().any(|&q| q > 0.0) {
                let clearances =
                    self.scenario
                        .edge_clearances(xn[idx::X], xn[idx::Y], xn[idx::THETA]);
                for (j, d) in clearances.into_iter().enumerate() {
                    let q = data.edge_weights[j];
                    if q > 0.0 {
                        let e = d - R::from_f64(self.scenario.dsft_edge);
                        cost += R::from_f64(q) * e * e;
                    }
                }
            }
        }
        cost
    }

    /// Shooting step shared with the plant model.
    pub fn dynamics_step<R: Real>(&self, x: &[R; N_STATES], u: &[R; N_RATES]) -> [R; N_STATES] {
        vehicle::rk2_step(x, u, self.horizon.dt, self.tyre, self.vehicle)
    }

    /// Cost split (tracking, input, obstacle) at a physical trajectory.
    pub fn cost_components(&self, z: &DVector<f64>) -> (f64, f64, f64) {
        let n = self.horizon.n;
        let mut track_stages = Vec::with_capacity(n);
        let mut input_stages = Vec::with_capacity(n);
        let mut obs_clear = Vec::with_capacity(n);
        let mut edge_clear = Vec::with_capacity(n);
        for k in 0..n {
            let u = stage_rates(z, k);
            let x = stage_state(z, k);
            let (ec, el) =
                contouring_lag_errors(x[idx::X], x[idx::Y], x[idx::THETA], &self.scenario.path);
            track_stages.push((ec, el, x[idx::VX] - self.scenario.vdes));
            input_stages.push(ControlRates::from_array(&u));
            obs_clear.push(self.scenario.obstacle_clearances(x[idx::X], x[idx::Y]));
            edge_clear.push(self.scenario.edge_clearances(x[idx::X], x[idx::Y], x[idx::THETA]));
        }
        let j_track = tracking_cost(&track_stages, &self.weights);
        let j_inp = input_cost(&input_stages, &self.weights);
        let j_obs = if self.variant.enable_ca {
            // Weights frozen from the warm trajectory, as in the solve.
            let mut total = 0.0;
            for k in 0..n {
                let data = &self.stage_data[k];
                for (j, &d) in obs_clear[k].iter().enumerate() {
                    let e = d - self.scenario.dsft_obstacle;
                    total += data.obstacle_weights[j] * e * e;
                }
                for (j, &d) in edge_clear[k].iter().enumerate() {
                    let e = d - self.scenario.dsft_edge;
                    total += data.edge_weights[j] * e * e;
                }
            }
            total
        } else {
            0.0
        };
        (j_track, j_inp, j_obs)
    }

    /// Total cost; equals the component sum exactly.
    pub fn total_cost(&self, z: &DVector<f64>) -> f64 {
        let n = self.horizon.n;
        let mut total = 0.0;
        for k in 0..n {
            let u = stage_rates(z, k);
            let x = stage_state(z, k);
            total += self.stage_cost(k, &u, &x);
        }
        total
    }

    /// Torque-vectoring residuals of the first commanded stage, evaluated
    /// against the frozen stage bounds (front, rear).
    pub fn applied_tv_residuals(&self, z: &DVector<f64>) -> (f64, f64) {
        let x1 = stage_state(z, 0);
        let d = &self.stage_data[0];
        (
            (x1[idx::FX_FL] - x1[idx::FX_FR]).abs() - d.tv_bound_front,
            (x1[idx::FX_RL] - x1[idx::FX_RR]).abs() - d.tv_bound_rear,
        )
    }

    /// First-stage rates of a physical solution vector.
    pub fn first_stage_rates(z: &DVector<f64>) -> ControlRates {
        ControlRates::from_array(&stage_rates(z, 0))
    }

    pub fn as_nlp(&'a self) -> OcpNlp<'a> {
        OcpNlp::new(self)
    }
}

pub(crate) fn stage_rates(z: &DVector<f64>, k: usize) -> [f64; N_RATES] {
    let off = k * VARS_PER_STAGE;
    std::array::from_fn(|i| z[off + i])
}

pub(crate) fn stage_state(z: &DVector<f64>, k: usize) -> [f64; N_STATES] {
    let off = k * VARS_PER_STAGE + N_RATES;
    std::array::from_fn(|i| z[off + i])
}

fn write_stage(z: &mut DVector<f64>, k: usize, u: &[f64; N_RATES], x: &[f64; N_STATES]) {
    let off = k * VARS_PER_STAGE;
    for i in 0..N_RATES {
        z[off + i] = u[i];
    }
    for i in 0..N_STATES {
        z[off + N_RATES + i] = x[i];
    }
}

/// Zero-rate trajectory integrated from `x0`.
fn hold_trajectory(
    x0: &[f64; N_STATES],
    n: usize,
    dt: f64,
    tp: &TyreParams,
    vp: &VehicleParams,
) -> DVector<f64> {
    let mut z = DVector::zeros(n * VARS_PER_STAGE);
    let u = [0.0; N_RATES];
    let mut x = *x0;
    for k in 0..n {
        x = vehicle::rk2_step(&x, &u, dt, tp, vp);
        write_stage(&mut z, k, &u, &x);
    }
    z
}

/// Shift the previous solution one stage; the final stage repeats the last
/// input and extends the state by one integration step.
fn shift_warm(
    prev: &DVector<f64>,
    n: usize,
    dt: f64,
    tp: &TyreParams,
    vp: &VehicleParams,
) -> DVector<f64> {
    let mut z = DVector::zeros(n * VARS_PER_STAGE);
    for k in 0..n - 1 {
        let u = stage_rates(prev, k + 1);
        let x = stage_state(prev, k + 1);
        write_stage(&mut z, k, &u, &x);
    }
    let u_last = stage_rates(prev, n - 1);
    let x_tail = stage_state(prev, n - 1);
    let x_new = vehicle::rk2_step(&x_tail, &u_last, dt, tp, vp);
    write_stage(&mut z, n - 1, &u_last, &x_new);
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{build_dlc_scenario, DlcConfig, Obstacle, PathSample, ReferencePath};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use mpcctv_solver::{solve, NlpProblem, SolveOptions, SolveStatus};
    use std::f64::consts::FRAC_PI_2;

    fn straight_scenario(obstacles: Vec<Obstacle>) -> Scenario {
        let samples: Vec<PathSample> = (0..=200)
            .map(|i| PathSample { theta: i as f64, x: i as f64, y: 0.0, psi: 0.0 })
            .collect();
        Scenario {
            path: ReferencePath::new(samples, 7.0).unwrap(),
            obstacles,
            edge_offsets: vec![3.5, -3.5],
            rveh: 1.0,
            vdes: 19.4,
            dsft_obstacle: 5.0,
            dsft_edge: 1.0,
        }
    }

    fn cruise_state(sc: &Scenario, vp: &VehicleParams) -> [f64; N_STATES] {
        let mut x0 = [0.0; N_STATES];
        x0[idx::X] = 10.0;
        x0[idx::THETA] = 10.0;
        x0[idx::VX] = sc.vdes;
        let per_wheel = vehicle::resistance_force(sc.vdes, vp) / 4.0;
        for k in [idx::FX_FL, idx::FX_FR, idx::FX_RL, idx::FX_RR] {
            x0[k] = per_wheel;
        }
        x0
    }

    #[test]
    fn contouring_errors_on_path() {
        let sc = straight_scenario(vec![]);
        let (ec, el) = contouring_lag_errors(12.0, 0.0, 12.0, &sc.path);
        assert_abs_diff_eq!(ec, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(el, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn contouring_errors_zero_heading_offsets() {
        // Reference at heading 0; vehicle offset (1, 0.5) from the matched point.
        let sc = straight_scenario(vec![]);
        let (ec, el) = contouring_lag_errors(13.0, 0.5, 12.0, &sc.path);
        assert_relative_eq!(ec, -0.5, max_relative = 1e-12);
        assert_relative_eq!(el, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn contouring_errors_quarter_heading() {
        // A vertical path: heading pi/2, offset (0.3, 0).
        let samples: Vec<PathSample> = (0..=100)
            .map(|i| PathSample { theta: i as f64, x: 0.0, y: i as f64, psi: FRAC_PI_2 })
            .collect();
        let path = ReferencePath::new(samples, 7.0).unwrap();
        let (ec, el) = contouring_lag_errors(0.3, 50.0, 50.0, &path);
        assert_relative_eq!(ec, 0.3, max_relative = 1e-12);
        assert_abs_diff_eq!(el, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tracking_cost_examples() {
        let w = CostWeights { q_con: 1.0, q_lag: 1.0, q_vel: 1.0, ..Default::default() };
        assert_eq!(tracking_cost(&[(0.0, 0.0, 0.0)], &w), 0.0);
        assert_eq!(tracking_cost(&[(1.0, 2.0, 3.0)], &w), 14.0);
        let wk = CostWeights { q_con: 3.0, q_lag: 3.0, q_vel: 3.0, ..Default::default() };
        assert_relative_eq!(
            tracking_cost(&[(1.0, 2.0, 3.0)], &wk),
            3.0 * 14.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn input_cost_examples() {
        let w = CostWeights {
            q_ddelta: 1.0,
            q_dfx_fl: 1.0,
            q_dfx_fr: 1.0,
            q_dfx_rl: 1.0,
            q_dfx_rr: 1.0,
            ..Default::default()
        };
        assert_eq!(input_cost(&[ControlRates::default()], &w), 0.0);
        let ones = ControlRates { ddelta: 1.0, dfx_fl: 1.0, dfx_fr: 1.0, dfx_rl: 1.0, dfx_rr: 1.0 };
        assert_eq!(input_cost(&[ones], &w), 5.0);
        let a = ControlRates { ddelta: 0.5, ..Default::default() };
        let b = ControlRates { dfx_rl: -2.0, ..Default::default() };
        assert_eq!(input_cost(&[a, b], &w), input_cost(&[b, a], &w));
    }

    #[test]
    fn dynamic_weight_branches() {
        let pk = 100.0;
        let dsft = 5.0;
        assert_eq!(dynamic_weight(-0.5, dsft, pk), pk);
        assert_eq!(dynamic_weight(0.0, dsft, pk), pk);
        assert_relative_eq!(
            dynamic_weight(dsft, dsft, pk),
            pk * (-2.0f64).exp(),
            max_relative = 1e-12
        );
        assert_eq!(dynamic_weight(2.0 * dsft, dsft, pk), 0.0);
        // Continuous on [0, dsft], monotone non-increasing before the
        // documented drop at dsft.
        let mut prev = pk;
        for i in 1..=100 {
            let d = dsft * i as f64 / 100.0;
            let q = dynamic_weight(d, dsft, pk);
            assert!(q <= prev + 1e-12);
            prev = q;
        }
        assert_relative_eq!(prev, pk * (-2.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn obstacle_cost_inactive_when_clear() {
        let sc = straight_scenario(vec![Obstacle { x: 50.0, y: 0.0, radius: 1.0 }]);
        let w = CostWeights::default();
        let far = vec![vec![sc.dsft_obstacle + 0.1]];
        let edges = vec![vec![2.5, 2.5]];
        assert_eq!(obstacle_cost(&far, &edges, &sc, &w), 0.0);
    }

    #[test]
    fn obstacle_cost_single_stage_value() {
        let mut sc = straight_scenario(vec![Obstacle { x: 50.0, y: 0.0, radius: 1.0 }]);
        sc.dsft_obstacle = 2.0;
        let w = CostWeights { pk: 1.0, ..Default::default() };
        let cost = obstacle_cost(&[vec![0.0]], &[vec![]], &sc, &w);
        assert_relative_eq!(cost, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn obstacle_cost_monotone_in_clearance() {
        let sc = straight_scenario(vec![Obstacle { x: 50.0, y: 0.0, radius: 1.0 }]);
        let w = CostWeights::default();
        let mut prev = f64::INFINITY;
        for i in 0..=60 {
            let d = -1.0 + 7.0 * i as f64 / 60.0;
            let c = obstacle_cost(&[vec![d]], &[vec![]], &sc, &w);
            assert!(c <= prev + 1e-9, "cost rose at clearance {d}");
            prev = c;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn friction_bound_examples() {
        let cp = ConstraintParams::default();
        let loads = WheelLoads { fz_fl: 4300.0, fz_fr: 4300.0, fz_rl: 0.0, fz_rr: 10000.0 };
        let b = friction_circle_bounds(&loads, &cp, 0.95);
        assert_relative_eq!(0.9 * 0.95 * 4300.0, 3676.5, max_relative = 1e-12);
        assert_eq!(b[0], 3600.0); // circle above the box, box governs
        assert_eq!(b[2], 0.0); // airborne wheel
        let cp1 = ConstraintParams { sf: 1.0, ..cp };
        let low = WheelLoads { fz_fl: 2000.0, fz_fr: 2000.0, fz_rl: 2000.0, fz_rr: 2000.0 };
        let b = friction_circle_bounds(&low, &cp1, 0.95);
        assert_relative_eq!(b[0], 1900.0, max_relative = 1e-12); // circle governs
    }

    #[test]
    fn road_residual_examples() {
        let sc = straight_scenario(vec![]);
        assert_relative_eq!(
            road_boundary_residual(20.0, 0.0, 20.0, &sc.path),
            -12.25,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            road_boundary_residual(20.0, 3.0, 20.0, &sc.path),
            -3.25,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            road_boundary_residual(20.0, 4.0, 20.0, &sc.path),
            3.75,
            max_relative = 1e-12
        );
    }

    #[test]
    fn tv_residual_examples() {
        let cp = ConstraintParams::default();
        let sym = WheelLoads { fz_fl: 4800.0, fz_fr: 4800.0, fz_rl: 4700.0, fz_rr: 4700.0 };
        let (f, r) = tv_straight_residuals(&[300.0, 100.0, 50.0, 50.0], &sym, &cp);
        assert_relative_eq!(f, 200.0, max_relative = 1e-12);
        assert_eq!(r, 0.0);
        let skew = WheelLoads { fz_fl: 5050.0, fz_fr: 4550.0, fz_rl: 4700.0, fz_rr: 4700.0 };
        let (f, _) = tv_straight_residuals(&[1000.0, 0.0, 0.0, 0.0], &skew, &cp);
        assert_relative_eq!(f, 0.0, epsilon = 1e-9); // exactly at the bound
        // Cornering-scale load difference relaxes the bound.
        let corner = WheelLoads { fz_fl: 3000.0, fz_fr: 6600.0, fz_rl: 4700.0, fz_rr: 4700.0 };
        let (f, _) = tv_straight_residuals(&[3600.0, -3600.0, 0.0, 0.0], &corner, &cp);
        assert!(f <= 0.0);
    }

    #[test]
    fn build_dimensions_default_horizon() {
        let sc = build_dlc_scenario(&DlcConfig::default()).unwrap();
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let x0 = cruise_state(&sc, &vp);
        let ocp = OcpProblem::build(
            x0,
            &sc,
            HorizonConfig::default(),
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        assert_eq!(ocp.num_vars(), 510);
        assert_eq!(ocp.num_dynamics_eq(), 360);
        let nlp = ocp.as_nlp();
        assert_eq!(nlp.num_eq(), 360);
        assert_eq!(nlp.num_ineq(), 150);
        assert_eq!(nlp.bounds().len(), 510);
    }

    #[test]
    fn single_stage_problem_well_formed() {
        let sc = straight_scenario(vec![]);
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let ocp = OcpProblem::build(
            cruise_state(&sc, &vp),
            &sc,
            HorizonConfig { n: 1, dt: 0.05 },
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        let nlp = ocp.as_nlp();
        let z = nlp.initial_point();
        assert_eq!(z.len(), 17);
        assert!(nlp.objective(&z).is_finite());
        assert!(nlp.eq_residuals(&z).iter().all(|v| v.is_finite()));
        assert!(nlp.ineq_residuals(&z).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn warm_start_shift_property() {
        let sc = straight_scenario(vec![]);
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let hc = HorizonConfig { n: 6, dt: 0.05 };
        let x0 = cruise_state(&sc, &vp);
        let first = OcpProblem::build(
            x0,
            &sc,
            hc,
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        let prev = first.warm.clone();
        let second = OcpProblem::build(
            x0,
            &sc,
            hc,
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            Some(&prev),
        );
        for k in 0..hc.n - 1 {
            for i in 0..VARS_PER_STAGE {
                assert_eq!(
                    second.warm[k * VARS_PER_STAGE + i],
                    prev[(k + 1) * VARS_PER_STAGE + i],
                    "stage {k} var {i}"
                );
            }
        }
    }

    #[test]
    fn cost_decomposition_sums_exactly() {
        let sc = build_dlc_scenario(&DlcConfig::default()).unwrap();
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let mut x0 = cruise_state(&sc, &vp);
        // Park the horizon near the first obstacle so every term is active.
        x0[idx::X] = 85.0;
        x0[idx::THETA] = 85.0;
        x0[idx::Y] = 0.4;
        let ocp = OcpProblem::build(
            x0,
            &sc,
            HorizonConfig::default(),
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        let z = ocp.warm.clone();
        let (jt, ji, jo) = ocp.cost_components(&z);
        assert!(jo > 0.0, "obstacle cost should be active");
        assert_relative_eq!(ocp.total_cost(&z), jt + ji + jo, max_relative = 1e-12);
    }

    #[test]
    fn cruise_on_straight_path_costs_nothing_and_is_feasible() {
        let sc = straight_scenario(vec![]);
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let ocp = OcpProblem::build(
            cruise_state(&sc, &vp),
            &sc,
            HorizonConfig::default(),
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        let cost = ocp.total_cost(&ocp.warm);
        assert!(cost.abs() < 1e-9, "cruise cost {cost}");
        let nlp = ocp.as_nlp();
        let z = nlp.initial_point();
        assert!(nlp.eq_residuals(&z).amax() < 1e-10);
        assert!(nlp.ineq_residuals(&z).iter().all(|&v| v <= 1e-9));
        let bounds = nlp.bounds();
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            assert!(z[i] >= lo - 1e-9 && z[i] <= hi + 1e-9, "var {i} out of box");
        }
    }

    #[test]
    fn nlp_gradients_match_finite_differences() {
        let sc = build_dlc_scenario(&DlcConfig::default()).unwrap();
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let mut x0 = cruise_state(&sc, &vp);
        x0[idx::X] = 88.0;
        x0[idx::THETA] = 88.0;
        x0[idx::Y] = 0.3;
        x0[idx::VY] = 0.2;
        x0[idx::R] = 0.05;
        let ocp = OcpProblem::build(
            x0,
            &sc,
            HorizonConfig { n: 5, dt: 0.05 },
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        let nlp = ocp.as_nlp();
        let point = nlp.initial_point();
        let err = mpcctv_solver::gradient_check(&nlp, &point, 1e-6);
        assert!(err < 1e-4, "gradient check error {err}");
    }

    #[test]
    fn solver_holds_cruise_with_near_zero_rates() {
        let sc = straight_scenario(vec![]);
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let ocp = OcpProblem::build(
            cruise_state(&sc, &vp),
            &sc,
            HorizonConfig { n: 10, dt: 0.05 },
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags::default(),
            &vp,
            &tp,
            None,
        );
        let nlp = ocp.as_nlp();
        let report = solve(&nlp, &SolveOptions::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        let z = nlp.to_physical(&report.solution);
        let u0 = OcpProblem::first_stage_rates(&z);
        assert!(u0.ddelta.abs() < 1e-4, "ddelta {}", u0.ddelta);
        assert!(u0.dfx_fl.abs() < 1.0);
    }

    #[test]
    fn disabled_tv_adds_symmetry_rows() {
        let sc = straight_scenario(vec![]);
        let vp = VehicleParams::default();
        let tp = TyreParams::default();
        let ocp = OcpProblem::build(
            cruise_state(&sc, &vp),
            &sc,
            HorizonConfig { n: 4, dt: 0.05 },
            CostWeights::default(),
            ConstraintParams::default(),
            VariantFlags { enable_tv: false, enable_ca: true },
            &vp,
            &tp,
            None,
        );
        let nlp = ocp.as_nlp();
        assert_eq!(nlp.num_eq(), 4 * N_STATES + 8);
        let z = nlp.initial_point();
        let j = nlp.eq_jacobian(&z);
        assert_eq!(j.nrows(), 4 * N_STATES + 8);
    }
}
