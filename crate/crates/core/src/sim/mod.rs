//! Closed-loop execution: plant with actuator lags, controller at the
//! horizon rate, trace recording and the three-variant comparison.

mod trace;

pub use trace::{
    compute_metrics, trace_to_csv, write_atomic, CycleRecord, CycleStatus, RunMetrics, SimTrace,
    TraceRow, TRACE_HEADER,
};

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mpcctv_solver::{solve_with_state, SolveOptions, SolveStatus, SqpState};

use crate::ocp::{ConstraintParams, CostWeights, HorizonConfig, OcpProblem, VariantFlags};
use crate::track::Scenario;
use crate::tyre::TyreParams;
use crate::vehicle::{
    self, idx, ControlRates, VehicleParams, VehicleState, N_RATES, N_STATES,
};

/// Controller variants compared in the evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Torque vectoring and collision-avoidance prioritisation.
    WtvWca,
    /// Collision avoidance without torque vectoring (equal per-axle split).
    WotvWca,
    /// Torque vectoring without the obstacle cost.
    WtvWoca,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::WtvWca, Variant::WotvWca, Variant::WtvWoca];

    pub fn flags(self) -> VariantFlags {
        match self {
            Variant::WtvWca => VariantFlags { enable_tv: true, enable_ca: true },
            Variant::WotvWca => VariantFlags { enable_tv: false, enable_ca: true },
            Variant::WtvWoca => VariantFlags { enable_tv: true, enable_ca: false },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::WtvWca => "wtv-wca",
            Variant::WotvWca => "wotv-wca",
            Variant::WtvWoca => "wtv-woca",
        }
    }

    /// File-name friendly label.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::WtvWca => "wtv_wca",
            Variant::WotvWca => "wotv_wca",
            Variant::WtvWoca => "wtv_woca",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "wtv-wca" => Some(Variant::WtvWca),
            "wotv-wca" => Some(Variant::WotvWca),
            "wtv-woca" => Some(Variant::WtvWoca),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorParams {
    /// Steering natural frequency [rad/s]
    pub steering_omega_n: f64,
    /// Steering damping ratio [-]
    pub steering_damping: f64,
    /// Motor force time constant [s]
    pub motor_tau: f64,
    /// Bypass the lags entirely (commands applied directly).
    pub enabled: bool,
}

impl Default for ActuatorParams {
    fn default() -> Self {
        ActuatorParams {
            steering_omega_n: 25.0,
            steering_damping: 0.7,
            motor_tau: 0.006,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActuatorState {
    pub delta: f64,
    pub delta_rate: f64,
    pub fx: [f64; 4],
}

/// Discretised actuator models for a fixed plant step.
#[derive(Debug, Clone)]
pub struct Actuators {
    pub params: ActuatorParams,
    ad: Matrix2<f64>,
    bd: Vector2<f64>,
    motor_decay: f64,
}

impl Actuators {
    pub fn new(params: ActuatorParams, dt: f64) -> Self {
        let w = params.steering_omega_n;
        let z = params.steering_damping;
        let a = Matrix2::new(0.0, 1.0, -w * w, -2.0 * z * w);
        // Series for exp(A dt) and its integral; converges fast at plant steps.
        let mut ad = Matrix2::identity();
        let mut term = Matrix2::identity();
        let mut int = Matrix2::identity() * dt;
        let mut int_term = Matrix2::identity() * dt;
        for k in 1..=24 {
            term = term * a * (dt / k as f64);
            ad += term;
            int_term = int_term * a * (dt / (k + 1) as f64);
            int += int_term;
        }
        let b = Vector2::new(0.0, w * w);
        let bd = int * b;
        Actuators {
            params,
            ad,
            bd,
            motor_decay: (-dt / params.motor_tau).exp(),
        }
    }

    /// Advance the lag states one plant step towards the commands.
    pub fn step(&self, a: &ActuatorState, cmd_delta: f64, cmd_fx: &[f64; 4]) -> ActuatorState {
        let s = self.ad * Vector2::new(a.delta, a.delta_rate) + self.bd * cmd_delta;
        let mut fx = [0.0; 4];
        for i in 0..4 {
            fx[i] = cmd_fx[i] + (a.fx[i] - cmd_fx[i]) * self.motor_decay;
        }
        ActuatorState { delta: s[0], delta_rate: s[1], fx }
    }
}

/// Plant-side parameter set (optionally perturbed from the nominal).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    pub vehicle: VehicleParams,
    pub tyre: TyreParams,
}

/// Perturb mass by up to +-5% and the cornering-stiffness scale by up to
/// +-10%, deterministically from the seed.
pub fn perturbed_plant(
    vehicle_params: &VehicleParams,
    tyre_params: &TyreParams,
    seed: u64,
) -> PlantParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass_factor = 1.0 + rng.gen_range(-0.05..=0.05);
    let stiffness_factor = 1.0 + rng.gen_range(-0.10..=0.10);
    PlantParams {
        vehicle: VehicleParams {
            m: vehicle_params.m * mass_factor,
            ..*vehicle_params
        },
        tyre: TyreParams {
            c1: tyre_params.c1 * stiffness_factor,
            ..*tyre_params
        },
    }
}

/// Prediction-side controller configuration.
#[derive(Debug, Clone)]
pub struct ControllerSetup {
    pub weights: CostWeights,
    pub constraints: ConstraintParams,
    pub horizon: HorizonConfig,
    pub solver: SolveOptions,
    pub vehicle: VehicleParams,
    pub tyre: TyreParams,
}

impl Default for ControllerSetup {
    fn default() -> Self {
        ControllerSetup {
            weights: CostWeights::default(),
            constraints: ConstraintParams::default(),
            horizon: HorizonConfig::default(),
            solver: SolveOptions {
                soft_constraints: true,
                ..Default::default()
            },
            vehicle: VehicleParams::default(),
            tyre: TyreParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Plant integration step [s]
    pub dt_plant: f64,
    /// Wall-clock cap on the manoeuvre [s]
    pub t_max: f64,
    /// Stop margin before the end of the path [m]
    pub end_x_margin: f64,
    /// Abort when |sideslip| exceeds this (vehicle departed) [deg]
    pub sideslip_abort_deg: f64,
    pub actuators: ActuatorParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_plant: 1e-3,
            t_max: 14.0,
            end_x_margin: 10.0,
            sideslip_abort_deg: 60.0,
            actuators: ActuatorParams::default(),
        }
    }
}

/// Run one variant in closed loop.
///
/// Every `horizon.dt` the controller assembles the OCP from the measured
/// plant pose and its own input-integrator states, solves it and applies the
/// first-stage rates; the plant integrates at `dt_plant` with its own
/// parameters behind the actuator lags. The run ends at the path end, on
/// collision, on departure or at the time cap.
pub fn run_closed_loop(
    scenario: &Scenario,
    variant: Variant,
    ctrl: &ControllerSetup,
    sim: &SimConfig,
    plant: &PlantParams,
) -> SimTrace {
    let mut trace = SimTrace {
        variant: variant.label().to_string(),
        dt_plant: sim.dt_plant,
        ..Default::default()
    };
    let steps_per_cycle = (ctrl.horizon.dt / sim.dt_plant).round().max(1.0) as usize;
    let actuators = Actuators::new(sim.actuators, sim.dt_plant);

    let (x_start, y_start, psi_start) = scenario.path.start_pose();
    let per_wheel = vehicle::resistance_force(scenario.vdes, &ctrl.vehicle) / 4.0;
    let mut plant_state = VehicleState {
        x: x_start,
        y: y_start,
        psi: psi_start,
        vx: scenario.vdes,
        theta: scenario.path.theta_min(),
        fx_fl: per_wheel,
        fx_fr: per_wheel,
        fx_rl: per_wheel,
        fx_rr: per_wheel,
        ..Default::default()
    };
    let mut cmd_delta = 0.0f64;
    let mut cmd_fx = [per_wheel; 4];
    let mut act = ActuatorState { delta: 0.0, delta_rate: 0.0, fx: cmd_fx };
    let mut rates = ControlRates::default();
    let mut warm: Option<nalgebra::DVector<f64>> = None;
    let mut solver_state = SqpState::default();

    let end_x = scenario
        .path
        .samples()
        .last()
        .map(|s| s.x)
        .unwrap_or(0.0)
        - sim.end_x_margin;

    let mut step_index: u64 = 0;
    'outer: loop {
        let t = step_index as f64 * sim.dt_plant;
        if t >= sim.t_max || plant_state.x >= end_x {
            break;
        }

        // --- controller cycle -------------------------------------------
        let mut x0 = plant_state.to_array();
        x0[idx::DELTA] = cmd_delta;
        x0[idx::FX_FL] = cmd_fx[0];
        x0[idx::FX_FR] = cmd_fx[1];
        x0[idx::FX_RL] = cmd_fx[2];
        x0[idx::FX_RR] = cmd_fx[3];

        let ocp = OcpProblem::build(
            x0,
            scenario,
            ctrl.horizon,
            ctrl.weights,
            ctrl.constraints,
            variant.flags(),
            &ctrl.vehicle,
            &ctrl.tyre,
            warm.as_ref(),
        );
        let nlp = ocp.as_nlp();
        let mut status = CycleStatus::Held;
        let mut iterations = 0;
        let mut kkt = f64::NAN;
        let mut tv_res = (f64::NAN, f64::NAN);
        let t_solve = std::time::Instant::now();
        match solve_with_state(&nlp, &ctrl.solver, &mut solver_state) {
            Ok(report) => {
                let z_phys = nlp.to_physical(&report.solution);
                if z_phys.iter().all(|v| v.is_finite()) {
                    rates = OcpProblem::first_stage_rates(&z_phys);
                    tv_res = ocp.applied_tv_residuals(&z_phys);
                    warm = Some(z_phys);
                    status = match report.status {
                        SolveStatus::Converged => CycleStatus::Converged,
                        SolveStatus::MaxIter => CycleStatus::MaxIter,
                        SolveStatus::LineSearchFailure => CycleStatus::LineSearchFailure,
                    };
                    iterations = report.iterations;
                    kkt = report.kkt_residual();
                } else {
                    log::warn!("t={t:.2}: non-finite solver output, holding previous control");
                }
            }
            Err(e) => {
                log::warn!("t={t:.2}: solver error ({e}), holding previous control");
            }
        }
        log::debug!(
            "cycle t={t:.2} x={:.1}: {} iters, {:.0} ms, status {:?}",
            plant_state.x,
            iterations,
            t_solve.elapsed().as_secs_f64() * 1e3,
            status
        );
        trace.cycles.push(CycleRecord {
            t,
            iterations,
            status,
            kkt_residual: kkt,
            tv_residual_front: tv_res.0,
            tv_residual_rear: tv_res.1,
        });

        // --- plant substeps ----------------------------------------------
        for _ in 0..steps_per_cycle {
            let cp = &ctrl.constraints;
            cmd_delta =
                (cmd_delta + rates.ddelta * sim.dt_plant).clamp(-cp.delta_max, cp.delta_max);
            let dfx = [rates.dfx_fl, rates.dfx_fr, rates.dfx_rl, rates.dfx_rr];
            for i in 0..4 {
                cmd_fx[i] = (cmd_fx[i] + dfx[i] * sim.dt_plant).clamp(-cp.fx_max, cp.fx_max);
            }

            let mut arr = plant_state.to_array();
            if sim.actuators.enabled {
                act = actuators.step(&act, cmd_delta, &cmd_fx);
                arr[idx::DELTA] = act.delta;
                arr[idx::FX_FL] = act.fx[0];
                arr[idx::FX_FR] = act.fx[1];
                arr[idx::FX_RL] = act.fx[2];
                arr[idx::FX_RR] = act.fx[3];
                arr = vehicle::rk2_step(&arr, &[0.0; N_RATES], sim.dt_plant, &plant.tyre, &plant.vehicle);
            } else {
                arr = vehicle::rk2_step(
                    &arr,
                    &rates.to_array(),
                    sim.dt_plant,
                    &plant.tyre,
                    &plant.vehicle,
                );
                cmd_delta = arr[idx::DELTA].clamp(-cp.delta_max, cp.delta_max);
                for (i, k) in [idx::FX_FL, idx::FX_FR, idx::FX_RL, idx::FX_RR]
                    .iter()
                    .enumerate()
                {
                    cmd_fx[i] = arr[*k].clamp(-cp.fx_max, cp.fx_max);
                }
                act = ActuatorState {
                    delta: arr[idx::DELTA],
                    delta_rate: rates.ddelta,
                    fx: cmd_fx,
                };
            }
            plant_state = VehicleState::from_array(&arr);
            step_index += 1;
            let t_now = step_index as f64 * sim.dt_plant;

            // --- record ---------------------------------------------------
            let (deriv, _) = vehicle::dynamics_with_load_transfer(
                &arr,
                &[0.0; N_RATES],
                &plant.tyre,
                &plant.vehicle,
            );
            let (_, ay) = vehicle::body_accelerations(&arr, &deriv);
            let d_obstacles = scenario.obstacle_clearances(plant_state.x, plant_state.y);
            let d_edges =
                scenario.edge_clearances(plant_state.x, plant_state.y, plant_state.theta);
            let mz_tv = tv_yaw_moment(&plant_state, &plant.vehicle);
            let row = TraceRow {
                t: t_now,
                state: plant_state,
                cmd_delta,
                cmd_fx,
                beta_deg: plant_state.sideslip().to_degrees(),
                mz_tv,
                ay,
                curvature: scenario.path.curvature(plant_state.theta),
                tv_residual_front: tv_res.0,
                tv_residual_rear: tv_res.1,
                solve_iters: iterations,
                solve_status: status,
                d_obstacles: d_obstacles.clone(),
                d_edges,
            };
            let collided = d_obstacles.iter().any(|&d| d < 0.0);
            let departed = row.beta_deg.abs() > sim.sideslip_abort_deg;
            trace.rows.push(row);
            if collided {
                trace.collided = true;
                break 'outer;
            }
            if departed {
                trace.departed = true;
                break 'outer;
            }
        }
    }
    trace
}

/// Direct yaw moment produced by the left/right force split [Nm].
pub fn tv_yaw_moment(s: &VehicleState, p: &VehicleParams) -> f64 {
    0.5 * p.tf * (s.fx_fr - s.fx_fl) * s.delta.cos() + 0.5 * p.tr * (s.fx_rr - s.fx_rl)
}

/// One-shot measurement vector assembled the way the closed loop does it.
pub fn measurement(plant_state: &VehicleState, cmd_delta: f64, cmd_fx: &[f64; 4]) -> [f64; N_STATES] {
    let mut x0 = plant_state.to_array();
    x0[idx::DELTA] = cmd_delta;
    x0[idx::FX_FL] = cmd_fx[0];
    x0[idx::FX_FR] = cmd_fx[1];
    x0[idx::FX_RL] = cmd_fx[2];
    x0[idx::FX_RR] = cmd_fx[3];
    x0
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantEntry {
    pub variant: String,
    pub collided: bool,
    pub departed: bool,
    pub duration_s: f64,
    pub metrics: Option<RunMetrics>,
}

/// Side-by-side orderings the evaluation cares about.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonAssertions {
    pub wtv_woca_collided_obstacle1: bool,
    pub wtv_wca_cleared_both_obstacles: bool,
    pub wotv_wca_cleared_first_obstacle: bool,
    pub obstacle2_clearance_wtv_minus_wotv: f64,
    pub sideslip_ratio_wotv_over_wtv: f64,
    pub wtv_min_speed_exceeds_wotv: bool,
    pub wtv_wca_max_tv_moment_nm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub variants: Vec<VariantEntry>,
    pub assertions: ComparisonAssertions,
}

pub struct ComparisonOutcome {
    pub report: ComparisonReport,
    pub traces: Vec<(Variant, SimTrace)>,
}

/// Run all three variants against the same plant and summarise orderings.
/// The runs are independent and execute in parallel.
pub fn run_comparison(
    scenario: &Scenario,
    ctrl: &ControllerSetup,
    sim: &SimConfig,
    plant: &PlantParams,
    seed: u64,
) -> ComparisonOutcome {
    let mut traces: Vec<(Variant, SimTrace)> = Vec::with_capacity(3);
    std::thread::scope(|scope| {
        let handles: Vec<_> = Variant::ALL
            .iter()
            .map(|&v| scope.spawn(move || (v, run_closed_loop(scenario, v, ctrl, sim, plant))))
            .collect();
        for h in handles {
            traces.push(h.join().expect("variant run panicked"));
        }
    });
    traces.sort_by_key(|(v, _)| Variant::ALL.iter().position(|x| x == v).unwrap());

    let metric_of = |v: Variant| -> Option<RunMetrics> {
        traces
            .iter()
            .find(|(tv, _)| *tv == v)
            .and_then(|(_, tr)| compute_metrics(tr))
    };
    let m_wtv = metric_of(Variant::WtvWca);
    let m_wotv = metric_of(Variant::WotvWca);
    let m_woca = metric_of(Variant::WtvWoca);

    let clear = |m: &Option<RunMetrics>, i: usize| -> f64 {
        m.as_ref()
            .and_then(|m| m.min_clearance_per_obstacle.get(i).copied())
            .unwrap_or(f64::NAN)
    };
    let assertions = ComparisonAssertions {
        wtv_woca_collided_obstacle1: m_woca.as_ref().map_or(false, |m| m.collided)
            && clear(&m_woca, 0) < 0.0,
        wtv_wca_cleared_both_obstacles: m_wtv
            .as_ref()
            .map_or(false, |m| !m.collided && m.min_clearance_per_obstacle.iter().all(|&d| d > 0.0)),
        wotv_wca_cleared_first_obstacle: clear(&m_wotv, 0) > 0.0,
        obstacle2_clearance_wtv_minus_wotv: clear(&m_wtv, 1) - clear(&m_wotv, 1),
        sideslip_ratio_wotv_over_wtv: match (&m_wotv, &m_wtv) {
            (Some(a), Some(b)) if b.sideslip_peak_deg > 0.0 => {
                a.sideslip_peak_deg / b.sideslip_peak_deg
            }
            _ => f64::NAN,
        },
        wtv_min_speed_exceeds_wotv: match (&m_wtv, &m_wotv) {
            (Some(a), Some(b)) => a.min_speed_mps > b.min_speed_mps,
            _ => false,
        },
        wtv_wca_max_tv_moment_nm: m_wtv.as_ref().map_or(f64::NAN, |m| m.max_tv_moment_nm),
    };

    let variants = traces
        .iter()
        .map(|(v, tr)| VariantEntry {
            variant: v.label().to_string(),
            collided: tr.collided,
            departed: tr.departed,
            duration_s: tr.duration(),
            metrics: compute_metrics(tr),
        })
        .collect();

    ComparisonOutcome {
        report: ComparisonReport { seed, variants, assertions },
        traces,
    }
}
