//! Closed-loop integration behaviour on short scenarios.

use mpcctv_core::config::RunConfig;
use mpcctv_core::ocp::OcpProblem;
use mpcctv_core::sim::{
    compute_metrics, run_closed_loop, PlantParams, Variant,
};
use mpcctv_core::vehicle::{self, ControlRates, VehicleState};

fn nominal_plant(cfg: &RunConfig) -> PlantParams {
    PlantParams { vehicle: cfg.vehicle, tyre: cfg.tyre }
}

/// With the actuator lags bypassed and identical parameters, one plant step
/// at the controller period is the controller's own prediction step.
#[test]
fn plant_and_prediction_share_the_dynamics_code_path() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let plant = nominal_plant(&cfg);

    let x0 = {
        let per_wheel = vehicle::resistance_force(scenario.vdes, &ctrl.vehicle) / 4.0;
        let mut s = VehicleState {
            x: 10.0,
            vx: scenario.vdes,
            theta: 10.0,
            fx_fl: per_wheel,
            fx_fr: per_wheel,
            fx_rl: per_wheel,
            fx_rr: per_wheel,
            ..Default::default()
        };
        s.vy = 0.15;
        s.r = 0.04;
        s.to_array()
    };
    let rates = ControlRates {
        ddelta: 0.1,
        dfx_fl: 200.0,
        dfx_fr: -150.0,
        dfx_rl: 50.0,
        dfx_rr: 80.0,
    };

    let ocp = OcpProblem::build(
        x0,
        &scenario,
        ctrl.horizon,
        ctrl.weights,
        ctrl.constraints,
        Variant::WtvWca.flags(),
        &ctrl.vehicle,
        &ctrl.tyre,
        None,
    );
    let predicted = ocp.dynamics_step(&x0, &rates.to_array());
    let plant_next = vehicle::rk2_step(
        &x0,
        &rates.to_array(),
        ctrl.horizon.dt,
        &plant.tyre,
        &plant.vehicle,
    );
    for i in 0..12 {
        let scale = 1.0f64.max(predicted[i].abs());
        assert!(
            (predicted[i] - plant_next[i]).abs() / scale < 1e-9,
            "state {i}: prediction {} vs plant {}",
            predicted[i],
            plant_next[i]
        );
    }
}

#[test]
fn zero_duration_scenario_yields_empty_trace() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let mut sim = cfg.sim.to_sim_config();
    sim.t_max = 0.0;
    let trace = run_closed_loop(&scenario, Variant::WtvWca, &ctrl, &sim, &nominal_plant(&cfg));
    assert!(trace.rows.is_empty());
    assert!(trace.cycles.is_empty());
    assert!(!trace.collided);
    assert!(compute_metrics(&trace).is_none());
}

#[test]
fn short_run_records_consistent_trace() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let mut sim = cfg.sim.to_sim_config();
    sim.t_max = 1.0;
    let t0 = std::time::Instant::now();
    let trace = run_closed_loop(&scenario, Variant::WtvWca, &ctrl, &sim, &nominal_plant(&cfg));
    let wall = t0.elapsed();
    println!(
        "1 s of closed loop took {:.2} s wall ({} cycles, mean iters {:.1})",
        wall.as_secs_f64(),
        trace.cycles.len(),
        trace.cycles.iter().map(|c| c.iterations).sum::<usize>() as f64
            / trace.cycles.len().max(1) as f64
    );
    assert_eq!(trace.cycles.len(), 20);
    assert_eq!(trace.rows.len(), 1000);
    for pair in trace.rows.windows(2) {
        assert!(pair[1].t > pair[0].t);
    }
    // Early straight segment: the car should hold speed and stay centred.
    let last = trace.rows.last().unwrap();
    assert!((last.state.vx - scenario.vdes).abs() < 0.5, "vx {}", last.state.vx);
    assert!(last.state.y.abs() < 0.2, "y {}", last.state.y);
    assert!(!trace.collided);
    let m = compute_metrics(&trace).unwrap();
    assert!(m.sideslip_peak_deg < 2.0);
}

#[test]
fn wotv_variant_never_produces_tv_moment() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let mut sim = cfg.sim.to_sim_config();
    sim.t_max = 1.0;
    let trace = run_closed_loop(&scenario, Variant::WotvWca, &ctrl, &sim, &nominal_plant(&cfg));
    for row in &trace.rows {
        assert!(
            row.mz_tv.abs() < 1e-9,
            "TV moment {} at t={}",
            row.mz_tv,
            row.t
        );
        assert!((row.state.fx_fl - row.state.fx_fr).abs() < 1e-9);
        assert!((row.state.fx_rl - row.state.fx_rr).abs() < 1e-9);
    }
}

#[test]
fn every_cycle_has_a_solver_report() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let mut sim = cfg.sim.to_sim_config();
    sim.t_max = 0.5;
    let trace = run_closed_loop(&scenario, Variant::WtvWca, &ctrl, &sim, &nominal_plant(&cfg));
    assert_eq!(trace.cycles.len(), 10);
    for c in &trace.cycles {
        assert!(c.iterations > 0);
        assert!(c.kkt_residual.is_finite());
    }
}
