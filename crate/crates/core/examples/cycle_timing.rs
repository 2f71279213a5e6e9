//! Per-cycle timing probe around the first obstacle.

use mpcctv_core::config::RunConfig;
use mpcctv_core::ocp::OcpProblem;
use mpcctv_core::sim::{run_closed_loop, Variant};
use mpcctv_core::vehicle;
use mpcctv_solver::{solve, NlpProblem};

fn main() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let mut sim = cfg.sim.to_sim_config();

    // Phase 1: run the approach (cheap) to collect wall time per second.
    for t_max in [3.0f64, 4.0, 4.5] {
        sim.t_max = t_max;
        let plant = cfg.plant_params(1);
        let t0 = std::time::Instant::now();
        let trace = run_closed_loop(&scenario, Variant::WtvWca, &ctrl, &sim, &plant);
        let iters: Vec<usize> = trace.cycles.iter().map(|c| c.iterations).collect();
        println!(
            "t_max={t_max}: wall {:.1}s x_end={:.1} last-iters {:?}",
            t0.elapsed().as_secs_f64(),
            trace.rows.last().map(|r| r.state.x).unwrap_or(0.0),
            &iters[iters.len().saturating_sub(12)..]
        );
    }

    // Phase 2: single OCP solve timing from a state near the obstacle.
    let per_wheel = vehicle::resistance_force(scenario.vdes, &ctrl.vehicle) / 4.0;
    let mut x0 = [0.0; 12];
    x0[0] = 85.0; // X
    x0[3] = scenario.vdes;
    x0[6] = 85.0; // theta
    for k in 8..12 {
        x0[k] = per_wheel;
    }
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
    let nlp = ocp.as_nlp();
    let t0 = std::time::Instant::now();
    let report = solve(&nlp, &ctrl.solver).unwrap();
    println!(
        "cold solve near obstacle: {:.2}s, iters {}, status {:?}, kkt {:.2e}",
        t0.elapsed().as_secs_f64(),
        report.iterations,
        report.status,
        report.kkt_residual()
    );
    // Re-solve warm from the solution.
    let z_phys = nlp.to_physical(&report.solution);
    let ocp2 = OcpProblem::build(
        x0,
        &scenario,
        ctrl.horizon,
        ctrl.weights,
        ctrl.constraints,
        Variant::WtvWca.flags(),
        &ctrl.vehicle,
        &ctrl.tyre,
        Some(&z_phys),
    );
    let nlp2 = ocp2.as_nlp();
    let t0 = std::time::Instant::now();
    let report = solve(&nlp2, &ctrl.solver).unwrap();
    println!(
        "warm solve: {:.2}s, iters {}, status {:?}",
        t0.elapsed().as_secs_f64(),
        report.iterations,
        report.status
    );
}
