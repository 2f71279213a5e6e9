use mpcctv_core::config::RunConfig;
use mpcctv_core::ocp::OcpProblem;
use mpcctv_core::sim::Variant;
use mpcctv_core::vehicle;
use mpcctv_solver::{solve, NlpProblem, SolveOptions};

fn main() {
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let per_wheel = vehicle::resistance_force(scenario.vdes, &ctrl.vehicle) / 4.0;
    let mut x0 = [0.0; 12];
    x0[0] = 85.0;
    x0[3] = scenario.vdes;
    x0[6] = 85.0;
    for k in 8..12 {
        x0[k] = per_wheel;
    }
    let ocp = OcpProblem::build(
        x0, &scenario, ctrl.horizon, ctrl.weights, ctrl.constraints,
        Variant::WtvWca.flags(), &ctrl.vehicle, &ctrl.tyre, None,
    );
    let nlp = ocp.as_nlp();
    let opts = SolveOptions { record_history: true, soft_constraints: true, max_iter: 40, ..Default::default() };
    let t0 = std::time::Instant::now();
    let r = solve(&nlp, &opts).unwrap();
    println!("wall {:.2}s status {:?} stat {:.3e} feas {:.3e} compl {:.3e} obj {:.4}",
        t0.elapsed().as_secs_f64(), r.status, r.kkt_stationarity, r.kkt_feasibility, r.kkt_complementarity, r.objective);
    for (i, h) in r.history.iter().enumerate() {
        println!("{i:3} merit {:14.4} -> {:14.4}  alpha {:9.2e}  nu {:9.2e}", h.merit_before, h.merit_after, h.step_len, h.penalty);
    }
}
