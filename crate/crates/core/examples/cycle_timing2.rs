use mpcctv_core::config::RunConfig;
use mpcctv_core::sim::{run_closed_loop, Variant};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("debug")).init();
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let mut sim = cfg.sim.to_sim_config();
    sim.t_max = 4.3; // just into the obstacle-active region
    let plant = cfg.plant_params(1);
    let t0 = std::time::Instant::now();
    let trace = run_closed_loop(&scenario, Variant::WtvWca, &ctrl, &sim, &plant);
    let iters: Vec<usize> = trace.cycles.iter().map(|c| c.iterations).collect();
    println!(
        "wall {:.1}s x_end={:.1} iters={:?}",
        t0.elapsed().as_secs_f64(),
        trace.rows.last().map(|r| r.state.x).unwrap_or(0.0),
        iters
    );
}
