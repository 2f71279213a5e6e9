//! Calibration probe: run the default comparison and print the metrics.

use mpcctv_core::config::RunConfig;
use mpcctv_core::sim::{compute_metrics, run_closed_loop, Variant};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let cfg = RunConfig::default();
    let scenario = cfg.scenario().unwrap();
    let ctrl = cfg.controller_setup();
    let sim = cfg.sim.to_sim_config();
    let plant = cfg.plant_params(seed);
    println!(
        "seed {seed}: plant m={:.1} c1={:.2}",
        plant.vehicle.m, plant.tyre.c1
    );

    for v in Variant::ALL {
        let t0 = std::time::Instant::now();
        let trace = run_closed_loop(&scenario, v, &ctrl, &sim, &plant);
        let wall = t0.elapsed().as_secs_f64();
        let m = compute_metrics(&trace);
        match m {
            Some(m) => {
                let (c1, x1) = trace.min_clearance(0).unwrap();
                let (c2, x2) = trace.min_clearance(1).unwrap();
                println!(
                    "{:9} wall={wall:5.1}s dur={:5.2}s collided={} departed={} \
                     d1={c1:6.2}@x={x1:6.1} d2={c2:6.2}@x={x2:6.1} beta={:5.1}deg \
                     vmin={:5.1} mz={:6.0}Nm ay={:4.1} iters mean {:4.1} max {}",
                    v.label(),
                    trace.duration(),
                    trace.collided,
                    trace.departed,
                    m.sideslip_peak_deg,
                    m.min_speed_mps,
                    m.max_tv_moment_nm,
                    m.max_lat_accel_mps2,
                    m.solve_iters_mean,
                    m.solve_iters_max
                );
            }
            None => println!("{:9} empty trace", v.label()),
        }
    }
}
