use mpcctv_core::config::RunConfig;
use mpcctv_core::ocp::OcpProblem;
use mpcctv_core::sim::Variant;
use mpcctv_core::vehicle;
use mpcctv_solver::NlpProblem;
use std::time::Instant;

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
    let z = nlp.initial_point();

    let reps = 20;
    let time = |label: &str, f: &mut dyn FnMut()| {
        let t0 = Instant::now();
        for _ in 0..reps {
            f();
        }
        println!("{label}: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    };

    time("objective     ", &mut || { std::hint::black_box(nlp.objective(&z)); });
    time("objective_grad", &mut || { std::hint::black_box(nlp.objective_grad(&z)); });
    time("eq_residuals  ", &mut || { std::hint::black_box(nlp.eq_residuals(&z)); });
    time("eq_jacobian   ", &mut || { std::hint::black_box(nlp.eq_jacobian(&z)); });
    time("ineq_jacobian ", &mut || { std::hint::black_box(nlp.ineq_jacobian(&z)); });

    // Condensation-scale linear algebra.
    let n = 510;
    let m = 150;
    let b = nalgebra::DMatrix::<f64>::identity(n, n);
    let zmap = nalgebra::DMatrix::<f64>::from_fn(n, m, |i, j| ((i * 7 + j) % 13) as f64 * 0.1);
    time("B*Z (510x510x150)", &mut || { std::hint::black_box(&b * &zmap); });
    let bz = &b * &zmap;
    time("Z'(BZ) (150x510x150)", &mut || { std::hint::black_box(zmap.tr_mul(&bz)); });

    // One full QP subproblem via the solver path (soft).
    let t0 = Instant::now();
    let opts = mpcctv_solver::SolveOptions { max_iter: 1, soft_constraints: true, ..Default::default() };
    let _ = mpcctv_solver::solve(&nlp, &opts);
    println!("1 SQP iteration total: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0);
    let t0 = Instant::now();
    let opts = mpcctv_solver::SolveOptions { max_iter: 10, soft_constraints: true, ..Default::default() };
    let r = mpcctv_solver::solve(&nlp, &opts).unwrap();
    println!("10 SQP iterations: {:.1} ms (kkt {:.2e})", t0.elapsed().as_secs_f64() * 1000.0, r.kkt_residual());
}
