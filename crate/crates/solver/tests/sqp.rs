use nalgebra::{DMatrix, DVector};

use mpcctv_solver::{
    gradient_check, solve, NlpProblem, ShootingStructure, SolveOptions, SolveStatus,
};

/// Small closure-backed problem for tests.
struct FnProblem {
    n: usize,
    me: usize,
    mi: usize,
    bounds: Vec<(f64, f64)>,
    x0: DVector<f64>,
    f: Box<dyn Fn(&DVector<f64>) -> f64>,
    g: Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
    ce: Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
    je: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64>>,
    ci: Box<dyn Fn(&DVector<f64>) -> DVector<f64>>,
    ji: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64>>,
    shooting: Option<ShootingStructure>,
}

impl FnProblem {
    fn unconstrained(
        n: usize,
        x0: &[f64],
        f: impl Fn(&DVector<f64>) -> f64 + 'static,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + 'static,
    ) -> Self {
        FnProblem {
            n,
            me: 0,
            mi: 0,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            x0: DVector::from_row_slice(x0),
            f: Box::new(f),
            g: Box::new(g),
            ce: Box::new(|_| DVector::zeros(0)),
            je: Box::new(move |_| DMatrix::zeros(0, n)),
            ci: Box::new(|_| DVector::zeros(0)),
            ji: Box::new(move |_| DMatrix::zeros(0, n)),
            shooting: None,
        }
    }
}

impl NlpProblem for FnProblem {
    fn num_vars(&self) -> usize {
        self.n
    }
    fn num_eq(&self) -> usize {
        self.me
    }
    fn num_ineq(&self) -> usize {
        self.mi
    }
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }
    fn initial_point(&self) -> DVector<f64> {
        self.x0.clone()
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        (self.f)(z)
    }
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.g)(z)
    }
    fn eq_residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.ce)(z)
    }
    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (self.je)(z)
    }
    fn ineq_residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.ci)(z)
    }
    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        (self.ji)(z)
    }
    fn shooting(&self) -> Option<ShootingStructure> {
        self.shooting
    }
}

#[test]
fn scalar_quadratic() {
    let p = FnProblem::unconstrained(
        1,
        &[10.0],
        |z| (z[0] - 3.0).powi(2),
        |z| DVector::from_row_slice(&[2.0 * (z[0] - 3.0)]),
    );
    let r = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.solution[0] - 3.0).abs() < 1e-8);
    assert!(r.kkt_residual() < 1e-6);
}

#[test]
fn equality_constrained_quadratic() {
    let mut p = FnProblem::unconstrained(
        2,
        &[3.0, -1.0],
        |z| z[0] * z[0] + z[1] * z[1],
        |z| DVector::from_row_slice(&[2.0 * z[0], 2.0 * z[1]]),
    );
    p.me = 1;
    p.ce = Box::new(|z| DVector::from_row_slice(&[z[0] + z[1] - 1.0]));
    p.je = Box::new(|_| DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
    let r = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.solution[0] - 0.5).abs() < 1e-8);
    assert!((r.solution[1] - 0.5).abs() < 1e-8);
    assert!((r.eq_multipliers[0] + 1.0).abs() < 1e-6);
    assert!(r.kkt_residual() < 1e-6);
}

fn rosenbrock() -> FnProblem {
    FnProblem::unconstrained(
        2,
        &[-1.2, 1.0],
        |z| (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2),
        |z| {
            DVector::from_row_slice(&[
                -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]),
                200.0 * (z[1] - z[0] * z[0]),
            ])
        },
    )
}

#[test]
fn rosenbrock_standard_start() {
    let r = solve(&rosenbrock(), &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged, "iters {}", r.iterations);
    assert!((r.solution[0] - 1.0).abs() < 1e-6);
    assert!((r.solution[1] - 1.0).abs() < 1e-6);
    assert!(r.kkt_residual() < 1e-6);
    assert!(r.iterations <= 100);
}

#[test]
fn merit_non_increasing_on_accepted_steps() {
    let opts = SolveOptions {
        record_history: true,
        ..Default::default()
    };
    let r = solve(&rosenbrock(), &opts).unwrap();
    assert!(!r.history.is_empty());
    for rec in &r.history {
        assert!(
            rec.merit_after <= rec.merit_before + 1e-12,
            "merit rose: {} -> {}",
            rec.merit_before,
            rec.merit_after
        );
    }
}

#[test]
fn deterministic_bit_identical() {
    let a = solve(&rosenbrock(), &SolveOptions::default()).unwrap();
    let b = solve(&rosenbrock(), &SolveOptions::default()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    for i in 0..2 {
        assert_eq!(a.solution[i].to_bits(), b.solution[i].to_bits());
    }
}

#[test]
fn respects_variable_bounds() {
    let mut p = FnProblem::unconstrained(
        1,
        &[0.0],
        |z| (z[0] - 3.0).powi(2),
        |z| DVector::from_row_slice(&[2.0 * (z[0] - 3.0)]),
    );
    p.bounds = vec![(-1.0, 2.0)];
    let r = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.solution[0] - 2.0).abs() < 1e-8);
}

#[test]
fn soft_mode_returns_step_on_infeasible_rows() {
    // x <= -1 and x >= 1 cannot both hold; the elastic solve must still
    // produce a finite answer between the two.
    let mut p = FnProblem::unconstrained(
        1,
        &[0.3],
        |z| z[0] * z[0],
        |z| DVector::from_row_slice(&[2.0 * z[0]]),
    );
    p.mi = 2;
    p.ci = Box::new(|z| DVector::from_row_slice(&[z[0] + 1.0, 1.0 - z[0]]));
    p.ji = Box::new(|_| DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
    let opts = SolveOptions {
        soft_constraints: true,
        ..Default::default()
    };
    let r = solve(&p, &opts).unwrap();
    assert!(r.solution[0].is_finite());
    assert!(r.solution[0].abs() <= 1.0 + 1e-6);
}

/// Three-stage chain with mildly nonlinear dynamics; solving through the
/// condensed path and the direct path must land on the same KKT point.
fn chain_problem(shooting: bool) -> FnProblem {
    let nst = 3;
    let (nx, nu) = (2usize, 1usize);
    let n = nst * (nx + nu);
    let x_init = [1.0, 0.0];
    let a = [1.0, 0.1, 0.0, 1.0];
    let bm = [0.005, 0.1];

    let x_of = move |z: &DVector<f64>, k: usize| -> [f64; 2] {
        if k == 0 {
            x_init
        } else {
            let off = (k - 1) * 3 + 1;
            [z[off], z[off + 1]]
        }
    };
    let step =
        move |x: [f64; 2], u: f64| -> [f64; 2] {
            [
                a[0] * x[0] + a[1] * x[1] + bm[0] * u + 0.05 * x[0] * x[0],
                a[2] * x[0] + a[3] * x[1] + bm[1] * u,
            ]
        };

    let mut p = FnProblem::unconstrained(
        n,
        &[0.0; 9],
        move |z| {
            let mut f = 0.0;
            for k in 0..3 {
                let u = z[k * 3];
                let x = [z[k * 3 + 1], z[k * 3 + 2]];
                f += x[0] * x[0] + x[1] * x[1] + 0.1 * u * u;
            }
            f
        },
        move |z| {
            let mut g = DVector::zeros(9);
            for k in 0..3 {
                g[k * 3] = 0.2 * z[k * 3];
                g[k * 3 + 1] = 2.0 * z[k * 3 + 1];
                g[k * 3 + 2] = 2.0 * z[k * 3 + 2];
            }
            g
        },
    );
    p.me = 6;
    p.ce = Box::new(move |z| {
        let mut r = DVector::zeros(6);
        for k in 0..3 {
            let xk = x_of(z, k);
            let u = z[k * 3];
            let pred = step(xk, u);
            let xn = x_of(z, k + 1);
            r[k * 2] = xn[0] - pred[0];
            r[k * 2 + 1] = xn[1] - pred[1];
        }
        r
    });
    p.je = Box::new(move |z| {
        let mut j = DMatrix::zeros(6, 9);
        for k in 0..3 {
            let xk = x_of(z, k);
            // d pred / dx
            let da = [
                [a[0] + 0.1 * xk[0], a[1]],
                [a[2], a[3]],
            ];
            for r in 0..2 {
                j[(k * 2 + r, k * 3)] = -bm[r];
                j[(k * 2 + r, k * 3 + 1 + r)] = 1.0;
                if k >= 1 {
                    for c in 0..2 {
                        j[(k * 2 + r, (k - 1) * 3 + 1 + c)] = -da[r][c];
                    }
                }
            }
        }
        j
    });
    p.mi = 1;
    // Terminal position must stay above -0.5.
    p.ci = Box::new(|z| DVector::from_row_slice(&[-z[7] - 0.5]));
    p.ji = Box::new(|_| {
        let mut j = DMatrix::zeros(1, 9);
        j[(0, 7)] = -1.0;
        j
    });
    p.bounds = vec![
        (-0.8, 0.8),
        (f64::NEG_INFINITY, f64::INFINITY),
        (f64::NEG_INFINITY, f64::INFINITY),
        (-0.8, 0.8),
        (f64::NEG_INFINITY, f64::INFINITY),
        (f64::NEG_INFINITY, f64::INFINITY),
        (-0.8, 0.8),
        (f64::NEG_INFINITY, f64::INFINITY),
        (f64::NEG_INFINITY, f64::INFINITY),
    ];
    if shooting {
        p.shooting = Some(ShootingStructure {
            n_stage: 3,
            nx: 2,
            nu: 1,
            ineq_rows_per_stage: 0,
        });
    }
    p
}

#[test]
fn condensed_and_direct_paths_agree() {
    let rc = solve(&chain_problem(true), &SolveOptions::default()).unwrap();
    let rd = solve(&chain_problem(false), &SolveOptions::default()).unwrap();
    assert_eq!(rc.status, SolveStatus::Converged);
    assert_eq!(rd.status, SolveStatus::Converged);
    assert!(rc.kkt_residual() < 1e-6);
    assert!(rd.kkt_residual() < 1e-6);
    for i in 0..9 {
        assert!(
            (rc.solution[i] - rd.solution[i]).abs() < 1e-6,
            "var {i}: condensed {} vs direct {}",
            rc.solution[i],
            rd.solution[i]
        );
    }
}

#[test]
fn gradient_check_quadratic_near_machine_precision() {
    let p = FnProblem::unconstrained(
        2,
        &[0.4, -0.7],
        |z| z[0] * z[0] + 3.0 * z[1] * z[1] + z[0] * z[1],
        |z| DVector::from_row_slice(&[2.0 * z[0] + z[1], 6.0 * z[1] + z[0]]),
    );
    let err = gradient_check(&p, &DVector::from_row_slice(&[0.4, -0.7]), 1e-6);
    assert!(err < 1e-8, "err {err}");
}

#[test]
fn gradient_check_error_shrinks_quadratically() {
    // Smooth non-polynomial objective so central differences carry an O(h^2)
    // truncation term until rounding takes over.
    let p = FnProblem::unconstrained(
        1,
        &[0.5],
        |z| z[0].exp() * (3.0 * z[0]).sin(),
        |z| {
            DVector::from_row_slice(&[
                z[0].exp() * ((3.0 * z[0]).sin() + 3.0 * (3.0 * z[0]).cos())
            ])
        },
    );
    let pt = DVector::from_row_slice(&[0.5]);
    let e4 = gradient_check(&p, &pt, 1e-4);
    let e5 = gradient_check(&p, &pt, 1e-5);
    assert!(e4 > e5, "e4 {e4} should exceed e5 {e5}");
    let ratio = e4 / e5;
    assert!(
        (20.0..500.0).contains(&ratio),
        "expected roughly 100x decay, got {ratio}"
    );
}
