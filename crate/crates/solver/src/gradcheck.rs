//! Central finite-difference verification of analytic derivatives.

use nalgebra::DVector;

use crate::NlpProblem;

/// Compare analytic gradients against central finite differences at `point`.
///
/// Checks the objective gradient and every equality and inequality Jacobian
/// row; returns the worst relative error, with relative meaning
/// `|analytic - fd| / max(1, |fd|)` per entry.
pub fn gradient_check(problem: &dyn NlpProblem, point: &DVector<f64>, h: f64) -> f64 {
    let n = problem.num_vars();
    assert_eq!(point.len(), n, "point dimension mismatch");
    let me = problem.num_eq();
    let mi = problem.num_ineq();

    let g = problem.objective_grad(point);
    let je = problem.eq_jacobian(point);
    let ji = problem.ineq_jacobian(point);

    let mut worst = 0.0f64;
    let mut zp = point.clone();
    let mut zm = point.clone();
    for v in 0..n {
        zp[v] = point[v] + h;
        zm[v] = point[v] - h;

        let fd_obj = (problem.objective(&zp) - problem.objective(&zm)) / (2.0 * h);
        worst = worst.max((g[v] - fd_obj).abs() / fd_obj.abs().max(1.0));

        if me > 0 {
            let rp = problem.eq_residuals(&zp);
            let rm = problem.eq_residuals(&zm);
            for r in 0..me {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                worst = worst.max((je[(r, v)] - fd).abs() / fd.abs().max(1.0));
            }
        }
        if mi > 0 {
            let rp = problem.ineq_residuals(&zp);
            let rm = problem.ineq_residuals(&zm);
            for r in 0..mi {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                worst = worst.max((ji[(r, v)] - fd).abs() / fd.abs().max(1.0));
            }
        }

        zp[v] = point[v];
        zm[v] = point[v];
    }
    worst
}
