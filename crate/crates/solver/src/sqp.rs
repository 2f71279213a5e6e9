//! SQP iteration: linearised QP subproblems, damped BFGS, L1 merit line search.

use nalgebra::{DMatrix, DVector};

use crate::qp::{solve_qp, QpError, QpProblem};
use crate::{
    IterRecord, NlpProblem, ShootingStructure, SolveOptions, SolveReport, SolveStatus, SolverError,
};

struct Eval {
    f: f64,
    g: DVector<f64>,
    ce: DVector<f64>,
    je: DMatrix<f64>,
    ci: DVector<f64>,
    ji: DMatrix<f64>,
}

/// Values only, for line-search trials.
struct ValueEval {
    f: f64,
    ce: DVector<f64>,
    ci: DVector<f64>,
}

fn evaluate_values(
    p: &dyn NlpProblem,
    z: &DVector<f64>,
    it: usize,
) -> Result<ValueEval, SolverError> {
    let f = p.objective(z);
    let ce = p.eq_residuals(z);
    let ci = p.ineq_residuals(z);
    let finite = f.is_finite()
        && ce.iter().all(|v| v.is_finite())
        && ci.iter().all(|v| v.is_finite());
    if !finite {
        log::debug!("non-finite evaluation at z = {z:?}");
        return Err(SolverError::NonFiniteEvaluation {
            what: "objective or constraint evaluation",
            iteration: it,
        });
    }
    Ok(ValueEval { f, ce, ci })
}

fn evaluate(p: &dyn NlpProblem, z: &DVector<f64>, it: usize) -> Result<Eval, SolverError> {
    let v = evaluate_values(p, z, it)?;
    let g = p.objective_grad(z);
    let je = p.eq_jacobian(z);
    let ji = p.ineq_jacobian(z);
    let finite = g.iter().all(|v| v.is_finite())
        && je.iter().all(|v| v.is_finite())
        && ji.iter().all(|v| v.is_finite());
    if !finite {
        log::debug!("non-finite derivative at z = {z:?}");
        return Err(SolverError::NonFiniteEvaluation {
            what: "derivative evaluation",
            iteration: it,
        });
    }
    Ok(Eval { f: v.f, g, ce: v.ce, je, ci: v.ci, ji })
}

/// L1 merit value: f + nu * |ce|_1 + w_ineq * sum(max(0, ci)).
fn merit(f: f64, ce: &DVector<f64>, ci: &DVector<f64>, nu: f64, w_ineq: f64) -> f64 {
    let eq_pen: f64 = ce.iter().map(|v| v.abs()).sum();
    let ineq_pen: f64 = ci.iter().map(|v| v.max(0.0)).sum();
    f + nu * eq_pen + w_ineq * ineq_pen
}

struct QpStep {
    dz: DVector<f64>,
    lambda: DVector<f64>,
    mu: DVector<f64>,
    /// Linearised inequality values at the step end, max(0, ci + Ji dz).
    lin_end_viol: f64,
}

/// Second-order correction: a state-only displacement absorbing the defect
/// residuals left by a full step, used to sidestep the Maratos effect.
fn soc_correction(
    ev: &Eval,
    shooting: Option<ShootingStructure>,
    ce_trial: &DVector<f64>,
    n: usize,
) -> Option<DVector<f64>> {
    match shooting {
        Some(s) => {
            // Zero input correction; propagate dx_{k+1} = A_k dx_k - ce_k.
            let (nst, nx) = (s.n_stage, s.nx);
            let mut d = DVector::zeros(n);
            let mut dx_prev = DVector::zeros(nx);
            for k in 0..nst {
                let mut dx = if k == 0 {
                    DVector::zeros(nx)
                } else {
                    let a_k = -ev
                        .je
                        .view((k * nx, s.x_offset(k - 1)), (nx, nx))
                        .clone_owned();
                    &a_k * &dx_prev
                };
                dx -= ce_trial.rows(k * nx, nx);
                d.rows_mut(s.x_offset(k), nx).copy_from(&dx);
                dx_prev = dx;
            }
            Some(d)
        }
        None => {
            let me = ce_trial.len();
            if me == 0 {
                return None;
            }
            // Minimum-norm correction -Je'(Je Je')^-1 ce.
            let jjt = &ev.je * ev.je.transpose();
            let sol = jjt.lu().solve(ce_trial)?;
            Some(-ev.je.transpose() * sol)
        }
    }
}

/// Outcome of one subproblem, solved hard first and elastically on demand.
fn solve_subproblem(
    b: &DMatrix<f64>,
    ev: &Eval,
    z: &DVector<f64>,
    bounds: &[(f64, f64)],
    shooting: Option<ShootingStructure>,
    elastic_weight: f64,
    step_caps: &[f64],
    widen_hint: &mut bool,
) -> Result<QpStep, SolverError> {
    match shooting {
        Some(s) => solve_condensed(b, ev, z, bounds, s, elastic_weight, step_caps, widen_hint),
        None => solve_direct(b, ev, z, bounds, elastic_weight, step_caps),
    }
}

enum RowTag {
    GenIneq(usize),
    Upper(usize),
    Lower(usize),
}

fn lin_end_violation(ev: &Eval, dz: &DVector<f64>) -> f64 {
    if ev.ci.is_empty() {
        return 0.0;
    }
    let end = &ev.ci + &ev.ji * dz;
    end.iter().fold(0.0f64, |acc, v| acc + v.max(0.0))
}

/// Full-space QP for problems without stage structure.
fn solve_direct(
    b: &DMatrix<f64>,
    ev: &Eval,
    z: &DVector<f64>,
    bounds: &[(f64, f64)],
    elastic_weight: f64,
    step_caps: &[f64],
) -> Result<QpStep, SolverError> {
    let n = z.len();
    let me = ev.ce.len();
    let mi = ev.ci.len();

    let build = |elastic: bool| -> QpProblem {
        let ns = if elastic { mi } else { 0 };
        let dim = n + ns;
        let mut h = DMatrix::zeros(dim, dim);
        h.view_mut((0, 0), (n, n)).copy_from(b);
        let mut g = DVector::zeros(dim);
        g.rows_mut(0, n).copy_from(&ev.g);
        for k in 0..ns {
            h[(n + k, n + k)] = 1e-8 * elastic_weight.max(1.0);
            g[n + k] = elastic_weight;
        }
        let mut qp = QpProblem::new(h, g);
        for i in 0..me {
            let mut normal = DVector::zeros(dim);
            normal.rows_mut(0, n).copy_from(&ev.je.row(i).transpose());
            qp.push_eq(normal, -ev.ce[i]);
        }
        for i in 0..mi {
            let mut normal = DVector::zeros(dim);
            normal.rows_mut(0, n).copy_from(&ev.ji.row(i).transpose());
            if elastic {
                normal[n + i] = -1.0;
            }
            qp.push_ineq(normal, -ev.ci[i]);
        }
        if elastic {
            for k in 0..ns {
                let mut normal = DVector::zeros(dim);
                normal[n + k] = -1.0;
                qp.push_ineq(normal, 0.0);
            }
        }
        for v in 0..n {
            let (lb, ub) = bounds[v];
            let hi = (ub - z[v]).min(step_caps[v]);
            let lo = (lb - z[v]).max(-step_caps[v]);
            let mut normal = DVector::zeros(dim);
            normal[v] = 1.0;
            qp.push_ineq(normal.clone(), hi);
            normal[v] = -1.0;
            qp.push_ineq(normal, -lo);
        }
        qp
    };

    let (sol, elastic) = match solve_qp(&build(false)) {
        Ok(s) => (s, false),
        Err(QpError::Infeasible) | Err(QpError::Stalled) => (
            solve_qp(&build(true)).map_err(|e| SolverError::QpFailure(e.to_string()))?,
            true,
        ),
        Err(e) => return Err(SolverError::QpFailure(e.to_string())),
    };

    let dz = sol.x.rows(0, n).into_owned();
    let mu = sol.ineq_multipliers.rows(0, mi).into_owned();
    let _ = elastic;
    Ok(QpStep {
        lin_end_viol: lin_end_violation(ev, &dz),
        dz,
        lambda: sol.eq_multipliers,
        mu,
    })
}

/// Condensed QP: eliminate the shooting states via the linearised dynamics,
/// solve in the stage-input space, then reconstruct the full step and the
/// defect multipliers.
fn solve_condensed(
    b: &DMatrix<f64>,
    ev: &Eval,
    z: &DVector<f64>,
    bounds: &[(f64, f64)],
    s: ShootingStructure,
    elastic_weight: f64,
    step_caps: &[f64],
    widen_hint: &mut bool,
) -> Result<QpStep, SolverError> {
    let n = z.len();
    let (nst, nx, nu) = (s.n_stage, s.nx, s.nu);
    let nu_tot = nst * nu;
    let n_defect = s.num_defects();
    let me_total = ev.ce.len();

    // Sensitivities of the stacked state step w.r.t. the input step:
    // dx_{k+1} = A_k dx_k + B_k du_k - ce_k.
    // Z maps du to the full dz; w is dz at du = 0.
    let mut zmap = DMatrix::zeros(n, nu_tot);
    let mut w = DVector::zeros(n);
    {
        let mut t_prev = DMatrix::zeros(nx, nu_tot);
        let mut w_prev = DVector::zeros(nx);
        for k in 0..nst {
            let rows = k * nx;
            let mut t_k = if k == 0 {
                DMatrix::zeros(nx, nu_tot)
            } else {
                let a_k = -ev
                    .je
                    .view((rows, s.x_offset(k - 1)), (nx, nx))
                    .clone_owned();
                &a_k * &t_prev
            };
            let b_k = -ev.je.view((rows, s.u_offset(k)), (nx, nu)).clone_owned();
            t_k.view_mut((0, k * nu), (nx, nu)).copy_from(&b_k);
            let mut w_k = if k == 0 {
                DVector::zeros(nx)
            } else {
                let a_k = -ev
                    .je
                    .view((rows, s.x_offset(k - 1)), (nx, nx))
                    .clone_owned();
                &a_k * &w_prev
            };
            w_k -= ev.ce.rows(rows, nx);
            for j in 0..nu {
                zmap[(s.u_offset(k) + j, k * nu + j)] = 1.0;
            }
            zmap
                .view_mut((s.x_offset(k), 0), (nx, nu_tot))
                .copy_from(&t_k);
            w.rows_mut(s.x_offset(k), nx).copy_from(&w_k);
            t_prev = t_k;
            w_prev = w_k;
        }
    }

    let bz = b * &zmap;
    let h_red = zmap.tr_mul(&bz);
    let g_full = &ev.g + b * &w;
    let g_red = zmap.tr_mul(&g_full);

    let mi = ev.ci.len();

    // Reachable step effect per condensed row; rows whose slack exceeds it
    // cannot activate inside the trust region and are dropped exactly.
    let u_caps: Vec<f64> = (0..nu_tot)
        .map(|j| {
            let stage = j / nu;
            let v = stage * (nx + nu) + j % nu;
            let hi = (bounds[v].1 - z[v]).min(step_caps[v]);
            let lo = (bounds[v].0 - z[v]).max(-step_caps[v]);
            hi.abs().max(lo.abs())
        })
        .collect();
    let reachable = |a: &DVector<f64>| -> f64 {
        a.iter().zip(&u_caps).map(|(c, cap)| c.abs() * cap).sum()
    };

    // Collect inequality-type rows in reduced space.
    let mut rows: Vec<(DVector<f64>, f64, RowTag)> = Vec::new();
    for i in 0..mi {
        let a = ev.ji.row(i).transpose();
        let red = zmap.tr_mul(&a);
        let rhs = -ev.ci[i] - a.dot(&w);
        if rhs > 1.05 * reachable(&red) + 1e-9 {
            continue;
        }
        rows.push((red, rhs, RowTag::GenIneq(i)));
    }
    for v in 0..n {
        let (lb, ub) = bounds[v];
        let within = v % (nx + nu);
        let is_input = within < nu;
        if !is_input && !lb.is_finite() && !ub.is_finite() {
            continue;
        }
        let red: DVector<f64> = zmap.row(v).transpose();
        if is_input {
            // Input steps carry the trust-region cap.
            let hi = (ub - z[v]).min(step_caps[v]);
            let lo = (lb - z[v]).max(-step_caps[v]);
            rows.push((red.clone(), hi - w[v], RowTag::Upper(v)));
            rows.push((-red, -(lo - w[v]), RowTag::Lower(v)));
        } else {
            let span = reachable(&red);
            if ub.is_finite() {
                let rhs = ub - z[v] - w[v];
                if rhs <= 1.05 * span + 1e-9 {
                    rows.push((red.clone(), rhs, RowTag::Upper(v)));
                }
            }
            if lb.is_finite() {
                let rhs = -(lb - z[v] - w[v]);
                if rhs <= 1.05 * span + 1e-9 {
                    rows.push((-red, rhs, RowTag::Lower(v)));
                }
            }
        }
    }

    // General (non-defect) equality rows reduce the same way.
    let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in n_defect..me_total {
        let a = ev.je.row(i).transpose();
        let red = zmap.tr_mul(&a);
        eq_rows.push((red, -ev.ce[i] - a.dot(&w)));
    }

    // Slack layout for the elastic form: one shared slack per stage when the
    // rows are declared stage-major, otherwise one per general row plus a
    // per-stage slack for the state bounds. Input-bound rows stay hard
    // (a zero step always satisfies them).
    let per_stage = s.ineq_rows_per_stage;
    let n_gen_slack = if per_stage > 0 { 0 } else { mi };
    let n_slack = if per_stage > 0 { nst } else { mi + nst };
    let slack_of = |tag: &RowTag| -> Option<usize> {
        match tag {
            RowTag::GenIneq(i) => {
                if per_stage > 0 {
                    Some((i / per_stage).min(nst - 1))
                } else {
                    Some(*i)
                }
            }
            RowTag::Upper(v) | RowTag::Lower(v) => {
                let within = v % (nx + nu);
                if within < nu {
                    None
                } else {
                    Some(n_gen_slack + v / (nx + nu))
                }
            }
        }
    };

    let build = |elastic: bool| -> QpProblem {
        let ns = if elastic { n_slack } else { 0 };
        let dim = nu_tot + ns;
        let mut h = DMatrix::zeros(dim, dim);
        h.view_mut((0, 0), (nu_tot, nu_tot)).copy_from(&h_red);
        let mut g = DVector::zeros(dim);
        g.rows_mut(0, nu_tot).copy_from(&g_red);
        for k in 0..ns {
            h[(nu_tot + k, nu_tot + k)] = 1.0;
            g[nu_tot + k] = elastic_weight;
        }
        let mut qp = QpProblem::new(h, g);
        for (a, rhs) in &eq_rows {
            let mut normal = DVector::zeros(dim);
            normal.rows_mut(0, nu_tot).copy_from(a);
            qp.push_eq(normal, *rhs);
        }
        for (a, rhs, tag) in rows.iter() {
            let mut normal = DVector::zeros(dim);
            normal.rows_mut(0, nu_tot).copy_from(a);
            if elastic {
                if let Some(slot) = slack_of(tag) {
                    normal[nu_tot + slot] = -1.0;
                }
            }
            qp.push_ineq(normal, *rhs);
        }
        if elastic {
            for k in 0..ns {
                let mut normal = DVector::zeros(dim);
                normal[nu_tot + k] = -1.0;
                qp.push_ineq(normal, 0.0);
            }
        }
        qp
    };

    let sol = match solve_qp(&build(false)) {
        Ok(s) => s,
        Err(QpError::Infeasible) | Err(QpError::Stalled) => {
            // Most infeasibilities are artefacts of a tight trust region;
            // the elastic relaxation is the fallback of last resort.
            *widen_hint = true;
            solve_qp(&build(true)).map_err(|e| SolverError::QpFailure(e.to_string()))?
        }
        Err(e) => return Err(SolverError::QpFailure(e.to_string())),
    };


    let du = sol.x.rows(0, nu_tot).into_owned();
    let dz = &zmap * &du + &w;

    // Multipliers for the original inequality rows plus net bound-row
    // contributions, needed to recover the defect multipliers.
    let mut mu = DVector::zeros(mi);
    let mut bnd = DVector::zeros(n);
    for (k, (_, _, tag)) in rows.iter().enumerate() {
        let m = sol.ineq_multipliers[k];
        match tag {
            RowTag::GenIneq(i) => mu[*i] = m,
            RowTag::Upper(v) => bnd[*v] += m,
            RowTag::Lower(v) => bnd[*v] -= m,
        }
    }

    // Backward recursion on the stationarity rows of the state variables:
    // (B dz + g + Ji' mu + bnd + Jgen' lgen)_x(k) + lambda_k - A_{k+1}' lambda_{k+1} = 0.
    let mut resid = b * &dz + &ev.g + &bnd;
    if mi > 0 {
        resid += ev.ji.tr_mul(&mu);
    }
    let mut lambda = DVector::zeros(me_total);
    for (row, i) in (n_defect..me_total).enumerate() {
        let lg = sol.eq_multipliers[row];
        lambda[i] = lg;
        resid.axpy(lg, &ev.je.row(i).transpose(), 1.0);
    }
    for k in (0..nst).rev() {
        let mut lam_k = -resid.rows(s.x_offset(k), nx).clone_owned();
        if k + 1 < nst {
            let a_next = -ev
                .je
                .view(((k + 1) * nx, s.x_offset(k)), (nx, nx))
                .clone_owned();
            let lam_next = lambda.rows((k + 1) * nx, nx).clone_owned();
            lam_k += a_next.tr_mul(&lam_next);
        }
        lambda.rows_mut(k * nx, nx).copy_from(&lam_k);
    }

    Ok(QpStep {
        lin_end_viol: lin_end_violation(ev, &dz),
        dz,
        lambda,
        mu,
    })
}

/// Projected stationarity residual: interior components count in full,
/// components pinned at a bound only when pushing into the feasible side.
fn projected_stationarity(
    z: &DVector<f64>,
    grad_l: &DVector<f64>,
    bounds: &[(f64, f64)],
) -> f64 {
    let mut worst = 0.0f64;
    let tol = 1e-9;
    for i in 0..z.len() {
        let (lb, ub) = bounds[i];
        let g = grad_l[i];
        let r = if z[i] <= lb + tol * (1.0 + lb.abs()) {
            (-g).max(0.0)
        } else if z[i] >= ub - tol * (1.0 + ub.abs()) {
            g.max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(r);
    }
    worst
}

/// Warm-startable solver memory carried between related solves (receding
/// horizon): Hessian approximation, penalty and trust fraction.
#[derive(Debug, Clone, Default)]
pub struct SqpState {
    b: Option<DMatrix<f64>>,
    nu: Option<f64>,
    step_fraction: Option<f64>,
}

pub fn solve(problem: &dyn NlpProblem, opts: &SolveOptions) -> Result<SolveReport, SolverError> {
    let mut state = SqpState::default();
    solve_with_state(problem, opts, &mut state)
}

pub fn solve_with_state(
    problem: &dyn NlpProblem,
    opts: &SolveOptions,
    state: &mut SqpState,
) -> Result<SolveReport, SolverError> {
    let n = problem.num_vars();
    let me = problem.num_eq();
    let mi = problem.num_ineq();
    let bounds = problem.bounds();
    if bounds.len() != n {
        return Err(SolverError::BadProblem(format!(
            "bounds length {} != num_vars {}",
            bounds.len(),
            n
        )));
    }
    if let Some(s) = problem.shooting() {
        if s.num_vars() != n || s.num_defects() > me {
            return Err(SolverError::BadProblem(
                "shooting structure inconsistent with problem dimensions".into(),
            ));
        }
    }

    let mut z = problem.initial_point();
    for i in 0..n {
        z[i] = z[i].clamp(bounds[i].0, bounds[i].1);
    }

    let mut b = match state.b.take() {
        Some(prev) if prev.nrows() == n => prev,
        _ => DMatrix::identity(n, n),
    };
    let mut lambda = DVector::zeros(me);
    let mut mu = DVector::zeros(mi);
    let mut nu = state.nu.unwrap_or(1.0);
    let mut step_fraction = state
        .step_fraction
        .unwrap_or(opts.step_fraction_init)
        .clamp(0.02, 1.0);
    let half_width: Vec<f64> = bounds
        .iter()
        .map(|(lb, ub)| {
            if lb.is_finite() && ub.is_finite() {
                0.5 * (ub - lb)
            } else {
                opts.unbounded_step_scale
            }
        })
        .collect();
    let mut history = Vec::new();

    let mut ev = evaluate(problem, &z, 0)?;

    let mut status = SolveStatus::MaxIter;
    let mut iterations = opts.max_iter;

    for it in 0..opts.max_iter {
        // KKT residuals with the current multiplier estimates.
        let mut grad_l = ev.g.clone();
        if me > 0 {
            grad_l += ev.je.tr_mul(&lambda);
        }
        if mi > 0 {
            grad_l += ev.ji.tr_mul(&mu);
        }
        let stat = projected_stationarity(&z, &grad_l, &bounds);
        let eq_viol = ev.ce.amax_or(0.0);
        let ineq_viol = ev.ci.iter().fold(0.0f64, |a, v| a.max(*v));
        let feas_for_convergence = if opts.soft_constraints {
            eq_viol
        } else {
            eq_viol.max(ineq_viol)
        };
        let compl = complementarity(&ev.ci, &mu, opts);
        if it > 0
            && stat <= opts.kkt_tol
            && feas_for_convergence <= opts.kkt_tol
            && compl <= opts.kkt_tol
        {
            status = SolveStatus::Converged;
            iterations = it;
            break;
        }

        let w_ineq = if opts.soft_constraints {
            opts.soft_weight
        } else {
            nu
        };
        // A tight trust region can make the subproblem infeasible on its
        // own; retry once with wider caps before accepting an elastic step.
        let mut widen_hint = false;
        let mut step_caps: Vec<f64> = half_width.iter().map(|h| h * step_fraction).collect();
        let mut step = solve_subproblem(
            &b,
            &ev,
            &z,
            &bounds,
            problem.shooting(),
            w_ineq,
            &step_caps,
            &mut widen_hint,
        )?;
        if widen_hint && step_fraction < 1.0 {
            let wide_fraction = (step_fraction * 4.0).min(1.0);
            step_caps = half_width.iter().map(|h| h * wide_fraction).collect();
            let mut dummy = false;
            if let Ok(retry) = solve_subproblem(
                &b,
                &ev,
                &z,
                &bounds,
                problem.shooting(),
                w_ineq,
                &step_caps,
                &mut dummy,
            ) {
                if !dummy {
                    step = retry;
                }
            }
        }

        // Penalty parameter must dominate the multipliers for the L1 merit
        // to be exact; let it decay when they shrink so the line search is
        // not throttled by a stale penalty.
        let lam_inf = step.lambda.amax_or(0.0);
        let mu_inf = if opts.soft_constraints {
            0.0
        } else {
            step.mu.amax_or(0.0)
        };
        let nu_target = 1.05 * lam_inf.max(mu_inf) + 0.1;
        nu = if nu_target >= nu {
            nu_target
        } else {
            (0.5 * nu).max(nu_target)
        };
        let w_ineq = if opts.soft_constraints {
            opts.soft_weight
        } else {
            nu
        };

        let eq_pen: f64 = ev.ce.iter().map(|v| v.abs()).sum();
        let ineq_pen: f64 = ev.ci.iter().map(|v| v.max(0.0)).sum();
        let phi0 = ev.f + nu * eq_pen + w_ineq * ineq_pen;
        let descent =
            ev.g.dot(&step.dz) - nu * eq_pen - w_ineq * (ineq_pen - step.lin_end_viol);

        if step.dz.amax_or(0.0) <= 1e-14 {
            // Null step: multipliers may still have improved; refresh and retest.
            lambda = step.lambda;
            mu = step.mu;
            continue;
        }

        if descent >= -1e-10 * (1.0 + phi0.abs()) {
            // No merit descent left along the subproblem direction; refresh
            // the multipliers and let the convergence test decide next round.
            lambda = step.lambda;
            mu = step.mu;
            step_fraction = (step_fraction * 0.5).max(0.02);
            continue;
        }

        let mut alpha = 1.0f64;
        let mut accepted = None;
        let mut backtracks = 0;
        while backtracks <= opts.ls_max_backtracks {
            let trial = &z + &step.dz * alpha;
            match evaluate_values(problem, &trial, it) {
                Ok(trial_ev) => {
                    let armijo = phi0 + 1e-4 * alpha * descent.min(0.0);
                    let phi = merit(trial_ev.f, &trial_ev.ce, &trial_ev.ci, nu, w_ineq);
                    if phi <= armijo {
                        accepted = Some((trial, trial_ev, phi, alpha));
                        break;
                    }
                    // A trial often fails only through the curvature of the
                    // defects; retry it with a second-order correction before
                    // shrinking the step.
                    if let Some(d_soc) =
                        soc_correction(&ev, problem.shooting(), &trial_ev.ce, n)
                    {
                        let corrected = &trial + &d_soc;
                        if let Ok(cev) = evaluate_values(problem, &corrected, it) {
                            let phi_c = merit(cev.f, &cev.ce, &cev.ci, nu, w_ineq);
                            if phi_c <= armijo {
                                accepted = Some((corrected, cev, phi_c, alpha));
                                break;
                            }
                        }
                    }
                }
                Err(_) => {} // shrink away from non-finite territory
            }
            alpha *= 0.5;
            backtracks += 1;
        }

        let Some((z_new, val_new, phi_new, alpha_used)) = accepted else {
            status = SolveStatus::LineSearchFailure;
            iterations = it + 1;
            lambda = step.lambda;
            mu = step.mu;
            break;
        };
        let ev_new = evaluate(problem, &z_new, it)?;
        let _ = val_new;

        if alpha_used >= 0.99 {
            step_fraction = (step_fraction * 1.5).min(1.0);
        } else if alpha_used < 0.25 {
            step_fraction = (step_fraction * 0.5).max(0.02);
        }

        if opts.record_history {
            history.push(IterRecord {
                merit_before: phi0,
                merit_after: phi_new,
                step_len: alpha_used,
                penalty: nu,
            });
        }

        // Damped BFGS on the Lagrangian gradient difference.
        let s_vec = &z_new - &z;
        let mut grad_l_old = ev.g.clone();
        let mut grad_l_new = ev_new.g.clone();
        if me > 0 {
            grad_l_old += ev.je.tr_mul(&step.lambda);
            grad_l_new += ev_new.je.tr_mul(&step.lambda);
        }
        if mi > 0 {
            grad_l_old += ev.ji.tr_mul(&step.mu);
            grad_l_new += ev_new.ji.tr_mul(&step.mu);
        }
        let y = &grad_l_new - &grad_l_old;
        let bs = &b * &s_vec;
        let sbs = s_vec.dot(&bs);
        let sy = s_vec.dot(&y);
        if sbs > 1e-16 && s_vec.amax_or(0.0) > 1e-14 {
            let theta = if sy >= 0.2 * sbs {
                1.0
            } else {
                0.8 * sbs / (sbs - sy)
            };
            let y_tilde = &y * theta + &bs * (1.0 - theta);
            let sy_tilde = s_vec.dot(&y_tilde);
            if sy_tilde > 1e-12 * sbs {
                // B <- B - Bs Bs'/sBs + yt yt'/s'yt
                b.ger(-1.0 / sbs, &bs, &bs, 1.0);
                b.ger(1.0 / sy_tilde, &y_tilde, &y_tilde, 1.0);
                // Keep symmetry against rounding drift.
                for r in 0..n {
                    for c in (r + 1)..n {
                        let m = 0.5 * (b[(r, c)] + b[(c, r)]);
                        b[(r, c)] = m;
                        b[(c, r)] = m;
                    }
                }
            }
        }

        z = z_new;
        ev = ev_new;
        lambda = step.lambda;
        mu = step.mu;
    }

    // Final KKT quantities at the returned point.
    let mut grad_l = ev.g.clone();
    if me > 0 {
        grad_l += ev.je.tr_mul(&lambda);
    }
    if mi > 0 {
        grad_l += ev.ji.tr_mul(&mu);
    }
    let stat = projected_stationarity(&z, &grad_l, &bounds);
    let eq_viol = ev.ce.amax_or(0.0);
    let ineq_viol = ev.ci.iter().fold(0.0f64, |a, v| a.max(*v));
    let compl = complementarity(&ev.ci, &mu, opts);
    if status == SolveStatus::MaxIter
        && stat <= opts.kkt_tol
        && (if opts.soft_constraints { eq_viol } else { eq_viol.max(ineq_viol) }) <= opts.kkt_tol
        && compl <= opts.kkt_tol
    {
        status = SolveStatus::Converged;
    }

    state.b = Some(b);
    state.nu = Some(nu);
    state.step_fraction = Some((step_fraction * 2.0).min(1.0));

    Ok(SolveReport {
        objective: ev.f,
        solution: z,
        kkt_stationarity: stat,
        kkt_feasibility: eq_viol.max(ineq_viol),
        kkt_complementarity: compl,
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        iterations,
        status,
        history,
    })
}

fn complementarity(ci: &DVector<f64>, mu: &DVector<f64>, opts: &SolveOptions) -> f64 {
    if ci.is_empty() {
        return 0.0;
    }
    let mu_inf = mu.amax_or(0.0);
    let mut worst = 0.0f64;
    for i in 0..ci.len() {
        let r = if ci[i] > 0.0 && opts.soft_constraints {
            ((opts.soft_weight - mu[i]) * ci[i]).abs()
        } else {
            (mu[i] * ci[i]).abs()
        };
        worst = worst.max(r);
    }
    worst / (1.0 + mu_inf)
}

trait AmaxOr {
    fn amax_or(&self, default: f64) -> f64;
}

impl AmaxOr for DVector<f64> {
    fn amax_or(&self, default: f64) -> f64 {
        if self.is_empty() {
            default
        } else {
            self.amax()
        }
    }
}
