//! Dual active-set solver for strictly convex quadratic programs.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 x' H x + g' x
//!     subject to   ae_i' x  = be_i     (equalities)
//!                  ai_j' x <= bi_j     (inequalities)
//! ```
//!
//! with H symmetric positive definite, using the Goldfarb-Idnani dual
//! method: start at the unconstrained minimum and add violated constraints
//! one at a time, taking primal/dual steps that keep dual feasibility.
//! The active-set factorisations (J = L^-T rotated, R triangular) are
//! maintained with Givens updates so each iteration costs O(n^2).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive definite Hessian.
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Equality rows `ae' x = be`.
    pub eq_normals: Vec<DVector<f64>>,
    pub eq_rhs: Vec<f64>,
    /// Inequality rows `ai' x <= bi`.
    pub ineq_normals: Vec<DVector<f64>>,
    pub ineq_rhs: Vec<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        QpProblem {
            h,
            g,
            eq_normals: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_normals: Vec::new(),
            ineq_rhs: Vec::new(),
        }
    }

    pub fn push_eq(&mut self, normal: DVector<f64>, rhs: f64) {
        self.eq_normals.push(normal);
        self.eq_rhs.push(rhs);
    }

    pub fn push_ineq(&mut self, normal: DVector<f64>, rhs: f64) {
        self.ineq_normals.push(normal);
        self.ineq_rhs.push(rhs);
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers with the convention `L = f + lambda'(ae x - be)`.
    pub eq_multipliers: DVector<f64>,
    /// Multipliers `mu >= 0` with `L = f + mu'(ai x - bi)`.
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QpError {
    #[error("constraints are inconsistent; no feasible point exists")]
    Infeasible,
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("active-set iteration limit reached")]
    Stalled,
}

const FEAS_TOL: f64 = 1e-10;

struct Workspace {
    n: usize,
    /// J = L^-T rotated by the accumulated Givens transforms.
    j: DMatrix<f64>,
    /// Upper-triangular factor of the active-constraint normals in J-space.
    r: DMatrix<f64>,
    /// Active rows (global row index: equalities first, then inequalities).
    active: Vec<usize>,
    /// Multipliers of active rows plus the pending candidate in the last slot.
    u: Vec<f64>,
}

impl Workspace {
    fn q(&self) -> usize {
        self.active.len()
    }

    /// d = J' n, z = J2 d2, r = R^-1 d1.
    fn step_directions(&self, normal: &DVector<f64>) -> (DVector<f64>, DVector<f64>, Vec<f64>) {
        let n = self.n;
        let q = self.q();
        let d = self.j.tr_mul(normal);
        let z: DVector<f64> = if q < n {
            self.j.view((0, q), (n, n - q)) * d.rows(q, n - q)
        } else {
            DVector::zeros(n)
        };
        // Back substitution on the leading q x q block of R.
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in (i + 1)..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (d, z, r)
    }

    /// Rotate d so its tail vanishes and append it as a new column of R.
    /// Returns false when the normal is linearly dependent on the active set.
    fn add_constraint(&mut self, mut d: DVector<f64>) -> bool {
        let n = self.n;
        let q = self.q();
        for jcol in (q + 1..n).rev() {
            let cc = d[jcol - 1];
            let ss = d[jcol];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jcol] = 0.0;
            let (mut cc, mut ss) = (cc / h, ss / h);
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jcol - 1] = -h;
            } else {
                d[jcol - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jcol - 1)];
                let t2 = self.j[(k, jcol)];
                self.j[(k, jcol - 1)] = t1 * cc + t2 * ss;
                self.j[(k, jcol)] = xny * (t1 + self.j[(k, jcol - 1)]) - t2;
            }
        }
        // Linear dependence shows up as a vanishing new diagonal entry.
        let mut scale = 1.0_f64;
        for i in 0..q {
            scale = scale.max(self.r[(i, i)].abs());
        }
        if d[q].abs() <= 1e-12 * scale {
            return false;
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        true
    }

    /// Remove the active row at position `pos`, restoring R's triangularity.
    fn drop_constraint(&mut self, pos: usize) {
        let n = self.n;
        let q = self.q();
        self.active.remove(pos);
        self.u.remove(pos);
        for col in pos..q - 1 {
            for row in 0..n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..n {
            self.r[(row, q - 1)] = 0.0;
        }
        let q = q - 1;
        for jcol in pos..q {
            let cc = self.r[(jcol, jcol)];
            let ss = self.r[(jcol + 1, jcol)];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            let (mut cc, mut ss) = (cc / h, ss / h);
            self.r[(jcol + 1, jcol)] = 0.0;
            if cc < 0.0 {
                self.r[(jcol, jcol)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jcol, jcol)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in jcol + 1..q {
                let t1 = self.r[(jcol, k)];
                let t2 = self.r[(jcol + 1, k)];
                self.r[(jcol, k)] = t1 * cc + t2 * ss;
                self.r[(jcol + 1, k)] = xny * (t1 + self.r[(jcol, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jcol)];
                let t2 = self.j[(k, jcol + 1)];
                self.j[(k, jcol)] = t1 * cc + t2 * ss;
                self.j[(k, jcol + 1)] = xny * (t1 + self.j[(k, jcol)]) - t2;
            }
        }
    }
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution, QpError> {
    let n = p.g.len();
    let me = p.eq_normals.len();
    let mi = p.ineq_normals.len();
    debug_assert_eq!(p.h.nrows(), n);
    debug_assert_eq!(p.h.ncols(), n);

    let chol = match nalgebra::Cholesky::new(p.h.clone()) {
        Some(c) => c,
        None => {
            // One jittered retry; the caller is expected to pass PD Hessians.
            let mut h = p.h.clone();
            let tr = h.trace().abs().max(1.0);
            for i in 0..n {
                h[(i, i)] += 1e-12 * tr;
            }
            nalgebra::Cholesky::new(h).ok_or(QpError::NotPositiveDefinite)?
        }
    };

    let mut x = -chol.solve(&p.g);
    let l = chol.l();
    let j = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPositiveDefinite)?;

    let mut ws = Workspace {
        n,
        j,
        r: DMatrix::zeros(n, n),
        active: Vec::new(),
        u: Vec::new(),
    };

    // Combined row list (equalities first) in the internal `a' x >= b` form,
    // materialised once.
    let m_total = me + mi;
    let mut normals: Vec<DVector<f64>> = Vec::with_capacity(m_total);
    let mut rhs_all: Vec<f64> = Vec::with_capacity(m_total);
    for i in 0..me {
        normals.push(-&p.eq_normals[i]);
        rhs_all.push(-p.eq_rhs[i]);
    }
    for i in 0..mi {
        normals.push(-&p.ineq_normals[i]);
        rhs_all.push(-p.ineq_rhs[i]);
    }
    let mut is_active = vec![false; m_total];

    let mut iterations = 0usize;
    let mut n_adds = 0usize;
    let mut n_drops = 0usize;
    let mut n_duals = 0usize;
    let iter_cap = (8 * n + me + mi).max(2000);

    // Phase 1: install the equality constraints.
    for idx in 0..me {
        let np = &normals[idx];
        let (d, z, r) = ws.step_directions(np);
        let znp = z.dot(np);
        let resid = np.dot(&x) - rhs_all[idx];
        let t2 = if znp.abs() > 1e-14 { -resid / znp } else { 0.0 };
        if znp.abs() <= 1e-14 && resid.abs() > 1e-8 {
            return Err(QpError::Infeasible);
        }
        x.axpy(t2, &z, 1.0);
        for (k, rk) in r.iter().enumerate() {
            ws.u[k] -= t2 * rk;
        }
        if znp.abs() <= 1e-14 {
            // Dependent but consistent equality; skip it (multiplier 0).
            continue;
        }
        if !ws.add_constraint(d) {
            return Err(QpError::Infeasible);
        }
        ws.active.push(idx);
        ws.u.push(t2);
        is_active[idx] = true;
    }

    loop {
        iterations += 1;
        if iterations > iter_cap {
            return Err(QpError::Stalled);
        }

        // Most violated inactive inequality (>= form: violation is negative).
        let mut worst = 0.0f64;
        let mut ip = usize::MAX;
        for idx in me..m_total {
            if is_active[idx] {
                continue;
            }
            let s = normals[idx].dot(&x) - rhs_all[idx];
            let tol = FEAS_TOL * (1.0 + rhs_all[idx].abs());
            if s < -tol && s < worst {
                worst = s;
                ip = idx;
            }
        }
        if ip == usize::MAX {
            break;
        }

        let np = normals[ip].clone();
        let rhs = rhs_all[ip];
        let mut s_p = np.dot(&x) - rhs;
        let mut u_plus = 0.0f64;

        loop {
            iterations += 1;
            if iterations > iter_cap {
                return Err(QpError::Stalled);
            }
            let (d, z, r) = ws.step_directions(&np);
            let znp = z.dot(&np);

            // Maximum dual step before an active inequality multiplier hits zero.
            let mut t1 = f64::INFINITY;
            let mut drop_pos = usize::MAX;
            for (k, &row) in ws.active.iter().enumerate() {
                if row < me {
                    continue;
                }
                if r[k] > 1e-14 {
                    let step = ws.u[k] / r[k];
                    if step < t1 {
                        t1 = step;
                        drop_pos = k;
                    }
                }
            }
            let t2 = if znp > 1e-14 { -s_p / znp } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            if !t2.is_finite() {
                // Pure dual step: adjust multipliers and drop the blocker.
                for (k, rk) in r.iter().enumerate() {
                    ws.u[k] -= t * rk;
                }
                u_plus += t;
                n_duals += 1;
                is_active[ws.active[drop_pos]] = false;
                ws.drop_constraint(drop_pos);
                continue;
            }

            x.axpy(t, &z, 1.0);
            for (k, rk) in r.iter().enumerate() {
                ws.u[k] -= t * rk;
            }
            u_plus += t;

            if (t - t2).abs() <= 1e-14 * (1.0 + t2.abs()) {
                if !ws.add_constraint(d) {
                    // Degenerate geometry; treat as satisfied.
                    break;
                }
                ws.active.push(ip);
                ws.u.push(u_plus);
                is_active[ip] = true;
                n_adds += 1;
                break;
            }
            n_drops += 1;
            is_active[ws.active[drop_pos]] = false;
            ws.drop_constraint(drop_pos);
            s_p = np.dot(&x) - rhs;
        }
    }

    if iterations > 3000 {
        log::debug!(
            "gi: n={n} m={} iters={iterations} adds={n_adds} drops={n_drops} duals={n_duals} q={}",
            me + mi,
            ws.q()
        );
    }
    let mut eq_multipliers = DVector::zeros(me);
    let mut ineq_multipliers = DVector::zeros(mi);
    for (k, &row) in ws.active.iter().enumerate() {
        if row < me {
            eq_multipliers[row] = ws.u[k];
        } else {
            ineq_multipliers[row - me] = ws.u[k].max(0.0);
        }
    }
    Ok(QpSolution {
        x,
        eq_multipliers,
        ineq_multipliers,
        iterations,
    })
}
