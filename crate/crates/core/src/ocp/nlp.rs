//! Scaled NLP view of an [`OcpProblem`] for the SQP solver.
//!
//! Force-like variables are expressed in kN inside the solver so every
//! decision variable is O(1)-O(20); defect residuals are scaled the same
//! way, which keeps the identity blocks of the shooting Jacobian intact.

use nalgebra::{DMatrix, DVector};

use mpcctv_solver::{NlpProblem, ShootingStructure};

use crate::math::DualN;
use crate::vehicle::{idx, N_RATES, N_STATES};

use super::{stage_rates, stage_state, OcpProblem, VARS_PER_STAGE};

const FORCE_SCALE: f64 = 1e3;
const SU: [f64; N_RATES] = [1.0, FORCE_SCALE, FORCE_SCALE, FORCE_SCALE, FORCE_SCALE];
const SX: [f64; N_STATES] = [
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    FORCE_SCALE,
    FORCE_SCALE,
    FORCE_SCALE,
    FORCE_SCALE,
];

/// Inequality rows per stage: road corridor plus four torque-vectoring rows.
pub const INEQ_PER_STAGE: usize = 5;

type Dual = DualN<VARS_PER_STAGE>;

pub struct OcpNlp<'a> {
    ocp: &'a OcpProblem<'a>,
}

impl<'a> OcpNlp<'a> {
    pub fn new(ocp: &'a OcpProblem<'a>) -> Self {
        OcpNlp { ocp }
    }

    pub fn scale_var(col: usize) -> f64 {
        let within = col % VARS_PER_STAGE;
        if within < N_RATES {
            SU[within]
        } else {
            SX[within - N_RATES]
        }
    }

    pub fn to_scaled(&self, z_phys: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z_phys.len(), |i, _| z_phys[i] / Self::scale_var(i))
    }

    pub fn to_physical(&self, z_scaled: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z_scaled.len(), |i, _| z_scaled[i] * Self::scale_var(i))
    }

    fn phys_stage(&self, z: &DVector<f64>, k: usize) -> ([f64; N_RATES], [f64; N_STATES]) {
        let mut u = stage_rates(z, k);
        let mut x = stage_state(z, k);
        for i in 0..N_RATES {
            u[i] *= SU[i];
        }
        for i in 0..N_STATES {
            x[i] *= SX[i];
        }
        (u, x)
    }

    fn phys_prev_state(&self, z: &DVector<f64>, k: usize) -> [f64; N_STATES] {
        if k == 0 {
            self.ocp.x0
        } else {
            let mut x = stage_state(z, k - 1);
            for i in 0..N_STATES {
                x[i] *= SX[i];
            }
            x
        }
    }
}

impl NlpProblem for OcpNlp<'_> {
    fn num_vars(&self) -> usize {
        self.ocp.num_vars()
    }

    fn num_eq(&self) -> usize {
        let sym = if self.ocp.variant.enable_tv {
            0
        } else {
            2 * self.ocp.horizon.n
        };
        self.ocp.num_dynamics_eq() + sym
    }

    fn num_ineq(&self) -> usize {
        INEQ_PER_STAGE * self.ocp.horizon.n
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let n = self.ocp.horizon.n;
        let cp = &self.ocp.constraints;
        let mut out = Vec::with_capacity(n * VARS_PER_STAGE);
        for k in 0..n {
            out.push((-cp.ddelta_max, cp.ddelta_max));
            for _ in 0..4 {
                out.push((-cp.dfx_max / FORCE_SCALE, cp.dfx_max / FORCE_SCALE));
            }
            let fxb = &self.ocp.stage_data[k].fx_bounds;
            for i in 0..N_STATES {
                match i {
                    idx::DELTA => out.push((-cp.delta_max, cp.delta_max)),
                    idx::FX_FL | idx::FX_FR | idx::FX_RL | idx::FX_RR => {
                        let b = fxb[i - idx::FX_FL] / FORCE_SCALE;
                        out.push((-b, b));
                    }
                    _ => out.push((f64::NEG_INFINITY, f64::INFINITY)),
                }
            }
        }
        out
    }

    fn initial_point(&self) -> DVector<f64> {
        self.to_scaled(&self.ocp.warm)
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let n = self.ocp.horizon.n;
        let mut total = 0.0;
        for k in 0..n {
            let (u, x) = self.phys_stage(z, k);
            total += self.ocp.stage_cost(k, &u, &x);
        }
        total
    }

    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.ocp.horizon.n;
        let mut g = DVector::zeros(z.len());
        for k in 0..n {
            let (u, x) = self.phys_stage(z, k);
            let ud: [Dual; N_RATES] = std::array::from_fn(|i| Dual::variable(u[i], i));
            let xd: [Dual; N_STATES] =
                std::array::from_fn(|i| Dual::variable(x[i], N_RATES + i));
            let c = self.ocp.stage_cost(k, &ud, &xd);
            let off = k * VARS_PER_STAGE;
            for d in 0..VARS_PER_STAGE {
                g[off + d] += c.eps[d] * Self::scale_var(off + d);
            }
        }
        g
    }

    fn eq_residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.ocp.horizon.n;
        let mut r = DVector::zeros(self.num_eq());
        for k in 0..n {
            let (u, x_next) = self.phys_stage(z, k);
            let x_prev = self.phys_prev_state(z, k);
            let pred = self.ocp.dynamics_step(&x_prev, &u);
            for i in 0..N_STATES {
                r[k * N_STATES + i] = (x_next[i] - pred[i]) / SX[i];
            }
        }
        if !self.ocp.variant.enable_tv {
            let base = n * N_STATES;
            for k in 0..n {
                let u = stage_rates(z, k); // scaled; symmetry is scale-free
                r[base + 2 * k] = u[1] - u[2];
                r[base + 2 * k + 1] = u[3] - u[4];
            }
        }
        r
    }

    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.ocp.horizon.n;
        let mut j = DMatrix::zeros(self.num_eq(), z.len());
        for k in 0..n {
            let (u, _) = self.phys_stage(z, k);
            let x_prev = self.phys_prev_state(z, k);
            let xd: [Dual; N_STATES] = std::array::from_fn(|i| {
                if k == 0 {
                    Dual::constant(x_prev[i])
                } else {
                    Dual::variable(x_prev[i], i)
                }
            });
            let ud: [Dual; N_RATES] =
                std::array::from_fn(|i| Dual::variable(u[i], N_STATES + i));
            let pred = self.ocp.dynamics_step(&xd, &ud);
            let row0 = k * N_STATES;
            for i in 0..N_STATES {
                j[(row0 + i, k * VARS_PER_STAGE + N_RATES + i)] = 1.0;
                if k >= 1 {
                    let col0 = (k - 1) * VARS_PER_STAGE + N_RATES;
                    for c in 0..N_STATES {
                        j[(row0 + i, col0 + c)] = -pred[i].eps[c] * SX[c] / SX[i];
                    }
                }
                let colu = k * VARS_PER_STAGE;
                for c in 0..N_RATES {
                    j[(row0 + i, colu + c)] = -pred[i].eps[N_STATES + c] * SU[c] / SX[i];
                }
            }
        }
        if !self.ocp.variant.enable_tv {
            let base = n * N_STATES;
            for k in 0..n {
                let colu = k * VARS_PER_STAGE;
                j[(base + 2 * k, colu + 1)] = 1.0;
                j[(base + 2 * k, colu + 2)] = -1.0;
                j[(base + 2 * k + 1, colu + 3)] = 1.0;
                j[(base + 2 * k + 1, colu + 4)] = -1.0;
            }
        }
        j
    }

    fn ineq_residuals(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.ocp.horizon.n;
        let mut r = DVector::zeros(self.num_ineq());
        for k in 0..n {
            let (_, x) = self.phys_stage(z, k);
            let road = super::road_boundary_residual(
                x[idx::X],
                x[idx::Y],
                x[idx::THETA],
                &self.ocp.scenario.path,
            );
            let data = &self.ocp.stage_data[k];
            let df = x[idx::FX_FL] - x[idx::FX_FR];
            let dr = x[idx::FX_RL] - x[idx::FX_RR];
            let base = k * INEQ_PER_STAGE;
            r[base] = road;
            r[base + 1] = (df - data.tv_bound_front) / FORCE_SCALE;
            r[base + 2] = (-df - data.tv_bound_front) / FORCE_SCALE;
            r[base + 3] = (dr - data.tv_bound_rear) / FORCE_SCALE;
            r[base + 4] = (-dr - data.tv_bound_rear) / FORCE_SCALE;
        }
        r
    }

    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.ocp.horizon.n;
        let mut j = DMatrix::zeros(self.num_ineq(), z.len());
        for k in 0..n {
            let (_, x) = self.phys_stage(z, k);
            let xd: [Dual; N_STATES] =
                std::array::from_fn(|i| Dual::variable(x[i], N_RATES + i));
            let road = super::road_boundary_residual(
                xd[idx::X],
                xd[idx::Y],
                xd[idx::THETA],
                &self.ocp.scenario.path,
            );
            let base = k * INEQ_PER_STAGE;
            let col0 = k * VARS_PER_STAGE;
            for c in 0..N_STATES {
                j[(base, col0 + N_RATES + c)] = road.eps[N_RATES + c] * SX[c];
            }
            // TV rows are linear with unit coefficients after scaling.
            let fl = col0 + N_RATES + idx::FX_FL;
            let fr = col0 + N_RATES + idx::FX_FR;
            let rl = col0 + N_RATES + idx::FX_RL;
            let rr = col0 + N_RATES + idx::FX_RR;
            j[(base + 1, fl)] = 1.0;
            j[(base + 1, fr)] = -1.0;
            j[(base + 2, fl)] = -1.0;
            j[(base + 2, fr)] = 1.0;
            j[(base + 3, rl)] = 1.0;
            j[(base + 3, rr)] = -1.0;
            j[(base + 4, rl)] = -1.0;
            j[(base + 4, rr)] = 1.0;
        }
        j
    }

    fn shooting(&self) -> Option<ShootingStructure> {
        Some(ShootingStructure {
            n_stage: self.ocp.horizon.n,
            nx: N_STATES,
            nu: N_RATES,
            ineq_rows_per_stage: INEQ_PER_STAGE,
        })
    }
}
