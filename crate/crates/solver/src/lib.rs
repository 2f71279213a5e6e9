//! Dense SQP solver for smooth nonlinear programs.
//!
//! Problems are posed through the [`NlpProblem`] trait:
//!
//! ```text
//!     minimize     f(z)
//!     subject to   ce(z)  = 0
//!                  ci(z) <= 0
//!                  lb <= z <= ub
//! ```
//!
//! The solver linearises the constraints at each iterate, approximates the
//! Lagrangian Hessian with a damped BFGS update, solves a convex QP
//! subproblem with a dual active-set method and globalises with an L1 merit
//! backtracking line search.
//!
//! Problems with a stage-chain structure (receding-horizon optimal control
//! transcribed by multiple shooting) can expose it via
//! [`NlpProblem::shooting`]; the QP subproblem is then condensed onto the
//! input variables, which keeps the active-set solves small.

use nalgebra::{DMatrix, DVector};

mod gradcheck;
pub mod qp;
mod sqp;

pub use gradcheck::gradient_check;
pub use sqp::{solve, solve_with_state, SqpState};

/// Stage-chain layout of the decision vector.
///
/// Variables are grouped per stage as `[u_k (nu) | x_{k+1} (nx)]` for
/// `k = 0..n_stage`, so `num_vars = n_stage * (nu + nx)`. The *first*
/// `n_stage * nx` equality rows must be the shooting defects
/// `x_{k+1} - F(x_k, u_k)` in stage order; any further equality rows are
/// treated as general constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShootingStructure {
    pub n_stage: usize,
    pub nx: usize,
    pub nu: usize,
    /// When nonzero, the inequality residuals come in stage-major blocks of
    /// this many rows; elastic relaxations can then share one slack per
    /// stage instead of one per row.
    pub ineq_rows_per_stage: usize,
}

impl ShootingStructure {
    pub fn num_vars(&self) -> usize {
        self.n_stage * (self.nx + self.nu)
    }
    pub fn num_defects(&self) -> usize {
        self.n_stage * self.nx
    }
    /// Column offset of `u_k` in the decision vector.
    pub fn u_offset(&self, k: usize) -> usize {
        k * (self.nx + self.nu)
    }
    /// Column offset of `x_{k+1}` in the decision vector.
    pub fn x_offset(&self, k: usize) -> usize {
        k * (self.nx + self.nu) + self.nu
    }
}

/// A smooth NLP with analytic first derivatives.
///
/// Jacobians are row-major dense: row i holds the gradient of residual i.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Per-variable `(lower, upper)` bounds; use infinities when absent.
    fn bounds(&self) -> Vec<(f64, f64)>;
    fn initial_point(&self) -> DVector<f64>;

    fn objective(&self, z: &DVector<f64>) -> f64;
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64>;

    fn eq_residuals(&self, z: &DVector<f64>) -> DVector<f64>;
    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;

    fn ineq_residuals(&self, z: &DVector<f64>) -> DVector<f64>;
    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;

    fn shooting(&self) -> Option<ShootingStructure> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Relax general inequalities with L1 slack penalties so a step is
    /// always returned, even from an infeasible subproblem.
    pub soft_constraints: bool,
    pub soft_weight: f64,
    pub ls_max_backtracks: usize,
    /// Record per-iteration merit/step data in the report.
    pub record_history: bool,
    /// Initial fraction of the variable boxes the QP step may use; adapted
    /// from line-search outcomes. Keeps the linearisation honest when the
    /// subproblem asks for violent steps.
    pub step_fraction_init: f64,
    /// Step cap on unbounded variables when the fraction is 1.
    pub unbounded_step_scale: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 100,
            kkt_tol: 1e-6,
            soft_constraints: false,
            soft_weight: 1e4,
            ls_max_backtracks: 30,
            record_history: false,
            step_fraction_init: 0.25,
            unbounded_step_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub merit_before: f64,
    pub merit_after: f64,
    pub step_len: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    pub objective: f64,
    /// Projected stationarity residual of the Lagrangian gradient.
    pub kkt_stationarity: f64,
    /// Max violation over equality and inequality residuals.
    pub kkt_feasibility: f64,
    /// Scaled complementarity max |mu_i * ci_i| / (1 + |mu|_inf).
    pub kkt_complementarity: f64,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
    pub history: Vec<IterRecord>,
}

impl SolveReport {
    /// Worst of the three KKT residual families.
    pub fn kkt_residual(&self) -> f64 {
        self.kkt_stationarity
            .max(self.kkt_feasibility)
            .max(self.kkt_complementarity)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("non-finite {what} encountered at iteration {iteration}")]
    NonFiniteEvaluation { what: &'static str, iteration: usize },
    #[error("problem dimensions inconsistent: {0}")]
    BadProblem(String),
    #[error("quadratic subproblem failed: {0}")]
    QpFailure(String),
}
