//! Closed-loop trace recording, CSV export and run metrics.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::vehicle::VehicleState;

/// Outcome of one controller cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub t: f64,
    pub iterations: usize,
    pub status: CycleStatus,
    pub kkt_residual: f64,
    /// Torque-vectoring residuals of the applied stage (front, rear);
    /// non-positive means the straight-line constraint held.
    pub tv_residual_front: f64,
    pub tv_residual_rear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleStatus {
    Converged,
    MaxIter,
    LineSearchFailure,
    /// Solver output rejected; previous command held.
    Held,
}

impl CycleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleStatus::Converged => "converged",
            CycleStatus::MaxIter => "max_iter",
            CycleStatus::LineSearchFailure => "ls_fail",
            CycleStatus::Held => "held",
        }
    }
}

/// One plant-rate sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// Plant state with the actuated steering angle and wheel forces.
    pub state: VehicleState,
    pub cmd_delta: f64,
    pub cmd_fx: [f64; 4],
    pub d_obstacles: Vec<f64>,
    pub d_edges: Vec<f64>,
    pub beta_deg: f64,
    /// Direct yaw moment from the actuated force split [Nm].
    pub mz_tv: f64,
    /// Lateral acceleration of the plant [m/s^2].
    pub ay: f64,
    /// Path curvature at the row's travelled distance [1/m].
    pub curvature: f64,
    pub tv_residual_front: f64,
    pub tv_residual_rear: f64,
    pub solve_iters: usize,
    pub solve_status: CycleStatus,
}

#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    pub variant: String,
    pub dt_plant: f64,
    pub rows: Vec<TraceRow>,
    pub cycles: Vec<CycleRecord>,
    pub collided: bool,
    /// Set when the run ended because the vehicle departed (sideslip guard).
    pub departed: bool,
}

impl SimTrace {
    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    /// Minimum clearance seen for obstacle `i` and the position where it
    /// occurred.
    pub fn min_clearance(&self, i: usize) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.d_obstacles.get(i).map(|&d| (d, r.state.x)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunMetrics {
    pub min_clearance_per_obstacle: Vec<f64>,
    pub collided: bool,
    pub sideslip_peak_deg: f64,
    pub min_speed_mps: f64,
    pub max_tv_moment_nm: f64,
    pub max_lat_accel_mps2: f64,
    pub solve_iters_mean: f64,
    pub solve_iters_max: usize,
}

/// Metrics over a finished trace; `None` for an empty one.
pub fn compute_metrics(trace: &SimTrace) -> Option<RunMetrics> {
    if trace.rows.is_empty() {
        return None;
    }
    let n_obs = trace.rows[0].d_obstacles.len();
    let mut min_clear = vec![f64::INFINITY; n_obs];
    let mut sideslip_peak: f64 = 0.0;
    let mut min_speed = f64::INFINITY;
    let mut max_mz: f64 = 0.0;
    let mut max_ay: f64 = 0.0;
    for row in &trace.rows {
        for (i, &d) in row.d_obstacles.iter().enumerate() {
            min_clear[i] = min_clear[i].min(d);
        }
        sideslip_peak = sideslip_peak.max(row.beta_deg.abs());
        min_speed = min_speed.min(row.state.vx);
        max_mz = max_mz.max(row.mz_tv.abs());
        max_ay = max_ay.max(row.ay.abs());
    }
    let (mut iters_sum, mut iters_max) = (0usize, 0usize);
    for c in &trace.cycles {
        iters_sum += c.iterations;
        iters_max = iters_max.max(c.iterations);
    }
    let collided = min_clear.iter().any(|&d| d < 0.0);
    Some(RunMetrics {
        min_clearance_per_obstacle: min_clear,
        collided,
        sideslip_peak_deg: sideslip_peak,
        min_speed_mps: min_speed,
        max_tv_moment_nm: max_mz,
        max_lat_accel_mps2: max_ay,
        solve_iters_mean: if trace.cycles.is_empty() {
            0.0
        } else {
            iters_sum as f64 / trace.cycles.len() as f64
        },
        solve_iters_max: iters_max,
    })
}

pub const TRACE_HEADER: &str = "t_s,x_m,y_m,psi_rad,vx_mps,vy_mps,r_radps,theta_m,delta_rad,\
fx_fl_n,fx_fr_n,fx_rl_n,fx_rr_n,d_obs1_m,d_obs2_m,beta_deg,mz_tv_nm,solve_iters,solve_status";

/// Render the trace in the fixed column order.
pub fn trace_to_csv(trace: &SimTrace) -> String {
    let mut out = String::with_capacity(trace.rows.len() * 160 + 200);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    let f = |v: f64| -> String {
        if v.is_finite() {
            format!("{v:.6}")
        } else {
            "inf".to_string()
        }
    };
    for r in &trace.rows {
        let s = &r.state;
        let d1 = r.d_obstacles.first().copied().unwrap_or(f64::INFINITY);
        let d2 = r.d_obstacles.get(1).copied().unwrap_or(f64::INFINITY);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            f(r.t),
            f(s.x),
            f(s.y),
            f(s.psi),
            f(s.vx),
            f(s.vy),
            f(s.r),
            f(s.theta),
            f(s.delta),
            f(s.fx_fl),
            f(s.fx_fr),
            f(s.fx_rl),
            f(s.fx_rr),
            f(d1),
            f(d2),
            f(r.beta_deg),
            f(r.mz_tv),
            r.solve_iters,
            r.solve_status.as_str(),
        ));
    }
    out
}

/// Write bytes through a temp file and rename, so interrupted runs never
/// leave truncated artifacts.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
