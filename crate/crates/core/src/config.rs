//! Run configuration: one TOML file drives a whole comparison.
//!
//! Sections mirror the parameter tables of the modules they feed; every
//! section may be omitted and defaults to the nominal values. Unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ocp::{ConstraintParams, CostWeights, HorizonConfig};
use crate::sim::{
    perturbed_plant, ActuatorParams, ControllerSetup, PlantParams, SimConfig,
};
use crate::track::{build_dlc_scenario, DlcConfig, Obstacle, Scenario, TrackError};
use crate::tyre::TyreParams;
use crate::vehicle::VehicleParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("scenario: {0}")]
    Scenario(#[from] TrackError),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vehicle: VehicleParams,
    pub tyre: TyreParams,
    pub controller: ControllerSection,
    pub solver: SolverSection,
    pub scenario: ScenarioSection,
    pub sim: SimSection,
    /// Seed for the plant-parameter perturbation.
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub horizon: HorizonConfig,
    pub weights: CostWeights,
    pub constraints: ConstraintParams,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub soft_constraints: bool,
    pub ls_max_backtracks: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            max_iter: 100,
            kkt_tol: 1e-6,
            soft_constraints: true,
            ls_max_backtracks: 30,
        }
    }
}

impl SolverSection {
    pub fn to_options(&self) -> mpcctv_solver::SolveOptions {
        mpcctv_solver::SolveOptions {
            max_iter: self.max_iter,
            kkt_tol: self.kkt_tol,
            soft_constraints: self.soft_constraints,
            ls_max_backtracks: self.ls_max_backtracks,
            ..Default::default()
        }
    }
}

/// Double-lane-change geometry without the scenario-level fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub length: f64,
    pub lane_offset: f64,
    pub road_width: f64,
    pub ramp_out_start: f64,
    pub ramp_out_length: f64,
    pub ramp_back_start: f64,
    pub ramp_back_length: f64,
    pub knot_spacing: f64,
    pub obstacle1_x: f64,
    pub obstacle2_x: f64,
    pub obstacle_radius: f64,
}

impl Default for PathSection {
    fn default() -> Self {
        let d = DlcConfig::default();
        PathSection {
            length: d.length,
            lane_offset: d.lane_offset,
            road_width: d.road_width,
            ramp_out_start: d.ramp_out_start,
            ramp_out_length: d.ramp_out_length,
            ramp_back_start: d.ramp_back_start,
            ramp_back_length: d.ramp_back_length,
            knot_spacing: d.knot_spacing,
            obstacle1_x: d.obstacle1_x,
            obstacle2_x: d.obstacle2_x,
            obstacle_radius: d.obstacle_radius,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EdgesSection {
    /// Lateral offsets of the road edges; defaults to +-road_width/2.
    pub offsets: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyDistances {
    pub obstacle: f64,
    pub edge: f64,
}

impl Default for SafetyDistances {
    fn default() -> Self {
        SafetyDistances { obstacle: 5.0, edge: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub path: PathSection,
    /// Explicit obstacle list; empty means the standard two-obstacle layout.
    pub obstacles: Vec<Obstacle>,
    pub edges: EdgesSection,
    pub vehicle_radius: f64,
    pub vdes: f64,
    pub safety_distances: SafetyDistances,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            path: PathSection::default(),
            obstacles: Vec::new(),
            edges: EdgesSection::default(),
            vehicle_radius: 1.0,
            vdes: 19.4,
            safety_distances: SafetyDistances::default(),
        }
    }
}

impl ScenarioSection {
    pub fn to_dlc_config(&self) -> DlcConfig {
        DlcConfig {
            length: self.path.length,
            lane_offset: self.path.lane_offset,
            road_width: self.path.road_width,
            ramp_out_start: self.path.ramp_out_start,
            ramp_out_length: self.path.ramp_out_length,
            ramp_back_start: self.path.ramp_back_start,
            ramp_back_length: self.path.ramp_back_length,
            knot_spacing: self.path.knot_spacing,
            obstacle1_x: self.path.obstacle1_x,
            obstacle2_x: self.path.obstacle2_x,
            obstacle_radius: self.path.obstacle_radius,
            vehicle_radius: self.vehicle_radius,
            vdes: self.vdes,
            dsft_obstacle: self.safety_distances.obstacle,
            dsft_edge: self.safety_distances.edge,
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario, TrackError> {
        let mut sc = build_dlc_scenario(&self.to_dlc_config())?;
        if !self.obstacles.is_empty() {
            sc.obstacles = self.obstacles.clone();
        }
        if let Some(offsets) = &self.edges.offsets {
            sc.edge_offsets = offsets.clone();
        }
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt_plant: f64,
    pub t_max: f64,
    pub end_x_margin: f64,
    pub sideslip_abort_deg: f64,
    /// Perturb the plant parameters from the seed.
    pub perturb: bool,
    pub actuators: ActuatorParams,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt_plant: 1e-3,
            t_max: 14.0,
            end_x_margin: 10.0,
            sideslip_abort_deg: 60.0,
            perturb: true,
            actuators: ActuatorParams::default(),
        }
    }
}

impl SimSection {
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            dt_plant: self.dt_plant,
            t_max: self.t_max,
            end_x_margin: self.end_x_margin,
            sideslip_abort_deg: self.sideslip_abort_deg,
            actuators: self.actuators,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let section = |name: &str, r: Result<(), String>| -> Result<(), ConfigError> {
            r.map_err(|e| ConfigError::Invalid(format!("[{name}] {e}")))
        };
        section("vehicle", self.vehicle.validate())?;
        self.tyre
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("[tyre] {e}")))?;
        section("controller.weights", self.controller.weights.validate())?;
        section("controller.constraints", self.controller.constraints.validate())?;
        if self.controller.horizon.n == 0 || self.controller.horizon.dt <= 0.0 {
            return Err(ConfigError::Invalid(
                "[controller.horizon] n must be >= 1 and dt positive".into(),
            ));
        }
        if self.sim.dt_plant <= 0.0 || self.sim.dt_plant > self.controller.horizon.dt {
            return Err(ConfigError::Invalid(
                "[sim] dt_plant must be positive and no larger than the horizon dt".into(),
            ));
        }
        if self.solver.max_iter == 0 {
            return Err(ConfigError::Invalid("[solver] max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn controller_setup(&self) -> ControllerSetup {
        ControllerSetup {
            weights: self.controller.weights,
            constraints: self.controller.constraints,
            horizon: self.controller.horizon,
            solver: self.solver.to_options(),
            vehicle: self.vehicle,
            tyre: self.tyre,
        }
    }

    /// Plant parameters for a run; perturbed from `seed` when enabled.
    pub fn plant_params(&self, seed: u64) -> PlantParams {
        if self.sim.perturb {
            perturbed_plant(&self.vehicle, &self.tyre, seed)
        } else {
            PlantParams { vehicle: self.vehicle, tyre: self.tyre }
        }
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        Ok(self.scenario.to_scenario()?)
    }
}
