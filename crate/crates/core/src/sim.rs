//! Deterministic synchronous traffic simulator.
//!
//! The world steps at a fixed 0.05 s. Background agents follow their routes
//! with pure-pursuit steering and an IDM-style longitudinal law; a per-agent
//! trait sampled from the scenario seed makes them ignore leading vehicles
//! (including the ego), which is what makes the scenarios risky. The ego
//! closes the loop each step: predict every agent, build the risk field,
//! solve the contouring problem and apply the first input.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::collision::{collision_check, Footprint};
use crate::lane_graph::{astar_route, split_lanes, LaneGraph, LanePolyline};
#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_diff, FloatExt as _, Pose, Vec2};
use crate::mpcc::{MpccPlanner, PlannerConfig, PlannerSolution, SolverStatus};
use crate::prediction::{
    predictor_by_name, HistorySample, HistoryTrack, PredictionConfig, PredictionSet, Predictor,
};
use crate::reference_path::ReferencePath;
use crate::risk_field::{AgentPrediction, RiskField, RiskFieldParams};
use crate::rng::Rng;
use crate::trtp::{NetParams, TrtpPredictor};
use crate::vehicle::{integrate, ControlInput, VehicleLimits, VehicleState};

/// Fixed simulation step in seconds.
pub const SIM_DT: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    Config(String),
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::Config(m) => write!(f, "scenario config: {m}"),
        }
    }
}

impl core::error::Error for SimError {}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// Lane entry of the map document.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LaneConfig {
    pub id: String,
    /// Centerline polyline as `[x, y]` meter pairs.
    pub polyline: Vec<[f64; 2]>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub successors: Vec<String>,
    /// Nominal driving speed used by the target-region predictor.
    #[cfg_attr(feature = "serde", serde(default))]
    pub speed_limit: Option<f64>,
}

/// Map document: the lane list.
#[derive(Clone, Debug, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MapConfig {
    pub lanes: Vec<LaneConfig>,
}

impl MapConfig {
    pub fn to_polylines(&self) -> Vec<LanePolyline> {
        self.lanes
            .iter()
            .map(|l| LanePolyline {
                id: l.id.clone(),
                points: l.polyline.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
                successors: l.successors.clone(),
                speed_limit: l.speed_limit,
            })
            .collect()
    }
}

/// A vehicle route: an A* query over the lane graph or an explicit polyline.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(rename_all = "snake_case", deny_unknown_fields)
)]
pub enum RouteConfig {
    Astar { from_lane: String, to_lane: String },
    Polyline { points: Vec<[f64; 2]> },
}

/// Predictor selection by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PredictorChoice {
    Csp,
    TargetRegion,
    TrtpToy,
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EgoConfig {
    pub route: RouteConfig,
    /// Spawn arc length along the route.
    pub spawn_s: f64,
    pub initial_speed: f64,
    pub predictor: PredictorChoice,
    /// Checkpoint path for the neural predictor; resolved by the loader.
    #[cfg_attr(feature = "serde", serde(default))]
    pub checkpoint: Option<String>,
    #[cfg_attr(feature = "serde", serde(default = "default_goal_radius"))]
    pub goal_radius: f64,
}

#[cfg_attr(not(feature = "serde"), allow(dead_code))]
fn default_goal_radius() -> f64 {
    2.0
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AgentConfig {
    pub route: RouteConfig,
    pub spawn_s: f64,
    /// Uniform spawn jitter half-width, resampled per seed.
    #[cfg_attr(feature = "serde", serde(default))]
    pub spawn_s_jitter: f64,
    pub initial_speed: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub initial_speed_jitter: f64,
    pub desired_speed: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub desired_speed_jitter: f64,
}

/// Prediction settings shared by all predictors.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PredictionSettings {
    pub horizon_t: f64,
    pub dt_pred: f64,
    pub config: PredictionConfig,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        PredictionSettings {
            horizon_t: 4.0,
            dt_pred: 0.5,
            config: PredictionConfig::default(),
        }
    }
}

/// Full scenario description; with a fixed seed a run is deterministic.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ScenarioConfig {
    pub map: MapConfig,
    #[cfg_attr(feature = "serde", serde(default = "default_piece_length"))]
    pub piece_length: f64,
    pub ego: EgoConfig,
    #[cfg_attr(feature = "serde", serde(default))]
    pub agents: Vec<AgentConfig>,
    #[cfg_attr(feature = "serde", serde(default = "default_ignore_probability"))]
    pub ignore_probability: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default = "default_max_duration"))]
    pub max_duration: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub prediction: PredictionSettings,
    #[cfg_attr(feature = "serde", serde(default))]
    pub risk: RiskFieldParams,
    #[cfg_attr(feature = "serde", serde(default))]
    pub planner: PlannerConfig,
    #[cfg_attr(feature = "serde", serde(default))]
    pub limits: VehicleLimits,
    /// Loaded neural-network parameters (from `ego.checkpoint`); never part
    /// of the scenario document itself.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub trtp_params: Option<NetParams>,
}

#[cfg_attr(not(feature = "serde"), allow(dead_code))]
fn default_piece_length() -> f64 {
    5.0
}

#[cfg_attr(not(feature = "serde"), allow(dead_code))]
fn default_ignore_probability() -> f64 {
    0.5
}

#[cfg_attr(not(feature = "serde"), allow(dead_code))]
fn default_max_duration() -> f64 {
    30.0
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimVehicle {
    pub id: usize,
    pub name: String,
    pub state: VehicleState,
    pub footprint: Footprint,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SimEvent {
    Collision {
        time: f64,
        a: usize,
        b: usize,
    },
    GoalReached {
        time: f64,
    },
    Timeout {
        time: f64,
    },
    /// Planner produced an unusable input; the previous one was held.
    PlannerHold {
        time: f64,
    },
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub time: f64,
    /// Index 0 is the ego vehicle.
    pub vehicles: Vec<SimVehicle>,
    pub events: Vec<SimEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RunEnd {
    Goal,
    Collision,
    Timeout,
}

/// Planner summary carried in a step record.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanSummary {
    pub status: SolverStatus,
    pub objective: f64,
    pub accepted_iterates: usize,
    pub theta0: f64,
    pub input: ControlInput,
    pub v_theta: f64,
}

/// Everything one closed-loop step produces, for tracing and rendering.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub vehicles: Vec<SimVehicle>,
    pub plan: Option<PlanSummary>,
    /// Per-agent predictions used for the risk field this step.
    pub predictions: Vec<PredictionSet>,
    /// Field value at the ego position, stage 0.
    pub ego_risk: f64,
    pub events: Vec<SimEvent>,
    /// Planned horizon positions for rendering.
    pub planned_horizon: Vec<Vec2>,
}

/// Metrics of one run.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunMetrics {
    pub seed: u64,
    /// Spawn-to-end time in seconds (goal, collision or timeout).
    pub scenario_time: f64,
    /// Distance traveled divided by scenario time.
    pub avg_speed: f64,
    pub collision: bool,
    pub goal_reached: bool,
    pub steps: u64,
    /// FNV-1a hash over the full state trace.
    pub trace_hash: u64,
}

/// Aggregate over a seed batch.
#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub rows: Vec<RunMetrics>,
    pub collision_rate: f64,
    pub goal_rate: f64,
    /// Mean scenario time over collision-free goal-reaching runs.
    pub mean_time_success: f64,
    /// Mean average speed over collision-free goal-reaching runs.
    pub mean_speed_success: f64,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<RunMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let collisions = rows.iter().filter(|r| r.collision).count() as f64;
        let goals = rows.iter().filter(|r| r.goal_reached).count() as f64;
        let success: Vec<&RunMetrics> = rows
            .iter()
            .filter(|r| r.goal_reached && !r.collision)
            .collect();
        let sn = success.len().max(1) as f64;
        MetricsReport {
            collision_rate: collisions / n,
            goal_rate: goals / n,
            mean_time_success: success.iter().map(|r| r.scenario_time).sum::<f64>() / sn,
            mean_speed_success: success.iter().map(|r| r.avg_speed).sum::<f64>() / sn,
            rows,
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct AgentRuntime {
    path: ReferencePath,
    desired_speed: f64,
    /// Sampled once per scenario: this agent disregards leading vehicles.
    ignores_leaders: bool,
    route_theta: f64,
}

// IDM parameters for background agents.
const IDM_TIME_HEADWAY: f64 = 1.0;
const IDM_MIN_GAP: f64 = 2.0;
const IDM_ACCEL: f64 = 2.0;
const IDM_COMFORT_DECEL: f64 = 2.0;
const IDM_EXPONENT: i32 = 4;
/// Lateral corridor within which another vehicle counts as a leader.
const LEADER_CORRIDOR: f64 = 2.2;
const LEADER_LOOKAHEAD: f64 = 60.0;

pub struct Simulation {
    limits: VehicleLimits,
    planner: MpccPlanner,
    predictor: Box<dyn Predictor + Send + Sync>,
    prediction: PredictionSettings,
    risk_params: RiskFieldParams,
    graph: LaneGraph,
    ego_path: ReferencePath,
    goal_radius: f64,
    max_duration: f64,
    state: SimState,
    agents: Vec<AgentRuntime>,
    histories: Vec<HistoryTrack>,
    warm: Option<PlannerSolution>,
    prev_input: ControlInput,
    ego_theta: f64,
    odometer: f64,
    steps: u64,
    trace_hash: u64,
    end: Option<RunEnd>,
}

fn resolve_route(
    route: &RouteConfig,
    graph: &LaneGraph,
    what: &str,
) -> Result<ReferencePath, SimError> {
    let step = crate::reference_path::DEFAULT_RESAMPLE_STEP;
    match route {
        RouteConfig::Polyline { points } => {
            let pts: Vec<Vec2> = points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            ReferencePath::from_polyline(&pts, step)
                .map_err(|e| SimError::Config(format!("{what} route polyline: {e}")))
        }
        RouteConfig::Astar { from_lane, to_lane } => {
            let start = graph
                .lane_entry(from_lane)
                .ok_or_else(|| SimError::Config(format!("{what}: unknown lane {from_lane}")))?
                .id
                .clone();
            let goal = graph
                .lane_exit(to_lane)
                .ok_or_else(|| SimError::Config(format!("{what}: unknown lane {to_lane}")))?
                .id
                .clone();
            let centerline = astar_route(graph, &start, &goal)
                .map_err(|e| SimError::Config(format!("{what} route: {e}")))?;
            ReferencePath::from_centerline(&centerline, step)
                .map_err(|e| SimError::Config(format!("{what} route: {e}")))
        }
    }
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        if cfg.map.lanes.is_empty() {
            return Err(SimError::Config("map has no lanes".into()));
        }
        if !(0.0..=1.0).contains(&cfg.ignore_probability) {
            return Err(SimError::Config("ignore_probability outside [0, 1]".into()));
        }
        let graph = split_lanes(&cfg.map.to_polylines(), cfg.piece_length)
            .map_err(|e| SimError::Config(format!("map: {e}")))?;

        let ego_path = resolve_route(&cfg.ego.route, &graph, "ego")?;
        if cfg.ego.spawn_s < 0.0 || cfg.ego.spawn_s >= ego_path.total_length() {
            return Err(SimError::Config("ego spawn_s outside its route".into()));
        }

        let predictor: Box<dyn Predictor + Send + Sync> = match cfg.ego.predictor {
            PredictorChoice::Csp => {
                predictor_by_name("csp", cfg.prediction.config).expect("csp predictor exists")
            }
            PredictorChoice::TargetRegion => {
                predictor_by_name("target_region", cfg.prediction.config)
                    .expect("target_region predictor exists")
            }
            PredictorChoice::TrtpToy => {
                let params = cfg.trtp_params.clone().ok_or_else(|| {
                    SimError::Config("predictor trtp_toy requires a loaded checkpoint".into())
                })?;
                params
                    .validate()
                    .map_err(|e| SimError::Config(format!("checkpoint: {e}")))?;
                Box::new(TrtpPredictor::new(params, cfg.prediction.config))
            }
        };

        let mut rng = Rng::new(seed);
        let footprint = Footprint::new(cfg.limits.half_length, cfg.limits.half_width);

        let ego_frame = ego_path.frame_at(cfg.ego.spawn_s);
        let ego_state = VehicleState::new(
            ego_frame.pos.x,
            ego_frame.pos.y,
            ego_frame.phi,
            0.0,
            cfg.ego
                .initial_speed
                .clamp(cfg.limits.v_min, cfg.limits.v_max),
        );
        let mut vehicles = alloc::vec![SimVehicle {
            id: 0,
            name: "ego".into(),
            state: ego_state,
            footprint,
        }];

        let mut agents = Vec::with_capacity(cfg.agents.len());
        for (i, a) in cfg.agents.iter().enumerate() {
            let path = resolve_route(&a.route, &graph, &format!("agent{i}"))?;
            // Per-seed traits, drawn in a fixed order.
            let spawn_s = (a.spawn_s + a.spawn_s_jitter * rng.range(-1.0, 1.0))
                .clamp(0.0, (path.total_length() - 1.0).max(0.0));
            let v0 = (a.initial_speed + a.initial_speed_jitter * rng.range(-1.0, 1.0))
                .clamp(0.0, cfg.limits.v_max);
            let desired = (a.desired_speed + a.desired_speed_jitter * rng.range(-1.0, 1.0))
                .clamp(0.5, cfg.limits.v_max);
            let ignores = rng.bernoulli(cfg.ignore_probability);

            let frame = path.frame_at(spawn_s);
            vehicles.push(SimVehicle {
                id: i + 1,
                name: format!("agent{i}"),
                state: VehicleState::new(frame.pos.x, frame.pos.y, frame.phi, 0.0, v0),
                footprint,
            });
            agents.push(AgentRuntime {
                path,
                desired_speed: desired,
                ignores_leaders: ignores,
                route_theta: spawn_s,
            });
        }

        let histories = vehicles
            .iter()
            .map(|v| {
                HistoryTrack::from_sample(HistorySample {
                    t: 0.0,
                    x: v.state.x,
                    y: v.state.y,
                    phi: v.state.phi,
                    v: v.state.v,
                    a: 0.0,
                    w: 0.0,
                })
            })
            .collect();

        let mut sim = Simulation {
            limits: cfg.limits,
            planner: MpccPlanner::new(cfg.planner, cfg.limits),
            predictor,
            prediction: cfg.prediction,
            risk_params: cfg.risk,
            graph,
            goal_radius: cfg.ego.goal_radius,
            max_duration: cfg.max_duration,
            state: SimState {
                time: 0.0,
                vehicles,
                events: Vec::new(),
            },
            agents,
            histories,
            warm: None,
            prev_input: ControlInput::default(),
            ego_theta: cfg.ego.spawn_s,
            ego_path,
            odometer: 0.0,
            steps: 0,
            trace_hash: 0xcbf2_9ce4_8422_2325,
            end: None,
        };
        sim.hash_state();
        Ok(sim)
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn graph(&self) -> &LaneGraph {
        &self.graph
    }

    pub fn ego_path(&self) -> &ReferencePath {
        &self.ego_path
    }

    pub fn finished(&self) -> Option<RunEnd> {
        self.end
    }

    pub fn trace_hash(&self) -> u64 {
        self.trace_hash
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn odometer(&self) -> f64 {
        self.odometer
    }

    fn hash_f64(hash: &mut u64, v: f64) {
        for b in v.to_bits().to_le_bytes() {
            *hash ^= b as u64;
            *hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn hash_state(&mut self) {
        let mut h = self.trace_hash;
        Self::hash_f64(&mut h, self.state.time);
        for v in &self.state.vehicles {
            Self::hash_f64(&mut h, v.state.x);
            Self::hash_f64(&mut h, v.state.y);
            Self::hash_f64(&mut h, v.state.phi);
            Self::hash_f64(&mut h, v.state.delta);
            Self::hash_f64(&mut h, v.state.v);
        }
        self.trace_hash = h;
    }

    /// Pure-pursuit steering rate toward the agent's route.
    fn agent_steering(&self, agent: &AgentRuntime, state: &VehicleState) -> f64 {
        let lookahead = (0.9 * state.v).clamp(3.0, 12.0);
        let total = agent.path.total_length();
        if agent.route_theta >= total - 1.0 {
            // Past the route end: straighten out and carry on.
            return (-state.delta / SIM_DT)
                .clamp(-self.limits.delta_rate_max, self.limits.delta_rate_max);
        }
        let target = agent.path.frame_at(agent.route_theta + lookahead).pos;
        let local = state.pose().to_local(target);
        let alpha = local.y.atan2(local.x);
        let delta_des = (2.0 * self.limits.wheelbase_l * alpha.sin() / lookahead)
            .atan()
            .clamp(-self.limits.delta_max, self.limits.delta_max);
        ((delta_des - state.delta) / SIM_DT)
            .clamp(-self.limits.delta_rate_max, self.limits.delta_rate_max)
    }

    /// IDM longitudinal law; ignoring agents always see a free road.
    fn agent_accel(&self, idx: usize, agent: &AgentRuntime, state: &VehicleState) -> f64 {
        let v = state.v.max(0.0);
        let free = 1.0 - (v / agent.desired_speed).powi(IDM_EXPONENT);

        let interaction = if agent.ignores_leaders {
            0.0
        } else {
            let me = self.state.vehicles[idx + 1].footprint;
            let mut nearest: Option<(f64, f64)> = None; // (gap, leader speed)
            for (j, other) in self.state.vehicles.iter().enumerate() {
                if j == idx + 1 {
                    continue;
                }
                let p = other.state.position();
                let Ok(theta) = agent.path.project(p.x, p.y, Some(agent.route_theta)) else {
                    continue;
                };
                let ds = theta - agent.route_theta;
                if !(0.1..=LEADER_LOOKAHEAD).contains(&ds) {
                    continue;
                }
                let lateral = agent.path.frame_at(theta).pos.dist(p);
                if lateral > LEADER_CORRIDOR {
                    continue;
                }
                let gap = ds - me.half_length - other.footprint.half_length;
                if nearest.map_or(true, |(g, _)| gap < g) {
                    nearest = Some((gap, other.state.v));
                }
            }
            match nearest {
                Some((gap, _)) if gap < 0.3 => return self.limits.accel_min,
                Some((gap, leader_v)) => {
                    let dv = v - leader_v;
                    let s_star = IDM_MIN_GAP
                        + (v * IDM_TIME_HEADWAY
                            + v * dv / (2.0 * (IDM_ACCEL * IDM_COMFORT_DECEL).sqrt()))
                        .max(0.0);
                    let ratio = s_star / gap.max(0.1);
                    ratio * ratio
                }
                None => 0.0,
            }
        };

        (IDM_ACCEL * (free - interaction)).clamp(self.limits.accel_min, self.limits.accel_max)
    }

    /// Advances the world by one fixed step under the given ego input.
    pub fn step(&mut self, ego_input: ControlInput) -> &SimState {
        if self.end.is_some() {
            return &self.state; // terminal states absorb
        }
        let dt = SIM_DT;

        // Agents decide from the current (pre-step) world, then integrate.
        let mut next_states: Vec<VehicleState> = Vec::with_capacity(self.state.vehicles.len());
        let ego_prev = self.state.vehicles[0].state;
        let ego_next = integrate(&ego_prev, &ego_input, &self.limits, dt)
            .map(|(s, _)| s)
            .unwrap_or(ego_prev);
        next_states.push(ego_next);

        for (i, agent) in self.agents.iter().enumerate() {
            let state = self.state.vehicles[i + 1].state;
            let input = ControlInput::new(
                self.agent_steering(agent, &state),
                self.agent_accel(i, agent, &state),
            );
            let next = integrate(&state, &input, &self.limits, dt)
                .map(|(s, _)| s)
                .unwrap_or(state);
            next_states.push(next);
        }

        // Commit.
        self.state.time += dt;
        self.steps += 1;
        self.odometer += ego_next.position().dist(ego_prev.position());
        for (v, next) in self.state.vehicles.iter_mut().zip(next_states.iter()) {
            v.state = *next;
        }
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let s = self.state.vehicles[i + 1].state;
            agent.route_theta = agent
                .path
                .project(s.x, s.y, Some(agent.route_theta))
                .unwrap_or(agent.route_theta);
        }
        self.ego_theta = self
            .ego_path
            .project(ego_next.x, ego_next.y, Some(self.ego_theta))
            .unwrap_or(self.ego_theta);

        // Histories.
        let t = self.state.time;
        for (h, v) in self.histories.iter_mut().zip(self.state.vehicles.iter()) {
            let prev = *h.last();
            h.push(
                HistorySample {
                    t,
                    x: v.state.x,
                    y: v.state.y,
                    phi: v.state.phi,
                    v: v.state.v,
                    a: (v.state.v - prev.v) / dt,
                    w: angle_diff(v.state.phi, prev.phi) / dt,
                },
                64,
            );
        }

        // Collisions (any pair; ego involvement ends the run).
        let n = self.state.vehicles.len();
        for a in 0..n {
            for b in (a + 1)..n {
                let va = &self.state.vehicles[a];
                let vb = &self.state.vehicles[b];
                if collision_check(va.state.pose(), va.footprint, vb.state.pose(), vb.footprint) {
                    self.state
                        .events
                        .push(SimEvent::Collision { time: t, a, b });
                    if a == 0 {
                        self.end = Some(RunEnd::Collision);
                    }
                }
            }
        }

        if self.end.is_none() && self.ego_theta >= self.ego_path.total_length() - self.goal_radius {
            self.state.events.push(SimEvent::GoalReached { time: t });
            self.end = Some(RunEnd::Goal);
        }
        if self.end.is_none() && t >= self.max_duration - 1e-9 {
            self.state.events.push(SimEvent::Timeout { time: t });
            self.end = Some(RunEnd::Timeout);
        }

        self.hash_state();
        &self.state
    }

    /// Predicts every agent and assembles the stage-indexed risk field.
    fn build_field(&self) -> (Vec<PredictionSet>, RiskField) {
        let mut sets = Vec::with_capacity(self.agents.len());
        let mut preds = Vec::with_capacity(self.agents.len());
        for i in 0..self.agents.len() {
            let target = &self.histories[i + 1];
            let neighbors: Vec<&HistoryTrack> = self
                .histories
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i + 1)
                .map(|(_, h)| h)
                .collect();
            let set = self.predictor.predict(
                target,
                &neighbors,
                &self.graph,
                self.prediction.horizon_t,
                self.prediction.dt_pred,
            );
            let current = self.state.vehicles[i + 1].state.pose();
            preds.push(AgentPrediction {
                current,
                set: set.clone(),
            });
            sets.push(set);
        }
        let field = RiskField::build(
            &preds,
            self.risk_params,
            self.planner.config.horizon + 1,
            self.planner.config.dt,
            self.prediction.dt_pred,
        )
        .unwrap_or_else(|_| RiskField::empty(self.risk_params, self.planner.config.horizon + 1));
        (sets, field)
    }

    /// One full closed-loop step: predict, build the field, solve, apply the
    /// first input, advance the world.
    pub fn step_closed_loop(&mut self) -> StepRecord {
        let step_idx = self.steps;
        if self.end.is_some() {
            return StepRecord {
                step: step_idx,
                time: self.state.time,
                vehicles: self.state.vehicles.clone(),
                plan: None,
                predictions: Vec::new(),
                ego_risk: 0.0,
                events: Vec::new(),
                planned_horizon: Vec::new(),
            };
        }

        let (predictions, field) = self.build_field();
        let ego_state = self.state.vehicles[0].state;
        let warm = self
            .warm
            .take()
            .map(|prev| self.planner.warm_start_shift(&prev, &self.ego_path));
        let sol = self
            .planner
            .solve(&ego_state, &self.ego_path, &field, warm.as_ref());

        let ego_risk = if field.stage_count() > 0 {
            field.value_at(0, ego_state.x, ego_state.y)
        } else {
            0.0
        };

        let first = sol.first_input();
        let input_ok = first.control.delta_rate.is_finite() && first.control.accel.is_finite();
        let input = if input_ok {
            first.control
        } else {
            self.state.events.push(SimEvent::PlannerHold {
                time: self.state.time,
            });
            self.prev_input
        };
        self.prev_input = input;

        let plan = PlanSummary {
            status: sol.status,
            objective: sol.objective(),
            accepted_iterates: sol.objectives.len(),
            theta0: sol.states[0].theta_mu,
            input,
            v_theta: first.v_theta,
        };
        let planned_horizon: Vec<Vec2> = sol.states.iter().map(|s| s.vehicle.position()).collect();
        self.warm = Some(sol);

        let events_before = self.state.events.len();
        self.step(input);
        let events = self.state.events[events_before..].to_vec();

        StepRecord {
            step: step_idx,
            time: self.state.time,
            vehicles: self.state.vehicles.clone(),
            plan: Some(plan),
            predictions,
            ego_risk,
            events,
            planned_horizon,
        }
    }

    /// Runs the closed loop to termination and reports metrics.
    pub fn run_to_end(&mut self, seed: u64) -> RunMetrics {
        let step_cap = (self.max_duration / SIM_DT) as u64 + 10;
        while self.end.is_none() && self.steps < step_cap {
            self.step_closed_loop();
        }
        let time = self.state.time.max(SIM_DT);
        RunMetrics {
            seed,
            scenario_time: self.state.time,
            avg_speed: self.odometer / time,
            collision: matches!(self.end, Some(RunEnd::Collision)),
            goal_reached: matches!(self.end, Some(RunEnd::Goal)),
            steps: self.steps,
            trace_hash: self.trace_hash,
        }
    }
}

/// Executes the scenario for seeds `cfg.seed .. cfg.seed + repeats` and
/// aggregates the metrics.
pub fn run_scenario(cfg: &ScenarioConfig, repeats: u64) -> Result<MetricsReport, SimError> {
    let mut rows = Vec::with_capacity(repeats as usize);
    for seed in cfg.seed..cfg.seed + repeats.max(1) {
        let mut sim = Simulation::new(cfg, seed)?;
        rows.push(sim.run_to_end(seed));
    }
    Ok(MetricsReport::from_rows(rows))
}
