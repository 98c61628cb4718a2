//! Synchronous simulation of whole runs, failure detection, metrics and
//! scenario generation.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::avoidance::{AvoidanceParams, ObstacleIndex};
use crate::central::{c_unav_exchange, initial_consistent_assignment, tswap_solve, Assignment, TswapError};
use crate::error::ScenarioError;
use crate::geometry::Point;
use crate::pathfinding::FieldCache;
use crate::protocol::{
    agent_tick, communication_groups, neighbors_in_range, AgentId, AgentState, AgentStatus, Broadcast, GoalId,
    GoalMetric, NavContext, ProtocolParams, SelectionMode, TickError,
};
use crate::workspace::{Cell, GridMap};

/// Tolerance used by the collision and motion checks.
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DecUnav,
    CUnav,
    Orca,
    Tswap,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::DecUnav, Algorithm::CUnav, Algorithm::Orca, Algorithm::Tswap];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::DecUnav => "dec-unav",
            Algorithm::CUnav => "c-unav",
            Algorithm::Orca => "orca",
            Algorithm::Tswap => "tswap",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm '{s}' (expected dec-unav, c-unav, orca or tswap)"))
    }
}

/// Run parameters. Every field has a default so partial JSON configs work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub u_max: f64,
    pub r_phys: f64,
    pub r_safe: f64,
    pub k_exch: u64,
    pub r_comm: f64,
    pub tau_goal: f64,
    pub delta_wp: f64,
    pub delta_dev: f64,
    pub delta_block: f64,
    pub tau_agent: f64,
    pub tau_obst: f64,
    pub step_limit: u64,
    pub discrete_step_limit: usize,
    /// Continuous steps one discrete TSWAP step counts as.
    pub discrete_step_scale: u64,
    pub deadlock_window: usize,
    pub deadlock_threshold: f64,
    pub goal_selection: SelectionMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::DecUnav,
            u_max: 0.1,
            r_phys: 0.3,
            r_safe: 0.49,
            k_exch: 20,
            r_comm: 5.0,
            tau_goal: 0.3,
            delta_wp: 0.3,
            delta_dev: 1.0,
            delta_block: 0.98,
            tau_agent: 10.0,
            tau_obst: 10.0,
            step_limit: 20_000,
            discrete_step_limit: 2_000,
            discrete_step_scale: 10,
            deadlock_window: 1_000,
            deadlock_threshold: 1e-4,
            goal_selection: SelectionMode::Closest,
        }
    }
}

impl RunConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        RunConfig { algorithm, ..RunConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: &str| Err(ScenarioError::InvalidConfig(msg.to_string()));
        let positive = [
            ("u_max", self.u_max),
            ("r_phys", self.r_phys),
            ("r_comm", self.r_comm),
            ("tau_goal", self.tau_goal),
            ("delta_wp", self.delta_wp),
            ("delta_dev", self.delta_dev),
            ("tau_agent", self.tau_agent),
            ("tau_obst", self.tau_obst),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.r_phys < self.r_safe) {
            return bad("r_phys must be smaller than r_safe");
        }
        if self.r_comm <= 2.0 * self.r_safe {
            return bad("r_comm must exceed 2 * r_safe");
        }
        if self.k_exch == 0 || self.deadlock_window == 0 || self.discrete_step_scale == 0 {
            return bad("k_exch, deadlock_window and discrete_step_scale must be at least 1");
        }
        if self.delta_block < 0.0 || self.deadlock_threshold < 0.0 {
            return bad("delta_block and deadlock_threshold must be non-negative");
        }
        Ok(())
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            k_exch: self.k_exch,
            r_comm: self.r_comm,
            tau_goal: self.tau_goal,
            delta_wp: self.delta_wp,
            delta_dev: self.delta_dev,
            delta_block: self.delta_block,
            avoidance: AvoidanceParams {
                u_max: self.u_max,
                r_safe: self.r_safe,
                tau_agent: self.tau_agent,
                tau_obst: self.tau_obst,
            },
        }
    }
}

mod point_list {
    use crate::geometry::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(points: &[Point], s: S) -> Result<S::Ok, S::Error> {
        points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?.into_iter().map(|[x, y]| Point::new(x, y)).collect())
    }
}

/// Start and goal locations on a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInstance {
    pub map: String,
    #[serde(with = "point_list")]
    pub starts: Vec<Point>,
    #[serde(with = "point_list")]
    pub goals: Vec<Point>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioInstance {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// The first `n` start/goal pairs.
    pub fn truncated(&self, n: usize) -> Result<ScenarioInstance, ScenarioError> {
        if n > self.len() {
            return Err(ScenarioError::NotEnoughCells { requested: n, available: self.len() });
        }
        Ok(ScenarioInstance {
            map: self.map.clone(),
            starts: self.starts[..n].to_vec(),
            goals: self.goals[..n].to_vec(),
            seed: self.seed,
        })
    }

    pub fn validate(&self, map: &GridMap, r_safe: f64) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidInstance(msg));
        if self.starts.len() != self.goals.len() {
            return bad(format!("{} starts but {} goals", self.starts.len(), self.goals.len()));
        }
        for (kind, pts) in [("start", &self.starts), ("goal", &self.goals)] {
            for (i, &p) in pts.iter().enumerate() {
                if !p.is_finite() || !map.disk_in_free_space(p, r_safe) {
                    return bad(format!("{kind} {i} at ({}, {}) is not in free space", p.x, p.y));
                }
            }
        }
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if self.starts[i].dist(self.starts[j]) < 2.0 * r_safe {
                    return bad(format!("starts {i} and {j} are closer than 2 * r_safe"));
                }
                if self.goals[i] == self.goals[j] {
                    return bad(format!("goals {i} and {j} coincide"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FailTimeout,
    FailCollision,
    FailDeadlock,
    FailNoGoal,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::FailTimeout => "fail_timeout",
            Outcome::FailCollision => "fail_collision",
            Outcome::FailDeadlock => "fail_deadlock",
            Outcome::FailNoGoal => "fail_no_goal",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub makespan: u64,
    pub flowtime: u64,
    pub maxdist: f64,
    pub sumdist: f64,
}

/// One goal-exchange tick. `total_before`/`total_after` are Σ pathLen of
/// every agent to its goal just before and after the exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeEvent {
    pub t: u64,
    pub swaps: usize,
    pub deadlock_swaps: usize,
    pub total_before: f64,
    pub total_after: f64,
}

/// Property counters gathered while running.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunChecks {
    /// Reached flags that went from true to false in some agent's table.
    pub reached_flips: u64,
    /// Goal swaps that did not strictly shrink the pair's summed path length.
    pub non_improving_swaps: u64,
    /// Central exchanges that left a non-bijective assignment.
    pub inconsistent_exchanges: u64,
    /// First step from which the agent → goal map stayed bijective.
    pub consistent_since: Option<u64>,
    /// Largest per-step displacement of any agent.
    pub max_step: f64,
    /// Smallest distance between two agents over the run.
    pub min_pair_distance: Option<f64>,
    /// Smallest distance from an agent center to an obstacle over the run
    /// (capped at 2).
    pub min_clearance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub outcome: Outcome,
    /// Committed steps (continuous-step equivalents for TSWAP).
    pub steps: u64,
    pub metrics: Option<Metrics>,
    pub checks: RunChecks,
    pub events: Vec<ExchangeEvent>,
}

/// Positions of one agent per step, starting with its start position.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Point>,
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        self.positions.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Smallest `t` from which the agent no longer moves.
    pub fn duration(&self) -> u64 {
        (1..self.positions.len())
            .rev()
            .find(|&t| self.positions[t].dist(self.positions[t - 1]) >= GEOM_TOL)
            .unwrap_or(0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: u64,
    pub agent: u32,
    pub x: f64,
    pub y: f64,
    pub goal: usize,
    pub status: &'static str,
}

/// Everything a run produces when asked to keep the details.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub result: RunResult,
    pub trajectories: Vec<Trajectory>,
    pub trace: Vec<TraceRow>,
}

/// True iff two agents are closer than `2 * r_phys` or an agent disk of
/// radius `r_phys` overlaps an obstacle (both with a 1e-9 tolerance).
pub fn detect_collision(positions: &[Point], map: &GridMap, r_phys: f64) -> bool {
    let limit = 2.0 * r_phys - GEOM_TOL;
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            if positions[i].dist(positions[j]) < limit {
                return true;
            }
        }
    }
    positions.iter().any(|&p| !map.disk_in_free_space(p, r_phys - GEOM_TOL))
}

/// True iff the mean of the last `window` entries of `mean_speeds` (the mean
/// agent displacement of each step) is below `threshold`. Needs at least
/// `window` steps.
pub fn detect_deadlock(mean_speeds: &[f64], window: usize, threshold: f64) -> bool {
    if window == 0 || mean_speeds.len() < window {
        return false;
    }
    let tail = &mean_speeds[mean_speeds.len() - window..];
    tail.iter().sum::<f64>() / (window as f64) < threshold
}

fn all_goals_occupied(positions: &[Point], goals: &[Point], tau_goal: f64) -> bool {
    goals.iter().all(|&g| positions.iter().any(|&p| p.dist(g) <= tau_goal))
}

/// Metrics of a finished run. Fails if the goals are not all occupied at
/// the end of the trajectories.
pub fn compute_metrics(trajectories: &[Trajectory], goals: &[Point], tau_goal: f64) -> Result<Metrics, ScenarioError> {
    let horizon = trajectories.iter().map(|t| t.positions.len()).max().unwrap_or(0);
    if trajectories.iter().any(|t| t.positions.len() != horizon) || horizon == 0 {
        return Err(ScenarioError::InvalidInstance("trajectories must be non-empty and of equal length".into()));
    }
    let at = |t: usize| -> Vec<Point> { trajectories.iter().map(|tr| tr.positions[t]).collect() };
    if !all_goals_occupied(&at(horizon - 1), goals, tau_goal) {
        return Err(ScenarioError::InvalidInstance("not every goal is occupied".into()));
    }
    let durations: Vec<u64> = trajectories.iter().map(Trajectory::duration).collect();
    let lengths: Vec<f64> = trajectories.iter().map(Trajectory::length).collect();
    Ok(Metrics {
        makespan: durations.iter().copied().max().unwrap_or(0),
        flowtime: durations.iter().sum(),
        maxdist: lengths.iter().copied().fold(0.0, f64::max),
        sumdist: lengths.iter().sum(),
    })
}

/// Largest 4-connected component of free cells; ties go to the component
/// containing the smallest cell index.
fn largest_component(map: &GridMap) -> Vec<Cell> {
    let mut seen = vec![false; map.cell_count()];
    let mut best: Vec<Cell> = Vec::new();
    for start in map.free_cells() {
        if seen[map.index(start)] {
            continue;
        }
        let mut comp = vec![start];
        seen[map.index(start)] = true;
        let mut queue = VecDeque::from([start]);
        while let Some((c, r)) = queue.pop_front() {
            for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                if map.is_blocked_at(nc, nr) {
                    continue;
                }
                let cell = (nc as usize, nr as usize);
                if !seen[map.index(cell)] {
                    seen[map.index(cell)] = true;
                    comp.push(cell);
                    queue.push_back(cell);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_by_key(|&cell| map.index(cell));
    best
}

/// `count` instances with `pairs` start/goal pairs each, at centers of
/// distinct cells of the map's largest 4-connected free area whose center
/// disk of radius `r_safe` is free. Starts and goals are drawn independently.
pub fn generate_instances(
    map: &GridMap,
    map_ref: &str,
    count: usize,
    pairs: usize,
    seed: u64,
    r_safe: f64,
) -> Result<Vec<ScenarioInstance>, ScenarioError> {
    let candidates: Vec<Cell> = largest_component(map)
        .into_iter()
        .filter(|&c| map.disk_in_free_space(map.center(c), r_safe))
        .collect();
    if candidates.len() < pairs {
        return Err(ScenarioError::NotEnoughCells { requested: pairs, available: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Point> {
        candidates.choose_multiple(rng, pairs).map(|&c| map.center(c)).collect()
    };
    Ok((0..count)
        .map(|k| {
            let starts = draw(&mut rng);
            let goals = draw(&mut rng);
            ScenarioInstance {
                map: map_ref.to_string(),
                starts,
                goals,
                seed: seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
            }
        })
        .collect())
}

/// Runs one instance and returns the summary.
pub fn run(instance: &ScenarioInstance, map: &GridMap, config: &RunConfig) -> Result<RunResult, ScenarioError> {
    Ok(run_detailed(instance, map, config, false)?.result)
}

/// Runs one instance keeping trajectories, and the per-step trace when
/// `trace` is set.
pub fn run_detailed(
    instance: &ScenarioInstance,
    map: &GridMap,
    config: &RunConfig,
    trace: bool,
) -> Result<RunRecord, ScenarioError> {
    config.validate()?;
    instance.validate(map, config.r_safe)?;
    match config.algorithm {
        Algorithm::Tswap => Ok(run_tswap(instance, map, config, trace)),
        _ => Ok(Continuous::new(instance, map, config, trace).run()),
    }
}

fn lower(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.map_or(v, |m| m.min(v)));
}

fn failed(algorithm: Algorithm, outcome: Outcome, steps: u64, checks: RunChecks, events: Vec<ExchangeEvent>) -> RunResult {
    RunResult { algorithm, outcome, steps, metrics: None, checks, events }
}

fn is_bijective(goals: &[GoalId], n_goals: usize) -> bool {
    Assignment::new(goals.to_vec()).is_consistent(n_goals)
}

struct Continuous<'a> {
    instance: &'a ScenarioInstance,
    map: &'a GridMap,
    config: &'a RunConfig,
    params: ProtocolParams,
    fields: FieldCache,
    obstacles: ObstacleIndex,
    record_trace: bool,
}

impl<'a> Continuous<'a> {
    fn new(instance: &'a ScenarioInstance, map: &'a GridMap, config: &'a RunConfig, record_trace: bool) -> Self {
        let params = config.protocol_params();
        let fields = FieldCache::new(Arc::new(map.clone()), instance.goals.clone(), config.r_safe);
        let obstacles = ObstacleIndex::new(map, config.r_safe + config.tau_obst * config.u_max);
        Continuous { instance, map, config, params, fields, obstacles, record_trace }
    }

    fn ctx(&self) -> NavContext<'_> {
        NavContext { map: self.map, fields: &self.fields, obstacles: &self.obstacles, params: &self.params }
    }

    fn total_len(&self, agents: &[AgentState]) -> f64 {
        agents.iter().map(|a| self.fields.path_len(a.goal.0, a.position)).sum()
    }

    fn init_agents(&self) -> Result<Vec<AgentState>, TickError> {
        let ctx = self.ctx();
        let n = self.instance.len();
        match self.config.algorithm {
            Algorithm::DecUnav => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.instance.seed);
                (0..n)
                    .map(|i| {
                        AgentState::init(
                            AgentId(i as u32),
                            self.instance.starts[i],
                            self.config.goal_selection,
                            &mut rng,
                            &ctx,
                        )
                    })
                    .collect()
            }
            _ => {
                let assignment = initial_consistent_assignment(&self.instance.starts, &ctx.metric())
                    .map_err(|e| TickError::GoalUpdate(crate::protocol::GoalUpdateFailure { agent: e.agent }))?;
                (0..n)
                    .map(|i| {
                        let id = AgentId(i as u32);
                        AgentState::with_goal(id, self.instance.starts[i], assignment.goal(id), &ctx)
                    })
                    .collect()
            }
        }
    }

    fn trace_rows(&self, t: u64, agents: &[AgentState], rows: &mut Vec<TraceRow>) {
        if !self.record_trace {
            return;
        }
        rows.extend(agents.iter().map(|a| TraceRow {
            t,
            agent: a.id.0,
            x: a.position.x,
            y: a.position.y,
            goal: a.goal.0,
            status: a.status.as_str(),
        }));
    }

    /// DEC-UNAV: every agent ticks on the snapshot of its communication group.
    fn decide_decentralized(
        &self,
        t: u64,
        agents: &mut [AgentState],
        checks: &mut RunChecks,
        events: &mut Vec<ExchangeEvent>,
    ) -> Result<Vec<Point>, TickError> {
        let ctx = self.ctx();
        let exchange = t % self.params.k_exch == 0;
        let total_before = if exchange { self.total_len(agents) } else { 0.0 };
        let snapshot: Vec<Broadcast> = agents.iter().map(AgentState::broadcast).collect();
        let located: Vec<(AgentId, Point)> = snapshot.iter().map(|b| (b.id, b.position)).collect();
        let groups = communication_groups(&located, self.params.r_comm);
        let mut actions = vec![Point::ZERO; agents.len()];
        let mut swaps = BTreeMap::new();
        let mut deadlock_swaps = BTreeMap::new();
        for group in &groups {
            let members: Vec<&Broadcast> = group.iter().map(|id| &snapshot[id.0 as usize]).collect();
            for id in group {
                let state = &mut agents[id.0 as usize];
                let before = state.reached.clone();
                let report = agent_tick(state, &members, t, &ctx)?;
                checks.reached_flips +=
                    before.iter().zip(&state.reached).filter(|(&was, &now)| was && !now).count() as u64;
                for s in report.swaps {
                    swaps.insert((s.high, s.low), s);
                }
                for pair in report.deadlock_swaps {
                    deadlock_swaps.insert(pair, ());
                }
                actions[id.0 as usize] = report.action;
            }
        }
        checks.non_improving_swaps += swaps.values().filter(|s| !(s.after < s.before)).count() as u64;
        if exchange {
            events.push(ExchangeEvent {
                t,
                swaps: swaps.len(),
                deadlock_swaps: deadlock_swaps.len(),
                total_before,
                total_after: self.total_len(agents),
            });
        }
        Ok(actions)
    }

    /// C-UNAV and the ORCA baseline: a global assignment, exchanged by the
    /// center for C-UNAV and fixed for ORCA.
    fn decide_central(
        &self,
        t: u64,
        agents: &mut [AgentState],
        checks: &mut RunChecks,
        events: &mut Vec<ExchangeEvent>,
    ) -> Result<Vec<Point>, TickError> {
        let ctx = self.ctx();
        let metric = ctx.metric();
        if self.config.algorithm == Algorithm::CUnav && t % self.params.k_exch == 0 {
            let positions: Vec<Point> = agents.iter().map(|a| a.position).collect();
            let mut assignment = Assignment::new(agents.iter().map(|a| a.goal).collect());
            let total_before = assignment.total_len(&positions, &metric);
            let swaps = c_unav_exchange(&positions, &mut assignment, &metric);
            if !assignment.is_consistent(self.instance.len()) {
                checks.inconsistent_exchanges += 1;
            }
            checks.non_improving_swaps += swaps.iter().filter(|s| !(s.after < s.before)).count() as u64;
            for a in agents.iter_mut() {
                a.retarget(assignment.goal(a.id), &ctx)?;
            }
            events.push(ExchangeEvent {
                t,
                swaps: swaps.len(),
                deadlock_swaps: 0,
                total_before,
                total_after: assignment.total_len(&positions, &metric),
            });
        } else {
            for a in agents.iter_mut() {
                let g = a.goal;
                a.retarget(g, &ctx)?;
            }
        }
        let snapshot: Vec<Broadcast> = agents.iter().map(AgentState::broadcast).collect();
        let all: Vec<&Broadcast> = snapshot.iter().collect();
        Ok(agents
            .iter_mut()
            .zip(&snapshot)
            .map(|(a, me)| {
                let neighbors = neighbors_in_range(me, &all, self.params.r_comm);
                a.safe_action(&neighbors, &ctx)
            })
            .collect())
    }

    fn run(&self) -> RunRecord {
        let algorithm = self.config.algorithm;
        let n = self.instance.len();
        let mut checks = RunChecks::default();
        let mut events = Vec::new();
        let mut rows = Vec::new();
        let mut agents = match self.init_agents() {
            Ok(a) => a,
            Err(_) => {
                return RunRecord {
                    result: failed(algorithm, Outcome::FailNoGoal, 0, checks, events),
                    trajectories: Vec::new(),
                    trace: rows,
                }
            }
        };
        let mut trajectories: Vec<Trajectory> =
            agents.iter().map(|a| Trajectory { positions: vec![a.position] }).collect();
        let mut mean_speeds: Vec<f64> = Vec::new();
        let mut last_inconsistent: Option<u64> = None;
        self.observe(0, &agents, &mut checks, &mut last_inconsistent);
        self.trace_rows(0, &agents, &mut rows);

        let finish = |outcome: Outcome, steps: u64, checks: RunChecks, events, trajectories, rows| RunRecord {
            result: failed(algorithm, outcome, steps, checks, events),
            trajectories,
            trace: rows,
        };

        for t in 0..self.config.step_limit {
            let decided = match algorithm {
                Algorithm::DecUnav => self.decide_decentralized(t, &mut agents, &mut checks, &mut events),
                _ => self.decide_central(t, &mut agents, &mut checks, &mut events),
            };
            let actions = match decided {
                Ok(a) => a,
                Err(_) => return finish(Outcome::FailNoGoal, t, checks, events, trajectories, rows),
            };
            let mut speed_sum = 0.0;
            for (a, u) in agents.iter_mut().zip(&actions) {
                a.apply(*u);
                let step = u.norm();
                speed_sum += step;
                checks.max_step = checks.max_step.max(step);
            }
            for (traj, a) in trajectories.iter_mut().zip(&agents) {
                traj.positions.push(a.position);
            }
            mean_speeds.push(speed_sum / n.max(1) as f64);
            let now = t + 1;
            if algorithm != Algorithm::DecUnav {
                for a in agents.iter_mut() {
                    a.status = if a.position.dist(self.fields.goals()[a.goal.0]) <= self.config.tau_goal {
                        AgentStatus::Reached
                    } else {
                        AgentStatus::MoveToGoal
                    };
                }
            }
            self.observe(now, &agents, &mut checks, &mut last_inconsistent);
            self.trace_rows(now, &agents, &mut rows);

            let positions: Vec<Point> = agents.iter().map(|a| a.position).collect();
            if detect_collision(&positions, self.map, self.config.r_phys) {
                return finish(Outcome::FailCollision, now, checks, events, trajectories, rows);
            }
            if self.succeeded(&agents) {
                checks.consistent_since = Some(last_inconsistent.map_or(0, |t| t + 1));
                let metrics = compute_metrics(&trajectories, &self.instance.goals, self.config.tau_goal)
                    .expect("goals are occupied on success");
                return RunRecord {
                    result: RunResult { algorithm, outcome: Outcome::Success, steps: now, metrics: Some(metrics), checks, events },
                    trajectories,
                    trace: rows,
                };
            }
            if detect_deadlock(&mean_speeds, self.config.deadlock_window, self.config.deadlock_threshold) {
                return finish(Outcome::FailDeadlock, now, checks, events, trajectories, rows);
            }
        }
        finish(Outcome::FailTimeout, self.config.step_limit, checks, events, trajectories, rows)
    }

    /// Every agent sits within `tau_goal` of its own goal and no two agents
    /// share one.
    fn succeeded(&self, agents: &[AgentState]) -> bool {
        let goals: Vec<GoalId> = agents.iter().map(|a| a.goal).collect();
        is_bijective(&goals, self.instance.len())
            && agents.iter().all(|a| a.position.dist(self.fields.goals()[a.goal.0]) <= self.config.tau_goal)
    }

    fn observe(&self, t: u64, agents: &[AgentState], checks: &mut RunChecks, last_inconsistent: &mut Option<u64>) {
        let goals: Vec<GoalId> = agents.iter().map(|a| a.goal).collect();
        if !is_bijective(&goals, self.instance.len()) {
            *last_inconsistent = Some(t);
        }
        for i in 0..agents.len() {
            let p = agents[i].position;
            lower(&mut checks.min_clearance, self.map.clearance(p, 2.0));
            for other in &agents[i + 1..] {
                lower(&mut checks.min_pair_distance, p.dist(other.position));
            }
        }
    }
}

fn run_tswap(instance: &ScenarioInstance, map: &GridMap, config: &RunConfig, trace: bool) -> RunRecord {
    let algorithm = Algorithm::Tswap;
    let mut checks = RunChecks::default();
    let no_goal = |checks| RunRecord {
        result: failed(algorithm, Outcome::FailNoGoal, 0, checks, Vec::new()),
        trajectories: Vec::new(),
        trace: Vec::new(),
    };
    let fields = FieldCache::new(Arc::new(map.clone()), instance.goals.clone(), config.r_safe);
    let metric = crate::protocol::FieldMetric { fields: &fields, near_radius: config.tau_goal };
    let Ok(assignment) = initial_consistent_assignment(&instance.starts, &metric) else {
        return no_goal(checks);
    };
    let cell = |p: Point| map.cell_at(p).expect("validated points lie on the map");
    let starts: Vec<Cell> = instance.starts.iter().map(|&p| cell(p)).collect();
    let targets: Vec<Cell> = instance.goals.iter().map(|&p| cell(p)).collect();
    let scale = config.discrete_step_scale;
    let schedule = match tswap_solve(map, &starts, &targets, &assignment, config.discrete_step_limit) {
        Ok(s) => s,
        Err(TswapError::Invalid(_)) => return no_goal(checks),
        Err(TswapError::StepLimit { .. }) => {
            return RunRecord {
                result: failed(algorithm, Outcome::FailTimeout, config.discrete_step_limit as u64 * scale, checks, Vec::new()),
                trajectories: Vec::new(),
                trace: Vec::new(),
            }
        }
    };

    let n = starts.len();
    let mut rows = Vec::new();
    let trajectories: Vec<Trajectory> = (0..n)
        .map(|a| Trajectory { positions: schedule.steps.iter().map(|s| map.center(s[a])).collect() })
        .collect();
    for (t, cells) in schedule.steps.iter().enumerate() {
        let centers: Vec<Point> = cells.iter().map(|&c| map.center(c)).collect();
        for i in 0..n {
            lower(&mut checks.min_clearance, map.clearance(centers[i], 2.0));
            for j in (i + 1)..n {
                lower(&mut checks.min_pair_distance, centers[i].dist(centers[j]));
            }
            if t > 0 {
                checks.max_step = checks.max_step.max(centers[i].dist(map.center(schedule.steps[t - 1][i])));
            }
        }
        if trace {
            for (a, &p) in centers.iter().enumerate() {
                let target = schedule.targets[t][a];
                rows.push(TraceRow {
                    t: t as u64 * scale,
                    agent: a as u32,
                    x: p.x,
                    y: p.y,
                    goal: target,
                    status: if cells[a] == targets[target] { "reached" } else { "moveToGoal" },
                });
            }
        }
    }
    checks.consistent_since = Some(0);
    let lengths: Vec<f64> = (0..n).map(|a| schedule.moves(a) as f64).collect();
    let metrics = Metrics {
        makespan: schedule.makespan() as u64 * scale,
        flowtime: (0..n).map(|a| schedule.finish(a) as u64 * scale).sum(),
        maxdist: lengths.iter().copied().fold(0.0, f64::max),
        sumdist: lengths.iter().sum(),
    };
    RunRecord {
        result: RunResult {
            algorithm,
            outcome: Outcome::Success,
            steps: schedule.makespan() as u64 * scale,
            metrics: Some(metrics),
            checks,
            events: Vec::new(),
        },
        trajectories,
        trace: rows,
    }
}

/// Σ pathLen of the current assignment, exposed for property checks.
pub fn assignment_cost<M: GoalMetric>(positions: &[Point], goals: &[GoalId], metric: &M) -> f64 {
    Assignment::new(goals.to_vec()).total_len(positions, metric)
}
