//! The decentralized unlabeled navigation protocol.
//!
//! Every agent keeps three tables: the goal assignment it knows for its
//! neighbors (`GA`), their statuses (`AS`) and a persistent per-goal
//! "reached" flag (`GR`). Agents that can hear each other form a group,
//! OR-merge their reached flags every step, and on exchange ticks run
//! [`goal_update`] to restore a consistent assignment and to swap goals when
//! that shortens the pair's combined path. A second exchange rule
//! ([`deadlock_goal_exchange`]) lets an agent parked on its goal hand that goal
//! to an agent whose path runs through it.
//!
//! Priority is the numeric agent id: a larger id means a higher priority.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avoidance::{compute_action, AvoidanceParams, Kinematics, ObstacleIndex, PathFollower};
use crate::geometry::{point_polyline_distance, Point, Segment, Vec2};
use crate::pathfinding::{construct_path, FieldCache};
use crate::workspace::GridMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Index into the scenario's goal list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GoalId(pub usize);

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentStatus {
    #[serde(rename = "moveToGoal")]
    MoveToGoal,
    #[serde(rename = "reached")]
    Reached,
}

impl AgentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::MoveToGoal => "moveToGoal",
            AgentStatus::Reached => "reached",
        }
    }
}

/// The local knowledge an agent works with during a goal update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoalTables {
    /// GA: known goal of each agent.
    pub assignment: BTreeMap<AgentId, GoalId>,
    /// AS: known status of each agent.
    pub status: BTreeMap<AgentId, AgentStatus>,
    /// GR: reached flag per goal. Never goes from true to false.
    pub reached: Vec<bool>,
}

impl GoalTables {
    pub fn goal(&self, a: AgentId) -> GoalId {
        self.assignment[&a]
    }

    pub fn status_of(&self, a: AgentId) -> AgentStatus {
        self.status[&a]
    }
}

/// Path-length and proximity oracle the exchange rules are written against.
pub trait GoalMetric {
    fn goal_count(&self) -> usize;
    fn path_len(&self, p: Point, g: GoalId) -> f64;
    fn near(&self, p: Point, g: GoalId) -> bool;
}

/// Production metric: distance-field path lengths and a Euclidean
/// "close enough" radius around each goal point.
#[derive(Debug, Clone, Copy)]
pub struct FieldMetric<'a> {
    pub fields: &'a FieldCache,
    pub near_radius: f64,
}

impl GoalMetric for FieldMetric<'_> {
    fn goal_count(&self) -> usize {
        self.fields.goals().len()
    }

    fn path_len(&self, p: Point, g: GoalId) -> f64 {
        self.fields.path_len(g.0, p)
    }

    fn near(&self, p: Point, g: GoalId) -> bool {
        p.dist(self.fields.goals()[g.0]) <= self.near_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    #[default]
    Closest,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no goal is reachable from the agent's position")]
pub struct NoReachableGoal;

/// Initial goal: the nearest reachable goal (ties to the smaller id), or a
/// uniformly random reachable one.
pub fn select_initial_goal<M: GoalMetric, R: Rng>(
    p: Point,
    metric: &M,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<GoalId, NoReachableGoal> {
    let lengths: Vec<(GoalId, f64)> = (0..metric.goal_count())
        .map(GoalId)
        .map(|g| (g, metric.path_len(p, g)))
        .filter(|(_, d)| d.is_finite())
        .collect();
    if lengths.is_empty() {
        return Err(NoReachableGoal);
    }
    Ok(match mode {
        SelectionMode::Closest => {
            let mut best = lengths[0];
            for &cand in &lengths[1..] {
                if cand.1 < best.1 {
                    best = cand;
                }
            }
            best.0
        }
        SelectionMode::Random => lengths[rng.gen_range(0..lengths.len())].0,
    })
}

/// Connected components of the "within `radius`" graph. Each group is
/// sorted by descending priority; groups are ordered by their leader.
pub fn communication_groups(agents: &[(AgentId, Point)], radius: f64) -> Vec<Vec<AgentId>> {
    assert!(radius > 0.0);
    let n = agents.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if agents[i].1.dist(agents[j].1) <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<AgentId>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(agents[i].0);
    }
    let mut out: Vec<Vec<AgentId>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable_by(|a, b| b.cmp(a));
            g
        })
        .collect();
    out.sort_unstable_by(|a, b| b[0].cmp(&a[0]));
    out
}

/// Element-wise OR of reached tables.
pub fn merge_reached_tables(own: &[bool], others: &[&[bool]]) -> Vec<bool> {
    let mut out = own.to_vec();
    for table in others {
        assert_eq!(table.len(), out.len(), "reached tables must cover the same goals");
        for (o, &t) in out.iter_mut().zip(table.iter()) {
            *o |= t;
        }
    }
    out
}

/// May higher-priority agent `j` (at `p_j`, holding `g_j`) trade goals with
/// lower-priority `k`? Only if `j` gets closer to its goal and the pair's
/// summed path length shrinks.
pub fn swappable<M: GoalMetric>(p_j: Point, g_j: GoalId, p_k: Point, g_k: GoalId, metric: &M) -> bool {
    let jj = metric.path_len(p_j, g_j);
    let jk = metric.path_len(p_j, g_k);
    let kk = metric.path_len(p_k, g_k);
    let kj = metric.path_len(p_k, g_j);
    jj > jk && jj + kk > jk + kj
}

/// A goal swap performed by [`goal_update`], with the pair's summed path
/// length before and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwapRecord {
    pub high: AgentId,
    pub low: AgentId,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalUpdate {
    pub goal: GoalId,
    pub status: AgentStatus,
    pub swaps: Vec<SwapRecord>,
}

/// A group member left without any reachable goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("agent {agent} has no reachable unclaimed goal")]
pub struct GoalUpdateFailure {
    pub agent: AgentId,
}

/// Closest goal (finite path length, ties to the smaller id) among those in
/// the working set, not reached, and different from `exclude`.
fn closest_unreached<M: GoalMetric>(
    p: Point,
    working: &[bool],
    reached: &[bool],
    exclude: Option<GoalId>,
    metric: &M,
) -> Option<GoalId> {
    let mut best: Option<(GoalId, f64)> = None;
    for g in 0..working.len() {
        if !working[g] || reached[g] || exclude == Some(GoalId(g)) {
            continue;
        }
        let d = metric.path_len(p, GoalId(g));
        if d.is_finite() && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((GoalId(g), d));
        }
    }
    best.map(|(g, _)| g)
}

/// Goal update for agent `i` over its group `group` (descending priority).
///
/// `tables` holds the group's known assignment and statuses plus the merged
/// reached flags; it is updated in place for the whole group, and `i`'s new
/// goal and status are returned. The working goal set starts as every goal
/// and loses each processed agent's goal.
pub fn goal_update<M: GoalMetric>(
    i: AgentId,
    group: &[AgentId],
    positions: &BTreeMap<AgentId, Point>,
    tables: &mut GoalTables,
    metric: &M,
) -> Result<GoalUpdate, GoalUpdateFailure> {
    debug_assert!(group.windows(2).all(|w| w[0] > w[1]), "group must be in priority order");
    debug_assert!(group.contains(&i));
    let n_goals = metric.goal_count();
    assert_eq!(tables.reached.len(), n_goals);
    let mut working = vec![true; n_goals];
    let mut swaps = Vec::new();

    for (pos, &j) in group.iter().enumerate() {
        let pj = positions[&j];

        // j's goal was reached by someone else
        if tables.status[&j] == AgentStatus::MoveToGoal && tables.reached[tables.assignment[&j].0] {
            let g = closest_unreached(pj, &working, &tables.reached, None, metric)
                .ok_or(GoalUpdateFailure { agent: j })?;
            tables.assignment.insert(j, g);
        }

        // j arrived
        if tables.status[&j] != AgentStatus::Reached && metric.near(pj, tables.assignment[&j]) {
            tables.status.insert(j, AgentStatus::Reached);
            tables.reached[tables.assignment[&j].0] = true;
        }

        for &k in &group[pos + 1..] {
            let pk = positions[&k];
            let gj = tables.assignment[&j];
            let gk = tables.assignment[&k];
            if gj == gk {
                let alternative = closest_unreached(pj, &working, &tables.reached, None, metric);
                match alternative {
                    Some(g) if tables.status[&j] != AgentStatus::Reached && g != gj => {
                        tables.assignment.insert(j, g);
                    }
                    _ => {
                        let g = closest_unreached(pk, &working, &tables.reached, Some(gj), metric)
                            .ok_or(GoalUpdateFailure { agent: k })?;
                        tables.assignment.insert(k, g);
                        tables.status.insert(k, AgentStatus::MoveToGoal);
                    }
                }
            } else if tables.status[&j] != AgentStatus::Reached
                && tables.status[&k] != AgentStatus::Reached
                && !tables.reached[gk.0]
                && swappable(pj, gj, pk, gk, metric)
            {
                let before = metric.path_len(pj, gj) + metric.path_len(pk, gk);
                let after = metric.path_len(pj, gk) + metric.path_len(pk, gj);
                debug_assert!(after < before);
                swaps.push(SwapRecord { high: j, low: k, before, after });
                tables.assignment.insert(j, gk);
                tables.assignment.insert(k, gj);
            }
        }
        working[tables.assignment[&j].0] = false;
    }

    Ok(GoalUpdate { goal: tables.assignment[&i], status: tables.status[&i], swaps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlockParams {
    /// How close an agent must be to its goal to count as parked on it.
    pub near_radius: f64,
    /// How close another agent's remaining path must pass to the goal.
    pub block_radius: f64,
}

/// Hands the goal of an agent `a` parked on it to agent `b` whose remaining
/// path (starting at `b`'s position) runs through it; `a` takes over `b`'s
/// goal. `b` must not be parked on its own goal. Goals and statuses are
/// exchanged together, so the reached bookkeeping of `a`'s goal travels with
/// it. Returns whether the exchange happened.
pub fn deadlock_goal_exchange(
    a: AgentId,
    a_position: Point,
    b: AgentId,
    b_remaining: &[Point],
    tables: &mut GoalTables,
    goals: &[Point],
    params: &DeadlockParams,
) -> bool {
    let ga = tables.assignment[&a];
    let gb = tables.assignment[&b];
    if a == b || ga == gb || b_remaining[0].dist(goals[gb.0]) <= params.near_radius {
        return false;
    }
    let goal_a = goals[ga.0];
    if a_position.dist(goal_a) > params.near_radius {
        return false;
    }
    if point_polyline_distance(goal_a, b_remaining) > params.block_radius {
        return false;
    }
    let (sa, sb) = (tables.status[&a], tables.status[&b]);
    tables.assignment.insert(a, gb);
    tables.assignment.insert(b, ga);
    tables.status.insert(a, sb);
    tables.status.insert(b, sa);
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub k_exch: u64,
    pub r_comm: f64,
    pub tau_goal: f64,
    pub delta_wp: f64,
    pub delta_dev: f64,
    pub delta_block: f64,
    pub avoidance: AvoidanceParams,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        let avoidance = AvoidanceParams::default();
        ProtocolParams {
            k_exch: 20,
            r_comm: 5.0,
            tau_goal: 0.3,
            delta_wp: 0.3,
            delta_dev: 1.0,
            delta_block: 2.0 * avoidance.r_safe,
            avoidance,
        }
    }
}

/// Shared, read-only world knowledge for one run.
#[derive(Debug, Clone, Copy)]
pub struct NavContext<'a> {
    pub map: &'a GridMap,
    pub fields: &'a FieldCache,
    pub obstacles: &'a ObstacleIndex,
    pub params: &'a ProtocolParams,
}

impl NavContext<'_> {
    pub fn metric(&self) -> FieldMetric<'_> {
        FieldMetric { fields: self.fields, near_radius: self.params.tau_goal }
    }

    pub fn goal_point(&self, g: GoalId) -> Point {
        self.fields.goals()[g.0]
    }
}

/// An agent's own state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub position: Point,
    pub velocity: Vec2,
    pub goal: GoalId,
    pub status: AgentStatus,
    pub follower: PathFollower,
    pub reached: Vec<bool>,
}

/// What an agent shares with its group each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub id: AgentId,
    pub position: Point,
    pub velocity: Vec2,
    pub goal: GoalId,
    pub status: AgentStatus,
    pub reached: Vec<bool>,
    pub remaining: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TickError {
    #[error(transparent)]
    NoGoal(#[from] NoReachableGoal),
    #[error(transparent)]
    GoalUpdate(#[from] GoalUpdateFailure),
    #[error("agent {agent}: no path to goal {goal}")]
    PathNotFound { agent: AgentId, goal: GoalId },
}

/// Per-tick account of what an agent did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickReport {
    pub action: Vec2,
    pub exchanged: bool,
    pub swaps: Vec<SwapRecord>,
    pub deadlock_swaps: Vec<(AgentId, AgentId)>,
    pub replanned: bool,
}

impl AgentState {
    /// Chooses an initial goal and plans towards it. Fails when nothing is
    /// reachable.
    pub fn init<R: Rng>(
        id: AgentId,
        position: Point,
        mode: SelectionMode,
        rng: &mut R,
        ctx: &NavContext<'_>,
    ) -> Result<Self, TickError> {
        let goal = select_initial_goal(position, &ctx.metric(), mode, rng)?;
        Self::with_goal(id, position, goal, ctx)
    }

    /// Agent with a predetermined goal.
    pub fn with_goal(id: AgentId, position: Point, goal: GoalId, ctx: &NavContext<'_>) -> Result<Self, TickError> {
        let path = construct_path(ctx.map, position, ctx.goal_point(goal), ctx.params.avoidance.r_safe)
            .ok_or(TickError::PathNotFound { agent: id, goal })?;
        Ok(AgentState {
            id,
            position,
            velocity: Vec2::ZERO,
            goal,
            status: AgentStatus::MoveToGoal,
            follower: PathFollower::new(path),
            reached: vec![false; ctx.fields.goals().len()],
        })
    }

    pub fn kinematics(&self) -> Kinematics {
        Kinematics { id: self.id, position: self.position, velocity: self.velocity }
    }

    pub fn broadcast(&self) -> Broadcast {
        Broadcast {
            id: self.id,
            position: self.position,
            velocity: self.velocity,
            goal: self.goal,
            status: self.status,
            reached: self.reached.clone(),
            remaining: self.follower.remaining(self.position),
        }
    }

    /// Commits the action chosen this step.
    pub fn apply(&mut self, u: Vec2) {
        self.position += u;
        self.velocity = u;
    }

    /// Switches goal (replanning on the same call) or replans when pushed
    /// too far off the current path.
    pub fn retarget(&mut self, goal: GoalId, ctx: &NavContext<'_>) -> Result<bool, TickError> {
        let changed = goal != self.goal;
        if changed || self.follower.deviation(self.position) > ctx.params.delta_dev {
            let path = construct_path(ctx.map, self.position, ctx.goal_point(goal), ctx.params.avoidance.r_safe)
                .ok_or(TickError::PathNotFound { agent: self.id, goal })?;
            self.goal = goal;
            self.follower = PathFollower::new(path);
            return Ok(true);
        }
        Ok(false)
    }

    /// Preferred velocity along the path, made safe against `neighbors`
    /// (other agents within communication range) and nearby obstacles.
    pub fn safe_action(&mut self, neighbors: &[Kinematics], ctx: &NavContext<'_>) -> Vec2 {
        let params = &ctx.params.avoidance;
        let v_pref = self.follower.preferred_velocity(self.position, params.u_max, ctx.params.delta_wp);
        let obstacles: Vec<Segment> = ctx.obstacles.near(self.position).copied().collect();
        let u = compute_action(&self.kinematics(), neighbors, &obstacles, v_pref, params);
        // guard against round-off in the speed bound
        let n = u.norm();
        if n > params.u_max {
            u * (params.u_max / n)
        } else {
            u
        }
    }
}

/// Neighbors of `me` in `group` within communication range.
pub fn neighbors_in_range(me: &Broadcast, group: &[&Broadcast], r_comm: f64) -> Vec<Kinematics> {
    group
        .iter()
        .filter(|b| b.id != me.id && b.position.dist(me.position) <= r_comm)
        .map(|b| Kinematics { id: b.id, position: b.position, velocity: b.velocity })
        .collect()
}

/// Runs the goal-exchange part of a tick on the group's shared snapshot:
/// goal update followed by deadlock exchanges. Every member computes the
/// same tables; `i` reads its own entries.
pub fn exchange_goals(
    i: AgentId,
    group: &[&Broadcast],
    reached: &[bool],
    ctx: &NavContext<'_>,
) -> Result<(GoalTables, GoalUpdate, Vec<(AgentId, AgentId)>), GoalUpdateFailure> {
    let ids: Vec<AgentId> = group.iter().map(|b| b.id).collect();
    let positions: BTreeMap<AgentId, Point> = group.iter().map(|b| (b.id, b.position)).collect();
    let mut tables = GoalTables {
        assignment: group.iter().map(|b| (b.id, b.goal)).collect(),
        status: group.iter().map(|b| (b.id, b.status)).collect(),
        reached: reached.to_vec(),
    };
    let metric = ctx.metric();
    let mut update = goal_update(i, &ids, &positions, &mut tables, &metric)?;

    let params = DeadlockParams { near_radius: ctx.params.tau_goal, block_radius: ctx.params.delta_block };
    let mut used = vec![false; group.len()];
    let mut deadlock_swaps = Vec::new();
    for ai in 0..group.len() {
        for bi in 0..group.len() {
            if ai == bi || used[ai] || used[bi] {
                continue;
            }
            let (a, b) = (group[ai], group[bi]);
            // b's broadcast path is only meaningful if its goal is unchanged
            if tables.assignment[&b.id] != b.goal {
                continue;
            }
            if deadlock_goal_exchange(a.id, a.position, b.id, &b.remaining, &mut tables, ctx.fields.goals(), &params) {
                used[ai] = true;
                used[bi] = true;
                deadlock_swaps.push((a.id, b.id));
            }
        }
    }
    update.goal = tables.assignment[&i];
    update.status = tables.status[&i];
    Ok((tables, update, deadlock_swaps))
}

/// One iteration of the per-agent loop on the step-`t` snapshot of the
/// agent's group (`group`, descending priority, including the agent itself).
/// Returns the chosen action; the caller commits it with
/// [`AgentState::apply`] once every agent has decided.
pub fn agent_tick(
    state: &mut AgentState,
    group: &[&Broadcast],
    t: u64,
    ctx: &NavContext<'_>,
) -> Result<TickReport, TickError> {
    let mut report = TickReport::default();
    let others: Vec<&[bool]> = group.iter().filter(|b| b.id != state.id).map(|b| b.reached.as_slice()).collect();
    state.reached = merge_reached_tables(&state.reached, &others);

    let mut goal = state.goal;
    if t % ctx.params.k_exch == 0 {
        let (tables, update, deadlock_swaps) = exchange_goals(state.id, group, &state.reached, ctx)?;
        state.reached = tables.reached;
        state.status = update.status;
        goal = update.goal;
        report.exchanged = true;
        report.swaps = update.swaps;
        report.deadlock_swaps = deadlock_swaps;
    }
    report.replanned = state.retarget(goal, ctx)?;

    let me = group.iter().find(|b| b.id == state.id).expect("agent missing from its own group");
    let neighbors = neighbors_in_range(me, group, ctx.params.r_comm);
    report.action = state.safe_action(&neighbors, ctx);
    Ok(report)
}
