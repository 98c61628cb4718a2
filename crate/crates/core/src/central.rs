//! Centralized solvers: the globally consistent assignment with pairwise
//! exchange used by C-UNAV and the ORCA baseline, and a discrete TSWAP.

use std::collections::VecDeque;

use thiserror::Error;

use crate::geometry::Point;
use crate::protocol::{AgentId, GoalId, GoalMetric, SwapRecord};
use crate::workspace::{Cell, GridMap};

/// Goal of every agent, indexed by agent id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    goals: Vec<GoalId>,
}

impl Assignment {
    pub fn new(goals: Vec<GoalId>) -> Self {
        Assignment { goals }
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn goal(&self, a: AgentId) -> GoalId {
        self.goals[a.0 as usize]
    }

    pub fn goals(&self) -> &[GoalId] {
        &self.goals
    }

    /// Every one of `goal_count` goals is held by exactly one agent.
    pub fn is_consistent(&self, goal_count: usize) -> bool {
        if self.goals.len() != goal_count {
            return false;
        }
        let mut seen = vec![false; goal_count];
        for g in &self.goals {
            if g.0 >= goal_count || seen[g.0] {
                return false;
            }
            seen[g.0] = true;
        }
        true
    }

    /// Σ pathLen over agents.
    pub fn total_len<M: GoalMetric>(&self, positions: &[Point], metric: &M) -> f64 {
        self.goals.iter().zip(positions).map(|(&g, &p)| metric.path_len(p, g)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("agent {agent} has no reachable unclaimed goal")]
pub struct Unassignable {
    pub agent: AgentId,
}

/// Agents in descending priority each take the nearest unclaimed reachable
/// goal (ties to the smaller goal id).
pub fn initial_consistent_assignment<M: GoalMetric>(starts: &[Point], metric: &M) -> Result<Assignment, Unassignable> {
    let n_goals = metric.goal_count();
    assert_eq!(starts.len(), n_goals, "one start per goal");
    let mut claimed = vec![false; n_goals];
    let mut goals = vec![GoalId(0); starts.len()];
    for i in (0..starts.len()).rev() {
        let mut best: Option<(usize, f64)> = None;
        for (g, taken) in claimed.iter().enumerate() {
            if *taken {
                continue;
            }
            let d = metric.path_len(starts[i], GoalId(g));
            if d.is_finite() && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((g, d));
            }
        }
        let (g, _) = best.ok_or(Unassignable { agent: AgentId(i as u32) })?;
        claimed[g] = true;
        goals[i] = GoalId(g);
    }
    Ok(Assignment { goals })
}

/// Sweeps all agent pairs (ascending ids) swapping goals whenever that
/// strictly shortens the pair's summed path length, until a sweep changes
/// nothing.
pub fn c_unav_exchange<M: GoalMetric>(positions: &[Point], assignment: &mut Assignment, metric: &M) -> Vec<SwapRecord> {
    let n = assignment.len();
    assert_eq!(positions.len(), n);
    let mut swaps = Vec::new();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (gi, gj) = (assignment.goals[i], assignment.goals[j]);
                let before = metric.path_len(positions[i], gi) + metric.path_len(positions[j], gj);
                let after = metric.path_len(positions[i], gj) + metric.path_len(positions[j], gi);
                if before > after {
                    assignment.goals.swap(i, j);
                    swaps.push(SwapRecord { high: AgentId(j as u32), low: AgentId(i as u32), before, after });
                    changed = true;
                }
            }
        }
        if !changed {
            return swaps;
        }
    }
}

/// Cell of every agent at every discrete step; `steps[0]` are the starts.
/// `targets[t][a]` is the target index agent `a` held after step `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteSchedule {
    pub steps: Vec<Vec<Cell>>,
    pub targets: Vec<Vec<usize>>,
}

impl DiscreteSchedule {
    /// Number of discrete steps taken.
    pub fn makespan(&self) -> usize {
        self.steps.len() - 1
    }

    /// Number of moves made by agent `a`.
    pub fn moves(&self, a: usize) -> usize {
        self.steps.windows(2).filter(|w| w[0][a] != w[1][a]).count()
    }

    /// Last step at which agent `a` moved.
    pub fn finish(&self, a: usize) -> usize {
        (1..self.steps.len()).rev().find(|&t| self.steps[t][a] != self.steps[t - 1][a]).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TswapError {
    #[error("step limit of {limit} reached")]
    StepLimit { limit: usize, partial: DiscreteSchedule },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

const CARDINAL: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn cardinal_neighbors(map: &GridMap, (c, r): Cell) -> impl Iterator<Item = Cell> + '_ {
    CARDINAL.iter().filter_map(move |&(dc, dr)| {
        let (nc, nr) = (c as i64 + dc, r as i64 + dr);
        (map.in_bounds(nc, nr) && !map.is_blocked((nc as usize, nr as usize))).then_some((nc as usize, nr as usize))
    })
}

/// 4-connected BFS distances to `goal`; `u32::MAX` where unreachable.
pub fn bfs_distances(map: &GridMap, goal: Cell) -> Vec<u32> {
    let mut dist = vec![u32::MAX; map.cell_count()];
    let mut queue = VecDeque::from([goal]);
    dist[map.index(goal)] = 0;
    while let Some(cell) = queue.pop_front() {
        let d = dist[map.index(cell)];
        for next in cardinal_neighbors(map, cell) {
            let k = map.index(next);
            if dist[k] == u32::MAX {
                dist[k] = d + 1;
                queue.push_back(next);
            }
        }
    }
    dist
}

/// Discrete TSWAP on the 4-connected cell graph. `targets` are the goal
/// cells and `assignment` the initial agent → goal pairing. Agents act one at
/// a time in descending priority each step; a move is visible to the agents
/// acting after it.
pub fn tswap_solve(
    map: &GridMap,
    starts: &[Cell],
    targets: &[Cell],
    assignment: &Assignment,
    step_limit: usize,
) -> Result<DiscreteSchedule, TswapError> {
    let n = starts.len();
    if targets.len() != n || !assignment.is_consistent(n) {
        return Err(TswapError::Invalid("assignment must pair every agent with one target".into()));
    }
    let mut occupant: Vec<Option<usize>> = vec![None; map.cell_count()];
    for (a, &s) in starts.iter().enumerate() {
        if map.is_blocked(s) {
            return Err(TswapError::Invalid(format!("start {s:?} is blocked")));
        }
        let k = map.index(s);
        if occupant[k].is_some() {
            return Err(TswapError::Invalid(format!("start {s:?} used twice")));
        }
        occupant[k] = Some(a);
    }
    let tables: Vec<Vec<u32>> = targets.iter().map(|&g| bfs_distances(map, g)).collect();
    for (a, &s) in starts.iter().enumerate() {
        if tables[assignment.goal(AgentId(a as u32)).0][map.index(s)] == u32::MAX {
            return Err(TswapError::Invalid(format!("agent {a} cannot reach its target")));
        }
    }

    // target index of each agent
    let mut goal: Vec<usize> = assignment.goals().iter().map(|g| g.0).collect();
    let mut pos: Vec<Cell> = starts.to_vec();
    let mut steps = vec![pos.clone()];
    let mut history = vec![goal.clone()];

    let next_cell = |pos: Cell, g: usize| -> Cell {
        let table = &tables[g];
        let d = table[map.index(pos)];
        if d == 0 {
            return pos;
        }
        cardinal_neighbors(map, pos).find(|&c| table[map.index(c)] + 1 == d).expect("BFS table is consistent")
    };

    while !(0..n).all(|a| pos[a] == targets[goal[a]]) {
        if steps.len() > step_limit {
            return Err(TswapError::StepLimit { limit: step_limit, partial: DiscreteSchedule { steps, targets: history } });
        }
        for i in (0..n).rev() {
            if pos[i] == targets[goal[i]] {
                continue;
            }
            let u = next_cell(pos[i], goal[i]);
            match occupant[map.index(u)] {
                None => {
                    occupant[map.index(pos[i])] = None;
                    occupant[map.index(u)] = Some(i);
                    pos[i] = u;
                }
                Some(q) if pos[q] == targets[goal[q]] => goal.swap(i, q),
                Some(q) => {
                    if let Some(cycle) = blocking_cycle(i, q, &pos, &goal, &occupant, map, &next_cell) {
                        // each agent takes over the target of the one behind it
                        let last = goal[cycle[cycle.len() - 1]];
                        for k in (1..cycle.len()).rev() {
                            goal[cycle[k]] = goal[cycle[k - 1]];
                        }
                        goal[cycle[0]] = last;
                    }
                }
            }
        }
        steps.push(pos.clone());
        history.push(goal.clone());
    }
    Ok(DiscreteSchedule { steps, targets: history })
}

/// Follows "wants the cell of" links from `i` through `q`; returns the agents
/// in order if the chain closes back on `i`.
fn blocking_cycle(
    i: usize,
    q: usize,
    pos: &[Cell],
    goal: &[usize],
    occupant: &[Option<usize>],
    map: &GridMap,
    next_cell: &impl Fn(Cell, usize) -> Cell,
) -> Option<Vec<usize>> {
    let mut chain = vec![i];
    let mut cur = q;
    while chain.len() <= pos.len() {
        if cur == i {
            return Some(chain);
        }
        chain.push(cur);
        let u = next_cell(pos[cur], goal[cur]);
        if u == pos[cur] {
            return None;
        }
        cur = occupant[map.index(u)]?;
    }
    None
}
