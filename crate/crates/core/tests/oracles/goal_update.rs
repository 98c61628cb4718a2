use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unav_core::protocol::{goal_update, GoalMetric, GoalTables};
use unav_core::{AgentId, AgentStatus, GoalId, Point};

/// Table-driven metric; an agent's position is `(index, 0)`.
pub struct Table {
    len: Vec<Vec<f64>>,
    near: Vec<Vec<bool>>,
}

impl Table {
    fn row(p: Point) -> usize {
        p.x as usize
    }
}

impl GoalMetric for Table {
    fn goal_count(&self) -> usize {
        self.len[0].len()
    }
    fn path_len(&self, p: Point, g: GoalId) -> f64 {
        self.len[Self::row(p)][g.0]
    }
    fn near(&self, p: Point, g: GoalId) -> bool {
        self.near[Self::row(p)][g.0]
    }
}

#[derive(Debug, PartialEq)]
struct Outcome {
    goal: usize,
    reached_status: bool,
    assignment: BTreeMap<u32, usize>,
    status: BTreeMap<u32, bool>,
    gr: Vec<bool>,
}

/// Straight transcription of the goal update pseudocode. `closest` only
/// considers goals with a finite path length and yields nothing when there
/// are none, which the failure checks treat as an infinite path; a missing
/// `g'` sends the conflict to the lower-priority agent.
pub fn literal(i: u32, n: &[u32], table: &Table, ga: &mut BTreeMap<u32, usize>, reached: &mut BTreeMap<u32, bool>, gr: &mut Vec<bool>) -> Result<(usize, bool), u32> {
    let mut g_set: BTreeSet<usize> = (0..gr.len()).collect();
    let closest = |agent: u32, set: &BTreeSet<usize>, gr: &[bool]| -> Option<usize> {
        let row = &table.len[agent as usize];
        let mut best: Option<usize> = None;
        for &g in set {
            if gr[g] || !row[g].is_finite() {
                continue;
            }
            if best.is_none_or(|b| row[g] < row[b]) {
                best = Some(g);
            }
        }
        best
    };
    let path_len = |agent: u32, g: usize| table.len[agent as usize][g];

    for (pos, &j) in n.iter().enumerate() {
        // 3-6
        if !reached[&j] && gr[ga[&j]] {
            match closest(j, &g_set, gr) {
                Some(g) => ga.insert(j, g),
                None => return Err(j),
            };
        }
        // 8-9
        if !reached[&j] && table.near[j as usize][ga[&j]] {
            reached.insert(j, true);
            gr[ga[&j]] = true;
        }
        // 10
        for &k in &n[pos + 1..] {
            if ga[&j] == ga[&k] {
                let g_prime = closest(j, &g_set, gr);
                if !reached[&j] && g_prime.is_some_and(|g| g != ga[&j]) {
                    ga.insert(j, g_prime.unwrap());
                } else {
                    let mut rest = g_set.clone();
                    rest.remove(&ga[&j]);
                    match closest(k, &rest, gr) {
                        Some(g) => ga.insert(k, g),
                        None => return Err(k),
                    };
                    reached.insert(k, false);
                }
            } else if !reached[&j] && !reached[&k] && !gr[ga[&k]] {
                let (g, g2) = (ga[&j], ga[&k]);
                let higher_gains = path_len(j, g) > path_len(j, g2);
                let pair_gains = path_len(j, g) + path_len(k, g2) > path_len(j, g2) + path_len(k, g);
                if higher_gains && pair_gains {
                    ga.insert(j, g2);
                    ga.insert(k, g);
                }
            }
        }
        // 26
        g_set.remove(&ga[&j]);
    }
    Ok((ga[&i], reached[&i]))
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (u32, Vec<u32>, Table, GoalTables) {
    let agents = rng.gen_range(1..=6usize);
    let goals = rng.gen_range(1..=8usize);
    // small integer lengths so ties and equal sums come up often
    let len: Vec<Vec<f64>> = (0..agents)
        .map(|_| {
            (0..goals)
                .map(|_| if rng.gen_bool(0.1) { f64::INFINITY } else { rng.gen_range(0..7) as f64 })
                .collect()
        })
        .collect();
    let near = len.iter().map(|row| row.iter().map(|&d| d == 0.0 && rng.gen_bool(0.8)).collect()).collect();
    let mut ids: Vec<u32> = (0..agents as u32).collect();
    ids.reverse();
    let tables = GoalTables {
        assignment: ids.iter().map(|&a| (AgentId(a), GoalId(rng.gen_range(0..goals)))).collect(),
        status: ids
            .iter()
            .map(|&a| (AgentId(a), if rng.gen_bool(0.25) { AgentStatus::Reached } else { AgentStatus::MoveToGoal }))
            .collect(),
        reached: (0..goals).map(|_| rng.gen_bool(0.25)).collect(),
    };
    let i = ids[rng.gen_range(0..ids.len())];
    (i, ids, Table { len, near }, tables)
}

/// Feeds `cases` random group states to both implementations. Returns how
/// many cases ended in failure and how many swaps happened, or the first
/// disagreement.
pub fn check(seed: u64, cases: usize) -> Result<(usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut swaps) = (0, 0);
    for case in 0..cases {
        let (i, ids, table, tables) = random_case(&mut rng);
        let positions: BTreeMap<AgentId, Point> = ids.iter().map(|&a| (AgentId(a), Point::new(a as f64, 0.0))).collect();
        let group: Vec<AgentId> = ids.iter().map(|&a| AgentId(a)).collect();

        let mut ga: BTreeMap<u32, usize> = tables.assignment.iter().map(|(a, g)| (a.0, g.0)).collect();
        let mut st: BTreeMap<u32, bool> = tables.status.iter().map(|(a, s)| (a.0, *s == AgentStatus::Reached)).collect();
        let mut gr = tables.reached.clone();
        let want = literal(i, &ids, &table, &mut ga, &mut st, &mut gr);

        let mut got_tables = tables.clone();
        let got = goal_update(AgentId(i), &group, &positions, &mut got_tables, &table);
        match (got, want) {
            (Ok(update), Ok((goal, reached))) => {
                let got = Outcome {
                    goal: update.goal.0,
                    reached_status: update.status == AgentStatus::Reached,
                    assignment: got_tables.assignment.iter().map(|(a, g)| (a.0, g.0)).collect(),
                    status: got_tables.status.iter().map(|(a, s)| (a.0, *s == AgentStatus::Reached)).collect(),
                    gr: got_tables.reached.clone(),
                };
                let want = Outcome { goal, reached_status: reached, assignment: ga, status: st, gr };
                if got != want {
                    return Err(format!("case {case}: {got:?} vs {want:?}"));
                }
                if let Some(s) = update.swaps.iter().find(|s| !(s.after < s.before)) {
                    return Err(format!("case {case}: swap {s:?} does not shrink the pair total"));
                }
                swaps += update.swaps.len();
            }
            (Err(e), Err(agent)) if e.agent == AgentId(agent) => failures += 1,
            (got, want) => return Err(format!("case {case}: {got:?} vs {want:?}")),
        }
    }
    Ok((failures, swaps))
}
