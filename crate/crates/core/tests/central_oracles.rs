use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unav_core::central::{c_unav_exchange, tswap_solve, Assignment};
use unav_core::protocol::FieldMetric;
use unav_core::workspace::Cell;
use unav_core::{FieldCache, GoalId, GridMap, Point};

#[test]
fn exchange_result_is_two_opt_optimal() {
    let map = Arc::new(GridMap::empty(12, 12));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut cells: Vec<Cell> = map.free_cells().collect();
        let mut pick = || map.center(cells.swap_remove(rng.gen_range(0..cells.len())));
        let starts: Vec<Point> = (0..5).map(|_| pick()).collect();
        let goals: Vec<Point> = (0..5).map(|_| pick()).collect();
        let fields = FieldCache::new(Arc::clone(&map), goals, 0.49);
        let metric = FieldMetric { fields: &fields, near_radius: 0.3 };

        let mut a = Assignment::new((0..5).map(GoalId).collect());
        let before = a.total_len(&starts, &metric);
        c_unav_exchange(&starts, &mut a, &metric);
        assert!(a.is_consistent(5));
        let total = a.total_len(&starts, &metric);
        assert!(total <= before + 1e-9);

        for i in 0..5 {
            for j in i + 1..5 {
                let mut goals = a.goals().to_vec();
                goals.swap(i, j);
                let neighbor = Assignment::new(goals).total_len(&starts, &metric);
                assert!(neighbor >= total - 1e-9, "swapping {i},{j} improves {total} to {neighbor}");
            }
        }
    }
}

/// Fewest joint steps until the two agents occupy the target set in any
/// order, moving on a row of cells without sharing or swapping cells.
fn joint_bfs(width: usize, starts: (usize, usize), targets: BTreeSet<usize>) -> Option<usize> {
    let moves = |x: usize| -> Vec<usize> {
        let mut m = vec![x];
        if x > 0 {
            m.push(x - 1);
        }
        if x + 1 < width {
            m.push(x + 1);
        }
        m
    };
    let mut seen = HashMap::from([(starts, 0)]);
    let mut queue = VecDeque::from([starts]);
    while let Some((a, b)) = queue.pop_front() {
        let d = seen[&(a, b)];
        if BTreeSet::from([a, b]) == targets {
            return Some(d);
        }
        for na in moves(a) {
            for nb in moves(b) {
                if na == nb || (na == b && nb == a) {
                    continue;
                }
                if !seen.contains_key(&(na, nb)) {
                    seen.insert((na, nb), d + 1);
                    queue.push_back((na, nb));
                }
            }
        }
    }
    None
}

#[test]
fn crossed_corridor_targets_are_swapped_on_contact() {
    let map = GridMap::empty(5, 1);
    let starts = [(0, 0), (4, 0)];
    // each agent is sent past the other
    let targets = [(3, 0), (1, 0)];
    let optimum = joint_bfs(5, (0, 4), BTreeSet::from([1, 3])).expect("feasible");
    assert_eq!(optimum, 1);

    let a = Assignment::new(vec![GoalId(0), GoalId(1)]);
    let s = tswap_solve(&map, &starts, &targets, &a, 50).unwrap();
    assert!(s.makespan() >= optimum);
    for w in s.steps.windows(2) {
        assert_ne!(w[1][0], w[1][1], "cell shared");
        assert!(!(w[1][0] == w[0][1] && w[1][1] == w[0][0]), "agents passed through each other");
        for k in 0..2 {
            assert!(w[0][k].0.abs_diff(w[1][k].0) <= 1);
        }
    }
    // the pair never crosses, so targets must have been exchanged
    let last = s.steps.last().unwrap();
    assert_eq!(last, &vec![(1, 0), (3, 0)]);
    assert_eq!(s.targets.last().unwrap(), &vec![1, 0]);
}

#[test]
fn three_agent_rotation() {
    // L-shaped room (2x2 with one wall cell); every agent wants the next
    // agent's cell, so each one is blocked by a chain that closes on itself
    let map = GridMap::new(2, 2, [(0, 1)]);
    let starts = [(0, 0), (1, 0), (1, 1)];
    let targets = [(1, 0), (1, 1), (0, 0)];
    let a = Assignment::new(vec![GoalId(0), GoalId(1), GoalId(2)]);
    let s = tswap_solve(&map, &starts, &targets, &a, 20).unwrap();
    let mut last = s.steps.last().unwrap().clone();
    last.sort();
    assert_eq!(last, vec![(0, 0), (1, 0), (1, 1)]);
    // rotations settle it in the first step without anyone moving
    assert_eq!(s.makespan(), 1);
    assert!((0..3).all(|k| s.moves(k) == 0));
}
