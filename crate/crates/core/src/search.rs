//! Heuristic search used to produce expert plans for training instances.
//!
//! Two tiers by default: A* with `h_max` first, then greedy best-first
//! search with `h_add` if the first tier runs out of budget.

use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::time::{Duration, Instant};

use crate::pddl::{AtomId, GroundedTask, SymbolicState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    AstarHmax,
    GbfsGoalcount,
    GbfsHadd,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::AstarHmax => "astar_hmax",
            Strategy::GbfsGoalcount => "gbfs_goalcount",
            Strategy::GbfsHadd => "gbfs_hadd",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "astar_hmax" => Ok(Strategy::AstarHmax),
            "gbfs_goalcount" => Ok(Strategy::GbfsGoalcount),
            "gbfs_hadd" => Ok(Strategy::GbfsHadd),
            _ => Err(format!("unknown search strategy '{s}'")),
        }
    }
}

/// One search tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Tier {
    pub strategy: Strategy,
    pub timeout: Duration,
    pub max_expansions: usize,
}

impl Tier {
    pub fn new(strategy: Strategy, timeout: Duration, max_expansions: usize) -> Self {
        assert!(!timeout.is_zero(), "timeout must be positive");
        assert!(max_expansions > 0, "max_expansions must be positive");
        Self { strategy, timeout, max_expansions }
    }
}

/// Ordered list of tiers; a tier runs only if the previous one ran out of
/// budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub tiers: Vec<Tier>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            tiers: vec![
                Tier::new(Strategy::AstarHmax, Duration::from_secs(60), usize::MAX),
                Tier::new(Strategy::GbfsHadd, Duration::from_secs(300), usize::MAX),
            ],
        }
    }
}

impl SearchConfig {
    pub fn single(strategy: Strategy) -> Self {
        Self { tiers: vec![Tier::new(strategy, Duration::from_secs(60), usize::MAX)] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub strategy: Strategy,
    pub expansions: usize,
    pub wall_time: Duration,
}

/// An action sequence, held by rendered action names so plans from files and
/// from search are interchangeable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plan {
    pub actions: Vec<String>,
    pub provenance: Option<Provenance>,
}

impl Plan {
    pub fn new(actions: Vec<String>) -> Self {
        Self { actions, provenance: None }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn from_action_ids(task: &GroundedTask, ids: &[usize]) -> Self {
        Self::new(ids.iter().map(|&i| task.actions[i].name.clone()).collect())
    }

    /// One action per line, newline-terminated.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for a in &self.actions {
            writeln!(w, "{a}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("plan text is UTF-8")
    }

    /// Reads a plan file. Blank lines and `;` comments are skipped.
    pub fn read_from(r: impl BufRead) -> io::Result<Self> {
        let mut actions = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            actions.push(line.to_lowercase());
        }
        Ok(Self::new(actions))
    }

    pub fn parse(text: &str) -> Self {
        Self::read_from(text.as_bytes()).expect("reading from memory")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Unsolved {
    #[error("search budget exhausted before a plan was found")]
    Timeout,
    #[error("search space exhausted: task is unsolvable")]
    Exhausted,
}

/// Number of goal atoms missing from `state`.
pub fn heuristic_goalcount(state: &SymbolicState, goal: &[AtomId]) -> usize {
    goal.iter().filter(|&&g| !state.contains(g)).count()
}

/// Delete-relaxation heuristics (`h_max`, `h_add`) over one task.
///
/// Precomputes precondition indices so each evaluation is a single
/// generalised Dijkstra pass.
pub struct Relaxation<'a> {
    task: &'a GroundedTask,
    pre_of: Vec<Vec<u32>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Combine {
    Max,
    Sum,
}

impl<'a> Relaxation<'a> {
    pub fn new(task: &'a GroundedTask) -> Self {
        let mut pre_of = vec![Vec::new(); task.num_atoms()];
        for (i, a) in task.actions.iter().enumerate() {
            for &p in &a.pre {
                pre_of[p as usize].push(i as u32);
            }
        }
        Self { task, pre_of }
    }

    pub fn hmax(&self, state: &SymbolicState, goal: &[AtomId]) -> Option<u64> {
        self.evaluate(state, goal, Combine::Max)
    }

    /// `None` stands for infinity (some goal atom unreachable).
    pub fn hadd(&self, state: &SymbolicState, goal: &[AtomId]) -> Option<u64> {
        self.evaluate(state, goal, Combine::Sum)
    }

    fn evaluate(&self, state: &SymbolicState, goal: &[AtomId], combine: Combine) -> Option<u64> {
        const INF: u64 = u64::MAX;
        let task = self.task;
        let mut cost = vec![INF; task.num_atoms()];
        let mut unsatisfied: Vec<u32> = task.actions.iter().map(|a| a.pre.len() as u32).collect();
        let mut acc = vec![0u64; task.actions.len()];
        let mut heap = BinaryHeap::new();
        for a in state.iter() {
            cost[a as usize] = 0;
            heap.push(Reverse((0u64, a)));
        }
        let fire = |ai: usize, acc: &[u64], cost: &mut [u64], heap: &mut BinaryHeap<Reverse<(u64, AtomId)>>| {
            let c = acc[ai] + 1;
            for &e in &task.actions[ai].add {
                if c < cost[e as usize] {
                    cost[e as usize] = c;
                    heap.push(Reverse((c, e)));
                }
            }
        };
        for (ai, a) in task.actions.iter().enumerate() {
            if a.pre.is_empty() {
                fire(ai, &acc, &mut cost, &mut heap);
            }
        }
        let mut is_goal = vec![false; task.num_atoms()];
        for &g in goal {
            is_goal[g as usize] = true;
        }
        let mut goals_left = goal.iter().filter(|&&g| cost[g as usize] != 0).count();
        while let Some(Reverse((c, atom))) = heap.pop() {
            if c > cost[atom as usize] {
                continue;
            }
            if goals_left == 0 {
                break;
            }
            if c > 0 && is_goal[atom as usize] {
                goals_left -= 1;
            }
            for &ai in &self.pre_of[atom as usize] {
                let ai = ai as usize;
                acc[ai] = match combine {
                    Combine::Max => acc[ai].max(c),
                    Combine::Sum => acc[ai] + c,
                };
                unsatisfied[ai] -= 1;
                if unsatisfied[ai] == 0 {
                    fire(ai, &acc, &mut cost, &mut heap);
                }
            }
        }
        let mut h = 0u64;
        for &g in goal {
            let c = cost[g as usize];
            if c == INF {
                return None;
            }
            h = match combine {
                Combine::Max => h.max(c),
                Combine::Sum => h + c,
            };
        }
        Some(h)
    }
}

/// Additive heuristic convenience wrapper; `None` is infinity.
pub fn heuristic_hadd(state: &SymbolicState, goal: &[AtomId], task: &GroundedTask) -> Option<u64> {
    Relaxation::new(task).hadd(state, goal)
}

/// Runs the configured tiers in order. A returned plan has been replayed
/// from the initial state and reaches the goal.
pub fn solve(task: &GroundedTask, config: &SearchConfig) -> Result<Plan, Unsolved> {
    let mut last = Unsolved::Timeout;
    for tier in &config.tiers {
        match search(task, tier) {
            Ok(plan) => return Ok(plan),
            Err(Unsolved::Exhausted) => return Err(Unsolved::Exhausted),
            Err(Unsolved::Timeout) => {
                log::info!("{} on {}: budget exhausted, falling back", tier.strategy, task.problem_name);
                last = Unsolved::Timeout;
            }
        }
    }
    Err(last)
}

struct Node {
    state: SymbolicState,
    parent: usize,
    action: usize,
    g: u64,
}

/// A single tier. Open-list ties are broken FIFO, successors are generated
/// in canonical action order, so the search is deterministic.
pub fn search(task: &GroundedTask, tier: &Tier) -> Result<Plan, Unsolved> {
    let start = Instant::now();
    let relax = Relaxation::new(task);
    let h = |s: &SymbolicState| -> Option<u64> {
        match tier.strategy {
            Strategy::AstarHmax => relax.hmax(s, &task.goal),
            Strategy::GbfsHadd => relax.hadd(s, &task.goal),
            Strategy::GbfsGoalcount => Some(heuristic_goalcount(s, &task.goal) as u64),
        }
    };
    let astar = tier.strategy == Strategy::AstarHmax;

    let mut nodes: Vec<Node> = Vec::new();
    let mut best_g: HashMap<SymbolicState, (u64, usize)> = HashMap::new();
    let mut open: BinaryHeap<Reverse<(u64, u64, usize)>> = BinaryHeap::new();
    let mut counter = 0u64;

    let Some(h0) = h(&task.initial) else {
        return Err(Unsolved::Exhausted);
    };
    nodes.push(Node { state: task.initial.clone(), parent: usize::MAX, action: usize::MAX, g: 0 });
    best_g.insert(task.initial.clone(), (0, 0));
    open.push(Reverse((h0, counter, 0)));

    let mut expansions = 0usize;
    while let Some(Reverse((_, _, idx))) = open.pop() {
        let g = nodes[idx].g;
        // Superseded by a cheaper path to the same state.
        if best_g.get(&nodes[idx].state).is_some_and(|&(_, bi)| bi != idx) {
            continue;
        }
        if task.goal_satisfied(&nodes[idx].state) {
            return Ok(extract(task, &nodes, idx, tier.strategy, expansions, start.elapsed()));
        }
        expansions += 1;
        if expansions > tier.max_expansions || (expansions.is_multiple_of(256) && start.elapsed() > tier.timeout) {
            return Err(Unsolved::Timeout);
        }
        for (action, succ) in task.successors(&nodes[idx].state) {
            let sg = g + 1;
            let new_idx = nodes.len();
            match best_g.entry(succ.clone()) {
                Entry::Occupied(mut e) => {
                    if !astar || e.get().0 <= sg {
                        continue;
                    }
                    e.insert((sg, new_idx));
                }
                Entry::Vacant(e) => {
                    e.insert((sg, new_idx));
                }
            }
            let Some(hs) = h(&succ) else { continue };
            let key = if astar { sg + hs } else { hs };
            nodes.push(Node { state: succ, parent: idx, action, g: sg });
            counter += 1;
            open.push(Reverse((key, counter, new_idx)));
        }
    }
    Err(Unsolved::Exhausted)
}

fn extract(
    task: &GroundedTask,
    nodes: &[Node],
    mut idx: usize,
    strategy: Strategy,
    expansions: usize,
    wall_time: std::time::Duration,
) -> Plan {
    let mut ids = Vec::new();
    while nodes[idx].parent != usize::MAX {
        ids.push(nodes[idx].action);
        idx = nodes[idx].parent;
    }
    ids.reverse();
    // Post-condition check: the plan must replay to a goal state.
    let mut s = task.initial.clone();
    for &a in &ids {
        s = task.apply(&s, &task.actions[a]).expect("search produced an inapplicable action");
    }
    assert!(task.goal_satisfied(&s), "search produced a plan that misses the goal");
    let mut plan = Plan::from_action_ids(task, &ids);
    plan.provenance = Some(Provenance { strategy, expansions, wall_time });
    plan
}

/// Breadth-first search; optimal on unit-cost tasks. Used as an oracle in
/// tests and for small instances.
pub fn breadth_first(task: &GroundedTask, max_states: usize) -> Option<Vec<usize>> {
    use std::collections::VecDeque;
    let mut parent: HashMap<SymbolicState, Option<(SymbolicState, usize)>> = HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(task.initial.clone(), None);
    queue.push_back(task.initial.clone());
    while let Some(s) = queue.pop_front() {
        if task.goal_satisfied(&s) {
            let mut ids = Vec::new();
            let mut cur = s;
            while let Some(Some((prev, a))) = parent.get(&cur).cloned() {
                ids.push(a);
                cur = prev;
            }
            ids.reverse();
            return Some(ids);
        }
        if parent.len() > max_states {
            return None;
        }
        for (a, succ) in task.successors(&s) {
            if let Entry::Vacant(e) = parent.entry(succ.clone()) {
                e.insert(Some((s.clone(), a)));
                queue.push_back(succ);
            }
        }
    }
    None
}
