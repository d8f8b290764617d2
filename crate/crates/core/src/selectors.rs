//! Baseline action selectors: centralized greedy (the expert), decentralized
//! 1-hop greedy, exhaustive search and uniform random.
//!
//! Tie-breaking is uniform across selectors: lowest robot id first, then the
//! lowest primitive index.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{coverage_region, Assignment, CommGraph, MotionPrimitive, Scenario};

/// Largest enumeration `exhaustive_opt` accepts by default (5^10).
pub const DEFAULT_OPT_CAP: u64 = 9_765_625;

/// One greedy decision and the marginal gain it realized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pick {
    pub robot: usize,
    pub primitive: MotionPrimitive,
    pub gain: usize,
}

#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub assignment: Assignment,
    pub value: usize,
    /// Marginal-gain (greedy) or full-objective (exhaustive) evaluations.
    pub evaluations: u64,
    /// Wall time of the selection. For the decentralized greedy this is the
    /// slowest robot's local run, not the sum.
    pub elapsed: Duration,
    /// Greedy decisions in the order they were made; empty for other selectors.
    pub picks: Vec<Pick>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyVariant {
    /// Each round scans every unassigned (robot, primitive) pair and commits
    /// the best one.
    #[default]
    GlobalPairwise,
    /// Robots decide one after another in ascending id order.
    FixedOrder,
}

impl GreedyVariant {
    pub fn name(self) -> &'static str {
        match self {
            GreedyVariant::GlobalPairwise => "global-pairwise",
            GreedyVariant::FixedOrder => "fixed-order",
        }
    }
}

/// Target ids covered by each (robot, primitive), precomputed once.
pub(crate) struct CoverageTable {
    sets: Vec<[Vec<u32>; MotionPrimitive::COUNT]>,
    n_targets: usize,
}

impl CoverageTable {
    pub(crate) fn build(s: &Scenario) -> Self {
        let sets = s
            .robots
            .iter()
            .map(|&pos| {
                let rects = MotionPrimitive::ALL.map(|m| coverage_region(pos, m, &s.params));
                let mut out: [Vec<u32>; MotionPrimitive::COUNT] = Default::default();
                for (t, &p) in s.targets.iter().enumerate() {
                    for (k, r) in rects.iter().enumerate() {
                        if r.contains(p) {
                            out[k].push(t as u32);
                        }
                    }
                }
                out
            })
            .collect();
        Self {
            sets,
            n_targets: s.n_targets(),
        }
    }

    fn gain(&self, covered: &[bool], robot: usize, m: usize) -> usize {
        self.sets[robot][m].iter().filter(|&&t| !covered[t as usize]).count()
    }

    fn commit(&self, covered: &mut [bool], robot: usize, m: usize) {
        for &t in &self.sets[robot][m] {
            covered[t as usize] = true;
        }
    }
}

pub fn greedy_central(s: &Scenario) -> SelectionResult {
    greedy_central_with(s, GreedyVariant::GlobalPairwise)
}

pub fn greedy_central_with(s: &Scenario, variant: GreedyVariant) -> SelectionResult {
    let start = Instant::now();
    let table = CoverageTable::build(s);
    let (actions, picks, evaluations) = match variant {
        GreedyVariant::GlobalPairwise => run_global(&table, s.n_robots()),
        GreedyVariant::FixedOrder => run_fixed_order(&table, s.n_robots()),
    };
    let elapsed = start.elapsed();
    let value = picks.iter().map(|p| p.gain).sum();
    SelectionResult {
        assignment: Assignment(actions),
        value,
        evaluations,
        elapsed,
        picks,
    }
}

fn run_global(table: &CoverageTable, n: usize) -> (Vec<MotionPrimitive>, Vec<Pick>, u64) {
    let mut covered = vec![false; table.n_targets];
    let mut actions = vec![None; n];
    let mut picks = Vec::with_capacity(n);
    let mut evaluations = 0u64;
    for _ in 0..n {
        let mut best: Option<(usize, usize, usize)> = None;
        for robot in (0..n).filter(|&r| actions[r].is_none()) {
            for m in 0..MotionPrimitive::COUNT {
                let g = table.gain(&covered, robot, m);
                evaluations += 1;
                // Strict comparison keeps the earliest (robot, primitive) on ties.
                if best.is_none_or(|(_, _, bg)| g > bg) {
                    best = Some((robot, m, g));
                }
            }
        }
        let (robot, m, gain) = best.expect("an unassigned robot remains each round");
        table.commit(&mut covered, robot, m);
        let primitive = MotionPrimitive::ALL[m];
        actions[robot] = Some(primitive);
        picks.push(Pick { robot, primitive, gain });
    }
    let actions = actions.into_iter().map(|a| a.expect("all robots assigned")).collect();
    (actions, picks, evaluations)
}

fn run_fixed_order(table: &CoverageTable, n: usize) -> (Vec<MotionPrimitive>, Vec<Pick>, u64) {
    let mut covered = vec![false; table.n_targets];
    let mut actions = Vec::with_capacity(n);
    let mut picks = Vec::with_capacity(n);
    let mut evaluations = 0u64;
    for robot in 0..n {
        let (mut best_m, mut best_g) = (0, 0);
        for m in 0..MotionPrimitive::COUNT {
            let g = table.gain(&covered, robot, m);
            evaluations += 1;
            if m == 0 || g > best_g {
                best_m = m;
                best_g = g;
            }
        }
        table.commit(&mut covered, robot, best_m);
        let primitive = MotionPrimitive::ALL[best_m];
        actions.push(primitive);
        picks.push(Pick {
            robot,
            primitive,
            gain: best_g,
        });
    }
    (actions, picks, evaluations)
}

/// What robot `i` knows locally: itself and its 1-hop neighbors (ascending
/// id) plus the targets any of them could cover. Returns the sub-scenario and
/// the position of `i` inside it.
pub fn local_subteam(s: &Scenario, g: &CommGraph, i: usize) -> (Scenario, usize) {
    let mut team: Vec<usize> = g.neighbors[i].clone();
    team.push(i);
    team.sort_unstable();
    let own = team.binary_search(&i).expect("robot is in its own subteam");

    let rects: Vec<_> = team
        .iter()
        .flat_map(|&j| MotionPrimitive::ALL.map(|m| coverage_region(s.robots[j], m, &s.params)))
        .collect();
    let targets: Vec<usize> = s
        .targets
        .iter()
        .enumerate()
        .filter(|(_, t)| rects.iter().any(|r| r.contains(**t)))
        .map(|(t, _)| t)
        .collect();
    (s.restrict(&team, &targets), own)
}

/// Every robot runs a fixed-order greedy over its 1-hop subteam and keeps the
/// action that run gives itself. `elapsed` is the slowest local run.
pub fn greedy_decentralized(s: &Scenario, g: &CommGraph) -> SelectionResult {
    let n = s.n_robots();
    let mut actions = Vec::with_capacity(n);
    let mut evaluations = 0;
    let mut slowest = Duration::ZERO;
    for i in 0..n {
        let (local, own) = local_subteam(s, g, i);
        let start = Instant::now();
        let table = CoverageTable::build(&local);
        let (local_actions, _, evals) = run_fixed_order(&table, local.n_robots());
        slowest = slowest.max(start.elapsed());
        evaluations += evals;
        actions.push(local_actions[own]);
    }
    let assignment = Assignment(actions);
    let value = objective_fast(s, &assignment);
    SelectionResult {
        assignment,
        value,
        evaluations,
        elapsed: slowest,
        picks: Vec::new(),
    }
}

/// Exact maximizer by enumerating all 5^N assignments. Among equal values
/// the lexicographically smallest assignment (robot 0 most significant) wins.
pub fn exhaustive_opt(s: &Scenario, cap: u64) -> Result<SelectionResult> {
    let n = s.n_robots();
    let total = (MotionPrimitive::COUNT as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= cap)
        .ok_or(Error::InstanceTooLarge { n_robots: n, cap })?;

    let start = Instant::now();
    let table = CoverageTable::build(s);
    let mut search = Exhaustive {
        table: &table,
        counts: vec![0; s.n_targets()],
        current: vec![0; n],
        best: vec![0; n],
        best_value: None,
        leaves: 0,
    };
    search.descend(0, 0);
    let elapsed = start.elapsed();
    debug_assert_eq!(search.leaves, total);
    let actions = search.best.iter().map(|&m| MotionPrimitive::ALL[m]).collect();
    Ok(SelectionResult {
        assignment: Assignment(actions),
        value: search.best_value.unwrap_or(0),
        evaluations: total,
        elapsed,
        picks: Vec::new(),
    })
}

struct Exhaustive<'a> {
    table: &'a CoverageTable,
    counts: Vec<u16>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_value: Option<usize>,
    leaves: u64,
}

impl Exhaustive<'_> {
    fn descend(&mut self, depth: usize, value: usize) {
        if depth == self.current.len() {
            self.leaves += 1;
            if self.best_value.is_none_or(|b| value > b) {
                self.best_value = Some(value);
                self.best.copy_from_slice(&self.current);
            }
            return;
        }
        for m in 0..MotionPrimitive::COUNT {
            let mut gained = 0;
            for &t in &self.table.sets[depth][m] {
                let c = &mut self.counts[t as usize];
                if *c == 0 {
                    gained += 1;
                }
                *c += 1;
            }
            self.current[depth] = m;
            self.descend(depth + 1, value + gained);
            for &t in &self.table.sets[depth][m] {
                self.counts[t as usize] -= 1;
            }
        }
    }
}

/// Independent uniform primitive per robot.
pub fn random_assign(s: &Scenario, seed: u64) -> SelectionResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions: Vec<_> = (0..s.n_robots())
        .map(|_| MotionPrimitive::ALL[rng.gen_range(0..MotionPrimitive::COUNT)])
        .collect();
    let elapsed = start.elapsed();
    let assignment = Assignment(actions);
    let value = objective_fast(s, &assignment);
    SelectionResult {
        assignment,
        value,
        evaluations: 0,
        elapsed,
        picks: Vec::new(),
    }
}

/// Coverage of a full assignment without the error plumbing of
/// [`crate::world::objective`]. Panics on a length mismatch.
pub fn objective_fast(s: &Scenario, u: &Assignment) -> usize {
    assert_eq!(u.len(), s.n_robots(), "assignment length");
    let rects: Vec<_> = u
        .0
        .iter()
        .zip(&s.robots)
        .map(|(&m, &p)| coverage_region(p, m, &s.params))
        .collect();
    s.targets.iter().filter(|t| rects.iter().any(|r| r.contains(**t))).count()
}
