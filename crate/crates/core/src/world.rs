//! Scenario geometry: robots, targets, motion primitives and their coverage
//! regions, the coverage objective, observations and the communication graph.
//!
//! A scenario is a single time-step snapshot. Every robot owns the same five
//! motion primitives; choosing one sweeps the camera's square field of view
//! along the primitive direction, covering a closed rectangle. The team
//! objective counts the distinct targets inside the union of the chosen
//! rectangles, which is monotone and submodular in the set of chosen actions.

use std::ops::{Add, Sub};

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Team size at which the environment is `BASE_SIDE` units on a side.
pub const BASE_TEAM: usize = 20;
pub const BASE_SIDE: f64 = 100.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (other - self).norm()
    }
}

impl Sub for Point2 {
    type Output = Point2;

    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Add for Point2 {
    type Output = Point2;

    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// One of the five per-step maneuvers. The discriminant is the action index
/// used for labels and network outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionPrimitive {
    Forward = 0,
    Backward = 1,
    Left = 2,
    Right = 3,
    Idle = 4,
}

impl MotionPrimitive {
    pub const COUNT: usize = 5;
    pub const ALL: [MotionPrimitive; 5] = [
        MotionPrimitive::Forward,
        MotionPrimitive::Backward,
        MotionPrimitive::Left,
        MotionPrimitive::Right,
        MotionPrimitive::Idle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Unit direction of travel; zero for idle.
    pub fn direction(self) -> Point2 {
        match self {
            MotionPrimitive::Forward => Point2::new(0.0, 1.0),
            MotionPrimitive::Backward => Point2::new(0.0, -1.0),
            MotionPrimitive::Left => Point2::new(-1.0, 0.0),
            MotionPrimitive::Right => Point2::new(1.0, 0.0),
            MotionPrimitive::Idle => Point2::new(0.0, 0.0),
        }
    }

    pub fn travel(self, params: &ScenarioParams) -> f64 {
        match self {
            MotionPrimitive::Idle => 0.0,
            _ => params.travel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub sensing_range: f64,
    pub comm_range: f64,
    pub fov_side: f64,
    pub travel: f64,
    pub target_density: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            sensing_range: 20.0,
            comm_range: 10.0,
            fov_side: 6.0,
            travel: 20.0,
            target_density: 0.025,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sensing_range", self.sensing_range),
            ("comm_range", self.comm_range),
            ("fov_side", self.fov_side),
            ("travel", self.travel),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.target_density > 0.0 && self.target_density < 1.0) {
            return Err(Error::InvalidParams(format!(
                "target_density must lie in (0, 1), got {}",
                self.target_density
            )));
        }
        Ok(())
    }
}

/// Closed axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Region swept by the `fov_side` square camera footprint when a robot at
/// `pos` executes `m`.
pub fn coverage_region(pos: Point2, m: MotionPrimitive, params: &ScenarioParams) -> Rect {
    let half = params.fov_side / 2.0;
    let d = m.direction();
    let end = Point2::new(pos.x + d.x * m.travel(params), pos.y + d.y * m.travel(params));
    Rect {
        x_min: pos.x.min(end.x) - half,
        x_max: pos.x.max(end.x) + half,
        y_min: pos.y.min(end.y) - half,
        y_max: pos.y.max(end.y) + half,
    }
}

/// A single snapshot: robot positions (index = robot id) and static targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: ScenarioParams,
    pub env_side: f64,
    pub robots: Vec<Point2>,
    pub targets: Vec<Point2>,
    pub seed: u64,
}

/// Side length of the square environment for a team of `n_robots`; area
/// grows linearly with the team size.
pub fn env_side_for(n_robots: usize) -> f64 {
    (BASE_SIDE * BASE_SIDE * n_robots as f64 / BASE_TEAM as f64).sqrt().round()
}

/// Random snapshot: robots uniform over the square, targets on distinct unit
/// cells (at the cell centers). Deterministic in `seed`.
pub fn generate_scenario(n_robots: usize, params: ScenarioParams, seed: u64) -> Result<Scenario> {
    if n_robots == 0 {
        return Err(Error::NoRobots);
    }
    params.validate()?;
    let side = env_side_for(n_robots);
    let cells_per_side = side as usize;
    let cells = cells_per_side * cells_per_side;
    let n_targets = (params.target_density * cells as f64).round() as usize;
    if n_targets == 0 {
        return Err(Error::NoTargets {
            density: params.target_density,
            cells,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let robots = (0..n_robots)
        .map(|_| Point2::new(rng.gen_range(0.0..=side), rng.gen_range(0.0..=side)))
        .collect();
    let mut picked = index::sample(&mut rng, cells, n_targets).into_vec();
    picked.sort_unstable();
    let targets = picked
        .into_iter()
        .map(|c| {
            let (row, col) = (c / cells_per_side, c % cells_per_side);
            Point2::new(col as f64 + 0.5, row as f64 + 0.5)
        })
        .collect();

    Ok(Scenario {
        params,
        env_side: side,
        robots,
        targets,
        seed,
    })
}

impl Scenario {
    /// Hand-built scenario (tests, fixtures). No bounds checking is applied.
    pub fn new(params: ScenarioParams, env_side: f64, robots: Vec<Point2>, targets: Vec<Point2>) -> Self {
        Self {
            params,
            env_side,
            robots,
            targets,
            seed: 0,
        }
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn check_robot(&self, robot: usize) -> Result<()> {
        if robot < self.robots.len() {
            Ok(())
        } else {
            Err(Error::InvalidRobot {
                robot,
                n: self.robots.len(),
            })
        }
    }

    pub fn region(&self, robot: usize, m: MotionPrimitive) -> Result<Rect> {
        self.check_robot(robot)?;
        Ok(coverage_region(self.robots[robot], m, &self.params))
    }

    /// Ids (ascending) of the targets inside the region swept by `robot`
    /// executing `m`.
    pub fn covered_targets(&self, robot: usize, m: MotionPrimitive) -> Result<Vec<usize>> {
        let rect = self.region(robot, m)?;
        Ok(self
            .targets
            .iter()
            .enumerate()
            .filter(|(_, t)| rect.contains(**t))
            .map(|(id, _)| id)
            .collect())
    }

    /// Targets coverable by `robot` under any of its primitives.
    pub fn coverable_targets(&self, robot: usize) -> Result<Vec<usize>> {
        self.check_robot(robot)?;
        let rects = MotionPrimitive::ALL.map(|m| coverage_region(self.robots[robot], m, &self.params));
        Ok(self
            .targets
            .iter()
            .enumerate()
            .filter(|(_, t)| rects.iter().any(|r| r.contains(**t)))
            .map(|(id, _)| id)
            .collect())
    }

    /// The sub-scenario made of the given robots (in the given order) and
    /// targets. Ids are renumbered to positions in the slices.
    pub fn restrict(&self, robots: &[usize], targets: &[usize]) -> Scenario {
        Scenario {
            params: self.params,
            env_side: self.env_side,
            robots: robots.iter().map(|&i| self.robots[i]).collect(),
            targets: targets.iter().map(|&t| self.targets[t]).collect(),
            seed: self.seed,
        }
    }

    /// Shift every robot and target by `offset`.
    pub fn translated(&self, offset: Point2) -> Scenario {
        Scenario {
            robots: self.robots.iter().map(|&p| p + offset).collect(),
            targets: self.targets.iter().map(|&p| p + offset).collect(),
            ..self.clone()
        }
    }
}

/// A full assignment: exactly one primitive per robot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<MotionPrimitive>);

impl Assignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> Vec<u8> {
        self.0.iter().map(|m| m.index() as u8).collect()
    }

    pub fn from_indices(ix: &[u8]) -> Option<Self> {
        ix.iter()
            .map(|&i| MotionPrimitive::from_index(i as usize))
            .collect::<Option<Vec<_>>>()
            .map(Assignment)
    }
}

/// Assignment under construction: `None` marks an undecided robot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialAssignment(pub Vec<Option<MotionPrimitive>>);

impl PartialAssignment {
    pub fn empty(n: usize) -> Self {
        Self(vec![None; n])
    }

    pub fn with(&self, robot: usize, m: MotionPrimitive) -> Self {
        let mut next = self.clone();
        next.0[robot] = Some(m);
        next
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    pub fn into_assignment(self) -> Option<Assignment> {
        self.0.into_iter().collect::<Option<Vec<_>>>().map(Assignment)
    }
}

impl From<&Assignment> for PartialAssignment {
    fn from(a: &Assignment) -> Self {
        Self(a.0.iter().copied().map(Some).collect())
    }
}

/// Number of distinct targets covered by the assigned robots.
pub fn objective_partial(s: &Scenario, u: &PartialAssignment) -> Result<usize> {
    if u.0.len() != s.n_robots() {
        return Err(Error::AssignmentLength {
            expected: s.n_robots(),
            got: u.0.len(),
        });
    }
    let rects: Vec<Rect> = u
        .0
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|m| coverage_region(s.robots[i], m, &s.params)))
        .collect();
    Ok(s.targets.iter().filter(|t| rects.iter().any(|r| r.contains(**t))).count())
}

pub fn objective(s: &Scenario, u: &Assignment) -> Result<usize> {
    objective_partial(s, &PartialAssignment::from(u))
}

/// Gain in coverage from adding `(robot, m)` to `partial`.
pub fn marginal_gain(s: &Scenario, partial: &PartialAssignment, robot: usize, m: MotionPrimitive) -> Result<usize> {
    s.check_robot(robot)?;
    if partial.0.len() != s.n_robots() {
        return Err(Error::AssignmentLength {
            expected: s.n_robots(),
            got: partial.0.len(),
        });
    }
    if partial.0[robot].is_some() {
        return Err(Error::AlreadyAssigned(robot));
    }
    let before = objective_partial(s, partial)?;
    let after = objective_partial(s, &partial.with(robot, m))?;
    Ok(after - before)
}

/// Distance-based undirected communication graph. `neighbors[i]` is sorted
/// ascending; `weights[i][k]` is the edge weight toward `neighbors[i][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl CommGraph {
    /// Unit-weight graph from neighbor lists. Lists are sorted; symmetry is
    /// the caller's responsibility.
    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Self {
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let weights = neighbors.iter().map(|l| vec![1.0; l.len()]).collect();
        Self { neighbors, weights }
    }

    /// Graph from a dense matrix; every non-zero off-diagonal entry is an edge
    /// carrying that entry as its weight.
    pub fn from_adjacency(s: &Array2<f64>) -> Self {
        let n = s.nrows();
        let mut neighbors = vec![Vec::new(); n];
        let mut weights = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && s[[i, j]] != 0.0 {
                    neighbors[i].push(j);
                    weights[i].push(s[[i, j]]);
                }
            }
        }
        Self { neighbors, weights }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_neighbors(vec![Vec::new(); n])
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Number of directed edges (twice the undirected edge count).
    pub fn directed_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// The graph shift operator as a dense matrix.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.n();
        let mut s = Array2::zeros((n, n));
        for (i, (list, w)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            for (&j, &wij) in list.iter().zip(w) {
                s[[i, j]] = wij;
            }
        }
        s
    }

    /// Block-diagonal union; node ids of the `k`-th graph are offset by the
    /// sizes of the graphs before it.
    pub fn disjoint_union<'a>(graphs: impl IntoIterator<Item = &'a CommGraph>) -> Self {
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        for g in graphs {
            let offset = neighbors.len();
            neighbors.extend(g.neighbors.iter().map(|l| l.iter().map(|&j| j + offset).collect::<Vec<_>>()));
            weights.extend(g.weights.iter().cloned());
        }
        Self { neighbors, weights }
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut neighbors = vec![Vec::new(); n];
        let mut weights = vec![Vec::new(); n];
        for i in 0..n {
            let mut pairs: Vec<(usize, f64)> = self.neighbors[i]
                .iter()
                .zip(&self.weights[i])
                .map(|(&j, &w)| (perm[j], w))
                .collect();
            pairs.sort_by_key(|p| p.0);
            neighbors[perm[i]] = pairs.iter().map(|p| p.0).collect();
            weights[perm[i]] = pairs.iter().map(|p| p.1).collect();
        }
        Self { neighbors, weights }
    }
}

/// Edge `(i, j)` exists iff the robots are within communication range
/// (inclusive). No self-loops.
pub fn build_comm_graph(s: &Scenario) -> CommGraph {
    let n = s.n_robots();
    let r = s.params.comm_range;
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if s.robots[i].dist(s.robots[j]) <= r {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    CommGraph::from_neighbors(neighbors)
}

/// What a robot perceives: relative positions of robots within sensing
/// range and of every target it could cover with some primitive. Entries are
/// in ascending id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub robot: usize,
    pub robots: Vec<(usize, Point2)>,
    pub targets: Vec<(usize, Point2)>,
}

impl Observation {
    pub fn target_ids(&self) -> Vec<usize> {
        self.targets.iter().map(|t| t.0).collect()
    }
}

pub fn observe(s: &Scenario, robot: usize) -> Result<Observation> {
    s.check_robot(robot)?;
    let me = s.robots[robot];
    let robots = s
        .robots
        .iter()
        .enumerate()
        .filter(|&(j, p)| j != robot && me.dist(*p) <= s.params.sensing_range)
        .map(|(j, p)| (j, *p - me))
        .collect();
    let targets = s
        .coverable_targets(robot)?
        .into_iter()
        .map(|t| (t, s.targets[t] - me))
        .collect();
    Ok(Observation { robot, robots, targets })
}
