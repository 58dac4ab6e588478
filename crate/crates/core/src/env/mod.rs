//! The goal-conditioned construction environment: tasks, the state-dependent
//! feasible action set, and step/termination logic.

mod taskfile;

pub use taskfile::{load_task, load_task_dir, parse_task, save_task, task_to_string};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    point_in_polygon, polygon_distance, polygons_overlap, world_polygon, ConstructionSpace, Placement, Pose, Quad, Shape, Vec2,
    CONTACT_MIN_LENGTH, CONTACT_TOL,
};
use crate::stability::is_stable;

pub const DEFAULT_MAX_ACTIONS: usize = 10;
/// Minimum distance between a block and any obstacle.
pub const OBSTACLE_CLEARANCE: f64 = 1e-6;
const BOUNDS_TOL: f64 = 1e-9;

/// Axis-aligned square region the structure must not touch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    pub half_side: f64,
}

impl Obstacle {
    pub fn polygon(&self) -> Quad {
        let (c, h) = (self.center, self.half_side);
        [
            Vec2::new(c.x - h, c.z - h),
            Vec2::new(c.x + h, c.z - h),
            Vec2::new(c.x + h, c.z + h),
            Vec2::new(c.x - h, c.z + h),
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (p.x - self.center.x).abs() <= self.half_side && (p.z - self.center.z).abs() <= self.half_side
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: String,
    pub targets: Vec<Vec2>,
    pub obstacles: Vec<Obstacle>,
    pub shapes: Vec<Shape>,
    pub max_actions: usize,
    pub mu: f64,
}

impl Task {
    pub fn space(&self) -> ConstructionSpace {
        ConstructionSpace::BENCHMARK
    }

    /// Checks the task invariants, naming the offending field on failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let space = self.space();
        if self.targets.is_empty() {
            return Err("field `targets`: at least one target is required".into());
        }
        if self.shapes.is_empty() {
            return Err("field `shapes`: at least one shape is required".into());
        }
        if self.max_actions == 0 {
            return Err("field `max_actions`: must be positive".into());
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(format!("field `mu`: must be a non-negative number, got {}", self.mu));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !space.contains_point(*t) {
                return Err(format!("field `targets[{i}]`: ({}, {}) lies outside the construction space", t.x, t.z));
            }
            if let Some(j) = self.obstacles.iter().position(|o| o.contains(*t)) {
                return Err(format!("field `targets[{i}]`: target lies inside obstacle {j}"));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.half_side > 0.0) {
                return Err(format!("field `obstacles[{i}]`: half side must be positive"));
            }
            if !o.polygon().iter().all(|v| space.contains_point(*v)) {
                return Err(format!("field `obstacles[{i}]`: obstacle extends outside the construction space"));
            }
        }
        Ok(())
    }

    pub fn reached_targets(&self, state: &Assembly) -> BTreeSet<usize> {
        let polys: Vec<Quad> = state.placements().iter().map(world_polygon).collect();
        self.targets
            .iter()
            .enumerate()
            .filter(|(_, t)| polys.iter().any(|p| point_in_polygon(**t, p)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_solved(&self, state: &Assembly) -> bool {
        self.reached_targets(state).len() == self.targets.len()
    }
}

/// Ordered list of placements; the environment state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    placements: Vec<Placement>,
}

/// Quantized pose used for deduplication, ordering and hashing.
pub type PoseKey = (usize, i64, i64, i64);

pub fn pose_key(p: &Placement, resolution: f64) -> PoseKey {
    let q = |v: f64| (v / resolution).round() as i64;
    (p.shape_id, q(p.pose.x), q(p.pose.z), q(p.shape.canonical_theta(p.pose.theta)))
}

impl Assembly {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_placements(placements: Vec<Placement>) -> Self {
        Self { placements }
    }

    pub fn placements(&self) -> &[Placement] {
        &self.placements
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn with(&self, a: Placement) -> Assembly {
        let mut placements = Vec::with_capacity(self.placements.len() + 1);
        placements.extend_from_slice(&self.placements);
        placements.push(a);
        Assembly { placements }
    }

    /// Hashable identity of the assembly at the given pose resolution.
    pub fn key(&self, resolution: f64) -> Vec<PoseKey> {
        self.placements.iter().map(|p| pose_key(p, resolution)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    Success,
    MaxActions,
    DeadEnd,
}

impl Terminal {
    pub fn is_terminal(self) -> bool {
        self != Terminal::None
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminal::None => "none",
            Terminal::Success => "success",
            Terminal::MaxActions => "max_actions",
            Terminal::DeadEnd => "dead_end",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Assembly,
    pub terminal: Terminal,
    pub reached: BTreeSet<usize>,
    /// Feasible actions in `next_state`; empty whenever `terminal` is set.
    pub next_actions: Vec<Placement>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpaceConfig {
    pub shifts_per_face: usize,
    pub floor_step: f64,
    pub dedupe_resolution: f64,
}

impl Default for ActionSpaceConfig {
    fn default() -> Self {
        Self {
            shifts_per_face: 5,
            floor_step: 0.25,
            dedupe_resolution: 1e-3,
        }
    }
}

impl ActionSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shifts_per_face == 0 || self.shifts_per_face % 2 == 0 {
            return Err(Error::IllegalAction(format!("shifts_per_face must be odd, got {}", self.shifts_per_face)));
        }
        if !(self.floor_step > 0.0) || !(self.dedupe_resolution > 0.0) {
            return Err(Error::IllegalAction("floor_step and dedupe_resolution must be positive".into()));
        }
        Ok(())
    }

    /// Offsets along a mating face of length `len`, symmetric around zero.
    pub fn shifts(&self, len: f64) -> Vec<f64> {
        let n = self.shifts_per_face;
        if n <= 1 {
            return vec![0.0];
        }
        (0..n).map(|k| -len / 2.0 + len * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    OutOfBounds,
    Overlap,
    Obstacle,
    Floor,
    Unstable,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::OutOfBounds => "out of bounds",
            InvalidReason::Overlap => "overlaps a placed block",
            InvalidReason::Obstacle => "touches an obstacle",
            InvalidReason::Floor => "penetrates the floor",
            InvalidReason::Unstable => "unstable",
        })
    }
}

/// Geometric checks (everything except stability), in the documented order.
fn geometric_check(placed: &[Quad], task: &Task, poly: &Quad) -> std::result::Result<(), InvalidReason> {
    let space = task.space();
    if poly
        .iter()
        .any(|v| v.x < space.x_min - BOUNDS_TOL || v.x > space.x_max + BOUNDS_TOL || v.z > space.z_max + BOUNDS_TOL)
    {
        return Err(InvalidReason::OutOfBounds);
    }
    if placed.iter().any(|p| polygons_overlap(p, poly)) {
        return Err(InvalidReason::Overlap);
    }
    if task.obstacles.iter().any(|o| polygon_distance(&o.polygon(), poly) < OBSTACLE_CLEARANCE) {
        return Err(InvalidReason::Obstacle);
    }
    if poly.iter().any(|v| v.z < space.z_min - BOUNDS_TOL) {
        return Err(InvalidReason::Floor);
    }
    Ok(())
}

/// Validity of placing `a` on `state`; the error names the first failed check.
pub fn is_valid_action(state: &Assembly, task: &Task, a: &Placement) -> std::result::Result<(), InvalidReason> {
    let placed: Vec<Quad> = state.placements().iter().map(world_polygon).collect();
    geometric_check(&placed, task, &world_polygon(a))?;
    if !is_stable(state.with(*a).placements(), &task.space(), task.mu) {
        return Err(InvalidReason::Unstable);
    }
    Ok(())
}

/// Stability of `state + a` assuming `state` itself is stable: only the
/// blocks connected to `a` through block contacts can be affected.
fn stable_with(placed: &[Quad], state: &Assembly, task: &Task, a: &Placement, poly: &Quad) -> bool {
    let n = placed.len();
    // union-find over touching blocks, with the candidate as node n
    let mut parent: Vec<usize> = (0..=n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let touching = |p: &Quad, q: &Quad| polygon_distance(p, q) <= CONTACT_TOL;
    for i in 0..n {
        if touching(&placed[i], poly) {
            let (ri, rn) = (find(&mut parent, i), find(&mut parent, n));
            parent[ri] = rn;
        }
    }
    let root = find(&mut parent, n);
    let touches_any = (0..n).any(|i| find(&mut parent, i) == root);
    if touches_any {
        for i in 0..n {
            for j in i + 1..n {
                if touching(&placed[i], &placed[j]) {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
    }
    let root = find(&mut parent, n);
    let mut sub: Vec<Placement> = (0..n)
        .filter(|&i| find(&mut parent, i) == root)
        .map(|i| state.placements()[i])
        .collect();
    sub.push(*a);
    is_stable(&sub, &task.space(), task.mu)
}

/// Raw candidate placements before validity filtering, deduplicated and in
/// canonical order.
pub fn candidate_actions(state: &Assembly, task: &Task, cfg: &ActionSpaceConfig) -> Vec<Placement> {
    let space = task.space();
    let mut out: BTreeMap<PoseKey, Placement> = BTreeMap::new();
    let mut insert = |p: Placement| {
        let p = Placement::new(p.shape_id, p.shape, Pose::new(p.pose.x, p.pose.z, p.shape.canonical_theta(p.pose.theta)));
        out.entry(pose_key(&p, cfg.dedupe_resolution)).or_insert(p);
    };

    let n_floor = ((space.x_max - space.x_min) / cfg.floor_step + 1e-9).floor() as usize;
    for (sid, shape) in task.shapes.iter().enumerate() {
        let v = shape.vertices();
        for j in 0..4 {
            let theta = -(v[(j + 1) % 4] - v[j]).angle();
            let zmin = v.iter().map(|p| p.rotate(theta).z).fold(f64::INFINITY, f64::min);
            for k in 0..=n_floor {
                let x = space.x_min + k as f64 * cfg.floor_step;
                insert(Placement::new(sid, *shape, Pose::new(x, -zmin, theta)));
            }
        }
    }

    for placed in state.placements() {
        let w = world_polygon(placed);
        for i in 0..4 {
            let (a0, a1) = (w[i], w[(i + 1) % 4]);
            let la = (a1 - a0).norm();
            let u = (a1 - a0) * (1.0 / la);
            let mid_a = (a0 + a1) * 0.5;
            for (sid, shape) in task.shapes.iter().enumerate() {
                let v = shape.vertices();
                for j in 0..4 {
                    let (b0, b1) = (v[j], v[(j + 1) % 4]);
                    let lb = (b1 - b0).norm();
                    let theta = (a0 - a1).angle() - (b1 - b0).angle();
                    let mid_b = ((b0 + b1) * 0.5).rotate(theta);
                    for s in cfg.shifts(la.min(lb)) {
                        if la.min(lb).min((la + lb) / 2.0 - s.abs()) < CONTACT_MIN_LENGTH {
                            continue;
                        }
                        let pos = mid_a + u * s - mid_b;
                        insert(Placement::new(sid, *shape, Pose::new(pos.x, pos.z, theta)));
                    }
                }
            }
        }
    }
    out.into_values().collect()
}

/// The feasible action set of `state`, in canonical order.
pub fn enumerate_actions(state: &Assembly, task: &Task, cfg: &ActionSpaceConfig) -> Vec<Placement> {
    if state.len() >= task.max_actions {
        return Vec::new();
    }
    let placed: Vec<Quad> = state.placements().iter().map(world_polygon).collect();
    let candidates = candidate_actions(state, task, cfg);
    candidates
        .into_par_iter()
        .with_min_len(16)
        .filter_map(|a| {
            let poly = world_polygon(&a);
            geometric_check(&placed, task, &poly).ok()?;
            stable_with(&placed, state, task, &a, &poly).then_some(a)
        })
        .collect()
}

/// Appends `a` without validating it and classifies the result.
pub fn advance(state: &Assembly, task: &Task, a: Placement, cfg: &ActionSpaceConfig) -> StepOutcome {
    let next_state = state.with(a);
    let reached = task.reached_targets(&next_state);
    let (terminal, next_actions) = if reached.len() == task.targets.len() {
        (Terminal::Success, Vec::new())
    } else if next_state.len() >= task.max_actions {
        (Terminal::MaxActions, Vec::new())
    } else {
        let acts = enumerate_actions(&next_state, task, cfg);
        if acts.is_empty() {
            (Terminal::DeadEnd, acts)
        } else {
            (Terminal::None, acts)
        }
    };
    StepOutcome {
        next_state,
        terminal,
        reached,
        next_actions,
    }
}

/// Places `a`, rejecting invalid actions and steps from terminal states.
pub fn step(state: &Assembly, task: &Task, a: Placement, cfg: &ActionSpaceConfig) -> Result<StepOutcome> {
    if task.is_solved(state) && !state.is_empty() {
        return Err(Error::IllegalAction("episode already succeeded".into()));
    }
    if state.len() >= task.max_actions {
        return Err(Error::IllegalAction(format!("episode already used {} actions", state.len())));
    }
    is_valid_action(state, task, &a).map_err(|r| Error::IllegalAction(r.to_string()))?;
    Ok(advance(state, task, a, cfg))
}
