//! Noisy execution with replanning from the as-built assembly.
//!
//! Each chosen placement is perturbed, released slightly above its
//! intended height, dropped vertically onto whatever lies below and
//! squared up against its support. The policy then plans its next step
//! from the settled poses.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{enumerate_actions, ActionSpaceConfig, Assembly, Task, Terminal, OBSTACLE_CLEARANCE};
use crate::error::{Error, Result};
use crate::geometry::{
    normalize_angle, polygon_distance, polygons_overlap, world_polygon, Placement, Pose, Quad, Vec2, POINT_TOL,
};
use crate::learner::{classify, select_action, ApproximatorParams, TaskContext};
use crate::rng::sub_rng;
use crate::stability::is_stable;

/// Offsets above this (in block sizes) mark a run as diverged from plan.
pub const DIVERGENCE_OFFSET: f64 = 0.05;
pub const MAX_RETRIES: usize = 3;
/// Largest misalignment a settling block squares up against its support.
pub const SNAP_ANGLE: f64 = 5.0 * PI / 180.0;
/// Rotation noise is truncated at this many standard deviations.
pub const THETA_TRUNCATION: f64 = 3.0;
const DROP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis standard deviation of the position error, in block sizes.
    pub sigma_xy: f64,
    /// Standard deviation of the rotation error, in radians.
    pub sigma_theta: f64,
    /// Position errors are truncated at this magnitude, in block sizes.
    pub max_offset: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_xy: 0.02,
            sigma_theta: 0.5 * PI / 180.0,
            max_offset: 0.09,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_xy: 0.0,
            sigma_theta: 0.0,
            max_offset: 0.0,
            seed: 0,
        }
    }

    /// Position noise `sigma_xy`, default rotation noise, truncation at
    /// `max(0.09, 3·sigma_xy)`. Zero gives the noiseless model.
    pub fn with_sigma_xy(sigma_xy: f64) -> Self {
        if sigma_xy == 0.0 {
            return Self::noiseless();
        }
        let d = Self::default();
        Self {
            sigma_xy,
            max_offset: d.max_offset.max(3.0 * sigma_xy),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_xy >= 0.0 && self.sigma_theta >= 0.0 && self.sigma_xy.is_finite() && self.sigma_theta.is_finite()) {
            return Err(Error::Config("noise standard deviations must be non-negative".into()));
        }
        if !(self.max_offset >= self.sigma_xy) {
            return Err(Error::Config(format!(
                "max_offset {} must be at least sigma_xy {}",
                self.max_offset, self.sigma_xy
            )));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_xy == 0.0 && self.sigma_theta == 0.0
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, bound: f64) -> f64 {
    if sigma == 0.0 || bound == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= bound {
            return v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseReason {
    /// Every attempt ended overlapping, touching an obstacle or out of bounds.
    NoClearLanding,
    /// The settled block left the assembly without equilibrium.
    Unstable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Settled {
    Placed(Placement),
    /// `attempted` is the last settled (or attempted) pose.
    Collapse { attempted: Placement, reason: CollapseReason },
}

impl Settled {
    pub fn placement(&self) -> Placement {
        match *self {
            Settled::Placed(p) | Settled::Collapse { attempted: p, .. } => p,
        }
    }
}

/// Outward normal of the counter-clockwise edge `a → b`.
fn outward(a: Vec2, b: Vec2) -> Vec2 {
    let e = b - a;
    Vec2::new(e.z, -e.x)
}

/// Height of edge `a–b` at abscissa `x`, if `x` lies over the edge.
fn edge_height_at(a: Vec2, b: Vec2, x: f64) -> Option<f64> {
    let (lo, hi) = if a.x <= b.x { (a.x, b.x) } else { (b.x, a.x) };
    if x < lo - POINT_TOL || x > hi + POINT_TOL || hi - lo < POINT_TOL {
        return None;
    }
    let t = ((x - a.x) / (b.x - a.x)).clamp(0.0, 1.0);
    Some(a.z + t * (b.z - a.z))
}

fn edges(q: &Quad) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
    (0..4).map(move |i| (q[i], q[(i + 1) % 4]))
}

/// Support met by a falling polygon: the direction of the supporting edge.
#[derive(Clone, Copy, Debug)]
struct Drop {
    distance: f64,
    support_dir: Option<Vec2>,
}

/// The most upward-facing edge of `q` meeting vertex `i`, if any faces up.
fn corner_face(q: &Quad, i: usize) -> Option<Vec2> {
    let (prev, next) = (q[(i + 3) % 4], q[(i + 1) % 4]);
    [(prev, q[i]), (q[i], next)]
        .into_iter()
        .filter(|(a, b)| outward(*a, *b).z > POINT_TOL)
        .max_by(|x, y| {
            let (nx, ny) = (outward(x.0, x.1), outward(y.0, y.1));
            (nx.z / nx.norm()).total_cmp(&(ny.z / ny.norm()))
        })
        .map(|(a, b)| b - a)
}

/// How far `p` can fall straight down before touching the floor or `statics`.
fn drop_distance(p: &Quad, statics: &[Quad], floor: f64) -> Drop {
    let mut best = Drop {
        distance: f64::INFINITY,
        support_dir: None,
    };
    let mut consider = |dist: f64, dir: Option<Vec2>| {
        if dist >= -DROP_EPS && dist < best.distance {
            best = Drop {
                distance: dist,
                support_dir: dir,
            };
        }
    };
    for v in p {
        consider(v.z - floor, Some(Vec2::new(-1.0, 0.0)));
    }
    for q in statics {
        for (a, b) in edges(q).filter(|(a, b)| outward(*a, *b).z > POINT_TOL) {
            for v in p {
                if let Some(h) = edge_height_at(a, b, v.x) {
                    consider(v.z - h, Some(b - a));
                }
            }
        }
        for (a, b) in edges(p).filter(|(a, b)| outward(*a, *b).z < -POINT_TOL) {
            for (i, w) in q.iter().enumerate() {
                if let Some(h) = edge_height_at(a, b, w.x) {
                    // a corner below the falling face; the block tips onto a face at that corner
                    consider(h - w.z, corner_face(q, i));
                }
            }
        }
    }
    best.distance = best.distance.max(0.0);
    best
}

/// Rotation that makes the best-aligned downward face of `p` anti-parallel
/// to `support`, if within [`SNAP_ANGLE`].
fn snap_rotation(p: &Quad, support: Vec2) -> Option<f64> {
    let target = support.angle() + PI;
    edges(p)
        .filter(|(a, b)| outward(*a, *b).z < 0.0)
        .map(|(a, b)| normalize_angle(target - (b - a).angle()))
        .filter(|d| d.abs() <= SNAP_ANGLE)
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
}

fn settle(pl: Placement, statics: &[Quad], floor: f64) -> Placement {
    let fall = |pl: Placement| {
        let drop = drop_distance(&world_polygon(&pl), statics, floor);
        let dz = if drop.distance < DROP_EPS { 0.0 } else { drop.distance };
        let pose = pl.pose;
        (Placement::new(pl.shape_id, pl.shape, Pose { z: pose.z - dz, ..pose }), drop)
    };
    let (landed, drop) = fall(pl);
    let Some(dir) = drop.support_dir else { return landed };
    match snap_rotation(&world_polygon(&landed), dir) {
        Some(r) if r.abs() > 1e-12 => {
            let pose = landed.pose;
            fall(Placement::new(landed.shape_id, landed.shape, Pose::new(pose.x, pose.z, pose.theta + r))).0
        }
        _ => landed,
    }
}

fn lowest(q: &Quad) -> f64 {
    q.iter().map(|v| v.z).fold(f64::INFINITY, f64::min)
}

fn clear_landing(poly: &Quad, statics: &[Quad], task: &Task) -> bool {
    let space = task.space();
    let inside = poly.iter().all(|v| {
        v.x >= space.x_min - POINT_TOL && v.x <= space.x_max + POINT_TOL && v.z >= space.z_min - POINT_TOL && v.z <= space.z_max + POINT_TOL
    });
    inside
        && !statics.iter().any(|q| polygons_overlap(q, poly))
        && !task.obstacles.iter().any(|o| polygon_distance(&o.polygon(), poly) < OBSTACLE_CLEARANCE)
}

/// Executes `intended` with sampled pose error and lets it settle.
pub fn perturb_and_settle<R: Rng + ?Sized>(
    intended: &Placement,
    state: &Assembly,
    task: &Task,
    noise: &NoiseModel,
    rng: &mut R,
) -> Settled {
    let statics: Vec<Quad> = state.placements().iter().map(world_polygon).collect();
    let size = intended.shape.block_size();
    let floor = task.space().z_min;
    let mut last = *intended;
    for _ in 0..=MAX_RETRIES {
        let bound = noise.max_offset * size;
        let dx = truncated_normal(rng, noise.sigma_xy * size, bound);
        let dz = truncated_normal(rng, noise.sigma_xy * size, bound).abs();
        let dt = truncated_normal(rng, noise.sigma_theta, THETA_TRUNCATION * noise.sigma_theta);
        let p = intended.pose;
        let tilted = Placement::new(intended.shape_id, intended.shape, Pose::new(p.x + dx, p.z + dz, p.theta + dt));
        let lift = (lowest(&world_polygon(intended)) + dz - lowest(&world_polygon(&tilted))).max(0.0);
        let released = Placement::new(intended.shape_id, intended.shape, Pose { z: tilted.pose.z + lift, ..tilted.pose });
        if !clear_landing(&world_polygon(&released), &statics, task) {
            last = released;
            continue;
        }
        let settled = settle(released, &statics, floor);
        last = settled;
        if !clear_landing(&world_polygon(&settled), &statics, task) {
            continue;
        }
        return if is_stable(state.with(settled).placements(), &task.space(), task.mu) {
            Settled::Placed(settled)
        } else {
            Settled::Collapse {
                attempted: settled,
                reason: CollapseReason::Unstable,
            }
        };
    }
    Settled::Collapse {
        attempted: last,
        reason: CollapseReason::NoClearLanding,
    }
}

/// Centroid distance between two poses of one shape, in block sizes.
pub fn placement_offset(intended: &Placement, actual: &Placement) -> f64 {
    (actual.pose.position() - intended.pose.position()).norm() / intended.shape.block_size()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    None,
    Collapse,
    DeadEnd,
    MaxActions,
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureCause::None => "none",
            FailureCause::Collapse => "collapse",
            FailureCause::DeadEnd => "dead_end",
            FailureCause::MaxActions => "max_actions",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedPose {
    pub shape_id: usize,
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl From<&Placement> for LoggedPose {
    fn from(p: &Placement) -> Self {
        Self {
            shape_id: p.shape_id,
            x: p.pose.x,
            z: p.pose.z,
            theta: p.pose.theta,
        }
    }
}

/// One line of the exported step log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub task: String,
    pub step: usize,
    pub intended: LoggedPose,
    pub actual: LoggedPose,
    pub offset: f64,
    pub q: Option<f64>,
    pub termination: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub task_id: String,
    pub success: bool,
    pub placements_intended: Vec<Placement>,
    pub placements_actual: Vec<Placement>,
    pub offsets: Vec<f64>,
    pub q_values: Vec<Option<f64>>,
    pub failure: FailureCause,
    /// Succeeded or not, some block landed more than
    /// [`DIVERGENCE_OFFSET`] away from where it was meant to go.
    pub diverged: bool,
}

impl EpisodeResult {
    pub fn steps(&self) -> usize {
        self.placements_intended.len()
    }

    pub fn mean_offset(&self) -> Option<f64> {
        (!self.offsets.is_empty()).then(|| self.offsets.iter().sum::<f64>() / self.offsets.len() as f64)
    }

    pub fn max_offset(&self) -> Option<f64> {
        self.offsets.iter().copied().reduce(f64::max)
    }

    pub fn step_logs(&self) -> Vec<StepLog> {
        let n = self.steps();
        (0..n)
            .map(|i| StepLog {
                task: self.task_id.clone(),
                step: i + 1,
                intended: (&self.placements_intended[i]).into(),
                actual: (&self.placements_actual[i]).into(),
                offset: self.offsets[i],
                q: self.q_values[i],
                termination: if i + 1 == n {
                    if self.success { "success".into() } else { self.failure.to_string() }
                } else {
                    "none".into()
                },
            })
            .collect()
    }

    /// One JSON object per step.
    pub fn write_log<W: Write>(&self, mut w: W) -> io::Result<()> {
        for rec in self.step_logs() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_log(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_log(&mut buf)?;
        std::fs::write(path, buf)
    }
}

/// Reads a step log written by [`EpisodeResult::write_log`].
pub fn read_log(text: &str) -> Result<Vec<StepLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("bad step log line: {e}"))))
        .collect()
}

/// Greedy construction under placement noise, replanning after every step.
pub fn closed_loop_episode<R: Rng + ?Sized>(
    params: &ApproximatorParams,
    ctx: &TaskContext,
    noise: &NoiseModel,
    cfg: &ActionSpaceConfig,
    rng: &mut R,
) -> Result<EpisodeResult> {
    noise.validate()?;
    let task = &ctx.task;
    let mut res = EpisodeResult {
        task_id: task.id.clone(),
        success: false,
        placements_intended: Vec::new(),
        placements_actual: Vec::new(),
        offsets: Vec::new(),
        q_values: Vec::new(),
        failure: FailureCause::None,
        diverged: false,
    };
    let mut state = Assembly::new();
    let mut actions = enumerate_actions(&state, task, cfg);
    let mut terminal = if actions.is_empty() { Terminal::DeadEnd } else { Terminal::None };
    while terminal == Terminal::None {
        let sel = select_action(params, ctx, &state, &actions, 0.0, rng)?;
        let intended = actions[sel.index];
        let outcome = perturb_and_settle(&intended, &state, task, noise, rng);
        let actual = outcome.placement();
        let offset = placement_offset(&intended, &actual);
        res.placements_intended.push(intended);
        res.placements_actual.push(actual);
        res.offsets.push(offset);
        res.q_values.push(sel.q);
        res.diverged |= offset > DIVERGENCE_OFFSET;
        if let Settled::Collapse { .. } = outcome {
            res.failure = FailureCause::Collapse;
            return Ok(res);
        }
        state = state.with(actual);
        actions = enumerate_actions(&state, task, cfg);
        terminal = classify(task, &state, &actions);
    }
    res.success = terminal == Terminal::Success;
    res.failure = match terminal {
        Terminal::DeadEnd => FailureCause::DeadEnd,
        Terminal::MaxActions => FailureCause::MaxActions,
        _ => FailureCause::None,
    };
    Ok(res)
}

/// Success counts and offsets for one (task, noise level) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub task: String,
    pub sigma_xy: f64,
    pub successes: usize,
    pub trials: usize,
    pub avg_offset: f64,
    pub max_offset: f64,
    pub diverged: usize,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Episodes in (noise level, task, trial) order.
    pub episodes: Vec<(usize, EpisodeResult)>,
}

impl SweepResult {
    /// Overall success fraction at the `level`-th noise setting.
    pub fn success_rate(&self, sigma_xy: f64) -> f64 {
        let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.sigma_xy == sigma_xy).collect();
        let trials: usize = rows.iter().map(|r| r.trials).sum();
        rows.iter().map(|r| r.successes).sum::<usize>() as f64 / trials.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,sigma_xy,successes,trials,avg_offset,max_offset,diverged\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.task, r.sigma_xy, r.successes, r.trials, r.avg_offset, r.max_offset, r.diverged
            ));
        }
        s
    }
}

/// Offsets summary over a set of episodes; zero when no step was taken.
pub fn offset_summary<'a>(episodes: impl IntoIterator<Item = &'a EpisodeResult>) -> (f64, f64) {
    let offs: Vec<f64> = episodes.into_iter().flat_map(|e| e.offsets.iter().copied()).collect();
    if offs.is_empty() {
        return (0.0, 0.0);
    }
    (offs.iter().sum::<f64>() / offs.len() as f64, offs.iter().copied().fold(0.0, f64::max))
}

/// Runs `trials` closed-loop episodes per task and noise level. Episode
/// `(level, task, trial)` draws from its own generator, so the result does
/// not depend on scheduling.
pub fn noise_sweep(
    params: &ApproximatorParams,
    contexts: &[TaskContext],
    levels: &[NoiseModel],
    trials: usize,
    cfg: &ActionSpaceConfig,
) -> Result<SweepResult> {
    let jobs: Vec<(usize, usize, usize)> = (0..levels.len())
        .flat_map(|l| (0..contexts.len()).flat_map(move |t| (0..trials).map(move |k| (l, t, k))))
        .collect();
    let results: Vec<EpisodeResult> = jobs
        .par_iter()
        .map(|&(l, t, k)| {
            let mut rng = sub_rng(levels[l].seed, "noise", &[l as u64, t as u64, k as u64]);
            closed_loop_episode(params, &contexts[t], &levels[l], cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (l, level) in levels.iter().enumerate() {
        for (t, ctx) in contexts.iter().enumerate() {
            let cell: Vec<&EpisodeResult> = jobs
                .iter()
                .zip(&results)
                .filter(|((jl, jt, _), _)| *jl == l && *jt == t)
                .map(|(_, r)| r)
                .collect();
            let (avg, max) = offset_summary(cell.iter().copied());
            rows.push(SweepRow {
                task: ctx.task.id.clone(),
                sigma_xy: level.sigma_xy,
                successes: cell.iter().filter(|r| r.success).count(),
                trials: cell.len(),
                avg_offset: avg,
                max_offset: max,
                diverged: cell.iter().filter(|r| r.diverged).count(),
            });
        }
    }
    let episodes = jobs.iter().map(|j| j.1).zip(results).collect();
    Ok(SweepResult { rows, episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DEFAULT_MAX_ACTIONS;
    use crate::geometry::Shape;
    use crate::learner::{init_params, Architecture};
    use crate::features::RewardParams;

    fn sq(x: f64, z: f64) -> Placement {
        Placement::new(0, Shape::unit_square(), Pose::new(x, z, 0.0))
    }

    fn open_task() -> Task {
        Task {
            id: "open".into(),
            targets: vec![Vec2::new(0.0, 3.5)],
            obstacles: vec![],
            shapes: vec![Shape::unit_square()],
            max_actions: DEFAULT_MAX_ACTIONS,
            mu: 0.6,
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let t = open_task();
        let mut rng = sub_rng(1, "t", &[]);
        let s0 = Assembly::new();
        let a = sq(0.0, 0.5);
        assert_eq!(perturb_and_settle(&a, &s0, &t, &NoiseModel::noiseless(), &mut rng), Settled::Placed(a));
        let s1 = s0.with(a);
        let b = sq(0.3, 1.5);
        assert_eq!(perturb_and_settle(&b, &s1, &t, &NoiseModel::noiseless(), &mut rng), Settled::Placed(b));
    }

    #[test]
    fn tilted_floor_block_snaps_flat() {
        let t = open_task();
        let noise = NoiseModel {
            sigma_xy: 0.0,
            sigma_theta: 0.02,
            max_offset: 0.0,
            seed: 0,
        };
        let mut rng = sub_rng(5, "t", &[]);
        for _ in 0..50 {
            match perturb_and_settle(&sq(0.0, 0.5), &Assembly::new(), &t, &noise, &mut rng) {
                Settled::Placed(p) => {
                    assert!(p.shape.canonical_theta(p.pose.theta).abs() < 1e-9, "{:?}", p.pose);
                    assert!((p.pose.z - 0.5).abs() < 1e-9, "{:?}", p.pose);
                }
                other => panic!("{other:?}"),
            }
        }
        assert!(NoiseModel::with_sigma_xy(0.0).is_noiseless());
    }

    #[test]
    fn settled_blocks_rest_on_their_support() {
        let t = open_task();
        let s = Assembly::new().with(sq(0.0, 0.5));
        let noise = NoiseModel::with_sigma_xy(0.03);
        let mut rng = sub_rng(2, "t", &[]);
        for _ in 0..200 {
            if let Settled::Placed(p) = perturb_and_settle(&sq(0.2, 1.5), &s, &t, &noise, &mut rng) {
                assert!((p.pose.z - 1.5).abs() < 1e-9, "{:?}", p.pose);
                assert!(p.shape.canonical_theta(p.pose.theta).abs() < 1e-9);
                assert!(is_stable(s.with(p).placements(), &t.space(), t.mu));
            }
        }
    }

    #[test]
    fn tilted_overhang_tips_onto_the_top_face() {
        let t = open_task();
        let s = Assembly::new().with(sq(0.5, 0.5));
        let noise = NoiseModel::with_sigma_xy(0.02);
        let mut rng = sub_rng(6, "t", &[]);
        for _ in 0..200 {
            match perturb_and_settle(&sq(0.25, 1.5), &s, &t, &noise, &mut rng) {
                Settled::Placed(p) => assert!(p.shape.canonical_theta(p.pose.theta).abs() < 1e-9, "{:?}", p.pose),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn open_floor_offsets_match_noise_level() {
        let t = open_task();
        let noise = NoiseModel::with_sigma_xy(0.03);
        let mut rng = sub_rng(3, "t", &[]);
        let a = sq(0.0, 0.5);
        let offs: Vec<f64> = (0..1000)
            .map(|_| placement_offset(&a, &perturb_and_settle(&a, &Assembly::new(), &t, &noise, &mut rng).placement()))
            .collect();
        let mean = offs.iter().sum::<f64>() / offs.len() as f64;
        assert!((0.015..=0.045).contains(&mean), "mean offset {mean}");
        assert!(offs.iter().all(|o| *o <= 0.09 + 1e-12));
    }

    #[test]
    fn placement_at_toppling_margin_sometimes_collapses() {
        let t = Task { mu: 0.6, ..open_task() };
        let s = Assembly::new().with(sq(0.0, 0.5));
        let noise = NoiseModel::with_sigma_xy(0.05);
        let mut rng = sub_rng(4, "t", &[]);
        let collapses = (0..200)
            .filter(|_| matches!(perturb_and_settle(&sq(0.5, 1.5), &s, &t, &noise, &mut rng), Settled::Collapse { .. }))
            .count();
        assert!(collapses > 0 && collapses < 200, "{collapses}");
    }

    #[test]
    fn blocked_landing_retries_then_collapses() {
        let mut t = open_task();
        t.obstacles = vec![crate::env::Obstacle {
            center: Vec2::new(0.0, 0.5),
            half_side: 0.5,
        }];
        let s = Assembly::new();
        let mut rng = sub_rng(5, "t", &[]);
        let r = perturb_and_settle(&sq(0.0, 0.5), &s, &t, &NoiseModel::default(), &mut rng);
        assert!(matches!(
            r,
            Settled::Collapse {
                reason: CollapseReason::NoClearLanding,
                ..
            }
        ));
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseModel::default().validate().is_ok());
        let bad = NoiseModel {
            max_offset: 0.01,
            sigma_xy: 0.05,
            ..NoiseModel::default()
        };
        assert!(bad.validate().is_err());
    }

    fn ctx16(task: Task) -> TaskContext {
        TaskContext::new(
            task,
            &RewardParams {
                d: 16,
                ..RewardParams::default()
            },
        )
    }

    #[test]
    fn zero_noise_episode_matches_simulation() {
        let p = init_params(2, &Architecture::miniature());
        let ctx = ctx16(Task {
            targets: vec![Vec2::new(0.0, 1.5)],
            ..open_task()
        });
        let cfg = ActionSpaceConfig::default();
        let res = closed_loop_episode(&p, &ctx, &NoiseModel::noiseless(), &cfg, &mut sub_rng(0, "c", &[])).unwrap();
        let cache = crate::learner::ActionCache::new(cfg);
        let sim = crate::learner::run_episode(&p, &ctx, 0, &cache, 0.0, &mut sub_rng(0, "s", &[])).unwrap();
        let sim_actions: Vec<Placement> = sim.steps.iter().map(|s| s.action).collect();
        assert_eq!(res.placements_actual, sim_actions);
        assert_eq!(res.placements_intended, sim_actions);
        assert_eq!(res.success, sim.solved());
        assert!(res.offsets.iter().all(|o| *o == 0.0));
        assert!(!res.diverged);
    }

    #[test]
    fn episode_is_deterministic_and_log_round_trips() {
        let p = init_params(2, &Architecture::miniature());
        let ctx = ctx16(Task {
            targets: vec![Vec2::new(0.0, 1.5)],
            ..open_task()
        });
        let cfg = ActionSpaceConfig::default();
        let noise = NoiseModel::with_sigma_xy(0.03);
        let a = closed_loop_episode(&p, &ctx, &noise, &cfg, &mut sub_rng(7, "c", &[])).unwrap();
        let b = closed_loop_episode(&p, &ctx, &noise, &cfg, &mut sub_rng(7, "c", &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.placements_intended.len(), a.placements_actual.len());
        let mut buf = Vec::new();
        a.write_log(&mut buf).unwrap();
        let logs = read_log(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(logs.len(), a.steps());
        let mean = logs.iter().map(|l| l.offset).sum::<f64>() / logs.len() as f64;
        assert!((mean - a.mean_offset().unwrap()).abs() < 1e-12);
    }
}
