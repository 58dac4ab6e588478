//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use std::path::PathBuf;

use blockforge::env::{enumerate_actions, load_task_dir, ActionSpaceConfig, Assembly, Task};
use blockforge::geometry::{point_in_polygon, polygon_distance, world_polygon, Placement, Vec2};

pub fn tasks_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tasks")
}

pub fn bundled_tasks() -> Vec<Task> {
    load_task_dir(tasks_dir()).expect("bundled tasks load")
}

/// Sum over unreached targets of their distance to the structure (or floor).
fn shortfall(task: &Task, state: &Assembly) -> f64 {
    let polys: Vec<_> = state.placements().iter().map(world_polygon).collect();
    task.targets
        .iter()
        .map(|t| {
            if polys.iter().any(|p| point_in_polygon(*t, p)) {
                return 0.0;
            }
            let pt = [*t, *t + Vec2::new(1e-9, 0.0), *t + Vec2::new(0.0, 1e-9), *t + Vec2::new(1e-9, 1e-9)];
            polys.iter().map(|p| polygon_distance(p, &pt)).fold(t.z, f64::min)
        })
        .sum()
}

/// Beam search for a placement sequence that covers every target.
pub fn beam_solve(task: &Task, width: usize) -> Option<Vec<Placement>> {
    let cfg = ActionSpaceConfig::default();
    let mut beam = vec![Assembly::new()];
    for _ in 0..task.max_actions {
        let mut next: Vec<(f64, Assembly)> = Vec::new();
        for s in &beam {
            for a in enumerate_actions(s, task, &cfg) {
                let n = s.with(a);
                if task.is_solved(&n) {
                    return Some(n.placements().to_vec());
                }
                let reached = task.reached_targets(&n).len() as f64;
                next.push((shortfall(task, &n) - 2.0 * reached, n));
            }
        }
        if next.is_empty() {
            return None;
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut seen = std::collections::HashSet::new();
        beam = next
            .into_iter()
            .filter(|(_, s)| {
                let mut k = s.key(1e-3);
                k.sort();
                seen.insert(k)
            })
            .take(width)
            .map(|(_, s)| s)
            .collect();
    }
    None
}
