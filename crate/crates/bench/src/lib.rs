//! Fixtures shared by the engine benchmarks.

use std::f64::consts::PI;

use blockforge::{Assembly, Placement, Pose, Shape, Task, Vec2};

pub fn square(x: f64, z: f64) -> Placement {
    Placement::new(0, Shape::unit_square(), Pose::new(x, z, 0.0))
}

/// A straight column of `n` unit squares.
pub fn tower(n: usize) -> Vec<Placement> {
    (0..n).map(|i| square(0.0, 0.5 + i as f64)).collect()
}

/// Two upright trapezoids with an inverted keystone wedged between them.
pub fn arch() -> Vec<Placement> {
    let t = Shape::default_trapezoid();
    vec![
        Placement::new(1, t, Pose::new(-0.875, 2.75 / 6.0, 0.0)),
        Placement::new(1, t, Pose::new(0.875, 2.75 / 6.0, 0.0)),
        Placement::new(1, t, Pose::new(0.0, 0.5 + 3.25 / 6.0, PI)),
    ]
}

/// An obstacle-free task with both block types and one high target.
pub fn open_task() -> Task {
    Task {
        id: "bench".into(),
        targets: vec![Vec2::new(0.5, 3.5)],
        obstacles: vec![],
        shapes: vec![Shape::unit_square(), Shape::default_trapezoid()],
        max_actions: 10,
        mu: 0.6,
    }
}

/// A partially built staircase used as a mid-episode state.
pub fn staircase() -> Assembly {
    Assembly::from_placements(vec![square(0.0, 0.5), square(1.0, 0.5), square(0.5, 1.5)])
}
