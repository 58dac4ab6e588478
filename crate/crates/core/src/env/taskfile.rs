//! TOML task files.
//!
//! ```toml
//! id = "task01"
//! targets = [[0.0, 2.5]]
//! obstacles = [[2.0, 1.0, 0.5]]   # cx, cz, half_side
//! max_actions = 10
//! mu = 0.6
//!
//! [[shapes]]
//! kind = "square"
//! side = 1.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Obstacle, Task, DEFAULT_MAX_ACTIONS};
use crate::error::{Error, Result};
use crate::geometry::{Shape, ShapeSpec, Vec2};
use crate::stability::DEFAULT_MU;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    id: String,
    targets: Vec<[f64; 2]>,
    #[serde(default)]
    obstacles: Vec<[f64; 3]>,
    #[serde(default)]
    max_actions: Option<usize>,
    #[serde(default)]
    mu: Option<f64>,
    shapes: Vec<ShapeSpec>,
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::TaskParse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses and validates task text; `path` is only used in diagnostics.
pub fn parse_task(text: &str, path: &Path) -> Result<Task> {
    let file: TaskFile = toml::from_str(text).map_err(|e| parse_error(path, e.to_string()))?;
    let mut shapes = Vec::with_capacity(file.shapes.len());
    for (i, spec) in file.shapes.iter().enumerate() {
        shapes.push(Shape::new(*spec).map_err(|e| parse_error(path, format!("field `shapes[{i}]`: {e}")))?);
    }
    let task = Task {
        id: file.id,
        targets: file.targets.iter().map(|[x, z]| Vec2::new(*x, *z)).collect(),
        obstacles: file
            .obstacles
            .iter()
            .map(|[x, z, h]| Obstacle {
                center: Vec2::new(*x, *z),
                half_side: *h,
            })
            .collect(),
        shapes,
        max_actions: file.max_actions.unwrap_or(DEFAULT_MAX_ACTIONS),
        mu: file.mu.unwrap_or(DEFAULT_MU),
    };
    task.validate().map_err(|m| parse_error(path, m))?;
    Ok(task)
}

pub fn load_task(path: impl AsRef<Path>) -> Result<Task> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_task(&text, path)
}

/// Canonical text form: every optional field written out.
pub fn task_to_string(task: &Task) -> String {
    let file = TaskFile {
        id: task.id.clone(),
        targets: task.targets.iter().map(|t| [t.x, t.z]).collect(),
        obstacles: task.obstacles.iter().map(|o| [o.center.x, o.center.z, o.half_side]).collect(),
        max_actions: Some(task.max_actions),
        mu: Some(task.mu),
        shapes: task.shapes.iter().map(|s| s.spec()).collect(),
    };
    toml::to_string(&file).expect("task serializes")
}

pub fn save_task(task: &Task, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, task_to_string(task))?;
    Ok(())
}

/// Loads every `*.toml` file in a directory, sorted by file name.
pub fn load_task_dir(dir: impl AsRef<Path>) -> Result<Vec<Task>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(load_task).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
id = "sample"
targets = [[0.0, 2.5], [1.0, 1.5]]
obstacles = [[3.0, 1.0, 0.5]]

[[shapes]]
kind = "square"
side = 1.0

[[shapes]]
kind = "trapezoid"
bottom = 1.25
top = 0.75
height = 1.0
"#;

    #[test]
    fn parses_with_defaults() {
        let t = parse_task(SAMPLE, Path::new("sample.toml")).unwrap();
        assert_eq!(t.targets.len(), 2);
        assert_eq!(t.obstacles.len(), 1);
        assert_eq!(t.max_actions, 10);
        assert_eq!(t.mu, 0.6);
        assert_eq!(t.shapes.len(), 2);
    }

    #[test]
    fn canonical_round_trip() {
        let t = parse_task(SAMPLE, Path::new("sample.toml")).unwrap();
        let text = task_to_string(&t);
        let back = parse_task(&text, Path::new("x")).unwrap();
        assert_eq!(back, t);
        assert_eq!(task_to_string(&back), text);
    }

    #[test]
    fn missing_targets_is_a_parse_error() {
        let text = "id = \"x\"\n[[shapes]]\nkind = \"square\"\nside = 1.0\n";
        let err = parse_task(text, Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::TaskParse { .. }));
        assert!(msg.contains("targets"), "{msg}");
    }

    #[test]
    fn empty_target_list_rejected() {
        let text = "id = \"x\"\ntargets = []\n[[shapes]]\nkind = \"square\"\nside = 1.0\n";
        let msg = parse_task(text, Path::new("bad.toml")).unwrap_err().to_string();
        assert!(msg.contains("targets"), "{msg}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "id = \"x\"\ntargets = [[0.0, 1.0]\n";
        let msg = parse_task(text, Path::new("bad.toml")).unwrap_err().to_string();
        assert!(msg.contains("line 2") || msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn bad_shape_names_its_field() {
        let text = "id = \"x\"\ntargets = [[0.0, 1.0]]\n[[shapes]]\nkind = \"square\"\nside = -1.0\n";
        let msg = parse_task(text, Path::new("bad.toml")).unwrap_err().to_string();
        assert!(msg.contains("shapes[0]"), "{msg}");
    }

    #[test]
    fn target_inside_obstacle_rejected() {
        let text = "id = \"x\"\ntargets = [[0.0, 1.0]]\nobstacles = [[0.0, 1.0, 0.5]]\n[[shapes]]\nkind = \"square\"\nside = 1.0\n";
        let msg = parse_task(text, Path::new("bad.toml")).unwrap_err().to_string();
        assert!(msg.contains("obstacle"), "{msg}");
    }
}
