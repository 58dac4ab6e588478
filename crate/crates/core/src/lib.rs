//! Blueprint-free block assembly.
//!
//! A 2D discrete-block construction environment with rigid-block equilibrium
//! stability, image-based successor features, a successor-feature deep
//! Q-learning trainer, and a closed-loop executor with placement noise.

pub mod closedloop;
pub mod env;
pub mod error;
pub mod features;
pub mod geometry;
pub mod learner;
pub mod rng;
pub mod stability;

pub use env::{ActionSpaceConfig, Assembly, Obstacle, StepOutcome, Task, Terminal};
pub use error::{Error, Result};
pub use features::{FeatureImage, RewardField, RewardParams, TaskImage};
pub use geometry::{ConstructionSpace, Placement, Pose, Shape, ShapeKind, ShapeSpec, Vec2};
pub use stability::{StabilityOptions, StabilityVerdict};
