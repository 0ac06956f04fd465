//! Deterministic behavior analysis over multi-animal keypoint trajectories.
//!
//! All coordinate math is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`.

pub mod behaviors;
pub mod codegen;
pub mod dsl;
pub mod events;
pub mod geometry;
pub mod kinematics;
pub mod relations;
pub mod retrieval;
pub mod scalar;
pub mod session;
pub mod trackdata;

pub use events::{Event, EventDict, EventSeq, PostProcessSpec, SubjectKey};
pub use scalar::Scalar;

pub type Vec2 = geometry::Vec2<f64>;
pub type Polygon = geometry::Polygon<f64>;
pub type Dataset = trackdata::Dataset<f64>;
pub type SceneObject = trackdata::SceneObject<f64>;
pub type ObjectSet = trackdata::ObjectSet<f64>;
pub type RelationConfig = relations::RelationConfig<f64>;
pub type Condition = relations::Condition<f64>;
pub type Plan = behaviors::Plan<f64>;
pub type BehaviorProgram = behaviors::BehaviorProgram<f64>;
pub type BehaviorRegistry = behaviors::BehaviorRegistry<f64>;
pub type SessionState = session::SessionState<f64>;
