//! Procedural training data: closed body-like meshes and their orthographic
//! renders with front and back normal maps.

pub mod dataset;
pub mod render;
pub mod scene;

pub use dataset::{build_dataset, generate_samples, DatasetConfig, DatasetManifest, ManifestEntry, Split};
pub use render::{render_orthographic, NormalInput, RenderedSample};
pub use scene::{generate_scene, generate_scene_with, Primitive, SceneKind, SceneSpec};
