//! Multi-view 3D pose estimation with unknown cameras.
//!
//! This crate solves for the 3D joint positions of an articulated body *and*
//! the weak-perspective cameras observing it, given only per-view evidence:
//! 2D keypoint localization heatmaps (compressed into Gaussian mixtures) and
//! rough per-view monocular 3D estimates. No camera calibration and no 3D
//! ground truth are required at inference time.
//!
//! The solver is staged:
//!
//! 1. **Initialization** ([`geometry::stage1_init`]) — rigidly align the
//!    per-view monocular estimates into the first camera's frame with a
//!    closed-form Procrustes solve, yielding an initial pose and cameras.
//! 2. **Iterative refinement** ([`refine::refine_iterative`]) — Adam gradient
//!    descent on a probabilistic bundle-adjustment objective that scores
//!    reprojected joints under the per-view mixture densities.
//! 3. **Learned refinement** ([`neuro`]) — a small permutation-equivariant
//!    network trained to predict the refinement updates directly, trading a
//!    few forward passes for the full gradient descent.
//!
//! Everything is validated end to end against a synthetic-scene oracle
//! ([`scenegen`]), and the `metapose` binary exposes the pipeline as CLI
//! subcommands operating on JSONL scene files (see [`io`]).
//!
//! ```
//! use metapose::scenegen::{SceneConfig, generate};
//! use metapose::geometry::stage1_init;
//! use metapose::metrics::pmpjpe;
//!
//! let scene = generate(&SceneConfig::default()).unwrap();
//! let (pose, _cams) = stage1_init(&scene.monocular).unwrap();
//! // Noise-free monocular estimates reproduce the scene exactly.
//! assert!(pmpjpe(&pose, &scene.gt_pose).unwrap() < 1e-6 * scene.scale);
//! ```

pub mod cli;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod mixtures;
pub mod neuro;
pub mod objective;
pub mod refine;
pub mod scenegen;

pub use geometry::{
    GeometryError, Keypoints2D, MonocularEstimate, Pose3D, Rot6D, WeakCamera,
};
pub use mixtures::{EmConfig, GaussianMixture2D, HeatmapGrid, MixtureError};
pub use objective::{Objective, SceneMixtures, Skeleton, SolutionState};
pub use refine::{AdamConfig, RefineTrace};
pub use scenegen::{Scene, SceneConfig};
