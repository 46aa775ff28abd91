//! Synthetic multi-view scenes with exact ground truth.
//!
//! A scene holds a body pose at human-like scale, a ring of weak-perspective
//! cameras whose projections land in the unit image square, the exact 2D
//! keypoints, per-view single-Gaussian pseudo-heatmaps centered on
//! (optionally noised) keypoints, and per-view monocular 3D estimates built
//! from the true camera-frame coordinates with configurable noise. Every
//! quantity is deterministic in the seed, which makes scenes usable as
//! oracles: solvers can be checked against the ground truth they were
//! generated from.

use crate::geometry::{
    matrix_to_rot6d, project_pose, GeometryError, Keypoints2D, Mat3, MonocularEstimate,
    Pose3D, Vec2, Vec3, WeakCamera,
};
use crate::mixtures::{GaussianMixture2D, HeatmapGrid, MixtureError};
use crate::objective::{BonePrior, ObjectiveError, SceneMixtures, Skeleton, SolutionState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("mixture mass extends outside the unit grid (component {component})")]
    MixtureOutsideGrid { component: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Body layout used for the ground-truth pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkeletonTemplate {
    /// Joints linked 0-1-2-... in a random-walk shape.
    Chain,
    /// Joints hang off a binary-heap parent structure.
    Tree,
    /// An equilateral triangle; requires exactly 3 joints.
    TriangleToy,
}

impl SkeletonTemplate {
    pub fn parse(s: &str) -> Result<Self, SceneError> {
        match s {
            "chain" => Ok(Self::Chain),
            "tree" => Ok(Self::Tree),
            "triangle" | "triangle-toy" => Ok(Self::TriangleToy),
            other => Err(SceneError::InvalidConfig(format!(
                "unknown skeleton template '{other}'"
            ))),
        }
    }
}

/// Knobs of the synthetic generator. All sigmas are in normalized image
/// units (the projected pose spans roughly the unit square).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub joints: usize,
    pub cameras: usize,
    pub template: SkeletonTemplate,
    /// Azimuth jitter of the camera ring, radians.
    pub ring_jitter: f64,
    /// Maximum camera elevation magnitude, radians.
    pub max_elevation: f64,
    /// Pseudo-heatmap sharpness σ_h.
    pub heatmap_sigma: f64,
    /// Noise on the monocular depth channel σ_depth.
    pub depth_noise: f64,
    /// Noise on the monocular image coordinates σ_pixel.
    pub pixel_noise: f64,
    /// Noise on the pseudo-heatmap centers σ_k.
    pub keypoint_noise: f64,
    /// Sigma of the generated bone-length prior.
    pub bone_sigma: f64,
    /// Length scale of the ground-truth pose (1000 gives millimeter-like
    /// error magnitudes).
    pub scale: f64,
    pub seed: u64,
    /// Place the first two cameras almost on top of each other, the
    /// ill-conditioned near-parallel geometry.
    pub hard_two_cam: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            joints: 17,
            cameras: 4,
            template: SkeletonTemplate::Tree,
            ring_jitter: 0.2,
            max_elevation: 0.35,
            heatmap_sigma: 0.01,
            depth_noise: 0.0,
            pixel_noise: 0.0,
            keypoint_noise: 0.0,
            bone_sigma: 0.05,
            scale: 1000.0,
            seed: 0,
            hard_two_cam: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.joints < 3 {
            return Err(SceneError::InvalidConfig(format!(
                "need at least 3 joints, got {}",
                self.joints
            )));
        }
        if self.cameras < 2 {
            return Err(SceneError::InvalidConfig(format!(
                "need at least 2 cameras, got {}",
                self.cameras
            )));
        }
        for (name, value) in [
            ("heatmap_sigma", self.heatmap_sigma),
            ("depth_noise", self.depth_noise),
            ("pixel_noise", self.pixel_noise),
            ("keypoint_noise", self.keypoint_noise),
            ("bone_sigma", self.bone_sigma),
            ("ring_jitter", self.ring_jitter),
            ("max_elevation", self.max_elevation),
        ] {
            if value < 0.0 || !value.is_finite() {
                return Err(SceneError::InvalidConfig(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        if self.heatmap_sigma <= 0.0 {
            return Err(SceneError::InvalidConfig(
                "heatmap_sigma must be positive".into(),
            ));
        }
        if self.scale <= 0.0 {
            return Err(SceneError::InvalidConfig("scale must be positive".into()));
        }
        if self.template == SkeletonTemplate::TriangleToy && self.joints != 3 {
            return Err(SceneError::InvalidConfig(format!(
                "triangle template requires 3 joints, got {}",
                self.joints
            )));
        }
        Ok(())
    }
}

/// One synthetic scene: ground truth plus the observations a solver sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// World-frame pose, centered at the origin, in `scale`-sized units.
    pub gt_pose: Pose3D,
    /// Cameras mapping world units into normalized image coordinates.
    pub gt_cameras: Vec<WeakCamera>,
    /// Exact weak projections of the pose through each camera.
    pub gt_keypoints: Vec<Keypoints2D>,
    /// Per-(camera, joint) pseudo-heatmap mixtures.
    pub mixtures: SceneMixtures,
    /// Per-view monocular 3D estimates in normalized camera-frame units.
    pub monocular: Vec<MonocularEstimate>,
    pub skeleton: Skeleton,
    pub bone_prior: Option<BonePrior>,
    pub scale: f64,
}

impl Scene {
    pub fn joint_count(&self) -> usize {
        self.gt_pose.joint_count()
    }

    pub fn camera_count(&self) -> usize {
        self.gt_cameras.len()
    }

    /// The ground truth expressed as a gauge-fixed [`SolutionState`]: the
    /// pose is mapped into camera 0's normalized frame and the remaining
    /// cameras adjusted so every projection is unchanged.
    pub fn gauge_normalized_gt(&self) -> Result<SolutionState, SceneError> {
        let cam0 = &self.gt_cameras[0];
        let r0 = cam0.rotation()?;
        let s0 = cam0.scale();
        let offset = Vec3::new(cam0.shift.x, cam0.shift.y, 0.0);
        let pose = self.gt_pose.transformed(|j| s0 * (r0 * j) + offset);

        let mut cameras = vec![WeakCamera::identity()];
        for cam in &self.gt_cameras[1..] {
            let r = cam.rotation()? * r0.transpose();
            let s = cam.scale() / s0;
            let rotated_offset = r * offset;
            cameras.push(WeakCamera {
                rot: matrix_to_rot6d(&r)?,
                shift: cam.shift - s * Vec2::new(rotated_offset.x, rotated_offset.y),
                log_scale: s.ln(),
            });
        }
        Ok(SolutionState::new(pose, cameras)?)
    }

    /// Drops all but the first `k` cameras (the camera-count ablation).
    pub fn truncated(&self, k: usize) -> Result<Scene, SceneError> {
        if k < 2 || k > self.camera_count() {
            return Err(SceneError::InvalidConfig(format!(
                "cannot keep {k} of {} cameras",
                self.camera_count()
            )));
        }
        Ok(Scene {
            gt_pose: self.gt_pose.clone(),
            gt_cameras: self.gt_cameras[..k].to_vec(),
            gt_keypoints: self.gt_keypoints[..k].to_vec(),
            mixtures: self.mixtures.truncated(k),
            monocular: self.monocular[..k].to_vec(),
            skeleton: self.skeleton.clone(),
            bone_prior: self.bone_prior.clone(),
            scale: self.scale,
        })
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Template pose centered at the origin, rescaled so the RMS joint radius is
/// half the configured scale.
fn template_pose(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (Pose3D, Skeleton) {
    let (mut joints, skeleton) = match cfg.template {
        SkeletonTemplate::TriangleToy => {
            let side = 1.0;
            let h = side * 3.0_f64.sqrt() / 2.0;
            let joints = vec![
                Vec3::new(-side / 2.0, -h / 3.0, 0.0),
                Vec3::new(side / 2.0, -h / 3.0, 0.0),
                Vec3::new(0.0, 2.0 * h / 3.0, 0.0),
            ];
            let skeleton = Skeleton::new(vec![(0, 1), (1, 2), (2, 0)]).unwrap();
            (joints, skeleton)
        }
        SkeletonTemplate::Chain => {
            let mut joints = vec![Vec3::zeros()];
            for i in 1..cfg.joints {
                let dir = unit_vector(rng);
                let step = rng.gen_range(0.7..1.3);
                joints.push(joints[i - 1] + step * dir);
            }
            (joints, Skeleton::chain(cfg.joints))
        }
        SkeletonTemplate::Tree => {
            let mut joints = vec![Vec3::zeros()];
            let mut edges = Vec::new();
            for i in 1..cfg.joints {
                let parent = (i - 1) / 2;
                let dir = unit_vector(rng);
                let step = rng.gen_range(0.7..1.3);
                joints.push(joints[parent] + step * dir);
                edges.push((parent, i));
            }
            (joints, Skeleton::new(edges).unwrap())
        }
    };

    // Random global orientation, then recenter and rescale.
    let orient = crate::geometry::random_rotation(rng);
    for j in joints.iter_mut() {
        *j = orient * *j;
    }
    let centroid = joints.iter().sum::<Vec3>() / joints.len() as f64;
    let mut rms = 0.0;
    for j in joints.iter_mut() {
        *j -= centroid;
        rms += j.norm_squared();
    }
    let rms = (rms / joints.len() as f64).sqrt();
    let target = cfg.scale / 2.0;
    for j in joints.iter_mut() {
        *j *= target / rms;
    }
    (Pose3D::new(joints).unwrap(), skeleton)
}

/// Rotation looking along `direction` (unit), with image axes chosen
/// right-handed around it.
fn look_at_rotation(direction: Vec3) -> Mat3 {
    let mut up = Vec3::new(0.0, 0.0, 1.0);
    if direction.dot(&up).abs() > 0.95 {
        up = Vec3::new(0.0, 1.0, 0.0);
    }
    let right = up.cross(&direction).normalize();
    let image_up = direction.cross(&right);
    Mat3::from_rows(&[
        right.transpose(),
        image_up.transpose(),
        direction.transpose(),
    ])
}

/// Generates one scene, deterministically in `cfg.seed`.
pub fn generate(cfg: &SceneConfig) -> Result<Scene, SceneError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let (gt_pose, skeleton) = template_pose(cfg, &mut rng);

    // Cameras on a jittered ring, looking at the pose centroid (the origin).
    let mut placements: Vec<(f64, f64)> = (0..cfg.cameras)
        .map(|c| {
            let azimuth = 2.0 * std::f64::consts::PI * c as f64 / cfg.cameras as f64
                + rng.gen_range(-cfg.ring_jitter..=cfg.ring_jitter);
            let elevation = rng.gen_range(-cfg.max_elevation..=cfg.max_elevation);
            (azimuth, elevation)
        })
        .collect();
    if cfg.hard_two_cam {
        // Near-parallel first pair: baseline angle of about five degrees.
        placements[1] = (placements[0].0 + 0.087, placements[0].1);
    }

    let mut gt_cameras = Vec::with_capacity(cfg.cameras);
    for &(azimuth, elevation) in &placements {
        let toward_camera = Vec3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        let rotation = look_at_rotation(-toward_camera);
        // Scale so the projected pose occupies about 70% of the unit
        // square, centered near (0.5, 0.5).
        let extent = gt_pose
            .joints()
            .iter()
            .map(|j| {
                let r = rotation * j;
                r.x.abs().max(r.y.abs())
            })
            .fold(0.0_f64, f64::max);
        let scale = 0.35 * rng.gen_range(0.9..1.1) / extent;
        let shift = Vec2::new(
            0.5 + rng.gen_range(-0.05..0.05),
            0.5 + rng.gen_range(-0.05..0.05),
        );
        gt_cameras.push(WeakCamera {
            rot: matrix_to_rot6d(&rotation)?,
            shift,
            log_scale: scale.ln(),
        });
    }

    let gt_keypoints: Vec<Keypoints2D> = gt_cameras
        .iter()
        .map(|cam| project_pose(&gt_pose, cam))
        .collect();

    // Pseudo-heatmaps: one spherical Gaussian per joint, centered on the
    // (optionally perturbed) true keypoint.
    let mut views = Vec::with_capacity(cfg.cameras);
    for kps in &gt_keypoints {
        let mut view = Vec::with_capacity(cfg.joints);
        for point in kps.points() {
            let center = point
                + cfg.keypoint_noise
                    * Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng));
            view.push(GaussianMixture2D::single(center, cfg.heatmap_sigma)?);
        }
        views.push(view);
    }
    let mixtures = SceneMixtures::new(views)?;

    // Monocular estimates: true camera-frame coordinates with pixel and
    // depth noise; the depth channel is re-centered to zero mean.
    let monocular: Vec<MonocularEstimate> = gt_cameras
        .iter()
        .map(|cam| {
            let rotation = cam.rotation().expect("generated camera is valid");
            let s = cam.scale();
            let joints = gt_pose
                .joints()
                .iter()
                .map(|j| {
                    let r = rotation * j;
                    Vec3::new(
                        s * r.x + cam.shift.x + cfg.pixel_noise * normal.sample(&mut rng),
                        s * r.y + cam.shift.y + cfg.pixel_noise * normal.sample(&mut rng),
                        s * r.z + cfg.depth_noise * normal.sample(&mut rng),
                    )
                })
                .collect();
            MonocularEstimate::new(Pose3D::new(joints).expect("finite joints"))
        })
        .collect();

    let bone_prior = Some(BonePrior::from_pose(&gt_pose, &skeleton, cfg.bone_sigma)?);

    Ok(Scene {
        gt_pose,
        gt_cameras,
        gt_keypoints,
        mixtures,
        monocular,
        skeleton,
        bone_prior,
        scale: cfg.scale,
    })
}

/// Rasterizes a mixture onto a `width × height` grid over the unit square,
/// for feeding the EM fitter realistic inputs. The mixture mass must lie
/// inside the square within three sigma.
pub fn to_heatmap_grid(
    mixture: &GaussianMixture2D,
    width: usize,
    height: usize,
) -> Result<HeatmapGrid, SceneError> {
    for (i, c) in mixture.components().iter().enumerate() {
        let reach = 3.0 * c.sigma;
        if c.mean.x - reach < 0.0
            || c.mean.x + reach > 1.0
            || c.mean.y - reach < 0.0
            || c.mean.y + reach > 1.0
        {
            return Err(SceneError::MixtureOutsideGrid { component: i });
        }
    }
    let mut probs = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let x = Vec2::new(
                (col as f64 + 0.5) / width as f64,
                (row as f64 + 0.5) / height as f64,
            );
            probs.push(crate::mixtures::log_prob(mixture, &x).exp());
        }
    }
    Ok(HeatmapGrid::new(width, height, probs)?)
}

/// Stage-1 initialization straight from a scene's monocular estimates.
pub fn stage1_from_scene(scene: &Scene) -> Result<SolutionState, SceneError> {
    let (pose, cameras) = crate::geometry::stage1_init(&scene.monocular)?;
    Ok(SolutionState::new(pose, cameras)?)
}
