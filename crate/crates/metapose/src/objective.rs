//! Loss terms for pose-and-camera refinement, with analytic gradients.
//!
//! The central term is the probabilistic bundle-adjustment negative
//! log-likelihood: every joint is projected into every camera and scored
//! under that view's heatmap mixture density. A 2D reprojection loss
//! (against ground-truth keypoints, for training), a scale-invariant
//! bone-length prior, and a teacher penalty pulling toward a reference
//! solution can be mixed in.
//!
//! Optimization runs over a flattened parameter vector
//! `[pose (3J) | camera 1 (x:3, y:3, shift:2, log_scale:1) | camera 2 ...]`.
//! Camera 0 never appears: it is frozen to the gauge `(I, 0, 1)`, which
//! removes the global similarity ambiguity of the multi-view problem.

use crate::geometry::{
    GeometryError, Keypoints2D, Mat3, Pose3D, Rot6D, Vec2, Vec3, WeakCamera,
};
use crate::mixtures::{log_prob_and_grad, GaussianMixture2D};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no active objective term")]
    NoActiveTerms,
    #[error("camera 0 must be the fixed gauge (identity rotation, zero shift, unit scale)")]
    GaugeViolation,
    #[error("skeleton edge ({0}, {1}) is a self-loop")]
    SelfEdge(usize, usize),
    #[error("skeleton has no edges")]
    EmptySkeleton,
}

/// Undirected bone edges over joint indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    edges: Vec<(usize, usize)>,
}

impl Skeleton {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self, ObjectiveError> {
        if edges.is_empty() {
            return Err(ObjectiveError::EmptySkeleton);
        }
        for &(n, m) in &edges {
            if n == m {
                return Err(ObjectiveError::SelfEdge(n, m));
            }
        }
        Ok(Self { edges })
    }

    /// A simple chain 0-1-2-...-(joints-1).
    pub fn chain(joints: usize) -> Self {
        Self {
            edges: (1..joints).map(|i| (i - 1, i)).collect(),
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn max_joint_index(&self) -> usize {
        self.edges.iter().map(|&(n, m)| n.max(m)).max().unwrap_or(0)
    }

    /// Whether the edges connect all `joints` joints into one component.
    pub fn is_connected(&self, joints: usize) -> bool {
        if joints == 0 || self.max_joint_index() >= joints {
            return false;
        }
        let mut seen = vec![false; joints];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(n, m) in &self.edges {
                for (a, b) in [(n, m), (m, n)] {
                    if a == v && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Target normalized bone lengths with an observation noise scale. The
/// noise scale folds into the bone term weight as `1/σ_b²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BonePrior {
    target: Vec<f64>,
    sigma_b: f64,
}

impl BonePrior {
    /// Normalizes `target` to mean one, as the scale-invariant bone-length
    /// definition requires.
    pub fn new(target: Vec<f64>, sigma_b: f64) -> Result<Self, ObjectiveError> {
        if target.is_empty() {
            return Err(ObjectiveError::EmptySkeleton);
        }
        if sigma_b <= 0.0 || !sigma_b.is_finite() {
            return Err(ObjectiveError::ShapeMismatch(format!(
                "bone prior sigma must be positive and finite, got {sigma_b}"
            )));
        }
        let mean = target.iter().sum::<f64>() / target.len() as f64;
        if mean <= 0.0 {
            return Err(ObjectiveError::ShapeMismatch(
                "bone prior target must have positive mean".into(),
            ));
        }
        Ok(Self {
            target: target.into_iter().map(|t| t / mean).collect(),
            sigma_b,
        })
    }

    /// Reads the target straight off a reference pose.
    pub fn from_pose(
        pose: &Pose3D,
        skeleton: &Skeleton,
        sigma_b: f64,
    ) -> Result<Self, ObjectiveError> {
        Self::new(bone_lengths_normalized(pose, skeleton)?, sigma_b)
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn sigma_b(&self) -> f64 {
        self.sigma_b
    }
}

/// Weights of the teacher penalty plus the reference solution it pulls
/// toward (typically an iterative-refinement result).
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLossConfig {
    pub lambda_pose: f64,
    pub lambda_shift: f64,
    pub lambda_rotation: f64,
    pub lambda_scale: f64,
    pub reference: SolutionState,
}

/// The full unknown of the problem: one pose plus one camera per view,
/// with camera 0 frozen to the gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pose: Pose3D,
    cameras: Vec<WeakCamera>,
}

impl SolutionState {
    pub fn new(pose: Pose3D, cameras: Vec<WeakCamera>) -> Result<Self, ObjectiveError> {
        if cameras.is_empty() {
            return Err(ObjectiveError::ShapeMismatch("no cameras".into()));
        }
        if !cameras[0].is_gauge(1e-9) {
            return Err(ObjectiveError::GaugeViolation);
        }
        Ok(Self { pose, cameras })
    }

    pub fn pose(&self) -> &Pose3D {
        &self.pose
    }

    pub fn cameras(&self) -> &[WeakCamera] {
        &self.cameras
    }

    pub fn joint_count(&self) -> usize {
        self.pose.joint_count()
    }

    pub fn camera_count(&self) -> usize {
        self.cameras.len()
    }

    /// Length of the flattened optimization vector (camera 0 excluded).
    pub fn param_count(&self) -> usize {
        param_count(self.joint_count(), self.camera_count())
    }

    /// Flattens into `[pose | camera 1 | camera 2 | ...]`; camera 0 is the
    /// gauge and carries no parameters.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = self.pose.flat();
        for cam in &self.cameras[1..] {
            out.extend_from_slice(&cam.rot.flat());
            out.extend_from_slice(&[cam.shift.x, cam.shift.y, cam.log_scale]);
        }
        out
    }

    /// Rebuilds a state of the same shape from a flattened vector,
    /// re-validating every camera rotation.
    pub fn with_params(&self, params: &[f64]) -> Result<SolutionState, GeometryError> {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let joints = self.joint_count();
        let pose = Pose3D::from_flat(&params[..3 * joints])?;
        let mut cameras = vec![WeakCamera::identity()];
        for chunk in params[3 * joints..].chunks_exact(9) {
            let rot = Rot6D::new(
                Vec3::new(chunk[0], chunk[1], chunk[2]),
                Vec3::new(chunk[3], chunk[4], chunk[5]),
            );
            rot.matrix()?;
            cameras.push(WeakCamera {
                rot,
                shift: Vec2::new(chunk[6], chunk[7]),
                log_scale: chunk[8],
            });
        }
        Ok(SolutionState { pose, cameras })
    }
}

pub fn param_count(joints: usize, cameras: usize) -> usize {
    3 * joints + 9 * cameras.saturating_sub(1)
}

/// Per-view, per-joint heatmap mixtures, indexed `[camera][joint]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMixtures {
    mixtures: Vec<Vec<GaussianMixture2D>>,
}

impl SceneMixtures {
    pub fn new(mixtures: Vec<Vec<GaussianMixture2D>>) -> Result<Self, ObjectiveError> {
        let joints = mixtures
            .first()
            .ok_or_else(|| ObjectiveError::ShapeMismatch("no cameras in mixtures".into()))?
            .len();
        if joints == 0 {
            return Err(ObjectiveError::ShapeMismatch("no joints in mixtures".into()));
        }
        if mixtures.iter().any(|view| view.len() != joints) {
            return Err(ObjectiveError::ShapeMismatch(
                "ragged per-camera mixture lists".into(),
            ));
        }
        Ok(Self { mixtures })
    }

    pub fn camera_count(&self) -> usize {
        self.mixtures.len()
    }

    pub fn joint_count(&self) -> usize {
        self.mixtures[0].len()
    }

    pub fn view(&self, camera: usize) -> &[GaussianMixture2D] {
        &self.mixtures[camera]
    }

    pub fn get(&self, camera: usize, joint: usize) -> &GaussianMixture2D {
        &self.mixtures[camera][joint]
    }

    pub fn views(&self) -> &[Vec<GaussianMixture2D>] {
        &self.mixtures
    }

    /// Keeps only the first `k` cameras.
    pub fn truncated(&self, k: usize) -> SceneMixtures {
        SceneMixtures {
            mixtures: self.mixtures[..k.min(self.mixtures.len())].to_vec(),
        }
    }
}

/// Negative log-likelihood of the bundle-adjustment model: each joint
/// projected into each camera, scored under that view's mixture.
///
/// Shape precondition: mixtures are `C×J` for the state's `C` cameras and
/// `J` joints.
pub fn ba_neg_log_likelihood(state: &SolutionState, mixtures: &SceneMixtures) -> f64 {
    assert_eq!(mixtures.camera_count(), state.camera_count(), "camera count");
    assert_eq!(mixtures.joint_count(), state.joint_count(), "joint count");
    let mut total = 0.0;
    for (cam, view) in state.cameras().iter().zip(mixtures.views()) {
        let projected = crate::geometry::project_pose(state.pose(), cam);
        for (point, mixture) in projected.points().iter().zip(view) {
            total -= crate::mixtures::log_prob(mixture, point);
        }
    }
    total
}

/// Sum of squared 2D residuals between the state's projections and
/// ground-truth keypoints, over all cameras and joints.
pub fn reprojection_loss(state: &SolutionState, gt: &[Keypoints2D]) -> f64 {
    assert_eq!(gt.len(), state.camera_count(), "camera count");
    let mut total = 0.0;
    for (cam, kps) in state.cameras().iter().zip(gt) {
        assert_eq!(kps.len(), state.joint_count(), "joint count");
        let projected = crate::geometry::project_pose(state.pose(), cam);
        for (p, g) in projected.points().iter().zip(kps.points()) {
            total += (p - g).norm_squared();
        }
    }
    total
}

/// Per-edge bone lengths divided by their mean, so the result is invariant
/// to global similarity transforms of the pose and averages to one.
pub fn bone_lengths_normalized(
    pose: &Pose3D,
    skeleton: &Skeleton,
) -> Result<Vec<f64>, ObjectiveError> {
    if skeleton.max_joint_index() >= pose.joint_count() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "skeleton references joint {} but pose has {}",
            skeleton.max_joint_index(),
            pose.joint_count()
        )));
    }
    let joints = pose.joints();
    let lengths: Vec<f64> = skeleton
        .edges()
        .iter()
        .map(|&(n, m)| (joints[n] - joints[m]).norm())
        .collect();
    let total: f64 = lengths.iter().sum();
    let tol = crate::geometry::degeneracy_tolerance(pose.joint_count());
    if total < tol {
        return Err(GeometryError::DegeneratePose { norm: total, tol }.into());
    }
    let mean = total / lengths.len() as f64;
    Ok(lengths.into_iter().map(|l| l / mean).collect())
}

/// Squared distance between the pose's normalized bone lengths and the
/// prior target.
pub fn bone_loss(
    pose: &Pose3D,
    prior: &BonePrior,
    skeleton: &Skeleton,
) -> Result<f64, ObjectiveError> {
    let lengths = bone_lengths_normalized(pose, skeleton)?;
    if lengths.len() != prior.target().len() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "{} bones vs {} prior targets",
            lengths.len(),
            prior.target().len()
        )));
    }
    Ok(lengths
        .iter()
        .zip(prior.target())
        .map(|(l, t)| (l - t) * (l - t))
        .sum())
}

/// Penalty pulling a solution toward a reference:
/// `λ_p‖J−J_ref‖² + λ_t Σ‖t−t_ref‖² + λ_R Σ‖RᵀR_ref − I‖² + λ_s Σ(log s − log s_ref)²`.
pub fn teacher_loss(state: &SolutionState, cfg: &TeacherLossConfig) -> f64 {
    assert_eq!(
        cfg.reference.joint_count(),
        state.joint_count(),
        "joint count"
    );
    assert_eq!(
        cfg.reference.camera_count(),
        state.camera_count(),
        "camera count"
    );
    let mut total = 0.0;
    if cfg.lambda_pose != 0.0 {
        total += cfg.lambda_pose
            * state
                .pose()
                .joints()
                .iter()
                .zip(cfg.reference.pose().joints())
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>();
    }
    for (cam, cam_ref) in state.cameras().iter().zip(cfg.reference.cameras()) {
        if cfg.lambda_shift != 0.0 {
            total += cfg.lambda_shift * (cam.shift - cam_ref.shift).norm_squared();
        }
        if cfg.lambda_scale != 0.0 {
            let d = cam.log_scale - cam_ref.log_scale;
            total += cfg.lambda_scale * d * d;
        }
        if cfg.lambda_rotation != 0.0 {
            let r = cam.rotation().expect("valid rotation");
            let r_ref = cam_ref.rotation().expect("valid rotation");
            let a = r.transpose() * r_ref - Mat3::identity();
            total += cfg.lambda_rotation * a.iter().map(|v| v * v).sum::<f64>();
        }
    }
    total
}

/// Relative weights of the summed terms. The bone term is additionally
/// divided by the prior's `σ_b²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub reprojection: f64,
    pub ba: f64,
    pub bone: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            reprojection: 1.0,
            ba: 1.0,
            bone: 1.0,
        }
    }
}

/// A weighted sum of the active loss terms, evaluable with or without its
/// gradient over the flattened state vector.
#[derive(Debug, Clone, Default)]
pub struct Objective<'a> {
    mixtures: Option<&'a SceneMixtures>,
    keypoints: Option<&'a [Keypoints2D]>,
    bone: Option<(&'a Skeleton, &'a BonePrior)>,
    teacher: Option<&'a TeacherLossConfig>,
    weights: TermWeights,
}

impl<'a> Objective<'a> {
    pub fn new() -> Self {
        Self {
            mixtures: None,
            keypoints: None,
            bone: None,
            teacher: None,
            weights: TermWeights::default(),
        }
    }

    pub fn with_ba(mut self, mixtures: &'a SceneMixtures) -> Self {
        self.mixtures = Some(mixtures);
        self
    }

    pub fn with_reprojection(mut self, keypoints: &'a [Keypoints2D]) -> Self {
        self.keypoints = Some(keypoints);
        self
    }

    pub fn with_bone(mut self, skeleton: &'a Skeleton, prior: &'a BonePrior) -> Self {
        self.bone = Some((skeleton, prior));
        self
    }

    pub fn with_teacher(mut self, teacher: &'a TeacherLossConfig) -> Self {
        self.teacher = Some(teacher);
        self
    }

    pub fn with_weights(mut self, weights: TermWeights) -> Self {
        self.weights = weights;
        self
    }

    /// Checks every configured term against the state's shape.
    pub fn validate(&self, state: &SolutionState) -> Result<(), ObjectiveError> {
        let (joints, cameras) = (state.joint_count(), state.camera_count());
        if self.mixtures.is_none()
            && self.keypoints.is_none()
            && self.bone.is_none()
            && self.teacher.is_none()
        {
            return Err(ObjectiveError::NoActiveTerms);
        }
        if let Some(m) = self.mixtures {
            if m.camera_count() != cameras || m.joint_count() != joints {
                return Err(ObjectiveError::ShapeMismatch(format!(
                    "mixtures are {}x{}, state is {}x{}",
                    m.camera_count(),
                    m.joint_count(),
                    cameras,
                    joints
                )));
            }
        }
        if let Some(k) = self.keypoints {
            if k.len() != cameras || k.iter().any(|kp| kp.len() != joints) {
                return Err(ObjectiveError::ShapeMismatch(
                    "keypoints do not match state shape".into(),
                ));
            }
        }
        if let Some((skeleton, prior)) = self.bone {
            if skeleton.max_joint_index() >= joints {
                return Err(ObjectiveError::ShapeMismatch(
                    "skeleton references missing joints".into(),
                ));
            }
            if prior.target().len() != skeleton.edge_count() {
                return Err(ObjectiveError::ShapeMismatch(
                    "bone prior does not match skeleton".into(),
                ));
            }
        }
        if let Some(t) = self.teacher {
            if t.reference.joint_count() != joints || t.reference.camera_count() != cameras {
                return Err(ObjectiveError::ShapeMismatch(
                    "teacher reference does not match state shape".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn value(&self, state: &SolutionState) -> Result<f64, ObjectiveError> {
        Ok(self.eval(state, false)?.0)
    }

    pub fn gradient(&self, state: &SolutionState) -> Result<Vec<f64>, ObjectiveError> {
        Ok(self.eval(state, true)?.1.expect("gradient requested"))
    }

    pub fn value_and_gradient(
        &self,
        state: &SolutionState,
    ) -> Result<(f64, Vec<f64>), ObjectiveError> {
        let (value, grad) = self.eval(state, true)?;
        Ok((value, grad.expect("gradient requested")))
    }

    fn eval(
        &self,
        state: &SolutionState,
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>), ObjectiveError> {
        self.validate(state)?;
        let joints = state.joint_count();
        let cameras = state.camera_count();
        let pose = state.pose().joints();

        let mut value = 0.0;
        let mut grad = vec![0.0; state.param_count()];
        // Accumulated dL/dR per non-gauge camera; pushed through the 6D
        // parameterization once at the end.
        let mut rot_grads = vec![Mat3::zeros(); cameras];

        let frames: Result<Vec<(Mat3, f64)>, GeometryError> = state
            .cameras()
            .iter()
            .map(|c| Ok((c.rotation()?, c.scale())))
            .collect();
        let frames = frames?;

        // Projection-based terms share one pass over (camera, joint).
        if self.mixtures.is_some() || self.keypoints.is_some() {
            for (c, (cam, (rotation, scale))) in
                state.cameras().iter().zip(&frames).enumerate()
            {
                for (j, joint) in pose.iter().enumerate() {
                    let rotated = rotation * joint;
                    let projected =
                        *scale * Vec2::new(rotated.x, rotated.y) + cam.shift;

                    let mut point_grad = Vec2::zeros();
                    if let Some(kps) = self.keypoints {
                        let residual = projected - kps[c].points()[j];
                        value += self.weights.reprojection * residual.norm_squared();
                        if with_grad {
                            point_grad += 2.0 * self.weights.reprojection * residual;
                        }
                    }
                    if let Some(mixtures) = self.mixtures {
                        let (lp, dlp) = log_prob_and_grad(mixtures.get(c, j), &projected);
                        value -= self.weights.ba * lp;
                        if with_grad {
                            point_grad -= self.weights.ba * dlp;
                        }
                    }

                    if with_grad && point_grad != Vec2::zeros() {
                        // Pose: dk/dj = s · R[0..2,:]
                        let gj = *scale
                            * (point_grad.x * rotation.row(0).transpose()
                                + point_grad.y * rotation.row(1).transpose());
                        grad[3 * j] += gj.x;
                        grad[3 * j + 1] += gj.y;
                        grad[3 * j + 2] += gj.z;
                        if c > 0 {
                            let base = 3 * joints + 9 * (c - 1);
                            // Shift: dk/dt = I.
                            grad[base + 6] += point_grad.x;
                            grad[base + 7] += point_grad.y;
                            // Log-scale: dk/d(log s) = s · (R j)_xy.
                            grad[base + 8] += *scale
                                * (point_grad.x * rotated.x + point_grad.y * rotated.y);
                            // Rotation rows 0 and 1: dk_a/dR[a,:] = s · jᵀ.
                            let g = &mut rot_grads[c];
                            for col in 0..3 {
                                g[(0, col)] += *scale * point_grad.x * joint[col];
                                g[(1, col)] += *scale * point_grad.y * joint[col];
                            }
                        }
                    }
                }
            }
        }

        if let Some((skeleton, prior)) = self.bone {
            let weight = self.weights.bone / (prior.sigma_b() * prior.sigma_b());
            let edges = skeleton.edges();
            let lengths: Vec<f64> = edges
                .iter()
                .map(|&(n, m)| (pose[n] - pose[m]).norm())
                .collect();
            let total: f64 = lengths.iter().sum();
            let tol = crate::geometry::degeneracy_tolerance(joints);
            if total < tol {
                return Err(GeometryError::DegeneratePose { norm: total, tol }.into());
            }
            let mean = total / lengths.len() as f64;
            let normalized: Vec<f64> = lengths.iter().map(|l| l / mean).collect();
            let residuals: Vec<f64> = normalized
                .iter()
                .zip(prior.target())
                .map(|(l, t)| l - t)
                .collect();
            value += weight * residuals.iter().map(|r| r * r).sum::<f64>();

            if with_grad {
                // d/db_f of Σ (b/mean − target)²: the mean couples all edges.
                let coupling = residuals
                    .iter()
                    .zip(&normalized)
                    .map(|(r, n)| r * n)
                    .sum::<f64>()
                    / edges.len() as f64;
                for ((&(n, m), length), residual) in
                    edges.iter().zip(&lengths).zip(&residuals)
                {
                    if *length < tol {
                        continue;
                    }
                    let dl_db = weight * 2.0 / mean * (residual - coupling);
                    let direction = (pose[n] - pose[m]) / *length;
                    for axis in 0..3 {
                        grad[3 * n + axis] += dl_db * direction[axis];
                        grad[3 * m + axis] -= dl_db * direction[axis];
                    }
                }
            }
        }

        if let Some(teacher) = self.teacher {
            let reference = &teacher.reference;
            if teacher.lambda_pose != 0.0 {
                for (j, (a, b)) in pose
                    .iter()
                    .zip(reference.pose().joints())
                    .enumerate()
                {
                    let d = a - b;
                    value += teacher.lambda_pose * d.norm_squared();
                    if with_grad {
                        for axis in 0..3 {
                            grad[3 * j + axis] += 2.0 * teacher.lambda_pose * d[axis];
                        }
                    }
                }
            }
            for (c, (cam, cam_ref)) in state
                .cameras()
                .iter()
                .zip(reference.cameras())
                .enumerate()
            {
                if teacher.lambda_shift != 0.0 {
                    let d = cam.shift - cam_ref.shift;
                    value += teacher.lambda_shift * d.norm_squared();
                    if with_grad && c > 0 {
                        let base = 3 * joints + 9 * (c - 1);
                        grad[base + 6] += 2.0 * teacher.lambda_shift * d.x;
                        grad[base + 7] += 2.0 * teacher.lambda_shift * d.y;
                    }
                }
                if teacher.lambda_scale != 0.0 {
                    let d = cam.log_scale - cam_ref.log_scale;
                    value += teacher.lambda_scale * d * d;
                    if with_grad && c > 0 {
                        let base = 3 * joints + 9 * (c - 1);
                        grad[base + 8] += 2.0 * teacher.lambda_scale * d;
                    }
                }
                if teacher.lambda_rotation != 0.0 {
                    let r = frames[c].0;
                    let r_ref = cam_ref.rotation()?;
                    let a = r.transpose() * r_ref - Mat3::identity();
                    value += teacher.lambda_rotation * a.iter().map(|v| v * v).sum::<f64>();
                    if with_grad && c > 0 {
                        // d‖RᵀR_ref − I‖² / dR = 2 R_ref (R_refᵀ R − I)
                        rot_grads[c] += 2.0
                            * teacher.lambda_rotation
                            * (r_ref * (r_ref.transpose() * r - Mat3::identity()));
                    }
                }
            }
        }

        if with_grad {
            for c in 1..cameras {
                if rot_grads[c] != Mat3::zeros() {
                    let (gx, gy) = rot6d_backward(&state.cameras()[c].rot, &rot_grads[c]);
                    let base = 3 * joints + 9 * (c - 1);
                    for axis in 0..3 {
                        grad[base + axis] += gx[axis];
                        grad[base + 3 + axis] += gy[axis];
                    }
                }
            }
            Ok((value, Some(grad)))
        } else {
            Ok((value, None))
        }
    }
}

/// Pulls a gradient with respect to the rotation matrix rows back onto the
/// raw 6D parameters, through the Gram-Schmidt orthonormalization
/// `rows = [n(x), n(x×y), n(x×(x×y))]`.
pub(crate) fn rot6d_backward(rot: &Rot6D, row_grads: &Mat3) -> (Vec3, Vec3) {
    let x = rot.x;
    let y = rot.y;
    let v = x.cross(&y);
    let w = x.cross(&v);

    let g0 = row_grads.row(0).transpose();
    let g1 = row_grads.row(1).transpose();
    let g2 = row_grads.row(2).transpose();

    // d n(v)/dv pullback: (g − n (n·g)) / ‖v‖.
    let normalize_back = |raw: Vec3, g: Vec3| -> Vec3 {
        let norm = raw.norm();
        let unit = raw / norm;
        (g - unit * unit.dot(&g)) / norm
    };

    let gw = normalize_back(w, g2);
    // w = x × v contributes v × gw to dL/dx and gw × x to dL/dv.
    let gv = normalize_back(v, g1) + gw.cross(&x);
    // v = x × y contributes y × gv to dL/dx and gv × x to dL/dy.
    let gx = normalize_back(x, g0) + v.cross(&gw) + y.cross(&gv);
    let gy = gv.cross(&x);
    (gx, gy)
}
