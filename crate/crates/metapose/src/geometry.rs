//! Weak-perspective camera model, 6D rotation parameterization, and the
//! closed-form rigid-alignment initializer.
//!
//! # Conventions
//!
//! Rotations are right-handed 3×3 matrices whose *rows* form an orthonormal
//! basis; a camera rotation maps world coordinates into the camera frame.
//! The weak-perspective projection of a 3D point `j` through a camera
//! `(R, t, s)` is
//!
//! ```text
//! π(j) = s · (R · j)_xy + t
//! ```
//!
//! i.e. rotate, drop the third coordinate, scale uniformly, shift in the
//! image plane. 2D quantities live in normalized image coordinates where a
//! typical pose spans roughly the unit square.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Guard for nearly-parallel basis vectors in a [`Rot6D`]: `‖x‖` and
/// `‖x × y‖` must both exceed this.
pub const TAU_PARALLEL: f64 = 1e-8;

/// Degeneracy guard for poses: a centered norm below this is rejected.
pub fn degeneracy_tolerance(joints: usize) -> f64 {
    1e-10 * joints as f64
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate 6d rotation: |x| = {x_norm:.3e}, |x × y| = {cross_norm:.3e}")]
    DegenerateRotation { x_norm: f64, cross_norm: f64 },
    #[error("not a rotation matrix: orthogonality residual {ortho:.3e}, det {det:.6}")]
    NotARotation { ortho: f64, det: f64 },
    #[error("degenerate pose: centered norm {norm:.3e} below tolerance {tol:.3e}")]
    DegeneratePose { norm: f64, tol: f64 },
    #[error("rigid alignment failed: SVD did not converge")]
    AlignmentFailed,
    #[error("pose needs at least 3 joints, got {0}")]
    TooFewJoints(usize),
    #[error("non-finite coordinate in input")]
    NonFinite,
    #[error("joint counts differ: {0} vs {1}")]
    JointCountMismatch(usize, usize),
    #[error("at least one camera estimate is required")]
    NoCameras,
}

/// 3D joint positions of one body, in any consistent length unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    joints: Vec<Vec3>,
}

impl Pose3D {
    pub fn new(joints: Vec<Vec3>) -> Result<Self, GeometryError> {
        if joints.len() < 3 {
            return Err(GeometryError::TooFewJoints(joints.len()));
        }
        if joints.iter().any(|j| !j.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { joints })
    }

    /// Rebuilds a pose from `3J` flattened coordinates `[x0, y0, z0, x1, ...]`.
    pub fn from_flat(values: &[f64]) -> Result<Self, GeometryError> {
        assert_eq!(values.len() % 3, 0, "flattened pose length must be 3J");
        Self::new(
            values
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn joints(&self) -> &[Vec3] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn centroid(&self) -> Vec3 {
        self.joints.iter().sum::<Vec3>() / self.joints.len() as f64
    }

    /// Per-joint coordinates with the centroid subtracted.
    pub fn centered(&self) -> Vec<Vec3> {
        let c = self.centroid();
        self.joints.iter().map(|j| j - c).collect()
    }

    /// Frobenius norm of the centered pose.
    pub fn centered_norm(&self) -> f64 {
        self.centered().iter().map(|j| j.norm_squared()).sum::<f64>().sqrt()
    }

    /// Applies `f` to every joint. The transform must keep coordinates finite.
    pub fn transformed<F: Fn(&Vec3) -> Vec3>(&self, f: F) -> Pose3D {
        Pose3D {
            joints: self.joints.iter().map(f).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j.x, j.y, j.z]).collect()
    }
}

/// The six raw parameters of a rotation: two 3-vectors that are
/// orthonormalized on use. Continuous in the parameters, hence well suited
/// to gradient-based updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub x: Vec3,
    pub y: Vec3,
}

impl Rot6D {
    pub fn new(x: Vec3, y: Vec3) -> Self {
        Self { x, y }
    }

    /// The canonical parameters of the identity rotation,
    /// `matrix_to_rot6d(I)`.
    pub fn identity() -> Self {
        Self {
            x: Vec3::new(1.0, 0.0, 0.0),
            y: Vec3::new(0.0, 0.0, -1.0),
        }
    }

    /// See [`rot6d_to_matrix`].
    pub fn matrix(&self) -> Result<Mat3, GeometryError> {
        rot6d_to_matrix(self)
    }

    /// See [`matrix_to_rot6d`].
    pub fn from_matrix(m: &Mat3) -> Result<Self, GeometryError> {
        matrix_to_rot6d(m)
    }

    pub fn flat(&self) -> [f64; 6] {
        [self.x.x, self.x.y, self.x.z, self.y.x, self.y.y, self.y.z]
    }
}

/// Orthonormalizes the 6 raw parameters into a rotation matrix with rows
/// `[n(x), n(x×y), n(x×(x×y))]`, where `n` normalizes to unit length.
///
/// The rows always form a right-handed orthonormal basis (det +1), for any
/// input that passes the parallel-vector guard.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Mat3, GeometryError> {
    let x_norm = r.x.norm();
    let cross = r.x.cross(&r.y);
    let cross_norm = cross.norm();
    if x_norm < TAU_PARALLEL || cross_norm < TAU_PARALLEL {
        return Err(GeometryError::DegenerateRotation { x_norm, cross_norm });
    }
    let row0 = r.x / x_norm;
    let row1 = cross / cross_norm;
    // x × (x × y) is already orthogonal to the first two rows; its norm is
    // x_norm * cross_norm, nonzero by the guard above.
    let second = r.x.cross(&cross);
    let row2 = second / second.norm();
    Ok(Mat3::from_rows(&[
        row0.transpose(),
        row1.transpose(),
        row2.transpose(),
    ]))
}

/// Inverse of [`rot6d_to_matrix`]: recovers 6 raw parameters whose
/// orthonormalization reproduces `m` exactly (up to roundoff).
///
/// Uses `x = row0` and `y = row1 × row0`, so that `x × y = row1`.
pub fn matrix_to_rot6d(m: &Mat3) -> Result<Rot6D, GeometryError> {
    let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
    let det = m.determinant();
    if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 {
        return Err(GeometryError::NotARotation { ortho, det });
    }
    let row0 = Vec3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let row1 = Vec3::new(m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    Ok(Rot6D::new(row0, row1.cross(&row0)))
}

/// Weak-perspective camera: rotation (6D raw form), image-plane shift, and
/// uniform scale stored as its logarithm so any additive update keeps the
/// scale positive.
///
/// Invariant: the 6D parameters orthonormalize to a valid rotation. All
/// library paths that mutate a camera re-validate this; [`project`] assumes
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakCamera {
    pub rot: Rot6D,
    pub shift: Vec2,
    pub log_scale: f64,
}

impl WeakCamera {
    /// The fixed gauge camera `(I, 0, s=1)`.
    pub fn identity() -> Self {
        Self {
            rot: Rot6D::identity(),
            shift: Vec2::zeros(),
            log_scale: 0.0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn rotation(&self) -> Result<Mat3, GeometryError> {
        self.rot.matrix()
    }

    /// Whether this camera equals the gauge `(I, 0, 1)` within `tol`.
    pub fn is_gauge(&self, tol: f64) -> bool {
        match self.rotation() {
            Ok(r) => {
                (r - Mat3::identity()).abs().max() <= tol
                    && self.shift.norm() <= tol
                    && self.log_scale.abs() <= tol
            }
            Err(_) => false,
        }
    }
}

/// 2D keypoints of one view, in normalized image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints2D {
    points: Vec<Vec2>,
}

impl Keypoints2D {
    pub fn new(points: Vec<Vec2>) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rough single-view 3D estimate in one camera's frame: the first two
/// coordinates are normalized image coordinates of each joint, the third is
/// a relative depth re-centered to zero mean on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MonocularEstimate {
    pose: Pose3D,
}

impl MonocularEstimate {
    pub fn new(pose: Pose3D) -> Self {
        let mean_depth =
            pose.joints().iter().map(|j| j.z).sum::<f64>() / pose.joint_count() as f64;
        Self {
            pose: pose.transformed(|j| Vec3::new(j.x, j.y, j.z - mean_depth)),
        }
    }

    pub fn pose(&self) -> &Pose3D {
        &self.pose
    }
}

/// Projects one 3D point: `s · (R · j)_xy + t`.
///
/// Panics if the camera's rotation parameters are degenerate; see the
/// [`WeakCamera`] invariant.
pub fn project(joint: &Vec3, camera: &WeakCamera) -> Vec2 {
    let r = camera.rotation().expect("WeakCamera holds a valid rotation");
    let rotated = r * joint;
    camera.scale() * Vec2::new(rotated.x, rotated.y) + camera.shift
}

/// Projects every joint of a pose through one camera.
pub fn project_pose(pose: &Pose3D, camera: &WeakCamera) -> Keypoints2D {
    let r = camera.rotation().expect("WeakCamera holds a valid rotation");
    let s = camera.scale();
    Keypoints2D {
        points: pose
            .joints()
            .iter()
            .map(|j| {
                let rotated = r * j;
                s * Vec2::new(rotated.x, rotated.y) + camera.shift
            })
            .collect(),
    }
}

/// A similarity recovered by [`procrustes_align`]: `dst ≈ s·R·src + lift(t)`
/// where `lift` embeds the 2D shift as `(t_x, t_y, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rotation: Mat3,
    pub shift: Vec2,
    pub scale: f64,
}

/// Solves the orthogonal rigid alignment `dst ≈ s·R·src + lift(t)` in closed
/// form.
///
/// The rotation comes from the SVD of the cross-covariance of the
/// mean-centered poses, with the standard reflection correction (sign flip
/// of the smallest singular vector when the determinant would be negative).
/// Scale is the ratio of centered norms restricted to the first two (image)
/// coordinates, and the shift matches the first two coordinates of the
/// means.
pub fn procrustes_align(src: &Pose3D, dst: &Pose3D) -> Result<Alignment, GeometryError> {
    if src.joint_count() != dst.joint_count() {
        return Err(GeometryError::JointCountMismatch(
            src.joint_count(),
            dst.joint_count(),
        ));
    }
    let tol = degeneracy_tolerance(src.joint_count());
    for pose in [src, dst] {
        let norm = pose.centered_norm();
        if norm < tol {
            return Err(GeometryError::DegeneratePose { norm, tol });
        }
    }

    let src_centered = src.centered();
    let dst_centered = dst.centered();

    // K = Σ_j src_j · dst_jᵀ; maximizing tr(R·K) over rotations aligns
    // src onto dst.
    let mut k = Mat3::zeros();
    for (s, d) in src_centered.iter().zip(&dst_centered) {
        k += s * d.transpose();
    }
    let svd = nalgebra::SVD::new(k, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::AlignmentFailed),
    };
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, sign)) * u.transpose();

    let xy_norm = |points: &[Vec3]| -> f64 {
        points
            .iter()
            .map(|p| p.x * p.x + p.y * p.y)
            .sum::<f64>()
            .sqrt()
    };
    let rotated_src: Vec<Vec3> = src_centered.iter().map(|p| rotation * p).collect();
    let denom = xy_norm(&rotated_src);
    if denom < tol {
        return Err(GeometryError::DegeneratePose { norm: denom, tol });
    }
    let scale = xy_norm(&dst_centered) / denom;

    let src_mean_rotated = rotation * src.centroid();
    let dst_mean = dst.centroid();
    let shift = Vec2::new(
        dst_mean.x - scale * src_mean_rotated.x,
        dst_mean.y - scale * src_mean_rotated.y,
    );

    Ok(Alignment {
        rotation,
        shift,
        scale,
    })
}

/// Closed-form initialization of the joint pose and all cameras from
/// per-view monocular estimates.
///
/// Camera 0 is fixed to the gauge `(I, 0, 1)`. Every other camera is the
/// similarity aligning the first view's estimate onto that view's estimate.
/// The initial pose is the average of all estimates mapped back into the
/// first camera's frame.
pub fn stage1_init(
    estimates: &[MonocularEstimate],
) -> Result<(Pose3D, Vec<WeakCamera>), GeometryError> {
    let first = estimates.first().ok_or(GeometryError::NoCameras)?;
    let q0 = first.pose();
    let count = estimates.len() as f64;
    let mut cameras = vec![WeakCamera::identity()];
    // Camera 0 contributes its own centered estimate.
    let mut pose_sum = q0.centered();

    for estimate in &estimates[1..] {
        let align = procrustes_align(q0, estimate.pose())?;
        cameras.push(WeakCamera {
            rot: Rot6D::from_matrix(&align.rotation)?,
            shift: align.shift,
            log_scale: align.scale.ln(),
        });
        // Map this view's centered estimate back into frame 0.
        let r_inv = align.rotation.transpose();
        for (acc, point) in pose_sum.iter_mut().zip(estimate.pose().centered()) {
            *acc += r_inv * point / align.scale;
        }
    }

    let centroid = q0.centroid();
    let joints = pose_sum
        .into_iter()
        .map(|p| p / count + centroid)
        .collect();
    Ok((Pose3D::new(joints)?, cameras))
}

/// Samples a rotation uniformly at random by orthonormalizing two standard
/// normal 3-vectors.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    use rand_distr::StandardNormal;
    loop {
        let sample = |rng: &mut R| {
            Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            )
        };
        let r = Rot6D::new(sample(rng), sample(rng));
        if let Ok(m) = r.matrix() {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn max_abs(m: &Mat3) -> f64 {
        m.abs().max()
    }

    fn random_pose(rng: &mut ChaCha8Rng, joints: usize, spread: f64) -> Pose3D {
        let normal = Normal::new(0.0, spread).unwrap();
        Pose3D::new(
            (0..joints)
                .map(|_| {
                    Vec3::new(
                        normal.sample(rng),
                        normal.sample(rng),
                        normal.sample(rng),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rot6d_axis_aligned_case() {
        // Manual Gram-Schmidt: rows are n(x), n(x×y), n(x×(x×y)).
        let r = Rot6D::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let m = r.matrix().unwrap();
        let expected = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        assert_relative_eq!(m, expected, epsilon = 1e-15);
    }

    #[test]
    fn rot6d_scale_invariance() {
        let a = Rot6D::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let b = Rot6D::new(Vec3::new(5.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0));
        assert_relative_eq!(a.matrix().unwrap(), b.matrix().unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_orthonormality() {
        let r = Rot6D::new(Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 0.0, 0.0));
        let m = r.matrix().unwrap();
        assert!(max_abs(&(m.transpose() * m - Mat3::identity())) < 1e-12);
        assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rot6d_orthonormal_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..1000 {
            let r = Rot6D::new(
                Vec3::from_fn(|_, _| normal.sample(&mut rng)),
                Vec3::from_fn(|_, _| normal.sample(&mut rng)),
            );
            let m = r.matrix().unwrap();
            assert!(max_abs(&(m.transpose() * m - Mat3::identity())) < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rot6d_degenerate_inputs_rejected() {
        let parallel = Rot6D::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0));
        assert!(matches!(
            parallel.matrix(),
            Err(GeometryError::DegenerateRotation { .. })
        ));
        let zero = Rot6D::new(Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0));
        assert!(matches!(
            zero.matrix(),
            Err(GeometryError::DegenerateRotation { .. })
        ));
    }

    #[test]
    fn matrix_to_rot6d_identity_roundtrip() {
        let r = matrix_to_rot6d(&Mat3::identity()).unwrap();
        assert_relative_eq!(r.x, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(r.matrix().unwrap(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn matrix_to_rot6d_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = random_rotation(&mut rng);
            let back = matrix_to_rot6d(&m).unwrap().matrix().unwrap();
            assert!(max_abs(&(back - m)) < 1e-9);
        }
    }

    #[test]
    fn matrix_to_rot6d_rejects_reflection() {
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            matrix_to_rot6d(&reflection),
            Err(GeometryError::NotARotation { .. })
        ));
    }

    #[test]
    fn project_identity_camera() {
        let cam = WeakCamera {
            rot: Rot6D::identity(),
            shift: Vec2::new(10.0, 20.0),
            log_scale: 2.0_f64.ln(),
        };
        let p = project(&Vec3::new(1.0, 2.0, 3.0), &cam);
        assert_relative_eq!(p, Vec2::new(12.0, 24.0), epsilon = 1e-12);
    }

    #[test]
    fn project_origin_maps_to_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let cam = WeakCamera {
                rot: matrix_to_rot6d(&random_rotation(&mut rng)).unwrap(),
                shift: Vec2::new(0.3, 0.4),
                log_scale: rng.gen_range(-1.0..1.0),
            };
            let p = project(&Vec3::zeros(), &cam);
            assert_relative_eq!(p, Vec2::new(0.3, 0.4), epsilon = 1e-12);
        }
    }

    #[test]
    fn project_rotated_basis_vector() {
        // Right-handed rotation by 90° about the x axis maps (0,0,1) to
        // (0,-1,0), so the projection is (0,-1).
        let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let cam = WeakCamera {
            rot: matrix_to_rot6d(&rx).unwrap(),
            shift: Vec2::zeros(),
            log_scale: 0.0,
        };
        let p = project(&Vec3::new(0.0, 0.0, 1.0), &cam);
        assert_relative_eq!(p, Vec2::new(0.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn project_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cam = WeakCamera {
                rot: matrix_to_rot6d(&random_rotation(&mut rng)).unwrap(),
                shift: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                log_scale: rng.gen_range(-1.0..1.0),
            };
            let factor: f64 = rng.gen_range(0.1..3.0);
            let scaled = WeakCamera {
                log_scale: cam.log_scale + factor.ln(),
                ..cam.clone()
            };
            let j = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let base = project(&j, &cam);
            let got = project(&j, &scaled);
            let expected = factor * (base - cam.shift) + cam.shift;
            assert_relative_eq!(got, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn procrustes_identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng, 8, 1.0);
        let align = procrustes_align(&pose, &pose).unwrap();
        assert!(max_abs(&(align.rotation - Mat3::identity())) < 1e-9);
        assert_relative_eq!(align.scale, 1.0, epsilon = 1e-9);
        assert!(align.shift.norm() < 1e-9);
    }

    #[test]
    fn procrustes_recovers_constructed_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let src = random_pose(&mut rng, 10, 1.0);
            let rotation = random_rotation(&mut rng);
            let scale = 1.7;
            let shift = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dst = src.transformed(|j| {
                let r = scale * (rotation * j);
                Vec3::new(r.x + shift.x, r.y + shift.y, r.z)
            });
            let align = procrustes_align(&src, &dst).unwrap();
            assert!(max_abs(&(align.rotation - rotation)) < 1e-6);
            assert!((align.scale - scale).abs() < 1e-6);
            assert!((align.shift - shift).norm() < 1e-6);
        }
    }

    #[test]
    fn procrustes_rejects_coincident_joints() {
        let degenerate =
            Pose3D::new(vec![Vec3::new(1.0, 2.0, 3.0); 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let other = random_pose(&mut rng, 5, 1.0);
        assert!(matches!(
            procrustes_align(&degenerate, &other),
            Err(GeometryError::DegeneratePose { .. })
        ));
    }

    /// Builds per-view estimates by weak-projecting a ground-truth pose
    /// through each camera: normalized image coordinates plus a commensurate
    /// zero-mean depth, optionally noised.
    fn synthetic_estimates(
        gt: &Pose3D,
        cameras: &[WeakCamera],
        depth_noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<MonocularEstimate> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        cameras
            .iter()
            .map(|cam| {
                let r = cam.rotation().unwrap();
                let s = cam.scale();
                let joints = gt
                    .joints()
                    .iter()
                    .map(|j| {
                        let rotated = r * j;
                        Vec3::new(
                            s * rotated.x + cam.shift.x,
                            s * rotated.y + cam.shift.y,
                            s * rotated.z + depth_noise * normal.sample(rng),
                        )
                    })
                    .collect();
                MonocularEstimate::new(Pose3D::new(joints).unwrap())
            })
            .collect()
    }

    fn ring_cameras(rng: &mut ChaCha8Rng, count: usize) -> Vec<WeakCamera> {
        (0..count)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / count as f64
                    + rng.gen_range(-0.2..0.2);
                let axis_rot = Mat3::new(
                    angle.cos(),
                    -angle.sin(),
                    0.0,
                    angle.sin(),
                    angle.cos(),
                    0.0,
                    0.0,
                    0.0,
                    1.0,
                );
                WeakCamera {
                    rot: matrix_to_rot6d(&(axis_rot * random_rotation(rng))).unwrap(),
                    shift: Vec2::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
                    log_scale: rng.gen_range(-0.3..0.3),
                }
            })
            .collect()
    }

    #[test]
    fn stage1_single_camera_returns_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gt = random_pose(&mut rng, 6, 1.0);
        let estimates = synthetic_estimates(&gt, &[WeakCamera::identity()], 0.0, &mut rng);
        let (pose, cameras) = stage1_init(&estimates).unwrap();
        assert_eq!(cameras.len(), 1);
        assert!(cameras[0].is_gauge(1e-12));
        for (a, b) in pose.joints().iter().zip(estimates[0].pose().joints()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn stage1_noiseless_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gt = random_pose(&mut rng, 17, 1.0);
        let cameras = ring_cameras(&mut rng, 4);
        let estimates = synthetic_estimates(&gt, &cameras, 0.0, &mut rng);
        let (pose, init_cams) = stage1_init(&estimates).unwrap();

        // The initial pose reproduces the first view's estimate exactly, and
        // each initialized camera reprojects it onto that view's image
        // coordinates.
        for (a, b) in pose.joints().iter().zip(estimates[0].pose().joints()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
        for (cam, est) in init_cams.iter().zip(&estimates) {
            let projected = project_pose(&pose, cam);
            for (p, q) in projected.points().iter().zip(est.pose().joints()) {
                assert_relative_eq!(p.x, q.x, epsilon = 1e-9);
                assert_relative_eq!(p.y, q.y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn stage1_error_grows_with_depth_noise() {
        // Millimeter-scale example: pose spread ~1000 units, cameras near
        // unit scale, so depth noise levels 0/10/20 are small but visible.
        let mut totals = [0.0_f64; 3];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let gt = random_pose(&mut rng, 12, 1000.0);
            let cameras = ring_cameras(&mut rng, 4);
            for (slot, noise) in [0.0, 10.0, 20.0].iter().enumerate() {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(9000 + seed);
                let estimates = synthetic_estimates(&gt, &cameras, *noise, &mut noise_rng);
                let (pose, _) = stage1_init(&estimates).unwrap();
                totals[slot] += crate::metrics::pmpjpe(&pose, &gt).unwrap();
            }
        }
        assert!(totals[0] < 1e-6 * 50.0);
        assert!(totals[0] < totals[1]);
        assert!(totals[1] < totals[2]);
    }

    #[test]
    fn stage1_invariant_to_global_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let gt = random_pose(&mut rng, 9, 1.0);
        let cameras = ring_cameras(&mut rng, 3);
        let estimates = synthetic_estimates(&gt, &cameras, 0.0, &mut rng);
        let (pose_a, _) = stage1_init(&estimates).unwrap();

        // Move the whole scene: world pose and cameras change together, the
        // per-view estimates (and hence the init, up to the frame-0 gauge)
        // do not.
        let global = random_rotation(&mut rng);
        let offset = Vec3::new(0.4, -0.2, 0.9);
        let moved_gt = gt.transformed(|j| global * j + offset);
        let moved_cams: Vec<WeakCamera> = cameras
            .iter()
            .map(|cam| {
                let r = cam.rotation().unwrap() * global.transpose();
                let rotated_offset = r * offset;
                WeakCamera {
                    rot: matrix_to_rot6d(&r).unwrap(),
                    shift: cam.shift
                        - cam.scale() * Vec2::new(rotated_offset.x, rotated_offset.y),
                    log_scale: cam.log_scale,
                }
            })
            .collect();
        let moved_estimates = synthetic_estimates(&moved_gt, &moved_cams, 0.0, &mut rng);
        let (pose_b, _) = stage1_init(&moved_estimates).unwrap();

        let gap = crate::metrics::pmpjpe(&pose_a, &pose_b).unwrap();
        assert!(gap < 1e-9, "gauge-fixed inits differ by {gap}");
    }
}
