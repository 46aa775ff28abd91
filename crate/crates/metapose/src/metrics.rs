//! Pose and reprojection error metrics.
//!
//! All multi-view reconstructions here are defined up to a similarity
//! transform (gauge freedom), so raw coordinate error is meaningless.
//! [`pmpjpe`] removes an optimal rotation+scale+shift before measuring,
//! [`nmpjpe`] removes only scale+shift and therefore stays sensitive to
//! orientation error.
//!
//! Both report the root-mean-square per-joint distance after alignment.
//! The alignments minimize exactly that quantity over their transform
//! classes, and scale-plus-shift transforms are a subset of similarities,
//! so `pmpjpe(a, b) <= nmpjpe(a, b)` holds for every input pair.

use crate::geometry::{GeometryError, Keypoints2D, Mat3, Pose3D, Vec3};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pmpjpe: f64,
    pub nmpjpe: f64,
    pub mse2d: f64,
    /// Solver wall time in seconds.
    pub wall_time: f64,
}

fn check_joint_counts(pred: &Pose3D, gt: &Pose3D) -> Result<(), GeometryError> {
    if pred.joint_count() != gt.joint_count() {
        return Err(GeometryError::JointCountMismatch(
            pred.joint_count(),
            gt.joint_count(),
        ));
    }
    Ok(())
}

/// Procrustes-aligned per-joint position error: the optimal similarity
/// (proper rotation, uniform scale, translation) maps `pred` onto `gt`
/// before the per-joint RMS distance is taken. Reported in `gt` units.
pub fn pmpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64, GeometryError> {
    check_joint_counts(pred, gt)?;
    let tol = crate::geometry::degeneracy_tolerance(pred.joint_count());
    let pred_norm = pred.centered_norm();
    if pred_norm < tol {
        return Err(GeometryError::DegeneratePose {
            norm: pred_norm,
            tol,
        });
    }

    let p = pred.centered();
    let g = gt.centered();
    let mut k = Mat3::zeros();
    for (pj, gj) in p.iter().zip(&g) {
        k += pj * gj.transpose();
    }
    let svd = nalgebra::SVD::new(k, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::AlignmentFailed),
    };
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let rotation = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, sign)) * u.transpose();

    let trace = p
        .iter()
        .zip(&g)
        .map(|(pj, gj)| gj.dot(&(rotation * pj)))
        .sum::<f64>();
    let scale = trace / (pred_norm * pred_norm);

    let error = (p
        .iter()
        .zip(&g)
        .map(|(pj, gj)| (scale * (rotation * pj) - gj).norm_squared())
        .sum::<f64>()
        / p.len() as f64)
        .sqrt();
    Ok(error)
}

/// Normalized per-joint position error: only the least-squares optimal
/// scalar scale and 3D shift are removed, so orientation errors count.
///
/// The scale is constrained to be non-negative, matching the
/// reflection-free transform class of [`pmpjpe`]; a negative least-squares
/// scale would mirror the prediction through its centroid.
pub fn nmpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64, GeometryError> {
    check_joint_counts(pred, gt)?;
    let tol = crate::geometry::degeneracy_tolerance(pred.joint_count());
    let pred_norm = pred.centered_norm();
    if pred_norm < tol {
        return Err(GeometryError::DegeneratePose {
            norm: pred_norm,
            tol,
        });
    }
    let p = pred.centered();
    let g = gt.centered();
    let scale = (p.iter().zip(&g).map(|(pj, gj)| pj.dot(gj)).sum::<f64>()
        / (pred_norm * pred_norm))
        .max(0.0);
    let error = (p
        .iter()
        .zip(&g)
        .map(|(pj, gj)| (scale * pj - gj).norm_squared())
        .sum::<f64>()
        / p.len() as f64)
        .sqrt();
    Ok(error)
}

/// Mean squared 2D error over all cameras and joints, in normalized image
/// coordinates (per-point squared L2, averaged over every point).
pub fn mse2d(pred: &[Keypoints2D], gt: &[Keypoints2D]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} vs {} cameras",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (cam_idx, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "camera {cam_idx}: {} vs {} joints",
                p.len(),
                g.len()
            )));
        }
        for (pp, gg) in p.points().iter().zip(g.points()) {
            total += (pp - gg).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::ShapeMismatch("no keypoints".into()));
    }
    Ok(total / count as f64)
}
