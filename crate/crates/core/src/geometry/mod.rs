//! Pinhole cameras, depth hypotheses and plane-sweep homographies.
//!
//! Poses map world to camera: `x_cam = R·x_world + t`.

mod camfile;
mod noise;
mod warp;

pub use camfile::{read_cam, write_cam, parse_cam, format_cam};
pub use noise::inject_pose_noise;
pub use warp::{warp_features, warp_volume, WarpedView};

use nalgebra::{Matrix3, Vector3};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(CoreError::invalid("intrinsics", format!("bad focal/center fx={fx} fy={fy} cx={cx} cy={cy}")));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Intrinsics of a feature map downsampled by `factor` with pixel `i`
    /// of the feature map centered on input pixel `factor·i`.
    pub fn downscaled(&self, factor: f64) -> Intrinsics {
        Intrinsics {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: self.cx / factor,
            cy: self.cy / factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-10 && (det - 1.0).abs() <= 1e-10) || !translation.iter().all(|v| v.is_finite()) {
            return Err(CoreError::invalid(
                "pose",
                format!("rotation not in SO(3): |RᵀR−I|={ortho:e}, det={det}"),
            ));
        }
        Ok(Pose { rotation, translation })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// `(R_rel, t_rel)` taking reference-camera points into this camera.
    pub fn relative_to(&self, reference: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotation * reference.rotation.transpose();
        (r, self.translation - r * reference.translation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypothesisSet {
    pub values: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
}

impl DepthHypothesisSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `d` planes uniform in inverse depth, `values[0] = d_min`,
/// `values[d-1] = d_max`.
pub fn build_hypotheses(d_min: f64, d_max: f64, d: usize) -> Result<DepthHypothesisSet> {
    if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
        return Err(CoreError::invalid("build_hypotheses", format!("need 0 < d_min < d_max, got {d_min}, {d_max}")));
    }
    if d < 2 {
        return Err(CoreError::invalid("build_hypotheses", format!("need at least 2 planes, got {d}")));
    }
    let (a, b) = (1.0 / d_min, 1.0 / d_max);
    let mut values: Vec<f64> = (0..d)
        .map(|i| {
            let s = i as f64 / (d - 1) as f64;
            1.0 / (a + (b - a) * s)
        })
        .collect();
    values[0] = d_min;
    values[d - 1] = d_max;
    Ok(DepthHypothesisSet { values, d_min, d_max })
}

/// Homography for the plane `nᵀX = depth` (reference camera frame) mapping
/// reference pixels to source pixels.
pub fn plane_homography_general(
    k_ref: &Intrinsics,
    k_src: &Intrinsics,
    p_ref: &Pose,
    p_src: &Pose,
    normal: &Vector3<f64>,
    depth: f64,
) -> Result<Matrix3<f64>> {
    if !(depth > 0.0) {
        return Err(CoreError::invalid("plane_homography", format!("depth must be positive, got {depth}")));
    }
    let (r, t) = p_src.relative_to(p_ref);
    Ok(k_src.matrix() * (r + t * normal.transpose() / depth) * k_ref.inverse())
}

/// Fronto-parallel plane at `depth` in the reference frame.
pub fn plane_homography(k_ref: &Intrinsics, k_src: &Intrinsics, p_ref: &Pose, p_src: &Pose, depth: f64) -> Result<Matrix3<f64>> {
    plane_homography_general(k_ref, k_src, p_ref, p_src, &Vector3::z(), depth)
}

/// Applies `h` to pixel `(u, v)`; `None` when the point maps behind the
/// source camera.
pub fn apply_homography(h: &Matrix3<f64>, u: f64, v: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(u, v, 1.0);
    (p.z > 0.0).then(|| (p.x / p.z, p.y / p.z))
}
