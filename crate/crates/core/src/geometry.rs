//! Pinhole cameras, viewing rays and the ray distance primitives used to weight
//! cross-view and temporal edges.
//!
//! Cameras are assumed to be undistorted. The camera convention is
//! `x_cam = R * x_world + t`, `pixel ~ K * x_cam`.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Condition number of the triangulation normal matrix above which the ray
/// bundle is considered degenerate.
pub const DEGENERATE_CONDITION: f64 = 1e8;

const MIN_DEPTH: f64 = 1e-9;
const PARALLEL_SIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Homogeneous lift `[u, v, 1]`.
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

/// A half-infinite viewing ray; distances treat it as an infinite line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Point3,
    direction: Vector3<f64>,
}

impl Ray {
    /// Builds a ray, normalizing `direction`. Returns `None` for a zero or
    /// non-finite direction.
    pub fn new(origin: Point3, direction: Vector3<f64>) -> Option<Self> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) || !origin.iter().all(|x| x.is_finite()) {
            return None;
        }
        Some(Self {
            origin,
            direction: direction / norm,
        })
    }

    pub fn origin(&self) -> &Point3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn at(&self, s: f64) -> Point3 {
        self.origin + self.direction * s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    id: usize,
    intrinsic: Matrix3<f64>,
    intrinsic_inv: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    center: Point3,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(
        id: usize,
        intrinsic: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidCamera {
            id,
            reason: reason.to_string(),
        };
        if width == 0 || height == 0 {
            return Err(invalid("image size must be positive"));
        }
        if !intrinsic.iter().chain(rotation.iter()).chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        let intrinsic_inv = intrinsic
            .try_inverse()
            .filter(|_| intrinsic.determinant().abs() > 1e-12)
            .ok_or_else(|| invalid("intrinsic matrix is singular"))?;
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > 1e-6 {
            return Err(invalid("rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(invalid("rotation determinant is not +1"));
        }
        let center = -(rotation.transpose() * translation);
        Ok(Self {
            id,
            intrinsic,
            intrinsic_inv,
            rotation,
            translation,
            center,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with world `up` mapped to image up
    /// (negative v).
    pub fn look_at(
        id: usize,
        intrinsic: Matrix3<f64>,
        eye: Point3,
        target: Point3,
        up: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidCamera {
                id,
                reason: "view direction parallel to up vector".into(),
            });
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(id, intrinsic, rotation, translation, width, height)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn intrinsic(&self) -> &Matrix3<f64> {
        &self.intrinsic
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn center(&self) -> &Point3 {
        &self.center
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, x: &Point3) -> f64 {
        (self.rotation * x + self.translation).z
    }

    pub fn back_project(&self, p: &Pixel) -> Ray {
        let dir = self.rotation.transpose() * (self.intrinsic_inv * p.homogeneous());
        Ray {
            origin: self.center,
            direction: dir.normalize(),
        }
    }

    pub fn project(&self, x: &Point3) -> Result<Pixel> {
        let cam = self.rotation * x + self.translation;
        if cam.z <= MIN_DEPTH {
            return Err(Error::BehindCamera {
                camera: self.id,
                depth: cam.z,
            });
        }
        let h = self.intrinsic * cam;
        Ok(Pixel::new(h.x / h.z, h.y / h.z))
    }
}

/// Shortest distance between the infinite lines carrying `a` and `b`.
///
/// Parallel lines fall back to the point-to-line distance, averaged over both
/// directions so that the result stays exactly symmetric.
pub fn line_line_distance(a: &Ray, b: &Ray) -> f64 {
    let n = a.direction.cross(&b.direction);
    let sin = n.norm();
    if sin < PARALLEL_SIN {
        return 0.5 * (point_line_distance(&b.origin, a) + point_line_distance(&a.origin, b));
    }
    (b.origin - a.origin).dot(&n).abs() / sin
}

pub fn point_line_distance(x: &Point3, r: &Ray) -> f64 {
    let d = x - r.origin;
    (d - r.direction * d.dot(&r.direction)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Point3,
    /// RMS point-to-ray distance, meters.
    pub residual: f64,
}

/// Point minimizing the summed squared distances to a bundle of rays.
pub fn triangulate_rays(rays: &[Ray]) -> Result<Triangulation> {
    if rays.len() < 2 {
        return Err(Error::InsufficientViews(rays.len()));
    }
    let first = rays[0].origin;
    if rays.iter().all(|r| (r.origin - first).norm() < 1e-9) {
        return Err(Error::DegenerateGeometry("all rays share one origin".into()));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for r in rays {
        let proj = Matrix3::identity() - r.direction * r.direction.transpose();
        a += proj;
        b += proj * r.origin;
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > DEGENERATE_CONDITION {
        return Err(Error::DegenerateGeometry(format!(
            "normal matrix condition number {:.3e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let point = a
        .cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::DegenerateGeometry("normal matrix not positive definite".into()))?;
    let sq: f64 = rays.iter().map(|r| point_line_distance(&point, r).powi(2)).sum();
    Ok(Triangulation {
        point,
        residual: (sq / rays.len() as f64).sqrt(),
    })
}

pub fn triangulate(observations: &[(&Camera, Pixel)]) -> Result<Triangulation> {
    if observations.len() < 2 {
        return Err(Error::InsufficientViews(observations.len()));
    }
    let rays: Vec<Ray> = observations.iter().map(|(c, p)| c.back_project(p)).collect();
    triangulate_rays(&rays)
}

/// An ordered set of cameras addressed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraSet {
    cameras: Vec<Camera>,
}

impl CameraSet {
    pub fn new(mut cameras: Vec<Camera>) -> Result<Self> {
        cameras.sort_by_key(|c| c.id);
        for w in cameras.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Config(format!("duplicate camera id {}", w[0].id)));
            }
        }
        Ok(Self { cameras })
    }

    pub fn get(&self, id: usize) -> Option<&Camera> {
        self.cameras
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.cameras[i])
    }

    pub fn ids(&self) -> Vec<usize> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Camera> {
        self.cameras.iter()
    }
}

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    id: usize,
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationDoc {
    version: u32,
    cameras: Vec<CameraRecord>,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

impl CameraSet {
    pub fn to_calibration_string(&self) -> String {
        let doc = CalibrationDoc {
            version: CALIBRATION_VERSION,
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraRecord {
                    id: c.id,
                    k: row_major(&c.intrinsic),
                    r: row_major(&c.rotation),
                    t: [c.translation.x, c.translation.y, c.translation.z],
                    width: c.width,
                    height: c.height,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("calibration serializes")
    }

    pub fn from_calibration_str(text: &str) -> Result<Self> {
        let doc: CalibrationDoc =
            serde_json::from_str(text).map_err(|e| Error::parse(format!("calibration line {}", e.line()), e.to_string()))?;
        if doc.version != CALIBRATION_VERSION {
            return Err(Error::parse(
                "calibration header",
                format!("unsupported version {}", doc.version),
            ));
        }
        let cams = doc
            .cameras
            .into_iter()
            .map(|r| {
                Camera::new(
                    r.id,
                    Matrix3::from_row_slice(&r.k),
                    Matrix3::from_row_slice(&r.r),
                    Vector3::from_row_slice(&r.t),
                    r.width,
                    r.height,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cams)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_calibration_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_calibration_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_cam() -> Camera {
        Camera::new(0, Matrix3::identity(), Matrix3::identity(), Vector3::zeros(), 10, 10).unwrap()
    }

    #[test]
    fn back_project_identity() {
        let cam = identity_cam();
        let r = cam.back_project(&Pixel::new(0.0, 0.0));
        assert_eq!(*r.origin(), Vector3::zeros());
        assert_abs_diff_eq!(*r.direction(), Vector3::z(), epsilon = 1e-15);
        let r = cam.back_project(&Pixel::new(1.0, 0.0));
        assert_abs_diff_eq!(
            *r.direction(),
            Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn project_identity() {
        let cam = identity_cam();
        assert_eq!(cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap(), Pixel::new(0.0, 0.0));
        assert_eq!(cam.project(&Vector3::new(2.0, 0.0, 2.0)).unwrap(), Pixel::new(1.0, 0.0));
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn camera_validation() {
        let k = Matrix3::zeros();
        assert!(Camera::new(0, k, Matrix3::identity(), Vector3::zeros(), 1, 1).is_err());
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Camera::new(0, Matrix3::identity(), flip, Vector3::zeros(), 1, 1).is_err());
        assert!(Camera::new(0, Matrix3::identity(), Matrix3::identity(), Vector3::zeros(), 0, 1).is_err());
    }

    #[test]
    fn line_distances() {
        let x_axis = Ray::new(Vector3::zeros(), Vector3::x()).unwrap();
        assert_eq!(line_line_distance(&x_axis, &x_axis), 0.0);
        let shifted = Ray::new(Vector3::new(0.0, 1.0, 0.0), Vector3::x()).unwrap();
        assert_abs_diff_eq!(line_line_distance(&x_axis, &shifted), 1.0, epsilon = 1e-15);
        let skew = Ray::new(Vector3::new(0.0, 0.0, 1.0), Vector3::y()).unwrap();
        assert_abs_diff_eq!(line_line_distance(&x_axis, &skew), 1.0, epsilon = 1e-15);

        let z = Ray::new(Vector3::zeros(), Vector3::z()).unwrap();
        assert_abs_diff_eq!(point_line_distance(&Vector3::new(3.0, 4.0, 10.0), &z), 5.0, epsilon = 1e-12);
        assert_eq!(point_line_distance(&Vector3::new(0.0, 0.0, -7.0), &z), 0.0);
    }

    #[test]
    fn triangulate_two_views() {
        let k = Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0);
        let target = Vector3::new(1.0, 2.0, 3.0);
        let up = Vector3::z();
        let a = Camera::look_at(0, k, Vector3::new(5.0, 0.0, 2.0), target, up, 640, 480).unwrap();
        let b = Camera::look_at(1, k, Vector3::new(0.0, 6.0, 3.0), target, up, 640, 480).unwrap();
        let obs = [(&a, a.project(&target).unwrap()), (&b, b.project(&target).unwrap())];
        let t = triangulate(&obs).unwrap();
        assert_abs_diff_eq!(t.point, target, epsilon = 1e-9);
        assert!(t.residual < 1e-9);
        assert!(matches!(triangulate(&obs[..1]), Err(Error::InsufficientViews(1))));
    }

    #[test]
    fn triangulate_parallel_rays_is_degenerate() {
        let r1 = Ray::new(Vector3::zeros(), Vector3::z()).unwrap();
        let r2 = Ray::new(Vector3::new(1.0, 0.0, 0.0), Vector3::z()).unwrap();
        assert!(matches!(triangulate_rays(&[r1, r2]), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn look_at_centers_target() {
        let k = Matrix3::new(800.0, 0.0, 400.0, 0.0, 800.0, 300.0, 0.0, 0.0, 1.0);
        let cam = Camera::look_at(3, k, Vector3::new(4.0, 1.0, 2.0), Vector3::new(0.0, 0.0, 1.0), Vector3::z(), 800, 600)
            .unwrap();
        let p = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(p.u, 400.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.v, 300.0, epsilon = 1e-9);
        // world up is image up
        let above = cam.project(&Vector3::new(0.0, 0.0, 1.5)).unwrap();
        assert!(above.v < 300.0);
    }

    #[test]
    fn calibration_round_trip() {
        let k = Matrix3::new(800.0, 0.0, 400.0, 0.0, 810.0, 300.0, 0.0, 0.0, 1.0);
        let cam = Camera::look_at(7, k, Vector3::new(4.0, 1.0, 2.0), Vector3::zeros(), Vector3::z(), 800, 600).unwrap();
        let set = CameraSet::new(vec![cam]).unwrap();
        let back = CameraSet::from_calibration_str(&set.to_calibration_string()).unwrap();
        assert_eq!(back.ids(), vec![7]);
        let c = back.get(7).unwrap();
        assert_abs_diff_eq!(*c.center(), *set.get(7).unwrap().center(), epsilon = 1e-12);
    }
}
