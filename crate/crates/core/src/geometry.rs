//! Camera model, ray casting onto the work plane, image-to-plane homography
//! and footprint box tests.
//!
//! Camera frame convention: +x to the image right, +y to the image bottom,
//! +z along the optical axis. `CameraPose::orientation` maps camera-frame
//! vectors into the world frame.
//!
//! Footprint boxes are expressed in the work-plane frame: x and y along the
//! plane basis returned by [`WorkPlane::basis`], z along the plane normal.
//! For the default `z = 0` plane this is the world frame.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("pixel ({u}, {v}) lies outside the {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("ray is parallel to the work plane")]
    RayParallelToPlane,
    #[error("plane intersection lies behind the camera")]
    IntersectionBehindCamera,
    #[error("bounding box corner does not project onto the work plane")]
    DegenerateProjection,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    /// World-from-camera rotation.
    pub orientation: UnitQuaternion<f64>,
    /// Horizontal field of view in radians.
    pub hfov: f64,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
}

impl CameraPose {
    pub fn new(
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        hfov: f64,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let pose = CameraPose {
            position,
            orientation,
            hfov,
            image_size,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let norm = self.orientation.quaternion().norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "orientation quaternion norm {norm} is not 1"
            )));
        }
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(GeometryError::InvalidCamera(format!(
                "hfov {} outside (0, pi)",
                self.hfov
            )));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(GeometryError::InvalidCamera("empty image".into()));
        }
        if !self.position.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite position".into()));
        }
        Ok(())
    }

    /// Camera looking from `position` at `target`, with no roll relative to world +z.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        hfov: f64,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let forward = target - position;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidCamera(
                "camera position coincides with target".into(),
            ));
        }
        let forward = forward.normalize();
        let mut right = forward.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            // Looking straight up or down: image top points towards world +y.
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        let orientation = UnitQuaternion::from_rotation_matrix(&rot);
        CameraPose::new(position, orientation, hfov, image_size)
    }

    /// Camera on a sphere around `target`. Azimuth is measured from world +x
    /// towards +y, elevation upwards from the plane; both in radians.
    pub fn orbit(
        target: Vector3<f64>,
        azimuth: f64,
        elevation: f64,
        distance: f64,
        hfov: f64,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let offset = Vector3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        ) * distance;
        CameraPose::look_at(target + offset, target, hfov, image_size)
    }

    pub fn focal_length(&self) -> f64 {
        (self.image_size.0 as f64 / 2.0) / (self.hfov / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.image_size.0 as f64 / 2.0, self.image_size.1 as f64 / 2.0)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn contains_pixel(&self, pixel: (f64, f64)) -> bool {
        let (w, h) = self.image_size;
        pixel.0 >= 0.0 && pixel.0 <= w as f64 && pixel.1 >= 0.0 && pixel.1 <= h as f64
    }

    /// Projects a world point to pixel coordinates. `None` when the point is
    /// not in front of the camera. The result may lie outside the image.
    pub fn project_point(&self, point: &Vector3<f64>) -> Option<(f64, f64)> {
        let local = self.orientation.inverse() * (point - self.position);
        if local.z <= 1e-12 {
            return None;
        }
        let f = self.focal_length();
        let (cx, cy) = self.principal_point();
        Some((f * local.x / local.z + cx, f * local.y / local.z + cy))
    }

    /// Spherical-linear orientation and linear position blend, `t` in [0, 1].
    pub fn interpolate(&self, other: &CameraPose, t: f64) -> CameraPose {
        let position = self.position.lerp(&other.position, t);
        let orientation = self
            .orientation
            .try_slerp(&other.orientation, t, 1e-12)
            .unwrap_or(if t < 0.5 { self.orientation } else { other.orientation });
        CameraPose {
            position,
            orientation,
            hfov: self.hfov + (other.hfov - self.hfov) * t,
            image_size: self.image_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox2D {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self, GeometryError> {
        if !(min[0] <= max[0] && min[1] <= max[1]) {
            return Err(GeometryError::InvalidBBox(format!(
                "min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(BBox2D { min, max })
    }

    pub fn from_points(points: &[(f64, f64)]) -> Option<Self> {
        let first = points.first()?;
        let mut b = BBox2D {
            min: [first.0, first.1],
            max: [first.0, first.1],
        };
        for p in &points[1..] {
            b.min[0] = b.min[0].min(p.0);
            b.min[1] = b.min[1].min(p.1);
            b.max[0] = b.max[0].max(p.0);
            b.max[1] = b.max[1].max(p.1);
        }
        Some(b)
    }

    /// Corners in order: (min,min), (max,min), (max,max), (min,max).
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.min[0], self.min[1]),
            (self.max[0], self.min[1]),
            (self.max[0], self.max[1]),
            (self.min[0], self.max[1]),
        ]
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        )
    }

    pub fn size(&self) -> (f64, f64) {
        (self.max[0] - self.min[0], self.max[1] - self.min[1])
    }

    pub fn translated(&self, du: f64, dv: f64) -> BBox2D {
        BBox2D {
            min: [self.min[0] + du, self.min[1] + dv],
            max: [self.max[0] + du, self.max[1] + dv],
        }
    }

    /// Clamps to the image; `None` if nothing of the box remains visible.
    pub fn clamp_to_image(&self, image_size: (u32, u32)) -> Option<BBox2D> {
        let (w, h) = (image_size.0 as f64, image_size.1 as f64);
        if self.max[0] < 0.0 || self.max[1] < 0.0 || self.min[0] > w || self.min[1] > h {
            return None;
        }
        Some(BBox2D {
            min: [self.min[0].clamp(0.0, w), self.min[1].clamp(0.0, h)],
            max: [self.max[0].clamp(0.0, w), self.max[1].clamp(0.0, h)],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkPlane {
    pub origin: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Default for WorkPlane {
    fn default() -> Self {
        WorkPlane {
            origin: Vector3::zeros(),
            normal: Vector3::z(),
        }
    }
}

impl WorkPlane {
    pub fn new(origin: Vector3<f64>, normal: Vector3<f64>) -> Result<Self, GeometryError> {
        if (normal.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidCamera(format!(
                "plane normal norm {} is not 1",
                normal.norm()
            )));
        }
        Ok(WorkPlane { origin, normal })
    }

    /// In-plane orthonormal axes `(e1, e2)` with `e1 x e2 = normal`.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal;
        let seed = if n.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = (seed - n * seed.dot(&n)).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }

    /// World point to plane frame (e1, e2, height above plane).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (e1, e2) = self.basis();
        let d = p - self.origin;
        Vector3::new(d.dot(&e1), d.dot(&e2), d.dot(&self.normal))
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        let (e1, e2) = self.basis();
        self.origin + e1 * local.x + e2 * local.y + self.normal * local.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintBox3D {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    /// Rotation about the plane normal, radians.
    pub yaw: f64,
}

impl FootprintBox3D {
    /// Axis-aligned box resting on the plane.
    pub fn resting(center_xy: (f64, f64), half_xy: (f64, f64), height: f64) -> Self {
        FootprintBox3D {
            center: Vector3::new(center_xy.0, center_xy.1, height / 2.0),
            half_extents: Vector3::new(half_xy.0, half_xy.1, height / 2.0),
            yaw: 0.0,
        }
    }

    pub fn inflated(&self, margin: f64) -> Self {
        FootprintBox3D {
            center: self.center,
            half_extents: self.half_extents.add_scalar(margin),
            yaw: self.yaw,
        }
    }

    pub fn with_center_xy(&self, x: f64, y: f64) -> Self {
        FootprintBox3D {
            center: Vector3::new(x, y, self.center.z),
            ..*self
        }
    }

    fn axes(&self) -> (Vector2<f64>, Vector2<f64>) {
        let (s, c) = self.yaw.sin_cos();
        (Vector2::new(c, s), Vector2::new(-s, c))
    }

    /// Footprint corners in the plane, counter-clockwise.
    pub fn corners_xy(&self) -> [Vector2<f64>; 4] {
        let (ax, ay) = self.axes();
        let c = self.center.xy();
        let hx = ax * self.half_extents.x;
        let hy = ay * self.half_extents.y;
        [c - hx - hy, c + hx - hy, c + hx + hy, c - hx + hy]
    }

    fn radius_along(&self, axis: &Vector2<f64>) -> f64 {
        let (ax, ay) = self.axes();
        self.half_extents.x * ax.dot(axis).abs() + self.half_extents.y * ay.dot(axis).abs()
    }
}

pub fn pixel_ray(camera: &CameraPose, pixel: (f64, f64)) -> Result<Ray, GeometryError> {
    if !camera.contains_pixel(pixel) {
        return Err(GeometryError::PixelOutOfBounds {
            u: pixel.0,
            v: pixel.1,
            width: camera.image_size.0,
            height: camera.image_size.1,
        });
    }
    let f = camera.focal_length();
    let (cx, cy) = camera.principal_point();
    let local = Vector3::new((pixel.0 - cx) / f, (pixel.1 - cy) / f, 1.0);
    let direction = (camera.orientation * local).normalize();
    Ok(Ray {
        origin: camera.position,
        direction,
    })
}

pub fn intersect_plane(ray: &Ray, plane: &WorkPlane) -> Result<Vector3<f64>, GeometryError> {
    let denom = ray.direction.dot(&plane.normal);
    if denom.abs() <= PARALLEL_EPS {
        return Err(GeometryError::RayParallelToPlane);
    }
    let t = (plane.origin - ray.origin).dot(&plane.normal) / denom;
    if t <= 0.0 {
        return Err(GeometryError::IntersectionBehindCamera);
    }
    Ok(ray.origin + ray.direction * t)
}

/// Projective map from image pixels to plane coordinates (e1, e2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHomography {
    pub image_to_plane: Matrix3<f64>,
    image_size: (u32, u32),
}

impl PlaneHomography {
    pub fn new(camera: &CameraPose, plane: &WorkPlane) -> Result<Self, GeometryError> {
        let f = camera.focal_length();
        let (cx, cy) = camera.principal_point();
        let k = Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0);
        let r_cw = camera.orientation.inverse().to_rotation_matrix();
        let (e1, e2) = plane.basis();
        let plane_frame = Matrix3::from_columns(&[e1, e2, plane.origin - camera.position]);
        let plane_to_image = k * r_cw.matrix() * plane_frame;
        let image_to_plane = plane_to_image
            .try_inverse()
            .ok_or(GeometryError::DegenerateProjection)?;
        Ok(PlaneHomography {
            image_to_plane,
            image_size: camera.image_size,
        })
    }

    pub fn map(&self, pixel: (f64, f64)) -> Result<Vector2<f64>, GeometryError> {
        let (w, h) = self.image_size;
        if !(pixel.0 >= 0.0 && pixel.0 <= w as f64 && pixel.1 >= 0.0 && pixel.1 <= h as f64) {
            return Err(GeometryError::PixelOutOfBounds {
                u: pixel.0,
                v: pixel.1,
                width: w,
                height: h,
            });
        }
        let q = self.image_to_plane * Vector3::new(pixel.0, pixel.1, 1.0);
        // The third coordinate is the inverse depth along the optical axis;
        // non-positive values mean the pixel sees the horizon or beyond.
        if q.z <= 1e-12 {
            return Err(GeometryError::DegenerateProjection);
        }
        Ok(Vector2::new(q.x / q.z, q.y / q.z))
    }
}

/// Plane coordinates of the four bbox corners via the homography.
pub fn project_corners_homography(
    camera: &CameraPose,
    bbox: &BBox2D,
    plane: &WorkPlane,
) -> Result<[Vector2<f64>; 4], GeometryError> {
    let h = PlaneHomography::new(camera, plane)?;
    let mut out = [Vector2::zeros(); 4];
    for (slot, corner) in out.iter_mut().zip(bbox.corners()) {
        *slot = h.map(corner).map_err(|e| match e {
            GeometryError::PixelOutOfBounds { .. } => e,
            _ => GeometryError::DegenerateProjection,
        })?;
    }
    Ok(out)
}

/// Plane coordinates of the four bbox corners via per-corner ray casting.
pub fn project_corners_raycast(
    camera: &CameraPose,
    bbox: &BBox2D,
    plane: &WorkPlane,
) -> Result<[Vector2<f64>; 4], GeometryError> {
    let mut out = [Vector2::zeros(); 4];
    for (slot, corner) in out.iter_mut().zip(bbox.corners()) {
        let ray = pixel_ray(camera, corner)?;
        let hit = intersect_plane(&ray, plane).map_err(|_| GeometryError::DegenerateProjection)?;
        *slot = plane.to_local(&hit).xy();
    }
    Ok(out)
}

fn footprint_from_corners(corners: &[Vector2<f64>; 4], height: f64) -> FootprintBox3D {
    let mut min = corners[0];
    let mut max = corners[0];
    for c in &corners[1..] {
        min = min.inf(c);
        max = max.sup(c);
    }
    let center = (min + max) / 2.0;
    let half = (max - min) / 2.0;
    FootprintBox3D::resting((center.x, center.y), (half.x, half.y), height)
}

/// Back-projects a 2D detection onto the work plane as an axis-aligned
/// footprint box of the given component height.
pub fn project_bbox(
    camera: &CameraPose,
    bbox: &BBox2D,
    plane: &WorkPlane,
    component_height: f64,
) -> Result<FootprintBox3D, GeometryError> {
    let corners = project_corners_homography(camera, bbox, plane)?;
    Ok(footprint_from_corners(&corners, component_height))
}

pub fn point_in_box(p: &Vector3<f64>, b: &FootprintBox3D) -> bool {
    if (p.z - b.center.z).abs() > b.half_extents.z {
        return false;
    }
    let (ax, ay) = b.axes();
    let d = p.xy() - b.center.xy();
    d.dot(&ax).abs() <= b.half_extents.x && d.dot(&ay).abs() <= b.half_extents.y
}

/// Closed-set intersection test (touching boxes intersect).
pub fn boxes_intersect(a: &FootprintBox3D, b: &FootprintBox3D) -> bool {
    if (a.center.z - b.center.z).abs() > a.half_extents.z + b.half_extents.z {
        return false;
    }
    let d = b.center.xy() - a.center.xy();
    let (a1, a2) = a.axes();
    let (b1, b2) = b.axes();
    for axis in [a1, a2, b1, b2] {
        if d.dot(&axis).abs() > a.radius_along(&axis) + b.radius_along(&axis) {
            return false;
        }
    }
    true
}
