use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::BufferError;
use crate::Vec3;

/// Pinhole intrinsics in pixels. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)`
/// and its ray passes through `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Centered principal point with the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_rad: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_rad).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), BufferError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(BufferError::InvalidCamera(format!("bad intrinsics {self:?}")))
        }
    }

    /// Same field of view at another resolution.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let (sx, sy) = (width as f64 / self.width as f64, height as f64 / self.height as f64);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Camera with OpenCV axes (x right, y down, z forward); `pose` maps camera
/// coordinates to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Isometry3<f64>,
}

/// Serialized camera: position plus world-from-camera quaternion `[w, x, y, z]`.
#[derive(Serialize, Deserialize)]
struct CameraRecord {
    intrinsics: Intrinsics,
    position: [f64; 3],
    rotation_wxyz: [f64; 4],
}

impl Serialize for Camera {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let t = self.pose.translation.vector;
        let q = self.pose.rotation.quaternion();
        CameraRecord {
            intrinsics: self.intrinsics,
            position: [t.x, t.y, t.z],
            rotation_wxyz: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Camera {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = CameraRecord::deserialize(d)?;
        let [w, x, y, z] = r.rotation_wxyz;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) || r.position.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom("camera pose is not finite"));
        }
        // Already-unit quaternions are kept bit for bit so files round-trip.
        let rotation = if (q.norm() - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        let pose = Isometry3::from_parts(Translation3::new(r.position[0], r.position[1], r.position[2]), rotation);
        Camera::new(r.intrinsics, pose).map_err(serde::de::Error::custom)
    }
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Isometry3<f64>) -> Result<Self, BufferError> {
        intrinsics.validate()?;
        let q = pose.rotation.quaternion();
        if !q.coords.iter().all(|v| v.is_finite()) || !pose.translation.vector.iter().all(|v| v.is_finite()) {
            return Err(BufferError::InvalidCamera("pose is not finite".into()));
        }
        Ok(Self { intrinsics, pose })
    }

    /// Camera at `eye` looking at `target`, with image up towards `up`.
    pub fn look_at(intrinsics: Intrinsics, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, BufferError> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| BufferError::InvalidCamera("eye equals target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| BufferError::InvalidCamera("view direction parallel to up".into()))?;
        let y = z.cross(&x);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Self::new(
            intrinsics,
            Isometry3::from_parts(Translation3::from(eye), UnitQuaternion::from_rotation_matrix(&rot)),
        )
    }

    /// Forward-facing camera mounted `height` metres above a ground pose.
    pub fn from_ego(intrinsics: Intrinsics, position: Vec3, yaw: f64, height: f64) -> Result<Self, BufferError> {
        let eye = position + Vec3::new(0.0, 0.0, height);
        let fwd = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
        Self::look_at(intrinsics, eye, eye + fwd, Vec3::z())
    }

    pub fn position(&self) -> Vec3 {
        self.pose.translation.vector
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.pose.rotation * Vec3::z()
    }

    /// Unit ray direction (world) through the centre of pixel `(u, v)`.
    pub fn ray_dir(&self, u: usize, v: usize) -> Vec3 {
        let k = &self.intrinsics;
        let d = Vec3::new((u as f64 + 0.5 - k.cx) / k.fx, (v as f64 + 0.5 - k.cy) / k.fy, 1.0);
        (self.pose.rotation * d).normalize()
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.pose.inverse_transform_point(&(*p).into()).coords
    }

    /// Continuous pixel coordinates and depth of a world point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedCamera {
    pub t: f64,
    pub camera: Camera,
}

pub const TRAJECTORY_VERSION: u32 = 1;

/// Time-indexed camera list with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryFile", into = "TrajectoryFile")]
pub struct Trajectory {
    frames: Vec<TimedCamera>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    version: u32,
    frames: Vec<TimedCamera>,
}

impl TryFrom<TrajectoryFile> for Trajectory {
    type Error = BufferError;
    fn try_from(f: TrajectoryFile) -> Result<Self, BufferError> {
        if f.version != TRAJECTORY_VERSION {
            return Err(BufferError::InvalidTrajectory(format!("unsupported version {}", f.version)));
        }
        Trajectory::new(f.frames)
    }
}

impl From<Trajectory> for TrajectoryFile {
    fn from(t: Trajectory) -> Self {
        TrajectoryFile {
            version: TRAJECTORY_VERSION,
            frames: t.frames,
        }
    }
}

impl Trajectory {
    pub fn new(frames: Vec<TimedCamera>) -> Result<Self, BufferError> {
        if frames.is_empty() {
            return Err(BufferError::InvalidTrajectory("no frames".into()));
        }
        if frames.iter().any(|f| !f.t.is_finite()) {
            return Err(BufferError::InvalidTrajectory("non-finite timestamp".into()));
        }
        if let Some(w) = frames.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(BufferError::InvalidTrajectory(format!(
                "timestamps not strictly increasing at t={}",
                w[1].t
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[TimedCamera] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BufferError> {
        Ok(crate::formats::read_json(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), BufferError> {
        Ok(crate::formats::write_json(path, self)?)
    }
}
