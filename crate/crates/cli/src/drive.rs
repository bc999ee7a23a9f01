//! Kinematic bicycle ego model and the per-session drive recorder.

use serde::{Deserialize, Serialize};
use voxworld_core::buffers::{BufferError, Camera, Intrinsics, TimedCamera, Trajectory};
use voxworld_core::geom::wrap_angle;
use voxworld_core::Vec3;

use crate::config::DriveConfig;

/// Longest simulated span one control message may request, seconds.
pub const MAX_CONTROL_SPAN: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum DriveError {
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicycleParams {
    pub wheelbase: f64,
    pub max_speed: f64,
    pub max_steer: f64,
    pub tick_hz: f64,
}

impl From<&DriveConfig> for BicycleParams {
    fn from(d: &DriveConfig) -> Self {
        Self {
            wheelbase: d.wheelbase,
            max_speed: d.max_speed,
            max_steer: d.max_steer,
            tick_hz: d.tick_hz,
        }
    }
}

/// Rear-axle position on the ground, heading about +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub position: [f64; 3],
    pub yaw: f64,
    pub speed: f64,
    pub steer: f64,
}

impl EgoState {
    pub fn at(position: [f64; 3], yaw: f64) -> Self {
        Self {
            position,
            yaw,
            speed: 0.0,
            steer: 0.0,
        }
    }
}

/// Throttle in [-1, 1] as a fraction of the speed cap, steering angle in
/// radians, and the span to simulate in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub throttle: f64,
    pub steer: f64,
    pub dt: f64,
}

impl BicycleParams {
    pub fn tick(&self) -> f64 {
        1.0 / self.tick_hz
    }

    /// One fixed tick.
    pub fn step(&self, s: &EgoState, throttle: f64, steer: f64) -> EgoState {
        let dt = self.tick();
        let v = throttle.clamp(-1.0, 1.0) * self.max_speed;
        let delta = steer.clamp(-self.max_steer, self.max_steer);
        let [x, y, z] = s.position;
        EgoState {
            position: [x + v * s.yaw.cos() * dt, y + v * s.yaw.sin() * dt, z],
            yaw: wrap_angle(s.yaw + v / self.wheelbase * delta.tan() * dt),
            speed: v,
            steer: delta,
        }
    }

    /// Ticks covering `dt` seconds (at least one).
    pub fn ticks_for(&self, dt: f64) -> Result<usize, DriveError> {
        if !(dt > 0.0 && dt <= MAX_CONTROL_SPAN) {
            return Err(DriveError::InvalidControl(format!("dt must lie in (0, {MAX_CONTROL_SPAN}], got {dt}")));
        }
        Ok(((dt * self.tick_hz).round() as usize).max(1))
    }
}

/// One driver's state and recording. Owned by a single loop.
#[derive(Debug, Clone)]
pub struct DriveSession {
    pub id: u64,
    pub params: BicycleParams,
    pub intrinsics: Intrinsics,
    pub camera_height: f64,
    state: EgoState,
    tick: u64,
    recording: Vec<TimedCamera>,
}

impl DriveSession {
    pub fn new(
        id: u64,
        params: BicycleParams,
        intrinsics: Intrinsics,
        camera_height: f64,
        start: EgoState,
    ) -> Result<Self, DriveError> {
        let mut s = Self {
            id,
            params,
            intrinsics,
            camera_height,
            state: start,
            tick: 0,
            recording: Vec::new(),
        };
        s.recording.push(TimedCamera {
            t: 0.0,
            camera: s.camera()?,
        });
        Ok(s)
    }

    pub fn state(&self) -> &EgoState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.params.tick_hz
    }

    pub fn camera(&self) -> Result<Camera, BufferError> {
        Camera::from_ego(self.intrinsics, Vec3::from(self.state.position), self.state.yaw, self.camera_height)
    }

    /// Advances by the ticks `c.dt` covers, recording a camera per tick.
    pub fn apply(&mut self, c: &Control) -> Result<usize, DriveError> {
        if !(c.throttle.is_finite() && c.steer.is_finite()) {
            return Err(DriveError::InvalidControl("throttle and steer must be finite".into()));
        }
        let n = self.params.ticks_for(c.dt)?;
        for _ in 0..n {
            self.state = self.params.step(&self.state, c.throttle, c.steer);
            self.tick += 1;
            let camera = self.camera()?;
            self.recording.push(TimedCamera { t: self.time(), camera });
        }
        Ok(n)
    }

    pub fn trajectory(&self) -> Result<Trajectory, BufferError> {
        Trajectory::new(self.recording.clone())
    }
}
