//! Deterministic stand-in for the UAV and its surroundings.
//!
//! A seeded 2-D world (default 100 m × 100 m, y axis pointing down) holds a
//! drone flying a closed waypoint loop and rectangular "person" targets
//! bouncing elastically off the world edges. Two orthographic cameras look
//! at it:
//!
//! - `BOTTOM`: a ground footprint (default 20 m × 15 m) centered on the
//!   drone, axis-aligned, north up.
//! - `FPV`: the same footprint centered 8 m ahead of the drone and rotated
//!   so the heading points up.
//!
//! A pixel is painted with a target's exact color when its center lies in
//! the half-open target rectangle `[c - s/2, c + s/2)`; every other pixel is
//! background gray. The same predicate produces the ground-truth boxes.
//!
//! World generation draws from [`SplitMix64`] seeded with the config seed, in
//! this order: `n_waypoints` waypoints (x then y, uniform over the inner 80%
//! of the world), then per target: width, height, center x, center y,
//! velocity x, velocity y.

mod ingest;
mod sequence;
mod source;

pub use ingest::{ingest_listen, IngestConnection, IngestListener};
pub use sequence::{
    play_sequence, read_sequence, record_sequence, write_sequence, SequenceError, SequencePlayer,
    SEQUENCE_HEADER_LEN, SEQUENCE_MAGIC,
};
pub use source::{FrameSource, SourceError, SyntheticSource};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecMode;
use crate::model::{BBox, Frame, PixelRect, StreamId};
use crate::rng::{mix, SplitMix64};

pub const BACKGROUND: [u8; 3] = [64, 64, 64];
pub const MAX_NOISE_AMPLITUDE: u8 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("frame_rate_hz must be > 0, got {0}")]
    FrameRate(f64),
    #[error("resolution must be at least 16x16, got {0}")]
    Resolution(Resolution),
    #[error("noise amplitude must be <= {MAX_NOISE_AMPLITUDE}, got {0}")]
    Noise(u8),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn len(self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Image size in pixels; written `WxH` in config files and on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Resolution {
    pub width: u16,
    pub height: u16,
}

impl Resolution {
    pub const VGA: Resolution = Resolution {
        width: 640,
        height: 480,
    };

    pub const fn new(width: u16, height: u16) -> Self {
        Self { width, height }
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self::VGA
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let width = w.trim().parse().map_err(|e| format!("bad width {w:?}: {e}"))?;
        let height = h.trim().parse().map_err(|e| format!("bad height {h:?}: {e}"))?;
        Ok(Self { width, height })
    }
}

impl TryFrom<String> for Resolution {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Resolution> for String {
    fn from(r: Resolution) -> Self {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    #[default]
    Synthetic,
    File,
    Network,
}

/// World and camera constants. Defaults are what every test assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// World extent in meters, origin at (0, 0).
    pub bounds: Vec2,
    /// Ground area covered by one camera image, meters.
    pub footprint: Vec2,
    /// Distance from the drone to the FPV view center, meters.
    pub fpv_ahead_m: f64,
    /// Drone ground speed, meters per frame.
    pub drone_speed: f64,
    pub n_waypoints: usize,
    /// Per-axis maximum target speed, meters per frame.
    pub target_speed_max: f64,
    pub target_size_min: f64,
    pub target_size_max: f64,
    pub target_color: [u8; 3],
    /// Seeded per-channel noise in `[-a, a]`; 0 disables it.
    pub noise_amplitude: u8,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            bounds: Vec2::new(100.0, 100.0),
            footprint: Vec2::new(20.0, 15.0),
            fpv_ahead_m: 8.0,
            drone_speed: 0.15,
            n_waypoints: 6,
            target_speed_max: 0.2,
            target_size_min: 0.8,
            target_size_max: 2.0,
            target_color: [255, 0, 0],
            noise_amplitude: 0,
        }
    }
}

/// Where a stream's frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub mode: SourceMode,
    pub resolution: Resolution,
    pub frame_rate_hz: f64,
    pub seed: u64,
    pub n_targets: usize,
    /// Sequence file for `file` mode.
    pub path: Option<String>,
    /// Listen address for `network` mode.
    pub endpoint: Option<String>,
    /// Stop after this many frames (synthetic mode).
    pub max_frames: Option<u64>,
    pub scene: SceneParams,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mode: SourceMode::Synthetic,
            resolution: Resolution::VGA,
            frame_rate_hz: 30.0,
            seed: 0,
            n_targets: 3,
            path: None,
            endpoint: None,
            max_frames: None,
            scene: SceneParams::default(),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(ConfigError::FrameRate(self.frame_rate_hz));
        }
        if self.resolution.width < 16 || self.resolution.height < 16 {
            return Err(ConfigError::Resolution(self.resolution));
        }
        if self.scene.noise_amplitude > MAX_NOISE_AMPLITUDE {
            return Err(ConfigError::Noise(self.scene.noise_amplitude));
        }
        let s = &self.scene;
        if !(s.target_size_min > 0.0 && s.target_size_max >= s.target_size_min) {
            return Err(ConfigError::Invalid("target sizes must be > 0".into()));
        }
        if s.target_size_max >= s.bounds.x.min(s.bounds.y) {
            return Err(ConfigError::Invalid("targets larger than the world".into()));
        }
        if !(s.footprint.x > 0.0 && s.footprint.y > 0.0) {
            return Err(ConfigError::Invalid("footprint must be positive".into()));
        }
        match self.mode {
            SourceMode::File if self.path.is_none() => {
                Err(ConfigError::Invalid("file mode needs a path".into()))
            }
            SourceMode::Network if self.endpoint.is_none() => {
                Err(ConfigError::Invalid("network mode needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn frame_period_ns(&self) -> u64 {
        (1e9 / self.frame_rate_hz).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Center, meters.
    pub pos: Vec2,
    /// Meters per frame.
    pub vel: Vec2,
    pub size: Vec2,
    pub color: [u8; 3],
}

impl Target {
    /// Half-open rectangle test.
    pub fn covers(&self, p: Vec2) -> bool {
        let hx = self.size.x * 0.5;
        let hy = self.size.y * 0.5;
        p.x >= self.pos.x - hx && p.x < self.pos.x + hx && p.y >= self.pos.y - hy && p.y < self.pos.y + hy
    }

    fn corners(&self) -> [Vec2; 4] {
        let hx = self.size.x * 0.5;
        let hy = self.size.y * 0.5;
        [
            Vec2::new(self.pos.x - hx, self.pos.y - hy),
            Vec2::new(self.pos.x + hx, self.pos.y - hy),
            Vec2::new(self.pos.x - hx, self.pos.y + hy),
            Vec2::new(self.pos.x + hx, self.pos.y + hy),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub seed: u64,
    pub frame_index: u64,
    pub bounds: Vec2,
    pub drone_pos: Vec2,
    /// Radians; direction `(cos, sin)` in world coordinates (y down).
    pub drone_heading: f64,
    pub targets: Vec<Target>,
}

/// The seeded, frame-independent part of a world: initial targets and the
/// drone's waypoint loop. `state_at(n)` is a closed-form function of `n`.
#[derive(Debug, Clone)]
pub struct WorldModel {
    seed: u64,
    bounds: Vec2,
    initial: Vec<Target>,
    waypoints: Vec<Vec2>,
    /// Cumulative loop length at the start of each segment.
    cumulative: Vec<f64>,
    loop_len: f64,
    drone_speed: f64,
}

impl WorldModel {
    pub fn new(config: &SourceConfig) -> Self {
        let p = &config.scene;
        let mut rng = SplitMix64::new(config.seed);
        let (bx, by) = (p.bounds.x, p.bounds.y);
        let waypoints: Vec<Vec2> = (0..p.n_waypoints.max(1))
            .map(|_| {
                let x = rng.range(0.1 * bx, 0.9 * bx);
                let y = rng.range(0.1 * by, 0.9 * by);
                Vec2::new(x, y)
            })
            .collect();
        let initial = (0..config.n_targets)
            .map(|_| {
                let w = rng.range(p.target_size_min, p.target_size_max);
                let h = rng.range(p.target_size_min, p.target_size_max);
                let x = rng.range(w * 0.5, bx - w * 0.5);
                let y = rng.range(h * 0.5, by - h * 0.5);
                let vx = rng.range(-p.target_speed_max, p.target_speed_max);
                let vy = rng.range(-p.target_speed_max, p.target_speed_max);
                Target {
                    pos: Vec2::new(x, y),
                    vel: Vec2::new(vx, vy),
                    size: Vec2::new(w, h),
                    color: p.target_color,
                }
            })
            .collect();

        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        for i in 0..waypoints.len() {
            cumulative.push(acc);
            let next = waypoints[(i + 1) % waypoints.len()];
            acc += next.sub(waypoints[i]).len();
        }
        Self {
            seed: config.seed,
            bounds: p.bounds,
            initial,
            waypoints,
            cumulative,
            loop_len: acc,
            drone_speed: p.drone_speed,
        }
    }

    pub fn initial_targets(&self) -> &[Target] {
        &self.initial
    }

    pub fn state_at(&self, n: u64) -> WorldState {
        let targets = self
            .initial
            .iter()
            .map(|t| {
                let (x, vx) = fold_axis(t.pos.x, t.vel.x, n, t.size.x * 0.5, self.bounds.x);
                let (y, vy) = fold_axis(t.pos.y, t.vel.y, n, t.size.y * 0.5, self.bounds.y);
                Target {
                    pos: Vec2::new(x, y),
                    vel: Vec2::new(vx, vy),
                    ..t.clone()
                }
            })
            .collect();
        let (drone_pos, drone_heading) = self.drone_at(n);
        WorldState {
            seed: self.seed,
            frame_index: n,
            bounds: self.bounds,
            drone_pos,
            drone_heading,
            targets,
        }
    }

    fn drone_at(&self, n: u64) -> (Vec2, f64) {
        let segs = self.waypoints.len();
        if self.loop_len <= 0.0 {
            return (self.waypoints[0], 0.0);
        }
        let s = (n as f64 * self.drone_speed).rem_euclid(self.loop_len);
        let i = match self.cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            k => k - 1,
        };
        let a = self.waypoints[i];
        let b = self.waypoints[(i + 1) % segs];
        let d = b.sub(a);
        let seg_len = d.len();
        if seg_len <= 0.0 {
            return (a, 0.0);
        }
        let t = ((s - self.cumulative[i]) / seg_len).clamp(0.0, 1.0);
        (a.add(d.scale(t)), d.y.atan2(d.x))
    }
}

/// Position and velocity on one axis after `n` steps of elastic bouncing
/// between `half` and `extent - half`, by unfolding the motion onto a line
/// of period twice the free span.
fn fold_axis(c0: f64, v: f64, n: u64, half: f64, extent: f64) -> (f64, f64) {
    let lo = half;
    let span = extent - 2.0 * half;
    if span <= 0.0 {
        return (lo, v);
    }
    let u = (c0 - lo) + n as f64 * v;
    let m = u.rem_euclid(2.0 * span);
    if m <= span {
        (lo + m, v)
    } else {
        (lo + 2.0 * span - m, -v)
    }
}

/// World state at frame `n`; a pure function of `(config, n)`.
pub fn world_at(config: &SourceConfig, n: u64) -> WorldState {
    WorldModel::new(config).state_at(n)
}

/// Orthographic view: pixel centers map affinely onto the ground plane.
/// Inclusive `(x0, x1, y0, y1)` pixel bounds.
type PixelSpan = (u32, u32, u32, u32);

#[derive(Debug, Clone, Copy)]
pub struct CameraView {
    center: Vec2,
    right: Vec2,
    down: Vec2,
    m_per_px: Vec2,
    width: u16,
    height: u16,
}

impl CameraView {
    pub fn new(world: &WorldState, which: StreamId, res: Resolution, params: &SceneParams) -> Self {
        let m_per_px = Vec2::new(
            params.footprint.x / res.width as f64,
            params.footprint.y / res.height as f64,
        );
        let (center, right, down) = match which {
            StreamId::Bottom => (world.drone_pos, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)),
            StreamId::Fpv => {
                let (s, c) = world.drone_heading.sin_cos();
                let forward = Vec2::new(c, s);
                (
                    world.drone_pos.add(forward.scale(params.fpv_ahead_m)),
                    Vec2::new(-s, c),
                    forward.scale(-1.0),
                )
            }
        };
        Self {
            center,
            right,
            down,
            m_per_px,
            width: res.width,
            height: res.height,
        }
    }

    /// Ground point under the center of pixel `(i, j)`.
    pub fn world_of_pixel(&self, i: u32, j: u32) -> Vec2 {
        let u = (i as f64 + 0.5 - self.width as f64 * 0.5) * self.m_per_px.x;
        let v = (j as f64 + 0.5 - self.height as f64 * 0.5) * self.m_per_px.y;
        self.center.add(self.right.scale(u)).add(self.down.scale(v))
    }

    /// Continuous pixel coordinates of a ground point, with pixel `(i, j)`'s
    /// center at `(i, j)`.
    fn pixel_of_world(&self, p: Vec2) -> (f64, f64) {
        let d = p.sub(self.center);
        (
            d.dot(self.right) / self.m_per_px.x + self.width as f64 * 0.5 - 0.5,
            d.dot(self.down) / self.m_per_px.y + self.height as f64 * 0.5 - 0.5,
        )
    }

    /// Pixel rows/columns that may hold part of `t`, clipped to the image.
    /// Inclusive ranges; `None` when fully outside.
    fn candidate_region(&self, t: &Target) -> Option<PixelSpan> {
        let pts = t.corners().map(|c| self.pixel_of_world(c));
        let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor() - 1.0;
        let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
        let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor() - 1.0;
        let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
        let (w, h) = (self.width as f64, self.height as f64);
        if max_x < 0.0 || max_y < 0.0 || min_x > w - 1.0 || min_y > h - 1.0 {
            return None;
        }
        Some((
            min_x.max(0.0) as u32,
            max_x.min(w - 1.0) as u32,
            min_y.max(0.0) as u32,
            max_y.min(h - 1.0) as u32,
        ))
    }
}

/// A target as seen by one camera: its exact painted pixel extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleTarget {
    pub target_index: usize,
    pub rect: PixelRect,
    pub bbox: BBox,
}

/// Renders camera frames and their ground truth for one resolution.
#[derive(Debug, Clone)]
pub struct Renderer {
    pub params: SceneParams,
    pub resolution: Resolution,
    pub mode: ExecMode,
}

impl Renderer {
    pub fn new(params: SceneParams, resolution: Resolution) -> Self {
        Self {
            params,
            resolution,
            mode: ExecMode::default(),
        }
    }

    pub fn for_config(config: &SourceConfig) -> Self {
        Self::new(config.scene.clone(), config.resolution)
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn render(&self, world: &WorldState, which: StreamId, seq: u64, capture_ts_ns: u64) -> Frame {
        let payload = self.render_pixels(world, which);
        let Resolution { width, height } = self.resolution;
        Frame::new(which, seq, capture_ts_ns, width, height, payload)
            .expect("renderer produces full frames")
    }

    pub fn render_pixels(&self, world: &WorldState, which: StreamId) -> Vec<u8> {
        let view = CameraView::new(world, which, self.resolution, &self.params);
        let regions: Vec<(&Target, PixelSpan)> = world
            .targets
            .iter()
            .filter_map(|t| view.candidate_region(t).map(|r| (t, r)))
            .collect();
        let width = self.resolution.width as usize;
        let mut buf = vec![0u8; width * self.resolution.height as usize * 3];
        let noise = self.params.noise_amplitude;
        let noise_key = mix(world.seed ^ mix(world.frame_index ^ ((which.wire_byte() as u64) << 56)));

        self.mode.for_each_row(&mut buf, width * 3, |j, row| {
            for px in row.chunks_exact_mut(3) {
                px.copy_from_slice(&BACKGROUND);
            }
            let j = j as u32;
            for (t, (x0, x1, y0, y1)) in &regions {
                if j < *y0 || j > *y1 {
                    continue;
                }
                for i in *x0..=*x1 {
                    if t.covers(view.world_of_pixel(i, j)) {
                        let o = i as usize * 3;
                        row[o..o + 3].copy_from_slice(&t.color);
                    }
                }
            }
            if noise > 0 {
                let base = j as u64 * width as u64 * 3;
                for (k, c) in row.iter_mut().enumerate() {
                    *c = add_noise(*c, noise, noise_key, base + k as u64);
                }
            }
        });
        buf
    }

    /// Exact pixel extent of every target that paints at least one pixel.
    pub fn ground_truth(&self, world: &WorldState, which: StreamId) -> Vec<VisibleTarget> {
        let view = CameraView::new(world, which, self.resolution, &self.params);
        let Resolution { width, height } = self.resolution;
        world
            .targets
            .iter()
            .enumerate()
            .filter_map(|(idx, t)| {
                let (x0, x1, y0, y1) = view.candidate_region(t)?;
                let mut ext: Option<(u32, u32, u32, u32)> = None;
                for j in y0..=y1 {
                    for i in x0..=x1 {
                        if t.covers(view.world_of_pixel(i, j)) {
                            ext = Some(match ext {
                                None => (i, i, j, j),
                                Some((a, b, c, d)) => (a.min(i), b.max(i), c.min(j), d.max(j)),
                            });
                        }
                    }
                }
                let (ax, bx, ay, by) = ext?;
                let rect = PixelRect {
                    x: ax,
                    y: ay,
                    w: bx - ax + 1,
                    h: by - ay + 1,
                };
                Some(VisibleTarget {
                    target_index: idx,
                    rect,
                    bbox: BBox::from_pixels(rect, width, height),
                })
            })
            .collect()
    }
}

fn add_noise(c: u8, amplitude: u8, key: u64, index: u64) -> u8 {
    let span = 2 * amplitude as u64 + 1;
    let delta = (mix(key ^ index) % span) as i16 - amplitude as i16;
    (c as i16 + delta).clamp(0, 255) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64, n_targets: usize) -> SourceConfig {
        SourceConfig {
            seed,
            n_targets,
            ..SourceConfig::default()
        }
    }

    fn world_with(targets: Vec<Target>) -> WorldState {
        WorldState {
            seed: 1,
            frame_index: 0,
            bounds: Vec2::new(100.0, 100.0),
            drone_pos: Vec2::new(50.0, 50.0),
            drone_heading: 0.0,
            targets,
        }
    }

    fn red(pos: Vec2, size: Vec2) -> Target {
        Target {
            pos,
            vel: Vec2::default(),
            size,
            color: [255, 0, 0],
        }
    }

    #[test]
    fn world_at_is_deterministic() {
        let c = config(42, 5);
        assert_eq!(world_at(&c, 0), world_at(&c, 0));
        assert_eq!(world_at(&c, 777), world_at(&c, 777));
        assert_ne!(world_at(&c, 0), world_at(&config(43, 5), 0));
    }

    #[test]
    fn bounce_at_right_edge() {
        // center at max - 0.5 with size 1: touching the boundary, moving out.
        let (x, vx) = fold_axis(99.5, 1.0, 1, 0.5, 100.0);
        assert_eq!(vx, -1.0);
        assert_eq!(x, 98.5);
    }

    #[test]
    fn targets_stay_in_bounds() {
        let c = config(9, 8);
        let m = WorldModel::new(&c);
        for n in (0..100_000).step_by(997) {
            let w = m.state_at(n);
            for t in &w.targets {
                assert!(t.pos.x - t.size.x / 2.0 >= -1e-9);
                assert!(t.pos.x + t.size.x / 2.0 <= 100.0 + 1e-9);
                assert!(t.pos.y - t.size.y / 2.0 >= -1e-9);
                assert!(t.pos.y + t.size.y / 2.0 <= 100.0 + 1e-9);
            }
            assert!((0.0..=100.0).contains(&w.drone_pos.x));
            assert!((0.0..=100.0).contains(&w.drone_pos.y));
        }
    }

    #[test]
    fn empty_view_is_uniform_gray() {
        let r = Renderer::new(SceneParams::default(), Resolution::new(64, 48));
        let w = world_with(vec![red(Vec2::new(5.0, 5.0), Vec2::new(1.0, 1.0))]);
        for which in StreamId::ALL {
            let px = r.render_pixels(&w, which);
            assert!(px.chunks(3).all(|p| p == BACKGROUND));
            assert!(r.ground_truth(&w, which).is_empty());
        }
    }

    #[test]
    fn bottom_target_under_drone_is_64px_square() {
        let r = Renderer::new(SceneParams::default(), Resolution::VGA);
        let w = world_with(vec![red(Vec2::new(50.0, 50.0), Vec2::new(2.0, 2.0))]);
        let f = r.render(&w, StreamId::Bottom, 0, 0);
        // Independent scan of the painted pixels.
        let (mut min_x, mut max_x, mut min_y, mut max_y, mut count) = (u32::MAX, 0, u32::MAX, 0, 0);
        for y in 0..480u32 {
            for x in 0..640u32 {
                let p = f.pixel(x as usize, y as usize);
                if p == [255, 0, 0] {
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                    count += 1;
                } else {
                    assert_eq!(p, BACKGROUND);
                }
            }
        }
        assert_eq!((max_x - min_x + 1, max_y - min_y + 1), (64, 64));
        assert_eq!(count, 64 * 64);
        assert_eq!((min_x, min_y), (288, 208));
        assert_eq!(
            r.ground_truth(&w, StreamId::Bottom)[0].rect,
            PixelRect { x: 288, y: 208, w: 64, h: 64 }
        );
    }

    #[test]
    fn fpv_sees_target_ahead_at_top_center() {
        let r = Renderer::new(SceneParams::default(), Resolution::VGA);
        // Heading east; FPV center is 8 m east. A target 12 m east sits 4 m
        // "up" from the view center.
        let w = world_with(vec![red(Vec2::new(62.0, 50.0), Vec2::new(2.0, 2.0))]);
        let gt = r.ground_truth(&w, StreamId::Fpv);
        assert_eq!(gt.len(), 1);
        let rect = gt[0].rect;
        assert_eq!((rect.w, rect.h), (64, 64));
        assert_eq!(rect.x, 288);
        // 4 m up = 128 px above center row 240.
        assert_eq!(rect.y, 240 - 128 - 32);
    }

    #[test]
    fn render_is_byte_identical_and_mode_independent() {
        let c = config(5, 30);
        let w = world_at(&c, 123);
        let seq = Renderer::for_config(&c).with_mode(ExecMode::Sequential);
        let par = Renderer::for_config(&c).with_mode(ExecMode::Parallel);
        for which in StreamId::ALL {
            assert_eq!(seq.render_pixels(&w, which), seq.render_pixels(&w, which));
            assert_eq!(seq.render_pixels(&w, which), par.render_pixels(&w, which));
        }
    }

    #[test]
    fn clipped_target_ground_truth() {
        let r = Renderer::new(SceneParams::default(), Resolution::VGA);
        // Left view edge is at x = 40 m; target spans 39..41 m.
        let w = world_with(vec![red(Vec2::new(40.0, 50.0), Vec2::new(2.0, 2.0))]);
        let gt = r.ground_truth(&w, StreamId::Bottom);
        assert_eq!(gt[0].rect, PixelRect { x: 0, y: 208, w: 32, h: 64 });
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let mut c = config(3, 0);
        c.scene.noise_amplitude = 8;
        c.resolution = Resolution::new(32, 32);
        let r = Renderer::for_config(&c);
        let w = world_at(&c, 4);
        let a = r.render_pixels(&w, StreamId::Bottom);
        assert_eq!(a, r.render_pixels(&w, StreamId::Bottom));
        assert!(a.iter().all(|&v| (56..=72).contains(&v)));
        assert!(a.iter().any(|&v| v != 64));
    }

    #[test]
    fn config_validation() {
        let mut c = SourceConfig::default();
        assert!(c.validate().is_ok());
        c.frame_rate_hz = 0.0;
        assert!(c.validate().is_err());
        let c = SourceConfig {
            resolution: Resolution::new(15, 100),
            ..SourceConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SourceConfig {
            mode: SourceMode::File,
            ..SourceConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn resolution_text_form() {
        assert_eq!("640x480".parse::<Resolution>().unwrap(), Resolution::VGA);
        assert!("640".parse::<Resolution>().is_err());
        assert_eq!(serde_json::to_string(&Resolution::VGA).unwrap(), "\"640x480\"");
    }
}
