//! Synthetic multi-person scenes seen by a ring of cameras, degraded into
//! detection frames with pixel noise, misses, occlusion, clutter and noisy
//! limb scores. Everything is a pure function of the configuration and seed.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detections::{
    default_topology, DetectionFrame, JointCandidate, PafMatrix, SkeletonTopology, ViewDetections,
};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraSet, Pixel, Point3};
use crate::graph::PersonId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    /// Smooth random walk inside the capture area with mutual repulsion.
    #[default]
    RandomWalk,
    /// Persons walk straight lines through the center, passing each other
    /// half way through the sequence.
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub persons: usize,
    pub views: usize,
    pub frames: usize,
    pub fps: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    /// Point the cameras look at, height above the floor (meters).
    pub target_height: f64,
    pub focal: f64,
    pub image_size: u32,
    /// Persons stay inside `[-h, h]^2` on the floor.
    pub area_half_extent: f64,
    /// Minimum distance between person roots at the start (meters).
    pub person_spacing: f64,
    pub motion: MotionModel,
    /// Typical walking speed (m/s).
    pub walk_speed: f64,
    /// Peak limb swing (radians).
    pub swing_amplitude: f64,
    /// Gait cycle length (seconds).
    pub gait_period: f64,
    /// Uniform scale applied to the rest skeleton.
    pub body_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            persons: 2,
            views: 5,
            frames: 100,
            fps: 30.0,
            ring_radius: 5.0,
            ring_height: 2.4,
            target_height: 1.0,
            focal: 1600.0,
            image_size: 2048,
            area_half_extent: 1.8,
            person_spacing: 0.9,
            motion: MotionModel::RandomWalk,
            walk_speed: 0.8,
            swing_amplitude: 0.45,
            gait_period: 1.2,
            body_scale: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::Config("scene needs at least one view".into()));
        }
        let positive = [
            ("fps", self.fps),
            ("ring_radius", self.ring_radius),
            ("focal", self.focal),
            ("area_half_extent", self.area_half_extent),
            ("gait_period", self.gait_period),
            ("body_scale", self.body_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if self.person_spacing < 0.0 || self.walk_speed < 0.0 || self.swing_amplitude < 0.0 {
            return Err(Error::Config("spacing, speed and swing must be non-negative".into()));
        }
        if self.ring_radius <= self.area_half_extent * std::f64::consts::SQRT_2 + 0.5 {
            return Err(Error::Config("camera ring must enclose the capture area".into()));
        }
        // disc packing bound: the persons' exclusion discs must fit the area
        let side = 2.0 * self.area_half_extent;
        let disc = std::f64::consts::PI * (self.person_spacing / 2.0).powi(2);
        if self.persons > 1 && disc * self.persons as f64 > 0.5 * side * side {
            return Err(Error::Config(format!(
                "{} persons with spacing {} m do not fit a {side} m capture area",
                self.persons, self.person_spacing
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian pixel noise per axis.
    pub pixel_sigma: f64,
    pub miss_probability: f64,
    /// Mean number of false candidates per joint type per view.
    pub clutter_rate: f64,
    pub paf_true_mean: f64,
    pub paf_true_sigma: f64,
    pub paf_false_mean: f64,
    pub paf_false_sigma: f64,
    pub occlusion: bool,
    /// Radius of the torso capsule that blocks rays (meters).
    pub occlusion_radius: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            miss_probability: 0.05,
            clutter_rate: 1.0,
            paf_true_mean: 0.85,
            paf_true_sigma: 0.1,
            paf_false_mean: 0.15,
            paf_false_sigma: 0.1,
            occlusion: true,
            occlusion_radius: 0.15,
        }
    }
}

impl NoiseConfig {
    /// Exact projections, no misses, no clutter, deterministic limb scores.
    pub fn none() -> Self {
        Self {
            pixel_sigma: 0.0,
            miss_probability: 0.0,
            clutter_rate: 0.0,
            paf_true_sigma: 0.0,
            paf_false_sigma: 0.0,
            occlusion: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.pixel_sigma, self.paf_true_sigma, self.paf_false_sigma, self.clutter_rate, self.occlusion_radius];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise scales and rates must be finite and >= 0".into()));
        }
        for (name, p) in [
            ("miss_probability", self.miss_probability),
            ("paf_true_mean", self.paf_true_mean),
            ("paf_false_mean", self.paf_false_mean),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Rest pose of a topology plus per-joint swing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTemplate {
    /// Rest offset of each joint from its parent (root: from the floor point).
    offsets: Vec<Vector3<f64>>,
    parents: Vec<Option<usize>>,
    order: Vec<usize>,
    /// Relative swing amplitude and phase per joint.
    swing: Vec<(f64, f64)>,
}

fn body19_rest() -> [Vector3<f64>; 19] {
    // x: person's left, y: forward, z: up
    let v = Vector3::new;
    [
        v(0.0, 0.0, 0.95),
        v(0.0, 0.0, 1.45),
        v(0.0, 0.08, 1.62),
        v(-0.19, 0.0, 1.42),
        v(-0.22, 0.0, 1.14),
        v(-0.23, 0.05, 0.88),
        v(0.19, 0.0, 1.42),
        v(0.22, 0.0, 1.14),
        v(0.23, 0.05, 0.88),
        v(-0.1, 0.0, 0.92),
        v(-0.11, 0.03, 0.5),
        v(-0.11, 0.0, 0.08),
        v(0.1, 0.0, 0.92),
        v(0.11, 0.03, 0.5),
        v(0.11, 0.0, 0.08),
        v(-0.035, 0.1, 1.67),
        v(0.035, 0.1, 1.67),
        v(-0.11, 0.17, 0.03),
        v(0.11, 0.17, 0.03),
    ]
}

impl SkeletonTemplate {
    /// A humanoid for the default topology, a downward-branching tree with
    /// 0.3 m bones for any other.
    pub fn for_topology(topo: &SkeletonTopology) -> Self {
        let (parents, order) = topo.parents();
        let n = topo.joint_count();
        let is_body = topo.hash() == default_topology().hash();
        let rest: Vec<Vector3<f64>> = if is_body {
            body19_rest().to_vec()
        } else {
            let mut rest = vec![Vector3::zeros(); n];
            let mut children = vec![0usize; n];
            for &j in &order {
                match parents[j] {
                    None => rest[j] = Vector3::new(0.0, 0.0, 1.6),
                    Some(p) => {
                        let k = children[p] as f64;
                        children[p] += 1;
                        rest[j] = rest[p] + Vector3::new(0.12 * k * if (k as usize).is_multiple_of(2) { 1.0 } else { -1.0 }, 0.0, -0.3);
                    }
                }
            }
            rest
        };
        let offsets = (0..n)
            .map(|j| match parents[j] {
                Some(p) => rest[j] - rest[p],
                None => rest[j],
            })
            .collect();
        let swing = (0..n)
            .map(|j| {
                if !is_body {
                    return (0.3, if j % 2 == 0 { 0.0 } else { std::f64::consts::PI });
                }
                let name = topo.joint_names()[j].as_str();
                let side = if name.starts_with("l_") { std::f64::consts::PI } else { 0.0 };
                if name.ends_with("elbow") || name.ends_with("wrist") {
                    (0.8, side + std::f64::consts::PI)
                } else if name.ends_with("knee") || name.ends_with("ankle") || name.ends_with("toe") {
                    (1.0, side)
                } else {
                    (0.05, 0.0)
                }
            })
            .collect();
        Self {
            offsets,
            parents,
            order,
            swing,
        }
    }

    /// Joint positions for a root floor point, heading and gait phase.
    pub fn pose(&self, root: Vector2<f64>, heading: f64, phase: f64, amplitude: f64, scale: f64) -> Vec<Point3> {
        let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), heading);
        let mut out = vec![Point3::zeros(); self.offsets.len()];
        for &j in &self.order {
            let o = self.offsets[j] * scale;
            out[j] = match self.parents[j] {
                None => Point3::new(root.x, root.y, 0.0) + yaw * o,
                Some(p) => {
                    let (a, ph) = self.swing[j];
                    let pitch = Rotation3::from_axis_angle(&Vector3::x_axis(), amplitude * a * (phase + ph).sin());
                    out[p] + yaw * (pitch * o)
                }
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtPerson {
    pub id: PersonId,
    pub joints: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cameras: CameraSet,
    /// `[frame][person]`
    pub frames: Vec<Vec<GtPerson>>,
}

fn camera_ring(cfg: &SceneConfig) -> Result<CameraSet> {
    let c = cfg.image_size as f64 / 2.0;
    let k = Matrix3::new(cfg.focal, 0.0, c, 0.0, cfg.focal, c, 0.0, 0.0, 1.0);
    let target = Vector3::new(0.0, 0.0, cfg.target_height);
    let cams = (0..cfg.views)
        .map(|i| {
            let a = TAU * i as f64 / cfg.views as f64 + 0.3;
            let eye = Vector3::new(cfg.ring_radius * a.cos(), cfg.ring_radius * a.sin(), cfg.ring_height);
            Camera::look_at(i, k, eye, target, Vector3::z(), cfg.image_size, cfg.image_size)
        })
        .collect::<Result<Vec<_>>>()?;
    CameraSet::new(cams)
}

fn initial_roots(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vector2<f64>>> {
    let h = cfg.area_half_extent * 0.8;
    let mut roots: Vec<Vector2<f64>> = Vec::with_capacity(cfg.persons);
    for _ in 0..cfg.persons {
        let mut placed = false;
        for _ in 0..10_000 {
            let p = Vector2::new(rng.gen_range(-h..=h), rng.gen_range(-h..=h));
            if roots.iter().all(|q| (p - q).norm() >= cfg.person_spacing) {
                roots.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place {} persons {} m apart",
                cfg.persons, cfg.person_spacing
            )));
        }
    }
    Ok(roots)
}

fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI
}

/// Root trajectories `[frame][person]` as (floor point, heading).
fn trajectories(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<(Vector2<f64>, f64)>>> {
    let dt = 1.0 / cfg.fps;
    let np = cfg.persons;
    match cfg.motion {
        MotionModel::Crossing => {
            let span = cfg.area_half_extent * 0.8;
            let lane = cfg.person_spacing / 2.0;
            let duration = cfg.frames.saturating_sub(1).max(1) as f64;
            Ok((0..cfg.frames)
                .map(|t| {
                    let s = -span + 2.0 * span * t as f64 / duration;
                    (0..np)
                        .map(|p| {
                            let dir = if p % 2 == 0 { 1.0 } else { -1.0 };
                            let offset = lane * (p as f64 - (np as f64 - 1.0) / 2.0);
                            let heading = if dir > 0.0 { -std::f64::consts::FRAC_PI_2 } else { std::f64::consts::FRAC_PI_2 };
                            (Vector2::new(dir * s, offset), heading)
                        })
                        .collect()
                })
                .collect())
        }
        MotionModel::RandomWalk => {
            let mut pos = initial_roots(cfg, rng)?;
            let mut heading: Vec<f64> = (0..np).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
            let mut vel: Vec<Vector2<f64>> =
                heading.iter().map(|h| cfg.walk_speed * Vector2::new(-h.sin(), h.cos())).collect();
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let theta = 0.5;
            let sigma = cfg.walk_speed;
            let max_turn = 3.0 * dt;
            let mut out = Vec::with_capacity(cfg.frames);
            for _ in 0..cfg.frames {
                out.push(pos.iter().copied().zip(heading.iter().copied()).collect());
                for p in 0..np {
                    let mut force = Vector2::zeros();
                    for q in 0..np {
                        if p == q {
                            continue;
                        }
                        let d = pos[p] - pos[q];
                        let dist = d.norm().max(1e-3);
                        if dist < 1.5 * cfg.person_spacing {
                            force += d / dist * (1.5 * cfg.person_spacing - dist) * 4.0;
                        }
                    }
                    let h = cfg.area_half_extent * 0.85;
                    for k in 0..2 {
                        if pos[p][k] > h {
                            force[k] -= 4.0 * (pos[p][k] - h + 0.1);
                        } else if pos[p][k] < -h {
                            force[k] += 4.0 * (-h - pos[p][k] + 0.1);
                        }
                    }
                    let noise = Vector2::new(normal.sample(rng), normal.sample(rng));
                    let dv = (-theta * vel[p] + force) * dt + sigma * dt.sqrt() * noise;
                    vel[p] += dv;
                    let speed = vel[p].norm();
                    if speed > 1.5 * cfg.walk_speed.max(0.1) {
                        vel[p] *= 1.5 * cfg.walk_speed.max(0.1) / speed;
                    }
                    pos[p] += vel[p] * dt;
                    if vel[p].norm() > 0.05 {
                        let want = f64::atan2(-vel[p].x, vel[p].y);
                        let turn = wrap_angle(want - heading[p]).clamp(-max_turn, max_turn);
                        heading[p] = wrap_angle(heading[p] + turn);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Cameras and ground-truth 3D joints for every frame.
pub fn generate_scene(cfg: &SceneConfig, topo: &SkeletonTopology, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = camera_ring(cfg)?;
    let template = SkeletonTemplate::for_topology(topo);
    let phase0: Vec<f64> = (0..cfg.persons).map(|_| rng.gen_range(0.0..TAU)).collect();
    let paths = trajectories(cfg, &mut rng)?;
    let frames = paths
        .iter()
        .enumerate()
        .map(|(t, roots)| {
            roots
                .iter()
                .enumerate()
                .map(|(p, (root, heading))| GtPerson {
                    id: PersonId(p as u64),
                    joints: template.pose(
                        *root,
                        *heading,
                        phase0[p] + TAU * t as f64 / (cfg.fps * cfg.gait_period),
                        cfg.swing_amplitude,
                        cfg.body_scale,
                    ),
                })
                .collect()
        })
        .collect();
    Ok(Scene { cameras, frames })
}

/// Ground truth for one frame in one view: `index[person][joint]` is the
/// candidate carrying that true joint, if it was emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtView {
    pub camera: usize,
    pub index: Vec<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub frame: usize,
    pub persons: Vec<GtPerson>,
    pub views: Vec<GtView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub version: u32,
    pub topology_hash: String,
    pub frames: Vec<GtFrame>,
}

pub const GROUND_TRUTH_VERSION: u32 = 1;

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ground truth serializes")
    }

    pub fn from_json(text: &str, topo: &SkeletonTopology) -> Result<Self> {
        let gt: Self = serde_json::from_str(text).map_err(|e| Error::parse("ground truth", e.to_string()))?;
        if gt.version != GROUND_TRUTH_VERSION {
            return Err(Error::parse("ground truth", format!("unsupported version {}", gt.version)));
        }
        if gt.topology_hash != topo.hash() {
            return Err(Error::parse("ground truth", "topology hash mismatch"));
        }
        for f in &gt.frames {
            if f.persons.iter().any(|p| p.joints.len() != topo.joint_count()) {
                return Err(Error::parse(format!("ground truth frame {}", f.frame), "wrong joint count"));
            }
        }
        Ok(gt)
    }

    pub fn load(path: &std::path::Path, topo: &SkeletonTopology) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, topo)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(p0: &Point3, p1: &Point3, q0: &Point3, q1: &Point3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-15 && e <= 1e-15 {
        return r.norm();
    }
    if a <= 1e-15 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-15 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-15 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

fn torso(topo: &SkeletonTopology) -> (usize, usize) {
    let names = topo.joint_names();
    let find = |n: &str| names.iter().position(|x| x == n);
    match (find("pelvis"), find("neck")) {
        (Some(a), Some(b)) => (a, b),
        _ => topo.limb(0),
    }
}

/// Whether the sight line from `eye` to joint `x` of person `owner` passes
/// through another person's torso capsule.
pub fn is_occluded(eye: &Point3, x: &Point3, owner: usize, persons: &[GtPerson], torso: (usize, usize), radius: f64) -> bool {
    persons.iter().enumerate().any(|(q, other)| {
        q != owner && segment_distance(eye, x, &other.joints[torso.0], &other.joints[torso.1]) < radius
    })
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn render_frame(
    t: usize,
    persons: &[GtPerson],
    cams: &CameraSet,
    noise: &NoiseConfig,
    topo: &SkeletonTopology,
    seed: u64,
) -> (DetectionFrame, GtFrame) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64 + 1);
    let nj = topo.joint_count();
    let pix = Normal::new(0.0, noise.pixel_sigma).expect("finite sigma");
    let paf_true = Normal::new(noise.paf_true_mean, noise.paf_true_sigma).expect("finite sigma");
    let paf_false = Normal::new(noise.paf_false_mean, noise.paf_false_sigma).expect("finite sigma");
    let clutter = (noise.clutter_rate > 0.0).then(|| Poisson::new(noise.clutter_rate).expect("positive rate"));
    let torso = torso(topo);

    let mut views = Vec::with_capacity(cams.len());
    let mut gt_views = Vec::with_capacity(cams.len());
    for cam in cams.iter() {
        let (w, h) = cam.image_size();
        // owner: Some((person, joint)) or None for clutter
        let mut raw: Vec<Vec<(Pixel, f64, Option<usize>)>> = vec![Vec::new(); nj];
        let mut boxes: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (p, person) in persons.iter().enumerate() {
            let mut bbox = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, x) in person.joints.iter().enumerate() {
                let Ok(px) = cam.project(x) else { continue };
                bbox = (bbox.0.min(px.u), bbox.1.min(px.v), bbox.2.max(px.u), bbox.3.max(px.v));
                if noise.occlusion && is_occluded(cam.center(), x, p, persons, torso, noise.occlusion_radius) {
                    continue;
                }
                if noise.miss_probability > 0.0 && rng.gen_bool(noise.miss_probability) {
                    continue;
                }
                let q = if noise.pixel_sigma > 0.0 {
                    Pixel::new(px.u + pix.sample(&mut rng), px.v + pix.sample(&mut rng))
                } else {
                    px
                };
                if !cam.contains(&q) {
                    continue;
                }
                let conf = clamp01(0.9 + 0.05 * rng.gen_range(-1.0..1.0));
                raw[j].push((q, conf, Some(p)));
            }
            if bbox.0.is_finite() {
                boxes.push(bbox);
            }
        }
        if let Some(dist) = clutter {
            for cands in raw.iter_mut() {
                let count = dist.sample(&mut rng) as usize;
                for _ in 0..count {
                    let (u0, v0, u1, v1) = if boxes.is_empty() {
                        (0.0, 0.0, w as f64, h as f64)
                    } else {
                        let b = boxes[rng.gen_range(0..boxes.len())];
                        let (mu, mv) = (0.1 * (b.2 - b.0) + 1.0, 0.1 * (b.3 - b.1) + 1.0);
                        (b.0 - mu, b.1 - mv, b.2 + mu, b.3 + mv)
                    };
                    let q = Pixel::new(
                        rng.gen_range(u0..u1).clamp(0.0, w as f64 - 1.0),
                        rng.gen_range(v0..v1).clamp(0.0, h as f64 - 1.0),
                    );
                    cands.push((q, clamp01(rng.gen_range(0.2..0.8)), None));
                }
            }
        }
        for cands in raw.iter_mut() {
            cands.shuffle(&mut rng);
        }

        let mut index = vec![vec![None; nj]; persons.len()];
        for (j, cands) in raw.iter().enumerate() {
            for (c, (_, _, owner)) in cands.iter().enumerate() {
                if let Some(p) = owner {
                    index[*p][j] = Some(c);
                }
            }
        }
        let pafs = topo
            .limbs()
            .iter()
            .map(|&(a, b)| {
                let (ra, rb) = (&raw[a], &raw[b]);
                let mut m = PafMatrix::zeros(ra.len(), rb.len());
                for (i, x) in ra.iter().enumerate() {
                    for (k, y) in rb.iter().enumerate() {
                        let same = x.2.is_some() && x.2 == y.2;
                        let s = if same { paf_true.sample(&mut rng) } else { paf_false.sample(&mut rng) };
                        m.set(i, k, clamp01(s));
                    }
                }
                m
            })
            .collect();
        views.push(ViewDetections {
            camera: cam.id(),
            joints: raw
                .into_iter()
                .map(|cs| cs.into_iter().map(|(q, conf, _)| JointCandidate { pixel: q, confidence: conf }).collect())
                .collect(),
            pafs,
        });
        gt_views.push(GtView { camera: cam.id(), index });
    }
    (
        DetectionFrame { index: t, views },
        GtFrame {
            frame: t,
            persons: persons.to_vec(),
            views: gt_views,
        },
    )
}

/// Degrades a scene into detection frames and the matching ground truth.
pub fn render_detections(
    scene: &Scene,
    noise: &NoiseConfig,
    topo: &SkeletonTopology,
    seed: u64,
) -> Result<(Vec<DetectionFrame>, GroundTruth)> {
    noise.validate()?;
    let (frames, gt): (Vec<_>, Vec<_>) = scene
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, persons)| render_frame(t, persons, &scene.cameras, noise, topo, seed))
        .unzip();
    Ok((
        frames,
        GroundTruth {
            version: GROUND_TRUTH_VERSION,
            topology_hash: topo.hash(),
            frames: gt,
        },
    ))
}

/// Scene and detections in one call.
pub fn synthesize(
    scene_cfg: &SceneConfig,
    noise: &NoiseConfig,
    topo: &SkeletonTopology,
    seed: u64,
) -> Result<(Scene, Vec<DetectionFrame>, GroundTruth)> {
    let scene = generate_scene(scene_cfg, topo, seed)?;
    let (frames, gt) = render_detections(&scene, noise, topo, seed.wrapping_add(0x9e37_79b9))?;
    Ok((scene, frames, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bone_lengths(topo: &SkeletonTopology, joints: &[Point3]) -> Vec<f64> {
        topo.limbs().iter().map(|&(a, b)| (joints[a] - joints[b]).norm()).collect()
    }

    #[test]
    fn bones_are_rigid() {
        let topo = default_topology();
        let cfg = SceneConfig {
            persons: 4,
            frames: 300,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg, &topo, 3).unwrap();
        let rest = SkeletonTemplate::for_topology(&topo);
        for frame in &scene.frames {
            for p in frame {
                let lens = bone_lengths(&topo, &p.joints);
                for (l, &(_, b)) in topo.limbs().iter().enumerate() {
                    assert!((lens[l] - rest.offsets[b].norm()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let topo = default_topology();
        let cfg = SceneConfig::default();
        let a = synthesize(&cfg, &NoiseConfig::default(), &topo, 11).unwrap();
        let b = synthesize(&cfg, &NoiseConfig::default(), &topo, 11).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn noiseless_candidates_are_projections() {
        let topo = default_topology();
        let cfg = SceneConfig {
            frames: 3,
            ..SceneConfig::default()
        };
        let (scene, frames, gt) = synthesize(&cfg, &NoiseConfig::none(), &topo, 5).unwrap();
        for (f, g) in frames.iter().zip(&gt.frames) {
            for (view, gv) in f.views.iter().zip(&g.views) {
                let cam = scene.cameras.get(view.camera).unwrap();
                for (p, person) in g.persons.iter().enumerate() {
                    for j in 0..topo.joint_count() {
                        let c = gv.index[p][j].expect("no misses without noise");
                        let px = cam.project(&person.joints[j]).unwrap();
                        assert_eq!(view.joints[j][c].pixel, px);
                    }
                }
                for (l, &(a, b)) in topo.limbs().iter().enumerate() {
                    for p in 0..g.persons.len() {
                        let (m, n) = (gv.index[p][a].unwrap(), gv.index[p][b].unwrap());
                        assert_eq!(view.pafs[l].get(m, n), 0.85);
                    }
                }
            }
        }
    }

    #[test]
    fn certain_miss_empties_frames() {
        let topo = default_topology();
        let noise = NoiseConfig {
            miss_probability: 1.0,
            clutter_rate: 0.0,
            ..NoiseConfig::default()
        };
        let (_, frames, _) = synthesize(&SceneConfig { frames: 4, ..SceneConfig::default() }, &noise, &topo, 1).unwrap();
        assert!(frames.iter().all(|f| f.candidate_count() == 0));
    }

    #[test]
    fn occluded_joints_are_never_emitted() {
        let topo = default_topology();
        let cfg = SceneConfig {
            persons: 4,
            frames: 20,
            ..SceneConfig::default()
        };
        let noise = NoiseConfig {
            pixel_sigma: 0.0,
            miss_probability: 0.0,
            clutter_rate: 0.0,
            ..NoiseConfig::default()
        };
        let (scene, _, gt) = synthesize(&cfg, &noise, &topo, 8).unwrap();
        let t = torso(&topo);
        let mut hidden = 0;
        for g in &gt.frames {
            for gv in &g.views {
                let cam = scene.cameras.get(gv.camera).unwrap();
                for (p, person) in g.persons.iter().enumerate() {
                    for j in 0..topo.joint_count() {
                        if is_occluded(cam.center(), &person.joints[j], p, &g.persons, t, 0.15) {
                            hidden += 1;
                            assert!(gv.index[p][j].is_none());
                        }
                    }
                }
            }
        }
        assert!(hidden > 0);
    }

    #[test]
    fn pixel_noise_matches_sigma() {
        let topo = default_topology();
        let cfg = SceneConfig {
            persons: 1,
            frames: 120,
            ..SceneConfig::default()
        };
        let noise = NoiseConfig {
            miss_probability: 0.0,
            clutter_rate: 0.0,
            occlusion: false,
            ..NoiseConfig::default()
        };
        let (scene, frames, gt) = synthesize(&cfg, &noise, &topo, 2).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for (f, g) in frames.iter().zip(&gt.frames) {
            for (view, gv) in f.views.iter().zip(&g.views) {
                let cam = scene.cameras.get(view.camera).unwrap();
                for j in 0..topo.joint_count() {
                    if let Some(c) = gv.index[0][j] {
                        let px = cam.project(&g.persons[0].joints[j]).unwrap();
                        let q = view.joints[j][c].pixel;
                        sum += (q.u - px.u).powi(2) + (q.v - px.v).powi(2);
                        n += 1;
                    }
                }
            }
        }
        assert!(n >= 10_000);
        let rms = (sum / n as f64).sqrt();
        assert!((rms - 2.0 * 2f64.sqrt()).abs() < 0.05 * 2.0 * 2f64.sqrt(), "{rms}");
    }

    #[test]
    fn crowded_area_is_rejected() {
        let cfg = SceneConfig {
            persons: 40,
            person_spacing: 1.0,
            ..SceneConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn segment_distance_cases() {
        let o = Point3::zeros();
        let x = Point3::new(1.0, 0.0, 0.0);
        assert!((segment_distance(&o, &x, &Point3::new(0.5, 1.0, -1.0), &Point3::new(0.5, 1.0, 1.0)) - 1.0).abs() < 1e-12);
        assert!((segment_distance(&o, &x, &Point3::new(2.0, 0.0, 0.0), &Point3::new(3.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
    }
}
