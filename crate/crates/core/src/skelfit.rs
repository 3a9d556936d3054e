//! 3D skeletons from assembled persons: per-joint triangulation, then a
//! damped least-squares refinement over free joint positions with data,
//! bone-shape and temporal terms.
//!
//! The data term measures point-to-ray distance in meters, so all three terms
//! share units.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::detections::{DetectionFrame, SkeletonTopology};
use crate::error::{Error, Result};
use crate::geometry::{point_line_distance, triangulate_rays, CameraSet, Point3, Ray};
use crate::graph::PersonId;
use crate::solver::AssembledPerson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub w_2d: f64,
    pub w_shape: f64,
    pub w_temp: f64,
    pub max_iterations: usize,
    /// Largest per-joint step (meters) at which the fit counts as converged.
    pub tolerance: f64,
    /// Views a joint needs to count as high-confidence for bone sampling.
    pub bone_min_views: usize,
    /// Samples after which a bone length is locked.
    pub bone_samples: usize,
    /// RMS ray distance (meters) above which the worst view of a joint is
    /// dropped before triangulating again.
    pub outlier_residual: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            w_2d: 1.0,
            w_shape: 0.01,
            w_temp: 0.005,
            max_iterations: 20,
            tolerance: 1e-5,
            bone_min_views: 3,
            bone_samples: 5,
            outlier_residual: 0.08,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_2d", self.w_2d), ("w_shape", self.w_shape), ("w_temp", self.w_temp)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.tolerance > 0.0) || !(self.outlier_residual > 0.0) {
            return Err(Error::Config("tolerance and outlier_residual must be positive".into()));
        }
        if self.bone_samples == 0 {
            return Err(Error::Config("bone_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub id: PersonId,
    pub frame: usize,
    pub joints: Vec<Option<Point3>>,
    /// Mean confidence of the detections behind each joint; 0 when absent or
    /// inferred.
    pub confidence: Vec<f64>,
    /// Joints placed by the shape and temporal terms rather than by two or
    /// more views.
    pub inferred: Vec<bool>,
}

impl Skeleton3D {
    pub fn empty(id: PersonId, frame: usize, joint_count: usize) -> Self {
        Self {
            id,
            frame,
            joints: vec![None; joint_count],
            confidence: vec![0.0; joint_count],
            inferred: vec![false; joint_count],
        }
    }

    pub fn present_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub view: usize,
    pub ray: Ray,
    pub confidence: f64,
}

/// Triangulated person plus the detections that support each joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulated {
    pub skeleton: Skeleton3D,
    /// Per joint: every assigned observation.
    pub observations: Vec<Vec<JointObservation>>,
    /// Per joint: views kept by outlier rejection (empty when absent).
    pub inliers: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl Triangulated {
    /// Number of views supporting each triangulated joint.
    pub fn visibility(&self) -> Vec<usize> {
        self.inliers.iter().map(Vec::len).collect()
    }
}

/// Rays of every candidate assigned to `person`, per joint.
pub fn gather_observations(
    person: &AssembledPerson,
    frame: &DetectionFrame,
    cams: &CameraSet,
) -> Result<Vec<Vec<JointObservation>>> {
    person
        .joints
        .iter()
        .enumerate()
        .map(|(j, views)| {
            views
                .iter()
                .enumerate()
                .filter_map(|(v, c)| c.map(|c| (v, c)))
                .map(|(v, c)| {
                    let view = frame
                        .views
                        .get(v)
                        .ok_or_else(|| Error::Mismatch(format!("frame {} has no view {v}", frame.index)))?;
                    let cam = cams
                        .get(view.camera)
                        .ok_or_else(|| Error::Config(format!("no calibration for camera {}", view.camera)))?;
                    let cand = view.joints.get(j).and_then(|cs| cs.get(c)).ok_or_else(|| {
                        Error::Mismatch(format!("frame {} view {v} joint {j}: no candidate {c}", frame.index))
                    })?;
                    Ok(JointObservation {
                        view: v,
                        ray: cam.back_project(&cand.pixel),
                        confidence: cand.confidence,
                    })
                })
                .collect()
        })
        .collect()
}

/// Least-squares point of `obs`, dropping the worst ray while the RMS distance
/// exceeds `max_residual` and at least three rays remain. Returns the point and
/// the kept indices, or `None` when two rays still disagree.
fn robust_point(obs: &[JointObservation], max_residual: f64) -> Result<Option<(Point3, Vec<usize>)>> {
    let mut keep: Vec<usize> = (0..obs.len()).collect();
    loop {
        let rays: Vec<Ray> = keep.iter().map(|&i| obs[i].ray).collect();
        let t = triangulate_rays(&rays)?;
        if t.residual <= max_residual {
            return Ok(Some((t.point, keep)));
        }
        if keep.len() <= 2 {
            return Ok(None);
        }
        let worst = (0..keep.len())
            .max_by(|&a, &b| {
                point_line_distance(&t.point, &rays[a]).total_cmp(&point_line_distance(&t.point, &rays[b]))
            })
            .unwrap_or(0);
        keep.remove(worst);
    }
}

/// Triangulates every joint of `person` seen in two or more views. Joints with
/// degenerate or inconsistent rays are left absent and reported in `warnings`.
pub fn triangulate_person(
    person: &AssembledPerson,
    frame: &DetectionFrame,
    cams: &CameraSet,
    cfg: &FitConfig,
) -> Result<Triangulated> {
    let observations = gather_observations(person, frame, cams)?;
    let nj = observations.len();
    let mut skeleton = Skeleton3D::empty(person.id, frame.index, nj);
    let mut inliers = vec![Vec::new(); nj];
    let mut warnings = Vec::new();
    for (j, obs) in observations.iter().enumerate() {
        if obs.len() < 2 {
            continue;
        }
        match robust_point(obs, cfg.outlier_residual) {
            Ok(Some((x, keep))) => {
                skeleton.joints[j] = Some(x);
                skeleton.confidence[j] = keep.iter().map(|&i| obs[i].confidence).sum::<f64>() / keep.len() as f64;
                inliers[j] = keep.iter().map(|&i| obs[i].view).collect();
            }
            Ok(None) => warnings.push(format!("person {} joint {j}: views disagree", person.id)),
            Err(e) => warnings.push(format!("person {} joint {j}: {e}", person.id)),
        }
    }
    Ok(Triangulated {
        skeleton,
        observations,
        inliers,
        warnings,
    })
}

/// Per-person bone lengths averaged over the first high-confidence frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLengthState {
    pub id: PersonId,
    samples: Vec<Vec<f64>>,
    capacity: usize,
}

impl BoneLengthState {
    pub fn new(id: PersonId, limb_count: usize, cfg: &FitConfig) -> Self {
        Self {
            id,
            samples: vec![Vec::new(); limb_count],
            capacity: cfg.bone_samples,
        }
    }

    pub fn sample_count(&self, limb: usize) -> usize {
        self.samples[limb].len()
    }

    pub fn is_locked(&self, limb: usize) -> bool {
        self.samples[limb].len() >= self.capacity
    }

    /// Mean of the samples taken so far, or `None` before the first sample.
    pub fn mean(&self, limb: usize) -> Option<f64> {
        let s = &self.samples[limb];
        if s.is_empty() {
            return None;
        }
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
    }

    /// Adds a sample for every unlocked limb whose endpoints are both present
    /// and seen in at least `bone_min_views` views.
    pub fn update(&mut self, skel: &Skeleton3D, visibility: &[usize], topo: &SkeletonTopology, cfg: &FitConfig) {
        for (l, &(a, b)) in topo.limbs().iter().enumerate() {
            if self.is_locked(l) || visibility[a] < cfg.bone_min_views || visibility[b] < cfg.bone_min_views {
                continue;
            }
            if let (Some(xa), Some(xb)) = (skel.joints[a], skel.joints[b]) {
                let len = (xa - xb).norm();
                if len > 0.0 {
                    self.samples[l].push(len);
                }
            }
        }
    }
}

/// The refinement objective over a fixed set of free joints.
#[derive(Debug, Clone)]
pub struct FitProblem {
    /// Joint index of each 3-vector block.
    vars: Vec<usize>,
    /// Per block: (origin, projector onto the ray's normal plane).
    rays: Vec<Vec<(Point3, Matrix3<f64>)>>,
    prev: Vec<Option<Point3>>,
    /// (block a, block b, target length)
    bones: Vec<(usize, usize, f64)>,
    /// ((a, b), (c, d)) block pairs of symmetric limbs.
    symmetric: Vec<((usize, usize), (usize, usize))>,
    s2d: f64,
    sshape: f64,
    stemp: f64,
}

fn projector(ray: &Ray) -> (Point3, Matrix3<f64>) {
    let d = ray.direction();
    (*ray.origin(), Matrix3::identity() - d * d.transpose())
}

impl FitProblem {
    /// Builds the problem for the joints present in `init`.
    pub fn new(
        topo: &SkeletonTopology,
        init: &[Option<Point3>],
        rays: &[Vec<Ray>],
        prev: Option<&[Option<Point3>]>,
        bones: Option<&BoneLengthState>,
        cfg: &FitConfig,
    ) -> Self {
        let vars: Vec<usize> = (0..init.len()).filter(|&j| init[j].is_some()).collect();
        let mut block = vec![None; init.len()];
        for (i, &j) in vars.iter().enumerate() {
            block[j] = Some(i);
        }
        let mut bone_terms = Vec::new();
        let mut limb_blocks = vec![None; topo.limb_count()];
        for (l, &(a, b)) in topo.limbs().iter().enumerate() {
            if let (Some(ba), Some(bb)) = (block[a], block[b]) {
                limb_blocks[l] = Some((ba, bb));
                if let Some(len) = bones.and_then(|s| s.mean(l)) {
                    bone_terms.push((ba, bb, len));
                }
            }
        }
        let symmetric = topo
            .symmetric_limbs()
            .iter()
            .filter_map(|&(l1, l2)| Some((limb_blocks[l1]?, limb_blocks[l2]?)))
            .collect();
        Self {
            rays: vars.iter().map(|&j| rays[j].iter().map(projector).collect()).collect(),
            prev: vars.iter().map(|&j| prev.and_then(|p| p.get(j).copied().flatten())).collect(),
            vars,
            bones: bone_terms,
            symmetric,
            s2d: cfg.w_2d.sqrt(),
            sshape: cfg.w_shape.sqrt(),
            stemp: cfg.w_temp.sqrt(),
        }
    }

    pub fn dimension(&self) -> usize {
        3 * self.vars.len()
    }

    /// Joint index of each block.
    pub fn joints(&self) -> &[usize] {
        &self.vars
    }

    pub fn pack(&self, joints: &[Option<Point3>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.dimension());
        for (i, &j) in self.vars.iter().enumerate() {
            if let Some(p) = joints[j] {
                x.fixed_rows_mut::<3>(3 * i).copy_from(&p);
            }
        }
        x
    }

    fn point(x: &DVector<f64>, i: usize) -> Point3 {
        x.fixed_rows::<3>(3 * i).into_owned()
    }

    fn residual_count(&self) -> usize {
        3 * self.rays.iter().map(Vec::len).sum::<usize>()
            + self.bones.len()
            + self.symmetric.len()
            + 3 * self.prev.iter().filter(|p| p.is_some()).count()
    }

    /// Residual vector and its Jacobian at `x`.
    pub fn linearize(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.residual_count();
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, self.dimension());
        let mut row = 0;
        for (i, rays) in self.rays.iter().enumerate() {
            let p = Self::point(x, i);
            for (o, proj) in rays {
                r.fixed_rows_mut::<3>(row).copy_from(&(self.s2d * proj * (p - o)));
                jac.fixed_view_mut::<3, 3>(row, 3 * i).copy_from(&(self.s2d * proj));
                row += 3;
            }
        }
        for &(a, b, len) in &self.bones {
            let e = Self::point(x, a) - Self::point(x, b);
            let norm = e.norm().max(1e-12);
            r[row] = self.sshape * (norm - len);
            let u = self.sshape * e / norm;
            jac.fixed_view_mut::<1, 3>(row, 3 * a).copy_from(&u.transpose());
            jac.fixed_view_mut::<1, 3>(row, 3 * b).copy_from(&(-u).transpose());
            row += 1;
        }
        for &((a, b), (c, d)) in &self.symmetric {
            let e1 = Self::point(x, a) - Self::point(x, b);
            let e2 = Self::point(x, c) - Self::point(x, d);
            let (n1, n2) = (e1.norm().max(1e-12), e2.norm().max(1e-12));
            r[row] = self.sshape * (n1 - n2);
            let u1 = (self.sshape * e1 / n1).transpose();
            let u2 = (self.sshape * e2 / n2).transpose();
            // blocks may coincide, so accumulate
            for (blk, g) in [(a, u1), (b, -u1), (c, -u2), (d, u2)] {
                let mut v = jac.fixed_view_mut::<1, 3>(row, 3 * blk);
                v += g;
            }
            row += 1;
        }
        for (i, prev) in self.prev.iter().enumerate() {
            if let Some(q) = prev {
                r.fixed_rows_mut::<3>(row).copy_from(&(self.stemp * (Self::point(x, i) - q)));
                jac.fixed_view_mut::<3, 3>(row, 3 * i).fill_diagonal(self.stemp);
                row += 3;
            }
        }
        debug_assert_eq!(row, n);
        (r, jac)
    }

    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        self.linearize(x).0.norm_squared()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (r, jac) = self.linearize(x);
        2.0 * jac.transpose() * r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub skeleton: Skeleton3D,
    pub converged: bool,
    pub iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// Levenberg-Marquardt on `problem` from `x`. Only steps that lower the
/// energy are accepted.
pub fn minimize(problem: &FitProblem, mut x: DVector<f64>, cfg: &FitConfig) -> (DVector<f64>, bool, usize, f64, f64) {
    let (mut r, mut jac) = problem.linearize(&x);
    let initial = r.norm_squared();
    let mut energy = initial;
    let mut lambda = 1e-3;
    let mut converged = problem.dimension() == 0;
    let mut iterations = 0;
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut accepted = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-9);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let trial = &x + &step;
            let (tr, tj) = problem.linearize(&trial);
            let te = tr.norm_squared();
            if te <= energy {
                let largest = step.as_slice().chunks(3).map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()).fold(0.0, f64::max);
                x = trial;
                r = tr;
                jac = tj;
                energy = te;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                converged = largest < cfg.tolerance;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at this damping
            converged = true;
        }
    }
    (x, converged, iterations, initial, energy)
}

/// Refines a triangulated person. Absent joints adjacent to a present joint
/// are added as inferred when their previous position or a single view plus a
/// known bone length constrains them.
pub fn fit_parametric(
    tri: &Triangulated,
    prev: Option<&Skeleton3D>,
    bones: Option<&BoneLengthState>,
    topo: &SkeletonTopology,
    cfg: &FitConfig,
) -> FitResult {
    let nj = topo.joint_count();
    let mut init = tri.skeleton.joints.clone();
    let mut inferred = vec![false; nj];
    let prev_joints = prev.map(|p| p.joints.as_slice());
    let rays: Vec<Vec<Ray>> = (0..nj)
        .map(|j| {
            if tri.skeleton.joints[j].is_some() {
                let keep = &tri.inliers[j];
                tri.observations[j].iter().filter(|o| keep.contains(&o.view)).map(|o| o.ray).collect()
            } else {
                tri.observations[j].iter().map(|o| o.ray).collect()
            }
        })
        .collect();

    for (l, &(a, b)) in topo.limbs().iter().enumerate() {
        for (missing, anchor) in [(a, b), (b, a)] {
            let Some(base) = tri.skeleton.joints[anchor] else { continue };
            if init[missing].is_some() {
                continue;
            }
            let from_prev = prev_joints.and_then(|p| p.get(missing).copied().flatten());
            let seed = match (from_prev, rays[missing].first(), bones.and_then(|s| s.mean(l))) {
                (Some(p), _, _) => Some(p),
                (None, Some(ray), Some(_)) => {
                    let s = (base - ray.origin()).dot(ray.direction());
                    Some(ray.at(s))
                }
                _ => None,
            };
            if let Some(p) = seed {
                init[missing] = Some(p);
                inferred[missing] = true;
            }
        }
    }

    let problem = FitProblem::new(topo, &init, &rays, prev_joints, bones, cfg);
    let x0 = problem.pack(&init);
    let (x, converged, iterations, initial_energy, final_energy) = minimize(&problem, x0, cfg);
    let mut skeleton = tri.skeleton.clone();
    for (i, &j) in problem.joints().iter().enumerate() {
        skeleton.joints[j] = Some(x.fixed_rows::<3>(3 * i).into_owned());
    }
    skeleton.inferred = inferred;
    FitResult {
        skeleton,
        converged,
        iterations,
        initial_energy,
        final_energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::default_topology;
    use crate::geometry::Camera;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> Vec<Camera> {
        let k = Matrix3::new(1600.0, 0.0, 1024.0, 0.0, 1600.0, 1024.0, 0.0, 0.0, 1.0);
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                Camera::look_at(i, k, Vector3::new(5.0 * a.cos(), 5.0 * a.sin(), 2.5), Vector3::new(0.0, 0.0, 1.0), Vector3::z(), 2048, 2048)
                    .unwrap()
            })
            .collect()
    }

    fn rays_to(cams: &[Camera], x: &Point3) -> Vec<Ray> {
        cams.iter().map(|c| c.back_project(&c.project(x).unwrap())).collect()
    }

    #[test]
    fn bone_state_locks_after_samples() {
        let topo = SkeletonTopology::chain(2).unwrap();
        let cfg = FitConfig::default();
        let mut st = BoneLengthState::new(PersonId(0), 1, &cfg);
        for len in [1.0, 1.1, 0.9, 1.0, 1.0, 5.0] {
            let mut sk = Skeleton3D::empty(PersonId(0), 0, 2);
            sk.joints = vec![Some(Point3::zeros()), Some(Point3::new(len, 0.0, 0.0))];
            st.update(&sk, &[3, 3], &topo, &cfg);
        }
        assert!(st.is_locked(0));
        assert!((st.mean(0).unwrap() - 1.0).abs() < 1e-12);
        let mut low = st.clone();
        low.samples[0].clear();
        let before = low.clone();
        let mut sk = Skeleton3D::empty(PersonId(0), 0, 2);
        sk.joints = vec![Some(Point3::zeros()), Some(Point3::x())];
        low.update(&sk, &[2, 3], &topo, &cfg);
        assert_eq!(low, before);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let topo = default_topology();
        let cams = ring(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nj = topo.joint_count();
        let truth: Vec<Option<Point3>> = (0..nj)
            .map(|_| Some(Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.2..1.8))))
            .collect();
        let rays: Vec<Vec<Ray>> = truth.iter().map(|x| rays_to(&cams, &x.unwrap())).collect();
        let mut bones = BoneLengthState::new(PersonId(0), topo.limb_count(), &FitConfig::default());
        for l in 0..topo.limb_count() {
            bones.samples[l].push(0.3 + 0.01 * l as f64);
        }
        let prev: Vec<Option<Point3>> = truth.iter().map(|x| x.map(|p| p + Vector3::new(0.01, 0.0, -0.02))).collect();
        let cfg = FitConfig {
            w_shape: 0.5,
            w_temp: 0.3,
            ..FitConfig::default()
        };
        let problem = FitProblem::new(&topo, &truth, &rays, Some(&prev), Some(&bones), &cfg);
        for _ in 0..5 {
            let x = problem.pack(&truth).map(|v| v + rng.gen_range(-0.1..0.1));
            let g = problem.gradient(&x);
            let h = 1e-6;
            let mut fd = DVector::zeros(x.len());
            for k in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                fd[k] = (problem.energy(&xp) - problem.energy(&xm)) / (2.0 * h);
            }
            assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1e-12), "{} vs {}", g.norm(), fd.norm());
        }
    }

    #[test]
    fn data_only_fit_keeps_triangulation() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let cams = ring(3);
        let pts = [Point3::new(0.0, 0.0, 1.0), Point3::new(0.1, 0.2, 1.3), Point3::new(-0.1, 0.3, 1.6)];
        let rays: Vec<Vec<Ray>> = pts.iter().map(|p| rays_to(&cams, p)).collect();
        let init: Vec<Option<Point3>> = pts.iter().map(|p| Some(p + Vector3::new(0.02, -0.01, 0.03))).collect();
        let cfg = FitConfig {
            w_shape: 0.0,
            w_temp: 0.0,
            ..FitConfig::default()
        };
        let problem = FitProblem::new(&topo, &init, &rays, None, None, &cfg);
        let (x, converged, _, e0, e1) = minimize(&problem, problem.pack(&init), &cfg);
        assert!(converged);
        assert!(e1 <= e0);
        for (i, p) in pts.iter().enumerate() {
            assert!((x.fixed_rows::<3>(3 * i) - p).norm() < 1e-6);
        }
    }

    #[test]
    fn heavy_temporal_weight_pins_joints() {
        let topo = SkeletonTopology::chain(2).unwrap();
        let cams = ring(3);
        let pts = [Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 0.0, 1.4)];
        let rays: Vec<Vec<Ray>> = pts.iter().map(|p| rays_to(&cams, &(p + Vector3::new(0.05, 0.0, 0.0)))).collect();
        let init: Vec<Option<Point3>> = pts.iter().map(|p| Some(p + Vector3::new(0.05, 0.0, 0.0))).collect();
        let prev: Vec<Option<Point3>> = pts.iter().map(|p| Some(*p)).collect();
        let cfg = FitConfig {
            w_temp: 1e6,
            ..FitConfig::default()
        };
        let problem = FitProblem::new(&topo, &init, &rays, Some(&prev), None, &cfg);
        let (x, ..) = minimize(&problem, problem.pack(&init), &cfg);
        for (i, p) in pts.iter().enumerate() {
            assert!((x.fixed_rows::<3>(3 * i) - p).norm() < 1e-3);
        }
    }

    #[test]
    fn robust_point_drops_outlier_view() {
        let cams = ring(4);
        let x = Point3::new(0.1, -0.2, 1.2);
        let mut obs: Vec<JointObservation> = rays_to(&cams, &x)
            .into_iter()
            .enumerate()
            .map(|(view, ray)| JointObservation { view, ray, confidence: 1.0 })
            .collect();
        obs[2].ray = cams[2].back_project(&cams[2].project(&Point3::new(1.0, 1.0, 1.0)).unwrap());
        let (p, keep) = robust_point(&obs, 0.08).unwrap().unwrap();
        assert_eq!(keep, vec![0, 1, 3]);
        assert!((p - x).norm() < 1e-7);
        obs.truncate(3);
        obs.remove(0);
        assert!(robust_point(&obs, 0.08).unwrap().is_none());
    }
}
