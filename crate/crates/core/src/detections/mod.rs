//! Per-frame, per-view 2D joint candidates and limb (PAF) scores.

mod io;
mod topology;

pub use io::{load_frames, save_frames, save_frames_binary, DetectionHeader, DETECTIONS_VERSION};
pub use topology::{default_topology, SkeletonTopology, BODY19_JOINTS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pixel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCandidate {
    pub pixel: Pixel,
    /// Heatmap score in `[0, 1]`.
    pub confidence: f64,
}

impl JointCandidate {
    pub fn new(u: f64, v: f64, confidence: f64) -> Self {
        Self {
            pixel: Pixel::new(u, v),
            confidence,
        }
    }
}

/// Dense limb score matrix: entry `(m, n)` scores candidate `m` of the limb's
/// first joint against candidate `n` of its second joint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PafMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
}

impl PafMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            scores: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != rows * cols {
            return Err(Error::validation(
                "paf matrix",
                format!("{} scores for a {rows}x{cols} matrix", scores.len()),
            ));
        }
        Ok(Self { rows, cols, scores })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.scores[m * self.cols + n]
    }

    pub fn set(&mut self, m: usize, n: usize, score: f64) {
        self.scores[m * self.cols + n] = score;
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Everything one camera saw in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDetections {
    pub camera: usize,
    /// Indexed by joint, then candidate.
    pub joints: Vec<Vec<JointCandidate>>,
    /// Indexed by limb.
    pub pafs: Vec<PafMatrix>,
}

impl ViewDetections {
    /// A view with no candidates for any joint.
    pub fn empty(camera: usize, topology: &SkeletonTopology) -> Self {
        Self {
            camera,
            joints: vec![Vec::new(); topology.joint_count()],
            pafs: vec![PafMatrix::default(); topology.limb_count()],
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.joints.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub index: usize,
    pub views: Vec<ViewDetections>,
}

impl DetectionFrame {
    pub fn empty(index: usize) -> Self {
        Self {
            index,
            views: Vec::new(),
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.views.iter().map(ViewDetections::candidate_count).sum()
    }

    pub fn view_of_camera(&self, camera: usize) -> Option<usize> {
        self.views.iter().position(|v| v.camera == camera)
    }

    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        let mut seen = Vec::new();
        for view in &self.views {
            let loc = |rest: String| format!("frame {} view {}{}", self.index, view.camera, rest);
            if seen.contains(&view.camera) {
                return Err(Error::validation(loc(String::new()), "duplicate camera"));
            }
            seen.push(view.camera);
            if view.joints.len() != topology.joint_count() {
                return Err(Error::validation(
                    loc(String::new()),
                    format!("{} joint lists, topology has {}", view.joints.len(), topology.joint_count()),
                ));
            }
            for (j, cands) in view.joints.iter().enumerate() {
                for (m, c) in cands.iter().enumerate() {
                    if !c.pixel.is_finite() {
                        return Err(Error::validation(loc(format!(" joint {j} candidate {m}")), "non-finite pixel"));
                    }
                    if !(0.0..=1.0).contains(&c.confidence) {
                        return Err(Error::validation(
                            loc(format!(" joint {j} candidate {m}")),
                            format!("confidence {} outside [0,1]", c.confidence),
                        ));
                    }
                }
            }
            if view.pafs.len() != topology.limb_count() {
                return Err(Error::validation(
                    loc(String::new()),
                    format!("{} paf matrices, topology has {} limbs", view.pafs.len(), topology.limb_count()),
                ));
            }
            for (l, paf) in view.pafs.iter().enumerate() {
                let (a, b) = topology.limb(l);
                let (ma, nb) = (view.joints[a].len(), view.joints[b].len());
                if paf.rows != ma || paf.cols != nb {
                    return Err(Error::validation(
                        loc(format!(" limb {l}")),
                        format!("paf is {}x{}, candidates are {ma}x{nb}", paf.rows, paf.cols),
                    ));
                }
                if let Some(s) = paf.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                    return Err(Error::validation(loc(format!(" limb {l}")), format!("paf score {s} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (SkeletonTopology, DetectionFrame) {
        let topo = SkeletonTopology::chain(2).unwrap();
        let mut view = ViewDetections::empty(0, &topo);
        view.joints[0].push(JointCandidate::new(1.0, 2.0, 0.9));
        view.joints[1].push(JointCandidate::new(3.0, 4.0, 0.8));
        view.pafs[0] = PafMatrix::from_rows(1, 1, vec![0.7]).unwrap();
        (topo, DetectionFrame { index: 0, views: vec![view] })
    }

    #[test]
    fn valid_frame_passes() {
        let (topo, frame) = tiny();
        frame.validate(&topo).unwrap();
        assert_eq!(frame.candidate_count(), 2);
    }

    #[test]
    fn confidence_out_of_range() {
        let (topo, mut frame) = tiny();
        frame.views[0].joints[1][0].confidence = 1.5;
        let err = frame.validate(&topo).unwrap_err().to_string();
        assert!(err.contains("joint 1 candidate 0"), "{err}");
    }

    #[test]
    fn paf_shape_mismatch() {
        let (topo, mut frame) = tiny();
        frame.views[0].pafs[0] = PafMatrix::zeros(2, 1);
        assert!(frame.validate(&topo).is_err());
        frame.views[0].pafs[0] = PafMatrix::from_rows(1, 1, vec![-0.1]).unwrap();
        assert!(frame.validate(&topo).is_err());
    }
}
