//! The per-frame 4D association graph.
//!
//! Nodes are 2D joint candidates (per view, joint type and candidate index)
//! plus the 3D joints of skeletons reconstructed in the previous frame. Three
//! kinds of weighted edges connect them:
//!
//! * parsing edges between candidates of adjacent joint types in one view,
//!   weighted by the limb (PAF) score;
//! * matching edges between candidates of the same joint type in two views,
//!   weighted by `1 - d/Z` where `d` is the distance between their viewing rays;
//! * tracking edges between a previous-frame 3D joint and a candidate of the
//!   same joint type, weighted by `1 - d/T` with `d` the point-to-ray distance.
//!
//! Weights are clamped to `[0, 1]` and edges below `prune_epsilon` are dropped.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detections::{DetectionFrame, SkeletonTopology};
use crate::error::{Error, Result};
use crate::geometry::{line_line_distance, point_line_distance, Camera, CameraSet, Pixel, Point3, Ray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonId(pub u64);

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Ray-to-ray distance (m) at which a matching edge reaches zero weight.
    pub epipolar_norm: f64,
    /// Point-to-ray distance (m) at which a tracking edge reaches zero weight.
    pub tracking_norm: f64,
    pub w_parsing: f64,
    pub w_matching: f64,
    pub w_tracking: f64,
    /// Weight of the clique-size reward in limb clique scores.
    pub w_size: f64,
    pub prune_epsilon: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            epipolar_norm: 0.2,
            tracking_norm: 0.2,
            w_parsing: 1.0,
            w_matching: 1.0,
            w_tracking: 1.0,
            w_size: 0.25,
            prune_epsilon: 0.05,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epipolar_norm > 0.0) || !(self.tracking_norm > 0.0) {
            return Err(Error::Config("normalization distances must be positive".into()));
        }
        if [self.w_parsing, self.w_matching, self.w_tracking, self.w_size]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::Config("graph weights must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.prune_epsilon) {
            return Err(Error::Config("prune_epsilon must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One skeleton reconstructed in the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPerson {
    pub id: PersonId,
    pub joints: Vec<Option<Point3>>,
}

/// Tracking state carried from one frame to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorSkeletons {
    pub persons: Vec<PriorPerson>,
    /// Lowest id available for a new person.
    pub next_id: u64,
}

impl PriorSkeletons {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }
}

/// Parsing edge weight: the limb score itself.
pub fn parsing_weight(paf_score: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&paf_score) {
        return Err(Error::validation("parsing weight", format!("paf score {paf_score} outside [0,1]")));
    }
    Ok(paf_score)
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub(crate) fn matching_weight_rays(a: &Ray, b: &Ray, epipolar_norm: f64) -> f64 {
    clamp_unit(1.0 - line_line_distance(a, b) / epipolar_norm)
}

pub(crate) fn tracking_weight_ray(x: &Point3, r: &Ray, tracking_norm: f64) -> f64 {
    clamp_unit(1.0 - point_line_distance(x, r) / tracking_norm)
}

pub fn matching_weight(cam1: &Camera, d1: &Pixel, cam2: &Camera, d2: &Pixel, epipolar_norm: f64) -> Result<f64> {
    if cam1.id() == cam2.id() {
        return Err(Error::validation(
            "matching weight",
            format!("both observations come from camera {}", cam1.id()),
        ));
    }
    Ok(matching_weight_rays(&cam1.back_project(d1), &cam2.back_project(d2), epipolar_norm))
}

pub fn tracking_weight(x: &Point3, cam: &Camera, d: &Pixel, tracking_norm: f64) -> f64 {
    tracking_weight_ray(x, &cam.back_project(d), tracking_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeEnds {
    /// Candidate `m` of the limb's first joint and `n` of its second joint in one view.
    Parsing { view: usize, limb: usize, m: usize, n: usize },
    /// Same joint type across two views, `view_a < view_b`.
    Matching {
        joint: usize,
        view_a: usize,
        cand_a: usize,
        view_b: usize,
        cand_b: usize,
    },
    /// Prior person `person` (index into the prior) to candidate `cand` in `view`.
    Tracking {
        joint: usize,
        person: usize,
        view: usize,
        cand: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub ends: EdgeEnds,
    pub weight: f64,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Default, PartialEq)]
struct EdgeTable {
    rows: usize,
    cols: usize,
    idx: Vec<u32>,
}

impl EdgeTable {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            idx: vec![NONE; rows * cols],
        }
    }

    fn get(&self, r: usize, c: usize) -> Option<usize> {
        if r >= self.rows || c >= self.cols {
            return None;
        }
        let i = self.idx[r * self.cols + c];
        (i != NONE).then_some(i as usize)
    }

    fn set(&mut self, r: usize, c: usize, edge: usize) {
        self.idx[r * self.cols + c] = edge as u32;
    }
}

/// The association graph of one frame. Views are addressed by their index in
/// the frame, prior persons by their index in the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph4D {
    cameras: Vec<usize>,
    limbs: Vec<(usize, usize)>,
    joint_count: usize,
    candidates: Vec<Vec<usize>>,
    prior_ids: Vec<PersonId>,
    prior_valid: Vec<Vec<bool>>,
    edges: Vec<Edge>,
    parsing: Vec<Vec<EdgeTable>>,
    matching: Vec<Vec<EdgeTable>>,
    tracking: Vec<Vec<EdgeTable>>,
}

fn pair_index(view_count: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < view_count);
    a * view_count - a * (a + 1) / 2 + (b - a - 1)
}

impl Graph4D {
    fn skeleton(
        cameras: Vec<usize>,
        topology_limbs: Vec<(usize, usize)>,
        joint_count: usize,
        candidates: Vec<Vec<usize>>,
        prior_ids: Vec<PersonId>,
        prior_valid: Vec<Vec<bool>>,
    ) -> Self {
        let nv = cameras.len();
        let parsing = (0..nv)
            .map(|v| {
                topology_limbs
                    .iter()
                    .map(|&(a, b)| EdgeTable::new(candidates[v][a], candidates[v][b]))
                    .collect()
            })
            .collect();
        let matching = (0..joint_count)
            .map(|j| {
                let mut tables = Vec::new();
                for a in 0..nv {
                    for b in a + 1..nv {
                        tables.push(EdgeTable::new(candidates[a][j], candidates[b][j]));
                    }
                }
                tables
            })
            .collect();
        let np = prior_ids.len();
        let tracking = (0..joint_count)
            .map(|j| (0..nv).map(|v| EdgeTable::new(np, candidates[v][j])).collect())
            .collect();
        Self {
            cameras,
            limbs: topology_limbs,
            joint_count,
            candidates,
            prior_ids,
            prior_valid,
            edges: Vec::new(),
            parsing,
            matching,
            tracking,
        }
    }

    fn push(&mut self, ends: EdgeEnds, weight: f64) {
        let e = self.edges.len();
        match ends {
            EdgeEnds::Parsing { view, limb, m, n } => self.parsing[view][limb].set(m, n, e),
            EdgeEnds::Matching {
                joint,
                view_a,
                cand_a,
                view_b,
                cand_b,
            } => {
                let p = pair_index(self.cameras.len(), view_a, view_b);
                self.matching[joint][p].set(cand_a, cand_b, e)
            }
            EdgeEnds::Tracking {
                joint,
                person,
                view,
                cand,
            } => self.tracking[joint][view].set(person, cand, e),
        }
        self.edges.push(Edge { ends, weight });
    }

    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn camera_of_view(&self, view: usize) -> usize {
        self.cameras[view]
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    pub fn candidate_count(&self, view: usize, joint: usize) -> usize {
        self.candidates[view][joint]
    }

    pub fn prior_count(&self) -> usize {
        self.prior_ids.len()
    }

    pub fn prior_id(&self, person: usize) -> PersonId {
        self.prior_ids[person]
    }

    pub fn prior_has_joint(&self, person: usize, joint: usize) -> bool {
        self.prior_valid[person][joint]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn parsing_edge(&self, view: usize, limb: usize, m: usize, n: usize) -> Option<usize> {
        self.parsing[view][limb].get(m, n)
    }

    pub fn matching_edge(&self, joint: usize, view_a: usize, cand_a: usize, view_b: usize, cand_b: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match view_a.cmp(&view_b) {
            Less => self.matching[joint][pair_index(self.view_count(), view_a, view_b)].get(cand_a, cand_b),
            Greater => self.matching[joint][pair_index(self.view_count(), view_b, view_a)].get(cand_b, cand_a),
            Equal => None,
        }
    }

    pub fn tracking_edge(&self, joint: usize, person: usize, view: usize, cand: usize) -> Option<usize> {
        self.tracking[joint][view].get(person, cand)
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.edges[edge].weight
    }

    pub fn parsing_weight_of(&self, view: usize, limb: usize, m: usize, n: usize) -> Option<f64> {
        self.parsing_edge(view, limb, m, n).map(|e| self.edges[e].weight)
    }

    pub fn matching_weight_of(&self, joint: usize, view_a: usize, cand_a: usize, view_b: usize, cand_b: usize) -> Option<f64> {
        self.matching_edge(joint, view_a, cand_a, view_b, cand_b)
            .map(|e| self.edges[e].weight)
    }

    pub fn tracking_weight_of(&self, joint: usize, person: usize, view: usize, cand: usize) -> Option<f64> {
        self.tracking_edge(joint, person, view, cand).map(|e| self.edges[e].weight)
    }

    /// Candidates of `joint` in `other_view` joined by a matching edge to
    /// candidate `cand` of `view`.
    pub fn matching_neighbors(&self, joint: usize, view: usize, cand: usize, other_view: usize) -> impl Iterator<Item = usize> + '_ {
        let n = if view == other_view { 0 } else { self.candidates[other_view][joint] };
        (0..n).filter(move |&c| self.matching_edge(joint, view, cand, other_view, c).is_some())
    }

    pub fn count_by_kind(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for e in &self.edges {
            match e.ends {
                EdgeEnds::Parsing { .. } => counts.0 += 1,
                EdgeEnds::Matching { .. } => counts.1 += 1,
                EdgeEnds::Tracking { .. } => counts.2 += 1,
            }
        }
        counts
    }
}

/// Builds the association graph for one frame. An empty prior yields the
/// graph without tracking edges.
pub fn build_graph(
    frame: &DetectionFrame,
    prior: &PriorSkeletons,
    cameras: &CameraSet,
    cfg: &GraphConfig,
    topology: &SkeletonTopology,
) -> Result<Graph4D> {
    cfg.validate()?;
    let nv = frame.views.len();
    let nj = topology.joint_count();
    let view_cams: Vec<&Camera> = frame
        .views
        .iter()
        .map(|v| {
            cameras.get(v.camera).ok_or_else(|| {
                Error::Config(format!("frame {}: no calibration for camera {}", frame.index, v.camera))
            })
        })
        .collect::<Result<_>>()?;
    for v in &frame.views {
        if v.joints.len() != nj || v.pafs.len() != topology.limb_count() {
            return Err(Error::validation(
                format!("frame {} view {}", frame.index, v.camera),
                "detections do not match topology",
            ));
        }
    }

    // rays[view][joint][cand]
    let rays: Vec<Vec<Vec<Ray>>> = frame
        .views
        .par_iter()
        .zip(view_cams.par_iter())
        .map(|(v, cam)| {
            v.joints
                .iter()
                .map(|cands| cands.iter().map(|c| cam.back_project(&c.pixel)).collect())
                .collect()
        })
        .collect();

    let candidates: Vec<Vec<usize>> = frame
        .views
        .iter()
        .map(|v| v.joints.iter().map(Vec::len).collect())
        .collect();
    let prior_ids = prior.persons.iter().map(|p| p.id).collect();
    let prior_valid = prior
        .persons
        .iter()
        .map(|p| (0..nj).map(|j| p.joints.get(j).is_some_and(|x| x.is_some())).collect())
        .collect();
    let mut graph = Graph4D::skeleton(
        frame.views.iter().map(|v| v.camera).collect(),
        topology.limbs().to_vec(),
        nj,
        candidates,
        prior_ids,
        prior_valid,
    );
    let keep = |w: f64| w >= cfg.prune_epsilon;

    for (vi, view) in frame.views.iter().enumerate() {
        for (l, paf) in view.pafs.iter().enumerate() {
            for m in 0..paf.rows() {
                for n in 0..paf.cols() {
                    let w = parsing_weight(paf.get(m, n)).map_err(|e| match e {
                        Error::Validation { reason, .. } => Error::validation(
                            format!("frame {} view {} limb {l} ({m},{n})", frame.index, view.camera),
                            reason,
                        ),
                        other => other,
                    })?;
                    if keep(w) {
                        graph.push(EdgeEnds::Parsing { view: vi, limb: l, m, n }, w);
                    }
                }
            }
        }
    }

    let matching: Vec<Vec<(EdgeEnds, f64)>> = (0..nj)
        .into_par_iter()
        .map(|j| {
            let mut out = Vec::new();
            for a in 0..nv {
                for b in a + 1..nv {
                    for (ma, ra) in rays[a][j].iter().enumerate() {
                        for (mb, rb) in rays[b][j].iter().enumerate() {
                            let w = matching_weight_rays(ra, rb, cfg.epipolar_norm);
                            if keep(w) {
                                out.push((
                                    EdgeEnds::Matching {
                                        joint: j,
                                        view_a: a,
                                        cand_a: ma,
                                        view_b: b,
                                        cand_b: mb,
                                    },
                                    w,
                                ));
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    for (ends, w) in matching.into_iter().flatten() {
        graph.push(ends, w);
    }

    if !prior.is_empty() {
        let tracking: Vec<Vec<(EdgeEnds, f64)>> = (0..nj)
            .into_par_iter()
            .map(|j| {
                let mut out = Vec::new();
                for (k, person) in prior.persons.iter().enumerate() {
                    let Some(Some(x)) = person.joints.get(j) else { continue };
                    for v in 0..nv {
                        for (m, r) in rays[v][j].iter().enumerate() {
                            let w = tracking_weight_ray(x, r, cfg.tracking_norm);
                            if keep(w) {
                                out.push((
                                    EdgeEnds::Tracking {
                                        joint: j,
                                        person: k,
                                        view: v,
                                        cand: m,
                                    },
                                    w,
                                ));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        for (ends, w) in tracking.into_iter().flatten() {
            graph.push(ends, w);
        }
    }
    Ok(graph)
}

/// Edge selection aligned with [`Graph4D::edges`].
pub type Selection = Vec<bool>;

/// Objective value of a selection: the weighted sum of selected edge weights.
/// With `w_tracking = 0` this is the objective without temporal edges.
pub fn objective(selection: &[bool], graph: &Graph4D, cfg: &GraphConfig) -> f64 {
    let (mut p, mut m, mut t) = (0.0, 0.0, 0.0);
    for (e, &z) in graph.edges.iter().zip(selection) {
        if !z {
            continue;
        }
        match e.ends {
            EdgeEnds::Parsing { .. } => p += e.weight,
            EdgeEnds::Matching { .. } => m += e.weight,
            EdgeEnds::Tracking { .. } => t += e.weight,
        }
    }
    cfg.w_parsing * p + cfg.w_matching * m + cfg.w_tracking * t
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A candidate of limb `limb`'s joint `side` (0 first, 1 second) has more than one selected parsing edge.
    Parsing { view: usize, limb: usize, side: u8, cand: usize },
    /// A candidate has more than one selected matching edge into `other_view`.
    Matching { joint: usize, view: usize, cand: usize, other_view: usize },
    /// A prior 3D joint has more than one selected tracking edge into `view`.
    TrackingJoint { joint: usize, person: usize, view: usize },
    /// A candidate has more than one selected tracking edge.
    TrackingCandidate { joint: usize, view: usize, cand: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Parsing { view, limb, side, cand } => {
                write!(f, "parsing: view {view} limb {limb} side {side} candidate {cand} has several limbs")
            }
            Violation::Matching { joint, view, cand, other_view } => write!(
                f,
                "matching: joint {joint} view {view} candidate {cand} matched several times into view {other_view}"
            ),
            Violation::TrackingJoint { joint, person, view } => {
                write!(f, "tracking: prior person {person} joint {joint} tracked several times in view {view}")
            }
            Violation::TrackingCandidate { joint, view, cand } => {
                write!(f, "tracking: joint {joint} view {view} candidate {cand} tracked by several prior joints")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the degree constraints: every node has at most one selected edge per
/// (edge kind, limb or opposite view).
pub fn check_feasible(selection: &[bool], graph: &Graph4D) -> FeasibilityReport {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<Violation, usize> = BTreeMap::new();
    let mut bump = |v: Violation| *counts.entry(v).or_default() += 1;
    for (e, &z) in graph.edges.iter().zip(selection) {
        if !z {
            continue;
        }
        match e.ends {
            EdgeEnds::Parsing { view, limb, m, n } => {
                bump(Violation::Parsing { view, limb, side: 0, cand: m });
                bump(Violation::Parsing { view, limb, side: 1, cand: n });
            }
            EdgeEnds::Matching {
                joint,
                view_a,
                cand_a,
                view_b,
                cand_b,
            } => {
                bump(Violation::Matching {
                    joint,
                    view: view_a,
                    cand: cand_a,
                    other_view: view_b,
                });
                bump(Violation::Matching {
                    joint,
                    view: view_b,
                    cand: cand_b,
                    other_view: view_a,
                });
            }
            EdgeEnds::Tracking {
                joint,
                person,
                view,
                cand,
            } => {
                bump(Violation::TrackingJoint { joint, person, view });
                bump(Violation::TrackingCandidate { joint, view, cand });
            }
        }
    }
    FeasibilityReport {
        violations: counts.into_iter().filter(|&(_, c)| c > 1).map(|(v, _)| v).collect(),
    }
}

impl PartialOrd for Violation {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Violation {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn key(v: &Violation) -> (u8, usize, usize, usize, usize) {
            match *v {
                Violation::Parsing { view, limb, side, cand } => (0, view, limb, side as usize, cand),
                Violation::Matching { joint, view, cand, other_view } => (1, joint, view, cand, other_view),
                Violation::TrackingJoint { joint, person, view } => (2, joint, person, view, 0),
                Violation::TrackingCandidate { joint, view, cand } => (3, joint, view, cand, 0),
            }
        }
        key(self).cmp(&key(other))
    }
}

/// Person labels over graph nodes. Edges whose two endpoints carry the same
/// label form the induced selection.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLabels {
    /// `[view][joint][cand]`
    pub candidates: Vec<Vec<Vec<Option<usize>>>>,
    /// One label per prior person; all of its 3D joints share it.
    pub priors: Vec<Option<usize>>,
}

impl NodeLabels {
    pub fn unlabeled(graph: &Graph4D) -> Self {
        Self {
            candidates: (0..graph.view_count())
                .map(|v| (0..graph.joint_count()).map(|j| vec![None; graph.candidate_count(v, j)]).collect())
                .collect(),
            priors: vec![None; graph.prior_count()],
        }
    }
}

impl Graph4D {
    pub fn induced_selection(&self, labels: &NodeLabels) -> Selection {
        let same = |a: Option<usize>, b: Option<usize>| a.is_some() && a == b;
        self.edges
            .iter()
            .map(|e| match e.ends {
                EdgeEnds::Parsing { view, limb, m, n } => {
                    let (a, b) = self.limbs[limb];
                    same(labels.candidates[view][a][m], labels.candidates[view][b][n])
                }
                EdgeEnds::Matching {
                    joint,
                    view_a,
                    cand_a,
                    view_b,
                    cand_b,
                } => same(labels.candidates[view_a][joint][cand_a], labels.candidates[view_b][joint][cand_b]),
                EdgeEnds::Tracking {
                    joint,
                    person,
                    view,
                    cand,
                } => same(labels.priors[person], labels.candidates[view][joint][cand]),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Text dump

const DUMP_HEADER: &str = "# assoc4d graph v1";

impl Graph4D {
    /// Plain-text edge list: one record per line, weights in shortest
    /// round-trip form.
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{DUMP_HEADER}").unwrap();
        writeln!(s, "joints {}", self.joint_count).unwrap();
        for (l, &(a, b)) in self.limbs.iter().enumerate() {
            writeln!(s, "limb {l} {a} {b}").unwrap();
        }
        for (v, cam) in self.cameras.iter().enumerate() {
            let counts: Vec<String> = self.candidates[v].iter().map(|c| c.to_string()).collect();
            writeln!(s, "view {v} {cam} {}", counts.join(" ")).unwrap();
        }
        for (k, id) in self.prior_ids.iter().enumerate() {
            let valid: String = self.prior_valid[k].iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(s, "prior {k} {id} {valid}").unwrap();
        }
        for e in &self.edges {
            match e.ends {
                EdgeEnds::Parsing { view, limb, m, n } => writeln!(s, "parsing {view} {limb} {m} {n} {:?}", e.weight),
                EdgeEnds::Matching {
                    joint,
                    view_a,
                    cand_a,
                    view_b,
                    cand_b,
                } => writeln!(s, "matching {joint} {view_a} {cand_a} {view_b} {cand_b} {:?}", e.weight),
                EdgeEnds::Tracking {
                    joint,
                    person,
                    view,
                    cand,
                } => writeln!(s, "tracking {joint} {person} {view} {cand} {:?}", e.weight),
            }
            .unwrap();
        }
        s
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == DUMP_HEADER => {}
            _ => return Err(Error::parse("graph dump line 1", "missing header")),
        }
        let mut joint_count = None;
        let mut limbs = Vec::new();
        let mut views: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut priors: Vec<(PersonId, Vec<bool>)> = Vec::new();
        let mut edges: Vec<(EdgeEnds, f64)> = Vec::new();
        for (ln, line) in lines {
            let loc = || format!("graph dump line {}", ln + 1);
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<usize> {
                toks.get(i)
                    .ok_or_else(|| Error::parse(loc(), "missing field"))?
                    .parse()
                    .map_err(|_| Error::parse(loc(), format!("bad integer field {i}")))
            };
            let weight = |i: usize| -> Result<f64> {
                toks.get(i)
                    .ok_or_else(|| Error::parse(loc(), "missing weight"))?
                    .parse()
                    .map_err(|_| Error::parse(loc(), "bad weight"))
            };
            match toks[0] {
                "joints" => joint_count = Some(num(1)?),
                "limb" => limbs.push((num(2)?, num(3)?)),
                "view" => views.push((num(2)?, (3..toks.len()).map(num).collect::<Result<_>>()?)),
                "prior" => priors.push((
                    PersonId(num(2)? as u64),
                    toks.get(3).unwrap_or(&"").chars().map(|c| c == '1').collect(),
                )),
                "parsing" => edges.push((
                    EdgeEnds::Parsing {
                        view: num(1)?,
                        limb: num(2)?,
                        m: num(3)?,
                        n: num(4)?,
                    },
                    weight(5)?,
                )),
                "matching" => edges.push((
                    EdgeEnds::Matching {
                        joint: num(1)?,
                        view_a: num(2)?,
                        cand_a: num(3)?,
                        view_b: num(4)?,
                        cand_b: num(5)?,
                    },
                    weight(6)?,
                )),
                "tracking" => edges.push((
                    EdgeEnds::Tracking {
                        joint: num(1)?,
                        person: num(2)?,
                        view: num(3)?,
                        cand: num(4)?,
                    },
                    weight(5)?,
                )),
                other => return Err(Error::parse(loc(), format!("unknown record '{other}'"))),
            }
        }
        let joint_count = joint_count.ok_or_else(|| Error::parse("graph dump", "missing joints record"))?;
        if views.iter().any(|(_, c)| c.len() != joint_count) || priors.iter().any(|(_, v)| v.len() != joint_count) {
            return Err(Error::parse("graph dump", "per-joint record length mismatch"));
        }
        let (cams, counts): (Vec<_>, Vec<_>) = views.into_iter().unzip();
        let (ids, valid): (Vec<_>, Vec<_>) = priors.into_iter().unzip();
        let mut g = Graph4D::skeleton(cams, limbs, joint_count, counts, ids, valid);
        for (ends, w) in edges {
            let ok = match ends {
                EdgeEnds::Parsing { view, limb, m, n } => {
                    view < g.view_count()
                        && limb < g.limbs.len()
                        && m < g.candidates[view][g.limbs[limb].0]
                        && n < g.candidates[view][g.limbs[limb].1]
                }
                EdgeEnds::Matching {
                    joint,
                    view_a,
                    cand_a,
                    view_b,
                    cand_b,
                } => {
                    joint < joint_count
                        && view_a < view_b
                        && view_b < g.view_count()
                        && cand_a < g.candidates[view_a][joint]
                        && cand_b < g.candidates[view_b][joint]
                }
                EdgeEnds::Tracking {
                    joint,
                    person,
                    view,
                    cand,
                } => {
                    joint < joint_count
                        && person < g.prior_count()
                        && view < g.view_count()
                        && cand < g.candidates[view][joint]
                }
            };
            if !ok || !(0.0..=1.0).contains(&w) {
                return Err(Error::parse("graph dump", format!("edge {ends:?} out of range")));
            }
            g.push(ends, w);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{JointCandidate, PafMatrix, ViewDetections};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};

    fn cam(id: usize, eye: Vector3<f64>) -> Camera {
        let k = Matrix3::new(1000.0, 0.0, 500.0, 0.0, 1000.0, 500.0, 0.0, 0.0, 1.0);
        Camera::look_at(id, k, eye, Vector3::new(0.0, 0.0, 1.0), Vector3::z(), 1000, 1000).unwrap()
    }

    #[test]
    fn parsing_weight_is_identity() {
        assert_eq!(parsing_weight(0.0).unwrap(), 0.0);
        assert_eq!(parsing_weight(1.0).unwrap(), 1.0);
        assert_eq!(parsing_weight(0.37).unwrap(), 0.37);
        assert!(parsing_weight(1.01).is_err());
    }

    #[test]
    fn matching_weight_cases() {
        let a = cam(0, Vector3::new(4.0, 0.0, 2.0));
        let b = cam(1, Vector3::new(0.0, 4.0, 2.0));
        let x = Vector3::new(0.1, -0.2, 1.3);
        let pa = a.project(&x).unwrap();
        let pb = b.project(&x).unwrap();
        assert_abs_diff_eq!(matching_weight(&a, &pa, &b, &pb, 0.2).unwrap(), 1.0, epsilon = 1e-9);
        assert!(matching_weight(&a, &pa, &a, &pa, 0.2).is_err());

        // rays at a known distance: x-axis line and a parallel line through y = d
        let ra = Ray::new(Vector3::zeros(), Vector3::x()).unwrap();
        let rb = Ray::new(Vector3::new(0.0, 0.2, 0.0), Vector3::new(1.0, 0.0, 0.3)).unwrap();
        let d = line_line_distance(&ra, &rb);
        assert_abs_diff_eq!(matching_weight_rays(&ra, &rb, d), 0.0, epsilon = 1e-12);
        assert_eq!(matching_weight_rays(&ra, &rb, d / 2.0), 0.0);
        // unclamped formula would be negative
        assert!(1.0 - d / (d / 2.0) < 0.0);
    }

    #[test]
    fn tracking_weight_cases() {
        let c = Camera::new(0, Matrix3::identity(), Matrix3::identity(), Vector3::zeros(), 10, 10).unwrap();
        let p = Pixel::new(0.0, 0.0);
        assert_eq!(tracking_weight(&Vector3::new(0.0, 0.0, 3.0), &c, &p, 0.2), 1.0);
        assert_abs_diff_eq!(tracking_weight(&Vector3::new(0.2, 0.0, 3.0), &c, &p, 0.2), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tracking_weight(&Vector3::new(0.0, 0.1, 3.0), &c, &p, 0.2), 0.5, epsilon = 1e-12);
    }

    fn two_view_frame() -> (SkeletonTopology, CameraSet, DetectionFrame, Vec<Vector3<f64>>) {
        let topo = SkeletonTopology::chain(2).unwrap();
        let cams = CameraSet::new(vec![cam(0, Vector3::new(4.0, 0.0, 2.0)), cam(1, Vector3::new(0.0, 4.0, 2.0))]).unwrap();
        let pts = vec![Vector3::new(0.0, 0.0, 1.5), Vector3::new(0.0, 0.0, 1.0)];
        let views = cams
            .iter()
            .map(|c| {
                let mut v = ViewDetections::empty(c.id(), &topo);
                for (j, x) in pts.iter().enumerate() {
                    let p = c.project(x).unwrap();
                    v.joints[j].push(JointCandidate::new(p.u, p.v, 1.0));
                }
                v.pafs[0] = PafMatrix::from_rows(1, 1, vec![0.9]).unwrap();
                v
            })
            .collect();
        (topo, cams, DetectionFrame { index: 0, views }, pts)
    }

    #[test]
    fn empty_frame_has_no_edges() {
        let topo = SkeletonTopology::chain(2).unwrap();
        let g = build_graph(&DetectionFrame::empty(0), &PriorSkeletons::empty(), &CameraSet::default(), &GraphConfig::default(), &topo)
            .unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn single_person_two_views() {
        let (topo, cams, frame, pts) = two_view_frame();
        let cfg = GraphConfig::default();
        let g = build_graph(&frame, &PriorSkeletons::empty(), &cams, &cfg, &topo).unwrap();
        assert_eq!(g.count_by_kind(), (2, 2, 0));
        for j in 0..2 {
            assert_abs_diff_eq!(g.matching_weight_of(j, 0, 0, 1, 0).unwrap(), 1.0, epsilon = 1e-9);
            assert_eq!(g.matching_weight_of(j, 1, 0, 0, 0), g.matching_weight_of(j, 0, 0, 1, 0));
        }
        assert!(g.matching_edge(0, 0, 0, 0, 0).is_none());

        let prior = PriorSkeletons {
            persons: vec![PriorPerson {
                id: PersonId(7),
                joints: vec![Some(pts[0]), None],
            }],
            next_id: 8,
        };
        let g4 = build_graph(&frame, &prior, &cams, &cfg, &topo).unwrap();
        assert_eq!(g4.count_by_kind(), (2, 2, 2));
        assert!(g4.tracking_edge(0, 0, 1, 0).is_some());
        assert!(g4.tracking_edge(1, 0, 1, 0).is_none());

        // tracking edges do not change the objective when w_tracking = 0
        let all = vec![true; g4.edge_count()];
        let no_track = GraphConfig { w_tracking: 0.0, ..cfg };
        let base = objective(&vec![true; g.edge_count()], &g, &no_track);
        assert_abs_diff_eq!(objective(&all, &g4, &no_track), base, epsilon = 1e-12);
    }

    #[test]
    fn missing_camera_is_config_error() {
        let (topo, _, frame, _) = two_view_frame();
        let only = CameraSet::new(vec![cam(0, Vector3::new(4.0, 0.0, 2.0))]).unwrap();
        assert!(matches!(
            build_graph(&frame, &PriorSkeletons::empty(), &only, &GraphConfig::default(), &topo),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn objective_and_feasibility() {
        let (topo, cams, mut frame, _) = two_view_frame();
        // second candidate for joint 0 in view 0 so that two parsing edges can share joint 1
        frame.views[0].joints[0].push(JointCandidate::new(10.0, 10.0, 0.5));
        frame.views[0].pafs[0] = PafMatrix::from_rows(2, 1, vec![0.8, 0.3]).unwrap();
        let g = build_graph(&frame, &PriorSkeletons::empty(), &cams, &GraphConfig::default(), &topo).unwrap();
        let cfg = GraphConfig::default();
        let mut sel = vec![false; g.edge_count()];
        assert_eq!(objective(&sel, &g, &cfg), 0.0);
        assert!(check_feasible(&sel, &g).is_feasible());
        let e = g.parsing_edge(0, 0, 0, 0).unwrap();
        sel[e] = true;
        assert_abs_diff_eq!(objective(&sel, &g, &cfg), 0.8, epsilon = 1e-15);
        sel[g.parsing_edge(0, 0, 1, 0).unwrap()] = true;
        let report = check_feasible(&sel, &g);
        assert_eq!(
            report.violations,
            vec![Violation::Parsing {
                view: 0,
                limb: 0,
                side: 1,
                cand: 0
            }]
        );
    }

    #[test]
    fn dump_round_trip() {
        let (topo, cams, frame, pts) = two_view_frame();
        let prior = PriorSkeletons {
            persons: vec![PriorPerson {
                id: PersonId(3),
                joints: vec![Some(pts[0]), Some(pts[1])],
            }],
            next_id: 4,
        };
        let g = build_graph(&frame, &prior, &cams, &GraphConfig::default(), &topo).unwrap();
        let back = Graph4D::from_dump(&g.to_dump()).unwrap();
        assert_eq!(back, g);
        assert!(Graph4D::from_dump("nonsense").is_err());
    }
}
