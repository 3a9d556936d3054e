//! Accuracy metrics against ground truth, identity-switch counting and the
//! exhaustive association oracle.

mod hungarian;
mod oracle;

pub use hungarian::assign;
pub use oracle::{brute_force_solve, OracleSolution, DEFAULT_STATE_CAP};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detections::SkeletonTopology;
use crate::error::{Error, Result};
use crate::graph::PersonId;
use crate::skelfit::Skeleton3D;
use crate::synth::GtPerson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Limb tolerance as a fraction of the true limb length.
    pub pcp_alpha: f64,
    /// Joint tolerance for precision and recall (meters).
    pub joint_threshold: f64,
    /// Largest mean joint distance at which a prediction can match an actor.
    pub match_gate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pcp_alpha: 0.5,
            joint_threshold: 0.2,
            match_gate: 1.0,
        }
    }
}

fn mean_distance(pred: &Skeleton3D, gt: &GtPerson) -> Option<f64> {
    let (sum, n) = pred
        .joints
        .iter()
        .zip(&gt.joints)
        .filter_map(|(p, g)| p.map(|p| (p - g).norm()))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// For each true actor, the index of its matched prediction. Matching
/// minimizes total mean joint distance; pairs farther apart than `gate` are
/// left unmatched.
pub fn match_frame(pred: &[Skeleton3D], gt: &[GtPerson], gate: f64) -> Vec<Option<usize>> {
    const FAR: f64 = 1e6;
    let cost: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .map(|p| mean_distance(p, g).filter(|d| *d <= gate).unwrap_or(FAR))
                .collect()
        })
        .collect();
    assign(&cost)
        .into_iter()
        .enumerate()
        .map(|(a, m)| m.filter(|&p| cost[a][p] < FAR))
        .collect()
}

fn check_aligned(pred: &[Vec<Skeleton3D>], gt: &[Vec<GtPerson>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Mismatch(format!(
            "{} predicted frames, {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcpReport {
    pub per_actor: BTreeMap<PersonId, f64>,
    /// Mean of the per-actor values.
    pub average: f64,
}

/// Percentage of correct parts: a limb counts when both predicted endpoints
/// lie within `alpha` times the true limb length of the true endpoints.
pub fn pcp(
    pred: &[Vec<Skeleton3D>],
    gt: &[Vec<GtPerson>],
    topo: &SkeletonTopology,
    cfg: &EvalConfig,
) -> Result<PcpReport> {
    check_aligned(pred, gt)?;
    let mut tally: BTreeMap<PersonId, (usize, usize)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        let m = match_frame(p, g, cfg.match_gate);
        for (a, actor) in g.iter().enumerate() {
            let entry = tally.entry(actor.id).or_default();
            entry.1 += topo.limb_count();
            let Some(k) = m[a] else { continue };
            let est = &p[k];
            for &(ja, jb) in topo.limbs() {
                let tol = cfg.pcp_alpha * (actor.joints[ja] - actor.joints[jb]).norm();
                let ok = |j: usize| est.joints[j].is_some_and(|x| (x - actor.joints[j]).norm() <= tol);
                if ok(ja) && ok(jb) {
                    entry.0 += 1;
                }
            }
        }
    }
    if tally.is_empty() {
        return Err(Error::Mismatch("ground truth has no actors".into()));
    }
    let per_actor: BTreeMap<PersonId, f64> = tally
        .into_iter()
        .map(|(id, (ok, total))| (id, 100.0 * ok as f64 / total.max(1) as f64))
        .collect();
    let average = per_actor.values().sum::<f64>() / per_actor.len() as f64;
    Ok(PcpReport { per_actor, average })
}

/// Joint precision and recall in percent, counted over all joints of all
/// frames. Every predicted joint counts as an estimate; it is correct when its
/// person matches an actor and it lies within `joint_threshold` of that
/// actor's joint.
pub fn precision_recall(pred: &[Vec<Skeleton3D>], gt: &[Vec<GtPerson>], cfg: &EvalConfig) -> Result<(f64, f64)> {
    check_aligned(pred, gt)?;
    let (mut correct, mut estimated, mut truth) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        estimated += p.iter().map(Skeleton3D::present_count).sum::<usize>();
        truth += g.iter().map(|a| a.joints.len()).sum::<usize>();
        for (a, m) in match_frame(p, g, cfg.match_gate).into_iter().enumerate() {
            let Some(k) = m else { continue };
            correct += p[k]
                .joints
                .iter()
                .zip(&g[a].joints)
                .filter(|(x, t)| x.is_some_and(|x| (x - *t).norm() <= cfg.joint_threshold))
                .count();
        }
    }
    let pct = |num: usize, den: usize| if den == 0 { 100.0 } else { 100.0 * num as f64 / den as f64 };
    Ok((pct(correct, estimated), pct(correct, truth)))
}

/// Number of frames in which an actor's matched prediction carries a
/// different id than at its previous match, summed over actors.
pub fn id_switches(pred: &[Vec<Skeleton3D>], gt: &[Vec<GtPerson>], cfg: &EvalConfig) -> Result<usize> {
    check_aligned(pred, gt)?;
    let mut last: BTreeMap<PersonId, PersonId> = BTreeMap::new();
    let mut switches = 0;
    for (p, g) in pred.iter().zip(gt) {
        for (a, m) in match_frame(p, g, cfg.match_gate).into_iter().enumerate() {
            let Some(k) = m else { continue };
            if let Some(prev) = last.insert(g[a].id, p[k].id) {
                if prev != p[k].id {
                    switches += 1;
                }
            }
        }
    }
    Ok(switches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRow {
    pub frame: usize,
    pub greedy: f64,
    pub optimal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub frames: usize,
    pub pcp: PcpReport,
    pub precision: f64,
    pub recall: f64,
    pub id_switches: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objectives: Vec<ObjectiveRow>,
}

impl MatchReport {
    pub fn compute(
        pred: &[Vec<Skeleton3D>],
        gt: &[Vec<GtPerson>],
        topo: &SkeletonTopology,
        cfg: &EvalConfig,
    ) -> Result<Self> {
        let (precision, recall) = precision_recall(pred, gt, cfg)?;
        Ok(Self {
            frames: gt.len(),
            pcp: pcp(pred, gt, topo, cfg)?,
            precision,
            recall,
            id_switches: id_switches(pred, gt, cfg)?,
            objectives: Vec::new(),
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames       {}", self.frames);
        for (id, v) in &self.pcp.per_actor {
            let _ = writeln!(s, "pcp actor {:<3}{:>7.2}", id.0, v);
        }
        let _ = writeln!(s, "pcp average  {:>7.2}", self.pcp.average);
        let _ = writeln!(s, "precision    {:>7.2}", self.precision);
        let _ = writeln!(s, "recall       {:>7.2}", self.recall);
        let _ = writeln!(s, "id switches  {:>4}", self.id_switches);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use nalgebra::{Rotation3, Vector3};

    fn actor(id: u64, x: f64) -> GtPerson {
        GtPerson {
            id: PersonId(id),
            joints: vec![Point3::new(x, 0.0, 0.0), Point3::new(x, 0.0, 1.0), Point3::new(x, 0.0, 2.0)],
        }
    }

    fn as_pred(a: &GtPerson, id: u64) -> Skeleton3D {
        let mut s = Skeleton3D::empty(PersonId(id), 0, a.joints.len());
        s.joints = a.joints.iter().map(|p| Some(*p)).collect();
        s
    }

    fn topo() -> SkeletonTopology {
        SkeletonTopology::chain(3).unwrap()
    }

    #[test]
    fn identical_prediction_is_perfect() {
        let gt = vec![vec![actor(0, 0.0), actor(1, 3.0)]; 4];
        let pred: Vec<Vec<Skeleton3D>> = gt.iter().map(|f| f.iter().map(|a| as_pred(a, a.id.0)).collect()).collect();
        let r = MatchReport::compute(&pred, &gt, &topo(), &EvalConfig::default()).unwrap();
        assert_eq!(r.pcp.average, 100.0);
        assert_eq!((r.precision, r.recall), (100.0, 100.0));
        assert_eq!(r.id_switches, 0);
    }

    #[test]
    fn displaced_prediction_scores_zero() {
        let gt = vec![vec![actor(0, 0.0)]];
        let pred = vec![vec![as_pred(&actor(0, 10.0), 0)]];
        let cfg = EvalConfig::default();
        assert_eq!(pcp(&pred, &gt, &topo(), &cfg).unwrap().average, 0.0);
        assert_eq!(precision_recall(&pred, &gt, &cfg).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn one_of_two_limbs() {
        let gt = vec![vec![actor(0, 0.0)]];
        let mut p = as_pred(&actor(0, 0.0), 0);
        p.joints[2] = Some(Point3::new(0.0, 0.0, 3.0));
        assert_eq!(pcp(&[vec![p]], &gt, &topo(), &EvalConfig::default()).unwrap().average, 50.0);
    }

    #[test]
    fn ghost_lowers_precision_only() {
        let gt = vec![vec![actor(0, 0.0)]];
        let pred = vec![vec![as_pred(&actor(0, 0.0), 0), as_pred(&actor(9, 5.0), 9)]];
        let (p, r) = precision_recall(&pred, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(p, 50.0);
        assert_eq!(r, 100.0);
    }

    #[test]
    fn swap_counts_once_per_actor() {
        let gt: Vec<Vec<GtPerson>> = vec![vec![actor(0, 0.0), actor(1, 3.0)]; 20];
        let pred: Vec<Vec<Skeleton3D>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.iter()
                    .map(|a| as_pred(a, if t < 10 { a.id.0 } else { 1 - a.id.0 }))
                    .collect()
            })
            .collect();
        assert_eq!(id_switches(&pred, &gt, &EvalConfig::default()).unwrap(), 2);
    }

    #[test]
    fn rigid_motion_invariance() {
        let gt = vec![vec![actor(0, 0.0), actor(1, 3.0)]];
        let mut pred = vec![vec![as_pred(&gt[0][0], 0), as_pred(&gt[0][1], 1)]];
        pred[0][0].joints[2] = Some(Point3::new(0.3, 0.1, 2.2));
        let cfg = EvalConfig::default();
        let before = (pcp(&pred, &gt, &topo(), &cfg).unwrap().average, precision_recall(&pred, &gt, &cfg).unwrap());
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let shift = Vector3::new(4.0, -2.0, 0.5);
        let move_pt = |p: &Point3| rot * p + shift;
        let gt2: Vec<Vec<GtPerson>> = gt
            .iter()
            .map(|f| f.iter().map(|a| GtPerson { id: a.id, joints: a.joints.iter().map(move_pt).collect() }).collect())
            .collect();
        let mut pred2 = pred.clone();
        for s in pred2.iter_mut().flatten() {
            for j in s.joints.iter_mut().flatten() {
                *j = move_pt(j);
            }
        }
        let after = (pcp(&pred2, &gt2, &topo(), &cfg).unwrap().average, precision_recall(&pred2, &gt2, &cfg).unwrap());
        assert_eq!(before.0, after.0);
        assert_eq!(before.1, after.1);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(pcp(&[], &[], &topo(), &EvalConfig::default()).is_err());
    }
}
