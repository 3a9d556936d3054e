//! Frame-by-frame reconstruction: association, triangulation, refinement and
//! the tracking state carried between frames.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detections::{DetectionFrame, SkeletonTopology};
use crate::error::{Error, Result};
use crate::geometry::{CameraSet, Point3};
use crate::graph::{build_graph, PersonId, PriorPerson, PriorSkeletons};
use crate::skelfit::{fit_parametric, triangulate_person, BoneLengthState, FitConfig, Skeleton3D};
use crate::solver::{solve_frame, Assembly, Mode, SolveStats, SolverConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub solver: SolverConfig,
    pub fit: FitConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.fit.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameStats {
    pub graph_seconds: f64,
    pub solve: SolveStats,
    pub fit_seconds: f64,
    pub edges: usize,
    pub warnings: Vec<String>,
}

impl FrameStats {
    /// Graph construction plus parsing plus assembly.
    pub fn association_seconds(&self) -> f64 {
        self.graph_seconds + self.solve.parse_seconds + self.solve.assemble_seconds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    pub assembly: Assembly,
    pub skeletons: Vec<Skeleton3D>,
    pub stats: FrameStats,
}

/// Reconstruction state for one sequence.
pub struct Tracker<'a> {
    topo: &'a SkeletonTopology,
    cams: &'a CameraSet,
    cfg: PipelineConfig,
    prior: PriorSkeletons,
    previous: BTreeMap<PersonId, Skeleton3D>,
    bones: BTreeMap<PersonId, BoneLengthState>,
}

impl<'a> Tracker<'a> {
    pub fn new(topo: &'a SkeletonTopology, cams: &'a CameraSet, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            topo,
            cams,
            cfg,
            prior: PriorSkeletons::empty(),
            previous: BTreeMap::new(),
            bones: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn prior(&self) -> &PriorSkeletons {
        &self.prior
    }

    pub fn process(&mut self, frame: &DetectionFrame) -> Result<FrameResult> {
        let tracking = self.cfg.mode == Mode::FullFourD;
        let empty = PriorSkeletons::empty();
        let prior = if tracking { &self.prior } else { &empty };

        let t0 = Instant::now();
        let graph = build_graph(frame, prior, self.cams, &self.cfg.solver.graph, self.topo)?;
        let graph_seconds = t0.elapsed().as_secs_f64();
        let solution = solve_frame(&graph, self.prior.next_id, &self.cfg.solver, self.cfg.mode)?;
        log::debug!(
            "frame {}: association {:.3} ms, {} persons",
            frame.index,
            1e3 * (graph_seconds + solution.stats.parse_seconds + solution.stats.assemble_seconds),
            solution.assembly.persons.len()
        );

        let t1 = Instant::now();
        let fitted: Vec<Result<(Skeleton3D, Vec<usize>, Vec<String>)>> = solution
            .assembly
            .persons
            .par_iter()
            .map(|person| {
                let tri = triangulate_person(person, frame, self.cams, &self.cfg.fit)?;
                let prev = tracking.then(|| self.previous.get(&person.id)).flatten();
                let bones = tracking.then(|| self.bones.get(&person.id)).flatten();
                let fit = fit_parametric(&tri, prev, bones, self.topo, &self.cfg.fit);
                let mut warnings = tri.warnings.clone();
                if !fit.converged {
                    warnings.push(format!("person {}: fit stopped after {} iterations", person.id, fit.iterations));
                }
                Ok((fit.skeleton, tri.visibility(), warnings))
            })
            .collect();
        let mut skeletons = Vec::new();
        let mut warnings = Vec::new();
        let mut visibility = Vec::new();
        for r in fitted {
            let (skel, vis, w) = r?;
            warnings.extend(w);
            if skel.present_count() > 0 {
                skeletons.push(skel);
                visibility.push(vis);
            }
        }
        let fit_seconds = t1.elapsed().as_secs_f64();

        if tracking {
            let mut bones = BTreeMap::new();
            for (skel, vis) in skeletons.iter().zip(&visibility) {
                let mut state = self
                    .bones
                    .remove(&skel.id)
                    .unwrap_or_else(|| BoneLengthState::new(skel.id, self.topo.limb_count(), &self.cfg.fit));
                state.update(skel, vis, self.topo, &self.cfg.fit);
                bones.insert(skel.id, state);
            }
            self.bones = bones;
            self.previous = skeletons.iter().map(|s| (s.id, s.clone())).collect();
            self.prior = PriorSkeletons {
                persons: skeletons
                    .iter()
                    .map(|s| PriorPerson {
                        id: s.id,
                        joints: s.joints.clone(),
                    })
                    .collect(),
                next_id: solution.assembly.next_id.max(self.prior.next_id),
            };
        }
        let edges = graph.edge_count();
        Ok(FrameResult {
            frame: frame.index,
            assembly: solution.assembly,
            skeletons,
            stats: FrameStats {
                graph_seconds,
                solve: solution.stats,
                fit_seconds,
                edges,
                warnings,
            },
        })
    }
}

/// Runs a whole sequence and returns the per-frame results.
pub fn run_sequence(
    frames: &[DetectionFrame],
    cams: &CameraSet,
    topo: &SkeletonTopology,
    cfg: &PipelineConfig,
) -> Result<Vec<FrameResult>> {
    let mut tracker = Tracker::new(topo, cams, cfg.clone())?;
    frames.iter().map(|f| tracker.process(f)).collect()
}

pub const SKELETONS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub id: PersonId,
    pub joints: Vec<Option<[f64; 3]>>,
    pub confidence: Vec<f64>,
    pub inferred: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub persons: Vec<PersonRecord>,
}

/// Skeleton output file. Field order is fixed so outputs diff cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub version: u32,
    pub topology_hash: String,
    pub joint_names: Vec<String>,
    pub frames: Vec<FrameRecord>,
}

impl SkeletonFile {
    pub fn from_skeletons<'s>(
        topo: &SkeletonTopology,
        frames: impl IntoIterator<Item = (usize, &'s [Skeleton3D])>,
    ) -> Self {
        Self {
            version: SKELETONS_VERSION,
            topology_hash: topo.hash(),
            joint_names: topo.joint_names().to_vec(),
            frames: frames
                .into_iter()
                .map(|(frame, skels)| FrameRecord {
                    frame,
                    persons: skels
                        .iter()
                        .map(|s| PersonRecord {
                            id: s.id,
                            joints: s.joints.iter().map(|j| j.map(|p| [p.x, p.y, p.z])).collect(),
                            confidence: s.confidence.clone(),
                            inferred: s.inferred.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_results(topo: &SkeletonTopology, results: &[FrameResult]) -> Self {
        Self::from_skeletons(topo, results.iter().map(|r| (r.frame, r.skeletons.as_slice())))
    }

    /// Skeletons per frame, in file order.
    pub fn skeletons(&self) -> Vec<Vec<Skeleton3D>> {
        self.frames
            .iter()
            .map(|f| {
                f.persons
                    .iter()
                    .map(|p| Skeleton3D {
                        id: p.id,
                        frame: f.frame,
                        joints: p.joints.iter().map(|j| j.map(|[x, y, z]| Point3::new(x, y, z))).collect(),
                        confidence: p.confidence.clone(),
                        inferred: p.inferred.clone(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("skeletons serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, topo: &SkeletonTopology) -> Result<Self> {
        let f: Self = serde_json::from_str(text).map_err(|e| Error::parse("skeleton file", e.to_string()))?;
        if f.version != SKELETONS_VERSION {
            return Err(Error::parse("skeleton file", format!("unsupported version {}", f.version)));
        }
        if f.topology_hash != topo.hash() {
            return Err(Error::parse("skeleton file", "topology hash mismatch"));
        }
        for fr in &f.frames {
            for p in &fr.persons {
                let nj = topo.joint_count();
                if p.joints.len() != nj || p.confidence.len() != nj || p.inferred.len() != nj {
                    return Err(Error::parse(format!("skeleton file frame {} person {}", fr.frame, p.id), "wrong joint count"));
                }
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::default_topology;
    use crate::synth::{synthesize, NoiseConfig, SceneConfig};

    #[test]
    fn noiseless_sequence_recovers_persons() {
        let topo = default_topology();
        let scene = SceneConfig {
            persons: 2,
            frames: 10,
            ..SceneConfig::default()
        };
        let (sc, frames, gt) = synthesize(&scene, &NoiseConfig::none(), &topo, 4).unwrap();
        let results = run_sequence(&frames, &sc.cameras, &topo, &PipelineConfig::default()).unwrap();
        for (r, g) in results.iter().zip(&gt.frames) {
            assert_eq!(r.skeletons.len(), 2);
            for s in &r.skeletons {
                let best = g
                    .persons
                    .iter()
                    .map(|p| {
                        s.joints
                            .iter()
                            .zip(&p.joints)
                            .filter_map(|(x, t)| x.map(|x| (x - t).norm()))
                            .fold(0.0, f64::max)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(best < 1e-3, "{best}");
            }
        }
        let ids: Vec<Vec<PersonId>> = results.iter().map(|r| r.skeletons.iter().map(|s| s.id).collect()).collect();
        assert!(ids.iter().all(|f| f == &ids[0]));
    }

    #[test]
    fn skeleton_file_round_trip() {
        let topo = default_topology();
        let mut s = Skeleton3D::empty(PersonId(3), 7, topo.joint_count());
        s.joints[0] = Some(Point3::new(0.1, 0.2, 0.3));
        s.confidence[0] = 0.9;
        let file = SkeletonFile::from_skeletons(&topo, [(7usize, std::slice::from_ref(&s))]);
        let back = SkeletonFile::from_json(&file.to_json(), &topo).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.skeletons()[0][0], s);
    }
}
