//! Association solver: per-limb clique parsing followed by bundle assembly.

mod assemble;
mod clique;

pub use assemble::{assemble_skeletons, filter_by_evidence, AssembledPerson, Assembly};
pub use clique::{
    bundle_score, clique_score, score_of, EdgeSums, parse_limb_bundles, parse_limb_bundles_traced, stop_threshold, welsch_scale,
    Alive, Limb2D, LimbBundle, LimbClique, LimbGraph, ParseTrace,
};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_feasible, objective, Graph4D, GraphConfig, PersonId};

/// Largest number of views a frame may have.
pub const MAX_VIEWS: usize = 64;

/// Welsch robust reward `1 - exp(-(x/c)^2 / 2)`.
///
/// # Panics
/// If `c` is not strictly positive.
pub fn welsch(x: f64, c: f64) -> f64 {
    assert!(c > 0.0, "welsch scale must be positive, got {c}");
    let r = x / c;
    1.0 - (-0.5 * r * r).exp()
}

/// How a clique's edge energy is normalized before the size reward is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Mean weight within each edge kind, combined by the kind weights.
    #[default]
    EdgeMean,
    /// Weighted edge sum divided by the number of clique nodes.
    NodeCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub graph: GraphConfig,
    /// Cliques kept per growth step.
    pub beam_width: usize,
    /// Margin above the single-node score below which extraction stops.
    pub score_floor: f64,
    /// Fraction of joints that must be seen in two or more views for a new
    /// person to be reported.
    pub min_joint_fraction: f64,
    pub normalization: Normalization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            beam_width: 4,
            score_floor: 0.1,
            min_joint_fraction: 0.4,
            normalization: Normalization::EdgeMean,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if !self.score_floor.is_finite() || self.score_floor < 0.0 {
            return Err(Error::Config(format!("score_floor must be finite and >= 0, got {}", self.score_floor)));
        }
        if !(0.0..=1.0).contains(&self.min_joint_fraction) {
            return Err(Error::Config(format!(
                "min_joint_fraction must lie in [0, 1], got {}",
                self.min_joint_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Joint parsing, matching and tracking on the full graph.
    #[default]
    #[serde(rename = "full-4d")]
    FullFourD,
    /// Same solver, no temporal prior.
    NoTracking,
    /// Per-view parsing first, then cross-view matching of whole persons.
    TwoStep,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-4d" => Ok(Mode::FullFourD),
            "no-tracking" => Ok(Mode::NoTracking),
            "two-step" => Ok(Mode::TwoStep),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected full-4d, no-tracking or two-step"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::FullFourD => "full-4d",
            Mode::NoTracking => "no-tracking",
            Mode::TwoStep => "two-step",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub bundles: usize,
    /// Objective of the selection induced by every assembled person.
    pub raw_objective: f64,
    /// Objective after the evidence filter.
    pub objective: f64,
    /// Feasibility violations of the final selection; always zero.
    pub violations: usize,
    pub parse_seconds: f64,
    pub assemble_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assembly: Assembly,
    pub stats: SolveStats,
}

/// Solves one frame. In [`Mode::FullFourD`] persons that continue a prior
/// person keep its id and new persons take ids from `next_id`; the other
/// modes number persons from zero within the frame.
pub fn solve_frame(graph: &Graph4D, next_id: u64, cfg: &SolverConfig, mode: Mode) -> Result<Solution> {
    if graph.view_count() > MAX_VIEWS {
        return Err(Error::Config(format!(
            "{} views, at most {MAX_VIEWS} are supported",
            graph.view_count()
        )));
    }
    match mode {
        Mode::FullFourD => Ok(solve_joint(graph, next_id, cfg)),
        Mode::NoTracking => {
            let mut s = solve_joint(graph, 0, cfg);
            renumber(&mut s.assembly);
            Ok(s)
        }
        Mode::TwoStep => Ok(solve_two_step(graph, cfg)),
    }
}

fn selection_objective(assembly: &Assembly, graph: &Graph4D, cfg: &SolverConfig) -> f64 {
    objective(&graph.induced_selection(&assembly.labels(graph)), graph, &cfg.graph)
}

/// Objectives and feasibility of a finished solve, computed outside the
/// timed section.
fn finish(raw: &Assembly, assembly: Assembly, graph: &Graph4D, cfg: &SolverConfig, bundles: usize, t: [Instant; 3]) -> Solution {
    let selection = graph.induced_selection(&assembly.labels(graph));
    Solution {
        stats: SolveStats {
            bundles,
            raw_objective: selection_objective(raw, graph, cfg),
            objective: objective(&selection, graph, &cfg.graph),
            violations: check_feasible(&selection, graph).violations.len(),
            parse_seconds: (t[1] - t[0]).as_secs_f64(),
            assemble_seconds: (t[2] - t[1]).as_secs_f64(),
        },
        assembly,
    }
}

fn solve_joint(graph: &Graph4D, next_id: u64, cfg: &SolverConfig) -> Solution {
    let t0 = Instant::now();
    let bundles: Vec<LimbBundle> = (0..graph.limbs().len())
        .into_par_iter()
        .map(|l| parse_limb_bundles(&LimbGraph::new(graph, l), cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let t1 = Instant::now();
    let count = bundles.len();
    let raw = assemble_skeletons(bundles, graph, next_id, cfg);
    let mut assembly = raw.clone();
    filter_by_evidence(&mut assembly, cfg);
    let t2 = Instant::now();
    finish(&raw, assembly, graph, cfg, count, [t0, t1, t2])
}

fn renumber(assembly: &mut Assembly) {
    for (i, p) in assembly.persons.iter_mut().enumerate() {
        p.id = PersonId(i as u64);
        p.prior = None;
    }
    assembly.next_id = assembly.persons.len() as u64;
}

/// Summed same-joint matching weight between two single-view persons.
fn person_affinity(graph: &Graph4D, a: &AssembledPerson, va: usize, b: &AssembledPerson, vb: usize) -> f64 {
    (0..graph.joint_count())
        .filter_map(|j| {
            let (ca, cb) = (a.joints[j][va]?, b.joints[j][vb]?);
            graph.matching_weight_of(j, va, ca, vb, cb)
        })
        .sum()
}

fn solve_two_step(graph: &Graph4D, cfg: &SolverConfig) -> Solution {
    let t0 = Instant::now();
    let nv = graph.view_count();
    let per_view: Vec<Vec<LimbBundle>> = (0..nv)
        .into_par_iter()
        .map(|v| {
            (0..graph.limbs().len())
                .flat_map(|l| parse_limb_bundles(&LimbGraph::with_views(graph, l, Some(v)), cfg))
                .filter(|b| b.temporal.is_none())
                .collect()
        })
        .collect();
    let t1 = Instant::now();
    let count = per_view.iter().map(Vec::len).sum();

    // (view, person) for every single-view person
    let mut people: Vec<(usize, AssembledPerson)> = Vec::new();
    for (v, bundles) in per_view.into_iter().enumerate() {
        let a = assemble_skeletons(bundles, graph, 0, cfg);
        people.extend(a.persons.into_iter().filter(|p| p.prior.is_none()).map(|p| (v, p)));
    }
    let n = people.len();
    let mut affinity = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in i + 1..n {
            if people[i].0 != people[k].0 {
                let w = person_affinity(graph, &people[i].1, people[i].0, &people[k].1, people[k].0);
                affinity[i][k] = w;
                affinity[k][i] = w;
            }
        }
    }

    // Greedy agglomeration: repeatedly merge the pair of clusters with the
    // highest summed affinity, never putting two persons of one view together.
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let clash = clusters[x]
                    .iter()
                    .any(|&i| clusters[y].iter().any(|&k| people[i].0 == people[k].0));
                if clash {
                    continue;
                }
                let s: f64 = clusters[x].iter().flat_map(|&i| clusters[y].iter().map(move |&k| (i, k))).map(|(i, k)| affinity[i][k]).sum();
                if s > 0.0 && best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, x, y));
                }
            }
        }
        let Some((_, x, y)) = best else { break };
        let moved = clusters.remove(y);
        clusters[x].extend(moved);
    }

    let mut persons: Vec<AssembledPerson> = clusters
        .into_iter()
        .map(|members| {
            let mut joints = vec![vec![None; nv]; graph.joint_count()];
            for i in members {
                let (v, p) = &people[i];
                for j in 0..graph.joint_count() {
                    if let Some(c) = p.joints[j][*v] {
                        joints[j][*v] = Some(c);
                    }
                }
            }
            AssembledPerson {
                id: PersonId(0),
                prior: None,
                joints,
            }
        })
        .collect();
    persons.sort_by(|a, b| a.joints.cmp(&b.joints));
    let mut raw = Assembly { persons, next_id: 0 };
    renumber(&mut raw);
    let mut assembly = raw.clone();
    filter_by_evidence(&mut assembly, cfg);
    renumber(&mut assembly);
    let t2 = Instant::now();
    finish(&raw, assembly, graph, cfg, count, [t0, t1, t2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welsch_values() {
        assert_eq!(welsch(0.0, 1.0), 0.0);
        assert!((welsch(1.0, 1.0) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!(welsch(100.0, 1.0) > 0.999_999);
    }

    #[test]
    #[should_panic]
    fn welsch_rejects_zero_scale() {
        welsch(1.0, 0.0);
    }

    #[test]
    fn mode_round_trip() {
        for m in [Mode::FullFourD, Mode::NoTracking, Mode::TwoStep] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn config_validation() {
        SolverConfig::default().validate().unwrap();
        let bad = SolverConfig {
            beam_width: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
