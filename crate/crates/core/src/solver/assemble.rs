//! Bundle Kruskal: merge limb bundles into person skeletons, highest score
//! first, splitting bundles whose joints are already claimed by different
//! persons.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::clique::{bundle_score, LimbBundle};
use super::SolverConfig;
use crate::graph::{Graph4D, NodeLabels, PersonId};

/// One assembled person: per joint, per view, the assigned candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPerson {
    pub id: PersonId,
    /// Prior person index this person continues, if any.
    pub prior: Option<usize>,
    /// `[joint][view]`
    pub joints: Vec<Vec<Option<usize>>>,
}

impl AssembledPerson {
    pub fn views_of(&self, joint: usize) -> usize {
        self.joints[joint].iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.iter().all(|js| js.iter().all(Option::is_none))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assembly {
    pub persons: Vec<AssembledPerson>,
    /// First unused person id after this assembly.
    pub next_id: u64,
}

impl Assembly {
    /// Node labels (person index) induced by the assignment.
    pub fn labels(&self, graph: &Graph4D) -> NodeLabels {
        let mut labels = NodeLabels::unlabeled(graph);
        for (p, person) in self.persons.iter().enumerate() {
            for (j, views) in person.joints.iter().enumerate() {
                for (v, c) in views.iter().enumerate() {
                    if let Some(c) = c {
                        labels.candidates[v][j][*c] = Some(p);
                    }
                }
            }
            if let Some(k) = person.prior {
                labels.priors[k] = Some(p);
            }
        }
        labels
    }

    /// Checks that no candidate is assigned to two persons.
    pub fn is_consistent(&self) -> bool {
        let mut seen = BTreeSet::new();
        for person in &self.persons {
            for (j, views) in person.joints.iter().enumerate() {
                for (v, c) in views.iter().enumerate() {
                    if let Some(c) = c {
                        if !seen.insert((v, j, *c)) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

struct Queued {
    bundle: LimbBundle,
    key: (usize, Vec<(usize, usize, usize)>, Option<PersonId>),
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // max-heap: higher score first, then smaller key
    fn cmp(&self, other: &Self) -> Ordering {
        self.bundle
            .score
            .total_cmp(&other.bundle.score)
            .then_with(|| other.key.cmp(&self.key))
    }
}

impl Queued {
    fn new(bundle: LimbBundle) -> Self {
        let key = bundle.tie_key();
        Self { bundle, key }
    }
}

struct WorkPerson {
    prior: Option<usize>,
    /// `[joint][view]`
    slots: Vec<Vec<Option<usize>>>,
    alive: bool,
}

struct Work<'g> {
    graph: &'g Graph4D,
    persons: Vec<WorkPerson>,
    /// `[view][joint][cand]` -> person
    labels: Vec<Vec<Vec<Option<usize>>>>,
    /// prior index -> person holding it
    holder: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Owner {
    Person(usize),
    Free,
    /// A single 2D limb whose two joints belong to different persons.
    Mixed(usize),
}

impl<'g> Work<'g> {
    fn new(graph: &'g Graph4D) -> Self {
        Self {
            graph,
            persons: Vec::new(),
            labels: NodeLabels::unlabeled(graph).candidates,
            holder: vec![None; graph.prior_count()],
        }
    }

    fn limb_labels(&self, limb: usize, view: usize, m: usize, n: usize) -> (Option<usize>, Option<usize>) {
        let (a, b) = self.graph.limbs()[limb];
        (self.labels[view][a][m], self.labels[view][b][n])
    }

    fn referenced(&self, bundle: &LimbBundle) -> BTreeSet<usize> {
        let mut r = BTreeSet::new();
        for l in &bundle.limbs {
            let (x, y) = self.limb_labels(bundle.limb, l.view, l.m, l.n);
            r.extend(x);
            r.extend(y);
        }
        if let Some((k, _)) = bundle.temporal {
            r.extend(self.holder[k]);
        }
        r
    }

    /// Whether the referenced persons and the bundle can become one person.
    fn compatible(&self, persons: &BTreeSet<usize>, bundle: &LimbBundle) -> bool {
        let mut priors = BTreeSet::new();
        for &p in persons {
            priors.extend(self.persons[p].prior);
        }
        if let Some((k, _)) = bundle.temporal {
            priors.insert(k);
        }
        if priors.len() > 1 {
            return false;
        }
        let (a, b) = self.graph.limbs()[bundle.limb];
        let nv = self.graph.view_count();
        let mut slots = vec![usize::MAX; self.graph.joint_count() * nv];
        let mut claim = |j: usize, v: usize, c: usize| -> bool {
            let s = &mut slots[j * nv + v];
            if *s == usize::MAX {
                *s = c;
            }
            *s == c
        };
        for l in &bundle.limbs {
            if !claim(a, l.view, l.m) || !claim(b, l.view, l.n) {
                return false;
            }
        }
        for &p in persons {
            for (j, views) in self.persons[p].slots.iter().enumerate() {
                for (v, c) in views.iter().enumerate() {
                    if let Some(c) = c {
                        if !claim(j, v, *c) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn new_person(&mut self) -> usize {
        self.persons.push(WorkPerson {
            prior: None,
            slots: vec![vec![None; self.graph.view_count()]; self.graph.joint_count()],
            alive: true,
        });
        self.persons.len() - 1
    }

    fn assign(&mut self, p: usize, joint: usize, view: usize, cand: usize) {
        self.persons[p].slots[joint][view] = Some(cand);
        self.labels[view][joint][cand] = Some(p);
    }

    fn merge(&mut self, persons: &BTreeSet<usize>, bundle: &LimbBundle) {
        let target = match persons.first() {
            Some(&p) => p,
            None => self.new_person(),
        };
        for &q in persons.iter().skip(1) {
            let slots = std::mem::take(&mut self.persons[q].slots);
            for (j, views) in slots.iter().enumerate() {
                for (v, c) in views.iter().enumerate() {
                    if let Some(c) = c {
                        self.assign(target, j, v, *c);
                    }
                }
            }
            if let Some(k) = self.persons[q].prior.take() {
                self.persons[target].prior = Some(k);
                self.holder[k] = Some(target);
            }
            self.persons[q].alive = false;
        }
        let (a, b) = self.graph.limbs()[bundle.limb];
        for l in &bundle.limbs {
            self.assign(target, a, l.view, l.m);
            self.assign(target, b, l.view, l.n);
        }
        if let Some((k, _)) = bundle.temporal {
            self.persons[target].prior = Some(k);
            self.holder[k] = Some(target);
        }
    }

    /// Splits an incompatible bundle into fragments grouped by the person
    /// already owning their joints. Returns nothing when the bundle cannot be
    /// reduced further.
    fn split(&self, bundle: &LimbBundle) -> Vec<LimbBundle> {
        let mut groups: BTreeMap<Owner, Vec<usize>> = BTreeMap::new();
        for (i, l) in bundle.limbs.iter().enumerate() {
            let owner = match self.limb_labels(bundle.limb, l.view, l.m, l.n) {
                (None, None) => Owner::Free,
                (Some(p), None) | (None, Some(p)) => Owner::Person(p),
                (Some(p), Some(q)) if p == q => Owner::Person(p),
                _ => Owner::Mixed(i),
            };
            groups.entry(owner).or_default().push(i);
        }
        let temporal_owner = bundle.temporal.map(|(k, _)| match self.holder[k] {
            Some(p) => Owner::Person(p),
            None => Owner::Free,
        });

        let fragment = |idx: &[usize], temporal: Option<(usize, PersonId)>| LimbBundle {
            limb: bundle.limb,
            limbs: idx.iter().map(|&i| bundle.limbs[i]).collect(),
            temporal,
            score: 0.0,
        };
        if groups.len() >= 2 {
            groups
                .iter()
                .map(|(owner, idx)| fragment(idx, bundle.temporal.filter(|_| Some(*owner) == temporal_owner)))
                .collect()
        } else if bundle.size() >= 2 {
            // One owner but still incompatible: fall back to single limbs,
            // dropping the temporal node.
            (0..bundle.limbs.len()).map(|i| fragment(&[i], None)).collect()
        } else {
            Vec::new()
        }
    }
}

impl Work<'_> {
    fn views(&self, p: usize) -> u64 {
        let mut mask = 0u64;
        for views in &self.persons[p].slots {
            for (v, c) in views.iter().enumerate() {
                if c.is_some() {
                    mask |= 1 << v;
                }
            }
        }
        mask
    }

    /// Summed matching weight between the joints of two persons.
    fn affinity(&self, p: usize, q: usize) -> f64 {
        let mut sum = 0.0;
        for (j, (a, b)) in self.persons[p].slots.iter().zip(&self.persons[q].slots).enumerate() {
            for (va, ca) in a.iter().enumerate() {
                let Some(ca) = ca else { continue };
                for (vb, cb) in b.iter().enumerate() {
                    if let Some(cb) = cb {
                        sum += self.graph.matching_weight_of(j, va, *ca, vb, *cb).unwrap_or(0.0);
                    }
                }
            }
        }
        sum
    }

    /// Gives every unassigned candidate to the person whose joints in other
    /// views it matches best, provided that person has no candidate for the
    /// same joint and view yet.
    fn attach_leftovers(&mut self) {
        loop {
            let mut best: Option<(f64, usize, usize, usize, usize)> = None;
            for v in 0..self.graph.view_count() {
                for j in 0..self.graph.joint_count() {
                    for c in 0..self.graph.candidate_count(v, j) {
                        if self.labels[v][j][c].is_some() {
                            continue;
                        }
                        for (p, person) in self.persons.iter().enumerate() {
                            if !person.alive || person.slots[j][v].is_some() {
                                continue;
                            }
                            let w: f64 = person.slots[j]
                                .iter()
                                .enumerate()
                                .filter_map(|(vb, cb)| self.graph.matching_weight_of(j, v, c, vb, (*cb)?))
                                .sum();
                            if w > 0.0 && best.is_none_or(|b| w > b.0) {
                                best = Some((w, p, j, v, c));
                            }
                        }
                    }
                }
            }
            let Some((_, p, j, v, c)) = best else { return };
            self.assign(p, j, v, c);
        }
    }

    /// Joins persons seen in disjoint sets of views whenever matching edges
    /// link them, strongest link first.
    fn join_across_views(&mut self) {
        loop {
            let live: Vec<usize> = (0..self.persons.len()).filter(|&p| self.persons[p].alive).collect();
            let masks: Vec<u64> = live.iter().map(|&p| self.views(p)).collect();
            let mut best: Option<(f64, usize, usize)> = None;
            for (x, &p) in live.iter().enumerate() {
                for (y, &q) in live.iter().enumerate().skip(x + 1) {
                    if masks[x] & masks[y] != 0 || (self.persons[p].prior.is_some() && self.persons[q].prior.is_some()) {
                        continue;
                    }
                    let w = self.affinity(p, q);
                    if w > 0.0 && best.is_none_or(|(bw, _, _)| w > bw) {
                        best = Some((w, p, q));
                    }
                }
            }
            let Some((_, p, q)) = best else { return };
            let slots = std::mem::take(&mut self.persons[q].slots);
            for (j, views) in slots.iter().enumerate() {
                for (v, c) in views.iter().enumerate() {
                    if let Some(c) = c {
                        self.assign(p, j, v, *c);
                    }
                }
            }
            if let Some(k) = self.persons[q].prior.take() {
                self.persons[p].prior = Some(k);
                self.holder[k] = Some(p);
            }
            self.persons[q].alive = false;
        }
    }
}

/// Assembles persons from limb bundles of all limb types. Returns every person
/// formed, before any evidence filtering.
pub fn assemble_skeletons(
    bundles: Vec<LimbBundle>,
    graph: &Graph4D,
    next_id: u64,
    cfg: &SolverConfig,
) -> Assembly {
    let mut work = Work::new(graph);
    let mut queue: BinaryHeap<Queued> = bundles.into_iter().map(Queued::new).collect();
    while let Some(Queued { bundle, .. }) = queue.pop() {
        let persons = work.referenced(&bundle);
        if work.compatible(&persons, &bundle) {
            work.merge(&persons, &bundle);
            continue;
        }
        for mut frag in work.split(&bundle) {
            frag.score = bundle_score(graph, frag.limb, &frag.limbs, frag.temporal.map(|t| t.0), cfg);
            queue.push(Queued::new(frag));
        }
    }
    work.join_across_views();
    work.attach_leftovers();

    let mut next = next_id.max(
        (0..graph.prior_count())
            .map(|k| graph.prior_id(k).0 + 1)
            .max()
            .unwrap_or(0),
    );
    let mut persons: Vec<AssembledPerson> = work
        .persons
        .into_iter()
        .filter(|p| p.alive && p.slots.iter().any(|v| v.iter().any(Option::is_some)))
        .map(|p| {
            let id = match p.prior {
                Some(k) => graph.prior_id(k),
                None => {
                    next += 1;
                    PersonId(next - 1)
                }
            };
            AssembledPerson {
                id,
                prior: p.prior,
                joints: p.slots,
            }
        })
        .collect();
    persons.sort_by_key(|p| p.id);
    Assembly { persons, next_id: next }
}

/// Drops persons without enough multi-view support: a person is kept when it
/// continues a prior person, or when at least `min_joint_fraction` of its
/// joints are seen in two or more views.
pub fn filter_by_evidence(assembly: &mut Assembly, cfg: &SolverConfig) {
    assembly.persons.retain(|p| {
        if p.prior.is_some() {
            return true;
        }
        let j = p.joints.len().max(1);
        let supported = (0..p.joints.len()).filter(|&k| p.views_of(k) >= 2).count();
        supported as f64 >= cfg.min_joint_fraction * j as f64 && supported > 0
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{DetectionFrame, JointCandidate, PafMatrix, SkeletonTopology, ViewDetections};
    use crate::geometry::{Camera, CameraSet};
    use crate::graph::{build_graph, GraphConfig, PriorSkeletons};
    use crate::solver::clique::Limb2D;
    use nalgebra::{Matrix3, Vector3};

    fn graph_for(topo: &SkeletonTopology, views: usize, cands: usize) -> Graph4D {
        let k = Matrix3::new(1000.0, 0.0, 500.0, 0.0, 1000.0, 500.0, 0.0, 0.0, 1.0);
        let cams = CameraSet::new(
            (0..views)
                .map(|i| {
                    let a = i as f64;
                    Camera::look_at(i, k, Vector3::new(4.0 * a.cos(), 4.0 * a.sin(), 2.0), Vector3::zeros(), Vector3::z(), 1000, 1000)
                        .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let frame = DetectionFrame {
            index: 0,
            views: (0..views)
                .map(|v| {
                    let mut vd = ViewDetections::empty(v, topo);
                    for j in 0..topo.joint_count() {
                        vd.joints[j] = (0..cands).map(|c| JointCandidate::new(100.0 * c as f64, 10.0 * j as f64, 1.0)).collect();
                    }
                    for l in 0..topo.limb_count() {
                        vd.pafs[l] = PafMatrix::from_rows(cands, cands, vec![0.5; cands * cands]).unwrap();
                    }
                    vd
                })
                .collect(),
        };
        build_graph(&frame, &PriorSkeletons::empty(), &cams, &GraphConfig::default(), topo).unwrap()
    }

    fn limb(view: usize, m: usize, n: usize) -> Limb2D {
        Limb2D { view, m, n, paf: 0.5 }
    }

    fn bundle(limb_idx: usize, limbs: Vec<Limb2D>, score: f64) -> LimbBundle {
        LimbBundle {
            limb: limb_idx,
            limbs,
            temporal: None,
            score,
        }
    }

    #[test]
    fn consistent_bundles_form_one_person() {
        let topo = SkeletonTopology::chain(4).unwrap();
        let g = graph_for(&topo, 2, 1);
        let bundles = (0..3).map(|l| bundle(l, vec![limb(0, 0, 0), limb(1, 0, 0)], 1.0 + l as f64)).collect();
        let a = assemble_skeletons(bundles, &g, 0, &SolverConfig::default());
        assert_eq!(a.persons.len(), 1);
        assert!(a.persons[0].joints.iter().all(|v| v.iter().all(|c| *c == Some(0))));
        assert_eq!(a.next_id, 1);
    }

    #[test]
    fn conflicting_bundle_is_split() {
        // chain 0-1-2: limb 0 = (0,1), limb 1 = (1,2). Three views.
        let topo = SkeletonTopology::chain(3).unwrap();
        let g = graph_for(&topo, 3, 2);
        // person A owns candidate 0 everywhere on limb (1,2); person B owns candidate 1.
        let a = bundle(1, vec![limb(0, 0, 0), limb(1, 0, 0), limb(2, 0, 0)], 5.0);
        let b = bundle(1, vec![limb(0, 1, 1), limb(1, 1, 1), limb(2, 1, 1)], 4.0);
        // torso-like bundle: joint 1 candidate 0 in view 0 (A), candidate 1 in views 1 and 2 (B)
        let mixed = bundle(0, vec![limb(0, 0, 0), limb(1, 1, 1), limb(2, 1, 1)], 3.0);
        let asm = assemble_skeletons(vec![a, b, mixed], &g, 0, &SolverConfig::default());
        assert!(asm.is_consistent());
        assert_eq!(asm.persons.len(), 2);
        let pa = asm.persons.iter().find(|p| p.joints[2][0] == Some(0)).unwrap();
        let pb = asm.persons.iter().find(|p| p.joints[2][0] == Some(1)).unwrap();
        assert_eq!(pa.joints[0][0], Some(0));
        assert_eq!(pb.joints[0][1..], [Some(1), Some(1)]);
    }

    #[test]
    fn single_view_fragments_are_joined() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let g = graph_for(&topo, 2, 1);
        let bundles = vec![bundle(0, vec![limb(0, 0, 0)], 2.0), bundle(1, vec![limb(1, 0, 0)], 1.0)];
        let a = assemble_skeletons(bundles, &g, 0, &SolverConfig::default());
        assert!(a.is_consistent());
        assert_eq!(a.persons.len(), 1);
        assert_eq!(a.persons[0].joints[1], vec![Some(0), Some(0)]);
    }

    #[test]
    fn unlabeled_candidates_attach_to_matching_person() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let g = graph_for(&topo, 2, 1);
        let bundles = vec![
            bundle(0, vec![limb(0, 0, 0), limb(1, 0, 0)], 2.0),
            bundle(1, vec![limb(0, 0, 0)], 1.0),
        ];
        let a = assemble_skeletons(bundles, &g, 0, &SolverConfig::default());
        assert_eq!(a.persons.len(), 1);
        assert_eq!(a.persons[0].joints[2], vec![Some(0), Some(0)]);
    }

    #[test]
    fn single_view_limb_merges_trees() {
        let topo = SkeletonTopology::chain(4).unwrap();
        let g = graph_for(&topo, 1, 1);
        let bundles = vec![
            bundle(0, vec![limb(0, 0, 0)], 3.0),
            bundle(2, vec![limb(0, 0, 0)], 2.0),
            bundle(1, vec![limb(0, 0, 0)], 1.0),
        ];
        let a = assemble_skeletons(bundles, &g, 10, &SolverConfig::default());
        assert_eq!(a.persons.len(), 1);
        assert_eq!(a.persons[0].id, PersonId(10));
    }
}
