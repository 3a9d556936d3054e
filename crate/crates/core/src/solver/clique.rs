//! Limb cliques: candidate limb bundles on the graph restricted to one limb,
//! their scores, beam-grown enumeration and greedy extraction.

use std::collections::{BinaryHeap, HashSet};

use smallvec::SmallVec;

use super::{welsch, Normalization, SolverConfig};
use crate::graph::GraphConfig;
use crate::graph::{Graph4D, PersonId};

/// A 2D limb: a parsing edge between candidate `m` of the limb's first joint
/// and candidate `n` of its second joint in `view`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limb2D {
    pub view: usize,
    pub m: usize,
    pub n: usize,
    pub paf: f64,
}

/// The association graph restricted to one limb type. Nodes are the 2D limbs
/// of every view plus one 3D limb node per prior person that has both joints.
#[derive(Debug, Clone)]
pub struct LimbGraph<'g> {
    graph: &'g Graph4D,
    limb: usize,
    joints: (usize, usize),
    limbs: Vec<Limb2D>,
    /// Prior person indices.
    temporals: Vec<usize>,
    /// Per 2D limb: compatible 2D limbs in other views, ascending.
    compat: Vec<Vec<u32>>,
    /// Summed matching weight of both joints, parallel to `compat`.
    compat_w: Vec<Vec<f64>>,
    /// Per 2D limb: compatible temporal nodes, ascending.
    limb_temporal: Vec<Vec<u32>>,
    /// Summed tracking weight of both joints, parallel to `limb_temporal`.
    limb_temporal_w: Vec<Vec<f64>>,
    /// Per temporal node: compatible 2D limbs, ascending.
    temporal_limbs: Vec<Vec<u32>>,
    /// `[view][side][cand]` -> 2D limbs touching that joint candidate.
    by_joint: Vec<[Vec<Vec<u32>>; 2]>,
}

impl<'g> LimbGraph<'g> {
    pub fn new(graph: &'g Graph4D, limb: usize) -> Self {
        Self::with_views(graph, limb, None)
    }

    /// Restricts to a single view when `only_view` is set.
    pub fn with_views(graph: &'g Graph4D, limb: usize, only_view: Option<usize>) -> Self {
        let (a, b) = graph.limbs()[limb];
        let nv = graph.view_count();
        let mut limbs = Vec::new();
        let mut lookup: Vec<Vec<u32>> = Vec::with_capacity(nv);
        let mut by_joint = Vec::with_capacity(nv);
        for v in 0..nv {
            let (ma, nb) = (graph.candidate_count(v, a), graph.candidate_count(v, b));
            let mut table = vec![u32::MAX; ma * nb];
            let mut sides = [vec![Vec::new(); ma], vec![Vec::new(); nb]];
            if only_view.is_none_or(|o| o == v) {
                for m in 0..ma {
                    for n in 0..nb {
                        if let Some(paf) = graph.parsing_weight_of(v, limb, m, n) {
                            let id = limbs.len() as u32;
                            table[m * nb + n] = id;
                            sides[0][m].push(id);
                            sides[1][n].push(id);
                            limbs.push(Limb2D { view: v, m, n, paf });
                        }
                    }
                }
            }
            lookup.push(table);
            by_joint.push(sides);
        }

        // (other view, cand, matching weight) runs, indexed by [view][side][cand]
        let mut nbr: Vec<(usize, usize, f64)> = Vec::new();
        let mut spans: Vec<[Vec<(usize, usize)>; 2]> = Vec::with_capacity(nv);
        for v in 0..nv {
            spans.push([a, b].map(|j| {
                (0..graph.candidate_count(v, j))
                    .map(|c| {
                        let start = nbr.len();
                        if only_view.is_none() {
                            for v2 in (0..nv).filter(|&v2| v2 != v) {
                                for c2 in 0..graph.candidate_count(v2, j) {
                                    if let Some(w) = graph.matching_weight_of(j, v, c, v2, c2) {
                                        nbr.push((v2, c2, w));
                                    }
                                }
                            }
                        }
                        (start, nbr.len())
                    })
                    .collect()
            }));
        }
        let mut compat = Vec::with_capacity(limbs.len());
        let mut compat_w = Vec::with_capacity(limbs.len());
        let mut out: Vec<(u32, f64)> = Vec::new();
        for l in &limbs {
            out.clear();
            let (sa, ea) = spans[l.view][0][l.m];
            let (sb, eb) = spans[l.view][1][l.n];
            for &(v2, m2, wa) in &nbr[sa..ea] {
                let nb = graph.candidate_count(v2, b);
                for &(_, n2, wb) in nbr[sb..eb].iter().filter(|e| e.0 == v2) {
                    let id = lookup[v2][m2 * nb + n2];
                    if id != u32::MAX {
                        out.push((id, wa + wb));
                    }
                }
            }
            out.sort_unstable_by_key(|e| e.0);
            compat.push(out.iter().map(|e| e.0).collect::<Vec<u32>>());
            compat_w.push(out.iter().map(|e| e.1).collect::<Vec<f64>>());
        }

        let temporals: Vec<usize> = (0..graph.prior_count())
            .filter(|&k| graph.prior_has_joint(k, a) && graph.prior_has_joint(k, b))
            .collect();
        let mut limb_temporal = vec![Vec::new(); limbs.len()];
        let mut limb_temporal_w = vec![Vec::new(); limbs.len()];
        let mut temporal_limbs = vec![Vec::new(); temporals.len()];
        for (t, &k) in temporals.iter().enumerate() {
            for (i, l) in limbs.iter().enumerate() {
                if let (Some(wa), Some(wb)) = (graph.tracking_weight_of(a, k, l.view, l.m), graph.tracking_weight_of(b, k, l.view, l.n)) {
                    limb_temporal[i].push(t as u32);
                    limb_temporal_w[i].push(wa + wb);
                    temporal_limbs[t].push(i as u32);
                }
            }
        }
        Self {
            graph,
            limb,
            joints: (a, b),
            limbs,
            temporals,
            compat,
            compat_w,
            limb_temporal,
            limb_temporal_w,
            temporal_limbs,
            by_joint,
        }
    }

    pub fn graph(&self) -> &'g Graph4D {
        self.graph
    }

    pub fn limb(&self) -> usize {
        self.limb
    }

    pub fn joints(&self) -> (usize, usize) {
        self.joints
    }

    pub fn limbs_2d(&self) -> &[Limb2D] {
        &self.limbs
    }

    pub fn temporal_count(&self) -> usize {
        self.temporals.len()
    }

    /// Prior person index of temporal node `t`.
    pub fn temporal_person(&self, t: usize) -> usize {
        self.temporals[t]
    }

    pub fn is_empty(&self) -> bool {
        self.limbs.is_empty()
    }

    /// Summed matching weight of the two joints of `x` and `y`, if they are
    /// compatible.
    fn pair(&self, x: u32, y: u32) -> Option<f64> {
        let c = &self.compat[x as usize];
        c.binary_search(&y).ok().map(|i| self.compat_w[x as usize][i])
    }

    /// Summed tracking weight of the two joints of `x` to temporal node `t`.
    fn temporal_pair(&self, x: u32, t: u32) -> Option<f64> {
        let c = &self.limb_temporal[x as usize];
        c.binary_search(&t).ok().map(|i| self.limb_temporal_w[x as usize][i])
    }

    fn seed_limb_with(&self, x: u32, sc: &Scorer<'_>) -> LimbClique {
        let sums = EdgeSums {
            parsing: self.limbs[x as usize].paf,
            ..EdgeSums::default()
        };
        LimbClique {
            limbs: SmallVec::from_slice(&[x]),
            temporal: None,
            energy: sums.weighted(&sc.cfg.graph),
            sums,
            score: sc.score(&sums, 1, false),
            views: 1u64 << self.limbs[x as usize].view,
        }
    }

    fn seed_temporal_with(&self, t: u32, sc: &Scorer<'_>) -> LimbClique {
        LimbClique {
            limbs: SmallVec::new(),
            temporal: Some(t),
            energy: 0.0,
            sums: EdgeSums::default(),
            score: sc.score(&EdgeSums::default(), 0, true),
            views: 0,
        }
    }

    pub fn seed_limb(&self, x: u32, cfg: &SolverConfig) -> LimbClique {
        self.seed_limb_with(x, &Scorer::new(cfg, self.graph.view_count()))
    }

    pub fn seed_temporal(&self, t: u32, cfg: &SolverConfig) -> LimbClique {
        self.seed_temporal_with(t, &Scorer::new(cfg, self.graph.view_count()))
    }

    /// Checks the clique invariant: one 2D limb per view, every same-type pair
    /// joined by a matching or tracking edge.
    pub fn is_valid_clique(&self, clique: &LimbClique) -> bool {
        let mut views = 0u64;
        for (i, &x) in clique.limbs.iter().enumerate() {
            let bit = 1u64 << self.limbs[x as usize].view;
            if views & bit != 0 {
                return false;
            }
            views |= bit;
            if clique.limbs[i + 1..].iter().any(|&y| self.pair(x, y).is_none()) {
                return false;
            }
            if let Some(t) = clique.temporal {
                if self.temporal_pair(x, t).is_none() {
                    return false;
                }
            }
        }
        !clique.limbs.is_empty()
    }

    /// Beam entry for an arbitrary clique, with its candidate lists built
    /// from scratch.
    fn entry(&self, clique: LimbClique, spare: &mut Spare) -> Entry {
        let mut limbs = spare.take();
        let mut temporals = spare.take();
        match clique.limbs.first() {
            Some(&first) => {
                let f = first as usize;
                'cand: for (&y, &w) in self.compat[f].iter().zip(&self.compat_w[f]) {
                    let mut matching = w;
                    for &z in &clique.limbs[1..] {
                        match self.pair(y, z) {
                            Some(v) => matching += v,
                            None => continue 'cand,
                        }
                    }
                    if clique.temporal.is_some_and(|t| self.temporal_pair(y, t).is_none()) {
                        continue;
                    }
                    limbs.push((y, matching));
                }
                if clique.temporal.is_none() {
                    'temp: for (&t, &w) in self.limb_temporal[f].iter().zip(&self.limb_temporal_w[f]) {
                        let mut tracking = w;
                        for &z in &clique.limbs[1..] {
                            match self.temporal_pair(z, t) {
                                Some(v) => tracking += v,
                                None => continue 'temp,
                            }
                        }
                        temporals.push((t, tracking));
                    }
                }
            }
            None => {
                if let Some(t) = clique.temporal {
                    limbs.extend(self.temporal_limbs[t as usize].iter().map(|&y| (y, 0.0)));
                }
            }
        }
        Entry { clique, limbs, temporals }
    }

    /// Pushes every one-node extension of beam entry `parent` by an alive
    /// node onto `out`.
    fn extend_into(&self, parent: u32, e: &Entry, alive: &Alive, sc: &Scorer<'_>, out: &mut Vec<Extension>) {
        let c = &e.clique;
        for &(x, matching) in &e.limbs {
            if !alive.limb(x) {
                continue;
            }
            let tracking = c.temporal.map_or(0.0, |t| self.temporal_pair(x, t).unwrap_or(0.0));
            let sums = EdgeSums {
                parsing: c.sums.parsing + self.limbs[x as usize].paf,
                matching: c.sums.matching + matching,
                tracking: c.sums.tracking + tracking,
            };
            out.push(Extension {
                score: sc.score(&sums, c.limbs.len() + 1, c.temporal.is_some()),
                sums,
                parent,
                node: Node::Limb(x),
            });
        }
        for &(t, tracking) in &e.temporals {
            if !alive.temporal(t) {
                continue;
            }
            let sums = EdgeSums {
                tracking: c.sums.tracking + tracking,
                ..c.sums
            };
            out.push(Extension {
                score: sc.score(&sums, c.limbs.len(), true),
                sums,
                parent,
                node: Node::Temporal(t),
            });
        }
    }

    fn materialize(&self, e: &Entry, ext: &Extension, sc: &Scorer<'_>, spare: &mut Spare) -> Entry {
        let c = &e.clique;
        let mut clique = LimbClique {
            limbs: SmallVec::from_slice(&c.limbs),
            temporal: c.temporal,
            energy: ext.sums.weighted(&sc.cfg.graph),
            sums: ext.sums,
            score: ext.score,
            views: c.views,
        };
        let mut limbs = spare.take();
        let mut temporals = spare.take();
        match ext.node {
            Node::Limb(x) => {
                let pos = clique.limbs.partition_point(|&y| y < x);
                clique.limbs.insert(pos, x);
                clique.views |= 1u64 << self.limbs[x as usize].view;
                let xi = x as usize;
                merge_sorted(&e.limbs, &self.compat[xi], &self.compat_w[xi], &mut limbs);
                merge_sorted(&e.temporals, &self.limb_temporal[xi], &self.limb_temporal_w[xi], &mut temporals);
            }
            Node::Temporal(t) => {
                clique.temporal = Some(t);
                let tl = &self.temporal_limbs[t as usize];
                limbs.extend(e.limbs.iter().copied().filter(|(y, _)| tl.binary_search(y).is_ok()));
            }
        }
        Entry { clique, limbs, temporals }
    }

    /// Beam growth from `seed`, calling `visit` on every kept clique that
    /// contains at least one 2D limb.
    fn grow_with(&self, seed: LimbClique, sc: &Scorer<'_>, alive: &Alive, scratch: &mut Scratch, mut visit: impl FnMut(&LimbClique)) {
        if !seed.limbs.is_empty() {
            visit(&seed);
        }
        let width = sc.cfg.beam_width.max(1);
        let Scratch { beam, next, exts, spare } = scratch;
        let first = self.entry(seed, spare);
        beam.push(first);
        while !beam.is_empty() {
            exts.clear();
            for (i, e) in beam.iter().enumerate() {
                self.extend_into(i as u32, e, alive, sc, exts);
            }
            let order = |x: &Extension, y: &Extension| {
                y.score.total_cmp(&x.score).then_with(|| (x.parent, x.node).cmp(&(y.parent, y.node)))
            };
            // Only a short prefix is usually consumed; sort the rest on demand.
            let mut sorted = exts.len().min(4 * width);
            if sorted < exts.len() {
                exts.select_nth_unstable_by(sorted, order);
            }
            exts[..sorted].sort_unstable_by(order);
            // Materialize in score order until `width` distinct cliques are
            // held and the next score is strictly lower, so equal-score runs
            // are ordered by clique key below.
            next.clear();
            let mut distinct = 0;
            for k in 0..exts.len() {
                if k == sorted {
                    exts[sorted..].sort_unstable_by(order);
                    sorted = exts.len();
                }
                let ext = &exts[k];
                if distinct >= width && ext.score < exts[k - 1].score {
                    break;
                }
                let parent = &beam[ext.parent as usize];
                let dup = next.iter().any(|o| {
                    let (ol, ot) = (&o.clique.limbs, o.clique.temporal);
                    match ext.node {
                        Node::Limb(x) => ot == parent.clique.temporal && ol.len() == parent.clique.limbs.len() + 1 && ol.contains(&x) && parent.clique.limbs.iter().all(|y| ol.contains(y)),
                        Node::Temporal(t) => ot == Some(t) && *ol == parent.clique.limbs,
                    }
                });
                if !dup {
                    distinct += 1;
                    next.push(self.materialize(parent, ext, sc, spare));
                }
            }
            next.sort_unstable_by(|x, y| y.clique.score.total_cmp(&x.clique.score).then_with(|| x.clique.tie_cmp(&y.clique)));
            for e in next.drain(width.min(next.len())..) {
                spare.recycle(e);
            }
            for e in next.iter() {
                if !e.clique.limbs.is_empty() {
                    visit(&e.clique);
                }
            }
            std::mem::swap(beam, next);
            for e in next.drain(..) {
                spare.recycle(e);
            }
        }
    }

    /// Beam growth from one seed. Returns every kept clique that contains at
    /// least one 2D limb.
    pub fn grow(&self, seed: LimbClique, cfg: &SolverConfig, alive: &Alive) -> Vec<LimbClique> {
        let sc = Scorer::new(cfg, self.graph.view_count());
        let mut out = Vec::new();
        self.grow_with(seed, &sc, alive, &mut Scratch::default(), |c| out.push(c.clone()));
        out
    }

    /// Candidate cliques over the whole limb graph: beam growth from every
    /// 2D limb and every temporal node.
    pub fn enumerate_cliques(&self, cfg: &SolverConfig) -> Vec<LimbClique> {
        let alive = Alive::all(self);
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for seed in self.seeds(cfg) {
            for c in self.grow(seed, cfg, &alive) {
                if seen.insert(c.key()) {
                    out.push(c);
                }
            }
        }
        out
    }

    fn seeds(&self, cfg: &SolverConfig) -> Vec<LimbClique> {
        (0..self.limbs.len() as u32)
            .map(|x| self.seed_limb(x, cfg))
            .chain((0..self.temporals.len() as u32).map(|t| self.seed_temporal(t, cfg)))
            .collect()
    }

    pub fn to_bundle(&self, clique: &LimbClique) -> LimbBundle {
        LimbBundle {
            limb: self.limb,
            limbs: clique.limbs.iter().map(|&x| self.limbs[x as usize]).collect(),
            temporal: clique
                .temporal
                .map(|t| {
                    let k = self.temporals[t as usize];
                    (k, self.graph.prior_id(k))
                }),
            score: clique.score,
        }
    }
}

/// Unweighted edge weight sums of a clique, per edge kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeSums {
    pub parsing: f64,
    pub matching: f64,
    pub tracking: f64,
}

impl EdgeSums {
    pub fn weighted(&self, g: &GraphConfig) -> f64 {
        g.w_parsing * self.parsing + g.w_matching * self.matching + g.w_tracking * self.tracking
    }
}

/// Score of a clique with `limbs` 2D limbs and an optional temporal node:
/// normalized edge energy plus the size reward.
pub fn score_of(sums: &EdgeSums, limbs: usize, temporal: bool, cfg: &SolverConfig, view_count: usize) -> f64 {
    let size = limbs + temporal as usize;
    let reward = cfg.graph.w_size * welsch(size as f64, welsch_scale(view_count));
    normalized_energy(sums, limbs, temporal, cfg) + reward
}

/// Score evaluation with the size reward tabulated per clique size.
struct Scorer<'c> {
    cfg: &'c SolverConfig,
    reward: Vec<f64>,
}

impl<'c> Scorer<'c> {
    fn new(cfg: &'c SolverConfig, view_count: usize) -> Self {
        let c = welsch_scale(view_count);
        let reward = (0..=view_count + 1).map(|n| cfg.graph.w_size * welsch(n as f64, c)).collect();
        Self { cfg, reward }
    }

    fn score(&self, sums: &EdgeSums, limbs: usize, temporal: bool) -> f64 {
        normalized_energy(sums, limbs, temporal, self.cfg) + self.reward[limbs + temporal as usize]
    }
}

fn normalized_energy(sums: &EdgeSums, limbs: usize, temporal: bool, cfg: &SolverConfig) -> f64 {
    let g = &cfg.graph;
    let size = limbs + temporal as usize;
    match cfg.normalization {
        Normalization::NodeCount => sums.weighted(g) / size.max(1) as f64,
        Normalization::EdgeMean => {
            let n = limbs as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            if limbs > 0 {
                num += g.w_parsing * sums.parsing / n;
                den += g.w_parsing;
            }
            if limbs > 1 {
                // two joints per pair of views
                num += g.w_matching * sums.matching / (n * (n - 1.0));
                den += g.w_matching;
            }
            if temporal && limbs > 0 {
                num += g.w_tracking * sums.tracking / (2.0 * n);
                den += g.w_tracking;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        }
    }
}

/// Scale of the size reward; `(N - 1) / 2` for `N` views, floored at 0.5 so
/// that single-view input keeps a positive scale.
pub fn welsch_scale(view_count: usize) -> f64 {
    ((view_count as f64 - 1.0) / 2.0).max(0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Limb(u32),
    Temporal(u32),
}

/// A clique under growth with the nodes that may still join it: 2D limbs
/// compatible with every member, with their summed matching weight to the
/// member limbs, and (while no temporal node is held) temporal nodes
/// compatible with every member limb, with their summed tracking weight.
struct Entry {
    clique: LimbClique,
    limbs: Vec<(u32, f64)>,
    temporals: Vec<(u32, f64)>,
}

/// Buffers reused across beam steps and seeds.
#[derive(Default)]
struct Scratch {
    beam: Vec<Entry>,
    next: Vec<Entry>,
    exts: Vec<Extension>,
    spare: Spare,
}

/// Cleared candidate lists ready for reuse.
#[derive(Default)]
struct Spare(Vec<Vec<(u32, f64)>>);

impl Spare {
    fn take(&mut self) -> Vec<(u32, f64)> {
        self.0.pop().unwrap_or_default()
    }

    fn recycle(&mut self, e: Entry) {
        for mut v in [e.limbs, e.temporals] {
            v.clear();
            self.0.push(v);
        }
    }
}

/// Appends to `out` the intersection of `held` with the sorted list `ids`,
/// adding the parallel weight `ws` to each kept value.
fn merge_sorted(held: &[(u32, f64)], ids: &[u32], ws: &[f64], out: &mut Vec<(u32, f64)>) {
    let (mut i, mut j) = (0, 0);
    while i < held.len() && j < ids.len() {
        match held[i].0.cmp(&ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((ids[j], held[i].1 + ws[j]));
                i += 1;
                j += 1;
            }
        }
    }
}

/// A one-node extension of a beam entry, scored before it is built.
#[derive(Debug, Clone, Copy)]
struct Extension {
    score: f64,
    sums: EdgeSums,
    parent: u32,
    node: Node,
}

type CliqueKey = (SmallVec<[u32; 8]>, Option<u32>);

#[derive(Debug, PartialEq)]
pub struct LimbClique {
    /// 2D limb node ids, ascending (and therefore ascending by view).
    pub limbs: SmallVec<[u32; 8]>,
    pub temporal: Option<u32>,
    /// Weighted sum of the clique's edge weights.
    pub energy: f64,
    pub sums: EdgeSums,
    pub score: f64,
    views: u64,
}

impl Clone for LimbClique {
    fn clone(&self) -> Self {
        Self {
            limbs: SmallVec::from_slice(&self.limbs),
            ..*self
        }
    }
}

impl LimbClique {
    pub fn size(&self) -> usize {
        self.limbs.len() + self.temporal.is_some() as usize
    }

    fn key(&self) -> CliqueKey {
        (SmallVec::from_slice(&self.limbs), self.temporal)
    }

    /// Deterministic tie-break order: by limb nodes (view, then candidates),
    /// then temporal node.
    pub fn tie_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.limbs.cmp(&other.limbs).then(self.temporal.cmp(&other.temporal))
    }
}

/// Clique score recomputed from scratch from the graph's edges.
pub fn clique_score(lg: &LimbGraph<'_>, clique: &LimbClique, cfg: &SolverConfig) -> f64 {
    let nodes: Vec<Limb2D> = clique.limbs.iter().map(|&x| lg.limbs[x as usize]).collect();
    let prior = clique.temporal.map(|t| lg.temporals[t as usize]);
    bundle_score(lg.graph, lg.limb, &nodes, prior, cfg)
}

/// Clique score of an arbitrary set of 2D limbs of `limb` plus an optional
/// prior person, from the graph's edges.
pub fn bundle_score(graph: &Graph4D, limb: usize, limbs: &[Limb2D], prior: Option<usize>, cfg: &SolverConfig) -> f64 {
    let (a, b) = graph.limbs()[limb];
    let parsing: f64 = limbs.iter().map(|l| l.paf).sum();
    let mut matching = 0.0;
    for (i, x) in limbs.iter().enumerate() {
        for y in &limbs[i + 1..] {
            matching += graph.matching_weight_of(a, x.view, x.m, y.view, y.m).unwrap_or(0.0);
            matching += graph.matching_weight_of(b, x.view, x.n, y.view, y.n).unwrap_or(0.0);
        }
    }
    let tracking: f64 = prior
        .map(|k| {
            limbs
                .iter()
                .map(|l| {
                    graph.tracking_weight_of(a, k, l.view, l.m).unwrap_or(0.0)
                        + graph.tracking_weight_of(b, k, l.view, l.n).unwrap_or(0.0)
                })
                .sum()
        })
        .unwrap_or(0.0);
    let sums = EdgeSums {
        parsing,
        matching,
        tracking,
    };
    score_of(&sums, limbs.len(), prior.is_some(), cfg, graph.view_count())
}

/// Liveness of limb graph nodes during greedy extraction.
#[derive(Debug, Clone)]
pub struct Alive {
    limbs: Vec<bool>,
    temporals: Vec<bool>,
}

impl Alive {
    pub fn all(lg: &LimbGraph<'_>) -> Self {
        Self {
            limbs: vec![true; lg.limbs.len()],
            temporals: vec![true; lg.temporals.len()],
        }
    }

    pub fn limb(&self, x: u32) -> bool {
        self.limbs[x as usize]
    }

    pub fn temporal(&self, t: u32) -> bool {
        self.temporals[t as usize]
    }
}

/// An accepted limb clique.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbBundle {
    pub limb: usize,
    pub limbs: Vec<Limb2D>,
    /// Prior person index and id of the temporal limb node, if any.
    pub temporal: Option<(usize, PersonId)>,
    pub score: f64,
}

impl LimbBundle {
    pub fn size(&self) -> usize {
        self.limbs.len() + self.temporal.is_some() as usize
    }

    /// Ordering key for deterministic tie-breaks: limb type, then
    /// (view, candidate, candidate) per 2D limb, then person id.
    pub fn tie_key(&self) -> (usize, Vec<(usize, usize, usize)>, Option<PersonId>) {
        (
            self.limb,
            self.limbs.iter().map(|l| (l.view, l.m, l.n)).collect(),
            self.temporal.map(|t| t.1),
        )
    }
}

/// Trace of one greedy extraction, for diagnostics and tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseTrace {
    /// Popped scores, in order.
    pub scores: Vec<f64>,
    /// Indices into `scores` at which some seed had to be re-grown.
    pub regrow_points: Vec<usize>,
}

/// Score at or below which a clique counts as noise and extraction stops.
pub fn stop_threshold(cfg: &SolverConfig, view_count: usize) -> f64 {
    cfg.graph.w_size * welsch(1.0, welsch_scale(view_count)) + cfg.score_floor
}

struct SeedState {
    seed: LimbClique,
    best: Option<LimbClique>,
    footprint_limbs: Vec<u32>,
    footprint_temporals: Vec<u32>,
    dirty: bool,
    version: u32,
}

impl SeedState {
    fn regrow(&mut self, lg: &LimbGraph<'_>, sc: &Scorer<'_>, alive: &Alive, scratch: &mut Scratch) {
        let mut limbs = std::mem::take(&mut self.footprint_limbs);
        let mut temps = std::mem::take(&mut self.footprint_temporals);
        limbs.clear();
        temps.clear();
        let mut best: Option<LimbClique> = None;
        lg.grow_with(self.seed.clone(), sc, alive, scratch, |c| {
            limbs.extend_from_slice(&c.limbs);
            temps.extend(c.temporal);
            let better = best
                .as_ref()
                .is_none_or(|b| c.score.total_cmp(&b.score).then_with(|| b.tie_cmp(c)).is_gt());
            if better {
                best = Some(c.clone());
            }
        });
        limbs.sort_unstable();
        limbs.dedup();
        temps.sort_unstable();
        temps.dedup();
        self.best = best;
        self.footprint_limbs = limbs;
        self.footprint_temporals = temps;
        self.dirty = false;
        self.version += 1;
    }

    fn seed_alive(&self, alive: &Alive) -> bool {
        self.seed.limbs.iter().all(|&x| alive.limb(x)) && self.seed.temporal.is_none_or(|t| alive.temporal(t))
    }

    fn ranked(&self, seed: u32) -> Option<Ranked> {
        self.best.as_ref().map(|b| Ranked {
            score: b.score,
            limbs: SmallVec::from_slice(&b.limbs),
            temporal: b.temporal,
            seed,
            version: self.version,
        })
    }
}

/// A seed's best clique as of one growth of that seed. Ordered by score,
/// then by clique and seed so that the heap pops deterministically.
struct Ranked {
    score: f64,
    limbs: SmallVec<[u32; 8]>,
    temporal: Option<u32>,
    seed: u32,
    version: u32,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| (&other.limbs, other.temporal).cmp(&(&self.limbs, self.temporal)))
            .then_with(|| other.seed.cmp(&self.seed))
    }
}

/// Node -> seeds whose footprint held the node at some point, as linked
/// lists threaded through one buffer.
struct Users {
    head: Vec<u32>,
    /// (seed, next link)
    links: Vec<(u32, u32)>,
}

impl Users {
    const END: u32 = u32::MAX;

    fn new(nodes: usize) -> Self {
        Self {
            head: vec![Self::END; nodes],
            links: Vec::new(),
        }
    }

    fn add(&mut self, node: usize, seed: u32) {
        self.links.push((seed, self.head[node]));
        self.head[node] = (self.links.len() - 1) as u32;
    }

    fn of(&self, node: usize) -> impl Iterator<Item = u32> + '_ {
        let mut k = self.head[node];
        std::iter::from_fn(move || {
            let (seed, next) = *self.links.get(k as usize)?;
            k = next;
            Some(seed)
        })
    }
}

/// Greedy extraction of limb bundles: repeatedly take the best clique, then
/// remove its joints (and with them every edge touching them) and its temporal
/// node, until no clique scores above the noise threshold.
///
/// Seeds whose grown cliques touched removed nodes are re-grown lazily, when
/// their previous best reaches the top of the queue.
pub fn parse_limb_bundles(lg: &LimbGraph<'_>, cfg: &SolverConfig) -> Vec<LimbBundle> {
    parse_limb_bundles_traced(lg, cfg).0
}

pub fn parse_limb_bundles_traced(lg: &LimbGraph<'_>, cfg: &SolverConfig) -> (Vec<LimbBundle>, ParseTrace) {
    let mut alive = Alive::all(lg);
    let mut trace = ParseTrace::default();
    let mut bundles = Vec::new();
    if lg.is_empty() {
        return (bundles, trace);
    }
    let threshold = stop_threshold(cfg, lg.graph.view_count());
    let sc = Scorer::new(cfg, lg.graph.view_count());
    let mut scratch = Scratch::default();
    let mut seeds: Vec<SeedState> = lg
        .seeds(cfg)
        .into_iter()
        .map(|seed| SeedState {
            seed,
            best: None,
            footprint_limbs: Vec::new(),
            footprint_temporals: Vec::new(),
            dirty: true,
            version: 0,
        })
        .collect();
    let mut users = Users::new(lg.limbs.len() + lg.temporals.len());
    let temporal_base = lg.limbs.len();
    let mut heap = BinaryHeap::new();
    let mut grow = |s: &mut SeedState, i: u32, alive: &Alive, users: &mut Users, heap: &mut BinaryHeap<Ranked>| {
        s.regrow(lg, &sc, alive, &mut scratch);
        for &x in &s.footprint_limbs {
            users.add(x as usize, i);
        }
        for &t in &s.footprint_temporals {
            users.add(temporal_base + t as usize, i);
        }
        heap.extend(s.ranked(i));
    };
    for (i, s) in seeds.iter_mut().enumerate() {
        grow(s, i as u32, &alive, &mut users, &mut heap);
    }
    let mut regrown = false;
    while let Some(top) = heap.pop() {
        let i = top.seed as usize;
        if top.version != seeds[i].version || !seeds[i].seed_alive(&alive) {
            continue;
        }
        if top.score <= threshold {
            break;
        }
        if seeds[i].dirty {
            grow(&mut seeds[i], top.seed, &alive, &mut users, &mut heap);
            regrown = true;
            continue;
        }
        if regrown && !trace.scores.is_empty() {
            trace.regrow_points.push(trace.scores.len());
        }
        regrown = false;
        let best = seeds[i].best.clone().expect("ranked seeds have a best clique");
        trace.scores.push(best.score);
        bundles.push(lg.to_bundle(&best));
        heap.push(top);

        for &x in &best.limbs {
            let l = lg.limbs[x as usize];
            for &y in lg.by_joint[l.view][0][l.m].iter().chain(&lg.by_joint[l.view][1][l.n]) {
                if std::mem::replace(&mut alive.limbs[y as usize], false) {
                    for u in users.of(y as usize) {
                        let s = &mut seeds[u as usize];
                        s.dirty |= s.footprint_limbs.binary_search(&y).is_ok();
                    }
                }
            }
        }
        if let Some(t) = best.temporal {
            alive.temporals[t as usize] = false;
            for u in users.of(temporal_base + t as usize) {
                let s = &mut seeds[u as usize];
                s.dirty |= s.footprint_temporals.binary_search(&t).is_ok();
            }
        }
    }
    (bundles, trace)
}
