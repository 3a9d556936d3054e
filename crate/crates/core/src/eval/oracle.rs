//! Exact association by exhaustive search over person partitions of the
//! candidate nodes, for certifying the greedy solver on toy instances.

use crate::error::{Error, Result};
use crate::graph::{objective, EdgeEnds, Graph4D, GraphConfig, NodeLabels, Selection};

pub const DEFAULT_STATE_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub selection: Selection,
    pub objective: f64,
    /// Search states visited.
    pub states: u64,
}

struct Search<'a> {
    /// (view, joint, cand) per node, in search order.
    nodes: Vec<(usize, usize, usize)>,
    /// Per node: weighted edges to earlier nodes.
    back: Vec<Vec<(usize, f64)>>,
    /// Per node: weighted tracking edges to prior persons.
    tracking: Vec<Vec<(usize, f64)>>,
    /// Upper bound on the gain of nodes `i..`.
    suffix_bound: Vec<f64>,
    priors: usize,
    /// Block of each node assigned so far.
    block: Vec<usize>,
    /// Per block: occupied (view, joint) slots.
    occupied: Vec<Vec<bool>>,
    joints: usize,
    best: f64,
    best_block: Option<Vec<usize>>,
    states: u64,
    cap: u64,
    graph: &'a Graph4D,
}

impl Search<'_> {
    fn slot(&self, node: usize) -> usize {
        let (v, j, _) = self.nodes[node];
        v * self.joints + j
    }

    fn gain(&self, node: usize, b: usize) -> f64 {
        let mut g: f64 = self.back[node].iter().filter(|(o, _)| self.block[*o] == b).map(|(_, w)| w).sum();
        if b < self.priors {
            g += self.tracking[node].iter().filter(|(k, _)| *k == b).map(|(_, w)| w).sum::<f64>();
        }
        g
    }

    fn run(&mut self, i: usize, value: f64) -> Result<()> {
        self.states += 1;
        if self.states > self.cap {
            return Err(Error::InstanceTooLarge { cap: self.cap });
        }
        if i == self.nodes.len() {
            if value > self.best {
                self.best = value;
                self.best_block = Some(self.block.clone());
            }
            return Ok(());
        }
        if value + self.suffix_bound[i] <= self.best {
            return Ok(());
        }
        let slot = self.slot(i);
        let blocks = self.occupied.len();
        let mut options: Vec<(f64, usize)> = (0..blocks)
            .filter(|&b| !self.occupied[b][slot])
            .map(|b| (self.gain(i, b), b))
            .collect();
        // most promising block first tightens the incumbent early
        options.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        for (g, b) in options {
            self.block[i] = b;
            self.occupied[b][slot] = true;
            self.run(i + 1, value + g)?;
            self.occupied[b][slot] = false;
        }
        // a fresh block
        let nslots = self.occupied.first().map_or(self.graph.view_count() * self.joints, Vec::len);
        let mut fresh = vec![false; nslots];
        fresh[slot] = true;
        self.occupied.push(fresh);
        self.block[i] = blocks;
        self.run(i + 1, value)?;
        self.occupied.pop();
        Ok(())
    }
}

/// Maximum of the weighted objective over all person partitions of the
/// graph's candidate nodes. `incumbent` is a known achievable objective used
/// for pruning. Fails with [`Error::InstanceTooLarge`] once more than `cap`
/// search states have been visited.
pub fn brute_force_solve(graph: &Graph4D, cfg: &GraphConfig, cap: u64, incumbent: Option<f64>) -> Result<OracleSolution> {
    let nv = graph.view_count();
    let nj = graph.joint_count();
    let mut nodes = Vec::new();
    for j in 0..nj {
        for v in 0..nv {
            for c in 0..graph.candidate_count(v, j) {
                nodes.push((v, j, c));
            }
        }
    }
    let mut id = vec![vec![Vec::new(); nj]; nv];
    for (i, &(v, j, _)) in nodes.iter().enumerate() {
        id[v][j].push(i);
    }
    let mut back = vec![Vec::new(); nodes.len()];
    let mut tracking = vec![Vec::new(); nodes.len()];
    for e in graph.edges() {
        let (a, b, w) = match e.ends {
            EdgeEnds::Parsing { view, limb, m, n } => {
                let (ja, jb) = graph.limbs()[limb];
                (id[view][ja][m], id[view][jb][n], cfg.w_parsing * e.weight)
            }
            EdgeEnds::Matching { joint, view_a, cand_a, view_b, cand_b } => {
                (id[view_a][joint][cand_a], id[view_b][joint][cand_b], cfg.w_matching * e.weight)
            }
            EdgeEnds::Tracking { joint, person, view, cand } => {
                tracking[id[view][joint][cand]].push((person, cfg.w_tracking * e.weight));
                continue;
            }
        };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        back[hi].push((lo, w));
    }
    let mut suffix_bound = vec![0.0; nodes.len() + 1];
    for i in (0..nodes.len()).rev() {
        let own: f64 = back[i].iter().map(|(_, w)| w.max(0.0)).sum::<f64>()
            + tracking[i].iter().map(|(_, w)| w.max(0.0)).fold(0.0, f64::max);
        suffix_bound[i] = suffix_bound[i + 1] + own;
    }
    let priors = graph.prior_count();
    let mut search = Search {
        block: vec![usize::MAX; nodes.len()],
        occupied: vec![vec![false; nv * nj]; priors],
        nodes,
        back,
        tracking,
        suffix_bound,
        priors,
        joints: nj,
        // slightly below the incumbent so a partition reaching it is recorded
        best: incumbent.map_or(f64::NEG_INFINITY, |v| v - 1e-9),
        best_block: None,
        states: 0,
        cap,
        graph,
    };
    search.run(0, 0.0)?;

    let Some(blocks) = &search.best_block else {
        return Err(Error::Mismatch("incumbent objective exceeds every partition".into()));
    };
    let mut labels = NodeLabels::unlabeled(graph);
    for (i, &(v, j, c)) in search.nodes.iter().enumerate() {
        labels.candidates[v][j][c] = Some(blocks[i]);
    }
    for k in 0..priors {
        labels.priors[k] = Some(k);
    }
    let selection = graph.induced_selection(&labels);
    let objective = objective(&selection, graph, cfg);
    Ok(OracleSolution {
        selection,
        objective,
        states: search.states,
    })
}
