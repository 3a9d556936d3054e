use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Joint names of the built-in 19-joint body tree. Index order is the joint
/// index used everywhere else.
pub const BODY19_JOINTS: [&str; 19] = [
    "pelvis",
    "neck",
    "nose",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_toe",
    "l_toe",
];

const BODY19_LIMBS: [(usize, usize); 18] = [
    (0, 1),
    (1, 2),
    (1, 3),
    (3, 4),
    (4, 5),
    (1, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (10, 11),
    (0, 12),
    (12, 13),
    (13, 14),
    (2, 15),
    (2, 16),
    (11, 17),
    (14, 18),
];

/// Left/right limb pairs by limb index into `BODY19_LIMBS`.
const BODY19_SYMMETRY: [(usize, usize); 8] = [(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17)];

/// A skeleton tree: joints plus the limbs connecting them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    limbs: Vec<(usize, usize)>,
    root: usize,
    /// Pairs of limb indices expected to have equal length.
    symmetric_limbs: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(
        joint_names: Vec<String>,
        limbs: Vec<(usize, usize)>,
        root: usize,
        symmetric_limbs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let j = joint_names.len();
        if j == 0 {
            return Err(Error::InvalidTopology("no joints".into()));
        }
        if root >= j {
            return Err(Error::InvalidTopology(format!("root {root} out of range")));
        }
        if limbs.len() != j - 1 {
            return Err(Error::InvalidTopology(format!(
                "a tree over {j} joints needs {} limbs, got {}",
                j - 1,
                limbs.len()
            )));
        }
        let mut parent: Vec<usize> = (0..j).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &limbs {
            if a >= j || b >= j {
                return Err(Error::InvalidTopology(format!("limb ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self loop on joint {a}")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::InvalidTopology(format!("limb ({a},{b}) closes a cycle")));
            }
            parent[ra] = rb;
        }
        for &(x, y) in &symmetric_limbs {
            if x >= limbs.len() || y >= limbs.len() || x == y {
                return Err(Error::InvalidTopology(format!("bad symmetric limb pair ({x},{y})")));
            }
        }
        Ok(Self {
            joint_names,
            limbs,
            root,
            symmetric_limbs,
        })
    }

    /// A bare chain `0-1-...-(n-1)` rooted at joint 0.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new(
            (0..n).map(|i| format!("j{i}")).collect(),
            (1..n).map(|i| (i - 1, i)).collect(),
            0,
            Vec::new(),
        )
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    pub fn limb(&self, idx: usize) -> (usize, usize) {
        self.limbs[idx]
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn symmetric_limbs(&self) -> &[(usize, usize)] {
        &self.symmetric_limbs
    }

    /// Limb indices incident to each joint.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.joint_count()];
        for (l, &(a, b)) in self.limbs.iter().enumerate() {
            adj[a].push(l);
            adj[b].push(l);
        }
        adj
    }

    /// Parent joint of every joint when the tree hangs from the root, plus a
    /// root-first visiting order.
    pub fn parents(&self) -> (Vec<Option<usize>>, Vec<usize>) {
        let adj = self.adjacency();
        let mut parent = vec![None; self.joint_count()];
        let mut seen = vec![false; self.joint_count()];
        let mut order = vec![self.root];
        seen[self.root] = true;
        let mut i = 0;
        while i < order.len() {
            let j = order[i];
            for &l in &adj[j] {
                let (a, b) = self.limbs[l];
                let other = if a == j { b } else { a };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some(j);
                    order.push(other);
                }
            }
            i += 1;
        }
        (parent, order)
    }

    /// Stable content hash used to tie detection files to a topology.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.joint_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for &(a, b) in &self.limbs {
            h.update((a as u32).to_le_bytes());
            h.update((b as u32).to_le_bytes());
        }
        h.update((self.root as u32).to_le_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The built-in 19-joint body tree rooted at the pelvis.
pub fn default_topology() -> SkeletonTopology {
    SkeletonTopology::new(
        BODY19_JOINTS.iter().map(|s| s.to_string()).collect(),
        BODY19_LIMBS.to_vec(),
        0,
        BODY19_SYMMETRY.to_vec(),
    )
    .expect("built-in topology is a tree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_is_tree() {
        let t = default_topology();
        assert_eq!(t.limb_count(), t.joint_count() - 1);
        let (parent, order) = t.parents();
        assert_eq!(order.len(), t.joint_count());
        assert!(parent[t.root()].is_none());
        assert!(parent.iter().enumerate().all(|(j, p)| j == t.root() || p.is_some()));
        for &(x, y) in t.symmetric_limbs() {
            let (a, b) = t.limb(x);
            let (c, d) = t.limb(y);
            let side = |j: usize| t.joint_names()[j].chars().next().unwrap();
            assert!(side(b) == 'r' && side(d) == 'l', "{a}-{b} vs {c}-{d}");
        }
    }

    #[test]
    fn rejects_cycle_and_disconnected() {
        let names = || (0..4).map(|i| i.to_string()).collect::<Vec<_>>();
        assert!(SkeletonTopology::new(names(), vec![(0, 1), (1, 2), (2, 0)], 0, vec![]).is_err());
        assert!(SkeletonTopology::new(names(), vec![(0, 1), (1, 2)], 0, vec![]).is_err());
        assert!(SkeletonTopology::new(names(), vec![(0, 1), (1, 2), (2, 3)], 0, vec![]).is_ok());
    }

    #[test]
    fn hash_depends_on_structure() {
        let a = SkeletonTopology::chain(3).unwrap();
        let b = SkeletonTopology::new(
            a.joint_names().to_vec(),
            vec![(0, 1), (0, 2)],
            0,
            vec![],
        )
        .unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), SkeletonTopology::chain(3).unwrap().hash());
    }

    fn is_tree(n: usize, edges: &[(usize, usize)]) -> bool {
        if edges.len() + 1 != n {
            return false;
        }
        let mut adj = vec![vec![]; n];
        for &(a, b) in edges {
            if a == b {
                return false;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    proptest! {
        #[test]
        fn validation_matches_tree_oracle(
            n in 1usize..8,
            raw in proptest::collection::vec((0usize..8, 0usize..8), 0..9)
        ) {
            let edges: Vec<_> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
            let names = (0..n).map(|i| i.to_string()).collect();
            let ok = SkeletonTopology::new(names, edges.clone(), 0, vec![]).is_ok();
            prop_assert_eq!(ok, is_tree(n, &edges));
        }
    }
}
