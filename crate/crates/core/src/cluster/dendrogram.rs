use serde::Serialize;

use crate::descriptors::DistanceMatrix;
use crate::error::{Error, Result};

/// One agglomeration step. `left`/`right` are node ids (leaves are
/// `0..m`, the merge at step `s` creates node `m + s`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DendrogramNode {
    pub id: usize,
    pub children: Option<[usize; 2]>,
    pub height: f64,
    pub size: usize,
    /// Leaf index minimising summed distance to the other members.
    pub medoid: usize,
}

impl DendrogramNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary merge tree over `m` leaves stored as an arena. Children always
/// have smaller ids than their parent; the root is the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    nodes: Vec<DendrogramNode>,
    parents: Vec<Option<usize>>,
    leaves: usize,
}

impl Dendrogram {
    /// Builds the tree from merge steps and computes every node's medoid.
    /// Summed distances are accumulated at each merge so the total cost is
    /// one pass over the pairwise distances.
    pub fn from_merges(merges: &[Merge], d: &DistanceMatrix) -> Result<Self> {
        let m = d.len();
        if m == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if merges.len() != m - 1 {
            return Err(Error::Validation(format!(
                "{} merges for {m} leaves",
                merges.len()
            )));
        }
        let mut nodes: Vec<DendrogramNode> = (0..m)
            .map(|i| DendrogramNode {
                id: i,
                children: None,
                height: 0.0,
                size: 1,
                medoid: i,
            })
            .collect();
        // members and their running distance sums, per live node
        let mut members: Vec<Option<Vec<usize>>> = (0..m).map(|i| Some(vec![i])).collect();
        let mut sums: Vec<Option<Vec<f64>>> = (0..m).map(|_| Some(vec![0.0])).collect();
        let mut parents = vec![None; 2 * m - 1];
        for (s, mg) in merges.iter().enumerate() {
            let id = m + s;
            if mg.left >= id || mg.right >= id || mg.left == mg.right {
                return Err(Error::Validation(format!("merge {s} references invalid nodes")));
            }
            let (lm, ls) = (members[mg.left].take(), sums[mg.left].take());
            let (rm, rs) = (members[mg.right].take(), sums[mg.right].take());
            let (Some(lm), Some(mut ls), Some(rm), Some(mut rs)) = (lm, ls, rm, rs) else {
                return Err(Error::Validation(format!("merge {s} reuses a merged node")));
            };
            for (a, &i) in lm.iter().enumerate() {
                let row = d.row(i);
                for (b, &j) in rm.iter().enumerate() {
                    let v = row[j];
                    ls[a] += v;
                    rs[b] += v;
                }
            }
            let mut mem = lm;
            mem.extend(rm);
            let mut sm = ls;
            sm.extend(rs);
            let medoid = argmin_with_ties(&mem, &sm);
            let lh = nodes[mg.left].height;
            let rh = nodes[mg.right].height;
            nodes.push(DendrogramNode {
                id,
                children: Some([mg.left, mg.right]),
                height: mg.height.max(lh).max(rh),
                size: mem.len(),
                medoid,
            });
            parents[mg.left] = Some(id);
            parents[mg.right] = Some(id);
            members.push(Some(mem));
            sums.push(Some(sm));
        }
        Ok(Self {
            nodes,
            parents,
            leaves: m,
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, id: usize) -> Option<&DendrogramNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> &[DendrogramNode] {
        &self.nodes
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parents.get(id).copied().flatten()
    }

    pub fn height(&self, id: usize) -> f64 {
        self.nodes[id].height
    }

    /// Leaves of the subtree in depth-first (child order) sequence.
    pub fn leaves(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[id].size);
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            match self.nodes[v].children {
                None => out.push(v),
                Some([l, r]) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        out
    }

    /// Sorted leaf indices of the subtree.
    pub fn members(&self, id: usize) -> Vec<usize> {
        let mut v = self.leaves(id);
        v.sort_unstable();
        v
    }

    /// Node ids of the subtree, parents before children.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            out.push(v);
            if let Some([l, r]) = self.nodes[v].children {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    pub fn depth_first_order(&self) -> Vec<usize> {
        self.leaves(self.root())
    }

    /// Copy with children swapped wherever needed so that the depth-first
    /// leaf order matches `order`. `order` must be flip-reachable.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        if !self.is_flip_reachable(order) {
            return Err(Error::Validation(
                "ordering is not reachable by subtree flips".into(),
            ));
        }
        let mut pos = vec![0; self.leaves];
        for (p, &leaf) in order.iter().enumerate() {
            pos[leaf] = p;
        }
        let mut first = vec![usize::MAX; self.nodes.len()];
        let mut out = self.clone();
        for id in 0..self.nodes.len() {
            match self.nodes[id].children {
                None => first[id] = pos[id],
                Some([l, r]) => {
                    first[id] = first[l].min(first[r]);
                    if first[r] < first[l] {
                        out.nodes[id].children = Some([r, l]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// True when every subtree occupies a contiguous block of `order`,
    /// i.e. `order` is some planar embedding of the tree.
    pub fn is_flip_reachable(&self, order: &[usize]) -> bool {
        if order.len() != self.leaves {
            return false;
        }
        let mut pos = vec![usize::MAX; self.leaves];
        for (p, &leaf) in order.iter().enumerate() {
            if leaf >= self.leaves || pos[leaf] != usize::MAX {
                return false;
            }
            pos[leaf] = p;
        }
        let mut lo = vec![0; self.nodes.len()];
        let mut hi = vec![0; self.nodes.len()];
        for id in 0..self.nodes.len() {
            match self.nodes[id].children {
                None => {
                    lo[id] = pos[id];
                    hi[id] = pos[id];
                }
                Some([l, r]) => {
                    lo[id] = lo[l].min(lo[r]);
                    hi[id] = hi[l].max(hi[r]);
                    if hi[id] - lo[id] + 1 != self.nodes[id].size {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Index with the smallest sum; sums within a relative 1e-12 of the
/// minimum count as ties and resolve to the smallest leaf index.
pub(crate) fn argmin_with_ties(members: &[usize], sums: &[f64]) -> usize {
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(f64::MIN_POSITIVE);
    members
        .iter()
        .zip(sums)
        .filter(|(_, &s)| s <= min + tol)
        .map(|(&i, _)| i)
        .min()
        .expect("non-empty member set")
}
