//! Optimal leaf ordering by dynamic programming over subtree flips.
//!
//! For every internal node `v` with children `l` and `r`, `M[u][w]` holds
//! the cheapest ordering of `v`'s leaves that starts at `u ∈ l` and ends at
//! `w ∈ r`. Because `u` and `w` determine `v` uniquely (their lowest common
//! ancestor), a single `m × m` table suffices, and it is symmetric. The
//! optimum at `v` joins an ordering of `l` ending at some `a` with one of
//! `r` starting at some `b`:
//!
//! `M[u][w] = min_{a, b} M[u][a] + d(a, b) + M[b][w]`
//!
//! which is evaluated in two passes through `T[u][b] = min_a M[u][a] + d(a, b)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::descriptors::DistanceMatrix;
use crate::error::{Error, Result};

use super::dendrogram::Dendrogram;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafOrdering {
    pub order: Vec<usize>,
    pub cost: f64,
}

impl LeafOrdering {
    pub fn new(order: Vec<usize>, d: &DistanceMatrix) -> Self {
        let cost = ordering_cost(&order, d);
        Self { order, cost }
    }

    /// `positions()[leaf]` is the slot of `leaf` in the ordering.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &leaf) in self.order.iter().enumerate() {
            pos[leaf] = p;
        }
        pos
    }
}

/// Sum of distances between consecutive leaves.
pub fn ordering_cost(order: &[usize], d: &DistanceMatrix) -> f64 {
    order.windows(2).map(|w| d.get(w[0], w[1])).sum()
}

struct Ranges {
    dfo: Vec<usize>,
    pos: Vec<usize>,
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Ranges {
    fn new(tree: &Dendrogram) -> Self {
        let dfo = tree.depth_first_order();
        let mut pos = vec![0; dfo.len()];
        for (p, &leaf) in dfo.iter().enumerate() {
            pos[leaf] = p;
        }
        let n = tree.nodes().len();
        let (mut lo, mut hi) = (vec![0; n], vec![0; n]);
        for node in tree.nodes() {
            match node.children {
                None => {
                    lo[node.id] = pos[node.id];
                    hi[node.id] = pos[node.id] + 1;
                }
                Some([l, r]) => {
                    lo[node.id] = lo[l].min(lo[r]);
                    hi[node.id] = hi[l].max(hi[r]);
                }
            }
        }
        Self { dfo, pos, lo, hi }
    }

    fn leaves(&self, v: usize) -> &[usize] {
        &self.dfo[self.lo[v]..self.hi[v]]
    }

    fn contains(&self, v: usize, leaf: usize) -> bool {
        (self.lo[v]..self.hi[v]).contains(&self.pos[leaf])
    }

    /// Leaves of `v` that can end an ordering of `v` starting at `u`.
    fn far_side(&self, tree: &Dendrogram, v: usize, u: usize) -> &[usize] {
        match tree.nodes()[v].children {
            None => self.leaves(v),
            Some([a, b]) => {
                if self.contains(a, u) {
                    self.leaves(b)
                } else {
                    self.leaves(a)
                }
            }
        }
    }
}

/// Flip-reachable ordering of the tree's leaves with minimum adjacent cost.
/// The root keeps its left child first.
pub fn optimal_leaf_order(tree: &Dendrogram, d: &DistanceMatrix) -> Result<LeafOrdering> {
    let m = tree.leaf_count();
    if d.len() != m {
        return Err(Error::Shape {
            expected: format!("{m} leaves"),
            found: format!("{} rows", d.len()),
        });
    }
    if m <= 2 {
        return Ok(LeafOrdering::new(tree.depth_first_order(), d));
    }
    let ranges = Ranges::new(tree);
    let mut table = vec![0.0f64; m * m];

    for node in tree.nodes() {
        let Some([l, r]) = node.children else { continue };
        let left = ranges.leaves(l);
        let right = ranges.leaves(r);
        // one row of M per u in the left subtree
        let rows: Vec<Vec<f64>> = left
            .par_iter()
            .map(|&u| {
                let ends = ranges.far_side(tree, l, u);
                let t: Vec<f64> = right
                    .iter()
                    .map(|&b| {
                        let drow = d.row(b);
                        ends.iter()
                            .map(|&a| table[u * m + a] + drow[a])
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                right
                    .iter()
                    .map(|&w| {
                        let starts = ranges.far_side(tree, r, w);
                        starts
                            .iter()
                            .map(|&b| t[ranges.pos[b] - ranges.lo[r]] + table[b * m + w])
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            })
            .collect();
        for (&u, row) in left.iter().zip(rows) {
            for (&w, v) in right.iter().zip(row) {
                table[u * m + w] = v;
                table[w * m + u] = v;
            }
        }
    }

    let root = tree.root();
    let [l, r] = tree.nodes()[root].children.expect("root is internal for m > 2");
    let mut best = (f64::INFINITY, 0, 0);
    for &u in ranges.leaves(l) {
        for &w in ranges.leaves(r) {
            let v = table[u * m + w];
            if v < best.0 {
                best = (v, u, w);
            }
        }
    }
    let mut order = Vec::with_capacity(m);
    trace(tree, &ranges, d, &table, root, best.1, best.2, &mut order);
    Ok(LeafOrdering::new(order, d))
}

#[allow(clippy::too_many_arguments)]
fn trace(
    tree: &Dendrogram,
    ranges: &Ranges,
    d: &DistanceMatrix,
    table: &[f64],
    v: usize,
    u: usize,
    w: usize,
    out: &mut Vec<usize>,
) {
    let m = tree.leaf_count();
    let Some([a, b]) = tree.nodes()[v].children else {
        out.push(v);
        return;
    };
    let (first, second) = if ranges.contains(a, u) { (a, b) } else { (b, a) };
    let ends = ranges.far_side(tree, first, u);
    let starts = ranges.far_side(tree, second, w);
    let mut best = (f64::INFINITY, ends[0], starts[0]);
    for &x in ends {
        for &y in starts {
            let c = table[u * m + x] + d.get(x, y) + table[y * m + w];
            if c < best.0 {
                best = (c, x, y);
            }
        }
    }
    trace(tree, ranges, d, table, first, u, best.1, out);
    trace(tree, ranges, d, table, second, best.2, w, out);
}
