use serde::Serialize;

use super::dendrogram::Dendrogram;
use super::leaf_order::LeafOrdering;

/// One flat cluster: the subtree root and its leaves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatCluster {
    pub node: usize,
    pub members: Vec<usize>,
}

/// Roots of the maximal subtrees whose merge height is `<= cutoff`, in
/// depth-first order.
pub fn flat_roots(tree: &Dendrogram, cutoff: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(v) = stack.pop() {
        let node = tree.node(v).expect("valid node");
        match node.children {
            Some([l, r]) if node.height > cutoff => {
                stack.push(r);
                stack.push(l);
            }
            _ => out.push(v),
        }
    }
    out
}

/// Cuts the tree at `cutoff`. With an ordering, clusters and their members
/// follow it; otherwise both follow the tree's depth-first order.
pub fn flatten(tree: &Dendrogram, cutoff: f64, ordering: Option<&LeafOrdering>) -> Vec<FlatCluster> {
    let mut clusters: Vec<FlatCluster> = flat_roots(tree, cutoff)
        .into_iter()
        .map(|node| FlatCluster {
            node,
            members: tree.leaves(node),
        })
        .collect();
    if let Some(ord) = ordering {
        let pos = ord.positions();
        for c in &mut clusters {
            c.members.sort_by_key(|&l| pos[l]);
        }
        clusters.sort_by_key(|c| pos[c.members[0]]);
    }
    clusters
}

/// Flat-cluster id of every leaf.
pub fn assignments(tree: &Dendrogram, cutoff: f64) -> Vec<usize> {
    let mut out = vec![0; tree.leaf_count()];
    for (c, root) in flat_roots(tree, cutoff).into_iter().enumerate() {
        for leaf in tree.leaves(root) {
            out[leaf] = c;
        }
    }
    out
}
