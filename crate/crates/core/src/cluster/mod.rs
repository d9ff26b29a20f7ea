//! Hierarchical organisation of a transition ensemble.

pub mod colors;
pub mod dendrogram;
pub mod document;
pub mod flatten;
pub mod hilbert;
pub mod leaf_order;
pub mod medoid;
pub mod reduce;
pub mod ward;

pub use colors::{assign_colors, HueRange, NodeColor, DEFAULT_GAP_FRACTION};
pub use dendrogram::{Dendrogram, DendrogramNode, Merge};
pub use document::{tree_document, TreeDocument};
pub use flatten::{assignments, flat_roots, flatten, FlatCluster};
pub use hilbert::{d2xy, hilbert_layout, GridLayout};
pub use leaf_order::{optimal_leaf_order, ordering_cost, LeafOrdering};
pub use medoid::medoid;
pub use reduce::{histogram, mean_pairwise, reduce, reduce_with_tree, Histogram, ReductionGroup, ReductionResult};
pub use ward::{ward_cluster, ward_linkage, ward_update};

use crate::descriptors::DistanceMatrix;
use crate::error::Result;

/// Ward tree whose child order realises the optimal leaf ordering, with
/// node colors.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub tree: Dendrogram,
    pub ordering: LeafOrdering,
    pub colors: Vec<NodeColor>,
}

impl Hierarchy {
    pub fn build(d: &DistanceMatrix) -> Result<Self> {
        let tree = ward_cluster(d)?;
        let ordering = optimal_leaf_order(&tree, d)?;
        let tree = tree.reordered(&ordering.order)?;
        let colors = assign_colors(&tree, HueRange::FULL, DEFAULT_GAP_FRACTION);
        Ok(Self { tree, ordering, colors })
    }

    pub fn flatten(&self, cutoff: f64) -> Vec<FlatCluster> {
        flatten(&self.tree, cutoff, Some(&self.ordering))
    }

    /// Leaves of `node` in display order.
    pub fn leaf_order(&self, node: usize) -> Vec<usize> {
        self.tree.leaves(node)
    }
}
