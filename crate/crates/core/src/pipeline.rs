//! End-to-end analysis state: full distances, reduction, and the
//! hierarchy over the reduced ensemble, with per-cluster derived views.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use crate::alignment::{align_group_to, AlignedGroup};
use crate::cluster::{reduce_with_tree, ward_cluster, Hierarchy, ReductionResult};
use crate::descriptors::{compute_ensemble, DistanceMatrix, EnsembleDistances, FeatureDelta};
use crate::error::{Error, Result};
use crate::field::{build_field, GroupDisplacementField};
use crate::ingest::Dataset;
use crate::model::{Transition, TransitionLabel};
use crate::session::{ClusterRef, SessionContext};
use crate::strain::{glyph_set, strain_field, GlyphParams, StrainField, SuperquadricGlyph};

#[derive(Debug, Clone, Default)]
pub struct AnalysisConfig {
    pub reduction_cutoff: f64,
    /// Relative whitening floor; `None` uses the default.
    pub epsilon: Option<f64>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub dataset: Arc<Dataset>,
    pub ensemble: Arc<EnsembleDistances>,
    pub reduction: ReductionResult,
    /// Hierarchy over `reduction.reduced`; leaf `i` is dataset transition
    /// `reduction.kept_indices[i]`.
    pub hierarchy: Hierarchy,
}

impl Analysis {
    pub fn run(dataset: Arc<Dataset>, config: &AnalysisConfig) -> Result<Self> {
        let ensemble = Arc::new(compute_ensemble(
            &dataset,
            config.epsilon,
            config.cache_dir.as_deref(),
        )?);
        Self::with_reduction(dataset, ensemble, config.reduction_cutoff)
    }

    /// Re-runs reduction and clustering on already computed distances.
    pub fn with_reduction(dataset: Arc<Dataset>, ensemble: Arc<EnsembleDistances>, cutoff: f64) -> Result<Self> {
        let reduction = reduce_full(&ensemble.matrix, cutoff)?;
        let hierarchy = Hierarchy::build(&reduction.reduced)?;
        Ok(Self {
            dataset,
            ensemble,
            reduction,
            hierarchy,
        })
    }

    pub fn full_distances(&self) -> &DistanceMatrix {
        &self.ensemble.matrix
    }

    pub fn reduced_distances(&self) -> &DistanceMatrix {
        &self.reduction.reduced
    }

    pub fn leaf_count(&self) -> usize {
        self.hierarchy.tree.leaf_count()
    }

    /// Dataset index of a reduced leaf.
    pub fn dataset_index(&self, leaf: usize) -> usize {
        self.reduction.kept_indices[leaf]
    }

    pub fn leaf_label(&self, leaf: usize) -> &TransitionLabel {
        &self.reduction.kept[leaf]
    }

    pub fn leaf_of(&self, label: &TransitionLabel) -> Option<usize> {
        self.reduction.reduced.index_of(label)
    }

    pub fn node_exists(&self, node: usize) -> bool {
        self.hierarchy.tree.node(node).is_some()
    }

    /// Leaves of a node in display order.
    pub fn members(&self, node: usize) -> Result<Vec<usize>> {
        if !self.node_exists(node) {
            return Err(Error::InvalidArgument(format!("unknown cluster node {node}")));
        }
        Ok(self.hierarchy.leaf_order(node))
    }

    pub fn cluster_ref(&self, node: usize) -> Option<ClusterRef> {
        let n = self.hierarchy.tree.node(node)?;
        Some(ClusterRef {
            node,
            medoid: self.leaf_label(n.medoid).clone(),
            size: n.size,
        })
    }

    /// Distances among a node's leaves, in display order.
    pub fn cluster_distances(&self, node: usize) -> Result<DistanceMatrix> {
        Ok(self.reduction.reduced.submatrix(&self.members(node)?))
    }

    pub fn delta(&self, dataset_index: usize) -> &FeatureDelta {
        &self.ensemble.deltas[dataset_index]
    }

    /// Aligns the cluster's transitions onto the node's medoid.
    pub fn align_cluster(&self, node: usize) -> Result<AlignedGroup> {
        let leaves = self.members(node)?;
        let ids: Vec<usize> = leaves.iter().map(|&l| self.dataset_index(l)).collect();
        let transitions: Vec<Transition> = ids.iter().map(|&i| self.dataset.transitions[i].clone()).collect();
        let deltas: Vec<FeatureDelta> = ids.iter().map(|&i| self.ensemble.deltas[i].clone()).collect();
        let medoid = self.hierarchy.tree.node(node).expect("member nodes exist").medoid;
        let mu = leaves.iter().position(|&l| l == medoid).expect("medoid is a member");
        align_group_to(&transitions, &deltas, mu)
    }

    pub fn cluster_field(&self, node: usize, sigma: Option<f64>) -> Result<GroupDisplacementField> {
        let group = self.align_cluster(node)?;
        build_field(node, &group, sigma)
    }

    pub fn strain(&self, dataset_index: usize) -> Result<StrainField> {
        let t = &self.dataset.transitions[dataset_index];
        strain_field(t, &self.dataset.bonds[dataset_index].initial)
    }

    /// Strain fields and glyphs of every leaf of a node. Opacity is
    /// normalised by the largest `|K1|` in the cluster.
    pub fn cluster_glyphs(
        &self,
        node: usize,
        params: &GlyphParams,
    ) -> Result<Vec<(TransitionLabel, StrainField, Vec<SuperquadricGlyph>)>> {
        let ids: Vec<usize> = self.members(node)?.iter().map(|&l| self.dataset_index(l)).collect();
        let fields = ids.iter().map(|&i| self.strain(i)).collect::<Result<Vec<_>>>()?;
        let k1_max = fields.iter().map(StrainField::max_abs_k1).fold(0.0, f64::max);
        Ok(ids
            .iter()
            .zip(fields)
            .map(|(&i, f)| {
                let t = &self.dataset.transitions[i];
                let g = glyph_set(&f, t, k1_max, params);
                (t.label.clone(), f, g)
            })
            .collect())
    }

    /// Absorbed duplicates per kept label.
    pub fn absorbed(&self) -> &BTreeMap<TransitionLabel, Vec<TransitionLabel>> {
        &self.reduction.removed
    }
}

/// Reduction of a full matrix (ward tree built here; cutoff 0 is identity).
pub fn reduce_full(d: &DistanceMatrix, cutoff: f64) -> Result<ReductionResult> {
    if cutoff == 0.0 {
        return crate::cluster::reduce(d, 0.0);
    }
    let tree = ward_cluster(d)?;
    reduce_with_tree(d, &tree, cutoff)
}

impl SessionContext for Analysis {
    fn dataset_hash(&self) -> String {
        self.dataset.content_hash()
    }

    fn has_transition(&self, label: &TransitionLabel) -> bool {
        self.dataset.index_of(label).is_some()
    }

    fn resolve_cluster(&self, cluster: &ClusterRef) -> Option<ClusterRef> {
        if let Some(now) = self.cluster_ref(cluster.node) {
            if now.medoid == cluster.medoid && now.size == cluster.size {
                return Some(now);
            }
        }
        self.hierarchy
            .tree
            .nodes()
            .iter()
            .filter_map(|n| self.cluster_ref(n.id))
            .find(|c| c.medoid == cluster.medoid && c.size == cluster.size)
    }
}
