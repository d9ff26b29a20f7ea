use std::collections::BTreeMap;

use serde::Serialize;

use crate::descriptors::DistanceMatrix;
use crate::error::{Error, Result};
use crate::model::TransitionLabel;

use super::dendrogram::Dendrogram;
use super::flatten::flat_roots;
use super::ward::ward_cluster;

/// One flat group of the reduction: all members collapse onto `medoid`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionGroup {
    pub node: usize,
    pub medoid: usize,
    pub members: Vec<usize>,
    pub height: f64,
    /// Mean over unordered member pairs; 0 for singletons.
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionResult {
    pub cutoff: f64,
    pub kept: Vec<TransitionLabel>,
    /// Rows of the input matrix that survive, ascending.
    pub kept_indices: Vec<usize>,
    /// Representative → absorbed labels. Only groups that absorbed something appear.
    pub removed: BTreeMap<TransitionLabel, Vec<TransitionLabel>>,
    pub groups: Vec<ReductionGroup>,
    pub reduced: DistanceMatrix,
}

impl ReductionResult {
    pub fn kept_fraction(&self, total: usize) -> f64 {
        self.kept.len() as f64 / total.max(1) as f64
    }

    pub fn absorbed_by(&self, representative: &TransitionLabel) -> &[TransitionLabel] {
        self.removed.get(representative).map_or(&[], Vec::as_slice)
    }

    /// Mean intra-group distances of the multi-member groups.
    pub fn group_means(&self) -> Vec<f64> {
        self.groups
            .iter()
            .filter(|g| g.members.len() > 1)
            .map(|g| g.mean_distance)
            .collect()
    }
}

pub fn reduce(d: &DistanceMatrix, cutoff: f64) -> Result<ReductionResult> {
    if !(cutoff >= 0.0) {
        return Err(Error::InvalidArgument(format!("reduction cutoff {cutoff} must be >= 0")));
    }
    if cutoff == 0.0 {
        return Ok(identity(d));
    }
    let tree = ward_cluster(d)?;
    reduce_with_tree(d, &tree, cutoff)
}

/// Reduction using an already-built ward tree of `d`.
pub fn reduce_with_tree(d: &DistanceMatrix, tree: &Dendrogram, cutoff: f64) -> Result<ReductionResult> {
    if !(cutoff >= 0.0) {
        return Err(Error::InvalidArgument(format!("reduction cutoff {cutoff} must be >= 0")));
    }
    if tree.leaf_count() != d.len() {
        return Err(Error::Shape {
            expected: format!("{} leaves", d.len()),
            found: format!("{} leaves", tree.leaf_count()),
        });
    }
    if cutoff == 0.0 {
        return Ok(identity(d));
    }
    let labels = d.labels();
    let mut groups: Vec<ReductionGroup> = flat_roots(tree, cutoff)
        .into_iter()
        .map(|node| {
            let n = tree.node(node).unwrap();
            let members = tree.members(node);
            ReductionGroup {
                node,
                medoid: n.medoid,
                mean_distance: mean_pairwise(&members, d),
                height: n.height,
                members,
            }
        })
        .collect();
    groups.sort_by_key(|g| g.medoid);

    let mut kept_indices: Vec<usize> = groups.iter().map(|g| g.medoid).collect();
    kept_indices.sort_unstable();
    let mut removed = BTreeMap::new();
    for g in &groups {
        let absorbed: Vec<TransitionLabel> = g
            .members
            .iter()
            .filter(|&&i| i != g.medoid)
            .map(|&i| labels[i].clone())
            .collect();
        if !absorbed.is_empty() {
            removed.insert(labels[g.medoid].clone(), absorbed);
        }
    }
    Ok(ReductionResult {
        cutoff,
        kept: kept_indices.iter().map(|&i| labels[i].clone()).collect(),
        reduced: d.submatrix(&kept_indices),
        kept_indices,
        removed,
        groups,
    })
}

fn identity(d: &DistanceMatrix) -> ReductionResult {
    let m = d.len();
    ReductionResult {
        cutoff: 0.0,
        kept: d.labels().to_vec(),
        kept_indices: (0..m).collect(),
        removed: BTreeMap::new(),
        groups: (0..m)
            .map(|i| ReductionGroup {
                node: i,
                medoid: i,
                members: vec![i],
                height: 0.0,
                mean_distance: 0.0,
            })
            .collect(),
        reduced: d.clone(),
    }
}

pub fn mean_pairwise(members: &[usize], d: &DistanceMatrix) -> f64 {
    let k = members.len();
    if k < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (a, &i) in members.iter().enumerate() {
        let row = d.row(i);
        for &j in &members[a + 1..] {
            sum += row[j];
        }
    }
    sum / (k * (k - 1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    /// `edges.len() == counts.len() + 1`
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    if values.is_empty() {
        return Histogram {
            min: 0.0,
            max: 0.0,
            edges: vec![0.0; bins + 1],
            counts: vec![0; bins],
        };
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| min + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - min) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { min, max, edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(m: usize) -> Vec<TransitionLabel> {
        (0..m)
            .map(|i| TransitionLabel::new(format!("s{i}"), format!("t{i}")))
            .collect()
    }

    #[test]
    fn zero_cutoff_keeps_everything() {
        let d = DistanceMatrix::from_fn(labels(4), |_, _| 0.0).unwrap();
        let r = reduce(&d, 0.0).unwrap();
        assert_eq!(r.kept.len(), 4);
        assert!(r.removed.is_empty());
    }

    #[test]
    fn equilateral_triple_collapses() {
        let d = DistanceMatrix::from_fn(labels(3), |_, _| 5.0).unwrap();
        let r = reduce(&d, 10.0).unwrap();
        assert_eq!(r.kept_indices, vec![0]);
        assert_eq!(r.absorbed_by(&r.kept[0]).len(), 2);
        assert_eq!(r.groups[0].mean_distance, 5.0);
        assert_eq!(r.reduced.len(), 1);
    }

    #[test]
    fn negative_cutoff_rejected() {
        let d = DistanceMatrix::from_fn(labels(2), |_, _| 1.0).unwrap();
        assert!(reduce(&d, -0.1).is_err());
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(h.counts, vec![1, 3]);
    }
}
