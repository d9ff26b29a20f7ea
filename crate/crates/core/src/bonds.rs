//! Distance-cutoff bond connectivity.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AtomicState, TransitionLabel, Vec3};

/// Multiplier applied to the median nearest-neighbour distance.
pub const DEFAULT_CUTOFF_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

/// Undirected bonds of one state. Edges are stored once with `i < j`; the
/// adjacency lists hold both directions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BondSet {
    edges: Vec<Bond>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl BondSet {
    fn from_edges(atom_count: usize, edges: Vec<Bond>) -> Self {
        let mut adjacency = vec![Vec::new(); atom_count];
        for b in &edges {
            adjacency[b.i].push((b.j, b.length));
            adjacency[b.j].push((b.i, b.length));
        }
        Self { edges, adjacency }
    }

    pub fn edges(&self) -> &[Bond] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, f64)] {
        &self.adjacency[atom]
    }

    pub fn length(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency
            .get(i)?
            .iter()
            .find(|(k, _)| *k == j)
            .map(|&(_, len)| len)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.length(i, j).is_some()
    }
}

/// Bond sets of both states of one transition.
#[derive(Debug, Clone)]
pub struct BondGraph {
    pub label: TransitionLabel,
    pub initial: Arc<BondSet>,
    pub terminal: Arc<BondSet>,
}

/// Connects every pair with `0 < |r_i - r_j| <= cutoff`.
pub fn compute_bonds(state: &AtomicState, cutoff: f64) -> Result<BondSet> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bond cutoff must be positive, got {cutoff}"
        )));
    }
    let pos = &state.positions;
    let mut edges = Vec::new();
    for i in 0..pos.len() {
        for j in (i + 1)..pos.len() {
            let len = (pos[i] - pos[j]).norm();
            if len == 0.0 {
                return Err(Error::CoincidentAtoms(i, j));
            }
            if len <= cutoff {
                edges.push(Bond { i, j, length: len });
            }
        }
    }
    Ok(BondSet::from_edges(pos.len(), edges))
}

/// Nearest-neighbour distance of every atom, by all-pairs scan.
pub fn nearest_neighbor_distances(positions: &[Vec3]) -> Vec<f64> {
    (0..positions.len())
        .map(|i| {
            positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| (positions[i] - p).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `1.2 ×` the median nearest-neighbour distance of the state.
pub fn default_bond_cutoff(state: &AtomicState) -> Result<f64> {
    if state.len() < 2 {
        return Err(Error::InvalidArgument(
            "a bond cutoff needs at least two atoms".into(),
        ));
    }
    let mut nn = nearest_neighbor_distances(&state.positions);
    Ok(DEFAULT_CUTOFF_FACTOR * median(&mut nn))
}
