//! Per-transition invariant descriptors, ZCA whitening and the whitened
//! pairwise distance matrix, plus per-atom scalar channels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bonds::{BondGraph, BondSet};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{FeatureMatrix, Transition, TransitionLabel, Vec3};

/// Default whitening floor relative to the largest covariance eigenvalue.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-8;

/// `Δf = f(final) − f(initial)`, row-major `n × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDelta {
    pub label: TransitionLabel,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureDelta {
    pub fn from_rows(label: TransitionLabel, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: format!("{rows}x{cols}"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            label,
            rows,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Euclidean norm of every row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn negated(&self) -> Self {
        Self {
            label: self.label.reversed(),
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self {
            label: self.label.clone(),
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

pub fn feature_delta(
    label: TransitionLabel,
    initial: &FeatureMatrix,
    terminal: &FeatureMatrix,
) -> Result<FeatureDelta> {
    if initial.rows() != terminal.rows() || initial.cols() != terminal.cols() {
        return Err(Error::Shape {
            expected: format!("{}x{}", initial.rows(), initial.cols()),
            found: format!("{}x{}", terminal.rows(), terminal.cols()),
        });
    }
    let data = terminal
        .as_slice()
        .iter()
        .zip(initial.as_slice())
        .map(|(b, a)| b - a)
        .collect();
    FeatureDelta::from_rows(label, initial.rows(), initial.cols(), data)
}

/// Length-`k` descriptor of one transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionDescriptor {
    pub label: TransitionLabel,
    pub values: Vec<f64>,
}

fn aggregate_impl<const COUNT: bool>(
    delta: &FeatureDelta,
    positions: &[Vec3],
    terms: &mut u64,
) -> Result<TransitionDescriptor> {
    let n = delta.rows();
    let k = delta.cols();
    if positions.len() != n {
        return Err(Error::Shape {
            expected: format!("{n} positions"),
            found: format!("{}", positions.len()),
        });
    }
    let mut acc = vec![0.0; k];
    for i in 0..n {
        let qi = delta.row(i);
        for j in (i + 1)..n {
            let r = (positions[i] - positions[j]).norm();
            if r == 0.0 {
                return Err(Error::CoincidentAtoms(i, j));
            }
            let inv = 1.0 / r;
            let qj = delta.row(j);
            for ((a, x), y) in acc.iter_mut().zip(qi).zip(qj) {
                *a += x * y * inv;
                if COUNT {
                    *terms += 1;
                }
            }
        }
    }
    Ok(TransitionDescriptor {
        label: delta.label.clone(),
        values: acc,
    })
}

/// Pairwise pseudo-charge energy per feature column,
/// `v_j = Σ_{i<i'} Δf_ij Δf_i'j / |r_i − r_i'|`, with `r` the initial-state
/// positions. Invariant to rigid motion and to atom relabelling.
pub fn coulombic_aggregate(delta: &FeatureDelta, positions: &[Vec3]) -> Result<TransitionDescriptor> {
    let mut unused = 0;
    aggregate_impl::<false>(delta, positions, &mut unused)
}

/// Same as [`coulombic_aggregate`] but also returns the number of
/// pair-feature terms evaluated.
pub fn coulombic_aggregate_counted(
    delta: &FeatureDelta,
    positions: &[Vec3],
) -> Result<(TransitionDescriptor, u64)> {
    let mut terms = 0;
    let d = aggregate_impl::<true>(delta, positions, &mut terms)?;
    Ok((d, terms))
}

/// ZCA whitening operator `W = U Λ^{-1/2} Uᵀ` fitted to a descriptor set.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub epsilon: f64,
    /// Covariance eigenvalues before flooring, ascending.
    pub eigenvalues: DVector<f64>,
    /// Matching eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &[f64]) -> DVector<f64> {
        let centered = DVector::from_column_slice(values) - &self.mean;
        &self.matrix * centered
    }

    /// Number of eigen-directions whose variance exceeds the floor.
    pub fn retained(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > self.epsilon).count()
    }
}

/// Fits ZCA whitening on the sample covariance (`m − 1` normalisation).
/// Eigenvalues are floored at `epsilon`; `None` uses
/// `1e-8 × largest eigenvalue`.
pub fn fit_whitening(descriptors: &[TransitionDescriptor], epsilon: Option<f64>) -> Result<WhiteningTransform> {
    let m = descriptors.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "whitening needs at least 2 descriptors, got {m}"
        )));
    }
    let k = descriptors[0].values.len();
    for d in descriptors {
        if d.values.len() != k {
            return Err(Error::Shape {
                expected: format!("{k} descriptor components"),
                found: format!("{} for {}", d.values.len(), d.label),
            });
        }
        if d.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("descriptor of {}", d.label)));
        }
    }
    let mut mean = DVector::zeros(k);
    for d in descriptors {
        for (acc, v) in mean.iter_mut().zip(&d.values) {
            *acc += v;
        }
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(k, k);
    for d in descriptors {
        let c = DVector::from_column_slice(&d.values) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (m - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    let largest = eigenvalues.max().max(0.0);
    let epsilon = match epsilon {
        Some(e) => e,
        None if largest > 0.0 => DEFAULT_RELATIVE_EPSILON * largest,
        None => DEFAULT_RELATIVE_EPSILON,
    };
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "whitening epsilon must be positive, got {epsilon}"
        )));
    }
    let scale = DMatrix::from_diagonal(&eigenvalues.map(|l| 1.0 / l.max(epsilon).sqrt()));
    let mut matrix = &eigenvectors * scale * eigenvectors.transpose();
    // symmetrise away round-off
    let t = matrix.transpose();
    matrix = (matrix + t) * 0.5;
    Ok(WhiteningTransform {
        mean,
        matrix,
        epsilon,
        eigenvalues,
        eigenvectors,
    })
}

/// Dense symmetric `m × m` distance matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<TransitionLabel>,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a full row-major buffer; checks symmetry, zero diagonal,
    /// finiteness and non-negativity.
    pub fn from_full(labels: Vec<TransitionLabel>, data: Vec<f64>) -> Result<Self> {
        let m = labels.len();
        if data.len() != m * m {
            return Err(Error::Shape {
                expected: format!("{m}x{m}"),
                found: format!("{} values", data.len()),
            });
        }
        for i in 0..m {
            if data[i * m + i] != 0.0 {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..m {
                let v = data[i * m + j];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("distance ({i},{j})")));
                }
                if v < 0.0 || v != data[j * m + i] {
                    return Err(Error::Validation(format!(
                        "distance ({i},{j}) is negative or asymmetric"
                    )));
                }
            }
        }
        Ok(Self { labels, data })
    }

    pub fn from_fn(labels: Vec<TransitionLabel>, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let m = labels.len();
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = f(i, j);
                data[i * m + j] = v;
                data[j * m + i] = v;
            }
        }
        Self::from_full(labels, data)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[TransitionLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.labels.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.labels.len();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn index_of(&self, label: &TransitionLabel) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Row/column submatrix over `indices`, in that order.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let k = indices.len();
        let mut data = vec![0.0; k * k];
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                data[a * k + b] = self.get(i, j);
            }
        }
        Self {
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            data,
        }
    }

    /// Row block `[start, end)` as little-endian float32, row-major.
    pub fn rows_f32_le(&self, start: usize, end: usize) -> Vec<u8> {
        let m = self.labels.len();
        let mut out = Vec::with_capacity((end - start) * m * 4);
        for v in &self.data[start * m..end * m] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    const CACHE_MAGIC: &'static [u8; 8] = b"TENSDM01";

    /// Binary layout: magic, u64 m, then m labels as (u32 len, bytes) pairs
    /// for initial and final ids, then m·m f64 little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.labels.len();
        let mut out = Vec::with_capacity(16 + m * m * 8);
        out.extend_from_slice(Self::CACHE_MAGIC);
        out.extend_from_slice(&(m as u64).to_le_bytes());
        for l in &self.labels {
            for s in [&l.0, &l.1] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Validation("corrupt distance cache".into());
        if bytes.len() < 16 || &bytes[..8] != Self::CACHE_MAGIC {
            return Err(bad());
        }
        let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut at = 16;
        let read_str = |at: &mut usize| -> Result<String> {
            let len_bytes = bytes.get(*at..*at + 4).ok_or_else(bad)?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            let s = bytes.get(*at + 4..*at + 4 + len).ok_or_else(bad)?;
            *at += 4 + len;
            String::from_utf8(s.to_vec()).map_err(|_| bad())
        };
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            let a = read_str(&mut at)?;
            let b = read_str(&mut at)?;
            labels.push(TransitionLabel(a, b));
        }
        let body = bytes.get(at..).ok_or_else(bad)?;
        if body.len() != m * m * 8 {
            return Err(bad());
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_full(labels, data)
    }
}

/// `d_ij = |W(v_i − μ) − W(v_j − μ)|₂`, computed over row blocks in parallel.
pub fn distance_matrix(
    descriptors: &[TransitionDescriptor],
    transform: &WhiteningTransform,
) -> Result<DistanceMatrix> {
    let k = transform.dim();
    if let Some(d) = descriptors.iter().find(|d| d.values.len() != k) {
        return Err(Error::Shape {
            expected: format!("{k} descriptor components"),
            found: format!("{} for {}", d.values.len(), d.label),
        });
    }
    let whitened: Vec<Vec<f64>> = descriptors
        .par_iter()
        .map(|d| transform.apply(&d.values).iter().copied().collect())
        .collect();
    let m = descriptors.len();
    let mut data = vec![0.0; m * m];
    data.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let zi = &whitened[i];
        for (j, slot) in row.iter_mut().enumerate() {
            if j == i {
                continue;
            }
            // evaluate in canonical (min, max) order so d_ij and d_ji agree bitwise
            let (a, b) = if i < j { (zi, &whitened[j]) } else { (&whitened[j], zi) };
            *slot = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
        }
    });
    DistanceMatrix::from_full(descriptors.iter().map(|d| d.label.clone()).collect(), data)
}

/// Cache key over descriptors and the epsilon setting.
pub fn cache_key(descriptors: &[TransitionDescriptor], epsilon: Option<f64>) -> String {
    let mut h = Sha256::new();
    match epsilon {
        Some(e) => {
            h.update([1u8]);
            h.update(e.to_le_bytes());
        }
        None => h.update([0u8]),
    }
    for d in descriptors {
        h.update(d.label.0.as_bytes());
        h.update([0u8]);
        h.update(d.label.1.as_bytes());
        h.update([0u8]);
        for v in &d.values {
            h.update(v.to_le_bytes());
        }
    }
    let mut out = String::new();
    for b in h.finalize().iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("distances-{key}.bin"))
}

/// Whitening and distances, reusing `cache_dir/distances-<key>.bin` when present.
pub fn whitened_distances_cached(
    descriptors: &[TransitionDescriptor],
    epsilon: Option<f64>,
    cache_dir: Option<&Path>,
) -> Result<(WhiteningTransform, DistanceMatrix, bool)> {
    let transform = fit_whitening(descriptors, epsilon)?;
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, &cache_key(descriptors, epsilon));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(d) = DistanceMatrix::from_bytes(&bytes) {
                if d.len() == descriptors.len() {
                    return Ok((transform, d, true));
                }
            }
        }
        let d = distance_matrix(descriptors, &transform)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(&path, d.to_bytes()).map_err(|e| Error::io(&path, e))?;
        return Ok((transform, d, false));
    }
    let d = distance_matrix(descriptors, &transform)?;
    Ok((transform, d, false))
}

/// Row-wise `final − initial` positions.
pub fn displacement_vectors(transition: &Transition) -> Vec<Vec3> {
    transition
        .initial
        .positions
        .iter()
        .zip(&transition.terminal.positions)
        .map(|(a, b)| b - a)
        .collect()
}

/// Mean absolute bond-length change over every edge incident to an atom in
/// either state. An edge missing from one state is measured by the actual
/// interatomic distance in that state.
pub fn bond_delta_scalars(transition: &Transition, bonds: &BondGraph) -> Vec<f64> {
    bond_delta_from_sets(transition, &bonds.initial, &bonds.terminal)
}

pub fn bond_delta_from_sets(transition: &Transition, initial: &BondSet, terminal: &BondSet) -> Vec<f64> {
    let a = &transition.initial.positions;
    let b = &transition.terminal.positions;
    let n = a.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut visit = |i: usize, j: usize| {
        let la = initial.length(i, j).unwrap_or_else(|| (a[i] - a[j]).norm());
        let lb = terminal.length(i, j).unwrap_or_else(|| (b[i] - b[j]).norm());
        let d = (lb - la).abs();
        sum[i] += d;
        sum[j] += d;
        count[i] += 1;
        count[j] += 1;
    };
    for e in initial.edges() {
        visit(e.i, e.j);
    }
    for e in terminal.edges() {
        if !initial.contains(e.i, e.j) {
            visit(e.i, e.j);
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

pub const CHANNEL_BOND_DELTA: &str = "avg_bond_delta";
pub const CHANNEL_DISPLACEMENT: &str = "displacement";
pub const CHANNEL_FEATURE_DELTA: &str = "feature_delta";

/// Named per-atom scalar channels of one transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerAtomScalars {
    pub label: TransitionLabel,
    pub channels: BTreeMap<String, Vec<f64>>,
}

/// Built-in channels (bond delta, displacement magnitude, feature-delta
/// norm) plus every user-supplied scalar field of the dataset.
pub fn per_atom_scalars(dataset: &Dataset, t: usize) -> Result<PerAtomScalars> {
    let tr = &dataset.transitions[t];
    let mut channels = BTreeMap::new();
    channels.insert(
        CHANNEL_BOND_DELTA.to_string(),
        bond_delta_scalars(tr, &dataset.bonds[t]),
    );
    channels.insert(
        CHANNEL_DISPLACEMENT.to_string(),
        displacement_vectors(tr).iter().map(|d| d.norm()).collect(),
    );
    let (fa, fb) = dataset.features_of(t);
    channels.insert(
        CHANNEL_FEATURE_DELTA.to_string(),
        feature_delta(tr.label.clone(), fa, fb)?.row_norms(),
    );
    for sf in &dataset.scalars {
        if let Some(v) = sf.per_transition.get(&tr.label) {
            channels.insert(sf.name.clone(), v.clone());
        }
    }
    Ok(PerAtomScalars {
        label: tr.label.clone(),
        channels,
    })
}

/// Descriptors, whitening and full distance matrix of a dataset.
#[derive(Debug, Clone)]
pub struct EnsembleDistances {
    pub deltas: Vec<FeatureDelta>,
    pub descriptors: Vec<TransitionDescriptor>,
    pub whitening: Option<WhiteningTransform>,
    pub matrix: DistanceMatrix,
    pub from_cache: bool,
}

/// Runs feature deltas → Coulombic aggregation → whitening → distances.
/// A single-transition dataset yields a 1×1 zero matrix without whitening.
pub fn compute_ensemble(dataset: &Dataset, epsilon: Option<f64>, cache_dir: Option<&Path>) -> Result<EnsembleDistances> {
    let deltas = (0..dataset.len())
        .into_par_iter()
        .map(|t| {
            let (fa, fb) = dataset.features_of(t);
            feature_delta(dataset.transitions[t].label.clone(), fa, fb)
        })
        .collect::<Result<Vec<_>>>()?;
    let descriptors = deltas
        .par_iter()
        .zip(dataset.transitions.par_iter())
        .map(|(d, t)| coulombic_aggregate(d, &t.initial.positions))
        .collect::<Result<Vec<_>>>()?;
    if descriptors.len() < 2 {
        let matrix = DistanceMatrix::from_full(dataset.labels(), vec![0.0; descriptors.len()])?;
        return Ok(EnsembleDistances {
            deltas,
            descriptors,
            whitening: None,
            matrix,
            from_cache: false,
        });
    }
    let (whitening, matrix, from_cache) = whitened_distances_cached(&descriptors, epsilon, cache_dir)?;
    Ok(EnsembleDistances {
        deltas,
        descriptors,
        whitening: Some(whitening),
        matrix,
        from_cache,
    })
}
