//! Synthetic ensembles for tests, benchmarks and demos.
//!
//! Geometry is built around a cuboctahedral nanoparticle (`1, 13, 55, 147`
//! atoms for 0–3 shells). Features are Gaussian radial densities, which are
//! invariant to rotation, translation and relabelling of the atoms.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::ingest::Dataset;
use crate::model::{AtomicState, FeatureMatrix, Transition, Vec3};

/// Nearest-neighbour distance of generated particles (Å).
pub const BOND_LENGTH: f64 = 2.8;

/// Uniformly distributed proper rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let mut c = [0.0f64; 4];
    for v in &mut c {
        *v = StandardNormal.sample(rng);
    }
    let q = UnitQuaternion::from_quaternion(Quaternion::new(c[0], c[1], c[2], c[3]));
    q.to_rotation_matrix().into_inner()
}

/// FCC cuboctahedron with `shells` shells around a central atom, centred
/// at the origin. The central atom is row 0; rows are sorted by radius.
pub fn cuboctahedron(shells: usize, bond: f64) -> Vec<Vec3> {
    let k = shells as i64;
    let unit = bond / 2f64.sqrt();
    let mut pts = Vec::new();
    for x in -2 * k..=2 * k {
        for y in -2 * k..=2 * k {
            for z in -2 * k..=2 * k {
                if (x + y + z).rem_euclid(2) != 0 {
                    continue;
                }
                let (ax, ay, az) = (x.abs(), y.abs(), z.abs());
                if ax + ay + az <= 2 * k && ax.max(ay).max(az) <= k {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64) * unit);
                }
            }
        }
    }
    pts.sort_by(|a, b| {
        a.norm_squared()
            .total_cmp(&b.norm_squared())
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
    pts
}

/// `n × k` radial density features: column `j` is
/// `Σ_{a≠i} exp(−(r_ia − c_j)² / 2w²)` for centres evenly spread over
/// `[r_min, r_max]`.
pub fn radial_features(positions: &[Vec3], k: usize, r_min: f64, r_max: f64, width: f64) -> Vec<f64> {
    let n = positions.len();
    let centers: Vec<f64> = (0..k)
        .map(|j| if k == 1 { r_min } else { r_min + (r_max - r_min) * j as f64 / (k - 1) as f64 })
        .collect();
    let inv = 1.0 / (2.0 * width * width);
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for a in 0..n {
            if a == i {
                continue;
            }
            let r = (positions[i] - positions[a]).norm();
            for (j, c) in centers.iter().enumerate() {
                out[i * k + j] += (-(r - c) * (r - c) * inv).exp();
            }
        }
    }
    out
}

/// Rigid motion plus atom relabelling: `new[i] = R · old[perm[i]] + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub permutation: Vec<usize>,
}

impl Pose {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, max_shift: f64) -> Self {
        let mut permutation: Vec<usize> = (0..n).collect();
        permutation.shuffle(rng);
        Self {
            rotation: random_rotation(rng),
            translation: Vec3::new(
                rng.random_range(-max_shift..=max_shift),
                rng.random_range(-max_shift..=max_shift),
                rng.random_range(-max_shift..=max_shift),
            ),
            permutation,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            permutation: (0..n).collect(),
        }
    }

    pub fn apply(&self, positions: &[Vec3]) -> Vec<Vec3> {
        self.permutation
            .iter()
            .map(|&i| self.rotation * positions[i] + self.translation)
            .collect()
    }

    /// Reorders the rows of a row-major `n × k` matrix like the atoms.
    pub fn permute_rows(&self, data: &[f64], k: usize) -> Vec<f64> {
        self.permutation
            .iter()
            .flat_map(|&i| data[i * k..(i + 1) * k].iter().copied())
            .collect()
    }
}

/// Geometry and features of a transition before it enters a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTransition {
    pub initial: Vec<Vec3>,
    pub terminal: Vec<Vec3>,
    /// Row-major `n × k`.
    pub f_initial: Vec<f64>,
    pub f_terminal: Vec<f64>,
    pub k: usize,
}

impl RawTransition {
    pub fn posed(&self, pose: &Pose) -> Self {
        Self {
            initial: pose.apply(&self.initial),
            terminal: pose.apply(&self.terminal),
            f_initial: pose.permute_rows(&self.f_initial, self.k),
            f_terminal: pose.permute_rows(&self.f_terminal, self.k),
            k: self.k,
        }
    }
}

/// Collects raw transitions into a dataset with states `<prefix><t>a`
/// and `<prefix><t>b`.
pub fn dataset_from_raw(name: &str, raws: &[RawTransition], bond_cutoff: Option<f64>) -> Result<Dataset> {
    let mut transitions = Vec::with_capacity(raws.len());
    let mut features = BTreeMap::new();
    for (t, r) in raws.iter().enumerate() {
        let n = r.initial.len();
        let a = Arc::new(AtomicState::uniform(format!("t{t}a"), r.initial.clone(), "Au")?);
        let b = Arc::new(AtomicState::uniform(format!("t{t}b"), r.terminal.clone(), "Au")?);
        features.insert(a.id.clone(), FeatureMatrix::new(a.id.clone(), n, r.k, r.f_initial.clone())?);
        features.insert(b.id.clone(), FeatureMatrix::new(b.id.clone(), n, r.k, r.f_terminal.clone())?);
        transitions.push(Transition::new(a, b)?);
    }
    Dataset::from_parts(name, transitions, features, Vec::new(), bond_cutoff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Motif {
    /// A surface vertex atom hops radially outward.
    SurfaceHop,
    /// The central atom exchanges sites with a first-shell atom.
    CoreSwap,
}

/// Feature settings used by the motif generator.
pub const MOTIF_FEATURES: (f64, f64, f64) = (2.0, 8.0, 0.5);

/// One motif instance on a 3-shell particle, in the canonical pose.
/// `site` picks one of the 12 symmetry-equivalent sites.
pub fn motif_transition(motif: Motif, site: usize, k: usize) -> RawTransition {
    let (base, fin) = motif_geometry(motif, site);
    with_radial_features(base, fin, k)
}

fn motif_geometry(motif: Motif, site: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let base = cuboctahedron(3, BOND_LENGTH);
    let mut fin = base.clone();
    match motif {
        Motif::SurfaceHop => {
            let r_max = base.iter().map(|p| p.norm()).fold(0.0, f64::max);
            let vertices: Vec<usize> = (0..base.len())
                .filter(|&i| (base[i].norm() - r_max).abs() < 1e-9)
                .collect();
            let v = vertices[site % vertices.len()];
            fin[v] = base[v] * (1.0 + 1.2 / r_max);
        }
        Motif::CoreSwap => {
            let shell = 1 + site % 12;
            fin.swap(0, shell);
        }
    }
    (base, fin)
}

fn with_radial_features(initial: Vec<Vec3>, terminal: Vec<Vec3>, k: usize) -> RawTransition {
    let (r0, r1, w) = MOTIF_FEATURES;
    RawTransition {
        f_initial: radial_features(&initial, k, r0, r1, w),
        f_terminal: radial_features(&terminal, k, r0, r1, w),
        initial,
        terminal,
        k,
    }
}

/// `per_motif` instances of each motif at random sites and poses, in
/// shuffled order. Returns the dataset and the motif of every transition.
pub fn two_motif_dataset(per_motif: usize, k: usize, seed: u64) -> Result<(Dataset, Vec<Motif>)> {
    two_motif_dataset_jittered(per_motif, k, 0.0, seed)
}

/// Like [`two_motif_dataset`], with thermal noise: every atom is shifted by
/// a Gaussian vector of per-axis deviation `jitter` (the same shift in both
/// states) and features are recomputed from the noisy geometry, so members
/// of one motif are similar but not identical.
pub fn two_motif_dataset_jittered(
    per_motif: usize,
    k: usize,
    jitter: f64,
    seed: u64,
) -> Result<(Dataset, Vec<Motif>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, jitter.max(0.0)).expect("finite jitter");
    let canonical: BTreeMap<(Motif, usize), RawTransition> = [Motif::SurfaceHop, Motif::CoreSwap]
        .into_iter()
        .flat_map(|m| (0..12).map(move |s| (m, s)))
        .map(|(m, s)| ((m, s), motif_transition(m, s, k)))
        .collect();
    let mut plan: Vec<Motif> = (0..per_motif)
        .flat_map(|_| [Motif::SurfaceHop, Motif::CoreSwap])
        .collect();
    plan.shuffle(&mut rng);
    let raws: Vec<RawTransition> = plan
        .iter()
        .map(|&m| {
            let site = rng.random_range(0..12);
            let raw = if jitter > 0.0 {
                let (mut a, mut b) = motif_geometry(m, site);
                for (p, q) in a.iter_mut().zip(b.iter_mut()) {
                    let e = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                    *p += e;
                    *q += e;
                }
                with_radial_features(a, b, k)
            } else {
                canonical[&(m, site)].clone()
            };
            raw.posed(&Pose::random(&mut rng, raw.initial.len(), 5.0))
        })
        .collect();
    Ok((dataset_from_raw("two-motif", &raws, None)?, plan))
}

/// Ensemble of `unique` distinct transitions plus `duplicates` exact
/// copies of randomly chosen ones (distinct labels, identical geometry and
/// features). Transitions connect pairs from a pool of `pool` random
/// states of an `n`-atom particle with `k` random features per atom.
/// Returns the dataset and, for every transition, the index of the unique
/// transition it reproduces.
pub fn duplicate_ensemble(
    unique: usize,
    duplicates: usize,
    n: usize,
    k: usize,
    pool: usize,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    assert!(pool >= 2 && unique <= pool * (pool - 1), "pool too small for {unique} distinct pairs");
    let mut rng = StdRng::seed_from_u64(seed);
    let shells = (0..).find(|&s| cuboctahedron(s, BOND_LENGTH).len() >= n).unwrap();
    let base: Vec<Vec3> = cuboctahedron(shells, BOND_LENGTH).into_iter().take(n).collect();
    let jitter = Normal::new(0.0, 0.08).unwrap();
    let feat = Normal::new(0.0, 1.0).unwrap();

    let states: Vec<(Vec<Vec3>, Vec<f64>)> = (0..pool)
        .map(|_| {
            let pos = base
                .iter()
                .map(|p| p + Vec3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng)))
                .collect();
            let f = (0..n * k).map(|_| feat.sample(&mut rng)).collect();
            (pos, f)
        })
        .collect();

    let mut pairs = BTreeSet::new();
    let mut order = Vec::with_capacity(unique);
    while order.len() < unique {
        let i = rng.random_range(0..pool);
        let j = rng.random_range(0..pool);
        if i != j && pairs.insert((i, j)) {
            order.push((i, j));
        }
    }
    // copy c of state s is named s<s>_<c>; copy 0 is the original
    let mut copies = vec![0usize; unique];
    let mut entries: Vec<(usize, usize, usize)> = (0..unique).map(|u| (u, 0, 0)).collect();
    for _ in 0..duplicates {
        let u = rng.random_range(0..unique);
        copies[u] += 1;
        entries.push((u, copies[u], copies[u]));
    }
    entries.shuffle(&mut rng);

    let mut made: BTreeMap<String, Arc<AtomicState>> = BTreeMap::new();
    let mut features = BTreeMap::new();
    let mut state = |s: usize, c: usize, made: &mut BTreeMap<String, Arc<AtomicState>>| -> Result<Arc<AtomicState>> {
        let id = format!("s{s}_{c}");
        if let Some(a) = made.get(&id) {
            return Ok(Arc::clone(a));
        }
        let a = Arc::new(AtomicState::uniform(id.clone(), states[s].0.clone(), "Au")?);
        features.insert(id.clone(), FeatureMatrix::new(id.clone(), n, k, states[s].1.clone())?);
        made.insert(id, Arc::clone(&a));
        Ok(a)
    };
    let mut transitions = Vec::with_capacity(entries.len());
    let mut source = Vec::with_capacity(entries.len());
    for (u, ci, cf) in entries {
        let (i, j) = order[u];
        let a = state(i, ci, &mut made)?;
        let b = state(j, cf, &mut made)?;
        transitions.push(Transition::new(a, b)?);
        source.push(u);
    }
    drop(state);
    let ds = Dataset::from_parts("duplicates", transitions, features, Vec::new(), Some(BOND_LENGTH * 1.2))?;
    Ok((ds, source))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_numbers() {
        let counts: Vec<usize> = (0..4).map(|s| cuboctahedron(s, 1.0).len()).collect();
        assert_eq!(counts, vec![1, 13, 55, 147]);
    }

    #[test]
    fn rotations_are_proper() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
