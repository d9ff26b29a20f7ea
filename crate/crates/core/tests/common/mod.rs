#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Matrix3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use transens_core::cluster::{Dendrogram, Merge};
use transens_core::descriptors::{DistanceMatrix, FeatureDelta};
use transens_core::ingest::Dataset;
use transens_core::model::{AtomicState, FeatureMatrix, Transition, TransitionLabel, Vec3};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn labels(m: usize) -> Vec<TransitionLabel> {
    (0..m)
        .map(|i| TransitionLabel::new(format!("s{i}"), format!("t{i}")))
        .collect()
}

pub fn random_points(rng: &mut StdRng, m: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn euclidean_matrix(points: &[Vec<f64>]) -> DistanceMatrix {
    DistanceMatrix::from_fn(labels(points.len()), |i, j| euclid(&points[i], &points[j])).unwrap()
}

/// Symmetric matrix with independent random off-diagonal entries.
pub fn random_matrix(rng: &mut StdRng, m: usize) -> DistanceMatrix {
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let x = rng.random_range(0.01..10.0);
            v[i * m + j] = x;
            v[j * m + i] = x;
        }
    }
    DistanceMatrix::from_full(labels(m), v).unwrap()
}

pub fn random_positions(rng: &mut StdRng, n: usize, scale: f64) -> Vec<Vec3> {
    loop {
        let p: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect();
        let ok = (0..n).all(|i| (i + 1..n).all(|j| (p[i] - p[j]).norm() > 0.3));
        if ok {
            return p;
        }
    }
}

pub fn state(id: &str, positions: Vec<Vec3>) -> Arc<AtomicState> {
    Arc::new(AtomicState::uniform(id, positions, "Pt").unwrap())
}

pub fn transition(a: Vec<Vec3>, b: Vec<Vec3>) -> Transition {
    Transition::new(state("a", a), state("b", b)).unwrap()
}

pub fn random_delta(rng: &mut StdRng, label: TransitionLabel, n: usize, k: usize) -> FeatureDelta {
    let data = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureDelta::from_rows(label, n, k, data).unwrap()
}

pub fn rotation(rng: &mut StdRng) -> Matrix3<f64> {
    transens_core::synth::random_rotation(rng)
}

/// Dataset with one transition per `(initial, final, f_initial, f_final)`.
pub fn dataset_of(parts: Vec<(Vec<Vec3>, Vec<Vec3>, Vec<f64>, Vec<f64>)>, k: usize) -> Dataset {
    let mut transitions = Vec::new();
    let mut features = BTreeMap::new();
    for (t, (a, b, fa, fb)) in parts.into_iter().enumerate() {
        let n = a.len();
        let sa = state(&format!("x{t}"), a);
        let sb = state(&format!("y{t}"), b);
        features.insert(sa.id.clone(), FeatureMatrix::new(sa.id.clone(), n, k, fa).unwrap());
        features.insert(sb.id.clone(), FeatureMatrix::new(sb.id.clone(), n, k, fb).unwrap());
        transitions.push(Transition::new(sa, sb).unwrap());
    }
    Dataset::from_parts("fixture", transitions, features, Vec::new(), None).unwrap()
}

/// Exhaustive Lance–Williams ward: every step scans all active pairs.
pub fn naive_ward(d: &DistanceMatrix) -> Vec<Merge> {
    let m = d.len();
    let mut dist: Vec<Vec<f64>> = (0..m).map(|i| d.row(i).to_vec()).collect();
    let mut slots: Vec<Option<(usize, usize)>> = (0..m).map(|i| Some((i, 1))).collect();
    let mut merges = Vec::new();
    for step in 0..m.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..m {
            for b in a + 1..m {
                if slots[a].is_none() || slots[b].is_none() {
                    continue;
                }
                if best.map_or(true, |(_, _, v)| dist[a][b] < v) {
                    best = Some((a, b, dist[a][b]));
                }
            }
        }
        let (a, b, h) = best.unwrap();
        let (na_id, na) = slots[a].unwrap();
        let (nb_id, nb) = slots[b].unwrap();
        for c in 0..m {
            if c == a || c == b {
                continue;
            }
            if let Some((_, nc)) = slots[c] {
                let (fa, fb, fc) = (na as f64, nb as f64, nc as f64);
                let v = (((fc + fa) * dist[c][a].powi(2) + (fc + fb) * dist[c][b].powi(2) - fc * h * h)
                    / (fa + fb + fc))
                    .max(0.0)
                    .sqrt();
                dist[c][a] = v;
                dist[a][c] = v;
            }
        }
        merges.push(Merge {
            left: na_id,
            right: nb_id,
            height: h,
            size: na + nb,
        });
        slots[a] = Some((m + step, na + nb));
        slots[b] = None;
    }
    merges
}

/// Minimum adjacent cost over every combination of child flips.
pub fn exhaustive_flip_cost(tree: &Dendrogram, d: &DistanceMatrix) -> f64 {
    let internal: Vec<usize> = tree.nodes().iter().filter(|n| !n.is_leaf()).map(|n| n.id).collect();
    let mut best = f64::INFINITY;
    for mask in 0u64..(1u64 << internal.len()) {
        let flipped: std::collections::BTreeSet<usize> = internal
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &v)| v)
            .collect();
        let mut order = Vec::new();
        let mut stack = vec![tree.root()];
        while let Some(v) = stack.pop() {
            match tree.node(v).unwrap().children {
                None => order.push(v),
                Some([l, r]) => {
                    let (first, second) = if flipped.contains(&v) { (r, l) } else { (l, r) };
                    stack.push(second);
                    stack.push(first);
                }
            }
        }
        let cost: f64 = order.windows(2).map(|w| d.get(w[0], w[1])).sum();
        best = best.min(cost);
    }
    best
}
