//! Ward agglomerative clustering with the Lance–Williams update.
//!
//! Clusters live in slots `0..m`. Merging slots `a < b` stores the union in
//! slot `a` and retires `b`. Each step merges the active pair with the
//! smallest distance; ties go to the lexicographically smallest `(a, b)`.
//! Every slot caches its nearest active neighbour among higher slots. Ward
//! linkage is reducible, so after a merge only rows whose cached neighbour
//! was one of the merged slots need a rescan. The result is identical to
//! the exhaustive scan but typically runs in `O(m²)`.

use crate::descriptors::DistanceMatrix;
use crate::error::{Error, Result};

use super::dendrogram::{Dendrogram, Merge};

/// Lance–Williams ward update on unsquared distances.
#[inline]
pub fn ward_update(d_ca: f64, d_cb: f64, d_ab: f64, n_a: usize, n_b: usize, n_c: usize) -> f64 {
    let (na, nb, nc) = (n_a as f64, n_b as f64, n_c as f64);
    let v = ((nc + na) * d_ca * d_ca + (nc + nb) * d_cb * d_cb - nc * d_ab * d_ab) / (na + nb + nc);
    v.max(0.0).sqrt()
}

/// Merge sequence of ward clustering on `d`.
pub fn ward_linkage(d: &DistanceMatrix) -> Result<Vec<Merge>> {
    let m = d.len();
    if m == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if d.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distance matrix".into()));
    }
    let mut dist = d.as_slice().to_vec();
    let mut size = vec![1usize; m];
    let mut node = (0..m).collect::<Vec<_>>();
    let mut active = vec![true; m];

    let scan = |dist: &[f64], active: &[bool], a: usize| -> Option<(usize, f64)> {
        let row = &dist[a * m..(a + 1) * m];
        let mut best: Option<(usize, f64)> = None;
        for b in (a + 1)..m {
            if active[b] && best.is_none_or(|(_, v)| row[b] < v) {
                best = Some((b, row[b]));
            }
        }
        best
    };
    let mut nn: Vec<Option<(usize, f64)>> = (0..m).map(|a| scan(&dist, &active, a)).collect();

    let mut merges = Vec::with_capacity(m.saturating_sub(1));
    for step in 0..m.saturating_sub(1) {
        let mut pick: Option<(usize, usize, f64)> = None;
        for a in 0..m {
            if !active[a] {
                continue;
            }
            if let Some((b, v)) = nn[a] {
                if pick.is_none_or(|(_, _, pv)| v < pv) {
                    pick = Some((a, b, v));
                }
            }
        }
        let (a, b, h) = pick.expect("at least two active clusters");
        merges.push(Merge {
            left: node[a],
            right: node[b],
            height: h,
            size: size[a] + size[b],
        });

        for c in 0..m {
            if !active[c] || c == a || c == b {
                continue;
            }
            let v = ward_update(dist[c * m + a], dist[c * m + b], h, size[a], size[b], size[c]);
            dist[c * m + a] = v;
            dist[a * m + c] = v;
        }
        active[b] = false;
        size[a] += size[b];
        node[a] = m + step;

        nn[b] = None;
        nn[a] = scan(&dist, &active, a);
        for c in 0..b {
            if !active[c] || c == a {
                continue;
            }
            match nn[c] {
                Some((x, _)) if x == a || x == b => nn[c] = scan(&dist, &active, c),
                Some((x, v)) if c < a => {
                    let nv = dist[c * m + a];
                    if nv < v || (nv == v && a < x) {
                        nn[c] = Some((a, nv));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(merges)
}

/// Ward dendrogram of `d` with per-node medoids.
pub fn ward_cluster(d: &DistanceMatrix) -> Result<Dendrogram> {
    let merges = ward_linkage(d)?;
    Dendrogram::from_merges(&merges, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransitionLabel;

    fn labels(m: usize) -> Vec<TransitionLabel> {
        (0..m)
            .map(|i| TransitionLabel::new(format!("s{i}"), format!("t{i}")))
            .collect()
    }

    #[test]
    fn single_leaf() {
        let d = DistanceMatrix::from_full(labels(1), vec![0.0]).unwrap();
        let t = ward_cluster(&d).unwrap();
        assert_eq!(t.root(), 0);
        assert_eq!(t.height(0), 0.0);
        assert!(t.node(0).unwrap().is_leaf());
    }

    #[test]
    fn dominated_pair_merges_first() {
        let d = DistanceMatrix::from_fn(labels(3), |i, j| if (i, j) == (0, 1) { 1.0 } else { 10.0 }).unwrap();
        let merges = ward_linkage(&d).unwrap();
        assert_eq!((merges[0].left, merges[0].right), (0, 1));
        assert_eq!(merges[0].height, 1.0);
        // d({A,B},C) = sqrt((2·100 + 2·100 − 1)/3)
        assert!((merges[1].height - (399.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ties_pick_smallest_pair() {
        let d = DistanceMatrix::from_fn(labels(4), |_, _| 1.0).unwrap();
        let merges = ward_linkage(&d).unwrap();
        assert_eq!((merges[0].left, merges[0].right), (0, 1));
        // d({0,1}, 2) is again exactly 1, and slot 0 < slot 2
        assert_eq!((merges[1].left, merges[1].right), (4, 2));
    }
}
