mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use transens_core::bonds::compute_bonds;
use transens_core::descriptors::*;
use transens_core::model::{FeatureMatrix, TransitionLabel, Vec3};
use transens_core::synth::Pose;

fn label() -> TransitionLabel {
    TransitionLabel::new("i", "f")
}

fn brute_aggregate(delta: &FeatureDelta, pos: &[Vec3]) -> Vec<f64> {
    let mut v = vec![0.0; delta.cols()];
    for i in 0..pos.len() {
        for j in 0..pos.len() {
            if i < j {
                let r = ((pos[i].x - pos[j].x).powi(2) + (pos[i].y - pos[j].y).powi(2) + (pos[i].z - pos[j].z).powi(2)).sqrt();
                for c in 0..delta.cols() {
                    v[c] += delta.get(i, c) * delta.get(j, c) / r;
                }
            }
        }
    }
    v
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn feature_delta_matches_subtraction() {
    let mut r = rng(1);
    let a: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
    let fa = FeatureMatrix::new("i", 5, 3, a.clone()).unwrap();
    let fb = FeatureMatrix::new("f", 5, 3, b.clone()).unwrap();
    let d = feature_delta(label(), &fa, &fb).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            assert_eq!(d.get(i, j), b[i * 3 + j] - a[i * 3 + j]);
        }
    }
    let zero = FeatureMatrix::zeros("i", 5, 3);
    assert_eq!(feature_delta(label(), &zero, &fb).unwrap().as_slice(), fb.as_slice());
    let bad = FeatureMatrix::zeros("f", 5, 2);
    assert!(feature_delta(label(), &fa, &bad).is_err());
}

#[test]
fn aggregate_matches_bruteforce_and_counts_terms() {
    let mut r = rng(2);
    for (n, k) in [(2, 1), (4, 3), (9, 5), (20, 2)] {
        let pos = random_positions(&mut r, n, 4.0);
        let delta = random_delta(&mut r, label(), n, k);
        let (d, terms) = coulombic_aggregate_counted(&delta, &pos).unwrap();
        assert!(rel_close(&d.values, &brute_aggregate(&delta, &pos), 1e-12));
        assert_eq!(terms, (k * n * (n - 1) / 2) as u64);
        assert_eq!(coulombic_aggregate(&delta, &pos).unwrap(), d);
    }
}

#[test]
fn two_atom_hand_value() {
    let delta = FeatureDelta::from_rows(label(), 2, 1, vec![3.0, 4.0]).unwrap();
    let pos = vec![Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0)];
    assert_eq!(coulombic_aggregate(&delta, &pos).unwrap().values, vec![6.0]);
}

fn desc(values: Vec<f64>, i: usize) -> TransitionDescriptor {
    TransitionDescriptor {
        label: TransitionLabel::new(format!("a{i}"), format!("b{i}")),
        values,
    }
}

fn whitened_cov(descs: &[TransitionDescriptor], w: &WhiteningTransform) -> DMatrix<f64> {
    let k = w.dim();
    let zs: Vec<_> = descs.iter().map(|d| w.apply(&d.values)).collect();
    let m = zs.len() as f64;
    let mean = zs.iter().fold(nalgebra::DVector::zeros(k), |a, z| a + z) / m;
    let mut c = DMatrix::zeros(k, k);
    for z in &zs {
        let d = z - &mean;
        c += &d * d.transpose();
    }
    c / (m - 1.0)
}

#[test]
fn whitening_gives_identity_covariance() {
    let mut r = rng(3);
    let mix = DMatrix::from_fn(4, 4, |_, _| r.random_range(-1.0..1.0));
    let descs: Vec<_> = (0..400)
        .map(|i| {
            let z = nalgebra::DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0));
            desc((&mix * z).iter().copied().collect(), i)
        })
        .collect();
    let w = fit_whitening(&descs, None).unwrap();
    let c = whitened_cov(&descs, &w);
    assert!((c - DMatrix::identity(4, 4)).abs().max() < 1e-9);
    assert!((w.matrix.clone() - w.matrix.transpose()).abs().max() < 1e-12);
    assert!(w.matrix.clone().symmetric_eigenvalues().min() > 0.0);
}

#[test]
fn already_white_data_gives_near_identity_operator() {
    let mut r = rng(4);
    let normal = rand_distr::StandardNormal;
    let descs: Vec<_> = (0..20000)
        .map(|i| desc((0..3).map(|_| r.sample::<f64, _>(normal)).collect(), i))
        .collect();
    let w = fit_whitening(&descs, None).unwrap();
    assert!((w.matrix.clone() - DMatrix::identity(3, 3)).abs().max() < 0.05);
}

#[test]
fn correlated_columns_are_decorrelated_in_retained_basis() {
    let mut r = rng(5);
    let descs: Vec<_> = (0..200)
        .map(|i| {
            let x: f64 = r.random_range(-1.0..1.0);
            let y: f64 = r.random_range(-1.0..1.0);
            desc(vec![x, 2.0 * x, y], i)
        })
        .collect();
    let w = fit_whitening(&descs, None).unwrap();
    assert_eq!(w.retained(), 2);
    let c = whitened_cov(&descs, &w);
    // rotate into the eigenbasis and keep the directions above the floor
    let u = &w.eigenvectors;
    let ce = u.transpose() * c * u;
    let keep: Vec<usize> = (0..3).filter(|&i| w.eigenvalues[i] > w.epsilon).collect();
    for &i in &keep {
        assert!((ce[(i, i)] - 1.0).abs() < 1e-6);
        for &j in &keep {
            if i != j {
                assert!(ce[(i, j)].abs() < 1e-6);
            }
        }
    }
    // the collapsed direction carries (almost) nothing and no cross terms
    let dropped = (0..3).find(|i| !keep.contains(i)).unwrap();
    for j in 0..3 {
        if j != dropped {
            assert!(ce[(dropped, j)].abs() < 1e-6);
        }
    }
}

#[test]
fn scalar_variance_four_gives_half() {
    let descs = vec![desc(vec![-2.0], 0), desc(vec![2.0], 1)];
    // sample variance of {-2, 2} is 8; scale so it is 4
    let s = 2f64.sqrt();
    let descs2 = vec![desc(vec![-s], 0), desc(vec![s], 1)];
    assert!((fit_whitening(&descs2, None).unwrap().matrix[(0, 0)] - 0.5).abs() < 1e-12);
    assert!((fit_whitening(&descs, None).unwrap().matrix[(0, 0)] - 1.0 / 8f64.sqrt()).abs() < 1e-12);
}

#[test]
fn non_finite_descriptor_is_rejected() {
    let descs = vec![desc(vec![1.0, f64::NAN], 0), desc(vec![0.0, 1.0], 1)];
    assert!(fit_whitening(&descs, None).is_err());
}

#[test]
fn distances_match_direct_norms() {
    let descs = vec![desc(vec![1.0, 0.0], 0), desc(vec![0.0, 2.0], 1), desc(vec![3.0, 1.0], 2)];
    let w = fit_whitening(&descs, None).unwrap();
    let d = distance_matrix(&descs, &w).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let zi = &w.matrix * (nalgebra::DVector::from_vec(descs[i].values.clone()) - &w.mean);
            let zj = &w.matrix * (nalgebra::DVector::from_vec(descs[j].values.clone()) - &w.mean);
            assert!((d.get(i, j) - (zi - zj).norm()).abs() < 1e-12);
            assert_eq!(d.get(i, j), d.get(j, i));
        }
        assert_eq!(d.get(i, i), 0.0);
    }
}

#[test]
fn duplicates_are_at_distance_zero_and_triangle_holds() {
    let mut r = rng(6);
    let mut descs: Vec<_> = (0..12)
        .map(|i| desc((0..4).map(|_| r.random_range(-1.0..1.0)).collect(), i))
        .collect();
    descs.push(desc(descs[3].values.clone(), 99));
    let w = fit_whitening(&descs, None).unwrap();
    let d = distance_matrix(&descs, &w).unwrap();
    assert_eq!(d.get(3, 12), 0.0);
    let m = d.len();
    for i in 0..m {
        for j in 0..m {
            assert!(d.get(i, j) >= 0.0);
            for k in 0..m {
                assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
            }
        }
    }
}

#[test]
fn distance_cache_round_trips() {
    let mut r = rng(7);
    let descs: Vec<_> = (0..10)
        .map(|i| desc((0..3).map(|_| r.random_range(-1.0..1.0)).collect(), i))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let (_, d1, hit1) = whitened_distances_cached(&descs, None, Some(dir.path())).unwrap();
    let (_, d2, hit2) = whitened_distances_cached(&descs, None, Some(dir.path())).unwrap();
    assert!(!hit1 && hit2);
    assert_eq!(d1, d2);
    let (_, _, hit3) = whitened_distances_cached(&descs, Some(1e-3), Some(dir.path())).unwrap();
    assert!(!hit3);
}

#[test]
fn tile_rows_are_little_endian_f32() {
    let descs = vec![desc(vec![1.0], 0), desc(vec![2.0], 1), desc(vec![4.0], 2)];
    let w = fit_whitening(&descs, None).unwrap();
    let d = distance_matrix(&descs, &w).unwrap();
    let bytes = d.rows_f32_le(1, 3);
    assert_eq!(bytes.len(), 2 * 3 * 4);
    let vals: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    for (idx, v) in vals.iter().enumerate() {
        assert_eq!(*v, d.get(1 + idx / 3, idx % 3) as f32);
    }
}

#[test]
fn bond_deltas_match_bruteforce() {
    let mut r = rng(8);
    for _ in 0..10 {
        let a = random_positions(&mut r, 15, 3.0);
        let b: Vec<Vec3> = a
            .iter()
            .map(|p| p + Vec3::new(r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)))
            .collect();
        let t = transition(a.clone(), b.clone());
        let cut = 2.5;
        let bi = compute_bonds(&t.initial, cut).unwrap();
        let bf = compute_bonds(&t.terminal, cut).unwrap();
        let got = bond_delta_from_sets(&t, &bi, &bf);
        for i in 0..15 {
            let mut s = 0.0;
            let mut c = 0;
            for j in 0..15 {
                if i == j {
                    continue;
                }
                let la = (a[i] - a[j]).norm();
                let lb = (b[i] - b[j]).norm();
                if la <= cut || lb <= cut {
                    s += (lb - la).abs();
                    c += 1;
                }
            }
            let want = if c == 0 { 0.0 } else { s / c as f64 };
            assert!((got[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn rigid_translation_has_no_bond_delta_and_uniform_displacement() {
    let mut r = rng(9);
    let a = random_positions(&mut r, 10, 3.0);
    let shift = Vec3::new(1.0, 0.0, 0.0);
    let b: Vec<Vec3> = a.iter().map(|p| p + shift).collect();
    let t = transition(a, b);
    let bi = compute_bonds(&t.initial, 2.5).unwrap();
    let bf = compute_bonds(&t.terminal, 2.5).unwrap();
    assert!(bond_delta_from_sets(&t, &bi, &bf).iter().all(|v| v.abs() < 1e-12));
    assert!(displacement_vectors(&t).iter().all(|d| (d - shift).norm() < 1e-12));
}

#[test]
fn ensemble_pipeline_runs_end_to_end() {
    let mut r = rng(10);
    let parts = (0..6)
        .map(|_| {
            let a = random_positions(&mut r, 8, 3.0);
            let b = a.clone();
            let fa = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
            let fb = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
            (a, b, fa, fb)
        })
        .collect();
    let ds = dataset_of(parts, 2);
    let e = compute_ensemble(&ds, None, None).unwrap();
    assert_eq!(e.matrix.len(), 6);
    let s = per_atom_scalars(&ds, 0).unwrap();
    assert!(s.channels.values().all(|v| v.len() == 8));
    assert!(s.channels.contains_key(CHANNEL_BOND_DELTA) && s.channels.contains_key(CHANNEL_DISPLACEMENT));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn descriptor_is_invariant_to_pose_and_relabelling(seed in any::<u64>(), n in 3usize..14, k in 1usize..5) {
        let mut r = rng(seed);
        let pos = random_positions(&mut r, n, 4.0);
        let delta = random_delta(&mut r, label(), n, k);
        let base = coulombic_aggregate(&delta, &pos).unwrap();
        let pose = Pose::random(&mut r, n, 10.0);
        let moved = pose.apply(&pos);
        let pd = delta.permute_rows(&pose.permutation);
        let again = coulombic_aggregate(&pd, &moved).unwrap();
        prop_assert!(rel_close(&base.values, &again.values, 1e-9));
    }

    #[test]
    fn distance_matrix_is_a_pseudo_metric(seed in any::<u64>(), m in 2usize..9) {
        let mut r = rng(seed);
        let descs: Vec<_> = (0..m).map(|i| desc((0..3).map(|_| r.random_range(-5.0..5.0)).collect(), i)).collect();
        let w = fit_whitening(&descs, None).unwrap();
        let d = distance_matrix(&descs, &w).unwrap();
        for i in 0..m {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..m {
                prop_assert!(d.get(i, j) >= 0.0 && d.get(i, j).is_finite());
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }
}
