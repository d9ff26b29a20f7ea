mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use transens_core::alignment::align_group;
use transens_core::descriptors::DistanceMatrix;
use transens_core::field::*;
use transens_core::model::{Transition, Vec3};
use transens_core::synth::{cuboctahedron, BOND_LENGTH};

fn displaced(pos: &[Vec3], disp: &[Vec3]) -> Transition {
    transition(pos.to_vec(), pos.iter().zip(disp).map(|(p, d)| p + d).collect())
}

fn random_vec(r: &mut rand::rngs::StdRng, s: f64) -> Vec3 {
    Vec3::new(r.random_range(-s..s), r.random_range(-s..s), r.random_range(-s..s))
}

#[test]
fn kernel_limits() {
    let sigma = 0.5;
    let pos = vec![Vec3::zeros(), Vec3::new(6.0, 0.0, 0.0), Vec3::new(0.0, 7.0, 0.0)];
    let t = displaced(&pos, &[Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 0.0, -2.0)]);
    let (d, under) = sample_displacement(&t, &Vec3::zeros(), sigma);
    assert!(!under);
    assert!((d - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-6);

    let v = Vec3::new(0.3, -0.2, 0.9);
    let same = displaced(&pos, &[v; 3]);
    let mut r = rng(1);
    for _ in 0..20 {
        let p = random_vec(&mut r, 5.0);
        let (d, _) = sample_displacement(&same, &p, 1.3);
        assert!((d - v).norm() <= 1e-15 * 4.0);
    }

    let (d, under) = sample_displacement(&t, &Vec3::new(1e4, 0.0, 0.0), 0.1);
    assert!(under && d == Vec3::zeros());
}

#[test]
fn kernel_matches_direct_sum() {
    let pos = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
    let disp = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
    let t = displaced(&pos, &disp);
    let p = Vec3::new(0.5, 0.5, 0.0);
    let sigma = 0.8;
    let w: Vec<f64> = pos.iter().map(|x| (-(p - x).norm_squared() / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    let want = disp.iter().zip(&w).map(|(d, w)| d * *w).sum::<Vec3>() / total;
    let (got, _) = sample_displacement(&t, &p, sigma);
    assert!((got - want).norm() < 1e-14);
}

#[test]
fn correlation_examples() {
    let d = Vec3::new(0.2, -0.4, 0.1);
    assert_eq!(correlation(&d, &[d, d, d, d]), 1.0);
    let mean = (d + -d) / 2.0;
    assert_eq!(correlation(&mean, &[d, -d]), 0.5);
    assert_eq!(correlation(&d, &[-d]), 0.0);
    assert_eq!(correlation(&d, &[Vec3::new(0.4, 0.2, 0.0)]), 0.5);
    assert_eq!(correlation(&Vec3::zeros(), &[Vec3::zeros()]), 0.5);
}

#[test]
fn default_sigma_is_half_the_nearest_neighbour_distance() {
    let pos = cuboctahedron(2, BOND_LENGTH);
    assert!((default_sigma(&pos).unwrap() - BOND_LENGTH / 2.0).abs() < 1e-9);
    assert!(default_sigma(&pos[..1]).is_err());
}

fn group_fixture(n_members: usize, seed: u64) -> (Vec<Vec3>, Vec<Transition>) {
    let pos = cuboctahedron(1, BOND_LENGTH);
    let mut r = rng(seed);
    let base: Vec<Vec3> = (0..pos.len()).map(|_| random_vec(&mut r, 0.5)).collect();
    let members = (0..n_members)
        .map(|_| {
            let disp: Vec<Vec3> = base.iter().map(|b| b + random_vec(&mut r, 0.3)).collect();
            displaced(&pos, &disp)
        })
        .collect();
    (pos, members)
}

#[test]
fn identical_members_are_fully_coherent() {
    let (pos, members) = group_fixture(1, 2);
    let copies = vec![members[0].clone(); 4];
    let f = build_field_from(0, &copies[0], &copies, None).unwrap();
    assert_eq!(f.positions, pos);
    assert!(f.corr.iter().all(|&c| c == 1.0));
    assert!(threshold_filter(&f, 0.5).iter().all(RenderElement::is_colored));
    assert!(threshold_filter(&f, 0.0).iter().all(RenderElement::is_colored));
    assert!(!threshold_filter(&f, 1.0 + 1e-9).iter().any(RenderElement::is_colored));
}

#[test]
fn opposing_pairs_cancel() {
    let pos = cuboctahedron(1, BOND_LENGTH);
    let mut r = rng(3);
    let disp: Vec<Vec3> = (0..pos.len()).map(|_| random_vec(&mut r, 0.5)).collect();
    let neg: Vec<Vec3> = disp.iter().map(|d| -d).collect();
    let a = displaced(&pos, &disp);
    let b = displaced(&pos, &neg);
    let f = build_field_from(0, &a, &[a.clone(), b], Some(1.0)).unwrap();
    for (m, c) in f.mean.iter().zip(&f.corr) {
        assert!(m.norm() < 1e-9);
        assert!((c - 0.5).abs() < 1e-6);
    }
}

#[test]
fn singleton_field_reproduces_atom_displacements() {
    let (pos, members) = group_fixture(1, 4);
    let sigma = 0.2 * BOND_LENGTH;
    let f = build_field_from(0, &members[0], &members, Some(sigma)).unwrap();
    let t = &members[0];
    for (i, m) in f.mean.iter().enumerate() {
        let own = t.terminal.positions[i] - t.initial.positions[i];
        assert!((m - own).norm() < 1e-3, "atom {i}");
    }
    assert_eq!(f.positions, pos);
    assert!(build_field_from(0, &members[0], &members, Some(0.0)).is_err());
    assert!(build_field_from(0, &members[0], &[], None).is_err());
}

#[test]
fn aligned_group_field_carries_warnings() {
    let (_, members) = group_fixture(3, 5);
    let deltas: Vec<_> = members
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = rng(50 + i as u64);
            if i == 2 {
                transens_core::descriptors::FeatureDelta::from_rows(t.label.clone(), t.atom_count(), 3, vec![0.0; t.atom_count() * 3]).unwrap()
            } else {
                random_delta(&mut r, t.label.clone(), t.atom_count(), 3)
            }
        })
        .collect();
    let d = DistanceMatrix::from_fn(labels(3), |i, j| if i == j { 0.0 } else { 1.0 }).unwrap();
    let g = align_group(&members, &deltas, &d).unwrap();
    let f = build_field(7, &g, None).unwrap();
    assert_eq!(f.group, 7);
    assert_eq!(f.members.len(), 2);
    assert_eq!(f.warnings.len(), 1);
    assert_eq!(interpolate_reference(&g, 0.0), g.reference_member().transition.initial.positions);
}

#[test]
fn interpolation_endpoints_and_midpoint() {
    let mut r = rng(6);
    let a = random_positions(&mut r, 7, 3.0);
    let b = random_positions(&mut r, 7, 3.0);
    let t = transition(a.clone(), b.clone());
    assert_eq!(interpolate(&t, 0.0), a);
    assert_eq!(interpolate(&t, 1.0), b);
    for ((m, x), y) in interpolate(&t, 0.5).iter().zip(&a).zip(&b) {
        assert!((m - (x + y) / 2.0).norm() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn correlation_is_bounded(seed in any::<u64>(), n in 1usize..8) {
        let mut r = rng(seed);
        let samples: Vec<Vec3> = (0..n).map(|_| random_vec(&mut r, 2.0)).collect();
        let mean = samples.iter().sum::<Vec3>() / n as f64;
        let c = correlation(&mean, &samples);
        prop_assert!((0.0..=1.0).contains(&c));
        let external = random_vec(&mut r, 2.0);
        prop_assert!((0.0..=1.0).contains(&correlation(&external, &samples)));
    }

    #[test]
    fn raising_tau_never_adds_colored(seed in any::<u64>(), lo in 0.0f64..1.0, step in 0.0f64..0.5) {
        let (_, members) = group_fixture(3, seed);
        let f = build_field_from(0, &members[0], &members, None).unwrap();
        let a = threshold_filter(&f, lo);
        let b = threshold_filter(&f, lo + step);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.is_colored() || !y.is_colored());
        }
    }
}
