//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line
//! directly to stdout, so the lines appear even when output is captured.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::*;
use nalgebra::Matrix3;
use rand::Rng;
use transens_core::alignment::{align_transition, apply_alignment, pseudo_atoms};
use transens_core::bonds::compute_bonds;
use transens_core::cluster::{flat_roots, flatten, optimal_leaf_order, reduce, ward_cluster, ward_linkage};
use transens_core::descriptors::{coulombic_aggregate, coulombic_aggregate_counted, compute_ensemble, FeatureDelta};
use transens_core::export::{export_all, read_transition_file, ExportedFolder};
use transens_core::field::{build_field_from, correlation};
use transens_core::model::{Transition, Vec3};
use transens_core::pipeline::{Analysis, AnalysisConfig};
use transens_core::session::Session;
use transens_core::strain::{glyph_set, invariants, strain_field, GlyphParams};
use transens_core::synth::{cuboctahedron, duplicate_ensemble, two_motif_dataset, two_motif_dataset_jittered, Motif, Pose, BOND_LENGTH};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let line = format!("{} {name} [{secs:.2}s]: {detail}\n", if ok { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(line.as_bytes());
        let _ = out.flush();
        self.results.push((name.to_string(), ok));
    }
}

fn jittered_transition(r: &mut rand::rngs::StdRng, n: usize, k: usize) -> (Transition, FeatureDelta) {
    let a = random_positions(r, n, 4.0);
    let b: Vec<Vec3> = a
        .iter()
        .map(|p| p + Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)))
        .collect();
    let t = transition(a, b);
    let delta = random_delta(r, t.label.clone(), n, k);
    (t, delta)
}

fn rotation_recovery() -> Outcome {
    let mut r = rng(0xA11);
    let start = Instant::now();
    let (mut worst_r, mut worst_res) = (0.0f64, 0.0f64);
    let mut trials = 0;
    while trials < 100 {
        let (t, delta) = jittered_transition(&mut r, 12, 5);
        let pa = pseudo_atoms(&t, &delta).map_err(|e| e.to_string())?;
        // at least three non-collinear pseudo-atoms
        let q: Vec<Vec3> = pa.q_hat.iter().zip(&pa.valid).filter(|(_, v)| **v).map(|(q, _)| *q).collect();
        let spread = q.iter().map(|x| x * x.transpose()).sum::<Matrix3<f64>>();
        let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        if q.len() < 3 || ev[1] < 1e-6 {
            continue;
        }
        trials += 1;
        let r0 = rotation(&mut r);
        let pose = Pose { rotation: r0, translation: Vec3::new(r.random_range(-5.0..5.0), 1.0, -2.0), permutation: (0..12).collect() };
        let target = transition(pose.apply(&t.initial.positions), pose.apply(&t.terminal.positions));
        let reference = pseudo_atoms(&target, &delta).map_err(|e| e.to_string())?;
        let res = align_transition(&t, &delta, &reference, true).map_err(|e| e.to_string())?;
        worst_r = worst_r.max((res.rotation_matrix() - r0).norm());
        worst_res = worst_res.max(res.residual);
        let aligned = apply_alignment(&t, &res);
        let pos_err = aligned.initial.positions.iter().zip(&target.initial.positions).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        ensure(pos_err < 1e-8, || format!("aligned positions off by {pos_err:e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_r < 1e-9, || format!("max ||R-R0||_F = {worst_r:e}"))?;
    ensure(worst_res < 1e-6, || format!("max residual = {worst_res:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("100 trials, max ||R-R0||_F = {worst_r:.1e}, max residual = {worst_res:.1e}, {secs:.3}s"))
}

fn strain_invariance() -> Outcome {
    let base = cuboctahedron(2, BOND_LENGTH);
    let cutoff = BOND_LENGTH * 1.1;
    let mut r = rng(0x57A);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let fin: Vec<Vec3> = base
            .iter()
            .map(|x| x * r.random_range(0.97..1.03) + Vec3::new(r.random_range(-0.15..0.15), r.random_range(-0.15..0.15), r.random_range(-0.15..0.15)))
            .collect();
        let t = transition(base.clone(), fin.clone());
        let r0 = rotation(&mut r);
        let s = Vec3::new(r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-10.0..10.0));
        let moved = transition(base.iter().map(|x| r0 * x + s).collect(), fin.iter().map(|x| r0 * x + s).collect());
        let a = strain_field(&t, &compute_bonds(&t.initial, cutoff).unwrap()).map_err(|e| e.to_string())?;
        let b = strain_field(&moved, &compute_bonds(&moved.initial, cutoff).unwrap()).map_err(|e| e.to_string())?;
        for (x, y) in a.atoms.iter().zip(&b.atoms) {
            let (p, q) = (x.invariants, y.invariants);
            worst = worst.max((p.k1 - q.k1).abs()).max((p.k2 - q.k2).abs()).max((p.k3 - q.k3).abs());
        }
    }
    ensure(worst < 1e-9, || format!("rigid motion changed invariants by {worst:e}"))?;

    let mut rot_worst = 0.0f64;
    let mut gray = true;
    for _ in 0..50 {
        let r0 = rotation(&mut r);
        let t = transition(base.clone(), base.iter().map(|x| r0 * x).collect());
        let f = strain_field(&t, &compute_bonds(&t.initial, cutoff).unwrap()).map_err(|e| e.to_string())?;
        for a in &f.atoms {
            rot_worst = rot_worst.max(a.strain().abs().max());
        }
        gray &= glyph_set(&f, &t, f.max_abs_k1(), &GlyphParams::default()).iter().all(|g| g.degenerate);
    }
    ensure(rot_worst < 1e-12 && gray, || format!("pure rotation left strain {rot_worst:e}"))?;

    let mut outside = 0;
    for _ in 0..10_000 {
        let scale = 10f64.powf(r.random_range(-8.0..1.0));
        let m = Matrix3::from_fn(|_, _| r.random_range(-scale..scale));
        let k3 = invariants(&(0.5 * (m + m.transpose()))).k3;
        if !(-1.0..=1.0).contains(&k3) {
            outside += 1;
        }
    }
    ensure(outside == 0, || format!("{outside} tensors with K3 outside [-1, 1]"))?;
    Ok(format!("50 rigid motions max change {worst:.1e}; 50 rotations max |E| {rot_worst:.1e}; 10^4 tensors K3 in range"))
}

fn correlation_bounds() -> Outcome {
    let mut r = rng(0xC0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let n = r.random_range(1..10);
        let scale = 10f64.powf(r.random_range(-6.0..2.0));
        let v: Vec<Vec3> = (0..n).map(|_| Vec3::new(r.random_range(-scale..scale), r.random_range(-scale..scale), r.random_range(-scale..scale))).collect();
        let mean = v.iter().sum::<Vec3>() / n as f64;
        let other = Vec3::new(r.random_range(-scale..scale), r.random_range(-scale..scale), r.random_range(-scale..scale));
        for c in [correlation(&mean, &v), correlation(&other, &v)] {
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    ensure(lo >= 0.0 && hi <= 1.0, || format!("corr range [{lo}, {hi}]"))?;

    let pos = cuboctahedron(2, BOND_LENGTH);
    let disp: Vec<Vec3> = pos.iter().enumerate().map(|(i, _)| if i % 3 == 0 { Vec3::zeros() } else { Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 0.3) }).collect();
    let t = transition(pos.clone(), pos.iter().zip(&disp).map(|(p, d)| p + d).collect());
    let same = build_field_from(0, &t, &vec![t.clone(); 5], None).map_err(|e| e.to_string())?;
    let nonstatic: Vec<usize> = (0..pos.len()).filter(|&i| same.mean[i].norm_squared() >= 1e-20).collect();
    ensure(nonstatic.iter().all(|&i| same.corr[i] == 1.0), || "identical members below 1".into())?;

    let neg = transition(pos.clone(), pos.iter().zip(&disp).map(|(p, d)| p - d).collect());
    let opp = build_field_from(0, &t, &[t.clone(), neg], None).map_err(|e| e.to_string())?;
    let max_mean = opp.mean.iter().map(|m| m.norm()).fold(0.0, f64::max);
    ensure(max_mean < 1e-9, || format!("opposing pair mean {max_mean:e}"))?;
    Ok(format!("10^4 ensembles in [{lo:.3}, {hi:.3}]; identical group corr = 1 at {} nonstatic atoms; opposing pair max |d| = {max_mean:.1e}", nonstatic.len()))
}

fn clustering_oracles() -> Outcome {
    let mut r = rng(0xC1);
    for trial in 0..100 {
        let m = r.random_range(1..=10);
        let d = random_matrix(&mut r, m);
        let got = ward_linkage(&d).map_err(|e| e.to_string())?;
        let want = naive_ward(&d);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(a, b)| {
                (a.left, a.right, a.size) == (b.left, b.right, b.size) && (a.height - b.height).abs() <= 1e-12 * a.height.max(1.0)
            });
        ensure(same, || format!("ward trial {trial} (m={m}) differs from the reference"))?;
    }
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let m = r.random_range(1..=8);
        let d = random_matrix(&mut r, m);
        let tree = ward_cluster(&d).map_err(|e| e.to_string())?;
        let o = optimal_leaf_order(&tree, &d).map_err(|e| e.to_string())?;
        let best = exhaustive_flip_cost(&tree, &d);
        worst = worst.max((o.cost - best).abs());
        ensure((o.cost - best).abs() < 1e-9 && tree.is_flip_reachable(&o.order), || format!("ordering trial {trial}: {} vs {best}", o.cost))?;
    }
    Ok(format!("100 ward trials identical; 100 orderings optimal (max gap {worst:.1e})"))
}

fn reduction_behavior() -> Outcome {
    let (ds, source) = duplicate_ensemble(1500, 1500, 13, 8, 200, 0xD0).map_err(|e| e.to_string())?;
    ensure(ds.len() == 3000, || format!("{} transitions", ds.len()))?;
    let distinct = source.iter().collect::<BTreeSet<_>>().len();
    let e = compute_ensemble(&ds, None, None).map_err(|e| e.to_string())?;
    let red = reduce(&e.matrix, 0.3).map_err(|e| e.to_string())?;
    let kept = red.kept.len();
    let lo = (1500.0 * 0.98) as usize;
    let hi = (1500.0 * 1.02) as usize;
    ensure((lo..=hi).contains(&kept), || format!("kept {kept} of 3000 at cutoff 0.3"))?;
    let all = reduce(&e.matrix, 0.0).map_err(|e| e.to_string())?;
    ensure(all.kept.len() == 3000, || format!("kept {} at cutoff 0", all.kept.len()))?;
    Ok(format!("cutoff 0.3 keeps {kept}/3000 ({distinct} distinct); cutoff 0 keeps 3000/3000"))
}

fn performance() -> Outcome {
    let (n, k, m) = (147, 55, 3000);
    let (ds, _) = duplicate_ensemble(m, 0, n, k, 120, 0xE0).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let e = compute_ensemble(&ds, None, None).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(e.matrix.len() == m, || "wrong matrix size".into())?;
    let (_, terms) = coulombic_aggregate_counted(&e.deltas[0], &ds.transitions[0].initial.positions).map_err(|e| e.to_string())?;
    let want = (k * n * (n - 1) / 2) as u64;
    ensure(terms == want, || format!("{terms} terms, expected {want}"))?;
    ensure(secs <= 300.0, || format!("pipeline took {secs:.1}s"))?;
    Ok(format!("m={m} n={n} k={k} in {secs:.1}s (limit 300s); {terms} terms per transition"))
}

fn descriptor_invariance() -> Outcome {
    let mut r = rng(0xDE);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(10..60);
        let k = r.random_range(1..12);
        let pos = random_positions(&mut r, n, 5.0);
        let delta = random_delta(&mut r, transens_core::model::TransitionLabel::new("a", "b"), n, k);
        let base = coulombic_aggregate(&delta, &pos).map_err(|e| e.to_string())?;
        let pose = Pose::random(&mut r, n, 20.0);
        let moved = coulombic_aggregate(&delta.permute_rows(&pose.permutation), &pose.apply(&pos)).map_err(|e| e.to_string())?;
        let num = base.values.iter().zip(&moved.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = base.values.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    ensure(worst < 1e-9, || format!("max relative change {worst:e}"))?;
    Ok(format!("100 trials, max relative change {worst:.1e}"))
}

fn folder_matches(folder: &ExportedFolder, node: usize, tree: &transens_core::cluster::Dendrogram, flat: &BTreeSet<usize>, a: &Analysis) -> Result<(), String> {
    ensure(folder.node == node, || format!("folder for {} where {node} expected", folder.node))?;
    if flat.contains(&node) {
        let want: BTreeSet<_> = tree.leaves(node).into_iter().map(|l| a.leaf_label(l).clone()).collect();
        let got: BTreeSet<_> = folder.transitions.iter().cloned().collect();
        return ensure(folder.children.is_empty() && want == got, || format!("leaf folder {node} membership differs"));
    }
    let [l, r] = tree.node(node).unwrap().children.unwrap();
    ensure(folder.children.len() == 2 && folder.transitions.is_empty(), || format!("folder {node} is not binary"))?;
    folder_matches(&folder.children[0], l, tree, flat, a)?;
    folder_matches(&folder.children[1], r, tree, flat, a)
}

fn export_fidelity() -> Outcome {
    let (ds, _) = two_motif_dataset(6, 12, 0xF1).map_err(|e| e.to_string())?;
    let mut parts_ds = ds;
    parts_ds.name = "export".into();
    let a = Analysis::run(Arc::new(parts_ds), &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let tree = &a.hierarchy.tree;
    let mut heights: Vec<f64> = tree.nodes().iter().filter(|n| !n.is_leaf()).map(|n| n.height).collect();
    heights.sort_by(f64::total_cmp);
    let cutoff = heights[heights.len() / 2];
    let session = Session::new(a.dataset.content_hash(), 0.0, cutoff);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = export_all(&session, &a, dir.path()).map_err(|e| e.to_string())?;
    let flat: BTreeSet<usize> = flat_roots(tree, cutoff).into_iter().collect();
    folder_matches(&out, tree.root(), tree, &flat, &a)?;
    let clusters = flatten(tree, cutoff, None);
    let leaf_sets: BTreeSet<BTreeSet<_>> = out.leaf_folders().iter().map(|f| f.transitions.iter().cloned().collect()).collect();
    let flat_sets: BTreeSet<BTreeSet<_>> = clusters.iter().map(|c| c.members.iter().map(|&l| a.leaf_label(l).clone()).collect()).collect();
    ensure(leaf_sets == flat_sets, || "leaf folders differ from flatten()".into())?;

    let mut worst = 0.0f64;
    let mut files = 0;
    for f in out.leaf_folders() {
        for entry in std::fs::read_dir(&f.path).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().and_then(|s| s.to_str()) != Some("extxyz") {
                continue;
            }
            let (f0, f1) = read_transition_file(&path).map_err(|e| e.to_string())?;
            let label = transens_core::model::TransitionLabel::new(f0.info["state_id"].clone(), f1.info["state_id"].clone());
            let t = a.dataset.transition(&label).ok_or_else(|| format!("{label} not in dataset"))?;
            for (frame, state) in [(&f0, &t.initial), (&f1, &t.terminal)] {
                for (p, q) in frame.positions.iter().zip(&state.positions) {
                    for c in 0..3 {
                        if q[c] != 0.0 {
                            worst = worst.max((p[c] - q[c]).abs() / q[c].abs());
                        } else {
                            ensure(p[c] == 0.0, || "zero coordinate not preserved".into())?;
                        }
                    }
                }
            }
            files += 1;
        }
    }
    ensure(files == a.leaf_count(), || format!("{files} files for {} transitions", a.leaf_count()))?;
    ensure(worst <= 5e-12 * (1.0 + 1e-9), || format!("relative coordinate error {worst:e}"))?;
    Ok(format!("{files} transitions in {} leaf folders, tree isomorphic to flatten, max relative error {worst:.1e}", clusters.len()))
}

fn two_motif_separation() -> Outcome {
    let (ds, motifs) = two_motif_dataset_jittered(30, 16, 0.05, 0x2D).map_err(|e| e.to_string())?;
    let a = Analysis::run(Arc::new(ds), &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let tree = &a.hierarchy.tree;
    let root = tree.root();
    let [l, r] = tree.node(root).unwrap().children.unwrap();
    let below = tree.height(l).max(tree.height(r));
    let cutoff = 0.5 * (below + tree.height(root));
    let clusters = flatten(tree, cutoff, None);
    ensure(clusters.len() == 2, || format!("{} clusters at the top cut", clusters.len()))?;
    let mut contamination = 0;
    let mut kinds = Vec::new();
    for c in &clusters {
        let mut count: BTreeMap<Motif, usize> = BTreeMap::new();
        for &leaf in &c.members {
            *count.entry(motifs[a.dataset_index(leaf)]).or_default() += 1;
        }
        let majority = count.values().copied().max().unwrap_or(0);
        contamination += c.members.len() - majority;
        kinds.push(count);
    }
    let all: BTreeSet<Motif> = kinds.iter().flat_map(|k| k.keys().copied()).collect();
    ensure(contamination == 0 && all.len() == 2, || format!("{contamination} misplaced transitions: {kinds:?}"))?;
    Ok(format!(
        "60 transitions split {}/{} with 0 cross-contamination (root {:.3}, next {:.3})",
        clusters[0].members.len(),
        clusters[1].members.len(),
        tree.height(root),
        below
    ))
}

#[test]
fn acceptance_suite() {
    let mut s = Suite { results: Vec::new() };
    s.run("rotation-recovery", rotation_recovery);
    s.run("strain-invariance", strain_invariance);
    s.run("correlation-bounds", correlation_bounds);
    s.run("clustering-oracles", clustering_oracles);
    s.run("reduction-behavior", reduction_behavior);
    s.run("performance", performance);
    s.run("descriptor-invariance", descriptor_invariance);
    s.run("export-fidelity", export_fidelity);
    s.run("two-motif-separation", two_motif_separation);
    let failed: Vec<&str> = s.results.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

