//! Pose registration through permutation-invariant pseudo-atoms.
//!
//! Every feature column `j` defines a pseudo-atom: the centroid of the atom
//! positions weighted by `|Δf_{·j}|`. Because the weights follow the atoms,
//! relabelling atoms leaves the pseudo-atoms unchanged, and a rigid motion
//! of the transition moves them rigidly. Two transitions are registered by
//! a Kabsch fit of their centred pseudo-atoms.

use std::sync::Arc;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::medoid;
use crate::descriptors::{DistanceMatrix, FeatureDelta};
use crate::error::{Error, Result};
use crate::model::{AtomicState, Transition, TransitionLabel, Vec3};

/// Column weight sums below this make a pseudo-atom unusable.
pub const MIN_WEIGHT_SUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoAtomSet {
    pub label: TransitionLabel,
    /// Raw pseudo-positions, one per feature column (zero when invalid).
    pub q: Vec<Vec3>,
    /// `q` centred on the mean of the valid rows.
    pub q_hat: Vec<Vec3>,
    pub valid: Vec<bool>,
    pub centroid: Vec3,
}

impl PseudoAtomSet {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Pseudo-atoms of a transition from its initial positions.
pub fn pseudo_atoms(transition: &Transition, delta: &FeatureDelta) -> Result<PseudoAtomSet> {
    pseudo_atoms_at(transition.label.clone(), &transition.initial.positions, delta)
}

/// Pseudo-atoms for explicit positions (`n` rows matching `delta`).
pub fn pseudo_atoms_at(label: TransitionLabel, positions: &[Vec3], delta: &FeatureDelta) -> Result<PseudoAtomSet> {
    if positions.len() != delta.rows() {
        return Err(Error::Shape {
            expected: format!("{} atoms", delta.rows()),
            found: format!("{} positions", positions.len()),
        });
    }
    let k = delta.cols();
    let mut sums = vec![Vec3::zeros(); k];
    let mut weights = vec![0.0; k];
    for (i, x) in positions.iter().enumerate() {
        for (j, &v) in delta.row(i).iter().enumerate() {
            let w = v.abs();
            sums[j] += x * w;
            weights[j] += w;
        }
    }
    let valid: Vec<bool> = weights.iter().map(|&w| w >= MIN_WEIGHT_SUM).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::NoDisplacementSignal(label.to_string()));
    }
    let q: Vec<Vec3> = sums
        .iter()
        .zip(&weights)
        .zip(&valid)
        .map(|((s, &w), &ok)| if ok { s / w } else { Vec3::zeros() })
        .collect();
    let centroid = masked_mean(&q, &valid);
    let q_hat = center(&q, &valid, &centroid);
    Ok(PseudoAtomSet {
        label,
        q,
        q_hat,
        valid,
        centroid,
    })
}

fn masked_mean(points: &[Vec3], mask: &[bool]) -> Vec3 {
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for (p, _) in points.iter().zip(mask).filter(|(_, &m)| m) {
        sum += p;
        count += 1;
    }
    if count == 0 {
        sum
    } else {
        sum / count as f64
    }
}

fn center(points: &[Vec3], mask: &[bool], c: &Vec3) -> Vec<Vec3> {
    points
        .iter()
        .zip(mask)
        .map(|(p, &m)| if m { p - c } else { Vec3::zeros() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KabschResult {
    pub rotation: Matrix3<f64>,
    /// RMS of `‖R·p_i − q_i‖`.
    pub residual: f64,
    /// True when either point set has no spread; the rotation is then the identity.
    pub degenerate: bool,
}

/// Proper rotation `R` minimising `Σ ‖R·p_i − q_i‖²` for centred `p`, `q`.
pub fn kabsch(p: &[Vec3], q: &[Vec3]) -> Result<KabschResult> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Shape {
            expected: format!("{} non-empty rows", p.len()),
            found: format!("{} rows", q.len()),
        });
    }
    let spread = |s: &[Vec3]| s.iter().map(|v| v.norm_squared()).sum::<f64>();
    let rms = |r: &Matrix3<f64>| {
        let ss: f64 = p.iter().zip(q).map(|(a, b)| (r * a - b).norm_squared()).sum();
        (ss / p.len() as f64).sqrt()
    };
    if spread(p) < 1e-24 || spread(q) < 1e-24 {
        let id = Matrix3::identity();
        return Ok(KabschResult {
            rotation: id,
            residual: rms(&id),
            degenerate: true,
        });
    }
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += a * b.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Alignment("SVD did not converge".into()))?;
    let v = svd.v_t.ok_or_else(|| Error::Alignment("SVD did not converge".into()))?.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, sign));
    let rotation = v * fix * u.transpose();
    Ok(KabschResult {
        rotation,
        residual: rms(&rotation),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub label: TransitionLabel,
    /// Maps the moving transition onto the reference frame.
    pub rotation: [[f64; 3]; 3],
    pub residual: f64,
    pub swapped: bool,
    /// Pseudo-atom centroid of the moving transition (rotation centre).
    pub moving_centroid: [f64; 3],
    pub reference_centroid: [f64; 3],
    pub common_columns: usize,
    pub degenerate: bool,
}

impl AlignmentResult {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn identity(label: TransitionLabel, centroid: Vec3) -> Self {
        Self {
            label,
            rotation: to_rows(&Matrix3::identity()),
            residual: 0.0,
            swapped: false,
            moving_centroid: centroid.into(),
            reference_centroid: centroid.into(),
            common_columns: 0,
            degenerate: false,
        }
    }

    /// `x ↦ R (x − c_moving) + c_reference`
    pub fn transform(&self, x: &Vec3) -> Vec3 {
        let r = self.rotation_matrix();
        r * (x - Vec3::from(self.moving_centroid)) + Vec3::from(self.reference_centroid)
    }
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn fit(label: &TransitionLabel, moving: &PseudoAtomSet, reference: &PseudoAtomSet, swapped: bool) -> Result<AlignmentResult> {
    if moving.q.len() != reference.q.len() {
        return Err(Error::Alignment(format!(
            "{label}: {} pseudo-atoms against {} in the reference",
            moving.q.len(),
            reference.q.len()
        )));
    }
    let common: Vec<bool> = moving.valid.iter().zip(&reference.valid).map(|(a, b)| *a && *b).collect();
    let count = common.iter().filter(|c| **c).count();
    if count == 0 {
        return Err(Error::Alignment(format!(
            "{label}: no pseudo-atom columns in common with the reference"
        )));
    }
    let cm = masked_mean(&moving.q, &common);
    let cr = masked_mean(&reference.q, &common);
    let p: Vec<Vec3> = moving.q.iter().zip(&common).filter(|(_, &c)| c).map(|(x, _)| x - cm).collect();
    let q: Vec<Vec3> = reference.q.iter().zip(&common).filter(|(_, &c)| c).map(|(x, _)| x - cr).collect();
    let k = kabsch(&p, &q)?;
    Ok(AlignmentResult {
        label: label.clone(),
        rotation: to_rows(&k.rotation),
        residual: k.residual,
        swapped,
        moving_centroid: cm.into(),
        reference_centroid: cr.into(),
        common_columns: count,
        degenerate: k.degenerate,
    })
}

/// Registers `moving` onto `reference`. With `allow_swap` the exchanged
/// transition (final-state positions, same `|Δf|` weights) is also tried
/// and the lower residual wins; exact ties keep the original orientation.
pub fn align_transition(
    moving: &Transition,
    delta: &FeatureDelta,
    reference: &PseudoAtomSet,
    allow_swap: bool,
) -> Result<AlignmentResult> {
    let direct = pseudo_atoms_at(moving.label.clone(), &moving.initial.positions, delta)
        .and_then(|pa| fit(&moving.label, &pa, reference, false));
    if !allow_swap {
        return direct;
    }
    let swapped = pseudo_atoms_at(moving.label.clone(), &moving.terminal.positions, delta)
        .and_then(|pa| fit(&moving.label, &pa, reference, true));
    match (direct, swapped) {
        (Ok(a), Ok(b)) => Ok(if b.residual < a.residual { b } else { a }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Applies an alignment to both states. A swapped result also exchanges
/// the states, so the returned transition's label is reversed.
pub fn apply_alignment(transition: &Transition, result: &AlignmentResult) -> Transition {
    let t = if result.swapped { transition.swapped() } else { transition.clone() };
    let move_state = |s: &AtomicState| {
        Arc::new(AtomicState {
            id: s.id.clone(),
            positions: s.positions.iter().map(|x| result.transform(x)).collect(),
            symbols: s.symbols.clone(),
        })
    };
    Transition {
        label: t.label.clone(),
        initial: move_state(&t.initial),
        terminal: move_state(&t.terminal),
    }
}

#[derive(Debug, Clone)]
pub struct AlignedMember {
    pub label: TransitionLabel,
    /// Aligned copy; the reference is passed through untouched.
    pub transition: Transition,
    pub result: AlignmentResult,
}

#[derive(Debug, Clone)]
pub struct AlignedGroup {
    /// Position of the reference (the group medoid) in `members`.
    pub reference: usize,
    pub members: Vec<AlignedMember>,
    /// Members that failed to align, with the reason.
    pub warnings: Vec<(TransitionLabel, String)>,
}

impl AlignedGroup {
    pub fn reference_member(&self) -> &AlignedMember {
        &self.members[self.reference]
    }
}

/// Aligns every member onto the group medoid. `d` is the distance matrix
/// of the group in member order. Members that cannot be aligned are left
/// out and reported as warnings.
pub fn align_group(transitions: &[Transition], deltas: &[FeatureDelta], d: &DistanceMatrix) -> Result<AlignedGroup> {
    if transitions.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if transitions.len() != deltas.len() || transitions.len() != d.len() {
        return Err(Error::Shape {
            expected: format!("{} members", transitions.len()),
            found: format!("{} deltas, {} distance rows", deltas.len(), d.len()),
        });
    }
    let all: Vec<usize> = (0..transitions.len()).collect();
    align_group_to(transitions, deltas, medoid(&all, d)?)
}

/// Aligns every member onto `transitions[mu]`.
pub fn align_group_to(transitions: &[Transition], deltas: &[FeatureDelta], mu: usize) -> Result<AlignedGroup> {
    if mu >= transitions.len() || transitions.len() != deltas.len() {
        return Err(Error::Shape {
            expected: format!("{} members with a reference among them", transitions.len()),
            found: format!("{} deltas, reference {mu}", deltas.len()),
        });
    }
    let reference_set = pseudo_atoms(&transitions[mu], &deltas[mu]);
    let outcomes: Vec<std::result::Result<AlignedMember, String>> = (0..transitions.len())
        .into_par_iter()
        .map(|i| {
            let t = &transitions[i];
            if i == mu {
                let c = reference_set.as_ref().map(|r| r.centroid).unwrap_or_else(|_| Vec3::zeros());
                return Ok(AlignedMember {
                    label: t.label.clone(),
                    transition: t.clone(),
                    result: AlignmentResult::identity(t.label.clone(), c),
                });
            }
            let reference = reference_set.as_ref().map_err(|e| format!("reference: {e}"))?;
            let r = align_transition(t, &deltas[i], reference, true).map_err(|e| e.to_string())?;
            Ok(AlignedMember {
                label: t.label.clone(),
                transition: apply_alignment(t, &r),
                result: r,
            })
        })
        .collect();
    let mut members = Vec::new();
    let mut warnings = Vec::new();
    let mut reference = 0;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(m) => {
                if i == mu {
                    reference = members.len();
                }
                members.push(m);
            }
            Err(w) => warnings.push((transitions[i].label.clone(), w)),
        }
    }
    Ok(AlignedGroup {
        reference,
        members,
        warnings,
    })
}
