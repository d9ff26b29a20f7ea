//! Group displacement field: kernel-interpolated displacements of every
//! aligned member, sampled at the reference's initial atom positions, their
//! mean and a per-position coherence score in `[0, 1]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::AlignedGroup;
use crate::bonds::{median, nearest_neighbor_distances};
use crate::error::{Error, Result};
use crate::model::{Transition, TransitionLabel, Vec3};

/// Kernel weight sums below this are treated as underflow.
pub const MIN_KERNEL_SUM: f64 = 1e-300;
/// Terms whose `|d̃|² + |d_t|²` falls below this contribute zero.
pub const NEUTRAL_DENOMINATOR: f64 = 1e-20;

/// Gaussian-weighted mean displacement of `transition` at `p`. The flag is
/// set when every weight underflows, in which case the result is zero.
pub fn sample_displacement(transition: &Transition, p: &Vec3, sigma: f64) -> (Vec3, bool) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut sum = Vec3::zeros();
    let mut wsum = 0.0;
    for (x0, x1) in transition.initial.positions.iter().zip(&transition.terminal.positions) {
        let w = (-(p - x0).norm_squared() * inv).exp();
        sum += (x1 - x0) * w;
        wsum += w;
    }
    if wsum < MIN_KERNEL_SUM {
        (Vec3::zeros(), true)
    } else {
        (sum / wsum, false)
    }
}

/// `(1/N) Σ_t d̃·d_t / (|d̃|² + |d_t|²) + ½`. Positive terms are evaluated
/// as `½ − |d̃ − d_t|² / (2(|d̃|² + |d_t|²))`, so samples that equal the
/// mean up to rounding contribute exactly ½.
pub fn correlation(mean: &Vec3, samples: &[Vec3]) -> f64 {
    if samples.is_empty() {
        return 0.5;
    }
    let mm = mean.norm_squared();
    let total: f64 = samples
        .iter()
        .map(|d| {
            let den = mm + d.norm_squared();
            if den < NEUTRAL_DENOMINATOR {
                0.0
            } else {
                let dot = mean.dot(d);
                if dot > 0.0 {
                    0.5 - (mean - d).norm_squared() / (2.0 * den)
                } else {
                    dot / den
                }
            }
        })
        .sum();
    (total / samples.len() as f64 + 0.5).clamp(0.0, 1.0)
}

/// Half the median nearest-neighbour distance of the positions.
pub fn default_sigma(positions: &[Vec3]) -> Result<f64> {
    if positions.len() < 2 {
        return Err(Error::InvalidArgument(
            "kernel width needs at least two atoms".into(),
        ));
    }
    let mut nn = nearest_neighbor_distances(positions);
    let s = 0.5 * median(&mut nn);
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::CoincidentAtoms(0, 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDisplacementField {
    pub group: usize,
    pub reference: TransitionLabel,
    pub members: Vec<TransitionLabel>,
    pub sigma: f64,
    pub positions: Vec<Vec3>,
    /// `d̃(p_i)`
    pub mean: Vec<Vec3>,
    /// `samples[t][i] = d_t(p_i)`
    pub samples: Vec<Vec<Vec3>>,
    pub corr: Vec<f64>,
    /// Count of `(member, position)` samples whose kernel underflowed.
    pub underflows: usize,
    pub warnings: Vec<String>,
}

/// Field of `members` sampled at `reference`'s initial positions.
pub fn build_field_from(
    group: usize,
    reference: &Transition,
    members: &[Transition],
    sigma: Option<f64>,
) -> Result<GroupDisplacementField> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let positions = reference.initial.positions.clone();
    let sigma = match sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidArgument(format!("kernel width {s} must be > 0"))),
        None => default_sigma(&positions)?,
    };
    let per_member: Vec<(Vec<Vec3>, usize)> = members
        .par_iter()
        .map(|t| {
            let mut under = 0;
            let s = positions
                .iter()
                .map(|p| {
                    let (d, u) = sample_displacement(t, p, sigma);
                    under += u as usize;
                    d
                })
                .collect();
            (s, under)
        })
        .collect();
    let underflows = per_member.iter().map(|(_, u)| u).sum();
    let samples: Vec<Vec<Vec3>> = per_member.into_iter().map(|(s, _)| s).collect();
    let n = members.len() as f64;
    let (mean, corr): (Vec<Vec3>, Vec<f64>) = (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let column: Vec<Vec3> = samples.iter().map(|s| s[i]).collect();
            let m = column.iter().fold(Vec3::zeros(), |acc, d| acc + d) / n;
            (m, correlation(&m, &column))
        })
        .unzip();
    Ok(GroupDisplacementField {
        group,
        reference: reference.label.clone(),
        members: members.iter().map(|t| t.label.clone()).collect(),
        sigma,
        positions,
        mean,
        samples,
        corr,
        underflows,
        warnings: Vec::new(),
    })
}

/// Field of an aligned group on its reference. Alignment failures are
/// carried over as warnings.
pub fn build_field(group_id: usize, group: &AlignedGroup, sigma: Option<f64>) -> Result<GroupDisplacementField> {
    let members: Vec<Transition> = group.members.iter().map(|m| m.transition.clone()).collect();
    let reference = &group.reference_member().transition;
    let mut field = build_field_from(group_id, reference, &members, sigma)?;
    field.warnings = group
        .warnings
        .iter()
        .map(|(l, w)| format!("{l} excluded: {w}"))
        .collect();
    Ok(field)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RenderElement {
    /// Coherent position: sphere coloured by `corr`, arrow along `d̃`.
    Colored {
        atom: usize,
        position: [f64; 3],
        corr: f64,
        arrow: [f64; 3],
    },
    /// Position below the threshold, drawn as a small gray sphere.
    Gray { atom: usize, position: [f64; 3] },
}

impl RenderElement {
    pub fn is_colored(&self) -> bool {
        matches!(self, RenderElement::Colored { .. })
    }
}

pub fn threshold_filter(field: &GroupDisplacementField, tau: f64) -> Vec<RenderElement> {
    field
        .positions
        .iter()
        .zip(&field.corr)
        .zip(&field.mean)
        .enumerate()
        .map(|(atom, ((p, &c), d))| {
            if c >= tau {
                RenderElement::Colored {
                    atom,
                    position: (*p).into(),
                    corr: c,
                    arrow: (*d).into(),
                }
            } else {
                RenderElement::Gray {
                    atom,
                    position: (*p).into(),
                }
            }
        })
        .collect()
}

/// `(1 − s)·S₀ + s·S₁` of a transition.
pub fn interpolate(transition: &Transition, s: f64) -> Vec<Vec3> {
    if s == 0.0 {
        return transition.initial.positions.clone();
    }
    if s == 1.0 {
        return transition.terminal.positions.clone();
    }
    transition
        .initial
        .positions
        .iter()
        .zip(&transition.terminal.positions)
        .map(|(a, b)| a * (1.0 - s) + b * s)
        .collect()
}

pub fn interpolate_reference(group: &AlignedGroup, s: f64) -> Vec<Vec3> {
    interpolate(&group.reference_member().transition, s)
}
