//! Per-atom Lagrangian strain and superquadric glyph parameters.
//!
//! The deformation gradient of atom `i` is the least-squares linear map
//! taking its initial-state bond vectors to the same bonds in the final
//! state, `F = A·D⁻¹` with `A = Σ Δx′ Δxᵀ` and `D = Σ Δx Δxᵀ`.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion};
use rayon::prelude::*;
use serde::Serialize;

use crate::bonds::BondSet;
use crate::error::{Error, Result};
use crate::model::{Transition, TransitionLabel, Vec3};

/// `D` counts as rank deficient when its smallest eigenvalue falls below
/// this fraction of the largest.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Below this deviator norm the mode `K3` is undefined and set to zero.
pub const MODE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub f: Matrix3<f64>,
    pub neighbors: usize,
    pub degenerate: bool,
}

pub fn deformation_gradient(atom: usize, transition: &Transition, bonds: &BondSet) -> Gradient {
    let x0 = &transition.initial.positions;
    let x1 = &transition.terminal.positions;
    let nb = bonds.neighbors(atom);
    let mut a = Matrix3::zeros();
    let mut d = Matrix3::zeros();
    for &(j, _) in nb {
        let dx = x0[j] - x0[atom];
        let dxp = x1[j] - x1[atom];
        a += dxp * dx.transpose();
        d += dx * dx.transpose();
    }
    let identity = Gradient {
        f: Matrix3::identity(),
        neighbors: nb.len(),
        degenerate: true,
    };
    if nb.len() < 3 {
        return identity;
    }
    let eig = d.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= RANK_TOLERANCE * hi {
        return identity;
    }
    match d.try_inverse() {
        Some(inv) => Gradient {
            f: a * inv,
            neighbors: nb.len(),
            degenerate: false,
        },
        None => identity,
    }
}

/// `E = ½ (FᵀF − I)`
pub fn lagrangian_strain(f: &Matrix3<f64>) -> Matrix3<f64> {
    let e = 0.5 * (f.transpose() * f - Matrix3::identity());
    0.5 * (e + e.transpose())
}

pub fn deviator(e: &Matrix3<f64>) -> Matrix3<f64> {
    e - Matrix3::identity() * (e.trace() / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Invariants {
    /// Trace: volumetric change.
    pub k1: f64,
    /// Deviator norm: magnitude of shape change.
    pub k2: f64,
    /// Deviator mode in `[-1, 1]`.
    pub k3: f64,
}

pub fn invariants(e: &Matrix3<f64>) -> Invariants {
    let k1 = e.trace();
    let dev = deviator(e);
    let k2 = dev.norm();
    let k3 = if k2 < MODE_THRESHOLD {
        0.0
    } else {
        (3.0 * 6f64.sqrt() * dev.determinant() / (k2 * k2 * k2)).clamp(-1.0, 1.0)
    };
    Invariants { k1, k2, k3 }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomStrain {
    pub atom: usize,
    /// Row-major.
    pub f: [[f64; 3]; 3],
    pub e: [[f64; 3]; 3],
    /// Eigenvalues of `E`, descending.
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors matching `eigenvalues`, forming a right-handed frame.
    pub eigenvectors: [[f64; 3]; 3],
    pub invariants: Invariants,
    pub neighbors: usize,
    pub degenerate: bool,
}

impl AtomStrain {
    pub fn strain(&self) -> Matrix3<f64> {
        from_rows(&self.e)
    }
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Eigenvalues (descending) and a right-handed eigenvector frame.
pub fn eigen_frame(e: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let eig = SymmetricEigen::new(*e);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.map(|i| eig.eigenvalues[i]);
    let mut frame = Matrix3::from_columns(&idx.map(|i| eig.eigenvectors.column(i).into_owned()));
    if frame.determinant() < 0.0 {
        frame.set_column(2, &(-frame.column(2)));
    }
    (values, frame)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrainField {
    pub label: TransitionLabel,
    pub atoms: Vec<AtomStrain>,
}

impl StrainField {
    pub fn max_abs_k1(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.invariants.k1.abs())
            .fold(0.0, f64::max)
    }
}

/// Strain of every atom using `bonds` (the initial-state neighbour sets).
pub fn strain_field(transition: &Transition, bonds: &BondSet) -> Result<StrainField> {
    let n = transition.atom_count();
    if bonds.atom_count() != n {
        return Err(Error::Shape {
            expected: format!("bonds over {n} atoms"),
            found: format!("{} atoms", bonds.atom_count()),
        });
    }
    let atoms = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = deformation_gradient(i, transition, bonds);
            let e = lagrangian_strain(&g.f);
            let (values, frame) = eigen_frame(&e);
            AtomStrain {
                atom: i,
                f: to_rows(&g.f),
                e: to_rows(&e),
                eigenvalues: values,
                eigenvectors: to_rows(&frame.transpose()),
                invariants: invariants(&e),
                neighbors: g.neighbors,
                degenerate: g.degenerate,
            }
        })
        .collect();
    Ok(StrainField {
        label: transition.label.clone(),
        atoms,
    })
}

/// Constants shaping the glyphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlyphParams {
    pub base_radius: f64,
    /// Exaggeration of the semi-axes by eigenvalue magnitude.
    pub gamma: f64,
    /// `K2` at which the shape reaches full anisotropy.
    pub anisotropy_scale: f64,
    /// Edge sharpness of the superquadric family.
    pub sharpness: f64,
    /// Both `K2` and `|K1|` below this yield a gray sphere.
    pub threshold: f64,
    /// Radius factor of gray spheres.
    pub gray_scale: f64,
}

impl Default for GlyphParams {
    fn default() -> Self {
        Self {
            base_radius: 0.35,
            gamma: 4.0,
            anisotropy_scale: 0.05,
            sharpness: 3.0,
            threshold: 1e-6,
            gray_scale: 0.5,
        }
    }
}

/// Shape of a glyph: `Rod` and `Disk` are the two anisotropic limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GlyphShape {
    Sphere,
    Rod,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperquadricGlyph {
    pub atom: usize,
    pub center: [f64; 3],
    /// Rotation from glyph space to world space as `[x, y, z, w]`. Glyph
    /// `x` is the symmetry axis.
    pub quaternion: [f64; 4],
    pub semi_axes: [f64; 3],
    /// `[alpha, beta]`: `alpha` shapes the cross-section around the
    /// symmetry axis, `beta` the profile along it. `[1, 1]` is an ellipsoid.
    pub exponents: [f64; 2],
    pub shape: GlyphShape,
    /// Signed colour scalar (`K1`): positive is extension.
    pub color: f64,
    pub alpha: f64,
    pub degenerate: bool,
}

/// Glyph for one atom. `k1_max` is the largest `|K1|` of the ensemble
/// being displayed and normalises the opacity.
pub fn glyph(strain: &AtomStrain, center: Vec3, k1_max: f64, params: &GlyphParams) -> SuperquadricGlyph {
    let inv = strain.invariants;
    let alpha = if k1_max > 0.0 { (inv.k1.abs() / k1_max).min(1.0) } else { 0.0 };
    if strain.degenerate || (inv.k2 < params.threshold && inv.k1.abs() < params.threshold) {
        let r = params.base_radius * params.gray_scale;
        return SuperquadricGlyph {
            atom: strain.atom,
            center: center.into(),
            quaternion: [0.0, 0.0, 0.0, 1.0],
            semi_axes: [r; 3],
            exponents: [1.0, 1.0],
            shape: GlyphShape::Sphere,
            color: 0.0,
            alpha: 0.0,
            degenerate: true,
        };
    }

    // the symmetry axis follows the deviator eigenvalue of largest magnitude
    let mean = inv.k1 / 3.0;
    let ev = strain.eigenvalues;
    let frame = from_rows(&strain.eigenvectors).transpose();
    let dominant = (0..3)
        .max_by(|&a, &b| (ev[a] - mean).abs().total_cmp(&(ev[b] - mean).abs()).then(b.cmp(&a)))
        .unwrap();
    let mut order = [dominant, 0, 0];
    let rest: Vec<usize> = (0..3).filter(|&i| i != dominant).collect();
    order[1] = rest[0];
    order[2] = rest[1];
    let mut axes = Matrix3::from_columns(&order.map(|i| frame.column(i).into_owned()));
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(axes));
    let semi_axes = order.map(|i| params.base_radius * (1.0 + params.gamma * ev[i].abs()));

    let a = (inv.k2 / params.anisotropy_scale).clamp(0.0, 1.0);
    let c_rod = a * (-inv.k3).max(0.0);
    let c_disk = a * inv.k3.max(0.0);
    let s = params.sharpness;
    let (exponents, shape) = if a == 0.0 || (c_rod == 0.0 && c_disk == 0.0) {
        ([1.0, 1.0], GlyphShape::Sphere)
    } else if c_rod >= c_disk {
        ([(1.0 - c_disk).powf(s), (1.0 - c_rod).powf(s)], GlyphShape::Rod)
    } else {
        ([(1.0 - c_rod).powf(s), (1.0 - c_disk).powf(s)], GlyphShape::Disk)
    };
    SuperquadricGlyph {
        atom: strain.atom,
        center: center.into(),
        quaternion: [q.i, q.j, q.k, q.w],
        semi_axes,
        exponents,
        shape,
        color: inv.k1,
        alpha,
        degenerate: false,
    }
}

/// Glyphs of a whole transition, centred on the initial positions.
pub fn glyph_set(field: &StrainField, transition: &Transition, k1_max: f64, params: &GlyphParams) -> Vec<SuperquadricGlyph> {
    field
        .atoms
        .iter()
        .map(|s| glyph(s, transition.initial.positions[s.atom], k1_max, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strain() {
        let inv = invariants(&Matrix3::zeros());
        assert_eq!((inv.k1, inv.k2, inv.k3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pure_dilation() {
        let inv = invariants(&(Matrix3::identity() * 0.02));
        assert!((inv.k1 - 0.06).abs() < 1e-15);
        assert!(inv.k2 < 1e-15);
        assert_eq!(inv.k3, 0.0);
    }

    #[test]
    fn mode_extremes() {
        let s = 0.01;
        let up = invariants(&Matrix3::from_diagonal(&Vec3::new(2.0 * s, -s, -s)));
        assert!((up.k2 - s * 6f64.sqrt()).abs() < 1e-15);
        assert!((up.k3 - 1.0).abs() < 1e-12);
        let down = invariants(&Matrix3::from_diagonal(&Vec3::new(s, s, -2.0 * s)));
        assert!((down.k3 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniaxial_stretch_strain() {
        let f = Matrix3::from_diagonal(&Vec3::new(1.1, 1.0, 1.0));
        let e = lagrangian_strain(&f);
        assert!((e[(0, 0)] - 0.105).abs() < 1e-15);
        assert!(e.iter().enumerate().all(|(i, v)| i == 0 || v.abs() < 1e-15));
    }
}
