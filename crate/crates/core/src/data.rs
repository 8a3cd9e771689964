//! Seeded smooth source data.
//!
//! Admissible sets are linear subspaces, so membership is enforced by
//! construction: divergence-free data are rotations of random potentials.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::field::StaggeredField;
use crate::grid::{FieldKind, GridDomain, Mask};
use crate::material::Gamma;
use crate::operators::MimeticOperators;

/// `(1 - |x - c|^2 / R^2)^4` inside the ball, zero outside (C^3).
#[inline]
pub fn bump(x: [f64; 3], c: [f64; 3], radius: f64) -> f64 {
    let r2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - r2).powi(4)
    }
}

/// A finite sum of bumps with complex amplitudes per component.
#[derive(Clone, Debug)]
pub struct BumpSum {
    pub centers: Vec<[f64; 3]>,
    pub radius: f64,
    /// `amplitudes[m][d]` for bump `m`, component `d`.
    pub amplitudes: Vec<[Complex64; 3]>,
}

impl BumpSum {
    /// `count` bumps of radius `radius` with centres within `spread` of the
    /// origin; the whole sum is supported in the ball of radius
    /// `radius + spread`.
    pub fn random(count: usize, radius: f64, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers = Vec::with_capacity(count);
        let mut amplitudes = Vec::with_capacity(count);
        for _ in 0..count {
            let c = loop {
                let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if c[0] * c[0] + c[1] * c[1] + c[2] * c[2] <= 1.0 {
                    break [c[0] * spread, c[1] * spread, c[2] * spread];
                }
            };
            centers.push(c);
            let mut a = [Complex64::new(0.0, 0.0); 3];
            for v in a.iter_mut() {
                *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            amplitudes.push(a);
        }
        BumpSum { centers, radius, amplitudes }
    }

    pub fn support_radius(&self) -> f64 {
        self.radius + self.centers.iter().map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: [f64; 3], dir: usize) -> Complex64 {
        self.centers
            .iter()
            .zip(&self.amplitudes)
            .map(|(c, a)| a[dir] * bump(x, *c, self.radius))
            .sum()
    }

    pub fn sample(&self, grid: &Arc<GridDomain>, kind: FieldKind) -> StaggeredField {
        StaggeredField::from_fn(grid, kind, |x, d| self.eval(x, d))
    }
}

/// The continuous bump sums behind [`bump_data`], supported in the ball of
/// radius `radius`.
pub fn bump_sources(radius: f64, seed: u64) -> (BumpSum, BumpSum) {
    let spread = radius / 4.0;
    let r = radius - spread;
    (BumpSum::random(3, r, spread, seed), BumpSum::random(3, r, spread, seed.wrapping_add(0x9e37_79b9)))
}

/// Generic smooth data `(F, G)` on edges and faces.
pub fn bump_data(grid: &Arc<GridDomain>, radius: f64, seed: u64) -> (StaggeredField, StaggeredField) {
    let (bf, bg) = bump_sources(radius, seed);
    (bf.sample(grid, FieldKind::Edge), bg.sample(grid, FieldKind::Face))
}

/// Discretely divergence-free `(F, G)`: `F` is the rotation of a face
/// potential onto edges, `G` the curl of an edge potential, both supported
/// in the ball of radius `radius` (plus one cell).
pub fn solenoidal_data(grid: &Arc<GridDomain>, radius: f64, seed: u64) -> Result<(StaggeredField, StaggeredField)> {
    let h = grid.spacing();
    let spread = radius / 4.0;
    let r = (radius - spread - h).max(h);
    let a = BumpSum::random(3, r, spread, seed).sample(grid, FieldKind::Face);
    let b = BumpSum::random(3, r, spread, seed.wrapping_add(0x5851_f42d)).sample(grid, FieldKind::Edge);
    let ops = MimeticOperators::new(grid, Mask::Unmasked);
    let f = ops.dual_curl(Gamma::Identity, Gamma::Identity)?.apply(&a)?;
    let g = ops.curl.apply(&b)?;
    Ok((f, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{discrete_div, dual_div};

    #[test]
    fn bump_is_compact_and_peaks_at_centre() {
        assert_eq!(bump([0.0; 3], [0.0; 3], 1.0), 1.0);
        assert_eq!(bump([1.0, 0.0, 0.0], [0.0; 3], 1.0), 0.0);
        assert_eq!(bump([0.0, 2.0, 0.0], [0.0; 3], 1.0), 0.0);
    }

    #[test]
    fn seeded_data_is_reproducible() {
        let g = Arc::new(GridDomain::whole_space([8; 3], 0.25, [0.0; 3]).unwrap());
        let (f1, _) = bump_data(&g, 0.8, 3);
        let (f2, _) = bump_data(&g, 0.8, 3);
        let (f3, _) = bump_data(&g, 0.8, 4);
        assert!(f1.values().iter().zip(f2.values()).all(|(a, b)| a == b));
        assert!(f1.values().iter().zip(f3.values()).any(|(a, b)| a != b));
    }

    #[test]
    fn solenoidal_data_is_divergence_free() {
        let g = Arc::new(GridDomain::whole_space([10; 3], 0.2, [0.0; 3]).unwrap());
        let (f, gg) = solenoidal_data(&g, 0.9, 7).unwrap();
        assert!(f.max_abs() > 0.1);
        let df = dual_div(&f, Mask::Unmasked, Gamma::Identity).unwrap();
        let dg = discrete_div(&gg, Mask::Unmasked).unwrap();
        assert!(df.max_abs() < 1e-12 * f.max_abs() / 0.2);
        assert!(dg.max_abs() < 1e-12 * gg.max_abs() / 0.2);
        // support stays in the ball
        for (i, v) in f.values().iter().enumerate() {
            let x = g.position(FieldKind::Edge, i);
            if (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() > 0.9 + 0.4 {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
    }
}
