//! Scalar Helmholtz fundamental solution and the volume convolutions built
//! on it.
//!
//! `phi(x) = -exp(-i k r) / (4 pi r)` with `k = omega sqrt(eps0 mu0)`. The
//! incoming variant uses `exp(+i k r)` instead and serves as a control.
//!
//! Convolutions use the midpoint rule over the staggered source locations,
//! each source carrying its lumped volume weight. When a target coincides
//! with a source, the `1/r` part is integrated exactly over the ball of the
//! same volume and the smooth remainder is replaced by its limit; the odd
//! gradient singularity contributes nothing.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::StaggeredField;
use crate::grid::FieldKind;

pub type C3 = [Complex64; 3];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Outgoing,
    Incoming,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelmholtzKernel {
    omega: Complex64,
    eps0: f64,
    mu0: f64,
    k: Complex64,
    wave: Wave,
}

impl HelmholtzKernel {
    pub fn new(omega: Complex64, eps0: f64, mu0: f64) -> Result<Self> {
        Self::with_wave(omega, eps0, mu0, Wave::Outgoing)
    }

    /// The conjugated kernel `-exp(+i k r) / (4 pi r)`.
    pub fn incoming(omega: Complex64, eps0: f64, mu0: f64) -> Result<Self> {
        Self::with_wave(omega, eps0, mu0, Wave::Incoming)
    }

    pub fn with_wave(omega: Complex64, eps0: f64, mu0: f64, wave: Wave) -> Result<Self> {
        if !(omega.im >= 0.0) || !omega.re.is_finite() || !omega.im.is_finite() {
            return Err(Error::Config(format!("frequency must lie in the closed upper half plane, got {omega}")));
        }
        if !(eps0 > 0.0 && mu0 > 0.0) {
            return Err(Error::Config(format!("eps0 and mu0 must be positive, got {eps0}, {mu0}")));
        }
        Ok(HelmholtzKernel { omega, eps0, mu0, k: omega * (eps0 * mu0).sqrt(), wave })
    }

    /// The static kernel `-1/(4 pi r)`.
    pub fn stationary(eps0: f64, mu0: f64) -> Result<Self> {
        Self::new(ZERO, eps0, mu0)
    }

    pub fn omega(&self) -> Complex64 {
        self.omega
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn wavenumber(&self) -> Complex64 {
        self.k
    }

    pub fn wave(&self) -> Wave {
        self.wave
    }

    /// `-i k` for outgoing, `+i k` for incoming: `phi = -exp(a r)/(4 pi r)`.
    #[inline]
    fn exponent(&self) -> Complex64 {
        match self.wave {
            Wave::Outgoing => Complex64::new(0.0, -1.0) * self.k,
            Wave::Incoming => Complex64::new(0.0, 1.0) * self.k,
        }
    }

    #[inline]
    fn phi_r(&self, r: f64) -> Complex64 {
        -(self.exponent() * r).exp() / (4.0 * PI * r)
    }

    /// `phi` and `g` with `grad phi(x) = g x` at distance `r`.
    #[inline]
    fn phi_and_g(&self, r: f64) -> (Complex64, Complex64) {
        let p = self.phi_r(r);
        (p, p * (self.exponent() - 1.0 / r) / r)
    }

    pub fn eval_phi(&self, x: [f64; 3]) -> Result<Complex64> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Singularity);
        }
        Ok(self.phi_r(r))
    }

    /// `-phi (i k + 1/r) x/r` for the outgoing kernel.
    pub fn eval_grad_phi(&self, x: [f64; 3]) -> Result<C3> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Singularity);
        }
        let (_, g) = self.phi_and_g(r);
        Ok([g * x[0], g * x[1], g * x[2]])
    }

    /// Self-cell value of `phi` per unit source density over a cell of
    /// volume `h^3`: `-singular_cell_weight(h) + (limit of the smooth part) h^3`.
    fn self_cell(&self, h: f64) -> Complex64 {
        let h3 = h * h * h;
        Complex64::new(-singular_cell_weight(h), 0.0) - self.exponent() * h3 / (4.0 * PI)
    }
}

/// `int_{|y| < R} 1/(4 pi |y|) dy = R^2/2` for the ball of volume `h^3`.
pub fn singular_cell_weight(h: f64) -> f64 {
    let r = (3.0 * h * h * h / (4.0 * PI)).cbrt();
    r * r / 2.0
}

#[inline]
fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Nonzero point sources extracted from a staggered field.
#[derive(Clone, Debug)]
pub struct SourceSet {
    spacing: f64,
    lower: [f64; 3],
    vector: bool,
    half: Vec<[i64; 3]>,
    pos: Vec<[f64; 3]>,
    comp: Vec<u8>,
    /// Value times lumped volume.
    charge: Vec<Complex64>,
}

impl SourceSet {
    pub fn from_field(f: &StaggeredField) -> Self {
        let g = f.grid();
        let kind = f.kind();
        let mut s = SourceSet {
            spacing: g.spacing(),
            lower: g.lower_corner(),
            vector: kind.is_vector(),
            half: Vec::new(),
            pos: Vec::new(),
            comp: Vec::new(),
            charge: Vec::new(),
        };
        for (i, v) in f.values().iter().enumerate() {
            if *v == ZERO {
                continue;
            }
            let w = g.geometric_weight(kind, i);
            if w == 0.0 {
                continue;
            }
            s.half.push(g.half_coords(kind, i));
            s.pos.push(g.position(kind, i));
            s.comp.push(g.direction(kind, i) as u8);
            s.charge.push(v * w);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.charge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charge.is_empty()
    }

    /// Integer half-step coordinates of `x` on this source lattice, if any.
    fn lattice_coords(&self, x: [f64; 3]) -> Option<[i64; 3]> {
        let half = self.spacing / 2.0;
        let mut out = [0i64; 3];
        for a in 0..3 {
            let t = (x[a] - self.lower[a]) / half;
            let r = t.round();
            if (t - r).abs() > 1e-9 * (1.0 + r.abs()) {
                return None;
            }
            out[a] = r as i64;
        }
        Some(out)
    }
}

/// `phi` and `g` tabulated by squared distance in half-step units.
struct LatticeTable {
    phi: Vec<Complex64>,
    g: Vec<Complex64>,
}

impl LatticeTable {
    fn new(kernel: &HelmholtzKernel, half: f64, max_m: usize) -> Self {
        let mut phi = vec![ZERO; max_m + 1];
        let mut g = vec![ZERO; max_m + 1];
        for m in 1..=max_m {
            let (p, gg) = kernel.phi_and_g((m as f64).sqrt() * half);
            phi[m] = p;
            g[m] = gg;
        }
        LatticeTable { phi, g }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Potential,
    Gradient,
    Cross,
}

fn max_sq_distance(src: &SourceSet, targets: &[Option<[i64; 3]>]) -> usize {
    if src.is_empty() {
        return 0;
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for p in src.half.iter().chain(targets.iter().flatten()) {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (0..3).map(|a| ((hi[a] - lo[a]) as usize).pow(2)).sum()
}

fn convolve(kernel: &HelmholtzKernel, src: &SourceSet, targets: &[[f64; 3]], mode: Mode) -> Vec<C3> {
    if src.is_empty() {
        return vec![[ZERO; 3]; targets.len()];
    }
    let lattice: Vec<Option<[i64; 3]>> = targets.iter().map(|&x| src.lattice_coords(x)).collect();
    let half = src.spacing / 2.0;
    let table = if lattice.iter().any(|t| t.is_some()) {
        Some(LatticeTable::new(kernel, half, max_sq_distance(src, &lattice)))
    } else {
        None
    };
    let self_density = kernel.self_cell(src.spacing) / src.spacing.powi(3);
    targets
        .par_iter()
        .zip(lattice.par_iter())
        .map(|(&x, lc)| {
            let mut acc = [ZERO; 3];
            for s in 0..src.len() {
                let (phi, g, d) = match lc {
                    Some(t) => {
                        let hs = src.half[s];
                        let d = [t[0] - hs[0], t[1] - hs[1], t[2] - hs[2]];
                        let m = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as usize;
                        if m == 0 {
                            if mode == Mode::Potential {
                                let c = if src.vector { src.comp[s] as usize } else { 0 };
                                acc[c] += src.charge[s] * self_density;
                            }
                            continue;
                        }
                        let t = table.as_ref().unwrap();
                        (t.phi[m], t.g[m], [d[0] as f64 * half, d[1] as f64 * half, d[2] as f64 * half])
                    }
                    None => {
                        let p = src.pos[s];
                        let d = [x[0] - p[0], x[1] - p[1], x[2] - p[2]];
                        let r = norm(d);
                        if r < 1e-12 * src.spacing {
                            if mode == Mode::Potential {
                                let c = if src.vector { src.comp[s] as usize } else { 0 };
                                acc[c] += src.charge[s] * self_density;
                            }
                            continue;
                        }
                        let (p, g) = kernel.phi_and_g(r);
                        (p, g, d)
                    }
                };
                let q = src.charge[s];
                match mode {
                    Mode::Potential => {
                        let c = if src.vector { src.comp[s] as usize } else { 0 };
                        acc[c] += q * phi;
                    }
                    Mode::Gradient => {
                        let qg = q * g;
                        acc[0] += qg * d[0];
                        acc[1] += qg * d[1];
                        acc[2] += qg * d[2];
                    }
                    Mode::Cross => {
                        // F x grad phi with F = q e_c
                        let qg = q * g;
                        match src.comp[s] {
                            0 => {
                                acc[1] -= qg * d[2];
                                acc[2] += qg * d[1];
                            }
                            1 => {
                                acc[0] += qg * d[2];
                                acc[2] -= qg * d[0];
                            }
                            _ => {
                                acc[0] -= qg * d[1];
                                acc[1] += qg * d[0];
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

/// `phi * F` componentwise at the targets. Scalar fields fill slot 0.
pub fn convolve_scalar(kernel: &HelmholtzKernel, f: &StaggeredField, targets: &[[f64; 3]]) -> Vec<C3> {
    let src = SourceSet::from_field(f);
    convolve_sources(kernel, &src, targets, Mode::Potential)
}

/// `s * grad phi` for a scalar (node or cell) field `s`.
pub fn convolve_grad(kernel: &HelmholtzKernel, s: &StaggeredField, targets: &[[f64; 3]]) -> Result<Vec<C3>> {
    if s.kind().is_vector() {
        return Err(Error::Shape(format!("gradient convolution needs a scalar field, got {}", s.kind().name())));
    }
    let src = SourceSet::from_field(s);
    Ok(convolve_sources(kernel, &src, targets, Mode::Gradient))
}

/// `F (*) grad phi = (F2*d3 phi - F3*d2 phi, F3*d1 phi - F1*d3 phi, F1*d2 phi - F2*d1 phi)`.
pub fn cross_convolve(kernel: &HelmholtzKernel, f: &StaggeredField, targets: &[[f64; 3]]) -> Result<Vec<C3>> {
    if !f.kind().is_vector() {
        return Err(Error::Shape(format!("cross convolution needs a vector field, got {}", f.kind().name())));
    }
    let src = SourceSet::from_field(f);
    Ok(convolve_sources(kernel, &src, targets, Mode::Cross))
}

fn convolve_sources(kernel: &HelmholtzKernel, src: &SourceSet, targets: &[[f64; 3]], mode: Mode) -> Vec<C3> {
    convolve(kernel, src, targets, mode)
}

/// Reads target points from a CSV file of `x,y,z` rows; lines starting with
/// `#` and a non-numeric header line are skipped.
pub fn load_targets_csv(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
        match nums {
            Ok(v) if v.len() == 3 => out.push([v[0], v[1], v[2]]),
            Ok(v) => return Err(Error::Format(format!("line {}: expected 3 columns, got {}", ln + 1, v.len()))),
            Err(_) if out.is_empty() && ln == 0 => continue,
            Err(e) => return Err(Error::Format(format!("line {}: {e}", ln + 1))),
        }
    }
    Ok(out)
}

/// Positions of all present entities of `kind` on the field's grid.
pub fn staggered_targets(f: &StaggeredField, kind: FieldKind) -> Vec<[f64; 3]> {
    let g = f.grid();
    (0..g.len(kind)).map(|i| g.position(kind, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDomain;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn static_value_at_unit_distance() {
        let k = HelmholtzKernel::stationary(2.0, 3.0).unwrap();
        let v = k.eval_phi([0.0, 1.0, 0.0]).unwrap();
        assert!((v - c(-0.0795774715459477, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn unit_frequency_value() {
        let k = HelmholtzKernel::new(c(1.0, 0.0), 1.0, 1.0).unwrap();
        let v = k.eval_phi([1.0, 0.0, 0.0]).unwrap();
        // -exp(-i)/(4 pi), evaluated independently
        let expect = c(-(1.0f64).cos(), (1.0f64).sin()) / (4.0 * PI);
        assert!((v - expect).norm() < 1e-16);
        assert!((v - c(-0.0429959, 0.0669621)).norm() < 1e-6);
    }

    #[test]
    fn origin_is_singular() {
        let k = HelmholtzKernel::new(c(1.0, 0.0), 1.0, 1.0).unwrap();
        assert!(matches!(k.eval_phi([0.0; 3]), Err(Error::Singularity)));
        assert!(matches!(k.eval_grad_phi([0.0; 3]), Err(Error::Singularity)));
    }

    #[test]
    fn lower_half_plane_is_rejected() {
        assert!(HelmholtzKernel::new(c(1.0, -0.1), 1.0, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let k = HelmholtzKernel::new(c(0.7, 0.2), 1.5, 0.8).unwrap();
        let x = [1.2, -0.9, 1.3];
        let x = {
            let r = norm(x);
            [2.0 * x[0] / r, 2.0 * x[1] / r, 2.0 * x[2] / r]
        };
        let g = k.eval_grad_phi(x).unwrap();
        let step = 1e-5;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += step;
            xm[a] -= step;
            let fd = (k.eval_phi(xp).unwrap() - k.eval_phi(xm).unwrap()) / (2.0 * step);
            assert!((fd - g[a]).norm() <= 1e-6 * g.iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn static_gradient_closed_form_and_parity() {
        let k = HelmholtzKernel::stationary(1.0, 1.0).unwrap();
        let x = [0.3, -1.1, 0.7];
        let r = norm(x);
        let g = k.eval_grad_phi(x).unwrap();
        let gm = k.eval_grad_phi([-x[0], -x[1], -x[2]]).unwrap();
        for a in 0..3 {
            assert!((g[a].re - x[a] / (4.0 * PI * r.powi(3))).abs() < 1e-15);
            assert!((g[a] + gm[a]).norm() < 1e-16);
        }
    }

    #[test]
    fn singular_weight_values() {
        assert!((singular_cell_weight(1.0) - 0.192450).abs() < 1e-4);
        assert!((singular_cell_weight(2.0) - 4.0 * singular_cell_weight(1.0)).abs() < 1e-14);
        assert!(singular_cell_weight(1e-6) < 1e-12);
    }

    #[test]
    fn modulus_identity_off_the_real_axis() {
        // |phi| 4 pi r = exp(Im(k) r): exactly 1 on the real axis
        let real = HelmholtzKernel::new(c(1.3, 0.0), 1.0, 1.0).unwrap();
        let damped = HelmholtzKernel::new(c(1.3, 0.2), 1.0, 1.0).unwrap();
        for r in [1.0, 2.0, 4.0, 8.0] {
            let x = [r, 0.0, 0.0];
            assert!((real.eval_phi(x).unwrap().norm() * 4.0 * PI * r - 1.0).abs() < 1e-14);
            let m = damped.eval_phi(x).unwrap().norm() * 4.0 * PI * r;
            assert!((m - (0.2 * r).exp()).abs() < 1e-12 * m);
        }
    }

    fn block_field(n: usize, h: f64, kind: FieldKind, blk: usize) -> StaggeredField {
        let g = Arc::new(GridDomain::whole_space([n; 3], h, [0.0; 3]).unwrap());
        let lo = (n - blk) / 2;
        StaggeredField::from_fn(&g, kind, |x, _| {
            let inside = (0..3).all(|a| {
                let i = ((x[a] / h) + n as f64 / 2.0 - 0.5).round() as i64;
                i >= lo as i64 && i < (lo + blk) as i64
            });
            c(if inside { 1.0 } else { 0.0 }, 0.0)
        })
    }

    #[test]
    fn far_field_of_a_uniform_block() {
        let h = 0.25;
        let f = block_field(8, h, FieldKind::Cell, 2);
        let vol = 8.0 * h.powi(3);
        let k = HelmholtzKernel::stationary(1.0, 1.0).unwrap();
        let diam = 2.0 * h * 3f64.sqrt();
        let d = 5.0 * diam;
        let v = convolve_scalar(&k, &f, &[[d, 0.0, 0.0]])[0][0];
        let expect = -vol / (4.0 * PI * d);
        assert!((v.re - expect).abs() <= 0.02 * expect.abs());
    }

    #[test]
    fn point_mass_gradient() {
        let g = Arc::new(GridDomain::whole_space([3, 3, 3], 1.0, [0.0; 3]).unwrap());
        let s = StaggeredField::from_fn(&g, FieldKind::Cell, |x, _| c(if norm(x) < 1e-9 { 1.0 } else { 0.0 }, 0.0));
        let k = HelmholtzKernel::stationary(1.0, 1.0).unwrap();
        let x = [3.0, 4.0, 1.0];
        let v = convolve_grad(&k, &s, &[x]).unwrap()[0];
        let r = norm(x);
        for a in 0..3 {
            let e = x[a] / (4.0 * PI * r.powi(3));
            assert!((v[a].re - e).abs() <= 0.02 * e.abs().max(1e-3 / r.powi(2)));
        }
    }

    #[test]
    fn lattice_and_direct_paths_agree() {
        let f = block_field(6, 0.5, FieldKind::Edge, 4);
        let k = HelmholtzKernel::new(c(0.8, 0.1), 1.2, 0.9).unwrap();
        // cell centre, face centre, and an edge that is itself a source
        let on_lattice = [[0.25, 0.25, 0.25], [1.0, -0.75, 0.25], [0.25, 0.0, 0.5]];
        let nudged: Vec<[f64; 3]> = on_lattice.iter().map(|x| [x[0] + 1e-7, x[1], x[2]]).collect();
        let a = convolve_scalar(&k, &f, &on_lattice);
        let b = convolve_scalar(&k, &f, &nudged);
        let ga = cross_convolve(&k, &f, &on_lattice).unwrap();
        let gb = cross_convolve(&k, &f, &nudged).unwrap();
        for i in 0..3 {
            for d in 0..3 {
                // nudged targets do not see the self-cell correction
                if i < 2 {
                    assert!((a[i][d] - b[i][d]).norm() < 1e-6, "{i} {d}");
                }
                assert!((ga[i][d] - gb[i][d]).norm() < 1e-5, "{i} {d}");
            }
        }
    }

    #[test]
    fn self_cell_uses_ball_correction() {
        let g = Arc::new(GridDomain::whole_space([1, 1, 1], 2.0, [0.0; 3]).unwrap());
        let s = StaggeredField::from_fn(&g, FieldKind::Cell, |_, _| c(1.0, 0.0));
        let k = HelmholtzKernel::stationary(1.0, 1.0).unwrap();
        let v = convolve_scalar(&k, &s, &[[0.0; 3]])[0][0];
        assert!((v.re + singular_cell_weight(2.0)).abs() < 1e-14);
        let v2 = convolve_scalar(&k, &s, &[[1e-14, 0.0, 0.0]])[0][0];
        assert!((v2.re + singular_cell_weight(2.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_field_gives_zero() {
        let g = Arc::new(GridDomain::whole_space([2, 2, 2], 1.0, [0.0; 3]).unwrap());
        let f = StaggeredField::zeros(&g, FieldKind::Face);
        let k = HelmholtzKernel::new(c(1.0, 0.0), 1.0, 1.0).unwrap();
        assert!(convolve_scalar(&k, &f, &[[3.0, 0.0, 0.0]])[0].iter().all(|v| *v == ZERO));
        assert!(cross_convolve(&k, &f, &[[3.0, 0.0, 0.0]]).unwrap()[0].iter().all(|v| *v == ZERO));
    }

    #[test]
    fn csv_targets_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "x,y,z\n# comment\n1,2,3\n0.5, -1, 2e-1\n").unwrap();
        let t = load_targets_csv(&p).unwrap();
        assert_eq!(t, vec![[1.0, 2.0, 3.0], [0.5, -1.0, 0.2]]);
        std::fs::write(&p, "1,2\n").unwrap();
        assert!(load_targets_csv(&p).is_err());
    }
}
