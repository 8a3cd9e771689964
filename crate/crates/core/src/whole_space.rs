//! Radiating whole-space solutions from the representation formulas
//!
//! ```text
//! E =  G (*) grad phi - i omega mu0  phi * F - i/(omega eps0) div F * grad phi
//! H = -F (*) grad phi - i omega eps0 phi * G - i/(omega mu0)  div G * grad phi
//! ```
//!
//! for `(M + i omega Lambda0)(E, H) = (F, G)`, with `F` on edges and `G` on
//! faces of an obstacle-free source grid. `div F` lives on nodes and
//! `div G` on cells.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::StaggeredField;
use crate::green::{convolve_grad, convolve_scalar, cross_convolve, HelmholtzKernel, C3};
use crate::grid::{FieldKind, GridDomain, Mask};
use crate::material::{Gamma, WeightExponent};
use crate::operators::{discrete_curl, discrete_div, dual_curl, dual_div, weighted_norm, MimeticOperators};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `Lambda0 = diag(eps0 I, mu0 I)` and its swapped version.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IsotropicBlockConstants {
    pub eps0: f64,
    pub mu0: f64,
}

impl IsotropicBlockConstants {
    pub fn new(eps0: f64, mu0: f64) -> Result<Self> {
        if !(eps0 > 0.0 && mu0 > 0.0) {
            return Err(Error::Config(format!("eps0={eps0} and mu0={mu0} must be positive")));
        }
        Ok(IsotropicBlockConstants { eps0, mu0 })
    }

    pub fn lambda0(&self) -> [f64; 2] {
        [self.eps0, self.mu0]
    }

    pub fn lambda0_tilde(&self) -> [f64; 2] {
        [self.mu0, self.eps0]
    }

    /// `Xi(xi)(E, H) = (-xi x H, xi x E)`.
    pub fn xi(xi: [f64; 3], e: C3, h: C3) -> (C3, C3) {
        let xh = cross(xi, h);
        (neg(xh), cross(xi, e))
    }
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: C3) -> C3 {
    [b[2] * a[1] - b[1] * a[2], b[0] * a[2] - b[2] * a[0], b[1] * a[0] - b[0] * a[1]]
}

#[inline]
fn neg(a: C3) -> C3 {
    [-a[0], -a[1], -a[2]]
}

#[derive(Clone, Debug)]
pub struct WholeSpaceSolution {
    pub e: Vec<C3>,
    pub h: Vec<C3>,
    pub targets: Vec<[f64; 3]>,
    pub omega: Complex64,
    pub spacing: f64,
    /// Half side lengths of the source box.
    pub source_half_extent: [f64; 3],
}

fn check_sources(f: &StaggeredField, g: &StaggeredField) -> Result<()> {
    f.check_kind(FieldKind::Edge)?;
    g.check_kind(FieldKind::Face)?;
    if !Arc::ptr_eq(f.grid(), g.grid()) && **f.grid() != **g.grid() {
        return Err(Error::Shape("F and G live on different grids".into()));
    }
    if f.grid().has_obstacle() {
        return Err(Error::Geometry("whole-space sources need an obstacle-free grid".into()));
    }
    Ok(())
}

/// `div F` on nodes and `div G` on cells.
pub fn source_divergences(f: &StaggeredField, g: &StaggeredField) -> Result<(StaggeredField, StaggeredField)> {
    Ok((dual_div(f, Mask::Unmasked, Gamma::Identity)?, discrete_div(g, Mask::Unmasked)?))
}

/// `(F^, G^) = (M - i omega Lambda0~)(F, G) - (i/omega) Lambda0^{-1} (grad div F, grad div G)`.
pub fn helmholtz_rhs(f: &StaggeredField, g: &StaggeredField, kernel: &HelmholtzKernel) -> Result<(StaggeredField, StaggeredField)> {
    check_sources(f, g)?;
    let w = kernel.omega();
    if w == ZERO {
        return Err(Error::ZeroFrequency("the Helmholtz right-hand side divides by omega".into()));
    }
    let (eps0, mu0) = (kernel.eps0(), kernel.mu0());
    let i = Complex64::new(0.0, 1.0);
    let ops = MimeticOperators::new(f.grid(), Mask::Unmasked);
    let (df, dg) = source_divergences(f, g)?;
    let grad_df = ops.grad.apply(&df)?;
    let grad_dg = ops.dual_grad(Gamma::Identity)?.apply(&dg)?;
    let rot_g = dual_curl(g, Mask::Unmasked)?;
    let rot_f = discrete_curl(f, Mask::Unmasked)?;
    let mut fh = rot_g.scaled(Complex64::new(-1.0, 0.0));
    fh.axpy(-i * w * mu0, f)?;
    fh.axpy(-i / (w * eps0), &grad_df)?;
    let mut gh = rot_f;
    gh.axpy(-i * w * eps0, g)?;
    gh.axpy(-i / (w * mu0), &grad_dg)?;
    Ok((fh, gh))
}

fn add_into(acc: &mut [C3], a: Complex64, v: &[C3]) {
    for (x, y) in acc.iter_mut().zip(v) {
        for d in 0..3 {
            x[d] += a * y[d];
        }
    }
}

/// Evaluates the representation formulas at `targets`.
pub fn solve_whole_space(
    f: &StaggeredField,
    g: &StaggeredField,
    kernel: &HelmholtzKernel,
    targets: &[[f64; 3]],
) -> Result<WholeSpaceSolution> {
    check_sources(f, g)?;
    let w = kernel.omega();
    if w == ZERO {
        return Err(Error::ZeroFrequency("use static_limit_solution for omega = 0".into()));
    }
    let (eps0, mu0) = (kernel.eps0(), kernel.mu0());
    let i = Complex64::new(0.0, 1.0);
    let (df, dg) = source_divergences(f, g)?;
    let one = Complex64::new(1.0, 0.0);

    let mut e = vec![[ZERO; 3]; targets.len()];
    add_into(&mut e, one, &cross_convolve(kernel, g, targets)?);
    add_into(&mut e, -i * w * mu0, &convolve_scalar(kernel, f, targets));
    add_into(&mut e, -i / (w * eps0), &convolve_grad(kernel, &df, targets)?);

    let mut h = vec![[ZERO; 3]; targets.len()];
    add_into(&mut h, -one, &cross_convolve(kernel, f, targets)?);
    add_into(&mut h, -i * w * eps0, &convolve_scalar(kernel, g, targets));
    add_into(&mut h, -i / (w * mu0), &convolve_grad(kernel, &dg, targets)?);

    let grid = f.grid();
    let dims = grid.dims();
    let hh = grid.spacing();
    Ok(WholeSpaceSolution {
        e,
        h,
        targets: targets.to_vec(),
        omega: w,
        spacing: hh,
        source_half_extent: [dims[0] as f64 * hh / 2.0, dims[1] as f64 * hh / 2.0, dims[2] as f64 * hh / 2.0],
    })
}

/// `E0 = G (*) grad phi0 + eps0^{-1} f * grad phi0`, the termwise `omega -> 0`
/// limit with `-i omega^{-1} div F -> f`.
pub fn static_limit_solution(
    g: &StaggeredField,
    f: &StaggeredField,
    constants: IsotropicBlockConstants,
    targets: &[[f64; 3]],
) -> Result<Vec<C3>> {
    g.check_kind(FieldKind::Face)?;
    if f.kind().is_vector() {
        return Err(Error::Shape(format!("charge density must be scalar, got {}", f.kind().name())));
    }
    let dg = discrete_div(g, Mask::Unmasked)?;
    check_solenoidal(&dg, g)?;
    let k0 = HelmholtzKernel::stationary(constants.eps0, constants.mu0)?;
    let mut e = cross_convolve(&k0, g, targets)?;
    add_into(&mut e, Complex64::new(1.0 / constants.eps0, 0.0), &convolve_grad(&k0, f, targets)?);
    Ok(e)
}

/// `H0 = -F (*) grad phi0 + mu0^{-1} g * grad phi0`, so that `-rot H0 = F`
/// and `div H0 = g / mu0`.
pub fn static_limit_magnetic(
    f: &StaggeredField,
    g: &StaggeredField,
    constants: IsotropicBlockConstants,
    targets: &[[f64; 3]],
) -> Result<Vec<C3>> {
    f.check_kind(FieldKind::Edge)?;
    if g.kind().is_vector() {
        return Err(Error::Shape(format!("magnetic charge density must be scalar, got {}", g.kind().name())));
    }
    let df = dual_div(f, Mask::Unmasked, Gamma::Identity)?;
    check_solenoidal(&df, f)?;
    let k0 = HelmholtzKernel::stationary(constants.eps0, constants.mu0)?;
    let mut h = cross_convolve(&k0, f, targets)?;
    h.iter_mut().for_each(|v| *v = neg(*v));
    add_into(&mut h, Complex64::new(1.0 / constants.mu0, 0.0), &convolve_grad(&k0, g, targets)?);
    Ok(h)
}

fn check_solenoidal(div: &StaggeredField, field: &StaggeredField) -> Result<()> {
    let h = field.grid().spacing();
    let scale = field.max_abs() / h;
    let d = div.max_abs();
    if d > 1e-10 * scale {
        return Err(Error::Precondition(format!(
            "source is not discretely divergence-free (max |div| = {d:.3e}, scale {scale:.3e})"
        )));
    }
    Ok(())
}

/// Both fields of a whole-space solve as staggered fields on a target grid:
/// `E` on its edges, `H` on its faces.
pub fn solve_on_grid(
    f: &StaggeredField,
    g: &StaggeredField,
    kernel: &HelmholtzKernel,
    target: &Arc<GridDomain>,
) -> Result<(StaggeredField, StaggeredField)> {
    let te = positions(target, FieldKind::Edge);
    let tf = positions(target, FieldKind::Face);
    let mut all = te.clone();
    all.extend_from_slice(&tf);
    let sol = solve_whole_space(f, g, kernel, &all)?;
    let e = pick_components(target, FieldKind::Edge, &sol.e[..te.len()]);
    let h = pick_components(target, FieldKind::Face, &sol.h[te.len()..]);
    Ok((e, h))
}

/// Static limits `(E0, H0)` on a target grid.
pub fn static_on_grid(
    f: &StaggeredField,
    g: &StaggeredField,
    rho_e: &StaggeredField,
    rho_m: &StaggeredField,
    constants: IsotropicBlockConstants,
    target: &Arc<GridDomain>,
) -> Result<(StaggeredField, StaggeredField)> {
    let te = positions(target, FieldKind::Edge);
    let tf = positions(target, FieldKind::Face);
    let e = static_limit_solution(g, rho_e, constants, &te)?;
    let h = static_limit_magnetic(f, rho_m, constants, &tf)?;
    Ok((pick_components(target, FieldKind::Edge, &e), pick_components(target, FieldKind::Face, &h)))
}

pub fn positions(grid: &GridDomain, kind: FieldKind) -> Vec<[f64; 3]> {
    (0..grid.len(kind)).map(|i| grid.position(kind, i)).collect()
}

/// Staggered field whose entry `i` is component `direction(i)` of `v[i]`.
pub fn pick_components(grid: &Arc<GridDomain>, kind: FieldKind, v: &[C3]) -> StaggeredField {
    let vals = v.iter().enumerate().map(|(i, x)| x[grid.direction(kind, i)]).collect();
    StaggeredField::from_values(grid, kind, vals).expect("length matches the grid")
}

/// Relative first-order residual `(M_h + i omega Lambda0)(E, H) - (F, G)` on
/// the interior of the target grid, with `(F, G)` sampled there.
pub fn maxwell_residual(
    e: &StaggeredField,
    h: &StaggeredField,
    f: &StaggeredField,
    g: &StaggeredField,
    omega: Complex64,
    constants: IsotropicBlockConstants,
) -> Result<f64> {
    let grid = e.grid();
    let i = Complex64::new(0.0, 1.0);
    let mut re = dual_curl(h, Mask::Unmasked)?.scaled(Complex64::new(-1.0, 0.0));
    re.axpy(i * omega * constants.eps0, e)?;
    re.axpy(Complex64::new(-1.0, 0.0), f)?;
    let mut rh = discrete_curl(e, Mask::Unmasked)?;
    rh.axpy(i * omega * constants.mu0, h)?;
    rh.axpy(Complex64::new(-1.0, 0.0), g)?;
    let interior_e = re.support_restricted(|k| grid.is_interior(FieldKind::Edge, k));
    let interior_h = rh.support_restricted(|k| grid.is_interior(FieldKind::Face, k));
    let fi = f.support_restricted(|k| grid.is_interior(FieldKind::Edge, k));
    let gi = g.support_restricted(|k| grid.is_interior(FieldKind::Face, k));
    let t = WeightExponent::ZERO;
    let num = (weighted_norm(&interior_e, t, Gamma::Identity)?.powi(2) + weighted_norm(&interior_h, t, Gamma::Identity)?.powi(2)).sqrt();
    let den = (weighted_norm(&fi, t, Gamma::Identity)?.powi(2) + weighted_norm(&gi, t, Gamma::Identity)?.powi(2)).sqrt();
    if den == 0.0 {
        return Ok(num);
    }
    Ok(num / den)
}

/// `sqrt(sum rho^{2t} |v|^2 w)` over a staggered field pair.
pub fn pair_norm(e: &StaggeredField, h: &StaggeredField, t: WeightExponent) -> Result<f64> {
    Ok((weighted_norm(e, t, Gamma::Identity)?.powi(2) + weighted_norm(h, t, Gamma::Identity)?.powi(2)).sqrt())
}

/// `||(E, H)||_{R_t}^2 = ||(E, H)||_t^2 + ||(rot E, rot H)||_{t+1}^2` on the
/// target grid (rotations restricted to its interior).
pub fn rot_norm(e: &StaggeredField, h: &StaggeredField, t: WeightExponent) -> Result<f64> {
    let grid = e.grid();
    let ce = discrete_curl(e, Mask::Unmasked)?.support_restricted(|k| grid.is_interior(FieldKind::Face, k));
    let ch = dual_curl(h, Mask::Unmasked)?.support_restricted(|k| grid.is_interior(FieldKind::Edge, k));
    let t1 = WeightExponent::new(t.value() + 1.0)?;
    let base = pair_norm(e, h, t)?;
    let rot = pair_norm(&ch, &ce, t1)?;
    Ok((base * base + rot * rot).sqrt())
}

/// Radiation-condition diagnostic on concentric spheres.
#[derive(Clone, Debug, Serialize)]
pub struct RadiationReport {
    pub radii: Vec<f64>,
    /// Sphere `L^2` norm of the defect, `sqrt(4 pi r^2 mean |d|^2)`.
    pub defects: Vec<f64>,
    /// Minus the log-log slope of `defects` against `radii`.
    pub decay_exponent: f64,
}

/// Silver-Mueller defect `(eps0 E + sqrt(eps0 mu0) xi x H, mu0 H - sqrt(eps0 mu0) xi x E)`,
/// which vanishes to leading order for fields built from the
/// `exp(-i k r)` kernel. `samples[j]` holds `(x, E(x), H(x))` on sphere `j`.
pub fn radiation_defect(samples: &[Vec<([f64; 3], C3, C3)>], constants: IsotropicBlockConstants) -> Result<RadiationReport> {
    let s = (constants.eps0 * constants.mu0).sqrt();
    let mut radii = Vec::with_capacity(samples.len());
    let mut defects = Vec::with_capacity(samples.len());
    for sphere in samples {
        if sphere.is_empty() {
            return Err(Error::Config("empty sphere sample".into()));
        }
        let r = sphere.iter().map(|(x, _, _)| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()).sum::<f64>() / sphere.len() as f64;
        let mut acc = 0.0;
        for (x, e, h) in sphere {
            let rr = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let xi = [x[0] / rr, x[1] / rr, x[2] / rr];
            let xh = cross(xi, *h);
            let xe = cross(xi, *e);
            for d in 0..3 {
                acc += (e[d] * constants.eps0 + xh[d] * s).norm_sqr();
                acc += (h[d] * constants.mu0 - xe[d] * s).norm_sqr();
            }
        }
        radii.push(r);
        defects.push((4.0 * std::f64::consts::PI * r * r * acc / sphere.len() as f64).sqrt());
    }
    let decay_exponent = if defects.iter().all(|&d| d > 0.0) && radii.len() >= 2 { -loglog_slope(&radii, &defects) } else { f64::INFINITY };
    Ok(RadiationReport { radii, defects, decay_exponent })
}

/// Quasi-uniform points on the sphere of radius `r` (Fibonacci lattice).
pub fn sphere_points(r: f64, n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            [r * rho * phi.cos(), r * rho * phi.sin(), r * z]
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize)]
pub struct AbsorptionRow {
    pub delta: f64,
    pub difference: f64,
}

/// `||(E, H)_{omega + i delta} - (E, H)_omega||_t` on the target grid for each
/// `delta`.
pub fn limiting_absorption_sweep(
    f: &StaggeredField,
    g: &StaggeredField,
    omega: f64,
    deltas: &[f64],
    constants: IsotropicBlockConstants,
    target: &Arc<GridDomain>,
    t: WeightExponent,
) -> Result<Vec<AbsorptionRow>> {
    if omega == 0.0 {
        return Err(Error::ZeroFrequency("limiting absorption needs a real frequency omega != 0".into()));
    }
    if deltas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Config("deltas must be strictly descending".into()));
    }
    let k = HelmholtzKernel::new(Complex64::new(omega, 0.0), constants.eps0, constants.mu0)?;
    let (e0, h0) = solve_on_grid(f, g, &k, target)?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let difference = if d == 0.0 {
            0.0
        } else {
            let kd = HelmholtzKernel::new(Complex64::new(omega, d), constants.eps0, constants.mu0)?;
            let (e, h) = solve_on_grid(f, g, &kd, target)?;
            pair_norm(&e.sub(&e0)?, &h.sub(&h0)?, t)?
        };
        rows.push(AbsorptionRow { delta: d, difference });
    }
    Ok(rows)
}
