//! Static solutions with moment constraints.
//!
//! The compactly supported sets `B1` (electric, edge fields in the kernel of
//! the `Gamma1`-masked curl) and `B2` (magnetic, face fields in the kernel
//! of the dual curl) come from the harmonic fields of the collar
//! `Omega_rhat`, whose cut sphere is labeled `Gamma1` resp. `Gamma2`, extended
//! by zero. Their harmonic projections fix the otherwise free harmonic part
//! of a static solution.

use std::sync::Arc;

use faer::{c64, Mat};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::StaggeredField;
use crate::grid::{BoundaryLabel, FieldKind, GridDomain};
use crate::linalg::{conjugate_gradient, dense_solve, modified_gram_schmidt, RankDecision};
use crate::material::MaterialLaw;
use crate::maxwell::{assemble, harmonic_fields, MaxwellOperatorMatrix, Side};
use crate::operators::{dot_w, norm_w};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Relative tolerance of the inner conjugate-gradient solves.
pub const SOLVE_TOL: f64 = 1e-14;
/// Rank threshold of the step tests and Gram checks.
pub const STEP_TOL: f64 = 1e-8;
/// Tolerance of the data constraints (divergence and moment orthogonality).
pub const DIV_TOL: f64 = 1e-10;
pub const MOMENT_TOL: f64 = 1e-8;

fn mul(v: &[Complex64], d: &[f64]) -> Vec<Complex64> {
    v.iter().zip(d).map(|(a, b)| a * b).collect()
}

fn div(v: &[Complex64], d: &[f64]) -> Vec<Complex64> {
    v.iter().zip(d).map(|(a, b)| a / b).collect()
}

fn sub(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn euclid(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn max_abs(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn cg(apply: impl Fn(&[Complex64]) -> Vec<Complex64>, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = rhs.len();
    Ok(conjugate_gradient(apply, rhs, SOLVE_TOL, 50 * (n + 10))?.0)
}

fn material(op: &MaxwellOperatorMatrix, side: Side) -> &[f64] {
    match side {
        Side::Electric => &op.a_e,
        Side::Magnetic => &op.a_f,
    }
}

fn node_weights(op: &MaxwellOperatorMatrix) -> Vec<f64> {
    let w = op.domain().geometric_weights(FieldKind::Node);
    op.nodes.iter().map(|&i| w[i]).collect()
}

/// Removes the gradient part of a part vector: the `eps`- (resp. `mu`-)
/// orthogonal projection onto the complement of `grad H^1_{Gamma1}` (resp.
/// of the `Gamma2`-Dirichlet dual gradients `W_F^{-1} D^T W_C`).
fn remove_gradients(op: &MaxwellOperatorMatrix, side: Side, x: &[Complex64]) -> Result<Vec<Complex64>> {
    let a = material(op, side);
    let ax = mul(x, a);
    match side {
        Side::Electric => {
            let gt = op.grad.transpose();
            let rhs = gt.apply(&ax);
            if euclid(&rhs) == 0.0 {
                return Ok(x.to_vec());
            }
            let w = cg(|v| gt.apply(&mul(&op.grad.apply(v), a)), &rhs)?;
            Ok(sub(x, &op.grad.apply(&w)))
        }
        Side::Magnetic => {
            let dt = op.div.transpose();
            let p = |v: &[Complex64]| div(&dt.apply(&mul(v, &op.w_c)), &op.w_f);
            let pt = |y: &[Complex64]| mul(&op.div.apply(&div(y, &op.w_f)), &op.w_c);
            let rhs = pt(&ax);
            if euclid(&rhs) == 0.0 {
                return Ok(x.to_vec());
            }
            let v = cg(|v| pt(&mul(&p(v), a)), &rhs)?;
            Ok(sub(x, &p(&v)))
        }
    }
}

fn rotation_defect(op: &MaxwellOperatorMatrix, side: Side, x: &[Complex64]) -> f64 {
    let h = op.domain().spacing();
    let scale = max_abs(x) / h;
    let r = match side {
        Side::Electric => op.curl.apply(x),
        Side::Magnetic => op.curl.transpose().apply(&mul(x, &op.w_f)).into_iter().zip(&op.w_e).map(|(v, w)| v / w).collect(),
    };
    if scale == 0.0 {
        0.0
    } else {
        max_abs(&r) / scale
    }
}

/// `X` minus its best gradient approximation. Edge fields are treated as
/// electric, face fields as magnetic; the input must be rotation-free.
pub fn project_along_gradients(x: &StaggeredField, op: &MaxwellOperatorMatrix) -> Result<StaggeredField> {
    let side = match x.kind() {
        FieldKind::Edge => Side::Electric,
        FieldKind::Face => Side::Magnetic,
        k => return Err(Error::Shape(format!("cannot project a {} field", k.name()))),
    };
    let v = part(op, side, x)?;
    let d = rotation_defect(op, side, &v);
    if d > DIV_TOL {
        return Err(Error::Precondition(format!("field is not rotation-free (relative rotation {d:.3e})")));
    }
    Ok(field(op, side, &remove_gradients(op, side, &v)?))
}

fn part(op: &MaxwellOperatorMatrix, side: Side, x: &StaggeredField) -> Result<Vec<Complex64>> {
    match side {
        Side::Electric => op.edge_part(x),
        Side::Magnetic => op.face_part(x),
    }
}

fn field(op: &MaxwellOperatorMatrix, side: Side, v: &[Complex64]) -> StaggeredField {
    match side {
        Side::Electric => op.edge_field(v),
        Side::Magnetic => op.face_field(v),
    }
}

/// The compactly supported moment fields of one side.
#[derive(Clone, Debug)]
pub struct BasisSetB {
    pub side: Side,
    /// Elements on the full domain, zero outside the collar.
    pub elements: Vec<StaggeredField>,
    /// `gram_with_harmonics[(j, l)] = <H_j, B_l>_gamma` against the
    /// orthonormal harmonic basis of the domain.
    pub gram_with_harmonics: Mat<c64>,
    pub d: usize,
    pub collar: Arc<GridDomain>,
    pub rhat: f64,
    /// Rank decision of the collar harmonic-field computation.
    pub collar_rank: RankDecision,
    /// Rank decision of the domain harmonic-field computation.
    pub domain_rank: RankDecision,
    parts: Vec<Vec<Complex64>>,
    domain_harmonics: Vec<Vec<Complex64>>,
}

fn gram(op: &MaxwellOperatorMatrix, side: Side, harm: &[Vec<Complex64>], parts: &[Vec<Complex64>]) -> Mat<c64> {
    let a = material(op, side);
    Mat::from_fn(harm.len(), parts.len(), |j, l| dot_w(&harm[j], &parts[l], a))
}

/// Builds `B1` (electric side) or `B2` (magnetic side) from the collar.
#[allow(non_snake_case)]
pub fn build_B(op: &MaxwellOperatorMatrix, side: Side) -> Result<BasisSetB> {
    let domain = op.domain();
    let label = match side {
        Side::Electric => BoundaryLabel::Gamma1,
        Side::Magnetic => BoundaryLabel::Gamma2,
    };
    let collar = Arc::new(domain.collar(label)?);
    let cop = assemble(&collar, op.law())?;
    let ch = harmonic_fields(&cop, side)?;
    // extension by zero; face values keep their flux W_F H across the cut
    let parts: Vec<Vec<Complex64>> = match side {
        Side::Electric => ch.basis.iter().map(|b| op.edge_part(&relocate(&cop.edge_field(b), domain))).collect::<Result<_>>()?,
        Side::Magnetic => {
            let wd = domain.geometric_weights(FieldKind::Face);
            ch.basis
                .iter()
                .map(|b| {
                    let mut f = cop.face_field(b);
                    for (&i, _) in cop.faces.iter().zip(b) {
                        let wc = collar.geometric_weight(FieldKind::Face, i);
                        f.values_mut()[i] *= wc / wd[i];
                    }
                    op.face_part(&relocate(&f, domain))
                })
                .collect::<Result<_>>()?
        }
    };
    let dh = harmonic_fields(op, side)?;
    let g = gram(op, side, &dh.basis, &parts);
    Ok(BasisSetB {
        side,
        elements: parts.iter().map(|p| field(op, side, p)).collect(),
        gram_with_harmonics: g,
        d: parts.len(),
        rhat: collar.inner_radius(),
        collar,
        collar_rank: ch.rank,
        domain_rank: dh.rank,
        parts,
        domain_harmonics: dh.basis,
    })
}

fn relocate(f: &StaggeredField, grid: &Arc<GridDomain>) -> StaggeredField {
    StaggeredField::from_values(grid, f.kind(), f.values().to_vec()).expect("same box layout")
}

impl BasisSetB {
    pub fn parts(&self) -> &[Vec<Complex64>] {
        &self.parts
    }

    pub fn domain_harmonics(&self) -> &[Vec<Complex64>] {
        &self.domain_harmonics
    }

    /// A copy with element `l` replaced by zero (negative control).
    pub fn with_zeroed(&self, op: &MaxwellOperatorMatrix, l: usize) -> BasisSetB {
        let mut b = self.clone();
        if l < b.parts.len() {
            b.parts[l].iter_mut().for_each(|v| *v = ZERO);
            b.elements[l] = field(op, b.side, &b.parts[l]);
            b.gram_with_harmonics = gram(op, b.side, &b.domain_harmonics, &b.parts);
        }
        b
    }

    /// `sigma_min(Gram) / max_l |B_l|`, zero when degenerate.
    pub fn gram_ratio(&self, op: &MaxwellOperatorMatrix) -> Result<f64> {
        if self.d == 0 && self.domain_harmonics.is_empty() {
            return Ok(1.0);
        }
        if self.gram_with_harmonics.nrows() != self.gram_with_harmonics.ncols() {
            return Ok(0.0);
        }
        let a = material(op, self.side);
        let bmax = self.parts.iter().map(|p| norm_w(p, a)).fold(0.0, f64::max);
        if bmax == 0.0 {
            return Ok(0.0);
        }
        let sv = self.gram_with_harmonics.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(sv.last().copied().unwrap_or(0.0) / bmax)
    }

    /// Largest `|<rot X, B_l>|` over seeded random `X` with the opposite
    /// boundary condition, relative to `|rot X| |B_l|`.
    pub fn rot_range_defect(&self, op: &MaxwellOperatorMatrix, probes: usize, seed: u64) -> f64 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let (r, w) = match self.side {
                Side::Electric => {
                    let x = crate::operators::random_vector(&vec![true; op.n_f()], &mut rng);
                    let r: Vec<Complex64> = op.curl.transpose().apply(&mul(&x, &op.w_f)).into_iter().zip(&op.w_e).map(|(v, w)| v / w).collect();
                    (r, &op.w_e)
                }
                Side::Magnetic => {
                    let x = crate::operators::random_vector(&vec![true; op.n_e()], &mut rng);
                    (op.curl.apply(&x), &op.w_f)
                }
            };
            let rn = norm_w(&r, w);
            for p in &self.parts {
                let pn = norm_w(p, w);
                if rn > 0.0 && pn > 0.0 {
                    worst = worst.max(dot_w(&r, p, w).norm() / (rn * pn));
                }
            }
        }
        worst
    }
}

/// Outcome of the three construction steps.
#[derive(Clone, Debug, Serialize)]
pub struct StepsReport {
    pub side: Side,
    pub step1_injective: bool,
    pub step1_ratio: f64,
    pub step2_injective: bool,
    pub step2_ratio: f64,
    pub step3_nondegenerate: bool,
    pub step3_ratio: f64,
    /// `(|B|, dim H(collar), dim H(domain))`.
    pub dims: (usize, usize, usize),
    pub dims_consistent: bool,
    pub ambiguous_rank: bool,
}

impl StepsReport {
    pub fn passed(&self) -> bool {
        self.step1_injective && self.step2_injective && self.step3_nondegenerate && self.dims_consistent
    }
}

/// `sigma_min(gamma^{1/2} P) / sigma_max(gamma^{1/2} X)` for column sets `P`
/// (after a map) and `X` (before it).
fn injectivity_ratio(after: &[Vec<Complex64>], before: &[Vec<Complex64>], w: &[f64]) -> Result<f64> {
    if after.is_empty() {
        return Ok(1.0);
    }
    let m = |cols: &[Vec<Complex64>]| Mat::from_fn(w.len(), cols.len(), |i, j| cols[j][i] * w[i].sqrt());
    let pa = m(after);
    let pb = m(before);
    if pa.nrows() < pa.ncols() {
        return Ok(0.0);
    }
    let sa = pa.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let sb = pb.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let smax = sb.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0.0);
    }
    Ok(sa[pa.ncols() - 1] / smax)
}

/// Checks the three steps for the sets of `b` on the domain of `op`:
/// (1) the harmonic projection of the extended collar basis is injective,
/// (2) the collar harmonic projection of the restricted domain basis is
/// injective, (3) the Gram matrix against the harmonic fields is regular.
pub fn check_steps(op: &MaxwellOperatorMatrix, b: &BasisSetB) -> Result<StepsReport> {
    let side = b.side;
    let a = material(op, side);
    let projected: Vec<Vec<Complex64>> = b.parts.iter().map(|p| remove_gradients(op, side, p)).collect::<Result<_>>()?;
    let step1_ratio = injectivity_ratio(&projected, &b.parts, a)?;

    let cop = assemble(&b.collar, op.law())?;
    let ca = material(&cop, side);
    let restricted: Vec<Vec<Complex64>> = b
        .domain_harmonics
        .iter()
        .map(|h| {
            let f = relocate(&field(op, side, h), &b.collar);
            part(&cop, side, &f)
        })
        .collect::<Result<_>>()?;
    let rproj: Vec<Vec<Complex64>> = restricted.iter().map(|r| remove_gradients(&cop, side, r)).collect::<Result<_>>()?;
    let step2_ratio = injectivity_ratio(&rproj, &restricted, ca)?;

    let step3_ratio = b.gram_ratio(op)?;
    let collar_dim = b.d;
    let dims = (b.parts.len(), collar_dim, b.domain_harmonics.len());
    Ok(StepsReport {
        side,
        step1_injective: step1_ratio > STEP_TOL,
        step1_ratio,
        step2_injective: step2_ratio > STEP_TOL,
        step2_ratio,
        step3_nondegenerate: step3_ratio > STEP_TOL,
        step3_ratio,
        dims,
        dims_consistent: dims.0 == dims.1 && dims.1 == dims.2,
        ambiguous_rank: b.collar_rank.ambiguous || b.domain_rank.ambiguous,
    })
}

/// Builds the set of `side` and checks the steps.
pub fn verify_steps(domain: &Arc<GridDomain>, law: &MaterialLaw, side: Side) -> Result<(BasisSetB, StepsReport)> {
    let op = assemble(domain, law)?;
    let b = build_B(&op, side)?;
    let r = check_steps(&op, &b)?;
    Ok((b, r))
}

/// Data `(G, f, zeta)` of the electrostatic problem
/// `rot E = G`, `div eps E = f`, `<E, B1_l>_eps = zeta_l`.
///
/// `G` lives on faces, `f` on nodes (where the discrete `div eps E` lives).
#[derive(Clone, Debug)]
pub struct StaticProblemData {
    pub g: StaggeredField,
    pub f: StaggeredField,
    pub zeta: Vec<Complex64>,
}

/// Data `(F, g, theta)` of the magnetostatic problem
/// `rot H = F`, `div mu H = g`, `<H, B2_l>_mu = theta_l`, with `rot` the
/// dual rotation carrying the `Gamma2` condition.
#[derive(Clone, Debug)]
pub struct MagnetostaticData {
    pub f: StaggeredField,
    pub g: StaggeredField,
    pub theta: Vec<Complex64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StaticResiduals {
    pub rotation: f64,
    pub divergence: f64,
    pub moments: f64,
}

impl StaticResiduals {
    pub fn max(&self) -> f64 {
        self.rotation.max(self.divergence).max(self.moments)
    }
}

#[derive(Clone, Debug)]
pub struct StaticSolution {
    pub field: StaggeredField,
    pub residuals: StaticResiduals,
    /// Condition number of the harmonic Gram matrix.
    pub gram_condition: f64,
}

/// Prepared static solver: both moment sets and the orthonormalized
/// harmonic projections.
#[derive(Clone, Debug)]
pub struct StaticSolver<'a> {
    op: &'a MaxwellOperatorMatrix,
    pub b1: BasisSetB,
    pub b2: BasisSetB,
    h1: Vec<Vec<Complex64>>,
    h2: Vec<Vec<Complex64>>,
    gram1: Mat<c64>,
    gram2: Mat<c64>,
    cond1: f64,
    cond2: f64,
    w_n: Vec<f64>,
}

fn orthonormal_projections(op: &MaxwellOperatorMatrix, b: &BasisSetB) -> Result<(Vec<Vec<Complex64>>, Mat<c64>, f64)> {
    let a = material(op, b.side);
    let hs: Vec<Vec<Complex64>> = b.parts.iter().map(|p| remove_gradients(op, b.side, p)).collect::<Result<_>>()?;
    let (qs, _) = modified_gram_schmidt(&hs, a);
    // m[(l, j)] = <Q_j, B_l>
    let m = Mat::from_fn(qs.len(), qs.len(), |l, j| dot_w(&qs[j], &b.parts[l], a));
    let cond = if qs.is_empty() {
        1.0
    } else {
        let sv = m.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let (smax, smin) = (sv[0], sv[sv.len() - 1]);
        let bmax = b.parts.iter().map(|p| norm_w(p, a)).fold(0.0, f64::max);
        if !(smin > STEP_TOL * bmax) {
            return Err(Error::Config(format!("harmonic Gram matrix is singular (sigma_min {smin:.3e})")));
        }
        smax / smin
    };
    Ok((qs, m, cond))
}

impl<'a> StaticSolver<'a> {
    pub fn new(op: &'a MaxwellOperatorMatrix) -> Result<Self> {
        let b1 = build_B(op, Side::Electric)?;
        let b2 = build_B(op, Side::Magnetic)?;
        Self::with_sets(op, b1, b2)
    }

    pub fn with_sets(op: &'a MaxwellOperatorMatrix, b1: BasisSetB, b2: BasisSetB) -> Result<Self> {
        let (h1, gram1, cond1) = orthonormal_projections(op, &b1)?;
        let (h2, gram2, cond2) = orthonormal_projections(op, &b2)?;
        Ok(StaticSolver { op, b1, b2, h1, h2, gram1, gram2, cond1, cond2, w_n: node_weights(op) })
    }

    pub fn op(&self) -> &MaxwellOperatorMatrix {
        self.op
    }

    /// Discrete `div eps E` on the `Gamma1`-free nodes.
    pub fn div_eps(&self, e: &[Complex64]) -> Vec<Complex64> {
        let gt = self.op.grad.transpose();
        gt.apply(&mul(e, &self.op.a_e)).into_iter().zip(&self.w_n).map(|(v, w)| -v / w).collect()
    }

    /// Discrete `div mu H` on the included cells.
    pub fn div_mu(&self, h: &[Complex64]) -> Vec<Complex64> {
        let op = self.op;
        op.div.apply(&div(&mul(h, &op.a_f), &op.w_f))
    }

    /// Dual rotation `W_E^{-1} C^T W_F H`.
    pub fn rot_dual(&self, h: &[Complex64]) -> Vec<Complex64> {
        let op = self.op;
        div(&op.curl.transpose().apply(&mul(h, &op.w_f)), &op.w_e)
    }

    pub fn moments(&self, side: Side, x: &[Complex64]) -> Vec<Complex64> {
        let (b, a) = match side {
            Side::Electric => (&self.b1, &self.op.a_e),
            Side::Magnetic => (&self.b2, &self.op.a_f),
        };
        b.parts.iter().map(|p| dot_w(x, p, a)).collect()
    }

    fn check_moment_orthogonal(&self, x: &[Complex64], b: &BasisSetB, w: &[f64], what: &str) -> Result<()> {
        let xn = norm_w(x, w);
        for p in &b.parts {
            let pn = norm_w(p, w);
            let d = dot_w(x, p, w).norm();
            if xn > 0.0 && pn > 0.0 && d > MOMENT_TOL * xn * pn {
                return Err(Error::Constraint(format!("{what} is not orthogonal to the moment fields"), d / (xn * pn)));
            }
        }
        Ok(())
    }

    fn harmonic_correction(&self, side: Side, base: &[Complex64], target: &[Complex64]) -> Result<Vec<Complex64>> {
        let (qs, m, d) = match side {
            Side::Electric => (&self.h1, &self.gram1, self.b1.d),
            Side::Magnetic => (&self.h2, &self.gram2, self.b2.d),
        };
        if target.len() != d {
            return Err(Error::Shape(format!("{} moments given for {d} moment fields", target.len())));
        }
        let mut out = base.to_vec();
        if d == 0 {
            return Ok(out);
        }
        let have = self.moments(side, base);
        let rhs: Vec<Complex64> = target.iter().zip(&have).map(|(t, h)| t - h).collect();
        let c = dense_solve(m, &rhs);
        for (cj, q) in c.iter().zip(qs) {
            for (o, v) in out.iter_mut().zip(q) {
                *o += cj * v;
            }
        }
        Ok(out)
    }

    /// Electrostatic solve.
    pub fn solve_electric(&self, data: &StaticProblemData) -> Result<StaticSolution> {
        let op = self.op;
        data.g.check_kind(FieldKind::Face)?;
        data.f.check_kind(FieldKind::Node)?;
        let g = op.face_part(&data.g)?;
        let f: Vec<Complex64> = op.nodes.iter().map(|&i| data.f.values()[i]).collect();
        let h = op.domain().spacing();
        let dg = op.div.apply(&g);
        if max_abs(&dg) > DIV_TOL * max_abs(&g) / h {
            return Err(Error::Constraint("G is not discretely divergence-free".into(), max_abs(&dg) * h / max_abs(&g)));
        }
        self.check_moment_orthogonal(&g, &self.b2, &op.w_f, "G")?;

        // E1 = A^{-1} C^T z with C A^{-1} C^T z = G (minimum eps-norm preimage)
        let ct = op.curl.transpose();
        let z = cg(|v| op.curl.apply(&div(&ct.apply(v), &op.a_e)), &g)?;
        let e1 = div(&ct.apply(&z), &op.a_e);
        // E2 = grad w with -G^T A G w = W_N f
        let gt = op.grad.transpose();
        let rhs: Vec<Complex64> = f.iter().zip(&self.w_n).map(|(v, w)| -v * w).collect();
        let w = cg(|v| gt.apply(&mul(&op.grad.apply(v), &op.a_e)), &rhs)?;
        let e2 = op.grad.apply(&w);
        let ehat: Vec<Complex64> = e1.iter().zip(&e2).map(|(a, b)| a + b).collect();
        let e = self.harmonic_correction(Side::Electric, &ehat, &data.zeta)?;

        let data_norm = norm_w(&g, &op.w_f) + norm_w(&f, &self.w_n) + euclid(&data.zeta);
        let rel = |r: &[Complex64], d: &[Complex64], w: &[f64]| -> f64 {
            let dn = norm_w(d, w);
            norm_w(&sub(r, d), w) / if dn > 0.0 { dn } else { 1.0 + data_norm }
        };
        let mom = self.moments(Side::Electric, &e);
        let residuals = StaticResiduals {
            rotation: rel(&op.curl.apply(&e), &g, &op.w_f),
            divergence: rel(&self.div_eps(&e), &f, &self.w_n),
            moments: mom.iter().zip(&data.zeta).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / (1.0 + data_norm),
        };
        Ok(StaticSolution { field: op.edge_field(&e), residuals, gram_condition: self.cond1 })
    }

    /// Magnetostatic solve (roles of the boundary parts and of `eps`, `mu`
    /// swapped).
    pub fn solve_magnetic(&self, data: &MagnetostaticData) -> Result<StaticSolution> {
        let op = self.op;
        data.f.check_kind(FieldKind::Edge)?;
        data.g.check_kind(FieldKind::Cell)?;
        let fv = op.edge_part(&data.f)?;
        let g: Vec<Complex64> = op.cells.iter().map(|&i| data.g.values()[i]).collect();
        let h = op.domain().spacing();
        let gt = op.grad.transpose();
        let df = gt.apply(&mul(&fv, &op.w_e));
        let scale = max_abs(&fv) / h * op.w_e.iter().copied().fold(0.0, f64::max);
        if max_abs(&df) > DIV_TOL * scale {
            return Err(Error::Constraint("F is not discretely divergence-free".into(), max_abs(&df) / scale));
        }
        self.check_moment_orthogonal(&fv, &self.b1, &op.w_e, "F")?;

        // H1 = A^{-1} W_F C z with C^T W_F A^{-1} W_F C z = W_E F
        let ct = op.curl.transpose();
        let rhs = mul(&fv, &op.w_e);
        let z = cg(|v| ct.apply(&mul(&div(&mul(&op.curl.apply(v), &op.w_f), &op.a_f), &op.w_f)), &rhs)?;
        let h1 = div(&mul(&op.curl.apply(&z), &op.w_f), &op.a_f);
        // H2 = W_F^{-1} D^T W_C v with W_C D (A / W_F^2) D^T W_C v = W_C g
        let dt = op.div.transpose();
        let p = |v: &[Complex64]| div(&dt.apply(&mul(v, &op.w_c)), &op.w_f);
        let rhs = mul(&g, &op.w_c);
        let v = cg(|v| mul(&op.div.apply(&div(&mul(&p(v), &op.a_f), &op.w_f)), &op.w_c), &rhs)?;
        let h2 = p(&v);
        let hhat: Vec<Complex64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
        let hv = self.harmonic_correction(Side::Magnetic, &hhat, &data.theta)?;

        let data_norm = norm_w(&fv, &op.w_e) + norm_w(&g, &op.w_c) + euclid(&data.theta);
        let rel = |r: &[Complex64], d: &[Complex64], w: &[f64]| -> f64 {
            let dn = norm_w(d, w);
            norm_w(&sub(r, d), w) / if dn > 0.0 { dn } else { 1.0 + data_norm }
        };
        let mom = self.moments(Side::Magnetic, &hv);
        let residuals = StaticResiduals {
            rotation: rel(&self.rot_dual(&hv), &fv, &op.w_e),
            divergence: rel(&self.div_mu(&hv), &g, &op.w_c),
            moments: mom.iter().zip(&data.theta).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / (1.0 + data_norm),
        };
        Ok(StaticSolution { field: op.face_field(&hv), residuals, gram_condition: self.cond2 })
    }

    /// The pair operator `L_{Lambda,0}`: solves `M (E, H) = (F, G)` with the
    /// divergences and moments of both sides prescribed. `magnetic.f` is the
    /// `F` of the first-order system, so `H` solves `rot H = -F`.
    pub fn solve_pair(&self, electric: &StaticProblemData, magnetic: &MagnetostaticData) -> Result<(StaticSolution, StaticSolution, f64)> {
        let neg = MagnetostaticData { f: magnetic.f.scaled(Complex64::new(-1.0, 0.0)), g: magnetic.g.clone(), theta: magnetic.theta.clone() };
        let e = self.solve_electric(electric)?;
        let h = self.solve_magnetic(&neg)?;
        let u = self.op.from_fields(&e.field, &h.field)?;
        let d = self.op.from_fields(&magnetic.f, &electric.g)?;
        let r = self.op.relative_residual(ZERO, &u, &d)?;
        Ok((e, h, r))
    }
}

/// One-shot electrostatic solve.
pub fn solve_static(op: &MaxwellOperatorMatrix, data: &StaticProblemData) -> Result<StaticSolution> {
    StaticSolver::new(op)?.solve_electric(data)
}

/// One-shot magnetostatic solve.
pub fn solve_static_magnetic(op: &MaxwellOperatorMatrix, data: &MagnetostaticData) -> Result<StaticSolution> {
    StaticSolver::new(op)?.solve_magnetic(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::presets::{cube_with_cavity, solid_cube};
    use crate::operators::random_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cavity_op() -> MaxwellOperatorMatrix {
        let d = Arc::new(cube_with_cavity(8, 2, 0.25, BoundaryLabel::Gamma1).unwrap());
        assemble(&d, &MaterialLaw::vacuum()).unwrap()
    }

    #[test]
    fn solid_cube_has_empty_sets() {
        let d = Arc::new(solid_cube(6, 0.25, BoundaryLabel::Gamma1).unwrap());
        let (b, r) = verify_steps(&d, &MaterialLaw::vacuum(), Side::Electric).unwrap();
        assert_eq!(b.d, 0);
        assert!(r.passed());
    }

    #[test]
    fn cavity_basis_is_compact_and_rotation_free() {
        let op = cavity_op();
        let b = build_B(&op, Side::Electric).unwrap();
        assert_eq!(b.d, 1);
        let r2 = b.rhat * b.rhat;
        for e in &b.elements {
            for (i, v) in e.values().iter().enumerate() {
                let x = op.domain().position(FieldKind::Edge, i);
                if x.iter().map(|c| c * c).sum::<f64>() > 4.0 * r2 {
                    assert_eq!(*v, ZERO);
                }
            }
            let p = op.edge_part(e).unwrap();
            assert!(rotation_defect(&op, Side::Electric, &p) <= 1e-10);
        }
        assert!(b.rot_range_defect(&op, 10, 1) <= 1e-10);
    }

    #[test]
    fn projection_removes_gradients_and_keeps_harmonics() {
        let op = cavity_op();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_vector(&vec![true; op.nodes.len()], &mut rng);
        let g = op.grad.apply(&w);
        let p = project_along_gradients(&op.edge_field(&g), &op).unwrap();
        assert!(p.max_abs() <= 1e-10 * max_abs(&g));
        let hf = harmonic_fields(&op, Side::Electric).unwrap();
        let k = op.edge_field(&hf.basis[0]);
        let mixed = k.add(&op.edge_field(&g)).unwrap();
        let p = project_along_gradients(&mixed, &op).unwrap();
        assert!(p.sub(&k).unwrap().max_abs() <= 1e-9 * k.max_abs());
        let noisy = op.edge_field(&random_vector(&vec![true; op.n_e()], &mut rng));
        assert!(matches!(project_along_gradients(&noisy, &op), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_data_gives_zero() {
        let op = cavity_op();
        let s = StaticSolver::new(&op).unwrap();
        let d = StaticProblemData {
            g: StaggeredField::zeros(op.domain(), FieldKind::Face),
            f: StaggeredField::zeros(op.domain(), FieldKind::Node),
            zeta: vec![ZERO; s.b1.d],
        };
        let e = s.solve_electric(&d).unwrap();
        assert_eq!(e.field.max_abs(), 0.0);
    }

    #[test]
    fn manufactured_electric_solution_is_recovered() {
        let op = cavity_op();
        let s = StaticSolver::new(&op).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e_star = random_vector(&vec![true; op.n_e()], &mut rng);
        let f_nodes = s.div_eps(&e_star);
        let mut f = StaggeredField::zeros(op.domain(), FieldKind::Node);
        for (&i, v) in op.nodes.iter().zip(&f_nodes) {
            f.values_mut()[i] = *v;
        }
        let data = StaticProblemData { g: op.face_field(&op.curl.apply(&e_star)), f, zeta: s.moments(Side::Electric, &e_star) };
        let sol = s.solve_electric(&data).unwrap();
        let e = op.edge_part(&sol.field).unwrap();
        let err = norm_w(&sub(&e, &e_star), &op.a_e) / norm_w(&e_star, &op.a_e);
        assert!(err <= 1e-8, "{err}");
        assert!(sol.residuals.max() <= 1e-8);
    }

    #[test]
    fn unit_moment_gives_harmonic_field() {
        let op = cavity_op();
        let s = StaticSolver::new(&op).unwrap();
        let data = StaticProblemData {
            g: StaggeredField::zeros(op.domain(), FieldKind::Face),
            f: StaggeredField::zeros(op.domain(), FieldKind::Node),
            zeta: vec![Complex64::new(1.0, 0.0)],
        };
        let sol = s.solve_electric(&data).unwrap();
        let e = op.edge_part(&sol.field).unwrap();
        assert!((s.moments(Side::Electric, &e)[0] - 1.0).norm() <= 1e-10);
        assert!(max_abs(&op.curl.apply(&e)) <= 1e-10 * max_abs(&e) / 0.25);
        assert!(max_abs(&s.div_eps(&e)) <= 1e-10 * max_abs(&e) / 0.25);
    }

    #[test]
    fn inadmissible_data_is_rejected() {
        let op = cavity_op();
        let s = StaticSolver::new(&op).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = op.face_field(&random_vector(&vec![true; op.n_f()], &mut rng));
        let data = StaticProblemData { g, f: StaggeredField::zeros(op.domain(), FieldKind::Node), zeta: vec![ZERO] };
        assert!(matches!(s.solve_electric(&data), Err(Error::Constraint(..))));
    }

    #[test]
    fn zeroed_element_fails_step_three() {
        let op = cavity_op();
        let b = build_B(&op, Side::Electric).unwrap();
        let r = check_steps(&op, &b).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.dims, (1, 1, 1));
        let bad = b.with_zeroed(&op, 0);
        assert!(!check_steps(&op, &bad).unwrap().step3_nondegenerate);
    }

    fn ring_obstacle_op() -> MaxwellOperatorMatrix {
        let d = crate::grid::presets::ring_obstacle(9, 3, 1, 0.25, BoundaryLabel::Gamma1).unwrap();
        assemble(&Arc::new(d), &MaterialLaw::vacuum()).unwrap()
    }

    #[test]
    fn ring_obstacle_magnetic_moments() {
        let op = ring_obstacle_op();
        let b = build_B(&op, Side::Magnetic).unwrap();
        assert_eq!(b.d, 1);
        let rep = check_steps(&op, &b).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(b.rot_range_defect(&op, 10, 2) <= 1e-10);
        let s = StaticSolver::new(&op).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h_star = random_vector(&vec![true; op.n_f()], &mut rng);
        let g_cells = s.div_mu(&h_star);
        let mut g = StaggeredField::zeros(op.domain(), FieldKind::Cell);
        for (&i, v) in op.cells.iter().zip(&g_cells) {
            g.values_mut()[i] = *v;
        }
        let data = MagnetostaticData { f: op.edge_field(&s.rot_dual(&h_star)), g, theta: s.moments(Side::Magnetic, &h_star) };
        let sol = s.solve_magnetic(&data).unwrap();
        let h = op.face_part(&sol.field).unwrap();
        let err = norm_w(&sub(&h, &h_star), &op.a_f) / norm_w(&h_star, &op.a_f);
        assert!(err <= 1e-8, "{err}");
        assert!(sol.residuals.max() <= 1e-8, "{:?}", sol.residuals);
    }
}
