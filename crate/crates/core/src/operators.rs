//! Mimetic difference operators on the staggered grid.
//!
//! The primal operators `grad`, `curl`, `div` act between node, edge, face
//! and cell arrays and drop every degree of freedom in the closure of the
//! faces selected by the [`Mask`]. Their Hilbert adjoints with respect to
//! diagonal Hodge weights are the operators with the opposite boundary
//! condition: the adjoint of `curl` masked on `Gamma1` is the rotation whose
//! natural boundary condition kills the tangential trace on `Gamma2`, and the
//! adjoint of `grad` masked on `Gamma1` is `-div` of the `Gamma2`-normal
//! problem. Composition identities hold exactly because the masked set is a
//! subcomplex (closure of a set of faces).

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::StaggeredField;
use crate::grid::{FieldKind, GridDomain, Mask};
use crate::material::{hodge_weights, Gamma, WeightExponent};
use crate::sparse::CsrMatrix;

/// Edge `dir` at node `p` points from `p` to `p + e_dir`.
pub fn grad_matrix(domain: &GridDomain, mask: Mask) -> CsrMatrix {
    let inv_h = 1.0 / domain.spacing();
    let mut trips = Vec::new();
    for e in 0..domain.len(FieldKind::Edge) {
        if !domain.is_free(FieldKind::Edge, e, mask) {
            continue;
        }
        let (d, p) = domain.coords(FieldKind::Edge, e);
        let mut q = p;
        q[d] += 1;
        let n0 = domain.index(FieldKind::Node, 0, p);
        let n1 = domain.index(FieldKind::Node, 0, q);
        if domain.is_free(FieldKind::Node, n0, mask) {
            trips.push((e, n0, -inv_h));
        }
        if domain.is_free(FieldKind::Node, n1, mask) {
            trips.push((e, n1, inv_h));
        }
    }
    CsrMatrix::from_triplets(domain.len(FieldKind::Edge), domain.len(FieldKind::Node), trips)
}

/// `(curl E)_d = d_a E_b - d_b E_a` with `(d, a, b)` cyclic.
pub fn curl_matrix(domain: &GridDomain, mask: Mask) -> CsrMatrix {
    let inv_h = 1.0 / domain.spacing();
    let mut trips = Vec::new();
    for f in 0..domain.len(FieldKind::Face) {
        if !domain.is_free(FieldKind::Face, f, mask) {
            continue;
        }
        let (d, p) = domain.coords(FieldKind::Face, f);
        let (a, b) = ((d + 1) % 3, (d + 2) % 3);
        let mut pa = p;
        pa[a] += 1;
        let mut pb = p;
        pb[b] += 1;
        let terms = [
            (domain.index(FieldKind::Edge, b, pa), inv_h),
            (domain.index(FieldKind::Edge, b, p), -inv_h),
            (domain.index(FieldKind::Edge, a, pb), -inv_h),
            (domain.index(FieldKind::Edge, a, p), inv_h),
        ];
        for (e, v) in terms {
            if domain.is_free(FieldKind::Edge, e, mask) {
                trips.push((f, e, v));
            }
        }
    }
    CsrMatrix::from_triplets(domain.len(FieldKind::Face), domain.len(FieldKind::Edge), trips)
}

pub fn div_matrix(domain: &GridDomain, mask: Mask) -> CsrMatrix {
    let inv_h = 1.0 / domain.spacing();
    let mut trips = Vec::new();
    for c in 0..domain.len(FieldKind::Cell) {
        if domain.is_excluded(c) {
            continue;
        }
        let (_, p) = domain.coords(FieldKind::Cell, c);
        for d in 0..3 {
            let mut q = p;
            q[d] += 1;
            let f0 = domain.index(FieldKind::Face, d, p);
            let f1 = domain.index(FieldKind::Face, d, q);
            if domain.is_free(FieldKind::Face, f0, mask) {
                trips.push((c, f0, -inv_h));
            }
            if domain.is_free(FieldKind::Face, f1, mask) {
                trips.push((c, f1, inv_h));
            }
        }
    }
    CsrMatrix::from_triplets(domain.len(FieldKind::Cell), domain.len(FieldKind::Face), trips)
}

/// Hilbert adjoint `W_src^{-1} A^T W_dst` of `A: src -> dst`; rows with zero
/// source weight stay empty.
pub fn weighted_adjoint(a: &CsrMatrix, w_src: &[f64], w_dst: &[f64]) -> CsrMatrix {
    let inv: Vec<f64> = w_src.iter().map(|&w| if w > 0.0 { 1.0 / w } else { 0.0 }).collect();
    a.transpose().scaled(&inv, w_dst)
}

/// A sparse operator between two staggerings together with the sets of
/// admissible input and output entries.
#[derive(Clone, Debug)]
pub struct MaskedOperator {
    pub name: &'static str,
    pub matrix: CsrMatrix,
    pub src: FieldKind,
    pub dst: FieldKind,
    pub src_free: Vec<bool>,
    pub dst_free: Vec<bool>,
}

impl MaskedOperator {
    pub fn apply(&self, x: &StaggeredField) -> Result<StaggeredField> {
        x.check_kind(self.src)?;
        let y = self.matrix.apply(x.values());
        StaggeredField::from_values(x.grid(), self.dst, y)
    }

    pub fn apply_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.matrix.apply(x)
    }
}

fn free_flags(domain: &GridDomain, kind: FieldKind, mask: Mask) -> Vec<bool> {
    (0..domain.len(kind)).map(|i| domain.is_free(kind, i, mask)).collect()
}

/// The masked operators of one domain, built once.
#[derive(Clone, Debug)]
pub struct MimeticOperators {
    domain: Arc<GridDomain>,
    mask: Mask,
    pub grad: MaskedOperator,
    pub curl: MaskedOperator,
    pub div: MaskedOperator,
}

impl MimeticOperators {
    pub fn new(domain: &Arc<GridDomain>, mask: Mask) -> Self {
        let nodes = free_flags(domain, FieldKind::Node, mask);
        let edges = free_flags(domain, FieldKind::Edge, mask);
        let faces = free_flags(domain, FieldKind::Face, mask);
        let cells = free_flags(domain, FieldKind::Cell, mask);
        MimeticOperators {
            domain: domain.clone(),
            mask,
            grad: MaskedOperator {
                name: "grad",
                matrix: grad_matrix(domain, mask),
                src: FieldKind::Node,
                dst: FieldKind::Edge,
                src_free: nodes.clone(),
                dst_free: edges.clone(),
            },
            curl: MaskedOperator {
                name: "curl",
                matrix: curl_matrix(domain, mask),
                src: FieldKind::Edge,
                dst: FieldKind::Face,
                src_free: edges.clone(),
                dst_free: faces.clone(),
            },
            div: MaskedOperator {
                name: "div",
                matrix: div_matrix(domain, mask),
                src: FieldKind::Face,
                dst: FieldKind::Cell,
                src_free: faces,
                dst_free: cells,
            },
        }
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn mask(&self) -> Mask {
        self.mask
    }

    /// Rotation with the opposite boundary condition: the adjoint of `curl`
    /// from `L^2_{gamma_f}` (faces) to `L^2_{gamma_e}` (edges).
    pub fn dual_curl(&self, gamma_e: Gamma<'_>, gamma_f: Gamma<'_>) -> Result<MaskedOperator> {
        let we = hodge_weights(&self.domain, FieldKind::Edge, gamma_e)?;
        let wf = hodge_weights(&self.domain, FieldKind::Face, gamma_f)?;
        let we: Vec<f64> = we.iter().zip(&self.curl.src_free).map(|(&w, &f)| if f { w } else { 0.0 }).collect();
        Ok(MaskedOperator {
            name: "dual_curl",
            matrix: weighted_adjoint(&self.curl.matrix, &we, &wf),
            src: FieldKind::Face,
            dst: FieldKind::Edge,
            src_free: self.curl.dst_free.clone(),
            dst_free: self.curl.src_free.clone(),
        })
    }

    /// `E -> div(gamma E)` with the opposite (normal) boundary condition:
    /// minus the adjoint of `grad` from `L^2_gamma` (edges) to `L^2` (nodes).
    pub fn dual_div(&self, gamma_e: Gamma<'_>) -> Result<MaskedOperator> {
        let we = hodge_weights(&self.domain, FieldKind::Edge, gamma_e)?;
        let wn: Vec<f64> = self
            .domain
            .geometric_weights(FieldKind::Node)
            .iter()
            .zip(&self.grad.src_free)
            .map(|(&w, &f)| if f { w } else { 0.0 })
            .collect();
        let mut m = weighted_adjoint(&self.grad.matrix, &wn, &we);
        let neg = vec![-1.0; m.nrows()];
        let ones = vec![1.0; m.ncols()];
        m = m.scaled(&neg, &ones);
        Ok(MaskedOperator {
            name: "dual_div",
            matrix: m,
            src: FieldKind::Edge,
            dst: FieldKind::Node,
            src_free: self.grad.dst_free.clone(),
            dst_free: self.grad.src_free.clone(),
        })
    }

    /// Gradient with the opposite boundary condition on cell scalars: minus
    /// the adjoint of `div` from `L^2_{gamma_f}` (faces) to `L^2` (cells).
    pub fn dual_grad(&self, gamma_f: Gamma<'_>) -> Result<MaskedOperator> {
        let wf = hodge_weights(&self.domain, FieldKind::Face, gamma_f)?;
        let wf: Vec<f64> = wf.iter().zip(&self.div.src_free).map(|(&w, &f)| if f { w } else { 0.0 }).collect();
        let wc = self.domain.geometric_weights(FieldKind::Cell);
        let m = weighted_adjoint(&self.div.matrix, &wf, &wc);
        let neg = vec![-1.0; m.nrows()];
        let ones = vec![1.0; m.ncols()];
        Ok(MaskedOperator {
            name: "dual_grad",
            matrix: m.scaled(&neg, &ones),
            src: FieldKind::Cell,
            dst: FieldKind::Face,
            src_free: self.div.dst_free.clone(),
            dst_free: self.div.src_free.clone(),
        })
    }
}

/// `grad w` with the nodes and edges on the `mask` part removed.
pub fn discrete_grad(w: &StaggeredField, mask: Mask) -> Result<StaggeredField> {
    w.check_kind(FieldKind::Node)?;
    let m = grad_matrix(w.grid(), mask);
    StaggeredField::from_values(w.grid(), FieldKind::Edge, m.apply(w.values()))
}

pub fn discrete_curl(e: &StaggeredField, mask: Mask) -> Result<StaggeredField> {
    e.check_kind(FieldKind::Edge)?;
    let m = curl_matrix(e.grid(), mask);
    StaggeredField::from_values(e.grid(), FieldKind::Face, m.apply(e.values()))
}

pub fn discrete_div(h: &StaggeredField, mask: Mask) -> Result<StaggeredField> {
    h.check_kind(FieldKind::Face)?;
    let m = div_matrix(h.grid(), mask);
    StaggeredField::from_values(h.grid(), FieldKind::Cell, m.apply(h.values()))
}

/// Rotation of a face field onto edges (adjoint of the `mask`-curl in the
/// geometric weights).
pub fn dual_curl(h: &StaggeredField, mask: Mask) -> Result<StaggeredField> {
    h.check_kind(FieldKind::Face)?;
    let ops = MimeticOperators::new(h.grid(), mask);
    ops.dual_curl(Gamma::Identity, Gamma::Identity)?.apply(h)
}

/// Divergence of an edge field onto nodes (minus the adjoint of the
/// `mask`-gradient).
pub fn dual_div(e: &StaggeredField, mask: Mask, gamma: Gamma<'_>) -> Result<StaggeredField> {
    e.check_kind(FieldKind::Edge)?;
    let ops = MimeticOperators::new(e.grid(), mask);
    ops.dual_div(gamma)?.apply(e)
}

/// `sum_i rho(x_i)^{2t} w_gamma,i u_i conj(v_i)` in index order.
pub fn weighted_inner_product(u: &StaggeredField, v: &StaggeredField, t: WeightExponent, gamma: Gamma<'_>) -> Result<Complex64> {
    u.check_compatible(v)?;
    let w = hodge_weights(u.grid(), u.kind(), gamma)?;
    let g = u.grid();
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, ((a, b), wi)) in u.values().iter().zip(v.values()).zip(&w).enumerate() {
        if *wi == 0.0 {
            continue;
        }
        let rw = if t.value() == 0.0 { 1.0 } else { t.factor(g.position(u.kind(), i)) };
        acc += a * b.conj() * (wi * rw);
    }
    Ok(acc)
}

pub fn weighted_norm(u: &StaggeredField, t: WeightExponent, gamma: Gamma<'_>) -> Result<f64> {
    Ok(weighted_inner_product(u, u, t, gamma)?.re.max(0.0).sqrt())
}

/// Inner product `sum w_i a_i conj(b_i)` of raw vectors.
pub fn dot_w(a: &[Complex64], b: &[Complex64], w: &[f64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for ((x, y), wi) in a.iter().zip(b).zip(w) {
        acc += x * y.conj() * wi;
    }
    acc
}

pub fn norm_w(a: &[Complex64], w: &[f64]) -> f64 {
    a.iter().zip(w).map(|(x, wi)| x.norm_sqr() * wi).sum::<f64>().sqrt()
}

/// Random complex vector, uniform in the unit square on flagged entries.
pub fn random_vector(flags: &[bool], rng: &mut impl Rng) -> Vec<Complex64> {
    flags
        .iter()
        .map(|&f| if f { Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { Complex64::new(0.0, 0.0) })
        .collect()
}

/// Largest relative defect `|<A u, v>_{w_dst} - <u, B v>_{w_src}|` over
/// `probes` seeded random pairs, normalized by
/// `|A u| |v| + |u| |B v|`.
pub fn adjoint_defect(
    a: &MaskedOperator,
    b: &MaskedOperator,
    w_src: &[f64],
    w_dst: &[f64],
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if a.src != b.dst || a.dst != b.src {
        return Err(Error::Shape(format!("{} and {} are not a dual pair", a.name, b.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let u = random_vector(&a.src_free, &mut rng);
        let v = random_vector(&b.src_free, &mut rng);
        let au = a.apply_vec(&u);
        let bv = b.apply_vec(&v);
        let lhs = dot_w(&au, &v, w_dst);
        let rhs = dot_w(&u, &bv, w_src);
        let scale = norm_w(&au, w_dst) * norm_w(&v, w_dst) + norm_w(&u, w_src) * norm_w(&bv, w_src);
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).norm() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{presets, BoundaryLabel};
    use crate::material::MaterialLaw;

    fn mixed_domain(n: usize) -> Arc<GridDomain> {
        Arc::new(
            GridDomain::builder([n; 3], 1.0 / n as f64)
                .obstacle_box([n / 2 - 1; 3], [n / 2 + 1; 3])
                .label_with(|f| if f.center[2] > 0.0 && f.on_box { BoundaryLabel::Gamma2 } else { BoundaryLabel::Gamma1 })
                .build()
                .unwrap(),
        )
    }

    #[test]
    fn single_cell_unit_edge_field_volume() {
        let h = 0.5;
        let g = Arc::new(GridDomain::whole_space([1, 1, 1], h, [0.0; 3]).unwrap());
        let u = StaggeredField::from_fn(&g, FieldKind::Edge, |_, _| Complex64::new(1.0, 0.0));
        let ip = weighted_inner_product(&u, &u, WeightExponent::ZERO, Gamma::Identity).unwrap();
        // 12 edges, each carrying a quarter of the cell
        assert!((ip.re - 12.0 * h.powi(3) / 4.0).abs() < 1e-15);
        assert!((ip.re - 3.0 * h.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn disjoint_supports_are_orthogonal() {
        let g = Arc::new(GridDomain::whole_space([4, 4, 4], 1.0, [0.0; 3]).unwrap());
        let u = StaggeredField::from_fn(&g, FieldKind::Face, |x, _| Complex64::new(if x[0] < 0.0 { 1.0 } else { 0.0 }, 0.0));
        let v = StaggeredField::from_fn(&g, FieldKind::Face, |x, _| Complex64::new(0.0, if x[0] > 0.0 { 1.0 } else { 0.0 }));
        let ip = weighted_inner_product(&u, &v, WeightExponent::new(0.5).unwrap(), Gamma::Identity).unwrap();
        assert_eq!(ip, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn scaling_by_material() {
        let g = Arc::new(GridDomain::whole_space([3, 3, 3], 1.0, [0.0; 3]).unwrap());
        let u = StaggeredField::from_fn(&g, FieldKind::Edge, |x, d| Complex64::new(x[d] + 0.3, x[0] * x[1]));
        let law = MaterialLaw::homogeneous(2.0, 1.0).unwrap();
        let a = weighted_inner_product(&u, &u, WeightExponent::ZERO, Gamma::Eps(&law)).unwrap().re;
        let b = weighted_inner_product(&u, &u, WeightExponent::ZERO, Gamma::Identity).unwrap().re;
        assert!((a / b - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kind_mismatch_is_a_shape_error() {
        let g = Arc::new(GridDomain::whole_space([2, 2, 2], 1.0, [0.0; 3]).unwrap());
        let u = StaggeredField::zeros(&g, FieldKind::Edge);
        let v = StaggeredField::zeros(&g, FieldKind::Face);
        assert!(matches!(weighted_inner_product(&u, &v, WeightExponent::ZERO, Gamma::Identity), Err(Error::Shape(_))));
        assert!(matches!(discrete_curl(&v, Mask::Unmasked), Err(Error::Shape(_))));
    }

    #[test]
    fn grad_of_constant_vanishes_in_interior() {
        let g = Arc::new(presets::solid_cube(4, 0.25, BoundaryLabel::Gamma2).unwrap());
        let w = StaggeredField::from_fn(&g, FieldKind::Node, |_, _| Complex64::new(3.0, -1.0));
        let e = discrete_grad(&w, Mask::Unmasked).unwrap();
        assert_eq!(e.max_abs(), 0.0);
        // Gamma1 is empty here, so masking by it changes nothing
        assert_eq!(discrete_grad(&w, Mask::Gamma1).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn complex_identities_are_exact() {
        let g = mixed_domain(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mask in [Mask::Unmasked, Mask::Gamma1, Mask::Gamma2] {
            let ops = MimeticOperators::new(&g, mask);
            let w = random_vector(&ops.grad.src_free, &mut rng);
            let cg = ops.curl.apply_vec(&ops.grad.apply_vec(&w));
            assert!(cg.iter().all(|v| v.norm() <= 1e-14 * 36.0), "{mask:?}");
            let e = random_vector(&ops.curl.src_free, &mut rng);
            let dc = ops.div.apply_vec(&ops.curl.apply_vec(&e));
            assert!(dc.iter().all(|v| v.norm() <= 1e-14 * 36.0), "{mask:?}");
        }
    }

    #[test]
    fn adjoint_pairs_are_exact_and_mismatch_is_detected() {
        let g = mixed_domain(6);
        let ops1 = MimeticOperators::new(&g, Mask::Gamma1);
        let ops2 = MimeticOperators::new(&g, Mask::Gamma2);
        let we = g.geometric_weights(FieldKind::Edge);
        let wf = g.geometric_weights(FieldKind::Face);
        let rot2 = ops1.dual_curl(Gamma::Identity, Gamma::Identity).unwrap();
        assert!(adjoint_defect(&ops1.curl, &rot2, &we, &wf, 20, 9).unwrap() < 1e-12);

        let law = MaterialLaw::random_spd(g.len(FieldKind::Cell), 1.5, 1.0, 0.4, 4).unwrap();
        let wn = g.geometric_weights(FieldKind::Node);
        let we_eps = hodge_weights(&g, FieldKind::Edge, Gamma::Eps(&law)).unwrap();
        let mdiv = ops1.dual_div(Gamma::Eps(&law)).unwrap();
        let neg = MaskedOperator {
            matrix: mdiv.matrix.scaled(&vec![-1.0; mdiv.matrix.nrows()], &vec![1.0; mdiv.matrix.ncols()]),
            ..mdiv
        };
        assert!(adjoint_defect(&ops1.grad, &neg, &wn, &we_eps, 20, 10).unwrap() < 1e-12);

        // curl masked on Gamma1 against the rotation built from the Gamma2 mask
        let wrong = ops2.dual_curl(Gamma::Identity, Gamma::Identity).unwrap();
        assert!(adjoint_defect(&ops1.curl, &wrong, &we, &wf, 5, 11).unwrap() > 1e-3);
    }

    #[test]
    fn operators_never_leak_into_obstacle() {
        let g = mixed_domain(6);
        let ops = MimeticOperators::new(&g, Mask::Gamma1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = random_vector(&ops.curl.src_free, &mut rng);
        let c = ops.curl.apply_vec(&e);
        for (f, v) in c.iter().enumerate() {
            if !g.is_present(FieldKind::Face, f) {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
        let rot2 = ops.dual_curl(Gamma::Identity, Gamma::Identity).unwrap();
        let back = rot2.apply_vec(&c);
        for (e, v) in back.iter().enumerate() {
            if !g.is_free(FieldKind::Edge, e, Mask::Gamma1) {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
    }
}
