//! Bounded-domain Maxwell operator `Mcal = i Lambda^{-1} M` with mixed
//! boundary conditions.
//!
//! Unknowns are `E` on the `Gamma1`-free edges and `H` on the `Gamma1`-free
//! faces, stacked as `u = (E, H)`. With the lumped Hodge weights
//! `A_E = Lambda_E W_E`, `A_F = Lambda_F W_F`,
//!
//! ```text
//! M (E, H) = ( -W_E^{-1} C^T W_F H , C E )
//! ```
//!
//! so the `H` rotation is the weighted adjoint of the `Gamma1`-masked curl
//! and carries the natural `Gamma2` condition. In the scaled unknowns
//! `(A_E^{1/2} E, A_F^{1/2} H)` the operator becomes `i [[0, -B^T], [B, 0]]`
//! with `B = A_F^{-1/2} W_F C A_E^{-1/2}`, whose SVD gives the whole
//! spectrum `{0} U {+-sigma_k}`.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::StaggeredField;
use crate::grid::{FieldKind, GridDomain, Mask};
use crate::linalg::{conjugate_gradient, nullspace, rank_decision, RankDecision, SparseLu, RANK_TOL};
use crate::material::{hodge_weights, Gamma, MaterialLaw};
use crate::operators::{curl_matrix, div_matrix, dot_w, grad_matrix, norm_w, random_vector};
use crate::sparse::CsrMatrix;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Largest operator dimension handled by the dense spectral path.
pub const DENSE_LIMIT: usize = 6000;
/// Distance to the spectrum below which a frequency counts as singular.
pub const NEAR_SINGULAR_TOL: f64 = 1e-8;

/// Which half of the system a field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Electric,
    Magnetic,
}

/// Sparse matrix form of `M` and `Lambda` on one labeled domain.
#[derive(Clone, Debug)]
pub struct MaxwellOperatorMatrix {
    domain: Arc<GridDomain>,
    law: MaterialLaw,
    /// Box indices of the unknowns.
    pub edges: Vec<usize>,
    pub faces: Vec<usize>,
    /// `Gamma1`-free nodes (potentials of the gradient range).
    pub nodes: Vec<usize>,
    /// Included cells.
    pub cells: Vec<usize>,
    /// Faces x edges.
    pub curl: CsrMatrix,
    curl_t: CsrMatrix,
    /// Edges x nodes.
    pub grad: CsrMatrix,
    grad_t: CsrMatrix,
    /// Cells x faces.
    pub div: CsrMatrix,
    div_t: CsrMatrix,
    pub w_e: Vec<f64>,
    pub w_f: Vec<f64>,
    pub w_c: Vec<f64>,
    /// `Lambda_E W_E` and `Lambda_F W_F`.
    pub a_e: Vec<f64>,
    pub a_f: Vec<f64>,
}

/// Builds the operator on a labeled domain.
pub fn assemble(domain: &Arc<GridDomain>, law: &MaterialLaw) -> Result<MaxwellOperatorMatrix> {
    MaxwellOperatorMatrix::new(domain, law)
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

impl MaxwellOperatorMatrix {
    pub fn new(domain: &Arc<GridDomain>, law: &MaterialLaw) -> Result<Self> {
        for f in 0..domain.len(FieldKind::Face) {
            if domain.included_neighbors(FieldKind::Face, f) == 1 && domain.label(f).is_none() {
                return Err(Error::Config(format!("boundary face {f} carries no label")));
            }
        }
        let mask = Mask::Gamma1;
        let edges = domain.free_indices(FieldKind::Edge, mask);
        let faces = domain.free_indices(FieldKind::Face, mask);
        let nodes = domain.free_indices(FieldKind::Node, mask);
        let cells = domain.included_cells();
        let curl = curl_matrix(domain, mask).submatrix(&faces, &edges);
        let grad = grad_matrix(domain, mask).submatrix(&edges, &nodes);
        let div = div_matrix(domain, mask).submatrix(&cells, &faces);
        let w_e = pick(&domain.geometric_weights(FieldKind::Edge), &edges);
        let w_f = pick(&domain.geometric_weights(FieldKind::Face), &faces);
        let w_c = pick(&domain.geometric_weights(FieldKind::Cell), &cells);
        let a_e = pick(&hodge_weights(domain, FieldKind::Edge, Gamma::Eps(law))?, &edges);
        let a_f = pick(&hodge_weights(domain, FieldKind::Face, Gamma::Mu(law))?, &faces);
        Ok(MaxwellOperatorMatrix {
            domain: domain.clone(),
            law: law.clone(),
            curl_t: curl.transpose(),
            grad_t: grad.transpose(),
            div_t: div.transpose(),
            edges,
            faces,
            nodes,
            cells,
            curl,
            grad,
            div,
            w_e,
            w_f,
            w_c,
            a_e,
            a_f,
        })
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn law(&self) -> &MaterialLaw {
        &self.law
    }

    pub fn n_e(&self) -> usize {
        self.edges.len()
    }

    pub fn n_f(&self) -> usize {
        self.faces.len()
    }

    pub fn n(&self) -> usize {
        self.n_e() + self.n_f()
    }

    /// Diagonal of `Lambda W`, the weight of the `Lambda` inner product.
    pub fn lambda_weights(&self) -> Vec<f64> {
        let mut w = self.a_e.clone();
        w.extend_from_slice(&self.a_f);
        w
    }

    /// Diagonal of `W`, the weight of the plain inner product.
    pub fn plain_weights(&self) -> Vec<f64> {
        let mut w = self.w_e.clone();
        w.extend_from_slice(&self.w_f);
        w
    }

    pub fn lambda_inner(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        dot_w(u, v, &self.lambda_weights())
    }

    pub fn lambda_norm(&self, u: &[Complex64]) -> f64 {
        norm_w(u, &self.lambda_weights())
    }

    fn check_len(&self, u: &[Complex64]) -> Result<()> {
        if u.len() != self.n() {
            return Err(Error::Shape(format!("vector of length {} for an operator of size {}", u.len(), self.n())));
        }
        Ok(())
    }

    /// `-W_E^{-1} C^T W_F h`.
    fn rot2(&self, h: &[Complex64]) -> Vec<Complex64> {
        let wh: Vec<Complex64> = h.iter().zip(&self.w_f).map(|(v, w)| v * w).collect();
        self.curl_t.apply(&wh).into_iter().zip(&self.w_e).map(|(v, w)| -v / w).collect()
    }

    /// `M u`.
    pub fn apply_m(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(u)?;
        let (e, h) = u.split_at(self.n_e());
        let mut out = self.rot2(h);
        out.extend(self.curl.apply(e));
        Ok(out)
    }

    /// `Mcal u = i Lambda^{-1} M u`.
    pub fn apply(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut m = self.apply_m(u)?;
        self.lambda_inv_in_place(&mut m);
        m.iter_mut().for_each(|v| *v *= I);
        Ok(m)
    }

    fn lambda_inv_in_place(&self, u: &mut [Complex64]) {
        let (e, h) = u.split_at_mut(self.n_e());
        for ((v, a), w) in e.iter_mut().zip(&self.a_e).zip(&self.w_e) {
            *v *= w / a;
        }
        for ((v, a), w) in h.iter_mut().zip(&self.a_f).zip(&self.w_f) {
            *v *= w / a;
        }
    }

    pub fn apply_lambda_inv(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut v = u.to_vec();
        self.lambda_inv_in_place(&mut v);
        v
    }

    pub fn apply_lambda(&self, u: &[Complex64]) -> Vec<Complex64> {
        let lw = self.lambda_weights();
        let w = self.plain_weights();
        u.iter().zip(lw.iter().zip(&w)).map(|(v, (a, b))| v * (a / b)).collect()
    }

    /// Residual `(M + i omega Lambda) u - d`, measured relative to `|d|` in
    /// the plain weighted norm.
    pub fn relative_residual(&self, omega: Complex64, u: &[Complex64], d: &[Complex64]) -> Result<f64> {
        let mut r = self.apply_m(u)?;
        let lu = self.apply_lambda(u);
        for ((ri, li), di) in r.iter_mut().zip(&lu).zip(d) {
            *ri += I * omega * li - di;
        }
        let w = self.plain_weights();
        let dn = norm_w(d, &w);
        let rn = norm_w(&r, &w);
        Ok(if dn == 0.0 { rn } else { rn / dn })
    }

    /// Stacks an `(E, H)` field pair into an unknown vector; entries outside
    /// the unknowns must vanish.
    pub fn from_fields(&self, e: &StaggeredField, h: &StaggeredField) -> Result<Vec<Complex64>> {
        e.check_kind(FieldKind::Edge)?;
        h.check_kind(FieldKind::Face)?;
        if **e.grid() != *self.domain || **h.grid() != *self.domain {
            return Err(Error::Shape("fields live on a different domain".into()));
        }
        let mut u: Vec<Complex64> = self.edges.iter().map(|&i| e.values()[i]).collect();
        u.extend(self.faces.iter().map(|&i| h.values()[i]));
        Ok(u)
    }

    pub fn to_fields(&self, u: &[Complex64]) -> Result<(StaggeredField, StaggeredField)> {
        self.check_len(u)?;
        Ok((self.edge_field(&u[..self.n_e()]), self.face_field(&u[self.n_e()..])))
    }

    pub fn edge_field(&self, e: &[Complex64]) -> StaggeredField {
        scatter(&self.domain, FieldKind::Edge, &self.edges, e)
    }

    pub fn face_field(&self, h: &[Complex64]) -> StaggeredField {
        scatter(&self.domain, FieldKind::Face, &self.faces, h)
    }

    pub fn edge_part(&self, e: &StaggeredField) -> Result<Vec<Complex64>> {
        e.check_kind(FieldKind::Edge)?;
        Ok(self.edges.iter().map(|&i| e.values()[i]).collect())
    }

    pub fn face_part(&self, h: &StaggeredField) -> Result<Vec<Complex64>> {
        h.check_kind(FieldKind::Face)?;
        Ok(self.faces.iter().map(|&i| h.values()[i]).collect())
    }

    /// Largest `|<Mcal u, v>_Lambda - <u, Mcal v>_Lambda| / (|u| |v|)` over
    /// seeded random pairs.
    pub fn self_adjoint_defect(&self, probes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flags = vec![true; self.n()];
        let mut worst: f64 = 0.0;
        let norm = self.operator_scale();
        for _ in 0..probes {
            let u = random_vector(&flags, &mut rng);
            let v = random_vector(&flags, &mut rng);
            let lhs = self.lambda_inner(&self.apply(&u)?, &v);
            let rhs = self.lambda_inner(&u, &self.apply(&v)?);
            let scale = norm * self.lambda_norm(&u) * self.lambda_norm(&v);
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).norm() / scale);
            }
        }
        Ok(worst)
    }

    /// Cheap upper bound of `|Mcal|` (row-sum bound of the scaled curl).
    pub fn operator_scale(&self) -> f64 {
        let mut best: f64 = 0.0;
        for r in 0..self.curl.nrows() {
            let s: f64 = self
                .curl
                .row(r)
                .map(|(c, v)| v.abs() * (self.w_f[r] / self.a_f[r]).sqrt() * (self.w_f[r] / self.a_e[c]).sqrt())
                .sum();
            best = best.max(s);
        }
        best.max(f64::MIN_POSITIVE)
    }

    /// Nonzero entries of `Mcal` as `(row, col, value)`.
    pub fn coo(&self) -> Vec<(usize, usize, Complex64)> {
        let ne = self.n_e();
        let mut out = Vec::with_capacity(2 * self.curl.nnz());
        for (r, c, v) in self.curl.triplets() {
            // H row r from E column c
            out.push((ne + r, c, I * v * self.w_f[r] / self.a_f[r]));
            // E row c from H column r
            out.push((c, ne + r, -I * v * self.w_f[r] / self.a_e[c]));
        }
        out.sort_by_key(|&(r, c, _)| (r, c));
        out
    }

    /// Writes [`Self::coo`] as `row col re im` lines.
    pub fn write_coo(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        s.push_str(&format!("# maxwell-coo n={} nnz={}\n", self.n(), 2 * self.curl.nnz()));
        for (r, c, v) in self.coo() {
            s.push_str(&format!("{r} {c} {:.17e} {:.17e}\n", v.re, v.im));
        }
        crate::io::write_atomic(path.as_ref(), s.as_bytes())
    }

    /// `B = A_F^{-1/2} W_F C A_E^{-1/2}` as a dense matrix.
    pub fn scaled_curl_dense(&self) -> Mat<f64> {
        let mut b = Mat::<f64>::zeros(self.n_f(), self.n_e());
        for (r, c, v) in self.curl.triplets() {
            b[(r, c)] += v * self.w_f[r] / (self.a_f[r] * self.a_e[c]).sqrt();
        }
        b
    }

    fn sqrt_lambda(&self) -> Vec<f64> {
        self.lambda_weights().iter().map(|a| a.sqrt()).collect()
    }
}

fn scatter(grid: &Arc<GridDomain>, kind: FieldKind, idx: &[usize], vals: &[Complex64]) -> StaggeredField {
    let mut f = StaggeredField::zeros(grid, kind);
    for (&i, &v) in idx.iter().zip(vals) {
        f.values_mut()[i] = v;
    }
    f
}

fn real_mat_vec(m: &Mat<f64>, x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; m.nrows()];
    for j in 0..m.ncols() {
        let xj = x[j];
        if xj == ZERO {
            continue;
        }
        let col = m.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += xj * col[i];
        }
    }
    out
}

fn real_mat_t_vec(m: &Mat<f64>, x: &[Complex64]) -> Vec<Complex64> {
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            let mut acc = ZERO;
            for (i, xi) in x.iter().enumerate() {
                acc += xi * col[i];
            }
            acc
        })
        .collect()
}

fn euclid(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral decomposition of `Mcal` from the SVD of the scaled curl.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub rank: RankDecision,
    /// Nonzero eigenvalues `+-sigma_k`, sorted by modulus.
    pub eigenvalues: Vec<f64>,
    /// Smallest nonzero modulus (infinite if there is none).
    pub sigma_min: f64,
    /// Dimensions of the `E` and `H` parts of the kernel.
    pub kernel_dims: (usize, usize),
    /// `max |<k_i, k_j>_Lambda - delta_ij|` over the kernel basis.
    pub orthonormality_defect: f64,
    n_e: usize,
    sqrt_a: Vec<f64>,
    /// Left and right singular vectors of the nonzero singular values.
    u_r: Mat<f64>,
    v_r: Mat<f64>,
    sv: Vec<f64>,
    /// Orthonormal null spaces of `B` and `B^T` (scaled coordinates).
    null_e: Mat<f64>,
    null_f: Mat<f64>,
}

/// Full spectral data of `Mcal` by dense SVD.
pub fn kernel_basis(op: &MaxwellOperatorMatrix) -> Result<SpectralData> {
    if op.n() > DENSE_LIMIT {
        return Err(Error::Config(format!(
            "operator of size {} exceeds the dense spectral limit {DENSE_LIMIT}",
            op.n()
        )));
    }
    let b = op.scaled_curl_dense();
    let (ne, nf) = (op.n_e(), op.n_f());
    let (u_all, v_all, sv) = if ne == 0 || nf == 0 {
        (Mat::<f64>::identity(nf, nf), Mat::<f64>::identity(ne, ne), Vec::new())
    } else {
        let svd = b.svd().map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let k = ne.min(nf);
        let sv: Vec<f64> = (0..k).map(|i| svd.S().column_vector()[i]).collect();
        (svd.U().to_owned(), svd.V().to_owned(), sv)
    };
    let rank = rank_decision(sv.clone(), ne, RANK_TOL);
    let r = rank.rank;
    let u_r = Mat::from_fn(nf, r, |i, j| u_all[(i, j)]);
    let v_r = Mat::from_fn(ne, r, |i, j| v_all[(i, j)]);
    let null_e = Mat::from_fn(ne, ne - r, |i, j| v_all[(i, r + j)]);
    let null_f = Mat::from_fn(nf, nf - r, |i, j| u_all[(i, r + j)]);
    let sv: Vec<f64> = sv[..r].to_vec();
    let mut eigenvalues: Vec<f64> = sv.iter().flat_map(|&s| [s, -s]).collect();
    eigenvalues.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let orth = |m: &Mat<f64>| -> f64 {
        let g = m.transpose() * m;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                worst = worst.max((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    };
    let orthonormality_defect = orth(&null_e).max(orth(&null_f));
    Ok(SpectralData {
        rank,
        eigenvalues,
        sigma_min,
        kernel_dims: (ne - r, nf - r),
        orthonormality_defect,
        n_e: ne,
        sqrt_a: op.sqrt_lambda(),
        u_r,
        v_r,
        sv,
        null_e,
        null_f,
    })
}

impl SpectralData {
    pub fn kernel_dim(&self) -> usize {
        self.kernel_dims.0 + self.kernel_dims.1
    }

    /// `j`-th `Lambda`-orthonormal kernel vector in unknown coordinates.
    pub fn kernel_vector(&self, j: usize) -> Vec<Complex64> {
        let n = self.sqrt_a.len();
        let mut u = vec![ZERO; n];
        if j < self.kernel_dims.0 {
            for i in 0..self.n_e {
                u[i] = Complex64::new(self.null_e[(i, j)] / self.sqrt_a[i], 0.0);
            }
        } else {
            let j = j - self.kernel_dims.0;
            for i in 0..n - self.n_e {
                u[self.n_e + i] = Complex64::new(self.null_f[(i, j)] / self.sqrt_a[self.n_e + i], 0.0);
            }
        }
        u
    }

    /// Distance from `omega` to the spectrum (including `0` when the kernel
    /// is nontrivial).
    pub fn distance_to_spectrum(&self, omega: Complex64) -> f64 {
        let mut d = self.eigenvalues.iter().map(|&l| (omega - l).norm()).fold(f64::INFINITY, f64::min);
        if self.kernel_dim() > 0 {
            d = d.min(omega.norm());
        }
        d
    }

    fn to_scaled(&self, u: &[Complex64]) -> Vec<Complex64> {
        u.iter().zip(&self.sqrt_a).map(|(v, s)| v * s).collect()
    }

    fn from_scaled(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().zip(&self.sqrt_a).map(|(v, s)| v / s).collect()
    }

    /// Range projection in scaled coordinates.
    fn range_scaled(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (a, b) = x.split_at(self.n_e);
        let mut out = real_mat_vec(&self.v_r, &real_mat_t_vec(&self.v_r, a));
        out.extend(real_mat_vec(&self.u_r, &real_mat_t_vec(&self.u_r, b)));
        out
    }

    /// `Mcal_R^{-1}` in scaled coordinates (on range inputs).
    fn inverse_scaled(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (p, q) = x.split_at(self.n_e);
        let inv = |v: Vec<Complex64>| -> Vec<Complex64> { v.into_iter().zip(&self.sv).map(|(c, s)| c / s).collect() };
        let mq: Vec<Complex64> = q.iter().map(|v| -I * v).collect();
        let ip: Vec<Complex64> = p.iter().map(|v| I * v).collect();
        let mut out = real_mat_vec(&self.v_r, &inv(real_mat_t_vec(&self.u_r, &mq)));
        out.extend(real_mat_vec(&self.u_r, &inv(real_mat_t_vec(&self.v_r, &ip))));
        out
    }

    /// `Lambda`-orthogonal projection onto the range of `Mcal`.
    pub fn project_range(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.from_scaled(&self.range_scaled(&self.to_scaled(u)))
    }

    /// `Lambda`-orthogonal projection onto the kernel of `Mcal`.
    pub fn project_kernel(&self, u: &[Complex64]) -> Vec<Complex64> {
        let r = self.project_range(u);
        u.iter().zip(&r).map(|(a, b)| a - b).collect()
    }
}

/// Basis of the harmonic (Dirichlet-Neumann) fields of one side.
#[derive(Clone, Debug)]
pub struct HarmonicFields {
    pub side: Side,
    /// Part vectors (edge unknowns for the electric side, face unknowns for
    /// the magnetic side), orthonormal in the `eps`/`mu` inner product.
    pub basis: Vec<Vec<Complex64>>,
    pub rank: RankDecision,
}

impl HarmonicFields {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

fn row_normalized_stack(blocks: &[&Mat<f64>]) -> Mat<f64> {
    let nc = blocks[0].ncols();
    let nr: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::<f64>::zeros(nr, nc);
    let mut r0 = 0;
    for b in blocks {
        for i in 0..b.nrows() {
            let nrm = (0..nc).map(|j| b[(i, j)].powi(2)).sum::<f64>().sqrt();
            if nrm > 0.0 {
                for j in 0..nc {
                    out[(r0 + i, j)] = b[(i, j)] / nrm;
                }
            }
        }
        r0 += b.nrows();
    }
    out
}

/// Electric side: `ker C` intersected with `ker(G^T A_E)` on the edge
/// unknowns. Magnetic side: `ker(C^T W_F)` intersected with
/// `ker(D mu)` on the face unknowns. The null space is computed by dense
/// SVD of the row-normalized stack in the `A^{1/2}`-scaled coordinates.
pub fn harmonic_fields(op: &MaxwellOperatorMatrix, side: Side) -> Result<HarmonicFields> {
    let (ne, nf) = (op.n_e(), op.n_f());
    let (stack, scale) = match side {
        Side::Electric => {
            let mut c = Mat::<f64>::zeros(nf, ne);
            for (r, col, v) in op.curl.triplets() {
                c[(r, col)] += v / op.a_e[col].sqrt();
            }
            let mut g = Mat::<f64>::zeros(op.nodes.len(), ne);
            for (r, col, v) in op.grad.triplets() {
                g[(col, r)] += v * op.a_e[r].sqrt();
            }
            (row_normalized_stack(&[&c, &g]), &op.a_e)
        }
        Side::Magnetic => {
            let mut ct = Mat::<f64>::zeros(ne, nf);
            for (r, col, v) in op.curl.triplets() {
                ct[(col, r)] += v * op.w_f[r] / op.a_f[r].sqrt();
            }
            let mut d = Mat::<f64>::zeros(op.cells.len(), nf);
            for (r, col, v) in op.div.triplets() {
                d[(r, col)] += v * op.a_f[col].sqrt() / op.w_f[col];
            }
            (row_normalized_stack(&[&ct, &d]), &op.a_f)
        }
    };
    let (null, rank) = if stack.ncols() == 0 {
        (Mat::zeros(0, 0), rank_decision(Vec::new(), 0, RANK_TOL))
    } else {
        nullspace(stack.as_ref(), RANK_TOL)?
    };
    let basis = (0..null.ncols())
        .map(|j| (0..null.nrows()).map(|i| Complex64::new(null[(i, j)] / scale[i].sqrt(), 0.0)).collect())
        .collect();
    Ok(HarmonicFields { side, basis, rank })
}

/// Three-way decomposition of one side of the system.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub side: Side,
    pub gradient_part: StaggeredField,
    pub rot_part: StaggeredField,
    pub harmonic_part: StaggeredField,
    /// `|x - (g + r + h)| / |x|` in the material norm.
    pub reconstruction_residual: f64,
    /// Largest pairwise `|<a, b>| / |x|^2` over the three parts.
    pub orthogonality_defect: f64,
    pub iterations: (usize, usize),
}

/// Relative tolerance of the projection solves.
pub const PROJECTION_TOL: f64 = 1e-14;

/// Splits an edge field (electric side) or face field (magnetic side) into
/// its gradient, rotation and harmonic parts, orthogonal in the `eps`
/// (resp. `mu`) inner product. Both projections are least-squares solves by
/// conjugate gradients on the normal equations.
///
/// Electric: gradient part in `grad H^1_{Gamma1}`, rotation part in
/// `eps^{-1} rot_{Gamma2}`. Magnetic: rotation part in `rot_{Gamma1}`,
/// gradient part in `mu^{-1}` times the `Gamma2`-normal gradient range.
pub fn helmholtz_decompose(op: &MaxwellOperatorMatrix, x: &StaggeredField, side: Side) -> Result<DecompositionResult> {
    let (xv, a) = match side {
        Side::Electric => (op.edge_part(x)?, &op.a_e),
        Side::Magnetic => (op.face_part(x)?, &op.a_f),
    };
    let n = xv.len();
    let max_iter = 50 * (n + 10);
    let mul = |v: &[Complex64], d: &[f64]| -> Vec<Complex64> { v.iter().zip(d).map(|(a, b)| a * b).collect() };
    let div_ = |v: &[Complex64], d: &[f64]| -> Vec<Complex64> { v.iter().zip(d).map(|(a, b)| a / b).collect() };
    let ax = mul(&xv, a);

    let xn = norm_w(&xv, a);
    // stop each solve at an absolute residual PROJECTION_TOL * |P| |x|, so
    // data already (almost) orthogonal to a range terminate immediately
    let solve = |apply: &dyn Fn(&[Complex64]) -> Vec<Complex64>, rhs: &[Complex64], col_norm: f64| -> Result<(Vec<Complex64>, usize)> {
        let bn = euclid(rhs);
        let target = PROJECTION_TOL * col_norm * xn;
        if bn <= target {
            return Ok((vec![ZERO; rhs.len()], 0));
        }
        conjugate_gradient(apply, rhs, PROJECTION_TOL.max(target / bn), max_iter)
    };
    // largest A-norm of a column of P
    let col_norm = |m: &CsrMatrix, transpose: bool, f: &dyn Fn(usize, usize, f64) -> f64| -> f64 {
        let mut acc = vec![0.0; if transpose { m.nrows() } else { m.ncols() }];
        for (r, c, v) in m.triplets() {
            let j = if transpose { r } else { c };
            acc[j] += f(r, c, v);
        }
        acc.into_iter().fold(0.0, f64::max).sqrt()
    };

    let (p1, it1, p2, it2) = match side {
        Side::Electric => {
            // P1 = G, P2 = A_E^{-1} C^T W_F
            let n1 = col_norm(&op.grad, false, &|r, _, v| v * v * a[r]);
            let rhs1 = op.grad_t.apply(&ax);
            let (w, it1) = solve(&|v| op.grad_t.apply(&mul(&op.grad.apply(v), a)), &rhs1, n1)?;
            let p1 = op.grad.apply(&w);
            let n2 = col_norm(&op.curl, true, &|r, c, v| (v * op.w_f[r]).powi(2) / a[c]);
            let rhs2 = mul(&op.curl.apply(&xv), &op.w_f);
            let p2_of = |y: &[Complex64]| div_(&op.curl_t.apply(&mul(y, &op.w_f)), a);
            let (y, it2) = solve(&|v| mul(&op.curl.apply(&p2_of(v)), &op.w_f), &rhs2, n2)?;
            (p1, it1, p2_of(&y), it2)
        }
        Side::Magnetic => {
            // P1 = A_F^{-1} D^T W_C, P2 = C
            let n1 = col_norm(&op.div, true, &|r, c, v| (v * op.w_c[r]).powi(2) / a[c]);
            let rhs1 = mul(&op.div.apply(&xv), &op.w_c);
            let p1_of = |y: &[Complex64]| div_(&op.div_t.apply(&mul(y, &op.w_c)), a);
            let (b, it1) = solve(&|v| mul(&op.div.apply(&p1_of(v)), &op.w_c), &rhs1, n1)?;
            let n2 = col_norm(&op.curl, false, &|r, _, v| v * v * a[r]);
            let rhs2 = op.curl_t.apply(&ax);
            let (c, it2) = solve(&|v| op.curl_t.apply(&mul(&op.curl.apply(v), a)), &rhs2, n2)?;
            (p1_of(&b), it1, op.curl.apply(&c), it2)
        }
    };
    let h: Vec<Complex64> = (0..n).map(|i| xv[i] - p1[i] - p2[i]).collect();
    let rec: Vec<Complex64> = (0..n).map(|i| xv[i] - p1[i] - p2[i] - h[i]).collect();
    let reconstruction_residual = if xn == 0.0 { 0.0 } else { norm_w(&rec, a) / xn };
    let cos = |u: &[Complex64], v: &[Complex64]| -> f64 {
        if xn == 0.0 {
            0.0
        } else {
            dot_w(u, v, a).norm() / (xn * xn)
        }
    };
    let orthogonality_defect = cos(&p1, &p2).max(cos(&p1, &h)).max(cos(&p2, &h));
    let field = |v: &[Complex64]| match side {
        Side::Electric => op.edge_field(v),
        Side::Magnetic => op.face_field(v),
    };
    let (gradient_part, rot_part) = match side {
        Side::Electric => (field(&p1), field(&p2)),
        Side::Magnetic => (field(&p1), field(&p2)),
    };
    Ok(DecompositionResult {
        side,
        gradient_part,
        rot_part,
        harmonic_part: field(&h),
        reconstruction_residual,
        orthogonality_defect,
        iterations: (it1, it2),
    })
}

/// The sparse system `(M + i omega Lambda) u = d` multiplied by `W`.
fn resolvent_triplets(op: &MaxwellOperatorMatrix, omega: Complex64) -> Vec<(usize, usize, Complex64)> {
    let ne = op.n_e();
    let mut t = Vec::with_capacity(2 * op.curl.nnz() + op.n());
    for (i, a) in op.a_e.iter().enumerate() {
        t.push((i, i, I * omega * a));
    }
    for (i, a) in op.a_f.iter().enumerate() {
        t.push((ne + i, ne + i, I * omega * a));
    }
    for (r, c, v) in op.curl.triplets() {
        let wv = Complex64::new(v * op.w_f[r], 0.0);
        t.push((ne + r, c, wv));
        t.push((c, ne + r, -wv));
    }
    t
}

/// A factorized `M + i omega Lambda`, reusable for many right-hand sides.
#[derive(Debug)]
pub struct Resolvent {
    omega: Complex64,
    lu: SparseLu,
    w: Vec<f64>,
}

impl Resolvent {
    /// Factorizes after checking `omega` against `spectrum`. A real `omega`
    /// needs the spectrum for that check.
    pub fn new(op: &MaxwellOperatorMatrix, spectrum: Option<&SpectralData>, omega: Complex64) -> Result<Self> {
        match spectrum {
            Some(s) => {
                let d = s.distance_to_spectrum(omega);
                if d < NEAR_SINGULAR_TOL {
                    return Err(Error::NearSingular { omega: format!("{omega}"), distance: d });
                }
            }
            None if omega.im == 0.0 => {
                return Err(Error::Precondition("a real frequency must be checked against the spectrum".into()));
            }
            None => {}
        }
        let lu = SparseLu::new(op.n(), &resolvent_triplets(op, omega))?;
        Ok(Resolvent { omega, lu, w: op.plain_weights() })
    }

    pub fn omega(&self) -> Complex64 {
        self.omega
    }

    /// Solves for data `d = (F, G)` in unknown coordinates.
    pub fn solve(&self, d: &[Complex64]) -> Vec<Complex64> {
        let rhs: Vec<Complex64> = d.iter().zip(&self.w).map(|(v, w)| v * w).collect();
        self.lu.solve(&rhs)
    }
}

/// `(E, H) = L_{Lambda, omega}(F, G)`, the solution of `(M + i omega Lambda)(E, H) = (F, G)`.
pub fn resolvent_solve(
    op: &MaxwellOperatorMatrix,
    spectrum: Option<&SpectralData>,
    omega: Complex64,
    f: &StaggeredField,
    g: &StaggeredField,
) -> Result<(StaggeredField, StaggeredField)> {
    let d = op.from_fields(f, g)?;
    let u = Resolvent::new(op, spectrum, omega)?.solve(&d);
    op.to_fields(&u)
}

/// Scaled form of `i Lambda^{-1} d`.
fn scaled_data(op: &MaxwellOperatorMatrix, spec: &SpectralData, d: &[Complex64]) -> Vec<Complex64> {
    let v: Vec<Complex64> = op.apply_lambda_inv(d).into_iter().map(|x| I * x).collect();
    spec.to_scaled(&v)
}

/// Tolerance on the kernel component of static-inverse inputs.
pub const KERNEL_COMPONENT_TOL: f64 = 1e-10;

/// `L_0 d`: the solution in the range of `Mcal` of `Mcal u = i Lambda^{-1} d`.
/// The kernel component of `Lambda^{-1} d` must vanish.
pub fn static_inverse(op: &MaxwellOperatorMatrix, spec: &SpectralData, d: &[Complex64]) -> Result<Vec<Complex64>> {
    op.check_len(d)?;
    let s = scaled_data(op, spec, d);
    let r = spec.range_scaled(&s);
    let sn = euclid(&s);
    let kn = euclid(&s.iter().zip(&r).map(|(a, b)| a - b).collect::<Vec<_>>());
    if sn > 0.0 && kn > KERNEL_COMPONENT_TOL * sn {
        return Err(Error::Constraint("static data has a kernel component".into(), kn / sn));
    }
    Ok(spec.from_scaled(&spec.inverse_scaled(&r)))
}

#[derive(Clone, Debug, Serialize)]
pub struct NeumannDiagnostics {
    pub omega: [f64; 2],
    pub sigma_min: f64,
    /// `Lambda` norms of the range terms `omega^j L_0^{j+1} pi_R d`.
    pub term_norms: Vec<f64>,
    /// `Lambda` norm of the kernel term `-omega^{-1} pi_N`.
    pub kernel_term_norm: f64,
    /// Geometric decay ratio fitted on the tail of `term_norms`.
    pub fitted_ratio: f64,
    pub predicted_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct NeumannResult {
    pub solution: Vec<Complex64>,
    pub kernel_term: Vec<Complex64>,
    pub diagnostics: NeumannDiagnostics,
}

/// Low-frequency expansion `L_omega = -omega^{-1} pi_N + sum_j omega^j L_0^{j+1} pi_R`
/// (in `i Lambda^{-1}`-scaled data), summed until a term drops below
/// `tail_tol` times the partial sum.
pub fn neumann_series(
    op: &MaxwellOperatorMatrix,
    spec: &SpectralData,
    omega: Complex64,
    d: &[Complex64],
    tail_tol: f64,
) -> Result<NeumannResult> {
    op.check_len(d)?;
    if omega.norm() >= spec.sigma_min {
        return Err(Error::Divergence { omega_abs: omega.norm(), sigma_min: spec.sigma_min });
    }
    let s = scaled_data(op, spec, d);
    let r = spec.range_scaled(&s);
    let k: Vec<Complex64> = s.iter().zip(&r).map(|(a, b)| a - b).collect();
    let sn = euclid(&s);
    let kernel_term = if omega == Complex64::new(0.0, 0.0) {
        let kn = euclid(&k);
        if sn > 0.0 && kn > KERNEL_COMPONENT_TOL * sn {
            return Err(Error::Constraint("omega = 0 needs kernel-free data".into(), kn / sn));
        }
        vec![ZERO; s.len()]
    } else {
        k.iter().map(|v| -v / omega).collect()
    };
    let mut sum = kernel_term.clone();
    let mut term = spec.inverse_scaled(&r);
    let mut norms = Vec::new();
    const MAX_TERMS: usize = 10_000;
    loop {
        let tn = euclid(&term);
        norms.push(tn);
        for (a, b) in sum.iter_mut().zip(&term) {
            *a += b;
        }
        let total = euclid(&sum);
        if tn == 0.0 || tn <= tail_tol * total || omega == Complex64::new(0.0, 0.0) {
            break;
        }
        if norms.len() >= MAX_TERMS {
            return Err(Error::NoConvergence { iterations: MAX_TERMS, residual: tn / total });
        }
        term = spec.inverse_scaled(&term).into_iter().map(|v| v * omega).collect();
    }
    let fitted_ratio = fit_ratio(&norms);
    let kernel_term_norm = euclid(&kernel_term);
    Ok(NeumannResult {
        solution: spec.from_scaled(&sum),
        kernel_term: spec.from_scaled(&kernel_term),
        diagnostics: NeumannDiagnostics {
            omega: [omega.re, omega.im],
            sigma_min: spec.sigma_min,
            term_norms: norms,
            kernel_term_norm,
            fitted_ratio,
            predicted_ratio: omega.norm() / spec.sigma_min,
        },
    })
}

/// Geometric ratio from a log-linear fit over the second half of the
/// positive terms.
fn fit_ratio(norms: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = norms.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, &v)| (i as f64, v.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let tail = &pts[pts.len() / 2..];
    let tail = if tail.len() < 2 { &pts[pts.len() - 2..] } else { tail };
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxy / sxx).exp()
}

/// Writes the spectrum as CSV.
pub fn write_spectrum_csv(spec: &SpectralData, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# maxlow-csv v1")?;
    writeln!(buf, "index,eigenvalue,modulus")?;
    for (i, l) in spec.eigenvalues.iter().enumerate() {
        writeln!(buf, "{i},{l:.17e},{:.17e}", l.abs())?;
    }
    crate::io::write_atomic(path.as_ref(), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::presets::{cube_with_cavity, solid_cube};
    use crate::grid::BoundaryLabel;
    use crate::linalg::dense_solve;

    fn cavity() -> MaxwellOperatorMatrix {
        let d = Arc::new(cube_with_cavity(6, 2, 0.5, BoundaryLabel::Gamma1).unwrap());
        assemble(&d, &MaterialLaw::vacuum()).unwrap()
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_vector(&vec![true; n], &mut rng)
    }

    #[test]
    fn single_cell_stencil() {
        let h = 0.5;
        let d = Arc::new(solid_cube(1, h, BoundaryLabel::Gamma2).unwrap());
        let op = assemble(&d, &MaterialLaw::vacuum()).unwrap();
        assert_eq!((op.n_e(), op.n_f()), (12, 6));
        // every face sees its four edges with coefficient +-1/h
        for r in 0..op.curl.nrows() {
            let row: Vec<f64> = op.curl.row(r).map(|(_, v)| v).collect();
            assert_eq!(row.len(), 4);
            assert!(row.iter().all(|v| (v.abs() - 1.0 / h).abs() < 1e-15));
            assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), 2);
        }
    }

    #[test]
    fn vacuum_operator_is_i_times_real() {
        let op = cavity();
        for (_, _, v) in op.coo() {
            assert_eq!(v.re, 0.0);
        }
    }

    #[test]
    fn doubling_eps_halves_electric_rows() {
        let d = Arc::new(cube_with_cavity(6, 2, 0.5, BoundaryLabel::Gamma1).unwrap());
        let a = assemble(&d, &MaterialLaw::homogeneous(1.0, 1.0).unwrap()).unwrap();
        let b = assemble(&d, &MaterialLaw::homogeneous(2.0, 1.0).unwrap()).unwrap();
        for ((r, c, x), (_, _, y)) in a.coo().into_iter().zip(b.coo()) {
            let _ = c;
            if r < a.n_e() {
                assert!((x - 2.0 * y).norm() < 1e-13 * x.norm());
            } else {
                assert!((x - y).norm() < 1e-13 * x.norm());
            }
        }
    }

    #[test]
    fn matrix_matches_field_operators() {
        let op = cavity();
        let u = rand_vec(op.n(), 3);
        let mu = op.apply_m(&u).unwrap();
        let (e, h) = op.to_fields(&u).unwrap();
        let ce = crate::operators::discrete_curl(&e, Mask::Gamma1).unwrap();
        let rh = crate::operators::dual_curl(&h, Mask::Gamma1).unwrap();
        let (me, mh) = op.to_fields(&mu).unwrap();
        assert!(mh.sub(&ce).unwrap().max_abs() <= 1e-13 * ce.max_abs());
        assert!(me.add(&rh).unwrap().max_abs() <= 1e-13 * rh.max_abs());
    }

    #[test]
    fn operator_is_lambda_self_adjoint() {
        let d = Arc::new(cube_with_cavity(6, 2, 0.5, BoundaryLabel::Gamma2).unwrap());
        let law = MaterialLaw::random_spd(d.len(FieldKind::Cell), 1.0, 2.0, 0.5, 9).unwrap();
        let op = assemble(&d, &law).unwrap();
        assert!(op.self_adjoint_defect(100, 1).unwrap() <= 1e-12);
    }

    #[test]
    fn kernel_is_annihilated_and_orthonormal() {
        let op = cavity();
        let s = kernel_basis(&op).unwrap();
        assert!(s.orthonormality_defect < 1e-12);
        for j in (0..s.kernel_dim()).step_by(7) {
            let k = s.kernel_vector(j);
            let mk = op.apply(&k).unwrap();
            assert!(op.lambda_norm(&mk) <= 1e-10 * op.lambda_norm(&k) * op.operator_scale());
        }
    }

    #[test]
    fn spectrum_matches_dense_eigen_oracle() {
        let d = Arc::new(solid_cube(2, 0.5, BoundaryLabel::Gamma2).unwrap());
        let law = MaterialLaw::random_spd(8, 1.0, 1.0, 0.4, 5).unwrap();
        let op = assemble(&d, &law).unwrap();
        let s = kernel_basis(&op).unwrap();
        // Hermitian form Lambda^{1/2} Mcal Lambda^{-1/2}
        let n = op.n();
        let sa = op.sqrt_lambda();
        let mut m = Mat::<faer::c64>::zeros(n, n);
        for (r, c, v) in op.coo() {
            m[(r, c)] = v * sa[r] / sa[c];
        }
        let eig = m.self_adjoint_eigen(faer::Side::Lower).unwrap();
        let mut ev: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i].re).collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        let mut ours: Vec<f64> = s.eigenvalues.clone();
        ours.extend(std::iter::repeat(0.0).take(s.kernel_dim()));
        ours.sort_by(|a, b| a.total_cmp(b));
        let scale = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in ev.iter().zip(&ours) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn resolvent_matches_dense_lu() {
        let op = cavity();
        let w = Complex64::new(0.0, 0.3);
        let d = rand_vec(op.n(), 11);
        let res = Resolvent::new(&op, None, w).unwrap();
        let u = res.solve(&d);
        assert!(op.relative_residual(w, &u, &d).unwrap() <= 1e-10);
        let n = op.n();
        let mut a = Mat::<faer::c64>::zeros(n, n);
        for (r, c, v) in resolvent_triplets(&op, w) {
            a[(r, c)] += v;
        }
        let pw = op.plain_weights();
        let rhs: Vec<Complex64> = d.iter().zip(&pw).map(|(v, w)| v * w).collect();
        let u2 = dense_solve(&a, &rhs);
        let diff: Vec<Complex64> = u.iter().zip(&u2).map(|(a, b)| a - b).collect();
        assert!(op.lambda_norm(&diff) <= 1e-10 * op.lambda_norm(&u2));
    }

    #[test]
    fn resolvent_of_zero_is_zero_and_real_omega_needs_spectrum() {
        let op = cavity();
        let res = Resolvent::new(&op, None, Complex64::new(0.1, 0.5)).unwrap();
        assert!(res.solve(&vec![ZERO; op.n()]).iter().all(|v| *v == ZERO));
        assert!(matches!(Resolvent::new(&op, None, Complex64::new(0.5, 0.0)), Err(Error::Precondition(_))));
        let s = kernel_basis(&op).unwrap();
        let ev = Complex64::new(s.eigenvalues[0], 0.0);
        assert!(matches!(Resolvent::new(&op, Some(&s), ev), Err(Error::NearSingular { .. })));
        assert!(matches!(Resolvent::new(&op, Some(&s), ZERO), Err(Error::NearSingular { .. })));
    }

    #[test]
    fn resolvent_on_kernel_is_minus_inverse_omega() {
        // L_omega(Lambda K) = i (Mcal - omega)^{-1} K = -i K / omega
        let op = cavity();
        let s = kernel_basis(&op).unwrap();
        let w = Complex64::new(0.2, 0.1);
        let k = s.kernel_vector(3);
        let d = op.apply_lambda(&k);
        let u = Resolvent::new(&op, Some(&s), w).unwrap().solve(&d);
        let expect: Vec<Complex64> = k.iter().map(|v| -I * v / w).collect();
        let diff: Vec<Complex64> = u.iter().zip(&expect).map(|(a, b)| a - b).collect();
        assert!(op.lambda_norm(&diff) <= 1e-10 * op.lambda_norm(&expect));
    }

    #[test]
    fn static_inverse_inverts_on_the_range() {
        let op = cavity();
        let s = kernel_basis(&op).unwrap();
        let raw = rand_vec(op.n(), 4);
        assert!(matches!(static_inverse(&op, &s, &raw), Err(Error::Constraint(..))));
        // data whose i Lambda^{-1} image lies in the range
        let v = s.project_range(&raw);
        let d: Vec<Complex64> = op.apply_lambda(&v).into_iter().map(|x| -I * x).collect();
        let u = static_inverse(&op, &s, &d).unwrap();
        let mu = op.apply(&u).unwrap();
        let diff: Vec<Complex64> = mu.iter().zip(&v).map(|(a, b)| a - b).collect();
        assert!(op.lambda_norm(&diff) <= 1e-10 * op.lambda_norm(&v));
        for j in 0..s.kernel_dim().min(20) {
            assert!(op.lambda_inner(&u, &s.kernel_vector(j)).norm() <= 1e-10 * op.lambda_norm(&u));
        }
        assert!(static_inverse(&op, &s, &vec![ZERO; op.n()]).unwrap().iter().all(|x| *x == ZERO));
    }

    #[test]
    fn neumann_series_matches_resolvent() {
        let op = cavity();
        let s = kernel_basis(&op).unwrap();
        let w = Complex64::new(0.1 * s.sigma_min, 0.0);
        let d = rand_vec(op.n(), 8);
        let ns = neumann_series(&op, &s, w, &d, 1e-15).unwrap();
        let u = Resolvent::new(&op, Some(&s), w).unwrap().solve(&d);
        let diff: Vec<Complex64> = u.iter().zip(&ns.solution).map(|(a, b)| a - b).collect();
        assert!(op.lambda_norm(&diff) <= 1e-8 * op.lambda_norm(&u));
        let dg = &ns.diagnostics;
        assert!((dg.fitted_ratio - dg.predicted_ratio).abs() <= 0.2 * dg.predicted_ratio);
        let big = Complex64::new(1.5 * s.sigma_min, 0.0);
        assert!(matches!(neumann_series(&op, &s, big, &d, 1e-12), Err(Error::Divergence { .. })));
    }

    #[test]
    fn harmonic_dimensions_of_small_domains() {
        let solid = Arc::new(solid_cube(4, 0.5, BoundaryLabel::Gamma1).unwrap());
        let op = assemble(&solid, &MaterialLaw::vacuum()).unwrap();
        assert_eq!(harmonic_fields(&op, Side::Electric).unwrap().dim(), 0);
        let op = cavity();
        let hf = harmonic_fields(&op, Side::Electric).unwrap();
        assert_eq!(hf.dim(), 1);
        assert!(!hf.rank.ambiguous);
        // harmonic fields lie in the kernel of Mcal
        let mut u = hf.basis[0].clone();
        u.extend(vec![ZERO; op.n_f()]);
        assert!(op.lambda_norm(&op.apply(&u).unwrap()) < 1e-10 * op.operator_scale());
    }

    #[test]
    fn decomposition_pure_inputs() {
        let op = cavity();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_vector(&vec![true; op.nodes.len()], &mut rng);
        let g = op.edge_field(&op.grad.apply(&w));
        let r = helmholtz_decompose(&op, &g, Side::Electric).unwrap();
        assert!(r.rot_part.max_abs() + r.harmonic_part.max_abs() <= 1e-10 * g.max_abs());
        let hf = harmonic_fields(&op, Side::Electric).unwrap();
        let k = op.edge_field(&hf.basis[0]);
        let r = helmholtz_decompose(&op, &k, Side::Electric).unwrap();
        assert!(r.harmonic_part.sub(&k).unwrap().max_abs() <= 1e-10 * k.max_abs());
    }

    #[test]
    fn decomposition_of_random_fields_is_orthogonal() {
        let op = cavity();
        for (side, seed) in [(Side::Electric, 1), (Side::Magnetic, 2)] {
            let n = if side == Side::Electric { op.n_e() } else { op.n_f() };
            let x = rand_vec(n, seed);
            let f = if side == Side::Electric { op.edge_field(&x) } else { op.face_field(&x) };
            let r = helmholtz_decompose(&op, &f, side).unwrap();
            assert!(r.orthogonality_defect <= 1e-10, "{side:?} {}", r.orthogonality_defect);
            assert!(r.reconstruction_residual <= 1e-10);
        }
    }
}
