//! Dense and sparse linear-algebra helpers on top of `faer`: rank decisions,
//! null spaces, conjugate gradients, LU solves and Gram-Schmidt.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat, MatRef};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::{dot_w, norm_w};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// Required separation between the last kept and first dropped singular value.
pub const RANK_GAP: f64 = 10.0;

#[derive(Clone, Debug, serde::Serialize)]
pub struct RankDecision {
    /// Singular values in nonincreasing order (padded with zeros up to the
    /// column count).
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub nullity: usize,
    /// Ratio of the smallest kept to the largest dropped singular value
    /// (infinite when one side is empty).
    pub gap: f64,
    pub ambiguous: bool,
}

/// Decides the numerical rank of an `m x n` matrix from its singular values.
pub fn rank_decision(mut sv: Vec<f64>, ncols: usize, rel_tol: f64) -> RankDecision {
    sv.resize(ncols.max(sv.len()), 0.0);
    let smax = sv.first().copied().unwrap_or(0.0);
    let cut = rel_tol * smax;
    let rank = if smax == 0.0 { 0 } else { sv.iter().take(ncols).filter(|&&s| s > cut).count() };
    let kept = if rank > 0 { sv[rank - 1] } else { f64::INFINITY };
    let dropped = if rank < ncols { sv[rank] } else { 0.0 };
    let gap = if dropped == 0.0 { f64::INFINITY } else { kept / dropped };
    let ambiguous = gap < RANK_GAP;
    if ambiguous {
        log::warn!("ambiguous rank decision: rank {rank}, singular-value gap {gap:.3e}");
    }
    RankDecision { singular_values: sv, rank, nullity: ncols - rank, gap, ambiguous }
}

/// Orthonormal basis (columns) of the right null space of `a`.
pub fn nullspace(a: MatRef<'_, f64>, rel_tol: f64) -> Result<(Mat<f64>, RankDecision)> {
    let n = a.ncols();
    if n == 0 {
        return Ok((Mat::zeros(0, 0), rank_decision(Vec::new(), 0, rel_tol)));
    }
    let svd = a.svd().map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let k = a.nrows().min(n);
    let sv: Vec<f64> = (0..k).map(|i| svd.S().column_vector()[i]).collect();
    let dec = rank_decision(sv, n, rel_tol);
    let v = svd.V();
    let basis = Mat::from_fn(n, dec.nullity, |i, j| v[(i, dec.rank + j)]);
    Ok((basis, dec))
}

/// Singular values of `a` in nonincreasing order.
pub fn singular_values(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))
}

/// `sigma_min / sigma_max` over the columns of `a` (zero for rank-deficient
/// tall matrices, one for empty ones).
pub fn min_singular_ratio(a: MatRef<'_, f64>) -> Result<f64> {
    if a.ncols() == 0 {
        return Ok(1.0);
    }
    if a.nrows() < a.ncols() {
        return Ok(0.0);
    }
    let sv = singular_values(a)?;
    let smax = sv[0];
    if smax == 0.0 {
        return Ok(0.0);
    }
    Ok(sv[a.ncols() - 1] / smax)
}

/// Same for complex matrices.
pub fn min_singular_ratio_c(a: MatRef<'_, c64>) -> Result<f64> {
    if a.ncols() == 0 {
        return Ok(1.0);
    }
    if a.nrows() < a.ncols() {
        return Ok(0.0);
    }
    let sv = a.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))?;
    if sv[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(sv[a.ncols() - 1] / sv[0])
}

/// Dense LU solve `a x = b`.
pub fn dense_solve(a: &Mat<c64>, b: &[Complex64]) -> Vec<Complex64> {
    let lu = a.partial_piv_lu();
    let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    lu.solve_in_place(rhs.as_mut());
    (0..b.len()).map(|i| rhs[(i, 0)]).collect()
}

/// Sparse LU factorization of a square complex matrix.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, c64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn new(n: usize, triplets: &[(usize, usize, Complex64)]) -> Result<Self> {
        let trips: Vec<Triplet<usize, usize, c64>> = triplets.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let m = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &trips).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(SparseLu { n, lu })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

/// Conjugate gradients for a Hermitian positive semi-definite operator in
/// the Euclidean inner product. Consistent singular systems converge to the
/// minimum-norm solution when started from zero.
pub fn conjugate_gradient(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<Complex64>, usize)> {
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let bnorm = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    for it in 0..max_iter {
        if rr.sqrt() <= rel_tol * bnorm {
            return Ok((x, it));
        }
        let ap = apply(&p);
        let pap: Complex64 = p.iter().zip(&ap).map(|(a, b)| a.conj() * b).sum();
        if pap.re <= 0.0 {
            break;
        }
        let alpha = rr / pap.re;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rr_new: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
    }
    let res = rr.sqrt() / bnorm;
    if res <= rel_tol {
        return Ok((x, max_iter));
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: res })
}

/// Modified Gram-Schmidt in the weighted inner product, in index order.
/// Returns the orthonormal vectors and the upper-triangular coefficients
/// `r[j][k] = <v_j, q_k>` (k <= j).
pub fn modified_gram_schmidt(vs: &[Vec<Complex64>], w: &[f64]) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let mut qs: Vec<Vec<Complex64>> = Vec::with_capacity(vs.len());
    let mut rs = Vec::with_capacity(vs.len());
    for v in vs {
        let mut u = v.clone();
        let mut coeffs = Vec::with_capacity(qs.len() + 1);
        for q in &qs {
            let c = dot_w(&u, q, w);
            for (a, b) in u.iter_mut().zip(q) {
                *a -= c * b;
            }
            coeffs.push(c);
        }
        let nrm = norm_w(&u, w);
        coeffs.push(Complex64::new(nrm, 0.0));
        if nrm > 0.0 {
            u.iter_mut().for_each(|a| *a /= nrm);
        }
        qs.push(u);
        rs.push(coeffs);
    }
    (qs, rs)
}

pub fn to_cmat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> Mat<c64> {
    Mat::from_fn(rows, cols, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_of_rank_one() {
        let a = Mat::from_fn(3, 3, |i, j| ((i + 1) * (j + 1)) as f64);
        let (n, dec) = nullspace(a.as_ref(), RANK_TOL).unwrap();
        assert_eq!(dec.rank, 1);
        assert_eq!(n.ncols(), 2);
        let prod = &a * &n;
        assert!(prod.norm_max() < 1e-12);
        assert!(!dec.ambiguous);
    }

    #[test]
    fn wide_matrix_has_padded_nullspace() {
        let a = Mat::from_fn(1, 3, |_, j| [1.0, 0.0, 0.0][j]);
        let (n, dec) = nullspace(a.as_ref(), RANK_TOL).unwrap();
        assert_eq!(dec.nullity, 2);
        assert_eq!(n.ncols(), 2);
    }

    #[test]
    fn ambiguous_gap_is_flagged() {
        let dec = rank_decision(vec![1.0, 1e-7, 1e-12], 3, RANK_TOL);
        assert_eq!(dec.rank, 2);
        assert!(!dec.ambiguous);
        let dec = rank_decision(vec![1.0, 5e-8, 9e-9], 3, RANK_TOL);
        assert_eq!(dec.rank, 2);
        assert!(dec.ambiguous);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = vec![Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0), Complex64::new(3.0, 0.5)];
        let apply = |x: &[Complex64]| (0..3).map(|i| (0..3).map(|j| x[j] * a[i][j]).sum()).collect::<Vec<Complex64>>();
        let (x, _) = conjugate_gradient(apply, &b, 1e-14, 50).unwrap();
        let ax = apply(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn sparse_and_dense_lu_agree() {
        let trips = vec![
            (0, 0, Complex64::new(2.0, 1.0)),
            (0, 1, Complex64::new(-1.0, 0.0)),
            (1, 0, Complex64::new(1.0, 0.0)),
            (1, 1, Complex64::new(0.0, 3.0)),
            (2, 2, Complex64::new(1.0, -1.0)),
        ];
        let mut dense = Mat::<c64>::zeros(3, 3);
        for &(r, c, v) in &trips {
            dense[(r, c)] += v;
        }
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(2.0, 2.0)];
        let x1 = SparseLu::new(3, &trips).unwrap().solve(&b);
        let x2 = dense_solve(&dense, &b);
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn gram_schmidt_is_orthonormal() {
        let w = vec![1.0, 2.0, 0.5];
        let vs = vec![
            vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 1.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 1.0), Complex64::new(2.0, 0.0), Complex64::new(1.0, 0.0)],
        ];
        let (qs, _) = modified_gram_schmidt(&vs, &w);
        assert!((dot_w(&qs[0], &qs[0], &w).re - 1.0).abs() < 1e-14);
        assert!(dot_w(&qs[0], &qs[1], &w).norm() < 1e-14);
    }
}
