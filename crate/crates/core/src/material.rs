//! Polynomial weight, weight exponents, and material laws with their
//! mass-lumped Hodge weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, GridDomain};

/// `rho(x) = (1 + |x|^2)^{1/2}`.
#[inline]
pub fn rho(x: [f64; 3]) -> f64 {
    (1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Exponent `t` of the weighted space `L^2_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightExponent(f64);

impl WeightExponent {
    pub const ZERO: WeightExponent = WeightExponent(0.0);

    pub fn new(t: f64) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::Config(format!("weight exponent must be finite, got {t}")));
        }
        if !(-4.0 < t && t < 4.0) {
            log::warn!("weight exponent {t} outside (-4, 4)");
        }
        Ok(WeightExponent(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `rho(x)^{2t}`.
    #[inline]
    pub fn factor(self, x: [f64; 3]) -> f64 {
        if self.0 == 0.0 {
            1.0
        } else {
            rho(x).powf(2.0 * self.0)
        }
    }
}

pub type Tensor3 = [[f64; 3]; 3];

/// `eps = eps0 I + eps_hat`, `mu = mu0 I + mu_hat`, one tensor per cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaterialLaw {
    pub eps0: f64,
    pub mu0: f64,
    /// Empty means identically zero.
    pub eps_hat: Vec<Tensor3>,
    pub mu_hat: Vec<Tensor3>,
    /// Declared decay order of the perturbations (metadata).
    pub kappa: f64,
}

/// Which material tensor weights an inner product.
#[derive(Clone, Copy, Debug)]
pub enum Gamma<'a> {
    Identity,
    Eps(&'a MaterialLaw),
    Mu(&'a MaterialLaw),
}

impl MaterialLaw {
    pub fn homogeneous(eps0: f64, mu0: f64) -> Result<Self> {
        let law = MaterialLaw { eps0, mu0, eps_hat: Vec::new(), mu_hat: Vec::new(), kappa: f64::INFINITY };
        law.validate(0)?;
        Ok(law)
    }

    pub fn vacuum() -> Self {
        MaterialLaw::homogeneous(1.0, 1.0).expect("unit law is valid")
    }

    pub fn with_perturbations(eps0: f64, mu0: f64, eps_hat: Vec<Tensor3>, mu_hat: Vec<Tensor3>, kappa: f64, ncells: usize) -> Result<Self> {
        let law = MaterialLaw { eps0, mu0, eps_hat, mu_hat, kappa };
        law.validate(ncells)?;
        Ok(law)
    }

    /// Random symmetric positive definite law on `ncells` cells: each
    /// perturbation is `A A^T - s I` with `A` uniform in `[-amp, amp]` and `s`
    /// chosen so the smallest eigenvalue stays above `background / 2`.
    pub fn random_spd(ncells: usize, eps0: f64, mu0: f64, amplitude: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |bg: f64| -> Vec<Tensor3> {
            (0..ncells)
                .map(|_| {
                    let mut a = [[0.0; 3]; 3];
                    for row in a.iter_mut() {
                        for v in row.iter_mut() {
                            *v = rng.gen_range(-amplitude..=amplitude);
                        }
                    }
                    let mut t = [[0.0; 3]; 3];
                    for i in 0..3 {
                        for j in 0..3 {
                            t[i][j] = (0..3).map(|k| a[i][k] * a[j][k]).sum();
                        }
                    }
                    let shift = rng.gen_range(0.0..0.5) * bg;
                    for (i, row) in t.iter_mut().enumerate() {
                        row[i] -= shift;
                    }
                    t
                })
                .collect()
        };
        let eps_hat = draw(eps0);
        let mu_hat = draw(mu0);
        MaterialLaw::with_perturbations(eps0, mu0, eps_hat, mu_hat, 0.0, ncells)
    }

    fn validate(&self, ncells: usize) -> Result<()> {
        if !(self.eps0 > 0.0 && self.mu0 > 0.0) {
            return Err(Error::Config(format!("eps0={} and mu0={} must be positive", self.eps0, self.mu0)));
        }
        for (name, hat, bg) in [("eps", &self.eps_hat, self.eps0), ("mu", &self.mu_hat, self.mu0)] {
            if hat.is_empty() {
                continue;
            }
            if hat.len() != ncells {
                return Err(Error::Shape(format!("{name}_hat has {} tensors for {ncells} cells", hat.len())));
            }
            for (c, t) in hat.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..i {
                        if t[i][j] != t[j][i] {
                            return Err(Error::Config(format!("{name} tensor of cell {c} is not symmetric")));
                        }
                    }
                }
                let mut full = *t;
                for (i, row) in full.iter_mut().enumerate() {
                    row[i] += bg;
                }
                let lmin = min_eigenvalue_sym3(&full);
                if !(lmin > 0.0) {
                    return Err(Error::Config(format!("{name} is not positive definite in cell {c} (min eigenvalue {lmin:.3e})")));
                }
            }
        }
        Ok(())
    }

    fn tensor(&self, which: MaterialPart, cell: usize) -> Tensor3 {
        let (bg, hat) = match which {
            MaterialPart::Eps => (self.eps0, &self.eps_hat),
            MaterialPart::Mu => (self.mu0, &self.mu_hat),
        };
        let mut t = hat.get(cell).copied().unwrap_or([[0.0; 3]; 3]);
        for (i, row) in t.iter_mut().enumerate() {
            row[i] += bg;
        }
        t
    }

    pub fn eps(&self, cell: usize) -> Tensor3 {
        self.tensor(MaterialPart::Eps, cell)
    }

    pub fn mu(&self, cell: usize) -> Tensor3 {
        self.tensor(MaterialPart::Mu, cell)
    }

    /// Smallest eigenvalue of `eps` and `mu` over the included cells.
    pub fn min_eigenvalue(&self, domain: &GridDomain) -> f64 {
        domain
            .included_cells()
            .into_iter()
            .flat_map(|c| [min_eigenvalue_sym3(&self.eps(c)), min_eigenvalue_sym3(&self.mu(c))])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.eps_hat.is_empty() && self.mu_hat.is_empty()
    }
}

#[derive(Clone, Copy)]
enum MaterialPart {
    Eps,
    Mu,
}

/// Diagonal Hodge weights of `gamma` on the degrees of freedom of `kind`:
/// the geometric weight times the material coefficient along the entity's
/// direction, averaged over the included cells around it.
pub fn hodge_weights(domain: &GridDomain, kind: FieldKind, gamma: Gamma<'_>) -> Result<Vec<f64>> {
    let geo = domain.geometric_weights(kind);
    let (law, part) = match gamma {
        Gamma::Identity => return Ok(geo),
        Gamma::Eps(l) => (l, MaterialPart::Eps),
        Gamma::Mu(l) => (l, MaterialPart::Mu),
    };
    if !kind.is_vector() {
        return Err(Error::Shape(format!("material weights need a vector field, got {}", kind.name())));
    }
    if let (MaterialPart::Eps, true) | (MaterialPart::Mu, true) = (part, law.is_homogeneous()) {
        let bg = match part {
            MaterialPart::Eps => law.eps0,
            MaterialPart::Mu => law.mu0,
        };
        return Ok(geo.into_iter().map(|w| w * bg).collect());
    }
    let mut out = vec![0.0; geo.len()];
    for (i, w) in out.iter_mut().enumerate() {
        if geo[i] == 0.0 {
            continue;
        }
        let d = domain.direction(kind, i);
        let cells: Vec<usize> = domain.adjacent_cells(kind, i).into_iter().filter(|&c| !domain.is_excluded(c)).collect();
        let avg = cells.iter().map(|&c| law.tensor(part, c)[d][d]).sum::<f64>() / cells.len() as f64;
        *w = geo[i] * avg;
    }
    Ok(out)
}

/// Smallest eigenvalue of a symmetric 3x3 matrix (trigonometric formula).
pub fn min_eigenvalue_sym3(a: &Tensor3) -> f64 {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    if p1 == 0.0 {
        return a[0][0].min(a[1][1]).min(a[2][2]);
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}
