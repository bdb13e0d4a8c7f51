//! Closed convex cone constraint sets with membership tests and exact
//! Euclidean projection. These are the constant-in-time instances of the
//! constraint correspondence; time dependence is handled by the solver
//! sampling a fresh `Cone` per grid time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum ConeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("polyhedral projection did not converge within {0} iterations")]
    ProjectionNotConverged(usize),
    #[error("invalid cone: {0}")]
    InvalidCone(String),
}

/// A closed convex cone in R^d.
#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    FullSpace(usize),
    ZeroCone(usize),
    NonnegativeOrthant(usize),
    /// Half-line spanned by a unit vector.
    Ray { direction: Vec<f64> },
    /// Linear subspace given by an orthonormal basis.
    LinearSpan { dim: usize, basis: Vec<Vec<f64>> },
    /// Finitely generated cone `{ sum_i w_i g_i : w_i >= 0 }`.
    Polyhedral { dim: usize, generators: Vec<Vec<f64>> },
    Product(Vec<Cone>),
}

/// JSON wire format for a cone spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum ConeSpec {
    Full(usize),
    Zero(usize),
    Orthant(usize),
    Ray(Vec<f64>),
    Span(Vec<Vec<f64>>),
    Polyhedral(Vec<Vec<f64>>),
    Product(Vec<ConeSpec>),
}

impl Cone {
    pub fn ray(direction: Vec<f64>) -> Result<Cone, ConeError> {
        let n = linalg::norm(&direction);
        if direction.is_empty() || n <= 1e-14 {
            return Err(ConeError::InvalidCone("ray direction must be nonzero".into()));
        }
        Ok(Cone::Ray { direction: linalg::scale(&direction, 1.0 / n) })
    }

    /// Subspace spanned by the given vectors; the stored basis is
    /// orthonormalized and near-dependent inputs are dropped.
    pub fn span(dim: usize, vectors: &[Vec<f64>]) -> Result<Cone, ConeError> {
        for v in vectors {
            if v.len() != dim {
                return Err(ConeError::DimensionMismatch { expected: dim, got: v.len() });
            }
        }
        Ok(Cone::LinearSpan { dim, basis: linalg::orthonormalize(vectors) })
    }

    pub fn polyhedral(dim: usize, generators: Vec<Vec<f64>>) -> Result<Cone, ConeError> {
        for g in &generators {
            if g.len() != dim {
                return Err(ConeError::DimensionMismatch { expected: dim, got: g.len() });
            }
        }
        let generators: Vec<Vec<f64>> =
            generators.into_iter().filter(|g| linalg::norm(g) > 1e-14).collect();
        Ok(Cone::Polyhedral { dim, generators })
    }

    pub fn from_spec(spec: &ConeSpec) -> Result<Cone, ConeError> {
        match spec {
            ConeSpec::Full(d) => Ok(Cone::FullSpace(*d)),
            ConeSpec::Zero(d) => Ok(Cone::ZeroCone(*d)),
            ConeSpec::Orthant(d) => Ok(Cone::NonnegativeOrthant(*d)),
            ConeSpec::Ray(dir) => Cone::ray(dir.clone()),
            ConeSpec::Span(vs) => {
                let dim = vs.first().map(|v| v.len()).ok_or_else(|| {
                    ConeError::InvalidCone("span requires at least one vector".into())
                })?;
                Cone::span(dim, vs)
            }
            ConeSpec::Polyhedral(gs) => {
                let dim = gs.first().map(|g| g.len()).ok_or_else(|| {
                    ConeError::InvalidCone("polyhedral requires at least one generator".into())
                })?;
                Cone::polyhedral(dim, gs.clone())
            }
            ConeSpec::Product(parts) => {
                let cones = parts.iter().map(Cone::from_spec).collect::<Result<_, _>>()?;
                Ok(Cone::Product(cones))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Cone::FullSpace(d) | Cone::ZeroCone(d) | Cone::NonnegativeOrthant(d) => *d,
            Cone::Ray { direction } => direction.len(),
            Cone::LinearSpan { dim, .. } | Cone::Polyhedral { dim, .. } => *dim,
            Cone::Product(parts) => parts.iter().map(|c| c.dim()).sum(),
        }
    }

    /// Whether the cone is symmetric, `K = -K`.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Cone::FullSpace(_) | Cone::ZeroCone(_) | Cone::LinearSpan { .. } => true,
            Cone::NonnegativeOrthant(d) => *d == 0,
            Cone::Ray { .. } => false,
            Cone::Polyhedral { dim, generators } => generators.iter().all(|g| {
                let neg = linalg::scale(g, -1.0);
                self_contains_poly(*dim, generators, &neg)
            }),
            Cone::Product(parts) => parts.iter().all(|c| c.is_symmetric()),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ConeError> {
        if x.len() != self.dim() {
            return Err(ConeError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Membership up to `tol`: true iff `dist(x, K) <= tol * (1 + ||x||)`.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool, ConeError> {
        let p = self.project(x)?;
        let dist = linalg::norm(&linalg::sub(x, &p));
        Ok(dist <= tol * (1.0 + linalg::norm(x)))
    }

    /// Euclidean projection onto the cone.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ConeError> {
        self.check_dim(x)?;
        match self {
            Cone::FullSpace(_) => Ok(x.to_vec()),
            Cone::ZeroCone(d) => Ok(vec![0.0; *d]),
            Cone::NonnegativeOrthant(_) => Ok(x.iter().map(|v| v.max(0.0)).collect()),
            Cone::Ray { direction } => {
                let t = linalg::dot(x, direction).max(0.0);
                Ok(linalg::scale(direction, t))
            }
            Cone::LinearSpan { dim, basis } => {
                let mut p = vec![0.0; *dim];
                for b in basis {
                    linalg::axpy(&mut p, linalg::dot(x, b), b);
                }
                Ok(p)
            }
            Cone::Polyhedral { dim, generators } => {
                if generators.is_empty() {
                    return Ok(vec![0.0; *dim]);
                }
                let w = nnls(generators, x)?;
                let mut p = vec![0.0; *dim];
                for (wi, g) in w.iter().zip(generators) {
                    linalg::axpy(&mut p, *wi, g);
                }
                Ok(p)
            }
            Cone::Product(parts) => {
                let mut out = Vec::with_capacity(x.len());
                let mut offset = 0;
                for part in parts {
                    let d = part.dim();
                    out.extend(part.project(&x[offset..offset + d])?);
                    offset += d;
                }
                Ok(out)
            }
        }
    }
}

fn self_contains_poly(dim: usize, generators: &[Vec<f64>], x: &[f64]) -> bool {
    let cone = Cone::Polyhedral { dim, generators: generators.to_vec() };
    cone.contains(x, 1e-9).unwrap_or(false)
}

/// Nonnegative least squares `min ||G w - x||^2, w >= 0` by the classic
/// active-set method. `generators` are the columns of `G`. The iteration cap
/// is `100 * #generators`.
fn nnls(generators: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>, ConeError> {
    let m = generators.len();
    let cap = 100 * m;
    let mut w = vec![0.0f64; m];
    let mut passive = vec![false; m];
    let scale = linalg::norm(x).max(1.0);
    let tol = 1e-12 * scale;

    let residual = |w: &[f64]| -> Vec<f64> {
        let mut r = x.to_vec();
        for (wi, g) in w.iter().zip(generators) {
            linalg::axpy(&mut r, -wi, g);
        }
        r
    };

    // least-squares solve restricted to the passive set, via normal equations
    let solve_passive = |passive: &[bool]| -> Vec<f64> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let k = idx.len();
        if k == 0 {
            return vec![0.0; m];
        }
        let mut gram = linalg::zeros_mat(k);
        let mut rhs = vec![0.0; k];
        for (a, &ja) in idx.iter().enumerate() {
            rhs[a] = linalg::dot(&generators[ja], x);
            for (b, &jb) in idx.iter().enumerate() {
                gram[a][b] = linalg::dot(&generators[ja], &generators[jb]);
            }
        }
        let (z, _) = linalg::pinv_solve(&gram, &rhs, 1e-13);
        let mut full = vec![0.0; m];
        for (a, &j) in idx.iter().enumerate() {
            full[j] = z[a];
        }
        full
    };

    for _ in 0..cap {
        // dual feasibility: gradient of the objective at w is -g_j . r
        let r = residual(&w);
        let mut best = tol;
        let mut best_j = None;
        for j in 0..m {
            if passive[j] {
                continue;
            }
            let d = linalg::dot(&generators[j], &r);
            if d > best {
                best = d;
                best_j = Some(j);
            }
        }
        let Some(j) = best_j else {
            return Ok(w);
        };
        passive[j] = true;

        let mut z = solve_passive(&passive);
        let mut inner = 0;
        while (0..m).any(|i| passive[i] && z[i] <= 0.0) {
            inner += 1;
            if inner > cap {
                return Err(ConeError::ProjectionNotConverged(cap));
            }
            let mut alpha = 1.0f64;
            for i in 0..m {
                if passive[i] && z[i] <= 0.0 && w[i] - z[i] > 0.0 {
                    alpha = alpha.min(w[i] / (w[i] - z[i]));
                }
            }
            for i in 0..m {
                if passive[i] {
                    w[i] += alpha * (z[i] - w[i]);
                    if w[i] <= tol {
                        w[i] = 0.0;
                        passive[i] = false;
                    }
                }
            }
            z = solve_passive(&passive);
        }
        w = z;
    }
    Err(ConeError::ProjectionNotConverged(cap))
}
