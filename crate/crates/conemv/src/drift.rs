//! The sign-indexed drift generators of the control problem, their
//! cone-constrained minimization, and the drift-rate evaluator of the
//! controlled value process.
//!
//! For a wealth fraction `psi` traded while wealth is positive (`Sign::Plus`)
//! or negative (`Sign::Minus`), the generator gives the instantaneous drift
//! contribution per unit of squared wealth. It splits into a continuous part
//! (diffusion, drift and covariation terms, quadratic in `psi`) and a jump
//! part (exact sums over the jump atoms, piecewise quadratic in `psi` and
//! convex with continuous gradient).

#![allow(clippy::needless_range_loop)]

use thiserror::Error;

use crate::cones::{Cone, ConeError};
use crate::linalg;
use crate::model::{JointCharacteristics, LevyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("minimization did not converge within {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid wealth state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// Value of one generator at a point, split into its continuous and jump
/// parts, with the analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorEval {
    pub continuous: f64,
    pub jump: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinStatus {
    /// Unconstrained stationary point (gradient vanishes).
    Interior,
    /// Constraint active at the minimizer.
    Boundary,
    /// Minimizer is the origin.
    AtZero,
    /// Objective decreases beyond the divergence cap.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeMinimum {
    pub minimizer: Vec<f64>,
    pub value: f64,
    pub status: MinStatus,
}

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    pub first_order_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub divergence_cap: f64,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            first_order_tol: 1e-10,
            max_iters: 10_000,
            armijo_c: 1e-4,
            divergence_cap: 1e8,
            warm_start: None,
        }
    }
}

fn check_dims(psi: &[f64], model: &LevyModel, jc: &JointCharacteristics) -> Result<(), DriftError> {
    let d = model.dim();
    if psi.len() != d {
        return Err(DriftError::DimensionMismatch(format!(
            "psi has length {}, expected {}",
            psi.len(),
            d
        )));
    }
    if jc.cov_plus.len() != d || jc.cov_minus.len() != d {
        return Err(DriftError::DimensionMismatch(
            "joint characteristics have wrong dimension".into(),
        ));
    }
    if jc.jump_marks.len() != model.jump_atoms().len() {
        return Err(DriftError::DimensionMismatch(
            "jump marks do not match the model's jump atoms".into(),
        ));
    }
    Ok(())
}

/// Per-atom coefficients of the generator for one sign: the positive-branch
/// weight `own = ell_own + own mark`, the negative-branch weight
/// `other = ell_other + other mark`.
fn atom_weights(sign: Sign, jc: &JointCharacteristics, k: usize) -> (f64, f64) {
    let (y, z) = jc.jump_marks[k];
    match sign {
        Sign::Plus => (jc.ell_plus + y, jc.ell_minus + z),
        Sign::Minus => (jc.ell_minus + z, jc.ell_plus + y),
    }
}

fn ell_own(sign: Sign, jc: &JointCharacteristics) -> f64 {
    match sign {
        Sign::Plus => jc.ell_plus,
        Sign::Minus => jc.ell_minus,
    }
}

fn cov_own(sign: Sign, jc: &JointCharacteristics) -> &[f64] {
    match sign {
        Sign::Plus => &jc.cov_plus,
        Sign::Minus => &jc.cov_minus,
    }
}

/// Evaluates the generator for the given sign at `psi`.
pub fn generator(
    sign: Sign,
    psi: &[f64],
    model: &LevyModel,
    jc: &JointCharacteristics,
) -> Result<GeneratorEval, DriftError> {
    check_dims(psi, model, jc)?;
    let s = sign.factor();
    let ell = ell_own(sign, jc);
    let cov = cov_own(sign, jc);

    let c_psi = linalg::mat_vec(model.diffusion(), psi);
    let continuous = ell * linalg::dot(psi, &c_psi)
        + 2.0 * s * ell * linalg::dot(psi, model.drift())
        + 2.0 * s * linalg::dot(psi, cov);

    let mut jump = 0.0;
    let mut grad_jump = vec![0.0; psi.len()];
    for (k, atom) in model.jump_atoms().iter().enumerate() {
        let (own, other) = atom_weights(sign, jc, k);
        let own_mark = own - ell;
        let t = 1.0 + s * linalg::dot(psi, &atom.size);
        let tp = t.max(0.0);
        let tn = (-t).max(0.0);
        let spu = s * linalg::dot(psi, &atom.size);
        jump += atom.intensity
            * (ell * (tp * tp - 1.0 - 2.0 * spu) + own_mark * (tp * tp - 1.0) + other * tn * tn);
        // chain-rule derivative of the expression above
        let coeff = atom.intensity * 2.0 * s * (own * tp - ell - other * tn);
        linalg::axpy(&mut grad_jump, coeff, &atom.size);
    }

    let mut gradient = linalg::scale(&c_psi, 2.0 * ell);
    linalg::axpy(&mut gradient, 2.0 * s * ell, model.drift());
    linalg::axpy(&mut gradient, 2.0 * s, cov);
    for (g, gj) in gradient.iter_mut().zip(&grad_jump) {
        *g += gj;
    }

    Ok(GeneratorEval { continuous, jump, total: continuous + jump, gradient })
}

/// Drift rate of the controlled value process at a wealth state described by
/// exactly one of `v_plus > 0`, `v_minus > 0` or `at_zero`.
pub fn value_process_drift(
    v_plus: f64,
    v_minus: f64,
    at_zero: bool,
    psi: &[f64],
    model: &LevyModel,
    jc: &JointCharacteristics,
) -> Result<f64, DriftError> {
    if v_plus < 0.0 || v_minus < 0.0 {
        return Err(DriftError::InvalidState(
            "wealth parts must be nonnegative".into(),
        ));
    }
    let actives = (v_plus > 0.0) as u8 + (v_minus > 0.0) as u8 + at_zero as u8;
    if actives != 1 {
        return Err(DriftError::InvalidState(
            "exactly one of v_plus > 0, v_minus > 0, at_zero must hold".into(),
        ));
    }
    check_dims(psi, model, jc)?;
    if at_zero {
        let mut total = jc.ell_minus * linalg::quad_form(model.diffusion(), psi);
        for (k, atom) in model.jump_atoms().iter().enumerate() {
            let (y, z) = jc.jump_marks[k];
            let pu = linalg::dot(psi, &atom.size);
            let pp = pu.max(0.0);
            let pn = (-pu).max(0.0);
            total += atom.intensity
                * (pp * pp * (jc.ell_plus + y) + pn * pn * (jc.ell_minus + z));
        }
        return Ok(total);
    }
    if v_plus > 0.0 {
        let g = generator(Sign::Plus, psi, model, jc)?;
        Ok(v_plus * v_plus * (g.total + jc.drift_plus))
    } else {
        let g = generator(Sign::Minus, psi, model, jc)?;
        Ok(v_minus * v_minus * (g.total + jc.drift_minus))
    }
}

/// Minimizes the generator for `sign` over the cone.
pub fn minimize(
    sign: Sign,
    cone: &Cone,
    model: &LevyModel,
    jc: &JointCharacteristics,
    opts: &MinimizeOptions,
) -> Result<ConeMinimum, DriftError> {
    check_dims(&vec![0.0; model.dim()], model, jc)?;
    let obj = generator_objective(sign, model, jc);
    minimize_over_cone(&obj, cone, opts)
}

/// A convex objective of the form
/// `c0 + lin.psi + psi' quad psi + sum_k [pos_k (t_k^+)^2 + neg_k (t_k^-)^2 - sub_k]`
/// with `t_k = 1 + w_k . psi` and `pos_k, neg_k >= 0`. This covers both the
/// generators and the one-step tree recursion objectives.
#[derive(Debug, Clone)]
pub(crate) struct PiecewiseQuadratic {
    pub c0: f64,
    pub lin: Vec<f64>,
    pub quad: Vec<Vec<f64>>,
    pub kinks: Vec<Kink>,
}

#[derive(Debug, Clone)]
pub(crate) struct Kink {
    pub w: Vec<f64>,
    pub pos: f64,
    pub neg: f64,
    pub sub: f64,
}

pub(crate) fn generator_objective(
    sign: Sign,
    model: &LevyModel,
    jc: &JointCharacteristics,
) -> PiecewiseQuadratic {
    let s = sign.factor();
    let ell = ell_own(sign, jc);
    let quad: Vec<Vec<f64>> = model
        .diffusion()
        .iter()
        .map(|row| linalg::scale(row, ell))
        .collect();
    let mut lin = linalg::scale(model.drift(), 2.0 * s * ell);
    linalg::axpy(&mut lin, 2.0 * s, cov_own(sign, jc));
    let mut kinks = Vec::with_capacity(model.jump_atoms().len());
    for (k, atom) in model.jump_atoms().iter().enumerate() {
        let (own, other) = atom_weights(sign, jc, k);
        let pos = atom.intensity * own;
        kinks.push(Kink {
            w: linalg::scale(&atom.size, s),
            pos,
            neg: atom.intensity * other,
            sub: pos,
        });
        linalg::axpy(&mut lin, -2.0 * s * ell * atom.intensity, &atom.size);
    }
    PiecewiseQuadratic { c0: 0.0, lin, quad, kinks }
}

impl PiecewiseQuadratic {
    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn value(&self, psi: &[f64]) -> f64 {
        let mut v = self.c0 + linalg::dot(&self.lin, psi) + linalg::quad_form(&self.quad, psi);
        for k in &self.kinks {
            let t = 1.0 + linalg::dot(&k.w, psi);
            let tp = t.max(0.0);
            let tn = (-t).max(0.0);
            v += k.pos * tp * tp + k.neg * tn * tn - k.sub;
        }
        v
    }

    pub fn gradient(&self, psi: &[f64]) -> Vec<f64> {
        let mut g = self.lin.clone();
        linalg::axpy(&mut g, 2.0, &linalg::mat_vec(&self.quad, psi));
        for k in &self.kinks {
            let t = 1.0 + linalg::dot(&k.w, psi);
            let coeff = 2.0 * (k.pos * t.max(0.0) - k.neg * (-t).max(0.0));
            linalg::axpy(&mut g, coeff, &k.w);
        }
        g
    }

    /// All branch weights agree, so the objective is a plain quadratic.
    pub fn is_quadratic(&self) -> bool {
        self.kinks.iter().all(|k| k.pos == k.neg)
    }

    /// The quadratic that coincides with the objective on the smooth piece
    /// containing `psi` (branch chosen from the positive side at a kink).
    /// Returns `(a, l)` of `l.psi + psi' a psi` up to a constant.
    pub fn piece_quadratic(&self, psi: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut a = self.quad.clone();
        let mut l = self.lin.clone();
        for k in &self.kinks {
            let t = 1.0 + linalg::dot(&k.w, psi);
            let branch = if t >= 0.0 { k.pos } else { k.neg };
            linalg::add_outer(&mut a, branch, &k.w);
            linalg::axpy(&mut l, 2.0 * branch, &k.w);
        }
        (a, l)
    }
}

enum QuadSolution {
    Point(Vec<f64>),
    /// Linear descent direction inside the cone starting from `from`.
    Unbounded { from: Vec<f64>, dir: Vec<f64> },
}

/// Exact minimizer of `l.psi + psi' a psi` over the cone, when a closed form
/// is available (pseudoinverse on subspaces, active-set enumeration on
/// orthant-like cones). `None` means no closed form applies.
fn quadratic_min_over_cone(a: &[Vec<f64>], l: &[f64], cone: &Cone) -> Option<QuadSolution> {
    let scale = linalg::frobenius_norm(a).max(linalg::norm(l)).max(1.0);
    match cone {
        Cone::ZeroCone(d) => Some(QuadSolution::Point(vec![0.0; *d])),
        Cone::FullSpace(d) => {
            let basis = linalg::identity(*d);
            Some(subspace_quadratic_min(a, l, &basis, scale))
        }
        Cone::LinearSpan { dim, basis } => {
            if basis.is_empty() {
                return Some(QuadSolution::Point(vec![0.0; *dim]));
            }
            Some(subspace_quadratic_min(a, l, basis, scale))
        }
        Cone::Ray { direction } => {
            let da = linalg::quad_form(a, direction);
            let db = linalg::dot(l, direction);
            if da > 1e-14 * scale {
                let t = (-db / (2.0 * da)).max(0.0);
                Some(QuadSolution::Point(linalg::scale(direction, t)))
            } else if db >= -1e-14 * scale {
                Some(QuadSolution::Point(vec![0.0; direction.len()]))
            } else {
                Some(QuadSolution::Unbounded {
                    from: vec![0.0; direction.len()],
                    dir: direction.clone(),
                })
            }
        }
        Cone::NonnegativeOrthant(d) => {
            if *d > 10 {
                return None;
            }
            let gens = linalg::identity(*d);
            nonneg_combination_min(a, l, &gens, scale).map(QuadSolution::Point)
        }
        Cone::Polyhedral { dim, generators } => {
            if generators.is_empty() {
                return Some(QuadSolution::Point(vec![0.0; *dim]));
            }
            if generators.len() > 10 {
                return None;
            }
            // reduce to weights over the generators
            let m = generators.len();
            let mut a_w = linalg::zeros_mat(m);
            let mut l_w = vec![0.0; m];
            for i in 0..m {
                l_w[i] = linalg::dot(l, &generators[i]);
                let agi = linalg::mat_vec(a, &generators[i]);
                for j in 0..m {
                    a_w[i][j] = linalg::dot(&generators[j], &agi);
                }
            }
            let a_w = linalg::symmetrize(&a_w);
            let w = nonneg_combination_min(&a_w, &l_w, &linalg::identity(m), scale)?;
            let mut psi = vec![0.0; *dim];
            for (wi, g) in w.iter().zip(generators) {
                linalg::axpy(&mut psi, *wi, g);
            }
            Some(QuadSolution::Point(psi))
        }
        Cone::Product(parts) => {
            // usable only when the quadratic decouples across the blocks
            let maxabs = a
                .iter()
                .flatten()
                .fold(0.0f64, |acc, x| acc.max(x.abs()));
            let mut offset = 0;
            let mut blocks = Vec::new();
            for part in parts {
                blocks.push((offset, part.dim()));
                offset += part.dim();
            }
            for (bi, &(oi, di)) in blocks.iter().enumerate() {
                for (bj, &(oj, dj)) in blocks.iter().enumerate() {
                    if bi == bj {
                        continue;
                    }
                    for i in oi..oi + di {
                        for j in oj..oj + dj {
                            if a[i][j].abs() > 1e-13 * maxabs.max(1.0) {
                                return None;
                            }
                        }
                    }
                }
            }
            let mut point = vec![0.0; offset];
            for (part, &(o, d)) in parts.iter().zip(&blocks) {
                let sub_a: Vec<Vec<f64>> =
                    (o..o + d).map(|i| a[i][o..o + d].to_vec()).collect();
                let sub_l = l[o..o + d].to_vec();
                match quadratic_min_over_cone(&sub_a, &sub_l, part)? {
                    QuadSolution::Point(p) => point[o..o + d].copy_from_slice(&p),
                    QuadSolution::Unbounded { from, dir } => {
                        let mut full_from = vec![0.0; offset];
                        let mut full_dir = vec![0.0; offset];
                        full_from[o..o + d].copy_from_slice(&from);
                        full_dir[o..o + d].copy_from_slice(&dir);
                        return Some(QuadSolution::Unbounded { from: full_from, dir: full_dir });
                    }
                }
            }
            Some(QuadSolution::Point(point))
        }
    }
}

/// Minimum of the quadratic over the span of an orthonormal basis.
fn subspace_quadratic_min(
    a: &[Vec<f64>],
    l: &[f64],
    basis: &[Vec<f64>],
    scale: f64,
) -> QuadSolution {
    let k = basis.len();
    let mut a_r = linalg::zeros_mat(k);
    let mut l_r = vec![0.0; k];
    for i in 0..k {
        l_r[i] = linalg::dot(l, &basis[i]);
        let abi = linalg::mat_vec(a, &basis[i]);
        for j in 0..k {
            a_r[i][j] = linalg::dot(&basis[j], &abi);
        }
    }
    let a_r = linalg::symmetrize(&a_r);
    let rhs = linalg::scale(&l_r, -0.5);
    let (y, residual) = linalg::pinv_solve(&a_r, &rhs, 1e-12);
    let mut psi = vec![0.0; l.len()];
    for (yi, b) in y.iter().zip(basis) {
        linalg::axpy(&mut psi, *yi, b);
    }
    if residual > 1e-9 * scale {
        // the linear term has a component in the null space: linear descent
        let grad_r = {
            let mut g = linalg::mat_vec(&a_r, &y);
            for (gi, li) in g.iter_mut().zip(&l_r) {
                *gi = 2.0 * *gi + li;
            }
            g
        };
        let mut dir = vec![0.0; l.len()];
        for (gi, b) in grad_r.iter().zip(basis) {
            linalg::axpy(&mut dir, -gi, b);
        }
        let n = linalg::norm(&dir);
        if n > 0.0 {
            return QuadSolution::Unbounded { from: psi, dir: linalg::scale(&dir, 1.0 / n) };
        }
    }
    QuadSolution::Point(psi)
}

/// Exact minimum of the quadratic over `{ G w : w >= 0 }` with `G` given by
/// `gens` (rows of the identity for the orthant), by enumerating active sets
/// and checking KKT conditions. Returns the point in the original space.
fn nonneg_combination_min(
    a: &[Vec<f64>],
    l: &[f64],
    gens: &[Vec<f64>],
    scale: f64,
) -> Option<Vec<f64>> {
    let m = gens.len();
    debug_assert!(m <= 10);
    let d = l.len();
    let primal_tol = 1e-11;
    let dual_tol = 1e-9 * scale;
    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (value, norm, point)
    for mask in 0u32..(1u32 << m) {
        let free: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = free.len();
        let mut x = vec![0.0; d];
        if k > 0 {
            let mut a_f = linalg::zeros_mat(k);
            let mut rhs = vec![0.0; k];
            for (i, &fi) in free.iter().enumerate() {
                rhs[i] = -0.5 * linalg::dot(l, &gens[fi]);
                let agi = linalg::mat_vec(a, &gens[fi]);
                for (j, &fj) in free.iter().enumerate() {
                    a_f[i][j] = linalg::dot(&gens[fj], &agi);
                }
            }
            let a_f = linalg::symmetrize(&a_f);
            let (y, residual) = linalg::pinv_solve(&a_f, &rhs, 1e-12);
            if residual > 1e-9 * scale {
                continue; // face objective inconsistent (unbounded face)
            }
            let ymax = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if y.iter().any(|&v| v < -primal_tol * (1.0 + ymax)) {
                continue;
            }
            for (yi, &fi) in y.iter().zip(&free) {
                linalg::axpy(&mut x, yi.max(0.0), &gens[fi]);
            }
        }
        // KKT: multipliers for the active generators must be nonnegative
        let mut grad = linalg::mat_vec(a, &x);
        for (gi, li) in grad.iter_mut().zip(l) {
            *gi = 2.0 * *gi + li;
        }
        let mut ok = true;
        for j in 0..m {
            let gj = linalg::dot(&grad, &gens[j]);
            if mask & (1 << j) != 0 {
                if gj.abs() > dual_tol * 10.0 {
                    ok = false;
                    break;
                }
            } else if gj < -dual_tol {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let value = linalg::dot(l, &x) + linalg::quad_form(a, &x);
        let nrm = linalg::norm(&x);
        let better = match &best {
            None => true,
            Some((bv, bn, _)) => {
                value < bv - 1e-13 * scale
                    || (value <= bv + 1e-13 * scale && nrm < *bn - 1e-13)
            }
        };
        if better {
            best = Some((value, nrm, x));
        }
    }
    best.map(|(_, _, x)| x)
}

/// Minimizes a convex piecewise quadratic over a cone.
///
/// The workhorse is projected gradient descent with Armijo backtracking from
/// the origin (or a warm start), accelerated by a closed-form polish step on
/// the smooth piece containing the current iterate. Convergence is declared
/// when the projected-gradient residual `||psi - P_K(psi - grad)||` falls
/// below the configured tolerance.
pub(crate) fn minimize_over_cone(
    obj: &PiecewiseQuadratic,
    cone: &Cone,
    opts: &MinimizeOptions,
) -> Result<ConeMinimum, DriftError> {
    let d = obj.dim();
    if cone.dim() != d {
        return Err(DriftError::DimensionMismatch(format!(
            "cone dimension {} does not match objective dimension {}",
            cone.dim(),
            d
        )));
    }
    if matches!(cone, Cone::ZeroCone(_)) {
        let zero = vec![0.0; d];
        let value = obj.value(&zero);
        return Ok(ConeMinimum { minimizer: zero, value, status: MinStatus::AtZero });
    }

    let zero = vec![0.0; d];
    let mut psi = match &opts.warm_start {
        Some(w) if w.len() == d => {
            let pw = cone.project(w)?;
            if obj.value(&pw) < obj.value(&zero) {
                pw
            } else {
                zero.clone()
            }
        }
        _ => zero.clone(),
    };
    let mut f = obj.value(&psi);
    let f_start = f;
    let mut step = 1.0f64;

    for iter in 0..opts.max_iters {
        let grad = obj.gradient(&psi);
        let mut trial = psi.clone();
        linalg::axpy(&mut trial, -1.0, &grad);
        let proj = cone.project(&trial)?;
        let residual = linalg::norm(&linalg::sub(&psi, &proj));
        if residual <= opts.first_order_tol {
            return Ok(finish(obj, cone, psi, f));
        }

        // polish: exact minimum of the current smooth piece over the cone
        let (a_p, l_p) = obj.piece_quadratic(&psi);
        match quadratic_min_over_cone(&a_p, &l_p, cone) {
            Some(QuadSolution::Point(cand)) => {
                let fc = obj.value(&cand);
                if fc < f {
                    psi = cand;
                    f = fc;
                    let grad = obj.gradient(&psi);
                    let mut trial = psi.clone();
                    linalg::axpy(&mut trial, -1.0, &grad);
                    let proj = cone.project(&trial)?;
                    if linalg::norm(&linalg::sub(&psi, &proj)) <= opts.first_order_tol {
                        return Ok(finish(obj, cone, psi, f));
                    }
                }
            }
            Some(QuadSolution::Unbounded { from, dir }) if obj.is_quadratic() => {
                // the piece is the whole function: genuinely unbounded
                let mut far = from;
                linalg::axpy(&mut far, opts.divergence_cap, &dir);
                let value = obj.value(&far);
                return Ok(ConeMinimum {
                    minimizer: far,
                    value,
                    status: MinStatus::Unbounded,
                });
            }
            _ => {}
        }

        // projected gradient step with Armijo backtracking
        let mut t = step;
        let mut accepted = false;
        for _ in 0..80 {
            let mut cand = psi.clone();
            linalg::axpy(&mut cand, -t, &grad);
            let cand = cone.project(&cand)?;
            let ft = obj.value(&cand);
            let dec = linalg::dot(&grad, &linalg::sub(&cand, &psi));
            if dec < 0.0 && ft <= f + opts.armijo_c * dec {
                psi = cand;
                f = ft;
                step = (t * 2.0).min(1e8);
                accepted = true;
                break;
            }
            t *= 0.5;
            if t < 1e-18 {
                break;
            }
        }
        if !accepted {
            // no descent direction left at working precision
            let _ = iter;
            return Ok(finish(obj, cone, psi, f));
        }
        if linalg::norm(&psi) > opts.divergence_cap && f < f_start {
            return Ok(ConeMinimum { minimizer: psi, value: f, status: MinStatus::Unbounded });
        }
    }

    let grad = obj.gradient(&psi);
    let mut trial = psi.clone();
    linalg::axpy(&mut trial, -1.0, &grad);
    let proj = cone.project(&trial)?;
    let residual = linalg::norm(&linalg::sub(&psi, &proj));
    if residual <= opts.first_order_tol * 10.0 {
        return Ok(finish(obj, cone, psi, f));
    }
    Err(DriftError::NotConverged { iterations: opts.max_iters, residual })
}

fn finish(obj: &PiecewiseQuadratic, _cone: &Cone, psi: Vec<f64>, value: f64) -> ConeMinimum {
    let status = if linalg::norm(&psi) <= 1e-12 {
        MinStatus::AtZero
    } else if linalg::norm(&obj.gradient(&psi)) <= 1e-8 {
        MinStatus::Interior
    } else {
        MinStatus::Boundary
    };
    ConeMinimum { minimizer: psi, value, status }
}
