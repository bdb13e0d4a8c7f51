//! Exact discrete-time dynamic programming on finite scenario trees, the
//! brute-force ground truth for the continuous-time solver.
//!
//! A tree has i.i.d. per-step return atoms (a Gauss-Hermite discretization
//! of the diffusion tensored with at most one jump per step), so the
//! backward recursion's state collapses to (step, sign of wealth): the
//! one-step problem is scale invariant in the wealth magnitude. The node
//! values are exact finite-sum expectations minimized with the same convex
//! machinery as the continuous generators.

use serde::Serialize;
use thiserror::Error;

use crate::cones::Cone;
use crate::drift::{self, DriftError, MinStatus, MinimizeOptions};
use crate::linalg;
use crate::model::LevyModel;
use crate::opportunity::OpportunityGrid;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("time step too coarse: total jump probability per step is {0:.3} >= 1")]
    StepTooCoarse(f64),
    #[error("one-step minimizer is unbounded at step {0}")]
    MinimizerUnbounded(usize),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("tree is not solved; run the backward recursion first")]
    NotSolved,
    #[error("path enumeration too large: {0} paths")]
    TooManyPaths(usize),
    #[error(transparent)]
    Drift(#[from] DriftError),
}

/// One return atom of the i.i.d. step distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnAtom {
    pub ds: Vec<f64>,
    pub prob: f64,
}

/// A scenario tree with i.i.d. step atoms and per-step value storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub dim: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub atoms: Vec<ReturnAtom>,
    /// Values per step index (filled by the backward recursion; terminal 1).
    pub l_plus: Vec<f64>,
    pub l_minus: Vec<f64>,
    pub solved: bool,
}

/// Per-step minimizers for both wealth signs.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePolicy {
    pub psi_plus: Vec<Vec<f64>>,
    pub psi_minus: Vec<Vec<f64>>,
}

/// Gauss-Hermite nodes and weights for a standard normal (unit variance),
/// by Golub-Welsch on the symmetric tridiagonal recurrence matrix.
pub fn gauss_hermite(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1);
    if points == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let mut j = linalg::zeros_mat(points);
    for i in 0..points - 1 {
        let b = ((i + 1) as f64).sqrt();
        j[i][i + 1] = b;
        j[i + 1][i] = b;
    }
    let (eig, vecs) = linalg::sym_eig(&j);
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|k| (eig[k], vecs[0][k] * vecs[0][k]))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1 / total).collect();
    (nodes, weights)
}

/// Discretizes the model into an i.i.d. scenario tree.
///
/// The diffusion is replaced by a Gauss-Hermite grid per diffusion factor,
/// the jump measure by at most one jump per step with probability
/// `lambda_k dt`, and a drift shift is appended so the one-step mean equals
/// the model drift times `dt` exactly.
pub fn discretize(
    model: &LevyModel,
    n_steps: usize,
    gauss_points: usize,
) -> Result<ScenarioTree, OracleError> {
    assert!(n_steps >= 1 && gauss_points >= 1);
    let d = model.dim();
    let dt = model.horizon() / n_steps as f64;
    let jump_probs: Vec<f64> =
        model.jump_atoms().iter().map(|a| a.intensity * dt).collect();
    let total_jump: f64 = jump_probs.iter().sum();
    if total_jump >= 1.0 {
        return Err(OracleError::StepTooCoarse(total_jump));
    }
    let p_none = 1.0 - total_jump;

    let factors = linalg::psd_factor(model.diffusion());
    let (nodes, weights) = gauss_hermite(gauss_points);
    // cartesian product of the per-factor quadrature grids
    let mut gauss_atoms: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; d], 1.0)];
    let sqrt_dt = dt.sqrt();
    for g in &factors {
        let mut next = Vec::with_capacity(gauss_atoms.len() * nodes.len());
        for (base, w) in &gauss_atoms {
            for (x, wx) in nodes.iter().zip(&weights) {
                let mut v = base.clone();
                linalg::axpy(&mut v, sqrt_dt * x, g);
                next.push((v, w * wx));
            }
        }
        gauss_atoms = next;
    }

    let shift = linalg::scale(&model.continuous_drift(), dt);
    let mut atoms = Vec::with_capacity(gauss_atoms.len() * (1 + jump_probs.len()));
    for (base, w) in &gauss_atoms {
        let mut ds = base.clone();
        linalg::axpy(&mut ds, 1.0, &shift);
        atoms.push(ReturnAtom { ds, prob: w * p_none });
        for (atom, &p) in model.jump_atoms().iter().zip(&jump_probs) {
            let mut ds = base.clone();
            linalg::axpy(&mut ds, 1.0, &shift);
            linalg::axpy(&mut ds, 1.0, &atom.size);
            atoms.push(ReturnAtom { ds, prob: w * p });
        }
    }

    // append the drift correction that makes the one-step mean exact
    let mut mean = vec![0.0; d];
    for a in &atoms {
        linalg::axpy(&mut mean, a.prob, &a.ds);
    }
    let target = linalg::scale(model.drift(), dt);
    let correction = linalg::sub(&target, &mean);
    for a in &mut atoms {
        linalg::axpy(&mut a.ds, 1.0, &correction);
    }

    Ok(ScenarioTree {
        dim: d,
        n_steps,
        dt,
        atoms,
        l_plus: vec![0.0; n_steps + 1],
        l_minus: vec![0.0; n_steps + 1],
        solved: false,
    })
}

/// One-step objective for the given wealth sign:
/// `E[((1 + s psi.dS)^+)^2 l_own + ((1 + s psi.dS)^-)^2 l_other]`.
fn step_objective(
    atoms: &[ReturnAtom],
    dim: usize,
    sign: drift::Sign,
    l_own: f64,
    l_other: f64,
) -> drift::PiecewiseQuadratic {
    let s = sign.factor();
    let kinks = atoms
        .iter()
        .map(|a| drift::Kink {
            w: linalg::scale(&a.ds, s),
            pos: a.prob * l_own,
            neg: a.prob * l_other,
            sub: 0.0,
        })
        .collect();
    drift::PiecewiseQuadratic {
        c0: 0.0,
        lin: vec![0.0; dim],
        quad: linalg::zeros_mat(dim),
        kinks,
    }
}

/// Value of the one-step objective at a given policy (exact finite sum).
pub fn step_value(
    tree: &ScenarioTree,
    sign: drift::Sign,
    psi: &[f64],
    l_own_next: f64,
    l_other_next: f64,
) -> f64 {
    step_objective(&tree.atoms, tree.dim, sign, l_own_next, l_other_next).value(psi)
}

/// Backward dynamic programming over the tree: fills the per-step values
/// (terminal value one) and returns the minimizing policies per step.
pub fn dp_backward(
    tree: &mut ScenarioTree,
    cone: &Cone,
    opts: &MinimizeOptions,
) -> Result<TreePolicy, OracleError> {
    let n = tree.n_steps;
    tree.l_plus[n] = 1.0;
    tree.l_minus[n] = 1.0;
    let mut psi_plus = vec![vec![0.0; tree.dim]; n];
    let mut psi_minus = vec![vec![0.0; tree.dim]; n];
    let mut warm_plus: Option<Vec<f64>> = None;
    let mut warm_minus: Option<Vec<f64>> = None;
    for i in (0..n).rev() {
        let (lp_next, lm_next) = (tree.l_plus[i + 1], tree.l_minus[i + 1]);
        let mut o = opts.clone();
        o.warm_start = warm_plus.take();
        let obj_p = step_objective(&tree.atoms, tree.dim, drift::Sign::Plus, lp_next, lm_next);
        let min_p = drift::minimize_over_cone(&obj_p, cone, &o)?;
        if min_p.status == MinStatus::Unbounded {
            return Err(OracleError::MinimizerUnbounded(i));
        }
        let mut o = opts.clone();
        o.warm_start = warm_minus.take();
        let obj_m = step_objective(&tree.atoms, tree.dim, drift::Sign::Minus, lm_next, lp_next);
        let min_m = drift::minimize_over_cone(&obj_m, cone, &o)?;
        if min_m.status == MinStatus::Unbounded {
            return Err(OracleError::MinimizerUnbounded(i));
        }
        tree.l_plus[i] = min_p.value;
        tree.l_minus[i] = min_m.value;
        warm_plus = Some(min_p.minimizer.clone());
        warm_minus = Some(min_m.minimizer.clone());
        psi_plus[i] = min_p.minimizer;
        psi_minus[i] = min_m.minimizer;
    }
    tree.solved = true;
    Ok(TreePolicy { psi_plus, psi_minus })
}

/// One-step drift of the controlled value process per unit of wealth, for
/// each step and wealth sign, under an arbitrary feasible policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    /// Drift at unit positive wealth, per step.
    pub unit_drift_plus: Vec<f64>,
    /// Drift at unit negative wealth, per step.
    pub unit_drift_minus: Vec<f64>,
    /// Extremes over the (step, sign) pairs reachable from the initial sign.
    pub max_drift: f64,
    pub min_drift: f64,
}

/// Evaluates the martingale optimality principle: under the DP policy every
/// one-step drift of the value process is zero; under any feasible policy it
/// is nonnegative.
pub fn check_martingale_optimality(
    tree: &ScenarioTree,
    policy: &TreePolicy,
    x: f64,
) -> Result<MartingaleReport, OracleError> {
    if !tree.solved {
        return Err(OracleError::NotSolved);
    }
    let n = tree.n_steps;
    let mut unit_drift_plus = Vec::with_capacity(n);
    let mut unit_drift_minus = Vec::with_capacity(n);
    // sign reachability from the initial wealth
    let mut reach_plus = x > 0.0;
    let mut reach_minus = x < 0.0;
    let mut max_drift = f64::NEG_INFINITY;
    let mut min_drift = f64::INFINITY;
    for i in 0..n {
        let dp = step_value(
            tree,
            drift::Sign::Plus,
            &policy.psi_plus[i],
            tree.l_plus[i + 1],
            tree.l_minus[i + 1],
        ) - tree.l_plus[i];
        let dm = step_value(
            tree,
            drift::Sign::Minus,
            &policy.psi_minus[i],
            tree.l_minus[i + 1],
            tree.l_plus[i + 1],
        ) - tree.l_minus[i];
        unit_drift_plus.push(dp);
        unit_drift_minus.push(dm);
        let (mut next_plus, mut next_minus) = (false, false);
        if reach_plus {
            max_drift = max_drift.max(dp);
            min_drift = min_drift.min(dp);
            for a in &tree.atoms {
                let t = 1.0 + linalg::dot(&policy.psi_plus[i], &a.ds);
                if t > 0.0 {
                    next_plus = true;
                } else if t < 0.0 {
                    next_minus = true;
                }
            }
        }
        if reach_minus {
            max_drift = max_drift.max(dm);
            min_drift = min_drift.min(dm);
            for a in &tree.atoms {
                let t = 1.0 - linalg::dot(&policy.psi_minus[i], &a.ds);
                if t > 0.0 {
                    next_minus = true;
                } else if t < 0.0 {
                    next_plus = true;
                }
            }
        }
        reach_plus = next_plus;
        reach_minus = next_minus;
        if !reach_plus && !reach_minus {
            break;
        }
    }
    if !max_drift.is_finite() {
        max_drift = 0.0;
        min_drift = 0.0;
    }
    Ok(MartingaleReport { unit_drift_plus, unit_drift_minus, max_drift, min_drift })
}

/// Fixed-policy backward evaluation and the dominance gap against the DP
/// values (the DP values are minimal, so `ell >= L` node-wise).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub ell_plus: Vec<f64>,
    pub ell_minus: Vec<f64>,
    /// `max over steps of (L - ell)`; at most numerical noise.
    pub max_dominance_gap: f64,
}

pub fn policy_evaluation(
    tree: &ScenarioTree,
    policy: &TreePolicy,
) -> Result<PolicyValue, OracleError> {
    if !tree.solved {
        return Err(OracleError::NotSolved);
    }
    let n = tree.n_steps;
    let mut ell_plus = vec![0.0; n + 1];
    let mut ell_minus = vec![0.0; n + 1];
    ell_plus[n] = 1.0;
    ell_minus[n] = 1.0;
    for i in (0..n).rev() {
        ell_plus[i] = step_value(
            tree,
            drift::Sign::Plus,
            &policy.psi_plus[i],
            ell_plus[i + 1],
            ell_minus[i + 1],
        );
        ell_minus[i] = step_value(
            tree,
            drift::Sign::Minus,
            &policy.psi_minus[i],
            ell_minus[i + 1],
            ell_plus[i + 1],
        );
    }
    let mut gap = f64::NEG_INFINITY;
    for i in 0..=n {
        gap = gap.max(tree.l_plus[i] - ell_plus[i]);
        gap = gap.max(tree.l_minus[i] - ell_minus[i]);
    }
    Ok(PolicyValue { ell_plus, ell_minus, max_dominance_gap: gap })
}

/// Discrepancy between tree values and an opportunity grid at the tree's
/// step times (which must all appear in the grid).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeComparison {
    pub max_err_plus: f64,
    pub max_err_minus: f64,
    pub l2_err_plus: f64,
    pub l2_err_minus: f64,
}

pub fn compare_to_ode(
    tree: &ScenarioTree,
    grid: &OpportunityGrid,
) -> Result<OdeComparison, OracleError> {
    if !tree.solved {
        return Err(OracleError::NotSolved);
    }
    let horizon = *grid.times.last().unwrap();
    let tol = 1e-9 * (1.0 + horizon);
    let mut max_p = 0.0f64;
    let mut max_m = 0.0f64;
    let mut sum_p = 0.0f64;
    let mut sum_m = 0.0f64;
    for i in 0..=tree.n_steps {
        let t = tree.dt * i as f64;
        let j = grid
            .times
            .partition_point(|&g| g < t - tol);
        if j >= grid.times.len() || (grid.times[j] - t).abs() > tol {
            return Err(OracleError::GridMismatch(format!(
                "tree time {t} not on the opportunity grid"
            )));
        }
        let ep = (tree.l_plus[i] - grid.l_plus[j]).abs();
        let em = (tree.l_minus[i] - grid.l_minus[j]).abs();
        max_p = max_p.max(ep);
        max_m = max_m.max(em);
        sum_p += ep * ep;
        sum_m += em * em;
    }
    Ok(OdeComparison {
        max_err_plus: max_p,
        max_err_minus: max_m,
        l2_err_plus: (sum_p * tree.dt).sqrt(),
        l2_err_minus: (sum_m * tree.dt).sqrt(),
    })
}

/// Exact distribution of terminal wealth under a feedback tree policy, by
/// path enumeration. Absorption at zero wealth applies as in the simulator.
pub fn terminal_wealth_distribution(
    tree: &ScenarioTree,
    policy: &TreePolicy,
    x: f64,
) -> Result<Vec<(f64, f64)>, OracleError> {
    let paths = (tree.atoms.len() as f64).powi(tree.n_steps as i32);
    if paths > 2e6 {
        return Err(OracleError::TooManyPaths(paths as usize));
    }
    let absorb_tol = 1e-14 * x.abs();
    let mut out = Vec::new();
    let mut stack: Vec<(usize, f64, f64)> = vec![(0, x, 1.0)];
    while let Some((step, v, prob)) = stack.pop() {
        if step == tree.n_steps || v == 0.0 {
            out.push((v, prob));
            continue;
        }
        let vp = v.max(0.0);
        let vn = (-v).max(0.0);
        let mut phi = vec![0.0; tree.dim];
        linalg::axpy(&mut phi, vp, &policy.psi_plus[step]);
        linalg::axpy(&mut phi, vn, &policy.psi_minus[step]);
        for a in &tree.atoms {
            let mut nv = v + linalg::dot(&phi, &a.ds);
            if nv.abs() <= absorb_tol {
                nv = 0.0;
            }
            stack.push((step + 1, nv, prob * a.prob));
        }
    }
    Ok(out)
}

/// Mean and variance of a finite distribution.
pub fn distribution_moments(dist: &[(f64, f64)]) -> (f64, f64) {
    let mean: f64 = dist.iter().map(|(v, p)| v * p).sum();
    let var: f64 = dist.iter().map(|(v, p)| (v - mean) * (v - mean) * p).sum();
    (mean, var)
}

/// CSV of the solved tree: `step,L_plus,L_minus,psi_plus_1..d,psi_minus_1..d`
/// with zero policy columns on the terminal row.
pub fn tree_csv(tree: &ScenarioTree, policy: &TreePolicy) -> String {
    let d = tree.dim;
    let mut out = String::from("step,L_plus,L_minus");
    for i in 1..=d {
        out.push_str(&format!(",psi_plus_{i}"));
    }
    for i in 1..=d {
        out.push_str(&format!(",psi_minus_{i}"));
    }
    out.push('\n');
    let zeros = vec![0.0; d];
    for i in 0..=tree.n_steps {
        out.push_str(&format!("{},{},{}", i, tree.l_plus[i], tree.l_minus[i]));
        let (pp, pm) = if i < tree.n_steps {
            (&policy.psi_plus[i], &policy.psi_minus[i])
        } else {
            (&zeros, &zeros)
        };
        for v in pp {
            out.push_str(&format!(",{v}"));
        }
        for v in pm {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
