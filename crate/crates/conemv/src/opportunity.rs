//! Backward integration of the coupled drift equations for the pair of
//! opportunity processes on a uniform time grid, and the single-process
//! unconstrained specialization built from the adjustment vector.
//!
//! In the Levy setting both opportunity processes are deterministic, so the
//! coupled backward equations become a pair of ODEs: the time derivative of
//! each process equals minus the cone-constrained minimum of its drift
//! generator, with terminal value one. The right-hand side is nonnegative,
//! so the processes are nondecreasing in time and stay in (0, 1] unless the
//! model admits an arbitrage-like degeneracy, which is surfaced as an error.

use thiserror::Error;

use crate::cones::Cone;
use crate::drift::{self, ConeMinimum, DriftError, MinStatus, MinimizeOptions, Sign};
use crate::linalg;
use crate::model::{JointCharacteristics, LevyModel};

/// Floor below which an opportunity value is treated as having hit zero.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("opportunity process hit the positivity floor at t = {time} (value {value:.3e})")]
    NonPositiveL { time: f64, value: f64 },
    #[error("generator minimizer is unbounded at t = {time}")]
    MinimizerUnbounded { time: f64 },
    #[error(transparent)]
    Drift(#[from] DriftError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub n_steps: usize,
    pub scheme: Scheme,
    pub minimize: MinimizeOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            n_steps: 1000,
            scheme: Scheme::Rk4,
            minimize: MinimizeOptions::default(),
        }
    }
}

/// The two opportunity processes sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OpportunityGrid {
    pub times: Vec<f64>,
    pub l_plus: Vec<f64>,
    pub l_minus: Vec<f64>,
}

/// The feedback policies and generator minima along the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub times: Vec<f64>,
    pub psi_plus: Vec<Vec<f64>>,
    pub psi_minus: Vec<Vec<f64>>,
    pub min_plus: Vec<f64>,
    pub min_minus: Vec<f64>,
}

impl PolicyField {
    pub fn dim(&self) -> usize {
        self.psi_plus.first().map_or(0, |p| p.len())
    }
}

/// Unconstrained feedback data: the adjustment vector and the decay rate of
/// the single opportunity process.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjustment {
    /// `a = pinv(c_bar) b_bar`; the optimal unconstrained policy is `-a`
    /// per unit of positive wealth.
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c_bar: Vec<Vec<f64>>,
    /// `b_bar . a_bar`, the exponential decay rate of the opportunity process.
    pub rate: f64,
}

fn uniform_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps)
        .map(|i| horizon * (i as f64) / (n_steps as f64))
        .collect()
}

struct RhsState<'a, F: Fn(f64) -> Cone> {
    model: &'a LevyModel,
    cone_fn: &'a F,
    opts: &'a SolveOptions,
    warm_plus: Option<Vec<f64>>,
    warm_minus: Option<Vec<f64>>,
}

impl<'a, F: Fn(f64) -> Cone> RhsState<'a, F> {
    fn joint(&self, l_plus: f64, l_minus: f64, t: f64) -> Result<JointCharacteristics, SolveError> {
        if l_plus <= POSITIVITY_FLOOR {
            return Err(SolveError::NonPositiveL { time: t, value: l_plus });
        }
        if l_minus <= POSITIVITY_FLOOR {
            return Err(SolveError::NonPositiveL { time: t, value: l_minus });
        }
        let d = self.model.dim();
        Ok(JointCharacteristics {
            ell_plus: l_plus.min(1.0),
            ell_minus: l_minus.min(1.0),
            drift_plus: 0.0,
            drift_minus: 0.0,
            cov_plus: vec![0.0; d],
            cov_minus: vec![0.0; d],
            jump_marks: vec![(0.0, 0.0); self.model.jump_atoms().len()],
        })
    }

    /// Solves both generator minimizations at `(t, l_plus, l_minus)`.
    fn minimize_both(
        &mut self,
        t: f64,
        l_plus: f64,
        l_minus: f64,
    ) -> Result<(ConeMinimum, ConeMinimum), SolveError> {
        let jc = self.joint(l_plus, l_minus, t)?;
        let cone = (self.cone_fn)(t);
        let mut opts = self.opts.minimize.clone();
        opts.warm_start = self.warm_plus.clone();
        let plus = drift::minimize(Sign::Plus, &cone, self.model, &jc, &opts)?;
        opts.warm_start = self.warm_minus.clone();
        let minus = drift::minimize(Sign::Minus, &cone, self.model, &jc, &opts)?;
        for m in [&plus, &minus] {
            if m.status == MinStatus::Unbounded {
                return Err(SolveError::MinimizerUnbounded { time: t });
            }
        }
        self.warm_plus = Some(plus.minimizer.clone());
        self.warm_minus = Some(minus.minimizer.clone());
        Ok((plus, minus))
    }

    /// Right-hand side of the backward system: minus the generator minima.
    fn rhs(&mut self, t: f64, l_plus: f64, l_minus: f64) -> Result<(f64, f64), SolveError> {
        let (p, m) = self.minimize_both(t, l_plus, l_minus)?;
        Ok((-p.value, -m.value))
    }
}

/// Integrates the coupled backward equations on a uniform grid under the
/// time-dependent cone constraint and returns the opportunity values with
/// the minimizing policies at every grid point.
pub fn solve_opportunity<F: Fn(f64) -> Cone>(
    model: &LevyModel,
    cone_fn: F,
    opts: &SolveOptions,
) -> Result<(OpportunityGrid, PolicyField), SolveError> {
    assert!(opts.n_steps >= 1, "n_steps must be at least 1");
    let n = opts.n_steps;
    let times = uniform_grid(model.horizon(), n);
    let d = model.dim();
    let mut l_plus = vec![0.0; n + 1];
    let mut l_minus = vec![0.0; n + 1];
    l_plus[n] = 1.0;
    l_minus[n] = 1.0;
    let mut psi_plus = vec![vec![0.0; d]; n + 1];
    let mut psi_minus = vec![vec![0.0; d]; n + 1];
    let mut min_plus = vec![0.0; n + 1];
    let mut min_minus = vec![0.0; n + 1];

    let mut state = RhsState {
        model,
        cone_fn: &cone_fn,
        opts,
        warm_plus: None,
        warm_minus: None,
    };

    // policy at the terminal point doubles as the first stage of the sweep
    let (p, m) = state.minimize_both(times[n], 1.0, 1.0)?;
    psi_plus[n] = p.minimizer.clone();
    psi_minus[n] = m.minimizer.clone();
    min_plus[n] = p.value;
    min_minus[n] = m.value;

    for i in (0..n).rev() {
        let t1 = times[i + 1];
        let t0 = times[i];
        let h = t0 - t1; // negative
        let y = (l_plus[i + 1], l_minus[i + 1]);
        let k1 = (-min_plus[i + 1], -min_minus[i + 1]);
        let (lp, lm) = match opts.scheme {
            Scheme::Euler => (y.0 + h * k1.0, y.1 + h * k1.1),
            Scheme::Rk4 => {
                let tm = t1 + 0.5 * h;
                let k2 = state.rhs(tm, y.0 + 0.5 * h * k1.0, y.1 + 0.5 * h * k1.1)?;
                let k3 = state.rhs(tm, y.0 + 0.5 * h * k2.0, y.1 + 0.5 * h * k2.1)?;
                let k4 = state.rhs(t0, y.0 + h * k3.0, y.1 + h * k3.1)?;
                (
                    y.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                    y.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
                )
            }
        };
        if lp <= POSITIVITY_FLOOR || lm <= POSITIVITY_FLOOR {
            return Err(SolveError::NonPositiveL { time: t0, value: lp.min(lm) });
        }
        l_plus[i] = lp;
        l_minus[i] = lm;
        let (p, m) = state.minimize_both(t0, lp, lm)?;
        psi_plus[i] = p.minimizer.clone();
        psi_minus[i] = m.minimizer.clone();
        min_plus[i] = p.value;
        min_minus[i] = m.value;
    }

    Ok((
        OpportunityGrid { times: times.clone(), l_plus, l_minus },
        PolicyField { times, psi_plus, psi_minus, min_plus, min_minus },
    ))
}

/// Adjustment data for the unconstrained problem. Fails when the drift has a
/// component outside the range of the modified covariance, in which case the
/// unconstrained minimization is unbounded.
pub fn adjustment(model: &LevyModel) -> Result<Adjustment, SolveError> {
    let c_bar = model.modified_covariance();
    let b_bar = model.drift().to_vec();
    let (a_bar, residual) = linalg::pinv_solve(&c_bar, &b_bar, 1e-12);
    if residual > 1e-10 * (1.0 + linalg::norm(&b_bar)) {
        return Err(SolveError::MinimizerUnbounded { time: 0.0 });
    }
    let rate = linalg::dot(&b_bar, &a_bar).max(0.0);
    Ok(Adjustment { a_bar, b_bar, c_bar, rate })
}

/// Solves the unconstrained problem: a single opportunity process with
/// exponential decay rate `b_bar . pinv(c_bar) b_bar` and the constant
/// policy pair `(-a_bar, +a_bar)`.
pub fn solve_unconstrained(
    model: &LevyModel,
    opts: &SolveOptions,
) -> Result<(OpportunityGrid, PolicyField, Adjustment), SolveError> {
    assert!(opts.n_steps >= 1, "n_steps must be at least 1");
    let adj = adjustment(model)?;
    let n = opts.n_steps;
    let times = uniform_grid(model.horizon(), n);
    let mut l = vec![0.0; n + 1];
    l[n] = 1.0;
    let q = adj.rate;
    for i in (0..n).rev() {
        let h = times[i] - times[i + 1];
        let y = l[i + 1];
        l[i] = match opts.scheme {
            Scheme::Euler => y + h * q * y,
            Scheme::Rk4 => {
                let k1 = q * y;
                let k2 = q * (y + 0.5 * h * k1);
                let k3 = q * (y + 0.5 * h * k2);
                let k4 = q * (y + h * k3);
                y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
        if l[i] <= POSITIVITY_FLOOR {
            return Err(SolveError::NonPositiveL { time: times[i], value: l[i] });
        }
    }
    let psi_plus: Vec<Vec<f64>> = (0..=n).map(|_| linalg::scale(&adj.a_bar, -1.0)).collect();
    let psi_minus: Vec<Vec<f64>> = (0..=n).map(|_| adj.a_bar.clone()).collect();
    let min_plus: Vec<f64> = l.iter().map(|&li| -q * li).collect();
    let min_minus = min_plus.clone();
    Ok((
        OpportunityGrid { times: times.clone(), l_plus: l.clone(), l_minus: l },
        PolicyField { times, psi_plus, psi_minus, min_plus, min_minus },
        adj,
    ))
}

/// Emits the solved grid and policies as CSV with columns
/// `t,L_plus,L_minus,min_g_plus,min_g_minus,psi_plus_1..d,psi_minus_1..d`.
pub fn to_csv(grid: &OpportunityGrid, policy: &PolicyField) -> String {
    let d = policy.dim();
    let mut out = String::from("t,L_plus,L_minus,min_g_plus,min_g_minus");
    for i in 1..=d {
        out.push_str(&format!(",psi_plus_{i}"));
    }
    for i in 1..=d {
        out.push_str(&format!(",psi_minus_{i}"));
    }
    out.push('\n');
    for i in 0..grid.times.len() {
        out.push_str(&format!(
            "{},{},{},{},{}",
            grid.times[i],
            grid.l_plus[i],
            grid.l_minus[i],
            policy.min_plus[i],
            policy.min_minus[i]
        ));
        for v in &policy.psi_plus[i] {
            out.push_str(&format!(",{v}"));
        }
        for v in &policy.psi_minus[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
