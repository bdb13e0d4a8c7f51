//! Market model data: a d-dimensional Levy price process described by its
//! differential characteristics (drift rate, diffusion matrix and a finite
//! list of jump atoms, all per unit time), plus the per-time bundle of joint
//! characteristics that the drift generators consume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Relative eigenvalue tolerance used when validating the diffusion matrix.
pub const PSD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("diffusion matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("jump intensity must be positive, got {0}")]
    NonpositiveIntensity(f64),
    #[error("horizon must be positive, got {0}")]
    NonpositiveHorizon(f64),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

/// One atom of the jump measure: a jump of size `size` arriving with
/// Poisson intensity `intensity` per unit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpAtom {
    #[serde(rename = "u")]
    pub size: Vec<f64>,
    #[serde(rename = "lambda")]
    pub intensity: f64,
}

/// A Levy market model with constant differential characteristics.
///
/// The drift uses the identity truncation, so `drift` is the full expected
/// move per unit time including the jump compensator. Immutable after
/// construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    dim: usize,
    drift: Vec<f64>,
    diffusion: Vec<Vec<f64>>,
    jump_atoms: Vec<JumpAtom>,
    horizon: f64,
}

/// JSON wire format for a model spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub drift: Vec<f64>,
    pub diffusion: Vec<Vec<f64>>,
    #[serde(default)]
    pub jumps: Vec<JumpAtom>,
    pub horizon: f64,
}

impl LevyModel {
    /// Validates and builds a model. The diffusion input is symmetrized and
    /// tiny negative eigenvalues are clipped to zero.
    pub fn new(
        dim: usize,
        drift: Vec<f64>,
        diffusion: Vec<Vec<f64>>,
        jump_atoms: Vec<JumpAtom>,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::DimensionMismatch("dim must be >= 1".into()));
        }
        if drift.len() != dim {
            return Err(ModelError::DimensionMismatch(format!(
                "drift has length {}, expected {}",
                drift.len(),
                dim
            )));
        }
        if diffusion.len() != dim || diffusion.iter().any(|row| row.len() != dim) {
            return Err(ModelError::DimensionMismatch(format!(
                "diffusion must be {dim}x{dim}"
            )));
        }
        if !drift.iter().all(|x| x.is_finite())
            || !diffusion.iter().flatten().all(|x| x.is_finite())
        {
            return Err(ModelError::NonFinite("drift/diffusion".into()));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(ModelError::NonpositiveHorizon(horizon));
        }
        for atom in &jump_atoms {
            if atom.size.len() != dim {
                return Err(ModelError::DimensionMismatch(format!(
                    "jump size has length {}, expected {}",
                    atom.size.len(),
                    dim
                )));
            }
            if !atom.size.iter().all(|x| x.is_finite()) || !atom.intensity.is_finite() {
                return Err(ModelError::NonFinite("jump atom".into()));
            }
            if atom.intensity <= 0.0 {
                return Err(ModelError::NonpositiveIntensity(atom.intensity));
            }
        }
        let sym = linalg::symmetrize(&diffusion);
        let diffusion = linalg::psd_clip(&sym, PSD_REL_TOL).map_err(ModelError::NotPsd)?;
        Ok(LevyModel {
            dim,
            drift,
            diffusion,
            jump_atoms,
            horizon,
        })
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self, ModelError> {
        LevyModel::new(spec.dim, spec.drift, spec.diffusion, spec.jumps, spec.horizon)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Vec<f64>] {
        &self.diffusion
    }

    pub fn jump_atoms(&self) -> &[JumpAtom] {
        &self.jump_atoms
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Second moment of the jump measure, `sum_k lambda_k u_k u_k'`.
    pub fn second_moment(&self) -> Vec<Vec<f64>> {
        let mut m = linalg::zeros_mat(self.dim);
        for atom in &self.jump_atoms {
            linalg::add_outer(&mut m, atom.intensity, &atom.size);
        }
        m
    }

    /// Modified covariance `c + sum_k lambda_k u_k u_k'`, the effective
    /// quadratic coefficient of the unconstrained problem.
    pub fn modified_covariance(&self) -> Vec<Vec<f64>> {
        let mut m = self.second_moment();
        for (row, crow) in m.iter_mut().zip(&self.diffusion) {
            for (v, c) in row.iter_mut().zip(crow) {
                *v += c;
            }
        }
        m
    }

    /// Drift of the continuous part once the jump compensator is split off:
    /// `drift - sum_k lambda_k u_k`.
    pub fn continuous_drift(&self) -> Vec<f64> {
        let mut b = self.drift.clone();
        for atom in &self.jump_atoms {
            linalg::axpy(&mut b, -atom.intensity, &atom.size);
        }
        b
    }

    /// Total jump intensity `sum_k lambda_k`.
    pub fn total_intensity(&self) -> f64 {
        self.jump_atoms.iter().map(|a| a.intensity).sum()
    }
}

/// Per-time joint characteristics of the price process and the pair of
/// opportunity processes, as consumed by the drift generators: left limits
/// of both processes, their drift rates, the covariations with the price
/// diffusion, and per jump atom the pair of co-jump marks.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCharacteristics {
    pub ell_plus: f64,
    pub ell_minus: f64,
    pub drift_plus: f64,
    pub drift_minus: f64,
    pub cov_plus: Vec<f64>,
    pub cov_minus: Vec<f64>,
    /// For each jump atom `k`, the co-occurring jump sizes `(y_k, z_k)` of
    /// the plus and minus opportunity processes.
    pub jump_marks: Vec<(f64, f64)>,
}

impl JointCharacteristics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &LevyModel,
        ell_plus: f64,
        ell_minus: f64,
        drift_plus: f64,
        drift_minus: f64,
        cov_plus: Vec<f64>,
        cov_minus: Vec<f64>,
        jump_marks: Vec<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        for (name, ell) in [("ell_plus", ell_plus), ("ell_minus", ell_minus)] {
            if !(ell > 0.0 && ell <= 1.0) {
                return Err(ModelError::OutOfRange(format!(
                    "{name} must lie in (0, 1], got {ell}"
                )));
            }
        }
        let d = model.dim();
        if cov_plus.len() != d || cov_minus.len() != d {
            return Err(ModelError::DimensionMismatch(
                "covariation vectors must have model dimension".into(),
            ));
        }
        if jump_marks.len() != model.jump_atoms().len() {
            return Err(ModelError::DimensionMismatch(
                "one jump mark pair per jump atom required".into(),
            ));
        }
        for &(y, z) in &jump_marks {
            if ell_plus + y < 0.0 || ell_minus + z < 0.0 {
                return Err(ModelError::OutOfRange(
                    "post-jump opportunity values must stay nonnegative".into(),
                ));
            }
        }
        Ok(JointCharacteristics {
            ell_plus,
            ell_minus,
            drift_plus,
            drift_minus,
            cov_plus,
            cov_minus,
            jump_marks,
        })
    }

    /// The deterministic specialization: when both opportunity processes are
    /// deterministic and absolutely continuous, every coupling field
    /// vanishes and the drift rates are the plain time derivatives.
    pub fn deterministic(
        model: &LevyModel,
        ell_plus: f64,
        ell_minus: f64,
        dell_plus_dt: f64,
        dell_minus_dt: f64,
    ) -> Result<Self, ModelError> {
        let d = model.dim();
        JointCharacteristics::new(
            model,
            ell_plus,
            ell_minus,
            dell_plus_dt,
            dell_minus_dt,
            vec![0.0; d],
            vec![0.0; d],
            vec![(0.0, 0.0); model.jump_atoms().len()],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_model() -> LevyModel {
        LevyModel::new(
            1,
            vec![1.0],
            vec![vec![0.0]],
            vec![JumpAtom { size: vec![1.0], intensity: 1.0 }],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn accepts_brownian_model() {
        let m = LevyModel::new(1, vec![0.0], vec![vec![1.0]], vec![], 1.0).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.diffusion()[0][0], 1.0);
    }

    #[test]
    fn accepts_poisson_model() {
        let m = poisson_model();
        assert_eq!(m.jump_atoms().len(), 1);
        assert_eq!(m.continuous_drift(), vec![0.0]);
    }

    #[test]
    fn rejects_indefinite_diffusion() {
        let err = LevyModel::new(
            2,
            vec![0.0, 0.0],
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            vec![],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::NotPsd(_)));
    }

    #[test]
    fn rejects_bad_scalars() {
        assert!(matches!(
            LevyModel::new(1, vec![0.0], vec![vec![1.0]], vec![], 0.0),
            Err(ModelError::NonpositiveHorizon(_))
        ));
        assert!(matches!(
            LevyModel::new(
                1,
                vec![0.0],
                vec![vec![1.0]],
                vec![JumpAtom { size: vec![1.0], intensity: 0.0 }],
                1.0
            ),
            Err(ModelError::NonpositiveIntensity(_))
        ));
        assert!(matches!(
            LevyModel::new(2, vec![0.0], vec![vec![1.0]], vec![], 1.0),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn second_moment_hand_sum() {
        let m = LevyModel::new(
            2,
            vec![0.0, 0.0],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![
                JumpAtom { size: vec![1.0, 0.0], intensity: 2.0 },
                JumpAtom { size: vec![0.0, 3.0], intensity: 1.0 },
            ],
            1.0,
        )
        .unwrap();
        let s = m.second_moment();
        assert_eq!(s, vec![vec![2.0, 0.0], vec![0.0, 9.0]]);
    }

    #[test]
    fn second_moment_empty_and_poisson() {
        let none = LevyModel::new(1, vec![0.0], vec![vec![1.0]], vec![], 1.0).unwrap();
        assert_eq!(none.second_moment(), vec![vec![0.0]]);
        assert_eq!(poisson_model().second_moment(), vec![vec![1.0]]);
    }

    #[test]
    fn deterministic_joint_characteristics_is_identity_on_levels() {
        let m = poisson_model();
        let jc = JointCharacteristics::deterministic(&m, 0.5, 0.7, 0.1, -0.2).unwrap();
        assert_eq!(jc.ell_plus, 0.5);
        assert_eq!(jc.ell_minus, 0.7);
        assert_eq!(jc.drift_plus, 0.1);
        assert_eq!(jc.drift_minus, -0.2);
        assert_eq!(jc.cov_plus, vec![0.0]);
        assert_eq!(jc.cov_minus, vec![0.0]);
        assert_eq!(jc.jump_marks, vec![(0.0, 0.0)]);
    }

    #[test]
    fn deterministic_rejects_out_of_range() {
        let m = poisson_model();
        assert!(matches!(
            JointCharacteristics::deterministic(&m, 1.5, 1.0, 0.0, 0.0),
            Err(ModelError::OutOfRange(_))
        ));
        assert!(matches!(
            JointCharacteristics::deterministic(&m, 1.0, 0.0, 0.0, 0.0),
            Err(ModelError::OutOfRange(_))
        ));
    }

    #[test]
    fn json_round_trip_uses_wire_names() {
        let text = r#"{
            "dim": 1,
            "drift": [1.0],
            "diffusion": [[0.0]],
            "jumps": [{"u": [1.0], "lambda": 1.0}],
            "horizon": 1.0
        }"#;
        let spec: ModelSpec = serde_json::from_str(text).unwrap();
        let m = LevyModel::from_spec(spec).unwrap();
        assert_eq!(m, poisson_model());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn second_moment_is_symmetric_psd(
                atoms in proptest::collection::vec(
                    (proptest::collection::vec(-2.0f64..2.0, 2), 0.01f64..3.0),
                    0..6,
                )
            ) {
                let atoms: Vec<JumpAtom> = atoms
                    .into_iter()
                    .map(|(size, intensity)| JumpAtom { size, intensity })
                    .collect();
                let m = LevyModel::new(
                    2,
                    vec![0.0, 0.0],
                    vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                    atoms,
                    1.0,
                ).unwrap();
                let s = m.second_moment();
                prop_assert!((s[0][1] - s[1][0]).abs() <= 1e-12);
                let (eig, _) = crate::linalg::sym_eig(&s);
                let scale = eig.iter().fold(1.0f64, |a, &e| a.max(e.abs()));
                for e in eig {
                    prop_assert!(e >= -1e-12 * scale);
                }
            }
        }
    }
}
