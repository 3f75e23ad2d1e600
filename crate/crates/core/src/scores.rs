//! Factor scores (Bartlett and Thomson), standardized residuals and the
//! conditional score covariance.
//!
//! Scores use the closed form `F̂ = ZΛ_z(Λ_zᵀΛ_z)⁻¹`, which is valid for any
//! centered sample with matching columns. On the sample the model was fitted
//! on, it coincides with the SVD form `U₁√(n−1)·√(ω/(ω−1))`, available
//! separately as [`bartlett_scores_svd`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FaError, Result};
use crate::estimator::Estimator;
use crate::model::{DataMatrix, FaModel};
use crate::registry::{Named, Registry};
use crate::svd::scaled_data;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Bartlett,
    Thomson,
}

/// `Ê_z = Z − F̂Λ̂_zᵀ` and its column mean squares.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedResiduals {
    /// `n × p`.
    pub residuals_z: DMatrix<f64>,
    /// `Σ_i Ê_z,ij² / (n − 1)` per variable.
    pub msq: DVector<f64>,
    /// `Σ_j msq_j`, equal to `tr(D₂²)/(n − 1)`.
    pub total_msq: f64,
    /// `p / (p − k)`: brings the average of `msq` back to the unit scale.
    pub dof_factor: f64,
    /// `msq · dof_factor`.
    pub msq_corrected: DVector<f64>,
}

impl StandardizedResiduals {
    /// Average corrected mean square; 1 at a converged fit.
    pub fn mean_corrected(&self) -> f64 {
        self.msq_corrected.mean()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    /// `n × k`.
    pub scores: DMatrix<f64>,
    pub kind: ScoreKind,
    /// Present for Bartlett scores only.
    pub residuals: Option<StandardizedResiduals>,
}

pub trait ScoreEstimator: Named + Send + Sync {
    fn kind(&self) -> ScoreKind;
    fn scores(&self, model: &FaModel, x: &DataMatrix) -> Result<ScoreSet>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Bartlett;

#[derive(Debug, Default, Clone, Copy)]
pub struct Thomson;

impl Named for Bartlett {
    fn name(&self) -> &'static str {
        "bartlett"
    }
}

impl Named for Thomson {
    fn name(&self) -> &'static str {
        "thomson"
    }
}

impl ScoreEstimator for Bartlett {
    fn kind(&self) -> ScoreKind {
        ScoreKind::Bartlett
    }

    fn scores(&self, model: &FaModel, x: &DataMatrix) -> Result<ScoreSet> {
        bartlett_scores(model, x)
    }
}

impl ScoreEstimator for Thomson {
    fn kind(&self) -> ScoreKind {
        ScoreKind::Thomson
    }

    fn scores(&self, model: &FaModel, x: &DataMatrix) -> Result<ScoreSet> {
        thomson_scores(model, x)
    }
}

pub fn builtin_score_estimators() -> Registry<dyn ScoreEstimator> {
    let mut r: Registry<dyn ScoreEstimator> = Registry::empty();
    r.register(Box::new(Bartlett)).register(Box::new(Thomson));
    r
}

fn check_model(model: &FaModel, x: &DataMatrix) -> Result<()> {
    if x.p() != model.p() {
        return Err(FaError::invalid(format!(
            "data has {} columns but the model has {} variables",
            x.p(),
            model.p()
        )));
    }
    if model.omega.len() != model.k() {
        return Err(FaError::invalid("model omega length differs from k"));
    }
    match model.omega.iter().enumerate().find(|(_, &w)| !(w > 1.0)) {
        Some((index, &omega)) => Err(FaError::DegenerateFactor { index, omega }),
        None => Ok(()),
    }
}

/// `F̂ = ZΛ_z(Λ_zᵀΛ_z)⁻¹`, with standardized residuals attached.
pub fn bartlett_scores(model: &FaModel, x: &DataMatrix) -> Result<ScoreSet> {
    check_model(model, x)?;
    let z = scaled_data(x, &model.psi2)?;
    let lz = model.lambda_z();
    let gram = lz.transpose() * &lz;
    let chol = gram.cholesky().ok_or(FaError::DegenerateFactor {
        index: 0,
        omega: model.omega.min(),
    })?;
    let scores = chol.solve(&(lz.transpose() * z.transpose())).transpose();
    let residuals = residuals_from(&z, &scores, &lz, model.k());
    Ok(ScoreSet {
        scores,
        kind: ScoreKind::Bartlett,
        residuals: Some(residuals),
    })
}

/// `F̃ = F̂ · diag((ω − 1)/ω)`, the best linear predictor of the factors.
pub fn thomson_scores(model: &FaModel, x: &DataMatrix) -> Result<ScoreSet> {
    let bartlett = bartlett_scores(model, x)?;
    let mut scores = bartlett.scores;
    for (j, mut col) in scores.column_iter_mut().enumerate() {
        let w = model.omega[j];
        col.scale_mut((w - 1.0) / w);
    }
    Ok(ScoreSet {
        scores,
        kind: ScoreKind::Thomson,
        residuals: None,
    })
}

/// Bartlett scores through the SVD of the rescaled sample:
/// `U₁√(n−1)·diag(√(ω/(ω−1)))`. Only meaningful on the fitted sample. Column
/// signs follow the model's loadings.
pub fn bartlett_scores_svd(model: &FaModel, x: &DataMatrix) -> Result<DMatrix<f64>> {
    check_model(model, x)?;
    let n = x.n();
    let svd = Estimator::default().decompose(x, &model.psi2, model.k())?;
    let omega = svd.omega(n);
    if let Some((index, &w)) = omega.iter().enumerate().find(|(_, &w)| !(w > 1.0)) {
        return Err(FaError::DegenerateFactor { index, omega: w });
    }
    let lz = model.lambda_z();
    let root = ((n - 1) as f64).sqrt();
    let mut f = svd.u1.clone();
    for (j, mut col) in f.column_iter_mut().enumerate() {
        let sign = if svd.v1.column(j).dot(&lz.column(j)) < 0.0 { -1.0 } else { 1.0 };
        col.scale_mut(sign * root * (omega[j] / (omega[j] - 1.0)).sqrt());
    }
    Ok(f)
}

fn residuals_from(z: &DMatrix<f64>, scores: &DMatrix<f64>, lz: &DMatrix<f64>, k: usize) -> StandardizedResiduals {
    let (n, p) = z.shape();
    let residuals_z = z - scores * lz.transpose();
    let denom = (n - 1) as f64;
    let msq = DVector::from_iterator(p, residuals_z.column_iter().map(|c| c.norm_squared() / denom));
    let dof_factor = p as f64 / (p - k) as f64;
    StandardizedResiduals {
        total_msq: msq.sum(),
        msq_corrected: &msq * dof_factor,
        msq,
        dof_factor,
        residuals_z,
    }
}

/// Recomputes `Ê_z = Z − F̂Λ̂_zᵀ` for a given Bartlett score set.
pub fn standardized_residuals(model: &FaModel, x: &DataMatrix, scores: &ScoreSet) -> Result<StandardizedResiduals> {
    if scores.kind != ScoreKind::Bartlett {
        return Err(FaError::invalid("standardized residuals are defined for Bartlett scores only"));
    }
    check_model(model, x)?;
    if scores.scores.shape() != (x.n(), model.k()) {
        return Err(FaError::invalid("score matrix shape does not match data and model"));
    }
    let z = scaled_data(x, &model.psi2)?;
    Ok(residuals_from(&z, &scores.scores, &model.lambda_z(), model.k()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCovariance {
    /// `(Λ̂_zᵀΛ̂_z)⁻¹`, the conditional variance of the Bartlett scores.
    pub covariance: DMatrix<f64>,
    /// `max_j ψ²_j / ψ̂²_j` when the true uniquenesses are known.
    pub bound_factor: Option<f64>,
}

pub fn score_covariance(model: &FaModel, true_psi2: Option<&DVector<f64>>) -> Result<ScoreCovariance> {
    let lz = model.lambda_z();
    let gram = lz.transpose() * &lz;
    let covariance = gram
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or(FaError::DegenerateFactor {
            index: gram.diagonal().imin(),
            omega: 1.0 + gram.diagonal().min(),
        })?;
    let bound_factor = match true_psi2 {
        None => None,
        Some(t) if t.len() != model.p() => {
            return Err(FaError::invalid("true psi2 length differs from the model"));
        }
        Some(t) => Some(
            t.iter()
                .zip(model.psi2.iter())
                .map(|(a, b)| a / b)
                .fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    Ok(ScoreCovariance {
        covariance,
        bound_factor,
    })
}

/// Mean squared error between `estimated · Q` and `truth`, with `Q` the
/// orthogonal matrix minimizing it. Both matrices are `n × k`.
pub fn procrustes_mse(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimated.shape() != truth.shape() {
        return Err(FaError::invalid("score matrices differ in shape"));
    }
    let m = estimated.transpose() * truth;
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(FaError::Numerical("Procrustes SVD failed".into())),
    };
    let aligned = estimated * (u * vt);
    Ok((aligned - truth).norm_squared() / truth.len() as f64)
}
