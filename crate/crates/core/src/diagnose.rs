//! Gaussian log-likelihood, eigenvalue summaries and a combined diagnostic
//! report for a fitted model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{FaError, Result};
use crate::estimator::{estimating_residual, heywood_report, lambda_from_svd, EstimatingResidual, Estimator, HeywoodReport};
use crate::model::{check_positive, DataMatrix, FaModel};
use crate::scores::bartlett_scores;

/// `tr(Ω_z)/k` versus `1 + (θ − 1)p/k` is asserted to this relative precision
/// on converged models.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Log-determinant of `Σ = ΛΛᵀ + Ψ²` and `Σ_i x_iᵀ Σ⁻¹ x_i`, both through
/// the Woodbury identity.
fn woodbury_terms(x: &DMatrix<f64>, lambda: &DMatrix<f64>, psi2: &DVector<f64>) -> Result<(f64, f64)> {
    let p = x.ncols();
    if lambda.nrows() != p || psi2.len() != p {
        return Err(FaError::invalid(format!(
            "data has {p} columns but lambda is {}x{} and psi2 has length {}",
            lambda.nrows(),
            lambda.ncols(),
            psi2.len()
        )));
    }
    check_positive(psi2, "psi2")?;
    let inv_psi2 = psi2.map(|v| 1.0 / v);

    let mut quad = 0.0;
    for (j, col) in x.column_iter().enumerate() {
        quad += col.norm_squared() * inv_psi2[j];
    }
    let mut logdet: f64 = psi2.iter().map(|v| v.ln()).sum();

    let k = lambda.ncols();
    if k > 0 {
        // W = Ψ⁻²Λ, M = I + ΛᵀΨ⁻²Λ = LLᵀ
        let mut w = lambda.clone();
        for (j, mut row) in w.row_iter_mut().enumerate() {
            row.scale_mut(inv_psi2[j]);
        }
        let m = DMatrix::identity(k, k) + lambda.transpose() * &w;
        let chol = m
            .cholesky()
            .ok_or_else(|| FaError::Numerical("I + ΛᵀΨ⁻²Λ is not positive definite".into()))?;
        logdet += 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let proj = w.transpose() * x.transpose();
        let solved = chol
            .l()
            .solve_lower_triangular(&proj)
            .ok_or_else(|| FaError::Numerical("triangular solve failed".into()))?;
        quad -= solved.norm_squared();
    }
    Ok((logdet, quad))
}

fn assemble(weight: f64, p: usize, logdet: f64, quad: f64) -> Result<f64> {
    let ll = -0.5 * (weight * (p as f64 * (2.0 * PI).ln() + logdet) + quad);
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(FaError::Numerical(format!("log-likelihood is not finite ({ll})")))
    }
}

/// Log-likelihood of the rows of `x` as independent `N(0, ΛΛᵀ + Ψ²)` draws.
///
/// Cost is `O(npk + k³)`; no `p × p` matrix is formed. `lambda` may have zero
/// columns.
pub fn gaussian_loglik(x: &DataMatrix, lambda: &DMatrix<f64>, psi2: &DVector<f64>) -> Result<f64> {
    let (logdet, quad) = woodbury_terms(x.values(), lambda, psi2)?;
    assemble(x.n() as f64, x.p(), logdet, quad)
}

/// Log-likelihood of a column-centered sample, counting `n − 1` degrees of
/// freedom: the density of the `n − 1` orthogonal contrasts of the rows.
///
/// Its stationary points in `(Λ, ψ²)` are the solutions of the estimating
/// equations with `S_xx = XᵀX/(n − 1)`.
pub fn centered_gaussian_loglik(x: &DataMatrix, lambda: &DMatrix<f64>, psi2: &DVector<f64>) -> Result<f64> {
    let (logdet, quad) = woodbury_terms(x.values(), lambda, psi2)?;
    assemble((x.n() - 1) as f64, x.p(), logdet, quad)
}

/// Centered log-likelihood at `ψ²` with the loadings the estimating equation
/// implies for it, `Λ = ΨV₁(Ω − I)^{1/2}`.
pub fn profile_loglik(x: &DataMatrix, psi2: &DVector<f64>, k: usize) -> Result<f64> {
    let svd = Estimator::default().decompose(x, psi2, k)?;
    let lambda = lambda_from_svd(psi2, &svd, x.n())?;
    centered_gaussian_loglik(x, &lambda, psi2)
}

/// Central finite-difference gradient of [`centered_gaussian_loglik`] in each
/// `ψ²_j`, loadings held fixed, with step `rel_step · ψ²_j`.
pub fn psi2_gradient_fd(
    x: &DataMatrix,
    lambda: &DMatrix<f64>,
    psi2: &DVector<f64>,
    rel_step: f64,
) -> Result<DVector<f64>> {
    let mut grad = DVector::zeros(psi2.len());
    for j in 0..psi2.len() {
        let h = rel_step * psi2[j];
        let mut up = psi2.clone();
        up[j] += h;
        let mut down = psi2.clone();
        down[j] -= h;
        let diff = centered_gaussian_loglik(x, lambda, &up)? - centered_gaussian_loglik(x, lambda, &down)?;
        grad[j] = diff / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSummary {
    /// `tr(Ω_z)`, the sum of the retained eigenvalues.
    pub trace_omega: f64,
    /// `(1/p) Σ_j S_xx,jj / ψ̂²_j`.
    pub theta: f64,
    /// `tr(Ω_z)/k`.
    pub mean_omega: f64,
    /// `|tr(Ω_z)/k − (1 + (θ − 1)p/k)|` relative to `tr(Ω_z)/k`.
    pub identity_gap: f64,
    /// `Some(ok)` when the identity was checked against [`IDENTITY_TOL`].
    pub identity_holds: Option<bool>,
    pub warnings: Vec<String>,
}

pub fn omega_summary(model: &FaModel, sxx_diag: &DVector<f64>) -> Result<OmegaSummary> {
    let (p, k) = (model.p(), model.k());
    if sxx_diag.len() != p {
        return Err(FaError::invalid("sxx_diag length differs from the model"));
    }
    if k == 0 {
        return Err(FaError::invalid("model has no factors"));
    }
    let trace_omega = model.omega.sum();
    let theta = sxx_diag.iter().zip(model.psi2.iter()).map(|(s, v)| s / v).sum::<f64>() / p as f64;
    let mean_omega = trace_omega / k as f64;
    let predicted = 1.0 + (theta - 1.0) * p as f64 / k as f64;
    let identity_gap = (mean_omega - predicted).abs() / mean_omega.abs();
    let mut warnings = Vec::new();
    let identity_holds = if model.converged {
        Some(identity_gap <= IDENTITY_TOL)
    } else {
        warnings.push("model is not converged; eigenvalue diagnostics are stale".to_string());
        None
    };
    Ok(OmegaSummary {
        trace_omega,
        theta,
        mean_omega,
        identity_gap,
        identity_holds,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct DiagnosticReport {
    pub estimating: EstimatingResidual,
    pub omega: OmegaSummary,
    /// `Σ_j` mean square of the standardized residuals.
    pub residual_msq_total: f64,
    /// `p − k`, the value `residual_msq_total` should be close to.
    pub residual_target: f64,
    pub heywood: Option<HeywoodReport>,
    /// [`gaussian_loglik`] at the fit.
    pub loglik: f64,
    /// [`centered_gaussian_loglik`] at the fit.
    pub centered_loglik: f64,
}

pub fn diagnose(model: &FaModel, x: &DataMatrix) -> Result<DiagnosticReport> {
    if x.p() != model.p() {
        return Err(FaError::invalid(format!(
            "data has {} columns but the model has {} variables",
            x.p(),
            model.p()
        )));
    }
    let estimating = estimating_residual(x, &model.lambda, &model.psi2)?;
    let omega = omega_summary(model, &x.sxx_diag())?;
    let scores = bartlett_scores(model, x)?;
    let residual_msq_total = scores.residuals.as_ref().map_or(f64::NAN, |r| r.total_msq);
    Ok(DiagnosticReport {
        estimating,
        omega,
        residual_msq_total,
        residual_target: (model.p() - model.k()) as f64,
        heywood: heywood_report(&model.trace),
        loglik: gaussian_loglik(x, &model.lambda, &model.psi2)?,
        centered_loglik: centered_gaussian_loglik(x, &model.lambda, &model.psi2)?,
    })
}
