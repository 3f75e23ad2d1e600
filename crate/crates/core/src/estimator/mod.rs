//! Fixed-point solver for the loadings / uniqueness estimating equations.
//!
//! Each iteration rescales the data by the current Ψ, takes the rank-k SVD
//! of `Z = XΨ⁻¹`, and feeds it to a ψ² update rule. Nothing of size `p × p`
//! is ever formed when `p > n`.

mod rules;

pub use rules::{
    builtin_rules, lambda_from_svd, lambda_z_from_svd, psi_from_loadings, psi_step_rescale,
    psi_step_subtract, PsiUpdate, RescaleRule, SubtractRule, NEAR_BOUNDARY,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{FaError, Result};
use crate::model::{canonicalize, check_positive, DataMatrix, FaConfig, FaModel, IterationRecord, IterationTrace};
use crate::registry::Registry;
use crate::svd::{scaled_data, AutoSvd, SvdStrategy, TruncatedSvd};

/// How far a candidate `(Λ, ψ²)` is from solving both estimating equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatingResidual {
    /// `‖Λ − Λ̂(ψ²)‖_F / (1 + ‖Λ‖_F)`, both sides canonicalized.
    pub lambda_residual: f64,
    /// `max_j |ψ²_j − (S_xx,jj − (ΛΛᵀ)_jj)| / S_xx,jj`.
    pub psi_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeywoodReport {
    pub min_psi2: f64,
    /// Iteration at which the minimum occurred.
    pub at_iter: usize,
    /// Set when any iterate had a zero or negative uniqueness.
    pub heywood: bool,
}

/// Summarizes the smallest uniqueness seen over a trace. `None` for an empty
/// trace.
pub fn heywood_report(trace: &IterationTrace) -> Option<HeywoodReport> {
    trace
        .records()
        .iter()
        .min_by(|a, b| a.min_psi2.total_cmp(&b.min_psi2))
        .map(|r| HeywoodReport {
            min_psi2: r.min_psi2,
            at_iter: r.iter,
            heywood: !(r.min_psi2 > 0.0),
        })
}

/// A solver configured with a set of update rules and an SVD route.
pub struct Estimator {
    rules: Registry<dyn PsiUpdate>,
    svd: Box<dyn SvdStrategy>,
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator {
            rules: builtin_rules(),
            svd: Box::new(AutoSvd),
        }
    }
}

impl Estimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rule(mut self, rule: Box<dyn PsiUpdate>) -> Self {
        self.rules.register(rule);
        self
    }

    pub fn with_svd(mut self, svd: Box<dyn SvdStrategy>) -> Self {
        self.svd = svd;
        self
    }

    pub fn rules(&self) -> &Registry<dyn PsiUpdate> {
        &self.rules
    }

    /// SVD of the rescaled data, failing if fewer than k singular values are
    /// numerically positive.
    pub fn decompose(&self, x: &DataMatrix, psi2: &DVector<f64>, k: usize) -> Result<TruncatedSvd> {
        let z = scaled_data(x, psi2)?;
        let svd = self.svd.truncated(&z, k)?;
        if svd.positive < k {
            return Err(FaError::RankAnomaly {
                positive: svd.positive,
                k,
                rank_bound: svd.rank_bound,
            });
        }
        Ok(svd)
    }

    pub fn fit(&self, x: &DataMatrix, config: &FaConfig) -> Result<FaModel> {
        let (n, p) = (x.n(), x.p());
        config.validate(n, p)?;
        if !x.is_centered() {
            return Err(FaError::invalid("data must be column-centered"));
        }
        let rule = self.rules.get(&config.rule).ok_or_else(|| {
            FaError::invalid(format!(
                "unknown update rule '{}' (available: {})",
                config.rule,
                self.rules.names().join(", ")
            ))
        })?;
        let sxx = x.sxx_diag();
        if let Some(j) = sxx.iter().position(|&v| !(v > 0.0)) {
            return Err(FaError::domain(format!(
                "column {} ('{}') is constant",
                j + 1,
                x.column_names()[j]
            )));
        }
        let k = config.k;
        let target = (p - k) as f64;
        let denom = (n - 1) as f64;

        let mut psi2 = config.psi2_init.resolve(&sxx)?;
        let mut svd = self.decompose(x, &psi2, k)?;
        let mut trace = IterationTrace::new();
        let mut converged = false;

        for iter in 1..=config.max_iter {
            let next = rule.update(&sxx, &psi2, &svd, n)?;
            check_positive(&next, "psi2 iterate").map_err(|e| match e {
                FaError::Domain(msg) => FaError::domain(format!("iteration {iter}: {msg}")),
                other => other,
            })?;
            let next_svd = self.decompose(x, &next, k)?;

            let rel_change = relative_change(&psi2, &next);
            let tail_sum = next_svd.tail_sum_sq / denom;
            let omega = next_svd.omega(n);
            trace.push(IterationRecord {
                iter,
                tail_sum,
                min_psi2: next.min(),
                max_psi2: next.max(),
                psi2_rel_change: rel_change,
                omega_min: omega.min(),
            });
            psi2 = next;
            svd = next_svd;

            if rel_change < config.tol_psi && (tail_sum - target).abs() <= config.tol_trace * p as f64 {
                converged = true;
                break;
            }
        }

        let omega = svd.omega(n);
        let lambda = lambda_from_svd(&psi2, &svd, n)?;
        let mut warnings = Vec::new();
        for (j, &w) in omega.iter().enumerate() {
            if w - 1.0 <= NEAR_BOUNDARY {
                warnings.push(format!(
                    "retained eigenvalue {j} = {w} is within {NEAR_BOUNDARY:e} of 1; loading column {j} is near zero"
                ));
            }
        }
        if !converged {
            warnings.push(format!("did not converge within {} iterations", config.max_iter));
        }

        Ok(FaModel {
            lambda: canonicalize(&lambda, &psi2)?,
            psi2,
            omega,
            n_used: n,
            converged,
            trace,
            column_names: x.column_names().to_vec(),
            column_scales: x.column_scales().clone(),
            standardized: x.is_standardized(),
            config: config.clone(),
            warnings,
        })
    }

    pub fn estimating_residual(
        &self,
        x: &DataMatrix,
        lambda: &DMatrix<f64>,
        psi2: &DVector<f64>,
    ) -> Result<EstimatingResidual> {
        let (n, p) = (x.n(), x.p());
        if lambda.nrows() != p || psi2.len() != p {
            return Err(FaError::invalid("lambda / psi2 dimensions do not match the data"));
        }
        let k = lambda.ncols();
        let current = canonicalize(lambda, psi2)?;
        let sxx = x.sxx_diag();

        let svd = self.svd.truncated(&scaled_data(x, psi2)?, k)?;
        let omega = svd.omega(n);
        let mut lz = svd.v1.clone();
        for (j, mut col) in lz.column_iter_mut().enumerate() {
            // outside the feasible region the equation is simply unmet
            col.scale_mut((omega[j] - 1.0).max(0.0).sqrt());
        }
        let implied = canonicalize(&crate::model::unscale_rows(&lz, psi2), psi2)?;
        let lambda_residual = (&current - &implied).norm() / (1.0 + current.norm());

        let fitted = psi_from_loadings(&sxx, &current);
        let psi_residual = (0..p)
            .map(|j| (psi2[j] - fitted[j]).abs() / sxx[j])
            .fold(0.0, f64::max);
        Ok(EstimatingResidual {
            lambda_residual,
            psi_residual,
        })
    }
}

/// Fits with the built-in rules and automatic SVD route.
pub fn fit(x: &DataMatrix, config: &FaConfig) -> Result<FaModel> {
    Estimator::default().fit(x, config)
}

pub fn estimating_residual(x: &DataMatrix, lambda: &DMatrix<f64>, psi2: &DVector<f64>) -> Result<EstimatingResidual> {
    Estimator::default().estimating_residual(x, lambda, psi2)
}

fn relative_change(old: &DVector<f64>, new: &DVector<f64>) -> f64 {
    old.iter()
        .zip(new.iter())
        .map(|(o, n)| (n - o).abs() / o)
        .fold(0.0, f64::max)
}
