//! ψ² update rules. Both solve the same fixed-point system; they differ in
//! which form of the uniqueness equation is iterated.

use nalgebra::{DMatrix, DVector};

use crate::error::{FaError, Result};
use crate::model::unscale_rows;
use crate::registry::{Named, Registry};
use crate::svd::TruncatedSvd;

/// Retained eigenvalues at or below this distance above 1 produce
/// near-zero loading columns and a warning on the fitted model.
pub const NEAR_BOUNDARY: f64 = 1e-12;

/// One ψ² update given the SVD of `Z = XΨ⁻¹` at the current ψ².
pub trait PsiUpdate: Named + Send + Sync {
    fn update(
        &self,
        sxx_diag: &DVector<f64>,
        psi2: &DVector<f64>,
        svd: &TruncatedSvd,
        n: usize,
    ) -> Result<DVector<f64>>;

    /// Whether every output is provably positive given positive input.
    fn keeps_positive(&self) -> bool;
}

/// `ψ²_j = S_xx,jj − (ΛΛᵀ)_jj`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SubtractRule;

/// `ψ²_j = S_xx,jj / (1 + (Λ_zΛ_zᵀ)_jj)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct RescaleRule;

impl Named for SubtractRule {
    fn name(&self) -> &'static str {
        "subtract"
    }
}

impl Named for RescaleRule {
    fn name(&self) -> &'static str {
        "rescale"
    }
}

impl PsiUpdate for SubtractRule {
    fn update(&self, sxx_diag: &DVector<f64>, psi2: &DVector<f64>, svd: &TruncatedSvd, n: usize) -> Result<DVector<f64>> {
        psi_step_subtract(sxx_diag, psi2, svd, n)
    }

    fn keeps_positive(&self) -> bool {
        true
    }
}

impl PsiUpdate for RescaleRule {
    fn update(&self, sxx_diag: &DVector<f64>, _psi2: &DVector<f64>, svd: &TruncatedSvd, n: usize) -> Result<DVector<f64>> {
        psi_step_rescale(sxx_diag, svd, n)
    }

    fn keeps_positive(&self) -> bool {
        true
    }
}

pub fn builtin_rules() -> Registry<dyn PsiUpdate> {
    let mut r: Registry<dyn PsiUpdate> = Registry::empty();
    r.register(Box::new(SubtractRule)).register(Box::new(RescaleRule));
    r
}

/// Checks the retained eigenvalues `D₁²/(n−1)` all exceed 1.
pub(crate) fn check_omega(omega: &DVector<f64>) -> Result<()> {
    match omega.iter().enumerate().find(|(_, &w)| !(w > 1.0)) {
        Some((index, &eigenvalue)) => Err(FaError::EigenvalueDeficit { index, eigenvalue }),
        None => Ok(()),
    }
}

/// `Λ_z = V₁(D₁²/(n−1) − I)^{1/2}`.
pub fn lambda_z_from_svd(svd: &TruncatedSvd, n: usize) -> Result<DMatrix<f64>> {
    let omega = svd.omega(n);
    check_omega(&omega)?;
    let mut lz = svd.v1.clone();
    for (j, mut col) in lz.column_iter_mut().enumerate() {
        col.scale_mut((omega[j] - 1.0).sqrt());
    }
    Ok(lz)
}

/// `Λ = ΨV₁(D₁²/(n−1) − I)^{1/2}`.
pub fn lambda_from_svd(psi2: &DVector<f64>, svd: &TruncatedSvd, n: usize) -> Result<DMatrix<f64>> {
    if psi2.len() != svd.v1.nrows() {
        return Err(FaError::invalid(format!(
            "psi2 has length {} but the SVD has {} variables",
            psi2.len(),
            svd.v1.nrows()
        )));
    }
    Ok(unscale_rows(&lambda_z_from_svd(svd, n)?, psi2))
}

/// `diag(S_xx − ΛΛᵀ)` for given loadings.
pub fn psi_from_loadings(sxx_diag: &DVector<f64>, lambda: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        sxx_diag.len(),
        lambda.row_iter().enumerate().map(|(j, row)| sxx_diag[j] - row.norm_squared()),
    )
}

/// Row-wise `(V₁(Ω − I)V₁ᵀ)_jj`, i.e. `diag(Λ_zΛ_zᵀ)`.
fn lambda_z_row_mass(svd: &TruncatedSvd, n: usize) -> Result<DVector<f64>> {
    let lz = lambda_z_from_svd(svd, n)?;
    Ok(DVector::from_iterator(lz.nrows(), lz.row_iter().map(|r| r.norm_squared())))
}

pub fn psi_step_subtract(
    sxx_diag: &DVector<f64>,
    psi2: &DVector<f64>,
    svd: &TruncatedSvd,
    n: usize,
) -> Result<DVector<f64>> {
    if sxx_diag.len() != psi2.len() || psi2.len() != svd.v1.nrows() {
        return Err(FaError::invalid("sxx_diag, psi2 and the SVD disagree on the number of variables"));
    }
    let mass = lambda_z_row_mass(svd, n)?;
    let out = DVector::from_iterator(
        psi2.len(),
        (0..psi2.len()).map(|j| sxx_diag[j] - psi2[j] * mass[j]),
    );
    if let Some((j, &v)) = out.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(FaError::domain(format!(
            "update produced psi2[{j}] = {v}; sxx_diag is inconsistent with the rescaled data"
        )));
    }
    Ok(out)
}

pub fn psi_step_rescale(sxx_diag: &DVector<f64>, svd: &TruncatedSvd, n: usize) -> Result<DVector<f64>> {
    if sxx_diag.len() != svd.v1.nrows() {
        return Err(FaError::invalid("sxx_diag and the SVD disagree on the number of variables"));
    }
    if let Some((j, &v)) = sxx_diag.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(FaError::domain(format!("variable {j} has sample variance {v} (constant column)")));
    }
    let mass = lambda_z_row_mass(svd, n)?;
    Ok(DVector::from_iterator(
        sxx_diag.len(),
        (0..sxx_diag.len()).map(|j| sxx_diag[j] / (1.0 + mass[j])),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    /// A hand-built SVD record with the given right vectors and
    /// `D₁²/(n−1)` values (n = 2, so d² = omega).
    fn svd_with(v1: DMatrix<f64>, omega: &[f64]) -> TruncatedSvd {
        let k = v1.ncols();
        TruncatedSvd {
            u1: DMatrix::identity(2, k),
            d1: DVector::from_iterator(k, omega.iter().map(|w| w.sqrt())),
            v1,
            tail_sum_sq: 0.0,
            rank_bound: 1,
            positive: k,
        }
    }

    #[test]
    fn lambda_identity_case() {
        let svd = svd_with(dmatrix![1.0; 0.0], &[2.0]);
        let l = lambda_from_svd(&DVector::from_element(2, 1.0), &svd, 2).unwrap();
        assert!((l - dmatrix![1.0; 0.0]).amax() < 1e-15);
    }

    #[test]
    fn lambda_rescaled_case() {
        let s = 1.0 / 3f64.sqrt();
        let svd = svd_with(dmatrix![s; s; s], &[13.0]);
        let l = lambda_from_svd(&DVector::from_element(3, 4.0), &svd, 2).unwrap();
        for v in l.iter() {
            assert!((v - 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn lambda_boundary_is_accepted() {
        let svd = svd_with(dmatrix![1.0; 0.0], &[1.0 + 1e-15]);
        let l = lambda_from_svd(&DVector::from_element(2, 1.0), &svd, 2).unwrap();
        assert!(l[(0, 0)] > 0.0 && l[(0, 0)] < 1e-7);
    }

    #[test]
    fn lambda_deficit_names_index() {
        let svd = svd_with(dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0], &[3.0, 0.9]);
        let err = lambda_from_svd(&DVector::from_element(3, 1.0), &svd, 2).unwrap_err();
        assert!(matches!(err, FaError::EigenvalueDeficit { index: 1, .. }));
    }

    #[test]
    fn subtract_from_loadings() {
        let sxx = DVector::from_vec(vec![2.0, 2.0]);
        assert_eq!(psi_from_loadings(&sxx, &dmatrix![1.0; 1.0]).as_slice(), &[1.0, 1.0]);
        assert_eq!(psi_from_loadings(&sxx, &DMatrix::zeros(2, 1)), sxx);
    }

    #[test]
    fn subtract_rank_one_fixed_point() {
        // S_zz = λλᵀ + I with λ = (2,2,2): top eigenvalue 13, eigenvector 1/√3
        let s = 1.0 / 3f64.sqrt();
        let svd = svd_with(dmatrix![s; s; s], &[13.0]);
        let psi = DVector::from_element(3, 1.0);
        let lambda = lambda_from_svd(&psi, &svd, 2).unwrap();
        for v in lambda.iter() {
            assert!((v - 2.0).abs() < 1e-14);
        }
        let sxx = DVector::from_element(3, 5.0);
        let out = psi_step_subtract(&sxx, &psi, &svd, 2).unwrap();
        for v in out.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rescale_examples() {
        let sxx = DVector::from_vec(vec![3.0, 7.0]);
        // omega = 1 + tiny gives Λ_z ≈ 0
        let svd = svd_with(dmatrix![1.0; 0.0], &[1.0 + 1e-15]);
        let out = psi_step_rescale(&sxx, &svd, 2).unwrap();
        assert!((&out - &sxx).abs().max() < 1e-12);

        // (Λ_zΛ_zᵀ)_11 = 4 with S_xx,11 = 5
        let svd = svd_with(dmatrix![1.0; 0.0], &[5.0]);
        let out = psi_step_rescale(&DVector::from_vec(vec![5.0, 2.0]), &svd, 2).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-14);
        assert_eq!(out[1], 2.0);

        let s = 1.0 / 3f64.sqrt();
        let svd = svd_with(dmatrix![s; s; s], &[13.0]);
        let out = psi_step_rescale(&DVector::from_element(3, 5.0), &svd, 2).unwrap();
        for v in out.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rescale_rejects_constant_column() {
        let svd = svd_with(dmatrix![1.0; 0.0], &[5.0]);
        let err = psi_step_rescale(&DVector::from_vec(vec![5.0, 0.0]), &svd, 2).unwrap_err();
        assert!(matches!(err, FaError::Domain(_)));
    }

    #[test]
    fn registry_lookup() {
        let r = builtin_rules();
        assert_eq!(r.names(), vec!["subtract", "rescale"]);
        assert!(r.get("subtract").unwrap().keeps_positive());
        assert!(r.get("newton").is_none());
    }
}
