//! Domain types shared by every stage of the pipeline, plus the canonical
//! form that pins down the rotation, ordering and sign of a loadings matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FaError, Result};

/// Off-diagonal mass (relative to the diagonal) below which `Λᵀ Ψ⁻² Λ` is
/// treated as already diagonal and no rotation is applied.
const DIAGONAL_SKIP_TOL: f64 = 1e-10;

/// An `n × p` observation matrix (rows are observations).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
    centered: bool,
    standardized: bool,
    column_means: DVector<f64>,
    column_scales: DVector<f64>,
}

impl DataMatrix {
    /// Wraps raw observations. Column names default to `x1..xp`.
    pub fn new(values: DMatrix<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 {
            return Err(FaError::invalid(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(FaError::invalid("need at least 1 variable"));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FaError::invalid(format!(
                "non-finite value at row {}, column {}",
                idx % n + 1,
                idx / n + 1
            )));
        }
        let column_names = match column_names {
            Some(names) if names.len() != p => {
                return Err(FaError::invalid(format!(
                    "{} column names for {p} columns",
                    names.len()
                )))
            }
            Some(names) => names,
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };
        Ok(DataMatrix {
            values,
            column_names,
            centered: false,
            standardized: false,
            column_means: DVector::zeros(p),
            column_scales: DVector::from_element(p, 1.0),
        })
    }

    /// Convenience: wrap and column-center in one step.
    pub fn centered_from(values: DMatrix<f64>) -> Result<Self> {
        Ok(Self::new(values, None)?.center())
    }

    /// Subtracts column means. The means removed are kept in `column_means`.
    pub fn center(mut self) -> Self {
        let n = self.n() as f64;
        for (j, mut col) in self.values.column_iter_mut().enumerate() {
            // second pass mops up the rounding left by the first
            let mut removed = 0.0;
            for _ in 0..2 {
                let mean = col.sum() / n;
                col.add_scalar_mut(-mean);
                removed += mean;
            }
            self.column_means[j] += removed * self.column_scales[j];
        }
        self.centered = true;
        self
    }

    /// Centers (if needed) and scales each column to unit sample variance.
    pub fn standardize(self) -> Result<Self> {
        let mut data = if self.centered { self } else { self.center() };
        let sxx = data.sxx_diag();
        for j in 0..data.p() {
            let sd = sxx[j].sqrt();
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(FaError::domain(format!(
                    "column {} ('{}') is constant and cannot be standardized",
                    j + 1,
                    data.column_names[j]
                )));
            }
            data.values.column_mut(j).unscale_mut(sd);
            data.column_scales[j] *= sd;
        }
        data.standardized = true;
        Ok(data)
    }

    /// Returns `X·D` for a positive diagonal `D`, recording the scaling.
    pub fn scale_columns(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.p() {
            return Err(FaError::invalid(format!(
                "{} scale factors for {} columns",
                factors.len(),
                self.p()
            )));
        }
        if factors.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(FaError::domain("column scale factors must be positive and finite"));
        }
        let mut out = self.clone();
        for (j, &d) in factors.iter().enumerate() {
            out.values.column_mut(j).scale_mut(d);
            out.column_scales[j] /= d;
        }
        Ok(out)
    }

    /// Divides column `j` by `scales[j]` and marks the data standardized, the
    /// way [`standardize`](Self::standardize) does with the sample standard
    /// deviations. Used to put new data on a fitted model's scale.
    pub fn apply_scales(&self, scales: &[f64]) -> Result<Self> {
        if scales.len() != self.p() {
            return Err(FaError::invalid(format!("{} scales for {} columns", scales.len(), self.p())));
        }
        if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(FaError::domain("column scales must be positive and finite"));
        }
        let mut out = self.clone();
        for (j, &s) in scales.iter().enumerate() {
            out.values.column_mut(j).unscale_mut(s);
            out.column_scales[j] *= s;
        }
        out.standardized = true;
        Ok(out)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(FaError::invalid("no columns selected"));
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.p()) {
            return Err(FaError::invalid(format!("column index {bad} out of range")));
        }
        let values = self.values.select_columns(indices);
        Ok(DataMatrix {
            values,
            column_names: indices.iter().map(|&j| self.column_names[j].clone()).collect(),
            centered: self.centered,
            standardized: self.standardized,
            column_means: DVector::from_iterator(indices.len(), indices.iter().map(|&j| self.column_means[j])),
            column_scales: DVector::from_iterator(indices.len(), indices.iter().map(|&j| self.column_scales[j])),
        })
    }

    /// `diag(S_xx)` with the `n − 1` denominator.
    pub fn sxx_diag(&self) -> DVector<f64> {
        let denom = (self.n() - 1) as f64;
        DVector::from_iterator(
            self.p(),
            self.values.column_iter().map(|c| c.norm_squared() / denom),
        )
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Means removed by centering, in the original units.
    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    /// Divisors applied to each column relative to the raw input.
    pub fn column_scales(&self) -> &DVector<f64> {
        &self.column_scales
    }
}

/// How the first ψ² iterate is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi2Init {
    /// `ψ²_j = c · S_xx,jj`.
    SxxFraction(f64),
    /// Explicit per-variable start values.
    Values(Vec<f64>),
}

impl Default for Psi2Init {
    fn default() -> Self {
        Psi2Init::SxxFraction(0.5)
    }
}

impl Psi2Init {
    pub fn resolve(&self, sxx_diag: &DVector<f64>) -> Result<DVector<f64>> {
        let p = sxx_diag.len();
        let psi2 = match self {
            Psi2Init::SxxFraction(c) => {
                if !(*c > 0.0) || !c.is_finite() {
                    return Err(FaError::invalid(format!("psi2 init fraction must be positive, got {c}")));
                }
                sxx_diag * *c
            }
            Psi2Init::Values(v) => {
                if v.len() != p {
                    return Err(FaError::invalid(format!("{} psi2 start values for {p} variables", v.len())));
                }
                DVector::from_column_slice(v)
            }
        };
        check_positive(&psi2, "initial psi2")?;
        Ok(psi2)
    }
}

pub const DEFAULT_RULE: &str = "subtract";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaConfig {
    pub k: usize,
    /// Name of a registered ψ² update rule.
    pub rule: String,
    pub psi2_init: Psi2Init,
    pub max_iter: usize,
    pub tol_psi: f64,
    /// Tolerance on `|tail_sum − (p − k)| / p`.
    pub tol_trace: f64,
    /// Recorded for provenance; the solver is deterministic.
    pub seed: Option<u64>,
}

impl FaConfig {
    pub fn new(k: usize) -> Self {
        FaConfig {
            k,
            rule: DEFAULT_RULE.to_string(),
            psi2_init: Psi2Init::default(),
            max_iter: 500,
            tol_psi: 1e-8,
            tol_trace: 1e-6,
            seed: None,
        }
    }

    pub fn with_rule(mut self, rule: impl Into<String>) -> Self {
        self.rule = rule.into();
        self
    }

    pub fn with_psi2_init(mut self, init: Psi2Init) -> Self {
        self.psi2_init = init;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol_psi(mut self, tol: f64) -> Self {
        self.tol_psi = tol;
        self
    }

    pub fn with_tol_trace(mut self, tol: f64) -> Self {
        self.tol_trace = tol;
        self
    }

    /// Checks the configuration against the data dimensions.
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.k == 0 {
            return Err(FaError::invalid("k must be at least 1"));
        }
        if self.k >= n.min(p) {
            return Err(FaError::invalid(format!(
                "k = {} must be smaller than min(n, p) = {}",
                self.k,
                n.min(p)
            )));
        }
        if self.max_iter < 1 {
            return Err(FaError::invalid("max_iter must be at least 1"));
        }
        if !(self.tol_psi > 0.0) || !(self.tol_trace > 0.0) {
            return Err(FaError::invalid("tolerances must be strictly positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `tr(D₂²)/(n − 1)` at this iterate.
    pub tail_sum: f64,
    pub min_psi2: f64,
    pub max_psi2: f64,
    pub psi2_rel_change: f64,
    pub omega_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IterationTrace {
    records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

impl From<Vec<IterationRecord>> for IterationTrace {
    fn from(records: Vec<IterationRecord>) -> Self {
        IterationTrace { records }
    }
}

/// A fitted factor model in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct FaModel {
    /// `p × k` loadings.
    pub lambda: DMatrix<f64>,
    pub psi2: DVector<f64>,
    /// Retained eigenvalues of the rescaled covariance, decreasing.
    pub omega: DVector<f64>,
    pub n_used: usize,
    pub converged: bool,
    pub trace: IterationTrace,
    pub column_names: Vec<String>,
    pub column_scales: DVector<f64>,
    pub standardized: bool,
    pub config: FaConfig,
    pub warnings: Vec<String>,
}

impl FaModel {
    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn k(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Rescaled loadings `Ψ⁻¹Λ`.
    pub fn lambda_z(&self) -> DMatrix<f64> {
        rescale_rows(&self.lambda, &self.psi2)
    }
}

pub(crate) fn check_positive(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some((j, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(FaError::invalid(format!("{what}[{j}] is not finite ({x})")));
    }
    if let Some((j, x)) = v.iter().enumerate().find(|(_, &x)| x <= 0.0) {
        return Err(FaError::domain(format!("{what}[{j}] = {x} is not strictly positive")));
    }
    Ok(())
}

/// Divides row `j` by `√psi2[j]`.
pub(crate) fn rescale_rows(m: &DMatrix<f64>, psi2: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut row) in out.row_iter_mut().enumerate() {
        row.unscale_mut(psi2[j].sqrt());
    }
    out
}

pub(crate) fn unscale_rows(m: &DMatrix<f64>, psi2: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut row) in out.row_iter_mut().enumerate() {
        row.scale_mut(psi2[j].sqrt());
    }
    out
}

/// Puts a loadings matrix into canonical form.
///
/// The columns of `Ψ⁻¹Λ` are rotated to be orthogonal (so that `Λᵀ Ψ⁻² Λ`
/// is diagonal), ordered by decreasing squared norm with ties kept in their
/// original order, and signed so that the largest-magnitude entry of each
/// column of `Ψ⁻¹Λ` is positive (first such row on ties). Rotation is skipped
/// when the input already satisfies the diagonal constraint, which makes the
/// operation exactly idempotent.
pub fn canonicalize(lambda: &DMatrix<f64>, psi2: &DVector<f64>) -> Result<DMatrix<f64>> {
    if psi2.len() != lambda.nrows() {
        return Err(FaError::invalid(format!(
            "psi2 has length {} but lambda has {} rows",
            psi2.len(),
            lambda.nrows()
        )));
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(FaError::invalid("lambda contains non-finite entries"));
    }
    check_positive(psi2, "psi2")?;

    let k = lambda.ncols();
    let mut lz = rescale_rows(lambda, psi2);
    if k == 0 {
        return Ok(lambda.clone());
    }

    let gram = lz.transpose() * &lz;
    let diag_norm = gram.diagonal().norm();
    let off_max = (0..k)
        .flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| gram[(a, b)].abs())
        .fold(0.0, f64::max);

    let norms: Vec<f64> = if off_max <= DIAGONAL_SKIP_TOL * diag_norm {
        gram.diagonal().iter().copied().collect()
    } else {
        let eig = SymmetricEigen::new(gram);
        lz = &lz * &eig.eigenvectors;
        eig.eigenvalues.iter().copied().collect()
    };

    let mut order: Vec<usize> = (0..k).collect();
    // stable: equal norms keep their incoming order
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut out = DMatrix::zeros(lambda.nrows(), k);
    for (dst, &src) in order.iter().enumerate() {
        let col = lz.column(src);
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        out.set_column(dst, &(col * sign));
    }
    Ok(unscale_rows(&out, psi2))
}
