//! Random-factor analysis through the rescaled-covariance estimating
//! equations.
//!
//! The model is `X = FΛᵀ + E` with uncorrelated factors and noise of
//! variances `Ψ²`. Fitting iterates a rank-k SVD of `Z = XΨ⁻¹` and a ψ² update
//! rule until the uniquenesses settle. Nothing of size `p × p` is formed, so
//! `p > n` (thousands of variables, tens of observations) is the normal case.
//!
//! ```
//! use farescale::{fit, FaConfig, SimSpec};
//!
//! let x = SimSpec::synthetic(200, 2, 20, 1).simulate().unwrap();
//! let model = fit(&x, &FaConfig::new(2)).unwrap();
//! assert!(model.converged);
//! assert!(model.psi2.min() > 0.0);
//! ```

pub mod diagnose;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod registry;
pub mod scores;
pub mod simulate;
pub mod svd;

pub use diagnose::{centered_gaussian_loglik, diagnose, gaussian_loglik, omega_summary, DiagnosticReport, OmegaSummary};
pub use error::{ErrorKind, FaError, Result};
pub use estimator::{estimating_residual, fit, heywood_report, Estimator, PsiUpdate};
pub use io::{load_csv, load_model, save_model, CsvOptions, ModelFile};
pub use model::{canonicalize, DataMatrix, FaConfig, FaModel, IterationRecord, IterationTrace, Psi2Init};
pub use registry::{Named, Registry};
pub use scores::{bartlett_scores, thomson_scores, ScoreKind, ScoreSet};
pub use simulate::{Dist, SimSpec};
pub use svd::{truncated_svd, SvdStrategy, TruncatedSvd};
