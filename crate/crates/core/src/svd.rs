//! Rescaled data `Z = XΨ⁻¹` and its rank-k truncated SVD.
//!
//! Only the leading `k` triplets are materialized. Everything that would need
//! the trailing singular vectors is expressed through `tail_sum_sq` or the
//! complement `Z − U₁D₁V₁ᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{FaError, Result};
use crate::model::{check_positive, DataMatrix};
use crate::registry::{Named, Registry};

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `n × k` left singular vectors.
    pub u1: DMatrix<f64>,
    /// Leading singular values, decreasing.
    pub d1: DVector<f64>,
    /// `p × k` right singular vectors.
    pub v1: DMatrix<f64>,
    /// `tr(D₂²)`: sum of the squared singular values beyond the first k.
    pub tail_sum_sq: f64,
    /// `min(n − 1, p)` for centered data.
    pub rank_bound: usize,
    /// Number of singular values (of all, not just the leading k) that are
    /// numerically nonzero.
    pub positive: usize,
}

impl TruncatedSvd {
    pub fn k(&self) -> usize {
        self.d1.len()
    }

    /// `D₁² / (n − 1)`, the retained eigenvalues of `S_zz`.
    pub fn omega(&self, n: usize) -> DVector<f64> {
        let denom = (n - 1) as f64;
        self.d1.map(|d| d * d / denom)
    }

    /// `U₁D₁V₁ᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut ud = self.u1.clone();
        for (j, mut col) in ud.column_iter_mut().enumerate() {
            col.scale_mut(self.d1[j]);
        }
        ud * self.v1.transpose()
    }
}

/// `Z[i][j] = X[i][j] / √psi2[j]` on a raw matrix.
pub fn scale_by_psi(x: &DMatrix<f64>, psi2: &DVector<f64>) -> Result<DMatrix<f64>> {
    if psi2.len() != x.ncols() {
        return Err(FaError::invalid(format!(
            "psi2 has length {} but data has {} columns",
            psi2.len(),
            x.ncols()
        )));
    }
    check_positive(psi2, "psi2")?;
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.unscale_mut(psi2[j].sqrt());
    }
    Ok(z)
}

/// Rescaled data for a centered sample.
pub fn scaled_data(x: &DataMatrix, psi2: &DVector<f64>) -> Result<DMatrix<f64>> {
    if !x.is_centered() {
        return Err(FaError::invalid("data must be column-centered before rescaling"));
    }
    scale_by_psi(x.values(), psi2)
}

/// A way of computing the leading singular triplets of `Z`.
pub trait SvdStrategy: Named + Send + Sync {
    fn truncated(&self, z: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd>;
}

/// Eigendecomposition of the `n × n` Gram matrix `ZZᵀ`, then
/// `V₁ = ZᵀU₁D₁⁻¹`. Cost `O(n²p)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct GramSvd;

/// Eigendecomposition of the `p × p` cross-product `ZᵀZ`, then
/// `U₁ = ZV₁D₁⁻¹`. Cost `O(p²n)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CrossProductSvd;

/// Picks the smaller of the two eigenproblems.
#[derive(Debug, Default, Clone, Copy)]
pub struct AutoSvd;

impl Named for GramSvd {
    fn name(&self) -> &'static str {
        "gram"
    }
}

impl Named for CrossProductSvd {
    fn name(&self) -> &'static str {
        "cross-product"
    }
}

impl Named for AutoSvd {
    fn name(&self) -> &'static str {
        "auto"
    }
}

impl SvdStrategy for GramSvd {
    fn truncated(&self, z: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
        check_args(z, k)?;
        let (u1, d1, v1, tail, positive) = leading_from_gram(&z.transpose(), k)?;
        Ok(TruncatedSvd {
            u1,
            d1,
            v1,
            tail_sum_sq: tail,
            rank_bound: rank_bound(z),
            positive,
        })
    }
}

impl SvdStrategy for CrossProductSvd {
    fn truncated(&self, z: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
        check_args(z, k)?;
        let (v1, d1, u1, tail, positive) = leading_from_gram(z, k)?;
        Ok(TruncatedSvd {
            u1,
            d1,
            v1,
            tail_sum_sq: tail,
            rank_bound: rank_bound(z),
            positive,
        })
    }
}

impl SvdStrategy for AutoSvd {
    fn truncated(&self, z: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
        if z.ncols() > z.nrows() {
            GramSvd.truncated(z, k)
        } else {
            CrossProductSvd.truncated(z, k)
        }
    }
}

/// Rank-k SVD through whichever Gram matrix is smaller.
pub fn truncated_svd(z: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
    AutoSvd.truncated(z, k)
}

pub fn builtin_svd_strategies() -> Registry<dyn SvdStrategy> {
    let mut r: Registry<dyn SvdStrategy> = Registry::empty();
    r.register(Box::new(AutoSvd))
        .register(Box::new(GramSvd))
        .register(Box::new(CrossProductSvd));
    r
}

fn rank_bound(z: &DMatrix<f64>) -> usize {
    (z.nrows().saturating_sub(1)).min(z.ncols())
}

fn check_args(z: &DMatrix<f64>, k: usize) -> Result<()> {
    let (n, p) = z.shape();
    if k == 0 || k >= n.min(p) {
        return Err(FaError::invalid(format!(
            "truncation rank k = {k} must satisfy 0 < k < min(n, p) = {}",
            n.min(p)
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(FaError::invalid("matrix contains non-finite entries"));
    }
    Ok(())
}

/// Gram matrix of the columns of `m` (`mᵀm`), one column pair per dot
/// product so the result does not depend on thread count.
pub(crate) fn column_gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = m.ncols();
    let lower: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|a| (0..=a).map(|b| m.column(a).dot(&m.column(b))).collect())
        .collect();
    let mut g = DMatrix::zeros(c, c);
    for (a, row) in lower.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// Leading eigenpairs of `mᵀm`, with the partner singular vectors recovered
/// as `m · eigvec / d`. Returns `(eigvecs, d, partners, tail, positive)`.
fn leading_from_gram(
    m: &DMatrix<f64>,
    k: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>, f64, usize)> {
    let g = column_gram(m);
    let dim = g.nrows();
    let eig = SymmetricEigen::try_new(g, f64::EPSILON, 10_000).ok_or_else(|| {
        FaError::Numerical(format!("symmetric eigendecomposition of a {dim}×{dim} Gram matrix did not converge"))
    })?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tiny = f64::EPSILON * (m.nrows().max(dim) as f64) * top;
    let positive = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > tiny && eig.eigenvalues[i] > 0.0)
        .count();
    let cutoff = tiny.sqrt();

    let mut vecs = DMatrix::zeros(dim, k);
    let mut d = DVector::zeros(k);
    for (j, &i) in order.iter().take(k).enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
        d[j] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    let tail: f64 = order.iter().skip(k).map(|&i| eig.eigenvalues[i].max(0.0)).sum();

    let pdim = m.nrows();
    let mut partners = DMatrix::zeros(pdim, k);
    let mut filled = Vec::with_capacity(k);
    for j in 0..k {
        if d[j] > cutoff && d[j] > 0.0 {
            let col = m * vecs.column(j) / d[j];
            partners.set_column(j, &col);
            filled.push(j);
        }
    }
    // zero singular values: any orthonormal completion will do
    complete_orthonormal(&mut partners, &filled);
    Ok((vecs, d, partners, tail, positive))
}

/// Fills the columns not listed in `filled` with unit vectors orthogonal to
/// every other column, taking standard basis vectors in order and
/// Gram-Schmidt-orthogonalizing them.
fn complete_orthonormal(m: &mut DMatrix<f64>, filled: &[usize]) {
    let (rows, cols) = m.shape();
    let mut done: Vec<usize> = filled.to_vec();
    let mut basis = 0;
    for j in 0..cols {
        if filled.contains(&j) {
            continue;
        }
        while basis < rows {
            let mut v = DVector::zeros(rows);
            v[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &c in &done {
                    let proj = m.column(c).dot(&v);
                    v -= m.column(c) * proj;
                }
            }
            let norm = v.norm();
            if norm > 1e-8 {
                m.set_column(j, &(v / norm));
                done.push(j);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Cyclic Jacobi eigenvalue iteration, used as an independent oracle.
    fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-26 * a.norm_squared() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for r in 0..n {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        a[(r, p)] = c * arp - s * arq;
                        a[(r, q)] = s * arp + c * arq;
                    }
                    for r in 0..n {
                        let apr = a[(p, r)];
                        let aqr = a[(q, r)];
                        a[(p, r)] = c * apr - s * aqr;
                        a[(q, r)] = s * apr + c * aqr;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn scaling_examples() {
        let z = scale_by_psi(&dmatrix![1.0, 2.0], &DVector::from_vec(vec![1.0, 4.0])).unwrap();
        assert_eq!(z, dmatrix![1.0, 1.0]);
        let x = random_matrix(3, 4, 1);
        assert_eq!(scale_by_psi(&x, &DVector::from_element(4, 1.0)).unwrap(), x);
        let z = scale_by_psi(&dmatrix![2.0, 0.0; -2.0, 0.0], &DVector::from_vec(vec![4.0, 1.0])).unwrap();
        assert_eq!(z, dmatrix![1.0, 0.0; -1.0, 0.0]);
        assert!(matches!(
            scale_by_psi(&x, &DVector::from_vec(vec![1.0, 0.0, 1.0, 1.0])),
            Err(FaError::Domain(_))
        ));
    }

    #[test]
    fn scaled_data_requires_centering() {
        let raw = DataMatrix::new(dmatrix![1.0, 2.0; 3.0, 5.0], None).unwrap();
        let psi = DVector::from_element(2, 1.0);
        assert!(scaled_data(&raw, &psi).is_err());
        assert!(scaled_data(&raw.center(), &psi).is_ok());
    }

    #[test]
    fn diagonal_matrix() {
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        for s in builtin_svd_strategies().names() {
            let svd = builtin_svd_strategies().get(s).unwrap().truncated(&z, 1).unwrap();
            assert!((svd.d1[0] - 3.0).abs() < 1e-14, "{s}");
            assert!((svd.v1[(0, 0)].abs() - 1.0).abs() < 1e-14, "{s}");
            assert!((svd.tail_sum_sq - 5.0).abs() < 1e-13, "{s}");
        }
    }

    #[test]
    fn zero_matrix() {
        let z = DMatrix::zeros(4, 6);
        let svd = truncated_svd(&z, 2).unwrap();
        assert_eq!(svd.d1.as_slice(), &[0.0, 0.0]);
        assert_eq!(svd.tail_sum_sq, 0.0);
        assert_eq!(svd.positive, 0);
        let vtv = svd.v1.transpose() * &svd.v1;
        assert!((vtv - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        let utu = svd.u1.transpose() * &svd.u1;
        assert!((utu - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn wide_random_matches_jacobi_oracle() {
        let z = random_matrix(5, 100, 42);
        let svd = truncated_svd(&z, 3).unwrap();
        let oracle = jacobi_eigenvalues(&z * z.transpose());
        for j in 0..3 {
            let expected = oracle[j].sqrt();
            assert!((svd.d1[j] - expected).abs() <= 1e-8 * expected, "{j}: {} vs {expected}", svd.d1[j]);
        }
        let tail: f64 = oracle[3..].iter().sum();
        assert!((svd.tail_sum_sq - tail).abs() <= 1e-8 * z.norm_squared());
    }

    #[test]
    fn rejects_bad_rank() {
        let z = random_matrix(4, 6, 3);
        assert!(matches!(truncated_svd(&z, 4), Err(FaError::InvalidInput(_))));
        assert!(matches!(truncated_svd(&z, 0), Err(FaError::InvalidInput(_))));
        let mut z = z;
        z[(0, 0)] = f64::NAN;
        assert!(matches!(truncated_svd(&z, 1), Err(FaError::InvalidInput(_))));
    }

    #[test]
    fn gram_and_cross_product_routes_agree() {
        for seed in 0..10 {
            let z = random_matrix(6, 15, seed);
            let a = GramSvd.truncated(&z, 3).unwrap();
            let b = CrossProductSvd.truncated(&z, 3).unwrap();
            assert!((&a.d1 - &b.d1).abs().max() < 1e-8);
            assert!((a.reconstruct() - b.reconstruct()).abs().max() < 1e-8);
            assert!((a.tail_sum_sq - b.tail_sum_sq).abs() < 1e-8 * z.norm_squared());
        }
    }

    #[test]
    fn invariants_on_random_instances() {
        for seed in 0..10 {
            let (n, p) = (4 + seed as usize % 5, 3 + (seed as usize * 7) % 11);
            let z = random_matrix(n, p, 100 + seed);
            let k = 1 + seed as usize % (n.min(p) - 1);
            let svd = truncated_svd(&z, k).unwrap();
            let eye = DMatrix::<f64>::identity(k, k);
            assert!((svd.u1.transpose() * &svd.u1 - &eye).abs().max() < 1e-10);
            assert!((svd.v1.transpose() * &svd.v1 - &eye).abs().max() < 1e-10);
            assert!(svd.d1.iter().all(|&d| d >= 0.0));
            assert!(svd.d1.as_slice().windows(2).all(|w| w[0] >= w[1]));
            let total = svd.d1.norm_squared() + svd.tail_sum_sq;
            assert!((total - z.norm_squared()).abs() <= 1e-8 * z.norm_squared());
            let resid = (&z - svd.reconstruct()).norm_squared();
            assert!((resid - svd.tail_sum_sq).abs() <= 1e-8 * z.norm_squared());
        }
    }

    #[test]
    fn centered_wide_data_has_at_most_n_minus_1_positive() {
        let x = DataMatrix::centered_from(random_matrix(6, 40, 9)).unwrap();
        let svd = truncated_svd(x.values(), 2).unwrap();
        assert_eq!(svd.rank_bound, 5);
        assert_eq!(svd.positive, 5);
    }

    #[test]
    fn column_gram_is_symmetric_product() {
        let m = random_matrix(7, 5, 11);
        let g = column_gram(&m);
        assert!((g - m.transpose() * &m).abs().max() < 1e-12);
    }
}
