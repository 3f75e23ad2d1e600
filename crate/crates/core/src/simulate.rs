//! Synthetic data from the random-factor model with Gaussian or
//! non-Gaussian factors and noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{FaError, Result};
use crate::model::DataMatrix;

/// Zero-mean, unit-variance draw families.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    #[default]
    Gaussian,
    /// Uniform on `[−√3, √3]`.
    UniformScaled,
    /// Student-t with `df` degrees of freedom, divided by `√(df/(df−2))`.
    StudentT { df: f64 },
}

impl Dist {
    fn validate(&self) -> Result<()> {
        match *self {
            Dist::StudentT { df } if !(df >= 3.0) || !df.is_finite() => Err(FaError::invalid(format!(
                "student_t needs df >= 3 for a standardized variance, got {df}"
            ))),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            Dist::Gaussian => Sampler::Gaussian,
            Dist::UniformScaled => Sampler::Uniform(3f64.sqrt()),
            Dist::StudentT { df } => Sampler::StudentT(
                StudentT::new(df).map_err(|e| FaError::invalid(format!("student_t: {e}")))?,
                (df / (df - 2.0)).sqrt(),
            ),
        })
    }
}

enum Sampler {
    Gaussian,
    Uniform(f64),
    StudentT(StudentT<f64>, f64),
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Gaussian => StandardNormal.sample(rng),
            Sampler::Uniform(half) => rng.random_range(-half..*half),
            Sampler::StudentT(t, sd) => t.sample(rng) / sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    /// `p × k`, serialized as `p` rows of length `k`.
    #[serde(with = "matrix_rows")]
    pub lambda_true: DMatrix<f64>,
    pub psi2_true: Vec<f64>,
    pub n: usize,
    #[serde(default)]
    pub factor_dist: Dist,
    #[serde(default)]
    pub noise_dist: Dist,
    pub seed: u64,
}

/// Draws from one run of a [`SimSpec`], keeping the latent pieces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: DataMatrix,
    /// `n × k` true factor scores, uncentered.
    pub factors: DMatrix<f64>,
}

impl SimSpec {
    /// A generic test structure: `Λ_jl ~ N(0, 1) · 2 / (1 + l/5)` so the factor
    /// strengths are distinct and, for `p` in the hundreds or more, well above
    /// the noise eigenvalues; `ψ²_j ~ U[0.3, 3]`. The structure is
    /// drawn from a stream derived from `seed`, independent of the sampling
    /// stream.
    pub fn synthetic(p: usize, k: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a5d_0f_c0ffee);
        let mut lambda = DMatrix::zeros(p, k);
        for j in 0..p {
            for l in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                lambda[(j, l)] = 2.0 * z / (1.0 + 0.2 * l as f64);
            }
        }
        let psi2_true = (0..p).map(|_| rng.random_range(0.3..3.0)).collect();
        SimSpec {
            lambda_true: lambda,
            psi2_true,
            n,
            factor_dist: Dist::Gaussian,
            noise_dist: Dist::Gaussian,
            seed,
        }
    }

    pub fn with_dists(mut self, factor: Dist, noise: Dist) -> Self {
        self.factor_dist = factor;
        self.noise_dist = noise;
        self
    }

    pub fn p(&self) -> usize {
        self.lambda_true.nrows()
    }

    pub fn k(&self) -> usize {
        self.lambda_true.ncols()
    }

    /// `ΛΛᵀ + Ψ²`.
    pub fn population_covariance(&self) -> DMatrix<f64> {
        &self.lambda_true * self.lambda_true.transpose()
            + DMatrix::from_diagonal(&DVector::from_column_slice(&self.psi2_true))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p < 1 {
            return Err(FaError::invalid("lambda_true has no rows"));
        }
        if self.psi2_true.len() != p {
            return Err(FaError::invalid(format!(
                "psi2_true has {} entries for {p} variables",
                self.psi2_true.len()
            )));
        }
        if self.psi2_true.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(FaError::domain("psi2_true entries must be positive"));
        }
        if self.lambda_true.iter().any(|v| !v.is_finite()) {
            return Err(FaError::invalid("lambda_true has non-finite entries"));
        }
        if self.n < 2 {
            return Err(FaError::invalid("n must be at least 2"));
        }
        self.factor_dist.validate()?;
        self.noise_dist.validate()
    }

    pub fn simulate(&self) -> Result<DataMatrix> {
        Ok(self.simulate_with_truth()?.data)
    }

    /// Rows are generated in order: `k` factor draws, then `p` noise draws.
    pub fn simulate_with_truth(&self) -> Result<Simulation> {
        self.validate()?;
        let (n, p, k) = (self.n, self.p(), self.k());
        let fs = self.factor_dist.sampler()?;
        let es = self.noise_dist.sampler()?;
        let sd: Vec<f64> = self.psi2_true.iter().map(|v| v.sqrt()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut factors = DMatrix::zeros(n, k);
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            for l in 0..k {
                factors[(i, l)] = fs.draw(&mut rng);
            }
            for j in 0..p {
                x[(i, j)] = sd[j] * es.draw(&mut rng);
            }
        }
        x += &factors * self.lambda_true.transpose();
        let data = DataMatrix::new(x, None)?.center();
        Ok(Simulation { data, factors })
    }
}

/// A centered `n × p` sample whose `XᵀX/(n−1)` equals `cov` up to rounding.
/// Built from Helmert contrasts, so it needs `n > p`.
pub fn exact_moment_sample(cov: &DMatrix<f64>, n: usize) -> Result<DataMatrix> {
    let p = cov.nrows();
    if cov.ncols() != p {
        return Err(FaError::invalid("covariance must be square"));
    }
    if n <= p {
        return Err(FaError::invalid(format!("need n > p, got n = {n}, p = {p}")));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| FaError::domain("covariance is not positive definite"))?;
    let mut q = DMatrix::zeros(n, p);
    for c in 0..p {
        let j = (c + 1) as f64;
        let w = 1.0 / (j * (j + 1.0)).sqrt();
        for i in 0..=c {
            q[(i, c)] = w;
        }
        q[(c + 1, c)] = -j * w;
    }
    let x = q * chol.l().transpose() * ((n - 1) as f64).sqrt();
    Ok(DataMatrix::new(x, None)?.center())
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let k = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(D::Error::custom(format!("row {i} has {} entries, expected {k}", rows[i].len())));
        }
        Ok(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
    }
}
