//! Moment-exact pseudo-data generation.
//!
//! Given a provider summary (n, mean vector, covariance matrix), builds an
//! `n x p` synthetic matrix whose *sample* mean and covariance equal the
//! targets exactly (to rounding), by linearly transforming random draws from
//! an arbitrary source distribution:
//!
//! - univariate: `x = mean + sd * (r - mean(r)) / sd(r)`;
//! - multivariate via Cholesky: rows become
//!   `mu + L_target * L_source^{-1} * (r - mean(r))`, requiring both the
//!   target covariance and the realized source covariance to be positive
//!   definite;
//! - multivariate via eigendecomposition + full SVD: the centered source is
//!   rotated onto its principal axes, each axis is rescaled to unit sample
//!   variance, and the result is mapped through `U diag(sqrt(lambda))`. This
//!   path tolerates semidefinite targets and, because the SVD right factor is
//!   full (`p x p`), keeps working when `n <= p` — where exact matching is
//!   impossible (sample rank can't exceed `n - 1`) and a rank-deficiency
//!   warning is attached instead.
//!
//! Every output is a deterministic function of `(seed, config, target)`;
//! per-provider seeds are derived as `seed XOR fnv1a(provider_id)` so
//! generation order never matters.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, EIGEN_CLAMP_REL};
use crate::summaries::{ProviderSummary, VariableSpec};

/// Default seed used by the CLI and config when none is supplied.
pub const DEFAULT_SEED: u64 = 42;

/// How many fresh source draws to attempt before giving up on a degenerate
/// source (for example a zero-spread univariate sample).
pub const RETRY_BUDGET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceDistribution {
    StandardNormal,
    UniformUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMethod {
    Cholesky,
    EigenSvd,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub source_distribution: SourceDistribution,
    pub method: GenMethod,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: DEFAULT_SEED,
            source_distribution: SourceDistribution::StandardNormal,
            method: GenMethod::Auto,
        }
    }
}

/// Non-fatal conditions attached to a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenWarning {
    /// `n <= p`: the sample covariance of any n-row dataset has rank at most
    /// `n - 1`, so the target covariance cannot be matched exactly.
    RankDeficiency { n: usize, p: usize, rank: usize },
}

impl fmt::Display for GenWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenWarning::RankDeficiency { n, p, rank } => write!(
                f,
                "target covariance has rank {rank} but {n} rows over {p} variables can realize rank at most {}; moments will not match exactly",
                n.saturating_sub(1)
            ),
        }
    }
}

/// Synthetic dataset whose first two sample moments match its source summary.
#[derive(Debug, Clone)]
pub struct PseudoDataset {
    pub provider_id: String,
    pub columns: Vec<VariableSpec>,
    pub data: DMatrix<f64>,
    pub warnings: Vec<GenWarning>,
}

impl PseudoDataset {
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Seed for one provider's RNG stream: reproducible and independent of the
/// order providers are processed in.
pub fn provider_seed(seed: u64, provider_id: &str) -> u64 {
    seed ^ fnv1a64(provider_id)
}

fn draw_matrix<R: Rng>(rng: &mut R, n: usize, p: usize, dist: SourceDistribution) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            m[(i, j)] = match dist {
                SourceDistribution::StandardNormal => StandardNormal.sample(rng),
                SourceDistribution::UniformUnit => rng.random::<f64>(),
            };
        }
    }
    m
}

/// Generates `n` values whose sample mean and standard deviation (denominator
/// `n - 1`) equal the targets exactly.
pub fn generate_univariate(
    n: usize,
    target_mean: f64,
    target_sd: f64,
    config: &GeneratorConfig,
) -> Result<DVector<f64>> {
    if n < 2 {
        return Err(Error::InvalidModel(format!(
            "pseudo-data generation needs n >= 2, got {n}"
        )));
    }
    if !(target_sd >= 0.0) {
        return Err(Error::InvalidModel(format!(
            "target standard deviation must be nonnegative, got {target_sd}"
        )));
    }
    if target_sd == 0.0 {
        return Ok(DVector::from_element(n, target_mean));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    for _ in 0..RETRY_BUDGET {
        let draws = draw_matrix(&mut rng, n, 1, config.source_distribution);
        let mean = draws.column(0).sum() / n as f64;
        let ss: f64 = draws.column(0).iter().map(|x| (x - mean) * (x - mean)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if sd > 0.0 {
            return Ok(DVector::from_iterator(
                n,
                draws.column(0).iter().map(|x| target_mean + target_sd * (x - mean) / sd),
            ));
        }
    }
    Err(Error::DegenerateSource(RETRY_BUDGET))
}

/// Column-centers the draws; the sample means subtract out exactly enough
/// that downstream transforms inherit the target mean to rounding.
fn center_columns(r: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = r.shape();
    let nf = n as f64;
    let mut centered = r.clone();
    for j in 0..p {
        let mean = r.column(j).sum() / nf;
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    centered
}

fn broadcast_add_mean(mut data: DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    for j in 0..data.ncols() {
        for i in 0..data.nrows() {
            data[(i, j)] += mean[j];
        }
    }
    data
}

/// Cholesky-path generation: needs a positive-definite target covariance and
/// `n - 1 >= p` so the realized source covariance is positive definite too.
///
/// The transform is `mu + L_target L_source^{-1} (r_i - mean(r))` with
/// `L_source` the Cholesky factor of the realized source covariance. It is
/// applied through the QR of the centered draws (`R_c = Q T` makes
/// `T'/sqrt(n-1)` that factor), which keeps the whitening exact to rounding
/// even when `n - 1` barely exceeds `p` and the source covariance is close
/// to singular.
pub fn generate_multivariate_cholesky(
    n: usize,
    summary: &ProviderSummary,
    config: &GeneratorConfig,
) -> Result<PseudoDataset> {
    if n < 2 {
        return Err(Error::InvalidModel(format!(
            "pseudo-data generation needs n >= 2, got {n}"
        )));
    }
    let p = summary.p();
    let target_l = numerics::cholesky_lower(&summary.cov)?;
    let mut rng = ChaCha12Rng::seed_from_u64(provider_seed(config.seed, &summary.provider_id));
    let draws = draw_matrix(&mut rng, n, p, config.source_distribution);
    let centered = center_columns(&draws);
    // centered * L_source^{-T} = sqrt(n-1) * Q.
    let (q, _) = numerics::thin_qr(&centered)?;
    let whitened = q * ((n as f64 - 1.0).sqrt() * target_l.lower().transpose());
    let data = broadcast_add_mean(whitened, &summary.mean);
    Ok(PseudoDataset {
        provider_id: summary.provider_id.clone(),
        columns: summary.variables.clone(),
        data,
        warnings: Vec::new(),
    })
}

/// Eigen/full-SVD path: works for any symmetric PSD target (small negative
/// eigenvalues are clamped) and for any `n >= 2`, attaching a
/// [`GenWarning::RankDeficiency`] when `n - 1` rows cannot carry the target
/// rank.
pub fn generate_multivariate_eigen(
    n: usize,
    summary: &ProviderSummary,
    config: &GeneratorConfig,
) -> Result<PseudoDataset> {
    if n < 2 {
        return Err(Error::InvalidModel(format!(
            "pseudo-data generation needs n >= 2, got {n}"
        )));
    }
    let p = summary.p();
    let eig = numerics::sym_eigen(&summary.cov)?;
    let rank_tol = EIGEN_CLAMP_REL * summary.cov.norm_max();
    let rank = eig.values.iter().filter(|&&v| v > rank_tol).count();
    let mut warnings = Vec::new();
    if n.saturating_sub(1) < rank {
        warnings.push(GenWarning::RankDeficiency { n, p, rank });
    }
    // B maps unit-variance principal axes onto the target geometry.
    let mut b = DMatrix::zeros(p, p);
    for j in 0..p {
        let s = eig.values[j].sqrt();
        for k in 0..p {
            b[(j, k)] = s * eig.vectors[(k, j)];
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(provider_seed(config.seed, &summary.provider_id));
    for _ in 0..RETRY_BUDGET {
        let draws = draw_matrix(&mut rng, n, p, config.source_distribution);
        let centered = center_columns(&draws);
        let (sigma, v) = numerics::svd_right(&centered)?;
        let mut axes = centered * v;
        // Columns of `axes` are mutually orthogonal and centered; rescale each
        // to unit sample variance. Columns with (numerically) no variation are
        // zeroed rather than amplified.
        let sigma_max = if sigma.is_empty() { 0.0 } else { sigma[0] };
        let degenerate_tol = 1e-12 * sigma_max;
        let mut source_degenerate = false;
        for j in 0..p {
            let effectively_zero = j >= sigma.len() || sigma[j] <= degenerate_tol;
            if effectively_zero {
                for i in 0..n {
                    axes[(i, j)] = 0.0;
                }
                // A dropped axis only matters if the target actually has
                // variance there and the sample size could have carried it.
                if eig.values[j] > rank_tol && n.saturating_sub(1) >= rank {
                    source_degenerate = true;
                }
            } else {
                let ss: f64 = (0..n).map(|i| axes[(i, j)] * axes[(i, j)]).sum();
                let rms = (ss / (n as f64 - 1.0)).sqrt();
                for i in 0..n {
                    axes[(i, j)] /= rms;
                }
            }
        }
        if source_degenerate {
            continue;
        }
        let data = broadcast_add_mean(&axes * &b, &summary.mean);
        return Ok(PseudoDataset {
            provider_id: summary.provider_id.clone(),
            columns: summary.variables.clone(),
            data,
            warnings,
        });
    }
    Err(Error::DegenerateSource(RETRY_BUDGET))
}

/// Generates one pseudo-dataset for `summary` (n taken from the summary),
/// honoring `config.method`; `Auto` tries Cholesky first and falls back to
/// the eigen/SVD path when positive definiteness fails.
pub fn generate(summary: &ProviderSummary, config: &GeneratorConfig) -> Result<PseudoDataset> {
    match config.method {
        GenMethod::Cholesky => generate_multivariate_cholesky(summary.n, summary, config),
        GenMethod::EigenSvd => generate_multivariate_eigen(summary.n, summary, config),
        GenMethod::Auto => match generate_multivariate_cholesky(summary.n, summary, config) {
            Ok(ds) => Ok(ds),
            Err(Error::NotPositiveDefinite(_)) => {
                generate_multivariate_eigen(summary.n, summary, config)
            }
            Err(e) => Err(e),
        },
    }
}

/// One pseudo-dataset per provider, each on its own seed-derived RNG stream.
pub fn generate_all(
    summaries: &[ProviderSummary],
    config: &GeneratorConfig,
) -> Result<Vec<PseudoDataset>> {
    summaries
        .iter()
        .map(|s| {
            generate(s, config).map_err(|e| Error::Provider {
                id: s.provider_id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}
