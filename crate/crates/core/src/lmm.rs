//! Linear mixed models over per-provider datasets.
//!
//! Model: `y_hi = x_hi' beta + z_hi' u_h + eps_hi` with `u_h ~ N(0, G)` and
//! `eps ~ N(0, sigma2)`, grouping factor = provider. The marginal criterion
//! being minimized is
//!
//! ```text
//! -2 l = sum_h { log|Sigma_h| + (y_h - X_h b)' Sigma_h^{-1} (y_h - X_h b) } + N log 2pi
//! Sigma_h = Z_h G Z_h' + sigma2 I
//! ```
//!
//! plus, for REML, the `log|sum_h X_h' Sigma_h^{-1} X_h|` penalty and a
//! `(N - p) log 2pi` constant instead of `N log 2pi` (the convention whose
//! value at the optimum matches the common "REML criterion at convergence").
//!
//! Parameterization and profiling: with `Delta = G / sigma2 = Lambda Lambda'`
//! (log-Cholesky in the optimizer), every provider contributes through the
//! q-dimensional factor `K_h = I + Lambda' Z_h'Z_h Lambda`:
//!
//! ```text
//! log|V_h|  = log|K_h|,     V_h = I + Z_h Delta Z_h'
//! V_h^{-1}  = I - Z_h Lambda K_h^{-1} Lambda' Z_h'
//! ```
//!
//! so a criterion evaluation needs only the per-provider cross products
//! `X'X, X'y, y'y` (the random-effect columns are a subset of the fixed
//! columns), never an `n_h x n_h` factorization. `beta` (GLS) and `sigma2`
//! are profiled out analytically; only the `q(q+1)/2` free covariance
//! parameters are searched, by Nelder-Mead with deterministic jittered
//! restarts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, CholeskyFactor, SymMatrix};
use crate::pseudogen::PseudoDataset;
use crate::regression::INTERCEPT_NAME;
use crate::summaries::{provider_matrices, RawTable};

const CRITERION_TOL: f64 = 1e-10;
const SIMPLEX_DIAMETER_TOL: f64 = 1e-8;
const RESTARTS: usize = 3;
const WALD_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Ml,
    Reml,
}

/// Random-effect structure: an intercept and/or slopes on named fixed-effect
/// columns, one vector per provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub intercept: bool,
    pub slopes: Vec<String>,
}

impl RandomEffects {
    pub fn intercept_only() -> Self {
        RandomEffects {
            intercept: true,
            slopes: Vec::new(),
        }
    }

    pub fn none() -> Self {
        RandomEffects {
            intercept: false,
            slopes: Vec::new(),
        }
    }

    pub fn q(&self) -> usize {
        usize::from(self.intercept) + self.slopes.len()
    }

    pub fn term_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.intercept {
            names.push(INTERCEPT_NAME.to_string());
        }
        names.extend(self.slopes.iter().cloned());
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    /// Fixed-effect columns, intercept implicit first.
    pub fixed: Vec<String>,
    pub random: RandomEffects,
    pub method: FitMethod,
}

impl ModelSpec {
    pub fn design_names(&self) -> Vec<String> {
        let mut names = vec![INTERCEPT_NAME.to_string()];
        names.extend(self.fixed.iter().cloned());
        names
    }

    /// Design-column indices carrying random effects (intercept first).
    pub fn z_indices(&self) -> Result<Vec<usize>> {
        let mut idx = Vec::new();
        if self.random.intercept {
            idx.push(0);
        }
        for s in &self.random.slopes {
            let pos = self
                .fixed
                .iter()
                .position(|f| f == s)
                .ok_or_else(|| {
                    Error::InvalidModel(format!(
                        "random slope '{s}' is not among the fixed-effect columns"
                    ))
                })?;
            idx.push(pos + 1);
        }
        Ok(idx)
    }
}

/// One provider's design matrix (leading intercept column) and response.
#[derive(Debug, Clone)]
pub struct ProviderData {
    pub provider_id: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Builds a provider's design from named columns of a data matrix.
pub fn provider_data_from_columns(
    provider_id: &str,
    names: &[String],
    data: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<ProviderData> {
    let col = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownBaseVariable(name.to_string()))
    };
    let yc = col(&spec.response).map_err(|_| Error::ResponseNotFound(spec.response.clone()))?;
    let n = data.nrows();
    let mut x = DMatrix::zeros(n, spec.fixed.len() + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    for (k, f) in spec.fixed.iter().enumerate() {
        let c = col(f)?;
        for i in 0..n {
            x[(i, k + 1)] = data[(i, c)];
        }
    }
    let y = DVector::from_iterator(n, (0..n).map(|i| data[(i, yc)]));
    Ok(ProviderData {
        provider_id: provider_id.to_string(),
        x,
        y,
    })
}

pub fn providers_from_pseudo(
    datasets: &[PseudoDataset],
    spec: &ModelSpec,
) -> Result<Vec<ProviderData>> {
    datasets
        .iter()
        .map(|ds| provider_data_from_columns(&ds.provider_id, &ds.column_names(), &ds.data, spec))
        .collect()
}

pub fn providers_from_table(table: &RawTable, spec: &ModelSpec) -> Result<Vec<ProviderData>> {
    let mut vars = vec![spec.response.clone()];
    vars.extend(spec.fixed.iter().cloned());
    provider_matrices(table, &vars)?
        .into_iter()
        .map(|(pid, m)| provider_data_from_columns(&pid, &vars, &m, spec))
        .collect()
}

/// Model parameters; `theta` is the unconstrained log-Cholesky image of
/// `G / sigma2` when that matrix is positive definite.
#[derive(Debug, Clone)]
pub struct LmmParams {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub g: SymMatrix,
    pub theta: Option<Vec<f64>>,
}

impl LmmParams {
    pub fn new(beta: DVector<f64>, sigma2: f64, g: SymMatrix) -> Self {
        let theta = theta_from_g(&g, sigma2).ok();
        LmmParams {
            beta,
            sigma2,
            g,
            theta,
        }
    }

    pub fn from_theta(beta: DVector<f64>, sigma2: f64, theta: &[f64], q: usize) -> Self {
        let lambda = theta_to_factor(theta, q);
        let delta = &lambda * lambda.transpose();
        let g = SymMatrix::from_fn(q, |i, j| sigma2 * delta[(i, j)]);
        LmmParams {
            beta,
            sigma2,
            g,
            theta: Some(theta.to_vec()),
        }
    }

    pub fn q(&self) -> usize {
        self.g.dim()
    }
}

/// Lower-triangular factor from the unconstrained vector: diagonal entries
/// are exponentiated, off-diagonals pass through.
pub fn theta_to_factor(theta: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    let mut slot = 0;
    for i in 0..q {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[slot].exp() } else { theta[slot] };
            slot += 1;
        }
    }
    debug_assert_eq!(slot, theta.len());
    l
}

/// Inverse of [`theta_to_factor`] through a Cholesky of `g / sigma2`; fails
/// off the positive-definite interior (the boundary has no finite image).
pub fn theta_from_g(g: &SymMatrix, sigma2: f64) -> Result<Vec<f64>> {
    let q = g.dim();
    if q == 0 {
        return Ok(Vec::new());
    }
    let delta = g.scale(1.0 / sigma2);
    let chol = numerics::cholesky_lower(&delta)?;
    let l = chol.lower();
    let mut theta = Vec::with_capacity(q * (q + 1) / 2);
    for i in 0..q {
        for j in 0..=i {
            theta.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Ok(theta)
}

/// Per-provider cross products; everything the criterion needs.
struct SuffStats {
    provider_id: String,
    n: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

fn suff_stats(providers: &[ProviderData]) -> Result<Vec<SuffStats>> {
    let p = providers
        .first()
        .ok_or_else(|| Error::InvalidModel("no providers supplied".into()))?
        .x
        .ncols();
    providers
        .iter()
        .map(|pd| {
            if pd.x.ncols() != p || pd.x.nrows() != pd.y.len() {
                return Err(Error::SchemaMismatch(format!(
                    "provider '{}' has inconsistent design dimensions",
                    pd.provider_id
                )));
            }
            Ok(SuffStats {
                provider_id: pd.provider_id.clone(),
                n: pd.x.nrows(),
                xtx: pd.x.transpose() * &pd.x,
                xty: pd.x.transpose() * &pd.y,
                yty: pd.y.dot(&pd.y),
            })
        })
        .collect()
}

/// Accumulated whitened aggregates at one covariance factor `Lambda`.
struct Pieces {
    n_total: usize,
    logdet_v: f64,
    fisher: SymMatrix,
    xtvy: DVector<f64>,
    ytvy: f64,
}

struct ProviderFactor {
    k_chol: CholeskyFactor,
    /// `Lambda' Z' y  -  (Lambda' Z'X) beta` is the BLUP input; keep the blocks.
    lzty: DVector<f64>,
    lztx: DMatrix<f64>,
}

fn pieces_at(
    stats: &[SuffStats],
    z_idx: &[usize],
    lambda: &DMatrix<f64>,
) -> Result<(Pieces, Vec<ProviderFactor>)> {
    let p = stats[0].xtx.nrows();
    let q = z_idx.len();
    let mut logdet_v = 0.0;
    let mut fisher = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    let mut ytvy = 0.0;
    let mut n_total = 0usize;
    let mut factors = Vec::with_capacity(stats.len());
    for st in stats {
        n_total += st.n;
        let ztz = DMatrix::from_fn(q, q, |a, b| st.xtx[(z_idx[a], z_idx[b])]);
        let xtz = DMatrix::from_fn(p, q, |i, k| st.xtx[(i, z_idx[k])]);
        let zty = DVector::from_iterator(q, z_idx.iter().map(|&z| st.xty[z]));
        let a = lambda.transpose() * &ztz * lambda;
        let k = SymMatrix::from_upper(&(DMatrix::identity(q, q) + a))?;
        let k_chol = numerics::cholesky_lower(&k).map_err(|_| {
            Error::NonFiniteLikelihood("inner q-dimensional factor is not positive definite".into())
        })?;
        logdet_v += k_chol.logdet();
        let xtzl = xtz * lambda; // p x q
        let lzty = lambda.transpose() * &zty; // q
        let kinv_xtzl_t = k_chol.solve_matrix(&xtzl.transpose()); // q x p
        fisher += &st.xtx - &xtzl * &kinv_xtzl_t;
        let kinv_lzty = k_chol.solve_vector(&lzty);
        xtvy += &st.xty - &xtzl * &kinv_lzty;
        ytvy += st.yty - lzty.dot(&kinv_lzty);
        factors.push(ProviderFactor {
            k_chol,
            lzty,
            lztx: xtzl.transpose(),
        });
    }
    Ok((
        Pieces {
            n_total,
            logdet_v,
            fisher: SymMatrix::from_upper(&fisher)?,
            xtvy,
            ytvy,
        },
        factors,
    ))
}

fn gls_beta(pieces: &Pieces) -> Result<DVector<f64>> {
    numerics::solve_spd_vector(&pieces.fisher, &pieces.xtvy).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::SingularFixedDesign,
        other => other,
    })
}

fn weighted_rss(pieces: &Pieces, beta: &DVector<f64>) -> f64 {
    let quad = (beta.transpose() * pieces.fisher.matrix() * beta)[(0, 0)];
    (pieces.ytvy - 2.0 * beta.dot(&pieces.xtvy) + quad).max(0.0)
}

const LOG_2PI: f64 = 1.8378770664093453;

/// Profiled criterion at a covariance factor: both `beta` and `sigma2` at
/// their closed-form optima given `Lambda`.
fn profiled_criterion(
    pieces: &Pieces,
    p: usize,
    method: FitMethod,
) -> Result<(f64, DVector<f64>, f64)> {
    let beta = gls_beta(pieces)?;
    let rss = weighted_rss(pieces, &beta);
    let n = pieces.n_total as f64;
    let (criterion, sigma2) = match method {
        FitMethod::Ml => {
            let s2 = rss / n;
            if !(s2 > 0.0) {
                return Err(Error::NonFiniteLikelihood("zero profiled variance".into()));
            }
            (n * (s2.ln() + LOG_2PI + 1.0) + pieces.logdet_v, s2)
        }
        FitMethod::Reml => {
            let df = n - p as f64;
            if df <= 0.0 {
                return Err(Error::TooFewObservations {
                    n: pieces.n_total,
                    p,
                });
            }
            let s2 = rss / df;
            if !(s2 > 0.0) {
                return Err(Error::NonFiniteLikelihood("zero profiled variance".into()));
            }
            let penalty = numerics::logdet_spd(&pieces.fisher)
                .map_err(|_| Error::SingularFixedDesign)?;
            (df * (s2.ln() + LOG_2PI + 1.0) + pieces.logdet_v + penalty, s2)
        }
    };
    if !criterion.is_finite() {
        return Err(Error::NonFiniteLikelihood(format!(
            "criterion evaluated to {criterion}"
        )));
    }
    Ok((criterion, beta, sigma2))
}

fn delta_factor(params: &LmmParams) -> Result<DMatrix<f64>> {
    if let Some(theta) = &params.theta {
        return Ok(theta_to_factor(theta, params.q()));
    }
    numerics::psd_factor(&params.g.scale(1.0 / params.sigma2))
        .map_err(|e| Error::NonFiniteLikelihood(format!("random-effect covariance: {e}")))
}

/// `-2 log L` at the supplied parameters (fixed effects included).
pub fn deviance(spec: &ModelSpec, providers: &[ProviderData], params: &LmmParams) -> Result<f64> {
    if !(params.sigma2 > 0.0) || !params.sigma2.is_finite() {
        return Err(Error::NonFiniteLikelihood(format!(
            "sigma2 = {}",
            params.sigma2
        )));
    }
    let stats = suff_stats(providers)?;
    let z_idx = spec.z_indices()?;
    let lambda = delta_factor(params)?;
    let (pieces, _) = pieces_at(&stats, &z_idx, &lambda)?;
    let n = pieces.n_total as f64;
    let quad = pieces.ytvy - 2.0 * params.beta.dot(&pieces.xtvy)
        + (params.beta.transpose() * pieces.fisher.matrix() * &params.beta)[(0, 0)];
    let value =
        n * (params.sigma2.ln() + LOG_2PI) + pieces.logdet_v + quad / params.sigma2;
    if !value.is_finite() {
        return Err(Error::NonFiniteLikelihood(format!(
            "deviance evaluated to {value}"
        )));
    }
    Ok(value)
}

/// REML criterion at the supplied covariance parameters, with the fixed
/// effects profiled at their GLS solution.
pub fn reml_criterion(
    spec: &ModelSpec,
    providers: &[ProviderData],
    params: &LmmParams,
) -> Result<f64> {
    if !(params.sigma2 > 0.0) || !params.sigma2.is_finite() {
        return Err(Error::NonFiniteLikelihood(format!(
            "sigma2 = {}",
            params.sigma2
        )));
    }
    let stats = suff_stats(providers)?;
    let z_idx = spec.z_indices()?;
    let lambda = delta_factor(params)?;
    let (pieces, _) = pieces_at(&stats, &z_idx, &lambda)?;
    let p = pieces.fisher.dim();
    let n = pieces.n_total as f64;
    let beta = gls_beta(&pieces)?;
    let rss = weighted_rss(&pieces, &beta);
    let penalty =
        numerics::logdet_spd(&pieces.fisher).map_err(|_| Error::SingularFixedDesign)?;
    // log|sum X' Sigma^{-1} X| = log|fisher| - p log sigma2.
    let value = n * params.sigma2.ln() + pieces.logdet_v + rss / params.sigma2 + penalty
        - p as f64 * params.sigma2.ln()
        + (n - p as f64) * LOG_2PI;
    if !value.is_finite() {
        return Err(Error::NonFiniteLikelihood(format!(
            "REML criterion evaluated to {value}"
        )));
    }
    Ok(value)
}

/// Fitted model with inference byproducts.
#[derive(Debug, Clone)]
pub struct LmmFit {
    pub method: FitMethod,
    pub response: String,
    /// Design column names, intercept first.
    pub fixed_names: Vec<String>,
    pub random: RandomEffects,
    pub params: LmmParams,
    /// `-2 log L` (ML) or the REML criterion at convergence.
    pub criterion: f64,
    pub aic: f64,
    pub bic: f64,
    pub k_params: usize,
    pub se_beta: DVector<f64>,
    pub wald_ci: Vec<(f64, f64)>,
    pub blups: Vec<(String, DVector<f64>)>,
    pub n_total: usize,
    pub n_providers: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl LmmFit {
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                restarts: RESTARTS,
                best: self.criterion,
            })
        }
    }

    /// `sqrt(G[j,j])` per random term, plus the intercept/slope correlation
    /// when q == 2.
    pub fn random_sd(&self) -> Vec<f64> {
        (0..self.params.q())
            .map(|j| self.params.g.get(j, j).sqrt())
            .collect()
    }

    pub fn random_correlation(&self) -> Option<f64> {
        if self.params.q() == 2 {
            let g = &self.params.g;
            let d = (g.get(0, 0) * g.get(1, 1)).sqrt();
            if d > 0.0 {
                return Some(g.get(0, 1) / d);
            }
        }
        None
    }
}

struct SimplexOutcome {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut obj: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
) -> SimplexOutcome {
    let dim = x0.len();
    let eval = |x: &[f64], obj: &mut F| -> f64 {
        let v = obj(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(x0, &mut obj);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let f = eval(&x, &mut obj);
        simplex.push((x, f));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if (worst - best).abs() < CRITERION_TOL && diameter < SIMPLEX_DIAMETER_TOL {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst_x = simplex[dim].0.clone();
        let reflect: Vec<f64> = (0..dim)
            .map(|j| centroid[j] + (centroid[j] - worst_x[j]))
            .collect();
        let f_reflect = eval(&reflect, &mut obj);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..dim)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - worst_x[j]))
                .collect();
            let f_expand = eval(&expand, &mut obj);
            simplex[dim] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
            continue;
        }
        if f_reflect < simplex[dim - 1].1 {
            simplex[dim] = (reflect, f_reflect);
            continue;
        }
        let (contract, f_contract) = if f_reflect < simplex[dim].1 {
            let x: Vec<f64> = (0..dim)
                .map(|j| centroid[j] + 0.5 * (centroid[j] - worst_x[j]))
                .collect();
            let f = eval(&x, &mut obj);
            (x, f)
        } else {
            let x: Vec<f64> = (0..dim)
                .map(|j| centroid[j] - 0.5 * (centroid[j] - worst_x[j]))
                .collect();
            let f = eval(&x, &mut obj);
            (x, f)
        };
        if f_contract < simplex[dim].1.min(f_reflect) {
            simplex[dim] = (contract, f_contract);
            continue;
        }
        // Shrink toward the best vertex.
        let best_x = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for j in 0..dim {
                v.0[j] = best_x[j] + 0.5 * (v.0[j] - best_x[j]);
            }
            v.1 = eval(&v.0, &mut obj);
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    SimplexOutcome {
        x: simplex[0].0.clone(),
        f: simplex[0].1,
        iterations,
        converged,
    }
}

/// Fits the model by minimizing the profiled criterion over the
/// log-Cholesky covariance parameters.
pub fn fit(spec: &ModelSpec, providers: &[ProviderData]) -> Result<LmmFit> {
    if providers.len() < 2 {
        return Err(Error::InvalidModel(format!(
            "mixed-model fitting needs at least 2 providers, got {}",
            providers.len()
        )));
    }
    let stats = suff_stats(providers)?;
    let z_idx = spec.z_indices()?;
    let q = z_idx.len();
    let p = stats[0].xtx.nrows();
    let theta_dim = q * (q + 1) / 2;

    let mut objective = |theta: &[f64]| -> f64 {
        let lambda = theta_to_factor(theta, q);
        match pieces_at(&stats, &z_idx, &lambda)
            .and_then(|(pieces, _)| profiled_criterion(&pieces, p, spec.method))
        {
            Ok((c, _, _)) => c,
            Err(_) => f64::INFINITY,
        }
    };

    let theta0 = vec![0.0; theta_dim];
    let (theta_hat, iterations, converged) = if theta_dim == 0 {
        (theta0, 1, true)
    } else {
        let max_iter = 400 * theta_dim + 400;
        let mut best = nelder_mead(&mut objective, &theta0, 0.5, max_iter);
        let mut total_iter = best.iterations;
        for r in 1..=RESTARTS {
            // Deterministic jitter: nudge the incumbent and shrink the simplex.
            let mut start = best.x.clone();
            for (i, v) in start.iter_mut().enumerate() {
                *v += 0.2 / r as f64 * if (i + r) % 2 == 0 { 1.0 } else { -1.0 };
            }
            let run = nelder_mead(&mut objective, &start, 0.5 / (1 << r) as f64, max_iter);
            total_iter += run.iterations;
            if run.f < best.f {
                best = run;
            }
        }
        if !best.f.is_finite() {
            return Err(Error::NonFiniteLikelihood(
                "criterion not finite anywhere the optimizer looked".into(),
            ));
        }
        (best.x, total_iter, best.converged)
    };

    let lambda = theta_to_factor(&theta_hat, q);
    let (pieces, factors) = pieces_at(&stats, &z_idx, &lambda)?;
    let (criterion, beta, sigma2) = profiled_criterion(&pieces, p, spec.method)?;
    let delta = &lambda * lambda.transpose();
    let g = SymMatrix::from_fn(q, |i, j| sigma2 * delta[(i, j)]);
    let params = LmmParams {
        beta: beta.clone(),
        sigma2,
        g,
        theta: Some(theta_hat),
    };

    let k_params = p + q * (q + 1) / 2 + 1;
    let n = pieces.n_total as f64;
    let aic = criterion + 2.0 * k_params as f64;
    let bic = criterion + k_params as f64 * n.ln();

    let cov_beta = numerics::inverse_spd(&pieces.fisher)
        .map_err(|_| Error::SingularFixedDesign)?
        .scale(sigma2);
    let se_beta = DVector::from_iterator(p, (0..p).map(|j| cov_beta.get(j, j).sqrt()));
    let wald_ci: Vec<(f64, f64)> = (0..p)
        .map(|j| (beta[j] - WALD_Z * se_beta[j], beta[j] + WALD_Z * se_beta[j]))
        .collect();

    let blups = blups_from_factors(&stats, &factors, &lambda, &beta);

    Ok(LmmFit {
        method: spec.method,
        response: spec.response.clone(),
        fixed_names: spec.design_names(),
        random: spec.random.clone(),
        params,
        criterion,
        aic,
        bic,
        k_params,
        se_beta,
        wald_ci,
        blups,
        n_total: pieces.n_total,
        n_providers: providers.len(),
        converged,
        iterations,
    })
}

/// `u_h = G Z_h' Sigma_h^{-1} (y_h - X_h beta)`, which reduces to
/// `Lambda K_h^{-1} Lambda' Z_h' r_h` in the whitened coordinates.
fn blups_from_factors(
    stats: &[SuffStats],
    factors: &[ProviderFactor],
    lambda: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Vec<(String, DVector<f64>)> {
    stats
        .iter()
        .zip(factors)
        .map(|(st, fac)| {
            let lztr = &fac.lzty - &fac.lztx * beta;
            let u = lambda * fac.k_chol.solve_vector(&lztr);
            (st.provider_id.clone(), u)
        })
        .collect()
}

/// Random-effect predictions for a fitted model.
pub fn blups(fit: &LmmFit, providers: &[ProviderData]) -> Result<Vec<(String, DVector<f64>)>> {
    blups_at_params(
        &ModelSpec {
            response: fit.response.clone(),
            fixed: fit.fixed_names[1..].to_vec(),
            random: fit.random.clone(),
            method: fit.method,
        },
        providers,
        &fit.params,
    )
}

/// BLUPs at explicit parameters (useful for raw-vs-pseudo checks).
pub fn blups_at_params(
    spec: &ModelSpec,
    providers: &[ProviderData],
    params: &LmmParams,
) -> Result<Vec<(String, DVector<f64>)>> {
    let stats = suff_stats(providers)?;
    let z_idx = spec.z_indices()?;
    let lambda = delta_factor(params)?;
    let (_, factors) = pieces_at(&stats, &z_idx, &lambda)?;
    Ok(blups_from_factors(&stats, &factors, &lambda, &params.beta))
}

/// Orders fits best-first by AIC, then BIC, then parameter count.
pub fn compare_models(fits: &[LmmFit]) -> Result<Vec<usize>> {
    let first = fits
        .first()
        .ok_or_else(|| Error::MismatchedData("no fits to compare".into()))?;
    for f in fits {
        if f.response != first.response
            || f.n_total != first.n_total
            || f.n_providers != first.n_providers
        {
            return Err(Error::MismatchedData(format!(
                "fit of '{}' over {} rows / {} providers cannot be ranked against fit of '{}' over {} rows / {} providers",
                f.response, f.n_total, f.n_providers,
                first.response, first.n_total, first.n_providers
            )));
        }
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = &fits[a];
        let fb = &fits[b];
        fa.aic
            .partial_cmp(&fb.aic)
            .unwrap()
            .then(fa.bic.partial_cmp(&fb.bic).unwrap())
            .then(fa.k_params.cmp(&fb.k_params))
    });
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_distr::StandardNormal;

    fn spec_intercept(method: FitMethod) -> ModelSpec {
        ModelSpec {
            response: "y".into(),
            fixed: vec!["x1".into(), "x2".into()],
            random: RandomEffects::intercept_only(),
            method,
        }
    }

    /// Simulated federated data with known parameters.
    fn simulate(
        m: usize,
        n_h: usize,
        beta: &[f64],
        sigma: f64,
        g: &DMatrix<f64>,
        slopes_on_x1: bool,
        seed: u64,
    ) -> Vec<ProviderData> {
        let mut rng = StdRng::seed_from_u64(seed);
        let q = g.nrows();
        let g_chol = g.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| {
            // Allow singular G in simulations (for example G = 0).
            DMatrix::zeros(q, q)
        });
        (0..m)
            .map(|h| {
                let mut u = DVector::zeros(q);
                let draw = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
                u += &g_chol * draw;
                let mut x = DMatrix::zeros(n_h, beta.len());
                let mut y = DVector::zeros(n_h);
                for i in 0..n_h {
                    x[(i, 0)] = 1.0;
                    for j in 1..beta.len() {
                        x[(i, j)] = rng.random_range(-1.5..1.5);
                    }
                    let mut mean = 0.0;
                    for j in 0..beta.len() {
                        mean += x[(i, j)] * beta[j];
                    }
                    let mut z_contrib = u[0]; // random intercept
                    if slopes_on_x1 && q > 1 {
                        z_contrib += u[1] * x[(i, 1)];
                    }
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    y[i] = mean + z_contrib + sigma * eps;
                }
                ProviderData {
                    provider_id: format!("prov{h}"),
                    x,
                    y,
                }
            })
            .collect()
    }

    /// Dense oracle: builds each provider's full marginal covariance and
    /// evaluates -2 log L with nalgebra's factorizations.
    fn dense_deviance(
        providers: &[ProviderData],
        z_idx: &[usize],
        beta: &DVector<f64>,
        sigma2: f64,
        g: &DMatrix<f64>,
    ) -> f64 {
        let mut total = 0.0;
        let mut n_total = 0;
        for pd in providers {
            let n = pd.x.nrows();
            n_total += n;
            let z = DMatrix::from_fn(n, z_idx.len(), |i, k| pd.x[(i, z_idx[k])]);
            let sig = &z * g * z.transpose() + DMatrix::identity(n, n) * sigma2;
            let chol = sig.cholesky().unwrap();
            let l = chol.l();
            let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            let r = &pd.y - &pd.x * beta;
            let quad = r.dot(&chol.solve(&r));
            total += logdet + quad;
        }
        total + n_total as f64 * LOG_2PI
    }

    #[test]
    fn theta_factor_roundtrip() {
        let theta = vec![0.3, -0.7, -0.1];
        let lambda = theta_to_factor(&theta, 2);
        let delta = &lambda * lambda.transpose();
        let g = SymMatrix::from_fn(2, |i, j| 4.0 * delta[(i, j)]);
        let back = theta_from_g(&g, 4.0).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn deviance_with_zero_g_is_iid_gaussian() {
        let providers = simulate(3, 20, &[1.0, 0.5, -0.25], 0.8, &DMatrix::zeros(1, 1), false, 5);
        let spec = spec_intercept(FitMethod::Ml);
        let beta = DVector::from_vec(vec![1.0, 0.5, -0.25]);
        let sigma2 = 0.64;
        let params = LmmParams::new(beta.clone(), sigma2, SymMatrix::zeros(1));
        let dev = deviance(&spec, &providers, &params).unwrap();
        let mut rss = 0.0;
        let mut n = 0usize;
        for pd in &providers {
            let r = &pd.y - &pd.x * &beta;
            rss += r.dot(&r);
            n += pd.y.len();
        }
        let expect = n as f64 * ((sigma2).ln() + LOG_2PI) + rss / sigma2;
        assert_abs_diff_eq!(dev, expect, epsilon = 1e-9);
    }

    #[test]
    fn deviance_two_row_provider_hand_algebra() {
        // One provider, two rows, random intercept:
        // Sigma = [[s2+g, g], [g, s2+g]].
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let providers = vec![ProviderData {
            provider_id: "solo".into(),
            x,
            y: y.clone(),
        }];
        let spec = ModelSpec {
            response: "y".into(),
            fixed: vec![],
            random: RandomEffects::intercept_only(),
            method: FitMethod::Ml,
        };
        let (s2, g, b) = (0.5, 0.8, 1.2);
        let params = LmmParams::new(
            DVector::from_vec(vec![b]),
            s2,
            SymMatrix::from_diagonal(&[g]),
        );
        let dev = deviance(&spec, &providers, &params).unwrap();
        let det = (s2 + g) * (s2 + g) - g * g;
        let r = [y[0] - b, y[1] - b];
        let quad =
            ((s2 + g) * r[0] * r[0] - 2.0 * g * r[0] * r[1] + (s2 + g) * r[1] * r[1]) / det;
        let expect = det.ln() + quad + 2.0 * LOG_2PI;
        assert_abs_diff_eq!(dev, expect, epsilon = 1e-10);
    }

    #[test]
    fn deviance_matches_dense_oracle() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let providers = simulate(4, 15, &[0.5, -1.0, 0.75], 0.7, &g, true, 6);
        let spec = ModelSpec {
            response: "y".into(),
            fixed: vec!["x1".into(), "x2".into()],
            random: RandomEffects {
                intercept: true,
                slopes: vec!["x1".into()],
            },
            method: FitMethod::Ml,
        };
        let z_idx = spec.z_indices().unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..5 {
            let beta = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let sigma2 = rng.random_range(0.2..2.0);
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
            let gm = &a * a.transpose() + DMatrix::identity(2, 2) * 0.05;
            let params = LmmParams::new(
                beta.clone(),
                sigma2,
                SymMatrix::from_upper(&gm).unwrap(),
            );
            let fast = deviance(&spec, &providers, &params).unwrap();
            let slow = dense_deviance(&providers, &z_idx, &beta, sigma2, &gm);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-8);
        }
    }

    #[test]
    fn reml_intercept_only_zero_g_closed_form() {
        let providers = simulate(2, 25, &[2.0], 1.0, &DMatrix::zeros(1, 1), false, 8);
        let spec = ModelSpec {
            response: "y".into(),
            fixed: vec![],
            random: RandomEffects::intercept_only(),
            method: FitMethod::Reml,
        };
        let sigma2 = 1.3;
        let params = LmmParams::new(DVector::from_vec(vec![0.0]), sigma2, SymMatrix::zeros(1));
        let crit = reml_criterion(&spec, &providers, &params).unwrap();
        // Closed form for iid data, p = 1: beta profiles to the grand mean.
        let all: Vec<f64> = providers.iter().flat_map(|p| p.y.iter().copied()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let ss: f64 = all.iter().map(|v| (v - mean) * (v - mean)).sum();
        // criterion = n log s2 + log|X' Sigma^{-1} X| + RSS/s2 + (n-1) log 2pi
        // with X'Sigma^{-1}X = n / s2 for an intercept-only iid model.
        let expect = n * sigma2.ln() + (n / sigma2).ln() + ss / sigma2 + (n - 1.0) * LOG_2PI;
        assert_abs_diff_eq!(crit, expect, epsilon = 1e-9);
    }

    #[test]
    fn gls_beta_matches_dense_solve() {
        let g = DMatrix::from_row_slice(1, 1, &[0.4]);
        let providers = simulate(5, 12, &[1.0, -0.5, 0.2], 0.6, &g, false, 9);
        let spec = spec_intercept(FitMethod::Ml);
        let z_idx = spec.z_indices().unwrap();
        let stats = suff_stats(&providers).unwrap();
        let theta = vec![-0.3];
        let lambda = theta_to_factor(&theta, 1);
        let (pieces, _) = pieces_at(&stats, &z_idx, &lambda).unwrap();
        let beta = gls_beta(&pieces).unwrap();
        // Dense GLS at the same V: sum X'V^{-1}X beta = sum X'V^{-1}y.
        let mut fisher = DMatrix::zeros(3, 3);
        let mut rhs = DVector::zeros(3);
        for pd in &providers {
            let n = pd.x.nrows();
            let z = DMatrix::from_fn(n, 1, |i, k| pd.x[(i, z_idx[k])]);
            let delta = &lambda * lambda.transpose();
            let v = DMatrix::identity(n, n) + &z * delta * z.transpose();
            let vinv = v.try_inverse().unwrap();
            fisher += pd.x.transpose() * &vinv * &pd.x;
            rhs += pd.x.transpose() * &vinv * &pd.y;
        }
        let dense = fisher.lu().solve(&rhs).unwrap();
        assert!((beta - dense).amax() < 1e-8);
    }

    #[test]
    fn fit_recovers_simulation_parameters() {
        let g = DMatrix::from_row_slice(1, 1, &[0.25]);
        let truth = [2.0, 1.0, -0.5];
        let providers = simulate(10, 100, &truth, 0.5, &g, false, 10);
        let spec = spec_intercept(FitMethod::Reml);
        let fit = fit(&spec, &providers).unwrap();
        assert!(fit.converged);
        for j in 0..3 {
            let dev = (fit.params.beta[j] - truth[j]).abs();
            assert!(
                dev <= 4.0 * fit.se_beta[j],
                "beta[{j}] {} vs {} (se {})",
                fit.params.beta[j],
                truth[j],
                fit.se_beta[j]
            );
        }
        // Variance components land in the right neighborhood.
        assert!((fit.params.sigma2 - 0.25).abs() < 0.1);
        assert!((fit.params.g.get(0, 0) - 0.25).abs() < 0.25);
    }

    #[test]
    fn information_criteria_identities_hold_exactly() {
        let g = DMatrix::from_row_slice(1, 1, &[0.3]);
        let providers = simulate(5, 25, &[0.5, 1.0, -0.2], 0.8, &g, false, 19);
        let spec = spec_intercept(FitMethod::Reml);
        let f = fit(&spec, &providers).unwrap();
        // k = p + q(q+1)/2 + 1 with p = 3, q = 1.
        assert_eq!(f.k_params, 5);
        assert_eq!(f.aic, f.criterion + 2.0 * 5.0);
        assert_eq!(f.bic, f.criterion + 5.0 * (f.n_total as f64).ln());
        for (j, (lo, hi)) in f.wald_ci.iter().enumerate() {
            assert_eq!(*lo, f.params.beta[j] - 1.96 * f.se_beta[j]);
            assert_eq!(*hi, f.params.beta[j] + 1.96 * f.se_beta[j]);
        }
    }

    #[test]
    fn reml_and_ml_variance_tie_to_ols_at_q_zero() {
        let providers = simulate(4, 30, &[1.0, 0.3, -0.7], 0.9, &DMatrix::zeros(1, 1), false, 11);
        let mut spec = spec_intercept(FitMethod::Reml);
        spec.random = RandomEffects::none();
        let reml_fit = fit(&spec, &providers).unwrap();
        spec.method = FitMethod::Ml;
        let ml_fit = fit(&spec, &providers).unwrap();
        // Direct least squares on the stacked data.
        let n: usize = providers.iter().map(|p| p.y.len()).sum();
        let mut x = DMatrix::zeros(n, 3);
        let mut y = DVector::zeros(n);
        let mut row = 0;
        for pd in &providers {
            for i in 0..pd.y.len() {
                for j in 0..3 {
                    x[(row, j)] = pd.x[(i, j)];
                }
                y[row] = pd.y[i];
                row += 1;
            }
        }
        let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
        let r = &y - &x * &beta;
        let rss = r.dot(&r);
        assert_abs_diff_eq!(ml_fit.params.sigma2, rss / n as f64, epsilon = 1e-10);
        assert_abs_diff_eq!(
            reml_fit.params.sigma2,
            rss / (n as f64 - 3.0),
            epsilon = 1e-10
        );
    }

    #[test]
    fn blups_vanish_as_g_goes_to_zero() {
        let g = DMatrix::from_row_slice(1, 1, &[0.3]);
        let providers = simulate(4, 20, &[1.0, 0.5, 0.0], 0.7, &g, false, 12);
        let spec = spec_intercept(FitMethod::Reml);
        let params = LmmParams::new(
            DVector::from_vec(vec![1.0, 0.5, 0.0]),
            0.49,
            SymMatrix::from_diagonal(&[1e-12]),
        );
        let us = blups_at_params(&spec, &providers, &params).unwrap();
        for (_, u) in us {
            assert!(u.amax() < 1e-9);
        }
    }

    #[test]
    fn blup_approaches_ols_deviation_for_huge_provider() {
        // One huge provider with a large random-intercept variance: the BLUP
        // shrinkage factor G n / (sigma2 + G n) is within 1e-3 of 1.
        let mut rng = StdRng::seed_from_u64(13);
        let n = 10_000;
        let offset = 3.0;
        let beta0 = 1.0;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |_, _| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            beta0 + offset + 0.5 * eps
        });
        let providers = vec![ProviderData {
            provider_id: "big".into(),
            x,
            y: y.clone(),
        }];
        let spec = ModelSpec {
            response: "y".into(),
            fixed: vec![],
            random: RandomEffects::intercept_only(),
            method: FitMethod::Ml,
        };
        let params = LmmParams::new(
            DVector::from_vec(vec![beta0]),
            0.25,
            SymMatrix::from_diagonal(&[25.0]),
        );
        let us = blups_at_params(&spec, &providers, &params).unwrap();
        let ybar = y.sum() / n as f64;
        let ols_deviation = ybar - beta0;
        assert_abs_diff_eq!(us[0].1[0], ols_deviation, epsilon = 1e-3);
        // Shrinkage: the BLUP never exceeds the raw deviation.
        assert!(us[0].1[0].abs() <= ols_deviation.abs());
    }

    #[test]
    fn compare_orders_by_aic_then_bic_then_k() {
        let g = DMatrix::from_row_slice(1, 1, &[0.2]);
        let providers = simulate(6, 40, &[1.0, 0.8, -0.3], 0.6, &g, false, 14);
        let spec1 = spec_intercept(FitMethod::Reml);
        let fit1 = fit(&spec1, &providers).unwrap();
        let mut fit2 = fit1.clone();
        fit2.aic += 5.0; // strictly worse
        let order = compare_models(&[fit2.clone(), fit1.clone()]).unwrap();
        assert_eq!(order, vec![1, 0]);
        // Exact ties keep input order (stable sort on equal keys).
        let order_tie = compare_models(&[fit1.clone(), fit1.clone()]).unwrap();
        assert_eq!(order_tie, vec![0, 1]);
        // AIC tie broken by BIC.
        let mut fit3 = fit1.clone();
        fit3.bic += 1.0;
        let order_bic = compare_models(&[fit3, fit1.clone()]).unwrap();
        assert_eq!(order_bic, vec![1, 0]);
        // Mismatched data refuses to rank.
        let mut alien = fit1.clone();
        alien.n_total += 1;
        assert!(matches!(
            compare_models(&[fit1, alien]),
            Err(Error::MismatchedData(_))
        ));
    }
}
