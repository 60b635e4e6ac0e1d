//! Linear regression straight from summary statistics.
//!
//! The normal equations only ever see `X^T X`, `X^T y`, `y^T y` and `n`, and
//! all four reconstruct exactly from a provider's mean vector and covariance
//! matrix:
//!
//! ```text
//! sum y^2      = s2_y (n-1) + n ybar^2
//! sum y x_j    = s_{y x_j} (n-1) + n ybar xbar_j
//! sum x_j x_k  = s_{x_j x_k} (n-1) + n xbar_j xbar_k
//! ```
//!
//! so the fit is identical to a raw-data fit, with no residuals ever formed.
//! With third and fourth joint central moments available, the HC0 sandwich
//! covariance is reconstructed the same way: its meat
//! `sum e_i^2 x_i x_i^T` expands into raw power sums of order <= 4.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, SymMatrix};
use crate::summaries::ProviderSummary;

pub const INTERCEPT_NAME: &str = "(Intercept)";

/// Aggregates sufficient for the linear-regression likelihood. The design
/// includes an implicit leading intercept column, so `xtx[0][0] == n`.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    pub n: usize,
    pub response: String,
    /// Design column names, `"(Intercept)"` first.
    pub names: Vec<String>,
    pub xtx: SymMatrix,
    pub xty: DVector<f64>,
    pub yty: f64,
}

/// Fit of `y ~ X` computed entirely from [`CrossProducts`].
#[derive(Debug, Clone)]
pub struct LinRegFit {
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    pub sigma2_mle: f64,
    /// `None` when `n <= p` leaves no residual degrees of freedom.
    pub sigma2_ols: Option<f64>,
    pub classical_cov: Option<SymMatrix>,
    pub robust_cov: Option<SymMatrix>,
    pub n: usize,
}

impl LinRegFit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn sigma2_ols_required(&self) -> Result<f64> {
        self.sigma2_ols.ok_or(Error::TooFewObservations {
            n: self.n,
            p: self.p(),
        })
    }

    /// Classical standard errors, when residual degrees of freedom exist.
    pub fn se_beta(&self) -> Option<DVector<f64>> {
        self.classical_cov
            .as_ref()
            .map(|c| DVector::from_iterator(self.p(), (0..self.p()).map(|j| c.get(j, j).sqrt())))
    }

    pub fn robust_se(&self) -> Option<DVector<f64>> {
        self.robust_cov
            .as_ref()
            .map(|c| DVector::from_iterator(self.p(), (0..self.p()).map(|j| c.get(j, j).sqrt())))
    }
}

/// Which finite-sample scaling to apply to the sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HcVariant {
    Hc0,
    /// HC0 rescaled by `n / (n - p)`.
    Hc1,
}

/// Reconstructs the pooled aggregates for `response ~ other variables` (in
/// summary order) from one provider's summary.
pub fn cross_products_from_summary(
    summary: &ProviderSummary,
    response: &str,
) -> Result<CrossProducts> {
    let y = summary
        .var_index(response)
        .ok_or_else(|| Error::ResponseNotFound(response.to_string()))?;
    let predictors: Vec<usize> = (0..summary.p()).filter(|&j| j != y).collect();
    cross_products_for(summary, response, y, &predictors)
}

/// Same as [`cross_products_from_summary`] but with an explicit predictor
/// list (named design control for model selection).
pub fn cross_products_for_model(
    summary: &ProviderSummary,
    response: &str,
    predictors: &[String],
) -> Result<CrossProducts> {
    let y = summary
        .var_index(response)
        .ok_or_else(|| Error::ResponseNotFound(response.to_string()))?;
    let idx: Vec<usize> = predictors
        .iter()
        .map(|name| {
            summary
                .var_index(name)
                .ok_or_else(|| Error::UnknownBaseVariable(name.clone()))
        })
        .collect::<Result<_>>()?;
    cross_products_for(summary, response, y, &idx)
}

fn cross_products_for(
    summary: &ProviderSummary,
    response: &str,
    y: usize,
    predictors: &[usize],
) -> Result<CrossProducts> {
    let p = predictors.len() + 1;
    let mut names = Vec::with_capacity(p);
    names.push(INTERCEPT_NAME.to_string());
    for &j in predictors {
        names.push(summary.variables[j].name.clone());
    }
    // Design index 0 is the intercept; raw power sums simply drop it.
    let var_of = |d: usize| -> Option<usize> {
        if d == 0 {
            None
        } else {
            Some(predictors[d - 1])
        }
    };
    let raw = |design: &[usize]| -> Result<f64> {
        let idx: Vec<usize> = design.iter().filter_map(|&d| var_of(d)).collect();
        summary.raw_sum(&idx)
    };
    let mut xtx_vals = vec![0.0; p * p];
    for a in 0..p {
        for b in a..p {
            let v = raw(&[a, b])?;
            xtx_vals[a * p + b] = v;
            xtx_vals[b * p + a] = v;
        }
    }
    let xtx = SymMatrix::from_fn(p, |a, b| xtx_vals[a * p + b]);
    let mut xty = DVector::zeros(p);
    for a in 0..p {
        let idx: Vec<usize> = std::iter::once(y)
            .chain(var_of(a))
            .collect();
        xty[a] = summary.raw_sum(&idx)?;
    }
    let yty = summary.raw_sum(&[y, y])?;
    Ok(CrossProducts {
        n: summary.n,
        response: response.to_string(),
        names,
        xtx,
        xty,
        yty,
    })
}

/// Sums cross products across providers (they are plain sums over rows).
pub fn pool_cross_products(parts: &[CrossProducts]) -> Result<CrossProducts> {
    let first = parts
        .first()
        .ok_or_else(|| Error::SchemaMismatch("no cross products to pool".into()))?;
    let p = first.names.len();
    for part in parts {
        if part.names != first.names || part.response != first.response {
            return Err(Error::SchemaMismatch(
                "cross products have different designs".into(),
            ));
        }
    }
    let n = parts.iter().map(|c| c.n).sum();
    let xtx = SymMatrix::from_fn(p, |a, b| parts.iter().map(|c| c.xtx.get(a, b)).sum());
    let xty = DVector::from_iterator(
        p,
        (0..p).map(|a| parts.iter().map(|c| c.xty[a]).sum::<f64>()),
    );
    let yty = parts.iter().map(|c| c.yty).sum();
    Ok(CrossProducts {
        n,
        response: first.response.clone(),
        names: first.names.clone(),
        xtx,
        xty,
        yty,
    })
}

/// Ordinary least squares from cross products alone.
///
/// The residual sum of squares is assembled algebraically as
/// `yty - 2 b'X'y + b'X'X b`; no residual vector exists anywhere in this
/// code path.
pub fn fit_ols(cp: &CrossProducts) -> Result<LinRegFit> {
    let p = cp.names.len();
    let n = cp.n;
    let beta = numerics::solve_spd_vector(&cp.xtx, &cp.xty).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::SingularDesign,
        other => other,
    })?;
    let quad = (beta.transpose() * cp.xtx.matrix() * &beta)[(0, 0)];
    let rss = (cp.yty - 2.0 * beta.dot(&cp.xty) + quad).max(0.0);
    let sigma2_mle = rss / n as f64;
    let (sigma2_ols, classical_cov) = if n > p {
        let s2 = rss / (n - p) as f64;
        let inv = numerics::inverse_spd(&cp.xtx).map_err(|e| match e {
            Error::NotPositiveDefinite(_) => Error::SingularDesign,
            other => other,
        })?;
        (Some(s2), Some(inv.scale(s2)))
    } else {
        (None, None)
    };
    Ok(LinRegFit {
        names: cp.names.clone(),
        beta,
        sigma2_mle,
        sigma2_ols,
        classical_cov,
        robust_cov: None,
        n,
    })
}

/// Heteroscedasticity-robust sandwich `(X'X)^-1 M (X'X)^-1` with
/// `M = sum e_i^2 x_i x_i^T`, reconstructed from third/fourth joint moments.
///
/// Expanding the squared residual gives three blocks of raw power sums:
///
/// ```text
/// M = sum y^2 x x'  -  2 sum (y x'b) x x'  +  sum (b'x x'b) x x'
/// ```
///
/// Each entry is a raw sum of order at most four over the summary variables
/// (intercept positions drop out), so a summary with both higher-moment
/// tensors determines `M` exactly.
///
/// `b` is the plug-in coefficient vector from `fit`; the residual-variance
/// scaling (`sigma2_mle` vs `sigma2_ols`) never enters the sandwich, so the
/// choice between them is immaterial here.
pub fn robust_sandwich(
    summary: &ProviderSummary,
    fit: &LinRegFit,
    response: &str,
    variant: HcVariant,
) -> Result<SymMatrix> {
    if !summary.has_higher_moments() {
        return Err(Error::MissingHigherMoments);
    }
    let y = summary
        .var_index(response)
        .ok_or_else(|| Error::ResponseNotFound(response.to_string()))?;
    let p = fit.p();
    // Reconstruct the design mapping the same way the cross products did.
    let predictor_names = &fit.names[1..];
    let predictors: Vec<usize> = predictor_names
        .iter()
        .map(|name| {
            summary
                .var_index(name)
                .ok_or_else(|| Error::UnknownBaseVariable(name.clone()))
        })
        .collect::<Result<_>>()?;
    let var_of = |d: usize| -> Option<usize> {
        if d == 0 {
            None
        } else {
            Some(predictors[d - 1])
        }
    };
    let raw = |design_vars: &[Option<usize>]| -> Result<f64> {
        let idx: Vec<usize> = design_vars.iter().filter_map(|&v| v).collect();
        summary.raw_sum(&idx)
    };
    let beta = &fit.beta;
    let mut meat_vals = vec![0.0; p * p];
    for j in 0..p {
        for k in j..p {
            let dj = var_of(j);
            let dk = var_of(k);
            // sum y^2 x_j x_k
            let t1 = raw(&[Some(y), Some(y), dj, dk])?;
            // sum (y x'b) x_j x_k
            let mut t2 = 0.0;
            for l in 0..p {
                t2 += beta[l] * raw(&[Some(y), var_of(l), dj, dk])?;
            }
            // sum (b'x x'b) x_j x_k
            let mut t3 = 0.0;
            for l in 0..p {
                for m in 0..p {
                    t3 += beta[l] * beta[m] * raw(&[var_of(l), var_of(m), dj, dk])?;
                }
            }
            let v = t1 - 2.0 * t2 + t3;
            meat_vals[j * p + k] = v;
            meat_vals[k * p + j] = v;
        }
    }
    let xtx = SymMatrix::from_fn(p, |a, b| {
        let ia = var_of(a);
        let ib = var_of(b);
        let idx: Vec<usize> = [ia, ib].iter().filter_map(|&v| v).collect();
        summary.raw_sum(&idx).expect("order <= 2 always available")
    });
    let bread = numerics::inverse_spd(&xtx).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::SingularDesign,
        other => other,
    })?;
    let meat = nalgebra::DMatrix::from_row_slice(p, p, &meat_vals);
    let sandwich = bread.matrix() * meat * bread.matrix();
    let mut out = SymMatrix::from_upper(&sandwich)?;
    if variant == HcVariant::Hc1 {
        if summary.n <= p {
            return Err(Error::TooFewObservations { n: summary.n, p });
        }
        out = out.scale(summary.n as f64 / (summary.n - p) as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summaries::{summarize_matrix, VariableSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::prelude::*;

    fn specs(names: &[&str]) -> Vec<VariableSpec> {
        names.iter().map(|n| VariableSpec::numeric(*n)).collect()
    }

    /// Independent least-squares oracle on raw data via nalgebra's LU.
    fn raw_ols_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64, f64) {
        let xtx = x.transpose() * x;
        let xty = x.transpose() * y;
        let beta = xtx.clone().lu().solve(&xty).expect("full rank");
        let resid = y - x * &beta;
        let rss = resid.dot(&resid);
        let n = x.nrows() as f64;
        let p = x.ncols() as f64;
        (beta, rss / n, rss / (n - p))
    }

    fn with_intercept(data: &DMatrix<f64>, predictor_cols: &[usize]) -> DMatrix<f64> {
        let n = data.nrows();
        let mut x = DMatrix::zeros(n, predictor_cols.len() + 1);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for (k, &c) in predictor_cols.iter().enumerate() {
                x[(i, k + 1)] = data[(i, c)];
            }
        }
        x
    }

    #[test]
    fn two_point_yty_identity() {
        let data = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let s = summarize_matrix("a", &data, &specs(&["y"]), false).unwrap();
        assert_abs_diff_eq!(s.mean[0], 1.0);
        assert_abs_diff_eq!(s.cov.get(0, 0), 2.0);
        let cp = cross_products_from_summary(&s, "y").unwrap();
        assert_abs_diff_eq!(cp.yty, 4.0, epsilon = 1e-14);
        assert_eq!(cp.xtx.get(0, 0), 2.0);
    }

    #[test]
    fn zero_mean_zero_cov_gives_diagonal_xtx() {
        use crate::numerics::SymMatrix;
        let s = ProviderSummary {
            provider_id: "a".into(),
            n: 10,
            variables: specs(&["y", "x1", "x2"]),
            mean: DVector::zeros(3),
            cov: SymMatrix::from_diagonal(&[2.0, 3.0, 4.0]),
            moment3: None,
            moment4: None,
        };
        let cp = cross_products_from_summary(&s, "y").unwrap();
        // xtx over (intercept, x1, x2): diag(n, (n-1)*3, (n-1)*4).
        assert_abs_diff_eq!(cp.xtx.get(0, 0), 10.0);
        assert_abs_diff_eq!(cp.xtx.get(1, 1), 27.0);
        assert_abs_diff_eq!(cp.xtx.get(2, 2), 36.0);
        assert_abs_diff_eq!(cp.xtx.get(0, 1), 0.0);
        assert_abs_diff_eq!(cp.xtx.get(1, 2), 0.0);
        assert_abs_diff_eq!(cp.xty[0], 0.0);
    }

    #[test]
    fn cross_products_match_direct_matrix_products() {
        let mut rng = StdRng::seed_from_u64(7);
        let data = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-2.0..2.0));
        let s = summarize_matrix("a", &data, &specs(&["y", "x1", "x2"]), false).unwrap();
        let cp = cross_products_from_summary(&s, "y").unwrap();
        let x = with_intercept(&data, &[1, 2]);
        let y = DVector::from_iterator(9, (0..9).map(|i| data[(i, 0)]));
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(
                    cp.xtx.get(a, b),
                    xtx[(a, b)],
                    epsilon = 1e-12 * (1.0 + xtx[(a, b)].abs())
                );
            }
            assert_abs_diff_eq!(cp.xty[a], xty[a], epsilon = 1e-12 * (1.0 + xty[a].abs()));
        }
        assert_abs_diff_eq!(cp.yty, y.dot(&y), epsilon = 1e-12 * (1.0 + y.dot(&y)));
    }

    #[test]
    fn pooling_is_additive() {
        let mut rng = StdRng::seed_from_u64(8);
        let data = DMatrix::from_fn(24, 3, |_, _| rng.random_range(-2.0..2.0));
        let names = specs(&["y", "x1", "x2"]);
        let blocks = [(0usize, 8usize), (8, 13), (13, 24)];
        let cps: Vec<_> = blocks
            .iter()
            .map(|&(lo, hi)| {
                let s =
                    summarize_matrix("p", &data.rows(lo, hi - lo).into_owned(), &names, false)
                        .unwrap();
                cross_products_from_summary(&s, "y").unwrap()
            })
            .collect();
        let pooled = pool_cross_products(&cps).unwrap();
        let whole = {
            let s = summarize_matrix("w", &data, &names, false).unwrap();
            cross_products_from_summary(&s, "y").unwrap()
        };
        assert_eq!(pooled.n, whole.n);
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(
                    pooled.xtx.get(a, b),
                    whole.xtx.get(a, b),
                    epsilon = 1e-12 * (1.0 + whole.xtx.get(a, b).abs())
                );
            }
        }
        // Single input pools to itself; doubling doubles.
        let single = pool_cross_products(&cps[..1]).unwrap();
        assert_eq!(single.xtx.get(1, 1), cps[0].xtx.get(1, 1));
        let doubled = pool_cross_products(&[cps[0].clone(), cps[0].clone()]).unwrap();
        assert_abs_diff_eq!(doubled.yty, 2.0 * cps[0].yty, epsilon = 1e-13);
        assert_eq!(doubled.n, 2 * cps[0].n);
    }

    #[test]
    fn perfect_fit_through_two_points() {
        let data = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]); // (y, x)
        let s = summarize_matrix("a", &data, &specs(&["y", "x"]), false).unwrap();
        let cp = cross_products_from_summary(&s, "y").unwrap();
        let fit = fit_ols(&cp).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma2_mle, 0.0, epsilon = 1e-15);
        assert!(fit.sigma2_ols.is_none()); // n == p leaves no residual df
    }

    #[test]
    fn intercept_only_closed_form() {
        let mut rng = StdRng::seed_from_u64(9);
        let data = DMatrix::from_fn(15, 1, |_, _| rng.random_range(-4.0..4.0));
        let s = summarize_matrix("a", &data, &specs(&["y"]), false).unwrap();
        let cp = cross_products_from_summary(&s, "y").unwrap();
        let fit = fit_ols(&cp).unwrap();
        assert_abs_diff_eq!(fit.beta[0], s.mean[0], epsilon = 1e-12);
        let expect_mle = s.cov.get(0, 0) * 14.0 / 15.0;
        assert_abs_diff_eq!(fit.sigma2_mle, expect_mle, epsilon = 1e-12);
        // The two variance estimators differ by exactly n/(n-p).
        assert_abs_diff_eq!(
            fit.sigma2_ols.unwrap() * 14.0,
            fit.sigma2_mle * 15.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn matches_raw_least_squares_oracle() {
        let mut rng = StdRng::seed_from_u64(10);
        let n = 50;
        let mut data = DMatrix::zeros(n, 4); // y, x1..x3
        for i in 0..n {
            let x1 = rng.random_range(-1.0..1.0);
            let x2 = rng.random_range(-1.0..1.0);
            let x3 = rng.random_range(-1.0..1.0);
            let eps: f64 = rng.random_range(-0.5..0.5);
            data[(i, 0)] = 1.0 + 2.0 * x1 - 0.5 * x2 + 0.25 * x3 + eps;
            data[(i, 1)] = x1;
            data[(i, 2)] = x2;
            data[(i, 3)] = x3;
        }
        let s = summarize_matrix("a", &data, &specs(&["y", "x1", "x2", "x3"]), false).unwrap();
        let fit = fit_ols(&cross_products_from_summary(&s, "y").unwrap()).unwrap();
        let x = with_intercept(&data, &[1, 2, 3]);
        let y = DVector::from_iterator(n, (0..n).map(|i| data[(i, 0)]));
        let (beta, s2_mle, s2_ols) = raw_ols_oracle(&x, &y);
        for j in 0..4 {
            assert_abs_diff_eq!(fit.beta[j], beta[j], epsilon = 1e-10 * (1.0 + beta[j].abs()));
        }
        assert_abs_diff_eq!(fit.sigma2_mle, s2_mle, epsilon = 1e-10 * (1.0 + s2_mle));
        assert_abs_diff_eq!(fit.sigma2_ols.unwrap(), s2_ols, epsilon = 1e-10 * (1.0 + s2_ols));
    }

    #[test]
    fn sandwich_constant_squared_residuals() {
        // Intercept-only with residuals +-c^(1/2): meat = c * n, so the
        // sandwich collapses to c / n.
        let c = 0.49;
        let n = 12;
        let data = DMatrix::from_fn(n, 1, |i, _| 5.0 + if i % 2 == 0 { 0.7 } else { -0.7 });
        let s = summarize_matrix("a", &data, &specs(&["y"]), true).unwrap();
        let cp = cross_products_from_summary(&s, "y").unwrap();
        let fit = fit_ols(&cp).unwrap();
        let sw = robust_sandwich(&s, &fit, "y", HcVariant::Hc0).unwrap();
        assert_abs_diff_eq!(sw.get(0, 0), c / n as f64, epsilon = 1e-12);
    }

    #[test]
    fn sandwich_intercept_only_equals_m2_over_n() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 40;
        let data = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-3.0..5.0));
        let s = summarize_matrix("a", &data, &specs(&["y"]), true).unwrap();
        let fit = fit_ols(&cross_products_from_summary(&s, "y").unwrap()).unwrap();
        let sw = robust_sandwich(&s, &fit, "y", HcVariant::Hc0).unwrap();
        // Population (denominator n) second central moment over n.
        let mean = data.column(0).sum() / n as f64;
        let m2: f64 =
            (0..n).map(|i| (data[(i, 0)] - mean).powi(2)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(sw.get(0, 0), m2 / n as f64, epsilon = 1e-12 * (1.0 + m2));
    }

    #[test]
    fn sandwich_matches_raw_hc0_oracle() {
        let mut rng = StdRng::seed_from_u64(12);
        let n = 80;
        let mut data = DMatrix::zeros(n, 3); // y, x1, x2
        for i in 0..n {
            let x1: f64 = rng.random_range(-2.0..2.0);
            let x2: f64 = rng.random_range(-2.0..2.0);
            let noise: f64 = rng.random_range(-1.0..1.0);
            // Noise scale tied to |x1| makes the errors heteroscedastic.
            data[(i, 0)] = 0.5 + 1.5 * x1 - 0.75 * x2 + noise * (0.2 + x1.abs());
            data[(i, 1)] = x1;
            data[(i, 2)] = x2;
        }
        let s = summarize_matrix("a", &data, &specs(&["y", "x1", "x2"]), true).unwrap();
        let fit = fit_ols(&cross_products_from_summary(&s, "y").unwrap()).unwrap();
        let sw = robust_sandwich(&s, &fit, "y", HcVariant::Hc0).unwrap();

        // Raw-data HC0 oracle with residuals formed explicitly.
        let x = with_intercept(&data, &[1, 2]);
        let y = DVector::from_iterator(n, (0..n).map(|i| data[(i, 0)]));
        let xtx = x.transpose() * &x;
        let xtx_inv = xtx.clone().try_inverse().unwrap();
        let beta = &xtx_inv * (x.transpose() * &y);
        let resid = &y - &x * &beta;
        let mut meat = DMatrix::zeros(3, 3);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * (resid[i] * resid[i]);
        }
        let oracle = &xtx_inv * meat * &xtx_inv;
        let scale = oracle.amax();
        for a in 0..3 {
            for b in 0..3 {
                assert!(
                    (sw.get(a, b) - oracle[(a, b)]).abs()
                        <= 1e-8 * (oracle[(a, b)].abs() + 1e-6 * scale),
                    "entry ({a},{b}): {} vs {}",
                    sw.get(a, b),
                    oracle[(a, b)]
                );
            }
        }
        // HC1 is the same matrix scaled by n/(n-p).
        let hc1 = robust_sandwich(&s, &fit, "y", HcVariant::Hc1).unwrap();
        assert_abs_diff_eq!(
            hc1.get(0, 0),
            sw.get(0, 0) * n as f64 / (n - 3) as f64,
            epsilon = 1e-15
        );
    }

    #[test]
    fn sandwich_requires_higher_moments() {
        let mut rng = StdRng::seed_from_u64(13);
        let data = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
        let s = summarize_matrix("a", &data, &specs(&["y", "x"]), false).unwrap();
        let fit = fit_ols(&cross_products_from_summary(&s, "y").unwrap()).unwrap();
        assert!(matches!(
            robust_sandwich(&s, &fit, "y", HcVariant::Hc0),
            Err(Error::MissingHigherMoments)
        ));
    }

    #[test]
    fn sandwich_symmetric_and_psd() {
        let mut rng = StdRng::seed_from_u64(14);
        for seed in 0..5u64 {
            let n = 30 + (seed as usize) * 11;
            let mut data = DMatrix::zeros(n, 3);
            for i in 0..n {
                let x1 = rng.random_range(-1.0..1.0);
                let x2 = rng.random_range(-1.0..1.0);
                data[(i, 0)] = x1 - x2 + rng.random_range(-1.0..1.0) * (0.1 + x2 * x2);
                data[(i, 1)] = x1;
                data[(i, 2)] = x2;
            }
            let s = summarize_matrix("a", &data, &specs(&["y", "x1", "x2"]), true).unwrap();
            let fit = fit_ols(&cross_products_from_summary(&s, "y").unwrap()).unwrap();
            let sw = robust_sandwich(&s, &fit, "y", HcVariant::Hc0).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    assert_eq!(sw.get(a, b).to_bits(), sw.get(b, a).to_bits());
                }
            }
            let eig = numerics::sym_eigen(&sw).unwrap();
            assert!(eig.values.iter().all(|&v| v >= 0.0));
        }
    }
}
