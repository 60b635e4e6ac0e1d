//! Python bindings: provider summaries, moment-exact pseudo-data, and the
//! OLS / linear-mixed-model fits, so the one-shot workflow can be driven from
//! Python (`import fedlmm_py`).

use fedlmm::interchange;
use fedlmm::lmm::{self, FitMethod, ModelSpec, ProviderData, RandomEffects};
use fedlmm::pseudogen::{self, GenMethod, GeneratorConfig, SourceDistribution};
use fedlmm::regression::{self, HcVariant};
use fedlmm::summaries::{pool_summaries, summarize_matrix, ProviderSummary, VariableSpec};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: fedlmm::Error) -> PyErr {
    match e.exit_code() {
        3 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || p == 0 {
        return Err(PyValueError::new_err("rows must be a non-empty rectangle"));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn parse_dist(s: &str) -> PyResult<SourceDistribution> {
    match s {
        "normal" => Ok(SourceDistribution::StandardNormal),
        "uniform" => Ok(SourceDistribution::UniformUnit),
        other => Err(PyValueError::new_err(format!(
            "unknown dist '{other}' (normal|uniform)"
        ))),
    }
}

fn parse_method(s: &str) -> PyResult<GenMethod> {
    match s {
        "auto" => Ok(GenMethod::Auto),
        "cholesky" => Ok(GenMethod::Cholesky),
        "eigen" => Ok(GenMethod::EigenSvd),
        other => Err(PyValueError::new_err(format!(
            "unknown method '{other}' (auto|cholesky|eigen)"
        ))),
    }
}

fn parse_fit_method(s: &str) -> PyResult<FitMethod> {
    match s {
        "reml" => Ok(FitMethod::Reml),
        "ml" => Ok(FitMethod::Ml),
        other => Err(PyValueError::new_err(format!(
            "unknown method '{other}' (reml|ml)"
        ))),
    }
}

/// One provider's shareable statistics: n, mean vector, covariance matrix,
/// optionally joint third/fourth central moments.
#[pyclass(name = "Summary", from_py_object)]
#[derive(Clone)]
struct PySummary {
    inner: ProviderSummary,
}

#[pymethods]
impl PySummary {
    /// Summarize raw rows (columns ordered as `names`).
    #[staticmethod]
    #[pyo3(signature = (provider_id, names, rows, with_higher_moments = false))]
    fn from_rows(
        provider_id: &str,
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
        with_higher_moments: bool,
    ) -> PyResult<Self> {
        let data = rows_to_matrix(&rows)?;
        if names.len() != data.ncols() {
            return Err(PyValueError::new_err("names must match the column count"));
        }
        let specs: Vec<VariableSpec> = names.into_iter().map(VariableSpec::numeric).collect();
        let inner =
            summarize_matrix(provider_id, &data, &specs, with_higher_moments).map_err(err)?;
        Ok(PySummary { inner })
    }

    #[getter]
    fn provider_id(&self) -> String {
        self.inner.provider_id.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.inner.variable_names()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        let p = self.inner.p();
        (0..p)
            .map(|i| (0..p).map(|j| self.inner.cov.get(i, j)).collect())
            .collect()
    }

    #[getter]
    fn has_higher_moments(&self) -> bool {
        self.inner.has_higher_moments()
    }

    fn __repr__(&self) -> String {
        format!(
            "Summary(provider_id='{}', n={}, p={})",
            self.inner.provider_id,
            self.inner.n,
            self.inner.p()
        )
    }
}

/// Serialize summaries to the interchange JSON format.
#[pyfunction]
fn summaries_to_json(summaries: Vec<PySummary>) -> PyResult<String> {
    let inner: Vec<ProviderSummary> = summaries.into_iter().map(|s| s.inner).collect();
    interchange::summaries_to_string(&inner).map_err(err)
}

/// Parse summaries from the interchange JSON format.
#[pyfunction]
fn summaries_from_json(text: &str) -> PyResult<Vec<PySummary>> {
    let file = interchange::parse_summaries_str(text).map_err(err)?;
    Ok(file
        .providers
        .into_iter()
        .map(|inner| PySummary { inner })
        .collect())
}

/// Pool provider summaries into the summary of the concatenated data.
#[pyfunction]
fn pool(summaries: Vec<PySummary>) -> PyResult<PySummary> {
    let inner: Vec<ProviderSummary> = summaries.into_iter().map(|s| s.inner).collect();
    Ok(PySummary {
        inner: pool_summaries(&inner).map_err(err)?,
    })
}

/// Generate a moment-exact pseudo-dataset for one summary.
///
/// Returns `(column_names, rows, warnings)`.
#[pyfunction]
#[pyo3(signature = (summary, seed = 42, dist = "normal", method = "auto"))]
fn generate_pseudo(
    summary: &PySummary,
    seed: u64,
    dist: &str,
    method: &str,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<String>)> {
    let config = GeneratorConfig {
        seed,
        source_distribution: parse_dist(dist)?,
        method: parse_method(method)?,
    };
    let ds = pseudogen::generate(&summary.inner, &config).map_err(err)?;
    let rows: Vec<Vec<f64>> = (0..ds.data.nrows())
        .map(|i| (0..ds.data.ncols()).map(|j| ds.data[(i, j)]).collect())
        .collect();
    let warnings = ds.warnings.iter().map(|w| w.to_string()).collect();
    Ok((ds.column_names(), rows, warnings))
}

/// Linear-regression fit computed from summaries alone.
#[pyclass(name = "OlsFit")]
struct PyOlsFit {
    #[pyo3(get)]
    names: Vec<String>,
    #[pyo3(get)]
    beta: Vec<f64>,
    #[pyo3(get)]
    se: Option<Vec<f64>>,
    #[pyo3(get)]
    robust_se: Option<Vec<f64>>,
    #[pyo3(get)]
    sigma2_mle: f64,
    #[pyo3(get)]
    sigma2_ols: Option<f64>,
    #[pyo3(get)]
    n: usize,
}

/// OLS of `response` on the remaining (or listed) variables, pooled across
/// providers via cross products. Robust (HC0) standard errors are attached
/// when every summary ships third/fourth moments.
#[pyfunction]
#[pyo3(signature = (summaries, response, fixed = None))]
fn fit_ols(
    summaries: Vec<PySummary>,
    response: &str,
    fixed: Option<Vec<String>>,
) -> PyResult<PyOlsFit> {
    let inner: Vec<ProviderSummary> = summaries.into_iter().map(|s| s.inner).collect();
    if inner.is_empty() {
        return Err(PyValueError::new_err("no summaries supplied"));
    }
    let fixed = fixed.unwrap_or_else(|| {
        inner[0]
            .variable_names()
            .into_iter()
            .filter(|v| v != response)
            .collect()
    });
    let cps: Vec<_> = inner
        .iter()
        .map(|s| regression::cross_products_for_model(s, response, &fixed))
        .collect::<fedlmm::Result<_>>()
        .map_err(err)?;
    let pooled_cp = regression::pool_cross_products(&cps).map_err(err)?;
    let mut fit = regression::fit_ols(&pooled_cp).map_err(err)?;
    if inner.iter().all(|s| s.has_higher_moments()) {
        let mut vars = vec![response.to_string()];
        vars.extend(fixed.iter().cloned());
        let selected: Vec<_> = inner
            .iter()
            .map(|s| s.select(&vars))
            .collect::<fedlmm::Result<_>>()
            .map_err(err)?;
        let pooled = pool_summaries(&selected).map_err(err)?;
        fit.robust_cov =
            Some(regression::robust_sandwich(&pooled, &fit, response, HcVariant::Hc0).map_err(err)?);
    }
    Ok(PyOlsFit {
        names: fit.names.clone(),
        beta: fit.beta.iter().copied().collect(),
        se: fit.se_beta().map(|v| v.iter().copied().collect()),
        robust_se: fit.robust_se().map(|v| v.iter().copied().collect()),
        sigma2_mle: fit.sigma2_mle,
        sigma2_ols: fit.sigma2_ols,
        n: fit.n,
    })
}

/// Linear mixed model fit.
#[pyclass(name = "LmmFit")]
struct PyLmmFit {
    #[pyo3(get)]
    fixed_names: Vec<String>,
    #[pyo3(get)]
    beta: Vec<f64>,
    #[pyo3(get)]
    se: Vec<f64>,
    #[pyo3(get)]
    sigma2: f64,
    #[pyo3(get)]
    g: Vec<Vec<f64>>,
    #[pyo3(get)]
    criterion: f64,
    #[pyo3(get)]
    aic: f64,
    #[pyo3(get)]
    bic: f64,
    #[pyo3(get)]
    blups: Vec<(String, Vec<f64>)>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    n_total: usize,
    #[pyo3(get)]
    n_providers: usize,
}

impl PyLmmFit {
    fn from_fit(fit: &lmm::LmmFit) -> Self {
        let q = fit.params.q();
        PyLmmFit {
            fixed_names: fit.fixed_names.clone(),
            beta: fit.params.beta.iter().copied().collect(),
            se: fit.se_beta.iter().copied().collect(),
            sigma2: fit.params.sigma2,
            g: (0..q)
                .map(|i| (0..q).map(|j| fit.params.g.get(i, j)).collect())
                .collect(),
            criterion: fit.criterion,
            aic: fit.aic,
            bic: fit.bic,
            blups: fit
                .blups
                .iter()
                .map(|(pid, u)| (pid.clone(), u.iter().copied().collect()))
                .collect(),
            converged: fit.converged,
            n_total: fit.n_total,
            n_providers: fit.n_providers,
        }
    }
}

fn build_spec(
    response: &str,
    fixed: Option<Vec<String>>,
    all_vars: &[String],
    random_intercept: bool,
    random_slopes: Vec<String>,
    method: &str,
) -> PyResult<ModelSpec> {
    let fixed = fixed.unwrap_or_else(|| {
        all_vars
            .iter()
            .filter(|v| v.as_str() != response)
            .cloned()
            .collect()
    });
    Ok(ModelSpec {
        response: response.to_string(),
        fixed,
        random: RandomEffects {
            intercept: random_intercept,
            slopes: random_slopes,
        },
        method: parse_fit_method(method)?,
    })
}

/// Fit a mixed model on per-provider raw (or pseudo) rows:
/// `datasets = [(provider_id, column_names, rows), ...]`.
#[pyfunction]
#[pyo3(signature = (datasets, response, fixed = None, random_intercept = true, random_slopes = vec![], method = "reml"))]
fn fit_lmm(
    datasets: Vec<(String, Vec<String>, Vec<Vec<f64>>)>,
    response: &str,
    fixed: Option<Vec<String>>,
    random_intercept: bool,
    random_slopes: Vec<String>,
    method: &str,
) -> PyResult<PyLmmFit> {
    let all_vars = datasets
        .first()
        .map(|(_, names, _)| names.clone())
        .ok_or_else(|| PyValueError::new_err("no datasets supplied"))?;
    let spec = build_spec(
        response,
        fixed,
        &all_vars,
        random_intercept,
        random_slopes,
        method,
    )?;
    let providers: Vec<ProviderData> = datasets
        .iter()
        .map(|(pid, names, rows)| {
            let data = rows_to_matrix(rows)?;
            lmm::provider_data_from_columns(pid, names, &data, &spec).map_err(err)
        })
        .collect::<PyResult<_>>()?;
    let fit = lmm::fit(&spec, &providers).map_err(err)?;
    Ok(PyLmmFit::from_fit(&fit))
}

/// The one-shot workflow in a single call: generate pseudo-data from the
/// summaries, then fit the mixed model on it.
#[pyfunction]
#[pyo3(signature = (summaries, response, fixed = None, random_intercept = true, random_slopes = vec![], method = "reml", seed = 42, dist = "normal"))]
#[allow(clippy::too_many_arguments)]
fn fit_lmm_from_summaries(
    summaries: Vec<PySummary>,
    response: &str,
    fixed: Option<Vec<String>>,
    random_intercept: bool,
    random_slopes: Vec<String>,
    method: &str,
    seed: u64,
    dist: &str,
) -> PyResult<PyLmmFit> {
    let inner: Vec<ProviderSummary> = summaries.into_iter().map(|s| s.inner).collect();
    let all_vars = inner
        .first()
        .map(|s| s.variable_names())
        .ok_or_else(|| PyValueError::new_err("no summaries supplied"))?;
    let spec = build_spec(
        response,
        fixed,
        &all_vars,
        random_intercept,
        random_slopes,
        method,
    )?;
    let config = GeneratorConfig {
        seed,
        source_distribution: parse_dist(dist)?,
        method: GenMethod::Auto,
    };
    let datasets = pseudogen::generate_all(&inner, &config).map_err(err)?;
    let providers = lmm::providers_from_pseudo(&datasets, &spec).map_err(err)?;
    let fit = lmm::fit(&spec, &providers).map_err(err)?;
    Ok(PyLmmFit::from_fit(&fit))
}

#[pymodule]
fn fedlmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySummary>()?;
    m.add_class::<PyOlsFit>()?;
    m.add_class::<PyLmmFit>()?;
    m.add_function(wrap_pyfunction!(summaries_to_json, m)?)?;
    m.add_function(wrap_pyfunction!(summaries_from_json, m)?)?;
    m.add_function(wrap_pyfunction!(pool, m)?)?;
    m.add_function(wrap_pyfunction!(generate_pseudo, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lmm, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lmm_from_summaries, m)?)?;
    Ok(())
}
