//! Shared helpers for the integration suites: federated data simulation and
//! the raw -> summary -> pseudo-data plumbing used by the equivalence checks.
#![allow(dead_code)] // each test binary uses its own subset

use fedlmm::lmm::{self, FitMethod, ModelSpec, ProviderData, RandomEffects};
use fedlmm::pseudogen::{self, GeneratorConfig};
use fedlmm::summaries::{summarize_matrix, ProviderSummary, VariableSpec};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_distr::{Distribution, StandardNormal};

/// Predictor variable names `x1..xk`.
pub fn predictor_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("x{j}")).collect()
}

pub fn model_spec(k: usize, random: RandomEffects, method: FitMethod) -> ModelSpec {
    ModelSpec {
        response: "y".into(),
        fixed: predictor_names(k),
        random,
        method,
    }
}

/// Simulates `m` providers from a mixed model with `k` predictors, a random
/// intercept and (optionally) a random slope on `x1`.
pub struct SimTruth {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub g: DMatrix<f64>,
}

pub fn simulate_federated(
    m: usize,
    n_lo: usize,
    n_hi: usize,
    k: usize,
    q: usize,
    seed: u64,
) -> (Vec<ProviderData>, SimTruth) {
    assert!(q == 1 || q == 2);
    let mut rng = StdRng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.5..1.5)).collect();
    let sigma: f64 = rng.random_range(0.4..1.2);
    let g = if q == 1 {
        DMatrix::from_row_slice(1, 1, &[rng.random_range(0.05..0.6)])
    } else {
        let a: f64 = rng.random_range(0.1..0.7);
        let b: f64 = rng.random_range(0.05..0.5);
        let c: f64 = rng.random_range(-0.6..0.6);
        let cov = c * (a * b).sqrt();
        DMatrix::from_row_slice(2, 2, &[a, cov, cov, b])
    };
    let g_l = g.clone().cholesky().expect("simulated G is PD").l();
    let providers = (0..m)
        .map(|h| {
            let n = rng.random_range(n_lo..=n_hi);
            let draw = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
            let u = &g_l * draw;
            let mut x = DMatrix::zeros(n, k + 1);
            let mut y = DVector::zeros(n);
            for i in 0..n {
                x[(i, 0)] = 1.0;
                for j in 1..=k {
                    x[(i, j)] = rng.random_range(-1.5..1.5);
                }
                let mut mean = 0.0;
                for j in 0..=k {
                    mean += x[(i, j)] * beta[j];
                }
                let mut re = u[0];
                if q == 2 {
                    re += u[1] * x[(i, 1)];
                }
                let eps: f64 = StandardNormal.sample(&mut rng);
                y[i] = mean + re + sigma * eps;
            }
            ProviderData {
                provider_id: format!("prov{h:02}"),
                x,
                y,
            }
        })
        .collect();
    (providers, SimTruth { beta, sigma, g })
}

/// The `[y, x1..xk]` variable matrix a provider would actually summarize.
pub fn vars_matrix(pd: &ProviderData) -> DMatrix<f64> {
    let n = pd.x.nrows();
    let k = pd.x.ncols() - 1;
    let mut m = DMatrix::zeros(n, k + 1);
    for i in 0..n {
        m[(i, 0)] = pd.y[i];
        for j in 0..k {
            m[(i, j + 1)] = pd.x[(i, j + 1)];
        }
    }
    m
}

pub fn var_specs(k: usize) -> Vec<VariableSpec> {
    let mut specs = vec![VariableSpec::numeric("y")];
    for name in predictor_names(k) {
        specs.push(VariableSpec::numeric(name));
    }
    specs
}

pub fn summarize_raw_providers(
    providers: &[ProviderData],
    with_higher: bool,
) -> Vec<ProviderSummary> {
    let k = providers[0].x.ncols() - 1;
    let specs = var_specs(k);
    providers
        .iter()
        .map(|pd| summarize_matrix(&pd.provider_id, &vars_matrix(pd), &specs, with_higher).unwrap())
        .collect()
}

/// Raw providers -> per-provider summaries -> pseudo-data -> model providers.
pub fn pseudo_providers(
    providers: &[ProviderData],
    spec: &ModelSpec,
    config: &GeneratorConfig,
) -> Vec<ProviderData> {
    let sums = summarize_raw_providers(providers, false);
    let datasets = pseudogen::generate_all(&sums, config).expect("generation succeeds");
    lmm::providers_from_pseudo(&datasets, spec).expect("pseudo providers build")
}
