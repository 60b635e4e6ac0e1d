//! Federated linear and linear mixed models from one-shot summary statistics.
//!
//! Data providers share `{n, mean vector, covariance matrix}` (optionally
//! joint third/fourth central moments) exactly once. From those summaries an
//! analyst can:
//!
//! - reconstruct the regression cross products `X'X`, `X'y`, `y'y` and fit
//!   OLS with estimates identical to a pooled raw-data fit
//!   ([`regression`]), including a heteroscedasticity-robust sandwich
//!   covariance when the higher moments are present;
//! - generate *moment-exact* pseudo-data — synthetic rows whose sample mean
//!   and covariance equal the provider's summary to rounding
//!   ([`pseudogen`]) — and feed them to any mixed-model routine;
//! - fit linear mixed models with a random intercept and/or slopes per
//!   provider by ML or REML ([`lmm`]); because the marginal likelihood
//!   depends on the data only through per-provider cross products, fits on
//!   pseudo-data reproduce raw-data fits to optimizer precision.
//!
//! [`summaries`] holds the provider-side pipeline (metadata report,
//! complete-case filtering, variable transforms, summarization, pooling),
//! [`interchange`] the file formats, and [`cli`] the `fedlmm` command-line
//! front end wiring `summarize -> pseudo -> fit -> compare`.

pub mod cli;
pub mod error;
pub mod interchange;
pub mod lmm;
pub mod numerics;
pub mod pseudogen;
pub mod regression;
pub mod summaries;

pub use error::{Error, Result};
pub use lmm::{FitMethod, LmmFit, LmmParams, ModelSpec, ProviderData, RandomEffects};
pub use numerics::{CholeskyFactor, EigenPair, SvdResult, SymMatrix};
pub use pseudogen::{GenMethod, GeneratorConfig, PseudoDataset, SourceDistribution};
pub use regression::{CrossProducts, HcVariant, LinRegFit};
pub use summaries::{MetadataReport, ProviderSummary, RawTable, VariableSpec};
