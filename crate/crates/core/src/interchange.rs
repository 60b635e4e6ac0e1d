//! File formats: the summary interchange file, pseudo-data CSV export, raw
//! CSV ingestion, and fit reports.
//!
//! The summary file is JSON — a text format someone at the provider can read
//! line by line before anything leaves the premises. Floats are written in
//! shortest round-trip form, so serialize/parse is lossless for every finite
//! double and a parse/re-serialize cycle is byte-identical.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lmm::{FitMethod, LmmFit};
use crate::numerics::SymMatrix;
use crate::pseudogen::{GeneratorConfig, PseudoDataset};
use crate::regression::LinRegFit;
use crate::summaries::{
    ColumnData, ProviderSummary, RawColumn, RawTable, SymTensor3, SymTensor4, VariableKind,
    VariableSpec,
};

pub const FORMAT_VERSION: &str = "1";

/// Cell values treated as missing in CSV input.
const MISSING_MARKERS: [&str; 2] = ["", "NA"];

// ---------------------------------------------------------------------------
// Summary files
// ---------------------------------------------------------------------------

/// Parsed summary file: shared variable schema plus per-provider statistics.
#[derive(Debug, Clone)]
pub struct SummaryFile {
    pub variables: Vec<VariableSpec>,
    pub providers: Vec<ProviderSummary>,
}

#[derive(Serialize, Deserialize)]
struct SummaryFileRaw {
    format_version: String,
    variables: Vec<VariableSpec>,
    providers: Vec<ProviderRecordRaw>,
}

#[derive(Serialize, Deserialize)]
struct ProviderRecordRaw {
    provider_id: String,
    n: usize,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    moment3: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    moment4: Option<Vec<f64>>,
}

pub fn summaries_to_string(providers: &[ProviderSummary]) -> Result<String> {
    let variables = providers
        .first()
        .map(|s| s.variables.clone())
        .unwrap_or_default();
    for s in providers {
        if s.variables != variables {
            return Err(Error::SchemaMismatch(format!(
                "provider '{}' does not share the schema block",
                s.provider_id
            )));
        }
        s.validate()?;
    }
    let raw = SummaryFileRaw {
        format_version: FORMAT_VERSION.to_string(),
        variables,
        providers: providers
            .iter()
            .map(|s| {
                let p = s.p();
                ProviderRecordRaw {
                    provider_id: s.provider_id.clone(),
                    n: s.n,
                    mean: s.mean.iter().copied().collect(),
                    cov: (0..p)
                        .map(|i| (0..p).map(|j| s.cov.get(i, j)).collect())
                        .collect(),
                    moment3: s.moment3.as_ref().map(|t| t.packed().to_vec()),
                    moment4: s.moment4.as_ref().map(|t| t.packed().to_vec()),
                }
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&raw)? + "\n")
}

pub fn write_summaries(path: &Path, providers: &[ProviderSummary]) -> Result<()> {
    let text = summaries_to_string(providers)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_summaries_str(text: &str) -> Result<SummaryFile> {
    let raw: SummaryFileRaw = serde_json::from_str(text)?;
    if raw.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: raw.format_version,
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let p = raw.variables.len();
    let mut providers = Vec::with_capacity(raw.providers.len());
    for (i, rec) in raw.providers.into_iter().enumerate() {
        let at = |field: &str| format!("providers[{i}].{field}");
        if rec.mean.len() != p {
            return Err(Error::SchemaViolation {
                path: at("mean"),
                message: format!("length {} does not match {} schema variables", rec.mean.len(), p),
            });
        }
        if rec.cov.len() != p || rec.cov.iter().any(|r| r.len() != p) {
            return Err(Error::SchemaViolation {
                path: at("cov"),
                message: format!("expected a {p}x{p} matrix"),
            });
        }
        for a in 0..p {
            for b in a + 1..p {
                if rec.cov[a][b] != rec.cov[b][a] {
                    return Err(Error::SchemaViolation {
                        path: at(&format!("cov[{a}][{b}]")),
                        message: "matrix is not symmetric".to_string(),
                    });
                }
            }
        }
        let cov = SymMatrix::from_fn(p, |a, b| rec.cov[a][b]);
        let moment3 = rec
            .moment3
            .map(|v| SymTensor3::from_packed(p, v))
            .transpose()
            .map_err(|e| Error::SchemaViolation {
                path: at("moment3"),
                message: e.to_string(),
            })?;
        let moment4 = rec
            .moment4
            .map(|v| SymTensor4::from_packed(p, v))
            .transpose()
            .map_err(|e| Error::SchemaViolation {
                path: at("moment4"),
                message: e.to_string(),
            })?;
        let summary = ProviderSummary {
            provider_id: rec.provider_id,
            n: rec.n,
            variables: raw.variables.clone(),
            mean: DVector::from_vec(rec.mean),
            cov,
            moment3,
            moment4,
        };
        summary.validate()?;
        providers.push(summary);
    }
    Ok(SummaryFile {
        variables: raw.variables,
        providers,
    })
}

pub fn parse_summaries(path: &Path) -> Result<SummaryFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_summaries_str(&text)
}

/// Rounds every shipped statistic to `decimals` decimal places (sensitivity
/// studies for providers that refuse to share full-precision values).
pub fn round_summary(s: &ProviderSummary, decimals: u32) -> ProviderSummary {
    let f = 10f64.powi(decimals as i32);
    let r = |x: f64| (x * f).round() / f;
    let p = s.p();
    let mut out = s.clone();
    out.mean = s.mean.map(r);
    out.cov = SymMatrix::from_fn(p, |a, b| r(s.cov.get(a, b)));
    if let Some(m3) = &mut out.moment3 {
        for v in m3.packed_mut() {
            *v = r(*v);
        }
    }
    if let Some(m4) = &mut out.moment4 {
        for v in m4.packed_mut() {
            *v = r(*v);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell)
}

/// Reads a CSV with a header row into a typed [`RawTable`].
///
/// Columns listed in `specs` are validated/recoded: numeric specs must parse
/// as numbers, binary specs over categorical columns are recoded 0/1 and
/// renamed to `column + non-reference level`. Unlisted columns are typed by
/// inference (numeric when every non-missing cell parses) and kept for
/// metadata reporting.
pub fn ingest_csv(path: &Path, provider_col: &str, specs: &[VariableSpec]) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_csv_reader(file, provider_col, specs)
}

pub fn ingest_csv_reader(
    reader: impl Read,
    provider_col: &str,
    specs: &[VariableSpec],
) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ParseError {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let provider_idx = headers
        .iter()
        .position(|h| h == provider_col)
        .ok_or_else(|| Error::UnknownColumn(provider_col.to_string()))?;
    for spec in specs {
        if !headers.iter().any(|h| h == &spec.name) {
            return Err(Error::UnknownColumn(spec.name.clone()));
        }
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    let mut providers: Vec<String> = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::ParseError {
            row: row_idx + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::ParseError {
                row: row_idx + 1,
                column: String::new(),
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if c == provider_idx {
                if is_missing(cell) {
                    return Err(Error::ParseError {
                        row: row_idx + 1,
                        column: provider_col.to_string(),
                        message: "missing provider id".to_string(),
                    });
                }
                providers.push(cell.to_string());
            } else if cell == "NA" {
                cells[c].push(None);
            } else {
                cells[c].push(Some(cell.to_string()));
            }
        }
    }

    let mut columns = Vec::new();
    let mut variables = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == provider_idx {
            continue;
        }
        let raw = &cells[c];
        let spec = specs.iter().find(|s| &s.name == name);
        match spec {
            Some(s) if s.kind == VariableKind::Binary => {
                let (column, resolved) = recode_binary(name, raw, s)?;
                variables.push(resolved);
                columns.push(column);
            }
            Some(s) => {
                let data = parse_numeric_column(name, raw, true)?;
                variables.push(s.clone());
                columns.push(RawColumn {
                    name: name.clone(),
                    data: ColumnData::Numeric(data),
                });
            }
            None => {
                // Untyped column: numeric if everything parses, text otherwise.
                match parse_numeric_column(name, raw, false) {
                    Ok(data) => columns.push(RawColumn {
                        name: name.clone(),
                        data: ColumnData::Numeric(data),
                    }),
                    Err(_) => columns.push(RawColumn {
                        name: name.clone(),
                        data: ColumnData::Text(raw.clone()),
                    }),
                }
            }
        }
    }
    Ok(RawTable {
        provider_col: provider_col.to_string(),
        providers,
        columns,
        variables,
    })
}

fn parse_numeric_column(
    name: &str,
    raw: &[Option<String>],
    _declared: bool,
) -> Result<Vec<Option<f64>>> {
    raw.iter()
        .enumerate()
        .map(|(i, cell)| match cell.as_deref() {
            None => Ok(None),
            Some(c) if is_missing(c) => Ok(None),
            Some(c) => c.parse::<f64>().map(Some).map_err(|_| Error::ParseError {
                row: i + 1,
                column: name.to_string(),
                message: format!("not a number: '{c}'"),
            }),
        })
        .collect()
}

/// Recodes a declared binary column to 0/1. Text columns with two levels get
/// renamed to `column + non-reference level` (the name says what 1 means);
/// already-numeric 0/1 columns keep their name.
fn recode_binary(
    name: &str,
    raw: &[Option<String>],
    spec: &VariableSpec,
) -> Result<(RawColumn, VariableSpec)> {
    // Numeric 0/1 column?
    let all_numeric = raw
        .iter()
        .all(|c| match c.as_deref() {
            None => true,
            Some(v) => is_missing(v) || v.parse::<f64>().is_ok(),
        });
    if all_numeric {
        let data = parse_numeric_column(name, raw, true)?;
        for (i, v) in data.iter().enumerate() {
            if let Some(v) = v {
                if *v != 0.0 && *v != 1.0 {
                    return Err(Error::ParseError {
                        row: i + 1,
                        column: name.to_string(),
                        message: format!("binary column has value {v}, expected 0 or 1"),
                    });
                }
            }
        }
        let mut resolved = spec.clone();
        resolved.reference_level.get_or_insert_with(|| "0".to_string());
        return Ok((
            RawColumn {
                name: name.to_string(),
                data: ColumnData::Numeric(data),
            },
            resolved,
        ));
    }
    // Categorical column: find the two levels.
    let mut levels: Vec<String> = raw
        .iter()
        .filter_map(|c| c.as_deref())
        .filter(|c| !is_missing(c))
        .map(String::from)
        .collect();
    levels.sort();
    levels.dedup();
    if levels.len() != 2 {
        return Err(Error::SchemaMismatch(format!(
            "binary column '{name}' has {} level(s) {:?}, expected exactly 2",
            levels.len(),
            levels
        )));
    }
    let reference = match &spec.reference_level {
        Some(r) => {
            if !levels.contains(r) {
                return Err(Error::SchemaMismatch(format!(
                    "reference level '{r}' not found in column '{name}' (levels {levels:?})"
                )));
            }
            r.clone()
        }
        None => levels[0].clone(),
    };
    let positive = levels.into_iter().find(|l| l != &reference).expect("two levels");
    let data: Vec<Option<f64>> = raw
        .iter()
        .map(|c| match c.as_deref() {
            None => None,
            Some(v) if is_missing(v) => None,
            Some(v) => Some(if v == positive { 1.0 } else { 0.0 }),
        })
        .collect();
    let new_name = format!("{name}{positive}");
    let mut resolved = spec.clone();
    resolved.name = new_name.clone();
    resolved.reference_level = Some(reference);
    Ok((
        RawColumn {
            name: new_name,
            data: ColumnData::Numeric(data),
        },
        resolved,
    ))
}

// ---------------------------------------------------------------------------
// Pseudo-data export
// ---------------------------------------------------------------------------

/// Replaces path-hostile characters so a provider id can name a file.
pub fn sanitize_filename(id: &str) -> String {
    id.chars()
        .map(|c| match c {
            '/' | '\\' | '\0' | ':' => '_',
            other => other,
        })
        .collect()
}

/// Writes one dataset as CSV (`provider_id` column first, then variables),
/// floats in shortest round-trip form so re-ingestion reproduces moments.
pub fn export_pseudo_csv(ds: &PseudoDataset, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::ParseError {
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    })?;
    let mut header = vec!["provider_id".to_string()];
    header.extend(ds.column_names());
    let io_err = |e: csv::Error| Error::ParseError {
        row: 0,
        column: String::new(),
        message: e.to_string(),
    };
    wtr.write_record(&header).map_err(io_err)?;
    for i in 0..ds.data.nrows() {
        let mut row = vec![ds.provider_id.clone()];
        for j in 0..ds.data.ncols() {
            row.push(format!("{}", ds.data[(i, j)]));
        }
        wtr.write_record(&row).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One CSV per provider under `dir`, named `<provider_id>.csv`.
pub fn export_pseudo_dir(
    datasets: &[PseudoDataset],
    dir: &Path,
) -> Result<Vec<(String, PathBuf)>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let file = dir.join(format!("{}.csv", sanitize_filename(&ds.provider_id)));
        export_pseudo_csv(ds, &file)?;
        written.push((ds.provider_id.clone(), file));
    }
    Ok(written)
}

/// Provenance manifest written next to exported pseudo-data.
#[derive(Debug, Serialize, Deserialize)]
pub struct PseudoManifest {
    pub format_version: String,
    pub generator: GeneratorConfig,
    pub created_at: String,
    pub input: Option<InputDigest>,
    pub providers: Vec<PseudoManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PseudoManifestEntry {
    pub provider_id: String,
    pub file: String,
    pub n: usize,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Fit reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub format_version: String,
    pub model: ModelEcho,
    pub n_total: usize,
    pub n_providers: usize,
    pub k_params: Option<usize>,
    pub coefficients: Vec<CoefRow>,
    /// Residual variance: OLS `sigma2_ols` (when defined) or the LMM `sigma2`.
    pub sigma2: Option<f64>,
    pub sigma2_mle: Option<f64>,
    pub random: Option<RandomBlock>,
    pub criterion: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub blups: Option<Vec<BlupRow>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEcho {
    pub kind: String,
    pub response: String,
    pub fixed: Vec<String>,
    pub random_intercept: bool,
    pub random_slopes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<FitMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomBlock {
    pub terms: Vec<String>,
    pub g: Vec<Vec<f64>>,
    pub sd: Vec<f64>,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlupRow {
    pub provider_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub created_at: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub generator: Option<GeneratorConfig>,
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn provenance_now(
    seed: Option<u64>,
    generator: Option<GeneratorConfig>,
    inputs: Vec<InputDigest>,
) -> Provenance {
    Provenance {
        created_at: now_rfc3339(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        generator,
        inputs,
    }
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl FitReport {
    pub fn from_lmm(fit: &LmmFit, provenance: Provenance) -> Self {
        let coefficients = fit
            .fixed_names
            .iter()
            .enumerate()
            .map(|(j, name)| CoefRow {
                name: name.clone(),
                estimate: fit.params.beta[j],
                se: Some(fit.se_beta[j]),
                z: Some(fit.params.beta[j] / fit.se_beta[j]),
                ci_lo: Some(fit.wald_ci[j].0),
                ci_hi: Some(fit.wald_ci[j].1),
                robust_se: None,
            })
            .collect();
        let q = fit.params.q();
        let random = Some(RandomBlock {
            terms: fit.random.term_names(),
            g: (0..q)
                .map(|i| (0..q).map(|j| fit.params.g.get(i, j)).collect())
                .collect(),
            sd: fit.random_sd(),
            correlation: fit.random_correlation(),
        });
        FitReport {
            format_version: FORMAT_VERSION.to_string(),
            model: ModelEcho {
                kind: "lmm".to_string(),
                response: fit.response.clone(),
                fixed: fit.fixed_names[1..].to_vec(),
                random_intercept: fit.random.intercept,
                random_slopes: fit.random.slopes.clone(),
                method: Some(fit.method),
            },
            n_total: fit.n_total,
            n_providers: fit.n_providers,
            k_params: Some(fit.k_params),
            coefficients,
            sigma2: Some(fit.params.sigma2),
            sigma2_mle: None,
            random,
            criterion: Some(fit.criterion),
            aic: Some(fit.aic),
            bic: Some(fit.bic),
            converged: Some(fit.converged),
            iterations: Some(fit.iterations),
            blups: Some(
                fit.blups
                    .iter()
                    .map(|(pid, u)| BlupRow {
                        provider_id: pid.clone(),
                        values: u.iter().copied().collect(),
                    })
                    .collect(),
            ),
            provenance,
        }
    }

    pub fn from_ols(
        fit: &LinRegFit,
        response: &str,
        n_providers: usize,
        provenance: Provenance,
    ) -> Self {
        let se = fit.se_beta();
        let robust = fit.robust_se();
        let coefficients = fit
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let sej = se.as_ref().map(|s| s[j]);
                CoefRow {
                    name: name.clone(),
                    estimate: fit.beta[j],
                    se: sej,
                    z: sej.map(|s| fit.beta[j] / s),
                    ci_lo: sej.map(|s| fit.beta[j] - 1.96 * s),
                    ci_hi: sej.map(|s| fit.beta[j] + 1.96 * s),
                    robust_se: robust.as_ref().map(|r| r[j]),
                }
            })
            .collect();
        FitReport {
            format_version: FORMAT_VERSION.to_string(),
            model: ModelEcho {
                kind: "ols".to_string(),
                response: response.to_string(),
                fixed: fit.names[1..].to_vec(),
                random_intercept: false,
                random_slopes: Vec::new(),
                method: None,
            },
            n_total: fit.n,
            n_providers,
            k_params: Some(fit.p() + 1),
            coefficients,
            sigma2: fit.sigma2_ols,
            sigma2_mle: Some(fit.sigma2_mle),
            random: None,
            criterion: None,
            aic: None,
            bic: None,
            converged: None,
            iterations: None,
            blups: None,
            provenance,
        }
    }

    pub fn to_string_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_pretty()?).map_err(|e| Error::io(path, e))
    }

    pub fn parse(path: &Path) -> Result<FitReport> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: FitReport = serde_json::from_str(&text)?;
        if report.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: report.format_version,
                expected: FORMAT_VERSION.to_string(),
            });
        }
        Ok(report)
    }

    /// Human-readable coefficient table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let method = self
            .model
            .method
            .map(|m| match m {
                FitMethod::Ml => " (ml)",
                FitMethod::Reml => " (reml)",
            })
            .unwrap_or("");
        out.push_str(&format!(
            "model: {}{}   response: {}\nn = {}, providers = {}\n",
            self.model.kind, method, self.model.response, self.n_total, self.n_providers
        ));
        let name_w = self
            .coefficients
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        out.push_str(&format!(
            "{:name_w$}  {:>12}  {:>10}  {:>8}  {:>12}  {:>12}\n",
            "term", "estimate", "se", "z", "ci 2.5%", "ci 97.5%"
        ));
        for c in &self.coefficients {
            let fmt_opt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.4}"),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{:name_w$}  {:>12.4}  {:>10}  {:>8}  {:>12}  {:>12}\n",
                c.name,
                c.estimate,
                fmt_opt(c.se),
                match c.z {
                    Some(z) => format!("{z:.2}"),
                    None => "-".to_string(),
                },
                fmt_opt(c.ci_lo),
                fmt_opt(c.ci_hi)
            ));
        }
        if self.coefficients.iter().any(|c| c.robust_se.is_some()) {
            out.push_str("robust se:");
            for c in &self.coefficients {
                if let Some(r) = c.robust_se {
                    out.push_str(&format!(" {}={:.4}", c.name, r));
                }
            }
            out.push('\n');
        }
        if let Some(rb) = &self.random {
            for (term, sd) in rb.terms.iter().zip(&rb.sd) {
                out.push_str(&format!("sd({term}) = {sd:.4}\n"));
            }
            if let Some(c) = rb.correlation {
                out.push_str(&format!("corr = {c:.2}\n"));
            }
        }
        if let Some(s2) = self.sigma2 {
            out.push_str(&format!("sigma = {:.4} (sigma^2 = {:.6})\n", s2.sqrt(), s2));
        }
        if let (Some(crit), Some(aic), Some(bic)) = (self.criterion, self.aic, self.bic) {
            out.push_str(&format!(
                "criterion = {crit:.2}  AIC = {aic:.2}  BIC = {bic:.2}\n"
            ));
        }
        if let Some(false) = self.converged {
            out.push_str("WARNING: optimizer did not converge; best point reported\n");
        }
        out
    }
}

/// Pseudo-data re-ingestion: every exported file is a regular CSV with a
/// `provider_id` column, so this is just [`ingest_csv`] with numeric specs.
pub fn ingest_pseudo_csv(path: &Path, variables: &[String]) -> Result<RawTable> {
    let specs: Vec<VariableSpec> = variables
        .iter()
        .map(|v| VariableSpec::numeric(v.clone()))
        .collect();
    ingest_csv(path, "provider_id", &specs)
}
