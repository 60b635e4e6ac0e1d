//! Provider-side extraction of shareable statistics and analyst-side pooling.
//!
//! A provider turns its raw table into a [`ProviderSummary`]: row count, the
//! per-variable means, the covariance matrix (denominator `n - 1`), and
//! optionally the third and fourth joint central moments (denominator `n`).
//! Those summaries are the only thing that ever leaves the provider; every
//! downstream fit works from them. Pooling recombines provider summaries into
//! the summary of the concatenated data via the within/between decomposition.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Provider id used for pooled summaries.
pub const POOLED_PROVIDER_ID: &str = "__pooled__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Numeric,
    Binary,
}

/// How a summary variable was derived from raw columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    Raw,
    Log { base: String },
    Square { base: String },
    Standardized { base: String, center: f64, scale: f64 },
    Interaction { a: String, b: String },
}

/// One shareable variable: name, type, and provenance of its values.
///
/// Binary variables are encoded 0/1 with the non-reference level mapped to 1;
/// when the raw column is categorical, ingestion renames the variable to
/// `column + level` (for example `gender` with reference `female` becomes
/// `gendermale`) so the name itself shows what 1 means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_level: Option<String>,
    pub derivation: Derivation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl VariableSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Numeric,
            reference_level: None,
            derivation: Derivation::Raw,
            description: None,
        }
    }

    pub fn binary(name: impl Into<String>, reference_level: Option<String>) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Binary,
            reference_level,
            derivation: Derivation::Raw,
            description: None,
        }
    }

    pub fn derived(name: impl Into<String>, derivation: Derivation) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Numeric,
            reference_level: None,
            derivation,
            description: None,
        }
    }
}

/// Symmetric 3-index tensor of joint central moments, stored packed over
/// sorted index triples.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    p: usize,
    packed: Vec<f64>,
    index: Vec<u32>,
}

/// Symmetric 4-index tensor of joint central moments, stored packed over
/// sorted index quadruples.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor4 {
    p: usize,
    packed: Vec<f64>,
    index: Vec<u32>,
}

impl SymTensor3 {
    pub fn packed_len(p: usize) -> usize {
        p * (p + 1) * (p + 2) / 6
    }

    fn build_index(p: usize) -> Vec<u32> {
        let mut index = vec![0u32; p * p * p];
        let mut next = 0u32;
        for a in 0..p {
            for b in a..p {
                for c in b..p {
                    index[(a * p + b) * p + c] = next;
                    next += 1;
                }
            }
        }
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    let mut s = [i, j, k];
                    s.sort_unstable();
                    index[(i * p + j) * p + k] = index[(s[0] * p + s[1]) * p + s[2]];
                }
            }
        }
        index
    }

    pub fn zeros(p: usize) -> Self {
        SymTensor3 {
            p,
            packed: vec![0.0; Self::packed_len(p)],
            index: Self::build_index(p),
        }
    }

    pub fn from_packed(p: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != Self::packed_len(p) {
            return Err(Error::SchemaMismatch(format!(
                "third-moment tensor for p={p} needs {} packed entries, got {}",
                Self::packed_len(p),
                packed.len()
            )));
        }
        Ok(SymTensor3 {
            p,
            packed,
            index: Self::build_index(p),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.packed[self.index[(a * self.p + b) * self.p + c] as usize]
    }

    /// Mutable packed entries in lexicographic sorted-triple order, matching
    /// the iteration `for a { for b in a.. { for c in b.. } } }`.
    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.packed
    }
}

impl SymTensor4 {
    pub fn packed_len(p: usize) -> usize {
        p * (p + 1) * (p + 2) * (p + 3) / 24
    }

    fn build_index(p: usize) -> Vec<u32> {
        let mut index = vec![0u32; p * p * p * p];
        let mut next = 0u32;
        for a in 0..p {
            for b in a..p {
                for c in b..p {
                    for d in c..p {
                        index[((a * p + b) * p + c) * p + d] = next;
                        next += 1;
                    }
                }
            }
        }
        for i in 0..p {
            for j in 0..p {
                for k in 0..p {
                    for l in 0..p {
                        let mut s = [i, j, k, l];
                        s.sort_unstable();
                        index[((i * p + j) * p + k) * p + l] =
                            index[((s[0] * p + s[1]) * p + s[2]) * p + s[3]];
                    }
                }
            }
        }
        index
    }

    pub fn zeros(p: usize) -> Self {
        SymTensor4 {
            p,
            packed: vec![0.0; Self::packed_len(p)],
            index: Self::build_index(p),
        }
    }

    pub fn from_packed(p: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != Self::packed_len(p) {
            return Err(Error::SchemaMismatch(format!(
                "fourth-moment tensor for p={p} needs {} packed entries, got {}",
                Self::packed_len(p),
                packed.len()
            )));
        }
        Ok(SymTensor4 {
            p,
            packed,
            index: Self::build_index(p),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.packed[self.index[((a * self.p + b) * self.p + c) * self.p + d] as usize]
    }

    pub fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.packed
    }
}

/// One provider's shareable statistics.
#[derive(Debug, Clone)]
pub struct ProviderSummary {
    pub provider_id: String,
    pub n: usize,
    pub variables: Vec<VariableSpec>,
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub moment3: Option<SymTensor3>,
    pub moment4: Option<SymTensor4>,
}

/// Pooled summaries share the provider-summary shape, with
/// `provider_id == "__pooled__"` and `n` equal to the summed row counts.
pub type PooledSummary = ProviderSummary;

impl ProviderSummary {
    pub fn p(&self) -> usize {
        self.mean.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn has_higher_moments(&self) -> bool {
        self.moment3.is_some() && self.moment4.is_some()
    }

    /// Checks every structural invariant; interchange parsing relies on this
    /// so that no invalid summary can enter the pipeline.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let fail = |msg: String| Error::SchemaViolation {
            path: format!("provider '{}'", self.provider_id),
            message: msg,
        };
        if self.n < 2 {
            return Err(fail(format!("n={} but at least 2 rows are required", self.n)));
        }
        if p == 0 {
            return Err(fail("summary has no variables".into()));
        }
        if self.variables.len() != p || self.cov.dim() != p {
            return Err(fail(format!(
                "inconsistent dimensions: {} variables, mean length {}, cov {}x{}",
                self.variables.len(),
                p,
                self.cov.dim(),
                self.cov.dim()
            )));
        }
        for (j, v) in self.mean.iter().enumerate() {
            if !v.is_finite() {
                return Err(fail(format!("mean[{j}] is not finite")));
            }
        }
        for i in 0..p {
            if self.cov.get(i, i) < 0.0 {
                return Err(fail(format!("cov[{i},{i}] is negative")));
            }
            for j in 0..p {
                if !self.cov.get(i, j).is_finite() {
                    return Err(fail(format!("cov[{i},{j}] is not finite")));
                }
            }
        }
        if let Some(m3) = &self.moment3 {
            if m3.p() != p {
                return Err(fail("third-moment tensor dimension mismatch".into()));
            }
        }
        if let Some(m4) = &self.moment4 {
            if m4.p() != p {
                return Err(fail("fourth-moment tensor dimension mismatch".into()));
            }
            for j in 0..p {
                if m4.get(j, j, j, j) < 0.0 {
                    return Err(fail(format!("moment4[{j},{j},{j},{j}] is negative")));
                }
            }
        }
        if self.moment3.is_some() != self.moment4.is_some() {
            return Err(fail(
                "third and fourth moments must be supplied together".into(),
            ));
        }
        Ok(())
    }

    /// Subsets and reorders the summary to the named variables.
    pub fn select(&self, names: &[String]) -> Result<ProviderSummary> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.var_index(n)
                    .ok_or_else(|| Error::UnknownBaseVariable(n.clone()))
            })
            .collect::<Result<_>>()?;
        let p = idx.len();
        let mean = DVector::from_iterator(p, idx.iter().map(|&i| self.mean[i]));
        let cov = SymMatrix::from_fn(p, |a, b| self.cov.get(idx[a], idx[b]));
        let moment3 = match &self.moment3 {
            Some(m3) => {
                let mut t = SymTensor3::zeros(p);
                let mut slot = 0;
                for a in 0..p {
                    for b in a..p {
                        for c in b..p {
                            t.packed_mut()[slot] = m3.get(idx[a], idx[b], idx[c]);
                            slot += 1;
                        }
                    }
                }
                Some(t)
            }
            None => None,
        };
        let moment4 = match &self.moment4 {
            Some(m4) => {
                let mut t = SymTensor4::zeros(p);
                let mut slot = 0;
                for a in 0..p {
                    for b in a..p {
                        for c in b..p {
                            for d in c..p {
                                t.packed_mut()[slot] = m4.get(idx[a], idx[b], idx[c], idx[d]);
                                slot += 1;
                            }
                        }
                    }
                }
                Some(t)
            }
            None => None,
        };
        Ok(ProviderSummary {
            provider_id: self.provider_id.clone(),
            n: self.n,
            variables: idx.iter().map(|&i| self.variables[i].clone()).collect(),
            mean,
            cov,
            moment3,
            moment4,
        })
    }

    /// Raw power sum `sum_i prod_k v[idx[k]]_i` reconstructed from the stored
    /// central moments (orders 0 through 4).
    ///
    /// Central moments are what ships; the raw sums needed downstream (cross
    /// products, sandwich meat) come back out through the binomial expansion
    /// around the means. Order-1 central sums vanish identically, so those
    /// expansion terms are dropped exactly rather than approximately.
    pub fn raw_sum(&self, idx: &[usize]) -> Result<f64> {
        let nf = self.n as f64;
        let mu = |a: usize| self.mean[a];
        // Central sums: order 2 from the covariance, orders 3/4 from the
        // shipped tensors (stored with denominator n).
        let c2 = |a: usize, b: usize| (nf - 1.0) * self.cov.get(a, b);
        match *idx {
            [] => Ok(nf),
            [a] => Ok(nf * mu(a)),
            [a, b] => Ok(c2(a, b) + nf * mu(a) * mu(b)),
            [a, b, c] => {
                let m3 = self.moment3.as_ref().ok_or(Error::MissingHigherMoments)?;
                let c3 = nf * m3.get(a, b, c);
                Ok(c3 + mu(a) * c2(b, c) + mu(b) * c2(a, c) + mu(c) * c2(a, b)
                    + nf * mu(a) * mu(b) * mu(c))
            }
            [a, b, c, d] => {
                let m3 = self.moment3.as_ref().ok_or(Error::MissingHigherMoments)?;
                let m4 = self.moment4.as_ref().ok_or(Error::MissingHigherMoments)?;
                let c3 = |x: usize, y: usize, z: usize| nf * m3.get(x, y, z);
                let c4 = nf * m4.get(a, b, c, d);
                Ok(c4
                    + mu(a) * c3(b, c, d)
                    + mu(b) * c3(a, c, d)
                    + mu(c) * c3(a, b, d)
                    + mu(d) * c3(a, b, c)
                    + mu(a) * mu(b) * c2(c, d)
                    + mu(a) * mu(c) * c2(b, d)
                    + mu(a) * mu(d) * c2(b, c)
                    + mu(b) * mu(c) * c2(a, d)
                    + mu(b) * mu(d) * c2(a, c)
                    + mu(c) * mu(d) * c2(a, b)
                    + nf * mu(a) * mu(b) * mu(c) * mu(d))
            }
            _ => Err(Error::SchemaMismatch(format!(
                "raw sums are defined for orders 0..=4, got {}",
                idx.len()
            ))),
        }
    }
}

/// Raw rectangular table with a provider-id column set aside.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub provider_col: String,
    /// Provider id per row.
    pub providers: Vec<String>,
    pub columns: Vec<RawColumn>,
    /// Declared (and, for binary text columns, resolved) model variables.
    pub variables: Vec<VariableSpec>,
}

#[derive(Debug, Clone)]
pub struct RawColumn {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.providers.len()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn numeric_column(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.column(name) {
            Some(RawColumn {
                data: ColumnData::Numeric(v),
                ..
            }) => Ok(v),
            Some(_) => Err(Error::SchemaMismatch(format!(
                "column '{name}' is not numeric"
            ))),
            None => Err(Error::UnknownColumn(name.to_string())),
        }
    }

    /// Distinct provider ids in first-appearance order.
    pub fn provider_order(&self) -> Vec<String> {
        let mut seen = HashMap::new();
        let mut order = Vec::new();
        for p in &self.providers {
            if seen.insert(p.clone(), ()).is_none() {
                order.push(p.clone());
            }
        }
        order
    }

    fn keep_rows(&self, keep: &[bool]) -> RawTable {
        let filter_text = |v: &Vec<Option<String>>| {
            v.iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| x.clone())
                .collect()
        };
        let filter_num = |v: &Vec<Option<f64>>| {
            v.iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .collect()
        };
        RawTable {
            provider_col: self.provider_col.clone(),
            providers: self
                .providers
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(p, _)| p.clone())
                .collect(),
            columns: self
                .columns
                .iter()
                .map(|c| RawColumn {
                    name: c.name.clone(),
                    data: match &c.data {
                        ColumnData::Numeric(v) => ColumnData::Numeric(filter_num(v)),
                        ColumnData::Text(v) => ColumnData::Text(filter_text(v)),
                    },
                })
                .collect(),
            variables: self.variables.clone(),
        }
    }
}

/// Per-column metadata: what a provider can eyeball before sharing anything.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: String,
    pub missing: usize,
    pub complete_rate: f64,
    pub empty_cells: Option<usize>,
    pub unique_values: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetadataReport {
    pub total_rows: usize,
    pub columns: Vec<ColumnMeta>,
}

impl fmt::Display for MetadataReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} rows", self.total_rows)?;
        let w = self
            .columns
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        writeln!(
            f,
            "{:w$}  {:>4}  {:>8}  {:>8}  {:>6}  {:>6}",
            "name", "type", "missing", "complete", "empty", "unique"
        )?;
        for c in &self.columns {
            let empty = c
                .empty_cells
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into());
            let unique = c
                .unique_values
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:w$}  {:>4}  {:>8}  {:>8.2}  {:>6}  {:>6}",
                c.name, c.kind, c.missing, c.complete_rate, empty, unique
            )?;
        }
        Ok(())
    }
}

/// Per-column overview of a raw table: type, missingness, completeness.
pub fn metadata_report(table: &RawTable) -> Result<MetadataReport> {
    let n = table.n_rows();
    if n == 0 || table.columns.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut columns = Vec::with_capacity(table.columns.len() + 1);
    {
        let mut uniq: Vec<&String> = table.providers.iter().collect();
        uniq.sort();
        uniq.dedup();
        columns.push(ColumnMeta {
            name: table.provider_col.clone(),
            kind: "char".into(),
            missing: 0,
            complete_rate: 1.0,
            empty_cells: Some(0),
            unique_values: Some(uniq.len()),
        });
    }
    for col in &table.columns {
        let meta = match &col.data {
            ColumnData::Numeric(v) => {
                let missing = v.iter().filter(|x| x.is_none()).count();
                ColumnMeta {
                    name: col.name.clone(),
                    kind: "num".into(),
                    missing,
                    complete_rate: 1.0 - missing as f64 / n as f64,
                    empty_cells: None,
                    unique_values: None,
                }
            }
            ColumnData::Text(v) => {
                let missing = v.iter().filter(|x| x.is_none()).count();
                let empty = v
                    .iter()
                    .filter(|x| x.as_deref() == Some(""))
                    .count();
                let mut uniq: Vec<&String> = v.iter().flatten().collect();
                uniq.sort();
                uniq.dedup();
                ColumnMeta {
                    name: col.name.clone(),
                    kind: "char".into(),
                    missing,
                    complete_rate: 1.0 - missing as f64 / n as f64,
                    empty_cells: Some(empty),
                    unique_values: Some(uniq.len()),
                }
            }
        };
        columns.push(meta);
    }
    Ok(MetadataReport {
        total_rows: n,
        columns,
    })
}

/// Keeps only rows that are complete (present and finite) on every model
/// variable, then drops providers left with fewer than 2 rows.
pub fn filter_complete(table: &RawTable, model_variables: &[String]) -> Result<RawTable> {
    let cols: Vec<&[Option<f64>]> = model_variables
        .iter()
        .map(|name| table.numeric_column(name))
        .collect::<Result<_>>()?;
    let n = table.n_rows();
    let mut keep: Vec<bool> = (0..n)
        .map(|i| {
            cols.iter()
                .all(|c| matches!(c[i], Some(v) if v.is_finite()))
        })
        .collect();
    // Providers reduced to a single row are excluded outright.
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (i, k) in keep.iter().enumerate() {
        if *k {
            *counts.entry(table.providers[i].as_str()).or_default() += 1;
        }
    }
    for (i, k) in keep.iter_mut().enumerate() {
        if *k && counts[table.providers[i].as_str()] < 2 {
            *k = false;
        }
    }
    if !keep.iter().any(|k| *k) {
        return Err(Error::NoRowsRemain);
    }
    Ok(table.keep_rows(&keep))
}

/// Marks non-positive (or non-finite) values of `column` as missing, so a
/// later log transform never sees them. Rows affected then fall out during
/// complete-case filtering like any other invalid value.
pub fn invalidate_nonpositive(table: &RawTable, column: &str) -> Result<RawTable> {
    table.numeric_column(column)?;
    let mut out = table.clone();
    for col in &mut out.columns {
        if col.name == column {
            if let ColumnData::Numeric(v) = &mut col.data {
                for x in v.iter_mut() {
                    if let Some(val) = *x {
                        if !(val > 0.0) || !val.is_finite() {
                            *x = None;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Appends derived columns (log, square, standardized, interactions) in the
/// order given. Bases may refer to columns added earlier in the same call.
pub fn expand_transforms(table: &RawTable, specs: &[VariableSpec]) -> Result<RawTable> {
    let mut out = table.clone();
    for spec in specs {
        if matches!(spec.derivation, Derivation::Raw) {
            if out.column(&spec.name).is_none() {
                return Err(Error::UnknownBaseVariable(spec.name.clone()));
            }
            continue;
        }
        if out.column(&spec.name).is_some() {
            return Err(Error::SchemaMismatch(format!(
                "column '{}' already exists",
                spec.name
            )));
        }
        let values: Vec<Option<f64>> = match &spec.derivation {
            Derivation::Raw => unreachable!(),
            Derivation::Log { base } => {
                let src = base_column(&out, base)?;
                let mut vals = Vec::with_capacity(src.len());
                for (i, x) in src.iter().enumerate() {
                    match x {
                        Some(v) if *v > 0.0 => vals.push(Some(v.ln())),
                        Some(v) => {
                            return Err(Error::NonPositiveForLog {
                                column: base.clone(),
                                row: i + 1,
                                value: *v,
                            })
                        }
                        None => vals.push(None),
                    }
                }
                vals
            }
            Derivation::Square { base } => base_column(&out, base)?
                .iter()
                .map(|x| x.map(|v| v * v))
                .collect(),
            Derivation::Standardized {
                base,
                center,
                scale,
            } => {
                if !(*scale > 0.0) {
                    return Err(Error::ZeroVariance(base.clone()));
                }
                base_column(&out, base)?
                    .iter()
                    .map(|x| x.map(|v| (v - center) / scale))
                    .collect()
            }
            Derivation::Interaction { a, b } => {
                let ca = base_column(&out, a)?.to_vec();
                let cb = base_column(&out, b)?;
                ca.iter()
                    .zip(cb.iter())
                    .map(|(x, y)| match (x, y) {
                        (Some(x), Some(y)) => Some(x * y),
                        _ => None,
                    })
                    .collect()
            }
        };
        out.columns.push(RawColumn {
            name: spec.name.clone(),
            data: ColumnData::Numeric(values),
        });
        out.variables.push(spec.clone());
    }
    Ok(out)
}

fn base_column<'t>(table: &'t RawTable, base: &str) -> Result<&'t [Option<f64>]> {
    match table.column(base) {
        Some(RawColumn {
            data: ColumnData::Numeric(v),
            ..
        }) => Ok(v),
        Some(_) => Err(Error::SchemaMismatch(format!(
            "base variable '{base}' is not numeric"
        ))),
        None => Err(Error::UnknownBaseVariable(base.to_string())),
    }
}

/// Summarizes an `n x p` complete-case matrix: column means, covariance with
/// denominator `n - 1`, and (optionally) third/fourth joint central moments
/// with denominator `n`.
pub fn summarize_matrix(
    provider_id: &str,
    data: &DMatrix<f64>,
    variables: &[VariableSpec],
    with_higher_moments: bool,
) -> Result<ProviderSummary> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::TooFewRows {
            provider: provider_id.to_string(),
            rows: n,
        });
    }
    if variables.len() != p {
        return Err(Error::SchemaMismatch(format!(
            "{} variables declared for {} data columns",
            variables.len(),
            p
        )));
    }
    let nf = n as f64;
    let mean = DVector::from_iterator(p, (0..p).map(|j| data.column(j).sum() / nf));
    let mut centered = data.clone();
    for j in 0..p {
        let m = mean[j];
        for i in 0..n {
            centered[(i, j)] -= m;
        }
    }
    let cov = SymMatrix::from_fn(p, |a, b| {
        let mut s = 0.0;
        for i in 0..n {
            s += centered[(i, a)] * centered[(i, b)];
        }
        s / (nf - 1.0)
    });
    let (moment3, moment4) = if with_higher_moments {
        let mut m3 = SymTensor3::zeros(p);
        let mut m4 = SymTensor4::zeros(p);
        {
            let slots = m3.packed_mut();
            let mut slot = 0;
            for a in 0..p {
                for b in a..p {
                    for c in b..p {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += centered[(i, a)] * centered[(i, b)] * centered[(i, c)];
                        }
                        slots[slot] = s / nf;
                        slot += 1;
                    }
                }
            }
        }
        {
            let slots = m4.packed_mut();
            let mut slot = 0;
            for a in 0..p {
                for b in a..p {
                    for c in b..p {
                        for d in c..p {
                            let mut s = 0.0;
                            for i in 0..n {
                                s += centered[(i, a)]
                                    * centered[(i, b)]
                                    * centered[(i, c)]
                                    * centered[(i, d)];
                            }
                            slots[slot] = s / nf;
                            slot += 1;
                        }
                    }
                }
            }
        }
        (Some(m3), Some(m4))
    } else {
        (None, None)
    };
    Ok(ProviderSummary {
        provider_id: provider_id.to_string(),
        n,
        variables: variables.to_vec(),
        mean,
        cov,
        moment3,
        moment4,
    })
}

/// Splits a (filtered, complete-case) table into per-provider matrices over
/// the named variables, providers in first-appearance order.
pub fn provider_matrices(table: &RawTable, vars: &[String]) -> Result<Vec<(String, DMatrix<f64>)>> {
    let cols: Vec<&[Option<f64>]> = vars
        .iter()
        .map(|name| table.numeric_column(name))
        .collect::<Result<_>>()?;
    let order = table.provider_order();
    let mut rows_of: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, pid) in table.providers.iter().enumerate() {
        rows_of.entry(pid.as_str()).or_default().push(i);
    }
    let mut out = Vec::with_capacity(order.len());
    for pid in &order {
        let rows = &rows_of[pid.as_str()];
        let mut m = DMatrix::zeros(rows.len(), vars.len());
        for (r, &i) in rows.iter().enumerate() {
            for (c, col) in cols.iter().enumerate() {
                m[(r, c)] = col[i].ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "missing value in '{}' for provider '{pid}'; filter incomplete rows first",
                        vars[c]
                    ))
                })?;
            }
        }
        out.push((pid.clone(), m));
    }
    Ok(out)
}

/// Looks up or synthesizes the variable specs for the named columns.
pub fn specs_for(table: &RawTable, vars: &[String]) -> Vec<VariableSpec> {
    vars.iter()
        .map(|name| {
            table
                .variables
                .iter()
                .find(|s| &s.name == name)
                .cloned()
                .unwrap_or_else(|| VariableSpec::numeric(name.clone()))
        })
        .collect()
}

/// One summary per provider over the named variables.
pub fn summarize_providers(
    table: &RawTable,
    vars: &[String],
    with_higher_moments: bool,
) -> Result<Vec<ProviderSummary>> {
    let specs = specs_for(table, vars);
    provider_matrices(table, vars)?
        .iter()
        .map(|(pid, m)| summarize_matrix(pid, m, &specs, with_higher_moments))
        .collect()
}

/// Combines provider summaries into the summary of the concatenated rows.
///
/// Means pool by weighted average; covariances by the within/between
/// decomposition with denominator `sum(n_h) - 1`; higher moments by summing
/// reconstructed raw power sums and re-centering at the pooled mean.
pub fn pool_summaries(summaries: &[ProviderSummary]) -> Result<PooledSummary> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::SchemaMismatch("no summaries to pool".into()))?;
    let p = first.p();
    let names = first.variable_names();
    for s in summaries {
        if s.variable_names() != names {
            return Err(Error::SchemaMismatch(format!(
                "provider '{}' has a different variable list",
                s.provider_id
            )));
        }
    }
    let n_total: usize = summaries.iter().map(|s| s.n).sum();
    let nf = n_total as f64;
    let mut mean = DVector::zeros(p);
    for s in summaries {
        mean += &s.mean * (s.n as f64);
    }
    mean /= nf;
    let cov = SymMatrix::from_fn(p, |a, b| {
        let mut acc = 0.0;
        for s in summaries {
            let nh = s.n as f64;
            acc += (nh - 1.0) * s.cov.get(a, b)
                + nh * (s.mean[a] - mean[a]) * (s.mean[b] - mean[b]);
        }
        acc / (nf - 1.0)
    });
    let with_higher = summaries.iter().all(|s| s.has_higher_moments());
    let (moment3, moment4) = if with_higher {
        // Raw power sums are additive across providers; re-center at the
        // pooled mean to get pooled central moments.
        let raw = |idx: &[usize]| -> Result<f64> {
            let mut acc = 0.0;
            for s in summaries {
                acc += s.raw_sum(idx)?;
            }
            Ok(acc)
        };
        let mu = |a: usize| mean[a];
        let mut m3 = SymTensor3::zeros(p);
        let mut slot = 0;
        for a in 0..p {
            for b in a..p {
                for c in b..p {
                    let r3 = raw(&[a, b, c])?;
                    let central = r3
                        - mu(a) * raw(&[b, c])?
                        - mu(b) * raw(&[a, c])?
                        - mu(c) * raw(&[a, b])?
                        + 2.0 * nf * mu(a) * mu(b) * mu(c);
                    m3.packed_mut()[slot] = central / nf;
                    slot += 1;
                }
            }
        }
        let mut m4 = SymTensor4::zeros(p);
        let mut slot = 0;
        for a in 0..p {
            for b in a..p {
                for c in b..p {
                    for d in c..p {
                        let central = raw(&[a, b, c, d])?
                            - mu(a) * raw(&[b, c, d])?
                            - mu(b) * raw(&[a, c, d])?
                            - mu(c) * raw(&[a, b, d])?
                            - mu(d) * raw(&[a, b, c])?
                            + mu(a) * mu(b) * raw(&[c, d])?
                            + mu(a) * mu(c) * raw(&[b, d])?
                            + mu(a) * mu(d) * raw(&[b, c])?
                            + mu(b) * mu(c) * raw(&[a, d])?
                            + mu(b) * mu(d) * raw(&[a, c])?
                            + mu(c) * mu(d) * raw(&[a, b])?
                            - 3.0 * nf * mu(a) * mu(b) * mu(c) * mu(d);
                        m4.packed_mut()[slot] = central / nf;
                        slot += 1;
                    }
                }
            }
        }
        (Some(m3), Some(m4))
    } else {
        (None, None)
    };
    Ok(ProviderSummary {
        provider_id: POOLED_PROVIDER_ID.to_string(),
        n: n_total,
        variables: first.variables.clone(),
        mean,
        cov,
        moment3,
        moment4,
    })
}

/// Pooled center/scale for standardizing one variable consistently across
/// every provider.
pub fn standardize_params(pooled: &PooledSummary, variable: &str) -> Result<(f64, f64)> {
    let j = pooled
        .var_index(variable)
        .ok_or_else(|| Error::UnknownBaseVariable(variable.to_string()))?;
    let var = pooled.cov.get(j, j);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance(variable.to_string()));
    }
    Ok((pooled.mean[j], var.sqrt()))
}
