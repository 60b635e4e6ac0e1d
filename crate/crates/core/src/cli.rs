//! Command-line front end: `summarize -> pseudo -> fit -> compare`.
//!
//! Exit codes are stable for scripting: 0 ok, 1 usage, 2 data/schema error,
//! 3 numerical failure. The seed comes from `--seed`, then the `FEDLMM_SEED`
//! environment variable, then the documented default (42), so identical
//! inputs and flags always produce identical outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::interchange::{
    self, export_pseudo_csv, ingest_csv, parse_summaries, sanitize_filename, sha256_hex,
    write_summaries, FitReport, InputDigest, PseudoManifest, PseudoManifestEntry,
};
use crate::lmm::{self, FitMethod, ModelSpec, ProviderData, RandomEffects};
use crate::pseudogen::{
    self, GenMethod, GeneratorConfig, SourceDistribution, DEFAULT_SEED,
};
use crate::regression::{self, HcVariant};
use crate::summaries::{
    self, expand_transforms, filter_complete, invalidate_nonpositive, metadata_report,
    pool_summaries, standardize_params, summarize_providers, Derivation, ProviderSummary,
    RawTable, VariableSpec,
};

#[derive(Parser, Debug)]
#[command(
    name = "fedlmm",
    version,
    about = "Federated linear (mixed) models from one-shot provider summaries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Provider side: turn a raw CSV into a shareable summary file.
    Summarize(SummarizeArgs),
    /// Analyst side: generate moment-exact pseudo-data from summaries.
    Pseudo(PseudoArgs),
    /// Fit OLS or a linear mixed model from data files or summaries.
    Fit(FitArgs),
    /// Rank fit reports by AIC (ties: BIC, then parameter count).
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    /// Raw CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the provider-id column.
    #[arg(long, default_value = "provider")]
    pub provider_col: String,
    /// Comma-separated variables: `age`, `gender:binary`, `gender:binary:ref=female`.
    #[arg(long)]
    pub vars: String,
    /// Comma-separated transforms: `log(x)`, `square(x)`, `std(x)`, `interact(a,b)`.
    #[arg(long)]
    pub transforms: Option<String>,
    /// Moment order to ship: 2 (mean+cov) or 4 (adds joint third/fourth moments).
    #[arg(long, default_value_t = 2)]
    pub moments: u8,
    /// Output summary file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Round every shipped statistic to this many decimals before writing.
    #[arg(long)]
    pub round: Option<u32>,
    /// Print per-provider detail.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug)]
pub struct PseudoArgs {
    /// Summary file produced by `summarize`.
    #[arg(long)]
    pub summaries: PathBuf,
    /// Output directory (one CSV per provider plus manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    /// RNG seed (falls back to FEDLMM_SEED, then 42).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source distribution for the raw draws.
    #[arg(long, default_value = "normal")]
    pub dist: String,
    /// Generation method: auto | cholesky | eigen.
    #[arg(long, default_value = "auto")]
    pub method: String,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Data directory (per-provider CSVs) or a single CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Summary file; OLS fits run straight from cross products, LMM fits
    /// generate pseudo-data internally first.
    #[arg(long)]
    pub summaries: Option<PathBuf>,
    /// Model kind: ols | lmm.
    #[arg(long)]
    pub model: String,
    /// Response variable.
    #[arg(long)]
    pub response: String,
    /// Comma-separated fixed-effect columns (default: every other variable).
    #[arg(long)]
    pub fixed: Option<String>,
    /// Random effects for lmm: `intercept` or `intercept,<var>`.
    #[arg(long, default_value = "intercept")]
    pub random: String,
    /// Estimation method for lmm: reml | ml.
    #[arg(long, default_value = "reml")]
    pub method: String,
    /// Provider-id column for --data input.
    #[arg(long, default_value = "provider_id")]
    pub provider_col: String,
    /// Seed for the internal pseudo-data step (lmm from summaries).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source distribution for the internal pseudo-data step.
    #[arg(long, default_value = "normal")]
    pub dist: String,
    /// Rescale robust covariance by n/(n-p) (HC1 instead of HC0).
    #[arg(long)]
    pub hc1: bool,
    /// Output report (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Fit reports to rank.
    #[arg(long, num_args = 1.., required = true)]
    pub reports: Vec<PathBuf>,
}

pub enum CliFailure {
    Usage(String),
    App(Error),
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        CliFailure::App(e)
    }
}

type CliResult<T> = std::result::Result<T, CliFailure>;

fn usage(msg: impl Into<String>) -> CliFailure {
    CliFailure::Usage(msg.into())
}

/// Entry point used by `main`; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    run_command(cli.command)
}

/// Test-friendly runner: arguments without the program name.
pub fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["fedlmm"];
    argv.extend_from_slice(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    run_command(cli.command)
}

fn run_command(command: Command) -> i32 {
    let result = match command {
        Command::Summarize(args) => cmd_summarize(args),
        Command::Pseudo(args) => cmd_pseudo(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => 0,
        Err(CliFailure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliFailure::App(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("FEDLMM_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(DEFAULT_SEED)
}

fn parse_dist(s: &str) -> CliResult<SourceDistribution> {
    match s {
        "normal" => Ok(SourceDistribution::StandardNormal),
        "uniform" => Ok(SourceDistribution::UniformUnit),
        other => Err(usage(format!(
            "unknown distribution '{other}' (expected normal|uniform)"
        ))),
    }
}

fn parse_gen_method(s: &str) -> CliResult<GenMethod> {
    match s {
        "auto" => Ok(GenMethod::Auto),
        "cholesky" => Ok(GenMethod::Cholesky),
        "eigen" => Ok(GenMethod::EigenSvd),
        other => Err(usage(format!(
            "unknown method '{other}' (expected auto|cholesky|eigen)"
        ))),
    }
}

fn parse_fit_method(s: &str) -> CliResult<FitMethod> {
    match s {
        "reml" => Ok(FitMethod::Reml),
        "ml" => Ok(FitMethod::Ml),
        other => Err(usage(format!("unknown method '{other}' (expected reml|ml)"))),
    }
}

// --- variable / transform flag grammar -------------------------------------

fn parse_var_specs(s: &str) -> CliResult<Vec<VariableSpec>> {
    let mut specs = Vec::new();
    for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let parts: Vec<&str> = entry.split(':').collect();
        match parts.as_slice() {
            [name] => specs.push(VariableSpec::numeric(*name)),
            [name, "binary"] => specs.push(VariableSpec::binary(*name, None)),
            [name, "binary", refspec] => {
                let level = refspec.strip_prefix("ref=").ok_or_else(|| {
                    usage(format!(
                        "bad variable entry '{entry}': expected name:binary:ref=<level>"
                    ))
                })?;
                specs.push(VariableSpec::binary(*name, Some(level.to_string())));
            }
            _ => return Err(usage(format!("bad variable entry '{entry}'"))),
        }
    }
    if specs.is_empty() {
        return Err(usage("--vars lists no variables"));
    }
    Ok(specs)
}

#[derive(Debug, Clone)]
enum TransformDirective {
    Log(String),
    Square(String),
    Std(String),
    Interact(String, String),
}

impl TransformDirective {
    fn name(&self) -> String {
        match self {
            TransformDirective::Log(b) => format!("log_{b}"),
            TransformDirective::Square(b) => format!("sq_{b}"),
            TransformDirective::Std(b) => format!("std_{b}"),
            TransformDirective::Interact(a, b) => format!("{a}:{b}"),
        }
    }
}

fn parse_transforms(s: &str) -> CliResult<Vec<TransformDirective>> {
    // Split on commas outside parentheses so interact(a,b) stays together.
    let mut entries = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                current.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            ',' if depth == 0 => {
                entries.push(current.trim().to_string());
                current = String::new();
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        entries.push(current.trim().to_string());
    }
    let mut directives = Vec::new();
    for entry in entries.into_iter().filter(|e| !e.is_empty()) {
        let (func, inner) = entry
            .split_once('(')
            .and_then(|(f, rest)| rest.strip_suffix(')').map(|args| (f.trim(), args)))
            .ok_or_else(|| usage(format!("bad transform '{entry}'")))?;
        match func {
            "log" => directives.push(TransformDirective::Log(inner.trim().to_string())),
            "square" => directives.push(TransformDirective::Square(inner.trim().to_string())),
            "std" => directives.push(TransformDirective::Std(inner.trim().to_string())),
            "interact" => {
                let (a, b) = inner
                    .split_once(',')
                    .ok_or_else(|| usage(format!("interact needs two arguments in '{entry}'")))?;
                directives.push(TransformDirective::Interact(
                    a.trim().to_string(),
                    b.trim().to_string(),
                ));
            }
            other => return Err(usage(format!("unknown transform '{other}'"))),
        }
    }
    Ok(directives)
}

// --- summarize ---------------------------------------------------------------

fn cmd_summarize(args: SummarizeArgs) -> CliResult<()> {
    if args.moments != 2 && args.moments != 4 {
        return Err(usage("--moments must be 2 or 4"));
    }
    let raw_specs = parse_var_specs(&args.vars)?;
    let directives = match &args.transforms {
        Some(t) => parse_transforms(t)?,
        None => Vec::new(),
    };
    let mut table = ingest_csv(&args.input, &args.provider_col, &raw_specs)?;
    let report = metadata_report(&table)?;
    println!("{report}");

    // Values a later log transform cannot handle count as invalid now, so the
    // affected rows fall out during complete-case filtering.
    for d in &directives {
        if let TransformDirective::Log(base) = d {
            if table.column(base).is_some() {
                table = invalidate_nonpositive(&table, base)?;
            }
        }
    }
    let raw_names: Vec<String> = table.variables.iter().map(|v| v.name.clone()).collect();
    let table = filter_complete(&table, &raw_names)?;

    // Standardization uses pooled center/scale so every provider applies the
    // same transform; operationally that is one extra pooled pass over the
    // raw-variable summaries, shipped alongside everything else.
    let mut transform_specs = Vec::new();
    if !directives.is_empty() {
        let std_bases: Vec<String> = directives
            .iter()
            .filter_map(|d| match d {
                TransformDirective::Std(b) => Some(b.clone()),
                _ => None,
            })
            .collect();
        let pooled = if std_bases.is_empty() {
            None
        } else {
            let base_sums = summarize_providers(&table, &std_bases, false)?;
            Some(pool_summaries(&base_sums)?)
        };
        for d in &directives {
            let spec = match d {
                TransformDirective::Log(base) => {
                    VariableSpec::derived(d.name(), Derivation::Log { base: base.clone() })
                }
                TransformDirective::Square(base) => {
                    VariableSpec::derived(d.name(), Derivation::Square { base: base.clone() })
                }
                TransformDirective::Std(base) => {
                    let (center, scale) =
                        standardize_params(pooled.as_ref().expect("pooled computed"), base)?;
                    VariableSpec::derived(
                        d.name(),
                        Derivation::Standardized {
                            base: base.clone(),
                            center,
                            scale,
                        },
                    )
                }
                TransformDirective::Interact(a, b) => VariableSpec::derived(
                    d.name(),
                    Derivation::Interaction {
                        a: a.clone(),
                        b: b.clone(),
                    },
                ),
            };
            transform_specs.push(spec);
        }
    }
    let table = expand_transforms(&table, &transform_specs)?;
    let model_vars: Vec<String> = table.variables.iter().map(|v| v.name.clone()).collect();
    let mut sums = summarize_providers(&table, &model_vars, args.moments == 4)?;
    if let Some(decimals) = args.round {
        sums = sums
            .iter()
            .map(|s| interchange::round_summary(s, decimals))
            .collect();
    }
    if args.verbose > 0 {
        for s in &sums {
            eprintln!("provider '{}': n = {}", s.provider_id, s.n);
        }
    }
    write_summaries(&args.out, &sums)?;
    println!(
        "wrote {} provider summaries over {} variables to {}",
        sums.len(),
        model_vars.len(),
        args.out.display()
    );
    Ok(())
}

// --- pseudo -------------------------------------------------------------------

fn cmd_pseudo(args: PseudoArgs) -> CliResult<()> {
    let config = GeneratorConfig {
        seed: resolve_seed(args.seed),
        source_distribution: parse_dist(&args.dist)?,
        method: parse_gen_method(&args.method)?,
    };
    let file = parse_summaries(&args.summaries)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut entries = Vec::new();
    let mut failures: Vec<Error> = Vec::new();
    for summary in &file.providers {
        match pseudogen::generate(summary, &config) {
            Ok(ds) => {
                for w in &ds.warnings {
                    eprintln!("warning: provider '{}': {w}", ds.provider_id);
                }
                let path = args
                    .out
                    .join(format!("{}.csv", sanitize_filename(&ds.provider_id)));
                export_pseudo_csv(&ds, &path)?;
                if args.verbose > 0 {
                    eprintln!("wrote {}", path.display());
                }
                entries.push(PseudoManifestEntry {
                    provider_id: ds.provider_id.clone(),
                    file: path
                        .file_name()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    n: ds.n(),
                    warnings: ds.warnings.iter().map(|w| w.to_string()).collect(),
                });
            }
            Err(e) => {
                let wrapped = Error::Provider {
                    id: summary.provider_id.clone(),
                    source: Box::new(e),
                };
                eprintln!("error: {wrapped}");
                failures.push(wrapped);
            }
        }
    }
    let manifest = PseudoManifest {
        format_version: interchange::FORMAT_VERSION.to_string(),
        generator: config,
        created_at: interchange::now_rfc3339(),
        input: Some(InputDigest {
            path: args.summaries.display().to_string(),
            sha256: sha256_hex(&args.summaries)?,
        }),
        providers: entries,
    };
    let manifest_path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    println!(
        "wrote {} pseudo-datasets to {}",
        manifest.providers.len(),
        args.out.display()
    );
    match failures.into_iter().next() {
        Some(first) => Err(first.into()),
        None => Ok(()),
    }
}

// --- fit ------------------------------------------------------------------------

fn list_data_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyTable);
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn load_tables(paths: &[PathBuf], provider_col: &str) -> Result<Vec<RawTable>> {
    paths
        .iter()
        .map(|p| ingest_csv(p, provider_col, &[]))
        .collect()
}

fn fixed_from_flag(
    flag: &Option<String>,
    all_vars: &[String],
    response: &str,
) -> Vec<String> {
    match flag {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        None => all_vars
            .iter()
            .filter(|v| v.as_str() != response)
            .cloned()
            .collect(),
    }
}

fn parse_random(flag: &str) -> CliResult<RandomEffects> {
    let mut intercept = false;
    let mut slopes = Vec::new();
    for term in flag.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if term == "intercept" {
            intercept = true;
        } else {
            slopes.push(term.to_string());
        }
    }
    if !intercept && slopes.is_empty() {
        return Err(usage("--random lists no terms"));
    }
    Ok(RandomEffects { intercept, slopes })
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    match (&args.data, &args.summaries) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(usage("pass exactly one of --data or --summaries"))
        }
        _ => {}
    }
    let inputs = collect_input_digests(&args)?;
    match args.model.as_str() {
        "ols" => cmd_fit_ols(&args, inputs),
        "lmm" => cmd_fit_lmm(&args, inputs),
        other => Err(usage(format!("unknown model '{other}' (expected ols|lmm)"))),
    }
}

fn collect_input_digests(args: &FitArgs) -> CliResult<Vec<InputDigest>> {
    let mut digests = Vec::new();
    if let Some(s) = &args.summaries {
        digests.push(InputDigest {
            path: s.display().to_string(),
            sha256: sha256_hex(s)?,
        });
    }
    if let Some(d) = &args.data {
        for f in list_data_files(d)? {
            digests.push(InputDigest {
                path: f.display().to_string(),
                sha256: sha256_hex(&f)?,
            });
        }
    }
    Ok(digests)
}

/// Summaries backing an OLS fit, either parsed directly or computed (with
/// higher moments, so robust errors stay available) from data files.
fn ols_summaries(args: &FitArgs) -> CliResult<Vec<ProviderSummary>> {
    if let Some(path) = &args.summaries {
        return Ok(parse_summaries(path)?.providers);
    }
    let files = list_data_files(args.data.as_ref().expect("checked"))?;
    let tables = load_tables(&files, &args.provider_col)?;
    let mut vars: Vec<String> = Vec::new();
    for t in &tables {
        for c in &t.columns {
            if matches!(c.data, summaries::ColumnData::Numeric(_)) && !vars.contains(&c.name) {
                vars.push(c.name.clone());
            }
        }
    }
    let mut sums = Vec::new();
    for t in &tables {
        sums.extend(summarize_providers(t, &vars, true)?);
    }
    Ok(sums)
}

fn cmd_fit_ols(args: &FitArgs, inputs: Vec<InputDigest>) -> CliResult<()> {
    let sums = ols_summaries(args)?;
    if sums.is_empty() {
        return Err(Error::EmptyTable.into());
    }
    let all_vars: Vec<String> = sums[0].variables.iter().map(|v| v.name.clone()).collect();
    let fixed = fixed_from_flag(&args.fixed, &all_vars, &args.response);
    let cps: Vec<_> = sums
        .iter()
        .map(|s| regression::cross_products_for_model(s, &args.response, &fixed))
        .collect::<Result<_>>()?;
    let pooled_cp = regression::pool_cross_products(&cps)?;
    let mut fit = regression::fit_ols(&pooled_cp)?;
    if sums.iter().all(|s| s.has_higher_moments()) {
        let mut model_vars = vec![args.response.clone()];
        model_vars.extend(fixed.iter().cloned());
        let selected: Vec<_> = sums
            .iter()
            .map(|s| s.select(&model_vars))
            .collect::<Result<_>>()?;
        let pooled = pool_summaries(&selected)?;
        let variant = if args.hc1 { HcVariant::Hc1 } else { HcVariant::Hc0 };
        fit.robust_cov = Some(regression::robust_sandwich(
            &pooled,
            &fit,
            &args.response,
            variant,
        )?);
    }
    let provenance = interchange::provenance_now(None, None, inputs);
    let report = FitReport::from_ols(&fit, &args.response, sums.len(), provenance);
    report.write(&args.out)?;
    print!("{}", report.render_text());
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_fit_lmm(args: &FitArgs, inputs: Vec<InputDigest>) -> CliResult<()> {
    let method = parse_fit_method(&args.method)?;
    let random = parse_random(&args.random)?;
    let build_spec = |all_vars: &[String]| ModelSpec {
        response: args.response.clone(),
        fixed: fixed_from_flag(&args.fixed, all_vars, &args.response),
        random: random.clone(),
        method,
    };
    let (spec, providers, gen_config): (ModelSpec, Vec<ProviderData>, Option<GeneratorConfig>) =
        if let Some(path) = &args.summaries {
            let file = parse_summaries(path)?;
            let config = GeneratorConfig {
                seed: resolve_seed(args.seed),
                source_distribution: parse_dist(&args.dist)?,
                method: GenMethod::Auto,
            };
            let datasets = pseudogen::generate_all(&file.providers, &config)?;
            for ds in &datasets {
                for w in &ds.warnings {
                    eprintln!("warning: provider '{}': {w}", ds.provider_id);
                }
            }
            let vars: Vec<String> = file.variables.iter().map(|v| v.name.clone()).collect();
            let spec = build_spec(&vars);
            let providers = lmm::providers_from_pseudo(&datasets, &spec)?;
            (spec, providers, Some(config))
        } else {
            let files = list_data_files(args.data.as_ref().expect("checked"))?;
            let tables = load_tables(&files, &args.provider_col)?;
            let mut vars: Vec<String> = Vec::new();
            for t in &tables {
                for c in &t.columns {
                    if matches!(c.data, summaries::ColumnData::Numeric(_))
                        && !vars.contains(&c.name)
                    {
                        vars.push(c.name.clone());
                    }
                }
            }
            let spec = build_spec(&vars);
            let mut providers = Vec::new();
            for t in &tables {
                providers.extend(lmm::providers_from_table(t, &spec)?);
            }
            (spec, providers, None)
        };
    let fit = lmm::fit(&spec, &providers)?;
    let provenance =
        interchange::provenance_now(gen_config.map(|c| c.seed), gen_config, inputs);
    let report = FitReport::from_lmm(&fit, provenance);
    report.write(&args.out)?;
    print!("{}", report.render_text());
    println!("report written to {}", args.out.display());
    fit.ensure_converged()?;
    Ok(())
}

// --- compare -----------------------------------------------------------------

/// Best-first ranking by AIC, ties broken by BIC then parameter count.
/// Refuses to rank reports of different responses or datasets.
pub fn rank_reports(reports: &[FitReport]) -> Result<Vec<usize>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::MismatchedData("no reports to rank".into()))?;
    for r in reports {
        if r.model.response != first.model.response
            || r.n_total != first.n_total
            || r.n_providers != first.n_providers
        {
            return Err(Error::MismatchedData(format!(
                "fit of '{}' ({} rows, {} providers) against fit of '{}' ({} rows, {} providers)",
                r.model.response,
                r.n_total,
                r.n_providers,
                first.model.response,
                first.n_total,
                first.n_providers
            )));
        }
        if r.aic.is_none() {
            return Err(Error::MismatchedData(
                "report carries no information criteria to rank by".into(),
            ));
        }
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = &reports[a];
        let rb = &reports[b];
        ra.aic
            .partial_cmp(&rb.aic)
            .unwrap()
            .then(ra.bic.partial_cmp(&rb.bic).unwrap())
            .then(ra.k_params.cmp(&rb.k_params))
    });
    Ok(order)
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let reports: Vec<(PathBuf, FitReport)> = args
        .reports
        .iter()
        .map(|p| FitReport::parse(p).map(|r| (p.clone(), r)))
        .collect::<Result<_>>()?;
    let parsed: Vec<FitReport> = reports.iter().map(|(_, r)| r.clone()).collect();
    let order = rank_reports(&parsed)?;
    println!(
        "{:<4} {:<32} {:>12} {:>12} {:>12} {:>4}",
        "rank", "report", "AIC", "BIC", "criterion", "k"
    );
    for (rank, &i) in order.iter().enumerate() {
        let (path, r) = &reports[i];
        let name = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        println!(
            "{:<4} {:<32} {:>12.2} {:>12.2} {:>12.2} {:>4}",
            rank + 1,
            name,
            r.aic.unwrap_or(f64::NAN),
            r.bic.unwrap_or(f64::NAN),
            r.criterion.unwrap_or(f64::NAN),
            r.k_params.map(|k| k.to_string()).unwrap_or_default()
        );
    }
    Ok(())
}
