//! Command-line front end: `tune`, `codegen`, `strategy-eval` and
//! `db export`.

pub mod strategy_eval;
pub mod tune;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::codegen::{enumerate_variants, generate_variant_code, instantiate, specialize_kernels, CodegenError};
use crate::descfmt::{
    load_ivp, load_machine, load_method, load_skeleton, load_template, validate_scenario, yaml_files, DescError,
    ImplSkeleton, KernelTemplate, TuningScenario, ValidatedScenario,
};
use crate::predict::{read_barrier_csv, read_measurements};
use crate::store::{Store, StoreError};

pub use strategy_eval::{comparison_text, default_strategies, evaluate, StrategyComparison};
pub use tune::{tune, TuneOptions, TuneOutcome, TuneReport, TuneStats};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("description: {0}")]
    Description(#[from] DescError),
    #[error("codegen: {0}")]
    Codegen(#[from] CodegenError),
    #[error("model: {0}")]
    Model(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("measurement: {0}")]
    Measurement(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Description(_) => 3,
            CliError::Codegen(_) => 4,
            CliError::Model(_) => 5,
            CliError::Store(_) => 6,
            CliError::Measurement(_) => 7,
        }
    }
}

const EXIT_CODES: &str = "Exit codes: 0 success, 1 other failure, 2 usage, 3 description documents, \
4 code generation, 5 performance model, 6 store, 7 measurements.";

#[derive(Debug, Parser)]
#[command(name = "odetune", version, about = "Offline autotuning of PIRK ODE solvers with ECM predictions", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict, rank and select implementation variants.
    Tune(TuneArgs),
    /// Emit the source of one implementation variant.
    Codegen(CodegenArgs),
    /// Compare autotuning strategies on measured runtimes.
    StrategyEval(StrategyArgs),
    /// Inspect the prediction store.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum DbCommand {
    /// Dump all kernel predictions as CSV.
    Export {
        #[arg(long, env = "ODETUNE_STORE")]
        store: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DescArgs {
    /// ODE method document; repeatable.
    #[arg(long = "method", required = true)]
    pub methods: Vec<PathBuf>,
    /// IVP document; repeatable.
    #[arg(long = "ivp")]
    pub ivps: Vec<PathBuf>,
    #[arg(long)]
    pub templates_dir: PathBuf,
    #[arg(long)]
    pub skeletons_dir: PathBuf,
    /// Fixed system size.
    #[arg(long)]
    pub n: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub machine: PathBuf,
    #[command(flatten)]
    pub desc: DescArgs,
    /// Largest system size when sampling sizes from the working-set model.
    #[arg(long)]
    pub n_max: Option<u64>,
    /// Core counts, comma separated; all cores of the machine by default.
    #[arg(long, value_delimiter = ',')]
    pub cores: Vec<u32>,
    /// Percent deviation from the best prediction admitted into the selection.
    #[arg(long, default_value_t = 5.0)]
    pub deviation: f64,
    #[arg(long, env = "ODETUNE_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Barrier benchmark CSV with columns `tau,seconds`.
    #[arg(long)]
    pub barrier_bench: Option<PathBuf>,
    /// Write ECM terms of every evaluated kernel to this file.
    #[arg(long)]
    pub ecm_dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CodegenArgs {
    #[command(flatten)]
    pub desc: DescArgs,
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    /// `report.json` written by `tune`.
    #[arg(long)]
    pub report: PathBuf,
    /// CSV with columns `variant,tau,n,seconds`.
    #[arg(long)]
    pub measurements: PathBuf,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub ivp: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Variants drawn by RandomSelect.
    #[arg(long, default_value_t = 20)]
    pub random_k: usize,
    /// Directory for `strategies.txt` and `strategies.json`; standard output
    /// when omitted.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_templates(dir: &Path) -> Result<Vec<KernelTemplate>, CliError> {
    Ok(yaml_files(dir)?.iter().map(|p| load_template(p)).collect::<Result<_, _>>()?)
}

pub fn load_skeletons(dir: &Path) -> Result<Vec<ImplSkeleton>, CliError> {
    Ok(yaml_files(dir)?.iter().map(|p| load_skeleton(p)).collect::<Result<_, _>>()?)
}

/// Loads and cross-checks every document of a tuning run.
#[allow(clippy::too_many_arguments)]
pub fn load_scenario(
    machine: &Path,
    methods: &[PathBuf],
    ivps: &[PathBuf],
    templates_dir: &Path,
    skeletons_dir: &Path,
    n: Option<u64>,
    n_max: Option<u64>,
    cores: &[u32],
    deviation: f64,
) -> Result<ValidatedScenario, CliError> {
    let machine = load_machine(machine)?;
    let cores = if cores.is_empty() { vec![machine.cores] } else { cores.to_vec() };
    Ok(validate_scenario(TuningScenario {
        methods: methods.iter().map(|p| load_method(p)).collect::<Result<_, _>>()?,
        ivps: ivps.iter().map(|p| load_ivp(p)).collect::<Result<_, _>>()?,
        templates: load_templates(templates_dir)?,
        skeletons: load_skeletons(skeletons_dir)?,
        machine,
        n,
        n_max,
        cores,
        deviation,
    })?)
}

fn open_store(path: Option<&Path>) -> Result<Store, CliError> {
    Ok(match path {
        Some(p) => Store::open(p)?,
        None => Store::in_memory(),
    })
}

pub fn cmd_tune(a: &TuneArgs) -> Result<TuneOutcome, CliError> {
    let d = &a.desc;
    let sc = load_scenario(
        &a.machine,
        &d.methods,
        &d.ivps,
        &d.templates_dir,
        &d.skeletons_dir,
        d.n,
        a.n_max,
        &a.cores,
        a.deviation,
    )?;
    let barrier_samples = match &a.barrier_bench {
        Some(p) => Some(read_barrier_csv(&read_text(p)?).map_err(|e| CliError::Measurement(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut store = open_store(a.store.as_deref())?;
    let outcome = tune(
        &sc,
        &mut store,
        &TuneOptions {
            barrier_samples,
            out_dir: Some(a.out_dir.clone()),
        },
    )?;
    if let Some(p) = &a.ecm_dump {
        let mut text = String::new();
        for r in &outcome.ecm {
            let comp = r.component.map(|c| format!(" component {}", c + 1)).unwrap_or_default();
            text.push_str(&format!(
                "{}{comp} tau={} n={}: {}  alpha={}\n",
                r.kernel,
                r.tau,
                r.n,
                r.ecm.notation(),
                r.alpha
            ));
        }
        write_text(p, &text)?;
    }
    store.save()?;
    Ok(outcome)
}

/// Generates the C source of `variant`.
pub fn variant_source(d: &DescArgs, variant: &str) -> Result<String, CliError> {
    let n = d.n.ok_or_else(|| CliError::Usage("codegen needs --n".into()))?;
    if d.methods.len() != 1 || d.ivps.len() > 1 {
        return Err(CliError::Usage("codegen takes one --method and at most one --ivp".into()));
    }
    let method = load_method(&d.methods[0])?;
    let ivp = d.ivps.first().map(|p| load_ivp(p)).transpose()?;
    let templates = load_templates(&d.templates_dir)?;
    let skeletons = load_skeletons(&d.skeletons_dir)?;
    let variants = enumerate_variants(&skeletons, &templates);
    let v = variants.iter().find(|v| v.id == variant).ok_or_else(|| CodegenError::UnknownVariant {
        id: variant.to_string(),
        suggestion: variants
            .iter()
            .min_by_key(|v| (strsim::levenshtein(&v.id, variant), v.id.clone()))
            .map(|v| v.id.clone()),
    })?;
    let sk = skeletons.iter().find(|s| s.name == v.skeleton).expect("variant skeleton exists");
    let used: Vec<KernelTemplate> = templates
        .into_iter()
        .filter(|t| sk.required_templates.contains(&t.name))
        .collect();
    let kset = specialize_kernels(&used, &method, ivp.as_ref(), Some(n))?;
    let inst = instantiate(v, sk, &used, &kset, &method)?;
    Ok(generate_variant_code(&inst))
}

/// Writes the source of the requested variant and returns its path.
pub fn cmd_codegen(a: &CodegenArgs) -> Result<PathBuf, CliError> {
    let src = variant_source(&a.desc, &a.variant)?;
    let path = a.out_dir.join(format!("{}.c", a.variant));
    write_text(&path, &src)?;
    Ok(path)
}

pub fn cmd_strategy_eval(a: &StrategyArgs) -> Result<Vec<StrategyComparison>, CliError> {
    let report: TuneReport = serde_json::from_str(&read_text(&a.report)?)
        .map_err(|e| CliError::Other(format!("{}: {e}", a.report.display())))?;
    let measurements = read_measurements(&read_text(&a.measurements)?)
        .map_err(|e| CliError::Measurement(format!("{}: {e}", a.measurements.display())))?;
    if a.random_k == 0 {
        return Err(CliError::Usage("--random-k must be positive".into()));
    }
    evaluate(
        &report,
        &measurements,
        a.method.as_deref(),
        a.ivp.as_deref(),
        &default_strategies(a.random_k),
        a.seed,
    )
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Tune(a) => {
            let o = cmd_tune(&a)?;
            eprintln!(
                "{} kernel predictions computed ({} kernels), {} reused; report in {}",
                o.stats.ecm_evaluations,
                o.stats.evaluated_kernels.len(),
                o.stats.reused,
                a.out_dir.join("report.txt").display()
            );
        }
        Command::Codegen(a) => {
            let p = cmd_codegen(&a)?;
            println!("{}", p.display());
        }
        Command::StrategyEval(a) => {
            let cmps = cmd_strategy_eval(&a)?;
            let text = comparison_text(&cmps);
            match &a.out_dir {
                Some(dir) => {
                    write_text(&dir.join("strategies.txt"), &text)?;
                    let json = serde_json::to_string_pretty(&cmps).expect("comparisons always serialize");
                    write_text(&dir.join("strategies.json"), &(json + "\n"))?;
                }
                None => print!("{text}"),
            }
        }
        Command::Db {
            command: DbCommand::Export { store, out },
        } => {
            if !store.exists() {
                return Err(CliError::Store(StoreError::Io {
                    path: store.display().to_string(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                }));
            }
            let csv = Store::open(&store)?.export_csv();
            match out {
                Some(p) => write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("odetune: {e}");
            e.exit_code()
        }
    }
}
