use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cloudsearch_core::acquisition::{AcquisitionKind, AcquisitionSpec, DEFAULT_KAPPA, DEFAULT_XI};
use cloudsearch_core::bench::{self, ExperimentReport, ExperimentSpec};
use cloudsearch_core::catalog::{
    builtin_catalog, load_catalog, parse_sizes, ConfigurationSpace, VmType, DEFAULT_SIZES,
};
use cloudsearch_core::cost::{ObservationMode, DEFAULT_PI_COUNT};
use cloudsearch_core::pareto::{pareto_front, FrontPoint, ObjectiveBounds};
use cloudsearch_core::search::{
    run_search_with_model, Budget, SearchPolicy, SearchReport, DEFAULT_FAILURE_DETECT_S, SCHEMA_VERSION,
};
use cloudsearch_core::surrogate::SurrogateKind;
use cloudsearch_core::synthcloud::{synth_space, AmdahlModel, SynthBackend};
use cloudsearch_core::trace::{load_trace, write_trace, ObservationBackend, TraceBackend};
use cloudsearch_core::CloudConfiguration;

#[derive(Parser)]
#[command(name = "cloudsearch", version, about = "Cost-aware cloud configuration search")]
#[command(arg_required_else_help = true, propagate_version = true)]
struct Cli {
    /// RNG seed; overrides seeds given in input files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (written atomically). Defaults to standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// VM catalog operations.
    #[command(subcommand)]
    Catalog(CatalogCmd),
    /// Synthetic workload generation.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Trace file checks.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Single searches.
    #[command(subcommand)]
    Search(SearchCmd),
    /// Repeated-run experiments.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Pareto recommendations.
    #[command(subcommand)]
    Pareto(ParetoCmd),
}

#[derive(Args)]
struct SpaceArgs {
    /// Catalog CSV; the built-in AWS table when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Comma-separated cluster sizes.
    #[arg(long, default_value = "1,2,4,8,16,32")]
    sizes: String,
}

impl SpaceArgs {
    fn vms(&self) -> Result<Vec<VmType>> {
        match &self.catalog {
            Some(p) => Ok(load_catalog(open(p)?).with_context(|| format!("loading catalog {}", p.display()))?),
            None => Ok(builtin_catalog()),
        }
    }

    fn space(&self) -> Result<ConfigurationSpace> {
        Ok(ConfigurationSpace::from_catalog(
            &self.vms()?,
            &parse_sizes(&self.sizes)?,
        )?)
    }
}

#[derive(Subcommand)]
enum CatalogCmd {
    /// Print the catalog in VM-axis order.
    List {
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Evaluate an Amdahl model over the grid and emit a trace.
    Generate {
        /// Model file (key=value or two-line CSV).
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long, default_value = "synth")]
        workload: String,
        #[arg(long, default_value = "A")]
        class: String,
        /// Fraction of the full runtime the PI measurements cover.
        #[arg(long, default_value_t = 0.14)]
        pi_fraction: f64,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Parse a trace and report per-workload coverage of the grid.
    Validate {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        space: SpaceArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Random,
    Grid,
    Smbo,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "smbo")]
    policy: PolicyArg,
    #[arg(long, default_value = "gp")]
    surrogate: SurrogateKind,
    #[arg(long, default_value = "ei")]
    acquisition: AcquisitionKind,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    kappa: f64,
    #[arg(long, default_value_t = DEFAULT_XI)]
    xi: f64,
    /// Maximum number of observations.
    #[arg(long, default_value_t = 32)]
    budget: usize,
    /// Random observations before the surrogate takes over.
    #[arg(long, default_value_t = 8)]
    init: usize,
    #[arg(long, default_value = "full")]
    mode: ObservationMode,
    /// `trace:FILE` or `synth:FILE`.
    #[arg(long)]
    backend: String,
    /// Workload id (`name/class`) to replay from a multi-workload trace.
    #[arg(long)]
    workload: Option<String>,
    #[command(flatten)]
    space: SpaceArgs,
    #[arg(long, default_value_t = DEFAULT_FAILURE_DETECT_S)]
    failure_detect_s: f64,
    /// PI charge fraction for synthetic backends.
    #[arg(long)]
    pi_fraction: Option<f64>,
    /// Write the last fitted surrogate's hyperparameters here.
    #[arg(long)]
    dump_model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SearchCmd {
    /// Run one search and print its history and recommendation.
    Run(Box<RunArgs>),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run an experiment spec (JSON).
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Flatten a report's curves to CSV.
    ExportCsv {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum ParetoCmd {
    /// Observed points with normalized objectives and front membership.
    Show {
        /// A `search run` or `bench run` report.
        #[arg(long = "in")]
        input: PathBuf,
        /// Strategy to show from a bench report (default: the first).
        #[arg(long)]
        strategy: Option<String>,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Writes to `--out` via a temporary file in the same directory, or to stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .with_context(|| format!("creating temporary file in {}", dir.display()))?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

fn catalog_list(catalog: Option<&Path>, format: Format) -> Result<Vec<u8>> {
    let vms = match catalog {
        Some(p) => load_catalog(open(p)?).with_context(|| format!("loading catalog {}", p.display()))?,
        None => builtin_catalog(),
    };
    let space = ConfigurationSpace::from_catalog(&vms, &DEFAULT_SIZES)?;
    match format {
        Format::Json => to_json(&space.vms()),
        Format::Csv => csv_bytes(|w| {
            w.write_record([
                "axis_index",
                "name",
                "vcpus",
                "mem_gib",
                "network_gbps",
                "price_usd_hour",
            ])?;
            for (k, vm) in space.vms().iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    vm.name.clone(),
                    vm.vcpus.to_string(),
                    vm.mem_gib.to_string(),
                    vm.network_gbps.to_string(),
                    vm.price_usd_hour.to_string(),
                ])?;
            }
            Ok(())
        }),
    }
}

fn load_model(path: &Path, seed: Option<u64>) -> Result<AmdahlModel> {
    let mut model = AmdahlModel::load(open(path)?).with_context(|| format!("loading model {}", path.display()))?;
    if let Some(s) = seed {
        model.seed = s;
    }
    Ok(model)
}

fn synth_generate(
    model: &Path,
    space: &SpaceArgs,
    workload: &str,
    class: &str,
    pi_fraction: f64,
    seed: Option<u64>,
    format: Format,
) -> Result<Vec<u8>> {
    let model = load_model(model, seed)?;
    let synth = synth_space(&model, &space.space()?)?;
    let rows = synth.to_trace(workload, class, pi_fraction, DEFAULT_PI_COUNT)?;
    match format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut buf = Vec::new();
            write_trace(&rows, &mut buf)?;
            Ok(buf)
        }
    }
}

fn trace_validate(trace: &Path, space: &SpaceArgs, format: Format) -> Result<Vec<u8>> {
    let trace = load_trace(open(trace)?).with_context(|| format!("loading trace {}", trace.display()))?;
    let coverage = trace.coverage(&space.space()?);
    match format {
        Format::Json => to_json(&coverage),
        Format::Csv => csv_bytes(|w| {
            w.write_record([
                "workload",
                "rows",
                "feasible",
                "with_full_runtime",
                "missing",
                "unknown_vm_rows",
            ])?;
            for c in &coverage {
                w.write_record([
                    c.workload.clone(),
                    c.rows.to_string(),
                    c.feasible.to_string(),
                    c.with_full_runtime.to_string(),
                    c.missing.to_string(),
                    c.unknown_vm_rows.to_string(),
                ])?;
            }
            Ok(())
        }),
    }
}

fn build_backend(args: &RunArgs, seed: Option<u64>) -> Result<Box<dyn ObservationBackend + Send + Sync>> {
    let Some((kind, path)) = args.backend.split_once(':') else {
        bail!("--backend must be `trace:FILE` or `synth:FILE`, got `{}`", args.backend);
    };
    let path = Path::new(path);
    let space = args.space.space()?;
    match kind {
        "synth" => {
            if args.workload.is_some() {
                bail!("--workload applies only to trace backends");
            }
            let model = load_model(path, seed)?;
            let mut backend = SynthBackend::new(&model, &space)?.with_failure_detect_s(args.failure_detect_s)?;
            if let Some(f) = args.pi_fraction {
                backend = backend.with_pi_fraction(f)?;
            }
            Ok(Box::new(backend))
        }
        "trace" => {
            if args.pi_fraction.is_some() {
                bail!("--pi-fraction applies only to synthetic backends; traces carry their own PI data");
            }
            let trace = load_trace(open(path)?).with_context(|| format!("loading trace {}", path.display()))?;
            let backend = TraceBackend::new(&trace, space, args.workload.as_deref())?
                .with_failure_detect_s(args.failure_detect_s)?;
            Ok(Box::new(backend))
        }
        other => bail!("unknown backend kind `{other}`; expected `trace` or `synth`"),
    }
}

fn search_run(args: &RunArgs, seed: Option<u64>, out: Option<&Path>, format: Format) -> Result<Vec<u8>> {
    let policy = match args.policy {
        PolicyArg::Random => SearchPolicy::Random,
        PolicyArg::Grid => SearchPolicy::Grid,
        PolicyArg::Smbo => SearchPolicy::smbo(
            args.surrogate,
            AcquisitionSpec {
                kind: args.acquisition,
                xi: args.xi,
                kappa: args.kappa,
            },
        ),
    };
    let budget = Budget {
        max_observations: args.budget,
        init_random: args.init,
        mode: args.mode,
    };
    let backend = build_backend(args, seed)?;
    let seed = seed.unwrap_or(0);
    let (result, model) = run_search_with_model(&policy, backend.as_ref(), &budget, seed)?;
    let report = result.to_report(backend.space())?;
    if let Some(path) = &args.dump_model {
        let text = model.map(|m| m.dump()).unwrap_or_else(|| "model=none\n".into());
        if out.is_some_and(|o| o == path) {
            bail!("--dump-model and --out must differ");
        }
        emit(Some(path), text.as_bytes())?;
    }
    match format {
        Format::Json => to_json(&report),
        Format::Csv => csv_bytes(|w| {
            w.write_record([
                "step",
                "vm",
                "n",
                "selection",
                "feasible",
                "runtime_estimate_s",
                "charged_cost_usd",
                "objective_cost_usd",
                "best_cost_usd",
                "accumulated_charge_usd",
            ])?;
            for (k, h) in report.history.iter().enumerate() {
                let selection = serde_json::to_value(h.selection)?;
                w.write_record([
                    h.step.to_string(),
                    h.vm.clone(),
                    h.n.to_string(),
                    selection["by"].as_str().unwrap_or_default().to_string(),
                    h.feasible.to_string(),
                    h.runtime_estimate_s.to_string(),
                    h.charged_cost_usd.to_string(),
                    h.objective_cost_usd.to_string(),
                    report.best_cost_curve[k].map(|v| v.to_string()).unwrap_or_default(),
                    report.accumulated_charge_curve[k].to_string(),
                ])?;
            }
            Ok(())
        }),
    }
}

fn bench_run(spec_path: &Path, seed: Option<u64>) -> Result<Vec<u8>> {
    let mut spec = ExperimentSpec::load(spec_path).with_context(|| format!("loading spec {}", spec_path.display()))?;
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let report = bench::run_experiment(&spec, base)?;
    to_json(&report)
}

fn load_bench_report(path: &Path) -> Result<ExperimentReport> {
    let report: ExperimentReport =
        serde_json::from_reader(open(path)?).with_context(|| format!("reading bench report {}", path.display()))?;
    check_schema(report.schema_version)?;
    Ok(report)
}

fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        bail!("unsupported schema_version {version} (expected {SCHEMA_VERSION})");
    }
    Ok(())
}

fn bench_export_csv(input: &Path) -> Result<Vec<u8>> {
    let report = load_bench_report(input)?;
    let mut buf = Vec::new();
    bench::export_csv(&report, &mut buf)?;
    Ok(buf)
}

/// Points plus a label for each, from either kind of report.
fn pareto_points(input: &Path, strategy: Option<&str>) -> Result<Vec<(String, FrontPoint)>> {
    let value: serde_json::Value =
        serde_json::from_reader(open(input)?).with_context(|| format!("reading {}", input.display()))?;
    if value.get("strategies").is_some() {
        let report: ExperimentReport = serde_json::from_value(value)?;
        check_schema(report.schema_version)?;
        let s = match strategy {
            Some(name) => report
                .strategy(name)
                .with_context(|| format!("no strategy `{name}` in report"))?,
            None => report.strategies.first().context("report has no strategies")?,
        };
        s.observed
            .iter()
            .map(|p| {
                let vm = report
                    .vm_axis
                    .get(p.config.vm_index)
                    .with_context(|| format!("vm_index {} outside the report's VM axis", p.config.vm_index))?;
                Ok((format!("{vm}:{}", p.config.n), *p))
            })
            .collect()
    } else {
        if strategy.is_some() {
            bail!("--strategy applies only to bench reports");
        }
        let report: SearchReport = serde_json::from_value(value)?;
        check_schema(report.schema_version)?;
        let mut seen: Vec<CloudConfiguration> = Vec::new();
        let mut points = Vec::new();
        for h in report.history.iter().filter(|h| h.feasible) {
            let config = CloudConfiguration::new(h.vm_index, h.n);
            if seen.contains(&config) {
                continue;
            }
            seen.push(config);
            points.push((
                format!("{}:{}", h.vm, h.n),
                FrontPoint::new(config, h.runtime_estimate_s, h.objective_cost_usd),
            ));
        }
        Ok(points)
    }
}

fn pareto_show(input: &Path, strategy: Option<&str>) -> Result<Vec<u8>> {
    let points = pareto_points(input, strategy)?;
    if points.is_empty() {
        bail!("no feasible observations in {}", input.display());
    }
    let plain: Vec<FrontPoint> = points.iter().map(|(_, p)| *p).collect();
    let front = pareto_front(&plain)?;
    let bounds = ObjectiveBounds::of(&plain.iter().map(|p| (p.runtime_s, p.cost_usd)).collect::<Vec<_>>())
        .context("no points")?;
    csv_bytes(|w| {
        w.write_record([
            "config",
            "runtime_s",
            "cost_usd",
            "norm_runtime",
            "norm_cost",
            "frequency",
            "on_front",
        ])?;
        for (label, p) in &points {
            let [nr, nc] = bounds.normalize(p.runtime_s, p.cost_usd);
            w.write_record([
                label.clone(),
                p.runtime_s.to_string(),
                p.cost_usd.to_string(),
                nr.to_string(),
                nc.to_string(),
                p.selection_frequency.to_string(),
                front.contains(p.config).to_string(),
            ])?;
        }
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    let bytes = match &cli.command {
        Command::Catalog(CatalogCmd::List { catalog }) => {
            catalog_list(catalog.as_deref(), cli.format.unwrap_or(Format::Csv))?
        }
        Command::Synth(SynthCmd::Generate {
            model,
            space,
            workload,
            class,
            pi_fraction,
        }) => synth_generate(
            model,
            space,
            workload,
            class,
            *pi_fraction,
            cli.seed,
            cli.format.unwrap_or(Format::Csv),
        )?,
        Command::Trace(TraceCmd::Validate { trace, space }) => {
            trace_validate(trace, space, cli.format.unwrap_or(Format::Json))?
        }
        Command::Search(SearchCmd::Run(args)) => search_run(args, cli.seed, out, cli.format.unwrap_or(Format::Json))?,
        Command::Bench(BenchCmd::Run { spec }) => {
            if cli.format == Some(Format::Csv) {
                bail!("bench run emits JSON; use `bench export-csv` for CSV");
            }
            bench_run(spec, cli.seed)?
        }
        Command::Bench(BenchCmd::ExportCsv { input }) => {
            if cli.format == Some(Format::Json) {
                bail!("bench export-csv emits CSV only");
            }
            bench_export_csv(input)?
        }
        Command::Pareto(ParetoCmd::Show { input, strategy }) => {
            if cli.format == Some(Format::Json) {
                bail!("pareto show emits CSV only");
            }
            pareto_show(input, strategy.as_deref())?
        }
    };
    emit(out, &bytes)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
