use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use bbcount::cfg::{family, generate_dataset, CfgProgram, GridSpec, Interpreter, DEFAULT_STEP_BUDGET};
use bbcount::eval::ModelChoice;
use bbcount::experiment::{prepare_out_dir, run_experiment, run_sweep, Manifest, ModelDoc, RunConfig};
use bbcount::trace::{SplitMode, TraceWriter};

#[derive(Parser, Debug)]
#[command(name = "bbcount", version, about = "Generate basic-block count traces and train count predictors")]
struct Cli {
    /// Seed for splits and model initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (generate, predict) or directory (experiment, sweep).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overwrite existing output.
    #[arg(long, global = true)]
    force: bool,
    /// TOML file with run settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum block entries per interpretation.
    #[arg(long, global = true)]
    step_budget: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Interpret programs over a parameter grid and write a trace CSV.
    Generate(GenerateArgs),
    /// Split, train, evaluate and write a report directory.
    Experiment(RunArgs),
    /// Learning curves over training fractions of a random split.
    Sweep(SweepArgs),
    /// Predict raw counts with a saved model.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Builtin family; repeatable.
    #[arg(long = "family")]
    families: Vec<String>,
    /// Program in JSON form.
    #[arg(long, conflicts_with = "families")]
    program: Option<PathBuf>,
    /// Grid such as `4x4x4`, `1:64:8` or `10,20,30`; families default to their own.
    #[arg(long)]
    grid: Option<GridSpec>,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Trace CSV; repeatable.
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    /// Builtin family; repeatable.
    #[arg(long = "family")]
    families: Vec<String>,
    #[arg(long)]
    grid: Option<GridSpec>,
    /// high-low, mixed-high-low or random.
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    fraction: Option<f64>,
    /// pnn, brbpnn or both.
    #[arg(long)]
    model: Option<ModelChoice>,
    #[arg(long)]
    br_hidden: Option<usize>,
    #[arg(long)]
    br_epochs: Option<usize>,
    #[arg(long)]
    pnn_epochs: Option<usize>,
    #[arg(long)]
    pnn_batch: Option<usize>,
    #[arg(long)]
    pnn_lr: Option<f64>,
    #[arg(long)]
    pnn_hidden: Option<usize>,
    #[arg(long)]
    heatmap_bins: Option<usize>,
    /// Rerun with the configuration recorded in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated training fractions, increasing, each in (0, 1).
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Saved model document.
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated parameter vector; repeatable.
    #[arg(long = "params", required = true)]
    params: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bbcount: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Generate(args) => generate(&cli, args),
        Command::Experiment(args) => {
            let cfg = run_config(&cli, args)?;
            let out = out_dir(&cli)?;
            let outcome = run_experiment(&cfg, &out, cli.workers)?;
            println!(
                "{} evaluations, {} failures; summary in {}",
                outcome.manifest.evaluations,
                outcome.manifest.failures,
                out.join("summary.csv").display()
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let mut cfg = run_config(&cli, &args.run)?;
            if let Some(f) = &args.fractions {
                cfg.fractions = f.clone();
            }
            let out = out_dir(&cli)?;
            let outcome = run_sweep(&cfg, &out, cli.workers)?;
            println!("{} curves; summary in {}", outcome.curves.len(), out.join("curve_summary.csv").display());
            Ok(())
        }
        Command::Predict(args) => predict(&cli, args),
    }
}

fn out_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    prepare_out_dir(&out, cli.force)?;
    Ok(out)
}

/// Defaults, then the manifest or config file, then flags.
fn run_config(cli: &Cli, args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&args.manifest, &cli.config) {
        (Some(path), _) => Manifest::load(path).with_context(|| format!("reading {}", path.display()))?.config,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => RunConfig::default(),
    };
    if !args.traces.is_empty() {
        cfg.traces = args.traces.clone();
    }
    if !args.families.is_empty() {
        cfg.families = args.families.clone();
    }
    for path in &cfg.traces {
        if !path.exists() {
            bail!("trace file {} does not exist", path.display());
        }
    }
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    if args.grid.is_some() {
        cfg.grid = args.grid.clone();
    }
    if args.br_hidden.is_some() {
        cfg.br_hidden = args.br_hidden;
    }
    set!(cli.seed => cfg.seed);
    set!(cli.step_budget => cfg.step_budget);
    set!(args.split => cfg.split);
    set!(args.fraction => cfg.fraction);
    set!(args.model => cfg.model);
    set!(args.br_epochs => cfg.settings.br.max_epochs);
    set!(args.pnn_epochs => cfg.settings.pnn.epochs);
    set!(args.pnn_batch => cfg.settings.pnn.batch_size);
    set!(args.pnn_lr => cfg.settings.pnn.learning_rate);
    set!(args.pnn_hidden => cfg.settings.pnn.hidden);
    set!(args.heatmap_bins => cfg.heatmap_bins);
    Ok(cfg)
}

fn output_file(cli: &Cli) -> anyhow::Result<Box<dyn Write>> {
    match &cli.out {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(path) => {
            if path.exists() && !cli.force {
                bail!("{} already exists; pass --force to overwrite", path.display());
            }
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Ok(Box::new(BufWriter::new(File::create(path)?)))
        }
    }
}

fn generate(cli: &Cli, args: &GenerateArgs) -> anyhow::Result<()> {
    let mut programs: Vec<(CfgProgram, GridSpec)> = Vec::new();
    if let Some(path) = &args.program {
        let program = CfgProgram::from_json(&fs::read_to_string(path)?)
            .with_context(|| format!("loading {}", path.display()))?;
        let Some(grid) = args.grid.clone() else { bail!("--grid is required with --program") };
        programs.push((program, grid));
    }
    for name in &args.families {
        let fam = family(name).ok_or_else(|| bbcount::experiment::ExperimentError::UnknownFamily { name: name.clone() })?;
        let grid = args.grid.clone().unwrap_or_else(|| fam.default_grid.clone());
        programs.push((fam.program, grid));
    }
    if programs.is_empty() {
        bail!("nothing to generate: give --family or --program");
    }
    let interpreter = Interpreter::with_budget(cli.step_budget.unwrap_or(DEFAULT_STEP_BUDGET));
    let arity = programs.iter().map(|(p, _)| p.arity()).max().unwrap_or(1);
    let mut sink = TraceWriter::new(output_file(cli)?, arity)?;
    let mut records = 0;
    for (program, grid) in &programs {
        records += generate_dataset(program, grid, &interpreter, &mut sink)
            .with_context(|| format!("generating {}", program.name()))?;
    }
    sink.flush()?;
    if cli.out.is_some() {
        println!("{records} records");
    }
    Ok(())
}

fn parse_params(text: &str) -> anyhow::Result<Vec<i64>> {
    text.split(',')
        .map(|v| v.trim().parse::<i64>().with_context(|| format!("bad parameter {v:?} in {text:?}")))
        .collect()
}

fn predict(cli: &Cli, args: &PredictArgs) -> anyhow::Result<()> {
    let doc = ModelDoc::load(Path::new(&args.model)).with_context(|| format!("loading {}", args.model.display()))?;
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(output_file(cli)?);
    let arity = doc.normalizer.feature_min.len();
    let mut header: Vec<String> = (0..arity).map(|i| format!("p{i}")).collect();
    header.push("predicted".into());
    out.write_record(&header)?;
    for text in &args.params {
        let params = parse_params(text)?;
        let pred = doc.predict(&params)?;
        let mut row: Vec<String> = params.iter().map(i64::to_string).collect();
        row.push(pred.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
