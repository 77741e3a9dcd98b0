use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use peftopt::gp::FitOptions;
use peftopt::objectives::{load_tabular, Backend, SyntheticLandscapeSpec, WorkerClient};
use peftopt::orchestrator::{self, RunConfig, RunMode, RunState};
use peftopt::pareto::ParetoFront;
use peftopt::space::SearchSpaceSpec;
use peftopt::Error;

#[derive(Parser)]
#[command(
    name = "peftopt",
    version,
    about = "Search PEFT configurations for accuracy and size"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Describe a search space.
    Space(SpaceArgs),
    /// Run the surrogate-guided search.
    Search(RunArgs),
    /// Run uniform random search with the same budget.
    Random(RunArgs),
    /// Evaluate the all-layers lockstep scaling family.
    Scaling(RunArgs),
    /// Print the Pareto front of a state file.
    Pareto(StateArgs),
    /// Print the hypervolume trajectory of a state file as CSV.
    Hv(StateArgs),
    /// Write front and trajectory CSVs for a state file.
    Export(ExportArgs),
}

#[derive(Args)]
struct SpaceSource {
    /// JSON file with num_layers, hidden_dim, size_grid, base_param_count.
    #[arg(long, conflicts_with = "preset")]
    space_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::BertBase)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    BertBase,
    BertLarge,
}

#[derive(Args)]
struct SpaceArgs {
    #[command(flatten)]
    space: SpaceSource,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendKind {
    Synthetic,
    Tabular,
    Worker,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    space: SpaceSource,
    #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
    backend: BackendKind,
    #[arg(long, default_value_t = 0)]
    landscape_seed: u64,
    /// Observation noise of the synthetic landscape at full fidelity.
    #[arg(long, default_value_t = 0.2)]
    noise_sd: f64,
    #[arg(long)]
    tabular_file: Option<PathBuf>,
    /// Shell command that starts an evaluation worker.
    #[arg(long)]
    worker_cmd: Option<String>,
    /// Seconds to wait for one worker response.
    #[arg(long, default_value_t = 3600)]
    worker_timeout: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n_init: usize,
    #[arg(long, default_value_t = 200)]
    n_total: usize,
    #[arg(long, default_value_t = 1)]
    batch_q: usize,
    #[arg(long, default_value_t = 0.05)]
    fidelity: f64,
    #[arg(long, default_value_t = 128)]
    mc_samples: usize,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Optimizer steps per restart.
    #[arg(long, default_value_t = 200)]
    fit_steps: usize,
    #[arg(long, default_value_t = 1)]
    refit_every: usize,
    /// Allow re-evaluating configurations.
    #[arg(long)]
    allow_repeats: bool,
    /// Fit a surrogate for cost instead of using exact parameter fractions.
    #[arg(long)]
    model_cost: bool,
    /// Output directory for front.jsonl, observations.jsonl and hv.csv.
    #[arg(long)]
    out: PathBuf,
    /// State snapshot path; defaults to state.jsonl in the output directory.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Continue from the state snapshot instead of starting over.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct StateArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpace(_)
            | Error::InvalidConfiguration(_)
            | Error::InvalidRun(_)
            | Error::StateMismatch(_)
            | Error::Parse { .. }
            | Error::DuplicateKey { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Space(a) => space_info(&a),
        Command::Search(a) => run_cmd(&a, Mode::Search),
        Command::Random(a) => run_cmd(&a, Mode::Random),
        Command::Scaling(a) => run_cmd(&a, Mode::Scaling),
        Command::Pareto(a) => pareto_cmd(&a),
        Command::Hv(a) => hv_cmd(&a),
        Command::Export(a) => export_cmd(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_space(src: &SpaceSource) -> CliResult<SearchSpaceSpec> {
    let Some(path) = &src.space_file else {
        return Ok(match src.preset {
            Preset::BertBase => SearchSpaceSpec::bert_base(),
            Preset::BertLarge => SearchSpaceSpec::bert_large(),
        });
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let space: SearchSpaceSpec =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    space.validate()?;
    Ok(space)
}

fn space_info(args: &SpaceArgs) -> CliResult<()> {
    let space = load_space(&args.space)?;
    let grid: Vec<String> = space.size_grid.iter().map(u64::to_string).collect();
    let full = space.full_config();
    let report = format!(
        "num_layers: {}\nhidden_dim: {}\nsize_grid: {}\ncardinality: {}\nmin_params: 0 (0.0000%)\nmax_params: {} ({:.4}%)\n",
        space.num_layers,
        space.hidden_dim,
        grid.join(" "),
        space.cardinality(),
        space.param_count(&full)?,
        100.0 * space.param_fraction(&full)?
    );
    print!("{report}");
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Search,
    Random,
    Scaling,
}

fn build_backend(args: &RunArgs, space: &SearchSpaceSpec) -> CliResult<Box<dyn Backend>> {
    Ok(match args.backend {
        BackendKind::Synthetic => {
            let spec = SyntheticLandscapeSpec {
                noise_sd: args.noise_sd,
                ..SyntheticLandscapeSpec::with_seed(args.landscape_seed)
            };
            Box::new(spec.build(space)?)
        }
        BackendKind::Tabular => {
            let path = args
                .tabular_file
                .as_ref()
                .ok_or_else(|| Failure::Usage("--backend tabular needs --tabular-file".into()))?;
            Box::new(load_tabular(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?)
        }
        BackendKind::Worker => {
            let cmd = args
                .worker_cmd
                .as_ref()
                .ok_or_else(|| Failure::Usage("--backend worker needs --worker-cmd".into()))?;
            Box::new(WorkerClient::new(cmd.clone(), Duration::from_secs(args.worker_timeout)))
        }
    })
}

fn run_cmd(args: &RunArgs, mode: Mode) -> CliResult<()> {
    let space = load_space(&args.space)?;
    let state_path = args.state.clone().unwrap_or_else(|| args.out.join("state.jsonl"));
    let log_path = args.out.join("observations.jsonl");
    let mut config = RunConfig::new(space.clone(), args.seed);
    config.n_init = args.n_init;
    config.n_total = args.n_total;
    config.batch_q = args.batch_q;
    config.fidelity = args.fidelity;
    config.mc_samples = args.mc_samples;
    config.fit = FitOptions {
        restarts: args.restarts,
        steps: args.fit_steps,
        ..FitOptions::default()
    };
    config.refit_every = args.refit_every;
    config.dedup = !args.allow_repeats;
    config.model_cost = args.model_cost;
    if mode != Mode::Scaling {
        config.validate()?;
    }
    if args.resume && mode == Mode::Scaling {
        return Err(Failure::Usage("--resume does not apply to scaling".into()));
    }
    if args.resume && !state_path.exists() {
        return Err(Failure::Usage(format!("no state file at {}", state_path.display())));
    }
    let backend = build_backend(args, &space)?;

    fs::create_dir_all(&args.out)?;
    if !args.resume {
        for p in [&log_path, &state_path] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    config.state_path = Some(state_path.clone());
    config.log_path = Some(log_path.clone());

    let outcome = match mode {
        Mode::Search if args.resume => orchestrator::resume(&config, backend.as_ref(), &state_path),
        Mode::Random if args.resume => orchestrator::resume(&config, backend.as_ref(), &state_path),
        Mode::Search => orchestrator::run(&config, backend.as_ref()),
        Mode::Random => orchestrator::random_search(&config, backend.as_ref()),
        Mode::Scaling => orchestrator::scaling_baseline(&config, backend.as_ref()).and_then(|s| {
            write_records(&log_path, &s)?;
            Ok(s)
        }),
    };
    let state = match outcome {
        Ok(s) => s,
        Err(Error::Interrupted {
            completed,
            resume,
            source,
        }) => {
            let hint = resume
                .map(|p| format!("; resume with --resume --state {}", p.display()))
                .unwrap_or_default();
            return Err(Failure::Runtime(format!(
                "stopped after {completed} evaluations: {source}{hint}"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    if args.resume {
        let (header, _) = orchestrator::load_state(&state_path)?;
        let expected = if mode == Mode::Random {
            RunMode::Random
        } else {
            RunMode::Bayesian
        };
        if header.mode != expected {
            eprintln!("note: state was produced by a {:?} run", header.mode);
        }
    }
    let front = state.front();
    write_front_jsonl(&args.out.join("front.jsonl"), &front)?;
    write_hv_csv(&args.out.join("hv.csv"), &state)?;
    print_summary(&front);
    Ok(())
}

fn write_records(path: &Path, state: &RunState) -> peftopt::Result<()> {
    if path.exists() {
        fs::remove_file(path)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    for t in &state.trials {
        let o = &t.observation;
        writeln!(
            out,
            "{{\"config\":{},\"score\":{},\"cost\":{},\"fidelity\":{},\"seed\":{},\"iteration\":{},\"wall_time_s\":{}}}",
            o.config.canonical(),
            orchestrator::format_f64(o.score),
            orchestrator::format_f64(o.cost),
            orchestrator::format_f64(o.fidelity),
            o.seed,
            t.iteration,
            orchestrator::format_f64(o.wall_time_s)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_front_jsonl(path: &Path, front: &ParetoFront) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    front.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

fn hv_csv(state: &RunState) -> String {
    let mut text = String::from("evals,hv\n");
    for (n, hv) in &state.trajectory {
        text.push_str(&format!("{n},{hv}\n"));
    }
    text
}

fn write_hv_csv(path: &Path, state: &RunState) -> CliResult<()> {
    fs::write(path, hv_csv(state))?;
    Ok(())
}

fn print_summary(front: &ParetoFront) {
    println!("{:<40} {:>10} {:>10}", "config", "score", "cost%");
    for e in front.entries() {
        let c = &e.config;
        let layers: Vec<String> = c.layers().iter().map(usize::to_string).collect();
        let label = format!("L[{}] sa={} pa={} pt={}", layers.join(","), c.d_sa, c.d_pa, c.l_pt);
        println!(
            "{:<40} {:>10.4} {:>10.4}",
            label,
            e.objectives.score,
            100.0 * e.objectives.cost
        );
    }
}

fn pareto_cmd(args: &StateArgs) -> CliResult<()> {
    let (_, state) = orchestrator::load_state(&args.state)?;
    let front = state.front();
    let mut buf = Vec::new();
    match args.format {
        Format::Jsonl => front.write_jsonl(&mut buf)?,
        Format::Csv => front.write_csv(&mut buf)?,
    }
    std::io::stdout().write_all(&buf)?;
    Ok(())
}

fn hv_cmd(args: &StateArgs) -> CliResult<()> {
    let (_, state) = orchestrator::load_state(&args.state)?;
    print!("{}", hv_csv(&state));
    Ok(())
}

fn export_cmd(args: &ExportArgs) -> CliResult<()> {
    let (_, state) = orchestrator::load_state(&args.state)?;
    fs::create_dir_all(&args.out)?;
    let mut front = Vec::new();
    state.front().write_csv(&mut front)?;
    fs::write(args.out.join("front.csv"), front)?;
    write_hv_csv(&args.out.join("hv.csv"), &state)?;
    Ok(())
}
