//! `tlbo`: benchmarks, task validation, terminal sessions and the HTTP service.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.

mod interactive;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::Value;
use tlbo_core::data::read_task;
use tlbo_core::synthetic::{emit_report, run_benchmark, BenchConfig};
use tlbo_core::transform::source_normalize;
use tlbo_core::{Schedule, Session, SessionConfig};
use tlbo_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "tlbo", version, about = "Transfer-learning Bayesian optimization of process parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic benchmark and write curves.csv and summary.json.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Task data utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Interactive optimization sessions.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Parse task files and preview their normalization.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Suggest parameters, read measured quality from stdin, repeat.
    Run {
        #[arg(long, num_args = 1.., required = true)]
        sources: Vec<PathBuf>,
        /// Box as inline JSON `{"x_min": [..], "x_max": [..]}` or a file.
        #[arg(long = "box")]
        bounds: String,
        /// Further session settings (JSON file); `box` is taken from --box.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Save the session here after every measurement; resume if it exists.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Create the session in the service store and serve it instead.
        #[arg(long)]
        serve: bool,
        #[command(flatten)]
        service: ServeArgs,
    },
}

#[derive(clap::Args, Clone)]
struct ServeArgs {
    #[arg(long, env = "TLBO_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "TLBO_DATA_DIR", default_value = "tlbo-data")]
    data_dir: PathBuf,
    /// Default forced-weight schedule for sessions created without one.
    #[arg(long, env = "TLBO_ALPHA0", default_value_t = Schedule::default().alpha0)]
    alpha0: f64,
    #[arg(long, env = "TLBO_ALPHA1", default_value_t = Schedule::default().alpha1)]
    alpha1: f64,
    #[arg(long, env = "TLBO_BETA", default_value_t = Schedule::default().beta)]
    beta: f64,
}

/// Failure with its exit code.
pub(crate) enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

pub(crate) type Outcome = Result<(), Failure>;

pub(crate) trait OrConfig<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrConfig<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn,tlbo_service=info")),
        )
        .init();

    let res = match cli.command {
        Command::Bench {
            config,
            out,
            seed,
            trials,
            iterations,
        } => bench(&config, &out, seed, trials, iterations),
        Command::Data {
            command: DataCommand::Validate { paths },
        } => validate(&paths),
        Command::Session {
            command:
                SessionCommand::Run {
                    sources,
                    bounds,
                    config,
                    seed,
                    snapshot,
                    serve: serve_flag,
                    service,
                },
        } => session_config(&bounds, config.as_deref(), seed).and_then(|cfg| {
            if serve_flag {
                serve_with_session(&sources, cfg, service)
            } else {
                interactive::run(&sources, cfg, snapshot.as_deref())
            }
        }),
        Command::Serve(args) => serve(args),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn bench(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    iterations: Option<usize>,
) -> Outcome {
    let mut cfg: BenchConfig = read_json(config)
        .and_then(|v| Ok(serde_json::from_value(v)?))
        .with_context(|| format!("bench config {}", config.display()))
        .config_err()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    cfg.validate().config_err()?;
    let report = run_benchmark(&cfg).runtime_err()?;
    let (csv, json) = emit_report(&report, out).runtime_err()?;
    let mut stdout = std::io::stdout().lock();
    for s in &report.strategies {
        let _ = writeln!(
            stdout,
            "{:<14} reached threshold in {:>3}/{} trials",
            s.name(),
            report.successes(*s),
            report.trials
        );
    }
    let _ = writeln!(stdout, "wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn validate(paths: &[PathBuf]) -> Outcome {
    let mut stdout = std::io::stdout().lock();
    for path in paths {
        let d = read_task(path).config_err()?;
        let (_, t) = source_normalize(&d).config_err()?;
        let (lo, hi) = d
            .outputs()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(*y), b.max(*y)));
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(stdout, "{}: task `{}`", path.display(), d.task_id);
        let _ = writeln!(stdout, "  dim      {}", d.dim());
        let _ = writeln!(stdout, "  N        {}", d.len());
        let _ = writeln!(stdout, "  y range  [{lo:.6}, {hi:.6}]");
        let _ = writeln!(stdout, "  x_hat    [{}]", fmt(&t.input_shift));
        let _ = writeln!(stdout, "  delta_x  [{}]", fmt(&t.input_scale));
        let _ = writeln!(stdout, "  mu       {:.6}", t.output_mean);
        let _ = writeln!(stdout, "  sigma    {:.6}", t.output_std);
        if !t.floored_dims.is_empty() {
            let _ = writeln!(stdout, "  note     constant inputs in dims {:?}, scale set to 1", t.floored_dims);
        }
        if t.std_floored {
            let _ = writeln!(stdout, "  note     constant outputs, sigma floored");
        }
    }
    Ok(())
}

fn session_config(bounds: &str, config: Option<&Path>, seed: Option<u64>) -> Result<SessionConfig, Failure> {
    let bounds: Value = match serde_json::from_str(bounds) {
        Ok(v) => v,
        Err(_) => read_json(Path::new(bounds)).config_err()?,
    };
    let mut cfg = match config {
        Some(p) => read_json(p).config_err()?,
        None => Value::Object(Default::default()),
    };
    let obj = cfg
        .as_object_mut()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("session config must be a JSON object")))?;
    obj.insert("box".into(), bounds);
    if let Some(s) = seed {
        obj.insert("seed".into(), s.into());
    }
    serde_json::from_value(cfg).context("session config").config_err()
}

pub(crate) fn load_sources(paths: &[PathBuf]) -> Result<Vec<tlbo_core::TaskDataset>, Failure> {
    paths.iter().map(|p| read_task(p).config_err()).collect()
}

fn service_config(args: &ServeArgs) -> Result<ServiceConfig, Failure> {
    let schedule = Schedule {
        alpha0: args.alpha0,
        alpha1: args.alpha1,
        beta: args.beta,
    };
    if !schedule.is_valid() {
        return Err(Failure::Config(anyhow::anyhow!("invalid default schedule")));
    }
    Ok(ServiceConfig {
        listen: args.listen,
        data_dir: args.data_dir.clone(),
        default_schedule: schedule,
    })
}

fn run_service(cfg: ServiceConfig) -> Outcome {
    let rt = tokio::runtime::Runtime::new().runtime_err()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))
            .runtime_err()?;
        println!("listening on http://{}", listener.local_addr().runtime_err()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        tlbo_service::serve(cfg, listener, shutdown).await.runtime_err()
    })
}

fn serve(args: ServeArgs) -> Outcome {
    run_service(service_config(&args)?)
}

fn serve_with_session(sources: &[PathBuf], cfg: SessionConfig, args: ServeArgs) -> Outcome {
    let svc = service_config(&args)?;
    let session = Session::create(load_sources(sources)?, cfg).config_err()?;
    let store = tlbo_service::Store::open(&svc.data_dir, svc.default_schedule).runtime_err()?;
    let id = store.insert(session).runtime_err()?;
    println!("session {id}");
    drop(store);
    run_service(svc)
}
