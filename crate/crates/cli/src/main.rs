use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpchart_cli::{sweep, synth, CliError, Overrides, RunConfig};
use dpchart_server::{AppState, ServerConfig, Store};

#[derive(Parser)]
#[command(name = "dpchart", version, about = "Differentially private synthetic data that keeps chart patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic dataset and its reports.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate runs over epsilons and weights; writes long-form CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        repeats: Option<usize>,
        /// Parallel runs; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        /// CSV path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        /// Port on the configured listen host; 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Prebuilt UI assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// One value, or a comma-separated list for sweeps.
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ignore pattern weights during generation.
    #[arg(long)]
    baseline: bool,
    /// Noise-free testing mode. Output is NOT differentially private.
    #[arg(long)]
    oracle: bool,
}

impl RunArgs {
    fn load(&self, repeats: Option<usize>) -> Result<dpchart_cli::Prepared, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            input: self.input.clone(),
            schema: self.schema.clone(),
            epsilon: self.epsilon.clone(),
            k: self.k,
            seed: self.seed,
            repeats,
            baseline: self.baseline,
            oracle: self.oracle,
        });
        let p = cfg.prepare()?;
        if p.oracle {
            eprintln!("warning: oracle mode is enabled; outputs are NOT differentially private");
        }
        Ok(p)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { run, out } => {
            let p = run.load(None)?;
            let scheme = synth(&p, &out)?;
            eprintln!("wrote {} synthetic rows to {}", scheme.synthetic().n_rows(), out.display());
            Ok(())
        }
        Command::Sweep { run, repeats, jobs, out } => {
            let p = run.load(repeats)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            let csv = sweep::to_csv(&sweep::sweep(&p, jobs)?);
            match out {
                Some(path) => {
                    std::fs::write(&path, csv).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
                }
                None => std::io::stdout().write_all(csv.as_bytes()).map_err(|e| CliError::Runtime(e.to_string())),
            }
        }
        Command::Serve { port, state_dir, static_dir } => serve(port, state_dir, static_dir),
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn serve(port: Option<u16>, state_dir: Option<PathBuf>, static_dir: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = ServerConfig::from_env().map_err(CliError::Config)?;
    let mut addr: SocketAddr =
        cfg.listen.parse().map_err(|e| CliError::Config(format!("listen address {:?}: {e}", cfg.listen)))?;
    if let Some(p) = port {
        addr.set_port(p);
    }
    if state_dir.is_some() {
        cfg.state_dir = state_dir;
    }
    if static_dir.is_some() {
        cfg.static_dir = static_dir;
    }
    let store = cfg.state_dir.as_deref().map(Store::open).transpose().map_err(|e| CliError::Config(e.to_string()))?;
    let (state, errors) = AppState::new(cfg.settings, store);
    for e in errors {
        eprintln!("warning: skipped stored session: {e}");
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Config(format!("binding {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
        dpchart_server::serve(listener, state, cfg.static_dir, shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    eprintln!("shut down cleanly");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
