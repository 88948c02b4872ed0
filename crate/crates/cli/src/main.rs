use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cclsim::harness::{
    list_scenarios, load_run_config, run_loaded_config, run_scenario, validate_loaded_config,
    Diagnostic, HarnessError, Outcome, Overrides, ScenarioParams, Severity,
};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use tracing::{info, warn};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE: u8 = 3;

/// Deterministic simulator for collective-communication transports.
///
/// Settings can be forced with CCLSIM_IB_TIMEOUT, CCLSIM_IB_RETRY_CNT,
/// CCLSIM_WINDOW_SIZE, CCLSIM_QP_NUMBER and CCLSIM_CHANNEL_NUMBER.
#[derive(Debug, Parser)]
#[command(name = "cclsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run builtin scenarios or TOML run configs.
    Run(RunArgs),
    /// List builtin scenarios.
    List,
    /// Check a run config without running it.
    Validate { path: PathBuf },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Scenario names or config file paths.
    #[arg(required = true)]
    targets: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Each target writes into its own subdirectory. Defaults to `out`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Monitor window sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    window_sizes: Option<Vec<usize>>,
    /// Targets run in parallel on this many threads.
    #[arg(long, short, default_value_t = 1)]
    jobs: usize,
    /// Trial count for randomized scenarios.
    #[arg(long)]
    trials: Option<u32>,
    /// Print each summary as JSON instead of one line.
    #[arg(long)]
    json: bool,
}

enum Target {
    Scenario(&'static str),
    Config {
        cfg: Box<cclsim::harness::RunConfig>,
        base: PathBuf,
    },
}

impl Target {
    fn name(&self) -> &str {
        match self {
            Target::Scenario(n) => n,
            Target::Config { cfg, .. } => &cfg.name,
        }
    }
}

fn print_diags(origin: &str, diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{origin}: {d}");
    }
}

fn has_error(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

fn overrides() -> Result<Overrides, ExitCode> {
    Overrides::from_env().map_err(|d| {
        print_diags("environment", &d);
        ExitCode::from(EXIT_CONFIG)
    })
}

fn resolve(arg: &str, args: &RunArgs, ov: &Overrides) -> Result<Target, Vec<Diagnostic>> {
    if let Some(s) = list_scenarios().iter().find(|s| s.name == arg) {
        return Ok(Target::Scenario(s.name));
    }
    let path = Path::new(arg);
    if !path.exists() && path.extension().is_none() {
        let names: Vec<_> = list_scenarios().iter().map(|s| s.name).collect();
        return Err(vec![Diagnostic::error(
            "target",
            format!(
                "`{arg}` is neither a scenario ({}) nor a config file",
                names.join(", ")
            ),
        )]);
    }
    let mut cfg = load_run_config(path, ov)?;
    if let Some(w) = &args.window_sizes {
        cfg.window_sizes = w.clone();
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let diags = validate_loaded_config(cfg.clone(), &base);
    if has_error(&diags) {
        return Err(diags);
    }
    print_diags(arg, &diags);
    Ok(Target::Config {
        cfg: Box::new(cfg),
        base,
    })
}

fn run_one(
    t: &Target,
    params: &ScenarioParams,
    out_root: Option<&Path>,
) -> anyhow::Result<Outcome> {
    let root = out_root.unwrap_or(Path::new("out"));
    let (mut out, dir) = match t {
        Target::Scenario(name) => (run_scenario(name, params)?, root.join(name)),
        Target::Config { cfg, base } => {
            let dir = match (&cfg.out_dir, out_root) {
                (Some(d), None) => base.join(d),
                _ => root.join(&cfg.name),
            };
            (run_loaded_config((**cfg).clone(), base)?, dir)
        }
    };
    let written = out
        .write(&dir)
        .with_context(|| format!("writing outputs for {}", t.name()))?;
    info!(target = t.name(), files = written.len(), dir = %dir.display(), "outputs written");
    Ok(out)
}

fn run(args: RunArgs) -> ExitCode {
    let ov = match overrides() {
        Ok(o) => o,
        Err(c) => return c,
    };
    if let Some(w) = &args.window_sizes {
        if w.contains(&0) {
            eprintln!("error: --window-sizes: window size must be ≥ 1");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if args.jobs == 0 {
        eprintln!("error: --jobs must be ≥ 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let mut targets = Vec::new();
    let mut bad = false;
    for a in &args.targets {
        match resolve(a, &args, &ov) {
            Ok(t) => targets.push(t),
            Err(d) => {
                print_diags(a, &d);
                bad = true;
            }
        }
    }
    if bad {
        return ExitCode::from(EXIT_CONFIG);
    }

    let params = ScenarioParams {
        seed: args.seed,
        window_sizes: args.window_sizes.clone(),
        overrides: ov,
        trials: args.trials,
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let results: Vec<_> = pool.install(|| {
        targets
            .par_iter()
            .map(|t| run_one(t, &params, args.out_dir.as_deref()))
            .collect()
    });

    let mut code = ExitCode::SUCCESS;
    for (t, r) in targets.iter().zip(results) {
        match r {
            Ok(out) => {
                if args.json {
                    print!("{}", out.summary.to_json());
                } else {
                    println!("{}", out.summary);
                }
                if !out.summary.status.is_completed() {
                    code = ExitCode::from(EXIT_FAILURE);
                }
            }
            Err(e) => {
                let config = matches!(
                    e.downcast_ref::<HarnessError>(),
                    Some(HarnessError::Config(_))
                );
                eprintln!("{}: error: {e:#}", t.name());
                code = ExitCode::from(if config { EXIT_CONFIG } else { EXIT_FAILURE });
            }
        }
    }
    code
}

fn validate(path: &Path) -> ExitCode {
    let ov = match overrides() {
        Ok(o) => o,
        Err(c) => return c,
    };
    let diags = cclsim::harness::validate_config(path, &ov);
    let origin = path.display().to_string();
    print_diags(&origin, &diags);
    if has_error(&diags) {
        return ExitCode::from(EXIT_CONFIG);
    }
    if diags.is_empty() {
        println!("{origin}: ok");
    } else {
        warn!(warnings = diags.len(), "config valid with warnings");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::List => {
            for s in list_scenarios() {
                println!("{:<24} {}", s.name, s.description);
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { path } => validate(&path),
        Cmd::Run(args) => run(args),
    }
}
