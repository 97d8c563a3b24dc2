use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reslab_cli::config::{expand_radii, ExperimentConfig, ExperimentKind};
use reslab_cli::{run, LabError};

#[derive(Parser)]
#[command(name = "lab", version, about = "Loss-landscape and complexity-bound experiments for residual networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key = value config file.
    Run {
        config: PathBuf,
        /// Overrides the `output` key.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Six-point example where a one-block network beats every linear fit.
    Prop1 {
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Three-point example with a non-monotone intermediate representation.
    Nonmonotone {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate the empirical Rademacher complexity of a norm-bounded class.
    Rademacher {
        #[arg(long = "L")]
        depth: usize,
        /// One radius per block, or a single radius for all of them.
        #[arg(long = "M", value_delimiter = ',')]
        radii: Vec<f64>,
        #[arg(long = "n")]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        d_x: usize,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long)]
        restarts: Option<usize>,
        /// Enumerate every sign vector; needs n ≤ 16.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn build(command: Command) -> Result<ExperimentConfig, LabError> {
    let config_error = |message: String| LabError::Config { line: 0, message };
    Ok(match command {
        Command::Run { config, output } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if output.is_some() {
                cfg.output = output;
            }
            cfg
        }
        Command::Prop1 { rho, output } => {
            if !(rho > 0.0) || rho * rho > 1.25 + 1e-12 {
                return Err(config_error(format!("rho must lie in (0, sqrt(5/4)], got {rho}")));
            }
            let mut cfg = ExperimentConfig::new(ExperimentKind::Prop1);
            cfg.rho = rho;
            cfg.output = output;
            cfg.echo.insert("kind".into(), "prop1".into());
            cfg.echo.insert("rho".into(), rho.to_string());
            cfg
        }
        Command::Nonmonotone { output } => {
            let mut cfg = ExperimentConfig::new(ExperimentKind::NonMonotone);
            cfg.output = output;
            cfg.echo.insert("kind".into(), "nonmonotone".into());
            cfg
        }
        Command::Rademacher {
            depth,
            radii,
            samples,
            d_x,
            seeds,
            trials,
            restarts,
            exhaustive,
            output,
        } => {
            let mut cfg = ExperimentConfig::new(ExperimentKind::RademacherSweep);
            cfg.radii = expand_radii(&radii, depth).map_err(config_error)?;
            if cfg.radii.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
                return Err(config_error("radii must be finite and nonnegative".into()));
            }
            if samples == 0 || d_x == 0 || seeds.is_empty() {
                return Err(config_error("n, d_x and seeds must be nonempty".into()));
            }
            if trials < 30 && !exhaustive {
                return Err(config_error("trials must be at least 30".into()));
            }
            let join = |v: &[String]| v.join(",");
            for (k, v) in [
                ("kind", "rademacher_sweep".to_string()),
                ("L", depth.to_string()),
                ("M", join(&radii.iter().map(f64::to_string).collect::<Vec<_>>())),
                ("n", samples.to_string()),
                ("d_x", d_x.to_string()),
                ("seeds", join(&seeds.iter().map(u64::to_string).collect::<Vec<_>>())),
                ("trials", trials.to_string()),
                ("exhaustive", exhaustive.to_string()),
            ] {
                cfg.echo.insert(k.into(), v);
            }
            if let Some(r) = restarts {
                cfg.echo.insert("restarts".into(), r.to_string());
            }
            cfg.n = samples;
            cfg.d_x = d_x;
            cfg.seeds = seeds;
            cfg.trials = trials;
            cfg.restarts = restarts;
            cfg.exhaustive = exhaustive;
            cfg.output = output;
            cfg
        }
    })
}

fn configure_threads() {
    if let Some(n) = std::env::var("LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let cfg = match build(cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = &cfg.output {
        if let Err(e) = report.write_to(dir) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    print!("{}", report.summary_csv());
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    for f in &report.assertion_failures {
        eprintln!("FAILED: {f}");
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
