mod commands;
mod config;
mod report;

use std::fmt;
use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::Suite;
use config::{Format, Options, RunConfig};

#[derive(Parser)]
#[command(name = "qmunu", version, about = "Simulate and cross-check the (q, mu, nu)-Boson process and TASEP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    options: Options,
}

#[derive(Subcommand)]
enum Command {
    /// Run identity suites and report the largest residuals.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Monte Carlo runs of the Boson process, TASEP or ring.
    Simulate,
    /// Exact q-moments from the dual Boson chain in rational arithmetic.
    Exact,
    /// q-moments from nested contour integrals.
    Moments,
    /// Fredholm determinant for the q-Laplace transform of x_n(t) + n.
    Fredholm,
    /// Law of x_n(t) + n recovered from exact q-moments.
    Invert,
    /// Ring stationarity experiment.
    Stationarity,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Verify { suite } => {
                let s = clap::ValueEnum::to_possible_value(suite).expect("no skipped variants");
                format!("verify {}", s.get_name())
            }
            Command::Simulate => "simulate".into(),
            Command::Exact => "exact".into(),
            Command::Moments => "moments".into(),
            Command::Fredholm => "fredholm".into(),
            Command::Invert => "invert".into(),
            Command::Stationarity => "stationarity".into(),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage { field: String, message: String },
    Model(qmunu::Error),
    Io(String),
}

impl CliError {
    pub fn usage(field: &str, message: impl Into<String>) -> Self {
        CliError::Usage {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// 1 for numerical tolerance failures, 2 for everything the caller can fix.
    fn exit_code(&self) -> u8 {
        use qmunu::Error as E;
        match self {
            CliError::Model(E::Convergence { .. } | E::TailBound { .. } | E::Truncation { .. } | E::IllConditioned) => 1,
            _ => 2,
        }
    }

    fn report(&self) -> serde_json::Value {
        match self {
            CliError::Usage { field, message } => {
                json!({"status": "error", "kind": "usage", "field": field, "message": message})
            }
            CliError::Model(e) => json!({
                "status": "error",
                "kind": if self.exit_code() == 1 { "tolerance" } else { "input" },
                "message": e.to_string(),
            }),
            CliError::Io(m) => json!({"status": "error", "kind": "io", "message": m}),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage { field, message } => write!(f, "--{field}: {message}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<qmunu::Error> for CliError {
    fn from(e: qmunu::Error) -> Self {
        CliError::Model(e)
    }
}

fn write_artifact(path: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let opts = Options::resolve(cli.options)?;
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(CliError::usage("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let default_format = match cli.command {
        Command::Verify { .. } => Format::Json,
        _ => Format::Csv,
    };
    let format = opts.format.unwrap_or(default_format);
    let cfg = RunConfig::new(cli.command.name(), &opts);
    let report = match cli.command {
        Command::Verify { suite } => commands::verify(suite, &opts)?,
        Command::Simulate => commands::simulate(&opts)?,
        Command::Exact => commands::exact(&opts)?,
        Command::Moments => commands::moments(&opts)?,
        Command::Fredholm => commands::fredholm(&opts)?,
        Command::Invert => commands::invert(&opts)?,
        Command::Stationarity => commands::stationarity(&opts)?,
    };
    if let Some(path) = &opts.plot {
        let plot = report
            .plot
            .as_ref()
            .ok_or_else(|| CliError::usage("plot", format!("`{}` has nothing to plot", cfg.command)))?;
        write_artifact(Some(path), &plot.svg())?;
    }
    let text = report.render(format, &cfg).map_err(|e| CliError::Io(e.to_string()))?;
    write_artifact(opts.out.as_deref(), &text)?;
    if !report.pass {
        eprintln!("{}", json!({"status": "fail", "command": cfg.command, "config_sha256": cfg.hash()}));
    }
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
