//! `rrdps`: command-line front end.
//!
//! Settings are resolved in three layers: built-in defaults, then the JSON
//! file given by `--config`, then individual flags. The merged configuration
//! is validated once before any work starts and echoed in every output
//! header.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rrdps_core::interferometer::{self, SchemeKind};
use rrdps_core::{model, montecarlo, optimize, output, Error, Objective, RunConfig};

#[derive(Parser)]
#[command(name = "rrdps", version, about = "Round-robin DPS QKD rate analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the predicted key rate at one length and μ.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Exit with status 3 when the rate is zero.
        #[arg(long)]
        require_key: bool,
    },
    /// Optimize μ at each sweep length.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte Carlo session and compare with the analytic model.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write sifted bits to PREFIX.alice and PREFIX.bob, one byte per bit.
        #[arg(long, value_name = "PREFIX")]
        key_dump: Option<PathBuf>,
    },
    /// Per-delay loss table and summary of an interferometer scheme.
    Scheme {
        #[command(flatten)]
        common: Common,
    },
    /// Longest fiber with positive optimized rate.
    Maxdist {
        #[command(flatten)]
        common: Common,
        /// Bisection tolerance, km.
        #[arg(long, default_value_t = 0.5)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Fiber length, km.
    #[arg(long, value_name = "KM")]
    length: Option<f64>,
    /// Sweep lengths, km, comma separated. The bare flag gives an empty sweep.
    #[arg(long, value_name = "KM,...", value_delimiter = ',', num_args = 0..)]
    lengths: Option<Vec<f64>>,
    /// Mean photon number per pulse.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo packets.
    #[arg(long)]
    packets: Option<u64>,
    /// Monte Carlo threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<SchemeKind>,
    /// Measured per-delay loss table (CSV).
    #[arg(long, value_name = "PATH")]
    il_table: Option<PathBuf>,
    /// Add the arm-imbalance visibility error to e_s.
    #[arg(long)]
    visibility: bool,
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "asymptotic" => Ok(Objective::Asymptotic),
        "finite" => Ok(Objective::Finite),
        _ => Err(format!("expected 'asymptotic' or 'finite', got '{s}'")),
    }
}

fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    s.parse::<SchemeKind>().map_err(|e| e.to_string())
}

impl Common {
    fn resolve(&self) -> rrdps_core::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.length {
            c.length_km = v;
        }
        if let Some(v) = &self.lengths {
            c.lengths_km = v.clone();
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.packets {
            c.packets = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = self.objective {
            c.objective = v;
        }
        if let Some(v) = self.scheme {
            c.scheme = v;
        }
        if let Some(v) = &self.il_table {
            c.il_table = Some(v.clone());
        }
        if self.visibility {
            c.visibility_extension = true;
        }
        c.validate()?;
        Ok(c)
    }

    fn emit(&self, text: &str) -> rrdps_core::Result<()> {
        match &self.out {
            Some(path) => fs::write(path, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn to_json(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    text
}

enum Outcome {
    Done,
    NoKey,
}

fn run(cli: Cli) -> rrdps_core::Result<Outcome> {
    match cli.command {
        Command::Rate { common, require_key } => {
            let config = common.resolve()?;
            let table = config.load_table()?;
            let link = config.analytic_link(table.as_ref());
            let report = model::predicted_report_with(&config.protocol(), &link, config.objective)?;
            let text = if common.json {
                to_json(&json!({ "config": config, "report": report }))
            } else {
                output::rate_csv(&config, &report)
            };
            common.emit(&text)?;
            let rate = match config.objective {
                Objective::Asymptotic => report.rate,
                Objective::Finite => report.rate_finite,
            };
            if require_key && rate <= 0.0 {
                return Ok(Outcome::NoKey);
            }
        }
        Command::Sweep { common } => {
            let config = common.resolve()?;
            let table = config.load_table()?;
            let link = config.analytic_link(table.as_ref());
            let points = optimize::distance_sweep(&config.protocol(), &link, &config.lengths_km, config.objective)?;
            let text = if common.json {
                to_json(&json!({ "config": config, "points": points }))
            } else {
                output::sweep_csv(&config, &points)
            };
            common.emit(&text)?;
        }
        Command::Simulate { common, key_dump } => {
            let config = common.resolve()?;
            let table = config.load_table()?;
            let link = config.analytic_link(table.as_ref());
            let protocol = config.protocol();
            let analytic = match model::predicted_report(&protocol, &link) {
                Ok(report) => Some(report),
                Err(Error::UndefinedErrorRate) => None,
                Err(e) => return Err(e),
            };
            let options = montecarlo::SessionOptions {
                table,
                ..config.session_options()
            };
            let run = montecarlo::run_session(&protocol, &config.link(), &options)?;
            if let Some(prefix) = key_dump {
                fs::write(with_suffix(&prefix, "alice"), &run.alice_key)?;
                fs::write(with_suffix(&prefix, "bob"), &run.bob_key)?;
            }
            let text = if common.json {
                to_json(&json!({
                    "config": config,
                    "stats": run.stats,
                    "rates": run.rates,
                    "analytic": analytic,
                }))
            } else {
                output::session_csv(&config, &run, analytic.as_ref())
            };
            common.emit(&text)?;
        }
        Command::Scheme { common } => {
            let config = common.resolve()?;
            let spec = config.scheme_spec();
            let mut report = interferometer::scheme_report(&spec)?;
            let entries = match config.load_table()? {
                Some(table) => {
                    let entries = table.loss_entries()?;
                    report = report.with_measured(&entries);
                    entries
                }
                None => interferometer::scheme_loss_table(&spec)?,
            };
            let text = if common.json {
                to_json(&json!({ "config": config, "summary": report, "delays": entries }))
            } else {
                output::scheme_csv(&config, &entries, &report)
            };
            common.emit(&text)?;
        }
        Command::Maxdist { common, tolerance } => {
            let config = common.resolve()?;
            if !(tolerance.is_finite() && tolerance > 0.0) {
                return Err(Error::Config(format!(
                    "invalid tolerance: must be > 0, got {tolerance}"
                )));
            }
            let table = config.load_table()?;
            let link = config.analytic_link(table.as_ref());
            let search = optimize::DistanceSearch {
                tolerance_km: tolerance,
                objective: config.objective,
                ..Default::default()
            };
            let result = optimize::max_distance(&config.protocol(), &link, &search)?;
            let text = if common.json {
                to_json(&json!({ "config": config, "max_distance": result }))
            } else {
                output::max_distance_csv(&config, &result)
            };
            common.emit(&text)?;
        }
    }
    Ok(Outcome::Done)
}

fn with_suffix(prefix: &std::path::Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NoKey) => {
            eprintln!("rrdps: no positive key rate");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("rrdps: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
