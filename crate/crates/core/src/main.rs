use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selfpred::harness::{self, ExperimentConfig, Format, Manifest, Table};
use selfpred::Result;

#[derive(Parser)]
#[command(name = "selfpred", version, about = "Self-predictive representation dynamics on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Negative trace objectives of each trained representation.
    CrossTable(Overrides),
    /// V, Q and advantage fit errors of each trained representation.
    ValueMse(Overrides),
    /// Subspace shift of each objective's limit under policy perturbations.
    Robustness(Overrides),
    /// Trace-ratio curves on non-symmetric MDPs.
    TraceRatio(Overrides),
    /// Criterion scores and selected eigenvectors on a two-action fixture.
    EigenDemo(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// JSON config file; fields not given fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_states: Option<usize>,
    #[arg(long)]
    n_actions: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_mdps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<Format>,
}

impl Overrides {
    fn resolve(&self, default_actions: usize) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig { n_actions: default_actions, ..ExperimentConfig::default() },
        };
        if let Some(v) = self.n_states {
            cfg.n_states = v;
        }
        if let Some(v) = self.n_actions {
            cfg.n_actions = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.n_mdps {
            cfg.n_mdps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit<T: serde::Serialize>(cfg: &ExperimentConfig, result: (T, Vec<Table>, Manifest)) -> Result<()> {
    let (summary, tables, manifest) = result;
    let paths = harness::write_outputs(&cfg.output_dir, cfg.format, &tables, manifest)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CrossTable(o) => {
            let cfg = o.resolve(4)?;
            emit(&cfg, harness::run_cross_objective_table(&cfg)?)
        }
        Command::ValueMse(o) => {
            let cfg = o.resolve(4)?;
            emit(&cfg, harness::run_value_mse_table(&cfg)?)
        }
        Command::Robustness(o) => {
            let cfg = o.resolve(4)?;
            emit(&cfg, harness::run_robustness_table(&cfg)?)
        }
        Command::TraceRatio(o) => {
            let cfg = o.resolve(4)?;
            let (curves, tables, manifest) = harness::run_trace_ratio_curves(&cfg)?;
            // The per-run curves are large; print only the medians' endpoints.
            let summary = serde_json::json!({
                "pi": {"initial": curves.pi.median.first(), "final": curves.pi.median.last(), "excluded": curves.pi.excluded},
                "ac": {"initial": curves.ac.median.first(), "final": curves.ac.median.last(), "excluded": curves.ac.excluded},
                "skipped": curves.n_skipped,
            });
            emit(&cfg, (summary, tables, manifest))
        }
        Command::EigenDemo(o) => {
            let cfg = o.resolve(2)?;
            emit(&cfg, harness::run_eigen_picking_demo(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
