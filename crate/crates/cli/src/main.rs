use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lobsim::experiment::{
    ErrorCategory, Experiment, ExperimentConfig, PipelineError, Reproduction, Stage, REFERENCE_TABLES,
};
use lobsim::features::MergeMode;

#[derive(Parser, Debug)]
#[command(name = "lobsim", version, about = "Limit order book simulation and trader identification experiments")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// Experiment configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of simulation runs
    #[arg(long, global = true)]
    runs: Option<u32>,
    /// Trading horizon in time units of 0.1 s
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Noise merging: none, half or twothirds
    #[arg(long, global = true)]
    merge: Option<MergeMode>,
    /// Feature view: 9 or 18
    #[arg(long, global = true)]
    features: Option<usize>,
    /// Cluster counts, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Artifact directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the simulation batch and write event logs
    Simulate,
    /// Extract features from stored logs
    Features,
    /// Train and evaluate the one-vs-one SVM on a stored dataset
    Classify {
        /// Select hyperparameters on the validation part over the full grid
        #[arg(long)]
        grid: bool,
    },
    /// Hierarchical clustering of a stored dataset
    Cluster,
    /// Return distributions, autocorrelations and activity rates
    Stylized,
    /// Rebuild reference tables end to end and print verdicts
    Reproduce {
        /// Table number (1, 2, 5, 6, 7, 8); repeat for several, omit for all
        #[arg(long = "table", value_delimiter = ',')]
        tables: Vec<u8>,
    },
}

impl Overrides {
    fn config(&self) -> Result<ExperimentConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = Some(v);
        }
        if let Some(v) = self.merge {
            c.merge = v;
        }
        if let Some(v) = self.features {
            c.features = v;
        }
        if let Some(v) = &self.k {
            c.k = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.opts.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("starting worker pool")?;
    }
    let mut config = cli.opts.config()?;
    let out = cli.opts.out_dir.clone();
    match cli.command {
        Command::Simulate => {
            let e = Experiment::new(config, &out)?;
            let logs = e.simulate()?;
            let m = e.stage(Stage::Simulate);
            println!("simulate {} runs, manifest {}", logs.len(), m.hash);
            for log in &logs {
                println!("  run {}: {} records, {} trades", log.run_id, log.records.len(), log.trade_count());
            }
        }
        Command::Features => {
            let e = Experiment::new(config, &out)?;
            let ds = e.build_features(&e.load_logs()?)?;
            let m = e.stage(Stage::Features);
            println!("features {} samples x {} features, manifest {}", ds.len(), ds.dim(), m.hash);
            println!("  {}", e.layout.dataset(&m.hash).display());
        }
        Command::Classify { grid } => {
            config.grid |= grid;
            let e = Experiment::new(config, &out)?;
            let res = e.classify(&e.load_dataset()?)?;
            println!("classify {} accuracy {:.4}, manifest {}", res.model.params.label(), res.report.accuracy, res.manifest.hash);
            print!("{}", res.report.to_tsv(&|c| e.class_label(c)));
            if !res.model.converged() {
                eprintln!("warning: some pairwise solvers stopped at the iteration limit");
            }
        }
        Command::Cluster => {
            let e = Experiment::new(config, &out)?;
            let res = e.cluster(&e.load_dataset()?)?;
            let d = &res.diagnostics;
            println!(
                "cluster manifest {}: silhouette peak k={}, elbow k={}, cophenetic {:.4}",
                res.manifest.hash, d.silhouette_peak, d.elbow, d.cophenetic
            );
            for r in &res.reports {
                println!("k={}", r.k);
                print!("{}", r.to_tsv(&|c| e.class_label(c)));
            }
        }
        Command::Stylized => {
            let e = Experiment::new(config, &out)?;
            let rep = e.stylized(&e.load_logs()?)?;
            print!("{}", rep.summary_tsv());
        }
        Command::Reproduce { tables } => {
            let tables = if tables.is_empty() { REFERENCE_TABLES.to_vec() } else { tables };
            let mut repro = Reproduction::new(config, &out)?;
            let (mut pass, mut total) = (0, 0);
            for t in tables {
                let outcome = repro.table(t)?;
                for v in &outcome.verdicts {
                    println!("{}", v.line());
                    if v.gated {
                        total += 1;
                        pass += usize::from(v.pass);
                    }
                }
                println!("  report {}", outcome.report.display());
            }
            println!("{pass}/{total} verdicts within tolerance");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>().map(PipelineError::category) {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Solver) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
