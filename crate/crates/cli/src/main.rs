use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sugar::gradcheck::Suite;
use sugar::toy::TaskId;
use sugar::Method;
use sugar_cli::{commands, CliError, ExperimentConfig, Overrides};

const OUT_ENV: &str = "SUGAR_OUT_DIR";

#[derive(Parser)]
#[command(name = "sugar", version, about = "Surrogate-gradient ReLU experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference and injection checks; exits 1 if any fails.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo sweep on the toy regression tasks.
    Toy(ExperimentArgs),
    /// Per-neuron activation-count profiles.
    Profile(ExperimentArgs),
    /// Two-dimensional loss-landscape grids around trained weights.
    Landscape(ExperimentArgs),
    /// Markdown summary of every run under the output directory.
    Report {
        #[arg(long, env = OUT_ENV, default_value = "sugar-out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    task: Vec<TaskId>,
    /// e.g. relu, elu:0.5, sugar:bsilu, sugar-indirect:silu, sugar:nelu:0.05
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run i uses seed + 9973·i.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds 1, 10, 20, 25 and 42 only.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning-rate decay epochs; rescaled with --epochs when omitted.
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Landscape grid points per axis.
    #[arg(long)]
    resolution: Option<usize>,
    /// Landscape half-width.
    #[arg(long)]
    range: Option<f64>,
    /// Epochs at which profiles are written.
    #[arg(long, value_delimiter = ',')]
    profile_epochs: Option<Vec<usize>>,
    /// Parameter for every method whose activation takes one.
    #[arg(long)]
    alpha: Option<f64>,
    /// Print the merged configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            tasks: (!self.task.is_empty()).then(|| self.task.clone()),
            methods: (!self.method.is_empty()).then(|| self.method.clone()),
            runs: self.runs,
            seed: self.seed,
            epochs: self.epochs,
            milestones: self.milestones.clone(),
            lr: self.lr,
            batch: self.batch,
            out: self.out.clone(),
            jobs: self.jobs,
            resolution: self.resolution,
            range: self.range,
            profile_epochs: self.profile_epochs.clone(),
            alpha: self.alpha,
            quick: self.quick,
        });
        config.validate()?;
        Ok(config)
    }
}

fn with_pool<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gradcheck { seed } => {
            commands::gradcheck(&Suite::standard(seed), &mut io::stdout())
        }
        Command::Toy(args) => {
            let config = args.resolve()?;
            if args.print_config {
                print!("{}", config.to_toml());
                return Ok(());
            }
            let summary = with_pool(config.jobs, || commands::toy(&config))?;
            println!("{}", sugar::toy::Aggregate::csv_header());
            for (task, method, agg) in &summary.rows {
                println!("{}", agg.csv_row(*task, method));
            }
            eprintln!(
                "{} new runs, {} reused; aggregate written to {}",
                summary.new_runs,
                summary.reused_runs,
                config.out_dir.join("aggregate.csv").display()
            );
            Ok(())
        }
        Command::Profile(args) => {
            let config = args.resolve()?;
            if args.print_config {
                print!("{}", config.to_toml());
                return Ok(());
            }
            let paths = with_pool(config.jobs, || commands::profile(&config))?;
            for p in &paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Landscape(args) => {
            let config = args.resolve()?;
            if args.print_config {
                print!("{}", config.to_toml());
                return Ok(());
            }
            let entries = with_pool(config.jobs, || commands::landscape(&config))?;
            for e in &entries {
                println!(
                    "{} seed {} {}: center {:.6e}, min {:.6e} -> {}",
                    e.task,
                    e.seed,
                    e.method,
                    e.center,
                    e.min,
                    e.path.display()
                );
            }
            Ok(())
        }
        Command::Report { out } => {
            print!("{}", commands::report(&out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sugar: {e}");
            e.exit_code()
        }
    }
}
