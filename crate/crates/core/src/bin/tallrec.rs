use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tallrec::corpus::Domain;
use tallrec::eval::{TrainDomain, Variant};
use tallrec::experiment::{
    cmd_eval, cmd_experiment, cmd_gradcheck, cmd_prepare, cmd_report, cmd_sweep, cmd_train, load_prepared,
    ExperimentConfig, RunSpec, Workspace,
};
use tallrec::Result;

#[derive(Parser)]
#[command(name = "tallrec", version, about = "Config-driven rec-tuning experiments on a toy language model")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(short, long, global = true, default_value = "tallrec.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, split and write the instance files and manifest.
    Prepare,
    /// Train one run and register its checkpoint.
    Train(RunArgs),
    /// Score a trained run on a test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        test_domain: DomainArg,
    },
    /// Prepare, train and evaluate the whole grid, then report.
    Experiment,
    /// Aggregate results over seeds into CSV and a text table.
    Report,
    /// Weight-decay search by validation AUC.
    Sweep {
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
    },
    /// Compare analytic adapter gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 50)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(short)]
    k: usize,
    #[arg(long, value_enum)]
    train_domain: TrainDomainArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    #[value(name = "AT", alias = "at")]
    At,
    #[value(name = "RT", alias = "rt")]
    Rt,
    #[value(name = "TALLRec", alias = "tallrec")]
    TallRec,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Movie,
    Book,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainDomainArg {
    Movie,
    Book,
    Both,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Movie => Domain::Movie,
            DomainArg::Book => Domain::Book,
        }
    }
}

impl RunArgs {
    fn spec(&self) -> RunSpec {
        RunSpec {
            variant: match self.variant {
                VariantArg::At => Variant::AT,
                VariantArg::Rt => Variant::RT,
                VariantArg::TallRec => Variant::TALLRec,
            },
            k: self.k,
            train_domain: match self.train_domain {
                TrainDomainArg::Movie => TrainDomain::Movie,
                TrainDomainArg::Book => TrainDomain::Book,
                TrainDomainArg::Both => TrainDomain::Both,
            },
            seed: self.seed,
        }
    }
}

fn workspace(cli: &Cli) -> Result<Workspace> {
    Workspace::new(ExperimentConfig::load(&cli.config)?)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare => {
            let ws = workspace(&cli)?;
            let m = cmd_prepare(&ws)?;
            for d in &m.domains {
                println!("{}: {} instances -> {}/{}/{}", d.domain, d.instances, d.train, d.validation, d.test);
            }
            println!("general: {} train, {} validation", m.general_train, m.general_validation);
            println!("wrote {} (config {})", ws.prepared_manifest_path().display(), ws.config_hash);
        }
        Command::Train(args) => {
            let ws = workspace(&cli)?;
            let prepared = load_prepared(&ws)?;
            let spec = args.spec();
            let record = cmd_train(&ws, &prepared, &spec)?;
            println!("{} -> {}", spec.key(), ws.root().join(&record.checkpoint).display());
        }
        Command::Eval { run, test_domain } => {
            let ws = workspace(&cli)?;
            let prepared = load_prepared(&ws)?;
            let spec = run.spec();
            let domain = Domain::from(*test_domain);
            let out = cmd_eval(&ws, &prepared, &spec, domain)?;
            println!("{} on {domain}: AUC {:.4}", spec.key(), out.result.auc);
        }
        Command::Experiment => {
            let ws = workspace(&cli)?;
            let report = cmd_experiment(&ws, |msg| eprintln!("{msg}"))?;
            print!("{}", report.table(&ws.config_hash));
        }
        Command::Report => {
            let ws = workspace(&cli)?;
            print!("{}", cmd_report(&ws)?.table(&ws.config_hash));
        }
        Command::Sweep { domain } => {
            let ws = workspace(&cli)?;
            let report = cmd_sweep(&ws, domain.map(Domain::from))?;
            for (wd, mean) in &report.means {
                println!("weight_decay {wd:e}: mean validation AUC {mean:.4}");
            }
            println!("selected weight_decay {:e}", report.selected);
        }
        Command::Gradcheck { h, coords, tolerance } => {
            let cfg = ExperimentConfig::load(&cli.config)?;
            let reports = cmd_gradcheck(&cfg, *h, *coords)?;
            let mut worst = 0f64;
            for (seed, r) in cfg.seeds.iter().zip(&reports) {
                println!("seed {seed}: max relative error {:.3e} over {} coordinates", r.max_rel_error, r.coords.len());
                worst = worst.max(r.max_rel_error);
            }
            if !(worst < *tolerance) {
                return Err(tallrec::Error::CheckFailed(format!(
                    "max relative error {worst:.3e} is not below {tolerance:e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
