use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hypercil::config::{parse_config, ExperimentConfig};
use hypercil::data::FeatureDataset;
use hypercil::error::Error;
use hypercil::report;
use hypercil::runner;

#[derive(Parser)]
#[command(
    name = "hypercil",
    about = "Hyperbolic open-set few-shot class-incremental learning on feature datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full session protocol and emit results
    Run(RunArgs),
    /// Run the protocol once per value of a sweepable parameter
    Sweep(SweepArgs),
    /// Generate a synthetic feature dataset CSV
    GenData(GenDataArgs),
    /// Run the finite-difference gradient suite and print max relative errors
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// One of: beta, curvature, tau, threshold
    #[arg(long)]
    param: String,
    /// Comma-separated list of values
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    test: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    sep: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    fixtures: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::GenData(args) => gen_data(args),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<&PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, args.seed, args.out.as_ref())?;
    let artifacts = runner::run_experiment(&cfg)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    let (csv, json) = report::emit_results(&artifacts.report, &cfg, &out_dir)?;

    let r = &artifacts.report;
    for (i, acc) in r.session_acc.iter().enumerate() {
        match (i, r.known_acc, r.unknown_acc) {
            (0, Some(k), Some(u)) => {
                println!("session {}: overall {acc:.2} (known {k:.2} / unknown {u:.2})", i + 1)
            }
            _ => match r.novel_acc[i] {
                Some(n) => println!("session {}: overall {acc:.2} (novel {n:.2})", i + 1),
                None => println!("session {}: overall {acc:.2}", i + 1),
            },
        }
    }
    println!("PD {:.2}  average acc {:.2}", r.pd, r.average_acc);
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, None, args.out.as_ref())?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse sweep value '{v}'")))
        })
        .collect::<Result<_, _>>()?;
    let rows = runner::run_sweep(&cfg, &args.param, &values)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("sweep.csv");
    report::write_atomic(&path, report::sweep_csv(&args.param, &rows).as_bytes())?;
    for row in &rows {
        println!(
            "{} = {}: final {:.2}, PD {:.2}, average {:.2}",
            args.param, row.value, row.final_acc, row.pd, row.average_acc
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<(), Error> {
    let ds = FeatureDataset::generate_synthetic(
        args.classes,
        args.train,
        args.test,
        args.dim,
        args.sep,
        args.seed,
    )?;
    ds.write_csv(&args.out)?;
    println!(
        "wrote {} ({} classes, {} samples, dim {})",
        args.out.display(),
        ds.n_classes(),
        ds.samples().len(),
        ds.dim()
    );
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    let results = runner::gradcheck_suite(args.seed, args.fixtures)?;
    let mut worst: f64 = 0.0;
    for (name, err) in &results {
        println!("{name}: max rel err {err:.3e}");
        worst = worst.max(*err);
    }
    if worst > 1e-4 {
        return Err(Error::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} > 1e-4"
        )));
    }
    println!("all gradients match finite differences within 1e-4");
    Ok(())
}
