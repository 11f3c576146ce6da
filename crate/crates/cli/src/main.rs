use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use placement_cli::output::{emit_report, write_experiment_csvs};
use placement_cli::replay::replay_fixture;
use placement_cli::verify::{sweep_suite, theorem_suite};
use placement_core::fixtures::Fixture;
use placement_core::mechanisms::MechanismKind;
use placement_core::simulation::{calibrate_noise, run_experiment, ExperimentConfig, NoiseSpec};

/// Dynamic placement matching engine: simulate mechanism experiments, verify
/// fairness and incentive properties, replay the bundled fixtures, and check
/// estimator-noise calibration.
#[derive(Parser)]
#[command(name = "placement", version, about)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid from a config file and write CSVs.
    Simulate(SimulateArgs),
    /// Run a verification suite; the exit code reports pass/fail.
    Verify(VerifyArgs),
    /// Replay a bundled fixture under a mechanism and print the transcript.
    Replay(ReplayArgs),
    /// Measure a noise spec's empirical RMSE and mean error.
    RmseCheck(RmseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the CSV files.
    #[arg(long)]
    out: PathBuf,
    /// Replication seeds, overriding the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Base seed; combined with --replications to derive consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications when deriving seeds from --seed.
    #[arg(long)]
    replications: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite: "theorems" (fixture checks) or "sweep" (randomized).
    #[arg(long, default_value = "theorems")]
    suite: String,
    /// Seed for the randomized sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random environments in the sweep.
    #[arg(long, default_value_t = 200)]
    budget: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Fixture name: e1, e2, or e3.
    #[arg(long)]
    fixture: String,
    /// Mechanism: seqda-home, seqda-child, hpda, crda, heda, heda-star.
    #[arg(long)]
    mechanism: String,
}

#[derive(Args)]
struct RmseArgs {
    /// Noise kind: "bias" or "variance".
    #[arg(long)]
    kind: String,
    /// Error level as a fraction of the utility scale (e.g. 0.25).
    #[arg(long)]
    k: f64,
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    match run(cli.command) {
        Ok(passed) => {
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Verify(args) => verify(args),
        Command::Replay(args) => replay(args),
        Command::RmseCheck(args) => rmse_check(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<bool> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).context("parsing experiment config")?;
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    } else if let Some(base) = args.seed {
        let n = args.replications.unwrap_or(1);
        config.seeds = (0..n).map(|i| base + i).collect();
    } else if let Some(n) = args.replications {
        let base = *config.seeds.first().unwrap_or(&0);
        config.seeds = (0..n).map(|i| base + i).collect();
    }

    let result = run_experiment(&config)?;
    let written = write_experiment_csvs(&result, &args.out)?;
    for cell in &result.cells {
        println!(
            "{:>12} {:>11}  placements/month {:7.3}  waiting-cost/month {:10.1}  envy {:6.4}  waste {:6.2}",
            cell.noise.label(),
            cell.mechanism.name(),
            cell.averaged.avg_placements_per_month,
            cell.averaged.avg_waiting_cost,
            cell.averaged.avg_envy_share,
            cell.averaged.avg_waste
        );
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(true)
}

fn verify(args: VerifyArgs) -> Result<bool> {
    match args.suite.as_str() {
        "theorems" => {
            let report = theorem_suite()?;
            for check in &report.checks {
                println!(
                    "{} {} — {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            emit_report(&report, args.out.as_deref())?;
            Ok(report.passed)
        }
        "sweep" => {
            let report = sweep_suite(args.seed, args.budget);
            println!(
                "theorem sweep: {} environments, {} plans",
                report.theorem_sweep.environments, report.theorem_sweep.plans_checked
            );
            println!(
                "  hpda violations: {:?}",
                report.theorem_sweep.hpda
            );
            println!(
                "  crda violations: {:?}",
                report.theorem_sweep.crda
            );
            println!(
                "  heda violations: {:?}",
                report.theorem_sweep.heda
            );
            println!(
                "  seqda strict waste {}, patience violations found {}",
                report.theorem_sweep.seqda_strict_waste, report.theorem_sweep.seqda_patience_found
            );
            println!(
                "strategy sweep: {} instances, heda violations {}",
                report.strategy_sweep.instances_checked, report.strategy_sweep.heda_violations
            );
            println!("{}", if report.passed { "PASS" } else { "FAIL" });
            emit_report(&report, args.out.as_deref())?;
            Ok(report.passed)
        }
        other => bail!("unknown suite {other:?} (expected \"theorems\" or \"sweep\")"),
    }
}

fn replay(args: ReplayArgs) -> Result<bool> {
    let fixture = Fixture::parse(&args.fixture)
        .ok_or_else(|| anyhow!("unknown fixture {:?} (expected e1, e2, or e3)", args.fixture))?;
    let mechanism = MechanismKind::parse(&args.mechanism)
        .ok_or_else(|| anyhow!("unknown mechanism {:?}", args.mechanism))?;
    let outcome = replay_fixture(fixture, mechanism)?;
    print!("{}", outcome.transcript);
    Ok(true)
}

fn rmse_check(args: RmseArgs) -> Result<bool> {
    let spec = match args.kind.as_str() {
        "bias" => NoiseSpec::Bias { k: args.k },
        "variance" => NoiseSpec::Variance { k: args.k },
        other => bail!("unknown noise kind {other:?} (expected \"bias\" or \"variance\")"),
    };
    let cfg = placement_core::simulation::GeneratorConfig::default();
    let cal = calibrate_noise(spec, &cfg, args.pairs, args.seed);
    let target = args.k * cfg.v_bar;
    let rmse_ok = (cal.rmse - target).abs() <= 0.05 * target;
    let mean_ok = match spec {
        NoiseSpec::Bias { .. } => (cal.mean_error + target).abs() <= 0.02 * target,
        _ => true,
    };
    println!(
        "{} k={} pairs={}: rmse {:.4} (target {target:.1} ±5%), mean error {:.4}",
        spec.label(),
        args.k,
        cal.pairs,
        cal.rmse,
        cal.mean_error
    );
    println!("{}", if rmse_ok && mean_ok { "PASS" } else { "FAIL" });
    Ok(rmse_ok && mean_ok)
}
