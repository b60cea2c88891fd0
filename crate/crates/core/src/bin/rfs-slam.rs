use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfs_slam::experiment::{self, RunConfig, RunReport};
use rfs_slam::multimodel::MissedTypeRule;
use rfs_slam::update::FilterKind;
use rfs_slam::SlamError;

/// Monte-Carlo runner for PMB/PMBM radio SLAM on simulated 5G downlink scans.
#[derive(Parser, Debug)]
#[command(name = "rfs-slam", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte-Carlo campaign (the default when no subcommand is given).
    Run(RunArgs),
    /// Compare reports of the same scenario side by side.
    Compare {
        /// Report JSON files written by earlier runs.
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Also write the table to this directory as comparison.csv and comparison.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Filter {
    EkPmb,
    EkPmbm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    Complement,
    Factored,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Scenario JSON file, or "default" for the built-in scenario.
    #[arg(long, value_name = "PATH", default_value = "default")]
    config: String,
    #[arg(long, value_enum, default_value = "ek-pmb")]
    filter: Filter,
    /// Children kept per parent hypothesis.
    #[arg(long, default_value_t = 10)]
    gamma: usize,
    /// Number of Monte-Carlo runs.
    #[arg(long, default_value_t = 100)]
    mc: usize,
    /// Seed of run 0; run i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV, JSON and SVG files.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Multi-model landmark types.
    #[arg(long, value_enum, default_value = "on")]
    mm: Switch,
    /// TOA noise standard deviation (m).
    #[arg(long, value_name = "SIGMA")]
    noise_toa: Option<f64>,
    /// Angle noise standard deviation (rad).
    #[arg(long, value_name = "SIGMA")]
    noise_angle: Option<f64>,
    /// Joseph-form covariance update.
    #[arg(long)]
    joseph: bool,
    /// Disable the association gate.
    #[arg(long)]
    no_gate: bool,
    /// Record wall-clock timing (outputs then differ between invocations).
    #[arg(long)]
    timing: bool,
    /// Type-probability update for missed detections.
    #[arg(long, value_enum, default_value = "complement")]
    missed_type_rule: Rule,
}

impl RunArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            scenario: self.config.clone(),
            filter: match self.filter {
                Filter::EkPmb => FilterKind::Pmb,
                Filter::EkPmbm => FilterKind::Pmbm,
            },
            gamma: self.gamma,
            mc_runs: self.mc,
            seed: self.seed,
            out: self.out.clone(),
            multi_model: matches!(self.mm, Switch::On),
            noise_toa: self.noise_toa,
            noise_angle: self.noise_angle,
            joseph_form: self.joseph,
            gating: !self.no_gate,
            missed_type_rule: match self.missed_type_rule {
                Rule::Complement => MissedTypeRule::Complement,
                Rule::Factored => MissedTypeRule::Factored,
            },
            record_timing: self.timing,
        }
    }
}

fn run(args: &RunArgs) -> Result<(), SlamError> {
    let config = args.to_config();
    let report = experiment::run(&config)?;
    let s = &report.summary;
    println!("{} runs of {} ({} steps)", report.runs.len(), report.label(), report.steps.len());
    println!("position RMSE   {:.4} m", s.rmse_position);
    println!("heading RMSE    {:.5} rad", s.rmse_heading);
    println!("bias RMSE       {:.4} m", s.rmse_bias);
    println!("final VA GOSPA  {:.4}", s.final_gospa_va);
    println!("final SP GOSPA  {:.4}", s.final_gospa_sp);
    if config.record_timing {
        println!("ms/step         {:.3} predict + {:.3} update", s.ms_predict, s.ms_update);
    }
    if let Some(dir) = &config.out {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn compare(paths: &[PathBuf], out: Option<&PathBuf>) -> Result<(), SlamError> {
    let reports = paths.iter().map(|p| RunReport::load(p)).collect::<Result<Vec<_>, _>>()?;
    let table = experiment::compare(&reports)?;
    print!("{}", table.to_text());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| SlamError::io(dir, e))?;
        for (name, text) in [("comparison.csv", table.to_csv()), ("comparison.txt", table.to_text())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| SlamError::io(&path, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        None => run(&cli.run),
        Some(Command::Run(args)) => run(args),
        Some(Command::Compare { reports, out }) => compare(reports, out.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rfs-slam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
