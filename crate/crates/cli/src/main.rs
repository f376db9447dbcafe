use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use odometry_core::log::{format_log, parse_log};
use odometry_core::output::{parse_trajectory, write_outputs};
use odometry_core::selftest;
use odometry_core::session::{Session, SessionConfig, SessionOptions, SessionResult};
use odometry_core::sim::{generate, presets, score, SimScenario, SimTruth};
use odometry_core::updates::BaroMode;
use odometry_core::{Error, Result};

#[derive(Parser)]
#[command(name = "odometry", version, about = "Inertial odometry for handheld-device logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaroArg {
    Abs,
    Rel,
}

#[derive(Subcommand)]
enum Command {
    /// Filter (and optionally smooth) a sensor log.
    Run {
        log: PathBuf,
        /// TOML file with filter settings and a [detector] table.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run the backward smoothing pass and write trajectory_smoothed.csv.
        #[arg(long)]
        smooth: bool,
        #[arg(long, value_enum)]
        baro_mode: Option<BaroArg>,
        /// Reference pressure (hPa) for absolute altitude; defaults to the first reading.
        #[arg(long)]
        reference_pressure: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Generate a synthetic log and its ground truth.
    Simulate {
        /// Scenario TOML file, or `preset:<name>`.
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Truth file; defaults to `<out stem>.truth.csv` next to the log.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare a trajectory file against simulator truth.
    Score { estimate: PathBuf, truth: PathBuf },
    /// Finite-difference Jacobian checks and oracle suites.
    Selftest,
    /// Print the default configuration as TOML.
    Defaults,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            SessionConfig::from_toml(&text)
        }
        None => Ok(SessionConfig::default()),
    }
}

fn write_result(dir: &Path, result: &SessionResult) -> Result<()> {
    let paths = write_outputs(
        dir,
        &result.filtered,
        result.smoothed.as_deref(),
        &result.updates,
        &result.verdicts,
        &result.summary,
    )?;
    eprintln!("wrote {}", paths.filtered.display());
    if let Some(p) = &paths.smoothed {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("wrote {}", paths.diagnostics.display());
    eprintln!("wrote {}", paths.summary.display());
    Ok(())
}

fn run(
    log: &Path,
    config: Option<&Path>,
    smooth: bool,
    baro: Option<BaroArg>,
    reference_pressure: Option<f64>,
    out_dir: &Path,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    match baro {
        Some(BaroArg::Abs) => cfg.filter.baro.mode = BaroMode::Absolute,
        Some(BaroArg::Rel) => cfg.filter.baro.mode = BaroMode::Relative,
        None => {}
    }
    let records = parse_log(&read(log)?)?;
    let started = Instant::now();
    let mut session = Session::new(cfg, SessionOptions { smooth, reference_pressure })?;
    if let Err(e) = records.iter().try_for_each(|r| session.process(r)) {
        // keep what was computed for inspection
        let partial = session.partial();
        if let Err(io) = write_result(out_dir, &partial) {
            eprintln!("could not write diagnostics dump: {io}");
        }
        return Err(e);
    }
    let result = session.finish()?;
    let elapsed = started.elapsed();
    write_result(out_dir, &result)?;
    let s = &result.summary;
    println!(
        "{} samples in {:.3} s; final position [{:.3}, {:.3}, {:.3}] m; path {:.2} m",
        s.samples,
        elapsed.as_secs_f64(),
        s.final_position[0],
        s.final_position[1],
        s.final_position[2],
        s.estimated_path_length
    );
    Ok(())
}

fn load_scenario(spec: &str, seed: u64) -> Result<SimScenario> {
    match spec.strip_prefix("preset:") {
        Some(name) => presets::by_name(name, seed),
        None => SimScenario::from_toml(&read(Path::new(spec))?),
    }
}

fn simulate(spec: &str, seed: u64, out: &Path, truth: Option<&Path>) -> Result<()> {
    let scenario = load_scenario(spec, seed)?;
    let (records, sim_truth) = generate(&scenario, seed)?;
    let truth_path = match truth {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "log".into());
            out.with_file_name(format!("{stem}.truth.csv"))
        }
    };
    for (path, text) in [(out, format_log(&records)), (truth_path.as_path(), sim_truth.to_csv())] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)?;
    }
    println!(
        "{} records over {:.2} s; true path {:.2} m; truth in {}",
        records.len(),
        scenario.duration(),
        sim_truth.path_length(),
        truth_path.display()
    );
    Ok(())
}

fn score_files(estimate: &Path, truth: &Path) -> Result<()> {
    let (rows, _) = parse_trajectory(&read(estimate)?)?;
    let truth = SimTruth::from_csv(&read(truth)?)?;
    let metrics = score(&rows, &truth)?;
    println!("{}", serde_json::to_string_pretty(&metrics).map_err(|e| Error::Io(e.to_string()))?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { log, config, smooth, baro_mode, reference_pressure, out_dir } => {
            run(log, config.as_deref(), *smooth, *baro_mode, *reference_pressure, out_dir)
        }
        Command::Simulate { scenario, seed, out, truth } => simulate(scenario, *seed, out, truth.as_deref()),
        Command::Score { estimate, truth } => score_files(estimate, truth),
        Command::Selftest => match selftest::run_all() {
            Ok(reports) => {
                for r in &reports {
                    println!("{r}");
                }
                if reports.iter().all(|r| r.passed) {
                    Ok(())
                } else {
                    return ExitCode::from(1);
                }
            }
            Err(e) => Err(e),
        },
        Command::Defaults => SessionConfig::default().to_toml().map(|text| print!("{text}")),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
