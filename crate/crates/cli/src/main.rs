//! `skfnav`: run switching-filter experiments from JSON configs.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use skfnav::harness::report::write_report;
use skfnav::harness::run::{write_records, write_timings, ScenarioData};
use skfnav::harness::sweep::{threads_from_env, write_aggregates};
use skfnav::harness::{execute, run_sweep, RunConfig, RunOptions, RunRecord, SweepConfig};
use skfnav::ins::NAV_STATE_NAMES;
use skfnav::skf::fmt_f64;
use skfnav::Error;

#[derive(Parser, Debug)]
#[command(name = "skfnav", version, about = "Switching Kalman filter experiments for corrupted navigation sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Only report errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// More logging; repeat for trace output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its records, trajectories and data.
    Simulate {
        scenario: ScenarioKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Branch capacity including the nominal branch.
        #[arg(long)]
        branches: Option<usize>,
    },
    /// Run a parameter sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        branches: Option<usize>,
    },
    /// Build tables, aggregates and plot data from records files.
    Report {
        /// One or more records.csv files.
        #[arg(long = "records", required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long)]
        scenario: Option<ScenarioKind>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Count Yellow outcomes as successes.
        #[arg(long)]
        count_yellow: bool,
    },
    /// Check a run or sweep config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScenarioKind {
    Balloon,
    Shuttle,
}

impl ScenarioKind {
    fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Balloon => "balloon",
            ScenarioKind::Shuttle => "shuttle",
        }
    }
}

/// Failure of a subcommand, mapped to an exit code.
enum Failure {
    Config(Error),
    Run(Error),
    RunsFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e)
        } else {
            Failure::Run(e)
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn read_config<T>(path: &Path, parse: impl FnOnce(&str) -> skfnav::Result<T>) -> std::result::Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(Error::config(format!("cannot read config {}: {e}", path.display()))))?;
    parse(&text).map_err(|e| Failure::Config(Error::config(format!("{}: {e}", path.display()))))
}

fn base_dir(config: &Path) -> Option<&Path> {
    config.parent().filter(|p| !p.as_os_str().is_empty())
}

fn default_out(name: &str, config: &Path) -> PathBuf {
    let stem = if name.is_empty() {
        config.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string()
    } else {
        name.replace('/', "_")
    };
    PathBuf::from("runs").join(stem)
}

fn write_config_echo<T: serde::Serialize>(dir: &Path, config: &T, hash: Option<&str>) -> skfnav::Result<()> {
    let echo = serde_json::json!({ "config_hash": hash, "config": config });
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&echo)?)?;
    Ok(())
}

fn csv_writer(path: &Path) -> skfnav::Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn write_scenario_data(dir: &Path, data: &ScenarioData, dt: f64) -> skfnav::Result<()> {
    let time = |k: usize| fmt_f64(k as f64 * dt);
    match data {
        ScenarioData::Balloon(d) => {
            let mut w = csv_writer(&dir.join("truth.csv"))?;
            w.write_record(["step", "time", "lon", "lat", "xi_lon", "xi_lat"])?;
            for (k, (x, xi)) in d.truth.iter().zip(&d.process_noise).enumerate() {
                w.write_record([k.to_string(), time(k), fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(xi[0]), fmt_f64(xi[1])])?;
            }
            w.flush()?;
            let mut w = csv_writer(&dir.join("measurements.csv"))?;
            w.write_record(["step", "time", "y_lon", "y_lat", "bias_lon", "bias_lat", "eta_lon", "eta_lat"])?;
            for (k, y) in d.measurements.iter().enumerate() {
                if let (Some(y), Some(b), Some(e)) = (y, &d.bias[k], &d.measurement_noise[k]) {
                    w.write_record([
                        k.to_string(),
                        time(k),
                        fmt_f64(y[0]),
                        fmt_f64(y[1]),
                        fmt_f64(b[0]),
                        fmt_f64(b[1]),
                        fmt_f64(e[0]),
                        fmt_f64(e[1]),
                    ])?;
                }
            }
            w.flush()?;
        }
        ScenarioData::Shuttle(d) => {
            let mut w = csv_writer(&dir.join("truth.csv"))?;
            let mut header = vec!["step".to_string(), "time".into()];
            header.extend(NAV_STATE_NAMES.iter().map(|s| format!("ref_{s}")));
            header.extend(NAV_STATE_NAMES.iter().map(|s| format!("inertial_{s}")));
            w.write_record(&header)?;
            for (k, (r, i)) in d.reference.iter().zip(&d.inertial).enumerate() {
                let mut row = vec![k.to_string(), time(k)];
                row.extend(r.to_vector().iter().take(9).map(|v| fmt_f64(*v)));
                row.extend(i.to_vector().iter().take(9).map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
            w.flush()?;
            let mut w = csv_writer(&dir.join("imu.csv"))?;
            w.write_record(["step", "time", "f_x", "f_y", "f_z", "omega_x", "omega_y", "omega_z"])?;
            for (k, s) in d.imu.iter().enumerate() {
                let mut row = vec![k.to_string(), time(k)];
                row.extend(s.f_b.iter().chain(s.omega_b.iter()).map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
            w.flush()?;
            let mut w = csv_writer(&dir.join("measurements.csv"))?;
            w.write_record([
                "step", "time", "y_h", "y_L", "y_lambda", "bias_h", "bias_L", "bias_lambda", "eta_h", "eta_L", "eta_lambda",
            ])?;
            for (k, y) in d.gps.iter().enumerate() {
                if let (Some(y), Some(b), Some(e)) = (y, &d.gps_bias[k], &d.gps_noise[k]) {
                    let mut row = vec![k.to_string(), time(k)];
                    row.extend(y.iter().chain(b.iter()).chain(e.iter()).map(|v| fmt_f64(*v)));
                    w.write_record(&row)?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn simulate(
    scenario: ScenarioKind,
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    branches: Option<usize>,
) -> CmdResult {
    let mut cfg = read_config(config, RunConfig::from_json)?;
    if cfg.scenario.kind() != scenario.as_str() {
        return Err(Failure::Config(Error::config(format!(
            "{} describes a {} run, not {}",
            config.display(),
            cfg.scenario.kind(),
            scenario.as_str()
        ))));
    }
    if let Some(m) = branches {
        cfg.branches = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = out.unwrap_or_else(|| default_out(&cfg.name, config));
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let hash = cfg.hash();
    write_config_echo(&out, &cfg, Some(&hash))?;
    info!("{} seed {} -> {}", cfg.scenario.kind(), cfg.seed, out.display());

    let opts = RunOptions {
        full_history: true,
        parallel: false,
    };
    let result = execute(&cfg, cfg.seed, base_dir(config), opts, None);
    let run = match result {
        Ok(r) => r,
        Err(e) if e.is_config() => return Err(Failure::Config(e)),
        Err(e) => {
            let rec = RunRecord::failed(&cfg, cfg.seed, e.to_string());
            write_records(&[rec], File::create(out.join("records.csv")).map_err(Error::from)?)?;
            return Err(Failure::Run(e));
        }
    };
    let rec = &run.record;
    write_records(std::slice::from_ref(rec), File::create(out.join("records.csv")).map_err(Error::from)?)?;
    write_timings(std::slice::from_ref(rec), File::create(out.join("timings.csv")).map_err(Error::from)?)?;
    run.set
        .write_trajectories(File::create(out.join("trajectory.csv")).map_err(Error::from)?)?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&run.set.summary()).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    let mut w = csv_writer(&out.join("estimate.csv"))?;
    let mut header = vec!["step".to_string(), "time".into()];
    header.extend(rec.state_names.iter().map(|s| format!("est_{s}")));
    header.extend(rec.state_names.iter().map(|s| format!("truth_{s}")));
    w.write_record(&header).map_err(Error::from)?;
    for (k, (e, t)) in run.estimate.iter().zip(&run.truth).enumerate() {
        let mut row = vec![k.to_string(), fmt_f64(k as f64 * rec.dt)];
        row.extend(e.iter().chain(t.iter()).map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    write_scenario_data(&out, &run.data, rec.dt)?;

    let est = rec.estimated_switch.map(fmt_f64).unwrap_or_else(|| "none".into());
    let truth = rec.true_switch.map(fmt_f64).unwrap_or_else(|| "n/a".into());
    println!(
        "{}: estimated switch {est}, true switch {truth}, outcome {}",
        if rec.name.is_empty() { "run" } else { &rec.name },
        rec.outcome.as_str()
    );
    Ok(())
}

fn sweep(config: &Path, seed: Option<u64>, out: Option<PathBuf>, branches: Option<usize>) -> CmdResult {
    let mut cfg = read_config(config, SweepConfig::from_json)?;
    if let Some(m) = branches {
        cfg.base.branches = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let threads = threads_from_env()?;
    let out = out.unwrap_or_else(|| default_out(&cfg.name, config));
    std::fs::create_dir_all(out.join("plots")).map_err(Error::from)?;
    write_config_echo(&out, &cfg, Some(&cfg.base.hash()))?;
    let result = run_sweep(&cfg, base_dir(config), threads)?;
    write_records(&result.records, File::create(out.join("records.csv")).map_err(Error::from)?)?;
    write_timings(&result.records, File::create(out.join("timings.csv")).map_err(Error::from)?)?;
    write_aggregates(
        &result.aggregates,
        &result.state_names,
        File::create(out.join("aggregates.csv")).map_err(Error::from)?,
    )?;
    let picked: Vec<&RunRecord> = result.records.iter().collect();
    let axes: Vec<_> = cfg.axes.keys().copied().collect();
    skfnav::harness::report::write_plots(&picked, &result.aggregates, &axes, &out.join("plots"))?;
    let failed = result.records.iter().filter(|r| !r.status.is_ok()).count();
    println!(
        "{}: {} runs, {} failed -> {}",
        cfg.name,
        result.records.len(),
        failed,
        out.display()
    );
    if failed > 0 {
        return Err(Failure::RunsFailed(failed));
    }
    Ok(())
}

fn report(paths: &[PathBuf], scenario: Option<ScenarioKind>, out: &Path, count_yellow: bool) -> CmdResult {
    let mut records = Vec::new();
    for p in paths {
        let recs = skfnav::harness::run::load_records(p)
            .map_err(|e| Failure::Config(Error::config(format!("{}: {e}", p.display()))))?;
        records.extend(recs);
    }
    let rows = write_report(&records, scenario.map(ScenarioKind::as_str), count_yellow, out)?;
    println!("{} records, {} aggregate rows -> {}", records.len(), rows.len(), out.display());
    Ok(())
}

fn validate(config: &Path) -> CmdResult {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Failure::Config(Error::config(format!("cannot read config {}: {e}", config.display()))))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(Error::config(format!("{}: {e}", config.display()))))?;
    let wrap = |e: Error| Failure::Config(Error::config(format!("{}: {e}", config.display())));
    if value.get("axes").is_some() {
        let s = SweepConfig::from_json(&text).map_err(wrap)?;
        println!("ok: sweep {} with {} cells x {} replications", s.name, s.len(), s.replications);
    } else {
        let r = RunConfig::from_json(&text).map_err(wrap)?;
        println!("ok: {} run {} (config hash {})", r.scenario.kind(), r.name, r.hash());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match cli.command {
        Command::Simulate {
            scenario,
            config,
            seed,
            out,
            branches,
        } => simulate(scenario, &config, seed, out, branches),
        Command::Sweep {
            config,
            seed,
            out,
            branches,
        } => sweep(&config, seed, out, branches),
        Command::Report {
            records,
            scenario,
            out,
            count_yellow,
        } => report(&records, scenario, &out, count_yellow),
        Command::ValidateConfig { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            error!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            error!("run failed: {e}");
            ExitCode::from(1)
        }
        Err(Failure::RunsFailed(n)) => {
            error!("{n} runs failed");
            ExitCode::from(1)
        }
    }
}
