use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use porous_mortar::driver::{self, MediaSource, SimConfig, TableRow};
use porous_mortar::error::{Error, Result};
use porous_mortar::{checks, config, io, media};

/// Two-phase flow with multiscale mortar mixed finite elements.
#[derive(Parser, Debug)]
#[command(name = "porous-mortar", version)]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Pressure solver, overriding the configuration.
    #[arg(long, global = true, value_parser = ["mmmfem", "fine"])]
    mode: Option<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "POROUS_MORTAR_THREADS")]
    threads: Option<usize>,

    /// Seed for synthetic media, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation and write snapshots, watercut and a summary.
    Run,
    /// Compare a run directory against a reference run directory.
    Compare { run: PathBuf, reference: PathBuf },
    /// Write the configured synthetic permeability and porosity fields.
    GenPerm,
    /// Run the invariant suite on a small instance.
    Validate,
}

fn load_config(cli: &Cli) -> Result<SimConfig> {
    let mut c = match &cli.config {
        Some(path) => config::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(mode) = &cli.mode {
        c.mode = mode.parse()?;
    }
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn cmd_run(cli: &Cli) -> Result<()> {
    let c = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| c.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let problem = c.build_problem()?;
    let result = driver::run_problem(&c, &problem)?;
    create_dir(&out)?;
    config::save(&c, &out.join("config.cfg"))?;
    io::write_run(&result, &problem.media, &out)?;
    let wc = result.steps.last().map_or(0.0, |s| s.watercut);
    println!(
        "{} run: {} steps, final watercut {wc:.4}, dim {}, {:.2} s (pressure {:.2} s) -> {}",
        c.solver_label(),
        result.steps.len(),
        result.dim,
        result.timings.total.as_secs_f64(),
        result.timings.pressure().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn cmd_compare(cli: &Cli, run: &Path, reference: &Path) -> Result<()> {
    let a = io::load_run(run)?;
    let b = io::load_run(reference)?;
    let sa: Vec<&[f64]> = a.snapshots.iter().map(Vec::as_slice).collect();
    let sb: Vec<&[f64]> = b.snapshots.iter().map(Vec::as_slice).collect();
    let mut metrics = driver::saturation_error(&sa, &sb, a.cell_volume)?;
    metrics.cpu_ratio = Some(a.summary.wall_seconds / b.summary.wall_seconds);

    let out = cli.out.clone().unwrap_or_else(|| run.join("comparison"));
    create_dir(&out)?;
    let (times, e_s): (Vec<f64>, Vec<f64>) = a
        .summary
        .times
        .iter()
        .zip(&metrics.per_step)
        .filter_map(|(t, e)| e.map(|e| (*t, e)))
        .unzip();
    io::write_timeseries(&times, &e_s, &out.join("e_s.csv"))?;
    let diff: Vec<f64> = a
        .summary
        .watercut
        .iter()
        .zip(&b.summary.watercut)
        .map(|(x, y)| x - y)
        .collect();
    io::write_timeseries(&a.summary.times, &diff, &out.join("watercut_difference.csv"))?;

    let rows = driver::compare_report(&a.summary, &b.summary, &metrics);
    let mut table = format!("{}\n", TableRow::HEADER);
    for r in &rows {
        table.push_str(&r.to_csv());
        table.push('\n');
    }
    let path = out.join("table.csv");
    std::fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?;
    print!("{table}");
    Ok(())
}

fn cmd_gen_perm(cli: &Cli) -> Result<()> {
    let c = load_config(cli)?;
    if let MediaSource::Spe10 { .. } = c.media {
        return Err(Error::Config("gen-perm needs synthetic media in the configuration".into()));
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("media"));
    create_dir(&out)?;
    let problem = c.build_problem()?;
    media::write_layers(&problem.media, &out.join("perm.dat"), &out.join("phi.dat"))?;
    let snap = io::FieldSnapshot::new(&problem.grid).with_array("log10_k", problem.media.log10_kx())?;
    io::write_vtk(&snap, &out.join("media.vtk"))?;
    println!("wrote {} cells to {}", problem.grid.num_cells(), out.display());
    Ok(())
}

fn cmd_validate(cli: &Cli) -> Result<bool> {
    let results = checks::invariant_suite(16, cli.seed.unwrap_or(1))?;
    let mut ok = true;
    for c in &results {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let outcome = match &cli.command {
        Command::Run => cmd_run(&cli).map(|_| true),
        Command::Compare { run, reference } => cmd_compare(&cli, run, reference).map(|_| true),
        Command::GenPerm => cmd_gen_perm(&cli).map(|_| true),
        Command::Validate => cmd_validate(&cli),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
