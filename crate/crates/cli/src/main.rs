use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use addpinn::decomposition::{DecompositionConfig, Mode};
use addpinn::experiment::{
    analyze, geometry, load_coarse, observe, run_cell, run_matrix, save_cell, thread_count, ExperimentConfig, THREADS_ENV,
};
use addpinn::field::SpeedField;
use addpinn::partition::Direction;
use addpinn::physics::{godunov_solve, Scenario};
use addpinn::trainer::MethodId;
use addpinn::Error;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "addpinn", version, about = "Residual-guided domain decomposition PINN for traffic speed reconstruction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a scenario JSON with the Godunov solver and write a speed-field CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract equally spaced interior sensors from a speed-field CSV.
    Sensors {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        n_s: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one (method, n_s, seed) cell.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first method of the config.
        #[arg(long)]
        method: Option<MethodId>,
        #[arg(long)]
        n_s: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        direction: Option<Direction>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full methods x sensor counts x seeds matrix and aggregate.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        direction: Option<Direction>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual profiles and split decision of a coarse checkpoint, without training.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        n_s: usize,
        /// Optional experiment config; its decomposition settings and parent architecture apply.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "shock_screened")]
        mode: Mode,
        #[arg(long, default_value = "spatial")]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Json(_) | Error::Parse(_) | Error::InvalidInput(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn generate(config: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::Usage(format!("{}: {e}", config.display())))?;
    let scenario: Scenario = serde_json::from_str(&text)?;
    let sol = godunov_solve(&scenario)?;
    sol.field.save(out)?;
    println!(
        "wrote {} ({} cells x {} steps, dt {:.4} s, dx {:.2} ft)",
        out.display(),
        sol.field.n_cells(),
        sol.field.n_steps(),
        sol.dt,
        sol.dx
    );
    Ok(())
}

fn sensors(field: &Path, n_s: usize, out: &Path) -> Result<(), Failure> {
    let f = SpeedField::load(field)?;
    let obs = observe(&f, n_s)?;
    obs.save(out)?;
    println!("wrote {} (sensors {:?}, {} records)", out.display(), obs.sensors, obs.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    method: Option<MethodId>,
    n_s: Option<usize>,
    seed: Option<u64>,
    scale: Option<f64>,
    direction: Option<Direction>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = read_config(config)?;
    cfg.scale = scale.or(cfg.scale);
    cfg.direction = direction.unwrap_or(cfg.direction);
    cfg.mode = mode.unwrap_or(cfg.mode);
    let hyper = cfg.hyperparams()?;
    let method = method.unwrap_or(cfg.methods[0]);
    let n_s = n_s.unwrap_or(cfg.sensor_counts[0]);
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let out = out.unwrap_or(cfg.out.clone());
    let field = cfg.dataset.load()?;
    let cell = run_cell(&field, n_s, &cfg.method_spec(method), &hyper, seed)?;
    let path = save_cell(&out, &cfg.name, n_s, &cell)?;
    match (&cell.report, &cell.error) {
        (Some(r), _) => {
            println!(
                "{method} n_s={n_s} seed={seed}: rel_l2 {:.4}% rmse {:.4} mph mae {:.4} mph ({:.1} s)",
                r.rel_l2_pct, r.rmse_mph, r.mae_mph, r.train_time_s
            );
            if let Some(d) = cell.decision() {
                println!("decision: decomposed={} S={:.4} x_splits={:?} t_splits={:?}", d.decomposed, d.indicator, d.x_splits, d.t_splits);
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        (None, e) => Err(Failure::Runtime(format!(
            "{method} n_s={n_s} seed={seed} failed: {} (partial log in {})",
            e.clone().unwrap_or_default(),
            path.display()
        ))),
    }
}

fn matrix(config: &Path, seed: Option<u64>, scale: Option<f64>, direction: Option<Direction>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.scale = scale.or(cfg.scale);
    cfg.direction = direction.unwrap_or(cfg.direction);
    if let Some(o) = out {
        cfg.out = o;
    }
    let threads = thread_count();
    println!(
        "{} methods x {} sensor counts x {} seeds on {threads} threads ({THREADS_ENV})",
        cfg.methods.len(),
        cfg.sensor_counts.len(),
        cfg.seeds.len()
    );
    let outcome = run_matrix(&cfg, threads)?;
    if let Some(a) = &outcome.aggregate {
        for r in &a.rows {
            println!(
                "{:<14} n_s={:<3} rel_l2 {:>8.4} +- {:<8.4} wins {} losses {}",
                r.method, r.n_s, r.rel_l2_mean, r.rel_l2_std, r.wins, r.losses
            );
        }
        println!("wrote {}", cfg.out.join("aggregate.csv").display());
    }
    if outcome.all_completed() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{} cell(s) failed:\n{}", outcome.failures.len(), outcome.failures.join("\n"))))
    }
}

#[allow(clippy::too_many_arguments)]
fn analyze_cmd(
    checkpoint: &Path,
    field: &Path,
    n_s: usize,
    config: Option<&Path>,
    mode: Mode,
    direction: Direction,
    out: &Path,
) -> Result<(), Failure> {
    let coarse = load_coarse(checkpoint)?;
    let mut dcfg = DecompositionConfig::default();
    if let Some(c) = config {
        let h = read_config(c)?.hyperparams()?;
        if h.parent_arch != coarse.arch {
            return Err(Failure::Runtime(
                Error::Architecture(format!("checkpoint {:?} vs configured parent {:?}", coarse.arch.widths, h.parent_arch.widths)).to_string(),
            ));
        }
        dcfg = h.decomposition;
    }
    let f = SpeedField::load(field)?;
    let obs = observe(&f, n_s)?;
    let (px, pt, report) = analyze(&coarse, &obs, geometry(&f), mode, direction, &dcfg)?;
    fs::create_dir_all(out)?;
    px.write_csv(fs::File::create(out.join("profile_x.csv"))?)?;
    pt.write_csv(fs::File::create(out.join("profile_t.csv"))?)?;
    fs::write(out.join("decision.json"), serde_json::to_string_pretty(&report)?)?;
    let d = &report.decision;
    println!(
        "S={:.4} decomposed={} peaks_x={:?} peaks_t={:?} x_splits={:?} t_splits={:?}",
        report.indicator, d.decomposed, d.peaks_x, d.peaks_t, d.x_splits, d.t_splits
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate { config, out } => generate(&config, &out),
        Cmd::Sensors { field, n_s, out } => sensors(&field, n_s, &out),
        Cmd::Run { config, method, n_s, seed, scale, direction, mode, out } => {
            run(&config, method, n_s, seed, scale, direction, mode, out)
        }
        Cmd::Matrix { config, seed, scale, direction, out } => matrix(&config, seed, scale, direction, out),
        Cmd::Analyze { checkpoint, field, n_s, config, mode, direction, out } => {
            analyze_cmd(&checkpoint, &field, n_s, config.as_deref(), mode, direction, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
