//! Command-line entry points: run an experiment, inspect importance weights,
//! aggregate result files, and write a procedural CIFAR-format dataset.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shortcut_prior::data::{load_cifar_dir, read_manifest, write_synthetic_cifar, DataError};
use shortcut_prior::exec::{set_exec_mode, ExecMode};
use shortcut_prior::metrics::{
    aggregate_runs, iw_distribution_report, write_aggregate_csv, MetricsError, ResultRecord,
};
use shortcut_prior::pipeline::{read_iw_rows, run_experiment, ExperimentConfig, PipelineError};

#[derive(Parser)]
#[command(
    name = "shortcut-prior",
    version,
    about = "Importance-weighted training against injected shortcuts"
)]
struct Cli {
    /// Force the single-threaded kernels.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every condition and seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Use the reduced sizes of the config's `desk` section.
        #[arg(long)]
        desk_scale: bool,
        /// Directory with the CIFAR-10 binary batches.
        #[arg(long, env = "CIFAR10_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        num_runs: Option<u64>,
        #[arg(long)]
        base_seed: Option<u64>,
    },
    /// Summarize an importance-weight file against an injection manifest.
    InspectIws {
        #[arg(long)]
        iws: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Histogram CSV destination; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and standard deviation per (pair, shortcut, condition).
    Aggregate {
        #[arg(long)]
        glob: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a procedural stand-in dataset in CIFAR-10 binary layout.
    SynthCifar {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Config(_) => Failure::new(2, e.to_string()),
            PipelineError::Data(DataError::MissingFile(_)) => Failure::new(3, e.to_string()),
            _ => Failure::new(1, e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Invalid(_) | MetricsError::IndexMismatch(_) => Failure::new(2, e.to_string()),
            _ => Failure::new(1, e.to_string()),
        }
    }
}

fn io(context: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(1, format!("{}: {e}", context.display()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: &Path,
    output_dir: Option<PathBuf>,
    desk_scale: bool,
    data_dir: Option<PathBuf>,
    jobs: Option<usize>,
    num_runs: Option<u64>,
    base_seed: Option<u64>,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::new(2, format!("{}: {e}", config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(d) = output_dir {
        cfg.output_dir = Some(d);
    }
    if desk_scale {
        cfg.desk_scale = true;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    if let Some(n) = num_runs {
        cfg.num_runs = n;
    }
    if let Some(s) = base_seed {
        cfg.base_seed = s;
    }
    if data_dir.is_some() {
        cfg.data_dir = data_dir;
    }
    cfg.validate()?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Failure::new(2, "output_dir: not set in the config or by --output-dir"))?;
    let dir = cfg.data_dir.clone().ok_or_else(|| {
        Failure::new(
            3,
            "no CIFAR-10 directory: set data_dir, pass --data-dir or export CIFAR10_DIR",
        )
    })?;
    let data = load_cifar_dir(&dir).map_err(PipelineError::from)?;
    let result = run_experiment(&data, &cfg, Some(&out))?;
    for row in &result.aggregate {
        let m = |name: &str| row.metric(name).map(|s| s.mean).unwrap_or(f64::NAN);
        println!(
            "{:<9} runs={} congruent={:.4} incongruent={:.4} neutral={:.4} OB={:+.4}",
            row.condition.as_str(),
            row.n_runs,
            m("acc_congruent"),
            m("acc_incongruent"),
            m("acc_neutral"),
            m("OB"),
        );
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn cmd_inspect(iws: &Path, manifest: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let rows = read_iw_rows(iws).map_err(|e| Failure::new(2, format!("{}: {e}", iws.display())))?;
    if rows.is_empty() {
        return Err(Failure::new(2, format!("{}: no importance weights", iws.display())));
    }
    let manifest_rows = read_manifest(manifest).map_err(|e| Failure::new(2, format!("{}: {e}", manifest.display())))?;
    let report = iw_distribution_report(&rows, &manifest_rows)?;
    for (name, g) in [("shortcut", &report.shortcut), ("clean", &report.clean)] {
        let q: Vec<String> = g.quantiles.iter().map(|(q, v)| format!("q{q}={v:.4}")).collect();
        println!("# {name}: n={} mean={:.4} {}", g.count, g.mean, q.join(" "));
    }
    for b in &report.bottom {
        println!(
            "# bottom {:.0}% ({} items): flagged share {:.4}, flagged recall {:.4}",
            b.q * 100.0,
            b.items,
            b.flagged_share,
            b.flagged_recall
        );
    }
    match out {
        Some(path) => {
            report.write_histogram_csv(&path)?;
            println!("# histogram written to {}", path.display());
        }
        None => {
            println!("bin_low,bin_high,count_shortcut,count_clean");
            for b in &report.histogram {
                println!("{},{},{},{}", b.bin_low, b.bin_high, b.count_shortcut, b.count_clean);
            }
        }
    }
    Ok(())
}

fn cmd_aggregate(pattern: &str, out: &Path) -> Result<(), Failure> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Failure::new(2, format!("bad glob {pattern:?}: {e}")))?
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::new(1, e.to_string()))?;
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new(2, format!("no result files match {pattern:?}")));
    }
    let mut records = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
        let r: ResultRecord = serde_json::from_str(&text)
            .map_err(|e| Failure::new(2, format!("{}: not a result file: {e}", p.display())))?;
        records.push(r);
    }
    let rows = aggregate_runs(&records)?;
    let mut buf = Vec::new();
    write_aggregate_csv(&mut buf, &rows)?;
    std::fs::write(out, buf).map_err(|e| io(out, e))?;
    println!(
        "{} result files, {} groups -> {}",
        records.len(),
        rows.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.sequential {
        set_exec_mode(ExecMode::Sequential);
    }
    let result = match cli.command {
        Command::Run {
            config,
            output_dir,
            desk_scale,
            data_dir,
            jobs,
            num_runs,
            base_seed,
        } => cmd_run(&config, output_dir, desk_scale, data_dir, jobs, num_runs, base_seed),
        Command::InspectIws { iws, manifest, out } => cmd_inspect(&iws, &manifest, out),
        Command::Aggregate { glob, out } => cmd_aggregate(&glob, &out),
        Command::SynthCifar { out_dir, seed } => write_synthetic_cifar(&out_dir, seed, 5000, 1000)
            .map(|()| println!("wrote procedural CIFAR-format batches to {}", out_dir.display()))
            .map_err(|e| Failure::new(1, e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
