use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedcond::experiment::{
    fingerprint_separation, format_table, load_data, prepare, read_report, read_reports, run_experiment,
    run_suite, with_threads, write_aggregate, ExperimentConfig, ExperimentError, Formats, GridConfig, RunOptions,
    Stage, DATA_ROOT_ENV,
};
use fedcond::heterogeneity::Partition;

/// Federated-learning heterogeneity lab.
#[derive(Parser)]
#[command(name = "fedcond", version)]
struct Cli {
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 is fully sequential, 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Report formats: json, csv or both.
    #[arg(long, global = true, default_value = "both")]
    format: Formats,
    /// Dataset root holding mnist/ and fashion-mnist/.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config or an emitted report.json.
    Run { config: PathBuf },
    /// Run every cell of a grid config.
    Suite { grid: PathBuf },
    /// Partition and fingerprint clients without training.
    Fingerprint { config: PathBuf },
    /// Re-aggregate the reports under a directory.
    Report { dir: PathBuf },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    if path.extension().is_some_and(|e| e == "json") {
        let cfg = read_report(path)
            .map_err(|e| ExperimentError::msg(Stage::Config, e.source.to_string()))?
            .config;
        cfg.validate()?;
        Ok(cfg)
    } else {
        ExperimentConfig::load(path)
    }
}

impl Cli {
    fn options(&self) -> RunOptions {
        RunOptions {
            threads: self.threads,
            formats: self.format,
            data_root: self.data_root.clone(),
        }
    }

    fn config(&self, path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = load_config(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(Path::new("runs").join(cfg.run_id()));
        }
        Ok(cfg)
    }
}

fn write_fingerprints(partition: &Partition, dir: &Path) -> Result<PathBuf, ExperimentError> {
    let err = |e: &dyn std::fmt::Display| ExperimentError::msg(Stage::Emit, format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(|e| err(&e))?;
    let path = dir.join("fingerprints.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| err(&e))?;
    let l = partition.shards.first().and_then(|s| s.stats.as_ref()).map_or(0, |s| s.l());
    let mut header: Vec<String> = ["client_id", "cluster_id", "concept_id", "covariate_id", "train_size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..l).map(|i| format!("s{i}")));
    w.write_record(&header).map_err(|e| err(&e))?;
    for s in &partition.shards {
        let mut row = vec![
            s.client_id.to_string(),
            s.cluster_id.to_string(),
            s.concept_id.to_string(),
            s.covariate_id.to_string(),
            s.train.len().to_string(),
        ];
        if let Some(v) = &s.stats {
            row.extend(v.as_slice().iter().map(|x| x.to_string()));
        }
        w.write_record(&row).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))?;
    Ok(path)
}

fn execute(cli: &Cli) -> Result<ExitCode, ExperimentError> {
    let opts = cli.options();
    match &cli.command {
        Command::Run { config } => {
            let cfg = cli.config(config)?;
            let report = run_experiment(&cfg, &opts)?;
            print!("{}", format_table(std::slice::from_ref(&report)));
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
        }
        Command::Suite { grid } => {
            let mut grid = GridConfig::load(grid)?;
            if let Some(seed) = cli.seed {
                grid.seed = seed;
            }
            if let Some(out) = &cli.out {
                grid.output_dir = Some(out.clone());
            }
            if grid.output_dir.is_none() {
                grid.output_dir = Some(PathBuf::from("runs/suite"));
            }
            let outcome = run_suite(&grid, &opts)?;
            print!("{}", format_table(&outcome.reports));
            let failed: Vec<_> = outcome.failures().collect();
            for f in &failed {
                eprintln!("{} failed: {}", f.run_id, f.error.as_deref().unwrap_or(""));
            }
            if !failed.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Fingerprint { config } => {
            let cfg = cli.config(config)?;
            let data = load_data(&cfg, &opts.data_root())?;
            let partition = with_threads(opts.threads, || prepare(&cfg, &data, opts.threads != 1))??;
            let dir = cfg.output_dir.clone().unwrap_or_default();
            let path = write_fingerprints(&partition, &dir)?;
            println!("{} clients, {} clusters", partition.shards.len(), partition.cluster_count());
            if let Some((within, between)) = fingerprint_separation(&partition) {
                println!("max within-cluster distance  {within:.6e}");
                println!("min between-cluster distance {between:.6e}");
            }
            println!("wrote {}", path.display());
        }
        Command::Report { dir } => {
            let reports = read_reports(dir)?;
            if reports.is_empty() {
                return Err(ExperimentError::msg(Stage::Emit, format!("no report.json under {}", dir.display())));
            }
            write_aggregate(cli.out.as_deref().unwrap_or(dir), &reports)?;
            print!("{}", format_table(&reports));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
