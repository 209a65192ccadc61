use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgd_selfnorm::diagnostics::{
    decade_checkpoints, singular_normalizer_demo, two_index_model, write_condition_csv, DEFAULT_HISTOGRAM_BINS,
};
use sgd_selfnorm::harness::{self, CoverageReport, ExperimentConfig};
use sgd_selfnorm::{Error, Result, RngStream, StepSchedule};

#[derive(Parser)]
#[command(
    name = "sgd-selfnorm",
    version,
    about = "Self-normalized confidence regions for heavy-tailed SGD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a coverage experiment and write the report.
    Run(Common),
    /// Gradient-norm histogram and Hill tail-index curve at θ*.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Number of gradient draws.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Run every applicable method on one config.
    Compare(Common),
    /// Track λ_min/λ_max of the gradient second-moment matrix on a
    /// quadratic with two noise indices.
    DemoSingular {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.3)]
        alpha1: f64,
        #[arg(long, default_value_t = 1.9)]
        alpha2: f64,
        /// Final iteration count (default 10⁶).
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// n = 10⁶ and 500 replications.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        Ok(cfg)
    }

    fn out_or(&self, cfg: &ExperimentConfig, default: &str) -> PathBuf {
        cfg.output.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn print_report(report: &CoverageReport) {
    println!(
        "{:<15} {:>5} {:>9} {:>11} {:>9} {:>10} {:>9}",
        "method", "r", "coverage", "avg_length", "mse", "in_band", "failures"
    );
    for row in &report.rows {
        let r = row.r.map(|r| format!("{r}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<15} {:>5} {:>9.4} {:>11.4e} {:>9.2e} {:>10.3} {:>9}",
            row.method.to_string(),
            r,
            row.coverage,
            row.avg_length,
            row.mse,
            row.band_fraction,
            row.failures
        );
    }
}

fn experiment(common: &Common, all_methods: bool) -> Result<()> {
    let mut cfg = common.load()?;
    if all_methods {
        cfg = cfg.with_all_methods();
    }
    let out = common.out_or(&cfg, "report.csv");
    let report = harness::run_experiment(&cfg)?;
    harness::emit_report(&report, &out)?;
    print_report(&report);
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => experiment(&common, false),
        Command::Compare(common) => experiment(&common, true),
        Command::Diagnose { common, draws } => {
            let cfg = common.load()?;
            let out = common.out_or(&cfg, "gradient_norms.csv");
            let summary = harness::diagnose(&cfg, draws)?;
            let meta = format!("# draws: {draws}\n# seed: {}\n# model: {:?}\n", cfg.seed, cfg.model);
            let mut hist = create(&out)?;
            write!(
                hist,
                "{meta}# bins: {DEFAULT_HISTOGRAM_BINS} log-spaced from the smallest positive norm; first bin starts at 0\n"
            )
            .map_err(|e| io_error(&out, e))?;
            summary.write_histogram_csv(hist)?;
            let hill_path = harness::sibling_path(&out, "hill");
            let mut hill = create(&hill_path)?;
            write!(
                hill,
                "{meta}# k: 30 log-spaced points on [10, N/10] over the N nonzero norms\n"
            )
            .map_err(|e| io_error(&hill_path, e))?;
            summary.hill.write_csv(hill)?;
            let mut mid = summary.hill.alpha_hat.clone();
            mid.sort_by(f64::total_cmp);
            println!("median Hill estimate over the k-grid: {:.3}", mid[mid.len() / 2]);
            println!("wrote {} and {}", out.display(), hill_path.display());
            Ok(())
        }
        Command::DemoSingular {
            common,
            alpha1,
            alpha2,
            n,
        } => {
            let cfg = common.load()?;
            let out = common.out_or(&cfg, "condition.csv");
            let model = two_index_model(alpha1, alpha2)?;
            let schedule = StepSchedule::new(cfg.step_c, cfg.step_rho)?;
            let series =
                singular_normalizer_demo(&model, &decade_checkpoints(n), &schedule, RngStream::new(cfg.seed, 0))?;
            for p in &series {
                println!("n = {:>9}  λ_min/λ_max = {:.3e}", p.n, p.ratio);
            }
            write_condition_csv(&series, create(&out)?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
