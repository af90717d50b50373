//! `shift`: runs estimation experiments and writes one CSV (or JSON) row per
//! estimator and run.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shift_core::experiment::{write_csv, write_json, write_truth_csv, ResultRow};
use shift_core::{alpha_report, sweep, Error, Experiment, ExperimentConfig, SweepAxis};

/// Thread count for the worker pool; the only variable read from the environment.
const THREADS_VAR: &str = "SHIFT_THREADS";

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "shift",
    version,
    about = "Simulate b-bit distributed distribution estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic sparse-heterogeneity experiment.
    Simulate(Common),
    /// k-gram experiment over a directory of text files, one per cluster.
    Ngram {
        #[command(flatten)]
        common: Common,
        /// Also print pairwise heterogeneity tests of the corpus to stderr.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Runs the configuration once per value of one knob.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// n | T | s | b | r | omega
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `1e4,1e5,1e6`.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Mean number of fine-tuned entries for each alpha = 2^r ln(n).
    AlphaReport {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            allow_hyphen_values = true,
            default_value = "-5,-4,-3,-2,-1,0,1,2,3,4"
        )]
        r_values: String,
    },
    /// Writes the ground-truth distributions of one run, one row per cluster.
    DumpTruth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
}

/// Flags shared by every subcommand. Each one overrides the matching key of
/// the `--config` file.
#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long, short = 'T')]
    clusters: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    n_new: Option<String>,
    #[arg(long, short = 'b')]
    bits: Option<String>,
    /// uniform | geometric:BETA
    #[arg(long)]
    central: Option<String>,
    /// Comma-separated: shift-median, shift-trimmed[:OMEGA], local, global.
    #[arg(long)]
    estimators: Option<String>,
    /// r in alpha = 2^r ln(n).
    #[arg(long, allow_hyphen_values = true)]
    alpha_r: Option<String>,
    #[arg(long)]
    repeats: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    corpus_dir: Option<String>,
    /// Gram length.
    #[arg(long, short = 'k')]
    k: Option<String>,
    /// concat | break
    #[arg(long)]
    window: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    renormalize: Option<String>,
    /// Record estimator wall time (makes output non-reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    timing: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long, short = 'o')]
    output: Option<String>,
    /// Emit JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        [
            ("mode", &self.mode),
            ("d", &self.d),
            ("s", &self.s),
            ("clusters", &self.clusters),
            ("n", &self.n),
            ("n-new", &self.n_new),
            ("bits", &self.bits),
            ("central", &self.central),
            ("estimators", &self.estimators),
            ("alpha-r", &self.alpha_r),
            ("repeats", &self.repeats),
            ("seed", &self.seed),
            ("corpus-dir", &self.corpus_dir),
            ("k", &self.k),
            ("window", &self.window),
            ("renormalize", &self.renormalize),
            ("timing", &self.timing),
            ("output", &self.output),
        ]
        .into_iter()
        .filter_map(|(key, value)| value.as_deref().map(|v| (key, v)))
        .collect()
    }

    /// File first, then flags, then the subcommand's forced mode.
    fn build(&self, mode: Option<&str>) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            config.apply_kv_text(&text)?;
        }
        for (key, value) in self.overrides() {
            config.set(key, value)?;
        }
        if let Some(mode) = mode {
            config.set("mode", mode)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::MalformedDump(_) => EXIT_IO,
        Error::Config(_)
        | Error::BitsOutOfRange { .. }
        | Error::DimensionTooSmall { .. }
        | Error::TrimTooLarge { .. }
        | Error::InvalidTrimFraction { .. }
        | Error::NonPositiveAlpha { .. }
        | Error::ZeroSampleSize
        | Error::BetaOutOfRange { .. }
        | Error::SBudgetExceedsDim { .. }
        | Error::TextTooShort { .. }
        | Error::GramLengthOutOfRange { .. } => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad list value `{v}`")))
        })
        .collect()
}

fn open_output(config: &ExperimentConfig) -> Result<Box<dyn Write>, Error> {
    Ok(match &config.output {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(config: &ExperimentConfig, json: bool, rows: &[ResultRow]) -> Result<(), Error> {
    let out = open_output(config)?;
    if json {
        write_json(out, rows)
    } else {
        write_csv(out, rows)
    }
}

fn diagnostics(experiment: &Experiment) -> Result<(), Error> {
    let Some(truths) = experiment.corpus_truths() else {
        return Ok(());
    };
    let counts: Vec<Vec<u64>> = truths.iter().map(|g| g.counts.clone()).collect();
    let pairs = shift_core::eval::pairwise_chi_squared(&counts)?;
    let entries = shift_core::eval::entrywise_tests(&counts, 0.05)?;
    eprintln!(
        "clusters {}  max pairwise chi-squared p-value {:e}  entry-wise rejections {:.2}% of {} tests",
        truths.len(),
        pairs.max_p_value(),
        100.0 * entries.rejection_fraction(),
        entries.tests
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(common) => {
            let config = common.build(Some("synthetic"))?;
            let rows = Experiment::new(config.clone())?.run()?;
            emit(&config, common.json, &rows)
        }
        Command::Ngram {
            common,
            diagnostics: show,
        } => {
            let config = common.build(Some("ngram"))?;
            let experiment = Experiment::new(config.clone())?;
            if show {
                diagnostics(&experiment)?;
            }
            emit(&config, common.json, &experiment.run()?)
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let config = common.build(None)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = sweep(&config, axis, &parse_list(&values)?)?;
            emit(&config, common.json, &rows)
        }
        Command::AlphaReport { common, r_values } => {
            let config = common.build(None)?;
            let report = alpha_report(&config, &parse_list(&r_values)?)?;
            let mut out = open_output(&config)?;
            if common.json {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Config(e.to_string()))?;
                writeln!(out, "{text}")?;
            } else {
                out.write_all(report.to_csv().as_bytes())?;
                match report.recommended_r {
                    Some(r) => eprintln!("recommended r = {r} (alpha = 2^{r} ln n)"),
                    None => eprintln!("no r keeps fewer than d/2 entries fine-tuned"),
                }
            }
            out.flush()?;
            Ok(())
        }
        Command::DumpTruth { common, run } => {
            let config = common.build(None)?;
            let truths = Experiment::new(config.clone())?.truths(run)?;
            write_truth_csv(open_output(&config)?, &truths)
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().map_err(|_| {
        Error::Config(format!(
            "{THREADS_VAR} must be a positive integer, got `{value}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(|| init_threads().and_then(|()| run(cli)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
