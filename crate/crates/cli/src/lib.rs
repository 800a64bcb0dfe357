//! Command-line front end: every test and study, JSON on stdout.
//!
//! Exit codes: 0 success, 2 input/data error, 3 invalid flags or usage.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use depstat::cvm::{cvm_test, mobius_cvm_all_subsets};
use depstat::data::{read_csv, to_ranks, BlockSample, BlockSpec, DataMatrix};
use depstat::dcov::{dcor, dcov_test, mobius_all_subsets, CenteredKernel, Exponent};
use depstat::harness::{
    calibrate, power_curve, residual_miscalibration_study, write_calibration_csv, Margin,
    MiscalibrationConfig, Model, ScenarioSpec, TestKind, STUDY_REPS,
};
use depstat::resampling::{ResamplingPlan, Scheme};
use depstat::serial::{acov_spectrum, lag_embed_mobius, residual_serial_test, SeriesSample};
use depstat::DepError;

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

const DEFAULT_REPS: usize = 999;

#[derive(Parser, Debug)]
#[command(
    name = "depstat",
    version,
    about = "Distance covariance, rank and Cramér-von Mises dependence tests",
    after_help = "Block descriptors: blocks separated by ';', columns by ',', \
                  half-open ranges as 'a:b' (0-based). Example: \"0,1;2:5;5\"."
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "DEPSTAT_THREADS")]
    threads: Option<usize>,

    /// Write JSON here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV file (optional header row).
    #[arg(long, short)]
    input: PathBuf,
    /// Block descriptor; defaults to one block per column.
    #[arg(long, short)]
    blocks: Option<String>,
    /// Replace observations by column-wise normalized ranks.
    #[arg(long)]
    rank: bool,
}

#[derive(Args, Debug, Clone)]
struct TestArgs {
    /// Monte Carlo replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// RNG seed; drawn from system entropy when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct AlphaArg {
    /// Distance exponent, 0 < alpha < 2.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Args, Debug, Clone)]
struct StudyArgs {
    #[arg(long, default_value_t = 500)]
    runs: usize,
    /// Replicates per test inside each run.
    #[arg(long, default_value_t = STUDY_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-block distance covariance permutation test.
    Dcov {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        alpha: AlphaArg,
    },
    /// Distance correlation of two blocks (no test).
    Dcor {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        alpha: AlphaArg,
    },
    /// Two-block Cramér-von Mises independence test.
    Cvm {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Möbius distance-covariance statistics over all block subsets.
    Mobius {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        alpha: AlphaArg,
    },
    /// Möbius empirical-CDF statistics over all block subsets.
    MobiusCvm {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Distance autocovariance spectrum and portmanteau test.
    Serial {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        alpha: AlphaArg,
        /// Largest lag.
        #[arg(long, default_value_t = 3)]
        lags: usize,
        /// Test AR(1) residuals with a parametric bootstrap.
        #[arg(long)]
        residual_ar1: bool,
        /// Known process mean for the AR(1) fit, comma-separated per coordinate.
        #[arg(long, requires = "residual_ar1")]
        mu: Option<String>,
    },
    /// Möbius test of independence between consecutive observations.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        alpha: AlphaArg,
        /// Window length m (2..=6).
        #[arg(long, default_value_t = 2)]
        window: usize,
    },
    /// Rejection rates over models, sample sizes and tests.
    Power {
        /// Dependence models, e.g. gaussian-rho:0.5 or quadratic:0.3+cube.
        #[arg(long, required = true, value_delimiter = ',')]
        model: Vec<String>,
        #[arg(long = "n", required = true, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, required = true, value_delimiter = ',')]
        tests: Vec<String>,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Size of tests under a null model, with uniformity diagnostics.
    Calibrate {
        #[arg(long, default_value = "independent")]
        model: String,
        #[arg(long = "n", default_value_t = 50)]
        n: usize,
        #[arg(long, required = true, value_delimiter = ',')]
        tests: Vec<String>,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Naive permutation vs parametric bootstrap on AR(1) residuals.
    ResidualStudy {
        #[arg(long, allow_negative_numbers = true)]
        phi: f64,
        #[arg(long = "n", default_value_t = 200)]
        n: usize,
        #[command(flatten)]
        study: StudyArgs,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(String),
}

impl Failure {
    fn usage(e: DepError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<DepError> for Failure {
    fn from(e: DepError) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct DcorOutput {
    method: &'static str,
    statistic: f64,
    n: usize,
    alpha: f64,
    rank: bool,
}

#[derive(Serialize)]
struct Ranked<T: Serialize> {
    rank: bool,
    #[serde(flatten)]
    result: T,
}

#[derive(Serialize)]
struct StudyOutput<T: Serialize> {
    seed: u64,
    runs: usize,
    reps: usize,
    level: f64,
    alpha: f64,
    rows: T,
}

/// Writes `f64` with 17 significant digits so output is exact and stable.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize `value` as JSON with the fixed float format, newline-terminated.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Parse `args` (including the program name), execute, and return the
/// process exit code. JSON goes to `out` unless `--output` is given.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(json) => {
            let written = match &cli.output {
                Some(path) => std::fs::write(path, &json),
                None => out.write_all(&json),
            };
            match written {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(err, "error: cannot write output: {e}");
                    EXIT_INPUT
                }
            }
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Input(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INPUT
        }
    }
}

fn execute(cli: &Cli) -> Outcome<Vec<u8>> {
    match cli.threads {
        Some(0) => Err(Failure::Usage("--threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Failure::Usage(e.to_string()))?
            .install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    }
}

fn envelope<T: Serialize>(command: &str, body: T) -> Outcome<Vec<u8>> {
    to_json(&Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        body,
    })
    .map_err(|e| Failure::Input(e.to_string()))
}

fn exponent(a: &AlphaArg) -> Outcome<Exponent> {
    Exponent::new(a.alpha).map_err(Failure::usage)
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn plan(test: &TestArgs, scheme: Scheme) -> ResamplingPlan {
    ResamplingPlan::new(scheme, test.reps.unwrap_or(DEFAULT_REPS), seed_or_entropy(test.seed))
}

fn block_spec(data: &DataArgs) -> Outcome<Option<BlockSpec>> {
    data.blocks
        .as_deref()
        .map(BlockSpec::parse)
        .transpose()
        .map_err(Failure::usage)
}

fn two_block_spec(data: &DataArgs) -> Outcome<Option<BlockSpec>> {
    let spec = block_spec(data)?;
    match &spec {
        Some(s) if s.len() != 2 => Err(Failure::usage(DepError::BlockCount { d: s.len(), min: 2, max: 2 })),
        _ => Ok(spec),
    }
}

fn load_matrix(path: &Path) -> Outcome<DataMatrix> {
    Ok(read_csv(path)?.0)
}

fn load_blocks(data: &DataArgs, spec: Option<BlockSpec>) -> Outcome<BlockSample> {
    let matrix = load_matrix(&data.input)?;
    let spec = match spec {
        Some(s) => s,
        None => BlockSpec::singletons(matrix.ncols())?,
    };
    let sample = BlockSample::new(matrix, spec)?;
    Ok(if data.rank { sample.to_ranks()? } else { sample })
}

fn load_series(data: &DataArgs, spec: Option<BlockSpec>) -> Outcome<SeriesSample> {
    let matrix = load_matrix(&data.input)?;
    let matrix = match spec {
        None => matrix,
        Some(s) if s.len() == 1 => {
            s.check_against(matrix.ncols())?;
            matrix.select_columns(s.block(0))?
        }
        Some(s) => {
            return Err(Failure::Usage(format!(
                "series commands take one block, descriptor has {}",
                s.len()
            )))
        }
    };
    let matrix = if data.rank { to_ranks(&matrix).into_inner() } else { matrix };
    Ok(SeriesSample::new(matrix)?)
}

fn method(base: &str, rank: bool) -> String {
    if rank {
        format!("rank-{base}")
    } else {
        base.to_string()
    }
}

fn ranked<T: Serialize>(rank: bool, result: T) -> Ranked<T> {
    Ranked { rank, result }
}

fn parse_mu(mu: &str) -> Outcome<Vec<f64>> {
    mu.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Failure::Usage(format!("bad --mu entry {v:?}")))
        })
        .collect()
}

fn scenario_base(
    model: &str,
    n: usize,
    tests: &[String],
    study: &StudyArgs,
    seed: u64,
) -> Outcome<ScenarioSpec> {
    let (model, margin) = match model.trim().strip_suffix("+cube") {
        Some(m) => (m, Margin::Cube),
        None => (model, Margin::Identity),
    };
    let tests = tests
        .iter()
        .map(|t| TestKind::parse(t))
        .collect::<depstat::Result<Vec<_>>>()
        .map_err(Failure::usage)?;
    let mut sc = ScenarioSpec::new(Model::parse(model).map_err(Failure::usage)?, n, tests, seed);
    sc.margin = margin;
    sc.runs = study.runs;
    sc.reps = study.reps;
    sc.level = study.level;
    sc.alpha = Exponent::new(study.alpha).map_err(Failure::usage)?;
    sc.validate().map_err(Failure::usage)?;
    Ok(sc)
}

fn write_csv_file(path: &Path, f: impl FnOnce(std::fs::File) -> depstat::Result<()>) -> Outcome<()> {
    let file = std::fs::File::create(path).map_err(|e| {
        Failure::from(DepError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    Ok(f(file)?)
}

fn dispatch(command: &Command) -> Outcome<Vec<u8>> {
    match command {
        Command::Dcov { data, test, alpha } => {
            let a = exponent(alpha)?;
            let spec = two_block_spec(data)?;
            let plan = plan(test, Scheme::PermuteSecondBlock);
            let sample = load_blocks(data, spec)?;
            let result = dcov_test(&sample, a, &plan, &method("dcov", data.rank))?;
            envelope("dcov", ranked(data.rank, result))
        }
        Command::Dcor { data, alpha } => {
            let a = exponent(alpha)?;
            let spec = two_block_spec(data)?;
            let sample = load_blocks(data, spec)?;
            if sample.d() != 2 {
                return Err(DepError::BlockCount { d: sample.d(), min: 2, max: 2 }.into());
            }
            let kx = CenteredKernel::from_block(sample.block(0), a);
            let ky = CenteredKernel::from_block(sample.block(1), a);
            envelope(
                "dcor",
                DcorOutput {
                    method: if data.rank { "rank-dcor" } else { "dcor" },
                    statistic: dcor(&kx, &ky)?,
                    n: sample.n(),
                    alpha: a.value(),
                    rank: data.rank,
                },
            )
        }
        Command::Cvm { data, test } => {
            let spec = two_block_spec(data)?;
            let plan = plan(test, Scheme::PermuteSecondBlock);
            let sample = load_blocks(data, spec)?;
            let result = cvm_test(&sample, &plan, &method("cvm", data.rank))?;
            envelope("cvm", ranked(data.rank, result))
        }
        Command::Mobius { data, test, alpha } => {
            let a = exponent(alpha)?;
            let spec = block_spec(data)?;
            let plan = plan(test, Scheme::PermuteBlocksIndependently);
            let sample = load_blocks(data, spec)?;
            let result = mobius_all_subsets(&sample, a, &plan, &method("mobius", data.rank))?;
            envelope("mobius", ranked(data.rank, result))
        }
        Command::MobiusCvm { data, test } => {
            let spec = block_spec(data)?;
            let plan = plan(test, Scheme::PermuteBlocksIndependently);
            let sample = load_blocks(data, spec)?;
            let result = mobius_cvm_all_subsets(&sample, &plan, &method("mobius-cvm", data.rank))?;
            envelope("mobius-cvm", ranked(data.rank, result))
        }
        Command::Serial {
            data,
            test,
            alpha,
            lags,
            residual_ar1,
            mu,
        } => {
            let a = exponent(alpha)?;
            let spec = block_spec(data)?;
            if *lags == 0 {
                return Err(Failure::Usage("--lags must be >= 1".into()));
            }
            let mu = mu.as_deref().map(parse_mu).transpose()?;
            let series = load_series(data, spec)?;
            if *residual_ar1 {
                let plan = plan(test, Scheme::ParametricBootstrapAr1);
                let result = residual_serial_test(&series, *lags, a, mu.as_deref(), &plan)?;
                envelope("serial", ranked(data.rank, result))
            } else {
                let plan = plan(test, Scheme::PermuteTimeIndex);
                let result = acov_spectrum(&series, *lags, a, &plan)?;
                envelope("serial", ranked(data.rank, result))
            }
        }
        Command::Embed {
            data,
            test,
            alpha,
            window,
        } => {
            let a = exponent(alpha)?;
            let spec = block_spec(data)?;
            if !(2..=6).contains(window) {
                return Err(Failure::Usage(format!("--window {window} not in 2..=6")));
            }
            let plan = plan(test, Scheme::PermuteTimeIndex);
            let series = load_series(data, spec)?;
            let result = lag_embed_mobius(&series, *window, a, &plan)?;
            envelope("embed", ranked(data.rank, result))
        }
        Command::Power {
            model,
            sizes,
            tests,
            study,
        } => {
            let seed = seed_or_entropy(study.seed);
            let mut scenarios = Vec::new();
            for m in model {
                for &n in sizes {
                    scenarios.push(scenario_base(m, n, tests, study, seed)?);
                }
            }
            let table = power_curve(&scenarios)?;
            if let Some(path) = &study.csv {
                write_csv_file(path, |f| table.write_csv(f))?;
            }
            envelope(
                "power",
                StudyOutput {
                    seed,
                    runs: study.runs,
                    reps: study.reps,
                    level: study.level,
                    alpha: study.alpha,
                    rows: &table.rows,
                },
            )
        }
        Command::Calibrate {
            model,
            n,
            tests,
            study,
        } => {
            let seed = seed_or_entropy(study.seed);
            let sc = scenario_base(model, *n, tests, study, seed)?;
            if !sc.model.is_null() {
                return Err(Failure::Usage(format!("calibrate needs a null model, got {model}")));
            }
            let rows = calibrate(&sc)?;
            if let Some(path) = &study.csv {
                write_csv_file(path, |f| write_calibration_csv(&rows, f))?;
            }
            envelope(
                "calibrate",
                StudyOutput {
                    seed,
                    runs: study.runs,
                    reps: study.reps,
                    level: study.level,
                    alpha: study.alpha,
                    rows,
                },
            )
        }
        Command::ResidualStudy { phi, n, study } => {
            let seed = seed_or_entropy(study.seed);
            Model::Ar1 { phi: *phi }.validate().map_err(Failure::usage)?;
            let mut cfg = MiscalibrationConfig::new(*phi, *n, study.runs, seed);
            cfg.reps = study.reps;
            cfg.level = study.level;
            cfg.alpha = Exponent::new(study.alpha).map_err(Failure::usage)?;
            if cfg.runs == 0 || cfg.reps == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
                return Err(Failure::Usage("runs, reps must be >= 1 and level in (0,1)".into()));
            }
            let report = residual_miscalibration_study(&cfg)?;
            if let Some(path) = &study.csv {
                write_csv_file(path, |f| report.write_csv(f))?;
            }
            envelope("residual-study", report)
        }
    }
}
