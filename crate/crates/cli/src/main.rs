//! `cgauss`: conditional Gaussian laws on a weighted-sum hyperplane.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cgauss::credit::{run_credit_demo, CreditDemoConfig};
use cgauss::export;
use cgauss::law::DEFAULT_DENSE_CAP;
use cgauss::sampler::DEFAULT_CHUNK;
use cgauss::verifier::{
    check_against_dense_oracle, compare, default_epsilon, sampler_statistics,
    slice_oracle_chunked, DenseOracleReport, Thresholds, VerificationReport,
};
use cgauss::{ConditionalGaussian, DiagPlusConstant, Error, Method, Sampler, Space, WeightVector};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const EXIT_INTERNAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_STATISTICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "cgauss", version, about = "Exact law of i.i.d. Normals given a weighted sum")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Comma-separated nonzero weights, e.g. `1,2,3`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    weights: Option<String>,
    /// Value of the weighted sum.
    #[arg(long, global = true, allow_hyphen_values = true)]
    c: Option<f64>,
    /// 1-based index of the eliminated coordinate (default: largest |w_i|).
    #[arg(long, global = true)]
    pivot: Option<usize>,
    /// RNG seed; drawn from the OS and echoed to stderr when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long, short = 'o', global = true)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Z,
    X,
}

impl From<SpaceArg> for Space {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Z => Space::Z,
            SpaceArg::X => Space::X,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the conditional law as JSON.
    Law,
    /// Draw samples on the hyperplane.
    Sample {
        #[arg(short = 'n', long = "samples", default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value = "exact")]
        method: Method,
        #[arg(long, value_enum, default_value = "z")]
        space: SpaceArg,
    },
    /// Compare the law with the dense and slice oracles, and optionally a sampler.
    Verify {
        #[arg(long, default_value_t = 1_000_000)]
        proposals: u64,
        /// Slice half-width (default 0.02·‖w‖).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Sampler to check against the law.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Include wall-clock time in the report.
        #[arg(long)]
        timing: bool,
    },
    /// Determinant and inverse of `a_i δ_ij + a0`.
    Lemma {
        #[arg(long, allow_hyphen_values = true)]
        a0: f64,
        #[arg(long, allow_hyphen_values = true)]
        diag: String,
    },
    /// Default-probability update in a one-factor Gaussian copula.
    DemoCredit {
        #[arg(long, allow_hyphen_values = true)]
        loadings: String,
        #[arg(long, allow_hyphen_values = true)]
        thresholds: String,
        /// 1-based obligor observed at its boundary.
        #[arg(long)]
        observed: usize,
        /// Observed value (default: that obligor's threshold).
        #[arg(long, allow_hyphen_values = true)]
        boundary: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Overflow | Error::NotPositiveDefinite { .. } => Failure::Internal(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn parse_list(name: &str, text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("--{name}: cannot parse `{}` as a number", t.trim())))
        })
        .collect()
}

fn chunk_size() -> Result<usize, Failure> {
    match std::env::var("CGAUSS_CHUNK") {
        Err(_) => Ok(DEFAULT_CHUNK),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(Failure::Usage(format!("CGAUSS_CHUNK must be a positive integer, got `{v}`"))),
        },
    }
}

impl Global {
    fn weights(&self) -> Result<WeightVector, Failure> {
        let text = self
            .weights
            .as_deref()
            .ok_or_else(|| Failure::Usage("--weights is required".into()))?;
        Ok(WeightVector::new(parse_list("weights", text)?)?)
    }

    fn c(&self) -> Result<f64, Failure> {
        match self.c {
            Some(c) if c.is_finite() => Ok(c),
            Some(c) => Err(Failure::Usage(format!("--c must be finite, got {c}"))),
            None => Err(Failure::Usage("--c is required".into())),
        }
    }

    fn law(&self) -> Result<ConditionalGaussian, Failure> {
        let weights = self.weights()?;
        let c = self.c()?;
        let pivot = match self.pivot {
            None => None,
            Some(0) => return Err(Failure::Usage("--pivot is 1-based".into())),
            Some(p) => Some(p - 1),
        };
        Ok(ConditionalGaussian::new(&weights, c, pivot, DEFAULT_DENSE_CAP)?)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let seed = rand::random::<u64>();
            eprintln!("seed: {seed}");
            seed
        })
    }

    fn format(&self, default: Format, allowed: &[Format]) -> Result<Format, Failure> {
        let f = self.format.unwrap_or(default);
        if allowed.contains(&f) {
            Ok(f)
        } else {
            Err(Failure::Usage("this subcommand only writes JSON".into()))
        }
    }

    fn sink(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
                Failure::Internal(format!("cannot create {}: {e}", path.display()))
            })?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn emit_json(&self, text: &str) -> Result<(), Failure> {
        self.format(Format::Json, &[Format::Json])?;
        let mut out = self.sink()?;
        writeln!(out, "{text}")?;
        out.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Determinants {
    closed_form: f64,
    recursive: f64,
    log_closed_form: f64,
    log_recursive: f64,
}

#[derive(Serialize)]
struct LemmaDocument<'a> {
    a0: f64,
    diag: &'a [f64],
    positive_definite: bool,
    determinant: Determinants,
    inverse: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct VerifyDocument {
    pass: bool,
    dense_oracle: DenseOracleReport,
    slice_oracle: VerificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampler: Option<SamplerCheck>,
}

#[derive(Serialize)]
struct SamplerCheck {
    method: Method,
    max_residual: f64,
    mahalanobis_mean: f64,
    redraws: u64,
    report: VerificationReport,
}

fn cmd_law(g: &Global) -> Outcome {
    g.emit_json(&g.law()?.to_json())?;
    Ok(true)
}

fn cmd_sample(g: &Global, samples: usize, method: Method, space: Space) -> Outcome {
    let format = g.format(Format::Csv, &[Format::Json, Format::Csv, Format::Binary])?;
    let law = g.law()?;
    let seed = g.seed();
    let sampler = Sampler::for_law(method, &law)?.with_chunk_size(chunk_size()?);
    if sampler.is_degenerate_use() {
        eprintln!("warning: degenerate rescale: c = 0 collapses every draw onto the origin");
    }
    let batch = sampler.sample(samples, seed, space)?;
    eprintln!("max constraint residual: {:e}", batch.max_residual(law.weights(), law.c()));
    let mut out = g.sink()?;
    match format {
        Format::Csv => export::write_csv(&batch, &mut out)?,
        Format::Binary => export::write_binary(&batch, &mut out)?,
        Format::Json => export::write_json(&batch, &mut out)?,
    }
    Ok(true)
}

fn cmd_verify(
    g: &Global,
    proposals: u64,
    epsilon: Option<f64>,
    method: Option<Method>,
    samples: usize,
    timing: bool,
) -> Outcome {
    g.format(Format::Json, &[Format::Json])?;
    let started = Instant::now();
    let law = g.law()?;
    let seed = g.seed();
    let chunk = chunk_size()?;
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(law.weights()));
    let thresholds = Thresholds::default();

    let dense_oracle = check_against_dense_oracle(&law);
    let slice = slice_oracle_chunked(law.weights(), law.c(), epsilon, proposals, seed, chunk)?;
    let mut slice_oracle = compare(&law, &slice, thresholds)?;

    let sampler = match method {
        None => None,
        Some(method) => {
            let s = Sampler::for_law(method, &law)?.with_chunk_size(chunk);
            let stats = sampler_statistics(&s, &law, samples, seed, Space::Z)?;
            let mut report = compare(&law, &stats.moments, thresholds)?;
            if timing {
                report.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
            }
            Some(SamplerCheck {
                method,
                max_residual: stats.max_residual,
                mahalanobis_mean: stats.mahalanobis_mean,
                redraws: stats.redraws,
                report,
            })
        }
    };
    if timing {
        slice_oracle.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }

    let pass = dense_oracle.pass
        && slice_oracle.passed()
        && sampler.as_ref().is_none_or(|s| s.report.passed());
    let doc = VerifyDocument {
        pass,
        dense_oracle,
        slice_oracle,
        sampler,
    };
    g.emit_json(&serde_json::to_string_pretty(&doc).expect("report serializes"))?;
    Ok(pass)
}

fn cmd_lemma(g: &Global, a0: f64, diag: &str) -> Outcome {
    let diag = parse_list("diag", diag)?;
    let a = DiagPlusConstant::new(a0, diag)?;
    let inv = a.inverse();
    let m = a.dim();
    let doc = LemmaDocument {
        a0,
        diag: a.diag(),
        positive_definite: cgauss::structured::is_positive_definite(a0, a.diag()),
        determinant: Determinants {
            closed_form: a.determinant(),
            recursive: a.determinant_recursive()?,
            log_closed_form: a.log_determinant(),
            log_recursive: a.log_determinant_recursive()?,
        },
        inverse: (0..m).map(|i| (0..m).map(|j| inv.entry(i, j)).collect()).collect(),
    };
    g.emit_json(&serde_json::to_string_pretty(&doc).expect("document serializes"))?;
    Ok(true)
}

fn cmd_demo_credit(
    g: &Global,
    loadings: &str,
    thresholds: &str,
    observed: usize,
    boundary: Option<f64>,
    samples: usize,
) -> Outcome {
    let loadings = parse_list("loadings", loadings)?;
    let thresholds = parse_list("thresholds", thresholds)?;
    let observed = observed
        .checked_sub(1)
        .ok_or_else(|| Failure::Usage("--observed is 1-based".into()))?;
    let mut config = CreditDemoConfig::at_threshold(loadings, thresholds, observed)?;
    if let Some(b) = boundary {
        config.boundary = b;
        config.validate()?;
    }
    let seed = g.seed();
    let report = run_credit_demo(&config, samples, seed)?;
    g.emit_json(&report.to_json())?;
    Ok(report.monte_carlo.pass)
}

fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    match cli.command {
        Command::Law => cmd_law(g),
        Command::Sample {
            samples,
            method,
            space,
        } => cmd_sample(g, samples, method, space.into()),
        Command::Verify {
            proposals,
            epsilon,
            method,
            samples,
            timing,
        } => cmd_verify(g, proposals, epsilon, method, samples, timing),
        Command::Lemma { a0, diag } => cmd_lemma(g, a0, &diag),
        Command::DemoCredit {
            loadings,
            thresholds,
            observed,
            boundary,
            samples,
        } => cmd_demo_credit(g, &loadings, &thresholds, observed, boundary, samples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(EXIT_STATISTICAL)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
