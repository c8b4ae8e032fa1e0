//! `dsi`: detect log-periodic structure in size distributions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsi_core::detect::SurrogateMode;
use dsi_core::pipeline::{self, PipelineConfig, Report, Section, SynthConfig};
use dsi_core::{selftest, Error};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dsi",
    version,
    about = "Discrete scale invariance in heavy-tailed size distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis on a sizes table and write the report bundle.
    Analyze(AnalyzeArgs),
    /// Sample sizes from the log-periodic growth law and write the ground truth.
    Synth(SynthArgs),
    /// Run the acceptance checks and print one line per criterion.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Resample,
    Shuffle,
}

/// Flags override values from `--config`, which override the defaults.
#[derive(Args)]
struct AnalyzeArgs {
    /// JSON file with any subset of the flag values (snake_case keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV with columns entity_id,size_usd.
    #[arg(long)]
    sizes: Option<PathBuf>,
    /// CSV with columns entity_id,asset_id,weight,market_cap_usd.
    #[arg(long)]
    holdings: Option<PathBuf>,
    /// CSV with columns entity_id,date,return.
    #[arg(long)]
    returns: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    surrogates: Option<usize>,
    #[arg(long, value_enum)]
    surrogate_mode: Option<Mode>,
    #[arg(long)]
    omega_max: Option<f64>,
    #[arg(long)]
    omega_bins: Option<usize>,
    /// Comma-separated CV bandwidth candidates in ln S.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Option<Vec<f64>>,
    #[arg(long)]
    layer_ratio: Option<f64>,
    #[arg(long)]
    layer_tolerance: Option<f64>,
    #[arg(long)]
    periods_per_year: Option<u32>,
    #[arg(long)]
    rank_threshold: Option<usize>,
    #[arg(long)]
    residual_route: Option<bool>,
    #[arg(long)]
    hq_scan: Option<bool>,
    /// Print report.json to stdout instead of the summary.
    #[arg(long)]
    json: bool,
}

impl AnalyzeArgs {
    fn resolve(self) -> Result<PipelineConfig, Error> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        if self.sizes.is_some() {
            c.sizes = self.sizes;
        }
        if self.holdings.is_some() {
            c.holdings = self.holdings;
        }
        if self.returns.is_some() {
            c.returns = self.returns;
        }
        if let Some(v) = self.out {
            c.out = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.surrogates {
            c.surrogates = v;
        }
        if let Some(v) = self.surrogate_mode {
            c.surrogate_mode = match v {
                Mode::Resample => SurrogateMode::Resample,
                Mode::Shuffle => SurrogateMode::Shuffle,
            };
        }
        if let Some(v) = self.omega_max {
            c.omega_max = v;
        }
        if let Some(v) = self.omega_bins {
            c.omega_bins = v;
        }
        if let Some(v) = self.bandwidths {
            c.bandwidths = v;
        }
        if let Some(v) = self.layer_ratio {
            c.layer_ratio = v;
        }
        if let Some(v) = self.layer_tolerance {
            c.layer_tolerance = v;
        }
        if let Some(v) = self.periods_per_year {
            c.periods_per_year = v;
        }
        if let Some(v) = self.rank_threshold {
            c.rank_threshold = v;
        }
        if let Some(v) = self.residual_route {
            c.residual_route = v;
        }
        if let Some(v) = self.hq_scan {
            c.hq_scan = v;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Nonextensivity n > 1.
    #[arg(long)]
    n: Option<f64>,
    /// Temperature scale T0 in USD.
    #[arg(long = "t0")]
    t0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kappa: Option<u32>,
    #[arg(long)]
    w0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    w1: Option<f64>,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    s_max: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SynthArgs {
    fn resolve(self) -> Result<SynthConfig, Error> {
        let mut c = match &self.config {
            Some(path) => SynthConfig::from_json_file(path)?,
            None => SynthConfig::default(),
        };
        c.n = self.n.unwrap_or(c.n);
        c.t0 = self.t0.unwrap_or(c.t0);
        c.gamma = self.gamma.unwrap_or(c.gamma);
        c.kappa = self.kappa.unwrap_or(c.kappa);
        c.w0 = self.w0.unwrap_or(c.w0);
        c.w1 = self.w1.unwrap_or(c.w1);
        c.s_min = self.s_min.unwrap_or(c.s_min);
        c.s_max = self.s_max.unwrap_or(c.s_max);
        c.count = self.count.unwrap_or(c.count);
        c.seed = self.seed.unwrap_or(c.seed);
        if let Some(v) = self.out {
            c.out = v;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct SelftestArgs {
    /// JSON file of the form {"only": [1, 2]}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated criterion ids to run; all by default.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<u32>>,
}

impl SelftestArgs {
    fn ids(&self) -> Result<Vec<u32>, Error> {
        if let Some(ids) = &self.only {
            return Ok(ids.clone());
        }
        let all = || selftest::CHECKS.iter().map(|(id, _)| *id).collect();
        let Some(path) = &self.config else {
            return Ok(all());
        };
        let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        match value.get("only") {
            None => Ok(all()),
            Some(list) => list
                .as_array()
                .and_then(|a| {
                    a.iter()
                        .map(|v| v.as_u64().and_then(|x| u32::try_from(x).ok()))
                        .collect()
                })
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{}: `only` must be a list of criterion ids",
                        path.display()
                    ))
                }),
        }
    }
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERIC
    })
}

fn print_summary(report: &Report, out: &std::path::Path) {
    let s = &report.sample;
    println!(
        "sample: {} sizes, {:.3e} to {:.3e}",
        s.count, s.min_size, s.max_size
    );
    if let Section::Ok(fit) = &report.lognormal {
        println!(
            "lognormal: mu {:.3}, sigma {:.3}, implied mean {:.3e}",
            fit.mu, fit.sigma, fit.implied_mean
        );
    }
    for (name, section) in [("residual", &report.residual), ("density", &report.density)] {
        match section {
            Section::Ok(r) => match &r.fundamental {
                Some(p) => println!(
                    "{name} route: omega {:.3}, p-value {:.3}, scaling ratio {:.2} ({} significant)",
                    p.omega,
                    p.p_value,
                    p.scaling_ratio,
                    r.significant.len()
                ),
                None => println!("{name} route: no peak above the low-omega cutoff"),
            },
            Section::Skipped { reason } => println!("{name} route: skipped ({reason})"),
        }
    }
    let ratios: Vec<String> = report
        .layers
        .ratios
        .iter()
        .map(|r| format!("{r:.2}"))
        .collect();
    println!(
        "layers: {} (boundary ratios [{}])",
        report.layers.layers.len(),
        ratios.join(", ")
    );
    for (name, skipped) in [
        ("similarity", report.similarity.ok().is_none()),
        ("ubiquity", report.ubiquity.ok().is_none()),
        ("performance", report.performance.ok().is_none()),
    ] {
        if skipped {
            println!("{name}: skipped");
        }
    }
    println!("wrote {} files to {}", report.outputs.len(), out.display());
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Analyze(args) => {
            let json = args.json;
            let config = match args.resolve() {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            match pipeline::analyze(&config) {
                Ok(report) => {
                    if json {
                        match serde_json::to_string_pretty(&report) {
                            Ok(text) => println!("{text}"),
                            Err(e) => return exit_for(&e.into()),
                        }
                    } else {
                        print_summary(&report, &config.out);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Synth(args) => {
            let config = match args.resolve() {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            match pipeline::synth(&config) {
                Ok(truth) => {
                    println!(
                        "wrote {} sizes to {}; predicted omega {:.3}, log-periodic: {}",
                        truth.count,
                        config.out.display(),
                        truth.predicted_omega,
                        truth.log_periodic
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Selftest(args) => {
            let outcomes = match args.ids().and_then(|ids| selftest::run(&ids)) {
                Ok(o) => o,
                Err(e) => return exit_for(&e),
            };
            for o in &outcomes {
                println!("{}", o.line());
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!(
                "selftest: {} passed, {failed} failed",
                outcomes.len() - failed
            );
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFTEST)
            }
        }
    }
}
