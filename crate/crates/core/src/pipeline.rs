//! End-to-end runs: `analyze` writes the report bundle for a size sample,
//! `synth` writes a synthetic sample with its ground truth.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{self, HoldingsTable, ReturnsTable, SizeSample};
use crate::detect::{self, DensitySettings, SpectralSettings, SurrogateMode};
use crate::distfit::LognormalFit;
use crate::genmodel::{self, GrowthModelParams};
use crate::layers::{self, LayerStats, DEFAULT_TARGET_RATIO, DEFAULT_TOLERANCE};
use crate::portfolio::{
    self, Distribution, PowerLawFit, UbiquityRow, DEFAULT_PERIODS_PER_YEAR, DEFAULT_RANK_THRESHOLD,
};
use crate::rng::derive_seed;
use crate::spectral::{
    self, HarmonicGroup, Peak, PeakReport, DEFAULT_OMEGA_BINS, DEFAULT_OMEGA_MAX,
    DEFAULT_SURROGATES,
};
use crate::stats::{quantile_sorted, sorted_copy};
use crate::{Error, Result};

/// Significance level used for the summary lists in `report.json`.
pub const REPORT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sizes: Option<PathBuf>,
    pub holdings: Option<PathBuf>,
    pub returns: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub surrogates: usize,
    pub surrogate_mode: SurrogateMode,
    pub omega_max: f64,
    pub omega_bins: usize,
    /// CV bandwidth candidates in ln S.
    pub bandwidths: Vec<f64>,
    pub layer_ratio: f64,
    pub layer_tolerance: f64,
    pub periods_per_year: u32,
    pub rank_threshold: usize,
    /// Run the lognormal-residual route.
    pub residual_route: bool,
    /// Run the (H,q)-scan of the density route.
    pub hq_scan: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sizes: None,
            holdings: None,
            returns: None,
            out: PathBuf::from("out"),
            seed: 0,
            surrogates: DEFAULT_SURROGATES,
            surrogate_mode: SurrogateMode::Resample,
            omega_max: DEFAULT_OMEGA_MAX,
            omega_bins: DEFAULT_OMEGA_BINS,
            bandwidths: DensitySettings::default().bandwidth_candidates,
            layer_ratio: DEFAULT_TARGET_RATIO,
            layer_tolerance: DEFAULT_TOLERANCE,
            periods_per_year: DEFAULT_PERIODS_PER_YEAR,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
            residual_route: true,
            hq_scan: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.surrogates < 100 {
            return Err(Error::invalid(format!(
                "surrogates must be >= 100, got {}",
                self.surrogates
            )));
        }
        if !(self.omega_max > 0.0 && self.omega_max.is_finite()) || self.omega_bins < 2 {
            return Err(Error::invalid(
                "omega grid needs a finite omega_max > 0 and omega_bins >= 2",
            ));
        }
        if self.bandwidths.len() < 2 || self.bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite()))
        {
            return Err(Error::invalid(
                "bandwidths needs at least two positive candidates",
            ));
        }
        if !(self.layer_ratio > 1.0 && self.layer_ratio.is_finite()) {
            return Err(Error::invalid(format!(
                "layer_ratio must exceed 1, got {}",
                self.layer_ratio
            )));
        }
        if !(self.layer_tolerance > 0.0 && self.layer_tolerance < self.layer_ratio - 1.0) {
            return Err(Error::invalid(
                "layer_tolerance must lie in (0, layer_ratio - 1)",
            ));
        }
        if self.periods_per_year == 0 {
            return Err(Error::invalid("periods_per_year must be positive"));
        }
        if self.rank_threshold == 0 {
            return Err(Error::invalid("rank_threshold must be positive"));
        }
        Ok(())
    }

    fn spectral(&self, stream: u64) -> SpectralSettings {
        SpectralSettings {
            omega_max: self.omega_max,
            omega_bins: self.omega_bins,
            surrogates: self.surrogates,
            surrogate_mode: self.surrogate_mode,
            seed: derive_seed(self.seed, stream),
        }
    }

    fn density(&self) -> DensitySettings {
        DensitySettings {
            bandwidth_candidates: self.bandwidths.clone(),
            ..DensitySettings::default()
        }
    }
}

/// A report section that either ran or was skipped with a reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Section<T> {
    Ok(T),
    Skipped { reason: String },
}

impl<T> Section<T> {
    fn skipped(reason: impl Into<String>) -> Self {
        Section::Skipped {
            reason: reason.into(),
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Section::Ok(v) => Some(v),
            Section::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub count: usize,
    pub min_size: f64,
    pub median_size: f64,
    pub max_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteSummary {
    pub fundamental: Option<Peak>,
    /// Peaks with p-value below `REPORT_ALPHA`, strongest first.
    pub significant: Vec<Peak>,
    pub harmonic_groups: Vec<HarmonicGroup>,
    pub scaling_ratios: Vec<f64>,
    pub low_omega_cutoff: f64,
    pub surrogates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis_bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

impl RouteSummary {
    fn of(report: &PeakReport) -> Self {
        Self {
            fundamental: report.fundamental().cloned(),
            significant: report
                .peaks
                .iter()
                .filter(|p| p.p_value < REPORT_ALPHA)
                .cloned()
                .collect(),
            harmonic_groups: report.harmonic_groups.clone(),
            scaling_ratios: report.scaling_ratios.clone(),
            low_omega_cutoff: report.low_omega_cutoff,
            surrogates: report.surrogates,
            analysis_bandwidth: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimaryPeak {
    pub route: &'static str,
    pub omega: f64,
    pub p_value: f64,
    pub scaling_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilaritySummary {
    /// Mean layer-pair similarity in percent; `None` where no pair exists.
    pub layer_matrix_percent: Vec<Vec<Option<f64>>>,
    /// Mean similarity of each layer to the market portfolio.
    pub market: Section<MarketSummary>,
    pub excluded_entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketSummary {
    pub per_layer: Vec<Option<f64>>,
    pub missing_caps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UbiquitySummary {
    pub assets: usize,
    pub top: Vec<UbiquityRow>,
    pub power_law: Section<PowerLawFit>,
    pub empty_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceBrief {
    pub periods_per_year: u32,
    pub layers: Vec<Distribution>,
    pub universe: Distribution,
    pub without_returns: usize,
    pub zero_variance: usize,
    pub short_history: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: PipelineConfig,
    pub sample: SampleSummary,
    pub lognormal: Section<LognormalFit>,
    pub residual: Section<RouteSummary>,
    pub cv_bandwidth: f64,
    pub density: Section<RouteSummary>,
    /// The fundamental with the smaller p-value; ties go to the density route.
    pub primary: Option<PrimaryPeak>,
    pub layers: LayerStats,
    pub similarity: Section<SimilaritySummary>,
    pub ubiquity: Section<UbiquitySummary>,
    pub performance: Section<PerformanceBrief>,
    /// Files written under `out`, in write order.
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct PeaksFile<'a> {
    residual: Option<&'a PeakReport>,
    density: Option<&'a PeakReport>,
}

#[derive(Debug, Serialize)]
struct LayersFile<'a> {
    boundaries: &'a [f64],
    ratios: &'a [f64],
    modes: &'a [Option<f64>],
    #[serde(flatten)]
    stats: &'a LayerStats,
}

/// Collects output paths so the report can list them.
struct Bundle {
    dir: PathBuf,
    written: Vec<String>,
}

impl Bundle {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn summarize(sample: &SizeSample) -> SampleSummary {
    let s = sorted_copy(&sample.sizes());
    SampleSummary {
        count: s.len(),
        min_size: s[0],
        median_size: quantile_sorted(&s, 0.5),
        max_size: s[s.len() - 1],
    }
}

/// Runs every stage the inputs allow and writes the bundle under `config.out`.
pub fn analyze(config: &PipelineConfig) -> Result<Report> {
    config.validate()?;
    let sizes_path = config
        .sizes
        .as_ref()
        .ok_or_else(|| Error::invalid("a sizes table is required"))?;
    let sample = dataio::load_sizes(sizes_path).map_err(|e| e.in_stage("load sizes"))?;
    let holdings = config
        .holdings
        .as_ref()
        .map(dataio::load_holdings)
        .transpose()
        .map_err(|e| e.in_stage("load holdings"))?;
    let returns = config
        .returns
        .as_ref()
        .map(dataio::load_returns)
        .transpose()
        .map_err(|e| e.in_stage("load returns"))?;
    run(config, &sample, holdings.as_ref(), returns.as_ref())
}

/// `analyze` on tables already in memory.
pub fn run(
    config: &PipelineConfig,
    sample: &SizeSample,
    holdings: Option<&HoldingsTable>,
    returns: Option<&ReturnsTable>,
) -> Result<Report> {
    config.validate()?;
    if sample.is_empty() {
        return Err(Error::InsufficientData("the sizes table is empty".into()));
    }
    std::fs::create_dir_all(&config.out)?;
    let mut out = Bundle {
        dir: config.out.clone(),
        written: Vec::new(),
    };

    let residual = if config.residual_route {
        let r = detect::residual_route(sample, &config.spectral(1))?;
        dataio::write_numeric_csv(
            out.path("ccdf.csv"),
            &["size", "ccdf"],
            r.ccdf.iter().map(|p| [p.size, p.ccdf]),
        )?;
        dataio::write_numeric_csv(
            out.path("residuals.csv"),
            &["ln_size", "delta_f"],
            r.residuals.points.iter().map(|p| [p.ln_size, p.delta_f]),
        )?;
        dataio::write_numeric_csv(
            out.path("periodogram.csv"),
            &["omega", "power"],
            r.periodogram
                .omegas
                .iter()
                .zip(&r.periodogram.powers)
                .map(|(&w, &p)| [w, p]),
        )?;
        Some(r)
    } else {
        None
    };

    let ln = sample.ln_sizes();
    let settings = config.density();
    let (cv_bandwidth, estimate) = detect::density_estimate(&ln, &settings)?;
    dataio::write_numeric_csv(
        out.path("kde.csv"),
        &["ln_size", "density"],
        estimate
            .grid
            .iter()
            .zip(&estimate.density)
            .map(|(&g, &f)| [g, f]),
    )?;
    let hq = if config.hq_scan {
        let r = detect::hq_route(&ln, cv_bandwidth, &settings, &config.spectral(2))?;
        dataio::write_numeric_csv(
            out.path("hq_derivative.csv"),
            &["ln_size", "value", "H", "q"],
            r.scan.iter().flat_map(|s| {
                s.grid
                    .iter()
                    .zip(&s.values)
                    .map(move |(&g, &v)| [g, v, s.h, s.q])
            }),
        )?;
        dataio::write_numeric_csv(
            out.path("hq_periodogram.csv"),
            &["omega", "power"],
            r.periodogram
                .omegas
                .iter()
                .zip(&r.periodogram.powers)
                .map(|(&w, &p)| [w, p]),
        )?;
        Some(r)
    } else {
        None
    };
    dataio::write_json(
        out.path("peaks.json"),
        &PeaksFile {
            residual: residual.as_ref().map(|r| &r.report),
            density: hq.as_ref().map(|r| &r.report),
        },
    )?;

    let partition =
        layers::partition_from_density(&estimate, config.layer_ratio, config.layer_tolerance)
            .map_err(|e| e.in_stage("layer partition"))?;
    let partition = layers::assign_into(&partition, sample);
    let stats = layers::layer_stats(&partition, holdings);
    dataio::write_json(
        out.path("layers.json"),
        &LayersFile {
            boundaries: &partition.boundaries,
            ratios: &partition.ratios,
            modes: &partition.modes,
            stats: &stats,
        },
    )?;
    let rows: Vec<Vec<String>> = partition
        .assignments
        .iter()
        .map(|(id, l)| vec![id.clone(), l.to_string()])
        .collect();
    dataio::write_text_csv(
        out.path("assignments.csv"),
        &["entity_id".into(), "layer".into()],
        &rows,
    )?;

    let (similarity, ubiquity) = match holdings {
        Some(h) => {
            let (s, u) = holdings_sections(&mut out, &partition, h, config.rank_threshold)?;
            (Section::Ok(s), Section::Ok(u))
        }
        None => (
            Section::skipped("no holdings table"),
            Section::skipped("no holdings table"),
        ),
    };
    let performance = match returns {
        Some(r) => {
            let p = portfolio::layer_performance(&partition, r, config.periods_per_year)
                .map_err(|e| e.in_stage("performance"))?;
            dataio::write_json(out.path("performance.json"), &p)?;
            Section::Ok(PerformanceBrief {
                periods_per_year: p.periods_per_year,
                layers: p.layers,
                universe: p.universe,
                without_returns: p.without_returns,
                zero_variance: p.zero_variance,
                short_history: p.short_history,
            })
        }
        None => Section::skipped("no returns table"),
    };

    let residual_summary = residual.as_ref().map(|r| RouteSummary::of(&r.report));
    let density_summary = hq.as_ref().map(|r| RouteSummary {
        analysis_bandwidth: Some(r.analysis_bandwidth),
        window: Some(r.window),
        ..RouteSummary::of(&r.report)
    });
    let primary = primary_peak(residual_summary.as_ref(), density_summary.as_ref());
    out.written.push("report.json".into());
    let report = Report {
        config: config.clone(),
        sample: summarize(sample),
        lognormal: residual.as_ref().map_or_else(
            || Section::skipped("residual route disabled"),
            |r| Section::Ok(r.fit),
        ),
        residual: residual_summary
            .map_or_else(|| Section::skipped("residual route disabled"), Section::Ok),
        cv_bandwidth,
        density: density_summary.map_or_else(|| Section::skipped("hq scan disabled"), Section::Ok),
        primary,
        layers: stats,
        similarity,
        ubiquity,
        performance,
        outputs: out.written.clone(),
    };
    dataio::write_json(config.out.join("report.json"), &report)?;
    Ok(report)
}

fn primary_peak(
    residual: Option<&RouteSummary>,
    density: Option<&RouteSummary>,
) -> Option<PrimaryPeak> {
    let candidates = [("density", density), ("residual", residual)];
    candidates
        .iter()
        .filter_map(|(route, s)| s.and_then(|s| s.fundamental.as_ref()).map(|p| (*route, p)))
        .fold(
            None,
            |best: Option<(&'static str, &Peak)>, (route, p)| match best {
                Some((_, b)) if b.p_value <= p.p_value => best,
                _ => Some((route, p)),
            },
        )
        .map(|(route, p)| PrimaryPeak {
            route,
            omega: p.omega,
            p_value: p.p_value,
            scaling_ratio: p.scaling_ratio,
        })
}

fn holdings_sections(
    out: &mut Bundle,
    partition: &layers::LayerPartition,
    holdings: &HoldingsTable,
    rank_threshold: usize,
) -> Result<(SimilaritySummary, UbiquitySummary)> {
    let sim = portfolio::layer_similarity_matrix(partition, holdings);
    let percent: Vec<Vec<Option<f64>>> = sim
        .entries
        .iter()
        .map(|row| row.iter().map(|v| v.map(|x| 100.0 * x)).collect())
        .collect();
    let l = percent.len();
    let mut header = vec!["layer".to_string()];
    header.extend((1..=l).map(|i| i.to_string()));
    let rows: Vec<Vec<String>> = percent
        .iter()
        .enumerate()
        .map(|(i, row)| {
            std::iter::once((i + 1).to_string())
                .chain(row.iter().map(|&v| na(v)))
                .collect()
        })
        .collect();
    dataio::write_text_csv(out.path("similarity_matrix.csv"), &header, &rows)?;

    let market = match portfolio::market_portfolio(holdings) {
        Ok(m) => Section::Ok(MarketSummary {
            per_layer: portfolio::market_similarity(partition, holdings, &m),
            missing_caps: m.missing_caps,
        }),
        Err(e) if !e.is_input_error() => Section::skipped(e.to_string()),
        Err(e) => return Err(e.in_stage("market portfolio")),
    };

    let adj = portfolio::adjacency(partition, holdings);
    let mut header = vec!["layer".to_string()];
    header.extend(adj.holding_order.iter().cloned());
    let bin: Vec<Vec<String>> = adj
        .m_bin
        .iter()
        .enumerate()
        .map(|(i, row)| {
            std::iter::once((i + 1).to_string())
                .chain(row.iter().map(u8::to_string))
                .collect()
        })
        .collect();
    dataio::write_text_csv(out.path("adjacency_bin.csv"), &header, &bin)?;
    let frac: Vec<Vec<String>> = adj
        .m_frac
        .iter()
        .enumerate()
        .map(|(i, row)| {
            std::iter::once((i + 1).to_string())
                .chain(row.iter().map(f64::to_string))
                .collect()
        })
        .collect();
    dataio::write_text_csv(out.path("adjacency_frac.csv"), &header, &frac)?;

    let ranking = portfolio::ubiquity_ranking(holdings);
    let rows: Vec<Vec<String>> = ranking
        .iter()
        .map(|r| {
            vec![
                r.asset_id.clone(),
                r.rank.to_string(),
                r.ubiquity.to_string(),
                na(r.market_cap),
            ]
        })
        .collect();
    let header: Vec<String> = ["asset_id", "rank", "ubiquity_count", "market_cap"]
        .map(String::from)
        .to_vec();
    dataio::write_text_csv(out.path("ubiquity.csv"), &header, &rows)?;
    let power_law = match portfolio::ubiquity_cap_fit(holdings, rank_threshold) {
        Ok(fit) => Section::Ok(fit),
        Err(e) if !e.is_input_error() => Section::skipped(e.to_string()),
        Err(e) => return Err(e.in_stage("power-law fit")),
    };

    Ok((
        SimilaritySummary {
            layer_matrix_percent: percent,
            market,
            excluded_entities: sim.excluded_entities.len(),
        },
        UbiquitySummary {
            assets: ranking.len(),
            top: ranking.into_iter().take(10).collect(),
            power_law,
            empty_layers: adj.empty_layers,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub gamma: f64,
    pub kappa: u32,
    pub w0: f64,
    pub w1: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2.0,
            t0: 1e6,
            gamma: 0.014,
            kappa: 100,
            w0: 1.0,
            w1: 0.3,
            s_min: 1e6,
            s_max: 1e11,
            count: 5000,
            seed: 0,
            out: PathBuf::from("synth"),
        }
    }
}

impl SynthConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn params(&self) -> Result<GrowthModelParams> {
        GrowthModelParams::new(self.n, self.t0, self.gamma, self.kappa, self.w0, self.w1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub n: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub gamma: f64,
    pub kappa: u32,
    pub w0: f64,
    pub w1: f64,
    /// Power-law exponent of the sampled density.
    pub exponent: f64,
    pub predicted_omega: f64,
    pub scaling_ratio: f64,
    /// False when w1 = 0, i.e. a pure power law.
    pub log_periodic: bool,
    pub s_min: f64,
    pub s_max: f64,
    pub count: usize,
    pub seed: u64,
}

/// Writes `sizes.csv` and `ground_truth.json` under `config.out`.
pub fn synth(config: &SynthConfig) -> Result<GroundTruth> {
    let params = config.params()?;
    if config.count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    let predicted_omega = genmodel::predict_omega(config.gamma, config.kappa)?;
    let sample = genmodel::sample_logperiodic(
        &params,
        config.s_min,
        config.s_max,
        config.count,
        config.seed,
    )?;
    std::fs::create_dir_all(&config.out)?;
    dataio::write_sizes(config.out.join("sizes.csv"), &sample)?;
    let truth = GroundTruth {
        n: params.n,
        t0: params.t0,
        gamma: params.gamma,
        kappa: params.kappa,
        w0: params.w0,
        w1: params.w1,
        exponent: params.exponent(),
        predicted_omega,
        scaling_ratio: spectral::scaling_ratio(predicted_omega)?,
        log_periodic: params.w1 != 0.0,
        s_min: config.s_min,
        s_max: config.s_max,
        count: config.count,
        seed: config.seed,
    };
    dataio::write_json(config.out.join("ground_truth.json"), &truth)?;
    Ok(truth)
}
