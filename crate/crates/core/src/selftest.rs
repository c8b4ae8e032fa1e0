//! Desk-scale acceptance checks with pass/fail and wall-clock budgets.
//!
//! Each check returns an [`Outcome`]; a check passes only when its numerical
//! condition holds and it finished inside its budget.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{self, HoldingsTable, Position, ReturnObs, ReturnsTable, SizeSample};
use crate::density::DensityEstimate;
use crate::detect::{self, DensitySettings, SpectralSettings};
use crate::distfit::{fit_lognormal, LognormalFit};
use crate::genmodel::{
    complex_exponents, evolve_distribution, predict_omega, GrowthModelParams, LogGridDensity,
    LogPeriodicLaw, TsallisLaw,
};
use crate::layers::{self, LayerPartition};
use crate::pipeline::{self, PipelineConfig};
use crate::portfolio::{self, Portfolio};
use crate::rng::{derive_seed, stream};
use crate::spectral::{self, default_omega_grid, low_omega_cutoff, Periodogram};
use crate::stats::{
    detrend_polynomial, hill_estimator, kolmogorov_distance, normal_pdf, UniformGrid,
};
use crate::Result;

/// Signature of a Lomb periodogram, so the Lomb check can run against a substitute.
pub type LombFn = fn(&[f64], &[f64], &[f64]) -> Result<Periodogram>;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {:<28} {:>7.2}s/{:>3}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

fn timed(
    id: u32,
    name: &'static str,
    budget_secs: u64,
    check: impl FnOnce() -> Result<(bool, String)>,
) -> Outcome {
    let start = Instant::now();
    let result = check();
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_secs);
    let (ok, mut detail) = match result {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if elapsed > budget {
        detail.push_str(" (over budget)");
    }
    Outcome {
        id,
        name,
        passed: ok && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

/// Every check with its criterion id, in order.
pub const CHECKS: [(u32, fn() -> Outcome); 11] = [
    (1, lognormal_recovery),
    (2, lomb_correctness),
    (3, dsi_recovery),
    (4, null_specificity),
    (5, analytic_identities),
    (6, tsallis_fidelity),
    (7, evolution_consistency),
    (8, layer_partitioning),
    (9, similarity_oracle),
    (10, power_law_recovery),
    (11, determinism),
];

pub fn run_all() -> Vec<Outcome> {
    CHECKS.iter().map(|(_, check)| check()).collect()
}

/// Runs the listed criteria in id order; unknown ids are an error.
pub fn run(ids: &[u32]) -> Result<Vec<Outcome>> {
    if let Some(bad) = ids.iter().find(|id| !CHECKS.iter().any(|(k, _)| k == *id)) {
        return Err(crate::Error::InvalidInput(format!(
            "no criterion {bad}; ids run from 1 to {}",
            CHECKS.len()
        )));
    }
    Ok(CHECKS
        .iter()
        .filter(|(k, _)| ids.contains(k))
        .map(|(_, check)| check())
        .collect())
}

fn lognormal_sizes(mu: f64, sigma: f64, count: usize, seed: u64) -> Result<SizeSample> {
    let mut rng = stream(seed, 0);
    let law = Normal::new(mu, sigma).expect("positive sigma");
    let sizes: Vec<f64> = (0..count).map(|_| law.sample(&mut rng).exp()).collect();
    SizeSample::from_sizes(&sizes)
}

pub fn lognormal_recovery() -> Outcome {
    timed(1, "lognormal MLE recovery", 1, || {
        let fit = fit_lognormal(&lognormal_sizes(18.7, 2.24, 479, 1)?)?;
        // the quoted mean belongs to the quoted parameters; the fitted mean is reported only
        let quoted = LognormalFit::from_params(18.7, 2.24, &[])?.implied_mean;
        let ok = (fit.mu - 18.7).abs() <= 0.31
            && (fit.sigma - 2.24).abs() <= 0.22
            && (quoted / 1.6e9 - 1.0).abs() <= 0.1;
        Ok((
            ok,
            format!(
                "mu {:.3} sigma {:.3}; mean at (18.7, 2.24) {:.3e}, fitted {:.3e}",
                fit.mu, fit.sigma, quoted, fit.implied_mean
            ),
        ))
    })
}

pub fn lomb_correctness() -> Outcome {
    lomb_correctness_with(spectral::lomb)
}

/// Peak position of a noiseless cosine, its normalised height (N-1)/2 and
/// the scaling ratio of ω = 2.5.
pub fn lomb_correctness_with(lomb: LombFn) -> Outcome {
    timed(2, "Lomb correctness", 1, || {
        let n = 479;
        let mut rng = stream(2, 0);
        let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 13.8).collect();
        t.sort_by(f64::total_cmp);
        t[0] = 0.0;
        t[n - 1] = 13.8;
        let y: Vec<f64> = t.iter().map(|v| (2.5 * v).cos()).collect();
        let omegas = default_omega_grid(low_omega_cutoff(&t)?, 20.0, 512)?;
        let pg = lomb(&t, &y, &omegas)?;
        let i = pg.argmax();
        let height = pg.powers[i] / ((n - 1) as f64 / 2.0);
        let ratio = spectral::scaling_ratio(2.5)?;
        let ok = (pg.omegas[i] - 2.5).abs() <= pg.bin_width()
            && (height - 1.0).abs() <= 0.05
            && (ratio - 12.3).abs() <= 0.1;
        Ok((
            ok,
            format!(
                "peak {:.4} (bin {:.4}), height/((N-1)/2) {height:.4}, ratio {ratio:.3}",
                pg.omegas[i],
                pg.bin_width()
            ),
        ))
    })
}

/// Surrogates per route in the Monte-Carlo checks; p < 0.01 needs >= 100.
const MC_SURROGATES: usize = 100;

pub fn dsi_recovery() -> Outcome {
    timed(3, "end-to-end DSI recovery", 60, || {
        let law = LogPeriodicLaw {
            m: 2.0,
            omega: 4.6,
            w0: 1.0,
            w1: 0.3,
        }
        .truncated(1e6, 1e11)?;
        let mut hits = 0;
        let mut omegas = Vec::new();
        for seed in 0..20u64 {
            let sample = law.sample(5000, seed)?;
            let spectral = SpectralSettings {
                surrogates: MC_SURROGATES,
                seed: derive_seed(seed, 3),
                ..SpectralSettings::default()
            };
            let r = detect::density_route(&sample, &DensitySettings::default(), &spectral)?;
            if let Some(f) = r.hq.report.fundamental() {
                omegas.push(f.omega);
                if (f.omega - 4.6).abs() <= 0.6 && f.p_value < 0.01 {
                    hits += 1;
                }
            }
        }
        let (lo, hi) = omegas
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| {
                (a.min(w), b.max(w))
            });
        Ok((
            hits >= 18,
            format!("{hits}/20 seeds; fundamentals in [{lo:.2}, {hi:.2}]"),
        ))
    })
}

pub fn null_specificity() -> Outcome {
    timed(4, "null specificity", 60, || {
        let mut quiet = 0;
        for seed in 0..20u64 {
            let sample = lognormal_sizes(18.7, 2.24, 479, 1000 + seed)?;
            let spectral = |k| SpectralSettings {
                surrogates: MC_SURROGATES,
                seed: derive_seed(seed, k),
                ..SpectralSettings::default()
            };
            let residual = detect::residual_route(&sample, &spectral(1))?;
            let density =
                detect::density_route(&sample, &DensitySettings::default(), &spectral(2))?;
            let fired =
                residual.report.any_significant(0.01) || density.hq.report.any_significant(0.01);
            quiet += usize::from(!fired);
        }
        Ok((
            quiet >= 19,
            format!("{quiet}/20 runs without a peak at p < 0.01 in either route"),
        ))
    })
}

pub fn analytic_identities() -> Outcome {
    timed(5, "analytic identities", 1, || {
        let mut worst = 0.0f64;
        for i in 1..=10 {
            for kappa in [1u32, 2, 5, 10, 20, 50, 100, 200, 500, 1000] {
                let gamma = 0.002 * f64::from(i);
                let w = predict_omega(gamma, kappa)?;
                worst = worst.max((w * f64::from(kappa) * gamma.ln_1p() - 2.0 * PI).abs());
            }
        }
        let mut re_ok = true;
        let mut order_ok = true;
        for n in [1.5, 2.0, 3.0, 6.0, 8.0] {
            re_ok &= (complex_exponents(1e-8, n, 0)?[0].re - n).abs() <= 1e-5;
            let gap = |g: f64| -> Result<f64> {
                Ok(complex_exponents(g, n, 0)?[0].re - (n + 0.5 * n * (n + 1.0) * g))
            };
            // an O(γ²) remainder shrinks fourfold when γ halves
            let ratio = gap(0.01)? / gap(0.005)?;
            order_ok &= (ratio - 4.0).abs() <= 0.4;
        }
        Ok((
            worst <= 1e-12 && re_ok && order_ok,
            format!(
                "max |ω κ ln(1+γ) - 2π| {worst:.1e}; Re α0 {re_ok}; O(γ²) remainder {order_ok}"
            ),
        ))
    })
}

pub fn tsallis_fidelity() -> Outcome {
    timed(6, "Tsallis sampler fidelity", 5, || {
        let law = TsallisLaw::new(3.0, 1.0)?;
        let s = law.sample(100_000, 6)?.sizes();
        let ks = kolmogorov_distance(&s, |x| law.cdf(x));
        let alpha = hill_estimator(&s, 1000)?;
        Ok((
            ks <= 0.01 && (alpha / 2.0 - 1.0).abs() <= 0.1,
            format!("KS {ks:.4}; Hill exponent {alpha:.3} (n - 1 = 2)"),
        ))
    })
}

pub fn evolution_consistency() -> Outcome {
    timed(7, "evolution consistency", 30, || {
        let one = GrowthModelParams::new(2.0, 1.0, 0.014, 1, 1.0, 0.0)?;
        let init = LogGridDensity::tabulate(1.0, 1e6, 20_000, |s| s.powf(-one.n))?;
        let e = evolve_distribution(&one, &init, 1)?.density;
        let mut worst = 0.0f64;
        for s in [150.0, 1e3, 2.5e4, 3e5] {
            let pair = (e.at_ln((s * (1.0 + one.gamma)).ln()), e.at_ln(f64::ln(s)));
            let (Some(a), Some(b)) = pair else {
                return Ok((false, format!("S = {s} off the evolved grid")));
            };
            worst = worst.max((a / b / (1.0 - one.gamma * one.n) - 1.0).abs());
        }

        let many = GrowthModelParams::new(2.0, 1.0, 0.014, 100, 1.0, 0.0)?;
        let ts = TsallisLaw::new(many.n, many.t0)?;
        let init = LogGridDensity::tabulate(100.0, 1e8, 2048, |s| ts.pdf(s))?;
        let e = evolve_distribution(&many, &init, 20)?.density;
        let t = e.ln_grid.clone();
        let mut y: Vec<f64> = e.density.iter().map(|d| d.ln()).collect();
        detrend_polynomial(&t, &mut y, 1)?;
        let pg = spectral::lomb(
            &t,
            &y,
            &default_omega_grid(low_omega_cutoff(&t)?, 20.0, 512)?,
        )?;
        let w = pg.omegas[pg.argmax()];
        let target = predict_omega(0.014, 100)?;
        Ok((
            worst <= 0.01 && (w / target - 1.0).abs() <= 0.1,
            format!("one-step scaling error {worst:.2e}; κ = 100 peak {w:.3} vs {target:.3}"),
        ))
    })
}

/// Upper bounds of the published seven-layer table, in USD.
pub const TABLE_ONE_BOUNDARIES: [f64; 6] = [9e6, 38e6, 150e6, 430e6, 1500e6, 5000e6];

pub fn layer_partitioning() -> Outcome {
    timed(8, "layer partitioning", 5, || {
        let (c0, sd) = (18.0, 0.3);
        let step = 3.5f64.ln();
        let centres = [c0, c0 + step, c0 + 2.0 * step];
        let f = |u: f64| {
            centres
                .iter()
                .map(|c| normal_pdf((u - c) / sd) / sd)
                .sum::<f64>()
                / 3.0
        };
        let grid = UniformGrid::spanning(c0 - 2.0, c0 + 2.0 * step + 2.0, 1024);
        let g = grid.points();
        let d = g.iter().map(|&u| f(u)).collect();
        let p =
            layers::partition_from_density(&DensityEstimate::from_values(g, d, sd)?, 3.5, 0.35)?;
        let mut bins_ok = p.layer_count() == 3;
        for (k, b) in p.boundaries.iter().enumerate().take(2) {
            let (a, z) = (centres[k], centres[k + 1]);
            let m = (0..=1_000_000)
                .map(|i| a + (z - a) * f64::from(i) / 1e6)
                .min_by(|x, y| f(*x).total_cmp(&f(*y)))
                .unwrap_or(a);
            bins_ok &= (b.ln() - m).abs() <= grid.step;
        }

        let table = LayerPartition::from_boundaries(TABLE_ONE_BOUNDARIES.to_vec())?;
        let stats = layers::layer_stats(&table, None);
        // the published ratios carry one decimal and are truncated in one case (1500/430 = 3.49)
        let ratios_ok = stats
            .ratios
            .iter()
            .zip([4.2, 3.9, 2.9, 3.4, 3.3])
            .all(|(r, want)| (r - want).abs() <= 0.1);
        let mean = stats.mean_ratio.unwrap_or(f64::NAN);
        let ok = bins_ok && ratios_ok && (mean - 3.6).abs() <= 0.05;
        let shown: Vec<String> = stats.ratios.iter().map(|r| format!("{r:.2}")).collect();
        Ok((
            ok,
            format!(
                "{} layers, minima within a bin: {bins_ok}; table ratios [{}], mean {mean:.3}",
                p.layer_count(),
                shown.join(", ")
            ),
        ))
    })
}

/// Mean similarity over unordered pairs, with plain nested loops.
fn brute_force_similarity(
    partition: &LayerPartition,
    holdings: &HoldingsTable,
) -> Vec<Vec<Option<f64>>> {
    let book = portfolios_of(holdings);
    let usable: Vec<Vec<&Portfolio>> = partition
        .members()
        .iter()
        .map(|ids| {
            ids.iter()
                .filter_map(|id| book.get(*id))
                .filter(|p| portfolio::similarity(p, p).is_ok())
                .collect()
        })
        .collect();
    let l = usable.len();
    let mut out = vec![vec![None; l]; l];
    for i in 0..l {
        for j in i..l {
            let mut sum = 0.0;
            let mut count = 0usize;
            for x in 0..usable[i].len() {
                for y in 0..usable[j].len() {
                    if i == j && y <= x {
                        continue;
                    }
                    sum += portfolio::similarity(usable[i][x], usable[j][y]).unwrap_or(f64::NAN);
                    count += 1;
                }
            }
            let v = (count > 0).then(|| sum / count as f64);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

fn portfolios_of(holdings: &HoldingsTable) -> BTreeMap<String, Portfolio> {
    let mut out: BTreeMap<String, Portfolio> = BTreeMap::new();
    for p in holdings.positions() {
        out.entry(p.entity_id.clone())
            .or_default()
            .insert(p.asset_id.clone(), p.weight);
    }
    out
}

fn random_universe(seed: u64) -> Result<(LayerPartition, HoldingsTable)> {
    let mut rng = stream(seed, 0);
    let entities = rng.random_range(2..=20usize);
    let assets = rng.random_range(1..=30usize);
    let layer_count = rng.random_range(1..=4usize);
    let sizes: Vec<f64> = (0..entities)
        .map(|_| 10f64.powf(rng.random_range(6.0..10.0)))
        .collect();
    let mut boundaries: Vec<f64> = (1..layer_count)
        .map(|k| 10f64.powf(6.0 + 4.0 * k as f64 / layer_count as f64))
        .collect();
    boundaries.dedup();
    let sample = SizeSample::from_sizes(&sizes)?;
    let partition = layers::assign(&sample, &boundaries)?;
    let mut positions = Vec::new();
    for e in sample.entries() {
        for a in 0..assets {
            if rng.random::<f64>() < 0.4 {
                let weight = if rng.random::<f64>() < 0.1 {
                    0.0
                } else {
                    rng.random_range(0.01..1.0)
                };
                positions.push(Position {
                    entity_id: e.entity_id.clone(),
                    asset_id: format!("a{a:02}"),
                    weight,
                    market_cap: None,
                });
            }
        }
    }
    Ok((partition, HoldingsTable::new(positions)?))
}

pub fn similarity_oracle() -> Outcome {
    timed(9, "similarity oracle", 10, || {
        let mut mismatches = 0;
        let mut bad_shape = 0;
        for u in 0..200u64 {
            let (partition, holdings) = random_universe(derive_seed(9, u))?;
            let m = portfolio::layer_similarity_matrix(&partition, &holdings);
            if m.entries != brute_force_similarity(&partition, &holdings) {
                mismatches += 1;
            }
            let l = m.size();
            let symmetric = (0..l).all(|i| (0..l).all(|j| m.entries[i][j] == m.entries[j][i]));
            let bounded = m
                .entries
                .iter()
                .flatten()
                .flatten()
                .all(|v| (0.0..=1.0).contains(v));
            bad_shape += usize::from(!(symmetric && bounded));
        }
        Ok((
            mismatches == 0 && bad_shape == 0,
            format!(
                "200 universes: {mismatches} mismatches, {bad_shape} asymmetric or out of [0,1]"
            ),
        ))
    })
}

/// Root of the power-law score n/α + n ln xmin - Σ ln x by bisection; the
/// score is strictly decreasing in α.
fn brute_force_power_law(values: &[f64]) -> f64 {
    let xmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = values.len() as f64;
    let s: f64 = values.iter().map(|v| v.ln()).sum();
    let score = |a: f64| n / a + n * xmin.ln() - s;
    let (mut lo, mut hi) = (1e-6, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn power_law_recovery() -> Outcome {
    timed(10, "power-law fit recovery", 5, || {
        let alpha = 1.7;
        let mut rng = stream(10, 0);
        let caps: Vec<f64> = (0..10_000)
            .map(|_| 1e6 * (1.0 - rng.random::<f64>()).powf(-1.0 / alpha))
            .collect();
        let fit = portfolio::fit_power_law(&caps)?;
        let recovered = (fit.alpha - alpha).abs() <= 3.0 * fit.stderr;

        // 500 widely held assets with huge caps, then 10,000 single-holder assets
        let threshold = 500;
        let mut positions = Vec::new();
        for i in 0..threshold {
            for e in 0..3 {
                positions.push(Position {
                    entity_id: format!("e{e}"),
                    asset_id: format!("top{i:04}"),
                    weight: 1.0,
                    market_cap: Some(1e15),
                });
            }
        }
        for (i, &c) in caps.iter().enumerate() {
            positions.push(Position {
                entity_id: format!("e{}", 3 + i % 50),
                asset_id: format!("tail{i:05}"),
                weight: 1.0,
                market_cap: Some(c),
            });
        }
        let holdings = HoldingsTable::new(positions)?;
        let ranked = portfolio::ubiquity_cap_fit(&holdings, threshold)?;
        let oracle = brute_force_power_law(&caps);
        let gap = (ranked.alpha - oracle).abs();
        Ok((
            recovered && ranked.n == caps.len() && gap <= 1e-10,
            format!(
                "alpha {:.4} ± {:.4}; ranked fit vs score root {gap:.1e}",
                fit.alpha, fit.stderr
            ),
        ))
    })
}

/// Sizes, holdings and returns tables written under `dir`.
fn fixture(dir: &Path) -> Result<PipelineConfig> {
    let law = LogPeriodicLaw {
        m: 2.0,
        omega: 4.6,
        w0: 1.0,
        w1: 0.3,
    }
    .truncated(1e6, 1e11)?;
    let sample = law.sample(600, 11)?;
    let mut rng = stream(11, 1);
    let mut positions = Vec::new();
    let mut series = BTreeMap::new();
    for e in sample.entries() {
        let k = rng.random_range(3..=12usize);
        for _ in 0..k {
            let a = rng.random_range(0..300usize);
            let id = format!("a{a:03}");
            if positions
                .iter()
                .any(|p: &Position| p.entity_id == e.entity_id && p.asset_id == id)
            {
                continue;
            }
            positions.push(Position {
                entity_id: e.entity_id.clone(),
                asset_id: id,
                weight: rng.random_range(0.01..1.0),
                market_cap: Some(1e8 * (1.0 + a as f64)),
            });
        }
        let obs = (0..60)
            .map(|d| ReturnObs {
                date: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
                    + chrono::Days::new(d),
                simple_return: rng.random_range(-0.02..0.021),
            })
            .collect();
        series.insert(e.entity_id.clone(), obs);
    }
    std::fs::create_dir_all(dir)?;
    let sizes = dir.join("sizes.csv");
    let holdings = dir.join("holdings.csv");
    let returns = dir.join("returns.csv");
    dataio::write_sizes(&sizes, &sample)?;
    dataio::write_holdings(&holdings, &HoldingsTable::new(positions)?)?;
    dataio::write_returns(&returns, &ReturnsTable::new(series)?)?;
    Ok(PipelineConfig {
        sizes: Some(sizes),
        holdings: Some(holdings),
        returns: Some(returns),
        out: dir.join("out"),
        seed: 11,
        surrogates: MC_SURROGATES,
        ..PipelineConfig::default()
    })
}

fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        files.insert(path.clone(), std::fs::read(&path)?);
    }
    Ok(files)
}

pub fn determinism() -> Outcome {
    timed(11, "determinism", 60, || {
        let dir = std::env::temp_dir().join(format!("dsi-selftest-{}", std::process::id()));
        let result = (|| {
            let config = fixture(&dir)?;
            pipeline::analyze(&config)?;
            let first = snapshot(&config.out)?;
            pipeline::analyze(&config)?;
            let second = snapshot(&config.out)?;
            let differing: Vec<String> = first
                .iter()
                .filter(|(p, bytes)| second.get(*p) != Some(*bytes))
                .map(|(p, _)| {
                    p.file_name()
                        .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
                })
                .collect();
            let same = differing.is_empty() && first.len() == second.len();
            Ok((
                same,
                if same {
                    format!("{} files byte-identical", first.len())
                } else {
                    format!("differing: {}", differing.join(", "))
                },
            ))
        })();
        let _ = std::fs::remove_dir_all(&dir);
        result
    })
}
