//! The two detection routes for log-periodicity in a size sample.
//!
//! * Residual route: lognormal fit, CCDF residuals, Lomb periodogram.
//! * Density route: KDE with cross-validated bandwidth, (H,q)-derivatives
//!   normalised by a smooth envelope, averaged Lomb periodogram.
//!
//! Both routes score peaks against the global maxima of surrogate
//! periodograms. By default surrogates are fresh samples from a smooth null
//! law fitted to the data; shuffling the series is available as an option.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::SizeSample;
use crate::density::{
    geometric_candidates, hq_scan, kde_ln, kde_truncated, padded_grid, select_bandwidth_cv_ln,
    DensityEstimate, DerivativeSeries, Q_VALUES,
};
use crate::distfit::{
    empirical_ccdf, fit_lognormal, residuals, CcdfPoint, LognormalFit, ResidualSeries,
};
use crate::rng;
use crate::spectral::{
    default_omega_grid, lomb, low_omega_cutoff, peaks_against_null, shuffle_null_maxima, LombPlan,
    PeakOptions, PeakReport, Periodogram,
};
use crate::stats::{
    detrend_polynomial, interp_sorted, quantile_sorted, solve_small, sorted_copy, UniformGrid,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateMode {
    /// Fresh samples from a smooth null law fitted to the data.
    #[default]
    Resample,
    /// Permutations of the analysed series over fixed abscissae.
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralSettings {
    pub omega_max: f64,
    pub omega_bins: usize,
    pub surrogates: usize,
    pub surrogate_mode: SurrogateMode,
    pub seed: u64,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        Self {
            omega_max: crate::spectral::DEFAULT_OMEGA_MAX,
            omega_bins: crate::spectral::DEFAULT_OMEGA_BINS,
            surrogates: crate::spectral::DEFAULT_SURROGATES,
            surrogate_mode: SurrogateMode::Resample,
            seed: 0,
        }
    }
}

impl SpectralSettings {
    fn validate(&self) -> Result<()> {
        if self.surrogates < 100 {
            return Err(Error::invalid(format!(
                "need >= 100 surrogates, got {}",
                self.surrogates
            )));
        }
        if !(self.omega_max > 0.0) || self.omega_bins < 2 {
            return Err(Error::invalid(
                "omega grid needs omega_max > 0 and >= 2 bins",
            ));
        }
        Ok(())
    }
}

fn max_above(omegas: &[f64], powers: &[f64], cutoff: f64) -> f64 {
    omegas
        .iter()
        .zip(powers)
        .filter(|(&w, _)| w > cutoff)
        .map(|(_, &p)| p)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRoute {
    pub fit: LognormalFit,
    pub ccdf: Vec<CcdfPoint>,
    pub residuals: ResidualSeries,
    pub periodogram: Periodogram,
    pub report: PeakReport,
}

/// Lognormal fit, CCDF residuals and their Lomb periodogram with peak p-values.
pub fn residual_route(sample: &SizeSample, settings: &SpectralSettings) -> Result<ResidualRoute> {
    settings.validate()?;
    let fit = fit_lognormal(sample).map_err(|e| e.in_stage("lognormal fit"))?;
    let ccdf = empirical_ccdf(sample)?;
    let res = residuals(sample, &fit).map_err(|e| e.in_stage("residuals"))?;
    let (t, y) = (res.t(), res.y());
    let cutoff = low_omega_cutoff(&t).map_err(|e| e.in_stage("residual periodogram"))?;
    let omegas = default_omega_grid(cutoff, settings.omega_max, settings.omega_bins)?;
    let pg = lomb(&t, &y, &omegas).map_err(|e| e.in_stage("residual periodogram"))?;
    let null = match settings.surrogate_mode {
        SurrogateMode::Resample => {
            residual_bootstrap_maxima(&fit, sample.len(), &omegas, cutoff, settings)?
        }
        SurrogateMode::Shuffle => {
            let plan = LombPlan::new(&t, &omegas)?;
            shuffle_null_maxima(&plan, &y, settings.surrogates, settings.seed)?
        }
    };
    let report = peaks_against_null(&pg, &null, PeakOptions::default())?;
    Ok(ResidualRoute {
        fit,
        ccdf,
        residuals: res,
        periodogram: pg,
        report,
    })
}

/// Parametric bootstrap: samples from the fitted lognormal, refitted and analysed alike.
fn residual_bootstrap_maxima(
    fit: &LognormalFit,
    n: usize,
    omegas: &[f64],
    cutoff: f64,
    settings: &SpectralSettings,
) -> Result<Vec<f64>> {
    let law = Normal::new(fit.mu, fit.sigma).map_err(|e| Error::Numeric(e.to_string()))?;
    (0..settings.surrogates)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(settings.seed, s as u64);
            let sizes: Vec<f64> = (0..n).map(|_| law.sample(&mut rng).exp()).collect();
            let boot = SizeSample::from_sizes(&sizes)?;
            let f = fit_lognormal(&boot)?;
            let r = residuals(&boot, &f)?;
            let pg = lomb(&r.t(), &r.y(), omegas)?;
            Ok(max_above(omegas, &pg.powers, cutoff))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensitySettings {
    pub bandwidth_candidates: Vec<f64>,
    pub grid_size: usize,
    /// Analysis bandwidth as a fraction of the cross-validated one.
    pub analysis_bandwidth_factor: f64,
    /// Width in ln S of the smooth envelope and of the surrogate jitter.
    pub trend_bandwidth: f64,
    pub window_quantiles: (f64, f64),
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self {
            bandwidth_candidates: geometric_candidates(0.05, 1.0, 12),
            grid_size: 1024,
            analysis_bandwidth_factor: 0.5,
            trend_bandwidth: 1.0,
            window_quantiles: (0.01, 0.99),
        }
    }
}

impl DensitySettings {
    fn validate(&self) -> Result<()> {
        if self.grid_size < 64 {
            return Err(Error::invalid(format!(
                "grid_size must be >= 64, got {}",
                self.grid_size
            )));
        }
        if !(self.analysis_bandwidth_factor > 0.0) || !(self.trend_bandwidth > 0.0) {
            return Err(Error::invalid(
                "bandwidth factor and trend bandwidth must be positive",
            ));
        }
        let (a, b) = self.window_quantiles;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::invalid(
                "window quantiles must satisfy 0 <= lo < hi <= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityRoute {
    pub cv_bandwidth: f64,
    /// KDE at the cross-validated bandwidth.
    pub estimate: DensityEstimate,
    pub hq: HqRoute,
}

/// Spectral stage of the density route.
#[derive(Debug, Clone, Serialize)]
pub struct HqRoute {
    pub analysis_bandwidth: f64,
    /// The 36 raw (H,q)-derivatives of the analysis KDE.
    pub scan: Vec<DerivativeSeries>,
    /// ln S range of the analysed window.
    pub window: (f64, f64),
    /// Mean of the normalised periodograms over the (H,q) grid.
    pub periodogram: Periodogram,
    pub report: PeakReport,
}

/// Fixed geometry of the density-route spectrum, shared by data and surrogates.
#[derive(Debug, Clone)]
pub struct DensitySpectrum {
    bandwidth: f64,
    trend_bandwidth: f64,
    grid: UniformGrid,
    window: std::ops::Range<usize>,
    plan: LombPlan,
}

impl DensitySpectrum {
    /// Geometry for the observed log sizes at the given analysis bandwidth.
    pub fn new(
        ln_sizes: &[f64],
        bandwidth: f64,
        settings: &DensitySettings,
        spectral: &SpectralSettings,
    ) -> Result<Self> {
        settings.validate()?;
        let grid = padded_grid(ln_sizes, bandwidth, settings.grid_size);
        let sorted = sorted_copy(ln_sizes);
        let q_min = Q_VALUES.iter().cloned().fold(f64::INFINITY, f64::min);
        // f(qx) must stay on the grid for every q
        let lo = quantile_sorted(&sorted, settings.window_quantiles.0).max(grid.start - q_min.ln());
        let hi = quantile_sorted(&sorted, settings.window_quantiles.1);
        let points = grid.points();
        let start = points.partition_point(|&g| g < lo);
        let end = points.partition_point(|&g| g <= hi);
        if end < start + 16 {
            return Err(Error::InsufficientData(
                "analysis window holds fewer than 16 grid points".into(),
            ));
        }
        let t = &points[start..end];
        let cutoff = low_omega_cutoff(t)?;
        let omegas = default_omega_grid(cutoff, spectral.omega_max, spectral.omega_bins)?;
        Ok(Self {
            bandwidth,
            trend_bandwidth: settings.trend_bandwidth,
            grid,
            window: start..end,
            plan: LombPlan::new(t, &omegas)?,
        })
    }

    pub fn window_bounds(&self) -> (f64, f64) {
        (
            self.grid.at(self.window.start),
            self.grid.at(self.window.end - 1),
        )
    }

    pub fn window_t(&self) -> Vec<f64> {
        self.window.clone().map(|i| self.grid.at(i)).collect()
    }

    pub fn omegas(&self) -> &[f64] {
        self.plan.omegas()
    }

    pub fn low_omega_cutoff(&self) -> f64 {
        self.plan.low_omega_cutoff()
    }

    /// Envelope-normalised differences over the window, one series per q.
    ///
    /// Each series is (D^H_q f - D^H_q e) / sqrt(e) scaled by ((1-q)x)^H, where
    /// e is the log-quadratic envelope of f. The H factor cancels, so one
    /// series serves all six H values.
    pub fn normalised_series(&self, ln_sizes: &[f64]) -> Result<Vec<Vec<f64>>> {
        let f = kde_truncated(ln_sizes, self.bandwidth, self.grid);
        let envelope = log_quadratic_envelope(self.grid, &f, self.trend_bandwidth);
        self.series_against(&f, &envelope)
    }

    fn series_against(&self, f: &[f64], envelope: &[f64]) -> Result<Vec<Vec<f64>>> {
        let points = self.grid.points();
        let t = self.window_t();
        Q_VALUES
            .iter()
            .map(|&q| {
                let lq = q.ln();
                let mut y: Vec<f64> = self
                    .window
                    .clone()
                    .map(|i| {
                        let fq = interp_sorted(&points, f, points[i] + lq).unwrap_or(0.0);
                        let eq = interp_sorted(&points, envelope, points[i] + lq).unwrap_or(0.0);
                        let e = envelope[i];
                        if e > 0.0 {
                            ((f[i] - fq) - (e - eq)) / e.sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                detrend_polynomial(&t, &mut y, 2)?;
                Ok(y)
            })
            .collect()
    }

    /// Mean normalised Lomb power over the (H,q) grid.
    pub fn mean_powers(&self, series: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.plan.omegas().len()];
        for y in series {
            for (a, p) in acc.iter_mut().zip(self.plan.powers(y)?) {
                *a += p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= series.len() as f64);
        Ok(acc)
    }

    pub fn periodogram(&self, ln_sizes: &[f64]) -> Result<Periodogram> {
        Ok(Periodogram {
            omegas: self.plan.omegas().to_vec(),
            powers: self.mean_powers(&self.normalised_series(ln_sizes)?)?,
            low_omega_cutoff: self.plan.low_omega_cutoff(),
        })
    }

    fn max_power(&self, powers: &[f64]) -> f64 {
        max_above(self.plan.omegas(), powers, self.plan.low_omega_cutoff())
    }

    /// Maxima of surrogate spectra. Surrogates are drawn from the envelope of
    /// the observed KDE, restricted to the observed range of ln S.
    pub fn resample_maxima(
        &self,
        ln_sizes: &[f64],
        surrogates: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let n = ln_sizes.len();
        let f = kde_truncated(ln_sizes, self.bandwidth, self.grid);
        let envelope = log_quadratic_envelope(self.grid, &f, self.trend_bandwidth);
        let (lo, hi) = ln_sizes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let sampler = TabulatedSampler::new(self.grid, &envelope, lo, hi)?;
        (0..surrogates)
            .into_par_iter()
            .map(|s| {
                let mut rng = rng::stream(seed, s as u64);
                let draw: Vec<f64> = (0..n)
                    .map(|_| sampler.quantile(rng.random::<f64>()))
                    .collect();
                Ok(self.max_power(&self.mean_powers(&self.normalised_series(&draw)?)?))
            })
            .collect()
    }

    /// Maxima of spectra of the observed series permuted jointly over the window.
    pub fn shuffle_maxima(
        &self,
        series: &[Vec<f64>],
        surrogates: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let m = self.window.len();
        (0..surrogates)
            .into_par_iter()
            .map(|s| {
                let mut rng = rng::stream(seed, s as u64);
                let mut perm: Vec<usize> = (0..m).collect();
                perm.shuffle(&mut rng);
                let shuffled: Vec<Vec<f64>> = series
                    .iter()
                    .map(|y| perm.iter().map(|&i| y[i]).collect())
                    .collect();
                Ok(self.max_power(&self.mean_powers(&shuffled)?))
            })
            .collect()
    }
}

/// Local quadratic regression of ln f with Gaussian weights of width `b`,
/// each grid value weighted by f (the inverse variance of ln f).
///
/// Exponential and Gaussian trends in ln S are reproduced exactly, while an
/// oscillation of frequency ω is passed with gain (1 + ω²b²/2)e^(-ω²b²/2).
pub fn log_quadratic_envelope(grid: UniformGrid, f: &[f64], b: f64) -> Vec<f64> {
    let points = grid.points();
    let peak = f.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 || points.len() < 2 {
        return vec![0.0; f.len()];
    }
    // the fit is smooth on the scale b, so nodes b/20 apart carry it
    let stride = ((b / 20.0 / grid.step).floor() as usize).max(1);
    let support: Vec<(f64, f64, f64)> = (0..f.len())
        .step_by(stride)
        .filter(|&j| f[j] > peak * 1e-12)
        .map(|j| (points[j], f[j].ln(), f[j]))
        .collect();
    let mut nodes: Vec<usize> = (0..f.len()).step_by(stride).collect();
    if *nodes.last().unwrap() != f.len() - 1 {
        nodes.push(f.len() - 1);
    }
    let reach = 4.0 * b;
    let fitted: Vec<Option<f64>> = nodes
        .par_iter()
        .map(|&i| {
            let u = points[i];
            let lo = support.partition_point(|s| s.0 < u - reach);
            let hi = support.partition_point(|s| s.0 <= u + reach);
            let mut m = [[0.0; 3]; 3];
            let mut r = [0.0; 3];
            for &(x, ly, w) in &support[lo..hi] {
                let d = (x - u) / b;
                let k = w * (-0.5 * d * d).exp();
                let basis = [1.0, d, d * d];
                for a in 0..3 {
                    r[a] += k * basis[a] * ly;
                    for c in 0..3 {
                        m[a][c] += k * basis[a] * basis[c];
                    }
                }
            }
            solve_small(&mut m, &mut r, 3)
                .map(|c| c[0])
                .filter(|c| c.is_finite())
        })
        .collect();
    let mut out = vec![0.0; f.len()];
    for (w, pair) in nodes.windows(2).zip(fitted.windows(2)) {
        let (i0, i1) = (w[0], w[1]);
        for (i, o) in out.iter_mut().enumerate().take(i1 + 1).skip(i0) {
            *o = match (pair[0], pair[1]) {
                (Some(a), Some(c)) => (a + (c - a) * (i - i0) as f64 / (i1 - i0) as f64).exp(),
                _ => 0.0,
            };
        }
    }
    out
}

/// Inverse-CDF sampler for a density tabulated on a uniform grid and
/// truncated to [lo, hi].
struct TabulatedSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedSampler {
    fn new(grid: UniformGrid, density: &[f64], lo: f64, hi: f64) -> Result<Self> {
        let mut xs = vec![lo];
        xs.extend(grid.points().into_iter().filter(|&x| x > lo && x < hi));
        xs.push(hi);
        let points = grid.points();
        let pdf: Vec<f64> = xs
            .iter()
            .map(|&x| interp_sorted(&points, density, x).unwrap_or(0.0))
            .collect();
        let mut cdf = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (pdf[i] + pdf[i - 1]) * (xs[i] - xs[i - 1]);
        }
        let total = *cdf.last().unwrap();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(
                "envelope has no mass over the data range".into(),
            ));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { xs, cdf })
    }

    fn quantile(&self, u: f64) -> f64 {
        let i = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.xs[i - 1] + w * (self.xs[i] - self.xs[i - 1])
    }
}

/// Cross-validated bandwidth and the KDE at it.
pub fn density_estimate(
    ln_sizes: &[f64],
    settings: &DensitySettings,
) -> Result<(f64, DensityEstimate)> {
    settings.validate()?;
    let cv = select_bandwidth_cv_ln(ln_sizes, &settings.bandwidth_candidates)
        .map_err(|e| e.in_stage("bandwidth selection"))?;
    let estimate = kde_ln(ln_sizes, cv, settings.grid_size).map_err(|e| e.in_stage("kde"))?;
    Ok((cv, estimate))
}

/// (H,q)-scan at a fraction of the CV bandwidth, averaged Lomb and peak p-values.
pub fn hq_route(
    ln_sizes: &[f64],
    cv_bandwidth: f64,
    settings: &DensitySettings,
    spectral: &SpectralSettings,
) -> Result<HqRoute> {
    spectral.validate()?;
    settings.validate()?;
    let h = cv_bandwidth * settings.analysis_bandwidth_factor;
    let analysis = kde_ln(ln_sizes, h, settings.grid_size).map_err(|e| e.in_stage("kde"))?;
    let scan = hq_scan(&analysis);
    let stage = |e: Error| e.in_stage("hq periodogram");
    let spec = DensitySpectrum::new(ln_sizes, h, settings, spectral).map_err(stage)?;
    let series = spec.normalised_series(ln_sizes).map_err(stage)?;
    let pg = Periodogram {
        omegas: spec.omegas().to_vec(),
        powers: spec.mean_powers(&series).map_err(stage)?,
        low_omega_cutoff: spec.low_omega_cutoff(),
    };
    let null = match spectral.surrogate_mode {
        SurrogateMode::Resample => {
            spec.resample_maxima(ln_sizes, spectral.surrogates, spectral.seed)
        }
        SurrogateMode::Shuffle => spec.shuffle_maxima(&series, spectral.surrogates, spectral.seed),
    }
    .map_err(|e| e.in_stage("surrogates"))?;
    let report = peaks_against_null(&pg, &null, PeakOptions::default())?;
    Ok(HqRoute {
        analysis_bandwidth: h,
        scan,
        window: spec.window_bounds(),
        periodogram: pg,
        report,
    })
}

/// KDE, cross-validated bandwidth, (H,q)-scan, averaged Lomb and peak p-values.
pub fn density_route(
    sample: &SizeSample,
    settings: &DensitySettings,
    spectral: &SpectralSettings,
) -> Result<DensityRoute> {
    let ln = sample.ln_sizes();
    let (cv_bandwidth, estimate) = density_estimate(&ln, settings)?;
    let hq = hq_route(&ln, cv_bandwidth, settings, spectral)?;
    Ok(DensityRoute {
        cv_bandwidth,
        estimate,
        hq,
    })
}
