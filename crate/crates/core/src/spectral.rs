//! Lomb periodogram over the angular log-frequency ω, peak extraction with
//! harmonic grouping, surrogate significance and scaling-ratio conversion.
//!
//! The abscissa `t` is always ln S, so ω is dimensionless and a peak at ω
//! corresponds to a preferred scaling ratio p = exp(2π/ω).

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::distfit::ResidualSeries;
use crate::rng;
use crate::stats::{local_maxima, mean, solve_small, variance_sample, wrap_phase};
use crate::{Error, Result};

pub const DEFAULT_OMEGA_MAX: f64 = 20.0;
pub const DEFAULT_OMEGA_BINS: usize = 512;
pub const DEFAULT_SURROGATES: usize = 1000;
pub const HARMONIC_TOLERANCE: f64 = 0.15;
/// Peaks below the cutoff have a wavelength spanning the whole analysed range.
pub const LOW_OMEGA_REASON: &str = "wavelength spans entire range";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Periodogram {
    pub omegas: Vec<f64>,
    pub powers: Vec<f64>,
    pub low_omega_cutoff: f64,
}

impl Periodogram {
    /// Index of the largest power (first on ties).
    pub fn argmax(&self) -> usize {
        self.powers
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bp), (i, &p)| {
                if p > bp {
                    (i, p)
                } else {
                    (bi, bp)
                }
            })
            .0
    }

    /// Largest power strictly above the low-ω cutoff.
    pub fn max_above_cutoff(&self) -> f64 {
        self.omegas
            .iter()
            .zip(&self.powers)
            .filter(|(&w, _)| w > self.low_omega_cutoff)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max)
    }

    /// Typical spacing of the ω grid.
    pub fn bin_width(&self) -> f64 {
        let n = self.omegas.len();
        if n < 2 {
            return 0.0;
        }
        (self.omegas[n - 1] - self.omegas[0]) / (n - 1) as f64
    }
}

/// 2π over the span of `t`.
pub fn low_omega_cutoff(t: &[f64]) -> Result<f64> {
    let (lo, hi) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(hi > lo) {
        return Err(Error::Degenerate("abscissa values all equal".into()));
    }
    Ok(2.0 * PI / (hi - lo))
}

/// Linear grid of `bins` frequencies from `cutoff / 2` to `omega_max`.
pub fn default_omega_grid(cutoff: f64, omega_max: f64, bins: usize) -> Result<Vec<f64>> {
    let lo = 0.5 * cutoff;
    if bins < 2 || !(omega_max > lo) {
        return Err(Error::invalid(format!(
            "omega grid needs >= 2 bins and omega_max > {lo}, got {bins} bins up to {omega_max}"
        )));
    }
    let step = (omega_max - lo) / (bins - 1) as f64;
    Ok((0..bins).map(|i| lo + i as f64 * step).collect())
}

/// p = exp(2π/ω)
pub fn scaling_ratio(omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::invalid(format!(
            "omega must be positive, got {omega}"
        )));
    }
    Ok((2.0 * PI / omega).exp())
}

fn validate_series(t: &[f64], y: &[f64], omegas: &[f64]) -> Result<f64> {
    if t.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} abscissae for {} values",
            t.len(),
            y.len()
        )));
    }
    if t.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "Lomb needs >= 8 points, got {}",
            t.len()
        )));
    }
    if omegas.is_empty() {
        return Err(Error::invalid("empty omega grid"));
    }
    if omegas.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("omega grid must be positive"));
    }
    let var = variance_sample(y);
    if !(var > 0.0) {
        return Err(Error::Degenerate(
            "constant series has zero variance".into(),
        ));
    }
    Ok(var)
}

fn uniform_step(omegas: &[f64]) -> Option<f64> {
    if omegas.len() < 2 {
        return None;
    }
    let step = omegas[1] - omegas[0];
    let tol = 1e-9 * omegas[omegas.len() - 1].abs().max(1.0);
    omegas
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= tol)
        .then_some(step)
}

/// Visits (k, cos ω_k t, sin ω_k t) for every grid frequency.
#[inline]
fn for_each_phase(t: f64, omegas: &[f64], step: Option<f64>, mut f: impl FnMut(usize, f64, f64)) {
    match step {
        Some(dw) => {
            // rotate by exp(i dw t); drift stays O(bins * eps)
            let (mut s, mut c) = (omegas[0] * t).sin_cos();
            let (rs, rc) = (dw * t).sin_cos();
            for k in 0..omegas.len() {
                f(k, c, s);
                let nc = c * rc - s * rs;
                s = s * rc + c * rs;
                c = nc;
            }
        }
        None => {
            for (k, &w) in omegas.iter().enumerate() {
                let (s, c) = (w * t).sin_cos();
                f(k, c, s);
            }
        }
    }
}

/// Classical normalised Lomb periodogram of `(t, y)` at the given ω.
pub fn lomb(t: &[f64], y: &[f64], omegas: &[f64]) -> Result<Periodogram> {
    let var = validate_series(t, y, omegas)?;
    let cutoff = low_omega_cutoff(t)?;
    let ym = mean(y);
    // shift t for better conditioning of the phases; powers are translation invariant
    let t0 = mean(t);
    let m = omegas.len();
    let (mut yc, mut ys) = (vec![0.0; m], vec![0.0; m]);
    let (mut cc, mut ss, mut cs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let step = uniform_step(omegas);
    for (&ti, &yi) in t.iter().zip(y) {
        let yi = yi - ym;
        for_each_phase(ti - t0, omegas, step, |k, c, s| {
            yc[k] += yi * c;
            ys[k] += yi * s;
            cc[k] += c * c;
            ss[k] += s * s;
            cs[k] += c * s;
        });
    }
    let powers = (0..m)
        .map(|k| lomb_power(yc[k], ys[k], cc[k], ss[k], cs[k], var))
        .collect();
    Ok(Periodogram {
        omegas: omegas.to_vec(),
        powers,
        low_omega_cutoff: cutoff,
    })
}

/// Rotates the raw sums to the decoupling offset τ and forms the power.
fn lomb_power(yc: f64, ys: f64, cc: f64, ss: f64, cs: f64, var: f64) -> f64 {
    // tan(2ωτ) = Σ sin 2ωt / Σ cos 2ωt
    let two_wt = (2.0 * cs).atan2(cc - ss);
    let (st, ct) = (0.5 * two_wt).sin_cos();
    let y_cos = yc * ct + ys * st;
    let y_sin = ys * ct - yc * st;
    let cos2 = cc * ct * ct + 2.0 * cs * ct * st + ss * st * st;
    let sin2 = ss * ct * ct - 2.0 * cs * ct * st + cc * st * st;
    let n = cc + ss;
    let tiny = 1e-12 * n;
    let mut p = 0.0;
    if cos2 > tiny {
        p += y_cos * y_cos / cos2;
    }
    if sin2 > tiny {
        p += y_sin * y_sin / sin2;
    }
    (0.5 * p / var).max(0.0)
}

/// Precomputed Lomb basis for many series sharing one abscissa and ω grid.
#[derive(Debug, Clone)]
pub struct LombPlan {
    omegas: Vec<f64>,
    n: usize,
    cutoff: f64,
    /// cos ω(t - τ) and sin ω(t - τ), row-major by ω
    cos_tau: Vec<f64>,
    sin_tau: Vec<f64>,
    cos2: Vec<f64>,
    sin2: Vec<f64>,
}

impl LombPlan {
    pub fn new(t: &[f64], omegas: &[f64]) -> Result<Self> {
        if t.len() < 8 {
            return Err(Error::InsufficientData(format!(
                "Lomb needs >= 8 points, got {}",
                t.len()
            )));
        }
        if omegas.is_empty() || omegas.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("omega grid must be nonempty and positive"));
        }
        let cutoff = low_omega_cutoff(t)?;
        let t0 = mean(t);
        let n = t.len();
        let m = omegas.len();
        let mut cos_tau = vec![0.0; n * m];
        let mut sin_tau = vec![0.0; n * m];
        let mut cos2 = vec![0.0; m];
        let mut sin2 = vec![0.0; m];
        for (k, &w) in omegas.iter().enumerate() {
            let (mut s2, mut c2) = (0.0, 0.0);
            for &ti in t {
                let (s, c) = (2.0 * w * (ti - t0)).sin_cos();
                s2 += s;
                c2 += c;
            }
            let tau = s2.atan2(c2) / (2.0 * w);
            let row = k * n;
            for (j, &ti) in t.iter().enumerate() {
                let (s, c) = (w * (ti - t0 - tau)).sin_cos();
                cos_tau[row + j] = c;
                sin_tau[row + j] = s;
                cos2[k] += c * c;
                sin2[k] += s * s;
            }
        }
        Ok(Self {
            omegas: omegas.to_vec(),
            n,
            cutoff,
            cos_tau,
            sin_tau,
            cos2,
            sin2,
        })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn low_omega_cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Normalised powers of `y`, or an error for a constant series.
    pub fn powers(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::invalid(format!(
                "plan built for {} points, got {}",
                self.n,
                y.len()
            )));
        }
        let var = variance_sample(y);
        if !(var > 0.0) {
            return Err(Error::Degenerate(
                "constant series has zero variance".into(),
            ));
        }
        let ym = mean(y);
        let centred: Vec<f64> = y.iter().map(|v| v - ym).collect();
        let tiny = 1e-12 * self.n as f64;
        Ok((0..self.omegas.len())
            .map(|k| {
                let row = k * self.n..(k + 1) * self.n;
                let a: f64 = centred
                    .iter()
                    .zip(&self.cos_tau[row.clone()])
                    .map(|(y, c)| y * c)
                    .sum();
                let b: f64 = centred
                    .iter()
                    .zip(&self.sin_tau[row])
                    .map(|(y, s)| y * s)
                    .sum();
                let mut p = 0.0;
                if self.cos2[k] > tiny {
                    p += a * a / self.cos2[k];
                }
                if self.sin2[k] > tiny {
                    p += b * b / self.sin2[k];
                }
                0.5 * p / var
            })
            .collect())
    }

    pub fn periodogram(&self, y: &[f64]) -> Result<Periodogram> {
        Ok(Periodogram {
            omegas: self.omegas.clone(),
            powers: self.powers(y)?,
            low_omega_cutoff: self.cutoff,
        })
    }
}

/// Lomb periodogram of a CCDF residual series on the default grid.
pub fn residual_periodogram(
    series: &ResidualSeries,
    omega_max: f64,
    bins: usize,
) -> Result<Periodogram> {
    let t = series.t();
    let grid = default_omega_grid(low_omega_cutoff(&t)?, omega_max, bins)?;
    lomb(&t, &series.y(), &grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub omega: f64,
    pub power: f64,
    pub p_value: f64,
    pub scaling_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedPeak {
    pub omega: f64,
    pub power: f64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicMember {
    pub harmonic: u32,
    pub omega: f64,
    pub power: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicGroup {
    pub fundamental: f64,
    pub members: Vec<HarmonicMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakReport {
    /// Local maxima above the cutoff, strongest first.
    pub peaks: Vec<Peak>,
    pub harmonic_groups: Vec<HarmonicGroup>,
    /// exp(2π/ω) for the fundamental followed by its harmonic members.
    pub scaling_ratios: Vec<f64>,
    pub excluded: Vec<ExcludedPeak>,
    pub low_omega_cutoff: f64,
    pub surrogates: usize,
}

impl PeakReport {
    /// The most powerful peak above the cutoff.
    pub fn fundamental(&self) -> Option<&Peak> {
        self.peaks.first()
    }

    pub fn any_significant(&self, alpha: f64) -> bool {
        self.peaks.iter().any(|p| p.p_value < alpha)
    }
}

/// Options for turning a periodogram and a null distribution into a report.
#[derive(Debug, Clone, Copy)]
pub struct PeakOptions {
    /// Relative tolerance around k·ω₁.
    pub harmonic_tolerance: f64,
    /// Harmonic members must reach this p-value.
    pub member_alpha: f64,
    pub max_harmonic: u32,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            harmonic_tolerance: HARMONIC_TOLERANCE,
            member_alpha: 0.05,
            max_harmonic: 3,
        }
    }
}

/// Peaks of `pg` with p-values against surrogate global maxima `null_maxima`.
pub fn peaks_against_null(
    pg: &Periodogram,
    null_maxima: &[f64],
    opts: PeakOptions,
) -> Result<PeakReport> {
    if null_maxima.is_empty() {
        return Err(Error::invalid("empty null distribution"));
    }
    let s = null_maxima.len() as f64;
    let mut peaks = Vec::new();
    let mut excluded = Vec::new();
    for i in local_maxima(&pg.powers) {
        let (omega, power) = (pg.omegas[i], pg.powers[i]);
        if omega <= pg.low_omega_cutoff {
            excluded.push(ExcludedPeak {
                omega,
                power,
                reason: LOW_OMEGA_REASON,
            });
            continue;
        }
        let exceed = null_maxima.iter().filter(|&&m| m > power).count();
        peaks.push(Peak {
            omega,
            power,
            p_value: exceed as f64 / s,
            scaling_ratio: scaling_ratio(omega)?,
        });
    }
    peaks.sort_by(|a, b| {
        b.power
            .total_cmp(&a.power)
            .then(a.omega.total_cmp(&b.omega))
    });

    let mut harmonic_groups = Vec::new();
    let mut scaling_ratios = Vec::new();
    if let Some(f) = peaks.first().copied() {
        let mut members = Vec::new();
        for k in 2..=opts.max_harmonic {
            let target = k as f64 * f.omega;
            // peaks are sorted by power, so the first hit is the strongest
            if let Some(p) = peaks.iter().find(|p| {
                (p.omega - target).abs() <= opts.harmonic_tolerance * target
                    && p.p_value <= opts.member_alpha
            }) {
                members.push(HarmonicMember {
                    harmonic: k,
                    omega: p.omega,
                    power: p.power,
                    p_value: p.p_value,
                });
            }
        }
        scaling_ratios.push(f.scaling_ratio);
        for m in &members {
            scaling_ratios.push(scaling_ratio(m.omega)?);
        }
        harmonic_groups.push(HarmonicGroup {
            fundamental: f.omega,
            members,
        });
    }
    Ok(PeakReport {
        peaks,
        harmonic_groups,
        scaling_ratios,
        excluded,
        low_omega_cutoff: pg.low_omega_cutoff,
        surrogates: null_maxima.len(),
    })
}

/// Global maxima above the cutoff of periodograms of `y` shuffled over fixed `t`.
pub fn shuffle_null_maxima(
    plan: &LombPlan,
    y: &[f64],
    surrogates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let cutoff = plan.low_omega_cutoff();
    (0..surrogates)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(seed, s as u64);
            let mut ys = y.to_vec();
            ys.shuffle(&mut rng);
            let p = plan.powers(&ys)?;
            Ok(plan
                .omegas()
                .iter()
                .zip(&p)
                .filter(|(&w, _)| w > cutoff)
                .map(|(_, &v)| v)
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Local maxima of the Lomb periodogram of `(t, y)` with permutation p-values.
pub fn detect_peaks(
    pg: &Periodogram,
    t: &[f64],
    y: &[f64],
    surrogates: usize,
    rng_seed: u64,
) -> Result<PeakReport> {
    if surrogates < 100 {
        return Err(Error::invalid(format!(
            "need >= 100 surrogates, got {surrogates}"
        )));
    }
    let plan = LombPlan::new(t, &pg.omegas)?;
    let null = shuffle_null_maxima(&plan, y, surrogates, rng_seed)?;
    peaks_against_null(pg, &null, PeakOptions::default())
}

/// Parameters of A + B cos(ω ln S + φ), with B >= 0 and φ in [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogPeriodicFit {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

/// Least-squares fit of A + B cos(ω t + φ) at fixed ω.
pub fn fit_logperiodic_residual(series: &ResidualSeries, omega: f64) -> Result<LogPeriodicFit> {
    fit_cosine(&series.t(), &series.y(), omega)
}

pub fn fit_cosine(t: &[f64], y: &[f64], omega: f64) -> Result<LogPeriodicFit> {
    if t.len() < 8 || t.len() != y.len() {
        return Err(Error::InsufficientData(format!(
            "cosine fit needs >= 8 points, got {}",
            t.len()
        )));
    }
    let t0 = mean(t);
    if t.iter().all(|&v| v == t[0]) {
        return Err(Error::Degenerate(
            "singular design: all abscissae equal".into(),
        ));
    }
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&ti, &yi) in t.iter().zip(y) {
        let (s, c) = (omega * (ti - t0)).sin_cos();
        let basis = [1.0, c, s];
        for r in 0..3 {
            aty[r] += basis[r] * yi;
            for col in 0..3 {
                ata[r][col] += basis[r] * basis[col];
            }
        }
    }
    let [a, p, q] = solve_small(&mut ata, &mut aty, 3)
        .ok_or_else(|| Error::Degenerate("singular design for cosine fit".into()))?;
    // p cos(ω(t - t0)) + q sin(ω(t - t0)) = B cos(ω t + φ)
    let b = p.hypot(q);
    let phi = if b > 0.0 {
        wrap_phase((-q).atan2(p) - omega * t0)
    } else {
        0.0
    };
    Ok(LogPeriodicFit { a, b, phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distfit::ResidualPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn uneven_t(n: usize, span: f64, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * span).collect();
        t.sort_by(f64::total_cmp);
        t[0] = 0.0;
        t[n - 1] = span;
        t
    }

    fn series(t: &[f64], y: &[f64]) -> ResidualSeries {
        ResidualSeries {
            points: t
                .iter()
                .zip(y)
                .map(|(&ln_size, &delta_f)| ResidualPoint { ln_size, delta_f })
                .collect(),
        }
    }

    #[test]
    fn cosine_peak_found_within_one_bin() {
        let t = uneven_t(479, 13.8, 1);
        let y: Vec<f64> = t.iter().map(|v| (2.5 * v).cos()).collect();
        let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 512).unwrap();
        let pg = lomb(&t, &y, &grid).unwrap();
        let w = pg.omegas[pg.argmax()];
        assert!((w - 2.5).abs() <= pg.bin_width(), "{w}");
        assert!((pg.low_omega_cutoff - 2.0 * PI / 13.8).abs() < 1e-12);
    }

    #[test]
    fn constant_series_and_empty_grid_are_errors() {
        let t = uneven_t(20, 5.0, 2);
        assert!(matches!(
            lomb(&t, &[1.0; 20], &[1.0]),
            Err(Error::Degenerate(_))
        ));
        let y: Vec<f64> = t.iter().map(|v| v.sin()).collect();
        assert!(lomb(&t, &y, &[]).is_err());
    }

    #[test]
    fn scaling_ratio_values() {
        assert!((scaling_ratio(2.5).unwrap() - 12.345).abs() < 0.1);
        // exp(2π/4.6) = 3.919, which reports as 3.9 at two significant figures
        assert!((scaling_ratio(4.6).unwrap() - 3.919).abs() < 0.001);
        assert!((scaling_ratio(2.0 * PI).unwrap() - std::f64::consts::E).abs() < 1e-12);
        assert!(scaling_ratio(0.0).is_err());
        assert!(scaling_ratio(-1.0).is_err());
    }

    #[test]
    fn even_sampling_matches_standard_periodogram() {
        let n = 128;
        let dt = 0.1;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let freqs: Vec<f64> = (1..n / 2)
            .map(|k| 2.0 * PI * k as f64 / (n as f64 * dt))
            .collect();
        let pg = lomb(&t, &y, &freqs).unwrap();
        let ym = mean(&y);
        let var = variance_sample(&y);
        for (k, &w) in freqs.iter().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (&ti, &yi) in t.iter().zip(&y) {
                re += (yi - ym) * (w * ti).cos();
                im += (yi - ym) * (w * ti).sin();
            }
            let standard = (re * re + im * im) / n as f64 / var;
            assert!(
                (pg.powers[k] - standard).abs() < 1e-8,
                "{k}: {} vs {standard}",
                pg.powers[k]
            );
        }
    }

    #[test]
    fn plan_agrees_with_streaming() {
        let t = uneven_t(200, 9.0, 4);
        let y: Vec<f64> = t
            .iter()
            .map(|v| (3.1 * v).sin() + 0.2 * (7.0 * v).cos())
            .collect();
        let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 300).unwrap();
        let a = lomb(&t, &y, &grid).unwrap();
        let b = LombPlan::new(&t, &grid).unwrap().periodogram(&y).unwrap();
        for (x, z) in a.powers.iter().zip(&b.powers) {
            assert!((x - z).abs() < 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn noiseless_signal_is_significant() {
        let t = uneven_t(479, 13.8, 5);
        let y: Vec<f64> = t.iter().map(|v| (2.5 * v).cos()).collect();
        let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 512).unwrap();
        let pg = lomb(&t, &y, &grid).unwrap();
        let rep = detect_peaks(&pg, &t, &y, 200, 1).unwrap();
        let f = rep.fundamental().unwrap();
        assert!((f.omega - 2.5).abs() <= pg.bin_width());
        assert!(f.p_value <= 1.0 / 200.0);
        assert!(rep.peaks.iter().all(|p| p.omega > rep.low_omega_cutoff));
    }

    #[test]
    fn harmonics_are_grouped() {
        let t = uneven_t(479, 13.8, 6);
        let y: Vec<f64> = t
            .iter()
            .map(|v| (2.5 * v).cos() + 0.5 * (5.2 * v + 0.3).cos() + 0.35 * (8.2 * v + 1.0).cos())
            .collect();
        let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 512).unwrap();
        let pg = lomb(&t, &y, &grid).unwrap();
        let rep = detect_peaks(&pg, &t, &y, 100, 2).unwrap();
        assert_eq!(rep.harmonic_groups.len(), 1);
        let g = &rep.harmonic_groups[0];
        assert!((g.fundamental - 2.5).abs() < 0.1);
        let ks: Vec<u32> = g.members.iter().map(|m| m.harmonic).collect();
        assert_eq!(ks, vec![2, 3]);
        assert!((g.members[0].omega - 5.2).abs() < 0.1);
        assert!((g.members[1].omega - 8.2).abs() < 0.1);
        assert_eq!(rep.scaling_ratios.len(), 3);
    }

    #[test]
    fn too_few_surrogates() {
        let t = uneven_t(50, 5.0, 7);
        let y: Vec<f64> = t.iter().map(|v| v.cos()).collect();
        let pg = lomb(&t, &y, &[1.0, 2.0, 3.0]).unwrap();
        assert!(detect_peaks(&pg, &t, &y, 99, 0).is_err());
    }

    #[test]
    fn detect_peaks_is_deterministic() {
        let t = uneven_t(100, 8.0, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let y: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 128).unwrap();
        let pg = lomb(&t, &y, &grid).unwrap();
        let a = detect_peaks(&pg, &t, &y, 100, 42).unwrap();
        let b = detect_peaks(&pg, &t, &y, 100, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn white_noise_rarely_significant() {
        // Monte-Carlo self-test: family-wise false alarms stay near the nominal 1 %
        let runs = 40;
        let mut alarms = 0;
        for r in 0..runs {
            let t = uneven_t(150, 10.0, 100 + r);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200 + r);
            let y: Vec<f64> = (0..150).map(|_| rng.random::<f64>() - 0.5).collect();
            let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 256).unwrap();
            let pg = lomb(&t, &y, &grid).unwrap();
            if detect_peaks(&pg, &t, &y, 200, r)
                .unwrap()
                .any_significant(0.01)
            {
                alarms += 1;
            }
        }
        assert!(alarms as f64 <= 0.05 * runs as f64, "{alarms} of {runs}");
    }

    #[test]
    fn cosine_fit_exact_and_constant() {
        let t = uneven_t(300, 12.0, 9);
        let y: Vec<f64> = t
            .iter()
            .map(|v| 0.5 + 0.2 * (2.5 * v + 1.0).cos())
            .collect();
        let f = fit_logperiodic_residual(&series(&t, &y), 2.5).unwrap();
        assert!((f.a - 0.5).abs() < 1e-10);
        assert!((f.b - 0.2).abs() < 1e-10);
        assert!((f.phi - 1.0).abs() < 1e-10, "{}", f.phi);

        let f = fit_cosine(&t, &vec![0.7; t.len()], 2.5).unwrap();
        assert!((f.a - 0.7).abs() < 1e-12);
        assert!(f.b < 1e-12);
        assert!(fit_cosine(&[1.0; 10], &[0.0; 10], 2.5).is_err());
    }

    #[test]
    fn cosine_fit_amplitude_under_noise() {
        let mut ok = 0;
        for seed in 0..100u64 {
            let t = uneven_t(479, 13.8, 1000 + seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let normal = rand_distr::Normal::new(0.0, 0.1 * 0.05).unwrap();
            let y: Vec<f64> = t
                .iter()
                .map(|v| {
                    0.01 + 0.05 * (2.5 * v + 0.4).cos()
                        + rand_distr::Distribution::sample(&normal, &mut rng)
                })
                .collect();
            let f = fit_cosine(&t, &y, 2.5).unwrap();
            if (f.b / 0.05 - 1.0).abs() <= 0.15 {
                ok += 1;
            }
        }
        assert_eq!(ok, 100);
    }

    proptest! {
        #[test]
        fn affine_and_translation_invariance(a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -3.0f64..3.0, shift in -50.0f64..50.0, seed in 0u64..20) {
            let t = uneven_t(60, 7.0, seed);
            let y: Vec<f64> = t.iter().map(|v| (1.7 * v).sin() + 0.3 * (4.1 * v).cos() + 0.1 * v).collect();
            let grid = default_omega_grid(low_omega_cutoff(&t).unwrap(), 20.0, 64).unwrap();
            let base = lomb(&t, &y, &grid).unwrap();
            let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + shift).collect();
            let scaled = lomb(&t, &ya, &grid).unwrap();
            let moved = lomb(&ts, &y, &grid).unwrap();
            for k in 0..grid.len() {
                prop_assert!((base.powers[k] - scaled.powers[k]).abs() < 1e-10 * base.powers[k].max(1.0));
                prop_assert!((base.powers[k] - moved.powers[k]).abs() < 1e-10 * base.powers[k].max(1.0));
            }
        }
    }
}
