//! Nonextensive growth model: Boltzmann and Tsallis samplers, the complex
//! exponents of the multiplicative recursion, the log-periodic power law and
//! its sampler, and the evolution operator of the recursion.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataio::SizeSample;
use crate::rng::CounterUniform;
use crate::stats::{trapezoid, UniformGrid};
use crate::{Error, Result};

pub const DEFAULT_K_MAX: u32 = 3;
/// Intervals of the tabulated cumulative distribution in ln S.
pub const CDF_INTERVALS: usize = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthModelParams {
    pub n: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    pub gamma: f64,
    pub kappa: u32,
    pub w0: f64,
    pub w1: f64,
}

impl GrowthModelParams {
    pub fn new(n: f64, t0: f64, gamma: f64, kappa: u32, w0: f64, w1: f64) -> Result<Self> {
        let p = Self {
            n,
            t0,
            gamma,
            kappa,
            w0,
            w1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n > 1.0 && self.n.is_finite()) {
            return Err(Error::invalid(format!("n must exceed 1, got {}", self.n)));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::invalid(format!(
                "T0 must be positive, got {}",
                self.t0
            )));
        }
        if !(self.gamma > 0.0 && self.gamma * self.n < 1.0) {
            return Err(Error::invalid(format!(
                "gamma must lie in (0, 1/n), got gamma = {} with n = {}",
                self.gamma, self.n
            )));
        }
        if self.kappa == 0 {
            return Err(Error::invalid("kappa must be at least 1"));
        }
        check_amplitudes(self.w0, self.w1)
    }

    /// Tail exponent n + (n/2)(n+1)γ of the log-periodic law.
    pub fn exponent(&self) -> f64 {
        self.n + 0.5 * self.n * (self.n + 1.0) * self.gamma
    }

    pub fn predicted_omega(&self) -> f64 {
        2.0 * PI / (f64::from(self.kappa) * self.gamma.ln_1p())
    }

    /// Log-periodic law with the κ-step angular frequency.
    pub fn law(&self) -> LogPeriodicLaw {
        LogPeriodicLaw {
            m: self.exponent(),
            omega: self.predicted_omega(),
            w0: self.w0,
            w1: self.w1,
        }
    }
}

fn check_amplitudes(w0: f64, w1: f64) -> Result<()> {
    if !(w0 > 0.0) {
        return Err(Error::invalid(format!("w0 must be positive, got {w0}")));
    }
    if !(w1.abs() < w0) {
        return Err(Error::invalid(format!(
            "|w1| must be below w0, got w0 = {w0}, w1 = {w1}"
        )));
    }
    Ok(())
}

/// Exponential sizes with mean `t0`, S = -T0 ln(1 - u).
pub fn sample_boltzmann(t0: f64, count: usize, seed: u64) -> Result<SizeSample> {
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::invalid(format!("T0 must be positive, got {t0}")));
    }
    let u = CounterUniform::new(seed).fill(0, count);
    SizeSample::from_sizes(
        &u.iter()
            .map(|&u| boltzmann_quantile(t0, u))
            .collect::<Vec<_>>(),
    )
}

pub fn boltzmann_quantile(t0: f64, u: f64) -> f64 {
    -t0 * (-u).ln_1p()
}

/// Tsallis law with CCDF (1 + S/(nT0))^-(n-1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsallisLaw {
    pub n: f64,
    pub t0: f64,
}

impl TsallisLaw {
    pub fn new(n: f64, t0: f64) -> Result<Self> {
        if !(n > 1.0 && n.is_finite()) {
            return Err(Error::invalid(format!("n must exceed 1, got {n}")));
        }
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::invalid(format!("T0 must be positive, got {t0}")));
        }
        Ok(Self { n, t0 })
    }

    pub fn quantile(&self, u: f64) -> f64 {
        // nT0 ((1-u)^(-1/(n-1)) - 1), written to keep precision near u = 0
        self.n * self.t0 * (-(-u).ln_1p() / (self.n - 1.0)).exp_m1()
    }

    pub fn ccdf(&self, s: f64) -> f64 {
        (1.0 + s / (self.n * self.t0)).powf(1.0 - self.n)
    }

    pub fn cdf(&self, s: f64) -> f64 {
        1.0 - self.ccdf(s)
    }

    pub fn pdf(&self, s: f64) -> f64 {
        let a = self.n * self.t0;
        (self.n - 1.0) / a * (1.0 + s / a).powf(-self.n)
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<SizeSample> {
        let u = CounterUniform::new(seed).fill(0, count);
        SizeSample::from_sizes(&u.iter().map(|&u| self.quantile(u)).collect::<Vec<_>>())
    }
}

pub fn sample_tsallis(params: &GrowthModelParams, count: usize, seed: u64) -> Result<SizeSample> {
    TsallisLaw::new(params.n, params.t0)?.sample(count, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexExponent {
    pub k: u32,
    pub re: f64,
    pub im: f64,
}

/// α_k = -ln(1-nγ)/ln(1+γ) + i 2πk/ln(1+γ) for k = 0..=k_max.
pub fn complex_exponents(gamma: f64, n: f64, k_max: u32) -> Result<Vec<ComplexExponent>> {
    if !(n > 1.0) {
        return Err(Error::invalid(format!("n must exceed 1, got {n}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if !(n * gamma < 1.0) {
        return Err(Error::invalid(format!(
            "n * gamma must be below 1, got {}",
            n * gamma
        )));
    }
    let l = gamma.ln_1p();
    let re = -(-n * gamma).ln_1p() / l;
    Ok((0..=k_max)
        .map(|k| ComplexExponent {
            k,
            re,
            im: 2.0 * PI * f64::from(k) / l,
        })
        .collect())
}

/// 2π / (κ ln(1+γ))
pub fn predict_omega(gamma: f64, kappa: u32) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if kappa == 0 {
        return Err(Error::invalid("kappa must be at least 1"));
    }
    Ok(2.0 * PI / (f64::from(kappa) * gamma.ln_1p()))
}

/// S^-m [w0 + w1 cos(ω ln S)], before truncation and normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPeriodicLaw {
    pub m: f64,
    pub omega: f64,
    pub w0: f64,
    pub w1: f64,
}

impl LogPeriodicLaw {
    pub fn truncated(self, s_min: f64, s_max: f64) -> Result<TruncatedLogPeriodic> {
        TruncatedLogPeriodic::new(self, s_min, s_max)
    }
}

/// A log-periodic power law normalised on `[s_min, s_max]`, with its CDF table.
#[derive(Debug, Clone)]
pub struct TruncatedLogPeriodic {
    pub law: LogPeriodicLaw,
    pub s_min: f64,
    pub s_max: f64,
    grid: UniformGrid,
    /// CDF at the grid nodes, from 0 to 1
    cdf: Vec<f64>,
    /// ∫ e^{(1-m)(u-u0)} (w0 + w1 cos ωu) du over the range
    norm: f64,
}

impl TruncatedLogPeriodic {
    pub fn new(law: LogPeriodicLaw, s_min: f64, s_max: f64) -> Result<Self> {
        check_amplitudes(law.w0, law.w1)?;
        if !(s_min > 0.0 && s_max > s_min && s_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < s_min < s_max, got [{s_min}, {s_max}]"
            )));
        }
        if !law.m.is_finite() || !law.omega.is_finite() {
            return Err(Error::invalid("exponent and frequency must be finite"));
        }
        let grid = UniformGrid::spanning(s_min.ln(), s_max.ln(), CDF_INTERVALS + 1);
        let mut t = Self {
            law,
            s_min,
            s_max,
            grid,
            cdf: Vec::new(),
            norm: 1.0,
        };
        // Simpson on each interval with its midpoint
        let mut cum = Vec::with_capacity(grid.len);
        cum.push(0.0);
        let mut acc = 0.0;
        let mut left = t.weight(grid.at(0));
        for i in 1..grid.len {
            let right = t.weight(grid.at(i));
            let mid = t.weight(grid.at(i) - 0.5 * grid.step);
            acc += grid.step / 6.0 * (left + 4.0 * mid + right);
            cum.push(acc);
            left = right;
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::Numeric(format!("normalisation integral is {acc}")));
        }
        t.norm = acc;
        t.cdf = cum.into_iter().map(|c| c / acc).collect();
        Ok(t)
    }

    /// Unnormalised density of u = ln S.
    fn weight(&self, u: f64) -> f64 {
        let l = &self.law;
        ((1.0 - l.m) * (u - self.grid.start)).exp() * (l.w0 + l.w1 * (l.omega * u).cos())
    }

    /// Density of ln S.
    pub fn pdf_ln(&self, u: f64) -> f64 {
        if u < self.grid.start || u > self.grid.end() {
            return 0.0;
        }
        self.weight(u) / self.norm
    }

    /// Density in S.
    pub fn pdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        self.pdf_ln(s.ln()) / s
    }

    pub fn cdf(&self, s: f64) -> f64 {
        if s <= self.s_min {
            return 0.0;
        }
        if s >= self.s_max {
            return 1.0;
        }
        let pos = (s.ln() - self.grid.start) / self.grid.step;
        let i = (pos.floor() as usize).min(self.grid.len - 2);
        let w = pos - i as f64;
        self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse of the tabulated CDF, linear within each cell.
    pub fn quantile(&self, u: f64) -> f64 {
        let j = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, self.grid.len - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let w = if c1 > c0 {
            ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.grid.at(j - 1) + w * self.grid.step).exp()
    }

    /// Draws `count` sizes; draw i uses the i-th variate of the seeded stream.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SizeSample> {
        let u = CounterUniform::new(seed).fill(0, count);
        SizeSample::from_sizes(&u.iter().map(|&u| self.quantile(u)).collect::<Vec<_>>())
    }

    /// Draws with indices `start..start + count` of the stream.
    pub fn sample_range(&self, start: u64, count: usize, seed: u64) -> Vec<f64> {
        CounterUniform::new(seed)
            .fill(start, count)
            .iter()
            .map(|&u| self.quantile(u))
            .collect()
    }
}

pub fn logperiodic_pdf(
    params: &GrowthModelParams,
    s_min: f64,
    s_max: f64,
) -> Result<TruncatedLogPeriodic> {
    params.validate()?;
    params.law().truncated(s_min, s_max)
}

pub fn sample_logperiodic(
    params: &GrowthModelParams,
    s_min: f64,
    s_max: f64,
    count: usize,
    seed: u64,
) -> Result<SizeSample> {
    logperiodic_pdf(params, s_min, s_max)?.sample(count, seed)
}

/// Density in S tabulated on a uniform grid in ln S.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogGridDensity {
    pub ln_grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl LogGridDensity {
    pub fn new(ln_grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if ln_grid.len() < 2 || ln_grid.len() != density.len() {
            return Err(Error::invalid(
                "log grid and density must have equal length >= 2",
            ));
        }
        let step = (ln_grid[ln_grid.len() - 1] - ln_grid[0]) / (ln_grid.len() - 1) as f64;
        if !(step > 0.0)
            || ln_grid
                .windows(2)
                .any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step)
        {
            return Err(Error::invalid(
                "grid must be uniform and increasing in ln S",
            ));
        }
        if density.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid("density must be finite and nonnegative"));
        }
        Ok(Self { ln_grid, density })
    }

    /// Tabulates `f(S)` at `len` points spaced evenly in ln S.
    pub fn tabulate(s_min: f64, s_max: f64, len: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let ln_grid = UniformGrid::spanning(s_min.ln(), s_max.ln(), len).points();
        let density = ln_grid.iter().map(|u| f(u.exp())).collect();
        Self::new(ln_grid, density)
    }

    pub fn step(&self) -> f64 {
        (self.ln_grid[self.ln_grid.len() - 1] - self.ln_grid[0]) / (self.ln_grid.len() - 1) as f64
    }

    /// ∫ P(S) dS, by the trapezoid rule in ln S.
    pub fn mass(&self) -> f64 {
        let w: Vec<f64> = self
            .ln_grid
            .iter()
            .zip(&self.density)
            .map(|(u, d)| d * u.exp())
            .collect();
        trapezoid(&self.ln_grid, &w)
    }

    /// P at `u = ln S`, interpolating ln P when both neighbours are positive.
    pub fn at_ln(&self, u: f64) -> Option<f64> {
        let n = self.ln_grid.len();
        let pos = (u - self.ln_grid[0]) / self.step();
        if !(pos >= -1e-9 && pos <= (n - 1) as f64 + 1e-9) {
            return None;
        }
        let pos = pos.clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        let (a, b) = (self.density[i], self.density[i + 1]);
        Some(if a > 0.0 && b > 0.0 {
            (a.ln() + w * (b.ln() - a.ln())).exp()
        } else {
            a + w * (b - a)
        })
    }
}

/// Result of [`evolve_distribution`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evolved {
    pub density: LogGridDensity,
    /// Mass before renormalisation.
    pub mass_before_renormalisation: f64,
}

/// Applies the κ-step growth map `steps` times.
///
/// One application moves probability from S to Φ(S) = (S + nT0)(1+γ)^κ - nT0
/// with gain (1 - γn)^κ, while the cell [s_min, Φ(s_min)) below the first image
/// keeps the initial density. The evolved density therefore satisfies
/// P(Φ(S)) = (1 - γn)^κ P(S) on the covered part of the grid.
pub fn evolve_distribution(
    params: &GrowthModelParams,
    initial: &LogGridDensity,
    steps: u32,
) -> Result<Evolved> {
    params.validate()?;
    let cell = f64::from(params.kappa) * params.gamma.ln_1p();
    if initial.step() > cell / 16.0 {
        return Err(Error::invalid(format!(
            "grid too coarse: spacing {} exceeds 1/16 of the log-period {cell}",
            initial.step()
        )));
    }
    let mass0 = initial.mass();
    if steps == 0 {
        return Ok(Evolved {
            density: initial.clone(),
            mass_before_renormalisation: mass0,
        });
    }
    let a = params.n * params.t0;
    let growth = (f64::from(params.kappa) * params.gamma.ln_1p()).exp();
    let gain = f64::from(params.kappa) * (-params.n * params.gamma).ln_1p();
    let s_min = initial.ln_grid[0].exp();
    let base_top = (s_min + a) * growth - a;
    let density: Vec<f64> = initial
        .ln_grid
        .iter()
        .map(|&u| {
            let mut s = u.exp();
            let mut j = 0;
            // pull S back until it lands in the base cell or the step budget is spent
            while j < steps && s >= base_top {
                s = (s + a) / growth - a;
                j += 1;
            }
            let p = if j == 0 {
                initial.at_ln(u)
            } else {
                initial.at_ln(s.ln())
            };
            p.unwrap_or(0.0) * (f64::from(j) * gain).exp()
        })
        .collect();
    let raw = LogGridDensity::new(initial.ln_grid.clone(), density)?;
    let mass = raw.mass();
    if !(mass > 0.0) {
        return Err(Error::Numeric("evolved density has no mass".into()));
    }
    let density = raw.density.iter().map(|d| d / mass).collect();
    Ok(Evolved {
        density: LogGridDensity::new(raw.ln_grid, density)?,
        mass_before_renormalisation: mass,
    })
}
