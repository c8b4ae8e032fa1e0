//! Small numerical helpers shared by the analysis modules.

use std::f64::consts::PI;

use statrs::function::erf::erfc;

use crate::{Error, Result};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divides by N).
pub fn variance_population(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Sample variance (divides by N - 1).
pub fn variance_sample(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Upper tail of the standard normal, accurate far into the tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Quantile of already sorted data, linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// A uniform grid `start + i * step` for `i < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn spanning(lo: f64, hi: f64, len: usize) -> Self {
        Self {
            start: lo,
            step: (hi - lo) / (len - 1) as f64,
            len,
        }
    }

    pub fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.at(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.at(i)).collect()
    }
}

/// Linear interpolation of `values` sampled on a sorted, not necessarily uniform, `xs`.
/// Returns `None` outside `[xs[0], xs[last]]`.
pub fn interp_sorted(xs: &[f64], values: &[f64], x: f64) -> Option<f64> {
    let n = xs.len();
    if n == 0 || x < xs[0] || x > xs[n - 1] {
        return None;
    }
    let j = xs.partition_point(|&g| g <= x);
    if j == n {
        return Some(values[n - 1]);
    }
    let i = j - 1;
    let w = (x - xs[i]) / (xs[j] - xs[i]);
    Some(values[i] + w * (values[j] - values[i]))
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Indices of strict interior local minima (plateaus resolved to their left edge).
pub fn local_minima(ys: &[f64]) -> Vec<usize> {
    extrema(ys, |a, b| a < b)
}

/// Indices of strict interior local maxima (plateaus resolved to their left edge).
pub fn local_maxima(ys: &[f64]) -> Vec<usize> {
    extrema(ys, |a, b| a > b)
}

fn extrema(ys: &[f64], better: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let n = ys.len();
    let mut i = 1;
    while i + 1 < n {
        if better(ys[i], ys[i - 1]) {
            let mut j = i;
            while j + 1 < n && ys[j + 1] == ys[i] {
                j += 1;
            }
            if j + 1 < n && better(ys[i], ys[j + 1]) {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Subtracts the least-squares polynomial of the given degree (0..=2) in `t`.
pub fn detrend_polynomial(t: &[f64], y: &mut [f64], degree: usize) -> Result<()> {
    let degree = degree.min(2);
    let n = t.len();
    if n <= degree {
        return Err(Error::InsufficientData(format!(
            "{n} points cannot be detrended at degree {degree}"
        )));
    }
    let tm = mean(t);
    let scale = t
        .iter()
        .map(|v| (v - tm).abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let k = degree + 1;
    // normal equations on the centred, scaled abscissa
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for (&ti, &yi) in t.iter().zip(y.iter()) {
        let x = (ti - tm) / scale;
        let basis = [1.0, x, x * x];
        for r in 0..k {
            aty[r] += basis[r] * yi;
            for c in 0..k {
                ata[r][c] += basis[r] * basis[c];
            }
        }
    }
    let coef = solve_small(&mut ata, &mut aty, k)
        .ok_or_else(|| Error::Degenerate("singular detrending design".into()))?;
    for (ti, yi) in t.iter().zip(y.iter_mut()) {
        let x = (ti - tm) / scale;
        let basis = [1.0, x, x * x];
        *yi -= (0..k).map(|r| coef[r] * basis[r]).sum::<f64>();
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting for systems of order <= 3.
pub fn solve_small(a: &mut [[f64; 3]; 3], b: &mut [f64; 3], k: usize) -> Option<[f64; 3]> {
    let norm = (0..k)
        .flat_map(|r| (0..k).map(move |c| (r, c)))
        .map(|(r, c)| a[r][c].abs())
        .fold(0.0, f64::max);
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * norm.max(1e-300) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..k {
            let f = a[r][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[r][col..k].iter_mut().zip(&pivot_row[col..k]) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Hill estimate of the tail exponent from the `k` largest observations.
pub fn hill_estimator(sample: &[f64], k: usize) -> Result<f64> {
    if k < 2 || k >= sample.len() {
        return Err(Error::invalid(format!(
            "Hill estimator needs 2 <= k < n, got k = {k}, n = {}",
            sample.len()
        )));
    }
    let sorted = sorted_copy(sample);
    let n = sorted.len();
    let threshold = sorted[n - k - 1];
    if threshold <= 0.0 {
        return Err(Error::invalid("Hill estimator needs a positive threshold"));
    }
    let s: f64 = sorted[n - k..].iter().map(|x| (x / threshold).ln()).sum();
    Ok(k as f64 / s)
}

/// Largest absolute gap between the empirical CDF of `sample` and `cdf`.
pub fn kolmogorov_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let sorted = sorted_copy(sample);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Wraps an angle into [0, 2π).
pub fn wrap_phase(phi: f64) -> f64 {
    let tau = 2.0 * PI;
    let r = phi.rem_euclid(tau);
    if r >= tau {
        0.0
    } else {
        r
    }
}
