//! Lognormal maximum-likelihood fit, empirical CCDF and CCDF residuals.

use std::f64::consts::PI;

use serde::Serialize;

use crate::dataio::SizeSample;
use crate::stats::{mean, normal_sf, variance_population};
use crate::{Error, Result};

/// Lognormal law fitted by maximum likelihood (natural-log parameters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LognormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
    /// exp(mu + sigma^2 / 2)
    pub implied_mean: f64,
    /// exp(mu), the mode of the density of ln S.
    pub implied_log_mode: f64,
    pub n: usize,
}

impl LognormalFit {
    pub fn from_params(mu: f64, sigma: f64, ln_sizes: &[f64]) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Degenerate(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            log_likelihood: log_likelihood(ln_sizes, mu, sigma),
            implied_mean: (mu + 0.5 * sigma * sigma).exp(),
            implied_log_mode: mu.exp(),
            n: ln_sizes.len(),
        })
    }

    /// Fraction of the fitted law at or above `size`.
    pub fn ccdf(&self, size: f64) -> f64 {
        normal_sf((size.ln() - self.mu) / self.sigma)
    }

    /// Asymptotic standard errors of (mu, sigma).
    pub fn standard_errors(&self) -> (f64, f64) {
        let n = self.n as f64;
        (self.sigma / n.sqrt(), self.sigma / (2.0 * n).sqrt())
    }
}

/// Log-likelihood of sizes `exp(ln_sizes)` under the lognormal density in S.
pub fn log_likelihood(ln_sizes: &[f64], mu: f64, sigma: f64) -> f64 {
    let c = (sigma * (2.0 * PI).sqrt()).ln();
    ln_sizes
        .iter()
        .map(|&l| {
            let z = (l - mu) / sigma;
            -l - c - 0.5 * z * z
        })
        .sum()
}

/// Closed-form MLE: mean and population standard deviation of ln S.
pub fn fit_lognormal(sample: &SizeSample) -> Result<LognormalFit> {
    if sample.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "lognormal fit needs at least 2 sizes, got {}",
            sample.len()
        )));
    }
    let logs = sample.ln_sizes();
    let mu = mean(&logs);
    let sigma = variance_population(&logs).sqrt();
    if !(sigma > 1e-12 * mu.abs().max(1.0)) {
        return Err(Error::Degenerate("all sizes identical, sigma = 0".into()));
    }
    LognormalFit::from_params(mu, sigma, &logs)
}

/// One point of the empirical CCDF: fraction of the sample at or above `size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcdfPoint {
    pub size: f64,
    pub ccdf: f64,
}

/// Empirical CCDF at each distinct observed size, ascending.
pub fn empirical_ccdf(sample: &SizeSample) -> Result<Vec<CcdfPoint>> {
    if sample.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let mut sizes = sample.sizes();
    sizes.sort_by(f64::total_cmp);
    let n = sizes.len() as f64;
    let mut out: Vec<CcdfPoint> = Vec::with_capacity(sizes.len());
    for (i, &s) in sizes.iter().enumerate() {
        if out.last().is_some_and(|p| p.size == s) {
            continue;
        }
        out.push(CcdfPoint {
            size: s,
            ccdf: (sizes.len() - i) as f64 / n,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub ln_size: f64,
    pub delta_f: f64,
}

/// Fitted CCDF minus empirical CCDF, at the observed sizes, ordered by ln S.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSeries {
    pub points: Vec<ResidualPoint>,
}

impl ResidualSeries {
    pub fn t(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ln_size).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delta_f).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of sign changes along the series, zeros skipped.
    pub fn sign_alternations(&self) -> usize {
        let signs: Vec<bool> = self
            .points
            .iter()
            .filter(|p| p.delta_f != 0.0)
            .map(|p| p.delta_f > 0.0)
            .collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

pub fn residuals(sample: &SizeSample, fit: &LognormalFit) -> Result<ResidualSeries> {
    if !(fit.sigma > 0.0) {
        return Err(Error::invalid("lognormal fit with nonpositive sigma"));
    }
    let points = empirical_ccdf(sample)?
        .into_iter()
        .map(|p| ResidualPoint {
            ln_size: p.size.ln(),
            delta_f: fit.ccdf(p.size) - p.ccdf,
        })
        .collect();
    Ok(ResidualSeries { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, LogNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn lognormal_sample(mu: f64, sigma: f64, n: usize, seed: u64) -> SizeSample {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = LogNormal::new(mu, sigma).unwrap();
        let v: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        SizeSample::from_sizes(&v).unwrap()
    }

    #[test]
    fn two_point_closed_form() {
        let s = SizeSample::from_sizes(&[1f64.exp(), 3f64.exp()]).unwrap();
        let f = fit_lognormal(&s).unwrap();
        assert!((f.mu - 2.0).abs() < 1e-12);
        assert!((f.sigma - 1.0).abs() < 1e-12);
        assert!((f.implied_mean - (2.5f64).exp()).abs() < 1e-9);
        assert!((f.implied_log_mode - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_tiny_samples() {
        let s = SizeSample::from_sizes(&[5.0]).unwrap();
        assert!(matches!(fit_lognormal(&s), Err(Error::InsufficientData(_))));
        let s = SizeSample::new(vec![
            crate::dataio::SizeEntry {
                entity_id: "a".into(),
                size: 5.0,
            },
            crate::dataio::SizeEntry {
                entity_id: "b".into(),
                size: 5.0,
            },
        ])
        .unwrap();
        assert!(matches!(fit_lognormal(&s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn paper_scale_recovery_and_mean() {
        let s = lognormal_sample(18.7, 2.24, 479, 2014);
        let f = fit_lognormal(&s).unwrap();
        assert!((f.mu - 18.7).abs() < 0.31, "{}", f.mu);
        assert!((f.sigma - 2.24).abs() < 0.22, "{}", f.sigma);
        let exact = LognormalFit::from_params(18.7, 2.24, &[]).unwrap();
        assert!(
            (exact.implied_mean / 1.6e9 - 1.0).abs() < 0.05,
            "{}",
            exact.implied_mean
        );
    }

    #[test]
    fn likelihood_is_local_maximum() {
        let s = lognormal_sample(3.0, 0.7, 300, 1);
        let f = fit_lognormal(&s).unwrap();
        let logs = s.ln_sizes();
        for dm in [-1e-3, 0.0, 1e-3] {
            for ds in [-1e-3, 0.0, 1e-3] {
                let ll = log_likelihood(&logs, f.mu + dm, f.sigma + ds);
                assert!(f.log_likelihood >= ll);
            }
        }
    }

    #[test]
    fn ccdf_counting() {
        let s = SizeSample::from_sizes(&[3.0, 1.0, 2.0]).unwrap();
        let c = empirical_ccdf(&s).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!((c[0].size, c[0].ccdf), (1.0, 1.0));
        assert!((c[1].ccdf - 2.0 / 3.0).abs() < 1e-15);
        assert!((c[2].ccdf - 1.0 / 3.0).abs() < 1e-15);
        let one = SizeSample::from_sizes(&[5.0]).unwrap();
        assert_eq!(empirical_ccdf(&one).unwrap()[0].ccdf, 1.0);
        assert!(empirical_ccdf(&SizeSample::empty()).is_err());
    }

    #[test]
    fn residual_two_point_direct_evaluation() {
        let s = SizeSample::from_sizes(&[1f64.exp(), 3f64.exp()]).unwrap();
        let f = fit_lognormal(&s).unwrap();
        let r = residuals(&s, &f).unwrap();
        // fitted CCDF at ln S = 1 with mu = 2, sigma = 1 is Phi(1)
        let expected = Normal::new(0.0, 1.0).unwrap().cdf(1.0) - 1.0;
        assert!((r.points[0].delta_f - expected).abs() < 1e-12);
        assert!(
            (r.points[1].delta_f - (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(1.0) - 0.5)).abs()
                < 1e-12
        );
    }

    #[test]
    fn residuals_vanish_on_exact_quantiles() {
        let n = 1000;
        let fit = LognormalFit::from_params(10.0, 1.5, &[]).unwrap();
        let std = Normal::new(0.0, 1.0).unwrap();
        let sizes: Vec<f64> = (0..n)
            .map(|i| (10.0 + 1.5 * std.inverse_cdf((i as f64 + 0.5) / n as f64)).exp())
            .collect();
        let s = SizeSample::from_sizes(&sizes).unwrap();
        let r = residuals(&s, &fit).unwrap();
        assert!(r.points.iter().all(|p| p.delta_f.abs() <= 1.0 / n as f64));
    }

    #[test]
    fn residuals_vanish_for_large_samples() {
        let s = lognormal_sample(5.0, 1.0, 100_000, 3);
        let f = fit_lognormal(&s).unwrap();
        let r = residuals(&s, &f).unwrap();
        let worst = r.points.iter().map(|p| p.delta_f.abs()).fold(0.0, f64::max);
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn oscillating_density_gives_alternating_residuals() {
        // brute-force sample from lognormal x (1 + 0.2 cos(2.5 ln S)) by rejection
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let base = LogNormal::new(10.0, 2.0).unwrap();
        let mut v = Vec::new();
        while v.len() < 5000 {
            let s: f64 = base.sample(&mut rng);
            let accept = (1.0 + 0.2 * (2.5 * s.ln()).cos()) / 1.2;
            if rand::Rng::random::<f64>(&mut rng) < accept {
                v.push(s);
            }
        }
        let s = SizeSample::from_sizes(&v).unwrap();
        let r = residuals(&s, &fit_lognormal(&s).unwrap()).unwrap();
        assert!(r.sign_alternations() >= 3);
        assert!(r.points.windows(2).all(|w| w[0].ln_size < w[1].ln_size));
        assert!(r.points.iter().all(|p| p.delta_f.abs() <= 1.0));
    }

    proptest! {
        #[test]
        fn scaling_shifts_mu_only(c in 1e-3f64..1e3, seed in 0u64..50) {
            let s = lognormal_sample(2.0, 1.0, 50, seed);
            let a = fit_lognormal(&s).unwrap();
            let b = fit_lognormal(&s.scaled(c).unwrap()).unwrap();
            prop_assert!((b.mu - a.mu - c.ln()).abs() < 1e-9);
            prop_assert!((b.sigma - a.sigma).abs() < 1e-9);
        }
    }
}
