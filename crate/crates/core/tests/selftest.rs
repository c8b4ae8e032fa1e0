use dsi_core::selftest::{self, CHECKS};
use dsi_core::spectral::{self, Periodogram};
use dsi_core::Result;

fn doubled_lomb(t: &[f64], y: &[f64], omegas: &[f64]) -> Result<Periodogram> {
    let mut pg = spectral::lomb(t, y, omegas)?;
    pg.powers.iter_mut().for_each(|p| *p *= 2.0);
    Ok(pg)
}

fn shifted_lomb(t: &[f64], y: &[f64], omegas: &[f64]) -> Result<Periodogram> {
    let stretched: Vec<f64> = t.iter().map(|v| 1.05 * v).collect();
    spectral::lomb(&stretched, y, omegas)
}

#[test]
fn lomb_check_passes_on_the_real_periodogram() {
    assert!(selftest::lomb_correctness().passed);
}

#[test]
fn lomb_check_catches_broken_normalisation() {
    let o = selftest::lomb_correctness_with(doubled_lomb);
    assert!(!o.passed, "{}", o.line());
}

#[test]
fn lomb_check_catches_misplaced_peak() {
    let o = selftest::lomb_correctness_with(shifted_lomb);
    assert!(!o.passed, "{}", o.line());
}

#[test]
fn run_selects_by_id() {
    let out = selftest::run(&[5, 1]).unwrap();
    let ids: Vec<u32> = out.iter().map(|o| o.id).collect();
    assert_eq!(ids, [1, 5]);
    assert!(out.iter().all(|o| o.passed));
    assert!(selftest::run(&[12]).is_err());
    assert_eq!(CHECKS.len(), 11);
}
