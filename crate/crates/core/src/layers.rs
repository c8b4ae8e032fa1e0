//! Geometric size layers bounded by minima of the log-size density.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dataio::{HoldingsTable, SizeSample};
use crate::density::DensityEstimate;
use crate::stats::{local_maxima, local_minima, mean};
use crate::{Error, Result};

pub const DEFAULT_TARGET_RATIO: f64 = 3.5;
pub const DEFAULT_TOLERANCE: f64 = 0.35;

/// Upper bounds ub_1 < ... < ub_{L-1}; layer i covers (ub_{i-1}, ub_i] and the
/// top layer is unbounded. Layer indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPartition {
    pub boundaries: Vec<f64>,
    pub assignments: BTreeMap<String, usize>,
    pub ratios: Vec<f64>,
    /// Highest density maximum inside each layer, when there is one.
    pub modes: Vec<Option<f64>>,
}

impl LayerPartition {
    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("layer boundaries must be positive"));
        }
        if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "layer boundaries must be strictly increasing",
            ));
        }
        let ratios = boundaries.windows(2).map(|w| w[1] / w[0]).collect();
        let layers = boundaries.len() + 1;
        Ok(Self {
            boundaries,
            assignments: BTreeMap::new(),
            ratios,
            modes: vec![None; layers],
        })
    }

    pub fn layer_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// 1-based layer of a size.
    pub fn layer_of(&self, size: f64) -> usize {
        self.boundaries.partition_point(|&b| b < size) + 1
    }

    /// Entity ids per layer, in id order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.layer_count()];
        for (id, &l) in &self.assignments {
            out[l - 1].push(id.as_str());
        }
        out
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }

    /// Lower and upper bound of layer `i` (1-based); `None` means unbounded.
    pub fn bounds(&self, i: usize) -> (f64, Option<f64>) {
        let lo = if i == 1 { 0.0 } else { self.boundaries[i - 2] };
        (lo, self.boundaries.get(i - 1).copied())
    }
}

/// Boundaries from density minima, chained upward within the ratio band.
pub fn partition_from_density(
    estimate: &DensityEstimate,
    target_ratio: f64,
    tolerance: f64,
) -> Result<LayerPartition> {
    if estimate.density.is_empty() {
        return Err(Error::InsufficientData("empty density".into()));
    }
    if !(target_ratio > 0.0) {
        return Err(Error::invalid(format!(
            "target ratio must be positive, got {target_ratio}"
        )));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let minima = local_minima(&estimate.density);
    let (lo, hi) = (
        target_ratio / (1.0 + tolerance),
        target_ratio * (1.0 + tolerance),
    );
    let mut chosen: Vec<usize> = Vec::new();
    if let Some(&first) = minima.first() {
        chosen.push(first);
        loop {
            let cur = estimate.grid[*chosen.last().unwrap()];
            let next = minima
                .iter()
                .copied()
                .filter(|&i| {
                    let r = (estimate.grid[i] - cur).exp();
                    r >= lo && r <= hi
                })
                .min_by(|&a, &b| {
                    estimate.density[a]
                        .total_cmp(&estimate.density[b])
                        .then(a.cmp(&b))
                });
            match next {
                Some(i) => chosen.push(i),
                None => break,
            }
        }
    }
    let mut p =
        LayerPartition::from_boundaries(chosen.iter().map(|&i| estimate.grid[i].exp()).collect())?;
    let maxima = local_maxima(&estimate.density);
    for (layer, slot) in p.modes.iter_mut().enumerate() {
        let (lo_b, hi_b) = (
            if layer == 0 {
                f64::NEG_INFINITY
            } else {
                chosen[layer - 1] as f64
            },
            chosen.get(layer).map_or(f64::INFINITY, |&i| i as f64),
        );
        *slot = maxima
            .iter()
            .copied()
            .filter(|&i| (i as f64) > lo_b && (i as f64) < hi_b)
            .max_by(|&a, &b| {
                estimate.density[a]
                    .total_cmp(&estimate.density[b])
                    .then(b.cmp(&a))
            })
            .map(|i| estimate.grid[i].exp());
    }
    Ok(p)
}

/// Places every entity in the smallest layer whose upper bound is at least its size.
pub fn assign(sample: &SizeSample, boundaries: &[f64]) -> Result<LayerPartition> {
    let mut p = LayerPartition::from_boundaries(boundaries.to_vec())?;
    p.assignments = sample
        .entries()
        .iter()
        .map(|e| (e.entity_id.clone(), p.layer_of(e.size)))
        .collect();
    Ok(p)
}

/// Copies the assignment of `sample` onto an existing partition, keeping its modes.
pub fn assign_into(partition: &LayerPartition, sample: &SizeSample) -> LayerPartition {
    let mut p = partition.clone();
    p.assignments = sample
        .entries()
        .iter()
        .map(|e| (e.entity_id.clone(), p.layer_of(e.size)))
        .collect();
    p
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: usize,
    pub lower_bound: f64,
    pub upper_bound: Option<f64>,
    /// Upper bound rounded to two significant figures.
    pub upper_bound_rounded: Option<f64>,
    pub ratio_to_previous: Option<f64>,
    pub count: usize,
    pub mean_holdings: Option<f64>,
    /// Entities with no position in the holdings table, counted with 0 holdings.
    pub without_holdings: usize,
    pub mode: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStats {
    pub layers: Vec<LayerRow>,
    pub ratios: Vec<f64>,
    pub mean_ratio: Option<f64>,
    pub total: usize,
}

/// Counts, mean distinct holdings and boundary ratios per layer.
pub fn layer_stats(partition: &LayerPartition, holdings: Option<&HoldingsTable>) -> LayerStats {
    let mut held: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    if let Some(h) = holdings {
        for pos in h.positions().iter().filter(|p| p.weight > 0.0) {
            held.entry(pos.entity_id.as_str())
                .or_default()
                .insert(pos.asset_id.as_str());
        }
    }
    let members = partition.members();
    let layers = (1..=partition.layer_count())
        .map(|i| {
            let ids = &members[i - 1];
            let (lower_bound, upper_bound) = partition.bounds(i);
            let counts: Vec<f64> = ids
                .iter()
                .map(|id| held.get(id).map_or(0, BTreeSet::len) as f64)
                .collect();
            LayerRow {
                layer: i,
                lower_bound,
                upper_bound,
                upper_bound_rounded: upper_bound.map(|b| round_significant(b, 2)),
                ratio_to_previous: if i >= 2 {
                    partition.ratios.get(i - 2).copied()
                } else {
                    None
                },
                count: ids.len(),
                mean_holdings: (holdings.is_some() && !ids.is_empty()).then(|| mean(&counts)),
                without_holdings: if holdings.is_some() {
                    ids.iter().filter(|id| !held.contains_key(*id)).count()
                } else {
                    0
                },
                mode: partition.modes.get(i - 1).copied().flatten(),
            }
        })
        .collect();
    LayerStats {
        layers,
        ratios: partition.ratios.clone(),
        mean_ratio: (!partition.ratios.is_empty()).then(|| mean(&partition.ratios)),
        total: partition.assignments.len(),
    }
}

pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Position;
    use crate::stats::{normal_pdf, UniformGrid};
    use proptest::prelude::*;

    const TABLE1: [f64; 6] = [9e6, 38e6, 150e6, 430e6, 1500e6, 5000e6];

    fn mixture(centres: &[f64], sd: f64) -> impl Fn(f64) -> f64 + '_ {
        move |u| {
            centres
                .iter()
                .map(|c| normal_pdf((u - c) / sd) / sd)
                .sum::<f64>()
                / centres.len() as f64
        }
    }

    #[test]
    fn unimodal_gives_single_layer() {
        let g = UniformGrid::spanning(-5.0, 5.0, 512).points();
        let d = g.iter().map(|&u| normal_pdf(u)).collect();
        let e = DensityEstimate::from_values(g, d, 0.1).unwrap();
        let p = partition_from_density(&e, 3.5, 0.35).unwrap();
        assert_eq!(p.layer_count(), 1);
        assert_eq!(p.bounds(1), (0.0, None));
        assert!((p.modes[0].unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn three_bumps_three_layers() {
        let c0 = 18.0;
        let step = 3.5f64.ln();
        let centres = [c0, c0 + step, c0 + 2.0 * step];
        let f = mixture(&centres, 0.3);
        let grid = UniformGrid::spanning(c0 - 2.0, c0 + 2.0 * step + 2.0, 1024);
        let g = grid.points();
        let d = g.iter().map(|&u| f(u)).collect();
        let e = DensityEstimate::from_values(g, d, 0.3).unwrap();
        let p = partition_from_density(&e, 3.5, 0.35).unwrap();
        assert_eq!(p.layer_count(), 3);
        // brute-force minima of the analytic mixture between consecutive centres
        for (k, b) in p.boundaries.iter().enumerate() {
            let (a, z) = (centres[k], centres[k + 1]);
            let m = (0..=1_000_000)
                .map(|i| a + (z - a) * i as f64 / 1e6)
                .min_by(|x, y| f(*x).total_cmp(&f(*y)))
                .unwrap();
            assert!((b.ln() - m).abs() <= grid.step, "{} vs {m}", b.ln());
        }
        assert_eq!(p.modes.iter().filter(|m| m.is_some()).count(), 3);
    }

    #[test]
    fn argument_errors() {
        let e = DensityEstimate {
            grid: vec![],
            density: vec![],
            bandwidth: 0.1,
        };
        assert!(partition_from_density(&e, 3.5, 0.35).is_err());
        let g = UniformGrid::spanning(0.0, 1.0, 64).points();
        let e = DensityEstimate::from_values(g, vec![1.0; 64], 0.1).unwrap();
        assert!(partition_from_density(&e, 0.0, 0.35).is_err());
        assert!(LayerPartition::from_boundaries(vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn table_one_assignment_convention() {
        let s = SizeSample::from_sizes(&[9e6, 9e6 + 1.0, 1e12, 1.0]).unwrap();
        let p = assign(&s, &TABLE1).unwrap();
        assert_eq!(p.layer_count(), 7);
        assert_eq!(p.assignments["e000001"], 1);
        assert_eq!(p.assignments["e000002"], 2);
        assert_eq!(p.assignments["e000003"], 7);
        assert_eq!(p.assignments["e000004"], 1);
    }

    #[test]
    fn table_one_ratios() {
        let p = LayerPartition::from_boundaries(TABLE1.to_vec()).unwrap();
        let st = layer_stats(&p, None);
        // published values are rounded; 1500/430 = 3.49 is listed as 3.4
        for (r, want) in st.ratios.iter().zip([4.2, 3.9, 2.9, 3.4, 3.3]) {
            assert!((r - want).abs() <= 0.1, "{r} vs {want}");
        }
        assert!((st.mean_ratio.unwrap() - 3.6).abs() <= 0.05);
        assert_eq!(st.layers[0].upper_bound_rounded, Some(9e6));
    }

    #[test]
    fn single_layer_and_mean_holdings() {
        let s = SizeSample::from_sizes(&[1.0, 2.0, 3.0]).unwrap();
        let p = assign(&s, &[]).unwrap();
        let pos = |e: &str, a: &str| Position {
            entity_id: e.into(),
            asset_id: a.into(),
            weight: 1.0,
            market_cap: None,
        };
        let h = HoldingsTable::new(vec![
            pos("e000001", "A"),
            pos("e000001", "B"),
            pos("e000001", "C"),
            pos("e000002", "A"),
            pos("e000002", "B"),
            pos("e000002", "C"),
            pos("e000002", "D"),
            pos("e000002", "E"),
        ])
        .unwrap();
        let st = layer_stats(&p, Some(&h));
        assert_eq!(st.layers.len(), 1);
        assert!(st.ratios.is_empty() && st.mean_ratio.is_none());
        assert_eq!(st.layers[0].count, 3);
        assert_eq!(st.layers[0].without_holdings, 1);
        // 3, 5 and 0 holdings
        assert!((st.layers[0].mean_holdings.unwrap() - 8.0 / 3.0).abs() < 1e-12);
        let two = assign(&SizeSample::from_sizes(&[1.0, 2.0]).unwrap(), &[]).unwrap();
        assert_eq!(
            layer_stats(&two, Some(&h)).layers[0].mean_holdings,
            Some(4.0)
        );
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(1534e6, 2), 1500e6);
        assert_eq!(round_significant(0.0367, 2), 0.037);
        assert_eq!(round_significant(9.0, 2), 9.0);
    }

    proptest! {
        #[test]
        fn exhaustive_and_scale_invariant(sizes in prop::collection::vec(1e3f64..1e12, 1..60), c in 1e-3f64..1e3) {
            let s = SizeSample::from_sizes(&sizes).unwrap();
            let p = assign(&s, &TABLE1).unwrap();
            prop_assert_eq!(p.counts().iter().sum::<usize>(), sizes.len());
            let scaled: Vec<f64> = TABLE1.iter().map(|b| b * c).collect();
            let q = assign(&s.scaled(c).unwrap(), &scaled).unwrap();
            for (id, l) in &p.assignments {
                // exact products can straddle a boundary only through rounding
                let size = s.entries().iter().find(|e| &e.entity_id == id).unwrap().size;
                if TABLE1.iter().all(|b| (size / b - 1.0).abs() > 1e-12) {
                    prop_assert_eq!(q.assignments[id], *l);
                }
            }
        }

        #[test]
        fn chained_ratios_stay_in_band(centres in prop::collection::vec(10.0f64..30.0, 1..8), sd in 0.1f64..0.6, target in 2.0f64..6.0) {
            let f = mixture(&centres, sd);
            let g = UniformGrid::spanning(8.0, 32.0, 2048).points();
            let d = g.iter().map(|&u| f(u)).collect();
            let e = DensityEstimate::from_values(g, d, sd).unwrap();
            let p = partition_from_density(&e, target, 0.35).unwrap();
            for r in &p.ratios {
                prop_assert!(*r >= target / 1.35 - 1e-9 && *r <= target * 1.35 + 1e-9);
            }
        }
    }
}
