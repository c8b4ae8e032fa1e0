//! Holdings similarity per layer, market-portfolio similarity, adjacency and
//! ubiquity of assets, the ubiquity/capitalisation power law and Sharpe ratios.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{HoldingsTable, ReturnsTable};
use crate::layers::LayerPartition;
use crate::stats::{mean, quantile_sorted, sorted_copy, variance_sample};
use crate::{Error, Result};

pub const DEFAULT_RANK_THRESHOLD: usize = 500;
pub const DEFAULT_PERIODS_PER_YEAR: u32 = 252;
pub const MIN_OBSERVATIONS: usize = 30;

/// Asset id to weight, iterated in asset id order.
pub type Portfolio = BTreeMap<String, f64>;

/// Portfolios of every entity in the holdings table.
pub fn portfolios(holdings: &HoldingsTable) -> BTreeMap<String, Portfolio> {
    let mut out: BTreeMap<String, Portfolio> = BTreeMap::new();
    for p in holdings.positions() {
        out.entry(p.entity_id.clone())
            .or_default()
            .insert(p.asset_id.clone(), p.weight);
    }
    out
}

fn norm(p: &Portfolio) -> f64 {
    p.values().map(|w| w * w).sum::<f64>().sqrt()
}

/// Cosine of the two weight vectors.
pub fn similarity(a: &Portfolio, b: &Portfolio) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::invalid("portfolio has no positive weight"));
    }
    Ok((dot(a, b) / (na * nb)).min(1.0))
}

/// Sum over common assets in asset id order, whichever argument comes first.
fn dot(a: &Portfolio, b: &Portfolio) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut s = 0.0;
    for (k, w) in small {
        if let Some(v) = large.get(k) {
            s += w * v;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    /// Mean similarity between layers i and j; `None` where no pair exists.
    pub entries: Vec<Vec<Option<f64>>>,
    /// Assigned entities left out because they hold nothing.
    pub excluded_entities: Vec<String>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.entries.len()
    }
}

/// Entity id, portfolio and its norm.
type Member<'a> = (&'a str, &'a Portfolio, f64);

/// Members of each layer that have a usable portfolio, with those portfolios.
fn layer_portfolios<'a>(
    partition: &'a LayerPartition,
    book: &'a BTreeMap<String, Portfolio>,
) -> (Vec<Vec<Member<'a>>>, Vec<String>) {
    let mut excluded = Vec::new();
    let layers = partition
        .members()
        .into_iter()
        .map(|ids| {
            ids.into_iter()
                .filter_map(|id| match book.get(id) {
                    Some(p) if norm(p) > 0.0 => Some((id, p, norm(p))),
                    _ => {
                        excluded.push(id.to_string());
                        None
                    }
                })
                .collect()
        })
        .collect();
    excluded.sort();
    (layers, excluded)
}

/// Mean pairwise similarity within and between layers, self-pairs excluded.
pub fn layer_similarity_matrix(
    partition: &LayerPartition,
    holdings: &HoldingsTable,
) -> SimilarityMatrix {
    let book = portfolios(holdings);
    let (layers, excluded_entities) = layer_portfolios(partition, &book);
    let l = layers.len();
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|i| (i..l).map(move |j| (i, j))).collect();
    let values: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (mut sum, mut count) = (0.0, 0usize);
            for (x, (_, pa, na)) in layers[i].iter().enumerate() {
                let start = if i == j { x + 1 } else { 0 };
                for (_, pb, nb) in &layers[j][start..] {
                    sum += (dot(pa, pb) / (na * nb)).min(1.0);
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    let mut entries = vec![vec![None; l]; l];
    for (&(i, j), v) in pairs.iter().zip(values) {
        entries[i][j] = v;
        entries[j][i] = v;
    }
    SimilarityMatrix {
        entries,
        excluded_entities,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketPortfolio {
    pub weights: Portfolio,
    /// Distinct assets left out for lack of a market cap.
    pub missing_caps: usize,
}

/// Capitalisation weights over all distinct assets with a known cap.
pub fn market_portfolio(holdings: &HoldingsTable) -> Result<MarketPortfolio> {
    let mut caps: BTreeMap<&str, Option<f64>> = BTreeMap::new();
    for p in holdings.positions() {
        let slot = caps.entry(p.asset_id.as_str()).or_insert(None);
        if slot.is_none() {
            *slot = p.market_cap;
        }
    }
    let total: f64 = caps.values().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::InsufficientData("no market caps available".into()));
    }
    Ok(MarketPortfolio {
        weights: caps
            .iter()
            .filter_map(|(a, c)| c.map(|c| (a.to_string(), c / total)))
            .collect(),
        missing_caps: caps.values().filter(|c| c.is_none()).count(),
    })
}

/// Mean similarity of each layer's portfolios to the market portfolio.
pub fn market_similarity(
    partition: &LayerPartition,
    holdings: &HoldingsTable,
    market: &MarketPortfolio,
) -> Vec<Option<f64>> {
    let book = portfolios(holdings);
    let (layers, _) = layer_portfolios(partition, &book);
    let nm = norm(&market.weights);
    layers
        .iter()
        .map(|members| {
            let sims: Vec<f64> = members
                .iter()
                .map(|(_, p, n)| (dot(p, &market.weights) / (n * nm)).min(1.0))
                .collect();
            (!sims.is_empty()).then(|| mean(&sims))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UbiquityRow {
    pub asset_id: String,
    pub rank: usize,
    pub ubiquity: usize,
    pub market_cap: Option<f64>,
}

/// Assets held (weight > 0) by at least one portfolio, most ubiquitous first,
/// ties broken by asset id.
pub fn ubiquity_ranking(holdings: &HoldingsTable) -> Vec<UbiquityRow> {
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    let mut caps: BTreeMap<&str, f64> = BTreeMap::new();
    for p in holdings.positions() {
        if let Some(c) = p.market_cap {
            caps.entry(p.asset_id.as_str()).or_insert(c);
        }
        if p.weight > 0.0 {
            *count.entry(p.asset_id.as_str()).or_default() += 1;
        }
    }
    let mut rows: Vec<(&str, usize)> = count.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (a, n))| UbiquityRow {
            asset_id: a.to_string(),
            rank: i + 1,
            ubiquity: n,
            market_cap: caps.get(a).copied(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjacencyMatrices {
    /// Layer × asset, 1 where any member of the layer holds the asset.
    pub m_bin: Vec<Vec<u8>>,
    /// Layer × asset, fraction of the layer's members holding the asset.
    pub m_frac: Vec<Vec<f64>>,
    pub holding_order: Vec<String>,
    /// 1-based layers without members; their rows are zero.
    pub empty_layers: Vec<usize>,
}

pub fn adjacency(partition: &LayerPartition, holdings: &HoldingsTable) -> AdjacencyMatrices {
    let ranking = ubiquity_ranking(holdings);
    let column: BTreeMap<&str, usize> = ranking
        .iter()
        .map(|r| (r.asset_id.as_str(), r.rank - 1))
        .collect();
    let mut held: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for p in holdings.positions().iter().filter(|p| p.weight > 0.0) {
        held.entry(p.entity_id.as_str())
            .or_default()
            .push(column[p.asset_id.as_str()]);
    }
    let members = partition.members();
    let h = ranking.len();
    let mut m_frac = Vec::with_capacity(members.len());
    let mut empty_layers = Vec::new();
    for (i, ids) in members.iter().enumerate() {
        let mut row = vec![0.0; h];
        for id in ids {
            for &c in held.get(id).map_or(&[][..], Vec::as_slice) {
                row[c] += 1.0;
            }
        }
        if ids.is_empty() {
            empty_layers.push(i + 1);
        } else {
            row.iter_mut().for_each(|v| *v /= ids.len() as f64);
        }
        m_frac.push(row);
    }
    let m_bin = m_frac
        .iter()
        .map(|r| r.iter().map(|&v| u8::from(v > 0.0)).collect())
        .collect();
    AdjacencyMatrices {
        m_bin,
        m_frac,
        holding_order: ranking.into_iter().map(|r| r.asset_id).collect(),
        empty_layers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    /// Exponent α of the CCDF x^-α, i.e. density ∝ 1/x^(α+1).
    pub alpha: f64,
    pub stderr: f64,
    pub xmin: f64,
    pub n: usize,
}

/// Continuous power-law MLE above the sample minimum.
pub fn fit_power_law(values: &[f64]) -> Result<PowerLawFit> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs >= 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("power-law fit needs positive values"));
    }
    let xmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let s: f64 = values.iter().map(|v| (v / xmin).ln()).sum();
    if !(s > 0.0) {
        return Err(Error::Degenerate("all values equal".into()));
    }
    let n = values.len();
    let alpha = n as f64 / s;
    Ok(PowerLawFit {
        alpha,
        stderr: alpha / (n as f64).sqrt(),
        xmin,
        n,
    })
}

/// Power law of the caps of assets ranked beyond `rank_threshold` by ubiquity.
pub fn ubiquity_cap_fit(holdings: &HoldingsTable, rank_threshold: usize) -> Result<PowerLawFit> {
    let caps: Vec<f64> = ubiquity_ranking(holdings)
        .into_iter()
        .filter(|r| r.rank > rank_threshold)
        .filter_map(|r| r.market_cap)
        .collect();
    if caps.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "need >= 100 assets with caps beyond rank {rank_threshold}, got {}",
            caps.len()
        )));
    }
    fit_power_law(&caps)
}

/// Annualised mean over annualised volatility, zero risk-free rate.
pub fn sharpe(returns: &[f64], periods_per_year: u32) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Sharpe needs >= 2 returns, got {}",
            returns.len()
        )));
    }
    if periods_per_year == 0 {
        return Err(Error::invalid("periods_per_year must be positive"));
    }
    let sd = variance_sample(returns).sqrt();
    let m = mean(returns);
    if !(sd > 1e-14 * m.abs().max(1e-300)) {
        return Err(Error::Degenerate("returns have zero variance".into()));
    }
    let ppy = f64::from(periods_per_year);
    Ok(m * ppy / (sd * ppy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityPerformance {
    pub layer: usize,
    pub sharpe: f64,
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    /// Entities with at least `MIN_OBSERVATIONS` returns.
    pub count: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

impl Distribution {
    fn of(values: &[f64]) -> Self {
        let s = sorted_copy(values);
        let q = |p: f64| (!s.is_empty()).then(|| quantile_sorted(&s, p));
        Self {
            count: s.len(),
            min: s.first().copied(),
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: s.last().copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceSummary {
    pub periods_per_year: u32,
    pub entities: BTreeMap<String, EntityPerformance>,
    pub layers: Vec<Distribution>,
    pub universe: Distribution,
    pub without_returns: usize,
    pub zero_variance: usize,
    pub short_history: usize,
}

pub fn layer_performance(
    partition: &LayerPartition,
    returns: &ReturnsTable,
    periods_per_year: u32,
) -> Result<PerformanceSummary> {
    if periods_per_year == 0 {
        return Err(Error::invalid("periods_per_year must be positive"));
    }
    let mut entities = BTreeMap::new();
    let (mut without_returns, mut zero_variance, mut short_history) = (0, 0, 0);
    let mut per_layer = vec![Vec::new(); partition.layer_count()];
    let mut all = Vec::new();
    for (id, &layer) in &partition.assignments {
        let Some(obs) = returns.get(id) else {
            without_returns += 1;
            continue;
        };
        let r: Vec<f64> = obs.iter().map(|o| o.simple_return).collect();
        match sharpe(&r, periods_per_year) {
            Ok(s) => {
                if r.len() >= MIN_OBSERVATIONS {
                    per_layer[layer - 1].push(s);
                    all.push(s);
                } else {
                    short_history += 1;
                }
                entities.insert(
                    id.clone(),
                    EntityPerformance {
                        layer,
                        sharpe: s,
                        observations: r.len(),
                    },
                );
            }
            Err(Error::InsufficientData(_)) => without_returns += 1,
            Err(_) => zero_variance += 1,
        }
    }
    Ok(PerformanceSummary {
        periods_per_year,
        entities,
        layers: per_layer.iter().map(|v| Distribution::of(v)).collect(),
        universe: Distribution::of(&all),
        without_returns,
        zero_variance,
        short_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Position, ReturnObs, SizeSample};
    use crate::layers::assign;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn pf(items: &[(&str, f64)]) -> Portfolio {
        items.iter().map(|(a, w)| (a.to_string(), *w)).collect()
    }

    fn pos(e: &str, a: &str, w: f64, cap: Option<f64>) -> Position {
        Position {
            entity_id: e.into(),
            asset_id: a.into(),
            weight: w,
            market_cap: cap,
        }
    }

    #[test]
    fn similarity_examples() {
        let a = pf(&[("A", 3.0), ("B", 4.0)]);
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity(&a, &pf(&[("C", 1.0)])).unwrap(), 0.0);
        assert!((similarity(&a, &pf(&[("A", 4.0)])).unwrap() - 0.6).abs() < 1e-15);
        assert!(similarity(&a, &pf(&[("A", 0.0)])).is_err());
    }

    #[test]
    fn three_portfolio_diagonal() {
        // e3 loads B with cosine 0.625 so that the pairs are 0.6, 0.5 and 0.0
        let b = 0.625;
        let c = (1.0f64 - b * b).sqrt();
        let h = HoldingsTable::new(vec![
            pos("e000001", "A", 3.0, None),
            pos("e000001", "B", 4.0, None),
            pos("e000002", "A", 4.0, None),
            pos("e000003", "B", b, None),
            pos("e000003", "C", c, None),
        ])
        .unwrap();
        let book = portfolios(&h);
        let s12 = similarity(&book["e000001"], &book["e000002"]).unwrap();
        let s13 = similarity(&book["e000001"], &book["e000003"]).unwrap();
        let s23 = similarity(&book["e000002"], &book["e000003"]).unwrap();
        assert!((s12 - 0.6).abs() < 1e-12 && (s13 - 0.5).abs() < 1e-12 && s23 == 0.0);
        let p = assign(&SizeSample::from_sizes(&[1.0, 2.0, 3.0]).unwrap(), &[]).unwrap();
        let m = layer_similarity_matrix(&p, &h);
        assert!((m.entries[0][0].unwrap() - 0.366_666_666_666_666_7).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint_layers() {
        let s = SizeSample::from_sizes(&[1.0, 2.0, 10.0, 20.0]).unwrap();
        let p = assign(&s, &[5.0]).unwrap();
        let same = HoldingsTable::new(
            ["e000001", "e000002", "e000003", "e000004"]
                .iter()
                .flat_map(|e| [pos(e, "A", 1.0, None), pos(e, "B", 2.0, None)])
                .collect(),
        )
        .unwrap();
        let m = layer_similarity_matrix(&p, &same);
        assert!(m
            .entries
            .iter()
            .flatten()
            .all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
        let disjoint = HoldingsTable::new(vec![
            pos("e000001", "A", 1.0, None),
            pos("e000002", "A", 1.0, None),
            pos("e000003", "B", 1.0, None),
            pos("e000004", "B", 1.0, None),
        ])
        .unwrap();
        let m = layer_similarity_matrix(&p, &disjoint);
        assert_eq!(m.entries[0][1], Some(0.0));
        let lone = assign(&SizeSample::from_sizes(&[1.0, 10.0, 20.0]).unwrap(), &[5.0]).unwrap();
        assert_eq!(
            layer_similarity_matrix(&lone, &disjoint).entries[0][0],
            None
        );
    }

    #[test]
    fn market_weights_and_sim_m() {
        let h = HoldingsTable::new(vec![
            pos("e000001", "A", 1.0, Some(1e9)),
            pos("e000002", "B", 1.0, Some(3e9)),
            pos("e000002", "C", 1.0, None),
        ])
        .unwrap();
        let m = market_portfolio(&h).unwrap();
        assert_eq!(m.weights["A"], 0.25);
        assert_eq!(m.weights["B"], 0.75);
        assert_eq!(m.missing_caps, 1);
        let one = HoldingsTable::new(vec![pos("e000001", "A", 1.0, Some(5.0))]).unwrap();
        assert_eq!(market_portfolio(&one).unwrap().weights["A"], 1.0);
        let none = HoldingsTable::new(vec![pos("e000001", "A", 1.0, None)]).unwrap();
        assert!(market_portfolio(&none).is_err());

        let caps = [("A", 1e9), ("B", 3e9), ("C", 6e9)];
        let rows = ["e000001", "e000002", "e000003"]
            .iter()
            .flat_map(|e| {
                caps.iter()
                    .map(move |(a, c)| pos(e, a, c / 1e10 * 7.0, Some(*c)))
            })
            .collect();
        let h = HoldingsTable::new(rows).unwrap();
        let p = assign(&SizeSample::from_sizes(&[1.0, 2.0, 30.0]).unwrap(), &[10.0]).unwrap();
        let sim_m = market_similarity(&p, &h, &market_portfolio(&h).unwrap());
        assert!(sim_m.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn adjacency_fractions_and_order() {
        let s = SizeSample::from_sizes(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        let p = assign(&s, &[10.0]).unwrap();
        let h = HoldingsTable::new(vec![
            pos("e000001", "X", 1.0, None),
            pos("e000002", "X", 1.0, None),
            pos("e000003", "X", 1.0, None),
            pos("e000004", "Y", 1.0, None),
            pos("e000005", "Y", 1.0, None),
            pos("e000005", "Z", 0.0, None),
        ])
        .unwrap();
        let a = adjacency(&p, &h);
        assert_eq!(a.holding_order, vec!["X", "Y"]);
        assert_eq!(a.m_frac[0][0], 0.75);
        assert_eq!(a.m_bin[0][0], 1);
        assert_eq!(a.m_frac[1], vec![0.0, 1.0]);
        assert_eq!(a.m_bin[1], vec![0, 1]);
        let empty = assign(&s, &[10.0, 50.0]).unwrap();
        assert_eq!(adjacency(&empty, &h).empty_layers, vec![2]);
    }

    #[test]
    fn adjacency_paper_shape() {
        let n_assets = 11_643;
        let rows: Vec<Position> = (0..n_assets)
            .map(|k| {
                pos(
                    &format!("e{:06}", k % 70 + 1),
                    &format!("a{k:05}"),
                    1.0,
                    None,
                )
            })
            .collect();
        let h = HoldingsTable::new(rows).unwrap();
        let sizes: Vec<f64> = (0..70).map(|i| 10f64.powf(6.0 + i as f64 / 10.0)).collect();
        let p = assign(
            &SizeSample::from_sizes(&sizes).unwrap(),
            &[9e6, 38e6, 150e6, 430e6, 1500e6, 5000e6],
        )
        .unwrap();
        let a = adjacency(&p, &h);
        assert_eq!(a.m_frac.len(), 7);
        assert!(a.m_frac.iter().all(|r| r.len() == n_assets));
    }

    #[test]
    fn ubiquity_ties_by_id() {
        let h = HoldingsTable::new(vec![
            pos("e1", "B", 1.0, None),
            pos("e1", "A", 1.0, None),
            pos("e2", "C", 1.0, None),
            pos("e2", "A", 1.0, None),
        ])
        .unwrap();
        let r = ubiquity_ranking(&h);
        let ids: Vec<&str> = r.iter().map(|r| r.asset_id.as_str()).collect();
        assert_eq!(ids, vec!["A", "B", "C"]);
        assert_eq!(r[0].ubiquity, 2);
    }

    #[test]
    fn power_law_errors() {
        assert!(fit_power_law(&[2.0; 200]).is_err());
        let h = HoldingsTable::new(vec![pos("e1", "A", 1.0, Some(1.0))]).unwrap();
        assert!(matches!(
            ubiquity_cap_fit(&h, 500),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn sharpe_examples() {
        let alt: Vec<f64> = (0..252)
            .map(|i| if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        assert!(sharpe(&alt, 252).unwrap().abs() < 0.2);
        assert!(sharpe(&[0.01; 50], 252).is_err());
        // mean 0.04 %, sd 1 % exactly
        let r: Vec<f64> = (0..252)
            .map(|i| 0.0004 + if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        let sd = variance_sample(&r).sqrt();
        let want = 0.0004 * 252.0 / (sd * 252f64.sqrt());
        assert!((sharpe(&r, 252).unwrap() - want).abs() < 1e-12);
        assert!((0.0004f64 * 252.0 / (0.01 * 252f64.sqrt()) - 0.635).abs() < 1e-3);
    }

    fn dated(r: &[f64]) -> Vec<ReturnObs> {
        let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        r.iter()
            .enumerate()
            .map(|(i, &x)| ReturnObs {
                date: d0 + chrono::Days::new(i as u64),
                simple_return: x,
            })
            .collect()
    }

    #[test]
    fn layer_medians_scale_with_mean() {
        let s = SizeSample::from_sizes(&[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let p = assign(&s, &[5.0]).unwrap();
        let base: Vec<f64> = (0..60)
            .map(|i| if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        let mut series = BTreeMap::new();
        for (k, id) in [
            "e000001", "e000002", "e000003", "e000004", "e000005", "e000006",
        ]
        .iter()
        .enumerate()
        {
            let mu = if k < 3 { 0.002 } else { 0.001 };
            series.insert(
                id.to_string(),
                dated(&base.iter().map(|b| b + mu).collect::<Vec<_>>()),
            );
        }
        let perf = layer_performance(&p, &ReturnsTable::new(series).unwrap(), 252).unwrap();
        let (a, b) = (
            perf.layers[0].median.unwrap(),
            perf.layers[1].median.unwrap(),
        );
        assert!((a / b - 2.0).abs() < 1e-9);
        assert_eq!(perf.universe.count, 6);
    }

    #[test]
    fn short_and_missing_histories() {
        let s = SizeSample::from_sizes(&[1.0, 2.0, 3.0]).unwrap();
        let p = assign(&s, &[]).unwrap();
        let mut series = BTreeMap::new();
        series.insert("e000001".to_string(), dated(&[0.01, -0.02, 0.03]));
        series.insert("e000002".to_string(), dated(&[0.01; 40]));
        let perf = layer_performance(&p, &ReturnsTable::new(series).unwrap(), 252).unwrap();
        assert_eq!(perf.short_history, 1);
        assert_eq!(perf.zero_variance, 1);
        assert_eq!(perf.without_returns, 1);
        assert_eq!(perf.layers[0].count, 0);
        assert!(perf.layers[0].median.is_none());
    }

    fn arb_portfolio() -> impl Strategy<Value = Portfolio> {
        prop::collection::btree_map("[A-H]", 0.0f64..10.0, 1..8)
            .prop_filter("needs a positive weight", |p| p.values().any(|w| *w > 0.0))
    }

    proptest! {
        #[test]
        fn similarity_properties(a in arb_portfolio(), b in arb_portfolio(), c in 0.01f64..100.0) {
            let ab = similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, similarity(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            let ca: Portfolio = a.iter().map(|(k, w)| (k.clone(), w * c)).collect();
            prop_assert!((similarity(&a, &ca).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn duplicating_members_keeps_fractions(n in 1usize..6, seed in 0u64..100) {
            let mut rows = Vec::new();
            let mut dup = Vec::new();
            for e in 0..n {
                for a in 0..4u64 {
                    if (seed >> ((e as u64 * 4 + a) % 64)) & 1 == 1 || a == 0 {
                        rows.push(pos(&format!("e{e}"), &format!("a{a}"), 1.0, None));
                        dup.push(pos(&format!("e{e}"), &format!("a{a}"), 1.0, None));
                        dup.push(pos(&format!("f{e}"), &format!("a{a}"), 1.0, None));
                    }
                }
            }
            let ids: Vec<String> = (0..n).map(|e| format!("e{e}")).collect();
            let both: Vec<String> = ids.iter().cloned().chain((0..n).map(|e| format!("f{e}"))).collect();
            let mk = |ids: &[String]| {
                let entries = ids.iter().map(|id| crate::dataio::SizeEntry { entity_id: id.clone(), size: 1.0 }).collect();
                assign(&SizeSample::new(entries).unwrap(), &[]).unwrap()
            };
            let a = adjacency(&mk(&ids), &HoldingsTable::new(rows).unwrap());
            let b = adjacency(&mk(&both), &HoldingsTable::new(dup).unwrap());
            prop_assert_eq!(a.m_frac, b.m_frac);
        }

        #[test]
        fn sharpe_scale_invariant(r in prop::collection::vec(-0.05f64..0.05, 3..100), c in 0.1f64..10.0) {
            if let Ok(s) = sharpe(&r, 252) {
                let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
                prop_assert!((sharpe(&scaled, 252).unwrap() - s).abs() < 1e-9 * s.abs().max(1.0));
            }
        }
    }
}
