use std::collections::BTreeMap;

use dsi_core::dataio::{self, HoldingsTable, Position, ReturnObs, ReturnsTable, SizeSample};
use dsi_core::pipeline::{self, PipelineConfig, Section, SynthConfig};
use dsi_core::Error;

fn quick(out: &std::path::Path) -> PipelineConfig {
    PipelineConfig {
        out: out.to_path_buf(),
        surrogates: 100,
        ..PipelineConfig::default()
    }
}

#[test]
fn synth_then_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let truth = pipeline::synth(&SynthConfig {
        count: 3000,
        seed: 8,
        out: dir.path().join("synth"),
        ..SynthConfig::default()
    })
    .unwrap();
    assert!(truth.log_periodic);
    assert!((truth.exponent - (2.0 + 3.0 * 0.014)).abs() < 1e-12);
    let sample = dataio::load_sizes(dir.path().join("synth/sizes.csv")).unwrap();
    assert_eq!(sample.len(), 3000);
    assert!(sample.sizes().iter().all(|&s| (1e6..=1e11).contains(&s)));

    let config = PipelineConfig {
        sizes: Some(dir.path().join("synth/sizes.csv")),
        ..quick(&dir.path().join("out"))
    };
    let report = pipeline::analyze(&config).unwrap();
    let density = report.density.ok().unwrap();
    let f = density.fundamental.as_ref().unwrap();
    assert!((f.omega - truth.predicted_omega).abs() <= 0.6, "{f:?}");
    assert!(report.layers.total == 3000);
    assert_eq!(
        report.outputs.last().map(String::as_str),
        Some("report.json")
    );
}

#[test]
fn in_memory_run_with_portfolio_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sizes: Vec<f64> = (0..400).map(|i| 1e6 * 1.02f64.powi(i)).collect();
    let sample = SizeSample::from_sizes(&sizes).unwrap();
    let mut positions = Vec::new();
    let mut series = BTreeMap::new();
    for (k, e) in sample.entries().iter().enumerate() {
        for a in 0..3 {
            positions.push(Position {
                entity_id: e.entity_id.clone(),
                asset_id: format!("a{}", (k + 5 * a) % 25),
                weight: 1.0 + a as f64,
                market_cap: Some(1e9 * (1 + (k + 5 * a) % 25) as f64),
            });
        }
        let obs = (0..35u64)
            .map(|d| ReturnObs {
                date: chrono::NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + chrono::Days::new(d),
                simple_return: 0.001 * ((k as u64 + d) % 5) as f64 - 0.0015,
            })
            .collect();
        series.insert(e.entity_id.clone(), obs);
    }
    let holdings = HoldingsTable::new(positions).unwrap();
    let returns = ReturnsTable::new(series).unwrap();
    let config = PipelineConfig {
        hq_scan: false,
        ..quick(dir.path())
    };
    let report = pipeline::run(&config, &sample, Some(&holdings), Some(&returns)).unwrap();
    let sim = report.similarity.ok().unwrap();
    let l = report.layers.layers.len();
    assert_eq!(sim.layer_matrix_percent.len(), l);
    assert!(sim
        .layer_matrix_percent
        .iter()
        .flatten()
        .flatten()
        .all(|v| (0.0..=100.0).contains(v)));
    assert!(matches!(sim.market, Section::Ok(_)));
    // 25 assets cannot support a tail fit beyond rank 500
    assert!(matches!(
        report.ubiquity.ok().unwrap().power_law,
        Section::Skipped { .. }
    ));
    assert_eq!(report.performance.ok().unwrap().universe.count, 400);
    assert!(matches!(report.density, Section::Skipped { .. }));
}

#[test]
fn config_validation_and_missing_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline::analyze(&quick(dir.path())).unwrap_err();
    assert!(err.is_input_error());
    for bad in [
        PipelineConfig {
            surrogates: 99,
            ..quick(dir.path())
        },
        PipelineConfig {
            bandwidths: vec![0.1],
            ..quick(dir.path())
        },
        PipelineConfig {
            layer_ratio: 1.0,
            ..quick(dir.path())
        },
        PipelineConfig {
            periods_per_year: 0,
            ..quick(dir.path())
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidInput(_))));
    }
    let json = r#"{"seed": 4, "omega_bins": 256}"#;
    let c: PipelineConfig = serde_json::from_str(json).unwrap();
    assert_eq!((c.seed, c.omega_bins, c.surrogates), (4, 256, 1000));
    assert!(serde_json::from_str::<PipelineConfig>(r#"{"sead": 4}"#).is_err());
}

#[test]
fn numeric_failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let sample = SizeSample::from_sizes(&[5.0; 40]).unwrap();
    let err = pipeline::run(&quick(dir.path()), &sample, None, None).unwrap_err();
    assert!(!err.is_input_error());
    assert!(err.to_string().contains("lognormal fit"), "{err}");
}
