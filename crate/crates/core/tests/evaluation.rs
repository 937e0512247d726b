use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::NaiveDate;
use lstm_ensemble::evaluation::{
    emit_plot_data, evaluate_variants, forecast_series, forecast_series_inspect, rmse, Evaluation, ForecastSeries,
    RmseSet,
};
use lstm_ensemble::ingest::assemble_frames;
use lstm_ensemble::lstm::LstmTrainConfig;
use lstm_ensemble::models::{ModelConfigs, TrainedModel, Variant};
use lstm_ensemble::nn::Matrix;
use lstm_ensemble::pipeline::{prepare, PrepareConfig, Prepared};
use lstm_ensemble::preprocess::{NormStats, SplitSpec, WindowedDataset};
use lstm_ensemble::synthetic::{annual_drift, DriftConfig};
use proptest::prelude::*;

fn tiny_configs() -> ModelConfigs {
    let mut c = ModelConfigs::default();
    c.ensemble.window_length = 5;
    c.ensemble.annual_window = Some(1);
    c.ensemble.learner1 = LstmTrainConfig {
        hidden_size: 4,
        epochs: 30,
        batch_size: 8,
        ..LstmTrainConfig::default()
    };
    c.ensemble.learner2 = LstmTrainConfig {
        hidden_size: 6,
        epochs: 2,
        ..LstmTrainConfig::default()
    };
    c.mlp.epochs = 5;
    c
}

struct Fixture {
    prepared: Prepared,
    split: SplitSpec,
    eval: Evaluation,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = annual_drift(&DriftConfig {
            symbols: 4,
            constant_symbols: 1,
            seed: 21,
            ..DriftConfig::default()
        });
        let assembled = assemble_frames(&data.prices, &data.fundamentals, &data.ratio_names).unwrap();
        let cfg = PrepareConfig {
            split: data.split,
            ..PrepareConfig::default()
        };
        let prepared = prepare(assembled, &data.ratio_names, &cfg).unwrap();
        let eval = evaluate_variants(
            &prepared.daily,
            &prepared.annual,
            &tiny_configs(),
            &data.split,
            4,
            "test",
            &BTreeMap::new(),
        )
        .unwrap();
        Fixture {
            prepared,
            split: data.split,
            eval,
        }
    })
}

proptest! {
    #[test]
    fn rmse_is_symmetric_and_non_negative(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = rmse(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, rmse(&b, &a).unwrap());
    }

    #[test]
    fn normalized_rmse_is_price_rmse_over_sigma(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40),
        mean in 1.0f64..500.0,
        sigma in 0.01f64..50.0,
    ) {
        let (pred, actual): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let n = pred.len();
        let mut data = WindowedDataset::empty(&["close".to_string()], 1);
        data.inputs = vec![Matrix::zeros(1, 1); n];
        data.targets = actual;
        data.last_observed = vec![0.0; n];
        data.target_dates = vec![NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(); n];
        data.symbols = vec!["S".into(); n];
        data.stats.insert("S".into(), NormStats { names: vec!["close".into()], mean: vec![mean], std: vec![sigma] });
        let r = RmseSet::compute(&pred, &data).unwrap();
        prop_assert!((r.pooled - r.currency / sigma).abs() < 1e-9);
        prop_assert_eq!(r.pooled, r.per_symbol_mean);
    }
}

#[test]
fn report_has_four_rows_in_order_with_reference_values() {
    let report = &fixture().eval.report;
    let variants: Vec<Variant> = report.rows.iter().map(|r| r.variant).collect();
    assert_eq!(variants, Variant::ALL.to_vec());
    let refs: Vec<f64> = report.rows.iter().map(|r| r.reference_rmse).collect();
    assert_eq!(refs, vec![0.0124, 0.08, 0.0119, 0.07]);
    for row in &report.rows {
        assert!(!row.failed(), "{:?}", row.error);
        let r = row.rmse.unwrap();
        assert!(r.pooled >= 0.0 && r.per_symbol_mean >= 0.0 && r.currency >= 0.0);
    }
    assert!(report.to_text().contains("Ensemble LSTM"));
}

#[test]
fn same_seed_same_report() {
    let f = fixture();
    let again = evaluate_variants(
        &f.prepared.daily,
        &f.prepared.annual,
        &tiny_configs(),
        &f.split,
        4,
        "test",
        &BTreeMap::new(),
    )
    .unwrap();
    assert_eq!(again.report, f.eval.report);
    let mut a = Vec::new();
    let mut b = Vec::new();
    again.report.write_json(&mut a).unwrap();
    f.eval.report.write_json(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reusing_models_reproduces_the_report() {
    let f = fixture();
    let again = evaluate_variants(
        &f.prepared.daily,
        &f.prepared.annual,
        &tiny_configs(),
        &f.split,
        4,
        "test",
        &f.eval.models,
    )
    .unwrap();
    assert_eq!(again.report, f.eval.report);
}

#[test]
fn a_failing_variant_does_not_stop_the_others() {
    let f = fixture();
    let mut cfg = tiny_configs();
    cfg.mlp.batch_size = 0;
    let eval = evaluate_variants(
        &f.prepared.daily,
        &f.prepared.annual,
        &cfg,
        &f.split,
        4,
        "x",
        &f.eval
            .models
            .clone()
            .into_iter()
            .filter(|(v, _)| *v != Variant::Mlp)
            .collect(),
    )
    .unwrap();
    let mlp = eval.report.row(Variant::Mlp).unwrap();
    assert!(mlp.failed() && mlp.rmse.is_none());
    assert!(eval
        .report
        .rows
        .iter()
        .filter(|r| r.variant != Variant::Mlp)
        .all(|r| !r.failed()));
}

fn ensemble(f: &Fixture) -> &TrainedModel {
    &f.eval.models[&Variant::Ensemble]
}

#[test]
fn forecast_is_one_step_ahead_from_actual_history() {
    let f = fixture();
    let frame = f.prepared.daily["S000"].select_rows(|_, d| f.split.in_test(d));
    let model = ensemble(f);
    let t = model.window_length();
    let close = frame.column("close").unwrap().to_vec();
    let mut seen = 0;
    let series = forecast_series_inspect(model, &frame, |i, window| {
        assert_eq!(window.len(), t);
        assert_eq!(window.dates, frame.dates[i - t..i].to_vec());
        assert_eq!(window.column("close").unwrap(), &close[i - t..i]);
        seen += 1;
    })
    .unwrap();
    assert_eq!(series.len(), frame.len() - t);
    assert_eq!(seen, series.len());
    assert_eq!(series.actual, close[t..].to_vec());
    assert!(forecast_series(model, &frame.slice(0..t)).is_err());
}

#[test]
fn forecast_csv_round_trips_and_plots() {
    let f = fixture();
    let frame = f.prepared.daily["S001"].select_rows(|_, d| f.split.in_test(d));
    let series = forecast_series(ensemble(f), &frame).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, svg) = emit_plot_data(&series, &dir.path().join("S001")).unwrap();
    let back = ForecastSeries::read_csv("S001", std::fs::File::open(csv).unwrap()).unwrap();
    assert_eq!(back.dates, series.dates);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.actual), bits(&series.actual));
    assert_eq!(bits(&back.predicted), bits(&series.predicted));
    assert!(std::fs::read_to_string(svg).unwrap().contains("<polyline"));
}

#[test]
fn constant_series_forecast_matches_within_two_percent() {
    let f = fixture();
    let frame = f.prepared.daily["S004"].select_rows(|_, d| f.split.in_test(d));
    let series = forecast_series(ensemble(f), &frame).unwrap();
    for (a, p) in series.actual.iter().zip(&series.predicted) {
        assert!((a - p).abs() <= 0.02 * a, "{a} vs {p}");
    }
}
