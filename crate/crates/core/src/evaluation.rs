//! Scoring the four variants on shared test windows, the comparison report,
//! and forecast-vs-actual series for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::thread;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{AlignmentMode, TARGET_COLUMN};
use crate::ingest::{format_number, AnnualFrame, DailyFrame};
use crate::models::{
    daily_datasets, eligible_universe, test_dataset, train_variant, ModelConfigs, ModelError, TrainedModel, Variant,
};
use crate::pipeline::{split_note, SymbolCounts};
use crate::preprocess::{SplitSpec, WindowedDataset};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions, {actual} actual values")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("cannot compute RMSE of an empty series")]
    Empty,
    #[error("frame has {len} rows, need more than the window of {window}")]
    ShortFrame { len: usize, window: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(String),
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// RMSE over a test set in three aggregations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseSet {
    /// Normalized units, all windows pooled.
    pub pooled: f64,
    /// Normalized units, mean of per-symbol RMSEs.
    pub per_symbol_mean: f64,
    /// Currency units, all windows pooled.
    pub currency: f64,
}

impl RmseSet {
    pub fn compute(pred: &[f64], data: &WindowedDataset) -> Result<Self, EvalError> {
        let pooled = rmse(pred, &data.targets)?;
        let mut by_symbol: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut pred_price = Vec::with_capacity(pred.len());
        let mut actual_price = Vec::with_capacity(pred.len());
        for ((p, a), s) in pred.iter().zip(&data.targets).zip(&data.symbols) {
            let e = by_symbol.entry(s).or_default();
            e.0.push(*p);
            e.1.push(*a);
            let stats = data.stats.get(s).ok_or_else(|| ModelError::UnknownSymbol(s.clone()))?;
            let c = stats.index(TARGET_COLUMN).map_err(ModelError::from)?;
            pred_price.push(stats.denormalize_value(c, *p));
            actual_price.push(stats.denormalize_value(c, *a));
        }
        let per: Vec<f64> = by_symbol.values().map(|(p, a)| rmse(p, a)).collect::<Result<_, _>>()?;
        Ok(Self {
            pooled,
            per_symbol_mean: per.iter().sum::<f64>() / per.len() as f64,
            currency: rmse(&pred_price, &actual_price)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub label: String,
    pub reference_rmse: f64,
    pub rmse: Option<RmseSet>,
    /// Set when the variant could not be trained or scored.
    pub error: Option<String>,
}

impl VariantRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config_fingerprint: String,
    pub symbols: Vec<String>,
    pub test_windows: usize,
    /// Daily, annual, ensemble, MLP.
    pub rows: Vec<VariantRow>,
    /// Predict-last-value baseline on the same windows.
    pub naive: RmseSet,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn row(&self, variant: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "config fingerprint: {}", self.config_fingerprint);
        let _ = writeln!(
            s,
            "symbols: {}  test windows: {}",
            self.symbols.len(),
            self.test_windows
        );
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<22} {:>12} {:>12} {:>12} {:>10}",
            "model", "RMSE pooled", "RMSE/symbol", "RMSE price", "reference"
        );
        for row in &self.rows {
            match (&row.rmse, &row.error) {
                (Some(r), None) => {
                    let _ = writeln!(
                        s,
                        "{:<22} {:>12.6} {:>12.6} {:>12.6} {:>10}",
                        row.label, r.pooled, r.per_symbol_mean, r.currency, row.reference_rmse
                    );
                }
                (_, err) => {
                    let _ = writeln!(
                        s,
                        "{:<22} {:>12} {:>12} {:>12} {:>10}  failed: {}",
                        row.label,
                        "-",
                        "-",
                        "-",
                        row.reference_rmse,
                        err.as_deref().unwrap_or("no result")
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            "{:<22} {:>12.6} {:>12.6} {:>12.6} {:>10}",
            "naive (last value)", self.naive.pooled, self.naive.per_symbol_mean, self.naive.currency, "-"
        );
        if !self.notes.is_empty() {
            s.push_str("\nnotes:\n");
            for n in &self.notes {
                let _ = writeln!(s, "  - {n}");
            }
        }
        s
    }

    pub fn write_json<W: Write>(&self, mut sink: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(&mut sink, self).map_err(|e| EvalError::Parse(e.to_string()))?;
        sink.write_all(b"\n")?;
        Ok(())
    }
}

/// Report plus the models behind it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub models: BTreeMap<Variant, TrainedModel>,
}

fn same_windows(a: &WindowedDataset, b: &WindowedDataset) -> bool {
    a.targets.len() == b.targets.len()
        && a.targets
            .iter()
            .zip(&b.targets)
            .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.symbols == b.symbols
        && a.target_dates == b.target_dates
}

/// Trains (or reuses from `pretrained`) and scores all four variants on the
/// symbols every variant can handle. Variants run on separate threads; a
/// failing variant is reported and does not stop the others.
pub fn evaluate_variants(
    daily: &BTreeMap<String, DailyFrame>,
    annual: &BTreeMap<String, AnnualFrame>,
    configs: &ModelConfigs,
    split: &SplitSpec,
    seed: u64,
    config_fingerprint: &str,
    pretrained: &BTreeMap<Variant, TrainedModel>,
) -> Result<Evaluation, EvalError> {
    let mut configs = configs.clone();
    configs.reseed(seed);
    let universe = eligible_universe(daily, annual);
    let reference = daily_datasets(&universe, configs.ensemble.window_length, split)?;
    let reference = reference.test;
    if reference.targets.is_empty() {
        return Err(EvalError::Empty);
    }

    let outcomes: Vec<(Variant, Result<(TrainedModel, WindowedDataset), String>)> = thread::scope(|scope| {
        let handles: Vec<_> = Variant::ALL
            .into_iter()
            .map(|v| {
                let (universe, configs) = (&universe, &configs);
                let reuse = pretrained.get(&v).filter(|m| m.variant() == v);
                let handle = scope.spawn(move || match reuse {
                    Some(model) => {
                        log::info!("{v}: reusing saved model");
                        test_dataset(model, universe, configs, split).map(|t| (model.clone(), t))
                    }
                    None => {
                        log::info!("{v}: training");
                        train_variant(v, universe, annual, configs, split)
                    }
                });
                (v, handle)
            })
            .collect();
        handles
            .into_iter()
            .map(|(v, h)| {
                let r = match h.join() {
                    Ok(r) => r.map_err(|e| e.to_string()),
                    Err(_) => Err("training thread panicked".to_string()),
                };
                (v, r)
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut models = BTreeMap::new();
    for (v, outcome) in outcomes {
        let mut row = VariantRow {
            variant: v,
            label: v.label().to_string(),
            reference_rmse: v.reference_rmse(),
            rmse: None,
            error: None,
        };
        match outcome {
            Ok((model, test)) => {
                if !same_windows(&test, &reference) {
                    row.error = Some("test windows differ from the shared test set".into());
                } else {
                    match model
                        .predict_dataset(&test)
                        .map_err(EvalError::from)
                        .and_then(|p| RmseSet::compute(&p, &test))
                    {
                        Ok(r) => row.rmse = Some(r),
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
                models.insert(v, model);
            }
            Err(e) => row.error = Some(e),
        }
        if let Some(e) = &row.error {
            log::error!("{v} failed: {e}");
        }
        rows.push(row);
    }

    let naive = RmseSet::compute(&reference.last_observed, &reference)?;
    let mut notes = vec![
        "reference values are annotations only, not targets".to_string(),
        "the MLP baseline is trained with Adam rather than Levenberg-Marquardt; its reference figure is also quoted as 0.067"
            .to_string(),
    ];
    if configs.ensemble.alignment.mode == AlignmentMode::SameYear {
        notes.push(
            "same_year alignment lets days of year Y see the annual prediction fitted to year Y's closing price".into(),
        );
    }
    let counts: BTreeMap<String, SymbolCounts> = universe
        .iter()
        .map(|(s, f)| {
            let c = SymbolCounts {
                train_rows: f.dates.iter().filter(|d| split.in_train(**d)).count(),
                test_rows: f.dates.iter().filter(|d| split.in_test(**d)).count(),
            };
            (s.clone(), c)
        })
        .collect();
    notes.push(split_note(&counts));
    let dropped: Vec<&String> = daily.keys().filter(|s| !universe.contains_key(*s)).collect();
    if !dropped.is_empty() {
        notes.push(format!(
            "left out for lack of two years of fundamentals: {}",
            dropped.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ));
    }
    let symbols: Vec<String> = {
        let mut s = reference.symbols.clone();
        s.dedup();
        s
    };

    Ok(Evaluation {
        report: EvalReport {
            seed,
            config_fingerprint: config_fingerprint.to_string(),
            symbols,
            test_windows: reference.targets.len(),
            rows,
            naive,
            notes,
        },
        models,
    })
}

/// One-step-ahead forecasts for one symbol, in currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub symbol: String,
    pub dates: Vec<NaiveDate>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl ForecastSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["date", "actual", "predicted"])?;
        for i in 0..self.len() {
            w.write_record([
                self.dates[i].format("%Y-%m-%d").to_string(),
                format_number(self.actual[i]),
                format_number(self.predicted[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(symbol: &str, source: R) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(source);
        let mut out = ForecastSeries {
            symbol: symbol.to_string(),
            dates: Vec::new(),
            actual: Vec::new(),
            predicted: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| {
                rec.get(k)
                    .ok_or_else(|| EvalError::Parse(format!("row {}: missing field", i + 1)))
            };
            let date = NaiveDate::parse_from_str(field(0)?, "%Y-%m-%d")
                .map_err(|e| EvalError::Parse(format!("row {}: {e}", i + 1)))?;
            let num = |k: usize| -> Result<f64, EvalError> {
                field(k)?
                    .parse()
                    .map_err(|e| EvalError::Parse(format!("row {}: {e}", i + 1)))
            };
            out.dates.push(date);
            out.actual.push(num(1)?);
            out.predicted.push(num(2)?);
        }
        Ok(out)
    }

    /// Line chart of actual and predicted closes.
    pub fn to_svg(&self) -> String {
        const W: f64 = 960.0;
        const H: f64 = 420.0;
        const PAD: f64 = 60.0;
        let values = self
            .actual
            .iter()
            .chain(&self.predicted)
            .copied()
            .filter(|v| v.is_finite());
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let n = self.len().max(2) as f64;
        let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1.0);
        let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
        let line = |vals: &[f64]| {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}: forecast vs actual close</text>"#,
            W / 2.0,
            escape(&self.symbol)
        );
        let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{hi:.2}</text>"#,
            x0 - 6.0,
            y1 + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{lo:.2}</text>"#,
            x0 - 6.0,
            y0 + 4.0
        );
        if let (Some(first), Some(last)) = (self.dates.first(), self.dates.last()) {
            let _ = writeln!(
                s,
                r#"<text x="{x0}" y="{}" text-anchor="start">{first}</text>"#,
                y0 + 18.0
            );
            let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{last}</text>"#, y0 + 18.0);
        }
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
            line(&self.actual)
        );
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="#d62728" stroke-width="1.5" points="{}"/>"##,
            line(&self.predicted)
        );
        let lx = x1 - 150.0;
        let _ = writeln!(
            s,
            r##"<line x1="{lx}" y1="44" x2="{}" y2="44" stroke="#1f77b4" stroke-width="2"/><text x="{}" y="48">actual</text>"##,
            lx + 24.0,
            lx + 30.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{lx}" y1="62" x2="{}" y2="62" stroke="#d62728" stroke-width="2"/><text x="{}" y="66">predicted</text>"##,
            lx + 24.0,
            lx + 30.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Walks `frame` predicting each row from the `T` actual rows before it.
/// A frame of `N` rows yields `N − T` points.
pub fn forecast_series(model: &TrainedModel, frame: &DailyFrame) -> Result<ForecastSeries, EvalError> {
    forecast_series_inspect(model, frame, |_, _| {})
}

/// As [`forecast_series`], handing every input window to `inspect` along with
/// the index of the row it predicts.
pub fn forecast_series_inspect(
    model: &TrainedModel,
    frame: &DailyFrame,
    mut inspect: impl FnMut(usize, &DailyFrame),
) -> Result<ForecastSeries, EvalError> {
    let t = model.window_length();
    if frame.len() <= t {
        return Err(EvalError::ShortFrame {
            len: frame.len(),
            window: t,
        });
    }
    let close = frame
        .column(TARGET_COLUMN)
        .ok_or_else(|| EvalError::Parse(format!("frame has no {TARGET_COLUMN} column")))?;
    let mut out = ForecastSeries {
        symbol: frame.symbol.clone(),
        dates: Vec::with_capacity(frame.len() - t),
        actual: Vec::with_capacity(frame.len() - t),
        predicted: Vec::with_capacity(frame.len() - t),
    };
    for i in t..frame.len() {
        let window = frame.slice(i - t..i);
        inspect(i, &window);
        out.predicted.push(model.predict_next_close(&window)?);
        out.actual.push(close[i]);
        out.dates.push(frame.dates[i]);
    }
    Ok(out)
}

/// Writes `<stem>.csv` and `<stem>.svg`.
pub fn emit_plot_data(series: &ForecastSeries, stem: &Path) -> Result<(PathBuf, PathBuf), EvalError> {
    let csv_path = stem.with_extension("csv");
    let svg_path = stem.with_extension("svg");
    series.write_csv(std::fs::File::create(&csv_path)?)?;
    std::fs::write(&svg_path, series.to_svg())?;
    Ok((csv_path, svg_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn fingerprint_is_stable() {
        let a = fingerprint(&ModelConfigs::default());
        assert_eq!(a, fingerprint(&ModelConfigs::default()));
        assert_eq!(a.len(), 64);
        let mut c = ModelConfigs::default();
        c.reseed(9);
        assert_ne!(a, fingerprint(&c));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = ForecastSeries {
            symbol: "A&B".into(),
            dates: vec![
                NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(),
                NaiveDate::from_ymd_opt(2016, 1, 5).unwrap(),
            ],
            actual: vec![1.0, 2.0],
            predicted: vec![1.5, 1.5],
        };
        let svg = s.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("A&amp;B"));
    }
}
