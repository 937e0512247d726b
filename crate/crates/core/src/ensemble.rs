//! Serial two-learner ensemble.
//!
//! Stage 1 trains an LSTM on per-symbol sequences of annual ratio vectors and
//! predicts each year's closing price. Stage 2 broadcasts those predictions
//! onto the daily calendar as an extra feature (`l1_pred`) and trains a
//! second LSTM on windows of the nine daily features.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ingest::{AnnualFrame, DailyFrame};
use crate::lstm::{lstm_predict, lstm_train, LstmError, LstmParams, LstmTrainConfig, SequenceData};
use crate::nn::Matrix;
use crate::preprocess::{apply_normalize, build_datasets, DatasetPair, NormStats, PreprocessError, SplitSpec};

pub const DAILY_FEATURES: [&str; 8] = ["open", "high", "low", "close", "volume", "macd", "signal", "rsi"];
pub const L1_PRED_COLUMN: &str = "l1_pred";
pub const TARGET_COLUMN: &str = "close";

pub fn daily_features() -> Vec<String> {
    DAILY_FEATURES.iter().map(|s| s.to_string()).collect()
}

/// The eight daily features followed by the annual learner's prediction.
pub fn ensemble_features() -> Vec<String> {
    let mut f = daily_features();
    f.push(L1_PRED_COLUMN.to_string());
    f
}

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("no annual prediction for {}", format_gaps(.0))]
    Gaps(Vec<(String, i32)>),
    #[error("symbol not in model: {0}")]
    UnknownSymbol(String),
    #[error("no symbol has enough annual history to train on")]
    NoSymbols,
    #[error("window has {got} rows, model needs {need}")]
    ShortWindow { got: usize, need: usize },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<EnsembleError>,
    },
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

fn format_gaps(gaps: &[(String, i32)]) -> String {
    gaps.iter()
        .map(|(s, y)| format!("({s}, {y})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl EnsembleError {
    fn at_stage(self, stage: u8) -> Self {
        EnsembleError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Days of year Y receive the prediction for year Y. This looks ahead:
    /// the year-Y prediction is built from ratios published after year end.
    #[default]
    SameYear,
    /// Days of year Y receive the prediction for year Y − 1.
    Lagged,
}

/// Maps daily dates onto annual prediction-table keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentRule {
    pub mode: AlignmentMode,
    /// Years outside the table's coverage reuse the nearest covered year
    /// instead of failing.
    pub clamp_to_coverage: bool,
}

impl Default for AlignmentRule {
    fn default() -> Self {
        Self {
            mode: AlignmentMode::SameYear,
            clamp_to_coverage: true,
        }
    }
}

impl AlignmentRule {
    pub fn year_for(&self, date: NaiveDate) -> i32 {
        match self.mode {
            AlignmentMode::SameYear => date.year(),
            AlignmentMode::Lagged => date.year() - 1,
        }
    }
}

/// Normalized learner-1 predictions keyed by symbol then year.
///
/// Stored on disk as a flat list of entries, since integer map keys do not
/// survive JSON inside tagged enums.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<TableEntry>", from = "Vec<TableEntry>")]
pub struct PredictionTable {
    pub entries: BTreeMap<String, BTreeMap<i32, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub symbol: String,
    pub year: i32,
    pub value: f64,
}

impl From<PredictionTable> for Vec<TableEntry> {
    fn from(table: PredictionTable) -> Self {
        table
            .entries
            .into_iter()
            .flat_map(|(symbol, years)| {
                years.into_iter().map(move |(year, value)| TableEntry {
                    symbol: symbol.clone(),
                    year,
                    value,
                })
            })
            .collect()
    }
}

impl From<Vec<TableEntry>> for PredictionTable {
    fn from(entries: Vec<TableEntry>) -> Self {
        let mut t = PredictionTable::default();
        for e in entries {
            t.insert(&e.symbol, e.year, e.value);
        }
        t
    }
}

impl PredictionTable {
    pub fn insert(&mut self, symbol: &str, year: i32, value: f64) {
        self.entries.entry(symbol.to_string()).or_default().insert(year, value);
    }

    pub fn get(&self, symbol: &str, year: i32) -> Option<f64> {
        self.entries.get(symbol)?.get(&year).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value for `date` under `rule`, or the missing key.
    pub fn lookup(&self, symbol: &str, date: NaiveDate, rule: &AlignmentRule) -> Result<f64, (String, i32)> {
        let year = rule.year_for(date);
        let gap = || (symbol.to_string(), year);
        let years = self.entries.get(symbol).ok_or_else(gap)?;
        if let Some(v) = years.get(&year) {
            return Ok(*v);
        }
        if !rule.clamp_to_coverage {
            return Err(gap());
        }
        let (first, last) = match (years.first_key_value(), years.last_key_value()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(gap()),
        };
        if year < *first.0 {
            Ok(*first.1)
        } else if year > *last.0 {
            Ok(*last.1)
        } else {
            Err(gap())
        }
    }
}

/// Adds or overwrites the `l1_pred` column. Every gap is reported at once.
pub fn inject_feature(
    daily: &mut DailyFrame,
    table: &PredictionTable,
    rule: &AlignmentRule,
) -> Result<(), EnsembleError> {
    let mut values = Vec::with_capacity(daily.len());
    let mut gaps: Vec<(String, i32)> = Vec::new();
    for &d in &daily.dates {
        match table.lookup(&daily.symbol, d, rule) {
            Ok(v) => values.push(v),
            Err(gap) => {
                if !gaps.contains(&gap) {
                    gaps.push(gap);
                }
                values.push(f64::NAN);
            }
        }
    }
    if !gaps.is_empty() {
        return Err(EnsembleError::Gaps(gaps));
    }
    daily.set_column(L1_PRED_COLUMN, values);
    Ok(())
}

/// Per-symbol close statistics from the training rows of each daily frame.
pub fn close_stats(
    daily: &BTreeMap<String, DailyFrame>,
    split: &SplitSpec,
) -> Result<BTreeMap<String, NormStats>, PreprocessError> {
    let names = vec![TARGET_COLUMN.to_string()];
    let mut out = BTreeMap::new();
    for (symbol, frame) in daily {
        let close = frame
            .column(TARGET_COLUMN)
            .ok_or_else(|| PreprocessError::MissingColumn(TARGET_COLUMN.into()))?;
        let train: Vec<f64> = frame
            .dates
            .iter()
            .zip(close)
            .filter(|(d, _)| split.in_train(**d))
            .map(|(_, &c)| c)
            .collect();
        if train.is_empty() {
            continue;
        }
        out.insert(symbol.clone(), NormStats::fit(&names, &[&train])?);
    }
    Ok(out)
}

/// Stage-1 result. Stage 2 cannot be built without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner1Output {
    pub params: LstmParams,
    pub ratio_names: Vec<String>,
    /// Pooled across symbols, fitted on training years.
    pub ratio_stats: NormStats,
    pub table: PredictionTable,
    /// Symbols with fewer than two years of fundamentals.
    pub excluded: Vec<String>,
    /// Longest ratio history fed to the learner; `None` uses the full prefix.
    pub max_years: Option<usize>,
}

impl Learner1Output {
    fn sequence(&self, rows: &[Vec<f64>], k: usize) -> Result<Matrix, EnsembleError> {
        let start = self.max_years.map_or(0, |m| (k + 1).saturating_sub(m));
        Ok(Matrix::from_rows(&rows[start..=k]).map_err(LstmError::from)?)
    }

    fn normalized_rows(&self, frame: &AnnualFrame) -> Vec<Vec<f64>> {
        frame
            .matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(c, &x)| self.ratio_stats.normalize_value(c, x))
                    .collect()
            })
            .collect()
    }

    /// Predictions for every year of `frame`, each from the prefix ending at that year.
    pub fn predict_frame(&self, frame: &AnnualFrame) -> Result<Vec<(i32, f64)>, EnsembleError> {
        let rows = self.normalized_rows(frame);
        let mut out = Vec::with_capacity(rows.len());
        for k in 0..rows.len() {
            let seq = self.sequence(&rows, k)?;
            out.push((frame.years[k], lstm_predict(&self.params, &seq)?));
        }
        Ok(out)
    }
}

/// Trains the annual learner.
///
/// Each sample is the ratio sequence of one symbol from its first year (or
/// from `max_years` back) up to year Y, and the target is that symbol's year-Y closing price normalized by
/// `target_stats`. Only years up to `train_until_year` produce samples; the
/// table nevertheless covers every year of every included symbol.
pub fn train_learner1(
    annual: &BTreeMap<String, AnnualFrame>,
    target_stats: &BTreeMap<String, NormStats>,
    train_until_year: Option<i32>,
    max_years: Option<usize>,
    config: &LstmTrainConfig,
) -> Result<Learner1Output, EnsembleError> {
    let mut excluded = Vec::new();
    let mut included: Vec<&AnnualFrame> = Vec::new();
    for (symbol, frame) in annual {
        if frame.len() < 2 {
            log::warn!(
                "excluding {symbol} from the annual learner: {} year(s) of fundamentals",
                frame.len()
            );
            excluded.push(symbol.clone());
        } else if !target_stats.contains_key(symbol) {
            log::warn!("excluding {symbol} from the annual learner: no training closes");
            excluded.push(symbol.clone());
        } else {
            included.push(frame);
        }
    }
    let Some(first) = included.first() else {
        return Err(EnsembleError::NoSymbols);
    };
    let ratio_names = first.ratio_names.clone();

    let fit_cols: Vec<Vec<f64>> = (0..ratio_names.len())
        .map(|c| {
            included
                .iter()
                .flat_map(|f| {
                    f.matrix
                        .iter()
                        .zip(&f.years)
                        .filter(|(_, y)| train_until_year.is_none_or(|t| **y <= t))
                        .map(move |(row, _)| row[c])
                })
                .collect()
        })
        .collect();
    let fit_refs: Vec<&[f64]> = fit_cols.iter().map(Vec::as_slice).collect();
    let ratio_stats = NormStats::fit(&ratio_names, &fit_refs)?;

    let mut out = Learner1Output {
        params: LstmParams::zeros(ratio_names.len(), config.hidden_size),
        ratio_names,
        ratio_stats,
        table: PredictionTable::default(),
        excluded,
        max_years,
    };

    let mut data = SequenceData::default();
    for frame in &included {
        let stats = &target_stats[&frame.symbol];
        let rows = out.normalized_rows(frame);
        for k in 0..frame.len() {
            let year = frame.years[k];
            let close = frame.target_close[k];
            if train_until_year.is_some_and(|t| year > t) || !close.is_finite() {
                continue;
            }
            data.push(out.sequence(&rows, k)?, stats.normalize_value(0, close));
        }
    }
    if data.inputs.is_empty() {
        return Err(EnsembleError::NoSymbols);
    }
    let (params, history) = lstm_train(&data, config)?;
    log::info!(
        "annual learner: {} samples, loss {:.6} -> {:.6}",
        data.inputs.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    out.params = params;
    for frame in &included {
        for (year, pred) in out.predict_frame(frame)? {
            out.table.insert(&frame.symbol, year, pred);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub learner1: LstmTrainConfig,
    /// Cap on the annual sequence length; unset feeds every year so far.
    pub annual_window: Option<usize>,
    pub learner2: LstmTrainConfig,
    pub window_length: usize,
    pub alignment: AlignmentRule,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            learner1: LstmTrainConfig {
                hidden_size: 20,
                ..LstmTrainConfig::default()
            },
            annual_window: None,
            learner2: LstmTrainConfig {
                hidden_size: 200,
                ..LstmTrainConfig::default()
            },
            window_length: 22,
            alignment: AlignmentRule::default(),
        }
    }
}

/// Everything needed to predict from raw daily rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub learner1: Learner1Output,
    pub learner2: LstmParams,
    pub feature_names: Vec<String>,
    pub window_length: usize,
    pub alignment: AlignmentRule,
    /// Learner-2 stats per symbol, fitted on training rows.
    pub daily_stats: BTreeMap<String, NormStats>,
}

/// Daily frames with `l1_pred` injected, ready for windowing.
pub fn inject_all(
    daily: &BTreeMap<String, DailyFrame>,
    learner1: &Learner1Output,
    rule: &AlignmentRule,
) -> Result<BTreeMap<String, DailyFrame>, EnsembleError> {
    let mut out = BTreeMap::new();
    let mut gaps = Vec::new();
    for (symbol, frame) in daily {
        if !learner1.table.entries.contains_key(symbol) {
            log::warn!("{symbol} has no annual predictions; left out of the ensemble");
            continue;
        }
        let mut f = frame.clone();
        match inject_feature(&mut f, &learner1.table, rule) {
            Ok(()) => {
                out.insert(symbol.clone(), f);
            }
            Err(EnsembleError::Gaps(g)) => gaps.extend(g),
            Err(e) => return Err(e),
        }
    }
    if !gaps.is_empty() {
        return Err(EnsembleError::Gaps(gaps));
    }
    Ok(out)
}

/// Stage-2 windows: train and test datasets of the nine features.
pub fn learner2_datasets(
    daily: &BTreeMap<String, DailyFrame>,
    learner1: &Learner1Output,
    config: &EnsembleConfig,
    split: &SplitSpec,
) -> Result<DatasetPair, EnsembleError> {
    let injected = inject_all(daily, learner1, &config.alignment)?;
    if injected.is_empty() {
        return Err(EnsembleError::NoSymbols);
    }
    Ok(build_datasets(
        &injected,
        &ensemble_features(),
        TARGET_COLUMN,
        config.window_length,
        split,
    )?)
}

/// Stage 2 given a finished stage 1.
pub fn train_learner2(
    daily: &BTreeMap<String, DailyFrame>,
    learner1: Learner1Output,
    config: &EnsembleConfig,
    split: &SplitSpec,
) -> Result<(EnsembleModel, DatasetPair), EnsembleError> {
    let data = learner2_datasets(daily, &learner1, config, split)?;
    let (params, history) = lstm_train(&data.train, &config.learner2)?;
    log::info!(
        "daily learner: {} windows, loss {:.6} -> {:.6}",
        data.train.inputs.len(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    let model = EnsembleModel {
        learner1,
        learner2: params,
        feature_names: ensemble_features(),
        window_length: config.window_length,
        alignment: config.alignment,
        daily_stats: data.train.stats.clone(),
    };
    Ok((model, data))
}

/// Both stages in order. Errors carry the stage number.
pub fn train_ensemble(
    daily: &BTreeMap<String, DailyFrame>,
    annual: &BTreeMap<String, AnnualFrame>,
    config: &EnsembleConfig,
    split: &SplitSpec,
) -> Result<(EnsembleModel, DatasetPair), EnsembleError> {
    let targets = close_stats(daily, split).map_err(|e| EnsembleError::from(e).at_stage(1))?;
    let learner1 = train_learner1(
        annual,
        &targets,
        Some(split.last_complete_train_year()),
        config.annual_window,
        &config.learner1,
    )
    .map_err(|e| e.at_stage(1))?;
    train_learner2(daily, learner1, config, split).map_err(|e| e.at_stage(2))
}

impl EnsembleModel {
    /// Normalized learner-2 input for the last `window_length` rows of `recent`.
    pub fn input_window(&self, recent: &DailyFrame) -> Result<Matrix, EnsembleError> {
        let stats = self
            .daily_stats
            .get(&recent.symbol)
            .ok_or_else(|| EnsembleError::UnknownSymbol(recent.symbol.clone()))?;
        let t = self.window_length;
        if recent.len() < t {
            return Err(EnsembleError::ShortWindow {
                got: recent.len(),
                need: t,
            });
        }
        let mut frame = recent.slice(recent.len() - t..recent.len());
        inject_feature(&mut frame, &self.learner1.table, &self.alignment)?;
        let z = apply_normalize(&frame, stats)?;
        let cols = self
            .feature_names
            .iter()
            .map(|n| z.column(n).ok_or_else(|| PreprocessError::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix::from_fn(t, cols.len(), |r, c| cols[c][r]))
    }

    /// Next-day close in currency units after the last row of `recent`.
    pub fn predict_next_close(&self, recent: &DailyFrame) -> Result<f64, EnsembleError> {
        let x = self.input_window(recent)?;
        let z = lstm_predict(&self.learner2, &x)?;
        let stats = &self.daily_stats[&recent.symbol];
        Ok(stats.denormalize_value(stats.index(TARGET_COLUMN)?, z))
    }
}
