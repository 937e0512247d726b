//! From assembled frames to model-ready data: daily imputation, indicator
//! columns, annual imputation, and a summary of what happened.
//!
//! Imputation runs before the indicators because the EMA and RSI recurrences
//! cannot step over a missing close.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::indicators::{append_indicators, IndicatorError, IndicatorParams};
use crate::ingest::{AnnualFrame, Assembled, DailyFrame, PRICE_COLUMNS};
use crate::preprocess::{impute_annual, impute_daily, ImputeStrategy, PreprocessError, SplitSpec};

/// Per-symbol split sizes reported for the reference dataset.
pub const REFERENCE_TRAIN_ROWS: usize = 1408;
pub const REFERENCE_TEST_ROWS: usize = 352;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{symbol}: {source}")]
    Indicators {
        symbol: String,
        #[source]
        source: IndicatorError,
    },
    #[error("{context}: {source}")]
    Preprocess {
        context: String,
        #[source]
        source: PreprocessError,
    },
    #[error("no symbol has rows in the training range")]
    NoTrainingData,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub indicators: IndicatorParams,
    pub impute: ImputeStrategy,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolCounts {
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub symbols: usize,
    pub dropped: Vec<(String, String)>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub per_symbol: BTreeMap<String, SymbolCounts>,
    /// Percentage of missing cells per column before imputation.
    pub missing_percent: BTreeMap<String, f64>,
    pub warmup_rows: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub daily: BTreeMap<String, DailyFrame>,
    pub annual: BTreeMap<String, AnnualFrame>,
    pub ratio_names: Vec<String>,
    pub summary: DataSummary,
}

fn missing_share(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn prepare(assembled: Assembled, ratio_names: &[String], cfg: &PrepareConfig) -> Result<Prepared, PipelineError> {
    cfg.split.validate().map_err(|source| PipelineError::Preprocess {
        context: "split".into(),
        source,
    })?;
    cfg.indicators.validate().map_err(|source| PipelineError::Indicators {
        symbol: "config".into(),
        source,
    })?;
    let Assembled {
        daily: raw_daily,
        mut annual,
        dropped,
    } = assembled;
    let mut dropped: Vec<(String, String)> = dropped.into_iter().map(|(s, r)| (s, r.to_string())).collect();

    let price_cols: Vec<String> = PRICE_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut missing = vec![0usize; price_cols.len()];
    let mut total_daily = 0usize;
    let mut daily = BTreeMap::new();
    let mut warmup_rows = 0usize;
    for (symbol, mut frame) in raw_daily {
        total_daily += frame.len();
        for (c, name) in price_cols.iter().enumerate() {
            missing[c] += frame.column(name).unwrap().iter().filter(|v| !v.is_finite()).count();
        }
        let fit: Vec<bool> = frame.dates.iter().map(|&d| cfg.split.in_train(d)).collect();
        if !fit.iter().any(|&b| b) {
            log::warn!("dropping {symbol}: no rows in the training range");
            dropped.push((symbol, "no training rows".into()));
            continue;
        }
        impute_daily(&mut frame, &price_cols, Some(&fit), cfg.impute).map_err(|source| PipelineError::Preprocess {
            context: format!("imputing {symbol}"),
            source,
        })?;
        match append_indicators(&mut frame, &cfg.indicators) {
            Ok(w) => warmup_rows = warmup_rows.max(w),
            Err(IndicatorError::NeverDefined(col)) => {
                log::warn!("dropping {symbol}: {col} never defined on {} rows", frame.len());
                dropped.push((symbol, format!("too short for {col}")));
                continue;
            }
            Err(source) => return Err(PipelineError::Indicators { symbol, source }),
        }
        daily.insert(symbol, frame);
    }
    if daily.is_empty() {
        return Err(PipelineError::NoTrainingData);
    }
    annual.retain(|s, _| daily.contains_key(s));

    let mut missing_percent = BTreeMap::new();
    for (c, name) in price_cols.iter().enumerate() {
        missing_percent.insert(name.clone(), missing_share(missing[c], total_daily));
    }
    let annual_rows: usize = annual.values().map(AnnualFrame::len).sum();
    for (c, name) in ratio_names.iter().enumerate() {
        let n = annual
            .values()
            .flat_map(|f| f.matrix.iter())
            .filter(|row| !row[c].is_finite())
            .count();
        missing_percent.insert(name.clone(), missing_share(n, annual_rows));
    }
    impute_annual(&mut annual, Some(cfg.split.last_complete_train_year()), cfg.impute).map_err(|source| {
        PipelineError::Preprocess {
            context: "imputing fundamentals".into(),
            source,
        }
    })?;

    let mut per_symbol = BTreeMap::new();
    for (symbol, frame) in &daily {
        per_symbol.insert(
            symbol.clone(),
            SymbolCounts {
                train_rows: frame.dates.iter().filter(|&&d| cfg.split.in_train(d)).count(),
                test_rows: frame.dates.iter().filter(|&&d| cfg.split.in_test(d)).count(),
            },
        );
    }
    let train_rows = per_symbol.values().map(|c| c.train_rows).sum();
    let test_rows = per_symbol.values().map(|c| c.test_rows).sum();
    let notes = vec![split_note(&per_symbol)];
    dropped.sort();

    Ok(Prepared {
        summary: DataSummary {
            symbols: daily.len(),
            dropped,
            train_rows,
            test_rows,
            per_symbol,
            missing_percent,
            warmup_rows,
            notes,
        },
        daily,
        annual,
        ratio_names: ratio_names.to_vec(),
    })
}

/// Compares the most common per-symbol split sizes with the reference counts.
pub fn split_note(per_symbol: &BTreeMap<String, SymbolCounts>) -> String {
    let mut freq: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for c in per_symbol.values() {
        *freq.entry((c.train_rows, c.test_rows)).or_default() += 1;
    }
    let Some(((train, test), n)) = freq.into_iter().max_by_key(|&(k, n)| (n, std::cmp::Reverse(k))) else {
        return "no symbols".into();
    };
    let dt = train as i64 - REFERENCE_TRAIN_ROWS as i64;
    let ds = test as i64 - REFERENCE_TEST_ROWS as i64;
    format!(
        "most common per-symbol split: {train} train / {test} test rows ({n} symbols); \
         reference 1408 / 352, difference {dt:+} / {ds:+}"
    )
}

impl DataSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("symbols: {}\n", self.symbols));
        s.push_str(&format!(
            "train rows: {}\ntest rows: {}\n",
            self.train_rows, self.test_rows
        ));
        s.push_str(&format!("indicator warmup rows: {}\n", self.warmup_rows));
        for note in &self.notes {
            s.push_str(note);
            s.push('\n');
        }
        if !self.dropped.is_empty() {
            s.push_str("dropped symbols:\n");
            for (sym, why) in &self.dropped {
                s.push_str(&format!("  {sym}: {why}\n"));
            }
        }
        s.push_str("missing before imputation (%):\n");
        for (name, pct) in &self.missing_percent {
            s.push_str(&format!("  {name:<24} {pct:8.3}\n"));
        }
        s
    }
}
