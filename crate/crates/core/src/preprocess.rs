//! Imputation, z-score normalization, date splits and windowing.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ingest::{AnnualFrame, DailyFrame};
use crate::lstm::SequenceSet;
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("column {0} entirely missing")]
    AllMissing(String),
    #[error("column {0} not found")]
    MissingColumn(String),
    #[error("normalization stats are for columns {expected:?}, frame has {found:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("series of length {len} is too short for windows of {window} (need at least {})", .window + 1)]
    TooShort { len: usize, window: usize },
    #[error("non-finite value in column {column} at row {row}")]
    NonFinite { column: String, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeStrategy {
    #[default]
    Mean,
    /// Linear least squares on the columns that have no missing values.
    Regression,
}

/// Fills `NaN` cells column by column.
///
/// `fit_rows` selects the rows used to estimate means and regression
/// coefficients (the training range); `None` uses every row. Returns the
/// number of cells filled per column.
pub fn impute_columns(
    names: &[String],
    columns: &mut [Vec<f64>],
    fit_rows: Option<&[bool]>,
    strategy: ImputeStrategy,
) -> Result<Vec<usize>, PreprocessError> {
    let n = columns.first().map_or(0, Vec::len);
    let fit = |r: usize| fit_rows.is_none_or(|m| m[r]);
    let complete: Vec<usize> = (0..columns.len())
        .filter(|&c| columns[c].iter().all(|v| v.is_finite()))
        .collect();

    let mut filled = vec![0; columns.len()];
    let mut updates: Vec<(usize, Vec<f64>)> = Vec::new();
    for c in 0..columns.len() {
        let col = &columns[c];
        let missing: Vec<usize> = (0..n).filter(|&r| !col[r].is_finite()).collect();
        if missing.is_empty() {
            continue;
        }
        let observed: Vec<usize> = (0..n).filter(|&r| fit(r) && col[r].is_finite()).collect();
        if observed.is_empty() {
            return Err(PreprocessError::AllMissing(names[c].clone()));
        }
        let mean = observed.iter().map(|&r| col[r]).sum::<f64>() / observed.len() as f64;
        let mut out = col.clone();
        let coef = match strategy {
            ImputeStrategy::Mean => None,
            ImputeStrategy::Regression => least_squares(columns, &complete, c, &observed),
        };
        for &r in &missing {
            out[r] = match &coef {
                Some(beta) => {
                    beta[0]
                        + complete
                            .iter()
                            .zip(beta.iter().skip(1))
                            .map(|(&k, b)| b * columns[k][r])
                            .sum::<f64>()
                }
                None => mean,
            };
        }
        filled[c] = missing.len();
        updates.push((c, out));
    }
    for (c, col) in updates {
        columns[c] = col;
    }
    Ok(filled)
}

/// Minimum-norm least squares of `columns[target]` on an intercept plus the
/// covariate columns, fitted on `rows`. `None` when there is nothing to fit.
fn least_squares(columns: &[Vec<f64>], covariates: &[usize], target: usize, rows: &[usize]) -> Option<Vec<f64>> {
    if covariates.is_empty() || rows.len() < 2 {
        return None;
    }
    let p = covariates.len() + 1;
    let x = DMatrix::from_fn(rows.len(), p, |i, j| {
        if j == 0 {
            1.0
        } else {
            columns[covariates[j - 1]][rows[i]]
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| columns[target][r]));
    let beta = x.svd(true, true).solve(&y, 1e-12).ok()?;
    beta.iter()
        .all(|b| b.is_finite())
        .then(|| beta.iter().copied().collect())
}

/// Imputes the named daily columns, fitting on rows where `fit_rows` is true.
pub fn impute_daily(
    frame: &mut DailyFrame,
    column_names: &[String],
    fit_rows: Option<&[bool]>,
    strategy: ImputeStrategy,
) -> Result<Vec<usize>, PreprocessError> {
    let mut cols = column_names
        .iter()
        .map(|n| {
            frame
                .column(n)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| PreprocessError::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let filled = impute_columns(column_names, &mut cols, fit_rows, strategy)?;
    for (n, c) in column_names.iter().zip(cols) {
        frame.set_column(n, c);
    }
    Ok(filled)
}

/// Imputes ratio matrices pooled across symbols. Rows from years after
/// `fit_until_year` do not contribute to the fitted means or coefficients.
pub fn impute_annual(
    frames: &mut BTreeMap<String, AnnualFrame>,
    fit_until_year: Option<i32>,
    strategy: ImputeStrategy,
) -> Result<Vec<usize>, PreprocessError> {
    let Some(names) = frames.values().next().map(|f| f.ratio_names.clone()) else {
        return Ok(Vec::new());
    };
    let mut cols = vec![Vec::new(); names.len()];
    let mut fit = Vec::new();
    for f in frames.values() {
        for (k, row) in f.matrix.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                cols[c].push(*v);
            }
            fit.push(fit_until_year.is_none_or(|y| f.years[k] <= y));
        }
    }
    let filled = impute_columns(&names, &mut cols, Some(&fit), strategy)?;
    let mut r = 0;
    for f in frames.values_mut() {
        for row in f.matrix.iter_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = cols[c][r];
            }
            r += 1;
        }
    }
    Ok(filled)
}

/// Per-column z-score parameters with population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(names: &[String], columns: &[&[f64]]) -> Result<Self, PreprocessError> {
        let mut mean = Vec::with_capacity(names.len());
        let mut std = Vec::with_capacity(names.len());
        for (name, col) in names.iter().zip(columns) {
            if col.is_empty() {
                return Err(PreprocessError::AllMissing(name.clone()));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(PreprocessError::NonFinite {
                    column: name.clone(),
                    row,
                });
            }
            let n = col.len() as f64;
            let m0 = col.iter().sum::<f64>() / n;
            // One correction pass: removes the rounding error of the first sum,
            // which matters when the spread is tiny next to the level.
            let m = m0 + col.iter().map(|v| v - m0).sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Self {
            names: names.to_vec(),
            mean,
            std,
        })
    }

    pub fn index(&self, column: &str) -> Result<usize, PreprocessError> {
        self.names
            .iter()
            .position(|n| n == column)
            .ok_or_else(|| PreprocessError::MissingColumn(column.to_string()))
    }

    pub fn constant_columns(&self) -> Vec<&str> {
        self.names
            .iter()
            .zip(&self.std)
            .filter(|(_, s)| **s == 0.0)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn normalize_value(&self, c: usize, x: f64) -> f64 {
        if self.std[c] == 0.0 {
            0.0
        } else {
            (x - self.mean[c]) / self.std[c]
        }
    }

    pub fn denormalize_value(&self, c: usize, z: f64) -> f64 {
        z * self.std[c] + self.mean[c]
    }

    pub fn normalize(&self, values: &[f64], column: &str) -> Result<Vec<f64>, PreprocessError> {
        let c = self.index(column)?;
        Ok(values.iter().map(|&x| self.normalize_value(c, x)).collect())
    }

    pub fn denormalize(&self, values: &[f64], column: &str) -> Result<Vec<f64>, PreprocessError> {
        let c = self.index(column)?;
        Ok(values.iter().map(|&z| self.denormalize_value(c, z)).collect())
    }
}

/// Fits stats on the given columns of `frame` (which should hold training rows only).
pub fn fit_normalize(frame: &DailyFrame, columns: &[String]) -> Result<NormStats, PreprocessError> {
    let cols = columns
        .iter()
        .map(|n| frame.column(n).ok_or_else(|| PreprocessError::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    NormStats::fit(columns, &cols)
}

/// Returns a copy of `frame` with every stats column z-scored. Columns not
/// covered by `stats` are left untouched.
pub fn apply_normalize(frame: &DailyFrame, stats: &NormStats) -> Result<DailyFrame, PreprocessError> {
    if let Some(missing) = stats.names.iter().find(|n| frame.column(n).is_none()) {
        log::debug!("frame {} lacks normalized column {missing}", frame.symbol);
        return Err(PreprocessError::ColumnMismatch {
            expected: stats.names.clone(),
            found: frame.column_names(),
        });
    }
    let mut out = frame.clone();
    for (c, name) in stats.names.iter().enumerate() {
        let z = frame
            .column(name)
            .unwrap()
            .iter()
            .map(|&x| stats.normalize_value(c, x))
            .collect();
        out.set_column(name, z);
    }
    Ok(out)
}

/// Inclusive train and test date ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl Default for SplitSpec {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
        Self {
            train_start: d(2010, 1, 4),
            train_end: d(2015, 8, 7),
            test_start: d(2015, 8, 8),
            test_end: d(2016, 12, 31),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.train_start > self.train_end {
            return Err(PreprocessError::InvalidSplit("train_start after train_end".into()));
        }
        if self.test_start > self.test_end {
            return Err(PreprocessError::InvalidSplit("test_start after test_end".into()));
        }
        if self.test_start <= self.train_end {
            return Err(PreprocessError::InvalidSplit(format!(
                "test_start {} must come after train_end {}",
                self.test_start, self.train_end
            )));
        }
        Ok(())
    }

    pub fn in_train(&self, d: NaiveDate) -> bool {
        d >= self.train_start && d <= self.train_end
    }

    pub fn in_test(&self, d: NaiveDate) -> bool {
        d >= self.test_start && d <= self.test_end
    }

    /// Last calendar year whose 31 December falls inside the training range.
    pub fn last_complete_train_year(&self) -> i32 {
        let y = self.train_end.year();
        if self.train_end.month() == 12 && self.train_end.day() == 31 {
            y
        } else {
            y - 1
        }
    }
}

/// Splits by inclusive date bounds; rows outside both ranges are discarded.
pub fn split_by_date(frame: &DailyFrame, spec: &SplitSpec) -> Result<(DailyFrame, DailyFrame), PreprocessError> {
    spec.validate()?;
    let train = frame.select_rows(|_, d| spec.in_train(d));
    let test = frame.select_rows(|_, d| spec.in_test(d));
    if train.is_empty() {
        return Err(PreprocessError::EmptyPartition("train"));
    }
    if test.is_empty() {
        return Err(PreprocessError::EmptyPartition("test"));
    }
    Ok((train, test))
}

/// Supervised windows: `inputs[i]` is `T × F`, `targets[i]` the normalized
/// target column one step after the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
    /// Normalized target value on the last day inside each window.
    pub last_observed: Vec<f64>,
    pub target_dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    pub feature_names: Vec<String>,
    pub window_length: usize,
    /// Stats per symbol, keyed by symbol.
    pub stats: BTreeMap<String, NormStats>,
}

impl WindowedDataset {
    pub fn empty(feature_names: &[String], window_length: usize) -> Self {
        Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            last_observed: Vec::new(),
            target_dates: Vec::new(),
            symbols: Vec::new(),
            feature_names: feature_names.to_vec(),
            window_length,
            stats: BTreeMap::new(),
        }
    }

    /// Appends another dataset with the same feature layout.
    pub fn extend(&mut self, other: WindowedDataset) -> Result<(), PreprocessError> {
        if other.feature_names != self.feature_names || other.window_length != self.window_length {
            return Err(PreprocessError::ColumnMismatch {
                expected: self.feature_names.clone(),
                found: other.feature_names,
            });
        }
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
        self.last_observed.extend(other.last_observed);
        self.target_dates.extend(other.target_dates);
        self.symbols.extend(other.symbols);
        self.stats.extend(other.stats);
        Ok(())
    }

    /// Rows flattened time-major, for models without recurrence.
    pub fn flattened(&self) -> Vec<Vec<f64>> {
        self.inputs.iter().map(|m| m.as_slice().to_vec()).collect()
    }
}

impl SequenceSet for WindowedDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn sequence(&self, index: usize) -> &Matrix {
        &self.inputs[index]
    }
    fn target(&self, index: usize) -> f64 {
        self.targets[index]
    }
}

/// Builds stride-1 windows from a raw frame, normalizing with `stats`.
///
/// Window `i` covers rows `[i, i + T)` and its target is the normalized
/// `target` column at row `i + T`, so a frame of length `L` yields `L − T`
/// windows.
pub fn make_windows(
    frame: &DailyFrame,
    feature_names: &[String],
    window: usize,
    target: &str,
    stats: &NormStats,
) -> Result<WindowedDataset, PreprocessError> {
    if window == 0 || frame.len() < window + 1 {
        return Err(PreprocessError::TooShort {
            len: frame.len(),
            window,
        });
    }
    let normalized = apply_normalize(frame, stats)?;
    let cols = feature_names
        .iter()
        .map(|n| {
            normalized
                .column(n)
                .ok_or_else(|| PreprocessError::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (name, col) in feature_names.iter().zip(&cols) {
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(PreprocessError::NonFinite {
                column: name.clone(),
                row,
            });
        }
    }
    let y = normalized
        .column(target)
        .ok_or_else(|| PreprocessError::MissingColumn(target.to_string()))?;
    let f = feature_names.len();
    let n = frame.len() - window;
    let mut ds = WindowedDataset::empty(feature_names, window);
    for i in 0..n {
        let m = Matrix::from_fn(window, f, |t, c| cols[c][i + t]);
        ds.inputs.push(m);
        ds.targets.push(y[i + window]);
        ds.last_observed.push(y[i + window - 1]);
        ds.target_dates.push(frame.dates[i + window]);
        ds.symbols.push(frame.symbol.clone());
    }
    ds.stats.insert(frame.symbol.clone(), stats.clone());
    Ok(ds)
}

/// Train and test windows pooled over symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    /// Symbols left out because a partition was too short to window.
    pub skipped: Vec<String>,
}

/// Splits every frame, fits per-symbol stats on its training rows (features
/// plus `target`), and windows both partitions with those stats.
pub fn build_datasets(
    frames: &BTreeMap<String, DailyFrame>,
    feature_names: &[String],
    target: &str,
    window: usize,
    split: &SplitSpec,
) -> Result<DatasetPair, PreprocessError> {
    split.validate()?;
    let mut stat_cols = feature_names.to_vec();
    if !stat_cols.iter().any(|c| c == target) {
        stat_cols.push(target.to_string());
    }
    let mut train = WindowedDataset::empty(feature_names, window);
    let mut test = WindowedDataset::empty(feature_names, window);
    let mut skipped = Vec::new();
    for (symbol, frame) in frames {
        let tr = frame.select_rows(|_, d| split.in_train(d));
        let te = frame.select_rows(|_, d| split.in_test(d));
        if tr.len() < window + 1 || te.len() < window + 1 {
            log::warn!(
                "skipping {symbol}: {} train / {} test rows, window {window}",
                tr.len(),
                te.len()
            );
            skipped.push(symbol.clone());
            continue;
        }
        let stats = fit_normalize(&tr, &stat_cols)?;
        train.extend(make_windows(&tr, feature_names, window, target, &stats)?)?;
        test.extend(make_windows(&te, feature_names, window, target, &stats)?)?;
    }
    if train.is_empty() {
        return Err(PreprocessError::EmptyPartition("train"));
    }
    Ok(DatasetPair { train, test, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn frame(n: usize) -> DailyFrame {
        let start = NaiveDate::from_ymd_opt(2014, 1, 1).unwrap();
        let dates = (0..n).map(|i| start + chrono::Days::new(i as u64)).collect();
        let mut f = DailyFrame::new("S", dates);
        f.set_column("close", (0..n).map(|i| i as f64).collect());
        f.set_column("volume", (0..n).map(|i| (i * i) as f64).collect());
        f
    }

    #[test]
    fn mean_imputation() {
        let mut cols = vec![vec![1.0, f64::NAN, 3.0]];
        impute_columns(&names(&["a"]), &mut cols, None, ImputeStrategy::Mean).unwrap();
        assert_eq!(cols[0], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mean_uses_fit_rows_only() {
        let mut cols = vec![vec![1.0, f64::NAN, 3.0, 100.0]];
        let fit = [true, true, true, false];
        impute_columns(&names(&["a"]), &mut cols, Some(&fit), ImputeStrategy::Mean).unwrap();
        assert_eq!(cols[0][1], 2.0);
    }

    #[test]
    fn regression_imputation_exact_line() {
        let mut cols = vec![vec![1.0, 2.0, 3.0, 5.0], vec![2.0, 4.0, 6.0, f64::NAN]];
        impute_columns(&names(&["x", "y"]), &mut cols, None, ImputeStrategy::Regression).unwrap();
        assert!((cols[1][3] - 10.0).abs() < 1e-9, "{}", cols[1][3]);
    }

    #[test]
    fn regression_without_covariates_falls_back_to_mean() {
        let mut cols = vec![vec![1.0, f64::NAN, 3.0], vec![f64::NAN, 4.0, 6.0]];
        impute_columns(&names(&["x", "y"]), &mut cols, None, ImputeStrategy::Regression).unwrap();
        assert_eq!(cols[0][1], 2.0);
        assert_eq!(cols[1][0], 5.0);
    }

    #[test]
    fn all_missing_column_named() {
        let mut cols = vec![vec![1.0, 2.0], vec![f64::NAN, f64::NAN]];
        let err = impute_columns(&names(&["ok", "PER"]), &mut cols, None, ImputeStrategy::Mean).unwrap_err();
        assert_eq!(err.to_string(), "column PER entirely missing");
    }

    #[test]
    fn impute_is_idempotent() {
        let mut cols = vec![vec![1.0, 2.0, 4.0, 7.0], vec![0.5, f64::NAN, 2.0, f64::NAN]];
        let n = names(&["x", "y"]);
        impute_columns(&n, &mut cols, None, ImputeStrategy::Regression).unwrap();
        let once = cols.clone();
        let filled = impute_columns(&n, &mut cols, None, ImputeStrategy::Regression).unwrap();
        assert_eq!(filled, vec![0, 0]);
        assert_eq!(cols, once);
    }

    #[test]
    fn zscore_of_one_two_three() {
        let s = NormStats::fit(&names(&["c"]), &[&[1.0, 2.0, 3.0]]).unwrap();
        let z = s.normalize(&[1.0, 2.0, 3.0], "c").unwrap();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expected).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - expected).abs() < 1e-12);
        assert!((expected - 1.224745).abs() < 1e-6);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let s = NormStats::fit(&names(&["c"]), &[&[4.0, 4.0]]).unwrap();
        assert_eq!(s.constant_columns(), vec!["c"]);
        assert_eq!(s.normalize(&[4.0, 7.0], "c").unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mismatched_stats_rejected() {
        let f = frame(5);
        let s = NormStats::fit(&names(&["open"]), &[&[1.0, 2.0]]).unwrap();
        assert!(matches!(
            apply_normalize(&f, &s),
            Err(PreprocessError::ColumnMismatch { .. })
        ));
    }

    #[test]
    fn split_validation() {
        let mut spec = SplitSpec::default();
        spec.validate().unwrap();
        spec.test_start = spec.train_end;
        assert!(matches!(spec.validate(), Err(PreprocessError::InvalidSplit(_))));
    }

    #[test]
    fn split_empty_test() {
        let f = frame(10);
        let spec = SplitSpec {
            train_start: NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(),
            train_end: NaiveDate::from_ymd_opt(2014, 12, 31).unwrap(),
            test_start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            test_end: NaiveDate::from_ymd_opt(2015, 12, 31).unwrap(),
        };
        assert_eq!(split_by_date(&f, &spec), Err(PreprocessError::EmptyPartition("test")));
    }

    #[test]
    fn last_complete_year() {
        assert_eq!(SplitSpec::default().last_complete_train_year(), 2014);
    }

    #[test]
    fn window_indices() {
        let f = frame(5);
        let feats = names(&["close"]);
        let s = NormStats {
            names: feats.clone(),
            mean: vec![0.0],
            std: vec![1.0],
        };
        let ds = make_windows(&f, &feats, 2, "close", &s).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.targets, vec![2.0, 3.0, 4.0]);
        assert_eq!(ds.last_observed, vec![1.0, 2.0, 3.0]);
        assert_eq!(ds.inputs[1].as_slice(), &[1.0, 2.0]);
        let one = make_windows(&f, &feats, 4, "close", &s).unwrap();
        assert_eq!(one.len(), 1);
        assert!(matches!(
            make_windows(&f, &feats, 5, "close", &s),
            Err(PreprocessError::TooShort { .. })
        ));
    }

    #[test]
    fn window_feature_order() {
        let f = frame(6);
        let feats = names(&["volume", "close"]);
        let s = NormStats {
            names: feats.clone(),
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
        };
        let ds = make_windows(&f, &feats, 3, "close", &s).unwrap();
        let m = &ds.inputs[2];
        for t in 0..3 {
            assert_eq!(m.get(t, 0), f.column("volume").unwrap()[2 + t]);
            assert_eq!(m.get(t, 1), f.column("close").unwrap()[2 + t]);
        }
    }
}
