//! Technical indicators on daily closes: EMA, MACD with its signal line, RSI.
//!
//! Each indicator exists twice: a streaming state that consumes one close at
//! a time, and a batch function over a whole series. Both produce the same
//! numbers; the batch form is what the data pipeline uses.
//!
//! EMA recurrence: `ema_t = α·v_t + (1 − α)·ema_{t−1}` with `α = 2/(period + 1)`.
//! RSI uses simple averages of the first `period` gains/losses and Wilder
//! smoothing `(prev·(period − 1) + current)/period` afterwards.

use serde::{Deserialize, Serialize};

use crate::ingest::DailyFrame;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndicatorError {
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty input series")]
    Empty,
    #[error("period must be ≥ 1, got {0}")]
    InvalidPeriod(usize),
    #[error("fast period {fast} must be shorter than slow period {slow}")]
    PeriodOrder { fast: usize, slow: usize },
    #[error("indicator `{0}` is never defined on this series")]
    NeverDefined(&'static str),
    #[error("frame has no `{0}` column")]
    MissingColumn(String),
}

/// How an EMA obtains its first value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmaSeed {
    /// The first observation is the first EMA value.
    #[default]
    First,
    /// The mean of the first `period` observations seeds the EMA.
    Sma,
}

/// What to do with leading rows where an indicator is not yet defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WarmupPolicy {
    /// Replace undefined entries with the first defined value.
    #[default]
    Backfill,
    /// Remove the leading rows.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorParams {
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub signal_period: usize,
    pub rsi_period: usize,
    pub ema_seed: EmaSeed,
    pub warmup: WarmupPolicy,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        Self {
            macd_fast: 12,
            macd_slow: 26,
            signal_period: 9,
            rsi_period: 14,
            ema_seed: EmaSeed::First,
            warmup: WarmupPolicy::Backfill,
        }
    }
}

impl IndicatorParams {
    pub fn validate(&self) -> Result<(), IndicatorError> {
        for p in [self.macd_fast, self.macd_slow, self.signal_period, self.rsi_period] {
            if p == 0 {
                return Err(IndicatorError::InvalidPeriod(p));
            }
        }
        if self.macd_fast >= self.macd_slow {
            return Err(IndicatorError::PeriodOrder {
                fast: self.macd_fast,
                slow: self.macd_slow,
            });
        }
        Ok(())
    }
}

pub fn smoothing(period: usize) -> f64 {
    2.0 / (period as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    period: usize,
    smoothing: f64,
    seed: EmaSeed,
    current: Option<f64>,
    warmup_sum: f64,
    warmup_count: usize,
}

impl EmaState {
    pub fn new(period: usize, seed: EmaSeed) -> Result<Self, IndicatorError> {
        if period == 0 {
            return Err(IndicatorError::InvalidPeriod(period));
        }
        Ok(Self {
            period,
            smoothing: smoothing(period),
            seed,
            current: None,
            warmup_sum: 0.0,
            warmup_count: 0,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Yesterday's EMA, once defined.
    pub fn current(&self) -> Option<f64> {
        self.current
    }

    /// Consumes one value. Returns `None` only while an SMA seed is filling.
    pub fn step(&mut self, value: f64) -> Result<Option<f64>, IndicatorError> {
        if !value.is_finite() {
            return Err(IndicatorError::NonFinite(self.warmup_count));
        }
        let next = match (self.current, self.seed) {
            (Some(prev), _) => value * self.smoothing + prev * (1.0 - self.smoothing),
            (None, EmaSeed::First) => value,
            (None, EmaSeed::Sma) => {
                self.warmup_sum += value;
                self.warmup_count += 1;
                if self.warmup_count < self.period {
                    return Ok(None);
                }
                self.warmup_sum / self.period as f64
            }
        };
        self.current = Some(next);
        Ok(Some(next))
    }
}

/// Batch EMA. Entries are `None` while an SMA seed is still filling.
pub fn ema_series(values: &[f64], period: usize, seed: EmaSeed) -> Result<Vec<Option<f64>>, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidPeriod(period));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(IndicatorError::NonFinite(i));
    }
    let alpha = smoothing(period);
    let mut out = vec![None; values.len()];
    let start = match seed {
        EmaSeed::First => 0,
        EmaSeed::Sma => period - 1,
    };
    if values.len() <= start {
        return Ok(out);
    }
    let mut ema = match seed {
        EmaSeed::First => values[0],
        EmaSeed::Sma => values[..period].iter().sum::<f64>() / period as f64,
    };
    out[start] = Some(ema);
    for (slot, &v) in out.iter_mut().zip(values).skip(start + 1) {
        ema = v * alpha + ema * (1.0 - alpha);
        *slot = Some(ema);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacdTriple {
    pub macd: f64,
    pub signal: f64,
    pub histogram: f64,
}

impl MacdTriple {
    fn new(macd: f64, signal: f64) -> Self {
        Self {
            macd,
            signal,
            histogram: macd - signal,
        }
    }
}

/// Streaming MACD: fast and slow EMAs of the close, signal EMA of their difference.
#[derive(Debug, Clone)]
pub struct MacdState {
    fast: EmaState,
    slow: EmaState,
    signal: EmaState,
}

impl MacdState {
    pub fn new(params: &IndicatorParams) -> Result<Self, IndicatorError> {
        params.validate()?;
        Ok(Self {
            fast: EmaState::new(params.macd_fast, params.ema_seed)?,
            slow: EmaState::new(params.macd_slow, params.ema_seed)?,
            signal: EmaState::new(params.signal_period, params.ema_seed)?,
        })
    }

    pub fn step(&mut self, close: f64) -> Result<Option<MacdTriple>, IndicatorError> {
        let fast = self.fast.step(close)?;
        let slow = self.slow.step(close)?;
        let (Some(fast), Some(slow)) = (fast, slow) else {
            return Ok(None);
        };
        let macd = fast - slow;
        Ok(self.signal.step(macd)?.map(|s| MacdTriple::new(macd, s)))
    }
}

/// Batch MACD over a close series; `None` marks warmup entries.
pub fn macd_series(close: &[f64], params: &IndicatorParams) -> Result<Vec<Option<MacdTriple>>, IndicatorError> {
    params.validate()?;
    if close.is_empty() {
        return Err(IndicatorError::Empty);
    }
    let fast = ema_series(close, params.macd_fast, params.ema_seed)?;
    let slow = ema_series(close, params.macd_slow, params.ema_seed)?;
    let macd: Vec<Option<f64>> = fast.iter().zip(&slow).map(|(f, s)| Some((*f)? - (*s)?)).collect();
    let first = macd.iter().position(Option::is_some);
    let mut out = vec![None; close.len()];
    if let Some(first) = first {
        let defined: Vec<f64> = macd[first..].iter().map(|m| m.unwrap()).collect();
        let signal = ema_series(&defined, params.signal_period, params.ema_seed)?;
        for (k, s) in signal.into_iter().enumerate() {
            if let Some(s) = s {
                out[first + k] = Some(MacdTriple::new(defined[k], s));
            }
        }
    }
    Ok(out)
}

fn rsi_value(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

/// Streaming RSI.
#[derive(Debug, Clone)]
pub struct RsiState {
    period: usize,
    prev_close: Option<f64>,
    warmup: Vec<f64>,
    avg_gain: f64,
    avg_loss: f64,
    ready: bool,
}

impl RsiState {
    pub fn new(period: usize) -> Result<Self, IndicatorError> {
        if period == 0 {
            return Err(IndicatorError::InvalidPeriod(period));
        }
        Ok(Self {
            period,
            prev_close: None,
            warmup: Vec::with_capacity(period),
            avg_gain: 0.0,
            avg_loss: 0.0,
            ready: false,
        })
    }

    pub fn avg_gain(&self) -> f64 {
        self.avg_gain
    }

    pub fn avg_loss(&self) -> f64 {
        self.avg_loss
    }

    pub fn step(&mut self, close: f64) -> Result<Option<f64>, IndicatorError> {
        if !close.is_finite() {
            return Err(IndicatorError::NonFinite(self.warmup.len()));
        }
        let Some(prev) = self.prev_close.replace(close) else {
            return Ok(None);
        };
        let delta = close - prev;
        let (gain, loss) = (delta.max(0.0), (-delta).max(0.0));
        if self.ready {
            let p = self.period as f64;
            self.avg_gain = (self.avg_gain * (p - 1.0) + gain) / p;
            self.avg_loss = (self.avg_loss * (p - 1.0) + loss) / p;
        } else {
            self.warmup.push(delta);
            if self.warmup.len() < self.period {
                return Ok(None);
            }
            let p = self.period as f64;
            self.avg_gain = self.warmup.iter().map(|d| d.max(0.0)).sum::<f64>() / p;
            self.avg_loss = self.warmup.iter().map(|d| (-d).max(0.0)).sum::<f64>() / p;
            self.ready = true;
        }
        Ok(Some(rsi_value(self.avg_gain, self.avg_loss)))
    }
}

/// Batch RSI; the first `period` entries are `None`.
pub fn rsi_series(close: &[f64], period: usize) -> Result<Vec<Option<f64>>, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidPeriod(period));
    }
    if let Some(i) = close.iter().position(|v| !v.is_finite()) {
        return Err(IndicatorError::NonFinite(i));
    }
    let mut out = vec![None; close.len()];
    if close.len() < period + 1 {
        log::warn!(
            "series of {} closes is too short for RSI({period}); all values undefined",
            close.len()
        );
        return Ok(out);
    }
    let p = period as f64;
    let gains: Vec<f64> = close.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let losses: Vec<f64> = close.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect();
    let mut avg_gain = gains[..period].iter().sum::<f64>() / p;
    let mut avg_loss = losses[..period].iter().sum::<f64>() / p;
    out[period] = Some(rsi_value(avg_gain, avg_loss));
    for t in period + 1..close.len() {
        avg_gain = (avg_gain * (p - 1.0) + gains[t - 1]) / p;
        avg_loss = (avg_loss * (p - 1.0) + losses[t - 1]) / p;
        out[t] = Some(rsi_value(avg_gain, avg_loss));
    }
    Ok(out)
}

pub const MACD_COLUMN: &str = "macd";
pub const SIGNAL_COLUMN: &str = "signal";
pub const RSI_COLUMN: &str = "rsi";

/// Appends `macd`, `signal` and `rsi` columns computed from `close`, then
/// applies the warmup policy. Returns the number of leading warmup rows.
pub fn append_indicators(frame: &mut DailyFrame, params: &IndicatorParams) -> Result<usize, IndicatorError> {
    let close = frame
        .column("close")
        .ok_or_else(|| IndicatorError::MissingColumn("close".into()))?
        .to_vec();
    let macd = macd_series(&close, params)?;
    let rsi = rsi_series(&close, params.rsi_period)?;

    let macd_col: Vec<Option<f64>> = macd.iter().map(|m| m.map(|m| m.macd)).collect();
    let signal_col: Vec<Option<f64>> = macd.iter().map(|m| m.map(|m| m.signal)).collect();
    let warmup = [&macd_col, &signal_col, &rsi]
        .iter()
        .map(|c| c.iter().position(Option::is_some).unwrap_or(c.len()))
        .max()
        .unwrap_or(0);
    if warmup >= close.len() {
        let name = if rsi.iter().all(Option::is_none) {
            RSI_COLUMN
        } else {
            SIGNAL_COLUMN
        };
        return Err(IndicatorError::NeverDefined(name));
    }

    for (name, col) in [(MACD_COLUMN, macd_col), (SIGNAL_COLUMN, signal_col), (RSI_COLUMN, rsi)] {
        let values = match params.warmup {
            WarmupPolicy::Backfill => backfill(&col),
            WarmupPolicy::Drop => col.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        };
        frame.set_column(name, values);
    }
    if params.warmup == WarmupPolicy::Drop && warmup > 0 {
        frame.drop_leading(warmup);
    }
    Ok(warmup)
}

fn backfill(col: &[Option<f64>]) -> Vec<f64> {
    let first = col.iter().flatten().next().copied().unwrap_or(f64::NAN);
    col.iter().map(|v| v.unwrap_or(first)).collect()
}
