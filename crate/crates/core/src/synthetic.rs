//! Seeded fixture generators so the pipeline can run without market data.
//!
//! * [`ar1_sequences`]: many short noiseless `x_{t+1} = φ·x_t` series.
//! * [`annual_drift`]: a price universe whose yearly level is published only
//!   through a fundamentals ratio.
//! * Constant-price symbols can be mixed into the drift universe.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::{FundamentalsRow, PriceRow};
use crate::lstm::SequenceData;
use crate::nn::{seeded_rng, Matrix, Rng64};
use crate::preprocess::SplitSpec;

/// Windows of length `window` over `n_series` series of length `len`, each
/// starting from a uniform draw in (−1, 1).
pub fn ar1_sequences(n_series: usize, len: usize, window: usize, phi: f64, seed: u64) -> SequenceData {
    let mut rng = seeded_rng(seed);
    let mut data = SequenceData::default();
    for _ in 0..n_series {
        let mut x: f64 = rng.random_range(-1.0..1.0);
        let mut series = Vec::with_capacity(len);
        for _ in 0..len {
            series.push(x);
            x *= phi;
        }
        for s in 0..len.saturating_sub(window) {
            let seq = Matrix::from_vec(window, 1, series[s..s + window].to_vec()).unwrap();
            data.push(seq, series[s + window]);
        }
    }
    data
}

/// Parameters of the annual-drift universe.
///
/// Each symbol has a base price. Every year its price is pulled towards a
/// level `base·(1 + offset/100)`; the daily percentage deviation follows
/// `p ← p + reversion·(offset − p) + noise·ε`. Training-year offsets are drawn
/// from `[−amplitude, amplitude]` and the test-year offset falls between the
/// smallest and largest training offset of the same symbol, so the level
/// stays inside what the annual learner has seen. The level is published in
/// the fundamentals as the ratio `drift`, optionally next to pure-noise ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub symbols: usize,
    pub constant_symbols: usize,
    pub years: usize,
    pub start_year: i32,
    pub reversion: f64,
    pub noise: f64,
    pub amplitude: f64,
    pub noise_ratios: usize,
    /// Probability that any single ratio cell is left empty.
    pub missing_ratio_rate: f64,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            symbols: 20,
            constant_symbols: 0,
            years: 4,
            start_year: 2012,
            reversion: 0.5,
            noise: 0.6,
            amplitude: 10.0,
            noise_ratios: 0,
            missing_ratio_rate: 0.0,
            seed: 42,
        }
    }
}

impl DriftConfig {
    /// All but the last year train, the last year tests.
    pub fn split(&self) -> SplitSpec {
        let last = self.start_year + self.years as i32 - 1;
        SplitSpec {
            train_start: NaiveDate::from_ymd_opt(self.start_year, 1, 1).unwrap(),
            train_end: NaiveDate::from_ymd_opt(last - 1, 12, 31).unwrap(),
            test_start: NaiveDate::from_ymd_opt(last, 1, 1).unwrap(),
            test_end: NaiveDate::from_ymd_opt(last, 12, 31).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub prices: Vec<PriceRow>,
    pub fundamentals: Vec<FundamentalsRow>,
    pub ratio_names: Vec<String>,
    pub split: SplitSpec,
}

fn weekdays(year: i32) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
    let mut out = Vec::new();
    while d.year() == year {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

fn normal(rng: &mut Rng64) -> f64 {
    rng.sample(StandardNormal)
}

pub fn annual_drift(cfg: &DriftConfig) -> SyntheticData {
    assert!(cfg.years >= 2, "need at least one training and one test year");
    let mut rng = seeded_rng(cfg.seed);
    let mut ratio_names = vec!["drift".to_string()];
    ratio_names.extend((1..=cfg.noise_ratios).map(|k| format!("noise_{k}")));
    let years: Vec<i32> = (0..cfg.years as i32).map(|k| cfg.start_year + k).collect();
    let calendar: Vec<Vec<NaiveDate>> = years.iter().map(|&y| weekdays(y)).collect();

    let train_years = cfg.years - 1;
    let mut prices = Vec::new();
    let mut fundamentals = Vec::new();
    let total = cfg.symbols + cfg.constant_symbols;
    for s in 0..total {
        let symbol = format!("S{s:03}");
        let constant = s >= cfg.symbols;
        let base: f64 = rng.random_range(50.0..150.0);
        let offsets: Vec<f64> = if constant {
            vec![0.0; cfg.years]
        } else {
            let mut o: Vec<f64> = (0..train_years)
                .map(|_| rng.random_range(-cfg.amplitude..cfg.amplitude))
                .collect();
            let lo = o.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            o.push(if hi > lo { rng.random_range(lo..hi) } else { lo });
            o
        };

        let mut p = offsets[0];
        let mut prev_close = base * (1.0 + p / 100.0);
        let first_row = prices.len();
        for (k, days) in calendar.iter().enumerate() {
            for &date in days {
                let (open, high, low, close, volume) = if constant {
                    (base, base, base, base, 1e6)
                } else {
                    p += cfg.reversion * (offsets[k] - p) + cfg.noise * normal(&mut rng);
                    let close = base * (1.0 + p / 100.0);
                    let open = prev_close * (1.0 + 0.002 * normal(&mut rng));
                    let high = open.max(close) * (1.0 + 0.003 * normal(&mut rng).abs());
                    let low = open.min(close) * (1.0 - 0.003 * normal(&mut rng).abs());
                    let volume = (1e6 * (0.2 * normal(&mut rng)).exp()).round();
                    (open, high, low, close, volume)
                };
                prev_close = close;
                prices.push(PriceRow {
                    date,
                    symbol: symbol.clone(),
                    open: Some(open),
                    high: Some(high),
                    low: Some(low),
                    close: Some(close),
                    volume: Some(volume),
                });
            }
        }

        // The published level is standardized with the symbol's training-period
        // close statistics, like a valuation score relative to its own history.
        let train_closes: Vec<f64> = prices[first_row..]
            .iter()
            .filter(|r: &&PriceRow| r.date.year() < years[train_years])
            .map(|r| r.close.unwrap())
            .collect();
        let n = train_closes.len() as f64;
        let mean = train_closes.iter().sum::<f64>() / n;
        let std = (train_closes.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n).sqrt();
        for (k, &year) in years.iter().enumerate() {
            let level = base * (1.0 + offsets[k] / 100.0);
            let score = if std > 0.0 { (level - mean) / std } else { 0.0 };
            let mut ratios = vec![Some(score)];
            for _ in 0..cfg.noise_ratios {
                ratios.push(Some(normal(&mut rng)));
            }
            for r in ratios.iter_mut() {
                if cfg.missing_ratio_rate > 0.0 && rng.random_bool(cfg.missing_ratio_rate) {
                    *r = None;
                }
            }
            fundamentals.push(FundamentalsRow {
                symbol: symbol.clone(),
                fiscal_year: year,
                ratios,
            });
        }
    }

    SyntheticData {
        prices,
        fundamentals,
        ratio_names,
        split: cfg.split(),
    }
}
