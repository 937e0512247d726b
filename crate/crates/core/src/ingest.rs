//! CSV ingestion for daily prices and annual fundamentals.
//!
//! Numeric cells that are empty or unparseable become missing values; they
//! are never zero-filled here. Rows carry `Option<f64>`, frames use `NaN` as
//! the missing marker so that column vectors stay plain `Vec<f64>`.
//!
//! | file               | required columns                                         |
//! |--------------------|----------------------------------------------------------|
//! | `prices.csv`       | date, symbol, open, high, low, close, volume             |
//! | `fundamentals.csv` | symbol, period-end date, one column per ratio            |
//!
//! Column names are configurable through [`PriceSchema`] and
//! [`FundamentalsSchema`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: missing required column \"{0}\"")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate (symbol, year) entries: {}", format_pairs(.0))]
    DuplicateFundamentals(Vec<(String, i32)>),
    #[error("duplicate date {date} for symbol {symbol}")]
    DuplicateDate { symbol: String, date: NaiveDate },
    #[error("no symbol appears in both the price and the fundamentals data")]
    EmptyIntersection,
    #[error("malformed frame file: {0}")]
    Frame(String),
}

fn format_pairs(pairs: &[(String, i32)]) -> String {
    pairs
        .iter()
        .map(|(s, y)| format!("({s}, {y})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Accepted date layouts. Serialised as `"iso"`, `"dmy"` or a chrono format string.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum DateFormat {
    /// `YYYY-MM-DD`, optionally followed by a time part which is ignored.
    #[default]
    Iso,
    /// `DD/MM/YYYY`
    Dmy,
    Custom(String),
}

impl From<String> for DateFormat {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "iso" => DateFormat::Iso,
            "dmy" => DateFormat::Dmy,
            _ => DateFormat::Custom(s),
        }
    }
}

impl From<DateFormat> for String {
    fn from(f: DateFormat) -> Self {
        match f {
            DateFormat::Iso => "iso".into(),
            DateFormat::Dmy => "dmy".into(),
            DateFormat::Custom(s) => s,
        }
    }
}

impl DateFormat {
    pub fn parse(&self, raw: &str) -> Option<NaiveDate> {
        let raw = raw.trim();
        match self {
            DateFormat::Iso => {
                let head = match raw.char_indices().nth(10) {
                    Some((i, c)) if c == ' ' || c == 'T' => &raw[..i],
                    _ => raw,
                };
                NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
            }
            DateFormat::Dmy => NaiveDate::parse_from_str(raw, "%d/%m/%Y").ok(),
            DateFormat::Custom(fmt) => NaiveDate::parse_from_str(raw, fmt).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceSchema {
    pub date: String,
    pub symbol: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub date_format: DateFormat,
}

impl Default for PriceSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            symbol: "symbol".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            date_format: DateFormat::Iso,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FundamentalsSchema {
    pub symbol: String,
    pub period_end: String,
    pub date_format: DateFormat,
    /// Ordered ratio columns. When unset every column other than the symbol,
    /// the period-end date and `ignore` is used, in header order.
    pub ratio_names: Option<Vec<String>>,
    pub ignore: Vec<String>,
}

impl Default for FundamentalsSchema {
    fn default() -> Self {
        Self {
            symbol: "symbol".into(),
            period_end: "period_ending".into(),
            date_format: DateFormat::Iso,
            ratio_names: None,
            ignore: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub symbol: String,
    pub open: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub close: Option<f64>,
    pub volume: Option<f64>,
}

impl PriceRow {
    /// Checks `low ≤ open, close ≤ high` where present and `volume ≥ 0`.
    pub fn is_consistent(&self) -> bool {
        if let (Some(l), Some(h)) = (self.low, self.high) {
            if l > h {
                return false;
            }
            for v in [self.open, self.close].into_iter().flatten() {
                if v < l || v > h {
                    return false;
                }
            }
        }
        self.volume.is_none_or(|v| v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalsRow {
    pub symbol: String,
    pub fiscal_year: i32,
    pub ratios: Vec<Option<f64>>,
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn header_index(headers: &csv::StringRecord) -> HashMap<String, usize> {
    headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect()
}

fn require(index: &HashMap<String, usize>, name: &str) -> Result<usize, IngestError> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Parses daily price rows in file order.
///
/// Rows whose OHLC values contradict each other keep their date and volume
/// but have the four prices marked missing.
pub fn parse_prices<R: Read>(source: R, schema: &PriceSchema) -> Result<Vec<PriceRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let index = header_index(reader.headers()?);
    let date_i = require(&index, &schema.date)?;
    let symbol_i = require(&index, &schema.symbol)?;
    let open_i = require(&index, &schema.open)?;
    let high_i = require(&index, &schema.high)?;
    let low_i = require(&index, &schema.low)?;
    let close_i = require(&index, &schema.close)?;
    let volume_i = require(&index, &schema.volume)?;

    let mut rows = Vec::new();
    let mut inconsistent = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let date = schema.date_format.parse(cell(date_i)).ok_or_else(|| IngestError::Row {
            line,
            message: format!("unparseable date {:?}", cell(date_i)),
        })?;
        let symbol = cell(symbol_i).to_string();
        if symbol.is_empty() {
            return Err(IngestError::Row {
                line,
                message: "empty symbol".into(),
            });
        }
        let mut row = PriceRow {
            date,
            symbol,
            open: parse_number(cell(open_i)),
            high: parse_number(cell(high_i)),
            low: parse_number(cell(low_i)),
            close: parse_number(cell(close_i)),
            volume: parse_number(cell(volume_i)),
        };
        if row.volume.is_some_and(|v| v < 0.0) {
            row.volume = None;
            inconsistent += 1;
        }
        if !row.is_consistent() {
            row.open = None;
            row.high = None;
            row.low = None;
            row.close = None;
            inconsistent += 1;
        }
        rows.push(row);
    }
    if inconsistent > 0 {
        log::warn!("{inconsistent} price rows violated OHLC/volume bounds; offending cells marked missing");
    }
    Ok(rows)
}

/// Parses annual fundamentals; the fiscal year is the calendar year of the
/// period-end date.
pub fn parse_fundamentals<R: Read>(
    source: R,
    schema: &FundamentalsSchema,
) -> Result<(Vec<String>, Vec<FundamentalsRow>), IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let index = header_index(&headers);
    let symbol_i = require(&index, &schema.symbol)?;
    let date_i = require(&index, &schema.period_end)?;

    let ratio_names: Vec<String> = match &schema.ratio_names {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .map(|h| h.trim().to_string())
            .filter(|h| h != &schema.symbol && h != &schema.period_end && !schema.ignore.contains(h) && !h.is_empty())
            .collect(),
    };
    let ratio_idx: Vec<Option<usize>> = ratio_names.iter().map(|n| index.get(n).copied()).collect();
    let absent: Vec<&str> = ratio_names
        .iter()
        .zip(&ratio_idx)
        .filter(|(_, i)| i.is_none())
        .map(|(n, _)| n.as_str())
        .collect();
    if !absent.is_empty() {
        log::warn!("fundamentals file lacks ratio columns {absent:?}; filled as missing");
    }

    let mut rows = Vec::new();
    let mut seen: HashMap<(String, i32), usize> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let date = schema.date_format.parse(cell(date_i)).ok_or_else(|| IngestError::Row {
            line,
            message: format!("unparseable period-end date {:?}", cell(date_i)),
        })?;
        let symbol = cell(symbol_i).to_string();
        let ratios = ratio_idx
            .iter()
            .map(|i| i.and_then(|i| parse_number(cell(i))))
            .collect();
        *seen.entry((symbol.clone(), date.year())).or_default() += 1;
        rows.push(FundamentalsRow {
            symbol,
            fiscal_year: date.year(),
            ratios,
        });
    }
    let mut dups: Vec<(String, i32)> = seen.into_iter().filter(|(_, n)| *n > 1).map(|(k, _)| k).collect();
    if !dups.is_empty() {
        dups.sort();
        return Err(IngestError::DuplicateFundamentals(dups));
    }
    Ok((ratio_names, rows))
}

/// Per-symbol daily series. Missing values are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyFrame {
    pub symbol: String,
    pub dates: Vec<NaiveDate>,
    columns: IndexMap<String, Vec<f64>>,
}

pub const PRICE_COLUMNS: [&str; 5] = ["open", "high", "low", "close", "volume"];

impl DailyFrame {
    pub fn new(symbol: impl Into<String>, dates: Vec<NaiveDate>) -> Self {
        Self {
            symbol: symbol.into(),
            dates,
            columns: IndexMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.keys().cloned().collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Inserts or overwrites a column. Panics if the length differs from the
    /// date vector, which would break the frame invariant.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(
            values.len(),
            self.dates.len(),
            "column {name} has {} rows, frame has {}",
            values.len(),
            self.dates.len()
        );
        self.columns.insert(name.to_string(), values);
    }

    pub fn remove_column(&mut self, name: &str) -> Option<Vec<f64>> {
        self.columns.shift_remove(name)
    }

    pub fn drop_leading(&mut self, n: usize) {
        let n = n.min(self.len());
        self.dates.drain(..n);
        for col in self.columns.values_mut() {
            col.drain(..n);
        }
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn select_rows(&self, keep: impl Fn(usize, NaiveDate) -> bool) -> DailyFrame {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i, self.dates[i])).collect();
        DailyFrame {
            symbol: self.symbol.clone(),
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> DailyFrame {
        DailyFrame {
            symbol: self.symbol.clone(),
            dates: self.dates[range.clone()].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v[range.clone()].to_vec()))
                .collect(),
        }
    }

    /// Writes `date,symbol,<columns…>`; missing values are empty cells.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["date".to_string(), "symbol".to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for (i, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.format("%Y-%m-%d").to_string(), self.symbol.clone()];
            rec.extend(self.columns.values().map(|c| format_number(c[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a single-symbol file written by [`DailyFrame::write_csv`].
    pub fn read_csv<R: Read>(source: R) -> Result<DailyFrame, IngestError> {
        let mut reader = csv::Reader::from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("date") || headers.get(1) != Some("symbol") {
            return Err(IngestError::Frame("header must start with date,symbol".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut symbol: Option<String> = None;
        let mut dates = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for record in reader.records() {
            let record = record?;
            let line = line_of(&record);
            let date = DateFormat::Iso.parse(&record[0]).ok_or_else(|| IngestError::Row {
                line,
                message: format!("unparseable date {:?}", &record[0]),
            })?;
            match &symbol {
                None => symbol = Some(record[1].to_string()),
                Some(s) if s != &record[1] => {
                    return Err(IngestError::Frame(format!(
                        "line {line}: symbol {} differs from {s}",
                        &record[1]
                    )))
                }
                _ => {}
            }
            dates.push(date);
            for (c, col) in cols.iter_mut().enumerate() {
                col.push(parse_number(record.get(c + 2).unwrap_or("")).unwrap_or(f64::NAN));
            }
        }
        let mut frame = DailyFrame::new(symbol.unwrap_or_default(), dates);
        for (name, col) in names.iter().zip(cols) {
            frame.set_column(name, col);
        }
        Ok(frame)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Per-symbol annual fundamentals with the year-end close used as target.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualFrame {
    pub symbol: String,
    pub years: Vec<i32>,
    pub ratio_names: Vec<String>,
    /// `years × ratios`, missing values are `NaN`.
    pub matrix: Vec<Vec<f64>>,
    /// Close on the last trading day of each year; `NaN` if that year has no close.
    pub target_close: Vec<f64>,
}

impl AnnualFrame {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }
}

/// Writes annual frames as one table: `symbol,year,target_close,<ratios…>`.
pub fn write_annual_csv<'a, W: Write>(
    frames: impl IntoIterator<Item = &'a AnnualFrame>,
    sink: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header_written = false;
    for f in frames {
        if !header_written {
            let mut h = vec!["symbol".to_string(), "year".into(), "target_close".into()];
            h.extend(f.ratio_names.iter().cloned());
            w.write_record(&h)?;
            header_written = true;
        }
        for (k, year) in f.years.iter().enumerate() {
            let mut rec = vec![f.symbol.clone(), year.to_string(), format_number(f.target_close[k])];
            rec.extend(f.matrix[k].iter().map(|&v| format_number(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_annual_csv<R: Read>(source: R) -> Result<BTreeMap<String, AnnualFrame>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "symbol" || &headers[1] != "year" || &headers[2] != "target_close" {
        return Err(IngestError::Frame(
            "header must start with symbol,year,target_close".into(),
        ));
    }
    let ratio_names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut out: BTreeMap<String, AnnualFrame> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let year: i32 = record[1].parse().map_err(|_| IngestError::Row {
            line,
            message: format!("bad year {:?}", &record[1]),
        })?;
        let frame = out.entry(record[0].to_string()).or_insert_with(|| AnnualFrame {
            symbol: record[0].to_string(),
            years: Vec::new(),
            ratio_names: ratio_names.clone(),
            matrix: Vec::new(),
            target_close: Vec::new(),
        });
        frame.years.push(year);
        frame.target_close.push(parse_number(&record[2]).unwrap_or(f64::NAN));
        frame.matrix.push(
            (0..ratio_names.len())
                .map(|c| parse_number(record.get(c + 3).unwrap_or("")).unwrap_or(f64::NAN))
                .collect(),
        );
    }
    Ok(out)
}

/// Writes price rows with the default column names and ISO dates.
pub fn write_prices_csv<W: Write>(rows: &[PriceRow], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["date", "symbol", "open", "high", "low", "close", "volume"])?;
    let cell = |v: Option<f64>| v.map_or(String::new(), format_number);
    for r in rows {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.symbol.clone(),
            cell(r.open),
            cell(r.high),
            cell(r.low),
            cell(r.close),
            cell(r.volume),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes fundamentals with `symbol,period_ending,<ratios…>`; the period end
/// is written as 31 December of the fiscal year.
pub fn write_fundamentals_csv<W: Write>(
    ratio_names: &[String],
    rows: &[FundamentalsRow],
    sink: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["symbol".to_string(), "period_ending".to_string()];
    header.extend(ratio_names.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.symbol.clone(), format!("{}-12-31", r.fiscal_year)];
        rec.extend(r.ratios.iter().map(|v| v.map_or(String::new(), format_number)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    OnlyInPrices,
    OnlyInFundamentals,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::OnlyInPrices => write!(f, "no fundamentals"),
            DropReason::OnlyInFundamentals => write!(f, "no prices"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub daily: BTreeMap<String, DailyFrame>,
    pub annual: BTreeMap<String, AnnualFrame>,
    pub dropped: Vec<(String, DropReason)>,
}

/// Groups rows by symbol, sorts them, and keeps symbols present in both datasets.
pub fn assemble_frames(
    prices: &[PriceRow],
    fundamentals: &[FundamentalsRow],
    ratio_names: &[String],
) -> Result<Assembled, IngestError> {
    let mut by_symbol: BTreeMap<&str, Vec<&PriceRow>> = BTreeMap::new();
    for row in prices {
        by_symbol.entry(&row.symbol).or_default().push(row);
    }
    let mut fund_by_symbol: BTreeMap<&str, Vec<&FundamentalsRow>> = BTreeMap::new();
    for row in fundamentals {
        fund_by_symbol.entry(&row.symbol).or_default().push(row);
    }

    let mut dropped = Vec::new();
    for s in by_symbol.keys().filter(|s| !fund_by_symbol.contains_key(*s)) {
        dropped.push((s.to_string(), DropReason::OnlyInPrices));
    }
    for s in fund_by_symbol.keys().filter(|s| !by_symbol.contains_key(*s)) {
        dropped.push((s.to_string(), DropReason::OnlyInFundamentals));
    }
    dropped.sort_by(|a, b| a.0.cmp(&b.0));
    for (s, why) in &dropped {
        log::warn!("dropping symbol {s}: {why}");
    }

    let mut daily = BTreeMap::new();
    let mut annual = BTreeMap::new();
    for (symbol, mut rows) in by_symbol {
        let Some(fund) = fund_by_symbol.get_mut(symbol) else {
            continue;
        };
        rows.sort_by_key(|r| r.date);
        if let Some(w) = rows.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(IngestError::DuplicateDate {
                symbol: symbol.to_string(),
                date: w[0].date,
            });
        }
        let dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
        let mut frame = DailyFrame::new(symbol, dates);
        let pick =
            |f: fn(&PriceRow) -> Option<f64>| -> Vec<f64> { rows.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect() };
        frame.set_column("open", pick(|r| r.open));
        frame.set_column("high", pick(|r| r.high));
        frame.set_column("low", pick(|r| r.low));
        frame.set_column("close", pick(|r| r.close));
        frame.set_column("volume", pick(|r| r.volume));

        fund.sort_by_key(|r| r.fiscal_year);
        if let Some(w) = fund.windows(2).find(|w| w[0].fiscal_year == w[1].fiscal_year) {
            return Err(IngestError::DuplicateFundamentals(vec![(
                symbol.to_string(),
                w[0].fiscal_year,
            )]));
        }
        let close = frame.column("close").unwrap();
        let target_close = fund
            .iter()
            .map(|r| year_end_close(&frame.dates, close, r.fiscal_year))
            .collect();
        let annual_frame = AnnualFrame {
            symbol: symbol.to_string(),
            years: fund.iter().map(|r| r.fiscal_year).collect(),
            ratio_names: ratio_names.to_vec(),
            matrix: fund
                .iter()
                .map(|r| r.ratios.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect(),
            target_close,
        };
        daily.insert(symbol.to_string(), frame);
        annual.insert(symbol.to_string(), annual_frame);
    }
    if daily.is_empty() {
        return Err(IngestError::EmptyIntersection);
    }
    Ok(Assembled { daily, annual, dropped })
}

/// Last non-missing close dated within `year`.
pub fn year_end_close(dates: &[NaiveDate], close: &[f64], year: i32) -> f64 {
    dates
        .iter()
        .zip(close)
        .rev()
        .find(|(d, c)| d.year() == year && c.is_finite())
        .map_or(f64::NAN, |(_, &c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRICES: &str = "date,symbol,open,close,low,high,volume\n\
        2010-01-04,AAPL,30.49,30.57,30.34,30.64,123432400\n";

    #[test]
    fn parses_price_row() {
        let rows = parse_prices(PRICES.as_bytes(), &PriceSchema::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.date, NaiveDate::from_ymd_opt(2010, 1, 4).unwrap());
        assert_eq!(r.symbol, "AAPL");
        assert_eq!(r.open, Some(30.49));
        assert_eq!(r.close, Some(30.57));
        assert_eq!(r.low, Some(30.34));
        assert_eq!(r.high, Some(30.64));
        assert_eq!(r.volume, Some(123432400.0));
    }

    #[test]
    fn empty_cell_is_missing() {
        let csv = "date,symbol,open,close,low,high,volume\n2010-01-04,AAPL,30.49,,30.34,30.64,1\n\
                   2010-01-05,AAPL,abc,30.5,30.34,30.64,1\n";
        let rows = parse_prices(csv.as_bytes(), &PriceSchema::default()).unwrap();
        assert_eq!(rows[0].close, None);
        assert_eq!(rows[0].open, Some(30.49));
        assert_eq!(rows[1].open, None);
    }

    #[test]
    fn missing_symbol_column() {
        let csv = "date,open,close,low,high,volume\n";
        match parse_prices(csv.as_bytes(), &PriceSchema::default()) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "symbol"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_date_reports_line() {
        let csv = "date,symbol,open,close,low,high,volume\n2010-01-04,A,1,1,1,1,1\nnot-a-date,A,1,1,1,1,1\n";
        match parse_prices(csv.as_bytes(), &PriceSchema::default()) {
            Err(IngestError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn date_formats() {
        let d = NaiveDate::from_ymd_opt(2015, 8, 7).unwrap();
        assert_eq!(DateFormat::Iso.parse("2015-08-07"), Some(d));
        assert_eq!(DateFormat::Iso.parse("2015-08-07 00:00:00"), Some(d));
        assert_eq!(DateFormat::Dmy.parse("07/08/2015"), Some(d));
        assert_eq!(DateFormat::Custom("%Y%m%d".into()).parse("20150807"), Some(d));
        assert_eq!(DateFormat::from("dmy".to_string()), DateFormat::Dmy);
    }

    #[test]
    fn inconsistent_ohlc_marked_missing() {
        let csv = "date,symbol,open,close,low,high,volume\n2010-01-04,A,5,1,2,3,10\n";
        let rows = parse_prices(csv.as_bytes(), &PriceSchema::default()).unwrap();
        assert!(rows[0].close.is_none() && rows[0].open.is_none());
        assert_eq!(rows[0].volume, Some(10.0));
    }

    fn fund_schema() -> FundamentalsSchema {
        FundamentalsSchema {
            ratio_names: Some(vec!["EPS".into(), "ROE".into(), "PER".into()]),
            ..FundamentalsSchema::default()
        }
    }

    #[test]
    fn fundamentals_full_and_absent_columns() {
        let csv = "symbol,period_ending,EPS,ROE,PER\nAAPL,2014-09-27,6.45,0.33,15.2\n";
        let (_, rows) = parse_fundamentals(csv.as_bytes(), &fund_schema()).unwrap();
        assert_eq!(rows[0].fiscal_year, 2014);
        assert!(rows[0].ratios.iter().all(Option::is_some));

        let csv = "symbol,period_ending,EPS,ROE\nAAPL,2014-09-27,6.45,0.33\n";
        let (_, rows) = parse_fundamentals(csv.as_bytes(), &fund_schema()).unwrap();
        assert_eq!(rows[0].ratios, vec![Some(6.45), Some(0.33), None]);
    }

    #[test]
    fn fundamentals_infers_ratio_names() {
        let csv = "symbol,period_ending,B,A\nX,2014-12-31,1,2\n";
        let (names, rows) = parse_fundamentals(csv.as_bytes(), &FundamentalsSchema::default()).unwrap();
        assert_eq!(names, vec!["B", "A"]);
        assert_eq!(rows[0].ratios, vec![Some(1.0), Some(2.0)]);
    }

    #[test]
    fn fundamentals_duplicates() {
        let csv = "symbol,period_ending,EPS,ROE,PER\nAAPL,2014-09-27,1,1,1\nAAPL,2014-12-31,2,2,2\n";
        match parse_fundamentals(csv.as_bytes(), &fund_schema()) {
            Err(IngestError::DuplicateFundamentals(d)) => assert_eq!(d, vec![("AAPL".to_string(), 2014)]),
            other => panic!("{other:?}"),
        }
    }

    fn price(symbol: &str, date: &str, close: f64) -> PriceRow {
        PriceRow {
            date: DateFormat::Iso.parse(date).unwrap(),
            symbol: symbol.into(),
            open: Some(close),
            high: Some(close + 1.0),
            low: Some(close - 1.0),
            close: Some(close),
            volume: Some(100.0),
        }
    }

    fn fund(symbol: &str, year: i32) -> FundamentalsRow {
        FundamentalsRow {
            symbol: symbol.into(),
            fiscal_year: year,
            ratios: vec![Some(1.0)],
        }
    }

    #[test]
    fn assemble_intersects_and_sorts() {
        let prices = vec![
            price("B", "2014-01-03", 3.0),
            price("A", "2014-12-30", 2.0),
            price("A", "2014-01-02", 1.0),
            price("A", "2014-12-31", 5.0),
        ];
        let names = vec!["r".to_string()];
        let out = assemble_frames(&prices, &[fund("A", 2014)], &names).unwrap();
        assert_eq!(out.daily.len(), 1);
        assert_eq!(out.dropped, vec![("B".to_string(), DropReason::OnlyInPrices)]);
        let a = &out.daily["A"];
        assert!(a.dates.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.column("close").unwrap(), &[1.0, 2.0, 5.0]);
        assert_eq!(out.annual["A"].target_close, vec![5.0]);
    }

    #[test]
    fn assemble_empty_intersection() {
        let names = vec!["r".to_string()];
        let err = assemble_frames(&[price("A", "2014-01-02", 1.0)], &[fund("B", 2014)], &names);
        assert!(matches!(err, Err(IngestError::EmptyIntersection)));
    }

    #[test]
    fn assemble_duplicate_date() {
        let names = vec!["r".to_string()];
        let p = vec![price("A", "2014-01-02", 1.0), price("A", "2014-01-02", 2.0)];
        assert!(matches!(
            assemble_frames(&p, &[fund("A", 2014)], &names),
            Err(IngestError::DuplicateDate { .. })
        ));
    }

    #[test]
    fn daily_csv_round_trip() {
        let mut f = DailyFrame::new(
            "X",
            vec![
                NaiveDate::from_ymd_opt(2014, 1, 2).unwrap(),
                NaiveDate::from_ymd_opt(2014, 1, 3).unwrap(),
            ],
        );
        f.set_column("close", vec![0.1 + 0.2, 1e-300]);
        f.set_column("rsi", vec![f64::NAN, 55.5]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = DailyFrame::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.dates, f.dates);
        assert_eq!(back.column("close").unwrap()[0].to_bits(), (0.1f64 + 0.2).to_bits());
        assert!(back.column("rsi").unwrap()[0].is_nan());
    }
}
