//! Price tables, simple returns and training windows.
//!
//! Input CSV layout is `date,<ticker1>,...,<tickerd>` with one row per
//! observation. Dates are kept as opaque labels; rows are ordered by label,
//! which is chronological for ISO-8601 dates.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Raw closing prices, `prices[row][asset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    dates: Vec<String>,
    tickers: Vec<String>,
    prices: Vec<Vec<f64>>,
}

/// Options for reading delimited price files.
#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

/// How returns are computed from consecutive prices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReturnKind {
    /// `(p_t - p_{t-1}) / p_{t-1}`
    #[default]
    Simple,
    /// `ln(p_t / p_{t-1})`
    Log,
}

impl PriceTable {
    /// Builds a table, sorting rows by date label and validating every cell.
    ///
    /// Row numbers in errors are 1-based positions in `prices` as given.
    pub fn new(dates: Vec<String>, tickers: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.is_empty() {
            return Err(Error::invalid("price table needs at least one ticker"));
        }
        if dates.len() != prices.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                found: prices.len(),
            });
        }
        if prices.len() < 2 {
            return Err(Error::invalid(format!(
                "price table needs at least 2 rows, found {}",
                prices.len()
            )));
        }
        for (r, row) in prices.iter().enumerate() {
            if row.len() != tickers.len() {
                return Err(Error::data(
                    r + 1,
                    None,
                    format!("expected {} prices, found {}", tickers.len(), row.len()),
                ));
            }
            for (c, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(Error::data(r + 1, Some(c + 1), "non-finite price"));
                }
                if p <= 0.0 {
                    return Err(Error::data(r + 1, Some(c + 1), "non-positive price"));
                }
            }
        }
        let mut order: Vec<usize> = (0..dates.len()).collect();
        order.sort_by(|&i, &j| dates[i].cmp(&dates[j]));
        for pair in order.windows(2) {
            if dates[pair[0]] == dates[pair[1]] {
                return Err(Error::data(
                    pair[1] + 1,
                    None,
                    format!("duplicate date {}", dates[pair[1]]),
                ));
            }
        }
        let dates = order.iter().map(|&i| dates[i].clone()).collect();
        let prices = order.iter().map(|&i| prices[i].clone()).collect();
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tickers.len()
    }
}

/// Reads a price CSV from disk. Errors carry the file line and 1-based column.
pub fn load_prices(path: impl AsRef<Path>, opts: CsvOptions) -> Result<PriceTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_prices(file, opts)
}

/// Parses a price CSV from any reader.
pub fn read_prices<R: Read>(reader: R, opts: CsvOptions) -> Result<PriceTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::data(1, None, "header must be date followed by tickers"));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::data(
                line,
                None,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let date = record.get(0).unwrap_or_default();
        if date.is_empty() {
            return Err(Error::data(line, Some(1), "missing date"));
        }
        let mut row = Vec::with_capacity(tickers.len());
        for (c, cell) in record.iter().enumerate().skip(1) {
            if cell.is_empty() {
                return Err(Error::data(line, Some(c + 1), "missing price"));
            }
            let p: f64 = cell
                .parse()
                .map_err(|_| Error::data(line, Some(c + 1), format!("non-numeric cell {cell:?}")))?;
            if !p.is_finite() {
                return Err(Error::data(line, Some(c + 1), "non-finite price"));
            }
            if p <= 0.0 {
                return Err(Error::data(line, Some(c + 1), "non-positive price"));
            }
            row.push(p);
        }
        dates.push(date.to_string());
        prices.push(row);
    }
    PriceTable::new(dates, tickers, prices)
}

/// The training set: `n` observations of `d` asset returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsDataset {
    tickers: Vec<String>,
    dates: Vec<String>,
    returns: Vec<Vec<f64>>,
}

impl ReturnsDataset {
    pub fn new(tickers: Vec<String>, dates: Vec<String>, returns: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.is_empty() {
            return Err(Error::invalid("dataset needs at least one asset"));
        }
        if dates.len() != returns.len() {
            return Err(Error::DimensionMismatch {
                expected: returns.len(),
                found: dates.len(),
            });
        }
        for (r, row) in returns.iter().enumerate() {
            if row.len() != tickers.len() {
                return Err(Error::data(
                    r + 1,
                    None,
                    format!("expected {} values, found {}", tickers.len(), row.len()),
                ));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::data(r + 1, Some(c + 1), "non-finite return"));
            }
        }
        Ok(Self {
            tickers,
            dates,
            returns,
        })
    }

    /// Dataset with generated tickers `A1..Ad` and row-number date labels.
    pub fn from_rows(returns: Vec<Vec<f64>>) -> Result<Self> {
        let d = returns.first().map_or(0, Vec::len);
        let tickers = (1..=d).map(|k| format!("A{k}")).collect();
        let dates = (0..returns.len()).map(|i| i.to_string()).collect();
        Self::new(tickers, dates, returns)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.returns[i]
    }

    /// Number of observations `n`.
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Number of assets `d`.
    pub fn dim(&self) -> usize {
        self.tickers.len()
    }

    /// Contiguous rows `start..start + length`, labels preserved.
    pub fn select_window(&self, start: usize, length: usize) -> Result<Self> {
        let end = start
            .checked_add(length)
            .filter(|&e| e <= self.len())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "window {start}..{start}+{length} out of range for {} rows",
                    self.len()
                ))
            })?;
        Ok(Self {
            tickers: self.tickers.clone(),
            dates: self.dates[start..end].to_vec(),
            returns: self.returns[start..end].to_vec(),
        })
    }

    /// Writes `date,<tickers>` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        wtr.write_record(&header)?;
        for (date, row) in self.dates.iter().zip(&self.returns) {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(date.clone());
            rec.extend(row.iter().map(|v| format_float(*v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    /// Reads a returns CSV. A leading `date` column is taken as labels;
    /// without one every column is numeric and rows are labelled by index.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let has_dates = header
            .get(0)
            .is_some_and(|h| h.eq_ignore_ascii_case("date"));
        let skip = usize::from(has_dates);
        let tickers: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut returns = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != header.len() {
                return Err(Error::data(
                    line,
                    None,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            let mut row = Vec::with_capacity(tickers.len());
            for (c, cell) in record.iter().enumerate().skip(skip) {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::data(line, Some(c + 1), format!("non-numeric cell {cell:?}"))
                })?;
                row.push(v);
            }
            dates.push(if has_dates {
                record[0].to_string()
            } else {
                returns.len().to_string()
            });
            returns.push(row);
        }
        Self::new(tickers, dates, returns)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file)
    }
}

/// Simple returns; `n = T - 1`, labelled by the later date of each pair.
pub fn to_returns(pt: &PriceTable) -> ReturnsDataset {
    to_returns_with(pt, ReturnKind::Simple)
}

pub fn to_returns_with(pt: &PriceTable, kind: ReturnKind) -> ReturnsDataset {
    let returns = pt
        .prices
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(&p0, &p1)| match kind {
                    ReturnKind::Simple => (p1 - p0) / p0,
                    ReturnKind::Log => (p1 / p0).ln(),
                })
                .collect()
        })
        .collect();
    ReturnsDataset {
        tickers: pt.tickers.clone(),
        dates: pt.dates[1..].to_vec(),
        returns,
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}
