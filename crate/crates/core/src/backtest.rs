//! Long-only trading simulation driven by daily mean sentiment.
//!
//! Each article is scored by the four per-field models; the mean of the
//! ordinal predictions (0, 1, 2) on a date is that date's signal. The
//! strategy buys at the close when the signal is above 1 and sells at the
//! close when it is at or below 1.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{ArticleRecord, DatasetVariant};
use crate::labeling::SentimentClass;
use crate::selection::{FittedPipeline, SelectionError};

/// Signals strictly above this buy; at or below it sell.
pub const BUY_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("no close price for {asset} on {date}")]
    MissingPrice { asset: String, date: NaiveDate },
    #[error("not enough price data for {ticker} between {start} and {end}")]
    InsufficientData {
        ticker: String,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("no assets to summarize")]
    EmptyReport,
    #[error("invalid date range: {start} is after {end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("price csv row {row}: {message}")]
    BadPrice { row: usize, message: String },
    #[error("prediction failed: {0}")]
    Prediction(#[from] SelectionError),
    #[error("{expected} predictions expected, model returned {found}")]
    PredictionCount { expected: usize, found: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSeries {
    pub ticker: String,
    closes: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    /// Dates must be strictly increasing and closes positive and finite.
    pub fn new(ticker: impl Into<String>, closes: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let ticker = ticker.into();
        for (i, &(date, close)) in closes.iter().enumerate() {
            if !(close > 0.0 && close.is_finite()) {
                return Err(BacktestError::BadPrice {
                    row: i + 1,
                    message: format!("{ticker} close {close} on {date} is not positive"),
                });
            }
            if i > 0 && closes[i - 1].0 >= date {
                return Err(BacktestError::BadPrice {
                    row: i + 1,
                    message: format!("{ticker} dates not strictly increasing at {date}"),
                });
            }
        }
        Ok(Self { ticker, closes })
    }

    pub fn closes(&self) -> &[(NaiveDate, f64)] {
        &self.closes
    }

    pub fn close_on(&self, date: NaiveDate) -> Option<f64> {
        self.closes
            .binary_search_by_key(&date, |&(d, _)| d)
            .ok()
            .map(|i| self.closes[i].1)
    }

    /// Closes with dates in `[start, end]`.
    pub fn window(&self, start: NaiveDate, end: NaiveDate) -> &[(NaiveDate, f64)] {
        let lo = self.closes.partition_point(|&(d, _)| d < start);
        let hi = self.closes.partition_point(|&(d, _)| d <= end);
        &self.closes[lo..hi.max(lo)]
    }
}

/// Reads `ticker,date,close` rows into one series per ticker. Rows may come
/// in any order; a repeated (ticker, date) pair is an error.
pub fn read_prices<R: Read>(reader: R) -> Result<BTreeMap<String, PriceSeries>> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| BacktestError::BadPrice {
                row: 0,
                message: format!("missing column `{name}`"),
            })
    };
    let (t, d, c) = (col("ticker")?, col("date")?, col("close")?);
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for (i, record) in input.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let get = |idx: usize| record.get(idx).unwrap_or("").trim();
        let bad = |message: String| BacktestError::BadPrice { row, message };
        let date = NaiveDate::parse_from_str(get(d), "%Y-%m-%d").map_err(|_| bad(format!("bad date `{}`", get(d))))?;
        let close: f64 = get(c).parse().map_err(|_| bad(format!("bad close `{}`", get(c))))?;
        let ticker = get(t).to_string();
        if ticker.is_empty() {
            return Err(bad("empty ticker".into()));
        }
        if raw.entry(ticker.clone()).or_default().insert(date, close).is_some() {
            return Err(bad(format!("duplicate close for {ticker} on {date}")));
        }
    }
    raw.into_iter()
        .map(|(ticker, closes)| {
            let series = PriceSeries::new(ticker.clone(), closes.into_iter().collect())?;
            Ok((ticker, series))
        })
        .collect()
}

/// Anything that turns texts into sentiment classes.
pub trait SentimentModel: Sync {
    fn predict_texts(&self, texts: &[String]) -> Result<Vec<SentimentClass>>;
}

impl SentimentModel for FittedPipeline {
    fn predict_texts(&self, texts: &[String]) -> Result<Vec<SentimentClass>> {
        Ok(self.predict(texts)?)
    }
}

/// A model paired with the article field it reads.
pub struct FieldModel<'a> {
    pub variant: DatasetVariant,
    pub model: &'a dyn SentimentModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DailySentiment {
    pub mean: f64,
    pub n_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentimentSignal {
    pub company_id: String,
    pub ticker: String,
    /// Every article seen for the company, inside the window or not.
    pub total_articles: usize,
    pub days: BTreeMap<NaiveDate, DailySentiment>,
}

/// Ordinal predictions of every model for every article, as
/// `scores[article]` summed over models.
fn score_articles(models: &[FieldModel<'_>], articles: &[&ArticleRecord]) -> Result<Vec<usize>> {
    let mut sums = vec![0usize; articles.len()];
    for fm in models {
        let texts: Vec<String> = articles.iter().map(|a| a.text_for(fm.variant)).collect();
        let predicted = fm.model.predict_texts(&texts)?;
        if predicted.len() != texts.len() {
            return Err(BacktestError::PredictionCount {
                expected: texts.len(),
                found: predicted.len(),
            });
        }
        for (s, p) in sums.iter_mut().zip(predicted) {
            *s += p.index();
        }
    }
    Ok(sums)
}

/// Mean of all `models.len() × articles.len()` ordinal predictions.
pub fn daily_signal(models: &[FieldModel<'_>], articles: &[ArticleRecord]) -> Result<DailySentiment> {
    let refs: Vec<&ArticleRecord> = articles.iter().collect();
    let total: usize = score_articles(models, &refs)?.iter().sum();
    let n_predictions = models.len() * articles.len();
    Ok(DailySentiment {
        mean: total as f64 / n_predictions as f64,
        n_predictions,
    })
}

/// One signal per company, ordered by (ticker, company id).
pub fn build_signals(models: &[FieldModel<'_>], articles: &[ArticleRecord]) -> Result<Vec<SentimentSignal>> {
    let refs: Vec<&ArticleRecord> = articles.iter().collect();
    let sums = score_articles(models, &refs)?;
    let mut per_company: BTreeMap<(String, String), BTreeMap<NaiveDate, (usize, usize)>> = BTreeMap::new();
    let mut totals: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (article, sum) in articles.iter().zip(sums) {
        let key = (article.ticker.clone(), article.company_id.clone());
        *totals.entry(key.clone()).or_default() += 1;
        let day = per_company.entry(key).or_default().entry(article.published_at).or_default();
        day.0 += sum;
        day.1 += models.len();
    }
    Ok(per_company
        .into_iter()
        .map(|((ticker, company_id), days)| SentimentSignal {
            total_articles: totals[&(ticker.clone(), company_id.clone())],
            company_id,
            ticker,
            days: days
                .into_iter()
                .filter(|&(_, (_, n))| n > 0)
                .map(|(date, (sum, n))| {
                    (
                        date,
                        DailySentiment {
                            mean: sum as f64 / n as f64,
                            n_predictions: n,
                        },
                    )
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundTrip {
    pub buy_date: NaiveDate,
    pub buy_close: f64,
    pub sell_date: NaiveDate,
    pub sell_close: f64,
    /// Closed by the end-of-window liquidation rather than a sell signal.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeLedger {
    pub company_id: String,
    pub ticker: String,
    pub total_articles: usize,
    pub trips: Vec<RoundTrip>,
    /// Always false once the backtest returns; positions are liquidated.
    pub open_position: bool,
}

fn simulate(
    series: &PriceSeries,
    signal: &SentimentSignal,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<TradeLedger> {
    let mut trips = Vec::new();
    let mut holding: Option<(NaiveDate, f64)> = None;
    for (&date, day) in signal.days.range(start..=end) {
        let close = series.close_on(date).ok_or_else(|| BacktestError::MissingPrice {
            asset: signal.ticker.clone(),
            date,
        })?;
        match holding {
            None if day.mean > BUY_THRESHOLD => holding = Some((date, close)),
            Some((buy_date, buy_close)) if day.mean <= BUY_THRESHOLD => {
                trips.push(RoundTrip {
                    buy_date,
                    buy_close,
                    sell_date: date,
                    sell_close: close,
                    forced: false,
                });
                holding = None;
            }
            _ => {}
        }
    }
    if let Some((buy_date, buy_close)) = holding {
        let &(last_date, last_close) = series
            .window(start, end)
            .last()
            .expect("the buy date itself has a close in range");
        // a buy on the final close cannot be sold later; it is dropped
        if last_date > buy_date {
            trips.push(RoundTrip {
                buy_date,
                buy_close,
                sell_date: last_date,
                sell_close: last_close,
                forced: true,
            });
        }
    }
    Ok(TradeLedger {
        company_id: signal.company_id.clone(),
        ticker: signal.ticker.clone(),
        total_articles: signal.total_articles,
        trips,
        open_position: false,
    })
}

/// Runs the strategy for every asset with more than `min_articles`
/// articles. Ledgers come back ordered by (ticker, company id).
pub fn run_backtest(
    prices: &BTreeMap<String, PriceSeries>,
    signals: &[SentimentSignal],
    min_articles: usize,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<TradeLedger>> {
    if start > end {
        return Err(BacktestError::InvalidRange { start, end });
    }
    let mut eligible: Vec<&SentimentSignal> = signals.iter().filter(|s| s.total_articles > min_articles).collect();
    eligible.sort_by(|a, b| (&a.ticker, &a.company_id).cmp(&(&b.ticker, &b.company_id)));
    let outcomes: Vec<Result<TradeLedger>> = eligible
        .par_iter()
        .map(|signal| match prices.get(&signal.ticker) {
            Some(series) => simulate(series, signal, start, end),
            None => match signal.days.range(start..=end).next() {
                Some((&date, _)) => Err(BacktestError::MissingPrice {
                    asset: signal.ticker.clone(),
                    date,
                }),
                None => simulate(&PriceSeries::new(signal.ticker.clone(), vec![])?, signal, start, end),
            },
        })
        .collect();
    outcomes.into_iter().collect()
}

/// Compounded return over all round trips; 0 without trades.
pub fn asset_roi(ledger: &TradeLedger) -> f64 {
    ledger.trips.iter().map(|t| t.sell_close / t.buy_close).product::<f64>() - 1.0
}

/// Buy-and-hold return from the first close on or after `start` to the
/// last close on or before `end`.
pub fn benchmark_roi(series: &PriceSeries, start: NaiveDate, end: NaiveDate) -> Result<f64> {
    let window = series.window(start, end);
    match (window.first(), window.last()) {
        (Some(&(d0, initial)), Some(&(d1, last))) if d1 > d0 => Ok((last - initial) / initial),
        _ => Err(BacktestError::InsufficientData {
            ticker: series.ticker.clone(),
            start,
            end,
        }),
    }
}

/// Winners per loser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WinLossRatio {
    Ratio(f64),
    /// Winners but no losers.
    NoLosers,
    /// Neither winners nor losers.
    Undefined,
}

impl WinLossRatio {
    pub fn value(self) -> Option<f64> {
        match self {
            WinLossRatio::Ratio(r) => Some(r),
            WinLossRatio::NoLosers => Some(f64::INFINITY),
            WinLossRatio::Undefined => None,
        }
    }
}

impl std::fmt::Display for WinLossRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WinLossRatio::Ratio(r) => write!(f, "{r}"),
            WinLossRatio::NoLosers => f.write_str("inf"),
            WinLossRatio::Undefined => Ok(()),
        }
    }
}

impl Serialize for WinLossRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WinLossRatio::Ratio(r) => s.serialize_f64(*r),
            WinLossRatio::NoLosers => s.serialize_str("inf"),
            WinLossRatio::Undefined => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n_assets: usize,
    pub avg_roi: f64,
    pub max_win: f64,
    pub max_loss: f64,
    pub avg_win: Option<f64>,
    pub avg_loss: Option<f64>,
    pub n_winners: usize,
    pub n_losers: usize,
    pub wl_ratio: WinLossRatio,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Winners have ROI > 0 and losers ROI < 0; zero counts as neither.
pub fn summary_stats(rois: &[f64]) -> Result<Summary> {
    let avg_roi = mean(rois).ok_or(BacktestError::EmptyReport)?;
    let wins: Vec<f64> = rois.iter().copied().filter(|&r| r > 0.0).collect();
    let losses: Vec<f64> = rois.iter().copied().filter(|&r| r < 0.0).collect();
    let wl_ratio = match (wins.len(), losses.len()) {
        (0, 0) => WinLossRatio::Undefined,
        (_, 0) => WinLossRatio::NoLosers,
        (w, l) => WinLossRatio::Ratio(w as f64 / l as f64),
    };
    Ok(Summary {
        n_assets: rois.len(),
        avg_roi,
        max_win: rois.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_loss: rois.iter().copied().fold(f64::INFINITY, f64::min),
        avg_win: mean(&wins),
        avg_loss: mean(&losses),
        n_winners: wins.len(),
        n_losers: losses.len(),
        wl_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetResult {
    pub company_id: String,
    pub ticker: String,
    pub total_articles: usize,
    pub n_trips: usize,
    pub roi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub min_articles: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub assets: Vec<AssetResult>,
    /// Absent when no asset passes the article filter.
    pub summary: Option<Summary>,
    pub benchmarks: BTreeMap<String, f64>,
}

impl BacktestReport {
    pub fn new(
        ledgers: &[TradeLedger],
        min_articles: usize,
        start: NaiveDate,
        end: NaiveDate,
        benchmarks: BTreeMap<String, f64>,
    ) -> Self {
        let assets: Vec<AssetResult> = ledgers
            .iter()
            .map(|l| AssetResult {
                company_id: l.company_id.clone(),
                ticker: l.ticker.clone(),
                total_articles: l.total_articles,
                n_trips: l.trips.len(),
                roi: asset_roi(l),
            })
            .collect();
        let rois: Vec<f64> = assets.iter().map(|a| a.roi).collect();
        Self {
            min_articles,
            start,
            end,
            summary: summary_stats(&rois).ok(),
            assets,
            benchmarks,
        }
    }

    /// Per-asset rows followed by one summary row (`ticker` = `SUMMARY`)
    /// and one row per benchmark (`ticker` = `BENCHMARK:<name>`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "ticker",
            "company_id",
            "total_articles",
            "n_trips",
            "roi",
            "avg_roi",
            "max_win",
            "max_loss",
            "avg_win",
            "avg_loss",
            "wl_ratio",
            "n_assets",
            "min_articles",
        ])?;
        let f = |v: f64| format!("{v:.6}");
        let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
        for a in &self.assets {
            out.write_record([
                a.ticker.clone(),
                a.company_id.clone(),
                a.total_articles.to_string(),
                a.n_trips.to_string(),
                f(a.roi),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                self.min_articles.to_string(),
            ])?;
        }
        let blank = || String::new();
        match &self.summary {
            Some(s) => out.write_record([
                "SUMMARY".to_string(),
                blank(),
                blank(),
                blank(),
                blank(),
                f(s.avg_roi),
                f(s.max_win),
                f(s.max_loss),
                opt(s.avg_win),
                opt(s.avg_loss),
                s.wl_ratio.to_string(),
                s.n_assets.to_string(),
                self.min_articles.to_string(),
            ])?,
            None => out.write_record([
                "SUMMARY".to_string(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                "0".to_string(),
                self.min_articles.to_string(),
            ])?,
        }
        for (name, roi) in &self.benchmarks {
            let mut row = vec![format!("BENCHMARK:{name}"), blank(), blank(), blank(), f(*roi)];
            row.extend((0..7).map(|_| blank()));
            row.push(self.min_articles.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChartRow {
    pub date: NaiveDate,
    pub scaled_close: f64,
    /// `mean / 2`, so the buy threshold sits at 0.5; absent without articles.
    pub scaled_sentiment: Option<f64>,
}

/// Min-max scaled closes over `[start, end]` next to halved sentiment.
/// A constant price scales to 0.
pub fn emit_chart_data(series: &PriceSeries, signal: &SentimentSignal, start: NaiveDate, end: NaiveDate) -> Vec<ChartRow> {
    let window = series.window(start, end);
    let lo = window.iter().map(|&(_, c)| c).fold(f64::INFINITY, f64::min);
    let hi = window.iter().map(|&(_, c)| c).fold(f64::NEG_INFINITY, f64::max);
    window
        .iter()
        .map(|&(date, close)| ChartRow {
            date,
            scaled_close: if hi > lo { (close - lo) / (hi - lo) } else { 0.0 },
            scaled_sentiment: signal.days.get(&date).map(|d| d.mean / 2.0),
        })
        .collect()
}

pub fn write_chart_csv<W: Write>(rows: &[ChartRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["date", "scaled_close", "scaled_sentiment"])?;
    for r in rows {
        out.write_record([
            r.date.to_string(),
            format!("{:.6}", r.scaled_close),
            r.scaled_sentiment.map(|s| format!("{s:.6}")).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
