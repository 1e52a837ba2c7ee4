//! Article ingestion, deduplication and the four per-field text datasets.
//!
//! Articles arrive as CSV (one row per article, see [`ARTICLE_HEADER`]) or
//! through a pluggable fetch transport speaking the NewsAPI-style JSON wire
//! format. After deduplication every article is projected into four
//! datasets: title, description, content, and the combined text of all three.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Column order used when writing article CSV files.
pub const ARTICLE_HEADER: [&str; 8] = [
    "company_id",
    "ticker",
    "title",
    "description",
    "content",
    "author",
    "published_at",
    "source",
];

const REQUIRED_COLUMNS: [&str; 6] = [
    "company_id",
    "ticker",
    "title",
    "description",
    "content",
    "published_at",
];

/// Attempts per fetch request: the first try plus three retries.
pub const MAX_FETCH_ATTEMPTS: usize = 4;

/// Page size the fetch transport is asked for; a full page triggers the next one.
pub const FETCH_PAGE_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("article csv is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: cannot parse published_at `{value}` as YYYY-MM-DD")]
    BadDate { row: usize, value: String },
    #[error("company name must not be empty")]
    EmptyName,
    #[error("invalid date range: {from} is after {to}")]
    InvalidRange { from: NaiveDate, to: NaiveDate },
    #[error("transport failed for {request} after {attempts} attempts: {message}")]
    Transport {
        request: String,
        attempts: usize,
        message: String,
    },
    #[error("cannot parse fetch response for {request}: {message}")]
    Parse { request: String, message: String },
    #[error("unknown dataset variant `{0}`")]
    UnknownVariant(String),
    #[error("dataset csv row {row}: {message}")]
    BadDatasetRow { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub company_id: String,
    pub ticker: String,
    pub title: String,
    pub description: String,
    pub content: String,
    pub author: String,
    pub published_at: NaiveDate,
    pub source: String,
}

impl ArticleRecord {
    /// Stable identifier derived from the deduplication key, shared by the
    /// four datasets built from the same article.
    pub fn sample_id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.company_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.title.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.published_at.to_string().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Text of this article as seen by the given dataset variant.
    pub fn text_for(&self, variant: DatasetVariant) -> String {
        match variant {
            DatasetVariant::Title => self.title.clone(),
            DatasetVariant::Description => self.description.clone(),
            DatasetVariant::Content => self.content.clone(),
            DatasetVariant::Combination => {
                combine_fields(&[&self.title, &self.description, &self.content])
            }
        }
    }
}

/// Joins fields with a single space, skipping empty ones.
pub fn combine_fields(fields: &[&str]) -> String {
    fields
        .iter()
        .filter(|f| !f.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetVariant {
    Title,
    Description,
    Content,
    Combination,
}

impl DatasetVariant {
    pub const ALL: [DatasetVariant; 4] = [
        DatasetVariant::Title,
        DatasetVariant::Description,
        DatasetVariant::Content,
        DatasetVariant::Combination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetVariant::Title => "title",
            DatasetVariant::Description => "description",
            DatasetVariant::Content => "content",
            DatasetVariant::Combination => "combination",
        }
    }
}

impl fmt::Display for DatasetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetVariant {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "title" | "titles" => Ok(DatasetVariant::Title),
            "description" => Ok(DatasetVariant::Description),
            "content" => Ok(DatasetVariant::Content),
            "combination" | "combo" => Ok(DatasetVariant::Combination),
            _ => Err(CorpusError::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub sample_id: String,
    pub company_id: String,
    pub published_at: NaiveDate,
    pub text: String,
    pub label: Option<crate::labeling::SentimentClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub variant: DatasetVariant,
    pub rows: Vec<DatasetRow>,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["sample_id", "company_id", "published_at", "text", "label"])?;
        for row in &self.rows {
            let date = row.published_at.to_string();
            let label = row.label.map(|l| l.as_str()).unwrap_or("");
            out.write_record([
                row.sample_id.as_str(),
                row.company_id.as_str(),
                date.as_str(),
                row.text.as_str(),
                label,
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(variant: DatasetVariant, reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (i, record) in input.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let field = |idx: usize| record.get(idx).unwrap_or("").to_string();
            let published_at = parse_date(&field(2)).ok_or_else(|| CorpusError::BadDate {
                row,
                value: field(2),
            })?;
            let label = match record.get(4).unwrap_or("").trim() {
                "" => None,
                s => Some(s.parse().map_err(|e| CorpusError::BadDatasetRow {
                    row,
                    message: format!("{e}"),
                })?),
            };
            rows.push(DatasetRow {
                sample_id: field(0),
                company_id: field(1),
                published_at,
                text: field(3),
                label,
            });
        }
        Ok(FeatureDataset { variant, rows })
    }
}

fn parse_date(value: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d").ok()
}

/// Reads an article CSV. Invalid UTF-8 is replaced by U+FFFD field by field.
pub fn ingest_articles<R: Read>(stream: R) -> Result<Vec<ArticleRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(stream);
    let headers: Vec<String> = reader
        .byte_headers()?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_string())
        .collect();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = column(name).ok_or(CorpusError::MissingColumn(name))?;
    }
    let [company, ticker, title, description, content, published] = required;
    let author = column("author");
    let source = column("source");

    let mut records = Vec::new();
    for (i, row) in reader.byte_records().enumerate() {
        let row_index = i + 1;
        let row = row?;
        let text = |idx: usize| -> String {
            row.get(idx)
                .map(|b| String::from_utf8_lossy(b).into_owned())
                .unwrap_or_default()
        };
        let raw_date = text(published);
        let published_at = parse_date(&raw_date).ok_or(CorpusError::BadDate {
            row: row_index,
            value: raw_date,
        })?;
        records.push(ArticleRecord {
            company_id: text(company),
            ticker: text(ticker),
            title: text(title),
            description: text(description),
            content: text(content),
            author: author.map(text).unwrap_or_default(),
            published_at,
            source: source.map(text).unwrap_or_default(),
        });
    }
    Ok(records)
}

pub fn write_articles<W: Write>(records: &[ArticleRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(ARTICLE_HEADER)?;
    for r in records {
        let date = r.published_at.to_string();
        out.write_record([
            r.company_id.as_str(),
            r.ticker.as_str(),
            r.title.as_str(),
            r.description.as_str(),
            r.content.as_str(),
            r.author.as_str(),
            date.as_str(),
            r.source.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps the first article for each (company_id, title, published_at).
pub fn deduplicate(records: &[ArticleRecord]) -> Vec<ArticleRecord> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| seen.insert((r.company_id.as_str(), r.title.as_str(), r.published_at)))
        .cloned()
        .collect()
}

/// The four datasets in [`DatasetVariant::ALL`] order.
pub fn build_datasets(records: &[ArticleRecord]) -> [FeatureDataset; 4] {
    let ids: Vec<String> = records.iter().map(ArticleRecord::sample_id).collect();
    DatasetVariant::ALL.map(|variant| FeatureDataset {
        variant,
        rows: records
            .iter()
            .zip(&ids)
            .map(|(r, id)| DatasetRow {
                sample_id: id.clone(),
                company_id: r.company_id.clone(),
                published_at: r.published_at,
                text: r.text_for(variant),
                label: None,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub company_id: String,
    pub ticker: String,
    pub query_string: String,
}

/// Builds `"<name>" OR <ticker>`; the ticker clause is dropped when empty.
pub fn build_query(company_name: &str, ticker: &str) -> Result<Query> {
    let name = company_name.trim();
    if name.is_empty() {
        return Err(CorpusError::EmptyName);
    }
    let ticker = ticker.trim();
    let query_string = if ticker.is_empty() {
        format!("\"{name}\"")
    } else {
        format!("\"{name}\" OR {ticker}")
    };
    Ok(Query {
        company_id: name.to_string(),
        ticker: ticker.to_string(),
        query_string,
    })
}

/// One page request for a single-day window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRequest {
    pub query: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub page: usize,
    pub page_size: usize,
}

impl fmt::Display for FetchRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "q={} from={} to={} page={}",
            self.query, self.from, self.to, self.page
        )
    }
}

/// Performs one HTTP-like request and returns the response body.
///
/// Implementations are called from whichever thread runs
/// [`fetch_articles`]; callers fetching concurrently must supply a
/// transport that is `Sync` or wrap a shared one themselves.
pub trait Transport {
    fn request(&self, request: &FetchRequest) -> std::result::Result<String, String>;
}

impl<F> Transport for F
where
    F: Fn(&FetchRequest) -> std::result::Result<String, String>,
{
    fn request(&self, request: &FetchRequest) -> std::result::Result<String, String> {
        self(request)
    }
}

#[derive(Debug, Deserialize)]
struct WirePayload {
    #[serde(default)]
    articles: Vec<WireArticle>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireArticle {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    author: Option<String>,
    published_at: String,
    #[serde(default)]
    source: Option<WireSource>,
}

#[derive(Debug, Deserialize)]
struct WireSource {
    #[serde(default)]
    name: Option<String>,
}

fn parse_payload(query: &Query, request: &FetchRequest, body: &str) -> Result<Vec<ArticleRecord>> {
    let parse_err = |message: String| CorpusError::Parse {
        request: request.to_string(),
        message,
    };
    let payload: WirePayload = serde_json::from_str(body).map_err(|e| parse_err(e.to_string()))?;
    payload
        .articles
        .into_iter()
        .map(|a| {
            // publishedAt is an ISO-8601 timestamp; only the calendar date is kept.
            let day = a.published_at.get(..10).unwrap_or(&a.published_at);
            let published_at = parse_date(day)
                .ok_or_else(|| parse_err(format!("bad publishedAt `{}`", a.published_at)))?;
            Ok(ArticleRecord {
                company_id: query.company_id.clone(),
                ticker: query.ticker.clone(),
                title: a.title.unwrap_or_default(),
                description: a.description.unwrap_or_default(),
                content: a.content.unwrap_or_default(),
                author: a.author.unwrap_or_default(),
                published_at,
                source: a.source.and_then(|s| s.name).unwrap_or_default(),
            })
        })
        .collect()
}

/// Fetches every article for `query` between the two dates (inclusive),
/// one single-day window at a time, paging while pages come back full.
pub fn fetch_articles<T: Transport + ?Sized>(
    query: &Query,
    from: NaiveDate,
    to: NaiveDate,
    transport: &T,
) -> Result<Vec<ArticleRecord>> {
    if from > to {
        return Err(CorpusError::InvalidRange { from, to });
    }
    let mut out = Vec::new();
    for day in from.iter_days().take_while(|d| *d <= to) {
        let mut page = 1;
        loop {
            let request = FetchRequest {
                query: query.query_string.clone(),
                from: day,
                to: day,
                page,
                page_size: FETCH_PAGE_SIZE,
            };
            let body = request_with_retry(transport, &request)?;
            let articles = parse_payload(query, &request, &body)?;
            let full = articles.len() >= FETCH_PAGE_SIZE;
            out.extend(articles);
            if !full {
                break;
            }
            page += 1;
        }
    }
    Ok(out)
}

fn request_with_retry<T: Transport + ?Sized>(transport: &T, request: &FetchRequest) -> Result<String> {
    let mut last = String::new();
    for _ in 0..MAX_FETCH_ATTEMPTS {
        match transport.request(request) {
            Ok(body) => return Ok(body),
            Err(e) => last = e,
        }
    }
    Err(CorpusError::Transport {
        request: request.to_string(),
        attempts: MAX_FETCH_ATTEMPTS,
        message: last,
    })
}
