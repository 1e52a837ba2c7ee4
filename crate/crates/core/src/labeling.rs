//! Crowdsourced label aggregation and quality control: median-of-raters
//! gold labels, worker statistics, the cheater screener and Fleiss' Kappa.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DatasetVariant;

#[derive(Debug, Error, PartialEq)]
pub enum LabelingError {
    #[error("sample `{0}` has no responses")]
    EmptyGroup(String),
    #[error("sample `{sample_id}` has {found} responses, expected {expected}")]
    UnevenRaters {
        sample_id: String,
        found: usize,
        expected: usize,
    },
    #[error("fleiss kappa needs at least 2 raters per subject and 1 subject")]
    TooFewRaters,
    #[error("screening fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("unknown sentiment `{0}` (expected negative|neutral|positive)")]
    UnknownSentiment(String),
    #[error("response row {row}: {message}")]
    BadResponse { row: usize, message: String },
    #[error("response csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, LabelingError>;

/// Ordinal sentiment. The discriminants are used by the median and by
/// the backtest's mean-sentiment signal, so they must stay 0/1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentClass {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentClass {
    pub const ALL: [SentimentClass; 3] = [
        SentimentClass::Negative,
        SentimentClass::Neutral,
        SentimentClass::Positive,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentClass::Negative => "negative",
            SentimentClass::Neutral => "neutral",
            SentimentClass::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentClass {
    type Err = LabelingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(SentimentClass::Negative),
            "neutral" => Ok(SentimentClass::Neutral),
            "positive" => Ok(SentimentClass::Positive),
            _ => Err(LabelingError::UnknownSentiment(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitResponse {
    pub hit_id: String,
    pub sample_id: String,
    pub dataset_variant: DatasetVariant,
    pub worker_id: String,
    pub answer: SentimentClass,
    pub work_time_seconds: f64,
    pub is_gold: bool,
    pub gold_answer: Option<SentimentClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerStats {
    pub worker_id: String,
    pub n_responses: usize,
    pub mean_work_time: f64,
    pub gold_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregatedLabel {
    pub sample_id: String,
    pub label: SentimentClass,
    pub n_responses: usize,
}

/// Outcome of Fleiss' Kappa. `Degenerate` is returned when every answer
/// falls in one category, where chance agreement is 1 and Kappa is 0/0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaOutcome {
    Kappa(f64),
    Degenerate,
}

impl KappaOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            KappaOutcome::Kappa(k) => Some(k),
            KappaOutcome::Degenerate => None,
        }
    }
}

impl fmt::Display for KappaOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaOutcome::Kappa(k) => write!(f, "{k}"),
            KappaOutcome::Degenerate => f.write_str("degenerate"),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Reads the response CSV
/// (`hit_id,sample_id,dataset_variant,worker_id,answer,work_time_seconds,is_gold,gold_answer`).
pub fn read_responses<R: Read>(reader: R) -> Result<Vec<HitResponse>> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input
        .headers()
        .map_err(|e| LabelingError::Csv(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| LabelingError::Csv(format!("missing column `{name}`")))
    };
    let hit = col("hit_id")?;
    let sample = col("sample_id")?;
    let variant = col("dataset_variant")?;
    let worker = col("worker_id")?;
    let answer = col("answer")?;
    let time = col("work_time_seconds")?;
    let gold = col("is_gold")?;
    let gold_answer = col("gold_answer")?;

    let mut out = Vec::new();
    for (i, record) in input.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| LabelingError::Csv(e.to_string()))?;
        let bad = |message: String| LabelingError::BadResponse { row, message };
        let get = |idx: usize| record.get(idx).unwrap_or("").trim();
        let work_time_seconds: f64 = get(time)
            .parse()
            .map_err(|_| bad(format!("bad work_time_seconds `{}`", get(time))))?;
        if !(work_time_seconds >= 0.0) || !work_time_seconds.is_finite() {
            return Err(bad(format!("work time {work_time_seconds} is negative or not finite")));
        }
        let is_gold = parse_bool(get(gold)).ok_or_else(|| bad(format!("bad is_gold `{}`", get(gold))))?;
        let gold_label = match get(gold_answer) {
            "" => None,
            s => Some(s.parse::<SentimentClass>().map_err(|e| bad(e.to_string()))?),
        };
        if is_gold != gold_label.is_some() {
            return Err(bad("is_gold must be set exactly when gold_answer is present".into()));
        }
        out.push(HitResponse {
            hit_id: get(hit).to_string(),
            sample_id: get(sample).to_string(),
            dataset_variant: get(variant).parse().map_err(|e| bad(format!("{e}")))?,
            worker_id: get(worker).to_string(),
            answer: get(answer).parse().map_err(|e: LabelingError| bad(e.to_string()))?,
            work_time_seconds,
            is_gold,
            gold_answer: gold_label,
        });
    }
    Ok(out)
}

/// Groups answers by sample id, preserving response order within a group.
pub fn group_by_sample<'a, I>(responses: I) -> BTreeMap<String, Vec<SentimentClass>>
where
    I: IntoIterator<Item = &'a HitResponse>,
{
    let mut groups: BTreeMap<String, Vec<SentimentClass>> = BTreeMap::new();
    for r in responses {
        groups.entry(r.sample_id.clone()).or_default().push(r.answer);
    }
    groups
}

/// Median of the ordinal encodings. An even group whose middle pair
/// differs resolves to Neutral.
pub fn median_label(answers: &[SentimentClass]) -> Option<SentimentClass> {
    if answers.is_empty() {
        return None;
    }
    let mut sorted = answers.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        return Some(sorted[n / 2]);
    }
    let (lo, hi) = (sorted[n / 2 - 1], sorted[n / 2]);
    Some(if lo == hi { lo } else { SentimentClass::Neutral })
}

pub fn aggregate_median(groups: &BTreeMap<String, Vec<SentimentClass>>) -> Result<Vec<AggregatedLabel>> {
    groups
        .iter()
        .map(|(sample_id, answers)| {
            let label =
                median_label(answers).ok_or_else(|| LabelingError::EmptyGroup(sample_id.clone()))?;
            Ok(AggregatedLabel {
                sample_id: sample_id.clone(),
                label,
                n_responses: answers.len(),
            })
        })
        .collect()
}

/// Per-worker response count, mean work time and gold accuracy, sorted by worker id.
pub fn worker_stats(responses: &[HitResponse]) -> Vec<WorkerStats> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        time: f64,
        gold_seen: usize,
        gold_correct: usize,
    }
    let mut per_worker: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in responses {
        let acc = per_worker.entry(&r.worker_id).or_default();
        acc.n += 1;
        acc.time += r.work_time_seconds;
        if let Some(gold) = r.gold_answer {
            acc.gold_seen += 1;
            if gold == r.answer {
                acc.gold_correct += 1;
            }
        }
    }
    per_worker
        .into_iter()
        .map(|(worker, acc)| WorkerStats {
            worker_id: worker.to_string(),
            n_responses: acc.n,
            mean_work_time: acc.time / acc.n as f64,
            gold_accuracy: (acc.gold_seen > 0)
                .then(|| acc.gold_correct as f64 / acc.gold_seen as f64),
        })
        .collect()
}

/// Flags workers whose gold accuracy and mean work time are both below
/// `fraction` times the respective population average. Gold accuracy is
/// averaged over workers that saw gold HITs; workers without one are never flagged.
pub fn screen_cheaters(stats: &[WorkerStats], fraction: f64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LabelingError::InvalidFraction(fraction));
    }
    if stats.is_empty() {
        return Ok(Vec::new());
    }
    let mean_time = stats.iter().map(|s| s.mean_work_time).sum::<f64>() / stats.len() as f64;
    let accuracies: Vec<f64> = stats.iter().filter_map(|s| s.gold_accuracy).collect();
    if accuracies.is_empty() {
        return Ok(Vec::new());
    }
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let time_cut = fraction * mean_time;
    let accuracy_cut = fraction * mean_accuracy;
    Ok(stats
        .iter()
        .filter(|s| {
            s.gold_accuracy.is_some_and(|a| a < accuracy_cut) && s.mean_work_time < time_cut
        })
        .map(|s| s.worker_id.clone())
        .collect())
}

/// Fleiss' Kappa over the three sentiment categories. Every group must
/// hold exactly `n_raters` answers.
pub fn fleiss_kappa(groups: &BTreeMap<String, Vec<SentimentClass>>, n_raters: usize) -> Result<KappaOutcome> {
    if n_raters < 2 || groups.is_empty() {
        return Err(LabelingError::TooFewRaters);
    }
    let n = n_raters as f64;
    let mut totals = [0usize; 3];
    let mut agreement_sum = 0.0;
    for (sample_id, answers) in groups {
        if answers.len() != n_raters {
            return Err(LabelingError::UnevenRaters {
                sample_id: sample_id.clone(),
                found: answers.len(),
                expected: n_raters,
            });
        }
        let counts = answer_distribution(answers);
        let sq: usize = counts.iter().map(|c| c * c).sum();
        agreement_sum += (sq - n_raters) as f64 / (n * (n - 1.0));
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let all = groups.len() * n_raters;
    if totals.contains(&all) {
        return Ok(KappaOutcome::Degenerate);
    }
    let p_bar = agreement_sum / groups.len() as f64;
    let p_e: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / all as f64;
            p * p
        })
        .sum();
    Ok(KappaOutcome::Kappa((p_bar - p_e) / (1.0 - p_e)))
}

/// Writes `sample_id,label,n_responses` rows.
pub fn write_labels<W: Write>(labels: &[AggregatedLabel], writer: W) -> Result<()> {
    let csv_err = |e: csv::Error| LabelingError::Csv(e.to_string());
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["sample_id", "label", "n_responses"]).map_err(csv_err)?;
    for l in labels {
        out.write_record([l.sample_id.as_str(), l.label.as_str(), &l.n_responses.to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| LabelingError::Csv(e.to_string()))
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<AggregatedLabel>> {
    let mut input = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in input.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| LabelingError::Csv(e.to_string()))?;
        let bad = |message: String| LabelingError::BadResponse { row, message };
        let get = |idx: usize| record.get(idx).unwrap_or("").trim();
        let n_responses = get(2)
            .parse()
            .ok()
            .filter(|&n: &usize| n >= 1)
            .ok_or_else(|| bad(format!("bad n_responses `{}`", get(2))))?;
        out.push(AggregatedLabel {
            sample_id: get(0).to_string(),
            label: get(1).parse().map_err(|e: LabelingError| bad(e.to_string()))?,
            n_responses,
        });
    }
    Ok(out)
}

/// Counts per class in (negative, neutral, positive) order.
pub fn answer_distribution(labels: &[SentimentClass]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Answer histogram per worker, for manual review of flagged workers.
pub fn worker_answer_histograms(responses: &[HitResponse]) -> BTreeMap<String, [usize; 3]> {
    let mut out: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for r in responses {
        out.entry(r.worker_id.clone()).or_default()[r.answer.index()] += 1;
    }
    out
}

/// Histogram of per-worker mean work time with fixed-width bins starting at 0.
/// Returns `(bin_start, count)` for every bin up to the last occupied one.
pub fn work_time_histogram(stats: &[WorkerStats], bin_width: f64) -> Vec<(f64, usize)> {
    if stats.is_empty() || !(bin_width > 0.0) {
        return Vec::new();
    }
    let bins: Vec<usize> = stats
        .iter()
        .map(|s| (s.mean_work_time / bin_width).floor() as usize)
        .collect();
    let last = bins.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; last + 1];
    for b in bins {
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * bin_width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SentimentClass::*;

    #[test]
    fn label_file_round_trip() {
        let labels = vec![
            AggregatedLabel { sample_id: "a1".into(), label: Positive, n_responses: 3 },
            AggregatedLabel { sample_id: "b2".into(), label: Negative, n_responses: 2 },
        ];
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), labels);
        assert!(read_labels("sample_id,label,n_responses\nx,happy,1\n".as_bytes()).is_err());
    }

    fn groups(data: &[&[SentimentClass]]) -> BTreeMap<String, Vec<SentimentClass>> {
        data.iter()
            .enumerate()
            .map(|(i, g)| (format!("s{i}"), g.to_vec()))
            .collect()
    }

    fn stat(id: &str, time: f64, acc: Option<f64>) -> WorkerStats {
        WorkerStats {
            worker_id: id.into(),
            n_responses: 1,
            mean_work_time: time,
            gold_accuracy: acc,
        }
    }

    #[test]
    fn median_cases() {
        assert_eq!(median_label(&[Negative, Neutral, Positive]), Some(Neutral));
        assert_eq!(median_label(&[Positive, Positive, Negative]), Some(Positive));
        assert_eq!(median_label(&[Negative, Positive]), Some(Neutral));
        assert_eq!(median_label(&[Neutral, Positive]), Some(Neutral));
        assert_eq!(median_label(&[Negative, Neutral]), Some(Neutral));
        assert_eq!(median_label(&[Positive, Positive]), Some(Positive));
        assert_eq!(median_label(&[]), None);
    }

    #[test]
    fn aggregate_rejects_empty_group() {
        let mut g = groups(&[&[Positive]]);
        g.insert("empty".into(), vec![]);
        assert_eq!(aggregate_median(&g), Err(LabelingError::EmptyGroup("empty".into())));
    }

    #[test]
    fn worker_stats_cases() {
        let mk = |worker: &str, answer, time, gold: Option<SentimentClass>| HitResponse {
            hit_id: "h".into(),
            sample_id: "s".into(),
            dataset_variant: DatasetVariant::Title,
            worker_id: worker.into(),
            answer,
            work_time_seconds: time,
            is_gold: gold.is_some(),
            gold_answer: gold,
        };
        let stats = worker_stats(&[
            mk("a", Positive, 4.0, Some(Positive)),
            mk("a", Positive, 6.0, Some(Negative)),
            mk("b", Neutral, 10.0, None),
        ]);
        assert_eq!(stats[0].gold_accuracy, Some(0.5));
        assert_eq!(stats[0].mean_work_time, 5.0);
        assert_eq!(stats[0].n_responses, 2);
        assert_eq!(stats[1].gold_accuracy, None);
    }

    #[test]
    fn screener_examples() {
        let stats = vec![
            stat("w1", 100.0, Some(0.9)),
            stat("w2", 100.0, Some(0.8)),
            stat("w3", 10.0, Some(0.1)),
        ];
        assert_eq!(screen_cheaters(&stats, 0.30).unwrap(), vec!["w3".to_string()]);

        let same = vec![stat("a", 50.0, Some(0.5)), stat("b", 50.0, Some(0.5))];
        assert!(screen_cheaters(&same, 0.3).unwrap().is_empty());
        assert!(screen_cheaters(&[stat("a", 1.0, Some(0.0))], 0.3).unwrap().is_empty());

        let no_gold = vec![stat("a", 100.0, Some(0.9)), stat("b", 1.0, None)];
        assert!(screen_cheaters(&no_gold, 1.0).unwrap().is_empty());
        assert!(screen_cheaters(&stats, 0.0).is_err());
        assert!(screen_cheaters(&stats, 1.5).is_err());
    }

    #[test]
    fn kappa_examples() {
        let unanimous = groups(&[&[Positive; 3], &[Negative; 3], &[Neutral; 3]]);
        assert_eq!(fleiss_kappa(&unanimous, 3).unwrap(), KappaOutcome::Kappa(1.0));

        let zero = groups(&[&[Positive, Positive, Positive], &[Negative, Neutral, Positive]]);
        let k = fleiss_kappa(&zero, 3).unwrap().value().unwrap();
        assert!(k.abs() < 1e-12);

        let neg = groups(&[&[Positive, Positive], &[Positive, Positive], &[Negative, Positive]]);
        let k = fleiss_kappa(&neg, 2).unwrap().value().unwrap();
        assert!((k + 0.2).abs() < 1e-12);
    }

    #[test]
    fn kappa_errors_and_degenerate() {
        let all_pos = groups(&[&[Positive; 3], &[Positive; 3]]);
        assert_eq!(fleiss_kappa(&all_pos, 3).unwrap(), KappaOutcome::Degenerate);
        let uneven = groups(&[&[Positive; 3], &[Positive; 2]]);
        assert!(matches!(fleiss_kappa(&uneven, 3), Err(LabelingError::UnevenRaters { .. })));
        assert_eq!(fleiss_kappa(&groups(&[&[Positive]]), 1), Err(LabelingError::TooFewRaters));
        assert_eq!(fleiss_kappa(&BTreeMap::new(), 3), Err(LabelingError::TooFewRaters));
    }

    #[test]
    fn distribution() {
        assert_eq!(answer_distribution(&[]), [0, 0, 0]);
        assert_eq!(answer_distribution(&[Neutral, Neutral, Positive]), [0, 2, 1]);
    }

    #[test]
    fn histogram_bins() {
        let stats = vec![stat("a", 4.0, None), stat("b", 5.0, None), stat("c", 16.0, None)];
        assert_eq!(
            work_time_histogram(&stats, 5.0),
            vec![(0.0, 1), (5.0, 1), (10.0, 0), (15.0, 1)]
        );
    }

    #[test]
    fn parse_response_csv() {
        let csv = "hit_id,sample_id,dataset_variant,worker_id,answer,work_time_seconds,is_gold,gold_answer\n\
                   h1,s1,title,w1,positive,12.5,false,\n\
                   h2,s2,content,w1,negative,3,true,negative\n";
        let rs = read_responses(csv.as_bytes()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[1].gold_answer, Some(Negative));
        assert_eq!(rs[1].dataset_variant, DatasetVariant::Content);

        let bad = "hit_id,sample_id,dataset_variant,worker_id,answer,work_time_seconds,is_gold,gold_answer\n\
                   h1,s1,title,w1,great,1,false,\n";
        assert!(matches!(read_responses(bad.as_bytes()), Err(LabelingError::BadResponse { row: 1, .. })));
        let inconsistent = "hit_id,sample_id,dataset_variant,worker_id,answer,work_time_seconds,is_gold,gold_answer\n\
                   h1,s1,title,w1,neutral,1,true,\n";
        assert!(read_responses(inconsistent.as_bytes()).is_err());
    }

    fn class() -> impl Strategy<Value = SentimentClass> {
        (0usize..3).prop_map(|i| SentimentClass::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn median_order_invariant(mut answers in prop::collection::vec(class(), 1..9), seed in any::<u64>()) {
            let before = median_label(&answers);
            // deterministic shuffle from the seed
            let n = answers.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                answers.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(before, median_label(&answers));
        }

        #[test]
        fn kappa_bounded_and_permutation_invariant(
            subjects in prop::collection::vec(prop::collection::vec(class(), 3), 1..30)
        ) {
            let g: BTreeMap<String, Vec<SentimentClass>> = subjects
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("{i:03}"), s.clone()))
                .collect();
            let reversed: BTreeMap<String, Vec<SentimentClass>> = subjects
                .iter()
                .rev()
                .enumerate()
                .map(|(i, s)| {
                    let mut s = s.clone();
                    s.reverse();
                    (format!("{i:03}"), s)
                })
                .collect();
            let a = fleiss_kappa(&g, 3).unwrap();
            let b = fleiss_kappa(&reversed, 3).unwrap();
            match (a, b) {
                (KappaOutcome::Kappa(x), KappaOutcome::Kappa(y)) => {
                    prop_assert!(x <= 1.0 + 1e-12);
                    prop_assert!((x - y).abs() < 1e-12);
                    let unanimous = subjects.iter().all(|s| s.iter().all(|a| *a == s[0]));
                    prop_assert_eq!(unanimous, (x - 1.0).abs() < 1e-12);
                }
                (KappaOutcome::Degenerate, KappaOutcome::Degenerate) => {}
                _ => prop_assert!(false, "outcomes differ"),
            }
        }

        #[test]
        fn screener_monotone(
            workers in prop::collection::vec((0.0f64..200.0, prop::option::of(0.0f64..=1.0)), 1..20),
            a in 0.01f64..=1.0,
            b in 0.01f64..=1.0,
        ) {
            let stats: Vec<WorkerStats> = workers
                .iter()
                .enumerate()
                .map(|(i, (t, acc))| stat(&format!("w{i}"), *t, *acc))
                .collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = screen_cheaters(&stats, lo).unwrap();
            let large = screen_cheaters(&stats, hi).unwrap();
            prop_assert!(small.iter().all(|w| large.contains(w)));
        }
    }
}
