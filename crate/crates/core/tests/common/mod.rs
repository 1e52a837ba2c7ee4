//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentitrade::features::FeatureMatrix;
use sentitrade::labeling::SentimentClass;

pub const POSITIVE_WORDS: [&str; 8] = ["surge", "gain", "beat", "record", "upgrade", "profit", "soar", "strong"];
pub const NEGATIVE_WORDS: [&str; 8] = ["plunge", "loss", "miss", "lawsuit", "downgrade", "weak", "crash", "layoffs"];
pub const FILLER_WORDS: [&str; 16] = [
    "company", "shares", "market", "report", "quarter", "today", "announced", "said", "investors", "trading",
    "stock", "week", "analysts", "update", "news", "business",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One document: filler words plus a few words from the class lexicon.
pub fn planted_doc(rng: &mut ChaCha8Rng, class: SentimentClass) -> String {
    let mut words: Vec<&str> = (0..rng.gen_range(5..9))
        .map(|_| *FILLER_WORDS.choose(rng).unwrap())
        .collect();
    let lexicon: Option<&[&str]> = match class {
        SentimentClass::Negative => Some(&NEGATIVE_WORDS),
        SentimentClass::Positive => Some(&POSITIVE_WORDS),
        SentimentClass::Neutral => None,
    };
    if let Some(lex) = lexicon {
        for _ in 0..rng.gen_range(2..4) {
            words.push(lex.choose(rng).unwrap());
        }
    }
    words.shuffle(rng);
    words.join(" ")
}

/// `n` documents cycling through the three classes, with planted lexicons.
pub fn planted_corpus(n: usize, seed: u64) -> (Vec<String>, Vec<SentimentClass>) {
    let mut r = rng(seed);
    let labels: Vec<SentimentClass> = (0..n).map(|i| SentimentClass::ALL[i % 3]).collect();
    let texts = labels.iter().map(|&c| planted_doc(&mut r, c)).collect();
    (texts, labels)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
    FeatureMatrix::new(rows, cols, data).unwrap()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `n × n` row-major
/// matrix. Returns eigenvalues (descending) and matching unit eigenvectors.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[b * n + b].total_cmp(&m[a * n + a]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Dense SVD through the Gram matrix of the smaller side: singular values
/// (descending) and right singular vectors.
pub fn dense_svd(x: &FeatureMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (x.n_rows(), x.n_cols());
    if d <= n {
        let mut g = vec![0.0; d * d];
        for r in x.rows() {
            for i in 0..d {
                for j in 0..d {
                    g[i * d + j] += r[i] * r[j];
                }
            }
        }
        let (vals, vecs) = jacobi_eigen(&g, d);
        (vals.iter().map(|v| v.max(0.0).sqrt()).collect(), vecs)
    } else {
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        let (vals, us) = jacobi_eigen(&g, n);
        let sigmas: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
        let vecs = us
            .iter()
            .zip(&sigmas)
            .map(|(u, &s)| {
                (0..d)
                    .map(|c| (0..n).map(|i| x.get(i, c) * u[i]).sum::<f64>() / s)
                    .collect()
            })
            .collect();
        (sigmas, vecs)
    }
}

/// Solves a small dense system by Gaussian elimination with partial
/// pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Exact minimizer of the binary SVM dual `½αᵀQα − 1ᵀα`
/// (`Q_ij = y_i y_j K_ij`, `0 ≤ α_i ≤ C_i`, `yᵀα = 0`) by enumerating
/// every assignment of each variable to lower bound, upper bound or free,
/// solving the equality-constrained stationarity system on the free set,
/// and keeping the best feasible candidate.
pub fn brute_force_dual(kernel: &[f64], y: &[f64], upper: &[f64]) -> Vec<f64> {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let objective = |a: &[f64]| {
        let mut f = 0.0;
        for i in 0..n {
            for j in 0..n {
                f += 0.5 * a[i] * a[j] * q(i, j);
            }
            f -= a[i];
        }
        f
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut alpha: Vec<f64> = (0..n)
            .map(|i| match state[i] {
                1 => upper[i],
                _ => 0.0,
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        if !free.is_empty() {
            // unknowns: α_F then λ; rows: Q_FF α_F − λ y_F = 1 − Q_FB α_B, y_Fᵀ α_F = −y_Bᵀ α_B
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cidx, &j) in free.iter().enumerate() {
                    a[r][cidx] = q(i, j);
                }
                a[r][m] = -y[i];
                b[r] = 1.0 - (0..n).filter(|j| state[*j] != 2).map(|j| q(i, j) * alpha[j]).sum::<f64>();
                a[m][r] = y[i];
            }
            b[m] = -(0..n).filter(|j| state[*j] != 2).map(|j| y[j] * alpha[j]).sum::<f64>();
            let Some(sol) = solve_linear(a, b) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let feasible = alpha.iter().zip(upper).all(|(&a, &u)| a >= -1e-12 && a <= u + 1e-12)
            && alpha.iter().zip(y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-9;
        if !feasible {
            continue;
        }
        let f = objective(&alpha);
        if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
            best = Some((f, alpha));
        }
    }
    best.expect("α = 0 is always feasible").1
}

/// Multinomial naive Bayes parameters written out term by term.
pub fn mnb_oracle(x: &[Vec<f64>], y: &[SentimentClass], alpha: f64) -> ([f64; 3], Vec<Vec<f64>>) {
    let d = x[0].len();
    let n = y.len() as f64;
    let mut prior = [0.0; 3];
    let mut like = vec![vec![0.0; d]; 3];
    for c in 0..3 {
        let members: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, l)| l.index() == c).map(|(r, _)| r).collect();
        prior[c] = (members.len() as f64 / n).ln();
        let mut total = 0.0;
        for j in 0..d {
            let count: f64 = members.iter().map(|r| r[j]).sum();
            total += count;
            like[c][j] = count;
        }
        for j in 0..d {
            like[c][j] = ((like[c][j] + alpha) / (total + alpha * d as f64)).ln();
        }
    }
    (prior, like)
}

pub const FIXTURE_TICKERS: [&str; 5] = ["AAA", "BBB", "CCC", "DDD", "EEE"];
pub const FIXTURE_BENCHMARK: &str = "IDX";

pub struct PipelineFixture {
    pub articles: std::path::PathBuf,
    pub responses: std::path::PathBuf,
    pub prices: std::path::PathBuf,
    pub labels: Vec<SentimentClass>,
}

/// Writes an article CSV with `n` planted documents spread over five
/// companies and 30 days, a response CSV in which three careful workers
/// agree on the planted class, and a daily price CSV for every ticker.
pub fn write_pipeline_fixture(dir: &std::path::Path, n: usize, seed: u64) -> PipelineFixture {
    use chrono::{Days, NaiveDate};
    use sentitrade::corpus::{write_articles, ArticleRecord, DatasetVariant};
    use std::collections::HashSet;

    let mut r = rng(seed);
    let first = NaiveDate::from_ymd_opt(2020, 3, 9).unwrap();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = SentimentClass::ALL[i % 3];
        let company = i % FIXTURE_TICKERS.len();
        let date = first + Days::new(r.gen_range(0..30));
        let title = loop {
            let t = planted_doc(&mut r, class);
            if seen.insert((company, t.clone(), date)) {
                break t;
            }
        };
        records.push(ArticleRecord {
            company_id: format!("c{company}"),
            ticker: FIXTURE_TICKERS[company].to_string(),
            title,
            description: planted_doc(&mut r, class),
            content: format!("{} {}", planted_doc(&mut r, class), planted_doc(&mut r, class)),
            author: "desk".to_string(),
            published_at: date,
            source: "wire".to_string(),
        });
        labels.push(class);
    }
    let articles = dir.join("articles.csv");
    write_articles(&records, std::fs::File::create(&articles).unwrap()).unwrap();

    let responses = dir.join("responses.csv");
    let mut w = csv::Writer::from_path(&responses).unwrap();
    w.write_record([
        "hit_id",
        "sample_id",
        "dataset_variant",
        "worker_id",
        "answer",
        "work_time_seconds",
        "is_gold",
        "gold_answer",
    ])
    .unwrap();
    let mut hit = 0;
    for variant in DatasetVariant::ALL {
        for (record, class) in records.iter().zip(&labels) {
            for worker in 0..3 {
                hit += 1;
                let time = 30.0 + 2.0 * worker as f64 + r.gen_range(0.0..1.0);
                w.write_record([
                    format!("h{hit}"),
                    record.sample_id(),
                    variant.as_str().to_string(),
                    format!("w{worker}"),
                    class.as_str().to_string(),
                    format!("{time:.3}"),
                    "false".to_string(),
                    String::new(),
                ])
                .unwrap();
            }
        }
        for worker in 0..3 {
            hit += 1;
            w.write_record([
                format!("h{hit}"),
                format!("gold{worker}"),
                variant.as_str().to_string(),
                format!("w{worker}"),
                "positive".to_string(),
                "31.0".to_string(),
                "true".to_string(),
                "positive".to_string(),
            ])
            .unwrap();
        }
    }
    w.flush().unwrap();

    let prices = dir.join("prices.csv");
    let mut w = csv::Writer::from_path(&prices).unwrap();
    w.write_record(["ticker", "date", "close"]).unwrap();
    for ticker in FIXTURE_TICKERS.iter().chain([&FIXTURE_BENCHMARK]) {
        let mut close: f64 = 100.0;
        for d in 0..30 {
            close *= 1.0 + r.gen_range(-0.03..0.03);
            let date = first + Days::new(d);
            w.write_record([ticker.to_string(), date.to_string(), format!("{close:.4}")]).unwrap();
        }
    }
    w.flush().unwrap();

    PipelineFixture {
        articles,
        responses,
        prices,
        labels,
    }
}
