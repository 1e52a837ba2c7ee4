mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{write_pipeline_fixture, PipelineFixture};
use sentitrade::corpus::{write_articles, ArticleRecord};

fn sentitrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentitrade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = sentitrade(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn article(company: &str, title: &str, date: &str) -> ArticleRecord {
    ArticleRecord {
        company_id: company.into(),
        ticker: company.to_uppercase(),
        title: title.into(),
        description: format!("{title} details"),
        content: format!("{title} full story"),
        author: String::new(),
        published_at: date.parse().unwrap(),
        source: "wire".into(),
    }
}

fn data_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn build_datasets_writes_four_files_and_reports_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("articles.csv");
    let mut records = vec![
        article("acme", "shares surge", "2020-03-09"),
        article("acme", "profit warning", "2020-03-10"),
        article("bolt", "record quarter", "2020-03-10"),
    ];
    write_articles(&records, fs::File::create(&input).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = ok(&["--out", s(&out), "build-datasets", "--articles", s(&input)]);
    assert!(stdout(&o).contains("0 duplicates removed"), "{}", stdout(&o));
    for name in ["title", "description", "content", "combination"] {
        assert_eq!(data_rows(&out.join("datasets").join(format!("{name}.csv"))), 3, "{name}");
    }

    records.push(records[0].clone());
    write_articles(&records, fs::File::create(&input).unwrap()).unwrap();
    let o = ok(&["--out", s(&out), "build-datasets", "--articles", s(&input)]);
    assert!(stdout(&o).contains("read 4 articles, 3 after deduplication (1 duplicates removed)"));
    assert_eq!(data_rows(&out.join("datasets/title.csv")), 3);
}

#[test]
fn build_datasets_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("articles.csv");
    fs::write(&input, "company_id,ticker,title,description,published_at\nacme,ACME,t,d,2020-03-09\n").unwrap();
    let o = sentitrade(&["--out", s(dir.path()), "build-datasets", "--articles", s(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("articles.csv"), "{}", stderr(&o));

    fs::write(
        &input,
        "company_id,ticker,title,description,content,published_at\nacme,ACME,t,d,c,2020-03-09\nacme,ACME,u,d,c,someday\n",
    )
    .unwrap();
    let o = sentitrade(&["--out", s(dir.path()), "build-datasets", "--articles", s(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));

    let o = sentitrade(&["--out", s(dir.path()), "build-datasets", "--articles", s(&dir.path().join("nope.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

const RESPONSE_HEADER: &str = "hit_id,sample_id,dataset_variant,worker_id,answer,work_time_seconds,is_gold,gold_answer\n";

#[test]
fn label_qa_reports_kappa_and_flags_the_fast_inaccurate_worker() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from(RESPONSE_HEADER);
    let mut hit = 0;
    // three workers agree on every ordinary item
    for variant in ["title", "description", "content", "combination"] {
        for (item, answer) in [("a", "positive"), ("b", "negative"), ("c", "neutral")] {
            for (worker, time) in [("w1", 100), ("w2", 100), ("w3", 10)] {
                hit += 1;
                csv += &format!("h{hit},{item},{variant},{worker},{answer},{time},false,\n");
            }
        }
    }
    // gold accuracies 0.9, 0.8 and 0.1
    for (worker, time, correct) in [("w1", 100, 9), ("w2", 100, 8), ("w3", 10, 1)] {
        for g in 0..10 {
            hit += 1;
            let answer = if g < correct { "positive" } else { "negative" };
            csv += &format!("h{hit},g{g},title,{worker},{answer},{time},true,positive\n");
        }
    }
    let input = dir.path().join("responses.csv");
    fs::write(&input, csv).unwrap();
    let out = dir.path().join("out");
    ok(&["--out", s(&out), "label-qa", "--responses", s(&input)]);

    let flagged = fs::read_to_string(out.join("qa/flagged_workers.csv")).unwrap();
    assert_eq!(flagged, "worker_id\nw3\n");
    let kappa = fs::read_to_string(out.join("qa/kappa.csv")).unwrap();
    // w3 is screened out, leaving two unanimous raters
    for variant in ["title", "description", "content", "combination"] {
        assert!(kappa.contains(&format!("{variant},3,2,1.000000")), "{kappa}");
    }
    let labels = fs::read_to_string(out.join("labels/title.csv")).unwrap();
    assert!(labels.contains("a,positive,2"), "{labels}");
    assert!(!labels.contains("g0"), "gold items are not aggregated");
    for file in ["work_time_histogram.csv", "workers.csv", "distribution.csv"] {
        assert!(out.join("qa").join(file).exists(), "{file}");
    }
}

#[test]
fn label_qa_rejects_empty_responses() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("responses.csv");
    fs::write(&input, RESPONSE_HEADER).unwrap();
    let o = sentitrade(&["--out", s(dir.path()), "label-qa", "--responses", s(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no responses"));
}

/// A labeled output directory built through `build-datasets` and `label-qa`.
fn prepared(dir: &Path, n: usize) -> (PipelineFixture, PathBuf) {
    let fixture = write_pipeline_fixture(dir, n, 21);
    let out = dir.join("out");
    ok(&["--out", s(&out), "build-datasets", "--articles", s(&fixture.articles)]);
    ok(&["--out", s(&out), "label-qa", "--responses", s(&fixture.responses)]);
    (fixture, out)
}

const TINY_GRID: [&str; 10] = ["--families", "logreg", "--logreg-c", "1", "--folds", "3", "--svd-k", "4", "--metric", "eq1"];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--out", s(out), "train"];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn single_point_train_is_quick_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = prepared(dir.path(), 60);
    let started = std::time::Instant::now();
    train(&out, &TINY_GRID);
    assert!(started.elapsed().as_secs() < 60);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train/manifest.json")).unwrap()).unwrap();
    let variants: Vec<&str> = manifest["pipelines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["dataset_variant"].as_str().unwrap())
        .collect();
    assert_eq!(variants, ["title", "description", "content", "combination"]);

    let again = dir.path().join("again");
    fs::create_dir_all(&again).unwrap();
    for sub in ["datasets", "labels"] {
        fs::create_dir_all(again.join(sub)).unwrap();
        for entry in fs::read_dir(out.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            fs::copy(&path, again.join(sub).join(path.file_name().unwrap())).unwrap();
        }
    }
    train(&again, &TINY_GRID);
    for table in ["hyperparameters.csv", "scores_eq1.csv", "scores_recall.csv", "final_models.csv", "weighting.csv", "manifest.json", "grid.json"] {
        assert_eq!(
            fs::read(out.join("train").join(table)).unwrap(),
            fs::read(again.join("train").join(table)).unwrap(),
            "{table}"
        );
    }
    let table = fs::read_to_string(out.join("train/hyperparameters.csv")).unwrap();
    assert!(table.starts_with("dataset,model_class,Features 1,Features 2,SVD Features 1,SVD Features 2\n"));
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn finalize_needs_a_manifest_and_force_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (fixture, out) = prepared(dir.path(), 45);
    let o = sentitrade(&["--out", s(&out), "finalize"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest.json"), "{}", stderr(&o));

    train(&out, &TINY_GRID);
    ok(&["--out", s(&out), "finalize"]);
    let o = sentitrade(&["--out", s(&out), "finalize"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    ok(&["--out", s(&out), "finalize", "--force"]);

    let probe = ["record profit surge today", "lawsuit and layoffs", ""];
    for variant in ["title", "description", "content", "combination"] {
        let model = sentitrade::selection::load_model(&out.join("models").join(format!("{variant}.model"))).unwrap();
        assert_eq!(model.predict(&probe).unwrap().len(), 3);
    }

    let o = ok(&[
        "--out",
        s(&out),
        "backtest",
        "--articles",
        s(&fixture.articles),
        "--prices",
        s(&fixture.prices),
        "--min-articles",
        "5",
        "--benchmarks",
        common::FIXTURE_BENCHMARK,
        "--chart-tickers",
        "BBB",
    ]);
    assert!(stdout(&o).contains("min_articles 5: 5 assets"), "{}", stdout(&o));
    let chart = fs::read_to_string(out.join("backtest/charts/BBB.csv")).unwrap();
    assert!(chart.starts_with("date,scaled_close,scaled_sentiment\n"));
    let benchmarks = fs::read_to_string(out.join("backtest/benchmarks.csv")).unwrap();
    assert!(benchmarks.contains("IDX,"));

    let o = sentitrade(&[
        "--out",
        s(&out),
        "backtest",
        "--articles",
        s(&fixture.articles),
        "--prices",
        s(&fixture.prices),
        "--chart-tickers",
        "ZZZ",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn all_neutral_models_never_trade() {
    let dir = tempfile::tempdir().unwrap();
    let (fixture, out) = prepared(dir.path(), 45);
    // one cluster over mostly neutral labels: every prediction is Neutral
    for variant in ["title", "description", "content", "combination"] {
        let path = out.join("labels").join(format!("{variant}.csv"));
        let text = fs::read_to_string(&path).unwrap();
        let rewritten: String = text
            .lines()
            .enumerate()
            .map(|(i, line)| match i {
                0 => format!("{line}\n"),
                _ => {
                    let label = if i % 5 == 0 { "negative" } else { "neutral" };
                    let mut cells: Vec<&str> = line.split(',').collect();
                    cells[1] = label;
                    format!("{}\n", cells.join(","))
                }
            })
            .collect();
        fs::write(&path, rewritten).unwrap();
    }
    train(&out, &["--families", "kmeans", "--kmeans-n", "1", "--folds", "3", "--svd-k", "4"]);
    ok(&["--out", s(&out), "finalize"]);
    ok(&[
        "--out",
        s(&out),
        "backtest",
        "--articles",
        s(&fixture.articles),
        "--prices",
        s(&fixture.prices),
        "--min-articles",
        "0",
    ]);
    let ledgers: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("backtest/ledgers_min0.json")).unwrap()).unwrap();
    let ledgers = ledgers.as_array().unwrap();
    assert_eq!(ledgers.len(), 5);
    assert!(ledgers.iter().all(|l| l["trips"].as_array().unwrap().is_empty()));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("backtest/report_min0.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["avg_roi"].as_f64(), Some(0.0));
}

#[test]
fn backtest_missing_price_names_asset_and_date() {
    let dir = tempfile::tempdir().unwrap();
    let (fixture, out) = prepared(dir.path(), 45);
    train(&out, &TINY_GRID);
    ok(&["--out", s(&out), "finalize"]);
    let prices = fs::read_to_string(&fixture.prices).unwrap();
    let kept: String = prices
        .lines()
        .filter(|l| !l.starts_with("CCC,") || l.contains("2020-04-07"))
        .map(|l| format!("{l}\n"))
        .collect();
    let holed = dir.path().join("holed.csv");
    fs::write(&holed, kept).unwrap();
    let o = sentitrade(&[
        "--out",
        s(&out),
        "backtest",
        "--articles",
        s(&fixture.articles),
        "--prices",
        s(&holed),
        "--min-articles",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("CCC") && err.contains("2020-03"), "{err}");
}

#[test]
fn config_file_values_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = prepared(dir.path(), 45);
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        format!(
            "# tiny run\nout = {}\nfamilies = multinomial_nb\nnb_alpha = 0.5\nfolds = 3\nsvd_k = 4\nseed = 1\n",
            out.display()
        ),
    )
    .unwrap();
    ok(&["--config", s(&config), "--seed", "8", "train"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 8);
    assert_eq!(manifest["pipelines"][0]["model"]["hyperparameters"]["family"], "multinomial_nb");

    fs::write(&config, "colour = blue\n").unwrap();
    let o = sentitrade(&["--config", s(&config), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `colour`"));

    let o = sentitrade(&["--out", s(&out), "train", "--metric", "f1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sentitrade(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}
