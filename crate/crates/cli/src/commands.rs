use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use docqa::analysis::{
    answer_in_text, answer_presence_report, context_length_report, median,
    order_sensitivity_report, reading_order_perplexity, zero_shot_perplexity, AnswerPresence,
    ContextLengthReport, EvalRow, PerplexityStats, PresenceFilter, SensitivityRow, StrategyScores,
    TokenLogProb,
};
use docqa::datasets::{load_qa, sample_mixture, MixtureStrategy, QaRecord};
use docqa::geometry::{load_ocr_corpus, Document};
use docqa::jsonl;
use docqa::llmclient::{
    Client, EndpointConfig, HttpBackend, InferenceRequest, MockBackend, MockLogprobs, MockRule,
    RetryPolicy,
};
use docqa::metrics::{dataset_score, MetricKind};
use docqa::ordering::{
    raster_scan_order, shuffled_order, standard_order, RasterScanParams, ReadingOrder, Strategy,
};
use docqa::serialize::{build_context_with, render_prompt, truncate_context, SerializeOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::provenance::{derive_seed, Provenance};

pub const ORDERS_FILE: &str = "orders.jsonl";
pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const SCHEDULE_FILE: &str = "schedule.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub doc_id: String,
    pub context: String,
    pub token_count: usize,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    /// Empty when the request failed.
    pub text: String,
    #[serde(default)]
    pub tokens: Option<Vec<TokenLogProb>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub metric: MetricKind,
    pub strategy: Strategy,
    pub n: usize,
    /// Mean per-example score times 100.
    pub score: f64,
    pub median_context_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub perplexity: Option<PerplexityStats>,
    pub answer_presence: AnswerPresence,
    pub context_length: ContextLengthReport,
    pub order_sensitivity: Vec<SensitivityRow>,
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    if g.parallelism == 0 {
        return Err(CliError::Usage("--parallelism must be at least 1".into()));
    }
    let settings = Settings::load(g.config.as_deref())?;
    fs::create_dir_all(&g.output_dir).map_err(|e| docqa::Error::io(&g.output_dir, e))?;
    match &cli.command {
        Command::Order(a) => order(g, a),
        Command::Serialize(a) => serialize(g, &settings, a),
        Command::Predict(a) => predict(g, &settings, a),
        Command::Eval(a) => eval(g, &settings, a),
        Command::Analyze(a) => analyze(g, &settings, a),
        Command::Sample(a) => sample(g, a),
    }
}

fn out_path(g: &GlobalArgs, name: &str) -> PathBuf {
    g.output_dir.join(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut body = serde_json::to_string_pretty(value).expect("report serializes");
    body.push('\n');
    fs::write(path, body).map_err(|e| docqa::Error::io(path, e))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let src = fs::read_to_string(path).map_err(|e| docqa::Error::io(path, e))?;
    serde_json::from_str(&src).map_err(|e| {
        CliError::Data(docqa::Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    })
}

fn order(g: &GlobalArgs, a: &OrderArgs) -> CliResult<()> {
    let docs = load_ocr_corpus(&a.corpus)?;
    let stage_seed = derive_seed(g.seed, "order");
    let (strategy, params) = match a.strategy {
        OrderStrategyArg::Standard => (Strategy::Standard, json!({})),
        OrderStrategyArg::RasterScan => (
            Strategy::RasterScan,
            json!({ "threshold_factor": a.threshold_factor }),
        ),
        OrderStrategyArg::Shuffled => (Strategy::Shuffled, json!({ "seed": g.seed })),
    };
    let raster = match strategy {
        Strategy::RasterScan => Some(
            RasterScanParams::new(a.threshold_factor)
                .map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        _ => None,
    };
    let orders = docs
        .iter()
        .map(|d| {
            Ok(match strategy {
                Strategy::Standard => standard_order(d)?,
                Strategy::RasterScan => raster_scan_order(d, raster.expect("set above")),
                Strategy::Shuffled => shuffled_order(d, derive_seed(stage_seed, &d.doc_id)),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let out = out_path(g, ORDERS_FILE);
    jsonl::write_file(&out, &orders)?;
    log::info!(
        "wrote {} {strategy} orders to {}",
        orders.len(),
        out.display()
    );
    Provenance::new("order", json!({ "strategy": strategy, "params": params }))
        .input("corpus", &a.corpus)?
        .write_for(&[&out])
}

fn serialize(g: &GlobalArgs, settings: &Settings, a: &SerializeArgs) -> CliResult<()> {
    let cfg = settings.dataset(&a.dataset)?;
    let budget = a.budget.unwrap_or(cfg.context_budget);
    if budget == 0 {
        return Err(CliError::Usage("--budget must be at least 1".into()));
    }
    let docs = load_ocr_corpus(&a.corpus)?;
    let orders: Vec<ReadingOrder> = jsonl::read_file(&a.orders)?;

    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut seen = HashSet::new();
    for o in &orders {
        if !by_id.contains_key(o.doc_id.as_str()) {
            return Err(docqa::Error::OrderMismatch(format!(
                "order for {} has no document in the corpus",
                o.doc_id
            ))
            .into());
        }
        if !seen.insert(o.doc_id.as_str()) {
            return Err(docqa::Error::OrderMismatch(format!(
                "document {} has more than one order",
                o.doc_id
            ))
            .into());
        }
    }
    if let Some(d) = docs.iter().find(|d| !seen.contains(d.doc_id.as_str())) {
        return Err(docqa::Error::OrderMismatch(format!(
            "document {} has no reading order",
            d.doc_id
        ))
        .into());
    }

    let opts = SerializeOptions {
        line_breaks: a.line_breaks,
        ..Default::default()
    };
    let mut records = Vec::with_capacity(orders.len());
    let mut truncated = 0;
    for o in &orders {
        let full = build_context_with(by_id[o.doc_id.as_str()], o, &opts)?;
        let ctx = truncate_context(&full, budget, &opts.tokenizer)?;
        truncated += usize::from(ctx.token_count < full.token_count);
        records.push(ContextRecord {
            doc_id: ctx.doc_id,
            context: ctx.text,
            token_count: ctx.token_count,
            strategy: ctx.order_strategy,
        });
    }

    let out = out_path(g, CONTEXTS_FILE);
    jsonl::write_file(&out, &records)?;
    log::info!(
        "wrote {} contexts ({truncated} truncated to {budget} tokens)",
        records.len()
    );
    Provenance::new(
        "serialize",
        json!({ "dataset": a.dataset, "budget": budget, "line_breaks": a.line_breaks }),
    )
    .input("corpus", &a.corpus)?
    .input("orders", &a.orders)?
    .write_for(&[&out])
}

fn load_contexts(path: &Path) -> CliResult<HashMap<String, ContextRecord>> {
    let records: Vec<ContextRecord> = jsonl::read_file(path)?;
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if let Some(prev) = map.insert(r.doc_id.clone(), r) {
            return Err(docqa::Error::Validation(format!(
                "{}: duplicate context for {}",
                path.display(),
                prev.doc_id
            ))
            .into());
        }
    }
    Ok(map)
}

fn context_for<'a>(
    contexts: &'a HashMap<String, ContextRecord>,
    rec: &QaRecord,
) -> CliResult<&'a ContextRecord> {
    contexts.get(&rec.doc_id).ok_or_else(|| {
        docqa::Error::Validation(format!(
            "{} references document {} with no context",
            rec.example_id, rec.doc_id
        ))
        .into()
    })
}

fn predict(g: &GlobalArgs, settings: &Settings, a: &PredictArgs) -> CliResult<()> {
    let cfg = settings.dataset(&a.dataset)?;
    let records = load_qa(&a.qa)?;
    let contexts = load_contexts(&a.contexts)?;
    let stage_seed = derive_seed(g.seed, "predict");

    let (client, backend_params) = match a.backend {
        BackendArg::Mock => {
            let rule = match a.mock_rule {
                MockRuleArg::EchoLastWord => MockRule::EchoLastContextWord,
                MockRuleArg::GoldIfContiguous => {
                    let mut key: HashMap<String, Vec<String>> = HashMap::new();
                    for r in &records {
                        key.entry(r.question.clone())
                            .or_default()
                            .extend(r.answers.iter().cloned());
                    }
                    MockRule::GoldIfContiguous(key)
                }
            };
            let logprobs = match a.mock_logprob {
                Some(lp) if lp.is_finite() && lp <= 0.0 => MockLogprobs::Fixed(lp),
                Some(lp) => {
                    return Err(CliError::Usage(format!(
                        "--mock-logprob must be finite and <= 0, got {lp}"
                    )))
                }
                None => MockLogprobs::Seeded,
            };
            let params = json!({
                "backend": "mock",
                "rule": format!("{:?}", a.mock_rule),
                "logprob": a.mock_logprob,
            });
            let retry = RetryPolicy {
                seed: stage_seed,
                ..RetryPolicy::default()
            };
            (
                Client::new(MockBackend::new(rule, logprobs, stage_seed), retry),
                params,
            )
        }
        BackendArg::Http => {
            let mut endpoint = settings.endpoint.clone();
            if let Some(url) = &a.endpoint {
                endpoint = Some(match endpoint {
                    Some(e) => EndpointConfig {
                        url: url.clone(),
                        ..e
                    },
                    None => EndpointConfig {
                        url: url.clone(),
                        timeout_ms: 30_000,
                        retries: 3,
                    },
                });
            }
            let endpoint = endpoint.ok_or_else(|| {
                CliError::Usage(
                    "no endpoint URL: pass --endpoint, set DOCQA_ENDPOINT_URL or add [endpoint] to the config"
                        .into(),
                )
            })?;
            let retry = RetryPolicy {
                max_retries: endpoint.retries,
                seed: stage_seed,
                ..RetryPolicy::default()
            };
            let backend = HttpBackend::new(
                endpoint.url.clone(),
                Duration::from_millis(endpoint.timeout_ms),
            );
            // The URL is deployment detail, not configuration that changes results.
            (Client::new(backend, retry), json!({ "backend": "http" }))
        }
    };

    let requests = records
        .iter()
        .map(|r| {
            Ok(InferenceRequest {
                prompt: render_prompt(&context_for(&contexts, r)?.context, &r.question),
                max_new_tokens: cfg.target_budget,
                want_logprobs: !a.no_logprobs,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let results = client.predict_batch(&requests, g.parallelism);
    let mut failed = 0;
    let predictions: Vec<PredictionRecord> = records
        .iter()
        .zip(results)
        .map(|(r, res)| match res {
            Ok(resp) => PredictionRecord {
                example_id: r.example_id.clone(),
                text: resp.text,
                tokens: resp.tokens,
                error: None,
            },
            Err(e) => {
                failed += 1;
                log::warn!("{}: {e}", r.example_id);
                PredictionRecord {
                    example_id: r.example_id.clone(),
                    text: String::new(),
                    tokens: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();

    let out = out_path(g, PREDICTIONS_FILE);
    jsonl::write_file(&out, &predictions)?;
    Provenance::new(
        "predict",
        json!({
            "dataset": a.dataset,
            "max_new_tokens": cfg.target_budget,
            "logprobs": !a.no_logprobs,
            "seed": g.seed,
            "backend": backend_params,
        }),
    )
    .input("qa", &a.qa)?
    .input("contexts", &a.contexts)?
    .write_for(&[&out])?;

    if failed > 0 {
        return Err(CliError::Endpoint(format!(
            "{failed} of {} requests failed; see {}",
            predictions.len(),
            out.display()
        )));
    }
    log::info!("wrote {} predictions", predictions.len());
    Ok(())
}

fn thread_pool(n: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

fn eval(g: &GlobalArgs, settings: &Settings, a: &EvalArgs) -> CliResult<()> {
    let cfg = settings.dataset(&a.dataset)?;
    if let Some(m) = &a.metric {
        let asked: MetricKind = m.parse()?;
        if asked != cfg.metric {
            return Err(CliError::Usage(format!(
                "dataset {} is scored with {}, not {asked}",
                cfg.name, cfg.metric
            )));
        }
    }
    let records = load_qa(&a.qa)?;
    let contexts = load_contexts(&a.contexts)?;
    let predictions: HashMap<String, PredictionRecord> =
        jsonl::read_file::<PredictionRecord>(&a.predictions)?
            .into_iter()
            .map(|p| (p.example_id.clone(), p))
            .collect();

    let rows: Vec<EvalRow> = thread_pool(g.parallelism)?.install(|| {
        records
            .par_iter()
            .map(|r| -> CliResult<EvalRow> {
                let ctx = context_for(&contexts, r)?;
                let pred = predictions.get(&r.example_id).ok_or_else(|| {
                    docqa::Error::Validation(format!("no prediction for {}", r.example_id))
                })?;
                let score = cfg.metric.score(&pred.text, &r.answers, cfg.anls_tau)?;
                let mut row = EvalRow::new(
                    r.example_id.clone(),
                    cfg.metric,
                    cfg.anls_tau,
                    score,
                    ctx.token_count,
                );
                row.answer_in_text = Some(answer_in_text(&r.answers, &ctx.context));
                row.rop = match &pred.tokens {
                    Some(t) if !t.is_empty() && pred.error.is_none() => {
                        Some(reading_order_perplexity(t)?)
                    }
                    _ => None,
                };
                Ok(row)
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    let strategies: HashSet<Strategy> = records
        .iter()
        .map(|r| contexts[&r.doc_id].strategy)
        .collect();
    let strategy = match strategies.len() {
        1 => *strategies.iter().next().expect("one element"),
        0 => return Err(docqa::Error::Empty("eval").into()),
        _ => {
            return Err(docqa::Error::Validation(
                "contexts mix several reading-order strategies".into(),
            )
            .into())
        }
    };
    let scores: Vec<_> = rows.iter().map(|r| r.score).collect();
    let lens: Vec<f64> = rows.iter().map(|r| r.context_token_len as f64).collect();
    let aggregate = Aggregate {
        dataset: cfg.name.clone(),
        metric: cfg.metric,
        strategy,
        n: rows.len(),
        score: dataset_score(&scores)?,
        median_context_len: median(&lens).expect("rows are non-empty"),
    };

    let scores_out = out_path(g, SCORES_FILE);
    let agg_out = out_path(g, AGGREGATE_FILE);
    jsonl::write_file(&scores_out, &rows)?;
    write_json(&agg_out, &aggregate)?;
    log::info!(
        "{} ({}, {strategy} order): {:.2} over {} examples",
        cfg.name,
        cfg.metric,
        aggregate.score,
        aggregate.n
    );
    Provenance::new("eval", json!({ "dataset": a.dataset, "config": cfg }))
        .input("qa", &a.qa)?
        .input("predictions", &a.predictions)?
        .input("contexts", &a.contexts)?
        .write_for(&[&scores_out, &agg_out])
}

fn analyze(g: &GlobalArgs, settings: &Settings, a: &AnalyzeArgs) -> CliResult<()> {
    let cfg = settings.dataset(&a.dataset)?;
    let records = load_qa(&a.qa)?;
    let rows: Vec<EvalRow> = jsonl::read_file(&a.scores)?;

    let perplexity = if a.no_perplexity {
        None
    } else {
        Some(zero_shot_perplexity(&rows)?)
    };
    let filter = PresenceFilter {
        drop_genre: cfg.drop_genre_questions,
    };
    let answer_presence = answer_presence_report(&rows, &records, filter)?;
    let context_length = context_length_report(&rows)?;

    let mut grouped: BTreeMap<String, (Option<f64>, StrategyScores)> = BTreeMap::new();
    for path in &a.compare {
        let agg: Aggregate = read_json(path)?;
        let (standard_len, entry) = grouped.entry(agg.dataset.clone()).or_insert_with(|| {
            (
                None,
                StrategyScores {
                    dataset: agg.dataset.clone(),
                    median_len: agg.median_context_len,
                    scores: BTreeMap::new(),
                },
            )
        });
        if entry.scores.insert(agg.strategy, agg.score).is_some() {
            return Err(docqa::Error::Validation(format!(
                "{}: second {} aggregate for {}",
                path.display(),
                agg.strategy,
                agg.dataset
            ))
            .into());
        }
        // Report the standard-order context length, which is what the
        // shuffled and raster orders are compared against.
        if agg.strategy == Strategy::Standard {
            *standard_len = Some(agg.median_context_len);
        }
    }
    let compared: Vec<StrategyScores> = grouped
        .into_values()
        .map(|(len, mut s)| {
            if let Some(len) = len {
                s.median_len = len;
            }
            s
        })
        .collect();
    let order_sensitivity = order_sensitivity_report(&compared)?;

    let report = AnalysisReport {
        perplexity,
        answer_presence,
        context_length,
        order_sensitivity,
    };
    let out = out_path(g, ANALYSIS_FILE);
    write_json(&out, &report)?;
    let mut outputs = vec![out];
    if a.csv {
        outputs.extend(write_csvs(g, &report)?);
    }

    let mut prov = Provenance::new(
        "analyze",
        json!({ "dataset": a.dataset, "config": cfg, "perplexity": !a.no_perplexity }),
    )
    .input("qa", &a.qa)?
    .input("scores", &a.scores)?;
    for (i, path) in a.compare.iter().enumerate() {
        prov = prov.input(&format!("compare_{i}"), path)?;
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    prov.write_for(&refs)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let csv_err = |e: csv::Error| {
        CliError::Data(docqa::Error::io(path, std::io::Error::other(e.to_string())))
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| docqa::Error::io(path, e))?;
    Ok(())
}

fn write_csvs(g: &GlobalArgs, report: &AnalysisReport) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(p) = &report.perplexity {
        let path = out_path(g, "perplexity.csv");
        write_csv(&path, std::slice::from_ref(p))?;
        written.push(path);
    }
    let path = out_path(g, "answer_presence.csv");
    write_csv(&path, std::slice::from_ref(&report.answer_presence))?;
    written.push(path);
    let path = out_path(g, "context_length.csv");
    write_csv(&path, std::slice::from_ref(&report.context_length))?;
    written.push(path);
    let path = out_path(g, "order_sensitivity.csv");
    if report.order_sensitivity.is_empty() {
        fs::write(&path, "dataset,median_len,delta\n").map_err(|e| docqa::Error::io(&path, e))?;
    } else {
        write_csv(&path, &report.order_sensitivity)?;
    }
    written.push(path);
    Ok(written)
}

fn sample(g: &GlobalArgs, a: &SampleArgs) -> CliResult<()> {
    let strategy = match a.strategy {
        MixtureArg::Uniform => MixtureStrategy::Uniform,
        MixtureArg::Normalized => MixtureStrategy::Normalized,
    };
    let mut names = HashSet::new();
    if let Some((dup, _)) = a.datasets.iter().find(|(n, _)| !names.insert(n.as_str())) {
        return Err(CliError::Usage(format!("dataset {dup} given twice")));
    }
    let draws = sample_mixture(
        &a.datasets,
        strategy,
        derive_seed(g.seed, "sample"),
        a.draws,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let out = out_path(g, SCHEDULE_FILE);
    jsonl::write_file(&out, &draws)?;
    log::info!("wrote {} draws", draws.len());
    Provenance::new(
        "sample",
        json!({
            "datasets": a.datasets,
            "strategy": strategy,
            "draws": a.draws,
            "seed": g.seed,
        }),
    )
    .write_for(&[&out])
}
