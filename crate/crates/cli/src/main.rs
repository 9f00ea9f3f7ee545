use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qppbench::apae::{apae_multi_metric, apae_single_metric, format_per_query, Aggregator};
use qppbench::corpus::{read_corpus, read_topics, Index, Query, Tokenizer};
use qppbench::harness::{
    agreement_table, format_agreement, format_stability, parse_system_values, run_experiment, stability_matrix,
    write_reports, Evaluator, ExperimentConfig, HarnessError, StabilityAxis, Target,
};
use qppbench::listwise::{kendall_tau, one_minus_sare, pearson_r, rank_queries, spearman_rho, Outcome, RankingSource};
use qppbench::metrics::{evaluate_runs, format_metric_scores, parse_metric_list, parse_metric_scores, MetricId, Qrels};
use qppbench::qpp::{
    format_qpp_scores, parse_qpp_scores, predict_or_zero, QppInput, QppMethod, QppScore, DEFAULT_FEEDBACK_MU,
};
use qppbench::retrieval::{read_run_file, retrieve_topk, write_run, RankedList, RetrievalModel, DEFAULT_DEPTH};

#[derive(Parser)]
#[command(name = "qppbench", version, about = "Retrieval, QPP and QPP evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the index and print collection statistics as JSON.
    Index(IndexArgs),
    /// Retrieve the top-k documents per topic and write a TREC run.
    Retrieve(RetrieveArgs),
    /// Per-query metric values of a run.
    Metrics(MetricsArgs),
    /// Per-query predictor values for a run.
    Qpp(QppArgs),
    /// Listwise and APAE evaluation of predictor scores against metric scores.
    Eval(EvalArgs),
    /// Agreement table between listwise and APAE system rankings.
    Agreement(AgreementArgs),
    /// Stability matrix of system rankings across metrics or models.
    Stability(StabilityArgs),
    /// Run the full experiment described by a config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// One stopword per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

impl CorpusArgs {
    fn tokenizer(&self) -> Result<Tokenizer> {
        Ok(match &self.stopwords {
            Some(p) => Tokenizer::from_stopword_file(p).map_err(HarnessError::from)?,
            None => Tokenizer::new(),
        })
    }

    fn index(&self) -> Result<(Index, Tokenizer)> {
        let tok = self.tokenizer()?;
        let docs = read_corpus(&self.corpus).map_err(HarnessError::from)?;
        let index = Index::build(docs, &tok).map_err(HarnessError::from)?;
        Ok((index, tok))
    }
}

#[derive(Args)]
struct ModelArgs {
    /// `bm25`, `lmdir`, `lmjm`, or a full spec such as `bm25:0.7,0.3`.
    #[arg(long)]
    model: String,
    /// Comma-separated parameters when `--model` is a bare family name.
    #[arg(long)]
    model_params: Option<String>,
}

impl ModelArgs {
    fn model(&self) -> Result<RetrievalModel> {
        let m = match &self.model_params {
            Some(p) => RetrievalModel::from_parts(&self.model, p),
            None => self.model.parse(),
        };
        Ok(m.map_err(HarnessError::from)?)
    }
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    topics: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_DEPTH)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated, e.g. `AP@100,nDCG@10`.
    #[arg(long, default_value = "AP@100,nDCG@100,P@10,R@100")]
    metrics: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QppArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    run: PathBuf,
    /// Model that produced the run; its scores define the collection score.
    #[command(flatten)]
    model: ModelArgs,
    /// Predictor, repeatable: `NQC`, `NQC:k=50`, `UEF-WIG:k=5,fb_docs=10,fb_terms=50`.
    #[arg(long, required = true)]
    qpp: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_FEEDBACK_MU)]
    feedback_mu: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictor scores (`query_id method raw_score`).
    #[arg(long)]
    scores: PathBuf,
    /// Metric scores (`query_id metric value`).
    #[arg(long)]
    metric_scores: PathBuf,
    /// Target of the listwise evaluators.
    #[arg(long, default_value = "AP@100")]
    metric: String,
    /// Target set of APAE; defaults to `--metric`.
    #[arg(long)]
    metrics: Option<String>,
    /// Repeatable; defaults to all three.
    #[arg(long)]
    aggregator: Vec<String>,
    /// Write per-query APAE values here.
    #[arg(long)]
    per_query: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgreementArgs {
    /// `system_values.tsv` from `experiment`.
    #[arg(long)]
    values: PathBuf,
    /// Takes models, targets and evaluators from this experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable; defaults to every model in the values file.
    #[arg(long)]
    model: Vec<String>,
    #[arg(long, default_value = "AP@100")]
    metric: String,
    #[arg(long, default_value = "AP@100,nDCG@100,P@10,R@100")]
    metrics: String,
    #[arg(long)]
    aggregator: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    values: PathBuf,
    /// `metric` (fixed model, varying metrics) or `model` (fixed metric, varying models).
    #[arg(long)]
    axis: String,
    #[arg(long)]
    fixed: String,
    /// Comma-separated metrics or models (models separated by `;`).
    #[arg(long)]
    varying: String,
    #[arg(long, default_value = "kendall")]
    evaluator: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("[report] {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("[report] {}", p.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_text(path: &Path, stage: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("[{stage}] {}", path.display()))
}

fn sorted_topics(path: &Path, tok: &Tokenizer) -> Result<Vec<Query>> {
    let mut topics = read_topics(path, tok).map_err(HarnessError::from)?;
    topics.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(topics)
}

fn cmd_index(a: &IndexArgs) -> Result<()> {
    let (index, _) = a.corpus.index()?;
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&index.summary())? + "\n"),
    )
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<()> {
    let model = a.model.model()?;
    let (index, tok) = a.corpus.index()?;
    let topics = sorted_topics(&a.topics, &tok)?;
    let lists = qppbench::exec::map(&topics, |q| retrieve_topk(&model, &index, q, a.k));
    let mut buf = Vec::new();
    write_run(&mut buf, &lists)?;
    emit(a.out.as_deref(), &String::from_utf8(buf)?)
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let lists = read_run_file(&a.run).map_err(HarnessError::from)?;
    let qrels = Qrels::read(&a.qrels).map_err(HarnessError::from)?;
    let mut metrics = parse_metric_list(&a.metrics).map_err(HarnessError::from)?;
    metrics.sort();
    metrics.dedup();
    emit(
        a.out.as_deref(),
        &format_metric_scores(&evaluate_runs(&lists, &qrels, &metrics)),
    )
}

fn cmd_qpp(a: &QppArgs) -> Result<()> {
    let model = a.model.model()?;
    let methods = a
        .qpp
        .iter()
        .map(|s| s.parse::<QppMethod>().map_err(HarnessError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let (index, tok) = a.corpus.index()?;
    let topics = sorted_topics(&a.topics, &tok)?;
    let mut lists: HashMap<String, RankedList> = read_run_file(&a.run)
        .map_err(HarnessError::from)?
        .into_iter()
        .map(|l| (l.query_id.clone(), l))
        .collect();
    let pairs: Vec<(&Query, RankedList)> = topics
        .iter()
        .map(|q| {
            let list = lists.remove(&q.query_id).unwrap_or_else(|| RankedList {
                query_id: q.query_id.clone(),
                tag: model.to_string(),
                entries: Vec::new(),
            });
            (q, list)
        })
        .collect();
    if !lists.is_empty() {
        log::warn!("{} run queries have no topic and are ignored", lists.len());
    }
    let input = QppInput {
        index: &index,
        model: &model,
        feedback_mu: a.feedback_mu,
    };
    let mut scores = Vec::new();
    for m in &methods {
        let values = qppbench::exec::try_map(&pairs, |(q, list)| predict_or_zero(m, q, list, &input))
            .map_err(HarnessError::from)?;
        for ((q, _), raw) in pairs.iter().zip(values) {
            scores.push(QppScore {
                query_id: q.query_id.clone(),
                method: m.to_string(),
                raw,
                normalized: None,
            });
        }
    }
    emit(a.out.as_deref(), &format_qpp_scores(&scores))
}

fn na(o: Outcome) -> String {
    o.value().map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn parse_aggregators(v: &[String]) -> Result<Vec<Aggregator>> {
    if v.is_empty() {
        return Ok(Aggregator::ALL.to_vec());
    }
    Ok(v.iter()
        .map(|s| s.parse::<Aggregator>().map_err(HarnessError::from))
        .collect::<Result<_, _>>()?)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let listwise_metric: MetricId = a.metric.parse().map_err(HarnessError::from)?;
    let apae_metrics = match &a.metrics {
        Some(s) => parse_metric_list(s).map_err(HarnessError::from)?,
        None => vec![listwise_metric],
    };
    let target = Target::set(apae_metrics);
    let aggregators = parse_aggregators(&a.aggregator)?;

    let metric_scores = parse_metric_scores(&read_text(&a.metric_scores, "metrics")?).map_err(HarnessError::from)?;
    let mut mu: HashMap<MetricId, HashMap<String, f64>> = HashMap::new();
    for s in metric_scores {
        mu.entry(s.metric).or_default().insert(s.query_id, s.value);
    }
    let qpp = parse_qpp_scores(&read_text(&a.scores, "qpp")?, true).map_err(HarnessError::from)?;
    let mut methods: Vec<String> = Vec::new();
    let mut phi: HashMap<String, MethodScores> = HashMap::new();
    for s in qpp {
        if !methods.contains(&s.method) {
            methods.push(s.method.clone());
        }
        let e = phi.entry(s.method).or_default();
        e.0.insert(s.query_id.clone(), s.normalized.expect("normalized on parse"));
        e.1.push((s.query_id, s.raw));
    }

    let missing = |m: &MetricId| HarnessError::Evaluate(format!("no {m} values in {}", a.metric_scores.display()));
    let lw_mu = mu.get(&listwise_metric).ok_or_else(|| missing(&listwise_metric))?;
    let mut out = String::from("method\tevaluator\ttarget\tvalue\tn_queries\n");
    let mut per_query = String::new();
    for method in &methods {
        let (normalized, raw) = &phi[method];
        let mut x = Vec::with_capacity(raw.len());
        let mut y = Vec::with_capacity(raw.len());
        for (q, v) in raw {
            let m = lw_mu
                .get(q)
                .ok_or_else(|| HarnessError::Evaluate(format!("query {q} has no {listwise_metric} value")))?;
            x.push(*m);
            y.push(*v);
        }
        let ids: Vec<&str> = raw.iter().map(|(q, _)| q.as_str()).collect();
        let by_mu = rank_queries(ids.iter().copied().zip(x.iter().copied()), RankingSource::ByMetric)
            .map_err(HarnessError::from)?;
        let by_phi = rank_queries(ids.iter().copied().zip(y.iter().copied()), RankingSource::ByQpp)
            .map_err(HarnessError::from)?;
        let sare = one_minus_sare(&by_mu, &by_phi).map_err(HarnessError::from)?;
        let listwise = [
            ("pearson", pearson_r(&x, &y).map_err(HarnessError::from)?),
            ("spearman", spearman_rho(&x, &y).map_err(HarnessError::from)?),
            ("kendall", kendall_tau(&x, &y).map_err(HarnessError::from)?),
            ("sare", Outcome::Value(sare.mean)),
        ];
        for (name, o) in listwise {
            out.push_str(&format!(
                "{method}\t{name}\t{listwise_metric}\t{}\t{}\n",
                na(o),
                x.len()
            ));
        }

        let metrics = target.metrics();
        for &agg in &aggregators {
            let result = if metrics.len() == 1 {
                apae_single_metric(mu.get(&metrics[0]).ok_or_else(|| missing(&metrics[0]))?, normalized)
            } else {
                let set = metrics
                    .iter()
                    .map(|m| Ok((*m, mu.get(m).ok_or_else(|| missing(m))?.clone())))
                    .collect::<Result<HashMap<_, _>, HarnessError>>()?;
                apae_multi_metric(&set, normalized, agg)
            }
            .map_err(HarnessError::from)?;
            out.push_str(&format!(
                "{method}\t{}\t{target}\t{}\t{}\n",
                Evaluator::Apae(agg),
                result.mean,
                result.per_query.len()
            ));
            per_query.push_str(&format_per_query(&format!("{method}\t{agg}"), &result));
            if metrics.len() == 1 {
                // a single metric gives the same values under every aggregator
                break;
            }
        }
    }
    if let Some(p) = &a.per_query {
        emit(Some(p), &per_query)?;
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_agreement(a: &AgreementArgs) -> Result<()> {
    let values = parse_system_values(&read_text(&a.values, "evaluate")?)?;
    let (models, listwise_target, apae_target, listwise, aggregators) = match &a.config {
        Some(p) => {
            let cfg = ExperimentConfig::from_file(p)?;
            (
                cfg.models.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
                cfg.agreement_metric.to_string(),
                cfg.apae_target().label(),
                cfg.listwise_evaluators.clone(),
                cfg.aggregators.clone(),
            )
        }
        None => {
            let models = if a.model.is_empty() {
                let mut seen: Vec<String> = Vec::new();
                for r in &values.rows {
                    if !seen.contains(&r.model) {
                        seen.push(r.model.clone());
                    }
                }
                seen
            } else {
                a.model.clone()
            };
            let metric: MetricId = a.metric.parse().map_err(HarnessError::from)?;
            let set = Target::set(parse_metric_list(&a.metrics).map_err(HarnessError::from)?);
            (
                models,
                metric.to_string(),
                set.label(),
                vec![
                    Evaluator::Pearson,
                    Evaluator::Spearman,
                    Evaluator::Kendall,
                    Evaluator::OneMinusSare,
                ],
                parse_aggregators(&a.aggregator)?,
            )
        }
    };
    let apae: Vec<Evaluator> = aggregators.into_iter().map(Evaluator::Apae).collect();
    let table = agreement_table(&values, &models, &listwise_target, &apae_target, &listwise, &apae)?;
    emit(a.out.as_deref(), &format_agreement(&table))
}

fn cmd_stability(a: &StabilityArgs) -> Result<()> {
    let values = parse_system_values(&read_text(&a.values, "evaluate")?)?;
    let axis: StabilityAxis = a.axis.parse()?;
    let evaluator: Evaluator = a.evaluator.parse()?;
    let varying: Vec<String> = match axis {
        StabilityAxis::Metric => parse_metric_list(&a.varying)
            .map_err(HarnessError::from)?
            .iter()
            .map(|m| m.to_string())
            .collect(),
        StabilityAxis::Model => a
            .varying
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<RetrievalModel>()
                    .map(|m| m.to_string())
                    .map_err(HarnessError::from)
            })
            .collect::<Result<_, _>>()?,
    };
    let fixed = match axis {
        StabilityAxis::Metric => a
            .fixed
            .parse::<RetrievalModel>()
            .map_err(HarnessError::from)?
            .to_string(),
        StabilityAxis::Model => a.fixed.parse::<MetricId>().map_err(HarnessError::from)?.to_string(),
    };
    let m = stability_matrix(&values, axis, &fixed, &varying, evaluator)?;
    emit(a.out.as_deref(), &format_stability(&m))
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&a.config)?;
    if let Some(o) = &a.out {
        cfg.output = o.clone();
    }
    if let Some(s) = a.splits {
        if s == 0 {
            bail!(HarnessError::Config("--splits must be at least 1".into()));
        }
        cfg.n_splits = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.k {
        if k == 0 {
            bail!(HarnessError::Config("--k must be at least 1".into()));
        }
        cfg.k = k;
    }
    let report = run_experiment(&cfg)?;
    write_reports(&report, &cfg.output)?;
    print!("{}", format_agreement(&report.agreement));
    log::info!("reports written to {}", cfg.output.display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("QPPBENCH_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("[config] QPPBENCH_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("[config] cannot configure worker threads")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Qpp(a) => cmd_qpp(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Agreement(a) => cmd_agreement(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

/// Normalized scores by query, and raw scores in input order.
type MethodScores = (HashMap<String, f64>, Vec<(String, f64)>);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // stage errors already embed their source; add only causes not yet shown
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            let msg = msg.replace(['\n', '\r'], " ");
            eprintln!("qppbench: error: {msg}");
            ExitCode::from(2)
        }
    }
}
