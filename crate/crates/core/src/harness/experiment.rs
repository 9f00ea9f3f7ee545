use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::evaluate::{evaluate_context, EvalContext, Evaluator, ScoreTable, Target};
use super::splits::{make_splits, SplitPlan};
use super::tables::{
    agreement_table, format_agreement, format_stability, format_system_values, stability_matrix, AgreementTable,
    StabilityAxis, StabilityMatrix, SystemValue, SystemValues,
};
use super::HarnessError;
use crate::corpus::{read_corpus, read_topics, Document, Index, IndexSummary, Query, Tokenizer};
use crate::exec;
use crate::listwise::Outcome;
use crate::metrics::{format_metric_scores, MetricId, MetricScore, Qrels};
use crate::qpp::{
    avg_idf, clarity_of, format_qpp_scores, nqc_from_scores, relevance_model, rerank_by_relevance_model,
    uef_similarity, wig_from_scores, QppError, QppKind, QppMethod, QppParams, QppScore,
};
use crate::retrieval::{collection_score, retrieve_topk, write_run, RankedList, RetrievalModel};

/// Loaded collection, evaluated queries (sorted by id) and judgments.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub index: Index,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

impl Workbench {
    /// Keeps only topics with judgments.
    pub fn new(
        docs: Vec<Document>,
        topics: Vec<Query>,
        qrels: Qrels,
        tokenizer: &Tokenizer,
    ) -> Result<Self, HarnessError> {
        let index = Index::build(docs, tokenizer)?;
        let judged: HashSet<&str> = qrels.query_ids().collect();
        let n_topics = topics.len();
        let mut queries: Vec<Query> = topics
            .into_iter()
            .filter(|q| judged.contains(q.query_id.as_str()))
            .collect();
        queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        if queries.len() < n_topics {
            log::warn!(
                "{} of {n_topics} topics have no judgments and are skipped",
                n_topics - queries.len()
            );
        }
        let with_topic: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        let orphans = judged.iter().filter(|q| !with_topic.contains(*q)).count();
        if orphans > 0 {
            log::warn!("{orphans} judged queries have no topic and are skipped");
        }
        drop(judged);
        Ok(Self { index, queries, qrels })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let tokenizer = match &cfg.stopwords {
            Some(p) => Tokenizer::from_stopword_file(p)?,
            None => Tokenizer::new(),
        };
        let docs = read_corpus(&cfg.corpus)?;
        let topics = read_topics(&cfg.topics, &tokenizer)?;
        let qrels = Qrels::read(&cfg.qrels)?;
        Self::new(docs, topics, qrels, &tokenizer)
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.queries.iter().map(|q| q.query_id.clone()).collect()
    }

    pub fn retrieve(&self, model: &RetrievalModel, k: usize) -> Vec<RankedList> {
        exec::map(&self.queries, |q| retrieve_topk(model, &self.index, q, k))
    }
}

/// Memoizes the pieces shared between grid points of one query.
struct QueryCache<'a> {
    query: &'a Query,
    ranked: &'a RankedList,
    index: &'a Index,
    model: &'a RetrievalModel,
    mu: f64,
    scores: Vec<f64>,
    collection: Option<f64>,
    feedback: HashMap<(usize, usize), (f64, f64)>,
}

impl<'a> QueryCache<'a> {
    fn collection(&mut self) -> Result<f64, QppError> {
        if let Some(c) = self.collection {
            return Ok(c);
        }
        let c = collection_score(self.model, self.index, self.query)?;
        self.collection = Some(c);
        Ok(c)
    }

    /// (clarity, similarity between the list and its feedback re-ranking)
    fn feedback(&mut self, fb_docs: usize, fb_terms: usize) -> Result<(f64, f64), QppError> {
        if let Some(&v) = self.feedback.get(&(fb_docs, fb_terms)) {
            return Ok(v);
        }
        let rm = relevance_model(self.query, self.ranked, self.index, fb_docs, fb_terms, self.mu)?;
        let kappa = if self.ranked.len() < 2 {
            1.0
        } else {
            uef_similarity(
                self.ranked,
                &rerank_by_relevance_model(self.ranked, &rm, self.index, self.mu)?,
            )?
        };
        let v = (clarity_of(&rm, self.index), kappa);
        self.feedback.insert((fb_docs, fb_terms), v);
        Ok(v)
    }

    fn nqc(&mut self, k: Option<usize>) -> Result<f64, QppError> {
        let k = k.unwrap_or(self.scores.len());
        if self.scores.len().min(k) < 2 {
            return Ok(0.0);
        }
        let c = self.collection()?;
        nqc_from_scores(&self.scores, c, k)
    }

    fn wig(&mut self, k: Option<usize>) -> Result<f64, QppError> {
        let k = k.unwrap_or(self.scores.len());
        let c = self.collection()?;
        wig_from_scores(&self.scores, c, self.query.terms.len(), k)
    }

    fn value(&mut self, kind: QppKind, p: QppParams) -> Result<f64, QppError> {
        if kind == QppKind::AvgIdf {
            return Ok(avg_idf(self.query, self.index));
        }
        // nothing retrieved: post-retrieval predictors have no evidence
        if self.ranked.is_empty() {
            return Ok(0.0);
        }
        let fb = || (p.fb_docs.unwrap_or(10), p.fb_terms.unwrap_or(100));
        Ok(match kind {
            QppKind::AvgIdf => unreachable!(),
            QppKind::Clarity => {
                let (d, t) = fb();
                self.feedback(d, t)?.0
            }
            QppKind::Nqc => self.nqc(p.k)?,
            QppKind::Wig => self.wig(p.k)?,
            QppKind::UefClarity => {
                let (d, t) = fb();
                let (c, kappa) = self.feedback(d, t)?;
                kappa * c
            }
            QppKind::UefNqc => {
                let (d, t) = fb();
                let base = self.nqc(p.k)?;
                self.feedback(d, t)?.1 * base
            }
            QppKind::UefWig => {
                let (d, t) = fb();
                let base = self.wig(p.k)?;
                self.feedback(d, t)?.1 * base
            }
        })
    }
}

/// Retrieves with `model`, evaluates every metric and computes every grid
/// point of every predictor, for all workbench queries.
pub fn build_score_table(
    wb: &Workbench,
    model: &RetrievalModel,
    k: usize,
    metrics: &[MetricId],
    grids: &BTreeMap<QppKind, Vec<QppParams>>,
    feedback_mu: f64,
) -> Result<(ScoreTable, Vec<RankedList>), HarnessError> {
    let runs = wb.retrieve(model, k);
    let empty = runs.iter().filter(|r| r.is_empty()).count();
    if empty > 0 {
        log::warn!("{model}: {empty} queries retrieved nothing; their post-retrieval predictions are 0");
    }

    let mut metric_values = BTreeMap::new();
    for m in metrics {
        metric_values.insert(*m, runs.iter().map(|r| m.evaluate(r, &wb.qrels)).collect::<Vec<f64>>());
    }

    let pairs: Vec<(&Query, &RankedList)> = wb.queries.iter().zip(&runs).collect();
    let per_query: Vec<Vec<Vec<f64>>> = exec::try_map(&pairs, |&(query, ranked)| {
        let mut cache = QueryCache {
            query,
            ranked,
            index: &wb.index,
            model,
            mu: feedback_mu,
            scores: ranked.scores(),
            collection: None,
            feedback: HashMap::new(),
        };
        grids
            .iter()
            .map(|(&kind, grid)| {
                grid.iter()
                    .map(|&p| {
                        cache.value(kind, p).map_err(|e| QppError::InvalidMethod {
                            spec: format!("{} on query {}", QppMethod { kind, params: p }, query.query_id),
                            reason: e.to_string(),
                        })
                    })
                    .collect::<Result<Vec<f64>, QppError>>()
            })
            .collect::<Result<Vec<_>, QppError>>()
    })?;

    let mut predictors = BTreeMap::new();
    for (ki, (&kind, grid)) in grids.iter().enumerate() {
        let columns = grid
            .iter()
            .enumerate()
            .map(|(gi, &p)| (p, per_query.iter().map(|q| q[ki][gi]).collect()))
            .collect();
        predictors.insert(kind, columns);
    }

    let table = ScoreTable {
        model: model.to_string(),
        queries: wb.query_ids(),
        metrics: metric_values,
        predictors,
    };
    Ok((table, runs))
}

/// One (model, target, evaluator) cell of the analyses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextKey {
    pub model: String,
    pub target: Target,
    pub evaluator: Evaluator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningRecord {
    pub model: String,
    pub target: String,
    pub evaluator: Evaluator,
    pub method: String,
    pub split: usize,
    pub params: QppParams,
    pub train: Outcome,
    pub test: Outcome,
}

/// Tunes and tests every predictor in every context over every split, then
/// averages test values over the non-degenerate splits.
pub fn compute_system_values(
    tables: &[ScoreTable],
    contexts: &[ContextKey],
    kinds: &[QppKind],
    plan: &SplitPlan,
) -> Result<(SystemValues, Vec<TuningRecord>), HarnessError> {
    let by_model: HashMap<&str, &ScoreTable> = tables.iter().map(|t| (t.model.as_str(), t)).collect();
    let mut jobs = Vec::new();
    for c in contexts {
        let table = by_model
            .get(c.model.as_str())
            .ok_or_else(|| HarnessError::Evaluate(format!("no scores for model {}", c.model)))?;
        for &kind in kinds {
            for s in 0..plan.splits.len() {
                jobs.push((c, *table, kind, s));
            }
        }
    }

    let outcomes = exec::try_map(&jobs, |&(c, table, kind, s)| {
        let ctx = EvalContext {
            kind,
            target: c.target.clone(),
            evaluator: c.evaluator,
        };
        evaluate_context(table, &ctx, &plan.splits[s])
    })?;

    let n_splits = plan.splits.len();
    let mut rows = Vec::new();
    let mut tuning = Vec::with_capacity(jobs.len());
    for (chunk, results) in jobs.chunks(n_splits).zip(outcomes.chunks(n_splits)) {
        let (c, _, kind, _) = chunk[0];
        let valid: Vec<f64> = results.iter().filter_map(|o| o.test.value()).collect();
        let value = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
        rows.push(SystemValue {
            model: c.model.clone(),
            target: c.target.label(),
            evaluator: c.evaluator,
            method: kind.name().to_string(),
            value,
            n_valid: valid.len(),
            n_degenerate: n_splits - valid.len(),
        });
        for (s, o) in results.iter().enumerate() {
            tuning.push(TuningRecord {
                model: c.model.clone(),
                target: c.target.label(),
                evaluator: c.evaluator,
                method: kind.name().to_string(),
                split: s,
                params: o.tuned.params,
                train: o.tuned.objective,
                test: o.test,
            });
        }
    }
    Ok((SystemValues { rows }, tuning))
}

/// Every context the agreement and stability analyses need, first occurrence
/// order, no duplicates.
pub fn analysis_contexts(cfg: &ExperimentConfig) -> Vec<ContextKey> {
    let mut out: Vec<ContextKey> = Vec::new();
    let mut push = |model: &RetrievalModel, target: Target, evaluator: Evaluator| {
        let key = ContextKey {
            model: model.to_string(),
            target,
            evaluator,
        };
        if !out.contains(&key) {
            out.push(key);
        }
    };
    for m in &cfg.models {
        for &e in &cfg.listwise_evaluators {
            push(m, Target::Metric(cfg.agreement_metric), e);
        }
        for &a in &cfg.aggregators {
            push(m, cfg.apae_target(), Evaluator::Apae(a));
        }
    }
    for m in &cfg.models {
        for metric in &cfg.stability_metrics {
            for &e in &cfg.stability_evaluators {
                push(m, Target::Metric(*metric), e);
            }
        }
    }
    for metric in &cfg.stability_model_metrics {
        for m in &cfg.stability_models {
            for &e in &cfg.stability_evaluators {
                push(m, Target::Metric(*metric), e);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub index: IndexSummary,
    pub n_queries: usize,
    pub plan: SplitPlan,
    #[serde(skip)]
    pub runs: Vec<(RetrievalModel, Vec<RankedList>)>,
    #[serde(skip)]
    pub tables: Vec<ScoreTable>,
    pub system_values: SystemValues,
    #[serde(skip)]
    pub tuning: Vec<TuningRecord>,
    pub agreement: AgreementTable,
    pub stability: Vec<StabilityMatrix>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let wb = Workbench::load(cfg)?;
    run_on_workbench(&wb, cfg)
}

/// Runs the full pipeline on already loaded data.
pub fn run_on_workbench(wb: &Workbench, cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    log::info!(
        "{} documents, {} evaluated queries",
        wb.index.num_docs(),
        wb.queries.len()
    );
    let plan = make_splits(&wb.query_ids(), cfg.n_splits, cfg.seed)?;
    let metrics = cfg.all_metrics();

    let mut tables = Vec::new();
    let mut runs = Vec::new();
    for model in cfg.all_models() {
        log::info!("scoring {model}");
        let (table, run) = build_score_table(wb, &model, cfg.k, &metrics, &cfg.grids, cfg.feedback_mu)?;
        tables.push(table);
        runs.push((model, run));
    }

    let contexts = analysis_contexts(cfg);
    log::info!(
        "evaluating {} contexts over {} splits",
        contexts.len(),
        plan.splits.len()
    );
    let (values, tuning) = compute_system_values(&tables, &contexts, &cfg.qpp, &plan)?;

    let model_labels: Vec<String> = cfg.models.iter().map(|m| m.to_string()).collect();
    let apae_evals: Vec<Evaluator> = cfg.aggregators.iter().map(|&a| Evaluator::Apae(a)).collect();
    let agreement = agreement_table(
        &values,
        &model_labels,
        &cfg.agreement_metric.to_string(),
        &cfg.apae_target().label(),
        &cfg.listwise_evaluators,
        &apae_evals,
    )?;

    let mut stability = Vec::new();
    let metric_labels: Vec<String> = cfg.stability_metrics.iter().map(|m| m.to_string()).collect();
    let stab_models: Vec<String> = cfg.stability_models.iter().map(|m| m.to_string()).collect();
    for &e in &cfg.stability_evaluators {
        if metric_labels.len() >= 2 {
            for m in &model_labels {
                stability.push(stability_matrix(&values, StabilityAxis::Metric, m, &metric_labels, e)?);
            }
        }
        if stab_models.len() >= 2 {
            for metric in &cfg.stability_model_metrics {
                stability.push(stability_matrix(
                    &values,
                    StabilityAxis::Model,
                    &metric.to_string(),
                    &stab_models,
                    e,
                )?);
            }
        }
    }

    Ok(Report {
        index: wb.index.summary(),
        n_queries: wb.queries.len(),
        plan,
        runs,
        tables,
        system_values: values,
        tuning,
        agreement,
        stability,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes runs, per-query scores and the analysis tables under `out`.
pub fn write_reports(report: &Report, out: &Path) -> Result<(), HarnessError> {
    for ((model, run), table) in report.runs.iter().zip(&report.tables) {
        let stem = model.file_stem();
        let mut buf = Vec::new();
        write_run(&mut buf, run).expect("writing to memory");
        write_file(
            &out.join("runs").join(format!("{stem}.run")),
            &String::from_utf8_lossy(&buf),
        )?;

        write_file(
            &out.join("metrics").join(format!("{stem}.tsv")),
            &format_metric_scores(&table_metric_scores(table)),
        )?;

        let mut scores = Vec::new();
        for (&kind, grid) in &table.predictors {
            for (params, values) in grid {
                let method = QppMethod { kind, params: *params }.to_string();
                for (q, &raw) in table.queries.iter().zip(values) {
                    scores.push(QppScore {
                        query_id: q.clone(),
                        method: method.clone(),
                        raw,
                        normalized: None,
                    });
                }
            }
        }
        write_file(
            &out.join("qpp").join(format!("{stem}.tsv")),
            &format_qpp_scores(&scores),
        )?;
    }

    let mut splits = String::from("split\tquery_id\tpart\n");
    for (i, s) in report.plan.splits.iter().enumerate() {
        for q in &s.train {
            splits.push_str(&format!("{i}\t{q}\ttrain\n"));
        }
        for q in &s.test {
            splits.push_str(&format!("{i}\t{q}\ttest\n"));
        }
    }
    write_file(&out.join("splits.tsv"), &splits)?;

    let na = |o: Outcome| o.value().map_or_else(|| "NA".to_string(), |v| v.to_string());
    let mut tuning = String::from("model\ttarget\tevaluator\tmethod\tsplit\tparams\ttrain\ttest\n");
    for t in &report.tuning {
        tuning.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            t.model,
            t.target,
            t.evaluator,
            t.method,
            t.split,
            t.params,
            na(t.train),
            na(t.test)
        ));
    }
    write_file(&out.join("tuning.tsv"), &tuning)?;
    write_file(
        &out.join("system_values.tsv"),
        &format_system_values(&report.system_values),
    )?;
    write_file(&out.join("agreement.tsv"), &format_agreement(&report.agreement))?;
    for m in &report.stability {
        let name = match m.axis {
            StabilityAxis::Metric => format!("stability_metrics_{}_{}.tsv", file_label(&m.fixed), m.evaluator),
            StabilityAxis::Model => format!("stability_models_{}_{}.tsv", file_label(&m.fixed), m.evaluator),
        };
        write_file(&out.join(name), &format_stability(m))?;
    }
    let summary = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&out.join("summary.json"), &(summary + "\n"))?;
    Ok(())
}

fn table_metric_scores(table: &ScoreTable) -> Vec<MetricScore> {
    let mut out = Vec::new();
    for (i, q) in table.queries.iter().enumerate() {
        for (m, values) in &table.metrics {
            out.push(MetricScore {
                query_id: q.clone(),
                metric: *m,
                value: values[i],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qpp::{predict_or_zero, QppInput};
    use crate::synthetic::{generate, SyntheticSpec};

    fn small() -> Workbench {
        let data = generate(&SyntheticSpec {
            num_docs: 200,
            num_topics: 12,
            vocab_size: 800,
            seed: 5,
        });
        let tok = Tokenizer::new();
        Workbench::new(data.docs.clone(), data.queries(&tok), data.qrels(), &tok).unwrap()
    }

    fn grids() -> BTreeMap<QppKind, Vec<QppParams>> {
        QppKind::ALL.iter().map(|&k| (k, k.default_grid())).collect()
    }

    #[test]
    fn cached_predictions_equal_direct_ones() {
        let wb = small();
        let metrics: Vec<MetricId> = vec!["AP@100".parse().unwrap()];
        for model in [
            RetrievalModel::Bm25 { k1: 0.7, b: 0.3 },
            RetrievalModel::LmJelinekMercer { lambda: 0.6 },
        ] {
            let (table, runs) = build_score_table(&wb, &model, 50, &metrics, &grids(), 1000.0).unwrap();
            let input = QppInput {
                index: &wb.index,
                model: &model,
                feedback_mu: 1000.0,
            };
            for (&kind, grid) in &table.predictors {
                for (params, values) in grid {
                    let method = QppMethod::new(kind, *params).unwrap();
                    for ((q, ranked), &v) in wb.queries.iter().zip(&runs).zip(values) {
                        let direct = predict_or_zero(&method, q, ranked, &input).unwrap();
                        assert_eq!(v.to_bits(), direct.to_bits(), "{method} {}", q.query_id);
                    }
                }
            }
        }
    }

    fn config(out: &Path) -> ExperimentConfig {
        let text = r#"
            corpus = "unused"
            topics = "unused"
            qrels = "unused"
            n_splits = 4
            k = 50
            models = ["lmdir:1000", "bm25:0.7,0.3"]
            qpp = ["AvgIDF", "NQC", "WIG"]
            stability_metrics = ["AP@10", "AP@100", "R@100"]
            stability_models = ["lmdir:1000", "bm25:0.7,0.3", "lmjm:0.6"]
        "#;
        let mut cfg = ExperimentConfig::from_toml(text, Path::new(".")).unwrap();
        cfg.output = out.to_path_buf();
        cfg
    }

    #[test]
    fn experiment_shapes_and_determinism() {
        let wb = small();
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path());
        let a = run_on_workbench(&wb, &cfg).unwrap();
        assert_eq!(a.agreement.rows.len(), 2);
        assert_eq!(a.agreement.columns.len(), 4 * 3);
        // 2 evaluators × (2 fixed models + 3 fixed metrics)
        assert_eq!(a.stability.len(), 10);
        for m in &a.stability {
            for (i, row) in m.cells.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    assert_eq!(*c, m.cells[j][i]);
                    if let Some(v) = c {
                        assert!((-1.0..=1.0).contains(v));
                    }
                }
            }
        }
        let b = run_on_workbench(&wb, &cfg).unwrap();
        assert_eq!(a.system_values, b.system_values);
        assert_eq!(a.tuning, b.tuning);

        write_reports(&a, &dir.path().join("a")).unwrap();
        write_reports(&b, &dir.path().join("b")).unwrap();
        for f in [
            "agreement.tsv",
            "system_values.tsv",
            "tuning.tsv",
            "summary.json",
            "splits.tsv",
            "runs/bm25_0.7_0.3.run",
        ] {
            let x = fs::read(dir.path().join("a").join(f)).unwrap();
            let y = fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn duplicated_predictor_agrees_with_itself() {
        let wb = small();
        let cfg = config(Path::new("unused"));
        let mut rep = run_on_workbench(&wb, &cfg).unwrap();
        let dup: Vec<SystemValue> = rep
            .system_values
            .rows
            .iter()
            .filter(|r| r.method == "NQC")
            .map(|r| SystemValue {
                method: "NQC-copy".into(),
                ..r.clone()
            })
            .collect();
        rep.system_values.rows.retain(|r| r.method == "NQC");
        rep.system_values.rows.extend(dup);
        let labels: Vec<String> = cfg.stability_metrics.iter().map(|m| m.to_string()).collect();
        let m = stability_matrix(
            &rep.system_values,
            StabilityAxis::Metric,
            "lmdir:1000",
            &labels,
            Evaluator::Kendall,
        )
        .unwrap();
        // two systems with identical values tie; ties break by name, identically in every context
        for row in &m.cells {
            for c in row {
                assert_eq!(*c, Some(1.0));
            }
        }
    }
}
