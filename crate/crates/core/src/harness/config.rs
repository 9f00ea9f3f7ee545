use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::evaluate::{Evaluator, Target};
use super::splits::DEFAULT_SPLITS;
use super::HarnessError;
use crate::apae::Aggregator;
use crate::metrics::MetricId;
use crate::qpp::{QppKind, QppMethod, QppParams, DEFAULT_FEEDBACK_MU};
use crate::retrieval::{RetrievalModel, DEFAULT_DEPTH};

/// Config file as written on disk (TOML key-value pairs).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub corpus: Option<String>,
    pub topics: Option<String>,
    pub qrels: Option<String>,
    pub stopwords: Option<String>,
    pub output: Option<String>,
    pub k: Option<usize>,
    pub n_splits: Option<usize>,
    pub seed: Option<u64>,
    pub feedback_mu: Option<f64>,
    pub models: Option<Vec<String>>,
    pub qpp: Option<Vec<String>>,
    pub agreement_metric: Option<String>,
    pub apae_metrics: Option<Vec<String>>,
    pub listwise_evaluators: Option<Vec<String>>,
    pub aggregators: Option<Vec<String>>,
    pub stability_evaluators: Option<Vec<String>>,
    pub stability_metrics: Option<Vec<String>>,
    pub stability_models: Option<Vec<String>>,
    pub stability_model_metrics: Option<Vec<String>>,
    /// Per-method grid overrides, e.g. `NQC = ["k=10", "k=50"]`.
    pub grids: Option<BTreeMap<String, Vec<String>>>,
}

/// Validated experiment configuration. Defaults reproduce the full grid:
/// LMJM(0.6), LMDir(1000), BM25(0.7,0.3) at depth 100 over 30 splits.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub topics: PathBuf,
    pub qrels: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub output: PathBuf,
    pub k: usize,
    pub n_splits: usize,
    pub seed: u64,
    pub feedback_mu: f64,
    pub models: Vec<RetrievalModel>,
    pub qpp: Vec<QppKind>,
    pub grids: BTreeMap<QppKind, Vec<QppParams>>,
    pub agreement_metric: MetricId,
    pub apae_metrics: Vec<MetricId>,
    pub listwise_evaluators: Vec<Evaluator>,
    pub aggregators: Vec<Aggregator>,
    pub stability_evaluators: Vec<Evaluator>,
    pub stability_metrics: Vec<MetricId>,
    pub stability_models: Vec<RetrievalModel>,
    pub stability_model_metrics: Vec<MetricId>,
}

fn cfg_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn parse_all<T, E>(items: &[String]) -> Result<Vec<T>, HarnessError>
where
    T: std::str::FromStr<Err = E>,
    E: std::fmt::Display,
{
    items.iter().map(|s| s.parse::<T>().map_err(cfg_err)).collect()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let raw: RawConfig = toml::from_str(text).map_err(cfg_err)?;
        Self::from_raw(raw, base)
    }

    pub fn from_raw(raw: RawConfig, base: &Path) -> Result<Self, HarnessError> {
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let required = |v: &Option<String>, key: &str| {
            v.as_deref()
                .map(resolve)
                .ok_or_else(|| cfg_err(format!("missing required key `{key}`")))
        };

        let models = parse_all(
            &raw.models
                .clone()
                .unwrap_or_else(|| strings(&["lmjm:0.6", "lmdir:1000", "bm25:0.7,0.3"])),
        )?;
        let qpp: Vec<QppKind> = match &raw.qpp {
            Some(v) => parse_all(v)?,
            None => QppKind::ALL.to_vec(),
        };
        let mut grids = BTreeMap::new();
        for kind in &qpp {
            grids.insert(*kind, kind.default_grid());
        }
        for (name, points) in raw.grids.clone().unwrap_or_default() {
            let kind: QppKind = name.parse().map_err(cfg_err)?;
            let grid = points
                .iter()
                .map(|p| {
                    format!("{kind}:{p}")
                        .parse::<QppMethod>()
                        .map(|m| m.params)
                        .map_err(cfg_err)
                })
                .collect::<Result<Vec<_>, _>>()?;
            if grid.is_empty() {
                return Err(cfg_err(format!("empty grid for {kind}")));
            }
            grids.insert(kind, grid);
        }

        let cfg = Self {
            corpus: required(&raw.corpus, "corpus")?,
            topics: required(&raw.topics, "topics")?,
            qrels: required(&raw.qrels, "qrels")?,
            stopwords: raw.stopwords.as_deref().map(resolve),
            output: resolve(raw.output.as_deref().unwrap_or("qppbench-out")),
            k: raw.k.unwrap_or(DEFAULT_DEPTH),
            n_splits: raw.n_splits.unwrap_or(DEFAULT_SPLITS),
            seed: raw.seed.unwrap_or(0),
            feedback_mu: raw.feedback_mu.unwrap_or(DEFAULT_FEEDBACK_MU),
            models,
            qpp,
            grids,
            agreement_metric: raw
                .agreement_metric
                .as_deref()
                .unwrap_or("AP@100")
                .parse()
                .map_err(cfg_err)?,
            apae_metrics: parse_all(
                &raw.apae_metrics
                    .clone()
                    .unwrap_or_else(|| strings(&["AP@100", "nDCG@100", "P@10", "R@100"])),
            )?,
            listwise_evaluators: parse_all(
                &raw.listwise_evaluators
                    .clone()
                    .unwrap_or_else(|| strings(&["pearson", "spearman", "kendall", "sare"])),
            )?,
            aggregators: parse_all(
                &raw.aggregators
                    .clone()
                    .unwrap_or_else(|| strings(&["avg", "min", "max"])),
            )?,
            stability_evaluators: parse_all(
                &raw.stability_evaluators
                    .clone()
                    .unwrap_or_else(|| strings(&["kendall", "apae_avg"])),
            )?,
            stability_metrics: parse_all(
                &raw.stability_metrics
                    .clone()
                    .unwrap_or_else(|| strings(&["AP@10", "AP@100", "R@10", "R@100", "nDCG@10", "nDCG@100"])),
            )?,
            stability_models: parse_all(&raw.stability_models.clone().unwrap_or_else(|| {
                strings(&[
                    "lmjm:0.3",
                    "lmjm:0.6",
                    "bm25:0.7,0.3",
                    "bm25:0.3,0.7",
                    "lmdir:500",
                    "lmdir:1000",
                ])
            }))?,
            stability_model_metrics: parse_all(
                &raw.stability_model_metrics
                    .clone()
                    .unwrap_or_else(|| strings(&["AP@100", "nDCG@100", "R@100"])),
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.k == 0 {
            return Err(cfg_err("k must be at least 1"));
        }
        if self.n_splits == 0 {
            return Err(cfg_err("n_splits must be at least 1"));
        }
        if self.feedback_mu.is_nan() || self.feedback_mu <= 0.0 {
            return Err(cfg_err("feedback_mu must be positive"));
        }
        if self.models.is_empty() {
            return Err(cfg_err("no retrieval models configured"));
        }
        if self.qpp.len() < 2 {
            return Err(cfg_err("at least two QPP methods are needed to rank systems"));
        }
        if self.apae_metrics.is_empty() {
            return Err(cfg_err("apae_metrics is empty"));
        }
        if self.listwise_evaluators.iter().any(Evaluator::is_apae) {
            return Err(cfg_err("listwise_evaluators must not contain APAE evaluators"));
        }
        let mut distinct = self.apae_metrics.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() != self.apae_metrics.len() {
            return Err(cfg_err("apae_metrics contains duplicates"));
        }
        Ok(())
    }

    pub fn apae_target(&self) -> Target {
        Target::set(self.apae_metrics.clone())
    }

    /// Every retrieval model any analysis needs, first occurrence order.
    pub fn all_models(&self) -> Vec<RetrievalModel> {
        let mut out: Vec<RetrievalModel> = Vec::new();
        for m in self.models.iter().chain(&self.stability_models) {
            if !out.contains(m) {
                out.push(*m);
            }
        }
        out
    }

    /// Every metric any analysis needs, sorted.
    pub fn all_metrics(&self) -> Vec<MetricId> {
        let mut out: Vec<MetricId> = std::iter::once(self.agreement_metric)
            .chain(self.apae_metrics.iter().copied())
            .chain(self.stability_metrics.iter().copied())
            .chain(self.stability_model_metrics.iter().copied())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
