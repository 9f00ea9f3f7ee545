use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::splits::Split;
use super::HarnessError;
use crate::apae::{apae_multi_metric, apae_single_metric, Aggregator};
use crate::listwise::{kendall_tau, one_minus_sare, pearson_r, rank_queries, spearman_rho, Outcome, RankingSource};
use crate::metrics::MetricId;
use crate::qpp::{min_max, QppKind, QppParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Evaluator {
    Pearson,
    Spearman,
    Kendall,
    OneMinusSare,
    Apae(Aggregator),
}

impl Evaluator {
    pub fn is_apae(&self) -> bool {
        matches!(self, Evaluator::Apae(_))
    }

    /// Short column label used in the agreement table.
    pub fn short(&self) -> &'static str {
        match self {
            Evaluator::Pearson => "r",
            Evaluator::Spearman => "rho",
            Evaluator::Kendall => "tau",
            Evaluator::OneMinusSare => "sare",
            Evaluator::Apae(Aggregator::Avg) => "avg",
            Evaluator::Apae(Aggregator::Min) => "min",
            Evaluator::Apae(Aggregator::Max) => "max",
        }
    }
}

impl fmt::Display for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evaluator::Pearson => f.write_str("pearson"),
            Evaluator::Spearman => f.write_str("spearman"),
            Evaluator::Kendall => f.write_str("kendall"),
            Evaluator::OneMinusSare => f.write_str("sare"),
            Evaluator::Apae(a) => write!(f, "apae_{a}"),
        }
    }
}

impl FromStr for Evaluator {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "pearson" | "r" => Evaluator::Pearson,
            "spearman" | "rho" => Evaluator::Spearman,
            "kendall" | "tau" => Evaluator::Kendall,
            "sare" | "one_minus_sare" | "1-sare" => Evaluator::OneMinusSare,
            other => match other.strip_prefix("apae_").or_else(|| other.strip_prefix("apae-")) {
                Some(a) => Evaluator::Apae(a.parse().map_err(|e| HarnessError::Config(format!("{e}")))?),
                None => return Err(HarnessError::Config(format!("unknown evaluator `{other}`"))),
            },
        })
    }
}

/// What a predictor is compared against: one metric, or a metric set for APAE.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Metric(MetricId),
    Set(Vec<MetricId>),
}

impl Target {
    pub fn set(mut metrics: Vec<MetricId>) -> Self {
        metrics.sort();
        metrics.dedup();
        Target::Set(metrics)
    }

    pub fn metrics(&self) -> &[MetricId] {
        match self {
            Target::Metric(m) => std::slice::from_ref(m),
            Target::Set(v) => v,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Target::Metric(m) => m.to_string(),
            Target::Set(v) => v.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("+"),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Per-query metric values and predictor values (for every grid point) for
/// one retrieval model. All vectors are aligned with `queries`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub model: String,
    /// Sorted, unique.
    pub queries: Vec<String>,
    pub metrics: BTreeMap<MetricId, Vec<f64>>,
    pub predictors: BTreeMap<QppKind, Vec<(QppParams, Vec<f64>)>>,
}

impl ScoreTable {
    pub fn indices(&self, ids: &[String]) -> Result<Vec<usize>, HarnessError> {
        ids.iter()
            .map(|q| {
                self.queries
                    .binary_search(q)
                    .map_err(|_| HarnessError::Evaluate(format!("query `{q}` not in score table for {}", self.model)))
            })
            .collect()
    }

    fn grid(&self, kind: QppKind) -> Result<&[(QppParams, Vec<f64>)], HarnessError> {
        self.predictors
            .get(&kind)
            .map(Vec::as_slice)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| HarnessError::Evaluate(format!("no scores for {kind} under {}", self.model)))
    }

    fn metric(&self, m: &MetricId) -> Result<&[f64], HarnessError> {
        self.metrics
            .get(m)
            .map(Vec::as_slice)
            .ok_or_else(|| HarnessError::Evaluate(format!("no {m} values under {}", self.model)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EvalContext {
    pub kind: QppKind,
    pub target: Target,
    pub evaluator: Evaluator,
}

/// Evaluates predictor values `phi` (aligned with the table) on a subset of
/// queries.
pub fn evaluate_values(
    table: &ScoreTable,
    phi: &[f64],
    target: &Target,
    evaluator: Evaluator,
    subset: &[usize],
) -> Result<Outcome, HarnessError> {
    let phi_sub: Vec<f64> = subset.iter().map(|&i| phi[i]).collect();
    if evaluator.is_apae() {
        let Evaluator::Apae(aggregator) = evaluator else {
            unreachable!()
        };
        let normalized = min_max(&phi_sub);
        let phi_map: HashMap<String, f64> = subset
            .iter()
            .zip(&normalized)
            .map(|(&i, &v)| (table.queries[i].clone(), v))
            .collect();
        let mu_map = |m: &MetricId| -> Result<HashMap<String, f64>, HarnessError> {
            let values = table.metric(m)?;
            Ok(subset.iter().map(|&i| (table.queries[i].clone(), values[i])).collect())
        };
        let result = match target {
            Target::Metric(m) => apae_single_metric(&mu_map(m)?, &phi_map)?,
            Target::Set(ms) => {
                let mus = ms
                    .iter()
                    .map(|m| Ok((*m, mu_map(m)?)))
                    .collect::<Result<HashMap<_, _>, HarnessError>>()?;
                apae_multi_metric(&mus, &phi_map, aggregator)?
            }
        };
        return Ok(Outcome::Value(result.mean));
    }

    let Target::Metric(metric) = target else {
        return Err(HarnessError::Evaluate(format!(
            "{evaluator} needs a single target metric, got {target}"
        )));
    };
    let values = table.metric(metric)?;
    let mu_sub: Vec<f64> = subset.iter().map(|&i| values[i]).collect();
    Ok(match evaluator {
        Evaluator::Pearson => pearson_r(&mu_sub, &phi_sub)?,
        Evaluator::Spearman => spearman_rho(&mu_sub, &phi_sub)?,
        Evaluator::Kendall => kendall_tau(&mu_sub, &phi_sub)?,
        Evaluator::OneMinusSare => {
            let ids: Vec<&str> = subset.iter().map(|&i| table.queries[i].as_str()).collect();
            let by_mu = rank_queries(ids.iter().copied().zip(mu_sub.iter().copied()), RankingSource::ByMetric)?;
            let by_phi = rank_queries(ids.iter().copied().zip(phi_sub.iter().copied()), RankingSource::ByQpp)?;
            Outcome::Value(one_minus_sare(&by_mu, &by_phi)?.mean)
        }
        Evaluator::Apae(_) => unreachable!(),
    })
}

/// Evaluates one grid point of one predictor on a subset of queries.
pub fn evaluate_subset(
    table: &ScoreTable,
    ctx: &EvalContext,
    grid_index: usize,
    subset: &[usize],
) -> Result<Outcome, HarnessError> {
    let grid = table.grid(ctx.kind)?;
    let (_, phi) = grid
        .get(grid_index)
        .ok_or_else(|| HarnessError::Evaluate(format!("grid index {grid_index} out of range for {}", ctx.kind)))?;
    evaluate_values(table, phi, &ctx.target, ctx.evaluator, subset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuneResult {
    pub grid_index: usize,
    pub params: QppParams,
    pub objective: Outcome,
}

/// Picks the grid point maximizing the evaluator on the training queries;
/// ties go to the earlier grid point. If every point is degenerate the
/// first one is used.
pub fn tune(table: &ScoreTable, ctx: &EvalContext, train: &[usize]) -> Result<TuneResult, HarnessError> {
    let grid = table.grid(ctx.kind)?;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..grid.len() {
        if let Outcome::Value(v) = evaluate_subset(table, ctx, i, train)? {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    Ok(match best {
        Some((i, v)) => TuneResult {
            grid_index: i,
            params: grid[i].0,
            objective: Outcome::Value(v),
        },
        None => {
            log::warn!(
                "{} / {} / {} on {}: every grid point degenerate on train, using the first",
                ctx.kind,
                ctx.target,
                ctx.evaluator,
                table.model
            );
            TuneResult {
                grid_index: 0,
                params: grid[0].0,
                objective: Outcome::Degenerate,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContextOutcome {
    pub tuned: TuneResult,
    pub test: Outcome,
}

/// Tunes on the split's train queries and evaluates on its test queries.
pub fn evaluate_context(table: &ScoreTable, ctx: &EvalContext, split: &Split) -> Result<ContextOutcome, HarnessError> {
    let train = table.indices(&split.train)?;
    let test = table.indices(&split.test)?;
    let tuned = tune(table, ctx, &train)?;
    let test = evaluate_subset(table, ctx, tuned.grid_index, &test)?;
    Ok(ContextOutcome { tuned, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(mu: Vec<f64>, grid: Vec<Vec<f64>>) -> ScoreTable {
        let n = mu.len();
        let queries: Vec<String> = (0..n).map(|i| format!("q{i:02}")).collect();
        let ap: MetricId = "AP@100".parse().unwrap();
        let nd: MetricId = "nDCG@100".parse().unwrap();
        let nd_values = mu.iter().map(|v| (v * 0.5 + 0.25).min(1.0)).collect();
        ScoreTable {
            model: "toy".into(),
            queries,
            metrics: BTreeMap::from([(ap, mu), (nd, nd_values)]),
            predictors: BTreeMap::from([(
                QppKind::Nqc,
                grid.into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        (
                            QppParams {
                                k: Some(i + 1),
                                ..Default::default()
                            },
                            v,
                        )
                    })
                    .collect(),
            )]),
        }
    }

    fn ctx(evaluator: Evaluator) -> EvalContext {
        EvalContext {
            kind: QppKind::Nqc,
            target: Target::Metric("AP@100".parse().unwrap()),
            evaluator,
        }
    }

    #[test]
    fn evaluator_names_roundtrip() {
        for e in [
            Evaluator::Pearson,
            Evaluator::Spearman,
            Evaluator::Kendall,
            Evaluator::OneMinusSare,
            Evaluator::Apae(Aggregator::Avg),
            Evaluator::Apae(Aggregator::Min),
            Evaluator::Apae(Aggregator::Max),
        ] {
            assert_eq!(e.to_string().parse::<Evaluator>().unwrap(), e);
        }
        assert!("apae_sum".parse::<Evaluator>().is_err());
    }

    #[test]
    fn perfect_predictor_hits_every_maximum() {
        let mu = vec![0.0, 0.3, 0.1, 1.0, 0.55, 0.7];
        let t = table(mu.clone(), vec![mu.clone()]);
        let all: Vec<usize> = (0..mu.len()).collect();
        for e in [
            Evaluator::Pearson,
            Evaluator::Spearman,
            Evaluator::Kendall,
            Evaluator::OneMinusSare,
        ] {
            assert_eq!(
                evaluate_subset(&t, &ctx(e), 0, &all).unwrap(),
                Outcome::Value(1.0),
                "{e}"
            );
        }
        let apae = ctx(Evaluator::Apae(Aggregator::Avg));
        assert_eq!(evaluate_subset(&t, &apae, 0, &all).unwrap(), Outcome::Value(1.0));
    }

    #[test]
    fn tune_picks_argmax_with_first_tie() {
        let mu = vec![0.1, 0.2, 0.3, 0.4];
        let good = vec![1.0, 2.0, 3.0, 4.0];
        let bad = vec![4.0, 3.0, 2.0, 1.0];
        let t = table(mu, vec![bad, good.clone(), good]);
        let r = tune(&t, &ctx(Evaluator::Kendall), &[0, 1, 2, 3]).unwrap();
        assert_eq!(r.grid_index, 1);
        assert_eq!(r.objective, Outcome::Value(1.0));
    }

    #[test]
    fn tune_falls_back_when_all_degenerate() {
        let t = table(vec![0.1, 0.2, 0.3], vec![vec![1.0; 3], vec![2.0; 3]]);
        let r = tune(&t, &ctx(Evaluator::Kendall), &[0, 1, 2]).unwrap();
        assert_eq!(r.grid_index, 0);
        assert!(r.objective.is_degenerate());
    }

    #[test]
    fn listwise_rejects_metric_sets() {
        let t = table(vec![0.1, 0.2], vec![vec![1.0, 2.0]]);
        let mut c = ctx(Evaluator::Kendall);
        c.target = Target::set(t.metrics.keys().copied().collect());
        assert!(evaluate_subset(&t, &c, 0, &[0, 1]).is_err());
        c.evaluator = Evaluator::Apae(Aggregator::Min);
        assert!(evaluate_subset(&t, &c, 0, &[0, 1]).is_ok());
    }

    #[test]
    fn context_tunes_on_train_only() {
        // train queries q00,q01: grid 0 wins; test queries q02,q03: grid 1 would win
        let mu = vec![0.1, 0.2, 0.3, 0.4];
        let g0 = vec![1.0, 2.0, 4.0, 3.0];
        let g1 = vec![2.0, 1.0, 3.0, 4.0];
        let t = table(mu, vec![g0, g1]);
        let split = Split {
            train: vec!["q00".into(), "q01".into()],
            test: vec!["q02".into(), "q03".into()],
        };
        let out = evaluate_context(&t, &ctx(Evaluator::Kendall), &split).unwrap();
        assert_eq!(out.tuned.grid_index, 0);
        assert_eq!(out.test, Outcome::Value(-1.0));
    }
}
