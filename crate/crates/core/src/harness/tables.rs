use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::evaluate::Evaluator;
use super::HarnessError;
use crate::listwise::ordering_tau;

/// Split-averaged value of one QPP system in one evaluation context.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemValue {
    pub model: String,
    pub target: String,
    pub evaluator: Evaluator,
    pub method: String,
    /// Mean over non-degenerate splits; `None` if every split was degenerate.
    pub value: Option<f64>,
    pub n_valid: usize,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SystemValues {
    pub rows: Vec<SystemValue>,
}

impl SystemValues {
    pub fn select<'a>(
        &'a self,
        model: &'a str,
        target: &'a str,
        evaluator: Evaluator,
    ) -> impl Iterator<Item = &'a SystemValue> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.model == model && r.target == target && r.evaluator == evaluator)
    }

    /// Systems ordered by value, best first, ties by method name. `None`
    /// when some system has no defined value.
    pub fn ranking(
        &self,
        model: &str,
        target: &str,
        evaluator: Evaluator,
    ) -> Result<Option<SystemRanking>, HarnessError> {
        let rows: Vec<&SystemValue> = self.select(model, target, evaluator).collect();
        if rows.len() < 2 {
            return Err(HarnessError::Evaluate(format!(
                "need at least 2 QPP systems for {model} / {target} / {evaluator}, found {}",
                rows.len()
            )));
        }
        let mut scored = Vec::with_capacity(rows.len());
        for r in rows {
            match r.value {
                Some(v) => scored.push((r.method.as_str(), v)),
                None => return Ok(None),
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Some(SystemRanking {
            evaluator,
            context: format!("{model} | {target}"),
            order: scored.into_iter().map(|(m, _)| m.to_string()).collect(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemRanking {
    pub evaluator: Evaluator,
    pub context: String,
    pub order: Vec<String>,
}

fn rank_tau(a: &Option<SystemRanking>, b: &Option<SystemRanking>) -> Result<Option<f64>, HarnessError> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(ordering_tau(&a.order, &b.order)?.value()),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub model: String,
    /// One cell per column; `None` when a ranking was undefined.
    pub cells: Vec<Option<f64>>,
}

/// Kendall's tau between system rankings induced by a listwise evaluator and
/// by an APAE evaluator, per retrieval model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementTable {
    pub listwise_target: String,
    pub apae_target: String,
    /// (apae evaluator, listwise evaluator), apae-major.
    pub columns: Vec<(Evaluator, Evaluator)>,
    pub rows: Vec<AgreementRow>,
}

pub fn agreement_table(
    values: &SystemValues,
    models: &[String],
    listwise_target: &str,
    apae_target: &str,
    listwise: &[Evaluator],
    apae: &[Evaluator],
) -> Result<AgreementTable, HarnessError> {
    let columns: Vec<(Evaluator, Evaluator)> = apae
        .iter()
        .flat_map(|&a| listwise.iter().map(move |&l| (a, l)))
        .collect();
    let mut rows = Vec::with_capacity(models.len());
    for model in models {
        let mut cells = Vec::with_capacity(columns.len());
        for &(a, l) in &columns {
            let ra = values.ranking(model, apae_target, a)?;
            let rl = values.ranking(model, listwise_target, l)?;
            cells.push(rank_tau(&rl, &ra)?);
        }
        rows.push(AgreementRow {
            model: model.clone(),
            cells,
        });
    }
    Ok(AgreementTable {
        listwise_target: listwise_target.to_string(),
        apae_target: apae_target.to_string(),
        columns,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StabilityAxis {
    /// Fixed retrieval model, varying target metric.
    Metric,
    /// Fixed target metric, varying retrieval model.
    Model,
}

impl fmt::Display for StabilityAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityAxis::Metric => "metric",
            StabilityAxis::Model => "model",
        })
    }
}

impl FromStr for StabilityAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "metric" | "metrics" | "metric_pairs" => Ok(StabilityAxis::Metric),
            "model" | "models" | "model_pairs" => Ok(StabilityAxis::Model),
            other => Err(HarnessError::Config(format!("unknown stability axis `{other}`"))),
        }
    }
}

/// Pairwise Kendall's tau between the system rankings of contexts that
/// differ only along one axis. Symmetric; `None` marks a degenerate cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityMatrix {
    pub axis: StabilityAxis,
    pub fixed: String,
    pub evaluator: Evaluator,
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl StabilityMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.cells[i][j]
    }

    /// Upper-triangle cells `(label_a, label_b, value)`.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, Option<f64>)> + '_ {
        let n = self.labels.len();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).map(move |j| (self.labels[i].as_str(), self.labels[j].as_str(), self.cells[i][j]))
        })
    }
}

pub fn stability_matrix(
    values: &SystemValues,
    axis: StabilityAxis,
    fixed: &str,
    varying: &[String],
    evaluator: Evaluator,
) -> Result<StabilityMatrix, HarnessError> {
    if varying.len() < 2 {
        return Err(HarnessError::Evaluate(
            "stability needs at least 2 varying contexts".into(),
        ));
    }
    let rankings = varying
        .iter()
        .map(|v| match axis {
            StabilityAxis::Metric => values.ranking(fixed, v, evaluator),
            StabilityAxis::Model => values.ranking(v, fixed, evaluator),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = varying.len();
    let mut cells = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let t = rank_tau(&rankings[i], &rankings[j])?;
            cells[i][j] = t;
            cells[j][i] = t;
        }
    }
    Ok(StabilityMatrix {
        axis,
        fixed: fixed.to_string(),
        evaluator,
        labels: varying.to_vec(),
        cells,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn format_system_values(values: &SystemValues) -> String {
    let mut out = String::from("model\ttarget\tevaluator\tmethod\tvalue\tn_valid\tn_degenerate\n");
    for r in &values.rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.model,
            r.target,
            r.evaluator,
            r.method,
            cell(r.value),
            r.n_valid,
            r.n_degenerate
        ));
    }
    out
}

pub fn parse_system_values(text: &str) -> Result<SystemValues, HarnessError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("model\t")) {
            continue;
        }
        let bad = |what: &str| HarnessError::Evaluate(format!("system values line {}: {what}", i + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(bad("expected 7 tab-separated columns"));
        }
        let value = match cols[4] {
            "NA" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("invalid value"))?),
        };
        rows.push(SystemValue {
            model: cols[0].to_string(),
            target: cols[1].to_string(),
            evaluator: cols[2].parse()?,
            method: cols[3].to_string(),
            value,
            n_valid: cols[5].parse().map_err(|_| bad("invalid n_valid"))?,
            n_degenerate: cols[6].parse().map_err(|_| bad("invalid n_degenerate"))?,
        });
    }
    Ok(SystemValues { rows })
}

pub fn format_agreement(table: &AgreementTable) -> String {
    let mut out = String::from("model");
    for (a, l) in &table.columns {
        out.push_str(&format!("\t{}:{}", a.short(), l.short()));
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.model);
        for c in &row.cells {
            out.push('\t');
            out.push_str(&cell(*c));
        }
        out.push('\n');
    }
    out
}

pub fn format_stability(m: &StabilityMatrix) -> String {
    let mut out = m.fixed.clone();
    for l in &m.labels {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in m.labels.iter().zip(&m.cells) {
        out.push_str(l);
        for c in row {
            out.push('\t');
            out.push_str(&cell(*c));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apae::Aggregator;

    fn row(model: &str, target: &str, ev: Evaluator, method: &str, v: Option<f64>) -> SystemValue {
        SystemValue {
            model: model.into(),
            target: target.into(),
            evaluator: ev,
            method: method.into(),
            value: v,
            n_valid: 30,
            n_degenerate: 0,
        }
    }

    fn values() -> SystemValues {
        let k = Evaluator::Kendall;
        let a = Evaluator::Apae(Aggregator::Avg);
        let mut rows = Vec::new();
        // kendall on AP: A > B > C ; on R: C > B > A
        for (m, ap, r) in [("A", 0.5, 0.1), ("B", 0.4, 0.2), ("C", 0.3, 0.3)] {
            rows.push(row("lm", "AP@100", k, m, Some(ap)));
            rows.push(row("lm", "R@100", k, m, Some(r)));
        }
        // apae on the set: A > C > B
        for (m, v) in [("A", 0.9), ("B", 0.7), ("C", 0.8)] {
            rows.push(row("lm", "AP@100+R@100", a, m, Some(v)));
        }
        SystemValues { rows }
    }

    #[test]
    fn agreement_by_pair_count() {
        let t = agreement_table(
            &values(),
            &["lm".into()],
            "AP@100",
            "AP@100+R@100",
            &[Evaluator::Kendall],
            &[Evaluator::Apae(Aggregator::Avg)],
        )
        .unwrap();
        // [A,B,C] vs [A,C,B]: one discordant pair of three
        assert!((t.rows[0].cells[0].unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(format_agreement(&t).lines().next().unwrap(), "model\tavg:tau");
    }

    #[test]
    fn identical_evaluators_agree_fully() {
        let t = agreement_table(
            &values(),
            &["lm".into()],
            "AP@100",
            "AP@100",
            &[Evaluator::Kendall],
            &[Evaluator::Kendall],
        )
        .unwrap();
        assert_eq!(t.rows[0].cells[0], Some(1.0));
    }

    #[test]
    fn stability_is_symmetric_with_unit_diagonal() {
        let m = stability_matrix(
            &values(),
            StabilityAxis::Metric,
            "lm",
            &["AP@100".into(), "R@100".into()],
            Evaluator::Kendall,
        )
        .unwrap();
        assert_eq!(m.cells[0][0], Some(1.0));
        assert_eq!(m.cells[0][1], Some(-1.0));
        assert_eq!(m.cells[1][0], m.cells[0][1]);
        assert_eq!(m.pairs().count(), 1);
        assert_eq!(m.get("R@100", "AP@100"), Some(-1.0));
    }

    #[test]
    fn undefined_rankings_mark_cells_degenerate() {
        let mut v = values();
        v.rows[0].value = None;
        let m = stability_matrix(
            &v,
            StabilityAxis::Metric,
            "lm",
            &["AP@100".into(), "R@100".into()],
            Evaluator::Kendall,
        )
        .unwrap();
        assert_eq!(m.cells[0][1], None);
        assert_eq!(m.cells[1][1], Some(1.0));
        assert!(format_stability(&m).contains("NA"));
    }

    #[test]
    fn too_few_systems_is_error() {
        let v = SystemValues {
            rows: vec![row("lm", "AP@100", Evaluator::Kendall, "A", Some(0.1))],
        };
        assert!(v.ranking("lm", "AP@100", Evaluator::Kendall).is_err());
    }

    #[test]
    fn system_values_tsv_roundtrip() {
        let mut v = values();
        v.rows[1].value = None;
        v.rows[2].value = Some(0.1 + 0.2);
        assert_eq!(parse_system_values(&format_system_values(&v)).unwrap(), v);
    }
}
