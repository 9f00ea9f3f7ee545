//! Listwise QPP evaluation: query orderings, rank correlations and 1 - sARE.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ListwiseError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("rankings cover different query sets")]
    QuerySetMismatch,
}

/// Result of a correlation that may be undefined on constant input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Outcome {
    Value(f64),
    Degenerate,
}

impl Outcome {
    pub fn value(self) -> Option<f64> {
        match self {
            Outcome::Value(v) => Some(v),
            Outcome::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Outcome::Degenerate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RankingSource {
    ByMetric,
    ByQpp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRanking {
    pub source: RankingSource,
    pub order: Vec<String>,
}

impl QueryRanking {
    /// 1-based position of every query.
    pub fn positions(&self) -> HashMap<&str, usize> {
        self.order
            .iter()
            .enumerate()
            .map(|(i, q)| (q.as_str(), i + 1))
            .collect()
    }
}

/// Orders queries by value, highest first, ties by query_id.
pub fn rank_queries<'a, I>(values: I, source: RankingSource) -> Result<QueryRanking, ListwiseError>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let mut v: Vec<(&str, f64)> = values.into_iter().collect();
    if v.is_empty() {
        return Err(ListwiseError::TooShort { needed: 1, got: 0 });
    }
    if v.iter().any(|(_, x)| !x.is_finite()) {
        return Err(ListwiseError::NonFinite);
    }
    v.sort_by(|a, b| cmp_f64(b.1, a.1).then_with(|| a.0.cmp(b.0)));
    Ok(QueryRanking {
        source,
        order: v.into_iter().map(|(q, _)| q.to_string()).collect(),
    })
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    // inputs are validated finite; -0.0 and 0.0 compare equal
    a.partial_cmp(&b).expect("finite")
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), ListwiseError> {
    if x.len() != y.len() {
        return Err(ListwiseError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(ListwiseError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ListwiseError::NonFinite);
    }
    Ok(())
}

fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts inversions while merge-sorting `v` ascending.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b, computed with Knight's O(n log n) algorithm.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Outcome, ListwiseError> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_f64(a.0, b.0).then(cmp_f64(a.1, b.1)));

    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = tied_pairs(&xs);
    let tied_xy = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = sort_counting_swaps(&mut ys, &mut buf);
    let tied_y = tied_pairs(&ys);

    // C + D + Tx and C + D + Ty in terms of the tie counts
    let with_x = n0 - tied_y;
    let with_y = n0 - tied_x;
    if with_x == 0 || with_y == 0 {
        return Ok(Outcome::Degenerate);
    }
    let diff = n0 as i64 - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * discordant as i64;
    let tau = diff as f64 / ((with_x * with_y) as f64).sqrt();
    Ok(Outcome::Value(tau.clamp(-1.0, 1.0)))
}

/// Product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Outcome, ListwiseError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Outcome::Degenerate);
    }
    Ok(Outcome::Value((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// 1-based fractional ranks, tied values sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Outcome, ListwiseError> {
    check_pair(x, y)?;
    pearson_r(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SareResult {
    /// (query_id, 1 - sARE) in the order of the metric ranking.
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
}

/// Per-query 1 - |rank_phi(q) - rank_mu(q)| / |Q| and its mean.
pub fn one_minus_sare(ranking_mu: &QueryRanking, ranking_phi: &QueryRanking) -> Result<SareResult, ListwiseError> {
    let n = ranking_mu.order.len();
    if n == 0 {
        return Err(ListwiseError::TooShort { needed: 1, got: 0 });
    }
    let phi_pos = ranking_phi.positions();
    if ranking_phi.order.len() != n || phi_pos.len() != n {
        return Err(ListwiseError::QuerySetMismatch);
    }
    let mut per_query = Vec::with_capacity(n);
    for (i, q) in ranking_mu.order.iter().enumerate() {
        let p = *phi_pos.get(q.as_str()).ok_or(ListwiseError::QuerySetMismatch)?;
        let err = (p as f64 - (i + 1) as f64).abs() / n as f64;
        per_query.push((q.clone(), 1.0 - err));
    }
    let mean = per_query.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
    Ok(SareResult { per_query, mean })
}

/// Kendall's tau between two orderings of the same items.
pub fn ordering_tau<T: AsRef<str>>(a: &[T], b: &[T]) -> Result<Outcome, ListwiseError> {
    if a.len() != b.len() {
        return Err(ListwiseError::LengthMismatch(a.len(), b.len()));
    }
    let pos_b: HashMap<&str, usize> = b.iter().enumerate().map(|(i, s)| (s.as_ref(), i)).collect();
    if pos_b.len() != b.len() {
        return Err(ListwiseError::QuerySetMismatch);
    }
    let mut x = Vec::with_capacity(a.len());
    let mut y = Vec::with_capacity(a.len());
    for (i, item) in a.iter().enumerate() {
        let j = pos_b.get(item.as_ref()).ok_or(ListwiseError::QuerySetMismatch)?;
        x.push(i as f64);
        y.push(*j as f64);
    }
    kendall_tau(&x, &y)
}
