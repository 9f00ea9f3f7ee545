use std::collections::HashMap;

use proptest::prelude::*;

use qppbench::apae::{apae_multi_metric, apae_single_metric, Aggregator};
use qppbench::harness::make_splits;
use qppbench::listwise::{kendall_tau, pearson_r, spearman_rho, Outcome};
use qppbench::metrics::MetricId;
use qppbench::qpp::min_max;
use qppbench::retrieval::{read_run, write_run, RankedEntry, RankedList};

fn small_ints(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0..6i32).prop_map(f64::from), 2..max_len)
}

fn pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..max_len).prop_flat_map(|n| {
        (
            prop::collection::vec((0..6i32).prop_map(f64::from), n),
            prop::collection::vec(-1e3..1e3f64, n),
        )
    })
}

proptest! {
    #[test]
    fn correlations_bounded_and_symmetric((x, y) in pair(30)) {
        for f in [kendall_tau, pearson_r, spearman_rho] {
            let a = f(&x, &y).unwrap();
            let b = f(&y, &x).unwrap();
            if let Outcome::Value(v) = a {
                prop_assert!((-1.0..=1.0).contains(&v));
                let w = b.value().unwrap();
                prop_assert!((v - w).abs() <= 1e-12);
            } else {
                prop_assert!(b.is_degenerate());
            }
        }
    }

    #[test]
    fn rank_correlations_ignore_monotone_maps((x, y) in pair(30)) {
        let squashed: Vec<f64> = y.iter().map(|v| (v / 100.0).tanh() * 7.0 + 3.0).collect();
        prop_assert_eq!(kendall_tau(&x, &y).unwrap(), kendall_tau(&x, &squashed).unwrap());
        let a = spearman_rho(&x, &y).unwrap().value();
        let b = spearman_rho(&x, &squashed).unwrap().value();
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn tau_flips_with_negation(x in small_ints(25), seed in any::<u64>()) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| ((i as u64 ^ seed) % 5) as f64 + v).collect();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = kendall_tau(&x, &y).unwrap().value();
        let b = kendall_tau(&x, &neg).unwrap().value();
        prop_assert_eq!(a.map(|v| -v), b);
    }

    #[test]
    fn min_max_is_order_preserving(v in prop::collection::vec(-1e6..1e6f64, 1..40)) {
        let n = min_max(&v);
        prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(n[i] <= n[j]);
                }
            }
        }
    }

    #[test]
    fn apae_bounds(
        phi in prop::collection::vec(0.0..=1.0f64, 1..20),
        mu_seed in prop::collection::vec(0.0..=1.0f64, 80),
        n_metrics in 1..4usize,
    ) {
        let metrics: Vec<MetricId> = ["AP@100", "nDCG@100", "P@10", "R@100"][..n_metrics]
            .iter()
            .map(|m| m.parse().unwrap())
            .collect();
        let ids: Vec<String> = (0..phi.len()).map(|i| format!("q{i}")).collect();
        let phi_map: HashMap<String, f64> = ids.iter().cloned().zip(phi.iter().copied()).collect();
        let mus: HashMap<MetricId, HashMap<String, f64>> = metrics
            .iter()
            .enumerate()
            .map(|(m, id)| (*id, ids.iter().enumerate().map(|(i, q)| (q.clone(), mu_seed[(m * 20 + i) % 80])).collect()))
            .collect();
        let lo = apae_multi_metric(&mus, &phi_map, Aggregator::Min).unwrap();
        let avg = apae_multi_metric(&mus, &phi_map, Aggregator::Avg).unwrap();
        let hi = apae_multi_metric(&mus, &phi_map, Aggregator::Max).unwrap();
        prop_assert!(0.0 <= lo.mean && lo.mean <= avg.mean && avg.mean <= hi.mean && hi.mean <= 1.0);
        for m in &metrics {
            let single = apae_single_metric(&mus[m], &phi_map).unwrap();
            prop_assert!(lo.mean <= single.mean + 1e-12 && single.mean <= hi.mean + 1e-12);
        }
    }

    #[test]
    fn splits_partition_deterministically(n in 2..120usize, n_splits in 1..8usize, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("{:03}", i)).collect();
        let plan = make_splits(&ids, n_splits, seed).unwrap();
        let mut shuffled = ids.clone();
        shuffled.reverse();
        prop_assert_eq!(&plan, &make_splits(&shuffled, n_splits, seed).unwrap());
        for s in &plan.splits {
            prop_assert_eq!(s.train.len(), n.div_ceil(2));
            let mut all: Vec<String> = s.train.iter().chain(&s.test).cloned().collect();
            all.sort();
            prop_assert_eq!(&all, &ids);
        }
    }

    #[test]
    fn run_files_round_trip(lists in prop::collection::vec(
        prop::collection::vec(-1e4..1e4f64, 1..15), 1..5)
    ) {
        let runs: Vec<RankedList> = lists
            .iter()
            .enumerate()
            .map(|(q, scores)| {
                let mut scores = scores.clone();
                scores.sort_by(|a, b| b.total_cmp(a));
                RankedList {
                    query_id: format!("q{q}"),
                    tag: "t".into(),
                    entries: scores
                        .iter()
                        .enumerate()
                        .map(|(i, s)| RankedEntry { doc_id: format!("d{i}"), score: *s })
                        .collect(),
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_run(&mut buf, &runs).unwrap();
        let back = read_run(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.len(), runs.len());
        for (a, b) in back.iter().zip(&runs) {
            prop_assert_eq!(&a.query_id, &b.query_id);
            prop_assert_eq!(a.doc_ids().collect::<Vec<_>>(), b.doc_ids().collect::<Vec<_>>());
        }
    }
}
