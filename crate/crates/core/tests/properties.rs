use inductive_bench::autodiff::Matrix;
use inductive_bench::forests::balanced_weights;
use inductive_bench::graph::{
    induce_inductive_subgraph, leakage_audit, Graph, GraphVariant, Protocol, TrainingSetup,
};
use inductive_bench::ingest::{standardize, Dataset, FitScope, Label, TRAIN_MAX_STEP};
use inductive_bench::metrics::{auc_roc, binary_f1, paired_t, welch_t};
use inductive_bench::models::predicts_illicit;
use proptest::prelude::*;

fn brute_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0u64);
    for (i, &si) in scores.iter().enumerate().filter(|(i, _)| truth[*i]) {
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] || i == j {
                continue;
            }
            pairs += 1;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    (pairs > 0).then(|| num / pairs as f64)
}

fn scored_rows() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..12, any::<bool>()), 1..120)
        .prop_map(|v| v.into_iter().map(|(s, t)| (s as f64 / 11.0, t)).unzip())
}

fn logits() -> impl Strategy<Value = Matrix<f64>> {
    (1usize..40).prop_flat_map(|n| {
        prop::collection::vec(-6.0f64..6.0, n * 3)
            .prop_map(move |v| Matrix::from_fn(n, 3, |i, j| v[i * 3 + j]))
    })
}

/// Nodes spread over all 49 steps, edges only between nearby steps.
fn dataset() -> impl Strategy<Value = Dataset> {
    (20usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(1u8..=49, n),
            prop::collection::vec(0usize..3, n),
            prop::collection::vec((0..n as u32, 0..n as u32), 0..n * 2),
            prop::collection::vec(-3.0f64..3.0, n * 2),
        )
            .prop_map(move |(mut steps, labels, pairs, feats)| {
                steps.sort_unstable();
                let labels = labels
                    .into_iter()
                    .map(|l| Label::from_class_index(l).unwrap())
                    .collect();
                let mut edges: Vec<(u32, u32)> = pairs
                    .into_iter()
                    .filter(|&(u, v)| u != v && steps[u as usize].abs_diff(steps[v as usize]) <= 2)
                    .map(|(u, v)| (u.min(v), u.max(v)))
                    .collect();
                edges.sort_unstable();
                edges.dedup();
                let x = Matrix::from_fn(n, 2, |i, j| feats[i * 2 + j]);
                Dataset::new((0..n as i64).collect(), steps, x, labels, edges).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_counting((scores, truth) in scored_rows()) {
        prop_assert_eq!(auc_roc(&scores, &truth), brute_auc(&scores, &truth));
    }

    #[test]
    fn negating_scores_mirrors_auc((scores, truth) in scored_rows()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        if let (Some(a), Some(b)) = (auc_roc(&scores, &truth), auc_roc(&neg, &truth)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_temperature_keeps_decisions(z in logits(), t in 0.01f64..100.0) {
        let base = predicts_illicit(&z);
        let scaled = Matrix::from_fn(z.rows(), 3, |i, j| z.get(i, j) / t);
        prop_assert_eq!(&predicts_illicit(&scaled), &base);
        let truth: Vec<bool> = (0..z.rows()).map(|i| i % 3 == 0).collect();
        prop_assert_eq!(binary_f1(&predicts_illicit(&scaled), &truth), binary_f1(&base, &truth));
    }

    #[test]
    fn balanced_weights_equalise_class_mass(y in prop::collection::vec(any::<bool>(), 2..200)) {
        let pos = y.iter().filter(|&&v| v).count();
        prop_assume!(pos > 0 && pos < y.len());
        let (w0, w1) = balanced_weights(&y);
        let m0 = w0 * (y.len() - pos) as f64;
        let m1 = w1 * pos as f64;
        prop_assert!((m0 - m1).abs() < 1e-9 * m0.max(1.0));
        prop_assert!((m0 + m1 - y.len() as f64).abs() < 1e-9 * y.len() as f64);
    }

    #[test]
    fn swapping_sides_negates_t(
        a in prop::collection::vec(0.0f64..1.0, 3..12),
        b in prop::collection::vec(0.0f64..1.0, 3..12),
    ) {
        let (ab, ba) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
        prop_assert!((ab.t + ba.t).abs() < 1e-9);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        let n = a.len().min(b.len());
        if let (Ok(p), Ok(q)) = (paired_t(&a[..n], &b[..n]), paired_t(&b[..n], &a[..n])) {
            prop_assert!((p.delta + q.delta).abs() < 1e-12);
            prop_assert!((p.p_value - q.p_value).abs() < 1e-12);
        }
    }

    #[test]
    fn induced_subgraph_keeps_exactly_training_nodes_and_their_edges(ds in dataset()) {
        let g = Graph::from_edges(ds.num_nodes(), ds.edges(), GraphVariant::Original, "").unwrap();
        let sub = induce_inductive_subgraph(&g, &ds, TRAIN_MAX_STEP).unwrap();
        let kept = ds.rows_where(|t, _| t <= TRAIN_MAX_STEP);
        prop_assert_eq!(&sub.new_to_old, &kept);
        prop_assert!(sub.dataset.timesteps().iter().all(|&t| t <= TRAIN_MAX_STEP));
        let want = ds
            .edges()
            .iter()
            .filter(|&&(u, v)| sub.old_to_new[u as usize].is_some() && sub.old_to_new[v as usize].is_some())
            .count();
        prop_assert_eq!(sub.graph.undirected_edge_count(), want);
        for (u, v) in sub.graph.undirected_edges() {
            prop_assert!(g.has_edge(sub.new_to_old[u as usize], sub.new_to_old[v as usize]));
        }

        let (_, scaler) = standardize(&ds, FitScope::FullPopulation).unwrap();
        let log = Default::default();
        let report = leakage_audit(&TrainingSetup {
            protocol: Protocol::StrictInductive,
            graph: &sub.graph,
            dataset: &sub.dataset,
            declared_fit_scope: FitScope::FullPopulation,
            scaler: &scaler,
            bn_log: &log,
        })
        .unwrap();
        prop_assert!(report.pass, "{:?}", report.violations);
    }

    #[test]
    fn planting_test_nodes_is_always_caught(ds in dataset(), extra in 1usize..4) {
        let tests = ds.rows_where(|t, _| t > TRAIN_MAX_STEP);
        prop_assume!(!tests.is_empty());
        let planted = extra.min(tests.len());
        let mut keep = ds.rows_where(|t, _| t <= TRAIN_MAX_STEP);
        keep.extend_from_slice(&tests[..planted]);
        keep.sort_unstable();
        let (sub, _) = ds.subset(&keep).unwrap();
        let g = Graph::from_edges(sub.num_nodes(), sub.edges(), GraphVariant::Original, "").unwrap();
        let (_, scaler) = standardize(&ds, FitScope::FullPopulation).unwrap();
        let log = Default::default();
        let report = leakage_audit(&TrainingSetup {
            protocol: Protocol::StrictInductive,
            graph: &g,
            dataset: &sub,
            declared_fit_scope: FitScope::FullPopulation,
            scaler: &scaler,
            bn_log: &log,
        })
        .unwrap();
        prop_assert!(!report.pass);
        prop_assert_eq!(report.violations.len(), planted);
    }

    #[test]
    fn train_only_scaler_centres_training_rows(ds in dataset()) {
        let train = ds.rows_where(|t, _| t <= TRAIN_MAX_STEP);
        prop_assume!(train.len() > 1);
        let (scaled, stats) = standardize(&ds, FitScope::TrainOnly).unwrap();
        prop_assert_eq!(stats.fit_rows, train.len());
        for j in 0..2 {
            let m = train.iter().map(|&i| scaled.features().get(i, j)).sum::<f64>() / train.len() as f64;
            prop_assert!(m.abs() < 1e-9);
        }
    }
}
