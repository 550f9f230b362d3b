use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Matrix, Tape, BN_EPS};
use crate::error::Error;
use crate::graph::{induce_inductive_subgraph, Graph, GraphVariant, Protocol, ViolationKind};
use crate::ingest::{standardize, Dataset, FitScope, Label, ScalerStats};

fn small(kind: ModelKind, d: usize) -> ModelSpec {
    ModelSpec {
        input_dim: d,
        hidden_dim: 16,
        heads: if kind == ModelKind::Gat { 4 } else { 1 },
        ..ModelSpec::reference(kind)
    }
}

/// 60 nodes over timesteps 1–45; illicit iff the first feature is
/// positive. Edges join consecutive nodes of the same class.
fn separable(seed: u64, d: usize) -> (Dataset, ScalerStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 60;
    let mut labels = Vec::new();
    let mut steps = Vec::new();
    let feats = Matrix::from_fn(n, d, |i, j| {
        let sign = if i % 3 == 0 { 1.0 } else { -1.0 };
        if j == 0 {
            sign * (1.0 + rng.random::<f64>())
        } else {
            rng.random::<f64>() - 0.5
        }
    });
    for i in 0..n {
        labels.push(if i % 3 == 0 {
            Label::Illicit
        } else if i % 7 == 0 {
            Label::Unknown
        } else {
            Label::Licit
        });
        steps.push(if i < 45 {
            (1 + i % 34) as u8
        } else {
            (35 + i % 11) as u8
        });
    }
    let edges: Vec<(u32, u32)> = (0..n as u32 - 3).map(|i| (i, i + 3)).collect();
    let ds = Dataset::new((0..n as i64).collect(), steps, feats, labels, edges).unwrap();
    standardize(&ds, FitScope::FullPopulation).unwrap()
}

fn graph_of(ds: &Dataset) -> Arc<Graph> {
    Arc::new(
        Graph::from_edges(
            ds.num_nodes(),
            ds.edges(),
            GraphVariant::Original,
            ds.content_hash(),
        )
        .unwrap(),
    )
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: epochs,
        seed,
        optimizer: crate::autodiff::AdamWConfig {
            lr: 0.01,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

fn run(
    kind: ModelKind,
    cfg: &TrainConfig,
    full: &Dataset,
    scaler: &ScalerStats,
) -> crate::error::Result<TrainedModel> {
    let g = graph_of(full);
    let spec = small(kind, full.num_features());
    match cfg.protocol {
        Protocol::StrictInductive => {
            let sub = induce_inductive_subgraph(&g, full, 34)?;
            train(
                &spec,
                cfg,
                &TrainData {
                    train_graph: Arc::new(sub.graph),
                    train_dataset: &sub.dataset,
                    eval_graph: g.clone(),
                    eval_dataset: full,
                    scaler,
                    declared_fit_scope: FitScope::FullPopulation,
                },
            )
        }
        Protocol::Transductive => train(
            &spec,
            cfg,
            &TrainData {
                train_graph: g.clone(),
                train_dataset: full,
                eval_graph: g.clone(),
                eval_dataset: full,
                scaler,
                declared_fit_scope: FitScope::FullPopulation,
            },
        ),
    }
}

#[test]
fn mlp_ignores_the_graph() {
    let (ds, _) = separable(1, 5);
    let spec = small(ModelKind::Mlp, 5);
    let p = Params::init(&spec, 3).unwrap();
    let a = infer::<f64>(&spec, &p, ds.features(), &graph_of(&ds)).unwrap();
    let other =
        Arc::new(Graph::from_edges(60, &[(0, 59), (4, 9)], GraphVariant::Shuffled, "").unwrap());
    let b = infer::<f64>(&spec, &p, ds.features(), &other).unwrap();
    assert_eq!(a, b);
}

/// On an empty graph every neighbour mean is zero, so each layer is the
/// root linear map plus bias, then eval-mode batch norm and ReLU.
#[test]
fn sage_on_empty_graph_matches_manual_layers() {
    let (ds, _) = separable(2, 4);
    let mut spec = small(ModelKind::Sage, 4);
    spec.layers = 2;
    let mut p = Params::init(&spec, 11).unwrap();
    // Non-trivial running statistics and affine terms.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in &mut p.bn {
        for v in s.mean.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        for v in s.var.iter_mut() {
            *v = 0.5 + rng.random::<f64>();
        }
    }
    for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
        if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with("bias") {
            for v in t.data_mut() {
                *v = rng.random::<f64>() - 0.5;
            }
        }
    }
    let empty = Arc::new(Graph::empty(ds.num_nodes(), GraphVariant::Empty, ""));
    let got = infer::<f64>(&spec, &p, ds.features(), &empty).unwrap();

    let t = |name: &str| p.tensors[p.names.iter().position(|n| n == name).unwrap()].clone();
    let affine = |x: &Matrix<f64>, w: &Matrix<f64>, b: &Matrix<f64>| {
        let mut y = x.matmul(w).unwrap();
        for i in 0..y.rows() {
            for (v, bb) in y.row_mut(i).iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        y
    };
    let mut h = affine(ds.features(), &t("input.weight"), &t("input.bias"));
    for l in 0..2 {
        let z = affine(
            &h,
            &t(&format!("sage.{l}.root.weight")),
            &t(&format!("sage.{l}.neigh.bias")),
        );
        let (g, b) = (
            t(&format!("sage.{l}.bn.gamma")),
            t(&format!("sage.{l}.bn.beta")),
        );
        let s = &p.bn[l];
        h = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
            let v =
                (z.get(i, j) - s.mean[j]) / (s.var[j] + BN_EPS).sqrt() * g.data()[j] + b.data()[j];
            v.max(0.0)
        });
    }
    let logits = affine(&h, &t("head.weight"), &t("head.bias"));
    for (a, b) in got.logits.data().iter().zip(logits.data()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert_eq!(got.penultimate.shape(), (60, 16));
}

/// Two cliques with identical features inside each: the neighbour mean
/// equals the node's own vector and a SAGE layer is a linear map on [h ‖ h].
#[test]
fn sage_layer_on_identical_cliques_is_linear_on_concat() {
    let mut edges = Vec::new();
    for base in [0u32, 4] {
        for u in 0..4 {
            for v in (u + 1)..4 {
                edges.push((base + u, base + v));
            }
        }
    }
    let g = Arc::new(Graph::from_edges(8, &edges, GraphVariant::Original, "").unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let proto: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
        .collect();
    let h = Matrix::from_fn(8, 5, |i, j| proto[i / 4][j]);
    let wn = Matrix::from_fn(5, 3, |_, _| rng.random::<f64>() - 0.5);
    let wr = Matrix::from_fn(5, 3, |_, _| rng.random::<f64>() - 0.5);
    let b = Matrix::row_vector(vec![0.1, -0.2, 0.3]);

    let mut tape = Tape::<f64>::new();
    let hv = tape.constant(h.clone());
    let (wnv, wrv, bv) = (
        tape.constant(wn.clone()),
        tape.constant(wr.clone()),
        tape.constant(b.clone()),
    );
    let m = tape.neighbor_mean(hv, g).unwrap();
    let z = tape.dual_linear(m, wnv, hv, wrv, Some(bv)).unwrap();

    let stacked = Matrix::from_fn(10, 3, |i, j| {
        if i < 5 {
            wn.get(i, j)
        } else {
            wr.get(i - 5, j)
        }
    });
    let mut want = h.hconcat(&h).unwrap().matmul(&stacked).unwrap();
    for i in 0..8 {
        for (v, bb) in want.row_mut(i).iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    for (a, w) in tape.value(z).data().iter().zip(want.data()) {
        assert!((a - w).abs() < 1e-12);
    }
}

#[test]
fn separable_mlp_reaches_perfect_train_f1_within_50_epochs() {
    let (ds, scaler) = separable(4, 6);
    let m = run(ModelKind::Mlp, &quick(50, 0), &ds, &scaler).unwrap();
    let best = m.history.iter().map(|h| h.train_f1).fold(0.0, f64::max);
    assert_eq!(
        best,
        1.0,
        "{:?}",
        m.history.iter().map(|h| h.train_f1).collect::<Vec<_>>()
    );
}

#[test]
fn every_architecture_trains_and_restores_its_best_epoch() {
    let (ds, scaler) = separable(5, 6);
    for kind in [
        ModelKind::Mlp,
        ModelKind::Gcn,
        ModelKind::Sage,
        ModelKind::Gat,
    ] {
        let m = run(kind, &quick(8, 1), &ds, &scaler).unwrap();
        assert!(m.history.len() <= 8);
        let max = m.history.iter().map(|h| h.test_f1).fold(f64::MIN, f64::max);
        assert_eq!(m.best().test_f1, max, "{kind:?}");
        // The restored parameters reproduce the recorded test F1.
        let inf = m.infer(ds.features(), &graph_of(&ds)).unwrap();
        let rows = ds.rows_where(|t, l| t >= 35 && l.is_labeled());
        let pred = predicts_illicit(&inf.logits.select_rows(&rows));
        let truth: Vec<bool> = rows.iter().map(|&i| ds.label(i).is_illicit()).collect();
        assert_eq!(
            crate::metrics::binary_f1(&pred, &truth),
            m.best().test_f1,
            "{kind:?}"
        );
        assert!(m.audit.pass, "{kind:?}");
    }
}

#[test]
fn strict_inductive_refuses_a_graph_with_test_nodes() {
    let (ds, scaler) = separable(6, 4);
    let g = graph_of(&ds);
    let err = train(
        &small(ModelKind::Sage, 4),
        &quick(2, 0),
        &TrainData {
            train_graph: g.clone(),
            train_dataset: &ds,
            eval_graph: g,
            eval_dataset: &ds,
            scaler: &scaler,
            declared_fit_scope: FitScope::FullPopulation,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn transductive_run_is_audited_not_refused() {
    let (ds, scaler) = separable(7, 4);
    let cfg = TrainConfig {
        protocol: Protocol::Transductive,
        ..quick(3, 2)
    };
    let m = run(ModelKind::Sage, &cfg, &ds, &scaler).unwrap();
    assert!(!m.audit.pass);
    assert_eq!(m.audit.count(ViolationKind::TestNodeInTrainGraph), 15);
    // Three BN layers updated on every epoch.
    assert_eq!(
        m.audit.count(ViolationKind::BnStatsUpdatedOnTest),
        3 * m.history.len()
    );
    assert_eq!(m.reaudit().unwrap(), m.audit);
}

/// With a zero learning rate both protocols keep the epoch-0 parameters, so
/// equality shows the initialisation does not depend on the protocol.
#[test]
fn matched_seeds_share_initialisation_across_protocols() {
    let (ds, scaler) = separable(8, 4);
    let mut cfg = quick(1, 42);
    cfg.optimizer.lr = 0.0;
    let a = run(ModelKind::Sage, &cfg, &ds, &scaler).unwrap();
    cfg.protocol = Protocol::Transductive;
    let b = run(ModelKind::Sage, &cfg, &ds, &scaler).unwrap();
    assert_eq!(a.params.tensors, b.params.tensors);
    assert_eq!(a.params.tensors, Params::init(&a.spec, 42).unwrap().tensors);
}

#[test]
fn train_tail_holds_out_late_training_steps() {
    let (ds, scaler) = separable(9, 4);
    let cfg = TrainConfig {
        early_stop_split: EarlyStopSplit::TrainTail,
        ..quick(6, 3)
    };
    let m = run(ModelKind::Mlp, &cfg, &ds, &scaler).unwrap();
    assert!(m.history.iter().all(|h| h.val_f1.is_some()));
    let max = m
        .history
        .iter()
        .filter_map(|h| h.val_f1)
        .fold(f64::MIN, f64::max);
    assert_eq!(m.best().val_f1, Some(max));
}

#[test]
fn exploding_updates_report_the_epoch() {
    let (ds, scaler) = separable(10, 4);
    let mut cfg = quick(5, 0);
    cfg.optimizer.lr = 1e30;
    cfg.optimizer.max_grad_norm = None;
    let err = run(ModelKind::Sage, &cfg, &ds, &scaler).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains("epoch"), "{err}");
}

#[test]
fn checkpoint_round_trip_preserves_inference() {
    let (ds, scaler) = separable(11, 4);
    let m = run(ModelKind::Gat, &quick(3, 5), &ds, &scaler).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp/cond/seed5.ckpt");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.history, m.history);
    assert_eq!(back.audit, m.audit);
    let g = graph_of(&ds);
    assert_eq!(
        back.infer(ds.features(), &g).unwrap(),
        m.infer(ds.features(), &g).unwrap()
    );
}

#[test]
fn embeddings_are_deterministic_and_structure_sensitive() {
    let (ds, scaler) = separable(12, 4);
    let g = graph_of(&ds);
    let mut spec = small(ModelKind::Sage, 4);
    spec.hidden_dim = EMBEDDING_DIM;
    spec.head_classes = 2;
    let sub = induce_inductive_subgraph(&g, &ds, 34).unwrap();
    let m = train(
        &spec,
        &quick(2, 0),
        &TrainData {
            train_graph: Arc::new(sub.graph),
            train_dataset: &sub.dataset,
            eval_graph: g.clone(),
            eval_dataset: &ds,
            scaler: &scaler,
            declared_fit_scope: FitScope::FullPopulation,
        },
    )
    .unwrap();
    let a = extract_embeddings(&m, &g, &ds).unwrap();
    assert_eq!(a.shape(), (60, EMBEDDING_DIM));
    assert_eq!(a, extract_embeddings(&m, &g, &ds).unwrap());
    let empty = Arc::new(Graph::empty(60, GraphVariant::Empty, ""));
    assert_ne!(a, extract_embeddings(&m, &empty, &ds).unwrap());

    let narrow = run(ModelKind::Mlp, &quick(1, 0), &ds, &scaler).unwrap();
    assert!(matches!(
        extract_embeddings(&narrow, &g, &ds),
        Err(Error::Config(_))
    ));
}

#[test]
fn fusion_examples() {
    let g = [0.8, 0.1];
    let m = [0.2, 0.9];
    assert_eq!(fuse_probabilities(&g, &m, 1.0).unwrap(), g);
    assert_eq!(fuse_probabilities(&g, &m, 0.0).unwrap(), m);
    assert!((fuse_probabilities(&[0.8], &[0.2], 0.65).unwrap()[0] - 0.59).abs() < 1e-12);
    assert!(fuse_probabilities(&g, &m, 1.5).is_err());
    assert!(fuse_probabilities(&[1.2], &[0.1], 0.5).is_err());
}

#[test]
fn binary_head_probabilities_sum_with_the_licit_column() {
    let logits = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, -1.0]]).unwrap();
    let p = illicit_probabilities(&logits);
    assert!((p[0] - 0.5).abs() < 1e-15);
    assert!(p[1] < 0.5);
    assert_eq!(predicts_illicit(&logits), vec![false, false]);
}
