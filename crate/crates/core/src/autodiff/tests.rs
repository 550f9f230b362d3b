use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::check_gradients;
use super::*;
use crate::graph::{Graph, GraphVariant};

fn graph(n: usize, edges: &[(u32, u32)]) -> Arc<Graph> {
    Arc::new(Graph::from_edges(n, edges, GraphVariant::Original, "").unwrap())
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Arc<Graph> {
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if rng.random::<f64>() < 0.45 {
                edges.push((u, v));
            }
        }
    }
    graph(n, &edges)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// `‖out + R‖²` for a fixed random `R`, so upstream gradients are non-trivial.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var, crate::error::Error> {
    let (r, c) = tape.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = tape.constant(random_matrix(&mut rng, r, c));
    let s = tape.add(out, offset)?;
    Ok(tape.sum_squares(s))
}

const FIXTURES: u64 = 20;
const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[test]
fn neighbor_mean_on_path_graph() {
    let g = graph(3, &[(0, 1), (1, 2)]);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap());
    let y = tape.neighbor_mean(x, g).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn neighbor_mean_on_empty_graph_is_zero() {
    let g = Arc::new(Graph::empty(3, GraphVariant::Empty, ""));
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Matrix::filled(3, 2, 4.0));
    let y = tape.neighbor_mean(x, g).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn neighbor_mean_rejects_size_mismatch() {
    let g = graph(4, &[(0, 1)]);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Matrix::zeros(3, 2));
    assert!(matches!(
        tape.neighbor_mean(x, g),
        Err(crate::error::Error::Dimension(_))
    ));
}

#[test]
fn gcn_isolated_node_is_identity_and_pair_averages() {
    let g = graph(3, &[(0, 1)]);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Matrix::from_rows(&[vec![1.0], vec![0.0], vec![7.5]]).unwrap());
    let y = tape.gcn_propagate(x, g).unwrap();
    let out = tape.value(y).data();
    // D̃ = diag(2, 2, 1): rows 0 and 1 are (1 + 0) / 2.
    assert!((out[0] - 0.5).abs() < 1e-15);
    assert!((out[1] - 0.5).abs() < 1e-15);
    assert_eq!(out[2], 7.5);
}

fn attention_cfg(heads: usize) -> AttentionConfig {
    AttentionConfig {
        heads,
        negative_slope: 0.2,
        self_loops: false,
        edge_dropout: None,
    }
}

/// Recomputes the softmax coefficients of node `v`, head 0, from scratch.
fn coefficients(h: &Matrix<f64>, a_src: &[f64], a_dst: &[f64], g: &Graph, v: usize) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let e: Vec<f64> = g
        .neighbors(v)
        .iter()
        .map(|&u| {
            let s = dot(h.row(v), a_dst) + dot(h.row(u as usize), a_src);
            if s > 0.0 {
                s
            } else {
                0.2 * s
            }
        })
        .collect();
    let z: f64 = e.iter().map(|x| x.exp()).sum();
    e.iter().map(|x| x.exp() / z).collect()
}

#[test]
fn attention_single_neighbor_gets_full_weight() {
    let g = graph(2, &[(0, 1)]);
    let h = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
    let coeff = coefficients(&h, &[0.7, 0.1], &[-0.2, 0.9], &g, 0);
    assert_eq!(coeff, vec![1.0]);

    let mut tape = Tape::<f64>::new();
    let hv = tape.constant(h.clone());
    let a_s = tape.constant(Matrix::row_vector(vec![0.7, 0.1]));
    let a_d = tape.constant(Matrix::row_vector(vec![-0.2, 0.9]));
    let y = tape
        .attention(hv, a_s, a_d, None, g, attention_cfg(1))
        .unwrap();
    // The single neighbour's features pass through unchanged.
    assert_eq!(tape.value(y).row(0), h.row(1));
    assert_eq!(tape.value(y).row(1), h.row(0));
}

#[test]
fn attention_identical_keys_split_evenly_and_rows_sum_to_one() {
    let g = graph(3, &[(0, 1), (0, 2)]);
    let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let c = coefficients(&h, &[0.4, -0.3], &[0.2, 0.2], &g, 0);
    assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);

    let mut tape = Tape::<f64>::new();
    let hv = tape.constant(h);
    let a_s = tape.constant(Matrix::row_vector(vec![0.4, -0.3]));
    let a_d = tape.constant(Matrix::row_vector(vec![0.2, 0.2]));
    let y = tape
        .attention(hv, a_s, a_d, None, g, attention_cfg(1))
        .unwrap();
    assert!((tape.value(y).get(0, 0) - 0.5).abs() < 1e-15);

    // Coefficient sums over random neighbourhoods.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let g = random_graph(&mut rng, 6);
        let h = random_matrix(&mut rng, 6, 3);
        for v in 0..6 {
            if g.degree(v) > 0 {
                let s: f64 = coefficients(&h, &[0.3, -0.5, 0.8], &[0.1, 0.2, -0.9], &g, v)
                    .iter()
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn attention_isolated_node_receives_zero_message() {
    let g = graph(3, &[(0, 1)]);
    let mut tape = Tape::<f64>::new();
    let hv = tape.constant(Matrix::filled(3, 2, 1.0));
    let a = tape.constant(Matrix::row_vector(vec![1.0, 1.0]));
    let y = tape.attention(hv, a, a, None, g, attention_cfg(1)).unwrap();
    assert_eq!(tape.value(y).row(2), &[0.0, 0.0]);
}

#[test]
fn cross_entropy_reference_values() {
    let rows: Arc<[usize]> = vec![0, 1].into();
    let labels: Arc<[usize]> = vec![0, 1].into();
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Matrix::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap());
    let l = tape
        .weighted_ce(z, rows.clone(), labels.clone(), &[1.0, 1.0])
        .unwrap();
    assert!(tape.value(l).item() < 1e-4);

    let u = tape.constant(Matrix::zeros(2, 2));
    let l = tape.weighted_ce(u, rows, labels, &[1.0, 1.0]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn cross_entropy_weight_scales_linearly() {
    let z = Matrix::from_rows(&[vec![0.3, -1.1, 0.4]]).unwrap();
    let rows: Arc<[usize]> = vec![0].into();
    let labels: Arc<[usize]> = vec![1].into();
    let mut tape = Tape::<f64>::new();
    let zv = tape.constant(z);
    let plain = tape
        .weighted_ce(zv, rows.clone(), labels.clone(), &[1.0, 1.0, 1.0])
        .unwrap();
    let weighted = tape
        .weighted_ce(zv, rows, labels, &[1.0, 2.08, 1.0])
        .unwrap();
    let ratio = tape.value(weighted).item() / tape.value(plain).item();
    assert!((ratio - 2.08).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_empty_mask() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Matrix::zeros(2, 2));
    let err = tape
        .weighted_ce(z, Vec::new().into(), Vec::new().into(), &[1.0, 1.0])
        .unwrap_err();
    assert!(matches!(err, crate::error::Error::Config(_)));
}

#[test]
fn non_finite_forward_is_reported() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Matrix::row_vector(vec![f64::INFINITY]));
    let y = tape.scale(x, 2.0);
    let l = tape.sum_squares(y);
    assert!(tape.ensure_finite().is_err());
    assert!(tape.backward(l).is_err());
}

#[test]
fn gradcheck_neighbor_mean() {
    for seed in 0..FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..7);
        let g = random_graph(&mut rng, n);
        let x = random_matrix(&mut rng, n, 3);
        let r = check_gradients(&[x], EPS, |t, v| {
            let y = t.neighbor_mean(v[0], g.clone())?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn gradcheck_gcn_propagate() {
    for seed in 0..FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(3..7);
        let g = random_graph(&mut rng, n);
        let x = random_matrix(&mut rng, n, 2);
        let r = check_gradients(&[x], EPS, |t, v| {
            let y = t.gcn_propagate(v[0], g.clone())?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn gradcheck_attention_with_self_loops_and_dropout() {
    for seed in 0..FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = rng.random_range(3..6);
        let heads = 2;
        let f = 2;
        let g = random_graph(&mut rng, n);
        let self_loops = seed % 2 == 0;
        let slots = g.directed_edge_count() + if self_loops { n } else { 0 };
        let keep: Vec<bool> = (0..slots * heads)
            .map(|_| rng.random::<f64>() > 0.2)
            .collect();
        let inputs = [
            random_matrix(&mut rng, n, heads * f),
            random_matrix(&mut rng, 1, heads * f),
            random_matrix(&mut rng, 1, heads * f),
            random_matrix(&mut rng, 1, heads * f),
        ];
        let r = check_gradients(&inputs, EPS, |t, v| {
            let cfg = AttentionConfig {
                heads,
                negative_slope: 0.2,
                self_loops,
                edge_dropout: (seed % 3 == 0).then(|| (keep.clone(), 0.2)),
            };
            let y = t.attention(v[0], v[1], v[2], Some(v[3]), g.clone(), cfg)?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn gradcheck_batch_norm_both_modes() {
    for seed in 0..FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = rng.random_range(3..8);
        let inputs = [
            random_matrix(&mut rng, n, 3),
            random_matrix(&mut rng, 1, 3),
            random_matrix(&mut rng, 1, 3),
        ];
        let mean = vec![0.1, -0.3, 0.2];
        let var = vec![0.5, 1.5, 0.9];
        let batch = seed % 2 == 0;
        let r = check_gradients(&inputs, EPS, |t, v| {
            let source = if batch {
                NormSource::Batch
            } else {
                NormSource::Running {
                    mean: &mean,
                    var: &var,
                }
            };
            let (y, _) = t.batch_norm(v[0], v[1], v[2], source, BN_EPS)?;
            project(t, y, seed)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn gradcheck_weighted_ce() {
    for seed in 0..FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(3..9);
        let c = rng.random_range(2..4);
        let rows: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.7).collect();
        let rows = if rows.is_empty() { vec![0] } else { rows };
        let labels: Vec<usize> = rows.iter().map(|_| rng.random_range(0..c)).collect();
        let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.3..2.5)).collect();
        let (rows, labels): (Arc<[usize]>, Arc<[usize]>) = (rows.into(), labels.into());
        let z = Matrix::from_fn(n, c, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let r = check_gradients(&[z], EPS, |t, v| {
            t.weighted_ce(v[0], rows.clone(), labels.clone(), &weights)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn gradcheck_dense_ops() {
    for seed in 0..FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let inputs = [
            random_matrix(&mut rng, 4, 3),
            random_matrix(&mut rng, 3, 2),
            random_matrix(&mut rng, 4, 2),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 1, 2),
        ];
        let r = check_gradients(&inputs, EPS, |t, v| {
            let a = t.dual_linear(v[0], v[1], v[2], v[3], Some(v[4]))?;
            let b = t.relu(a);
            let c = t.concat_cols(b, v[2])?;
            let d = t.scale(c, 0.7);
            project(t, d, seed)
        })
        .unwrap();
        assert!(r.max_relative_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn f32_forward_tracks_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(&mut rng, 6);
    let x = random_matrix(&mut rng, 6, 4);
    let w = random_matrix(&mut rng, 4, 3);

    let mut t64 = Tape::<f64>::new();
    let (xv, wv) = (t64.constant(x.clone()), t64.constant(w.clone()));
    let m = t64.neighbor_mean(xv, g.clone()).unwrap();
    let y64 = t64.linear(m, wv, None).unwrap();

    let mut t32 = Tape::<f32>::new();
    let (xv, wv) = (t32.constant(x.cast()), t32.constant(w.cast()));
    let m = t32.neighbor_mean(xv, g).unwrap();
    let y32 = t32.linear(m, wv, None).unwrap();

    for (a, b) in t64.value(y64).data().iter().zip(t32.value(y32).data()) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}
