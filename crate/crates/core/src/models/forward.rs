use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{ModelKind, ModelSpec, Params};
use crate::autodiff::{
    bn_relu_dropout, dropout, dropout_mask, AttentionConfig, BnRecorder, Matrix, Mode, Real,
    RunningStats, Tape, Var,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ingest::Label;

/// Output handles of one forward pass.
pub(crate) struct ForwardVars {
    pub logits: Var,
    pub penultimate: Var,
}

/// Puts every tensor on the tape, differentiable when `trainable`.
pub(crate) fn bind<T: Real>(tape: &mut Tape<T>, params: &Params, trainable: bool) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| {
            let m = t.cast::<T>();
            if trainable {
                tape.param(m)
            } else {
                tape.constant(m)
            }
        })
        .collect()
}

/// Builds the forward graph on `tape`. `vars` come from [`bind`]; `bn` is
/// updated in training mode only.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_on_tape<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec,
    vars: &[Var],
    bn: &mut [RunningStats],
    tape: &mut Tape<T>,
    x: Var,
    graph: &Arc<Graph>,
    mode: Mode,
    rng: &mut R,
    mut recorder: Option<&mut BnRecorder<'_>>,
) -> Result<ForwardVars> {
    let (n, d) = tape.value(x).shape();
    if d != spec.input_dim {
        return Err(Error::Dimension(format!(
            "{d} feature columns for a {}-input model",
            spec.input_dim
        )));
    }
    if graph.num_nodes() != n {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, features {n} rows",
            graph.num_nodes()
        )));
    }
    if vars.len() != spec.layout().len() || bn.len() != spec.bn_widths().len() {
        return Err(Error::Dimension(
            "parameter list does not match the spec".into(),
        ));
    }
    let mut it = vars.iter().copied();
    let mut next = move || it.next().expect("layout length checked");
    let p = spec.dropout;
    let out = match spec.kind {
        ModelKind::Mlp => {
            // Edge-blind: the graph is only used for the size check above.
            let mut h = x;
            for (l, stats) in bn.iter_mut().enumerate() {
                let (w, b) = (next(), next());
                let z = tape.linear(h, w, Some(b))?;
                let (g, be) = (next(), next());
                h = bn_relu_dropout(
                    tape,
                    z,
                    g,
                    be,
                    mode,
                    stats,
                    p,
                    rng,
                    recorder.as_deref_mut(),
                    l,
                )?;
            }
            let (w, b) = (next(), next());
            ForwardVars {
                logits: tape.linear(h, w, Some(b))?,
                penultimate: h,
            }
        }
        ModelKind::Gcn => {
            let mut h = x;
            let mut penultimate = x;
            for l in 0..spec.layers {
                let (w, b) = (next(), next());
                let z = tape.matmul(h, w)?;
                let z = tape.gcn_propagate(z, graph.clone())?;
                let z = tape.add_bias(z, b)?;
                if l + 1 == spec.layers {
                    h = z;
                } else {
                    let a = tape.relu(z);
                    penultimate = a;
                    h = dropout(tape, a, p, rng, mode)?;
                }
            }
            ForwardVars {
                logits: h,
                penultimate,
            }
        }
        ModelKind::Sage => {
            let (w, b) = (next(), next());
            let mut h = tape.linear(x, w, Some(b))?;
            for (l, stats) in bn.iter_mut().enumerate() {
                let (wn, bn_, wr) = (next(), next(), next());
                let m = tape.neighbor_mean(h, graph.clone())?;
                let z = tape.dual_linear(m, wn, h, wr, Some(bn_))?;
                let (g, be) = (next(), next());
                h = bn_relu_dropout(
                    tape,
                    z,
                    g,
                    be,
                    mode,
                    stats,
                    p,
                    rng,
                    recorder.as_deref_mut(),
                    l,
                )?;
            }
            let (w, b) = (next(), next());
            ForwardVars {
                logits: tape.linear(h, w, Some(b))?,
                penultimate: h,
            }
        }
        ModelKind::Gat => {
            let (w, b) = (next(), next());
            let mut h = tape.linear(x, w, Some(b))?;
            // Each target attends over its neighbours plus itself.
            let slots = graph.directed_edge_count() + n;
            for (l, stats) in bn.iter_mut().enumerate() {
                let (w, a_src, a_dst, bias) = (next(), next(), next(), next());
                let z = tape.matmul(h, w)?;
                let edge_dropout =
                    (mode == Mode::Train && spec.attention_dropout > 0.0).then(|| {
                        (
                            dropout_mask(slots * spec.heads, spec.attention_dropout, rng),
                            spec.attention_dropout,
                        )
                    });
                let cfg = AttentionConfig {
                    heads: spec.heads,
                    negative_slope: spec.negative_slope,
                    self_loops: true,
                    edge_dropout,
                };
                let z = tape.attention(z, a_src, a_dst, Some(bias), graph.clone(), cfg)?;
                let (g, be) = (next(), next());
                h = bn_relu_dropout(
                    tape,
                    z,
                    g,
                    be,
                    mode,
                    stats,
                    p,
                    rng,
                    recorder.as_deref_mut(),
                    l,
                )?;
            }
            let (w, b) = (next(), next());
            ForwardVars {
                logits: tape.linear(h, w, Some(b))?,
                penultimate: h,
            }
        }
    };
    Ok(out)
}

/// Eval-mode outputs in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub logits: Matrix<f64>,
    pub penultimate: Matrix<f64>,
}

/// Eval-mode forward pass in precision `T`. Running statistics are read,
/// never written.
pub fn infer<T: Real>(
    spec: &ModelSpec,
    params: &Params,
    features: &Matrix<f64>,
    graph: &Arc<Graph>,
) -> Result<Inference> {
    params.check_against(spec)?;
    let mut tape = Tape::<T>::new();
    let vars = bind(&mut tape, params, false);
    let x = tape.constant(features.cast::<T>());
    let mut bn = params.bn.clone();
    // Eval mode draws no random numbers; any generator will do.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward_on_tape(
        spec,
        &vars,
        &mut bn,
        &mut tape,
        x,
        graph,
        Mode::Eval,
        &mut rng,
        None,
    )?;
    tape.ensure_finite()?;
    Ok(Inference {
        logits: tape.take_value(out.logits).cast(),
        penultimate: tape.take_value(out.penultimate).cast(),
    })
}

/// Softmax mass on the illicit logit, per row.
pub fn illicit_probabilities(logits: &Matrix<f64>) -> Vec<f64> {
    let k = Label::Illicit.class_index();
    let mut buf = vec![0.0; logits.cols()];
    (0..logits.rows())
        .map(|i| {
            crate::autodiff::softmax_into(logits.row(i), &mut buf);
            buf[k]
        })
        .collect()
}

/// Argmax class per row; the first maximum wins.
pub fn argmax_classes(logits: &Matrix<f64>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            row.iter()
                .enumerate()
                .fold(0, |b, (j, v)| if *v > row[b] { j } else { b })
        })
        .collect()
}

/// Whether the argmax class is illicit, per row.
pub fn predicts_illicit(logits: &Matrix<f64>) -> Vec<bool> {
    argmax_classes(logits)
        .into_iter()
        .map(|c| c == Label::Illicit.class_index())
        .collect()
}
