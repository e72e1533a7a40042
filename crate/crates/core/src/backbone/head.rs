//! Classifier heads sitting on top of the last convolutional features.
//!
//! Besides the usual forward/backward pair, every head can return the
//! gradient of one class score with respect to its input features and the
//! vector-Jacobian product of that gradient map with respect to the head
//! parameters. The latter is what lets the attention loss differentiate
//! through Grad-CAM channel weights.

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, View};
use super::Param;

/// Head architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    /// Global average pooling followed by one linear layer.
    GapLinear,
    /// Flatten followed by rectified dense layers of the given widths and a
    /// final linear layer (VGG-style).
    Mlp { hidden: Vec<usize> },
}

/// Per-sample intermediate values kept for backward passes.
#[derive(Clone, Debug)]
pub(crate) enum HeadTrace {
    GapLinear { pooled: Vec<f64> },
    /// `inputs[l]` is the (rectified) input to dense layer `l`; `active[l]`
    /// marks the hidden units of layer `l` that passed the rectifier.
    Mlp { inputs: Vec<Vec<f64>>, active: Vec<Vec<bool>> },
}

/// Layer shapes `(out, in)` of the head for the given feature geometry.
pub(crate) fn layer_shapes(kind: &HeadKind, d: usize, spatial: usize, classes: usize) -> Vec<(usize, usize)> {
    match kind {
        HeadKind::GapLinear => vec![(classes, d)],
        HeadKind::Mlp { hidden } => {
            let mut shapes = Vec::with_capacity(hidden.len() + 1);
            let mut fan_in = d * spatial;
            for &h in hidden {
                shapes.push((h, fan_in));
                fan_in = h;
            }
            shapes.push((classes, fan_in));
            shapes
        }
    }
}

pub(crate) fn layer_names(kind: &HeadKind) -> Vec<String> {
    match kind {
        HeadKind::GapLinear => vec!["head.fc".into()],
        HeadKind::Mlp { hidden } => (0..=hidden.len()).map(|l| format!("head.fc{}", l + 1)).collect(),
    }
}

fn dense(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let out = bias.len();
    let mut y = bias.to_vec();
    gemm(out, x.len(), 1, 1.0, View::row_major(weight, x.len()), View::row_major(x, 1), 1.0, &mut y);
    y
}

/// `W^T v` for a row-major `out x in` weight.
fn dense_transpose(weight: &[f64], v: &[f64], fan_in: usize) -> Vec<f64> {
    let mut y = vec![0.0; fan_in];
    gemm(fan_in, v.len(), 1, 1.0, View::transposed(weight, fan_in), View::row_major(v, 1), 0.0, &mut y);
    y
}

/// `dw += a b^T` for `a` of length `out`, `b` of length `in`.
fn add_outer(dw: &mut [f64], a: &[f64], b: &[f64]) {
    for (row, &ai) in dw.chunks_exact_mut(b.len()).zip(a) {
        if ai != 0.0 {
            for (g, &bj) in row.iter_mut().zip(b) {
                *g += ai * bj;
            }
        }
    }
}

/// `params` holds weight/bias pairs in layer order.
pub(crate) fn forward(kind: &HeadKind, params: &[Param], features: &[f64], d: usize) -> (Vec<f64>, HeadTrace) {
    match kind {
        HeadKind::GapLinear => {
            let z = features.len() / d;
            let pooled: Vec<f64> = features
                .chunks_exact(z)
                .map(|plane| plane.iter().sum::<f64>() / z as f64)
                .collect();
            let logits = dense(&params[0].data, &params[1].data, &pooled);
            (logits, HeadTrace::GapLinear { pooled })
        }
        HeadKind::Mlp { hidden } => {
            let mut inputs = Vec::with_capacity(hidden.len() + 1);
            let mut active = Vec::with_capacity(hidden.len());
            let mut x = features.to_vec();
            for l in 0..hidden.len() {
                let mut h = dense(&params[2 * l].data, &params[2 * l + 1].data, &x);
                let mask: Vec<bool> = h.iter().map(|&v| v > 0.0).collect();
                for (v, &m) in h.iter_mut().zip(&mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                inputs.push(std::mem::replace(&mut x, h));
                active.push(mask);
            }
            let last = hidden.len();
            let logits = dense(&params[2 * last].data, &params[2 * last + 1].data, &x);
            inputs.push(x);
            (logits, HeadTrace::Mlp { inputs, active })
        }
    }
}

/// Backpropagates `dlogits`, accumulating into `grads` (same layout as
/// `params`) and returning the gradient with respect to the features.
pub(crate) fn backward(
    params: &[Param],
    trace: &HeadTrace,
    dlogits: &[f64],
    feature_len: usize,
    d: usize,
    grads: &mut [Vec<f64>],
) -> Vec<f64> {
    match trace {
        HeadTrace::GapLinear { pooled } => {
            add_outer(&mut grads[0], dlogits, pooled);
            for (g, v) in grads[1].iter_mut().zip(dlogits) {
                *g += v;
            }
            let dpooled = dense_transpose(&params[0].data, dlogits, d);
            let z = feature_len / d;
            let mut df = vec![0.0; feature_len];
            for (plane, g) in df.chunks_exact_mut(z).zip(&dpooled) {
                plane.fill(g / z as f64);
            }
            df
        }
        HeadTrace::Mlp { inputs, active } => {
            let mut delta = dlogits.to_vec();
            for l in (0..inputs.len()).rev() {
                add_outer(&mut grads[2 * l], &delta, &inputs[l]);
                for (g, v) in grads[2 * l + 1].iter_mut().zip(&delta) {
                    *g += v;
                }
                let mut up = dense_transpose(&params[2 * l].data, &delta, inputs[l].len());
                if l > 0 {
                    for (v, &m) in up.iter_mut().zip(&active[l - 1]) {
                        if !m {
                            *v = 0.0;
                        }
                    }
                }
                delta = up;
            }
            delta
        }
    }
}

/// Gradient of the score of `class` with respect to the head input.
pub(crate) fn score_gradient(params: &[Param], trace: &HeadTrace, class: usize, feature_len: usize, d: usize) -> Vec<f64> {
    match trace {
        HeadTrace::GapLinear { .. } => {
            let z = (feature_len / d) as f64;
            let row = &params[0].data[class * d..(class + 1) * d];
            let mut g = vec![0.0; feature_len];
            for (plane, w) in g.chunks_exact_mut(feature_len / d).zip(row) {
                plane.fill(w / z);
            }
            g
        }
        HeadTrace::Mlp { .. } => mlp_deltas(params, trace, class).pop().unwrap_or_default(),
    }
}

/// For an MLP head, the chain `u_L, ..., u_1` where `u_l = W_l^T delta_l`,
/// `delta_L = e_class` and `delta_{l-1} = active_{l-1} * u_l`. Returned
/// ordered from the output layer down; the last entry is the input gradient.
fn mlp_deltas(params: &[Param], trace: &HeadTrace, class: usize) -> Vec<Vec<f64>> {
    let HeadTrace::Mlp { inputs, active } = trace else {
        unreachable!("mlp_deltas on a non-MLP trace")
    };
    let layers = inputs.len();
    let classes = params[2 * layers - 1].data.len();
    let mut delta = vec![0.0; classes];
    delta[class] = 1.0;
    let mut chain = Vec::with_capacity(layers);
    for l in (0..layers).rev() {
        let mut u = dense_transpose(&params[2 * l].data, &delta, inputs[l].len());
        chain.push(u.clone());
        if l > 0 {
            for (v, &m) in u.iter_mut().zip(&active[l - 1]) {
                if !m {
                    *v = 0.0;
                }
            }
            delta = u;
        }
    }
    chain
}

/// Vector-Jacobian product of [`score_gradient`]: given `dgrad`, the loss
/// gradient with respect to the score-gradient map, accumulates the implied
/// head parameter gradients into `grads`.
///
/// The score gradient depends on the features only through rectifier
/// activation patterns, which are locally constant, so the feature part of
/// this product is zero almost everywhere and is not returned.
pub(crate) fn score_gradient_vjp(
    params: &[Param],
    trace: &HeadTrace,
    class: usize,
    dgrad: &[f64],
    d: usize,
    grads: &mut [Vec<f64>],
) {
    match trace {
        HeadTrace::GapLinear { .. } => {
            let z = dgrad.len() / d;
            let row = &mut grads[0][class * d..(class + 1) * d];
            for (g, plane) in row.iter_mut().zip(dgrad.chunks_exact(z)) {
                *g += plane.iter().sum::<f64>() / z as f64;
            }
        }
        HeadTrace::Mlp { inputs, active } => {
            let layers = inputs.len();
            // deltas[l] is delta_l, the vector multiplied by W_l^T.
            let chain = mlp_deltas(params, trace, class);
            let classes = params[2 * layers - 1].data.len();
            let mut deltas = vec![Vec::new(); layers];
            let mut top = vec![0.0; classes];
            top[class] = 1.0;
            deltas[layers - 1] = top;
            for l in (1..layers).rev() {
                // chain index for u_{l} (layer l, counted from the top)
                let u = &chain[layers - 1 - l];
                deltas[l - 1] = u.iter().zip(&active[l - 1]).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
            }
            let mut du = dgrad.to_vec();
            for l in 0..layers {
                add_outer(&mut grads[2 * l], &deltas[l], &du);
                if l + 1 == layers {
                    break;
                }
                // delta_l = active_l * u_{l+1}
                let ddelta = dense(&params[2 * l].data, &vec![0.0; deltas[l].len()], &du);
                du = ddelta
                    .iter()
                    .zip(&active[l])
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
            }
        }
    }
}
