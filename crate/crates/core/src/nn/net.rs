use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Head, NetSpec, NnError};
use crate::matrix::Matrix;
use crate::params::ParamVector;

/// Training targets for one batch.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// Class indices, for the softmax head.
    Labels(&'a [u32]),
    /// Target outputs, for the MSE head.
    Values(&'a Matrix),
}

/// Slice views of one layer inside a flat parameter vector.
struct LayerView<'p> {
    inputs: usize,
    outputs: usize,
    weights: &'p [f64],
    bias: &'p [f64],
    activation: Activation,
}

fn layers<'p>(spec: &NetSpec, params: &'p [f64]) -> Vec<LayerView<'p>> {
    let mut offset = 0;
    spec.layer_sizes()
        .windows(2)
        .zip(spec.activations())
        .map(|(w, &activation)| {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = &params[offset..offset + inputs * outputs];
            offset += inputs * outputs;
            let bias = &params[offset..offset + outputs];
            offset += outputs;
            LayerView {
                inputs,
                outputs,
                weights,
                bias,
                activation,
            }
        })
        .collect()
}

/// Draws weights uniformly from `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`,
/// layer by layer, each weight matrix in row-major order. Biases start at zero.
pub fn init_params(spec: &NetSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes().windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.random_range(-scale..=scale));
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(values).expect("initial parameters are finite and non-empty")
}

fn check_shapes(spec: &NetSpec, params: &ParamVector, batch: &Matrix) -> Result<(), NnError> {
    if params.len() != spec.param_count() {
        return Err(NnError::DimensionMismatch {
            what: "parameter vector",
            expected: spec.param_count(),
            found: params.len(),
        });
    }
    if batch.cols() != spec.input_size() {
        return Err(NnError::DimensionMismatch {
            what: "batch columns",
            expected: spec.input_size(),
            found: batch.cols(),
        });
    }
    Ok(())
}

/// Pre-activations and activations of every layer, input first.
struct Trace {
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

fn run_layers(views: &[LayerView<'_>], batch: &Matrix) -> Trace {
    let mut pre = Vec::with_capacity(views.len());
    let mut post = Vec::with_capacity(views.len() + 1);
    post.push(batch.clone());
    for layer in views {
        let input = post.last().unwrap();
        let mut z = Matrix::zeros(input.rows(), layer.outputs);
        let mut a = Matrix::zeros(input.rows(), layer.outputs);
        for r in 0..input.rows() {
            let x = input.row(r);
            let zr = z.row_mut(r);
            for (o, zo) in zr.iter_mut().enumerate() {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let mut acc = layer.bias[o];
                for (wi, xi) in w.iter().zip(x) {
                    acc += wi * xi;
                }
                *zo = acc;
            }
            for (ao, &zo) in a.row_mut(r).iter_mut().zip(z.row(r)) {
                *ao = layer.activation.apply(zo);
            }
        }
        pre.push(z);
        post.push(a);
    }
    Trace { pre, post }
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Network output for a batch: class probabilities for the softmax head,
/// reconstructions for the MSE head.
pub fn forward(spec: &NetSpec, params: &ParamVector, batch: &Matrix) -> Result<Matrix, NnError> {
    check_shapes(spec, params, batch)?;
    let views = layers(spec, params);
    let trace = run_layers(&views, batch);
    let last = trace.post.into_iter().last().unwrap();
    let out = match spec.head() {
        Head::Softmax => softmax_rows(&last),
        Head::Mse => last,
    };
    if out.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("forward pass"));
    }
    Ok(out)
}

/// Mean loss over the batch and its gradient with respect to every parameter.
///
/// Softmax head: mean cross-entropy. MSE head: squared error averaged over
/// samples and output components.
pub fn loss_and_grad(
    spec: &NetSpec,
    params: &ParamVector,
    batch: &Matrix,
    targets: Targets<'_>,
) -> Result<(f64, ParamVector), NnError> {
    check_shapes(spec, params, batch)?;
    let n = batch.rows();
    if n == 0 {
        return Err(NnError::EmptyDataset);
    }
    let views = layers(spec, params);
    let trace = run_layers(&views, batch);
    let out_dim = spec.output_size();
    let output = trace.post.last().unwrap();

    // dL/dz for the last layer.
    let mut delta = Matrix::zeros(n, out_dim);
    let loss = match (spec.head(), targets) {
        (Head::Softmax, Targets::Labels(labels)) => {
            if labels.len() != n {
                return Err(NnError::DimensionMismatch {
                    what: "label count",
                    expected: n,
                    found: labels.len(),
                });
            }
            let probs = softmax_rows(output);
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                let y = label as usize;
                if y >= out_dim {
                    return Err(NnError::LabelOutOfRange {
                        label,
                        classes: out_dim,
                    });
                }
                let z = output.row(r);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - z[y];
                let d = delta.row_mut(r);
                for (k, dk) in d.iter_mut().enumerate() {
                    let indicator = if k == y { 1.0 } else { 0.0 };
                    *dk = (probs.get(r, k) - indicator) / n as f64;
                }
            }
            total / n as f64
        }
        (Head::Mse, Targets::Values(target)) => {
            if target.rows() != n || target.cols() != out_dim {
                return Err(NnError::DimensionMismatch {
                    what: "target shape",
                    expected: n * out_dim,
                    found: target.rows() * target.cols(),
                });
            }
            let count = (n * out_dim) as f64;
            let last = views.last().unwrap().activation;
            let z = trace.pre.last().unwrap();
            let mut total = 0.0;
            for r in 0..n {
                for k in 0..out_dim {
                    let diff = output.get(r, k) - target.get(r, k);
                    total += diff * diff;
                    delta.row_mut(r)[k] =
                        2.0 * diff / count * last.derivative(z.get(r, k), output.get(r, k));
                }
            }
            total / count
        }
        (Head::Softmax, Targets::Values(_)) => {
            return Err(NnError::WrongHead { expected: "mse" });
        }
        (Head::Mse, Targets::Labels(_)) => {
            return Err(NnError::WrongHead {
                expected: "softmax",
            });
        }
    };

    let mut grad = vec![0.0; params.len()];
    let mut offsets = Vec::with_capacity(views.len());
    let mut offset = 0;
    for v in &views {
        offsets.push(offset);
        offset += v.inputs * v.outputs + v.outputs;
    }

    for l in (0..views.len()).rev() {
        let layer = &views[l];
        let input = &trace.post[l];
        let base = offsets[l];
        let (gw, gb) = grad[base..base + layer.inputs * layer.outputs + layer.outputs]
            .split_at_mut(layer.inputs * layer.outputs);
        for r in 0..n {
            let d = delta.row(r);
            let x = input.row(r);
            for o in 0..layer.outputs {
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d[o] * xi;
                }
                gb[o] += d[o];
            }
        }
        if l > 0 {
            let prev = &views[l - 1];
            let z_prev = &trace.pre[l - 1];
            let a_prev = &trace.post[l];
            let mut next = Matrix::zeros(n, layer.inputs);
            for r in 0..n {
                let d = delta.row(r);
                let out = next.row_mut(r);
                for (dy, w) in d.iter().zip(layer.weights.chunks_exact(layer.inputs)) {
                    for (acc, wi) in out.iter_mut().zip(w) {
                        *acc += dy * wi;
                    }
                }
                for (i, acc) in out.iter_mut().enumerate() {
                    *acc *= prev
                        .activation
                        .derivative(z_prev.get(r, i), a_prev.get(r, i));
                }
            }
            delta = next;
        }
    }

    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFinite("gradient"));
    }
    Ok((loss, ParamVector::new(grad)?))
}
