use crate::error::{Error, Result};
use crate::layers::gradcheck::{central_difference, ErrorTracker, GradCheckReport};
use crate::layers::{
    argmax_class, conv_backward, conv_forward, fc_backward, fc_forward, log_sum_exp,
    lrn_backward, lrn_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    softmax, ArgmaxMap, ConvParams, FcParams,
};
use crate::network::graph::{DexpressionConfig, LayerKind, NetworkGraph};
use crate::tensor::{Scalar, Shape, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Named parameter tensors. Conv and FC layers each contribute a
/// `<name>.weights` and a `<name>.bias` entry; biases are rank-1 tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn empty() -> Self {
        ParamSet { tensors: BTreeMap::new() }
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        self.tensors.get(key).ok_or_else(|| Error::MissingTensor(key.to_string()))
    }

    pub fn insert(&mut self, key: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(key.into(), tensor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Same keys, all values zero; the shape of momentum buffers and
    /// accumulated gradients.
    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().clone())))
                .collect(),
        }
    }

    /// `self += alpha * other`, elementwise over matching keys.
    pub fn axpy(&mut self, alpha: T, other: &ParamSet<T>) -> Result<()> {
        for (key, tensor) in &mut self.tensors {
            let o = other.get(key)?;
            for (v, &g) in tensor.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *v = *v + alpha * g;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Verifies every parameterized layer of `g` has exactly its weights and
    /// bias entries, with shapes matching the layer configuration.
    pub fn validate_against(&self, g: &NetworkGraph) -> Result<()> {
        let mut expected = 0usize;
        for layer in &g.layers {
            let (w_dims, b_dims): (Vec<usize>, Vec<usize>) = match &layer.kind {
                LayerKind::Conv { in_channels, out_channels, kernel, .. } => (
                    vec![*out_channels, *in_channels, kernel.0, kernel.1],
                    vec![*out_channels],
                ),
                LayerKind::Fc { in_dim, out_dim } => (vec![*out_dim, *in_dim], vec![*out_dim]),
                _ => continue,
            };
            expected += 2;
            for (suffix, dims) in [("weights", w_dims), ("bias", b_dims)] {
                let t = self.get(&format!("{}.{suffix}", layer.name))?;
                if t.shape().dims() != dims {
                    return Err(Error::ShapeMismatch {
                        expected: dims,
                        got: t.shape().dims().to_vec(),
                    });
                }
            }
        }
        if self.len() != expected {
            let known: Vec<&String> = self.keys().collect();
            return Err(Error::InvalidGraph(format!(
                "parameter set has {} tensors, graph expects {expected}: {known:?}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights (`a = sqrt(6/(fan_in+fan_out))`), zero biases,
/// drawn deterministically from the seed in layer order.
pub fn init_params<T: Scalar>(g: &NetworkGraph, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::empty();
    for layer in &g.layers {
        let (w_shape, fan_in, fan_out, bias_len) = match &layer.kind {
            LayerKind::Conv { in_channels, out_channels, kernel, .. } => (
                vec![*out_channels, *in_channels, kernel.0, kernel.1],
                in_channels * kernel.0 * kernel.1,
                out_channels * kernel.0 * kernel.1,
                *out_channels,
            ),
            LayerKind::Fc { in_dim, out_dim } => {
                (vec![*out_dim, *in_dim], *in_dim, *out_dim, *out_dim)
            }
            _ => continue,
        };
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let shape = Shape::new(w_shape).expect("positive extents");
        let data: Vec<T> = (0..shape.num_elements())
            .map(|_| T::from_f64_lossy(rng.random_range(-a..a)))
            .collect();
        params.insert(
            format!("{}.weights", layer.name),
            Tensor::from_vec(shape, data).expect("consistent shape"),
        );
        params.insert(
            format!("{}.bias", layer.name),
            Tensor::zeros(Shape::new(vec![bias_len]).expect("positive extent")),
        );
    }
    params
}

fn conv_params_for<T: Scalar>(
    name: &str,
    kind: &LayerKind,
    params: &ParamSet<T>,
) -> Result<ConvParams<T>> {
    let LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } = kind else {
        unreachable!("conv_params_for called on non-conv layer");
    };
    ConvParams::new(
        *in_channels,
        *out_channels,
        *kernel,
        *stride,
        *padding,
        params.get(&format!("{name}.weights"))?.clone(),
        params.get(&format!("{name}.bias"))?.as_slice().to_vec(),
    )
}

fn fc_params_for<T: Scalar>(
    name: &str,
    kind: &LayerKind,
    params: &ParamSet<T>,
) -> Result<FcParams<T>> {
    let LayerKind::Fc { in_dim, out_dim } = kind else {
        unreachable!("fc_params_for called on non-fc layer");
    };
    FcParams::new(
        *in_dim,
        *out_dim,
        params.get(&format!("{name}.weights"))?.clone(),
        params.get(&format!("{name}.bias"))?.as_slice().to_vec(),
    )
}

struct Tape<T: Scalar> {
    activations: Vec<Tensor<T>>,
    pool_maps: Vec<Option<ArgmaxMap>>,
}

fn run_forward<T: Scalar>(
    g: &NetworkGraph,
    params: &ParamSet<T>,
    x: &Tensor<T>,
) -> Result<Tape<T>> {
    if x.shape() != &g.input_shape {
        return Err(Error::ShapeMismatch {
            expected: g.input_shape.dims().to_vec(),
            got: x.shape().dims().to_vec(),
        });
    }
    let index = g.layer_index();
    let mut activations: Vec<Tensor<T>> = Vec::with_capacity(g.layers.len());
    let mut pool_maps: Vec<Option<ArgmaxMap>> = Vec::with_capacity(g.layers.len());
    for layer in &g.layers {
        let input = |slot: usize| &activations[index[layer.inputs[slot].as_str()]];
        let mut pool_map = None;
        let out = match &layer.kind {
            LayerKind::Data => x.clone(),
            LayerKind::Conv { .. } => {
                conv_forward(input(0), &conv_params_for(&layer.name, &layer.kind, params)?)?
            }
            LayerKind::MaxPool(p) => {
                let (out, map) = maxpool_forward(input(0), p)?;
                pool_map = Some(map);
                out
            }
            LayerKind::Lrn(p) => lrn_forward(input(0), p)?,
            LayerKind::Relu => relu_forward(input(0)),
            LayerKind::Concat => Tensor::concat_channels(input(0), input(1))?,
            LayerKind::Fc { out_dim, .. } => {
                let out = fc_forward(input(0), &fc_params_for(&layer.name, &layer.kind, params)?)?;
                Tensor::from_vec(Shape::new(vec![*out_dim])?, out)?
            }
            LayerKind::Softmax => {
                let probs = softmax(input(0).as_slice());
                Tensor::from_vec(input(0).shape().clone(), probs)?
            }
        };
        activations.push(out);
        pool_maps.push(pool_map);
    }
    Ok(Tape { activations, pool_maps })
}

pub struct ForwardOutput<T: Scalar = f32> {
    /// Class probabilities, length `num_classes`, summing to 1.
    pub probabilities: Vec<T>,
    /// Per-layer activations, captured on request for visualization.
    pub activations: Option<BTreeMap<String, Tensor<T>>>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn predicted_class(&self) -> usize {
        argmax_class(&self.probabilities)
    }
}

pub fn forward<T: Scalar>(
    g: &NetworkGraph,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    capture_activations: bool,
) -> Result<ForwardOutput<T>> {
    let tape = run_forward(g, params, x)?;
    let probabilities = tape.activations.last().expect("non-empty graph").as_slice().to_vec();
    let activations = capture_activations.then(|| {
        g.layers
            .iter()
            .zip(&tape.activations)
            .map(|(l, a)| (l.name.clone(), a.clone()))
            .collect()
    });
    Ok(ForwardOutput { probabilities, activations })
}

pub struct BackwardOutput<T: Scalar = f32> {
    /// Cross-entropy loss of the sample.
    pub loss: T,
    pub probabilities: Vec<T>,
    /// Gradients keyed exactly like the parameter set.
    pub gradients: ParamSet<T>,
}

/// Gradient of the cross-entropy loss with respect to every parameter.
/// Softmax and cross-entropy are fused: the classifier-input gradient is
/// `probabilities - one_hot(target)`.
pub fn backward<T: Scalar>(
    g: &NetworkGraph,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    target: usize,
) -> Result<BackwardOutput<T>> {
    if target >= g.num_classes {
        return Err(Error::InvalidTarget { target, num_classes: g.num_classes });
    }
    let tape = run_forward(g, params, x)?;
    let index = g.layer_index();

    let softmax_idx = g
        .layers
        .iter()
        .position(|l| matches!(l.kind, LayerKind::Softmax))
        .ok_or_else(|| Error::InvalidGraph("graph has no softmax layer".into()))?;
    let logits_idx = index[g.layers[softmax_idx].inputs[0].as_str()];
    let logits = tape.activations[logits_idx].as_slice();
    let probabilities = tape.activations[softmax_idx].as_slice().to_vec();
    let loss = log_sum_exp(logits) - logits[target];

    // Reverse accumulation; grads[i] is the loss gradient at layer i's output.
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; g.layers.len()];
    let mut fused: Vec<T> = probabilities.clone();
    fused[target] = fused[target] - T::one();
    grads[logits_idx] =
        Some(Tensor::from_vec(tape.activations[logits_idx].shape().clone(), fused)?);

    let mut param_grads = ParamSet::empty();
    let accumulate = |grads: &mut Vec<Option<Tensor<T>>>, idx: usize, g_new: Tensor<T>| {
        match &mut grads[idx] {
            Some(existing) => {
                for (v, &n) in existing.as_mut_slice().iter_mut().zip(g_new.as_slice()) {
                    *v = *v + n;
                }
            }
            slot => *slot = Some(g_new),
        }
    };

    for (i, layer) in g.layers.iter().enumerate().rev() {
        if matches!(layer.kind, LayerKind::Softmax | LayerKind::Data) {
            continue;
        }
        let Some(grad_out) = grads[i].take() else { continue };
        let input_idx = index[layer.inputs[0].as_str()];
        match &layer.kind {
            LayerKind::Conv { .. } => {
                let p = conv_params_for(&layer.name, &layer.kind, params)?;
                let out = conv_backward(&tape.activations[input_idx], &p, &grad_out)?;
                param_grads.insert(format!("{}.weights", layer.name), out.grad_weights);
                param_grads.insert(
                    format!("{}.bias", layer.name),
                    Tensor::from_vec(Shape::new(vec![out.grad_bias.len()])?, out.grad_bias)?,
                );
                accumulate(&mut grads, input_idx, out.grad_input);
            }
            LayerKind::Fc { .. } => {
                let p = fc_params_for(&layer.name, &layer.kind, params)?;
                let out =
                    fc_backward(&tape.activations[input_idx], &p, grad_out.as_slice())?;
                param_grads.insert(format!("{}.weights", layer.name), out.grad_weights);
                param_grads.insert(
                    format!("{}.bias", layer.name),
                    Tensor::from_vec(Shape::new(vec![out.grad_bias.len()])?, out.grad_bias)?,
                );
                accumulate(&mut grads, input_idx, out.grad_input);
            }
            LayerKind::MaxPool(_) => {
                let map = tape.pool_maps[i].as_ref().expect("pool layer has argmax map");
                accumulate(&mut grads, input_idx, maxpool_backward(map, &grad_out)?);
            }
            LayerKind::Lrn(p) => {
                accumulate(
                    &mut grads,
                    input_idx,
                    lrn_backward(&tape.activations[input_idx], p, &grad_out)?,
                );
            }
            LayerKind::Relu => {
                accumulate(
                    &mut grads,
                    input_idx,
                    relu_backward(&tape.activations[input_idx], &grad_out),
                );
            }
            LayerKind::Concat => {
                let second_idx = index[layer.inputs[1].as_str()];
                let (c_a, _, _) = tape.activations[input_idx].chw()?;
                let (c_total, _, _) = grad_out.chw()?;
                accumulate(&mut grads, input_idx, grad_out.slice_channels(0, c_a)?);
                accumulate(&mut grads, second_idx, grad_out.slice_channels(c_a, c_total)?);
            }
            LayerKind::Data | LayerKind::Softmax => unreachable!(),
        }
    }

    Ok(BackwardOutput { loss, probabilities, gradients: param_grads })
}

/// End-to-end finite-difference check on the shrunken graph, in 64-bit mode.
/// A seeded random subset of coordinates per tensor is probed when the tensor
/// is large; small tensors are probed exhaustively.
pub fn check_network_gradients(seed: u64, eps: f64, tolerance: f64) -> Result<GradCheckReport> {
    let cfg = DexpressionConfig::shrunken(3);
    let g = crate::network::graph::build_dexpression_with(&cfg)?;
    let params: ParamSet<f64> = init_params(&g, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x_data: Vec<f64> = (0..g.input_shape.num_elements())
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let x = Tensor::from_vec(g.input_shape.clone(), x_data)?;
    let target = 1usize;

    let analytic = backward(&g, &params, &x, target)?;
    let mut tracker = ErrorTracker::new("network (shrunken graph)");

    let loss_with = |p: &ParamSet<f64>| -> f64 { backward(&g, p, &x, target).unwrap().loss };

    let max_probe = 160;
    for key in params.keys().cloned().collect::<Vec<_>>() {
        let tensor = params.get(&key)?.clone();
        let n = tensor.len();
        let coords: Vec<usize> = if n <= max_probe {
            (0..n).collect()
        } else {
            (0..max_probe).map(|_| rng.random_range(0..n)).collect()
        };
        let grad = analytic.gradients.get(&key)?;
        for idx in coords {
            let mut data = tensor.as_slice().to_vec();
            let mut f = |v: &[f64]| {
                let mut p = params.clone();
                p.insert(
                    key.clone(),
                    Tensor::from_vec(tensor.shape().clone(), v.to_vec()).unwrap(),
                );
                loss_with(&p)
            };
            let num = central_difference(&mut f, &mut data, idx, eps);
            tracker.record(format!("{key}[{idx}]"), grad.as_slice()[idx], num);
        }
    }
    Ok(tracker.finish(tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::graph::build_dexpression_with;

    fn small_graph() -> NetworkGraph {
        build_dexpression_with(&DexpressionConfig::shrunken(3)).unwrap()
    }

    #[test]
    fn forward_probabilities_sum_to_one() {
        let g = small_graph();
        let params = init_params::<f32>(&g, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> =
            (0..g.input_shape.num_elements()).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::from_vec(g.input_shape.clone(), data).unwrap();
        let out = forward(&g, &params, &x, false).unwrap();
        assert_eq!(out.probabilities.len(), 3);
        let sum: f32 = out.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_input_zero_weights_is_uniform() {
        let g = small_graph();
        let params = init_params::<f32>(&g, 0).zeros_like();
        let x = Tensor::zeros(g.input_shape.clone());
        let out = forward(&g, &params, &x, false).unwrap();
        for p in &out.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let g = small_graph();
        let params = init_params::<f32>(&g, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f32> =
            (0..g.input_shape.num_elements()).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::from_vec(g.input_shape.clone(), data).unwrap();
        let a = forward(&g, &params, &x, false).unwrap();
        let b = forward(&g, &params, &x, false).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
    }

    #[test]
    fn fused_softmax_gradient_identities() {
        // Uniform probabilities over 2 classes, target 0: gradient is p - y.
        let probs = [0.5f32, 0.5];
        let mut fused = probs;
        fused[0] -= 1.0;
        assert_eq!(fused, [-0.5, 0.5]);
    }

    #[test]
    fn invalid_target_rejected() {
        let g = small_graph();
        let params = init_params::<f32>(&g, 1);
        let x = Tensor::zeros(g.input_shape.clone());
        assert!(matches!(
            backward(&g, &params, &x, 3),
            Err(Error::InvalidTarget { .. })
        ));
    }

    #[test]
    fn input_shape_mismatch_rejected() {
        let g = small_graph();
        let params = init_params::<f32>(&g, 1);
        let x: Tensor = Tensor::zeros(crate::shape![1, 8, 8]);
        assert!(forward(&g, &params, &x, false).is_err());
    }

    #[test]
    fn capture_exposes_per_layer_activations() {
        let g = small_graph();
        let params = init_params::<f32>(&g, 3);
        let x = Tensor::zeros(g.input_shape.clone());
        let out = forward(&g, &params, &x, true).unwrap();
        let acts = out.activations.unwrap();
        assert_eq!(acts.len(), g.layers.len());
        assert_eq!(acts["Convolution 1"].shape().dims(), &[4, 8, 8]);
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let g = small_graph();
        let a = init_params::<f32>(&g, 5);
        let b = init_params::<f32>(&g, 5);
        let c = init_params::<f32>(&g, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.get("Convolution 1.bias").unwrap().as_slice().iter().all(|&v| v == 0.0));
        a.validate_against(&g).unwrap();
    }
}
