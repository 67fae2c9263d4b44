//! Multi-branch feed-forward networks: each branch consumes one input tensor,
//! branch outputs are concatenated with optional scalar extras, and a head of
//! dense layers produces the two action values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::{NnError, Tensor};

/// Width of every network output: (not order, order).
pub const OUTPUTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d { out_channels: usize, kernel: [usize; 3] },
    Conv1d { out_channels: usize, kernel: usize },
    Dense { width: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv3d { .. } | LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub branches: Vec<BranchSpec>,
    /// Scalars appended after the branch outputs (the remaining-time input).
    pub extra_inputs: usize,
    pub head: Vec<LayerSpec>,
}

/// Hyperparameters of the order-book / trade-flow network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub conv3d_channels: usize,
    pub conv3d_kernel: [usize; 3],
    pub conv1d_channels: usize,
    pub conv1d_kernel: usize,
    pub dense_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            conv3d_channels: 8,
            conv3d_kernel: [2, 3, 3],
            conv1d_channels: 16,
            conv1d_kernel: 5,
            dense_width: 100,
        }
    }
}

impl NetworkSpec {
    /// Ask and bid Conv3D branches, a Conv1D trade-flow branch, one hidden
    /// dense layer and the two-way head. `book_shape` is `[W, T, L, 2]`,
    /// `trade_shape` is `[T, 11]`.
    pub fn scalping(
        arch: &ArchConfig,
        book_shape: [usize; 4],
        trade_shape: [usize; 2],
        with_remaining_time: bool,
    ) -> NetworkSpec {
        let book = |name: &str| BranchSpec {
            name: name.into(),
            input_shape: book_shape.to_vec(),
            layers: vec![
                LayerSpec::Conv3d {
                    out_channels: arch.conv3d_channels,
                    kernel: arch.conv3d_kernel,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
            ],
        };
        NetworkSpec {
            branches: vec![
                book("ask"),
                book("bid"),
                BranchSpec {
                    name: "trade".into(),
                    input_shape: trade_shape.to_vec(),
                    layers: vec![
                        LayerSpec::Conv1d {
                            out_channels: arch.conv1d_channels,
                            kernel: arch.conv1d_kernel,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Flatten,
                    ],
                },
            ],
            extra_inputs: usize::from(with_remaining_time),
            head: vec![
                LayerSpec::Dense {
                    width: arch.dense_width,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { width: OUTPUTS },
            ],
        }
    }

    /// Shape of every parameter tensor, in storage order, with its name and fan-in.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>, usize)>, NnError> {
        let mut layout = Vec::new();
        let mut concat = 0;
        for branch in &self.branches {
            let out = walk(&branch.name, &branch.input_shape, &branch.layers, &mut layout)?;
            if out.len() != 1 {
                return Err(NnError::ShapeMismatch(format!(
                    "branch {} must end 1-D, ends with {out:?}",
                    branch.name
                )));
            }
            concat += out[0];
        }
        concat += self.extra_inputs;
        if concat == 0 {
            return Err(NnError::ShapeMismatch("network has no inputs".into()));
        }
        let out = walk("head", &[concat], &self.head, &mut layout)?;
        if out != [OUTPUTS] {
            return Err(NnError::BadHead(out));
        }
        Ok(layout)
    }
}

fn walk(
    prefix: &str,
    input: &[usize],
    layers: &[LayerSpec],
    layout: &mut Vec<(String, Vec<usize>, usize)>,
) -> Result<Vec<usize>, NnError> {
    let mut shape = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let mismatch = |msg: String| NnError::ShapeMismatch(format!("{prefix}.{i}: {msg}"));
        shape = match *layer {
            LayerSpec::Conv3d {
                out_channels,
                kernel,
            } => {
                let [w, t, l, c]: [usize; 4] = shape
                    .as_slice()
                    .try_into()
                    .map_err(|_| mismatch(format!("conv3d needs rank-4 input, got {shape:?}")))?;
                if kernel.iter().any(|&k| k == 0) || kernel[0] > w || kernel[1] > t || kernel[2] > l {
                    return Err(mismatch(format!("kernel {kernel:?} does not fit {shape:?}")));
                }
                let fan_in = kernel.iter().product::<usize>() * c;
                layout.push((
                    format!("{prefix}.{i}.weight"),
                    vec![out_channels, kernel[0], kernel[1], kernel[2], c],
                    fan_in,
                ));
                layout.push((format!("{prefix}.{i}.bias"), vec![out_channels], fan_in));
                vec![w - kernel[0] + 1, t - kernel[1] + 1, l - kernel[2] + 1, out_channels]
            }
            LayerSpec::Conv1d {
                out_channels,
                kernel,
            } => {
                let [t, c]: [usize; 2] = shape
                    .as_slice()
                    .try_into()
                    .map_err(|_| mismatch(format!("conv1d needs rank-2 input, got {shape:?}")))?;
                if kernel == 0 || kernel > t {
                    return Err(mismatch(format!("kernel {kernel} does not fit {shape:?}")));
                }
                layout.push((format!("{prefix}.{i}.weight"), vec![out_channels, kernel, c], kernel * c));
                layout.push((format!("{prefix}.{i}.bias"), vec![out_channels], kernel * c));
                vec![t - kernel + 1, out_channels]
            }
            LayerSpec::Dense { width } => {
                let [n]: [usize; 1] = shape
                    .as_slice()
                    .try_into()
                    .map_err(|_| mismatch(format!("dense needs 1-D input, got {shape:?}")))?;
                layout.push((format!("{prefix}.{i}.weight"), vec![width, n], n));
                layout.push((format!("{prefix}.{i}.bias"), vec![width], n));
                vec![width]
            }
            LayerSpec::Relu => shape,
            LayerSpec::Flatten => vec![shape.iter().product()],
        };
    }
    Ok(shape)
}

/// One network input: a tensor per branch plus the extra scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub branches: Vec<Tensor>,
    pub extra: Vec<f64>,
}

/// Anything that can be turned into a network input on demand.
pub trait AsNetInput {
    fn net_input(&self) -> NetInput;
}

impl AsNetInput for NetInput {
    fn net_input(&self) -> NetInput {
        self.clone()
    }
}

/// Squared-error target: `Some(y)` entries contribute `(output - y)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTarget(pub [Option<f64>; OUTPUTS]);

impl LossTarget {
    pub fn on(action: usize, value: f64) -> LossTarget {
        let mut t = [None; OUTPUTS];
        t[action] = Some(value);
        LossTarget(t)
    }

    pub fn both(values: [f64; OUTPUTS]) -> LossTarget {
        LossTarget(values.map(Some))
    }

    /// Loss and its derivative with respect to the outputs.
    pub fn loss(&self, output: &[f64; OUTPUTS]) -> (f64, [f64; OUTPUTS]) {
        let mut loss = 0.0;
        let mut grad = [0.0; OUTPUTS];
        for k in 0..OUTPUTS {
            if let Some(y) = self.0[k] {
                let e = output[k] - y;
                loss += e * e;
                grad[k] = 2.0 * e;
            }
        }
        (loss, grad)
    }
}

/// Per-parameter gradients, same layout as `Network::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &[Tensor]) -> Gradients {
        Gradients(params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Activations recorded by a forward pass, consumed by `backward`.
pub struct Tape {
    branch_inputs: Vec<Vec<Tensor>>,
    branch_out_shapes: Vec<Vec<usize>>,
    head_inputs: Vec<Tensor>,
    pub output: [f64; OUTPUTS],
}

impl Tape {
    /// Smallest |pre-activation| fed to any ReLU; finite-difference checks
    /// need it to exceed their step.
    pub fn relu_margin(&self, spec: &NetworkSpec) -> f64 {
        let mut m = f64::INFINITY;
        let mut scan = |layers: &[LayerSpec], acts: &[Tensor]| {
            for (layer, x) in layers.iter().zip(acts) {
                if *layer == LayerSpec::Relu {
                    m = x.data().iter().fold(m, |m, v| m.min(v.abs()));
                }
            }
        };
        for (b, acts) in spec.branches.iter().zip(&self.branch_inputs) {
            scan(&b.layers, acts);
        }
        scan(&spec.head, &self.head_inputs);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Network {
    /// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Network, NnError> {
        let layout = spec.param_layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape, fan_in) in layout {
            let mut t = Tensor::zeros(shape);
            if name.ends_with(".weight") {
                let bound = (6.0 / fan_in as f64).sqrt();
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-bound..bound));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Network { spec, names, params })
    }

    /// Builds a network from explicit parameters, checking their shapes against `spec`.
    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Network, NnError> {
        let layout = spec.param_layout()?;
        if layout.len() != params.len()
            || layout.iter().zip(&params).any(|((_, s, _), p)| s.as_slice() != p.shape())
        {
            return Err(NnError::ShapeMismatch("parameters do not match the network spec".into()));
        }
        Ok(Network {
            spec,
            names: layout.into_iter().map(|(n, _, _)| n).collect(),
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Indices of the output layer's weight and bias.
    pub fn output_layer(&self) -> (usize, usize) {
        let n = self.params.len();
        (n - 2, n - 1)
    }

    /// Zeroes the output row for `action` (weights and bias).
    pub fn zero_output_row(&mut self, action: usize) {
        let (w, b) = self.output_layer();
        let width = self.params[w].shape()[1];
        self.params[w].data_mut()[action * width..(action + 1) * width].fill(0.0);
        self.params[b].data_mut()[action] = 0.0;
    }

    pub fn forward(&self, input: &NetInput) -> Result<[f64; OUTPUTS], NnError> {
        Ok(self.forward_tape(input)?.output)
    }

    pub fn forward_tape(&self, input: &NetInput) -> Result<Tape, NnError> {
        if input.branches.len() != self.spec.branches.len() || input.extra.len() != self.spec.extra_inputs {
            return Err(NnError::ShapeMismatch(format!(
                "network expects {} branch inputs and {} extras, got {} and {}",
                self.spec.branches.len(),
                self.spec.extra_inputs,
                input.branches.len(),
                input.extra.len()
            )));
        }
        let mut p = 0;
        let mut branch_inputs = Vec::with_capacity(self.spec.branches.len());
        let mut branch_out_shapes = Vec::with_capacity(self.spec.branches.len());
        let mut concat = Vec::new();
        for (branch, x) in self.spec.branches.iter().zip(&input.branches) {
            if x.shape() != branch.input_shape.as_slice() {
                return Err(NnError::ShapeMismatch(format!(
                    "branch {} expects {:?}, got {:?}",
                    branch.name,
                    branch.input_shape,
                    x.shape()
                )));
            }
            let (acts, out) = self.run_layers(&branch.layers, x.clone(), &mut p)?;
            branch_out_shapes.push(out.shape().to_vec());
            concat.extend_from_slice(out.data());
            branch_inputs.push(acts);
        }
        concat.extend_from_slice(&input.extra);
        let (head_inputs, out) = self.run_layers(&self.spec.head, Tensor::vector(concat), &mut p)?;
        let output = [out.data()[0], out.data()[1]];
        Ok(Tape {
            branch_inputs,
            branch_out_shapes,
            head_inputs,
            output,
        })
    }

    fn run_layers(&self, layers: &[LayerSpec], mut x: Tensor, p: &mut usize) -> Result<(Vec<Tensor>, Tensor), NnError> {
        let mut acts = Vec::with_capacity(layers.len());
        for layer in layers {
            let y = match layer {
                LayerSpec::Conv3d { .. } => conv3d_forward(&x, &self.params[*p], &self.params[*p + 1])?,
                LayerSpec::Conv1d { .. } => conv1d_forward(&x, &self.params[*p], &self.params[*p + 1])?,
                LayerSpec::Dense { .. } => dense_forward(&x, &self.params[*p], &self.params[*p + 1])?,
                LayerSpec::Relu => relu_forward(&x),
                LayerSpec::Flatten => {
                    let n = x.len();
                    x.clone().reshaped(vec![n])
                }
            };
            if layer.has_params() {
                *p += 2;
            }
            acts.push(x);
            x = y;
        }
        Ok((acts, x))
    }

    /// Reverse-mode pass accumulating parameter gradients for `d loss / d output`.
    pub fn backward(&self, tape: &Tape, grad_output: &[f64; OUTPUTS], grads: &mut Gradients) {
        let mut p = self.params.len();
        let g = self.back_layers(
            &self.spec.head,
            &tape.head_inputs,
            Tensor::vector(grad_output.to_vec()),
            &mut p,
            grads,
            true,
        );
        let g = g.expect("head input gradient requested");
        // split the concatenated gradient back into branch pieces; extras are dropped
        let mut offsets = Vec::with_capacity(tape.branch_out_shapes.len());
        let mut off = 0;
        for s in &tape.branch_out_shapes {
            let n: usize = s.iter().product();
            offsets.push((off, n));
            off += n;
        }
        for (bi, branch) in self.spec.branches.iter().enumerate().rev() {
            let (o, n) = offsets[bi];
            let gb = Tensor::from_vec(tape.branch_out_shapes[bi].clone(), g.data()[o..o + n].to_vec());
            self.back_layers(&branch.layers, &tape.branch_inputs[bi], gb, &mut p, grads, false);
        }
    }

    fn back_layers(
        &self,
        layers: &[LayerSpec],
        inputs: &[Tensor],
        mut g: Tensor,
        p: &mut usize,
        grads: &mut Gradients,
        need_first_input: bool,
    ) -> Option<Tensor> {
        for (i, layer) in layers.iter().enumerate().rev() {
            let x = &inputs[i];
            let need = i > 0 || need_first_input;
            let gx = if layer.has_params() {
                *p -= 2;
                let (gw, gb) = grads.0[*p..*p + 2].split_at_mut(1);
                let (w, gw, gb) = (&self.params[*p], &mut gw[0], &mut gb[0]);
                match layer {
                    LayerSpec::Conv3d { .. } => conv3d_backward(x, w, &g, gw, gb, need),
                    LayerSpec::Conv1d { .. } => conv1d_backward(x, w, &g, gw, gb, need),
                    _ => dense_backward(x, w, &g, gw, gb, need),
                }
            } else {
                match layer {
                    LayerSpec::Relu => Some(relu_backward(x, &g)),
                    _ => Some(g.reshaped(x.shape().to_vec())),
                }
            };
            match gx {
                Some(next) => g = next,
                None => return None,
            }
        }
        Some(g)
    }

    /// Loss and parameter gradients for one input.
    pub fn gradients(&self, input: &NetInput, target: &LossTarget) -> Result<(f64, Gradients), NnError> {
        let mut grads = Gradients::zeros_like(&self.params);
        let loss = self.accumulate_gradients(input, target, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `weight * d loss / d params` into `grads`, returning the unweighted loss.
    pub fn accumulate_gradients(
        &self,
        input: &NetInput,
        target: &LossTarget,
        weight: f64,
        grads: &mut Gradients,
    ) -> Result<f64, NnError> {
        let tape = self.forward_tape(input)?;
        let (loss, g) = target.loss(&tape.output);
        if !loss.is_finite() {
            return Err(NnError::NonFiniteLoss);
        }
        self.backward(&tape, &[g[0] * weight, g[1] * weight], grads);
        Ok(loss)
    }
}
