use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};
use super::tensor::{matmul, Tensor2};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => tape.leaky_relu(x, 0.0),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Scalar evaluation, used by straight-line reference code.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }
}

/// Layer widths plus activations of a fully connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            hidden,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Contract(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Contract("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Scaled-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ParameterSet {
        let mut blocks = Vec::with_capacity(2 * self.layers());
        for (i, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            blocks.push(NamedTensor::new(format!("w{i}"), Tensor2::from_vec(fan_in, fan_out, data)));
            blocks.push(NamedTensor::new(format!("b{i}"), Tensor2::zeros(1, fan_out)));
        }
        ParameterSet { blocks }
    }

    pub fn zeros(&self) -> ParameterSet {
        let mut blocks = Vec::with_capacity(2 * self.layers());
        for (i, w) in self.widths.windows(2).enumerate() {
            blocks.push(NamedTensor::new(format!("w{i}"), Tensor2::zeros(w[0], w[1])));
            blocks.push(NamedTensor::new(format!("b{i}"), Tensor2::zeros(1, w[1])));
        }
        ParameterSet { blocks }
    }

    /// Checks that `params` holds a weight/bias pair per layer with matching shapes.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        if params.blocks.len() != 2 * self.layers() {
            return Err(Error::Contract(format!(
                "expected {} parameter blocks, got {}",
                2 * self.layers(),
                params.blocks.len()
            )));
        }
        for (i, w) in self.widths.windows(2).enumerate() {
            let (wt, bt) = (&params.blocks[2 * i].tensor, &params.blocks[2 * i + 1].tensor);
            if wt.shape() != (w[0], w[1]) || bt.shape() != (1, w[1]) {
                return Err(Error::Shape {
                    layer: i,
                    expected: format!("{}x{} weight, 1x{} bias", w[0], w[1], w[1]),
                    got: format!("{}x{} weight, {}x{} bias", wt.rows, wt.cols, bt.rows, bt.cols),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor2,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor2) -> Self {
        NamedTensor {
            name: name.into(),
            tensor,
        }
    }
}

/// Ordered named parameter blocks (for an MLP: `w0, b0, w1, b1, ...`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub blocks: Vec<NamedTensor>,
}

impl ParameterSet {
    pub fn num_values(&self) -> usize {
        self.blocks.iter().map(|b| b.tensor.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for b in &self.blocks {
            out.extend_from_slice(&b.tensor.data);
        }
        out
    }

    /// Rebuilds a set with the same block layout as `self` from flat values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParameterSet> {
        if flat.len() != self.num_values() {
            return Err(Error::Contract(format!(
                "flat parameter length {} differs from {}",
                flat.len(),
                self.num_values()
            )));
        }
        let mut offset = 0;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let n = b.tensor.len();
                let t = Tensor2::from_vec(b.tensor.rows, b.tensor.cols, flat[offset..offset + n].to_vec());
                offset += n;
                NamedTensor::new(b.name.clone(), t)
            })
            .collect();
        Ok(ParameterSet { blocks })
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            blocks: self
                .blocks
                .iter()
                .map(|b| NamedTensor::new(b.name.clone(), Tensor2::zeros(b.tensor.rows, b.tensor.cols)))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.tensor.is_finite())
    }

    /// Order-sensitive FNV-1a digest of the raw bits, for change detection.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.blocks.iter().flat_map(|b| b.tensor.data.iter()) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    /// Pushes every block onto `tape` as a leaf, in order.
    pub fn to_leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.blocks.iter().map(|b| tape.leaf(b.tensor.clone())).collect()
    }

    /// Same names as `self` with the given tensors.
    pub fn with_values(&self, values: Vec<Tensor2>) -> ParameterSet {
        ParameterSet {
            blocks: self
                .blocks
                .iter()
                .zip(values)
                .map(|(b, t)| NamedTensor::new(b.name.clone(), t))
                .collect(),
        }
    }

    /// Collects the values of `nodes` into a set laid out like `self`.
    pub fn from_nodes(&self, tape: &Tape, nodes: &[NodeId]) -> ParameterSet {
        ParameterSet {
            blocks: self
                .blocks
                .iter()
                .zip(nodes)
                .map(|(b, &n)| NamedTensor::new(b.name.clone(), tape.value(n).clone()))
                .collect(),
        }
    }
}

/// Node handles produced by [`forward_on`].
#[derive(Clone, Debug)]
pub struct MlpNodes {
    /// Post-activation output of every hidden layer.
    pub hidden: Vec<NodeId>,
    pub output: NodeId,
}

/// Records a batched forward pass: `x` is `batch × widths[0]`.
pub fn forward_on(tape: &mut Tape, spec: &MlpSpec, params: &[NodeId], x: NodeId) -> Result<MlpNodes> {
    if params.len() != 2 * spec.layers() {
        return Err(Error::Contract(format!(
            "expected {} parameter nodes, got {}",
            2 * spec.layers(),
            params.len()
        )));
    }
    let mut h = x;
    let mut hidden = Vec::with_capacity(spec.layers().saturating_sub(1));
    for layer in 0..spec.layers() {
        let (w, b) = (params[2 * layer], params[2 * layer + 1]);
        let in_cols = tape.value(h).cols;
        let (wr, wc) = tape.value(w).shape();
        if in_cols != wr || wr != spec.widths[layer] || wc != spec.widths[layer + 1] {
            return Err(Error::Shape {
                layer,
                expected: format!("{}x{}", spec.widths[layer], spec.widths[layer + 1]),
                got: format!("input width {in_cols}, weight {wr}x{wc}"),
            });
        }
        if tape.value(b).shape() != (1, wc) {
            return Err(Error::Shape {
                layer,
                expected: format!("1x{wc} bias"),
                got: format!("{:?}", tape.value(b).shape()),
            });
        }
        let z = tape.matmul(h, w);
        let z = tape.add_row(z, b);
        let last = layer + 1 == spec.layers();
        h = if last {
            spec.output.apply(tape, z)
        } else {
            let a = spec.hidden.apply(tape, z);
            hidden.push(a);
            a
        };
    }
    Ok(MlpNodes { hidden, output: h })
}

/// Batched forward pass without a recording; `blocks` alternate weight and bias.
pub fn mlp_infer(spec: &MlpSpec, blocks: &[NamedTensor], x: &Tensor2) -> Result<Tensor2> {
    if blocks.len() != 2 * spec.layers() {
        return Err(Error::Contract(format!(
            "expected {} parameter blocks, got {}",
            2 * spec.layers(),
            blocks.len()
        )));
    }
    let mut h = x.clone();
    for layer in 0..spec.layers() {
        let (w, b) = (&blocks[2 * layer].tensor, &blocks[2 * layer + 1].tensor);
        if h.cols != w.rows || w.shape() != (spec.widths[layer], spec.widths[layer + 1]) || b.shape() != (1, w.cols) {
            return Err(Error::Shape {
                layer,
                expected: format!("{}x{}", spec.widths[layer], spec.widths[layer + 1]),
                got: format!("input width {}, weight {}x{}", h.cols, w.rows, w.cols),
            });
        }
        let act = if layer + 1 == spec.layers() { spec.output } else { spec.hidden };
        let mut z = matmul(&h, w, false, false);
        for row in z.data.chunks_mut(w.cols) {
            for (v, &bias) in row.iter_mut().zip(&b.data) {
                *v = act.eval(*v + bias);
            }
        }
        h = z;
    }
    Ok(h)
}

/// Result of a recorded single-sample or batched forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub tape: Tape,
    pub input: NodeId,
    pub params: Vec<NodeId>,
    pub nodes: MlpNodes,
    template: ParameterSet,
}

impl Forward {
    pub fn output(&self) -> &Tensor2 {
        self.tape.value(self.nodes.output)
    }

    /// Gradient of the scalar `root` (recorded on this tape) w.r.t. the parameters.
    pub fn grad_params_of(&mut self, root: NodeId, seed: f64) -> Result<ParameterSet> {
        let grads = self.tape.grad(root, &self.params, seed)?;
        Ok(self.template.from_nodes(&self.tape, &grads))
    }
}

/// Forward pass of one input vector; returns the output and the recording.
pub fn mlp_forward(spec: &MlpSpec, params: &ParameterSet, x: &[f64]) -> Result<(Vec<f64>, Forward)> {
    spec.validate()?;
    if x.len() != spec.input_width() {
        return Err(Error::Shape {
            layer: 0,
            expected: format!("input of length {}", spec.input_width()),
            got: format!("length {}", x.len()),
        });
    }
    spec.check_params(params)?;
    forward_batch(spec, params, &Tensor2::row_vector(x.to_vec())).map(|f| (f.output().data.clone(), f))
}

/// Batched variant of [`mlp_forward`]; `x` is `batch × input_width`.
pub fn forward_batch(spec: &MlpSpec, params: &ParameterSet, x: &Tensor2) -> Result<Forward> {
    spec.check_params(params)?;
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let pnodes = params.to_leaves(&mut tape);
    let nodes = forward_on(&mut tape, spec, &pnodes, input)?;
    Ok(Forward {
        tape,
        input,
        params: pnodes,
        nodes,
        template: params.clone(),
    })
}

/// Gradient of the recorded scalar output w.r.t. the parameters.
pub fn grad_params(forward: &mut Forward, seed: f64) -> Result<ParameterSet> {
    let root = forward.nodes.output;
    forward.grad_params_of(root, seed)
}

/// `∂D(x)/∂x` for a scalar-output network, recorded so that it can be
/// differentiated again with respect to the parameters.
pub fn grad_input_differentiable(spec: &MlpSpec, params: &ParameterSet, x: &[f64]) -> Result<(Vec<f64>, InputGradient)> {
    if spec.output_width() != 1 {
        return Err(Error::Contract(format!(
            "critic output must be scalar, network has {} outputs",
            spec.output_width()
        )));
    }
    let (_, mut fwd) = mlp_forward(spec, params, x)?;
    let out = fwd.nodes.output;
    let g = fwd.tape.grad(out, &[fwd.input], 1.0)?[0];
    let values = fwd.tape.value(g).data.clone();
    Ok((values, InputGradient { forward: fwd, gradient: g }))
}

/// Recording that contains both the forward pass and the input gradient.
#[derive(Clone, Debug)]
pub struct InputGradient {
    pub forward: Forward,
    pub gradient: NodeId,
}

impl InputGradient {
    /// `∂‖∇ₓD‖² / ∂θ` by differentiating the recorded gradient.
    pub fn grad_sq_norm_params(&mut self) -> Result<ParameterSet> {
        let tape = &mut self.forward.tape;
        let sq = tape.square(self.gradient);
        let s = tape.sum_all(sq);
        self.forward.grad_params_of(s, 1.0)
    }
}

/// Score column of a batched critic output and its input gradient, recorded
/// on `tape` for double differentiation. Rows of `x` are independent samples.
pub fn input_gradient_on(
    tape: &mut Tape,
    spec: &MlpSpec,
    params: &[NodeId],
    x: NodeId,
    score_col: usize,
) -> Result<NodeId> {
    let nodes = forward_on(tape, spec, params, x)?;
    let score = tape.slice_cols(nodes.output, score_col, 1);
    let total = tape.sum_all(score);
    Ok(tape.grad(total, &[x], 1.0)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inference_matches_recorded_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for act in [Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid] {
            let spec = MlpSpec::new(vec![5, 7, 3], act, Activation::Tanh).unwrap();
            let p = spec.init(&mut rng);
            let x = Tensor2::from_vec(4, 5, (0..20).map(|i| (i as f64 * 0.37).sin()).collect());
            let recorded = forward_batch(&spec, &p, &x).unwrap();
            assert_eq!(&mlp_infer(&spec, &p.blocks, &x).unwrap(), recorded.output());
        }
    }

    #[test]
    fn zero_network_outputs_activation_of_zero() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Relu, Activation::Sigmoid).unwrap();
        let (y, _) = mlp_forward(&spec, &spec.zeros(), &[0.4, -2.0, 9.0]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Relu, Activation::Identity).unwrap();
        let mut p = spec.zeros();
        p.blocks[0].tensor = Tensor2::identity(2);
        let (y, _) = mlp_forward(&spec, &p, &[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![0.3, -0.7]);
    }

    #[test]
    fn wrong_input_length_names_layer() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu, Activation::Identity).unwrap();
        let err = mlp_forward(&spec, &spec.zeros(), &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 0, .. }));
    }

    #[test]
    fn mismatched_block_reports_layer_index() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Relu, Activation::Identity).unwrap();
        let mut p = spec.zeros();
        p.blocks[2].tensor = Tensor2::zeros(5, 2);
        assert!(matches!(
            mlp_forward(&spec, &p, &[0.0; 3]).unwrap_err(),
            Error::Shape { layer: 1, .. }
        ));
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu, Activation::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = spec.init(&mut rng);
        let x = [0.2, -1.5, 0.7];
        let (_, mut fwd) = mlp_forward(&spec, &p, &x).unwrap();
        let out = fwd.nodes.output;
        let s = fwd.tape.sum_all(out);
        let g = fwd.grad_params_of(s, 1.0).unwrap();
        let gw = &g.blocks[0].tensor;
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(gw.get(i, j), x[i]);
            }
        }
        assert_eq!(g.blocks[1].tensor.data, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradient_block() {
        // Zero first-layer weights with a rectifier: second-layer weight
        // gradients are all zero because the hidden activations are zero.
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Relu, Activation::Identity).unwrap();
        let p = spec.zeros();
        let (_, mut fwd) = mlp_forward(&spec, &p, &[1.0, 2.0]).unwrap();
        let g = grad_params(&mut fwd, 1.0).unwrap();
        assert!(g.blocks[2].tensor.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_params_requires_scalar_root() {
        let spec = MlpSpec::new(vec![2, 3, 2], Activation::Tanh, Activation::Identity).unwrap();
        let p = spec.zeros();
        let (_, mut fwd) = mlp_forward(&spec, &p, &[1.0, 2.0]).unwrap();
        assert!(matches!(grad_params(&mut fwd, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn linear_critic_input_gradient_is_weight() {
        let spec = MlpSpec::new(vec![3, 1], Activation::Relu, Activation::Identity).unwrap();
        let mut p = spec.zeros();
        p.blocks[0].tensor = Tensor2::from_vec(3, 1, vec![0.25, -1.0, 2.0]);
        p.blocks[1].tensor = Tensor2::scalar(0.7);
        for x in [[0.0, 0.0, 0.0], [1.0, -3.0, 0.5]] {
            let (g, _) = grad_input_differentiable(&spec, &p, &x).unwrap();
            assert_eq!(g, vec![0.25, -1.0, 2.0]);
        }
        let spec2 = MlpSpec::new(vec![3, 2], Activation::Relu, Activation::Identity).unwrap();
        assert!(grad_input_differentiable(&spec2, &spec2.zeros(), &[0.0; 3]).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let spec = MlpSpec::new(vec![4, 3, 2], Activation::Tanh, Activation::Identity).unwrap();
        let p = spec.init(&mut ChaCha8Rng::seed_from_u64(3));
        let flat = p.flatten();
        assert_eq!(p.unflatten(&flat).unwrap(), p);
        assert!(p.unflatten(&flat[1..]).is_err());
    }
}
