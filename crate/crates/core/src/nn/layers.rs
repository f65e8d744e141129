use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::matrix::{axpy, dot};
use super::{shape_err, Matrix, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Identity,
            _ => return None,
        })
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("glorot shape")
}

/// Fully connected layer, `activation(W x + b)` with `W` stored as (out × in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, NnError> {
        if bias.len() != weights.rows() {
            return Err(shape_err("DenseLayer::new bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weights: glorot(out_dim, in_dim, in_dim, out_dim, rng),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.in_dim() {
            return Err(shape_err("DenseLayer::forward input", self.in_dim(), input.len()));
        }
        Ok((0..self.out_dim())
            .map(|o| self.activation.apply(dot(self.weights.row(o), input) + self.bias[o]))
            .collect())
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(
                "DenseLayer::forward_batch input",
                format!("{} columns", self.in_dim()),
                format!("{} columns", x.cols()),
            ));
        }
        let mut out = x.matmul_transposed(&self.weights)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients from the gradient at the pre-activation
    /// and returns the gradient with respect to `x` when requested.
    fn backward_batch(
        &self,
        x: &Matrix,
        grad_pre: &Matrix,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Matrix> {
        let in_dim = self.in_dim();
        let mut grad_x = want_input_grad.then(|| Matrix::zeros(x.rows(), in_dim));
        for b in 0..x.rows() {
            let xb = x.row(b);
            for (o, &g) in grad_pre.row(b).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad_b[o] += g;
                axpy(g, xb, &mut grad_w[o * in_dim..(o + 1) * in_dim]);
                if let Some(gx) = grad_x.as_mut() {
                    axpy(g, self.weights.row(o), gx.row_mut(b));
                }
            }
        }
        grad_x
    }
}

/// Lookup table turning an integer label into a dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLayer {
    table: Matrix,
}

impl EmbeddingLayer {
    pub const DEFAULT_DIM: usize = 10;

    pub fn new(table: Matrix) -> Self {
        Self { table }
    }

    pub fn glorot<R: Rng + ?Sized>(num_labels: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: glorot(num_labels, dim, num_labels, dim, rng),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn lookup(&self, label: usize) -> Result<&[f64], NnError> {
        if label >= self.num_labels() {
            return Err(NnError::LabelOutOfRange {
                label,
                num_labels: self.num_labels(),
            });
        }
        Ok(self.table.row(label))
    }
}

/// Parameter gradients in the same order as [`ConditionalNet::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Trace {
    labels: Vec<usize>,
    /// Input to each dense layer; entry 0 is features ⊕ embedding.
    inputs: Vec<Matrix>,
    output: Matrix,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// A stack of dense layers whose first layer sees the feature vector
/// concatenated with a learned embedding of the condition label.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNet {
    feature_dim: usize,
    embedding: EmbeddingLayer,
    layers: Vec<DenseLayer>,
}

impl ConditionalNet {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        num_labels: usize,
        embed_dim: usize,
        hidden: &[(usize, Activation)],
        output: (usize, Activation),
        rng: &mut R,
    ) -> Self {
        let embedding = EmbeddingLayer::glorot(num_labels, embed_dim, rng);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = feature_dim + embed_dim;
        for &(units, act) in hidden.iter().chain(std::iter::once(&output)) {
            layers.push(DenseLayer::glorot(width, units, act, rng));
            width = units;
        }
        Self {
            feature_dim,
            embedding,
            layers,
        }
    }

    pub fn from_parts(feature_dim: usize, embedding: EmbeddingLayer, layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(shape_err("ConditionalNet::from_parts", "≥1 layer", 0));
        }
        let mut width = feature_dim + embedding.dim();
        for layer in &layers {
            if layer.in_dim() != width {
                return Err(shape_err(
                    "ConditionalNet::from_parts layer input",
                    width,
                    layer.in_dim(),
                ));
            }
            width = layer.out_dim();
        }
        Ok(Self {
            feature_dim,
            embedding,
            layers,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn num_labels(&self) -> usize {
        self.embedding.num_labels()
    }

    pub fn embedding(&self) -> &EmbeddingLayer {
        &self.embedding
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().map_or(Activation::Identity, DenseLayer::activation)
    }

    fn joint_input(&self, features: &Matrix, labels: &[usize]) -> Result<Matrix, NnError> {
        if features.cols() != self.feature_dim {
            return Err(shape_err(
                "ConditionalNet input features",
                format!("{} columns", self.feature_dim),
                format!("{} columns", features.cols()),
            ));
        }
        if labels.len() != features.rows() {
            return Err(shape_err(
                "ConditionalNet labels",
                format!("{} labels", features.rows()),
                format!("{} labels", labels.len()),
            ));
        }
        let width = self.feature_dim + self.embedding.dim();
        let mut data = Vec::with_capacity(features.rows() * width);
        for (r, &label) in labels.iter().enumerate() {
            data.extend_from_slice(features.row(r));
            data.extend_from_slice(self.embedding.lookup(label)?);
        }
        Matrix::from_vec(features.rows(), width, data)
    }

    pub fn forward(&self, features: &Matrix, labels: &[usize]) -> Result<Matrix, NnError> {
        let mut h = self.joint_input(features, labels)?;
        for layer in &self.layers {
            h = layer.forward_batch(&h)?;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, features: &Matrix, labels: &[usize]) -> Result<Trace, NnError> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = self.joint_input(features, labels)?;
        for layer in &self.layers {
            let next = layer.forward_batch(&h)?;
            inputs.push(h);
            h = next;
        }
        Ok(Trace {
            labels: labels.to_vec(),
            inputs,
            output: h,
        })
    }

    /// Backpropagates a gradient taken with respect to the network output.
    /// Returns parameter gradients and the gradient with respect to the features.
    pub fn backward(&self, trace: &Trace, grad_output: &Matrix) -> Result<(Gradients, Matrix), NnError> {
        self.check_trace(trace, grad_output)?;
        let act = self.output_activation();
        let mut grad_pre = grad_output.clone();
        for (g, &y) in grad_pre.data_mut().iter_mut().zip(trace.output.data()) {
            *g *= act.derivative_from_output(y);
        }
        self.backward_pre(trace, grad_pre)
    }

    /// Like [`backward`](Self::backward) but with the gradient already taken
    /// with respect to the output layer's pre-activation (the logits).
    pub fn backward_from_logits(&self, trace: &Trace, grad_logits: &Matrix) -> Result<(Gradients, Matrix), NnError> {
        self.check_trace(trace, grad_logits)?;
        self.backward_pre(trace, grad_logits.clone())
    }

    fn check_trace(&self, trace: &Trace, grad: &Matrix) -> Result<(), NnError> {
        if trace.inputs.len() != self.layers.len() || trace.inputs[0].cols() != self.feature_dim + self.embedding.dim()
        {
            return Err(shape_err(
                "ConditionalNet::backward trace",
                "trace recorded by this network",
                "foreign trace",
            ));
        }
        if grad.shape() != trace.output.shape() {
            return Err(shape_err(
                "ConditionalNet::backward gradient",
                format!("{:?}", trace.output.shape()),
                format!("{:?}", grad.shape()),
            ));
        }
        Ok(())
    }

    fn backward_pre(&self, trace: &Trace, mut grad_pre: Matrix) -> Result<(Gradients, Matrix), NnError> {
        let n = self.layers.len();
        let mut tensors = vec![Vec::new(); 1 + 2 * n];
        tensors[0] = vec![0.0; self.embedding.num_labels() * self.embedding.dim()];
        let mut joint_grad = None;
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            let mut gw = vec![0.0; layer.out_dim() * layer.in_dim()];
            let mut gb = vec![0.0; layer.out_dim()];
            let gx = layer
                .backward_batch(&trace.inputs[k], &grad_pre, &mut gw, &mut gb, true)
                .expect("input gradient requested");
            tensors[1 + 2 * k] = gw;
            tensors[2 + 2 * k] = gb;
            if k == 0 {
                joint_grad = Some(gx);
            } else {
                grad_pre = gx;
                let prev = &self.layers[k - 1];
                let y = &trace.inputs[k];
                for (g, &v) in grad_pre.data_mut().iter_mut().zip(y.data()) {
                    *g *= prev.activation().derivative_from_output(v);
                }
            }
        }
        let joint_grad = joint_grad.expect("at least one layer");
        let dim = self.embedding.dim();
        let emb = &mut tensors[0];
        for (r, &label) in trace.labels.iter().enumerate() {
            let g = &joint_grad.row(r)[self.feature_dim..];
            axpy(1.0, g, &mut emb[label * dim..(label + 1) * dim]);
        }
        let feature_grad = joint_grad.columns(0, self.feature_dim);
        Ok((Gradients { tensors }, feature_grad))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.parameters().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Parameter tensors: embedding table, then weights and bias of each layer.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embedding.table.data()];
        for layer in &self.layers {
            out.push(layer.weights.data());
            out.push(&layer.bias);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.table.data_mut()];
        for layer in &mut self.layers {
            out.push(layer.weights.data_mut());
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Records one forward pass so a BCE backward pass can follow it.
pub struct Session<'a> {
    net: &'a ConditionalNet,
    trace: Option<Trace>,
}

impl<'a> Session<'a> {
    pub fn new(net: &'a ConditionalNet) -> Self {
        Self { net, trace: None }
    }

    pub fn forward(&mut self, features: &Matrix, labels: &[usize]) -> Result<&Matrix, NnError> {
        let trace = self.net.forward_trace(features, labels)?;
        Ok(&self.trace.insert(trace).output)
    }

    /// Gradient of the mean BCE loss over the recorded batch. The network must
    /// have a single output column.
    pub fn backward_bce(&self, targets: &[f64]) -> Result<(Gradients, Matrix), NnError> {
        let trace = self.trace.as_ref().ok_or(NnError::NoForwardPass)?;
        let out = &trace.output;
        if out.cols() != 1 || targets.len() != out.rows() {
            return Err(shape_err(
                "Session::backward_bce targets",
                format!("{} targets, 1 output column", out.rows()),
                format!("{} targets, {} output columns", targets.len(), out.cols()),
            ));
        }
        if targets.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let scale = 1.0 / targets.len() as f64;
        let mut grad = Matrix::zeros(out.rows(), 1);
        if self.net.output_activation() == Activation::Sigmoid {
            for (i, &t) in targets.iter().enumerate() {
                grad.set(i, 0, (out.get(i, 0) - t) * scale);
            }
            self.net.backward_from_logits(trace, &grad)
        } else {
            for (i, &t) in targets.iter().enumerate() {
                let p = out.get(i, 0).clamp(super::BCE_EPSILON, 1.0 - super::BCE_EPSILON);
                grad.set(i, 0, (p - t) / (p * (1.0 - p)) * scale);
            }
            self.net.backward(trace, &grad)
        }
    }
}
