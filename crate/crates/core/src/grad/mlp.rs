//! Dense feed-forward layers with a hand-written backward pass.
//!
//! Weights are stored row-major as `(out_dim, in_dim)`; a batch of inputs is a
//! `(batch, in_dim)` matrix, so a layer computes `Y = act(X W^T + 1 b^T)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DenseTensor;
use crate::error::{config_err, usage_err, Result};
use crate::scalar::{gemm, Op, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::one() - y * y,
            Activation::Identity => S::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub weight: DenseTensor<S>,
    pub bias: Vec<S>,
    pub activation: Activation,
}

impl<S: Scalar> Layer<S> {
    pub fn new(weight: DenseTensor<S>, bias: Vec<S>, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || weight.rows() != bias.len() {
            return config_err(format!(
                "layer weight {:?} does not match bias of length {}",
                weight.shape(),
                bias.len()
            ));
        }
        Ok(Self { weight, bias, activation })
    }

    /// Fan-in scaled uniform init, `U(-1/sqrt(in), 1/sqrt(in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = || S::from_f64_lossy(rng.random_range(-bound..=bound));
        let w: Vec<S> = (0..in_dim * out_dim).map(|_| draw()).collect();
        let b: Vec<S> = (0..out_dim).map(|_| draw()).collect();
        Self {
            weight: DenseTensor::matrix(out_dim, in_dim, w).expect("sized above"),
            bias: b,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, input: &DenseTensor<S>) -> DenseTensor<S> {
        let batch = input.rows();
        let (in_dim, out_dim) = (self.in_dim(), self.out_dim());
        let mut out = vec![S::zero(); batch * out_dim];
        for row in out.chunks_exact_mut(out_dim) {
            row.copy_from_slice(&self.bias);
        }
        gemm(Op::N, Op::T, batch, in_dim, out_dim, S::one(), input.data(), self.weight.data(), S::one(), &mut out);
        if self.activation != Activation::Identity {
            let act = self.activation;
            out.iter_mut().for_each(|x| *x = act.apply(*x));
        }
        DenseTensor::matrix(batch, out_dim, out).expect("sized above")
    }
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S> {
    layers: Vec<Layer<S>>,
}

/// Activations recorded by [`MlpParams::forward_traced`], consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    input: DenseTensor<S>,
    outputs: Vec<DenseTensor<S>>,
    signature: Vec<(usize, usize)>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn output(&self) -> &DenseTensor<S> {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn batch(&self) -> usize {
        self.input.rows()
    }
}

/// Per-layer gradients, mirroring [`MlpParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<S> {
    pub layers: Vec<(DenseTensor<S>, Vec<S>)>,
}

impl<S: Scalar> MlpGrads<S> {
    pub fn zeros_like(params: &MlpParams<S>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (DenseTensor::zeros(l.weight.shape().to_vec()), vec![S::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(|(w, b)| [w.data(), b.as_slice()]).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }
}

impl<S: Scalar> MlpParams<S> {
    pub fn from_layers(layers: Vec<Layer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return config_err("an MLP needs at least one layer");
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return config_err(format!(
                    "layer {k} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Builds `sizes[0] -> sizes[1] -> ... -> sizes[last]` with `hidden` on every
    /// layer but the last, which uses `output`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return config_err(format!("invalid layer sizes {sizes:?}"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Layer::init(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn signature(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out_dim(), l.in_dim())).collect()
    }

    fn check_input(&self, input: &DenseTensor<S>) -> Result<()> {
        if input.cols() != self.in_dim() {
            return config_err(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.in_dim()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &DenseTensor<S>) -> Result<DenseTensor<S>> {
        self.check_input(input)?;
        let mut x = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn forward_traced(&self, input: &DenseTensor<S>) -> Result<ForwardTrace<S>> {
        self.check_input(input)?;
        let mut outputs: Vec<DenseTensor<S>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer.forward(outputs.last().unwrap_or(input));
            outputs.push(next);
        }
        Ok(ForwardTrace { input: input.clone(), outputs, signature: self.signature() })
    }

    /// Gradients of a scalar loss w.r.t. every parameter, given `dL/d(output)`.
    ///
    /// Also returns `dL/d(input)` when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &ForwardTrace<S>,
        loss_grad: &DenseTensor<S>,
        want_input_grad: bool,
    ) -> Result<(MlpGrads<S>, Option<DenseTensor<S>>)> {
        if trace.signature != self.signature() {
            return usage_err("backward called with a trace recorded on a different network");
        }
        let batch = trace.batch();
        if loss_grad.rows() != batch || loss_grad.cols() != self.out_dim() {
            return usage_err(format!(
                "loss gradient shape {:?} does not match recorded output ({batch}, {})",
                loss_grad.shape(),
                self.out_dim()
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.data().to_vec();
        let mut input_grad = None;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
            let out = &trace.outputs[k];
            let act = layer.activation;
            if act != Activation::Identity {
                for (g, &y) in upstream.iter_mut().zip(out.data()) {
                    *g *= act.derivative_from_output(y);
                }
            }
            let x = if k == 0 { &trace.input } else { &trace.outputs[k - 1] };
            let mut dw = vec![S::zero(); out_dim * in_dim];
            gemm(Op::T, Op::N, out_dim, batch, in_dim, S::one(), &upstream, x.data(), S::zero(), &mut dw);
            let mut db = vec![S::zero(); out_dim];
            for row in upstream.chunks_exact(out_dim) {
                for (b, &g) in db.iter_mut().zip(row) {
                    *b += g;
                }
            }
            if k > 0 || want_input_grad {
                let mut dx = vec![S::zero(); batch * in_dim];
                gemm(Op::N, Op::N, batch, out_dim, in_dim, S::one(), &upstream, layer.weight.data(), S::zero(), &mut dx);
                if k == 0 {
                    input_grad = Some(DenseTensor::matrix(batch, in_dim, dx).expect("sized above"));
                    upstream = Vec::new();
                } else {
                    upstream = dx;
                }
            }
            grads.push((DenseTensor::matrix(out_dim, in_dim, dw).expect("sized above"), db));
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, input_grad))
    }

    pub fn param_slices(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(|l| [l.weight.data(), l.bias.as_slice()]).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> MlpParams<T> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.map(|x| T::from_f64_lossy(x.to_f64_lossless())),
                    bias: l.bias.iter().map(|x| T::from_f64_lossy(x.to_f64_lossless())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>, act: Activation) -> MlpParams<f64> {
        let layer = Layer::new(DenseTensor::matrix(rows, cols, w).unwrap(), b, act).unwrap();
        MlpParams::from_layers(vec![layer]).unwrap()
    }

    #[test]
    fn identity_weights_with_rectifier() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0], Activation::Relu);
        let y = net.forward(&DenseTensor::row(vec![3.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn affine_map_by_hand() {
        let net = single(vec![1.0, 1.0], 1, 2, vec![0.5], Activation::Identity);
        let y = net.forward(&DenseTensor::row(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn zero_input_passes_bias_through() {
        let net = single(vec![0.3, -2.0, 4.0], 1, 3, vec![7.0], Activation::Identity);
        let y = net.forward(&DenseTensor::row(vec![0.0; 3])).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn input_width_mismatch_is_config_error() {
        let net = single(vec![1.0, 1.0], 1, 2, vec![0.0], Activation::Identity);
        let err = net.forward(&DenseTensor::row(vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn layer_chain_must_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Layer::<f64>::init(3, 4, Activation::Relu, &mut rng);
        let b = Layer::<f64>::init(5, 2, Activation::Identity, &mut rng);
        assert!(MlpParams::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn squared_error_gradient_matches_closed_form() {
        // L = (y - t)^2 with y = w . x + b
        let net = single(vec![0.5, -1.5], 1, 2, vec![0.25], Activation::Identity);
        let x = DenseTensor::row(vec![2.0, 3.0]);
        let t = 1.0;
        let trace = net.forward_traced(&x).unwrap();
        let y = trace.output().data()[0];
        let dl = DenseTensor::row(vec![2.0 * (y - t)]);
        let (g, _) = net.backward(&trace, &dl, false).unwrap();
        let (dw, db) = &g.layers[0];
        assert_eq!(dw.data(), &[2.0 * (y - t) * 2.0, 2.0 * (y - t) * 3.0]);
        assert_eq!(db, &vec![2.0 * (y - t)]);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpParams::<f64>::init(&[4, 8, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = DenseTensor::matrix(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let trace = net.forward_traced(&x).unwrap();
        let (g, dx) = net.backward(&trace, &DenseTensor::zeros(vec![2, 3]), true).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(dx.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_with_foreign_trace_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = MlpParams::<f64>::init(&[4, 8, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let b = MlpParams::<f64>::init(&[4, 6, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let trace = a.forward_traced(&DenseTensor::row(vec![0.1; 4])).unwrap();
        let err = b.backward(&trace, &DenseTensor::zeros(vec![1, 3]), false).unwrap_err();
        assert!(matches!(err, crate::Error::Usage(_)));
    }
}
