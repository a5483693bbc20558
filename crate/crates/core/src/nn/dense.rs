use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{shape_err, Activation, NnError, Scalar};

/// Fully connected layer, `y = act(x W^T + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out x in`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
    /// Row/column view of the input features; only informative for image inputs.
    pub input_shape: [usize; 2],
}

pub(crate) struct DenseGrads<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self, NnError> {
        let (out, inp) = weights.dim();
        if out == 0 || inp == 0 {
            return Err(NnError::InvalidLayer("dense layer with zero width".into()));
        }
        if bias.len() != out {
            return shape_err(format!("bias of length {} for {out} outputs", bias.len()));
        }
        Ok(DenseLayer { weights: weights.as_standard_layout().into_owned(), bias, activation, input_shape: [1, inp] })
    }

    /// Uniform `(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn xavier<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || T::lit(rng.gen_range(-a..a)));
        DenseLayer::new(weights, Array1::zeros(outputs), activation).expect("positive widths")
    }

    pub fn with_input_shape(mut self, rows: usize, cols: usize) -> Result<Self, NnError> {
        if rows * cols != self.inputs() {
            return shape_err(format!("{rows}x{cols} input for a layer of width {}", self.inputs()));
        }
        self.input_shape = [rows, cols];
        Ok(self)
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    /// Returns `(pre_activation, output)` for a `[batch, in]` input.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>), NnError> {
        if x.ncols() != self.inputs() {
            return shape_err(format!("dense input width {} != {}", x.ncols(), self.inputs()));
        }
        let mut pre = x.dot(&self.weights.t());
        pre += &self.bias;
        let out = self.activation.forward(&pre);
        Ok((pre, out))
    }

    pub fn output(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        self.forward(x).map(|(_, y)| y)
    }

    /// `grad_pre` is the gradient with respect to this layer's pre-activation.
    pub(crate) fn backward_pre(
        &self,
        x: ArrayView2<T>,
        grad_pre: ArrayView2<T>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<DenseGrads<T>>, Option<Array2<T>>) {
        let params = want_params.then(|| DenseGrads { weights: grad_pre.t().dot(&x), bias: grad_pre.sum_axis(Axis(0)) });
        let input = want_input.then(|| grad_pre.dot(&self.weights));
        (params, input)
    }
}
