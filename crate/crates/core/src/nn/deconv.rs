use ndarray::{s, Array1, Array2, Array4, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{shape_err, Activation, NnError, Scalar};

/// Kernel, stride and padding along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl AxisGeometry {
    /// `(input - 1) * stride - 2 * padding + kernel`, or `None` when not positive.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        if input == 0 || self.kernel == 0 || self.stride == 0 {
            return None;
        }
        ((input - 1) * self.stride + self.kernel).checked_sub(2 * self.padding).filter(|&o| o > 0)
    }
}

/// Transposed 2-D convolution over `C x H x W` features.
///
/// Every input pixel scatters `kernels[ci, co, :, :]`, scaled by its value,
/// into the output at offset `(i * stride - padding, j * stride - padding)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deconv2dLayer<T> {
    /// `in_ch x out_ch x kH x kW`.
    pub kernels: Array4<T>,
    pub bias: Array1<T>,
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub input_hw: [usize; 2],
    pub activation: Activation,
    output_hw: [usize; 2],
}

pub(crate) struct DeconvGrads<T> {
    pub kernels: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Deconv2dLayer<T> {
    pub fn new(
        kernels: Array4<T>,
        bias: Array1<T>,
        input_hw: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        activation: Activation,
    ) -> Result<Self, NnError> {
        let (cin, cout, kh, kw) = kernels.dim();
        if cin == 0 || cout == 0 {
            return Err(NnError::InvalidLayer("deconv layer with zero channels".into()));
        }
        if bias.len() != cout {
            return shape_err(format!("bias of length {} for {cout} output channels", bias.len()));
        }
        let rows = AxisGeometry { kernel: kh, stride: stride[0], padding: padding[0] };
        let cols = AxisGeometry { kernel: kw, stride: stride[1], padding: padding[1] };
        let (Some(oh), Some(ow)) = (rows.output_len(input_hw[0]), cols.output_len(input_hw[1])) else {
            return Err(NnError::InvalidLayer(format!(
                "no valid output for input {input_hw:?}, kernel {kh}x{kw}, stride {stride:?}, padding {padding:?}"
            )));
        };
        Ok(Deconv2dLayer {
            kernels: kernels.as_standard_layout().into_owned(),
            bias,
            stride,
            padding,
            input_hw,
            activation,
            output_hw: [oh, ow],
        })
    }

    /// Kernels drawn from `N(0, std)`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn normal_init<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        input_hw: [usize; 2],
        rows: AxisGeometry,
        cols: AxisGeometry,
        activation: Activation,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let normal = Normal::new(0.0, std).map_err(|e| NnError::InvalidLayer(e.to_string()))?;
        let kernels =
            Array4::from_shape_simple_fn((in_ch, out_ch, rows.kernel, cols.kernel), || T::lit(normal.sample(rng)));
        Self::new(
            kernels,
            Array1::zeros(out_ch),
            input_hw,
            [rows.stride, cols.stride],
            [rows.padding, cols.padding],
            activation,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim().0
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dim().1
    }

    pub fn kernel_hw(&self) -> [usize; 2] {
        let (_, _, kh, kw) = self.kernels.dim();
        [kh, kw]
    }

    pub fn output_hw(&self) -> [usize; 2] {
        self.output_hw
    }

    pub fn inputs(&self) -> usize {
        self.in_channels() * self.input_hw[0] * self.input_hw[1]
    }

    pub fn outputs(&self) -> usize {
        self.out_channels() * self.output_hw[0] * self.output_hw[1]
    }

    fn kernel_matrix(&self) -> ArrayView2<'_, T> {
        let (cin, cout, kh, kw) = self.kernels.dim();
        self.kernels.view().into_shape_with_order((cin, cout * kh * kw)).expect("standard layout")
    }

    /// `[B, C*H*W]` to `[C, B*H*W]`.
    fn channels_first(&self, x: ArrayView2<T>) -> Array2<T> {
        let batch = x.nrows();
        let hw = self.input_hw[0] * self.input_hw[1];
        let mut xp = Array2::zeros((self.in_channels(), batch * hw));
        for b in 0..batch {
            for c in 0..self.in_channels() {
                xp.slice_mut(s![c, b * hw..(b + 1) * hw]).assign(&x.slice(s![b, c * hw..(c + 1) * hw]));
            }
        }
        xp
    }

    /// Calls `f(col_index, out_index)` for every in-bounds pairing of a column
    /// entry `(co, ki, kj) x (b, i, j)` with an output pixel.
    fn for_each_tap(&self, batch: usize, mut f: impl FnMut(usize, usize)) {
        let [h, w] = self.input_hw;
        let [oh, ow] = self.output_hw;
        let [kh, kw] = self.kernel_hw();
        let [sh, sw] = self.stride;
        let [ph, pw] = self.padding;
        let ncols = batch * h * w;
        let out_per_sample = self.outputs();
        for co in 0..self.out_channels() {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((co * kh + ki) * kw + kj) * ncols;
                    for b in 0..batch {
                        let col_b = row + b * h * w;
                        let out_b = b * out_per_sample + co * oh * ow;
                        for i in 0..h {
                            let Some(oy) = (i * sh + ki).checked_sub(ph).filter(|&y| y < oh) else { continue };
                            for j in 0..w {
                                let Some(ox) = (j * sw + kj).checked_sub(pw).filter(|&x| x < ow) else {
                                    continue;
                                };
                                f(col_b + i * w + j, out_b + oy * ow + ox);
                            }
                        }
                    }
                }
            }
        }
    }

    /// The bias-free linear map.
    pub fn apply_linear(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        if x.ncols() != self.inputs() {
            return shape_err(format!("deconv input width {} != {}", x.ncols(), self.inputs()));
        }
        let batch = x.nrows();
        let cols = self.kernel_matrix().t().dot(&self.channels_first(x));
        let cols = cols.as_slice().expect("fresh matmul output is contiguous");
        let mut out = Array2::zeros((batch, self.outputs()));
        let out_s = out.as_slice_mut().expect("contiguous");
        self.for_each_tap(batch, |c, o| out_s[o] += cols[c]);
        Ok(out)
    }

    /// Adjoint of [`Deconv2dLayer::apply_linear`]: a strided convolution of `y` with the same kernels.
    pub fn adjoint(&self, y: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        if y.ncols() != self.outputs() {
            return shape_err(format!("deconv output width {} != {}", y.ncols(), self.outputs()));
        }
        let dcols = self.gather_columns(y);
        Ok(self.columns_to_input(self.kernel_matrix().dot(&dcols), y.nrows()))
    }

    fn gather_columns(&self, y: ArrayView2<T>) -> Array2<T> {
        let batch = y.nrows();
        let y = y.as_standard_layout();
        let ys = y.as_slice().expect("standard layout");
        let [kh, kw] = self.kernel_hw();
        let mut dcols = Array2::zeros((self.out_channels() * kh * kw, batch * self.input_hw[0] * self.input_hw[1]));
        let ds = dcols.as_slice_mut().expect("contiguous");
        self.for_each_tap(batch, |c, o| ds[c] = ys[o]);
        dcols
    }

    /// `[C, B*H*W]` back to `[B, C*H*W]`.
    fn columns_to_input(&self, xp: Array2<T>, batch: usize) -> Array2<T> {
        let hw = self.input_hw[0] * self.input_hw[1];
        let mut x = Array2::zeros((batch, self.inputs()));
        for b in 0..batch {
            for c in 0..self.in_channels() {
                x.slice_mut(s![b, c * hw..(c + 1) * hw]).assign(&xp.slice(s![c, b * hw..(b + 1) * hw]));
            }
        }
        x
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>), NnError> {
        let mut pre = self.apply_linear(x)?;
        let [oh, ow] = self.output_hw;
        for mut row in pre.rows_mut() {
            for (co, chunk) in row.as_slice_mut().expect("contiguous").chunks_exact_mut(oh * ow).enumerate() {
                let b = self.bias[co];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        let out = self.activation.forward(&pre);
        Ok((pre, out))
    }

    pub(crate) fn backward_pre(
        &self,
        x: ArrayView2<T>,
        grad_pre: ArrayView2<T>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<DeconvGrads<T>>, Option<Array2<T>>) {
        let batch = x.nrows();
        let dcols = self.gather_columns(grad_pre);
        let params = want_params.then(|| {
            // The product can come back column-major when a dimension is 1.
            let dw = self.channels_first(x).dot(&dcols.t()).as_standard_layout().into_owned();
            let kernels = dw.into_shape_with_order(self.kernels.dim()).expect("same element count");
            let [oh, ow] = self.output_hw;
            let mut bias = Array1::zeros(self.out_channels());
            for row in grad_pre.rows() {
                for (idx, v) in row.iter().enumerate() {
                    bias[idx / (oh * ow)] += *v;
                }
            }
            DeconvGrads { kernels, bias }
        });
        let input = want_input.then(|| self.columns_to_input(self.kernel_matrix().dot(&dcols), batch));
        (params, input)
    }
}
