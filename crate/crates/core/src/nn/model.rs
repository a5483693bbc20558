use ndarray::{Array1, Array2, Array4, ArrayView2};
use rand::Rng;

use super::deconv::AxisGeometry;
use super::{shape_err, Activation, Deconv2dLayer, DenseLayer, NnError, Scalar};

/// Which network family a weight set belongs to. Fixes the activations:
/// ReLU on every hidden layer, sigmoid (discriminator) or tanh (generator) last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchTag {
    DiscriminatorDnn,
    GeneratorDeconv,
}

impl ArchTag {
    pub fn head(self) -> Activation {
        match self {
            ArchTag::DiscriminatorDnn => Activation::Sigmoid,
            ArchTag::GeneratorDeconv => Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense(DenseLayer<T>),
    Deconv(Deconv2dLayer<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        match self {
            Layer::Dense(l) => l.inputs(),
            Layer::Deconv(l) => l.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Layer::Dense(l) => l.outputs(),
            Layer::Deconv(l) => l.outputs(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Layer::Dense(l) => l.activation,
            Layer::Deconv(l) => l.activation,
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>), NnError> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Deconv(l) => l.forward(x),
        }
    }

    /// Weight block then bias.
    pub fn param_blocks(&self) -> [&[T]; 2] {
        match self {
            Layer::Dense(l) => [l.weights.as_slice().unwrap(), l.bias.as_slice().unwrap()],
            Layer::Deconv(l) => [l.kernels.as_slice().unwrap(), l.bias.as_slice().unwrap()],
        }
    }

    pub fn param_blocks_mut(&mut self) -> [&mut [T]; 2] {
        match self {
            Layer::Dense(l) => [l.weights.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()],
            Layer::Deconv(l) => [l.kernels.as_slice_mut().unwrap(), l.bias.as_slice_mut().unwrap()],
        }
    }

    fn backward_pre(
        &self,
        x: ArrayView2<T>,
        grad_pre: ArrayView2<T>,
        want_params: bool,
        want_input: bool,
    ) -> (Option<[Vec<T>; 2]>, Option<Array2<T>>) {
        match self {
            Layer::Dense(l) => {
                let (p, i) = l.backward_pre(x, grad_pre, want_params, want_input);
                (p.map(|g| [g.weights.into_raw_vec_and_offset().0, g.bias.to_vec()]), i)
            }
            Layer::Deconv(l) => {
                let (p, i) = l.backward_pre(x, grad_pre, want_params, want_input);
                (p.map(|g| [g.kernels.as_standard_layout().iter().copied().collect(), g.bias.to_vec()]), i)
            }
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        let c = |v: &T| U::lit(v.to_f64().unwrap());
        match self {
            Layer::Dense(l) => Layer::Dense(DenseLayer {
                weights: l.weights.map(c),
                bias: l.bias.map(c),
                activation: l.activation,
                input_shape: l.input_shape,
            }),
            Layer::Deconv(l) => Layer::Deconv(
                Deconv2dLayer::new(l.kernels.map(c), l.bias.map(c), l.input_hw, l.stride, l.padding, l.activation)
                    .expect("geometry already validated"),
            ),
        }
    }
}

/// Gradients aligned with [`ModelWeights::param_blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &ModelWeights<T>) -> Self {
        Gradients { blocks: model.param_blocks().iter().map(|b| vec![T::zero(); b.len()]).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn max_abs(&self) -> T {
        self.blocks.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Per-layer inputs, pre-activations and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `acts[0]` is the network input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Array2<T>>,
    pres: Vec<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("at least the input")
    }

    /// Pre-activation of the final layer (the logit for a sigmoid head).
    pub fn output_pre(&self) -> &Array2<T> {
        self.pres.last().expect("at least one layer")
    }
}

/// Gradient entering the network from the loss.
pub enum OutputGrad<T> {
    /// With respect to the network output.
    Output(Array2<T>),
    /// With respect to the final pre-activation, skipping the head's derivative.
    PreActivation(Array2<T>),
}

pub struct Backward<T> {
    pub params: Option<Gradients<T>>,
    pub input: Option<Array2<T>>,
}

/// How transposed-convolution kernels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KernelInit {
    /// `N(0, sqrt(2 / fan_in))`, where a transposed convolution's fan-in is
    /// `in_ch * kH * kW / (strideH * strideW)`.
    #[default]
    He,
    /// `N(0, std)`.
    Normal(f64),
}

impl KernelInit {
    fn std(self, in_ch: usize, rows: AxisGeometry, cols: AxisGeometry) -> f64 {
        match self {
            KernelInit::He => {
                let fan_in = (in_ch * rows.kernel * cols.kernel) as f64 / (rows.stride * cols.stride) as f64;
                (2.0 / fan_in).sqrt()
            }
            KernelInit::Normal(std) => std,
        }
    }
}

/// Shape of the default deconvolutional generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    /// Channels of the seed feature map the dense layer produces.
    pub seed_channels: usize,
    /// Output channels of each transposed convolution; the last must be 1.
    pub deconv_channels: Vec<usize>,
    pub output_hw: [usize; 2],
    pub kernel_init: KernelInit,
}

impl GeneratorSpec {
    /// 100-d noise, 128-channel seed map, four stride-2 layers down to one channel.
    pub fn for_image(rows: usize, cols: usize) -> Self {
        GeneratorSpec {
            noise_dim: 100,
            seed_channels: 128,
            deconv_channels: vec![64, 32, 16, 1],
            output_hw: [rows, cols],
            kernel_init: KernelInit::He,
        }
    }

    /// Seed length and per-layer geometry along one axis.
    ///
    /// All but the last layer double the length (kernel 4, stride 2, padding 1).
    /// The last layer doubles too when the target is `seed * 2^n`; otherwise
    /// it uses stride 1 and whatever kernel lands exactly on the target.
    pub fn axis_plan(target: usize, layers: usize) -> Result<(usize, Vec<AxisGeometry>), NnError> {
        let doubling = AxisGeometry { kernel: 4, stride: 2, padding: 1 };
        if layers == 0 || target == 0 {
            return Err(NnError::InvalidLayer("generator needs layers and a positive target".into()));
        }
        let full = 1usize << layers;
        let seed = target.div_ceil(full);
        let mut plan = vec![doubling; layers - 1];
        let before_last = seed << (layers - 1);
        if seed * full == target {
            plan.push(doubling);
        } else if target >= before_last {
            plan.push(AxisGeometry { kernel: target - before_last + 1, stride: 1, padding: 0 });
        } else {
            return Err(NnError::InvalidLayer(format!("cannot reach length {target} with {layers} layers")));
        }
        Ok((seed, plan))
    }
}

/// An ordered stack of layers with an architecture tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T = f32> {
    arch: ArchTag,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Checks that widths chain and that activations follow the tag's convention.
    pub fn new(arch: ArchTag, layers: Vec<Layer<T>>) -> Result<Self, NnError> {
        let Some(last) = layers.last() else {
            return Err(NnError::InvalidLayer("model without layers".into()));
        };
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return shape_err(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                ));
            }
        }
        let n = layers.len();
        for (i, layer) in layers.iter().enumerate() {
            let want = if i + 1 == n { arch.head() } else { Activation::Relu };
            if layer.activation() != want {
                return Err(NnError::InvalidLayer(format!("layer {i} uses {:?}, expected {want:?}", layer.activation())));
            }
        }
        match arch {
            ArchTag::DiscriminatorDnn => {
                if layers.iter().any(|l| matches!(l, Layer::Deconv(_))) || last.outputs() != 1 {
                    return Err(NnError::InvalidLayer("discriminator must be dense layers ending in one unit".into()));
                }
            }
            ArchTag::GeneratorDeconv => {
                if !matches!(&layers[0], Layer::Dense(_)) {
                    return Err(NnError::InvalidLayer("generator must start with a dense projection".into()));
                }
            }
        }
        Ok(ModelWeights { arch, layers })
    }

    /// Dense stack `rows*cols -> hidden... -> 1`, Xavier-initialised except
    /// for a zero output layer, so an untrained discriminator scores 0.5.
    pub fn discriminator<R: Rng>(rows: usize, cols: usize, hidden: &[usize], rng: &mut R) -> Result<Self, NnError> {
        let mut widths = vec![rows * cols];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, w) in widths.windows(2).enumerate() {
            let act = if i + 1 == n { Activation::Sigmoid } else { Activation::Relu };
            layers.push(Layer::Dense(DenseLayer::xavier(w[0], w[1], act, rng)));
        }
        if let Some(Layer::Dense(head)) = layers.last_mut() {
            head.weights.fill(T::zero());
        }
        if let Some(Layer::Dense(first)) = layers.first_mut() {
            *first = first.clone().with_input_shape(rows, cols)?;
        }
        Self::new(ArchTag::DiscriminatorDnn, layers)
    }

    /// Dense projection to the seed map, then transposed convolutions up to `spec.output_hw`.
    pub fn generator<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Result<Self, NnError> {
        if spec.deconv_channels.last() != Some(&1) {
            return Err(NnError::InvalidLayer("generator must end in a single channel".into()));
        }
        let depth = spec.deconv_channels.len();
        let (seed_h, rows) = GeneratorSpec::axis_plan(spec.output_hw[0], depth)?;
        let (seed_w, cols) = GeneratorSpec::axis_plan(spec.output_hw[1], depth)?;
        let mut layers = vec![Layer::Dense(DenseLayer::xavier(
            spec.noise_dim,
            spec.seed_channels * seed_h * seed_w,
            Activation::Relu,
            rng,
        ))];
        let mut hw = [seed_h, seed_w];
        let mut in_ch = spec.seed_channels;
        for (i, &out_ch) in spec.deconv_channels.iter().enumerate() {
            let act = if i + 1 == depth { Activation::Tanh } else { Activation::Relu };
            let std = spec.kernel_init.std(in_ch, rows[i], cols[i]);
            let layer = Deconv2dLayer::normal_init(in_ch, out_ch, hw, rows[i], cols[i], act, std, rng)?;
            hw = layer.output_hw();
            in_ch = out_ch;
            layers.push(Layer::Deconv(layer));
        }
        Self::new(ArchTag::GeneratorDeconv, layers)
    }

    pub fn arch(&self) -> ArchTag {
        self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    /// Image shape for a discriminator, `[1, noise_dim]` for a generator.
    pub fn input_shape(&self) -> [usize; 2] {
        match &self.layers[0] {
            Layer::Dense(l) => l.input_shape,
            Layer::Deconv(l) => l.input_hw,
        }
    }

    /// `[1, 1]` for a discriminator, the image shape for a generator.
    pub fn output_shape(&self) -> [usize; 2] {
        match self.layers.last().unwrap() {
            Layer::Dense(l) => [1, l.outputs()],
            Layer::Deconv(l) => {
                let [h, w] = l.output_hw();
                [h * l.out_channels(), w]
            }
        }
    }

    pub fn param_blocks(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.param_blocks()).collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.param_blocks_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights { arch: self.arch, layers: self.layers.iter().map(Layer::cast).collect() }
    }

    /// Output only; nothing is cached.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>, NnError> {
        self.check_input(x)?;
        let mut cur = self.layers[0].forward(x)?.1;
        for layer in &self.layers[1..] {
            cur = layer.forward(cur.view())?.1;
        }
        Ok(cur)
    }

    fn check_input(&self, x: ArrayView2<T>) -> Result<(), NnError> {
        if x.ncols() != self.input_len() {
            return shape_err(format!("model expects {} input features, got {}", self.input_len(), x.ncols()));
        }
        Ok(())
    }

    /// Forward pass over a `[batch, features]` input keeping what backward needs.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<ForwardCache<T>, NnError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        for layer in &self.layers {
            let (pre, out) = layer.forward(acts.last().unwrap().view())?;
            pres.push(pre);
            acts.push(out);
        }
        Ok(ForwardCache { acts, pres })
    }

    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad: OutputGrad<T>,
        want_params: bool,
        want_input: bool,
    ) -> Result<Backward<T>, NnError> {
        if cache.pres.len() != self.layers.len() {
            return shape_err("cache does not come from this model");
        }
        let out_shape = cache.output().dim();
        let (mut upstream, mut is_pre) = match grad {
            OutputGrad::Output(g) => (g, false),
            OutputGrad::PreActivation(g) => (g, true),
        };
        if upstream.dim() != out_shape {
            return shape_err(format!("loss gradient {:?} for output {:?}", upstream.dim(), out_shape));
        }
        let mut blocks: Vec<Vec<T>> = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let grad_pre = if is_pre {
                is_pre = false;
                upstream
            } else {
                layer.activation().backward(cache.pres[i].view(), cache.acts[i + 1].view(), upstream.view())
            };
            let need_input = i > 0 || want_input;
            let (p, inp) = layer.backward_pre(cache.acts[i].view(), grad_pre.view(), want_params, need_input);
            if let Some([w, b]) = p {
                blocks.push(b);
                blocks.push(w);
            }
            match inp {
                Some(g) => upstream = g,
                None => {
                    upstream = Array2::zeros((0, 0));
                }
            }
        }
        blocks.reverse();
        Ok(Backward {
            params: want_params.then_some(Gradients { blocks }),
            input: want_input.then_some(upstream),
        })
    }

    /// Replaces parameters from flat blocks in [`ModelWeights::param_blocks`] order.
    pub fn set_params(&mut self, blocks: &[Vec<T>]) -> Result<(), NnError> {
        let mut targets = self.param_blocks_mut();
        if targets.len() != blocks.len() || targets.iter().zip(blocks).any(|(t, b)| t.len() != b.len()) {
            return shape_err("parameter blocks do not match the model");
        }
        for (t, b) in targets.iter_mut().zip(blocks) {
            t.copy_from_slice(b);
        }
        Ok(())
    }
}

impl ModelWeights<f32> {
    /// Builds a dense layer from raw parts; used by the weight-file reader.
    pub(crate) fn dense_from_parts(
        out: usize,
        rows: usize,
        cols: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Layer<f32>, NnError> {
        let w = Array2::from_shape_vec((out, rows * cols), weights).map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
        Ok(Layer::Dense(DenseLayer::new(w, Array1::from(bias), activation)?.with_input_shape(rows, cols)?))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn deconv_from_parts(
        dims: [usize; 4],
        stride: [usize; 2],
        padding: [usize; 2],
        input_hw: [usize; 2],
        kernels: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Layer<f32>, NnError> {
        let k = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), kernels)
            .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
        Ok(Layer::Deconv(Deconv2dLayer::new(k, Array1::from(bias), input_hw, stride, padding, activation)?))
    }

    /// Activation a layer at `index` of `count` must carry under `arch`.
    pub(crate) fn conventional_activation(arch: ArchTag, index: usize, count: usize) -> Activation {
        if index + 1 == count {
            arch.head()
        } else {
            Activation::Relu
        }
    }
}
