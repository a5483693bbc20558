//! Central finite differences against the hand-written backward passes.

use gids::nn::{
    bce_with_logit, Activation, DenseLayer, Deconv2dLayer, GeneratorSpec, KernelInit, Layer, ModelWeights, OutputGrad, ArchTag,
};
use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Fourth-order central difference of `f` around offset zero, or `None` when the
/// two underlying second-order estimates disagree because a ReLU kink lies inside the stencil.
fn central(mut f: impl FnMut(f64) -> f64) -> Option<f64> {
    let near = (f(H) - f(-H)) / (2.0 * H);
    let far = (f(2.0 * H) - f(-2.0 * H)) / (4.0 * H);
    if (near - far).abs() > 1e-5 * near.abs().max(far.abs()).max(1e-3) {
        return None;
    }
    Some((4.0 * near - far) / 3.0)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

/// Scalar loss `sum(output * r)` and its analytic gradients.
fn linear_probe(model: &ModelWeights<f64>, x: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (model.predict(x.view()).unwrap() * r).sum()
}

/// Returns the worst relative error over every parameter and input entry.
/// Entries straddling a kink are skipped, but they must stay rare.
fn check(model: &mut ModelWeights<f64>, x: &Array2<f64>, r: &Array2<f64>) -> f64 {
    let (mut skipped, mut total) = (0usize, 0usize);
    let mut score = |worst: &mut f64, analytic: f64, numeric: Option<f64>| {
        total += 1;
        match numeric {
            Some(n) => *worst = worst.max(rel_err(analytic, n)),
            None => skipped += 1,
        }
    };
    let cache = model.forward(x.view()).unwrap();
    let back = model.backward(&cache, OutputGrad::Output(r.clone()), true, true).unwrap();
    let grads = back.params.unwrap();
    let mut worst: f64 = 0.0;
    let blocks = model.param_blocks().len();
    for b in 0..blocks {
        let len = model.param_blocks()[b].len();
        for i in 0..len {
            let orig = model.param_blocks()[b][i];
            let numeric = central(|d| {
                model.param_blocks_mut()[b][i] = orig + d;
                linear_probe(model, x, r)
            });
            model.param_blocks_mut()[b][i] = orig;
            score(&mut worst, grads.blocks[b][i], numeric);
        }
    }
    let dx = back.input.unwrap();
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let (row, col) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[row, col]];
        let numeric = central(|d| {
            xp[[row, col]] = orig + d;
            linear_probe(model, &xp, r)
        });
        xp[[row, col]] = orig;
        score(&mut worst, dx[[row, col]], numeric);
    }
    assert!(skipped * 50 <= total, "{skipped} of {total} entries sit on a kink");
    worst
}

fn dense_model(rng: &mut ChaCha8Rng, head: Activation) -> (ModelWeights<f64>, usize) {
    let inputs = rng.gen_range(2..7);
    let hidden = rng.gen_range(2..6);
    let arch = match head {
        Activation::Sigmoid => ArchTag::DiscriminatorDnn,
        _ => ArchTag::GeneratorDeconv,
    };
    let outputs = if arch == ArchTag::DiscriminatorDnn { 1 } else { rng.gen_range(1..4) };
    let layers = vec![
        Layer::Dense(DenseLayer::xavier(inputs, hidden, Activation::Relu, rng)),
        Layer::Dense(DenseLayer::xavier(hidden, outputs, head, rng)),
    ];
    let mut model = ModelWeights::new(arch, layers).unwrap();
    // Non-zero biases so that no unit sits exactly on a kink.
    for block in model.param_blocks_mut() {
        for v in block.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    (model, inputs)
}

#[test]
fn dense_relu_sigmoid() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut model, inputs) = dense_model(&mut rng, Activation::Sigmoid);
        let batch = rng.gen_range(1..4);
        let x = random_matrix(&mut rng, batch, inputs, 1.0);
        let r = random_matrix(&mut rng, batch, 1, 1.0);
        let err = check(&mut model, &x, &r);
        assert!(err < 1e-7, "seed {seed}: {err}");
    }
}

#[test]
fn dense_relu_tanh() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (mut model, inputs) = dense_model(&mut rng, Activation::Tanh);
        let batch = rng.gen_range(1..4);
        let x = random_matrix(&mut rng, batch, inputs, 1.0);
        let r = random_matrix(&mut rng, batch, model.output_len(), 1.0);
        let err = check(&mut model, &x, &r);
        assert!(err < 1e-7, "seed {seed}: {err}");
    }
}

fn random_deconv(rng: &mut ChaCha8Rng, in_ch: usize, input_hw: [usize; 2], act: Activation) -> Deconv2dLayer<f64> {
    loop {
        let kh = rng.gen_range(1..5);
        let kw = rng.gen_range(1..5);
        let stride = [rng.gen_range(1..4), rng.gen_range(1..4)];
        let padding = [rng.gen_range(0..kh.min(3)), rng.gen_range(0..kw.min(3))];
        let out_ch = rng.gen_range(1..4);
        let kernels = Array4::from_shape_simple_fn((in_ch, out_ch, kh, kw), || rng.gen_range(-0.5..0.5));
        let bias = Array1::from_shape_simple_fn(out_ch, || rng.gen_range(-0.3..0.3));
        if let Ok(layer) = Deconv2dLayer::new(kernels, bias, input_hw, stride, padding, act) {
            return layer;
        }
    }
}

#[test]
fn deconv_random_geometry() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let noise = rng.gen_range(2..5);
        let in_ch = rng.gen_range(1..4);
        let hw = [rng.gen_range(1..4), rng.gen_range(1..4)];
        let mut proj = DenseLayer::xavier(noise, in_ch * hw[0] * hw[1], Activation::Relu, &mut rng);
        proj.bias.mapv_inplace(|_| rng.gen_range(0.1..0.5));
        let hidden = random_deconv(&mut rng, in_ch, hw, Activation::Relu);
        let last = random_deconv(&mut rng, hidden.out_channels(), hidden.output_hw(), Activation::Tanh);
        let mut model =
            ModelWeights::new(ArchTag::GeneratorDeconv, vec![Layer::Dense(proj), Layer::Deconv(hidden), Layer::Deconv(last)])
                .unwrap();
        let batch = rng.gen_range(1..3);
        let x = random_matrix(&mut rng, batch, noise, 1.0);
        let r = random_matrix(&mut rng, batch, model.output_len(), 1.0);
        let err = check(&mut model, &x, &r);
        assert!(err < 1e-7, "seed {seed}: {err}");
    }
}

#[test]
fn generator_layout() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let spec = GeneratorSpec {
            noise_dim: rng.gen_range(2..5),
            seed_channels: 2,
            deconv_channels: vec![2, 1],
            output_hw: [rng.gen_range(4..9), rng.gen_range(4..9)],
            kernel_init: KernelInit::He,
        };
        let mut model = ModelWeights::<f64>::generator(&spec, &mut rng).unwrap();
        for block in model.param_blocks_mut() {
            for v in block.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let x = random_matrix(&mut rng, 2, spec.noise_dim, 1.0);
        let r = random_matrix(&mut rng, 2, model.output_len(), 1.0);
        let err = check(&mut model, &x, &r);
        assert!(err < 1e-7, "seed {seed}: {err}");
    }
}

/// The training loss feeds `p - t` straight into the logit.
#[test]
fn fused_logit_loss() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (mut model, inputs) = dense_model(&mut rng, Activation::Sigmoid);
        let batch = rng.gen_range(1..5);
        let x = random_matrix(&mut rng, batch, inputs, 1.0);
        let t: Vec<f64> = (0..batch).map(|_| if rng.gen_bool(0.5) { 0.9 } else { 0.0 }).collect();
        let loss = |m: &ModelWeights<f64>| -> f64 {
            let c = m.forward(x.view()).unwrap();
            c.output_pre().iter().zip(&t).map(|(&z, &t)| bce_with_logit(z, t).loss).sum()
        };
        let cache = model.forward(x.view()).unwrap();
        let g = Array2::from_shape_fn((batch, 1), |(i, _)| bce_with_logit(cache.output_pre()[[i, 0]], t[i]).grad);
        let grads = model.backward(&cache, OutputGrad::PreActivation(g), true, false).unwrap().params.unwrap();
        for b in 0..model.param_blocks().len() {
            for i in 0..model.param_blocks()[b].len() {
                let orig = model.param_blocks()[b][i];
                let numeric = central(|d| {
                    model.param_blocks_mut()[b][i] = orig + d;
                    loss(&model)
                });
                model.param_blocks_mut()[b][i] = orig;
                let err = rel_err(grads.blocks[b][i], numeric.expect("the loss is smooth"));
                assert!(err < 1e-7, "seed {seed} block {b} index {i}: {err}");
            }
        }
    }
}

/// Single-precision gradients agree with the double-precision ones.
#[test]
fn f32_gradients_track_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let spec = GeneratorSpec { noise_dim: 4, seed_channels: 3, deconv_channels: vec![2, 1], output_hw: [8, 6], kernel_init: KernelInit::Normal(0.3) };
    let g64 = ModelWeights::<f64>::generator(&spec, &mut rng).unwrap();
    let g32: ModelWeights<f32> = g64.cast();
    let x = random_matrix(&mut rng, 3, 4, 1.0);
    let r = random_matrix(&mut rng, 3, g64.output_len(), 1.0);
    let a = g64.backward(&g64.forward(x.view()).unwrap(), OutputGrad::Output(r.clone()), true, false).unwrap();
    let x32 = x.mapv(|v| v as f32);
    let b = g32.backward(&g32.forward(x32.view()).unwrap(), OutputGrad::Output(r.mapv(|v| v as f32)), true, false).unwrap();
    let (a, b) = (a.params.unwrap(), b.params.unwrap());
    let scale = a.max_abs();
    for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
        for (&u, &v) in ba.iter().zip(bb) {
            assert!((u - f64::from(v)).abs() <= 1e-3 * scale, "{u} vs {v}");
        }
    }
}
