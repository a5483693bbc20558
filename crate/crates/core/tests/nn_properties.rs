use gids::nn::{
    adam_step, load_weights, save_weights, Activation, AdamConfig, AdamState, ArchTag, Deconv2dLayer, DenseLayer,
    GeneratorSpec, Gradients, KernelInit, Layer, ModelWeights, WeightsError,
};
use ndarray::{Array1, Array2, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct Geometry {
    in_ch: usize,
    out_ch: usize,
    hw: [usize; 2],
    kernel: [usize; 2],
    stride: [usize; 2],
    padding: [usize; 2],
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (1usize..4, 1usize..4, 1usize..5, 1usize..5, 1usize..5, 1usize..5, 1usize..4, 1usize..4, 0usize..3, 0usize..3)
        .prop_map(|(in_ch, out_ch, h, w, kh, kw, sh, sw, ph, pw)| Geometry {
            in_ch,
            out_ch,
            hw: [h, w],
            kernel: [kh, kw],
            stride: [sh, sw],
            padding: [ph.min(kh - 1), pw.min(kw - 1)],
        })
}

fn build(g: &Geometry, seed: u64) -> Option<Deconv2dLayer<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = Array4::from_shape_simple_fn((g.in_ch, g.out_ch, g.kernel[0], g.kernel[1]), || rng.gen_range(-1.0..1.0));
    let bias = Array1::from_shape_simple_fn(g.out_ch, || rng.gen_range(-1.0..1.0));
    Deconv2dLayer::new(kernels, bias, g.hw, g.stride, g.padding, Activation::Relu).ok()
}

/// Transposed convolution straight from its definition.
fn naive_deconv(layer: &Deconv2dLayer<f64>, x: &[f64]) -> Vec<f64> {
    let (cin, cout, kh, kw) = layer.kernels.dim();
    let [h, w] = layer.input_hw;
    let [oh, ow] = layer.output_hw();
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = layer.bias[co];
                for ci in 0..cin {
                    for i in 0..h {
                        for j in 0..w {
                            let ky = (oy + layer.padding[0]) as isize - (i * layer.stride[0]) as isize;
                            let kx = (ox + layer.padding[1]) as isize - (j * layer.stride[1]) as isize;
                            if (0..kh as isize).contains(&ky) && (0..kw as isize).contains(&kx) {
                                acc += x[(ci * h + i) * w + j] * layer.kernels[[ci, co, ky as usize, kx as usize]];
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deconv_matches_definition(g in geometry(), seed in any::<u64>(), batch in 1usize..3) {
        let Some(layer) = build(&g, seed) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = random_rows(&mut rng, batch, layer.inputs());
        let (pre, _) = layer.forward(x.view()).unwrap();
        for b in 0..batch {
            let want = naive_deconv(&layer, x.row(b).as_slice().unwrap());
            for (got, want) in pre.row(b).iter().zip(&want) {
                prop_assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn deconv_adjoint_identity(g in geometry(), seed in any::<u64>(), batch in 1usize..3) {
        let Some(layer) = build(&g, seed) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let x = random_rows(&mut rng, batch, layer.inputs());
        let y = random_rows(&mut rng, batch, layer.outputs());
        let lhs = (layer.apply_linear(x.view()).unwrap() * &y).sum();
        let rhs = (&x * &layer.adjoint(y.view()).unwrap()).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn weight_file_round_trip(seed in any::<u64>(), generator in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = if generator {
            let spec = GeneratorSpec {
                noise_dim: rng.gen_range(1..6),
                seed_channels: rng.gen_range(1..4),
                deconv_channels: vec![rng.gen_range(1..4), 1],
                output_hw: [rng.gen_range(4..12), rng.gen_range(4..12)],
                kernel_init: KernelInit::He,
            };
            match ModelWeights::<f32>::generator(&spec, &mut rng) {
                Ok(g) => g,
                Err(_) => return Ok(()),
            }
        } else {
            let hidden: Vec<usize> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..9)).collect();
            ModelWeights::<f32>::discriminator(rng.gen_range(1..9), rng.gen_range(1..9), &hidden, &mut rng).unwrap()
        };
        let bytes = save_weights(&model);
        let back = load_weights(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(save_weights(&back), bytes);
    }

    #[test]
    fn weight_reader_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = load_weights(&bytes);
    }

    #[test]
    fn corrupted_weight_files_are_rejected(seed in any::<u64>(), cut in 0usize..10_000, flip in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelWeights::<f32>::discriminator(4, 3, &[5], &mut rng).unwrap();
        let bytes = save_weights(&model);
        let cut = cut % bytes.len();
        prop_assert!(load_weights(&bytes[..cut]).is_err());
        let mut extra = bytes.clone();
        extra.push(flip);
        prop_assert_eq!(load_weights(&extra), Err(WeightsError::TrailingBytes(1)));
    }
}

#[test]
fn bad_magic() {
    assert_eq!(load_weights(b"GIDSW2\n\x00"), Err(WeightsError::BadMagic));
}

/// Ten Adam steps on one scalar against a direct transcription of the update rule.
#[test]
fn adam_matches_reference() {
    let cfg = AdamConfig { learning_rate: 0.01, beta1: 0.9, beta2: 0.99, epsilon: 1e-8 };
    let mut param = vec![0.5f64];
    let mut state = AdamState::new(cfg, &[param.as_slice()]);
    let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for t in 1..=10 {
        let g = 2.0 * p - 0.3;
        m = 0.9 * m + 0.1 * g;
        v = 0.99 * v + 0.01 * g * g;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.99f64.powi(t));
        p -= 0.01 * m_hat / (v_hat.sqrt() + 1e-8);

        let grads = Gradients { blocks: vec![vec![2.0 * param[0] - 0.3]] };
        adam_step(&mut [param.as_mut_slice()], &grads, &mut state).unwrap();
        assert!((param[0] - p).abs() < 1e-14, "step {t}: {} vs {p}", param[0]);
    }
    assert_eq!(state.step, 10);
}

#[test]
fn dense_forward_is_affine_then_activation() {
    let w = Array2::from_shape_vec((2, 3), vec![1.0, -2.0, 0.5, 0.0, 1.0, -1.0]).unwrap();
    let layer = DenseLayer::new(w, Array1::from(vec![0.1, -0.2]), Activation::Relu).unwrap();
    let x = Array2::from_shape_vec((1, 3), vec![1.0, 1.0, 2.0]).unwrap();
    let (pre, out) = layer.forward(x.view()).unwrap();
    assert_eq!(pre.as_slice().unwrap(), &[0.1, -1.2]);
    assert_eq!(out.as_slice().unwrap(), &[0.1, 0.0]);
    let model = ModelWeights::new(ArchTag::DiscriminatorDnn, vec![Layer::Dense(layer)]);
    assert!(model.is_err(), "a discriminator needs a single sigmoid output");
}
