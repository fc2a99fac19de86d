mod common;

use rand::Rng;
use styleaug::autograd::Tape;
use styleaug::rng::stream;
use styleaug::tensor::Tensor;
use styleaug::transformer::{cin_params_from_embedding, stylize, TransformerWeights};
use styleaug::{LossNetwork, RgbImage, StyleEmbedding, TransformerConfig};

fn random_z(dim: usize, seed: u64) -> StyleEmbedding {
    let mut rng = stream(seed, 0);
    StyleEmbedding::new((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn desk_transformer_is_fully_convolutional() {
    let t = TransformerWeights::init(TransformerConfig::desk(), &mut stream(31, 0)).unwrap();
    let z = random_z(t.embedding_dim(), 1);
    let mut rng = stream(32, 0);
    for size in [64, 96] {
        let img = common::random_image(size, size, &mut rng);
        let out = stylize(&img, &z, &t).unwrap();
        assert_eq!((out.width(), out.height()), (size, size));
        assert!(out.is_valid());
    }
    // Sizes off the downsampling grid are padded internally.
    let odd = common::random_image(37, 21, &mut rng);
    let out = stylize(&odd, &z, &t).unwrap();
    assert_eq!((out.width(), out.height()), (37, 21));
}

#[test]
fn untrained_output_stays_in_range_for_extreme_embeddings() {
    let t = common::small_transformer(33);
    let img = RgbImage::filled(16, 16, [1.0, 0.0, 0.5]);
    let big = StyleEmbedding::new(vec![50.0; t.embedding_dim()]).unwrap();
    let out = stylize(&img, &big, &t).unwrap();
    assert!(out
        .data()
        .iter()
        .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
}

#[test]
fn cin_projection_is_affine_in_z() {
    let t = common::small_transformer(34);
    let (a, b) = (
        random_z(t.embedding_dim(), 2),
        random_z(t.embedding_dim(), 3),
    );
    let mid = StyleEmbedding::new(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| 0.5 * (x + y))
            .collect(),
    )
    .unwrap();
    for (layer, _) in t.config().conditioned_layers() {
        let pa = cin_params_from_embedding(&a, &layer, &t).unwrap();
        let pb = cin_params_from_embedding(&b, &layer, &t).unwrap();
        let pm = cin_params_from_embedding(&mid, &layer, &t).unwrap();
        for k in 0..pm.gamma.len() {
            assert!((pm.gamma[k] - 0.5 * (pa.gamma[k] + pb.gamma[k])).abs() < 1e-5);
            assert!((pm.beta[k] - 0.5 * (pa.beta[k] + pb.beta[k])).abs() < 1e-5);
        }
    }
    assert!(cin_params_from_embedding(&a, "enc2", &t).is_err());
}

#[test]
fn parameter_gradients_match_central_differences() {
    let config = TransformerConfig {
        base_channels: 4,
        residual_blocks: 1,
        ..TransformerConfig::default()
    };
    let t: TransformerWeights<f64> = TransformerWeights::init(config, &mut stream(35, 0))
        .unwrap()
        .cast();
    let net = LossNetwork::desk().cast::<f64>();
    let mut rng = stream(36, 0);
    let mut rand_t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    };
    let (c, s) = (rand_t(&[1, 3, 16, 16]), rand_t(&[1, 3, 16, 16]));
    let z = rand_t(&[1, t.embedding_dim()]).map(|v| 2.0 * v - 1.0);
    let targets = net.targets(&c, &s);
    let eval = |w: &TransformerWeights<f64>| {
        let tape = Tape::new();
        let bound = w.params().bind(&tape, true);
        let nb = net.params().bind(&tape, false);
        let out = w.forward(
            &tape,
            &bound,
            tape.constant(c.clone()),
            tape.constant(z.clone()),
        );
        let (_, _, total) = net.objective_on_tape(&tape, &nb, out, &targets, 1e3);
        let v = tape.value(total).item();
        let mut g = tape.backward(total);
        (v, w.params().gradients(&bound, &mut g))
    };
    let (_, grads) = eval(&t);
    for (name, k) in [
        ("enc2.weight", 5),
        ("dec1.cin.beta_w", 11),
        ("res1.b.weight", 3),
    ] {
        let h = 1e-5;
        let mut p = t.clone();
        p.params_mut().get_mut(name).unwrap().data_mut()[k] += h;
        let mut m = t.clone();
        m.params_mut().get_mut(name).unwrap().data_mut()[k] -= h;
        let fd = (eval(&p).0 - eval(&m).0) / (2.0 * h);
        let g = grads[name].data()[k];
        assert!(
            (g - fd).abs() <= 1e-3 * g.abs().max(fd.abs()).max(1e-9),
            "{name}[{k}]: {g} vs {fd}"
        );
    }
}
