use ifnet::autodiff::{Graph, Var};
use ifnet::model::{
    backbone_forward, basic_block_forward, decode_checkpoint, encode_checkpoint, ifm_forward, model_forward,
    param_layout, predict, sdb, xavier_bound, xavier_init, ModelConfig, ParamKind, ParamStore,
};
use ifnet::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..shape.numel()).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, v).unwrap()
}

/// Two 3x3 fusion convs named `f.conv1` and `f.conv2` with `c` channels.
fn ifm_params(c: usize, seed: u64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for (i, col) in ["conv1", "conv2"].iter().enumerate() {
        p.insert(format!("f.{col}.weight"), random(Shape::new(c, c, 3, 3), seed + 2 * i as u64, 0.5)).unwrap();
        p.insert(format!("f.{col}.bias"), random(Shape::vector(c), seed + 2 * i as u64 + 1, 0.1)).unwrap();
    }
    p
}

fn run_ifm(p: &ParamStore<f64>, x1: &Tensor<f64>, x2: &Tensor<f64>, alpha: f64) -> (Graph<f64>, ifnet::model::IfmOutput) {
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let a = g.constant(x1.clone());
    let b = g.constant(x2.clone());
    let out = ifm_forward(&mut g, &bound, "f", [a, b], alpha).unwrap();
    (g, out)
}

#[test]
fn backbone_reaches_stride_eight() {
    let cfg = ModelConfig::default();
    let p = xavier_init::<f32>(&cfg, 0).unwrap();
    let image = random(Shape::new(1, 3, 224, 224), 1, 1.0).cast::<f32>();
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let x = g.constant(image.clone());
    let y = backbone_forward(&mut g, &bound, &cfg, x).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 64, 28, 28));
    let again = backbone_forward(&mut g, &bound, &cfg, x).unwrap();
    assert_eq!(g.value(y).data(), g.value(again).data());

    let odd = g.constant(Tensor::zeros(Shape::new(1, 3, 40, 48)));
    assert!(backbone_forward(&mut g, &bound, &cfg, odd).is_err());
}

#[test]
fn zero_image_with_zero_biases_gives_zero_features() {
    let cfg = ModelConfig::tiny();
    let p = xavier_init::<f32>(&cfg, 3).unwrap();
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(Shape::new(1, 3, 32, 32)));
    let y = backbone_forward(&mut g, &bound, &cfg, x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn output_shapes_follow_the_strides() {
    let cfg = ModelConfig::default();
    let p = xavier_init::<f32>(&cfg, 5).unwrap();
    let image = random(Shape::new(1, 3, 224, 224), 6, 1.0).cast::<f32>().reshape(Shape::new(1, 3, 224, 224)).unwrap();
    let pred = predict(&p, &cfg, &image).unwrap();
    for t in [&pred.density, &pred.seg_p, &pred.seg_b] {
        assert_eq!(t.shape(), Shape::new(1, 1, 56, 56));
    }
    assert_eq!(pred.intermediates.len(), 3);
    for t in &pred.intermediates {
        assert_eq!(t.shape(), Shape::new(1, 1, 28, 28));
    }
    assert!(pred.density.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn batched_forward_matches_single_images() {
    let cfg = ModelConfig::tiny();
    let p = xavier_init::<f64>(&cfg, 8).unwrap();
    let a = random(Shape::new(1, 3, 32, 32), 1, 1.0);
    let b = random(Shape::new(1, 3, 32, 32), 2, 1.0);
    let both = predict(&p, &cfg, &Tensor::stack(&[a.clone(), b.clone()]).unwrap()).unwrap();
    let pa = predict(&p, &cfg, &a).unwrap();
    let pb = predict(&p, &cfg, &b).unwrap();
    let n = pa.density.numel();
    for (x, y) in both.density.data()[..n].iter().zip(pa.density.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in both.density.data()[n..].iter().zip(pb.density.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zero_alpha_disables_fusion() {
    let p = ifm_params(4, 10);
    let x1 = random(Shape::new(2, 4, 6, 8), 11, 1.0);
    let x2 = random(Shape::new(2, 4, 6, 8), 12, 1.0);
    let (g, out) = run_ifm(&p, &x1, &x2, 0.0);
    for f in out.fused {
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn tied_columns_fuse_identically() {
    let mut p = ifm_params(3, 20);
    let w = p.get("f.conv1.weight").unwrap().clone();
    let b = p.get("f.conv1.bias").unwrap().clone();
    *p.get_mut("f.conv2.weight").unwrap() = w;
    *p.get_mut("f.conv2.bias").unwrap() = b;
    let x = random(Shape::new(1, 3, 4, 4), 21, 1.0);
    let (g, out) = run_ifm(&p, &x, &x, 0.3);
    assert_eq!(g.value(out.fused[0]).data(), g.value(out.fused[1]).data());
}

#[test]
fn single_channel_fusion_copies_the_other_column() {
    let p = ifm_params(1, 30);
    let x1 = random(Shape::new(1, 1, 6, 6), 31, 1.0);
    let x2 = random(Shape::new(1, 1, 6, 6), 32, 1.0);
    let alpha = 0.3;
    let (g, out) = run_ifm(&p, &x1, &x2, alpha);
    for i in 0..2 {
        assert_eq!(g.value(out.weights[i]).data(), &[1.0]);
        let j = 1 - i;
        let expected: Vec<f64> = g.value(out.features[j]).data().iter().map(|v| alpha * v).collect();
        assert_eq!(g.value(out.fused[i]).data(), expected.as_slice());
    }
}

#[test]
fn fusion_rejects_mismatched_or_odd_inputs() {
    let p = ifm_params(2, 40);
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let a = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
    let b = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 6)));
    let odd = g.constant(Tensor::zeros(Shape::new(1, 2, 5, 4)));
    assert!(ifm_forward(&mut g, &bound, "f", [a, b], 0.3).is_err());
    assert!(ifm_forward(&mut g, &bound, "f", [odd, odd], 0.3).is_err());
}

/// Reorders output channels (and input channels when `inputs` is set) of a conv.
fn permute_conv(w: &Tensor<f64>, b: &Tensor<f64>, perm: &[usize]) -> (Tensor<f64>, Tensor<f64>) {
    let [co, ci, kh, kw] = w.shape().0;
    let mut wd = vec![0.0; w.numel()];
    for o in 0..co {
        for i in 0..ci {
            for k in 0..kh * kw {
                wd[(o * ci + i) * kh * kw + k] = w.data()[(perm[o] * ci + perm[i]) * kh * kw + k];
            }
        }
    }
    let bd = (0..co).map(|o| b.data()[perm[o]]).collect();
    (Tensor::new(w.shape(), wd).unwrap(), Tensor::new(b.shape(), bd).unwrap())
}

fn permute_channels(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let s = x.shape();
    let mut out = Vec::with_capacity(x.numel());
    for n in 0..s.n() {
        for &c in perm {
            out.extend_from_slice(x.plane(n, c));
        }
    }
    Tensor::new(s, out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn affinity_rows_are_stochastic(seed in any::<u64>(), c in 1usize..6, scale in 0.01f64..5.0) {
        let p = ifm_params(c, seed);
        let x1 = random(Shape::new(1, c, 4, 6), seed ^ 1, scale);
        let x2 = random(Shape::new(1, c, 4, 6), seed ^ 2, scale);
        let (g, out) = run_ifm(&p, &x1, &x2, 0.3);
        for w in out.weights {
            for row in g.value(w).data().chunks(c) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn fusion_is_permutation_equivariant(seed in any::<u64>(), c in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..c).collect();
        for i in (1..c).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let p = ifm_params(c, seed);
        let x1 = random(Shape::new(1, c, 4, 4), seed ^ 3, 1.0);
        let x2 = random(Shape::new(1, c, 4, 4), seed ^ 4, 1.0);
        let mut q = ParamStore::new();
        for col in ["conv1", "conv2"] {
            let (w, b) = permute_conv(
                p.get(&format!("f.{col}.weight")).unwrap(),
                p.get(&format!("f.{col}.bias")).unwrap(),
                &perm,
            );
            q.insert(format!("f.{col}.weight"), w).unwrap();
            q.insert(format!("f.{col}.bias"), b).unwrap();
        }
        let (g, out) = run_ifm(&p, &x1, &x2, 0.3);
        let (h, pout) = run_ifm(&q, &permute_channels(&x1, &perm), &permute_channels(&x2, &perm), 0.3);
        for i in 0..2 {
            let expected = permute_channels(g.value(out.fused[i]), &perm);
            for (a, b) in h.value(pout.fused[i]).data().iter().zip(expected.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sdb_thresholds_at_the_sign_of_p_minus_b(
        values in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..50),
        k in 0.01f64..1000.0,
    ) {
        let n = values.len();
        let p = Tensor::new(Shape::vector(n), values.iter().map(|v| v.0).collect()).unwrap();
        let b = Tensor::new(Shape::vector(n), values.iter().map(|v| v.1).collect()).unwrap();
        let m = sdb(&p, &b, k).unwrap();
        let rev = sdb(&b, &p, k).unwrap();
        for i in 0..n {
            let (pv, bv) = values[i];
            if pv != bv {
                prop_assert_eq!(m.data()[i] > 0.5, pv > bv);
            }
            prop_assert!((m.data()[i] + rev.data()[i] - 1.0).abs() < 1e-6);
            prop_assert!(m.data()[i] > 0.0 && m.data()[i] < 1.0);
        }
    }

    #[test]
    fn sdb_increases_with_the_gap(t1 in -0.05f64..0.05, dt in 1e-4f64..0.05, k in 1.0f64..500.0) {
        let zero = Tensor::new(Shape::vector(2), vec![0.0, 0.0]).unwrap();
        let p = Tensor::new(Shape::vector(2), vec![t1, t1 + dt]).unwrap();
        let m = sdb(&p, &zero, k).unwrap();
        // strict unless both ends are inside the exponent clamp
        prop_assert!(m.data()[1] > m.data()[0] || (k * t1).abs() > 30.0);
    }
}

#[test]
fn sdb_reference_values() {
    let b = Tensor::new(Shape::vector(3), vec![0.2, 0.0, 0.0]).unwrap();
    let p = Tensor::new(Shape::vector(3), vec![0.2, 0.01, 0.1]).unwrap();
    let m = sdb(&p, &b, 500.0).unwrap();
    assert_eq!(m.data()[0], 0.5);
    let expected = 1.0 / (1.0 + (-5.0f64).exp());
    assert!((m.data()[1] - expected).abs() < 1e-12);
    assert!((m.data()[1] - 0.993307).abs() < 1e-5);
    assert!((1.0 - m.data()[2]).abs() < 1e-9);
}

fn block_setup(alpha: f64) -> (ModelConfig, ParamStore<f64>, Tensor<f64>) {
    let cfg = ModelConfig {
        alpha_ifm: alpha,
        ..ModelConfig::tiny()
    };
    let mut p = xavier_init::<f64>(&cfg, 50).unwrap();
    for spec in param_layout(&cfg).unwrap() {
        if spec.kind == ParamKind::Bias {
            *p.get_mut(&spec.name).unwrap() = random(spec.shape, 51, 0.1);
        }
    }
    (cfg, p, random(Shape::new(2, 8, 4, 6), 52, 1.0))
}

fn run_block(cfg: &ModelConfig, p: &ParamStore<f64>, x: &Tensor<f64>) -> (Graph<f64>, ifnet::model::BlockTrace) {
    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let t = basic_block_forward(&mut g, &bound, cfg, 0, xv).unwrap();
    (g, t)
}

#[test]
fn block_keeps_shape_and_emits_one_density_channel() {
    let (cfg, p, x) = block_setup(0.3);
    let (g, t) = run_block(&cfg, &p, &x);
    assert_eq!(g.shape(t.features), x.shape());
    assert_eq!(g.shape(t.inter_density), Shape::new(2, 1, 4, 6));

    let mut g = Graph::new();
    let bound = p.bind(&mut g, false);
    let wrong = g.constant(Tensor::zeros(Shape::new(1, 4, 4, 4)));
    assert!(basic_block_forward(&mut g, &bound, &cfg, 0, wrong).is_err());
}

#[test]
fn zero_alpha_gives_the_residual_identity() {
    let (cfg, p, x) = block_setup(0.0);
    let (g, t) = run_block(&cfg, &p, &x);
    for i in 0..2 {
        assert_eq!(g.value(t.residual[i]).data(), g.value(t.columns[i]).data());
    }
}

#[test]
fn zero_alpha_isolates_the_columns() {
    let (cfg, p, x) = block_setup(0.0);
    let (g, t) = run_block(&cfg, &p, &x);
    let before = g.value(t.pre_fusion[0]).clone();

    let mut q = p.clone();
    for name in ["block0.split2.weight", "block0.col2.conv_a.bias", "block0.ifm.conv2.weight", "block0.col2.conv_b.weight"] {
        let t = q.get_mut(name).unwrap();
        for v in t.data_mut() {
            *v += 0.37;
        }
    }
    let (h, u) = run_block(&cfg, &q, &x);
    assert_eq!(h.value(u.pre_fusion[0]).data(), before.data());
    assert_ne!(h.value(u.pre_fusion[1]).data(), g.value(t.pre_fusion[1]).data());

    // With fusion on, the same edit reaches column 1.
    let (cfg, p, x) = block_setup(0.3);
    let (g, t) = run_block(&cfg, &p, &x);
    let mut q = p.clone();
    for v in q.get_mut("block0.ifm.conv2.weight").unwrap().data_mut() {
        *v += 0.37;
    }
    let (h, u) = run_block(&cfg, &q, &x);
    assert_ne!(h.value(u.pre_fusion[0]).data(), g.value(t.pre_fusion[0]).data());
}

#[test]
fn model_output_exposes_every_block() {
    let cfg = ModelConfig::tiny();
    let p = xavier_init::<f64>(&cfg, 60).unwrap();
    let mut g = Graph::new();
    let bound = p.bind(&mut g, true);
    let x: Var = g.constant(random(Shape::new(1, 3, 32, 32), 61, 1.0));
    let out = model_forward(&mut g, &bound, &cfg, x).unwrap();
    assert_eq!(out.intermediates.len(), cfg.block_count);
    assert_eq!(out.blocks.len(), cfg.block_count);
    assert_eq!(g.shape(out.seg_p), Shape::new(1, 1, 8, 8));
}

#[test]
fn xavier_statistics() {
    let shape = Shape::new(512, 512, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w: Tensor<f64> = ifnet::model::xavier_uniform(shape, &mut rng);
    let n = w.numel() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let var = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let target = 2.0 / (512.0 * 9.0 + 512.0 * 9.0);
    assert!((var - target).abs() < 0.1 * target, "variance {var} vs {target}");
    let bound = xavier_bound(shape);
    assert!(w.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn xavier_init_is_seeded_with_zero_biases() {
    let cfg = ModelConfig::tiny();
    let a = xavier_init::<f32>(&cfg, 9).unwrap();
    assert_eq!(a, xavier_init::<f32>(&cfg, 9).unwrap());
    assert_ne!(a, xavier_init::<f32>(&cfg, 10).unwrap());
    for spec in param_layout(&cfg).unwrap() {
        let t = a.get(&spec.name).unwrap();
        match spec.kind {
            ParamKind::Bias => assert!(t.data().iter().all(|&v| v == 0.0)),
            ParamKind::Weight => assert!(t.data().iter().any(|&v| v != 0.0)),
        }
    }
}

#[test]
fn checkpoint_round_trip_restores_a_valid_store() {
    let cfg = ModelConfig::tiny();
    let p = xavier_init::<f32>(&cfg, 12).unwrap();
    let bytes = encode_checkpoint(&p).unwrap();
    let q = decode_checkpoint(&bytes).unwrap();
    q.check_against(&cfg).unwrap();
    assert_eq!(q, p);
    assert_eq!(encode_checkpoint(&q).unwrap(), bytes);
}
