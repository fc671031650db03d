use adenoseg::model::swin::max_row_sum_error;
use adenoseg::model::window::{window_partition, window_reverse};
use adenoseg::model::{FeatureMap, Level};
use adenoseg::train::{composite_loss, Adam, AdamConfig};
use adenoseg::{build_model, Error, ModelConfig, SwinUNet};
use candle_core::{DType, Device, IndexOp, Tensor};
use proptest::prelude::*;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap()
}

fn fm(shape: &[usize], seed: u64, level: Level) -> FeatureMap {
    FeatureMap::new(randn(shape, seed), level)
}

#[test]
fn same_seed_same_parameters() {
    let cfg = ModelConfig::default();
    let a = build_model(&cfg, 7).unwrap();
    let b = build_model(&cfg, 7).unwrap();
    assert_eq!(a.params().len(), b.params().len());
    for ((na, va), (nb, vb)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(max_abs_diff(va.as_tensor(), vb.as_tensor()), 0.0, "{na}");
    }
    let c = build_model(&cfg, 8).unwrap();
    let name = "stage3.blocks.0.attn.qkv.weight";
    let (x, y) = (a.params().var(name).unwrap(), c.params().var(name).unwrap());
    assert!(max_abs_diff(x.as_tensor(), y.as_tensor()) > 0.0);
}

#[test]
fn invalid_config_names_the_invariant() {
    let cfg = ModelConfig {
        stage_dims: vec![48, 96, 192, 384, 700],
        ..ModelConfig::default()
    };
    match build_model(&cfg, 0) {
        Err(Error::Config(msg)) => assert!(msg.contains("stage_dims[4]") && msg.contains("768"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn stem_and_patch_embed_shapes() {
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let out = model.stem_forward(&fm(&[2, 3, 224, 224], 1, Level::Input)).unwrap();
    assert_eq!(out.dims().unwrap(), (2, 48, 112, 112));
    assert_eq!(out.level(), Level::Encoder(1));
    let small = model.stem_forward(&fm(&[1, 3, 14, 14], 2, Level::Input)).unwrap();
    assert_eq!(small.dims().unwrap(), (1, 48, 7, 7));
    assert!(model.stem_forward(&fm(&[1, 3, 15, 14], 2, Level::Input)).is_err());

    let pe = model.patch_embed_forward(&out).unwrap();
    assert_eq!(pe.dims().unwrap(), (2, 96, 56, 56));
    let tiny = model.patch_embed_forward(&fm(&[1, 48, 2, 2], 3, Level::Encoder(1))).unwrap();
    assert_eq!(tiny.dims().unwrap(), (1, 96, 1, 1));
    assert!(matches!(
        model.patch_embed_forward(&fm(&[1, 48, 7, 7], 3, Level::Encoder(1))),
        Err(Error::Shape(_))
    ));
}

#[test]
fn stem_normalization_is_standardizing() {
    let model = build_model(&ModelConfig::reduced(), 0).unwrap();
    let pre = model.stem().pre_affine(&fm(&[2, 3, 32, 32], 4, Level::Input)).unwrap();
    let t = pre.tensor().flatten_from(2).unwrap();
    let mean = t.mean_keepdim(2).unwrap();
    let var = t.broadcast_sub(&mean).unwrap().sqr().unwrap().mean_keepdim(2).unwrap();
    let max_mean = mean.abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f32>().unwrap();
    assert!(max_mean < 1e-5, "{max_mean}");
    for v in var.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
        assert!((v - 1.0).abs() < 1e-3, "variance {v}");
    }
}

#[test]
fn swin_stage_shapes_and_rows() {
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let x = fm(&[2, 96, 56, 56], 5, Level::Encoder(2));
    let s2 = model.swin_stage_forward(&x, 2).unwrap();
    assert_eq!(s2.dims().unwrap(), (2, 96, 56, 56));
    let (s3, probs) = model.stage(3).unwrap().forward_with_attention(&x).unwrap();
    assert_eq!(s3.dims().unwrap(), (2, 192, 28, 28));
    for p in probs {
        assert!(max_row_sum_error(&p).unwrap() <= 1e-5);
    }
    assert!(model.swin_stage_forward(&fm(&[1, 48, 56, 56], 5, Level::Encoder(2)), 2).is_err());
    assert!(model.swin_stage_forward(&x, 6).is_err());
}

#[test]
fn pab_affinity_identity_and_batch_independence() {
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let x = fm(&[1, 768, 7, 7], 6, Level::Encoder(5));
    let y = model.pab_forward(&x).unwrap();
    assert_eq!(y.dims().unwrap(), (1, 768, 7, 7));
    assert_eq!(max_abs_diff(y.tensor(), x.tensor()), 0.0);
    let a = model.decoder().pab.affinity(&x).unwrap();
    assert_eq!(a.dims(), &[1, 49, 49]);
    assert!(max_row_sum_error(&a).unwrap() <= 1e-5);

    // with gamma != 0 the batch entries must still not interact
    model
        .params()
        .assign("decoder.pab.gamma", &Tensor::new(&[0.7f32], &Device::Cpu).unwrap())
        .unwrap();
    let batch = fm(&[3, 768, 7, 7], 7, Level::Encoder(5));
    let out = model.pab_forward(&batch).unwrap().into_tensor();
    let perm = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
    let swapped = FeatureMap::new(batch.tensor().index_select(&perm, 0).unwrap(), Level::Encoder(5));
    let out_swapped = model.pab_forward(&swapped).unwrap().into_tensor();
    assert!(max_abs_diff(&out.index_select(&perm, 0).unwrap(), &out_swapped) < 1e-5);
    assert!(max_abs_diff(&out, batch.tensor()) > 0.0);
}

#[test]
fn mfab_shapes_gates_and_zero_high() {
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let low = fm(&[1, 96, 56, 56], 8, Level::Encoder(2));
    let high = fm(&[1, 192, 28, 28], 9, Level::Decoder(3));
    let out = model.mfab_forward(3, &low, &high).unwrap();
    assert_eq!(out.dims().unwrap(), (1, 96, 56, 56));
    let gates = model.mfab_gates(3, &low, &high).unwrap();
    for g in [gates.high, gates.low] {
        let v = g.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
    }
    let zeros = FeatureMap::new(Tensor::zeros((1, 192, 28, 28), DType::F32, &Device::Cpu).unwrap(), Level::Decoder(3));
    let out = model.mfab_forward(3, &low, &zeros).unwrap();
    let v = out.tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    assert!(v.iter().all(|x| x.is_finite()));
    let odd = fm(&[1, 192, 27, 27], 9, Level::Decoder(3));
    assert!(matches!(model.mfab_forward(3, &low, &odd), Err(Error::Shape(_))));
}

#[test]
fn forward_shapes_determinism_and_divisibility() {
    let model = build_model(&ModelConfig::reduced(), 0).unwrap();
    let x = randn(&[4, 3, 224, 224], 10);
    let a = model.forward(&x).unwrap();
    assert_eq!(a.dims(), &[4, 1, 224, 224]);
    let b = model.forward(&x).unwrap();
    assert_eq!(max_abs_diff(&a, &b), 0.0);
    let v = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    assert!(v.iter().all(|z| z.is_finite()));
    match model.forward(&randn(&[1, 3, 200, 200], 11)) {
        Err(Error::Shape(msg)) => assert!(msg.contains("pad"), "{msg}"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn whole_model_is_batch_permutation_equivariant() {
    let model = build_model(&ModelConfig::reduced(), 1).unwrap();
    model
        .params()
        .assign("decoder.pab.gamma", &Tensor::new(&[0.3f32], &Device::Cpu).unwrap())
        .unwrap();
    let x = randn(&[3, 3, 64, 64], 12);
    let perm = Tensor::new(&[1u32, 2, 0], &Device::Cpu).unwrap();
    let a = model.forward(&x).unwrap().index_select(&perm, 0).unwrap();
    let b = model.forward(&x.index_select(&perm, 0).unwrap()).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-5);
    let single = model.forward(&x.i(1..2).unwrap()).unwrap();
    assert!(max_abs_diff(&single, &a.i(0..1).unwrap()) < 1e-5);
}

fn zero_gradient_fraction(model: &SwinUNet, grads: &candle_core::backprop::GradStore, skip: &[&str]) -> f64 {
    let (mut zeros, mut total) = (0usize, 0usize);
    for (name, var) in model.params().iter() {
        let g = grads.get(var.as_tensor()).unwrap_or_else(|| panic!("{name} has no gradient"));
        if skip.iter().any(|s| name.starts_with(s)) {
            continue;
        }
        let v = g.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        zeros += v.iter().filter(|&&x| x == 0.0).count();
        total += v.len();
    }
    zeros as f64 / total as f64
}

#[test]
fn gradient_reaches_every_parameter() {
    let model = build_model(&ModelConfig::reduced(), 2).unwrap();
    let x = randn(&[2, 3, 64, 64], 13);
    let t = randn(&[2, 1, 64, 64], 14).ge(0.0).unwrap().to_dtype(DType::F32).unwrap();
    let loss = composite_loss(&model.forward(&x).unwrap(), &t, 1.0, 1.0).unwrap();
    let grads = loss.total.backward().unwrap();
    // gamma = 0 makes the PAB projections exactly gradient-free at init
    let pab_branch = ["decoder.pab.query.", "decoder.pab.key.", "decoder.pab.value."];
    let frac = zero_gradient_fraction(&model, &grads, &pab_branch);
    assert!(frac <= 0.01, "{:.3}% zero gradients outside the PAB branch", frac * 100.0);

    let mut adam = Adam::new(AdamConfig::default(), model.params()).unwrap();
    adam.step(model.params(), &grads, 1e-3, None).unwrap();
    let loss = composite_loss(&model.forward(&x).unwrap(), &t, 1.0, 1.0).unwrap();
    let grads = loss.total.backward().unwrap();
    let frac = zero_gradient_fraction(&model, &grads, &[]);
    assert!(frac <= 0.01, "{:.3}% zero gradients after one step", frac * 100.0);
}

#[test]
fn window_round_trip_on_stage_two_grid() {
    let x = fm(&[1, 96, 56, 56], 15, Level::Encoder(2));
    let ws = window_partition(&x, 7).unwrap();
    assert_eq!(ws.num_windows(), 64);
    let back = window_reverse(&ws, (56, 56)).unwrap();
    assert_eq!(max_abs_diff(back.tensor(), x.tensor()), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn window_round_trip_any_size(b in 1usize..3, c in 1usize..5, h in 1usize..20, w in 1usize..20, win in 1usize..8, seed in 0u64..1000) {
        let x = fm(&[b, c, h, w], seed, Level::Encoder(2));
        let ws = window_partition(&x, win).unwrap();
        let per_axis = |n: usize| n.div_ceil(win);
        prop_assert_eq!(ws.num_windows(), per_axis(h) * per_axis(w));
        let back = window_reverse(&ws, (h, w)).unwrap();
        prop_assert_eq!(max_abs_diff(back.tensor(), x.tensor()), 0.0);
    }
}
