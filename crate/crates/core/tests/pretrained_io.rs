use std::fs;
use std::path::Path;

use adenoseg::error::WeightsError;
use adenoseg::pretrained::reference::swin_tiny_inventory;
use adenoseg::pretrained::{map_pretrained, read_manifest, write_archive, MappingReport};
use adenoseg::{build_model, Error, ModelConfig, SwinUNet};
use candle_core::{DType, Device, Tensor};

fn seeded(shape: &[usize], seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random::<f32>() - 0.5).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// An archive with the official Swin-Tiny tensor inventory and seeded values.
fn swin_tiny_archive(dir: &Path, transpose: Option<&str>) -> Vec<(String, Tensor)> {
    let tensors: Vec<(String, Tensor)> = swin_tiny_inventory()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let t = if r.dtype.candle() == Some(DType::I64) {
                Tensor::zeros(r.shape.as_slice(), DType::I64, &Device::Cpu).unwrap()
            } else {
                seeded(&r.shape, i as u64)
            };
            let t = if transpose == Some(r.name.as_str()) { t.t().unwrap().contiguous().unwrap() } else { t };
            (r.name, t)
        })
        .collect();
    write_archive(dir.join("swin.manifest"), tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
    tensors
}

fn values(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
}

#[test]
fn manifest_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.manifest");
    let a = seeded(&[2, 3], 1);
    let b = seeded(&[4], 2);
    let c = Tensor::new(&[1i64, 2, 3], &Device::Cpu).unwrap();
    write_archive(&path, [("a", &a), ("b", &b), ("c", &c)]).unwrap();
    let m = read_manifest(&path).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.total_bytes, 24 + 16 + 24);
    let mut reader = m.open().unwrap();
    assert_eq!(values(&reader.read_tensor(m.get("a").unwrap()).unwrap()), values(&a));
    assert_eq!(
        reader.read_tensor(m.get("c").unwrap()).unwrap().to_vec1::<i64>().unwrap(),
        vec![1, 2, 3]
    );

    // blob 4 bytes short
    let blob = path.with_extension("bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(
        read_manifest(&path),
        Err(Error::Weights(WeightsError::BlobSize { .. }))
    ));
    fs::write(&blob, &bytes).unwrap();

    let text = fs::read_to_string(&path).unwrap();
    let dup = dir.path().join("dup.manifest");
    fs::write(&dup, text.replace("b\tf32", "a\tf32")).unwrap();
    fs::copy(&blob, dup.with_extension("bin")).unwrap();
    assert!(matches!(
        read_manifest(&dup),
        Err(Error::Weights(WeightsError::DuplicateName(n))) if n == "a"
    ));

    let gap = dir.path().join("gap.manifest");
    fs::write(&gap, text.replace("\t24\n", "\t28\n")).unwrap();
    fs::copy(&blob, gap.with_extension("bin")).unwrap();
    assert!(matches!(read_manifest(&gap), Err(Error::Weights(WeightsError::Layout { .. }))));

    let bad = dir.path().join("bad.manifest");
    fs::write(&bad, "a\tf32\t2,x\t0\n").unwrap();
    assert!(matches!(
        read_manifest(&bad),
        Err(Error::Weights(WeightsError::Parse { line: 1, .. }))
    ));
}

fn check_partition(model: &SwinUNet, report: &MappingReport) {
    let mut names: Vec<&str> = report
        .loaded
        .iter()
        .map(|(p, _)| p.as_str())
        .chain(report.skipped_by_policy.iter().map(String::as_str))
        .chain(report.randomly_initialized.iter().map(String::as_str))
        .collect();
    names.sort();
    let before = names.len();
    names.dedup();
    assert_eq!(before, names.len(), "a parameter appears in two lists");
    let all: Vec<&str> = model.params().names().collect();
    assert_eq!(names, all);
}

#[test]
fn swin_tiny_policy_and_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let tensors = swin_tiny_archive(dir.path(), None);
    let manifest = read_manifest(dir.path().join("swin.manifest")).unwrap();
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let report = map_pretrained(&model, &manifest).unwrap();
    check_partition(&model, &report);

    for name in model.params().names() {
        let in_random = report.randomly_initialized.iter().any(|r| r == name);
        if name.starts_with("patch_embed.") {
            assert!(report.skipped_by_policy.iter().any(|s| s == name), "{name}");
        }
        for stage in ["stage2.", "stage3.", "stage5."] {
            if name.starts_with(stage) {
                assert!(!in_random, "{name} should be pretrained");
            }
        }
        if let Some(rest) = name.strip_prefix("stage4.blocks.") {
            let block: usize = rest.split('.').next().unwrap().parse().unwrap();
            assert_eq!(in_random, block >= 6, "{name}");
        }
        for prefix in ["stem.", "decoder."] {
            if name.starts_with(prefix) {
                assert!(in_random, "{name}");
            }
        }
    }
    for (param, source) in &report.loaded {
        let want = &tensors.iter().find(|(n, _)| n == source).unwrap().1;
        let got = model.params().var(param).unwrap();
        assert_eq!(values(got.as_tensor()), values(want), "{param} <- {source}");
    }
    assert!(report.unused_source.iter().any(|s| s.starts_with("patch_embed.")));
    assert!(report.unused_source.iter().any(|s| s.starts_with("head.")));

    // mapping again changes nothing
    let snapshot: Vec<Vec<f32>> = model.params().iter().map(|(_, v)| values(v.as_tensor())).collect();
    let again = map_pretrained(&model, &manifest).unwrap();
    assert_eq!(again, report);
    let after: Vec<Vec<f32>> = model.params().iter().map(|(_, v)| values(v.as_tensor())).collect();
    assert_eq!(snapshot, after);

    let out = dir.path().join("report.json");
    report.write(&out).unwrap();
    let parsed: MappingReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed, report);
}

#[test]
fn transposed_tensor_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let victim = "layers.1.blocks.0.mlp.fc1.weight";
    swin_tiny_archive(dir.path(), Some(victim));
    let manifest = read_manifest(dir.path().join("swin.manifest")).unwrap();
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let before = values(model.params().var("stage2.blocks.0.attn.qkv.weight").unwrap().as_tensor());
    match map_pretrained(&model, &manifest) {
        Err(Error::Weights(WeightsError::ShapeMismatch { source_name, .. })) => assert_eq!(source_name, victim),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    // nothing was written before the failure was detected
    let after = values(model.params().var("stage2.blocks.0.attn.qkv.weight").unwrap().as_tensor());
    assert_eq!(before, after);
}
