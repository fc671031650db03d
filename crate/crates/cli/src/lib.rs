//! Command implementations behind the `adenoseg` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use adenoseg::data::dataset::{is_image_file, read_mask, read_rgb, split_by_name};
use adenoseg::data::{epoch::worker_count, load_all, scan_dataset_with, LoadedSample};
use adenoseg::infer::{
    binarize, render_overlay, sliding_window_predict, write_mask_png, write_probability_tiff, write_rgb_png, ChwImage,
};
use adenoseg::pretrained::{map_pretrained, read_manifest, MappingReport};
use adenoseg::seed::SeedPlan;
use adenoseg::train::{fit, load_checkpoint, FitOptions, FitOutcome, OverlapCounts, TrainState};
use adenoseg::{RunConfig, SwinUNet};
use anyhow::{bail, Context, Result};
use image::GrayImage;

pub const CONFIG_ECHO: &str = "config.toml";
pub const MAPPING_REPORT: &str = "pretrained_mapping.json";
pub const EVAL_CSV: &str = "eval.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub struct TrainSummary {
    pub fit: FitOutcome,
    pub mapping: Option<MappingReport>,
    pub output_dir: PathBuf,
}

/// Trains from scratch, or continues from `resume` up to `train.epochs`.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let out = &config.output_dir;
    create_dir(out)?;
    std::fs::write(out.join(CONFIG_ECHO), config.echo()?)
        .with_context(|| format!("cannot write config echo into {}", out.display()))?;

    let records = scan_dataset_with(&config.data.root, &config.data.layout())?;
    let (train, val) = split_by_name(records, config.data.val_fraction);
    if train.is_empty() {
        bail!(
            "no training images left in {} after holding out data.val_fraction = {}",
            config.data.root.display(),
            config.data.val_fraction
        );
    }
    log::info!("{} training and {} validation images", train.len(), val.len());
    let train = Arc::new(load_all(&train)?);
    let val = load_all(&val)?;

    let mut mapping = None;
    let mut state = match resume {
        Some(path) => {
            let mut state = load_checkpoint(path).with_context(|| format!("cannot resume from {}", path.display()))?;
            state.config.epochs = config.train.epochs;
            state
        }
        None => {
            let model = SwinUNet::new(
                &config.model,
                SeedPlan::from_root(config.seed).init,
                candle_dtype(),
                &adenoseg::candle_core::Device::Cpu,
            )?;
            if let Some(manifest_path) = &config.pretrained_manifest {
                let manifest = read_manifest(manifest_path)?;
                let report = map_pretrained(&model, &manifest)?;
                report.write(out.join(MAPPING_REPORT))?;
                log::info!("pretrained weights: {}", report.summary());
                mapping = Some(report);
            }
            TrainState::new(model, config.train.clone(), config.seed)?
        }
    };

    let validate = |model: &SwinUNet| -> adenoseg::Result<f64> { mean_dice(model, &val, config) };
    let validator: Option<adenoseg::train::Validator<'_>> = if val.is_empty() { None } else { Some(&validate) };
    let options = FitOptions {
        output_dir: Some(out.clone()),
        workers: worker_count(),
    };
    let fit = fit(&mut state, train, &config.sampling(), &options, validator)?;
    Ok(TrainSummary {
        fit,
        mapping,
        output_dir: out.clone(),
    })
}

fn candle_dtype() -> adenoseg::candle_core::DType {
    adenoseg::candle_core::DType::F32
}

fn predict_mask(model: &SwinUNet, image: &image::RgbImage, config: &RunConfig) -> adenoseg::Result<GrayImage> {
    let chw = ChwImage::from_rgb(image, &config.data.normalizer());
    let probs = sliding_window_predict(model, &chw, &config.infer)?;
    Ok(binarize(&probs, config.infer.threshold))
}

fn mean_dice(model: &SwinUNet, samples: &[LoadedSample], config: &RunConfig) -> adenoseg::Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = predict_mask(model, &s.image, config)?;
        total += OverlapCounts::from_masks(pred.as_raw(), s.mask.as_raw())?.dice();
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Image files under `input`: the file itself, or a sorted directory listing.
pub fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = std::fs::read_dir(input).with_context(|| format!("cannot read input {}", input.display()))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.with_context(|| format!("cannot list {}", input.display()))?.path();
        if is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Default)]
pub struct PredictSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Predicts every image under `input`; failures are collected, not fatal.
pub fn cmd_predict(config: &RunConfig, checkpoint: &Path, input: &Path) -> Result<PredictSummary> {
    let state = load_checkpoint(checkpoint).with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let out = &config.output_dir;
    create_dir(out)?;
    let mut summary = PredictSummary::default();
    for path in collect_inputs(input)? {
        match predict_one(&state.model, &path, out, config) {
            Ok(written) => summary.written.extend(written),
            Err(e) => {
                log::error!("{}: {e:#}", path.display());
                summary.failed.push((path, format!("{e:#}")));
            }
        }
    }
    Ok(summary)
}

fn predict_one(model: &SwinUNet, path: &Path, out: &Path, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let image = read_rgb(path)?;
    let chw = ChwImage::from_rgb(&image, &config.data.normalizer());
    let probs = sliding_window_predict(model, &chw, &config.infer)?;
    let mask = binarize(&probs, config.infer.threshold);
    let name = stem_of(path);
    let mask_path = out.join(format!("{name}_mask.png"));
    let overlay_path = out.join(format!("{name}_overlay.png"));
    write_mask_png(&mask, &mask_path)?;
    write_rgb_png(&render_overlay(&image, &mask, config.output.overlay_alpha)?, &overlay_path)?;
    let mut written = vec![mask_path, overlay_path];
    if config.output.write_probability {
        let prob_path = out.join(format!("{name}_prob.tif"));
        write_probability_tiff(&probs, &prob_path)?;
        written.push(prob_path);
    }
    Ok(written)
}

/// Replacement predictors for checking the evaluation path without a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stub {
    /// The input image, binarized like a mask.
    Identity,
    /// Everything background.
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_image: Vec<ImageScore>,
    pub mean_dice: f64,
    pub mean_iou: f64,
}

/// Scores predictions against ground truth. Exactly one of `checkpoint` and
/// `stub` must be given.
pub fn cmd_evaluate(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    dataset: &Path,
    stub: Option<Stub>,
) -> Result<EvalSummary> {
    let model = match (checkpoint, stub) {
        (Some(c), None) => Some(
            load_checkpoint(c)
                .with_context(|| format!("cannot load checkpoint {}", c.display()))?
                .model,
        ),
        (None, Some(_)) => None,
        _ => bail!("evaluate needs exactly one of --checkpoint and --stub"),
    };
    let records = scan_dataset_with(dataset, &config.data.layout())?;
    let mut per_image = Vec::with_capacity(records.len());
    for rec in &records {
        let truth = read_mask(&rec.mask_path)?;
        let pred = match (&model, stub) {
            (Some(m), _) => predict_mask(m, &read_rgb(&rec.image_path)?, config)?,
            (None, Some(Stub::Identity)) => read_mask(&rec.image_path)?,
            (None, _) => GrayImage::new(truth.width(), truth.height()),
        };
        let c = OverlapCounts::from_masks(pred.as_raw(), truth.as_raw())?;
        per_image.push(ImageScore {
            name: rec.name(),
            dice: c.dice(),
            iou: c.iou(),
        });
    }
    let n = per_image.len().max(1) as f64;
    let summary = EvalSummary {
        mean_dice: per_image.iter().map(|s| s.dice).sum::<f64>() / n,
        mean_iou: per_image.iter().map(|s| s.iou).sum::<f64>() / n,
        per_image,
    };
    let out = &config.output_dir;
    create_dir(out)?;
    let path = out.join(EVAL_CSV);
    std::fs::write(&path, eval_csv(&summary)).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(summary)
}

pub fn eval_csv(summary: &EvalSummary) -> String {
    let mut s = String::from("name,dice,iou\n");
    for r in &summary.per_image {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.name, r.dice, r.iou));
    }
    s.push_str(&format!("mean,{:.6},{:.6}\n", summary.mean_dice, summary.mean_iou));
    s
}

/// Splits `--section.key=value` overrides from the rest of the arguments.
pub fn split_overrides(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(key, _)| key.contains('.'));
        if is_override {
            overrides.push(a);
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}
