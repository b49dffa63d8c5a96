//! Training, evaluation and reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zian_tensor::checkpoint::{load_checkpoint, restore, save_checkpoint, CheckpointHeader};
use zian_tensor::{adam_step, AdamConfig, AdamState, ParamStore, Precision, Real, Tape, Tensor};

use crate::config::{DataSource, ExperimentConfig};
use crate::data::augment::draw_valid_params;
use crate::data::bilateral::split_bilateral;
use crate::data::manifest::load_manifest;
use crate::data::preprocess::{preprocess, preprocess_augmented, preprocess_chain, Mode, PreprocessConfig, Prepared};
use crate::data::synthetic::generate_set;
use crate::data::Sample;
use crate::error::{Result, ZianError};
use crate::metrics::{avg_l2, distance, sdr_from_errors, DEFAULT_SDR_THRESHOLDS};
use crate::nn::{derive_seed, Ctx};
use crate::zian::{predict, predict_inputs, zian_loss, LossParts, Prediction, ZianModel};

pub const AUGMENT_TRIES: usize = 10;
pub const LOSS_TRACE_HEADER: &str = "step,epoch,lr,total,coarse,roi_sum,fine";

/// One optimizer step of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossParts,
}

impl StepRecord {
    /// Shortest round-trip float formatting, so equal values give equal bytes.
    pub fn csv_line(&self) -> String {
        let fine = self.loss.fine.map(|f| f.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.lr,
            self.loss.total,
            self.loss.coarse,
            self.loss.rois.iter().sum::<f64>(),
            fine
        )
    }
}

pub fn loss_trace_csv(trace: &[StepRecord]) -> String {
    let mut s = String::from(LOSS_TRACE_HEADER);
    s.push('\n');
    for r in trace {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Training and held-out samples in raw pixels.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let d = &cfg.data;
    let (train, test) = match d.source {
        DataSource::Synthetic => (
            generate_set(d.train_seed, d.train_count, &d.synthetic)?,
            generate_set(d.test_seed, d.test_count, &d.synthetic)?,
        ),
        DataSource::Manifest => {
            let load = |p: &Option<PathBuf>| -> Result<Vec<Sample>> {
                let p = p.as_ref().ok_or_else(|| ZianError::Config("manifest path missing".into()))?;
                load_manifest(p)?.load_all()
            };
            (load(&d.train_manifest)?, load(&d.test_manifest)?)
        }
    };
    if d.bilateral {
        Ok((bilateral_halves(&train)?, bilateral_halves(&test)?))
    } else {
        Ok((train, test))
    }
}

/// The half of each image that holds its landmark.
pub fn bilateral_halves(samples: &[Sample]) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| {
            let (l, r) = split_bilateral(s)?;
            Ok(l.into_sample(s.source).or_else(|| r.into_sample(s.source)).expect("landmark lands in one half"))
        })
        .collect()
}

/// A trained model with its parameters and loss log.
#[derive(Debug)]
pub struct Trained<T: Real> {
    pub model: ZianModel,
    pub store: ParamStore<T>,
    pub trace: Vec<StepRecord>,
    pub last_checkpoint: Option<PathBuf>,
}

fn checkpoint_header(cfg: &ExperimentConfig, step: u64) -> CheckpointHeader {
    CheckpointHeader {
        precision: cfg.precision,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        step,
        meta: serde_json::to_value(cfg).expect("config serializes"),
    }
}

/// Draw one training example: augmentation (if enabled) fused with the random crop.
fn prepare_train(cfg: &ExperimentConfig, s: &Sample, epoch: usize, index: usize) -> Result<Prepared> {
    let seed = derive_seed(cfg.seed, &format!("sample/{epoch}/{index}"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if cfg.train.augment {
        let (aug, _) = draw_valid_params(
            &cfg.train.augment_ranges,
            &mut rng,
            s.landmark,
            s.height(),
            s.width(),
            seed,
            AUGMENT_TRIES,
        );
        preprocess_augmented(s, &aug, &cfg.preprocess, &mut rng)
    } else {
        preprocess_chain(s, &cfg.preprocess, Mode::Train, &mut rng)
    }
}

fn stack<T: Real>(items: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let data = items.iter().flat_map(|t| t.data().iter().map(|&v| T::of(v as f64))).collect();
    Ok(Tensor::new(shape, data)?)
}

/// One forward/backward/Adam step. Returns the loss terms.
pub fn train_step<T: Real>(
    model: &ZianModel,
    store: &mut ParamStore<T>,
    adam: &mut AdamState<T>,
    inputs: &Tensor<T>,
    gts: &[(f64, f64)],
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let x = tape.constant(inputs);
    let pass = {
        let mut ctx = Ctx {
            tape: &mut tape,
            binding: &binding,
            store,
            train: true,
        };
        model.forward(&mut ctx, x)?
    };
    let m = &model.config.model;
    let (loss, parts) = zian_loss(&mut tape, &pass, gts, &m.loss, m.delta)?;
    let mut grads = tape.backward(loss)?;
    store.collect_grads(&binding, &mut grads);
    let missing: Vec<_> = store.trainable_ids().filter(|&id| store.get(id).grad.is_none()).collect();
    for id in missing {
        let t = store.get_mut(id);
        let zeros = vec![T::zero(); t.len()];
        t.set_grad(zeros)?;
    }
    adam_step(store, adam)?;
    if store.iter().any(|(_, _, _, t)| t.first_non_finite().is_some()) {
        return Err(ZianError::NonFinite { module: "optimizer" });
    }
    Ok(parts)
}

/// Train on `train_set`. With `out_dir`, writes the loss log and checkpoints as it goes;
/// a non-finite loss aborts with the last good checkpoint left in place.
pub fn train<T: Real>(cfg: &ExperimentConfig, train_set: &[Sample], out_dir: Option<&Path>) -> Result<Trained<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ZianError::Config("training set is empty".into()));
    }
    let zcfg = cfg.zian_config();
    let (model, mut store) = ZianModel::build::<T>(&zcfg, cfg.seed)?;
    let mut adam = AdamState::new(
        &store,
        AdamConfig {
            lr: cfg.train.lr,
            ..AdamConfig::default()
        },
    );
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| ZianError::io(dir, e))?;
            let p = dir.join("loss_trace.csv");
            let mut f = fs::File::create(&p).map_err(|e| ZianError::io(&p, e))?;
            writeln!(f, "{LOSS_TRACE_HEADER}").map_err(|e| ZianError::io(&p, e))?;
            Some((f, p))
        }
        None => None,
    };
    let mut trace = Vec::new();
    let mut last_checkpoint = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let bs = cfg.train.batch_size;
    log::info!(
        "training {} ({} trainable scalars) on {} samples for {} epochs",
        zcfg.ablation().map_or("custom", |a| a.label()),
        store.num_trainable(),
        train_set.len(),
        cfg.train.epochs
    );
    for epoch in 0..cfg.train.epochs {
        let (lr, wd) = cfg.train.schedule_at(epoch);
        adam.config.lr = lr;
        adam.config.weight_decay = wd;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle/{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let prepared = batch
                .iter()
                .map(|&i| prepare_train(cfg, &train_set[i], epoch, i))
                .collect::<Result<Vec<_>>>()?;
            let inputs = stack::<T>(&prepared.iter().map(|p| &p.input).collect::<Vec<_>>())?;
            let gts: Vec<_> = prepared.iter().map(|p| p.landmark).collect();
            let step = adam.step + 1;
            let parts = match train_step(&model, &mut store, &mut adam, &inputs, &gts) {
                Ok(p) => p,
                Err(ZianError::NonFinite { module }) => {
                    log::error!("non-finite values from {module} at step {step}");
                    return Err(ZianError::Diverged {
                        step,
                        checkpoint: last_checkpoint,
                    });
                }
                Err(e) => return Err(e),
            };
            epoch_loss += parts.total;
            let rec = StepRecord {
                step,
                epoch,
                lr,
                loss: parts,
            };
            if let Some((f, p)) = log_file.as_mut() {
                writeln!(f, "{}", rec.csv_line()).map_err(|e| ZianError::io(&*p, e))?;
            }
            trace.push(rec);
        }
        let nb = order.len().div_ceil(bs);
        log::info!("epoch {epoch}: mean loss {:.6} (lr {lr})", epoch_loss / nb as f64);
        if let Some(dir) = out_dir {
            if cfg.checkpoint.every_epoch || epoch + 1 == cfg.train.epochs {
                let p = dir.join(format!("epoch_{epoch:03}.ckpt"));
                save_checkpoint(&p, &checkpoint_header(cfg, adam.step), &store)?;
                let last = dir.join("last.ckpt");
                fs::copy(&p, &last).map_err(|e| ZianError::io(&last, e))?;
                last_checkpoint = Some(last);
            }
        }
    }
    Ok(Trained {
        model,
        store,
        trace,
        last_checkpoint,
    })
}

/// Per-sample evaluation row, in raw pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub gt: (f64, f64),
    pub pred: (f64, f64),
    pub coarse_pred: (f64, f64),
    pub error: f64,
    pub coarse_error: f64,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub method: String,
    pub num_samples: usize,
    pub avg_l2: f64,
    /// Threshold in pixels → percentage.
    pub sdr: BTreeMap<String, f64>,
    pub coarse_avg_l2: f64,
    /// AVG L2 of always predicting the image center.
    pub center_baseline_avg_l2: f64,
    pub fallbacks: usize,
    pub samples: Vec<SampleResult>,
}

impl EvalReport {
    pub fn sdr_at(&self, threshold: f64) -> Option<f64> {
        self.sdr.get(&threshold.to_string()).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        format_table(&[(self.method.clone(), self)])
    }
}

/// Plain-text table with AVG L2 and SDR columns, one row per method.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>9} {:>9} {:>9} {:>9} {:>11}",
        "Method", "AVG L2", "SDR 5px", "SDR 10px", "SDR 20px", "coarse L2"
    );
    for (name, r) in rows {
        let at = |t: f64| r.sdr_at(t).map_or("-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            s,
            "{:<16} {:>9.3} {:>9} {:>9} {:>9} {:>11.3}",
            name,
            r.avg_l2,
            at(5.0),
            at(10.0),
            at(20.0),
            r.coarse_avg_l2
        );
    }
    s
}

/// Image-center prediction for every sample.
pub fn center_baseline(samples: &[Sample]) -> Result<f64> {
    let preds: Vec<_> = samples
        .iter()
        .map(|s| ((s.width() as f64 - 1.0) / 2.0, (s.height() as f64 - 1.0) / 2.0))
        .collect();
    let gts: Vec<_> = samples.iter().map(|s| s.landmark).collect();
    avg_l2(&preds, &gts)
}

/// Eval-mode predictions in raw pixels, in sample order.
pub fn predict_samples<T: Real>(
    model: &ZianModel,
    store: &mut ParamStore<T>,
    samples: &[Sample],
    pre: &PreprocessConfig,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let inputs = chunk
            .iter()
            .map(|s| preprocess(&s.image, pre, None).map(|(x, f)| (x.cast::<T>(), f)))
            .collect::<Result<Vec<_>>>()?;
        out.extend(predict_inputs(model, store, &inputs)?);
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    model: &ZianModel,
    store: &mut ParamStore<T>,
    samples: &[Sample],
    pre: &PreprocessConfig,
    batch_size: usize,
    config_hash: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(ZianError::Invalid("cannot evaluate on an empty set".into()));
    }
    let preds = predict_samples(model, store, samples, pre, batch_size)?;
    let rows: Vec<SampleResult> = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| SampleResult {
            id: s.id.clone(),
            gt: s.landmark,
            pred: (p.u, p.v),
            coarse_pred: (p.coarse_u, p.coarse_v),
            error: distance((p.u, p.v), s.landmark),
            coarse_error: distance((p.coarse_u, p.coarse_v), s.landmark),
            fell_back: p.fell_back,
        })
        .collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let n = rows.len() as f64;
    let sdr = DEFAULT_SDR_THRESHOLDS
        .iter()
        .map(|&t| (t.to_string(), sdr_from_errors(&errors, t)))
        .collect();
    Ok(EvalReport {
        config_hash: config_hash.to_string(),
        method: model.config.ablation().map_or("custom", |a| a.label()).to_string(),
        num_samples: rows.len(),
        avg_l2: errors.iter().sum::<f64>() / n,
        sdr,
        coarse_avg_l2: rows.iter().map(|r| r.coarse_error).sum::<f64>() / n,
        center_baseline_avg_l2: center_baseline(samples)?,
        fallbacks: rows.iter().filter(|r| r.fell_back).count(),
        samples: rows,
    })
}

/// What [`run_experiment`] leaves behind.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub trace: Vec<StepRecord>,
    pub checkpoint: Option<PathBuf>,
    /// Bitwise parameter snapshot after training.
    pub fingerprint: Vec<u64>,
}

const EVAL_BATCH: usize = 16;

fn run_typed<T: Real>(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let (train_set, test_set) = load_datasets(cfg)?;
    let Trained {
        model,
        mut store,
        trace,
        last_checkpoint,
    } = train::<T>(cfg, &train_set, out_dir)?;
    let report = evaluate(&model, &mut store, &test_set, &cfg.preprocess, EVAL_BATCH, &cfg.hash())?;
    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| ZianError::io(&p, e))
        };
        write("report.json", report.to_json())?;
        write("report.txt", report.table())?;
        write("config.toml", cfg.to_toml())?;
    }
    Ok(ExperimentOutcome {
        report,
        trace,
        checkpoint: last_checkpoint,
        fingerprint: store.fingerprint(),
    })
}

/// Train, evaluate on the held-out split and write everything under `cfg.checkpoint.dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_in(cfg, Some(&cfg.checkpoint.dir))
}

/// As [`run_experiment`], writing under `out_dir` (or nowhere).
pub fn run_experiment_in(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, out_dir),
        Precision::F64 => run_typed::<f64>(cfg, out_dir),
    }
}

/// Rebuild a model from a checkpoint written by [`train`].
pub fn load_trained<T: Real>(path: impl AsRef<Path>) -> Result<(ExperimentConfig, ZianModel, ParamStore<T>)> {
    let (header, entries) = load_checkpoint(path.as_ref())?;
    let cfg: ExperimentConfig = serde_json::from_value(header.meta.clone())
        .map_err(|e| ZianError::Config(format!("checkpoint carries no usable configuration: {e}")))?;
    if cfg.hash() != header.config_hash {
        return Err(ZianError::Config("checkpoint configuration does not match its hash".into()));
    }
    let (model, mut store) = ZianModel::build::<T>(&cfg.zian_config(), cfg.seed)?;
    restore(&mut store, &entries)?;
    Ok((cfg, model, store))
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    Ok(load_checkpoint(path)?.0.precision)
}

fn evaluate_typed<T: Real>(cfg: &ExperimentConfig, checkpoint: &Path, samples: &[Sample]) -> Result<EvalReport> {
    let (trained_cfg, model, mut store) = load_trained::<T>(checkpoint)?;
    if trained_cfg.zian_config() != cfg.zian_config() {
        return Err(ZianError::Config(format!(
            "{} was trained with a different model configuration",
            checkpoint.display()
        )));
    }
    evaluate(&model, &mut store, samples, &cfg.preprocess, EVAL_BATCH, &trained_cfg.hash())
}

/// Evaluate a saved model on `samples`, preprocessed as `cfg` describes. The model
/// section of `cfg` must match the one the checkpoint was trained with.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: impl AsRef<Path>, samples: &[Sample]) -> Result<EvalReport> {
    let checkpoint = checkpoint.as_ref();
    let samples = if cfg.data.bilateral {
        bilateral_halves(samples)?
    } else {
        samples.to_vec()
    };
    match checkpoint_precision(checkpoint)? {
        Precision::F32 => evaluate_typed::<f32>(cfg, checkpoint, &samples),
        Precision::F64 => evaluate_typed::<f64>(cfg, checkpoint, &samples),
    }
}

fn infer_typed<T: Real>(checkpoint: &Path, raw: &Tensor<f32>) -> Result<(ExperimentConfig, Prediction)> {
    let (cfg, model, mut store) = load_trained::<T>(checkpoint)?;
    let pred = predict(&model, &mut store, raw, &cfg.preprocess)?;
    Ok((cfg, pred))
}

/// Predict the landmark of one raw image with a saved model, using the
/// preprocessing it was trained with.
pub fn infer_checkpoint(checkpoint: impl AsRef<Path>, raw: &Tensor<f32>) -> Result<(ExperimentConfig, Prediction)> {
    let checkpoint = checkpoint.as_ref();
    match checkpoint_precision(checkpoint)? {
        Precision::F32 => infer_typed::<f32>(checkpoint, raw),
        Precision::F64 => infer_typed::<f64>(checkpoint, raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;
    use crate::backbone::BackboneConfig;
    use crate::data::preprocess::PreprocessConfig;
    use crate::data::synthetic::SyntheticConfig;
    use crate::zian::{Ablation, RoiConfig};

    pub(crate) fn tiny_experiment() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: 3,
            ablation: Some(Ablation::Full),
            ..ExperimentConfig::default()
        };
        cfg.train.epochs = 2;
        cfg.train.batch_size = 2;
        cfg.train.lr_drop_epoch = Some(1);
        cfg.data.train_count = 4;
        cfg.data.test_count = 3;
        cfg.data.synthetic = SyntheticConfig {
            side: 80,
            ..SyntheticConfig::default()
        };
        cfg.preprocess = PreprocessConfig {
            resize_side: 72,
            center_crop_side: 68,
            crop_side: 64,
            coarse_factor: 4,
        };
        cfg.backbone = BackboneConfig {
            channels: vec![2, 3, 3],
            num_stages: 3,
            feature_channels: 2,
            output_stride: 4,
            in_channels: 3,
        };
        cfg.attention = AttentionConfig {
            enable_co_attention: true,
            enable_self_attention: true,
            m: 4,
            d: 8,
            heads: 2,
        };
        cfg.model.input_side = 64;
        cfg.model.roi = RoiConfig {
            scales: vec![1.0, 2.0],
            base_side: 16,
            fine_input_side: 16,
        };
        cfg
    }

    #[test]
    fn tiny_run_trains_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment();
        let out = run_experiment_in(&cfg, Some(dir.path())).unwrap();
        assert_eq!(out.trace.len(), 4);
        assert_eq!(out.trace[2].lr, cfg.train.lr * 0.1);
        let r = &out.report;
        assert_eq!(r.num_samples, 3);
        assert!(r.sdr_at(5.0).unwrap() <= r.sdr_at(10.0).unwrap());
        assert!(r.sdr_at(10.0).unwrap() <= r.sdr_at(20.0).unwrap());
        assert!(dir.path().join("epoch_000.ckpt").exists());
        assert!(dir.path().join("report.json").exists());
        let trace = fs::read_to_string(dir.path().join("loss_trace.csv")).unwrap();
        assert_eq!(trace, loss_trace_csv(&out.trace));
        let back: EvalReport = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(&back, r);
    }

    #[test]
    fn checkpoint_reloads_to_the_same_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_experiment();
        let (train_set, test_set) = load_datasets(&cfg).unwrap();
        let mut t = train::<f32>(&cfg, &train_set, Some(dir.path())).unwrap();
        let a = predict_samples(&t.model, &mut t.store, &test_set, &cfg.preprocess, 2).unwrap();
        let (cfg2, model, mut store) = load_trained::<f32>(t.last_checkpoint.unwrap()).unwrap();
        assert_eq!(cfg2, cfg);
        let b = predict_samples(&model, &mut store, &test_set, &cfg.preprocess, 2).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!((p.u, p.v), (q.u, q.v));
        }
    }

    #[test]
    fn table_has_metric_columns() {
        let r = EvalReport {
            config_hash: "h".into(),
            method: "full".into(),
            num_samples: 1,
            avg_l2: 1.5,
            sdr: DEFAULT_SDR_THRESHOLDS.iter().map(|t| (t.to_string(), 100.0)).collect(),
            coarse_avg_l2: 2.0,
            center_baseline_avg_l2: 9.0,
            fallbacks: 0,
            samples: Vec::new(),
        };
        let t = r.table();
        for col in ["AVG L2", "SDR 5px", "SDR 10px", "SDR 20px"] {
            assert!(t.contains(col));
        }
        assert!(t.lines().nth(1).unwrap().starts_with("full"));
    }

    #[test]
    fn bilateral_keeps_the_landmark_half() {
        let cfg = SyntheticConfig {
            side: 64,
            ..SyntheticConfig::default()
        };
        let samples = generate_set(0, 10, &cfg).unwrap();
        let halves = bilateral_halves(&samples).unwrap();
        for (s, h) in samples.iter().zip(&halves) {
            assert_eq!(h.width(), 32);
            assert!(h.landmark_inside());
            let expect_u = if s.landmark.0 <= 31.5 { s.landmark.0 } else { 63.0 - s.landmark.0 };
            assert_eq!(h.landmark.0, expect_u);
        }
    }
}
