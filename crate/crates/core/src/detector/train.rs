use image::GrayImage;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::early_stop::{run_with_early_stopping, EpochRecord, EpochRunner, StopSummary};
use super::score::evaluate_mean_cer;
use super::DetectorError;
use crate::metrics::Transcript;
use crate::pipeline::preprocess::to_tensor;
use crate::pipeline::{augment, compute_targets, resize_pad, AugmentConfig, ImageSource, Manifest, PreprocessSpec, Split};
use crate::recognizer::{Crnn, ImageTensor, ModelConfig, ModelError, TrainConfig, Trainer, TrainingExample};

/// Everything needed to train a recognizer on a manifest. Input dims of
/// `model` are replaced by the preprocessed canvas size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Derived from the training split when absent.
    pub preprocess: Option<PreprocessSpec>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Parameters from the epoch with the lowest validation CER.
    pub model: Crnn,
    /// Epoch at which early stopping ended the run.
    pub t_conv: usize,
    pub best_epoch: usize,
    pub best_val_cer: f64,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
    pub preprocess: PreprocessSpec,
}

/// Resize-pad then align to the model's input size.
pub fn prepare_sample(image: &GrayImage, spec: &PreprocessSpec, model: &ModelConfig) -> Result<ImageTensor, DetectorError> {
    let padded = resize_pad(image, spec)?;
    check_dims(spec, model)?;
    Ok(to_tensor(&padded, model.input_width as u32, model.input_height as u32))
}

fn check_dims(spec: &PreprocessSpec, model: &ModelConfig) -> Result<(), DetectorError> {
    let want = spec.model_dims(model.downsampling() as u32);
    if want != (model.input_width as u32, model.input_height as u32) {
        return Err(DetectorError::Invalid(format!(
            "preprocessing yields {want:?} but the model expects {:?}",
            (model.input_width, model.input_height)
        )));
    }
    Ok(())
}

struct Runner<'a> {
    trainer: Trainer,
    train: Vec<(String, GrayImage, Vec<usize>)>,
    val: Vec<(ImageTensor, Transcript)>,
    augment: &'a AugmentConfig,
    width: u32,
    height: u32,
    best: Option<Crnn>,
}

impl EpochRunner for Runner<'_> {
    type Error = DetectorError;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord, DetectorError> {
        self.trainer.set_epoch(epoch - 1);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(self.trainer.rng());
        let batch_size = self.trainer.config().batch_size;
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (id, padded, labels) = &self.train[i];
                let seed: u64 = self.trainer.rng().gen();
                let image = augment(padded, seed, self.augment);
                batch.push(TrainingExample {
                    id: id.clone(),
                    image: to_tensor(&image, self.width, self.height),
                    labels: labels.clone(),
                });
            }
            let loss = self.trainer.training_step(&batch).map_err(|e| match e {
                e @ ModelError::NonFiniteLoss(_) => DetectorError::Diverged { epoch, source: e },
                e => e.into(),
            })?;
            loss_sum += loss.total;
            batches += 1;
        }
        let val_cer = evaluate_mean_cer(self.trainer.model(), &self.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_cer,
            learning_rate: self.trainer.learning_rate(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val CER {:.4} lr {:.2e}",
            record.train_loss,
            record.val_cer,
            record.learning_rate
        );
        Ok(record)
    }

    fn improved(&mut self, _epoch: usize) {
        self.best = Some(self.trainer.model().clone());
    }
}

/// Trains on the train split, validates on the unaugmented val split after
/// every epoch, and stops once validation CER has not strictly improved for
/// `patience` epochs.
pub fn train_with_early_stopping<S: ImageSource>(
    manifest: &Manifest,
    source: &S,
    setup: &TrainingSetup,
    seed: u64,
) -> Result<TrainingOutcome, DetectorError> {
    let train_samples: Vec<_> = manifest.split(Split::Train).collect();
    let val_samples: Vec<_> = manifest.split(Split::Val).collect();
    if train_samples.is_empty() {
        return Err(DetectorError::EmptySplit(Split::Train));
    }
    if val_samples.is_empty() {
        return Err(DetectorError::EmptySplit(Split::Val));
    }
    let train_images = train_samples
        .iter()
        .map(|s| source.image(s))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = match setup.preprocess {
        Some(spec) => spec,
        None => compute_targets(&train_images.iter().map(|i| i.dimensions()).collect::<Vec<_>>())?,
    };
    let mut model_config = setup.model.clone();
    model_config.alphabet_size = manifest.alphabet.len();
    let (w, h) = spec.model_dims(model_config.downsampling() as u32);
    model_config.input_width = w as usize;
    model_config.input_height = h as usize;

    let mut train = Vec::with_capacity(train_samples.len());
    for (s, img) in train_samples.iter().zip(&train_images) {
        let padded = resize_pad(img, &spec)?;
        let ex = TrainingExample::new(s.id.clone(), ImageTensor::filled(1, 1, 1, 0.0), &s.text, &manifest.alphabet)?;
        train.push((s.id.clone(), padded, ex.labels));
    }
    drop(train_images);
    let mut val = Vec::with_capacity(val_samples.len());
    for s in &val_samples {
        let img = source.image(s)?;
        val.push((prepare_sample(&img, &spec, &model_config)?, s.text.clone()));
    }

    let mut train_config = setup.train.clone();
    train_config.seed = seed;
    let model = Crnn::new(model_config, manifest.alphabet.clone(), seed)?;
    let mut runner = Runner {
        trainer: Trainer::new(model, train_config.clone())?,
        train,
        val,
        augment: &setup.augment,
        width: w,
        height: h,
        best: None,
    };
    let StopSummary {
        stop_epoch,
        best_epoch,
        best_val_cer,
        stopped_early,
        history,
    } = run_with_early_stopping(&mut runner, train_config.max_epochs, train_config.patience)?;
    let best = runner.best.take().unwrap_or_else(|| runner.trainer.into_model());
    Ok(TrainingOutcome {
        model: best,
        t_conv: stop_epoch,
        best_epoch,
        best_val_cer,
        stopped_early,
        history,
        preprocess: spec,
    })
}
