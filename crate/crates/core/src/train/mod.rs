//! MAE training with Adam, plateau learning-rate decay and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, NamedTensor, FORMAT_VERSION, MAGIC};

use serde::{Deserialize, Serialize};

use crate::datapipe::{assemble_batch, train_batches, AugmentConfig, Batch, PatchCatalog};
use crate::error::{Error, Result};
use crate::grids::Split;
use crate::infer::evaluate;
use crate::net::{Mode, Model, Preset, Tensor};
use crate::shadow::ShadowParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once validation MAE has not improved for this many epochs.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
    pub use_shadow_channel: bool,
    pub augment: AugmentConfig,
    /// Save the running checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 5,
            min_lr: 1e-6,
            batch_size: 8,
            max_epochs: 30,
            early_stop_patience: None,
            seed: 0,
            use_shadow_channel: true,
            augment: AugmentConfig::default(),
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let batch_size = match preset {
            Preset::Manchester => 8,
            Preset::Dfc => 2,
            Preset::Reduced => 16,
            Preset::Micro => 32,
        };
        Self {
            batch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr0) {
            return Err(Error::invalid("min_lr must lie in [0, lr0]"));
        }
        if self.batch_size == 0 || self.plateau_patience == 0 {
            return Err(Error::invalid("batch_size and plateau_patience must be positive"));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

fn check_loss_shapes(pred: &Tensor<f32>, target: &Tensor<f32>, mask: &[bool]) -> Result<usize> {
    if pred.shape() != target.shape() || mask.len() != pred.len() {
        return Err(Error::invalid(format!(
            "prediction {:?}, target {:?} and mask of {} do not match",
            pred.shape(),
            target.shape(),
            mask.len()
        )));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyInput("loss over zero valid pixels".into())),
        n => Ok(n),
    }
}

/// Mean absolute error over valid pixels.
pub fn mae_loss(pred: &Tensor<f32>, target: &Tensor<f32>, mask: &[bool]) -> Result<f64> {
    let n = check_loss_shapes(pred, target, mask)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| (f64::from(p) - f64::from(t)).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Loss and its gradient `sign(p - t) / n` on valid pixels (zero elsewhere and at ties).
pub fn mae_loss_grad(pred: &Tensor<f32>, target: &Tensor<f32>, mask: &[bool]) -> Result<(f64, Tensor<f32>)> {
    let loss = mae_loss(pred, target, mask)?;
    let n = mask.iter().filter(|&&m| m).count() as f32;
    let mut grad = Tensor::zeros(pred.shape());
    for (((g, &p), &t), &m) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()).zip(mask) {
        if m && p != t {
            *g = if p > t { 1.0 / n } else { -1.0 / n };
        }
    }
    Ok((loss, grad))
}

/// Adam with bias correction; moments follow the order of [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(model: &Model<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from the accumulated gradients.
    pub fn update(&mut self, model: &mut Model<f32>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - f64::from(self.beta1).powi(t);
        let c2 = 1.0 - f64::from(self.beta2).powi(t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        // eps is scaled so the update equals lr * m_hat / (sqrt(v_hat) + eps)
        let eps_hat = (f64::from(eps) * c2.sqrt()) as f32;
        for (i, (_, p)) in model.params_mut().into_iter().enumerate() {
            if p.grad.len() != p.value.len() {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                p.value[j] -= step * m[j] / (v[j].sqrt() + eps_hat);
            }
        }
    }
}

/// One optimizer step on a batch; returns the pre-update loss.
pub fn train_step(model: &mut Model<f32>, batch: &Batch, adam: &mut Adam, lr: f64) -> Result<f64> {
    if model.mode() != Mode::Train {
        return Err(Error::invalid("train_step needs a model in training mode"));
    }
    model.zero_grad();
    let pred = model.forward_train(&batch.input)?;
    let (loss, grad) = mae_loss_grad(&pred, &batch.target, &batch.mask)?;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(format!("loss became {loss}")));
    }
    model.backward(&grad)?;
    adam.update(model, lr);
    Ok(loss)
}

/// Epoch-level training state machine.
pub struct Trainer {
    model: Model<f32>,
    adam: Adam,
    config: TrainConfig,
    meta: CheckpointMeta,
    best: Checkpoint,
}

impl Trainer {
    pub fn new(mut model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.spec().uses_shadow_channel() != config.use_shadow_channel {
            return Err(Error::invalid(
                "model input channels disagree with use_shadow_channel",
            ));
        }
        model.set_mode(Mode::Train);
        let adam = Adam::new(&model);
        let meta = CheckpointMeta {
            lr: config.lr0,
            seed: config.seed,
            config: Some(config.clone()),
            ..CheckpointMeta::default()
        };
        let best = Checkpoint::capture(&model, None, meta.clone());
        Ok(Self {
            model,
            adam,
            config,
            meta,
            best,
        })
    }

    /// Continues from a running checkpoint; `best` defaults to that checkpoint.
    pub fn resume(last: &Checkpoint, best: Option<Checkpoint>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut model = last.model()?;
        model.set_mode(Mode::Train);
        let adam = last.adam(&model)?.unwrap_or_else(|| Adam::new(&model));
        if last.meta.seed != config.seed {
            return Err(Error::invalid(format!(
                "checkpoint was trained with seed {}, not {}",
                last.meta.seed, config.seed
            )));
        }
        let meta = CheckpointMeta {
            config: Some(config.clone()),
            ..last.meta.clone()
        };
        Ok(Self {
            model,
            adam,
            config,
            best: best.unwrap_or_else(|| last.clone()),
            meta,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn lr(&self) -> f64 {
        self.meta.lr
    }

    pub fn epoch(&self) -> usize {
        self.meta.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.meta.history
    }

    pub fn best(&self) -> &Checkpoint {
        &self.best
    }

    /// Everything needed to resume: weights, statistics, moments and schedule state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, Some(&self.adam), self.meta.clone())
    }

    pub fn finished(&self) -> bool {
        self.meta.epoch >= self.config.max_epochs
            || self
                .config
                .early_stop_patience
                .is_some_and(|p| self.meta.stale_epochs >= p)
    }

    fn check_catalog(&self, catalog: &PatchCatalog) -> Result<()> {
        let spec = self.model.spec();
        if catalog.mode.patch_rgb != spec.input_size || catalog.mode.patch_out != spec.output_size {
            return Err(Error::invalid(format!(
                "catalog patches {}->{} do not fit the {} network {}->{}",
                catalog.mode.patch_rgb, catalog.mode.patch_out, spec.name, spec.input_size, spec.output_size
            )));
        }
        for split in [Split::Train, Split::Val] {
            if catalog.count(split) == 0 {
                return Err(Error::EmptyInput(format!("{split:?} split is empty").to_lowercase()));
            }
        }
        Ok(())
    }

    /// Mean training loss over one shuffled, augmented pass (pixel-weighted).
    pub fn train_epoch(&mut self, catalog: &PatchCatalog, params: &ShadowParams) -> Result<f64> {
        let epoch = self.meta.epoch;
        let (mut sum, mut pixels) = (0.0f64, 0usize);
        for records in train_batches(catalog, self.config.seed, epoch, self.config.batch_size)? {
            let batch = assemble_batch(
                catalog,
                &records,
                Some((&self.config.augment, self.config.seed, epoch)),
                params,
                self.config.use_shadow_channel,
            )?;
            let n = batch.mask.iter().filter(|&&m| m).count();
            if n == 0 {
                continue;
            }
            let loss = train_step(&mut self.model, &batch, &mut self.adam, self.meta.lr)?;
            sum += loss * n as f64;
            pixels += n;
        }
        if !self.model.all_finite() {
            return Err(Error::TrainingDiverged("parameters became non-finite".into()));
        }
        Ok(sum / pixels.max(1) as f64)
    }

    /// Trains one epoch, validates, updates the schedule and the best checkpoint.
    pub fn step_epoch(&mut self, catalog: &PatchCatalog, params: &ShadowParams) -> Result<EpochRecord> {
        self.check_catalog(catalog)?;
        let lr = self.meta.lr;
        let train_mae = self.train_epoch(catalog, params)?;
        let val_mae = evaluate(&self.model, catalog, Split::Val, params)?.mae;
        if !val_mae.is_finite() {
            return Err(Error::TrainingDiverged(format!("validation MAE became {val_mae}")));
        }
        self.meta.epoch += 1;
        let record = EpochRecord {
            epoch: self.meta.epoch,
            train_mae,
            val_mae,
            lr,
        };
        self.meta.history.push(record.clone());
        if self.meta.best_val_mae.is_none_or(|b| val_mae < b) {
            self.meta.best_val_mae = Some(val_mae);
            self.meta.best_epoch = Some(self.meta.epoch);
            self.meta.plateau_wait = 0;
            self.meta.stale_epochs = 0;
            self.best = Checkpoint::capture(&self.model, None, self.meta.clone());
        } else {
            self.meta.plateau_wait += 1;
            self.meta.stale_epochs += 1;
            if self.meta.plateau_wait >= self.config.plateau_patience {
                self.meta.lr = (self.meta.lr * self.config.plateau_factor).max(self.config.min_lr);
                self.meta.plateau_wait = 0;
            }
        }
        Ok(record)
    }

    /// Runs epochs until `max_epochs` or early stopping, calling `on_epoch` after each.
    pub fn run<F>(&mut self, catalog: &PatchCatalog, params: &ShadowParams, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer, &EpochRecord) -> Result<()>,
    {
        self.check_catalog(catalog)?;
        while !self.finished() {
            let rec = self.step_epoch(catalog, params)?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }
}

/// Best-validation checkpoint and per-epoch history of a full run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

pub fn fit(model: Model<f32>, catalog: &PatchCatalog, config: &TrainConfig, params: &ShadowParams) -> Result<FitResult> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(catalog, params, |_, _| Ok(()))?;
    Ok(FitResult {
        best: trainer.best.clone(),
        history: trainer.meta.history.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ArchitectureSpec;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec([1, 1, v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_loss(&t(&[1.0, 2.0]), &t(&[1.0, 2.0]), &[true; 2]).unwrap(), 0.0);
        assert_eq!(mae_loss(&t(&[0.0]), &t(&[3.0]), &[true]).unwrap(), 3.0);
        assert_eq!(mae_loss(&t(&[1.0, 2.0]), &t(&[3.0, 6.0]), &[true; 2]).unwrap(), 3.0);
        assert_eq!(mae_loss(&t(&[1.0, 100.0]), &t(&[3.0, 6.0]), &[true, false]).unwrap(), 2.0);
        assert!(matches!(mae_loss(&t(&[1.0]), &t(&[3.0]), &[false]), Err(Error::EmptyInput(_))));
        assert!(mae_loss(&t(&[1.0]), &t(&[3.0, 1.0]), &[true]).is_err());
    }

    #[test]
    fn mae_gradient_is_sign_over_count() {
        let (_, g) = mae_loss_grad(&t(&[1.0, 5.0, 2.0, 0.0]), &t(&[3.0, 1.0, 2.0, 9.0]), &[true, true, true, false]).unwrap();
        assert_eq!(g.data(), &[-1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut model = Model::build(&ArchitectureSpec::micro(true), 0).unwrap();
        let before: Vec<f32> = model.params()[1].1.value.clone();
        {
            let mut ps = model.params_mut();
            let p = &mut ps[1].1;
            let n = p.len();
            p.grad_mut().copy_from_slice(&vec![2.0; n]);
        }
        let mut adam = Adam::new(&model);
        adam.update(&mut model, 1e-3);
        for (a, b) in model.params()[1].1.value.iter().zip(&before) {
            assert!(((b - a) - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { lr0: 0.0, ..Default::default() },
            TrainConfig { plateau_factor: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(TrainConfig::for_preset(Preset::Dfc).batch_size, 2);
        assert_eq!(TrainConfig::for_preset(Preset::Micro).batch_size, 32);
        let parsed: TrainConfig = serde_json::from_str(r#"{"lr0": 0.001}"#).unwrap();
        assert_eq!(parsed.plateau_patience, 5);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.001}"#).is_err());
    }
}
