use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngDigest};
use super::config::TrainConfig;
use crate::data::{fit_normalize, window::window_len, NormalizationStats, SeriesFrame, WindowSample};
use crate::error::{Error, Result};
use crate::model::{build_mask_plan, GenAdModel, ModelConfig};
use crate::numerics::{AdamConfig, AdamState};

/// Mean training loss over the `log_every` steps ending at `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub losses: Vec<LossRecord>,
}

struct Entity {
    frame: SeriesFrame,
    /// Training windows lie inside `[0, fit_end)`; validation targets after it.
    fit_end: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Entity {
    fn next_start(&mut self, t_e: usize, rng: &mut ChaCha8Rng) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..=self.fit_end - window_len(t_e)).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Windows whose target segment lies inside the validation tail, at
    /// stride `t_e` plus one aligned to the series end.
    fn validation_windows(&self, t_e: usize) -> Result<Vec<WindowSample>> {
        let len = self.frame.len();
        let mut targets: Vec<usize> = (self.fit_end..).step_by(t_e).take_while(|p| p + t_e <= len).collect();
        if len - self.fit_end >= t_e && targets.last() != Some(&(len - t_e)) {
            targets.push(len - t_e);
        }
        targets
            .into_iter()
            .filter(|&p| p >= window_len(t_e) - t_e)
            .map(|p| WindowSample::from_frame(&self.frame, p + t_e - window_len(t_e), t_e))
            .collect()
    }
}

/// Owns a model and its optimizer over a set of normalized entities.
pub struct Trainer {
    model: GenAdModel,
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    entities: Vec<Entity>,
    step: u64,
    base_step: u64,
    pending: (f64, usize),
    losses: Vec<LossRecord>,
    stats: Option<NormalizationStats>,
    train_len: Option<usize>,
}

impl Trainer {
    /// `frames` must already be normalized and share the model's metric count.
    /// `config.steps` may be 0 here.
    pub fn new(model: GenAdModel, frames: Vec<SeriesFrame>, config: TrainConfig) -> Result<Self> {
        TrainConfig { steps: config.steps.max(1), ..config.clone() }.validate()?;
        let Some(first) = frames.first() else {
            return Err(Error::contract("training needs at least one entity"));
        };
        let names = first.metric_names().to_vec();
        let t_e = model.config().t_e;
        let mut entities = Vec::with_capacity(frames.len());
        for (k, frame) in frames.into_iter().enumerate() {
            if frame.n_metrics() != model.config().n_metrics || frame.metric_names() != names {
                return Err(Error::contract(format!(
                    "entity {k} has {} metrics; every entity must share the model's {} metrics in the same order",
                    frame.n_metrics(),
                    model.config().n_metrics
                )));
            }
            let fit_end = config.split(frame.len());
            if fit_end < window_len(t_e) {
                return Err(Error::Data(format!(
                    "series too short: entity {k} has {} training points after the validation split, need at least {}",
                    fit_end,
                    window_len(t_e)
                )));
            }
            entities.push(Entity { frame, fit_end, order: vec![], cursor: 0 });
        }
        let adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, model.params());
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            adam,
            entities,
            step: 0,
            base_step: 0,
            pending: (0.0, 0),
            losses: vec![],
            stats: None,
            train_len: None,
        })
    }

    pub fn model(&self) -> &GenAdModel {
        &self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn losses(&self) -> &[LossRecord] {
        &self.losses
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let t_e = self.model.config().t_e;
        let e = self.rng.random_range(0..self.entities.len());
        let mut windows = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let entity = &mut self.entities[e];
            let start = entity.next_start(t_e, &mut self.rng);
            windows.push(WindowSample::from_frame(&entity.frame, start, t_e)?);
        }
        let (n, ratio) = (self.model.config().n_metrics, self.model.config().mask_ratio);
        let plans = (0..windows.len()).map(|_| build_mask_plan(n, ratio, &mut self.rng)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&WindowSample> = windows.iter().collect();
        let batch = self.model.training_batch(&refs, &plans)?;
        let (loss, grads) = self.model.loss_and_grads(&batch, Some(&mut self.rng))?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite loss or gradient at step {}", self.step + 1)));
        }
        let lr = self.config.lr_at(self.step);
        self.adam.step_with_lr(self.model.params_mut(), &grads, lr)?;
        self.step += 1;
        self.pending.0 += loss;
        self.pending.1 += 1;
        if self.step.is_multiple_of(self.config.log_every as u64) {
            self.losses.push(LossRecord { step: self.step, loss: self.pending.0 / self.pending.1 as f64 });
            self.pending = (0.0, 0);
        }
        Ok(loss)
    }

    /// Steps until `config.steps` have been taken.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.steps as u64 {
            self.step()?;
        }
        Ok(())
    }

    /// Mean reconstruction loss over every entity's validation tail; `None`
    /// when no tail is long enough for a target segment.
    pub fn validation_loss(&self) -> Result<Option<f64>> {
        let t_e = self.model.config().t_e;
        let mut windows = Vec::new();
        for e in &self.entities {
            windows.extend(e.validation_windows(t_e)?);
        }
        if windows.is_empty() {
            return Ok(None);
        }
        self.model.reconstruction_loss(&windows).map(Some)
    }

    /// Step counter reported in checkpoints starts at `step` (fine-tuning continues the base's count).
    pub fn set_base_step(&mut self, step: u64) {
        self.base_step = step;
    }

    pub fn into_run(self) -> TrainRun {
        TrainRun { checkpoint: self.checkpoint(), losses: self.losses }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            stats: self.stats.clone(),
            step: self.base_step + self.step,
            rng: RngDigest {
                seed: self.config.seed,
                word_pos: u64::try_from(self.rng.get_word_pos()).unwrap_or(u64::MAX),
            },
            train_len: self.train_len,
        }
    }
}

/// Trains a fresh model across a fleet, each entity normalized on its own range.
pub fn pretrain(fleet: &[SeriesFrame], config: &TrainConfig, model_config: &ModelConfig) -> Result<TrainRun> {
    let mut trainer = fleet_trainer(fleet, config, model_config)?;
    trainer.run()?;
    Ok(trainer.into_run())
}

/// An unstarted [`pretrain`] run, for callers that step it themselves.
pub fn fleet_trainer(fleet: &[SeriesFrame], config: &TrainConfig, model_config: &ModelConfig) -> Result<Trainer> {
    config.validate()?;
    if let Some(bad) = fleet.iter().find(|f| f.n_metrics() != model_config.n_metrics) {
        return Err(Error::contract(format!(
            "heterogeneous fleet: an entity has {} metrics, the model expects {}",
            bad.n_metrics(),
            model_config.n_metrics
        )));
    }
    let frames = fleet.iter().map(|f| fit_normalize(f, 0..f.len()).map(|(n, _)| n)).collect::<Result<Vec<_>>>()?;
    Trainer::new(GenAdModel::new(model_config.clone())?, frames, config.clone())
}

/// Builds a trainer for one entity, fitting normalization on the whole of `frame`.
pub fn entity_trainer(model: GenAdModel, frame: &SeriesFrame, config: &TrainConfig) -> Result<Trainer> {
    let t_e = model.config().t_e;
    if frame.len() < window_len(t_e) {
        return Err(Error::Data(format!(
            "series too short: {} points, need at least {}",
            frame.len(),
            window_len(t_e)
        )));
    }
    if frame.n_metrics() != model.config().n_metrics {
        return Err(Error::shape(format!(
            "frame has {} metrics, model expects {}",
            frame.n_metrics(),
            model.config().n_metrics
        )));
    }
    let (normalized, stats) = fit_normalize(frame, 0..frame.len())?;
    let mut trainer = Trainer::new(model, vec![normalized], config.clone())?;
    trainer.stats = Some(stats);
    trainer.train_len = Some(frame.len());
    Ok(trainer)
}

/// Warm-starts from `base` with a fresh optimizer. `frame` is the entity's
/// training split; zero steps returns the base weights unchanged.
pub fn finetune(base: &Checkpoint, frame: &SeriesFrame, config: &TrainConfig) -> Result<TrainRun> {
    let mut trainer = entity_trainer(base.model.clone(), frame, config)?;
    trainer.set_base_step(base.step);
    trainer.run()?;
    Ok(trainer.into_run())
}

/// Single-entity training from a freshly initialized model.
pub fn train_scratch(frame: &SeriesFrame, config: &TrainConfig, model_config: &ModelConfig) -> Result<TrainRun> {
    config.validate()?;
    let mut trainer = entity_trainer(GenAdModel::new(model_config.clone())?, frame, config)?;
    trainer.run()?;
    Ok(trainer.into_run())
}
