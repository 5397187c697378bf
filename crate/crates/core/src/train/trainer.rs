use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::Checkpoint;
use super::data::{sample_crops, CropBatch, Pair};
use crate::error::{Error, Result};
use crate::loss::{draco_total_loss, LossMode, LossWeights, Quadruple};
use crate::model::{draco_forward, ArchConfig, DracoWeights};
use crate::tensor::{Graph, Var};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub arch: ArchConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    /// Update the contrastive extractor together with the network.
    pub train_extractor: bool,
    /// Fail instead of skipping pairs smaller than the crop.
    pub strict_crops: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 200,
            batch: 16,
            crop: 64,
            seed: DEFAULT_SEED,
            loss_mode: LossMode::Quadruplet,
            arch: ArchConfig::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            train_extractor: true,
            strict_crops: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.crop == 0 || self.crop % 4 != 0 {
            return Err(Error::Config(format!(
                "crop must be a positive multiple of 4, got {}",
                self.crop
            )));
        }
        self.arch.validate()?;
        self.adam().validate()?;
        self.loss_weights.validate()
    }
}

/// Loss values of one step. Terms the mode leaves out are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub mae: Option<f64>,
    pub ssim_loss: Option<f64>,
    pub contrastive: Option<f64>,
    pub total: f64,
    /// Extractor passes the step ran.
    pub extractor_calls: usize,
}

/// Per-epoch means of the step losses; one JSON object per line in the log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub mae: Option<f64>,
    pub ssim_loss: Option<f64>,
    pub contrastive: Option<f64>,
    pub total: f64,
}

#[derive(Default)]
struct EpochAcc {
    n: usize,
    mae: Option<f64>,
    ssim: Option<f64>,
    contrastive: Option<f64>,
    total: f64,
}

impl EpochAcc {
    fn push(&mut self, r: &StepReport) {
        let add = |acc: &mut Option<f64>, v: Option<f64>| {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0.0) + v);
            }
        };
        add(&mut self.mae, r.mae);
        add(&mut self.ssim, r.ssim_loss);
        add(&mut self.contrastive, r.contrastive);
        self.total += r.total;
        self.n += 1;
    }

    fn finish(self, epoch: usize, step: u64) -> EpochLog {
        let n = self.n.max(1) as f64;
        EpochLog {
            epoch,
            step,
            mae: self.mae.map(|v| v / n),
            ssim_loss: self.ssim.map(|v| v / n),
            contrastive: self.contrastive.map(|v| v / n),
            total: self.total / n,
        }
    }
}

pub struct Trainer {
    config: TrainConfig,
    weights: DracoWeights<f32>,
    adam: Adam<f32>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let weights = DracoWeights::init(&config.arch, config.seed)?;
        Ok(Trainer {
            adam: Adam::new(config.adam()),
            config,
            weights,
        })
    }

    /// Resume from a checkpoint; its architecture, seed and step replace the config's.
    pub fn from_checkpoint(mut config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        config.arch = ckpt.arch().clone();
        config.seed = ckpt.seed;
        config.validate()?;
        let mut adam = Adam::new(config.adam());
        adam.step = ckpt.step;
        adam.moments = ckpt.moments;
        Ok(Trainer {
            config,
            weights: ckpt.weights,
            adam,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn weights(&self) -> &DracoWeights<f32> {
        &self.weights
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            weights: self.weights.clone(),
            moments: self.adam.moments.clone(),
            step: self.adam.step,
            seed: self.config.seed,
        }
    }

    /// Crops for the next step. Each step has its own stream of the seeded
    /// generator, so a resumed run draws the same crops.
    pub fn next_batch(&self, pairs: &[Pair]) -> Result<CropBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.adam.step + 1);
        sample_crops(pairs, self.config.crop, self.config.batch, &mut rng, self.config.strict_crops)
    }

    /// Forward, loss, backward and one Adam update on `batch`.
    pub fn train_step(&mut self, batch: &CropBatch) -> Result<StepReport> {
        let train_extractor = self.config.train_extractor;
        let mut g = Graph::<f32>::new();
        let p = self.weights.register(&mut g, |name| {
            train_extractor || !DracoWeights::<f32>::is_extractor(name)
        });
        let hazy = g.constant(batch.hazy.clone());
        let clear = g.constant(batch.clear.clone());
        let out = draco_forward(&mut g, &p, &self.config.arch, hazy)?;
        let q = Quadruple {
            anchor: out.output,
            intermediate: out.intermediate,
            positive: clear,
            negative: hazy,
        };
        let terms = draco_total_loss(
            &mut g,
            &q,
            &p,
            &self.config.loss_weights,
            self.config.loss_mode,
        )?;
        let value = |v: Var| f64::from(g.value(v).data()[0]);
        let report = StepReport {
            step: self.adam.step + 1,
            mae: terms.mae.map(value),
            ssim_loss: terms.ssim.map(value),
            contrastive: terms.contrastive.map(value),
            total: value(terms.total),
            extractor_calls: p.extractor_calls(),
        };
        let finite = |v: Option<f64>| v.is_none_or(f64::is_finite);
        if !(report.total.is_finite()
            && finite(report.mae)
            && finite(report.ssim_loss)
            && finite(report.contrastive))
        {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: total {}, mae {:?}, ssim {:?}, contrastive {:?}",
                report.step, report.total, report.mae, report.ssim_loss, report.contrastive
            )));
        }
        g.backward(terms.total)?;
        self.adam.begin_step();
        for (name, var) in p.iter() {
            if let Some(grad) = g.take_grad(var) {
                let param = self.weights.get_mut(name)?;
                self.adam.update(name, param, &grad)?;
            }
        }
        Ok(report)
    }

    /// Steps in one pass over `pairs` at the configured batch size.
    pub fn steps_per_epoch(&self, pairs: usize) -> u64 {
        pairs.div_ceil(self.config.batch).max(1) as u64
    }

    /// Train for `steps` updates (default: `epochs` passes over the data),
    /// calling `on_epoch` after each epoch and `on_step` after each update.
    pub fn fit(
        &mut self,
        pairs: &[Pair],
        steps: Option<u64>,
        mut on_step: impl FnMut(&StepReport),
        mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let per_epoch = self.steps_per_epoch(pairs.len());
        let total = steps.unwrap_or(self.config.epochs as u64 * per_epoch);
        let mut logs = Vec::new();
        let mut acc = EpochAcc::default();
        for i in 0..total {
            let batch = self.next_batch(pairs)?;
            let r = self.train_step(&batch)?;
            on_step(&r);
            acc.push(&r);
            if (i + 1) % per_epoch == 0 || i + 1 == total {
                let log = std::mem::take(&mut acc).finish(logs.len() + 1, self.adam.step);
                on_epoch(&log)?;
                logs.push(log);
            }
        }
        Ok(logs)
    }
}
