//! SGD training with polynomial decay, real/synthetic batch mixing, two phases and resumable
//! checkpoints.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, sgd_update, OptimizerState};
pub use trainer::{
    network_input, seg_bce_logits, train, train_step, RunOptions, StepRecord, TrainData, METRICS_FILE,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_seed, AugmentPolicy, SampleTuple, BLUE};
use crate::error::{config, Error, Result};
use crate::losses::LossSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Hand-segmentation network only.
    SegPretrain,
    /// Both networks; the occlusion branch is fed ground-truth hand masks.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr0: f64,
    pub poly_power: f64,
    pub epochs: u64,
    /// `(real, synthetic)` slot odds.
    pub real_synth_ratio: (u32, u32),
    pub seed: u64,
    pub phase: Phase,
    /// Overrides `epochs · ⌈D / batch⌉` as the total iteration count.
    pub iterations: Option<u64>,
    /// Write a checkpoint every this many iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub clip_norm: Option<f64>,
    pub augment: AugmentPolicy,
    /// Loss weights; the iteration counters inside are driven by the trainer.
    pub loss: LossSchedule,
    pub tint: [f32; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr0: 1e-2,
            poly_power: 0.9,
            epochs: 50,
            real_synth_ratio: (1, 8),
            seed: 0,
            phase: Phase::Joint,
            iterations: None,
            checkpoint_every: 0,
            clip_norm: None,
            augment: AugmentPolicy::default(),
            loss: LossSchedule::default(),
            tint: BLUE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        if self.real_synth_ratio == (0, 0) {
            return Err(config("real_synth_ratio must have a positive component"));
        }
        let reals = [self.momentum, self.weight_decay, self.lr0, self.poly_power];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(config("momentum, weight_decay, lr0 and poly_power must be finite and non-negative"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(config("clip_norm must be positive"));
            }
        }
        if self.iterations == Some(0) || (self.iterations.is_none() && self.epochs == 0) {
            return Err(config("training needs at least one iteration"));
        }
        LossSchedule {
            total_iterations: 1,
            iteration: 0,
            ..self.loss.clone()
        }
        .validate()
    }

    /// `N = epochs · ⌈D / batch⌉` unless overridden.
    pub fn total_iterations(&self, dataset_len: usize) -> u64 {
        self.iterations
            .unwrap_or(self.epochs * dataset_len.div_ceil(self.batch_size) as u64)
    }

    pub fn real_fraction(&self) -> f64 {
        let (r, s) = self.real_synth_ratio;
        r as f64 / (r + s) as f64
    }
}

/// `lr0 · (1 − j/N)^power`.
pub fn poly_lr(j: u64, total: u64, lr0: f64, power: f64) -> Result<f64> {
    if total == 0 {
        return Err(config("total iteration count N must be positive"));
    }
    if j > total {
        return Err(crate::error::contract(format!("iteration {j} beyond total {total}")));
    }
    Ok(lr0 * (1.0 - j as f64 / total as f64).powf(power))
}

/// Index of the `slot`-th draw from a pool of `len`: consecutive passes over the pool, each
/// in a fresh seeded order.
fn pool_index(len: usize, slot: u64, seed: u64, salt: u64) -> usize {
    let pass = slot / len as u64;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(seed ^ salt, pass)));
    order[(slot % len as u64) as usize]
}

const REAL_SALT: u64 = 0x5245_414c;
const SYNTH_SALT: u64 = 0x5359_4e54;
const SLOT_SALT: u64 = 0x534c_4f54;

/// Batch for iteration `j`: each slot is real with probability `r/(r+s)`, else synthetic.
/// Within a pool, global slot numbers walk through seeded permutations, so the batch is a
/// pure function of `(seed, j)`.
pub fn make_batch<'a>(
    real_pool: &'a [SampleTuple],
    synth_pool: &'a [SampleTuple],
    config: &TrainConfig,
    j: u64,
) -> Result<Vec<&'a SampleTuple>> {
    if real_pool.is_empty() && synth_pool.is_empty() {
        return Err(Error::EmptyDataset("both training pools are empty".into()));
    }
    let p_real = if real_pool.is_empty() {
        0.0
    } else if synth_pool.is_empty() {
        1.0
    } else {
        config.real_fraction()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed ^ SLOT_SALT, j));
    let b = config.batch_size as u64;
    Ok((0..b)
        .map(|k| {
            let slot = j * b + k;
            if rng.random_bool(p_real) {
                &real_pool[pool_index(real_pool.len(), slot, config.seed, REAL_SALT)]
            } else {
                &synth_pool[pool_index(synth_pool.len(), slot, config.seed, SYNTH_SALT)]
            }
        })
        .collect())
}
