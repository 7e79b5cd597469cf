use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, preprocess_pair, sample_seed, ForegroundMask, NetworkInput, SampleTuple};
use crate::error::{config as config_err, contract, Error, Result};
use crate::losses::{overall_loss_maps, ClassMap, LossBreakdown, LossSchedule};
use crate::model::{init_params, sigmoid, NetworkConfig, Networks};
use crate::nn::{Gradients, Graph, ParameterSet, Tensor};

use super::checkpoint::Checkpoint;
use super::optim::{clip_global_norm, sgd_update, OptimizerState};
use super::{make_batch, poly_lr, Phase, TrainConfig};

pub const METRICS_FILE: &str = "metrics.csv";
const AUG_SALT: u64 = 0x4155_4730;
const INIT_SALT: u64 = 0x494e_4954;

/// One optimizer step as logged to the metrics file. `breakdown` is empty during
/// segmentation pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Iterations completed after this step.
    pub iteration: u64,
    pub lr: f64,
    pub breakdown: LossBreakdown,
    pub l_seg: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub synthetic: Vec<SampleTuple>,
    pub real: Vec<SampleTuple>,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.synthetic.len() + self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub network: NetworkConfig,
    /// Where metrics and checkpoints go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Pre-trained segmentation weights, required to start a joint run.
    pub seg_checkpoint: Option<Checkpoint>,
    /// Stop once this many iterations are done (simulated interruption).
    pub stop_after: Option<u64>,
}

/// Occlusion network input for a sample; the hand mask is the ground truth one.
pub fn network_input(sample: &SampleTuple, tint: [f32; 3]) -> Result<NetworkInput> {
    preprocess_pair(sample, tint)
}

/// Mean binary cross-entropy of `1×H×W` logits against a mask, with its gradient.
pub fn seg_bce_logits(logits: &Tensor, target: &ForegroundMask) -> Result<(f64, Tensor)> {
    let (c, h, w) = logits.shape();
    if c != 1 || !target.same_shape(h, w) {
        return Err(contract("segmentation logits and mask differ in shape"));
    }
    let n = (h * w) as f64;
    let mut grad = Tensor::zeros(1, h, w);
    let mut total = 0.0f64;
    for (i, (&z, g)) in logits.data().iter().zip(grad.data_mut()).enumerate() {
        let y = target.at(i) as u8 as f64;
        let zd = z as f64;
        total += zd.max(0.0) - zd * y + (-zd.abs()).exp().ln_1p();
        *g = ((sigmoid(z) as f64 - y) / n) as f32;
    }
    Ok((total / n, grad))
}

struct SampleOutcome {
    breakdown: Option<LossBreakdown>,
    l_seg: f64,
    grads: Gradients,
}

fn sample_gradients(
    nets: &Networks,
    params: &ParameterSet,
    sample: &SampleTuple,
    schedule: &LossSchedule,
    config: &TrainConfig,
) -> Result<SampleOutcome> {
    let mut g = Graph::new(params);
    let image = g.input(sample.hand_image.to_tensor());
    let seg_logits = nets.seg.forward(&mut g, image)?;
    let (l_seg, seg_grad) = seg_bce_logits(g.value(seg_logits), &sample.hand_fg)?;
    let mut seeds_owned = vec![(seg_logits, seg_grad)];
    let mut breakdown = None;
    if config.phase == Phase::Joint {
        let input = g.input(network_input(sample, config.tint)?);
        let vars = nets.occ.forward(&mut g, input)?;
        let aux: Vec<ClassMap> = vars.aux.iter().map(|&v| ClassMap::from_tensor(g.value(v))).collect();
        let fin = ClassMap::from_tensor(g.value(vars.final_logits));
        let (b, grad) = overall_loss_maps(&aux, &fin, &sample.gt, &sample.overlap(), schedule)?;
        for (&v, gm) in vars.aux.iter().zip(&grad.aux) {
            seeds_owned.push((v, gm.to_tensor()));
        }
        seeds_owned.push((vars.final_logits, grad.final_logits.to_tensor()));
        breakdown = Some(b);
    }
    let seeds: Vec<_> = seeds_owned.iter().map(|(v, t)| (*v, t)).collect();
    Ok(SampleOutcome {
        breakdown,
        l_seg,
        grads: g.backward(&seeds),
    })
}

fn mean_breakdown(parts: &[LossBreakdown], schedule: &LossSchedule) -> LossBreakdown {
    let n = parts.len() as f64;
    let heads = parts[0].l_ce_aux.len();
    let aux = (0..heads)
        .map(|k| parts.iter().map(|p| p.l_ce_aux[k]).sum::<f64>() / n)
        .collect();
    let l_p = parts.iter().map(|p| p.l_p).sum::<f64>() / n;
    let l_s = parts.iter().map(|p| p.l_s).sum::<f64>() / n;
    LossBreakdown::combine(aux, l_p, l_s, schedule)
}

/// One SGD step on `batch` at iteration `state.iteration` of `schedule.total_iterations`.
///
/// The learning rate uses the pre-step count `j`; the progressive CE weight uses `j + 1`, so
/// the last step of a run trains with `j/N = 1`. Loss terms and gradients are batch means.
pub fn train_step(
    nets: &Networks,
    params: &mut ParameterSet,
    batch: &[&SampleTuple],
    schedule: &LossSchedule,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<StepRecord> {
    let j = state.iteration;
    let total = schedule.total_iterations;
    if j >= total {
        return Err(contract(format!("iteration {j} is not below the total {total}")));
    }
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let lr = poly_lr(j, total, config.lr0, config.poly_power)?;
    let step_schedule = schedule.at(j + 1);
    let b = batch.len() as u64;

    let shared: &ParameterSet = params;
    let outcomes: Vec<SampleOutcome> = batch
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed ^ AUG_SALT, j * b + k as u64));
            let aug = augment(s, &mut rng, &config.augment);
            sample_gradients(nets, shared, &aug, &step_schedule, config)
        })
        .collect::<Result<_>>()?;

    // Fixed summation order keeps the step independent of thread scheduling.
    let mut grads = Gradients::zeros_like(params);
    for o in &outcomes {
        grads.add_assign(&o.grads);
    }
    grads.scale(1.0 / b as f32);

    let l_seg = outcomes.iter().map(|o| o.l_seg).sum::<f64>() / b as f64;
    let parts: Vec<LossBreakdown> = outcomes.iter().filter_map(|o| o.breakdown.clone()).collect();
    let breakdown = if parts.is_empty() {
        LossBreakdown::default()
    } else {
        mean_breakdown(&parts, &step_schedule)
    };

    let mut bad = breakdown.non_finite_terms();
    if !l_seg.is_finite() {
        bad.push("l_seg".into());
    }
    if let Some(term) = bad.into_iter().next() {
        return Err(Error::NonFiniteLoss { term, iteration: j });
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "gradient".into(),
            iteration: j,
        });
    }
    if let Some(max_norm) = config.clip_norm {
        clip_global_norm(&mut grads, max_norm);
    }

    let seg_only = config.phase == Phase::SegPretrain;
    sgd_update(params, &grads, state, lr, config.momentum, config.weight_decay, |name| {
        !seg_only || name.starts_with("seg.")
    });
    state.iteration = j + 1;
    Ok(StepRecord {
        iteration: j + 1,
        lr,
        breakdown,
        l_seg,
    })
}

struct Metrics {
    out: BufWriter<File>,
    path: PathBuf,
    heads: usize,
}

impl Metrics {
    fn create(dir: &Path, heads: usize, history: &[StepRecord]) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut m = Metrics {
            out: BufWriter::new(file),
            path,
            heads,
        };
        let mut header = vec!["j".to_string(), "lr".into()];
        header.extend((1..=heads).map(|k| format!("l_ce_{k}")));
        header.extend(["l_p", "l_s", "total", "l_seg"].map(String::from));
        m.line(&header.join(","))?;
        for r in history {
            m.record(r)?;
        }
        Ok(m)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn record(&mut self, r: &StepRecord) -> Result<()> {
        let mut cells = vec![r.iteration.to_string(), format!("{:e}", r.lr)];
        for k in 0..self.heads {
            cells.push(format!("{:e}", r.breakdown.l_ce_aux.get(k).copied().unwrap_or(0.0)));
        }
        for v in [r.breakdown.l_p, r.breakdown.l_s, r.breakdown.total, r.l_seg] {
            cells.push(format!("{v:e}"));
        }
        self.line(&cells.join(","))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn checkpoint_path(dir: &Path, j: u64) -> PathBuf {
    dir.join(format!("checkpoint_{j:06}.grabar"))
}

/// Runs (or resumes) one training phase to completion, or until `options.stop_after`.
pub fn train(config: &TrainConfig, data: &TrainData, options: &RunOptions) -> Result<Checkpoint> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    let total = config.total_iterations(data.len());
    let network = &options.network;

    let (mut params, mut state, mut history) = match &options.resume {
        Some(ck) => {
            if &ck.network != network {
                return Err(config_err("checkpoint network configuration differs from the requested one"));
            }
            if &ck.train != config {
                return Err(config_err("checkpoint training configuration differs from the requested one"));
            }
            if ck.total_iterations != total {
                return Err(config_err("checkpoint iteration budget differs from this dataset's"));
            }
            (ck.params.clone(), ck.optimizer.clone(), ck.history.clone())
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed ^ INIT_SALT, 0));
            let mut params = init_params(network, &mut rng)?;
            if config.phase == Phase::Joint {
                let seg = options.seg_checkpoint.as_ref().ok_or_else(|| {
                    config_err("joint training needs a segmentation checkpoint from a seg_pretrain run")
                })?;
                if &seg.network != network {
                    return Err(config_err("segmentation checkpoint network configuration differs"));
                }
                params.copy_prefix_from(&seg.params, "seg.")?;
            }
            let state = OptimizerState::new(&params);
            (params, state, Vec::new())
        }
    };
    let nets = Networks::bind(network, &params)?;
    let schedule = LossSchedule {
        total_iterations: total,
        iteration: 0,
        ..config.loss.clone()
    };

    let mut metrics = match &options.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(Metrics::create(dir, network.aux_head_blocks.len(), &history)?)
        }
        None => None,
    };
    let stop = options.stop_after.unwrap_or(total).min(total);
    log::info!(
        "training {:?}: {} samples, N = {total}, starting at j = {}",
        config.phase,
        data.len(),
        state.iteration
    );

    while state.iteration < stop {
        let j = state.iteration;
        let batch = make_batch(&data.real, &data.synthetic, config, j)?;
        let record = train_step(&nets, &mut params, &batch, &schedule, &mut state, config)?;
        if let Some(m) = metrics.as_mut() {
            m.record(&record)?;
        }
        let every = (total / 20).max(1);
        if record.iteration % every == 0 || record.iteration == total {
            log::info!(
                "j={}/{total} lr={:.2e} total={:.4} l_seg={:.4}",
                record.iteration,
                record.lr,
                record.breakdown.total,
                record.l_seg
            );
        }
        history.push(record);
        if let (Some(dir), true) = (&options.out_dir, config.checkpoint_every > 0) {
            if state.iteration % config.checkpoint_every == 0 && state.iteration < total {
                snapshot(network, config, &params, &state, total, &history).save(&checkpoint_path(dir, state.iteration))?;
            }
        }
    }
    if let Some(m) = metrics.as_mut() {
        m.flush()?;
    }
    let ck = snapshot(network, config, &params, &state, total, &history);
    if let Some(dir) = &options.out_dir {
        let path = if state.iteration == total {
            dir.join("final.grabar")
        } else {
            checkpoint_path(dir, state.iteration)
        };
        ck.save(&path)?;
    }
    Ok(ck)
}

fn snapshot(
    network: &NetworkConfig,
    config: &TrainConfig,
    params: &ParameterSet,
    state: &OptimizerState,
    total: u64,
    history: &[StepRecord],
) -> Checkpoint {
    Checkpoint {
        network: network.clone(),
        train: config.clone(),
        params: params.clone(),
        optimizer: state.clone(),
        total_iterations: total,
        history: history.to_vec(),
    }
}
