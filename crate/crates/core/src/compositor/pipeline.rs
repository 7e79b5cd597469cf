use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_grey, read_manifest, read_rgb, write_grey, write_rgb, ForegroundMask, Image};
use crate::error::{Error, Result};
use crate::evaluation::{predict_mask, segment_hand};
use crate::model::Networks;
use crate::training::Checkpoint;

use super::{compose, postprocess, PostprocessConfig};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineFailure {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub processed: usize,
    /// Inputs whose hand foreground came from the segmentation network.
    pub segmented: usize,
    pub failed: Vec<PipelineFailure>,
    pub outputs: Vec<String>,
}

struct Item {
    id: String,
    hand: PathBuf,
    hand_fg: PathBuf,
    object: PathBuf,
    object_fg: PathBuf,
    size: Option<[usize; 2]>,
}

/// Items from `manifest.json` when present, else every `hand/*.png` with siblings of the
/// same name under `hand_fg/`, `object/` and `object_fg/`.
fn discover(dir: &Path) -> Result<Vec<Item>> {
    if dir.join("manifest.json").exists() {
        let m = read_manifest(dir)?;
        return Ok(m
            .samples
            .into_iter()
            .map(|e| Item {
                hand: dir.join(&e.hand),
                hand_fg: dir.join(&e.hand_fg),
                object: dir.join(&e.object),
                object_fg: dir.join(&e.object_fg),
                size: Some(m.size),
                id: e.id,
            })
            .collect());
    }
    let hand_dir = dir.join("hand");
    if !hand_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut stems: Vec<String> = fs::read_dir(&hand_dir)
        .map_err(|e| Error::io(&hand_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    Ok(stems
        .into_iter()
        .map(|id| {
            let f = |d: &str| dir.join(d).join(format!("{id}.png"));
            Item {
                hand: f("hand"),
                hand_fg: f("hand_fg"),
                object: f("object"),
                object_fg: f("object_fg"),
                size: None,
                id,
            }
        })
        .collect())
}

fn read_fg(path: &Path, size: [usize; 2]) -> Result<ForegroundMask> {
    let raw = read_grey(path, size, &[0, 255])?;
    ForegroundMask::from_values(size[0], size[1], raw.into_iter().map(|v| (v == 255) as u8).collect())
}

fn process(
    item: &Item,
    nets: &Networks,
    ckpt: &Checkpoint,
    out_dir: &Path,
    cfg: &PostprocessConfig,
    background: Option<&Image>,
) -> Result<bool> {
    let size = match item.size {
        Some(s) => s,
        None => {
            let (w, h) = image::image_dimensions(&item.hand).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&item.hand, io),
                other => Error::CorruptRaster {
                    path: item.hand.clone(),
                    reason: other.to_string(),
                },
            })?;
            [h as usize, w as usize]
        }
    };
    let hand = read_rgb(&item.hand, size)?;
    let object = read_rgb(&item.object, size)?;
    let object_fg = read_fg(&item.object_fg, size)?;
    let segmented = !item.hand_fg.exists();
    let hand_fg = if segmented {
        segment_hand(nets, &ckpt.params, &hand)?
    } else {
        read_fg(&item.hand_fg, size)?
    };
    let raw = predict_mask(nets, &ckpt.params, &hand, &hand_fg, &object_fg, ckpt.train.tint)?;
    let mask = postprocess(&raw, &hand_fg, &object_fg, cfg)?;
    let frame = compose(&hand, &hand_fg, &object, &object_fg, &mask, background.unwrap_or(&hand))?;
    write_rgb(&out_dir.join(format!("frame_{}.png", item.id)), &frame.image)?;
    write_grey(&out_dir.join(format!("mask_{}.png", item.id)), size[0], size[1], mask.labels().to_vec())?;
    Ok(segmented)
}

/// Runs segmentation (when `hand_fg` is absent), occlusion prediction, post-processing and
/// composition for every input, writing `frame_<id>.png`, `mask_<id>.png` (labels 0/1/2) and
/// `summary.json`. A failing input is recorded and skipped. The background defaults to the
/// hand image.
pub fn run_pipeline(
    input_dir: &Path,
    ckpt: &Checkpoint,
    out_dir: &Path,
    cfg: &PostprocessConfig,
    background: Option<&Image>,
) -> Result<PipelineSummary> {
    cfg.validate()?;
    let nets = Networks::bind(&ckpt.network, &ckpt.params)?;
    let items = discover(input_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<Result<bool>> = items
        .par_iter()
        .map(|item| process(item, &nets, ckpt, out_dir, cfg, background))
        .collect();
    let mut summary = PipelineSummary {
        processed: 0,
        segmented: 0,
        failed: Vec::new(),
        outputs: Vec::new(),
    };
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(seg) => {
                summary.processed += 1;
                summary.segmented += seg as usize;
                summary.outputs.push(item.id.clone());
            }
            Err(e) => {
                log::warn!("input {} failed: {e}", item.id);
                summary.failed.push(PipelineFailure {
                    id: item.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, write_dataset, ObjectSpec};
    use crate::model::NetworkConfig;
    use crate::nn::Gradients;
    use crate::training::{OptimizerState, TrainConfig};
    use rand::SeedableRng;

    fn checkpoint() -> Checkpoint {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let network = NetworkConfig::default();
        let (_, params) = Networks::init(&network, &mut rng).unwrap();
        Checkpoint {
            network,
            train: TrainConfig::default(),
            optimizer: OptimizerState {
                velocity: Gradients::zeros_like(&params),
                iteration: 0,
            },
            params,
            total_iterations: 1,
            history: Vec::new(),
        }
    }

    #[test]
    fn empty_input_gives_empty_summary() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_pipeline(dir.path(), &checkpoint(), &dir.path().join("out"), &PostprocessConfig::default(), None).unwrap();
        assert_eq!((s.processed, s.failed.len()), (0, 0));
    }

    #[test]
    fn frames_and_masks_per_input_with_failures_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("in");
        let samples = generate_dataset(3, 5, &[ObjectSpec::new("paddle").with_size(32, 32)]).unwrap();
        write_dataset(&data, &samples).unwrap();
        fs::remove_file(data.join("hand_fg/00001.png")).unwrap();
        fs::write(data.join("object/00002.png"), b"not a png").unwrap();
        let out = dir.path().join("out");
        let ckpt = checkpoint();
        let s = run_pipeline(&data, &ckpt, &out, &PostprocessConfig::default(), None).unwrap();
        assert_eq!(s.processed, 2);
        assert_eq!(s.segmented, 1);
        assert_eq!(s.failed.len(), 1);
        assert_eq!(s.failed[0].id, "00002");
        for id in ["00000", "00001"] {
            assert!(out.join(format!("frame_{id}.png")).exists());
            assert!(out.join(format!("mask_{id}.png")).exists());
        }
        let first = fs::read(out.join("frame_00000.png")).unwrap();
        run_pipeline(&data, &ckpt, &out, &PostprocessConfig::default(), None).unwrap();
        assert_eq!(fs::read(out.join("frame_00000.png")).unwrap(), first);
    }
}
