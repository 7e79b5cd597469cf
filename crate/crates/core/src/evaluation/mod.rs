//! Overlap-restricted Dice (ODSC), per-object reports, stage timing and plots.

mod plots;
mod report;

pub use plots::{emit_plots, plot_loss_curve, plot_odsc_bars};
pub use report::{export_report, import_report, EvalReport, ReportFormat, ReportRow, REPORT_SCHEMA_VERSION};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compositor::{compose, postprocess, PostprocessConfig};
use crate::dataset::{overlay_input, ForegroundMask, Image, SampleTuple, TriMask, HAND};
use crate::error::{contract, Error, Result};
use crate::losses::ClassMap;
use crate::model::{occ_forward, seg_forward, Networks};
use crate::nn::ParameterSet;

/// `(|P∩G|_Ω, |P|_Ω, |G|_Ω)` with both masks binarized to the hand class.
pub fn odsc_counts(p: &TriMask, g: &TriMask, omega: &ForegroundMask) -> Result<(usize, usize, usize)> {
    let (h, w) = (g.height(), g.width());
    if p.height() != h || p.width() != w || !omega.same_shape(h, w) {
        return Err(contract("odsc inputs differ in shape"));
    }
    let (mut both, mut np, mut ng) = (0, 0, 0);
    for i in 0..omega.len() {
        if !omega.at(i) {
            continue;
        }
        let (ph, gh) = (p.at(i) == HAND, g.at(i) == HAND);
        both += (ph && gh) as usize;
        np += ph as usize;
        ng += gh as usize;
    }
    Ok((both, np, ng))
}

/// `2|P∩G|_Ω / (|P|_Ω + |G|_Ω)`; 1.0 when neither mask has hand pixels in Ω.
pub fn odsc(p: &TriMask, g: &TriMask, omega: &ForegroundMask) -> Result<f64> {
    let (both, np, ng) = odsc_counts(p, g, omega)?;
    Ok(if np + ng == 0 {
        1.0
    } else {
        2.0 * both as f64 / (np + ng) as f64
    })
}

/// Argmax of the final logits for one input.
pub fn predict_mask(
    nets: &Networks,
    params: &ParameterSet,
    hand_image: &Image,
    hand_fg: &ForegroundMask,
    object_fg: &ForegroundMask,
    tint: [f32; 3],
) -> Result<TriMask> {
    let input = overlay_input(hand_image, hand_fg, object_fg, tint)?;
    let pyramid = occ_forward(nets, params, &input)?;
    Ok(ClassMap::from_tensor(&pyramid.final_logits).argmax())
}

/// Hand foreground from the segmentation network, thresholded at probability 0.5.
pub fn segment_hand(nets: &Networks, params: &ParameterSet, hand_image: &Image) -> Result<ForegroundMask> {
    let probs = seg_forward(nets, params, &hand_image.to_tensor())?;
    Ok(ForegroundMask::from_fn(hand_image.height(), hand_image.width(), |y, x| {
        probs.at(0, y, x) > 0.5
    }))
}

/// Per-sample ODSC of given predictions, grouped into report rows by `(object, pose)`.
pub fn evaluate_predictions(samples: &[SampleTuple], predictions: &[TriMask], fingerprint: String) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    if samples.len() != predictions.len() {
        return Err(contract("one prediction per sample required"));
    }
    let mut scored = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(predictions) {
        let omega = s.overlap();
        let (_, np, ng) = odsc_counts(p, &s.gt, &omega)?;
        scored.push((s, odsc(p, &s.gt, &omega)?, np + ng == 0));
    }
    Ok(EvalReport::from_scores(&scored, fingerprint))
}

/// SHA-256 over the network configuration, the post-processing choice and every parameter.
pub fn fingerprint(nets: &Networks, params: &ParameterSet, pp: Option<&PostprocessConfig>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&nets.config).expect("config serializes"));
    h.update(serde_json::to_vec(&pp).expect("config serializes"));
    for p in params.iter() {
        h.update(p.name.as_bytes());
        for v in &p.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Predicts every sample (with ground-truth hand masks) and scores it.
pub fn evaluate(
    nets: &Networks,
    params: &ParameterSet,
    samples: &[SampleTuple],
    pp: Option<&PostprocessConfig>,
    tint: [f32; 3],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let predictions = samples
        .par_iter()
        .map(|s| {
            let raw = predict_mask(nets, params, &s.hand_image, &s.hand_fg, &s.object_fg, tint)?;
            match pp {
                Some(cfg) => postprocess(&raw, &s.hand_fg, &s.object_fg, cfg),
                None => Ok(raw),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(samples, &predictions, fingerprint(nets, params, pp))
}

/// Mean wall-clock milliseconds of the four per-frame stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub input_prep: f64,
    pub seg_net: f64,
    pub occ_net: f64,
    pub composition: f64,
    pub total: f64,
    pub fps: f64,
    pub repeats: usize,
    pub height: usize,
    pub width: usize,
}

impl TimingProfile {
    pub const STAGES: [&'static str; 4] = ["input_prep", "seg_net", "occ_net", "composition"];

    pub fn stages(&self) -> [(&'static str, f64); 4] {
        [
            ("input_prep", self.input_prep),
            ("seg_net", self.seg_net),
            ("occ_net", self.occ_net),
            ("composition", self.composition),
        ]
    }
}

/// Times input preparation, hand segmentation, occlusion prediction and composition
/// (argmax, post-processing, frame assembly) over `repeats` runs after two warm-ups.
pub fn profile(
    nets: &Networks,
    params: &ParameterSet,
    sample: &SampleTuple,
    repeats: usize,
    pp: &PostprocessConfig,
    tint: [f32; 3],
) -> Result<TimingProfile> {
    if repeats < 10 {
        return Err(crate::error::config("profile needs at least 10 repeats"));
    }
    let mut sums = [0.0f64; 4];
    for run in 0..repeats + 2 {
        let t0 = Instant::now();
        let hand_tensor = sample.hand_image.to_tensor();
        let t1 = Instant::now();
        let probs = seg_forward(nets, params, &hand_tensor)?;
        let hand_fg = ForegroundMask::from_fn(sample.height(), sample.width(), |y, x| probs.at(0, y, x) > 0.5);
        let input = overlay_input(&sample.hand_image, &hand_fg, &sample.object_fg, tint)?;
        let t2 = Instant::now();
        let pyramid = occ_forward(nets, params, &input)?;
        let t3 = Instant::now();
        let mask = ClassMap::from_tensor(&pyramid.final_logits).argmax();
        let mask = postprocess(&mask, &hand_fg, &sample.object_fg, pp)?;
        let frame = compose(&sample.hand_image, &hand_fg, &sample.object_render, &sample.object_fg, &mask, &sample.hand_image)?;
        std::hint::black_box(&frame);
        let t4 = Instant::now();
        if run >= 2 {
            // Overlay building needs the segmentation output, so it is booked with input prep.
            let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
            sums[0] += ms(t0, t1);
            sums[1] += ms(t1, t2);
            sums[2] += ms(t2, t3);
            sums[3] += ms(t3, t4);
        }
    }
    let mean = sums.map(|s| s / repeats as f64);
    let total: f64 = mean.iter().sum();
    Ok(TimingProfile {
        input_prep: mean[0],
        seg_net: mean[1],
        occ_net: mean[2],
        composition: mean[3],
        total,
        fps: 1000.0 / total,
        repeats,
        height: sample.height(),
        width: sample.width(),
    })
}
