//! Mask clean-up, frame composition and the batch directory pipeline.

mod pipeline;

pub use pipeline::{run_pipeline, PipelineFailure, PipelineSummary};

use serde::{Deserialize, Serialize};

use crate::dataset::{ForegroundMask, Image, TriMask, BACKGROUND, HAND, OBJECT};
use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseShape {
    Square,
    Disk,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub median_kernel: usize,
    pub close_kernel: usize,
    pub close_shape: CloseShape,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            median_kernel: 3,
            close_kernel: 5,
            close_shape: CloseShape::Disk,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("median_kernel", self.median_kernel), ("close_kernel", self.close_kernel)] {
            if k == 0 || k % 2 == 0 {
                return Err(config(format!("{name} must be odd and at least 1, got {k}")));
            }
        }
        Ok(())
    }
}

/// Windowed majority vote; ties go to the centre label when it is among the leaders, else
/// to the smallest tied label. Windows are clipped at the border.
pub fn categorical_median(mask: &TriMask, kernel: usize) -> TriMask {
    let (h, w) = (mask.height(), mask.width());
    let r = kernel / 2;
    let mut out = TriMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut counts = [0usize; 3];
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    counts[mask.get(yy, xx) as usize] += 1;
                }
            }
            let best = *counts.iter().max().expect("three classes");
            let centre = mask.get(y, x);
            let label = if counts[centre as usize] == best {
                centre
            } else {
                counts.iter().position(|&c| c == best).expect("a leader exists") as u8
            };
            out.set(y, x, label);
        }
    }
    out
}

fn structuring_element(kernel: usize, shape: CloseShape) -> Vec<(isize, isize)> {
    let r = (kernel / 2) as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if shape == CloseShape::Square || dy * dy + dx * dx <= r * r {
                offsets.push((dy, dx));
            }
        }
    }
    offsets
}

/// Max (dilate) or min (erode) over the element, with `outside` standing in for pixels
/// beyond the border.
fn morph(m: &ForegroundMask, element: &[(isize, isize)], dilate: bool, outside: bool) -> ForegroundMask {
    let (h, w) = (m.height() as isize, m.width() as isize);
    ForegroundMask::from_fn(m.height(), m.width(), |y, x| {
        let probe = |&(dy, dx): &(isize, isize)| {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                outside
            } else {
                m.get(yy as usize, xx as usize)
            }
        };
        if dilate {
            element.iter().any(probe)
        } else {
            element.iter().all(probe)
        }
    })
}

/// Dilation then erosion. The image exterior counts as empty while dilating and as full while
/// eroding, so the border neither grows nor eats the mask.
pub fn close(m: &ForegroundMask, kernel: usize, shape: CloseShape) -> ForegroundMask {
    let element = structuring_element(kernel, shape);
    let dilated = morph(m, &element, true, false);
    morph(&dilated, &element, false, true)
}

/// Median vote, then closing of the hand layer, then labels rebuilt against the foregrounds:
/// hand-only pixels are hand, object-only pixels object, overlap pixels follow the closed
/// hand layer.
pub fn postprocess(
    mask: &TriMask,
    hand_fg: &ForegroundMask,
    object_fg: &ForegroundMask,
    cfg: &PostprocessConfig,
) -> Result<TriMask> {
    cfg.validate()?;
    let (h, w) = (mask.height(), mask.width());
    if !hand_fg.same_shape(h, w) || !object_fg.same_shape(h, w) {
        return Err(contract("mask and foreground shapes differ"));
    }
    let voted = categorical_median(mask, cfg.median_kernel);
    let hand = close(&voted.layer(HAND), cfg.close_kernel, cfg.close_shape);
    let labels = (0..h * w)
        .map(|i| match (hand_fg.at(i), object_fg.at(i)) {
            (true, false) => HAND,
            (false, true) => OBJECT,
            (true, true) if hand.at(i) => HAND,
            (true, true) => OBJECT,
            (false, false) => BACKGROUND,
        })
        .collect();
    TriMask::from_labels(h, w, labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComposedFrame {
    pub image: Image,
    /// Which source each pixel came from.
    pub provenance: TriMask,
}

/// Three-way select: hand label inside the hand, else object label (or a hand claim that
/// falls through) inside the object, else background.
pub fn compose(
    hand: &Image,
    hand_fg: &ForegroundMask,
    object_render: &Image,
    object_fg: &ForegroundMask,
    mask: &TriMask,
    background: &Image,
) -> Result<ComposedFrame> {
    let (h, w) = (mask.height(), mask.width());
    let same_img = |i: &Image| i.height() == h && i.width() == w;
    if !same_img(hand) || !same_img(object_render) || !same_img(background) {
        return Err(contract("image shapes differ from the mask"));
    }
    if !hand_fg.same_shape(h, w) || !object_fg.same_shape(h, w) {
        return Err(contract("foreground shapes differ from the mask"));
    }
    let mut image = Image::new(h, w);
    let mut provenance = TriMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let label = mask.get(y, x);
            let source = if label == HAND && hand_fg.get(y, x) {
                HAND
            } else if (label == HAND || label == OBJECT) && object_fg.get(y, x) {
                OBJECT
            } else {
                BACKGROUND
            };
            let px = match source {
                HAND => hand.get(y, x),
                OBJECT => object_render.get(y, x),
                _ => background.get(y, x),
            };
            image.set(y, x, px);
            provenance.set(y, x, source);
        }
    }
    Ok(ComposedFrame { image, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_masks_survive_postprocessing() {
        let all = TriMask::from_labels(6, 6, vec![HAND; 36]).unwrap();
        let full = ForegroundMask::full(6, 6);
        let out = postprocess(&all, &full, &ForegroundMask::new(6, 6), &PostprocessConfig::default()).unwrap();
        assert_eq!(out, all);
        let out = postprocess(&all, &full, &full, &PostprocessConfig::default()).unwrap();
        assert_eq!(out, all);
    }

    #[test]
    fn median_removes_an_isolated_pixel() {
        let mut m = TriMask::from_labels(9, 9, vec![OBJECT; 81]).unwrap();
        m.set(4, 4, HAND);
        m.set(0, 0, BACKGROUND);
        let out = categorical_median(&m, 3);
        assert!(out.labels().iter().all(|&l| l == OBJECT));
    }

    #[test]
    fn median_tie_prefers_the_centre() {
        // 2x2 corner window at (0,0): two hand, two object.
        let m = TriMask::from_labels(2, 2, vec![HAND, OBJECT, HAND, OBJECT]).unwrap();
        let out = categorical_median(&m, 3);
        assert_eq!(out.labels(), m.labels());
    }

    #[test]
    fn close_fills_a_small_hole() {
        let mut m = ForegroundMask::full(9, 9);
        m.set(4, 4, false);
        assert_eq!(close(&m, 3, CloseShape::Square), ForegroundMask::full(9, 9));
    }

    #[test]
    fn even_kernels_are_rejected() {
        let c = PostprocessConfig {
            median_kernel: 4,
            ..PostprocessConfig::default()
        };
        assert!(matches!(c.validate(), Err(crate::Error::Config(_))));
    }

    #[test]
    fn compose_falls_through_hand_to_object_to_background() {
        let hand = Image::filled(1, 3, [1.0, 0.0, 0.0]);
        let obj = Image::filled(1, 3, [0.0, 1.0, 0.0]);
        let bg = Image::filled(1, 3, [0.0, 0.0, 1.0]);
        let hfg = ForegroundMask::from_values(1, 3, vec![0, 0, 1]).unwrap();
        let ofg = ForegroundMask::from_values(1, 3, vec![1, 0, 0]).unwrap();
        let mask = TriMask::from_labels(1, 3, vec![HAND, HAND, OBJECT]).unwrap();
        let f = compose(&hand, &hfg, &obj, &ofg, &mask, &bg).unwrap();
        assert_eq!(f.provenance.labels(), &[OBJECT, BACKGROUND, BACKGROUND]);
        assert_eq!(f.image.get(0, 0), [0.0, 1.0, 0.0]);
        assert_eq!(f.image.get(0, 2), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_background_mask_gives_the_background() {
        let hand = Image::filled(2, 2, [0.2; 3]);
        let bg = Image::filled(2, 2, [0.7; 3]);
        let full = ForegroundMask::full(2, 2);
        let f = compose(&hand, &full, &hand, &full, &TriMask::new(2, 2), &bg).unwrap();
        assert_eq!(f.image, bg);
    }

    fn mask_strategy() -> impl Strategy<Value = ForegroundMask> {
        proptest::collection::vec(0u8..2, 12 * 12).prop_map(|v| ForegroundMask::from_values(12, 12, v).unwrap())
    }

    proptest! {
        #[test]
        fn closing_is_idempotent(m in mask_strategy(), k in prop_oneof![Just(1usize), Just(3), Just(5)], disk in any::<bool>()) {
            let shape = if disk { CloseShape::Disk } else { CloseShape::Square };
            let once = close(&m, k, shape);
            prop_assert_eq!(close(&once, k, shape), once);
        }

        #[test]
        fn postprocess_respects_foregrounds(
            labels in proptest::collection::vec(0u8..3, 144),
            hfg in mask_strategy(),
            ofg in mask_strategy(),
        ) {
            let m = TriMask::from_labels(12, 12, labels).unwrap();
            let out = postprocess(&m, &hfg, &ofg, &PostprocessConfig::default()).unwrap();
            prop_assert!(out.check_against(&hfg, &ofg).is_ok());
        }
    }
}
