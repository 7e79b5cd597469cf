use crate::error::{contract, Result};
use crate::nn::Tensor;

use super::types::{ForegroundMask, Image, SampleTuple};

/// Six-channel network input: background-removed hand RGB, then the naive overlay with the
/// object painted in a flat tint on top of the hand.
pub type NetworkInput = Tensor;

pub const BLUE: [f32; 3] = [0.0, 0.0, 1.0];

pub fn preprocess_pair(sample: &SampleTuple, tint: [f32; 3]) -> Result<NetworkInput> {
    sample.validate()?;
    overlay_input(&sample.hand_image, &sample.hand_fg, &sample.object_fg, tint)
}

/// [`preprocess_pair`] without a ground-truth mask, for inference on raw inputs.
pub fn overlay_input(
    hand_image: &Image,
    hand_fg: &ForegroundMask,
    object_fg: &ForegroundMask,
    tint: [f32; 3],
) -> Result<NetworkInput> {
    if tint.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(contract("tint channels must lie in [0, 1]"));
    }
    let (h, w) = (hand_image.height(), hand_image.width());
    if !hand_fg.same_shape(h, w) || !object_fg.same_shape(h, w) {
        return Err(contract("image and foreground shapes differ"));
    }
    let plane = h * w;
    let mut data = vec![0.0f32; 6 * plane];
    for i in 0..plane {
        let hand = hand_fg.at(i);
        let object = object_fg.at(i);
        let px = hand_image.get(i / w, i % w);
        for c in 0..3 {
            if hand {
                data[c * plane + i] = px[c];
            }
            data[(3 + c) * plane + i] = if object {
                tint[c]
            } else if hand {
                px[c]
            } else {
                0.0
            };
        }
    }
    Ok(Tensor::from_vec(6, h, w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_sample, ObjectSpec};

    #[test]
    fn channels_follow_the_overlay_rules() {
        let s = generate_synthetic_sample(3, &ObjectSpec::new("bar").with_size(64, 64)).unwrap();
        let x = preprocess_pair(&s, BLUE).unwrap();
        assert_eq!(x.channels(), 6);
        let (h, w) = (64, 64);
        let mut seen = [false; 3];
        for y in 0..h {
            for xx in 0..w {
                let px = s.hand_image.get(y, xx);
                let hand = s.hand_fg.get(y, xx);
                let obj = s.object_fg.get(y, xx);
                let first: Vec<f32> = (0..3).map(|c| x.at(c, y, xx)).collect();
                let second: Vec<f32> = (3..6).map(|c| x.at(c, y, xx)).collect();
                if !hand {
                    assert_eq!(first, vec![0.0; 3]);
                    seen[0] = true;
                } else {
                    assert_eq!(first, px.to_vec());
                }
                if obj {
                    assert_eq!(second, BLUE.to_vec());
                    seen[1] |= hand;
                } else if hand {
                    assert_eq!(second, px.to_vec());
                    seen[2] = true;
                } else {
                    assert_eq!(second, vec![0.0; 3]);
                }
            }
        }
        assert!(seen.iter().all(|s| *s), "{seen:?}");
    }
}
