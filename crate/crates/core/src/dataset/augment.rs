use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{ForegroundMask, Image, SampleTuple, TriMask, BACKGROUND, HAND, OBJECT};

/// Probability and range of each transform. Photometric changes touch the hand image only:
/// the object render is synthetic and its off-silhouette zeros must survive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip_p: f64,
    pub rotate_p: f64,
    pub max_degrees: f64,
    pub sharpness_p: f64,
    pub sharpness: (f64, f64),
    pub brightness_p: f64,
    pub max_brightness: f64,
    pub contrast_p: f64,
    pub contrast: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip_p: 0.5,
            rotate_p: 0.5,
            max_degrees: 15.0,
            sharpness_p: 0.3,
            sharpness: (0.5, 2.0),
            brightness_p: 0.5,
            max_brightness: 0.15,
            contrast_p: 0.5,
            contrast: (0.75, 1.25),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy {
            flip_p: 0.0,
            rotate_p: 0.0,
            sharpness_p: 0.0,
            brightness_p: 0.0,
            contrast_p: 0.0,
            ..AugmentPolicy::default()
        }
    }
}

pub fn augment(sample: &SampleTuple, rng: &mut impl Rng, policy: &AugmentPolicy) -> SampleTuple {
    let mut s = sample.clone();
    if rng.random_bool(policy.flip_p.clamp(0.0, 1.0)) {
        s = flip_horizontal(&s);
    }
    if rng.random_bool(policy.rotate_p.clamp(0.0, 1.0)) && policy.max_degrees > 0.0 {
        let deg = rng.random_range(-policy.max_degrees..=policy.max_degrees);
        s = rotate(&s, deg);
    }
    if rng.random_bool(policy.sharpness_p.clamp(0.0, 1.0)) {
        let f = rng.random_range(policy.sharpness.0..=policy.sharpness.1);
        s.hand_image = adjust_sharpness(&s.hand_image, f as f32);
    }
    if rng.random_bool(policy.brightness_p.clamp(0.0, 1.0)) && policy.max_brightness > 0.0 {
        let d = rng.random_range(-policy.max_brightness..=policy.max_brightness);
        s.hand_image = adjust_brightness(&s.hand_image, d as f32);
    }
    if rng.random_bool(policy.contrast_p.clamp(0.0, 1.0)) {
        let f = rng.random_range(policy.contrast.0..=policy.contrast.1);
        s.hand_image = adjust_contrast(&s.hand_image, f as f32);
    }
    s
}

fn flip_image(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, img.get(y, w - 1 - x));
        }
    }
    out
}

fn flip_mask(m: &ForegroundMask) -> ForegroundMask {
    let w = m.width();
    ForegroundMask::from_fn(m.height(), w, |y, x| m.get(y, w - 1 - x))
}

pub fn flip_horizontal(s: &SampleTuple) -> SampleTuple {
    let (h, w) = (s.height(), s.width());
    let mut gt = TriMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            gt.set(y, x, s.gt.get(y, w - 1 - x));
        }
    }
    SampleTuple {
        hand_image: flip_image(&s.hand_image),
        hand_fg: flip_mask(&s.hand_fg),
        object_render: flip_image(&s.object_render),
        object_fg: flip_mask(&s.object_fg),
        gt,
        meta: s.meta.clone(),
    }
}

/// Source coordinate for output pixel `(y, x)` under a rotation about the image centre.
fn rotation_source(h: usize, w: usize, degrees: f64) -> impl Fn(usize, usize) -> (f64, f64) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    move |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let sx = cos * dx + sin * dy + cx - 0.5;
        let sy = -sin * dx + cos * dy + cy - 0.5;
        (sy, sx)
    }
}

fn nearest(h: usize, w: usize, sy: f64, sx: f64) -> Option<(usize, usize)> {
    let (ry, rx) = (sy.round(), sx.round());
    (ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w).then_some((ry as usize, rx as usize))
}

fn bilinear(img: &Image, sy: f64, sx: f64) -> [f32; 3] {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
    let mut out = [0.0f32; 3];
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 as isize + dy, x0 as isize + dx);
            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                continue;
            }
            let px = img.get(yy as usize, xx as usize);
            for c in 0..3 {
                out[c] += wy * wx * px[c];
            }
        }
    }
    out
}

/// Rotates every raster by `degrees` about the centre: bilinear for images, nearest for
/// masks, zero outside the source. Labels are then re-clipped to the rotated foregrounds.
pub fn rotate(s: &SampleTuple, degrees: f64) -> SampleTuple {
    if degrees == 0.0 {
        return s.clone();
    }
    let (h, w) = (s.height(), s.width());
    let src = rotation_source(h, w, degrees);
    let mut hand_image = Image::new(h, w);
    let mut object_render = Image::new(h, w);
    let mut hand_fg = ForegroundMask::new(h, w);
    let mut object_fg = ForegroundMask::new(h, w);
    let mut gt = TriMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y, x);
            hand_image.set(y, x, bilinear(&s.hand_image, sy, sx));
            if let Some((ny, nx)) = nearest(h, w, sy, sx) {
                let (hf, of) = (s.hand_fg.get(ny, nx), s.object_fg.get(ny, nx));
                hand_fg.set(y, x, hf);
                object_fg.set(y, x, of);
                gt.set(y, x, s.gt.get(ny, nx));
                // Keep the object render's zeros exactly where the silhouette is off.
                if of {
                    object_render.set(y, x, bilinear(&s.object_render, sy, sx));
                }
            }
        }
    }
    let gt = reclip(&gt, &hand_fg, &object_fg);
    SampleTuple {
        hand_image,
        hand_fg,
        object_render,
        object_fg,
        gt,
        meta: s.meta.clone(),
    }
}

/// Forces labels back inside their foregrounds; overlap pixels keep an existing hand/object
/// label and otherwise default to the object.
fn reclip(gt: &TriMask, hand_fg: &ForegroundMask, object_fg: &ForegroundMask) -> TriMask {
    let (h, w) = (gt.height(), gt.width());
    let mut out = TriMask::new(h, w);
    for i in 0..gt.len() {
        let l = match (hand_fg.at(i), object_fg.at(i), gt.at(i)) {
            (true, true, HAND) => HAND,
            (true, true, _) => OBJECT,
            (true, false, _) => HAND,
            (false, true, _) => OBJECT,
            (false, false, _) => BACKGROUND,
        };
        out.set(i / w, i % w, l);
    }
    out
}

fn map_pixels(img: &Image, f: impl Fn(f32) -> f32) -> Image {
    let values = img.pixels().iter().map(|&v| f(v).clamp(0.0, 1.0)).collect();
    Image::from_pixels(img.height(), img.width(), values).expect("clamped values")
}

pub fn adjust_brightness(img: &Image, delta: f32) -> Image {
    map_pixels(img, |v| v + delta)
}

/// Scales deviations from the mean luminance by `factor`.
pub fn adjust_contrast(img: &Image, factor: f32) -> Image {
    let n = (img.height() * img.width()).max(1) as f32;
    let mean = img
        .pixels()
        .chunks(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .sum::<f32>()
        / n;
    map_pixels(img, |v| mean + factor * (v - mean))
}

/// Blends with a 3×3 smoothed copy: 0 blurs, 1 is identity, above 1 sharpens. Border
/// pixels are left untouched.
pub fn adjust_sharpness(img: &Image, factor: f32) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    if h < 3 || w < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut blur = [0.0f32; 3];
            for dy in 0..3 {
                for dx in 0..3 {
                    let k = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                    let p = img.get(y + dy - 1, x + dx - 1);
                    for c in 0..3 {
                        blur[c] += k * p[c] / 13.0;
                    }
                }
            }
            let p = img.get(y, x);
            out.set(y, x, [0, 1, 2].map(|c| blur[c] + factor * (p[c] - blur[c])));
        }
    }
    out
}
