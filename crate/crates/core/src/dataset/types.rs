use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::nn::Tensor;

pub const BACKGROUND: u8 = 0;
pub const OBJECT: u8 = 1;
pub const HAND: u8 = 2;

/// RGB raster with channel values in `[0, 1]`, stored row-major and interleaved (`H×W×3`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = Image::new(height, width);
        for px in img.pixels.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(contract(format!(
                "{} values do not form a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Writes through here are clamped to `[0, 1]` only by [`Image::set`]; callers of this
    /// accessor must keep values in range themselves.
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (k, v) in rgb.into_iter().enumerate() {
            self.pixels[i + k] = v.clamp(0.0, 1.0);
        }
    }

    /// Channel-major `3×H×W` copy.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (p, px) in self.pixels.chunks(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = px[c];
            }
        }
        Tensor::from_vec(3, self.height, self.width, data)
    }
}

/// Binary `H×W` raster (values 0 or 1).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ForegroundMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize) -> Self {
        ForegroundMask {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        ForegroundMask {
            height,
            width,
            values: vec![1; height * width],
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(contract(format!(
                "{} values do not form a {height}x{width} mask",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(contract("foreground mask values must be 0 or 1"));
        }
        Ok(ForegroundMask {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x) as u8);
            }
        }
        ForegroundMask {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] != 0
    }

    #[inline]
    pub fn at(&self, i: usize) -> bool {
        self.values[i] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.values[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, h: usize, w: usize) -> bool {
        self.height == h && self.width == w
    }
}

/// Per-pixel class labels: background=0, object=1, hand=2.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TriMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl TriMask {
    pub fn new(height: usize, width: usize) -> Self {
        TriMask {
            height,
            width,
            labels: vec![BACKGROUND; height * width],
        }
    }

    pub fn from_labels(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(contract(format!(
                "{} labels do not form a {height}x{width} mask",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > HAND) {
            return Err(contract(format!("label {l} outside {{0, 1, 2}}")));
        }
        Ok(TriMask {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        assert!(label <= HAND, "label {label} outside {{0, 1, 2}}");
        self.labels[y * self.width + x] = label;
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn layer(&self, label: u8) -> ForegroundMask {
        ForegroundMask {
            height: self.height,
            width: self.width,
            values: self.labels.iter().map(|&l| (l == label) as u8).collect(),
        }
    }

    /// Labels as reals on the `{1, 2, 3}` scale used by the soft-argmax.
    pub fn to_class_values(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64 + 1.0).collect()
    }

    /// Checks containment: hand only inside `hand_fg`, object only inside `object_fg`,
    /// background only outside both.
    pub fn check_against(&self, hand_fg: &ForegroundMask, object_fg: &ForegroundMask) -> Result<()> {
        if !hand_fg.same_shape(self.height, self.width) || !object_fg.same_shape(self.height, self.width) {
            return Err(contract("tri-mask and foreground shapes differ"));
        }
        for (i, &l) in self.labels.iter().enumerate() {
            let (h, o) = (hand_fg.at(i), object_fg.at(i));
            let ok = match l {
                HAND => h,
                OBJECT => o,
                _ => !h && !o,
            };
            if !ok {
                let (y, x) = (i / self.width, i % self.width);
                return Err(contract(format!(
                    "label {l} at ({y}, {x}) inconsistent with foregrounds (hand={h}, object={o})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Synthetic,
    Real,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub object_name: String,
    pub pose_id: String,
    pub origin: Origin,
    pub seed: u64,
    /// Whether the object belongs to the training vocabulary (unseen objects are starred in reports).
    #[serde(default = "default_seen")]
    pub seen: bool,
}

fn default_seen() -> bool {
    true
}

/// One training/evaluation unit; all rasters share a single `H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTuple {
    pub hand_image: Image,
    pub hand_fg: ForegroundMask,
    pub object_render: Image,
    pub object_fg: ForegroundMask,
    pub gt: TriMask,
    pub meta: SampleMeta,
}

impl SampleTuple {
    pub fn height(&self) -> usize {
        self.gt.height()
    }

    pub fn width(&self) -> usize {
        self.gt.width()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let same = |ih: usize, iw: usize| ih == h && iw == w;
        if !same(self.hand_image.height(), self.hand_image.width())
            || !same(self.object_render.height(), self.object_render.width())
        {
            return Err(contract("image and mask sizes differ within a sample"));
        }
        self.gt.check_against(&self.hand_fg, &self.object_fg)
    }

    pub fn overlap(&self) -> ForegroundMask {
        super::derive_overlap(&self.hand_fg, &self.object_fg).expect("sample rasters share a shape")
    }
}
