//! On-disk layout: `{hand,object,hand_fg,object_fg,gt}/NNNNN.png` plus `manifest.json`.
//! Images are 8-bit RGB, foregrounds 8-bit grey (0/255), labels 8-bit grey (0/1/2).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::{GrayImage, ImageFormat, ImageReader, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::types::{ForegroundMask, Image, SampleMeta, SampleTuple, TriMask};

pub const MANIFEST_VERSION: &str = "1";
const MANIFEST_FILE: &str = "manifest.json";
const DIRS: [&str; 5] = ["hand", "object", "hand_fg", "object_fg", "gt"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub hand: String,
    pub object: String,
    pub hand_fg: String,
    pub object_fg: String,
    pub gt: String,
    pub meta: SampleMeta,
}

impl ManifestEntry {
    pub fn for_index(index: usize, meta: SampleMeta) -> Self {
        let id = format!("{index:05}");
        let file = |d: &str| format!("{d}/{id}.png");
        ManifestEntry {
            hand: file("hand"),
            object: file("object"),
            hand_fg: file("hand_fg"),
            object_fg: file("object_fg"),
            gt: file("gt"),
            id,
            meta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// `[H, W]`.
    pub size: [usize; 2],
    pub samples: Vec<ManifestEntry>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let found = value.get("version").and_then(|v| v.as_str()).unwrap_or("<none>");
    if found != MANIFEST_VERSION {
        return Err(Error::SchemaVersion {
            path,
            expected: MANIFEST_VERSION.into(),
            found: found.into(),
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut ids = HashSet::new();
    for e in &manifest.samples {
        if !ids.insert(&e.id) {
            return Err(Error::Malformed {
                path,
                reason: format!("duplicate sample id {}", e.id),
            });
        }
    }
    Ok(manifest)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_png(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::CorruptRaster {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

pub(crate) fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    let raw = img.pixels().iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer matches shape");
    save_png(path, buf.save_with_format(path, ImageFormat::Png))
}

pub(crate) fn write_grey(path: &Path, h: usize, w: usize, values: Vec<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(w as u32, h as u32, values).expect("buffer matches shape");
    save_png(path, buf.save_with_format(path, ImageFormat::Png))
}

/// Writes the five rasters of `sample` under `dir` at the paths named by `entry`.
pub fn save_sample(dir: &Path, entry: &ManifestEntry, sample: &SampleTuple) -> Result<()> {
    let (h, w) = (sample.height(), sample.width());
    for d in DIRS {
        let sub = dir.join(d);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    write_rgb(&dir.join(&entry.hand), &sample.hand_image)?;
    write_rgb(&dir.join(&entry.object), &sample.object_render)?;
    let fg = |m: &ForegroundMask| m.values().iter().map(|&v| v * 255).collect();
    write_grey(&dir.join(&entry.hand_fg), h, w, fg(&sample.hand_fg))?;
    write_grey(&dir.join(&entry.object_fg), h, w, fg(&sample.object_fg))?;
    write_grey(&dir.join(&entry.gt), h, w, sample.gt.labels().to_vec())
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let corrupt = |reason: String| Error::CorruptRaster {
        path: path.to_path_buf(),
        reason,
    };
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| corrupt(e.to_string()))
}

fn check_size(path: &Path, found: (u32, u32), size: [usize; 2]) -> Result<()> {
    if found != (size[1] as u32, size[0] as u32) {
        return Err(Error::CorruptRaster {
            path: path.to_path_buf(),
            reason: format!("size {}x{} differs from manifest {}x{}", found.1, found.0, size[0], size[1]),
        });
    }
    Ok(())
}

pub(crate) fn read_rgb(path: &Path, size: [usize; 2]) -> Result<Image> {
    let img = decode(path)?;
    let img = match img {
        image::DynamicImage::ImageRgb8(i) => i,
        other => {
            return Err(Error::CorruptRaster {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit RGB, found {:?}", other.color()),
            })
        }
    };
    check_size(path, img.dimensions(), size)?;
    let pixels = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_pixels(size[0], size[1], pixels)
}

/// Any decodable raster at its own size, converted to RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_pixels(h as usize, w as usize, pixels)
}

pub(crate) fn read_grey(path: &Path, size: [usize; 2], allowed: &[u8]) -> Result<Vec<u8>> {
    let img = match decode(path)? {
        image::DynamicImage::ImageLuma8(i) => i,
        other => {
            return Err(Error::CorruptRaster {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit greyscale, found {:?}", other.color()),
            })
        }
    };
    check_size(path, img.dimensions(), size)?;
    let raw = img.into_raw();
    if let Some(v) = raw.iter().find(|v| !allowed.contains(v)) {
        return Err(Error::CorruptRaster {
            path: path.to_path_buf(),
            reason: format!("unexpected mask value {v}"),
        });
    }
    Ok(raw)
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry, size: [usize; 2]) -> Result<SampleTuple> {
    let (h, w) = (size[0], size[1]);
    let fg = |rel: &str| -> Result<ForegroundMask> {
        let raw = read_grey(&dir.join(rel), size, &[0, 255])?;
        ForegroundMask::from_values(h, w, raw.into_iter().map(|v| (v == 255) as u8).collect())
    };
    let sample = SampleTuple {
        hand_image: read_rgb(&dir.join(&entry.hand), size)?,
        hand_fg: fg(&entry.hand_fg)?,
        object_render: read_rgb(&dir.join(&entry.object), size)?,
        object_fg: fg(&entry.object_fg)?,
        gt: TriMask::from_labels(h, w, read_grey(&dir.join(&entry.gt), size, &[0, 1, 2])?)?,
        meta: entry.meta.clone(),
    };
    sample.validate().map_err(|e| Error::Malformed {
        path: dir.join(&entry.gt),
        reason: e.to_string(),
    })?;
    Ok(sample)
}

/// Writes all samples plus a manifest; every sample must share one size.
pub fn write_dataset(dir: &Path, samples: &[SampleTuple]) -> Result<Manifest> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyDataset(dir.display().to_string()))?;
    let size = [first.height(), first.width()];
    if let Some(s) = samples.iter().find(|s| [s.height(), s.width()] != size) {
        return Err(crate::error::contract(format!(
            "sample sizes differ: {}x{} vs {}x{}",
            s.height(),
            s.width(),
            size[0],
            size[1]
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<ManifestEntry> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| ManifestEntry::for_index(i, s.meta.clone()))
        .collect();
    entries
        .par_iter()
        .zip(samples)
        .try_for_each(|(e, s)| save_sample(dir, e, s))?;
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        size,
        samples: entries,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Loads every sample in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<SampleTuple>> {
    let manifest = read_manifest(dir)?;
    manifest
        .samples
        .par_iter()
        .map(|e| load_sample(dir, e, manifest.size))
        .collect()
}
