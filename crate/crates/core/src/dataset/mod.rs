//! Procedural hand-grabs-object scenes, their on-disk layout, network input preparation
//! and augmentation.

mod augment;
mod generate;
mod io;
mod preprocess;
mod types;

pub use augment::{
    adjust_brightness, adjust_contrast, adjust_sharpness, augment, flip_horizontal, rotate, AugmentPolicy,
};
pub use generate::{generate_dataset, generate_synthetic_sample, object_names, pose_names, ObjectSpec};
pub use io::{
    load_sample, read_dataset, read_image, read_manifest, save_sample, write_dataset, write_manifest, Manifest, ManifestEntry,
    MANIFEST_VERSION,
};
pub(crate) use io::{read_grey, read_rgb, write_grey, write_rgb};
pub use preprocess::{overlay_input, preprocess_pair, NetworkInput, BLUE};
pub use types::*;

use crate::error::{contract, Result};

/// `Ω = H ∩ O`.
pub fn derive_overlap(hand_fg: &ForegroundMask, object_fg: &ForegroundMask) -> Result<ForegroundMask> {
    if hand_fg.height() != object_fg.height() || hand_fg.width() != object_fg.width() {
        return Err(contract(format!(
            "foreground shapes differ: {}x{} vs {}x{}",
            hand_fg.height(),
            hand_fg.width(),
            object_fg.height(),
            object_fg.width()
        )));
    }
    let values = hand_fg
        .values()
        .iter()
        .zip(object_fg.values())
        .map(|(a, b)| a & b)
        .collect();
    ForegroundMask::from_values(hand_fg.height(), hand_fg.width(), values)
}

/// Stream seed for the `index`-th sample of a dataset seeded with `base` (SplitMix64 step).
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
