//! 2D procedural scenes: a parametric object grabbed by a palm-ellipse-and-capsules hand.
//!
//! Geometry lives in an object frame whose unit is the shorter image side, with `y` pointing
//! down. A pose template places the palm and fingers around the object and says which parts
//! pass in front of it; per-sample jitter perturbs the template, and a random similarity
//! transform (with optional mirroring) maps the scene into the image.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{config, Result};

use super::types::{ForegroundMask, Image, Origin, SampleMeta, SampleTuple, TriMask, BACKGROUND, HAND, OBJECT};

type P = (f64, f64);

#[derive(Clone, Debug)]
enum Shape {
    Ellipse { c: P, a: f64, b: f64, angle: f64 },
    Capsule { p0: P, p1: P, r: f64 },
    Box { c: P, half: P, round: f64 },
}

impl Shape {
    fn contains(&self, p: P) -> bool {
        match *self {
            Shape::Ellipse { c, a, b, angle } => {
                let (s, co) = angle.sin_cos();
                let (dx, dy) = (p.0 - c.0, p.1 - c.1);
                let u = dx * co + dy * s;
                let v = -dx * s + dy * co;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Capsule { p0, p1, r } => segment_distance(p, p0, p1) <= r,
            Shape::Box { c, half, round } => {
                let qx = ((p.0 - c.0).abs() - half.0 + round).max(0.0);
                let qy = ((p.1 - c.1).abs() - half.1 + round).max(0.0);
                let inside = (p.0 - c.0).abs() <= half.0 && (p.1 - c.1).abs() <= half.1;
                inside && qx.hypot(qy) <= round
            }
        }
    }
}

fn segment_distance(p: P, a: P, b: P) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Where the hand sits relative to the object, in the object frame.
#[derive(Clone, Copy, Debug)]
struct Grip {
    name: &'static str,
    palm: P,
    /// Direction the fingers point, radians.
    dir: f64,
    finger_len: f64,
    palm_front: bool,
    fingers_front: [bool; 4],
    thumb_front: bool,
}

struct ObjectKind {
    name: &'static str,
    parts: fn() -> Vec<Shape>,
    grips: &'static [Grip],
}

const ALL_FRONT: [bool; 4] = [true; 4];
const ALL_BEHIND: [bool; 4] = [false; 4];

fn bar() -> Vec<Shape> {
    vec![Shape::Box { c: (0.0, 0.0), half: (0.075, 0.36), round: 0.02 }]
}

fn disk() -> Vec<Shape> {
    vec![Shape::Ellipse { c: (0.0, 0.0), a: 0.2, b: 0.2, angle: 0.0 }]
}

fn capsule() -> Vec<Shape> {
    vec![Shape::Capsule { p0: (0.0, -0.22), p1: (0.0, 0.22), r: 0.1 }]
}

fn paddle() -> Vec<Shape> {
    vec![
        Shape::Ellipse { c: (0.0, -0.14), a: 0.16, b: 0.18, angle: 0.0 },
        Shape::Box { c: (0.0, 0.18), half: (0.05, 0.17), round: 0.02 },
    ]
}

fn phone_slab() -> Vec<Shape> {
    vec![Shape::Box { c: (0.0, 0.0), half: (0.16, 0.28), round: 0.04 }]
}

fn knob() -> Vec<Shape> {
    vec![
        Shape::Ellipse { c: (0.0, -0.05), a: 0.14, b: 0.14, angle: 0.0 },
        Shape::Box { c: (0.0, 0.16), half: (0.045, 0.12), round: 0.01 },
    ]
}

const OBJECTS: &[ObjectKind] = &[
    ObjectKind {
        name: "bar",
        parts: bar,
        grips: &[
            Grip { name: "overhand", palm: (-0.18, 0.0), dir: 0.0, finger_len: 0.26, palm_front: false, fingers_front: ALL_FRONT, thumb_front: false },
            Grip { name: "underhand", palm: (0.18, 0.0), dir: PI, finger_len: 0.26, palm_front: true, fingers_front: ALL_BEHIND, thumb_front: true },
        ],
    },
    ObjectKind {
        name: "disk",
        parts: disk,
        grips: &[
            Grip { name: "pinch", palm: (0.0, 0.32), dir: -PI / 2.0, finger_len: 0.24, palm_front: false, fingers_front: ALL_BEHIND, thumb_front: true },
            Grip { name: "cup", palm: (0.0, 0.26), dir: -PI / 2.0, finger_len: 0.22, palm_front: true, fingers_front: [true, true, false, false], thumb_front: false },
        ],
    },
    ObjectKind {
        name: "capsule",
        parts: capsule,
        grips: &[Grip { name: "wrap", palm: (-0.16, 0.02), dir: 0.0, finger_len: 0.27, palm_front: false, fingers_front: ALL_FRONT, thumb_front: false }],
    },
    ObjectKind {
        name: "paddle",
        parts: paddle,
        grips: &[
            Grip { name: "handle", palm: (-0.15, 0.22), dir: 0.0, finger_len: 0.24, palm_front: false, fingers_front: ALL_FRONT, thumb_front: false },
            Grip { name: "blade", palm: (0.24, -0.1), dir: PI, finger_len: 0.24, palm_front: false, fingers_front: ALL_BEHIND, thumb_front: true },
        ],
    },
    ObjectKind {
        name: "phone-slab",
        parts: phone_slab,
        grips: &[Grip { name: "hold", palm: (0.22, 0.06), dir: PI, finger_len: 0.24, palm_front: false, fingers_front: ALL_BEHIND, thumb_front: true }],
    },
    ObjectKind {
        name: "knob",
        parts: knob,
        grips: &[Grip { name: "twist", palm: (0.0, -0.3), dir: PI / 2.0, finger_len: 0.22, palm_front: false, fingers_front: [true, true, true, false], thumb_front: true }],
    },
];

pub fn object_names() -> Vec<&'static str> {
    OBJECTS.iter().map(|o| o.name).collect()
}

pub fn pose_names(object: &str) -> Result<Vec<&'static str>> {
    Ok(find_object(object)?.grips.iter().map(|g| g.name).collect())
}

fn find_object(name: &str) -> Result<&'static ObjectKind> {
    OBJECTS.iter().find(|o| o.name == name).ok_or_else(|| {
        config(format!(
            "unknown object `{name}` (known: {})",
            object_names().join(", ")
        ))
    })
}

/// What to generate: which object, which pose (random when unset), raster size and style.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSpec {
    pub object: String,
    pub pose: Option<String>,
    pub height: usize,
    pub width: usize,
    pub origin: Origin,
    pub seen: bool,
}

impl ObjectSpec {
    pub fn new(object: impl Into<String>) -> Self {
        ObjectSpec {
            object: object.into(),
            pose: None,
            height: 320,
            width: 320,
            origin: Origin::Synthetic,
            seen: true,
        }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_pose(mut self, pose: impl Into<String>) -> Self {
        self.pose = Some(pose.into());
        self
    }

    pub fn with_seen(mut self, seen: bool) -> Self {
        self.seen = seen;
        self
    }
}

struct HandPart {
    shape: Shape,
    front: bool,
    /// Fingertip and pointing direction, for the nail.
    tip: Option<(P, P)>,
}

fn rot(v: P, a: f64) -> P {
    let (s, c) = a.sin_cos();
    (v.0 * c - v.1 * s, v.0 * s + v.1 * c)
}

fn build_hand(grip: &Grip, rng: &mut ChaCha8Rng) -> Vec<HandPart> {
    let jitter = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..=s);
    let dir = grip.dir + jitter(rng, 0.15);
    let palm = (grip.palm.0 + jitter(rng, 0.02), grip.palm.1 + jitter(rng, 0.02));
    let (pa, pb) = (0.13 * rng.random_range(0.92..1.08), 0.12 * rng.random_range(0.92..1.08));
    let u = rot((1.0, 0.0), dir);
    let v = rot((0.0, 1.0), dir);
    let at = |du: f64, dv: f64| (palm.0 + u.0 * du + v.0 * dv, palm.1 + u.1 * du + v.1 * dv);

    let mut parts = vec![HandPart {
        shape: Shape::Ellipse { c: palm, a: pa, b: pb, angle: dir },
        front: grip.palm_front,
        tip: None,
    }];
    let lengths = [0.85, 1.0, 0.92, 0.7];
    let offsets = [-0.72, -0.24, 0.24, 0.72];
    for k in 0..4 {
        let base = at(0.8 * pa, offsets[k] * pb);
        let spread = offsets[k] * 0.12 + jitter(rng, 0.08);
        let fd = rot(u, spread);
        let len = grip.finger_len * lengths[k] * rng.random_range(0.88..1.12);
        let tip = (base.0 + fd.0 * len, base.1 + fd.1 * len);
        parts.push(HandPart {
            shape: Shape::Capsule { p0: base, p1: tip, r: 0.033 },
            front: grip.fingers_front[k],
            tip: Some((tip, fd)),
        });
    }
    // Thumb leaves the palm on the −v side and points along the fingers, angled inward.
    let base = at(0.1 * pa, -0.95 * pb);
    let td = rot(u, 0.45 + jitter(rng, 0.15));
    let len = grip.finger_len * 0.75 * rng.random_range(0.88..1.12);
    let tip = (base.0 + td.0 * len, base.1 + td.1 * len);
    parts.push(HandPart {
        shape: Shape::Capsule { p0: base, p1: tip, r: 0.038 },
        front: grip.thumb_front,
        tip: Some((tip, td)),
    });
    parts
}

struct Style {
    skin: [f64; 3],
    hand_noise: f64,
    background: [f64; 3],
    background_noise: f64,
    object_color: [f64; 3],
    behind_shade: f64,
}

fn sample_style(rng: &mut ChaCha8Rng, origin: Origin) -> Style {
    let r = rng.random_range(0.72..0.95);
    let skin = [r, r * rng.random_range(0.62..0.76), r * rng.random_range(0.48..0.62)];
    // Cool, desaturated backdrop keeps the (irrelevant) background away from skin tones.
    let g = rng.random_range(0.15..0.55);
    let background = [g * 0.8, g * rng.random_range(0.9..1.1), g * rng.random_range(1.0..1.3)];
    let object_color = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    match origin {
        Origin::Synthetic => Style {
            skin,
            hand_noise: 0.02,
            background,
            background_noise: 0.04,
            object_color,
            behind_shade: 0.75,
        },
        Origin::Real => Style {
            skin,
            hand_noise: 0.05,
            background,
            background_noise: 0.1,
            object_color,
            behind_shade: rng.random_range(0.7..0.82),
        },
    }
}

fn name_hash(s: &str) -> u64 {
    // FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// One scene, a pure function of `(seed, spec)`.
pub fn generate_synthetic_sample(seed: u64, spec: &ObjectSpec) -> Result<SampleTuple> {
    let kind = find_object(&spec.object)?;
    if spec.height == 0 || spec.width == 0 {
        return Err(config("image size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&spec.object));
    let grip = match &spec.pose {
        Some(p) => *kind.grips.iter().find(|g| g.name == p).ok_or_else(|| {
            config(format!(
                "unknown pose `{p}` for `{}` (known: {})",
                kind.name,
                kind.grips.iter().map(|g| g.name).collect::<Vec<_>>().join(", ")
            ))
        })?,
        None => kind.grips[rng.random_range(0..kind.grips.len())],
    };

    let object = (kind.parts)();
    let hand = build_hand(&grip, &mut rng);
    let style = sample_style(&mut rng, spec.origin);

    // Object frame → image: scale, rotation, mirror, shift (inverse applied per pixel).
    let scale = rng.random_range(0.85..1.1);
    let angle = rng.random_range(-PI..PI);
    let mirror = rng.random_bool(0.5);
    let shift = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let shade_axis = rot((1.0, 0.0), rng.random_range(-PI..PI));

    let (h, w) = (spec.height, spec.width);
    let unit = h.min(w) as f64;
    let to_object = |y: usize, x: usize| -> P {
        let px = ((x as f64 + 0.5) - w as f64 / 2.0) / unit - shift.0;
        let py = ((y as f64 + 0.5) - h as f64 / 2.0) / unit - shift.1;
        let (ox, oy) = rot((px / scale, py / scale), -angle);
        (if mirror { -ox } else { ox }, oy)
    };

    let hand_noise = Normal::new(0.0, style.hand_noise).expect("valid std");
    let bg_noise = Normal::new(0.0, style.background_noise).expect("valid std");
    let obj_noise = Normal::new(0.0, 0.02).expect("valid std");

    let mut hand_image = Image::new(h, w);
    let mut object_render = Image::new(h, w);
    let mut hand_fg = ForegroundMask::new(h, w);
    let mut object_fg = ForegroundMask::new(h, w);
    let mut labels = vec![BACKGROUND; h * w];

    for y in 0..h {
        for x in 0..w {
            let p = to_object(y, x);
            let in_object = object.iter().any(|s| s.contains(p));
            // Behind parts are painted first so that front parts end up on top.
            let mut top: Option<&HandPart> = None;
            for part in hand.iter().filter(|pt| !pt.front).chain(hand.iter().filter(|pt| pt.front)) {
                if part.shape.contains(p) {
                    top = Some(part);
                }
            }
            let any_front = hand.iter().any(|pt| pt.front && pt.shape.contains(p));

            let rgb = match top {
                Some(part) => {
                    hand_fg.set(y, x, true);
                    let mut c = style.skin;
                    if !part.front {
                        c.iter_mut().for_each(|v| *v *= style.behind_shade);
                    }
                    if part.front {
                        if let Some((tip, d)) = part.tip {
                            let nail = (tip.0 - d.0 * 0.03, tip.1 - d.1 * 0.03);
                            if (p.0 - nail.0).hypot(p.1 - nail.1) < 0.022 {
                                c = [0.97, 0.86, 0.86];
                            }
                        }
                    }
                    let n = hand_noise.sample(&mut rng);
                    [c[0] + n, c[1] + n, c[2] + n]
                }
                None => {
                    let n = bg_noise.sample(&mut rng);
                    let c = style.background;
                    [c[0] + n, c[1] + n, c[2] + bg_noise.sample(&mut rng)]
                }
            };
            hand_image.set(y, x, rgb.map(|v| v as f32));

            if in_object {
                object_fg.set(y, x, true);
                let t = 0.8 + 0.25 * (p.0 * shade_axis.0 + p.1 * shade_axis.1);
                let n = obj_noise.sample(&mut rng);
                let c = style.object_color.map(|v| (v * t + n) as f32);
                object_render.set(y, x, c);
            }

            labels[y * w + x] = match (top.is_some(), in_object) {
                (true, true) if any_front => HAND,
                (true, true) => OBJECT,
                (true, false) => HAND,
                (false, true) => OBJECT,
                (false, false) => BACKGROUND,
            };
        }
    }

    let sample = SampleTuple {
        hand_image,
        hand_fg,
        object_render,
        object_fg,
        gt: TriMask::from_labels(h, w, labels)?,
        meta: SampleMeta {
            object_name: kind.name.to_string(),
            pose_id: grip.name.to_string(),
            origin: spec.origin,
            seed,
            seen: spec.seen,
        },
    };
    sample.validate()?;
    Ok(sample)
}

/// `count` scenes cycling through `objects`; sample `i` uses [`super::sample_seed`]`(seed, i)`.
pub fn generate_dataset(
    count: usize,
    seed: u64,
    objects: &[ObjectSpec],
) -> Result<Vec<SampleTuple>> {
    if objects.is_empty() {
        return Err(config("at least one object is required"));
    }
    for o in objects {
        find_object(&o.object)?;
    }
    (0..count)
        .into_par_iter()
        .map(|i| generate_synthetic_sample(super::sample_seed(seed, i as u64), &objects[i % objects.len()]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::derive_overlap;

    fn spec(name: &str) -> ObjectSpec {
        ObjectSpec::new(name).with_size(64, 64)
    }

    #[test]
    fn same_seed_same_tuple() {
        let a = generate_synthetic_sample(7, &spec("bar")).unwrap();
        let b = generate_synthetic_sample(7, &spec("bar")).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_sample(8, &spec("bar")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_object_is_a_config_error() {
        let r = generate_synthetic_sample(1, &spec("teapot"));
        assert!(matches!(r, Err(crate::Error::Config(_))));
        let r = generate_synthetic_sample(1, &spec("bar").with_pose("juggle"));
        assert!(matches!(r, Err(crate::Error::Config(_))));
    }

    #[test]
    fn bar_seven_has_both_labels_inside_the_overlap() {
        let s = generate_synthetic_sample(7, &ObjectSpec::new("bar")).unwrap();
        let omega = derive_overlap(&s.hand_fg, &s.object_fg).unwrap();
        assert!(omega.count() > 0);
        let inside: Vec<u8> = (0..omega.len()).filter(|&i| omega.at(i)).map(|i| s.gt.at(i)).collect();
        assert!(inside.contains(&OBJECT) && inside.contains(&HAND));
        assert!(!inside.contains(&BACKGROUND));
    }

    #[test]
    fn every_object_and_pose_produces_a_valid_occlusion() {
        for name in object_names() {
            for pose in pose_names(name).unwrap() {
                let mut mixed = 0;
                for seed in 0..6 {
                    let s = generate_synthetic_sample(seed, &spec(name).with_pose(pose)).unwrap();
                    s.validate().unwrap();
                    let omega = s.overlap();
                    let labels: Vec<u8> = (0..omega.len()).filter(|&i| omega.at(i)).map(|i| s.gt.at(i)).collect();
                    assert!(!labels.is_empty(), "{name}/{pose} seed {seed}: no overlap");
                    assert!(!labels.contains(&BACKGROUND));
                    if labels.contains(&HAND) && labels.contains(&OBJECT) {
                        mixed += 1;
                    }
                }
                assert!(mixed >= 3, "{name}/{pose}: only {mixed} mixed overlaps");
            }
        }
    }

    #[test]
    fn object_render_is_blank_outside_its_silhouette() {
        let s = generate_synthetic_sample(2, &spec("knob")).unwrap();
        for i in 0..s.object_fg.len() {
            if !s.object_fg.at(i) {
                let (y, x) = (i / 64, i % 64);
                assert_eq!(s.object_render.get(y, x), [0.0; 3]);
            }
        }
    }

    #[test]
    fn dataset_cycles_objects_in_order() {
        let objs = [spec("bar"), spec("disk")];
        let d = generate_dataset(4, 3, &objs).unwrap();
        let names: Vec<&str> = d.iter().map(|s| s.meta.object_name.as_str()).collect();
        assert_eq!(names, ["bar", "disk", "bar", "disk"]);
        assert_eq!(d, generate_dataset(4, 3, &objs).unwrap());
    }
}
