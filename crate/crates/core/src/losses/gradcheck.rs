//! Finite-difference checks of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::dataset::{ForegroundMask, TriMask, HAND, OBJECT};
use crate::error::Result;

use super::ce::{
    cross_entropy, cross_entropy_logits, focusing_ce, focusing_ce_logits, pfce, pfce_logits, softmax_channels,
    ClassMap,
};
use super::overall::{overall_loss_maps, LossSchedule};
use super::smooth::{gradient_orientation, smoothness_loss_logits, smoothness_loss_maps, soft_argmax};

pub const STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;
const AUX_HEADS: usize = 4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckEntry {
    pub loss: String,
    pub instances: usize,
    pub rejected: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub size: usize,
    pub seed: u64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

/// Random labels made of an object rectangle and an overlapping hand disk, so label edges
/// form contours rather than noise.
pub(crate) struct Instance {
    pub gt: TriMask,
    pub omega: ForegroundMask,
    pub schedule: LossSchedule,
}

fn random_instance(rng: &mut ChaCha8Rng, size: usize) -> Instance {
    let s = size as f64;
    let (y0, x0) = (rng.random_range(0.0..0.4 * s), rng.random_range(0.0..0.4 * s));
    let (y1, x1) = (y0 + rng.random_range(0.4 * s..0.6 * s), x0 + rng.random_range(0.4 * s..0.6 * s));
    let (cy, cx) = (rng.random_range(0.3 * s..0.7 * s), rng.random_range(0.3 * s..0.7 * s));
    let r = rng.random_range(0.2 * s..0.35 * s);
    let mut labels = vec![0u8; size * size];
    let mut omega = ForegroundMask::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let object = fy >= y0 && fy < y1 && fx >= x0 && fx < x1;
            let hand = (fy - cy).powi(2) + (fx - cx).powi(2) < r * r;
            omega.set(y, x, object && hand);
            // Hand wins in front half of the overlap.
            labels[y * size + x] = match (hand, object) {
                (true, true) if fx < cx => HAND,
                (true, true) => OBJECT,
                (true, false) => HAND,
                (false, true) => OBJECT,
                _ => 0,
            };
        }
    }
    let total = rng.random_range(10..100u64);
    let schedule = LossSchedule {
        total_iterations: total,
        ..LossSchedule::default()
    }
    .at(rng.random_range(1..=total));
    Instance {
        gt: TriMask::from_labels(size, size, labels).expect("labels in range"),
        omega,
        schedule,
    }
}

/// Logits with std ≈ 0.01 (so `γz` is O(1)) nudged toward the true class.
fn random_logits(rng: &mut ChaCha8Rng, gt: &TriMask) -> ClassMap {
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let n = gt.len();
    let mut z = ClassMap::zeros(3, gt.height(), gt.width());
    for k in 0..3 {
        for i in 0..n {
            let bias = if gt.at(i) as usize == k { 0.015 } else { 0.0 };
            z.data[k * n + i] = bias + normal.sample(rng);
        }
    }
    z
}

/// The angular term has a kink where orientations are antiparallel and a clamp plateau where
/// they coincide; instances touching either are skipped.
fn smoothness_well_conditioned(z: &ClassMap, gt: &TriMask, gamma: f64) -> bool {
    let b = soft_argmax(z, gamma);
    let (Ok(ob), Ok(oy)) = (
        gradient_orientation(&b, gt.height(), gt.width()),
        gradient_orientation(&gt.to_class_values(), gt.height(), gt.width()),
    ) else {
        return false;
    };
    (0..b.len()).all(|i| {
        if !(ob.valid[i] && oy.valid[i]) {
            return true;
        }
        let c = ob.ox[i] * oy.ox[i] + ob.oy[i] * oy.oy[i];
        c > -0.99 && c < 1.0 - 1e-6 && ob.magnitude[i] > 1e-3
    })
}

fn probs_of(x: &[f64], like: &ClassMap) -> ClassMap {
    softmax_channels(&ClassMap::from_vec(like.classes, like.height, like.width, x.to_vec()).expect("same shape"))
}

fn check_ce_family(which: &str, z: &ClassMap, inst: &Instance) -> Result<f64> {
    let (alpha, beta) = (inst.schedule.alpha, inst.schedule.beta);
    let analytic = match which {
        "cross_entropy" => cross_entropy_logits(z, &inst.gt)?.1,
        "focusing_ce" => focusing_ce_logits(z, &inst.gt, &inst.omega, alpha, beta)?.1,
        _ => pfce_logits(z, &inst.gt, &inst.omega, &inst.schedule)?.1,
    };
    let numeric = central_difference(
        |x| {
            let p = probs_of(x, z);
            match which {
                "cross_entropy" => cross_entropy(&p, &inst.gt),
                "focusing_ce" => focusing_ce(&p, &inst.gt, &inst.omega, alpha, beta),
                _ => pfce(&p, &inst.gt, &inst.omega, &inst.schedule),
            }
            .expect("valid instance")
        },
        &z.data,
        STEP,
    );
    Ok(max_relative_error(&analytic.data, &numeric))
}

fn check_smoothness(z: &ClassMap, inst: &Instance) -> Result<f64> {
    let gamma = inst.schedule.gamma;
    let (_, analytic) = smoothness_loss_logits(z, &inst.gt, gamma)?;
    let y = inst.gt.to_class_values();
    let (h, w) = (z.height, z.width);
    let numeric = central_difference(
        |x| {
            let zz = ClassMap::from_vec(3, h, w, x.to_vec()).expect("same shape");
            smoothness_loss_maps(&soft_argmax(&zz, gamma), &y, h, w).expect("valid instance")
        },
        &z.data,
        STEP,
    );
    Ok(max_relative_error(&analytic.data, &numeric))
}

fn check_overall(aux: &[ClassMap], fin: &ClassMap, inst: &Instance) -> Result<f64> {
    let (_, grad) = overall_loss_maps(aux, fin, &inst.gt, &inst.omega, &inst.schedule)?;
    let m = fin.data.len();
    let mut x: Vec<f64> = aux.iter().flat_map(|a| a.data.iter().copied()).collect();
    x.extend_from_slice(&fin.data);
    let mut analytic: Vec<f64> = grad.aux.iter().flat_map(|a| a.data.iter().copied()).collect();
    analytic.extend_from_slice(&grad.final_logits.data);
    let (h, w) = (fin.height, fin.width);
    let numeric = central_difference(
        |x| {
            let maps: Vec<ClassMap> = x
                .chunks(m)
                .map(|c| ClassMap::from_vec(3, h, w, c.to_vec()).expect("same shape"))
                .collect();
            let (b, _) = overall_loss_maps(&maps[..aux.len()], &maps[aux.len()], &inst.gt, &inst.omega, &inst.schedule)
                .expect("valid instance");
            b.total
        },
        &x,
        STEP,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

/// Draws instances until `count` pass the conditioning filter; gives up after `50·count` draws.
fn accepted<T>(rng: &mut ChaCha8Rng, count: usize, mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> (Vec<T>, usize) {
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count && rejected < 50 * count {
        match draw(rng) {
            Some(t) => out.push(t),
            None => rejected += 1,
        }
    }
    (out, rejected)
}

fn entry(loss: &str, errors: &[f64], rejected: usize, tolerance: f64, wanted: usize) -> GradcheckEntry {
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    GradcheckEntry {
        loss: loss.to_string(),
        instances: errors.len(),
        rejected,
        max_rel_error,
        tolerance,
        passed: errors.len() == wanted && max_rel_error < tolerance,
    }
}

/// Checks every loss on `instances` random `size×size` problems. CE-family tolerance is
/// 1e-4, smoothness and overall 1e-3.
pub fn run_suite(size: usize, instances: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for loss in ["cross_entropy", "focusing_ce", "pfce"] {
        let mut errors = Vec::new();
        for _ in 0..instances {
            let inst = random_instance(&mut rng, size);
            let z = random_logits(&mut rng, &inst.gt);
            errors.push(check_ce_family(loss, &z, &inst)?);
        }
        entries.push(entry(loss, &errors, 0, 1e-4, instances));
    }

    let (cases, rejected) = accepted(&mut rng, instances, |rng| {
        let inst = random_instance(rng, size);
        let z = random_logits(rng, &inst.gt);
        smoothness_well_conditioned(&z, &inst.gt, inst.schedule.gamma).then_some((z, inst))
    });
    let errors = cases
        .iter()
        .map(|(z, inst)| check_smoothness(z, inst))
        .collect::<Result<Vec<_>>>()?;
    entries.push(entry("smoothness_loss", &errors, rejected, 1e-3, instances));

    let (cases, rejected) = accepted(&mut rng, instances, |rng| {
        let inst = random_instance(rng, size);
        let aux: Vec<ClassMap> = (0..AUX_HEADS).map(|_| random_logits(rng, &inst.gt)).collect();
        let fin = random_logits(rng, &inst.gt);
        smoothness_well_conditioned(&fin, &inst.gt, inst.schedule.gamma).then_some((aux, fin, inst))
    });
    let errors = cases
        .iter()
        .map(|(aux, fin, inst)| check_overall(aux, fin, inst))
        .collect::<Result<Vec<_>>>()?;
    entries.push(entry("overall_loss", &errors, rejected, 1e-3, instances));

    Ok(GradcheckReport { size, seed, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_of_a_quadratic_is_exact() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9 && (g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn smoothness_gradient_in_b_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..40 {
            let inst = random_instance(&mut rng, 8);
            let y = inst.gt.to_class_values();
            // Smooth map near y: blurred labels plus a low-frequency ripple.
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let b: Vec<f64> = (0..64)
                .map(|i| {
                    let (r, c) = ((i / 8) as f64, (i % 8) as f64);
                    y[i] + 0.3 * (0.5 * r + 0.3 * c + phase).sin()
                })
                .collect();
            let ob = gradient_orientation(&b, 8, 8).unwrap();
            let oy = gradient_orientation(&y, 8, 8).unwrap();
            let ok = (0..64).all(|i| {
                !(ob.valid[i] && oy.valid[i]) || {
                    let c = ob.ox[i] * oy.ox[i] + ob.oy[i] * oy.oy[i];
                    c > -0.99 && c < 1.0 - 1e-6
                }
            });
            if !ok {
                continue;
            }
            let (_, analytic) = super::super::smoothness_loss(&b, &inst.gt).unwrap();
            let numeric = central_difference(|x| smoothness_loss_maps(x, &y, 8, 8).unwrap(), &b, STEP);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-3, "{err}");
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} instances usable");
    }

    #[test]
    fn overall_gradient_on_sixteen_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cases, _) = accepted(&mut rng, 1, |rng| {
            let inst = random_instance(rng, 16);
            let aux: Vec<ClassMap> = (0..AUX_HEADS).map(|_| random_logits(rng, &inst.gt)).collect();
            let fin = random_logits(rng, &inst.gt);
            smoothness_well_conditioned(&fin, &inst.gt, inst.schedule.gamma).then_some((aux, fin, inst))
        });
        let (aux, fin, inst) = &cases[0];
        let err = check_overall(aux, fin, inst).unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn small_suite_passes() {
        let report = run_suite(8, 3, 1).unwrap();
        for e in &report.entries {
            assert!(e.passed, "{e:?}");
        }
    }
}
