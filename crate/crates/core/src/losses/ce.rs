use crate::dataset::{ForegroundMask, TriMask};
use crate::error::{config, contract, Result};
use crate::nn::Tensor;

use super::overall::LossSchedule;

const NORMALIZATION_TOL: f64 = 1e-5;

/// `K×H×W` per-class values in `f64` (probabilities, logits, or gradients of either).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ClassMap {
    pub fn zeros(classes: usize, height: usize, width: usize) -> Self {
        ClassMap {
            classes,
            height,
            width,
            data: vec![0.0; classes * height * width],
        }
    }

    pub fn from_vec(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(contract(format!(
                "{} values do not form a {classes}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(ClassMap {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (c, h, w) = t.shape();
        ClassMap {
            classes: c,
            height: h,
            width: w,
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            self.classes,
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.plane() + i]
    }

    /// Per-pixel argmax label.
    pub fn argmax(&self) -> TriMask {
        let plane = self.plane();
        let labels = (0..plane)
            .map(|i| {
                let mut best = 0;
                for k in 1..self.classes {
                    if self.data[k * plane + i] > self.data[best * plane + i] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        TriMask::from_labels(self.height, self.width, labels).expect("three-class map")
    }
}

/// Softmax over the class axis at every pixel.
pub fn softmax_channels(logits: &ClassMap) -> ClassMap {
    let plane = logits.plane();
    let k = logits.classes;
    let mut out = ClassMap::zeros(k, logits.height, logits.width);
    for i in 0..plane {
        let m = (0..k).map(|c| logits.at(c, i)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..k {
            let e = (logits.at(c, i) - m).exp();
            out.data[c * plane + i] = e;
            sum += e;
        }
        for c in 0..k {
            out.data[c * plane + i] /= sum;
        }
    }
    out
}

fn check_labels(map: &ClassMap, y: &TriMask) -> Result<()> {
    if map.height != y.height() || map.width != y.width() {
        return Err(contract(format!(
            "prediction is {}x{}, labels are {}x{}",
            map.height,
            map.width,
            y.height(),
            y.width()
        )));
    }
    if map.classes != 3 {
        return Err(contract(format!("expected 3 classes, got {}", map.classes)));
    }
    Ok(())
}

fn check_omega(map: &ClassMap, omega: &ForegroundMask) -> Result<()> {
    if !omega.same_shape(map.height, map.width) {
        return Err(contract("overlap mask shape differs from prediction"));
    }
    Ok(())
}

fn check_normalized(p: &ClassMap) -> Result<()> {
    let plane = p.plane();
    for i in 0..plane {
        let sum: f64 = (0..p.classes).map(|k| p.at(k, i)).sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL || (0..p.classes).any(|k| p.at(k, i) < 0.0) {
            return Err(contract(format!(
                "probabilities at pixel {i} sum to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

fn weighted_ce_probs(p: &ClassMap, y: &TriMask, weight: impl Fn(usize) -> f64) -> f64 {
    let n = p.plane();
    let total: f64 = (0..n)
        .map(|i| -weight(i) * p.at(y.at(i) as usize, i).ln())
        .sum();
    total / n as f64
}

/// Mean cross-entropy `−(1/n) Σ log p_{i, y_i}` of a normalized probability map.
pub fn cross_entropy(p: &ClassMap, y: &TriMask) -> Result<f64> {
    check_labels(p, y)?;
    check_normalized(p)?;
    Ok(weighted_ce_probs(p, y, |_| 1.0))
}

/// Focusing cross-entropy: pixel weights `αΩ_i + β`.
pub fn focusing_ce(p: &ClassMap, y: &TriMask, omega: &ForegroundMask, alpha: f64, beta: f64) -> Result<f64> {
    check_labels(p, y)?;
    check_omega(p, omega)?;
    check_normalized(p)?;
    Ok(weighted_ce_probs(p, y, |i| alpha * omega.at(i) as u8 as f64 + beta))
}

/// Progressive pixel weight `(j/N)^τ (αΩ_i − β) + 1`; the sign of β flips when the schedule
/// requests the `+β` variant.
pub fn pfce_weight(in_overlap: bool, schedule: &LossSchedule) -> Result<f64> {
    let progress = schedule.progress()?;
    let beta = if schedule.plus_beta { -schedule.beta } else { schedule.beta };
    let omega = in_overlap as u8 as f64;
    Ok(progress.powf(schedule.tau) * (schedule.alpha * omega - beta) + 1.0)
}

/// Progressively-focusing cross-entropy at the schedule's current iteration.
pub fn pfce(p: &ClassMap, y: &TriMask, omega: &ForegroundMask, schedule: &LossSchedule) -> Result<f64> {
    check_labels(p, y)?;
    check_omega(p, omega)?;
    check_normalized(p)?;
    let (w_in, w_out) = (pfce_weight(true, schedule)?, pfce_weight(false, schedule)?);
    Ok(weighted_ce_probs(p, y, |i| if omega.at(i) { w_in } else { w_out }))
}

/// Weighted cross-entropy on raw logits, `−(1/n) Σ w_i log softmax(z_i)_{y_i}`, and its
/// gradient `w_i (softmax(z_i) − onehot(y_i)) / n`.
pub fn weighted_ce_logits(logits: &ClassMap, y: &TriMask, weights: &[f64]) -> Result<(f64, ClassMap)> {
    check_labels(logits, y)?;
    let n = logits.plane();
    if weights.len() != n {
        return Err(contract("one weight per pixel required"));
    }
    let probs = softmax_channels(logits);
    let mut grad = ClassMap::zeros(logits.classes, logits.height, logits.width);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let label = y.at(i) as usize;
        let m = (0..logits.classes)
            .map(|k| logits.at(k, i))
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..logits.classes)
            .map(|k| (logits.at(k, i) - m).exp())
            .sum::<f64>()
            .ln();
        total += weights[i] * (lse - logits.at(label, i));
        for k in 0..logits.classes {
            let onehot = if k == label { 1.0 } else { 0.0 };
            grad.data[k * n + i] = weights[i] * (probs.at(k, i) - onehot) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

pub fn cross_entropy_logits(logits: &ClassMap, y: &TriMask) -> Result<(f64, ClassMap)> {
    weighted_ce_logits(logits, y, &vec![1.0; logits.plane()])
}

pub fn focusing_ce_logits(
    logits: &ClassMap,
    y: &TriMask,
    omega: &ForegroundMask,
    alpha: f64,
    beta: f64,
) -> Result<(f64, ClassMap)> {
    check_omega(logits, omega)?;
    let weights: Vec<f64> = (0..logits.plane())
        .map(|i| alpha * omega.at(i) as u8 as f64 + beta)
        .collect();
    weighted_ce_logits(logits, y, &weights)
}

pub fn pfce_logits(
    logits: &ClassMap,
    y: &TriMask,
    omega: &ForegroundMask,
    schedule: &LossSchedule,
) -> Result<(f64, ClassMap)> {
    check_omega(logits, omega)?;
    if schedule.total_iterations == 0 {
        return Err(config("total iteration count N must be positive"));
    }
    let (w_in, w_out) = (pfce_weight(true, schedule)?, pfce_weight(false, schedule)?);
    let weights: Vec<f64> = (0..logits.plane())
        .map(|i| if omega.at(i) { w_in } else { w_out })
        .collect();
    weighted_ce_logits(logits, y, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(p_true: f64, label: u8) -> (ClassMap, TriMask) {
        let rest = (1.0 - p_true) / 2.0;
        let mut data = vec![rest; 3];
        data[label as usize] = p_true;
        (
            ClassMap::from_vec(3, 1, 1, data).unwrap(),
            TriMask::from_labels(1, 1, vec![label]).unwrap(),
        )
    }

    fn schedule(j: u64, n: u64) -> LossSchedule {
        LossSchedule {
            iteration: j,
            total_iterations: n,
            ..LossSchedule::default()
        }
    }

    #[test]
    fn certain_prediction_has_zero_loss() {
        let (p, y) = single_pixel(1.0, 2);
        assert_eq!(cross_entropy(&p, &y).unwrap(), 0.0);
    }

    #[test]
    fn uniform_prediction_costs_log_three() {
        let p = ClassMap::from_vec(3, 2, 2, vec![1.0 / 3.0; 12]).unwrap();
        let y = TriMask::from_labels(2, 2, vec![0, 1, 2, 1]).unwrap();
        assert!((cross_entropy(&p, &y).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((3f64.ln() - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn unnormalized_probabilities_rejected() {
        let p = ClassMap::from_vec(3, 1, 1, vec![0.5, 0.5, 0.5]).unwrap();
        let y = TriMask::from_labels(1, 1, vec![0]).unwrap();
        assert!(matches!(cross_entropy(&p, &y), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn focusing_weights_inside_overlap() {
        let (p, y) = single_pixel(0.5, 1);
        let omega = ForegroundMask::full(1, 1);
        let v = focusing_ce(&p, &y, &omega, 0.4, 0.2).unwrap();
        assert!((v - (-0.6 * 0.5f64.ln())).abs() < 1e-12);
        assert!((v - 0.4159).abs() < 1e-4);
    }

    #[test]
    fn focusing_reductions() {
        let p = ClassMap::from_vec(3, 1, 2, vec![0.2, 0.5, 0.3, 0.1, 0.5, 0.4]).unwrap();
        let y = TriMask::from_labels(1, 2, vec![1, 2]).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        let empty = ForegroundMask::new(1, 2);
        assert!((focusing_ce(&p, &y, &empty, 0.4, 0.2).unwrap() - 0.2 * ce).abs() < 1e-12);
        let any = ForegroundMask::from_values(1, 2, vec![1, 0]).unwrap();
        assert_eq!(focusing_ce(&p, &y, &any, 0.0, 1.0).unwrap(), ce);
    }

    #[test]
    fn pfce_endpoints() {
        let p = ClassMap::from_vec(3, 1, 2, vec![0.2, 0.5, 0.3, 0.1, 0.5, 0.4]).unwrap();
        let y = TriMask::from_labels(1, 2, vec![1, 2]).unwrap();
        let omega = ForegroundMask::from_values(1, 2, vec![1, 0]).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        assert!((pfce(&p, &y, &omega, &schedule(0, 100)).unwrap() - ce).abs() < 1e-12);

        let (p1, y1) = single_pixel(0.5, 2);
        let inside = pfce(&p1, &y1, &ForegroundMask::full(1, 1), &schedule(100, 100)).unwrap();
        let outside = pfce(&p1, &y1, &ForegroundMask::new(1, 1), &schedule(100, 100)).unwrap();
        assert!((inside - 0.8318).abs() < 1e-4, "{inside}");
        assert!((outside - 0.5545).abs() < 1e-4, "{outside}");
    }

    #[test]
    fn pfce_weights_are_monotone_in_progress() {
        let mut prev_in = f64::NEG_INFINITY;
        let mut prev_out = f64::INFINITY;
        for j in 0..=50 {
            let s = schedule(j, 50);
            let (w_in, w_out) = (pfce_weight(true, &s).unwrap(), pfce_weight(false, &s).unwrap());
            assert!(w_in >= prev_in && w_out <= prev_out);
            assert!((1.0..=1.2 + 1e-12).contains(&w_in));
            assert!((0.8 - 1e-12..=1.0).contains(&w_out));
            prev_in = w_in;
            prev_out = w_out;
        }
    }

    #[test]
    fn pfce_zero_total_iterations_is_config_error() {
        let (p, y) = single_pixel(0.5, 2);
        let err = pfce(&p, &y, &ForegroundMask::full(1, 1), &schedule(0, 0)).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn plus_beta_variant_flips_the_outside_weight() {
        let s = LossSchedule {
            plus_beta: true,
            ..schedule(10, 10)
        };
        assert!((pfce_weight(false, &s).unwrap() - 1.2).abs() < 1e-12);
        assert!((pfce_weight(true, &s).unwrap() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn logits_and_probability_forms_agree() {
        let logits = ClassMap::from_vec(3, 1, 3, vec![0.3, -1.0, 2.0, 1.5, 0.2, -0.7, -0.4, 0.9, 0.1]).unwrap();
        let y = TriMask::from_labels(1, 3, vec![0, 2, 1]).unwrap();
        let omega = ForegroundMask::from_values(1, 3, vec![1, 1, 0]).unwrap();
        let p = softmax_channels(&logits);
        let (a, _) = cross_entropy_logits(&logits, &y).unwrap();
        assert!((a - cross_entropy(&p, &y).unwrap()).abs() < 1e-12);
        let (b, _) = focusing_ce_logits(&logits, &y, &omega, 0.4, 0.2).unwrap();
        assert!((b - focusing_ce(&p, &y, &omega, 0.4, 0.2).unwrap()).abs() < 1e-12);
        let s = schedule(7, 20);
        let (c, _) = pfce_logits(&logits, &y, &omega, &s).unwrap();
        assert!((c - pfce(&p, &y, &omega, &s).unwrap()).abs() < 1e-12);
    }
}
