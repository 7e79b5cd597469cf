//! Soft-argmax label maps and the Sobel-orientation smoothness loss.

use crate::dataset::TriMask;
use crate::error::{contract, Result};

use super::ce::ClassMap;

/// Minimum unnormalized Sobel magnitude for an orientation to count as defined.
pub const GRAD_EPS: f64 = 1e-6;
/// Dot products are clamped to `[−1 + ARCCOS_CLAMP, 1 − ARCCOS_CLAMP]` before `acos`.
pub const ARCCOS_CLAMP: f64 = 1e-7;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// `b_i = Σ_k k·softmax(γ z_i)_k` with classes numbered from 1. Returned alongside the
/// tempered softmax for reuse in the gradient.
fn soft_argmax_with_probs(logits: &ClassMap, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = logits.plane();
    let k = logits.classes;
    let mut probs = vec![0.0; k * n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        let m = (0..k).map(|c| gamma * logits.at(c, i)).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..k {
            let e = (gamma * logits.at(c, i) - m).exp();
            probs[c * n + i] = e;
            sum += e;
        }
        let mut acc = 0.0;
        for c in 0..k {
            probs[c * n + i] /= sum;
            acc += (c + 1) as f64 * probs[c * n + i];
        }
        b[i] = acc;
    }
    (b, probs)
}

/// Soft-argmax label map (values in `[1, C]`) of raw logits at temperature `gamma`.
pub fn soft_argmax(logits: &ClassMap, gamma: f64) -> Vec<f64> {
    soft_argmax_with_probs(logits, gamma).0
}

/// Unit Sobel gradient directions of a real `H×W` map, with replicate borders.
#[derive(Clone, Debug, PartialEq)]
pub struct Orientation {
    pub height: usize,
    pub width: usize,
    /// Raw Sobel responses.
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// Unit vectors; zero where invalid.
    pub ox: Vec<f64>,
    pub oy: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub valid: Vec<bool>,
}

fn sobel(map: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (dy, (rowx, rowy)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let xx = (x + dx).saturating_sub(1).min(w - 1);
                    let v = map[yy * w + xx];
                    sx += rowx[dx] * v;
                    sy += rowy[dx] * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

/// Adjoint of [`sobel`]: scatters the gradient fields back to the input map.
fn sobel_adjoint(dgx: &[f64], dgy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (ax, ay) = (dgx[y * w + x], dgy[y * w + x]);
            if ax == 0.0 && ay == 0.0 {
                continue;
            }
            for (dy, (rowx, rowy)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let xx = (x + dx).saturating_sub(1).min(w - 1);
                    out[yy * w + xx] += rowx[dx] * ax + rowy[dx] * ay;
                }
            }
        }
    }
    out
}

pub fn gradient_orientation(map: &[f64], height: usize, width: usize) -> Result<Orientation> {
    if height < 3 || width < 3 {
        return Err(contract(format!(
            "orientation needs at least 3x3, got {height}x{width}"
        )));
    }
    if map.len() != height * width {
        return Err(contract("map length does not match its shape"));
    }
    let (gx, gy) = sobel(map, height, width);
    let n = height * width;
    let mut ox = vec![0.0; n];
    let mut oy = vec![0.0; n];
    let mut magnitude = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let m = gx[i].hypot(gy[i]);
        magnitude[i] = m;
        if m > GRAD_EPS {
            valid[i] = true;
            ox[i] = gx[i] / m;
            oy[i] = gy[i] / m;
        }
    }
    Ok(Orientation {
        height,
        width,
        gx,
        gy,
        ox,
        oy,
        magnitude,
        valid,
    })
}

/// Angle terms shared by value and gradient: `(loss, per-pixel dL/dc, count)`.
fn angular_terms(ob: &Orientation, oy: &Orientation) -> (f64, Vec<f64>, usize) {
    let n = ob.valid.len();
    let lo = -1.0 + ARCCOS_CLAMP;
    let hi = 1.0 - ARCCOS_CLAMP;
    let mut sum = 0.0;
    let mut dcos = vec![0.0; n];
    let mut count = 0usize;
    for i in 0..n {
        if !(ob.valid[i] && oy.valid[i]) {
            continue;
        }
        count += 1;
        let raw = ob.ox[i] * oy.ox[i] + ob.oy[i] * oy.oy[i];
        let c = raw.clamp(lo, hi);
        let theta = c.acos();
        sum += theta * theta;
        if raw > lo && raw < hi {
            dcos[i] = -2.0 * theta / (1.0 - c * c).sqrt();
        }
    }
    if count == 0 {
        return (0.0, dcos, 0);
    }
    let inv = 1.0 / count as f64;
    dcos.iter_mut().for_each(|d| *d *= inv);
    (sum * inv, dcos, count)
}

/// Mean squared angle between the Sobel orientations of two real maps, over pixels where
/// both orientations are defined. Zero when no pixel qualifies.
pub fn smoothness_loss_maps(b: &[f64], y: &[f64], height: usize, width: usize) -> Result<f64> {
    if b.len() != y.len() {
        return Err(contract("smoothness maps differ in size"));
    }
    let ob = gradient_orientation(b, height, width)?;
    let oy = gradient_orientation(y, height, width)?;
    Ok(angular_terms(&ob, &oy).0)
}

/// Smoothness loss of a label map `b` against ground truth on the `{1, 2, 3}` scale, with
/// its gradient with respect to `b`.
pub(crate) fn smoothness_with_grad(b: &[f64], y: &[f64], height: usize, width: usize) -> Result<(f64, Vec<f64>)> {
    if b.len() != y.len() {
        return Err(contract("smoothness maps differ in size"));
    }
    let ob = gradient_orientation(b, height, width)?;
    let oy = gradient_orientation(y, height, width)?;
    let (loss, dcos, _) = angular_terms(&ob, &oy);
    let n = b.len();
    let mut dgx = vec![0.0; n];
    let mut dgy = vec![0.0; n];
    for i in 0..n {
        if dcos[i] == 0.0 {
            continue;
        }
        // c = ô_b · ô_y, ∂c/∂g_b = (ô_y − c ô_b) / |g_b|
        let c = ob.ox[i] * oy.ox[i] + ob.oy[i] * oy.oy[i];
        let m = ob.magnitude[i];
        dgx[i] = dcos[i] * (oy.ox[i] - c * ob.ox[i]) / m;
        dgy[i] = dcos[i] * (oy.oy[i] - c * ob.oy[i]) / m;
    }
    Ok((loss, sobel_adjoint(&dgx, &dgy, height, width)))
}

/// Public form of the smoothness loss with its gradient with respect to `b`.
pub fn smoothness_loss(b: &[f64], y: &TriMask) -> Result<(f64, Vec<f64>)> {
    smoothness_with_grad(b, &y.to_class_values(), y.height(), y.width())
}

/// Smoothness loss composed with the soft-argmax, returning the gradient on the logits.
pub fn smoothness_loss_logits(logits: &ClassMap, y: &TriMask, gamma: f64) -> Result<(f64, ClassMap)> {
    if logits.height != y.height() || logits.width != y.width() {
        return Err(contract("logits and labels differ in shape"));
    }
    let (b, probs) = soft_argmax_with_probs(logits, gamma);
    let (loss, db) = smoothness_loss(&b, y)?;
    let n = logits.plane();
    let mut grad = ClassMap::zeros(logits.classes, logits.height, logits.width);
    for i in 0..n {
        if db[i] == 0.0 {
            continue;
        }
        for k in 0..logits.classes {
            let s = probs[k * n + i];
            grad.data[k * n + i] = db[i] * gamma * s * ((k + 1) as f64 - b[i]);
        }
    }
    Ok((loss, grad))
}
