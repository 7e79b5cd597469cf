use serde::{Deserialize, Serialize};

use crate::dataset::{ForegroundMask, TriMask};
use crate::error::{config, contract, Result};
use crate::model::LogitsPyramid;

use super::ce::{cross_entropy_logits, pfce_logits, ClassMap};
use super::smooth::smoothness_loss_logits;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// Current iteration `j`.
    pub iteration: u64,
    /// Total iterations `N`.
    pub total_iterations: u64,
    /// Ablation: weight `(j/N)^τ(αΩ + β) + 1` instead of `− β`.
    pub plus_beta: bool,
}

impl Default for LossSchedule {
    fn default() -> Self {
        LossSchedule {
            alpha: 0.4,
            beta: 0.2,
            tau: 0.8,
            gamma: 100.0,
            a1: 0.2,
            a2: 0.2,
            a3: 1.0 / 30.0,
            iteration: 0,
            total_iterations: 1,
            plus_beta: false,
        }
    }
}

impl LossSchedule {
    pub fn at(&self, iteration: u64) -> Self {
        LossSchedule {
            iteration,
            ..self.clone()
        }
    }

    /// `j / N`.
    pub fn progress(&self) -> Result<f64> {
        if self.total_iterations == 0 {
            return Err(config("total iteration count N must be positive"));
        }
        if self.iteration > self.total_iterations {
            return Err(contract(format!(
                "iteration {} beyond total {}",
                self.iteration, self.total_iterations
            )));
        }
        Ok(self.iteration as f64 / self.total_iterations as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta, self.tau, self.gamma, self.a1, self.a2, self.a3];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config("loss weights must be finite and non-negative"));
        }
        self.progress().map(|_| ())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce_aux: Vec<f64>,
    pub l_p: f64,
    pub l_s: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(l_ce_aux: Vec<f64>, l_p: f64, l_s: f64, schedule: &LossSchedule) -> Self {
        let total = schedule.a1 * l_ce_aux.iter().sum::<f64>() + schedule.a2 * l_p + schedule.a3 * l_s;
        LossBreakdown {
            l_ce_aux,
            l_p,
            l_s,
            total,
        }
    }

    /// Names and values of the non-finite terms.
    pub fn non_finite_terms(&self) -> Vec<String> {
        let mut bad: Vec<String> = self
            .l_ce_aux
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| format!("l_ce_{}", i + 1))
            .collect();
        for (name, v) in [("l_p", self.l_p), ("l_s", self.l_s), ("total", self.total)] {
            if !v.is_finite() {
                bad.push(name.to_string());
            }
        }
        bad
    }
}

/// Gradient of the overall loss with respect to every head's logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidGrad {
    pub aux: Vec<ClassMap>,
    pub final_logits: ClassMap,
}

/// Overall loss on `f64` logit maps: aux CE terms from the side heads, progressive CE and
/// smoothness on the final head.
pub fn overall_loss_maps(
    aux: &[ClassMap],
    final_logits: &ClassMap,
    gt: &TriMask,
    omega: &ForegroundMask,
    schedule: &LossSchedule,
) -> Result<(LossBreakdown, PyramidGrad)> {
    let mut l_ce = Vec::with_capacity(aux.len());
    let mut aux_grads = Vec::with_capacity(aux.len());
    for logits in aux {
        let (l, mut g) = cross_entropy_logits(logits, gt)?;
        g.data.iter_mut().for_each(|v| *v *= schedule.a1);
        l_ce.push(l);
        aux_grads.push(g);
    }
    let (l_p, mut g_final) = pfce_logits(final_logits, gt, omega, schedule)?;
    let (l_s, g_s) = smoothness_loss_logits(final_logits, gt, schedule.gamma)?;
    for (g, s) in g_final.data.iter_mut().zip(&g_s.data) {
        *g = schedule.a2 * *g + schedule.a3 * s;
    }
    Ok((
        LossBreakdown::combine(l_ce, l_p, l_s, schedule),
        PyramidGrad {
            aux: aux_grads,
            final_logits: g_final,
        },
    ))
}

pub fn overall_loss(
    pyramid: &LogitsPyramid,
    gt: &TriMask,
    omega: &ForegroundMask,
    schedule: &LossSchedule,
) -> Result<(LossBreakdown, PyramidGrad)> {
    let aux: Vec<ClassMap> = pyramid.aux.iter().map(ClassMap::from_tensor).collect();
    overall_loss_maps(&aux, &ClassMap::from_tensor(&pyramid.final_logits), gt, omega, schedule)
}
