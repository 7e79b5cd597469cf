//! Building blocks shared by both networks: conv blocks, global context, detail enhancement,
//! and prediction heads.

use rand::Rng;

use crate::error::{contract, Result};
use crate::nn::{Graph, ParamId, ParamKind, ParameterSet, Var};

/// Resolves parameter names to ids, either by registering fresh arrays or by binding to an
/// existing set.
pub(crate) enum ParamSource<'a, R: Rng + ?Sized> {
    Init { params: &'a mut ParameterSet, rng: &'a mut R, std: f32 },
    Bind { params: &'a ParameterSet },
}

impl<R: Rng + ?Sized> ParamSource<'_, R> {
    pub(crate) fn declare(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> Result<ParamId> {
        match self {
            ParamSource::Init { params, rng, std } => Ok(params.register(name, shape, kind, *std, *rng)),
            ParamSource::Bind { params } => {
                let id = params
                    .id(name)
                    .ok_or_else(|| contract(format!("parameter set lacks `{name}`")))?;
                let found = &params.get(id).shape;
                if found != shape {
                    return Err(contract(format!(
                        "parameter `{name}` has shape {found:?}, architecture expects {shape:?}"
                    )));
                }
                Ok(id)
            }
        }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, bias: bool) -> Result<Conv> {
        let weight = self.declare(
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            ParamKind::ConvWeight,
        )?;
        let bias = if bias {
            Some(self.declare(&format!("{name}.bias"), &[cout], ParamKind::Bias)?)
        } else {
            None
        };
        Ok(Conv { weight, bias, kernel })
    }

    fn norm(&mut self, name: &str, channels: usize) -> Result<Norm> {
        Ok(Norm {
            scale: self.declare(&format!("{name}.scale"), &[channels], ParamKind::NormScale)?,
            shift: self.declare(&format!("{name}.shift"), &[channels], ParamKind::NormShift)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
}

impl Conv {
    pub fn apply(&self, g: &mut Graph, x: Var, stride: usize) -> Var {
        g.conv2d(x, self.weight, self.bias, self.kernel, stride, self.kernel / 2)
    }

    pub fn out_channels(&self, params: &ParameterSet) -> usize {
        params.get(self.weight).shape[0]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub scale: ParamId,
    pub shift: ParamId,
}

/// 3×3 conv → group norm → leaky ReLU. Without `norm` the block skips normalization.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Option<Norm>,
    pub groups: usize,
    pub slope: f32,
    pub stride: usize,
}

impl ConvBlock {
    pub(crate) fn declare<R: Rng + ?Sized>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        groups: usize,
        slope: f32,
    ) -> Result<Self> {
        Ok(ConvBlock {
            conv: src.conv(&format!("{name}.conv"), cin, cout, 3, false)?,
            norm: Some(src.norm(&format!("{name}.gn"), cout)?),
            groups,
            slope,
            stride,
        })
    }
}

/// Runs one conv block on `x`. The input channel count must match the conv weights.
pub fn conv_block(g: &mut Graph, x: Var, block: &ConvBlock) -> Var {
    let mut y = block.conv.apply(g, x, block.stride);
    if let Some(norm) = block.norm {
        y = g.group_norm(y, norm.scale, norm.shift, block.groups);
    }
    g.leaky_relu(y, block.slope)
}

/// Global-context block: attention pooling to one context vector, a bottleneck transform,
/// and a broadcast residual add.
#[derive(Clone, Copy, Debug)]
pub struct GcBlock {
    pub key: Conv,
    pub reduce: Conv,
    pub norm: Norm,
    pub expand: Conv,
}

impl GcBlock {
    pub(crate) fn declare<R: Rng + ?Sized>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        channels: usize,
        ratio: usize,
    ) -> Result<Self> {
        let hidden = (channels / ratio).max(1);
        Ok(GcBlock {
            key: src.conv(&format!("{name}.key"), channels, 1, 1, true)?,
            reduce: src.conv(&format!("{name}.reduce"), channels, hidden, 1, true)?,
            norm: src.norm(&format!("{name}.ln"), hidden)?,
            expand: src.conv(&format!("{name}.expand"), hidden, channels, 1, true)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.key.weight, self.reduce.weight, self.norm.scale, self.norm.shift];
        ids.extend([self.key.bias, self.reduce.bias, self.expand.bias].into_iter().flatten());
        ids.push(self.expand.weight);
        ids
    }
}

/// Returns `(output, transform)`, where `transform` is the `C×1×1` vector added at every position.
pub fn gc_block_parts(g: &mut Graph, x: Var, block: &GcBlock) -> (Var, Var) {
    let logits = block.key.apply(g, x, 1);
    let context = g.gc_pool(x, logits);
    let t = block.reduce.apply(g, context, 1);
    let t = g.group_norm(t, block.norm.scale, block.norm.shift, 1);
    let t = g.relu(t);
    let t = block.expand.apply(g, t, 1);
    (g.add_broadcast(x, t), t)
}

pub fn gc_block(g: &mut Graph, x: Var, block: &GcBlock) -> Var {
    gc_block_parts(g, x, block).0
}

/// 1×1 conv to class logits.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub conv: Conv,
}

impl Head {
    pub(crate) fn declare<R: Rng + ?Sized>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        cin: usize,
        classes: usize,
    ) -> Result<Self> {
        Ok(Head {
            conv: src.conv(name, cin, classes, 1, true)?,
        })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        self.conv.apply(g, x, 1)
    }
}

/// Per-pixel maximum class probability of the given logits; values lie in `[1/C, 1]`.
pub fn confidence_map(g: &mut Graph, logits: Var) -> Var {
    g.max_softmax(logits)
}

/// Detail-enhancement merge of a shallow skip feature with an (already upsampled) deep feature.
#[derive(Clone, Copy, Debug)]
pub struct DeBlock {
    /// 1×1 projection of the deep feature onto the skip width.
    pub project: Conv,
    /// 3×3 merge conv.
    pub merge: Conv,
}

impl DeBlock {
    pub(crate) fn declare<R: Rng + ?Sized>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        skip_channels: usize,
        deep_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Ok(DeBlock {
            project: src.conv(&format!("{name}.project"), deep_channels, skip_channels, 1, true)?,
            merge: src.conv(&format!("{name}.merge"), skip_channels, out_channels, 3, true)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [
            Some(self.project.weight),
            self.project.bias,
            Some(self.merge.weight),
            self.merge.bias,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

/// Weight field `2 − 1.5·Up(M)` at the skip resolution; maps `M ∈ [1/3, 1]` onto `[1.5, 0.5]`.
pub fn de_weight_field(g: &mut Graph, confidence: Var, height: usize, width: usize) -> Var {
    let up = g.resize(confidence, height, width);
    g.affine(up, -1.5, 2.0)
}

/// `F′_l = (2 − 1.5·Up(M)) ⊙ F_l`, before the merge.
pub fn de_enhance(g: &mut Graph, skip: Var, confidence: Var) -> Var {
    let (h, w) = (g.value(skip).height(), g.value(skip).width());
    let field = de_weight_field(g, confidence, h, w);
    g.mul_field(skip, field)
}

/// `conv3×3(F′_l + project(Up(F_h)))`. `deep` must already have the skip's spatial size.
pub fn de_block(g: &mut Graph, skip: Var, deep: Var, confidence: Var, block: &DeBlock) -> Result<Var> {
    let (sv, dv) = (g.value(skip), g.value(deep));
    if (sv.height(), sv.width()) != (dv.height(), dv.width()) {
        return Err(contract(format!(
            "detail enhancement needs matching sizes, skip {:?} vs deep {:?}",
            sv.shape(),
            dv.shape()
        )));
    }
    let enhanced = de_enhance(g, skip, confidence);
    let projected = block.project.apply(g, deep, 1);
    let sum = g.add(enhanced, projected);
    Ok(block.merge.apply(g, sum, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        let n = Normal::new(0.0f32, 1.0).unwrap();
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| n.sample(rng)).collect())
    }

    fn gc_fixture() -> (ParameterSet, GcBlock) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParameterSet::new();
        let block = {
            let mut src = ParamSource::Init {
                params: &mut params,
                rng: &mut rng,
                std: 0.1,
            };
            GcBlock::declare(&mut src, "gc", 16, 4).unwrap()
        };
        (params, block)
    }

    #[test]
    fn leaky_relu_without_norm_scales_negative_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParameterSet::new();
        let w = params.register("w", &[1, 1, 3, 3], ParamKind::ConvWeight, 0.1, &mut rng);
        // Center tap 1, others 0: the conv is the identity.
        params.get_mut(w).data = vec![0., 0., 0., 0., 1., 0., 0., 0., 0.];
        let block = ConvBlock {
            conv: Conv { weight: w, bias: None, kernel: 3 },
            norm: None,
            groups: 1,
            slope: 0.1,
            stride: 1,
        };
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::filled(1, 4, 4, -1.0));
        let y = conv_block(&mut g, x, &block);
        assert!(g.value(y).data().iter().all(|&v| (v + 0.1).abs() < 1e-7));
    }

    #[test]
    fn stride_two_halves_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParameterSet::new();
        let block = {
            let mut src = ParamSource::Init { params: &mut params, rng: &mut rng, std: 0.1 };
            ConvBlock::declare(&mut src, "b", 6, 16, 2, 8, 0.1).unwrap()
        };
        let mut g = Graph::inference(&params);
        let x = g.input(Tensor::zeros(6, 320, 320));
        let y = conv_block(&mut g, x, &block);
        assert_eq!(g.value(y).shape(), (16, 160, 160));
    }

    #[test]
    fn group_norm_groups_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParameterSet::new();
        let s = params.register("s", &[16], ParamKind::NormScale, 0.0, &mut rng);
        let t = params.register("t", &[16], ParamKind::NormShift, 0.0, &mut rng);
        let input = random(&mut rng, 16, 10, 10);
        let mut g = Graph::new(&params);
        let x = g.input(input);
        let y = g.group_norm(x, s, t, 8);
        let out = g.value(y).data();
        let per_group = 2 * 100;
        for group in out.chunks(per_group) {
            let mean = group.iter().map(|&v| v as f64).sum::<f64>() / per_group as f64;
            let var = group.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per_group as f64;
            assert!(mean.abs() < 1e-4, "group mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "group variance {var}");
        }
    }

    #[test]
    fn gc_block_with_zeroed_expand_is_identity() {
        let (mut params, block) = gc_fixture();
        params.get_mut(block.expand.weight).data.fill(0.0);
        params.get_mut(block.expand.bias.unwrap()).data.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = random(&mut rng, 16, 6, 7);
        let mut g = Graph::new(&params);
        let x = g.input(input.clone());
        let y = gc_block(&mut g, x, &block);
        assert_eq!(g.value(y), &input);
    }

    #[test]
    fn gc_block_adds_same_vector_everywhere() {
        let (params, block) = gc_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random(&mut rng, 16, 5, 5);
        let mut g = Graph::new(&params);
        let x = g.input(input.clone());
        let y = gc_block(&mut g, x, &block);
        let out = g.value(y);
        let mut max_dev = 0.0f32;
        for c in 0..16 {
            let d0 = out.at(c, 0, 0) - input.at(c, 0, 0);
            for yy in 0..5 {
                for xx in 0..5 {
                    let d = out.at(c, yy, xx) - input.at(c, yy, xx);
                    max_dev = max_dev.max((d - d0).abs());
                }
            }
        }
        assert!(max_dev < 1e-5, "spatial deviation {max_dev}");
    }

    #[test]
    fn gc_attention_on_constant_input_returns_the_constant() {
        let (params, block) = gc_fixture();
        let feature: Vec<f32> = (0..16).map(|c| c as f32 * 0.1 - 0.5).collect();
        let mut input = Tensor::zeros(16, 4, 4);
        for (c, &v) in feature.iter().enumerate() {
            for p in 0..16 {
                input.data_mut()[c * 16 + p] = v;
            }
        }
        let mut g = Graph::new(&params);
        let x = g.input(input);
        let logits = block.key.apply(&mut g, x, 1);
        let attn = crate::nn::softmax(g.value(logits).data());
        assert!(attn.iter().all(|&a| (a - 1.0 / 16.0).abs() < 1e-7));
        let ctx = g.gc_pool(x, logits);
        for (c, &v) in g.value(ctx).data().iter().zip(&feature) {
            assert!((c - v).abs() < 1e-6);
        }
    }

    #[test]
    fn confidence_of_peaked_and_flat_logits() {
        let params = ParameterSet::new();
        let mut g = Graph::new(&params);
        let mut logits = Tensor::zeros(3, 1, 2);
        logits.set(0, 0, 0, 10.0);
        let x = g.input(logits);
        let m = confidence_map(&mut g, x);
        let m = g.value(m);
        assert!((m.at(0, 0, 0) - 1.0).abs() < 1e-4);
        assert!((m.at(0, 0, 1) - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn de_weight_endpoints() {
        let params = ParameterSet::new();
        for (m, expected) in [(1.0f32, 0.5f32), (1.0 / 3.0, 1.5), (2.0 / 3.0, 1.0)] {
            let mut g = Graph::new(&params);
            let conf = g.input(Tensor::filled(1, 2, 2, m));
            let field = de_weight_field(&mut g, conf, 8, 8);
            assert!(g.value(field).data().iter().all(|&w| (w - expected).abs() < 1e-6));
        }
    }

    #[test]
    fn de_enhance_is_linear_in_skip() {
        let params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let skip = random(&mut rng, 4, 8, 8);
        let conf = Tensor::from_vec(
            1,
            4,
            4,
            (0..16).map(|i| 1.0 / 3.0 + (i as f32) / 24.0).collect(),
        );
        let run = |s: Tensor| {
            let mut g = Graph::new(&params);
            let s = g.input(s);
            let c = g.input(conf.clone());
            let out = de_enhance(&mut g, s, c);
            g.value(out).clone()
        };
        let once = run(skip.clone());
        let mut doubled = skip.clone();
        doubled.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        let twice = run(doubled);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((2.0 * a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}
