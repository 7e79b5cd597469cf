use rand::Rng;

use super::blocks::{
    confidence_map, conv_block, de_block, gc_block, ConvBlock, DeBlock, GcBlock, Head, ParamSource,
};
use super::config::{NetworkConfig, ENCODER_BLOCKS};
use crate::error::{contract, Result};
use crate::nn::{Graph, ParameterSet, Tensor, Var};

/// Hand-segmentation encoder-decoder: strided conv blocks down, upsample + conv + skip-add up,
/// and a one-channel logit head.
#[derive(Clone, Debug)]
pub struct SegNet {
    encoder: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
    head: Head,
}

/// The occlusion-prediction network.
#[derive(Clone, Debug)]
pub struct OcclusionNet {
    encoder: Vec<ConvBlock>,
    decoder: Vec<DecoderBlock>,
    /// `heads[0]` reads the bottleneck (confidence only); `heads[i]` follows decoder block `i`.
    heads: Vec<Head>,
    final_head: Head,
    aux_blocks: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub gc: Option<GcBlock>,
    pub de: DeBlock,
    pub conv: ConvBlock,
}

/// Variables produced by one occlusion forward pass on a [`Graph`].
#[derive(Clone, Debug)]
pub struct PyramidVars {
    /// Aux logits upsampled to the input size, ordered by decoder block.
    pub aux: Vec<Var>,
    pub final_logits: Var,
    /// Encoder output at 1/32 resolution.
    pub bottleneck: Var,
}

/// Both networks bound to the parameter names of one [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Networks {
    pub config: NetworkConfig,
    pub seg: SegNet,
    pub occ: OcclusionNet,
}

impl Networks {
    fn declare<R: Rng + ?Sized>(config: &NetworkConfig, src: &mut ParamSource<'_, R>) -> Result<Self> {
        config.validate()?;
        let groups = config.gn_groups;
        let slope = config.leaky_slope;

        let mut seg_encoder = Vec::new();
        let mut cin = 3;
        for (i, &c) in config.seg_channels.iter().enumerate() {
            seg_encoder.push(ConvBlock::declare(src, &format!("seg.enc{}", i + 1), cin, c, 2, groups, slope)?);
            cin = c;
        }
        let mut seg_decoder = Vec::new();
        let levels = config.seg_channels.len();
        for i in (0..levels).rev() {
            let out = if i == 0 { config.seg_channels[0] } else { config.seg_channels[i - 1] };
            seg_decoder.push(ConvBlock::declare(
                src,
                &format!("seg.dec{}", levels - i),
                cin,
                out,
                1,
                groups,
                slope,
            )?);
            cin = out;
        }
        let seg_head = Head::declare(src, "seg.head", cin, 1)?;

        let mut encoder = Vec::new();
        let mut cin = config.in_channels;
        for (i, &c) in config.encoder_channels.iter().enumerate() {
            encoder.push(ConvBlock::declare(src, &format!("occ.enc{}", i + 1), cin, c, 2, groups, slope)?);
            cin = c;
        }
        let classes = config.class_count;
        let mut heads = vec![Head::declare(src, "occ.head0", cin, classes)?];
        let mut decoder = Vec::new();
        for b in 1..=ENCODER_BLOCKS {
            let deep = config.decoder_input_channels(b);
            let skip = config.skip_channels(b);
            let out = config.decoder_channels(b);
            let gc = if config.gc_decoder_blocks.contains(&b) {
                Some(GcBlock::declare(src, &format!("occ.dec{b}.gc"), deep, config.gc_ratio)?)
            } else {
                None
            };
            let de = DeBlock::declare(src, &format!("occ.dec{b}.de"), skip, deep, out)?;
            let conv = ConvBlock::declare(src, &format!("occ.dec{b}.block"), out, out, 1, groups, slope)?;
            decoder.push(DecoderBlock { gc, de, conv });
            if b < ENCODER_BLOCKS {
                heads.push(Head::declare(src, &format!("occ.head{b}"), out, classes)?);
            }
        }
        let final_head = Head::declare(src, "occ.final", config.decoder_channels(ENCODER_BLOCKS), classes)?;

        Ok(Networks {
            config: config.clone(),
            seg: SegNet {
                encoder: seg_encoder,
                decoder: seg_decoder,
                head: seg_head,
            },
            occ: OcclusionNet {
                encoder,
                decoder,
                heads,
                final_head,
                aux_blocks: config.aux_head_blocks.iter().copied().collect(),
            },
        })
    }

    /// Builds the networks and freshly initialized parameters for them.
    pub fn init<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<(Self, ParameterSet)> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let nets = {
            let mut src = ParamSource::Init {
                params: &mut params,
                rng,
                std: config.init_std,
            };
            Self::declare(config, &mut src)?
        };
        Ok((nets, params))
    }

    /// Binds to an existing parameter set, checking every name and shape.
    pub fn bind(config: &NetworkConfig, params: &ParameterSet) -> Result<Self> {
        let mut src: ParamSource<'_, rand_chacha::ChaCha8Rng> = ParamSource::Bind { params };
        let nets = Self::declare(config, &mut src)?;
        let expected: usize = nets.param_names_len();
        if expected != params.len() {
            return Err(contract(format!(
                "parameter set has {} arrays, architecture declares {expected}",
                params.len()
            )));
        }
        Ok(nets)
    }

    fn param_names_len(&self) -> usize {
        let block = |b: &ConvBlock| 1 + if b.norm.is_some() { 2 } else { 0 };
        let head = |h: &Head| 1 + h.conv.bias.is_some() as usize;
        let seg: usize = self.seg.encoder.iter().chain(&self.seg.decoder).map(block).sum::<usize>()
            + head(&self.seg.head);
        let occ: usize = self.occ.encoder.iter().map(block).sum::<usize>()
            + self.occ.heads.iter().map(head).sum::<usize>()
            + head(&self.occ.final_head)
            + self
                .occ
                .decoder
                .iter()
                .map(|d| block(&d.conv) + d.de.param_ids().len() + d.gc.map_or(0, |g| g.param_ids().len()))
                .sum::<usize>();
        seg + occ
    }
}

/// Random initialization of both networks' parameters.
pub fn init_params<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<ParameterSet> {
    Networks::init(config, rng).map(|(_, p)| p)
}

fn check_size(h: usize, w: usize, multiple: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(multiple) || !w.is_multiple_of(multiple) {
        return Err(contract(format!(
            "input size {h}x{w} is not a positive multiple of {multiple}"
        )));
    }
    Ok(())
}

impl SegNet {
    /// Records the forward pass; returns `1×H×W` hand logits.
    pub fn forward(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let (c, h, w) = g.value(image).shape();
        if c != 3 {
            return Err(contract(format!("segmentation expects 3 channels, got {c}")));
        }
        check_size(h, w, 1 << self.encoder.len())?;
        let mut skips = Vec::new();
        let mut x = image;
        for block in &self.encoder {
            x = conv_block(g, x, block);
            skips.push(x);
        }
        skips.pop();
        for block in &self.decoder {
            let (_, xh, xw) = g.value(x).shape();
            let up = g.resize(x, xh * 2, xw * 2);
            x = conv_block(g, up, block);
            if let Some(skip) = skips.pop() {
                x = g.add(x, skip);
            }
        }
        Ok(self.head.apply(g, x))
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }
}

impl OcclusionNet {
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<PyramidVars> {
        let (c, h, w) = g.value(input).shape();
        let expected_in = g.params().get(self.encoder[0].conv.weight).shape[1];
        if c != expected_in {
            return Err(contract(format!("occlusion net expects {expected_in} channels, got {c}")));
        }
        check_size(h, w, 1 << ENCODER_BLOCKS)?;

        let mut skips = vec![input];
        let mut x = input;
        for block in &self.encoder {
            x = conv_block(g, x, block);
            skips.push(x);
        }
        let bottleneck = skips.pop().expect("five encoder outputs");

        let mut head_logits = self.heads[0].apply(g, x);
        let mut aux = Vec::new();
        for (i, block) in self.decoder.iter().enumerate() {
            let b = i + 1;
            let skip = skips.pop().expect("skip per decoder block");
            let (sh, sw) = (g.value(skip).height(), g.value(skip).width());
            let confidence = confidence_map(g, head_logits);
            let mut deep = g.resize(x, sh, sw);
            if let Some(gc) = &block.gc {
                deep = gc_block(g, deep, gc);
            }
            let merged = de_block(g, skip, deep, confidence, &block.de)?;
            x = conv_block(g, merged, &block.conv);
            if b < ENCODER_BLOCKS {
                head_logits = self.heads[b].apply(g, x);
                if self.aux_blocks.contains(&b) {
                    aux.push(g.resize(head_logits, h, w));
                }
            }
        }
        let final_logits = self.final_head.apply(g, x);
        Ok(PyramidVars {
            aux,
            final_logits,
            bottleneck,
        })
    }

    pub fn decoder_blocks(&self) -> &[DecoderBlock] {
        &self.decoder
    }
}

/// Deep-supervision outputs of one forward pass, all `3×H×W` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsPyramid {
    pub aux: Vec<Tensor>,
    pub final_logits: Tensor,
}

/// Inference pass of the occlusion network on one preprocessed input.
pub fn occ_forward(nets: &Networks, params: &ParameterSet, input: &Tensor) -> Result<LogitsPyramid> {
    let mut g = Graph::inference(params);
    let x = g.input(input.clone());
    let vars = nets.occ.forward(&mut g, x)?;
    let final_logits = g.take_value(vars.final_logits);
    let aux = vars.aux.iter().map(|&v| g.take_value(v)).collect();
    Ok(LogitsPyramid { aux, final_logits })
}

/// Hand probabilities in `[0, 1]` for a `3×H×W` image.
pub fn seg_forward(nets: &Networks, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference(params);
    let x = g.input(image.clone());
    let logits = nets.seg.forward(&mut g, x)?;
    let mut probs = g.take_value(logits);
    for v in probs.data_mut() {
        *v = sigmoid(*v);
    }
    Ok(probs)
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
