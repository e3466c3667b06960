//! Generator (U-Net), patch discriminator and FCN detector.
//!
//! Layer conventions follow the usual image-to-image translation setup:
//! 4x4 kernels, leaky rectifiers (slope 0.2) on the way down, plain
//! rectifiers on the way up, instance normalization on inner stages, and
//! dropout in the first decoder stages as the only noise source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{check_side, ImageGrid, LabelMap, CtImage, PetImage};
use crate::nn::{
    apply_mask, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh,
    tanh_backward, Conv2d, Conv2dCache, ConvGeometry, ConvTranspose2d, ConvTranspose2dCache,
    InstanceNorm2d, InstanceNormCache, Param, Parameterized, Scalar, Tensor,
};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;
const DOWN: ConvGeometry = ConvGeometry::new(4, 2, 1);

/// Which conditioning channels feed the generator and discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelMode {
    /// Label only.
    #[serde(rename = "LB")]
    Label,
    /// CT only.
    #[serde(rename = "CT")]
    Ct,
    /// Label and CT.
    #[serde(rename = "M")]
    Multi,
}

impl ChannelMode {
    pub const ALL: [ChannelMode; 3] = [ChannelMode::Label, ChannelMode::Ct, ChannelMode::Multi];

    pub fn in_channels(self) -> usize {
        match self {
            ChannelMode::Label | ChannelMode::Ct => 1,
            ChannelMode::Multi => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ChannelMode::Label => "LB",
            ChannelMode::Ct => "CT",
            ChannelMode::Multi => "M",
        }
    }

    /// Conditioning planes for one study, mapped to network space `[-1, 1]`.
    pub fn conditioning(self, label: &LabelMap, ct: &CtImage) -> Vec<f32> {
        let planes: Vec<&ImageGrid> = match self {
            ChannelMode::Label => vec![label.grid()],
            ChannelMode::Ct => vec![ct.grid()],
            ChannelMode::Multi => vec![label.grid(), ct.grid()],
        };
        planes
            .into_iter()
            .flat_map(|g| g.values().iter().map(|&v| to_net(v)))
            .collect()
    }
}

impl std::fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LB" | "lb" => Ok(ChannelMode::Label),
            "CT" | "ct" => Ok(ChannelMode::Ct),
            "M" | "m" => Ok(ChannelMode::Multi),
            other => Err(Error::Validation(format!("unknown channel mode {other:?}"))),
        }
    }
}

/// `[0, 1]` image space to `[-1, 1]` network space.
pub fn to_net(v: f32) -> f32 {
    2.0 * v - 1.0
}

/// `[-1, 1]` network space back to `[0, 1]`.
pub fn from_net(v: f32) -> f32 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

/// Dropout on or off. Training draws masks from the supplied stream.
pub enum Phase<'a> {
    Train(&'a mut ChaCha8Rng),
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    /// `tanh` squashing onto `[-1, 1]`.
    Tanh,
    /// Raw logits.
    Logits,
}

/// Architecture of a U-Net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub base_width: usize,
    pub depth: usize,
    pub max_width_multiplier: usize,
    pub output: OutputKind,
    pub dropout_stages: usize,
    pub dropout_rate: f64,
}

/// `log2(size) - 2`, at least 3.
pub fn unet_depth(image_size: usize) -> usize {
    (image_size.trailing_zeros() as usize).saturating_sub(2).max(3)
}

impl UNetSpec {
    pub fn generator(mode: ChannelMode, image_size: usize, base_width: usize) -> Self {
        UNetSpec {
            in_channels: mode.in_channels(),
            image_size,
            base_width,
            depth: unet_depth(image_size),
            max_width_multiplier: 8,
            output: OutputKind::Tanh,
            dropout_stages: 3,
            dropout_rate: 0.5,
        }
    }

    pub fn detector(image_size: usize, base_width: usize) -> Self {
        UNetSpec {
            in_channels: 1,
            image_size,
            base_width,
            depth: unet_depth(image_size),
            max_width_multiplier: 8,
            output: OutputKind::Logits,
            dropout_stages: 0,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_side(self.image_size)?;
        if self.depth == 0 || self.image_size >> self.depth == 0 {
            return Err(Error::Contract(format!(
                "depth {} too large for image size {}",
                self.depth, self.image_size
            )));
        }
        if self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::Contract("widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Contract(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Output width of encoder stage `i` (0-based).
    pub fn encoder_width(&self, i: usize) -> usize {
        self.base_width * (1usize << i).min(self.max_width_multiplier)
    }
}

struct EncoderStage<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm2d<T>>,
}

struct DecoderStage<T> {
    conv: ConvTranspose2d<T>,
    norm: Option<InstanceNorm2d<T>>,
    dropout: bool,
}

struct EncoderCache<T> {
    activated: Option<Tensor<T>>,
    conv: Conv2dCache<T>,
    norm: Option<InstanceNormCache<T>>,
}

struct DecoderCache<T> {
    activated: Tensor<T>,
    carried_channels: usize,
    conv: ConvTranspose2dCache<T>,
    norm: Option<InstanceNormCache<T>>,
    mask: Option<Vec<T>>,
}

/// Intermediate values of one U-Net forward pass.
pub struct UNetCache<T> {
    encoders: Vec<EncoderCache<T>>,
    decoders: Vec<DecoderCache<T>>,
    output: Tensor<T>,
}

/// Encoder-decoder with skips: the output of encoder stage `i` (1-based) is
/// concatenated onto the output of decoder stage `depth - i`.
pub struct UNet<T> {
    spec: UNetSpec,
    encoders: Vec<EncoderStage<T>>,
    decoders: Vec<DecoderStage<T>>,
}

impl<T: Scalar> UNet<T> {
    pub fn new(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let depth = spec.depth;
        let mut encoders = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { spec.in_channels } else { spec.encoder_width(i - 1) };
            let cout = spec.encoder_width(i);
            let name = format!("enc{}", i + 1);
            // outermost and innermost encoder stages are not normalized
            let norm = (i > 0 && i + 1 < depth).then(|| InstanceNorm2d::new(&format!("{name}.norm"), cout));
            encoders.push(EncoderStage {
                conv: Conv2d::new(&format!("{name}.conv"), cin, cout, DOWN),
                norm,
            });
        }
        let mut decoders = Vec::with_capacity(depth);
        for k in 0..depth {
            let last = k + 1 == depth;
            let cin = if k == 0 {
                spec.encoder_width(depth - 1)
            } else {
                2 * spec.encoder_width(depth - 1 - k)
            };
            let cout = if last { 1 } else { spec.encoder_width(depth - 2 - k) };
            let name = format!("dec{}", k + 1);
            decoders.push(DecoderStage {
                conv: ConvTranspose2d::new(&format!("{name}.conv"), cin, cout, DOWN),
                norm: (!last).then(|| InstanceNorm2d::new(&format!("{name}.norm"), cout)),
                dropout: !last && k < spec.dropout_stages && spec.dropout_rate > 0.0,
            });
        }
        let mut net = UNet {
            spec,
            encoders,
            decoders,
        };
        init_params(&mut net, seed);
        Ok(net)
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let s = self.spec.image_size;
        if c != self.spec.in_channels || h != s || w != s {
            return Err(Error::Contract(format!(
                "network expects {}x{s}x{s} input, got {c}x{h}x{w}",
                self.spec.in_channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>, phase: Phase<'_>) -> (Tensor<T>, UNetCache<T>) {
        self.forward_impl(x, phase, false)
    }

    fn forward_impl(
        &self,
        x: &Tensor<T>,
        mut phase: Phase<'_>,
        ablate_skips: bool,
    ) -> (Tensor<T>, UNetCache<T>) {
        let depth = self.spec.depth;
        let mut skips: Vec<Tensor<T>> = Vec::with_capacity(depth);
        let mut enc_caches = Vec::with_capacity(depth);
        for (i, stage) in self.encoders.iter().enumerate() {
            let activated = (i > 0).then(|| leaky_relu(skips.last().unwrap(), LEAKY_SLOPE));
            let input = activated.as_ref().unwrap_or(x);
            let (mut y, conv) = stage.conv.forward(input);
            let norm = stage.norm.as_ref().map(|n| {
                let (z, c) = n.forward(&y);
                y = z;
                c
            });
            skips.push(y);
            enc_caches.push(EncoderCache {
                activated,
                conv,
                norm,
            });
        }

        let mut dec_caches = Vec::with_capacity(depth);
        let mut h = skips[depth - 1].clone();
        for (k, stage) in self.decoders.iter().enumerate() {
            let last = k + 1 == depth;
            let carried_channels = h.channels();
            let input = if k == 0 {
                h
            } else {
                let skip = &skips[depth - 1 - k];
                if ablate_skips {
                    Tensor::concat_channels(&h, &Tensor::zeros(skip.shape()))
                } else {
                    Tensor::concat_channels(&h, skip)
                }
            };
            let activated = relu(&input);
            let (mut y, conv) = stage.conv.forward(&activated);
            let norm = stage.norm.as_ref().map(|n| {
                let (z, c) = n.forward(&y);
                y = z;
                c
            });
            let mask = match (&mut phase, stage.dropout) {
                (Phase::Train(rng), true) => {
                    let m = dropout_mask(y.len(), self.spec.dropout_rate, *rng);
                    y = apply_mask(&y, &m);
                    Some(m)
                }
                _ => None,
            };
            if last && self.spec.output == OutputKind::Tanh {
                y = tanh(&y);
            }
            dec_caches.push(DecoderCache {
                activated,
                carried_channels,
                conv,
                norm,
                mask,
            });
            h = y;
        }
        (
            h.clone(),
            UNetCache {
                encoders: enc_caches,
                decoders: dec_caches,
                output: h,
            },
        )
    }

    /// Accumulates parameter gradients for `grad_out = dL/d(output)`.
    ///
    /// Returns the input gradient when `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: UNetCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let depth = self.spec.depth;
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
        let mut g = grad_out.clone();
        if self.spec.output == OutputKind::Tanh {
            g = tanh_backward(&cache.output, &g);
        }
        let add_skip = |slot: &mut Option<Tensor<T>>, t: Tensor<T>| match slot {
            Some(acc) => acc.add_assign(&t),
            None => *slot = Some(t),
        };
        for (k, (stage, c)) in self
            .decoders
            .iter_mut()
            .zip(cache.decoders)
            .enumerate()
            .rev()
        {
            if let Some(m) = &c.mask {
                g = apply_mask(&g, m);
            }
            if let (Some(n), Some(nc)) = (stage.norm.as_mut(), c.norm.as_ref()) {
                g = n.backward(nc, &g);
            }
            let gin = stage.conv.backward(&c.conv, &g, true).unwrap();
            let gin = relu_backward(&c.activated, &gin);
            if k == 0 {
                add_skip(&mut skip_grads[depth - 1], gin);
                break;
            }
            let (carried, skip) = gin.split_channels(c.carried_channels);
            add_skip(&mut skip_grads[depth - 1 - k], skip);
            g = carried;
        }

        let mut carry: Option<Tensor<T>> = None;
        let mut input_grad = None;
        for (i, (stage, c)) in self.encoders.iter_mut().zip(cache.encoders).enumerate().rev() {
            let mut g = match (skip_grads[i].take(), carry.take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("every encoder output feeds a later stage"),
            };
            if let (Some(n), Some(nc)) = (stage.norm.as_mut(), c.norm.as_ref()) {
                g = n.backward(nc, &g);
            }
            let need = i > 0 || need_input_grad;
            let gin = stage.conv.backward(&c.conv, &g, need);
            match (i, gin) {
                (0, gin) => input_grad = gin,
                (_, Some(gin)) => {
                    carry = Some(leaky_relu_backward(c.activated.as_ref().unwrap(), &gin, LEAKY_SLOPE))
                }
                (_, None) => unreachable!(),
            }
        }
        input_grad
    }
}

impl<T: Scalar> Parameterized<T> for UNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for e in &self.encoders {
            out.push(&e.conv.weight);
            out.push(&e.conv.bias);
            if let Some(n) = &e.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        for d in &self.decoders {
            out.push(&d.conv.weight);
            out.push(&d.conv.bias);
            if let Some(n) = &d.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.push(&mut e.conv.weight);
            out.push(&mut e.conv.bias);
            if let Some(n) = &mut e.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        for d in &mut self.decoders {
            out.push(&mut d.conv.weight);
            out.push(&mut d.conv.bias);
            if let Some(n) = &mut d.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }
}

/// Conv weights `N(0, 0.02^2)`; biases and shifts zero; scales one.
pub fn init_params<T: Scalar>(net: &mut impl Parameterized<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut() {
        if p.name.ends_with(".weight") {
            p.fill_normal(&mut rng, 0.0, INIT_STD);
        } else if p.name.ends_with(".gamma") {
            p.value.iter_mut().for_each(|v| *v = T::one());
        } else {
            p.value.iter_mut().for_each(|v| *v = T::zero());
        }
        p.zero_grad();
    }
}

/// Conditional generator: a tanh-output U-Net tied to a [`ChannelMode`].
pub struct Generator<T> {
    pub mode: ChannelMode,
    pub net: UNet<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(mode: ChannelMode, image_size: usize, base_width: usize, seed: u64) -> Result<Self> {
        Ok(Generator {
            mode,
            net: UNet::new(UNetSpec::generator(mode, image_size, base_width), seed)?,
        })
    }

    pub fn from_spec(mode: ChannelMode, spec: UNetSpec, seed: u64) -> Result<Self> {
        if spec.in_channels != mode.in_channels() || spec.output != OutputKind::Tanh {
            return Err(Error::Contract(format!(
                "generator spec does not match channel mode {mode}"
            )));
        }
        Ok(Generator {
            mode,
            net: UNet::new(spec, seed)?,
        })
    }

    pub fn image_size(&self) -> usize {
        self.net.spec().image_size
    }
}

impl<T: Scalar> Parameterized<T> for Generator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }
}

/// Synthetic PET batch in `[-1, 1]` for the stacked conditioning channels.
pub fn generator_forward<T: Scalar>(g: &Generator<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
    g.net.check_input(cond)?;
    Ok(g.net.forward(cond, Phase::Infer).0)
}

/// One row of the discriminator layer table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub input_size: usize,
    pub output_size: usize,
    pub normalized: bool,
    pub activated: bool,
}

/// Nominal strides of the five layers; a stride-2 layer falls back to stride 1
/// when its input is smaller than 16 pixels so small images keep a non-empty patch grid.
pub const DISCRIMINATOR_STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

/// 4x4 kernels, padding 1, widths `base, 2b, 4b, 8b, 1`.
pub fn discriminator_layers(
    image_size: usize,
    in_channels: usize,
    base_width: usize,
) -> Result<Vec<DiscriminatorLayer>> {
    let widths = [base_width, 2 * base_width, 4 * base_width, 8 * base_width, 1];
    let mut size = image_size;
    let mut cin = in_channels;
    let mut out = Vec::with_capacity(5);
    for (l, (&nominal, &cout)) in DISCRIMINATOR_STRIDES.iter().zip(&widths).enumerate() {
        let stride = if nominal == 2 && size < 16 { 1 } else { nominal };
        let next = ConvGeometry::new(4, stride, 1)
            .conv_out(size)
            .filter(|&s| s > 0)
            .ok_or_else(|| {
                Error::Contract(format!("discriminator layer {} has no output for {size}px input", l + 1))
            })?;
        out.push(DiscriminatorLayer {
            in_channels: cin,
            out_channels: cout,
            stride,
            input_size: size,
            output_size: next,
            normalized: (1..4).contains(&l),
            activated: l < 4,
        });
        size = next;
        cin = cout;
    }
    Ok(out)
}

/// Architecture of the patch discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub mode: ChannelMode,
    pub image_size: usize,
    pub base_width: usize,
}

struct DiscStage<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm2d<T>>,
    activated: bool,
}

struct DiscStageCache<T> {
    conv: Conv2dCache<T>,
    norm: Option<InstanceNormCache<T>>,
    output: Tensor<T>,
}

pub struct DiscriminatorCache<T> {
    stages: Vec<DiscStageCache<T>>,
    cond_channels: usize,
}

/// Five-layer convolutional discriminator emitting a grid of patch logits.
///
/// Sees the generator's conditioning channels stacked with the candidate PET.
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    table: Vec<DiscriminatorLayer>,
    stages: Vec<DiscStage<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        check_side(spec.image_size)?;
        let table = discriminator_layers(spec.image_size, spec.mode.in_channels() + 1, spec.base_width)?;
        let stages = table
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let name = format!("disc{}", l + 1);
                DiscStage {
                    conv: Conv2d::new(
                        &format!("{name}.conv"),
                        row.in_channels,
                        row.out_channels,
                        ConvGeometry::new(4, row.stride, 1),
                    ),
                    norm: row
                        .normalized
                        .then(|| InstanceNorm2d::new(&format!("{name}.norm"), row.out_channels)),
                    activated: row.activated,
                }
            })
            .collect();
        let mut d = Discriminator { spec, table, stages };
        init_params(&mut d, seed);
        Ok(d)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn layer_table(&self) -> &[DiscriminatorLayer] {
        &self.table
    }

    pub fn patch_size(&self) -> usize {
        self.table.last().unwrap().output_size
    }

    pub fn check_inputs(&self, cond: &Tensor<T>, candidate: &Tensor<T>) -> Result<()> {
        let s = self.spec.image_size;
        let [n, c, h, w] = cond.shape();
        let [nc, cc, hc, wc] = candidate.shape();
        if c != self.spec.mode.in_channels() || h != s || w != s {
            return Err(Error::Contract(format!(
                "discriminator expects {}x{s}x{s} conditioning, got {c}x{h}x{w}",
                self.spec.mode.in_channels()
            )));
        }
        if (nc, cc, hc, wc) != (n, 1, h, w) {
            return Err(Error::Contract(format!(
                "candidate {:?} not aligned with conditioning {:?}",
                candidate.shape(),
                cond.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, cond: &Tensor<T>, candidate: &Tensor<T>) -> (Tensor<T>, DiscriminatorCache<T>) {
        let mut h = Tensor::concat_channels(cond, candidate);
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (mut y, conv) = stage.conv.forward(&h);
            let norm = stage.norm.as_ref().map(|n| {
                let (z, c) = n.forward(&y);
                y = z;
                c
            });
            if stage.activated {
                y = leaky_relu(&y, LEAKY_SLOPE);
            }
            caches.push(DiscStageCache {
                conv,
                norm,
                output: y.clone(),
            });
            h = y;
        }
        (
            h,
            DiscriminatorCache {
                stages: caches,
                cond_channels: cond.channels(),
            },
        )
    }

    /// Accumulates parameter gradients; returns `dL/d(candidate)` when asked.
    pub fn backward(
        &mut self,
        cache: DiscriminatorCache<T>,
        grad_logits: &Tensor<T>,
        need_candidate_grad: bool,
    ) -> Option<Tensor<T>> {
        let mut g = grad_logits.clone();
        for (l, (stage, c)) in self.stages.iter_mut().zip(cache.stages).enumerate().rev() {
            if stage.activated {
                g = leaky_relu_backward(&c.output, &g, LEAKY_SLOPE);
            }
            if let (Some(norm), Some(nc)) = (stage.norm.as_mut(), c.norm.as_ref()) {
                g = norm.backward(nc, &g);
            }
            let need = l > 0 || need_candidate_grad;
            match stage.conv.backward(&c.conv, &g, need) {
                Some(gin) => g = gin,
                None => {
                    debug_assert_eq!(l, 0);
                    return None;
                }
            }
        }
        Some(g.split_channels(cache.cond_channels).1)
    }
}

impl<T: Scalar> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.push(&s.conv.weight);
            out.push(&s.conv.bias);
            if let Some(n) = &s.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.push(&mut s.conv.weight);
            out.push(&mut s.conv.bias);
            if let Some(n) = &mut s.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }
}

/// Patch logits for conditioning plus candidate PET.
pub fn discriminator_forward<T: Scalar>(
    d: &Discriminator<T>,
    cond: &Tensor<T>,
    candidate: &Tensor<T>,
) -> Result<Tensor<T>> {
    d.check_inputs(cond, candidate)?;
    Ok(d.forward(cond, candidate).0)
}

/// Fully convolutional tumor detector: a logit-output U-Net over one PET channel.
pub struct Detector<T> {
    pub net: UNet<T>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(image_size: usize, base_width: usize, seed: u64) -> Result<Self> {
        Ok(Detector {
            net: UNet::new(UNetSpec::detector(image_size, base_width), seed)?,
        })
    }

    pub fn from_spec(spec: UNetSpec, seed: u64) -> Result<Self> {
        if spec.in_channels != 1 || spec.output != OutputKind::Logits {
            return Err(Error::Contract("detector spec must take 1 channel and emit logits".into()));
        }
        Ok(Detector {
            net: UNet::new(spec, seed)?,
        })
    }

    pub fn image_size(&self) -> usize {
        self.net.spec().image_size
    }
}

impl<T: Scalar> Parameterized<T> for Detector<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pixel tumor probabilities for one PET slice, row-major.
pub fn detector_forward(f: &Detector<f32>, pet: &PetImage) -> Result<Vec<f32>> {
    let (h, w) = pet.grid().dims();
    let x = Tensor::from_vec([1, 1, h, w], pet.grid().values().iter().map(|&v| to_net(v)).collect());
    f.net.check_input(&x)?;
    let logits = f.net.forward(&x, Phase::Infer).0;
    Ok(logits.data().iter().map(|&z| sigmoid(z as f64) as f32).collect())
}
