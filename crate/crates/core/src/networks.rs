//! Toy learnable components: a large key-frame feature extractor, a cheap
//! non-key extractor, an attention scorer, a residual projector, a dense
//! detection head, and a weight-free pyramid block-matching flow estimator.
//!
//! All extractors produce `c_feat x H/16 x W/16` maps. The tiny path first
//! resamples the frame to quarter resolution and then applies a stride-4
//! network, so its multiply-accumulate count stays under 5% of the large
//! path's on equal input.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compressed_stream::{Frame, ResidualMap};
use crate::error::{Error, Result};
use crate::tensor_ops::{
    bilinear_resize, conv2d, conv2d_grad, relu, relu_grad, ConvKernel, FeatureMap, KernelGrads,
    MotionField, MotionResolution, ScoreMap,
};

/// Image-to-feature downsampling factor used throughout.
pub const FEATURE_STRIDE: usize = 16;

/// Geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
}

impl LayerSpec {
    fn conv(in_ch: usize, out_ch: usize, k: usize, stride: usize, padding: usize, relu: bool) -> Self {
        Self {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel: k,
            stride,
            padding,
            relu,
        }
    }
}

/// Architecture description for every sub-network; serialized alongside
/// weights so loaders can validate shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub c_feat: usize,
    pub stride: usize,
    pub num_classes: usize,
    pub large: Vec<LayerSpec>,
    pub tiny: Vec<LayerSpec>,
    pub attention: Vec<LayerSpec>,
    pub residual_proj: Vec<LayerSpec>,
    pub head_trunk: Vec<LayerSpec>,
    pub head_cls: Vec<LayerSpec>,
    pub head_box: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn with_classes(num_classes: usize) -> Self {
        let c = 32;
        Self {
            c_feat: c,
            stride: FEATURE_STRIDE,
            num_classes,
            large: vec![
                LayerSpec::conv(3, 16, 3, 2, 1, true),
                LayerSpec::conv(16, 32, 3, 2, 1, true),
                LayerSpec::conv(32, 32, 3, 2, 1, true),
                LayerSpec::conv(32, 64, 3, 2, 1, true),
                LayerSpec::conv(64, c, 3, 1, 1, false),
            ],
            tiny: vec![
                LayerSpec::conv(3, 16, 3, 2, 1, true),
                LayerSpec::conv(16, 16, 3, 2, 1, true),
                LayerSpec::conv(16, c, 3, 1, 1, false),
            ],
            attention: vec![
                LayerSpec::conv(c, 32, 3, 1, 1, true),
                LayerSpec::conv(32, 16, 1, 1, 0, true),
                LayerSpec::conv(16, 1, 1, 1, 0, false),
            ],
            residual_proj: vec![LayerSpec::conv(3, c, 1, 1, 0, false)],
            head_trunk: vec![LayerSpec::conv(c, c, 3, 1, 1, true)],
            head_cls: vec![LayerSpec::conv(c, num_classes, 1, 1, 0, false)],
            head_box: vec![LayerSpec::conv(c, 4, 1, 1, 0, false)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != FEATURE_STRIDE {
            return Err(Error::Config(format!(
                "feature stride {} unsupported, expected {FEATURE_STRIDE}",
                self.stride
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        let chain = |layers: &[LayerSpec], name: &str, in_ch: usize, out_ch: usize| -> Result<usize> {
            if layers.is_empty() {
                return Err(Error::Config(format!("{name} network has no layers")));
            }
            if layers[0].in_channels != in_ch {
                return Err(Error::Config(format!(
                    "{name} expects {in_ch} input channels, spec says {}",
                    layers[0].in_channels
                )));
            }
            let mut stride = 1;
            for pair in layers.windows(2) {
                if pair[1].in_channels != pair[0].out_channels {
                    return Err(Error::Config(format!("{name} has a channel break")));
                }
            }
            for layer in layers {
                stride *= layer.stride;
            }
            if layers.last().unwrap().out_channels != out_ch {
                return Err(Error::Config(format!(
                    "{name} must end with {out_ch} channels"
                )));
            }
            Ok(stride)
        };
        if chain(&self.large, "large", 3, self.c_feat)? != FEATURE_STRIDE {
            return Err(Error::Config("large path stride must be 16".into()));
        }
        if chain(&self.tiny, "tiny", 3, self.c_feat)? != FEATURE_STRIDE / 4 {
            return Err(Error::Config(
                "tiny path stride must be 4 (after quarter-resolution input)".into(),
            ));
        }
        chain(&self.attention, "attention", self.c_feat, 1)?;
        chain(&self.residual_proj, "residual_proj", 3, self.c_feat)?;
        chain(&self.head_trunk, "head_trunk", self.c_feat, self.c_feat)?;
        chain(&self.head_cls, "head_cls", self.c_feat, self.num_classes)?;
        chain(&self.head_box, "head_box", self.c_feat, 4)?;
        Ok(())
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_classes(3)
    }
}

/// One convolution layer plus its activation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: ConvKernel,
    pub relu: bool,
}

/// A plain sequential stack of convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayer>,
}

/// Per-layer forward activations retained for the backward pass.
pub struct NetCache {
    /// Input to each layer, then the final output (post-activation).
    pub activations: Vec<FeatureMap>,
}

impl ConvNet {
    fn from_specs(specs: &[LayerSpec]) -> Self {
        let layers = specs
            .iter()
            .map(|s| ConvLayer {
                kernel: ConvKernel::zeros(
                    s.out_channels,
                    s.in_channels,
                    s.kernel,
                    s.kernel,
                    s.stride,
                    s.padding,
                ),
                relu: s.relu,
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = conv2d(&cur, &layer.kernel)?;
            if layer.relu {
                cur = relu(&cur);
            }
        }
        Ok(cur)
    }

    /// Forward pass retaining every intermediate activation.
    pub fn forward_cached(&self, input: &FeatureMap) -> Result<(FeatureMap, NetCache)> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let mut out = conv2d(activations.last().unwrap(), &layer.kernel)?;
            if layer.relu {
                out = relu(&out);
            }
            activations.push(out);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, NetCache { activations }))
    }

    /// Backward pass: upstream gradient in, gradient w.r.t. the input plus
    /// per-layer kernel gradients (aligned with `layers`) out.
    pub fn backward(&self, cache: &NetCache, upstream: &FeatureMap) -> Result<(FeatureMap, Vec<KernelGrads>)> {
        let mut grads = vec![
            KernelGrads {
                weights: Vec::new(),
                bias: Vec::new()
            };
            self.layers.len()
        ];
        let mut up = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                up = relu_grad(&cache.activations[i + 1], &up)?;
            }
            let (gin, kg) = conv2d_grad(&cache.activations[i], &layer.kernel, &up)?;
            grads[i] = kg;
            up = gin;
        }
        Ok((up, grads))
    }

    /// Total multiply-accumulate count for the given input size.
    pub fn macs(&self, mut h: usize, mut w: usize) -> Result<u64> {
        let mut total = 0u64;
        for layer in &self.layers {
            total += layer.kernel.macs(h, w)?;
            let (oh, ow) = layer.kernel.out_dims(h, w)?;
            h = oh;
            w = ow;
        }
        Ok(total)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.weights.len() + l.kernel.bias.len())
            .sum()
    }
}

/// All learnable parameters, grouped per sub-network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub spec: NetworkSpec,
    pub large: ConvNet,
    pub tiny: ConvNet,
    pub attention: ConvNet,
    pub residual_proj: ConvNet,
    pub head_trunk: ConvNet,
    pub head_cls: ConvNet,
    pub head_box: ConvNet,
}

/// Stable group order used for flattening, gradients, and the weight file.
pub const WEIGHT_GROUPS: [&str; 7] = [
    "large",
    "tiny",
    "attention",
    "residual_proj",
    "head_trunk",
    "head_cls",
    "head_box",
];

impl ModelWeights {
    /// Zero-valued weights shaped by the spec.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            large: ConvNet::from_specs(&spec.large),
            tiny: ConvNet::from_specs(&spec.tiny),
            attention: ConvNet::from_specs(&spec.attention),
            residual_proj: ConvNet::from_specs(&spec.residual_proj),
            head_trunk: ConvNet::from_specs(&spec.head_trunk),
            head_cls: ConvNet::from_specs(&spec.head_cls),
            head_box: ConvNet::from_specs(&spec.head_box),
        })
    }

    pub fn groups(&self) -> [&ConvNet; 7] {
        [
            &self.large,
            &self.tiny,
            &self.attention,
            &self.residual_proj,
            &self.head_trunk,
            &self.head_cls,
            &self.head_box,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut ConvNet; 7] {
        [
            &mut self.large,
            &mut self.tiny,
            &mut self.attention,
            &mut self.residual_proj,
            &mut self.head_trunk,
            &mut self.head_cls,
            &mut self.head_box,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|n| n.param_count()).sum()
    }

    /// Parameters in stable order: per group, per layer, weights then bias.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for net in self.groups() {
            for layer in &net.layers {
                out.extend_from_slice(&layer.kernel.weights);
                out.extend_from_slice(&layer.kernel.bias);
            }
        }
        out
    }

    /// Inverse of [`flatten_params`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector length {} != {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for net in self.groups_mut() {
            for layer in &mut net.layers {
                let nw = layer.kernel.weights.len();
                layer.kernel.weights.copy_from_slice(&flat[at..at + nw]);
                at += nw;
                let nb = layer.kernel.bias.len();
                layer.kernel.bias.copy_from_slice(&flat[at..at + nb]);
                at += nb;
            }
        }
        Ok(())
    }
}

/// He-style initialization: weights ~ Normal(0, sqrt(2/fan_in)), biases
/// zero, the attention net's final layer zeroed so fusion starts at an
/// even 0.5/0.5 split. Fully determined by the seed.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<ModelWeights> {
    let mut w = ModelWeights::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for net in w.groups_mut() {
        for layer in &mut net.layers {
            let k = &mut layer.kernel;
            let fan_in = (k.in_channels * k.k_h * k.k_w) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt())
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for v in &mut k.weights {
                *v = normal.sample(&mut rng);
            }
        }
    }
    if let Some(last) = w.attention.layers.last_mut() {
        last.kernel.weights.fill(0.0);
    }
    Ok(w)
}

fn check_frame_dims(frame: &Frame) -> Result<()> {
    if frame.height() % FEATURE_STRIDE != 0 || frame.width() % FEATURE_STRIDE != 0 {
        return Err(Error::InvalidParameter(format!(
            "frame dims {}x{} not divisible by {FEATURE_STRIDE}",
            frame.height(),
            frame.width()
        )));
    }
    Ok(())
}

/// Key-frame feature extraction at stride 16.
pub fn extract_large(frame: &Frame, w: &ModelWeights) -> Result<FeatureMap> {
    check_frame_dims(frame)?;
    w.large.forward(&frame.to_feature_map())
}

/// Non-key feature extraction: quarter-resolution input, stride-4 net.
pub fn extract_tiny(frame: &Frame, w: &ModelWeights) -> Result<FeatureMap> {
    check_frame_dims(frame)?;
    let quarter = bilinear_resize(&frame.to_feature_map(), frame.height() / 4, frame.width() / 4)?;
    w.tiny.forward(&quarter)
}

/// 1-channel attention score per feature position.
pub fn attention_scores(feature: &FeatureMap, w: &ModelWeights) -> Result<ScoreMap> {
    if feature.channels() != w.spec.c_feat {
        return Err(Error::ChannelMismatch {
            expected: w.spec.c_feat,
            got: feature.channels(),
        });
    }
    w.attention.forward(feature)
}

/// Project a feature-resolution residual map into feature space (linear
/// 1x1 convolution, no activation).
pub fn residual_project(residual: &ResidualMap, w: &ModelWeights) -> Result<FeatureMap> {
    w.residual_proj.forward(&residual.to_feature_map())
}

/// Pyramid block-matching flow: displacement per pixel of `frame_b`
/// pointing at its source in `frame_a`, so `warp(a_features, flow)`
/// aligns frame_a content onto frame_b's grid. Weight-free, frozen,
/// deterministic; identical frames give an exactly zero field.
pub fn estimate_flow(frame_a: &Frame, frame_b: &Frame) -> Result<MotionField> {
    if frame_a.height() != frame_b.height() || frame_a.width() != frame_b.width() {
        return Err(Error::ShapeMismatch(format!(
            "flow frames {}x{} vs {}x{}",
            frame_a.height(),
            frame_a.width(),
            frame_b.height(),
            frame_b.width()
        )));
    }
    const LEVELS: usize = 3;
    const BLOCK: usize = 16;
    const RADIUS: isize = 8;
    let (h, w) = (frame_a.height(), frame_a.width());
    if h % (1 << (LEVELS - 1)) != 0 || w % (1 << (LEVELS - 1)) != 0 {
        return Err(Error::InvalidParameter(format!(
            "flow frames {h}x{w} must be divisible by {}",
            1 << (LEVELS - 1)
        )));
    }

    let full_a = frame_a.to_feature_map();
    let full_b = frame_b.to_feature_map();
    let mut pyr_a = vec![full_a];
    let mut pyr_b = vec![full_b];
    for level in 1..LEVELS {
        let (lh, lw) = (h >> level, w >> level);
        pyr_a.push(bilinear_resize(&pyr_a[level - 1], lh, lw)?);
        pyr_b.push(bilinear_resize(&pyr_b[level - 1], lh, lw)?);
    }

    // Coarse-to-fine: block-match at each level around the upsampled
    // prediction from the level above.
    let mut flow: Option<MotionField> = None;
    for level in (0..LEVELS).rev() {
        let (lh, lw) = (h >> level, w >> level);
        let prior = match flow {
            Some(prev) => prev
                .resized(lh, lw, MotionResolution::Pixels)?
                .scaled(2.0),
            None => MotionField::zeros(lh, lw, MotionResolution::Pixels),
        };
        let mut refined = MotionField::zeros(lh, lw, MotionResolution::Pixels);
        let a = &pyr_a[level];
        let b = &pyr_b[level];
        let mut y0 = 0;
        while y0 < lh {
            let bh = BLOCK.min(lh - y0);
            let mut x0 = 0;
            while x0 < lw {
                let bw = BLOCK.min(lw - x0);
                let (cy, cx) = (y0 + bh / 2, x0 + bw / 2);
                let (pdx, pdy) = prior.at(cy, cx);
                // Clamp the prediction so its source block stays in-grid.
                let pdy = (pdy.round() as isize).clamp(-(y0 as isize), (lh - bh - y0) as isize);
                let pdx = (pdx.round() as isize).clamp(-(x0 as isize), (lw - bw - x0) as isize);
                let (tdx, tdy) =
                    search_flow_block(a, b, y0, x0, bh, bw, pdy, pdx, RADIUS, lh, lw);
                for y in y0..y0 + bh {
                    for x in x0..x0 + bw {
                        refined.set(y, x, tdx as f64, tdy as f64);
                    }
                }
                x0 += bw;
            }
            y0 += bh;
        }
        flow = Some(refined);
    }
    Ok(flow.expect("at least one pyramid level"))
}

/// SAD search over total displacements within `radius` of the prediction.
/// Ties break toward the smaller total displacement: |dx|+|dy|, then dy,
/// then dx, mirroring the codec's encoder.
#[allow(clippy::too_many_arguments)]
fn search_flow_block(
    a: &FeatureMap,
    b: &FeatureMap,
    y0: usize,
    x0: usize,
    bh: usize,
    bw: usize,
    pdy: isize,
    pdx: isize,
    radius: isize,
    lh: usize,
    lw: usize,
) -> (isize, isize) {
    let mut best_key = (f64::INFINITY, isize::MAX, isize::MAX, isize::MAX);
    let mut best = (pdx, pdy);
    for ddy in -radius..=radius {
        for ddx in -radius..=radius {
            let tdy = pdy + ddy;
            let tdx = pdx + ddx;
            let sy = y0 as isize + tdy;
            let sx = x0 as isize + tdx;
            if sy < 0 || sx < 0 || sy + bh as isize > lh as isize || sx + bw as isize > lw as isize {
                continue;
            }
            let sad = flow_block_sad(a, b, y0, x0, sy as usize, sx as usize, bh, bw, best_key.0);
            let key = (sad, tdy.abs() + tdx.abs(), tdy, tdx);
            if key < best_key {
                best_key = key;
                best = (tdx, tdy);
            }
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn flow_block_sad(
    a: &FeatureMap,
    b: &FeatureMap,
    y0: usize,
    x0: usize,
    sy: usize,
    sx: usize,
    bh: usize,
    bw: usize,
    limit: f64,
) -> f64 {
    let w = b.width();
    let mut sad = 0.0;
    for c in 0..3 {
        let pb = b.channel(c);
        let pa = a.channel(c);
        for row in 0..bh {
            let rb = &pb[(y0 + row) * w + x0..][..bw];
            let ra = &pa[(sy + row) * w + sx..][..bw];
            let mut rs = 0.0;
            for (&u, &v) in rb.iter().zip(ra) {
                rs += (u - v).abs();
            }
            sad += rs;
            if sad > limit {
                return sad;
            }
        }
    }
    sad
}

const WEIGHTS_MAGIC: &[u8; 4] = b"LSFW";
const WEIGHTS_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

fn tensor_name(group: &str, layer: usize, part: &str) -> String {
    format!("{group}.{layer}.{part}")
}

/// Serialize weights: magic, version, a TOML manifest of the spec, then
/// named tensors (name, dtype f32, rank, dims, little-endian payload).
pub fn write_weights<W: Write>(mut out: W, w: &ModelWeights) -> Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_u16::<LittleEndian>(WEIGHTS_VERSION)?;
    let manifest =
        toml::to_string(&w.spec).map_err(|e| Error::Format(format!("spec manifest: {e}")))?;
    out.write_u32::<LittleEndian>(manifest.len() as u32)?;
    out.write_all(manifest.as_bytes())?;
    let tensor_count: usize = w.groups().iter().map(|n| n.layers.len() * 2).sum();
    out.write_u32::<LittleEndian>(tensor_count as u32)?;
    for (group, net) in WEIGHT_GROUPS.iter().zip(w.groups()) {
        for (li, layer) in net.layers.iter().enumerate() {
            let k = &layer.kernel;
            write_tensor(
                &mut out,
                &tensor_name(group, li, "weight"),
                &[k.out_channels, k.in_channels, k.k_h, k.k_w],
                &k.weights,
            )?;
            write_tensor(&mut out, &tensor_name(group, li, "bias"), &[k.out_channels], &k.bias)?;
        }
    }
    Ok(())
}

fn write_tensor<W: Write>(out: &mut W, name: &str, dims: &[usize], data: &[f64]) -> Result<()> {
    out.write_u16::<LittleEndian>(name.len() as u16)?;
    out.write_all(name.as_bytes())?;
    out.write_u8(DTYPE_F32)?;
    out.write_u8(dims.len() as u8)?;
    for &d in dims {
        out.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in data {
        out.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

/// Inverse of [`write_weights`]; rejects unknown names, shape mismatches,
/// and missing tensors.
pub fn read_weights<R: Read>(mut input: R) -> Result<ModelWeights> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format("bad weights magic".into()));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let mlen = input.read_u32::<LittleEndian>()? as usize;
    let mut mbytes = vec![0u8; mlen];
    input.read_exact(&mut mbytes)?;
    let manifest = String::from_utf8(mbytes).map_err(|e| Error::Format(e.to_string()))?;
    let spec: NetworkSpec =
        toml::from_str(&manifest).map_err(|e| Error::Format(format!("spec manifest: {e}")))?;
    let mut w = ModelWeights::zeros(&spec)?;
    let tensor_count = input.read_u32::<LittleEndian>()? as usize;
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..tensor_count {
        let nlen = input.read_u16::<LittleEndian>()? as usize;
        let mut nbytes = vec![0u8; nlen];
        input.read_exact(&mut nbytes)?;
        let name = String::from_utf8(nbytes).map_err(|e| Error::Format(e.to_string()))?;
        let dtype = input.read_u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("tensor {name}: unknown dtype {dtype}")));
        }
        let rank = input.read_u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(input.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(input.read_f32::<LittleEndian>()? as f64);
        }
        place_tensor(&mut w, &name, &dims, data)?;
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    let expected: usize = w.groups().iter().map(|g| g.layers.len() * 2).sum();
    if seen.len() != expected {
        return Err(Error::Format(format!(
            "weight file holds {} tensors, spec needs {expected}",
            seen.len()
        )));
    }
    Ok(w)
}

fn place_tensor(w: &mut ModelWeights, name: &str, dims: &[usize], data: Vec<f64>) -> Result<()> {
    let mut parts = name.split('.');
    let (group, layer, part) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(g), Some(l), Some(p), None) => (g, l, p),
        _ => return Err(Error::Format(format!("malformed tensor name {name}"))),
    };
    let li: usize = layer
        .parse()
        .map_err(|_| Error::Format(format!("malformed tensor name {name}")))?;
    let gi = WEIGHT_GROUPS
        .iter()
        .position(|&g| g == group)
        .ok_or_else(|| Error::Format(format!("unknown tensor group {group}")))?;
    let net = w
        .groups_mut()
        .into_iter()
        .nth(gi)
        .expect("group index bounded by WEIGHT_GROUPS");
    let layer = net
        .layers
        .get_mut(li)
        .ok_or_else(|| Error::Format(format!("tensor {name}: no such layer")))?;
    let k = &mut layer.kernel;
    match part {
        "weight" => {
            let want = [k.out_channels, k.in_channels, k.k_h, k.k_w];
            if dims != want {
                return Err(Error::Format(format!(
                    "tensor {name}: dims {dims:?} != spec {want:?}"
                )));
            }
            k.weights = data;
        }
        "bias" => {
            if dims != [k.out_channels] {
                return Err(Error::Format(format!(
                    "tensor {name}: dims {dims:?} != spec [{}]",
                    k.out_channels
                )));
            }
            k.bias = data;
        }
        _ => return Err(Error::Format(format!("unknown tensor part {part}"))),
    }
    Ok(())
}

pub fn save_weights(path: &Path, w: &ModelWeights) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_weights(std::io::BufWriter::new(file), w)
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let file = std::fs::File::open(path)?;
    read_weights(std::io::BufReader::new(file))
}
