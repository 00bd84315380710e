//! Dense tensor kernels: convolution, bilinear warping, bilinear resizing,
//! and pairwise softmax, each paired with a hand-derived backward pass.
//!
//! Everything here is a pure function over immutable inputs, accumulating in
//! f64. Output-channel loops are sequential so results are bit-reproducible.
//!
//! Border conventions, fixed once and used everywhere:
//! * warping clamps sample coordinates to the grid border,
//! * resizing uses align-corners-false (pixel-center) positions and linearly
//!   extrapolates from the edge cell pair where a source position overhangs
//!   the grid (a 2x up/downsample round trip is then exact on linear data).

use crate::error::{Error, Result};

/// Dense `channels x height x width` tensor, row-major by (channel, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// 1-channel map of attention scores.
pub type ScoreMap = FeatureMap;
/// 1-channel map of fusion weights in [0,1]; paired maps sum to 1 pointwise.
pub type WeightMap = FeatureMap;

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> FeatureMap {
        self.map(|v| v * s)
    }
}

/// Which grid a motion field's displacements refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionResolution {
    /// Displacements in image pixels on the full-resolution grid.
    Pixels,
    /// Displacements in feature cells on the stride-16 grid.
    FeatureCells,
}

/// Per-position displacement field `(dx, dy)`, in the units of its
/// resolution tag. `dx` is horizontal (columns), `dy` vertical (rows);
/// the displaced sample for position `p` lives at `p + (dx, dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    resolution: MotionResolution,
}

impl MotionField {
    pub fn new(
        height: usize,
        width: usize,
        dx: Vec<f64>,
        dy: Vec<f64>,
        resolution: MotionResolution,
    ) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "motion field grids {}x{} vs dx {} dy {}",
                height,
                width,
                dx.len(),
                dy.len()
            )));
        }
        if !dx.iter().chain(dy.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("motion field"));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
            resolution,
        })
    }

    pub fn zeros(height: usize, width: usize, resolution: MotionResolution) -> Self {
        Self {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
            resolution,
        }
    }

    pub fn uniform(
        height: usize,
        width: usize,
        dx: f64,
        dy: f64,
        resolution: MotionResolution,
    ) -> Self {
        Self {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
            resolution,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> MotionResolution {
        self.resolution
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, dx: f64, dy: f64) {
        let i = y * self.width + x;
        self.dx[i] = dx;
        self.dy[i] = dy;
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    /// Resample the field to a new grid (values untouched) and retag.
    pub fn resized(
        &self,
        target_h: usize,
        target_w: usize,
        resolution: MotionResolution,
    ) -> Result<MotionField> {
        check_resize_target(target_h, target_w)?;
        Ok(MotionField {
            height: target_h,
            width: target_w,
            dx: resize_plane(&self.dx, self.height, self.width, target_h, target_w),
            dy: resize_plane(&self.dy, self.height, self.width, target_h, target_w),
            resolution,
        })
    }

    /// Scale displacement magnitudes in place (unit conversion).
    pub fn scaled(&self, factor: f64) -> MotionField {
        MotionField {
            height: self.height,
            width: self.width,
            dx: self.dx.iter().map(|v| v * factor).collect(),
            dy: self.dy.iter().map(|v| v * factor).collect(),
            resolution: self.resolution,
        }
    }
}

/// Convolution parameters: weights laid out `out x in x k_h x k_w`,
/// one bias per output channel, explicit zero-padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != out_channels * in_channels * k_h * k_w {
            return Err(Error::ShapeMismatch(format!(
                "kernel weights length {} != {}x{}x{}x{}",
                weights.len(),
                out_channels,
                in_channels,
                k_h,
                k_w
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "kernel bias length {} != {}",
                bias.len(),
                out_channels
            )));
        }
        if stride < 1 || dilation < 1 {
            return Err(Error::InvalidParameter(format!(
                "stride {stride} and dilation {dilation} must be >= 1"
            )));
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("conv kernel"));
        }
        Ok(Self {
            out_channels,
            in_channels,
            k_h,
            k_w,
            stride,
            dilation,
            padding,
            weights,
            bias,
        })
    }

    /// Zero-filled kernel of the given geometry.
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            k_h,
            k_w,
            stride,
            dilation: 1,
            padding,
            weights: vec![0.0; out_channels * in_channels * k_h * k_w],
            bias: vec![0.0; out_channels],
        }
    }

    /// 1x1 kernel copying each channel through (weight 1 on the diagonal).
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels, 1, 1, 1, 0);
        for c in 0..channels {
            k.weights[c * channels + c] = 1.0;
        }
        k
    }

    #[inline]
    pub fn w_idx(&self, o: usize, i: usize, u: usize, v: usize) -> usize {
        ((o * self.in_channels + i) * self.k_h + u) * self.k_w + v
    }

    /// Effective extent of the dilated kernel, per axis.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.dilation * (self.k_h - 1) + 1,
            self.dilation * (self.k_w - 1) + 1,
        )
    }

    /// Output spatial dims for an input of the given size.
    pub fn out_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (eh, ew) = self.extent();
        let ph = in_h + 2 * self.padding;
        let pw = in_w + 2 * self.padding;
        if ph < eh || pw < ew {
            return Err(Error::ShapeMismatch(format!(
                "input {in_h}x{in_w} (+2x{} padding) smaller than kernel extent {eh}x{ew}",
                self.padding
            )));
        }
        Ok(((ph - eh) / self.stride + 1, (pw - ew) / self.stride + 1))
    }

    /// Multiply-accumulate count for an input of the given size.
    pub fn macs(&self, in_h: usize, in_w: usize) -> Result<u64> {
        let (oh, ow) = self.out_dims(in_h, in_w)?;
        Ok((self.out_channels * oh * ow * self.in_channels * self.k_h * self.k_w) as u64)
    }
}

/// Gradients of a convolution with respect to its kernel parameters.
#[derive(Debug, Clone)]
pub struct KernelGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Zero-padded strided convolution.
pub fn conv2d(input: &FeatureMap, kernel: &ConvKernel) -> Result<FeatureMap> {
    if input.channels != kernel.in_channels {
        return Err(Error::ChannelMismatch {
            expected: kernel.in_channels,
            got: input.channels,
        });
    }
    if !input.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("conv2d input"));
    }
    let (h, w) = (input.height, input.width);
    let (oh, ow) = kernel.out_dims(h, w)?;
    let mut out = FeatureMap::zeros(kernel.out_channels, oh, ow);

    for o in 0..kernel.out_channels {
        let bias = kernel.bias[o];
        out.channel_mut(o).fill(bias);
    }
    for o in 0..kernel.out_channels {
        // Borrow the output plane once per channel; taps accumulate into it.
        let plane = oh * ow;
        let out_plane = &mut out.data[o * plane..(o + 1) * plane];
        for i in 0..kernel.in_channels {
            let in_plane = input.channel(i);
            for u in 0..kernel.k_h {
                for v in 0..kernel.k_w {
                    let wgt = kernel.weights[kernel.w_idx(o, i, u, v)];
                    accumulate_tap(
                        out_plane, oh, ow, in_plane, h, w, u, v, kernel.stride,
                        kernel.dilation, kernel.padding, wgt,
                    );
                }
            }
        }
    }
    Ok(out)
}

/// out[oy][ox] += wgt * in[oy*s + u*d - p][ox*s + v*d - p] over in-range taps.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap(
    out_plane: &mut [f64],
    oh: usize,
    ow: usize,
    in_plane: &[f64],
    h: usize,
    w: usize,
    u: usize,
    v: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    wgt: f64,
) {
    if wgt == 0.0 {
        return;
    }
    let (ox_lo, ox_hi) = tap_range(ow, w, v, stride, dilation, padding);
    if ox_lo > ox_hi {
        return;
    }
    let (oy_lo, oy_hi) = tap_range(oh, h, u, stride, dilation, padding);
    for oy in oy_lo..=oy_hi {
        let iy = (oy * stride + u * dilation) as isize - padding as isize;
        let in_row = &in_plane[iy as usize * w..][..w];
        let out_row = &mut out_plane[oy * ow..][..ow];
        let ix0 = (ox_lo * stride + v * dilation) as isize - padding as isize;
        let ix0 = ix0 as usize;
        if stride == 1 {
            let n = ox_hi - ox_lo + 1;
            for (ov, iv) in out_row[ox_lo..=ox_hi].iter_mut().zip(&in_row[ix0..ix0 + n]) {
                *ov += wgt * *iv;
            }
        } else {
            let mut ix = ix0;
            for ov in &mut out_row[ox_lo..=ox_hi] {
                *ov += wgt * in_row[ix];
                ix += stride;
            }
        }
    }
}

/// Range of output positions whose source index for tap `k` is in-grid.
#[inline]
fn tap_range(out_n: usize, in_n: usize, k: usize, stride: usize, dilation: usize, padding: usize) -> (usize, usize) {
    let off = k as isize * dilation as isize - padding as isize;
    // need 0 <= o*stride + off < in_n
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let hi_isize = (in_n as isize - 1 - off).div_euclid(stride as isize);
    if hi_isize < 0 {
        return (1, 0);
    }
    let hi = (hi_isize as usize).min(out_n.saturating_sub(1));
    (lo, hi)
}

/// Adjoint of [`conv2d`]: gradients with respect to the input and the kernel.
pub fn conv2d_grad(
    input: &FeatureMap,
    kernel: &ConvKernel,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, KernelGrads)> {
    if input.channels != kernel.in_channels {
        return Err(Error::ChannelMismatch {
            expected: kernel.in_channels,
            got: input.channels,
        });
    }
    let (h, w) = (input.height, input.width);
    let (oh, ow) = kernel.out_dims(h, w)?;
    if upstream.shape() != (kernel.out_channels, oh, ow) {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_grad upstream {:?} != expected {:?}",
            upstream.shape(),
            (kernel.out_channels, oh, ow)
        )));
    }

    let mut grad_input = FeatureMap::zeros(input.channels, h, w);
    let mut grads = KernelGrads {
        weights: vec![0.0; kernel.weights.len()],
        bias: vec![0.0; kernel.out_channels],
    };

    for o in 0..kernel.out_channels {
        grads.bias[o] = upstream.channel(o).iter().sum();
    }

    let s = kernel.stride;
    let d = kernel.dilation;
    let p = kernel.padding;
    for o in 0..kernel.out_channels {
        let up_plane = upstream.channel(o);
        for i in 0..kernel.in_channels {
            let in_plane = input.channel(i);
            let gplane = h * w;
            let gin_plane = &mut grad_input.data[i * gplane..(i + 1) * gplane];
            for u in 0..kernel.k_h {
                for v in 0..kernel.k_w {
                    let (ox_lo, ox_hi) = tap_range(ow, w, v, s, d, p);
                    if ox_lo > ox_hi {
                        continue;
                    }
                    let (oy_lo, oy_hi) = tap_range(oh, h, u, s, d, p);
                    let wgt = kernel.weights[kernel.w_idx(o, i, u, v)];
                    let mut wacc = 0.0;
                    for oy in oy_lo..=oy_hi {
                        let iy = (oy * s + u * d - p) as usize;
                        let in_row = &in_plane[iy * w..][..w];
                        let gin_row = &mut gin_plane[iy * w..][..w];
                        let up_row = &up_plane[oy * ow..][..ow];
                        let mut ix = (ox_lo * s + v * d - p) as usize;
                        for ox in ox_lo..=ox_hi {
                            let g = up_row[ox];
                            wacc += g * in_row[ix];
                            gin_row[ix] += g * wgt;
                            ix += s;
                        }
                    }
                    grads.weights[kernel.w_idx(o, i, u, v)] += wacc;
                }
            }
        }
    }
    Ok((grad_input, grads))
}

/// 4-tap clamped bilinear stencil: plane-linear indices plus weights.
#[inline]
fn clamped_taps(h: usize, w: usize, sy: f64, sx: f64) -> ([usize; 4], [f64; 4]) {
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    (
        [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        [
            (1.0 - fy) * (1.0 - fx),
            (1.0 - fy) * fx,
            fy * (1.0 - fx),
            fy * fx,
        ],
    )
}

/// Gather `feature` at `p + flow(p)` per position with clamped bilinear
/// sampling. The flow grid must match the feature grid, with displacements
/// in that grid's cell units.
pub fn bilinear_warp(feature: &FeatureMap, flow: &MotionField) -> Result<FeatureMap> {
    if flow.height != feature.height || flow.width != feature.width {
        return Err(Error::ShapeMismatch(format!(
            "warp: flow {}x{} vs feature {}x{}",
            flow.height, flow.width, feature.height, feature.width
        )));
    }
    let (h, w) = (feature.height, feature.width);
    let taps = warp_taps(flow, h, w);
    let mut out = FeatureMap::zeros(feature.channels, h, w);
    for c in 0..feature.channels {
        let src = feature.channel(c);
        let dst = out.channel_mut(c);
        for (o, (idx, wt)) in dst.iter_mut().zip(&taps) {
            *o = wt[0] * src[idx[0]] + wt[1] * src[idx[1]] + wt[2] * src[idx[2]] + wt[3] * src[idx[3]];
        }
    }
    Ok(out)
}

fn warp_taps(flow: &MotionField, h: usize, w: usize) -> Vec<([usize; 4], [f64; 4])> {
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            taps.push(clamped_taps(h, w, y as f64 + flow.dy[i], x as f64 + flow.dx[i]));
        }
    }
    taps
}

/// Adjoint of [`bilinear_warp`] with respect to the feature argument.
/// The flow is treated as a constant and is not differentiated.
pub fn warp_grad_features(
    feature: &FeatureMap,
    flow: &MotionField,
    upstream: &FeatureMap,
) -> Result<FeatureMap> {
    if flow.height != feature.height || flow.width != feature.width {
        return Err(Error::ShapeMismatch(format!(
            "warp_grad: flow {}x{} vs feature {}x{}",
            flow.height, flow.width, feature.height, feature.width
        )));
    }
    if !upstream.same_shape(feature) {
        return Err(Error::ShapeMismatch(format!(
            "warp_grad: upstream {:?} vs feature {:?}",
            upstream.shape(),
            feature.shape()
        )));
    }
    let (h, w) = (feature.height, feature.width);
    let taps = warp_taps(flow, h, w);
    let mut grad = FeatureMap::zeros(feature.channels, h, w);
    for c in 0..feature.channels {
        let up = upstream.channel(c);
        let g = grad.channel_mut(c);
        for (&u, (idx, wt)) in up.iter().zip(&taps) {
            g[idx[0]] += wt[0] * u;
            g[idx[1]] += wt[1] * u;
            g[idx[2]] += wt[2] * u;
            g[idx[3]] += wt[3] * u;
        }
    }
    Ok(grad)
}

fn check_resize_target(target_h: usize, target_w: usize) -> Result<()> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "resize target {target_h}x{target_w} must be >= 1x1"
        )));
    }
    Ok(())
}

/// Align-corners-false source position for output index `d`.
#[inline]
fn resize_src(d: usize, in_n: usize, out_n: usize) -> f64 {
    (d as f64 + 0.5) * (in_n as f64 / out_n as f64) - 0.5
}

/// 2-tap stencil along one axis. Interior positions interpolate; positions
/// overhanging the grid extrapolate linearly from the edge cell pair.
#[inline]
fn axis_taps(src: f64, in_n: usize) -> (usize, usize, f64) {
    if in_n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (src.floor() as isize).clamp(0, in_n as isize - 2) as usize;
    (i0, i0 + 1, src - i0 as f64)
}

fn resize_plane(src: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = vec![0.0; th * tw];
    let mut col_taps = Vec::with_capacity(tw);
    for x in 0..tw {
        col_taps.push(axis_taps(resize_src(x, w, tw), w));
    }
    for y in 0..th {
        let (y0, y1, fy) = axis_taps(resize_src(y, h, th), h);
        let row0 = &src[y0 * w..][..w];
        let row1 = &src[y1 * w..][..w];
        let out_row = &mut out[y * tw..][..tw];
        for (o, &(x0, x1, fx)) in out_row.iter_mut().zip(&col_taps) {
            let top = row0[x0] * (1.0 - fx) + row0[x1] * fx;
            let bot = row1[x0] * (1.0 - fx) + row1[x1] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Bilinear resampling to `target_h x target_w` (align-corners-false).
pub fn bilinear_resize(map: &FeatureMap, target_h: usize, target_w: usize) -> Result<FeatureMap> {
    check_resize_target(target_h, target_w)?;
    let mut out = FeatureMap::zeros(map.channels, target_h, target_w);
    for c in 0..map.channels {
        let plane = resize_plane(map.channel(c), map.height, map.width, target_h, target_w);
        out.channel_mut(c).copy_from_slice(&plane);
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resize`]: scatter `upstream` back to an
/// `in_h x in_w` grid through the same stencil.
pub fn resize_grad(
    in_h: usize,
    in_w: usize,
    upstream: &FeatureMap,
) -> Result<FeatureMap> {
    check_resize_target(in_h, in_w)?;
    let (th, tw) = (upstream.height, upstream.width);
    let mut grad = FeatureMap::zeros(upstream.channels, in_h, in_w);
    let mut col_taps = Vec::with_capacity(tw);
    for x in 0..tw {
        col_taps.push(axis_taps(resize_src(x, in_w, tw), in_w));
    }
    for c in 0..upstream.channels {
        let up = upstream.channel(c);
        let g = grad.channel_mut(c);
        for y in 0..th {
            let (y0, y1, fy) = axis_taps(resize_src(y, in_h, th), in_h);
            let up_row = &up[y * tw..][..tw];
            for (&u, &(x0, x1, fx)) in up_row.iter().zip(&col_taps) {
                g[y0 * in_w + x0] += (1.0 - fy) * (1.0 - fx) * u;
                g[y0 * in_w + x1] += (1.0 - fy) * fx * u;
                g[y1 * in_w + x0] += fy * (1.0 - fx) * u;
                g[y1 * in_w + x1] += fy * fx * u;
            }
        }
    }
    Ok(grad)
}

/// Position-wise two-way softmax over a pair of score maps, stabilized by
/// max-subtraction. Returns weights that sum to 1 at every position.
pub fn softmax_pair(a: &ScoreMap, b: &ScoreMap) -> Result<(WeightMap, WeightMap)> {
    check_score_pair(a, b)?;
    let mut wa = FeatureMap::zeros(1, a.height, a.width);
    let mut wb = FeatureMap::zeros(1, a.height, a.width);
    for i in 0..a.data.len() {
        let (sa, sb) = (a.data[i], b.data[i]);
        let m = sa.max(sb);
        let ea = (sa - m).exp();
        let eb = (sb - m).exp();
        let pa = ea / (ea + eb);
        wa.data[i] = pa;
        wb.data[i] = 1.0 - pa;
    }
    Ok((wa, wb))
}

/// Adjoint of [`softmax_pair`].
pub fn softmax_pair_grad(
    a: &ScoreMap,
    b: &ScoreMap,
    upstream_a: &FeatureMap,
    upstream_b: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    check_score_pair(a, b)?;
    if !upstream_a.same_shape(a) || !upstream_b.same_shape(b) {
        return Err(Error::ShapeMismatch(
            "softmax_pair_grad upstream shape".into(),
        ));
    }
    let (wa, wb) = softmax_pair(a, b)?;
    let mut ga = FeatureMap::zeros(1, a.height, a.width);
    let mut gb = FeatureMap::zeros(1, a.height, a.width);
    for i in 0..a.data.len() {
        // d(wa)/da = wa*wb, d(wa)/db = -wa*wb; wb = 1 - wa.
        let s = wa.data[i] * wb.data[i];
        let g = (upstream_a.data[i] - upstream_b.data[i]) * s;
        ga.data[i] = g;
        gb.data[i] = -g;
    }
    Ok((ga, gb))
}

fn check_score_pair(a: &ScoreMap, b: &ScoreMap) -> Result<()> {
    if a.channels != 1 || b.channels != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            got: a.channels.max(b.channels),
        });
    }
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "softmax_pair: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Elementwise max(0, x).
pub fn relu(map: &FeatureMap) -> FeatureMap {
    map.map(|v| v.max(0.0))
}

/// Adjoint of [`relu`] given the forward *output* and the upstream gradient.
pub fn relu_grad(output: &FeatureMap, upstream: &FeatureMap) -> Result<FeatureMap> {
    if !output.same_shape(upstream) {
        return Err(Error::ShapeMismatch("relu_grad shapes".into()));
    }
    let data = output
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&o, &u)| if o > 0.0 { u } else { 0.0 })
        .collect();
    FeatureMap::new(output.channels, output.height, output.width, data)
}
