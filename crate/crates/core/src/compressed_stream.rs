//! Synthetic I/P-frame codec and motion/residual accumulation.
//!
//! A GOP holds one key frame plus L-1 P-records. Each P-record stores one
//! motion vector per 16x16 macroblock (chosen by exhaustive SAD search
//! against the previous reconstruction) and the exact signed difference
//! between the frame and its motion-compensated prediction, so decoding is
//! lossless. `accumulate_to_key` composes per-step displacements and sums
//! carried residuals so a non-key frame can be expressed directly against
//! its key frame.
//!
//! Motion convention everywhere: `MV(p)` points from a current-frame pixel
//! `p` to its source in the previous frame (`source = p + MV`), matching
//! the gather semantics of `bilinear_warp`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor_ops::{bilinear_warp, FeatureMap, MotionField, MotionResolution};

/// 8-bit RGB frame, planar r/g/b, holding values on the 1/255 lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::ShapeMismatch(format!(
                "frame data length {} != 3x{}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; 3 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// View as scalars in [0,1].
    pub fn to_feature_map(&self) -> FeatureMap {
        let data = self.data.iter().map(|&v| v as f64 / 255.0).collect();
        FeatureMap::new(3, self.height, self.width, data).expect("frame dims are consistent")
    }

    /// Quantize a 3-channel map in [0,1] onto the 8-bit lattice.
    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                got: map.channels(),
            });
        }
        let data = map
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Frame::new(map.height(), map.width(), data)
    }
}

/// Per-pixel signed color difference, planar r/g/b, values in [-1,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ResidualMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::ShapeMismatch(format!(
                "residual data length {} != 3x{}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-9) {
            return Err(Error::InvalidParameter(
                "residual values must lie in [-1, 1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap::new(3, self.height, self.width, self.data.clone())
            .expect("residual dims are consistent")
    }

    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::ChannelMismatch {
                expected: 3,
                got: map.channels(),
            });
        }
        ResidualMap::new(map.height(), map.width(), map.data().to_vec())
    }
}

/// One P-frame: a macroblock grid of motion vectors plus the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PFrameRecord {
    blocks_h: usize,
    blocks_w: usize,
    motion: Vec<(i16, i16)>,
    residual: ResidualMap,
}

impl PFrameRecord {
    pub fn new(
        blocks_h: usize,
        blocks_w: usize,
        motion: Vec<(i16, i16)>,
        residual: ResidualMap,
    ) -> Result<Self> {
        if motion.len() != blocks_h * blocks_w {
            return Err(Error::ShapeMismatch(format!(
                "motion grid length {} != {}x{}",
                motion.len(),
                blocks_h,
                blocks_w
            )));
        }
        Ok(Self {
            blocks_h,
            blocks_w,
            motion,
            residual,
        })
    }

    pub fn blocks(&self) -> (usize, usize) {
        (self.blocks_h, self.blocks_w)
    }

    #[inline]
    pub fn block_mv(&self, by: usize, bx: usize) -> (i16, i16) {
        self.motion[by * self.blocks_w + bx]
    }

    pub fn residual(&self) -> &ResidualMap {
        &self.residual
    }

    /// Expand the macroblock grid to a per-pixel field (constant per block).
    pub fn motion_field(&self, macroblock: usize) -> MotionField {
        let h = self.blocks_h * macroblock;
        let w = self.blocks_w * macroblock;
        let mut field = MotionField::zeros(h, w, MotionResolution::Pixels);
        for by in 0..self.blocks_h {
            for bx in 0..self.blocks_w {
                let (dx, dy) = self.block_mv(by, bx);
                for y in by * macroblock..(by + 1) * macroblock {
                    for x in bx * macroblock..(bx + 1) * macroblock {
                        field.set(y, x, dx as f64, dy as f64);
                    }
                }
            }
        }
        field
    }
}

/// Group of pictures: one key frame plus L-1 P-records.
#[derive(Debug, Clone, PartialEq)]
pub struct GopSegment {
    macroblock: usize,
    key_frame: Frame,
    p_records: Vec<PFrameRecord>,
}

impl GopSegment {
    pub fn new(macroblock: usize, key_frame: Frame, p_records: Vec<PFrameRecord>) -> Result<Self> {
        if macroblock == 0
            || key_frame.height % macroblock != 0
            || key_frame.width % macroblock != 0
        {
            return Err(Error::InvalidParameter(format!(
                "macroblock {} must divide frame dims {}x{}",
                macroblock, key_frame.height, key_frame.width
            )));
        }
        let bh = key_frame.height / macroblock;
        let bw = key_frame.width / macroblock;
        for rec in &p_records {
            if rec.blocks() != (bh, bw)
                || rec.residual.height != key_frame.height
                || rec.residual.width != key_frame.width
            {
                return Err(Error::ShapeMismatch(
                    "P-record dims do not match key frame".into(),
                ));
            }
        }
        Ok(Self {
            macroblock,
            key_frame,
            p_records,
        })
    }

    pub fn macroblock(&self) -> usize {
        self.macroblock
    }

    pub fn gop_length(&self) -> usize {
        self.p_records.len() + 1
    }

    pub fn key_frame(&self) -> &Frame {
        &self.key_frame
    }

    pub fn p_records(&self) -> &[PFrameRecord] {
        &self.p_records
    }

    pub fn height(&self) -> usize {
        self.key_frame.height
    }

    pub fn width(&self) -> usize {
        self.key_frame.width
    }
}

/// Codec parameters; defaults are macroblock 16, search radius 8, GOP 12.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecParams {
    pub macroblock: usize,
    pub search_radius: usize,
    pub gop_length: usize,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            macroblock: 16,
            search_radius: 8,
            gop_length: 12,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<()> {
        if self.macroblock == 0 {
            return Err(Error::InvalidParameter("macroblock must be >= 1".into()));
        }
        if self.gop_length < 2 {
            return Err(Error::InvalidParameter(format!(
                "gop_length {} must be >= 2",
                self.gop_length
            )));
        }
        Ok(())
    }
}

/// A fully encoded clip: codec parameters plus consecutive GOPs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedClip {
    pub params: CodecParams,
    pub gops: Vec<GopSegment>,
}

impl CompressedClip {
    pub fn frame_count(&self) -> usize {
        self.gops.iter().map(|g| g.gop_length()).sum()
    }

    pub fn height(&self) -> usize {
        self.gops.first().map_or(0, |g| g.height())
    }

    pub fn width(&self) -> usize {
        self.gops.first().map_or(0, |g| g.width())
    }

    /// Decode every frame of every GOP in order.
    pub fn decode_all(&self) -> Result<Vec<Frame>> {
        let mut frames = Vec::with_capacity(self.frame_count());
        for gop in &self.gops {
            for i in 0..gop.gop_length() {
                frames.push(decode_frame(gop, i)?);
            }
        }
        Ok(frames)
    }
}

/// Sum of absolute differences over one RGB macroblock, aborting once the
/// running total exceeds `limit`.
#[allow(clippy::too_many_arguments)]
fn block_sad(
    cur: &Frame,
    prev: &Frame,
    y0: usize,
    x0: usize,
    sy0: usize,
    sx0: usize,
    mb: usize,
    limit: u32,
) -> u32 {
    let w = cur.width;
    let mut sad = 0u32;
    for c in 0..3 {
        let cp = cur.plane(c);
        let pp = prev.plane(c);
        for row in 0..mb {
            let a = &cp[(y0 + row) * w + x0..][..mb];
            let b = &pp[(sy0 + row) * w + sx0..][..mb];
            let mut row_sum = 0u32;
            for (&u, &v) in a.iter().zip(b) {
                row_sum += (u as i32 - v as i32).unsigned_abs();
            }
            sad += row_sum;
            if sad > limit {
                return sad;
            }
        }
    }
    sad
}

/// Pick the SAD-minimizing in-bounds displacement for one macroblock.
/// Ties break toward smaller |dx|+|dy|, then smaller dy, then smaller dx.
fn search_block(cur: &Frame, prev: &Frame, y0: usize, x0: usize, params: &CodecParams) -> (i16, i16) {
    let mb = params.macroblock;
    let r = params.search_radius as isize;
    let (h, w) = (cur.height as isize, cur.width as isize);
    let mut best_key = (u32::MAX, isize::MAX, isize::MAX, isize::MAX);
    let mut best_mv = (0i16, 0i16);
    let consider = |dy: isize, dx: isize, best_key: &mut (u32, isize, isize, isize), best_mv: &mut (i16, i16)| {
        let sy = y0 as isize + dy;
        let sx = x0 as isize + dx;
        if sy < 0 || sx < 0 || sy + mb as isize > h || sx + mb as isize > w {
            return;
        }
        let sad = block_sad(cur, prev, y0, x0, sy as usize, sx as usize, mb, best_key.0);
        let key = (sad, dy.abs() + dx.abs(), dy, dx);
        if key < *best_key {
            *best_key = key;
            *best_mv = (dx as i16, dy as i16);
        }
    };
    // Zero displacement first: it seeds a tight abort bound on static content.
    consider(0, 0, &mut best_key, &mut best_mv);
    for dy in -r..=r {
        for dx in -r..=r {
            if dy == 0 && dx == 0 {
                continue;
            }
            consider(dy, dx, &mut best_key, &mut best_mv);
        }
    }
    best_mv
}

/// Encode `gop_length` frames into a key frame plus P-records.
pub fn encode_gop(frames: &[Frame], params: &CodecParams) -> Result<GopSegment> {
    params.validate()?;
    if frames.len() != params.gop_length {
        return Err(Error::InvalidParameter(format!(
            "expected {} frames per GOP, got {}",
            params.gop_length,
            frames.len()
        )));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if frames.iter().any(|f| f.height != h || f.width != w) {
        return Err(Error::ShapeMismatch("ragged frame dims in GOP".into()));
    }
    if h % params.macroblock != 0 || w % params.macroblock != 0 {
        return Err(Error::InvalidParameter(format!(
            "frame dims {h}x{w} not divisible by macroblock {}",
            params.macroblock
        )));
    }
    let mb = params.macroblock;
    let (bh, bw) = (h / mb, w / mb);
    let mut p_records = Vec::with_capacity(frames.len() - 1);
    for i in 1..frames.len() {
        let cur = &frames[i];
        // Residuals are stored exactly, so the previous reconstruction is
        // the previous input frame.
        let prev = &frames[i - 1];
        let mut motion = Vec::with_capacity(bh * bw);
        for by in 0..bh {
            for bx in 0..bw {
                motion.push(search_block(cur, prev, by * mb, bx * mb, params));
            }
        }
        let mut residual = vec![0.0; 3 * h * w];
        for by in 0..bh {
            for bx in 0..bw {
                let (dx, dy) = motion[by * bw + bx];
                for y in by * mb..(by + 1) * mb {
                    let sy = (y as isize + dy as isize) as usize;
                    for x in bx * mb..(bx + 1) * mb {
                        let sx = (x as isize + dx as isize) as usize;
                        for c in 0..3 {
                            let d = cur.get(c, y, x) as i32 - prev.get(c, sy, sx) as i32;
                            residual[(c * h + y) * w + x] = d as f64 / 255.0;
                        }
                    }
                }
            }
        }
        p_records.push(PFrameRecord::new(
            bh,
            bw,
            motion,
            ResidualMap::new(h, w, residual)?,
        )?);
    }
    GopSegment::new(mb, frames[0].clone(), p_records)
}

/// Decode the frame at `index` within a GOP by walking the P-records.
/// All arithmetic is on the 8-bit lattice, clamped to [0, 255].
pub fn decode_frame(gop: &GopSegment, index: usize) -> Result<Frame> {
    if index >= gop.gop_length() {
        return Err(Error::IndexOutOfRange {
            what: "frame offset in GOP",
            got: index,
            lo: 0,
            hi: gop.gop_length() - 1,
        });
    }
    let mut recon = gop.key_frame.clone();
    let (h, w) = (recon.height, recon.width);
    let mb = gop.macroblock;
    for step in 1..=index {
        let rec = &gop.p_records[step - 1];
        let mut next = Frame::zeros(h, w);
        let (bh, bw) = rec.blocks();
        for by in 0..bh {
            for bx in 0..bw {
                let (dx, dy) = rec.block_mv(by, bx);
                for y in by * mb..(by + 1) * mb {
                    let sy = (y as isize + dy as isize).clamp(0, h as isize - 1) as usize;
                    for x in bx * mb..(bx + 1) * mb {
                        let sx = (x as isize + dx as isize).clamp(0, w as isize - 1) as usize;
                        for c in 0..3 {
                            let r = (rec.residual.get(c, y, x) * 255.0).round() as i32;
                            let v = gop_clamp(recon.get(c, sy, sx) as i32 + r);
                            next.set(c, y, x, v);
                        }
                    }
                }
            }
        }
        recon = next;
    }
    Ok(recon)
}

#[inline]
fn gop_clamp(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// Compose per-step motion back to the key frame and accumulate residuals
/// along the traced path. Intermediate fields are sampled bilinearly; on
/// integer-vector streams every sample lands on the grid, so the result is
/// exact. Residuals are accumulated in 1/255 units and rescaled once.
pub fn accumulate_to_key(gop: &GopSegment, x: usize) -> Result<(MotionField, ResidualMap)> {
    if x < 1 || x >= gop.gop_length() {
        return Err(Error::IndexOutOfRange {
            what: "accumulation offset",
            got: x,
            lo: 1,
            hi: gop.gop_length() - 1,
        });
    }
    if x == 1 {
        let rec = &gop.p_records[0];
        return Ok((rec.motion_field(gop.macroblock), rec.residual.clone()));
    }
    let mb = gop.macroblock;
    let mut acc_m = gop.p_records[0].motion_field(mb);
    let mut acc_r = lift_residual(&gop.p_records[0].residual);
    for step in 2..=x {
        let (m, r) = accumulate_step(&acc_m, &acc_r, &gop.p_records[step - 1], mb)?;
        acc_m = m;
        acc_r = r;
    }
    Ok((acc_m, lower_residual(&acc_r)?))
}

/// Residuals ride through accumulation in x255 units, where codec output
/// is exactly integer-valued; one division at the end restores the stored
/// scale bit for bit.
pub fn lift_residual(r: &ResidualMap) -> FeatureMap {
    r.to_feature_map().map(|v| (v * 255.0).round())
}

/// Inverse of [`lift_residual`] after accumulation.
pub fn lower_residual(lifted: &FeatureMap) -> Result<ResidualMap> {
    ResidualMap::new(
        lifted.height(),
        lifted.width(),
        lifted.data().iter().map(|v| v / 255.0).collect(),
    )
}

/// Fold one more P-frame record into accumulated motion plus lifted
/// residual: resample both along the step's motion, then add the step's
/// own contribution.
pub fn accumulate_step(
    acc_m: &MotionField,
    acc_r_lifted: &FeatureMap,
    rec: &PFrameRecord,
    macroblock: usize,
) -> Result<(MotionField, FeatureMap)> {
    let (h, w) = (acc_r_lifted.height(), acc_r_lifted.width());
    let m_step = rec.motion_field(macroblock);
    if m_step.height() != h || m_step.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "accumulate_step: record {}x{} vs accumulator {h}x{w}",
            m_step.height(),
            m_step.width()
        )));
    }
    let carried_m = bilinear_warp(&motion_as_map(acc_m), &m_step)?;
    let carried_r = bilinear_warp(acc_r_lifted, &m_step)?;
    let mut next_m = MotionField::zeros(h, w, MotionResolution::Pixels);
    for y in 0..h {
        for x in 0..w {
            let (sdx, sdy) = m_step.at(y, x);
            next_m.set(
                y,
                x,
                sdx + carried_m.get(0, y, x),
                sdy + carried_m.get(1, y, x),
            );
        }
    }
    let next_r = lift_residual(&rec.residual).add(&carried_r)?;
    Ok((next_m, next_r))
}

fn motion_as_map(field: &MotionField) -> FeatureMap {
    let mut data = Vec::with_capacity(2 * field.height() * field.width());
    data.extend_from_slice(field.dx());
    data.extend_from_slice(field.dy());
    FeatureMap::new(2, field.height(), field.width(), data).expect("motion dims are consistent")
}

/// Bring pixel-resolution motion and residual cues onto the stride-16
/// feature grid: resample both, divide motion magnitudes by the stride so
/// units become feature cells.
pub fn motion_cues_at_feature_scale(
    motion: &MotionField,
    residual: &ResidualMap,
    stride: usize,
) -> Result<(MotionField, ResidualMap)> {
    if motion.resolution() != MotionResolution::Pixels {
        return Err(Error::InvalidParameter(
            "motion cues expect a pixel-resolution field".into(),
        ));
    }
    if stride == 0
        || motion.height() % stride != 0
        || motion.width() % stride != 0
        || residual.height % stride != 0
        || residual.width % stride != 0
    {
        return Err(Error::InvalidParameter(format!(
            "dims {}x{} not divisible by stride {stride}",
            motion.height(),
            motion.width()
        )));
    }
    let fh = motion.height() / stride;
    let fw = motion.width() / stride;
    let scaled = motion
        .resized(fh, fw, MotionResolution::FeatureCells)?
        .scaled(1.0 / stride as f64);
    let resized_r = crate::tensor_ops::bilinear_resize(&residual.to_feature_map(), fh, fw)?;
    Ok((scaled, ResidualMap::from_feature_map(&resized_r)?))
}

/// Split frames into consecutive GOPs and encode each.
pub fn encode_stream(frames: &[Frame], params: &CodecParams) -> Result<CompressedClip> {
    params.validate()?;
    if frames.is_empty() || frames.len() % params.gop_length != 0 {
        return Err(Error::InvalidParameter(format!(
            "frame count {} must be a positive multiple of gop_length {}",
            frames.len(),
            params.gop_length
        )));
    }
    let gops = frames
        .chunks(params.gop_length)
        .map(|chunk| encode_gop(chunk, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressedClip {
        params: *params,
        gops,
    })
}

const STREAM_MAGIC: &[u8; 4] = b"LSFA";
const STREAM_VERSION: u16 = 1;

/// Serialize a clip. Layout (all little-endian): magic, version u16,
/// height u32, width u32, macroblock u16, search_radius u16, gop_length
/// u16, gop_count u32; then per GOP the raw key planes and per P-record
/// the (dx, dy) grid as i16 pairs and the residual as i16 fixed-point
/// (value x 255).
pub fn write_stream<W: Write>(mut w: W, clip: &CompressedClip) -> Result<()> {
    w.write_all(STREAM_MAGIC)?;
    w.write_u16::<LittleEndian>(STREAM_VERSION)?;
    w.write_u32::<LittleEndian>(clip.height() as u32)?;
    w.write_u32::<LittleEndian>(clip.width() as u32)?;
    w.write_u16::<LittleEndian>(clip.params.macroblock as u16)?;
    w.write_u16::<LittleEndian>(clip.params.search_radius as u16)?;
    w.write_u16::<LittleEndian>(clip.params.gop_length as u16)?;
    w.write_u32::<LittleEndian>(clip.gops.len() as u32)?;
    for gop in &clip.gops {
        w.write_all(gop.key_frame.data())?;
        for rec in &gop.p_records {
            for &(dx, dy) in &rec.motion {
                w.write_i16::<LittleEndian>(dx)?;
                w.write_i16::<LittleEndian>(dy)?;
            }
            for &v in rec.residual.data() {
                w.write_i16::<LittleEndian>((v * 255.0).round() as i16)?;
            }
        }
    }
    Ok(())
}

/// Inverse of [`write_stream`]; validates header fields and value ranges.
pub fn read_stream<R: Read>(mut r: R) -> Result<CompressedClip> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STREAM_MAGIC {
        return Err(Error::Format("bad stream magic".into()));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported stream version {version}")));
    }
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let params = CodecParams {
        macroblock: r.read_u16::<LittleEndian>()? as usize,
        search_radius: r.read_u16::<LittleEndian>()? as usize,
        gop_length: r.read_u16::<LittleEndian>()? as usize,
    };
    params.validate()?;
    if height == 0 || width == 0 || height % params.macroblock != 0 || width % params.macroblock != 0
    {
        return Err(Error::Format(format!(
            "frame dims {height}x{width} incompatible with macroblock {}",
            params.macroblock
        )));
    }
    let gop_count = r.read_u32::<LittleEndian>()? as usize;
    let (bh, bw) = (height / params.macroblock, width / params.macroblock);
    let mut gops = Vec::with_capacity(gop_count);
    for _ in 0..gop_count {
        let mut key = vec![0u8; 3 * height * width];
        r.read_exact(&mut key)?;
        let mut p_records = Vec::with_capacity(params.gop_length - 1);
        for _ in 1..params.gop_length {
            let mut motion = Vec::with_capacity(bh * bw);
            for _ in 0..bh * bw {
                let dx = r.read_i16::<LittleEndian>()?;
                let dy = r.read_i16::<LittleEndian>()?;
                motion.push((dx, dy));
            }
            let mut residual = vec![0.0; 3 * height * width];
            for v in &mut residual {
                let fixed = r.read_i16::<LittleEndian>()?;
                if fixed.abs() > 255 {
                    return Err(Error::Format(format!(
                        "residual sample {fixed} outside [-255, 255]"
                    )));
                }
                *v = fixed as f64 / 255.0;
            }
            p_records.push(PFrameRecord::new(
                bh,
                bw,
                motion,
                ResidualMap::new(height, width, residual)?,
            )?);
        }
        gops.push(GopSegment::new(
            params.macroblock,
            Frame::new(height, width, key)?,
            p_records,
        )?);
    }
    Ok(CompressedClip { params, gops })
}

pub fn save_stream(path: &Path, clip: &CompressedClip) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_stream(std::io::BufWriter::new(file), clip)
}

pub fn load_stream(path: &Path) -> Result<CompressedClip> {
    let file = std::fs::File::open(path)?;
    read_stream(std::io::BufReader::new(file))
}
