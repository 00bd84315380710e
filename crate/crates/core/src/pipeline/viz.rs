//! Per-channel feature visualization: min-max normalized grayscale PNGs.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor_ops::FeatureMap;

/// Export the listed channels of `feature` as grayscale PNGs named
/// `{prefix}_c{channel:03}.png` under `dir`. Each channel is min-max
/// normalized on its own; a constant channel maps to mid-gray.
pub fn export_feature_viz(
    feature: &FeatureMap,
    channels: &[usize],
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(channels.len());
    for &c in channels {
        if c >= feature.channels() {
            return Err(Error::IndexOutOfRange {
                what: "viz channel",
                got: c,
                lo: 0,
                hi: feature.channels().saturating_sub(1),
            });
        }
        let plane = feature.channel(c);
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut img = GrayImage::new(feature.width() as u32, feature.height() as u32);
        for y in 0..feature.height() {
            for x in 0..feature.width() {
                let v = plane[y * feature.width() + x];
                let norm = if span > 0.0 { (v - lo) / span } else { 0.5 };
                img.put_pixel(x as u32, y as u32, image::Luma([(norm * 255.0).round() as u8]));
            }
        }
        let path = dir.join(format!("{prefix}_c{c:03}.png"));
        img.save_with_format(&path, ImageFormat::Png)
            .map_err(|e| Error::Image(format!("write {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}
