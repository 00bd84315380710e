//! Helpers shared by the integration suites: seeded generators, reference
//! implementations written independently of the library kernels, and a
//! central-difference gradient checker.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lsfa_core::compressed_stream::Frame;
use lsfa_core::tensor_ops::{ConvKernel, FeatureMap, MotionField, MotionResolution};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_feature(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> FeatureMap {
    let data = (0..c * h * w).map(|_| r.gen_range(lo..hi)).collect();
    FeatureMap::new(c, h, w, data).unwrap()
}

pub fn rand_flow(r: &mut ChaCha8Rng, h: usize, w: usize, max_mag: f64) -> MotionField {
    let dx = (0..h * w).map(|_| r.gen_range(-max_mag..max_mag)).collect();
    let dy = (0..h * w).map(|_| r.gen_range(-max_mag..max_mag)).collect();
    MotionField::new(h, w, dx, dy, MotionResolution::FeatureCells).unwrap()
}

pub fn rand_frame(r: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    let data = (0..3 * h * w).map(|_| r.gen()).collect();
    Frame::new(h, w, data).unwrap()
}

/// Clamped bilinear sample of one plane at a continuous position, written
/// point-wise as the reference for the vectorized warp.
pub fn sample_clamped(plane: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Direct zero-padded correlation, one output element at a time.
pub fn conv_ref(input: &FeatureMap, k: &ConvKernel) -> FeatureMap {
    let (oh, ow) = k.out_dims(input.height(), input.width()).unwrap();
    let mut out = FeatureMap::zeros(k.out_channels, oh, ow);
    for o in 0..k.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = k.bias[o];
                for i in 0..k.in_channels {
                    for u in 0..k.k_h {
                        for v in 0..k.k_w {
                            let iy = (oy * k.stride + u * k.dilation) as isize - k.padding as isize;
                            let ix = (ox * k.stride + v * k.dilation) as isize - k.padding as isize;
                            if iy < 0
                                || ix < 0
                                || iy >= input.height() as isize
                                || ix >= input.width() as isize
                            {
                                continue;
                            }
                            acc += k.weights[k.w_idx(o, i, u, v)]
                                * input.get(i, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(o, oy, ox, acc);
            }
        }
    }
    out
}

/// Central finite difference of a scalar function at every coordinate.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * eps));
    }
    grad
}

/// Worst relative disagreement between analytic and numeric gradients.
/// Coordinates where both are below `dead_floor` count as exact; they are
/// discretization dust, not signal.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], dead_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < dead_floor {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], rel_tol: f64, what: &str) {
    let err = max_rel_err(analytic, numeric, 1e-7);
    assert!(
        err <= rel_tol,
        "{what}: worst relative gradient error {err:.3e} > {rel_tol:.1e}"
    );
}
